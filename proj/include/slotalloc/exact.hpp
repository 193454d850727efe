#pragma once

#include "slotalloc/model.hpp"
#include "slotalloc/policy.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace slotalloc {

/// What the per-queue caps of a bounded state space limit.
enum class CapKind {
    QueueLength, ///< sum over w of s_{j,w} <= cap_j
    Cell         ///< every s_{j,w} <= cap_j
};

std::string to_string(CapKind kind);
CapKind cap_kind_from_string(const std::string& name);

/**
 * Caps from a compact spec: "3" (all queues), "3,1,1" (per queue) or
 * "3/1" (per resource, each queue taking the cap of its first demanded
 * resource).
 */
std::vector<int> parse_caps(const Instance& inst, const std::string& spec);

/**
 * Finite state set used by exact value iteration. States are enumerated in
 * lexicographic cell order; index_of() inverts state().
 */
class BoundedStateSpace {
public:
    BoundedStateSpace(Instance inst, std::vector<int> caps, CapKind kind = CapKind::QueueLength,
                      std::size_t guard = 10'000'000);

    const Instance& instance() const noexcept { return inst_; }
    const std::vector<int>& caps() const noexcept { return caps_; }
    CapKind kind() const noexcept { return kind_; }
    std::size_t size() const noexcept { return count_; }

    State state(std::size_t index) const;
    std::optional<std::size_t> find(const State& s) const;
    std::size_t index_of(const State& s) const;
    bool contains(const State& s) const { return find(s).has_value(); }

    /// Drops patients from w = 0 upward until the caps hold.
    State clamp(const State& s) const;
    /// Index of clamp(s) given raw cells (no State allocation).
    std::size_t clamped_index(std::vector<int>& cells) const;

private:
    std::uint64_t key(const std::vector<int>& cells) const;

    Instance inst_;
    std::vector<int> caps_;
    CapKind kind_;
    std::size_t count_ = 0;
    std::vector<int> cells_; ///< count_ x cell_count
    std::vector<std::uint64_t> radix_;
    std::unordered_map<std::uint64_t, std::uint32_t> lookup_;
};

/// One transition realization with its probability.
struct WeightedRealization {
    TransitionRealization flows;
    double probability = 0.0;
};

/**
 * Every realization of routing the treated patients of `a`. Destinations of
 * one source compete, so each source row is multinomial; rows are
 * independent. Only queues with positive probability and Exit receive flow.
 */
std::vector<WeightedRealization> realizations(const Instance& inst, const Action& a);

struct ValueTable {
    std::vector<double> values;
    double gamma = 0.0;
    double residual = 0.0; ///< sup-norm change of the last sweep
    std::size_t sweeps = 0;
    std::vector<double> residual_trace;
};

struct ValueIterationOptions {
    std::size_t max_sweeps = 100'000;
    std::size_t action_guard = kDefaultActionGuard;
    /// Cached successor entries before switching to on-the-fly evaluation.
    std::size_t cache_budget = 50'000'000;
    std::function<void(std::size_t sweep, double residual)> progress;
};

/**
 * Jacobi value iteration V <- max_a [C(s,a) + gamma E V(clamp(T(s,a,x)))]
 * with arrivals fixed at rounded lambda, until the sup-norm change is
 * below eps.
 */
ValueTable value_iteration(const BoundedStateSpace& space, double gamma, double eps,
                           const ValueIterationOptions& opt = {});

/// Argmax policy for a value table; states outside the space are accepted.
class GreedyPolicy final : public Policy {
public:
    GreedyPolicy(std::shared_ptr<const BoundedStateSpace> space, ValueTable table);

    std::string name() const override { return "evi_greedy"; }
    double q_value(const State& s, const Action& a) const;
    const ValueTable& table() const noexcept { return table_; }
    const BoundedStateSpace& space() const noexcept { return *space_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    std::shared_ptr<const BoundedStateSpace> space_;
    ValueTable table_;
    std::vector<int> arrivals_;
};

GreedyPolicy greedy_policy(std::shared_ptr<const BoundedStateSpace> space, const ValueTable& table);

/// Value table file: instance, cap parameters, convergence data and values.
void save_value_table(const std::filesystem::path& path, const BoundedStateSpace& space, const ValueTable& table);
std::string serialize_value_table(const BoundedStateSpace& space, const ValueTable& table);

struct LoadedValueTable {
    std::shared_ptr<const BoundedStateSpace> space;
    ValueTable table;
};
LoadedValueTable load_value_table(const std::filesystem::path& path);

} // namespace slotalloc
