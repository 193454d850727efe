#pragma once

#include "slotalloc/grid.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace slotalloc {

/// Waiting-cost formula applied to w >= u_j (cost is zero below the target).
enum class CostRule {
    PerTarget,        ///< omega * w / u
    PerTargetPlusOne  ///< omega * w / (u + 1), usable with u = 0
};

std::string to_string(CostRule rule);
CostRule cost_rule_from_string(const std::string& name);

struct QueueSpec {
    std::string id;
    int access_target = 0;
    int wait_cap = 1;
    double weight = 0.0;
    double reward = 0.0;
    std::map<std::string, int> demands;

    bool operator==(const QueueSpec&) const = default;
};

struct ResourceSpec {
    std::string id;
    int capacity = 0;

    bool operator==(const ResourceSpec&) const = default;
};

/**
 * Routing probabilities. `queue[i][j]` is the probability that a patient
 * treated in queue i joins queue j next; the exit probability is whatever
 * mass remains. Explicit Exit entries and the Start row are optional and
 * kept verbatim so files round-trip.
 */
struct TransitionTable {
    std::vector<std::vector<double>> queue;
    std::vector<std::optional<double>> exit;
    std::optional<std::vector<double>> start;
    std::optional<double> start_exit;

    bool operator==(const TransitionTable&) const = default;
};

/// Plain description of an instance; validated when wrapped in an Instance.
struct InstanceData {
    std::string name;
    std::string description;
    std::vector<QueueSpec> queues;
    std::vector<ResourceSpec> resources;
    TransitionTable transitions;
    std::vector<double> arrivals; ///< lambda_j, aligned with queues
    CostRule cost_rule = CostRule::PerTargetPlusOne;
    std::map<int, std::vector<int>> capacity_overrides; ///< period -> capacity per resource

    bool operator==(const InstanceData&) const = default;
};

/// Tolerance for published probabilities rounded to four decimals.
inline constexpr double kRowSumTolerance = 1e-3;

/**
 * Validated, immutable MDP parameterization. Waiting costs and rewards are
 * tabulated per (queue, wait) cell at construction.
 */
class Instance {
public:
    explicit Instance(InstanceData data);

    const InstanceData& data() const noexcept { return data_; }
    const std::string& name() const noexcept { return data_.name; }
    const std::vector<QueueSpec>& queues() const noexcept { return data_.queues; }
    const std::vector<ResourceSpec>& resources() const noexcept { return data_.resources; }
    const QueueSpec& queue(std::size_t j) const { return data_.queues.at(j); }
    std::size_t queue_count() const noexcept { return data_.queues.size(); }
    std::size_t resource_count() const noexcept { return data_.resources.size(); }
    std::size_t queue_index(const std::string& id) const;
    std::size_t resource_index(const std::string& id) const;
    CostRule cost_rule() const noexcept { return data_.cost_rule; }

    const std::shared_ptr<const CellLayout>& layout() const noexcept { return layout_; }
    std::size_t cell_count() const noexcept { return layout_->size(); }

    double transition(std::size_t from, std::size_t to) const { return q_[from * queue_count() + to]; }
    /// 1 - sum of the queue columns of row `from`.
    double exit_probability(std::size_t from) const { return exit_[from]; }
    bool has_start_row() const noexcept { return data_.transitions.start.has_value(); }
    double start_probability(std::size_t j) const;

    double arrival_rate(std::size_t j) const { return data_.arrivals.at(j); }
    double total_arrival_rate() const;
    int demand(std::size_t j, std::size_t r) const { return zeta_[j * resource_count() + r]; }
    int capacity(std::size_t r, int period = 0) const;

    double cell_cost(std::size_t cell) const { return cost_[cell]; }
    double cell_reward(std::size_t cell) const { return reward_[cell]; }
    double cost(std::size_t j, int w) const { return cost_[layout_->index(j, w)]; }

    /// Cells in tie-break priority: queue order, then descending wait.
    const std::vector<std::size_t>& priority_order() const noexcept { return priority_; }
    /// Rank of each cell within priority_order().
    const std::vector<std::size_t>& priority_rank() const noexcept { return rank_; }

    State make_state() const { return State(layout_); }
    Action make_action() const { return Action(layout_); }
    FractionalState make_fractional_state() const { return FractionalState(layout_); }

    bool operator==(const Instance& o) const { return data_ == o.data_; }

private:
    InstanceData data_;
    std::shared_ptr<const CellLayout> layout_;
    std::vector<double> q_;
    std::vector<double> exit_;
    std::vector<int> zeta_;
    std::vector<double> cost_;
    std::vector<double> reward_;
    std::vector<std::size_t> priority_;
    std::vector<std::size_t> rank_;
};

/// Integer flows x_ij of treated patients; column queue_count() is Exit.
class TransitionRealization {
public:
    TransitionRealization() = default;
    explicit TransitionRealization(std::size_t queues)
        : n_(queues), flows_(queues * (queues + 1), 0) {}

    std::size_t queue_count() const noexcept { return n_; }
    std::size_t exit_column() const noexcept { return n_; }
    int& operator()(std::size_t from, std::size_t to) { return flows_[from * (n_ + 1) + to]; }
    int operator()(std::size_t from, std::size_t to) const { return flows_[from * (n_ + 1) + to]; }
    int exits(std::size_t from) const { return (*this)(from, n_); }
    int inflow(std::size_t to) const;
    int outflow(std::size_t from) const;
    int total_exits() const;

    bool operator==(const TransitionRealization&) const = default;

private:
    std::size_t n_ = 0;
    std::vector<int> flows_;
};

double waiting_cost(const Instance& inst, std::size_t j, int w);
double waiting_cost(const Instance& inst, const std::string& queue_id, int w);

template <class S, class A>
double contribution(const Instance& inst, const Grid<S, StateTag>& s, const Grid<A, ActionTag>& a) {
    if (!s.same_shape(*inst.layout()) || !a.same_shape(*inst.layout()))
        throw StructuralError("contribution: state/action do not match the instance layout");
    double total = 0.0;
    for (std::size_t c = 0; c < s.size(); ++c) {
        const double treated = static_cast<double>(a[c]);
        const double untreated = static_cast<double>(s[c]) - treated;
        total += inst.cell_reward(c) * treated - inst.cell_cost(c) * untreated;
    }
    return total;
}

/// a <= s cellwise and every resource within capacity for `period`.
bool is_feasible(const Instance& inst, const State& s, const Action& a, int period = 0);

/// Per-resource timeslot usage of an action.
std::vector<int> resource_usage(const Instance& inst, const Action& a);

/// Realized next state; arrivals are indexed by queue.
State next_state(const Instance& inst, const State& s, const Action& a, const TransitionRealization& x,
                 std::span<const int> arrivals, int period = 0);

/// Expected next state with mean arrivals lambda and expected routing.
FractionalState expected_next_state(const Instance& inst, const State& s, const Action& a);
FractionalState expected_next_state(const Instance& inst, const FractionalState& s, const FractionalAction& a);

/// Arrival rates rounded half-up.
std::vector<int> rounded_arrivals(const Instance& inst);

inline constexpr std::size_t kDefaultActionGuard = 10'000'000;

/**
 * Visits every feasible action for `s` exactly once, in descending
 * lexicographic order over priority_order(). Throws ResourceLimitError
 * once more than `guard` actions have been produced.
 */
void for_each_action(const Instance& inst, const State& s, const std::function<void(const Action&)>& visit,
                     std::size_t guard = kDefaultActionGuard, int period = 0);
std::vector<Action> enumerate_actions(const Instance& inst, const State& s, std::size_t guard = kDefaultActionGuard,
                                      int period = 0);

/// True if `a` precedes `b` in tie-break order (a is preferred).
bool preferred_action(const Instance& inst, const Action& a, const Action& b);

} // namespace slotalloc
