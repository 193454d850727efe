#pragma once

#include "slotalloc/lp.hpp"
#include "slotalloc/model.hpp"
#include "slotalloc/policy.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace slotalloc {

// ---------------------------------------------------------------- rolling horizon

/// Per-patient bonus scale of the tie break; far below any contribution difference between integer actions.
inline constexpr double kTieBreakWeight = 1e-6;

struct RollingLpConfig {
    int horizon = 1; ///< number of planned periods T (actions a_0 .. a_{T-1})
    double gamma = 0.9;
    bool integral = true;
    bool tie_break = true; ///< tiny priority-order bonus on a_0 so ties resolve like the decision rules
    lp::SolverOptions solver{};

    void validate() const;
};

/// Extra per-queue lower bounds on treated counts: sum_w a_{j,w,t} >= min(queue length, target_j).
struct MinimumTreatment {
    std::vector<int> target; ///< per queue; 0 = no constraint
    double big_m = 0.0;
};

struct RollingLpResult {
    Action action;          ///< a_0, rounded down when relaxed
    double objective = 0.0; ///< optimal value of the (possibly relaxed) program
    std::size_t variables = 0;
    std::size_t constraints = 0;
    std::size_t pivots = 0;
    std::size_t nodes = 0;
};

/**
 * Deterministic finite-horizon program over T periods: expected arrivals
 * and routing fractions, waiting shift with pooling at W_j, a <= s, and the
 * capacities of periods period..period+T-1. Only a_0 is returned, floored
 * when relaxed; with `minimum`, floored queues are topped back up to their
 * first-period minimum.
 */
RollingLpResult rolling_lp(const Instance& inst, const FractionalState& s0, const RollingLpConfig& cfg, int period = 0,
                           const MinimumTreatment* minimum = nullptr);

inline Action rolling_lp_decide(const Instance& inst, const FractionalState& s0, const RollingLpConfig& cfg,
                                int period = 0) {
    return rolling_lp(inst, s0, cfg, period).action;
}

class RollingLpPolicy final : public Policy {
public:
    explicit RollingLpPolicy(RollingLpConfig cfg);
    std::string name() const override { return "rolling_lp"; }
    const RollingLpConfig& config() const noexcept { return cfg_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    RollingLpConfig cfg_;
};

// ---------------------------------------------------------------- decision rules

/// Repeatedly treats the fitting patient with the largest c_{j,w} + r_j.
Action rule_highest_contribution(const Instance& inst, const State& s, int period = 0);
/// Repeatedly treats the longest-waiting fitting patient of the queue with the largest total cost.
Action rule_highest_cost_queue(const Instance& inst, const State& s, int period = 0);
/// As rule_highest_cost_queue with queue length as the score.
Action rule_longest_queue(const Instance& inst, const State& s, int period = 0);
/**
 * Each single-resource queue gets floor(eta_r * cost_j / cost of all queues
 * on r) slots, capped at its length, longest-waiting first.
 */
Action rule_split_cost(const Instance& inst, const State& s, int period = 0);

enum class DecisionRule { HighestContribution, HighestCostQueue, LongestQueue, SplitCost };
std::string to_string(DecisionRule rule);
DecisionRule decision_rule_from_string(const std::string& name);

class RulePolicy final : public Policy {
public:
    explicit RulePolicy(DecisionRule rule) : rule_(rule) {}
    std::string name() const override { return to_string(rule_); }
    DecisionRule rule() const noexcept { return rule_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    DecisionRule rule_;
};

// ---------------------------------------------------------------- static allocation

/**
 * Fixed per-queue treat targets. Resources in `fill` are then used up by
 * the highest-cost patients of queues demanding them that have no target.
 */
struct StaticAllocation {
    std::vector<int> targets;   ///< per queue; 0 for queues without a target
    std::set<std::size_t> fill; ///< resource indices

    static StaticAllocation from_ids(const Instance& inst, const std::map<std::string, int>& targets,
                                     const std::vector<std::string>& fill_resources);
    void validate(const Instance& inst) const;
};

/// FA_2 30, FU_3/FU_6/FU_12 17 each, DA_3 9, all OR capacity.
StaticAllocation smk_static_allocation(const Instance& inst);

Action static_decide(const Instance& inst, const State& s, const StaticAllocation& alloc, int period = 0);

/// Fixed far in advance, so it ignores any planning horizon.
class StaticPolicy final : public Policy {
public:
    explicit StaticPolicy(StaticAllocation alloc) : alloc_(std::move(alloc)) {}
    std::string name() const override { return "static"; }
    bool uses_prediction() const override { return false; }
    const StaticAllocation& allocation() const noexcept { return alloc_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    StaticAllocation alloc_;
};

// ---------------------------------------------------------------- hybrid

struct HybridConfig {
    double alpha = 50.0; ///< fixed share of the static targets, percent
    int tau = 3;         ///< dynamic planning horizon
    int p_static = 6;    ///< static planning horizon
    std::optional<double> big_m;

    void validate() const;
};

/// round_half_up(target_j * alpha / 100) per queue.
std::vector<int> hybrid_targets(const StaticAllocation& alloc, double alpha);
/// 10 * (max_r eta_r + sum_j lambda_j * max_j W_j).
double hybrid_big_m(const Instance& inst);

Action hybrid_decide(const Instance& inst, const FractionalState& predicted, const StaticAllocation& alloc,
                     const HybridConfig& cfg, const RollingLpConfig& lp_cfg, int period = 0);

class HybridPolicy final : public Policy {
public:
    HybridPolicy(StaticAllocation alloc, HybridConfig cfg, RollingLpConfig lp_cfg);
    std::string name() const override { return "hybrid"; }
    const HybridConfig& config() const noexcept { return cfg_; }

protected:
    Action do_decide(const Instance& inst, const FractionalState& s, int period) const override;

private:
    StaticAllocation alloc_;
    HybridConfig cfg_;
    RollingLpConfig lp_cfg_;
};

// ---------------------------------------------------------------- prediction

/**
 * Applies expected_next_state once per recorded action, clipping each action
 * cellwise to the predicted availability.
 */
FractionalState predict_state(const Instance& inst, const State& s, const std::vector<Action>& actions);
FractionalState predict_state(const Instance& inst, const FractionalState& s, const std::vector<Action>& actions);

} // namespace slotalloc
