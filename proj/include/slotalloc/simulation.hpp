#pragma once

#include "slotalloc/model.hpp"
#include "slotalloc/policy.hpp"
#include "slotalloc/population.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace slotalloc {

/// Initial patient count: a fixed number, or Normal(mean, sd) truncated at 0 and rounded.
struct InitialPopulation {
    std::optional<int> fixed;
    double mean = 0.0;
    double sd = 0.0;

    static InitialPopulation exactly(int n) { return {n, 0.0, 0.0}; }
    static InitialPopulation normal(double mean, double sd) { return {std::nullopt, mean, sd}; }
    int draw(std::mt19937_64& rng) const;
    std::string label() const;
};

struct SimulationConfig {
    int periods = 30;
    int trials = 1;
    InitialPopulation initial = InitialPopulation::exactly(0);
    int plan_ahead = 0;                      ///< p
    std::optional<int> warmup;               ///< excluded leading periods; default p_eff + 1
    std::uint64_t seed = 1;
    std::optional<PathwayMode> pathway_mode; ///< default follows the instance
    unsigned threads = 1;

    void validate() const;
};

/// Random stream labels under derive_rng(seed, {trial, stream}).
enum class SimStream : std::uint64_t { Initial = 1, Arrivals = 2 };

struct AppointmentRecord {
    int period = 0;
    std::size_t queue = 0;
    int wait = 0; ///< realized access time at treatment
    bool on_time = false;
};

struct TrialResult {
    int trial = 0;
    int initial_patients = 0;
    int warmup = 0;
    std::vector<double> contribution;          ///< per period
    std::vector<std::vector<int>> treated;     ///< [period][queue]
    std::vector<std::vector<int>> capacity;    ///< [period][resource]
    std::vector<std::vector<int>> unused;      ///< [period][resource]
    std::vector<AppointmentRecord> appointments;
    std::size_t truncated_pathways = 0;

    /// Mean contribution over periods >= warmup.
    double mean_contribution() const;
};

struct QueueAccess {
    std::size_t appointments = 0;
    double pct_within_target = 0.0;      ///< 100 when there are no appointments
    std::optional<double> mean_late_wait; ///< absent when nobody was late
};

struct MetricsReport {
    std::size_t trials = 0;
    double mean_contribution = 0.0; ///< mean over trials of the post-warmup per-period mean
    double contribution_se = 0.0;   ///< standard error of that mean across trials
    std::vector<QueueAccess> queues;
    std::vector<double> pct_unused; ///< per resource, unused / offered timeslots over post-warmup periods
};

/**
 * Hands the true aggregate state, or for p > 0 the state predicted from
 * s_{t-p} and the actions performed since, to the policy. Its per-queue counts
 * are then applied to the true state, longest-waiting patients first.
 */
TrialResult run_trial(const Instance& inst, const Policy& policy, const SimulationConfig& cfg, int trial);

/// Runs cfg.trials trials (optionally across cfg.threads threads), ordered by trial index.
std::vector<TrialResult> run_trials(const Instance& inst, const Policy& policy, const SimulationConfig& cfg);

/// Per-queue counts of `planned` applied to `s` by descending wait, capped by availability.
Action realize_action(const Instance& inst, const State& s, const Action& planned);

/// Post-warmup window of every trial; appointments are counted in that window too.
MetricsReport aggregate(const Instance& inst, const std::vector<TrialResult>& results);

/// Columns: trial,period,item,metric,value with metric in
/// contribution | treated | capacity | unused; item is the queue or resource id (empty for contribution).
void write_periods_csv(std::ostream& out, const Instance& inst, const std::vector<TrialResult>& results);
/// Columns: trial,period,queue,wait,on_time.
void write_appointments_csv(std::ostream& out, const Instance& inst, const std::vector<TrialResult>& results);
/// Columns: metric,item,value with metric in trials | mean_contribution | contribution_se | appointments |
/// pct_within_target | mean_late_wait | pct_unused. mean_late_wait rows are omitted when absent.
void write_metrics_csv(std::ostream& out, const Instance& inst, const MetricsReport& report);

} // namespace slotalloc
