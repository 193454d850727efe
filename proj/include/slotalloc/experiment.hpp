#pragma once

#include "slotalloc/lspi.hpp"
#include "slotalloc/model.hpp"
#include "slotalloc/policy.hpp"
#include "slotalloc/simulation.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace slotalloc {

enum class SweepAxis { InitialPatients, PlanAhead, Gamma, Alpha, Tau, DatasetSize, Basis };
std::string to_string(SweepAxis axis);
/// Accepts "initial", "p", "gamma", "alpha", "tau", "M", "basis".
SweepAxis sweep_axis_from_string(const std::string& name);

/// A named policy block; `config` holds the type-specific keys.
struct PolicySpec {
    std::string name;
    std::string type; ///< rolling_lp | rule | static | hybrid | lspi | evi
    nlohmann::json config = nlohmann::json::object();
};

struct ExperimentOutputs {
    std::string summary;      ///< one row per (policy, sweep value)
    std::string periods;      ///< optional raw per-period records
    std::string appointments; ///< optional raw appointment records
    std::string metrics;      ///< optional long-format metrics
};

/**
 * Experiment file: instance, simulation settings, policy blocks and one
 * sweep axis. Relative paths inside it resolve against `base_dir`.
 */
struct ExperimentSpec {
    std::string instance;
    std::filesystem::path base_dir;
    SimulationConfig sim;
    std::vector<PolicySpec> policies;
    SweepAxis axis = SweepAxis::InitialPatients;
    std::vector<nlohmann::json> values;
    ExperimentOutputs outputs;

    static ExperimentSpec parse(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
    static ExperimentSpec load(const std::filesystem::path& path);
    void validate() const;
};

/**
 * LSPI settings from a JSON object with optional keys gamma, dataset_size, eps,
 * delta, max_iterations, seed, patient_range [low, high], pathway_mode and
 * integral_training. Other keys are ignored.
 */
LspiConfig lspi_config_from_json(const nlohmann::json& c, std::uint64_t default_seed, const std::string& where);

/// Built-in instance name, or an instance file path resolved against base_dir.
Instance experiment_instance(const ExperimentSpec& spec);

/// A policy together with the simulation settings it runs under at one sweep point.
struct PreparedPolicy {
    std::shared_ptr<const Policy> policy;
    SimulationConfig sim;
    std::string key; ///< equal keys give identical results
};

/// Applies the sweep value to the policy block and simulation config, then builds the policy.
PreparedPolicy prepare_policy(const Instance& inst, const ExperimentSpec& spec, const PolicySpec& block,
                              const nlohmann::json& value);

struct SweepRow {
    std::string policy;
    std::string type;
    std::string axis_value;
    MetricsReport metrics;
    std::vector<TrialResult> trials;
    double seconds = 0.0;
};

using ExperimentProgress = std::function<void(const SweepRow&)>;

/// Runs every (sweep value, policy) pair in file order; identical configurations are simulated once.
std::vector<SweepRow> run_experiment(const Instance& inst, const ExperimentSpec& spec,
                                     const ExperimentProgress& progress = {});

/**
 * Columns: policy,type,axis,axis_value,trials,mean_contribution,contribution_se,seconds,
 * then within_<queue> per queue, late_wait_<queue> per queue (empty when nobody was late)
 * and unused_<resource> per resource, all percentages except late_wait.
 */
void write_summary_csv(std::ostream& out, const Instance& inst, const ExperimentSpec& spec,
                       const std::vector<SweepRow>& rows);
/// write_periods_csv with leading policy,axis_value columns.
void write_sweep_periods_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows);
/// write_appointments_csv with leading policy,axis_value columns.
void write_sweep_appointments_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows);
/// write_metrics_csv with leading policy,axis_value columns.
void write_sweep_metrics_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows);

/// Writes every output named in spec.outputs.
void write_experiment_outputs(const Instance& inst, const ExperimentSpec& spec, const std::vector<SweepRow>& rows);

} // namespace slotalloc
