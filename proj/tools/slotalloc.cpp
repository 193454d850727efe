#include "slotalloc/exact.hpp"
#include "slotalloc/experiment.hpp"
#include "slotalloc/instances.hpp"
#include "slotalloc/lspi.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace slotalloc;
using nlohmann::json;

namespace {

void write_text(const std::filesystem::path& path, const std::function<void(std::ostream&)>& write) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw SchemaError(path.string(), "cannot open output file");
    write(out);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path, "cannot open file");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path, e.what());
    }
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep))
        if (!tok.empty()) out.push_back(tok);
    return out;
}

struct EviArgs {
    std::string instance = "small";
    std::string caps = "3/1";
    std::string cap_kind = to_string(CapKind::QueueLength);
    double gamma = 0.9;
    double eps = 0.1;
    std::size_t max_sweeps = ValueIterationOptions{}.max_sweeps;
    std::string out;
    std::string log;
};

int solve_evi(const EviArgs& a) {
    const Instance inst = resolve_instance(a.instance);
    const auto space = std::make_shared<const BoundedStateSpace>(inst, parse_caps(inst, a.caps), cap_kind_from_string(a.cap_kind));
    ValueIterationOptions opt;
    opt.max_sweeps = a.max_sweeps;
    std::cerr << "states: " << space->size() << '\n';
    const ValueTable table = value_iteration(*space, a.gamma, a.eps, opt);
    save_value_table(a.out, *space, table);
    const std::string log = a.log.empty() ? a.out + ".log.csv" : a.log;
    write_text(log, [&](std::ostream& o) {
        o.precision(17);
        o << "sweep,residual\n";
        for (std::size_t k = 0; k < table.residual_trace.size(); ++k) o << k + 1 << ',' << table.residual_trace[k] << '\n';
    });
    std::cout << "states=" << space->size() << " sweeps=" << table.sweeps << " residual=" << table.residual
              << " converged=" << (table.residual < a.eps ? "true" : "false") << '\n';
    return 0;
}

struct LspiArgs {
    std::string instance = "large";
    std::string config;
    std::string basis = "1";
    bool no_constant = false;
    std::optional<double> gamma;
    std::optional<std::size_t> dataset_size;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int train_lspi(const LspiArgs& a) {
    const Instance inst = resolve_instance(a.instance);
    json c = a.config.empty() ? json::object() : read_json(a.config);
    if (!c.is_object()) throw SchemaError(a.config, "must be an object");
    if (a.gamma) c["gamma"] = *a.gamma;
    if (a.dataset_size) c["dataset_size"] = *a.dataset_size;
    if (a.seed) c["seed"] = *a.seed;
    const LspiConfig cfg = lspi_config_from_json(c, 1, a.config.empty() ? "train-lspi" : a.config);
    const BasisFunction phi = BasisFunction::parse(inst, a.basis, !a.no_constant);
    const ParamVector p = run_lspi(inst, cfg, phi);
    save_params(a.out, p, phi, cfg);
    for (std::size_t k = 0; k < p.trace.size(); ++k) std::cerr << "iteration " << k + 1 << ": change " << p.trace[k] << '\n';
    std::cout << "basis=" << phi.label() << " iterations=" << p.iterations
              << " converged=" << (p.converged ? "true" : "false") << '\n';
    return 0;
}

struct SimulateArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<unsigned> threads;
    std::string instance;
    std::string out;
};

int simulate(const SimulateArgs& a) {
    ExperimentSpec spec = ExperimentSpec::load(a.config);
    if (a.seed) spec.sim.seed = *a.seed;
    if (a.trials) spec.sim.trials = *a.trials;
    if (a.threads) spec.sim.threads = *a.threads;
    if (!a.instance.empty()) spec.instance = a.instance;
    if (!a.out.empty()) spec.outputs.summary = std::filesystem::absolute(a.out).string();
    spec.validate();
    const Instance inst = experiment_instance(spec);
    const auto rows = run_experiment(inst, spec, [&](const SweepRow& r) {
        std::cerr << r.policy << " " << to_string(spec.axis) << "=" << r.axis_value << ": "
                  << r.metrics.mean_contribution << " +/- " << r.metrics.contribution_se << " (" << r.seconds << " s)\n";
    });
    if (spec.outputs.summary.empty())
        write_summary_csv(std::cout, inst, spec, rows);
    write_experiment_outputs(inst, spec, rows);
    return 0;
}

struct BasisArgs {
    std::string table;
    std::string bases = "1,2,3,4,3+4";
    std::size_t k = 10;
    std::uint64_t seed = 1;
    bool no_constant = false;
    double tie = 0.02;
    std::string out;
};

int basis_select(const BasisArgs& a) {
    const LoadedValueTable loaded = load_value_table(a.table);
    const Instance& inst = loaded.space->instance();
    std::vector<BasisFunction> bases;
    for (const auto& b : split_list(a.bases, ',')) bases.push_back(BasisFunction::parse(inst, b, !a.no_constant));
    const auto scores = kfold_basis_selection(*loaded.space, loaded.table, bases, a.k, a.seed);
    auto write = [&](std::ostream& o) {
        o.precision(17);
        o << "rank,basis,fittable,mean_mse,near_tie\n";
        for (std::size_t i = 0; i < scores.size(); ++i) {
            const auto& s = scores[i];
            bool near = false;
            for (std::size_t n : {i - 1, i + 1}) {
                if (n >= scores.size() || !s.fittable || !scores[n].fittable) continue;
                const double lo = std::min(s.mean_mse, scores[n].mean_mse);
                if (std::abs(s.mean_mse - scores[n].mean_mse) <= a.tie * lo) near = true;
            }
            o << i + 1 << ',' << s.basis << ',' << (s.fittable ? "true" : "false") << ',';
            if (s.fittable) o << s.mean_mse;
            o << ',' << (near ? "true" : "false") << '\n';
        }
    };
    if (a.out.empty())
        write(std::cout);
    else
        write_text(a.out, write);
    return 0;
}

int validate_instance(const std::string& ref) {
    std::vector<std::string> warnings;
    const Instance inst = resolve_instance(ref, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "queues=" << inst.queue_count() << " resources=" << inst.resource_count()
              << " cells=" << inst.layout()->size() << " arrivals=" << inst.total_arrival_rate() << "\nok\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Appointment slot allocation: exact, approximate and planning policies"};
    app.require_subcommand(1);

    EviArgs evi;
    auto* evi_cmd = app.add_subcommand("solve-evi", "Exact value iteration on a bounded state space");
    evi_cmd->add_option("--instance", evi.instance, "Built-in name or instance file")->capture_default_str();
    evi_cmd->add_option("--caps", evi.caps, "Caps: N, N,N,... per queue, or A/B per resource")->capture_default_str();
    evi_cmd->add_option("--cap-kind", evi.cap_kind, "queue_length or cell")->capture_default_str();
    evi_cmd->add_option("--gamma", evi.gamma)->capture_default_str();
    evi_cmd->add_option("--eps", evi.eps)->capture_default_str();
    evi_cmd->add_option("--max-sweeps", evi.max_sweeps)->capture_default_str();
    evi_cmd->add_option("--out", evi.out, "Value table file")->required();
    evi_cmd->add_option("--log", evi.log, "Convergence CSV (default <out>.log.csv)");

    LspiArgs lspi;
    auto* lspi_cmd = app.add_subcommand("train-lspi", "Off-policy LSPI on sampled states");
    lspi_cmd->add_option("--instance", lspi.instance)->capture_default_str();
    lspi_cmd->add_option("--config", lspi.config, "JSON with LSPI settings");
    lspi_cmd->add_option("--basis", lspi.basis, "1, 2, 3, 4 or a sum such as 3+4")->capture_default_str();
    lspi_cmd->add_flag("--no-constant", lspi.no_constant, "Omit the constant feature");
    lspi_cmd->add_option("--gamma", lspi.gamma);
    lspi_cmd->add_option("-M,--dataset-size", lspi.dataset_size);
    lspi_cmd->add_option("--seed", lspi.seed);
    lspi_cmd->add_option("--out", lspi.out, "Parameter file")->required();

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Run an experiment file");
    sim_cmd->add_option("--config", sim.config, "Experiment file")->required();
    sim_cmd->add_option("--seed", sim.seed);
    sim_cmd->add_option("--trials", sim.trials);
    sim_cmd->add_option("--threads", sim.threads);
    sim_cmd->add_option("--instance", sim.instance, "Override the experiment's instance");
    sim_cmd->add_option("--out", sim.out, "Summary CSV (overrides outputs.summary)");

    BasisArgs basis;
    auto* basis_cmd = app.add_subcommand("basis-select", "k-fold basis ranking against an exact value table");
    basis_cmd->add_option("--table", basis.table, "Value table file")->required();
    basis_cmd->add_option("--bases", basis.bases, "Comma-separated bases")->capture_default_str();
    basis_cmd->add_option("-k,--k,--folds", basis.k)->capture_default_str();
    basis_cmd->add_option("--seed", basis.seed)->capture_default_str();
    basis_cmd->add_flag("--no-constant", basis.no_constant);
    basis_cmd->add_option("--tie", basis.tie, "Relative gap flagged as a near tie")->capture_default_str();
    basis_cmd->add_option("--out", basis.out, "Ranking CSV (default stdout)");

    std::string instance_ref;
    auto* inst_cmd = app.add_subcommand("instance", "Instance utilities");
    inst_cmd->require_subcommand(1);
    auto* validate_cmd = inst_cmd->add_subcommand("validate", "Check an instance file against the schema");
    validate_cmd->add_option("--instance,instance", instance_ref, "Built-in name or instance file")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*evi_cmd) return solve_evi(evi);
        if (*lspi_cmd) return train_lspi(lspi);
        if (*sim_cmd) return simulate(sim);
        if (*basis_cmd) return basis_select(basis);
        if (*validate_cmd) return validate_instance(instance_ref);
    } catch (const SchemaError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
