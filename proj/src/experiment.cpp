#include "slotalloc/experiment.hpp"

#include "slotalloc/exact.hpp"
#include "slotalloc/instances.hpp"
#include "slotalloc/lspi.hpp"
#include "slotalloc/planners.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace slotalloc {

using nlohmann::json;

namespace {

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double number(const json& obj, const char* key, double fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number()) throw SchemaError(where + "." + key, "must be a number");
    return v->get<double>();
}

long long integer(const json& obj, const char* key, long long fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw SchemaError(where + "." + key, "must be an integer");
    return v->get<long long>();
}

bool boolean(const json& obj, const char* key, bool fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw SchemaError(where + "." + key, "must be true or false");
    return v->get<bool>();
}

std::string text(const json& obj, const char* key, const std::string& fallback, const std::string& where) {
    const json* v = find(obj, key);
    if (!v) return fallback;
    if (!v->is_string()) throw SchemaError(where + "." + key, "must be a string");
    return v->get<std::string>();
}

void allow_only(const json& obj, const std::set<std::string>& keys, const std::string& where) {
    for (const auto& [k, v] : obj.items())
        if (!keys.count(k)) throw SchemaError(where + "." + k, "unknown key");
}

InitialPopulation parse_initial(const json& v, const std::string& where) {
    if (v.is_number_integer()) {
        if (v.get<long long>() < 0) throw SchemaError(where, "must be >= 0");
        return InitialPopulation::exactly(static_cast<int>(v.get<long long>()));
    }
    if (v.is_object() && v.contains("normal")) {
        const json& n = v.at("normal");
        if (n.is_array() && n.size() == 2 && n[0].is_number() && n[1].is_number())
            return InitialPopulation::normal(n[0].get<double>(), n[1].get<double>());
        if (n.is_object()) {
            allow_only(n, {"mean", "sd"}, where + ".normal");
            if (!n.contains("mean") || !n.contains("sd")) throw SchemaError(where + ".normal", "needs mean and sd");
            return InitialPopulation::normal(number(n, "mean", 0, where + ".normal"), number(n, "sd", 0, where + ".normal"));
        }
    }
    throw SchemaError(where, "expected an integer or {\"normal\": {\"mean\": m, \"sd\": s}}");
}

std::string value_label(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_object() && v.contains("normal")) {
        const json& n = v.at("normal");
        std::ostringstream os;
        os << "normal(" << (n.is_array() ? n[0] : n.at("mean")).dump() << ";" << (n.is_array() ? n[1] : n.at("sd")).dump()
           << ")";
        return os.str();
    }
    return v.dump();
}

std::filesystem::path resolve(const ExperimentSpec& spec, const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() || spec.base_dir.empty() ? path : spec.base_dir / path;
}

const std::map<std::string, std::set<std::string>>& policy_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"rolling_lp", {"horizon", "gamma", "integral", "tie_break", "max_pivots", "max_nodes"}},
        {"rule", {"rule"}},
        {"static", {"targets", "fill"}},
        {"hybrid", {"alpha", "tau", "p_static", "big_m", "targets", "fill", "horizon", "gamma", "max_pivots",
                    "max_nodes"}},
        {"lspi", {"params", "basis", "constant", "gamma", "dataset_size", "eps", "delta", "max_iterations", "seed",
                  "patient_range", "pathway_mode", "integral", "integral_training"}},
        {"evi", {"table", "caps", "cap_kind", "gamma", "eps"}},
    };
    return keys;
}

RollingLpConfig rolling_config(const json& c, const std::string& where) {
    RollingLpConfig cfg;
    cfg.horizon = static_cast<int>(integer(c, "horizon", cfg.horizon, where));
    cfg.gamma = number(c, "gamma", cfg.gamma, where);
    cfg.integral = boolean(c, "integral", cfg.integral, where);
    cfg.tie_break = boolean(c, "tie_break", cfg.tie_break, where);
    cfg.solver.max_pivots = static_cast<std::size_t>(integer(c, "max_pivots", static_cast<long long>(cfg.solver.max_pivots), where));
    cfg.solver.max_nodes = static_cast<std::size_t>(integer(c, "max_nodes", static_cast<long long>(cfg.solver.max_nodes), where));
    cfg.validate();
    return cfg;
}

StaticAllocation static_allocation(const Instance& inst, const json& c, const std::string& where) {
    if (!c.contains("targets")) {
        if (c.contains("fill")) throw SchemaError(where + ".fill", "given without targets");
        return smk_static_allocation(inst);
    }
    std::map<std::string, int> targets;
    const json& t = c.at("targets");
    if (!t.is_object()) throw SchemaError(where + ".targets", "must map queue ids to counts");
    for (const auto& [id, v] : t.items()) {
        if (!v.is_number_integer()) throw SchemaError(where + ".targets." + id, "must be an integer");
        targets[id] = v.get<int>();
    }
    std::vector<std::string> fill;
    if (const json* f = find(c, "fill")) {
        if (!f->is_array()) throw SchemaError(where + ".fill", "must be a list of resource ids");
        for (const auto& r : *f) {
            if (!r.is_string()) throw SchemaError(where + ".fill", "must be a list of resource ids");
            fill.push_back(r.get<std::string>());
        }
    }
    try {
        return StaticAllocation::from_ids(inst, targets, fill);
    } catch (const StructuralError& e) {
        throw SchemaError(where + ".targets", e.what());
    }
}

std::shared_ptr<const Policy> build_lspi(const Instance& inst, const ExperimentSpec& spec, const json& c,
                                         const std::string& where) {
    const bool integral = boolean(c, "integral", true, where);
    if (const json* params = find(c, "params")) {
        if (!params->is_string()) throw SchemaError(where + ".params", "must be a path");
        const LoadedParams loaded = load_params(resolve(spec, params->get<std::string>()));
        const BasisFunction phi = BasisFunction::parse(inst, loaded.basis, loaded.includes_constant);
        return std::make_shared<LspiPolicy>(phi, loaded.params.theta, loaded.gamma, integral);
    }
    LspiConfig cfg = lspi_config_from_json(c, spec.sim.seed, where);
    if (!cfg.pathway_mode) cfg.pathway_mode = spec.sim.pathway_mode;
    const BasisFunction phi = BasisFunction::parse(inst, text(c, "basis", "1", where), boolean(c, "constant", true, where));
    const ParamVector p = run_lspi(inst, cfg, phi);
    return std::make_shared<LspiPolicy>(phi, p.theta, cfg.gamma, integral);
}

std::shared_ptr<const Policy> build_evi(const Instance& inst, const ExperimentSpec& spec, const json& c,
                                        const std::string& where) {
    if (const json* table = find(c, "table")) {
        if (!table->is_string()) throw SchemaError(where + ".table", "must be a path");
        const LoadedValueTable loaded = load_value_table(resolve(spec, table->get<std::string>()));
        if (!(loaded.space->instance().data() == inst.data()))
            throw SchemaError(where + ".table", "value table was computed for a different instance");
        return std::make_shared<GreedyPolicy>(loaded.space, loaded.table);
    }
    if (!c.contains("caps")) throw SchemaError(where, "evi needs either table or caps");
    const CapKind kind = cap_kind_from_string(text(c, "cap_kind", to_string(CapKind::QueueLength), where));
    auto space = std::make_shared<const BoundedStateSpace>(inst, parse_caps(inst, text(c, "caps", "", where)), kind);
    const ValueTable table = value_iteration(*space, number(c, "gamma", 0.9, where), number(c, "eps", 0.1, where));
    return std::make_shared<GreedyPolicy>(space, table);
}

std::string sim_key(const SimulationConfig& s) {
    std::ostringstream os;
    os << s.periods << '|' << s.trials << '|' << s.initial.label() << '|' << s.plan_ahead << '|'
       << (s.warmup ? std::to_string(*s.warmup) : "-") << '|' << s.seed << '|'
       << (s.pathway_mode ? to_string(*s.pathway_mode) : "-");
    return os.str();
}

} // namespace

std::string to_string(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::InitialPatients: return "initial";
    case SweepAxis::PlanAhead: return "p";
    case SweepAxis::Gamma: return "gamma";
    case SweepAxis::Alpha: return "alpha";
    case SweepAxis::Tau: return "tau";
    case SweepAxis::DatasetSize: return "M";
    case SweepAxis::Basis: return "basis";
    }
    return "unknown";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
    for (SweepAxis a : {SweepAxis::InitialPatients, SweepAxis::PlanAhead, SweepAxis::Gamma, SweepAxis::Alpha,
                        SweepAxis::Tau, SweepAxis::DatasetSize, SweepAxis::Basis})
        if (to_string(a) == name) return a;
    throw SchemaError("sweep.axis", "unknown axis '" + name + "'");
}

ExperimentSpec ExperimentSpec::parse(const json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) throw SchemaError("experiment", "must be an object");
    allow_only(doc, {"instance", "seed", "trials", "periods", "threads", "initial", "plan_ahead", "warmup",
                     "pathway_mode", "policies", "sweep", "outputs"},
               "experiment");
    ExperimentSpec spec;
    spec.base_dir = base_dir;
    if (!doc.contains("instance")) throw SchemaError("instance", "missing");
    spec.instance = text(doc, "instance", "", "experiment");
    spec.sim.seed = static_cast<std::uint64_t>(integer(doc, "seed", 1, "experiment"));
    spec.sim.trials = static_cast<int>(integer(doc, "trials", 1, "experiment"));
    spec.sim.periods = static_cast<int>(integer(doc, "periods", 30, "experiment"));
    spec.sim.threads = static_cast<unsigned>(integer(doc, "threads", 1, "experiment"));
    spec.sim.plan_ahead = static_cast<int>(integer(doc, "plan_ahead", 0, "experiment"));
    if (doc.contains("warmup")) spec.sim.warmup = static_cast<int>(integer(doc, "warmup", 0, "experiment"));
    if (doc.contains("initial")) spec.sim.initial = parse_initial(doc.at("initial"), "initial");
    if (doc.contains("pathway_mode"))
        spec.sim.pathway_mode = pathway_mode_from_string(text(doc, "pathway_mode", "", "experiment"));

    const json* policies = find(doc, "policies");
    if (!policies || !policies->is_array()) throw SchemaError("policies", "must be a list of policy blocks");
    for (std::size_t k = 0; k < policies->size(); ++k) {
        const json& b = (*policies)[k];
        const std::string where = "policies[" + std::to_string(k) + "]";
        if (!b.is_object()) throw SchemaError(where, "must be an object");
        PolicySpec p;
        p.type = text(b, "type", "", where);
        p.name = text(b, "name", p.type, where);
        for (const auto& [key, v] : b.items())
            if (key != "type" && key != "name") p.config[key] = v;
        spec.policies.push_back(std::move(p));
    }

    const json* sweep = find(doc, "sweep");
    if (!sweep || !sweep->is_object()) throw SchemaError("sweep", "missing");
    allow_only(*sweep, {"axis", "values"}, "sweep");
    spec.axis = sweep_axis_from_string(text(*sweep, "axis", "", "sweep"));
    const json* values = find(*sweep, "values");
    if (!values || !values->is_array()) throw SchemaError("sweep.values", "must be a list");
    spec.values.assign(values->begin(), values->end());

    if (const json* out = find(doc, "outputs")) {
        if (!out->is_object()) throw SchemaError("outputs", "must be an object");
        allow_only(*out, {"summary", "periods", "appointments", "metrics"}, "outputs");
        spec.outputs.summary = text(*out, "summary", "", "outputs");
        spec.outputs.periods = text(*out, "periods", "", "outputs");
        spec.outputs.appointments = text(*out, "appointments", "", "outputs");
        spec.outputs.metrics = text(*out, "metrics", "", "outputs");
    }
    spec.validate();
    return spec;
}

ExperimentSpec ExperimentSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError(path.string(), "cannot open experiment file");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string(), e.what());
    }
    return parse(doc, path.parent_path());
}

void ExperimentSpec::validate() const {
    if (instance.empty()) throw SchemaError("instance", "must not be empty");
    sim.validate();
    if (policies.empty()) throw SchemaError("policies", "must not be empty");
    std::set<std::string> names;
    for (std::size_t k = 0; k < policies.size(); ++k) {
        const auto& p = policies[k];
        const std::string where = "policies[" + std::to_string(k) + "]";
        const auto it = policy_keys().find(p.type);
        if (it == policy_keys().end()) throw SchemaError(where + ".type", "unknown policy type '" + p.type + "'");
        allow_only(p.config, it->second, where);
        if (!names.insert(p.name).second) throw SchemaError(where + ".name", "duplicate policy name '" + p.name + "'");
    }
    if (values.empty()) throw SchemaError("sweep.values", "must not be empty");
    for (std::size_t k = 0; k < values.size(); ++k) {
        const json& v = values[k];
        const std::string where = "sweep.values[" + std::to_string(k) + "]";
        switch (axis) {
        case SweepAxis::InitialPatients: parse_initial(v, where); break;
        case SweepAxis::PlanAhead:
        case SweepAxis::Tau:
        case SweepAxis::DatasetSize:
            if (!v.is_number_integer() || v.get<long long>() < 0) throw SchemaError(where, "must be a non-negative integer");
            break;
        case SweepAxis::Gamma:
        case SweepAxis::Alpha:
            if (!v.is_number()) throw SchemaError(where, "must be a number");
            break;
        case SweepAxis::Basis:
            if (!v.is_string()) throw SchemaError(where, "must be a basis name such as \"1\" or \"3+4\"");
            break;
        }
    }
}

LspiConfig lspi_config_from_json(const json& c, std::uint64_t default_seed, const std::string& where) {
    LspiConfig cfg;
    cfg.gamma = number(c, "gamma", cfg.gamma, where);
    cfg.dataset_size = static_cast<std::size_t>(integer(c, "dataset_size", static_cast<long long>(cfg.dataset_size), where));
    cfg.eps = number(c, "eps", cfg.eps, where);
    cfg.delta = number(c, "delta", cfg.delta, where);
    cfg.max_iterations = static_cast<std::size_t>(integer(c, "max_iterations", static_cast<long long>(cfg.max_iterations), where));
    cfg.seed = static_cast<std::uint64_t>(integer(c, "seed", static_cast<long long>(default_seed), where));
    cfg.integral_training = boolean(c, "integral_training", cfg.integral_training, where);
    if (const json* r = find(c, "patient_range")) {
        if (!r->is_array() || r->size() != 2 || !(*r)[0].is_number_integer() || !(*r)[1].is_number_integer())
            throw SchemaError(where + ".patient_range", "must be [low, high]");
        cfg.patient_range = std::pair<int, int>((*r)[0].get<int>(), (*r)[1].get<int>());
    }
    if (c.contains("pathway_mode")) cfg.pathway_mode = pathway_mode_from_string(text(c, "pathway_mode", "", where));
    cfg.validate();
    return cfg;
}

Instance experiment_instance(const ExperimentSpec& spec) {
    if (spec.instance == "small" || spec.instance == "large" || spec.instance == "smk")
        return builtin_instance(spec.instance);
    return resolve_instance(resolve(spec, spec.instance).string());
}

PreparedPolicy prepare_policy(const Instance& inst, const ExperimentSpec& spec, const PolicySpec& block,
                              const json& value) {
    json c = block.config;
    SimulationConfig sim = spec.sim;
    const std::string& type = block.type;
    switch (spec.axis) {
    case SweepAxis::InitialPatients: sim.initial = parse_initial(value, "sweep value"); break;
    case SweepAxis::PlanAhead: sim.plan_ahead = value.get<int>(); break;
    case SweepAxis::Gamma:
        if (type == "rolling_lp" || type == "hybrid" || type == "lspi" || type == "evi") c["gamma"] = value;
        break;
    case SweepAxis::Alpha:
        if (type == "hybrid") c["alpha"] = value;
        break;
    case SweepAxis::Tau:
        if (type == "hybrid") c["tau"] = value;
        break;
    case SweepAxis::DatasetSize:
        if (type == "lspi") c["dataset_size"] = value;
        break;
    case SweepAxis::Basis:
        if (type == "lspi") c["basis"] = value;
        break;
    }
    const std::string where = "policy " + block.name;

    PreparedPolicy out;
    if (type == "rolling_lp") {
        out.policy = std::make_shared<RollingLpPolicy>(rolling_config(c, where));
    } else if (type == "rule") {
        out.policy = std::make_shared<RulePolicy>(decision_rule_from_string(text(c, "rule", "", where)));
    } else if (type == "static") {
        out.policy = std::make_shared<StaticPolicy>(static_allocation(inst, c, where));
    } else if (type == "hybrid") {
        HybridConfig h;
        h.alpha = number(c, "alpha", h.alpha, where);
        h.tau = static_cast<int>(integer(c, "tau", h.tau, where));
        h.p_static = static_cast<int>(integer(c, "p_static", h.p_static, where));
        if (c.contains("big_m")) h.big_m = number(c, "big_m", 0.0, where);
        h.validate();
        json lp = c;
        if (!lp.contains("integral")) lp["integral"] = false;
        for (const char* k : {"alpha", "tau", "p_static", "big_m", "targets", "fill"}) lp.erase(k);
        out.policy = std::make_shared<HybridPolicy>(static_allocation(inst, c, where), h, rolling_config(lp, where));
        // The dynamic portion is decided tau periods ahead.
        sim.plan_ahead = h.tau;
    } else if (type == "lspi") {
        out.policy = build_lspi(inst, spec, c, where);
    } else if (type == "evi") {
        out.policy = build_evi(inst, spec, c, where);
    } else {
        throw SchemaError(where + ".type", "unknown policy type '" + type + "'");
    }
    out.sim = sim;
    out.key = type + "|" + c.dump() + "|" + sim_key(sim);
    return out;
}

std::vector<SweepRow> run_experiment(const Instance& inst, const ExperimentSpec& spec, const ExperimentProgress& progress) {
    spec.validate();
    std::vector<SweepRow> rows;
    std::map<std::string, std::size_t> done;
    for (const json& value : spec.values) {
        for (const auto& block : spec.policies) {
            SweepRow row;
            row.policy = block.name;
            row.type = block.type;
            row.axis_value = value_label(value);
            const auto start = std::chrono::steady_clock::now();
            const PreparedPolicy prepared = prepare_policy(inst, spec, block, value);
            if (const auto it = done.find(prepared.key); it != done.end()) {
                row.metrics = rows[it->second].metrics;
                row.trials = rows[it->second].trials;
            } else {
                row.trials = run_trials(inst, *prepared.policy, prepared.sim);
                row.metrics = aggregate(inst, row.trials);
                done[prepared.key] = rows.size();
            }
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (progress) progress(row);
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

void write_summary_csv(std::ostream& out, const Instance& inst, const ExperimentSpec& spec,
                       const std::vector<SweepRow>& rows) {
    out.precision(17);
    out << "policy,type,axis,axis_value,trials,mean_contribution,contribution_se,seconds";
    for (std::size_t j = 0; j < inst.queue_count(); ++j) out << ",within_" << inst.queue(j).id;
    for (std::size_t j = 0; j < inst.queue_count(); ++j) out << ",late_wait_" << inst.queue(j).id;
    for (const auto& r : inst.resources()) out << ",unused_" << r.id;
    out << '\n';
    for (const auto& row : rows) {
        const MetricsReport& m = row.metrics;
        out << row.policy << ',' << row.type << ',' << to_string(spec.axis) << ',' << row.axis_value << ',' << m.trials
            << ',' << m.mean_contribution << ',' << m.contribution_se << ',' << row.seconds;
        for (const auto& q : m.queues) out << ',' << q.pct_within_target;
        for (const auto& q : m.queues) {
            out << ',';
            if (q.mean_late_wait) out << *q.mean_late_wait;
        }
        for (double u : m.pct_unused) out << ',' << u;
        out << '\n';
    }
}

namespace {

void prefixed(std::ostream& out, const std::vector<SweepRow>& rows,
              const std::function<void(std::ostream&, const SweepRow&)>& write) {
    bool header = true;
    for (const auto& row : rows) {
        std::stringstream body;
        write(body, row);
        std::string line;
        bool first = true;
        while (std::getline(body, line)) {
            if (first) {
                first = false;
                if (header) out << "policy,axis_value," << line << '\n';
                header = false;
                continue;
            }
            out << row.policy << ',' << row.axis_value << ',' << line << '\n';
        }
    }
}

void write_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& write) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw SchemaError(path.string(), "cannot open output file");
    write(out);
}

} // namespace

void write_sweep_periods_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows) {
    prefixed(out, rows, [&](std::ostream& o, const SweepRow& r) { write_periods_csv(o, inst, r.trials); });
}

void write_sweep_appointments_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows) {
    prefixed(out, rows, [&](std::ostream& o, const SweepRow& r) { write_appointments_csv(o, inst, r.trials); });
}

void write_sweep_metrics_csv(std::ostream& out, const Instance& inst, const std::vector<SweepRow>& rows) {
    prefixed(out, rows, [&](std::ostream& o, const SweepRow& r) { write_metrics_csv(o, inst, r.metrics); });
}

void write_experiment_outputs(const Instance& inst, const ExperimentSpec& spec, const std::vector<SweepRow>& rows) {
    const auto& o = spec.outputs;
    if (!o.summary.empty())
        write_file(resolve(spec, o.summary), [&](std::ostream& out) { write_summary_csv(out, inst, spec, rows); });
    if (!o.periods.empty())
        write_file(resolve(spec, o.periods), [&](std::ostream& out) { write_sweep_periods_csv(out, inst, rows); });
    if (!o.appointments.empty())
        write_file(resolve(spec, o.appointments),
                   [&](std::ostream& out) { write_sweep_appointments_csv(out, inst, rows); });
    if (!o.metrics.empty())
        write_file(resolve(spec, o.metrics), [&](std::ostream& out) { write_sweep_metrics_csv(out, inst, rows); });
}

} // namespace slotalloc
