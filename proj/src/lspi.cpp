#include "slotalloc/lspi.hpp"

#include "slotalloc/instances.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace slotalloc {

// ---------------------------------------------------------------- basis

BasisFunction::BasisFunction(const Instance& inst, std::vector<BasisKind> parts, bool includes_constant)
    : parts_(std::move(parts)), constant_(includes_constant), layout_(inst.layout()) {
    if (parts_.empty()) throw StructuralError("basis function needs at least one feature family");
    const std::size_t n = inst.queue_count();
    const std::size_t C = inst.cell_count();
    std::vector<Eigen::VectorXd> rows;
    auto queue_row = [&](std::size_t j, auto weight) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(C));
        for (int w = 0; w <= inst.queue(j).wait_cap; ++w) {
            const std::size_t c = inst.layout()->index(j, w);
            r(static_cast<Eigen::Index>(c)) = weight(c, w);
        }
        rows.push_back(std::move(r));
    };
    for (BasisKind kind : parts_) {
        switch (kind) {
        case BasisKind::FullState:
            for (std::size_t c = 0; c < C; ++c) {
                Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(C));
                r(static_cast<Eigen::Index>(c)) = 1.0;
                rows.push_back(std::move(r));
            }
            break;
        case BasisKind::TimingClass:
            for (std::size_t j = 0; j < n; ++j) {
                const int u = inst.queue(j).access_target;
                queue_row(j, [&](std::size_t, int w) { return w < u ? 1.0 : 0.0; });
                queue_row(j, [&](std::size_t, int w) { return w == u ? 1.0 : 0.0; });
                queue_row(j, [&](std::size_t, int w) { return w > u ? 1.0 : 0.0; });
            }
            break;
        case BasisKind::QueueCost:
            for (std::size_t j = 0; j < n; ++j) {
                const int u = inst.queue(j).access_target;
                queue_row(j, [&](std::size_t c, int w) { return w >= u ? inst.cell_cost(c) : 0.0; });
            }
            break;
        case BasisKind::QueueTotal:
            for (std::size_t j = 0; j < n; ++j) queue_row(j, [](std::size_t, int) { return 1.0; });
            break;
        default:
            throw StructuralError("unknown basis kind");
        }
    }
    linear_.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(C));
    for (std::size_t f = 0; f < rows.size(); ++f) linear_.row(static_cast<Eigen::Index>(f)) = rows[f].transpose();
}

BasisFunction BasisFunction::parse(const Instance& inst, const std::string& spec, bool includes_constant) {
    std::string s;
    for (char ch : spec)
        if (!std::isspace(static_cast<unsigned char>(ch))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    std::vector<BasisKind> parts;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, '+')) {
        if (tok.rfind("phi", 0) == 0) tok = tok.substr(3);
        if (tok.size() != 1 || tok[0] < '1' || tok[0] > '4')
            throw SchemaError("basis", "unknown basis function '" + spec + "' (expected e.g. 1, 2, 3+4)");
        parts.push_back(static_cast<BasisKind>(tok[0] - '0'));
    }
    if (parts.empty()) throw SchemaError("basis", "empty basis specification");
    return BasisFunction(inst, std::move(parts), includes_constant);
}

std::string BasisFunction::label() const {
    std::string out = "Phi";
    for (std::size_t k = 0; k < parts_.size(); ++k) {
        if (k) out += '+';
        out += std::to_string(static_cast<int>(parts_[k]));
    }
    return out;
}

Eigen::VectorXd BasisFunction::evaluate(const FractionalState& s) const {
    if (!s.same_shape(*layout_)) throw StructuralError("basis: state does not match the instance layout");
    const Eigen::Map<const Eigen::VectorXd> x(s.cells().data(), static_cast<Eigen::Index>(s.size()));
    Eigen::VectorXd out(static_cast<Eigen::Index>(dimension()));
    out.head(linear_.rows()) = linear_ * x;
    if (constant_) out(linear_.rows()) = 1.0;
    return out;
}

// ---------------------------------------------------------------- config and sampling

void LspiConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw SchemaError("gamma", "must lie in [0,1)");
    if (dataset_size < 1) throw SchemaError("dataset_size", "must be >= 1");
    if (!(eps > 0.0)) throw SchemaError("eps", "must be > 0");
    if (!(delta > 0.0)) throw SchemaError("delta", "must be > 0");
    if (max_iterations < 1) throw SchemaError("max_iterations", "must be >= 1");
    if (patient_range && (patient_range->first < 0 || patient_range->second < patient_range->first))
        throw SchemaError("patient_range", "must satisfy 0 <= min <= max");
}

std::pair<int, int> default_patient_range(const Instance& inst, PathwayMode mode) {
    const double load = inst.total_arrival_rate() * mean_pathway_length(inst, mode);
    return {static_cast<int>(std::floor(0.5 * load + 0.5)), static_cast<int>(std::floor(1.5 * load + 0.5))};
}

std::vector<LspiSample> sample_states(const Instance& inst, std::size_t m, std::mt19937_64& rng,
                                      std::pair<int, int> patient_range, PathwayMode mode) {
    if (m < 1) throw StructuralError("sample_states: M must be >= 1");
    if (patient_range.first < 0 || patient_range.second < patient_range.first)
        throw StructuralError("sample_states: invalid patient range");
    std::uniform_int_distribution<int> count(patient_range.first, patient_range.second);
    std::vector<LspiSample> out;
    out.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        Population pop = init_population(inst, count(rng), rng, mode);
        State s = pop.state();
        out.push_back({k, std::move(pop), std::move(s)});
    }
    return out;
}

// ---------------------------------------------------------------- policy-LP

namespace {

/// E[s'|s,a] = base + sum_c a_c * column(c); only the nonzero entries of each column are kept.
struct ExpectedNextState {
    Eigen::VectorXd base;
    std::vector<std::vector<std::pair<std::size_t, double>>> columns;
};

ExpectedNextState expected_map(const Instance& inst, const FractionalState& s) {
    const std::size_t n = inst.queue_count();
    const auto& L = *inst.layout();
    ExpectedNextState m;
    m.base = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.size()));
    m.columns.resize(L.size());
    for (std::size_t j = 0; j < n; ++j) {
        const int W = L.wait_cap(j);
        m.base(static_cast<Eigen::Index>(L.index(j, 0))) += inst.arrival_rate(j);
        for (int w = 0; w <= W; ++w) {
            const std::size_t c = L.index(j, w);
            const std::size_t aged = L.index(j, std::min(w + 1, W));
            m.base(static_cast<Eigen::Index>(aged)) += s[c];
            m.columns[c].emplace_back(aged, -1.0);
            for (std::size_t k = 0; k < n; ++k)
                if (inst.transition(j, k) > 0.0) m.columns[c].emplace_back(L.index(k, 0), inst.transition(j, k));
        }
    }
    return m;
}

} // namespace

PolicyLpResult policy_lp(const Instance& inst, const FractionalState& s, const Eigen::VectorXd& theta,
                         const BasisFunction& phi, double gamma, bool integral, int period) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("policy_lp: state does not match the instance");
    if (static_cast<std::size_t>(theta.size()) != phi.dimension())
        throw StructuralError("policy_lp: theta has dimension " + std::to_string(theta.size()) + ", basis has " +
                              std::to_string(phi.dimension()));
    const std::size_t C = inst.cell_count();
    const State avail = s.floored();
    const ExpectedNextState map = expected_map(inst, s);
    const Eigen::Index lin = phi.linear().rows();
    // Gradient of theta' phi with respect to the expected next state.
    const Eigen::VectorXd g = phi.linear().transpose() * theta.head(lin);

    lp::LpProblem p;
    for (std::size_t c = 0; c < C; ++c) {
        double coef = inst.cell_reward(c) + inst.cell_cost(c);
        for (const auto& [row, v] : map.columns[c]) coef += gamma * g(static_cast<Eigen::Index>(row)) * v;
        p.add_variable("a" + std::to_string(c), 0.0, static_cast<double>(avail[c]), integral, coef);
    }
    for (std::size_t r = 0; r < inst.resource_count(); ++r) {
        std::vector<lp::Term> terms;
        for (std::size_t c = 0; c < C; ++c) {
            const int d = inst.demand(inst.layout()->queue_of(c), r);
            if (d != 0) terms.push_back({static_cast<int>(c), static_cast<double>(d)});
        }
        if (!terms.empty())
            p.add_constraint(std::move(terms), lp::Relation::LessEqual, inst.capacity(r, period), inst.resources()[r].id);
    }
    const lp::LpSolution sol = integral ? lp::solve_milp(p) : lp::solve_lp(p);
    if (sol.status == lp::Status::IterationLimit) throw ResourceLimitError("policy-LP hit the solver limit");
    if (sol.status != lp::Status::Optimal)
        throw NumericalError("policy-LP returned status " + lp::to_string(sol.status));

    PolicyLpResult out{inst.make_action(), 0.0};
    for (std::size_t c = 0; c < C; ++c)
        out.action[c] = std::clamp(static_cast<int>(std::floor(sol.values[c] + 1e-9)), 0, avail[c]);
    FractionalState next = inst.make_fractional_state();
    for (std::size_t c = 0; c < C; ++c) next[c] = map.base(static_cast<Eigen::Index>(c));
    for (std::size_t c = 0; c < C; ++c)
        for (const auto& [row, v] : map.columns[c]) next[row] += v * out.action[c];
    out.objective = contribution(inst, s, out.action) + gamma * theta.dot(phi.evaluate(next));
    return out;
}

// ---------------------------------------------------------------- LSPI

ParamVector run_lspi(const Instance& inst, const LspiConfig& cfg, const BasisFunction& phi,
                     const std::vector<LspiSample>& dataset) {
    cfg.validate();
    if (dataset.empty()) throw StructuralError("run_lspi: empty dataset");
    const Eigen::Index F = static_cast<Eigen::Index>(phi.dimension());
    ParamVector out;
    out.theta = Eigen::VectorXd::Zero(F);
    std::vector<Eigen::VectorXd> features;
    features.reserve(dataset.size());
    for (const auto& d : dataset) features.push_back(phi.evaluate(d.state));

    for (std::size_t n = 1; n <= cfg.max_iterations; ++n) {
        Eigen::MatrixXd A = cfg.eps * Eigen::MatrixXd::Identity(F, F);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(F);
        for (std::size_t m = 0; m < dataset.size(); ++m) {
            const LspiSample& d = dataset[m];
            const FractionalState fs = d.state.cast<double>();
            const Action a = policy_lp_action(inst, fs, out.theta, phi, cfg.gamma, cfg.integral_training);
            auto rng = derive_rng(cfg.seed, {0x6578'6f67ULL, n, d.id});
            Population pop = d.population;
            pop.step(a, arrival_pathways(inst, rng));
            const Eigen::VectorXd& f = features[m];
            b += contribution(inst, d.state, a) * f;
            A.noalias() += f * (f - cfg.gamma * phi.evaluate(pop.state())).transpose();
        }
        const Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
        if (!lu.isInvertible()) {
            std::ostringstream msg;
            msg << "LSTD matrix A_M is singular in iteration " << n << " (rank " << lu.rank() << " of " << F
                << ", eps " << cfg.eps << ")";
            throw NumericalError(msg.str());
        }
        const Eigen::VectorXd theta = lu.solve(b);
        if (!theta.allFinite()) throw NumericalError("LSTD produced non-finite parameters in iteration " + std::to_string(n));
        const double change = (theta - out.theta).norm();
        out.theta = theta;
        out.iterations = n;
        out.trace.push_back(change);
        if (change < cfg.delta) {
            out.converged = true;
            break;
        }
    }
    return out;
}

ParamVector run_lspi(const Instance& inst, const LspiConfig& cfg, const BasisFunction& phi) {
    cfg.validate();
    const PathwayMode mode = cfg.pathway_mode.value_or(default_pathway_mode(inst));
    auto rng = derive_rng(cfg.seed, {0x6461'7461ULL});
    const auto range = cfg.patient_range ? *cfg.patient_range : default_patient_range(inst, mode);
    return run_lspi(inst, cfg, phi, sample_states(inst, cfg.dataset_size, rng, range, mode));
}

LspiPolicy::LspiPolicy(BasisFunction phi, Eigen::VectorXd theta, double gamma, bool integral)
    : phi_(std::move(phi)), theta_(std::move(theta)), gamma_(gamma), integral_(integral) {
    if (static_cast<std::size_t>(theta_.size()) != phi_.dimension())
        throw StructuralError("LSPI policy: theta does not match the basis dimension");
}

Action LspiPolicy::do_decide(const Instance& inst, const FractionalState& s, int period) const {
    return policy_lp_action(inst, s, theta_, phi_, gamma_, integral_, period);
}

// ---------------------------------------------------------------- parameter files

std::string serialize_params(const ParamVector& p, const BasisFunction& phi, const LspiConfig& cfg) {
    nlohmann::json doc;
    doc["format"] = "slotalloc.lspi_params";
    doc["version"] = 1;
    doc["basis"] = phi.label();
    doc["includes_constant"] = phi.includes_constant();
    doc["gamma"] = cfg.gamma;
    doc["dataset_size"] = cfg.dataset_size;
    doc["eps"] = cfg.eps;
    doc["delta"] = cfg.delta;
    doc["max_iterations"] = cfg.max_iterations;
    doc["seed"] = cfg.seed;
    doc["iterations"] = p.iterations;
    doc["converged"] = p.converged;
    doc["trace"] = p.trace;
    doc["theta"] = std::vector<double>(p.theta.data(), p.theta.data() + p.theta.size());
    return doc.dump(1) + "\n";
}

void save_params(const std::filesystem::path& path, const ParamVector& p, const BasisFunction& phi,
                 const LspiConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_params(p, phi, cfg);
}

LoadedParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("<document>", "cannot open " + path.string());
    try {
        const nlohmann::json doc = nlohmann::json::parse(in);
        if (doc.value("format", "") != "slotalloc.lspi_params") throw SchemaError("format", "not an LSPI parameter file");
        LoadedParams out;
        const auto theta = doc.at("theta").get<std::vector<double>>();
        out.params.theta = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
        out.params.iterations = doc.at("iterations").get<std::size_t>();
        out.params.converged = doc.at("converged").get<bool>();
        out.params.trace = doc.at("trace").get<std::vector<double>>();
        out.basis = doc.at("basis").get<std::string>();
        out.includes_constant = doc.at("includes_constant").get<bool>();
        out.gamma = doc.at("gamma").get<double>();
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("<document>", e.what());
    }
}

// ---------------------------------------------------------------- regression

namespace {

Eigen::MatrixXd design(const BoundedStateSpace& space, const BasisFunction& phi, const std::vector<std::size_t>& states) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(states.size()), static_cast<Eigen::Index>(phi.dimension()));
    for (std::size_t i = 0; i < states.size(); ++i)
        X.row(static_cast<Eigen::Index>(i)) = phi.evaluate(space.state(states[i])).transpose();
    return X;
}

Eigen::VectorXd targets(const ValueTable& values, const std::vector<std::size_t>& states) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(states.size()));
    for (std::size_t i = 0; i < states.size(); ++i) y(static_cast<Eigen::Index>(i)) = values.values.at(states[i]);
    return y;
}

} // namespace

RegressionFit fit_theta_regression(const BoundedStateSpace& space, const ValueTable& values, const BasisFunction& phi,
                                   const std::vector<std::size_t>& states) {
    if (values.values.size() != space.size()) throw StructuralError("value table does not match the state space");
    const Eigen::MatrixXd X = design(space, phi, states);
    const Eigen::VectorXd y = targets(values, states);
    std::vector<Eigen::Index> keep;
    for (Eigen::Index f = 0; f < X.cols(); ++f)
        if (X.col(f).cwiseAbs().maxCoeff() > 0.0) keep.push_back(f);
    Eigen::MatrixXd Xk(X.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) Xk.col(static_cast<Eigen::Index>(k)) = X.col(keep[k]);

    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xk);
    if (qr.rank() < Xk.cols())
        throw RankDeficientError("no optimal theta found for " + phi.label() + ": design matrix has rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(Xk.cols()) + " features");
    const Eigen::VectorXd tk = qr.solve(y);
    RegressionFit fit;
    fit.theta = Eigen::VectorXd::Zero(X.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) fit.theta(keep[k]) = tk(static_cast<Eigen::Index>(k));
    fit.mse = (y - X * fit.theta).squaredNorm() / static_cast<double>(states.size());
    return fit;
}

double regression_mse(const BoundedStateSpace& space, const ValueTable& values, const BasisFunction& phi,
                      const Eigen::VectorXd& theta, const std::vector<std::size_t>& states) {
    if (states.empty()) throw StructuralError("regression_mse: empty state set");
    const Eigen::MatrixXd X = design(space, phi, states);
    return (targets(values, states) - X * theta).squaredNorm() / static_cast<double>(states.size());
}

std::vector<BasisScore> kfold_basis_selection(const BoundedStateSpace& space, const ValueTable& values,
                                              const std::vector<BasisFunction>& bases, std::size_t k,
                                              std::uint64_t seed) {
    if (k < 2) throw StructuralError("k-fold selection needs k >= 2");
    if (space.size() < k) throw StructuralError("k-fold selection needs at least k states");
    std::vector<std::size_t> order(space.size());
    std::iota(order.begin(), order.end(), 0);
    auto rng = derive_rng(seed, {0x6b66'6f6cULL});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % k].push_back(order[i]);

    std::vector<BasisScore> out;
    for (const auto& phi : bases) {
        BasisScore score;
        score.basis = phi.label();
        try {
            for (std::size_t f = 0; f < k; ++f) {
                std::vector<std::size_t> train;
                for (std::size_t g = 0; g < k; ++g)
                    if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
                const RegressionFit fit = fit_theta_regression(space, values, phi, train);
                score.fold_mse.push_back(regression_mse(space, values, phi, fit.theta, folds[f]));
            }
            score.mean_mse = std::accumulate(score.fold_mse.begin(), score.fold_mse.end(), 0.0) / static_cast<double>(k);
        } catch (const RankDeficientError&) {
            score.fittable = false;
            score.fold_mse.clear();
            score.mean_mse = std::numeric_limits<double>::quiet_NaN();
        }
        out.push_back(std::move(score));
    }
    std::stable_sort(out.begin(), out.end(), [](const BasisScore& a, const BasisScore& b) {
        if (a.fittable != b.fittable) return a.fittable;
        return a.fittable && a.mean_mse < b.mean_mse;
    });
    return out;
}

} // namespace slotalloc
