#include "slotalloc/population.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace slotalloc {

std::mt19937_64 derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    std::vector<std::uint32_t> words;
    words.reserve(2 * (keys.size() + 1));
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(seed);
    for (std::uint64_t k : keys) push(k);
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

std::string to_string(PathwayMode mode) { return mode == PathwayMode::StartRow ? "start_row" : "synthetic_chain"; }

PathwayMode pathway_mode_from_string(const std::string& name) {
    if (name == "start_row") return PathwayMode::StartRow;
    if (name == "synthetic_chain") return PathwayMode::SyntheticChain;
    throw SchemaError("pathway_mode", "unknown pathway mode '" + name + "'");
}

PathwayMode default_pathway_mode(const Instance& inst) {
    return inst.has_start_row() ? PathwayMode::StartRow : PathwayMode::SyntheticChain;
}

namespace {

std::vector<double> entry_weights(const Instance& inst, PathwayMode mode) {
    const std::size_t n = inst.queue_count();
    std::vector<double> w(n);
    if (mode == PathwayMode::StartRow) {
        if (!inst.has_start_row()) throw StructuralError("start-row pathways need a Start row");
        for (std::size_t j = 0; j < n; ++j) w[j] = inst.start_probability(j);
    } else {
        for (std::size_t j = 0; j < n; ++j) w[j] = inst.arrival_rate(j);
    }
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) throw StructuralError("no entry queue has positive weight");
    for (double& v : w) v /= total;
    return w;
}

} // namespace

Pathway pathway_from(const Instance& inst, std::size_t entry, std::mt19937_64& rng, bool* truncated) {
    const std::size_t n = inst.queue_count();
    Pathway p{static_cast<int>(entry)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (truncated) *truncated = false;
    while (true) {
        const std::size_t i = static_cast<std::size_t>(p.back());
        double x = u(rng), acc = 0.0;
        std::size_t next = n;
        for (std::size_t j = 0; j < n; ++j) {
            acc += inst.transition(i, j);
            if (x < acc) {
                next = j;
                break;
            }
        }
        if (next == n) break;
        if (static_cast<int>(p.size()) == kMaxPathwayLength) {
            if (truncated) *truncated = true;
            break;
        }
        p.push_back(static_cast<int>(next));
    }
    return p;
}

Pathway generate_pathway(const Instance& inst, std::mt19937_64& rng, PathwayMode mode, bool* truncated) {
    const auto w = entry_weights(inst, mode);
    std::discrete_distribution<std::size_t> d(w.begin(), w.end());
    return pathway_from(inst, d(rng), rng, truncated);
}

int sample_initial_wait(const Instance& inst, std::size_t queue, std::mt19937_64& rng) {
    const auto& q = inst.queue(queue);
    if (q.access_target <= 0) return 0;
    std::exponential_distribution<double> e(1.0 / q.access_target);
    const double w = std::floor(e(rng) + 0.5);
    return w >= q.wait_cap ? q.wait_cap : static_cast<int>(w);
}

Population::Population(Instance inst) : inst_(std::move(inst)) {}

void Population::add(Pathway pathway, std::size_t stage, int wait) {
    if (pathway.empty()) throw StructuralError("patient pathway must not be empty");
    if (stage >= pathway.size()) throw StructuralError("patient stage beyond its pathway");
    for (int q : pathway)
        if (q < 0 || static_cast<std::size_t>(q) >= inst_.queue_count())
            throw StructuralError("pathway refers to an unknown queue");
    const std::size_t j = static_cast<std::size_t>(pathway[stage]);
    if (wait < 0 || wait > inst_.queue(j).wait_cap) throw StructuralError("patient wait outside [0, W_j]");
    patients_.push_back({std::move(pathway), stage, wait, next_order_++});
}

State Population::state() const {
    State s = inst_.make_state();
    for (const auto& p : patients_) ++s(p.queue(), p.wait);
    return s;
}

StepOutcome Population::step(const Action& a, const std::vector<Pathway>& arrivals, int period) {
    const State s = state();
    if (!is_feasible(inst_, s, a, period)) throw StructuralError("population step: infeasible action");
    StepOutcome out;
    out.flows = TransitionRealization(inst_.queue_count());
    Action left = a;
    std::vector<Patient> next;
    next.reserve(patients_.size() + arrivals.size());
    // patients_ is kept in insertion order, so the first members of a cell are the oldest inserted.
    for (auto& p : patients_) {
        const std::size_t j = p.queue();
        const auto& q = inst_.queue(j);
        int& quota = left(j, p.wait);
        if (quota > 0) {
            --quota;
            out.appointments.push_back({j, p.wait, p.wait <= q.access_target});
            ++p.stage;
            p.wait = 0;
            if (p.stage == p.pathway.size()) {
                ++out.flows(j, out.flows.exit_column());
                ++out.departures;
                continue;
            }
            ++out.flows(j, p.queue());
        } else {
            p.wait = std::min(p.wait + 1, q.wait_cap);
        }
        next.push_back(std::move(p));
    }
    patients_ = std::move(next);
    for (const auto& path : arrivals) add(path);
    return out;
}

Population init_population(const Instance& inst, int n, std::mt19937_64& rng, PathwayMode mode,
                           std::size_t* truncated) {
    if (n < 0) throw StructuralError("initial population size must be >= 0");
    Population pop(inst);
    for (int k = 0; k < n; ++k) {
        bool cut = false;
        Pathway path = generate_pathway(inst, rng, mode, &cut);
        if (cut && truncated) ++*truncated;
        const std::size_t stage = std::uniform_int_distribution<std::size_t>(0, path.size() - 1)(rng);
        const int wait = sample_initial_wait(inst, static_cast<std::size_t>(path[stage]), rng);
        pop.add(std::move(path), stage, wait);
    }
    return pop;
}

std::vector<Pathway> arrival_pathways(const Instance& inst, std::mt19937_64& rng, std::size_t* truncated) {
    std::vector<Pathway> out;
    const auto counts = rounded_arrivals(inst);
    for (std::size_t j = 0; j < counts.size(); ++j)
        for (int k = 0; k < counts[j]; ++k) {
            bool cut = false;
            out.push_back(pathway_from(inst, j, rng, &cut));
            if (cut && truncated) ++*truncated;
        }
    return out;
}

double mean_pathway_length(const Instance& inst, PathwayMode mode) {
    const std::size_t n = inst.queue_count();
    const auto e = entry_weights(inst, mode);
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(static_cast<int>(n), static_cast<int>(n));
    Eigen::VectorXd b(static_cast<int>(n));
    for (std::size_t j = 0; j < n; ++j) {
        b(static_cast<int>(j)) = e[j];
        for (std::size_t i = 0; i < n; ++i) A(static_cast<int>(j), static_cast<int>(i)) -= inst.transition(i, j);
    }
    return A.partialPivLu().solve(b).sum();
}

} // namespace slotalloc
