#include "slotalloc/exact.hpp"

#include "slotalloc/instances.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace slotalloc {

std::string to_string(CapKind kind) { return kind == CapKind::QueueLength ? "queue_length" : "cell"; }

CapKind cap_kind_from_string(const std::string& name) {
    if (name == "queue_length") return CapKind::QueueLength;
    if (name == "cell") return CapKind::Cell;
    throw SchemaError("cap_kind", "unknown cap kind '" + name + "'");
}

std::vector<int> parse_caps(const Instance& inst, const std::string& spec) {
    auto split = [](const std::string& s, char sep) {
        std::vector<int> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, sep)) {
            try {
                std::size_t used = 0;
                out.push_back(std::stoi(item, &used));
                if (used != item.size()) throw std::invalid_argument(item);
            } catch (const std::exception&) {
                throw SchemaError("caps", "cannot parse '" + item + "'");
            }
        }
        return out;
    };
    const std::size_t n = inst.queue_count();
    if (spec.find('/') != std::string::npos) {
        const auto per_resource = split(spec, '/');
        if (per_resource.size() != inst.resource_count())
            throw SchemaError("caps", "expected one cap per resource");
        std::vector<int> caps(n);
        for (std::size_t j = 0; j < n; ++j) {
            std::size_t r = 0;
            while (inst.demand(j, r) == 0) ++r;
            caps[j] = per_resource[r];
        }
        return caps;
    }
    auto caps = split(spec, ',');
    if (caps.size() == 1) caps.assign(n, caps[0]);
    if (caps.size() != n) throw SchemaError("caps", "expected one cap or one per queue");
    for (int c : caps)
        if (c < 0) throw SchemaError("caps", "caps must be >= 0");
    return caps;
}

BoundedStateSpace::BoundedStateSpace(Instance inst, std::vector<int> caps, CapKind kind, std::size_t guard)
    : inst_(std::move(inst)), caps_(std::move(caps)), kind_(kind) {
    const std::size_t n = inst_.queue_count();
    if (caps_.size() != n) throw StructuralError("one cap per queue required");
    long double estimate = 1.0L;
    for (std::size_t j = 0; j < n; ++j) {
        if (caps_[j] < 0) throw StructuralError("caps must be >= 0");
        const int cells = inst_.queue(j).wait_cap + 1;
        if (kind_ == CapKind::Cell) {
            estimate *= std::pow(static_cast<long double>(caps_[j] + 1), cells);
        } else {
            // Non-negative vectors of length `cells` with sum <= cap.
            estimate *= std::round(std::exp(std::lgamma(caps_[j] + cells + 1.0L) - std::lgamma(caps_[j] + 1.0L) -
                                            std::lgamma(cells + 1.0L)));
        }
    }
    if (estimate > static_cast<long double>(guard))
        throw ResourceLimitError("bounded state space has " + std::to_string(static_cast<double>(estimate)) +
                                 " states, above the guard of " + std::to_string(guard));

    const std::size_t C = inst_.cell_count();
    radix_.assign(C, 1);
    std::uint64_t mult = 1;
    for (std::size_t c = C; c-- > 0;) {
        radix_[c] = mult;
        const std::uint64_t base = static_cast<std::uint64_t>(caps_[inst_.layout()->queue_of(c)]) + 1;
        if (mult > UINT64_MAX / base) throw ResourceLimitError("state codec key overflow");
        mult *= base;
    }

    // Per-queue sub-states in lexicographic order, then their product.
    std::vector<std::vector<std::vector<int>>> per_queue(n);
    for (std::size_t j = 0; j < n; ++j) {
        const int cells = inst_.queue(j).wait_cap + 1;
        std::vector<int> cur(cells, 0);
        std::function<void(int, int)> rec = [&](int w, int left) {
            if (w == cells) {
                per_queue[j].push_back(cur);
                return;
            }
            const int hi = kind_ == CapKind::Cell ? caps_[j] : left;
            for (int v = 0; v <= hi; ++v) {
                cur[w] = v;
                rec(w + 1, kind_ == CapKind::Cell ? left : left - v);
            }
            cur[w] = 0;
        };
        rec(0, caps_[j]);
    }
    count_ = 1;
    for (const auto& q : per_queue) count_ *= q.size();
    cells_.reserve(count_ * C);
    std::vector<std::size_t> pick(n, 0);
    std::vector<int> state(C);
    for (std::size_t k = 0; k < count_; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
            const auto& sub = per_queue[j][pick[j]];
            std::copy(sub.begin(), sub.end(), state.begin() + static_cast<std::ptrdiff_t>(inst_.layout()->offset(j)));
        }
        cells_.insert(cells_.end(), state.begin(), state.end());
        lookup_.emplace(key(state), static_cast<std::uint32_t>(k));
        for (std::size_t j = n; j-- > 0;) {
            if (++pick[j] < per_queue[j].size()) break;
            pick[j] = 0;
        }
    }
}

std::uint64_t BoundedStateSpace::key(const std::vector<int>& cells) const {
    std::uint64_t k = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) k += radix_[c] * static_cast<std::uint64_t>(cells[c]);
    return k;
}

State BoundedStateSpace::state(std::size_t index) const {
    if (index >= count_) throw StructuralError("state index out of range");
    const std::size_t C = inst_.cell_count();
    std::vector<int> cells(cells_.begin() + static_cast<std::ptrdiff_t>(index * C),
                           cells_.begin() + static_cast<std::ptrdiff_t>((index + 1) * C));
    return State(inst_.layout(), std::move(cells));
}

std::optional<std::size_t> BoundedStateSpace::find(const State& s) const {
    if (!s.same_shape(*inst_.layout())) return std::nullopt;
    for (std::size_t c = 0; c < s.size(); ++c) {
        const int cap = caps_[inst_.layout()->queue_of(c)];
        if (s[c] < 0 || s[c] > cap) return std::nullopt;
    }
    if (kind_ == CapKind::QueueLength)
        for (std::size_t j = 0; j < inst_.queue_count(); ++j)
            if (s.queue_total(j) > caps_[j]) return std::nullopt;
    auto it = lookup_.find(key(s.cells()));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::size_t BoundedStateSpace::index_of(const State& s) const {
    auto idx = find(s);
    if (!idx) throw StructuralError("state outside the bounded space");
    return *idx;
}

namespace {

void clamp_cells(const Instance& inst, const std::vector<int>& caps, CapKind kind, std::vector<int>& cells) {
    for (std::size_t j = 0; j < inst.queue_count(); ++j) {
        const std::size_t off = inst.layout()->offset(j);
        const int W = inst.queue(j).wait_cap;
        if (kind == CapKind::Cell) {
            for (int w = 0; w <= W; ++w) cells[off + w] = std::min(cells[off + w], caps[j]);
            continue;
        }
        int total = 0;
        for (int w = 0; w <= W; ++w) total += cells[off + w];
        int excess = total - caps[j];
        for (int w = 0; w <= W && excess > 0; ++w) {
            const int cut = std::min(excess, cells[off + w]);
            cells[off + w] -= cut;
            excess -= cut;
        }
    }
}

} // namespace

State BoundedStateSpace::clamp(const State& s) const {
    std::vector<int> cells = s.cells();
    clamp_cells(inst_, caps_, kind_, cells);
    return State(inst_.layout(), std::move(cells));
}

std::size_t BoundedStateSpace::clamped_index(std::vector<int>& cells) const {
    clamp_cells(inst_, caps_, kind_, cells);
    return lookup_.at(key(cells));
}

namespace {

struct RowOutcome {
    std::vector<int> counts; ///< per destination in `dests`
    double probability;
};

/// Multinomial outcomes of routing `treated` patients out of queue i.
std::vector<RowOutcome> row_outcomes(const Instance& inst, std::size_t i, int treated, std::vector<std::size_t>& dests) {
    const std::size_t n = inst.queue_count();
    dests.clear();
    std::vector<double> p;
    for (std::size_t j = 0; j < n; ++j)
        if (inst.transition(i, j) > 0.0) {
            dests.push_back(j);
            p.push_back(inst.transition(i, j));
        }
    if (inst.exit_probability(i) > 0.0) {
        dests.push_back(n);
        p.push_back(inst.exit_probability(i));
    }
    std::vector<RowOutcome> out;
    std::vector<int> cur(dests.size(), 0);
    const double log_fact = std::lgamma(treated + 1.0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t d, int left) {
        if (d + 1 == dests.size()) {
            cur[d] = left;
            double lp = log_fact;
            for (std::size_t k = 0; k < cur.size(); ++k) lp += cur[k] * std::log(p[k]) - std::lgamma(cur[k] + 1.0);
            out.push_back({cur, std::exp(lp)});
            return;
        }
        for (int v = left; v >= 0; --v) {
            cur[d] = v;
            rec(d + 1, left - v);
        }
    };
    if (dests.empty()) throw StructuralError("queue " + inst.queue(i).id + " has no outgoing probability mass");
    rec(0, treated);
    return out;
}

/// Distribution of w=0 inflow per queue for given per-queue treated counts.
using InflowDistribution = std::vector<std::pair<std::vector<int>, double>>;

InflowDistribution inflow_distribution(const Instance& inst, const std::vector<int>& treated) {
    const std::size_t n = inst.queue_count();
    std::map<std::vector<int>, double> acc{{std::vector<int>(n, 0), 1.0}};
    std::vector<std::size_t> dests;
    for (std::size_t i = 0; i < n; ++i) {
        if (treated[i] == 0) continue;
        const auto outcomes = row_outcomes(inst, i, treated[i], dests);
        std::map<std::vector<int>, double> next;
        for (const auto& [vec, prob] : acc) {
            for (const auto& o : outcomes) {
                std::vector<int> v = vec;
                for (std::size_t k = 0; k < dests.size(); ++k)
                    if (dests[k] < n) v[dests[k]] += o.counts[k];
                next[v] += prob * o.probability;
            }
        }
        acc.swap(next);
    }
    return InflowDistribution(acc.begin(), acc.end());
}

using Successors = std::vector<std::pair<std::uint32_t, double>>;

/**
 * Enumerates (action, contribution, clamped successor distribution) for a
 * state. Inflow distributions are cached per treated-count vector.
 */
class Transitions {
public:
    Transitions(const BoundedStateSpace& space, std::size_t guard)
        : space_(space), inst_(space.instance()), arrivals_(rounded_arrivals(inst_)), guard_(guard) {}

    template <class F>
    void for_each_choice(const State& s, F&& visit) {
        const std::size_t n = inst_.queue_count();
        std::vector<int> treated(n), base(s.size()), cells(s.size());
        Successors succ;
        for_each_action(
            inst_, s,
            [&](const Action& a) {
                for (std::size_t j = 0; j < n; ++j) treated[j] = a.queue_total(j);
                const InflowDistribution& dist = inflow(treated);
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t off = inst_.layout()->offset(j);
                    const int W = inst_.queue(j).wait_cap;
                    base[off] = arrivals_[j];
                    for (int w = 1; w < W; ++w) base[off + w] = s[off + w - 1] - a[off + w - 1];
                    base[off + W] = (s[off + W - 1] - a[off + W - 1]) + (s[off + W] - a[off + W]);
                }
                succ.clear();
                for (const auto& [in, prob] : dist) {
                    cells = base;
                    for (std::size_t j = 0; j < n; ++j) cells[inst_.layout()->offset(j)] += in[j];
                    succ.emplace_back(static_cast<std::uint32_t>(space_.clamped_index(cells)), prob);
                }
                std::sort(succ.begin(), succ.end());
                std::size_t w = 0;
                for (std::size_t k = 0; k < succ.size(); ++k) {
                    if (w > 0 && succ[w - 1].first == succ[k].first) succ[w - 1].second += succ[k].second;
                    else succ[w++] = succ[k];
                }
                succ.resize(w);
                visit(a, contribution(inst_, s, a), succ);
            },
            guard_);
    }

private:
    const InflowDistribution& inflow(const std::vector<int>& treated) {
        auto it = cache_.find(treated);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(treated, inflow_distribution(inst_, treated)).first->second;
    }

    const BoundedStateSpace& space_;
    const Instance& inst_;
    std::vector<int> arrivals_;
    std::size_t guard_;
    std::map<std::vector<int>, InflowDistribution> cache_;
};

} // namespace

std::vector<WeightedRealization> realizations(const Instance& inst, const Action& a) {
    if (!a.same_shape(*inst.layout())) throw StructuralError("realizations: action does not match layout");
    const std::size_t n = inst.queue_count();
    std::vector<std::vector<RowOutcome>> rows(n);
    std::vector<std::vector<std::size_t>> dests(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int treated = a.queue_total(i);
        if (treated > 0) rows[i] = row_outcomes(inst, i, treated, dests[i]);
    }
    std::vector<WeightedRealization> out;
    TransitionRealization x(n);
    std::function<void(std::size_t, double)> rec = [&](std::size_t i, double prob) {
        if (i == n) {
            out.push_back({x, prob});
            return;
        }
        if (rows[i].empty()) {
            rec(i + 1, prob);
            return;
        }
        for (const auto& o : rows[i]) {
            for (std::size_t k = 0; k < dests[i].size(); ++k) x(i, dests[i][k]) = o.counts[k];
            rec(i + 1, prob * o.probability);
        }
        for (std::size_t k = 0; k < dests[i].size(); ++k) x(i, dests[i][k]) = 0;
    };
    rec(0, 1.0);
    return out;
}

ValueTable value_iteration(const BoundedStateSpace& space, double gamma, double eps, const ValueIterationOptions& opt) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw StructuralError("value_iteration: gamma must lie in [0,1)");
    if (!(eps > 0.0)) throw StructuralError("value_iteration: eps must be positive");
    const std::size_t S = space.size();
    Transitions model(space, opt.action_guard);

    struct Choice {
        double reward;
        std::uint32_t begin, end;
    };
    std::vector<std::size_t> first(S + 1, 0);
    std::vector<Choice> choices;
    Successors succ_store;
    bool cached = true;
    for (std::size_t k = 0; k < S && cached; ++k) {
        model.for_each_choice(space.state(k), [&](const Action&, double c, const Successors& succ) {
            choices.push_back({c, static_cast<std::uint32_t>(succ_store.size()),
                               static_cast<std::uint32_t>(succ_store.size() + succ.size())});
            succ_store.insert(succ_store.end(), succ.begin(), succ.end());
        });
        first[k + 1] = choices.size();
        if (succ_store.size() > opt.cache_budget) cached = false;
    }
    if (!cached) {
        choices.clear();
        choices.shrink_to_fit();
        succ_store.clear();
        succ_store.shrink_to_fit();
    }

    ValueTable table;
    table.gamma = gamma;
    std::vector<double> V(S, 0.0), next(S, 0.0);
    for (std::size_t sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
        double residual = 0.0;
        for (std::size_t k = 0; k < S; ++k) {
            double best = -std::numeric_limits<double>::infinity();
            if (cached) {
                for (std::size_t c = first[k]; c < first[k + 1]; ++c) {
                    double q = 0.0;
                    for (std::uint32_t e = choices[c].begin; e < choices[c].end; ++e)
                        q += succ_store[e].second * V[succ_store[e].first];
                    best = std::max(best, choices[c].reward + gamma * q);
                }
            } else {
                model.for_each_choice(space.state(k), [&](const Action&, double c, const Successors& succ) {
                    double q = 0.0;
                    for (const auto& [idx, p] : succ) q += p * V[idx];
                    best = std::max(best, c + gamma * q);
                });
            }
            next[k] = best;
            residual = std::max(residual, std::abs(best - V[k]));
        }
        V.swap(next);
        table.residual = residual;
        table.sweeps = sweep;
        table.residual_trace.push_back(residual);
        if (opt.progress) opt.progress(sweep, residual);
        if (residual < eps) break;
    }
    table.values = std::move(V);
    return table;
}

GreedyPolicy::GreedyPolicy(std::shared_ptr<const BoundedStateSpace> space, ValueTable table)
    : space_(std::move(space)), table_(std::move(table)), arrivals_(rounded_arrivals(space_->instance())) {
    if (table_.values.size() != space_->size()) throw StructuralError("value table does not match the state space");
}

double GreedyPolicy::q_value(const State& s, const Action& a) const {
    const Instance& inst = space_->instance();
    if (!is_feasible(inst, s, a)) throw StructuralError("q_value: infeasible action");
    double q = 0.0;
    for (const auto& r : realizations(inst, a)) {
        const State t = space_->clamp(next_state(inst, s, a, r.flows, arrivals_));
        q += r.probability * table_.values[space_->index_of(t)];
    }
    return contribution(inst, s, a) + table_.gamma * q;
}

Action GreedyPolicy::do_decide(const Instance& inst, const FractionalState& fs, int period) const {
    (void)period;
    if (!(inst == space_->instance())) throw StructuralError("greedy policy used with a different instance");
    const State s = fs.floored();
    Transitions model(*space_, kDefaultActionGuard);
    Action best = inst.make_action();
    double best_q = 0.0;
    bool first = true;
    model.for_each_choice(s, [&](const Action& a, double c, const Successors& succ) {
        double q = 0.0;
        for (const auto& [idx, p] : succ) q += p * table_.values[idx];
        q = c + table_.gamma * q;
        // Enumeration runs from the preferred action down; keep the first maximum.
        if (first || q > best_q + 1e-9 * std::max(1.0, std::abs(best_q))) {
            first = false;
            best_q = q;
            best = a;
        }
    });
    return best;
}

GreedyPolicy greedy_policy(std::shared_ptr<const BoundedStateSpace> space, const ValueTable& table) {
    return GreedyPolicy(std::move(space), table);
}

std::string serialize_value_table(const BoundedStateSpace& space, const ValueTable& table) {
    nlohmann::json doc;
    doc["format"] = "slotalloc.value_table";
    doc["version"] = 1;
    doc["instance"] = nlohmann::json::parse(serialize_instance(space.instance()));
    doc["caps"] = space.caps();
    doc["cap_kind"] = to_string(space.kind());
    doc["state_count"] = space.size();
    doc["gamma"] = table.gamma;
    doc["residual"] = table.residual;
    doc["sweeps"] = table.sweeps;
    doc["residual_trace"] = table.residual_trace;
    doc["values"] = table.values;
    return doc.dump(1) + "\n";
}

void save_value_table(const std::filesystem::path& path, const BoundedStateSpace& space, const ValueTable& table) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << serialize_value_table(space, table);
}

LoadedValueTable load_value_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("<document>", "cannot open " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("<document>", e.what());
    }
    if (doc.value("format", "") != "slotalloc.value_table") throw SchemaError("format", "not a value table file");
    try {
        Instance inst = parse_instance(doc.at("instance").dump());
        auto space = std::make_shared<const BoundedStateSpace>(std::move(inst), doc.at("caps").get<std::vector<int>>(),
                                                               cap_kind_from_string(doc.at("cap_kind")));
        ValueTable t;
        t.values = doc.at("values").get<std::vector<double>>();
        t.gamma = doc.at("gamma").get<double>();
        t.residual = doc.at("residual").get<double>();
        t.sweeps = doc.at("sweeps").get<std::size_t>();
        t.residual_trace = doc.at("residual_trace").get<std::vector<double>>();
        if (t.values.size() != space->size()) throw SchemaError("values", "length does not match the state space");
        return {std::move(space), std::move(t)};
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("<document>", e.what());
    }
}

} // namespace slotalloc
