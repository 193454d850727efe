#include "slotalloc/planners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slotalloc {

namespace {

/// Sparse affine expression constant + sum coef * var, terms sorted by var.
struct Affine {
    double constant = 0.0;
    std::vector<lp::Term> terms;
};

Affine combine(const Affine& a, double fa, const Affine& b, double fb) {
    Affine out;
    out.constant = fa * a.constant + fb * b.constant;
    out.terms.reserve(a.terms.size() + b.terms.size());
    std::size_t i = 0, k = 0;
    while (i < a.terms.size() || k < b.terms.size()) {
        if (k == b.terms.size() || (i < a.terms.size() && a.terms[i].var < b.terms[k].var)) {
            out.terms.push_back({a.terms[i].var, fa * a.terms[i].coef});
            ++i;
        } else if (i == a.terms.size() || b.terms[k].var < a.terms[i].var) {
            out.terms.push_back({b.terms[k].var, fb * b.terms[k].coef});
            ++k;
        } else {
            const double c = fa * a.terms[i].coef + fb * b.terms[k].coef;
            if (c != 0.0) out.terms.push_back({a.terms[i].var, c});
            ++i;
            ++k;
        }
    }
    return out;
}

void add_term(Affine& e, int var, double coef) {
    auto it = std::lower_bound(e.terms.begin(), e.terms.end(), var,
                               [](const lp::Term& t, int v) { return t.var < v; });
    if (it != e.terms.end() && it->var == var) it->coef += coef;
    else e.terms.insert(it, {var, coef});
}

constexpr double kFractionTolerance = 1e-9;

int floor_count(double v) { return std::max(0, static_cast<int>(std::floor(v + kFractionTolerance))); }

struct Capacity {
    std::vector<int> left;
    Capacity(const Instance& inst, int period) : left(inst.resource_count()) {
        for (std::size_t r = 0; r < left.size(); ++r) left[r] = inst.capacity(r, period);
    }
    bool fits(const Instance& inst, std::size_t j) const {
        for (std::size_t r = 0; r < left.size(); ++r)
            if (inst.demand(j, r) > left[r]) return false;
        return true;
    }
    void take(const Instance& inst, std::size_t j) {
        for (std::size_t r = 0; r < left.size(); ++r) left[r] -= inst.demand(j, r);
    }
};

} // namespace

// ---------------------------------------------------------------- rolling horizon

void RollingLpConfig::validate() const {
    if (horizon < 1) throw SchemaError("horizon", "must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw SchemaError("gamma", "must lie in [0,1]");
}

RollingLpResult rolling_lp(const Instance& inst, const FractionalState& s0, const RollingLpConfig& cfg, int period,
                           const MinimumTreatment* minimum) {
    cfg.validate();
    if (!s0.same_shape(*inst.layout())) throw StructuralError("rolling_lp: state does not match the instance");
    const auto& L = *inst.layout();
    const std::size_t C = L.size();
    const std::size_t n = inst.queue_count();
    const int T = cfg.horizon;
    const bool with_minimum = minimum && std::any_of(minimum->target.begin(), minimum->target.end(),
                                                     [](int v) { return v > 0; });
    if (minimum && minimum->target.size() != n) throw StructuralError("rolling_lp: one minimum target per queue");

    lp::LpProblem p;
    std::vector<std::vector<int>> avar(static_cast<std::size_t>(T), std::vector<int>(C));
    auto var = [&](int t, std::size_t c) { return avar[static_cast<std::size_t>(t)][c]; };
    std::vector<Affine> s(C);
    for (std::size_t c = 0; c < C; ++c) s[c].constant = s0[c];
    double constant = 0.0;
    double discount = 1.0;
    // Upper bound on any queue length at period t, used to tighten the big-M rows.
    double routing_growth = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) row += inst.transition(i, j);
        routing_growth = std::max(routing_growth, row);
    }
    double length_bound = 0.0;
    for (std::size_t c = 0; c < C; ++c) length_bound += std::max(0.0, s0[c]);
    // Among equally good first actions, prefer cells earlier in the priority order.
    auto tie_bonus = [&](std::size_t c) {
        return cfg.tie_break ? kTieBreakWeight * static_cast<double>(C - inst.priority_rank()[c]) / static_cast<double>(C)
                             : 0.0;
    };

    for (int t = 0; t < T; ++t) {
        // Later periods stay continuous under minimum-treatment rows so fractional expectations cannot make them
        // infeasible.
        const bool integral = cfg.integral && (t == 0 || !with_minimum);
        for (std::size_t c = 0; c < C; ++c) {
            const double upper = t == 0 ? floor_count(s0[c]) : (s[c].terms.empty() ? std::max(0.0, s[c].constant) : lp::kInfinity);
            double gain = discount * (inst.cell_reward(c) + inst.cell_cost(c));
            if (t == 0) gain += tie_bonus(c);
            avar[static_cast<std::size_t>(t)][c] =
                p.add_variable("a_" + std::to_string(t) + "_" + std::to_string(c), 0.0, upper, integral, gain);
            const double cost = discount * inst.cell_cost(c);
            constant -= cost * s[c].constant;
            for (const auto& term : s[c].terms) p.add_objective(term.var, -cost * term.coef);
            if (t > 0 && !s[c].terms.empty()) {
                std::vector<lp::Term> row{{var(t, c), 1.0}};
                for (const auto& term : s[c].terms) row.push_back({term.var, -term.coef});
                p.add_constraint(std::move(row), lp::Relation::LessEqual, s[c].constant,
                                 "avail_" + std::to_string(t) + "_" + std::to_string(c));
            }
        }
        for (std::size_t r = 0; r < inst.resource_count(); ++r) {
            std::vector<lp::Term> row;
            for (std::size_t c = 0; c < C; ++c) {
                const int d = inst.demand(L.queue_of(c), r);
                if (d != 0) row.push_back({var(t, c), static_cast<double>(d)});
            }
            if (!row.empty())
                p.add_constraint(std::move(row), lp::Relation::LessEqual, inst.capacity(r, period + t),
                                 inst.resources()[r].id + "_" + std::to_string(t));
        }
        if (with_minimum) {
            for (std::size_t j = 0; j < n; ++j) {
                const int theta = minimum->target[j];
                if (theta <= 0) continue;
                std::vector<lp::Term> treated;
                for (int w = 0; w <= L.wait_cap(j); ++w) treated.push_back({var(t, L.index(j, w)), 1.0});
                const std::string tag = std::to_string(t) + "_" + std::to_string(j);
                if (t == 0) {
                    // The initial queue length is known, so the minimum is a plain bound.
                    int len = 0;
                    for (int w = 0; w <= L.wait_cap(j); ++w) len += floor_count(s0[L.index(j, w)]);
                    p.add_constraint(std::move(treated), lp::Relation::GreaterEqual, std::min(len, theta), "min_" + tag);
                    continue;
                }
                Affine len;
                for (int w = 0; w <= L.wait_cap(j); ++w) len = combine(len, 1.0, s[L.index(j, w)], 1.0);
                // 0 <= len <= length_bound, so each row's constant can be capped without changing the integer
                // feasible set.
                const double K = minimum->big_m;
                const double Ka = std::min(K, static_cast<double>(theta));
                const double Kb = std::min(K, std::max(0.0, length_bound - theta));
                const double Kc = std::min(K, length_bound);
                const double Kd = Ka;
                const int y = p.add_variable("y_" + tag, 0.0, 1.0, true);
                // theta - len <= K y
                std::vector<lp::Term> r1{{y, -Ka}};
                for (const auto& term : len.terms) r1.push_back({term.var, -term.coef});
                p.add_constraint(std::move(r1), lp::Relation::LessEqual, len.constant - theta, "min_a_" + tag);
                // len - theta <= K (1 - y)
                std::vector<lp::Term> r2{{y, Kb}};
                for (const auto& term : len.terms) r2.push_back(term);
                p.add_constraint(std::move(r2), lp::Relation::LessEqual, theta + Kb - len.constant, "min_b_" + tag);
                // treated >= len - K (1 - y)
                std::vector<lp::Term> r3 = treated;
                r3.push_back({y, -Kc});
                for (const auto& term : len.terms) r3.push_back({term.var, -term.coef});
                p.add_constraint(std::move(r3), lp::Relation::GreaterEqual, len.constant - Kc, "min_c_" + tag);
                // treated >= theta - K y
                std::vector<lp::Term> r4 = std::move(treated);
                r4.push_back({y, Kd});
                p.add_constraint(std::move(r4), lp::Relation::GreaterEqual, theta, "min_d_" + tag);
            }
        }
        if (t + 1 == T) break;

        // Expected next state as affine expressions of a_0 .. a_t.
        std::vector<Affine> next(C);
        for (std::size_t j = 0; j < n; ++j) {
            const int W = L.wait_cap(j);
            Affine& head = next[L.index(j, 0)];
            head.constant = inst.arrival_rate(j);
            for (std::size_t i = 0; i < n; ++i) {
                const double q = inst.transition(i, j);
                if (q == 0.0) continue;
                for (int w = 0; w <= L.wait_cap(i); ++w) add_term(head, var(t, L.index(i, w)), q);
            }
            for (int w = 1; w <= W; ++w) {
                const std::size_t from = L.index(j, w - 1);
                Affine e = s[from];
                add_term(e, var(t, from), -1.0);
                if (w == W) {
                    const std::size_t pool = L.index(j, W);
                    e = combine(e, 1.0, s[pool], 1.0);
                    add_term(e, var(t, pool), -1.0);
                }
                next[L.index(j, w)] = std::move(e);
            }
        }
        s = std::move(next);
        length_bound = routing_growth * length_bound + inst.total_arrival_rate();
        discount *= cfg.gamma;
    }
    p.set_objective_constant(constant);

    const lp::LpSolution sol = p.has_integral() ? lp::solve_milp(p, cfg.solver) : lp::solve_lp(p, cfg.solver);
    if (sol.status == lp::Status::IterationLimit) throw ResourceLimitError("rolling-horizon program hit the solver limit");
    if (sol.status != lp::Status::Optimal)
        throw NumericalError("rolling-horizon program returned status " + lp::to_string(sol.status));

    double objective = sol.objective_value;
    for (std::size_t c = 0; c < C; ++c) objective -= tie_bonus(c) * sol.values[static_cast<std::size_t>(var(0, c))];
    RollingLpResult out{inst.make_action(), objective, p.variable_count(), p.constraint_count(), sol.pivots,
                        sol.nodes};
    for (std::size_t c = 0; c < C; ++c)
        out.action[c] = std::min(floor_count(sol.values[static_cast<std::size_t>(var(0, c))]), floor_count(s0[c]));
    if (with_minimum && !cfg.integral) {
        // Flooring can drop a queue below its first-period minimum. Rounding up that queue's own fractional cells
        // restores it and fits in the capacity the flooring released.
        for (std::size_t j = 0; j < n; ++j) {
            int len = 0, treated = 0;
            std::vector<std::pair<double, std::size_t>> fractional;
            for (int w = 0; w <= L.wait_cap(j); ++w) {
                const std::size_t c = L.index(j, w);
                len += floor_count(s0[c]);
                treated += out.action[c];
                const double frac = sol.values[static_cast<std::size_t>(var(0, c))] - out.action[c];
                if (frac > kFractionTolerance && out.action[c] < floor_count(s0[c])) fractional.emplace_back(frac, c);
            }
            int deficit = std::min(len, minimum->target[j]) - treated;
            std::stable_sort(fractional.begin(), fractional.end(), [&](const auto& a, const auto& b) {
                return a.first != b.first ? a.first > b.first
                                          : inst.priority_rank()[a.second] < inst.priority_rank()[b.second];
            });
            for (const auto& f : fractional) {
                if (deficit <= 0) break;
                ++out.action[f.second];
                --deficit;
            }
        }
    }
    return out;
}

RollingLpPolicy::RollingLpPolicy(RollingLpConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Action RollingLpPolicy::do_decide(const Instance& inst, const FractionalState& s, int period) const {
    return rolling_lp(inst, s, cfg_, period).action;
}

// ---------------------------------------------------------------- decision rules

Action rule_highest_contribution(const Instance& inst, const State& s, int period) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("rule: state does not match the instance");
    std::vector<std::size_t> order = inst.priority_order();
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return inst.cell_cost(x) + inst.cell_reward(x) > inst.cell_cost(y) + inst.cell_reward(y);
    });
    Action a = inst.make_action();
    Capacity cap(inst, period);
    for (std::size_t c : order) {
        const std::size_t j = inst.layout()->queue_of(c);
        while (a[c] < s[c] && cap.fits(inst, j)) {
            ++a[c];
            cap.take(inst, j);
        }
    }
    return a;
}

namespace {

template <class Score>
Action queue_rule(const Instance& inst, const State& s, int period, Score score) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("rule: state does not match the instance");
    const auto& L = *inst.layout();
    Action a = inst.make_action();
    Capacity cap(inst, period);
    while (true) {
        std::optional<std::size_t> best;
        double best_score = 0.0;
        for (std::size_t j = 0; j < inst.queue_count(); ++j) {
            if (s.queue_total(j) - a.queue_total(j) <= 0 || !cap.fits(inst, j)) continue;
            const double v = score(j, a);
            if (!best || v > best_score) {
                best = j;
                best_score = v;
            }
        }
        if (!best) break;
        const std::size_t j = *best;
        for (int w = L.wait_cap(j); w >= 0; --w) {
            if (a(j, w) < s(j, w)) {
                ++a(j, w);
                break;
            }
        }
        cap.take(inst, j);
    }
    return a;
}

} // namespace

Action rule_highest_cost_queue(const Instance& inst, const State& s, int period) {
    return queue_rule(inst, s, period, [&](std::size_t j, const Action& a) {
        double cost = 0.0;
        for (int w = 0; w <= inst.queue(j).wait_cap; ++w) cost += inst.cost(j, w) * (s(j, w) - a(j, w));
        return cost;
    });
}

Action rule_longest_queue(const Instance& inst, const State& s, int period) {
    return queue_rule(inst, s, period, [&](std::size_t j, const Action& a) {
        return static_cast<double>(s.queue_total(j) - a.queue_total(j));
    });
}

Action rule_split_cost(const Instance& inst, const State& s, int period) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("rule: state does not match the instance");
    const std::size_t n = inst.queue_count();
    const std::size_t R = inst.resource_count();
    std::vector<std::size_t> resource(n);
    for (std::size_t j = 0; j < n; ++j) {
        int count = 0;
        for (std::size_t r = 0; r < R; ++r)
            if (inst.demand(j, r) > 0) {
                resource[j] = r;
                ++count;
            }
        if (count != 1) throw StructuralError("split cost needs every queue to demand exactly one resource");
    }
    std::vector<double> cost(n, 0.0), total(R, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (int w = 0; w <= inst.queue(j).wait_cap; ++w) cost[j] += inst.cost(j, w) * s(j, w);
        total[resource[j]] += cost[j];
    }
    Action a = inst.make_action();
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t r = resource[j];
        if (total[r] <= 0.0) continue;
        // Share of the resource's timeslots, converted to patients.
        const double slots = inst.capacity(r, period) * cost[j] / total[r];
        int treat = std::min(s.queue_total(j), static_cast<int>(std::floor(slots / inst.demand(j, r) + 1e-9)));
        for (int w = inst.queue(j).wait_cap; w >= 0 && treat > 0; --w) {
            const int k = std::min(treat, s(j, w));
            a(j, w) = k;
            treat -= k;
        }
    }
    return a;
}

std::string to_string(DecisionRule rule) {
    switch (rule) {
    case DecisionRule::HighestContribution: return "highest_contribution";
    case DecisionRule::HighestCostQueue: return "highest_cost_queue";
    case DecisionRule::LongestQueue: return "longest_queue";
    case DecisionRule::SplitCost: return "split_cost";
    }
    return "unknown";
}

DecisionRule decision_rule_from_string(const std::string& name) {
    for (DecisionRule r : {DecisionRule::HighestContribution, DecisionRule::HighestCostQueue, DecisionRule::LongestQueue,
                           DecisionRule::SplitCost})
        if (to_string(r) == name) return r;
    throw SchemaError("rule", "unknown decision rule '" + name + "'");
}

Action RulePolicy::do_decide(const Instance& inst, const FractionalState& fs, int period) const {
    const State s = fs.floored();
    switch (rule_) {
    case DecisionRule::HighestContribution: return rule_highest_contribution(inst, s, period);
    case DecisionRule::HighestCostQueue: return rule_highest_cost_queue(inst, s, period);
    case DecisionRule::LongestQueue: return rule_longest_queue(inst, s, period);
    case DecisionRule::SplitCost: return rule_split_cost(inst, s, period);
    }
    throw StructuralError("unknown decision rule");
}

// ---------------------------------------------------------------- static allocation

StaticAllocation StaticAllocation::from_ids(const Instance& inst, const std::map<std::string, int>& targets,
                                            const std::vector<std::string>& fill_resources) {
    StaticAllocation a;
    a.targets.assign(inst.queue_count(), 0);
    for (const auto& [id, v] : targets) {
        if (v < 0) throw SchemaError("static.targets[" + id + "]", "must be >= 0");
        a.targets[inst.queue_index(id)] = v;
    }
    for (const auto& id : fill_resources) a.fill.insert(inst.resource_index(id));
    a.validate(inst);
    return a;
}

void StaticAllocation::validate(const Instance& inst) const {
    if (targets.size() != inst.queue_count()) throw StructuralError("static allocation: one target per queue");
    for (std::size_t r = 0; r < inst.resource_count(); ++r) {
        int use = 0;
        for (std::size_t j = 0; j < targets.size(); ++j) use += targets[j] * inst.demand(j, r);
        if (use > inst.capacity(r))
            throw SchemaError("static.targets", "targets need " + std::to_string(use) + " " + inst.resources()[r].id +
                                                    " timeslots, capacity is " + std::to_string(inst.capacity(r)));
    }
    for (std::size_t r : fill)
        if (r >= inst.resource_count()) throw StructuralError("static allocation: unknown fill resource");
}

StaticAllocation smk_static_allocation(const Instance& inst) {
    return StaticAllocation::from_ids(inst, {{"FA_2", 30}, {"FU_3", 17}, {"FU_6", 17}, {"FU_12", 17}, {"DA_3", 9}},
                                      {"OR"});
}

Action static_decide(const Instance& inst, const State& s, const StaticAllocation& alloc, int period) {
    if (!s.same_shape(*inst.layout())) throw StructuralError("static: state does not match the instance");
    if (alloc.targets.size() != inst.queue_count()) throw StructuralError("static allocation: one target per queue");
    const auto& L = *inst.layout();
    Action a = inst.make_action();
    Capacity cap(inst, period);
    // Cost grows with w, so the highest-cost patients of a queue are the longest waiting.
    for (std::size_t j = 0; j < inst.queue_count(); ++j) {
        int treat = alloc.targets[j];
        for (int w = L.wait_cap(j); w >= 0 && treat > 0; --w)
            while (a(j, w) < s(j, w) && treat > 0 && cap.fits(inst, j)) {
                ++a(j, w);
                --treat;
                cap.take(inst, j);
            }
    }
    if (!alloc.fill.empty()) {
        std::vector<std::size_t> cells;
        for (std::size_t c : inst.priority_order()) {
            const std::size_t j = L.queue_of(c);
            if (alloc.targets[j] > 0) continue;
            bool uses_fill = false;
            for (std::size_t r : alloc.fill) uses_fill = uses_fill || inst.demand(j, r) > 0;
            if (uses_fill) cells.push_back(c);
        }
        std::stable_sort(cells.begin(), cells.end(),
                         [&](std::size_t x, std::size_t y) { return inst.cell_cost(x) > inst.cell_cost(y); });
        for (std::size_t c : cells) {
            const std::size_t j = L.queue_of(c);
            while (a[c] < s[c] && cap.fits(inst, j)) {
                ++a[c];
                cap.take(inst, j);
            }
        }
    }
    return a;
}

Action StaticPolicy::do_decide(const Instance& inst, const FractionalState& s, int period) const {
    return static_decide(inst, s.floored(), alloc_, period);
}

// ---------------------------------------------------------------- hybrid

void HybridConfig::validate() const {
    if (!(alpha >= 0.0 && alpha <= 100.0)) throw SchemaError("alpha", "must lie in [0,100]");
    if (tau < 1 || tau >= p_static) throw SchemaError("tau", "must satisfy 1 <= tau < p_static");
    if (big_m && !(*big_m > 0.0)) throw SchemaError("big_m", "must be > 0");
}

std::vector<int> hybrid_targets(const StaticAllocation& alloc, double alpha) {
    std::vector<int> out(alloc.targets.size());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = static_cast<int>(std::floor(alloc.targets[j] * alpha / 100.0 + 0.5));
    return out;
}

double hybrid_big_m(const Instance& inst) {
    int max_eta = 0, max_w = 0;
    for (std::size_t r = 0; r < inst.resource_count(); ++r) max_eta = std::max(max_eta, inst.capacity(r));
    for (std::size_t j = 0; j < inst.queue_count(); ++j) max_w = std::max(max_w, inst.queue(j).wait_cap);
    return 10.0 * (max_eta + inst.total_arrival_rate() * max_w);
}

Action hybrid_decide(const Instance& inst, const FractionalState& predicted, const StaticAllocation& alloc,
                     const HybridConfig& cfg, const RollingLpConfig& lp_cfg, int period) {
    cfg.validate();
    MinimumTreatment m{hybrid_targets(alloc, cfg.alpha), cfg.big_m.value_or(hybrid_big_m(inst))};
    return rolling_lp(inst, predicted, lp_cfg, period, &m).action;
}

HybridPolicy::HybridPolicy(StaticAllocation alloc, HybridConfig cfg, RollingLpConfig lp_cfg)
    : alloc_(std::move(alloc)), cfg_(cfg), lp_cfg_(std::move(lp_cfg)) {
    cfg_.validate();
    lp_cfg_.validate();
}

Action HybridPolicy::do_decide(const Instance& inst, const FractionalState& s, int period) const {
    return hybrid_decide(inst, s, alloc_, cfg_, lp_cfg_, period);
}

// ---------------------------------------------------------------- prediction

FractionalState predict_state(const Instance& inst, const FractionalState& s, const std::vector<Action>& actions) {
    FractionalState cur = s;
    for (const Action& a : actions) {
        FractionalAction clipped(inst.layout());
        for (std::size_t c = 0; c < cur.size(); ++c) clipped[c] = std::min(static_cast<double>(a[c]), cur[c]);
        cur = expected_next_state(inst, cur, clipped);
    }
    return cur;
}

FractionalState predict_state(const Instance& inst, const State& s, const std::vector<Action>& actions) {
    return predict_state(inst, s.cast<double>(), actions);
}

} // namespace slotalloc
