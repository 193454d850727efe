#pragma once

// Brute-force reference for tiny bounded MDPs: explicit state list,
// per-patient routing enumeration, policy evaluation by linear solve and
// exhaustive search over stationary deterministic policies.

#include "slotalloc/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

namespace testsupport {

using slotalloc::Instance;

struct ToyMdp {
    std::vector<std::vector<int>> states;
    std::map<std::vector<int>, int> index;
    // Per state: list of (action cells, contribution, successor distribution).
    struct Choice {
        std::vector<int> action;
        double reward;
        std::vector<std::pair<int, double>> next;
    };
    std::vector<std::vector<Choice>> choices;
    double gamma;
};

inline void oracle_clamp(const Instance& inst, const std::vector<int>& caps, bool cell_caps, std::vector<int>& s) {
    std::size_t off = 0;
    for (std::size_t j = 0; j < inst.queue_count(); ++j) {
        const int cells = inst.queue(j).wait_cap + 1;
        if (cell_caps) {
            for (int w = 0; w < cells; ++w) s[off + w] = std::min(s[off + w], caps[j]);
        } else {
            int total = 0;
            for (int w = 0; w < cells; ++w) total += s[off + w];
            for (int w = 0; w < cells && total > caps[j]; ++w) {
                const int cut = std::min(total - caps[j], s[off + w]);
                s[off + w] -= cut;
                total -= cut;
            }
        }
        off += cells;
    }
}

inline ToyMdp build_toy_mdp(const Instance& inst, const std::vector<int>& caps, bool cell_caps, double gamma) {
    ToyMdp m;
    m.gamma = gamma;
    const std::size_t n = inst.queue_count();
    std::vector<int> cell_queue, cell_wait;
    for (std::size_t j = 0; j < n; ++j)
        for (int w = 0; w <= inst.queue(j).wait_cap; ++w) {
            cell_queue.push_back(static_cast<int>(j));
            cell_wait.push_back(w);
        }
    const std::size_t C = cell_queue.size();

    // States: every vector respecting the caps.
    std::vector<int> cur(C, 0);
    std::function<void(std::size_t)> gen = [&](std::size_t c) {
        if (c == C) {
            std::vector<int> check = cur;
            oracle_clamp(inst, caps, cell_caps, check);
            if (check == cur) {
                m.index[cur] = static_cast<int>(m.states.size());
                m.states.push_back(cur);
            }
            return;
        }
        for (int v = 0; v <= caps[cell_queue[c]]; ++v) {
            cur[c] = v;
            gen(c + 1);
        }
        cur[c] = 0;
    };
    gen(0);

    std::vector<int> arrivals(n);
    for (std::size_t j = 0; j < n; ++j) arrivals[j] = static_cast<int>(std::floor(inst.arrival_rate(j) + 0.5));

    for (const auto& s : m.states) {
        std::vector<ToyMdp::Choice> list;
        std::vector<int> a(C, 0);
        std::function<void(std::size_t)> acts = [&](std::size_t c) {
            if (c == C) {
                for (std::size_t r = 0; r < inst.resource_count(); ++r) {
                    int use = 0;
                    for (std::size_t k = 0; k < C; ++k) use += a[k] * inst.demand(cell_queue[k], r);
                    if (use > inst.capacity(r)) return;
                }
                ToyMdp::Choice ch;
                ch.action = a;
                ch.reward = 0.0;
                for (std::size_t k = 0; k < C; ++k) {
                    const auto& q = inst.queue(cell_queue[k]);
                    double cost = 0.0;
                    if (cell_wait[k] >= q.access_target) {
                        const double denom = inst.cost_rule() == slotalloc::CostRule::PerTarget ? q.access_target
                                                                                                 : q.access_target + 1;
                        cost = q.weight * cell_wait[k] / denom;
                    }
                    ch.reward += q.reward * a[k] - cost * (s[k] - a[k]);
                }
                // Deterministic part of the next state.
                std::vector<int> base(C, 0);
                std::size_t off = 0;
                std::vector<int> treated(n, 0);
                for (std::size_t j = 0; j < n; ++j) {
                    const int W = inst.queue(j).wait_cap;
                    base[off] = arrivals[j];
                    for (int w = 1; w < W; ++w) base[off + w] = s[off + w - 1] - a[off + w - 1];
                    base[off + W] = s[off + W - 1] - a[off + W - 1] + s[off + W] - a[off + W];
                    for (int w = 0; w <= W; ++w) treated[j] += a[off + w];
                    off += W + 1;
                }
                std::vector<int> patients;
                for (std::size_t j = 0; j < n; ++j)
                    for (int k = 0; k < treated[j]; ++k) patients.push_back(static_cast<int>(j));
                std::map<int, double> dist;
                std::vector<int> next = base;
                std::function<void(std::size_t, double)> route = [&](std::size_t p, double prob) {
                    if (prob == 0.0) return;
                    if (p == patients.size()) {
                        std::vector<int> t = next;
                        oracle_clamp(inst, caps, cell_caps, t);
                        dist[m.index.at(t)] += prob;
                        return;
                    }
                    const int from = patients[p];
                    double exit_mass = 1.0;
                    std::size_t off2 = 0;
                    for (std::size_t j = 0; j < n; ++j) {
                        const double q = inst.transition(from, j);
                        exit_mass -= q;
                        if (q > 0.0) {
                            ++next[off2];
                            route(p + 1, prob * q);
                            --next[off2];
                        }
                        off2 += inst.queue(j).wait_cap + 1;
                    }
                    if (exit_mass > 1e-15) route(p + 1, prob * exit_mass);
                };
                route(0, 1.0);
                for (const auto& [idx, p] : dist) ch.next.emplace_back(idx, p);
                list.push_back(std::move(ch));
                return;
            }
            for (int v = 0; v <= s[c]; ++v) {
                a[c] = v;
                acts(c + 1);
            }
            a[c] = 0;
        };
        acts(0);
        m.choices.push_back(std::move(list));
    }
    return m;
}

/// Exact value of a stationary policy given as one choice index per state.
inline Eigen::VectorXd evaluate_policy(const ToyMdp& m, const std::vector<int>& pick) {
    const int S = static_cast<int>(m.states.size());
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd b(S);
    for (int s = 0; s < S; ++s) {
        const auto& ch = m.choices[s][pick[s]];
        b(s) = ch.reward;
        for (const auto& [t, p] : ch.next) A(s, t) -= m.gamma * p;
    }
    return A.fullPivLu().solve(b);
}

struct BruteForceResult {
    Eigen::VectorXd best_values;
    std::size_t policies = 0;
};

/// Pointwise maximum of V^pi over every stationary deterministic policy.
inline BruteForceResult enumerate_policies(const ToyMdp& m, std::size_t limit = 5'000'000) {
    const int S = static_cast<int>(m.states.size());
    double count = 1.0;
    for (const auto& c : m.choices) count *= static_cast<double>(c.size());
    if (count > static_cast<double>(limit)) throw std::runtime_error("too many policies for brute force");
    BruteForceResult r;
    r.best_values = Eigen::VectorXd::Constant(S, -1e300);
    std::vector<int> pick(S, 0);
    while (true) {
        const Eigen::VectorXd v = evaluate_policy(m, pick);
        r.best_values = r.best_values.cwiseMax(v);
        ++r.policies;
        int s = 0;
        while (s < S && ++pick[s] == static_cast<int>(m.choices[s].size())) pick[s++] = 0;
        if (s == S) break;
    }
    return r;
}

} // namespace testsupport
