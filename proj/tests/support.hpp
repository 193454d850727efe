#pragma once

// Test-side helpers and oracles. Nothing here calls into the library code
// under test beyond constructing instances and grids.

#include "slotalloc/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace testsupport {

using namespace slotalloc;

inline State random_state(const Instance& inst, std::mt19937_64& rng, int max_per_cell) {
    State s = inst.make_state();
    std::uniform_int_distribution<int> d(0, max_per_cell);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = d(rng);
    return s;
}

// Random feasible action built independently of the library's enumerator:
// walk cells in random order and treat a random number that still fits.
inline Action random_feasible_action(const Instance& inst, const State& s, std::mt19937_64& rng) {
    Action a = inst.make_action();
    std::vector<int> left(inst.resource_count());
    for (std::size_t r = 0; r < left.size(); ++r) left[r] = inst.capacity(r);
    std::vector<std::size_t> cells(s.size());
    for (std::size_t c = 0; c < cells.size(); ++c) cells[c] = c;
    std::shuffle(cells.begin(), cells.end(), rng);
    for (std::size_t c : cells) {
        const std::size_t j = inst.layout()->queue_of(c);
        int hi = s[c];
        for (std::size_t r = 0; r < left.size(); ++r)
            if (inst.demand(j, r) > 0) hi = std::min(hi, left[r] / inst.demand(j, r));
        const int v = std::uniform_int_distribution<int>(0, hi)(rng);
        a[c] = v;
        for (std::size_t r = 0; r < left.size(); ++r) left[r] -= v * inst.demand(j, r);
    }
    return a;
}

// Per-patient routing draw: each treated patient independently picks a
// destination with the instance's row probabilities (last index = exit).
inline TransitionRealization sample_routing(const Instance& inst, const Action& a, std::mt19937_64& rng) {
    const std::size_t n = inst.queue_count();
    TransitionRealization x(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w(n + 1);
        for (std::size_t j = 0; j < n; ++j) w[j] = inst.transition(i, j);
        w[n] = inst.exit_probability(i);
        std::discrete_distribution<std::size_t> d(w.begin(), w.end());
        const int treated = a.queue_total(i);
        for (int k = 0; k < treated; ++k) ++x(i, d(rng));
    }
    return x;
}

inline double binom(int n, int k) {
    return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

} // namespace testsupport
