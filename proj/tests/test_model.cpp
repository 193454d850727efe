#include "support.hpp"

#include "slotalloc/instances.hpp"
#include "slotalloc/model.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace slotalloc;
using testsupport::random_state;

namespace {

State one_patient(const Instance& inst, const std::string& q, int w, int count = 1) {
    State s = inst.make_state();
    s(inst.queue_index(q), w) = count;
    return s;
}

} // namespace

TEST_CASE("contribution on hand-computed cases") {
    const Instance small = build_small();
    CHECK(contribution(small, small.make_state(), small.make_action()) == 0.0);

    const State s = one_patient(small, "OR_0", 1);
    Action treat = small.make_action();
    treat(small.queue_index("OR_0"), 1) = 1;
    CHECK(contribution(small, s, treat) == doctest::Approx(4.0));
    CHECK(contribution(small, s, small.make_action()) == doctest::Approx(-4.0));

    const Instance large = build_large();
    CHECK_THROWS_AS(contribution(small, large.make_state(), small.make_action()), StructuralError);
}

TEST_CASE("contribution is additive over queue partitions") {
    const Instance large = build_large();
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const State s = random_state(large, rng, 4);
        const Action a = testsupport::random_feasible_action(large, s, rng);
        double parts = 0.0;
        for (std::size_t j = 0; j < large.queue_count(); ++j) {
            State sj = large.make_state();
            Action aj = large.make_action();
            for (int w = 0; w <= large.queue(j).wait_cap; ++w) {
                sj(j, w) = s(j, w);
                aj(j, w) = a(j, w);
            }
            parts += contribution(large, sj, aj);
        }
        CHECK(parts == doctest::Approx(contribution(large, s, a)).epsilon(1e-12));
    }
}

TEST_CASE("waiting cost rules") {
    const Instance large = build_large();
    CHECK(waiting_cost(large, "FA_2", 1) == 0.0);
    CHECK(waiting_cost(large, "FA_2", 3) == doctest::Approx(2.0));
    const Instance smk = build_smk();
    CHECK(waiting_cost(smk, "OR_1", 2) == doctest::Approx(20.0));
    CHECK(waiting_cost(smk, "FA_2", 1) == 0.0);
    CHECK_THROWS_AS(waiting_cost(large, "FA_2", 7), StructuralError);
    CHECK_THROWS_AS(waiting_cost(large, "FA_2", -1), StructuralError);
}

TEST_CASE("feasibility checks capacity and availability") {
    const Instance small = build_small();
    const State five = one_patient(small, "FU_1", 0, 5);
    CHECK(is_feasible(small, five, small.make_action()));
    Action a = small.make_action();
    a(small.queue_index("FU_1"), 0) = 5;
    CHECK_FALSE(is_feasible(small, five, a));
    a(small.queue_index("FU_1"), 0) = 4;
    CHECK(is_feasible(small, five, a));

    const State two = one_patient(small, "OR_0", 0, 2);
    Action b = small.make_action();
    b(small.queue_index("OR_0"), 0) = 2;
    CHECK(is_feasible(small, two, b));
    b(small.queue_index("OR_0"), 0) = 3;
    CHECK_FALSE(is_feasible(small, two, b));
}

TEST_CASE("zero action is always feasible") {
    std::mt19937_64 rng(3);
    for (const Instance& inst : {build_small(), build_large(), build_smk()})
        for (int k = 0; k < 100; ++k) CHECK(is_feasible(inst, random_state(inst, rng, 20), inst.make_action()));
}

TEST_CASE("next_state recursion cases") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    const TransitionRealization none(small.queue_count());

    std::vector<int> arrivals{3, 0, 0};
    State s1 = next_state(small, small.make_state(), small.make_action(), none, arrivals);
    CHECK(s1(fu, 0) == 3);
    CHECK(s1.total() == 3);

    std::vector<int> zero(3, 0);
    State s2 = next_state(small, one_patient(small, "FU_1", 0), small.make_action(), none, zero);
    CHECK(s2(fu, 1) == 1);
    CHECK(s2.total() == 1);

    State s3 = next_state(small, one_patient(small, "FU_1", 2), small.make_action(), none, zero);
    CHECK(s3(fu, 2) == 1);
    State s4 = next_state(small, one_patient(small, "FU_1", 1), small.make_action(), none, zero);
    CHECK(s4(fu, 2) == 1);

    // Routed patients land in row w=0 of their destination.
    Action a = small.make_action();
    a(fu, 1) = 1;
    TransitionRealization x(small.queue_count());
    x(fu, small.queue_index("OR_1")) = 1;
    State s5 = next_state(small, one_patient(small, "FU_1", 1), a, x, zero);
    CHECK(s5(small.queue_index("OR_1"), 0) == 1);
    CHECK(s5.total() == 1);
}

TEST_CASE("next_state rejects inconsistent input") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    std::vector<int> zero(3, 0);
    Action a = small.make_action();
    a(fu, 0) = 1;
    TransitionRealization x(3);
    x(fu, x.exit_column()) = 1;
    CHECK_THROWS_AS(next_state(small, small.make_state(), a, x, zero), StructuralError);
    TransitionRealization wrong(3);
    CHECK_THROWS_AS(next_state(small, one_patient(small, "FU_1", 0), a, wrong, zero), StructuralError);
    // FU_1 -> FU_1 has probability zero in the small instance.
    TransitionRealization impossible(3);
    impossible(fu, fu) = 1;
    CHECK_THROWS_AS(next_state(small, one_patient(small, "FU_1", 0), a, impossible, zero), StructuralError);
}

TEST_CASE("next_state conserves patients and stays non-negative") {
    std::mt19937_64 rng(11);
    for (const Instance& inst : {build_small(), build_large(), build_smk()}) {
        for (int k = 0; k < 200; ++k) {
            const State s = random_state(inst, rng, 6);
            const Action a = testsupport::random_feasible_action(inst, s, rng);
            const TransitionRealization x = testsupport::sample_routing(inst, a, rng);
            std::vector<int> arr(inst.queue_count());
            for (int& v : arr) v = std::uniform_int_distribution<int>(0, 5)(rng);
            const State t = next_state(inst, s, a, x, arr);
            int arrivals = 0;
            for (int v : arr) arrivals += v;
            CHECK(t.total() == arrivals + s.total() - x.total_exits());
            for (int v : t.cells()) CHECK(v >= 0);
        }
    }
}

TEST_CASE("expected_next_state closed form") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    const State s = one_patient(small, "FU_1", 1, 2);
    const FractionalState e0 = expected_next_state(small, s, small.make_action());
    CHECK(e0(fu, 0) == doctest::Approx(3.0));
    CHECK(e0(fu, 2) == doctest::Approx(2.0));

    Action a = small.make_action();
    a(fu, 1) = 1;
    const FractionalState e1 = expected_next_state(small, s, a);
    CHECK(e1(small.queue_index("OR_0"), 0) == doctest::Approx(0.3));
    CHECK(e1(small.queue_index("OR_1"), 0) == doctest::Approx(0.2));
    CHECK(e1(fu, 2) == doctest::Approx(1.0));

    Action bad = small.make_action();
    bad(fu, 0) = 1;
    CHECK_THROWS_AS(expected_next_state(small, s, bad), StructuralError);
}

TEST_CASE("expected_next_state matches Monte-Carlo mean within 3 standard errors") {
    const Instance large = build_large();
    std::mt19937_64 rng(2024);
    const State s = random_state(large, rng, 3);
    const Action a = testsupport::random_feasible_action(large, s, rng);
    const FractionalState expect = expected_next_state(large, s, a);
    const std::vector<int> arr = rounded_arrivals(large);
    const int N = 100000;
    std::vector<double> sum(s.size(), 0.0), sq(s.size(), 0.0);
    for (int k = 0; k < N; ++k) {
        const State t = next_state(large, s, a, testsupport::sample_routing(large, a, rng), arr);
        for (std::size_t c = 0; c < t.size(); ++c) {
            sum[c] += t[c];
            sq[c] += double(t[c]) * t[c];
        }
    }
    for (std::size_t c = 0; c < s.size(); ++c) {
        const double mean = sum[c] / N;
        const double var = std::max(0.0, sq[c] / N - mean * mean);
        const double se = std::sqrt(var / N);
        CHECK(std::abs(mean - expect[c]) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("expected_next_state lies between realized extremes") {
    // Enumerate all per-queue routings exhaustively on the small instance.
    const Instance small = build_small();
    std::mt19937_64 rng(5);
    const std::vector<int> arr = rounded_arrivals(small);
    for (int trial = 0; trial < 20; ++trial) {
        const State s = random_state(small, rng, 2);
        const Action a = testsupport::random_feasible_action(small, s, rng);
        const FractionalState e = expected_next_state(small, s, a);
        std::vector<double> lo(s.size(), 1e9), hi(s.size(), -1e9);
        const std::size_t n = small.queue_count();
        TransitionRealization x(n);
        std::function<void(std::size_t)> rec = [&](std::size_t i) {
            if (i == n) {
                const State t = next_state(small, s, a, x, arr);
                for (std::size_t c = 0; c < t.size(); ++c) {
                    lo[c] = std::min<double>(lo[c], t[c]);
                    hi[c] = std::max<double>(hi[c], t[c]);
                }
                return;
            }
            std::vector<std::size_t> dests;
            for (std::size_t j = 0; j < n; ++j)
                if (small.transition(i, j) > 0) dests.push_back(j);
            dests.push_back(n);
            std::function<void(std::size_t, int)> split = [&](std::size_t d, int left) {
                if (d + 1 == dests.size()) {
                    x(i, dests[d]) = left;
                    rec(i + 1);
                    x(i, dests[d]) = 0;
                    return;
                }
                for (int v = 0; v <= left; ++v) {
                    x(i, dests[d]) = v;
                    split(d + 1, left - v);
                }
                x(i, dests[d]) = 0;
            };
            split(0, a.queue_total(i));
        };
        rec(0);
        for (std::size_t c = 0; c < s.size(); ++c) {
            CHECK(e[c] >= lo[c] - 1e-9);
            CHECK(e[c] <= hi[c] + 1e-9);
        }
    }
}

TEST_CASE("action enumeration") {
    const Instance small = build_small();
    CHECK(enumerate_actions(small, small.make_state()).size() == 1);
    CHECK(enumerate_actions(small, one_patient(small, "FU_1", 0)).size() == 2);

    // Capacity never binds: count is the product of (s_c + 1).
    State rect = small.make_state();
    rect(0, 0) = 1;
    rect(0, 2) = 2;
    rect(1, 1) = 1;
    rect(2, 0) = 1;
    CHECK(enumerate_actions(small, rect).size() == 2 * 3 * 2 * 2);

    // Compare with a filtered full box on random states.
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const State s = random_state(small, rng, 3);
        const auto acts = enumerate_actions(small, s);
        std::set<std::vector<int>> seen;
        for (const auto& a : acts) {
            CHECK(is_feasible(small, s, a));
            seen.insert(a.cells());
        }
        CHECK(seen.size() == acts.size());
        std::size_t expected = 0;
        Action a = small.make_action();
        std::function<void(std::size_t)> box = [&](std::size_t c) {
            if (c == s.size()) {
                expected += is_feasible(small, s, a) ? 1 : 0;
                return;
            }
            for (int v = 0; v <= s[c]; ++v) {
                a[c] = v;
                box(c + 1);
            }
            a[c] = 0;
        };
        box(0);
        CHECK(acts.size() == expected);
        for (std::size_t k = 1; k < acts.size(); ++k) CHECK(preferred_action(small, acts[k - 1], acts[k]));
    }
}

TEST_CASE("action enumeration guard") {
    const Instance small = build_small();
    State s = small.make_state();
    for (std::size_t c = 0; c < s.size(); ++c) s[c] = 3;
    CHECK_THROWS_AS(enumerate_actions(small, s, 10), ResourceLimitError);
}

TEST_CASE("per-period capacity override") {
    InstanceData d = build_small().data();
    d.capacity_overrides[2] = {1, 2};
    const Instance inst(d);
    CHECK(inst.capacity(0, 0) == 4);
    CHECK(inst.capacity(0, 2) == 1);
    State s = inst.make_state();
    s(0, 0) = 2;
    Action a = inst.make_action();
    a(0, 0) = 2;
    CHECK(is_feasible(inst, s, a, 0));
    CHECK_FALSE(is_feasible(inst, s, a, 2));
}
