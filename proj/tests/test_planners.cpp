#include "support.hpp"
#include "toy_instances.hpp"

#include "slotalloc/instances.hpp"
#include "slotalloc/planners.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>

using namespace slotalloc;

namespace {

double best_contribution(const Instance& inst, const State& s) {
    double best = -std::numeric_limits<double>::infinity();
    for_each_action(inst, s, [&](const Action& a) { best = std::max(best, contribution(inst, s, a)); });
    return best;
}

State sparse_state(const Instance& inst, std::mt19937_64& rng, int patients) {
    State s = inst.make_state();
    std::uniform_int_distribution<std::size_t> cell(0, s.size() - 1);
    for (int k = 0; k < patients; ++k) ++s[cell(rng)];
    return s;
}

// Expected dynamics written out for W = 1 queues: s'(j,0) = lambda_j + sum_i q_ij A_i,
// s'(j,1) = untreated at w = 0 plus untreated at w = 1.
std::vector<double> toy_next(const Instance& inst, const std::vector<double>& s, const std::vector<int>& a) {
    const std::size_t n = inst.queue_count();
    std::vector<double> out(2 * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        out[2 * j] = inst.arrival_rate(j);
        for (std::size_t i = 0; i < n; ++i) out[2 * j] += inst.transition(i, j) * (a[2 * i] + a[2 * i + 1]);
        out[2 * j + 1] = (s[2 * j] - a[2 * j]) + (s[2 * j + 1] - a[2 * j + 1]);
    }
    return out;
}

// Best discounted value over integer action sequences, each a_t <= floor(s_t) and within capacity.
double sequence_oracle(const Instance& inst, const std::vector<double>& s, int periods, double gamma) {
    if (periods == 0) return 0.0;
    const std::size_t C = s.size();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> a(C, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t c, int left) {
        if (c == C) {
            double v = 0.0;
            for (std::size_t k = 0; k < C; ++k)
                v += inst.cell_reward(k) * a[k] - inst.cell_cost(k) * (s[k] - a[k]);
            v += gamma * sequence_oracle(inst, toy_next(inst, s, a), periods - 1, gamma);
            best = std::max(best, v);
            return;
        }
        const int hi = std::min(left, static_cast<int>(std::floor(s[c] + 1e-9)));
        for (int k = 0; k <= hi; ++k) {
            a[c] = k;
            rec(c + 1, left - k);
        }
        a[c] = 0;
    };
    rec(0, inst.capacity(0));
    return best;
}

Instance split_instance() {
    InstanceData d;
    d.name = "split";
    d.resources = {{"R", 4}};
    d.queues = {{"A", 0, 1, 3.0, 0.0, {{"R", 1}}}, {"B", 0, 1, 1.0, 0.0, {{"R", 1}}}};
    d.arrivals = {0.0, 0.0};
    d.transitions.queue = {{0.0, 0.0}, {0.0, 0.0}};
    d.transitions.exit = {1.0, 1.0};
    return Instance(d);
}

} // namespace

TEST_CASE("one-period integral program maximizes the immediate contribution") {
    const Instance small = build_small();
    std::mt19937_64 rng(3);
    RollingLpConfig cfg;
    for (int k = 0; k < 40; ++k) {
        const State s = sparse_state(small, rng, 8);
        const RollingLpResult r = rolling_lp(small, s.cast<double>(), cfg);
        REQUIRE(is_feasible(small, s, r.action));
        const double best = best_contribution(small, s);
        CHECK(contribution(small, s, r.action) == doctest::Approx(best));
        CHECK(r.objective == doctest::Approx(best));
    }
}

TEST_CASE("multi-period actions are feasible, relaxed or integral") {
    const Instance large = build_large();
    std::mt19937_64 rng(5);
    for (int k = 0; k < 6; ++k) {
        const State s = testsupport::random_state(large, rng, 2);
        for (bool integral : {false, true}) {
            RollingLpConfig cfg;
            cfg.horizon = 3;
            cfg.integral = integral;
            const RollingLpResult r = rolling_lp(large, s.cast<double>(), cfg, k);
            CHECK(is_feasible(large, s, r.action, k));
            CHECK(r.variables >= 3 * s.size());
        }
    }
}

TEST_CASE("three-period integral plan matches brute force over action sequences") {
    const Instance toy = testsupport::toy_two_queue();
    std::mt19937_64 rng(7);
    for (int k = 0; k < 10; ++k) {
        const State s = testsupport::random_state(toy, rng, 2);
        std::vector<double> sv(s.size());
        for (std::size_t c = 0; c < s.size(); ++c) sv[c] = s[c];
        RollingLpConfig cfg;
        cfg.horizon = 3;
        cfg.gamma = 0.8;
        const RollingLpResult r = rolling_lp(toy, s.cast<double>(), cfg);
        CHECK(r.objective == doctest::Approx(sequence_oracle(toy, sv, 3, 0.8)).epsilon(1e-7));
    }
}

TEST_CASE("highest contribution rule fills by score") {
    const Instance small = build_small();
    std::mt19937_64 rng(11);
    for (int k = 0; k < 30; ++k) {
        const State s = testsupport::random_state(small, rng, 3);
        const Action a = rule_highest_contribution(small, s);
        REQUIRE(is_feasible(small, s, a));
        // Any untreated patient must not fit or must score no higher than every treated one.
        const auto usage = resource_usage(small, a);
        for (std::size_t c = 0; c < s.size(); ++c) {
            if (a[c] == s[c]) continue;
            const std::size_t j = small.layout()->queue_of(c);
            bool fits = true;
            for (std::size_t r = 0; r < usage.size(); ++r)
                fits = fits && usage[r] + small.demand(j, r) <= small.capacity(r);
            CHECK_FALSE(fits);
        }
    }
}

TEST_CASE("queue rules pick the costliest and the longest queue") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    const std::size_t or0 = small.queue_index("OR_0");
    const std::size_t or1 = small.queue_index("OR_1");
    State s = small.make_state();
    s(or0, 0) = 2;
    s(or1, 2) = 1;
    s(fu, 2) = 5;
    const Action lq = rule_longest_queue(small, s);
    CHECK(lq.queue_total(fu) == 4);
    CHECK(lq(fu, 2) == 4);
    // OR_0 is longer, then both hold one patient and the tie goes to queue order.
    REQUIRE(or0 < or1);
    CHECK(lq.queue_total(or0) == 2);
    CHECK(lq.queue_total(or1) == 0);

    // OR_0 patients at w = 0 cost nothing, so the single OR_1 patient goes first.
    REQUIRE(small.cost(or0, 0) == 0.0);
    REQUIRE(small.cost(or1, 2) > 0.0);
    const Action hc = rule_highest_cost_queue(small, s);
    CHECK(hc.queue_total(or1) == 1);
    CHECK(hc.queue_total(or0) == 1);
    CHECK(hc.queue_total(fu) == 4);
    CHECK(is_feasible(small, s, hc));
}

TEST_CASE("split cost divides slots by cost share") {
    const Instance inst = split_instance();
    State s = inst.make_state();
    s(0, 1) = 5;
    s(1, 1) = 5;
    REQUIRE(inst.cost(0, 1) == doctest::Approx(3 * inst.cost(1, 1)));
    const Action a = rule_split_cost(inst, s);
    CHECK(a.queue_total(0) == 3);
    CHECK(a.queue_total(1) == 1);
    CHECK(rule_split_cost(inst, inst.make_state()).total() == 0);
    const Instance both = testsupport::toy_one_queue(0.0);
    InstanceData d = both.data();
    d.resources.push_back({"S", 1});
    d.queues[0].demands["S"] = 1;
    CHECK_THROWS_AS(rule_split_cost(Instance(d), Instance(d).make_state()), StructuralError);
    std::mt19937_64 rng(13);
    const Instance large = build_large();
    for (int k = 0; k < 20; ++k) {
        const State r = testsupport::random_state(large, rng, 3);
        CHECK(is_feasible(large, r, rule_split_cost(large, r)));
    }
}

TEST_CASE("static allocation treats targets and fills OR") {
    const Instance smk = build_smk();
    const StaticAllocation alloc = smk_static_allocation(smk);
    const std::size_t fa = smk.queue_index("FA_2");
    State s = smk.make_state();
    s(fa, 0) = 20;
    s(fa, 1) = 20;
    const Action a = static_decide(smk, s, alloc);
    CHECK(a.queue_total(fa) == 30);
    CHECK(a(fa, 1) == 20);
    CHECK(is_feasible(smk, s, a));

    std::mt19937_64 rng(19);
    for (int k = 0; k < 20; ++k) {
        const State r = testsupport::random_state(smk, rng, 3);
        const Action b = static_decide(smk, r, alloc);
        REQUIRE(is_feasible(smk, r, b));
        for (std::size_t j = 0; j < smk.queue_count(); ++j)
            if (alloc.targets[j] > 0) CHECK(b.queue_total(j) == std::min(alloc.targets[j], r.queue_total(j)));
    }
    CHECK_THROWS_AS(StaticAllocation::from_ids(smk, {{"FA_2", 70}}, {}), SchemaError);
    CHECK(StaticPolicy(alloc).uses_prediction() == false);
}

TEST_CASE("hybrid with no fixed share is the rolling program") {
    const Instance large = build_large();
    StaticAllocation alloc;
    alloc.targets.assign(large.queue_count(), 0);
    alloc.targets[large.queue_index("FA_2")] = 8;
    std::mt19937_64 rng(23);
    RollingLpConfig lp_cfg;
    lp_cfg.horizon = 2;
    lp_cfg.integral = false;
    HybridConfig cfg;
    cfg.alpha = 0.0;
    for (int k = 0; k < 5; ++k) {
        const State s = testsupport::random_state(large, rng, 2);
        CHECK(hybrid_decide(large, s.cast<double>(), alloc, cfg, lp_cfg) ==
              rolling_lp(large, s.cast<double>(), lp_cfg).action);
    }
}

TEST_CASE("empty inputs give empty actions") {
    const Instance toy = testsupport::toy_two_queue();
    InstanceData d = toy.data();
    d.arrivals = {0.0, 0.0};
    const Instance quiet(d);
    RollingLpConfig cfg;
    cfg.horizon = 3;
    CHECK(rolling_lp(quiet, quiet.make_state().cast<double>(), cfg).action.total() == 0);
    const Instance small = build_small();
    const State empty = small.make_state();
    for (DecisionRule rule : {DecisionRule::HighestContribution, DecisionRule::HighestCostQueue,
                              DecisionRule::LongestQueue, DecisionRule::SplitCost})
        CHECK(RulePolicy(rule).decide(small, empty, 0).total() == 0);
    CHECK(static_decide(build_smk(), build_smk().make_state(), smk_static_allocation(build_smk())).total() == 0);
}

TEST_CASE("highest contribution takes the late OR_0 patient") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    const std::size_t or0 = small.queue_index("OR_0");
    REQUIRE(small.cost(or0, 1) + small.queue(or0).reward == doctest::Approx(8.0));
    REQUIRE(small.cost(fu, 0) + small.queue(fu).reward == doctest::Approx(1.0));
    State s = small.make_state();
    s(or0, 1) = 1;
    s(fu, 0) = 1;
    const Action a = rule_highest_contribution(small, s);
    CHECK(a(or0, 1) == 1);
    CHECK(a(fu, 0) == 1);
}

TEST_CASE("hybrid multi-period programs keep the minimum and never beat the plain program") {
    const Instance smk = build_smk();
    const StaticAllocation alloc = smk_static_allocation(smk);
    std::mt19937_64 rng(43);
    for (int horizon : {2, 3}) {
        RollingLpConfig lp_cfg;
        lp_cfg.horizon = horizon;
        lp_cfg.integral = false;
        const State s = testsupport::random_state(smk, rng, 4);
        const RollingLpResult plain = rolling_lp(smk, s.cast<double>(), lp_cfg);
        MinimumTreatment none{std::vector<int>(smk.queue_count(), 0), hybrid_big_m(smk)};
        CHECK(rolling_lp(smk, s.cast<double>(), lp_cfg, 0, &none).objective == doctest::Approx(plain.objective));
        MinimumTreatment full{hybrid_targets(alloc, 100.0), hybrid_big_m(smk)};
        const RollingLpResult hybrid = rolling_lp(smk, s.cast<double>(), lp_cfg, 0, &full);
        CHECK(hybrid.objective <= plain.objective + 1e-6);
        CHECK(hybrid.nodes >= 1u);
        REQUIRE(is_feasible(smk, s, hybrid.action));
        for (std::size_t j = 0; j < smk.queue_count(); ++j)
            CHECK(hybrid.action.queue_total(j) >= std::min(full.target[j], s.queue_total(j)));
    }
}

TEST_CASE("relaxed hybrid actions keep the first-period minimum on random states") {
    const Instance smk = build_smk();
    const StaticAllocation alloc = smk_static_allocation(smk);
    std::mt19937_64 rng(44);
    RollingLpConfig lp_cfg;
    lp_cfg.horizon = 3;
    lp_cfg.integral = false;
    for (int k = 0; k < 60; ++k) {
        const State s = testsupport::random_state(smk, rng, 1 + k % 12);
        const double alpha = k % 2 == 0 ? 50.0 : 100.0;
        MinimumTreatment m{hybrid_targets(alloc, alpha), hybrid_big_m(smk)};
        const Action a = rolling_lp(smk, s.cast<double>(), lp_cfg, 0, &m).action;
        REQUIRE(is_feasible(smk, s, a));
        for (std::size_t j = 0; j < smk.queue_count(); ++j)
            CHECK(a.queue_total(j) >= std::min(m.target[j], s.queue_total(j)));
    }
}

TEST_CASE("hybrid honours the minimum share and its short-queue escape") {
    const Instance smk = build_smk();
    const StaticAllocation alloc = smk_static_allocation(smk);
    const std::size_t fa = smk.queue_index("FA_2");
    const std::size_t fu3 = smk.queue_index("FU_3");
    HybridConfig cfg;
    cfg.alpha = 100.0;
    RollingLpConfig lp_cfg;
    lp_cfg.integral = false;
    CHECK(hybrid_targets(alloc, 50.0)[fa] == 15);
    CHECK(hybrid_targets(alloc, 50.0)[fu3] == 9);

    State s = smk.make_state();
    s(fa, 0) = 40;
    s(fu3, 0) = 5;
    const Action a = hybrid_decide(smk, s.cast<double>(), alloc, cfg, lp_cfg);
    CHECK(is_feasible(smk, s, a));
    CHECK(a.queue_total(fa) >= 30);
    CHECK(a.queue_total(fu3) == 5);

    std::mt19937_64 rng(29);
    for (int k = 0; k < 3; ++k) {
        const State r = testsupport::random_state(smk, rng, 2);
        const Action b = hybrid_decide(smk, r.cast<double>(), alloc, cfg, lp_cfg);
        REQUIRE(is_feasible(smk, r, b));
        for (std::size_t j = 0; j < smk.queue_count(); ++j)
            CHECK(b.queue_total(j) >= std::min(alloc.targets[j], r.queue_total(j)));
    }
    HybridConfig bad;
    bad.tau = 6;
    CHECK_THROWS_AS(bad.validate(), SchemaError);
}

TEST_CASE("prediction without lag is the state itself, one step is the expectation") {
    const Instance large = build_large();
    std::mt19937_64 rng(31);
    const State s = testsupport::random_state(large, rng, 3);
    CHECK(predict_state(large, s, {}) == s.cast<double>());
    const Action a = testsupport::random_feasible_action(large, s, rng);
    const FractionalState one = predict_state(large, s, {a});
    const FractionalState ref = expected_next_state(large, s, a);
    for (std::size_t c = 0; c < s.size(); ++c) CHECK(one[c] == doctest::Approx(ref[c]));
}

TEST_CASE("two-step prediction matches the Monte Carlo mean") {
    const Instance small = build_small();
    const std::size_t fu = small.queue_index("FU_1");
    const std::size_t or0 = small.queue_index("OR_0");
    State s = small.make_state();
    s(fu, 0) = 3;
    s(fu, 1) = 2;
    s(or0, 0) = 2;
    Action a0 = small.make_action();
    a0(fu, 1) = 2;
    a0(or0, 0) = 1;
    // After one period FU_1 holds at least 3 patients at w = 1 and OR_0 one at w = 1.
    Action a1 = small.make_action();
    a1(fu, 1) = 2;
    a1(or0, 1) = 1;
    const FractionalState pred = predict_state(small, s, {a0, a1});

    std::mt19937_64 rng(37);
    const int draws = 20'000;
    std::vector<double> sum(s.size(), 0.0), sq(s.size(), 0.0);
    const auto arrivals = rounded_arrivals(small);
    for (int k = 0; k < draws; ++k) {
        const State s1 = next_state(small, s, a0, testsupport::sample_routing(small, a0, rng), arrivals);
        REQUIRE(is_feasible(small, s1, a1));
        const State s2 = next_state(small, s1, a1, testsupport::sample_routing(small, a1, rng), arrivals);
        for (std::size_t c = 0; c < s.size(); ++c) {
            sum[c] += s2[c];
            sq[c] += double(s2[c]) * s2[c];
        }
    }
    for (std::size_t c = 0; c < s.size(); ++c) {
        const double mean = sum[c] / draws;
        const double se = std::sqrt(std::max(0.0, sq[c] / draws - mean * mean) / draws);
        CHECK(std::abs(mean - pred[c]) <= 3 * se + 1e-9);
    }
}
