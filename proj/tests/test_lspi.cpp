#include "support.hpp"
#include "toy_instances.hpp"

#include "slotalloc/exact.hpp"
#include "slotalloc/instances.hpp"
#include "slotalloc/lspi.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

using namespace slotalloc;
using testsupport::random_state;

namespace {

Eigen::VectorXd random_theta(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    Eigen::VectorXd t(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < t.size(); ++i) t(i) = u(rng);
    return t;
}

// Normal equations solved by Gaussian elimination in long double.
std::vector<long double> normal_equations(const std::vector<std::vector<long double>>& X,
                                          const std::vector<long double>& y) {
    const std::size_t F = X[0].size();
    std::vector<std::vector<long double>> M(F, std::vector<long double>(F + 1, 0.0L));
    for (std::size_t i = 0; i < X.size(); ++i)
        for (std::size_t a = 0; a < F; ++a) {
            for (std::size_t b = 0; b < F; ++b) M[a][b] += X[i][a] * X[i][b];
            M[a][F] += X[i][a] * y[i];
        }
    for (std::size_t c = 0; c < F; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < F; ++r)
            if (std::fabs(M[r][c]) > std::fabs(M[piv][c])) piv = r;
        std::swap(M[c], M[piv]);
        for (std::size_t r = 0; r < F; ++r) {
            if (r == c) continue;
            const long double f = M[r][c] / M[c][c];
            for (std::size_t k = c; k <= F; ++k) M[r][k] -= f * M[c][k];
        }
    }
    std::vector<long double> theta(F);
    for (std::size_t c = 0; c < F; ++c) theta[c] = M[c][F] / M[c][c];
    return theta;
}

std::vector<long double> features(const BasisFunction& phi, const State& s) {
    const Eigen::VectorXd f = phi.evaluate(s);
    return std::vector<long double>(f.data(), f.data() + f.size());
}

} // namespace

TEST_CASE("basis dimensions") {
    for (const Instance& inst : {build_small(), build_large(), build_smk()}) {
        const std::size_t n = inst.queue_count();
        CHECK(BasisFunction::parse(inst, "1").dimension() == inst.cell_count() + 1);
        CHECK(BasisFunction::parse(inst, "2").dimension() == 3 * n + 1);
        CHECK(BasisFunction::parse(inst, "phi3").dimension() == n + 1);
        CHECK(BasisFunction::parse(inst, "4", false).dimension() == n);
        CHECK(BasisFunction::parse(inst, "3+4").dimension() == 2 * n + 1);
    }
    const Instance small = build_small();
    CHECK(BasisFunction::parse(small, " Phi3 + 4 ").label() == "Phi3+4");
    CHECK_THROWS_AS(BasisFunction::parse(small, "5"), SchemaError);
    CHECK_THROWS_AS(BasisFunction::parse(small, ""), SchemaError);
}

TEST_CASE("basis features on a hand-built state") {
    const Instance small = build_small();
    State s = small.make_state();
    s(0, 0) = 2; // FU_1 early
    s(0, 2) = 3; // FU_1 late
    s(1, 1) = 1; // OR_0 late
    const Eigen::VectorXd f2 = BasisFunction::parse(small, "2", false).evaluate(s);
    CHECK(f2(0) == 2);
    CHECK(f2(1) == 0);
    CHECK(f2(2) == 3);
    CHECK(f2(3) == 0); // OR_0 cannot be early
    CHECK(f2(4) == 0);
    CHECK(f2(5) == 1);
    const Eigen::VectorXd f3 = BasisFunction::parse(small, "3").evaluate(s);
    CHECK(f3(0) == doctest::Approx(3 * small.cost(0, 2)));
    CHECK(f3(1) == doctest::Approx(small.cost(1, 1)));
    CHECK(f3(3) == 1.0);
    const Eigen::VectorXd f4 = BasisFunction::parse(small, "4", false).evaluate(s);
    CHECK(f4(0) == 5);
    CHECK(f4(1) == 1);
}

TEST_CASE("basis evaluation is linear apart from the constant") {
    const Instance large = build_large();
    std::mt19937_64 rng(3);
    for (const char* spec : {"1", "2", "3", "4", "3+4"}) {
        const BasisFunction phi = BasisFunction::parse(large, spec);
        const Eigen::VectorXd zero = phi.evaluate(large.make_state());
        for (int k = 0; k < 20; ++k) {
            const State a = random_state(large, rng, 4), b = random_state(large, rng, 4);
            FractionalState mix = large.make_fractional_state();
            for (std::size_t c = 0; c < mix.size(); ++c) mix[c] = 1.5 * a[c] - 0.25 * b[c];
            const Eigen::VectorXd lhs = phi.evaluate(mix) - zero;
            const Eigen::VectorXd rhs = 1.5 * (phi.evaluate(a) - zero) - 0.25 * (phi.evaluate(b) - zero);
            CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
        }
    }
}

TEST_CASE("sampled states") {
    const Instance large = build_large();
    std::mt19937_64 rng(5);
    const auto one = sample_states(large, 1, rng, {0, 0}, PathwayMode::SyntheticChain);
    REQUIRE(one.size() == 1u);
    CHECK(one[0].state == large.make_state());

    const auto many = sample_states(large, 10'000, rng, {50, 70}, PathwayMode::SyntheticChain);
    for (const auto& d : many) {
        REQUIRE(d.state == d.population.state());
        const int total = d.state.total();
        REQUIRE(total >= 50);
        REQUIRE(total <= 70);
        for (std::size_t c = 0; c < d.state.size(); ++c) REQUIRE(d.state[c] >= 0);
    }
    CHECK(many[17].id == 17u);
    const auto range = default_patient_range(build_small(), PathwayMode::SyntheticChain);
    CHECK(range.first == 3);
    CHECK(range.second == 8);
}

TEST_CASE("policy-LP with zero parameters maximizes the contribution") {
    for (const Instance& inst : {build_small(), build_large()}) {
        const BasisFunction phi = BasisFunction::parse(inst, "1");
        const Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(phi.dimension()));
        std::mt19937_64 rng(7);
        for (int k = 0; k < 40; ++k) {
            State s = inst.make_state();
            for (int p = 0; p < 7; ++p) ++s[rng() % s.size()];
            double best = -1e300;
            for_each_action(inst, s, [&](const Action& a) { best = std::max(best, contribution(inst, s, a)); });
            const PolicyLpResult r = policy_lp(inst, s.cast<double>(), theta, phi, 0.7, true);
            REQUIRE(is_feasible(inst, s, r.action));
            CHECK(contribution(inst, s, r.action) == doctest::Approx(best).epsilon(1e-12));
            CHECK(r.objective == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("policy-LP on the empty state") {
    const Instance smk = build_smk();
    const BasisFunction phi = BasisFunction::parse(smk, "1");
    std::mt19937_64 rng(9);
    const Eigen::VectorXd theta = random_theta(phi.dimension(), rng);
    const State zero = smk.make_state();
    const PolicyLpResult r = policy_lp(smk, zero.cast<double>(), theta, phi, 0.6, true);
    CHECK(r.action == smk.make_action());
    const FractionalState lambda_only = expected_next_state(smk, zero, smk.make_action());
    CHECK(r.objective == doctest::Approx(0.6 * theta.dot(phi.evaluate(lambda_only))));
}

TEST_CASE("relaxed policy-LP actions are rounded down to feasible actions") {
    const Instance large = build_large();
    const BasisFunction phi = BasisFunction::parse(large, "1");
    std::mt19937_64 rng(11);
    for (int k = 0; k < 1000; ++k) {
        const State s = random_state(large, rng, 3);
        const Eigen::VectorXd theta = random_theta(phi.dimension(), rng, 5.0);
        const Action a = policy_lp_action(large, s.cast<double>(), theta, phi, 0.75, false);
        REQUIRE(is_feasible(large, s, a));
    }
    // Fractional (predicted) input: feasible against the floored counts.
    FractionalState fs = large.make_fractional_state();
    for (std::size_t c = 0; c < fs.size(); ++c) fs[c] = 0.7 + 0.5 * static_cast<double>(c % 3);
    const Action a = policy_lp_action(large, fs, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(phi.dimension())),
                                      phi, 0.5, true);
    CHECK(is_feasible(large, fs.floored(), a));
}

TEST_CASE("the constant basis term never changes the policy-LP action") {
    const Instance large = build_large();
    const BasisFunction with = BasisFunction::parse(large, "1", true);
    const BasisFunction without = BasisFunction::parse(large, "1", false);
    std::mt19937_64 rng(13);
    for (int k = 0; k < 100; ++k) {
        const State s = random_state(large, rng, 3);
        const Eigen::VectorXd lin = random_theta(without.dimension(), rng, 3.0);
        Eigen::VectorXd full(lin.size() + 1);
        full << lin, 100.0 * (rng() % 7);
        for (bool integral : {false, true})
            CHECK(policy_lp_action(large, s.cast<double>(), full, with, 0.75, integral) ==
                  policy_lp_action(large, s.cast<double>(), lin, without, 0.75, integral));
    }
}

TEST_CASE("LSPI on a degenerate all-zero dataset") {
    const Instance toy = testsupport::toy_one_queue(0.3, 0.0);
    LspiConfig cfg;
    cfg.dataset_size = 25;
    cfg.patient_range = std::pair{0, 0};
    const BasisFunction phi = BasisFunction::parse(toy, "1");
    const ParamVector p = run_lspi(toy, cfg, phi);
    CHECK(p.converged);
    CHECK(p.iterations <= 2u);
    CHECK(p.theta.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("LSPI bookkeeping, determinism and order independence") {
    const Instance small = build_small();
    LspiConfig cfg;
    cfg.dataset_size = 300;
    cfg.seed = 99;
    cfg.max_iterations = 6;
    const BasisFunction phi = BasisFunction::parse(small, "1");
    auto rng = derive_rng(cfg.seed, {1});
    auto data = sample_states(small, cfg.dataset_size, rng, {3, 8}, PathwayMode::SyntheticChain);
    const ParamVector a = run_lspi(small, cfg, phi, data);
    REQUIRE(a.trace.size() == a.iterations);
    for (double t : a.trace) CHECK(std::isfinite(t));
    CHECK(a.theta.allFinite());
    CHECK(a.iterations >= 1u);
    CHECK(a.iterations <= cfg.max_iterations);

    const ParamVector again = run_lspi(small, cfg, phi, data);
    CHECK(again.theta == a.theta);

    std::shuffle(data.begin(), data.end(), rng);
    const ParamVector permuted = run_lspi(small, cfg, phi, data);
    REQUIRE(permuted.iterations == a.iterations);
    CHECK((permuted.theta - a.theta).cwiseAbs().maxCoeff() < 1e-8);

    LspiConfig bad = cfg;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(run_lspi(small, bad, phi, data), SchemaError);
}

TEST_CASE("LSPI reports non-convergence at the iteration limit") {
    const Instance small = build_small();
    LspiConfig cfg;
    cfg.dataset_size = 100;
    cfg.max_iterations = 1;
    cfg.delta = 1e-12;
    const ParamVector p = run_lspi(small, cfg, BasisFunction::parse(small, "1"));
    CHECK_FALSE(p.converged);
    CHECK(p.iterations == 1u);
}

TEST_CASE("parameter files round trip") {
    const Instance small = build_small();
    LspiConfig cfg;
    cfg.dataset_size = 50;
    const BasisFunction phi = BasisFunction::parse(small, "3+4");
    const ParamVector p = run_lspi(small, cfg, phi);
    const auto path = std::filesystem::temp_directory_path() / "slotalloc_params_test.json";
    save_params(path, p, phi, cfg);
    const LoadedParams back = load_params(path);
    std::filesystem::remove(path);
    CHECK(back.params.theta == p.theta);
    CHECK(back.params.iterations == p.iterations);
    CHECK(back.params.converged == p.converged);
    CHECK(back.basis == "Phi3+4");
    CHECK(back.gamma == cfg.gamma);
    const LspiPolicy pi(BasisFunction::parse(small, back.basis, back.includes_constant), back.params.theta, back.gamma);
    CHECK(pi.name() == "lspi");
    State s = small.make_state();
    s(0, 1) = 5;
    CHECK(is_feasible(small, s, pi.decide(small, s)));
}

TEST_CASE("regression recovers a realizable value function") {
    const Instance small = build_small();
    const BoundedStateSpace space(small, parse_caps(small, "3/1"));
    const BasisFunction phi = BasisFunction::parse(small, "3+4");
    std::mt19937_64 rng(17);
    const Eigen::VectorXd truth = random_theta(phi.dimension(), rng, 4.0);
    ValueTable t;
    for (std::size_t k = 0; k < space.size(); ++k) t.values.push_back(truth.dot(phi.evaluate(space.state(k))));
    std::vector<std::size_t> all(space.size());
    std::iota(all.begin(), all.end(), 0);
    const RegressionFit fit = fit_theta_regression(space, t, phi, all);
    CHECK(fit.mse < 1e-8);
    CHECK((fit.theta - truth).cwiseAbs().maxCoeff() < 1e-8);

    CHECK_THROWS_AS(fit_theta_regression(space, t, BasisFunction::parse(small, "4+4"), all), RankDeficientError);
}

TEST_CASE("regression matches extended-precision normal equations") {
    const Instance small = build_small();
    const BoundedStateSpace space(small, parse_caps(small, "3/1"));
    const ValueTable t = value_iteration(space, 0.9, 0.1);
    const BasisFunction phi = BasisFunction::parse(small, "1");
    std::vector<std::size_t> sample(space.size());
    std::iota(sample.begin(), sample.end(), 0);
    std::mt19937_64 rng(19);
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(100);

    std::vector<std::vector<long double>> X;
    std::vector<long double> y;
    for (std::size_t k : sample) {
        X.push_back(features(phi, space.state(k)));
        y.push_back(t.values[k]);
    }
    const auto oracle = normal_equations(X, y);
    const RegressionFit fit = fit_theta_regression(space, t, phi, sample);
    long double sse = 0.0L;
    for (std::size_t i = 0; i < X.size(); ++i) {
        long double pred = 0.0L;
        for (std::size_t f = 0; f < oracle.size(); ++f) pred += X[i][f] * oracle[f];
        sse += (y[i] - pred) * (y[i] - pred);
    }
    for (std::size_t f = 0; f < oracle.size(); ++f)
        CHECK(fit.theta(static_cast<Eigen::Index>(f)) == doctest::Approx(static_cast<double>(oracle[f])).epsilon(1e-7));
    CHECK(fit.mse == doctest::Approx(static_cast<double>(sse / X.size())).epsilon(1e-7));
}

TEST_CASE("leave-one-out selection matches a direct oracle") {
    const Instance toy = testsupport::toy_two_queue();
    const BoundedStateSpace space(toy, {2, 1});
    REQUIRE(space.size() == 18u);
    const ValueTable t = value_iteration(space, 0.9, 1e-6);
    const BasisFunction phi = BasisFunction::parse(toy, "4");

    double oracle = 0.0;
    for (std::size_t out = 0; out < space.size(); ++out) {
        std::vector<std::vector<long double>> X;
        std::vector<long double> y;
        for (std::size_t k = 0; k < space.size(); ++k)
            if (k != out) {
                X.push_back(features(phi, space.state(k)));
                y.push_back(t.values[k]);
            }
        const auto theta = normal_equations(X, y);
        const auto f = features(phi, space.state(out));
        long double pred = 0.0L;
        for (std::size_t i = 0; i < f.size(); ++i) pred += f[i] * theta[i];
        oracle += static_cast<double>((t.values[out] - pred) * (t.values[out] - pred));
    }
    oracle /= static_cast<double>(space.size());

    const auto scores = kfold_basis_selection(space, t, {phi, BasisFunction::parse(toy, "4+4")}, space.size(), 3);
    REQUIRE(scores.size() == 2u);
    CHECK(scores[0].basis == "Phi4");
    CHECK(scores[0].fittable);
    CHECK(scores[0].mean_mse == doctest::Approx(oracle).epsilon(1e-8));
    CHECK(scores[1].basis == "Phi4+4");
    CHECK_FALSE(scores[1].fittable);
    CHECK_THROWS_AS(kfold_basis_selection(space, t, {phi}, 1, 3), StructuralError);
}
