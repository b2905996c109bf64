#include <catch2/catch_amalgamated.hpp>

#include "levysbtm/catalog.hpp"
#include "levysbtm/mcref.hpp"
#include "oracle_utils.hpp"

using namespace levysbtm;

TEST_CASE("em_step with no noise, drift or jumps is the identity") {
    SdeModel m;
    m.dim = 1;
    m.brownian_dim = 1;
    m.drift = [](const Vec&, double) { return Vec{0.0}; };
    m.diffusion = [](const Vec&, double) { return Vec{0.0}; };
    m.jump_small = [](const Vec&, double) { return Vec{0.0}; };
    m.jump_large = m.jump_small;
    m = finalize_model(std::move(m));
    auto q = build_quadrature(m.levy_measure, 2, 2);
    ParticleEnsemble ens;
    ens.n = 3;
    ens.d = 1;
    ens.positions = {0.5, -1.0, 2.0};
    auto out = em_step(ens, m, q, 0.01, 1, 0);
    CHECK(out.positions == ens.positions);
}

TEST_CASE("trajectories are reproducible for a fixed seed") {
    ExperimentConfig cfg;
    cfg.example = "ex1";
    cfg.n_particles = 50;
    cfg.dt = 0.01;
    cfg.t_final = 0.1;
    cfg.n_r = 8;
    cfg.n_lambda = 4;
    cfg.seed = 4242;
    auto a = em_run(cfg);
    auto b = em_run(cfg);
    REQUIRE(a.checkpoints.size() == b.checkpoints.size());
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
        CHECK(a.checkpoints[i].positions == b.checkpoints[i].positions);
    cfg.seed = 4243;
    auto c = em_run(cfg);
    CHECK(a.checkpoints.back().positions != c.checkpoints.back().positions);
}

TEST_CASE("stable sampler moments and tails") {
    SECTION("alpha out of range") {
        RngStream rng(1, 1);
        CHECK_THROWS_AS(sample_stable(2.5, 1.0, rng), ConfigError);
        CHECK_THROWS_AS(sample_stable(0.0, 1.0, rng), ConfigError);
    }
    SECTION("alpha = 2 has variance 2 (S_2(1,0,0) = N(0,2))") {
        RngStream rng(2024, 7);
        const int n = 100000;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            double x = sample_stable(2.0, 1.0, rng);
            sum += x;
            sumsq += x * x;
        }
        double var = sumsq / n - sqr(sum / n);
        CHECK(std::fabs(var - 2.0) <= 0.05 * 2.0);
    }
    SECTION("alpha = 1.5 is symmetric: empirical median near zero") {
        RngStream rng(11, 3);
        const int n = 100000;
        Vec xs(n);
        for (double& x : xs) x = sample_stable(1.5, 1.0, rng);
        std::nth_element(xs.begin(), xs.begin() + n / 2, xs.end());
        CHECK(std::fabs(xs[n / 2]) <= 0.02);
    }
    SECTION("alpha = 1.5 tail matches the stable asymptotic") {
        RngStream rng(5, 9);
        const int n = 1000000;
        int hits = 0;
        for (int i = 0; i < n; ++i) hits += std::fabs(sample_stable(1.5, 1.0, rng)) > 10.0;
        double p_emp = static_cast<double>(hits) / n;
        double p_asym = 2.0 * alpha_stable_constant(1.5) / 1.5 * std::pow(10.0, -1.5);
        CHECK(p_emp <= 1.5 * p_asym);
        CHECK(p_emp >= p_asym / 1.5);
    }
}

TEST_CASE("OU moments match the analytic solution within 3 standard errors") {
    ExperimentConfig cfg;
    cfg.example = "ou";
    cfg.n_particles = 10000;
    cfg.dt = 0.002;
    cfg.t_final = 0.5;
    cfg.seed = 31;
    cfg.mu0_mean = {2.0};
    cfg.mu0_std = {0.5};
    auto rec = em_run(cfg);
    const Vec& x = rec.checkpoints.back().positions;
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= x.size();
    double var = 0.0;
    for (double v : x) var += sqr(v - mean);
    var /= x.size() - 1;

    double decay = std::exp(-0.5);
    double m_exact = 2.0 * decay;
    double v_exact = 1.0 + (0.25 - 1.0) * decay * decay;
    double se_mean = std::sqrt(v_exact / x.size());
    double se_var = v_exact * std::sqrt(2.0 / (x.size() - 1));
    CHECK(std::fabs(mean - m_exact) <= 3.0 * se_mean);
    CHECK(std::fabs(var - v_exact) <= 3.0 * se_var + 2.0 * cfg.dt);  // EM variance bias is O(dt)
}

TEST_CASE("ex1 terminal mean follows the jump-augmented moment ODE") {
    ExperimentConfig cfg;
    cfg.example = "ex1";
    cfg.n_particles = 30000;
    cfg.dt = 0.001;
    cfg.t_final = 0.5;
    cfg.seed = 97;
    cfg.n_r = 16;
    cfg.n_lambda = 4;
    auto rec = em_run(cfg);
    const Vec& x = rec.checkpoints.back().positions;
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= x.size();
    for (double v : x) var += sqr(v - mean);
    var /= x.size() - 1;

    // dE/dt = kappa (eta - E) + Lambda m, E(0) = 0
    double kappa = 1.0, eta = 1.0, lam_m = 30.0 * 0.1;
    double e_exact = (eta + lam_m / kappa) * (1.0 - std::exp(-kappa * 0.5));
    double se = std::sqrt(var / x.size());
    CHECK(std::fabs(mean - e_exact) <= 3.0 * se + 5.0 * cfg.dt);
}

TEST_CASE("splitting a step keeps the jump count Poisson") {
    // one-sample chi-square of n1 + n2 (two half-steps) against Poisson(3)
    RngStream rng(123, 5);
    const int trials = 100000;
    const double lam = 3.0;
    const int kmax = 12;
    std::vector<int> counts(kmax + 1, 0);
    for (int t = 0; t < trials; ++t) {
        int n = rng.poisson(lam / 2.0) + rng.poisson(lam / 2.0);
        counts[std::min(n, kmax)]++;
    }
    Vec expect(kmax + 1, 0.0);
    double pk = std::exp(-lam), cum = 0.0;
    for (int k = 0; k < kmax; ++k) {
        expect[k] = trials * pk;
        cum += pk;
        pk *= lam / (k + 1);
    }
    expect[kmax] = trials * (1.0 - cum);
    double chi2 = 0.0;
    for (int k = 0; k <= kmax; ++k) chi2 += sqr(counts[k] - expect[k]) / expect[k];
    // dof = 12, upper tail at p = 0.001 is 32.909
    CHECK(chi2 <= 32.909);
}

TEST_CASE("ex4 jump components match their laws") {
    ExperimentConfig cfg;
    cfg.example = "ex4";
    cfg.n_r = 8;
    cfg.n_lambda = 4;
    auto b = build_example(cfg);
    const auto& factors = b.model.levy_measure.factors;
    REQUIRE(factors.size() == 2);
    RngStream rng(2025, 1);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0, vsum = 0.0;
    for (int i = 0; i < n; ++i) {
        double js = factors[0].sampler(rng);
        double lj = std::log(js + 1.0);
        sum += lj;
        sumsq += lj * lj;
        vsum += factors[1].sampler(rng);
    }
    double mean = sum / n;
    double sd = std::sqrt(sumsq / n - mean * mean);
    CHECK(std::fabs(mean + 0.012) <= 3.0 * 0.043 / std::sqrt(n));
    CHECK(std::fabs(sd - 0.043) <= 3.0 * 0.043 / std::sqrt(2.0 * n));
    double vmean = vsum / n;
    CHECK(std::fabs(vmean - 0.002) <= 3.0 * 0.002 / std::sqrt(n));
}

TEST_CASE("ex4 em run stays finite over a short horizon") {
    ExperimentConfig cfg;
    cfg.example = "ex4";
    cfg.n_particles = 500;
    cfg.dt = 0.001;
    cfg.t_final = 0.05;
    cfg.n_r = 8;
    cfg.n_lambda = 4;
    cfg.seed = 6;
    auto rec = em_run(cfg);
    for (double v : rec.checkpoints.back().positions) REQUIRE(std::isfinite(v));
}

TEST_CASE("ex2 em run uses exact stable increments and stays finite") {
    ExperimentConfig cfg;
    cfg.example = "ex2";
    cfg.n_particles = 2000;
    cfg.dt = 0.002;
    cfg.t_final = 0.1;
    cfg.n_r = 16;
    cfg.n_lambda = 4;
    cfg.seed = 8;
    auto rec = em_run(cfg);
    const Vec& x = rec.checkpoints.back().positions;
    for (double v : x) REQUIRE(std::isfinite(v));
    // heavy tails: some particle should wander well beyond the Gaussian range
    Vec sorted = x;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted[x.size() / 2] == Catch::Approx(0.1).margin(0.25));  // median barely moved
}
