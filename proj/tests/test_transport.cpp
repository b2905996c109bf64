#include <catch2/catch_amalgamated.hpp>

#include "levysbtm/catalog.hpp"
#include "levysbtm/transport.hpp"
#include "oracle_utils.hpp"

using namespace levysbtm;

namespace {

ParticleEnsemble make_ensemble(Vec positions, int d, double t = 0.0) {
    ParticleEnsemble ens;
    ens.d = d;
    ens.n = static_cast<int>(positions.size()) / d;
    ens.positions = std::move(positions);
    ens.time = t;
    return ens;
}

SdeModel still_model(int dim) {
    SdeModel m;
    m.dim = dim;
    m.brownian_dim = dim;
    m.drift = [dim](const Vec&, double) { return Vec(dim, 0.0); };
    m.diffusion = [dim](const Vec&, double) {
        Vec s(static_cast<std::size_t>(dim) * dim, 0.0);
        for (int i = 0; i < dim; ++i) s[i * dim + i] = 1.0;
        return s;
    };
    m.jump_small = [dim](const Vec&, double) { return Vec(dim, 0.0); };
    m.jump_large = m.jump_small;
    return finalize_model(std::move(m));
}

} // namespace

TEST_CASE("propagation closed forms") {
    SECTION("zero velocity leaves positions untouched") {
        SdeModel m = still_model(1);
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreNetwork net = make_network({1, 4, 1}, 3);
        for (auto& w : net.weights) std::fill(w.begin(), w.end(), 0.0);
        auto ens = make_ensemble({0.5, -1.0, 2.0}, 1);
        auto out = propagate_alg1(ens, net, m, q, 0.1);
        CHECK(out.positions == ens.positions);
        CHECK(out.time == Catch::Approx(0.1));
    }
    SECTION("dt = 0 is the identity") {
        auto b = build_example([] {
            ExperimentConfig c;
            c.example = "ex1";
            c.n_r = 8;
            c.n_lambda = 4;
            return c;
        }());
        ScoreNetwork net = make_network(default_layer_dims(1), 5);
        auto ens = make_ensemble({0.4, 1.2}, 1);
        auto out = propagate_alg1(ens, net, b.model, b.quad, 0.0);
        CHECK(out.positions == ens.positions);
        CHECK(out.time == ens.time);
    }
    SECTION("stationary OU with the exact score is a fixed point") {
        ExperimentConfig cfg;
        cfg.example = "ou";
        auto b = build_example(cfg);
        ScoreField field;
        field.closure = b.model.exact_score;
        auto ens = make_ensemble({-1.7, 0.0, 0.3, 2.4}, 1);
        auto out = propagate_alg1(ens, field, b.model, b.quad, 0.05);
        for (int i = 0; i < ens.n; ++i)
            CHECK(std::fabs(out.positions[i] - ens.positions[i]) <= 1e-12);
    }
}

TEST_CASE("algorithm-2 propagation") {
    SECTION("no kernel: identical to algorithm 1 with the same net") {
        auto b = build_example([] {
            ExperimentConfig c;
            c.example = "ex1";
            c.n_r = 8;
            c.n_lambda = 4;
            return c;
        }());
        ScoreNetwork net = make_network(default_layer_dims(1), 7);
        auto ens = make_ensemble({0.3, -0.8, 1.5}, 1);
        auto a1 = propagate_alg1(ens, net, b.model, b.quad, 0.01);
        auto a2 = propagate_alg2(ens, net, b.model, b.quad, 0.01);
        CHECK(a1.positions == a2.positions);
    }
    SECTION("two particles with a linear kernel preserve the center of mass") {
        SdeModel m = still_model(1);
        m.interaction = linear_kernel();
        m = finalize_model(std::move(m));
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreNetwork zero = make_network({1, 1}, 0);
        zero.weights[0] = {0.0};
        auto ens = make_ensemble({1.0, -0.25}, 1);
        auto out = propagate_alg2(ens, zero, m, q, 0.125);
        double v1 = (1.0 - (-0.25)) / 2.0;
        CHECK(out.positions[0] == Catch::Approx(1.0 + 0.125 * v1));
        CHECK(out.positions[1] == Catch::Approx(-0.25 - 0.125 * v1));
        CHECK(out.positions[0] + out.positions[1] == Catch::Approx(0.75).margin(1e-15));
    }
    SECTION("a single particle sees no interaction from a linear kernel") {
        SdeModel m = still_model(1);
        m.interaction = linear_kernel();
        m.drift = [](const Vec&, double) { return Vec{2.0}; };
        m = finalize_model(std::move(m));
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreNetwork zero = make_network({1, 1}, 0);
        zero.weights[0] = {0.0};
        auto ens = make_ensemble({0.5}, 1);
        auto out = propagate_alg2(ens, zero, m, q, 0.1);
        CHECK(out.positions[0] == Catch::Approx(0.5 + 0.1 * 2.0));
    }
}

TEST_CASE("log-density tracking") {
    SECTION("missing log-density is rejected") {
        SdeModel m = still_model(1);
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreField f;
        f.closure = [](const Vec& x, double) { return Vec(x.size(), 0.0); };
        auto ens = make_ensemble({0.0}, 1);
        CHECK_THROWS_AS(update_log_density(ens, f, m, q, 0.1), ConfigError);
    }
    SECTION("divergence-free rotation field leaves the density constant") {
        SdeModel m = still_model(2);
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreField f;
        f.closure = [](const Vec& x, double) { return Vec{-x[1], x[0]}; };
        auto ens = make_ensemble({0.7, -0.2, 1.1, 0.9}, 2);
        ens.log_density = {0.3, -0.4};
        auto out = update_log_density(ens, f, m, q, 0.05);
        CHECK(out.log_density[0] == Catch::Approx(0.3).margin(1e-9));
        CHECK(out.log_density[1] == Catch::Approx(-0.4).margin(1e-9));
    }
    SECTION("1-D contracting field raises log-density by dt") {
        SdeModel m = still_model(1);
        auto q = build_quadrature(m.levy_measure, 2, 2);
        ScoreField f;
        f.closure = [](const Vec& x, double) { return Vec{x[0]}; };  // f = -s = -x
        auto ens = make_ensemble({0.6}, 1);
        ens.log_density = {0.0};
        auto out = update_log_density(ens, f, m, q, 0.02);
        CHECK(out.log_density[0] == Catch::Approx(0.02).margin(1e-8));
    }
    SECTION("stationary OU flow keeps the density constant") {
        ExperimentConfig cfg;
        cfg.example = "ou";
        auto b = build_example(cfg);
        ScoreField f;
        f.closure = b.model.exact_score;
        auto ens = make_ensemble({-0.9, 0.4}, 1);
        ens.log_density = {std::log(b.mu0.density(Vec{-0.9})), std::log(b.mu0.density(Vec{0.4}))};
        auto out = update_log_density(ens, f, b.model, b.quad, 0.05);
        CHECK(out.log_density[0] == Catch::Approx(ens.log_density[0]).margin(1e-8));
        CHECK(out.log_density[1] == Catch::Approx(ens.log_density[1]).margin(1e-8));
    }
}

TEST_CASE("particle independence under algorithm 1") {
    auto b = build_example([] {
        ExperimentConfig c;
        c.example = "ex1";
        c.n_r = 8;
        c.n_lambda = 4;
        return c;
    }());
    ScoreNetwork net = make_network(default_layer_dims(1), 9);
    auto full = make_ensemble({0.1, -0.5, 1.3, 2.2, -1.8}, 1);
    auto sub = make_ensemble({0.1, -0.5, 1.3}, 1);
    auto full_out = propagate_alg1(full, net, b.model, b.quad, 0.01);
    auto sub_out = propagate_alg1(sub, net, b.model, b.quad, 0.01);
    for (int i = 0; i < 3; ++i) CHECK(full_out.positions[i] == sub_out.positions[i]);
}

TEST_CASE("two half steps equal one step up to second order") {
    auto b = build_example([] {
        ExperimentConfig c;
        c.example = "ex1";
        c.n_r = 12;
        c.n_lambda = 6;
        return c;
    }());
    ScoreNetwork net = make_network(default_layer_dims(1), 31);
    RngStream rng(31, 1);
    for (auto& bias : net.biases)
        for (double& v : bias) v = 0.3 * rng.normal();
    auto ens = make_ensemble({0.2, -1.1, 0.9}, 1);

    auto defect = [&](double dt) {
        auto one = propagate_alg1(ens, net, b.model, b.quad, dt);
        auto half = propagate_alg1(ens, net, b.model, b.quad, dt / 2.0);
        half = propagate_alg1(half, net, b.model, b.quad, dt / 2.0);
        double worst = 0.0;
        for (int i = 0; i < ens.n; ++i)
            worst = std::max(worst, std::fabs(one.positions[i] - half.positions[i]));
        return worst;
    };
    double d1 = defect(0.2), d2 = defect(0.1);
    REQUIRE(d2 > 0.0);
    double ratio = d1 / d2;
    CHECK(ratio >= 2.5);   // O(dt^2) defect: halving dt divides it by about 4
    CHECK(ratio <= 6.0);
    double c_est = d1 / (0.2 * 0.2);
    CHECK(defect(0.05) <= c_est * 0.05 * 0.05 * 2.0);
}

TEST_CASE("mean divergence vanishes on a uniform torus ensemble") {
    SdeModel m = still_model(1);
    m.domain = Domain::Torus;
    m.torus_half_width = 1.0;
    m.flow_div_nonscore = [](const Vec&, double, const Vec&) { return 0.0; };
    auto q = build_quadrature(m.levy_measure, 2, 2);
    const double amp = 0.8;
    ScoreField f;
    f.closure = [amp](const Vec& x, double) { return Vec{amp * std::sin(M_PI * x[0])}; };

    const int n = 20000;
    ParticleEnsemble ens;
    ens.n = n;
    ens.d = 1;
    ens.positions.resize(n);
    ens.log_density.assign(n, 0.0);
    for (int i = 0; i < n; ++i) {
        RngStream r(77, i);
        ens.positions[i] = r.uniform(-1.0, 1.0);
    }
    const double dt = 0.01;
    auto out = update_log_density(ens, f, m, q, dt);
    double mean_div = 0.0;
    for (int i = 0; i < n; ++i) mean_div += -(out.log_density[i] - ens.log_density[i]) / dt;
    mean_div /= n;
    double std_div = amp * M_PI / std::sqrt(2.0);  // std of the cosine field
    CHECK(std::fabs(mean_div) <= 4.0 * std_div / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("run_sbtm bookkeeping") {
    SECTION("zero steps returns only the initial ensemble") {
        ExperimentConfig cfg;
        cfg.example = "ou";
        cfg.n_particles = 20;
        cfg.dt = 0.01;
        cfg.t_final = 0.0;
        cfg.score_mode = ScoreMode::Exact;
        auto rec = run_sbtm(cfg);
        REQUIRE(rec.checkpoints.size() == 1);
        CHECK(rec.checkpoints[0].step == 0);
        CHECK(rec.checkpoints[0].positions.size() == 20);
    }
    SECTION("checkpoint cadence and alignment") {
        ExperimentConfig cfg;
        cfg.example = "ou";
        cfg.n_particles = 10;
        cfg.dt = 0.01;
        cfg.t_final = 0.2;
        cfg.checkpoint_every = 5;
        cfg.score_mode = ScoreMode::Exact;
        auto rec = run_sbtm(cfg);
        REQUIRE(rec.checkpoints.size() == 5);  // steps 0, 5, 10, 15, 20
        CHECK(rec.checkpoints[1].step == 5);
        CHECK(rec.checkpoints.back().step == 20);
        CHECK(rec.checkpoints.back().time == Catch::Approx(0.2));
    }
    SECTION("exact mode requires a model with the closure") {
        ExperimentConfig cfg;
        cfg.example = "ex1";
        cfg.n_particles = 4;
        cfg.dt = 0.01;
        cfg.t_final = 0.01;
        cfg.score_mode = ScoreMode::Exact;
        CHECK_THROWS_AS(run_sbtm(cfg), ConfigError);
    }
}
