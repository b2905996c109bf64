#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/model.hpp"
#include "levysbtm/quad.hpp"
#include "levysbtm/rng.hpp"

namespace levysbtm {

// Diagonal-covariance Gaussian initial condition.
struct DiagGaussian {
    Vec mean;
    Vec std;

    int dim() const { return static_cast<int>(mean.size()); }

    double density(const Vec& x) const {
        double logp = 0.0;
        for (std::size_t i = 0; i < mean.size(); ++i) {
            double z = (x[i] - mean[i]) / std[i];
            logp += -0.5 * z * z - std::log(std[i] * 2.5066282746310005024);
        }
        return std::exp(logp);
    }

    Vec grad_log(const Vec& x) const {
        Vec g(mean.size());
        for (std::size_t i = 0; i < mean.size(); ++i)
            g[i] = -(x[i] - mean[i]) / (std[i] * std[i]);
        return g;
    }

    Vec sample(RngStream& rng) const {
        Vec x(mean.size());
        for (std::size_t i = 0; i < mean.size(); ++i) x[i] = mean[i] + std[i] * rng.normal();
        return x;
    }
};

// A model wired for one experiment: the SDE in compensated-small-jump form,
// the quadrature it was wired against, and the initial condition.
struct BuiltModel {
    SdeModel model;
    LevyQuadrature quad;
    Vec comp0;          // base small-jump compensator at t = 0
    DiagGaussian mu0;
};

namespace detail {

inline QuadRule rule_of(const ExperimentConfig& cfg) {
    return cfg.quad_rule == "gauss" ? QuadRule::GaussLegendre : QuadRule::Trapezoid;
}

inline DiagGaussian resolve_mu0(const ExperimentConfig& cfg, int dim, double def_mean, double def_std) {
    DiagGaussian g;
    g.mean = cfg.mu0_mean.empty() ? Vec(dim, def_mean) : cfg.mu0_mean;
    g.std = cfg.mu0_std.empty() ? Vec(dim, def_std) : cfg.mu0_std;
    require(static_cast<int>(g.mean.size()) == dim,
            "mu0 override dimension does not match the model dimension");
    require(g.mean.size() == g.std.size(), "mu0_mean and mu0_std must have equal lengths");
    return g;
}

// Mean-reverting 1-D jump-diffusion, dX = kappa(eta - X)dt + sigma dB + J dN,
// with Poisson intensity 30 and Gaussian jump sizes N(0.1, (1/24)^2). The
// paper writes the jumps against the plain Poisson measure, so the
// compensated-small-jump drift is kappa(eta - x) + int_{|r|<1} r nu(dr).
inline BuiltModel build_ex1(const ExperimentConfig& cfg) {
    const double kappa = 1.0, eta = 1.0, sigma = 2.0;
    const double rate = 30.0, jm = 0.1, jv = 1.0 / 24.0;
    BuiltModel b;
    SdeModel& m = b.model;
    m.dim = 1;
    m.brownian_dim = 1;
    m.name = "ex1";
    m.levy_measure = make_compound_poisson_gaussian(rate, jm, jv);
    m.jump_small = [](const Vec& r, double) { return Vec{r[0]}; };
    m.jump_large = m.jump_small;
    m.diffusion = [sigma](const Vec&, double) { return Vec{sigma}; };
    m.diffusion_matrix = [sigma](const Vec&, double) { return Vec{sigma * sigma}; };
    m.diffusion_div = [](const Vec&, double) { return Vec{0.0}; };
    b.quad = build_quadrature(m.levy_measure, cfg.n_r, cfg.n_lambda, rule_of(cfg));
    b.comp0 = compensator(b.quad, m, 0.0);
    double c0 = b.comp0[0];
    m.drift = [kappa, eta, c0](const Vec& x, double) { return Vec{kappa * (eta - x[0]) + c0}; };
    m.flow_div_nonscore = [kappa](const Vec&, double, const Vec&) { return -kappa; };
    b.mu0 = resolve_mu0(cfg, 1, 0.0, 1.0);
    b.model = finalize_model(std::move(b.model));
    return b;
}

// Mean-reverting 1-D diffusion driven additionally by alpha-stable noise;
// the compensator vanishes by symmetry of the truncated window.
inline BuiltModel build_ex2(const ExperimentConfig& cfg) {
    const double kappa = 1.0, eta = 1.0, sigma = 2.0;
    const double alpha = cfg.alpha > 0.0 ? cfg.alpha : 1.5;
    require(alpha < 2.0, "ex2 requires alpha < 2 (alpha = 2 has no jump component)");
    BuiltModel b;
    SdeModel& m = b.model;
    m.dim = 1;
    m.brownian_dim = 1;
    m.name = "ex2";
    m.levy_measure = make_alpha_stable(alpha, {{-5.0, -0.01}, {0.01, 5.0}});
    m.jump_small = [](const Vec& r, double) { return Vec{r[0]}; };
    m.jump_large = m.jump_small;
    m.diffusion = [sigma](const Vec&, double) { return Vec{sigma}; };
    m.diffusion_matrix = [sigma](const Vec&, double) { return Vec{sigma * sigma}; };
    m.diffusion_div = [](const Vec&, double) { return Vec{0.0}; };
    b.quad = build_quadrature(m.levy_measure, cfg.n_r, cfg.n_lambda, rule_of(cfg));
    b.comp0 = compensator(b.quad, m, 0.0);
    double c0 = b.comp0[0];
    m.drift = [kappa, eta, c0](const Vec& x, double) { return Vec{kappa * (eta - x[0]) + c0}; };
    m.flow_div_nonscore = [kappa](const Vec&, double, const Vec&) { return -kappa; };
    b.mu0 = resolve_mu0(cfg, 1, 0.0, 1.0);
    b.model = finalize_model(std::move(b.model));
    return b;
}

// 2-D double-well / linear system with linear interaction K(x) = x and the
// Example-1 jumps acting on the first coordinate only.
inline BuiltModel build_ex3(const ExperimentConfig& cfg) {
    const double sigma = 2.0;
    const double rate = 30.0, jm = 0.1, jv = 1.0 / 24.0;
    BuiltModel b;
    SdeModel& m = b.model;
    m.dim = 2;
    m.brownian_dim = 2;
    m.name = "ex3";
    m.levy_measure = make_compound_poisson_gaussian(rate, jm, jv);
    m.jump_small = [](const Vec& r, double) { return Vec{r[0], 0.0}; };
    m.jump_large = m.jump_small;
    m.diffusion = [sigma](const Vec&, double) { return Vec{sigma, 0.0, 0.0, sigma}; };
    m.diffusion_matrix = [sigma](const Vec&, double) {
        return Vec{sigma * sigma, 0.0, 0.0, sigma * sigma};
    };
    m.diffusion_div = [](const Vec&, double) { return Vec{0.0, 0.0}; };
    m.interaction = linear_kernel();
    b.quad = build_quadrature(m.levy_measure, cfg.n_r, cfg.n_lambda, rule_of(cfg));
    b.comp0 = compensator(b.quad, m, 0.0);
    double c0 = b.comp0[0];
    m.drift = [c0](const Vec& x, double) {
        return Vec{x[0] - x[0] * x[0] * x[0] + c0, x[1]};
    };
    m.flow_div_nonscore = [](const Vec& x, double, const Vec&) {
        return (1.0 - 3.0 * x[0] * x[0]) + 1.0;
    };
    b.mu0 = resolve_mu0(cfg, 2, 0.0, 1.0);
    b.model = finalize_model(std::move(b.model));
    return b;
}

// 3-D state-dependent jump-diffusion for (log-price, variance, mean level).
inline BuiltModel build_ex4(const ExperimentConfig& cfg) {
    const double gamma_ = 0.04, delta = 0.015;
    const double kappa_v = 3.1206, kappa_m = 3.3168, alpha_m = 0.1125;
    const double sigma_v = 0.394, sigma_m = 0.0835, rho = -0.688;
    const double lam0 = 2.096, lam1 = 21.225, lam2 = 0.0;
    const double mu_s = -0.012, sig_s = 0.043, mu_jv = 0.002;
    const double jbar = std::exp(mu_s + 0.5 * sig_s * sig_s) - 1.0;
    const double clamp = 1e-8;  // |v| floor under the square roots

    BuiltModel b;
    SdeModel& m = b.model;
    m.dim = 3;
    m.brownian_dim = 3;
    m.name = "ex4";

    Factor1D f_s;
    f_s.density = [mu_s, sig_s](double r) {
        // law of J^s with J^s + 1 lognormal(mu_s, sig_s)
        if (r <= -1.0) return 0.0;
        double z = (std::log(r + 1.0) - mu_s) / sig_s;
        return std::exp(-0.5 * z * z) / (sig_s * (r + 1.0) * 2.5066282746310005024);
    };
    f_s.intervals = {{-0.17, 0.17}};
    f_s.sampler = [mu_s, sig_s](RngStream& rng) {
        return std::exp(mu_s + sig_s * rng.normal()) - 1.0;
    };
    Factor1D f_v;
    f_v.density = [mu_jv](double r) { return r < 0.0 ? 0.0 : std::exp(-r / mu_jv) / mu_jv; };
    f_v.intervals = {{0.0, 0.0015}};
    f_v.sampler = [mu_jv](RngStream& rng) { return rng.exponential(mu_jv); };
    m.levy_measure = make_product_measure({f_s, f_v});

    m.jump_small = [](const Vec& r, double) { return Vec{std::log(r[0] + 1.0), r[1], 0.0}; };
    m.jump_large = m.jump_small;

    auto cl = [clamp](double v) { return std::max(std::fabs(v), clamp); };
    m.diffusion = [=](const Vec& x, double) {
        double sv = std::sqrt(cl(x[1])), sm = std::sqrt(cl(x[2]));
        double c2 = std::sqrt(1.0 - rho * rho);
        return Vec{sv, 0.0, 0.0,
                   sigma_v * sv, sigma_v * sv * c2, 0.0,
                   0.0, 0.0, sigma_m * sm};
    };
    m.diffusion_matrix = [=](const Vec& x, double) {
        double av = cl(x[1]), am = cl(x[2]);
        return Vec{av, sigma_v * av, 0.0,
                   sigma_v * av, sigma_v * sigma_v * av * (2.0 - rho * rho), 0.0,
                   0.0, 0.0, sigma_m * sigma_m * am};
    };
    auto sgnc = [clamp](double v) { return std::fabs(v) > clamp ? (v > 0.0 ? 1.0 : -1.0) : 0.0; };
    m.diffusion_div = [=](const Vec& x, double) {
        return Vec{sigma_v * sgnc(x[1]),
                   sigma_v * sigma_v * (2.0 - rho * rho) * sgnc(x[1]),
                   sigma_m * sigma_m * sgnc(x[2])};
    };
    m.intensity_scale = [=](const Vec& x) {
        return std::max(lam0 + lam1 * x[1] + lam2 * x[2], 0.0);
    };
    m.intensity_grad = [=](const Vec& x) {
        if (lam0 + lam1 * x[1] + lam2 * x[2] <= 0.0) return Vec{0.0, 0.0, 0.0};
        return Vec{0.0, lam1, lam2};
    };

    b.quad = build_quadrature(m.levy_measure, cfg.n_r, cfg.n_lambda, rule_of(cfg));
    b.comp0 = compensator(b.quad, m, 0.0);
    Vec c0 = b.comp0;
    m.drift = [=](const Vec& x, double) {
        double lam = std::max(lam0 + lam1 * x[1] + lam2 * x[2], 0.0);
        return Vec{gamma_ - delta - 0.5 * x[1] - lam * jbar + lam * c0[0],
                   kappa_v * (x[2] - x[1]) + lam * c0[1],
                   kappa_m * (alpha_m - x[2]) + lam * c0[2]};
    };
    // The Lambda(x)*comp terms cancel between drift and compensator exactly,
    // and div(div Sigma) = 0 away from the clamp.
    m.flow_div_nonscore = [=](const Vec&, double, const Vec&) { return -kappa_v - kappa_m; };
    b.mu0 = resolve_mu0(cfg, 3, 5.0, 1.0);
    b.model = finalize_model(std::move(b.model));
    return b;
}

// Ornstein-Uhlenbeck oracle model: b = -x, Sigma = 2I, no jumps. Carries the
// analytic score and transport map of the Gaussian flow started from mu0,
// used by the exact-score fixed point and the time-step order study.
inline BuiltModel build_ou(const ExperimentConfig& cfg) {
    BuiltModel b;
    SdeModel& m = b.model;
    int d = cfg.mu0_mean.empty() ? 1 : static_cast<int>(cfg.mu0_mean.size());
    m.dim = d;
    m.brownian_dim = d;
    m.name = "ou";
    m.drift = [](const Vec& x, double) {
        Vec out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
        return out;
    };
    const double s2 = std::sqrt(2.0);
    m.diffusion = [d, s2](const Vec&, double) {
        Vec out(static_cast<std::size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) out[i * d + i] = s2;
        return out;
    };
    m.diffusion_matrix = [d](const Vec&, double) {
        Vec out(static_cast<std::size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) out[i * d + i] = 2.0;
        return out;
    };
    m.diffusion_div = [d](const Vec&, double) { return Vec(d, 0.0); };
    m.jump_small = [d](const Vec&, double) { return Vec(d, 0.0); };
    m.jump_large = m.jump_small;
    m.flow_div_nonscore = [d](const Vec&, double, const Vec&) { return -static_cast<double>(d); };
    b.mu0 = resolve_mu0(cfg, d, 0.0, 1.0);
    b.quad = build_quadrature(m.levy_measure, 2, std::max(cfg.n_lambda, 2));
    b.comp0 = Vec(d, 0.0);

    // Per-coordinate Gaussian flow: mean mu0 e^{-t}, variance 1 + (s0^2-1)e^{-2t}.
    Vec mu0 = b.mu0.mean, s0 = b.mu0.std;
    m.exact_score = [mu0, s0](const Vec& x, double t) {
        Vec out(x.size());
        double decay = std::exp(-t);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double mt = mu0[i] * decay;
            double vt = 1.0 + (s0[i] * s0[i] - 1.0) * decay * decay;
            out[i] = -(x[i] - mt) / vt;   // (1/2) Sigma grad log p with Sigma = 2
        }
        return out;
    };
    m.exact_flow = [mu0, s0](const Vec& x0, double t) {
        Vec out(x0.size());
        double decay = std::exp(-t);
        for (std::size_t i = 0; i < x0.size(); ++i) {
            double mt = mu0[i] * decay;
            double st = std::sqrt(1.0 + (s0[i] * s0[i] - 1.0) * decay * decay);
            out[i] = mt + (st / s0[i]) * (x0[i] - mu0[i]);
        }
        return out;
    };
    b.model = finalize_model(std::move(b.model));
    return b;
}

} // namespace detail

inline BuiltModel build_example(const std::string& id, const ExperimentConfig& overrides) {
    if (id == "ex1") return detail::build_ex1(overrides);
    if (id == "ex2") return detail::build_ex2(overrides);
    if (id == "ex3") return detail::build_ex3(overrides);
    if (id == "ex4") return detail::build_ex4(overrides);
    if (id == "ou") return detail::build_ou(overrides);
    throw ConfigError("unknown model key '" + id + "' (known: ex1, ex2, ex3, ex4, ou)");
}

inline BuiltModel build_example(const ExperimentConfig& cfg) { return build_example(cfg.example, cfg); }

} // namespace levysbtm
