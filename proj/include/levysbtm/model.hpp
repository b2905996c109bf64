#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/rng.hpp"

namespace levysbtm {

using Interval = std::array<double, 2>;

// One scalar factor of a product jump-size measure: a density on the line,
// the truncation interval(s) actually integrated over, and a sampler from
// the full (untruncated) law for the Monte Carlo engine.
struct Factor1D {
    std::function<double(double)> density;
    std::vector<Interval> intervals;
    std::function<double(RngStream&)> sampler;
};

// Levy measure specification. The truncation window is part of the spec:
// all integrals against nu are taken over the window only.
struct LevySpec {
    enum class Kind { None, CompoundPoissonGaussian, AlphaStable, ProductMeasure };
    Kind kind = Kind::None;

    // CompoundPoissonGaussian: nu(dr) = rate * N(mean, stddev^2)(dr).
    double rate = 0.0;
    double mean = 0.0;
    double stddev = 1.0;

    // AlphaStable: nu(r) = c_alpha * |r|^(-1-alpha).
    double alpha = 0.0;
    double c_alpha = 0.0;

    // ProductMeasure: one factor per mark dimension.
    std::vector<Factor1D> factors;

    // Truncation window, one list of closed intervals per mark dimension.
    std::vector<std::vector<Interval>> window;

    int mark_dim() const {
        switch (kind) {
            case Kind::None: return 0;
            case Kind::ProductMeasure: return static_cast<int>(factors.size());
            default: return 1;
        }
    }

    // Density of nu at a mark (constant rates folded in).
    double density(const double* r) const {
        switch (kind) {
            case Kind::None: return 0.0;
            case Kind::CompoundPoissonGaussian: {
                double z = (r[0] - mean) / stddev;
                return rate * std::exp(-0.5 * z * z) / (stddev * 2.5066282746310005024);
            }
            case Kind::AlphaStable:
                return c_alpha * std::pow(std::fabs(r[0]), -1.0 - alpha);
            case Kind::ProductMeasure: {
                double p = 1.0;
                for (std::size_t i = 0; i < factors.size(); ++i) p *= factors[i].density(r[i]);
                return p;
            }
        }
        return 0.0;
    }
};

// Normalization constant of the symmetric alpha-stable Levy density,
// c_alpha = alpha Gamma((1+alpha)/2) / (2^(1-alpha) sqrt(pi) Gamma(1-alpha/2)).
inline double alpha_stable_constant(double alpha) {
    require(alpha > 0.0 && alpha < 2.0, "alpha_stable_constant: alpha must be in (0,2)");
    return alpha * std::tgamma(0.5 * (1.0 + alpha)) /
           (std::pow(2.0, 1.0 - alpha) * std::sqrt(M_PI) * std::tgamma(1.0 - 0.5 * alpha));
}

inline LevySpec make_compound_poisson_gaussian(double rate, double mean, double stddev,
                                               std::optional<Interval> win = {}) {
    LevySpec s;
    s.kind = LevySpec::Kind::CompoundPoissonGaussian;
    s.rate = rate;
    s.mean = mean;
    s.stddev = stddev;
    Interval w = win ? *win : Interval{mean - 3.0 * stddev, mean + 3.0 * stddev};
    s.window = {{w}};
    return s;
}

inline LevySpec make_alpha_stable(double alpha, std::vector<Interval> branches) {
    LevySpec s;
    s.kind = LevySpec::Kind::AlphaStable;
    s.alpha = alpha;
    s.c_alpha = alpha_stable_constant(alpha);
    for (const auto& b : branches)
        require(b[0] * b[1] > 0.0, "alpha-stable truncation window must exclude the origin");
    s.window = {std::move(branches)};
    return s;
}

inline LevySpec make_product_measure(std::vector<Factor1D> factors) {
    LevySpec s;
    s.kind = LevySpec::Kind::ProductMeasure;
    for (auto& f : factors) s.window.push_back(f.intervals);
    s.factors = std::move(factors);
    return s;
}

struct InteractionKernel {
    enum class Kind { None, Bounded, BiotSavart, Linear };
    Kind kind = Kind::None;
    std::function<Vec(const Vec&)> bounded_fn;
    double bound = 0.0;     // C_K for Bounded
    double epsilon = 0.0;   // regularizer for BiotSavart
};

inline InteractionKernel no_interaction() { return {}; }

inline InteractionKernel linear_kernel() {
    InteractionKernel k;
    k.kind = InteractionKernel::Kind::Linear;
    return k;
}

inline InteractionKernel biot_savart_kernel(double epsilon) {
    require(epsilon >= 0.0, "Biot-Savart regularizer must be >= 0");
    InteractionKernel k;
    k.kind = InteractionKernel::Kind::BiotSavart;
    k.epsilon = epsilon;
    return k;
}

// Bounded kernel; |K| <= bound is probed on a lattice in [-probe_radius, probe_radius]^d
// and construction fails on any violation.
inline InteractionKernel bounded_kernel(std::function<Vec(const Vec&)> fn, double bound,
                                        int dim, double probe_radius = 10.0) {
    InteractionKernel k;
    k.kind = InteractionKernel::Kind::Bounded;
    k.bound = bound;
    const int per_dim = 9;
    std::size_t total = 1;
    for (int i = 0; i < dim; ++i) total *= per_dim;
    Vec x(dim);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t rem = idx;
        for (int i = 0; i < dim; ++i) {
            int g = static_cast<int>(rem % per_dim);
            rem /= per_dim;
            x[i] = -probe_radius + 2.0 * probe_radius * g / (per_dim - 1);
        }
        if (norm2(fn(x)) > bound * (1.0 + 1e-12))
            throw ConfigError("bounded kernel exceeds its declared bound on the probe grid");
    }
    k.bounded_fn = std::move(fn);
    return k;
}

enum class Domain { FullSpace, Torus };

struct SdeModel {
    int dim = 1;            // state dimension d
    int brownian_dim = 1;   // m
    std::string name;

    std::function<Vec(const Vec&, double)> drift;                  // b(x,t), in the compensated-small-jump form
    std::function<Vec(const Vec&, double)> diffusion;              // sigma(x,t), row-major d x m
    std::function<Vec(const Vec&, double)> diffusion_matrix;       // Sigma = sigma sigma^T, row-major d x d
    std::function<Vec(const Vec&, double)> diffusion_div;          // (div Sigma)_i = sum_j d_j Sigma_ij
    std::function<Vec(const Vec&, double)> jump_small;             // F(r,t): mark -> state
    std::function<Vec(const Vec&, double)> jump_large;             // G(r,t)
    LevySpec levy_measure;
    std::function<double(const Vec&)> intensity_scale;             // Lambda(x); empty = 1
    InteractionKernel interaction;
    Domain domain = Domain::FullSpace;
    double torus_half_width = 0.0;

    // Optional analytic closures.
    // Divergence of the non-score part of the flow velocity,
    // div[ b - Lambda(x) comp - (1/2) div Sigma ]; finite differences otherwise.
    std::function<double(const Vec&, double, const Vec&)> flow_div_nonscore;
    std::function<Vec(const Vec&)> intensity_grad;                 // grad Lambda
    std::function<Vec(const Vec&, double)> exact_score;            // for training-bypassed runs
    std::function<Vec(const Vec&, double)> exact_flow;             // analytic transport map from t0

    bool unbounded_kernel_warning = false;  // set for kernels outside the analysis assumptions

    double intensity_at(const Vec& x) const { return intensity_scale ? intensity_scale(x) : 1.0; }

    Vec wrap(Vec x) const {
        if (domain == Domain::Torus) {
            double L = torus_half_width;
            for (double& c : x) {
                c = std::fmod(c + L, 2.0 * L);
                if (c < 0.0) c += 2.0 * L;
                c -= L;
            }
        }
        return x;
    }
};

// Fills derived fields and performs construction-time checks.
inline SdeModel finalize_model(SdeModel m) {
    require(m.dim >= 1, "model dimension must be positive");
    if (!m.diffusion_matrix && m.diffusion) {
        auto sigma = m.diffusion;
        int d = m.dim, bm = m.brownian_dim;
        m.diffusion_matrix = [sigma, d, bm](const Vec& x, double t) {
            Vec s = sigma(x, t);
            Vec out(static_cast<std::size_t>(d) * d, 0.0);
            for (int i = 0; i < d; ++i)
                for (int j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (int k = 0; k < bm; ++k) acc += s[i * bm + k] * s[j * bm + k];
                    out[i * d + j] = acc;
                }
            return out;
        };
    }
    if (!m.diffusion_div && m.diffusion_matrix) {
        auto dm = m.diffusion_matrix;
        int d = m.dim;
        m.diffusion_div = [dm, d](const Vec& x, double t) {
            const double h = 1e-5;
            Vec out(d, 0.0);
            Vec xp = x, xm = x;
            for (int j = 0; j < d; ++j) {
                xp[j] = x[j] + h;
                xm[j] = x[j] - h;
                Vec sp = dm(xp, t), sm = dm(xm, t);
                for (int i = 0; i < d; ++i) out[i] += (sp[i * d + j] - sm[i * d + j]) / (2.0 * h);
                xp[j] = x[j];
                xm[j] = x[j];
            }
            return out;
        };
    }
    if (m.interaction.kind == InteractionKernel::Kind::BiotSavart)
        require(m.dim == 2, "Biot-Savart interaction requires d = 2");
    if (m.interaction.kind == InteractionKernel::Kind::Linear)
        m.unbounded_kernel_warning = true;  // K(x) = x violates the boundedness assumption
    if (m.domain == Domain::Torus)
        require(m.torus_half_width > 0.0, "torus half-width must be positive");
    return m;
}

// K(x) per the kernel kind.
inline Vec eval_kernel(const SdeModel& model, const Vec& x) {
    switch (model.interaction.kind) {
        case InteractionKernel::Kind::None:
            return Vec(x.size(), 0.0);
        case InteractionKernel::Kind::Linear:
            return x;
        case InteractionKernel::Kind::Bounded:
            return model.interaction.bounded_fn(x);
        case InteractionKernel::Kind::BiotSavart: {
            double r2 = x[0] * x[0] + x[1] * x[1] + model.interaction.epsilon;
            if (r2 == 0.0) throw NumericError("Biot-Savart kernel singular at the origin with eps = 0");
            double c = 1.0 / (2.0 * M_PI * r2);
            return Vec{-x[1] * c, x[0] * c};
        }
    }
    return Vec(x.size(), 0.0);
}

// b_hat(x,t) = b(x,t) - Lambda(x) * comp - (1/2) div Sigma(x,t), with comp the
// precomputed small-jump compensator of the base measure.
inline Vec eval_hat_drift(const SdeModel& model, const Vec& x, double t, const Vec& comp) {
    Vec b = model.drift(x, t);
    Vec sdiv = model.diffusion_div(x, t);
    double lam = model.intensity_at(x);
    for (int i = 0; i < model.dim; ++i) {
        b[i] -= lam * comp[i] + 0.5 * sdiv[i];
        if (!std::isfinite(b[i]))
            throw NumericError("non-finite drift coefficient at t=" + std::to_string(t) +
                               ", x[" + std::to_string(i) + "]=" + std::to_string(x[i]));
    }
    return b;
}

} // namespace levysbtm
