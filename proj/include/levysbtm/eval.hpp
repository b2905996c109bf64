#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/transport.hpp"

namespace levysbtm {

inline int default_bins(int d) {
    if (d == 1) return 50;
    if (d == 2) return 30;
    if (d == 3) return 16;
    return 8;
}

struct BinnedHistogram {
    int d = 0;
    int bins_per_dim = 0;
    Vec lo, hi;     // bounding box
    Vec probs;      // bins_per_dim^d cells, normalized
};

namespace detail {
inline void union_box(const Vec& a, int na, const Vec& b, int nb, int d, Vec& lo, Vec& hi) {
    lo.assign(d, std::numeric_limits<double>::infinity());
    hi.assign(d, -std::numeric_limits<double>::infinity());
    auto scan = [&](const Vec& s, int n) {
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < d; ++k) {
                double v = s[static_cast<std::size_t>(i) * d + k];
                lo[k] = std::min(lo[k], v);
                hi[k] = std::max(hi[k], v);
            }
    };
    scan(a, na);
    if (nb > 0) scan(b, nb);
}

inline std::size_t cell_index(const double* x, const Vec& lo, const Vec& hi, int d, int bins) {
    std::size_t idx = 0;
    for (int k = 0; k < d; ++k) {
        double w = hi[k] - lo[k];
        int c = 0;
        if (w > 0.0) {
            c = static_cast<int>((x[k] - lo[k]) / w * bins);
            c = std::clamp(c, 0, bins - 1);   // right-closed final bin
        }
        idx = idx * bins + c;
    }
    return idx;
}
} // namespace detail

inline BinnedHistogram make_histogram(const Vec& samples, int n, int d, const Vec& lo, const Vec& hi,
                                      int bins_per_dim) {
    require(n > 0, "make_histogram: empty sample set");
    BinnedHistogram h;
    h.d = d;
    h.bins_per_dim = bins_per_dim;
    h.lo = lo;
    h.hi = hi;
    std::size_t cells = 1;
    for (int k = 0; k < d; ++k) cells *= bins_per_dim;
    h.probs.assign(cells, 0.0);
    for (int i = 0; i < n; ++i)
        h.probs[detail::cell_index(samples.data() + static_cast<std::size_t>(i) * d, lo, hi, d, bins_per_dim)] += 1.0;
    for (double& p : h.probs) p /= n;
    return h;
}

// The unhalved L1 histogram distance sum_i |P_a - P_b| on the smallest
// rectangle covering the union of both sample sets; range [0, 2].
inline double tv_distance(const Vec& a, int na, const Vec& b, int nb, int d, int bins_per_dim) {
    require(na > 0 && nb > 0, "tv_distance: empty sample set");
    Vec lo, hi;
    detail::union_box(a, na, b, nb, d, lo, hi);
    BinnedHistogram ha = make_histogram(a, na, d, lo, hi, bins_per_dim);
    BinnedHistogram hb = make_histogram(b, nb, d, lo, hi, bins_per_dim);
    KahanSum s;
    for (std::size_t i = 0; i < ha.probs.size(); ++i) s.add(std::fabs(ha.probs[i] - hb.probs[i]));
    return s.value();
}

// Binned KL divergence sum_i P_a log(P_a / P_b), with additive smoothing
// delta = 1/(10 N bins) on empty bins of b.
inline double kl_divergence_binned(const Vec& a, int na, const Vec& b, int nb, int d, int bins_per_dim) {
    require(na > 0 && nb > 0, "kl_divergence_binned: empty sample set");
    Vec lo, hi;
    detail::union_box(a, na, b, nb, d, lo, hi);
    BinnedHistogram ha = make_histogram(a, na, d, lo, hi, bins_per_dim);
    BinnedHistogram hb = make_histogram(b, nb, d, lo, hi, bins_per_dim);
    double delta = 1.0 / (10.0 * nb * static_cast<double>(ha.probs.size()));
    KahanSum s;
    for (std::size_t i = 0; i < ha.probs.size(); ++i) {
        if (ha.probs[i] == 0.0) continue;
        double q = hb.probs[i] > 0.0 ? hb.probs[i] : delta;
        s.add(ha.probs[i] * std::log(ha.probs[i] / q));
    }
    return std::max(0.0, s.value());
}

// Gaussian product-kernel density estimate on an explicit grid of points.
// bandwidth <= 0 selects Scott's rule per dimension.
inline Vec kde(const Vec& samples, int n, int d, double bandwidth, const Vec& grid, int n_grid) {
    require(n > 0, "kde: empty sample set");
    Vec h(d, bandwidth);
    if (bandwidth <= 0.0) {
        for (int k = 0; k < d; ++k) {
            double mean = 0.0, var = 0.0;
            for (int i = 0; i < n; ++i) mean += samples[static_cast<std::size_t>(i) * d + k];
            mean /= n;
            for (int i = 0; i < n; ++i) var += sqr(samples[static_cast<std::size_t>(i) * d + k] - mean);
            var /= std::max(1, n - 1);
            if (var <= 0.0)
                throw NumericError("kde: zero-variance samples with rule-based bandwidth");
            h[k] = std::sqrt(var) * std::pow(static_cast<double>(n), -1.0 / (d + 4));
        }
    }
    Vec out(n_grid, 0.0);
    const double norm = std::pow(2.0 * M_PI, -0.5 * d);
    parallel_for(static_cast<std::size_t>(n_grid), [&](std::size_t g) {
        const double* gp = grid.data() + g * d;
        KahanSum acc;
        for (int i = 0; i < n; ++i) {
            double e = 0.0, hprod = 1.0;
            for (int k = 0; k < d; ++k) {
                double z = (gp[k] - samples[static_cast<std::size_t>(i) * d + k]) / h[k];
                e += z * z;
                hprod *= h[k];
            }
            acc.add(std::exp(-0.5 * e) / hprod);
        }
        out[g] = norm * acc.value() / n;
    });
    return out;
}

struct L2KlBound {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

// int |p-q|^2 <= (2 tau / (1 - log 2)) KL(p || q) for grid densities bounded
// by tau. A violation is an implementation bug, not a data property.
inline L2KlBound check_l2_kl_bound(const Vec& p, const Vec& q, double tau, double cell) {
    require(p.size() == q.size() && !p.empty(), "check_l2_kl_bound: grids must match");
    require(tau > 0.0 && cell > 0.0, "check_l2_kl_bound: tau and cell must be positive");
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!(p[i] > 0.0 && p[i] < tau && q[i] > 0.0 && q[i] < tau))
            throw ConfigError("check_l2_kl_bound: densities must satisfy 0 < p,q < tau");
    KahanSum l2, kl;
    for (std::size_t i = 0; i < p.size(); ++i) {
        l2.add(sqr(p[i] - q[i]));
        kl.add(p[i] * std::log(p[i] / q[i]));
    }
    L2KlBound r;
    r.lhs = cell * l2.value();
    r.rhs = 2.0 * tau / (1.0 - std::log(2.0)) * cell * kl.value();
    r.holds = r.lhs <= r.rhs * (1.0 + 1e-9);
    return r;
}

struct ConvergenceStudy {
    Vec dts;
    Vec errors;      // terminal mean-absolute transport error per dt
    double slope = 0.0;
    bool degenerate = false;
};

// Time-step order of the transport loop with the analytic score supplied
// (training bypassed): terminal error against the model's exact flow map,
// log-log slope over the dt ladder.
inline ConvergenceStudy convergence_study(const ExperimentConfig& base, const Vec& dt_ladder) {
    require(dt_ladder.size() >= 3, "convergence_study: dt ladder must have at least 3 entries");
    BuiltModel built = build_example(base);
    require(static_cast<bool>(built.model.exact_score) && static_cast<bool>(built.model.exact_flow),
            "convergence_study requires a model with exact score and flow closures");
    ConvergenceStudy study;
    study.dts = dt_ladder;
    for (double dtv : dt_ladder) {
        ExperimentConfig cfg = base;
        cfg.dt = dtv;
        cfg.score_mode = ScoreMode::Exact;
        cfg.checkpoint_every = cfg.n_steps();  // terminal only
        TrajectoryRecord rec = run_sbtm(cfg);
        ParticleEnsemble init = detail::initial_ensemble(built, cfg, cfg.n_particles, false);
        const Vec& terminal = rec.checkpoints.back().positions;
        const int d = built.model.dim;
        KahanSum err;
        for (int i = 0; i < cfg.n_particles; ++i) {
            Vec x0 = init.particle(i);
            Vec xs = built.model.exact_flow(x0, cfg.t_final);
            double e2 = 0.0;
            for (int k = 0; k < d; ++k) e2 += sqr(terminal[static_cast<std::size_t>(i) * d + k] - xs[k]);
            err.add(std::sqrt(e2));
        }
        study.errors.push_back(err.value() / cfg.n_particles);
    }
    double max_err = *std::max_element(study.errors.begin(), study.errors.end());
    if (max_err < 1e-13) {
        study.degenerate = true;
        study.slope = std::numeric_limits<double>::quiet_NaN();
        return study;
    }
    // least-squares slope of log err vs log dt
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    int m = static_cast<int>(dt_ladder.size());
    for (int i = 0; i < m; ++i) {
        double x = std::log(study.dts[i]), y = std::log(study.errors[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    study.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    return study;
}

} // namespace levysbtm
