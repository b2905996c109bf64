#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/model.hpp"
#include "levysbtm/net.hpp"
#include "levysbtm/quad.hpp"

namespace levysbtm {

enum class LossVariant { WithInteraction, WithoutInteraction };  // Alg. 1 / Alg. 2

// Everything the per-step loss needs, precomputed once per time step:
// shift points x_i + lambda_l F(r_a, t) (wrapped on a torus), their premultiplied
// jump coefficients, the per-sample diffusion data and the empirical kernel
// average. Only the network changes between optimizer iterations.
struct BatchLossSpec {
    const SdeModel* model = nullptr;
    const LevyQuadrature* quad = nullptr;
    double time = 0.0;
    LossVariant variant = LossVariant::WithoutInteraction;

    int n = 0;   // samples
    int d = 0;   // state dimension
    Vec samples;          // [n x d]
    Vec sigma;            // [n x d x d]
    Vec sigma_div;        // [n x d]
    Vec kbar;             // [n x d], (1/N) sum_j K(x_i - x_j); zero unless WithInteraction
    Vec intensity;        // [n]

    int n_small = 0, n_large = 0, n_lambda = 0;
    // Shift point arrays, shape n x nodes x n_lambda x d, flattened with the
    // rightmost index fastest.
    Vec shift_small, shift_large;
    // Matching upstream coefficients (2/N) Lambda_i w_a w_l F(r_a,t), same shape.
    Vec coeff_small, coeff_large;
};

namespace detail {
inline void build_shift_group(const SdeModel& model, const LevyQuadrature& quad,
                              const std::vector<QuadNode>& nodes, bool small, double t,
                              const Vec& samples, const Vec& intensity, int n, int d,
                              Vec& shifts, Vec& coeffs) {
    const int A = static_cast<int>(nodes.size());
    const int L = static_cast<int>(quad.lambda_nodes.size());
    shifts.assign(static_cast<std::size_t>(n) * A * L * d, 0.0);
    coeffs.assign(shifts.size(), 0.0);
    if (A == 0) return;
    // jump values F(r_a, t) (or G), computed once per node
    Vec fvals(static_cast<std::size_t>(A) * d);
    for (int a = 0; a < A; ++a) {
        Vec f = small ? model.jump_small(nodes[a].mark, t) : model.jump_large(nodes[a].mark, t);
        require(static_cast<int>(f.size()) == d, "jump coefficient has wrong dimension");
        for (int k = 0; k < d; ++k) {
            require_finite(f[k], small ? "jump_small" : "jump_large");
            fvals[static_cast<std::size_t>(a) * d + k] = f[k];
        }
    }
    const bool torus = model.domain == Domain::Torus;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        const double* x = samples.data() + i * d;
        double lam_i = intensity[i];
        for (int a = 0; a < A; ++a) {
            const double* f = fvals.data() + static_cast<std::size_t>(a) * d;
            for (int l = 0; l < L; ++l) {
                auto [lmb, wl] = quad.lambda_nodes[l];
                double w = 2.0 / n * lam_i * nodes[a].weight * wl;
                std::size_t base = (((i * A) + a) * L + l) * d;
                for (int k = 0; k < d; ++k) {
                    shifts[base + k] = x[k] + lmb * f[k];
                    coeffs[base + k] = w * f[k];
                }
                if (torus) {
                    Vec wrapped(shifts.begin() + base, shifts.begin() + base + d);
                    wrapped = model.wrap(std::move(wrapped));
                    for (int k = 0; k < d; ++k) shifts[base + k] = wrapped[k];
                }
            }
        }
    });
}
} // namespace detail

inline BatchLossSpec build_batch_loss_spec(const Vec& samples, int n, double t, LossVariant variant,
                                           const SdeModel& model, const LevyQuadrature& quad) {
    BatchLossSpec spec;
    spec.model = &model;
    spec.quad = &quad;
    spec.time = t;
    spec.variant = variant;
    spec.n = n;
    spec.d = model.dim;
    spec.samples = samples;
    const int d = model.dim;
    require(static_cast<int>(samples.size()) == n * d, "sample array has wrong size");

    spec.sigma.resize(static_cast<std::size_t>(n) * d * d);
    spec.sigma_div.resize(static_cast<std::size_t>(n) * d);
    spec.intensity.resize(n);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        Vec x(samples.begin() + i * d, samples.begin() + (i + 1) * d);
        Vec s = model.diffusion_matrix(x, t);
        Vec sd = model.diffusion_div(x, t);
        for (int k = 0; k < d * d; ++k) spec.sigma[i * d * d + k] = s[k];
        for (int k = 0; k < d; ++k) spec.sigma_div[i * d + k] = sd[k];
        spec.intensity[i] = model.intensity_at(x);
    });

    spec.kbar.assign(static_cast<std::size_t>(n) * d, 0.0);
    if (variant == LossVariant::WithInteraction && model.interaction.kind != InteractionKernel::Kind::None) {
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            Vec diff(d);
            std::vector<KahanSum> acc(d);
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < d; ++k) diff[k] = samples[i * d + k] - samples[j * d + k];
                Vec kv = eval_kernel(model, diff);
                for (int k = 0; k < d; ++k) acc[k].add(kv[k]);
            }
            for (int k = 0; k < d; ++k) spec.kbar[i * d + k] = acc[k].value() / n;
        });
    }

    spec.n_small = static_cast<int>(quad.small_nodes.size());
    spec.n_large = static_cast<int>(quad.large_nodes.size());
    spec.n_lambda = static_cast<int>(quad.lambda_nodes.size());
    detail::build_shift_group(model, quad, quad.small_nodes, true, t, spec.samples, spec.intensity,
                              n, d, spec.shift_small, spec.coeff_small);
    detail::build_shift_group(model, quad, quad.large_nodes, false, t, spec.samples, spec.intensity,
                              n, d, spec.shift_large, spec.coeff_large);
    for (double v : spec.shift_small) require_finite(v, "small-jump shift points");
    for (double v : spec.shift_large) require_finite(v, "large-jump shift points");
    return spec;
}

struct LossResult {
    double loss = 0.0;
    NetGrads grads;
};

namespace detail {

// Shared evaluation path for the loss value and its parameter gradient.
// Chunking is fixed (kParallelChunk rows), per-chunk partial results are
// combined in chunk order, so results are identical for any worker count.
inline LossResult loss_and_grad(const ScoreNetwork& net, const BatchLossSpec& spec, bool want_grad) {
    const int d = spec.d;
    const int n = spec.n;
    LossResult out;
    if (want_grad) out.grads = NetGrads::zeros_like(net);

    // pass 1: the n samples, with tangent sweeps for the divergence term
    {
        std::size_t nchunks = (static_cast<std::size_t>(n) + kParallelChunk - 1) / kParallelChunk;
        std::vector<KahanSum> chunk_loss(nchunks);
        std::vector<NetGrads> chunk_grads;
        if (want_grad) chunk_grads.assign(nchunks, NetGrads::zeros_like(net));
        std::vector<int> bad_sample(nchunks, -1);
        std::vector<std::string> bad_term(nchunks);

        parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
            std::size_t rows = e - b;
            thread_local NetBatch ws;
            batch_forward(net, spec.samples.data() + b * d, rows, ws, d);
            const Vec& S = ws.act.back();
            thread_local Vec dS;
            thread_local std::vector<Vec> dJ;
            if (want_grad) {
                dS.assign(rows * d, 0.0);
                dJ.assign(d, Vec());
                for (int cc = 0; cc < d; ++cc) dJ[cc].assign(rows * d, 0.0);
            }
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t i = b + r;
                const double* s = S.data() + r * d;
                const double* sig = spec.sigma.data() + i * d * d;
                const double* sdv = spec.sigma_div.data() + i * d;
                const double* kb = spec.kbar.data() + i * d;
                double self = dot(s, s, d);
                double diverg = dot(sdv, s, d);
                double inter = 2.0 * dot(kb, s, d);
                for (int cc = 0; cc < d; ++cc) {
                    const double* jcol = ws.tact[cc].back().data() + r * d;
                    for (int ii = 0; ii < d; ++ii) diverg += sig[ii * d + cc] * jcol[ii];
                }
                double term = (self + diverg + inter) / n;
                if (!std::isfinite(term) && bad_sample[c] < 0) {
                    bad_sample[c] = static_cast<int>(i);
                    bad_term[c] = !std::isfinite(self)     ? "self"
                                  : !std::isfinite(diverg) ? "divergence"
                                                           : "interaction";
                }
                chunk_loss[c].add(term);
                if (want_grad) {
                    double* ds = dS.data() + r * d;
                    for (int ii = 0; ii < d; ++ii)
                        ds[ii] = (2.0 * s[ii] + sdv[ii] + 2.0 * kb[ii]) / n;
                    for (int cc = 0; cc < d; ++cc) {
                        double* dj = dJ[cc].data() + r * d;
                        for (int ii = 0; ii < d; ++ii) dj[ii] = sig[ii * d + cc] / n;
                    }
                }
            }
            if (want_grad)
                batch_backward(net, spec.samples.data() + b * d, ws, dS.data(), &dJ, chunk_grads[c]);
        });
        KahanSum total;
        for (std::size_t c = 0; c < nchunks; ++c) {
            if (bad_sample[c] >= 0)
                throw NumericError("non-finite " + bad_term[c] + " loss term at sample " +
                                   std::to_string(bad_sample[c]));
            total.add(chunk_loss[c].value());
            if (want_grad) out.grads.add(chunk_grads[c]);
        }
        out.loss += total.value();
    }

    // pass 2: shifted evaluation points of both jump groups, value-only sweeps
    auto shift_pass = [&](const Vec& shifts, const Vec& coeffs, const char* term_name) {
        std::size_t m = shifts.size() / d;
        if (m == 0) return;
        std::size_t nchunks = (m + kParallelChunk - 1) / kParallelChunk;
        std::vector<KahanSum> chunk_loss(nchunks);
        std::vector<NetGrads> chunk_grads;
        if (want_grad) chunk_grads.assign(nchunks, NetGrads::zeros_like(net));
        std::vector<long> bad_row(nchunks, -1);

        parallel_chunks(m, [&](std::size_t c, std::size_t b, std::size_t e) {
            std::size_t rows = e - b;
            thread_local NetBatch ws;
            batch_forward(net, shifts.data() + b * d, rows, ws);
            const Vec& S = ws.act.back();
            for (std::size_t r = 0; r < rows; ++r) {
                double term = dot(S.data() + r * d, coeffs.data() + (b + r) * d, d);
                if (!std::isfinite(term) && bad_row[c] < 0) bad_row[c] = static_cast<long>(b + r);
                chunk_loss[c].add(term);
            }
            if (want_grad)
                batch_backward(net, shifts.data() + b * d, ws, coeffs.data() + b * d, nullptr,
                               chunk_grads[c]);
        });
        KahanSum total;
        std::size_t per_sample = m / std::max(1, n);
        for (std::size_t c = 0; c < nchunks; ++c) {
            if (bad_row[c] >= 0)
                throw NumericError(std::string("non-finite ") + term_name + " loss term at sample " +
                                   std::to_string(bad_row[c] / std::max<std::size_t>(1, per_sample)));
            total.add(chunk_loss[c].value());
            if (want_grad) out.grads.add(chunk_grads[c]);
        }
        out.loss += total.value();
    };
    shift_pass(spec.shift_small, spec.coeff_small, "small-jump");
    shift_pass(spec.shift_large, spec.coeff_large, "large-jump");
    return out;
}

} // namespace detail

// Loss(t_k) of the sequential objective at the current ensemble:
//   (1/N) sum_i [ |s|^2 + div(Sigma s) + 2 s . kbar_i ] + jump quadrature terms.
inline double assemble_loss(const ScoreNetwork& net, const BatchLossSpec& spec) {
    return detail::loss_and_grad(net, spec, false).loss;
}

// Exact parameter gradient of assemble_loss, including the second-order path
// through the divergence term.
inline LossResult loss_gradient(const ScoreNetwork& net, const BatchLossSpec& spec) {
    return detail::loss_and_grad(net, spec, true);
}

namespace detail {
// Early-stopping monitor: checks every 10 iterations whether the best loss
// improved by at least 1e-8; three stalled windows in a row end the loop
// (a single window can be a transient of Adam's momentum ringing).
struct StallMonitor {
    double best = std::numeric_limits<double>::infinity();
    double best_at_check = std::numeric_limits<double>::infinity();
    int stalled = 0;

    bool should_stop(int it, double loss) {
        best = std::min(best, loss);
        if (it % 10 != 0 || it == 0) return false;
        stalled = (best_at_check - best < 1e-8) ? stalled + 1 : 0;
        best_at_check = best;
        return stalled >= 3;
    }
};
} // namespace detail

// Budgeted Adam loop on the sequential loss, stopping early once the loss
// has stopped decreasing (see StallMonitor).
inline double train_step(ScoreNetwork& net, AdamState& state, const BatchLossSpec& spec, int budget,
                         const std::function<void(int, double)>& telemetry = nullptr) {
    if (budget <= 0) return assemble_loss(net, spec);
    detail::StallMonitor monitor;
    for (int it = 0; it < budget; ++it) {
        LossResult r = detail::loss_and_grad(net, spec, true);
        adam_step(net, state, r.grads);
        if (telemetry) telemetry(it, r.loss);
        if (monitor.should_stop(it, r.loss)) break;
    }
    return assemble_loss(net, spec);
}

// Empirical sup-norm gap max_i |s(x_i) - oracle(x_i)|.
inline double oracle_gap(const ScoreNetwork& net, const BatchLossSpec& spec,
                         const std::function<Vec(const Vec&)>& oracle_score) {
    double worst = 0.0;
    const int d = spec.d;
    for (int i = 0; i < spec.n; ++i) {
        Vec x(spec.samples.begin() + static_cast<std::size_t>(i) * d,
              spec.samples.begin() + static_cast<std::size_t>(i + 1) * d);
        Vec s = forward(net, x);
        Vec o = oracle_score(x);
        double g = 0.0;
        for (int k = 0; k < d; ++k) g += sqr(s[k] - o[k]);
        worst = std::max(worst, std::sqrt(g));
    }
    return worst;
}

struct InitialFitResult {
    double relative_loss = 0.0;
    int iterations = 0;
};

// Direct regression of s^theta onto the analytic initial score
//   target = (1/2) Sigma grad log mu0 + S_L[mu0] - K * mu0,
// minimizing the relative squared error over the sample batch. The
// interaction part is the empirical kernel average and is dropped for the
// variant that keeps K out of the score.
inline InitialFitResult fit_initial_score(ScoreNetwork& net, const SdeModel& model,
                                          const LevyQuadrature& quad, const Vec& samples, int n,
                                          const std::function<double(const Vec&)>& mu0_density,
                                          const std::function<Vec(const Vec&)>& mu0_grad_log,
                                          AdamState& state, int budget, double t0 = 0.0,
                                          bool include_interaction = true) {
    const int d = model.dim;
    Vec targets(static_cast<std::size_t>(n) * d, 0.0);

    bool interact = include_interaction && model.interaction.kind != InteractionKernel::Kind::None;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        Vec x(samples.begin() + i * d, samples.begin() + (i + 1) * d);
        Vec sig = model.diffusion_matrix(x, t0);
        Vec gl = mu0_grad_log(x);
        Vec t(d, 0.0);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) t[a] += 0.5 * sig[a * d + b] * gl[b];
        if (quad.small_nodes.size() + quad.large_nodes.size() > 0) {
            Vec levy = levy_score_oracle(quad, model, mu0_density, x, t0);
            for (int a = 0; a < d; ++a) t[a] += levy[a];
        }
        if (interact) {
            Vec diff(d);
            std::vector<KahanSum> acc(d);
            for (int j = 0; j < n; ++j) {
                for (int k = 0; k < d; ++k) diff[k] = x[k] - samples[j * d + k];
                Vec kv = eval_kernel(model, diff);
                for (int k = 0; k < d; ++k) acc[k].add(kv[k]);
            }
            for (int a = 0; a < d; ++a) t[a] -= acc[a].value() / n;
        }
        for (int a = 0; a < d; ++a) targets[i * d + a] = t[a];
    });

    KahanSum denom_acc;
    for (double v : targets) denom_acc.add(v * v);
    double denom = denom_acc.value();
    if (!(denom > 0.0))
        throw NumericError("fit_initial_score: degenerate target (identically zero on the batch)");

    auto relative_loss = [&](bool want_grad, NetGrads* grads) {
        std::size_t nchunks = (static_cast<std::size_t>(n) + kParallelChunk - 1) / kParallelChunk;
        std::vector<KahanSum> chunk_loss(nchunks);
        std::vector<NetGrads> chunk_grads;
        if (want_grad) chunk_grads.assign(nchunks, NetGrads::zeros_like(net));
        parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
            std::size_t rows = e - b;
            thread_local NetBatch ws;
            batch_forward(net, samples.data() + b * d, rows, ws);
            const Vec& S = ws.act.back();
            thread_local Vec dS;
            if (want_grad) dS.assign(rows * d, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (int k = 0; k < d; ++k) {
                    double diff = S[r * d + k] - targets[(b + r) * d + k];
                    chunk_loss[c].add(diff * diff / denom);
                    if (want_grad) dS[r * d + k] = 2.0 * diff / denom;
                }
            if (want_grad)
                batch_backward(net, samples.data() + b * d, ws, dS.data(), nullptr, chunk_grads[c]);
        });
        KahanSum total;
        for (std::size_t c = 0; c < nchunks; ++c) {
            total.add(chunk_loss[c].value());
            if (want_grad) grads->add(chunk_grads[c]);
        }
        return total.value();
    };

    InitialFitResult res;
    detail::StallMonitor monitor;
    for (int it = 0; it < budget; ++it) {
        NetGrads g = NetGrads::zeros_like(net);
        double loss = relative_loss(true, &g);
        adam_step(net, state, g);
        res.iterations = it + 1;
        if (monitor.should_stop(it, loss)) break;
    }
    res.relative_loss = relative_loss(false, nullptr);
    return res;
}

} // namespace levysbtm
