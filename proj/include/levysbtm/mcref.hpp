#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "levysbtm/catalog.hpp"
#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/model.hpp"
#include "levysbtm/quad.hpp"
#include "levysbtm/rng.hpp"
#include "levysbtm/transport.hpp"

namespace levysbtm {

// Stream-id layout: particle i draws its initial position from stream i
// (shared with the transport engine for the same seed) and its path noise
// from stream PATH_STREAM_BASE | i. Each step owns a counter window, so the
// variable number of draws per step never shifts later steps.
inline constexpr std::uint64_t kPathStreamBase = 1ULL << 40;
inline constexpr std::uint64_t kCounterStride = 4096;

// One draw from the symmetric stable law S_alpha(scale, 0, 0), by the
// uniform-angle / exponential transform; alpha = 2 is scale * sqrt(2) * N(0,1).
inline double sample_stable(double alpha, double scale, RngStream& rng) {
    require(alpha > 0.0 && alpha <= 2.0, "sample_stable: alpha must be in (0,2]");
    require(scale > 0.0, "sample_stable: scale must be positive");
    if (alpha == 2.0) return scale * std::sqrt(2.0) * rng.normal();
    double u = M_PI * (rng.uniform() - 0.5);
    double w = rng.exponential(1.0);
    double x = std::sin(alpha * u) / std::pow(std::cos(u), 1.0 / alpha) *
               std::pow(std::cos((1.0 - alpha) * u) / w, (1.0 - alpha) / alpha);
    return scale * x;
}

// One Euler-Maruyama step of the jump-diffusion under the model's Levy spec.
// The drift is the compensated form b - Lambda(x) comp, so the jump draws are
// added raw; state-dependent rates are thinned against the ensemble maximum
// at the pre-jump (left limit) state.
inline ParticleEnsemble em_step(const ParticleEnsemble& ens, const SdeModel& model,
                                const LevyQuadrature& quad, double dt, std::uint64_t seed,
                                int step_index) {
    require(dt > 0.0, "em_step: dt must be positive");
    const int n = ens.n, d = ens.d, bm = model.brownian_dim;
    const LevySpec& spec = model.levy_measure;
    ParticleEnsemble out = ens;
    Vec comp = compensator(quad, model, ens.time);
    Vec kbar;
    if (model.interaction.kind != InteractionKernel::Kind::None)
        kbar = empirical_kernel_average(model, ens.positions, n);

    double lam_max = 1.0;
    if (model.intensity_scale) {
        lam_max = 0.0;
        for (int i = 0; i < n; ++i) lam_max = std::max(lam_max, model.intensity_at(ens.particle(i)));
    }

    const double sq_dt = std::sqrt(dt);
    std::vector<int> bad(1 + (n - 1) / static_cast<int>(kParallelChunk), -1);
    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
        Vec xi(bm), r(std::max(1, spec.mark_dim()));
        for (std::size_t i = b; i < e; ++i) {
            RngStream rng(seed, kPathStreamBase | i);
            rng.counter = static_cast<std::uint64_t>(step_index) * kCounterStride;
            Vec x = ens.particle(static_cast<int>(i));
            double lam_i = model.intensity_at(x);
            Vec drift = model.drift(x, ens.time);
            Vec sigma = model.diffusion(x, ens.time);
            Vec nx(d);
            for (int k = 0; k < bm; ++k) xi[k] = rng.normal();
            for (int k = 0; k < d; ++k) {
                double dx = (drift[k] - lam_i * comp[k]) * dt;
                if (!kbar.empty()) dx += kbar[i * d + k] * dt;
                double diff = 0.0;
                for (int j = 0; j < bm; ++j) diff += sigma[k * bm + j] * xi[j];
                nx[k] = x[k] + dx + sq_dt * diff;
            }
            switch (spec.kind) {
                case LevySpec::Kind::None:
                    break;
                case LevySpec::Kind::AlphaStable: {
                    double dl = sample_stable(spec.alpha, std::pow(dt, 1.0 / spec.alpha), rng);
                    nx[0] += dl;  // jump coefficients F = G = r
                    break;
                }
                case LevySpec::Kind::CompoundPoissonGaussian:
                case LevySpec::Kind::ProductMeasure: {
                    double base_rate = spec.kind == LevySpec::Kind::CompoundPoissonGaussian ? spec.rate : 1.0;
                    int njumps = rng.poisson(base_rate * lam_max * dt);
                    for (int j = 0; j < njumps; ++j) {
                        if (model.intensity_scale && rng.uniform() * lam_max > lam_i) continue;
                        double rn = 0.0;
                        if (spec.kind == LevySpec::Kind::CompoundPoissonGaussian) {
                            r[0] = spec.mean + spec.stddev * rng.normal();
                            rn = std::fabs(r[0]);
                        } else {
                            for (std::size_t f = 0; f < spec.factors.size(); ++f) {
                                r[f] = spec.factors[f].sampler(rng);
                                rn += r[f] * r[f];
                            }
                            rn = std::sqrt(rn);
                        }
                        Vec jump = rn < 1.0 ? model.jump_small(r, ens.time) : model.jump_large(r, ens.time);
                        for (int k = 0; k < d; ++k) nx[k] += jump[k];
                    }
                    break;
                }
            }
            if (model.domain == Domain::Torus) nx = model.wrap(std::move(nx));
            for (int k = 0; k < d; ++k) {
                if (!std::isfinite(nx[k]) && bad[c] < 0) bad[c] = static_cast<int>(i);
                out.positions[i * d + k] = nx[k];
            }
        }
    });
    for (int b : bad)
        if (b >= 0) throw NumericError("non-finite Monte Carlo state at particle " + std::to_string(b));
    out.time = ens.time + dt;
    return out;
}

// Monte Carlo reference run with the same checkpoint cadence as run_sbtm.
inline TrajectoryRecord em_run(const ExperimentConfig& cfg) {
    cfg.validate();
    BuiltModel built = build_example(cfg);
    const SdeModel& model = built.model;
    int count = cfg.mc_samples > 0 ? cfg.mc_samples : cfg.n_particles;
    if (model.interaction.kind != InteractionKernel::Kind::None)
        require(count >= 2, "interactive models need at least 2 particles");

    const int nt = cfg.n_steps();
    const int cadence = detail::resolve_cadence(cfg, model.dim);
    TrajectoryRecord rec;
    rec.engine = "mc";
    rec.n = count;
    rec.d = model.dim;
    rec.dt = cfg.dt;

    ParticleEnsemble ens = detail::initial_ensemble(built, cfg, count, false);
    rec.checkpoints.push_back({0, 0.0, ens.positions, {}});
    for (int k = 0; k < nt; ++k) {
        ens.time = k * cfg.dt;
        try {
            ens = em_step(ens, model, built.quad, cfg.dt, cfg.seed, k);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (mc step " + std::to_string(k) + ")");
        }
        if ((k + 1) % cadence == 0 || k + 1 == nt)
            rec.checkpoints.push_back({k + 1, (k + 1) * cfg.dt, ens.positions, {}});
    }
    return rec;
}

} // namespace levysbtm
