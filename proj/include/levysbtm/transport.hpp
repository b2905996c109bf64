#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "levysbtm/catalog.hpp"
#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/model.hpp"
#include "levysbtm/net.hpp"
#include "levysbtm/quad.hpp"
#include "levysbtm/training.hpp"

namespace levysbtm {

struct ParticleEnsemble {
    int n = 0;
    int d = 0;
    double time = 0.0;
    Vec positions;     // [n x d]
    Vec log_density;   // [n] when tracked, empty otherwise
    std::uint64_t seed_lineage = 0;

    Vec particle(int i) const {
        return Vec(positions.begin() + static_cast<std::size_t>(i) * d,
                   positions.begin() + static_cast<std::size_t>(i + 1) * d);
    }
};

// The score used by the transport step: either a per-step network or an
// analytic closure (training bypassed).
struct ScoreField {
    const ScoreNetwork* net = nullptr;
    std::function<Vec(const Vec&, double)> closure;

    Vec eval(const Vec& x, double t) const {
        return net ? forward(*net, x) : closure(x, t);
    }

    // Plain divergence trace(ds/dx); exact sweeps for networks, central
    // differences for closures.
    double div(const Vec& x, double t) const {
        if (net) return divergence(*net, x);
        const double h = 1e-5;
        double acc = 0.0;
        Vec xp = x, xm = x;
        for (std::size_t j = 0; j < x.size(); ++j) {
            xp[j] = x[j] + h;
            xm[j] = x[j] - h;
            acc += (closure(xp, t)[j] - closure(xm, t)[j]) / (2.0 * h);
            xp[j] = x[j];
            xm[j] = x[j];
        }
        return acc;
    }
};

// (1/N) sum_j K(x_i - x_j) for every i against an immutable snapshot.
inline Vec empirical_kernel_average(const SdeModel& model, const Vec& positions, int n) {
    const int d = model.dim;
    Vec out(static_cast<std::size_t>(n) * d, 0.0);
    if (model.interaction.kind == InteractionKernel::Kind::None) return out;
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        Vec diff(d);
        std::vector<KahanSum> acc(d);
        for (int j = 0; j < n; ++j) {
            for (int k = 0; k < d; ++k)
                diff[k] = positions[i * d + k] - positions[static_cast<std::size_t>(j) * d + k];
            Vec kv = eval_kernel(model, diff);
            for (int k = 0; k < d; ++k) acc[k].add(kv[k]);
        }
        for (int k = 0; k < d; ++k) out[i * d + k] = acc[k].value() / n;
    });
    return out;
}

namespace detail {

// Score values for every particle; batched for networks.
inline Vec eval_scores(const ScoreField& field, const Vec& positions, int n, int d, double t) {
    Vec out(static_cast<std::size_t>(n) * d);
    if (field.net) {
        parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t, std::size_t b, std::size_t e) {
            thread_local NetBatch ws;
            batch_forward(*field.net, positions.data() + b * d, e - b, ws);
            for (std::size_t i = 0; i < (e - b) * d; ++i) out[b * d + i] = ws.act.back()[i];
        });
    } else {
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            Vec x(positions.begin() + i * d, positions.begin() + (i + 1) * d);
            Vec s = field.closure(x, t);
            for (int k = 0; k < d; ++k) out[i * d + k] = s[k];
        });
    }
    return out;
}

inline ParticleEnsemble propagate(const ParticleEnsemble& ens, const ScoreField& field,
                                  const SdeModel& model, const LevyQuadrature& quad, double dt,
                                  bool empirical_interaction) {
    require(dt >= 0.0, "propagate: dt must be nonnegative");
    const int n = ens.n, d = ens.d;
    ParticleEnsemble out = ens;
    if (dt == 0.0) return out;
    Vec comp = compensator(quad, model, ens.time);
    Vec scores = eval_scores(field, ens.positions, n, d, ens.time);
    Vec kbar;
    if (empirical_interaction) kbar = empirical_kernel_average(model, ens.positions, n);

    std::vector<int> bad(1 + (n - 1) / static_cast<int>(kParallelChunk), -1);
    parallel_chunks(static_cast<std::size_t>(n), [&](std::size_t c, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            Vec x(ens.positions.begin() + i * d, ens.positions.begin() + (i + 1) * d);
            Vec v = eval_hat_drift(model, x, ens.time, comp);
            for (int k = 0; k < d; ++k) {
                v[k] -= scores[i * d + k];
                if (empirical_interaction) v[k] += kbar[i * d + k];
                double nx = x[k] + dt * v[k];
                if (!std::isfinite(nx) && bad[c] < 0) bad[c] = static_cast<int>(i);
                out.positions[i * d + k] = nx;
            }
            if (model.domain == Domain::Torus) {
                Vec w = model.wrap(Vec(out.positions.begin() + i * d, out.positions.begin() + (i + 1) * d));
                for (int k = 0; k < d; ++k) out.positions[i * d + k] = w[k];
            }
        }
    });
    for (int b : bad)
        if (b >= 0) throw NumericError("non-finite propagation update at particle " + std::to_string(b));
    out.time = ens.time + dt;
    return out;
}

} // namespace detail

// Algorithm-1 propagation: x += dt [ b - Lambda comp - (1/2) div Sigma - s ];
// the interaction lives inside the trained score.
inline ParticleEnsemble propagate_alg1(const ParticleEnsemble& ens, const ScoreField& field,
                                       const SdeModel& model, const LevyQuadrature& quad, double dt) {
    return detail::propagate(ens, field, model, quad, dt, false);
}

inline ParticleEnsemble propagate_alg1(const ParticleEnsemble& ens, const ScoreNetwork& net,
                                       const SdeModel& model, const LevyQuadrature& quad, double dt) {
    return propagate_alg1(ens, ScoreField{&net, nullptr}, model, quad, dt);
}

// Algorithm-2 propagation: adds the empirical O(N^2) interaction sum; the
// score was trained without the interaction term.
inline ParticleEnsemble propagate_alg2(const ParticleEnsemble& ens, const ScoreField& field,
                                       const SdeModel& model, const LevyQuadrature& quad, double dt) {
    return detail::propagate(ens, field, model, quad, dt, true);
}

inline ParticleEnsemble propagate_alg2(const ParticleEnsemble& ens, const ScoreNetwork& net,
                                       const SdeModel& model, const LevyQuadrature& quad, double dt) {
    return propagate_alg2(ens, ScoreField{&net, nullptr}, model, quad, dt);
}

// Along-flow density update, log p -= dt * div f at the pre-step positions,
// where div f = div[b - Lambda comp - (1/2) div Sigma] - div s (+ the
// empirical kernel divergence when the interaction is outside the score).
inline ParticleEnsemble update_log_density(const ParticleEnsemble& ens, const ScoreField& field,
                                           const SdeModel& model, const LevyQuadrature& quad,
                                           double dt, bool empirical_interaction = false) {
    require(!ens.log_density.empty(), "update_log_density: ensemble does not track log-density");
    const int n = ens.n, d = ens.d;
    ParticleEnsemble out = ens;
    Vec comp = compensator(quad, model, ens.time);
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        Vec x(ens.positions.begin() + i * d, ens.positions.begin() + (i + 1) * d);
        double div_base;
        if (model.flow_div_nonscore) {
            div_base = model.flow_div_nonscore(x, ens.time, comp);
        } else {
            const double h = 1e-5;
            div_base = 0.0;
            Vec xp = x, xm = x;
            for (int j = 0; j < d; ++j) {
                xp[j] = x[j] + h;
                xm[j] = x[j] - h;
                div_base += (eval_hat_drift(model, xp, ens.time, comp)[j] -
                             eval_hat_drift(model, xm, ens.time, comp)[j]) / (2.0 * h);
                xp[j] = x[j];
                xm[j] = x[j];
            }
        }
        double div_inter = 0.0;
        if (empirical_interaction && model.interaction.kind != InteractionKernel::Kind::None) {
            switch (model.interaction.kind) {
                case InteractionKernel::Kind::Linear:
                    div_inter = d;
                    break;
                case InteractionKernel::Kind::BiotSavart:
                    div_inter = 0.0;  // divergence-free, also with the regularizer
                    break;
                default: {
                    const double h = 1e-5;
                    Vec diff(d);
                    KahanSum acc;
                    for (int j = 0; j < n; ++j) {
                        for (int k = 0; k < d; ++k) {
                            for (int kk = 0; kk < d; ++kk)
                                diff[kk] = x[kk] - ens.positions[static_cast<std::size_t>(j) * d + kk];
                            diff[k] += h;
                            double up = eval_kernel(model, diff)[k];
                            diff[k] -= 2.0 * h;
                            double dn = eval_kernel(model, diff)[k];
                            acc.add((up - dn) / (2.0 * h));
                        }
                    }
                    div_inter = acc.value() / n;
                }
            }
        }
        double div_f = div_base + div_inter - field.div(x, ens.time);
        out.log_density[i] = ens.log_density[i] - dt * div_f;
        require_finite(out.log_density[i], "log-density update");
    });
    return out;
}

inline ParticleEnsemble update_log_density(const ParticleEnsemble& ens, const ScoreNetwork& net,
                                           const SdeModel& model, const LevyQuadrature& quad, double dt) {
    return update_log_density(ens, ScoreField{&net, nullptr}, model, quad, dt);
}

struct Checkpoint {
    int step = 0;
    double time = 0.0;
    Vec positions;
    Vec log_density;
};

struct TrajectoryRecord {
    std::string engine;
    int n = 0;
    int d = 0;
    double dt = 0.0;
    std::vector<Checkpoint> checkpoints;
    Vec step_losses;          // sbtm only: final training loss per step
    Vec initial_fit = {};     // sbtm only: [relative loss, iterations]
};

namespace detail {

inline int resolve_cadence(const ExperimentConfig& cfg, int d) {
    if (cfg.checkpoint_every > 0) return cfg.checkpoint_every;
    return d == 1 ? 1 : 10;
}

inline ParticleEnsemble initial_ensemble(const BuiltModel& built, const ExperimentConfig& cfg,
                                         int count, bool track_density) {
    ParticleEnsemble ens;
    ens.n = count;
    ens.d = built.model.dim;
    ens.time = 0.0;
    ens.seed_lineage = cfg.seed;
    ens.positions.resize(static_cast<std::size_t>(count) * ens.d);
    if (track_density) ens.log_density.resize(count);
    for (int i = 0; i < count; ++i) {
        RngStream rng(cfg.seed, static_cast<std::uint64_t>(i));
        Vec x = built.mu0.sample(rng);
        for (int k = 0; k < ens.d; ++k) ens.positions[static_cast<std::size_t>(i) * ens.d + k] = x[k];
        if (track_density) ens.log_density[i] = std::log(built.mu0.density(x));
    }
    return ens;
}

} // namespace detail

// The sequential score-based transport loop: train the per-step score on the
// current ensemble, then push the particles with the learned velocity field.
inline TrajectoryRecord run_sbtm(const ExperimentConfig& cfg,
                                 const std::function<void(int, int, double)>& telemetry = nullptr,
                                 const std::function<void(int, const ScoreNetwork&)>& score_sink = nullptr) {
    cfg.validate();
    BuiltModel built = build_example(cfg);
    const SdeModel& model = built.model;
    if (model.interaction.kind != InteractionKernel::Kind::None)
        require(cfg.n_particles >= 2, "interactive models need at least 2 particles");

    const int nt = cfg.n_steps();
    const int cadence = detail::resolve_cadence(cfg, model.dim);
    TrajectoryRecord rec;
    rec.engine = "sbtm";
    rec.n = cfg.n_particles;
    rec.d = model.dim;
    rec.dt = cfg.dt;

    ParticleEnsemble ens = detail::initial_ensemble(built, cfg, cfg.n_particles, cfg.track_density);
    rec.checkpoints.push_back({0, 0.0, ens.positions, ens.log_density});

    ScoreField field;
    ScoreNetwork net;
    AdamState state;
    if (cfg.score_mode == ScoreMode::Exact) {
        require(static_cast<bool>(model.exact_score),
                "score_mode=exact requires a model with an analytic score closure");
        field.closure = model.exact_score;
    } else {
        net = make_network(default_layer_dims(model.dim), cfg.seed);
        state = AdamState::init(net, cfg.learning_rate);
        auto mu0 = built.mu0;
        InitialFitResult fit = fit_initial_score(
            net, model, built.quad, ens.positions, ens.n,
            [mu0](const Vec& x) { return mu0.density(x); },
            [mu0](const Vec& x) { return mu0.grad_log(x); }, state, cfg.initial_fit_budget, 0.0,
            cfg.variant == Variant::Alg1);
        rec.initial_fit = {fit.relative_loss, static_cast<double>(fit.iterations)};
        field.net = &net;
    }

    const LossVariant lvariant = cfg.variant == Variant::Alg1 ? LossVariant::WithInteraction
                                                              : LossVariant::WithoutInteraction;
    for (int k = 0; k < nt; ++k) {
        double tk = k * cfg.dt;
        ens.time = tk;
        try {
            if (cfg.score_mode == ScoreMode::Network) {
                BatchLossSpec spec = build_batch_loss_spec(ens.positions, ens.n, tk, lvariant,
                                                           model, built.quad);
                auto iter_telemetry = telemetry
                    ? std::function<void(int, double)>([&, k](int it, double loss) { telemetry(k, it, loss); })
                    : std::function<void(int, double)>();
                double loss = train_step(net, state, spec, cfg.train_budget, iter_telemetry);
                rec.step_losses.push_back(loss);
                if (score_sink) score_sink(k, net);
            }
            if (cfg.track_density)
                ens = update_log_density(ens, field, model, built.quad, cfg.dt,
                                         cfg.variant == Variant::Alg2);
            ens = cfg.variant == Variant::Alg1
                      ? propagate_alg1(ens, field, model, built.quad, cfg.dt)
                      : propagate_alg2(ens, field, model, built.quad, cfg.dt);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (sbtm step " + std::to_string(k) + ")");
        }
        if ((k + 1) % cadence == 0 || k + 1 == nt)
            rec.checkpoints.push_back({k + 1, (k + 1) * cfg.dt, ens.positions, ens.log_density});
    }
    return rec;
}

} // namespace levysbtm
