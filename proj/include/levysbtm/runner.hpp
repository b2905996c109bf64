#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/eval.hpp"
#include "levysbtm/io.hpp"
#include "levysbtm/mcref.hpp"
#include "levysbtm/plot.hpp"
#include "levysbtm/transport.hpp"
#include "levysbtm/version.hpp"

#include <json.hpp>

namespace levysbtm {

struct RunResult {
    std::string out_dir;
    std::vector<MetricRow> metrics;
    std::optional<TrajectoryRecord> sbtm;
    std::optional<TrajectoryRecord> mc;
};

namespace detail {

inline void write_trajectory(const std::string& dir, const TrajectoryRecord& rec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    for (const auto& cp : rec.checkpoints) {
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_%06d.csv", cp.step);
        write_checkpoint_csv(dir + "/" + name, cp, rec.n, rec.d);
    }
}

inline int resolve_metric_cadence(const ExperimentConfig& cfg, int d) {
    int base = resolve_cadence(cfg, d);
    return cfg.metric_every > 0 ? cfg.metric_every : base;
}

} // namespace detail

// Full experiment: requested engines, aligned metrics, artifact emission.
inline RunResult run_experiment(const ExperimentConfig& cfg, bool concurrent_engines = false) {
    namespace fs = std::filesystem;
    cfg.validate();
    BuiltModel built = build_example(cfg);   // fail early on model/override problems
    const int d = built.model.dim;

    auto t_start = std::chrono::steady_clock::now();
    fs::create_directories(cfg.output_dir);

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["config_hash"] = config_hash(cfg);
    manifest["example"] = cfg.example;
    manifest["variant"] = cfg.variant == Variant::Alg1 ? "alg1" : "alg2";
    manifest["seed"] = cfg.seed;
    manifest["n_particles"] = cfg.n_particles;
    manifest["dt"] = cfg.dt;
    manifest["t_final"] = cfg.t_final;
    manifest["incomplete"] = true;
    auto dump_manifest = [&]() {
        std::ofstream out(cfg.output_dir + "/manifest.json");
        out << manifest.dump(2) << "\n";
    };
    dump_manifest();

    RunResult result;
    result.out_dir = cfg.output_dir;
    bool want_sbtm = cfg.engines != EngineSet::Mc;
    bool want_mc = cfg.engines != EngineSet::Sbtm;

    std::unique_ptr<TelemetryWriter> telemetry;
    if (want_sbtm && cfg.verbose_telemetry)
        telemetry = std::make_unique<TelemetryWriter>(cfg.output_dir + "/training_log.csv");

    try {
        auto run_sbtm_engine = [&]() {
            std::function<void(int, int, double)> tcb;
            if (telemetry)
                tcb = [&](int step, int it, double loss) { telemetry->row(step, it, loss); };
            std::function<void(int, const ScoreNetwork&)> sink;
            if (cfg.checkpoint_scores) {
                fs::create_directories(cfg.output_dir + "/scores");
                sink = [&](int step, const ScoreNetwork& net) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "step_%06d.json", step);
                    save_network(net, cfg.output_dir + "/scores/" + name);
                };
            }
            result.sbtm = run_sbtm(cfg, tcb, sink);
        };
        auto run_mc_engine = [&]() { result.mc = em_run(cfg); };

        if (want_sbtm && want_mc && concurrent_engines) {
            std::exception_ptr mc_error;
            std::thread mc_thread([&] {
                try {
                    run_mc_engine();
                } catch (...) {
                    mc_error = std::current_exception();
                }
            });
            run_sbtm_engine();
            mc_thread.join();
            if (mc_error) std::rethrow_exception(mc_error);
        } else {
            if (want_sbtm) run_sbtm_engine();
            if (want_mc) run_mc_engine();
        }
    } catch (...) {
        manifest["error"] = "engine failure";
        dump_manifest();
        throw;
    }

    if (result.sbtm) detail::write_trajectory(cfg.output_dir + "/sbtm", *result.sbtm);
    if (result.mc) detail::write_trajectory(cfg.output_dir + "/mc", *result.mc);

    if (result.sbtm && result.mc) {
        const int bins = cfg.bins_per_dim > 0 ? cfg.bins_per_dim : default_bins(d);
        const int metric_cadence = detail::resolve_metric_cadence(cfg, d);
        const auto& scp = result.sbtm->checkpoints;
        const auto& mcp = result.mc->checkpoints;
        require(scp.size() == mcp.size(), "engine checkpoints are misaligned");
        for (std::size_t i = 0; i < scp.size(); ++i) {
            require(scp[i].step == mcp[i].step, "engine checkpoints are misaligned");
            bool is_metric = scp[i].step % metric_cadence == 0 || i + 1 == scp.size();
            if (!is_metric) continue;
            MetricRow row;
            row.time = scp[i].time;
            row.tv = tv_distance(scp[i].positions, result.sbtm->n, mcp[i].positions, result.mc->n, d, bins);
            row.kl = kl_divergence_binned(scp[i].positions, result.sbtm->n, mcp[i].positions,
                                          result.mc->n, d, bins);
            row.notes = "bins=" + std::to_string(bins);
            result.metrics.push_back(std::move(row));
        }
        write_metrics_csv(cfg.output_dir + "/metrics.csv", result.metrics);
        plot_tv_series(result.metrics, cfg.output_dir + "/tv.svg");
    }

    auto t_end = std::chrono::steady_clock::now();
    manifest["incomplete"] = false;
    manifest["wall_clock_seconds"] = std::chrono::duration<double>(t_end - t_start).count();
    if (result.sbtm) {
        manifest["engines"].push_back("sbtm");
        manifest["step_losses"] = result.sbtm->step_losses;
        if (!result.sbtm->initial_fit.empty()) {
            manifest["initial_fit_relative_loss"] = result.sbtm->initial_fit[0];
            manifest["initial_fit_iterations"] = static_cast<int>(result.sbtm->initial_fit[1]);
        }
        for (const auto& cp : result.sbtm->checkpoints) manifest["checkpoint_times"].push_back(cp.time);
    }
    if (result.mc) {
        manifest["engines"].push_back("mc");
        if (!result.sbtm)
            for (const auto& cp : result.mc->checkpoints) manifest["checkpoint_times"].push_back(cp.time);
    }
    if (!result.metrics.empty()) {
        double worst = 0.0;
        for (const auto& r : result.metrics) worst = std::max(worst, r.tv);
        manifest["max_tv"] = worst;
    }
    dump_manifest();
    return result;
}

} // namespace levysbtm
