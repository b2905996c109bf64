// Command-line front end: experiment orchestration, validation, plotting, and
// oracle access for test tooling.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "levysbtm/catalog.hpp"
#include "levysbtm/eval.hpp"
#include "levysbtm/io.hpp"
#include "levysbtm/plot.hpp"
#include "levysbtm/quad.hpp"
#include "levysbtm/runner.hpp"
#include "levysbtm/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace fs = std::filesystem;
using namespace levysbtm;

namespace {

Vec parse_point(const std::string& s) {
    Vec out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
    return out;
}

std::vector<Checkpoint> load_run_checkpoints(const std::string& dir, const std::string& engine,
                                             int& n, int& d) {
    std::string sub = dir + "/" + engine;
    if (!fs::is_directory(sub)) throw ConfigError("no '" + engine + "' checkpoints under '" + dir + "'");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(sub)) {
        std::string name = e.path().filename().string();
        if (name.rfind("checkpoint_", 0) == 0 && name.size() > 4 &&
            name.substr(name.size() - 4) == ".csv")
            files.push_back(e.path().string());
    }
    require(!files.empty(), "no checkpoint csv files under '" + sub + "'");
    std::sort(files.begin(), files.end());
    std::vector<Checkpoint> cps;
    for (const auto& f : files) {
        Checkpoint cp = read_checkpoint_csv(f, n, d);
        std::string stem = fs::path(f).stem().string();
        cp.step = std::stoi(stem.substr(stem.find('_') + 1));
        cps.push_back(std::move(cp));
    }
    return cps;
}

int do_run(const std::string& config_path, bool concurrent) {
    ExperimentConfig cfg = load_config(config_path);
    RunResult res = run_experiment(cfg, concurrent);
    std::cout << res.out_dir << "\n";
    if (!res.metrics.empty()) {
        double worst = 0.0;
        for (const auto& r : res.metrics) worst = std::max(worst, r.tv);
        std::cout << "max TV over " << res.metrics.size() << " metric checkpoints: " << worst << "\n";
    }
    return 0;
}

int do_validate(const std::string& config_path) {
    ExperimentConfig cfg = load_config(config_path);
    BuiltModel built = build_example(cfg);
    std::cout << "ok: example=" << cfg.example << " d=" << built.model.dim
              << " N=" << cfg.n_particles << " steps=" << cfg.n_steps()
              << " hash=" << config_hash(cfg) << "\n";
    if (built.model.unbounded_kernel_warning)
        std::cout << "warning: interaction kernel violates the boundedness assumption\n";
    return 0;
}

int do_plot(const std::string& input, const std::string& kind, std::string out,
            const std::string& engine, const std::string& steps_arg) {
    if (kind == "tv_series") {
        std::string csv = fs::is_directory(input) ? input + "/metrics.csv" : input;
        if (out.empty()) out = (fs::path(csv).parent_path() / "tv.svg").string();
        plot_tv_series(read_metrics_csv(csv), out);
    } else {
        require(fs::is_directory(input), "heatmap/kde_panel need a run directory");
        int n = 0, d = 0;
        auto cps = load_run_checkpoints(input, engine, n, d);
        if (kind == "heatmap") {
            require(d == 1, "heatmap requires a 1-D trajectory");
            if (out.empty()) out = input + "/heatmap.svg";
            plot_heatmap(cps, n, out);
        } else if (kind == "kde_panel") {
            require(d == 2, "kde_panel requires a 2-D trajectory");
            std::vector<int> steps;
            if (!steps_arg.empty())
                for (double v : parse_point(steps_arg)) steps.push_back(static_cast<int>(v));
            else
                steps = {0, 40, 100, 250};
            if (out.empty()) out = input + "/kde_panel.svg";
            plot_kde_panel(cps, n, steps, out);
        } else {
            throw ConfigError("unknown plot kind '" + kind + "'");
        }
    }
    std::cout << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Levy score-based transport modeling for jump-diffusion SDEs"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path, plot_input, plot_kind = "tv_series", plot_out, plot_engine = "sbtm";
    std::string plot_steps;
    bool concurrent = false;

    auto* run_cmd = app.add_subcommand("run", "execute the engines described by a config file");
    run_cmd->add_option("config", config_path, "TOML or JSON config")->required();
    run_cmd->add_flag("--concurrent-engines", concurrent, "run sbtm and mc on separate threads");

    auto* val_cmd = app.add_subcommand("validate", "parse and validate a config file");
    val_cmd->add_option("config", config_path, "TOML or JSON config")->required();

    auto* plot_cmd = app.add_subcommand("plot", "render an SVG from run artifacts");
    plot_cmd->add_option("input", plot_input, "metrics.csv or run directory")->required();
    plot_cmd->add_option("--kind", plot_kind, "tv_series|heatmap|kde_panel");
    plot_cmd->add_option("--out", plot_out, "output SVG path");
    plot_cmd->add_option("--engine", plot_engine, "sbtm|mc (directory inputs)");
    plot_cmd->add_option("--steps", plot_steps, "comma-separated checkpoint steps for kde_panel");

    auto* oracle_cmd = app.add_subcommand("oracle", "expose quadrature/score oracles");
    std::string oracle_example = "ex1", oracle_x = "0", oracle_kind;
    double oracle_t = 0.0, oracle_alpha = 1.5;
    int oracle_nr = 64, oracle_nl = 16;
    oracle_cmd->add_option("what", oracle_kind, "compensator|levyscore|fractional")->required();
    oracle_cmd->add_option("--example", oracle_example, "catalog key");
    oracle_cmd->add_option("--x", oracle_x, "evaluation point, comma separated");
    oracle_cmd->add_option("--t", oracle_t, "time");
    oracle_cmd->add_option("--alpha", oracle_alpha, "stability index");
    oracle_cmd->add_option("--n-r", oracle_nr, "mark nodes per window branch");
    oracle_cmd->add_option("--n-lambda", oracle_nl, "lambda nodes");

    try {
        app.parse(argc, argv);

        if (*run_cmd) return do_run(config_path, concurrent);
        if (*val_cmd) return do_validate(config_path);
        if (*plot_cmd) return do_plot(plot_input, plot_kind, plot_out, plot_engine, plot_steps);
        if (*oracle_cmd) {
            nlohmann::json j;
            if (oracle_kind == "fractional") {
                auto gauss = [](double v) { return std::exp(-0.5 * v * v) / 2.5066282746310005024; };
                auto [lhs, rhs] = fractional_score_check(oracle_alpha, gauss, parse_point(oracle_x)[0]);
                j["lhs"] = lhs;
                j["rhs"] = rhs;
            } else {
                ExperimentConfig cfg;
                cfg.example = oracle_example;
                cfg.n_r = oracle_nr;
                cfg.n_lambda = oracle_nl;
                BuiltModel built = build_example(cfg);
                if (oracle_kind == "compensator") {
                    j["compensator"] = compensator(built.quad, built.model, oracle_t);
                } else if (oracle_kind == "levyscore") {
                    auto mu0 = built.mu0;
                    Vec x = parse_point(oracle_x);
                    require(static_cast<int>(x.size()) == built.model.dim, "--x has wrong dimension");
                    j["score"] = levy_score_oracle(
                        built.quad, built.model, [mu0](const Vec& p) { return mu0.density(p); }, x, oracle_t);
                    j["density"] = "mu0";
                } else {
                    throw ConfigError("unknown oracle '" + oracle_kind + "'");
                }
            }
            std::cout << j.dump(2) << "\n";
            return 0;
        }
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
