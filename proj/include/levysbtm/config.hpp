#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"

#include <json.hpp>

namespace levysbtm {

enum class Variant { Alg1, Alg2 };          // interaction inside / outside the score
enum class EngineSet { Sbtm, Mc, Both };
enum class ScoreMode { Network, Exact };

struct ExperimentConfig {
    std::string example = "ex1";   // catalog key
    Variant variant = Variant::Alg1;
    int n_particles = 1000;
    double dt = 1e-3;
    double t_final = 1.0;
    std::uint64_t seed = 1;

    int n_r = 64;
    int n_lambda = 16;
    std::string quad_rule = "trapezoid";   // or "gauss"

    int train_budget = 100;          // Adam iterations per time step
    int initial_fit_budget = 4000;   // Adam iterations for the t0 score fit
    double learning_rate = 1e-4;

    int checkpoint_every = 0;        // 0 = dimension-based default (1 for d=1, 10 otherwise)
    int metric_every = 0;            // 0 = same as checkpoint cadence
    int bins_per_dim = 0;            // 0 = dimension-based default (50 / 30 / 16)
    double kde_bandwidth = 0.0;      // 0 = Scott's rule

    std::string output_dir = "out";
    EngineSet engines = EngineSet::Both;
    int mc_samples = 0;              // 0 = n_particles
    ScoreMode score_mode = ScoreMode::Network;
    bool track_density = false;
    bool checkpoint_scores = false;
    bool verbose_telemetry = false;

    // Model overrides; empty = example defaults.
    Vec mu0_mean;
    Vec mu0_std;
    double alpha = 0.0;              // ex2 stability index override

    int n_steps() const { return static_cast<int>(std::llround(t_final / dt)); }

    void validate() const {
        require(n_particles >= 1, "n_particles must be positive");
        require(dt > 0.0, "dt must be positive");
        require(t_final >= 0.0, "t_final must be nonnegative");
        int nt = n_steps();
        require(nt >= 0, "t_final/dt must round to a nonnegative step count");
        require(std::fabs(nt * dt - t_final) <= 1e-12 * std::max(1.0, t_final),
                "t_final must be an integer multiple of dt");
        require(n_r >= 2, "n_r must be >= 2");
        require(n_lambda >= 2, "n_lambda must be >= 2");
        require(quad_rule == "trapezoid" || quad_rule == "gauss", "quad_rule must be trapezoid|gauss");
        require(train_budget >= 0, "train_budget must be >= 0");
        require(initial_fit_budget >= 0, "initial_fit_budget must be >= 0");
        require(learning_rate > 0.0, "learning_rate must be positive");
        require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
        require(metric_every >= 0, "metric_every must be >= 0");
        require(bins_per_dim >= 0, "bins_per_dim must be >= 0");
        require(kde_bandwidth >= 0.0, "kde_bandwidth must be >= 0");
        require(mc_samples >= 0, "mc_samples must be >= 0");
        require(mu0_mean.size() == mu0_std.size() || mu0_std.empty() || mu0_mean.empty(),
                "mu0_mean and mu0_std must have equal lengths");
        for (double s : mu0_std) require(s > 0.0, "mu0_std entries must be positive");
        if (alpha != 0.0) require(alpha > 1.0 && alpha <= 2.0, "alpha must be in (1,2]");
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Raw key/value view of a config file. Values keep their source text
// (quotes stripped for strings); arrays are stored elementwise.
struct RawConfig {
    std::map<std::string, std::string> scalars;
    std::map<std::string, std::vector<std::string>> arrays;

    bool has(const std::string& k) const {
        return scalars.count(k) > 0 || arrays.count(k) > 0;
    }
};

inline std::string strip_comment(const std::string& line) {
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_str = !in_str;
        if (line[i] == '#' && !in_str) return line.substr(0, i);
    }
    return line;
}

inline std::string unquote(const std::string& v, int lineno) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    if (!v.empty() && v.front() == '"')
        throw ConfigError("line " + std::to_string(lineno) + ": unterminated string");
    return v;
}

inline RawConfig parse_flat_toml(std::istream& in) {
    RawConfig raw;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[')
            throw ConfigError("line " + std::to_string(lineno) + ": tables are not supported, use flat keys");
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty() || val.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
        if (val.front() == '[') {
            if (val.back() != ']')
                throw ConfigError("line " + std::to_string(lineno) + ": unterminated array");
            std::vector<std::string> items;
            std::string body = val.substr(1, val.size() - 2);
            std::stringstream ss(body);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (!item.empty()) items.push_back(unquote(item, lineno));
            }
            raw.arrays[key] = std::move(items);
        } else {
            raw.scalars[key] = unquote(val, lineno);
        }
    }
    return raw;
}

inline RawConfig parse_json_config(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("invalid JSON config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("JSON config must be an object");
    RawConfig raw;
    for (auto& [key, val] : j.items()) {
        if (val.is_array()) {
            std::vector<std::string> items;
            for (auto& e : val) items.push_back(e.is_string() ? e.get<std::string>() : e.dump());
            raw.arrays[key] = std::move(items);
        } else if (val.is_string()) {
            raw.scalars[key] = val.get<std::string>();
        } else {
            raw.scalars[key] = val.dump();
        }
    }
    return raw;
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("field '" + key + "': expected a number, got '" + v + "'");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("field '" + key + "': expected an integer, got '" + v + "'");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("field '" + key + "': expected true|false, got '" + v + "'");
}

} // namespace detail

inline ExperimentConfig config_from_raw(const detail::RawConfig& raw) {
    using namespace detail;
    ExperimentConfig c;
    static const char* known[] = {
        "example", "variant", "n_particles", "dt", "t_final", "seed", "n_r", "n_lambda",
        "quad_rule", "train_budget", "initial_fit_budget", "learning_rate", "checkpoint_every",
        "metric_every", "bins_per_dim", "kde_bandwidth", "output_dir", "engines", "mc_samples",
        "score_mode", "track_density", "checkpoint_scores", "verbose_telemetry",
        "mu0_mean", "mu0_std", "alpha"};
    for (const auto& [k, v] : raw.scalars) {
        bool ok = false;
        for (const char* n : known) ok |= (k == n);
        if (!ok) throw ConfigError("unknown config field '" + k + "'");
        (void)v;
    }
    for (const auto& [k, v] : raw.arrays) {
        if (k != "mu0_mean" && k != "mu0_std")
            throw ConfigError("field '" + k + "' does not accept an array");
        (void)v;
    }
    auto str = [&](const char* k, std::string dflt) {
        auto it = raw.scalars.find(k);
        return it == raw.scalars.end() ? dflt : it->second;
    };
    auto num = [&](const char* k, double dflt) {
        auto it = raw.scalars.find(k);
        return it == raw.scalars.end() ? dflt : to_double(k, it->second);
    };
    auto inum = [&](const char* k, long long dflt) {
        auto it = raw.scalars.find(k);
        return it == raw.scalars.end() ? dflt : to_int(k, it->second);
    };
    auto flag = [&](const char* k, bool dflt) {
        auto it = raw.scalars.find(k);
        return it == raw.scalars.end() ? dflt : to_bool(k, it->second);
    };

    c.example = str("example", c.example);
    std::string variant = str("variant", "alg1");
    if (variant == "alg1") c.variant = Variant::Alg1;
    else if (variant == "alg2") c.variant = Variant::Alg2;
    else throw ConfigError("field 'variant': expected alg1|alg2, got '" + variant + "'");

    c.n_particles = static_cast<int>(inum("n_particles", c.n_particles));
    c.dt = num("dt", c.dt);
    c.t_final = num("t_final", c.t_final);
    c.seed = static_cast<std::uint64_t>(inum("seed", static_cast<long long>(c.seed)));
    c.n_r = static_cast<int>(inum("n_r", c.n_r));
    c.n_lambda = static_cast<int>(inum("n_lambda", c.n_lambda));
    c.quad_rule = str("quad_rule", c.quad_rule);
    c.train_budget = static_cast<int>(inum("train_budget", c.train_budget));
    c.initial_fit_budget = static_cast<int>(inum("initial_fit_budget", c.initial_fit_budget));
    c.learning_rate = num("learning_rate", c.learning_rate);
    c.checkpoint_every = static_cast<int>(inum("checkpoint_every", c.checkpoint_every));
    c.metric_every = static_cast<int>(inum("metric_every", c.metric_every));
    c.bins_per_dim = static_cast<int>(inum("bins_per_dim", c.bins_per_dim));
    c.kde_bandwidth = num("kde_bandwidth", c.kde_bandwidth);
    c.output_dir = str("output_dir", c.output_dir);
    std::string engines = str("engines", "both");
    if (engines == "sbtm") c.engines = EngineSet::Sbtm;
    else if (engines == "mc") c.engines = EngineSet::Mc;
    else if (engines == "both") c.engines = EngineSet::Both;
    else throw ConfigError("field 'engines': expected sbtm|mc|both, got '" + engines + "'");
    c.mc_samples = static_cast<int>(inum("mc_samples", c.mc_samples));
    std::string mode = str("score_mode", "network");
    if (mode == "network") c.score_mode = ScoreMode::Network;
    else if (mode == "exact") c.score_mode = ScoreMode::Exact;
    else throw ConfigError("field 'score_mode': expected network|exact, got '" + mode + "'");
    c.track_density = flag("track_density", c.track_density);
    c.checkpoint_scores = flag("checkpoint_scores", c.checkpoint_scores);
    c.verbose_telemetry = flag("verbose_telemetry", c.verbose_telemetry);
    if (auto it = raw.arrays.find("mu0_mean"); it != raw.arrays.end())
        for (const auto& s : it->second) c.mu0_mean.push_back(detail::to_double("mu0_mean", s));
    if (auto it = raw.arrays.find("mu0_std"); it != raw.arrays.end())
        for (const auto& s : it->second) c.mu0_std.push_back(detail::to_double("mu0_std", s));
    c.alpha = num("alpha", c.alpha);

    c.validate();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    bool json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    auto raw = json ? detail::parse_json_config(in) : detail::parse_flat_toml(in);
    return config_from_raw(raw);
}

// Canonical serialization used for the manifest's config hash.
inline std::string canonical_config_text(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "example=" << c.example << "\nvariant=" << (c.variant == Variant::Alg1 ? "alg1" : "alg2")
       << "\nn_particles=" << c.n_particles << "\ndt=" << c.dt << "\nt_final=" << c.t_final
       << "\nseed=" << c.seed << "\nn_r=" << c.n_r << "\nn_lambda=" << c.n_lambda
       << "\nquad_rule=" << c.quad_rule << "\ntrain_budget=" << c.train_budget
       << "\ninitial_fit_budget=" << c.initial_fit_budget << "\nlearning_rate=" << c.learning_rate
       << "\ncheckpoint_every=" << c.checkpoint_every << "\nmetric_every=" << c.metric_every
       << "\nbins_per_dim=" << c.bins_per_dim << "\nkde_bandwidth=" << c.kde_bandwidth
       << "\nengines=" << (c.engines == EngineSet::Sbtm ? "sbtm" : c.engines == EngineSet::Mc ? "mc" : "both")
       << "\nmc_samples=" << c.mc_samples
       << "\nscore_mode=" << (c.score_mode == ScoreMode::Network ? "network" : "exact")
       << "\ntrack_density=" << c.track_density << "\ncheckpoint_scores=" << c.checkpoint_scores
       << "\nalpha=" << c.alpha << "\nmu0_mean=";
    for (double v : c.mu0_mean) os << v << ",";
    os << "\nmu0_std=";
    for (double v : c.mu0_std) os << v << ",";
    os << "\n";
    return os.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
    std::string text = canonical_config_text(c);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace levysbtm
