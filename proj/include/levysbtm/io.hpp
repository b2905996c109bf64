#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/config.hpp"
#include "levysbtm/transport.hpp"

#include <json.hpp>

namespace levysbtm {

// Round-trip float formatting so CSV bytes are reproducible and lossless.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void write_checkpoint_csv(const std::string& path, const Checkpoint& cp, int n, int d) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "particle";
    for (int k = 0; k < d; ++k) out << ",x" << (k + 1);
    if (!cp.log_density.empty()) out << ",log_density";
    out << "\n";
    for (int i = 0; i < n; ++i) {
        out << i;
        for (int k = 0; k < d; ++k)
            out << "," << fmt_double(cp.positions[static_cast<std::size_t>(i) * d + k]);
        if (!cp.log_density.empty()) out << "," << fmt_double(cp.log_density[i]);
        out << "\n";
    }
}

inline Checkpoint read_checkpoint_csv(const std::string& path, int& n, int& d) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::string header;
    std::getline(in, header);
    int cols = 1;
    for (char c : header) cols += (c == ',');
    bool has_ld = header.find("log_density") != std::string::npos;
    d = cols - 1 - (has_ld ? 1 : 0);
    require(d >= 1, "checkpoint csv '" + path + "' has no coordinate columns");
    Checkpoint cp;
    std::string line;
    n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');  // particle id
        for (int k = 0; k < d; ++k) {
            std::getline(ss, field, ',');
            cp.positions.push_back(std::stod(field));
        }
        if (has_ld) {
            std::getline(ss, field, ',');
            cp.log_density.push_back(std::stod(field));
        }
        ++n;
    }
    return cp;
}

struct MetricRow {
    double time = 0.0;
    double tv = 0.0;
    double kl = 0.0;
    std::string notes;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << "time,tv,kl,notes\n";
    for (const auto& r : rows)
        out << fmt_double(r.time) << "," << fmt_double(r.tv) << "," << fmt_double(r.kl) << ","
            << r.notes << "\n";
}

inline std::vector<MetricRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read '" + path + "'");
    std::string line;
    std::getline(in, line);
    require(line.rfind("time,tv,kl", 0) == 0, "'" + path + "' is not a metrics csv");
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f;
        MetricRow r;
        std::getline(ss, f, ',');
        r.time = std::stod(f);
        std::getline(ss, f, ',');
        r.tv = std::stod(f);
        std::getline(ss, f, ',');
        r.kl = std::stod(f);
        std::getline(ss, r.notes);
        rows.push_back(std::move(r));
    }
    return rows;
}

// Training telemetry appended per optimizer iteration when enabled.
class TelemetryWriter {
public:
    explicit TelemetryWriter(const std::string& path) : out_(path) {
        if (!out_) throw ConfigError("cannot write '" + path + "'");
        out_ << "step,iteration,loss\n";
    }
    void row(int step, int iteration, double loss) {
        out_ << step << "," << iteration << "," << fmt_double(loss) << "\n";
    }

private:
    std::ofstream out_;
};

} // namespace levysbtm
