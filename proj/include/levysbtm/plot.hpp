#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "levysbtm/common.hpp"
#include "levysbtm/eval.hpp"
#include "levysbtm/io.hpp"

namespace levysbtm {

// Deterministic SVG output: fixed canvas, named fonts, fixed-precision
// coordinates, so plot goldens diff textually.
namespace svg {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct Canvas {
    double width, height;
    std::string body;

    Canvas(double w, double h) : width(w), height(h) {}

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
    }
    void line(double x1, double y1, double x2, double y2, const std::string& stroke, double w = 1.0) {
        body += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" +
                num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(w) + "\"/>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
        body += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) body += num(x) + "," + num(y) + " ";
        body += "\"/>\n";
    }
    void text(double x, double y, const std::string& s, int size = 12, const std::string& anchor = "start") {
        body += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"Helvetica\" font-size=\"" +
                std::to_string(size) + "\" text-anchor=\"" + anchor + "\">" + s + "</text>\n";
    }
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ConfigError("cannot write '" + path + "'");
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
            << num(height) << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << body << "</svg>\n";
    }
};

inline std::string heat_color(double v) {
    // 0 -> near white, 1 -> dark blue
    v = std::clamp(v, 0.0, 1.0);
    int r = static_cast<int>(245 - 215 * v);
    int g = static_cast<int>(247 - 180 * v);
    int b = static_cast<int>(250 - 110 * v);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

} // namespace svg

// TV time series: one polyline vertex per metric checkpoint.
inline void plot_tv_series(const std::vector<MetricRow>& rows, const std::string& out_path) {
    require(!rows.empty(), "plot_tv_series: no metric rows");
    const double W = 640, H = 400, ml = 60, mr = 20, mt = 20, mb = 45;
    svg::Canvas c(W, H);
    double tmax = rows.back().time, tmin = rows.front().time;
    double vmax = 0.0;
    for (const auto& r : rows) vmax = std::max(vmax, r.tv);
    if (vmax <= 0.0) vmax = 1e-3;
    if (tmax <= tmin) tmax = tmin + 1.0;
    auto px = [&](double t) { return ml + (t - tmin) / (tmax - tmin) * (W - ml - mr); };
    auto py = [&](double v) { return H - mb - v / (vmax * 1.1) * (H - mt - mb); };
    c.line(ml, H - mb, W - mr, H - mb, "black");
    c.line(ml, mt, ml, H - mb, "black");
    for (int g = 0; g <= 4; ++g) {
        double v = vmax * 1.1 * g / 4.0;
        c.line(ml - 4, py(v), ml, py(v), "black");
        c.text(ml - 8, py(v) + 4, svg::num(v), 10, "end");
        double t = tmin + (tmax - tmin) * g / 4.0;
        c.line(px(t), H - mb, px(t), H - mb + 4, "black");
        c.text(px(t), H - mb + 16, svg::num(t), 10, "middle");
    }
    c.text(W / 2, H - 8, "time", 12, "middle");
    c.text(14, H / 2, "TV", 12, "middle");
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows) pts.emplace_back(px(r.time), py(r.tv));
    c.polyline(pts, "#1f5fbf");
    c.save(out_path);
}

// Time-state density heat map from a run's 1-D checkpoints: one column per
// checkpoint, rows are histogram bins over the global state range.
inline void plot_heatmap(const std::vector<Checkpoint>& checkpoints, int n, const std::string& out_path,
                         int bins = 60) {
    require(!checkpoints.empty(), "plot_heatmap: no checkpoints");
    const double W = 640, H = 400, ml = 60, mr = 20, mt = 20, mb = 45;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& cp : checkpoints)
        for (double v : cp.positions) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi <= lo) hi = lo + 1.0;
    svg::Canvas c(W, H);
    double cw = (W - ml - mr) / checkpoints.size();
    double ch = (H - mt - mb) / bins;
    std::vector<Vec> cols;
    double peak = 0.0;
    for (const auto& cp : checkpoints) {
        Vec hist(bins, 0.0);
        for (double v : cp.positions) {
            int bidx = std::clamp(static_cast<int>((v - lo) / (hi - lo) * bins), 0, bins - 1);
            hist[bidx] += 1.0 / n;
        }
        for (double h : hist) peak = std::max(peak, h);
        cols.push_back(std::move(hist));
    }
    if (peak <= 0.0) peak = 1.0;
    for (std::size_t j = 0; j < cols.size(); ++j)
        for (int bidx = 0; bidx < bins; ++bidx) {
            double v = cols[j][bidx] / peak;
            if (v <= 0.0) continue;
            c.rect(ml + j * cw, H - mb - (bidx + 1) * ch, cw + 0.5, ch + 0.5, svg::heat_color(v));
        }
    c.line(ml, H - mb, W - mr, H - mb, "black");
    c.line(ml, mt, ml, H - mb, "black");
    c.text(W / 2, H - 8, "checkpoint", 12, "middle");
    c.text(14, H / 2, "state", 12, "middle");
    c.text(ml - 8, H - mb + 4, svg::num(lo), 10, "end");
    c.text(ml - 8, mt + 8, svg::num(hi), 10, "end");
    c.save(out_path);
}

// Four-panel 2-D kernel density snapshot figure at the given checkpoint steps.
inline void plot_kde_panel(const std::vector<Checkpoint>& checkpoints, int n,
                           const std::vector<int>& steps, const std::string& out_path,
                           double bandwidth = 0.0, int grid_res = 48) {
    require(!checkpoints.empty(), "plot_kde_panel: no checkpoints");
    std::vector<const Checkpoint*> chosen;
    for (int s : steps) {
        const Checkpoint* best = &checkpoints.front();
        for (const auto& cp : checkpoints)
            if (std::abs(cp.step - s) < std::abs(best->step - s)) best = &cp;
        chosen.push_back(best);
    }
    const double P = 220, gap = 14, mt = 26;
    const double W = chosen.size() * (P + gap) + gap, H = P + mt + gap;
    svg::Canvas c(W, H);
    for (std::size_t pi = 0; pi < chosen.size(); ++pi) {
        const Checkpoint& cp = *chosen[pi];
        double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
        for (int i = 0; i < n; ++i) {
            lo0 = std::min(lo0, cp.positions[2 * static_cast<std::size_t>(i)]);
            hi0 = std::max(hi0, cp.positions[2 * static_cast<std::size_t>(i)]);
            lo1 = std::min(lo1, cp.positions[2 * static_cast<std::size_t>(i) + 1]);
            hi1 = std::max(hi1, cp.positions[2 * static_cast<std::size_t>(i) + 1]);
        }
        Vec grid(static_cast<std::size_t>(grid_res) * grid_res * 2);
        for (int gy = 0; gy < grid_res; ++gy)
            for (int gx = 0; gx < grid_res; ++gx) {
                std::size_t g = (static_cast<std::size_t>(gy) * grid_res + gx) * 2;
                grid[g] = lo0 + (hi0 - lo0) * (gx + 0.5) / grid_res;
                grid[g + 1] = lo1 + (hi1 - lo1) * (gy + 0.5) / grid_res;
            }
        Vec dens = kde(cp.positions, n, 2, bandwidth, grid, grid_res * grid_res);
        double peak = 0.0;
        for (double v : dens) peak = std::max(peak, v);
        if (peak <= 0.0) peak = 1.0;
        double x0 = gap + pi * (P + gap);
        double cwp = P / grid_res;
        for (int gy = 0; gy < grid_res; ++gy)
            for (int gx = 0; gx < grid_res; ++gx) {
                double v = dens[static_cast<std::size_t>(gy) * grid_res + gx] / peak;
                if (v <= 0.003) continue;
                c.rect(x0 + gx * cwp, mt + P - (gy + 1) * cwp, cwp + 0.4, cwp + 0.4, svg::heat_color(v));
            }
        c.text(x0 + P / 2, mt - 8, "step " + std::to_string(cp.step), 12, "middle");
    }
    c.save(out_path);
}

} // namespace levysbtm
