#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "mfg/error.hpp"
#include "mfg/io.hpp"
#include "mfg/metrics.hpp"

namespace mfg {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};

struct PlotOptions {
    int smooth_window = 0;   // 0 disables savgol pre-smoothing
    int polyorder = 3;
    double time = std::nan("");  // slice plots: requested time (default T/2)
};

namespace detail {

inline std::string fmt2(double v) {
    char b[32];
    std::snprintf(b, sizeof(b), "%.2f", v);
    return b;
}

inline std::string fmt_tick(double v) {
    char b[32];
    std::snprintf(b, sizeof(b), "%.4g", v);
    return b;
}

} // namespace detail

/// Hand-rolled deterministic SVG line plot: fixed canvas, linear or log-10
/// vertical axis, five ticks per axis, legend in the top-right corner.
inline void write_svg_lineplot(const std::string& path, const std::string& title,
                               const std::string& xlabel, const std::string& ylabel,
                               std::vector<PlotSeries> series, bool logy) {
    if (logy) {
        for (auto& s : series) {
            std::vector<double> xs, ys;
            for (std::size_t i = 0; i < s.y.size(); ++i)
                if (s.y[i] > 0.0 && std::isfinite(s.y[i])) {
                    xs.push_back(s.x[i]);
                    ys.push_back(std::log10(s.y[i]));
                }
            s.x = std::move(xs);
            s.y = std::move(ys);
        }
    }
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    std::size_t points = 0;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
            ++points;
        }
    if (points == 0) throw ConfigError("plot: no drawable points");
    if (xmax == xmin) { xmax += 1.0; xmin -= 1.0; }
    if (ymax == ymin) { ymax += 1.0; ymin -= 1.0; }
    double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    const double W = 840, H = 560, L = 70, R = 20, T = 40, B = 50;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

    std::ofstream f(path);
    if (!f) throw ConfigError("cannot open for writing: " + path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    f << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title
      << "</text>\n";

    // axes and ticks
    f << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double xv = xmin + (xmax - xmin) * i / 4.0;
        double yv = ymin + (ymax - ymin) * i / 4.0;
        double xp = px(xv), yp = py(yv);
        f << "<line x1=\"" << detail::fmt2(xp) << "\" y1=\"" << H - B << "\" x2=\""
          << detail::fmt2(xp) << "\" y2=\"" << H - B + 5 << "\" stroke=\"black\"/>\n";
        f << "<text x=\"" << detail::fmt2(xp) << "\" y=\"" << H - B + 18
          << "\" text-anchor=\"middle\" font-size=\"11\">" << detail::fmt_tick(xv) << "</text>\n";
        f << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::fmt2(yp) << "\" x2=\"" << L
          << "\" y2=\"" << detail::fmt2(yp) << "\" stroke=\"black\"/>\n";
        std::string ylab = logy ? ("1e" + detail::fmt_tick(yv)) : detail::fmt_tick(yv);
        f << "<text x=\"" << L - 8 << "\" y=\"" << detail::fmt2(yp + 4)
          << "\" text-anchor=\"end\" font-size=\"11\">" << ylab << "</text>\n";
    }
    f << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10
      << "\" text-anchor=\"middle\" font-size=\"13\">" << xlabel << "</text>\n";
    f << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" "
      << "transform=\"rotate(-90 18 " << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";

    // data
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = palette[si % 5];
        f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            f << detail::fmt2(px(s.x[i])) << ',' << detail::fmt2(py(s.y[i])) << ' ';
        }
        f << "\"/>\n";
        double ly = T + 16.0 * (si + 1);
        f << "<line x1=\"" << W - R - 150 << "\" y1=\"" << ly << "\" x2=\"" << W - R - 120
          << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        f << "<text x=\"" << W - R - 114 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
          << s.label << "</text>\n";
    }
    f << "</svg>\n";
    if (!f) throw ConfigError("write failed: " + path);
}

namespace detail {

inline PlotSeries csv_series(const CsvTable& t, const std::string& xcol, const std::string& ycol) {
    int xi = t.column(xcol), yi = t.column(ycol);
    if (xi < 0 || yi < 0) throw ConfigError("plot: missing column '" + (xi < 0 ? xcol : ycol) + "'");
    PlotSeries s;
    s.label = ycol;
    for (const auto& row : t.rows) {
        if (!std::isfinite(row[yi])) continue;
        s.x.push_back(row[xi]);
        s.y.push_back(row[yi]);
    }
    return s;
}

} // namespace detail

/// Renders history/solution CSVs: kind "loss" (residual losses vs iteration,
/// log scale), "linf" (benchmark distances vs iteration, log scale) or
/// "slice" (density profile of a 1-D solution at the time level nearest
/// opts.time, default T/2).  Optional savgol pre-smoothing for the curve
/// kinds.
inline void emit_plot(const std::string& input_csv, const std::string& kind,
                      const std::string& out_svg, const PlotOptions& opts = {}) {
    CsvTable t = read_csv_table(input_csv);
    std::vector<PlotSeries> series;
    if (kind == "loss" || kind == "linf") {
        std::vector<std::string> cols =
            kind == "loss" ? std::vector<std::string>{"loss_fp", "loss_hjb", "loss_policy"}
                           : std::vector<std::string>{"linf_rho", "linf_phi", "linf_q"};
        for (const auto& c : cols) {
            PlotSeries s = detail::csv_series(t, "iter", c);
            if (s.y.empty()) continue;
            if (opts.smooth_window > 0) {
                if (static_cast<int>(s.y.size()) < opts.smooth_window)
                    throw ConfigError("plot: series shorter than smoothing window");
                s.y = savgol(s.y, opts.smooth_window, opts.polyorder);
            }
            series.push_back(std::move(s));
        }
        if (series.empty()) throw ConfigError("plot: no populated series for kind " + kind);
        write_svg_lineplot(out_svg, kind == "loss" ? "residual losses" : "benchmark distances",
                           "iteration", kind, series, true);
    } else if (kind == "slice") {
        int ti = t.column("t"), xi = t.column("x0"), ri = t.column("rho");
        if (ti < 0 || xi < 0 || ri < 0)
            throw ConfigError("plot: slice needs a 1-D solution CSV (t, x0, rho)");
        if (t.column("x1") >= 0)
            throw ConfigError("plot: slice supports one spatial dimension only");
        double tmax = 0.0;
        for (const auto& row : t.rows) tmax = std::max(tmax, row[ti]);
        double want = std::isfinite(opts.time) ? opts.time : 0.5 * tmax;
        double best = 0.0, bestd = std::numeric_limits<double>::infinity();
        for (const auto& row : t.rows)
            if (std::abs(row[ti] - want) < bestd) {
                bestd = std::abs(row[ti] - want);
                best = row[ti];
            }
        PlotSeries s;
        s.label = "rho(t=" + detail::fmt_tick(best) + ")";
        for (const auto& row : t.rows)
            if (row[ti] == best) {
                s.x.push_back(row[xi]);
                s.y.push_back(row[ri]);
            }
        series.push_back(std::move(s));
        write_svg_lineplot(out_svg, "density slice", "x", "rho", series, false);
    } else {
        throw ConfigError("plot: unknown kind '" + kind + "' (expected loss|slice|linf)");
    }
}

} // namespace mfg
