#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mras/harness.hpp"

namespace mras {

namespace plotdet {

struct CsvRow {
    std::string solver;
    std::string sweep_var;
    double sweep_val = 0.0;
    double aer_mean = 0.0;
    double nmse_paper = 0.0;
};

inline std::vector<CsvRow> parse_sweep_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("plot: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("solver,", 0) != 0)
        throw std::runtime_error("plot: missing or malformed CSV header");
    std::vector<CsvRow> rows;
    int row_no = 1;
    while (std::getline(f, line)) {
        ++row_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        if (cells.size() != 11)
            throw std::runtime_error("plot: malformed CSV at row " + std::to_string(row_no));
        try {
            CsvRow r;
            r.solver = cells[0];
            r.sweep_var = cells[1];
            r.sweep_val = std::stod(cells[2]);
            r.aer_mean = std::stod(cells[4]);
            r.nmse_paper = cells[7] == "inf" ? std::numeric_limits<double>::infinity()
                                             : std::stod(cells[7]);
            rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw std::runtime_error("plot: malformed CSV at row " + std::to_string(row_no));
        }
    }
    if (rows.empty()) throw std::runtime_error("plot: no data rows in " + path);
    return rows;
}

// Fixed geometry so chart coordinates are reproducible.
constexpr double kWidth = 640, kHeight = 480;
constexpr double kLeft = 70, kRight = 20, kTop = 30, kBottom = 50;

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

inline std::string fmtg(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;  // (x, y) in data units
};

/// One line chart; y values are plotted as given (pre-transform for log axes).
inline std::string render_chart(const std::string& title, const std::string& x_label,
                                const std::string& y_label,
                                const std::vector<Series>& series,
                                const std::vector<std::string>& y_tick_labels) {
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& s : series)
        for (const auto& [x, y] : s.pts) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax <= xmin) xmax = xmin + 1.0;
    if (ymax <= ymin) ymax = ymin + 1.0;

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return kHeight - kBottom - (y - ymin) / (ymax - ymin) * ph; };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" "
           "viewBox=\"0 0 640 480\">\n";
    svg += "<rect width=\"640\" height=\"480\" fill=\"white\"/>\n";
    svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title +
           "</text>\n";
    // axes
    svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kHeight - kBottom) + "\" x2=\"" +
           fmt2(kWidth - kRight) + "\" y2=\"" + fmt2(kHeight - kBottom) +
           "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt2(kLeft) + "\" y1=\"" + fmt2(kTop) + "\" x2=\"" + fmt2(kLeft) +
           "\" y2=\"" + fmt2(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"320\" y=\"470\" text-anchor=\"middle\" font-size=\"12\">" + x_label +
           "</text>\n";
    svg += "<text x=\"15\" y=\"240\" text-anchor=\"middle\" font-size=\"12\" "
           "transform=\"rotate(-90 15 240)\">" +
           y_label + "</text>\n";
    // corner tick labels
    svg += "<text x=\"" + fmt2(kLeft) + "\" y=\"" + fmt2(kHeight - kBottom + 18) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + fmtg(xmin) + "</text>\n";
    svg += "<text x=\"" + fmt2(kWidth - kRight) + "\" y=\"" + fmt2(kHeight - kBottom + 18) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + fmtg(xmax) + "</text>\n";
    svg += "<text x=\"" + fmt2(kLeft - 6) + "\" y=\"" + fmt2(kHeight - kBottom) +
           "\" text-anchor=\"end\" font-size=\"10\">" +
           (y_tick_labels.empty() ? fmtg(ymin) : y_tick_labels[0]) + "</text>\n";
    svg += "<text x=\"" + fmt2(kLeft - 6) + "\" y=\"" + fmt2(kTop + 4) +
           "\" text-anchor=\"end\" font-size=\"10\">" +
           (y_tick_labels.size() < 2 ? fmtg(ymax) : y_tick_labels[1]) + "</text>\n";

    int color = 0;
    double legend_y = kTop + 12;
    for (const auto& s : series) {
        const char* c = kColors[color % 5];
        std::string pts;
        for (const auto& [x, y] : s.pts) {
            if (!pts.empty()) pts += ' ';
            pts += fmt2(px(x)) + "," + fmt2(py(y));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + std::string(c) + "\" stroke-width=\"1.5\" "
               "points=\"" + pts + "\"/>\n";
        svg += "<text x=\"" + fmt2(kWidth - kRight - 120) + "\" y=\"" + fmt2(legend_y) +
               "\" font-size=\"11\" fill=\"" + c + "\">" + s.name + "</text>\n";
        legend_y += 14;
        ++color;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace plotdet

/// Renders the sweep CSV into SVG line charts: AER and NMSE against pilot
/// length for Bp sweeps, NMSE against spread for p sweeps (log10 y for NMSE).
/// Returns the files written.
inline std::vector<std::string> emit_plots(const std::string& csv_path,
                                           const std::string& out_dir) {
    const auto rows = plotdet::parse_sweep_csv(csv_path);

    auto collect = [&](const std::string& var, auto metric, bool log_y) {
        std::map<std::string, plotdet::Series> by_solver;
        for (const auto& r : rows) {
            if (r.sweep_var != var) continue;
            const double raw = metric(r);
            if (!std::isfinite(raw)) continue;
            const double y = log_y ? std::log10(std::max(raw, 1e-12)) : raw;
            auto& s = by_solver[r.solver];
            s.name = r.solver;
            s.pts.emplace_back(r.sweep_val, y);
        }
        std::vector<plotdet::Series> out;
        for (auto& [name, s] : by_solver) {
            std::sort(s.pts.begin(), s.pts.end());
            out.push_back(std::move(s));
        }
        return out;
    };

    std::vector<std::string> written;
    auto write_chart = [&](const std::string& file, const std::string& svg) {
        const std::string path = out_dir + "/" + file;
        std::ofstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("plot: cannot open " + path);
        f << svg;
        written.push_back(path);
    };

    const auto aer_bp = collect("Bp", [](const plotdet::CsvRow& r) { return r.aer_mean; }, false);
    if (!aer_bp.empty())
        write_chart("aer_vs_Bp.svg",
                    plotdet::render_chart("Activity error rate vs pilot length", "Bp", "AER",
                                          aer_bp, {}));

    const auto nmse_bp =
        collect("Bp", [](const plotdet::CsvRow& r) { return r.nmse_paper; }, true);
    if (!nmse_bp.empty())
        write_chart("nmse_vs_Bp.svg",
                    plotdet::render_chart("NMSE vs pilot length", "Bp", "log10 NMSE", nmse_bp,
                                          {}));

    const auto nmse_p = collect("p", [](const plotdet::CsvRow& r) { return r.nmse_paper; }, true);
    if (!nmse_p.empty())
        write_chart("nmse_vs_p.svg",
                    plotdet::render_chart("NMSE vs delay-angular spread", "p", "log10 NMSE",
                                          nmse_p, {}));

    if (written.empty()) throw std::runtime_error("plot: no plottable series in " + csv_path);
    return written;
}

}  // namespace mras
