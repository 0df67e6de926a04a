#include "chaoscope/plot.hpp"
#include "chaoscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <vector>

namespace chaoscope {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kMarginL = 70.0;
constexpr double kMarginR = 20.0;
constexpr double kMarginT = 20.0;
constexpr double kMarginB = 50.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

struct Axis {
    double lo = 0.0, hi = 1.0;
    bool log = false;

    double place(double v, double px_lo, double px_hi) const {
        double t;
        if (log) {
            t = (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo));
        } else {
            t = (v - lo) / (hi - lo);
        }
        return px_lo + t * (px_hi - px_lo);
    }
};

double px_x(const Axis& ax, double v) { return ax.place(v, kMarginL, kWidth - kMarginR); }
double px_y(const Axis& ax, double v) { return ax.place(v, kHeight - kMarginB, kMarginT); }

void expand(Axis& ax, double v) {
    ax.lo = std::min(ax.lo, v);
    ax.hi = std::max(ax.hi, v);
}

// tick positions: decades for log axes, ~5 round steps otherwise
std::vector<double> ticks_for(const Axis& ax) {
    std::vector<double> t;
    if (ax.log) {
        const int e0 = static_cast<int>(std::ceil(std::log10(ax.lo) - 1e-9));
        const int e1 = static_cast<int>(std::floor(std::log10(ax.hi) + 1e-9));
        int stride = 1;
        while ((e1 - e0) / stride > 10) ++stride;
        for (int e = e0; e <= e1; e += stride) t.push_back(std::pow(10.0, e));
    } else {
        const double span = ax.hi - ax.lo;
        if (span <= 0.0) return {ax.lo};
        const double raw = span / 5.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        if (raw / mag > 5.0) {
            step = 10.0 * mag;
        } else if (raw / mag > 2.0) {
            step = 5.0 * mag;
        } else if (raw / mag > 1.0) {
            step = 2.0 * mag;
        }
        const double start = std::ceil(ax.lo / step) * step;
        for (double v = start; v <= ax.hi + 0.5 * step; v += step) t.push_back(v);
    }
    return t;
}

class SvgBuilder {
public:
    SvgBuilder() {
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) +
                 "\" height=\"" + fmt(kHeight) + "\" viewBox=\"0 0 " + fmt(kWidth) + " " +
                 fmt(kHeight) + "\">\n";
        body_ += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0) {
        body_ += "<line x1=\"" + fmt(x1) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x2) +
                 "\" y2=\"" + fmt(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
                 fmt(width) + "\"/>\n";
    }

    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& stroke) {
        if (pts.empty()) return;
        body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i) body_ += " ";
            body_ += fmt(pts[i].first) + "," + fmt(pts[i].second);
        }
        body_ += "\"/>\n";
    }

    void circle(double x, double y, double r, const std::string& fill) {
        body_ += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(r) +
                 "\" fill=\"" + fill + "\"/>\n";
    }

    void ring(double x, double y, double r, const std::string& stroke) {
        body_ += "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"" + fmt(r) +
                 "\" fill=\"none\" stroke=\"" + stroke + "\"/>\n";
    }

    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(w) +
                 "\" height=\"" + fmt(h) + "\" fill=\"" + fill + "\"/>\n";
    }

    void text(double x, double y, const std::string& s, const std::string& anchor = "middle",
              double size = 11.0) {
        body_ += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" font-family=\"monospace\"" +
                 " font-size=\"" + fmt(size) + "\" text-anchor=\"" + anchor + "\">" + s +
                 "</text>\n";
    }

    void axes(const Axis& xa, const Axis& ya, const std::string& xlabel,
              const std::string& ylabel) {
        line(kMarginL, kHeight - kMarginB, kWidth - kMarginR, kHeight - kMarginB, "black");
        line(kMarginL, kMarginT, kMarginL, kHeight - kMarginB, "black");
        for (double t : ticks_for(xa)) {
            const double x = px_x(xa, t);
            line(x, kHeight - kMarginB, x, kHeight - kMarginB + 4, "black");
            text(x, kHeight - kMarginB + 16, xa.log ? ("1e" + fmt(std::log10(t))) : fmt(t));
        }
        for (double t : ticks_for(ya)) {
            const double y = px_y(ya, t);
            line(kMarginL - 4, y, kMarginL, y, "black");
            text(kMarginL - 8, y + 4, ya.log ? ("1e" + fmt(std::log10(t))) : fmt(t), "end");
        }
        text(0.5 * (kMarginL + kWidth - kMarginR), kHeight - 12, xlabel);
        text(14, 0.5 * (kMarginT + kHeight - kMarginB), ylabel, "middle");
    }

    void legend(const std::vector<std::string>& labels) {
        double y = kMarginT + 14;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const std::string color = kPalette[i % kPaletteSize];
            line(kWidth - kMarginR - 110, y - 4, kWidth - kMarginR - 90, y - 4, color, 2.0);
            text(kWidth - kMarginR - 85, y, labels[i], "start");
            y += 14;
        }
    }

    std::string finish() {
        body_ += "</svg>\n";
        return std::move(body_);
    }

private:
    std::string body_;
};

double cell(const CsvTable& t, std::size_t row, std::size_t col) {
    return parse_double(t.rows[row][col]);
}

// ordered unique labels in first-appearance order
std::vector<std::string> series_labels(const CsvTable& t, std::size_t col) {
    std::vector<std::string> labels;
    for (const auto& row : t.rows) {
        if (std::find(labels.begin(), labels.end(), row[col]) == labels.end()) {
            labels.push_back(row[col]);
        }
    }
    return labels;
}

std::string render_series_plot(const CsvTable& t, const std::string& xcol,
                               const std::string& ycol, const std::string& label_col,
                               bool xlog, bool ylog, double y_floor) {
    const std::size_t cx = t.column(xcol);
    const std::size_t cy = t.column(ycol);
    const std::size_t cl = t.column(label_col);

    Axis xa{1e300, -1e300, xlog};
    Axis ya{1e300, -1e300, ylog};
    std::vector<std::string> labels = series_labels(t, cl);
    std::map<std::string, std::vector<std::pair<double, double>>> data;

    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double x = cell(t, r, cx);
        double y = cell(t, r, cy);
        if (ylog && y < y_floor) y = y_floor; // zeros clamp to the plot floor
        expand(xa, x);
        expand(ya, y);
        data[t.rows[r][cl]].emplace_back(x, y);
    }
    if (xlog && xa.lo <= 0) throw std::invalid_argument("log x axis needs positive data");
    if (ya.lo == ya.hi) ya.hi = ya.lo + 1.0;
    if (xa.lo == xa.hi) xa.hi = xa.lo + 1.0;

    SvgBuilder svg;
    svg.axes(xa, ya, xcol, ycol);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::vector<std::pair<double, double>> pts;
        for (const auto& [x, y] : data[labels[i]]) {
            pts.emplace_back(px_x(xa, x), px_y(ya, y));
        }
        svg.polyline(pts, kPalette[i % kPaletteSize]);
    }
    svg.legend(labels);
    return svg.finish();
}

std::string render_decision_map(const CsvTable& t) {
    const DecisionMapResult r = decision_from_table(t);
    SvgBuilder svg;
    const double span = std::min(kWidth, kHeight) - 60.0;
    const double cell_px = span / static_cast<double>(r.n);
    const double ox = 40.0, oy = 20.0;
    for (std::size_t i = 0; i < r.n; ++i) {
        for (std::size_t j = 0; j < r.n; ++j) {
            // white: token_a wins, black: token_b wins
            const char* fill = r.grid[i * r.n + j] == 0 ? "#ffffff" : "#000000";
            svg.rect(ox + static_cast<double>(j) * cell_px,
                     oy + static_cast<double>(r.n - 1 - i) * cell_px, cell_px, cell_px, fill);
        }
    }
    svg.rect(ox, oy, 0.5, span, "#888888");
    svg.rect(ox, oy + span, span, 0.5, "#888888");
    svg.text(ox + 0.5 * span, oy + span + 24,
             "decision map " + std::to_string(r.n) + "x" + std::to_string(r.n) + " (token " +
                 std::to_string(r.token_a) + " white, token " + std::to_string(r.token_b) +
                 " black)");
    return svg.finish();
}

std::string render_angular(const CsvTable& t) {
    const std::size_t ct = t.column("theta");
    const std::size_t cs = t.column("s_max");
    const double cx = kWidth / 2.0, cy = kHeight / 2.0;
    const double r_max = std::min(kWidth, kHeight) / 2.0 - 40.0;

    double lo = 1e300, hi = -1e300;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double s = cell(t, r, cs);
        if (s > 0.0) {
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    }
    if (hi <= 0.0 || lo >= 1e300) throw std::invalid_argument("no positive s_max values");
    if (lo == hi) hi = lo * 10.0;
    auto radius = [&](double s) {
        const double tnorm = (std::log10(s) - std::log10(lo)) / (std::log10(hi) - std::log10(lo));
        return r_max * (0.2 + 0.8 * tnorm);
    };

    SvgBuilder svg;
    for (double frac : {0.2, 0.6, 1.0}) {
        svg.ring(cx, cy, r_max * frac, "#dddddd");
    }
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double theta = cell(t, r, ct);
        const double s = std::max(cell(t, r, cs), lo);
        const double rad = radius(s);
        pts.emplace_back(cx + rad * std::cos(theta), cy - rad * std::sin(theta));
    }
    if (!pts.empty()) pts.push_back(pts.front());
    svg.polyline(pts, kPalette[0]);
    svg.text(cx, kHeight - 12,
             "s_max(theta), radial log scale " + fmt(lo) + " .. " + fmt(hi));
    return svg.finish();
}

std::string render_scatter(const CsvTable& t) {
    const std::size_t cs = t.column("sigma");
    const std::size_t cm = t.column("s_max");
    Axis xa{1e300, -1e300, true};
    Axis ya{1e300, -1e300, true};
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        if (t.rows[r][cs].empty()) continue;
        const double sigma = cell(t, r, cs);
        const double smax = cell(t, r, cm);
        if (sigma <= 0.0 || smax <= 0.0) continue;
        expand(xa, sigma);
        expand(ya, smax);
        pts.emplace_back(sigma, smax);
    }
    if (pts.empty()) throw std::invalid_argument("no positive (sigma, s_max) pairs");
    if (xa.lo == xa.hi) xa.hi = xa.lo * 10.0;
    if (ya.lo == ya.hi) ya.hi = ya.lo * 10.0;
    SvgBuilder svg;
    svg.axes(xa, ya, "sigma", "s_max");
    for (const auto& [sigma, smax] : pts) {
        svg.circle(px_x(xa, sigma), px_y(ya, smax), 2.5, kPalette[0]);
    }
    return svg.finish();
}

std::string render_convergence(const CsvTable& t) {
    const std::size_t cn = t.column("n_samples");
    const std::size_t ck = t.column("kappa");
    Axis xa{1e300, -1e300, true};
    Axis ya{1e300, -1e300, false};
    ya.lo = 0.0;
    ya.hi = -1e300;
    std::map<double, std::vector<double>> by_n;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double n = cell(t, r, cn);
        const double kappa = cell(t, r, ck);
        expand(xa, n);
        ya.hi = std::max(ya.hi, kappa);
        by_n[n].push_back(kappa);
    }
    if (by_n.empty()) throw std::invalid_argument("no kappa records");
    if (xa.lo == xa.hi) xa.hi = xa.lo * 10.0;
    if (ya.hi <= 0.0) ya.hi = 1.0;
    ya.hi *= 1.05;

    SvgBuilder svg;
    svg.axes(xa, ya, "n_samples", "kappa_smooth");
    std::vector<std::pair<double, double>> means;
    for (const auto& [n, ks] : by_n) {
        double mean = 0.0;
        for (double kv : ks) {
            svg.circle(px_x(xa, n), px_y(ya, kv), 2.0, kPalette[1]);
            mean += kv;
        }
        mean /= static_cast<double>(ks.size());
        means.emplace_back(px_x(xa, n), px_y(ya, mean));
    }
    svg.polyline(means, kPalette[0]);
    return svg.finish();
}

std::string render_staircase(const CsvTable& t) {
    // micro_continuity tables carry (s, cumulative_norm); instability tables
    // carry (eps, drift)
    std::string xcol = "s", ycol = "cumulative_norm";
    bool have = true;
    try {
        t.column(xcol);
        t.column(ycol);
    } catch (const std::invalid_argument&) {
        have = false;
    }
    if (!have) {
        xcol = "eps";
        ycol = "drift";
        t.column(xcol);
        t.column(ycol);
    }
    const std::size_t cx = t.column(xcol);
    const std::size_t cy = t.column(ycol);
    Axis xa{1e300, -1e300, false};
    Axis ya{0.0, -1e300, false};
    std::vector<std::pair<double, double>> pts;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const double x = cell(t, r, cx);
        const double y = cell(t, r, cy);
        expand(xa, x);
        ya.hi = std::max(ya.hi, y);
        pts.emplace_back(x, y);
    }
    if (xa.lo == xa.hi) xa.hi = xa.lo + 1.0;
    if (ya.hi <= 0.0) ya.hi = 1.0;
    ya.hi *= 1.05;
    SvgBuilder svg;
    svg.axes(xa, ya, xcol, ycol);
    std::vector<std::pair<double, double>> px;
    for (const auto& [x, y] : pts) px.emplace_back(px_x(xa, x), px_y(ya, y));
    svg.polyline(px, kPalette[0]);
    return svg.finish();
}

} // namespace

PlotKind plot_kind_from_string(std::string_view text) {
    if (text == "eps_sweep") return PlotKind::EpsSweep;
    if (text == "layer_gain") return PlotKind::LayerGain;
    if (text == "staircase") return PlotKind::Staircase;
    if (text == "decision_map") return PlotKind::DecisionMap;
    if (text == "angular_polar") return PlotKind::AngularPolar;
    if (text == "spectrum_scatter") return PlotKind::SpectrumScatter;
    if (text == "convergence") return PlotKind::Convergence;
    throw std::invalid_argument("unknown plot kind '" + std::string(text) + "'");
}

std::string_view to_string(PlotKind kind) {
    switch (kind) {
        case PlotKind::EpsSweep: return "eps_sweep";
        case PlotKind::LayerGain: return "layer_gain";
        case PlotKind::Staircase: return "staircase";
        case PlotKind::DecisionMap: return "decision_map";
        case PlotKind::AngularPolar: return "angular_polar";
        case PlotKind::SpectrumScatter: return "spectrum_scatter";
        case PlotKind::Convergence: return "convergence";
    }
    return "eps_sweep";
}

std::string render_svg(const CsvTable& table, PlotKind kind) {
    if (table.rows.empty()) {
        throw std::invalid_argument("render_svg: no records");
    }
    try {
        switch (kind) {
            case PlotKind::EpsSweep:
                return render_series_plot(table, "eps", "d_eff", "direction_label", true, true,
                                          1e-12);
            case PlotKind::LayerGain:
                return render_series_plot(table, "layer", "gain", "direction_label", false, true,
                                          1e-12);
            case PlotKind::Staircase:
                return render_staircase(table);
            case PlotKind::DecisionMap:
                return render_decision_map(table);
            case PlotKind::AngularPolar:
                return render_angular(table);
            case PlotKind::SpectrumScatter:
                return render_scatter(table);
            case PlotKind::Convergence:
                return render_convergence(table);
        }
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(std::string("render_svg: records do not match kind '") +
                                    std::string(to_string(kind)) + "': " + e.what());
    }
    throw std::invalid_argument("render_svg: unknown kind");
}

} // namespace chaoscope
