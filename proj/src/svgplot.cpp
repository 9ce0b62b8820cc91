#include "trajlab/svgplot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace trajlab {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[64];
    if (v != 0.0 && (std::abs(v) >= 1e5 || std::abs(v) < 1e-3))
        std::snprintf(buf, sizeof buf, "%.2e", v);
    else
        std::snprintf(buf, sizeof buf, "%.5g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Ticks {
    std::vector<double> at;
};

Ticks linear_ticks(double lo, double hi) {
    Ticks t;
    const double range = hi - lo;
    if (!(range > 0)) {
        t.at.push_back(lo);
        return t;
    }
    double step = std::pow(10.0, std::floor(std::log10(range / 5.0)));
    if (range / step > 10) step *= 2;
    if (range / step > 10) step *= 2.5;
    if (range / step > 10) step *= 2;
    const double first = std::ceil(lo / step) * step;
    for (double v = first; v <= hi + step * 1e-9; v += step) t.at.push_back(v);
    return t;
}

Ticks decade_ticks(double lo, double hi) {
    // lo/hi are log10 values.
    Ticks t;
    for (double d = std::ceil(lo - 1e-9); d <= hi + 1e-9; d += 1.0) t.at.push_back(d);
    return t;
}

} // namespace

const char* palette_color(std::size_t index) { return kPalette[index % 10]; }

void write_line_plot(const std::filesystem::path& path, const LinePlotSpec& spec) {
    const int ml = 76, mr = 190, mt = 44, mb = 56;
    const double pw = spec.width - ml - mr;
    const double ph = spec.height - mt - mb;

    auto tx = [&](double v) { return spec.log_x ? std::log10(v) : v; };
    auto ty = [&](double v) { return spec.log_y ? std::log10(v) : v; };

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : spec.series)
        for (std::size_t i = 0; i < s.xs.size(); ++i) {
            if (spec.log_x && !(s.xs[i] > 0)) continue;
            if (spec.log_y && !(s.ys[i] > 0)) continue;
            const double x = tx(s.xs[i]), y = ty(s.ys[i]);
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            } else {
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymax = ymin + (std::abs(ymin) > 0 ? std::abs(ymin) * 0.1 : 1);
    const double ypad = (ymax - ymin) * 0.05;
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ofstream out(path);
    if (!out) throw IoError("svg: cannot open " + path.string() + " for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
        << spec.height << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"24\" font-size=\"15\" font-weight=\"bold\">"
        << escape(spec.title) << "</text>\n";

    // Axes box.
    out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << fmt(pw) << "\" height=\""
        << fmt(ph) << "\" fill=\"none\" stroke=\"#333\"/>\n";

    const Ticks xt = spec.log_x ? decade_ticks(xmin, xmax) : linear_ticks(xmin, xmax);
    for (double v : xt.at) {
        if (v < xmin - 1e-9 || v > xmax + 1e-9) continue;
        const double x = px(v);
        out << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(x)
            << "\" y2=\"" << fmt(mt + ph + 5) << "\" stroke=\"#333\"/>\n";
        out << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(x)
            << "\" y2=\"" << fmt(mt + ph) << "\" stroke=\"#eee\"/>\n";
        const double label = spec.log_x ? std::pow(10.0, v) : v;
        out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(mt + ph + 18)
            << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt_tick(label) << "</text>\n";
    }
    const Ticks yt = spec.log_y ? decade_ticks(ymin, ymax) : linear_ticks(ymin, ymax);
    for (double v : yt.at) {
        if (v < ymin - 1e-9 || v > ymax + 1e-9) continue;
        const double y = py(v);
        out << "<line x1=\"" << fmt(ml - 5) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(ml)
            << "\" y2=\"" << fmt(y) << "\" stroke=\"#333\"/>\n";
        out << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(y) << "\" x2=\"" << fmt(ml + pw)
            << "\" y2=\"" << fmt(y) << "\" stroke=\"#eee\"/>\n";
        const double label = spec.log_y ? std::pow(10.0, v) : v;
        out << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(y + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << fmt_tick(label) << "</text>\n";
    }
    out << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << spec.height - 14
        << "\" font-size=\"12\" text-anchor=\"middle\">" << escape(spec.x_label) << "</text>\n";
    out << "<text x=\"18\" y=\"" << fmt(mt + ph / 2)
        << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << fmt(mt + ph / 2) << ")\">" << escape(spec.y_label) << "</text>\n";

    // Series polylines and legend.
    for (std::size_t s = 0; s < spec.series.size(); ++s) {
        const auto& ser = spec.series[s];
        const std::string color = ser.color.empty() ? kPalette[s % 10] : ser.color;
        std::string pts;
        for (std::size_t i = 0; i < ser.xs.size(); ++i) {
            if (spec.log_x && !(ser.xs[i] > 0)) continue;
            if (spec.log_y && !(ser.ys[i] > 0)) continue;
            const double x = tx(ser.xs[i]), y = ty(ser.ys[i]);
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            pts += fmt(px(x)) + "," + fmt(py(y)) + " ";
        }
        out << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"1.6\"/>\n";
        const double ly = mt + 14 + 16 * static_cast<double>(s);
        if (ly < spec.height - mb) {
            out << "<line x1=\"" << fmt(ml + pw + 12) << "\" y1=\"" << fmt(ly - 4) << "\" x2=\""
                << fmt(ml + pw + 32) << "\" y2=\"" << fmt(ly - 4) << "\" stroke=\"" << color
                << "\" stroke-width=\"2\"/>\n";
            out << "<text x=\"" << fmt(ml + pw + 38) << "\" y=\"" << fmt(ly)
                << "\" font-size=\"11\">" << escape(ser.label) << "</text>\n";
        }
    }
    out << "</svg>\n";
}

void write_heatmap(const std::filesystem::path& path, const HeatmapSpec& spec) {
    const std::size_t rows = spec.values.rows(), cols = spec.values.cols();
    const int cell = 36, ml = 150, mt = 70, mr = 30, mb = 30;
    const int width = ml + static_cast<int>(cols) * cell + mr;
    const int height = mt + static_cast<int>(rows) * cell + mb;

    auto is_defined = [&](std::size_t r, std::size_t c) {
        return spec.defined.empty() || spec.defined[r][c];
    };

    double lo = 0, hi = 1;
    bool first = true;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            if (!is_defined(r, c)) continue;
            const double v = spec.values.at(r, c);
            if (first) {
                lo = hi = v;
                first = false;
            } else {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    if (hi <= lo) hi = lo + 1;

    // Dark blue -> teal -> sand, low to high.
    auto color_at = [&](double v) {
        const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
        auto lerp = [](double a, double b, double w) { return a + (b - a) * w; };
        double r, g, b;
        if (t < 0.5) {
            const double w = t / 0.5;
            r = lerp(0x2c, 0x2a, w);
            g = lerp(0x31, 0x9d, w);
            b = lerp(0x5e, 0x8f, w);
        } else {
            const double w = (t - 0.5) / 0.5;
            r = lerp(0x2a, 0xe9, w);
            g = lerp(0x9d, 0xc4, w);
            b = lerp(0x8f, 0x6a, w);
        }
        char buf[16];
        std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r),
                      static_cast<int>(g), static_cast<int>(b));
        return std::string(buf);
    };

    std::ofstream out(path);
    if (!out) throw IoError("svg: cannot open " + path.string() + " for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" font-family=\"sans-serif\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"12\" y=\"24\" font-size=\"15\" font-weight=\"bold\">" << escape(spec.title)
        << " (min " << fmt_tick(lo) << ", max " << fmt_tick(hi) << ")</text>\n";

    for (std::size_t c = 0; c < cols; ++c) {
        const double x = ml + (static_cast<double>(c) + 0.5) * cell;
        out << "<text x=\"" << fmt(x) << "\" y=\"" << mt - 8
            << "\" font-size=\"10\" text-anchor=\"middle\">"
            << escape(c < spec.col_labels.size() ? spec.col_labels[c] : "") << "</text>\n";
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double y = mt + (static_cast<double>(r) + 0.5) * cell;
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fmt(y + 3)
            << "\" font-size=\"10\" text-anchor=\"end\">"
            << escape(r < spec.row_labels.size() ? spec.row_labels[r] : "") << "</text>\n";
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = ml + static_cast<double>(c) * cell;
            const double yy = mt + static_cast<double>(r) * cell;
            if (!is_defined(r, c)) {
                out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(yy) << "\" width=\"" << cell
                    << "\" height=\"" << cell << "\" fill=\"#ddd\" stroke=\"white\"/>\n";
                continue;
            }
            const double v = spec.values.at(r, c);
            out << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(yy) << "\" width=\"" << cell
                << "\" height=\"" << cell << "\" fill=\"" << color_at(v)
                << "\" stroke=\"white\"/>\n";
            if (spec.show_values) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.3g", v);
                out << "<text x=\"" << fmt(x + cell / 2.0) << "\" y=\"" << fmt(yy + cell / 2.0 + 3)
                    << "\" font-size=\"8.5\" text-anchor=\"middle\" fill=\"white\">" << buf
                    << "</text>\n";
            }
            if (!spec.marks.empty() && spec.marks[r][c]) {
                out << "<text x=\"" << fmt(x + cell - 6) << "\" y=\"" << fmt(yy + 11)
                    << "\" font-size=\"10\" text-anchor=\"middle\" fill=\"white\">x</text>\n";
            }
        }
    }
    out << "</svg>\n";
}

} // namespace trajlab
