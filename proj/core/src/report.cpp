#include "dspnet/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dspnet/errors.hpp"

namespace dspnet {

namespace {

constexpr double kWidth = 720, kPanelHeight = 360;
constexpr double kLeft = 80, kRight = 180, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    const double a = std::fabs(v);
    if (a != 0 && (a >= 1e5 || a < 1e-3)) std::snprintf(buf, sizeof buf, "%.2g", v);
    else std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::vector<double> ticks(double lo, double hi) {
    const double span = hi - lo;
    const double raw = span / 5;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    std::vector<double> out;
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) out.push_back(t);
    return out;
}

void render_panel(std::string& svg, const Panel& p, double y0) {
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : p.series)
        for (auto [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
        }
    if (!std::isfinite(xmin)) throw ContractError("plot panel '" + p.title + "' has no finite points");
    if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    const double pad_y = 0.05 * (ymax - ymin);
    ymin -= pad_y, ymax += pad_y;

    const double pw = kWidth - kLeft - kRight, ph = kPanelHeight - kTop - kBottom;
    auto sx = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return y0 + kTop + ph - (y - ymin) / (ymax - ymin) * ph; };

    svg += "<text x=\"" + num(kLeft) + "\" y=\"" + num(y0 + 24) + "\" font-size=\"15\" font-weight=\"bold\">" +
           xml_escape(p.title) + "</text>\n";
    svg += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(y0 + kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
           "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (double t : ticks(xmin, xmax)) {
        svg += "<line x1=\"" + num(sx(t)) + "\" y1=\"" + num(y0 + kTop + ph) + "\" x2=\"" + num(sx(t)) + "\" y2=\"" +
               num(y0 + kTop + ph + 5) + "\" stroke=\"#333\"/>\n";
        svg += "<text x=\"" + num(sx(t)) + "\" y=\"" + num(y0 + kTop + ph + 18) +
               "\" font-size=\"11\" text-anchor=\"middle\">" + tick_label(t) + "</text>\n";
    }
    for (double t : ticks(ymin, ymax)) {
        svg += "<line x1=\"" + num(kLeft - 5) + "\" y1=\"" + num(sy(t)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
               num(sy(t)) + "\" stroke=\"#ddd\"/>\n";
        svg += "<text x=\"" + num(kLeft - 8) + "\" y=\"" + num(sy(t) + 4) + "\" font-size=\"11\" text-anchor=\"end\">" +
               tick_label(t) + "</text>\n";
    }
    svg += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(y0 + kPanelHeight - 12) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + xml_escape(p.x_label) + "</text>\n";
    svg += "<text transform=\"translate(" + num(20) + "," + num(y0 + kTop + ph / 2) +
           ") rotate(-90)\" font-size=\"12\" text-anchor=\"middle\">" + xml_escape(p.y_label) + "</text>\n";

    for (std::size_t i = 0; i < p.series.size(); ++i) {
        const auto& s = p.series[i];
        const std::string color = kPalette[i % std::size(kPalette)];
        svg += "<g class=\"series\" data-label=\"" + xml_escape(s.label) + "\">\n";
        if (s.lines && s.points.size() > 1) {
            svg += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\" points=\"";
            for (auto [x, y] : s.points)
                if (std::isfinite(x) && std::isfinite(y)) svg += num(sx(x)) + "," + num(sy(y)) + " ";
            svg += "\"/>\n";
        }
        if (!s.lines || s.points.size() <= 40)
            for (auto [x, y] : s.points)
                if (std::isfinite(x) && std::isfinite(y))
                    svg += "<circle cx=\"" + num(sx(x)) + "\" cy=\"" + num(sy(y)) + "\" r=\"3.5\" fill=\"" + color +
                           "\"/>\n";
        svg += "</g>\n";
        const double ly = y0 + kTop + 12 + 18 * static_cast<double>(i);
        svg += "<rect x=\"" + num(kLeft + pw + 15) + "\" y=\"" + num(ly - 9) + "\" width=\"12\" height=\"12\" fill=\"" +
               color + "\"/>\n";
        svg += "<text x=\"" + num(kLeft + pw + 32) + "\" y=\"" + num(ly + 1) + "\" font-size=\"12\">" +
               xml_escape(s.label) + "</text>\n";
    }
}

}  // namespace

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render_svg(const std::vector<Panel>& panels, const std::string& note) {
    if (panels.empty()) throw ContractError("nothing to plot");
    const double note_h = note.empty() ? 0 : 30;
    const double height = kPanelHeight * static_cast<double>(panels.size()) + note_h;
    std::string svg = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                      num(kWidth) + "\" height=\"" + num(height) + "\" viewBox=\"0 0 " + num(kWidth) + " " +
                      num(height) + "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < panels.size(); ++i) render_panel(svg, panels[i], kPanelHeight * static_cast<double>(i));
    if (!note.empty())
        svg += "<text x=\"" + num(kLeft) + "\" y=\"" + num(height - 10) + "\" font-size=\"12\">" + xml_escape(note) +
               "</text>\n";
    svg += "</svg>\n";
    return svg;
}

}  // namespace dspnet
