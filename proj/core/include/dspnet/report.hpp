#pragma once

#include <string>
#include <utility>
#include <vector>

namespace dspnet {

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;
    bool lines = true;  // connect points in order
};

struct Panel {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
};

/// Panels stacked vertically in one standalone SVG document, each with
/// axes, ticks and a legend. `note` is printed under the last panel.
std::string render_svg(const std::vector<Panel>& panels, const std::string& note = "");

/// Escapes &, <, >, " for SVG text.
std::string xml_escape(const std::string& s);

}  // namespace dspnet
