#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trajlab/numkit.hpp"

namespace trajlab {

// Minimal SVG emitter for the report plots: polyline charts with axes and a
// legend, and annotated heatmaps. No plotting library involved.

struct PlotSeries {
    std::vector<double> xs;
    std::vector<double> ys;
    std::string label;
    std::string color; // empty = palette color by index
};

struct LinePlotSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 860;
    int height = 520;
    std::vector<PlotSeries> series;
};

void write_line_plot(const std::filesystem::path& path, const LinePlotSpec& spec);

struct HeatmapSpec {
    std::string title;
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    Matrix values;
    // Optional per-cell annotations: marks draw an x (e.g. below-threshold
    // distances), defined=false grays a cell out.
    std::vector<std::vector<bool>> marks;
    std::vector<std::vector<bool>> defined;
    bool show_values = true;
};

void write_heatmap(const std::filesystem::path& path, const HeatmapSpec& spec);

const char* palette_color(std::size_t index);

} // namespace trajlab
