#ifndef GRADCLUST_SVG_HPP
#define GRADCLUST_SVG_HPP

#include <array>
#include <string>
#include <vector>

namespace gradclust {

// Self-contained SVG rendering with no drawing dependencies. Every number is
// printed through one fixed format, so identical inputs produce identical
// bytes.

// Cluster and series colors; index is taken modulo the palette size.
const std::string& palette_color(std::size_t index);

struct PlotSeries {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
    // Optional shaded half-width around y (one entry per point); empty means
    // no band.
    std::vector<double> band;
};

struct PlotConfig {
    std::string title;
    std::string x_label;
    std::string y_label;
    // y is always log-scaled with ticks at powers of ten. x is linear unless
    // log_x, which places ticks at the distinct sample positions (sweep
    // grids are short).
    bool log_x = false;
    int width = 640;
    int height = 420;
};

struct RenderResult {
    std::string svg;  // empty when nothing was drawable
    std::vector<std::string> warnings;
};

// Log-scale line plot. Points with y <= 0 cannot be placed on a log axis and
// are dropped with a warning; a series with no drawable points is omitted
// with a warning; if no series survives, svg comes back empty.
RenderResult render_line_plot(const PlotConfig& config, const std::vector<PlotSeries>& series);

// A straight line through the origin with the given normal vector, drawn as
// one polyline clipped to the data box.
struct DemoBoundary {
    std::string label;
    std::array<double, 2> normal{0.0, 0.0};
    std::string color;
    bool dashed = false;
};

struct DemoFrame {
    std::string title;
    std::vector<std::array<double, 2>> points;
    std::vector<int> labels;               // +1 circles, -1 squares
    std::vector<std::size_t> assignments;  // cluster index -> fill color
    std::vector<DemoBoundary> boundaries;
    int step = 0;
    double lr = 0.0;  // recorded in <metadata> with the step
};

std::string render_demo_frame(const DemoFrame& frame);

}  // namespace gradclust

#endif
