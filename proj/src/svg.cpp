#include "gradclust/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "gradclust/errors.hpp"

namespace gradclust {

namespace {

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

std::string decade_label(int exponent) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "1e%+03d", exponent);
    return buf;
}

std::string escape(const std::string& text) {
    std::string out;
    for (char c : text) {
        if (c == '&')
            out += "&amp;";
        else if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else
            out += c;
    }
    return out;
}

void open_svg(std::string& out, int width, int height) {
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\" viewBox=\"0 0 " +
           std::to_string(width) + " " + std::to_string(height) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" fill=\"#ffffff\"/>\n";
}

void text_at(std::string& out, double x, double y, const std::string& anchor,
             const std::string& content, const std::string& extra = "") {
    out += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-family=\"sans-serif\" " +
           "font-size=\"12\" fill=\"#222\" text-anchor=\"" + anchor + "\"" + extra + ">" +
           escape(content) + "</text>\n";
}

// Tick spacing for a linear axis: a multiple of 1, 2, or 5 times a power of
// ten giving about five intervals.
double nice_step(double range) {
    const double raw = range / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double base = raw / mag;
    const double mult = base < 1.5 ? 1.0 : base < 3.5 ? 2.0 : base < 7.5 ? 5.0 : 10.0;
    return mult * mag;
}

struct Mapped {
    double lo = 0.0, hi = 1.0;  // data range in plot units (log10 where log)
    double px0 = 0.0, px1 = 1.0;
    bool flip = false;
    double operator()(double u) const {
        const double t = (u - lo) / (hi - lo);
        return flip ? px1 - t * (px1 - px0) : px0 + t * (px1 - px0);
    }
};

}  // namespace

const std::string& palette_color(std::size_t index) {
    static const std::vector<std::string> colors{
        "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
        "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"};
    return colors[index % colors.size()];
}

RenderResult render_line_plot(const PlotConfig& config, const std::vector<PlotSeries>& series) {
    RenderResult result;

    struct Drawable {
        std::string name;
        std::string color;
        std::vector<double> u;  // x in plot units
        std::vector<double> y;
        std::vector<double> band;
    };
    std::vector<Drawable> drawable;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const PlotSeries& in = series[s];
        require(in.x.size() == in.y.size(), "render_line_plot: x/y length mismatch");
        require(in.band.empty() || in.band.size() == in.y.size(),
                "render_line_plot: band length mismatch");
        Drawable d;
        d.name = in.name;
        d.color = palette_color(s);
        std::size_t dropped = 0;
        for (std::size_t i = 0; i < in.y.size(); ++i) {
            const bool bad_y = !(in.y[i] > 0.0) || !std::isfinite(in.y[i]);
            const bool bad_x = config.log_x ? !(in.x[i] > 0.0) : !std::isfinite(in.x[i]);
            if (bad_y || bad_x) {
                ++dropped;
                continue;
            }
            d.u.push_back(config.log_x ? std::log10(in.x[i]) : in.x[i]);
            d.y.push_back(in.y[i]);
            d.band.push_back(in.band.empty() ? 0.0 : in.band[i]);
        }
        if (dropped > 0)
            result.warnings.push_back("series '" + in.name + "': dropped " +
                                      std::to_string(dropped) +
                                      " points not placeable on a log axis");
        if (d.u.empty()) {
            result.warnings.push_back("series '" + in.name + "' has no drawable points; omitted");
            continue;
        }
        drawable.push_back(std::move(d));
    }
    if (drawable.empty()) {
        result.warnings.push_back("no drawable series; plot omitted");
        return result;
    }

    double umin = drawable[0].u[0], umax = umin;
    double ymin = drawable[0].y[0], ymax = ymin;
    for (const Drawable& d : drawable)
        for (std::size_t i = 0; i < d.u.size(); ++i) {
            umin = std::min(umin, d.u[i]);
            umax = std::max(umax, d.u[i]);
            ymin = std::min(ymin, d.y[i]);
            ymax = std::max(ymax, d.y[i] + d.band[i]);
            if (d.y[i] - d.band[i] > 0.0) ymin = std::min(ymin, d.y[i] - d.band[i]);
        }
    if (umin == umax) {
        umin -= 0.5;
        umax += 0.5;
    }
    int lo_exp = static_cast<int>(std::floor(std::log10(ymin)));
    int hi_exp = static_cast<int>(std::ceil(std::log10(ymax)));
    if (lo_exp == hi_exp) {
        --lo_exp;
        ++hi_exp;
    }

    const double left = 64, right = 16, top = 28, bottom = 44;
    const Mapped mx{umin, umax, left, config.width - right, false};
    const Mapped my{static_cast<double>(lo_exp), static_cast<double>(hi_exp), top,
                    config.height - bottom, true};
    const auto py = [&](double y) { return my(std::log10(y)); };
    const double y_floor = config.height - bottom;

    std::string& out = result.svg;
    open_svg(out, config.width, config.height);
    text_at(out, config.width / 2.0, 18, "middle", config.title);

    // Decade grid and labels; long spans label every few decades to keep the
    // axis readable.
    const int span = hi_exp - lo_exp;
    const int stride = span > 12 ? (span + 11) / 12 : 1;
    for (int e = lo_exp; e <= hi_exp; e += stride) {
        const double y = my(static_cast<double>(e));
        out += "<line x1=\"" + num(left) + "\" y1=\"" + num(y) + "\" x2=\"" +
               num(config.width - right) + "\" y2=\"" + num(y) +
               "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
        text_at(out, left - 6, y + 4, "end", decade_label(e));
    }

    if (config.log_x) {
        std::vector<double> ticks;
        for (const Drawable& d : drawable)
            for (double u : d.u) ticks.push_back(u);
        std::sort(ticks.begin(), ticks.end());
        ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
        for (double u : ticks) {
            const double x = mx(u);
            out += "<line x1=\"" + num(x) + "\" y1=\"" + num(y_floor) + "\" x2=\"" + num(x) +
                   "\" y2=\"" + num(y_floor + 5) + "\" stroke=\"#222\" stroke-width=\"1\"/>\n";
            text_at(out, x, y_floor + 18, "middle", num(std::pow(10.0, u)));
        }
    } else {
        const double step = nice_step(umax - umin);
        const double t0 = std::ceil(umin / step) * step;
        for (int i = 0;; ++i) {
            const double t = t0 + i * step;
            if (t > umax + 1e-9 * step) break;
            const double x = mx(t);
            out += "<line x1=\"" + num(x) + "\" y1=\"" + num(y_floor) + "\" x2=\"" + num(x) +
                   "\" y2=\"" + num(y_floor + 5) + "\" stroke=\"#222\" stroke-width=\"1\"/>\n";
            text_at(out, x, y_floor + 18, "middle", num(t));
        }
    }

    for (const Drawable& d : drawable) {
        bool has_band = false;
        for (double b : d.band)
            if (b > 0.0) has_band = true;
        if (has_band) {
            std::string pts;
            for (std::size_t i = 0; i < d.u.size(); ++i)
                pts += num(mx(d.u[i])) + "," + num(py(d.y[i] + d.band[i])) + " ";
            for (std::size_t i = d.u.size(); i-- > 0;) {
                const double lo = d.y[i] - d.band[i];
                const double y = lo > 0.0 ? py(lo) : y_floor;
                pts += num(mx(d.u[i])) + "," + num(y) + " ";
            }
            out += "<polygon points=\"" + pts + "\" fill=\"" + d.color +
                   "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
        }
        std::string pts;
        for (std::size_t i = 0; i < d.u.size(); ++i)
            pts += num(mx(d.u[i])) + "," + num(py(d.y[i])) + " ";
        out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + d.color +
               "\" stroke-width=\"1.5\"/>\n";
    }

    for (std::size_t i = 0; i < drawable.size(); ++i) {
        const double lx = config.width - right - 150;
        const double ly = top + 8 + 16.0 * i;
        out += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(lx + 18) +
               "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + drawable[i].color +
               "\" stroke-width=\"2\"/>\n";
        text_at(out, lx + 24, ly, "start", drawable[i].name);
    }

    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" +
           num(config.width - left - right) + "\" height=\"" +
           num(config.height - top - bottom) +
           "\" fill=\"none\" stroke=\"#222\" stroke-width=\"1\"/>\n";
    text_at(out, (left + config.width - right) / 2.0, config.height - 8, "middle",
            config.x_label);
    text_at(out, 16, (top + config.height - bottom) / 2.0, "middle", config.y_label,
            " transform=\"rotate(-90 16 " + num((top + config.height - bottom) / 2.0) + ")\"");
    out += "</svg>\n";
    return result;
}

std::string render_demo_frame(const DemoFrame& frame) {
    const std::size_t n = frame.points.size();
    require(n > 0, "render_demo_frame: no points");
    require(frame.labels.size() == n && frame.assignments.size() == n,
            "render_demo_frame: labels/assignments must match points");

    // Data box including the origin (boundaries pass through it), padded and
    // drawn at equal scale so angles are faithful.
    double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
    for (const auto& p : frame.points) {
        xmin = std::min(xmin, p[0]);
        xmax = std::max(xmax, p[0]);
        ymin = std::min(ymin, p[1]);
        ymax = std::max(ymax, p[1]);
    }
    const double pad = 0.1 * std::max(xmax - xmin, ymax - ymin) + 1e-12;
    xmin -= pad;
    xmax += pad;
    ymin -= pad;
    ymax += pad;

    const int width = 520, height = 520;
    const double left = 20, right = 20, top = 40, bottom = 20;
    const double plot_w = width - left - right, plot_h = height - top - bottom;
    const double scale = std::min(plot_w / (xmax - xmin), plot_h / (ymax - ymin));
    const double cx = (xmin + xmax) / 2.0, cy = (ymin + ymax) / 2.0;
    const auto px = [&](double x) { return left + plot_w / 2.0 + (x - cx) * scale; };
    const auto py = [&](double y) { return top + plot_h / 2.0 - (y - cy) * scale; };

    std::string out;
    open_svg(out, width, height);
    out += "<metadata>step=" + std::to_string(frame.step) + " lr=" + num(frame.lr) +
           "</metadata>\n";
    text_at(out, width / 2.0, 18, "middle", frame.title);
    text_at(out, width - right, 34, "end", "step " + std::to_string(frame.step));

    out += "<clipPath id=\"plot\"><rect x=\"" + num(left) + "\" y=\"" + num(top) +
           "\" width=\"" + num(plot_w) + "\" height=\"" + num(plot_h) +
           "\"/></clipPath>\n<g clip-path=\"url(#plot)\">\n";

    const double reach = std::hypot(xmax - xmin, ymax - ymin);
    for (const DemoBoundary& b : frame.boundaries) {
        const double len = std::hypot(b.normal[0], b.normal[1]);
        if (len == 0.0) continue;
        const double dx = -b.normal[1] / len, dy = b.normal[0] / len;
        out += "<polyline points=\"" + num(px(-dx * reach)) + "," + num(py(-dy * reach)) + " " +
               num(px(dx * reach)) + "," + num(py(dy * reach)) + "\" fill=\"none\" stroke=\"" +
               b.color + "\" stroke-width=\"" + (b.dashed ? "1.5" : "2") + "\"" +
               (b.dashed ? " stroke-dasharray=\"6 4\"" : "") + "/>\n";
    }

    for (std::size_t i = 0; i < n; ++i) {
        const std::string fill = palette_color(frame.assignments[i]);
        const double x = px(frame.points[i][0]), y = py(frame.points[i][1]);
        if (frame.labels[i] > 0)
            out += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) +
                   "\" r=\"4\" fill=\"" + fill + "\" stroke=\"#333\" stroke-width=\"0.5\"/>\n";
        else
            out += "<rect x=\"" + num(x - 3.5) + "\" y=\"" + num(y - 3.5) +
                   "\" width=\"7\" height=\"7\" fill=\"" + fill +
                   "\" stroke=\"#333\" stroke-width=\"0.5\"/>\n";
    }
    out += "</g>\n";

    for (std::size_t i = 0; i < frame.boundaries.size(); ++i) {
        const DemoBoundary& b = frame.boundaries[i];
        const double lx = left + 6;
        const double ly = top + 10 + 16.0 * i;
        out += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(lx + 18) +
               "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + b.color + "\" stroke-width=\"2\"" +
               (b.dashed ? " stroke-dasharray=\"6 4\"" : "") + "/>\n";
        text_at(out, lx + 24, ly, "start", b.label);
    }

    out += "</svg>\n";
    return out;
}

}  // namespace gradclust
