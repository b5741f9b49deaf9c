#include "gradclust/metrics.hpp"

#include <cmath>
#include <cstddef>
#include <limits>

#include "gradclust/errors.hpp"

namespace gradclust {

double average_variance(const std::vector<std::vector<double>>& estimates) {
    require(estimates.size() >= 2, "average_variance needs at least two draws");
    const std::size_t n = estimates.size();
    const std::size_t d = estimates[0].size();
    require(d > 0, "average_variance: empty estimates");
    for (const auto& e : estimates)
        require(e.size() == d, "average_variance: draws differ in length");

    // Deviations are taken against the first draw before averaging, which is
    // a pure shift: the variance is unchanged, and identical draws come out
    // exactly zero instead of picking up summation rounding.
    double total = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        double delta_mean = 0.0;
        for (const auto& e : estimates) delta_mean += e[c] - estimates[0][c];
        delta_mean /= static_cast<double>(n);
        double ssd = 0.0;
        for (const auto& e : estimates) {
            const double dev = (e[c] - estimates[0][c]) - delta_mean;
            ssd += dev * dev;
        }
        total += ssd / static_cast<double>(n - 1);
    }
    const double out = total / static_cast<double>(d);
    if (!std::isfinite(out)) throw NumericError("average_variance produced a non-finite value");
    return out;
}

double population_second_moment(const PerExampleFactors& factors) {
    const std::size_t n = factors.batch_size;
    const std::size_t d = factors.param_dim();
    require(n > 0 && d > 0, "population_second_moment: empty factors");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> grad = per_example_gradient(factors, i);
        total += norm2(grad);
    }
    const double out = total / static_cast<double>(d * n);
    if (!std::isfinite(out)) throw NumericError("population_second_moment produced a non-finite value");
    return out;
}

double normalized_variance(double avg_var, double e_g2) {
    require(avg_var >= 0.0, "normalized_variance: negative variance");
    require(e_g2 >= 0.0, "normalized_variance: negative second moment");
    if (e_g2 < 1e-30) return std::numeric_limits<double>::infinity();
    return avg_var / e_g2;
}

SmoothedSeries rolling(const std::vector<double>& series, int window) {
    require(window >= 1, "rolling: window must be at least 1");
    SmoothedSeries out;
    out.window = window;
    out.mean.resize(series.size());
    out.stddev.resize(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) {
        const std::size_t lo = t + 1 >= static_cast<std::size_t>(window)
                                   ? t + 1 - static_cast<std::size_t>(window)
                                   : 0;
        const std::size_t count = t - lo + 1;
        double sum = 0.0;
        for (std::size_t s = lo; s <= t; ++s) sum += series[s];
        const double mean = sum / static_cast<double>(count);
        double ssd = 0.0;
        for (std::size_t s = lo; s <= t; ++s) {
            const double dev = series[s] - mean;
            ssd += dev * dev;
        }
        out.mean[t] = mean;
        out.stddev[t] = count > 1 ? std::sqrt(ssd / static_cast<double>(count - 1)) : 0.0;
    }
    return out;
}

}  // namespace gradclust
