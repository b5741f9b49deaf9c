#ifndef GRADCLUST_METRICS_HPP
#define GRADCLUST_METRICS_HPP

#include <string>
#include <vector>

#include "gradclust/model.hpp"

namespace gradclust {

// Variance statistics of gradient-mean estimators at a fixed snapshot.
// All reductions are sequential in the order given, so reports are
// byte-stable across reruns.

// Mean over coordinates of the unbiased per-coordinate sample variance
// across draws; equals trace of the sample covariance divided by the
// dimension. Needs at least two draws of equal length.
double average_variance(const std::vector<std::vector<double>>& estimates);

// Population second moment of the single-example gradient distribution,
// (1/(d*N)) * sum_i ||g_i||^2, computed from the factored per-example
// gradients. Shared across estimators at the same snapshot so normalized
// variances stay comparable.
double population_second_moment(const PerExampleFactors& factors);

// avg_var / e_g2, with a +inf sentinel when the denominator is below
// 1e-30. Values above 1 are legal (noise can dominate the mean).
double normalized_variance(double avg_var, double e_g2);

struct VarianceReport {
    long step = 0;
    std::string estimator;
    double avg_var = 0.0;
    double e_g2 = 0.0;
    double norm_var = 0.0;
    int draws = 0;
};

struct SmoothedSeries {
    int window = 1;
    std::vector<double> mean;
    std::vector<double> stddev;
};

// Trailing-window rolling mean and unbiased standard deviation; early
// steps use the available prefix. window=1 reproduces the raw series
// with zero stddev.
SmoothedSeries rolling(const std::vector<double>& series, int window);

}  // namespace gradclust

#endif
