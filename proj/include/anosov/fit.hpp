#pragma once

#include <vector>

namespace anosov {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int count = 0;
    /// Residuals y - (intercept + slope x), same order as the input.
    std::vector<double> residuals;
};

/// Ordinary least squares y ~ intercept + slope x. Needs at least two distinct x.
/// A perfectly flat y gives r2 = 1.
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

/// Geometric envelope C * theta^n fitted to positive values.
struct DecayFit {
    double c = 0.0;
    double theta = 0.0;
    double r2 = 0.0;
    int points = 0;
    int first = 0;
    int last = 0;
    bool flat = false;  // theta >= 1 within round-off
};

/// Least squares on (n, ln v_n). Non-positive values inside [first, last] are
/// dropped; throws std::invalid_argument if fewer than min_points remain.
DecayFit fit_decay(const std::vector<double>& series, int first, int last, int min_points = 5);

/// Mean and standard error of the mean.
struct MeanErr {
    double mean = 0.0;
    double stderr_ = 0.0;
};
MeanErr mean_stderr(const std::vector<double>& v);

/// Integral of samples y(x) on strictly increasing, possibly uneven abscissae,
/// by exact integration of local cubic interpolants (fourth order). Falls back to
/// the trapezoid rule below four points.
double integrate_nonuniform(const std::vector<double>& x, const std::vector<double>& y);

/// Cubic Lagrange interpolation through the four samples nearest to t.
double interpolate_cubic(const std::vector<double>& x, const std::vector<double>& y, double t);

}  // namespace anosov
