#include "anosov/fit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace anosov {

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size()) throw std::invalid_argument("linear_fit: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("linear_fit: need two points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("linear_fit: degenerate abscissae");
    LinearFit f;
    f.count = static_cast<int>(n);
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0;
    f.residuals.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.residuals[i] = y[i] - (f.intercept + f.slope * x[i]);
        sse += f.residuals[i] * f.residuals[i];
    }
    f.r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    return f;
}

DecayFit fit_decay(const std::vector<double>& series, int first, int last, int min_points)
{
    std::vector<double> xs, ys;
    if (first < 0) first = 0;
    if (last >= static_cast<int>(series.size())) last = static_cast<int>(series.size()) - 1;
    for (int n = first; n <= last; ++n) {
        if (series[n] > 0 && std::isfinite(series[n])) {
            xs.push_back(n);
            ys.push_back(std::log(series[n]));
        }
    }
    if (static_cast<int>(xs.size()) < min_points)
        throw std::invalid_argument("fit_decay: fewer than the required positive points");
    const LinearFit lf = linear_fit(xs, ys);
    DecayFit d;
    d.c = std::exp(lf.intercept);
    d.theta = std::exp(lf.slope);
    d.r2 = lf.r2;
    d.points = lf.count;
    d.first = static_cast<int>(xs.front());
    d.last = static_cast<int>(xs.back());
    d.flat = d.theta >= 1.0 - 1e-12;
    return d;
}

MeanErr mean_stderr(const std::vector<double>& v)
{
    MeanErr m;
    if (v.empty()) return m;
    double s = 0;
    for (double x : v) s += x;
    m.mean = s / v.size();
    if (v.size() < 2) return m;
    double ss = 0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.stderr_ = std::sqrt(ss / (v.size() - 1) / v.size());
    return m;
}

namespace {

// Integral over [a,b] of the cubic through (x[k..k+3], y[k..k+3]), via 3-point Gauss.
double cubic_piece(const double* x, const double* y, double a, double b)
{
    static const double gx[3] = {-0.7745966692414834, 0.0, 0.7745966692414834};
    static const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    double s = 0.0;
    for (int g = 0; g < 3; ++g) {
        const double t = 0.5 * (a + b) + 0.5 * (b - a) * gx[g];
        double v = 0.0;
        for (int i = 0; i < 4; ++i) {
            double l = 1.0;
            for (int j = 0; j < 4; ++j)
                if (j != i) l *= (t - x[j]) / (x[i] - x[j]);
            v += l * y[i];
        }
        s += gw[g] * v;
    }
    return 0.5 * (b - a) * s;
}

std::size_t window_start(std::size_t i, std::size_t n)
{
    // interval [i, i+1] uses nodes i-1..i+2, clamped at the ends
    if (i == 0) return 0;
    if (i + 2 >= n) return n - 4;
    return i - 1;
}

}  // namespace

double integrate_nonuniform(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size()) throw std::invalid_argument("integrate_nonuniform: size mismatch");
    const std::size_t n = x.size();
    if (n < 2) return 0.0;
    double s = 0.0;
    if (n < 4) {
        for (std::size_t i = 0; i + 1 < n; ++i) s += 0.5 * (x[i + 1] - x[i]) * (y[i] + y[i + 1]);
        return s;
    }
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const std::size_t k = window_start(i, n);
        s += cubic_piece(&x[k], &y[k], x[i], x[i + 1]);
    }
    return s;
}

double interpolate_cubic(const std::vector<double>& x, const std::vector<double>& y, double t)
{
    const std::size_t n = x.size();
    if (n != y.size() || n == 0) throw std::invalid_argument("interpolate_cubic: bad samples");
    if (n < 4) {
        if (n == 1) return y[0];
        const auto it = std::upper_bound(x.begin(), x.end(), t);
        std::size_t i = it == x.begin() ? 0 : static_cast<std::size_t>(it - x.begin()) - 1;
        i = std::min(i, n - 2);
        const double w = (t - x[i]) / (x[i + 1] - x[i]);
        return (1 - w) * y[i] + w * y[i + 1];
    }
    const auto it = std::upper_bound(x.begin(), x.end(), t);
    std::size_t i = it == x.begin() ? 0 : static_cast<std::size_t>(it - x.begin()) - 1;
    i = std::min(i, n - 2);
    const std::size_t k = window_start(i, n);
    double v = 0.0;
    for (std::size_t a = k; a < k + 4; ++a) {
        double l = 1.0;
        for (std::size_t b = k; b < k + 4; ++b)
            if (b != a) l *= (t - x[b]) / (x[a] - x[b]);
        v += l * y[a];
    }
    return v;
}

}  // namespace anosov
