#pragma once

#include "anosov/geometry.hpp"

#include <Eigen/Dense>

#include <vector>

namespace anosov {

using Mat2i = Eigen::Matrix2i;

/// One term c * sin(2 pi k.x + phase) of the perturbing vector field.
struct TrigMode {
    int kx = 0;
    int ky = 0;
    Vec2 coeff = Vec2::Zero();
    double phase = 0.0;
};

/// Norm bounds of eps*g read off the coefficients: sup|g|, sup|Dg|, sup|D^2 g|.
struct C2Bounds {
    double c0 = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
};

/// T(x) = A x + eps g(x) mod 1 with g a trigonometric polynomial.
/// Everything is evaluated on the lift; g is Z^2 periodic so the lift of T
/// commutes with integer translations up to A.
class AnosovMap {
public:
    AnosovMap() : AnosovMap(Mat2i::Identity(), 0.0, {}) {}
    /// Throws std::invalid_argument unless |det A| = 1 and |tr A| > 2.
    AnosovMap(const Mat2i& a, double eps, std::vector<TrigMode> modes);

    const Mat2i& matrix() const { return a_; }
    Mat2 linear() const { return a_.cast<double>(); }
    double epsilon() const { return eps_; }
    const std::vector<TrigMode>& modes() const { return modes_; }
    bool is_linear() const { return eps_ == 0.0 || modes_.empty(); }

    Vec2 apply_lift(const Vec2& p) const;
    TorusPoint apply(const TorusPoint& p) const { return TorusPoint(apply_lift(p.vec())); }

    /// Newton on the lift from A^{-1} p; tolerance 1e-13, at most 50 iterations.
    /// Throws std::runtime_error when Newton does not converge.
    Vec2 inverse_lift(const Vec2& p) const;
    TorusPoint inverse(const TorusPoint& p) const { return TorusPoint(inverse_lift(p.vec())); }

    Mat2 jacobian(const Vec2& p) const;
    /// D^2 T(p)(u, v).
    Vec2 second_derivative(const Vec2& p, const Vec2& u, const Vec2& v) const;
    /// Operator norm of the bilinear form D^2T(p), by sampling the unit circle finely.
    double second_derivative_norm(const Vec2& p) const;

    /// T(p + d) - T(p) without cancellation for tiny d.
    Vec2 apply_difference(const Vec2& p, const Vec2& d) const;

    /// Perturbation part eps*g and its derivatives, for distance checks.
    Vec2 perturbation(const Vec2& p) const;
    Mat2 perturbation_jacobian(const Vec2& p) const;

    /// Analytic bounds on eps*g in C^0, C^1, C^2.
    C2Bounds perturbation_bounds() const;

private:
    Mat2i a_;
    Mat2 a_inv_;
    double eps_ = 0.0;
    std::vector<TrigMode> modes_;
};

/// Eigen-data of an integer hyperbolic matrix.
struct HyperbolicSplitting {
    double lambda_u = 0.0;  // |lambda| > 1
    double lambda_s = 0.0;  // |lambda| < 1
    Direction unstable;
    Direction stable;
};

HyperbolicSplitting hyperbolic_splitting(const Mat2& a);

}  // namespace anosov
