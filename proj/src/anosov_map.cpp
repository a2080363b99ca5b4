#include "anosov/anosov_map.hpp"

#include <stdexcept>
#include <string>

namespace anosov {

AnosovMap::AnosovMap(const Mat2i& a, double eps, std::vector<TrigMode> modes)
    : a_(a), eps_(eps), modes_(std::move(modes))
{
    const int det = a_(0, 0) * a_(1, 1) - a_(0, 1) * a_(1, 0);
    const int tr = a_(0, 0) + a_(1, 1);
    if (det != 1 && det != -1) throw std::invalid_argument("AnosovMap: |det A| must be 1");
    // the identity default is allowed so containers can be default constructed
    if (!(a_ == Mat2i::Identity()) && std::abs(tr) <= 2)
        throw std::invalid_argument("AnosovMap: |trace A| must exceed 2");
    if (eps_ < 0) throw std::invalid_argument("AnosovMap: negative amplitude");
    a_inv_ = a_.cast<double>().inverse();
}

Vec2 AnosovMap::perturbation(const Vec2& p) const
{
    Vec2 g = Vec2::Zero();
    if (eps_ == 0.0) return g;
    for (const auto& m : modes_) {
        const double arg = kTwoPi * (m.kx * p.x() + m.ky * p.y()) + m.phase;
        g += m.coeff * std::sin(arg);
    }
    return eps_ * g;
}

Mat2 AnosovMap::perturbation_jacobian(const Vec2& p) const
{
    Mat2 j = Mat2::Zero();
    if (eps_ == 0.0) return j;
    for (const auto& m : modes_) {
        const double arg = kTwoPi * (m.kx * p.x() + m.ky * p.y()) + m.phase;
        const double c = kTwoPi * std::cos(arg);
        j(0, 0) += m.coeff.x() * c * m.kx;
        j(0, 1) += m.coeff.x() * c * m.ky;
        j(1, 0) += m.coeff.y() * c * m.kx;
        j(1, 1) += m.coeff.y() * c * m.ky;
    }
    return eps_ * j;
}

Vec2 AnosovMap::apply_lift(const Vec2& p) const
{
    return a_.cast<double>() * p + perturbation(p);
}

Vec2 AnosovMap::apply_difference(const Vec2& p, const Vec2& d) const
{
    Vec2 out = a_.cast<double>() * d;
    if (eps_ == 0.0) return out;
    // sin(a + b) - sin(a) = 2 cos(a + b/2) sin(b/2)
    for (const auto& m : modes_) {
        const double a = kTwoPi * (m.kx * p.x() + m.ky * p.y()) + m.phase;
        const double b = kTwoPi * (m.kx * d.x() + m.ky * d.y());
        out += eps_ * m.coeff * (2.0 * std::cos(a + 0.5 * b) * std::sin(0.5 * b));
    }
    return out;
}

Mat2 AnosovMap::jacobian(const Vec2& p) const
{
    return a_.cast<double>() + perturbation_jacobian(p);
}

Vec2 AnosovMap::second_derivative(const Vec2& p, const Vec2& u, const Vec2& v) const
{
    Vec2 out = Vec2::Zero();
    if (eps_ == 0.0) return out;
    for (const auto& m : modes_) {
        const double arg = kTwoPi * (m.kx * p.x() + m.ky * p.y()) + m.phase;
        const double ku = m.kx * u.x() + m.ky * u.y();
        const double kv = m.kx * v.x() + m.ky * v.y();
        out -= m.coeff * (kTwoPi * kTwoPi * std::sin(arg) * ku * kv);
    }
    return eps_ * out;
}

double AnosovMap::second_derivative_norm(const Vec2& p) const
{
    if (is_linear()) return 0.0;
    // the form is a sum of rank-one symmetric pieces; sample directions densely
    double best = 0.0;
    constexpr int kDirs = 64;
    for (int i = 0; i < kDirs; ++i) {
        const double t = kPi * i / kDirs;
        const Vec2 u(std::cos(t), std::sin(t));
        best = std::max(best, second_derivative(p, u, u).norm());
    }
    return best;
}

Vec2 AnosovMap::inverse_lift(const Vec2& p) const
{
    Vec2 y = a_inv_ * p;
    if (is_linear()) return y;
    for (int it = 0; it < 50; ++it) {
        const Vec2 r = apply_lift(y) - p;
        const Vec2 step = jacobian(y).inverse() * r;
        y -= step;
        if (step.norm() <= 1e-13 * std::max(1.0, y.norm())) return y;
    }
    throw std::runtime_error("AnosovMap::inverse_lift: Newton did not converge");
}

C2Bounds AnosovMap::perturbation_bounds() const
{
    C2Bounds b;
    for (const auto& m : modes_) {
        const double c = m.coeff.norm();
        const double k = std::hypot(double(m.kx), double(m.ky));
        b.c0 += c;
        b.c1 += c * kTwoPi * k;
        b.c2 += c * kTwoPi * kTwoPi * k * k;
    }
    b.c0 *= eps_;
    b.c1 *= eps_;
    b.c2 *= eps_;
    return b;
}

HyperbolicSplitting hyperbolic_splitting(const Mat2& a)
{
    const double tr = a.trace();
    const double det = a.determinant();
    const double disc = tr * tr - 4.0 * det;
    if (disc <= 0) throw std::invalid_argument("hyperbolic_splitting: complex eigenvalues");
    const double root = std::sqrt(disc);
    // pick the root that avoids cancellation, recover the other from det
    const double big = 0.5 * (tr + (tr >= 0 ? root : -root));
    const double small = det / big;
    if (std::abs(big) <= 1.0) throw std::invalid_argument("hyperbolic_splitting: not hyperbolic");
    auto eigvec = [&](double lam) {
        // (a - lam) v = 0; take the better conditioned row
        const Vec2 r0(a(0, 0) - lam, a(0, 1));
        const Vec2 r1(a(1, 0), a(1, 1) - lam);
        const Vec2 r = r0.norm() >= r1.norm() ? r0 : r1;
        return Vec2(-r.y(), r.x());
    };
    HyperbolicSplitting s;
    s.lambda_u = big;
    s.lambda_s = small;
    s.unstable = Direction::from_vector(eigvec(big));
    s.stable = Direction::from_vector(eigvec(small));
    return s;
}

}  // namespace anosov
