#include "anosov/geometry.hpp"

#include <stdexcept>

namespace anosov {

double wrap_unit(double v)
{
    double r = v - std::floor(v);
    // floor can round r up to exactly 1 for tiny negative inputs
    if (r >= 1.0) r = 0.0;
    return r;
}

TorusPoint::TorusPoint(double x, double y) : x_(wrap_unit(x)), y_(wrap_unit(y)) {}

TorusPoint::TorusPoint(const Vec2& lifted) : TorusPoint(lifted.x(), lifted.y()) {}

Vec2 TorusPoint::lift_near(const Vec2& reference) const
{
    Vec2 p{x_, y_};
    p.x() += std::round(reference.x() - p.x());
    p.y() += std::round(reference.y() - p.y());
    return p;
}

Vec2 torus_displacement(const TorusPoint& p, const TorusPoint& q)
{
    Vec2 d = q.vec() - p.vec();
    d.x() -= std::round(d.x());
    d.y() -= std::round(d.y());
    return d;
}

double torus_distance(const TorusPoint& p, const TorusPoint& q)
{
    return torus_displacement(p, q).norm();
}

std::vector<Vec2> unwrap_polyline(const std::vector<TorusPoint>& points)
{
    std::vector<Vec2> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (i == 0)
            out.push_back(points[0].vec());
        else
            out.push_back(out.back() + torus_displacement(points[i - 1], points[i]));
    }
    return out;
}

Direction::Direction(double angle)
{
    double a = std::fmod(angle, kPi);
    if (a < 0) a += kPi;
    if (a >= kPi) a = 0.0;
    angle_ = a;
}

Direction Direction::from_vector(const Vec2& v)
{
    if (v.squaredNorm() == 0.0) throw std::invalid_argument("Direction: zero vector");
    return Direction(std::atan2(v.y(), v.x()));
}

Vec2 Direction::unit_aligned(const Vec2& hint) const
{
    Vec2 u = unit();
    return u.dot(hint) < 0 ? Vec2(-u) : u;
}

Mat2 Direction::projector() const
{
    const Vec2 u = unit();
    return u * u.transpose();
}

double subspace_dist(const Direction& a, const Direction& b)
{
    return std::abs(std::sin(a.angle() - b.angle()));
}

double subspace_dist_prime(const Direction& a, const Direction& b)
{
    // 1 - |cos| written as sin^2 / (1 + |cos|) to keep relative precision
    const double d = a.angle() - b.angle();
    const double s = std::sin(d);
    const double c = std::abs(std::cos(d));
    return std::sqrt(2.0) * std::sqrt(s * s / (1.0 + c));
}

Vec2 split_coordinates(const Vec2& v, const Vec2& e1, const Vec2& e2)
{
    Mat2 basis;
    basis.col(0) = e1;
    basis.col(1) = e2;
    return basis.inverse() * v;
}

ConeTest Cone::test(const Vec2& v) const
{
    const double n = v.norm();
    if (n == 0.0) throw std::invalid_argument("Cone::test: zero vector");
    const Vec2 c = split_coordinates(v, axis.unit(), complement_axis.unit());
    ConeTest t;
    t.margin = half_width * std::abs(c.x()) - std::abs(c.y());
    t.relative_margin = t.margin / n;
    t.inside = t.margin >= 0.0;
    return t;
}

std::vector<Vec2> Cone::boundary_vectors() const
{
    const Vec2 a = axis.unit();
    const Vec2 c = complement_axis.unit();
    return {a + half_width * c, a - half_width * c};
}

std::vector<Vec2> Cone::sample_vectors(int count) const
{
    std::vector<Vec2> out;
    if (count <= 0) return out;
    const Vec2 a = axis.unit();
    const Vec2 c = complement_axis.unit();
    if (count == 1) {
        out.push_back(a);
        return out;
    }
    for (int i = 0; i < count; ++i) {
        const double t = -1.0 + 2.0 * i / (count - 1);
        Vec2 v = a + t * half_width * c;
        out.push_back(v / v.norm());
    }
    return out;
}

}  // namespace anosov
