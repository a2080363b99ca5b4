#pragma once

// Flat-torus geometry: points, line directions, cones and subspace distances.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

namespace anosov {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Reduces a real number into [0,1).
double wrap_unit(double v);

/// Point on the flat torus R^2/Z^2, coordinates kept in [0,1).
class TorusPoint {
public:
    TorusPoint() = default;
    TorusPoint(double x, double y);
    explicit TorusPoint(const Vec2& lifted);

    double x() const { return x_; }
    double y() const { return y_; }
    Vec2 vec() const { return {x_, y_}; }

    /// Representative in the universal cover closest to `reference`.
    Vec2 lift_near(const Vec2& reference) const;

private:
    double x_ = 0.0;
    double y_ = 0.0;
};

/// Flat metric: minimum over integer shifts of the Euclidean distance.
double torus_distance(const TorusPoint& p, const TorusPoint& q);

/// Shortest displacement q - p over integer shifts.
Vec2 torus_displacement(const TorusPoint& p, const TorusPoint& q);

/// Re-lifts a sequence of torus points so consecutive entries differ by the
/// shortest displacement. The first point keeps its [0,1) representative.
std::vector<Vec2> unwrap_polyline(const std::vector<TorusPoint>& points);

/// A one-dimensional subspace of the tangent plane, stored as an angle in
/// [0, pi). Direction(v) == Direction(-v).
class Direction {
public:
    Direction() = default;
    explicit Direction(double angle);
    static Direction from_vector(const Vec2& v);

    double angle() const { return angle_; }
    /// Unit representative with angle in [0, pi).
    Vec2 unit() const { return {std::cos(angle_), std::sin(angle_)}; }
    /// Unit representative whose inner product with `hint` is non-negative.
    Vec2 unit_aligned(const Vec2& hint) const;
    Mat2 projector() const;
    /// Slope dy/dx of the line (infinite for vertical lines).
    double slope() const { return std::tan(angle_); }

private:
    double angle_ = 0.0;
};

/// Operator-norm distance of the orthogonal projections, |sin(dtheta)| for lines.
double subspace_dist(const Direction& a, const Direction& b);

/// sqrt(2) * (1 - <A,B>)^{1/2}, with <A,B> the cosine of the smallest angle.
double subspace_dist_prime(const Direction& a, const Direction& b);

struct ConeTest {
    bool inside = false;
    /// a*|v_axis| - |v_comp|; positive in the interior.
    double margin = 0.0;
    /// margin / |v|, scale free.
    double relative_margin = 0.0;
};

/// { v_axis + v_comp : |v_comp| <= a |v_axis| } in the (axis, complement) splitting.
struct Cone {
    Direction axis;
    Direction complement_axis;
    double half_width = 0.1;

    /// Throws std::invalid_argument for the zero vector.
    ConeTest test(const Vec2& v) const;
    bool contains(const Vec2& v) const { return test(v).inside; }
    /// The two boundary rays (up to sign): axis +/- a * complement.
    std::vector<Vec2> boundary_vectors() const;
    /// `count` unit directions spread over the closed cone, boundaries included.
    std::vector<Vec2> sample_vectors(int count) const;
};

/// Coordinates of v in the (not necessarily orthogonal) unit basis (e1, e2).
Vec2 split_coordinates(const Vec2& v, const Vec2& e1, const Vec2& e2);

}  // namespace anosov
