#pragma once

// Unstable curves as refinable polylines carrying a density; standard pairs
// and families; evolution with cutting; growth, curvature and distortion checks.

#include "anosov/fit.hpp"
#include "anosov/map_sequence.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace anosov {

struct CurveParams {
    double h_max = 1e-3;
    double h_min = 1e-5;
    double ell = 0.05;  // shortest standard length
    double L = 0.5;     // longest standard length
    double K = 100.0;   // curvature cap
    double eta_r = 0.5;
    double c_r = 10.0;
    /// Throw when a mapped tangent leaves the unstable cone.
    bool check_cone = true;
};

/// Throws std::invalid_argument if 2 C_d L^{1-eta_r} > C_r or the caps are inconsistent.
void check_curve_params(const CurveParams& p, double c_d);

struct CurveNode {
    Vec2 p = Vec2::Zero();      // lifted position
    Vec2 u = Vec2(1, 0);        // unit tangent, oriented along the curve
    Vec2 kappa = Vec2::Zero();  // du/ds
    double log_rho = 0.0;
    double log_jac = 0.0;       // accumulated ln J along the lineage
    double r = 1.0;             // remaining fraction
};

/// Polyline with piecewise cubic Hermite interpolation between nodes.
/// `mass[i]` is the measure of the segment (node i, node i+1); masses are the
/// authoritative record of the measure, log_rho at nodes its pointwise density.
struct StandardPair {
    std::vector<CurveNode> nodes;
    std::vector<double> mass;
    long time = 0;
    /// Shorter than ell: kept with its weight, excluded from coupling.
    bool remnant = false;

    std::size_t segments() const { return mass.empty() ? 0 : nodes.size() - 1; }
    double total_mass() const;
    /// Hermite-interpolated position / derivative on segment i at t in [0,1].
    Vec2 position(std::size_t i, double t) const;
    Vec2 derivative(std::size_t i, double t) const;
    double segment_length(std::size_t i) const;
    /// Arc length of segment i from t = 0 to t.
    double partial_length(std::size_t i, double t) const;
    /// Node interpolated at parameter t of segment i (Hermite position and
    /// tangent, other fields linear).
    CurveNode node_at(std::size_t i, double t) const;
    /// Cumulative arc length at every node (front = 0).
    std::vector<double> arc_table() const;
    double length() const;
    double max_curvature() const;
    /// Segment and local parameter of arc position s (clamped to the curve).
    std::pair<std::size_t, double> locate(double s, const std::vector<double>& arc) const;
    /// Integral of r * rho over the curve, from segment masses.
    double remaining_mass() const;
};

struct StandardFamily {
    std::vector<StandardPair> pairs;
    std::vector<double> weights;
    long time = 0;

    double total_weight() const;
    /// Divides weights by their sum.
    void normalize();
};

/// Curve from a parametrization g on [t0,t1] with `count` nodes; tangents and
/// curvature from the exact first and second derivatives. Density uniform.
StandardPair make_parametric_pair(const std::function<Vec2(double)>& g,
                                  const std::function<Vec2(double)>& dg,
                                  const std::function<Vec2(double)>& d2g, double t0, double t1,
                                  int count, long time = 0);

/// Straight segment centred at `center`, spacing close to h.
StandardPair make_segment_pair(const Vec2& center, const Vec2& direction, double length, double h,
                               long time = 0);

/// Replaces the density by one proportional to rho(s) (s = arc length), normalised.
void set_density(StandardPair& pair, const std::function<double(double)>& rho);

/// One application of T_{time+1}: refine, map, merge, re-lift. Mass is untouched.
void step_pair(const MapSequence& seq, StandardPair& pair, const CurveParams& p);

/// Splits at increasing arc marks; pieces keep absolute masses and densities.
std::vector<StandardPair> split_at_arcs(const StandardPair& pair, const std::vector<double>& marks);

/// Cuts at arc-length marks into ceil(|W|/L) equal pieces. Returns pieces with
/// normalised masses and the factor weights c_i (sum 1).
std::vector<std::pair<StandardPair, double>> cut_pair(const StandardPair& pair,
                                                      const CurveParams& p);

/// Evolve to time n_to, cutting after every step. Output weights sum to 1.
std::vector<std::pair<StandardPair, double>> evolve_pair(const MapSequence& seq,
                                                         const StandardPair& pair, long n_to,
                                                         const CurveParams& p);

struct FamilyCap {
    /// After every step the family is reduced to at most this many pairs by
    /// systematic resampling by weight; 0 disables.
    std::size_t max_pairs = 0;
    std::uint64_t seed = 1;
};

void evolve_family(const MapSequence& seq, StandardFamily& fam, long n_to, const CurveParams& p,
                   const FamilyCap& cap = {}, int threads = 1);

/// Hoelder constant of ln rho over all node pairs: max |dlnrho| / |W(x,y)|^eta.
double density_holder_constant(const StandardPair& pair, double eta);

/// nu(W')/|W'| against nu(W'')/|W''| for arc intervals [a1,b1], [a2,b2].
struct DensityComparison {
    double ratio = 1.0;
    double bound = 1.0;  // D = exp(2 C_r L^eta_r)
    bool pass = true;
};
DensityComparison density_comparability(const StandardPair& pair, double a1, double b1, double a2,
                                        double b2, const CurveParams& p);
/// nu of the arc interval [a,b].
double arc_mass(const StandardPair& pair, double a, double b);

/// Tangent stretch of T_{n0+n} o ... o T_{n0+1} at arc position s; n0 = pair.time.
double curve_jacobian(const MapSequence& seq, const StandardPair& pair, double s, int n);

struct GrowthResult {
    double initial = 0.0;
    double lower = 0.0;
    double measured = 0.0;
    double upper = 0.0;
    /// Extremes of the pointwise stretch over the quadrature nodes.
    double min_stretch = 0.0;
    double max_stretch = 0.0;
    bool pass = true;
};

/// |T_n W| as the integral of the stretch over W (Gauss nodes per segment),
/// against the sandwich built from the per-interval constants.
GrowthResult growth_check(const MapSequence& seq, const StandardPair& pair, int n,
                          const std::vector<GuideConstants>& constants);

/// Per-step bound pieces of the curvature recursion for guide q.
struct CurvatureRecursion {
    double a = 0.0;  // (C Lambda)^-2 |D^2 T|
    double b = 0.0;  // (C Lambda)^-1 C_#
    double fixed_point = 0.0;
};
CurvatureRecursion curvature_recursion(const GuideConstants& c);

struct CurvatureSeries {
    std::vector<double> kappa;  // max curvature over followed pieces, per n
    double k1 = 0.0;            // fixed point (max over guides)
    int n_kappa = -1;           // first n with kappa <= k1
    bool stays_below = false;
    /// Largest excess of kappa_{n+1} over a + b kappa_n.
    double worst_recursion_excess = 0.0;
};

/// Follows up to `lineages` cut pieces (evenly spaced) for n steps.
CurvatureSeries curvature_check(const MapSequence& seq, const StandardPair& pair, int n,
                                const std::vector<GuideConstants>& constants,
                                const CurveParams& p, int lineages = 32);

struct DistortionSeries {
    std::vector<double> max_ratio;  // per n, max |ln J ratio| / |W(x,y)|
    LinearFit trend;                // max_ratio against n on [first_fit, n]
    int first_fit = 0;
};

/// Node pairs sampled on followed pieces; pairs closer than 10 h_min are skipped.
DistortionSeries distortion_check(const MapSequence& seq, const StandardPair& pair, int n,
                                  const CurveParams& p, int pairs_per_step = 1000,
                                  int lineages = 32, int first_fit = 5, std::uint64_t seed = 1);

/// Estimate of C_d from the guide constants and an eventual curvature bound.
double distortion_constant(const GuideConstants& c, double curvature);

/// Deterministic parallel loop over [0,n); chunks in index order.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace anosov
