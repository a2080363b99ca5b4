#pragma once

// Stable leaves of the finite-time foliation, holonomy between nearby unstable
// curves and its Jacobian by the truncated product along forward orbits.

#include "anosov/curves.hpp"
#include "anosov/line_fields.hpp"

namespace anosov {

struct LeafOptions {
    double step = 1e-3;
    double max_len = 0.05;  // ell_0
    double intersect_tol = 1e-10;
};

struct StableLeafSegment {
    Vec2 base = Vec2::Zero();
    long n = 0;
    std::vector<Vec2> points;  // lifted, points.front() == base
    double length = 0.0;
    /// Endpoint distance to a re-trace at half the step.
    double error = 0.0;
};

/// RK4 along E^n from x, sign chosen against the field's canonical unit vector.
StableLeafSegment trace_stable_leaf(const LineFieldEvaluator& f, long n, const Vec2& x,
                                    double max_len, int sign = 1, double step = 1e-3,
                                    bool estimate_error = true);

/// One RK4 step of signed length h along E^n, direction kept close to `dir`.
Vec2 leaf_rk4(const LineFieldEvaluator& f, long n, const Vec2& z, Vec2& dir, double h);

struct LeafHit {
    bool found = false;
    Vec2 point = Vec2::Zero();  // on the target, lifted near the source point
    Vec2 tangent = Vec2::Zero();
    Vec2 kappa = Vec2::Zero();
    double arc = 0.0;  // arc position on the target
    double leaf_length = 0.0;
};

/// Follows the leaf of E^n through x in both directions for at most max_len
/// and returns the nearest intersection with the target curve.
LeafHit leaf_to_curve(const LineFieldEvaluator& f, long n, const Vec2& x,
                      const StandardPair& target, const std::vector<double>& target_arc,
                      const LeafOptions& opt);

struct HolonomyPair {
    double s1 = 0.0;
    Vec2 x = Vec2::Zero();
    Vec2 u1 = Vec2::Zero();
    double s2 = 0.0;
    Vec2 hx = Vec2::Zero();
    Vec2 u2 = Vec2::Zero();
    Vec2 k2 = Vec2::Zero();
    double leaf_length = 0.0;
};

struct HolonomyMap {
    long n = 0;
    std::vector<HolonomyPair> pairs;  // ordered by s1
    std::size_t attempted = 0;
    double domain_fraction = 0.0;
    bool monotone = true;
};

/// Matches the given arc positions of w1 (both curves at time n) to w2.
HolonomyMap build_holonomy(const LineFieldEvaluator& f, const StandardPair& w1,
                           const StandardPair& w2, const std::vector<double>& s1_positions,
                           const LeafOptions& opt = {}, int threads = 1);

/// A point and a nearby follower on the same E^n leaf, advanced together; the
/// follower is carried as an exact displacement and re-projected onto the
/// anchor's leaf (along its own curve) after every step.
struct PairedOrbit {
    long n = 0;
    Vec2 x = Vec2::Zero();
    Vec2 d = Vec2::Zero();
    Vec2 u1 = Vec2::Zero();
    Vec2 u2 = Vec2::Zero();
    Vec2 k2 = Vec2::Zero();

    /// Applies T_{n+1}; returns ln(|DT u1| / |DT u2|).
    double step(const LineFieldEvaluator& f);
    void reproject(const LineFieldEvaluator& f);
};

struct HolonomyJacobian {
    double log_jac = 0.0;
    int depth = 0;
    bool converged = false;
    std::vector<double> log_ratios;   // per step k = 1..depth
    std::vector<double> separation;   // |T_k x - T_k hx|, k = 0..depth
};

struct JacobianOptions {
    double tol = 1e-9;
    int depth_cap = 400;
};

HolonomyJacobian holonomy_jacobian(const LineFieldEvaluator& f, long n, const HolonomyPair& p,
                                   const JacobianOptions& opt = {});

/// ln Jh_m at the m-th image: tail sums of the per-step ratios, m = 0..depth.
std::vector<double> tail_log_jacobians(const HolonomyJacobian& j);

struct HolonomyDecay {
    std::vector<double> envelope;  // max over pairs of |ln Jh_m|, m = 0..m_max
    DecayFit fit;                  // on the part of the envelope above the floor
    double c1 = 0.0;               // max |ln Jh| over the pairs
};

/// Geometric envelope of |ln Jh_m| over m in [0, m_max]; values at or below
/// `floor` are treated as round-off and end the fit window.
HolonomyDecay holonomy_decay(const std::vector<HolonomyJacobian>& jacs, int m_max = 30,
                             double floor = 1e-13);

struct DecompositionCheck {
    double direct = 0.0;    // ln Jh from the full product
    double composed = 0.0;  // first m factors + ln Jh rebuilt at time n+m
    double rel_error = 0.0;
};

/// Rebuilds the holonomy at time n+m between the evolved curves and compares.
DecompositionCheck jacobian_decomposition(const LineFieldEvaluator& f, const StandardPair& w1,
                                          const StandardPair& w2, const HolonomyPair& p, int m,
                                          const CurveParams& cp, const LeafOptions& lo = {},
                                          const JacobianOptions& jo = {});

struct RegularityEstimate {
    double eta = 0.0;      // fitted exponent, capped at 1
    double eta_raw = 0.0;  // regression slope
    double c_h = 0.0;
    double r2 = 0.0;
    bool flat = false;
    std::vector<double> separations;
    std::vector<double> mean_diff;
};

/// |ln Jh(x1) - ln Jh(x2)| against |W1(x1,x2)| = 2^-k, k in [k_min, k_max].
RegularityEstimate holonomy_regularity(const LineFieldEvaluator& f, const StandardPair& w1,
                                       const StandardPair& w2, int k_min, int k_max,
                                       int samples_per_scale, std::uint64_t seed,
                                       const LeafOptions& lo = {}, const JacobianOptions& jo = {});

struct PushforwardResult {
    std::vector<double> s2;
    std::vector<double> rho2;
    double source_mass = 0.0;  // nu1 over the matched arc, from segment masses
    double target_mass = 0.0;  // quadrature of rho2 over the image arc
    /// Quadrature of (rho2 o h) Jh over the source arc; equals source_mass up to
    /// the density interpolation error.
    double pulled_mass = 0.0;
};

/// rho2(hx) = rho1(x) / Jh(x) on the matched pairs; jac holds ln Jh per pair.
PushforwardResult holonomy_pushforward(const HolonomyMap& hol, const std::vector<double>& log_jac,
                                       const StandardPair& w1);

/// Log-density of a pair at arc position s (linear between nodes).
double log_density_at(const StandardPair& p, const std::vector<double>& arc, double s);

}  // namespace anosov
