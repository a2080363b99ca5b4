#pragma once

// Magnets, crossings, the coupling step with tau_alpha / tau_beta bookkeeping,
// recovery and the coupling-time ledger.

#include "anosov/holonomy.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace anosov {

/// Parallelogram around `center` in the guide's eigen-coordinates:
/// p = center + a e_u + b e_s with |a| <= u_extent/2, |b| <= s_extent/2.
/// The s-sides are a = +-u_extent/2, the u-sides b = +-s_extent/2.
struct Rectangle {
    int q = 0;
    Vec2 center = Vec2(0.5, 0.5);
    Vec2 eu = Vec2(1, 0);
    Vec2 es = Vec2(0, 1);
    double u_extent = 0.0;
    double s_extent = 0.0;

    /// (a, b) of the torus point p, using the shortest displacement from the centre.
    Vec2 coords(const Vec2& p) const;
    Vec2 point(double a, double b) const { return center + a * eu + b * es; }
    bool contains(const Vec2& p) const;
};

struct MagnetConfig {
    std::vector<Vec2> centers;  // per guide; missing entries use the first (or (0.5,0.5))
    double u_factor = 0.3;      // u_extent = u_factor * ell
    double s_factor = 0.2;      // s_extent = s_factor * ell0; must not exceed 0.2
};

/// One rectangle per guide. Throws std::invalid_argument on s_extent > 0.2 ell0.
std::vector<Rectangle> choose_magnets(const MapSequence& seq, const MagnetConfig& mc, double ell,
                                      double ell0);

/// The refined region at time n: leaves of E^n through (a, 0), a in [a_lo, a_hi],
/// that join the two u-sides without leaving the rectangle.
struct Magnet {
    Rectangle rect;
    long n = 0;
    bool empty = true;
    double a_lo = 0.0;
    double a_hi = 0.0;
    /// Boundary leaves as (a, b) samples ordered by b, from -s/2 to s/2.
    std::vector<Vec2> leaf_lo;
    std::vector<Vec2> leaf_hi;

    bool contains(const Vec2& p) const;
};

Magnet refine_magnet(const LineFieldEvaluator& f, const Rectangle& r, long n, double tol = 1e-10);

enum class CrossingClass { None, Proper, SuperProper };
const char* to_string(CrossingClass c);

struct CrossingRecord {
    std::size_t pair = 0;
    CrossingClass cls = CrossingClass::None;
    double r_in = 0.0, r_out = 0.0;  // arc range of the rectangle crossing
    double m_lo = 0.0, m_hi = 0.0;   // arc range of W cap M_n
    double excess_lo = 0.0, excess_hi = 0.0;
    double nu_magnet = 0.0;  // nu(W cap M_n), in the pair's own mass units
    double nu_rect = 0.0;
    double fraction = 0.0;  // nu_magnet / nu_rect
};

/// Complete crossings of the rectangle (s-side to s-side inside the u-sides)
/// with W cap M_n located by leaf intersection. At most one record per pair
/// (the first along the curve); remnants are skipped.
std::vector<CrossingRecord> detect_crossings(const LineFieldEvaluator& f,
                                             const StandardFamily& fam, const Magnet& m,
                                             const CurveParams& cp, double ell0, int threads = 1);

/// Single curve version (pair index 0); cls None when there is no complete crossing.
CrossingRecord classify_crossing(const LineFieldEvaluator& f, const StandardPair& w,
                                 const Magnet& m, const CurveParams& cp, double ell0);

/// Family measure in proper (or better) crossings: sum of weight * nu(W cap M_n).
double crossing_mass(const StandardFamily& fam, const std::vector<CrossingRecord>& rec);

/// Share of random standard curves that cross the rectangle super-properly
/// within `steps` iterations.
struct MagnetFrequency {
    int samples = 0;
    int hits = 0;
    double frequency = 0.0;
};
MagnetFrequency magnet_frequency(const MapSequence& seq, const Rectangle& r, const CurveParams& cp,
                                 int samples, int steps, std::uint64_t seed, long n0 = 0);

struct CouplingConfig {
    CurveParams curve;
    MagnetConfig magnet;
    double ell0 = 0.25;
    FamilyCap cap{600, 1};
    int threads = 1;
    /// Probe window [probe_from, probe_from + probe_len) for measuring d0 and s0.
    int probe_from = 1;
    int probe_len = 10;
    double d0_factor = 0.8;
    /// Fixed d0 > 0 bypasses the measurement.
    double d0 = 0.0;
    int r0 = 10;
    int r0_cap = 50;
    int wait_cap = 50;
    int max_events = 6;
    long n_max = 400;
    int holonomy_samples = 33;
    double tau_beta_max = 0.75;
    int test_sets = 20;
    int separation_samples = 6;
    int separation_depth = 30;
    std::uint64_t seed = 1;
};

struct ReplicaRecord {
    std::size_t g = 0, e = 0;  // pair indices in the G and E families
    double share = 0.0;        // m_ij: relative mass of the replica pair
    double tau_beta_sup = 0.0;
    double leaf_max = 0.0;
    double log_jh_max = 0.0;  // max |ln Jh| over the samples
};

struct CouplingEvent {
    int k = 0;
    long time = 0;
    int magnet = 0;
    double d0 = 0.0;
    double z_g = 0.0, z_e = 0.0;
    double tau_alpha = 0.0;
    double tau_beta_sup = 0.0;
    /// Factor applied to the quadrature tau_beta so that E loses exactly d0/2.
    double target_rescale = 1.0;
    double coupled_abs = 0.0;    // absolute mass coupled (per family)
    double remaining_abs = 0.0;  // absolute remaining mass after the event
    double drift_g = 0.0;        // |coupled + remaining - before| on the normalised scale
    double drift_e = 0.0;
    double quadrature_abs = 0.0;  // worst |source - target| over the test sets
    double quadrature_rel = 0.0;
    int components_g = 0, components_e = 0, skipped = 0;
    int recovery = 0;  // steps used by the recovery that followed
    bool recovered = true;
    double holder_after = 0.0;
    std::vector<ReplicaRecord> replicas;
    /// Worst separation / (ell0 lambda^m) over sampled matched pairs, m <= depth.
    double separation_ratio = 0.0;
    double separation_rate = 0.0;
};

struct TailFit {
    double theta = 0.0;
    double r2 = 0.0;
    int points = 0;
};

struct CouplingLedger {
    double d0 = 0.0;
    long s0 = -1;
    std::vector<double> probe_z_g, probe_z_e;
    std::vector<CouplingEvent> events;
    std::vector<std::string> aborted;  // reasons for events that were not performed
    long end_time = 0;
    bool starved = false;
    double lambda = 0.0;  // max_q 1/Lambda_q used for the separation bound

    /// mu(Upsilon > n) for n = 0..end_time.
    std::vector<double> tail() const;
    TailFit tail_fit() const;
    /// Largest |remaining after k events - (1 - d0/2)^k|.
    double geometric_error() const;
};

/// Deterministic coupling run of the two families (both at the same time).
CouplingLedger run_coupling(const LineFieldEvaluator& f, StandardFamily g, StandardFamily e,
                            const CouplingConfig& cfg, const std::vector<GuideConstants>& constants);

/// A single coupling step at the families' current time. Returns false (with a
/// reason) when the event has to be aborted; families are left untouched then.
/// On success the families are the normalised uncoupled remainders.
bool couple_step(const LineFieldEvaluator& f, StandardFamily& g, StandardFamily& e,
                 const Magnet& m, double d0, const CouplingConfig& cfg, double lambda,
                 CouplingEvent& ev, std::string& reason);

/// Largest density Hoelder constant over the family.
double family_holder_constant(const StandardFamily& fam, double eta);

}  // namespace anosov
