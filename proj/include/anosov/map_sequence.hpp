#pragma once

#include "anosov/anosov_map.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace anosov {

/// How the maps of one interval are produced around their guide.
enum class GeneratorKind { Fixed, Drift, RandomWalk };

struct GeneratorSpec {
    GeneratorKind kind = GeneratorKind::Fixed;
    /// Extra perturbation directions added on top of the guide map.
    std::vector<TrigMode> modes;
    double amplitude = 0.0;
    /// Drift: amplitude moves linearly to this value across the interval.
    double amplitude_end = 0.0;
    /// Random walk: standard deviation of each amplitude increment.
    double step = 0.0;
};

struct GuideSpec {
    Mat2i a = Mat2i::Identity();
    double epsilon = 0.0;
    std::vector<TrigMode> modes;
    /// Radius of the ball around the guide, in the scaled C^2 distance.
    double radius = 0.02;
    int min_dwell = 1;
    int length = 1;
    double cone_unstable = 0.2;
    double cone_stable = 0.2;
    GeneratorSpec generator;
};

struct SequenceSpec {
    std::vector<GuideSpec> guides;
    std::uint64_t seed = 1;
    /// Grid used to check the C^2 distance of every map to its guide.
    int grid = 64;
};

SequenceSpec sequence_spec_from_json(const nlohmann::json& j);
nlohmann::json sequence_spec_to_json(const SequenceSpec& s);

struct GuideMap {
    AnosovMap map;
    double radius = 0.0;
    int min_dwell = 1;
    double cone_unstable = 0.2;
    double cone_stable = 0.2;
    HyperbolicSplitting split;

    Cone unstable_cone() const { return {split.unstable, split.stable, cone_unstable}; }
    Cone stable_cone() const { return {split.stable, split.unstable, cone_stable}; }
};

/// Scaled C^2 distance max_j sup|D^j(T1 - T2)| / (2 pi)^j sampled on a grid.
/// For a single Fourier mode of frequency one this is its amplitude.
double scaled_c2_distance(const AnosovMap& t1, const AnosovMap& t2, int grid);

/// The finite sequence T_1..T_{n_Q} with guides; T_i = guide 1 for i <= 0 and
/// guide Q for i > n_Q.
class MapSequence {
public:
    MapSequence(std::vector<GuideMap> guides, std::vector<int> lengths,
                std::vector<AnosovMap> maps);

    int length() const { return static_cast<int>(maps_.size()); }
    int num_guides() const { return static_cast<int>(guides_.size()); }
    const GuideMap& guide(int q) const { return guides_.at(q); }
    /// n_q, the last index of interval q (0-based q).
    int interval_end(int q) const { return ends_.at(q); }
    int interval_begin(int q) const { return q == 0 ? 1 : ends_.at(q - 1) + 1; }

    const AnosovMap& map(long i) const;
    /// Guide index of T_i (clamped outside 1..n_Q).
    int guide_of_map(long i) const;
    /// Cone family in force at time n: unstable follows the last map applied,
    /// stable follows the next one.
    int unstable_family(long n) const { return guide_of_map(n); }
    int stable_family(long n) const { return guide_of_map(n + 1); }
    Cone unstable_cone(long n) const { return guides_[unstable_family(n)].unstable_cone(); }
    Cone stable_cone(long n) const { return guides_[stable_family(n)].stable_cone(); }

    /// Image of a lifted point at time n_from - 1 under T_{n_to} o ... o T_{n_from}.
    Vec2 compose(const Vec2& x, long n_from, long n_to) const;

private:
    std::vector<GuideMap> guides_;
    std::vector<int> ends_;
    std::vector<AnosovMap> maps_;
};

/// Throws std::invalid_argument on |I_q| < N_q or when a generated map leaves
/// the ball around its guide.
MapSequence build_sequence(const SequenceSpec& spec);

/// D_x(T_{n_to} o ... o T_{n_from}); x is a lifted point at time n_from - 1.
/// Throws std::out_of_range unless 1 <= n_from <= n_to.
Mat2 compose_jacobian(const MapSequence& seq, const Vec2& x, long n_from, long n_to);

struct AssumptionCheck {
    std::string name;
    bool pass = true;
    double worst_margin = 0.0;
    long samples = 0;
    long witness_time = -1;
    Vec2 witness_point = Vec2::Zero();
    Vec2 witness_vector = Vec2::Zero();
    std::string detail;
};

struct GuideConstants {
    int q = 0;
    double c = 0.0;           // C_q after the safety factor
    double lambda = 0.0;      // Lambda_q
    double lambda_bar = 0.0;  // sup|D T~_q| + eps_q
    double a_unstable = 0.0;
    double a_stable = 0.0;
    double c_prime = 0.0;     // C'_q for vectors outside the stable cone
    int k = 0;                // k_q
    double c_sharp = 0.0;     // C_# bound on growth ratios
    double d2_sup = 0.0;      // sup |D^2 T| over the interval maps
};

struct ValidationOptions {
    int grid = 128;
    int directions = 16;
    /// Side of the point grid used for the expansion constants.
    int constant_grid = 12;
    int transient = 5;
    double safety = 0.95;
};

struct ValidationReport {
    std::vector<AssumptionCheck> checks;  // A0..A4 in order
    std::vector<GuideConstants> constants;
    double b1 = 0.0;
    long cone_samples = 0;
    double min_cone_margin = 0.0;

    bool pass() const;
    const AssumptionCheck& check(const std::string& name) const;
};

ValidationReport validate_assumptions(const MapSequence& seq, const ValidationOptions& opt = {});

nlohmann::json validation_report_to_json(const ValidationReport& r);

}  // namespace anosov
