#pragma once

#include "anosov/fit.hpp"
#include "anosov/map_sequence.hpp"

#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <vector>

namespace anosov {

enum class FieldKind { Stable, Unstable };

struct FieldPolicy {
    double tol = 1e-10;  // tau_dir
    int depth_start = 20;
    int depth_step = 5;
    int depth_max = 200;
};

struct FieldValue {
    Direction dir;
    /// Subspace distance between the two deepest evaluations.
    double certificate = 0.0;
    int depth = 0;
};

/// On-demand evaluation of E^n (pull-back from the augmented future) and F^n
/// (push-forward from the augmented past). Results are memoized by exact point;
/// the cache is guarded by a mutex so an evaluator can be shared across threads.
class LineFieldEvaluator {
public:
    explicit LineFieldEvaluator(const MapSequence& seq, FieldPolicy policy = {});

    /// Throws std::runtime_error if the certificate is not reached by depth_max.
    FieldValue stable(long n, const Vec2& x) const;
    FieldValue unstable(long n, const Vec2& x) const;
    FieldValue eval(FieldKind kind, long n, const Vec2& x) const;

    /// Evaluation at a fixed depth, bypassing cache and certificate.
    Direction stable_at_depth(long n, const Vec2& x, int depth) const;
    Direction unstable_at_depth(long n, const Vec2& x, int depth) const;

    const MapSequence& sequence() const { return seq_; }
    const FieldPolicy& policy() const { return policy_; }
    std::size_t cache_size() const;
    void clear_cache() const;

private:
    struct Key {
        int kind;
        long n;
        std::uint64_t x, y;
        bool operator==(const Key& o) const
        {
            return kind == o.kind && n == o.n && x == o.x && y == o.y;
        }
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const;
    };

    FieldValue compute_stable(long n, const Vec2& x) const;
    FieldValue compute_unstable(long n, const Vec2& x) const;

    const MapSequence& seq_;
    FieldPolicy policy_;
    mutable std::mutex mu_;
    mutable std::unordered_map<Key, FieldValue, KeyHash> cache_;
};

struct HolderEstimate {
    double alpha = 0.0;
    double constant = 0.0;
    double r2 = 0.0;
    bool flat = false;
    double alpha_pred = 0.0;
    /// Per dyadic scale: separation and mean subspace distance.
    std::vector<double> scales;
    std::vector<double> mean_dist;
    std::vector<double> max_dist;
    std::vector<double> residuals;
    /// Largest ratio dist / |x-y|^alpha_pred over the samples.
    double max_ratio_pred = 0.0;
};

struct HolderOptions {
    int k_min = 3;
    int k_max = 12;
    int samples_per_scale = 64;
    std::uint64_t seed = 1;
};

/// 2 ln L / (2 ln b1 + ln L).
double predicted_holder_exponent(double lambda, double b1);

/// Log-log regression of mean subspace_dist(E_x, E_y) against |x-y| = 2^-k.
HolderEstimate estimate_holder(const LineFieldEvaluator& f, long n, FieldKind kind,
                               const HolderOptions& opt, double lambda, double b1);

struct ComparabilitySeries {
    std::vector<double> ratio;          // |w~_n| / |w_n|
    std::vector<double> angle_defect;   // 1 - |cos angle(w_n, w~_n)|
};

/// Pushes w and w~ from x at time n_from - 1 through T_{n_from}, ...
ComparabilitySeries expansion_comparability(const MapSequence& seq, const Vec2& x, const Vec2& w,
                                            const Vec2& w_tilde, long n_from, int steps);

struct CoalescenceResult {
    std::vector<double> defect;    // |J1/J2 - 1| per step
    std::vector<double> distance;  // d(T_n x1, T_n x2)
    bool precondition = true;
    long witness = -1;
    DecayFit envelope;
    bool fitted = false;
};

/// Jacobian ratios along two orbits that approach each other; the precondition
/// d(T_n x1, T_n x2) < delta lambda^n is verified step by step.
CoalescenceResult jacobian_coalescence(const MapSequence& seq, const Vec2& x1, const Vec2& x2,
                                       const Vec2& u1, const Vec2& u2, long n_from, int steps,
                                       double delta, double lambda);

/// 1 - |cos| between two vectors, computed as sin^2/(1+|cos|).
double angle_defect(const Vec2& a, const Vec2& b);

}  // namespace anosov
