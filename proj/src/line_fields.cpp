#include "anosov/line_fields.hpp"

#include <bit>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace anosov {

namespace {

Vec2 wrapped(const Vec2& p) { return TorusPoint(p).vec(); }

}  // namespace

double angle_defect(const Vec2& a, const Vec2& b)
{
    const double na = a.norm(), nb = b.norm();
    const double s = (a.x() * b.y() - a.y() * b.x()) / (na * nb);
    const double c = std::abs(a.dot(b)) / (na * nb);
    return s * s / (1.0 + c);
}

std::size_t LineFieldEvaluator::KeyHash::operator()(const Key& k) const
{
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    };
    mix(static_cast<std::uint64_t>(k.kind));
    mix(static_cast<std::uint64_t>(k.n));
    mix(k.x);
    mix(k.y);
    return static_cast<std::size_t>(h);
}

LineFieldEvaluator::LineFieldEvaluator(const MapSequence& seq, FieldPolicy policy)
    : seq_(seq), policy_(policy)
{
    if (policy_.depth_start < 1 || policy_.depth_step < 1 || policy_.depth_max < policy_.depth_start)
        throw std::invalid_argument("FieldPolicy: bad depth settings");
}

std::size_t LineFieldEvaluator::cache_size() const
{
    std::lock_guard<std::mutex> lock(mu_);
    return cache_.size();
}

void LineFieldEvaluator::clear_cache() const
{
    std::lock_guard<std::mutex> lock(mu_);
    cache_.clear();
}

FieldValue LineFieldEvaluator::eval(FieldKind kind, long n, const Vec2& x) const
{
    const Vec2 p = wrapped(x);
    const Key key{kind == FieldKind::Stable ? 0 : 1, n, std::bit_cast<std::uint64_t>(p.x()),
                  std::bit_cast<std::uint64_t>(p.y())};
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
    }
    const FieldValue v = kind == FieldKind::Stable ? compute_stable(n, p) : compute_unstable(n, p);
    std::lock_guard<std::mutex> lock(mu_);
    if (cache_.size() > 4000000) cache_.clear();
    cache_.emplace(key, v);
    return v;
}

FieldValue LineFieldEvaluator::stable(long n, const Vec2& x) const
{
    return eval(FieldKind::Stable, n, x);
}

FieldValue LineFieldEvaluator::unstable(long n, const Vec2& x) const
{
    return eval(FieldKind::Unstable, n, x);
}

namespace {

// Orbit data for the stable pull-back: inverse Jacobians along the forward orbit.
struct ForwardOrbit {
    const MapSequence& seq;
    long n;
    std::vector<Vec2> pts;
    std::vector<Mat2> jinv;

    void extend(int depth)
    {
        while (static_cast<int>(jinv.size()) < depth) {
            const long i = n + static_cast<long>(jinv.size()) + 1;
            const AnosovMap& t = seq.map(i);
            const Vec2& p = pts.back();
            jinv.push_back(t.jacobian(p).inverse());
            pts.push_back(wrapped(t.apply_lift(p)));
        }
    }
    Vec2 pull(int depth) const
    {
        const long far = n + depth;
        Vec2 v = seq.guide(seq.stable_family(far)).split.stable.unit();
        for (int j = depth; j >= 1; --j) {
            v = jinv[j - 1] * v;
            v /= v.norm();
        }
        return v;
    }
};

struct BackwardOrbit {
    const MapSequence& seq;
    long n;
    std::vector<Vec2> pts;  // pts[j] is at time n - j
    std::vector<Mat2> jac;  // jac[j-1] = D T_{n-j+1} at pts[j]

    void extend(int depth)
    {
        while (static_cast<int>(jac.size()) < depth) {
            const long i = n - static_cast<long>(jac.size());
            const AnosovMap& t = seq.map(i);
            const Vec2 p = wrapped(t.inverse_lift(pts.back()));
            jac.push_back(t.jacobian(p));
            pts.push_back(p);
        }
    }
    Vec2 push(int depth) const
    {
        const long far = n - depth;
        Vec2 v = seq.guide(seq.unstable_family(far)).split.unstable.unit();
        for (int j = depth; j >= 1; --j) {
            v = jac[j - 1] * v;
            v /= v.norm();
        }
        return v;
    }
};

template <class Orbit, class Eval>
FieldValue certify(Orbit& orb, const FieldPolicy& pol, Eval eval, const char* what, long n,
                   const Vec2& x)
{
    int d = pol.depth_start;
    orb.extend(d);
    Vec2 prev = eval(orb, d);
    double last = 0.0;
    while (d + pol.depth_step <= pol.depth_max) {
        const int d2 = d + pol.depth_step;
        orb.extend(d2);
        const Vec2 next = eval(orb, d2);
        last = subspace_dist(Direction::from_vector(prev), Direction::from_vector(next));
        if (last <= pol.tol) return {Direction::from_vector(next), last, d2};
        prev = next;
        d = d2;
    }
    std::ostringstream os;
    os << what << " field: no certificate at n=" << n << " x=(" << x.x() << "," << x.y()
       << ") after depth " << d << ", last change " << last;
    throw std::runtime_error(os.str());
}

}  // namespace

FieldValue LineFieldEvaluator::compute_stable(long n, const Vec2& x) const
{
    ForwardOrbit orb{seq_, n, {x}, {}};
    return certify(orb, policy_, [](const ForwardOrbit& o, int d) { return o.pull(d); }, "stable",
                   n, x);
}

FieldValue LineFieldEvaluator::compute_unstable(long n, const Vec2& x) const
{
    BackwardOrbit orb{seq_, n, {x}, {}};
    return certify(orb, policy_, [](const BackwardOrbit& o, int d) { return o.push(d); },
                   "unstable", n, x);
}

Direction LineFieldEvaluator::stable_at_depth(long n, const Vec2& x, int depth) const
{
    ForwardOrbit orb{seq_, n, {wrapped(x)}, {}};
    orb.extend(depth);
    return Direction::from_vector(orb.pull(depth));
}

Direction LineFieldEvaluator::unstable_at_depth(long n, const Vec2& x, int depth) const
{
    BackwardOrbit orb{seq_, n, {wrapped(x)}, {}};
    orb.extend(depth);
    return Direction::from_vector(orb.push(depth));
}

double predicted_holder_exponent(double lambda, double b1)
{
    return 2.0 * std::log(lambda) / (2.0 * std::log(b1) + std::log(lambda));
}

HolderEstimate estimate_holder(const LineFieldEvaluator& f, long n, FieldKind kind,
                               const HolderOptions& opt, double lambda, double b1)
{
    if (opt.k_max - opt.k_min < 1) throw std::invalid_argument("estimate_holder: need two scales");
    HolderEstimate est;
    est.alpha_pred = predicted_holder_exponent(lambda, b1);
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> lx, ly;
    double global_max = 0.0;
    for (int k = opt.k_min; k <= opt.k_max; ++k) {
        const double h = std::ldexp(1.0, -k);
        double sum = 0.0, mx = 0.0;
        for (int s = 0; s < opt.samples_per_scale; ++s) {
            const Vec2 x(unif(rng), unif(rng));
            const double th = kTwoPi * unif(rng);
            const Vec2 y = x + h * Vec2(std::cos(th), std::sin(th));
            const double d = subspace_dist(f.eval(kind, n, x).dir, f.eval(kind, n, y).dir);
            sum += d;
            mx = std::max(mx, d);
            est.max_ratio_pred = std::max(est.max_ratio_pred, d / std::pow(h, est.alpha_pred));
        }
        const double mean = sum / opt.samples_per_scale;
        est.scales.push_back(h);
        est.mean_dist.push_back(mean);
        est.max_dist.push_back(mx);
        global_max = std::max(global_max, mx);
        if (mean > 0) {
            lx.push_back(std::log(h));
            ly.push_back(std::log(mean));
        }
    }
    // fields constant to round-off carry no exponent
    if (global_max < 1e-13 || lx.size() < 2) {
        est.flat = true;
        est.alpha = std::numeric_limits<double>::infinity();
        est.r2 = 1.0;
        return est;
    }
    const LinearFit lf = linear_fit(lx, ly);
    est.alpha = lf.slope;
    est.constant = std::exp(lf.intercept);
    est.r2 = lf.r2;
    est.residuals = lf.residuals;
    return est;
}

ComparabilitySeries expansion_comparability(const MapSequence& seq, const Vec2& x, const Vec2& w,
                                            const Vec2& w_tilde, long n_from, int steps)
{
    ComparabilitySeries out;
    Vec2 p = x;
    Vec2 a = w.normalized(), b = w_tilde.normalized();
    double la = 0.0, lb = 0.0;
    out.ratio.push_back(1.0);
    out.angle_defect.push_back(angle_defect(a, b));
    for (int k = 0; k < steps; ++k) {
        const AnosovMap& t = seq.map(n_from + k);
        const Mat2 j = t.jacobian(p);
        a = j * a;
        b = j * b;
        la += std::log(a.norm());
        lb += std::log(b.norm());
        a.normalize();
        b.normalize();
        p = wrapped(t.apply_lift(p));
        out.ratio.push_back(std::exp(lb - la));
        out.angle_defect.push_back(angle_defect(a, b));
    }
    return out;
}

CoalescenceResult jacobian_coalescence(const MapSequence& seq, const Vec2& x1, const Vec2& x2,
                                       const Vec2& u1, const Vec2& u2, long n_from, int steps,
                                       double delta, double lambda)
{
    CoalescenceResult r;
    Vec2 p1 = x1, d = torus_displacement(TorusPoint(x1), TorusPoint(x2));
    Vec2 v1 = u1.normalized(), v2 = u2.normalized();
    for (int k = 0; k < steps; ++k) {
        const double dist = d.norm();
        r.distance.push_back(dist);
        if (!(dist < delta * std::pow(lambda, k)) && r.precondition) {
            r.precondition = false;
            r.witness = n_from + k;
        }
        const AnosovMap& t = seq.map(n_from + k);
        const Vec2 p2 = p1 + d;
        const Vec2 w1 = t.jacobian(p1) * v1;
        const Vec2 w2 = t.jacobian(p2) * v2;
        r.defect.push_back(std::abs(w1.norm() / w2.norm() - 1.0));
        v1 = w1.normalized();
        v2 = w2.normalized();
        d = t.apply_difference(p1, d);
        p1 = wrapped(t.apply_lift(p1));
    }
    // fit the envelope on the part above round-off
    int last = 0;
    for (int k = 0; k < static_cast<int>(r.defect.size()); ++k)
        if (r.defect[k] > 1e-13) last = k;
    try {
        r.envelope = fit_decay(r.defect, 0, last, 4);
        r.fitted = true;
    } catch (const std::invalid_argument&) {
        r.fitted = false;
    }
    return r;
}

}  // namespace anosov
