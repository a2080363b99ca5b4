#include "anosov/holonomy.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace anosov {

namespace {

Vec2 aligned_field(const LineFieldEvaluator& f, long n, const Vec2& p, const Vec2& dir)
{
    Vec2 e = f.stable(n, p).dir.unit();
    if (e.dot(dir) < 0) e = -e;
    return e;
}

// RK4 on the displacement delta from base; the field is sampled at base + delta.
Vec2 rk4_disp(const LineFieldEvaluator& f, long n, const Vec2& base, const Vec2& delta, Vec2& dir,
              double h)
{
    const Vec2 k1 = aligned_field(f, n, base + delta, dir);
    const Vec2 k2 = aligned_field(f, n, base + (delta + 0.5 * h * k1), k1);
    const Vec2 k3 = aligned_field(f, n, base + (delta + 0.5 * h * k2), k2);
    const Vec2 k4 = aligned_field(f, n, base + (delta + h * k3), k3);
    dir = k4;
    return delta + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Integer shift putting the target's lift next to x.
Vec2 lift_shift(const StandardPair& target, const Vec2& x)
{
    double best = std::numeric_limits<double>::infinity();
    Vec2 shift = Vec2::Zero();
    for (const auto& nd : target.nodes) {
        const Vec2 disp = torus_displacement(TorusPoint(nd.p), TorusPoint(x));
        if (disp.norm() < best) {
            best = disp.norm();
            const Vec2 s = x - disp - nd.p;
            shift = Vec2(std::round(s.x()), std::round(s.y()));
        }
    }
    return shift;
}

struct LineHit {
    bool ok = false;
    std::size_t seg = 0;
    double t = 0.0;
    double s = 0.0;
};

// Line z + s e against the Hermite segment i (and its neighbours).
LineHit line_hermite(const StandardPair& c, const Vec2& shift, std::size_t i, const Vec2& z,
                     const Vec2& e)
{
    const std::size_t nseg = c.nodes.size() - 1;
    auto g = [&](std::size_t k, double t) { return cross(e, c.position(k, t) + shift - z); };
    LineHit h;
    for (std::size_t off : {std::size_t(0), std::size_t(1), std::size_t(2)}) {
        for (int sgn : {-1, 1}) {
            if (off == 0 && sgn < 0) continue;
            const long kk = static_cast<long>(i) + sgn * static_cast<long>(off);
            if (kk < 0 || kk >= static_cast<long>(nseg)) continue;
            const std::size_t k = static_cast<std::size_t>(kk);
            double lo = 0.0, hi = 1.0, glo = g(k, lo), ghi = g(k, hi);
            if (glo == 0.0) hi = lo;
            else if (ghi == 0.0) lo = hi;
            else if ((glo > 0) == (ghi > 0)) continue;
            for (int it = 0; it < 80 && hi - lo > 1e-16; ++it) {
                const double mid = 0.5 * (lo + hi);
                const double gm = g(k, mid);
                if ((gm > 0) == (glo > 0)) {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                }
            }
            h.ok = true;
            h.seg = k;
            h.t = 0.5 * (lo + hi);
            h.s = e.dot(c.position(k, h.t) + shift - z);
            return h;
        }
    }
    return h;
}

}  // namespace

Vec2 leaf_rk4(const LineFieldEvaluator& f, long n, const Vec2& z, Vec2& dir, double h)
{
    return z + rk4_disp(f, n, z, Vec2::Zero(), dir, h);
}

StableLeafSegment trace_stable_leaf(const LineFieldEvaluator& f, long n, const Vec2& x,
                                    double max_len, int sign, double step, bool estimate_error)
{
    if (!(step > 0) || !(max_len >= 0)) throw std::invalid_argument("trace_stable_leaf: bad step");
    StableLeafSegment seg;
    seg.base = x;
    seg.n = n;
    seg.points.push_back(x);
    Vec2 dir = f.stable(n, x).dir.unit() * (sign < 0 ? -1.0 : 1.0);
    Vec2 z = x;
    double done = 0.0;
    while (done < max_len - 1e-15) {
        const double h = std::min(step, max_len - done);
        z = leaf_rk4(f, n, z, dir, h);
        done += h;
        seg.points.push_back(z);
    }
    seg.length = done;
    if (estimate_error && max_len > 0) {
        const auto half = trace_stable_leaf(f, n, x, max_len, sign, step / 2, false);
        seg.error = (half.points.back() - z).norm();
    }
    return seg;
}

LeafHit leaf_to_curve(const LineFieldEvaluator& f, long n, const Vec2& x,
                      const StandardPair& target, const std::vector<double>& target_arc,
                      const LeafOptions& opt)
{
    LeafHit best;
    if (target.nodes.size() < 2) return best;
    const Vec2 shift = lift_shift(target, x);
    const std::size_t nseg = target.nodes.size() - 1;
    // chord bounding boxes in blocks of 32 segments
    constexpr std::size_t kBlock = 32;
    std::vector<Eigen::AlignedBox2d> boxes;
    for (std::size_t b = 0; b < nseg; b += kBlock) {
        Eigen::AlignedBox2d box;
        for (std::size_t i = b; i <= std::min(nseg, b + kBlock); ++i) box.extend(target.nodes[i].p + shift);
        boxes.push_back(box);
    }
    for (int sign : {1, -1}) {
        Vec2 dir = f.stable(n, x).dir.unit() * static_cast<double>(sign);
        Vec2 z = x;
        double done = 0.0;
        bool hit = false;
        std::size_t hseg = 0;
        double ha = 0.0;
        double hstep = 0.0;
        Vec2 zdir = dir;
        while (done < opt.max_len - 1e-15 && !hit) {
            const double h = std::min(opt.step, opt.max_len - done);
            Vec2 d2 = dir;
            const Vec2 z1 = leaf_rk4(f, n, z, d2, h);
            Eigen::AlignedBox2d sb;
            sb.extend(z);
            sb.extend(z1);
            const Vec2 pad(1e-6 + 0.1 * h, 1e-6 + 0.1 * h);
            sb.min() -= pad;
            sb.max() += pad;
            double best_a = 2.0;
            for (std::size_t b = 0; b < boxes.size(); ++b) {
                if (!boxes[b].intersects(sb)) continue;
                for (std::size_t i = b * kBlock; i < std::min(nseg, (b + 1) * kBlock); ++i) {
                    const Vec2 a0 = target.nodes[i].p + shift, a1 = target.nodes[i + 1].p + shift;
                    const Vec2 r = z1 - z, q = a1 - a0;
                    const double den = cross(r, q);
                    if (den == 0.0) continue;
                    const double a = cross(a0 - z, q) / den;
                    const double bb = cross(a0 - z, r) / den;
                    const double eps = 1e-9;
                    if (a < -eps || a > 1 + eps || bb < -0.05 || bb > 1.05) continue;
                    if (a < best_a) {
                        best_a = a;
                        hseg = i;
                    }
                }
            }
            if (best_a <= 1.0 + 1e-9) {
                hit = true;
                ha = std::max(0.0, best_a);
                hstep = h;
                zdir = dir;
                break;
            }
            z = z1;
            dir = d2;
            done += h;
        }
        if (!hit) continue;
        // refine: walk along the leaf to the line intersection until it stops moving
        Vec2 zr = z;
        Vec2 rdir = zdir;
        double len = done;
        if (ha * hstep > 0) {
            zr = leaf_rk4(f, n, z, rdir, ha * hstep);
            len += ha * hstep;
        }
        LineHit lh;
        bool ok = false;
        // iterate well past intersect_tol when round-off allows; accept at intersect_tol
        for (int it = 0; it < 30; ++it) {
            const Vec2 e = aligned_field(f, n, zr, rdir);
            lh = line_hermite(target, shift, hseg, zr, e);
            if (!lh.ok) break;
            hseg = lh.seg;
            ok = std::abs(lh.s) <= opt.intersect_tol;
            if (std::abs(lh.s) <= 1e-14) break;
            zr = leaf_rk4(f, n, zr, rdir, lh.s);
            len += lh.s;
        }
        if (!ok || len > opt.max_len) continue;
        if (best.found && std::abs(len) >= best.leaf_length) continue;
        const CurveNode nd = target.node_at(lh.seg, lh.t);
        best.found = true;
        best.point = nd.p + shift;
        best.tangent = nd.u;
        best.kappa = nd.kappa;
        best.arc = target_arc[lh.seg] + target.partial_length(lh.seg, lh.t);
        best.leaf_length = std::abs(len);
    }
    return best;
}

HolonomyMap build_holonomy(const LineFieldEvaluator& f, const StandardPair& w1,
                           const StandardPair& w2, const std::vector<double>& s1_positions,
                           const LeafOptions& opt, int threads)
{
    if (w1.time != w2.time) throw std::invalid_argument("build_holonomy: curves at different times");
    HolonomyMap hol;
    hol.n = w1.time;
    hol.attempted = s1_positions.size();
    const auto arc1 = w1.arc_table();
    const auto arc2 = w2.arc_table();
    std::vector<HolonomyPair> res(s1_positions.size());
    std::vector<char> found(s1_positions.size(), 0);
    parallel_for(s1_positions.size(), threads, [&](std::size_t k) {
        const auto [i, t] = w1.locate(s1_positions[k], arc1);
        const CurveNode nd = w1.node_at(i, t);
        const LeafHit h = leaf_to_curve(f, hol.n, nd.p, w2, arc2, opt);
        if (!h.found) return;
        HolonomyPair p;
        p.s1 = s1_positions[k];
        p.x = nd.p;
        p.u1 = nd.u;
        p.s2 = h.arc;
        p.hx = h.point;
        p.u2 = h.tangent.dot(nd.u) < 0 ? Vec2(-h.tangent) : h.tangent;
        p.k2 = h.kappa;
        p.leaf_length = h.leaf_length;
        res[k] = p;
        found[k] = 1;
    });
    for (std::size_t k = 0; k < res.size(); ++k)
        if (found[k]) hol.pairs.push_back(res[k]);
    std::sort(hol.pairs.begin(), hol.pairs.end(),
              [](const HolonomyPair& a, const HolonomyPair& b) { return a.s1 < b.s1; });
    hol.domain_fraction = hol.attempted ? static_cast<double>(hol.pairs.size()) / hol.attempted : 0.0;
    int dir = 0;
    for (std::size_t k = 1; k < hol.pairs.size(); ++k) {
        const double ds = hol.pairs[k].s2 - hol.pairs[k - 1].s2;
        const int sg = ds > 0 ? 1 : (ds < 0 ? -1 : 0);
        if (sg == 0 && hol.pairs[k].s1 != hol.pairs[k - 1].s1) hol.monotone = false;
        if (dir == 0) dir = sg;
        else if (sg != 0 && sg != dir) hol.monotone = false;
    }
    return hol;
}

double PairedOrbit::step(const LineFieldEvaluator& f)
{
    const AnosovMap& t = f.sequence().map(n + 1);
    const Vec2 y = x + d;
    const Mat2 j1 = t.jacobian(x), j2 = t.jacobian(y);
    const Vec2 w1 = j1 * u1, w2 = j2 * u2;
    const double n1 = w1.norm(), n2 = w2.norm();
    const Vec2 g2 = t.second_derivative(y, u2, u2) + j2 * k2;
    u1 = w1 / n1;
    u2 = w2 / n2;
    k2 = (g2 - u2 * u2.dot(g2)) / (n2 * n2);
    d = t.apply_difference(x, d);
    x = TorusPoint(t.apply_lift(x)).vec();
    ++n;
    return std::log(n1 / n2);
}

void PairedOrbit::reproject(const LineFieldEvaluator& f)
{
    const double dn = d.norm();
    if (dn == 0.0) return;
    Vec2 dir = d / dn;
    Vec2 delta = Vec2::Zero();
    double t = 0.0;
    for (int it = 0; it < 60; ++it) {
        const Vec2 e = aligned_field(f, n, x + delta, dir);
        // delta + s e = d + t u2 + t^2/2 k2, Newton in (s, t)
        double s = 0.0, tt = t;
        for (int k = 0; k < 4; ++k) {
            const Vec2 c = u2 + tt * k2;
            const Vec2 r = delta + s * e - (d + tt * u2 + 0.5 * tt * tt * k2);
            Mat2 j;
            j.col(0) = e;
            j.col(1) = -c;
            const Vec2 st = j.partialPivLu().solve(-r);
            s += st.x();
            tt += st.y();
        }
        t = tt;
        if (std::abs(s) <= 1e-15 + 1e-13 * dn) break;
        const double h = std::clamp(s, -1e-3, 1e-3);
        delta = rk4_disp(f, n, x, delta, dir, h);
    }
    const Vec2 c = u2 + t * k2;
    d = d + t * u2 + 0.5 * t * t * k2;
    u2 = c.normalized();
}

HolonomyJacobian holonomy_jacobian(const LineFieldEvaluator& f, long n, const HolonomyPair& p,
                                   const JacobianOptions& opt)
{
    HolonomyJacobian out;
    PairedOrbit o;
    o.n = n;
    o.x = p.x;
    o.d = p.hx - p.x;
    o.u1 = p.u1.normalized();
    o.u2 = p.u2.normalized();
    o.k2 = p.k2;
    out.separation.push_back(o.d.norm());
    int small = 0;
    for (int k = 1; k <= opt.depth_cap; ++k) {
        const double lr = o.step(f);
        o.reproject(f);
        out.log_ratios.push_back(lr);
        out.separation.push_back(o.d.norm());
        out.log_jac += lr;
        out.depth = k;
        small = std::abs(lr) < opt.tol ? small + 1 : 0;
        if (small >= 2) {
            out.converged = true;
            break;
        }
    }
    return out;
}

std::vector<double> tail_log_jacobians(const HolonomyJacobian& j)
{
    std::vector<double> tail(j.log_ratios.size() + 1, 0.0);
    for (std::size_t m = j.log_ratios.size(); m-- > 0;) tail[m] = tail[m + 1] + j.log_ratios[m];
    return tail;
}

HolonomyDecay holonomy_decay(const std::vector<HolonomyJacobian>& jacs, int m_max, double floor)
{
    HolonomyDecay out;
    out.envelope.assign(static_cast<std::size_t>(m_max) + 1, 0.0);
    for (const auto& j : jacs) {
        const auto tail = tail_log_jacobians(j);
        out.c1 = std::max(out.c1, std::abs(tail.front()));
        for (std::size_t m = 0; m < tail.size() && m < out.envelope.size(); ++m)
            out.envelope[m] = std::max(out.envelope[m], std::abs(tail[m]));
    }
    int last = 0;
    while (last + 1 <= m_max && out.envelope[last + 1] > floor) ++last;
    out.fit = fit_decay(out.envelope, 0, last);
    return out;
}

DecompositionCheck jacobian_decomposition(const LineFieldEvaluator& f, const StandardPair& w1,
                                          const StandardPair& w2, const HolonomyPair& p, int m,
                                          const CurveParams& cp, const LeafOptions& lo,
                                          const JacobianOptions& jo)
{
    (void)w1;
    const long n = w2.time;
    const HolonomyJacobian direct = holonomy_jacobian(f, n, p, jo);
    DecompositionCheck out;
    out.direct = direct.log_jac;
    double head = 0.0;
    for (int k = 0; k < m && k < static_cast<int>(direct.log_ratios.size()); ++k) head += direct.log_ratios[k];

    CurveParams big = cp;
    big.L = std::numeric_limits<double>::infinity();
    StandardPair w2m = w2;
    for (int k = 0; k < m; ++k) step_pair(f.sequence(), w2m, big);
    Vec2 x = p.x, u = p.u1.normalized();
    for (int k = 1; k <= m; ++k) {
        const AnosovMap& t = f.sequence().map(n + k);
        u = (t.jacobian(x) * u).normalized();
        x = TorusPoint(t.apply_lift(x)).vec();
    }
    const LeafHit h = leaf_to_curve(f, n + m, x, w2m, w2m.arc_table(), lo);
    if (!h.found) throw std::runtime_error("jacobian_decomposition: evolved leaf misses the evolved curve");
    HolonomyPair q;
    q.x = x;
    q.u1 = u;
    q.hx = h.point;
    q.u2 = h.tangent.dot(u) < 0 ? Vec2(-h.tangent) : h.tangent;
    q.k2 = h.kappa;
    const HolonomyJacobian fresh = holonomy_jacobian(f, n + m, q, jo);
    out.composed = head + fresh.log_jac;
    out.rel_error = std::abs(std::expm1(out.composed - out.direct));
    return out;
}

RegularityEstimate holonomy_regularity(const LineFieldEvaluator& f, const StandardPair& w1,
                                       const StandardPair& w2, int k_min, int k_max,
                                       int samples_per_scale, std::uint64_t seed,
                                       const LeafOptions& lo, const JacobianOptions& jo)
{
    if (k_max <= k_min) throw std::invalid_argument("holonomy_regularity: need two scales");
    RegularityEstimate est;
    std::mt19937_64 rng(seed);
    const double len = w1.length();
    const double span = std::ldexp(1.0, -k_min);
    if (span >= len) throw std::invalid_argument("holonomy_regularity: curve shorter than the largest scale");
    std::uniform_real_distribution<double> pos(0.0, len - span);
    std::vector<double> lx, ly;
    double global = 0.0;
    for (int k = k_min; k <= k_max; ++k) {
        const double sep = std::ldexp(1.0, -k);
        double sum = 0.0;
        int used = 0;
        for (int s = 0; s < samples_per_scale; ++s) {
            const double a = pos(rng);
            const auto hol = build_holonomy(f, w1, w2, {a, a + sep}, lo);
            if (hol.pairs.size() != 2) continue;
            const double j1 = holonomy_jacobian(f, hol.n, hol.pairs[0], jo).log_jac;
            const double j2 = holonomy_jacobian(f, hol.n, hol.pairs[1], jo).log_jac;
            sum += std::abs(j1 - j2);
            ++used;
        }
        if (used == 0) continue;
        const double mean = sum / used;
        est.separations.push_back(sep);
        est.mean_diff.push_back(mean);
        global = std::max(global, mean);
        if (mean > 0) {
            lx.push_back(std::log(sep));
            ly.push_back(std::log(mean));
        }
    }
    if (global < 1e-13 || lx.size() < 2) {
        est.flat = true;
        est.eta = 1.0;
        est.r2 = 1.0;
        return est;
    }
    const LinearFit fit = linear_fit(lx, ly);
    est.eta_raw = fit.slope;
    est.eta = std::min(1.0, fit.slope);
    est.c_h = std::exp(fit.intercept);
    est.r2 = fit.r2;
    return est;
}

double log_density_at(const StandardPair& p, const std::vector<double>& arc, double s)
{
    const auto [i, t] = p.locate(s, arc);
    const double w = (s - arc[i]) / (arc[i + 1] - arc[i]);
    (void)t;
    const double c = std::clamp(w, 0.0, 1.0);
    return (1 - c) * p.nodes[i].log_rho + c * p.nodes[i + 1].log_rho;
}

PushforwardResult holonomy_pushforward(const HolonomyMap& hol, const std::vector<double>& log_jac,
                                       const StandardPair& w1)
{
    if (log_jac.size() != hol.pairs.size()) throw std::invalid_argument("holonomy_pushforward: size mismatch");
    PushforwardResult out;
    if (hol.pairs.size() < 2) return out;
    const auto arc1 = w1.arc_table();
    for (std::size_t k = 0; k < hol.pairs.size(); ++k) {
        out.s2.push_back(hol.pairs[k].s2);
        out.rho2.push_back(std::exp(log_density_at(w1, arc1, hol.pairs[k].s1) - log_jac[k]));
    }
    if (out.s2.front() > out.s2.back()) {
        std::reverse(out.s2.begin(), out.s2.end());
        std::reverse(out.rho2.begin(), out.rho2.end());
    }
    out.source_mass = arc_mass(w1, hol.pairs.front().s1, hol.pairs.back().s1);
    out.target_mass = integrate_nonuniform(out.s2, out.rho2);
    std::vector<double> s1, pulled;
    for (std::size_t k = 0; k < hol.pairs.size(); ++k) {
        s1.push_back(hol.pairs[k].s1);
        const double r2 = std::exp(log_density_at(w1, arc1, hol.pairs[k].s1) - log_jac[k]);
        pulled.push_back(r2 * std::exp(log_jac[k]));
    }
    out.pulled_mass = integrate_nonuniform(s1, pulled);
    return out;
}

}  // namespace anosov
