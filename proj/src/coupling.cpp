#include "anosov/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

namespace anosov {

namespace {

Mat2 frame(const Rectangle& r)
{
    Mat2 m;
    m.col(0) = r.eu;
    m.col(1) = r.es;
    return m;
}

Vec2 local_coords(const Rectangle& r, const Vec2& lifted)
{
    return frame(r).partialPivLu().solve(lifted - r.center);
}

struct LeafTrace {
    std::vector<Vec2> ab;  // ordered by b
    bool inside = false;
};

// One direction of the leaf through z until b reaches target (sign of target gives the side).
void trace_to_side(const LineFieldEvaluator& f, long n, const Rectangle& r, Vec2 z, double target,
                   std::vector<Vec2>& out)
{
    Vec2 dir = f.stable(n, z).dir.unit();
    const Vec2 db = frame(r).partialPivLu().solve(dir);
    if ((db.y() > 0) != (target > 0)) dir = -dir;
    const double h0 = 1e-3;
    const int max_steps = static_cast<int>(20 * std::abs(target) / h0) + 20;
    for (int it = 0; it < max_steps; ++it) {
        const Vec2 c0 = local_coords(r, z);
        Vec2 d1 = dir;
        Vec2 z1 = leaf_rk4(f, n, z, d1, h0);
        Vec2 c1 = local_coords(r, z1);
        if (std::abs(c1.y()) >= std::abs(target)) {
            // secant on the step length to land on the u-side
            double lo = 0.0, hi = h0;
            double blo = c0.y(), bhi = c1.y();
            for (int k = 0; k < 6; ++k) {
                const double h = lo + (hi - lo) * (target - blo) / (bhi - blo);
                Vec2 dd = dir;
                z1 = leaf_rk4(f, n, z, dd, h);
                c1 = local_coords(r, z1);
                if (std::abs(c1.y() - target) < 1e-15) break;
                if (std::abs(c1.y()) < std::abs(target)) {
                    lo = h;
                    blo = c1.y();
                } else {
                    hi = h;
                    bhi = c1.y();
                }
            }
            out.push_back(Vec2(c1.x(), target));
            return;
        }
        out.push_back(c1);
        z = z1;
        dir = d1;
    }
    throw std::runtime_error("refine_magnet: leaf does not reach the u-side");
}

LeafTrace leaf_across(const LineFieldEvaluator& f, long n, const Rectangle& r, double a0)
{
    LeafTrace t;
    const Vec2 z = r.point(a0, 0.0);
    std::vector<Vec2> down, up;
    trace_to_side(f, n, r, z, -0.5 * r.s_extent, down);
    trace_to_side(f, n, r, z, 0.5 * r.s_extent, up);
    std::reverse(down.begin(), down.end());
    t.ab = down;
    t.ab.push_back(Vec2(a0, 0.0));
    t.ab.insert(t.ab.end(), up.begin(), up.end());
    t.inside = true;
    for (const auto& c : t.ab)
        if (std::abs(c.x()) > 0.5 * r.u_extent + 1e-13) t.inside = false;
    return t;
}

double leaf_a_at(const std::vector<Vec2>& leaf, double b)
{
    auto it = std::lower_bound(leaf.begin(), leaf.end(), b,
                               [](const Vec2& c, double v) { return c.y() < v; });
    if (it == leaf.begin()) return leaf.front().x();
    if (it == leaf.end()) return leaf.back().x();
    const Vec2& p1 = *it;
    const Vec2& p0 = *(it - 1);
    const double w = (b - p0.y()) / (p1.y() - p0.y());
    return p0.x() + w * (p1.x() - p0.x());
}

// Crossing of the rectangle only (no leaves).
CrossingRecord rect_crossing(const StandardPair& w, const Rectangle& r, const CurveParams& cp)
{
    CrossingRecord rec;
    const double hu = 0.5 * r.u_extent, hs = 0.5 * r.s_extent;
    std::vector<Vec2> c(w.nodes.size());
    bool near = false;
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] = r.coords(w.nodes[k].p);
        near = near || (std::abs(c[k].x()) < hu && std::abs(c[k].y()) < hs);
    }
    if (!near) return rec;
    const auto arc = w.arc_table();

    bool inside = false;
    int side = 0;  // s-side of entry: -1 or +1
    double r_in = 0.0;
    std::size_t k_in = 0;
    double b_in = 0.0;
    for (std::size_t k = 0; k + 1 < c.size(); ++k) {
        const Vec2 c0 = c[k], c1 = c[k + 1];
        if ((c1 - c0).norm() > 0.25) {  // jumped to another lift
            inside = false;
            continue;
        }
        if (inside && std::abs(c1.y()) >= hs) {
            inside = false;
            continue;
        }
        for (int sgn : {-1, 1}) {
            const double a = sgn * hu;
            const double g0 = c0.x() - a, g1 = c1.x() - a;
            if (g0 == g1 || (g0 > 0) == (g1 > 0)) continue;
            const double t = g0 / (g0 - g1);
            const double b = c0.y() + t * (c1.y() - c0.y());
            const double s = arc[k] + t * (arc[k + 1] - arc[k]);
            if (std::abs(b) >= hs) {
                inside = false;
                continue;
            }
            const bool inward = sgn < 0 ? (g1 > 0) : (g1 < 0);
            if (inward) {
                inside = true;
                side = sgn;
                r_in = s;
                k_in = k;
                b_in = b;
            } else if (inside && sgn == -side) {
                rec.r_in = r_in;
                rec.r_out = s;
                rec.excess_lo = r_in;
                rec.excess_hi = arc.back() - s;
                bool p3 = true;
                auto ratio_ok = [&](double bb) {
                    const double q = (bb + hs) / r.s_extent;
                    return q > 0.1 && q < 0.9;
                };
                p3 = ratio_ok(b_in) && ratio_ok(b);
                for (std::size_t j = k_in + 1; j <= k; ++j) p3 = p3 && ratio_ok(c[j].y());
                const double ex = std::min(rec.excess_lo, rec.excess_hi);
                if (ex > cp.ell / 5 && p3) rec.cls = CrossingClass::SuperProper;
                else if (ex > cp.ell / 10) rec.cls = CrossingClass::Proper;
                else rec.cls = CrossingClass::None;
                rec.nu_rect = arc_mass(w, r_in, s);
                if (rec.cls != CrossingClass::None) return rec;
                inside = false;
            } else {
                inside = false;
            }
        }
    }
    rec.cls = CrossingClass::None;
    return rec;
}

struct Component {
    std::size_t pair = 0;
    double lo = 0.0, hi = 0.0;
    double z = 0.0;      // weight * nu(component)
    double share = 0.0;  // z / Z
};

struct Replica {
    std::size_t gi = 0, ej = 0;  // component indices
    long double m = 0.0;
    HolonomyMap hol;
    std::vector<double> log_jac;
    std::vector<double> tau_beta;  // per holonomy sample
    bool ok = false;
};

}  // namespace

Vec2 Rectangle::coords(const Vec2& p) const
{
    const Vec2 d = torus_displacement(TorusPoint(center), TorusPoint(p));
    return frame(*this).partialPivLu().solve(d);
}

bool Rectangle::contains(const Vec2& p) const
{
    const Vec2 c = coords(p);
    return std::abs(c.x()) <= 0.5 * u_extent && std::abs(c.y()) <= 0.5 * s_extent;
}

std::vector<Rectangle> choose_magnets(const MapSequence& seq, const MagnetConfig& mc, double ell,
                                      double ell0)
{
    if (!(mc.s_factor > 0) || mc.s_factor > 0.2)
        throw std::invalid_argument("choose_magnets: s-extent must be in (0, 0.2 ell0]");
    if (!(mc.u_factor > 0)) throw std::invalid_argument("choose_magnets: u-extent must be positive");
    if (!(ell0 > 0) || ell0 >= 1) throw std::invalid_argument("choose_magnets: ell0 must be in (0,1)");
    std::vector<Rectangle> out;
    for (int q = 0; q < seq.num_guides(); ++q) {
        Rectangle r;
        r.q = q;
        if (static_cast<std::size_t>(q) < mc.centers.size()) r.center = mc.centers[q];
        else if (!mc.centers.empty()) r.center = mc.centers.front();
        r.center = TorusPoint(r.center).vec();
        r.eu = seq.guide(q).split.unstable.unit();
        r.es = seq.guide(q).split.stable.unit();
        r.u_extent = mc.u_factor * ell;
        r.s_extent = mc.s_factor * ell0;
        out.push_back(r);
    }
    return out;
}

bool Magnet::contains(const Vec2& p) const
{
    if (empty) return false;
    const Vec2 c = rect.coords(p);
    if (std::abs(c.y()) > 0.5 * rect.s_extent) return false;
    return c.x() >= leaf_a_at(leaf_lo, c.y()) && c.x() <= leaf_a_at(leaf_hi, c.y());
}

Magnet refine_magnet(const LineFieldEvaluator& f, const Rectangle& r, long n, double tol)
{
    Magnet m;
    m.rect = r;
    m.n = n;
    const double hu = 0.5 * r.u_extent;
    const LeafTrace mid = leaf_across(f, n, r, 0.0);
    if (!mid.inside) return m;
    auto boundary = [&](double outer, LeafTrace& keep) {
        LeafTrace t = leaf_across(f, n, r, outer);
        if (t.inside) {
            keep = t;
            return outer;
        }
        double in = 0.0, out = outer;
        keep = mid;
        while (std::abs(out - in) > tol) {
            const double a = 0.5 * (in + out);
            t = leaf_across(f, n, r, a);
            if (t.inside) {
                in = a;
                keep = t;
            } else {
                out = a;
            }
        }
        return in;
    };
    LeafTrace lo, hi;
    m.a_lo = boundary(-hu, lo);
    m.a_hi = boundary(hu, hi);
    m.leaf_lo = lo.ab;
    m.leaf_hi = hi.ab;
    m.empty = !(m.a_hi > m.a_lo);
    return m;
}

const char* to_string(CrossingClass c)
{
    switch (c) {
    case CrossingClass::Proper: return "proper";
    case CrossingClass::SuperProper: return "super-proper";
    default: return "none";
    }
}

CrossingRecord classify_crossing(const LineFieldEvaluator& f, const StandardPair& w,
                                 const Magnet& m, const CurveParams& cp, double ell0)
{
    CrossingRecord rec = rect_crossing(w, m.rect, cp);
    if (rec.cls == CrossingClass::None || m.empty) {
        rec.cls = CrossingClass::None;
        return rec;
    }
    LeafOptions lo;
    lo.max_len = ell0;
    const auto arc = w.arc_table();
    const LeafHit h1 = leaf_to_curve(f, m.n, m.rect.point(m.a_lo, 0.0), w, arc, lo);
    const LeafHit h2 = leaf_to_curve(f, m.n, m.rect.point(m.a_hi, 0.0), w, arc, lo);
    const double slack = 1e-9;
    auto within = [&](const LeafHit& h) {
        return h.found && h.arc >= rec.r_in - slack && h.arc <= rec.r_out + slack;
    };
    if (!within(h1) || !within(h2)) {
        rec.cls = CrossingClass::None;
        return rec;
    }
    rec.m_lo = std::min(h1.arc, h2.arc);
    rec.m_hi = std::max(h1.arc, h2.arc);
    rec.nu_magnet = arc_mass(w, rec.m_lo, rec.m_hi);
    rec.fraction = rec.nu_rect > 0 ? rec.nu_magnet / rec.nu_rect : 0.0;
    return rec;
}

std::vector<CrossingRecord> detect_crossings(const LineFieldEvaluator& f,
                                             const StandardFamily& fam, const Magnet& m,
                                             const CurveParams& cp, double ell0, int threads)
{
    std::vector<CrossingRecord> all(fam.pairs.size());
    parallel_for(fam.pairs.size(), threads, [&](std::size_t i) {
        if (fam.pairs[i].remnant) return;
        all[i] = classify_crossing(f, fam.pairs[i], m, cp, ell0);
        all[i].pair = i;
    });
    std::vector<CrossingRecord> out;
    for (auto& r : all)
        if (r.cls != CrossingClass::None) out.push_back(r);
    return out;
}

double crossing_mass(const StandardFamily& fam, const std::vector<CrossingRecord>& rec)
{
    long double z = 0.0L;
    for (const auto& r : rec)
        if (r.cls != CrossingClass::None) z += static_cast<long double>(fam.weights[r.pair]) * r.nu_magnet;
    return static_cast<double>(z);
}

MagnetFrequency magnet_frequency(const MapSequence& seq, const Rectangle& r, const CurveParams& cp,
                                 int samples, int steps, std::uint64_t seed, long n0)
{
    MagnetFrequency out;
    out.samples = samples;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int k = 0; k < samples; ++k) {
        const Vec2 c(u01(rng), u01(rng));
        const double len = cp.ell + (cp.L - cp.ell) * u01(rng);
        std::vector<StandardPair> cur{make_segment_pair(c, r.eu, len, cp.h_max, n0)};
        bool hit = false;
        for (int s = 1; s <= steps && !hit; ++s) {
            std::vector<StandardPair> next;
            for (auto& p : cur) {
                step_pair(seq, p, cp);
                for (auto& [q, w] : cut_pair(p, cp)) {
                    (void)w;
                    next.push_back(std::move(q));
                }
            }
            cur = std::move(next);
            for (const auto& p : cur)
                if (rect_crossing(p, r, cp).cls == CrossingClass::SuperProper) {
                    hit = true;
                    break;
                }
        }
        if (hit) ++out.hits;
    }
    out.frequency = samples > 0 ? static_cast<double>(out.hits) / samples : 0.0;
    return out;
}

double family_holder_constant(const StandardFamily& fam, double eta)
{
    double best = 0.0;
    for (const auto& p : fam.pairs) best = std::max(best, density_holder_constant(p, eta));
    return best;
}

bool couple_step(const LineFieldEvaluator& f, StandardFamily& g, StandardFamily& e,
                 const Magnet& m, double d0, const CouplingConfig& cfg, double lambda,
                 CouplingEvent& ev, std::string& reason)
{
    if (g.time != e.time || g.time != m.n) throw std::invalid_argument("couple_step: time mismatch");
    const auto rec_g = detect_crossings(f, g, m, cfg.curve, cfg.ell0, cfg.threads);
    const auto rec_e = detect_crossings(f, e, m, cfg.curve, cfg.ell0, cfg.threads);
    ev.time = m.n;
    ev.magnet = m.rect.q;
    ev.d0 = d0;

    std::vector<Component> cg, ce;
    for (const auto& r : rec_g) cg.push_back({r.pair, r.m_lo, r.m_hi, g.weights[r.pair] * r.nu_magnet, 0.0});
    for (const auto& r : rec_e) ce.push_back({r.pair, r.m_lo, r.m_hi, e.weights[r.pair] * r.nu_magnet, 0.0});
    std::vector<char> bad_g(cg.size(), 0), bad_e(ce.size(), 0);

    LeafOptions lo;
    lo.max_len = cfg.ell0;
    std::map<std::pair<std::size_t, std::size_t>, Replica> cache;

    std::vector<Replica> plan;
    double zg = 0.0, ze = 0.0, tau_a = 0.0;
    for (int attempt = 0;; ++attempt) {
        long double sg = 0.0L, se = 0.0L;
        for (std::size_t i = 0; i < cg.size(); ++i)
            if (!bad_g[i]) sg += cg[i].z;
        for (std::size_t j = 0; j < ce.size(); ++j)
            if (!bad_e[j]) se += ce[j].z;
        zg = static_cast<double>(sg);
        ze = static_cast<double>(se);
        ev.z_g = zg;
        ev.z_e = ze;
        if (zg < d0 || ze < d0 || zg <= 0 || ze <= 0) {
            std::ostringstream os;
            os << "crossing mass below d0 (Z_G=" << zg << ", Z_E=" << ze << ", d0=" << d0 << ")";
            reason = os.str();
            return false;
        }
        tau_a = d0 / (2 * zg);
        // greedy plan in decreasing mass order
        std::vector<std::size_t> og, oe;
        for (std::size_t i = 0; i < cg.size(); ++i)
            if (!bad_g[i]) og.push_back(i);
        for (std::size_t j = 0; j < ce.size(); ++j)
            if (!bad_e[j]) oe.push_back(j);
        std::stable_sort(og.begin(), og.end(), [&](auto a, auto b) { return cg[a].z > cg[b].z; });
        std::stable_sort(oe.begin(), oe.end(), [&](auto a, auto b) { return ce[a].z > ce[b].z; });
        for (auto i : og) cg[i].share = static_cast<double>(cg[i].z / sg);
        for (auto j : oe) ce[j].share = static_cast<double>(ce[j].z / se);
        plan.clear();
        std::size_t a = 0, b = 0;
        long double ra = cg[og[0]].z / sg, rb = ce[oe[0]].z / se;
        while (a < og.size() && b < oe.size()) {
            const long double mm = std::min(ra, rb);
            Replica rp;
            rp.gi = og[a];
            rp.ej = oe[b];
            rp.m = mm;
            if (mm > 0) plan.push_back(rp);
            ra -= mm;
            rb -= mm;
            if (ra <= rb) {
                ++a;
                if (a < og.size()) ra += cg[og[a]].z / sg;
            } else {
                ++b;
                if (b < oe.size()) rb += ce[oe[b]].z / se;
            }
            if (a == og.size() || b == oe.size()) break;
        }
        // holonomy and Jacobians for replica pairs not seen yet
        std::vector<std::size_t> todo;
        for (std::size_t k = 0; k < plan.size(); ++k)
            if (!cache.count({plan[k].gi, plan[k].ej})) todo.push_back(k);
        std::vector<Replica> fresh(todo.size());
        parallel_for(todo.size(), cfg.threads, [&](std::size_t t) {
            Replica rp = plan[todo[t]];
            const Component& ci = cg[rp.gi];
            const Component& cj = ce[rp.ej];
            const StandardPair& wi = g.pairs[ci.pair];
            const StandardPair& wj = e.pairs[cj.pair];
            std::vector<double> s1;
            const int ns = std::max(4, cfg.holonomy_samples);
            for (int k = 0; k < ns; ++k) s1.push_back(ci.lo + (ci.hi - ci.lo) * k / (ns - 1));
            rp.hol = build_holonomy(f, wi, wj, s1, lo);
            rp.ok = rp.hol.pairs.size() == s1.size() && rp.hol.monotone;
            if (rp.ok)
                for (const auto& p : rp.hol.pairs) {
                    const auto j = holonomy_jacobian(f, m.n, p);
                    if (!j.converged) rp.ok = false;
                    rp.log_jac.push_back(j.log_jac);
                }
            fresh[t] = std::move(rp);
        });
        for (auto& rp : fresh) cache[{rp.gi, rp.ej}] = std::move(rp);
        bool all_ok = true;
        for (const auto& rp : plan) {
            const Replica& c = cache.at({rp.gi, rp.ej});
            if (!c.ok) {
                bad_g[rp.gi] = 1;
                bad_e[rp.ej] = 1;
                all_ok = false;
            }
        }
        if (all_ok) break;
        ++ev.skipped;
    }

    // tau_beta on every replica
    double tb_sup = 0.0;
    ev.replicas.clear();
    for (auto& rp : plan) {
        const Replica& c = cache.at({rp.gi, rp.ej});
        rp.hol = c.hol;
        rp.log_jac = c.log_jac;
        const Component& ci = cg[rp.gi];
        const Component& cj = ce[rp.ej];
        const StandardPair& wi = g.pairs[ci.pair];
        const StandardPair& wj = e.pairs[cj.pair];
        const auto ai = wi.arc_table();
        const auto aj = wj.arc_table();
        ReplicaRecord rr;
        rr.g = ci.pair;
        rr.e = cj.pair;
        rr.share = static_cast<double>(rp.m);
        rp.tau_beta.clear();
        for (std::size_t k = 0; k < rp.hol.pairs.size(); ++k) {
            const auto& hp = rp.hol.pairs[k];
            const double lr = std::log(g.weights[ci.pair]) + log_density_at(wi, ai, hp.s1) -
                              std::log(e.weights[cj.pair]) - log_density_at(wj, aj, hp.s2) -
                              rp.log_jac[k];
            const double tb = tau_a * (cj.share / ci.share) * std::exp(lr);
            rp.tau_beta.push_back(tb);
            rr.tau_beta_sup = std::max(rr.tau_beta_sup, tb);
            rr.leaf_max = std::max(rr.leaf_max, hp.leaf_length);
            rr.log_jh_max = std::max(rr.log_jh_max, std::abs(rp.log_jac[k]));
        }
        tb_sup = std::max(tb_sup, rr.tau_beta_sup);
        ev.replicas.push_back(rr);
    }
    ev.tau_alpha = tau_a;
    ev.tau_beta_sup = tb_sup;
    if (tb_sup > cfg.tau_beta_max) {
        std::ostringstream os;
        os << "sup tau_beta " << tb_sup << " exceeds " << cfg.tau_beta_max;
        reason = os.str();
        return false;
    }

    // measure preservation on random test sets: sub-ranges of the holonomy samples
    {
        std::mt19937_64 rng(cfg.seed ^ (0x2545f4914f6cdd1dull * static_cast<std::uint64_t>(m.n + 1)));
        double worst_abs = 0.0, worst_rel = 0.0;
        for (int t = 0; t < cfg.test_sets && !plan.empty(); ++t) {
            const auto& rp = plan[std::uniform_int_distribution<std::size_t>(0, plan.size() - 1)(rng)];
            const std::size_t ns = rp.hol.pairs.size();
            std::size_t k1 = std::uniform_int_distribution<std::size_t>(0, ns - 4)(rng);
            std::size_t k2 = std::uniform_int_distribution<std::size_t>(k1 + 3, ns - 1)(rng);
            const Component& ci = cg[rp.gi];
            const Component& cj = ce[rp.ej];
            const StandardPair& wi = g.pairs[ci.pair];
            const StandardPair& wj = e.pairs[cj.pair];
            const auto ai = wi.arc_table();
            const auto aj = wj.arc_table();
            std::vector<double> s1, f1, s2, f2;
            const double mi = static_cast<double>(rp.m) / ci.share;
            const double mj = static_cast<double>(rp.m) / cj.share;
            for (std::size_t k = k1; k <= k2; ++k) {
                const auto& hp = rp.hol.pairs[k];
                s1.push_back(hp.s1);
                f1.push_back(tau_a * mi * g.weights[ci.pair] * std::exp(log_density_at(wi, ai, hp.s1)));
                s2.push_back(hp.s2);
                f2.push_back(rp.tau_beta[k] * mj * e.weights[cj.pair] *
                             std::exp(log_density_at(wj, aj, hp.s2)));
            }
            if (s2.front() > s2.back()) {
                std::reverse(s2.begin(), s2.end());
                std::reverse(f2.begin(), f2.end());
            }
            const double src = integrate_nonuniform(s1, f1);
            const double tgt = integrate_nonuniform(s2, f2);
            worst_abs = std::max(worst_abs, std::abs(src - tgt));
            worst_rel = std::max(worst_rel, std::abs(src - tgt) / src);
        }
        ev.quadrature_abs = worst_abs;
        ev.quadrature_rel = worst_rel;
    }

    // forward separation of sampled matched points
    {
        JacobianOptions jo;
        jo.tol = -1.0;
        jo.depth_cap = cfg.separation_depth;
        double worst = 0.0;
        std::vector<double> env(static_cast<std::size_t>(cfg.separation_depth) + 1, 0.0);
        const std::size_t ns = std::min<std::size_t>(plan.size(), static_cast<std::size_t>(cfg.separation_samples));
        for (std::size_t s = 0; s < ns; ++s) {
            const auto& rp = plan[s * plan.size() / ns];
            const auto& hp = rp.hol.pairs[rp.hol.pairs.size() / 2];
            const auto j = holonomy_jacobian(f, m.n, hp, jo);
            for (std::size_t k = 0; k < j.separation.size(); ++k) {
                worst = std::max(worst, j.separation[k] / (cfg.ell0 * std::pow(lambda, static_cast<double>(k))));
                env[k] = std::max(env[k], j.separation[k]);
            }
        }
        ev.separation_ratio = worst;
        int last = 0;
        while (last + 1 < static_cast<int>(env.size()) && env[last + 1] > 1e-13) ++last;
        if (last >= 4) ev.separation_rate = fit_decay(env, 0, last).theta;
    }

    // surgery on G: (1 - tau_alpha) on each component
    std::vector<std::vector<StandardPair>> pieces_g(g.pairs.size()), pieces_e(e.pairs.size());
    long double removed_g = 0.0L, removed_e = 0.0L;
    std::vector<char> used_g(cg.size(), 0), used_e(ce.size(), 0);
    for (const auto& rp : plan) {
        used_g[rp.gi] = 1;
        used_e[rp.ej] = 1;
    }
    const double lt = std::log1p(-tau_a);
    for (std::size_t i = 0; i < cg.size(); ++i) {
        if (!used_g[i]) continue;
        const Component& ci = cg[i];
        auto parts = split_at_arcs(g.pairs[ci.pair], {ci.lo, ci.hi});
        if (parts.size() != 3) throw std::runtime_error("couple_step: component split failed");
        StandardPair& mid = parts[1];
        long double before = 0.0L;
        for (double& x : mid.mass) {
            before += x;
            x *= 1 - tau_a;
        }
        for (auto& nd : mid.nodes) nd.log_rho += lt;
        removed_g += g.weights[ci.pair] * tau_a * before;
        pieces_g[ci.pair] = std::move(parts);
    }

    // surgery on E: sum over replicas of (m_ij / q_j) tau_beta_ij, rescaled to the exact share
    double rescale_worst = 1.0;
    double tb_final = 0.0;
    for (std::size_t j = 0; j < ce.size(); ++j) {
        if (!used_e[j]) continue;
        const Component& cj = ce[j];
        auto parts = split_at_arcs(e.pairs[cj.pair], {cj.lo, cj.hi});
        if (parts.size() != 3) throw std::runtime_error("couple_step: component split failed");
        StandardPair& mid = parts[1];
        // profile as a function of absolute arc on the original curve
        std::vector<std::pair<const Replica*, double>> contrib;
        for (const auto& rp : plan)
            if (rp.ej == j) contrib.emplace_back(&rp, static_cast<double>(rp.m) / cj.share);
        std::vector<std::vector<double>> xs, ys;
        for (const auto& [rp, wgt] : contrib) {
            std::vector<double> x, y;
            for (std::size_t k = 0; k < rp->hol.pairs.size(); ++k) {
                x.push_back(rp->hol.pairs[k].s2);
                y.push_back(rp->tau_beta[k]);
            }
            if (x.front() > x.back()) {
                std::reverse(x.begin(), x.end());
                std::reverse(y.begin(), y.end());
            }
            xs.push_back(std::move(x));
            ys.push_back(std::move(y));
        }
        auto profile = [&](double s) {
            double t = 0.0;
            for (std::size_t c = 0; c < contrib.size(); ++c) {
                const double sc = std::clamp(s, xs[c].front(), xs[c].back());
                t += contrib[c].second * interpolate_cubic(xs[c], ys[c], sc);
            }
            return t;
        };
        const auto arc = mid.arc_table();
        std::vector<double> tn(mid.nodes.size());
        for (std::size_t k = 0; k < tn.size(); ++k) tn[k] = profile(cj.lo + arc[k]);
        std::vector<double> tbar(mid.mass.size());
        long double raw = 0.0L, before = 0.0L;
        for (std::size_t k = 0; k < tbar.size(); ++k) {
            const double tm = profile(cj.lo + 0.5 * (arc[k] + arc[k + 1]));
            tbar[k] = (tn[k] + 4 * tm + tn[k + 1]) / 6;
            raw += static_cast<long double>(mid.mass[k]) * tbar[k];
            before += mid.mass[k];
        }
        const long double target = static_cast<long double>(cj.share) * d0 / 2 / e.weights[cj.pair];
        const double c = static_cast<double>(target / raw);
        if (std::abs(c - 1) > std::abs(rescale_worst - 1)) rescale_worst = c;
        for (std::size_t k = 0; k < tbar.size(); ++k) mid.mass[k] *= 1 - c * tbar[k];
        for (std::size_t k = 0; k < tn.size(); ++k) {
            tb_final = std::max(tb_final, c * tn[k]);
            mid.nodes[k].log_rho += std::log1p(-c * tn[k]);
        }
        removed_e += e.weights[cj.pair] * target;
        pieces_e[cj.pair] = std::move(parts);
    }
    if (tb_final > cfg.tau_beta_max) {
        std::ostringstream os;
        os << "rescaled tau_beta " << tb_final << " exceeds " << cfg.tau_beta_max;
        reason = os.str();
        return false;
    }
    ev.tau_beta_sup = std::max(tb_sup, tb_final);
    ev.target_rescale = rescale_worst;

    auto rebuild = [&](StandardFamily& fam, std::vector<std::vector<StandardPair>>& pieces,
                       long double removed, double& drift) {
        StandardFamily out;
        out.time = fam.time;
        long double total = 0.0L;
        for (std::size_t i = 0; i < fam.pairs.size(); ++i) {
            if (pieces[i].empty()) {
                out.pairs.push_back(fam.pairs[i]);
                out.weights.push_back(fam.weights[i]);
                total += fam.weights[i];
                continue;
            }
            for (auto& p : pieces[i]) {
                long double c = 0.0L;
                for (double x : p.mass) c += x;
                if (c <= 0) continue;
                for (double& x : p.mass) x = static_cast<double>(x / c);
                for (auto& nd : p.nodes) nd.log_rho -= std::log(static_cast<double>(c));
                p.remnant = p.length() < cfg.curve.ell;
                out.weights.push_back(static_cast<double>(fam.weights[i] * c));
                total += fam.weights[i] * c;
                out.pairs.push_back(std::move(p));
            }
        }
        drift = static_cast<double>(std::abs(total + removed - 1.0L));
        const double norm = static_cast<double>(total);
        for (double& w : out.weights) w /= norm;
        fam = std::move(out);
        return norm;
    };
    const double rem_g = rebuild(g, pieces_g, removed_g, ev.drift_g);
    rebuild(e, pieces_e, removed_e, ev.drift_e);
    ev.coupled_abs = 1.0 - rem_g;  // scaled by the caller
    ev.remaining_abs = rem_g;
    ev.components_g = static_cast<int>(std::count(used_g.begin(), used_g.end(), 1));
    ev.components_e = static_cast<int>(std::count(used_e.begin(), used_e.end(), 1));
    return true;
}

std::vector<double> CouplingLedger::tail() const
{
    std::vector<double> t(static_cast<std::size_t>(std::max<long>(end_time, 0)) + 1, 1.0);
    double rem = 1.0;
    std::size_t k = 0;
    for (long n = 0; n <= end_time; ++n) {
        while (k < events.size() && events[k].time <= n) rem = events[k++].remaining_abs;
        t[static_cast<std::size_t>(n)] = rem;
    }
    return t;
}

TailFit CouplingLedger::tail_fit() const
{
    TailFit out;
    const auto t = tail();
    if (t.size() < 2 || events.empty()) return out;
    std::vector<double> x, y;
    for (std::size_t n = 0; n < t.size(); ++n) {
        x.push_back(static_cast<double>(n));
        y.push_back(std::log(t[n]));
    }
    const LinearFit fit = linear_fit(x, y);
    out.theta = std::exp(fit.slope);
    out.r2 = fit.r2;
    out.points = fit.count;
    return out;
}

double CouplingLedger::geometric_error() const
{
    double worst = 0.0;
    for (std::size_t k = 0; k < events.size(); ++k)
        worst = std::max(worst, std::abs(events[k].remaining_abs -
                                         std::pow(1 - d0 / 2, static_cast<double>(k + 1))));
    return worst;
}

CouplingLedger run_coupling(const LineFieldEvaluator& f, StandardFamily g, StandardFamily e,
                            const CouplingConfig& cfg, const std::vector<GuideConstants>& constants)
{
    if (g.time != e.time) throw std::invalid_argument("run_coupling: families at different times");
    const MapSequence& seq = f.sequence();
    CouplingLedger led;
    for (const auto& c : constants) led.lambda = std::max(led.lambda, 1.0 / c.lambda);
    const auto rects = choose_magnets(seq, cfg.magnet, cfg.curve.ell, cfg.ell0);
    g.normalize();
    e.normalize();
    const long t0 = g.time;

    auto magnet_at = [&](long n) { return refine_magnet(f, rects[seq.unstable_family(n)], n); };

    // probe window
    {
        StandardFamily pg = g, pe = e;
        for (int k = 0; k < cfg.probe_len; ++k) {
            const long n = t0 + cfg.probe_from + k;
            evolve_family(seq, pg, n, cfg.curve, cfg.cap, cfg.threads);
            evolve_family(seq, pe, n, cfg.curve, cfg.cap, cfg.threads);
            const Magnet m = magnet_at(n);
            led.probe_z_g.push_back(crossing_mass(pg, detect_crossings(f, pg, m, cfg.curve, cfg.ell0, cfg.threads)));
            led.probe_z_e.push_back(crossing_mass(pe, detect_crossings(f, pe, m, cfg.curve, cfg.ell0, cfg.threads)));
        }
        double mg = 0.0, me = 0.0;
        for (double z : led.probe_z_g) mg += z;
        for (double z : led.probe_z_e) me += z;
        mg /= std::max(1, cfg.probe_len);
        me /= std::max(1, cfg.probe_len);
        led.d0 = cfg.d0 > 0 ? cfg.d0 : cfg.d0_factor * std::min(mg, me);
        for (int k = 0; k < cfg.probe_len; ++k)
            if (led.probe_z_g[k] >= led.d0 && led.probe_z_e[k] >= led.d0 && led.d0 > 0) {
                led.s0 = cfg.probe_from + k;
                break;
            }
        f.clear_cache();
    }
    if (led.s0 < 0 || !(led.d0 > 0)) {
        led.starved = true;
        led.end_time = t0;
        return led;
    }
    if (led.d0 > 1.0) throw std::runtime_error("run_coupling: d0 above one");

    long t = t0 + led.s0;
    double rem = 1.0;
    int waited = 0;
    while (static_cast<int>(led.events.size()) < cfg.max_events && t <= cfg.n_max) {
        evolve_family(seq, g, t, cfg.curve, cfg.cap, cfg.threads);
        evolve_family(seq, e, t, cfg.curve, cfg.cap, cfg.threads);
        const Magnet m = magnet_at(t);
        CouplingEvent ev;
        std::string why;
        StandardFamily g2 = g, e2 = e;
        if (m.empty || !couple_step(f, g2, e2, m, led.d0, cfg, led.lambda, ev, why)) {
            std::ostringstream os;
            os << "n=" << t << ": " << (m.empty ? std::string("empty magnet") : why);
            led.aborted.push_back(os.str());
            f.clear_cache();
            if (++waited > cfg.wait_cap) {
                led.starved = true;
                break;
            }
            ++t;
            continue;
        }
        waited = 0;
        g = std::move(g2);
        e = std::move(e2);
        ev.k = static_cast<int>(led.events.size());
        ev.coupled_abs *= rem;
        rem *= ev.remaining_abs;
        ev.remaining_abs = rem;
        // recovery
        int r = 0;
        double hc = 0.0;
        ev.recovered = false;
        while (r < cfg.r0_cap) {
            ++r;
            evolve_family(seq, g, t + r, cfg.curve, cfg.cap, cfg.threads);
            evolve_family(seq, e, t + r, cfg.curve, cfg.cap, cfg.threads);
            if (r < cfg.r0) continue;
            hc = std::max(family_holder_constant(g, cfg.curve.eta_r), family_holder_constant(e, cfg.curve.eta_r));
            if (hc <= cfg.curve.c_r) {
                ev.recovered = true;
                break;
            }
        }
        ev.recovery = r;
        ev.holder_after = hc;
        led.events.push_back(ev);
        f.clear_cache();
        t += r + led.s0;
    }
    led.end_time = led.events.empty() ? t0 : led.events.back().time;
    return led;
}

}  // namespace anosov
