#include "anosov/curves.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace anosov {

namespace {

// 5-point Gauss-Legendre on [0,1]
constexpr double kGx[5] = {0.04691007703066800, 0.23076534494715845, 0.5, 0.76923465505284155,
                           0.95308992296933200};
constexpr double kGw[5] = {0.11846344252809454, 0.23931433524968324, 0.28444444444444444,
                           0.23931433524968324, 0.11846344252809454};

// Fraction of the exp-linear mass exp(a + d t) on [0, t] relative to [0, 1].
double exp_linear_fraction(double d, double t)
{
    if (std::abs(d) < 1e-12) return t;
    return std::expm1(d * t) / std::expm1(d);
}

Vec2 normal_part(const Vec2& k, const Vec2& u) { return k - u * u.dot(k); }

}  // namespace

CurveNode StandardPair::node_at(std::size_t i, double t) const
{
    const StandardPair& pr = *this;
    const CurveNode& a = pr.nodes[i];
    const CurveNode& b = pr.nodes[i + 1];
    CurveNode n;
    n.p = pr.position(i, t);
    n.u = pr.derivative(i, t).normalized();
    n.kappa = normal_part((1 - t) * a.kappa + t * b.kappa, n.u);
    n.log_rho = (1 - t) * a.log_rho + t * b.log_rho;
    n.log_jac = (1 - t) * a.log_jac + t * b.log_jac;
    n.r = (1 - t) * a.r + t * b.r;
    return n;
}

double StandardPair::partial_length(std::size_t i, double t) const
{
    double s = 0.0;
    for (int k = 0; k < 5; ++k) s += kGw[k] * derivative(i, t * kGx[k]).norm();
    return s * t;
}

namespace {

CurveNode interpolate_node(const StandardPair& pr, std::size_t i, double t) { return pr.node_at(i, t); }

double partial_length(const StandardPair& pr, std::size_t i, double t) { return pr.partial_length(i, t); }

// Safeguarded Newton on the arc length of segment i.
double param_at_arc(const StandardPair& pr, std::size_t i, double target)
{
    const double total = partial_length(pr, i, 1.0);
    if (target <= 0) return 0.0;
    if (target >= total) return 1.0;
    double lo = 0.0, hi = 1.0, t = target / total;
    for (int it = 0; it < 60; ++it) {
        const double g = partial_length(pr, i, t) - target;
        if (std::abs(g) <= 1e-15 * total) break;
        if (g < 0) lo = t;
        else hi = t;
        double next = t - g / pr.derivative(i, t).norm();
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == t) break;
        t = next;
    }
    return t;
}

void relift(StandardPair& pr)
{
    if (pr.nodes.empty()) return;
    const Vec2 shift(std::floor(pr.nodes.front().p.x()), std::floor(pr.nodes.front().p.y()));
    if (shift.isZero()) return;
    for (auto& n : pr.nodes) n.p -= shift;
}

}  // namespace

void check_curve_params(const CurveParams& p, double c_d)
{
    if (!(p.h_min > 0 && p.h_min < p.h_max)) throw std::invalid_argument("curve params: need 0 < h_min < h_max");
    if (!(p.ell > 0 && p.ell < p.L)) throw std::invalid_argument("curve params: need 0 < ell < L");
    if (2 * p.ell > p.L) throw std::invalid_argument("curve params: need 2 ell <= L so cut pieces stay standard");
    if (!(p.eta_r > 0 && p.eta_r <= 1)) throw std::invalid_argument("curve params: eta_r outside (0,1]");
    const double need = 2 * c_d * std::pow(p.L, 1 - p.eta_r);
    if (need > p.c_r) {
        std::ostringstream os;
        os << "curve params: C_r=" << p.c_r << " below 2 C_d L^(1-eta_r)=" << need;
        throw std::invalid_argument(os.str());
    }
}

double StandardPair::total_mass() const
{
    double s = 0.0;
    for (double m : mass) s += m;
    return s;
}

Vec2 StandardPair::position(std::size_t i, double t) const
{
    const CurveNode& a = nodes[i];
    const CurveNode& b = nodes[i + 1];
    const double c = (b.p - a.p).norm();
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * a.p + (t3 - 2 * t2 + t) * c * a.u + (-2 * t3 + 3 * t2) * b.p +
           (t3 - t2) * c * b.u;
}

Vec2 StandardPair::derivative(std::size_t i, double t) const
{
    const CurveNode& a = nodes[i];
    const CurveNode& b = nodes[i + 1];
    const double c = (b.p - a.p).norm();
    const double t2 = t * t;
    return (6 * t2 - 6 * t) * a.p + (3 * t2 - 4 * t + 1) * c * a.u + (-6 * t2 + 6 * t) * b.p +
           (3 * t2 - 2 * t) * c * b.u;
}

double StandardPair::segment_length(std::size_t i) const { return partial_length(i, 1.0); }

std::vector<double> StandardPair::arc_table() const
{
    std::vector<double> a(nodes.size(), 0.0);
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) a[i + 1] = a[i] + segment_length(i);
    return a;
}

double StandardPair::length() const
{
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < nodes.size(); ++i) s += segment_length(i);
    return s;
}

double StandardPair::max_curvature() const
{
    double k = 0.0;
    for (const auto& n : nodes) k = std::max(k, n.kappa.norm());
    return k;
}

std::pair<std::size_t, double> StandardPair::locate(double s, const std::vector<double>& arc) const
{
    if (nodes.size() < 2) throw std::logic_error("StandardPair::locate on a degenerate curve");
    if (s <= 0) return {0, 0.0};
    if (s >= arc.back()) return {nodes.size() - 2, 1.0};
    const auto it = std::upper_bound(arc.begin(), arc.end(), s);
    const std::size_t i = static_cast<std::size_t>(it - arc.begin()) - 1;
    return {i, param_at_arc(*this, i, s - arc[i])};
}

double StandardPair::remaining_mass() const
{
    double s = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i) {
        // r is linear in t; weight by the exp-linear density on the segment
        const double d = nodes[i + 1].log_rho - nodes[i].log_rho;
        double mean_t = 0.5;
        if (std::abs(d) > 1e-8) mean_t = 1.0 / (1.0 - std::exp(-d)) - 1.0 / d;
        s += mass[i] * (nodes[i].r + (nodes[i + 1].r - nodes[i].r) * mean_t);
    }
    return s;
}

double StandardFamily::total_weight() const
{
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
}

void StandardFamily::normalize()
{
    const double s = total_weight();
    if (!(s > 0)) throw std::runtime_error("StandardFamily: zero total weight");
    for (double& w : weights) w /= s;
}

StandardPair make_parametric_pair(const std::function<Vec2(double)>& g,
                                  const std::function<Vec2(double)>& dg,
                                  const std::function<Vec2(double)>& d2g, double t0, double t1,
                                  int count, long time)
{
    if (count < 2) throw std::invalid_argument("make_parametric_pair: need two nodes");
    StandardPair pr;
    pr.time = time;
    for (int i = 0; i < count; ++i) {
        const double t = t0 + (t1 - t0) * i / (count - 1);
        CurveNode n;
        n.p = g(t);
        const Vec2 d1 = dg(t), d2 = d2g(t);
        const double sp = d1.norm();
        n.u = d1 / sp;
        n.kappa = normal_part(d2, n.u) / (sp * sp);
        pr.nodes.push_back(n);
    }
    relift(pr);
    pr.mass.assign(count - 1, 0.0);
    set_density(pr, [](double) { return 1.0; });
    return pr;
}

StandardPair make_segment_pair(const Vec2& center, const Vec2& direction, double length, double h,
                               long time)
{
    const Vec2 e = direction.normalized();
    const int count = std::max(2, static_cast<int>(std::ceil(length / h)) + 1);
    const Vec2 start = center - 0.5 * length * e;
    return make_parametric_pair([&](double t) -> Vec2 { return start + t * e; },
                                [&](double) -> Vec2 { return e; },
                                [](double) -> Vec2 { return Vec2::Zero(); }, 0.0, length, count,
                                time);
}

void set_density(StandardPair& pr, const std::function<double(double)>& rho)
{
    const auto arc = pr.arc_table();
    pr.mass.assign(pr.nodes.size() - 1, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < pr.nodes.size(); ++i) {
        const double len = arc[i + 1] - arc[i];
        double m = 0.0;
        for (int k = 0; k < 5; ++k) m += kGw[k] * rho(arc[i] + kGx[k] * len);
        pr.mass[i] = m * len;
        total += pr.mass[i];
    }
    if (!(total > 0)) throw std::invalid_argument("set_density: non-positive mass");
    for (double& m : pr.mass) m /= total;
    for (std::size_t i = 0; i < pr.nodes.size(); ++i) {
        const double v = rho(arc[i]);
        if (!(v > 0)) throw std::invalid_argument("set_density: density must be positive");
        pr.nodes[i].log_rho = std::log(v / total);
    }
}

void step_pair(const MapSequence& seq, StandardPair& pr, const CurveParams& prm)
{
    const long n1 = pr.time + 1;
    const AnosovMap& t = seq.map(n1);
    const std::size_t nn = pr.nodes.size();
    std::vector<Vec2> img(nn);
    for (std::size_t i = 0; i < nn; ++i) img[i] = t.apply_lift(pr.nodes[i].p);

    // refine on the pre-image so the images of new nodes are spaced below h_max
    std::vector<CurveNode> nodes;
    std::vector<Vec2> images;
    std::vector<double> mass;
    nodes.reserve(2 * nn);
    images.reserve(2 * nn);
    mass.reserve(2 * nn);
    for (std::size_t i = 0; i + 1 < nn; ++i) {
        nodes.push_back(pr.nodes[i]);
        images.push_back(img[i]);
        const double len = (img[i + 1] - img[i]).norm();
        const int k = len > prm.h_max ? static_cast<int>(std::ceil(len / prm.h_max)) : 1;
        const double d = pr.nodes[i + 1].log_rho - pr.nodes[i].log_rho;
        double prev = 0.0;
        for (int j = 1; j < k; ++j) {
            const double tj = static_cast<double>(j) / k;
            CurveNode n = interpolate_node(pr, i, tj);
            images.push_back(t.apply_lift(n.p));
            nodes.push_back(n);
            const double f = exp_linear_fraction(d, tj);
            mass.push_back(pr.mass[i] * (f - prev));
            prev = f;
        }
        mass.push_back(pr.mass[i] * (1.0 - prev));
    }
    nodes.push_back(pr.nodes.back());
    images.push_back(img.back());

    const Cone cone = seq.unstable_cone(n1);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        CurveNode& n = nodes[i];
        const Mat2 j = t.jacobian(n.p);
        const Vec2 g1 = j * n.u;
        const double jac = g1.norm();
        const Vec2 g2 = t.second_derivative(n.p, n.u, n.u) + j * n.kappa;
        const Vec2 u = g1 / jac;
        n.kappa = normal_part(g2, u) / (jac * jac);
        n.u = u;
        n.p = images[i];
        n.log_rho -= std::log(jac);
        n.log_jac += std::log(jac);
        if (prm.check_cone && !cone.test(u).inside) {
            std::ostringstream os;
            os << "curve left the unstable cone at time " << n1 << " near (" << n.p.x() << ","
               << n.p.y() << ")";
            throw std::runtime_error(os.str());
        }
    }

    // merge interior nodes closer than h_min
    std::vector<CurveNode> kept{nodes.front()};
    std::vector<double> kept_mass;
    double pending = 0.0;
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        pending += mass[i - 1];
        const bool last = i + 1 == nodes.size();
        if (!last && (nodes[i].p - kept.back().p).norm() < prm.h_min) continue;
        kept.push_back(nodes[i]);
        kept_mass.push_back(pending);
        pending = 0.0;
    }
    pr.nodes = std::move(kept);
    pr.mass = std::move(kept_mass);
    pr.time = n1;
    relift(pr);
}

namespace {

std::vector<StandardPair> split_with_arc(const StandardPair& pr, const std::vector<double>& arc,
                                         const std::vector<double>& marks)
{
    std::vector<StandardPair> pieces;
    StandardPair cur;
    cur.time = pr.time;
    std::size_t m = 0;
    while (m < marks.size() && marks[m] <= 0.0) ++m;
    cur.nodes.push_back(pr.nodes.front());
    for (std::size_t i = 0; i + 1 < pr.nodes.size(); ++i) {
        double t_done = 0.0, f_done = 0.0;
        const double d = pr.nodes[i + 1].log_rho - pr.nodes[i].log_rho;
        while (m < marks.size() && marks[m] < arc[i + 1]) {
            const double t = param_at_arc(pr, i, marks[m] - arc[i]);
            ++m;
            if (t <= t_done) continue;
            const double f = exp_linear_fraction(d, t);
            const CurveNode n = interpolate_node(pr, i, t);
            cur.nodes.push_back(n);
            cur.mass.push_back(pr.mass[i] * (f - f_done));
            pieces.push_back(std::move(cur));
            cur = StandardPair{};
            cur.time = pr.time;
            cur.nodes.push_back(n);
            t_done = t;
            f_done = f;
        }
        cur.nodes.push_back(pr.nodes[i + 1]);
        cur.mass.push_back(pr.mass[i] * (1.0 - f_done));
    }
    pieces.push_back(std::move(cur));
    for (auto& p : pieces) relift(p);
    return pieces;
}

}  // namespace

std::vector<StandardPair> split_at_arcs(const StandardPair& pr, const std::vector<double>& marks)
{
    return split_with_arc(pr, pr.arc_table(), marks);
}

std::vector<std::pair<StandardPair, double>> cut_pair(const StandardPair& pr, const CurveParams& prm)
{
    const auto arc = pr.arc_table();
    const double len = arc.back();
    const int k = std::max(1, static_cast<int>(std::ceil(len / prm.L - 1e-12)));
    const double total = pr.total_mass();
    std::vector<std::pair<StandardPair, double>> out;
    if (k == 1) {
        StandardPair p = pr;
        p.remnant = len < prm.ell;
        out.emplace_back(std::move(p), 1.0);
        return out;
    }
    std::vector<double> marks;
    for (int j = 1; j < k; ++j) marks.push_back(len * j / k);
    for (auto& p : split_with_arc(pr, arc, marks)) {
        const double c = p.total_mass();
        for (double& x : p.mass) x /= c;
        for (auto& n : p.nodes) n.log_rho -= std::log(c / total);
        p.remnant = len / k < prm.ell;
        out.emplace_back(std::move(p), c / total);
    }
    return out;
}

std::vector<std::pair<StandardPair, double>> evolve_pair(const MapSequence& seq,
                                                         const StandardPair& pair, long n_to,
                                                         const CurveParams& prm)
{
    if (n_to < pair.time) throw std::invalid_argument("evolve_pair: n_to before the pair's time");
    std::vector<std::pair<StandardPair, double>> cur{{pair, 1.0}};
    for (long n = pair.time; n < n_to; ++n) {
        std::vector<std::pair<StandardPair, double>> next;
        for (auto& [p, w] : cur) {
            step_pair(seq, p, prm);
            for (auto& [q, c] : cut_pair(p, prm)) next.emplace_back(std::move(q), w * c);
        }
        cur = std::move(next);
    }
    return cur;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn)
{
    if (threads <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < nt; ++k)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void evolve_family(const MapSequence& seq, StandardFamily& fam, long n_to, const CurveParams& prm,
                   const FamilyCap& cap, int threads)
{
    if (fam.pairs.size() != fam.weights.size())
        throw std::invalid_argument("evolve_family: weights and pairs differ in size");
    for (long n = fam.time; n < n_to; ++n) {
        std::vector<std::vector<std::pair<StandardPair, double>>> kids(fam.pairs.size());
        parallel_for(fam.pairs.size(), threads, [&](std::size_t i) {
            StandardPair p = fam.pairs[i];
            step_pair(seq, p, prm);
            kids[i] = cut_pair(p, prm);
        });
        StandardFamily next;
        next.time = n + 1;
        for (std::size_t i = 0; i < kids.size(); ++i)
            for (auto& [p, c] : kids[i]) {
                next.pairs.push_back(std::move(p));
                next.weights.push_back(fam.weights[i] * c);
            }
        if (cap.max_pairs > 0 && next.pairs.size() > cap.max_pairs) {
            // systematic resampling; duplicates collapse into one pair
            const double total = next.total_weight();
            const double step = total / static_cast<double>(cap.max_pairs);
            std::mt19937_64 rng(cap.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(n + 1)));
            double u = std::uniform_real_distribution<double>(0.0, step)(rng);
            StandardFamily res;
            res.time = next.time;
            double acc = 0.0;
            for (std::size_t i = 0; i < next.pairs.size(); ++i) {
                acc += next.weights[i];
                int hits = 0;
                while (u < acc && hits < static_cast<int>(cap.max_pairs)) {
                    ++hits;
                    u += step;
                }
                if (hits > 0) {
                    res.pairs.push_back(std::move(next.pairs[i]));
                    res.weights.push_back(hits * step);
                }
            }
            next = std::move(res);
        }
        fam = std::move(next);
    }
}

double density_holder_constant(const StandardPair& pr, double eta)
{
    const auto arc = pr.arc_table();
    double best = 0.0;
    for (std::size_t i = 0; i < pr.nodes.size(); ++i)
        for (std::size_t j = i + 1; j < pr.nodes.size(); ++j) {
            const double d = arc[j] - arc[i];
            if (d <= 0) continue;
            best = std::max(best, std::abs(pr.nodes[j].log_rho - pr.nodes[i].log_rho) / std::pow(d, eta));
        }
    return best;
}

double arc_mass(const StandardPair& pr, double a, double b)
{
    const auto arc = pr.arc_table();
    auto cum = [&](double s) {
        const auto [i, t] = pr.locate(s, arc);
        double m = 0.0;
        for (std::size_t k = 0; k < i; ++k) m += pr.mass[k];
        const double d = pr.nodes[i + 1].log_rho - pr.nodes[i].log_rho;
        return m + pr.mass[i] * exp_linear_fraction(d, t);
    };
    return cum(b) - cum(a);
}

DensityComparison density_comparability(const StandardPair& pr, double a1, double b1, double a2,
                                        double b2, const CurveParams& prm)
{
    if (!(b1 > a1 && b2 > a2)) throw std::invalid_argument("density_comparability: empty subcurve");
    DensityComparison out;
    out.ratio = (arc_mass(pr, a1, b1) / (b1 - a1)) / (arc_mass(pr, a2, b2) / (b2 - a2));
    out.bound = std::exp(2 * prm.c_r * std::pow(prm.L, prm.eta_r));
    out.pass = out.ratio <= out.bound && out.ratio >= 1 / out.bound;
    return out;
}

namespace {

double stretch_from(const MapSequence& seq, Vec2 x, Vec2 v, long n0, int n)
{
    double lj = 0.0;
    for (int k = 1; k <= n; ++k) {
        const AnosovMap& t = seq.map(n0 + k);
        v = t.jacobian(x) * v;
        const double s = v.norm();
        lj += std::log(s);
        v /= s;
        x = TorusPoint(t.apply_lift(x)).vec();
    }
    return std::exp(lj);
}

}  // namespace

double curve_jacobian(const MapSequence& seq, const StandardPair& pr, double s, int n)
{
    const auto arc = pr.arc_table();
    const auto [i, t] = pr.locate(s, arc);
    return stretch_from(seq, pr.position(i, t), pr.derivative(i, t).normalized(), pr.time, n);
}

GrowthResult growth_check(const MapSequence& seq, const StandardPair& pr, int n,
                          const std::vector<GuideConstants>& constants)
{
    GrowthResult g;
    g.initial = pr.length();
    std::vector<int> steps(constants.size(), 0);
    for (int k = 1; k <= n; ++k) ++steps.at(seq.guide_of_map(pr.time + k));
    double lo = 1.0, hi = 1.0;
    for (std::size_t q = 0; q < constants.size(); ++q) {
        if (steps[q] == 0) continue;
        lo *= constants[q].c * std::pow(constants[q].lambda, steps[q]);
        hi *= std::pow(constants[q].lambda_bar, steps[q]);
    }
    g.lower = lo * g.initial;
    g.upper = hi * g.initial;
    g.min_stretch = std::numeric_limits<double>::infinity();
    g.max_stretch = 0.0;
    double measured = 0.0;
    for (std::size_t i = 0; i + 1 < pr.nodes.size(); ++i) {
        double seg = 0.0;
        for (int k = 0; k < 5; ++k) {
            const Vec2 d = pr.derivative(i, kGx[k]);
            const double j = stretch_from(seq, pr.position(i, kGx[k]), d.normalized(), pr.time, n);
            g.min_stretch = std::min(g.min_stretch, j);
            g.max_stretch = std::max(g.max_stretch, j);
            seg += kGw[k] * d.norm() * j;
        }
        measured += seg;
    }
    g.measured = measured;
    g.pass = g.measured >= g.lower && g.measured <= g.upper && g.min_stretch >= lo &&
             g.max_stretch <= hi;
    return g;
}

CurvatureRecursion curvature_recursion(const GuideConstants& c)
{
    CurvatureRecursion r;
    const double cl = c.c * c.lambda;
    r.a = c.d2_sup / (cl * cl);
    r.b = c.c_sharp / cl;
    r.fixed_point = r.b < 1 ? r.a / (1 - r.b) : std::numeric_limits<double>::infinity();
    return r;
}

double distortion_constant(const GuideConstants& c, double curvature)
{
    const double cl = c.c * c.lambda;
    const double lip = (c.d2_sup + c.lambda_bar * curvature) / cl;
    return lip / (c.c * (1 - 1 / c.lambda));
}

namespace {

// Steps a set of pieces, cutting, and keeps at most `lineages` evenly spaced ones.
void follow_step(const MapSequence& seq, std::vector<StandardPair>& cur, const CurveParams& prm,
                 int lineages)
{
    std::vector<StandardPair> next;
    for (auto& p : cur) {
        step_pair(seq, p, prm);
        for (auto& [q, c] : cut_pair(p, prm)) next.push_back(std::move(q));
    }
    if (static_cast<int>(next.size()) > lineages) {
        std::vector<StandardPair> keep;
        for (int j = 0; j < lineages; ++j)
            keep.push_back(std::move(next[static_cast<std::size_t>((j + 0.5) * next.size() / lineages)]));
        next = std::move(keep);
    }
    cur = std::move(next);
}

}  // namespace

CurvatureSeries curvature_check(const MapSequence& seq, const StandardPair& pair, int n,
                                const std::vector<GuideConstants>& constants,
                                const CurveParams& prm, int lineages)
{
    CurvatureSeries out;
    std::vector<CurvatureRecursion> rec;
    for (const auto& c : constants) {
        rec.push_back(curvature_recursion(c));
        out.k1 = std::max(out.k1, rec.back().fixed_point);
    }
    std::vector<StandardPair> cur{pair};
    out.kappa.push_back(pair.max_curvature());
    for (int k = 1; k <= n; ++k) {
        follow_step(seq, cur, prm, lineages);
        double km = 0.0;
        for (const auto& p : cur) km = std::max(km, p.max_curvature());
        const auto& r = rec.at(seq.guide_of_map(pair.time + k));
        out.worst_recursion_excess =
            std::max(out.worst_recursion_excess, km - (r.a + r.b * out.kappa.back()));
        out.kappa.push_back(km);
    }
    for (int k = 0; k <= n; ++k)
        if (out.kappa[k] <= out.k1) {
            out.n_kappa = k;
            break;
        }
    out.stays_below = out.n_kappa >= 0;
    if (out.stays_below)
        for (int k = out.n_kappa; k <= n; ++k)
            if (out.kappa[k] > out.k1) out.stays_below = false;
    return out;
}

DistortionSeries distortion_check(const MapSequence& seq, const StandardPair& pair, int n,
                                  const CurveParams& prm, int pairs_per_step, int lineages,
                                  int first_fit, std::uint64_t seed)
{
    DistortionSeries out;
    out.first_fit = first_fit;
    std::mt19937_64 rng(seed);
    std::vector<StandardPair> cur{pair};
    for (auto& nd : cur[0].nodes) nd.log_jac = 0.0;
    out.max_ratio.push_back(0.0);
    for (int k = 1; k <= n; ++k) {
        follow_step(seq, cur, prm, lineages);
        std::vector<std::vector<double>> arcs;
        for (const auto& p : cur) arcs.push_back(p.arc_table());
        std::uniform_int_distribution<std::size_t> pick(0, cur.size() - 1);
        double best = 0.0;
        for (int s = 0; s < pairs_per_step; ++s) {
            const std::size_t c = pick(rng);
            const auto& p = cur[c];
            std::uniform_int_distribution<std::size_t> node(0, p.nodes.size() - 1);
            const std::size_t i = node(rng), j = node(rng);
            const double d = std::abs(arcs[c][j] - arcs[c][i]);
            if (d < 10 * prm.h_min) continue;
            best = std::max(best, std::abs(p.nodes[j].log_jac - p.nodes[i].log_jac) / d);
        }
        out.max_ratio.push_back(best);
    }
    std::vector<double> xs, ys;
    for (int k = std::min(first_fit, n); k <= n; ++k) {
        xs.push_back(k);
        ys.push_back(out.max_ratio[k]);
    }
    if (xs.size() >= 2) out.trend = linear_fit(xs, ys);
    return out;
}

}  // namespace anosov
