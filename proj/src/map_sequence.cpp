#include "anosov/map_sequence.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace anosov {

namespace {

TrigMode mode_from_json(const nlohmann::json& j)
{
    TrigMode m;
    const auto& k = j.at("k");
    m.kx = k.at(0).get<int>();
    m.ky = k.at(1).get<int>();
    const auto& c = j.at("c");
    m.coeff = Vec2(c.at(0).get<double>(), c.at(1).get<double>());
    m.phase = j.value("phase", 0.0);
    return m;
}

nlohmann::json mode_to_json(const TrigMode& m)
{
    return {{"k", {m.kx, m.ky}}, {"c", {m.coeff.x(), m.coeff.y()}}, {"phase", m.phase}};
}

std::vector<TrigMode> modes_from_json(const nlohmann::json& j, const char* key)
{
    std::vector<TrigMode> out;
    if (!j.contains(key)) return out;
    for (const auto& m : j.at(key)) out.push_back(mode_from_json(m));
    return out;
}

nlohmann::json modes_to_json(const std::vector<TrigMode>& ms)
{
    auto arr = nlohmann::json::array();
    for (const auto& m : ms) arr.push_back(mode_to_json(m));
    return arr;
}

const char* kind_name(GeneratorKind k)
{
    switch (k) {
    case GeneratorKind::Fixed: return "fixed";
    case GeneratorKind::Drift: return "drift";
    case GeneratorKind::RandomWalk: return "random_walk";
    }
    return "fixed";
}

GeneratorKind kind_from_name(const std::string& s)
{
    if (s == "fixed") return GeneratorKind::Fixed;
    if (s == "drift") return GeneratorKind::Drift;
    if (s == "random_walk") return GeneratorKind::RandomWalk;
    throw std::invalid_argument("unknown generator kind '" + s + "'");
}

// eps*g of a map written with unit amplitude, merged into one mode list
std::vector<TrigMode> scaled_modes(const std::vector<TrigMode>& ms, double s)
{
    std::vector<TrigMode> out = ms;
    for (auto& m : out) m.coeff *= s;
    return out;
}

AnosovMap combine(const Mat2i& a, const std::vector<TrigMode>& base, double base_eps,
                  const std::vector<TrigMode>& extra, const std::vector<double>& amps)
{
    std::vector<TrigMode> all = scaled_modes(base, base_eps);
    for (std::size_t i = 0; i < extra.size(); ++i) {
        TrigMode m = extra[i];
        m.coeff *= amps[i];
        all.push_back(m);
    }
    bool zero = true;
    for (const auto& m : all)
        if (m.coeff.squaredNorm() > 0) zero = false;
    if (zero) return AnosovMap(a, 0.0, {});
    return AnosovMap(a, 1.0, std::move(all));
}

// sup|D^j h|/(2pi)^j bound for a single mode, used to keep random walks inside the ball
double scaled_mode_norm(const TrigMode& m)
{
    const double k2 = double(m.kx) * m.kx + double(m.ky) * m.ky;
    return m.coeff.norm() * std::max({1.0, std::sqrt(k2), k2});
}

struct ConeFrame {
    Mat2 inv;
    double a = 0.0;

    explicit ConeFrame(const Cone& c) : a(c.half_width)
    {
        Mat2 b;
        b.col(0) = c.axis.unit();
        b.col(1) = c.complement_axis.unit();
        inv = b.inverse();
    }
    double relative_margin(const Vec2& v) const
    {
        const Vec2 s = inv * v;
        return (a * std::abs(s.x()) - std::abs(s.y())) / v.norm();
    }
};

void note_margin(AssumptionCheck& c, double m, long time, const Vec2& p, const Vec2& v)
{
    ++c.samples;
    if (c.samples == 1 || m < c.worst_margin) {
        c.worst_margin = m;
        c.witness_time = time;
        c.witness_point = p;
        c.witness_vector = v;
    }
    if (!(m > 0.0)) c.pass = false;
}

}  // namespace

SequenceSpec sequence_spec_from_json(const nlohmann::json& j)
{
    SequenceSpec s;
    s.seed = j.value("seed", std::uint64_t{1});
    s.grid = j.value("grid", 64);
    for (const auto& g : j.at("guides")) {
        GuideSpec gs;
        const auto& a = g.at("A");
        gs.a << a.at(0).at(0).get<int>(), a.at(0).at(1).get<int>(), a.at(1).at(0).get<int>(),
            a.at(1).at(1).get<int>();
        gs.epsilon = g.value("epsilon", 0.0);
        gs.modes = modes_from_json(g, "modes");
        gs.radius = g.value("radius", 0.02);
        gs.min_dwell = g.value("min_dwell", 1);
        gs.length = g.at("length").get<int>();
        if (g.contains("cone")) {
            gs.cone_unstable = g.at("cone").value("unstable", 0.2);
            gs.cone_stable = g.at("cone").value("stable", 0.2);
        }
        if (g.contains("generator")) {
            const auto& gen = g.at("generator");
            gs.generator.kind = kind_from_name(gen.value("kind", std::string("fixed")));
            gs.generator.modes = modes_from_json(gen, "modes");
            gs.generator.amplitude = gen.value("amplitude", 0.0);
            gs.generator.amplitude_end = gen.value("amplitude_end", gs.generator.amplitude);
            gs.generator.step = gen.value("step", 0.0);
        }
        s.guides.push_back(gs);
    }
    if (s.guides.empty()) throw std::invalid_argument("sequence: at least one guide required");
    return s;
}

nlohmann::json sequence_spec_to_json(const SequenceSpec& s)
{
    nlohmann::json j;
    j["seed"] = s.seed;
    j["grid"] = s.grid;
    auto guides = nlohmann::json::array();
    for (const auto& g : s.guides) {
        nlohmann::json gj;
        gj["A"] = {{g.a(0, 0), g.a(0, 1)}, {g.a(1, 0), g.a(1, 1)}};
        gj["epsilon"] = g.epsilon;
        gj["modes"] = modes_to_json(g.modes);
        gj["radius"] = g.radius;
        gj["min_dwell"] = g.min_dwell;
        gj["length"] = g.length;
        gj["cone"] = {{"unstable", g.cone_unstable}, {"stable", g.cone_stable}};
        gj["generator"] = {{"kind", kind_name(g.generator.kind)},
                           {"modes", modes_to_json(g.generator.modes)},
                           {"amplitude", g.generator.amplitude},
                           {"amplitude_end", g.generator.amplitude_end},
                           {"step", g.generator.step}};
        guides.push_back(gj);
    }
    j["guides"] = guides;
    return j;
}

double scaled_c2_distance(const AnosovMap& t1, const AnosovMap& t2, int grid)
{
    if (!(t1.matrix() == t2.matrix())) return std::numeric_limits<double>::infinity();
    double d0 = 0, d1 = 0, d2 = 0;
    for (int i = 0; i < grid; ++i) {
        for (int j = 0; j < grid; ++j) {
            const Vec2 p((i + 0.5) / grid, (j + 0.5) / grid);
            d0 = std::max(d0, (t1.perturbation(p) - t2.perturbation(p)).norm());
            const Mat2 dj = t1.perturbation_jacobian(p) - t2.perturbation_jacobian(p);
            d1 = std::max(d1, dj.operatorNorm());
            double best = 0.0;
            for (int k = 0; k < 16; ++k) {
                const double t = kPi * k / 16;
                const Vec2 u(std::cos(t), std::sin(t));
                best = std::max(best, (t1.second_derivative(p, u, u) - t2.second_derivative(p, u, u)).norm());
            }
            d2 = std::max(d2, best);
        }
    }
    return std::max({d0, d1 / kTwoPi, d2 / (kTwoPi * kTwoPi)});
}

MapSequence::MapSequence(std::vector<GuideMap> guides, std::vector<int> lengths,
                         std::vector<AnosovMap> maps)
    : guides_(std::move(guides)), maps_(std::move(maps))
{
    if (guides_.empty()) throw std::invalid_argument("MapSequence: no guides");
    if (lengths.size() != guides_.size()) throw std::invalid_argument("MapSequence: interval count");
    int acc = 0;
    for (int len : lengths) {
        if (len < 1) throw std::invalid_argument("MapSequence: empty interval");
        acc += len;
        ends_.push_back(acc);
    }
    if (acc != static_cast<int>(maps_.size()))
        throw std::invalid_argument("MapSequence: map count does not match intervals");
}

int MapSequence::guide_of_map(long i) const
{
    if (i <= 0) return 0;
    for (int q = 0; q < num_guides(); ++q)
        if (i <= ends_[q]) return q;
    return num_guides() - 1;
}

const AnosovMap& MapSequence::map(long i) const
{
    if (i <= 0) return guides_.front().map;
    if (i > length()) return guides_.back().map;
    return maps_[i - 1];
}

Vec2 MapSequence::compose(const Vec2& x, long n_from, long n_to) const
{
    Vec2 p = x;
    for (long i = n_from; i <= n_to; ++i) p = map(i).apply_lift(p);
    return p;
}

MapSequence build_sequence(const SequenceSpec& spec)
{
    std::vector<GuideMap> guides;
    std::vector<int> lengths;
    std::vector<AnosovMap> maps;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    for (std::size_t q = 0; q < spec.guides.size(); ++q) {
        const GuideSpec& gs = spec.guides[q];
        if (gs.length < gs.min_dwell) {
            std::ostringstream os;
            os << "interval " << q + 1 << " has length " << gs.length << " < minimum dwell "
               << gs.min_dwell;
            throw std::invalid_argument(os.str());
        }
        if (gs.cone_unstable <= 0 || gs.cone_unstable >= 1 || gs.cone_stable <= 0 ||
            gs.cone_stable >= 1)
            throw std::invalid_argument("cone half-widths must lie in (0,1)");
        GuideMap g;
        g.map = gs.epsilon == 0.0 || gs.modes.empty() ? AnosovMap(gs.a, 0.0, {})
                                                       : AnosovMap(gs.a, gs.epsilon, gs.modes);
        g.radius = gs.radius;
        g.min_dwell = gs.min_dwell;
        g.cone_unstable = gs.cone_unstable;
        g.cone_stable = gs.cone_stable;
        g.split = hyperbolic_splitting(g.map.linear());
        guides.push_back(g);
        lengths.push_back(gs.length);

        const GeneratorSpec& gen = gs.generator;
        std::vector<double> amps(gen.modes.size(), gen.amplitude);
        for (int i = 0; i < gs.length; ++i) {
            if (gen.kind == GeneratorKind::Drift && gs.length > 1) {
                const double t = double(i) / (gs.length - 1);
                std::fill(amps.begin(), amps.end(),
                          (1 - t) * gen.amplitude + t * gen.amplitude_end);
            } else if (gen.kind == GeneratorKind::RandomWalk && i > 0) {
                for (auto& a : amps) a += gen.step * normal(rng);
                // pull the walk back inside the ball, sampled checks follow
                double bound = 0.0;
                for (std::size_t k = 0; k < amps.size(); ++k)
                    bound += std::abs(amps[k]) * scaled_mode_norm(gen.modes[k]);
                if (bound > gs.radius && bound > 0)
                    for (auto& a : amps) a *= gs.radius / bound;
            }
            AnosovMap t = combine(gs.a, gs.modes, gs.epsilon, gen.modes, amps);
            const double dist = scaled_c2_distance(t, g.map, spec.grid);
            if (dist > gs.radius * (1 + 1e-12) + 1e-15) {
                std::ostringstream os;
                os << "map " << maps.size() + 1 << " leaves the ball of guide " << q + 1
                   << " (distance " << dist << " > radius " << gs.radius << ")";
                throw std::invalid_argument(os.str());
            }
            maps.push_back(std::move(t));
        }
    }
    return MapSequence(std::move(guides), std::move(lengths), std::move(maps));
}

Mat2 compose_jacobian(const MapSequence& seq, const Vec2& x, long n_from, long n_to)
{
    if (n_from < 1 || n_from > n_to) throw std::out_of_range("compose_jacobian: bad index range");
    // extended precision keeps det(product) close to the product of dets
    using Mat2l = Eigen::Matrix<long double, 2, 2>;
    Mat2l j = Mat2l::Identity();
    Vec2 p = x;
    for (long i = n_from; i <= n_to; ++i) {
        const AnosovMap& t = seq.map(i);
        j = t.jacobian(p).cast<long double>() * j;
        p = TorusPoint(t.apply_lift(p)).vec();
    }
    return j.cast<double>();
}

bool ValidationReport::pass() const
{
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.pass; });
}

const AssumptionCheck& ValidationReport::check(const std::string& name) const
{
    for (const auto& c : checks)
        if (c.name == name) return c;
    throw std::out_of_range("no check named " + name);
}

namespace {

// Growth of cone vectors along T_{b}, T_{b+1}, ... continued by the guide map
// once the interval is exhausted.
GuideConstants guide_constants(const MapSequence& seq, int q, const ValidationOptions& opt,
                               AssumptionCheck& a2)
{
    const GuideMap& g = seq.guide(q);
    const int begin = seq.interval_begin(q);
    const int end = seq.interval_end(q);
    const int steps = std::max(end - begin + 1, opt.transient + 20);
    auto map_at = [&](int k) -> const AnosovMap& {
        const long i = begin + k;
        return i <= end ? seq.map(i) : g.map;
    };

    GuideConstants gc;
    gc.q = q;
    gc.a_unstable = g.cone_unstable;
    gc.a_stable = g.cone_stable;

    const int dirs = std::max(opt.directions, 3);
    const Cone cu = g.unstable_cone();
    const Cone cs = g.stable_cone();
    const auto u_vecs = cu.sample_vectors(dirs);
    const auto s_vecs = cs.sample_vectors(dirs);

    std::vector<Vec2> points;
    for (int i = 0; i < opt.constant_grid; ++i)
        for (int j = 0; j < opt.constant_grid; ++j)
            points.emplace_back((i + 0.37) / opt.constant_grid, (j + 0.61) / opt.constant_grid);

    // forward orbits with Jacobians, and inverse Jacobians along backward use
    double rate = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> logs;  // log growth per sample, per n
    double sharp = 1.0;
    double d2 = 0.0;
    const int t0 = std::min(opt.transient, steps - 1);
    for (const Vec2& x0 : points) {
        std::vector<Mat2> jac(steps);
        std::vector<Mat2> jac_inv(steps);
        Vec2 p = x0;
        for (int k = 0; k < steps; ++k) {
            jac[k] = map_at(k).jacobian(p);
            jac_inv[k] = jac[k].inverse();
            if (begin + k <= end) d2 = std::max(d2, map_at(k).second_derivative_norm(p));
            p = map_at(k).apply_lift(p);
        }
        // unstable vectors forward
        for (const Vec2& v0 : u_vecs) {
            std::vector<double> lg(steps + 1, 0.0);
            Vec2 v = v0;
            double acc = 0.0;
            for (int k = 0; k < steps; ++k) {
                v = jac[k] * v;
                const double nv = v.norm();
                acc += std::log(nv);
                v /= nv;
                lg[k + 1] = acc;
            }
            rate = std::min(rate, (lg[steps] - lg[t0]) / (steps - t0));
            logs.push_back(std::move(lg));
        }
        // stable vectors under the inverse cocycle: pull back from the end
        for (const Vec2& v0 : s_vecs) {
            std::vector<double> lg(steps + 1, 0.0);
            Vec2 v = v0;
            double acc = 0.0;
            for (int k = steps - 1, n = 1; k >= 0; --k, ++n) {
                v = jac_inv[k] * v;
                const double nv = v.norm();
                acc += std::log(nv);
                v /= nv;
                lg[n] = acc;
            }
            rate = std::min(rate, (lg[steps] - lg[t0]) / (steps - t0));
            logs.push_back(std::move(lg));
        }
        // growth ratio bound C_#: any unit vector against the least expanded cone vector
        for (int a = 0; a < dirs; ++a) {
            const double th = kPi * a / dirs;
            Vec2 wt(std::cos(th), std::sin(th));
            for (const Vec2& w0 : {u_vecs.front(), u_vecs.back()}) {
                Vec2 w = w0, v = wt;
                for (int k = 0; k < steps; ++k) {
                    w = jac[k] * w;
                    v = jac[k] * v;
                    sharp = std::max(sharp, v.norm() / w.norm());
                    const double s = w.norm();
                    w /= s;
                    v /= s;
                }
            }
        }
        // vectors just outside the stable cone enter the unstable cone after k_q steps
        for (const Vec2& b : cs.boundary_vectors()) {
            for (const double side : {1e-9, -1e-9}) {
                const Vec2 v0 = (b + side * cs.complement_axis.unit()).normalized();
                if (cs.test(v0).inside) continue;
                Vec2 v = v0;
                int last_out = -1;
                for (int k = 0; k < steps; ++k) {
                    v = (jac[k] * v).normalized();
                    if (!cu.test(v).inside) last_out = k;
                }
                gc.k = std::max(gc.k, last_out + 2);
            }
        }
    }
    gc.lambda = std::exp(rate);
    gc.c_sharp = sharp;
    gc.d2_sup = d2;

    // C_q: the worst ratio growth / Lambda^n over every sample and n
    double cmin = 1.0;
    for (const auto& lg : logs)
        for (int n = 1; n <= steps; ++n) cmin = std::min(cmin, std::exp(lg[n] - n * rate));
    gc.c = opt.safety * cmin;

    // C'_q: growth of vectors outside the stable cone, measured against Lambda_q
    {
        double cp = 1.0;
        for (const Vec2& x0 : points) {
            const Vec2 b = cs.boundary_vectors()[0];
            for (const Vec2& v0 : {Vec2((b + 1e-9 * cs.complement_axis.unit()).normalized()),
                                  Vec2((b - 1e-9 * cs.complement_axis.unit()).normalized()),
                                  Vec2(cs.complement_axis.unit())}) {
                if (cs.test(v0).inside) continue;
                Vec2 p = x0, v = v0;
                double acc = 0.0;
                for (int k = 0; k < steps; ++k) {
                    v = map_at(k).jacobian(p) * v;
                    p = map_at(k).apply_lift(p);
                    const double nv = v.norm();
                    acc += std::log(nv);
                    v /= nv;
                    cp = std::min(cp, std::exp(acc - (k + 1) * rate));
                }
            }
        }
        gc.c_prime = opt.safety * cp;
    }

    double sup_dt = 0.0;
    for (int i = 0; i < opt.constant_grid * 2; ++i)
        for (int j = 0; j < opt.constant_grid * 2; ++j) {
            const Vec2 p((i + 0.5) / (2 * opt.constant_grid), (j + 0.5) / (2 * opt.constant_grid));
            sup_dt = std::max(sup_dt, g.map.jacobian(p).operatorNorm());
        }
    gc.lambda_bar = sup_dt + kTwoPi * g.radius;  // radius is in the scaled distance

    ++a2.samples;
    if (!(gc.lambda > 1.0) || !(gc.c > 0.0)) {
        a2.pass = false;
        a2.witness_time = begin;
        std::ostringstream os;
        os << "guide " << q + 1 << ": Lambda=" << gc.lambda << " C=" << gc.c;
        a2.detail = os.str();
    }
    if (a2.samples == 1 || gc.lambda - 1.0 < a2.worst_margin) a2.worst_margin = gc.lambda - 1.0;
    return gc;
}

}  // namespace

ValidationReport validate_assumptions(const MapSequence& seq, const ValidationOptions& opt)
{
    ValidationReport rep;
    AssumptionCheck a0, a1, a2, a3, a4;
    a0.name = "A0";
    a1.name = "A1";
    a2.name = "A2";
    a3.name = "A3";
    a4.name = "A4";
    a0.detail = "one-step cone invariance (p_q = 1) is what A1/A3 test";

    std::vector<ConeFrame> uf, sf;
    for (int q = 0; q < seq.num_guides(); ++q) {
        uf.emplace_back(seq.guide(q).unstable_cone());
        sf.emplace_back(seq.guide(q).stable_cone());
    }

    const int dirs = std::max(opt.directions, 2);
    const int n = seq.length();
    for (long i = 1; i <= n; ++i) {
        const AnosovMap& t = seq.map(i);
        const int qu_from = seq.unstable_family(i - 1), qu_to = seq.unstable_family(i);
        const int qs_from = seq.stable_family(i), qs_to = seq.stable_family(i - 1);
        const auto uvecs = seq.guide(qu_from).unstable_cone().sample_vectors(dirs);
        const auto svecs = seq.guide(qs_from).stable_cone().sample_vectors(dirs);
        AssumptionCheck& cu = qu_from == qu_to ? a1 : a3;
        AssumptionCheck& cs = qs_from == qs_to ? a1 : a3;
        for (int gx = 0; gx < opt.grid; ++gx) {
            for (int gy = 0; gy < opt.grid; ++gy) {
                const Vec2 x((gx + 0.5) / opt.grid, (gy + 0.5) / opt.grid);
                const Mat2 j = t.jacobian(x);
                const Mat2 jinv = j.inverse();
                for (const Vec2& v : uvecs) {
                    const Vec2 w = j * v;
                    const double m = uf[qu_to].relative_margin(w);
                    note_margin(cu, m, i, x, v);
                    ++rep.cone_samples;
                }
                // stable vectors live at T x and are pulled back to x
                for (const Vec2& v : svecs) {
                    const Vec2 w = jinv * v;
                    const double m = sf[qs_to].relative_margin(w);
                    note_margin(cs, m, i, x, v);
                    ++rep.cone_samples;
                }
            }
        }
    }
    if (a3.samples == 0) a3.detail = "no transitions";

    double b1 = 0.0;
    for (long i = 1; i <= n; ++i)
        for (int gx = 0; gx < 32; ++gx)
            for (int gy = 0; gy < 32; ++gy) {
                const Vec2 x((gx + 0.5) / 32, (gy + 0.5) / 32);
                b1 = std::max(b1, seq.map(i).jacobian(x).operatorNorm());
            }
    rep.b1 = b1;

    for (int q = 0; q < seq.num_guides(); ++q) rep.constants.push_back(guide_constants(seq, q, opt, a2));

    // A4: narrow cones that stay apart from each other
    for (int q = 0; q < seq.num_guides(); ++q) {
        const GuideMap& g = seq.guide(q);
        double worst = 1.0 - std::max(g.cone_unstable, g.cone_stable);
        // largest |cos| between any unstable and any stable cone vector
        double cmax = 0.0;
        for (const Vec2& u : g.unstable_cone().boundary_vectors())
            for (const Vec2& s : g.stable_cone().boundary_vectors())
                cmax = std::max(cmax, std::abs(u.normalized().dot(s.normalized())));
        worst = std::min(worst, 1.0 - cmax);
        ++a4.samples;
        if (a4.samples == 1 || worst < a4.worst_margin) {
            a4.worst_margin = worst;
            a4.witness_time = seq.interval_begin(q);
        }
        if (!(worst > 0)) a4.pass = false;
    }

    rep.min_cone_margin = std::min(a1.samples ? a1.worst_margin : 1.0, a3.samples ? a3.worst_margin : 1.0);
    rep.checks = {a0, a1, a2, a3, a4};
    return rep;
}

nlohmann::json validation_report_to_json(const ValidationReport& r)
{
    nlohmann::json j;
    j["pass"] = r.pass();
    j["b1"] = r.b1;
    j["cone_samples"] = r.cone_samples;
    j["min_cone_margin"] = r.min_cone_margin;
    auto checks = nlohmann::json::array();
    for (const auto& c : r.checks) {
        checks.push_back({{"name", c.name},
                          {"pass", c.pass},
                          {"worst_margin", c.worst_margin},
                          {"samples", c.samples},
                          {"witness_time", c.witness_time},
                          {"witness_point", {c.witness_point.x(), c.witness_point.y()}},
                          {"witness_vector", {c.witness_vector.x(), c.witness_vector.y()}},
                          {"detail", c.detail}});
    }
    j["assumptions"] = checks;
    auto consts = nlohmann::json::array();
    for (const auto& g : r.constants) {
        consts.push_back({{"q", g.q + 1},
                          {"C", g.c},
                          {"Lambda", g.lambda},
                          {"Lambda_bar", g.lambda_bar},
                          {"a_unstable", g.a_unstable},
                          {"a_stable", g.a_stable},
                          {"C_prime", g.c_prime},
                          {"k", g.k},
                          {"C_sharp", g.c_sharp},
                          {"D2_sup", g.d2_sup}});
    }
    j["constants"] = consts;
    return j;
}

}  // namespace anosov
