#include "doctest.h"

#include "anosov/curves.hpp"

#include <random>

using namespace anosov;

namespace {

Mat2i cat()
{
    Mat2i a;
    a << 2, 1, 1, 1;
    return a;
}

MapSequence linear_seq()
{
    SequenceSpec s;
    GuideSpec g;
    g.a = cat();
    g.length = 40;
    s.guides.push_back(g);
    return build_sequence(s);
}

MapSequence perturbed_seq(std::uint64_t seed = 3)
{
    SequenceSpec s;
    s.seed = seed;
    for (int q = 0; q < 2; ++q) {
        GuideSpec g;
        g.a = q == 0 ? cat() : Mat2i(cat() * cat());
        g.epsilon = 0.02;
        g.modes = {TrigMode{1, 0, Vec2(1, 0), 0.0}};
        g.length = 20;
        g.min_dwell = 20;
        g.radius = 0.01;
        g.generator.kind = GeneratorKind::RandomWalk;
        g.generator.modes = {TrigMode{0, 1, Vec2(0.3, 0.7), 0.5}};
        g.generator.amplitude = 0.004;
        g.generator.step = 0.002;
        s.guides.push_back(g);
    }
    return build_sequence(s);
}

const double kLu = (3 + std::sqrt(5.0)) / 2;

Vec2 eig_u() { return hyperbolic_splitting(cat().cast<double>()).unstable.unit(); }
Vec2 eig_s() { return hyperbolic_splitting(cat().cast<double>()).stable.unit(); }

}  // namespace

TEST_CASE("Hermite arc length of a circle")
{
    const double r = 0.1, th = 1.0;
    auto g = [&](double t) -> Vec2 { return Vec2(0.5, 0.5) + r * Vec2(std::cos(t), std::sin(t)); };
    auto dg = [&](double t) -> Vec2 { return r * Vec2(-std::sin(t), std::cos(t)); };
    auto d2 = [&](double t) -> Vec2 { return -r * Vec2(std::cos(t), std::sin(t)); };
    const StandardPair p = make_parametric_pair(g, dg, d2, 0.0, th, 101);
    CHECK(p.length() == doctest::Approx(r * th).epsilon(1e-8));
    CHECK(p.max_curvature() == doctest::Approx(1 / r).epsilon(1e-12));
    CHECK(p.total_mass() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("linear one-step image of an eigensegment")
{
    const MapSequence seq = linear_seq();
    const StandardPair w = make_segment_pair({0.3, 0.4}, eig_u(), 0.1, 1e-3);
    CurveParams prm;
    const auto out = evolve_pair(seq, w, 1, prm);
    REQUIRE(out.size() == 1);
    const StandardPair& p = out[0].first;
    CHECK(p.length() == doctest::Approx(0.2618034).epsilon(1e-7));
    CHECK(p.length() == doctest::Approx(kLu * 0.1).epsilon(1e-12));
    for (const auto& n : p.nodes) CHECK(n.log_rho == doctest::Approx(-std::log(kLu * 0.1)).epsilon(1e-12));
    CHECK(p.max_curvature() == 0.0);
    // spacing stays within the refinement band
    for (std::size_t i = 0; i + 1 < p.nodes.size(); ++i) {
        const double h = (p.nodes[i + 1].p - p.nodes[i].p).norm();
        CHECK(h <= prm.h_max * (1 + 1e-9));
        CHECK(h >= prm.h_min);
    }
}

TEST_CASE("cutting and mass conservation on a perturbed evolution")
{
    const MapSequence seq = perturbed_seq();
    StandardPair w = make_segment_pair({0.2, 0.7}, eig_u(), 0.2, 1e-3);
    // exp-linear on every segment, so the node densities and masses agree initially
    set_density(w, [](double s) { return std::exp(3 * s); });
    CurveParams prm;
    const auto out = evolve_pair(seq, w, 4, prm);
    CHECK(out.size() > 4);
    double total = 0.0;
    for (const auto& [p, c] : out) {
        total += c;
        CHECK(p.total_mass() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p.length() <= prm.L * (1 + 1e-9));
        // pushed density agrees with the authoritative segment masses
        const auto arc = p.arc_table();
        double worst = 0.0;
        for (std::size_t i = 0; i < p.mass.size(); ++i) {
            const double len = arc[i + 1] - arc[i];
            const double a = p.nodes[i].log_rho, b = p.nodes[i + 1].log_rho;
            const double q = len * (std::abs(b - a) < 1e-12 ? std::exp(a) : (std::exp(b) - std::exp(a)) / (b - a));
            worst = std::max(worst, std::abs(q / p.mass[i] - 1));
        }
        CHECK(worst < 1e-7);  // O(h^2) from the log-linear rule
        for (const auto& n : p.nodes) CHECK(seq.unstable_cone(4).test(n.u).inside);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    // equal pieces: every cut piece of one parent has the same length
    CHECK(out.front().first.length() >= prm.L / 2);
}

TEST_CASE("density regularity tightens under evolution")
{
    const MapSequence seq = perturbed_seq();
    StandardPair w = make_segment_pair({0.2, 0.7}, eig_u(), 0.3, 1e-3);
    set_density(w, [](double s) { return std::exp(0.8 * std::sin(6 * s)); });
    CurveParams prm;
    const double before = density_holder_constant(w, prm.eta_r);
    std::vector<double> worst;
    std::vector<std::pair<StandardPair, double>> cur{{w, 1.0}};
    for (int n = 1; n <= 6; ++n) {
        std::vector<std::pair<StandardPair, double>> next;
        for (auto& [p, c] : cur)
            for (auto& q : evolve_pair(seq, p, n, prm)) next.push_back(q);
        if (next.size() > 8) next.resize(8);
        cur = next;
        double m = 0.0;
        for (auto& [p, c] : cur) m = std::max(m, density_holder_constant(p, prm.eta_r));
        worst.push_back(m);
    }
    CHECK(worst.back() < before);
    CHECK(worst.back() <= prm.c_r);
}

TEST_CASE("growth sandwich and curve jacobian")
{
    const MapSequence lin = linear_seq();
    ValidationOptions vo;
    vo.grid = 16;
    const auto lrep = validate_assumptions(lin, vo);
    const StandardPair w = make_segment_pair({0.3, 0.4}, eig_u(), 0.1, 1e-3);
    const GrowthResult g0 = growth_check(lin, w, 0, lrep.constants);
    CHECK(g0.lower == doctest::Approx(g0.initial));
    CHECK(g0.upper == doctest::Approx(g0.initial));
    CHECK(g0.measured == doctest::Approx(g0.initial).epsilon(1e-12));
    const GrowthResult g = growth_check(lin, w, 10, lrep.constants);
    CHECK(g.measured == doctest::Approx(std::pow(kLu, 10) * 0.1).epsilon(1e-8));
    CHECK(g.pass);
    CHECK(curve_jacobian(lin, w, 0.05, 7) == doctest::Approx(std::pow(kLu, 7)).epsilon(1e-10));
    CHECK(curve_jacobian(lin, w, 0.05, 0) == 1.0);

    // integral of the stretch equals the evolved polyline length
    const MapSequence seq = perturbed_seq();
    const auto rep = validate_assumptions(seq, vo);
    StandardPair c = make_segment_pair({0.6, 0.1}, eig_u() + 0.1 * eig_s(), 0.05, 1e-3);
    CurveParams prm;
    prm.L = 100;
    const auto out = evolve_pair(seq, c, 3, prm);
    REQUIRE(out.size() == 1);
    const GrowthResult gp = growth_check(seq, c, 3, rep.constants);
    CHECK(gp.measured == doctest::Approx(out[0].first.length()).epsilon(1e-8));
    CHECK(gp.pass);

    // stable eigensegment contracts at least like 1/(C Lambda^n)
    StandardPair s = make_segment_pair({0.6, 0.1}, eig_s(), 0.2, 1e-3);
    prm.check_cone = false;
    StandardPair t = s;
    for (int n = 1; n <= 6; ++n) {
        step_pair(lin, t, prm);
        CHECK(t.length() == doctest::Approx(s.length() / std::pow(kLu, n)).epsilon(1e-9));
        CHECK(t.length() <= s.length() / (lrep.constants[0].c * std::pow(lrep.constants[0].lambda, n)));
    }
}

TEST_CASE("curvature: flat stays flat, bumps flatten")
{
    const MapSequence lin = linear_seq();
    ValidationOptions vo;
    vo.grid = 16;
    CurveParams prm;
    const auto lrep = validate_assumptions(lin, vo);
    const StandardPair w = make_segment_pair({0.3, 0.4}, eig_u(), 0.1, 1e-3);
    const auto flat = curvature_check(lin, w, 8, lrep.constants, prm);
    for (double k : flat.kappa) CHECK(k == 0.0);

    const MapSequence seq = perturbed_seq();
    const auto rep = validate_assumptions(seq, vo);
    const Vec2 eu = eig_u(), es = eig_s();
    const double lam = 0.015, amp = 50 * std::pow(lam / kTwoPi, 2);
    const double kw = kTwoPi / lam;
    auto g = [&](double s) -> Vec2 { return Vec2(0.4, 0.4) + s * eu + amp * std::sin(kw * s) * es; };
    auto dg = [&](double s) -> Vec2 { return eu + amp * kw * std::cos(kw * s) * es; };
    auto d2 = [&](double s) -> Vec2 { return -amp * kw * kw * std::sin(kw * s) * es; };
    const StandardPair b = make_parametric_pair(g, dg, d2, 0.0, 0.06, 241);
    CHECK(b.max_curvature() == doctest::Approx(50).epsilon(0.05));
    const auto cs = curvature_check(seq, b, 12, rep.constants, prm, 8);
    CHECK(cs.n_kappa > 0);
    CHECK(cs.stays_below);
    CHECK(cs.worst_recursion_excess <= 1e-6);
}

TEST_CASE("distortion")
{
    const MapSequence lin = linear_seq();
    CurveParams prm;
    const StandardPair w = make_segment_pair({0.3, 0.4}, eig_u(), 0.1, 1e-3);
    const auto d0 = distortion_check(lin, w, 6, prm, 200, 4, 2);
    for (double r : d0.max_ratio) CHECK(r < 1e-9);

    const MapSequence seq = perturbed_seq();
    const auto d = distortion_check(seq, w, 15, prm, 1000, 8, 5);
    for (double r : d.max_ratio) CHECK(std::isfinite(r));
    CHECK(d.max_ratio.back() > 0);
}

TEST_CASE("density comparability")
{
    CurveParams prm;
    StandardPair w = make_segment_pair({0.3, 0.4}, eig_u(), 0.3, 1e-3);
    CHECK(density_comparability(w, 0.0, 0.1, 0.0, 0.1, prm).ratio == doctest::Approx(1.0));
    CHECK(density_comparability(w, 0.0, 0.1, 0.15, 0.3, prm).ratio == doctest::Approx(1.0).epsilon(1e-12));
    set_density(w, [](double s) { return std::exp(0.5 * std::sqrt(s)); });
    // direct integration oracle for nu([a,b]) with rho normalised on [0, 0.3]
    auto integral = [](double a, double b) {
        const int m = 20000;
        double s = 0.0;
        for (int i = 0; i < m; ++i) {
            const double x = a + (b - a) * (i + 0.5) / m;
            s += std::exp(0.5 * std::sqrt(x));
        }
        return s * (b - a) / m;
    };
    const double z = integral(0.0, 0.3);
    CHECK(arc_mass(w, 0.05, 0.2) == doctest::Approx(integral(0.05, 0.2) / z).epsilon(1e-6));
    const auto r = density_comparability(w, 0.0, 0.02, 0.25, 0.3, prm);
    CHECK(r.pass);
    CHECK(r.ratio < 1);
}

TEST_CASE("parameter checks")
{
    CurveParams prm;
    CHECK_NOTHROW(check_curve_params(prm, 0.5));
    CHECK_THROWS_AS(check_curve_params(prm, 10.0), std::invalid_argument);
    prm.ell = 0.4;
    CHECK_THROWS_AS(check_curve_params(prm, 0.1), std::invalid_argument);
}

TEST_CASE("family evolution with resampling cap")
{
    const MapSequence seq = perturbed_seq();
    StandardFamily fam;
    for (int i = 0; i < 3; ++i) {
        fam.pairs.push_back(make_segment_pair({0.1 + 0.3 * i, 0.5}, eig_u(), 0.3, 1e-3));
        fam.weights.push_back(1.0 / 3);
    }
    CurveParams prm;
    StandardFamily a = fam, b = fam;
    evolve_family(seq, a, 3, prm, FamilyCap{40, 7});
    evolve_family(seq, b, 3, prm, FamilyCap{40, 7}, 2);
    CHECK(a.pairs.size() <= 40);
    CHECK(a.total_weight() == doctest::Approx(1.0).epsilon(1e-12));
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.weights[i] == b.weights[i]);
        CHECK(a.pairs[i].nodes.back().p == b.pairs[i].nodes.back().p);
    }
}
