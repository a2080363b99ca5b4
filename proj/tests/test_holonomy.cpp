#include "doctest.h"

#include "anosov/holonomy.hpp"

#include <algorithm>

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

Vec2 eig_u() { return hyperbolic_splitting(cat().cast<double>()).unstable.unit(); }
Vec2 eig_s() { return hyperbolic_splitting(cat().cast<double>()).stable.unit(); }

std::vector<double> grid(double a, double b, int count)
{
    std::vector<double> v;
    for (int k = 0; k < count; ++k) v.push_back(a + (b - a) * k / (count - 1));
    return v;
}

// w1 through (0.3,0.4), w2 offset by 0.01 along the stable and 0.003 along the unstable direction
struct TwoCurves {
    StandardPair w1, w2;
};
TwoCurves two_curves()
{
    return {make_segment_pair(Vec2(0.3, 0.4), eig_u(), 0.2, 1e-3),
            make_segment_pair(Vec2(0.3, 0.4) + 0.01 * eig_s() + 0.003 * eig_u(), eig_u(), 0.2, 1e-3)};
}

}  // namespace

TEST_CASE("linear leaves are straight stable lines")
{
    const auto seq = linear_seq();
    LineFieldEvaluator f(seq);
    const auto leaf = trace_stable_leaf(f, 0, Vec2(0.5, 0.5), 0.05);
    CHECK(leaf.length == doctest::Approx(0.05).epsilon(1e-14));
    for (const auto& p : leaf.points) {
        const Vec2 d = p - leaf.base;
        CHECK(std::abs(d.x() * eig_s().y() - d.y() * eig_s().x()) < 1e-13);
    }
    CHECK(leaf.error < 1e-13);
}

TEST_CASE("identity and translation matchings")
{
    const auto seq = linear_seq();
    LineFieldEvaluator f(seq);
    const auto c = two_curves();
    const auto s1 = grid(0.01, 0.19, 37);

    const auto id = build_holonomy(f, c.w1, c.w1, s1);
    REQUIRE(id.pairs.size() == s1.size());
    for (const auto& p : id.pairs) {
        CHECK(p.leaf_length < 1e-12);
        CHECK(std::abs(p.s2 - p.s1) < 1e-10);
    }

    const auto tr = build_holonomy(f, c.w1, c.w2, s1);
    REQUIRE(tr.pairs.size() == s1.size());
    CHECK(tr.monotone);
    CHECK(tr.domain_fraction == 1.0);
    for (const auto& p : tr.pairs) {
        CHECK(std::abs(p.s2 - (p.s1 - 0.003)) < 1e-10);
        CHECK(std::abs(p.leaf_length - 0.01) < 1e-10);
        CHECK((p.hx - p.x - 0.01 * eig_s()).norm() < 1e-9);
        const auto j = holonomy_jacobian(f, 0, p);
        CHECK(j.converged);
        CHECK(std::abs(j.log_jac) < 1e-10);
    }
}

TEST_CASE("points outside the domain are dropped")
{
    const auto seq = linear_seq();
    LineFieldEvaluator f(seq);
    const auto w1 = make_segment_pair(Vec2(0.3, 0.4), eig_u(), 0.2, 1e-3);
    const auto w2 = make_segment_pair(Vec2(0.3, 0.4) + 0.01 * eig_s() + 0.15 * eig_u(), eig_u(), 0.2, 1e-3);
    const auto hol = build_holonomy(f, w1, w2, grid(0.0, 0.2, 41));
    CHECK(hol.domain_fraction < 0.5);
    CHECK(hol.domain_fraction > 0.1);
    for (const auto& p : hol.pairs) CHECK(p.s1 >= 0.05 - 1e-9);

    LeafOptions far;
    far.max_len = 0.005;
    const auto none = build_holonomy(f, w1, w2, grid(0.0, 0.2, 11), far);
    CHECK(none.pairs.empty());
}

TEST_CASE("perturbed leaf: step halving, tangency, forward contraction")
{
    const auto seq = perturbed_seq();
    LineFieldEvaluator f(seq);
    const auto leaf = trace_stable_leaf(f, 0, Vec2(0.5, 0.5), 0.05);
    const auto half = trace_stable_leaf(f, 0, Vec2(0.5, 0.5), 0.05, 1, 5e-4, false);
    double haus = 0.0;
    for (std::size_t k = 0; k < leaf.points.size(); ++k)
        haus = std::max(haus, (leaf.points[k] - half.points[2 * k]).norm());
    CHECK(haus < 1e-7);
    CHECK(leaf.error < 1e-7);

    for (std::size_t k = 0; k + 1 < leaf.points.size(); k += 5) {
        const Vec2 mid = 0.5 * (leaf.points[k] + leaf.points[k + 1]);
        const Direction chord = Direction::from_vector(leaf.points[k + 1] - leaf.points[k]);
        CHECK(subspace_dist(chord, f.stable(0, mid).dir) < 1e-6);
    }

    // the far endpoint contracts towards the base at least at rate max 1/Lambda_q;
    // beyond ~12 steps the trace error (~1e-12) grows along the unstable direction
    const auto rep = validate_assumptions(seq);
    double lam = 0.0;
    for (const auto& c : rep.constants) lam = std::max(lam, 1.0 / c.lambda);
    Vec2 x = leaf.base, d = leaf.points.back() - leaf.base;
    std::vector<double> dist{d.norm()};
    for (long i = 1; i <= 12; ++i) {
        d = seq.map(i).apply_difference(x, d);
        x = seq.map(i).apply_lift(x);
        dist.push_back(d.norm());
    }
    for (std::size_t k = 1; k < dist.size(); ++k) CHECK(dist[k] < dist[k - 1]);
    const auto fit = fit_decay(dist, 0, 12);
    CHECK(fit.theta <= lam);
}

TEST_CASE("perturbed holonomy: Jacobian against the matching derivative")
{
    const auto seq = perturbed_seq();
    LineFieldEvaluator f(seq);
    const auto c = two_curves();
    for (double s : {0.05, 0.1, 0.15}) {
        const double h = 1e-4;
        const auto hol = build_holonomy(f, c.w1, c.w2, {s - h, s, s + h});
        REQUIRE(hol.pairs.size() == 3);
        CHECK(hol.monotone);
        const double fd = (hol.pairs[2].s2 - hol.pairs[0].s2) / (2 * h);
        const auto j = holonomy_jacobian(f, 0, hol.pairs[1]);
        CHECK(j.converged);
        CHECK(std::abs(fd / std::exp(j.log_jac) - 1) < 1e-5);
        CHECK(std::abs(j.log_jac) > 1e-5);  // genuinely non-trivial
    }
}

TEST_CASE("Jacobian decomposition and evolution compatibility")
{
    const auto seq = perturbed_seq();
    LineFieldEvaluator f(seq);
    const auto c = two_curves();
    const auto hol = build_holonomy(f, c.w1, c.w2, {0.06, 0.1, 0.14});
    REQUIRE(hol.pairs.size() == 3);
    CurveParams cp;
    for (const auto& p : hol.pairs) {
        for (int m : {1, 3, 6}) {
            const auto dc = jacobian_decomposition(f, c.w1, c.w2, p, m, cp);
            CHECK(dc.rel_error <= 1e-8);
        }
    }

    // T commutes with the holonomy: the evolved follower is the new match
    CurveParams big = cp;
    big.L = 1e9;
    StandardPair w2 = c.w2;
    step_pair(seq, w2, big);
    for (const auto& p : hol.pairs) {
        const Vec2 tx = seq.map(1).apply_lift(p.x);
        const Vec2 thx = tx + seq.map(1).apply_difference(p.x, p.hx - p.x);
        const auto hit = leaf_to_curve(f, 1, tx, w2, w2.arc_table(), {});
        REQUIRE(hit.found);
        CHECK((hit.point - thx).norm() < 1e-6);
    }
}

TEST_CASE("holonomy Jacobian decay and forward separation")
{
    const auto seq = perturbed_seq();
    LineFieldEvaluator f(seq);
    const auto c = two_curves();
    const auto hol = build_holonomy(f, c.w1, c.w2, grid(0.01, 0.19, 100), {}, 2);
    REQUIRE(hol.pairs.size() == 100);
    std::vector<HolonomyJacobian> jacs;
    for (const auto& p : hol.pairs) jacs.push_back(holonomy_jacobian(f, 0, p));
    const auto dec = holonomy_decay(jacs, 30);
    CHECK(dec.fit.theta < 1.0);
    CHECK(dec.fit.r2 >= 0.9);
    CHECK(dec.fit.last >= 8);
    CHECK(dec.c1 > 0.0);

    const auto rep = validate_assumptions(seq);
    double lam = 0.0;
    for (const auto& g : rep.constants) lam = std::max(lam, 1.0 / g.lambda);
    const LeafOptions lo;
    for (const auto& j : jacs)
        for (std::size_t n = 0; n < j.separation.size(); ++n)
            CHECK(j.separation[n] <= lo.max_len * std::pow(lam, static_cast<double>(n)));
}

TEST_CASE("pushforward conserves mass")
{
    SUBCASE("linear, uniform")
    {
        const auto seq = linear_seq();
        LineFieldEvaluator f(seq);
        const auto c = two_curves();
        const auto hol = build_holonomy(f, c.w1, c.w2, grid(0.02, 0.18, 81));
        std::vector<double> lj(hol.pairs.size(), 0.0);
        const auto pf = holonomy_pushforward(hol, lj, c.w1);
        for (double r : pf.rho2) CHECK(r == doctest::Approx(pf.rho2.front()).epsilon(1e-12));
        CHECK(std::abs(pf.target_mass - pf.source_mass) < 1e-12);
    }
    SUBCASE("perturbed, exp-linear density")
    {
        const auto seq = perturbed_seq();
        LineFieldEvaluator f(seq);
        auto c = two_curves();
        set_density(c.w1, [](double s) { return std::exp(2 * s); });
        const auto hol = build_holonomy(f, c.w1, c.w2, grid(0.02, 0.18, 161));
        std::vector<double> lj;
        for (const auto& p : hol.pairs) lj.push_back(holonomy_jacobian(f, 0, p).log_jac);
        const auto pf = holonomy_pushforward(hol, lj, c.w1);
        CHECK(std::abs(pf.pulled_mass / pf.source_mass - 1) < 1e-9);
        // independent quadrature on the image arc, limited by the roughness of Jh
        CHECK(std::abs(pf.target_mass / pf.source_mass - 1) < 1e-6);
    }
}

TEST_CASE("holonomy regularity")
{
    SUBCASE("linear is flat")
    {
        const auto seq = linear_seq();
        LineFieldEvaluator f(seq);
        const auto c = two_curves();
        const auto r = holonomy_regularity(f, c.w1, c.w2, 4, 9, 4, 7);
        CHECK(r.flat);
    }
    SUBCASE("perturbed")
    {
        const auto seq = perturbed_seq();
        LineFieldEvaluator f(seq);
        const auto c = two_curves();
        const auto r = holonomy_regularity(f, c.w1, c.w2, 4, 12, 8, 7);
        MESSAGE("eta_raw " << r.eta_raw << " r2 " << r.r2 << " C " << r.c_h);
        CHECK_FALSE(r.flat);
        CHECK(r.eta > 0.0);
        CHECK(r.eta <= 1.0);
        CHECK(r.r2 >= 0.8);
    }
}

TEST_CASE("holonomy is deterministic across thread counts")
{
    const auto seq = perturbed_seq();
    LineFieldEvaluator f(seq);
    const auto c = two_curves();
    const auto s1 = grid(0.01, 0.19, 40);
    const auto a = build_holonomy(f, c.w1, c.w2, s1, {}, 1);
    LineFieldEvaluator g(seq);
    const auto b = build_holonomy(g, c.w1, c.w2, s1, {}, 3);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t k = 0; k < a.pairs.size(); ++k) {
        CHECK(a.pairs[k].s2 == b.pairs[k].s2);
        CHECK(a.pairs[k].leaf_length == b.pairs[k].leaf_length);
    }
}
