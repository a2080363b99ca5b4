#include "doctest.h"

#include "anosov/map_sequence.hpp"

#include <random>

using namespace anosov;

namespace {

Mat2i cat()
{
    Mat2i a;
    a << 2, 1, 1, 1;
    return a;
}

TrigMode sin_x(double c = 1.0)
{
    TrigMode m;
    m.kx = 1;
    m.coeff = Vec2(c, 0);
    return m;
}

GuideSpec guide(const Mat2i& a, int len, int dwell)
{
    GuideSpec g;
    g.a = a;
    g.length = len;
    g.min_dwell = dwell;
    return g;
}

}  // namespace

TEST_CASE("linear cat map applies exactly")
{
    const AnosovMap t(cat(), 0.0, {});
    const TorusPoint p = t.apply({0.25, 0.5});
    CHECK(p.x() == doctest::Approx(0.0));
    CHECK(p.y() == doctest::Approx(0.75));
    CHECK(t.jacobian({0.3, 0.1}) == cat().cast<double>());
    CHECK(t.second_derivative({0.3, 0.1}, {1, 0}, {0, 1}).norm() == 0.0);
}

TEST_CASE("bad matrices are rejected")
{
    Mat2i a;
    a << 2, 0, 0, 1;
    CHECK_THROWS_AS(AnosovMap(a, 0.0, {}), std::invalid_argument);
    a << 1, 1, 0, 1;
    CHECK_THROWS_AS(AnosovMap(a, 0.0, {}), std::invalid_argument);
}

TEST_CASE("inverse round trips")
{
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    const AnosovMap lin(cat(), 0.0, {});
    const AnosovMap pert(cat(), 0.01, {sin_x()});
    double worst_lin = 0, worst_pert = 0;
    for (int i = 0; i < 1000; ++i) {
        const Vec2 p(u(rng), u(rng));
        worst_lin = std::max(worst_lin, (lin.inverse_lift(lin.apply_lift(p)) - p).norm());
        worst_pert = std::max(worst_pert, (pert.inverse_lift(pert.apply_lift(p)) - p).norm());
    }
    CHECK(worst_lin < 1e-12);
    CHECK(worst_pert < 1e-10);
}

TEST_CASE("perturbed derivative matches the analytic example and finite differences")
{
    const AnosovMap t(cat(), 0.01, {sin_x()});
    const Mat2 j = t.jacobian({0, 0});
    CHECK(j(0, 0) == doctest::Approx(2.0 + 0.0628318530718).epsilon(1e-11));
    CHECK(j(1, 0) == doctest::Approx(1.0));

    TrigMode m;
    m.kx = 1;
    m.ky = 2;
    m.coeff = Vec2(0.3, -0.7);
    m.phase = 0.4;
    const AnosovMap s(cat(), 0.02, {m, sin_x(0.5)});
    const Vec2 p(0.31, 0.77), u(0.6, 0.8), v(-0.28, 0.96);
    const double h = 1e-6;
    const Vec2 fd = (s.apply_lift(p + h * u) - s.apply_lift(p - h * u)) / (2 * h);
    CHECK((fd - s.jacobian(p) * u).norm() < 1e-8);
    const Vec2 fd2 = (s.jacobian(p + h * v) * u - s.jacobian(p - h * v) * u) / (2 * h);
    CHECK((fd2 - s.second_derivative(p, u, v)).norm() < 1e-7);
    // the cancellation-free difference agrees with a plain difference
    const Vec2 d(1e-3, -2e-3);
    CHECK((s.apply_difference(p, d) - (s.apply_lift(p + d) - s.apply_lift(p))).norm() < 1e-14);
}

TEST_CASE("eigen data of the cat map")
{
    const auto sp = hyperbolic_splitting(cat().cast<double>());
    CHECK(sp.lambda_u == doctest::Approx((3 + std::sqrt(5.0)) / 2).epsilon(1e-15));
    CHECK(sp.stable.slope() == doctest::Approx(-(1 + std::sqrt(5.0)) / 2).epsilon(1e-12));
    CHECK(sp.unstable.slope() == doctest::Approx((std::sqrt(5.0) - 1) / 2).epsilon(1e-12));
}

TEST_CASE("sequence construction")
{
    SequenceSpec s;
    s.guides.push_back(guide(cat(), 50, 30));
    const MapSequence seq = build_sequence(s);
    CHECK(seq.length() == 50);
    for (int i = 1; i <= 50; ++i) CHECK(seq.map(i).is_linear());
    CHECK(seq.guide_of_map(0) == 0);
    CHECK(seq.guide_of_map(80) == 0);

    SequenceSpec bad;
    bad.guides.push_back(guide(cat(), 5, 30));
    CHECK_THROWS_AS(build_sequence(bad), std::invalid_argument);

    SequenceSpec drift;
    drift.guides.push_back(guide(cat(), 30, 30));
    drift.guides[0].radius = 0.02;
    drift.guides[0].generator.kind = GeneratorKind::Drift;
    drift.guides[0].generator.modes = {sin_x()};
    drift.guides[0].generator.amplitude = 0.0;
    drift.guides[0].generator.amplitude_end = 0.05;
    CHECK_THROWS_AS(build_sequence(drift), std::invalid_argument);
}

TEST_CASE("two-guide perturbed sequence validates on a 64 grid")
{
    Mat2i a2 = cat() * cat();
    SequenceSpec s;
    s.seed = 4;
    for (const Mat2i& a : {cat(), a2}) {
        GuideSpec g = guide(a, 30, 30);
        g.radius = 0.02;
        g.generator.kind = GeneratorKind::RandomWalk;
        g.generator.modes = {sin_x(), TrigMode{0, 1, Vec2(0.0, 1.0), 0.3}};
        g.generator.amplitude = 0.01;
        g.generator.step = 0.003;
        s.guides.push_back(g);
    }
    const MapSequence seq = build_sequence(s);
    CHECK(seq.length() == 60);
    ValidationOptions opt;
    opt.grid = 64;
    const ValidationReport rep = validate_assumptions(seq, opt);
    CHECK(rep.pass());
    CHECK(rep.check("A3").samples > 0);
    CHECK(rep.min_cone_margin > 0);
    for (const auto& c : rep.constants) {
        CHECK(c.lambda > 1.0);
        CHECK(c.c > 0.0);
        CHECK(c.c < 1.0);
    }
}

TEST_CASE("linear validation reproduces eigen data")
{
    SequenceSpec s;
    s.guides.push_back(guide(cat(), 30, 30));
    ValidationOptions opt;
    opt.grid = 32;
    const ValidationReport rep = validate_assumptions(build_sequence(s), opt);
    CHECK(rep.pass());
    CHECK(std::abs(rep.constants[0].lambda - (3 + std::sqrt(5.0)) / 2) < 1e-6);
    // exact cone contraction of A: the boundary of the a=0.2 cone maps to
    // width 0.2 / lambda^2, relative margin computed in closed form
    const double lam = (3 + std::sqrt(5.0)) / 2;
    const double a = 0.2;
    const double w = a / (lam * lam);
    const double rel = (a - w) / std::sqrt(1 + w * w);
    CHECK(rep.min_cone_margin == doctest::Approx(rel).epsilon(1e-9));
}

TEST_CASE("alternating A and its inverse fails with a witness")
{
    SequenceSpec s;
    const Mat2i inv = cat().cast<double>().inverse().array().round().cast<int>().matrix();
    for (int i = 0; i < 6; ++i) s.guides.push_back(guide(i % 2 ? inv : cat(), 1, 1));
    ValidationOptions opt;
    opt.grid = 8;
    const ValidationReport rep = validate_assumptions(build_sequence(s), opt);
    CHECK_FALSE(rep.pass());
    CHECK_FALSE(rep.check("A3").pass);
    CHECK(rep.check("A3").witness_time >= 1);
    CHECK(rep.check("A3").witness_vector.norm() > 0);
}

TEST_CASE("cocycle products")
{
    SequenceSpec s;
    GuideSpec g = guide(cat(), 20, 10);
    g.radius = 0.02;
    g.generator.kind = GeneratorKind::RandomWalk;
    g.generator.modes = {sin_x(), TrigMode{1, 1, Vec2(0.5, 0.5), 0.1}};
    g.generator.amplitude = 0.005;
    g.generator.step = 0.002;
    s.guides.push_back(g);
    s.seed = 9;
    const MapSequence seq = build_sequence(s);
    const Vec2 x(0.21, 0.64);
    const Mat2 j = compose_jacobian(seq, x, 3, 7);  // det of a longer product loses ~|J|^2 eps
    double det = 1;
    Vec2 p = seq.compose(x, 1, 2);
    CHECK((compose_jacobian(seq, x, 1, 1) - seq.map(1).jacobian(x)).norm() < 1e-15);
    p = x;
    for (int i = 3; i <= 7; ++i) {
        det *= seq.map(i).jacobian(p).determinant();
        p = seq.map(i).apply_lift(p);
    }
    CHECK(std::abs(j.determinant() / det - 1) < 1e-10);
    CHECK_THROWS_AS(compose_jacobian(seq, x, 0, 3), std::out_of_range);
    CHECK_THROWS_AS(compose_jacobian(seq, x, 5, 3), std::out_of_range);

    SequenceSpec lin;
    lin.guides.push_back(guide(cat(), 10, 1));
    const Mat2 a = cat().cast<double>();
    CHECK((compose_jacobian(build_sequence(lin), x, 2, 5) - a * a * a * a).norm() < 1e-12);
}

TEST_CASE("spec json round trip")
{
    SequenceSpec s;
    s.guides.push_back(guide(cat(), 12, 4));
    s.guides[0].generator.kind = GeneratorKind::RandomWalk;
    s.guides[0].generator.modes = {sin_x()};
    s.seed = 77;
    const auto j = sequence_spec_to_json(s);
    const SequenceSpec t = sequence_spec_from_json(j);
    CHECK(t.seed == 77);
    CHECK(t.guides[0].length == 12);
    CHECK(t.guides[0].generator.kind == GeneratorKind::RandomWalk);
    CHECK(sequence_spec_to_json(t) == j);
}
