#include "anosov/experiments.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <stdexcept>

namespace anosov {

namespace {


std::complex<double> unit_phase(double t)
{
    return {std::cos(kTwoPi * t), std::sin(kTwoPi * t)};
}

// Mean of exp(2 pi i k t) over [t0, t0 + h].
std::complex<double> interval_mean(long k, double t0, double h)
{
    if (k == 0) return 1.0;
    const double z = M_PI * static_cast<double>(k) * h;
    return unit_phase(static_cast<double>(k) * (t0 + 0.5 * h)) * (std::sin(z) / z);
}

struct GaussRule {
    std::vector<double> x;  // on [-1, 1]
    std::vector<double> w;
};

GaussRule gauss_legendre(int order)
{
    GaussRule g;
    g.x.resize(order);
    g.w.resize(order);
    for (int i = 0; i < order; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= order; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = order * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        g.x[order - 1 - i] = x;
        g.w[order - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    return g;
}

Vec2 wrap(const Vec2& x) { return Vec2(x[0] - std::floor(x[0]), x[1] - std::floor(x[1])); }

bool sequence_is_linear(const MapSequence& seq, int n_max)
{
    for (int n = 1; n <= n_max; ++n)
        if (!seq.map(n).is_linear()) return false;
    return true;
}

}  // namespace

double TrigPoly::operator()(const Vec2& x) const
{
    double v = c0;
    for (const auto& t : terms) {
        const double ph = kTwoPi * (t.kx * x[0] + t.ky * x[1]);
        v += t.a * std::cos(ph) + t.b * std::sin(ph);
    }
    return v;
}

Vec2 TrigPoly::gradient(const Vec2& x) const
{
    Vec2 g = Vec2::Zero();
    for (const auto& t : terms) {
        const double ph = kTwoPi * (t.kx * x[0] + t.ky * x[1]);
        g += kTwoPi * (-t.a * std::sin(ph) + t.b * std::cos(ph)) * Vec2(t.kx, t.ky);
    }
    return g;
}

double TrigPoly::abs_bound() const
{
    double s = std::abs(c0);
    for (const auto& t : terms) s += std::abs(t.a) + std::abs(t.b);
    return s;
}

double TrigPoly::lower_bound() const
{
    double s = c0;
    for (const auto& t : terms) s -= std::abs(t.a) + std::abs(t.b);
    return s;
}

double TrigPoly::lipschitz() const
{
    double s = 0.0;
    for (const auto& t : terms) s += kTwoPi * std::hypot(t.kx, t.ky) * std::hypot(t.a, t.b);
    return s;
}

double TrigPoly::box_mean(double x0, double y0, double h) const
{
    double v = c0;
    for (const auto& t : terms) {
        const std::complex<double> e = interval_mean(t.kx, x0, h) * interval_mean(t.ky, y0, h);
        v += t.a * e.real() + t.b * e.imag();
    }
    return v;
}

std::complex<double> TrigPoly::coefficient(long kx, long ky) const
{
    std::complex<double> c = (kx == 0 && ky == 0) ? c0 : 0.0;
    for (const auto& t : terms) {
        if (t.kx == 0 && t.ky == 0) {
            if (kx == 0 && ky == 0) c += t.a;
            continue;
        }
        if (kx == t.kx && ky == t.ky) c += std::complex<double>(0.5 * t.a, -0.5 * t.b);
        if (kx == -t.kx && ky == -t.ky) c += std::complex<double>(0.5 * t.a, 0.5 * t.b);
    }
    return c;
}

int TrigPoly::max_frequency() const
{
    int m = 0;
    for (const auto& t : terms) m = std::max({m, std::abs(t.kx), std::abs(t.ky)});
    return m;
}

void check_density(const TrigPoly& rho)
{
    if (std::abs(rho.c0 - 1.0) > 1e-10) throw std::invalid_argument("density: mean must be 1");
    for (const auto& t : rho.terms)
        if (t.kx == 0 && t.ky == 0 && t.a != 0.0)
            throw std::invalid_argument("density: constant term must sit in c0");
    if (rho.lower_bound() > 0) return;
    const int g = 256;
    for (int i = 0; i < g; ++i)
        for (int j = 0; j < g; ++j)
            if (rho(Vec2((i + 0.5) / g, (j + 0.5) / g)) <= 0)
                throw std::invalid_argument("density: not positive on the check grid");
}

MCSeries pushforward_integral_mc(const MapSequence& seq, const TrigPoly& rho, const TrigPoly& f,
                                 int n_max, long samples, std::uint64_t seed, int threads)
{
    if (samples < 2) throw std::invalid_argument("pushforward_integral_mc: need two samples");
    constexpr long kBlock = 4096;
    const long blocks = (samples + kBlock - 1) / kBlock;
    const double bound = rho.abs_bound();
    struct Acc {
        std::vector<double> s, ss;
        long proposals = 0;
    };
    std::vector<Acc> acc(blocks);
    parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
        Acc& a = acc[b];
        a.s.assign(n_max + 1, 0.0);
        a.ss.assign(n_max + 1, 0.0);
        std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                         static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
        std::mt19937_64 rng(ss);
        std::uniform_real_distribution<double> uni(0.0, 1.0);
        const long count = std::min(kBlock, samples - static_cast<long>(b) * kBlock);
        for (long m = 0; m < count;) {
            Vec2 x(uni(rng), uni(rng));
            ++a.proposals;
            if (uni(rng) * bound >= rho(x)) continue;
            ++m;
            for (int n = 0; n <= n_max; ++n) {
                if (n > 0) x = wrap(seq.map(n).apply_lift(x));
                const double v = f(x);
                a.s[n] += v;
                a.ss[n] += v * v;
            }
        }
    });
    MCSeries out;
    out.samples = samples;
    out.mean.assign(n_max + 1, 0.0);
    out.stderr_.assign(n_max + 1, 0.0);
    std::vector<double> s(n_max + 1, 0.0), ss(n_max + 1, 0.0);
    for (const auto& a : acc) {
        out.proposals += a.proposals;
        for (int n = 0; n <= n_max; ++n) {
            s[n] += a.s[n];
            ss[n] += a.ss[n];
        }
    }
    const double m = static_cast<double>(samples);
    for (int n = 0; n <= n_max; ++n) {
        out.mean[n] = s[n] / m;
        const double var = std::max(0.0, (ss[n] - m * out.mean[n] * out.mean[n]) / (m - 1));
        out.stderr_[n] = std::sqrt(var / m);
    }
    return out;
}

double family_integral(const StandardFamily& fam, const TrigPoly& f)
{
    static const GaussRule g = gauss_legendre(5);
    double total = 0.0;
    for (std::size_t k = 0; k < fam.pairs.size(); ++k) {
        const StandardPair& p = fam.pairs[k];
        double s = 0.0;
        for (std::size_t i = 0; i < p.segments(); ++i) {
            const double lr0 = p.nodes[i].log_rho, lr1 = p.nodes[i + 1].log_rho;
            double num = 0.0, den = 0.0;
            for (std::size_t q = 0; q < g.x.size(); ++q) {
                const double t = 0.5 * (g.x[q] + 1.0);
                const double w = g.w[q] * std::exp(t * (lr1 - lr0)) * p.derivative(i, t).norm();
                num += w * f(p.position(i, t));
                den += w;
            }
            s += p.mass[i] * num / den;
        }
        total += fam.weights[k] * s;
    }
    return total;
}

std::vector<double> pushforward_integral_family(const MapSequence& seq, StandardFamily fam,
                                                const TrigPoly& f, int n_max,
                                                const CurveParams& cp, const FamilyCap& cap,
                                                int threads)
{
    std::vector<double> out{family_integral(fam, f)};
    for (int n = 1; n <= n_max; ++n) {
        evolve_family(seq, fam, fam.time + 1, cp, cap, threads);
        out.push_back(family_integral(fam, f));
    }
    return out;
}

double slice_window(double u)
{
    auto step = [](double t) {
        if (t <= 0) return 0.0;
        if (t >= 1) return 1.0;
        const double a = std::exp(-1.0 / t), b = std::exp(-1.0 / (1.0 - t));
        return a / (a + b);
    };
    return step(u + 0.5) * (1.0 - step(u - 0.5));
}

SliceQuadrature slice_family_quadrature(const MapSequence& seq, const std::vector<TrigPoly>& rhos,
                                        const TrigPoly& f, int n_max,
                                        const SliceQuadratureOptions& opt, int threads)
{
    if (opt.slices < 2 || opt.slices % 2) throw std::invalid_argument("slices must be even and >= 2");
    const Vec2 eu = seq.guide(seq.guide_of_map(1)).split.unstable.unit();
    const bool by_x = std::abs(eu[0]) >= std::abs(eu[1]);
    const double slope = by_x ? eu[1] / eu[0] : eu[0] / eu[1];
    const Vec2 tangent = by_x ? Vec2(1.0, slope) : Vec2(slope, 1.0);
    auto point = [&](double u, double c) { return by_x ? Vec2(u, c + slope * u) : Vec2(c + slope * u, u); };

    int panels = opt.panels;
    if (panels <= 0) {
        double stretch = 1.0;
        if (n_max > 0) {
            for (int j = 0; j < 8; ++j)
                for (int i = 0; i < 32; ++i) {
                    const Vec2 x = point(-0.5 + 2.0 * (i + 0.5) / 32, (j + 0.5) / 8);
                    stretch = std::max(stretch, (compose_jacobian(seq, x, 1, n_max) * tangent).norm());
                }
        }
        double kmax = 0.0;
        for (const auto& t : f.terms) kmax = std::max(kmax, std::hypot(t.kx, t.ky));
        const double rate = kTwoPi * std::max(kmax, 1.0) * stretch;
        panels = static_cast<int>(std::ceil(2.0 * rate / opt.phase_per_panel));
        panels = std::max(16, panels + (panels % 2));
    }
    if (panels % 2) ++panels;

    const GaussRule g = gauss_legendre(opt.order);
    const std::size_t nm = rhos.size();
    const int K = opt.slices;
    // per slice: fine and coarse sums [measure][n], plus mass sums
    struct SliceSum {
        std::vector<std::vector<double>> fine, coarse;
        std::vector<double> mass;
    };
    std::vector<SliceSum> sums(K);
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t j) {
        SliceSum& s = sums[j];
        s.fine.assign(nm, std::vector<double>(n_max + 1, 0.0));
        s.coarse = s.fine;
        s.mass.assign(nm, 0.0);
        const double c = (j + 0.5) / K;
        std::vector<double> rv(nm);
        auto run = [&](int np, std::vector<std::vector<double>>& acc, bool mass) {
            const double h = 2.0 / np;
            for (int p = 0; p < np; ++p) {
                const double a = -0.5 + h * p;
                for (std::size_t q = 0; q < g.x.size(); ++q) {
                    const double u = a + 0.5 * h * (g.x[q] + 1.0);
                    const double w = 0.5 * h * g.w[q] * slice_window(u);
                    if (w == 0.0) continue;
                    Vec2 x = point(u, c);
                    for (std::size_t m = 0; m < nm; ++m) {
                        rv[m] = w * rhos[m](x);
                        if (mass) s.mass[m] += rv[m];
                    }
                    for (int n = 0; n <= n_max; ++n) {
                        if (n > 0) x = wrap(seq.map(n).apply_lift(x));
                        const double fv = f(x);
                        for (std::size_t m = 0; m < nm; ++m) acc[m][n] += rv[m] * fv;
                    }
                }
            }
        };
        run(panels, s.fine, true);
        if (j % 2 == 0) run(panels / 2, s.coarse, false);
    });

    SliceQuadrature out;
    out.panels = panels;
    out.slices = K;
    out.integral.assign(nm, std::vector<double>(n_max + 1, 0.0));
    out.error = out.integral;
    out.mass_error.assign(nm, 0.0);
    std::vector<std::vector<double>> coarse = out.integral;
    for (int j = 0; j < K; ++j)
        for (std::size_t m = 0; m < nm; ++m) {
            out.mass_error[m] += sums[j].mass[m] / K;
            for (int n = 0; n <= n_max; ++n) {
                out.integral[m][n] += sums[j].fine[m][n] / K;
                if (j % 2 == 0) coarse[m][n] += sums[j].coarse[m][n] * 2.0 / K;
            }
        }
    for (std::size_t m = 0; m < nm; ++m) {
        out.mass_error[m] = std::abs(out.mass_error[m] - 1.0);
        for (int n = 0; n <= n_max; ++n)
            out.error[m][n] = std::abs(out.integral[m][n] - coarse[m][n]);
    }
    return out;
}

std::vector<double> UlamMatrix::row_sums() const
{
    std::vector<double> s(static_cast<std::size_t>(n) * n, 0.0);
    for (std::size_t r = 0; r < s.size(); ++r)
        for (std::int64_t k = row_start[r]; k < row_start[r + 1]; ++k) s[r] += value[k];
    return s;
}

std::vector<double> UlamMatrix::apply(const std::vector<double>& mass) const
{
    std::vector<double> out(mass.size(), 0.0);
    for (std::size_t r = 0; r < mass.size(); ++r) {
        const double m = mass[r];
        if (m == 0.0) continue;
        for (std::int64_t k = row_start[r]; k < row_start[r + 1]; ++k) out[col[k]] += m * value[k];
    }
    return out;
}

UlamMatrix ulam_matrix(const AnosovMap& t, int n, int sub, int threads)
{
    if (n < 1 || sub < 1) throw std::invalid_argument("ulam_matrix: bad grid");
    const std::size_t cells = static_cast<std::size_t>(n) * n;
    const std::size_t per = static_cast<std::size_t>(sub) * sub;
    std::vector<std::int32_t> target(cells * per);
    const double h = 1.0 / n;
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t iy) {
        for (int ix = 0; ix < n; ++ix) {
            const std::size_t row = iy * n + ix;
            for (int a = 0; a < sub; ++a)
                for (int b = 0; b < sub; ++b) {
                    const Vec2 x((ix + (a + 0.5) / sub) * h, (iy + (b + 0.5) / sub) * h);
                    const Vec2 y = wrap(t.apply_lift(x));
                    const int jx = std::min(n - 1, static_cast<int>(y[0] * n));
                    const int jy = std::min(n - 1, static_cast<int>(y[1] * n));
                    target[row * per + a * sub + b] = jy * n + jx;
                }
        }
    });
    UlamMatrix m;
    m.n = n;
    m.sub = sub;
    m.row_start.assign(cells + 1, 0);
    m.col.reserve(cells * 4);
    m.value.reserve(cells * 4);
    const double unit = 1.0 / static_cast<double>(per);
    std::vector<std::int32_t> buf(per);
    for (std::size_t r = 0; r < cells; ++r) {
        std::copy(target.begin() + r * per, target.begin() + (r + 1) * per, buf.begin());
        std::sort(buf.begin(), buf.end());
        for (std::size_t k = 0; k < per;) {
            std::size_t e = k;
            while (e < per && buf[e] == buf[k]) ++e;
            m.col.push_back(buf[k]);
            m.value.push_back(static_cast<double>(e - k) * unit);
            k = e;
        }
        m.row_start[r + 1] = static_cast<std::int64_t>(m.col.size());
    }
    return m;
}

std::vector<double> ulam_discretize(const TrigPoly& rho, int n)
{
    const double h = 1.0 / n;
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) m[iy * n + ix] = h * h * rho.box_mean(ix * h, iy * h, h);
    return m;
}

namespace {

std::vector<double> cell_means(const TrigPoly& f, int n)
{
    const double h = 1.0 / n;
    std::vector<double> m(static_cast<std::size_t>(n) * n);
    for (int iy = 0; iy < n; ++iy)
        for (int ix = 0; ix < n; ++ix) m[iy * n + ix] = f.box_mean(ix * h, iy * h, h);
    return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

double ulam_integral(const std::vector<double>& mass, const TrigPoly& f, int n)
{
    return dot(mass, cell_means(f, n));
}

UlamRun build_ulam(const MapSequence& seq, const std::vector<TrigPoly>& rhos, const TrigPoly& f,
                   int n, int sub, int n_max, int threads)
{
    if (n > 1024) throw std::invalid_argument("build_ulam: N above 1024");
    const std::vector<double> fm = cell_means(f, n);
    UlamRun out;
    std::vector<std::vector<double>> mass;
    for (const auto& r : rhos) mass.push_back(ulam_discretize(r, n));
    out.integral.assign(rhos.size(), std::vector<double>(n_max + 1, 0.0));
    out.mass_drift.assign(n_max + 1, 0.0);
    auto record = [&](int step) {
        for (std::size_t m = 0; m < mass.size(); ++m) {
            out.integral[m][step] = dot(mass[m], fm);
            double s = 0.0;
            for (double v : mass[m]) s += v;
            out.mass_drift[step] = std::max(out.mass_drift[step], std::abs(s - 1.0));
        }
    };
    record(0);
    for (int step = 1; step <= n_max; ++step) {
        const UlamMatrix p = ulam_matrix(seq.map(step), n, sub, threads);
        for (double s : p.row_sums()) out.worst_row_defect = std::max(out.worst_row_defect, std::abs(s - 1.0));
        for (auto& m : mass) m = p.apply(m);
        record(step);
    }
    return out;
}

double fourier_pushforward_integral(const std::vector<Mat2i>& maps, const TrigPoly& rho,
                                    const TrigPoly& f)
{
    std::vector<std::pair<std::array<long, 2>, std::complex<double>>> freqs;
    freqs.push_back({{0, 0}, f.coefficient(0, 0)});
    for (const auto& t : f.terms) {
        if (t.kx == 0 && t.ky == 0) continue;
        freqs.push_back({{t.kx, t.ky}, {0.5 * t.a, -0.5 * t.b}});
        freqs.push_back({{-t.kx, -t.ky}, {0.5 * t.a, 0.5 * t.b}});
    }
    std::complex<double> total = 0.0;
    for (const auto& [k, c] : freqs) {
        if (c == 0.0) continue;
        long v0 = k[0], v1 = k[1];
        for (auto it = maps.rbegin(); it != maps.rend(); ++it) {
            // v <- A^T v
            const Mat2i& a = *it;
            long r0, r1, p, q;
            if (__builtin_mul_overflow(static_cast<long>(a(0, 0)), v0, &p) ||
                __builtin_mul_overflow(static_cast<long>(a(1, 0)), v1, &q) ||
                __builtin_add_overflow(p, q, &r0) ||
                __builtin_mul_overflow(static_cast<long>(a(0, 1)), v0, &p) ||
                __builtin_mul_overflow(static_cast<long>(a(1, 1)), v1, &q) ||
                __builtin_add_overflow(p, q, &r1))
                throw std::overflow_error("fourier_pushforward_integral: frequency overflow");
            v0 = r0;
            v1 = r1;
        }
        total += c * rho.coefficient(-v0, -v1);
    }
    return total.real();
}

DecayReport memory_loss_experiment(const MapSequence& seq, const MemoryLossConfig& cfg,
                                   const std::vector<GuideConstants>& constants)
{
    check_density(cfg.rho1);
    check_density(cfg.rho2);
    const int nn = cfg.n_max + 1;
    const TrigPoly& f = cfg.f.f;
    DecayReport rep;
    double sigma_max = 0.0;

    auto add = [&](MethodSeries m) {
        m.delta.resize(nn);
        for (int n = 0; n < nn; ++n) m.delta[n] = std::abs(m.signed_delta[n]);
        rep.methods.push_back(std::move(m));
    };

    if (cfg.use_family) {
        const auto q = slice_family_quadrature(seq, {cfg.rho1, cfg.rho2}, f, cfg.n_max, cfg.slices,
                                               cfg.threads);
        MethodSeries m;
        m.name = "family";
        const double mass_floor = (q.mass_error[0] + q.mass_error[1]) * f.abs_bound();
        for (int n = 0; n < nn; ++n) {
            m.signed_delta.push_back(q.integral[0][n] - q.integral[1][n]);
            m.floor.push_back(q.error[0][n] + q.error[1][n] + mass_floor + 1e-15);
        }
        add(std::move(m));
    }
    if (cfg.use_mc) {
        const auto a = pushforward_integral_mc(seq, cfg.rho1, f, cfg.n_max, cfg.mc_samples, cfg.seed,
                                               cfg.threads);
        // Common random numbers: identical measures give identical estimates.
        const auto b = pushforward_integral_mc(seq, cfg.rho2, f, cfg.n_max, cfg.mc_samples, cfg.seed,
                                               cfg.threads);
        MethodSeries m;
        m.name = "mc";
        for (int n = 0; n < nn; ++n) {
            m.signed_delta.push_back(a.mean[n] - b.mean[n]);
            const double se = std::hypot(a.stderr_[n], b.stderr_[n]);
            m.stderr_.push_back(se);
            m.floor.push_back(se);
            sigma_max = std::max(sigma_max, se);
        }
        add(std::move(m));
    }
    if (cfg.use_ulam) {
        const auto u = build_ulam(seq, {cfg.rho1, cfg.rho2}, f, cfg.ulam_n, cfg.ulam_sub, cfg.n_max,
                                  cfg.threads);
        MethodSeries m;
        m.name = "ulam";
        for (int n = 0; n < nn; ++n) {
            m.signed_delta.push_back(u.integral[0][n] - u.integral[1][n]);
            m.floor.push_back(2.0 / cfg.ulam_n);
        }
        add(std::move(m));
    }
    const bool linear = sequence_is_linear(seq, cfg.n_max);
    if (linear) {
        MethodSeries m;
        m.name = "fourier";
        std::vector<Mat2i> maps;
        for (int n = 0; n < nn; ++n) {
            if (n > 0) maps.push_back(seq.map(n).matrix());
            m.signed_delta.push_back(fourier_pushforward_integral(maps, cfg.rho1, f) -
                                     fourier_pushforward_integral(maps, cfg.rho2, f));
            m.floor.push_back(0.0);
        }
        add(std::move(m));
    }
    if (rep.methods.empty()) throw std::invalid_argument("memory_loss_experiment: no method selected");

    for (auto& m : rep.methods) {
        int n = 0;
        while (n < nn && !(m.delta[n] > cfg.floor_factor * m.floor[n])) ++n;
        if (n < nn) {
            m.window_first = n;
            while (n < nn && m.delta[n] > cfg.floor_factor * m.floor[n]) m.window_last = n++;
        }
        if (m.window_first >= 0 && m.window_last - m.window_first + 1 >= cfg.min_points) {
            try {
                m.fit = fit_decay(m.delta, m.window_first, m.window_last, cfg.min_points);
                m.fitted = true;
            } catch (const std::exception& e) {
                m.fit_error = e.what();
            }
        } else {
            m.fit_error = "noise floor reached before " + std::to_string(cfg.min_points) +
                          " usable points";
        }
    }

    // Most accurate method decides flatness: exact Fourier, else the family quadrature.
    int ref = 0;
    for (std::size_t i = 0; i < rep.methods.size(); ++i)
        if (rep.methods[i].name == "fourier") ref = static_cast<int>(i);
    if (!linear)
        for (std::size_t i = 0; i < rep.methods.size(); ++i)
            if (rep.methods[i].name == "family") ref = static_cast<int>(i);
    rep.flat = true;
    for (int n = 1; n < nn; ++n)
        if (rep.methods[ref].delta[n] > cfg.floor_factor * rep.methods[ref].floor[n]) rep.flat = false;

    for (std::size_t i = 0; i < rep.methods.size(); ++i) {
        const auto& m = rep.methods[i];
        if (!m.fitted) continue;
        if (rep.primary < 0 || m.fit.points > rep.methods[rep.primary].fit.points)
            rep.primary = static_cast<int>(i);
    }
    const int src = rep.primary >= 0 ? rep.primary : ref;
    if (rep.primary >= 0) rep.fit = rep.methods[rep.primary].fit;
    rep.window_first = rep.methods[src].window_first;
    rep.window_last = rep.methods[src].window_last;

    // Pairwise agreement on the window (everywhere when there is none).
    const int first = rep.window_first >= 0 ? rep.window_first : 0;
    const int last = rep.window_first >= 0 ? rep.window_last : nn - 1;
    for (std::size_t a = 0; a < rep.methods.size(); ++a)
        for (std::size_t b = a + 1; b < rep.methods.size(); ++b)
            for (int n = first; n <= last; ++n) {
                double se = 0.0;
                for (const auto* m : {&rep.methods[a], &rep.methods[b]})
                    if (!m->stderr_.empty()) se = std::max(se, m->stderr_[n]);
                const double tol = std::max(3.0 * se, 2.0 / cfg.ulam_n);
                const double d = std::abs(rep.methods[a].signed_delta[n] - rep.methods[b].signed_delta[n]);
                rep.agreement = std::max(rep.agreement, d / tol);
            }
    rep.agree = rep.agreement <= 1.0;

    if (rep.primary >= 0) {
        rep.envelope_ok = true;
        const auto& m = rep.methods[rep.primary];
        for (int n = rep.window_first; n <= rep.window_last; ++n)
            if (1.5 * rep.fit.c * std::pow(rep.fit.theta, n) < m.delta[n]) rep.envelope_ok = false;
    }

    double lambda = 0.0;
    if (!constants.empty()) {
        for (const auto& c : constants) lambda = std::max(lambda, 1.0 / c.lambda);
    } else {
        for (int q = 0; q < seq.num_guides(); ++q)
            lambda = std::max(lambda, 1.0 / seq.guide(q).split.lambda_u);
    }
    rep.reference_rate = std::pow(lambda, cfg.f.gamma / 2.0);

    const bool decays = rep.primary >= 0 && rep.fit.theta < 1.0 && rep.fit.r2 >= cfg.r2_min;
    rep.pass = rep.agree && (rep.flat || decays);
    if (!rep.agree) rep.verdict = "methods disagree";
    else if (rep.flat) rep.verdict = "flat: Delta_n vanishes for n >= 1 (super-exponential)";
    else if (rep.primary < 0) rep.verdict = "window too short: rerun with more samples";
    else if (decays) rep.verdict = "exponential decay";
    else rep.verdict = "no exponential fit";
    return rep;
}

}  // namespace anosov
