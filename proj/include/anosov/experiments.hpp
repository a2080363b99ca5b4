#pragma once

// Memory-loss experiments: Monte Carlo, slice-family quadrature and Ulam
// estimates of Delta_n, with an exact Fourier control for linear sequences.

#include "anosov/curves.hpp"

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace anosov {

/// a cos(2 pi k.x) + b sin(2 pi k.x)
struct TrigTerm {
    int kx = 0;
    int ky = 0;
    double a = 0.0;
    double b = 0.0;
};

struct TrigPoly {
    double c0 = 0.0;
    std::vector<TrigTerm> terms;

    double operator()(const Vec2& x) const;
    Vec2 gradient(const Vec2& x) const;
    /// |c0| + sum(|a| + |b|), an upper bound of |p|.
    double abs_bound() const;
    /// Lower bound c0 - sum(|a| + |b|).
    double lower_bound() const;
    /// Lipschitz constant bound sum 2 pi |k| sqrt(a^2 + b^2).
    double lipschitz() const;
    double integral() const { return c0; }
    /// Exact mean over the box [x0, x0 + h] x [y0, y0 + h].
    double box_mean(double x0, double y0, double h) const;
    /// Complex Fourier coefficient at frequency (kx, ky).
    std::complex<double> coefficient(long kx, long ky) const;
    int max_frequency() const;
};

/// Probability density: positive trig polynomial with c0 = 1.
/// Throws std::invalid_argument otherwise (positivity is checked by the
/// analytic lower bound, or on a 256^2 grid when that bound is not positive).
void check_density(const TrigPoly& rho);

struct Observable {
    TrigPoly f;
    double gamma = 1.0;
    /// |f|_gamma; filled from the analytic Lipschitz bound when zero.
    double holder = 0.0;
};

/// Monte Carlo means of f(T_n x), x ~ rho by rejection sampling, n = 0..n_max.
/// Samples are drawn in fixed blocks, each with its own seeded generator, so the
/// result does not depend on `threads`.
struct MCSeries {
    std::vector<double> mean;
    std::vector<double> stderr_;
    long samples = 0;
    long proposals = 0;
};
MCSeries pushforward_integral_mc(const MapSequence& seq, const TrigPoly& rho, const TrigPoly& f,
                                 int n_max, long samples, std::uint64_t seed, int threads = 1);

/// Quadrature of f against a standard family (Gauss points per segment, density
/// interpolated from the nodes, segment masses as weights).
double family_integral(const StandardFamily& fam, const TrigPoly& f);

/// Evolves the family and integrates f at n = 0..n_max (family time 0).
std::vector<double> pushforward_integral_family(const MapSequence& seq, StandardFamily fam,
                                                const TrigPoly& f, int n_max,
                                                const CurveParams& cp, const FamilyCap& cap = {},
                                                int threads = 1);

/// The density measure split into straight slices along the unstable direction
/// of the first guide, x = (u, c + m u), with a smooth window psi(u) on
/// [-1/2, 3/2] (sum over integer shifts equal to 1) and c on a uniform grid.
/// Each slice is integrated by pulling f o T_n back along the slice, panel by
/// panel with Gauss-Legendre points. Both densities share the slice points.
struct SliceQuadratureOptions {
    int slices = 32;
    int order = 8;
    /// Panels per slice; 0 picks them from the measured stretch at n_max.
    int panels = 0;
    /// Target phase change of f o T_n per panel (radians) for the automatic choice.
    double phase_per_panel = 3.0;
};

struct SliceQuadrature {
    std::vector<std::vector<double>> integral;  // [measure][n]
    /// |full - coarse| per n, the coarse rule using every other slice and half the panels.
    std::vector<std::vector<double>> error;
    std::vector<double> mass_error;  // |integral of rho - 1| per measure
    int panels = 0;
    int slices = 0;
};
SliceQuadrature slice_family_quadrature(const MapSequence& seq, const std::vector<TrigPoly>& rhos,
                                        const TrigPoly& f, int n_max,
                                        const SliceQuadratureOptions& opt = {}, int threads = 1);

/// Smooth window with sum_k psi(u + k) = 1, supported on [-1/2, 3/2].
double slice_window(double u);

/// Sparse Ulam matrix of one map on the N x N grid, s^2 subsamples per cell.
struct UlamMatrix {
    int n = 0;
    int sub = 0;
    std::vector<std::int64_t> row_start;  // CSR, size n^2 + 1
    std::vector<std::int32_t> col;
    std::vector<double> value;

    std::vector<double> row_sums() const;
    /// Mass vector pushed forward (new[j] = sum_i old[i] P_ij).
    std::vector<double> apply(const std::vector<double>& mass) const;
};
UlamMatrix ulam_matrix(const AnosovMap& t, int n, int sub, int threads = 1);

/// Cell masses of rho (exact box integrals).
std::vector<double> ulam_discretize(const TrigPoly& rho, int n);
/// sum_cells mass * (exact cell mean of f).
double ulam_integral(const std::vector<double>& mass, const TrigPoly& f, int n);

struct UlamRun {
    std::vector<std::vector<double>> integral;  // [measure][n]
    std::vector<double> mass_drift;             // |sum mass - 1| per n (worst measure)
    double worst_row_defect = 0.0;              // max |row sum - 1|
};
UlamRun build_ulam(const MapSequence& seq, const std::vector<TrigPoly>& rhos, const TrigPoly& f,
                   int n, int sub, int n_max, int threads = 1);

/// Exact integral of f o (A_n ... A_1) against rho for linear maps, by Fourier
/// bookkeeping. Throws std::overflow_error if a frequency leaves int64.
double fourier_pushforward_integral(const std::vector<Mat2i>& maps, const TrigPoly& rho,
                                    const TrigPoly& f);

struct MemoryLossConfig {
    TrigPoly rho1;
    TrigPoly rho2;
    Observable f;
    int n_max = 8;
    bool use_mc = true;
    bool use_family = true;
    bool use_ulam = true;
    long mc_samples = 1L << 20;
    int ulam_n = 512;
    int ulam_sub = 4;
    SliceQuadratureOptions slices;
    double floor_factor = 10.0;
    int min_points = 5;
    double r2_min = 0.95;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct MethodSeries {
    std::string name;
    std::vector<double> signed_delta;  // integral for rho1 minus rho2
    std::vector<double> delta;         // |signed_delta|
    std::vector<double> floor;         // noise floor per n
    std::vector<double> stderr_;       // Monte Carlo only
    /// First run of consecutive n with delta > floor_factor * floor ([-1, -1] if none).
    int window_first = -1;
    int window_last = -1;
    bool fitted = false;
    DecayFit fit;
    std::string fit_error;
};

struct DecayReport {
    std::vector<MethodSeries> methods;
    /// Method whose fit decides the verdict (longest window).
    int primary = -1;
    DecayFit fit;
    int window_first = -1;
    int window_last = -1;
    /// Largest |D_a - D_b| / tolerance over method pairs and n in the window.
    double agreement = 0.0;
    bool agree = true;
    /// C theta^n * 1.5 >= Delta_n on the window.
    bool envelope_ok = false;
    /// Delta_n at or below the floor for every n >= 1.
    bool flat = false;
    /// lambda^(gamma/2) with lambda = max_q 1/Lambda_q; reported, not used in the verdict.
    double reference_rate = 0.0;
    bool pass = false;
    std::string verdict;
};

/// Linear sequences (every map with epsilon 0 or no modes) also get the exact
/// Fourier series as a method.
DecayReport memory_loss_experiment(const MapSequence& seq, const MemoryLossConfig& cfg,
                                   const std::vector<GuideConstants>& constants = {});

}  // namespace anosov
