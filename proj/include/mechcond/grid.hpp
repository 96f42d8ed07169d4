#pragma once

// Frequency grids and sampled spectra.
//
// All spectra live on a uniform two-sided angular-frequency grid
//   omega_k = (k - n/2) * d_omega,  k = 0 .. n-1,
// ascending, with omega = 0 at k = n/2. n is a power of two so the grid maps
// directly onto the FFT lag domain: lag spacing dt = 2*pi/(n*d_omega).

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "mechcond/fft.hpp"

namespace mechcond {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

struct FrequencyGrid {
    std::size_t n = 0;       // number of bins, power of two, >= 2^10
    double d_omega = 0.0;    // bin spacing [rad/s]

    FrequencyGrid() = default;
    FrequencyGrid(std::size_t n_points, double spacing) : n(n_points), d_omega(spacing) {
        if (!is_pow2(n) || n < 1024)
            throw std::invalid_argument("FrequencyGrid: n_points must be a power of two >= 1024");
        if (!(d_omega > 0.0))
            throw std::invalid_argument("FrequencyGrid: d_omega must be positive");
    }

    double omega(std::size_t k) const { return (double(k) - double(n / 2)) * d_omega; }
    double omega_max() const { return double(n / 2) * d_omega; }
    double span() const { return double(n) * d_omega; }
    double dt() const { return kTwoPi / span(); }
    double duration() const { return kTwoPi / d_omega; }
    std::size_t zero_bin() const { return n / 2; }

    bool operator==(const FrequencyGrid& o) const { return n == o.n && d_omega == o.d_omega; }
    bool operator!=(const FrequencyGrid& o) const { return !(*this == o); }
};

// A spectrum sampled on a grid. `hermitian` marks cross-spectra whose values
// satisfy S(-omega) = conj(S(omega)); auto-spectra are real and even.
struct SampledSpectrum {
    FrequencyGrid grid;
    std::vector<cplx> values;
    bool hermitian = true;

    void validate() const {
        if (values.size() != grid.n)
            throw std::invalid_argument("SampledSpectrum: value count does not match grid");
    }
};

// Trapezoid integral of samples over the grid, normalized as  (1/2pi) * int f domega.
inline double integrate(const FrequencyGrid& g, const std::vector<double>& f) {
    if (f.size() != g.n) throw std::invalid_argument("integrate: size mismatch");
    double acc = 0.5 * (f.front() + f.back());
    for (std::size_t k = 1; k + 1 < f.size(); ++k) acc += f[k];
    return acc * g.d_omega / kTwoPi;
}

// Same integral on every other sample (half resolution), for convergence checks.
inline double integrate_half(const FrequencyGrid& g, const std::vector<double>& f) {
    if (f.size() != g.n) throw std::invalid_argument("integrate_half: size mismatch");
    double acc = 0.5 * (f.front() + f[f.size() - 2]);
    for (std::size_t k = 2; k + 2 < f.size(); k += 2) acc += f[k];
    return acc * 2.0 * g.d_omega / kTwoPi;
}

namespace detail {

// Reorder between ascending-omega layout and FFT layout (omega=0 first).
// For even n the permutation is its own inverse (swap of halves).
inline std::vector<cplx> fftshift(const std::vector<cplx>& x) {
    const std::size_t n = x.size();
    std::vector<cplx> y(n);
    const std::size_t h = n / 2;
    for (std::size_t k = 0; k < n; ++k) y[k] = x[(k + h) % n];
    return y;
}

}  // namespace detail

// Adaptive Simpson quadrature for closed-form integrands (equipartition
// checks, loss-angle calibration). Breakpoints let callers isolate narrow
// resonances from slow tails.
template <typename F>
double adaptive_simpson(F&& f, double a, double b, double rel_tol, int max_depth = 28) {
    struct Impl {
        F& fn;
        double tol;
        int maxd;
        double run(double a, double b, double fa, double fm, double fb, double whole, int depth) {
            const double m = 0.5 * (a + b);
            const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
            const double flm = fn(lm), frm = fn(rm);
            const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            const double delta = left + right - whole;
            if (depth >= maxd || std::abs(delta) <= 15.0 * tol * (std::abs(left + right) + 1e-300))
                return left + right + delta / 15.0;
            return run(a, m, fa, flm, fm, left, depth + 1) +
                   run(m, b, fm, frm, fb, right, depth + 1);
        }
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    Impl impl{f, rel_tol, max_depth};
    return impl.run(a, b, fa, fm, fb, whole, 0);
}

template <typename F>
double adaptive_simpson_segmented(F&& f, const std::vector<double>& breakpoints, double rel_tol) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < breakpoints.size(); ++i)
        if (breakpoints[i + 1] > breakpoints[i])
            acc += adaptive_simpson(f, breakpoints[i], breakpoints[i + 1], rel_tol);
    return acc;
}

}  // namespace mechcond
