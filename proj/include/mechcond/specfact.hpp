#pragma once

// Wiener-Hopf spectral factorization and causal/anti-causal splitting.
//
// spectral_factorize builds the minimum-phase factor M(omega) of a positive
// even spectrum S via the cepstral (log-FFT) method: Re log M = log(S)/2
// exactly, Im log M its discrete Hilbert transform, so |M|^2 = S to rounding
// and both M and 1/M are causal.
//
// Splitting convention: the lag grid is t_m = m * dt, m = -n/2 .. n/2-1.
// causal_part keeps lags m >= 0 (the zero-lag sample belongs wholly to the
// causal part); anticausal_part keeps m < 0. The two parts always sum back to
// the input bin-exactly.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechcond/grid.hpp"

namespace mechcond {

struct SpectralFactor {
    FrequencyGrid grid;
    std::vector<cplx> m;          // minimum-phase factor, ascending omega
    double residual = 0.0;        // max_k | |m|^2 - s | / s
    double anticausal_energy = 0.0;  // negative-lag energy fraction of m's impulse response
    std::size_t clamped_bins = 0;    // bins raised to the positivity floor
};

namespace detail {

// Lag-domain mask helper shared by the splitting ops. keep_nonneg selects
// lags m in [0, n/2); its complement selects [-n/2, -1].
inline std::vector<cplx> lag_masked(const FrequencyGrid& g, const std::vector<cplx>& values,
                                    bool keep_nonneg) {
    if (values.size() != g.n) throw std::invalid_argument("lag_masked: size mismatch");
    std::vector<cplx> c = fftshift(values);
    fft_inplace(c, false);  // frequency -> lag (unnormalized; projection cancels scale)
    const std::size_t h = g.n / 2;
    if (keep_nonneg)
        std::fill(c.begin() + h, c.end(), cplx{0.0, 0.0});
    else
        std::fill(c.begin(), c.begin() + h, cplx{0.0, 0.0});
    fft_inplace(c, true);
    return fftshift(c);
}

// Causal projection with the zero-lag and Nyquist-lag bins shared equally
// between the two half-lines (weight 1/2 each), the same weighting the
// cepstral fold below uses. Filter synthesis uses this split: both shared
// bins are fixed points of time reversal, so mirrored filter pairs remain
// exact conjugates, and the half weights cancel the DC offset either closed
// half-line alone would inherit from the other half's 1/omega lag tail.
inline std::vector<cplx> split_causal(const FrequencyGrid& g, const std::vector<cplx>& values) {
    if (values.size() != g.n) throw std::invalid_argument("split_causal: size mismatch");
    std::vector<cplx> c = fftshift(values);
    fft_inplace(c, false);
    const std::size_t h = g.n / 2;
    c[0] *= 0.5;
    c[h] *= 0.5;
    std::fill(c.begin() + h + 1, c.end(), cplx{0.0, 0.0});
    fft_inplace(c, true);
    return fftshift(c);
}

// Causal projection with boundary-term correction.
//
// The half-line restriction of a correlation function generally starts at a
// nonzero value h(0) with nonzero one-sided slope, so its transform carries
// slowly decaying 1/omega and 1/omega^2 tails. A grid split replaces those
// tails by their circular analogues (the cot-kernel of the discrete Hilbert
// transform), an O(sqrt(width/span)) distortion that dominates the error of
// the naive projection. Here the boundary value and the one-sided slopes are
// measured from the lag series, matching rationals
//   value: e^{-w0|t|}        <->  1/(w0 - iw) + 1/(w0 + iw)
//   slope: t e^{-w0 t} theta(+-t)  <->  +-1/(w0 -+ iw)^2
// are removed, the smooth remainder (zero boundary value and slopes) is
// split on the grid, and the exact causal parts of the rationals are added
// back analytically. The two projections still sum to the input bin-exactly.
inline std::vector<cplx> corrected_causal_part(const FrequencyGrid& g,
                                               const std::vector<cplx>& values) {
    if (values.size() != g.n) throw std::invalid_argument("corrected_causal_part: size mismatch");
    const std::size_t n = g.n;
    const double dt = g.dt();

    std::vector<cplx> c = fftshift(values);
    fft_inplace(c, false);
    const double lag_scale = g.d_omega / kTwoPi;  // FFT sum -> lag-function sample

    const cplx h0 = c[0] * lag_scale;
    // fifth-order one-sided slopes at lag zero from the first six samples
    cplx fp[6], fm[6];
    for (std::size_t j = 0; j < 6; ++j) {
        fp[j] = c[j] * lag_scale;
        fm[j] = c[(n - j) % n] * lag_scale;
    }
    static constexpr double kSlope[6] = {-137.0 / 60.0, 5.0, -5.0, 10.0 / 3.0, -5.0 / 4.0,
                                         1.0 / 5.0};
    cplx slope_pos{0.0, 0.0}, slope_neg{0.0, 0.0};
    for (std::size_t j = 0; j < 6; ++j) {
        slope_pos += kSlope[j] * fp[j];
        slope_neg -= kSlope[j] * fm[j];
    }
    slope_pos /= dt;
    slope_neg /= dt;

    // corner rate: L1-weighted RMS frequency of the input, kept well inside
    // the grid and well above the bin width
    double wsum = 0.0, w2sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double a = std::abs(values[k]);
        const double w = g.omega(k);
        wsum += a;
        w2sum += a * w * w;
    }
    double w0 = wsum > 0.0 ? std::sqrt(w2sum / wsum) : 16.0 * g.d_omega;
    w0 = std::max(w0, 16.0 * g.d_omega);
    w0 = std::min(w0, g.span() / 16.0);

    const cplx sp = slope_pos + w0 * h0;  // residual slopes after value removal
    const cplx sn = slope_neg - w0 * h0;

    std::vector<cplx> reg(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double w = g.omega(k);
        const cplx dm{w0, -w};  // w0 - i omega
        const cplx dp{w0, w};   // w0 + i omega
        reg[k] = values[k] - h0 * (1.0 / dm + 1.0 / dp) - sp / (dm * dm) + sn / (dp * dp);
    }
    std::vector<cplx> out = split_causal(g, reg);
    for (std::size_t k = 0; k < n; ++k) {
        const double w = g.omega(k);
        const cplx dm{w0, -w};
        out[k] += h0 / dm + sp / (dm * dm);
    }
    return out;
}

}  // namespace detail

inline std::vector<cplx> causal_part(const FrequencyGrid& g, const std::vector<cplx>& values) {
    return detail::lag_masked(g, values, true);
}

inline std::vector<cplx> anticausal_part(const FrequencyGrid& g, const std::vector<cplx>& values) {
    return detail::lag_masked(g, values, false);
}

inline SpectralFactor spectral_factorize(const FrequencyGrid& g, const std::vector<double>& s) {
    if (s.size() != g.n) throw std::invalid_argument("spectral_factorize: size mismatch");

    double smax = 0.0;
    for (double v : s) smax = std::max(smax, v);
    if (!(smax > 0.0)) throw std::invalid_argument("spectral_factorize: spectrum is not positive");

    std::vector<std::size_t> bad;
    for (std::size_t k = 0; k < s.size(); ++k)
        if (!(s[k] > 0.0)) {
            bad.push_back(k);
            if (bad.size() >= 8) break;
        }
    if (!bad.empty()) {
        std::ostringstream msg;
        msg << "spectral_factorize: non-positive bins at indices";
        for (auto k : bad) msg << ' ' << k;
        throw std::invalid_argument(msg.str());
    }

    const double floor = 1e-12 * smax;
    SpectralFactor out;
    out.grid = g;

    std::vector<cplx> half_log(g.n);
    for (std::size_t k = 0; k < g.n; ++k) {
        double v = s[k];
        if (v < floor) {
            v = floor;
            ++out.clamped_bins;
        }
        half_log[k] = cplx{0.5 * std::log(v), 0.0};
    }

    // Cepstrum of log(S)/2, folded onto non-negative lags. The fold keeps the
    // even (real) part intact, so Re log M == log(S)/2 identically; the odd
    // part it creates is the discrete Hilbert transform giving minimum phase.
    std::vector<cplx> c = detail::fftshift(half_log);
    fft_inplace(c, false);
    const std::size_t h = g.n / 2;
    for (std::size_t j = 1; j < h; ++j) c[j] *= 2.0;
    std::fill(c.begin() + h + 1, c.end(), cplx{0.0, 0.0});
    fft_inplace(c, true);

    std::vector<cplx> m(g.n);
    for (std::size_t k = 0; k < g.n; ++k) m[k] = std::exp(c[k]);
    out.m = detail::fftshift(m);

    for (std::size_t k = 0; k < g.n; ++k) {
        const double mm = std::norm(out.m[k]);
        out.residual = std::max(out.residual, std::abs(mm - s[k]) / s[k]);
    }

    std::vector<cplx> lag = detail::fftshift(out.m);
    fft_inplace(lag, false);
    double total = 0.0, anti = 0.0;
    for (std::size_t j = 0; j < g.n; ++j) {
        const double e = std::norm(lag[j]);
        total += e;
        if (j >= h) anti += e;
    }
    out.anticausal_energy = (total > 0.0) ? anti / total : 0.0;
    return out;
}

}  // namespace mechcond
