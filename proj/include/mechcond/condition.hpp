#pragma once

// Conditional spectra, variances, relative estimates, and conversion factors.
//
// Error spectra for an estimator x_hat = H * Y of a coordinate x:
//   S_dxdx = S_xx + |H|^2 S_YY - 2 Re{conj(H) S_xY},
// and the cross term of the conditional covariance matrix is
//   S_dqdp = Re{S_YY Hq conj(Hp)}.
// Variances integrate these with the trapezoid rule; a half-resolution
// Richardson check flags under-resolved grids.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechcond/model.hpp"
#include "mechcond/wiener.hpp"

namespace mechcond {

struct ConditionalSpectra {
    FrequencyGrid grid;
    std::vector<double> s_dqdq;
    std::vector<double> s_dpdp;
    std::vector<double> s_dqdp;  // Re part; even
};

inline ConditionalSpectra conditional_spectra(const MeasurementModel& meas,
                                              const std::vector<std::size_t>& subset,
                                              const WienerFilterSet& f,
                                              bool retrodiction = false) {
    const FrequencyGrid& g = f.grid;
    const std::vector<double> syy = photocurrent_psd(meas, g);
    const CrossSpectra cross = collective_cross_spectra(meas, subset, g);
    const auto& hq = retrodiction ? f.hq_bwd : f.hq_fwd;
    const auto& hp = retrodiction ? f.hp_bwd : f.hp_fwd;

    ConditionalSpectra out;
    out.grid = g;
    out.s_dqdq.resize(g.n);
    out.s_dpdp.resize(g.n);
    out.s_dqdp.resize(g.n);
    for (std::size_t k = 0; k < g.n; ++k) {
        const double yy = syy[k];
        out.s_dqdq[k] = cross.s_qq[k] + std::norm(hq[k]) * yy -
                        2.0 * std::real(std::conj(hq[k]) * cross.s_qy[k]);
        out.s_dpdp[k] = cross.s_pp[k] + std::norm(hp[k]) * yy -
                        2.0 * std::real(std::conj(hp[k]) * cross.s_py[k]);
        out.s_dqdp[k] = std::real(yy * hq[k] * std::conj(hp[k]));
    }
    return out;
}

struct VarianceResult {
    double v_dq = 0.0;
    double v_dp = 0.0;
    double c_dqdp = 0.0;
    double richardson_rel = 0.0;  // worst relative change under half resolution
    bool richardson_ok = true;    // within 0.5 percent
};

inline VarianceResult conditional_variances(const ConditionalSpectra& s) {
    VarianceResult r;
    r.v_dq = integrate(s.grid, s.s_dqdq);
    r.v_dp = integrate(s.grid, s.s_dpdp);
    r.c_dqdp = integrate(s.grid, s.s_dqdp);
    if (!(r.v_dq > 0.0) || !(r.v_dp > 0.0))
        throw std::runtime_error("conditional_variances: non-positive variance; "
                                 "grid under-resolved or filters inconsistent");
    const double hq = integrate_half(s.grid, s.s_dqdq);
    const double hp = integrate_half(s.grid, s.s_dpdp);
    r.richardson_rel = std::max(std::abs(hq - r.v_dq) / r.v_dq,
                                std::abs(hp - r.v_dp) / r.v_dp);
    r.richardson_ok = r.richardson_rel <= 5e-3;
    return r;
}

// Model-route statistics of the relative estimate Dq = q_fwd - q_bwd:
// S_DqDq = |Hq_fwd - Hq_bwd|^2 S_YY, and likewise for Dp and the cross term.
struct RelativeVariances {
    double v_Dq = 0.0;
    double v_Dp = 0.0;
    double c_DqDp = 0.0;
};

inline RelativeVariances relative_variances_model(const MeasurementModel& meas,
                                                  const WienerFilterSet& f) {
    const FrequencyGrid& g = f.grid;
    const std::vector<double> syy = photocurrent_psd(meas, g);
    std::vector<double> sq(g.n), sp(g.n), sqp(g.n);
    for (std::size_t k = 0; k < g.n; ++k) {
        const cplx dq = f.hq_fwd[k] - f.hq_bwd[k];
        const cplx dp = f.hp_fwd[k] - f.hp_bwd[k];
        sq[k] = std::norm(dq) * syy[k];
        sp[k] = std::norm(dp) * syy[k];
        sqp[k] = std::real(dq * std::conj(dp)) * syy[k];
    }
    RelativeVariances r;
    r.v_Dq = integrate(g, sq);
    r.v_Dp = integrate(g, sp);
    r.c_DqDp = integrate(g, sqp);
    return r;
}

// Closed-form relative-estimate variances for a single viscously damped mode
// against a shot floor of 1/2, matching analytic_viscous_filters. The cross
// covariance vanishes by parity.
inline RelativeVariances analytic_viscous_relative_variances(const ModeModel& mode, double eta) {
    if (mode.damping != Damping::Viscous)
        throw std::invalid_argument(
            "analytic_viscous_relative_variances: mode must be viscously damped");
    const ViscousFilterParams p = analytic_viscous_params(mode, eta);
    const double om = mode.omega, gm = mode.gamma;
    const double om2 = om * om, oe2 = p.omega_eff * p.omega_eff;
    const double gsum = gm + p.gamma_eff;
    const double ab2 = p.a * p.a * p.b * p.b;
    RelativeVariances r;
    r.v_Dq = ab2 / gsum * (1.0 + 2.0 * gm * p.gamma_eff / (om2 + oe2));
    r.v_Dp = 2.0 * ab2 / (gsum * gsum * om2) *
             (0.5 * gm * om2 + 0.5 * p.gamma_eff * oe2 +
              0.5 * gm * p.gamma_eff * (gm - p.gamma_eff) * (oe2 - om2) / (om2 + oe2));
    r.c_DqDp = 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Trace-domain estimates

struct EstimateTraces {
    double dt = 0.0;
    std::vector<double> q_pred, p_pred;   // causal estimates
    std::vector<double> q_retro, p_retro; // anti-causal estimates
    std::size_t valid_begin = 0;          // [valid_begin, valid_end): edge transients excluded
    std::size_t valid_end = 0;

    void validate() const {
        const std::size_t n = q_pred.size();
        if (p_pred.size() != n || q_retro.size() != n || p_retro.size() != n)
            throw std::invalid_argument("EstimateTraces: trace length mismatch");
        if (!(valid_begin < valid_end && valid_end <= n))
            throw std::invalid_argument("EstimateTraces: empty or out-of-range valid window");
    }
};

namespace detail {

// Impulse response of H on the grid's lag axis, returned as taps for lags
// [-n/2, n/2) along with the number of leading/trailing samples that carry
// (1 - tail_fraction) of the energy on each side.
struct ImpulseResponse {
    std::vector<double> taps;  // real part; imaginary content is rounding noise
    std::size_t lead = 0;      // taps before lag zero (anti-causal extent)
    std::size_t lag = 0;       // taps at/after lag zero (causal extent)
};

inline ImpulseResponse impulse_response(const FrequencyGrid& g, const std::vector<cplx>& h,
                                        double tail_fraction = 1e-9) {
    std::vector<cplx> lag = fftshift(h);
    // frequency -> time: x(t_m) = (1/(n dt)) sum_k H(w_k) e^{-i w_k t_m};
    // the forward FFT applies the e^{-i} kernel; 1/(n dt) scales taps so that
    // discrete convolution sum h[m] y[t-m] approximates int h(s) y(t-s) ds.
    fft_inplace(lag, false);
    const std::size_t n = g.n, half = n / 2;
    const double scale = 1.0 / (double(n) * g.dt());
    ImpulseResponse out;
    out.taps.resize(n);
    // reorder to lags -n/2 .. n/2-1
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = (j + half) % n;  // j=0 -> lag -n/2
        out.taps[j] = lag[src].real() * scale;
    }
    double total = 0.0;
    for (double t : out.taps) total += t * t;
    if (total <= 0.0) {
        out.lead = out.lag = 1;
        return out;
    }
    const double keep = (1.0 - tail_fraction) * total;
    double acc = 0.0;
    std::size_t lo = 0, hi = n - 1;
    // grow outward from lag zero (index half) until enough energy is kept
    acc = out.taps[half] * out.taps[half];
    std::size_t a = half, b = half;
    while (acc < keep && (a > 0 || b + 1 < n)) {
        const double left = a > 0 ? out.taps[a - 1] * out.taps[a - 1] : -1.0;
        const double right = b + 1 < n ? out.taps[b + 1] * out.taps[b + 1] : -1.0;
        if (left >= right) {
            --a;
            acc += left;
        } else {
            ++b;
            acc += right;
        }
    }
    lo = a;
    hi = b;
    out.lead = half - lo;
    out.lag = hi + 1 - half;
    return out;
}

}  // namespace detail

// Filter a sampled photocurrent with all four responses (FFT linear
// convolution; edge transients land outside the reported valid window).
// The trace sample period must match the grid's lag spacing.
inline EstimateTraces apply_filters(const WienerFilterSet& f, const std::vector<double>& y,
                                    double dt) {
    const double grid_dt = f.grid.dt();
    if (std::abs(dt - grid_dt) > 1e-9 * grid_dt)
        throw std::invalid_argument("apply_filters: trace dt inconsistent with filter grid");
    if (y.size() < 16) throw std::invalid_argument("apply_filters: trace too short");

    const std::size_t n = y.size();
    const std::size_t half = f.grid.n / 2;

    detail::ImpulseResponse irs[4] = {
        detail::impulse_response(f.grid, f.hq_fwd),
        detail::impulse_response(f.grid, f.hp_fwd),
        detail::impulse_response(f.grid, f.hq_bwd),
        detail::impulse_response(f.grid, f.hp_bwd),
    };
    std::size_t max_lead = 0, max_lag = 0;
    for (const auto& ir : irs) {
        max_lead = std::max(max_lead, ir.lead);
        max_lag = std::max(max_lag, ir.lag);
    }

    const std::size_t m = next_pow2(n + f.grid.n);
    std::vector<cplx> yf(m, cplx{0.0, 0.0});
    for (std::size_t i = 0; i < n; ++i) yf[i] = cplx{y[i], 0.0};
    fft_inplace(yf, false);

    auto convolve = [&](const detail::ImpulseResponse& ir) {
        std::vector<cplx> hf(m, cplx{0.0, 0.0});
        // taps[j] is lag j - half; place non-negative lags at the front and
        // negative lags wrapped to the tail so the output stays aligned with y.
        for (std::size_t j = 0; j < f.grid.n; ++j) {
            const std::ptrdiff_t lagidx = std::ptrdiff_t(j) - std::ptrdiff_t(half);
            const std::size_t pos = lagidx >= 0 ? std::size_t(lagidx) : m - std::size_t(-lagidx);
            hf[pos] = cplx{ir.taps[j] * dt, 0.0};
        }
        fft_inplace(hf, false);
        for (std::size_t i = 0; i < m; ++i) hf[i] *= yf[i];
        fft_inplace(hf, true);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = hf[i].real();
        return out;
    };

    EstimateTraces tr;
    tr.dt = dt;
    tr.q_pred = convolve(irs[0]);
    tr.p_pred = convolve(irs[1]);
    tr.q_retro = convolve(irs[2]);
    tr.p_retro = convolve(irs[3]);
    const std::size_t guard = std::max<std::size_t>(max_lead + max_lag, 1);
    if (2 * guard >= n)
        throw std::invalid_argument("apply_filters: trace shorter than filter impulse response");
    tr.valid_begin = guard;
    tr.valid_end = n - guard;
    tr.validate();
    return tr;
}

// ---------------------------------------------------------------------------
// Statistics over the valid window

namespace detail {

inline double mean_of(const std::vector<double>& x, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += x[i];
    return s / double(b - a);
}

inline double cov_of(const std::vector<double>& x, const std::vector<double>& y, std::size_t a,
                     std::size_t b) {
    const double mx = mean_of(x, a, b), my = mean_of(y, a, b);
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += (x[i] - mx) * (y[i] - my);
    return s / double(b - a);
}

}  // namespace detail

inline RelativeVariances relative_estimate_stats(const EstimateTraces& tr) {
    tr.validate();
    const std::size_t a = tr.valid_begin, b = tr.valid_end;
    std::vector<double> dq(b - a), dp(b - a);
    for (std::size_t i = a; i < b; ++i) {
        dq[i - a] = tr.q_pred[i] - tr.q_retro[i];
        dp[i - a] = tr.p_pred[i] - tr.p_retro[i];
    }
    RelativeVariances r;
    r.v_Dq = detail::cov_of(dq, dq, 0, dq.size());
    r.v_Dp = detail::cov_of(dp, dp, 0, dp.size());
    r.c_DqDp = detail::cov_of(dq, dp, 0, dq.size());
    return r;
}

struct ConversionFactors {
    double f_q = 0.0;
    double f_p = 0.0;
};

// F = 1 - V_Delta / (2 V_delta). |F| < 1 by Cauchy-Schwarz; the bound is
// checked to catch inconsistent inputs.
inline ConversionFactors conversion_factors(const RelativeVariances& rel, double v_dq,
                                            double v_dp) {
    if (!(v_dq > 0.0) || !(v_dp > 0.0))
        throw std::invalid_argument("conversion_factors: conditional variances must be positive");
    ConversionFactors f;
    f.f_q = 1.0 - rel.v_Dq / (2.0 * v_dq);
    f.f_p = 1.0 - rel.v_Dp / (2.0 * v_dp);
    if (!(std::abs(f.f_q) < 1.0) || !(std::abs(f.f_p) < 1.0))
        throw std::runtime_error("conversion_factors: |F| >= 1; inputs are not a consistent "
                                 "relative/conditional pair");
    return f;
}

// V_delta = V_Delta / (2 (1 - F)).
inline double infer_conditional_from_relative(double v_Delta, double f) {
    if (!(v_Delta >= 0.0))
        throw std::invalid_argument("infer_conditional_from_relative: negative variance");
    if (f >= 1.0)
        throw std::invalid_argument("infer_conditional_from_relative: F must be < 1");
    return v_Delta / (2.0 * (1.0 - f));
}

struct CollectiveCorrelations {
    double rho_qq = 0.0;
    double rho_pp = 0.0;
};

// Pearson correlations of the relative estimates of two collective modes.
inline CollectiveCorrelations collective_correlations(const EstimateTraces& a,
                                                      const EstimateTraces& b) {
    a.validate();
    b.validate();
    const std::size_t lo = std::max(a.valid_begin, b.valid_begin);
    const std::size_t hi = std::min(a.valid_end, b.valid_end);
    if (lo >= hi) throw std::invalid_argument("collective_correlations: disjoint valid windows");
    std::vector<double> qa(hi - lo), qb(hi - lo), pa(hi - lo), pb(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
        qa[i - lo] = a.q_pred[i] - a.q_retro[i];
        qb[i - lo] = b.q_pred[i] - b.q_retro[i];
        pa[i - lo] = a.p_pred[i] - a.p_retro[i];
        pb[i - lo] = b.p_pred[i] - b.p_retro[i];
    }
    auto pearson = [&](const std::vector<double>& x, const std::vector<double>& y) {
        const double c = detail::cov_of(x, y, 0, x.size());
        const double vx = detail::cov_of(x, x, 0, x.size());
        const double vy = detail::cov_of(y, y, 0, y.size());
        return c / std::sqrt(vx * vy);
    };
    CollectiveCorrelations c;
    c.rho_qq = pearson(qa, qb);
    c.rho_pp = pearson(pa, pb);
    return c;
}

// ---------------------------------------------------------------------------
// Report

struct ConditioningReport {
    // conditional (delta) statistics
    double v_dq = 0.0, v_dp = 0.0, c_dqdp = 0.0;
    // relative (Delta) statistics
    double v_Dq = 0.0, v_Dp = 0.0, c_DqDp = 0.0;
    // conversion factors and derived quantities
    double f_q = 0.0, f_p = 0.0;
    double purity = 0.0;           // 1 / (2 sqrt(det V)) of the conditional covariance
    double squeezing_ratio = 0.0;  // v_dp / v_dq
    std::vector<std::size_t> subset;
    std::string provenance;        // "analytic" | "simulated" | "inferred-from-data"
    std::string backaction_model;
    double richardson_rel = 0.0;
    bool richardson_ok = true;
    std::uint64_t seed = 0;
    std::size_t trials = 0;
    std::size_t grid_n = 0;
    double grid_d_omega = 0.0;
    // trial scatter (standard errors), zero for analytic reports
    double se_v_dq = 0.0, se_v_dp = 0.0, se_v_Dq = 0.0, se_v_Dp = 0.0;

    void finalize() {
        squeezing_ratio = v_dp / v_dq;
        const double det = v_dq * v_dp - c_dqdp * c_dqdp;
        purity = det > 0.0 ? 1.0 / (2.0 * std::sqrt(det)) : 0.0;
        if (!(std::abs(f_q) < 1.0) || !(std::abs(f_p) < 1.0))
            throw std::runtime_error("ConditioningReport: |F| >= 1");
    }
};

}  // namespace mechcond
