#pragma once

// Stochastic trajectory synthesis and Monte Carlo conditioning runs.
//
// Trajectories are built in the frequency domain: each noise process draws a
// hermitian-symmetric Gaussian spectrum shaped by its PSD and is transformed
// to the time domain in one pass. There is no SDE stepping; structural
// damping has no agreed-on linear time-domain model, so the spectral route is
// the only one that treats both damping laws uniformly. Twice the requested
// duration is generated and the middle half kept, which removes the periodic
// wrap correlations of the circular transform.
//
// Randomness is counter-based (rng.hpp): every process owns a stream keyed by
// (seed, role, index), so adding a mode or reordering evaluation never
// perturbs other streams, and results are bit-identical across thread counts.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <future>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mechcond/condition.hpp"
#include "mechcond/model.hpp"
#include "mechcond/rng.hpp"
#include "mechcond/wiener.hpp"

namespace mechcond {

enum class BackactionMode { CorrelatedAcrossModes, Off };

struct SimulationSpec {
    MeasurementModel meas;
    double duration = 0.0;  // seconds
    double dt = 0.0;        // sample period, seconds
    std::uint64_t seed = 0;
    BackactionMode backaction_mode = BackactionMode::CorrelatedAcrossModes;
    bool record_forces = false;  // also keep per-mode backaction force series

    void validate() const {
        meas.validate();
        if (!(dt > 0.0) || !std::isfinite(dt))
            throw std::invalid_argument("SimulationSpec: dt must be positive");
        if (!(duration > 0.0) || !std::isfinite(duration))
            throw std::invalid_argument("SimulationSpec: duration must be positive");
        const double nyquist = kPi / dt;
        const double wmax = meas.max_mode_omega();
        if (wmax > 0.0 && nyquist < 8.0 * wmax)
            throw std::invalid_argument(
                "SimulationSpec: dt too coarse; Nyquist must cover 8x the highest resonance");
        double gamma_min = 0.0;
        for (const auto& m : meas.signal_modes)
            gamma_min = gamma_min > 0.0 ? std::min(gamma_min, m.gamma) : m.gamma;
        if (gamma_min > 0.0 && duration * gamma_min < 100.0)
            throw std::invalid_argument(
                "SimulationSpec: duration below 100 / (slowest linewidth); statistics would not "
                "be stationary");
        if (std::llround(duration / dt) < 16)
            throw std::invalid_argument("SimulationSpec: fewer than 16 samples");
    }

    std::size_t sample_count() const { return std::size_t(std::llround(duration / dt)); }
};

struct TrajectoryBundle {
    double dt = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t spec_hash = 0;
    std::vector<double> y;                      // photocurrent
    std::vector<std::vector<double>> q_true;    // per signal mode
    std::vector<std::vector<double>> p_true;    // per signal mode
    std::vector<std::vector<double>> f_ba;      // per-mode backaction force, if recorded

    void validate() const {
        for (const auto& q : q_true)
            if (q.size() != y.size())
                throw std::invalid_argument("TrajectoryBundle: series length mismatch");
        for (const auto& p : p_true)
            if (p.size() != y.size())
                throw std::invalid_argument("TrajectoryBundle: series length mismatch");
    }
};

namespace detail {

inline void hash_mix(std::uint64_t& h, std::uint64_t v) {
    // FNV-1a over the 8 bytes of v
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 0x100000001b3ull;
    }
}

inline void hash_mix(std::uint64_t& h, double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    hash_mix(h, bits);
}

inline std::uint64_t hash_spec(const SimulationSpec& spec) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    hash_mix(h, spec.meas.eta);
    hash_mix(h, std::uint64_t(spec.meas.momentum_convention));
    for (const auto& m : spec.meas.signal_modes) {
        hash_mix(h, m.omega);
        hash_mix(h, m.gamma);
        hash_mix(h, m.mu);
        hash_mix(h, m.n_th);
        hash_mix(h, std::uint64_t(m.damping));
        hash_mix(h, m.omega_c);
    }
    for (const auto& c : spec.meas.noise_components) {
        hash_mix(h, std::uint64_t(c.kind));
        hash_mix(h, c.level);
        hash_mix(h, c.center);
        hash_mix(h, c.width);
        hash_mix(h, c.height);
        for (double x : c.tab_omega) hash_mix(h, x);
        for (double x : c.tab_value) hash_mix(h, x);
    }
    hash_mix(h, spec.duration);
    hash_mix(h, spec.dt);
    hash_mix(h, spec.seed);
    hash_mix(h, std::uint64_t(spec.backaction_mode));
    return h;
}

// Hermitian-symmetric Gaussian spectrum in FFT bin order for a real series of
// length m with sample period dt and two-sided PSD psd[k] (FFT order).
// Normalization: E|X_k|^2 = 2 pi psd_k / d_omega, so that
// x[t] = (1/(m dt)) sum_k X_k e^{-i w_k t} has Var(x) = int psd dw/2pi.
inline std::vector<cplx> draw_spectrum(const CounterRng& rng, const std::vector<double>& psd,
                                       double d_omega) {
    const std::size_t m = psd.size();
    const std::size_t half = m / 2;
    std::vector<cplx> x(m);
    double g1 = 0.0, g2 = 0.0;
    rng.gaussian_pair(0, g1, g2);
    x[0] = cplx{std::sqrt(kTwoPi * psd[0] / d_omega) * g1, 0.0};
    x[half] = cplx{std::sqrt(kTwoPi * psd[half] / d_omega) * g2, 0.0};
    for (std::size_t k = 1; k < half; ++k) {
        rng.gaussian_pair(k, g1, g2);
        const double amp = std::sqrt(kPi * psd[k] / d_omega);
        x[k] = cplx{amp * g1, amp * g2};
        x[m - k] = std::conj(x[k]);
    }
    return x;
}

// Frequency -> time for an FFT-ordered spectrum; returns the real samples.
inline std::vector<double> spectrum_to_series(std::vector<cplx> x, double dt) {
    const std::size_t m = x.size();
    fft_inplace(x, false);  // e^{-i w t} kernel
    std::vector<double> out(m);
    const double scale = 1.0 / (double(m) * dt);
    for (std::size_t i = 0; i < m; ++i) out[i] = x[i].real() * scale;
    return out;
}

}  // namespace detail

// Synthesize one photocurrent record plus ground-truth mode coordinates.
//
// Mode response: q_j(w) = chi_j(w) [F_th,j(w) + sqrt(2 mu_j) W_ba(w)], with
// F_th,j drawn from the mode's thermal force PSD and W_ba a unit-PSD white
// force shared verbatim by every mode (CorrelatedAcrossModes). The flat
// backaction PSD 2 mu_j matches the f_white channel that
// with_backaction_heating puts on the estimation model, for either damping
// law (reports carry the backaction model string so this choice is visible).
// Photocurrent: y = sum_j 2 sqrt(eta mu_j) q_j + all configured noise
// components. The mode models passed in carry the bare thermal occupancy;
// do not pre-heat them.
inline TrajectoryBundle synthesize(const SimulationSpec& spec) {
    spec.validate();
    const std::size_t n_keep = spec.sample_count();
    const std::size_t m = next_pow2(2 * n_keep);
    const std::size_t lo = m / 4;  // keep [lo, lo + n_keep)
    const double d_omega = kTwoPi / (double(m) * spec.dt);
    const bool backaction = spec.backaction_mode == BackactionMode::CorrelatedAcrossModes;
    const bool literal = spec.meas.momentum_convention == MomentumConvention::Literal;

    // FFT-ordered frequency axis
    std::vector<double> w(m);
    for (std::size_t k = 0; k < m; ++k)
        w[k] = (k < m / 2 ? double(k) : double(k) - double(m)) * d_omega;

    TrajectoryBundle out;
    out.dt = spec.dt;
    out.seed = spec.seed;
    out.spec_hash = detail::hash_spec(spec);

    std::vector<cplx> w_ba;
    if (backaction && !spec.meas.signal_modes.empty()) {
        CounterRng rng(spec.seed, NoiseRole::Backaction, 0);
        std::vector<double> unit(m, 1.0);
        w_ba = detail::draw_spectrum(rng, unit, d_omega);
    }

    std::vector<cplx> y_f(m, cplx{0.0, 0.0});
    std::vector<double> psd(m);
    for (std::size_t j = 0; j < spec.meas.signal_modes.size(); ++j) {
        const ModeModel& mode = spec.meas.signal_modes[j];
        for (std::size_t k = 0; k < m; ++k) psd[k] = thermal_force_psd_at(mode, w[k]);
        CounterRng rng(spec.seed, NoiseRole::Thermal, j);
        std::vector<cplx> f = detail::draw_spectrum(rng, psd, d_omega);
        if (backaction) {
            const double amp = std::sqrt(2.0 * mode.mu);
            for (std::size_t k = 0; k < m; ++k) f[k] += amp * w_ba[k];
        }
        if (spec.record_forces) {
            std::vector<cplx> fb(m, cplx{0.0, 0.0});
            if (backaction) {
                const double amp = std::sqrt(2.0 * mode.mu);
                for (std::size_t k = 0; k < m; ++k) fb[k] = amp * w_ba[k];
            }
            std::vector<double> series = detail::spectrum_to_series(std::move(fb), spec.dt);
            out.f_ba.emplace_back(series.begin() + lo, series.begin() + lo + n_keep);
        }
        std::vector<cplx> qf(m), pf(m);
        const double inv_omega = literal ? 1.0 : 1.0 / mode.omega;
        for (std::size_t k = 0; k < m; ++k) {
            qf[k] = susceptibility(mode, w[k]) * f[k];
            pf[k] = cplx{0.0, -w[k] * inv_omega} * qf[k];
        }
        const double wy = 2.0 * std::sqrt(spec.meas.eta * mode.mu);
        for (std::size_t k = 0; k < m; ++k) y_f[k] += wy * qf[k];
        std::vector<double> q = detail::spectrum_to_series(std::move(qf), spec.dt);
        std::vector<double> p = detail::spectrum_to_series(std::move(pf), spec.dt);
        out.q_true.emplace_back(q.begin() + lo, q.begin() + lo + n_keep);
        out.p_true.emplace_back(p.begin() + lo, p.begin() + lo + n_keep);
    }

    for (std::size_t i = 0; i < spec.meas.noise_components.size(); ++i) {
        const NoiseComponent& c = spec.meas.noise_components[i];
        for (std::size_t k = 0; k < m; ++k) psd[k] = noise_psd_at(c, w[k]);
        CounterRng rng(spec.seed, NoiseRole::NoiseComponent, i);
        std::vector<cplx> nf = detail::draw_spectrum(rng, psd, d_omega);
        for (std::size_t k = 0; k < m; ++k) y_f[k] += nf[k];
    }

    std::vector<double> y = detail::spectrum_to_series(std::move(y_f), spec.dt);
    out.y.assign(y.begin() + lo, y.begin() + lo + n_keep);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo conditioning

// Power-of-two grid whose lag spacing equals the trace sample period, sized
// so the narrowest spectral feature spans at least bins_per_linewidth bins.
inline FrequencyGrid grid_for_trace(const MeasurementModel& meas, double dt,
                                    double bins_per_linewidth = 16.0) {
    if (!(dt > 0.0)) throw std::invalid_argument("grid_for_trace: dt must be positive");
    const double width = meas.min_feature_width();
    std::size_t n = 1u << 12;
    if (width > 0.0) {
        const double needed = kTwoPi * bins_per_linewidth / (dt * width);
        n = std::max(n, next_pow2(std::size_t(std::ceil(needed))));
    }
    return FrequencyGrid{n, kTwoPi / (double(n) * dt)};
}

namespace detail {

inline std::size_t worker_count(std::size_t trials) {
    std::size_t threads = 1;
    if (const char* env = std::getenv("MECHCOND_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) threads = std::size_t(v);
    }
    return std::max<std::size_t>(1, std::min(threads, trials));
}

struct TrialStats {
    double v_dq = 0.0, v_dp = 0.0, c_dqdp = 0.0;
    double v_Dq = 0.0, v_Dp = 0.0, c_DqDp = 0.0;
};

inline TrialStats run_trial(const SimulationSpec& spec, std::uint64_t trial,
                            const std::vector<std::size_t>& subset, const WienerFilterSet& f) {
    SimulationSpec s = spec;
    s.seed = mix_key(spec.seed, trial);
    s.record_forces = false;
    TrajectoryBundle bundle = synthesize(s);
    EstimateTraces tr = apply_filters(f, bundle.y, s.dt);
    const RelativeVariances rel = relative_estimate_stats(tr);

    const double mu_n = collective_mu(spec.meas, subset);
    const std::size_t n = bundle.y.size();
    std::vector<double> q_coll(n, 0.0), p_coll(n, 0.0);
    for (std::size_t idx : subset) {
        const double wj = std::sqrt(spec.meas.signal_modes[idx - 1].mu / mu_n);
        const auto& q = bundle.q_true[idx - 1];
        const auto& p = bundle.p_true[idx - 1];
        for (std::size_t i = 0; i < n; ++i) {
            q_coll[i] += wj * q[i];
            p_coll[i] += wj * p[i];
        }
    }
    std::vector<double> eq(tr.valid_end - tr.valid_begin), ep(eq.size());
    for (std::size_t i = tr.valid_begin; i < tr.valid_end; ++i) {
        eq[i - tr.valid_begin] = q_coll[i] - tr.q_pred[i];
        ep[i - tr.valid_begin] = p_coll[i] - tr.p_pred[i];
    }
    TrialStats st;
    st.v_dq = cov_of(eq, eq, 0, eq.size());
    st.v_dp = cov_of(ep, ep, 0, ep.size());
    st.c_dqdp = cov_of(eq, ep, 0, eq.size());
    st.v_Dq = rel.v_Dq;
    st.v_Dp = rel.v_Dp;
    st.c_DqDp = rel.c_DqDp;
    return st;
}

}  // namespace detail

// Run `trials` independent records through synthesize -> filters -> statistics
// and aggregate. Ground-truth conditional variances are Var(q_coll - q_pred)
// over the valid window; relative statistics come from prediction-minus-
// retrodiction. Filters are built once from the backaction-heated model on a
// grid matched to the trace sample period. Trials may run on worker threads
// (MECHCOND_THREADS); the reduction is ordered, so results are bit-identical
// for any thread count.
inline ConditioningReport monte_carlo_report(const SimulationSpec& spec,
                                             const std::vector<std::size_t>& subset,
                                             std::size_t trials,
                                             double bins_per_linewidth = 16.0) {
    spec.validate();
    if (trials < 1) throw std::invalid_argument("monte_carlo_report: trials must be >= 1");
    if (subset.empty()) throw std::invalid_argument("monte_carlo_report: empty subset");

    const bool backaction = spec.backaction_mode == BackactionMode::CorrelatedAcrossModes;
    const MeasurementModel filter_model =
        backaction ? with_backaction_heating(spec.meas) : spec.meas;
    const FrequencyGrid grid = grid_for_trace(filter_model, spec.dt, bins_per_linewidth);
    const WienerFilterSet filters = synthesize_filters(filter_model, subset, grid);

    std::vector<detail::TrialStats> stats(trials);
    const std::size_t workers = detail::worker_count(trials);
    if (workers <= 1) {
        for (std::size_t t = 0; t < trials; ++t)
            stats[t] = detail::run_trial(spec, t, subset, filters);
    } else {
        std::vector<std::future<void>> futs;
        futs.reserve(workers);
        std::atomic<std::size_t> next{0};
        for (std::size_t wk = 0; wk < workers; ++wk)
            futs.push_back(std::async(std::launch::async, [&]() {
                for (std::size_t t = next.fetch_add(1); t < trials; t = next.fetch_add(1))
                    stats[t] = detail::run_trial(spec, t, subset, filters);
            }));
        for (auto& f : futs) f.get();
    }

    auto mean_se = [&](auto pick, double& mean, double& se) {
        double s = 0.0;
        for (const auto& st : stats) s += pick(st);
        mean = s / double(trials);
        double v = 0.0;
        for (const auto& st : stats) v += (pick(st) - mean) * (pick(st) - mean);
        se = trials > 1 ? std::sqrt(v / double(trials - 1) / double(trials)) : 0.0;
    };

    ConditioningReport rep;
    rep.subset = subset;
    rep.provenance = "simulated";
    rep.backaction_model = backaction ? "correlated-flat-force" : "off";
    rep.seed = spec.seed;
    rep.trials = trials;
    rep.grid_n = grid.n;
    rep.grid_d_omega = grid.d_omega;
    double se_c = 0.0;
    mean_se([](const detail::TrialStats& s) { return s.v_dq; }, rep.v_dq, rep.se_v_dq);
    mean_se([](const detail::TrialStats& s) { return s.v_dp; }, rep.v_dp, rep.se_v_dp);
    mean_se([](const detail::TrialStats& s) { return s.c_dqdp; }, rep.c_dqdp, se_c);
    mean_se([](const detail::TrialStats& s) { return s.v_Dq; }, rep.v_Dq, rep.se_v_Dq);
    mean_se([](const detail::TrialStats& s) { return s.v_Dp; }, rep.v_Dp, rep.se_v_Dp);
    mean_se([](const detail::TrialStats& s) { return s.c_DqDp; }, rep.c_DqDp, se_c);

    const ConversionFactors cf =
        conversion_factors(RelativeVariances{rep.v_Dq, rep.v_Dp, rep.c_DqDp}, rep.v_dq, rep.v_dp);
    rep.f_q = cf.f_q;
    rep.f_p = cf.f_p;

    // model-route cross-check rides along so reports expose quadrature health
    const ConditionalSpectra cs = conditional_spectra(filter_model, subset, filters);
    const VarianceResult vr = conditional_variances(cs);
    rep.richardson_rel = vr.richardson_rel;
    rep.richardson_ok = vr.richardson_ok;
    rep.finalize();
    return rep;
}

// ---------------------------------------------------------------------------
// Regime sweeps (identical-mode collectives)

// Conditional position variance of the N-mode collective with per-mode
// cooperativity C and bare occupancy n_th, evaluated on the frequency route.
// N identical modes reduce to a single mode with C -> N C; the collective
// measurement rate is mu = N C Gamma.
inline double regime_cell_variance(const ModeModel& base, double cooperativity, double n_th,
                                   std::size_t n_modes, double eta = 1.0,
                                   double bins_per_linewidth = 8.0, double span_factor = 16.0) {
    if (n_modes < 1) throw std::invalid_argument("regime_cell_variance: N must be >= 1");
    ModeModel mode = base;
    mode.n_th = n_th;
    mode.mu = double(n_modes) * cooperativity * mode.gamma;
    MeasurementModel meas;
    meas.eta = eta;
    meas.signal_modes = {mode};
    NoiseComponent shot;
    shot.kind = NoiseComponent::Kind::ShotFloor;
    shot.level = 0.5;
    meas.noise_components = {shot};
    const MeasurementModel heated = with_backaction_heating(meas);

    // span covers the broadened effective resonance; for structural damping
    // the viscous broadening formulas still bound the conditional bandwidth
    ModeModel probe = mode;
    probe.damping = Damping::Viscous;
    MeasurementModel probe_meas = meas;
    probe_meas.signal_modes = {probe};
    const ViscousFilterParams vp = analytic_viscous_params(probe, eta);
    const double span = span_factor * std::max(mode.omega, vp.omega_eff + vp.gamma_eff);
    const double d_omega_max = mode.gamma / bins_per_linewidth;
    const std::size_t n = next_pow2(std::size_t(std::ceil(span / d_omega_max)));
    FrequencyGrid g{n, span / double(n)};

    const WienerFilterSet f = synthesize_filters(heated, {1}, g);
    const ConditionalSpectra cs = conditional_spectra(heated, {1}, f);
    return conditional_variances(cs).v_dq;
}

// Map of (C, n_th) -> conditional collective position variance.
inline std::map<std::pair<double, double>, double> sweep_regimes(
    const ModeModel& base, const std::vector<double>& c_grid, const std::vector<double>& n_th_grid,
    std::size_t n_modes, double eta = 1.0) {
    std::map<std::pair<double, double>, double> out;
    for (double c : c_grid)
        for (double n : n_th_grid)
            out[{c, n}] = regime_cell_variance(base, c, n, n_modes, eta);
    return out;
}

}  // namespace mechcond
