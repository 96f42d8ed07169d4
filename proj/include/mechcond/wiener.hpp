#pragma once

// Causal and anti-causal Wiener filters for conditional state estimation.
//
// With M the minimum-phase factor of S_YY and [.]_+ the causal part,
//   Hq_fwd = (1/M) [S_qY / conj(M)]_+        (prediction)
//   Hp_fwd = (1/M) [S_pY / conj(M)]_+
// and the retrodiction filters are their lag-domain mirrors. Because S_qY is
// real/even and S_pY imaginary/odd, the mirrors are exactly
//   Hq_bwd = conj(Hq_fwd),  Hp_bwd = -conj(Hp_fwd)
// on the grid, provided the zero-lag sample is assigned to the closed
// anti-causal half-line (t <= 0) during synthesis. That convention is used
// here deliberately: it reproduces the analytic mirror identities and makes
// the prediction/retrodiction variance symmetry exact. The standalone
// causal_part/anticausal_part ops keep zero-lag on the causal side and are
// not affected.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "mechcond/model.hpp"
#include "mechcond/specfact.hpp"

namespace mechcond {

struct WienerFilterSet {
    FrequencyGrid grid;
    std::vector<cplx> hq_fwd, hp_fwd;  // causal (prediction)
    std::vector<cplx> hq_bwd, hp_bwd;  // anti-causal (retrodiction)
    double mu_collective = 0.0;
    double factor_residual = 0.0;      // |M|^2 vs S_YY, max relative
    double causal_leakage_q = 0.0;     // negative-lag energy fraction of hq_fwd
    double causal_leakage_p = 0.0;
};

namespace detail {

inline double lag_energy_fraction(const FrequencyGrid& g, const std::vector<cplx>& h,
                                  bool negative_lags) {
    std::vector<cplx> lag = fftshift(h);
    fft_inplace(lag, false);
    const std::size_t half = g.n / 2;
    double total = 0.0, sel = 0.0;
    for (std::size_t j = 0; j < g.n; ++j) {
        const double e = std::norm(lag[j]);
        total += e;
        if ((j >= half) == negative_lags) sel += e;
    }
    return total > 0.0 ? sel / total : 0.0;
}

}  // namespace detail

inline WienerFilterSet synthesize_filters(const MeasurementModel& meas,
                                          const std::vector<std::size_t>& subset,
                                          const FrequencyGrid& grid) {
    const std::vector<double> syy = photocurrent_psd(meas, grid);
    const SpectralFactor factor = spectral_factorize(grid, syy);
    const CrossSpectra cross = collective_cross_spectra(meas, subset, grid);

    WienerFilterSet out;
    out.grid = grid;
    out.mu_collective = cross.mu_collective;
    out.factor_residual = factor.residual;

    std::vector<cplx> uq(grid.n), up(grid.n);
    for (std::size_t k = 0; k < grid.n; ++k) {
        const cplx mc = std::conj(factor.m[k]);
        uq[k] = cross.s_qy[k] / mc;
        up[k] = cross.s_py[k] / mc;
    }
    std::vector<cplx> uq_p = detail::corrected_causal_part(grid, uq);
    std::vector<cplx> up_p = detail::corrected_causal_part(grid, up);

    out.hq_fwd.resize(grid.n);
    out.hp_fwd.resize(grid.n);
    out.hq_bwd.resize(grid.n);
    out.hp_bwd.resize(grid.n);
    for (std::size_t k = 0; k < grid.n; ++k) {
        out.hq_fwd[k] = uq_p[k] / factor.m[k];
        out.hp_fwd[k] = up_p[k] / factor.m[k];
        out.hq_bwd[k] = std::conj(out.hq_fwd[k]);
        out.hp_bwd[k] = -std::conj(out.hp_fwd[k]);
    }

    out.causal_leakage_q = detail::lag_energy_fraction(grid, out.hq_fwd, true);
    out.causal_leakage_p = detail::lag_energy_fraction(grid, out.hp_fwd, true);
    return out;
}

// ---------------------------------------------------------------------------
// Analytic oracle: single viscously damped mode read out against a shot floor
// of exactly 1/2. The conditioned dynamics are a stiffened, broadened
// oscillator chi'(omega) = 1/(Omega'^2 - omega^2 - i Gamma' omega) with
//   Omega' = (16 eta Gamma^2 C n_tot Omega^2 + Omega^4)^(1/4)
//   Gamma' = sqrt(Gamma^2 - 2 Omega^2 + 2 Omega'^2)
// and the filters in closed form below. n_tot = n_th + C + 1/2 includes the
// backaction occupancy C = mu/Gamma on top of the mode's bare n_th.

struct ViscousFilterParams {
    double a = 0.0;        // overall gain A
    double b = 0.0;        // lead coefficient B
    double omega_eff = 0.0;  // Omega'
    double gamma_eff = 0.0;  // Gamma'
    double n_tot = 0.0;
};

inline ViscousFilterParams analytic_viscous_params(const ModeModel& mode, double eta) {
    const double om = mode.omega, gm = mode.gamma;
    const double coop = mode.mu / gm;
    const double n_tot = mode.n_th + coop + 0.5;
    const double om_eff =
        std::pow(16.0 * eta * gm * gm * coop * n_tot * om * om + om * om * om * om, 0.25);
    const double gamma_eff = std::sqrt(gm * gm - 2.0 * om * om + 2.0 * om_eff * om_eff);
    ViscousFilterParams p;
    p.omega_eff = om_eff;
    p.gamma_eff = gamma_eff;
    p.n_tot = n_tot;
    p.a = 8.0 * std::sqrt(eta * gm * gm * gm * coop) * n_tot * om * om /
          (om * om + om_eff * om_eff);
    p.b = (gm + gamma_eff) /
          (om_eff * om_eff - om * om + gm * gm + gm * gamma_eff);
    return p;
}

inline WienerFilterSet analytic_viscous_filters(const ModeModel& mode, double eta,
                                                const FrequencyGrid& grid);

inline WienerFilterSet analytic_viscous_filters(const MeasurementModel& meas,
                                                const FrequencyGrid& grid) {
    meas.validate();
    if (meas.signal_modes.size() != 1)
        throw std::invalid_argument("analytic_viscous_filters: exactly one mode required");
    const ModeModel& mode = meas.signal_modes[0];
    if (mode.damping != Damping::Viscous)
        throw std::invalid_argument("analytic_viscous_filters: mode must be viscously damped");
    if (meas.noise_components.size() != 1 ||
        meas.noise_components[0].kind != NoiseComponent::Kind::ShotFloor ||
        meas.noise_components[0].level != 0.5)
        throw std::invalid_argument(
            "analytic_viscous_filters: noise must be a single shot floor at 1/2");

    const ViscousFilterParams p = analytic_viscous_params(mode, meas.eta);
    WienerFilterSet out;
    out.grid = grid;
    out.mu_collective = mode.mu;
    out.hq_fwd.resize(grid.n);
    out.hp_fwd.resize(grid.n);
    out.hq_bwd.resize(grid.n);
    out.hp_bwd.resize(grid.n);

    const double om = mode.omega, gm = mode.gamma;
    const double lead_p = (p.omega_eff * p.omega_eff - om * om) / (p.gamma_eff + gm);
    for (std::size_t k = 0; k < grid.n; ++k) {
        const double w = grid.omega(k);
        const cplx chi_eff =
            1.0 / cplx{p.omega_eff * p.omega_eff - w * w, -p.gamma_eff * w};
        const cplx hq = p.a * cplx{1.0, -p.b * w} * chi_eff;
        const cplx hp = -(p.a * p.b / om) * cplx{om * om, w * lead_p} * chi_eff;
        out.hq_fwd[k] = hq;
        out.hp_fwd[k] = hp;
        out.hq_bwd[k] = std::conj(hq);
        out.hp_bwd[k] = -std::conj(hp);
    }
    return out;
}

inline WienerFilterSet analytic_viscous_filters(const ModeModel& mode, double eta,
                                                const FrequencyGrid& grid) {
    MeasurementModel meas;
    meas.eta = eta;
    meas.signal_modes = {mode};
    NoiseComponent shot;
    shot.kind = NoiseComponent::Kind::ShotFloor;
    shot.level = 0.5;
    meas.noise_components = {shot};
    return analytic_viscous_filters(meas, grid);
}

// ---------------------------------------------------------------------------
// Diagnostics

struct FilterQuality {
    double causal_leakage_q = 0.0;
    double causal_leakage_p = 0.0;
    std::vector<double> notches;   // omega > 0 local minima of |Hq_fwd| below 1e-2 of max
    double passband_center = 0.0;  // omega > 0 argmax of |Hq_fwd|
};

inline FilterQuality filter_quality(const WienerFilterSet& f) {
    FilterQuality q;
    q.causal_leakage_q = detail::lag_energy_fraction(f.grid, f.hq_fwd, true);
    q.causal_leakage_p = detail::lag_energy_fraction(f.grid, f.hp_fwd, true);

    const std::size_t z = f.grid.zero_bin();
    std::vector<double> mag(f.grid.n - z);
    for (std::size_t k = z; k < f.grid.n; ++k) mag[k - z] = std::abs(f.hq_fwd[k]);
    double mx = 0.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < mag.size(); ++i)
        if (mag[i] > mx) {
            mx = mag[i];
            arg = i;
        }
    q.passband_center = f.grid.omega(z + arg);
    const double thresh = 1e-2 * mx;
    for (std::size_t i = 1; i + 1 < mag.size(); ++i)
        if (mag[i] < thresh && mag[i] < mag[i - 1] && mag[i] <= mag[i + 1])
            q.notches.push_back(f.grid.omega(z + i));
    return q;
}

}  // namespace mechcond
