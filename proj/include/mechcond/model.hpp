#pragma once

// Thermomechanical spectra for structurally and viscously damped modes, and
// the homodyne photocurrent model built on top of them.
//
// Conventions (fixed across the library):
//  * all frequencies are angular [rad/s]; configs speak Hz and are converted
//    on load;
//  * q and p are dimensionless zero-point-normalized quadratures, ground-state
//    variance 1/2, so thermal equilibrium reads int S_qq domega/2pi = n_th + 1/2;
//  * per-mode momentum is p_j = qdot_j / Omega_j ("canonical"); the "literal"
//    convention drops the 1/Omega_j and is kept only for cross-checks;
//  * the photocurrent is Y = 2 sqrt(eta) sum_j sqrt(mu_j) q_j + noise with a
//    white shot floor of 1/2 in these units.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mechcond/grid.hpp"

namespace mechcond {

inline constexpr double kBoltzmann = 1.380649e-23;   // J/K
inline constexpr double kHbar = 1.054571817e-34;     // J*s
inline constexpr double kDefaultTemperature = 295.0; // K
inline constexpr double kDefaultCornerHz = 1.0e4;    // loss-angle corner, f_c

enum class Damping { Viscous, Structural };

inline double thermal_occupancy(double omega, double temperature) {
    if (!(omega > 0.0)) throw std::invalid_argument("thermal_occupancy: omega must be positive");
    return kBoltzmann * temperature / (kHbar * omega);
}

struct ModeModel {
    double omega = 0.0;    // resonance [rad/s]
    double gamma = 0.0;    // linewidth [rad/s]
    double mu = 0.0;       // measurement rate [rad/s]
    double n_th = 0.0;     // thermal occupancy
    double f_white = 0.0;  // extra flat force PSD (backaction channel); not a config field
    Damping damping = Damping::Structural;
    double omega_c = kTwoPi * kDefaultCornerHz;  // loss-angle corner [rad/s], structural only
    std::string label;

    double quality() const { return omega / gamma; }
    double cooperativity() const { return mu / gamma; }

    void validate() const {
        if (!(omega > 0.0)) throw std::invalid_argument("ModeModel: omega must be positive");
        if (!(gamma > 0.0)) throw std::invalid_argument("ModeModel: gamma must be positive");
        if (!(mu >= 0.0)) throw std::invalid_argument("ModeModel: mu must be non-negative");
        if (!(n_th >= 0.0)) throw std::invalid_argument("ModeModel: n_th must be non-negative");
        if (!(f_white >= 0.0))
            throw std::invalid_argument("ModeModel: f_white must be non-negative");
        if (!(omega / gamma > 1.0)) throw std::invalid_argument("ModeModel: requires Q > 1");
        if (damping == Damping::Structural && !(omega_c > 0.0))
            throw std::invalid_argument("ModeModel: structural damping requires omega_c > 0");
    }
};

struct NoiseComponent {
    enum class Kind { ShotFloor, LorentzianPeak, StructuralPeak, TabulatedCurve };

    Kind kind = Kind::ShotFloor;
    double level = 0.5;     // ShotFloor: white PSD level

    // LorentzianPeak: resonant profile height * (gamma*omega0)^2 / ((w^2-w0^2)^2 + gamma^2 w^2)
    double center = 0.0;
    double width = 0.0;
    double height = 0.0;

    // StructuralPeak: a mode-shaped spur; PSD = height * S_qq(shape) / S_qq(shape, peak)
    ModeModel shape;

    // TabulatedCurve: linear interpolation, zero outside the table
    std::vector<double> tab_omega;
    std::vector<double> tab_value;

    std::string label;
};

enum class MomentumConvention { Canonical, Literal };

struct MeasurementModel {
    double eta = 1.0;  // detection efficiency, (0, 1]
    std::vector<ModeModel> signal_modes;
    std::vector<NoiseComponent> noise_components;
    MomentumConvention momentum_convention = MomentumConvention::Canonical;

    void validate() const {
        if (!(eta > 0.0 && eta <= 1.0))
            throw std::invalid_argument("MeasurementModel: eta must lie in (0, 1]");
        for (const auto& m : signal_modes) m.validate();
    }

    double max_mode_omega() const {
        double w = 0.0;
        for (const auto& m : signal_modes) w = std::max(w, m.omega);
        for (const auto& c : noise_components) {
            if (c.kind == NoiseComponent::Kind::LorentzianPeak) w = std::max(w, c.center);
            if (c.kind == NoiseComponent::Kind::StructuralPeak) w = std::max(w, c.shape.omega);
        }
        return w;
    }

    double min_feature_width() const {
        double w = std::numeric_limits<double>::infinity();
        for (const auto& m : signal_modes) w = std::min(w, m.gamma);
        for (const auto& c : noise_components) {
            if (c.kind == NoiseComponent::Kind::LorentzianPeak) w = std::min(w, c.width);
            if (c.kind == NoiseComponent::Kind::StructuralPeak) w = std::min(w, c.shape.gamma);
        }
        return w;
    }
};

// ---------------------------------------------------------------------------
// Loss angle and single-mode spectra

// phi(omega), odd in omega. Viscous: omega/(Q*Omega). Structural:
// omega/(Q*sqrt(omega^2 + omega_c^2)), saturating at 1/Q above the corner.
inline double loss_angle(const ModeModel& m, double omega) {
    const double invq = m.gamma / m.omega;
    if (m.damping == Damping::Viscous) return omega * invq / m.omega;
    if (!(m.omega_c > 0.0))
        throw std::invalid_argument("loss_angle: structural damping requires omega_c > 0");
    return omega * invq / std::sqrt(omega * omega + m.omega_c * m.omega_c);
}

namespace detail {

// phi(omega)/omega, finite at omega = 0.
inline double loss_angle_over_omega(const ModeModel& m, double omega) {
    const double invq = m.gamma / m.omega;
    if (m.damping == Damping::Viscous) return invq / m.omega;
    return invq / std::sqrt(omega * omega + m.omega_c * m.omega_c);
}

}  // namespace detail

// Two-sided position PSD. With phi2 = Omega^2 * phi(omega):
//   S_qq = [(2 n_th + 1) * Omega^2 * (phi/omega) + f_white] * Omega^2
//          / ((omega^2-Omega^2)^2 + phi2^2),
// normalized so the viscous integral at f_white = 0 is exactly n_th + 1/2.
// f_white is a flat force PSD riding on top of the damping-shaped thermal
// force; it keeps its white spectrum under either damping law.
inline double position_psd_at(const ModeModel& m, double omega) {
    if (m.damping == Damping::Structural && !(m.omega_c > 0.0))
        throw std::invalid_argument("position_psd: structural damping requires omega_c > 0");
    const double w2 = omega * omega;
    const double o2 = m.omega * m.omega;
    const double det = w2 - o2;
    const double phi2 = o2 * loss_angle(m, omega);
    const double denom = det * det + phi2 * phi2;
    const double s_ff =
        (2.0 * m.n_th + 1.0) * o2 * detail::loss_angle_over_omega(m, omega) + m.f_white;
    return s_ff * o2 / denom;
}

inline std::vector<double> position_psd(const ModeModel& m, const FrequencyGrid& g) {
    m.validate();
    std::vector<double> s(g.n);
    for (std::size_t k = 0; k < g.n; ++k) s[k] = position_psd_at(m, g.omega(k));
    return s;
}

inline double momentum_psd_at(const ModeModel& m, double omega) {
    const double r = omega / m.omega;
    return r * r * position_psd_at(m, omega);
}

inline std::vector<double> momentum_psd(const ModeModel& m, const FrequencyGrid& g) {
    m.validate();
    std::vector<double> s(g.n);
    for (std::size_t k = 0; k < g.n; ++k) s[k] = momentum_psd_at(m, g.omega(k));
    return s;
}

// Mechanical susceptibility used for trajectory synthesis:
// q(omega) = chi(omega) * f(omega) with |chi|^2 * S_FF = S_qq and
// S_FF = (2 n_th + 1) * Omega^2 * phi(omega)/omega.
inline cplx susceptibility(const ModeModel& m, double omega) {
    const double o2 = m.omega * m.omega;
    const cplx denom{o2 - omega * omega, -o2 * loss_angle(m, omega)};
    return m.omega / denom;
}

inline double thermal_force_psd_at(const ModeModel& m, double omega) {
    return (2.0 * m.n_th + 1.0) * m.omega * m.omega * detail::loss_angle_over_omega(m, omega);
}

// ---------------------------------------------------------------------------
// Noise components and the photocurrent PSD

inline double noise_psd_at(const NoiseComponent& c, double omega) {
    switch (c.kind) {
        case NoiseComponent::Kind::ShotFloor:
            return c.level;
        case NoiseComponent::Kind::LorentzianPeak: {
            const double w2 = omega * omega;
            const double c2 = c.center * c.center;
            const double det = w2 - c2;
            const double gw = c.width * omega;
            return c.height * c.width * c.width * c2 / (det * det + gw * gw + 1e-300);
        }
        case NoiseComponent::Kind::StructuralPeak: {
            const double peak = position_psd_at(c.shape, c.shape.omega);
            return c.height * position_psd_at(c.shape, omega) / peak;
        }
        case NoiseComponent::Kind::TabulatedCurve: {
            const auto& xs = c.tab_omega;
            const auto& ys = c.tab_value;
            if (xs.empty() || xs.size() != ys.size())
                throw std::invalid_argument("noise_psd: malformed tabulated curve");
            if (omega <= xs.front() || omega >= xs.back()) {
                if (omega == xs.front()) return ys.front();
                if (omega == xs.back()) return ys.back();
                return 0.0;
            }
            auto it = std::upper_bound(xs.begin(), xs.end(), omega);
            const std::size_t i = std::size_t(it - xs.begin());
            const double t = (omega - xs[i - 1]) / (xs[i] - xs[i - 1]);
            return ys[i - 1] + t * (ys[i] - ys[i - 1]);
        }
    }
    return 0.0;
}

inline bool has_shot_floor(const MeasurementModel& meas) {
    for (const auto& c : meas.noise_components)
        if (c.kind == NoiseComponent::Kind::ShotFloor) return true;
    return false;
}

inline double measurement_noise_psd_at(const MeasurementModel& meas, double omega) {
    double s = 0.0;
    for (const auto& c : meas.noise_components) s += noise_psd_at(c, omega);
    return s;
}

inline void check_grid_covers(const MeasurementModel& meas, const FrequencyGrid& g) {
    const double wmax = meas.max_mode_omega();
    if (g.omega_max() < 8.0 * wmax)
        throw std::invalid_argument("FrequencyGrid: span must cover 8x the highest resonance");
}

// S_YY = 4 eta sum_j mu_j S_{q_j q_j} + S_NN. Fails without a shot floor:
// a noise-free model has no finite-variance photocurrent.
inline std::vector<double> photocurrent_psd(const MeasurementModel& meas, const FrequencyGrid& g) {
    meas.validate();
    if (!has_shot_floor(meas))
        throw std::invalid_argument("photocurrent_psd: model lacks a ShotFloor noise component");
    check_grid_covers(meas, g);
    std::vector<double> s(g.n, 0.0);
    for (const auto& m : meas.signal_modes) {
        const double w = 4.0 * meas.eta * m.mu;
        for (std::size_t k = 0; k < g.n; ++k) s[k] += w * position_psd_at(m, g.omega(k));
    }
    for (std::size_t k = 0; k < g.n; ++k) s[k] += measurement_noise_psd_at(meas, g.omega(k));
    return s;
}

// ---------------------------------------------------------------------------
// Collective coordinates

// Sum of mu over a subset (1-based indices into signal_modes).
inline double collective_mu(const MeasurementModel& meas, const std::vector<std::size_t>& subset) {
    double mu = 0.0;
    for (std::size_t idx : subset) {
        if (idx < 1 || idx > meas.signal_modes.size())
            throw std::invalid_argument("subset: mode index out of range");
        mu += meas.signal_modes[idx - 1].mu;
    }
    return mu;
}

struct CrossSpectra {
    FrequencyGrid grid;
    std::vector<double> s_qy;   // real, even
    std::vector<cplx> s_py;     // imaginary, odd
    std::vector<double> s_qq;   // collective position PSD
    std::vector<double> s_pp;   // collective momentum PSD
    double mu_collective = 0.0;
};

// Cross-spectra of the collective coordinates q^(N) = sum_j w_j q_j,
// w_j = sqrt(mu_j / mu^(N)), against the photocurrent:
//   S_qY = 2 sqrt(eta) sum_j (mu_j / sqrt(mu^(N))) S_{q_j q_j}
//   S_pY = sum_j (-i omega / Omega_j) [per-mode term]   (canonical)
inline CrossSpectra collective_cross_spectra(const MeasurementModel& meas,
                                             const std::vector<std::size_t>& subset,
                                             const FrequencyGrid& g) {
    meas.validate();
    if (subset.empty()) throw std::invalid_argument("collective_cross_spectra: empty subset");
    CrossSpectra out;
    out.grid = g;
    out.mu_collective = collective_mu(meas, subset);
    if (!(out.mu_collective > 0.0))
        throw std::invalid_argument("collective_cross_spectra: subset has zero mu");
    out.s_qy.assign(g.n, 0.0);
    out.s_py.assign(g.n, cplx{0.0, 0.0});
    out.s_qq.assign(g.n, 0.0);
    out.s_pp.assign(g.n, 0.0);

    const double root_mu = std::sqrt(out.mu_collective);
    const bool literal = meas.momentum_convention == MomentumConvention::Literal;
    for (std::size_t idx : subset) {
        const ModeModel& m = meas.signal_modes[idx - 1];
        const double wq = 2.0 * std::sqrt(meas.eta) * m.mu / root_mu;  // cross-spectrum weight
        const double w2 = m.mu / out.mu_collective;                    // PSD weight w_j^2
        const double inv_omega = literal ? 1.0 : 1.0 / m.omega;
        for (std::size_t k = 0; k < g.n; ++k) {
            const double w = g.omega(k);
            const double sk = position_psd_at(m, w);
            out.s_qy[k] += wq * sk;
            out.s_py[k] += cplx{0.0, -w * inv_omega} * (wq * sk);
            out.s_qq[k] += w2 * sk;
            const double r = w * inv_omega;
            out.s_pp[k] += w2 * r * r * sk;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Equipartition integrals and loss-angle corner calibration

namespace detail {

inline std::vector<double> psd_breakpoints(const ModeModel& m) {
    const double w = m.omega, gm = m.gamma;
    std::vector<double> bp{0.0};
    if (m.damping == Damping::Structural) {
        bp.push_back(std::min(m.omega_c, 0.5 * w));
        bp.push_back(std::min(10.0 * m.omega_c, 0.6 * w));
    }
    bp.push_back(std::max(0.0, w - 30.0 * gm));
    bp.push_back(w - 3.0 * gm);
    bp.push_back(w + 3.0 * gm);
    bp.push_back(w + 30.0 * gm);
    bp.push_back(8.0 * w);
    bp.push_back(std::max(16.0 * w, 2.0e4 * gm));
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
}

}  // namespace detail

// (1/2pi) int S_qq domega over the real line, by adaptive quadrature of the
// closed form (independent of any FFT grid).
inline double position_variance(const ModeModel& m, double rel_tol = 1e-9) {
    m.validate();
    auto f = [&](double w) { return position_psd_at(m, w); };
    return 2.0 * adaptive_simpson_segmented(f, detail::psd_breakpoints(m), rel_tol) / kTwoPi;
}

inline double momentum_variance(const ModeModel& m, double rel_tol = 1e-9) {
    m.validate();
    auto f = [&](double w) { return momentum_psd_at(m, w); };
    return 2.0 * adaptive_simpson_segmented(f, detail::psd_breakpoints(m), rel_tol) / kTwoPi;
}

struct OmegaCInterval {
    double lo = 0.0;  // [rad/s]
    double hi = 0.0;
    bool found = false;
};

// Scan the loss-angle corner for the contiguous interval where the
// equipartition integral stays within `tolerance` (relative) of n_th + 1/2.
// The defect grows monotonically as omega_c decreases (the 1/f wing picks up
// variance), so the interval is [first passing omega_c, scan top].
inline OmegaCInterval calibrate_omega_c(ModeModel mode, double tolerance,
                                        double scan_lo = 0.0, double scan_hi = 0.0,
                                        std::size_t coarse_points = 49) {
    mode.validate();
    if (mode.damping != Damping::Structural)
        throw std::invalid_argument("calibrate_omega_c: mode must be structurally damped");
    if (!(tolerance > 0.0)) throw std::invalid_argument("calibrate_omega_c: tolerance must be positive");
    if (scan_lo <= 0.0) scan_lo = 1e-5 * mode.omega;
    if (scan_hi <= 0.0) scan_hi = 0.5 * mode.omega;

    const double target = mode.n_th + 0.5;
    auto defect = [&](double wc) {
        mode.omega_c = wc;
        return std::abs(position_variance(mode, 1e-8) - target) / target;
    };

    OmegaCInterval out;
    const double lg_lo = std::log(scan_lo), lg_hi = std::log(scan_hi);
    double first_pass = -1.0, last_fail_below = -1.0;
    for (std::size_t i = 0; i < coarse_points; ++i) {
        const double wc = std::exp(lg_lo + (lg_hi - lg_lo) * double(i) / double(coarse_points - 1));
        if (defect(wc) <= tolerance) {
            first_pass = wc;
            break;
        }
        last_fail_below = wc;
    }
    if (first_pass < 0.0) return out;

    double lo = first_pass;
    if (last_fail_below > 0.0) {
        double a = last_fail_below, b = first_pass;
        for (int it = 0; it < 40; ++it) {
            const double mid = std::sqrt(a * b);
            (defect(mid) <= tolerance ? b : a) = mid;
        }
        lo = b;
    } else {
        lo = scan_lo;
    }
    out.lo = lo;
    out.hi = scan_hi;
    out.found = true;
    return out;
}

// ---------------------------------------------------------------------------
// Backaction heating and grid construction

// Measurement backaction drives every mode with a flat force of PSD 2 mu,
// mirrored here as the mode's f_white channel. For viscous damping this is
// identical to the occupancy boost n_th -> n_th + mu/gamma; for structural
// damping the force stays white instead of inheriting the 1/f thermal shape,
// which matters once the conditional bandwidth leaves the resonance.
inline MeasurementModel with_backaction_heating(MeasurementModel meas) {
    for (auto& m : meas.signal_modes) m.f_white += 2.0 * m.mu;
    return meas;
}

// Grid covering all resonances with margin: span >= 2 * span_factor * max
// resonance, narrowest feature spanning >= bins_per_linewidth bins, and at
// least 2^10 bins.
inline FrequencyGrid grid_for(const MeasurementModel& meas, double bins_per_linewidth = 16.0,
                              double span_factor = 8.0) {
    const double wmax = meas.max_mode_omega();
    const double wfeat = meas.min_feature_width();
    if (!(wmax > 0.0)) throw std::invalid_argument("grid_for: model has no resonances");
    const double span = 2.0 * span_factor * wmax;
    const double d_omega_max = wfeat / bins_per_linewidth;
    std::size_t n = next_pow2(std::size_t(std::ceil(span / d_omega_max)));
    n = std::max<std::size_t>(n, 1024);
    return FrequencyGrid(n, span / double(n));
}

}  // namespace mechcond
