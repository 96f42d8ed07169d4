#pragma once

// Data ingestion and model fitting: time-trace files, Welch PSD estimation,
// peak detection, and weighted log-space least squares that turns a measured
// photocurrent PSD into a MeasurementModel config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mechcond/io.hpp"
#include "mechcond/model.hpp"

namespace mechcond {

// ---------------------------------------------------------------------------
// Trace files

inline constexpr char kTraceMagic[17] = "MCONDTRACEv1\0\0\0\0";

struct TraceFile {
    std::vector<double> samples;  // raw, as stored
    double dt = 0.0;              // seconds
    double calibration = 1.0;     // multiplies samples to give normalized Y
    std::string metadata;         // JSON header text

    void validate() const {
        if (!(dt > 0.0) || !std::isfinite(dt))
            throw std::invalid_argument("TraceFile: dt must be positive");
        if (samples.size() < (std::size_t(1) << 16))
            throw std::invalid_argument("TraceFile: need at least 2^16 samples");
        for (double x : samples)
            if (!std::isfinite(x)) throw std::invalid_argument("TraceFile: non-finite sample");
    }

    std::vector<double> normalized() const {
        std::vector<double> y(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) y[i] = calibration * samples[i];
        return y;
    }
};

inline void save_trace(const std::string& path, const TraceFile& t) {
    t.validate();
    json head = t.metadata.empty() ? json::object() : json::parse(t.metadata);
    head["dt"] = t.dt;
    head["calibration"] = t.calibration;
    if (!head.contains("units")) head["units"] = "V";
    if (!head.contains("channel")) head["channel"] = "Y";
    const std::string hs = head.dump();
    std::string out;
    out.reserve(20 + hs.size() + 8 * t.samples.size());
    out.append(kTraceMagic, 16);
    detail::put_u32_le(out, std::uint32_t(hs.size()));
    out += hs;
    detail::append_f64_le(out, t.samples);
    detail::write_file(path, out);
}

namespace detail {

inline TraceFile load_trace_csv(const std::string& text, const std::string& path) {
    TraceFile t;
    std::vector<double> times;
    std::size_t pos = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw std::runtime_error("trace csv: expected 't_s,y' rows in " + path);
        char* end = nullptr;
        const double tv = std::strtod(line.c_str(), &end);
        const double yv = std::strtod(line.c_str() + comma + 1, &end);
        if (first && !(line[0] >= '0' && line[0] <= '9') && line[0] != '-' && line[0] != '+' &&
            line[0] != '.') {
            first = false;  // header row
            continue;
        }
        first = false;
        times.push_back(tv);
        t.samples.push_back(yv);
    }
    if (times.size() < 2) throw std::runtime_error("trace csv: too few rows in " + path);
    std::vector<double> diffs(times.size() - 1);
    for (std::size_t i = 0; i + 1 < times.size(); ++i) diffs[i] = times[i + 1] - times[i];
    std::nth_element(diffs.begin(), diffs.begin() + diffs.size() / 2, diffs.end());
    t.dt = diffs[diffs.size() / 2];
    t.metadata = "{}";
    return t;
}

}  // namespace detail

inline TraceFile load_trace(const std::string& path) {
    const std::string s = detail::read_file(path);
    TraceFile t;
    if (s.size() >= 20 && s.compare(0, 16, kTraceMagic, 16) == 0) {
        const std::uint32_t hlen = detail::get_u32_le(s, 16);
        const json head = json::parse(s.substr(20, hlen));
        t.dt = head.at("dt").get<double>();
        t.calibration = head.value("calibration", 1.0);
        t.metadata = head.dump();
        const std::size_t n = (s.size() - 20 - hlen) / 8;
        t.samples = detail::read_f64_le(s, 20 + hlen, n);
    } else {
        t = detail::load_trace_csv(s, path);
    }
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// Welch PSD

// Two-sided Welch estimate on the symmetric grid, Hann window, power
// normalized so white input of variance sigma^2 gives a flat PSD sigma^2 dt.
// Calibration is applied, so the estimate refers to the normalized
// photocurrent. segment_length must be a power of two.
inline SampledSpectrum welch_psd(const TraceFile& trace, std::size_t segment_length,
                                 double overlap_fraction = 0.5) {
    trace.validate();
    if (!is_pow2(segment_length) || segment_length < 16)
        throw std::invalid_argument("welch_psd: segment_length must be a power of two >= 16");
    if (segment_length > trace.samples.size())
        throw std::invalid_argument("welch_psd: segment longer than trace");
    if (!(overlap_fraction >= 0.0) || overlap_fraction > 0.9)
        throw std::invalid_argument("welch_psd: overlap must lie in [0, 0.9]");

    const std::size_t seg = segment_length;
    const std::size_t hop =
        std::max<std::size_t>(1, std::size_t(std::llround(double(seg) * (1.0 - overlap_fraction))));
    std::vector<double> window(seg);
    double wpow = 0.0;
    for (std::size_t i = 0; i < seg; ++i) {
        window[i] = 0.5 * (1.0 - std::cos(kTwoPi * double(i) / double(seg)));
        wpow += window[i] * window[i];
    }

    std::vector<double> acc(seg, 0.0);
    std::size_t count = 0;
    std::vector<cplx> buf(seg);
    for (std::size_t start = 0; start + seg <= trace.samples.size(); start += hop) {
        for (std::size_t i = 0; i < seg; ++i)
            buf[i] = cplx{trace.calibration * trace.samples[start + i] * window[i], 0.0};
        fft_inplace(buf, false);
        for (std::size_t k = 0; k < seg; ++k) acc[k] += std::norm(buf[k]);
        ++count;
    }
    const double scale = trace.dt / (wpow * double(count));

    // FFT bin k corresponds to omega = 2 pi k/(seg dt) (k < seg/2) and its
    // mirror; fold onto the ascending symmetric grid.
    SampledSpectrum out;
    out.grid = FrequencyGrid{seg, kTwoPi / (double(seg) * trace.dt)};
    out.values.assign(seg, cplx{0.0, 0.0});
    const std::size_t half = seg / 2;
    for (std::size_t k = 0; k < seg; ++k) {
        const std::size_t fft_bin = (k + half) % seg;  // ascending order -> FFT order
        out.values[k] = cplx{acc[fft_bin] * scale, 0.0};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Peak detection

struct PeakGuess {
    double omega = 0.0;   // rad/s
    double height = 0.0;  // PSD at the peak
    double width = 0.0;   // half-power full width, rad/s
};

// Local maxima on the positive half sitting at least 6 dB above the local
// median; width from half-power crossings.
inline std::vector<PeakGuess> detect_peaks(const SampledSpectrum& psd,
                                           double prominence_db = 6.0) {
    psd.validate();
    const FrequencyGrid& g = psd.grid;
    const std::size_t n = g.n, zero = g.zero_bin();
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = psd.values[k].real();

    const double factor = std::pow(10.0, prominence_db / 10.0);
    const std::size_t med_win = std::max<std::size_t>(25, n / 128);
    std::vector<PeakGuess> peaks;
    for (std::size_t k = zero + 2; k + 2 < n; ++k) {
        if (!(v[k] > v[k - 1] && v[k] >= v[k + 1] && v[k] > v[k - 2] && v[k] >= v[k + 2]))
            continue;
        const std::size_t lo = k > med_win ? k - med_win : zero;
        const std::size_t hi = std::min(n, k + med_win);
        std::vector<double> win(v.begin() + std::ptrdiff_t(lo), v.begin() + std::ptrdiff_t(hi));
        std::nth_element(win.begin(), win.begin() + win.size() / 2, win.end());
        const double med = win[win.size() / 2];
        if (!(v[k] > factor * med)) continue;
        PeakGuess p;
        p.omega = g.omega(k);
        p.height = v[k];
        const double half_power = 0.5 * v[k];
        std::size_t l = k, r = k;
        while (l > zero && v[l] > half_power) --l;
        while (r + 1 < n && v[r] > half_power) ++r;
        p.width = double(r - l) * g.d_omega;
        // keep only the tallest sample within a half-width neighborhood
        if (!peaks.empty() && p.omega - peaks.back().omega < 0.5 * (p.width + peaks.back().width)) {
            if (p.height > peaks.back().height) peaks.back() = p;
            continue;
        }
        peaks.push_back(p);
    }
    return peaks;
}

// ---------------------------------------------------------------------------
// PSD model fitting

struct FitEstimate {
    std::string name;
    double value = 0.0;
    double stderr_ = 0.0;
};

struct FitResult {
    MeasurementModel model;
    std::vector<FitEstimate> estimates;
    double residual = 0.0;  // RMS of log-PSD residuals over fitted bins
    bool converged = false;
    std::size_t iterations = 0;
    std::string message;
};

namespace detail {

// Free parameters: per mode (omega, gamma, mu); per noise component
// (Lorentzian/structural peak: center, width, height; shot floor: level).
// Thermal occupancies, eta, corner frequencies, and tabulated curves stay
// fixed: amplitude trades off exactly against mu, so n_th must come from the
// temperature, and the corner is calibrated by equipartition, not PSD shape.
struct FitPacking {
    std::vector<std::string> names;

    static FitPacking for_model(const MeasurementModel& meas) {
        FitPacking p;
        for (std::size_t j = 0; j < meas.signal_modes.size(); ++j) {
            const std::string tag = "mode" + std::to_string(j + 1) + ".";
            p.names.push_back(tag + "omega");
            p.names.push_back(tag + "gamma");
            p.names.push_back(tag + "mu");
        }
        for (std::size_t i = 0; i < meas.noise_components.size(); ++i) {
            const std::string tag = "noise" + std::to_string(i + 1) + ".";
            switch (meas.noise_components[i].kind) {
                case NoiseComponent::Kind::ShotFloor:
                    p.names.push_back(tag + "level");
                    break;
                case NoiseComponent::Kind::LorentzianPeak:
                case NoiseComponent::Kind::StructuralPeak:
                    p.names.push_back(tag + "center");
                    p.names.push_back(tag + "width");
                    p.names.push_back(tag + "height");
                    break;
                case NoiseComponent::Kind::TabulatedCurve:
                    break;
            }
        }
        return p;
    }

    std::vector<double> pack(const MeasurementModel& meas) const {
        std::vector<double> th;
        auto push = [&](double v) {
            if (!(v > 0.0)) throw std::invalid_argument("fit_psd: parameters must be positive");
            th.push_back(std::log(v));
        };
        for (const auto& m : meas.signal_modes) {
            push(m.omega);
            push(m.gamma);
            push(m.mu);
        }
        for (const auto& c : meas.noise_components) {
            switch (c.kind) {
                case NoiseComponent::Kind::ShotFloor:
                    push(c.level);
                    break;
                case NoiseComponent::Kind::LorentzianPeak:
                    push(c.center);
                    push(c.width);
                    push(c.height);
                    break;
                case NoiseComponent::Kind::StructuralPeak:
                    push(c.shape.omega);
                    push(c.shape.gamma);
                    push(c.height);
                    break;
                case NoiseComponent::Kind::TabulatedCurve:
                    break;
            }
        }
        return th;
    }

    MeasurementModel unpack(const MeasurementModel& base, const std::vector<double>& th) const {
        MeasurementModel meas = base;
        std::size_t i = 0;
        auto pull = [&]() { return std::exp(th.at(i++)); };
        for (auto& m : meas.signal_modes) {
            m.omega = pull();
            m.gamma = pull();
            m.mu = pull();
        }
        for (auto& c : meas.noise_components) {
            switch (c.kind) {
                case NoiseComponent::Kind::ShotFloor:
                    c.level = pull();
                    break;
                case NoiseComponent::Kind::LorentzianPeak:
                    c.center = pull();
                    c.width = pull();
                    c.height = pull();
                    break;
                case NoiseComponent::Kind::StructuralPeak:
                    c.shape.omega = pull();
                    c.shape.gamma = pull();
                    c.height = pull();
                    break;
                case NoiseComponent::Kind::TabulatedCurve:
                    break;
            }
        }
        return meas;
    }
};

inline double model_psd_at(const MeasurementModel& meas, double omega) {
    double s = 0.0;
    for (const auto& m : meas.signal_modes)
        s += 4.0 * meas.eta * m.mu * position_psd_at(m, omega);
    return s + measurement_noise_psd_at(meas, omega);
}

// Solve A x = b for symmetric positive definite A (in place Cholesky).
inline bool cholesky_solve(std::vector<double>& a, std::vector<double>& b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            double sum = a[i * n + j];
            for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (!(sum > 0.0)) return false;
                a[i * n + i] = std::sqrt(sum);
            } else {
                a[j * n + i] = sum / a[i * n + i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= a[i * n + k] * b[k];
        b[i] = sum / a[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double sum = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) sum -= a[k * n + ii] * b[k];
        b[ii] = sum / a[ii * n + ii];
    }
    return true;
}

}  // namespace detail

struct FrequencyMask {
    double lo = 0.0;  // rad/s
    double hi = 0.0;
};

// Weighted least squares on log PSD (uniform weights in log space; the PSD
// spans many decades, so a linear objective would see only the peaks).
// Levenberg-Marquardt over log-reparameterized positive parameters,
// finite-difference Jacobian, at most 500 iterations. Masked bins are
// excluded from the objective entirely.
inline FitResult fit_psd(const SampledSpectrum& psd, const MeasurementModel& initial,
                         const std::vector<FrequencyMask>& masks = {}) {
    psd.validate();
    initial.validate();
    if (initial.signal_modes.empty())
        throw std::invalid_argument("fit_psd: template needs at least one mode");

    const FrequencyGrid& g = psd.grid;
    std::vector<double> wbin, data_log;
    for (std::size_t k = g.zero_bin() + 1; k < g.n; ++k) {
        const double w = g.omega(k);
        const double s = psd.values[k].real();
        if (!(s > 0.0)) continue;
        bool masked = false;
        for (const auto& m : masks)
            if (w >= m.lo && w <= m.hi) masked = true;
        if (masked) continue;
        wbin.push_back(w);
        data_log.push_back(std::log(s));
    }
    const std::size_t nb = wbin.size();
    const detail::FitPacking packing = detail::FitPacking::for_model(initial);
    const std::size_t np = packing.names.size();
    if (nb < 2 * np) throw std::invalid_argument("fit_psd: too few unmasked bins");

    std::vector<double> theta = packing.pack(initial);
    auto residuals = [&](const std::vector<double>& th, std::vector<double>& r) {
        const MeasurementModel m = packing.unpack(initial, th);
        for (std::size_t b = 0; b < nb; ++b) {
            const double s = detail::model_psd_at(m, wbin[b]);
            r[b] = (s > 0.0 ? std::log(s) : -700.0) - data_log[b];
        }
    };

    std::vector<double> r(nb), r_try(nb), jac(nb * np);
    residuals(theta, r);
    double cost = 0.0;
    for (double x : r) cost += x * x;

    double lambda = 1e-3;
    std::size_t iter = 0;
    bool converged = false;
    for (; iter < 500; ++iter) {
        // finite-difference Jacobian
        const double h = 1e-6;
        std::vector<double> th = theta;
        for (std::size_t p = 0; p < np; ++p) {
            th[p] = theta[p] + h;
            residuals(th, r_try);
            for (std::size_t b = 0; b < nb; ++b) jac[b * np + p] = (r_try[b] - r[b]) / h;
            th[p] = theta[p];
        }
        std::vector<double> jtj(np * np, 0.0), jtr(np, 0.0);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t p = 0; p < np; ++p) {
                jtr[p] += jac[b * np + p] * r[b];
                for (std::size_t q = p; q < np; ++q)
                    jtj[p * np + q] += jac[b * np + p] * jac[b * np + q];
            }
        for (std::size_t p = 0; p < np; ++p)
            for (std::size_t q = 0; q < p; ++q) jtj[p * np + q] = jtj[q * np + p];

        bool stepped = false;
        for (int attempt = 0; attempt < 12 && !stepped; ++attempt) {
            std::vector<double> a = jtj;
            for (std::size_t p = 0; p < np; ++p) a[p * np + p] *= 1.0 + lambda;
            std::vector<double> step(jtr);
            if (!detail::cholesky_solve(a, step, np)) {
                lambda *= 4.0;
                continue;
            }
            std::vector<double> th_try = theta;
            double step_max = 0.0;
            for (std::size_t p = 0; p < np; ++p) {
                th_try[p] -= step[p];
                step_max = std::max(step_max, std::abs(step[p]));
            }
            residuals(th_try, r_try);
            double cost_try = 0.0;
            for (double x : r_try) cost_try += x * x;
            if (cost_try < cost) {
                const double rel_drop = (cost - cost_try) / std::max(cost, 1e-300);
                theta = std::move(th_try);
                r = r_try;
                cost = cost_try;
                lambda = std::max(lambda / 3.0, 1e-12);
                stepped = true;
                if (step_max < 1e-9 || rel_drop < 1e-12) converged = true;
            } else {
                lambda *= 4.0;
            }
        }
        if (!stepped || converged) {
            converged = converged || !stepped;
            break;
        }
    }

    FitResult out;
    out.model = packing.unpack(initial, theta);
    out.iterations = iter + 1;
    out.converged = converged;
    out.residual = std::sqrt(cost / double(nb));
    out.message = converged ? "converged" : "iteration budget exhausted; best-so-far returned";
    out.message += "; objective: uniform-weight log-PSD least squares (per-bin Welch "
                   "weights not applied)";

    // standard errors from the Gauss-Newton curvature at the optimum
    {
        const double h = 1e-6;
        std::vector<double> th = theta;
        residuals(theta, r);
        for (std::size_t p = 0; p < np; ++p) {
            th[p] = theta[p] + h;
            residuals(th, r_try);
            for (std::size_t b = 0; b < nb; ++b) jac[b * np + p] = (r_try[b] - r[b]) / h;
            th[p] = theta[p];
        }
        std::vector<double> jtj(np * np, 0.0);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t p = 0; p < np; ++p)
                for (std::size_t q = p; q < np; ++q)
                    jtj[p * np + q] += jac[b * np + p] * jac[b * np + q];
        for (std::size_t p = 0; p < np; ++p)
            for (std::size_t q = 0; q < p; ++q) jtj[p * np + q] = jtj[q * np + p];
        const double sigma2 = cost / double(nb > np ? nb - np : 1);
        for (std::size_t p = 0; p < np; ++p) {
            // solve JtJ x = e_p for the diagonal of the inverse
            std::vector<double> a = jtj, e(np, 0.0);
            e[p] = 1.0;
            double se_log = 0.0;
            if (detail::cholesky_solve(a, e, np) && e[p] > 0.0) se_log = std::sqrt(sigma2 * e[p]);
            FitEstimate est;
            est.name = packing.names[p];
            est.value = std::exp(theta[p]);
            est.stderr_ = est.value * se_log;
            out.estimates.push_back(std::move(est));
        }
    }
    if (!std::isfinite(out.residual)) throw std::runtime_error("fit_psd: non-finite residual");
    return out;
}

// Emit the fitted model as a config file; the written file round-trips
// losslessly through load_measurement_model / save_measurement_model.
inline void model_export(const FitResult& fit, const std::string& path) {
    save_measurement_model(path, fit.model);
}

}  // namespace mechcond
