#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mechcond/wiener.hpp"

using namespace mechcond;

namespace {

MeasurementModel bench_model(double cooperativity) {
    ModeModel m;
    m.omega = kTwoPi * 1e6;
    m.gamma = m.omega / 1e3;  // Q = 1e3
    m.mu = cooperativity * m.gamma;
    m.n_th = 1e3;
    m.damping = Damping::Viscous;
    MeasurementModel meas;
    meas.eta = 0.3;
    meas.signal_modes = {m};
    NoiseComponent shot;
    shot.kind = NoiseComponent::Kind::ShotFloor;
    shot.level = 0.5;
    meas.noise_components = {shot};
    return meas;
}

FrequencyGrid bench_grid(const MeasurementModel& meas, double span_factor) {
    const ModeModel& m = meas.signal_modes[0];
    const ViscousFilterParams p = analytic_viscous_params(m, meas.eta);
    const double span = span_factor * std::max(m.omega, p.omega_eff + p.gamma_eff);
    const double d_omega_max = m.gamma / 8.0;
    const std::size_t n = next_pow2(std::size_t(std::ceil(span / d_omega_max)));
    return FrequencyGrid{n, span / double(n)};
}

double rel_l2(const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        num += std::norm(a[k] - b[k]);
        den += std::norm(b[k]);
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("synthesized filters match the closed-form solution") {
    // the closed form folds the backaction heating into n_tot, so the
    // numerical route must be handed the heated model; feeding it the bare
    // one leaves a systematic offset proportional to C
    for (double coop : {0.1, 1.0, 10.0}) {
        const MeasurementModel meas = bench_model(coop);
        const FrequencyGrid g = bench_grid(meas, 128.0);
        const WienerFilterSet num = synthesize_filters(with_backaction_heating(meas), {1}, g);
        const WienerFilterSet ana = analytic_viscous_filters(meas, g);
        INFO("C = " << coop);
        CHECK(rel_l2(num.hq_fwd, ana.hq_fwd) < 2e-4);
        CHECK(rel_l2(num.hp_fwd, ana.hp_fwd) < 2e-4);
        CHECK(rel_l2(num.hq_bwd, ana.hq_bwd) < 2e-4);
        CHECK(rel_l2(num.hp_bwd, ana.hp_bwd) < 2e-4);
    }
}

TEST_CASE("backward filters are the mirrored conjugates of the forward ones") {
    const MeasurementModel meas = bench_model(1.0);
    const FrequencyGrid g = bench_grid(meas, 32.0);
    const WienerFilterSet f = synthesize_filters(meas, {1}, g);
    double worst_q = 0.0, worst_p = 0.0, scale_q = 0.0, scale_p = 0.0;
    for (std::size_t k = 0; k < g.n; ++k) {
        worst_q = std::max(worst_q, std::abs(f.hq_bwd[k] - std::conj(f.hq_fwd[k])));
        worst_p = std::max(worst_p, std::abs(f.hp_bwd[k] + std::conj(f.hp_fwd[k])));
        scale_q = std::max(scale_q, std::abs(f.hq_fwd[k]));
        scale_p = std::max(scale_p, std::abs(f.hp_fwd[k]));
    }
    CHECK(worst_q < 1e-9 * scale_q);
    CHECK(worst_p < 1e-9 * scale_p);
}

TEST_CASE("forward filters are causal to grid accuracy") {
    // The position filter carries a 1/omega spectral tail, so truncating it on
    // a finite span scatters tail energy into negative lags. That residue is a
    // discretization artifact and must shrink as the span grows.
    const MeasurementModel meas = bench_model(10.0);
    const WienerFilterSet f = synthesize_filters(meas, {1}, bench_grid(meas, 128.0));
    CHECK(f.causal_leakage_q < 5e-4);
    CHECK(f.causal_leakage_p < 1e-5);

    const MeasurementModel small = bench_model(0.1);
    const WienerFilterSet coarse = synthesize_filters(small, {1}, bench_grid(small, 32.0));
    const WienerFilterSet fine = synthesize_filters(small, {1}, bench_grid(small, 512.0));
    CHECK(fine.causal_leakage_q < 0.25 * coarse.causal_leakage_q);
}

TEST_CASE("filter quality reports a passband at the conditioned resonance") {
    const MeasurementModel meas = bench_model(1.0);
    const FrequencyGrid g = bench_grid(meas, 32.0);
    const WienerFilterSet f = synthesize_filters(meas, {1}, g);
    const FilterQuality q = filter_quality(f);
    const ModeModel& m = meas.signal_modes[0];
    CHECK(q.passband_center > 0.9 * m.omega);
    CHECK(q.passband_center < 1.1 * m.omega);
    CHECK(q.causal_leakage_q < 1e-3);
}

TEST_CASE("analytic parameters are consistent") {
    const ModeModel m = bench_model(10.0).signal_modes[0];
    const ViscousFilterParams p = analytic_viscous_params(m, 0.3);
    CHECK(p.n_tot == doctest::Approx(1e3 + 10.0 + 0.5));
    CHECK(p.omega_eff > m.omega);
    CHECK(p.gamma_eff > m.gamma);
    CHECK(p.a > 0.0);
    CHECK(p.b > 0.0);
    // stiffening obeys the quartic budget
    const double lhs = std::pow(p.omega_eff, 4.0);
    const double rhs = 16.0 * 0.3 * m.gamma * m.gamma * 10.0 * p.n_tot * m.omega * m.omega +
                       std::pow(m.omega, 4.0);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("filter synthesis records the collective measurement rate") {
    const MeasurementModel meas = bench_model(1.0);
    const FrequencyGrid g = bench_grid(meas, 32.0);
    const WienerFilterSet f = synthesize_filters(meas, {1}, g);
    CHECK(f.mu_collective == doctest::Approx(meas.signal_modes[0].mu));
    CHECK(f.grid == g);
}

TEST_CASE("subset validation propagates") {
    const MeasurementModel meas = bench_model(1.0);
    const FrequencyGrid g = bench_grid(meas, 32.0);
    CHECK_THROWS_AS((void)synthesize_filters(meas, {2}, g), std::invalid_argument);
    CHECK_THROWS_AS((void)synthesize_filters(meas, {}, g), std::invalid_argument);
}

TEST_CASE("closed-form filters refuse non-viscous or non-shot inputs") {
    MeasurementModel meas = bench_model(1.0);
    const FrequencyGrid g = bench_grid(meas, 32.0);
    meas.signal_modes[0].damping = Damping::Structural;
    CHECK_THROWS_AS((void)analytic_viscous_filters(meas, g), std::invalid_argument);
    meas = bench_model(1.0);
    meas.noise_components[0].level = 0.7;
    CHECK_THROWS_AS((void)analytic_viscous_filters(meas, g), std::invalid_argument);
}
