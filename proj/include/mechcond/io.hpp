#pragma once

// Serialization: measurement-model configs (JSON, frequencies in Hz),
// spectra/filter/scatter CSVs, trajectory-bundle binaries, conditioning
// reports, and run manifests.
//
// Configs carry frequencies in Hz because that is how device parameters are
// quoted; everything in-memory is rad/s. Written Hz values are stabilized so
// that write -> read -> write reproduces the file byte for byte.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mechcond/condition.hpp"
#include "mechcond/model.hpp"
#include "mechcond/simulate.hpp"

namespace mechcond {

using nlohmann::json;

namespace detail {

// Largest-ulp-stable quotient: returns h ~= r / k with (h * k) / k == h, so
// a value that has passed once through the Hz representation is a fixed
// point of further round trips.
inline double stable_quotient(double r, double k) {
    double h = r / k;
    for (int i = 0; i < 4; ++i) {
        const double h2 = (h * k) / k;
        if (h2 == h) break;
        h = h2;
    }
    return h;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(data.data(), std::streamsize(data.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Measurement-model config

inline json measurement_model_to_json(const MeasurementModel& meas) {
    json root;
    root["eta"] = meas.eta;
    root["momentum_convention"] =
        meas.momentum_convention == MomentumConvention::Literal ? "literal" : "canonical";
    json modes = json::array();
    for (const auto& m : meas.signal_modes) {
        json jm;
        jm["label"] = m.label;
        jm["omega_hz"] = detail::stable_quotient(m.omega, kTwoPi);
        jm["gamma_hz"] = detail::stable_quotient(m.gamma, kTwoPi);
        jm["mu_hz"] = detail::stable_quotient(m.mu, kTwoPi);
        jm["n_th"] = m.n_th;
        jm["damping"] = m.damping == Damping::Structural ? "structural" : "viscous";
        if (m.damping == Damping::Structural)
            jm["omega_c_hz"] = detail::stable_quotient(m.omega_c, kTwoPi);
        modes.push_back(std::move(jm));
    }
    root["modes"] = std::move(modes);
    json noise = json::array();
    for (const auto& c : meas.noise_components) {
        json jc;
        switch (c.kind) {
            case NoiseComponent::Kind::ShotFloor:
                jc["kind"] = "shot_floor";
                jc["level"] = c.level;
                break;
            case NoiseComponent::Kind::LorentzianPeak:
                jc["kind"] = "lorentzian_peak";
                jc["center_hz"] = detail::stable_quotient(c.center, kTwoPi);
                jc["width_hz"] = detail::stable_quotient(c.width, kTwoPi);
                jc["height"] = c.height;
                break;
            case NoiseComponent::Kind::StructuralPeak:
                jc["kind"] = "structural_peak";
                jc["center_hz"] = detail::stable_quotient(c.shape.omega, kTwoPi);
                jc["width_hz"] = detail::stable_quotient(c.shape.gamma, kTwoPi);
                jc["omega_c_hz"] = detail::stable_quotient(c.shape.omega_c, kTwoPi);
                jc["height"] = c.height;
                break;
            case NoiseComponent::Kind::TabulatedCurve: {
                jc["kind"] = "tabulated";
                json xs = json::array(), ys = json::array();
                for (double w : c.tab_omega) xs.push_back(detail::stable_quotient(w, kTwoPi));
                for (double v : c.tab_value) ys.push_back(v);
                jc["omega_hz"] = std::move(xs);
                jc["value"] = std::move(ys);
                break;
            }
        }
        if (!c.label.empty()) jc["label"] = c.label;
        noise.push_back(std::move(jc));
    }
    root["noise"] = std::move(noise);
    return root;
}

inline MeasurementModel measurement_model_from_json(const json& root) {
    MeasurementModel meas;
    meas.eta = root.at("eta").get<double>();
    if (root.contains("momentum_convention")) {
        const std::string mc = root.at("momentum_convention").get<std::string>();
        if (mc == "literal")
            meas.momentum_convention = MomentumConvention::Literal;
        else if (mc == "canonical")
            meas.momentum_convention = MomentumConvention::Canonical;
        else
            throw std::runtime_error("config: unknown momentum_convention '" + mc + "'");
    }
    for (const auto& jm : root.at("modes")) {
        ModeModel m;
        if (jm.contains("label")) m.label = jm.at("label").get<std::string>();
        m.omega = jm.at("omega_hz").get<double>() * kTwoPi;
        m.gamma = jm.at("gamma_hz").get<double>() * kTwoPi;
        m.mu = jm.at("mu_hz").get<double>() * kTwoPi;
        if (jm.contains("n_th"))
            m.n_th = jm.at("n_th").get<double>();
        else if (jm.contains("temperature_k"))
            m.n_th = thermal_occupancy(m.omega, jm.at("temperature_k").get<double>());
        else
            throw std::runtime_error("config: mode needs n_th or temperature_k");
        const std::string d = jm.at("damping").get<std::string>();
        if (d == "structural")
            m.damping = Damping::Structural;
        else if (d == "viscous")
            m.damping = Damping::Viscous;
        else
            throw std::runtime_error("config: unknown damping '" + d + "'");
        if (jm.contains("omega_c_hz")) m.omega_c = jm.at("omega_c_hz").get<double>() * kTwoPi;
        meas.signal_modes.push_back(std::move(m));
    }
    if (root.contains("noise")) {
        for (const auto& jc : root.at("noise")) {
            NoiseComponent c;
            const std::string kind = jc.at("kind").get<std::string>();
            if (kind == "shot_floor") {
                c.kind = NoiseComponent::Kind::ShotFloor;
                c.level = jc.at("level").get<double>();
            } else if (kind == "lorentzian_peak") {
                c.kind = NoiseComponent::Kind::LorentzianPeak;
                c.center = jc.at("center_hz").get<double>() * kTwoPi;
                c.width = jc.at("width_hz").get<double>() * kTwoPi;
                c.height = jc.at("height").get<double>();
            } else if (kind == "structural_peak") {
                c.kind = NoiseComponent::Kind::StructuralPeak;
                c.shape = ModeModel{};
                c.shape.omega = jc.at("center_hz").get<double>() * kTwoPi;
                c.shape.gamma = jc.at("width_hz").get<double>() * kTwoPi;
                c.shape.damping = Damping::Structural;
                if (jc.contains("omega_c_hz"))
                    c.shape.omega_c = jc.at("omega_c_hz").get<double>() * kTwoPi;
                c.height = jc.at("height").get<double>();
            } else if (kind == "tabulated") {
                c.kind = NoiseComponent::Kind::TabulatedCurve;
                for (const auto& x : jc.at("omega_hz")) c.tab_omega.push_back(x.get<double>() * kTwoPi);
                for (const auto& y : jc.at("value")) c.tab_value.push_back(y.get<double>());
            } else {
                throw std::runtime_error("config: unknown noise kind '" + kind + "'");
            }
            if (jc.contains("label")) c.label = jc.at("label").get<std::string>();
            meas.noise_components.push_back(std::move(c));
        }
    }
    meas.validate();
    return meas;
}

inline std::string measurement_model_to_string(const MeasurementModel& meas) {
    return measurement_model_to_json(meas).dump(2) + "\n";
}

inline void save_measurement_model(const std::string& path, const MeasurementModel& meas) {
    detail::write_file(path, measurement_model_to_string(meas));
}

inline MeasurementModel load_measurement_model(const std::string& path) {
    return measurement_model_from_json(json::parse(detail::read_file(path)));
}

// ---------------------------------------------------------------------------
// CSV writers

inline void write_spectrum_csv(const std::string& path, const FrequencyGrid& g,
                               const std::vector<cplx>& values) {
    if (values.size() != g.n) throw std::invalid_argument("write_spectrum_csv: size mismatch");
    std::ostringstream out;
    out << "omega_rad_s,value_re,value_im\n";
    char buf[96];
    for (std::size_t k = 0; k < g.n; ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", g.omega(k), values[k].real(),
                      values[k].imag());
        out << buf;
    }
    detail::write_file(path, out.str());
}

inline void write_spectrum_csv(const std::string& path, const FrequencyGrid& g,
                               const std::vector<double>& values) {
    std::vector<cplx> c(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) c[k] = cplx{values[k], 0.0};
    write_spectrum_csv(path, g, c);
}

inline void write_filters_csv(const std::string& path, const WienerFilterSet& f) {
    std::ostringstream out;
    out << "omega_rad_s,hq_fwd_abs,hq_fwd_arg,hp_fwd_abs,hp_fwd_arg,"
           "hq_bwd_abs,hq_bwd_arg,hp_bwd_abs,hp_bwd_arg\n";
    char buf[256];
    for (std::size_t k = 0; k < f.grid.n; ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      f.grid.omega(k), std::abs(f.hq_fwd[k]), std::arg(f.hq_fwd[k]),
                      std::abs(f.hp_fwd[k]), std::arg(f.hp_fwd[k]), std::abs(f.hq_bwd[k]),
                      std::arg(f.hq_bwd[k]), std::abs(f.hp_bwd[k]), std::arg(f.hp_bwd[k]));
        out << buf;
    }
    detail::write_file(path, out.str());
}

// (q, p) scatter normalized by a reference amplitude (thermal cloud radius).
inline void write_scatter_csv(const std::string& path, const std::vector<double>& q,
                              const std::vector<double>& p, std::size_t begin, std::size_t end,
                              double norm, std::size_t stride = 1) {
    if (q.size() != p.size() || begin >= end || end > q.size())
        throw std::invalid_argument("write_scatter_csv: bad window");
    if (!(norm > 0.0)) throw std::invalid_argument("write_scatter_csv: norm must be positive");
    if (stride == 0) stride = 1;
    std::ostringstream out;
    out << "# normalized by " << norm << "\n";
    out << "q_norm,p_norm\n";
    char buf[80];
    for (std::size_t i = begin; i < end; i += stride) {
        std::snprintf(buf, sizeof buf, "%.8g,%.8g\n", q[i] / norm, p[i] / norm);
        out << buf;
    }
    detail::write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Trajectory bundles: 16-byte magic, u32 little-endian header length, JSON
// header, then column-major little-endian f64 samples.

inline constexpr char kBundleMagic[17] = "MCONDBUNDLEv1\0\0\0";

namespace detail {

inline void put_u32_le(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const std::string& s, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(s.at(off + i))) << (8 * i);
    return v;
}

inline void append_f64_le(std::string& s, const std::vector<double>& col) {
    for (double x : col) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, sizeof bits);
        for (int i = 0; i < 8; ++i) s.push_back(char((bits >> (8 * i)) & 0xffu));
    }
}

inline std::vector<double> read_f64_le(const std::string& s, std::size_t off, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t j = 0; j < count; ++j) {
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= std::uint64_t(static_cast<unsigned char>(s.at(off + 8 * j + i))) << (8 * i);
        double x;
        std::memcpy(&x, &bits, sizeof x);
        out[j] = x;
    }
    return out;
}

}  // namespace detail

inline void write_bundle(const std::string& path, const TrajectoryBundle& b) {
    b.validate();
    json head;
    head["dt"] = b.dt;
    head["seed"] = b.seed;
    head["spec_hash"] = detail::hex64(b.spec_hash);
    head["n_samples"] = b.y.size();
    json cols = json::array();
    cols.push_back("y");
    for (std::size_t j = 0; j < b.q_true.size(); ++j) {
        cols.push_back("q" + std::to_string(j + 1));
        cols.push_back("p" + std::to_string(j + 1));
    }
    for (std::size_t j = 0; j < b.f_ba.size(); ++j) cols.push_back("fba" + std::to_string(j + 1));
    head["columns"] = cols;
    const std::string hs = head.dump();

    std::string out;
    out.reserve(16 + 4 + hs.size() + 8 * b.y.size() * (1 + 2 * b.q_true.size() + b.f_ba.size()));
    out.append(kBundleMagic, 16);
    detail::put_u32_le(out, std::uint32_t(hs.size()));
    out += hs;
    detail::append_f64_le(out, b.y);
    for (std::size_t j = 0; j < b.q_true.size(); ++j) {
        detail::append_f64_le(out, b.q_true[j]);
        detail::append_f64_le(out, b.p_true[j]);
    }
    for (const auto& f : b.f_ba) detail::append_f64_le(out, f);
    detail::write_file(path, out);
}

inline TrajectoryBundle read_bundle(const std::string& path) {
    const std::string s = detail::read_file(path);
    if (s.size() < 20 || s.compare(0, 16, kBundleMagic, 16) != 0)
        throw std::runtime_error("read_bundle: bad magic in " + path);
    const std::uint32_t hlen = detail::get_u32_le(s, 16);
    const json head = json::parse(s.substr(20, hlen));
    TrajectoryBundle b;
    b.dt = head.at("dt").get<double>();
    b.seed = head.at("seed").get<std::uint64_t>();
    b.spec_hash = std::stoull(head.at("spec_hash").get<std::string>(), nullptr, 16);
    const std::size_t n = head.at("n_samples").get<std::size_t>();
    std::size_t off = 20 + hlen;
    if (s.size() < off + 8 * n * head.at("columns").size())
        throw std::runtime_error("read_bundle: truncated file " + path);
    for (const auto& cj : head.at("columns")) {
        const std::string col = cj.get<std::string>();
        std::vector<double> data = detail::read_f64_le(s, off, n);
        off += 8 * n;
        if (col == "y")
            b.y = std::move(data);
        else if (col[0] == 'q')
            b.q_true.push_back(std::move(data));
        else if (col[0] == 'p')
            b.p_true.push_back(std::move(data));
        else if (col.rfind("fba", 0) == 0)
            b.f_ba.push_back(std::move(data));
        else
            throw std::runtime_error("read_bundle: unknown column '" + col + "'");
    }
    b.validate();
    return b;
}

// ---------------------------------------------------------------------------
// Conditioning reports

inline json report_to_json(const ConditioningReport& r) {
    json j;
    j["v_dq"] = r.v_dq;
    j["v_dp"] = r.v_dp;
    j["c_dqdp"] = r.c_dqdp;
    j["v_Dq"] = r.v_Dq;
    j["v_Dp"] = r.v_Dp;
    j["c_DqDp"] = r.c_DqDp;
    j["f_q"] = r.f_q;
    j["f_p"] = r.f_p;
    j["purity"] = r.purity;
    j["squeezing_ratio"] = r.squeezing_ratio;
    j["subset"] = r.subset;
    j["provenance"] = r.provenance;
    j["backaction_model"] = r.backaction_model;
    j["richardson_rel"] = r.richardson_rel;
    j["richardson_ok"] = r.richardson_ok;
    j["seed"] = r.seed;
    j["trials"] = r.trials;
    j["grid_n"] = r.grid_n;
    j["grid_d_omega"] = r.grid_d_omega;
    j["se_v_dq"] = r.se_v_dq;
    j["se_v_dp"] = r.se_v_dp;
    j["se_v_Dq"] = r.se_v_Dq;
    j["se_v_Dp"] = r.se_v_Dp;
    return j;
}

inline void write_report(const std::string& path, const ConditioningReport& r) {
    detail::write_file(path, report_to_json(r).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Run manifests

struct RunManifest {
    std::string command;
    std::string config_path;
    std::vector<std::uint64_t> seeds;
    std::string out_dir;
    std::string tool_version;
    std::map<std::string, std::string> input_hashes;  // path -> fnv1a-64 hex
    json flags;  // remaining command-line switches, for reproduction
};

inline std::string hash_file(const std::string& path) {
    return detail::hex64(detail::fnv1a(detail::read_file(path)));
}

inline void write_manifest(const std::string& out_dir, const RunManifest& m) {
    json j;
    j["command"] = m.command;
    j["config_path"] = m.config_path;
    j["seeds"] = m.seeds;
    j["out_dir"] = m.out_dir;
    j["tool_version"] = m.tool_version;
    j["input_hashes"] = m.input_hashes;
    j["flags"] = m.flags.is_null() ? json::object() : m.flags;
    detail::write_file(out_dir + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace mechcond
