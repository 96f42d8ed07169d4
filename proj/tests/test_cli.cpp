// End-to-end checks of the command-line driver. The binary under test is
// located through MECHCOND_BIN and config fixtures through MECHCOND_FIXTURES;
// artifacts land in a scratch tree under the system temp directory that is
// wiped at the start of each run so failures stay inspectable.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "doctest.h"
#include "mechcond/condition.hpp"
#include "mechcond/ingest.hpp"
#include "mechcond/io.hpp"
#include "mechcond/simulate.hpp"
#include "mechcond/wiener.hpp"

namespace {

using mechcond::json;

std::string bin_path() {
    const char* env = std::getenv("MECHCOND_BIN");
    return env ? env : "mechcond";
}

std::string fixture(const std::string& name) {
    const char* env = std::getenv("MECHCOND_FIXTURES");
    return (env ? std::string(env) : std::string("configs")) + "/" + name;
}

const std::string& work_root() {
    static const std::string root = [] {
        namespace fs = std::filesystem;
        const fs::path p = fs::temp_directory_path() / "mechcond_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p.string();
    }();
    return root;
}

struct CliResult {
    int code = -1;
    std::string out;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

CliResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string log = work_root() + "/run" + std::to_string(counter++) + ".log";
    const std::string cmd = "\"" + bin_path() + "\" " + args + " > \"" + log + "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    CliResult r;
    r.code = rc == -1 ? -1 : (WIFEXITED(rc) ? WEXITSTATUS(rc) : -2);
    r.out = slurp(log);
    return r;
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

// Simulated records shared across cases; built once, on first use.
struct SimRuns {
    std::string short_dir, long_dir, repeat_dir, other_seed_dir;
    int short_code = -1, long_code = -1, repeat_code = -1, other_seed_code = -1;
};

const SimRuns& sims() {
    static const SimRuns runs = [] {
        SimRuns r;
        const std::string cfg = fixture("viscous_demo.json");
        r.short_dir = work_root() + "/sim_short";
        r.long_dir = work_root() + "/sim_long";
        r.repeat_dir = work_root() + "/sim_repeat";
        r.other_seed_dir = work_root() + "/sim_seed43";
        const std::string common =
            "simulate --config \"" + cfg + "\" --duration 0.02 --dt 5e-8 --seed ";
        r.short_code = run_cli(common + "42 --out " + r.short_dir).code;
        r.repeat_code = run_cli(common + "42 --out " + r.repeat_dir).code;
        r.other_seed_code = run_cli(common + "43 --out " + r.other_seed_dir).code;
        r.long_code = run_cli("simulate --config \"" + cfg +
                              "\" --duration 0.05 --dt 5e-8 --seed 42 --out " + r.long_dir)
                          .code;
        return r;
    }();
    return runs;
}

// The short record rewritten as a bare trace file (no ground truth columns).
const std::string& raw_trace() {
    static const std::string path = [] {
        std::string p = work_root() + "/record.trace";
        if (sims().short_code != 0) return std::string();
        const mechcond::TrajectoryBundle b = mechcond::read_bundle(sims().short_dir + "/bundle.bin");
        mechcond::TraceFile t;
        t.samples = b.y;
        t.dt = b.dt;
        t.calibration = 1.0;
        mechcond::save_trace(p, t);
        return p;
    }();
    return path;
}

}  // namespace

TEST_CASE("no subcommand is a usage error and --version identifies the tool") {
    const CliResult bare = run_cli("");
    CHECK(bare.code != 0);
    CHECK(!bare.out.empty());

    const CliResult ver = run_cli("--version");
    CHECK(ver.code == 0);
    CHECK(ver.out.find("mechcond 1.0.0") != std::string::npos);

    const CliResult missing = run_cli("simulate --config " + work_root() +
                                      "/no_such_config.json --out x --seed 1 --duration 1 --dt 1");
    CHECK(missing.code != 0);
}

TEST_CASE("criteria writes the regime report") {
    const std::string out = work_root() + "/criteria_even";
    const CliResult r = run_cli(
        "criteria --c 10 --q 1000 --n-th 100 --eta 0.5 --modes 2 --damping viscous --out " + out);
    REQUIRE(r.code == 0);

    const json j = load_json(out + "/criteria.json");
    CHECK(j.at("n_tot").get<double>() == doctest::Approx(100.0 + 2 * 10.0 + 0.5).epsilon(1e-12));
    CHECK(j.at("rwa_breakdown").is_boolean());
    const double pur = j.at("purity").get<double>();
    CHECK(pur > 0.0);
    CHECK(pur < 1.0);
    const double v_inf = j.at("asymptotic_collective_variance").get<double>();
    CHECK(v_inf > 0.0);
    CHECK(v_inf < j.at("n_tot").get<double>());
    const double c_req = j.at("quantum_squeezing").at("c_required").get<double>();
    const double expect = std::cbrt(1000.0 * 1000.0 * 120.5 / 4.0) / (0.5 * 2.0);
    CHECK(c_req == doctest::Approx(expect).epsilon(1e-9));
    CHECK(j.at("quantum_squeezing").at("satisfied").get<bool>() == false);
    CHECK(j.contains("entanglement"));  // even mode count
    CHECK(j.contains("ground_state"));

    const json manifest = load_json(out + "/manifest.json");
    CHECK(manifest.at("command").get<std::string>() == "criteria");

    // odd mode counts have no pairing, so no entanglement entry
    const std::string odd_out = work_root() + "/criteria_odd";
    REQUIRE(run_cli("criteria --c 10 --q 1000 --n-th 100 --modes 1 --out " + odd_out).code == 0);
    CHECK(!load_json(odd_out + "/criteria.json").contains("entanglement"));

    const CliResult bad = run_cli("criteria --c 1 --q 10 --n-th 1 --damping quadratic");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("damping must be") != std::string::npos);
}

TEST_CASE("factorize meets its identity checks on the demo model") {
    const std::string out = work_root() + "/factorize";
    const CliResult r =
        run_cli("factorize --config \"" + fixture("viscous_demo.json") + "\" --out " + out);
    REQUIRE(r.code == 0);

    const json j = load_json(out + "/factorize.json");
    CHECK(j.at("residual").get<double>() <= 1e-6);
    CHECK(j.at("anticausal_energy").get<double>() <= 1e-8);
    CHECK(j.at("clamped_bins").get<std::size_t>() == 0);
    const std::size_t n = j.at("grid_n").get<std::size_t>();
    CHECK(n >= 1024);
    CHECK((n & (n - 1)) == 0);

    const std::string csv = slurp(out + "/factor.csv");
    CHECK(csv.rfind("omega_rad_s", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == long(n) + 1);

    const CliResult bad = run_cli("factorize --config \"" + fixture("viscous_demo.json") +
                                  "\" --grid-points 12345 --out " + out);
    CHECK(bad.code == 2);
    CHECK(bad.out.find("grid-points must be 2^k") != std::string::npos);
}

TEST_CASE("simulate is reproducible byte for byte in the seed") {
    REQUIRE(sims().short_code == 0);
    REQUIRE(sims().repeat_code == 0);
    REQUIRE(sims().other_seed_code == 0);

    const std::string a = slurp(sims().short_dir + "/bundle.bin");
    const std::string b = slurp(sims().repeat_dir + "/bundle.bin");
    const std::string c = slurp(sims().other_seed_dir + "/bundle.bin");
    REQUIRE(!a.empty());
    CHECK(a == b);
    CHECK(a != c);

    const json manifest = load_json(sims().short_dir + "/manifest.json");
    CHECK(manifest.at("command").get<std::string>() == "simulate");
    CHECK(manifest.at("seeds").get<std::vector<std::uint64_t>>() ==
          std::vector<std::uint64_t>{42});

    const CliResult coarse =
        run_cli("simulate --config \"" + fixture("viscous_demo.json") +
                "\" --out " + work_root() + "/sim_bad --seed 1 --duration 0.02 --dt 1e-5");
    CHECK(coarse.code == 2);
    CHECK(coarse.out.find("dt too coarse") != std::string::npos);
}

TEST_CASE("condition on a simulated record matches the model route") {
    REQUIRE(sims().long_code == 0);
    const std::string cfg = fixture("viscous_demo.json");
    const std::string out = work_root() + "/cond_sim";
    const CliResult r = run_cli("condition --config \"" + cfg + "\" --trace " +
                                sims().long_dir + "/bundle.bin --subset 1 --out " + out);
    REQUIRE(r.code == 0);

    const json rep = load_json(out + "/report.json");
    CHECK(rep.at("provenance").get<std::string>() == "simulated");
    CHECK(rep.at("backaction_model").get<std::string>() == "correlated-flat-force");
    CHECK(rep.at("richardson_ok").get<bool>());
    CHECK(rep.at("trials").get<std::size_t>() == 1);
    CHECK(rep.at("seed").get<std::uint64_t>() == 42);
    CHECK(rep.at("subset").get<std::vector<std::size_t>>() == std::vector<std::size_t>{1});
    const std::size_t gn = rep.at("grid_n").get<std::size_t>();
    CHECK((gn & (gn - 1)) == 0);

    const double v_dq = rep.at("v_dq").get<double>();
    const double v_dp = rep.at("v_dp").get<double>();
    CHECK(v_dq > 0.0);
    CHECK(v_dp > 0.0);
    CHECK(rep.at("squeezing_ratio").get<double>() ==
          doctest::Approx(v_dp / v_dq).epsilon(1e-9));
    const double f_q = rep.at("f_q").get<double>();
    const double f_p = rep.at("f_p").get<double>();
    CHECK(f_q > 0.0);
    CHECK(f_q < 1.0);
    CHECK(f_p > 0.0);
    CHECK(f_p < 1.0);

    // same record, same model: the empirical conditional variance must sit
    // near the model-route prediction for this grid
    const mechcond::MeasurementModel heated =
        mechcond::with_backaction_heating(mechcond::load_measurement_model(cfg));
    const mechcond::FrequencyGrid grid = mechcond::grid_for_trace(heated, 5e-8);
    const mechcond::WienerFilterSet filters = mechcond::synthesize_filters(heated, {1}, grid);
    const mechcond::VarianceResult vr =
        mechcond::conditional_variances(mechcond::conditional_spectra(heated, {1}, filters));
    CHECK(std::abs(v_dq - vr.v_dq) / vr.v_dq < 0.15);
    CHECK(std::abs(v_dp - vr.v_dp) / vr.v_dp < 0.15);

    const std::string fcsv = slurp(out + "/filters.csv");
    CHECK(fcsv.rfind("omega_rad_s,hq_fwd_abs", 0) == 0);
    const std::string scatter = slurp(out + "/scatter_pred.csv");
    CHECK(scatter.rfind("#", 0) == 0);
    CHECK(scatter.find("q_norm,p_norm") != std::string::npos);
    CHECK(std::filesystem::exists(out + "/scatter_retro.csv"));
    CHECK(std::filesystem::exists(out + "/scatter_rel.csv"));
    const json manifest = load_json(out + "/manifest.json");
    CHECK(manifest.at("input_hashes").size() == 2);

    const CliResult bad = run_cli("condition --config \"" + cfg + "\" --trace " +
                                  sims().long_dir + "/bundle.bin --subset 0 --out " +
                                  work_root() + "/cond_bad");
    CHECK(bad.code == 2);
}

TEST_CASE("condition infers variances from a raw trace through the model route") {
    REQUIRE(!raw_trace().empty());
    const std::string out = work_root() + "/cond_raw";
    const CliResult r = run_cli("condition --config \"" + fixture("viscous_demo.json") +
                                "\" --trace \"" + raw_trace() +
                                "\" --subset 1 --grid-points 65536 --out " + out);
    REQUIRE(r.code == 0);

    const json rep = load_json(out + "/report.json");
    CHECK(rep.at("provenance").get<std::string>() == "inferred-from-data");
    CHECK(rep.at("grid_n").get<std::size_t>() == 65536);
    CHECK(rep.at("richardson_ok").get<bool>());
    // the short and long records of the same process agree loosely
    const double v_dq = rep.at("v_dq").get<double>();
    CHECK(v_dq > 14.0);
    CHECK(v_dq < 57.0);
}

TEST_CASE("sweep grid is monotone in cooperativity and occupation") {
    const std::string out = work_root() + "/sweep";
    const CliResult r = run_cli("sweep --config \"" + fixture("viscous_demo.json") + "\" --out " +
                                out +
                                " --c-lo 0.1 --c-hi 10 --c-steps 3 --n-lo 10 --n-hi 1000 "
                                "--n-steps 3 --modes 1");
    REQUIRE(r.code == 0);
    CHECK(r.out.find("9 cells") != std::string::npos);

    std::map<std::pair<double, double>, double> cells;
    std::istringstream csv(slurp(out + "/sweep.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "c,n_th,v_dq,squeezed");
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        double c, n, v;
        int squeezed;
        REQUIRE(std::sscanf(line.c_str(), "%lf,%lf,%lf,%d", &c, &n, &v, &squeezed) == 4);
        CHECK(squeezed == (v < 0.5 ? 1 : 0));
        cells[{c, n}] = v;
    }
    REQUIRE(cells.size() == 9);

    const double cs[] = {0.1, 1.0, 10.0};
    const double ns[] = {10.0, 100.0, 1000.0};
    for (double n : ns)
        for (int i = 0; i + 1 < 3; ++i)
            CHECK(cells.at({cs[i], n}) > cells.at({cs[i + 1], n}));  // better measurement
    for (double c : cs)
        for (int i = 0; i + 1 < 3; ++i)
            CHECK(cells.at({c, ns[i]}) < cells.at({c, ns[i + 1]}));  // hotter bath
}

TEST_CASE("fit recovers the generating model from a synthesized record") {
    REQUIRE(!raw_trace().empty());
    const std::string cfg = fixture("viscous_demo.json");
    const std::string out = work_root() + "/fit";
    const CliResult r = run_cli("fit --trace \"" + raw_trace() + "\" --config \"" + cfg +
                                "\" --segment 16384 --out " + out);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("converged") != std::string::npos);

    const json j = load_json(out + "/fit.json");
    REQUIRE(j.at("converged").get<bool>());
    CHECK(j.at("iterations").get<std::size_t>() < 200);
    CHECK(j.at("residual").get<double>() < 0.3);

    std::map<std::string, double> est;
    for (const auto& e : j.at("estimates")) {
        est[e.at("name").get<std::string>()] = e.at("value").get<double>();
        CHECK(e.at("stderr").get<double>() >= 0.0);
    }
    const mechcond::MeasurementModel truth = mechcond::load_measurement_model(cfg);
    const mechcond::ModeModel& mode = truth.signal_modes.at(0);
    CHECK(std::abs(est.at("mode1.omega") - mode.omega) / mode.omega < 1e-3);
    CHECK(std::abs(est.at("mode1.gamma") - mode.gamma) / mode.gamma < 0.20);
    CHECK(std::abs(est.at("mode1.mu") - mode.mu) / mode.mu < 0.25);
    double shot = 0.0;
    for (const auto& c : truth.noise_components)
        if (c.kind == mechcond::NoiseComponent::Kind::ShotFloor) shot = c.level;
    REQUIRE(shot > 0.0);
    CHECK(std::abs(est.at("noise1.level") - shot) / shot < 0.05);

    // the exported model is itself a loadable config carrying the estimates
    const mechcond::MeasurementModel fitted =
        mechcond::load_measurement_model(out + "/fitted_config.json");
    REQUIRE(fitted.signal_modes.size() == 1);
    CHECK(fitted.signal_modes[0].omega ==
          doctest::Approx(est.at("mode1.omega")).epsilon(1e-12));
    CHECK(std::filesystem::exists(out + "/psd.csv"));

    const CliResult bad = run_cli("fit --trace \"" + raw_trace() + "\" --config \"" + cfg +
                                  "\" --mask oops --out " + work_root() + "/fit_bad");
    CHECK(bad.code == 2);
    CHECK(bad.out.find("mask must be lo_hz:hi_hz") != std::string::npos);
}
