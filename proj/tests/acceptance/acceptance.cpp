// End-to-end acceptance run: one PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lpvctl/cli_io.hpp"
#include "test_support.hpp"

using namespace lpvctl;
using namespace lpvctl::io;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 4) {
    if (!std::isfinite(v)) return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

/// Collects the sub-checks of one criterion into a single line.
struct Line {
    int id;
    std::string title;
    std::vector<std::string> parts;
    bool ok = true;

    void check(bool pass, const std::string& what) {
        ok = ok && pass;
        parts.push_back(what + (pass ? "" : " [FAIL]"));
    }
};

struct PipelineRun {
    double seconds = 0.0;
    double lpv_synthesis_seconds = 0.0;
    bool ok = true;
    std::string log;
};

PipelineRun run_pipeline(const std::string& config, const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    PipelineRun run;
    std::ostringstream log;
    auto step = [&](const std::string& cmd, CommandArgs a) {
        const int code = run_command(cmd, a, log, log);
        if (code != kOk) {
            run.ok = false;
            log << cmd << " exited with " << code << '\n';
        }
    };
    const auto t0 = Clock::now();
    const std::string lpv = (dir / "lpv.json").string(), pt = (dir / "pointing.json").string(),
                      sl = (dir / "slewing.json").string();
    CommandArgs a;
    a.config = config;
    a.out = lpv;
    step("synthesize", a);
    run.lpv_synthesis_seconds = seconds_since(t0);
    a.out = pt;
    a.lti_at = "pointing";
    step("synthesize", a);
    a.out = sl;
    a.lti_at = "slewing";
    step("synthesize", a);

    CommandArgs b;
    b.out = dir.string();
    b.controllers = {lpv};
    step("analyze", b);
    step("margins", b);
    step("freqresp", b);
    b.controllers = {lpv, pt, sl};
    step("compare", b);
    run.seconds = seconds_since(t0);
    run.log = log.str();
    return run;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

/// Length of the first contiguous saturated stretch.
double first_saturation_interval(const SimResult& r) {
    std::size_t k = 0;
    while (k < r.saturated.size() && !r.saturated[k]) ++k;
    std::size_t n = 0;
    while (k + n < r.saturated.size() && r.saturated[k + n]) ++n;
    return double(n) * r.dt;
}

SimResult simulate(const ProjectConfig& c, const std::string& scenario, SimController& ctrl) {
    return run_scenario(to_scenario(c, find_scenario(c, scenario)), ctrl);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance"};
    std::string config = std::string(LPVCTL_SOURCE_DIR) + "/configs/paper_maglev.json";
    std::string work = (fs::temp_directory_path() / "lpvctl_acceptance").string();
    std::string report;
    std::vector<int> expect_fail;
    app.add_option("--config", config);
    app.add_option("--report", report, "Also write the criterion lines to this file");
    app.add_option("--work-dir", work);
    app.add_option("--expect-fail", expect_fail, "Criteria documented as not reproduced")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    std::vector<Line> lines;

    // 1: bounded real lemma against the Hamiltonian bisection
    {
        Line L{1, "BRL oracle equivalence"};
        std::mt19937 rng(2024);
        std::uniform_int_distribution<int> dim(1, 6), io(1, 3);
        double lo = INFINITY, hi = 0.0;
        const auto t0 = Clock::now();
        for (int i = 0; i < 20; ++i) {
            const StateSpace s = testing::random_stable(rng, dim(rng), io(rng), io(rng));
            BrlOptions o;
            o.basis = BasisSpec::constant();
            o.rate = 0.0;
            const GainCertificate g = brl_bound(GriddedSystem::lti(s), o);
            const double ratio = g.certified() ? g.gamma / hinf_norm_bisect(s, 1e-9) : INFINITY;
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
        }
        const double t = seconds_since(t0);
        // the lower end allows the 1e-9 relative tolerance of the bisection
        L.check(lo >= 1.0 - 1e-8 && hi <= 1.01, "ratio in [" + num(lo, 10) + ", " + num(hi, 10) + "] (need [1, 1.01])");
        L.check(t < 30.0, "runtime " + num(t, 3) + " s (< 30)");
        lines.push_back(L);
    }

    const fs::path run1 = fs::path(work) / "run1", run2 = fs::path(work) / "run2";
    const PipelineRun p1 = run_pipeline(config, run1);
    const PipelineRun p2 = run_pipeline(config, run2);
    if (!p1.ok || !p2.ok) std::cout << p1.log << p2.log;

    const ProjectConfig cfg = load_config(config);
    const ControllerFile lpv = load_controller((run1 / "lpv.json").string());
    const ControllerFile pointing = load_controller((run1 / "pointing.json").string());
    const ControllerFile slewing = load_controller((run1 / "slewing.json").string());
    const MaglevPlant plant = to_plant(cfg);

    // 2: synthesis certifies its own bound
    {
        Line L{2, "synthesis self-consistency"};
        const GeneralizedPlant gp = build_generalized_plant(plant.linear(), to_weights(cfg), lpv.controller.domain(),
                                                            plant.tau_max);
        const GriddedSystem cl = close_loop(gp, lpv.controller);
        BrlOptions o;
        o.basis = BasisSpec::monomials(lpv.basis_exponents);
        o.rate = lpv.rate_bound_rad_s;
        o.storage_guess = lpv.certificate_storage;
        const GainCertificate cert = brl_bound(cl, o);
        double worst = 0.0;
        for (std::size_t k = 0; k < cl.size(); ++k)
            worst = std::max(worst, cl.at(k).is_hurwitz() ? hinf_norm_bisect(cl.at(k), 1e-6) : INFINITY);
        L.check(cl.size() == 20 && lpv.basis_exponents == std::vector<int>({0, 2, 4}),
                std::to_string(cl.size()) + " grid points, basis {1, rho^2, rho^4}");
        L.check(cert.certified() && cert.gamma <= 1.05 * lpv.gamma_syn,
                "brl_bound " + num(cert.gamma, 6) + " <= 1.05 * gamma_syn " + num(lpv.gamma_syn, 6));
        L.check(worst <= 1.001 * lpv.gamma_syn, "max frozen Hinf " + num(worst, 6) + " <= 1.001 * gamma_syn");
        L.check(p1.lpv_synthesis_seconds < 300.0, "synthesis " + num(p1.lpv_synthesis_seconds, 3) + " s (< 300)");
        lines.push_back(L);
    }

    // 3: loop margins over the grid
    {
        Line L{3, "margins"};
        const std::vector<MarginRow> rows = margin_sweep(plant.linear(), lpv.controller);
        double pm = INFINITY, gm = INFINITY;
        for (const auto& r : rows) {
            pm = std::min(pm, r.margins.pm_deg);
            gm = std::min(gm, r.margins.min_abs_gm_db());
        }
        L.check(pm >= 35.0 && pm <= 55.0, "min PM " + num(pm) + " deg in [35, 55]");
        L.check(gm >= 9.0 && gm <= 18.0, "min |GM| " + num(gm) + " dB in [9, 18]");
        L.check(rows.size() == 20 && pm >= 30.0 && gm >= 6.0, "all points PM >= 30, |GM| >= 6");
        lines.push_back(L);
    }

    ScheduledController K_lpv(lpv.controller, "lpv");
    ScheduledController K_pt(pointing.controller, "pointing");
    ScheduledController K_sl(slewing.controller, "slewing");
    const SimResult lpv_nom = simulate(cfg, "nominal", K_lpv);
    const SimResult lpv_rob = simulate(cfg, "robust", K_lpv);
    const SimResult pt_nom = simulate(cfg, "nominal", K_pt);
    const SimResult pt_rob = simulate(cfg, "robust", K_pt);
    const SimResult sl_nom = simulate(cfg, "nominal", K_sl);
    const auto sw = switching_controller(pointing.controller.at(0), slewing.controller.at(0),
                                         cfg.switching.threshold_deg * kDegToRad,
                                         cfg.switching.hysteresis_deg * kDegToRad);
    const SimResult sw_rob = simulate(cfg, "robust", *sw);

    // 4: nominal ramp with the gain-scheduled controller
    {
        Line L{4, "nominal ramp, LPV"};
        const SimMetrics& m = lpv_nom.metrics;
        L.check(m.intercept_s >= 180.0 && m.intercept_s <= 280.0, "intercept " + num(m.intercept_s) + " s in [180, 280]");
        L.check(m.overshoot_pct <= 15.0, "overshoot " + num(m.overshoot_pct) + " % (<= 15)");
        L.check(m.band0p1deg_s <= 600.0, "0.1 deg band " + num(m.band0p1deg_s) + " s (<= 600)");
        L.check(m.sat_total_s <= 5.0, "saturation " + num(m.sat_total_s) + " s (<= 5)");
        lines.push_back(L);
    }

    // 5: pointing-only controller on the same ramp
    {
        Line L{5, "nominal ramp, pointing Hinf"};
        const double first = first_saturation_interval(pt_nom);
        L.check(first >= 40.0, "initial saturation " + num(first) + " s (>= 40)");
        L.check(pt_nom.metrics.overshoot_pct >= lpv_nom.metrics.overshoot_pct,
                "overshoot " + num(pt_nom.metrics.overshoot_pct) + " % >= LPV " + num(lpv_nom.metrics.overshoot_pct) +
                    " %");
        L.check(pt_nom.metrics.band1deg_s >= 300.0, "1 deg band " + num(pt_nom.metrics.band1deg_s) + " s (>= 300)");
        lines.push_back(L);
    }

    // 6: disturbance x1.6
    {
        Line L{6, "robustness, disturbance x1.6"};
        const SimMetrics& m = lpv_rob.metrics;
        L.check(m.overshoot_pct <= 20.0, "LPV overshoot " + num(m.overshoot_pct) + " % (<= 20)");
        L.check(m.sat_total_s <= 120.0, "LPV saturation " + num(m.sat_total_s) + " s (<= 120)");
        L.check(m.band1deg_s <= 550.0, "LPV 1 deg band " + num(m.band1deg_s) + " s (<= 550)");
        L.check(pt_rob.metrics.overshoot_pct >= 25.0,
                "pointing overshoot " + num(pt_rob.metrics.overshoot_pct) + " % (>= 25)");
        L.check(!std::isfinite(sw_rob.metrics.band1deg_s),
                "switching 1 deg band " + num(sw_rob.metrics.band1deg_s) + " (never)");
        lines.push_back(L);
    }

    // 7: constant disturbance, fixed reference
    {
        Line L{7, "steady-state pointing"};
        const ScenarioConfig& hold = find_scenario(cfg, "hold");
        const bool constant = hold.reference == "hold" && hold.tau_theta_amp_uNm == 0.0 && hold.tau0_uNm != 0.0;
        L.check(constant, "hold scenario: fixed reference, constant disturbance");
        const SimResult r = simulate(cfg, "hold", K_lpv);
        const double err = std::abs(r.theta.back() - r.theta_final);
        const double tol = 1e-3 * std::abs(r.theta_final);
        L.check(err < tol, "terminal error " + num(err / kDegToRad) + " deg (< " + num(tol / kDegToRad) + ")");
        lines.push_back(L);
    }

    // 8: tanh interpolation law
    {
        Line L{8, "interpolation law"};
        const WeightSchedule w = to_weights(cfg);
        const double mid = 0.5 * (w.rho_p + w.rho_a);
        double worst_mid = 0.0;
        const std::pair<double, double> pairs[] = {{w.pointing.eps, w.slewing.eps},
                                                   {w.pointing.omega_e, w.slewing.omega_e},
                                                   {w.pointing.R_eu, w.slewing.R_eu},
                                                   {w.pointing.R_du, w.slewing.R_du}};
        for (const auto& [vp, va] : pairs) {
            const double v = tanh_schedule(vp, va, mid, w.rho_p, w.rho_a, w.tanh_scale);
            worst_mid = std::max(worst_mid, std::abs(v - 0.5 * (vp + va)) / std::max(1.0, std::abs(vp + va)));
        }
        L.check(worst_mid <= 1e-12, "midpoint error " + num(worst_mid, 3) + " (<= 1e-12)");
        bool mono = true;
        ScheduledValues prev = w.at(w.rho_p);
        for (int i = 1; i < 1000; ++i) {
            const ScheduledValues v = w.at(w.rho_p + (w.rho_a - w.rho_p) * i / 999.0);
            auto same_dir = [](double a, double b, double p, double q) { return (q - p) * (b - a) >= 0.0; };
            mono = mono && same_dir(w.pointing.eps, w.slewing.eps, prev.eps, v.eps) &&
                   same_dir(w.pointing.omega_e, w.slewing.omega_e, prev.omega_e, v.omega_e) &&
                   same_dir(w.pointing.R_eu, w.slewing.R_eu, prev.R_eu, v.R_eu) &&
                   same_dir(w.pointing.R_du, w.slewing.R_du, prev.R_du, v.R_du) &&
                   same_dir(w.pointing.sens_peak, w.slewing.sens_peak, prev.sens_peak, v.sens_peak) &&
                   same_dir(w.pointing.omega_u, w.slewing.omega_u, prev.omega_u, v.omega_u);
            prev = v;
        }
        L.check(mono, "monotone over 1000 samples");
        lines.push_back(L);
    }

    // 9: slewing-only controller
    {
        Line L{9, "slewing Hinf fails acquisition"};
        L.check(!std::isfinite(sl_nom.metrics.band1deg_s),
                "1 deg band " + num(sl_nom.metrics.band1deg_s) + " (never within 600 s)");
        lines.push_back(L);
    }

    // 10: determinism and runtime
    {
        Line L{10, "determinism"};
        std::size_t files = 0, differ = 0;
        for (const auto& e : fs::directory_iterator(run1)) {
            if (e.path().extension() != ".csv") continue;
            ++files;
            const fs::path other = run2 / e.path().filename();
            if (!fs::exists(other) || slurp(e.path()) != slurp(other)) ++differ;
        }
        L.check(p1.ok && p2.ok, "pipeline commands exit 0");
        L.check(files >= 8 && differ == 0, std::to_string(files) + " CSVs, " + std::to_string(differ) + " differ");
        L.check(p1.seconds <= 600.0, "pipeline " + num(p1.seconds, 3) + " s (<= 600)");
        lines.push_back(L);
    }

    const std::set<int> expected(expect_fail.begin(), expect_fail.end());
    int unexpected = 0, passed = 0;
    std::ostringstream out;
    for (const Line& L : lines) {
        out << "criterion " << L.id << " " << (L.ok ? "PASS" : "FAIL") << " " << L.title << ": ";
        for (std::size_t i = 0; i < L.parts.size(); ++i) out << (i ? "; " : "") << L.parts[i];
        if (!L.ok && expected.count(L.id)) out << " (known, see README)";
        if (L.ok && expected.count(L.id)) out << " (listed as failing; update the expectation)";
        out << '\n';
        passed += L.ok;
        unexpected += !L.ok && !expected.count(L.id);
    }
    out << passed << "/" << lines.size() << " criteria pass";
    if (unexpected) out << ", " << unexpected << " unexpected failure(s)";
    out << '\n';
    std::cout << out.str();
    if (!report.empty()) std::ofstream(report) << out.str();
    return unexpected ? 1 : 0;
}
