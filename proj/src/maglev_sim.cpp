#include "lpvctl/maglev_sim.hpp"

#include <complex>

#include <Eigen/Eigenvalues>

namespace lpvctl {

namespace {

void require(bool ok, const std::string& field, const std::string& reason) {
    if (!ok) throw ValidationError(field, reason);
}

double spectral_radius_of(const StateSpace& s) {
    if (s.states() == 0) return 0.0;
    return Eigen::EigenSolver<MatrixXd>(s.A, false).eigenvalues().cwiseAbs().maxCoeff();
}

double wrap180(double deg) {
    double w = std::fmod(deg + 180.0, 360.0);
    if (w <= 0.0) w += 360.0;
    return w - 180.0;
}

}  // namespace

void MaglevPlant::validate() const {
    require(J > 0.0, "plant.J", "must be positive");
    require(tau_max > 0.0, "plant.tau_max", "must be positive");
    require(lever_arm > 0.0, "plant.lever_arm", "must be positive");
    require(thrust_per_pair > 0.0, "plant.thrust_per_pair", "must be positive");
    require(std::abs(tau_max - thrust_per_pair * lever_arm) <= 1e-9 * tau_max, "plant.tau_max",
            "must equal thrust_per_pair * lever_arm");
}

StateSpace MaglevPlant::linear() const {
    MatrixXd A(2, 2), B(2, 1), C(1, 2);
    A << 0.0, 1.0, 0.0, 0.0;
    B << 0.0, 1.0 / J;
    C << 1.0, 0.0;
    return StateSpace(A, B, C, MatrixXd::Zero(1, 1));
}

void DisturbanceModel::validate() const {
    require(std::isfinite(tau0), "disturbance.tau0", "must be finite");
    require(std::isfinite(tau_theta_amp), "disturbance.tau_theta_amp", "must be finite");
    require(std::isfinite(scale) && scale >= 0.0, "disturbance.scale", "must be non-negative");
}

double ReferenceSpec::at(double t) const {
    switch (kind) {
        case Kind::Hold:
            return final_value;
        case Kind::Step:
            return t < start_time ? initial_value : final_value;
        case Kind::Ramp: {
            if (t <= start_time) return initial_value;
            const double dir = final_value >= initial_value ? 1.0 : -1.0;
            const double v = initial_value + dir * slope * (t - start_time);
            return dir > 0.0 ? std::min(v, final_value) : std::max(v, final_value);
        }
    }
    return final_value;
}

void ReferenceSpec::validate() const {
    require(std::isfinite(start_time) && start_time >= 0.0, "reference.start_time", "must be non-negative");
    require(std::isfinite(initial_value), "reference.initial_value", "must be finite");
    require(std::isfinite(final_value), "reference.final_value", "must be finite");
    if (kind == Kind::Ramp) require(slope > 0.0 && std::isfinite(slope), "reference.slope", "must be positive");
}

const char* to_string(ReferenceSpec::Kind kind) {
    switch (kind) {
        case ReferenceSpec::Kind::Ramp: return "ramp";
        case ReferenceSpec::Kind::Step: return "step";
        case ReferenceSpec::Kind::Hold: return "hold";
    }
    return "ramp";
}

ReferenceSpec::Kind reference_kind_from_string(const std::string& s) {
    if (s == "ramp") return ReferenceSpec::Kind::Ramp;
    if (s == "step") return ReferenceSpec::Kind::Step;
    if (s == "hold") return ReferenceSpec::Kind::Hold;
    throw ValidationError("reference.kind", "unknown kind '" + s + "' (expected ramp, step or hold)");
}

ScheduledController::ScheduledController(GriddedSystem K, std::string tag) : K_(std::move(K)), tag_(std::move(tag)) {
    require(K_.size() > 0, "controller", "has no grid points");
    require(K_.inputs() == 1 && K_.outputs() == 1, "controller", "must map one error input to one torque output");
    for (const auto& s : K_.data()) radius_ = std::max(radius_, spectral_radius_of(s));
    current_ = K_.at(0);
}

void ScheduledController::schedule(double rho, VectorXd&) {
    if (K_.size() > 1) current_ = eval_at(K_, rho);
}

SwitchingController::SwitchingController(StateSpace pointing, StateSpace slewing, double threshold, double hysteresis)
    : pointing_(std::move(pointing)), slewing_(std::move(slewing)), threshold_(threshold), hysteresis_(hysteresis) {
    require(threshold > 0.0, "switching.threshold", "must be positive");
    require(hysteresis >= 0.0 && hysteresis < threshold, "switching.hysteresis", "must lie in [0, threshold)");
    radius_ = std::max(spectral_radius_of(pointing_), spectral_radius_of(slewing_));
}

void SwitchingController::schedule(double rho, VectorXd& x) {
    if (!started_) {
        started_ = true;
        slewing_mode_ = rho > threshold_;
        return;
    }
    const bool to_slew = !slewing_mode_ && rho > threshold_ + hysteresis_;
    const bool to_point = slewing_mode_ && rho < threshold_ - hysteresis_;
    if (to_slew || to_point) {
        slewing_mode_ = to_slew;
        x.setZero();
    }
}

std::unique_ptr<SimController> switching_controller(const StateSpace& pointing, const StateSpace& slewing,
                                                    double threshold, double hysteresis) {
    return std::make_unique<SwitchingController>(pointing, slewing, threshold, hysteresis);
}

void SimScenario::validate() const {
    require(dt > 0.0 && std::isfinite(dt), "scenario.dt", "must be positive");
    require(duration > 0.0 && std::isfinite(duration), "scenario.duration", "must be positive");
    require(std::isfinite(theta0) && std::isfinite(theta_dot0), "scenario.theta0", "initial state must be finite");
    require(rho_p < rho_a, "domain.rho_p", "must be strictly less than rho_a");
    reference.validate();
    disturbance.validate();
    plant.validate();
    if (reference.kind == ReferenceSpec::Kind::Ramp) {
        const double settle = reference.start_time + std::abs(reference.final_value - reference.initial_value) / reference.slope;
        require(duration >= settle, "scenario.duration", "shorter than the reference ramp");
    }
}

double scheduling_signal(double theta, double theta_final, double rho_p, double rho_a) {
    return std::clamp(std::abs(theta - theta_final), rho_p, rho_a);
}

int rk4_substeps(const SimController& ctrl, double dt) {
    // RK4 is stable on the real axis for |h lambda| < 2.78; stay well inside.
    const double r = ctrl.spectral_radius() * dt;
    return std::max(1, static_cast<int>(std::ceil(r / 2.0)));
}

StepInfo step_closed_loop(const SimScenario& sc, SimController& ctrl, SimState& st, int substeps) {
    const double theta_final = sc.reference.final_value;
    StepInfo info;
    info.rho = scheduling_signal(st.theta, theta_final, sc.rho_p, sc.rho_a);
    ctrl.schedule(info.rho, st.xk);
    const StateSpace& K = ctrl.active();
    const Eigen::Index nk = K.states();
    const double tmax = sc.plant.tau_max, J = sc.plant.J;

    const Eigen::Index n = 2 + nk;
    VectorXd y(n);
    y << st.theta, st.theta_dot, st.xk.head(nk);

    auto command = [&](double t, const VectorXd& s) {
        const double e = sc.reference.at(t) - s(0);
        return (K.C * s.tail(nk))(0) + K.D(0, 0) * e;
    };
    auto f = [&](double t, const VectorXd& s) {
        const double e = sc.reference.at(t) - s(0);
        const double tau = std::clamp(command(t, s), -tmax, tmax);
        VectorXd d(n);
        d(0) = s(1);
        d(1) = (tau + sc.disturbance.torque(s(0))) / J;
        if (nk > 0) d.tail(nk) = K.A * s.tail(nk) + K.B.col(0) * e;
        return d;
    };

    info.tau_cmd = command(st.t, y);
    info.tau = std::clamp(info.tau_cmd, -tmax, tmax);
    info.saturated = std::abs(info.tau_cmd) > tmax;

    const int m = std::max(1, substeps);
    const double h = sc.dt / m;
    double t = st.t;
    for (int i = 0; i < m; ++i) {
        const VectorXd k1 = f(t, y);
        const VectorXd k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        const VectorXd k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        const VectorXd k4 = f(t + h, y + h * k3);
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t = st.t + (i + 1) * h;
    }
    if (!y.allFinite()) throw SimulationError("state diverged at t = " + std::to_string(st.t));
    st.t += sc.dt;
    st.theta = y(0);
    st.theta_dot = y(1);
    st.xk.head(nk) = y.tail(nk);
    return info;
}

SimMetrics compute_metrics(const SimResult& r) {
    SimMetrics m;
    const std::size_t N = r.t.size();
    if (N == 0) return m;
    const double change = r.theta_final - r.theta_start;
    const double dir = change >= 0.0 ? 1.0 : -1.0;

    if (change == 0.0) {
        m.intercept_s = r.t.front();
    } else {
        for (std::size_t i = 0; i < N; ++i) {
            const double a = dir * (r.theta[i] - r.theta_final);
            if (a >= 0.0) {
                if (i == 0) {
                    m.intercept_s = r.t[0];
                } else {
                    const double b = dir * (r.theta[i - 1] - r.theta_final);
                    m.intercept_s = r.t[i - 1] + (r.t[i] - r.t[i - 1]) * (-b) / (a - b);
                }
                break;
            }
        }
    }

    double over = 0.0;
    for (std::size_t i = 0; i < N; ++i) over = std::max(over, dir * (r.theta[i] - r.theta_final));
    m.overshoot_pct = change == 0.0 ? 0.0 : 100.0 * over / std::abs(change);

    auto band_entry = [&](double band) {
        std::size_t i = N;
        while (i > 0 && std::abs(r.theta[i - 1] - r.theta_final) <= band) --i;
        return i == N ? INFINITY : r.t[i];
    };
    m.band1deg_s = band_entry(1.0 * kDegToRad);
    m.band0p1deg_s = band_entry(0.1 * kDegToRad);

    std::size_t sat = 0;
    for (int s : r.saturated) sat += s ? 1 : 0;
    m.sat_total_s = static_cast<double>(sat) * r.dt;
    return m;
}

SimResult run_scenario(const SimScenario& sc, SimController& ctrl) {
    sc.validate();
    SimResult r;
    r.scenario = sc.name;
    r.theta_final = sc.reference.final_value;
    r.theta_start = sc.theta0;
    r.dt = sc.dt;

    SimState st;
    st.theta = sc.theta0;
    st.theta_dot = sc.theta_dot0;
    st.xk = VectorXd::Zero(ctrl.states());
    const int sub = rk4_substeps(ctrl, sc.dt);
    const long steps = std::lround(sc.duration / sc.dt);
    r.t.reserve(steps + 1);

    auto record = [&](double t, double theta, const StepInfo& info) {
        r.t.push_back(t);
        r.theta.push_back(theta);
        r.theta_ref.push_back(sc.reference.at(t));
        r.rho.push_back(info.rho);
        r.tau_cmd.push_back(info.tau_cmd);
        r.tau.push_back(info.tau);
        r.saturated.push_back(info.saturated ? 1 : 0);
        r.ctrl_tag.push_back(ctrl.tag());
    };

    for (long k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) * sc.dt;
        st.t = t;  // avoid drift from repeated addition
        const double theta = st.theta;
        if (k < steps) {
            const StepInfo info = step_closed_loop(sc, ctrl, st, sub);
            record(t, theta, info);
        } else {
            // Final sample: command only, no integration.
            SimState probe = st;
            SimScenario one = sc;
            const StepInfo info = step_closed_loop(one, ctrl, probe, 1);
            record(t, theta, info);
        }
    }
    r.metrics = compute_metrics(r);
    return r;
}

LoopMargins loop_margins(const StateSpace& L, double w_lo, double w_hi, int points) {
    if (L.inputs() != 1 || L.outputs() != 1) throw ValidationError("loop", "margins need a SISO loop");
    auto value = [&](double w) { return eval_tf(L, {0.0, w})(0, 0); };
    const double la = std::log10(w_lo), lb = std::log10(w_hi);
    std::vector<double> ws(points), mag(points), ph(points);
    for (int i = 0; i < points; ++i) {
        ws[i] = std::pow(10.0, la + (lb - la) * i / (points - 1));
        const std::complex<double> v = value(ws[i]);
        mag[i] = std::log10(std::abs(v));
        const double p = std::arg(v) * 180.0 / kPi;
        ph[i] = i == 0 ? p : ph[i - 1] + wrap180(p - ph[i - 1]);
    }
    // Phase continued from a reference point.
    auto phase_near = [&](double w, double ref) {
        const double p = std::arg(value(w)) * 180.0 / kPi;
        return ref + wrap180(p - ref);
    };

    LoopMargins out;
    double best_pm_abs = INFINITY;
    double best_gm_abs = INFINITY;
    for (int i = 0; i + 1 < points; ++i) {
        // Gain crossover.
        if ((mag[i] > 0.0) != (mag[i + 1] > 0.0)) {
            double a = std::log10(ws[i]), b = std::log10(ws[i + 1]);
            const bool up = mag[i + 1] > mag[i];
            for (int it = 0; it < 60; ++it) {
                const double c = 0.5 * (a + b);
                const double mc = std::log10(std::abs(value(std::pow(10.0, c))));
                if ((mc > 0.0) == up) b = c;
                else a = c;
            }
            const double w = std::pow(10.0, 0.5 * (a + b));
            const double pm = wrap180(phase_near(w, ph[i]) + 180.0);
            if (std::abs(pm) < best_pm_abs) {
                best_pm_abs = std::abs(pm);
                out.pm_deg = pm;
                out.wc_gain = w;
            }
        }
        // Phase crossovers at -180 + 360 k.
        const double lo = std::min(ph[i], ph[i + 1]), hi = std::max(ph[i], ph[i + 1]);
        for (double k = std::ceil((lo + 180.0) / 360.0); -180.0 + 360.0 * k <= hi; k += 1.0) {
            const double target = -180.0 + 360.0 * k;
            if (ph[i] == ph[i + 1]) continue;
            double a = std::log10(ws[i]), b = std::log10(ws[i + 1]);
            double pa = ph[i];
            const bool up = ph[i + 1] > ph[i];
            for (int it = 0; it < 60; ++it) {
                const double c = 0.5 * (a + b);
                const double pc = phase_near(std::pow(10.0, c), pa);
                if ((pc > target) == up) {
                    b = c;
                } else {
                    a = c;
                    pa = pc;
                }
            }
            const double w = std::pow(10.0, 0.5 * (a + b));
            const double gm = -20.0 * std::log10(std::abs(value(w)));
            if (gm >= 0.0) out.gm_pos_db = std::min(out.gm_pos_db, gm);
            else out.gm_neg_db = std::max(out.gm_neg_db, gm);
            if (std::abs(gm) < best_gm_abs) {
                best_gm_abs = std::abs(gm);
                out.wc_phase = w;
            }
        }
    }
    return out;
}

std::vector<MarginRow> margin_sweep(const StateSpace& plant, const GriddedSystem& controller) {
    std::vector<MarginRow> rows;
    for (std::size_t k = 0; k < controller.size(); ++k) {
        MarginRow row;
        row.rho = controller.domain().grid()[k];
        row.margins = loop_margins(series(controller.at(k), plant));
        rows.push_back(row);
    }
    return rows;
}

const std::vector<std::string>& four_block_names() {
    static const std::vector<std::string> names = {"S", "SP", "KS", "KSP"};
    return names;
}

FourBlockResponse closed_loop_freqresp(const StateSpace& plant, const GriddedSystem& controller,
                                       const WeightSchedule& weights, double gamma,
                                       const std::vector<double>& omegas) {
    FourBlockResponse out;
    out.omegas = omegas;
    out.rho = controller.domain().grid();
    const std::size_t G = controller.size();
    out.mag_db.assign(4, std::vector<std::vector<double>>(G, std::vector<double>(omegas.size())));
    out.bound_db = out.mag_db;
    auto db = [](double v) { return 20.0 * std::log10(v); };
    for (std::size_t k = 0; k < G; ++k) {
        const ScheduledValues v = weights.at(out.rho[k]);
        const StateSpace We = realize_We(v), Wu = realize_Wu(v);
        for (std::size_t i = 0; i < omegas.size(); ++i) {
            const std::complex<double> s(0.0, omegas[i]);
            const std::complex<double> P = eval_tf(plant, s)(0, 0);
            const std::complex<double> K = eval_tf(controller.at(k), s)(0, 0);
            const std::complex<double> S = 1.0 / (1.0 + P * K);
            const double we = std::abs(eval_tf(We, s)(0, 0)), wu = std::abs(eval_tf(Wu, s)(0, 0));
            out.mag_db[0][k][i] = db(std::abs(S));
            out.mag_db[1][k][i] = db(std::abs(S * P));
            out.mag_db[2][k][i] = db(std::abs(K * S));
            out.mag_db[3][k][i] = db(std::abs(K * S * P));
            out.bound_db[0][k][i] = db(gamma / we);
            out.bound_db[1][k][i] = db(gamma * v.R_eu / (v.R_du * we));
            out.bound_db[2][k][i] = db(gamma / (v.R_eu * wu));
            out.bound_db[3][k][i] = db(gamma / (v.R_du * wu));
        }
    }
    return out;
}

}  // namespace lpvctl
