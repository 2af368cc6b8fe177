#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lpvctl/lpv_core.hpp"
#include "lpvctl/weighting.hpp"

namespace lpvctl {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;

struct MaglevPlant {
    double J = 0.006;                // kg m^2
    double tau_max = 6.3e-6;         // N m
    double lever_arm = 0.21;         // m
    double thrust_per_pair = 30e-6;  // N

    void validate() const;
    /// theta / tau = 1 / (J s^2), states [theta, theta_dot].
    StateSpace linear() const;
};

struct DisturbanceModel {
    double tau0 = 2.5e-6;
    double tau_theta_amp = 1.6e-6;
    double scale = 1.0;

    double torque(double theta) const { return scale * (tau0 + tau_theta_amp * std::sin(theta)); }
    void validate() const;
};

/// Reference attitude profile. Ramp: initial value until start_time, then
/// slope towards final_value; Step: final_value from start_time on; Hold:
/// final_value throughout.
struct ReferenceSpec {
    enum class Kind { Ramp, Step, Hold };
    Kind kind = Kind::Ramp;
    double start_time = 20.0;
    double slope = 1.0 * kDegToRad;  // rad/s
    double initial_value = 0.0;      // rad
    double final_value = kPi;        // rad

    double at(double t) const;
    void validate() const;
};

const char* to_string(ReferenceSpec::Kind kind);
ReferenceSpec::Kind reference_kind_from_string(const std::string& s);

/// Controller driven by the measured error e = theta_ref - theta.
class SimController {
public:
    virtual ~SimController() = default;
    virtual Eigen::Index states() const = 0;
    /// Called at the start of every step with the current scheduling value;
    /// may change the active realization and reset the state.
    virtual void schedule(double rho, VectorXd& x) = 0;
    virtual const StateSpace& active() const = 0;
    virtual std::string tag() const = 0;
    /// Largest eigenvalue magnitude of any realization the controller can use.
    virtual double spectral_radius() const = 0;
};

/// Gridded controller, interpolated entrywise in rho (clamped to the grid).
class ScheduledController : public SimController {
public:
    ScheduledController(GriddedSystem K, std::string tag);
    Eigen::Index states() const override { return K_.states(); }
    void schedule(double rho, VectorXd& x) override;
    const StateSpace& active() const override { return current_; }
    std::string tag() const override { return tag_; }
    double spectral_radius() const override { return radius_; }

private:
    GriddedSystem K_;
    std::string tag_;
    StateSpace current_;
    double radius_ = 0.0;
};

/// Two LTI controllers with a hysteresis switch on rho; the incoming
/// controller starts from zero state.
class SwitchingController : public SimController {
public:
    SwitchingController(StateSpace pointing, StateSpace slewing, double threshold, double hysteresis);
    Eigen::Index states() const override { return std::max(pointing_.states(), slewing_.states()); }
    void schedule(double rho, VectorXd& x) override;
    const StateSpace& active() const override { return slewing_mode_ ? slewing_ : pointing_; }
    std::string tag() const override { return slewing_mode_ ? "slewing" : "pointing"; }
    double spectral_radius() const override { return radius_; }

private:
    StateSpace pointing_, slewing_;
    double threshold_, hysteresis_;
    bool started_ = false;
    bool slewing_mode_ = false;
    double radius_ = 0.0;
};

std::unique_ptr<SimController> switching_controller(const StateSpace& pointing, const StateSpace& slewing,
                                                    double threshold = 5.0 * kDegToRad,
                                                    double hysteresis = 0.5 * kDegToRad);

struct SimScenario {
    std::string name = "nominal";
    ReferenceSpec reference;
    double duration = 600.0;
    double dt = 0.01;
    double theta0 = 0.0;
    double theta_dot0 = 0.0;
    DisturbanceModel disturbance;
    MaglevPlant plant;
    double rho_p = 0.01 * kDegToRad;
    double rho_a = kPi;

    void validate() const;
};

struct SimState {
    double t = 0.0;
    double theta = 0.0;
    double theta_dot = 0.0;
    VectorXd xk;
};

double scheduling_signal(double theta, double theta_final, double rho_p, double rho_a);

/// Output of one step: the command and saturation at the step start.
struct StepInfo {
    double rho = 0.0;
    double tau_cmd = 0.0;
    double tau = 0.0;
    bool saturated = false;
};

/// One RK4 step of length scenario.dt (split into `substeps` equal RK4 steps)
/// with the controller matrices frozen at the rho of the step start. Throws
/// SimulationError on a non-finite state.
StepInfo step_closed_loop(const SimScenario& scenario, SimController& ctrl, SimState& state, int substeps = 1);

/// Sub-steps that keep the RK4 step inside its stability region for the
/// controller's fastest mode.
int rk4_substeps(const SimController& ctrl, double dt);

class SimulationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SimMetrics {
    double intercept_s = INFINITY;  // first time theta reaches theta_final
    double overshoot_pct = 0.0;     // beyond theta_final, % of the commanded change
    double band1deg_s = INFINITY;   // last entry into |theta - theta_final| <= 1 deg
    double band0p1deg_s = INFINITY;
    double sat_total_s = 0.0;
};

struct SimResult {
    std::string scenario;
    std::vector<double> t, theta, theta_ref, rho, tau_cmd, tau;
    std::vector<int> saturated;
    std::vector<std::string> ctrl_tag;
    double theta_final = 0.0;
    double theta_start = 0.0;
    double dt = 0.0;
    SimMetrics metrics;
};

SimMetrics compute_metrics(const SimResult& r);

SimResult run_scenario(const SimScenario& scenario, SimController& ctrl);

/// Classical SISO margins of a loop L under negative feedback.
struct LoopMargins {
    double gm_pos_db = INFINITY;  // smallest gain increase to instability
    double gm_neg_db = -INFINITY; // smallest gain decrease to instability (negative dB)
    double pm_deg = INFINITY;
    double wc_gain = NAN;   // gain crossover of the reported phase margin
    double wc_phase = NAN;  // phase crossover of the smallest |gain margin|

    double min_abs_gm_db() const { return std::min(std::abs(gm_pos_db), std::abs(gm_neg_db)); }
};

LoopMargins loop_margins(const StateSpace& L, double w_lo = 1e-4, double w_hi = 1e3, int points = 2000);

struct MarginRow {
    double rho = 0.0;
    LoopMargins margins;
};

/// Frozen-loop margins L = K(rho_k) P at every grid point of the controller.
std::vector<MarginRow> margin_sweep(const StateSpace& plant, const GriddedSystem& controller);

/// Four-block magnitudes (dB) per grid point and the weight-derived bounds.
struct FourBlockResponse {
    std::vector<double> omegas;
    std::vector<double> rho;
    // [block][grid point][omega]; blocks S, SP, KS, KSP
    std::vector<std::vector<std::vector<double>>> mag_db;
    std::vector<std::vector<std::vector<double>>> bound_db;
};

const std::vector<std::string>& four_block_names();

FourBlockResponse closed_loop_freqresp(const StateSpace& plant, const GriddedSystem& controller,
                                       const WeightSchedule& weights, double gamma,
                                       const std::vector<double>& omegas);

}  // namespace lpvctl
