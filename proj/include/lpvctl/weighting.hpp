#pragma once

#include <string>

#include "lpvctl/lpv_core.hpp"

namespace lpvctl {

/// Mixed-sensitivity design values for one operating phase (SI units).
struct DesignPoint {
    double eps = 1e-3;        // steady-state error bound
    double omega_e = 0.05;    // rad/s
    double sens_peak = 2.0;   // high-frequency cap on |S|
    double omega_u = 10.0;    // rad/s
    double R_eu = 1.0;        // rad/(N m)
    double R_du = 0.05;       // fraction of tau_max

    /// Throws ValidationError naming `prefix.<field>`.
    void validate(const std::string& prefix = "design_point") const;
    bool operator==(const DesignPoint&) const = default;
};

enum class InterpMode { Linear, Log10 };

const char* to_string(InterpMode mode);
InterpMode interp_mode_from_string(const std::string& s);

/// v_p + a (1 + tanh(k (rho - b))), a = (v_a - v_p)/2, b the domain midpoint;
/// rho is clamped to [rho_p, rho_a] first.
double tanh_schedule(double v_p, double v_a, double rho, double rho_p, double rho_a, double k);

/// Values of every scheduled scalar at one rho.
struct ScheduledValues {
    double eps = 0, omega_e = 0, sens_peak = 0, omega_u = 0, R_eu = 0, R_du = 0;
    double R_de() const noexcept { return R_du / R_eu; }
};

struct WeightSchedule {
    DesignPoint pointing;
    DesignPoint slewing;
    double rho_p = 0.0;
    double rho_a = 1.0;
    double tanh_scale = 1.0;  // 1/rad

    InterpMode eps_mode = InterpMode::Log10;
    InterpMode omega_e_mode = InterpMode::Linear;
    InterpMode sens_peak_mode = InterpMode::Linear;
    InterpMode omega_u_mode = InterpMode::Linear;
    InterpMode R_eu_mode = InterpMode::Linear;
    InterpMode R_du_mode = InterpMode::Linear;

    ScheduledValues at(double rho) const;
    void validate() const;
    bool operator==(const WeightSchedule&) const = default;
};

/// W_e(s) = g (s + omega_e) / (s + g eps omega_e) with g = 1/sens_peak.
StateSpace realize_We(const ScheduledValues& v);
/// W_u(s) = (s + omega_u) / (eps_hf s + omega_u).
StateSpace realize_Wu(const ScheduledValues& v, double eps_hf = 0.01);

/// Generalized plant with inputs [w1 w2 u] and outputs [z1 z2 y].
///
/// Exogenous signals are normalized: a unit w1 is a reference of R_eu tau_max
/// rad, a unit w2 is an input disturbance of R_du tau_max N m, and z1, z2 are
/// W_e e / (R_eu tau_max) and W_u u / tau_max. The map w -> z of the closed
/// loop is then exactly
///   diag(W_e/R_eu, W_u) [S, -S P; K S, -K S P] diag(R_eu, R_du).
struct GeneralizedPlant {
    GriddedSystem sys;
    Eigen::Index n_w1 = 1, n_w2 = 1, n_u = 1, n_z1 = 1, n_z2 = 1, n_y = 1;
    double tau_max = 1.0;

    Eigen::Index n_w() const noexcept { return n_w1 + n_w2; }
    Eigen::Index n_z() const noexcept { return n_z1 + n_z2; }

    /// Throws ValidationError on dimension mismatch, D22 != 0 or rank-deficient
    /// D12 / D21 at any grid point.
    void validate() const;
};

GeneralizedPlant build_generalized_plant(const StateSpace& plant, const WeightSchedule& schedule,
                                         const ParameterDomain& domain, double tau_max);

/// Wraps raw partitioned data (inputs [w u], outputs [z y]) as a generalized plant.
GeneralizedPlant make_generalized_plant(GriddedSystem sys, Eigen::Index n_w, Eigen::Index n_u, Eigen::Index n_z,
                                        Eigen::Index n_y);

}  // namespace lpvctl
