#include "lpvctl/weighting.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace lpvctl {

namespace {

void require(bool ok, const std::string& field, const std::string& reason) {
    if (!ok) throw ValidationError(field, reason);
}

double schedule_one(double vp, double va, InterpMode mode, double rho, const WeightSchedule& s) {
    if (mode == InterpMode::Log10)
        return std::pow(10.0, tanh_schedule(std::log10(vp), std::log10(va), rho, s.rho_p, s.rho_a, s.tanh_scale));
    return tanh_schedule(vp, va, rho, s.rho_p, s.rho_a, s.tanh_scale);
}

double sigma_min(const MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<MatrixXd> svd(m);
    return svd.singularValues()(svd.singularValues().size() - 1);
}

}  // namespace

void DesignPoint::validate(const std::string& prefix) const {
    require(eps > 0.0 && eps < 1.0, prefix + ".eps", "must lie in (0, 1)");
    require(omega_e > 0.0, prefix + ".omega_e", "must be positive");
    require(sens_peak > 0.0, prefix + ".sens_peak", "must be positive");
    require(omega_u > omega_e, prefix + ".omega_u", "must exceed omega_e");
    require(R_eu > 0.0, prefix + ".R_eu", "must be positive");
    require(R_du > 0.0 && R_du <= 1.0, prefix + ".R_du", "must lie in (0, 1]");
}

const char* to_string(InterpMode mode) { return mode == InterpMode::Log10 ? "log10" : "linear"; }

InterpMode interp_mode_from_string(const std::string& s) {
    if (s == "linear") return InterpMode::Linear;
    if (s == "log10") return InterpMode::Log10;
    throw ValidationError("interpolation", "unknown mode '" + s + "' (expected linear or log10)");
}

double tanh_schedule(double v_p, double v_a, double rho, double rho_p, double rho_a, double k) {
    const double alpha = 0.5 * (v_a - v_p);
    const double beta = 0.5 * (rho_a - rho_p) + rho_p;
    const double r = std::clamp(rho, rho_p, rho_a);
    return v_p + alpha * (1.0 + std::tanh(k * (r - beta)));
}

ScheduledValues WeightSchedule::at(double rho) const {
    ScheduledValues v;
    v.eps = schedule_one(pointing.eps, slewing.eps, eps_mode, rho, *this);
    v.omega_e = schedule_one(pointing.omega_e, slewing.omega_e, omega_e_mode, rho, *this);
    v.sens_peak = schedule_one(pointing.sens_peak, slewing.sens_peak, sens_peak_mode, rho, *this);
    v.omega_u = schedule_one(pointing.omega_u, slewing.omega_u, omega_u_mode, rho, *this);
    v.R_eu = schedule_one(pointing.R_eu, slewing.R_eu, R_eu_mode, rho, *this);
    v.R_du = schedule_one(pointing.R_du, slewing.R_du, R_du_mode, rho, *this);
    return v;
}

void WeightSchedule::validate() const {
    pointing.validate("weights.pointing");
    slewing.validate("weights.slewing");
    require(std::isfinite(rho_p) && std::isfinite(rho_a) && rho_p < rho_a, "domain.rho_p",
            "must be strictly less than rho_a");
    require(tanh_scale > 0.0, "weights.tanh_scale", "must be positive");
}

StateSpace realize_We(const ScheduledValues& v) {
    const double g = 1.0 / v.sens_peak;
    const double w_low = g * v.eps * v.omega_e;
    if (!(w_low > 0.0)) throw ValidationError("W_e", "low-frequency pole must be positive");
    MatrixXd A(1, 1), B(1, 1), C(1, 1), D(1, 1);
    A << -w_low;
    B << 1.0;
    C << g * (v.omega_e - w_low);
    D << g;
    return StateSpace(A, B, C, D);
}

StateSpace realize_Wu(const ScheduledValues& v, double eps_hf) {
    // (s + wu)/(eps s + wu) = 1/eps - (1/eps - 1) wu/eps / (s + wu/eps)
    const double p = v.omega_u / eps_hf;
    MatrixXd A(1, 1), B(1, 1), C(1, 1), D(1, 1);
    A << -p;
    B << p;
    C << -(1.0 / eps_hf - 1.0);
    D << 1.0 / eps_hf;
    return StateSpace(A, B, C, D);
}

void GeneralizedPlant::validate() const {
    const Eigen::Index nw = n_w(), nz = n_z();
    require(sys.inputs() == nw + n_u, "generalized_plant", "input dimension does not match channel sizes");
    require(sys.outputs() == nz + n_y, "generalized_plant", "output dimension does not match channel sizes");
    for (std::size_t k = 0; k < sys.size(); ++k) {
        const StateSpace& s = sys.at(k);
        const MatrixXd D12 = s.D.block(0, nw, nz, n_u);
        const MatrixXd D21 = s.D.block(nz, 0, n_y, nw);
        const MatrixXd D22 = s.D.block(nz, nw, n_y, n_u);
        const std::string at = " at grid point " + std::to_string(k);
        require(D22.size() == 0 || D22.cwiseAbs().maxCoeff() == 0.0, "generalized_plant.D22", "must be zero" + at);
        if (n_u > 0)
            require(sigma_min(D12) > 1e-9 * std::max(1.0, D12.norm()), "generalized_plant.D12",
                    "must have full column rank" + at);
        if (n_y > 0)
            require(sigma_min(D21.transpose()) > 1e-9 * std::max(1.0, D21.norm()), "generalized_plant.D21",
                    "must have full row rank" + at);
    }
}

GeneralizedPlant make_generalized_plant(GriddedSystem sys, Eigen::Index n_w, Eigen::Index n_u, Eigen::Index n_z,
                                        Eigen::Index n_y) {
    GeneralizedPlant gp;
    gp.n_w1 = n_w;
    gp.n_w2 = 0;
    gp.n_u = n_u;
    gp.n_z1 = n_z;
    gp.n_z2 = 0;
    gp.n_y = n_y;
    IoLabels labels;
    labels.inputs = {{"w", 0, n_w}, {"u", n_w, n_u}};
    labels.outputs = {{"z", 0, n_z}, {"y", n_z, n_y}};
    gp.sys = GriddedSystem(sys.domain(), sys.data(), labels);
    gp.validate();
    return gp;
}

GeneralizedPlant build_generalized_plant(const StateSpace& plant, const WeightSchedule& schedule,
                                         const ParameterDomain& domain, double tau_max) {
    plant.validate();
    schedule.validate();
    require(plant.inputs() == 1 && plant.outputs() == 1, "plant", "must be SISO");
    require(plant.D.cwiseAbs().maxCoeff() == 0.0, "plant", "must be strictly proper");
    require(tau_max > 0.0, "plant.tau_max", "must be positive");

    const Eigen::Index np = plant.states();
    const Eigen::Index n = np + 2;
    std::vector<StateSpace> data;
    data.reserve(domain.size());
    for (double rho : domain.grid()) {
        const ScheduledValues v = schedule.at(rho);
        const StateSpace We = realize_We(v);
        const StateSpace Wu = realize_Wu(v);
        const double r_scale = v.R_eu * tau_max;  // rad per unit w1
        const double d_scale = v.R_du * tau_max;  // N m per unit w2

        // States [x_p, x_e, x_u]; inputs [w1, w2, u]; outputs [z1, z2, y].
        MatrixXd A = MatrixXd::Zero(n, n), B = MatrixXd::Zero(n, 3), C = MatrixXd::Zero(3, n),
                 D = MatrixXd::Zero(3, 3);
        A.topLeftCorner(np, np) = plant.A;
        B.block(0, 1, np, 1) = plant.B * d_scale;
        B.block(0, 2, np, 1) = plant.B;

        // e = r_scale w1 - C_p x_p
        MatrixXd Ce = MatrixXd::Zero(1, n);
        Ce.leftCols(np) = -plant.C;
        MatrixXd De(1, 3);
        De << r_scale, 0.0, 0.0;

        A.row(np) += We.B(0, 0) * Ce;
        A(np, np) += We.A(0, 0);
        B.row(np) += We.B(0, 0) * De;
        C.row(0) = (We.D(0, 0) * Ce) / r_scale;
        C(0, np) += We.C(0, 0) / r_scale;
        D.row(0) = (We.D(0, 0) * De) / r_scale;

        A(np + 1, np + 1) = Wu.A(0, 0);
        B(np + 1, 2) = Wu.B(0, 0);
        C(1, np + 1) = Wu.C(0, 0) / tau_max;
        D(1, 2) = Wu.D(0, 0) / tau_max;

        C.row(2) = Ce;
        D.row(2) = De;
        data.emplace_back(A, B, C, D);
    }

    GeneralizedPlant gp;
    gp.tau_max = tau_max;
    IoLabels labels;
    labels.inputs = {{"w1", 0, 1}, {"w2", 1, 1}, {"u", 2, 1}};
    labels.outputs = {{"z1", 0, 1}, {"z2", 1, 1}, {"y", 2, 1}};
    gp.sys = GriddedSystem(domain, std::move(data), labels);
    gp.validate();
    return gp;
}

}  // namespace lpvctl
