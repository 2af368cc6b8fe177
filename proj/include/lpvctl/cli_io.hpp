#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lpvctl/maglev_sim.hpp"
#include "lpvctl/synthesis.hpp"

namespace lpvctl::io {

// Configuration values are kept in interface units (degrees, uN m, uN) exactly
// as written in the file; the to_* functions below are the only place where
// they are converted to SI.

struct PlantConfig {
    double J_kg_m2 = 0.006;
    double tau_max_uNm = 6.3;
    double lever_arm_m = 0.21;
    double thrust_per_pair_uN = 30.0;
    bool operator==(const PlantConfig&) const = default;
};

struct DesignPointConfig {
    double eps = 1e-3;
    double omega_e_rad_s = 0.05;
    double sens_peak = 2.0;
    double omega_u_rad_s = 10.0;
    double R_eu_deg_per_uNm = 1.0;
    double R_du = 0.05;  // fraction of tau_max
    bool operator==(const DesignPointConfig&) const = default;
};

struct WeightsConfig {
    DesignPointConfig pointing;
    DesignPointConfig slewing;
    double tanh_scale_per_rad = 1.0;
    std::string eps_interp = "log10";
    std::string omega_e_interp = "linear";
    std::string sens_peak_interp = "linear";
    std::string omega_u_interp = "linear";
    std::string R_eu_interp = "linear";
    std::string R_du_interp = "linear";
    bool operator==(const WeightsConfig&) const = default;
};

struct DomainConfig {
    double rho_p_deg = 0.01;
    double rho_a_deg = 180.0;
    int grid_points = 20;
    double rate_bound_deg_s = 0.1;
    bool operator==(const DomainConfig&) const = default;
};

struct SynthesisConfig {
    std::vector<int> basis_exponents = {0, 2, 4};
    /// 0 selects gamma minimization.
    double gamma_fixed = 0.0;
    double backoff = 1.02;
    int max_retries = 3;
    double max_coupling_cond = 1e10;
    double storage_bound = 1e4;
    int max_rebalance = 12;
    double continuity_warn = 0.5;
    double eps_reg = 1e-8;
    bool operator==(const SynthesisConfig&) const = default;
};

struct SwitchingConfig {
    double threshold_deg = 5.0;
    double hysteresis_deg = 0.5;
    bool operator==(const SwitchingConfig&) const = default;
};

struct ScenarioConfig {
    std::string name = "nominal";
    std::string reference = "ramp";
    double start_s = 20.0;
    double slope_deg_s = 1.0;
    double initial_deg = 0.0;
    double final_deg = 180.0;
    double duration_s = 600.0;
    double dt_s = 0.01;
    double theta0_deg = 0.0;
    double theta_dot0_deg_s = 0.0;
    double tau0_uNm = 2.5;
    double tau_theta_amp_uNm = 1.6;
    double disturbance_scale = 1.0;
    bool operator==(const ScenarioConfig&) const = default;
};

struct FreqrespConfig {
    double omega_min_rad_s = 1e-4;
    double omega_max_rad_s = 1e3;
    int points = 400;
    bool operator==(const FreqrespConfig&) const = default;
};

struct ProjectConfig {
    std::string name = "paper_maglev";
    PlantConfig plant;
    WeightsConfig weights;
    DomainConfig domain;
    SynthesisConfig synthesis;
    SwitchingConfig switching;
    FreqrespConfig freqresp;
    std::vector<ScenarioConfig> scenarios = {ScenarioConfig{}};

    /// Throws ValidationError naming the offending key path, e.g. "domain.rho_p_deg".
    void validate() const;
    bool operator==(const ProjectConfig&) const = default;
};

/// Missing keys take their defaults; unknown keys are rejected.
ProjectConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json to_json(const ProjectConfig& c);
ProjectConfig load_config(const std::string& path);
void save_config(const ProjectConfig& c, const std::string& path);

/// FNV-1a over the compact serialization, as 16 hex digits.
std::string config_hash(const ProjectConfig& c);

MaglevPlant to_plant(const ProjectConfig& c);
WeightSchedule to_weights(const ProjectConfig& c);
/// The design grid; a single point sits at rho_p.
ParameterDomain to_domain(const ProjectConfig& c);
SynthesisOptions to_synthesis_options(const ProjectConfig& c);
SimScenario to_scenario(const ProjectConfig& c, const ScenarioConfig& s);
const ScenarioConfig& find_scenario(const ProjectConfig& c, const std::string& name);

/// Serialized gridded controller together with its certificate.
struct ControllerFile {
    static constexpr int kFormatVersion = 1;
    int format_version = kFormatVersion;
    /// "lpv", "pointing", "slewing" or "lti".
    std::string kind = "lpv";
    GriddedSystem controller;
    double gamma_syn = INFINITY;
    double gamma_opt = INFINITY;
    std::vector<int> basis_exponents;
    double rate_bound_rad_s = 0.0;
    std::vector<MatrixXd> X, Y;
    bool certified = false;
    double certified_gamma = INFINITY;
    std::vector<MatrixXd> certificate_storage;
    double coupling_cond = 0.0;
    ProjectConfig config;
    std::string config_hash;
    std::string timestamp;
};

ControllerFile make_controller_file(const SynthesisResult& r, const ProjectConfig& c, const std::string& kind);
nlohmann::ordered_json to_json(const ControllerFile& f);
ControllerFile controller_from_json(const nlohmann::ordered_json& j);
void save_controller(const ControllerFile& f, const std::string& path);
ControllerFile load_controller(const std::string& path);

/// "%.17g"; non-finite values as inf, -inf, nan.
std::string format_number(double v);

void write_margins_csv(std::ostream& os, const std::vector<MarginRow>& rows);
/// One table per block: omega_rad_s, a dB column per grid point, then the bounds.
void write_freqresp_csv(std::ostream& os, const FourBlockResponse& fr, std::size_t block);
void write_sim_csv(std::ostream& os, const SimResult& r);
struct MetricsRow {
    std::string scenario;
    SimMetrics metrics;
};
void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);

enum ExitCode : int { kOk = 0, kValidation = 2, kSolver = 3, kDivergence = 4 };

struct CommandArgs {
    std::string config;
    std::string out;
    std::vector<std::string> scenarios;
    std::optional<double> disturbance_scale;
    std::vector<std::string> controllers;
    std::optional<int> grid_override;
    std::optional<double> rate_bound_deg_s;
    /// synthesize only: "pointing" or "slewing" designs a single-point controller there.
    std::string lti_at;
};

// Each command writes a human-readable summary to `log` and CSV/JSON files
// under args.out, and returns an ExitCode. Exceptions are mapped by run_command.
int cmd_synthesize(const CommandArgs& args, std::ostream& log);
int cmd_analyze(const CommandArgs& args, std::ostream& log);
int cmd_margins(const CommandArgs& args, std::ostream& log);
int cmd_freqresp(const CommandArgs& args, std::ostream& log);
int cmd_simulate(const CommandArgs& args, std::ostream& log);
int cmd_compare(const CommandArgs& args, std::ostream& log);

/// Runs `name` and maps ValidationError to 2, SynthesisError to 3 and
/// SimulationError to 4, printing the diagnostic to `err`.
int run_command(const std::string& name, const CommandArgs& args, std::ostream& log, std::ostream& err);

}  // namespace lpvctl::io
