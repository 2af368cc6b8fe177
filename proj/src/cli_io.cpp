#include "lpvctl/cli_io.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace lpvctl::io {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr double kMicro = 1e-6;

void require(bool ok, const std::string& field, const std::string& reason) {
    if (!ok) throw ValidationError(field, reason);
}

/// Reads keys of one JSON object, remembering which were consumed so that
/// anything left over can be reported as unknown.
class Reader {
public:
    Reader(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
        require(j_.is_object(), path_.empty() ? "config" : path_, "must be an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        if constexpr (std::is_same_v<T, int>) {
            require(it->is_number_integer(), field(key), "must be an integer");
        } else if constexpr (std::is_arithmetic_v<T>) {
            require(it->is_number(), field(key), "must be a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            require(it->is_string(), field(key), "must be a string");
        }
        try {
            out = it->template get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ValidationError(field(key), "has the wrong type");
        }
    }

    template <class F>
    void object(const std::string& key, F&& f) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        Reader r(*it, field(key));
        f(r);
        r.finish();
    }

    const ordered_json* raw(const std::string& key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ValidationError(field(k), "unknown key");
    }

private:
    const ordered_json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read(Reader& r, DesignPointConfig& d) {
    r.get("eps", d.eps);
    r.get("omega_e_rad_s", d.omega_e_rad_s);
    r.get("sens_peak", d.sens_peak);
    r.get("omega_u_rad_s", d.omega_u_rad_s);
    r.get("R_eu_deg_per_uNm", d.R_eu_deg_per_uNm);
    r.get("R_du", d.R_du);
}

ordered_json write(const DesignPointConfig& d) {
    return {{"eps", d.eps},
            {"omega_e_rad_s", d.omega_e_rad_s},
            {"sens_peak", d.sens_peak},
            {"omega_u_rad_s", d.omega_u_rad_s},
            {"R_eu_deg_per_uNm", d.R_eu_deg_per_uNm},
            {"R_du", d.R_du}};
}

ScenarioConfig read_scenario(const ordered_json& j, const std::string& path) {
    ScenarioConfig s;
    Reader r(j, path);
    r.get("name", s.name);
    r.get("reference", s.reference);
    r.get("start_s", s.start_s);
    r.get("slope_deg_s", s.slope_deg_s);
    r.get("initial_deg", s.initial_deg);
    r.get("final_deg", s.final_deg);
    r.get("duration_s", s.duration_s);
    r.get("dt_s", s.dt_s);
    r.get("theta0_deg", s.theta0_deg);
    r.get("theta_dot0_deg_s", s.theta_dot0_deg_s);
    r.get("tau0_uNm", s.tau0_uNm);
    r.get("tau_theta_amp_uNm", s.tau_theta_amp_uNm);
    r.get("disturbance_scale", s.disturbance_scale);
    r.finish();
    return s;
}

ordered_json write(const ScenarioConfig& s) {
    return {{"name", s.name},
            {"reference", s.reference},
            {"start_s", s.start_s},
            {"slope_deg_s", s.slope_deg_s},
            {"initial_deg", s.initial_deg},
            {"final_deg", s.final_deg},
            {"duration_s", s.duration_s},
            {"dt_s", s.dt_s},
            {"theta0_deg", s.theta0_deg},
            {"theta_dot0_deg_s", s.theta_dot0_deg_s},
            {"tau0_uNm", s.tau0_uNm},
            {"tau_theta_amp_uNm", s.tau_theta_amp_uNm},
            {"disturbance_scale", s.disturbance_scale}};
}

void check_design_point(const DesignPointConfig& d, const std::string& p) {
    require(d.eps > 0.0 && d.eps < 1.0, p + ".eps", "must lie in (0, 1)");
    require(d.omega_e_rad_s > 0.0, p + ".omega_e_rad_s", "must be positive");
    require(d.sens_peak > 0.0, p + ".sens_peak", "must be positive");
    require(d.omega_u_rad_s > d.omega_e_rad_s, p + ".omega_u_rad_s", "must exceed omega_e_rad_s");
    require(d.R_eu_deg_per_uNm > 0.0, p + ".R_eu_deg_per_uNm", "must be positive");
    require(d.R_du > 0.0 && d.R_du <= 1.0, p + ".R_du", "must lie in (0, 1]");
}

bool valid_interp(const std::string& s) { return s == "linear" || s == "log10"; }

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char ch : s)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-')) return false;
    return true;
}

DesignPoint to_design_point(const DesignPointConfig& d) {
    DesignPoint p;
    p.eps = d.eps;
    p.omega_e = d.omega_e_rad_s;
    p.sens_peak = d.sens_peak;
    p.omega_u = d.omega_u_rad_s;
    p.R_eu = d.R_eu_deg_per_uNm * kDegToRad / kMicro;
    p.R_du = d.R_du;
    return p;
}

ordered_json write_matrix(const MatrixXd& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

MatrixXd read_matrix(const ordered_json& j, const std::string& field) {
    try {
        const Eigen::Index r = j.at("rows").get<Eigen::Index>();
        const Eigen::Index c = j.at("cols").get<Eigen::Index>();
        const ordered_json& data = j.at("data");
        require(r >= 0 && c >= 0 && data.size() == static_cast<std::size_t>(r), field, "row count mismatch");
        MatrixXd m(r, c);
        for (Eigen::Index i = 0; i < r; ++i) {
            require(data[i].size() == static_cast<std::size_t>(c), field, "column count mismatch");
            for (Eigen::Index k = 0; k < c; ++k) m(i, k) = data[i][k].get<double>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(field, e.what());
    }
}

ordered_json write_matrices(const std::vector<MatrixXd>& ms) {
    ordered_json a = ordered_json::array();
    for (const auto& m : ms) a.push_back(write_matrix(m));
    return a;
}

std::vector<MatrixXd> read_matrices(const ordered_json& j, const std::string& field) {
    require(j.is_array(), field, "must be an array");
    std::vector<MatrixXd> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(read_matrix(j[i], field + "[" + std::to_string(i) + "]"));
    return out;
}

// JSON has no infinity; unbounded values are stored as null.
ordered_json write_extended(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }
double read_extended(const ordered_json& j) { return j.is_null() ? INFINITY : j.get<double>(); }

std::string utc_timestamp() {
    std::time_t t = std::time(nullptr);
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

ordered_json parse_file(const std::string& path, const std::string& field) {
    std::ifstream f(path);
    require(static_cast<bool>(f), field, "cannot open '" + path + "'");
    try {
        return ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(field, "'" + path + "' is not valid JSON: " + e.what());
    }
}

void write_file(const std::string& path, const std::string& content) {
    if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), "--out", "cannot write '" + path + "'");
    f << content;
    require(static_cast<bool>(f), "--out", "write to '" + path + "' failed");
}

template <class F>
void write_csv(const std::string& dir, const std::string& name, F&& body) {
    std::ostringstream os;
    body(os);
    write_file((fs::path(dir) / name).string(), os.str());
}

std::string out_dir(const CommandArgs& args) { return args.out.empty() ? "." : args.out; }

ControllerFile first_controller(const CommandArgs& args) {
    require(!args.controllers.empty(), "--controller", "a controller file is required");
    return load_controller(args.controllers.front());
}

/// Config of a controller file, replaced by --config when given.
ProjectConfig effective_config(const CommandArgs& args, const ControllerFile& f) {
    ProjectConfig c = args.config.empty() ? f.config : load_config(args.config);
    c.validate();
    return c;
}

std::vector<const ScenarioConfig*> selected_scenarios(const CommandArgs& args, const ProjectConfig& c) {
    std::vector<const ScenarioConfig*> out;
    if (args.scenarios.empty()) {
        for (const auto& s : c.scenarios) out.push_back(&s);
    } else {
        for (const auto& name : args.scenarios) out.push_back(&find_scenario(c, name));
    }
    return out;
}

SimScenario scenario_for(const CommandArgs& args, const ProjectConfig& c, const ScenarioConfig& s) {
    ScenarioConfig sc = s;
    if (args.disturbance_scale) {
        require(std::isfinite(*args.disturbance_scale) && *args.disturbance_scale >= 0.0, "--disturbance-scale",
                "must be non-negative");
        sc.disturbance_scale = *args.disturbance_scale;
    }
    return to_scenario(c, sc);
}

GeneralizedPlant plant_for(const ControllerFile& f, const ProjectConfig& c) {
    const MaglevPlant p = to_plant(c);
    return build_generalized_plant(p.linear(), to_weights(c), f.controller.domain(), p.tau_max);
}

}  // namespace

void ProjectConfig::validate() const {
    require(valid_name(name), "name", "must be non-empty [A-Za-z0-9_-]");

    require(plant.J_kg_m2 > 0.0, "plant.J_kg_m2", "must be positive");
    require(plant.tau_max_uNm > 0.0, "plant.tau_max_uNm", "must be positive");
    require(plant.lever_arm_m > 0.0, "plant.lever_arm_m", "must be positive");
    require(plant.thrust_per_pair_uN > 0.0, "plant.thrust_per_pair_uN", "must be positive");
    require(std::abs(plant.tau_max_uNm - plant.thrust_per_pair_uN * plant.lever_arm_m) <= 1e-9 * plant.tau_max_uNm,
            "plant.tau_max_uNm", "must equal thrust_per_pair_uN * lever_arm_m");

    check_design_point(weights.pointing, "weights.pointing");
    check_design_point(weights.slewing, "weights.slewing");
    require(weights.tanh_scale_per_rad > 0.0 && std::isfinite(weights.tanh_scale_per_rad), "weights.tanh_scale_per_rad",
            "must be positive");
    const std::pair<const char*, const std::string*> modes[] = {
        {"eps_interp", &weights.eps_interp},           {"omega_e_interp", &weights.omega_e_interp},
        {"sens_peak_interp", &weights.sens_peak_interp}, {"omega_u_interp", &weights.omega_u_interp},
        {"R_eu_interp", &weights.R_eu_interp},         {"R_du_interp", &weights.R_du_interp}};
    for (const auto& [key, value] : modes)
        require(valid_interp(*value), std::string("weights.") + key, "must be linear or log10");

    require(std::isfinite(domain.rho_p_deg) && domain.rho_p_deg >= 0.0, "domain.rho_p_deg", "must be non-negative");
    require(domain.rho_p_deg < domain.rho_a_deg, "domain.rho_p_deg", "must be strictly less than domain.rho_a_deg");
    require(std::isfinite(domain.rho_a_deg), "domain.rho_a_deg", "must be finite");
    require(domain.grid_points >= 1, "domain.grid_points", "must be >= 1");
    require(std::isfinite(domain.rate_bound_deg_s) && domain.rate_bound_deg_s >= 0.0, "domain.rate_bound_deg_s",
            "must be non-negative");

    require(!synthesis.basis_exponents.empty(), "synthesis.basis_exponents", "must not be empty");
    std::set<int> seen;
    for (int e : synthesis.basis_exponents) {
        require(e >= 0, "synthesis.basis_exponents", "exponents must be non-negative");
        require(seen.insert(e).second, "synthesis.basis_exponents", "exponents must be distinct");
    }
    require(synthesis.gamma_fixed >= 0.0 && std::isfinite(synthesis.gamma_fixed), "synthesis.gamma_fixed",
            "must be non-negative (0 minimizes)");
    require(synthesis.backoff >= 1.0, "synthesis.backoff", "must be >= 1");
    require(synthesis.max_retries >= 0, "synthesis.max_retries", "must be non-negative");
    require(synthesis.max_coupling_cond > 1.0, "synthesis.max_coupling_cond", "must exceed 1");
    require(synthesis.storage_bound > 0.0, "synthesis.storage_bound", "must be positive");
    require(synthesis.max_rebalance >= 0, "synthesis.max_rebalance", "must be non-negative");
    require(synthesis.continuity_warn > 0.0, "synthesis.continuity_warn", "must be positive");
    require(synthesis.eps_reg >= 0.0, "synthesis.eps_reg", "must be non-negative");

    require(switching.threshold_deg > 0.0, "switching.threshold_deg", "must be positive");
    require(switching.hysteresis_deg >= 0.0 && switching.hysteresis_deg < switching.threshold_deg,
            "switching.hysteresis_deg", "must lie in [0, threshold_deg)");

    require(freqresp.omega_min_rad_s > 0.0, "freqresp.omega_min_rad_s", "must be positive");
    require(freqresp.omega_max_rad_s > freqresp.omega_min_rad_s, "freqresp.omega_max_rad_s",
            "must exceed omega_min_rad_s");
    require(freqresp.points >= 2, "freqresp.points", "must be >= 2");

    require(!scenarios.empty(), "scenarios", "at least one scenario required");
    std::set<std::string> names;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
        const ScenarioConfig& s = scenarios[i];
        const std::string p = "scenarios[" + std::to_string(i) + "]";
        require(valid_name(s.name), p + ".name", "must be non-empty [A-Za-z0-9_-]");
        require(names.insert(s.name).second, p + ".name", "duplicate scenario name");
        require(s.reference == "ramp" || s.reference == "step" || s.reference == "hold", p + ".reference",
                "must be ramp, step or hold");
        require(s.dt_s > 0.0 && std::isfinite(s.dt_s), p + ".dt_s", "must be positive");
        require(s.duration_s > 0.0 && std::isfinite(s.duration_s), p + ".duration_s", "must be positive");
        require(s.start_s >= 0.0, p + ".start_s", "must be non-negative");
        if (s.reference == "ramp") require(s.slope_deg_s > 0.0, p + ".slope_deg_s", "must be positive");
        require(s.disturbance_scale >= 0.0, p + ".disturbance_scale", "must be non-negative");
        if (s.reference == "ramp") {
            const double settle = s.start_s + std::abs(s.final_deg - s.initial_deg) / s.slope_deg_s;
            require(s.duration_s >= settle, p + ".duration_s", "shorter than the reference ramp");
        }
    }

    // Backstop: the converted values must satisfy the library's own checks.
    to_weights(*this).validate();
    to_synthesis_options(*this).validate();
    for (const auto& s : scenarios) to_scenario(*this, s).validate();
}

ProjectConfig config_from_json(const nlohmann::ordered_json& j) {
    ProjectConfig c;
    Reader r(j, "");
    r.get("name", c.name);
    r.object("plant", [&](Reader& p) {
        p.get("J_kg_m2", c.plant.J_kg_m2);
        p.get("tau_max_uNm", c.plant.tau_max_uNm);
        p.get("lever_arm_m", c.plant.lever_arm_m);
        p.get("thrust_per_pair_uN", c.plant.thrust_per_pair_uN);
    });
    r.object("weights", [&](Reader& w) {
        w.object("pointing", [&](Reader& d) { read(d, c.weights.pointing); });
        w.object("slewing", [&](Reader& d) { read(d, c.weights.slewing); });
        w.get("tanh_scale_per_rad", c.weights.tanh_scale_per_rad);
        w.get("eps_interp", c.weights.eps_interp);
        w.get("omega_e_interp", c.weights.omega_e_interp);
        w.get("sens_peak_interp", c.weights.sens_peak_interp);
        w.get("omega_u_interp", c.weights.omega_u_interp);
        w.get("R_eu_interp", c.weights.R_eu_interp);
        w.get("R_du_interp", c.weights.R_du_interp);
    });
    r.object("domain", [&](Reader& d) {
        d.get("rho_p_deg", c.domain.rho_p_deg);
        d.get("rho_a_deg", c.domain.rho_a_deg);
        d.get("grid_points", c.domain.grid_points);
        d.get("rate_bound_deg_s", c.domain.rate_bound_deg_s);
    });
    r.object("synthesis", [&](Reader& s) {
        if (const ordered_json* e = s.raw("basis_exponents")) {
            require(e->is_array(), "synthesis.basis_exponents", "must be an array of integers");
            c.synthesis.basis_exponents.clear();
            for (const auto& v : *e) {
                require(v.is_number_integer(), "synthesis.basis_exponents", "must be an array of integers");
                c.synthesis.basis_exponents.push_back(v.get<int>());
            }
        }
        s.get("gamma_fixed", c.synthesis.gamma_fixed);
        s.get("backoff", c.synthesis.backoff);
        s.get("max_retries", c.synthesis.max_retries);
        s.get("max_coupling_cond", c.synthesis.max_coupling_cond);
        s.get("storage_bound", c.synthesis.storage_bound);
        s.get("max_rebalance", c.synthesis.max_rebalance);
        s.get("continuity_warn", c.synthesis.continuity_warn);
        s.get("eps_reg", c.synthesis.eps_reg);
    });
    r.object("switching", [&](Reader& s) {
        s.get("threshold_deg", c.switching.threshold_deg);
        s.get("hysteresis_deg", c.switching.hysteresis_deg);
    });
    r.object("freqresp", [&](Reader& f) {
        f.get("omega_min_rad_s", c.freqresp.omega_min_rad_s);
        f.get("omega_max_rad_s", c.freqresp.omega_max_rad_s);
        f.get("points", c.freqresp.points);
    });
    if (const ordered_json* sc = r.raw("scenarios")) {
        require(sc->is_array(), "scenarios", "must be an array");
        c.scenarios.clear();
        for (std::size_t i = 0; i < sc->size(); ++i)
            c.scenarios.push_back(read_scenario((*sc)[i], "scenarios[" + std::to_string(i) + "]"));
    }
    r.finish();
    return c;
}

nlohmann::ordered_json to_json(const ProjectConfig& c) {
    ordered_json scenarios = ordered_json::array();
    for (const auto& s : c.scenarios) scenarios.push_back(write(s));
    return {{"name", c.name},
            {"plant",
             {{"J_kg_m2", c.plant.J_kg_m2},
              {"tau_max_uNm", c.plant.tau_max_uNm},
              {"lever_arm_m", c.plant.lever_arm_m},
              {"thrust_per_pair_uN", c.plant.thrust_per_pair_uN}}},
            {"weights",
             {{"pointing", write(c.weights.pointing)},
              {"slewing", write(c.weights.slewing)},
              {"tanh_scale_per_rad", c.weights.tanh_scale_per_rad},
              {"eps_interp", c.weights.eps_interp},
              {"omega_e_interp", c.weights.omega_e_interp},
              {"sens_peak_interp", c.weights.sens_peak_interp},
              {"omega_u_interp", c.weights.omega_u_interp},
              {"R_eu_interp", c.weights.R_eu_interp},
              {"R_du_interp", c.weights.R_du_interp}}},
            {"domain",
             {{"rho_p_deg", c.domain.rho_p_deg},
              {"rho_a_deg", c.domain.rho_a_deg},
              {"grid_points", c.domain.grid_points},
              {"rate_bound_deg_s", c.domain.rate_bound_deg_s}}},
            {"synthesis",
             {{"basis_exponents", c.synthesis.basis_exponents},
              {"gamma_fixed", c.synthesis.gamma_fixed},
              {"backoff", c.synthesis.backoff},
              {"max_retries", c.synthesis.max_retries},
              {"max_coupling_cond", c.synthesis.max_coupling_cond},
              {"storage_bound", c.synthesis.storage_bound},
              {"max_rebalance", c.synthesis.max_rebalance},
              {"continuity_warn", c.synthesis.continuity_warn},
              {"eps_reg", c.synthesis.eps_reg}}},
            {"switching",
             {{"threshold_deg", c.switching.threshold_deg}, {"hysteresis_deg", c.switching.hysteresis_deg}}},
            {"freqresp",
             {{"omega_min_rad_s", c.freqresp.omega_min_rad_s},
              {"omega_max_rad_s", c.freqresp.omega_max_rad_s},
              {"points", c.freqresp.points}}},
            {"scenarios", scenarios}};
}

ProjectConfig load_config(const std::string& path) { return config_from_json(parse_file(path, "--config")); }

void save_config(const ProjectConfig& c, const std::string& path) { write_file(path, to_json(c).dump(2) + "\n"); }

std::string config_hash(const ProjectConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return buf;
}

MaglevPlant to_plant(const ProjectConfig& c) {
    MaglevPlant p;
    p.J = c.plant.J_kg_m2;
    p.tau_max = c.plant.tau_max_uNm * kMicro;
    p.lever_arm = c.plant.lever_arm_m;
    p.thrust_per_pair = c.plant.thrust_per_pair_uN * kMicro;
    return p;
}

WeightSchedule to_weights(const ProjectConfig& c) {
    WeightSchedule w;
    w.pointing = to_design_point(c.weights.pointing);
    w.slewing = to_design_point(c.weights.slewing);
    w.rho_p = c.domain.rho_p_deg * kDegToRad;
    w.rho_a = c.domain.rho_a_deg * kDegToRad;
    w.tanh_scale = c.weights.tanh_scale_per_rad;
    w.eps_mode = interp_mode_from_string(c.weights.eps_interp);
    w.omega_e_mode = interp_mode_from_string(c.weights.omega_e_interp);
    w.sens_peak_mode = interp_mode_from_string(c.weights.sens_peak_interp);
    w.omega_u_mode = interp_mode_from_string(c.weights.omega_u_interp);
    w.R_eu_mode = interp_mode_from_string(c.weights.R_eu_interp);
    w.R_du_mode = interp_mode_from_string(c.weights.R_du_interp);
    return w;
}

ParameterDomain to_domain(const ProjectConfig& c) {
    return ParameterDomain::uniform(c.domain.rho_p_deg * kDegToRad, c.domain.rho_a_deg * kDegToRad,
                                    c.domain.grid_points, c.domain.rate_bound_deg_s * kDegToRad);
}

SynthesisOptions to_synthesis_options(const ProjectConfig& c) {
    SynthesisOptions o;
    o.basis = BasisSpec::monomials(c.synthesis.basis_exponents);
    o.rate_bound = -1.0;
    if (c.synthesis.gamma_fixed > 0.0) {
        o.gamma_mode = GammaMode::Fixed;
        o.gamma_fixed = c.synthesis.gamma_fixed;
    }
    o.backoff = c.synthesis.backoff;
    o.max_retries = c.synthesis.max_retries;
    o.max_coupling_cond = c.synthesis.max_coupling_cond;
    o.storage_bound = c.synthesis.storage_bound;
    o.max_rebalance = c.synthesis.max_rebalance;
    o.continuity_warn = c.synthesis.continuity_warn;
    o.eps_reg = c.synthesis.eps_reg;
    return o;
}

SimScenario to_scenario(const ProjectConfig& c, const ScenarioConfig& s) {
    SimScenario sc;
    sc.name = s.name;
    sc.reference.kind = reference_kind_from_string(s.reference);
    sc.reference.start_time = s.start_s;
    sc.reference.slope = s.slope_deg_s * kDegToRad;
    sc.reference.initial_value = s.initial_deg * kDegToRad;
    sc.reference.final_value = s.final_deg * kDegToRad;
    sc.duration = s.duration_s;
    sc.dt = s.dt_s;
    sc.theta0 = s.theta0_deg * kDegToRad;
    sc.theta_dot0 = s.theta_dot0_deg_s * kDegToRad;
    sc.disturbance.tau0 = s.tau0_uNm * kMicro;
    sc.disturbance.tau_theta_amp = s.tau_theta_amp_uNm * kMicro;
    sc.disturbance.scale = s.disturbance_scale;
    sc.plant = to_plant(c);
    sc.rho_p = c.domain.rho_p_deg * kDegToRad;
    sc.rho_a = c.domain.rho_a_deg * kDegToRad;
    return sc;
}

const ScenarioConfig& find_scenario(const ProjectConfig& c, const std::string& name) {
    for (const auto& s : c.scenarios)
        if (s.name == name) return s;
    throw ValidationError("--scenario", "no scenario named '" + name + "' in the configuration");
}

ControllerFile make_controller_file(const SynthesisResult& r, const ProjectConfig& c, const std::string& kind) {
    ControllerFile f;
    f.kind = kind;
    f.controller = r.controller;
    f.gamma_syn = r.gamma_syn;
    f.gamma_opt = r.gamma_opt;
    f.basis_exponents = r.basis.exponents();
    f.rate_bound_rad_s = r.rate_bound;
    f.X = r.X;
    f.Y = r.Y;
    f.certified = r.recertification.certified();
    f.certified_gamma = r.recertification.gamma;
    f.certificate_storage = r.recertification.storage;
    f.coupling_cond = r.coupling_cond;
    f.config = c;
    f.config_hash = config_hash(c);
    f.timestamp = utc_timestamp();
    return f;
}

nlohmann::ordered_json to_json(const ControllerFile& f) {
    ordered_json points = ordered_json::array();
    for (const auto& s : f.controller.data())
        points.push_back({{"A", write_matrix(s.A)}, {"B", write_matrix(s.B)}, {"C", write_matrix(s.C)},
                          {"D", write_matrix(s.D)}});
    return {{"format_version", f.format_version},
            {"kind", f.kind},
            {"domain",
             {{"grid_rad", f.controller.domain().grid()}, {"rate_bound_rad_s", f.controller.domain().rate_bound()}}},
            {"controller", points},
            {"gamma_syn", write_extended(f.gamma_syn)},
            {"gamma_opt", write_extended(f.gamma_opt)},
            {"certificate",
             {{"basis_exponents", f.basis_exponents},
              {"rate_bound_rad_s", f.rate_bound_rad_s},
              {"X", write_matrices(f.X)},
              {"Y", write_matrices(f.Y)},
              {"certified", f.certified},
              {"gamma", write_extended(f.certified_gamma)},
              {"storage", write_matrices(f.certificate_storage)},
              {"coupling_cond", f.coupling_cond}}},
            {"provenance", {{"config_hash", f.config_hash}, {"timestamp", f.timestamp}}},
            {"config", to_json(f.config)}};
}

ControllerFile controller_from_json(const nlohmann::ordered_json& j) {
    ControllerFile f;
    try {
        f.format_version = j.at("format_version").get<int>();
        require(f.format_version == ControllerFile::kFormatVersion, "format_version",
                "unsupported version " + std::to_string(f.format_version));
        f.kind = j.at("kind").get<std::string>();
        const ParameterDomain dom(j.at("domain").at("grid_rad").get<std::vector<double>>(),
                                  j.at("domain").at("rate_bound_rad_s").get<double>());
        std::vector<StateSpace> data;
        const ordered_json& pts = j.at("controller");
        for (std::size_t k = 0; k < pts.size(); ++k) {
            const std::string p = "controller[" + std::to_string(k) + "]";
            data.emplace_back(read_matrix(pts[k].at("A"), p + ".A"), read_matrix(pts[k].at("B"), p + ".B"),
                              read_matrix(pts[k].at("C"), p + ".C"), read_matrix(pts[k].at("D"), p + ".D"));
        }
        f.controller = GriddedSystem(dom, std::move(data));
        require(f.controller.inputs() == 1 && f.controller.outputs() == 1, "controller",
                "must map the measured error to one torque command");
        f.gamma_syn = read_extended(j.at("gamma_syn"));
        f.gamma_opt = read_extended(j.at("gamma_opt"));
        const ordered_json& cert = j.at("certificate");
        f.basis_exponents = cert.at("basis_exponents").get<std::vector<int>>();
        f.rate_bound_rad_s = cert.at("rate_bound_rad_s").get<double>();
        f.X = read_matrices(cert.at("X"), "certificate.X");
        f.Y = read_matrices(cert.at("Y"), "certificate.Y");
        f.certified = cert.at("certified").get<bool>();
        f.certified_gamma = read_extended(cert.at("gamma"));
        f.certificate_storage = read_matrices(cert.at("storage"), "certificate.storage");
        f.coupling_cond = cert.at("coupling_cond").get<double>();
        f.config_hash = j.at("provenance").at("config_hash").get<std::string>();
        f.timestamp = j.at("provenance").at("timestamp").get<std::string>();
        f.config = config_from_json(j.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("controller file", e.what());
    }
    return f;
}

void save_controller(const ControllerFile& f, const std::string& path) { write_file(path, to_json(f).dump(1) + "\n"); }

ControllerFile load_controller(const std::string& path) {
    return controller_from_json(parse_file(path, "--controller"));
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_margins_csv(std::ostream& os, const std::vector<MarginRow>& rows) {
    os << "grid_point_deg,gm_pos_db,gm_neg_db,pm_deg\n";
    for (const auto& r : rows)
        os << format_number(r.rho / kDegToRad) << ',' << format_number(r.margins.gm_pos_db) << ','
           << format_number(r.margins.gm_neg_db) << ',' << format_number(r.margins.pm_deg) << '\n';
}

void write_freqresp_csv(std::ostream& os, const FourBlockResponse& fr, std::size_t block) {
    os << "omega_rad_s";
    for (double rho : fr.rho) os << ",db_" << format_number(rho / kDegToRad) << "deg";
    for (double rho : fr.rho) os << ",bound_db_" << format_number(rho / kDegToRad) << "deg";
    os << '\n';
    for (std::size_t i = 0; i < fr.omegas.size(); ++i) {
        os << format_number(fr.omegas[i]);
        for (std::size_t k = 0; k < fr.rho.size(); ++k) os << ',' << format_number(fr.mag_db[block][k][i]);
        for (std::size_t k = 0; k < fr.rho.size(); ++k) os << ',' << format_number(fr.bound_db[block][k][i]);
        os << '\n';
    }
}

void write_sim_csv(std::ostream& os, const SimResult& r) {
    os << "t_s,theta_ref_deg,theta_deg,rho_deg,tau_cmd_uNm,tau_uNm,sat_flag,ctrl_tag\n";
    for (std::size_t k = 0; k < r.t.size(); ++k)
        os << format_number(r.t[k]) << ',' << format_number(r.theta_ref[k] / kDegToRad) << ','
           << format_number(r.theta[k] / kDegToRad) << ',' << format_number(r.rho[k] / kDegToRad) << ','
           << format_number(r.tau_cmd[k] / kMicro) << ',' << format_number(r.tau[k] / kMicro) << ','
           << r.saturated[k] << ',' << r.ctrl_tag[k] << '\n';
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
    os << "scenario,intercept_s,overshoot_pct,band1deg_s,band0p1deg_s,sat_total_s\n";
    for (const auto& r : rows)
        os << r.scenario << ',' << format_number(r.metrics.intercept_s) << ',' << format_number(r.metrics.overshoot_pct)
           << ',' << format_number(r.metrics.band1deg_s) << ',' << format_number(r.metrics.band0p1deg_s) << ','
           << format_number(r.metrics.sat_total_s) << '\n';
}

int cmd_synthesize(const CommandArgs& args, std::ostream& log) {
    require(!args.config.empty(), "--config", "a configuration file is required");
    require(!args.out.empty(), "--out", "an output path is required");
    ProjectConfig c = load_config(args.config);
    if (args.grid_override) c.domain.grid_points = *args.grid_override;
    if (args.rate_bound_deg_s) c.domain.rate_bound_deg_s = *args.rate_bound_deg_s;
    c.validate();

    const MaglevPlant plant = to_plant(c);
    const WeightSchedule weights = to_weights(c);
    ParameterDomain dom = to_domain(c);
    std::string kind = dom.is_lti() ? "pointing" : "lpv";
    if (!args.lti_at.empty()) {
        require(args.lti_at == "pointing" || args.lti_at == "slewing", "--lti", "must be pointing or slewing");
        kind = args.lti_at;
        dom = ParameterDomain::lti(kind == "pointing" ? weights.rho_p : weights.rho_a);
    }
    const GeneralizedPlant gp = build_generalized_plant(plant.linear(), weights, dom, plant.tau_max);
    const SynthesisOptions opts = to_synthesis_options(c);
    const SynthesisResult r = dom.is_lti() ? synthesize_hinf(gp, opts) : synthesize_lpv(gp, opts);

    const ControllerFile f = make_controller_file(r, c, kind);
    save_controller(f, args.out);
    log << "controller: " << kind << " (" << dom.size() << " grid points, " << r.controller.states()
        << " states) -> " << args.out << '\n';
    log << "gamma_opt " << format_number(r.gamma_opt) << ", gamma_syn " << format_number(r.gamma_syn)
        << ", certified gamma " << format_number(r.recertification.gamma) << '\n';
    log << "continuity: max jump " << format_number(r.continuity.max_jump) << " at interval "
        << r.continuity.worst_interval << (r.continuity.warn ? " (warning)" : "") << '\n';
    for (const auto& w : r.warnings) log << "warning: " << w << '\n';
    if (!r.recertification.certified()) {
        log << "certification failed: " << r.recertification.message << '\n';
        return kSolver;
    }
    return kOk;
}

int cmd_analyze(const CommandArgs& args, std::ostream& log) {
    const ControllerFile f = first_controller(args);
    const ProjectConfig c = effective_config(args, f);
    const GeneralizedPlant gp = plant_for(f, c);
    const GriddedSystem cl = close_loop(gp, f.controller);

    bool ok = true;
    std::ostringstream os;
    os << "grid_point_deg,hinf_norm,gamma_syn,hurwitz\n";
    for (std::size_t k = 0; k < cl.size(); ++k) {
        const bool stable = cl.at(k).is_hurwitz();
        const double peak = stable ? hinf_norm_bisect(cl.at(k), 1e-6) : INFINITY;
        ok = ok && stable && peak <= f.gamma_syn * 1.001;
        os << format_number(cl.domain().grid()[k] / kDegToRad) << ',' << format_number(peak) << ','
           << format_number(f.gamma_syn) << ',' << (stable ? 1 : 0) << '\n';
    }
    write_file((fs::path(out_dir(args)) / "analysis.csv").string(), os.str());

    double residual = INFINITY;
    if (f.certified && !f.certificate_storage.empty()) {
        residual = brl_residual(cl, BasisSpec::monomials(f.basis_exponents), f.certificate_storage,
                                f.certified_gamma * (1.0 + 1e-6), f.rate_bound_rad_s);
    }
    // residual is normalized; rounding leaves values of order 1e-16 and below
    const bool cert_ok = residual <= 1e-12 && f.certified_gamma <= 1.05 * f.gamma_syn;
    log << "frozen-point norms " << (ok ? "within" : "EXCEED") << " gamma_syn " << format_number(f.gamma_syn) << '\n';
    log << "stored certificate: gamma " << format_number(f.certified_gamma) << ", residual " << format_number(residual)
        << (cert_ok ? " (valid)" : " (INVALID)") << '\n';
    return ok && cert_ok ? kOk : kSolver;
}

int cmd_margins(const CommandArgs& args, std::ostream& log) {
    const ControllerFile f = first_controller(args);
    const ProjectConfig c = effective_config(args, f);
    const std::vector<MarginRow> rows = margin_sweep(to_plant(c).linear(), f.controller);
    write_csv(out_dir(args), "margins.csv", [&](std::ostream& os) { write_margins_csv(os, rows); });
    double pm = INFINITY, gm = INFINITY;
    for (const auto& r : rows) {
        pm = std::min(pm, r.margins.pm_deg);
        gm = std::min(gm, r.margins.min_abs_gm_db());
    }
    log << "min phase margin " << format_number(pm) << " deg, min |gain margin| " << format_number(gm) << " dB\n";
    return kOk;
}

int cmd_freqresp(const CommandArgs& args, std::ostream& log) {
    const ControllerFile f = first_controller(args);
    const ProjectConfig c = effective_config(args, f);
    const std::vector<double> omegas = logspace(std::log10(c.freqresp.omega_min_rad_s),
                                                std::log10(c.freqresp.omega_max_rad_s), c.freqresp.points);
    const FourBlockResponse fr = closed_loop_freqresp(to_plant(c).linear(), f.controller, to_weights(c), f.gamma_syn,
                                                      omegas);
    const auto& names = four_block_names();
    for (std::size_t b = 0; b < names.size(); ++b)
        write_csv(out_dir(args), "freqresp_" + names[b] + ".csv",
                  [&](std::ostream& os) { write_freqresp_csv(os, fr, b); });
    log << "four-block responses at " << omegas.size() << " frequencies, " << fr.rho.size() << " grid points\n";
    return kOk;
}

int cmd_simulate(const CommandArgs& args, std::ostream& log) {
    const ControllerFile f = first_controller(args);
    const ProjectConfig c = effective_config(args, f);
    std::vector<MetricsRow> rows;
    for (const ScenarioConfig* s : selected_scenarios(args, c)) {
        const SimScenario sc = scenario_for(args, c, *s);
        sc.validate();
        ScheduledController ctrl(f.controller, f.kind);
        const SimResult r = run_scenario(sc, ctrl);
        write_csv(out_dir(args), "sim_" + s->name + ".csv", [&](std::ostream& os) { write_sim_csv(os, r); });
        rows.push_back({s->name, r.metrics});
        log << s->name << ": intercept " << format_number(r.metrics.intercept_s) << " s, overshoot "
            << format_number(r.metrics.overshoot_pct) << " %, saturated " << format_number(r.metrics.sat_total_s)
            << " s\n";
    }
    write_csv(out_dir(args), "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rows); });
    return kOk;
}

int cmd_compare(const CommandArgs& args, std::ostream& log) {
    require(!args.controllers.empty(), "--controller", "at least one controller file is required");
    std::vector<ControllerFile> files;
    std::map<std::string, std::size_t> by_kind;
    for (const auto& path : args.controllers) {
        files.push_back(load_controller(path));
        require(by_kind.emplace(files.back().kind, files.size() - 1).second, "--controller",
                "two controllers of kind '" + files.back().kind + "'");
    }
    const ProjectConfig c = effective_config(args, files.front());

    struct Job {
        std::string label;
        std::string scenario;
        std::function<std::unique_ptr<SimController>()> make;
        SimScenario sc;
    };
    std::vector<Job> jobs;
    for (const ScenarioConfig* s : selected_scenarios(args, c)) {
        const SimScenario sc = scenario_for(args, c, *s);
        sc.validate();
        for (const auto& f : files) {
            const GriddedSystem K = f.controller;
            const std::string kind = f.kind;
            jobs.push_back({kind, s->name, [K, kind] { return std::make_unique<ScheduledController>(K, kind); }, sc});
        }
        if (by_kind.count("pointing") && by_kind.count("slewing")) {
            const StateSpace Kp = files[by_kind["pointing"]].controller.at(0);
            const StateSpace Ks = files[by_kind["slewing"]].controller.at(0);
            const double th = c.switching.threshold_deg * kDegToRad, hy = c.switching.hysteresis_deg * kDegToRad;
            jobs.push_back({"switching", s->name, [Kp, Ks, th, hy] { return switching_controller(Kp, Ks, th, hy); },
                            sc});
        }
    }

    // independent runs; results are collected in job order
    std::vector<std::future<SimResult>> futures;
    for (const Job& job : jobs)
        futures.push_back(std::async(std::launch::async, [&job] {
            const auto ctrl = job.make();
            return run_scenario(job.sc, *ctrl);
        }));
    std::vector<MetricsRow> rows;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const SimResult r = futures[i].get();
        const std::string name = jobs[i].scenario + "_" + jobs[i].label;
        write_csv(out_dir(args), "sim_" + name + ".csv", [&](std::ostream& os) { write_sim_csv(os, r); });
        rows.push_back({jobs[i].scenario + "/" + jobs[i].label, r.metrics});
        log << rows.back().scenario << ": 1 deg band " << format_number(r.metrics.band1deg_s) << " s, overshoot "
            << format_number(r.metrics.overshoot_pct) << " %, saturated " << format_number(r.metrics.sat_total_s)
            << " s\n";
    }
    write_csv(out_dir(args), "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, rows); });
    return kOk;
}

int run_command(const std::string& name, const CommandArgs& args, std::ostream& log, std::ostream& err) {
    static const std::map<std::string, int (*)(const CommandArgs&, std::ostream&)> commands = {
        {"synthesize", cmd_synthesize}, {"analyze", cmd_analyze},   {"margins", cmd_margins},
        {"freqresp", cmd_freqresp},     {"simulate", cmd_simulate}, {"compare", cmd_compare}};
    const auto it = commands.find(name);
    if (it == commands.end()) {
        err << "error: unknown command '" << name << "'\n";
        return kValidation;
    }
    try {
        return it->second(args, log);
    } catch (const ValidationError& e) {
        err << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const SynthesisError& e) {
        err << "synthesis failed: " << e.what() << '\n';
        return kSolver;
    } catch (const SimulationError& e) {
        err << "simulation diverged: " << e.what() << '\n';
        return kDivergence;
    } catch (const fs::filesystem_error& e) {
        err << "file error: " << e.what() << '\n';
        return kValidation;
    }
}

}  // namespace lpvctl::io
