#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "lpvctl/analysis.hpp"
#include "lpvctl/weighting.hpp"

namespace lpvctl {

enum class GammaMode { Minimize, Fixed };

struct SynthesisOptions {
    BasisSpec basis = BasisSpec::monomials({0, 2, 4});
    /// Negative: take the rate bound of the plant's domain.
    double rate_bound = -1.0;
    GammaMode gamma_mode = GammaMode::Minimize;
    double gamma_fixed = 0.0;
    /// Strictness margin of the synthesis LMIs.
    double eps_reg = 1e-8;
    /// gamma used for construction = backoff * optimal gamma.
    double backoff = 1.02;
    int max_retries = 3;
    /// Condition number of I - XY above which the construction is retried.
    double max_coupling_cond = 1e10;
    double continuity_warn = 0.5;
    double gamma_cap = 1e6;
    /// Bound on the storage eigenvalues in the working coordinates.
    double storage_bound = 1e4;
    /// Rounds of re-solving in coordinates balanced by the previous storage.
    int max_rebalance = 12;

    void validate() const;
};

struct ContinuityReport {
    double max_jump = 0.0;
    std::size_t worst_interval = 0;  // jump between grid points k and k+1
    bool warn = false;
};

struct SynthesisResult {
    /// Inputs y (measured error), outputs u (command), in the plant's units.
    GriddedSystem controller;
    /// Bound the controller is constructed for (backed off from gamma_opt).
    double gamma_syn = INFINITY;
    /// Optimum of the projected synthesis LMIs.
    double gamma_opt = INFINITY;
    BasisSpec basis;
    double rate_bound = 0.0;
    /// Storage coefficients in plant state coordinates. X has one matrix per
    /// basis function; Y is parameter independent and has a single entry.
    std::vector<MatrixXd> X, Y;
    ContinuityReport continuity;
    double coupling_cond = 0.0;
    int attempts = 0;
    /// Re-analysis of the closed loop over the same basis and rate bound.
    GainCertificate recertification;
    std::vector<std::string> warnings;
};

class SynthesisError : public std::runtime_error {
public:
    enum class Kind { Infeasible, SolverFailure, Coupling, Construction, Recertification };
    SynthesisError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Gridded output-feedback induced-L2 synthesis; throws SynthesisError.
SynthesisResult synthesize_lpv(const GeneralizedPlant& gp, const SynthesisOptions& opts = {});

/// LTI H-infinity special case: single grid point, zero rate, constant basis.
SynthesisResult synthesize_hinf(const GeneralizedPlant& gp, SynthesisOptions opts = {});

/// Closed loop F_l(G, K) restricted to the performance channels w -> z.
GriddedSystem close_loop(const GeneralizedPlant& gp, const GriddedSystem& controller);

ContinuityReport continuity_report(const GriddedSystem& controller, double warn_above);

}  // namespace lpvctl
