#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lpvctl/lmi.hpp"
#include "lpvctl/lpv_core.hpp"

namespace lpvctl {

/// Scalar basis functions f_i(rho) with derivatives; the storage function is
/// X(rho) = sum_i f_i(rho) X_i.
class BasisSpec {
public:
    using Fn = std::function<double(double)>;

    BasisSpec() : BasisSpec(monomials({0})) {}

    /// rho^k for each exponent k; {0, 2, 4} gives 1, rho^2, rho^4.
    static BasisSpec monomials(std::vector<int> exponents);
    static BasisSpec constant() { return monomials({0}); }
    static BasisSpec custom(std::vector<Fn> f, std::vector<Fn> df, std::vector<std::string> names);

    std::size_t size() const noexcept { return f_.size(); }
    double value(std::size_t i, double rho) const { return f_[i](rho); }
    double derivative(std::size_t i, double rho) const { return df_[i](rho); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    /// Empty for custom bases.
    const std::vector<int>& exponents() const noexcept { return exponents_; }

    /// Weighted sums sum_i f_i(rho) M_i and sum_i f_i'(rho) rate M_i.
    MatrixXd combine(const std::vector<MatrixXd>& coeffs, double rho) const;
    MatrixXd combine_rate(const std::vector<MatrixXd>& coeffs, double rho, double rate) const;

private:
    struct Empty {};
    explicit BasisSpec(Empty) {}

    std::vector<Fn> f_, df_;
    std::vector<std::string> names_;
    std::vector<int> exponents_;
};

enum class BrlMode { Minimize, Feasibility };

struct BrlOptions {
    BasisSpec basis;
    /// Negative means: use the rate bound of the system's parameter domain.
    double rate = -1.0;
    BrlMode mode = BrlMode::Minimize;
    /// Gamma tested in Feasibility mode.
    double gamma = 0.0;
    double storage_margin = 1e-8;
    double lmi_margin = 1e-8;
    /// Optional storage coefficients (one n x n matrix per basis function) in
    /// the coordinates of the analysed system. The LMIs are then solved in
    /// coordinates where its grid mean is the identity, and the guess itself
    /// is checked as a certificate; the smaller certified gamma is returned.
    std::vector<MatrixXd> storage_guess;
};

/// Result of a gridded bounded-real-lemma analysis. Storage coefficients are
/// expressed in the coordinates of the analysed system.
struct GainCertificate {
    double gamma = INFINITY;
    std::vector<MatrixXd> storage;
    SdpStatus status = SdpStatus::NumericalFailure;
    double residual = INFINITY;
    int iterations = 0;
    std::string message;

    bool certified() const noexcept { return status == SdpStatus::Optimal; }
};

/// Upper bound on the induced L2 gain of a gridded LPV system via the
/// rate-dependent bounded real lemma, enforced at every grid point and rate vertex.
GainCertificate brl_bound(const GriddedSystem& sys, const BrlOptions& options = {});

/// Largest eigenvalue of the (non-Schur) bounded-real-lemma matrix over all
/// grid points and rate vertices for the given storage, normalized by the
/// size of the storage terms. Values <= 0 certify the bound.
double brl_residual(const GriddedSystem& sys, const BasisSpec& basis, const std::vector<MatrixXd>& storage,
                    double gamma, double rate);

/// H-infinity norm of a stable LTI system by bisection on the Hamiltonian
/// imaginary-axis eigenvalue test. Throws ValidationError for non-Hurwitz A.
double hinf_norm_bisect(const StateSpace& sys, double rel_tol = 1e-4);

/// Largest singular value of G(i omega).
double gain_at(const StateSpace& sys, double omega);

}  // namespace lpvctl
