#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lpvctl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Matrix-valued affine function of scalar decision variables,
///   M(x) = constant + sum_i x_i * coeff_i.
/// Terms are kept sorted by variable index with one entry per variable.
class AffineMatrix {
public:
    using Term = std::pair<int, MatrixXd>;

    AffineMatrix() = default;
    explicit AffineMatrix(MatrixXd constant) : constant_(std::move(constant)) {}

    static AffineMatrix zero(Eigen::Index rows, Eigen::Index cols) { return AffineMatrix(MatrixXd::Zero(rows, cols)); }
    static AffineMatrix identity(Eigen::Index n) { return AffineMatrix(MatrixXd::Identity(n, n)); }
    static AffineMatrix variable(int index, MatrixXd coeff);

    /// Dense block assembly; every row of blocks must have consistent heights.
    static AffineMatrix blocks(const std::vector<std::vector<AffineMatrix>>& grid);

    Eigen::Index rows() const noexcept { return constant_.rows(); }
    Eigen::Index cols() const noexcept { return constant_.cols(); }
    const MatrixXd& constant() const noexcept { return constant_; }
    const std::vector<Term>& terms() const noexcept { return terms_; }

    AffineMatrix transpose() const;
    /// (M + M^T)
    AffineMatrix sym2() const { return *this + transpose(); }

    MatrixXd evaluate(const VectorXd& x) const;

    AffineMatrix& operator+=(const AffineMatrix& other);
    AffineMatrix& operator-=(const AffineMatrix& other);
    AffineMatrix& operator*=(double s);

    friend AffineMatrix operator+(AffineMatrix a, const AffineMatrix& b) { return a += b; }
    friend AffineMatrix operator-(AffineMatrix a, const AffineMatrix& b) { return a -= b; }
    friend AffineMatrix operator-(AffineMatrix a) { return a *= -1.0; }
    friend AffineMatrix operator*(double s, AffineMatrix a) { return a *= s; }
    friend AffineMatrix operator*(const MatrixXd& left, const AffineMatrix& a);
    friend AffineMatrix operator*(const AffineMatrix& a, const MatrixXd& right);
    friend AffineMatrix operator+(AffineMatrix a, const MatrixXd& b) { return a += AffineMatrix(b); }
    friend AffineMatrix operator-(AffineMatrix a, const MatrixXd& b) { return a -= AffineMatrix(b); }

private:
    MatrixXd constant_;
    std::vector<Term> terms_;
};

/// Handle to a symmetric matrix decision variable (n(n+1)/2 scalars).
struct SymmetricVar {
    int first = 0;
    Eigen::Index dim = 0;

    AffineMatrix expr() const;
    MatrixXd value(const VectorXd& x) const;
    int count() const noexcept { return static_cast<int>(dim * (dim + 1) / 2); }
};

/// Handle to a dense rows x cols decision variable.
struct DenseVar {
    int first = 0;
    Eigen::Index rows = 0, cols = 0;

    AffineMatrix expr() const;
    MatrixXd value(const VectorXd& x) const;
};

/// One linear matrix inequality in the normalized form F(x) >= 0.
struct LmiBlock {
    std::string label;
    AffineMatrix F;
};

/// Affine LMI problem: minimize c'x subject to F_j(x) >= 0 for all blocks.
class LmiProblem {
public:
    int add_scalar();
    SymmetricVar add_symmetric(Eigen::Index n);
    DenseVar add_dense(Eigen::Index rows, Eigen::Index cols);

    /// expr >= margin * I
    void require_psd(const AffineMatrix& expr, std::string label = {}, double margin = 0.0);
    /// expr <= -margin * I
    void require_nsd(const AffineMatrix& expr, std::string label = {}, double margin = 0.0);

    /// Objective is the (0,0) entry of a 1x1 affine expression; its constant is ignored.
    void minimize(const AffineMatrix& objective);

    int num_vars() const noexcept { return num_vars_; }
    const std::vector<LmiBlock>& blocks() const noexcept { return blocks_; }
    const VectorXd& objective() const noexcept { return objective_; }
    VectorXd objective_padded() const;

private:
    int num_vars_ = 0;
    std::vector<LmiBlock> blocks_;
    VectorXd objective_;
};

enum class SdpStatus { Optimal, Infeasible, Unbounded, MaxIterations, NumericalFailure };

const char* to_string(SdpStatus status);

struct SdpSettings {
    int max_iterations = 150;
    double gap_tol = 1e-9;
    double feas_tol = 1e-9;
    double infeas_tol = 1e-8;
    double step_fraction = 0.97;
    /// Defaults to the LPVCTL_SDP_VERBOSE environment variable.
    bool verbose = default_verbose();

    static bool default_verbose();
};

struct SdpResult {
    SdpStatus status = SdpStatus::NumericalFailure;
    VectorXd x;
    double objective = 0.0;
    int iterations = 0;
    /// Largest violation max(0, -lambda_min(F_j(x))) over all blocks.
    double max_violation = 0.0;
    /// Smallest eigenvalue over all blocks, relative to the block's scale.
    double min_slack = 0.0;
    std::string message;

    bool ok() const noexcept { return status == SdpStatus::Optimal; }
};

/// Primal-dual interior-point solve (HKM direction, Mehrotra predictor-corrector,
/// infeasible start with Farkas-certificate infeasibility detection).
SdpResult solve_sdp(const LmiProblem& problem, const SdpSettings& settings = {});

/// SDPA sparse format (min c'x s.t. sum x_i F_i - F_0 >= 0) for external solvers.
/// solve_sdp also writes every problem it receives to $LPVCTL_SDP_DUMP/sdp_<k>.dat-s
/// when that variable is set.
void write_sdpa(const LmiProblem& problem, std::ostream& os);

/// Smallest eigenvalue of a symmetric matrix (symmetrized first).
double min_eigenvalue(const MatrixXd& m);
double max_eigenvalue(const MatrixXd& m);

}  // namespace lpvctl
