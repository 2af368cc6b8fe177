#include "lpvctl/lmi.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace lpvctl {

namespace {

void check_same_shape(const AffineMatrix& a, const AffineMatrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("AffineMatrix: shape mismatch");
}

}  // namespace

AffineMatrix AffineMatrix::variable(int index, MatrixXd coeff) {
    AffineMatrix m(MatrixXd::Zero(coeff.rows(), coeff.cols()));
    m.terms_.emplace_back(index, std::move(coeff));
    return m;
}

AffineMatrix AffineMatrix::blocks(const std::vector<std::vector<AffineMatrix>>& grid) {
    if (grid.empty()) return AffineMatrix();
    std::vector<Eigen::Index> heights, widths;
    for (const auto& row : grid) {
        if (row.size() != grid.front().size()) throw std::invalid_argument("AffineMatrix::blocks: ragged grid");
        heights.push_back(row.front().rows());
    }
    for (const auto& cell : grid.front()) widths.push_back(cell.cols());
    Eigen::Index total_r = 0, total_c = 0;
    for (auto h : heights) total_r += h;
    for (auto w : widths) total_c += w;

    AffineMatrix out = zero(total_r, total_c);
    // Collect every variable that appears anywhere first.
    std::vector<int> vars;
    for (const auto& row : grid)
        for (const auto& cell : row)
            for (const auto& [v, _] : cell.terms_) vars.push_back(v);
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
    out.terms_.reserve(vars.size());
    for (int v : vars) out.terms_.emplace_back(v, MatrixXd::Zero(total_r, total_c));

    Eigen::Index r0 = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        Eigen::Index c0 = 0;
        for (std::size_t j = 0; j < grid[i].size(); ++j) {
            const AffineMatrix& cell = grid[i][j];
            if (cell.rows() != heights[i] || cell.cols() != widths[j])
                throw std::invalid_argument("AffineMatrix::blocks: inconsistent block sizes");
            out.constant_.block(r0, c0, heights[i], widths[j]) = cell.constant_;
            for (const auto& [v, coeff] : cell.terms_) {
                auto it = std::lower_bound(vars.begin(), vars.end(), v);
                out.terms_[static_cast<std::size_t>(it - vars.begin())].second.block(r0, c0, heights[i], widths[j]) =
                    coeff;
            }
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    return out;
}

AffineMatrix AffineMatrix::transpose() const {
    AffineMatrix out(constant_.transpose());
    out.terms_.reserve(terms_.size());
    for (const auto& [v, coeff] : terms_) out.terms_.emplace_back(v, coeff.transpose());
    return out;
}

MatrixXd AffineMatrix::evaluate(const VectorXd& x) const {
    MatrixXd out = constant_;
    for (const auto& [v, coeff] : terms_) out += x(v) * coeff;
    return out;
}

AffineMatrix& AffineMatrix::operator+=(const AffineMatrix& other) {
    check_same_shape(*this, other);
    constant_ += other.constant_;
    std::vector<Term> merged;
    merged.reserve(terms_.size() + other.terms_.size());
    auto a = terms_.begin();
    auto b = other.terms_.begin();
    while (a != terms_.end() || b != other.terms_.end()) {
        if (b == other.terms_.end() || (a != terms_.end() && a->first < b->first)) {
            merged.push_back(std::move(*a++));
        } else if (a == terms_.end() || b->first < a->first) {
            merged.push_back(*b++);
        } else {
            merged.emplace_back(a->first, a->second + b->second);
            ++a;
            ++b;
        }
    }
    terms_ = std::move(merged);
    return *this;
}

AffineMatrix& AffineMatrix::operator-=(const AffineMatrix& other) {
    AffineMatrix neg = other;
    neg *= -1.0;
    return *this += neg;
}

AffineMatrix& AffineMatrix::operator*=(double s) {
    constant_ *= s;
    for (auto& [_, coeff] : terms_) coeff *= s;
    return *this;
}

AffineMatrix operator*(const MatrixXd& left, const AffineMatrix& a) {
    if (left.cols() != a.rows()) throw std::invalid_argument("AffineMatrix: left product shape mismatch");
    AffineMatrix out(left * a.constant_);
    out.terms_.reserve(a.terms_.size());
    for (const auto& [v, coeff] : a.terms_) out.terms_.emplace_back(v, left * coeff);
    return out;
}

AffineMatrix operator*(const AffineMatrix& a, const MatrixXd& right) {
    if (a.cols() != right.rows()) throw std::invalid_argument("AffineMatrix: right product shape mismatch");
    AffineMatrix out(a.constant_ * right);
    out.terms_.reserve(a.terms_.size());
    for (const auto& [v, coeff] : a.terms_) out.terms_.emplace_back(v, coeff * right);
    return out;
}

// ---------------------------------------------------------------------------

AffineMatrix SymmetricVar::expr() const {
    AffineMatrix out = AffineMatrix::zero(dim, dim);
    int idx = first;
    for (Eigen::Index c = 0; c < dim; ++c) {
        for (Eigen::Index r = 0; r <= c; ++r) {
            MatrixXd e = MatrixXd::Zero(dim, dim);
            e(r, c) = 1.0;
            e(c, r) = 1.0;
            out += AffineMatrix::variable(idx++, std::move(e));
        }
    }
    return out;
}

MatrixXd SymmetricVar::value(const VectorXd& x) const {
    MatrixXd out(dim, dim);
    int idx = first;
    for (Eigen::Index c = 0; c < dim; ++c)
        for (Eigen::Index r = 0; r <= c; ++r) {
            out(r, c) = x(idx);
            out(c, r) = x(idx);
            ++idx;
        }
    return out;
}

AffineMatrix DenseVar::expr() const {
    AffineMatrix out = AffineMatrix::zero(rows, cols);
    int idx = first;
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) {
            MatrixXd e = MatrixXd::Zero(rows, cols);
            e(r, c) = 1.0;
            out += AffineMatrix::variable(idx++, std::move(e));
        }
    return out;
}

MatrixXd DenseVar::value(const VectorXd& x) const {
    MatrixXd out(rows, cols);
    int idx = first;
    for (Eigen::Index c = 0; c < cols; ++c)
        for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = x(idx++);
    return out;
}

// ---------------------------------------------------------------------------

int LmiProblem::add_scalar() { return num_vars_++; }

SymmetricVar LmiProblem::add_symmetric(Eigen::Index n) {
    SymmetricVar v{num_vars_, n};
    num_vars_ += v.count();
    return v;
}

DenseVar LmiProblem::add_dense(Eigen::Index rows, Eigen::Index cols) {
    DenseVar v{num_vars_, rows, cols};
    num_vars_ += static_cast<int>(rows * cols);
    return v;
}

void LmiProblem::require_psd(const AffineMatrix& expr, std::string label, double margin) {
    if (expr.rows() != expr.cols()) throw std::invalid_argument("LMI must be square: " + label);
    AffineMatrix f = expr;
    if (margin != 0.0) f -= AffineMatrix(margin * MatrixXd::Identity(expr.rows(), expr.rows()));
    blocks_.push_back({std::move(label), std::move(f)});
}

void LmiProblem::require_nsd(const AffineMatrix& expr, std::string label, double margin) {
    require_psd(-expr, std::move(label), margin);
}

void LmiProblem::minimize(const AffineMatrix& objective) {
    if (objective.rows() != 1 || objective.cols() != 1) throw std::invalid_argument("objective must be 1x1");
    objective_ = VectorXd::Zero(num_vars_);
    for (const auto& [v, coeff] : objective.terms()) objective_(v) += coeff(0, 0);
}

VectorXd LmiProblem::objective_padded() const {
    VectorXd c = VectorXd::Zero(num_vars_);
    c.head(std::min<Eigen::Index>(objective_.size(), num_vars_)) = objective_.head(std::min<Eigen::Index>(objective_.size(), num_vars_));
    return c;
}

bool SdpSettings::default_verbose() { return std::getenv("LPVCTL_SDP_VERBOSE") != nullptr; }

const char* to_string(SdpStatus status) {
    switch (status) {
        case SdpStatus::Optimal: return "optimal";
        case SdpStatus::Infeasible: return "infeasible";
        case SdpStatus::Unbounded: return "unbounded";
        case SdpStatus::MaxIterations: return "max-iterations";
        case SdpStatus::NumericalFailure: return "numerical-failure";
    }
    return "unknown";
}

void write_sdpa(const LmiProblem& problem, std::ostream& os) {
    std::vector<const LmiBlock*> blocks;
    for (const auto& b : problem.blocks())
        if (b.F.rows() > 0) blocks.push_back(&b);
    const VectorXd c = problem.objective_padded();
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    os << problem.num_vars() << "\n" << blocks.size() << "\n";
    for (const auto* b : blocks) os << b->F.rows() << " ";
    os << "\n";
    for (Eigen::Index i = 0; i < c.size(); ++i) os << num(c(i)) << (i + 1 < c.size() ? " " : "\n");
    for (std::size_t j = 0; j < blocks.size(); ++j) {
        const AffineMatrix& F = blocks[j]->F;
        auto emit = [&](int mat, const MatrixXd& m, double sign) {
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index col = r; col < m.cols(); ++col) {
                    const double v = 0.5 * (m(r, col) + m(col, r));
                    if (v != 0.0)
                        os << mat << " " << j + 1 << " " << r + 1 << " " << col + 1 << " " << num(sign * v) << "\n";
                }
        };
        emit(0, F.constant(), -1.0);
        for (const auto& [v, coeff] : F.terms()) emit(v + 1, coeff, 1.0);
    }
}

double min_eigenvalue(const MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

double max_eigenvalue(const MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues()(es.eigenvalues().size() - 1);
}

}  // namespace lpvctl
