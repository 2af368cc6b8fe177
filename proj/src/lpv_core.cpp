#include "lpvctl/lpv_core.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

namespace lpvctl {

namespace {

constexpr double kWellPosedTol = 1e-9;

// Both gridded operands must share a grid unless one of them is LTI.
ParameterDomain common_domain(const GriddedSystem& a, const GriddedSystem& b, const char* op) {
    if (a.domain().is_lti()) return b.domain();
    if (b.domain().is_lti()) return a.domain();
    if (a.domain().grid() != b.domain().grid())
        throw ValidationError(op, "operands are sampled on different grids");
    return ParameterDomain(a.domain().grid(), std::max(a.domain().rate_bound(), b.domain().rate_bound()));
}

template <typename Fn>
GriddedSystem pointwise(const GriddedSystem& a, const GriddedSystem& b, const char* op, Fn&& fn) {
    ParameterDomain dom = common_domain(a, b, op);
    std::vector<StateSpace> out;
    out.reserve(dom.size());
    for (std::size_t k = 0; k < dom.size(); ++k) {
        const StateSpace& sa = a.size() == 1 ? a.at(0) : a.at(k);
        const StateSpace& sb = b.size() == 1 ? b.at(0) : b.at(k);
        out.push_back(fn(sa, sb));
    }
    return GriddedSystem(std::move(dom), std::move(out));
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterDomain

ParameterDomain::ParameterDomain(std::vector<double> grid, double rate_bound)
    : grid_(std::move(grid)), rate_bound_(rate_bound) {
    if (grid_.empty()) throw ValidationError("domain.grid", "at least one grid point required");
    for (double g : grid_)
        if (!std::isfinite(g)) throw ValidationError("domain.grid", "non-finite grid point");
    for (std::size_t k = 1; k < grid_.size(); ++k)
        if (!(grid_[k] > grid_[k - 1])) throw ValidationError("domain.grid", "grid must be strictly increasing");
    if (!(rate_bound_ >= 0.0) || !std::isfinite(rate_bound_))
        throw ValidationError("domain.rate_bound", "must be finite and >= 0");
}

ParameterDomain ParameterDomain::uniform(double rho_min, double rho_max, int points, double rate_bound) {
    if (points < 1) throw ValidationError("domain.grid_points", "must be >= 1");
    if (points == 1) return ParameterDomain({rho_min}, rate_bound);
    if (!(rho_min < rho_max)) throw ValidationError("domain.rho_min", "rho_min must be < rho_max");
    std::vector<double> g(static_cast<std::size_t>(points));
    for (int k = 0; k < points; ++k) g[k] = rho_min + (rho_max - rho_min) * k / (points - 1);
    g.back() = rho_max;
    return ParameterDomain(std::move(g), rate_bound);
}

std::vector<double> ParameterDomain::rate_vertices() const {
    if (rate_bound_ == 0.0 || is_lti()) return {0.0};
    return {-rate_bound_, rate_bound_};
}

double ParameterDomain::clamp(double rho) const { return std::clamp(rho, rho_min(), rho_max()); }

// ---------------------------------------------------------------------------
// StateSpace

StateSpace::StateSpace(MatrixXd a, MatrixXd b, MatrixXd c, MatrixXd d)
    : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
    validate();
}

StateSpace StateSpace::gain(const MatrixXd& d) {
    return StateSpace(MatrixXd::Zero(0, 0), MatrixXd::Zero(0, d.cols()), MatrixXd::Zero(d.rows(), 0), d);
}

void StateSpace::validate() const {
    if (A.rows() != A.cols()) throw ValidationError("A", "must be square");
    if (B.rows() != A.rows()) throw ValidationError("B", "row count must equal state dimension");
    if (C.cols() != A.rows()) throw ValidationError("C", "column count must equal state dimension");
    if (D.rows() != C.rows() || D.cols() != B.cols()) throw ValidationError("D", "must be outputs x inputs");
}

StateSpace StateSpace::subsystem(Eigen::Index out_begin, Eigen::Index out_count, Eigen::Index in_begin,
                                 Eigen::Index in_count) const {
    return StateSpace(A, B.middleCols(in_begin, in_count), C.middleRows(out_begin, out_count),
                      D.block(out_begin, in_begin, out_count, in_count));
}

bool StateSpace::is_hurwitz(double margin) const {
    if (states() == 0) return true;
    Eigen::EigenSolver<MatrixXd> es(A, false);
    return (es.eigenvalues().real().array() < -margin).all();
}

// ---------------------------------------------------------------------------
// GriddedSystem

GriddedSystem::GriddedSystem(ParameterDomain domain, std::vector<StateSpace> data, IoLabels labels)
    : domain_(std::move(domain)), data_(std::move(data)), labels_(std::move(labels)) {
    if (data_.size() != domain_.size())
        throw ValidationError("GriddedSystem.data", "one realization per grid point required");
    for (const auto& s : data_) {
        s.validate();
        if (s.states() != data_.front().states() || s.inputs() != data_.front().inputs() ||
            s.outputs() != data_.front().outputs())
            throw ValidationError("GriddedSystem.data", "grid points must share dimensions");
    }
}

double GriddedSystem::max_adjacent_jump() const {
    auto pack = [](const StateSpace& s) {
        MatrixXd m(s.states() + s.outputs(), s.states() + s.inputs());
        m << s.A, s.B, s.C, s.D;
        return m;
    };
    double scale = 0.0;
    for (const auto& s : data_) scale = std::max(scale, pack(s).cwiseAbs().maxCoeff());
    if (scale == 0.0 || data_.size() < 2) return 0.0;
    double jump = 0.0;
    for (std::size_t k = 1; k < data_.size(); ++k)
        jump = std::max(jump, (pack(data_[k]) - pack(data_[k - 1])).cwiseAbs().maxCoeff());
    return jump / scale;
}

StateSpace eval_at(const GriddedSystem& sys, double rho) {
    const auto& grid = sys.domain().grid();
    if (grid.size() == 1) return sys.at(0);
    const double r = sys.domain().clamp(rho);
    auto hi = std::upper_bound(grid.begin(), grid.end(), r);
    if (hi == grid.end()) return sys.data().back();
    const auto k1 = static_cast<std::size_t>(hi - grid.begin());
    const std::size_t k0 = k1 - 1;
    if (r == grid[k0]) return sys.at(k0);
    const double t = (r - grid[k0]) / (grid[k1] - grid[k0]);
    const StateSpace& a = sys.at(k0);
    const StateSpace& b = sys.at(k1);
    return StateSpace((1 - t) * a.A + t * b.A, (1 - t) * a.B + t * b.B, (1 - t) * a.C + t * b.C,
                      (1 - t) * a.D + t * b.D);
}

// ---------------------------------------------------------------------------
// Interconnections

StateSpace series(const StateSpace& s1, const StateSpace& s2) {
    if (s1.outputs() != s2.inputs()) throw ValidationError("series", "sys1 outputs must match sys2 inputs");
    const Eigen::Index n1 = s1.states(), n2 = s2.states();
    MatrixXd A = MatrixXd::Zero(n1 + n2, n1 + n2);
    A.topLeftCorner(n1, n1) = s1.A;
    A.bottomLeftCorner(n2, n1) = s2.B * s1.C;
    A.bottomRightCorner(n2, n2) = s2.A;
    MatrixXd B(n1 + n2, s1.inputs());
    B << s1.B, s2.B * s1.D;
    MatrixXd C(s2.outputs(), n1 + n2);
    C << s2.D * s1.C, s2.C;
    return StateSpace(A, B, C, s2.D * s1.D);
}

GriddedSystem series(const GriddedSystem& sys1, const GriddedSystem& sys2) {
    return pointwise(sys1, sys2, "series", [](const StateSpace& a, const StateSpace& b) { return series(a, b); });
}

StateSpace lft_lower(const StateSpace& g, const StateSpace& k) {
    const Eigen::Index nu = k.outputs(), ny = k.inputs();
    const Eigen::Index nw = g.inputs() - nu, nz = g.outputs() - ny;
    if (nw < 0 || nz < 0) throw ValidationError("lft_lower", "controller has more channels than the plant");
    const Eigen::Index n = g.states(), nk = k.states();

    const MatrixXd B1 = g.B.leftCols(nw), B2 = g.B.rightCols(nu);
    const MatrixXd C1 = g.C.topRows(nz), C2 = g.C.bottomRows(ny);
    const MatrixXd D11 = g.D.topLeftCorner(nz, nw), D12 = g.D.topRightCorner(nz, nu);
    const MatrixXd D21 = g.D.bottomLeftCorner(ny, nw), D22 = g.D.bottomRightCorner(ny, nu);

    const MatrixXd loop = MatrixXd::Identity(nu, nu) - k.D * D22;
    if (nu > 0) {
        Eigen::JacobiSVD<MatrixXd> svd(loop);
        if (svd.singularValues().minCoeff() < kWellPosedTol)
            throw ValidationError("lft_lower", "ill-posed interconnection (I - Dk*D22 singular)");
    }
    const MatrixXd Q = nu > 0 ? MatrixXd(loop.inverse()) : MatrixXd::Zero(0, 0);
    const MatrixXd Ux = Q * k.D * C2, Uk = Q * k.C, Uw = Q * k.D * D21;
    const MatrixXd Yx = C2 + D22 * Ux, Yk = D22 * Uk, Yw = D21 + D22 * Uw;

    MatrixXd A(n + nk, n + nk);
    A << g.A + B2 * Ux, B2 * Uk, k.B * Yx, k.A + k.B * Yk;
    MatrixXd B(n + nk, nw);
    B << B1 + B2 * Uw, k.B * Yw;
    MatrixXd C(nz, n + nk);
    C << C1 + D12 * Ux, D12 * Uk;
    return StateSpace(A, B, C, D11 + D12 * Uw);
}

GriddedSystem lft_lower(const GriddedSystem& gen_plant, const GriddedSystem& ctrl) {
    return pointwise(gen_plant, ctrl, "lft_lower",
                     [](const StateSpace& a, const StateSpace& b) { return lft_lower(a, b); });
}

StateSpace feedback(const StateSpace& p, const StateSpace& k, int sign) {
    if (k.inputs() != p.outputs() || k.outputs() != p.inputs())
        throw ValidationError("feedback", "controller must map plant outputs to plant inputs");
    // Inputs [r; v], outputs [y; y], u = r + sign * v.
    const Eigen::Index nu = p.inputs(), ny = p.outputs();
    const double s = sign >= 0 ? 1.0 : -1.0;
    MatrixXd B(p.states(), 2 * nu);
    B << p.B, s * p.B;
    MatrixXd C(2 * ny, p.states());
    C << p.C, p.C;
    MatrixXd D(2 * ny, 2 * nu);
    D << p.D, s * p.D, p.D, s * p.D;
    return lft_lower(StateSpace(p.A, B, C, D), k);
}

GriddedSystem feedback(const GriddedSystem& plant, const GriddedSystem& ctrl, int sign) {
    return pointwise(plant, ctrl, "feedback",
                     [sign](const StateSpace& a, const StateSpace& b) { return feedback(a, b, sign); });
}

StateSpace parallel_sum(const StateSpace& s1, const StateSpace& s2) {
    if (s1.inputs() != s2.inputs() || s1.outputs() != s2.outputs())
        throw ValidationError("parallel_sum", "dimension mismatch");
    const Eigen::Index n1 = s1.states(), n2 = s2.states();
    MatrixXd A = MatrixXd::Zero(n1 + n2, n1 + n2);
    A.topLeftCorner(n1, n1) = s1.A;
    A.bottomRightCorner(n2, n2) = s2.A;
    MatrixXd B(n1 + n2, s1.inputs());
    B << s1.B, s2.B;
    MatrixXd C(s1.outputs(), n1 + n2);
    C << s1.C, s2.C;
    return StateSpace(A, B, C, s1.D + s2.D);
}

StateSpace append(const StateSpace& s1, const StateSpace& s2) {
    const Eigen::Index n1 = s1.states(), n2 = s2.states();
    MatrixXd A = MatrixXd::Zero(n1 + n2, n1 + n2);
    A.topLeftCorner(n1, n1) = s1.A;
    A.bottomRightCorner(n2, n2) = s2.A;
    MatrixXd B = MatrixXd::Zero(n1 + n2, s1.inputs() + s2.inputs());
    B.topLeftCorner(n1, s1.inputs()) = s1.B;
    B.bottomRightCorner(n2, s2.inputs()) = s2.B;
    MatrixXd C = MatrixXd::Zero(s1.outputs() + s2.outputs(), n1 + n2);
    C.topLeftCorner(s1.outputs(), n1) = s1.C;
    C.bottomRightCorner(s2.outputs(), n2) = s2.C;
    MatrixXd D = MatrixXd::Zero(s1.outputs() + s2.outputs(), s1.inputs() + s2.inputs());
    D.topLeftCorner(s1.outputs(), s1.inputs()) = s1.D;
    D.bottomRightCorner(s2.outputs(), s2.inputs()) = s2.D;
    return StateSpace(A, B, C, D);
}

// ---------------------------------------------------------------------------
// Frequency response

MatrixXc eval_tf(const StateSpace& sys, std::complex<double> s) {
    const Eigen::Index n = sys.states();
    MatrixXc out = sys.D.cast<std::complex<double>>();
    if (n == 0) return out;
    MatrixXc resolvent = s * MatrixXc::Identity(n, n) - sys.A.cast<std::complex<double>>();
    Eigen::PartialPivLU<MatrixXc> lu(resolvent);
    out += sys.C.cast<std::complex<double>>() * lu.solve(sys.B.cast<std::complex<double>>());
    return out;
}

std::vector<FrequencySample> freq_response(const StateSpace& sys, const std::vector<double>& omegas) {
    std::vector<FrequencySample> out;
    out.reserve(omegas.size());
    const Eigen::Index n = sys.states();
    for (double w : omegas) {
        FrequencySample fs;
        fs.omega = w;
        if (n > 0) {
            MatrixXc resolvent = std::complex<double>(0.0, w) * MatrixXc::Identity(n, n) -
                                 sys.A.cast<std::complex<double>>();
            Eigen::PartialPivLU<MatrixXc> lu(resolvent);
            if (!(lu.rcond() > 1e-14)) {
                fs.finite = false;
                fs.value = MatrixXc::Constant(sys.outputs(), sys.inputs(),
                                              std::complex<double>(INFINITY, 0.0));
                out.push_back(std::move(fs));
                continue;
            }
            fs.value = sys.D.cast<std::complex<double>>() +
                       sys.C.cast<std::complex<double>>() * lu.solve(sys.B.cast<std::complex<double>>());
        } else {
            fs.value = sys.D.cast<std::complex<double>>();
        }
        out.push_back(std::move(fs));
    }
    return out;
}

std::vector<double> logspace(double lo_exp, double hi_exp, int count) {
    std::vector<double> out(static_cast<std::size_t>(std::max(count, 1)));
    if (count == 1) {
        out[0] = std::pow(10.0, lo_exp);
        return out;
    }
    for (int k = 0; k < count; ++k) out[k] = std::pow(10.0, lo_exp + (hi_exp - lo_exp) * k / (count - 1));
    return out;
}

// ---------------------------------------------------------------------------
// Balancing

VectorXd balancing_scale(const std::vector<const StateSpace*>& systems) {
    if (systems.empty()) return VectorXd();
    const Eigen::Index n = systems.front()->states();
    MatrixXd absA = MatrixXd::Zero(n, n);
    MatrixXd absB = MatrixXd::Zero(n, systems.front()->inputs());
    MatrixXd absC = MatrixXd::Zero(systems.front()->outputs(), n);
    for (const StateSpace* s : systems) {
        absA = absA.cwiseMax(s->A.cwiseAbs());
        absB = absB.cwiseMax(s->B.cwiseAbs());
        absC = absC.cwiseMax(s->C.cwiseAbs());
    }
    VectorXd t = VectorXd::Ones(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            // Norms of column/row i of the currently scaled [A B; C 0], diagonal excluded.
            double col = absC.col(i).sum() * t(i), row = absB.row(i).sum() / t(i);
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                col += absA(j, i) * t(i) / t(j);
                row += absA(i, j) * t(j) / t(i);
            }
            if (col == 0.0 || row == 0.0) continue;
            const double f = std::sqrt(row / col);
            const double f2 = std::exp2(std::round(std::log2(f)));
            if (f2 != 1.0 && (std::abs(std::log2(f)) > 0.5)) {
                t(i) *= f2;
                changed = true;
            }
        }
        if (!changed) break;
    }
    return t;
}

StateSpace apply_state_scale(const StateSpace& sys, const VectorXd& t) {
    const VectorXd inv = t.cwiseInverse();
    return StateSpace(inv.asDiagonal() * sys.A * t.asDiagonal(), inv.asDiagonal() * sys.B,
                      sys.C * t.asDiagonal(), sys.D);
}

}  // namespace lpvctl
