#include "lpvctl/synthesis.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace lpvctl {

namespace {

using Index = Eigen::Index;

/// Orthonormal basis of the right null space of m.
MatrixXd null_space(const MatrixXd& m) {
    if (m.rows() == 0) return MatrixXd::Identity(m.cols(), m.cols());
    Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullV);
    const VectorXd& sv = svd.singularValues();
    const double tol = 1e-12 * std::max(1.0, sv.size() ? sv(0) : 0.0);
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
        if (sv(i) > tol) ++rank;
    return svd.matrixV().rightCols(m.cols() - rank);
}

MatrixXd blkdiag(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd out = MatrixXd::Zero(a.rows() + b.rows(), a.cols() + b.cols());
    out.topLeftCorner(a.rows(), a.cols()) = a;
    out.bottomRightCorner(b.rows(), b.cols()) = b;
    return out;
}

/// Generalized plant split into the usual nine blocks.
struct Parts {
    MatrixXd A, B1, B2, C1, C2, D11, D12, D21;
};

Parts split(const StateSpace& s, Index nw, Index nu, Index nz, Index ny) {
    Parts p;
    p.A = s.A;
    p.B1 = s.B.leftCols(nw);
    p.B2 = s.B.rightCols(nu);
    p.C1 = s.C.topRows(nz);
    p.C2 = s.C.bottomRows(ny);
    p.D11 = s.D.topLeftCorner(nz, nw);
    p.D12 = s.D.topRightCorner(nz, nu);
    p.D21 = s.D.bottomLeftCorner(ny, nw);
    return p;
}

AffineMatrix combine(const BasisSpec& basis, const std::vector<SymmetricVar>& vars, double rho, Index n) {
    AffineMatrix out = AffineMatrix::zero(n, n);
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const double f = basis.value(i, rho);
        if (f != 0.0) out += f * vars[i].expr();
    }
    return out;
}

AffineMatrix combine_rate(const BasisSpec& basis, const std::vector<SymmetricVar>& vars, double rho, double q,
                          Index n) {
    AffineMatrix out = AffineMatrix::zero(n, n);
    if (q == 0.0) return out;
    for (std::size_t i = 0; i < basis.size(); ++i) {
        const double df = basis.derivative(i, rho);
        if (df != 0.0) out += (df * q) * vars[i].expr();
    }
    return out;
}

AffineMatrix C(const MatrixXd& m) { return AffineMatrix(m); }

/// Scaled synthesis data shared by all stages.
struct Problem {
    std::vector<Parts> parts;
    ParameterDomain dom;
    // S ~ X uses `basis`. R ~ Y is held constant: the closed-loop storage is
    // then affine in X and exactly re-certifiable in the same basis.
    BasisSpec basis, basis_R;
    Index n = 0, nw = 0, nu = 0, nz = 0, ny = 0;
    double margin = 1e-8;
    double radius = 1e4;
};

void transform(Parts& p, const MatrixXd& T, const MatrixXd& Tinv) {
    p.A = Tinv * p.A * T;
    p.B1 = Tinv * p.B1;
    p.B2 = Tinv * p.B2;
    p.C1 = p.C1 * T;
    p.C2 = p.C2 * T;
}

/// T with T' S T = T^-1 R T^-T diagonal, for R, S > 0.
MatrixXd balancing_transform(const MatrixXd& R, const MatrixXd& S) {
    const Eigen::LLT<MatrixXd> llt(R);
    if (llt.info() != Eigen::Success) return MatrixXd::Identity(R.rows(), R.cols());
    const MatrixXd L = llt.matrixL();
    const Eigen::SelfAdjointEigenSolver<MatrixXd> es(L.transpose() * S * L);
    if (es.eigenvalues().minCoeff() <= 0.0) return MatrixXd::Identity(R.rows(), R.cols());
    return L * es.eigenvectors() * es.eigenvalues().array().pow(-0.25).matrix().asDiagonal();
}

struct StorageVars {
    std::vector<SymmetricVar> R, S;
};

/// Projected conditions at every grid point and rate vertex at a fixed gamma,
/// each required to be <= -t I.
/// t < 0: plain strict feasibility without a margin variable.
StorageVars add_projected(LmiProblem& prob, const Problem& P, double gamma, int t) {
    StorageVars v;
    for (std::size_t i = 0; i < P.basis_R.size(); ++i) v.R.push_back(prob.add_symmetric(P.n));
    for (std::size_t i = 0; i < P.basis.size(); ++i) v.S.push_back(prob.add_symmetric(P.n));
    const Index n = P.n, nw = P.nw, nz = P.nz;
    const MatrixXd Gw = -gamma * MatrixXd::Identity(nw, nw);
    const MatrixXd Gz = -gamma * MatrixXd::Identity(nz, nz);
    auto tI = [&](Index d) {
        return t >= 0 ? AffineMatrix::variable(t, MatrixXd::Identity(d, d)) : AffineMatrix::zero(d, d);
    };
    for (std::size_t k = 0; k < P.parts.size(); ++k) {
        const Parts& p = P.parts[k];
        const double rho = P.dom.grid()[k];
        const AffineMatrix R = combine(P.basis_R, v.R, rho, n);
        const AffineMatrix S = combine(P.basis, v.S, rho, n);

        MatrixXd BD(n + nz, P.nu);
        BD << p.B2, p.D12;
        const MatrixXd NR = blkdiag(null_space(BD.transpose()), MatrixXd::Identity(nw, nw));
        MatrixXd CD(P.ny, n + nw);
        CD << p.C2, p.D21;
        const MatrixXd NS = blkdiag(null_space(CD), MatrixXd::Identity(nz, nz));

        for (double q : P.dom.rate_vertices()) {
            const AffineMatrix dR = combine_rate(P.basis_R, v.R, rho, q, n);
            const AffineMatrix dS = combine_rate(P.basis, v.S, rho, q, n);
            const AffineMatrix AR = p.A * R;
            const AffineMatrix MR = AffineMatrix::blocks({
                {AR.sym2() - dR, R * p.C1.transpose(), C(p.B1)},
                {p.C1 * R, C(Gz), C(p.D11)},
                {C(p.B1.transpose()), C(p.D11.transpose()), C(Gw)},
            });
            prob.require_nsd(NR.transpose() * MR * NR + tI(NR.cols()), "R(" + std::to_string(k) + ")", P.margin);

            const AffineMatrix SA = S * p.A;
            const AffineMatrix MS = AffineMatrix::blocks({
                {SA.sym2() + dS, S * p.B1, C(p.C1.transpose())},
                {p.B1.transpose() * S, C(Gw), C(p.D11.transpose())},
                {C(p.C1), C(p.D11), C(Gz)},
            });
            prob.require_nsd(NS.transpose() * MS * NS + tI(NS.cols()), "S(" + std::to_string(k) + ")", P.margin);
        }
    }
    return v;
}

AffineMatrix coupling(const AffineMatrix& R, const AffineMatrix& S, Index n) {
    return AffineMatrix::blocks({{R, C(MatrixXd::Identity(n, n))}, {C(MatrixXd::Identity(n, n)), S}});
}

std::vector<MatrixXd> values(const std::vector<SymmetricVar>& vars, const VectorXd& x) {
    std::vector<MatrixXd> out;
    for (const auto& v : vars) out.push_back(v.value(x));
    return out;
}

struct StorageSolution {
    std::vector<MatrixXd> R, S;
    double gamma = INFINITY;
    /// Achieved margin; the gamma is feasible when it is positive.
    double t = -INFINITY;
    bool solved = false;
    std::string message;

    bool feasible() const { return solved && t > kFeasibleMargin; }
    static constexpr double kFeasibleMargin = 1e-7;
};

SdpSettings solver_settings() { return SdpSettings{}; }

/// Largest margin t at a fixed gamma with R, S bounded by P.radius; this also
/// keeps the coupling condition away from singularity.
StorageSolution margin_at(const Problem& P, double gamma) {
    LmiProblem prob;
    const int t = prob.add_scalar();
    const StorageVars v = add_projected(prob, P, gamma, t);
    const MatrixXd In = MatrixXd::Identity(P.n, P.n);
    const AffineMatrix tv = AffineMatrix::variable(t, MatrixXd::Ones(1, 1));
    for (std::size_t k = 0; k < P.parts.size(); ++k) {
        const double rho = P.dom.grid()[k];
        const AffineMatrix R = combine(P.basis_R, v.R, rho, P.n);
        const AffineMatrix S = combine(P.basis, v.S, rho, P.n);
        prob.require_psd(coupling(R, S, P.n) - AffineMatrix::variable(t, MatrixXd::Identity(2 * P.n, 2 * P.n)),
                         "coupling(" + std::to_string(k) + ")");
        prob.require_psd(C(P.radius * In) - R, "R bound");
        prob.require_psd(C(P.radius * In) - S, "S bound");
    }
    prob.require_psd(C(MatrixXd::Ones(1, 1)) - tv, "t cap");
    prob.minimize(AffineMatrix::variable(t, -MatrixXd::Ones(1, 1)));
    const SdpResult res = solve_sdp(prob, solver_settings());
    StorageSolution sol;
    sol.gamma = gamma;
    sol.message = std::string(to_string(res.status)) + (res.message.empty() ? "" : " (" + res.message + ")");
    // Only a feasible point is needed: an iterate that satisfies every block
    // certifies its margin even when the solver did not converge.
    const bool usable = res.ok() || (res.x.allFinite() && res.max_violation == 0.0 && res.x(t) > 0.0);
    if (!usable) return sol;
    sol.solved = true;
    sol.t = res.x(t);
    sol.R = values(v.R, res.x);
    sol.S = values(v.S, res.x);
    return sol;
}

/// Storage at a fixed gamma. A margin solution is used when the solver finds
/// one; otherwise a plain feasibility problem settles the question.
StorageSolution storage_at(const Problem& P, double gamma) {
    StorageSolution sol = margin_at(P, gamma);
    if (sol.feasible()) return sol;
    // a converged margin problem with t <= 0 has no solution inside the storage bound
    if (sol.solved && sol.t <= 0.0)
        throw SynthesisError(SynthesisError::Kind::Infeasible,
                             "synthesis LMIs are infeasible at the requested gamma (best margin " +
                                 std::to_string(sol.t) + " with storage bounded by " + std::to_string(P.radius) + ")");
    LmiProblem prob;
    const StorageVars v = add_projected(prob, P, gamma, -1);
    const MatrixXd In = MatrixXd::Identity(P.n, P.n);
    for (std::size_t k = 0; k < P.parts.size(); ++k) {
        const double rho = P.dom.grid()[k];
        const AffineMatrix R = combine(P.basis_R, v.R, rho, P.n);
        const AffineMatrix S = combine(P.basis, v.S, rho, P.n);
        prob.require_psd(coupling(R, S, P.n), "coupling(" + std::to_string(k) + ")", P.margin);
        prob.require_psd(C(P.radius * In) - R, "R bound");
        prob.require_psd(C(P.radius * In) - S, "S bound");
    }
    const SdpResult res = solve_sdp(prob, solver_settings());
    sol.message = std::string(to_string(res.status)) + (res.message.empty() ? "" : " (" + res.message + ")");
    if (res.status == SdpStatus::Infeasible)
        throw SynthesisError(SynthesisError::Kind::Infeasible,
                             "synthesis LMIs are infeasible at the requested gamma: " + sol.message);
    if (!res.ok()) throw SynthesisError(SynthesisError::Kind::SolverFailure, "synthesis SDP failed: " + sol.message);
    sol.solved = true;
    sol.t = 2.0 * StorageSolution::kFeasibleMargin;  // strict by the block margins
    sol.R = values(v.R, res.x);
    sol.S = values(v.S, res.x);
    return sol;
}

/// Smallest feasible gamma to relative precision `rel_tol`, starting from a
/// known feasible solution when one is given.
StorageSolution bisect_gamma(const Problem& P, const SynthesisOptions& opts, const StorageSolution* start,
                             double rel_tol) {
    StorageSolution hi;
    if (start && start->feasible()) {
        hi = margin_at(P, start->gamma);
        if (!hi.feasible()) hi = *start;
    } else {
        for (double g = 1.0;; g *= 10.0) {
            if (g > opts.gamma_cap)
                throw SynthesisError(SynthesisError::Kind::Infeasible,
                                     "synthesis LMIs are infeasible for every gamma up to the cap (last: " +
                                         hi.message + ")");
            hi = margin_at(P, g);
            if (hi.feasible()) break;
        }
    }
    double lo = 0.0;
    for (double g = hi.gamma / 10.0; lo == 0.0 && g > 1e-6; g /= 10.0) {
        StorageSolution s = margin_at(P, g);
        if (s.feasible()) hi = std::move(s);
        else lo = g;
    }
    while (hi.gamma - lo > rel_tol * hi.gamma) {
        const double g = lo > 0.0 ? std::sqrt(lo * hi.gamma) : 0.5 * hi.gamma;
        StorageSolution s = margin_at(P, g);
        if (s.feasible()) hi = std::move(s);
        else lo = g;
    }
    return hi;
}

/// Stage 3 at one grid point: linearized controller variables, then recovery
/// with M = I, N = I - X Y. Throws Construction when no strict solution exists.
StateSpace complete_at(const Problem& P, std::size_t k, const StorageSolution& st, double& cond_out) {
    const Parts& p = P.parts[k];
    const Index n = P.n, nw = P.nw, nu = P.nu, nz = P.nz, ny = P.ny;
    const double rho = P.dom.grid()[k];
    const MatrixXd X = P.basis.combine(st.S, rho);
    const MatrixXd Y = P.basis_R.combine(st.R, rho);
    const MatrixXd In = MatrixXd::Identity(n, n);
    const MatrixXd N = In - X * Y;
    Eigen::JacobiSVD<MatrixXd> nsvd(N);
    const VectorXd& sv = nsvd.singularValues();
    cond_out = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : INFINITY;

    LmiProblem prob;
    const DenseVar Ah = prob.add_dense(n, n);
    const DenseVar Bh = prob.add_dense(n, ny);
    const DenseVar Ch = prob.add_dense(nu, n);
    const DenseVar Dh = prob.add_dense(nu, ny);
    const int t = prob.add_scalar();
    const AffineMatrix Ahat = Ah.expr(), Bhat = Bh.expr(), Chat = Ch.expr(), Dhat = Dh.expr();

    const AffineMatrix A11 = C(p.A * Y) + p.B2 * Chat;
    const AffineMatrix A12 = C(p.A) + p.B2 * Dhat * p.C2;
    const AffineMatrix A22 = C(X * p.A) + Bhat * p.C2;
    const AffineMatrix Acal = AffineMatrix::blocks({{A11, A12}, {Ahat, A22}});
    const AffineMatrix Bcal = AffineMatrix::blocks({{C(p.B1) + p.B2 * Dhat * p.D21}, {C(X * p.B1) + Bhat * p.D21}});
    const AffineMatrix Ccal = AffineMatrix::blocks({{C(p.C1 * Y) + p.D12 * Chat, C(p.C1) + p.D12 * Dhat * p.C2}});
    const AffineMatrix Dcal = C(p.D11) + p.D12 * Dhat * p.D21;

    for (double q : P.dom.rate_vertices()) {
        const MatrixXd dX = P.basis.combine_rate(st.S, rho, q);
        const MatrixXd dY = P.basis_R.combine_rate(st.R, rho, q);
        const MatrixXd rate = blkdiag(-dY, dX);
        const AffineMatrix L = AffineMatrix::blocks({
            {Acal.sym2() + rate, Bcal, Ccal.transpose()},
            {Bcal.transpose(), C(-st.gamma * MatrixXd::Identity(nw, nw)), Dcal.transpose()},
            {Ccal, Dcal, C(-st.gamma * MatrixXd::Identity(nz, nz))},
        });
        const Index d = L.rows();
        prob.require_psd(AffineMatrix::variable(t, MatrixXd::Identity(d, d)) - L, "completion");
    }
    prob.minimize(AffineMatrix::variable(t, MatrixXd::Ones(1, 1)));
    const SdpResult res = solve_sdp(prob, solver_settings());
    if (!res.ok())
        throw SynthesisError(SynthesisError::Kind::Construction, "controller completion SDP failed at grid point " +
                                                                     std::to_string(k) + ": " + res.message);
    if (res.x(t) >= 0.0) {
        std::ostringstream os;
        os << "no strict controller completion at grid point " << k << " (t = " << res.x(t) << ")";
        throw SynthesisError(SynthesisError::Kind::Construction, os.str());
    }

    const MatrixXd Av = Ah.value(res.x), Bv = Bh.value(res.x), Cv = Ch.value(res.x), Dv = Dh.value(res.x);
    const Eigen::FullPivLU<MatrixXd> Nlu(N);
    const MatrixXd DK = Dv;
    const MatrixXd CK = Cv - DK * p.C2 * Y;  // M' = I
    const MatrixXd BK = Nlu.solve(Bv - X * p.B2 * DK);
    const MatrixXd AK = Nlu.solve(Av - N * BK * p.C2 * Y - X * p.B2 * CK - X * (p.A + p.B2 * DK * p.C2) * Y);
    return StateSpace(AK, BK, CK, DK);
}

/// Index of a basis function that is 1 with zero derivative on the grid, or
/// basis.size() when there is none.
std::size_t constant_index(const BasisSpec& basis, const ParameterDomain& dom) {
    for (std::size_t i = 0; i < basis.size(); ++i) {
        bool unit = true;
        for (double rho : dom.grid()) unit = unit && basis.value(i, rho) == 1.0 && basis.derivative(i, rho) == 0.0;
        if (unit) return i;
    }
    return basis.size();
}

}  // namespace

void SynthesisOptions::validate() const {
    if (!(rate_bound < 0.0 || std::isfinite(rate_bound))) throw ValidationError("synthesis.rate_bound", "must be finite");
    if (!(backoff >= 1.0)) throw ValidationError("synthesis.backoff", "must be >= 1");
    if (gamma_mode == GammaMode::Fixed && !(gamma_fixed > 0.0))
        throw ValidationError("synthesis.gamma_fixed", "must be positive in fixed-gamma mode");
    if (max_retries < 0) throw ValidationError("synthesis.max_retries", "must be non-negative");
    if (!(eps_reg >= 0.0)) throw ValidationError("synthesis.eps_reg", "must be non-negative");
}

GriddedSystem close_loop(const GeneralizedPlant& gp, const GriddedSystem& controller) {
    return lft_lower(gp.sys, controller);
}

ContinuityReport continuity_report(const GriddedSystem& controller, double warn_above) {
    ContinuityReport rep;
    double scale = 0.0;
    for (const auto& s : controller.data()) {
        MatrixXd M(s.states() + s.outputs(), s.states() + s.inputs());
        M << s.A, s.B, s.C, s.D;
        if (M.size()) scale = std::max(scale, M.cwiseAbs().maxCoeff());
    }
    for (std::size_t k = 0; k + 1 < controller.size(); ++k) {
        const StateSpace& a = controller.at(k);
        const StateSpace& b = controller.at(k + 1);
        MatrixXd Ma(a.states() + a.outputs(), a.states() + a.inputs()), Mb(Ma.rows(), Ma.cols());
        Ma << a.A, a.B, a.C, a.D;
        Mb << b.A, b.B, b.C, b.D;
        // per entry, relative to the larger of the two values (floored by the global scale)
        double jump = 0.0;
        for (Index i = 0; i < Ma.rows(); ++i)
            for (Index j = 0; j < Ma.cols(); ++j) {
                const double den = std::max({std::abs(Ma(i, j)), std::abs(Mb(i, j)), 1e-6 * scale});
                if (den > 0.0) jump = std::max(jump, std::abs(Ma(i, j) - Mb(i, j)) / den);
            }
        if (jump > rep.max_jump) {
            rep.max_jump = jump;
            rep.worst_interval = k;
        }
    }
    rep.warn = rep.max_jump > warn_above;
    return rep;
}

SynthesisResult synthesize_lpv(const GeneralizedPlant& gp, const SynthesisOptions& opts) {
    opts.validate();
    gp.validate();
    const double rate = opts.rate_bound < 0.0 ? gp.sys.domain().rate_bound() : opts.rate_bound;
    const ParameterDomain dom(gp.sys.domain().grid(), rate);
    const Index n = gp.sys.states(), nw = gp.n_w(), nu = gp.n_u, nz = gp.n_z(), ny = gp.n_y;

    SynthesisResult out;
    out.basis = opts.basis;
    out.rate_bound = rate;

    // Nothing to design: the open loop is the closed loop.
    if (nu == 0 || ny == 0) {
        std::vector<StateSpace> ks(gp.sys.size(), StateSpace(MatrixXd::Zero(0, 0), MatrixXd::Zero(0, ny),
                                                              MatrixXd::Zero(nu, 0), MatrixXd::Zero(nu, ny)));
        out.controller = GriddedSystem(gp.sys.domain(), ks);
        BrlOptions bo;
        bo.basis = opts.basis;
        bo.rate = rate;
        out.recertification = brl_bound(close_loop(gp, out.controller), bo);
        if (!out.recertification.certified())
            throw SynthesisError(SynthesisError::Kind::Infeasible, "open loop has no finite induced gain certificate");
        out.gamma_opt = out.gamma_syn = out.recertification.gamma;
        out.X = out.recertification.storage;
        out.attempts = 1;
        return out;
    }

    // Normalize u and y, then balance states jointly over the grid.
    double su = 0.0, sy = 0.0;
    for (const auto& s : gp.sys.data()) {
        const Parts p = split(s, nw, nu, nz, ny);
        MatrixXd bu(n + nz, nu);
        bu << p.B2, p.D12;
        MatrixXd cy(ny, n + nw);
        cy << p.C2, p.D21;
        su = std::max(su, bu.norm());
        sy = std::max(sy, cy.norm());
    }
    const double u_scale = su > 0.0 ? 1.0 / su : 1.0;  // u = u_scale * u_tilde
    const double y_scale = sy > 0.0 ? 1.0 / sy : 1.0;  // y_tilde = y_scale * y
    std::vector<StateSpace> normalized;
    for (const auto& s : gp.sys.data()) {
        StateSpace t = s;
        t.B.rightCols(nu) *= u_scale;
        t.D.rightCols(nu) *= u_scale;
        t.C.bottomRows(ny) *= y_scale;
        t.D.bottomRows(ny) *= y_scale;
        normalized.push_back(std::move(t));
    }
    std::vector<const StateSpace*> ptrs;
    for (const auto& s : normalized) ptrs.push_back(&s);
    const VectorXd T = balancing_scale(ptrs);
    Problem P;
    P.dom = dom;
    P.basis = opts.basis;
    P.basis_R = BasisSpec::constant();
    P.n = n;
    P.nw = nw;
    P.nu = nu;
    P.nz = nz;
    P.ny = ny;
    P.margin = opts.eps_reg;
    std::vector<Parts> raw;
    for (const auto& s : normalized) raw.push_back(split(apply_state_scale(s, T), nw, nu, nz, ny));
    P.parts = raw;
    P.radius = opts.storage_bound;

    // Re-solve in coordinates where the previous storage pair is balanced, so
    // the bounded problem can reach storage with a wide eigenvalue spread.
    MatrixXd Tc = MatrixXd::Identity(n, n);
    StorageSolution opt;
    if (opts.gamma_mode == GammaMode::Fixed) {
        try {
            opt = storage_at(P, opts.gamma_fixed);
        } catch (const SynthesisError& e) {
            if (e.kind() != SynthesisError::Kind::SolverFailure) throw;
            // the solver stalls near empty LMIs; compare with the bisection optimum
            const StorageSolution best = bisect_gamma(P, opts, nullptr, 5e-3);
            if (opts.gamma_fixed >= best.gamma) throw;
            throw SynthesisError(SynthesisError::Kind::Infeasible,
                                 "requested gamma " + std::to_string(opts.gamma_fixed) +
                                     " is below the smallest feasible gamma " + std::to_string(best.gamma));
        }
    } else {
        opt = bisect_gamma(P, opts, nullptr, 5e-3);
        // Re-solve in coordinates where the storage pair is balanced, so the
        // bounded problem can reach storage with a wide eigenvalue spread.
        for (int round = 0; round < opts.max_rebalance; ++round) {
            MatrixXd Rm = MatrixXd::Zero(n, n), Sm = MatrixXd::Zero(n, n);
            for (double rho : P.dom.grid()) {
                Rm += P.basis_R.combine(opt.R, rho);
                Sm += P.basis.combine(opt.S, rho);
            }
            const MatrixXd Tk = balancing_transform(Rm / double(P.dom.size()), Sm / double(P.dom.size()));
            const MatrixXd Tkinv = Tk.inverse();
            Problem Q = P;
            for (auto& p : Q.parts) transform(p, Tk, Tkinv);
            StorageSolution start = opt;
            for (auto& r : start.R) r = Tkinv * r * Tkinv.transpose();
            for (auto& s : start.S) s = Tk.transpose() * s * Tk;
            StorageSolution next = bisect_gamma(Q, opts, &start, 5e-3);
            const bool progress = next.gamma < 0.99 * opt.gamma;
            P = std::move(Q);
            opt = std::move(next);
            Tc = Tc * Tk;
            if (!progress) break;
        }
    }
    out.gamma_opt = opt.gamma;

    std::string last_error;
    std::vector<MatrixXd> cl_guess;
    for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
        out.attempts = attempt + 1;
        const double factor = opts.gamma_mode == GammaMode::Fixed ? 1.0 : std::pow(opts.backoff, attempt + 1);
        const double gbar = opt.gamma * factor;
        try {
            const StorageSolution st = (factor > 1.0) ? margin_at(P, gbar) : opt;
            if (!st.feasible())
                throw SynthesisError(SynthesisError::Kind::Construction,
                                     "no storage with positive margin at the backed-off gamma: " + st.message);
            std::vector<StateSpace> ks;
            double worst_cond = 0.0;
            for (std::size_t k = 0; k < P.parts.size(); ++k) {
                double cond = 0.0;
                StateSpace K = complete_at(P, k, st, cond);
                worst_cond = std::max(worst_cond, cond);
                if (cond > opts.max_coupling_cond) {
                    std::ostringstream os;
                    os << "I - XY ill-conditioned at grid point " << k << " (cond " << cond << ")";
                    throw SynthesisError(SynthesisError::Kind::Coupling, os.str());
                }
                K.B *= y_scale;
                K.C *= u_scale;
                K.D *= u_scale * y_scale;
                ks.push_back(std::move(K));
            }
            out.coupling_cond = worst_cond;
            out.gamma_syn = gbar;
            // x = diag(T) Tc x_work
            const MatrixXd Tw = T.asDiagonal() * Tc;
            const MatrixXd Twinv = Tw.inverse();
            out.X.clear();
            out.Y.clear();
            for (const auto& s : st.S) out.X.push_back(Twinv.transpose() * s * Twinv);
            for (const auto& r : st.R) out.Y.push_back(Tw * r * Tw.transpose());
            // Closed-loop storage implied by M = I, [X, I - XY; I - YX, YXY - Y],
            // divided by gamma for the analysis form. It is affine in X, so it
            // lies in the span of the basis when the basis holds a constant.
            cl_guess.clear();
            const std::size_t unit = constant_index(P.basis, P.dom);
            if (unit < P.basis.size()) {
                const MatrixXd& Y0 = st.R.front();
                const MatrixXd Tcl = blkdiag(Twinv, MatrixXd::Identity(n, n));
                for (std::size_t i = 0; i < P.basis.size(); ++i) {
                    const MatrixXd& Xi = st.S[i];
                    MatrixXd blk(2 * n, 2 * n);
                    blk << Xi, -Xi * Y0, -Y0 * Xi, Y0 * Xi * Y0;
                    if (i == unit) {
                        blk.topRightCorner(n, n) += MatrixXd::Identity(n, n);
                        blk.bottomLeftCorner(n, n) += MatrixXd::Identity(n, n);
                        blk.bottomRightCorner(n, n) -= Y0;
                    }
                    cl_guess.push_back(Tcl.transpose() * (blk / gbar) * Tcl);
                }
            }
            IoLabels labels;
            labels.inputs = {{"e", 0, ny}};
            labels.outputs = {{"u", 0, nu}};
            out.controller = GriddedSystem(gp.sys.domain(), std::move(ks), labels);
            break;
        } catch (const SynthesisError& e) {
            if (e.kind() != SynthesisError::Kind::Coupling && e.kind() != SynthesisError::Kind::Construction) throw;
            last_error = e.what();
            out.warnings.push_back(std::string("attempt ") + std::to_string(attempt + 1) + ": " + e.what());
            if (attempt == opts.max_retries) throw;
        }
    }

    out.continuity = continuity_report(out.controller, opts.continuity_warn);
    if (out.continuity.warn) {
        std::ostringstream os;
        os << "controller matrices jump by " << out.continuity.max_jump << " (relative) between grid points "
           << out.continuity.worst_interval << " and " << out.continuity.worst_interval + 1;
        out.warnings.push_back(os.str());
    }

    BrlOptions bo;
    bo.basis = opts.basis;
    bo.rate = rate;
    bo.storage_guess = cl_guess;
    out.recertification = brl_bound(close_loop(gp, out.controller), bo);
    if (!out.recertification.certified() || out.recertification.gamma > 1.05 * out.gamma_syn) {
        std::ostringstream os;
        os << "closed-loop re-certification failed: status " << to_string(out.recertification.status)
           << ", gamma " << out.recertification.gamma << " vs synthesis " << out.gamma_syn;
        throw SynthesisError(SynthesisError::Kind::Recertification, os.str());
    }
    return out;
}

SynthesisResult synthesize_hinf(const GeneralizedPlant& gp, SynthesisOptions opts) {
    if (gp.sys.size() != 1) throw ValidationError("generalized_plant", "H-infinity synthesis needs a single grid point");
    opts.basis = BasisSpec::constant();
    opts.rate_bound = 0.0;
    return synthesize_lpv(gp, opts);
}

}  // namespace lpvctl
