// Primal-dual path-following solver for
//   (P)  minimize c'x   s.t.  S = F0 + sum_i x_i F_i >= 0
//   (D)  maximize -F0.Z s.t.  F_i.Z = c_i,  Z >= 0
// with the HKM search direction and Mehrotra predictor-corrector steps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "lpvctl/lmi.hpp"

namespace lpvctl {

namespace {

constexpr double kLooseTol = 1e-6;

struct Block {
    Eigen::Index n = 0;
    MatrixXd F0;
    std::vector<int> vars;
    std::vector<MatrixXd> mats;
};

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double inner(const MatrixXd& a, const MatrixXd& b) { return a.cwiseProduct(b).sum(); }

/// Largest step alpha <= 1/fraction-free such that M + alpha dM stays PSD,
/// given the Cholesky factor of M.
double max_step(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& dM) {
    const MatrixXd& L = llt.matrixL();
    MatrixXd W = L.triangularView<Eigen::Lower>().solve(dM);
    W = L.triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
    const double lmin = min_eigenvalue(W);
    return lmin >= 0.0 ? INFINITY : -1.0 / lmin;
}

struct Iterate {
    VectorXd x;
    std::vector<MatrixXd> S, Z;
};

class Solver {
public:
    Solver(const LmiProblem& problem, const SdpSettings& settings) : settings_(settings) {
        m_ = problem.num_vars();
        c_ = problem.objective_padded();
        for (const auto& lb : problem.blocks()) {
            Block b;
            b.n = lb.F.rows();
            if (b.n == 0) continue;
            b.F0 = symmetrize(lb.F.constant());
            for (const auto& [v, coeff] : lb.F.terms()) {
                MatrixXd s = symmetrize(coeff);
                if (s.cwiseAbs().maxCoeff() == 0.0) continue;
                b.vars.push_back(v);
                b.mats.push_back(std::move(s));
            }
            blocks_.push_back(std::move(b));
        }
        equilibrate();
    }

    SdpResult run();

private:
    void equilibrate();
    MatrixXd apply_F(std::size_t j, const VectorXd& x) const {
        const Block& b = blocks_[j];
        MatrixXd out = MatrixXd::Zero(b.n, b.n);
        for (std::size_t t = 0; t < b.vars.size(); ++t) out += x(b.vars[t]) * b.mats[t];
        return out;
    }
    VectorXd adjoint(const std::vector<MatrixXd>& Z) const {
        VectorXd out = VectorXd::Zero(m_);
        for (std::size_t j = 0; j < blocks_.size(); ++j) {
            const Block& b = blocks_[j];
            for (std::size_t t = 0; t < b.vars.size(); ++t) out(b.vars[t]) += inner(b.mats[t], Z[j]);
        }
        return out;
    }

    SdpSettings settings_;
    int m_ = 0;
    VectorXd c_;
    std::vector<Block> blocks_;
    VectorXd var_scale_;  // x_original = var_scale .* x_scaled
    double obj_scale_ = 1.0;
};

void Solver::equilibrate() {
    var_scale_ = VectorXd::Ones(m_);
    for (int round = 0; round < 6; ++round) {
        VectorXd vmax = VectorXd::Zero(m_);
        for (const auto& b : blocks_)
            for (std::size_t t = 0; t < b.vars.size(); ++t)
                vmax(b.vars[t]) = std::max(vmax(b.vars[t]), b.mats[t].cwiseAbs().maxCoeff());
        for (int i = 0; i < m_; ++i) {
            const double d = vmax(i) > 0.0 ? 1.0 / std::sqrt(vmax(i)) : 1.0;
            var_scale_(i) *= d;
            c_(i) *= d;
        }
        for (auto& b : blocks_) {
            for (std::size_t t = 0; t < b.vars.size(); ++t) {
                const double d = vmax(b.vars[t]) > 0.0 ? 1.0 / std::sqrt(vmax(b.vars[t])) : 1.0;
                b.mats[t] *= d;
            }
            double bmax = b.F0.cwiseAbs().maxCoeff();
            for (const auto& mt : b.mats) bmax = std::max(bmax, mt.cwiseAbs().maxCoeff());
            if (bmax > 0.0) {
                const double s = 1.0 / std::sqrt(bmax);
                b.F0 *= s;
                for (auto& mt : b.mats) mt *= s;
            }
        }
    }
    const double cmax = c_.size() ? c_.cwiseAbs().maxCoeff() : 0.0;
    if (cmax > 0.0) {
        obj_scale_ = 1.0 / cmax;
        c_ *= obj_scale_;
    }
}

SdpResult Solver::run() {
    SdpResult res;
    const std::size_t J = blocks_.size();
    Eigen::Index total_n = 0;
    for (const auto& b : blocks_) total_n += b.n;

    Iterate it;
    it.x = VectorXd::Zero(m_);
    double xi = 10.0;
    for (const auto& b : blocks_) xi = std::max(xi, 10.0 * b.F0.cwiseAbs().maxCoeff());
    for (const auto& b : blocks_) {
        it.S.push_back(xi * MatrixXd::Identity(b.n, b.n));
        it.Z.push_back(xi * MatrixXd::Identity(b.n, b.n));
    }
    double f0norm = 0.0;
    for (const auto& b : blocks_) f0norm = std::max(f0norm, b.F0.norm());
    const double cnorm = c_.norm();

    // Best iterate so far; a late breakdown falls back to it when it is
    // already accurate to within loose tolerances.
    VectorXd best_x = it.x;
    double best_merit = INFINITY;

    auto finish = [&](SdpStatus st, const std::string& msg) {
        const bool failed = st == SdpStatus::NumericalFailure || st == SdpStatus::MaxIterations;
        if (failed && best_merit < kLooseTol) {
            res.status = SdpStatus::Optimal;
            res.message = msg + "; accepted best iterate";
            res.x = var_scale_.cwiseProduct(best_x);
            res.objective = c_.dot(best_x) / obj_scale_;
            return res;
        }
        res.status = st;
        res.message = msg;
        res.x = var_scale_.cwiseProduct(it.x);
        res.objective = c_.dot(it.x) / obj_scale_;
        return res;
    };

    if (J == 0) return finish(SdpStatus::Optimal, "no constraints");

    std::vector<MatrixXd> Sinv(J), Rp(J), dS(J), dZ(J), dSa(J), dZa(J), G;
    std::vector<Eigen::LLT<MatrixXd>> Sllt(J), Zllt(J);
    double prev_merit = INFINITY;
    int stall = 0;

    for (int iter = 0; iter < settings_.max_iterations; ++iter) {
        res.iterations = iter;
        double mu_sum = 0.0, pinf = 0.0;
        for (std::size_t j = 0; j < J; ++j) {
            Rp[j] = blocks_[j].F0 + apply_F(j, it.x) - it.S[j];
            pinf = std::max(pinf, Rp[j].norm());
            mu_sum += inner(it.S[j], it.Z[j]);
        }
        const double mu = mu_sum / static_cast<double>(total_n);
        const VectorXd FZ = adjoint(it.Z);
        const VectorXd rd = c_ - FZ;
        const double pobj = c_.dot(it.x);
        double dobj = 0.0;
        for (std::size_t j = 0; j < J; ++j) dobj -= inner(blocks_[j].F0, it.Z[j]);

        const double rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        const double rel_comp = mu_sum / (1.0 + std::abs(pobj) + std::abs(dobj));
        const double rel_pinf = pinf / (1.0 + f0norm);
        const double rel_dinf = rd.norm() / (1.0 + cnorm);
        if (settings_.verbose)
            std::fprintf(stderr, "%3d pobj %+.6e dobj %+.6e gap %.1e comp %.1e pinf %.1e dinf %.1e\n", iter,
                         pobj / obj_scale_, dobj / obj_scale_, rel_gap, rel_comp, rel_pinf, rel_dinf);

        if (std::max(rel_gap, rel_comp) < settings_.gap_tol && rel_pinf < settings_.feas_tol &&
            rel_dinf < settings_.feas_tol)
            return finish(SdpStatus::Optimal, "converged");

        // Farkas certificate for an empty LMI: Z >= 0, F_i.Z = 0, F0.Z < 0.
        if (dobj > 0.0) {
            if (FZ.norm() / dobj < settings_.infeas_tol) return finish(SdpStatus::Infeasible, "dual ray certifies infeasibility");
        }
        // Recession direction: sum x_i F_i >= 0 with c'x < 0.
        if (pobj < 0.0) {
            double worst = 0.0;
            for (std::size_t j = 0; j < J; ++j) worst = std::min(worst, min_eigenvalue(apply_F(j, it.x)));
            if (-worst / -pobj < settings_.infeas_tol && -pobj > 1e8) return finish(SdpStatus::Unbounded, "primal ray");
        }

        const double merit = std::max({rel_gap, rel_comp, rel_pinf, rel_dinf});
        if (merit < best_merit) {
            best_merit = merit;
            best_x = it.x;
        }
        if (merit > 0.999 * prev_merit) {
            if (++stall > 12) return finish(SdpStatus::NumericalFailure, "no progress");
        } else {
            stall = 0;
        }
        prev_merit = std::min(prev_merit, merit);

        // Schur complement M_ik = sum_j tr(F_i Z F_k S^-1).
        MatrixXd M = MatrixXd::Zero(m_, m_);
        for (std::size_t j = 0; j < J; ++j) {
            const Block& b = blocks_[j];
            Sllt[j].compute(it.S[j]);
            if (Sllt[j].info() != Eigen::Success) return finish(SdpStatus::NumericalFailure, "slack lost definiteness");
            Sinv[j] = Sllt[j].solve(MatrixXd::Identity(b.n, b.n));
            Sinv[j] = symmetrize(Sinv[j]);
            G.resize(b.vars.size());
            for (std::size_t t = 0; t < b.vars.size(); ++t) G[t] = it.Z[j] * b.mats[t] * Sinv[j];
            for (std::size_t t = 0; t < b.vars.size(); ++t)
                for (std::size_t u = t; u < b.vars.size(); ++u) {
                    // tr(F_t G_u) = sum_ab F_t(a,b) G_u(b,a)
                    const double v = b.mats[t].cwiseProduct(G[u].transpose()).sum();
                    M(b.vars[t], b.vars[u]) += v;
                    if (u != t) M(b.vars[u], b.vars[t]) += v;
                }
        }
        M = symmetrize(M);
        const double diag_max = M.diagonal().cwiseAbs().maxCoeff();
        M.diagonal().array() += 1e-14 * std::max(diag_max, 1.0);
        Eigen::LDLT<MatrixXd> Mfac(M);
        if (Mfac.info() != Eigen::Success) return finish(SdpStatus::NumericalFailure, "Schur complement factorization failed");

        // Direction for complementarity right-hand side Rc (given as Rc * S^-1).
        auto direction = [&](const std::vector<MatrixXd>& RcSinv, VectorXd& dx, std::vector<MatrixXd>& dSo,
                             std::vector<MatrixXd>& dZo) {
            VectorXd rhs = -rd;
            for (std::size_t j = 0; j < J; ++j) {
                const Block& b = blocks_[j];
                const MatrixXd T = RcSinv[j] - it.Z[j] * Rp[j] * Sinv[j];
                for (std::size_t t = 0; t < b.vars.size(); ++t) rhs(b.vars[t]) += inner(b.mats[t], T);
            }
            dx = Mfac.solve(rhs);
            for (std::size_t j = 0; j < J; ++j) {
                dSo[j] = Rp[j] + apply_F(j, dx);
                dZo[j] = symmetrize(RcSinv[j] - it.Z[j] * dSo[j] * Sinv[j]);
            }
        };
        auto step_lengths = [&](const std::vector<MatrixXd>& dSi, const std::vector<MatrixXd>& dZi, double& ap,
                                double& ad) {
            ap = 1.0;
            ad = 1.0;
            for (std::size_t j = 0; j < J; ++j) {
                Zllt[j].compute(it.Z[j]);
                ap = std::min(ap, max_step(Sllt[j], dSi[j]));
                ad = std::min(ad, max_step(Zllt[j], dZi[j]));
            }
        };

        // Predictor: Rc = -Z S, so Rc S^-1 = -Z.
        std::vector<MatrixXd> RcSinv(J);
        for (std::size_t j = 0; j < J; ++j) RcSinv[j] = -it.Z[j];
        VectorXd dxa;
        direction(RcSinv, dxa, dSa, dZa);
        double ap = 1.0, ad = 1.0;
        step_lengths(dSa, dZa, ap, ad);
        double mu_aff = 0.0;
        for (std::size_t j = 0; j < J; ++j) mu_aff += inner(it.S[j] + ap * dSa[j], it.Z[j] + ad * dZa[j]);
        mu_aff /= static_cast<double>(total_n);
        double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
        // Keep some centering while primal/dual infeasibility persists.
        if (rel_pinf > 1e2 * settings_.feas_tol || rel_dinf > 1e2 * settings_.feas_tol) sigma = std::max(sigma, 1e-3);

        // Corrector: Rc = sigma mu I - Z S - dZa dSa.
        for (std::size_t j = 0; j < J; ++j)
            RcSinv[j] = sigma * mu * Sinv[j] - it.Z[j] - dZa[j] * dSa[j] * Sinv[j];
        VectorXd dx;
        direction(RcSinv, dx, dS, dZ);
        step_lengths(dS, dZ, ap, ad);
        ap = std::min(1.0, settings_.step_fraction * ap);
        ad = std::min(1.0, settings_.step_fraction * ad);
        if (!dx.allFinite()) return finish(SdpStatus::NumericalFailure, "non-finite search direction");

        it.x += ap * dx;
        for (std::size_t j = 0; j < J; ++j) {
            it.S[j] = symmetrize(it.S[j] + ap * dS[j]);
            it.Z[j] = symmetrize(it.Z[j] + ad * dZ[j]);
        }
    }
    return finish(SdpStatus::MaxIterations, "iteration limit reached");
}

/// Phase-1 problem: minimize t s.t. F_j(x) + t I >= 0 and t >= -1. Always
/// strictly feasible; a positive optimum certifies that the LMI is empty.
LmiProblem phase_one(const LmiProblem& problem, int& t_index) {
    LmiProblem p1;
    for (int i = 0; i < problem.num_vars(); ++i) p1.add_scalar();
    t_index = p1.add_scalar();
    for (const auto& b : problem.blocks()) {
        const Eigen::Index n = b.F.rows();
        if (n == 0) continue;
        double scale = b.F.constant().cwiseAbs().maxCoeff();
        for (const auto& [v, coeff] : b.F.terms()) {
            (void)v;
            scale = std::max(scale, coeff.cwiseAbs().maxCoeff());
        }
        scale = scale > 0.0 ? scale : 1.0;
        p1.require_psd((1.0 / scale) * b.F + AffineMatrix::variable(t_index, MatrixXd::Identity(n, n)), b.label);
    }
    p1.require_psd(AffineMatrix::variable(t_index, MatrixXd::Ones(1, 1)) + MatrixXd::Ones(1, 1), "t>=-1");
    p1.minimize(AffineMatrix::variable(t_index, MatrixXd::Ones(1, 1)));
    return p1;
}

}  // namespace

SdpResult solve_sdp(const LmiProblem& problem, const SdpSettings& settings) {
    if (const char* dir = std::getenv("LPVCTL_SDP_DUMP")) {
        static std::atomic<int> counter{0};
        std::ofstream f(std::string(dir) + "/sdp_" + std::to_string(counter++) + ".dat-s");
        write_sdpa(problem, f);
    }
    Solver solver(problem, settings);
    SdpResult res = solver.run();
    if (res.status == SdpStatus::NumericalFailure || res.status == SdpStatus::MaxIterations) {
        int t_index = 0;
        const LmiProblem p1 = phase_one(problem, t_index);
        Solver s1(p1, settings);
        const SdpResult r1 = s1.run();
        if (r1.ok() && r1.x(t_index) > 1e-7) {
            res.status = SdpStatus::Infeasible;
            res.message = "phase-1 optimum t = " + std::to_string(r1.x(t_index)) + " > 0";
        } else if (r1.ok()) {
            res.message += " (phase-1 finds the LMI feasible, t = " + std::to_string(r1.x(t_index)) + ")";
        }
    }
    if (res.x.size() != problem.num_vars()) res.x = VectorXd::Zero(problem.num_vars());

    // Residuals against the original (unscaled) constraints.
    res.max_violation = 0.0;
    res.min_slack = INFINITY;
    for (const auto& b : problem.blocks()) {
        if (b.F.rows() == 0) continue;
        const MatrixXd F = b.F.evaluate(res.x);
        double scale = b.F.constant().cwiseAbs().maxCoeff();
        for (const auto& [v, coeff] : b.F.terms()) scale = std::max(scale, std::abs(res.x(v)) * coeff.cwiseAbs().maxCoeff());
        scale = std::max(scale, 1e-300);
        const double lmin = min_eigenvalue(F);
        res.max_violation = std::max(res.max_violation, std::max(0.0, -lmin / scale));
        res.min_slack = std::min(res.min_slack, lmin / scale);
    }
    if (problem.blocks().empty()) res.min_slack = 0.0;
    return res;
}

}  // namespace lpvctl
