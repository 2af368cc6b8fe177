#include "lpvctl/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace lpvctl {

// ---------------------------------------------------------------------------
// BasisSpec

BasisSpec BasisSpec::monomials(std::vector<int> exponents) {
    if (exponents.empty() || exponents.front() != 0)
        throw ValidationError("basis", "the constant function must be the first basis element");
    BasisSpec b{Empty{}};
    for (int k : exponents) {
        if (k < 0) throw ValidationError("basis", "negative exponent");
        b.f_.push_back([k](double r) { return std::pow(r, k); });
        b.df_.push_back([k](double r) { return k == 0 ? 0.0 : k * std::pow(r, k - 1); });
        b.names_.push_back(k == 0 ? "1" : "rho^" + std::to_string(k));
    }
    b.exponents_ = std::move(exponents);
    return b;
}

BasisSpec BasisSpec::custom(std::vector<Fn> f, std::vector<Fn> df, std::vector<std::string> names) {
    if (f.empty() || f.size() != df.size() || f.size() != names.size())
        throw ValidationError("basis", "function, derivative and name lists must match");
    BasisSpec b{Empty{}};
    b.f_ = std::move(f);
    b.df_ = std::move(df);
    b.names_ = std::move(names);
    return b;
}

MatrixXd BasisSpec::combine(const std::vector<MatrixXd>& coeffs, double rho) const {
    MatrixXd out = MatrixXd::Zero(coeffs.front().rows(), coeffs.front().cols());
    for (std::size_t i = 0; i < coeffs.size(); ++i) out += value(i, rho) * coeffs[i];
    return out;
}

MatrixXd BasisSpec::combine_rate(const std::vector<MatrixXd>& coeffs, double rho, double rate) const {
    MatrixXd out = MatrixXd::Zero(coeffs.front().rows(), coeffs.front().cols());
    for (std::size_t i = 0; i < coeffs.size(); ++i) out += derivative(i, rho) * rate * coeffs[i];
    return out;
}

// ---------------------------------------------------------------------------

double gain_at(const StateSpace& sys, double omega) {
    const MatrixXc g = eval_tf(sys, {0.0, omega});
    if (g.size() == 0) return 0.0;
    if (!g.allFinite()) return INFINITY;
    Eigen::JacobiSVD<MatrixXc> svd(g);
    return svd.singularValues()(0);
}

namespace {

double sampled_peak(const StateSpace& sys) {
    double peak = 0.0;
    if (sys.D.size()) peak = Eigen::JacobiSVD<MatrixXd>(sys.D).singularValues()(0);
    std::vector<double> omegas = logspace(-6, 6, 121);
    omegas.push_back(0.0);
    if (sys.states() > 0) {
        Eigen::EigenSolver<MatrixXd> es(sys.A, false);
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            omegas.push_back(std::abs(es.eigenvalues()(i).imag()));
            omegas.push_back(std::abs(es.eigenvalues()(i)));
        }
    }
    for (double w : omegas) {
        const double g = gain_at(sys, w);
        if (std::isfinite(g)) peak = std::max(peak, g);
    }
    return peak;
}

/// Candidate frequencies where the gain may equal gamma: imaginary-axis
/// eigenvalues of the Hamiltonian. Returns the largest gain over them (0 if none).
double hamiltonian_probe(const StateSpace& sys, double gamma) {
    const Eigen::Index n = sys.states(), m = sys.inputs(), p = sys.outputs();
    const MatrixXd R = gamma * gamma * MatrixXd::Identity(m, m) - sys.D.transpose() * sys.D;
    const MatrixXd Rinv = R.inverse();
    const MatrixXd Ah = sys.A + sys.B * Rinv * sys.D.transpose() * sys.C;
    MatrixXd H(2 * n, 2 * n);
    H << Ah, sys.B * Rinv * sys.B.transpose(),
        -sys.C.transpose() * (MatrixXd::Identity(p, p) + sys.D * Rinv * sys.D.transpose()) * sys.C,
        -Ah.transpose();
    Eigen::EigenSolver<MatrixXd> es(H, false);
    double best = 0.0;
    const double hscale = std::max(1.0, H.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        const auto lam = es.eigenvalues()(i);
        if (std::abs(lam.real()) < 1e-7 * std::max(hscale, std::abs(lam)))
            best = std::max(best, gain_at(sys, std::abs(lam.imag())));
    }
    return best;
}

}  // namespace

double hinf_norm_bisect(const StateSpace& sys, double rel_tol) {
    sys.validate();
    double dnorm = sys.D.size() ? Eigen::JacobiSVD<MatrixXd>(sys.D).singularValues()(0) : 0.0;
    if (sys.states() == 0) return dnorm;
    if (!sys.is_hurwitz()) throw ValidationError("hinf_norm_bisect", "A is not Hurwitz");

    double lo = sampled_peak(sys);
    if (lo == 0.0) return 0.0;
    double hi = 2.0 * lo;
    for (int k = 0; k < 200; ++k) {
        const double g = hamiltonian_probe(sys, hi);
        if (g < hi) break;
        lo = std::max(lo, g);
        hi = 2.0 * hi;
    }
    while (hi - lo > rel_tol * lo) {
        const double mid = 0.5 * (lo + hi);
        const double g = hamiltonian_probe(sys, mid);
        if (g >= mid * (1.0 - 1e-12)) {
            lo = std::max(mid, g);
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------

namespace {

double residual_of(const std::vector<StateSpace>& sys, const ParameterDomain& dom, const BasisSpec& basis,
                   const std::vector<MatrixXd>& storage, double gamma) {
    // Coefficient matrices are compared against the BRL at every (p, q) vertex.
    double worst = -INFINITY;
    for (std::size_t k = 0; k < sys.size(); ++k) {
        const StateSpace& s = sys[k];
        const double rho = dom.grid()[k];
        const MatrixXd X = basis.combine(storage, rho);
        const Eigen::Index n = s.states(), m = s.inputs();
        for (double q : dom.rate_vertices()) {
            const MatrixXd dX = basis.combine_rate(storage, rho, q);
            MatrixXd M(n + m, n + m);
            M << X * s.A + s.A.transpose() * X + dX, X * s.B, s.B.transpose() * X, -MatrixXd::Identity(m, m);
            MatrixXd CD(s.outputs(), n + m);
            CD << s.C, s.D;
            M += CD.transpose() * CD / (gamma * gamma);
            const double scale = std::max(1.0, (X * s.A).norm() + (X * s.B).norm() + dX.norm());
            worst = std::max(worst, max_eigenvalue(M) / scale);
        }
        worst = std::max(worst, -min_eigenvalue(X) / std::max(1.0, X.norm()));
    }
    return worst;
}

/// Smallest gamma certified by a fixed storage, to relative precision 1e-6,
/// or infinity. Residuals must be clearly negative, not just rounding noise.
double certified_gamma(const std::vector<StateSpace>& sys, const ParameterDomain& dom, const BasisSpec& basis,
                       const std::vector<MatrixXd>& storage) {
    constexpr double kStrict = -1e-10;
    auto ok = [&](double g) { return residual_of(sys, dom, basis, storage, g) < kStrict; };
    double hi = 1.0;
    while (!ok(hi)) {
        hi *= 2.0;
        if (hi > 1e12) return INFINITY;
    }
    double lo = hi;
    while (lo > 1e-12 && ok(lo)) lo *= 0.5;
    if (ok(lo)) return lo;
    while (hi - lo > 1e-6 * hi) {
        const double g = 0.5 * (lo + hi);
        (ok(g) ? hi : lo) = g;
    }
    return hi;
}

}  // namespace

double brl_residual(const GriddedSystem& sys, const BasisSpec& basis, const std::vector<MatrixXd>& storage,
                    double gamma, double rate) {
    return residual_of(sys.data(), ParameterDomain(sys.domain().grid(), rate), basis, storage, gamma);
}

namespace {

struct BrlMargin {
    bool usable = false;
    double t = -INFINITY;
    std::vector<MatrixXd> X;
    int iterations = 0;
};

/// Largest t with X >= t I, BRL(g2) <= -t I and X <= bound I, t <= 1.
BrlMargin brl_margin(const std::vector<StateSpace>& sys, const ParameterDomain& dom, const BasisSpec& basis,
                     double g2, double bound, const BrlOptions& options) {
    const Eigen::Index n = sys.front().states();
    LmiProblem prob;
    std::vector<SymmetricVar> Xv;
    for (std::size_t i = 0; i < basis.size(); ++i) Xv.push_back(prob.add_symmetric(n));
    const int t = prob.add_scalar();
    auto tI = [&](Eigen::Index d) { return AffineMatrix::variable(t, MatrixXd::Identity(d, d)); };
    for (std::size_t k = 0; k < sys.size(); ++k) {
        const StateSpace& s = sys[k];
        const double rho = dom.grid()[k];
        const Eigen::Index m = s.inputs(), p = s.outputs();
        AffineMatrix X = AffineMatrix::zero(n, n);
        for (std::size_t i = 0; i < basis.size(); ++i) X += basis.value(i, rho) * Xv[i].expr();
        prob.require_psd(X - tI(n), "X(" + std::to_string(k) + ")", options.storage_margin);
        prob.require_psd(AffineMatrix(bound * MatrixXd::Identity(n, n)) - X, "X bound");
        for (double q : dom.rate_vertices()) {
            AffineMatrix dX = AffineMatrix::zero(n, n);
            for (std::size_t i = 0; i < basis.size(); ++i)
                if (basis.derivative(i, rho) != 0.0 && q != 0.0) dX += (basis.derivative(i, rho) * q) * Xv[i].expr();
            const AffineMatrix XA = X * s.A;
            const AffineMatrix lmi = AffineMatrix::blocks({
                {XA.sym2() + dX, X * s.B, AffineMatrix(s.C.transpose())},
                {(X * s.B).transpose(), AffineMatrix(-MatrixXd::Identity(m, m)), AffineMatrix(s.D.transpose())},
                {AffineMatrix(s.C), AffineMatrix(s.D), AffineMatrix(-g2 * MatrixXd::Identity(p, p))},
            });
            prob.require_nsd(lmi + tI(lmi.rows()), "brl(" + std::to_string(k) + ")", options.lmi_margin);
        }
    }
    prob.require_psd(AffineMatrix(MatrixXd::Ones(1, 1)) - AffineMatrix::variable(t, MatrixXd::Ones(1, 1)), "t cap");
    prob.minimize(AffineMatrix::variable(t, -MatrixXd::Ones(1, 1)));
    const SdpResult res = solve_sdp(prob);
    BrlMargin out;
    out.iterations = res.iterations;
    // A point satisfying every block is a certificate whether or not the
    // solver converged.
    out.usable = res.x.allFinite() && (res.ok() || res.max_violation == 0.0);
    if (!out.usable) return out;
    out.t = res.x(t);
    for (const auto& v : Xv) out.X.push_back(v.value(res.x));
    return out;
}

/// Bisection on gamma over margin problems, re-solving in coordinates where
/// the storage found so far is the identity. Works on systems whose outputs
/// are already normalized; returns gamma in those units and storage in the
/// coordinates of `sys`.
GainCertificate brl_bisect(const std::vector<StateSpace>& sys, const ParameterDomain& dom, const BasisSpec& basis,
                           double lo, const BrlOptions& options) {
    constexpr double kBound = 1e6, kTol = 1e-3, kFeasible = 1e-9;
    const Eigen::Index n = sys.front().states();
    GainCertificate cert;
    std::vector<StateSpace> work = sys;
    MatrixXd Tc = MatrixXd::Identity(n, n);
    double hi = INFINITY;
    std::vector<MatrixXd> X;  // in work coordinates
    auto feasible = [&](double g) {
        const BrlMargin m = brl_margin(work, dom, basis, g * g, kBound, options);
        cert.iterations += m.iterations;
        if (!m.usable || !(m.t > kFeasible)) return false;
        hi = g;
        X = m.X;
        return true;
    };
    for (int round = 0; round < 6; ++round) {
        const double prev = hi;
        double l = lo;
        if (!std::isfinite(hi)) {
            for (double g = 1.01 * lo; !feasible(g); g *= 2.0) {
                l = g;
                if (g > 1e6 * lo) {
                    cert.status = SdpStatus::NumericalFailure;
                    cert.message = "no certified gamma found by bisection";
                    return cert;
                }
            }
        } else if (!feasible(hi)) {
            break;
        }
        while (hi - l > kTol * hi) {
            const double g = 0.5 * (l + hi);
            if (!feasible(g)) l = g;
        }
        if (round > 0 && hi > (1.0 - kTol) * prev) break;
        // New coordinates with the mean storage equal to the identity.
        MatrixXd Xm = MatrixXd::Zero(n, n);
        for (double rho : dom.grid()) Xm += basis.combine(X, rho);
        const Eigen::SelfAdjointEigenSolver<MatrixXd> es(Xm / double(dom.size()));
        if (es.eigenvalues().minCoeff() <= 0.0) break;
        const MatrixXd Tk = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal();
        const MatrixXd Tkinv = Tk.inverse();
        for (auto& s : work) {
            s.A = Tkinv * s.A * Tk;
            s.B = Tkinv * s.B;
            s.C = s.C * Tk;
        }
        for (auto& x : X) x = Tk.transpose() * x * Tk;
        Tc = Tc * Tk;
    }
    cert.status = SdpStatus::Optimal;
    cert.message = "bisection";
    cert.gamma = hi;
    const MatrixXd Tinv = Tc.inverse();
    for (const auto& x : X) cert.storage.push_back(Tinv.transpose() * x * Tinv);
    return cert;
}

}  // namespace

GainCertificate brl_bound(const GriddedSystem& sys, const BrlOptions& options) {
    GainCertificate cert;
    const double rate = options.rate < 0.0 ? sys.domain().rate_bound() : options.rate;
    const ParameterDomain dom(sys.domain().grid(), rate);
    const BasisSpec& basis = options.basis;
    const Eigen::Index n = sys.states();

    // At q = 0 the LMI forces A'X + XA < 0 with X > 0, so any unstable frozen
    // point makes the problem empty.
    for (std::size_t k = 0; k < sys.size(); ++k) {
        if (!sys.at(k).is_hurwitz()) {
            cert.status = SdpStatus::Infeasible;
            cert.message = "frozen system at grid point " + std::to_string(k) + " is not exponentially stable";
            return cert;
        }
    }

    // Balance states jointly over the grid and normalize the output so that
    // the expected gain is O(1).
    // x = Tm x_work, either from the storage hint or diagonal balancing.
    MatrixXd Tm;
    const std::vector<MatrixXd>& guess = options.storage_guess;
    bool have_guess = n > 0 && guess.size() == basis.size();
    for (const auto& g : guess) have_guess = have_guess && g.rows() == n && g.cols() == n;
    if (have_guess) {
        MatrixXd mean = MatrixXd::Zero(n, n);
        for (double rho : dom.grid()) mean += basis.combine(guess, rho);
        mean /= double(dom.size());
        const Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (mean + mean.transpose()));
        if (es.eigenvalues().minCoeff() > 0.0)
            Tm = es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal();
        else
            have_guess = false;
    }
    if (Tm.size() == 0) {
        std::vector<const StateSpace*> ptrs;
        for (const auto& s : sys.data()) ptrs.push_back(&s);
        Tm = balancing_scale(ptrs).asDiagonal();
    }
    const MatrixXd Tminv = Tm.inverse();
    double out_scale = 0.0;
    for (const auto& s : sys.data()) out_scale = std::max(out_scale, sampled_peak(s));
    if (options.mode == BrlMode::Feasibility) out_scale = options.gamma;
    if (!(out_scale > 0.0) || !std::isfinite(out_scale)) out_scale = 1.0;

    std::vector<StateSpace> scaled;
    for (const auto& s : sys.data()) {
        StateSpace b(Tminv * s.A * Tm, Tminv * s.B, s.C * Tm, s.D);
        b.C /= out_scale;
        b.D /= out_scale;
        scaled.push_back(std::move(b));
    }

    // The guess in working coordinates; output scaling leaves the storage unchanged.
    GainCertificate from_guess;
    if (have_guess) {
        std::vector<MatrixXd> w;
        for (const auto& g : guess) w.push_back(Tm.transpose() * g * Tm);
        const double gw = certified_gamma(scaled, dom, basis, w);
        if (std::isfinite(gw)) {
            from_guess.gamma = out_scale * gw;
            from_guess.storage = guess;
            from_guess.status = SdpStatus::Optimal;
            from_guess.message = "storage guess verified";
            from_guess.residual = brl_residual(sys, basis, guess, from_guess.gamma, rate);
        }
    }
    auto better = [&](GainCertificate c) {
        if (from_guess.certified() && (!c.certified() || from_guess.gamma < c.gamma)) {
            if (options.mode == BrlMode::Feasibility && from_guess.gamma > options.gamma) return c;
            from_guess.iterations = c.iterations;
            if (!c.certified()) from_guess.message += " (solver: " + c.message + ")";
            return from_guess;
        }
        return c;
    };

    LmiProblem prob;
    std::vector<SymmetricVar> Xv;
    for (std::size_t i = 0; i < basis.size(); ++i) Xv.push_back(prob.add_symmetric(n));
    const int g2 = options.mode == BrlMode::Minimize ? prob.add_scalar() : -1;
    const double g2_fixed = 1.0;  // gamma / out_scale in feasibility mode

    for (std::size_t k = 0; k < scaled.size(); ++k) {
        const StateSpace& s = scaled[k];
        const double rho = dom.grid()[k];
        const Eigen::Index m = s.inputs(), p = s.outputs();
        AffineMatrix X = AffineMatrix::zero(n, n);
        for (std::size_t i = 0; i < basis.size(); ++i) X += basis.value(i, rho) * Xv[i].expr();
        if (n > 0) prob.require_psd(X, "X(" + std::to_string(k) + ")", options.storage_margin);
        for (double q : dom.rate_vertices()) {
            AffineMatrix dX = AffineMatrix::zero(n, n);
            for (std::size_t i = 0; i < basis.size(); ++i)
                if (basis.derivative(i, rho) != 0.0 && q != 0.0) dX += (basis.derivative(i, rho) * q) * Xv[i].expr();
            const AffineMatrix XA = X * s.A;
            AffineMatrix gblock = g2 >= 0 ? AffineMatrix::variable(g2, -MatrixXd::Identity(p, p))
                                          : AffineMatrix(-g2_fixed * MatrixXd::Identity(p, p));
            const AffineMatrix lmi = AffineMatrix::blocks({
                {XA.sym2() + dX, X * s.B, AffineMatrix(s.C.transpose())},
                {(X * s.B).transpose(), AffineMatrix(-MatrixXd::Identity(m, m)), AffineMatrix(s.D.transpose())},
                {AffineMatrix(s.C), AffineMatrix(s.D), gblock},
            });
            prob.require_nsd(lmi, "brl(" + std::to_string(k) + "," + std::to_string(q) + ")", options.lmi_margin);
        }
    }
    if (g2 >= 0) prob.minimize(AffineMatrix::variable(g2, MatrixXd::Ones(1, 1)));

    const SdpResult res = solve_sdp(prob);
    cert.status = res.status;
    cert.iterations = res.iterations;
    cert.message = res.message;
    if (!res.ok() && from_guess.certified()) {
        cert.message = res.message;
        return better(cert);
    }
    if (!res.ok() && res.status != SdpStatus::Infeasible && options.mode == BrlMode::Minimize && n > 0) {
        // Frozen-point peaks bound the gain from below.
        double lo = 0.0;
        for (const auto& s : scaled) lo = std::max(lo, sampled_peak(s));
        GainCertificate b = brl_bisect(scaled, dom, basis, std::max(lo, 1e-12), options);
        if (b.certified()) {
            b.message = "minimization failed (" + res.message + "); " + b.message;
            b.gamma *= out_scale;
            for (auto& x : b.storage) x = Tminv.transpose() * x * Tminv;
            b.residual = brl_residual(sys, basis, b.storage, b.gamma, rate);
            return b;
        }
    }
    if (!res.ok()) return cert;

    const double g2v = g2 >= 0 ? res.x(g2) : g2_fixed;
    cert.gamma = out_scale * std::sqrt(std::max(g2v, 0.0));
    // Undo the coordinate change: x_work = Tm^-1 x.
    for (const auto& v : Xv) cert.storage.push_back(Tminv.transpose() * v.value(res.x) * Tminv);
    cert.residual = n > 0 ? brl_residual(sys, basis, cert.storage, cert.gamma, rate) : 0.0;
    return better(cert);
}

}  // namespace lpvctl
