#include <doctest.h>

#include "lpvctl/lmi.hpp"

using namespace lpvctl;

TEST_CASE("scalar SDP: minimize t subject to t >= 1") {
    LmiProblem p;
    const int t = p.add_scalar();
    p.require_psd(AffineMatrix::variable(t, MatrixXd::Ones(1, 1)) - MatrixXd::Ones(1, 1));
    p.minimize(AffineMatrix::variable(t, MatrixXd::Ones(1, 1)));
    const SdpResult r = solve_sdp(p);
    REQUIRE(r.ok());
    CHECK(r.x(t) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("X >= 0 together with -X >= eps I is infeasible") {
    LmiProblem p;
    const SymmetricVar X = p.add_symmetric(2);
    p.require_psd(X.expr());
    p.require_psd(-X.expr(), "neg", 1e-3);
    const SdpResult r = solve_sdp(p);
    CHECK(r.status == SdpStatus::Infeasible);
}

TEST_CASE("Lyapunov inequality for A = -I is feasible") {
    LmiProblem p;
    const SymmetricVar X = p.add_symmetric(3);
    const MatrixXd A = -MatrixXd::Identity(3, 3);
    p.require_psd(X.expr(), "X", 1e-6);
    p.require_nsd(A.transpose() * X.expr() + X.expr() * A, "lyap", 1e-6);
    const SdpResult r = solve_sdp(p);
    REQUIRE(r.ok());
    const MatrixXd Xv = X.value(r.x);
    CHECK(min_eigenvalue(Xv) > 0.0);
    CHECK(max_eigenvalue(A.transpose() * Xv + Xv * A) < 0.0);
}

TEST_CASE("minimum eigenvalue maximization") {
    // maximize t s.t. [[2,1],[1,2]] - t I >= 0  ->  t = 1
    LmiProblem p;
    const int t = p.add_scalar();
    MatrixXd C(2, 2);
    C << 2, 1, 1, 2;
    p.require_psd(AffineMatrix(C) - AffineMatrix::variable(t, MatrixXd::Identity(2, 2)));
    p.minimize(AffineMatrix::variable(t, -MatrixXd::Ones(1, 1)));
    const SdpResult r = solve_sdp(p);
    REQUIRE(r.ok());
    CHECK(r.x(t) == doctest::Approx(1.0).epsilon(1e-7));
}
