#pragma once

#include <random>

#include <Eigen/Eigenvalues>

#include "lpvctl/lpv_core.hpp"

namespace lpvctl::testing {

/// Random stable LTI system with eigenvalues shifted into Re < -0.1.
inline StateSpace random_stable(std::mt19937& rng, int n, int m, int p, bool with_d = true) {
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.1, 1.0);
    auto rnd = [&](int r, int c) {
        MatrixXd out(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) out(i, j) = nd(rng);
        return out;
    };
    MatrixXd A = rnd(n, n);
    if (n > 0) {
        Eigen::EigenSolver<MatrixXd> es(A, false);
        const double shift = es.eigenvalues().real().maxCoeff() + ud(rng);
        A -= shift * MatrixXd::Identity(n, n);
    }
    MatrixXd D = with_d ? MatrixXd(0.5 * rnd(p, m)) : MatrixXd::Zero(p, m);
    return StateSpace(A, rnd(n, m), rnd(p, n), D);
}

inline StateSpace first_order(double gain, double pole) {
    return StateSpace(MatrixXd::Constant(1, 1, -pole), MatrixXd::Ones(1, 1), MatrixXd::Constant(1, 1, gain),
                      MatrixXd::Zero(1, 1));
}

inline StateSpace integrator() {
    return StateSpace(MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Zero(1, 1));
}

/// Second-order lag wn^2 / (s^2 + 2 zeta wn s + wn^2).
inline StateSpace resonant(double wn, double zeta) {
    MatrixXd A(2, 2);
    A << 0, 1, -wn * wn, -2 * zeta * wn;
    MatrixXd B(2, 1);
    B << 0, wn * wn;
    MatrixXd C(1, 2);
    C << 1, 0;
    return StateSpace(A, B, C, MatrixXd::Zero(1, 1));
}

}  // namespace lpvctl::testing
