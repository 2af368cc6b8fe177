#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "lpvctl/lpv_core.hpp"
#include "test_support.hpp"

using namespace lpvctl;
using namespace lpvctl::testing;

namespace {

using cd = std::complex<double>;

/// Transfer matrix by direct resolvent, C (sI - A)^-1 B + D.
MatrixXc resolvent_tf(const StateSpace& s, cd z) {
    const Eigen::Index n = s.states();
    const MatrixXc M = z * MatrixXc::Identity(n, n) - s.A.cast<cd>();
    return s.C.cast<cd>() * M.partialPivLu().solve(s.B.cast<cd>()) + s.D.cast<cd>();
}

double rel_err(const MatrixXc& a, const MatrixXc& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

const std::vector<cd> kPoints = {cd(0.0, 0.3), cd(0.0, 1.0), cd(0.2, 2.5), cd(1.0, -0.7)};

}  // namespace

TEST_CASE("domain validation") {
    CHECK_THROWS_AS(ParameterDomain(std::vector<double>{}, 0.0), ValidationError);
    CHECK_THROWS_AS(ParameterDomain({1.0, 1.0}, 0.0), ValidationError);
    CHECK_THROWS_AS(ParameterDomain({0.0, 1.0}, -1.0), ValidationError);
    try {
        ParameterDomain::uniform(2.0, 1.0, 3, 0.0);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "domain.rho_min");
    }
    const ParameterDomain d = ParameterDomain::uniform(1.0, 3.0, 5, 0.2);
    REQUIRE(d.size() == 5);
    CHECK(d.grid()[2] == doctest::Approx(2.0));
    CHECK(d.clamp(-1.0) == 1.0);
    CHECK(d.clamp(7.0) == 3.0);
    CHECK(d.rate_vertices().size() == 2);
    CHECK(ParameterDomain::lti().rate_vertices().size() == 1);
}

TEST_CASE("state-space dimensions are checked") {
    CHECK_THROWS_AS(StateSpace(MatrixXd::Zero(2, 2), MatrixXd::Zero(1, 1), MatrixXd::Zero(1, 2), MatrixXd::Zero(1, 1)),
                    ValidationError);
    CHECK_THROWS_AS(series(first_order(1, 1), StateSpace::gain(MatrixXd::Zero(2, 2))), ValidationError);
    const ParameterDomain dom = ParameterDomain::uniform(0, 1, 2, 0);
    CHECK_THROWS_AS(GriddedSystem(dom, {first_order(1, 1)}), ValidationError);
    CHECK_THROWS_AS(GriddedSystem(dom, {first_order(1, 1), resonant(1, 0.5)}), ValidationError);
}

TEST_CASE("eval_tf matches the resolvent") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const StateSpace s = random_stable(rng, 4, 2, 3);
        for (cd z : kPoints) CHECK(rel_err(eval_tf(s, z), resolvent_tf(s, z)) < 1e-10);
    }
    // 1 / (s + 2) at s = 2i
    CHECK(std::abs(eval_tf(first_order(1, 2), cd(0, 2))(0, 0) - 1.0 / cd(2, 2)) < 1e-14);
}

TEST_CASE("series, parallel and append compose transfer matrices") {
    std::mt19937 rng(11);
    const StateSpace a = random_stable(rng, 3, 2, 2);
    const StateSpace b = random_stable(rng, 2, 2, 1);
    const StateSpace c = random_stable(rng, 2, 2, 2);
    for (cd z : kPoints) {
        CHECK(rel_err(eval_tf(series(a, b), z), resolvent_tf(b, z) * resolvent_tf(a, z)) < 1e-10);
        CHECK(rel_err(eval_tf(parallel_sum(a, c), z), resolvent_tf(a, z) + resolvent_tf(c, z)) < 1e-10);
        MatrixXc blk = MatrixXc::Zero(3, 4);
        blk.topLeftCorner(2, 2) = resolvent_tf(a, z);
        blk.bottomRightCorner(1, 2) = resolvent_tf(b, z);
        CHECK(rel_err(eval_tf(append(a, b), z), blk) < 1e-10);
    }
}

TEST_CASE("feedback matches G (I + K G)^-1") {
    std::mt19937 rng(3);
    const StateSpace G = random_stable(rng, 3, 2, 2);
    const StateSpace K = random_stable(rng, 2, 2, 2);
    const StateSpace cl = feedback(G, K);
    const StateSpace clp = feedback(G, K, +1);
    const MatrixXc I = MatrixXc::Identity(2, 2);
    for (cd z : kPoints) {
        const MatrixXc g = resolvent_tf(G, z), k = resolvent_tf(K, z);
        CHECK(rel_err(eval_tf(cl, z), g * (I + k * g).inverse()) < 1e-9);
        CHECK(rel_err(eval_tf(clp, z), g * (I - k * g).inverse()) < 1e-9);
    }
    // unit feedback around an integrator: 1/(s+1)
    const StateSpace one = feedback(integrator(), StateSpace::gain(MatrixXd::Ones(1, 1)));
    CHECK(one.is_hurwitz());
    CHECK(std::abs(eval_tf(one, cd(0, 1))(0, 0) - 1.0 / cd(1, 1)) < 1e-14);
}

TEST_CASE("lower LFT matches the block formula") {
    std::mt19937 rng(5);
    // 2 exogenous inputs + 1 control, 2 performance outputs + 1 measurement
    const StateSpace G = random_stable(rng, 4, 3, 3);
    const StateSpace K = random_stable(rng, 2, 1, 1);
    const StateSpace cl = lft_lower(G, K);
    CHECK(cl.inputs() == 2);
    CHECK(cl.outputs() == 2);
    CHECK(cl.states() == 6);
    for (cd z : kPoints) {
        const MatrixXc g = resolvent_tf(G, z), k = resolvent_tf(K, z);
        const MatrixXc g11 = g.topLeftCorner(2, 2), g12 = g.topRightCorner(2, 1);
        const MatrixXc g21 = g.bottomLeftCorner(1, 2), g22 = g.bottomRightCorner(1, 1);
        const MatrixXc ref = g11 + g12 * k * (MatrixXc::Identity(1, 1) - g22 * k).inverse() * g21;
        CHECK(rel_err(eval_tf(cl, z), ref) < 1e-9);
    }
    CHECK_THROWS_AS(lft_lower(K, G), ValidationError);
}

TEST_CASE("gridded interconnections act pointwise and broadcast LTI operands") {
    const ParameterDomain dom = ParameterDomain::uniform(1.0, 3.0, 3, 0.0);
    std::vector<StateSpace> pts;
    for (double p : dom.grid()) pts.push_back(first_order(1.0, p));
    const GriddedSystem P(dom, pts);
    const GriddedSystem K = GriddedSystem::lti(StateSpace::gain(MatrixXd::Constant(1, 1, 2.0)));
    const GriddedSystem cl = feedback(P, K);
    REQUIRE(cl.size() == 3);
    CHECK(cl.domain() == dom);
    for (std::size_t k = 0; k < 3; ++k) {
        // 1/(s+p) with gain 2 in feedback: 1/(s + p + 2)
        const double pole = dom.grid()[k] + 2.0;
        CHECK(std::abs(eval_tf(cl.at(k), cd(0, 1))(0, 0) - 1.0 / cd(pole, 1)) < 1e-13);
    }
    const GriddedSystem s = series(P, K);
    CHECK(std::abs(eval_tf(s.at(2), cd(0, 0))(0, 0) - 2.0 / 3.0) < 1e-13);
    const GriddedSystem other(ParameterDomain::uniform(0.0, 1.0, 3, 0.0), pts);
    CHECK_THROWS_AS(series(P, other), ValidationError);
}

TEST_CASE("eval_at interpolates entrywise and clamps outside the grid") {
    const ParameterDomain dom({0.0, 1.0, 3.0}, 0.0);
    const GriddedSystem g(dom, {first_order(1.0, 1.0), first_order(3.0, 2.0), first_order(7.0, 6.0)});
    const StateSpace mid = eval_at(g, 2.0);
    CHECK(mid.A(0, 0) == doctest::Approx(-4.0));
    CHECK(mid.C(0, 0) == doctest::Approx(5.0));
    CHECK(eval_at(g, 1.0).A(0, 0) == doctest::Approx(-2.0));
    CHECK(eval_at(g, -5.0).A(0, 0) == doctest::Approx(-1.0));
    CHECK(eval_at(g, 9.0).C(0, 0) == doctest::Approx(7.0));
    // continuity across a grid point
    const double eps = 1e-9;
    CHECK(std::abs(eval_at(g, 1.0 - eps).A(0, 0) - eval_at(g, 1.0 + eps).A(0, 0)) < 1e-8);
}

TEST_CASE("frequency response flags poles on the axis") {
    const std::vector<FrequencySample> fr = freq_response(integrator(), {0.0, 1.0});
    REQUIRE(fr.size() == 2);
    CHECK_FALSE(fr[0].finite);
    CHECK(fr[1].finite);
    CHECK(std::abs(fr[1].value(0, 0) - 1.0 / cd(0, 1)) < 1e-14);
    const std::vector<double> w = logspace(-2, 2, 5);
    REQUIRE(w.size() == 5);
    CHECK(w.front() == doctest::Approx(0.01));
    CHECK(w[2] == doctest::Approx(1.0));
    CHECK(w.back() == doctest::Approx(100.0));
}

TEST_CASE("state balancing preserves the transfer matrix") {
    MatrixXd A(2, 2);
    A << -1.0, 1e6, 0.0, -2.0;
    MatrixXd B(2, 1);
    B << 0.0, 1e-3;
    MatrixXd C(1, 2);
    C << 1e-4, 0.0;
    const StateSpace s(A, B, C, MatrixXd::Zero(1, 1));
    const VectorXd t = balancing_scale({&s});
    REQUIRE(t.size() == 2);
    CHECK((t.array() > 0.0).all());
    const StateSpace b = apply_state_scale(s, t);
    CHECK(b.A.cwiseAbs().maxCoeff() < 1e4);
    for (cd z : kPoints) CHECK(rel_err(eval_tf(b, z), resolvent_tf(s, z)) < 1e-9);
}

TEST_CASE("max adjacent jump is relative to the largest entry") {
    const ParameterDomain dom = ParameterDomain::uniform(0.0, 1.0, 2, 0.0);
    const GriddedSystem g(dom, {StateSpace::gain(MatrixXd::Constant(1, 1, 2.0)),
                                StateSpace::gain(MatrixXd::Constant(1, 1, 4.0))});
    CHECK(g.max_adjacent_jump() == doctest::Approx(0.5));
    CHECK(GriddedSystem::lti(first_order(1, 1)).max_adjacent_jump() == 0.0);
}
