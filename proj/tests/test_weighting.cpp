#include <doctest.h>

#include <cmath>
#include <complex>
#include <random>

#include "lpvctl/weighting.hpp"
#include "test_support.hpp"

using namespace lpvctl;
using namespace lpvctl::testing;
using cd = std::complex<double>;

namespace {

constexpr double kDeg = M_PI / 180.0;
constexpr double kTauMax = 6.3e-6;

// deg/uNm -> rad/(N m)
double deg_per_unm(double v) { return v * kDeg * 1e6; }

WeightSchedule maglev_schedule() {
    WeightSchedule s;
    s.pointing = {1e-3, 0.05, 2.0, 10.0, deg_per_unm(1.0 / (0.75 * 6.3)), 0.05};
    s.slewing = {0.1, 0.025, 2.0, 10.0, deg_per_unm(1.0 / (0.075 * 6.3)), 0.05};
    s.rho_p = 0.01 * kDeg;
    s.rho_a = 180.0 * kDeg;
    return s;
}

StateSpace double_integrator(double J) {
    MatrixXd A(2, 2);
    A << 0, 1, 0, 0;
    MatrixXd B(2, 1);
    B << 0, 1.0 / J;
    MatrixXd C(1, 2);
    C << 1, 0;
    return StateSpace(A, B, C, MatrixXd::Zero(1, 1));
}

cd tf(const StateSpace& s, double w) { return eval_tf(s, {0.0, w})(0, 0); }

}  // namespace

TEST_CASE("tanh_schedule closed-form values") {
    const double rp = 0.0, ra = M_PI;
    const double beta = 0.5 * (ra - rp) + rp;
    CHECK(tanh_schedule(1.0, 3.0, beta, rp, ra, 1.0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(tanh_schedule(4.0, 4.0, 0.3, rp, ra, 1.0) == 4.0);
    CHECK(tanh_schedule(4.0, 4.0, 2.9, rp, ra, 1.0) == 4.0);
    CHECK(tanh_schedule(1.0, 3.0, beta + 1.0, rp, ra, 1.0) == doctest::Approx(2.0 + std::tanh(1.0)).epsilon(1e-14));
    CHECK(2.0 + std::tanh(1.0) == doctest::Approx(2.76159).epsilon(1e-5));
    // clamped outside the domain
    CHECK(tanh_schedule(1.0, 3.0, -5.0, rp, ra, 1.0) == tanh_schedule(1.0, 3.0, rp, rp, ra, 1.0));
    CHECK(tanh_schedule(1.0, 3.0, 9.0, rp, ra, 1.0) == tanh_schedule(1.0, 3.0, ra, rp, ra, 1.0));
}

TEST_CASE("weight schedule: endpoints, midpoint and monotonicity") {
    const WeightSchedule s = maglev_schedule();
    const double beta = 0.5 * (s.rho_a - s.rho_p) + s.rho_p;
    const ScheduledValues mid = s.at(beta);
    CHECK(mid.eps == doctest::Approx(std::sqrt(s.pointing.eps * s.slewing.eps)).epsilon(1e-12));
    CHECK(mid.omega_e == doctest::Approx(0.5 * (s.pointing.omega_e + s.slewing.omega_e)).epsilon(1e-12));
    CHECK(mid.R_eu == doctest::Approx(0.5 * (s.pointing.R_eu + s.slewing.R_eu)).epsilon(1e-12));
    CHECK(mid.R_du == doctest::Approx(s.pointing.R_du).epsilon(1e-12));
    CHECK(mid.R_de() == doctest::Approx(mid.R_du / mid.R_eu));

    auto within = [](double v, double a, double b) { return v >= std::min(a, b) && v <= std::max(a, b); };
    for (double rho : {s.rho_p, s.rho_a}) {
        const ScheduledValues v = s.at(rho);
        CHECK(within(v.eps, s.pointing.eps, s.slewing.eps));
        CHECK(within(v.omega_e, s.pointing.omega_e, s.slewing.omega_e));
        CHECK(within(v.R_eu, s.pointing.R_eu, s.slewing.R_eu));
    }

    ScheduledValues prev = s.at(s.rho_p);
    for (int i = 1; i <= 1000; ++i) {
        const double rho = s.rho_p + (s.rho_a - s.rho_p) * i / 1000.0;
        const ScheduledValues v = s.at(rho);
        CHECK(v.eps >= prev.eps);
        CHECK(v.omega_e <= prev.omega_e);
        CHECK(v.R_eu >= prev.R_eu);
        CHECK(v.R_du == doctest::Approx(prev.R_du));
        prev = v;
    }
}

TEST_CASE("unit conversion of R_eu") {
    const WeightSchedule s = maglev_schedule();
    // one degree of error commands 75 % of tau_max
    CHECK(1.0 * kDeg / s.pointing.R_eu == doctest::Approx(0.75 * kTauMax).epsilon(1e-12));
    CHECK(s.slewing.R_eu / s.pointing.R_eu == doctest::Approx(10.0));
    CHECK(s.pointing.R_eu == doctest::Approx(3693.8).epsilon(1e-4));
}

TEST_CASE("W_e and W_u asymptotes") {
    ScheduledValues p{1e-3, 0.05, 2.0, 10.0, 1.0, 0.05};
    const StateSpace We = realize_We(p);
    CHECK(We.states() == 1);
    CHECK(std::abs(tf(We, 0.0)) == doctest::Approx(1000.0).epsilon(1e-12));
    CHECK(std::abs(tf(We, 1e9)) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(-We.A(0, 0) == doctest::Approx(2.5e-5).epsilon(1e-12));

    ScheduledValues a{0.1, 0.025, 2.0, 10.0, 1.0, 0.05};
    const StateSpace Wea = realize_We(a);
    CHECK(std::abs(tf(Wea, 0.0)) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(tf(Wea, 1e9)) == doctest::Approx(0.5).epsilon(1e-6));

    const StateSpace Wu = realize_Wu(p);
    CHECK(Wu.states() == 1);
    CHECK(std::abs(tf(Wu, 0.0)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(tf(Wu, 10.0)) == doctest::Approx(std::abs(cd(1, 1)) / std::abs(cd(1, 0.01))).epsilon(1e-12));
    CHECK(std::abs(tf(Wu, 10.0)) == doctest::Approx(1.4141).epsilon(1e-4));
    CHECK(std::abs(tf(Wu, 1e12)) == doctest::Approx(100.0).epsilon(1e-6));
}

TEST_CASE("design point and schedule validation name the field") {
    DesignPoint d{2.0, 0.05, 2.0, 10.0, 1.0, 0.05};
    try {
        d.validate("weights.pointing");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "weights.pointing.eps");
    }
    DesignPoint ok{1e-3, 0.05, 2.0, 10.0, 1.0, 0.05};
    CHECK_NOTHROW(ok.validate());
    ok.R_du = 1.5;
    CHECK_THROWS_AS(ok.validate(), ValidationError);

    WeightSchedule s = maglev_schedule();
    s.rho_a = s.rho_p;
    try {
        s.validate();
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "domain.rho_p");
    }
}

TEST_CASE("generalized plant: K = 0 and dimensions") {
    const WeightSchedule s = maglev_schedule();
    const ParameterDomain dom = ParameterDomain::uniform(s.rho_p, s.rho_a, 20, 0.1 * kDeg);
    const StateSpace P = double_integrator(0.006);
    const GeneralizedPlant gp = build_generalized_plant(P, s, dom, kTauMax);
    REQUIRE(gp.sys.size() == 20);
    CHECK(gp.sys.inputs() == 3);
    CHECK(gp.sys.outputs() == 3);
    CHECK(gp.sys.states() == 4);

    const StateSpace K0(MatrixXd::Zero(0, 0), MatrixXd::Zero(0, 1), MatrixXd::Zero(1, 0), MatrixXd::Zero(1, 1));
    for (std::size_t k = 0; k < gp.sys.size(); k += 7) {
        const StateSpace cl = lft_lower(gp.sys.at(k), K0);
        const ScheduledValues v = s.at(dom.grid()[k]);
        const StateSpace We = realize_We(v);
        for (double w : {1e-4, 0.03, 2.0, 500.0}) {
            const MatrixXc g = eval_tf(cl, {0.0, w});
            CHECK(std::abs(g(0, 0) - tf(We, w)) <= 1e-9 * std::abs(tf(We, w)));
            CHECK(std::abs(g(1, 1)) == 0.0);
            CHECK(std::abs(g(1, 0)) == 0.0);
        }
    }
}

TEST_CASE("generalized plant reproduces the weighted four-block map") {
    const WeightSchedule s = maglev_schedule();
    const ParameterDomain dom = ParameterDomain::uniform(s.rho_p, s.rho_a, 5, 0.0);
    const StateSpace P = double_integrator(0.006);
    const GeneralizedPlant gp = build_generalized_plant(P, s, dom, kTauMax);

    // Lead compensator that stabilizes 1/(J s^2): K = kp (s + a)/(s + b).
    const double a = 0.02, b = 0.5, kp = 2e-4;
    const StateSpace K(MatrixXd::Constant(1, 1, -b), MatrixXd::Ones(1, 1), MatrixXd::Constant(1, 1, kp * (a - b)),
                       MatrixXd::Constant(1, 1, kp));

    std::mt19937 rng(11);
    std::uniform_real_distribution<double> lw(-4.0, 2.0);
    for (std::size_t k = 0; k < gp.sys.size(); ++k) {
        const ScheduledValues v = s.at(dom.grid()[k]);
        const StateSpace cl = lft_lower(gp.sys.at(k), K);
        const StateSpace We = realize_We(v), Wu = realize_Wu(v);
        for (int i = 0; i < 10; ++i) {
            const double w = std::pow(10.0, lw(rng));
            const cd p = tf(P, w), kk = tf(K, w), we = tf(We, w), wu = tf(Wu, w);
            const cd S = 1.0 / (1.0 + p * kk);
            MatrixXc ref(2, 2);
            ref(0, 0) = we / v.R_eu * S * v.R_eu;
            ref(0, 1) = -we / v.R_eu * S * p * v.R_du;
            ref(1, 0) = wu * kk * S * v.R_eu;
            ref(1, 1) = -wu * kk * S * p * v.R_du;
            const MatrixXc g = eval_tf(cl, {0.0, w});
            // small blocks are limited by round-off in the resolvent of the whole map
            const double floor = 1e-12 * ref.cwiseAbs().maxCoeff();
            for (int r = 0; r < 2; ++r)
                for (int c = 0; c < 2; ++c)
                    CHECK(std::abs(g(r, c) - ref(r, c)) <= 1e-8 * std::abs(ref(r, c)) + floor);
        }
    }
}

TEST_CASE("generalized plant regularity checks") {
    const WeightSchedule s = maglev_schedule();
    const ParameterDomain dom = ParameterDomain::uniform(s.rho_p, s.rho_a, 3, 0.0);
    StateSpace P = double_integrator(0.006);
    P.D(0, 0) = 1.0;
    CHECK_THROWS_AS(build_generalized_plant(P, s, dom, kTauMax), ValidationError);

    // z = x, y = x + w with no u feedthrough -> D12 rank deficient
    const StateSpace g(MatrixXd::Constant(1, 1, -1.0), MatrixXd::Ones(1, 2), MatrixXd::Ones(2, 1), MatrixXd::Zero(2, 2));
    MatrixXd D = MatrixXd::Zero(2, 2);
    D(1, 0) = 1.0;
    const StateSpace g2(g.A, g.B, g.C, D);
    try {
        make_generalized_plant(GriddedSystem::lti(g2), 1, 1, 1, 1);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(e.field() == "generalized_plant.D12");
    }
}

TEST_CASE("weights are stable at every grid point") {
    const WeightSchedule s = maglev_schedule();
    const ParameterDomain dom = ParameterDomain::uniform(s.rho_p, s.rho_a, 20, 0.0);
    for (double rho : dom.grid()) {
        CHECK(realize_We(s.at(rho)).is_hurwitz());
        CHECK(realize_Wu(s.at(rho)).is_hurwitz());
    }
}
