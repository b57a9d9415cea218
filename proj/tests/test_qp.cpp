#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pwashield/qp.hpp"
#include "pwashield/rng.hpp"

#include <cmath>

#include "oracles.hpp"

using namespace pwashield;

namespace {

QpProblem random_problem(std::uint64_t key, int na, int m, double spread = 2.0) {
    QpProblem p;
    p.u_ref.resize(na);
    for (int d = 0; d < na; ++d) p.u_ref(d) = spread * (2.0 * uniform_draw(key, 0, d) - 1.0);
    p.A.resize(m, na);
    p.lb.resize(m);
    for (int i = 0; i < m; ++i) {
        double norm2 = 0.0;
        for (int d = 0; d < na; ++d) {
            p.A(i, d) = 2.0 * uniform_draw(key, 1 + i, d) - 1.0;
            norm2 += p.A(i, d) * p.A(i, d);
        }
        if (norm2 < 1e-12) p.A(i, 0) = 1.0;
        p.lb(i) = 2.0 * uniform_draw(key, 1 + i, 50) - 1.5;
    }
    return p;
}

}  // namespace

TEST_CASE("unconstrained projection returns u_ref") {
    QpProblem p;
    p.u_ref.resize(2);
    p.u_ref << 1.0, -0.5;
    p.A.resize(0, 2);
    p.lb.resize(0);
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK(s.u == p.u_ref);  // bitwise: no pivots happened
    CHECK(s.objective == 0.0);
    CHECK(s.iterations == 0);
}

TEST_CASE("halfspace projection") {
    QpProblem p;
    p.u_ref.resize(2);
    p.u_ref << 1.0, 1.0;
    p.A.resize(1, 2);
    p.A << -1.0, 0.0;  // -u1 >= 0
    p.lb.resize(1);
    p.lb << 0.0;
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK(s.u(0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.u(1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("contradictory constraints are infeasible with a certificate") {
    QpProblem p;
    p.u_ref = Vector::Zero(1);
    p.A.resize(2, 1);
    p.A << 1.0, -1.0;  // u >= 1 and -u >= 0
    p.lb.resize(2);
    p.lb << 1.0, 0.0;
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Infeasible);
    REQUIRE(s.farkas.size() == 2);
    CHECK((s.farkas.array() >= 0.0).all());
    CHECK((p.A.transpose() * s.farkas).norm() <= 1e-9);
    CHECK(s.farkas.dot(p.lb) > 1e-8);
    CHECK(s.certificate_gap > 1e-8);
}

TEST_CASE("box bounds participate") {
    QpProblem p;
    p.u_ref.resize(2);
    p.u_ref << 10.0, -10.0;
    p.A.resize(0, 2);
    p.lb.resize(0);
    p.box_lo = Vector::Constant(2, -5.0);
    p.box_hi = Vector::Constant(2, 5.0);
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK(s.u(0) == doctest::Approx(5.0));
    CHECK(s.u(1) == doctest::Approx(-5.0));

    p.box_lo(0) = 6.0;  // lower above upper
    CHECK_THROWS_AS(solve(p), std::invalid_argument);
}

TEST_CASE("random problems match subset enumeration") {
    int optimal = 0;
    int infeasible = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int na = 1 + trial % 3;
        const int m = 1 + trial % 6;
        const QpProblem p = random_problem(0xAB5 + trial, na, m);
        const QpSolution s = solve(p);
        const auto ref = oracles::subset_qp(p.A, p.lb, p.u_ref);
        if (ref.feasible) {
            REQUIRE_MESSAGE(s.status == QpStatus::Optimal, "trial ", trial);
            ++optimal;
            CHECK(std::fabs(s.objective - ref.objective) <=
                  1e-9 * std::max(1.0, std::fabs(ref.objective)));
            CHECK((s.u - ref.u).norm() <= 1e-7 * std::max(1.0, ref.u.norm()));
            CHECK(s.kkt_residual <= 1e-8);
            CHECK(s.max_violation <= 1e-8);
        } else {
            REQUIRE_MESSAGE(s.status == QpStatus::Infeasible, "trial ", trial);
            ++infeasible;
            // certificate check
            CHECK((s.farkas.array() >= -1e-12).all());
            CHECK((p.A.transpose() * s.farkas).norm() <= 1e-7 * std::max(1.0, s.farkas.norm()));
            CHECK(s.certificate_gap > 1e-8);
        }
    }
    // both branches exercised
    CHECK(optimal > 200);
    CHECK(infeasible > 50);
}

TEST_CASE("projection variational inequality") {
    for (int trial = 0; trial < 100; ++trial) {
        const int na = 2 + trial % 2;
        const QpProblem p = random_problem(0xF00D + trial, na, 4);
        const QpSolution s = solve(p);
        if (s.status != QpStatus::Optimal) continue;
        // (u_ref - u*) . (v - u*) <= tol for feasible v
        int found = 0;
        for (int probe = 0; found < 200 && probe < 4000; ++probe) {
            Vector v(na);
            for (int d = 0; d < na; ++d) {
                v(d) = 6.0 * uniform_draw(0xBEEF + trial, probe, d) - 3.0;
            }
            if (((p.A * v - p.lb).array() < 0.0).any()) continue;
            ++found;
            CHECK((p.u_ref - s.u).dot(v - s.u) <= 1e-7);
        }
    }
}

TEST_CASE("objective equals squared distance") {
    for (int trial = 0; trial < 200; ++trial) {
        const QpProblem p = random_problem(0x0B7 + trial, 2, 4);
        const QpSolution s = solve(p);
        if (s.status != QpStatus::Optimal) continue;
        const double direct = (s.u - p.u_ref).squaredNorm();
        CHECK(std::fabs(s.objective - direct) <= 1e-12 * std::max(1.0, direct));
    }
}

TEST_CASE("determinism: identical inputs give bitwise identical outputs") {
    for (int trial = 0; trial < 50; ++trial) {
        const QpProblem p = random_problem(0xD17E + trial, 3, 6);
        const QpSolution a = solve(p);
        const QpSolution b = solve(p);
        REQUIRE(a.status == b.status);
        if (a.status == QpStatus::Optimal) {
            CHECK(a.u == b.u);
            CHECK(a.objective == b.objective);
            CHECK(a.iterations == b.iterations);
        }
    }
}

TEST_CASE("zero rows behave") {
    QpProblem p;
    p.u_ref = Vector::Zero(2);
    p.A = Matrix::Zero(1, 2);  // 0 . u >= rhs
    p.lb.resize(1);

    p.lb << -1.0;  // vacuous
    CHECK(solve(p).status == QpStatus::Optimal);

    p.lb << 1.0;  // impossible
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Infeasible);
    CHECK(s.certificate_gap > 1e-8);
}

TEST_CASE("nearly parallel constraints stay solvable") {
    QpProblem p;
    p.u_ref.resize(2);
    p.u_ref << -1.0, -1.0;
    p.A.resize(2, 2);
    p.A << 1.0, 0.0, 1.0, 1e-13;
    p.lb.resize(2);
    p.lb << 0.0, 0.0;
    const QpSolution s = solve(p);
    REQUIRE(s.status == QpStatus::Optimal);
    CHECK(s.max_violation <= 1e-8);
}

TEST_CASE("feasibility_check agrees with a grid probe and reports margins") {
    // contradictory pair
    {
        QpProblem p;
        p.u_ref = Vector::Zero(1);
        p.A.resize(2, 1);
        p.A << 1.0, -1.0;
        p.lb.resize(2);
        p.lb << 1.0, 0.0;
        const auto rep = feasibility_check(p);
        CHECK_FALSE(rep.feasible);
        CHECK(rep.margin == doctest::Approx(-0.5).epsilon(1e-6));  // meet in the middle
    }
    // single halfspace: unbounded slack
    {
        QpProblem p;
        p.u_ref = Vector::Zero(2);
        p.A.resize(1, 2);
        p.A << 1.0, 0.0;
        p.lb.resize(1);
        p.lb << 3.0;
        const auto rep = feasibility_check(p);
        CHECK(rep.feasible);
        CHECK(std::isinf(rep.margin));
    }
    // box-bounded corridor: margin is half the gap
    {
        QpProblem p;
        p.u_ref = Vector::Zero(1);
        p.A.resize(2, 1);
        p.A << 1.0, -1.0;
        p.lb.resize(2);
        p.lb << -1.0, -1.0;  // -1 <= u <= 1
        const auto rep = feasibility_check(p);
        CHECK(rep.feasible);
        CHECK(rep.margin == doctest::Approx(1.0).epsilon(1e-6));
    }
    // random systems vs the grid oracle
    for (int trial = 0; trial < 200; ++trial) {
        const QpProblem p = random_problem(0x5EED + trial, 2, 4);
        const auto rep = feasibility_check(p);
        const bool oracle = oracles::subset_qp(p.A, p.lb, p.u_ref).feasible;
        CHECK_MESSAGE(rep.feasible == oracle, "trial ", trial);
        CHECK((rep.margin > 0) == rep.feasible);
    }
}

TEST_CASE("wider problems: feasible-by-construction instances solve cleanly") {
    for (int trial = 0; trial < 60; ++trial) {
        const int na = (trial % 3 == 0) ? 8 : (trial % 3 == 1) ? 16 : 32;
        const int m = 2 * na;
        const std::uint64_t key = 0x51DE + trial;
        Vector anchor(na);
        for (int d = 0; d < na; ++d) anchor(d) = 2.0 * uniform_draw(key, 0, d) - 1.0;
        QpProblem p;
        p.u_ref.resize(na);
        for (int d = 0; d < na; ++d) p.u_ref(d) = 4.0 * uniform_draw(key, 1, d) - 2.0;
        p.A.resize(m, na);
        p.lb.resize(m);
        for (int i = 0; i < m; ++i) {
            for (int d = 0; d < na; ++d) p.A(i, d) = 2.0 * uniform_draw(key, 2 + i, d) - 1.0;
            // slack >= 0 at the anchor keeps the instance feasible
            p.lb(i) = p.A.row(i).dot(anchor) - uniform_draw(key, 2 + i, 77);
        }
        const QpSolution s = solve(p);
        REQUIRE(s.status == QpStatus::Optimal);
        CHECK(s.max_violation <= 1e-8);
        CHECK(s.kkt_residual <= 1e-8);
        CHECK(s.objective <= (anchor - p.u_ref).squaredNorm() + 1e-9);
        // variational inequality along the segment to the known point
        for (double lambda : {0.25, 0.5, 1.0}) {
            const Vector v = s.u + lambda * (anchor - s.u);
            CHECK((p.u_ref - s.u).dot(v - s.u) <= 1e-7);
        }
    }
}

TEST_CASE("iteration cap reports MaxIterations") {
    QpProblem p = random_problem(0xCAFE, 3, 8);
    QpTolerances tol;
    tol.max_iterations = 1;
    const QpSolution s = solve(p, tol);
    // either it solved in one pivot or it hit the cap
    CHECK((s.status == QpStatus::Optimal || s.status == QpStatus::MaxIterations));
}
