#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "pwashield/bench.hpp"
#include "pwashield/scenario.hpp"

#include <cmath>
#include <cstdio>

using namespace pwashield;

namespace {

Vector vec3(double a, double b, double c) {
    Vector v(3);
    v << a, b, c;
    return v;
}

// Count obstacles crossed by the waypoint polyline, sampling densely.
int reference_intersections(const Scenario& sc) {
    const Matrix& w = sc.policy.tracking.waypoints;
    std::vector<bool> hit(static_cast<size_t>(sc.barrier.polyhedron_count()), false);
    for (Eigen::Index s = 0; s + 1 < w.rows(); ++s) {
        for (int t = 0; t <= 4000; ++t) {
            const double f = static_cast<double>(t) / 4000.0;
            Vector x = vec3(w(s, 0) + f * (w(s + 1, 0) - w(s, 0)),
                            w(s, 1) + f * (w(s + 1, 1) - w(s, 1)), 0.0);
            for (int i = 0; i < sc.barrier.polyhedron_count(); ++i) {
                if (sc.barrier.polyhedron(i).contains(x)) hit[static_cast<size_t>(i)] = true;
            }
        }
    }
    int count = 0;
    for (bool h : hit) count += h ? 1 : 0;
    return count;
}

}  // namespace

TEST_CASE("corridor scenario matches the analytic two-halfspace form") {
    const Scenario sc = corridor_scenario(0.03, 0.1, 20);
    CHECK_NOTHROW(sc.validate());
    REQUIRE(sc.barrier.polyhedron_count() == 2);
    CHECK(sc.barrier.polyhedron(0).C()(0, 0) == 0.0);
    CHECK(sc.barrier.polyhedron(0).C()(0, 1) == -1.0);
    CHECK(sc.barrier.polyhedron(0).C()(0, 2) == 0.0);
    CHECK(sc.barrier.polyhedron(0).b()(0) == -0.5);
    CHECK(sc.barrier.polyhedron(1).C()(0, 1) == 1.0);
    CHECK(sc.barrier.polyhedron(1).b()(0) == -0.5);
    CHECK(sc.barrier.evaluate(vec3(0, 0, 0)) == doctest::Approx(0.5));
    CHECK(sc.dt == 0.1);
    CHECK(sc.horizon == 20);

    // base policy
    const BasePolicy policy = make_policy(sc.policy);
    const Vector u = policy(vec3(1.0, -0.2, 0.3), 0);
    CHECK(u(0) == doctest::Approx(0.2));
    CHECK(u(1) == doctest::Approx(1.0));
    CHECK(u(2) == doctest::Approx(-0.3));
}

TEST_CASE("degenerate corridor noise reduces tightening to zero") {
    const Scenario sc = corridor_scenario(0.0, 0.1, 20);
    const auto tc = tightened_bounds(sc.barrier, sc.x0, sc.filter_noise, sc.config);
    CHECK(tc.q[0][0] == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(tc.q[1][0] == doctest::Approx(-0.5).epsilon(1e-14));
}

TEST_CASE("corridor scenario round-trips through json") {
    const Scenario sc = corridor_scenario(0.03, 0.1, 20);
    const std::string path = "test_corridor_scenario.json";
    sc.save(path);
    const Scenario back = Scenario::load(path);
    CHECK(back.to_json() == sc.to_json());
    std::remove(path.c_str());
}

TEST_CASE("data-driven corridor scenario") {
    DataDrivenParams params;
    params.n = 254;
    params.gamma_tilde = 0.2;
    params.dataset_seed = 9001;
    const Scenario sc = corridor_scenario_data_driven(0.03, 0.9, 20, params);
    CHECK_NOTHROW(sc.validate());
    CHECK(sc.filter_noise.kind() == NoiseKind::Empirical);
    CHECK(sc.filter_noise.sample_count() == 254);
    CHECK(sc.config.mode == ConfidenceMode::StateIndependent);
    CHECK(sc.config.gamma_tilde == 0.2);
    CHECK(sc.barrier.total_facets() == 2);

    // dataset regeneration is deterministic
    const std::string path = "test_dd_scenario.json";
    sc.save(path);
    const Scenario back = Scenario::load(path);
    CHECK(back.filter_noise.dataset() == sc.filter_noise.dataset());
    CHECK(back.to_json() == sc.to_json());
    std::remove(path.c_str());

    // per-run datasets differ from each other but keep the configured n
    const Matrix run0 = draw_dataset(sc.sim_noise, 254, 9001, 0);
    const Matrix run1 = draw_dataset(sc.sim_noise, 254, 9001, 1);
    CHECK(run0 == sc.filter_noise.dataset());
    CHECK(run0 != run1);
    CHECK(run1.rows() == 254);
}

TEST_CASE("heavy-tail corridor variants") {
    DataDrivenParams params;
    params.n = 2100;
    params.gamma_tilde = 0.01;
    params.distribution = HeavyTail::Laplace;
    const Scenario lap = corridor_scenario_data_driven(0.03, 0.1, 20, params);
    CHECK(lap.sim_noise.kind() == NoiseKind::Laplace);
    CHECK(lap.sim_noise.scale()(1) == 0.03);
    CHECK_NOTHROW(lap.validate());

    params.distribution = HeavyTail::StudentT;
    const Scenario st = corridor_scenario_data_driven(0.03, 0.1, 20, params);
    CHECK(st.sim_noise.kind() == NoiseKind::StudentT);
    CHECK(st.sim_noise.dof() == 8.0);
}

TEST_CASE("obstacle course fixture geometry") {
    const Scenario sc = obstacle_course_scenario();
    CHECK_NOTHROW(sc.validate());
    CHECK(sc.config.epsilon == 0.1);
    CHECK(sc.horizon == 150);
    REQUIRE(sc.barrier.polyhedron_count() == 13);
    for (int i = 0; i < 13; ++i) {
        CHECK(sc.barrier.polyhedron(i).facet_count() >= 3);
        CHECK(sc.barrier.polyhedron(i).facet_count() <= 6);
        // the generator centers are strictly inside their polygons
        const double cx = 0.8 + 1.1 * static_cast<double>(i);
        const double cy = (i % 2 == 0) ? 0.32 : -0.32;
        CHECK(sc.barrier.polyhedron(i).contains(vec3(cx, cy, 0.0)));
        CHECK_FALSE(sc.barrier.is_safe(vec3(cx, cy, 0.0)));
    }
    CHECK(sc.barrier.is_safe(sc.x0));
    CHECK(reference_intersections(sc) >= 4);
    CHECK(sc.input_lo == Vector::Constant(3, -5.0));
    CHECK(sc.input_hi == Vector::Constant(3, 5.0));

    const std::string path = "test_course_scenario.json";
    sc.save(path);
    const Scenario back = Scenario::load(path);
    CHECK(back.to_json() == sc.to_json());
    std::remove(path.c_str());
}

TEST_CASE("fixture safety agrees with rejection-sampled membership") {
    const Scenario sc = obstacle_course_scenario();
    int inside = 0;
    for (int t = 0; t < 20000; ++t) {
        Vector x = vec3(16.0 * uniform_draw(0x5A3E, t, 0) - 1.0,
                        2.4 * uniform_draw(0x5A3E, t, 1) - 1.2,
                        6.0 * uniform_draw(0x5A3E, t, 2) - 3.0);
        bool member = false;
        for (int i = 0; i < sc.barrier.polyhedron_count(); ++i) {
            member = member || sc.barrier.polyhedron(i).contains(x);
        }
        CHECK(sc.barrier.is_safe(x) == !member);
        if (member) ++inside;
    }
    CHECK(inside > 1000);  // the box actually covers the obstacles
}

TEST_CASE("per-step quantile recomputation matches the cached path") {
    DataDrivenParams params;
    params.n = 300;
    params.gamma_tilde = 0.2;
    Scenario cached = corridor_scenario_data_driven(0.03, 0.5, 20, params);
    Scenario recompute = cached;
    recompute.force_recompute_quantiles = true;

    ScenarioEngine cached_engine(std::move(cached));
    ScenarioEngine recompute_engine(std::move(recompute));
    RolloutOptions opts;
    opts.measure_time = false;
    RolloutOptions opts_recompute = opts;
    opts_recompute.force_recompute_quantiles = true;
    for (std::uint64_t seed : {3ULL, 14ULL}) {
        const TrajectoryRecord a = rollout(cached_engine.loop(), 20, seed, opts);
        const TrajectoryRecord b = rollout(recompute_engine.loop(), 20, seed, opts_recompute);
        REQUIRE(a.states.size() == b.states.size());
        for (size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);
    }
}

TEST_CASE("tracking policy behaviors") {
    PolicySpec spec;
    spec.kind = PolicySpec::Kind::Tracking;
    spec.tracking.waypoints.resize(2, 2);
    spec.tracking.waypoints << 0.0, 0.0, 10.0, 0.0;
    spec.tracking.position_gain = 2.0;
    spec.tracking.heading_gain = 1.5;
    spec.tracking.lookahead = 0.5;
    spec.tracking.u_max = 5.0;
    const BasePolicy policy = make_policy(spec);

    // on the line with aligned heading: pure feedforward progress
    const Vector on_ref = policy(vec3(3.0, 0.0, 0.0), 0);
    CHECK(on_ref(0) == doctest::Approx(2.0 * 0.5).epsilon(1e-12));
    CHECK(on_ref(1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(on_ref(2) == doctest::Approx(0.0).epsilon(1e-12));

    // lateral offset +d: command -gain * d before saturation
    const Vector offset = policy(vec3(3.0, 0.4, 0.0), 0);
    CHECK(offset(1) == doctest::Approx(-2.0 * 0.4).epsilon(1e-12));

    // huge offset saturates exactly at the input limit
    const Vector saturated = policy(vec3(3.0, 100.0, 0.0), 0);
    CHECK(saturated.lpNorm<Eigen::Infinity>() == 5.0);
}

TEST_CASE("scenario validation rejects bad configurations") {
    Scenario sc = corridor_scenario(0.03, 0.1, 20);
    sc.x0 = vec3(0, 0.7, 0);  // outside the corridor
    CHECK_THROWS_AS(sc.validate(), ConfigError);

    Scenario sc2 = corridor_scenario(0.03, 0.1, 20);
    sc2.dt = 0.0;
    CHECK_THROWS_AS(sc2.validate(), ConfigError);

    // data-driven with too few samples
    DataDrivenParams params;
    params.n = 5;
    params.gamma_tilde = 0.2;
    CHECK_THROWS_AS(corridor_scenario_data_driven(0.03, 0.1, 20, params).validate(), ConfigError);
}

TEST_CASE("benchmark on a small course slice") {
    Scenario sc = obstacle_course_scenario(0.03, 0.1, 40);
    ScenarioEngine engine(std::move(sc));
    BenchOptions opts;
    opts.runs = 2;
    opts.base_seed = 11;
    opts.measure_time = false;
    const BenchResult res = run_benchmark(engine, opts);
    CHECK(res.total_steps > 20);
    CHECK(res.feasibility_mismatches == 0);
    CHECK(res.exact_dominance_violations == 0);
    CHECK(res.frac_small_subopt_all >= 0.9);
    CHECK(res.mean_heuristic_qps <= 2.0);
}
