#include "pwashield/scenario.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pwashield/log.hpp"

namespace pwashield {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double wrap_angle(double a) {
    while (a > kPi) a -= 2.0 * kPi;
    while (a < -kPi) a += 2.0 * kPi;
    return a;
}

Vector json_vector(const nlohmann::json& a) {
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

nlohmann::json vector_json(const Vector& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

std::string mode_name(ConfidenceMode m) {
    return m == ConfidenceMode::StateIndependent ? "state_independent" : "general";
}

ConfidenceMode mode_from_name(const std::string& s) {
    if (s == "state_independent") return ConfidenceMode::StateIndependent;
    if (s == "general") return ConfidenceMode::General;
    throw std::invalid_argument("unknown confidence mode: " + s);
}

std::string anchor_name(OrderAnchor a) {
    return a == OrderAnchor::CurrentState ? "current_state" : "predicted_state";
}

OrderAnchor anchor_from_name(const std::string& s) {
    if (s == "current_state") return OrderAnchor::CurrentState;
    if (s == "predicted_state") return OrderAnchor::PredictedState;
    throw std::invalid_argument("unknown order anchor: " + s);
}

nlohmann::json config_json(const FilterConfig& c) {
    nlohmann::json j;
    j["epsilon"] = c.epsilon;
    j["alpha"] = c.alpha;
    if (c.per_step_delta) j["per_step_delta"] = *c.per_step_delta;
    j["gamma_tilde"] = c.gamma_tilde;
    j["mode"] = mode_name(c.mode);
    j["max_inner_iters"] = c.max_inner_iters;
    j["order_anchor"] = anchor_name(c.order_anchor);
    j["sharp_discrete"] = c.sharp_discrete;
    j["enumeration_cap"] = c.enumeration_cap;
    j["qp"] = {{"feas_tol", c.qp.feas_tol},
               {"stat_tol", c.qp.stat_tol},
               {"max_iterations", c.qp.max_iterations}};
    return j;
}

FilterConfig config_from_json(const nlohmann::json& j, int horizon) {
    FilterConfig c;
    c.epsilon = j.at("epsilon").get<double>();
    c.horizon = horizon;
    c.alpha = j.value("alpha", 0.0);
    if (j.contains("per_step_delta") && !j["per_step_delta"].is_null()) {
        c.per_step_delta = j["per_step_delta"].get<double>();
    }
    c.gamma_tilde = j.value("gamma_tilde", 0.2);
    c.mode = mode_from_name(j.value("mode", std::string("state_independent")));
    c.max_inner_iters = j.value("max_inner_iters", 32);
    c.order_anchor = anchor_from_name(j.value("order_anchor", std::string("current_state")));
    c.sharp_discrete = j.value("sharp_discrete", false);
    c.enumeration_cap = j.value("enumeration_cap", 1'000'000L);
    if (j.contains("qp")) {
        c.qp.feas_tol = j["qp"].value("feas_tol", 1e-8);
        c.qp.stat_tol = j["qp"].value("stat_tol", 1e-9);
        c.qp.max_iterations = j["qp"].value("max_iterations", 0);
    }
    return c;
}

std::uint64_t dataset_stream_seed(std::uint64_t spec_seed, long run) {
    return splitmix64(spec_seed ^ splitmix64(0xDA7A5E7DULL + static_cast<std::uint64_t>(run)));
}

// Convex polygon inscribed in a rotated ellipse, with seeded angular jitter;
// returned as unit-normal halfspaces lifted to (x, y, theta) space.
Polyhedron polygon_obstacle(double cx, double cy, double rx, double ry, double rot, int nverts,
                            std::uint64_t jitter_key) {
    const double cr = std::cos(rot);
    const double sr = std::sin(rot);
    Matrix verts(nverts, 2);
    for (int j = 0; j < nverts; ++j) {
        const double slot = 2.0 * kPi / static_cast<double>(nverts);
        const double jitter =
            (uniform_draw(jitter_key, static_cast<std::uint64_t>(j), 0) - 0.5) * 0.55 * slot;
        const double a = slot * static_cast<double>(j) + jitter;
        const double lx = rx * std::cos(a);
        const double ly = ry * std::sin(a);
        verts(j, 0) = cx + cr * lx - sr * ly;
        verts(j, 1) = cy + sr * lx + cr * ly;
    }
    Matrix C(nverts, 3);
    Vector b(nverts);
    for (int j = 0; j < nverts; ++j) {
        const int k = (j + 1) % nverts;
        const double ex = verts(k, 0) - verts(j, 0);
        const double ey = verts(k, 1) - verts(j, 1);
        double nx = ey;
        double ny = -ex;
        const double norm = std::hypot(nx, ny);
        nx /= norm;
        ny /= norm;
        double off = nx * verts(j, 0) + ny * verts(j, 1);
        if (nx * cx + ny * cy > off) {  // keep the center strictly inside
            nx = -nx;
            ny = -ny;
            off = -off;
        }
        C(j, 0) = nx;
        C(j, 1) = ny;
        C(j, 2) = 0.0;
        b(j) = off;
    }
    return Polyhedron(C, b);
}

struct PathPoint {
    double x;
    double y;
    double tangent_x;
    double tangent_y;
};

PathPoint point_at(const Matrix& waypoints, double arc) {
    const Eigen::Index n = waypoints.rows();
    if (n == 1) return {waypoints(0, 0), waypoints(0, 1), 1.0, 0.0};
    double remaining = std::max(0.0, arc);
    for (Eigen::Index s = 0; s + 1 < n; ++s) {
        const double dx = waypoints(s + 1, 0) - waypoints(s, 0);
        const double dy = waypoints(s + 1, 1) - waypoints(s, 1);
        const double len = std::hypot(dx, dy);
        if (remaining <= len || s + 2 == n) {
            const double f = len > 0.0 ? std::min(remaining, len) / len : 0.0;
            const double tx = len > 0.0 ? dx / len : 1.0;
            const double ty = len > 0.0 ? dy / len : 0.0;
            return {waypoints(s, 0) + f * dx, waypoints(s, 1) + f * dy, tx, ty};
        }
        remaining -= len;
    }
    return {waypoints(n - 1, 0), waypoints(n - 1, 1), 1.0, 0.0};
}

double nearest_arc(const Matrix& waypoints, double px, double py) {
    const Eigen::Index n = waypoints.rows();
    if (n == 1) return 0.0;
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_arc = 0.0;
    double arc_base = 0.0;
    for (Eigen::Index s = 0; s + 1 < n; ++s) {
        const double dx = waypoints(s + 1, 0) - waypoints(s, 0);
        const double dy = waypoints(s + 1, 1) - waypoints(s, 1);
        const double len2 = dx * dx + dy * dy;
        double t = 0.0;
        if (len2 > 0.0) {
            t = ((px - waypoints(s, 0)) * dx + (py - waypoints(s, 1)) * dy) / len2;
            t = std::clamp(t, 0.0, 1.0);
        }
        const double qx = waypoints(s, 0) + t * dx;
        const double qy = waypoints(s, 1) + t * dy;
        const double d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_arc = arc_base + t * std::sqrt(len2);
        }
        arc_base += std::sqrt(len2);
    }
    return best_arc;
}

}  // namespace

Vector corridor_base_policy(const Vector& x) {
    Vector u(3);
    u << 0.2, 1.0, -x(2);
    return u;
}

BasePolicy make_policy(const PolicySpec& spec) {
    if (spec.kind == PolicySpec::Kind::CorridorBase) {
        return [](const Vector& x, int) { return corridor_base_policy(x); };
    }
    const TrackingPolicyParams params = spec.tracking;
    if (params.waypoints.rows() < 1) throw std::invalid_argument("tracking policy needs waypoints");
    return [params](const Vector& x, int) {
        const double arc = nearest_arc(params.waypoints, x(0), x(1));
        const PathPoint target = point_at(params.waypoints, arc + params.lookahead);
        const double vx_world = params.position_gain * (target.x - x(0));
        const double vy_world = params.position_gain * (target.y - x(1));
        const double theta = x(2);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        // world-frame velocity command rotated into the body frame
        Vector u(3);
        u(0) = c * vx_world + s * vy_world;
        u(1) = -s * vx_world + c * vy_world;
        const double psi = std::atan2(target.tangent_y, target.tangent_x);
        u(2) = params.heading_gain * wrap_angle(psi - theta);
        for (int i = 0; i < 3; ++i) u(i) = std::clamp(u(i), -params.u_max, params.u_max);
        return u;
    };
}

Dynamics planar_unicycle_dynamics(double dt, const Vector& input_lo, const Vector& input_hi) {
    Dynamics dyn;
    dyn.ns = 3;
    dyn.na = 3;
    dyn.drift = [](const Vector& x) { return x; };
    dyn.input_map = [dt](const Vector& x) { return Matrix(dt * rotation_z(x(2))); };
    dyn.input_lo = input_lo;
    dyn.input_hi = input_hi;
    return dyn;
}

Matrix draw_dataset(const NoiseModel& sim_noise, long n, std::uint64_t spec_seed, long run) {
    if (n < 1) throw std::invalid_argument("dataset size must be >= 1");
    const NoiseStream stream(dataset_stream_seed(spec_seed, run));
    Matrix data(n, sim_noise.dim());
    std::vector<double> uniforms(static_cast<size_t>(sim_noise.dim()));
    for (long t = 0; t < n; ++t) {
        for (int d = 0; d < sim_noise.dim(); ++d) {
            uniforms[static_cast<size_t>(d)] =
                stream.uniform(static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(d));
        }
        data.row(t) = sim_noise.sample_from_uniforms(uniforms).transpose();
    }
    return data;
}

void Scenario::validate() const {
    if (dt <= 0.0) throw ConfigError("scenario: dt must be positive");
    if (horizon < 1) throw ConfigError("scenario: horizon must be >= 1");
    if (x0.size() != barrier.state_dim()) throw ConfigError("scenario: x0/barrier dimension mismatch");
    if (sim_noise.dim() != barrier.state_dim()) {
        throw ConfigError("scenario: noise dimension must match the state dimension");
    }
    if (!barrier.is_safe(x0)) throw ConfigError("scenario: initial state is unsafe");
    if (config.horizon != horizon) throw ConfigError("scenario: filter horizon diverges");
    config.validate();
    if (filter_noise.kind() == NoiseKind::Empirical) {
        // Surfaces the minimum-sample requirement early.
        const auto deltas = allocate_risk(config.delta(), barrier.polyhedron_count());
        for (double d : deltas) {
            compute_tau(config.gamma(), barrier.total_facets(), filter_noise.sample_count(), d);
        }
    }
    const auto issues = barrier.badly_scaled_rows();
    for (const auto& issue : issues) {
        log(LogLevel::Warn, "scenario '", name, "': facet (", issue.polyhedron, ",", issue.facet,
            ") has row norm ", issue.row_norm);
    }
}

nlohmann::json Scenario::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["dt"] = dt;
    j["horizon"] = horizon;
    j["x0"] = vector_json(x0);
    j["barrier"] = barrier.to_json();
    j["sim_noise"] = sim_noise.to_json();
    if (filter_noise_spec) {
        nlohmann::json f;
        if (filter_noise_spec->source == EmpiricalSpec::Source::DrawFromSim) {
            f["source"] = "draw_from_sim";
            f["n"] = filter_noise_spec->n;
            f["seed"] = filter_noise_spec->seed;
        } else {
            f["source"] = "csv";
            f["path"] = filter_noise_spec->csv_path;
            f["header"] = filter_noise_spec->csv_header;
        }
        j["filter_noise"] = f;
    } else {
        j["filter_noise"] = "same_as_sim";
    }
    j["filter"] = config_json(config);
    nlohmann::json pj;
    if (policy.kind == PolicySpec::Kind::CorridorBase) {
        pj["type"] = "corridor_base";
    } else {
        pj["type"] = "tracking";
        nlohmann::json w = nlohmann::json::array();
        for (Eigen::Index r = 0; r < policy.tracking.waypoints.rows(); ++r) {
            w.push_back({policy.tracking.waypoints(r, 0), policy.tracking.waypoints(r, 1)});
        }
        pj["waypoints"] = w;
        pj["position_gain"] = policy.tracking.position_gain;
        pj["heading_gain"] = policy.tracking.heading_gain;
        pj["lookahead"] = policy.tracking.lookahead;
        pj["u_max"] = policy.tracking.u_max;
    }
    j["policy"] = pj;
    if (input_lo.size() > 0) j["input_lo"] = vector_json(input_lo);
    if (input_hi.size() > 0) j["input_hi"] = vector_json(input_hi);
    j["force_recompute_quantiles"] = force_recompute_quantiles;
    return j;
}

Scenario Scenario::from_json(const nlohmann::json& j) {
    const int horizon = j.at("horizon").get<int>();
    NoiseModel sim_noise = NoiseModel::from_json(j.at("sim_noise"));

    std::optional<EmpiricalSpec> spec;
    NoiseModel filter_noise = sim_noise;
    const auto& fj = j.at("filter_noise");
    if (fj.is_object()) {
        EmpiricalSpec s;
        const std::string source = fj.at("source").get<std::string>();
        if (source == "draw_from_sim") {
            s.source = EmpiricalSpec::Source::DrawFromSim;
            s.n = fj.at("n").get<long>();
            s.seed = fj.at("seed").get<std::uint64_t>();
            filter_noise = NoiseModel::empirical(draw_dataset(sim_noise, s.n, s.seed, 0));
        } else if (source == "csv") {
            s.source = EmpiricalSpec::Source::Csv;
            s.csv_path = fj.at("path").get<std::string>();
            s.csv_header = fj.value("header", false);
            filter_noise = NoiseModel::empirical_from_csv(s.csv_path, s.csv_header);
            s.n = filter_noise.sample_count();
        } else {
            throw std::invalid_argument("unknown filter_noise source: " + source);
        }
        spec = s;
    } else if (!(fj.is_string() && fj.get<std::string>() == "same_as_sim")) {
        throw std::invalid_argument("filter_noise must be \"same_as_sim\" or an empirical spec");
    }

    PolicySpec policy;
    const auto& pj = j.at("policy");
    const std::string ptype = pj.at("type").get<std::string>();
    if (ptype == "corridor_base") {
        policy.kind = PolicySpec::Kind::CorridorBase;
    } else if (ptype == "tracking") {
        policy.kind = PolicySpec::Kind::Tracking;
        const auto& w = pj.at("waypoints");
        policy.tracking.waypoints.resize(static_cast<Eigen::Index>(w.size()), 2);
        for (size_t r = 0; r < w.size(); ++r) {
            policy.tracking.waypoints(static_cast<Eigen::Index>(r), 0) = w[r][0].get<double>();
            policy.tracking.waypoints(static_cast<Eigen::Index>(r), 1) = w[r][1].get<double>();
        }
        policy.tracking.position_gain = pj.value("position_gain", 2.0);
        policy.tracking.heading_gain = pj.value("heading_gain", 1.5);
        policy.tracking.lookahead = pj.value("lookahead", 0.5);
        policy.tracking.u_max = pj.value("u_max", 5.0);
    } else {
        throw std::invalid_argument("unknown policy type: " + ptype);
    }

    Scenario s{j.at("name").get<std::string>(),
               j.at("dt").get<double>(),
               horizon,
               json_vector(j.at("x0")),
               PwaBarrier::from_json(j.at("barrier")),
               std::move(sim_noise),
               spec,
               std::move(filter_noise),
               config_from_json(j.at("filter"), horizon),
               policy,
               j.contains("input_lo") ? json_vector(j["input_lo"]) : Vector(),
               j.contains("input_hi") ? json_vector(j["input_hi"]) : Vector(),
               j.value("force_recompute_quantiles", false)};
    return s;
}

Scenario Scenario::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario file: " + path);
    nlohmann::json j;
    in >> j;
    Scenario s = from_json(j);
    s.validate();
    return s;
}

void Scenario::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write scenario file: " + path);
    out << to_json().dump(2) << "\n";
}

ScenarioEngine::ScenarioEngine(Scenario scenario)
    : scenario_(std::move(scenario)),
      dynamics_(planar_unicycle_dynamics(scenario_.dt, scenario_.input_lo, scenario_.input_hi)),
      policy_(make_policy(scenario_.policy)) {}

ClosedLoop ScenarioEngine::loop() const {
    return ClosedLoop{scenario_.barrier,     dynamics_, scenario_.sim_noise,
                      scenario_.filter_noise, scenario_.config, policy_, scenario_.x0};
}

CampaignOptions ScenarioEngine::campaign_options(int parallelism, const RolloutOptions& rollout) const {
    CampaignOptions opts;
    opts.parallelism = parallelism;
    opts.rollout = rollout;
    opts.rollout.force_recompute_quantiles =
        rollout.force_recompute_quantiles || scenario_.force_recompute_quantiles;
    if (scenario_.filter_noise_spec &&
        scenario_.filter_noise_spec->source == EmpiricalSpec::Source::DrawFromSim) {
        const NoiseModel sim = scenario_.sim_noise;
        const long n = scenario_.filter_noise_spec->n;
        const std::uint64_t seed = scenario_.filter_noise_spec->seed;
        opts.filter_noise_factory = [sim, n, seed](long run) {
            return NoiseModel::empirical(draw_dataset(sim, n, seed, run));
        };
    }
    return opts;
}

Scenario corridor_scenario(double sigma, double epsilon, int horizon) {
    Matrix c_top(1, 3), c_bottom(1, 3);
    c_top << 0.0, -1.0, 0.0;     // wall p_y > 0.5
    c_bottom << 0.0, 1.0, 0.0;   // wall p_y < -0.5
    Vector b(1);
    b << -0.5;
    std::vector<Polyhedron> walls;
    walls.emplace_back(c_top, b);
    walls.emplace_back(c_bottom, b);

    Vector mean = Vector::Zero(3);
    Matrix cov = Matrix::Zero(3, 3);
    cov(1, 1) = sigma * sigma;
    NoiseModel noise = NoiseModel::gaussian(mean, cov);

    FilterConfig cfg;
    cfg.epsilon = epsilon;
    cfg.horizon = horizon;

    Scenario s{"corridor",
               0.1,
               horizon,
               Vector::Zero(3),
               PwaBarrier(std::move(walls)),
               noise,
               std::nullopt,
               noise,
               cfg,
               PolicySpec{},
               Vector(),
               Vector(),
               false};
    return s;
}

Scenario corridor_scenario_data_driven(double sigma, double epsilon, int horizon,
                                       const DataDrivenParams& params) {
    Scenario s = corridor_scenario(sigma, epsilon, horizon);
    s.name = "corridor_data_driven";
    switch (params.distribution) {
        case HeavyTail::Gaussian:
            break;
        case HeavyTail::Laplace: {
            Vector scale(3);
            scale << 0.0, sigma, 0.0;
            s.sim_noise = NoiseModel::laplace(Vector::Zero(3), scale);
            break;
        }
        case HeavyTail::StudentT: {
            Vector scale(3);
            scale << 0.0, sigma, 0.0;
            s.sim_noise = NoiseModel::student_t(Vector::Zero(3), scale, 8.0);
            break;
        }
    }
    EmpiricalSpec spec;
    spec.source = EmpiricalSpec::Source::DrawFromSim;
    spec.n = params.n;
    spec.seed = params.dataset_seed;
    s.filter_noise_spec = spec;
    s.filter_noise = NoiseModel::empirical(draw_dataset(s.sim_noise, params.n, spec.seed, 0));
    s.config.gamma_tilde = params.gamma_tilde;
    s.config.mode = params.mode;
    return s;
}

Scenario obstacle_course_scenario(double sigma, double epsilon, int horizon) {
    // Serpentine arrangement: obstacles staggered above and below the
    // reference line so the tracked path threads between them.
    const int nverts[13] = {5, 4, 3, 6, 5, 4, 3, 6, 5, 4, 3, 6, 5};
    std::vector<Polyhedron> obstacles;
    obstacles.reserve(13);
    for (int i = 0; i < 13; ++i) {
        const double cx = 0.8 + 1.1 * static_cast<double>(i);
        const double cy = (i % 2 == 0) ? 0.32 : -0.32;
        const double rx = 0.40 + 0.06 * uniform_draw(0xB5, static_cast<std::uint64_t>(i), 1);
        const double ry = 0.38 + 0.06 * uniform_draw(0xB5, static_cast<std::uint64_t>(i), 2);
        const double rot = (uniform_draw(0xB5, static_cast<std::uint64_t>(i), 3) - 0.5) * 0.6;
        obstacles.push_back(polygon_obstacle(cx, cy, rx, ry, rot, nverts[i],
                                             0xC0FFEE00ULL + static_cast<std::uint64_t>(i)));
    }

    Vector mean = Vector::Zero(3);
    Matrix cov = Matrix::Zero(3, 3);
    cov(0, 0) = sigma * sigma;
    cov(1, 1) = sigma * sigma;
    NoiseModel noise = NoiseModel::gaussian(mean, cov);

    FilterConfig cfg;
    cfg.epsilon = epsilon;
    cfg.horizon = horizon;
    // Anchor the facet search at the predicted successor state: the base
    // policy cuts across obstacle corners here, where the current-state
    // ranking often commits to a facet the optimal solution avoids.
    cfg.order_anchor = OrderAnchor::PredictedState;

    PolicySpec policy;
    policy.kind = PolicySpec::Kind::Tracking;
    policy.tracking.waypoints.resize(2, 2);
    policy.tracking.waypoints << -1.0, 0.0, 15.5, 0.0;
    policy.tracking.position_gain = 2.0;
    policy.tracking.heading_gain = 1.5;
    policy.tracking.lookahead = 0.5;
    policy.tracking.u_max = 5.0;

    Vector x0(3);
    x0 << -0.5, 0.0, 0.0;
    Vector lo = Vector::Constant(3, -5.0);
    Vector hi = Vector::Constant(3, 5.0);

    Scenario s{"obstacle_course",
               0.1,
               horizon,
               x0,
               PwaBarrier(std::move(obstacles)),
               noise,
               std::nullopt,
               noise,
               cfg,
               policy,
               lo,
               hi,
               false};
    return s;
}

}  // namespace pwashield
