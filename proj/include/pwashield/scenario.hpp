#pragma once

#include <optional>
#include <string>

#include "pwashield/sim.hpp"

namespace pwashield {

struct TrackingPolicyParams {
    Matrix waypoints;  // rows of (x, y)
    double position_gain = 2.0;
    double heading_gain = 1.5;
    double lookahead = 0.5;
    double u_max = 5.0;
};

struct PolicySpec {
    enum class Kind { CorridorBase, Tracking };
    Kind kind = Kind::CorridorBase;
    TrackingPolicyParams tracking;
};

/// How an empirical filter dataset is produced. Seeded draws from the
/// simulation distribution regenerate deterministically at load time; CSV
/// datasets are read as-is.
struct EmpiricalSpec {
    enum class Source { DrawFromSim, Csv };
    Source source = Source::DrawFromSim;
    long n = 0;
    std::uint64_t seed = 0;
    std::string csv_path;
    bool csv_header = false;
};

struct Scenario {
    std::string name;
    double dt = 0.1;
    int horizon = 20;
    Vector x0;
    PwaBarrier barrier;
    NoiseModel sim_noise;
    std::optional<EmpiricalSpec> filter_noise_spec;  // empty: filter sees sim_noise
    NoiseModel filter_noise;
    FilterConfig config;
    PolicySpec policy;
    Vector input_lo;
    Vector input_hi;
    bool force_recompute_quantiles = false;

    nlohmann::json to_json() const;
    static Scenario from_json(const nlohmann::json& j);
    static Scenario load(const std::string& path);
    void save(const std::string& path) const;
    void validate() const;
};

// Dataset for a campaign run; run 0 reproduces the dataset materialized at
// load time, other runs are independent redraws (same n).
Matrix draw_dataset(const NoiseModel& sim_noise, long n, std::uint64_t spec_seed, long run);

Vector corridor_base_policy(const Vector& x);
BasePolicy make_policy(const PolicySpec& spec);
Dynamics planar_unicycle_dynamics(double dt, const Vector& input_lo, const Vector& input_hi);

/// Owns the pieces a ClosedLoop borrows; keep alive while running.
class ScenarioEngine {
public:
    explicit ScenarioEngine(Scenario scenario);

    const Scenario& scenario() const { return scenario_; }
    const Dynamics& dynamics() const { return dynamics_; }
    ClosedLoop loop() const;
    CampaignOptions campaign_options(int parallelism, const RolloutOptions& rollout) const;

private:
    Scenario scenario_;
    Dynamics dynamics_;
    BasePolicy policy_;
};

enum class HeavyTail { Gaussian, Laplace, StudentT };

Scenario corridor_scenario(double sigma, double epsilon, int horizon);

struct DataDrivenParams {
    long n = 2580;
    double gamma_tilde = 0.2;
    std::uint64_t dataset_seed = 7001;
    HeavyTail distribution = HeavyTail::Gaussian;
    ConfidenceMode mode = ConfidenceMode::StateIndependent;
};

Scenario corridor_scenario_data_driven(double sigma, double epsilon, int horizon,
                                       const DataDrivenParams& params);

// 13 irregular convex obstacles staggered around a straight reference line,
// tracked by a saturated proportional policy.
Scenario obstacle_course_scenario(double sigma = 0.03, double epsilon = 0.1, int horizon = 150);

}  // namespace pwashield
