#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pwashield/dynamics.hpp"
#include "pwashield/filter.hpp"
#include "pwashield/rng.hpp"

namespace pwashield {

using BasePolicy = std::function<Vector(const Vector& x, int step)>;

enum class FilterMethod { Heuristic, Exact };

struct TrajectoryRecord {
    std::uint64_t seed = 0;
    std::vector<Vector> states;  // x_0 .. x_K
    std::vector<Vector> inputs;  // applied inputs, one per transition
    std::vector<IndexAssignment> assignments;
    std::vector<QpStatus> statuses;
    std::vector<double> solve_time_us;
    std::vector<int> qp_counts;
    bool exited = false;
    int first_exit_step = -1;   // k >= 1 with x_k unsafe
    bool infeasible = false;    // filter gave up at some step
    int infeasible_step = -1;
};

struct RolloutOptions {
    FilterMethod method = FilterMethod::Heuristic;
    // Keep applying the last safe input after an infeasible step instead of
    // stopping; outside the formal guarantee, off by default.
    bool fallback_hold_input = false;
    bool measure_time = true;
    // Recompute empirical quantiles at every step even when a cache would
    // do (mirrors the cost profile of state-dependent estimation).
    bool force_recompute_quantiles = false;
};

/// Closed-loop system: barrier + dynamics + filter configuration + noise
/// models. The filter sees `filter_noise`; disturbances are drawn from
/// `sim_noise`. Exit probability is estimated over seeded rollouts.
struct ClosedLoop {
    const PwaBarrier& barrier;
    const Dynamics& dynamics;
    const NoiseModel& sim_noise;
    const NoiseModel& filter_noise;
    const FilterConfig& config;
    BasePolicy base_policy;
    Vector x0;
};

TrajectoryRecord rollout(const ClosedLoop& loop, int horizon, std::uint64_t seed,
                         const RolloutOptions& opts = {},
                         const EmpiricalQuantileCache* cache = nullptr);

struct RunSummary {
    std::uint64_t seed = 0;
    bool exited = false;
    int first_exit_step = -1;
    bool infeasible = false;
    int infeasible_step = -1;
    double mean_solve_us = 0.0;
    double max_solve_us = 0.0;
    long qp_count = 0;
};

struct WilsonInterval {
    double lo = 0.0;
    double hi = 0.0;
};

WilsonInterval wilson_interval(long successes, long trials, double z = 1.959963984540054);

struct CampaignResult {
    std::vector<RunSummary> runs;  // indexed by run, independent of thread count
    long exits = 0;
    long infeasible_runs = 0;
    double p_hat = 0.0;
    WilsonInterval ci;
    double mean_solve_us = 0.0;
    double p50_solve_us = 0.0;
    double p90_solve_us = 0.0;
    double p99_solve_us = 0.0;
    double max_solve_us = 0.0;
};

struct CampaignOptions {
    RolloutOptions rollout;
    int parallelism = 1;
    // Called with each finished record when set (e.g. trajectory dumps);
    // invoked from worker threads, keyed by run index.
    std::function<void(long run, const TrajectoryRecord&)> on_record;
    // Per-run empirical filter dataset (fresh i.i.d. draw per run); when
    // unset the shared filter_noise of the loop is used everywhere.
    std::function<NoiseModel(long run)> filter_noise_factory;
};

CampaignResult run_campaign(const ClosedLoop& loop, int horizon, long runs, std::uint64_t base_seed,
                            const CampaignOptions& opts = {});

// P_hat over M seeded runs with a Wilson 95% interval.
CampaignResult estimate_exit_probability(const ClosedLoop& loop, int horizon, long runs,
                                         std::uint64_t base_seed, int parallelism = 1);

std::string campaign_csv(const CampaignResult& result);
std::string trajectory_csv(const TrajectoryRecord& record);

}  // namespace pwashield
