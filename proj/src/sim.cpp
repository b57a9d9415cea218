#include "pwashield/sim.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

namespace pwashield {

namespace {

// Shortest round-trip decimal form; keeps campaign files byte-stable.
std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

Vector draw_noise(const NoiseModel& model, const NoiseStream& stream, int step) {
    std::vector<double> uniforms(static_cast<size_t>(model.dim()));
    for (int d = 0; d < model.dim(); ++d) {
        uniforms[static_cast<size_t>(d)] =
            stream.uniform(static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(d));
    }
    return model.sample_from_uniforms(uniforms);
}

double percentile(std::vector<double>& sorted_values, double p) {
    if (sorted_values.empty()) return 0.0;
    const double idx = p * static_cast<double>(sorted_values.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(lo + 1, sorted_values.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return sorted_values[lo] * (1.0 - frac) + sorted_values[hi] * frac;
}

}  // namespace

TrajectoryRecord rollout(const ClosedLoop& loop, int horizon, std::uint64_t seed,
                         const RolloutOptions& opts, const EmpiricalQuantileCache* cache) {
    TrajectoryRecord rec;
    rec.seed = seed;
    rec.states.reserve(static_cast<size_t>(horizon) + 1);
    rec.states.push_back(loop.x0);

    // Build the state-independent cache once per rollout when the filter
    // noise is empirical and per-step recomputation was not requested.
    EmpiricalQuantileCache local_cache;
    const EmpiricalQuantileCache* effective_cache = cache;
    const bool want_cache = loop.filter_noise.kind() == NoiseKind::Empirical &&
                            !opts.force_recompute_quantiles && !loop.dynamics.noise_map;
    if (!effective_cache && want_cache) {
        local_cache = EmpiricalQuantileCache::build(loop.barrier, loop.filter_noise, loop.config);
        effective_cache = &local_cache;
    }

    NoiseStream stream(seed);
    Vector x = loop.x0;
    Vector last_input = Vector::Zero(loop.dynamics.na);
    bool have_last_input = false;

    for (int k = 0; k < horizon; ++k) {
        const Vector u_base = loop.base_policy(x, k);
        const auto t0 = std::chrono::steady_clock::now();
        FilterStepResult step_result =
            opts.method == FilterMethod::Heuristic
                ? filter_step_heuristic(loop.barrier, x, u_base, loop.dynamics, loop.filter_noise,
                                        loop.config, effective_cache)
                : filter_step_exact(loop.barrier, x, u_base, loop.dynamics, loop.filter_noise,
                                    loop.config, effective_cache);
        const auto t1 = std::chrono::steady_clock::now();
        const double us =
            opts.measure_time ? std::chrono::duration<double, std::micro>(t1 - t0).count() : 0.0;

        rec.statuses.push_back(step_result.status);
        rec.solve_time_us.push_back(us);
        rec.qp_counts.push_back(step_result.qp_solves);

        Vector u;
        if (step_result.status == QpStatus::Optimal) {
            u = step_result.u;
            last_input = u;
            have_last_input = true;
            rec.assignments.push_back(step_result.assignment);
        } else {
            rec.infeasible = true;
            if (rec.infeasible_step < 0) rec.infeasible_step = k + 1;
            rec.assignments.push_back(IndexAssignment{});
            if (!(opts.fallback_hold_input && have_last_input)) break;
            u = last_input;
        }

        const Vector xi = draw_noise(loop.sim_noise, stream, k);
        x = loop.dynamics.step(x, u, xi);
        rec.inputs.push_back(u);
        rec.states.push_back(x);
        if (!loop.barrier.is_safe(x) && rec.first_exit_step < 0) {
            rec.exited = true;
            rec.first_exit_step = k + 1;
        }
    }
    return rec;
}

WilsonInterval wilson_interval(long successes, long trials, double z) {
    WilsonInterval ci;
    if (trials <= 0) return ci;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = p + z2 / (2.0 * n);
    const double spread = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    ci.lo = successes == 0 ? 0.0 : std::max(0.0, (center - spread) / denom);
    ci.hi = successes == trials ? 1.0 : std::min(1.0, (center + spread) / denom);
    return ci;
}

CampaignResult run_campaign(const ClosedLoop& loop, int horizon, long runs, std::uint64_t base_seed,
                            const CampaignOptions& opts) {
    if (runs < 1) throw ConfigError("campaign needs at least one run");
    CampaignResult result;
    result.runs.resize(static_cast<size_t>(runs));

    // The cache depends only on the dataset and configuration, so share one
    // across runs when the dataset is shared.
    EmpiricalQuantileCache shared_cache;
    const EmpiricalQuantileCache* cache = nullptr;
    if (!opts.filter_noise_factory && loop.filter_noise.kind() == NoiseKind::Empirical &&
        !opts.rollout.force_recompute_quantiles && !loop.dynamics.noise_map) {
        shared_cache = EmpiricalQuantileCache::build(loop.barrier, loop.filter_noise, loop.config);
        cache = &shared_cache;
    }

    std::vector<double> all_step_times;
    std::mutex times_mutex;

    auto worker = [&](long begin, long end) {
        std::vector<double> local_times;
        for (long run = begin; run < end; ++run) {
            const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(run);
            TrajectoryRecord rec;
            if (opts.filter_noise_factory) {
                const NoiseModel run_noise = opts.filter_noise_factory(run);
                ClosedLoop run_loop{loop.barrier,  loop.dynamics, loop.sim_noise, run_noise,
                                    loop.config,   loop.base_policy, loop.x0};
                rec = rollout(run_loop, horizon, seed, opts.rollout, nullptr);
            } else {
                rec = rollout(loop, horizon, seed, opts.rollout, cache);
            }
            RunSummary& s = result.runs[static_cast<size_t>(run)];
            s.seed = seed;
            s.exited = rec.exited;
            s.first_exit_step = rec.first_exit_step;
            s.infeasible = rec.infeasible;
            s.infeasible_step = rec.infeasible_step;
            for (double t : rec.solve_time_us) {
                s.max_solve_us = std::max(s.max_solve_us, t);
                s.mean_solve_us += t;
                local_times.push_back(t);
            }
            if (!rec.solve_time_us.empty()) {
                s.mean_solve_us /= static_cast<double>(rec.solve_time_us.size());
            }
            for (int q : rec.qp_counts) s.qp_count += q;
            if (opts.on_record) opts.on_record(run, rec);
        }
        std::lock_guard<std::mutex> lock(times_mutex);
        all_step_times.insert(all_step_times.end(), local_times.begin(), local_times.end());
    };

    const int threads = std::max(1, opts.parallelism);
    if (threads == 1 || runs == 1) {
        worker(0, runs);
    } else {
        std::vector<std::thread> pool;
        const long chunk = (runs + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const long begin = static_cast<long>(t) * chunk;
            const long end = std::min(runs, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    for (const auto& s : result.runs) {
        if (s.exited) ++result.exits;
        if (s.infeasible) ++result.infeasible_runs;
    }
    result.p_hat = static_cast<double>(result.exits) / static_cast<double>(runs);
    result.ci = wilson_interval(result.exits, runs);

    if (!all_step_times.empty()) {
        std::sort(all_step_times.begin(), all_step_times.end());
        double sum = 0.0;
        for (double t : all_step_times) sum += t;
        result.mean_solve_us = sum / static_cast<double>(all_step_times.size());
        result.p50_solve_us = percentile(all_step_times, 0.50);
        result.p90_solve_us = percentile(all_step_times, 0.90);
        result.p99_solve_us = percentile(all_step_times, 0.99);
        result.max_solve_us = all_step_times.back();
    }
    return result;
}

CampaignResult estimate_exit_probability(const ClosedLoop& loop, int horizon, long runs,
                                         std::uint64_t base_seed, int parallelism) {
    CampaignOptions opts;
    opts.parallelism = parallelism;
    opts.rollout.measure_time = false;
    return run_campaign(loop, horizon, runs, base_seed, opts);
}

std::string campaign_csv(const CampaignResult& result) {
    std::ostringstream os;
    os << "seed,exit,first_exit_step,mean_solve_us,max_solve_us,qp_count\n";
    for (const auto& s : result.runs) {
        os << s.seed << ',' << (s.exited ? 1 : 0) << ',' << s.first_exit_step << ','
           << format_double(s.mean_solve_us) << ',' << format_double(s.max_solve_us) << ','
           << s.qp_count << '\n';
    }
    return os.str();
}

std::string trajectory_csv(const TrajectoryRecord& record) {
    std::ostringstream os;
    const Eigen::Index ns = record.states.empty() ? 0 : record.states.front().size();
    const Eigen::Index na = record.inputs.empty() ? 0 : record.inputs.front().size();
    os << "k";
    for (Eigen::Index i = 0; i < ns; ++i) os << ",x" << i;
    for (Eigen::Index i = 0; i < na; ++i) os << ",u" << i;
    os << ",status\n";
    for (size_t k = 0; k < record.states.size(); ++k) {
        os << k;
        for (Eigen::Index i = 0; i < ns; ++i) os << ',' << format_double(record.states[k](i));
        for (Eigen::Index i = 0; i < na; ++i) {
            if (k >= 1 && k - 1 < record.inputs.size()) {
                os << ',' << format_double(record.inputs[k - 1](i));
            } else {
                os << ',';
            }
        }
        if (k >= 1 && k - 1 < record.statuses.size()) {
            os << ',' << to_string(record.statuses[k - 1]);
        } else {
            os << ',';
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace pwashield
