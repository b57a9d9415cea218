#include "pwashield/bench.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <sstream>

namespace pwashield {

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

double elapsed_us(std::chrono::steady_clock::time_point t0, std::chrono::steady_clock::time_point t1) {
    return std::chrono::duration<double, std::micro>(t1 - t0).count();
}

}  // namespace

BenchResult run_benchmark(const ScenarioEngine& engine, const BenchOptions& opts) {
    const Scenario& sc = engine.scenario();
    const Dynamics& dyn = engine.dynamics();
    const BasePolicy policy = make_policy(sc.policy);
    const ClosedLoop loop = engine.loop();

    BenchResult result;
    double speedup_sum = 0.0;
    long speedup_count = 0;
    double heur_us_sum = 0.0;
    double exact_us_sum = 0.0;
    double heur_qps_sum = 0.0;
    long small_retained = 0;
    long small_all = 0;

    for (long run = 0; run < opts.runs; ++run) {
        const NoiseStream stream(opts.base_seed + static_cast<std::uint64_t>(run));
        Vector x = sc.x0;
        for (int k = 0; k < sc.horizon; ++k) {
            const Vector u_base = policy(x, k);
            if (sc.barrier.is_safe(x)) {
                BenchStepRecord rec;
                rec.run = run;
                rec.step = k;

                auto t0 = std::chrono::steady_clock::now();
                const FilterStepResult heur =
                    filter_step_heuristic(sc.barrier, x, u_base, dyn, sc.filter_noise, sc.config);
                auto t1 = std::chrono::steady_clock::now();
                const FilterStepResult exact =
                    filter_step_exact(sc.barrier, x, u_base, dyn, sc.filter_noise, sc.config);
                auto t2 = std::chrono::steady_clock::now();

                rec.t_heuristic_us = opts.measure_time ? elapsed_us(t0, t1) : 0.0;
                rec.t_exact_us = opts.measure_time ? elapsed_us(t1, t2) : 0.0;
                rec.heuristic_feasible = heur.status == QpStatus::Optimal;
                rec.exact_feasible = exact.status == QpStatus::Optimal;
                rec.heuristic_qps = heur.qp_solves;
                rec.exact_qps = exact.qp_solves;
                if (rec.heuristic_feasible != rec.exact_feasible) ++result.feasibility_mismatches;
                if (rec.heuristic_feasible && rec.exact_feasible) {
                    rec.v_heuristic = heur.objective;
                    rec.v_exact = exact.objective;
                    if (rec.v_exact > rec.v_heuristic + 1e-9) ++result.exact_dominance_violations;
                    const double v_min = std::min(rec.v_heuristic, rec.v_exact);
                    const double gap = rec.v_heuristic - v_min;
                    rec.rel_suboptimality = gap <= 1e-12 ? 0.0 : gap / v_min;
                    result.max_rel_suboptimality =
                        std::max(result.max_rel_suboptimality, rec.rel_suboptimality);
                    const bool small = rec.rel_suboptimality <= opts.subopt_threshold;
                    if (small) ++small_all;
                    if (v_min >= opts.cost_floor) {
                        ++result.retained_steps;
                        if (small) ++small_retained;
                    }
                    ++result.total_steps;
                    heur_us_sum += rec.t_heuristic_us;
                    exact_us_sum += rec.t_exact_us;
                    heur_qps_sum += rec.heuristic_qps;
                    result.max_heuristic_us = std::max(result.max_heuristic_us, rec.t_heuristic_us);
                    result.max_exact_us = std::max(result.max_exact_us, rec.t_exact_us);
                    if (rec.t_heuristic_us > 0.0) {
                        const double s = rec.t_exact_us / rec.t_heuristic_us;
                        speedup_sum += s;
                        ++speedup_count;
                        result.max_speedup = std::max(result.max_speedup, s);
                    }
                }
                result.steps.push_back(rec);
            }
            // Advance under the base policy regardless of the filter outcome
            // (suboptimality is probed along nominal trajectories).
            const int dim = sc.sim_noise.dim();
            std::vector<double> uniforms(static_cast<size_t>(dim));
            for (int d = 0; d < dim; ++d) {
                uniforms[static_cast<size_t>(d)] =
                    stream.uniform(static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(d));
            }
            x = dyn.step(x, u_base, sc.sim_noise.sample_from_uniforms(uniforms));
        }
    }

    if (result.total_steps > 0) {
        result.mean_heuristic_us = heur_us_sum / static_cast<double>(result.total_steps);
        result.mean_exact_us = exact_us_sum / static_cast<double>(result.total_steps);
        result.mean_heuristic_qps = heur_qps_sum / static_cast<double>(result.total_steps);
        result.frac_small_subopt_all =
            static_cast<double>(small_all) / static_cast<double>(result.total_steps);
    }
    if (result.retained_steps > 0) {
        result.frac_small_subopt_retained =
            static_cast<double>(small_retained) / static_cast<double>(result.retained_steps);
    }
    if (speedup_count > 0) result.mean_speedup = speedup_sum / static_cast<double>(speedup_count);
    return result;
}

std::string benchmark_csv(const BenchResult& result) {
    std::ostringstream os;
    os << "run,step,heur_feasible,exact_feasible,v_heur,v_exact,rel_subopt,"
          "t_heur_us,t_exact_us,heur_qps,exact_qps\n";
    for (const auto& r : result.steps) {
        os << r.run << ',' << r.step << ',' << (r.heuristic_feasible ? 1 : 0) << ','
           << (r.exact_feasible ? 1 : 0) << ',' << format_double(r.v_heuristic) << ','
           << format_double(r.v_exact) << ',' << format_double(r.rel_suboptimality) << ','
           << format_double(r.t_heuristic_us) << ',' << format_double(r.t_exact_us) << ','
           << r.heuristic_qps << ',' << r.exact_qps << '\n';
    }
    return os.str();
}

}  // namespace pwashield
