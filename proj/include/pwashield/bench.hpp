#pragma once

#include "pwashield/scenario.hpp"

namespace pwashield {

/// Heuristic-vs-exact comparison on base-policy states: roll the base
/// policy forward under noise and, at every safe state, evaluate the
/// safety filter with both methods from the same nominal input.
struct BenchStepRecord {
    long run = 0;
    int step = 0;
    bool heuristic_feasible = false;
    bool exact_feasible = false;
    double v_heuristic = 0.0;
    double v_exact = 0.0;
    double rel_suboptimality = 0.0;
    double t_heuristic_us = 0.0;
    double t_exact_us = 0.0;
    int heuristic_qps = 0;
    int exact_qps = 0;
};

struct BenchOptions {
    long runs = 30;
    std::uint64_t base_seed = 1;
    double cost_floor = 1e-2;          // discard steps whose best cost is below this
    double subopt_threshold = 1e-7;
    bool measure_time = true;
};

struct BenchResult {
    std::vector<BenchStepRecord> steps;  // safe states only
    long total_steps = 0;
    long retained_steps = 0;  // best cost >= cost_floor
    double frac_small_subopt_retained = 0.0;
    double frac_small_subopt_all = 0.0;
    double max_rel_suboptimality = 0.0;
    double mean_heuristic_us = 0.0;
    double max_heuristic_us = 0.0;
    double mean_exact_us = 0.0;
    double max_exact_us = 0.0;
    double mean_speedup = 0.0;  // t_exact / t_heuristic per step
    double max_speedup = 0.0;
    double mean_heuristic_qps = 0.0;
    long feasibility_mismatches = 0;
    long exact_dominance_violations = 0;  // v_exact > v_heuristic beyond tolerance
};

BenchResult run_benchmark(const ScenarioEngine& engine, const BenchOptions& opts = {});

std::string benchmark_csv(const BenchResult& result);

}  // namespace pwashield
