#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pwashield/bench.hpp"
#include "pwashield/log.hpp"
#include "pwashield/scenario.hpp"

namespace fs = std::filesystem;
using namespace pwashield;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

FilterMethod parse_method(const std::string& name) {
    if (name == "heuristic") return FilterMethod::Heuristic;
    if (name == "exact") return FilterMethod::Exact;
    throw ConfigError("unknown method: " + name + " (expected heuristic or exact)");
}

void write_file(const fs::path& path, const std::string& content) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

Vector parse_state(const std::string& csv) {
    std::vector<double> values;
    std::stringstream ss(csv);
    std::string cell;
    while (std::getline(ss, cell, ',')) values.push_back(std::stod(cell));
    Vector x(static_cast<Eigen::Index>(values.size()));
    for (size_t i = 0; i < values.size(); ++i) x(static_cast<Eigen::Index>(i)) = values[i];
    return x;
}

struct SimulateArgs {
    std::string scenario_path;
    long runs = 100;
    std::uint64_t seed = 1;
    std::string method = "heuristic";
    std::string out_dir = "out";
    int parallel = 1;
    bool fallback_hold_input = false;
    std::string timings = "none";
    bool dump_trajectories = false;
    double epsilon_override = -1.0;
    std::string dataset_path;
    bool dataset_header = false;
};

void apply_dataset_override(Scenario& sc, const std::string& path, bool header) {
    if (path.empty()) return;
    EmpiricalSpec spec;
    spec.source = EmpiricalSpec::Source::Csv;
    spec.csv_path = path;
    spec.csv_header = header;
    sc.filter_noise = NoiseModel::empirical_from_csv(path, header);
    spec.n = sc.filter_noise.sample_count();
    sc.filter_noise_spec = spec;
    sc.validate();
}

int cmd_simulate(const SimulateArgs& args) {
    Scenario sc = Scenario::load(args.scenario_path);
    if (args.epsilon_override > 0.0) {
        sc.config.epsilon = args.epsilon_override;
        sc.validate();
    }
    apply_dataset_override(sc, args.dataset_path, args.dataset_header);
    ScenarioEngine engine(std::move(sc));

    RolloutOptions rollout;
    rollout.method = parse_method(args.method);
    rollout.fallback_hold_input = args.fallback_hold_input;
    rollout.measure_time = args.timings == "measured";
    CampaignOptions opts = engine.campaign_options(args.parallel, rollout);

    const fs::path out_dir(args.out_dir);
    if (args.dump_trajectories) {
        fs::create_directories(out_dir / "trajectories");
        opts.on_record = [&](long, const TrajectoryRecord& rec) {
            write_file(out_dir / "trajectories" / ("run_" + std::to_string(rec.seed) + ".csv"),
                       trajectory_csv(rec));
        };
    }

    const CampaignResult result =
        run_campaign(engine.loop(), engine.scenario().horizon, args.runs, args.seed, opts);

    write_file(out_dir / "results.csv", campaign_csv(result));

    nlohmann::json summary;
    summary["scenario"] = engine.scenario().name;
    summary["method"] = args.method;
    summary["runs"] = args.runs;
    summary["base_seed"] = args.seed;
    summary["epsilon"] = engine.scenario().config.epsilon;
    summary["horizon"] = engine.scenario().horizon;
    summary["exits"] = result.exits;
    summary["p_hat"] = result.p_hat;
    summary["wilson_ci"] = {result.ci.lo, result.ci.hi};
    summary["infeasible_runs"] = result.infeasible_runs;
    if (rollout.measure_time) {
        summary["timings_us"] = {{"mean", result.mean_solve_us}, {"p50", result.p50_solve_us},
                                 {"p90", result.p90_solve_us},   {"p99", result.p99_solve_us},
                                 {"max", result.max_solve_us}};
    }
    write_file(out_dir / "summary.json", summary.dump(2) + "\n");

    std::cout << summary.dump(2) << "\n";
    if (result.infeasible_runs > 0 && !args.fallback_hold_input) return kExitInfeasible;
    return kExitOk;
}

struct BenchArgs {
    std::string scenario_path;
    long runs = 30;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    double cost_floor = 1e-2;
    double subopt_threshold = 1e-7;
};

int cmd_benchmark(const BenchArgs& args) {
    Scenario sc = Scenario::load(args.scenario_path);
    ScenarioEngine engine(std::move(sc));
    BenchOptions opts;
    opts.runs = args.runs;
    opts.base_seed = args.seed;
    opts.cost_floor = args.cost_floor;
    opts.subopt_threshold = args.subopt_threshold;
    const BenchResult result = run_benchmark(engine, opts);

    const fs::path out_dir(args.out_dir);
    write_file(out_dir / "benchmark.csv", benchmark_csv(result));

    nlohmann::json summary;
    summary["scenario"] = engine.scenario().name;
    summary["runs"] = args.runs;
    summary["base_seed"] = args.seed;
    summary["steps"] = result.total_steps;
    summary["retained_steps"] = result.retained_steps;
    summary["cost_floor"] = args.cost_floor;
    summary["subopt_threshold"] = args.subopt_threshold;
    summary["frac_small_subopt_retained"] = result.frac_small_subopt_retained;
    summary["frac_small_subopt_all"] = result.frac_small_subopt_all;
    summary["max_rel_suboptimality"] = result.max_rel_suboptimality;
    summary["mean_heuristic_us"] = result.mean_heuristic_us;
    summary["max_heuristic_us"] = result.max_heuristic_us;
    summary["mean_exact_us"] = result.mean_exact_us;
    summary["max_exact_us"] = result.max_exact_us;
    summary["mean_speedup"] = result.mean_speedup;
    summary["max_speedup"] = result.max_speedup;
    summary["mean_heuristic_qps"] = result.mean_heuristic_qps;
    summary["feasibility_mismatches"] = result.feasibility_mismatches;
    summary["exact_dominance_violations"] = result.exact_dominance_violations;
    write_file(out_dir / "benchmark_summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

struct FilterStepArgs {
    std::string scenario_path;
    std::string barrier_path;
    std::string state_csv;
    std::string u_base_csv;
    std::string method = "heuristic";
    std::string dump_qp;
    std::string dataset_path;
    bool dataset_header = false;
};

int cmd_filter_step(const FilterStepArgs& args) {
    Scenario sc = Scenario::load(args.scenario_path);
    if (!args.barrier_path.empty()) {
        std::ifstream in(args.barrier_path);
        if (!in) throw std::runtime_error("cannot open barrier file: " + args.barrier_path);
        nlohmann::json bj;
        in >> bj;
        sc.barrier = PwaBarrier::from_json(bj);
        sc.validate();
    }
    apply_dataset_override(sc, args.dataset_path, args.dataset_header);
    ScenarioEngine engine(std::move(sc));
    const Scenario& scenario = engine.scenario();

    const Vector x = parse_state(args.state_csv);
    if (x.size() != scenario.barrier.state_dim()) {
        throw ConfigError("state dimension does not match the barrier");
    }
    const Vector u_base =
        args.u_base_csv.empty() ? make_policy(scenario.policy)(x, 0) : parse_state(args.u_base_csv);

    const FilterMethod method = parse_method(args.method);
    const auto t0 = std::chrono::steady_clock::now();
    const FilterStepResult res =
        method == FilterMethod::Heuristic
            ? filter_step_heuristic(scenario.barrier, x, u_base, engine.dynamics(),
                                    scenario.filter_noise, scenario.config)
            : filter_step_exact(scenario.barrier, x, u_base, engine.dynamics(),
                                scenario.filter_noise, scenario.config);
    const auto t1 = std::chrono::steady_clock::now();

    const auto tc = tightened_bounds(scenario.barrier, x, scenario.filter_noise, scenario.config);

    nlohmann::json out;
    out["status"] = to_string(res.status);
    out["method"] = args.method;
    out["state"] = std::vector<double>(x.data(), x.data() + x.size());
    out["u_base"] = std::vector<double>(u_base.data(), u_base.data() + u_base.size());
    out["h_at_x"] = tc.h_at_x;
    out["qp_solves"] = res.qp_solves;
    out["candidates_tried"] = res.candidates_tried;
    out["solve_time_us"] = std::chrono::duration<double, std::micro>(t1 - t0).count();
    if (res.status == QpStatus::Optimal) {
        out["u"] = std::vector<double>(res.u.data(), res.u.data() + res.u.size());
        out["assignment"] = res.assignment.j;
        out["objective"] = res.objective;
        nlohmann::json margins = nlohmann::json::array();
        const Vector next_mean = engine.dynamics().f(x, res.u);
        for (int i = 0; i < scenario.barrier.polyhedron_count(); ++i) {
            const int j = res.assignment.j[static_cast<size_t>(i)];
            const double lhs = scenario.barrier.polyhedron(i).facet_normal(j).dot(next_mean);
            margins.push_back(
                {{"polyhedron", i},
                 {"facet", j},
                 {"margin", lhs - tc.q[static_cast<size_t>(i)][static_cast<size_t>(j)]}});
        }
        out["margins"] = margins;
    }
    std::cout << out.dump(2) << "\n";

    if (!args.dump_qp.empty()) {
        // problem + solution for the selected assignment (or the first
        // candidate when infeasible) for offline triage
        IndexAssignment assignment = res.assignment;
        if (res.status != QpStatus::Optimal) {
            CandidateOrder order(scenario.barrier,
                                 scenario.config.order_anchor == OrderAnchor::CurrentState
                                     ? x
                                     : Vector(engine.dynamics().f(x, u_base)));
            assignment = *order.next();
        }
        const QpProblem qp =
            assignment_qp(scenario.barrier, x, u_base, engine.dynamics(), tc, assignment);
        nlohmann::json dump;
        dump["problem"] = qp.to_json();
        dump["solution"] = solve(qp, scenario.config.qp).to_json();
        dump["assignment"] = assignment.j;
        write_file(args.dump_qp, dump.dump(2) + "\n");
    }
    return res.status == QpStatus::Optimal ? kExitOk : kExitInfeasible;
}

struct MinSamplesArgs {
    double epsilon = 0.1;
    int horizon = 20;
    double gamma_tilde = 0.2;
    int np = 1;
    int nf_tot = 1;
    std::string mode = "state_independent";
    long n = 0;
};

int cmd_min_samples(const MinSamplesArgs& args) {
    FilterConfig cfg;
    cfg.epsilon = args.epsilon;
    cfg.horizon = args.horizon;
    cfg.gamma_tilde = args.gamma_tilde;
    cfg.mode = args.mode == "general" ? ConfidenceMode::General : ConfidenceMode::StateIndependent;
    cfg.validate();
    if (args.np < 1 || args.nf_tot < args.np) {
        throw ConfigError("need np >= 1 and nf_tot >= np");
    }

    const double delta = cfg.delta();
    const double delta_i = delta / static_cast<double>(args.np);
    const double gamma = cfg.gamma();
    const double dmin = min_samples(gamma / static_cast<double>(args.nf_tot), delta_i);
    const long required = static_cast<long>(std::floor(dmin)) + 1;

    nlohmann::json out;
    out["epsilon"] = args.epsilon;
    out["horizon"] = args.horizon;
    out["gamma_tilde"] = args.gamma_tilde;
    out["mode"] = args.mode;
    out["gamma"] = gamma;
    out["np"] = args.np;
    out["nf_tot"] = args.nf_tot;
    out["delta"] = delta;
    out["delta_i"] = delta_i;
    out["min_samples"] = dmin;
    out["required_n"] = required;
    if (args.n > 0) {
        out["n"] = args.n;
        if (static_cast<double>(args.n) > dmin) {
            out["tau"] = compute_tau(gamma, args.nf_tot, args.n, delta_i);
        } else {
            out["tau"] = nullptr;
            log(LogLevel::Warn, "n = ", args.n, " is below the required minimum ", required);
        }
    }
    if (required > 10'000'000L) {
        log(LogLevel::Warn, "required sample count ", required,
            " is beyond any practical dataset for this configuration");
    }
    std::cout << out.dump(2) << "\n";
    return kExitOk;
}

int cmd_validate(const std::string& scenario_path) {
    const Scenario sc = Scenario::load(scenario_path);  // load() validates
    ScenarioEngine engine(sc);

    nlohmann::json out;
    out["name"] = sc.name;
    out["valid"] = true;
    out["ns"] = sc.barrier.state_dim();
    out["np"] = sc.barrier.polyhedron_count();
    out["nf_tot"] = sc.barrier.total_facets();
    out["horizon"] = sc.horizon;
    out["epsilon"] = sc.config.epsilon;
    out["delta"] = sc.config.delta();
    out["delta_i"] = sc.config.delta() / sc.barrier.polyhedron_count();
    out["filter_noise"] = to_string(sc.filter_noise.kind());
    if (sc.filter_noise.kind() == NoiseKind::Empirical) {
        out["n"] = sc.filter_noise.sample_count();
    }
    // one filter evaluation from the initial state as a smoke check
    const Vector u0 = make_policy(sc.policy)(sc.x0, 0);
    const auto res = filter_step_heuristic(sc.barrier, sc.x0, u0, engine.dynamics(),
                                           sc.filter_noise, sc.config);
    out["feasible_at_x0"] = res.status == QpStatus::Optimal;
    std::cout << out.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic safety filters for piecewise-affine barriers"};
    app.require_subcommand(1);

    SimulateArgs sim_args;
    auto* sim = app.add_subcommand("simulate", "Run a seeded exit-probability campaign");
    sim->add_option("--scenario", sim_args.scenario_path, "Scenario JSON file")->required();
    sim->add_option("--runs", sim_args.runs, "Number of rollouts");
    sim->add_option("--seed", sim_args.seed, "Base seed (run k uses seed base+k)");
    sim->add_option("--method", sim_args.method, "heuristic|exact");
    sim->add_option("--out", sim_args.out_dir, "Output directory");
    sim->add_option("--parallel", sim_args.parallel, "Worker threads");
    sim->add_flag("--fallback-hold-input", sim_args.fallback_hold_input,
                  "Keep the last safe input on infeasible steps (outside the guarantee)");
    sim->add_option("--timings", sim_args.timings, "none|measured (none keeps outputs byte-stable)")
        ->check(CLI::IsMember({"none", "measured"}));
    sim->add_flag("--dump-trajectories", sim_args.dump_trajectories, "Write per-run state CSVs");
    sim->add_option("--epsilon", sim_args.epsilon_override, "Override the scenario's exit budget");
    sim->add_option("--dataset", sim_args.dataset_path,
                    "CSV of disturbance samples overriding the filter noise model");
    sim->add_flag("--header", sim_args.dataset_header, "Skip one header line in --dataset");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("benchmark", "Heuristic-vs-exact timing and suboptimality");
    bench->add_option("--scenario", bench_args.scenario_path, "Scenario JSON file")->required();
    bench->add_option("--runs", bench_args.runs, "Base-policy rollouts to probe");
    bench->add_option("--seed", bench_args.seed, "Base seed");
    bench->add_option("--out", bench_args.out_dir, "Output directory");
    bench->add_option("--cost-floor", bench_args.cost_floor,
                      "Discard steps whose best cost is below this");
    bench->add_option("--subopt-threshold", bench_args.subopt_threshold,
                      "Relative suboptimality counted as negligible");

    FilterStepArgs step_args;
    auto* step = app.add_subcommand("filter-step", "Evaluate the filter at one state");
    step->add_option("--scenario", step_args.scenario_path, "Scenario JSON file")->required();
    step->add_option("--barrier", step_args.barrier_path, "Barrier JSON overriding the scenario's");
    step->add_option("--state", step_args.state_csv, "State as comma-separated values")->required();
    step->add_option("--u-base", step_args.u_base_csv,
                     "Nominal input (default: the scenario base policy)");
    step->add_option("--method", step_args.method, "heuristic|exact");
    step->add_option("--dump-qp", step_args.dump_qp, "Write the assignment QP and its solution");
    step->add_option("--dataset", step_args.dataset_path,
                     "CSV of disturbance samples overriding the filter noise model");
    step->add_flag("--header", step_args.dataset_header, "Skip one header line in --dataset");

    MinSamplesArgs ms_args;
    auto* ms = app.add_subcommand("min-samples", "Data-driven sample-size requirements");
    ms->add_option("--epsilon", ms_args.epsilon, "Exit probability budget")->required();
    ms->add_option("--horizon", ms_args.horizon, "Horizon N")->required();
    ms->add_option("--gamma-tilde", ms_args.gamma_tilde, "Overall confidence budget");
    ms->add_option("--np", ms_args.np, "Number of polyhedra");
    ms->add_option("--nf-tot", ms_args.nf_tot, "Total facet count");
    ms->add_option("--mode", ms_args.mode, "state_independent|general")
        ->check(CLI::IsMember({"state_independent", "general"}));
    ms->add_option("--n", ms_args.n, "Report the order-statistic rank for this sample size");

    std::string validate_path;
    auto* val = app.add_subcommand("validate-scenario", "Check a scenario file");
    val->add_option("--scenario", validate_path, "Scenario JSON file")->required();

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return cmd_simulate(sim_args);
        if (bench->parsed()) return cmd_benchmark(bench_args);
        if (step->parsed()) return cmd_filter_step(step_args);
        if (ms->parsed()) return cmd_min_samples(ms_args);
        if (val->parsed()) return cmd_validate(validate_path);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
