#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "pwashield/barrier.hpp"
#include "pwashield/dynamics.hpp"
#include "pwashield/noise.hpp"
#include "pwashield/qp.hpp"

namespace pwashield {

/// Bad parameter combinations (tolerance budgets, sample sizes, caps).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ConfidenceMode { StateIndependent, General };
enum class OrderAnchor { CurrentState, PredictedState };

struct FilterConfig {
    double epsilon = 0.1;
    int horizon = 1;
    double alpha = 0.0;
    // Per-step violation budget; defaults to the largest value admissible
    // for (epsilon, horizon). Values above the bound by more than 1e-15 are
    // rejected; within 1e-15 they are clamped.
    std::optional<double> per_step_delta;
    double gamma_tilde = 0.2;
    ConfidenceMode mode = ConfidenceMode::StateIndependent;
    int max_inner_iters = 32;  // 0 = unlimited
    OrderAnchor order_anchor = OrderAnchor::CurrentState;
    // Sharper analytic tightening for discrete/mixed noise: replaces
    // -q_delta(c.g) by q_{1-delta}(-c.g). No effect on continuous noise.
    bool sharp_discrete = false;
    long enumeration_cap = 1'000'000;
    QpTolerances qp;

    void validate() const;
    double delta() const;
    // Effective confidence spent per quantile estimation: gamma_tilde when
    // the estimate is reused across the horizon, gamma_tilde / horizon when
    // it is state-dependent.
    double gamma() const;
};

std::vector<double> allocate_risk(double delta, int np);

// Order-statistic rank for the data-driven lower confidence bound.
long compute_tau(double gamma, int nf_tot, long n, double delta_i);

/// One facet constraint per (i, j): the next state must satisfy
/// c_ij . x+ >= q_ij, where q_ij folds the decrease term and the noise
/// quantile into the offset.
struct TightenedConstraints {
    std::vector<std::vector<double>> q;        // q_ij(x)
    std::vector<std::vector<double>> b_tilde;  // b_ij - alpha h(x)
    double h_at_x = 0.0;
};

/// Precomputed order-statistic bounds for state-independent empirical noise;
/// build once, reuse across a rollout.
struct EmpiricalQuantileCache {
    std::vector<std::vector<double>> z_tau;  // Z^{ij}_(tau_i)
    std::vector<long> tau;
    long sample_count = 0;
    double gamma = 0.0;

    static EmpiricalQuantileCache build(const PwaBarrier& h, const NoiseModel& noise,
                                        const FilterConfig& cfg);
};

TightenedConstraints tightened_bounds(const PwaBarrier& h, const Vector& x, const NoiseModel& noise,
                                      const FilterConfig& cfg,
                                      const EmpiricalQuantileCache* cache = nullptr,
                                      const Matrix* noise_matrix = nullptr);

struct IndexAssignment {
    std::vector<int> j;  // facet per polyhedron, 0-based

    bool operator==(const IndexAssignment&) const = default;
};

/// Lazy enumeration of facet assignments in the greedy search order: facets
/// of each polyhedron sorted by decreasing barrier section value at the
/// anchor, polyhedra sorted by decreasing block value, and the product
/// traversed lexicographically with the most-violated polyhedron innermost.
class CandidateOrder {
public:
    CandidateOrder(const PwaBarrier& h, const Vector& anchor);
    std::optional<IndexAssignment> next();
    double total() const { return total_; }

private:
    std::vector<int> poly_order_;
    std::vector<std::vector<int>> sigma_;
    std::vector<size_t> counter_;
    double total_ = 1.0;
    bool done_ = false;
};

struct FilterStepResult {
    QpStatus status = QpStatus::Infeasible;
    Vector u;
    IndexAssignment assignment;
    double objective = std::numeric_limits<double>::quiet_NaN();
    int qp_solves = 0;
    int candidates_tried = 0;
};

// QP for one assignment: project u_base onto the inputs steering every
// chosen facet constraint, intersected with the input box.
QpProblem assignment_qp(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                        const Dynamics& dyn, const TightenedConstraints& tc,
                        const IndexAssignment& assignment);

FilterStepResult filter_step_heuristic(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                                       const Dynamics& dyn, const NoiseModel& noise,
                                       const FilterConfig& cfg,
                                       const EmpiricalQuantileCache* cache = nullptr);

// Enumerates every assignment (after exact vacuity/unsatisfiability
// reductions against the input box) and returns the minimum-objective
// solution; matches the mixed-integer formulation of the filter.
FilterStepResult filter_step_exact(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                                   const Dynamics& dyn, const NoiseModel& noise,
                                   const FilterConfig& cfg,
                                   const EmpiricalQuantileCache* cache = nullptr);

}  // namespace pwashield
