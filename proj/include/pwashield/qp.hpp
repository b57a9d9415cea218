#pragma once

#include <Eigen/Dense>
#include <limits>

#include "json.hpp"

namespace pwashield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Euclidean projection problem: argmin ||u - u_ref||^2 subject to
/// A u >= lb and optional per-coordinate box bounds. Box entries may be
/// +-infinity; empty box vectors mean unbounded.
struct QpProblem {
    Vector u_ref;
    Matrix A;   // m x na
    Vector lb;  // length m
    Vector box_lo;
    Vector box_hi;

    int num_vars() const { return static_cast<int>(u_ref.size()); }
    int num_rows() const { return static_cast<int>(A.rows()); }

    nlohmann::json to_json() const;
};

enum class QpStatus { Optimal, Infeasible, MaxIterations };

const char* to_string(QpStatus status);

/// Duals and the Farkas certificate are indexed over the expanded row list:
/// the m general rows first, then lower-bound rows (e_d u >= lo_d) and
/// upper-bound rows (-e_d u >= -hi_d) for each bounded coordinate d in order.
struct QpSolution {
    QpStatus status = QpStatus::Infeasible;
    Vector u;
    double objective = std::numeric_limits<double>::quiet_NaN();
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    double max_violation = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    Vector dual;
    // Infeasible only: y >= 0 with A_exp^T y ~ 0 and certificate_gap =
    // y . lb_exp - y . A_exp u > feas_tol.
    Vector farkas;
    double certificate_gap = 0.0;
    int regularized_pivots = 0;

    nlohmann::json to_json() const;
};

struct QpTolerances {
    double feas_tol = 1e-8;
    double stat_tol = 1e-9;
    int max_iterations = 0;  // 0: use 10 * (rows + vars)
};

/// Dual active-set projection (identity Hessian). Starts from the
/// unconstrained optimum u_ref and adds violated constraints one at a time;
/// detects infeasibility through a blocked dual step and reports the ray.
QpSolution solve(const QpProblem& problem, const QpTolerances& tol = {});

struct FeasibilityReport {
    bool feasible = false;
    // Largest uniform slack achievable across all (expanded) constraints;
    // negative when infeasible, +inf when the slack is unbounded.
    double margin = 0.0;
};

FeasibilityReport feasibility_check(const QpProblem& problem, const QpTolerances& tol = {});

}  // namespace pwashield
