#include "pwashield/qp.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "pwashield/log.hpp"

namespace pwashield {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// General rows first, then finite box bounds as unit rows.
void expand_rows(const QpProblem& p, Matrix& rows, Vector& rhs) {
    const int na = p.num_vars();
    const int m = p.num_rows();
    int extra = 0;
    for (int d = 0; d < na; ++d) {
        if (p.box_lo.size() == na && p.box_lo(d) > -kInf) ++extra;
        if (p.box_hi.size() == na && p.box_hi(d) < kInf) ++extra;
    }
    rows.resize(m + extra, na);
    rhs.resize(m + extra);
    if (m > 0) {
        rows.topRows(m) = p.A;
        rhs.head(m) = p.lb;
    }
    int r = m;
    for (int d = 0; d < na; ++d) {
        if (p.box_lo.size() == na && p.box_lo(d) > -kInf) {
            rows.row(r).setZero();
            rows(r, d) = 1.0;
            rhs(r) = p.box_lo(d);
            ++r;
        }
        if (p.box_hi.size() == na && p.box_hi(d) < kInf) {
            rows.row(r).setZero();
            rows(r, d) = -1.0;
            rhs(r) = -p.box_hi(d);
            ++r;
        }
    }
}

void validate(const QpProblem& p) {
    const int na = p.num_vars();
    if (na < 1) throw std::invalid_argument("qp: empty decision vector");
    if (p.A.rows() != p.lb.size()) throw std::invalid_argument("qp: A/lb row mismatch");
    if (p.A.rows() > 0 && p.A.cols() != na) throw std::invalid_argument("qp: A column mismatch");
    const bool has_lo = p.box_lo.size() > 0;
    const bool has_hi = p.box_hi.size() > 0;
    if ((has_lo && p.box_lo.size() != na) || (has_hi && p.box_hi.size() != na)) {
        throw std::invalid_argument("qp: box dimension mismatch");
    }
    if (has_lo && has_hi) {
        for (int d = 0; d < na; ++d) {
            if (p.box_lo(d) > p.box_hi(d)) {
                throw std::invalid_argument("qp: box lower bound exceeds upper bound");
            }
        }
    }
}

struct ActiveSet {
    std::vector<int> rows;        // constraint indices, in addition order
    std::vector<double> duals;    // matching multipliers
    int size() const { return static_cast<int>(rows.size()); }
};

// Decompose n_p against the active normals: n_p = N r + z with z orthogonal
// to the active span. Returns the number of regularized diagonal entries.
int decompose(const Matrix& normals_t, const ActiveSet& act, const Vector& n_p, Vector& r, Vector& z) {
    const int q = act.size();
    const int na = static_cast<int>(n_p.size());
    int regularized = 0;
    if (q == 0) {
        r.resize(0);
        z = n_p;
        return 0;
    }
    Matrix N(na, q);
    for (int i = 0; i < q; ++i) N.col(i) = normals_t.row(act.rows[static_cast<size_t>(i)]).transpose();
    Eigen::HouseholderQR<Matrix> qr(N);
    Matrix Q1 = qr.householderQ() * Matrix::Identity(na, q);
    Matrix R1 = qr.matrixQR().topRows(q).triangularView<Eigen::Upper>();
    Vector d1 = Q1.transpose() * n_p;
    z = n_p - Q1 * d1;
    // Back-substitution with a small diagonal floor against near-parallel
    // active constraints.
    r.resize(q);
    for (int i = q - 1; i >= 0; --i) {
        double diag = R1(i, i);
        if (std::fabs(diag) < 1e-12) {
            diag += (diag >= 0.0 ? 1e-12 : -1e-12);
            ++regularized;
        }
        double s = d1(i);
        for (int j = i + 1; j < q; ++j) s -= R1(i, j) * r(j);
        r(i) = s / diag;
    }
    return regularized;
}

}  // namespace

const char* to_string(QpStatus status) {
    switch (status) {
        case QpStatus::Optimal: return "optimal";
        case QpStatus::Infeasible: return "infeasible";
        case QpStatus::MaxIterations: return "max_iterations";
    }
    return "?";
}

namespace {
QpSolution solve_impl(const QpProblem& problem, const QpTolerances& tol);
}  // namespace

QpSolution solve(const QpProblem& problem, const QpTolerances& tol) {
    QpSolution sol = solve_impl(problem, tol);
    if (sol.regularized_pivots > 0) {
        log(LogLevel::Debug, "qp: regularized ", sol.regularized_pivots,
            " near-singular pivot(s) with a 1e-12 diagonal floor");
    }
    return sol;
}

namespace {
QpSolution solve_impl(const QpProblem& problem, const QpTolerances& tol) {
    validate(problem);
    Matrix rows;
    Vector rhs;
    expand_rows(problem, rows, rhs);
    const int m = static_cast<int>(rows.rows());
    const int na = problem.num_vars();
    const int max_iters = tol.max_iterations > 0 ? tol.max_iterations : 10 * (m + na);

    QpSolution sol;
    sol.u = problem.u_ref;
    ActiveSet act;
    Vector r, z;
    int pivots = 0;

    auto finish_optimal = [&]() {
        sol.status = QpStatus::Optimal;
        sol.objective = (sol.u - problem.u_ref).squaredNorm();
        sol.iterations = pivots;
        sol.dual = Vector::Zero(m);
        for (int i = 0; i < act.size(); ++i) {
            sol.dual(act.rows[static_cast<size_t>(i)]) = act.duals[static_cast<size_t>(i)];
        }
        // Residuals are scaled: thin-wedge instances put the projection and
        // its multipliers far from the origin.
        const Vector grad = sol.u - problem.u_ref;
        const Vector pulled = rows.transpose() * sol.dual;
        const double stat_scale =
            std::max({1.0, grad.lpNorm<Eigen::Infinity>(), pulled.lpNorm<Eigen::Infinity>()});
        const double stat = (grad - pulled).lpNorm<Eigen::Infinity>() / stat_scale;
        const Vector slack = rows * sol.u - rhs;
        double comp = 0.0;
        for (int i = 0; i < m; ++i) {
            const double scale = std::max({1.0, std::fabs(sol.dual(i)), std::fabs(slack(i))});
            comp = std::max(comp, std::fabs(sol.dual(i) * slack(i)) / scale);
        }
        sol.kkt_residual = std::max(stat, comp);
        sol.max_violation = m > 0 ? std::max(0.0, -slack.minCoeff()) : 0.0;
        return sol;
    };

    while (true) {
        // Most violated inactive constraint (lowest index on ties).
        int p = -1;
        double worst = -tol.feas_tol;
        const Vector slack = rows * sol.u - rhs;
        for (int i = 0; i < m; ++i) {
            bool active = false;
            for (int a : act.rows) {
                if (a == i) { active = true; break; }
            }
            if (active) continue;
            if (slack(i) < worst) {
                worst = slack(i);
                p = i;
            }
        }
        if (p < 0) return finish_optimal();

        const Vector n_p = rows.row(p).transpose();
        double dual_p = 0.0;

        // Dual iteration for constraint p.
        while (true) {
            if (++pivots > max_iters) {
                sol.status = QpStatus::MaxIterations;
                sol.iterations = pivots;
                return sol;
            }
            sol.regularized_pivots += decompose(rows, act, n_p, r, z);
            const double zz = z.squaredNorm();
            const bool dependent = zz <= 1e-24 * std::max(1.0, n_p.squaredNorm());

            // Largest dual step before an active multiplier hits zero.
            double t1 = kInf;
            int drop = -1;
            for (int i = 0; i < act.size(); ++i) {
                if (r(i) > 0.0) {
                    const double cand = act.duals[static_cast<size_t>(i)] / r(i);
                    if (cand < t1) {
                        t1 = cand;
                        drop = i;
                    }
                }
            }

            if (dependent) {
                if (drop < 0) {
                    // n_p lies in the span of the active normals with no
                    // droppable blocker: the system is inconsistent.
                    sol.status = QpStatus::Infeasible;
                    sol.iterations = pivots;
                    sol.farkas = Vector::Zero(m);
                    sol.farkas(p) = 1.0;
                    for (int i = 0; i < act.size(); ++i) {
                        sol.farkas(act.rows[static_cast<size_t>(i)]) = std::max(0.0, -r(i));
                    }
                    sol.certificate_gap = sol.farkas.dot(rhs) - (rows.transpose() * sol.farkas).dot(sol.u);
                    return sol;
                }
                for (int i = 0; i < act.size(); ++i) act.duals[static_cast<size_t>(i)] -= t1 * r(i);
                dual_p += t1;
                act.rows.erase(act.rows.begin() + drop);
                act.duals.erase(act.duals.begin() + drop);
                continue;
            }

            const double s_p = n_p.dot(sol.u) - rhs(p);
            const double t2 = -s_p / zz;  // step along z until constraint p is tight
            const double t = std::min(t1, t2);
            sol.u += t * z;
            for (int i = 0; i < act.size(); ++i) act.duals[static_cast<size_t>(i)] -= t * r(i);
            dual_p += t;
            if (t == t2) {
                act.rows.push_back(p);
                act.duals.push_back(dual_p);
                break;  // constraint satisfied, scan for the next violation
            }
            act.rows.erase(act.rows.begin() + drop);
            act.duals.erase(act.duals.begin() + drop);
        }
    }
}
}  // namespace

FeasibilityReport feasibility_check(const QpProblem& problem, const QpTolerances& tol) {
    validate(problem);
    Matrix rows;
    Vector rhs;
    expand_rows(problem, rows, rhs);

    QpProblem shifted;
    shifted.u_ref = problem.u_ref;
    shifted.A = rows;

    auto feasible_at = [&](double t) {
        shifted.lb = rhs.array() + t;
        return solve(shifted, tol).status == QpStatus::Optimal;
    };

    FeasibilityReport report;
    report.feasible = feasible_at(0.0);

    constexpr double kCap = 1e9;
    double lo, hi;
    if (report.feasible) {
        lo = 0.0;
        hi = 1.0;
        while (hi < kCap && feasible_at(hi)) {
            lo = hi;
            hi *= 4.0;
        }
        if (hi >= kCap && feasible_at(kCap)) {
            report.margin = kInf;
            return report;
        }
    } else {
        hi = 0.0;
        lo = -1.0;
        while (lo > -kCap && !feasible_at(lo)) {
            hi = lo;
            lo *= 4.0;
        }
        if (lo <= -kCap && !feasible_at(-kCap)) {
            report.margin = -kInf;
            return report;
        }
    }
    for (int it = 0; it < 120 && hi - lo > 1e-10 * std::max(1.0, std::fabs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (feasible_at(mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    report.margin = report.feasible ? lo : hi;
    return report;
}

nlohmann::json QpProblem::to_json() const {
    nlohmann::json j;
    j["u_ref"] = std::vector<double>(u_ref.data(), u_ref.data() + u_ref.size());
    j["A"] = nlohmann::json::array();
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < A.cols(); ++c) row.push_back(A(r, c));
        j["A"].push_back(row);
    }
    j["lb"] = std::vector<double>(lb.data(), lb.data() + lb.size());
    auto bound_array = [](const Vector& v) {
        nlohmann::json a = nlohmann::json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::isinf(v(i))) {
                a.push_back(v(i) > 0 ? "inf" : "-inf");
            } else {
                a.push_back(v(i));
            }
        }
        return a;
    };
    if (box_lo.size() > 0) j["box_lo"] = bound_array(box_lo);
    if (box_hi.size() > 0) j["box_hi"] = bound_array(box_hi);
    return j;
}

nlohmann::json QpSolution::to_json() const {
    nlohmann::json j;
    j["status"] = to_string(status);
    if (status == QpStatus::Optimal) {
        j["u"] = std::vector<double>(u.data(), u.data() + u.size());
        j["objective"] = objective;
        j["kkt_residual"] = kkt_residual;
        j["max_violation"] = max_violation;
    }
    j["iterations"] = iterations;
    if (farkas.size() > 0) {
        j["farkas"] = std::vector<double>(farkas.data(), farkas.data() + farkas.size());
        j["certificate_gap"] = certificate_gap;
    }
    return j;
}

}  // namespace pwashield
