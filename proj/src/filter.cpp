#include "pwashield/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pwashield {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Extremes of a . u over the box; empty bounds mean the whole space.
double box_min(const Vector& a, const Vector& lo, const Vector& hi) {
    double m = 0.0;
    for (Eigen::Index d = 0; d < a.size(); ++d) {
        if (a(d) == 0.0) continue;
        const double bound = a(d) > 0.0 ? (lo.size() ? lo(d) : -kInf) : (hi.size() ? hi(d) : kInf);
        m += a(d) * bound;
        if (std::isinf(m)) return -kInf;
    }
    return m;
}

double box_max(const Vector& a, const Vector& lo, const Vector& hi) {
    return -box_min(-a, lo, hi);
}

}  // namespace

void FilterConfig::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw ConfigError("epsilon must lie in (0, 1)");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    if (!(gamma_tilde > 0.0 && gamma_tilde < 1.0)) throw ConfigError("gamma_tilde must lie in (0, 1)");
    if (max_inner_iters < 0) throw ConfigError("max_inner_iters must be >= 0");
    if (enumeration_cap < 1) throw ConfigError("enumeration_cap must be >= 1");
    delta();  // range-checks per_step_delta against the horizon budget
}

double FilterConfig::delta() const {
    const double bound = delta_from_epsilon(epsilon, horizon);
    if (!per_step_delta) return bound;
    const double d = *per_step_delta;
    if (!(d > 0.0 && d < 1.0)) throw ConfigError("per_step_delta must lie in (0, 1)");
    if (d > bound + 1e-15) {
        throw ConfigError("per_step_delta " + std::to_string(d) +
                          " exceeds the admissible bound " + std::to_string(bound));
    }
    return std::min(d, bound);
}

double FilterConfig::gamma() const {
    return mode == ConfidenceMode::StateIndependent ? gamma_tilde
                                                    : gamma_tilde / static_cast<double>(horizon);
}

std::vector<double> allocate_risk(double delta, int np) {
    if (np < 1) throw ConfigError("allocate_risk: np must be >= 1");
    return std::vector<double>(static_cast<size_t>(np), delta / static_cast<double>(np));
}

long compute_tau(double gamma, int nf_tot, long n, double delta_i) {
    if (nf_tot < 1) throw ConfigError("compute_tau: nf_tot must be >= 1");
    const double level = gamma / static_cast<double>(nf_tot);
    const double dmin = min_samples(level, delta_i);
    if (!(static_cast<double>(n) > dmin)) {
        throw ConfigError("insufficient samples: need n > " + std::to_string(dmin) +
                          " (have n = " + std::to_string(n) + ")");
    }
    return binom_inv_cdf(level, n, delta_i);
}

EmpiricalQuantileCache EmpiricalQuantileCache::build(const PwaBarrier& h, const NoiseModel& noise,
                                                     const FilterConfig& cfg) {
    if (noise.kind() != NoiseKind::Empirical) {
        throw ConfigError("quantile cache requires an empirical noise model");
    }
    const int np = h.polyhedron_count();
    const auto deltas = allocate_risk(cfg.delta(), np);
    const int nf_tot = h.total_facets();
    const long n = noise.sample_count();

    EmpiricalQuantileCache cache;
    cache.sample_count = n;
    cache.gamma = cfg.gamma();
    cache.tau.resize(static_cast<size_t>(np));
    cache.z_tau.resize(static_cast<size_t>(np));
    for (int i = 0; i < np; ++i) {
        const long tau = compute_tau(cache.gamma, nf_tot, n, deltas[static_cast<size_t>(i)]);
        cache.tau[static_cast<size_t>(i)] = tau;
        const auto& poly = h.polyhedron(i);
        auto& row = cache.z_tau[static_cast<size_t>(i)];
        row.resize(static_cast<size_t>(poly.facet_count()));
        for (int j = 0; j < poly.facet_count(); ++j) {
            const auto sample = build_sample(noise.dataset(), poly.facet_normal(j).transpose());
            row[static_cast<size_t>(j)] = empirical_quantile_lb(sample, tau);
        }
    }
    return cache;
}

TightenedConstraints tightened_bounds(const PwaBarrier& h, const Vector& x, const NoiseModel& noise,
                                      const FilterConfig& cfg, const EmpiricalQuantileCache* cache,
                                      const Matrix* noise_matrix) {
    if (!x.allFinite()) throw std::invalid_argument("tightened_bounds: state must be finite");
    const int np = h.polyhedron_count();
    const auto deltas = allocate_risk(cfg.delta(), np);
    const int nf_tot = h.total_facets();

    TightenedConstraints tc;
    tc.h_at_x = h.evaluate(x);
    tc.q.resize(static_cast<size_t>(np));
    tc.b_tilde.resize(static_cast<size_t>(np));

    const bool empirical = noise.kind() == NoiseKind::Empirical;
    for (int i = 0; i < np; ++i) {
        const auto& poly = h.polyhedron(i);
        auto& qi = tc.q[static_cast<size_t>(i)];
        auto& bi = tc.b_tilde[static_cast<size_t>(i)];
        qi.resize(static_cast<size_t>(poly.facet_count()));
        bi.resize(static_cast<size_t>(poly.facet_count()));
        long tau = 0;
        if (empirical && !cache) {
            tau = compute_tau(cfg.gamma(), nf_tot, noise.sample_count(), deltas[static_cast<size_t>(i)]);
        }
        for (int j = 0; j < poly.facet_count(); ++j) {
            // Decrease condition h_i(x+) >= alpha h(x) shifts every facet
            // offset by alpha h(x): max_j c.x+ - b_j >= alpha h iff some
            // facet clears b_j + alpha h.
            const double b_tilde = poly.facet_offset(j) + cfg.alpha * tc.h_at_x;
            bi[static_cast<size_t>(j)] = b_tilde;
            const Vector c = poly.facet_normal(j).transpose();
            double quantile_term;
            if (empirical) {
                if (cache) {
                    quantile_term = cache->z_tau[static_cast<size_t>(i)][static_cast<size_t>(j)];
                } else {
                    const auto sample = noise_matrix ? build_sample(noise.dataset(), c, *noise_matrix)
                                                     : build_sample(noise.dataset(), c);
                    quantile_term = empirical_quantile_lb(sample, tau);
                }
            } else {
                const Vector dir = noise_matrix ? Vector(noise_matrix->transpose() * c) : c;
                if (cfg.sharp_discrete) {
                    quantile_term = -noise.linear_quantile(-dir, 1.0 - deltas[static_cast<size_t>(i)]);
                } else {
                    quantile_term = noise.linear_quantile(dir, deltas[static_cast<size_t>(i)]);
                }
            }
            qi[static_cast<size_t>(j)] = b_tilde - quantile_term;
            if (!std::isfinite(qi[static_cast<size_t>(j)])) {
                throw ConfigError("tightened bound is not finite");
            }
        }
    }
    return tc;
}

CandidateOrder::CandidateOrder(const PwaBarrier& h, const Vector& anchor) {
    const int np = h.polyhedron_count();
    std::vector<double> block(static_cast<size_t>(np));
    sigma_.resize(static_cast<size_t>(np));
    for (int i = 0; i < np; ++i) {
        const auto& poly = h.polyhedron(i);
        const Vector values = poly.C() * anchor - poly.b();
        block[static_cast<size_t>(i)] = values.maxCoeff();
        auto& sigma = sigma_[static_cast<size_t>(i)];
        sigma.resize(static_cast<size_t>(poly.facet_count()));
        std::iota(sigma.begin(), sigma.end(), 0);
        std::stable_sort(sigma.begin(), sigma.end(),
                         [&](int a, int b) { return values(a) > values(b); });
        total_ *= static_cast<double>(poly.facet_count());
    }
    poly_order_.resize(static_cast<size_t>(np));
    std::iota(poly_order_.begin(), poly_order_.end(), 0);
    // Decreasing block value: the most violated polyhedron ends up last and
    // therefore cycles fastest below.
    std::stable_sort(poly_order_.begin(), poly_order_.end(), [&](int a, int b) {
        return block[static_cast<size_t>(a)] > block[static_cast<size_t>(b)];
    });
    counter_.assign(static_cast<size_t>(np), 0);
}

std::optional<IndexAssignment> CandidateOrder::next() {
    if (done_) return std::nullopt;
    const size_t np = poly_order_.size();
    IndexAssignment out;
    out.j.resize(np);
    for (size_t k = 0; k < np; ++k) {
        const int poly = poly_order_[k];
        out.j[static_cast<size_t>(poly)] = sigma_[static_cast<size_t>(poly)][counter_[k]];
    }
    // Odometer with the last (most violated) position fastest.
    size_t k = np;
    while (k > 0) {
        --k;
        const int poly = poly_order_[k];
        if (++counter_[k] < sigma_[static_cast<size_t>(poly)].size()) break;
        counter_[k] = 0;
        if (k == 0) done_ = true;
    }
    return out;
}

QpProblem assignment_qp(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                        const Dynamics& dyn, const TightenedConstraints& tc,
                        const IndexAssignment& assignment) {
    const int np = h.polyhedron_count();
    const Vector drift = dyn.drift(x);
    const Matrix input_map = dyn.input_map(x);
    QpProblem qp;
    qp.u_ref = u_base;
    qp.A.resize(np, dyn.na);
    qp.lb.resize(np);
    for (int i = 0; i < np; ++i) {
        const int j = assignment.j[static_cast<size_t>(i)];
        const Vector c = h.polyhedron(i).facet_normal(j).transpose();
        qp.A.row(i) = (input_map.transpose() * c).transpose();
        qp.lb(i) = tc.q[static_cast<size_t>(i)][static_cast<size_t>(j)] - c.dot(drift);
    }
    qp.box_lo = dyn.input_lo;
    qp.box_hi = dyn.input_hi;
    return qp;
}

FilterStepResult filter_step_heuristic(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                                       const Dynamics& dyn, const NoiseModel& noise,
                                       const FilterConfig& cfg, const EmpiricalQuantileCache* cache) {
    const Matrix G = dyn.noise_map ? dyn.noise_map(x) : Matrix();
    const TightenedConstraints tc =
        tightened_bounds(h, x, noise, cfg, cache, dyn.noise_map ? &G : nullptr);
    const Vector anchor = cfg.order_anchor == OrderAnchor::CurrentState ? x : dyn.f(x, u_base);

    CandidateOrder order(h, anchor);
    FilterStepResult result;
    while (auto assignment = order.next()) {
        if (cfg.max_inner_iters > 0 && result.candidates_tried >= cfg.max_inner_iters) break;
        ++result.candidates_tried;
        const QpProblem qp = assignment_qp(h, x, u_base, dyn, tc, *assignment);
        const QpSolution sol = solve(qp, cfg.qp);
        ++result.qp_solves;
        if (sol.status == QpStatus::Optimal) {
            result.status = QpStatus::Optimal;
            result.u = sol.u;
            result.assignment = *assignment;
            result.objective = sol.objective;
            return result;
        }
    }
    result.status = QpStatus::Infeasible;
    return result;
}

FilterStepResult filter_step_exact(const PwaBarrier& h, const Vector& x, const Vector& u_base,
                                   const Dynamics& dyn, const NoiseModel& noise,
                                   const FilterConfig& cfg, const EmpiricalQuantileCache* cache) {
    const Matrix G = dyn.noise_map ? dyn.noise_map(x) : Matrix();
    const TightenedConstraints tc =
        tightened_bounds(h, x, noise, cfg, cache, dyn.noise_map ? &G : nullptr);
    const int np = h.polyhedron_count();
    const Vector drift = dyn.drift(x);
    const Matrix input_map = dyn.input_map(x);
    const double feas_tol = cfg.qp.feas_tol;

    // Per-facet halfspaces in input space: a_ij . u >= r_ij.
    std::vector<std::vector<Vector>> a(static_cast<size_t>(np));
    std::vector<std::vector<double>> r(static_cast<size_t>(np));
    // Assignment options after exact reductions: a facet satisfied over the
    // whole input box frees its polyhedron from the enumeration, a facet
    // violated over the whole box can never be selected.
    std::vector<int> fixed(static_cast<size_t>(np), -1);
    std::vector<std::vector<int>> options(static_cast<size_t>(np));
    FilterStepResult result;

    for (int i = 0; i < np; ++i) {
        const auto& poly = h.polyhedron(i);
        for (int j = 0; j < poly.facet_count(); ++j) {
            const Vector c = poly.facet_normal(j).transpose();
            Vector aij = input_map.transpose() * c;
            const double rij = tc.q[static_cast<size_t>(i)][static_cast<size_t>(j)] - c.dot(drift);
            a[static_cast<size_t>(i)].push_back(std::move(aij));
            r[static_cast<size_t>(i)].push_back(rij);
        }
        for (int j = 0; j < poly.facet_count() && fixed[static_cast<size_t>(i)] < 0; ++j) {
            if (box_min(a[static_cast<size_t>(i)][static_cast<size_t>(j)], dyn.input_lo, dyn.input_hi) >=
                r[static_cast<size_t>(i)][static_cast<size_t>(j)] - feas_tol) {
                fixed[static_cast<size_t>(i)] = j;
            }
        }
        if (fixed[static_cast<size_t>(i)] >= 0) continue;
        for (int j = 0; j < poly.facet_count(); ++j) {
            if (box_max(a[static_cast<size_t>(i)][static_cast<size_t>(j)], dyn.input_lo, dyn.input_hi) >=
                r[static_cast<size_t>(i)][static_cast<size_t>(j)] - feas_tol) {
                options[static_cast<size_t>(i)].push_back(j);
            }
        }
        if (options[static_cast<size_t>(i)].empty()) {
            result.status = QpStatus::Infeasible;  // no facet of P_i reachable
            return result;
        }
    }

    double count = 1.0;
    std::vector<int> open;  // polyhedra that still need enumeration
    for (int i = 0; i < np; ++i) {
        if (fixed[static_cast<size_t>(i)] < 0) {
            open.push_back(i);
            count *= static_cast<double>(options[static_cast<size_t>(i)].size());
        }
    }
    if (count > static_cast<double>(cfg.enumeration_cap)) {
        throw ConfigError("exact filter: assignment count " + std::to_string(count) +
                          " exceeds the enumeration cap; use the heuristic filter");
    }

    std::vector<size_t> counter(open.size(), 0);
    double best_objective = kInf;
    while (true) {
        IndexAssignment assignment;
        assignment.j.resize(static_cast<size_t>(np));
        for (int i = 0; i < np; ++i) assignment.j[static_cast<size_t>(i)] = fixed[static_cast<size_t>(i)];
        for (size_t k = 0; k < open.size(); ++k) {
            const int i = open[k];
            assignment.j[static_cast<size_t>(i)] = options[static_cast<size_t>(i)][counter[k]];
        }

        QpProblem qp;
        qp.u_ref = u_base;
        qp.A.resize(static_cast<Eigen::Index>(open.size()), dyn.na);
        qp.lb.resize(static_cast<Eigen::Index>(open.size()));
        for (size_t k = 0; k < open.size(); ++k) {
            const int i = open[k];
            const int j = assignment.j[static_cast<size_t>(i)];
            qp.A.row(static_cast<Eigen::Index>(k)) =
                a[static_cast<size_t>(i)][static_cast<size_t>(j)].transpose();
            qp.lb(static_cast<Eigen::Index>(k)) = r[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
        qp.box_lo = dyn.input_lo;
        qp.box_hi = dyn.input_hi;
        const QpSolution sol = solve(qp, cfg.qp);
        ++result.qp_solves;
        ++result.candidates_tried;
        if (sol.status == QpStatus::Optimal && sol.objective < best_objective) {
            best_objective = sol.objective;
            result.status = QpStatus::Optimal;
            result.u = sol.u;
            result.assignment = assignment;
            result.objective = sol.objective;
        }

        // Lexicographic odometer over the open polyhedra.
        size_t k = open.size();
        bool exhausted = true;
        while (k > 0) {
            --k;
            const int i = open[k];
            if (++counter[k] < options[static_cast<size_t>(i)].size()) {
                exhausted = false;
                break;
            }
            counter[k] = 0;
        }
        if (exhausted) break;
    }
    if (result.status != QpStatus::Optimal) result.status = QpStatus::Infeasible;
    return result;
}

}  // namespace pwashield
