#include "pwashield/noise.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "pwashield/rng.hpp"

namespace pwashield {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Internal sample used for Monte Carlo CDF inversion of non-axis-aligned
// linear functionals of Laplace / Student-t noise (documented tolerance
// ~1e-4 on the quantile).
constexpr long kMcInversionDraws = 2'000'000;
constexpr std::uint64_t kMcInversionSeed = 20260101ULL;

struct KahanSum {
    long double sum = 0.0L;
    long double carry = 0.0L;
    void add(long double value) {
        const long double y = value - carry;
        const long double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
};

// Extended precision: the lgamma differences are catastrophic in double for
// n near 1e6, and the 1e-12 absolute CDF target needs the headroom.
long double log_binom_pmf(long i, long n, double p) {
    return lgammal(static_cast<long double>(n) + 1.0L) -
           lgammal(static_cast<long double>(i) + 1.0L) -
           lgammal(static_cast<long double>(n - i) + 1.0L) +
           static_cast<long double>(i) * logl(static_cast<long double>(p)) +
           static_cast<long double>(n - i) * log1pl(static_cast<long double>(-p));
}

void check_level(double value, const char* name) {
    if (!(value > 0.0 && value < 1.0)) {
        throw std::invalid_argument(std::string(name) + " must lie strictly inside (0, 1)");
    }
}

// Continued fraction for the regularized incomplete beta (Lentz's method).
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Wichura's AS241 rational approximation, followed by one Halley refinement
// against the erfc-based CDF away from the far tails.
double normal_inv_cdf(double p) {
    check_level(p, "p");
    const double q = p - 0.5;
    double x;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        x = q *
            (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                  6.7265770927008700853e4) *
                     r +
                 4.5921953931549871457e4) *
                    r +
                1.3731693765509461125e4) *
                   r +
               1.9715909503065514427e3) *
                  r +
              1.3314166789178437745e2) *
                 r +
             3.3871328727963666080e0) /
            (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                  3.9307895800092710610e4) *
                     r +
                 2.1213794301586595867e4) *
                    r +
                5.3941960214247511077e3) *
                   r +
               6.8718700749205790830e2) *
                  r +
              4.2313330701600911252e1) *
                 r +
             1.0);
    } else {
        double r = (q < 0.0) ? p : 1.0 - p;
        r = std::sqrt(-std::log(r));
        if (r <= 5.0) {
            r -= 1.6;
            x = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                      2.41780725177450611770e-1) *
                         r +
                     1.27045825245236838258e0) *
                        r +
                    3.64784832476320460504e0) *
                       r +
                   5.76949722146069140550e0) *
                      r +
                  4.63033784615654529590e0) *
                     r +
                 1.42343711074968357734e0) /
                (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                      1.51986665636164571966e-2) *
                         r +
                     1.48103976427480074590e-1) *
                        r +
                    6.89767334985100004550e-1) *
                       r +
                   1.67638483018380384940e0) *
                      r +
                  2.05319162663775882187e0) *
                     r +
                 1.0);
        } else {
            r -= 5.0;
            x = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                      1.24266094738807843860e-3) *
                         r +
                     2.65321895265761230930e-2) *
                        r +
                    2.96560571828504891230e-1) *
                       r +
                   1.78482653991729133580e0) *
                      r +
                  5.46378491116411436990e0) *
                     r +
                 6.65790464350110377720e0) /
                (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                      1.84631831751005468180e-5) *
                         r +
                     7.86869131145613259100e-4) *
                        r +
                    1.48753612908506148525e-2) *
                       r +
                   1.36929880922735805310e-1) *
                      r +
                  5.99832206555887937690e-1) *
                     r +
                 1.0);
        }
        if (q < 0.0) x = -x;
    }
    if (std::fabs(x) < 8.0) {
        const double err = normal_cdf(x) - p;
        const double u = err * std::sqrt(2.0 * kPi) * std::exp(0.5 * x * x);
        x -= u / (1.0 + 0.5 * x * u);
    }
    return x;
}

double binom_cdf(long k, long n, double p) {
    if (n < 0 || k < 0 || k > n) throw std::invalid_argument("binom_cdf: need 0 <= k <= n");
    check_level(p, "p");
    if (k == n) return 1.0;
    KahanSum acc;
    for (long i = 0; i <= k; ++i) acc.add(expl(log_binom_pmf(i, n, p)));
    return std::min(static_cast<double>(acc.sum), 1.0);
}

long binom_inv_cdf(double gamma, long n, double p) {
    if (n < 0) throw std::invalid_argument("binom_inv_cdf: n must be nonnegative");
    check_level(gamma, "gamma");
    check_level(p, "p");
    KahanSum acc;
    for (long k = 0; k <= n; ++k) {
        acc.add(expl(log_binom_pmf(k, n, p)));
        if (acc.sum >= static_cast<long double>(gamma)) return k;
    }
    return n;  // CDF(n) = 1 >= gamma up to roundoff
}

double min_samples(double gamma, double delta) {
    check_level(gamma, "gamma");
    check_level(delta, "delta");
    return std::log(gamma) / std::log1p(-delta);
}

double delta_from_epsilon(double epsilon, int horizon) {
    check_level(epsilon, "epsilon");
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    return -std::expm1(std::log1p(-epsilon) / static_cast<double>(horizon));
}

double empirical_quantile_lb(std::span<const double> sample, long tau) {
    const long n = static_cast<long>(sample.size());
    if (tau < 1 || tau > n) {
        throw std::out_of_range("empirical_quantile_lb: rank " + std::to_string(tau) +
                                " outside [1, " + std::to_string(n) + "]");
    }
    std::vector<double> work(sample.begin(), sample.end());
    std::nth_element(work.begin(), work.begin() + (tau - 1), work.end());
    return work[static_cast<size_t>(tau - 1)];
}

std::vector<double> build_sample(const Matrix& dataset, const Vector& c) {
    if (dataset.cols() != c.size()) {
        throw std::invalid_argument("build_sample: direction dimension mismatch");
    }
    std::vector<double> out(static_cast<size_t>(dataset.rows()));
    for (Eigen::Index t = 0; t < dataset.rows(); ++t) out[static_cast<size_t>(t)] = dataset.row(t).dot(c);
    return out;
}

std::vector<double> build_sample(const Matrix& dataset, const Vector& c, const Matrix& noise_matrix) {
    if (noise_matrix.rows() != c.size()) {
        throw std::invalid_argument("build_sample: noise matrix dimension mismatch");
    }
    return build_sample(dataset, noise_matrix.transpose() * c);
}

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::Gaussian: return "gaussian";
        case NoiseKind::Laplace: return "laplace";
        case NoiseKind::StudentT: return "student_t";
        case NoiseKind::Empirical: return "empirical";
    }
    return "?";
}

NoiseModel NoiseModel::gaussian(Vector mean, Matrix covariance) {
    if (covariance.rows() != covariance.cols() || covariance.rows() != mean.size()) {
        throw std::invalid_argument("gaussian: mean/covariance dimensions disagree");
    }
    Matrix sym = 0.5 * (covariance + covariance.transpose());
    NoiseModel m;
    m.kind_ = NoiseKind::Gaussian;
    m.dim_ = static_cast<int>(mean.size());
    m.location_ = std::move(mean);
    Matrix offdiag = sym;
    offdiag.diagonal().setZero();
    if (offdiag.cwiseAbs().maxCoeff() == 0.0) {
        // Diagonal covariance: keep the factor axis-aligned so uniform d
        // drives coordinate d of the draw.
        Vector diag = sym.diagonal();
        if (diag.minCoeff() < -1e-10) {
            throw std::invalid_argument("gaussian: covariance is not positive semidefinite");
        }
        diag = diag.cwiseMax(0.0);
        m.covariance_ = diag.asDiagonal();
        m.factor_ = diag.cwiseSqrt().asDiagonal();
        return m;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    Vector evals = eig.eigenvalues();
    if (evals.minCoeff() < -1e-10) {
        throw std::invalid_argument("gaussian: covariance is not positive semidefinite");
    }
    evals = evals.cwiseMax(0.0);
    m.covariance_ = eig.eigenvectors() * evals.asDiagonal() * eig.eigenvectors().transpose();
    m.factor_ = eig.eigenvectors() * evals.cwiseSqrt().asDiagonal();
    return m;
}

NoiseModel NoiseModel::laplace(Vector location, Vector scale) {
    if (location.size() != scale.size()) throw std::invalid_argument("laplace: dimension mismatch");
    if ((scale.array() < 0.0).any()) throw std::invalid_argument("laplace: scales must be >= 0");
    NoiseModel m;
    m.kind_ = NoiseKind::Laplace;
    m.dim_ = static_cast<int>(location.size());
    m.location_ = std::move(location);
    m.scale_ = std::move(scale);
    return m;
}

NoiseModel NoiseModel::student_t(Vector location, Vector scale, double dof) {
    if (location.size() != scale.size()) throw std::invalid_argument("student_t: dimension mismatch");
    if ((scale.array() < 0.0).any()) throw std::invalid_argument("student_t: scales must be >= 0");
    if (!(dof > 0.0)) throw std::invalid_argument("student_t: dof must be positive");
    NoiseModel m;
    m.kind_ = NoiseKind::StudentT;
    m.dim_ = static_cast<int>(location.size());
    m.location_ = std::move(location);
    m.scale_ = std::move(scale);
    m.dof_ = dof;
    return m;
}

NoiseModel NoiseModel::empirical(Matrix dataset) {
    if (dataset.rows() < 1) throw std::invalid_argument("empirical: dataset needs at least one row");
    NoiseModel m;
    m.kind_ = NoiseKind::Empirical;
    m.dim_ = static_cast<int>(dataset.cols());
    m.dataset_ = std::move(dataset);
    return m;
}

NoiseModel NoiseModel::empirical_from_csv(const std::string& path, bool skip_header) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && skip_header) {
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (!rows.empty() && row.size() != rows.front().size()) {
            throw std::runtime_error("dataset file has ragged rows: " + path);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::runtime_error("dataset file is empty: " + path);
    Matrix data(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (size_t r = 0; r < rows.size(); ++r) {
        for (size_t c = 0; c < rows[r].size(); ++c) {
            data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
    }
    return empirical(std::move(data));
}

const Matrix& NoiseModel::dataset() const {
    if (kind_ != NoiseKind::Empirical) throw std::logic_error("dataset(): model is not empirical");
    return dataset_;
}

long NoiseModel::sample_count() const { return static_cast<long>(dataset().rows()); }

const Matrix& NoiseModel::covariance() const {
    if (kind_ != NoiseKind::Gaussian) throw std::logic_error("covariance(): model is not Gaussian");
    return covariance_;
}

double NoiseModel::linear_quantile(const Vector& c, double delta) const {
    check_level(delta, "delta");
    if (c.size() != dim_) throw std::invalid_argument("linear_quantile: direction dimension mismatch");
    switch (kind_) {
        case NoiseKind::Empirical:
            throw std::logic_error(
                "linear_quantile: empirical model has no analytic quantile; use "
                "build_sample + empirical_quantile_lb");
        case NoiseKind::Gaussian: {
            const double mu = c.dot(location_);
            const double var = c.dot(covariance_ * c);
            const double s = std::sqrt(std::max(var, 0.0));
            if (s == 0.0) return mu;
            return mu + s * normal_inv_cdf(delta);
        }
        case NoiseKind::Laplace:
        case NoiseKind::StudentT:
            break;
    }
    // Independent coordinates: c . xi = shift + sum over random coordinates.
    double shift = 0.0;
    std::vector<int> active;
    for (int k = 0; k < dim_; ++k) {
        if (c(k) == 0.0) continue;
        shift += c(k) * location_(k);
        if (scale_(k) > 0.0) active.push_back(k);
    }
    if (active.empty()) return shift;
    if (active.size() == 1) {
        const int k = active.front();
        const double a = std::fabs(c(k) * scale_(k));
        const double q = (kind_ == NoiseKind::Laplace) ? detail::laplace_quantile(delta)
                                                       : detail::student_t_quantile(delta, dof_);
        return shift + a * q;  // symmetric standardized distribution
    }
    // Sum of several independent heavy-tailed coordinates: no closed form.
    // Invert the CDF on a fixed-seed Monte Carlo sample.
    std::vector<double> draws(static_cast<size_t>(kMcInversionDraws));
    for (long t = 0; t < kMcInversionDraws; ++t) {
        double z = shift;
        for (size_t a = 0; a < active.size(); ++a) {
            const int k = active[a];
            const double u = uniform_draw(kMcInversionSeed, static_cast<std::uint64_t>(t),
                                          static_cast<std::uint64_t>(a));
            const double w = (kind_ == NoiseKind::Laplace) ? detail::laplace_quantile(u)
                                                           : detail::student_t_quantile(u, dof_);
            z += c(k) * scale_(k) * w;
        }
        draws[static_cast<size_t>(t)] = z;
    }
    const long rank = std::max<long>(1, static_cast<long>(std::ceil(delta * static_cast<double>(kMcInversionDraws))));
    return empirical_quantile_lb(draws, rank);
}

Vector NoiseModel::sample_from_uniforms(std::span<const double> uniforms) const {
    if (static_cast<int>(uniforms.size()) < dim_) {
        throw std::invalid_argument("sample_from_uniforms: not enough uniforms");
    }
    switch (kind_) {
        case NoiseKind::Gaussian: {
            Vector z(dim_);
            for (int i = 0; i < dim_; ++i) z(i) = normal_inv_cdf(uniforms[static_cast<size_t>(i)]);
            return location_ + factor_ * z;
        }
        case NoiseKind::Laplace: {
            Vector x = location_;
            for (int i = 0; i < dim_; ++i) {
                if (scale_(i) == 0.0) continue;
                x(i) += scale_(i) * detail::laplace_quantile(uniforms[static_cast<size_t>(i)]);
            }
            return x;
        }
        case NoiseKind::StudentT: {
            Vector x = location_;
            for (int i = 0; i < dim_; ++i) {
                if (scale_(i) == 0.0) continue;
                x(i) += scale_(i) * detail::student_t_quantile(uniforms[static_cast<size_t>(i)], dof_);
            }
            return x;
        }
        case NoiseKind::Empirical:
            throw std::logic_error("sample_from_uniforms: empirical models are data, not generators");
    }
    throw std::logic_error("unreachable");
}

nlohmann::json NoiseModel::to_json() const {
    nlohmann::json j;
    j["type"] = to_string(kind_);
    switch (kind_) {
        case NoiseKind::Gaussian: {
            j["mean"] = std::vector<double>(location_.data(), location_.data() + dim_);
            nlohmann::json cov = nlohmann::json::array();
            for (int r = 0; r < dim_; ++r) {
                nlohmann::json row = nlohmann::json::array();
                for (int c = 0; c < dim_; ++c) row.push_back(covariance_(r, c));
                cov.push_back(row);
            }
            j["cov"] = cov;
            break;
        }
        case NoiseKind::Laplace:
        case NoiseKind::StudentT:
            j["location"] = std::vector<double>(location_.data(), location_.data() + dim_);
            j["scale"] = std::vector<double>(scale_.data(), scale_.data() + dim_);
            if (kind_ == NoiseKind::StudentT) j["dof"] = dof_;
            break;
        case NoiseKind::Empirical:
            throw std::logic_error("empirical noise is serialized by its generating spec, not inline");
    }
    return j;
}

NoiseModel NoiseModel::from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    auto vec = [](const nlohmann::json& a) {
        Vector v(static_cast<Eigen::Index>(a.size()));
        for (size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
        return v;
    };
    if (type == "gaussian") {
        const auto& covj = j.at("cov");
        const int n = static_cast<int>(covj.size());
        Matrix cov(n, n);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < n; ++c) cov(r, c) = covj[static_cast<size_t>(r)][static_cast<size_t>(c)].get<double>();
        }
        return gaussian(vec(j.at("mean")), std::move(cov));
    }
    if (type == "laplace") return laplace(vec(j.at("location")), vec(j.at("scale")));
    if (type == "student_t") {
        return student_t(vec(j.at("location")), vec(j.at("scale")), j.at("dof").get<double>());
    }
    throw std::invalid_argument("unknown noise type: " + type);
}

namespace detail {

double ibeta_reg(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lbeta = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    const double front = std::exp(lbeta + a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * betacf(a, b, x) / a;
    }
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
    if (t == 0.0) return 0.5;
    const double x = dof / (dof + t * t);
    const double half_tail = 0.5 * ibeta_reg(0.5 * dof, 0.5, x);
    return (t > 0.0) ? 1.0 - half_tail : half_tail;
}

double student_t_pdf(double t, double dof) {
    // per-dof normalization memoized: the simulator inverts many draws at
    // one fixed dof
    static thread_local double cached_dof = -1.0;
    static thread_local double cached_log_norm = 0.0;
    if (dof != cached_dof) {
        cached_dof = dof;
        cached_log_norm = std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
                          0.5 * std::log(dof * kPi);
    }
    return std::exp(cached_log_norm - 0.5 * (dof + 1.0) * std::log1p(t * t / dof));
}

double student_t_quantile(double p, double dof) {
    check_level(p, "p");
    if (p == 0.5) return 0.0;
    // Cornish-Fisher style initial guess from the normal quantile, then
    // bracketed Newton on the CDF.
    const double z = normal_inv_cdf(p);
    double t = z + (z * z * z + z) / (4.0 * dof);
    double lo = std::min(t, 0.0);
    double hi = std::max(t, 0.0);
    while (student_t_cdf(lo, dof) > p) lo = 2.0 * lo - 1.0;
    while (student_t_cdf(hi, dof) < p) hi = 2.0 * hi + 1.0;
    t = std::clamp(t, lo, hi);
    for (int it = 0; it < 60; ++it) {
        const double err = student_t_cdf(t, dof) - p;
        if (err > 0.0) {
            hi = t;
        } else {
            lo = t;
        }
        if (std::fabs(err) <= 1e-14 * std::max(p, 1.0 - p)) break;
        const double density = student_t_pdf(t, dof);
        double next = density > 0.0 ? t - err / density : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (next == t) break;
        t = next;
    }
    return t;
}

double laplace_quantile(double p) {
    check_level(p, "p");
    if (p <= 0.5) return std::log(2.0 * p);
    return -std::log(2.0 * (1.0 - p));
}

}  // namespace detail

}  // namespace pwashield
