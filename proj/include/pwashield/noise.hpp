#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace pwashield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Standard normal CDF and its inverse. normal_inv_cdf satisfies
// |normal_cdf(result) - p| <= 1e-12 over p in (0, 1).
double normal_cdf(double x);
double normal_inv_cdf(double p);

// Binomial CDF in log space (no naive factorials), absolute error <= 1e-12
// for n up to ~1e6, and the matching quantile: smallest k with CDF(k) >= gamma.
double binom_cdf(long k, long n, double p);
long binom_inv_cdf(double gamma, long n, double p);

// log(gamma) / log(1 - delta); callers need strictly more samples than this.
double min_samples(double gamma, double delta);

// Largest per-step tolerance delta admissible for an N-step exit budget
// epsilon: 1 - (1 - epsilon)^(1/N).
double delta_from_epsilon(double epsilon, int horizon);

// tau-th order statistic (ascending, 1-based) of the sample.
double empirical_quantile_lb(std::span<const double> sample, long tau);

// (c . xi_t)_t over the dataset rows, preserving order. The overload with a
// noise matrix evaluates c . (G xi_t).
std::vector<double> build_sample(const Matrix& dataset, const Vector& c);
std::vector<double> build_sample(const Matrix& dataset, const Vector& c, const Matrix& noise_matrix);

enum class NoiseKind { Gaussian, Laplace, StudentT, Empirical };

std::string to_string(NoiseKind kind);

/// Disturbance model: an analytic distribution with computable quantiles of
/// linear functionals, or an empirical dataset of i.i.d. draws.
///
/// Laplace and Student-t use a location + per-coordinate scale
/// parameterization with independent coordinates; a zero scale makes the
/// coordinate deterministic.
class NoiseModel {
public:
    static NoiseModel gaussian(Vector mean, Matrix covariance);
    static NoiseModel laplace(Vector location, Vector scale);
    static NoiseModel student_t(Vector location, Vector scale, double dof);
    static NoiseModel empirical(Matrix dataset);
    static NoiseModel empirical_from_csv(const std::string& path, bool skip_header);

    NoiseKind kind() const { return kind_; }
    bool is_analytic() const { return kind_ != NoiseKind::Empirical; }
    int dim() const { return dim_; }

    // delta-quantile of c . xi. Exact for Gaussian; for Laplace and
    // Student-t exact 1-D inversion when c selects a single coordinate,
    // otherwise Monte Carlo CDF inversion on a fixed internal sample
    // (2e6 draws, documented tolerance ~1e-4).
    double linear_quantile(const Vector& c, double delta) const;

    // One draw from the model built out of dim() uniforms in (0,1) via
    // inverse-CDF transforms (Gaussian additionally mixes through a
    // factor of the covariance).
    Vector sample_from_uniforms(std::span<const double> uniforms) const;

    const Matrix& dataset() const;
    long sample_count() const;

    const Vector& location() const { return location_; }
    const Matrix& covariance() const;
    const Vector& scale() const { return scale_; }
    double dof() const { return dof_; }

    nlohmann::json to_json() const;
    static NoiseModel from_json(const nlohmann::json& j);

private:
    NoiseModel() = default;

    NoiseKind kind_ = NoiseKind::Gaussian;
    int dim_ = 0;
    Vector location_;      // mean / location
    Matrix covariance_;    // Gaussian only (eigenvalue-clamped PSD)
    Matrix factor_;        // L with L L^T = covariance
    Vector scale_;         // Laplace / StudentT diagonal scales
    double dof_ = 0.0;     // StudentT
    Matrix dataset_;       // Empirical, n x dim
};

namespace detail {
// Regularized incomplete beta I_x(a, b) and the Student-t CDF/quantile it
// backs; exposed for the unit tests.
double ibeta_reg(double a, double b, double x);
double student_t_cdf(double t, double dof);
double student_t_quantile(double p, double dof);
double laplace_quantile(double p);  // standard (location 0, scale 1)
}  // namespace detail

}  // namespace pwashield
