#pragma once

#include <Eigen/Dense>
#include <functional>

namespace pwashield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

Matrix rotation_z(double theta);

/// Control-affine stochastic dynamics x+ = A(x) + B(x) u + g(x, xi), with
/// additive noise by default (g(x, xi) = xi) or a state-dependent linear
/// noise map g(x, xi) = G(x) xi.
struct Dynamics {
    int ns = 0;
    int na = 0;
    std::function<Vector(const Vector&)> drift;        // A(x)
    std::function<Matrix(const Vector&)> input_map;    // B(x)
    std::function<Matrix(const Vector&)> noise_map;    // G(x); empty = identity
    Vector input_lo;  // box bounds on u; empty = unbounded
    Vector input_hi;

    Vector f(const Vector& x, const Vector& u) const { return drift(x) + input_map(x) * u; }

    Vector apply_noise(const Vector& x, const Vector& xi) const {
        return noise_map ? Vector(noise_map(x) * xi) : xi;
    }

    Vector step(const Vector& x, const Vector& u, const Vector& xi) const {
        return f(x, u) + apply_noise(x, xi);
    }
};

}  // namespace pwashield
