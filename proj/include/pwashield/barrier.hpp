#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "json.hpp"

namespace pwashield {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Open polyhedron { x | C x < b } (componentwise strict).
class Polyhedron {
public:
    Polyhedron(Matrix C, Vector b);

    int facet_count() const { return static_cast<int>(C_.rows()); }
    int state_dim() const { return static_cast<int>(C_.cols()); }
    const Matrix& C() const { return C_; }
    const Vector& b() const { return b_; }
    Eigen::RowVectorXd facet_normal(int j) const;
    double facet_offset(int j) const;

    // c_j . x - b_j
    double facet_value(int j, const Vector& x) const;
    // max_j facet_value
    double block_value(const Vector& x) const;
    // strict membership: C x < b for every row
    bool contains(const Vector& x) const;

private:
    Matrix C_;
    Vector b_;
};

struct RowScaleIssue {
    int polyhedron;
    int facet;
    double row_norm;
};

/// Min-of-max affine barrier over a list of open polyhedral obstacles.
/// h(x) = min_i max_j c_ij.x - b_ij; the safe set is { h >= 0 }, the
/// complement of the union of the polyhedra.
class PwaBarrier {
public:
    explicit PwaBarrier(std::vector<Polyhedron> polyhedra);
    static PwaBarrier from_obstacles(std::vector<Polyhedron> obstacles);

    int state_dim() const { return ns_; }
    int polyhedron_count() const { return static_cast<int>(polyhedra_.size()); }
    int facet_count(int i) const { return polyhedron(i).facet_count(); }
    int total_facets() const;
    const Polyhedron& polyhedron(int i) const;
    const std::vector<Polyhedron>& polyhedra() const { return polyhedra_; }

    double facet_value(int i, int j, const Vector& x) const;
    double block_value(int i, const Vector& x) const;
    double evaluate(const Vector& x) const;
    bool is_safe(const Vector& x) const { return evaluate(x) >= 0.0; }

    // Rows whose norm falls outside [1e-6, 1e6]; rows are kept as given,
    // this only reports them.
    std::vector<RowScaleIssue> badly_scaled_rows() const;

    static PwaBarrier from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

private:
    std::vector<Polyhedron> polyhedra_;
    int ns_ = 0;
};

}  // namespace pwashield
