#include "pwashield/barrier.hpp"

#include <limits>
#include <stdexcept>

namespace pwashield {

namespace {

void check_index(int value, int count, const char* what) {
    if (value < 0 || value >= count) {
        throw std::out_of_range(std::string(what) + " index " + std::to_string(value) +
                                " out of range [0, " + std::to_string(count) + ")");
    }
}

}  // namespace

Polyhedron::Polyhedron(Matrix C, Vector b) : C_(std::move(C)), b_(std::move(b)) {
    if (C_.rows() < 1) {
        throw std::invalid_argument("Polyhedron needs at least one facet");
    }
    if (C_.rows() != b_.size()) {
        throw std::invalid_argument("Polyhedron: C has " + std::to_string(C_.rows()) +
                                    " rows but b has " + std::to_string(b_.size()) + " entries");
    }
    for (Eigen::Index r = 0; r < C_.rows(); ++r) {
        if (C_.row(r).cwiseAbs().maxCoeff() == 0.0) {
            throw std::invalid_argument("Polyhedron: facet " + std::to_string(r) +
                                        " has an all-zero normal");
        }
    }
}

Eigen::RowVectorXd Polyhedron::facet_normal(int j) const {
    check_index(j, facet_count(), "facet");
    return C_.row(j);
}

double Polyhedron::facet_offset(int j) const {
    check_index(j, facet_count(), "facet");
    return b_(j);
}

double Polyhedron::facet_value(int j, const Vector& x) const {
    check_index(j, facet_count(), "facet");
    return C_.row(j).dot(x) - b_(j);
}

double Polyhedron::block_value(const Vector& x) const {
    return (C_ * x - b_).maxCoeff();
}

bool Polyhedron::contains(const Vector& x) const {
    return ((C_ * x - b_).array() < 0.0).all();
}

PwaBarrier::PwaBarrier(std::vector<Polyhedron> polyhedra) : polyhedra_(std::move(polyhedra)) {
    if (polyhedra_.empty()) {
        throw std::invalid_argument("PwaBarrier needs at least one polyhedron");
    }
    ns_ = polyhedra_.front().state_dim();
    for (const auto& p : polyhedra_) {
        if (p.state_dim() != ns_) {
            throw std::invalid_argument("PwaBarrier: polyhedra disagree on state dimension");
        }
    }
}

PwaBarrier PwaBarrier::from_obstacles(std::vector<Polyhedron> obstacles) {
    return PwaBarrier(std::move(obstacles));
}

int PwaBarrier::total_facets() const {
    int total = 0;
    for (const auto& p : polyhedra_) total += p.facet_count();
    return total;
}

const Polyhedron& PwaBarrier::polyhedron(int i) const {
    check_index(i, polyhedron_count(), "polyhedron");
    return polyhedra_[static_cast<size_t>(i)];
}

double PwaBarrier::facet_value(int i, int j, const Vector& x) const {
    if (x.size() != ns_) throw std::invalid_argument("facet_value: state dimension mismatch");
    return polyhedron(i).facet_value(j, x);
}

double PwaBarrier::block_value(int i, const Vector& x) const {
    if (x.size() != ns_) throw std::invalid_argument("block_value: state dimension mismatch");
    return polyhedron(i).block_value(x);
}

double PwaBarrier::evaluate(const Vector& x) const {
    if (x.size() != ns_) throw std::invalid_argument("evaluate: state dimension mismatch");
    double h = std::numeric_limits<double>::infinity();
    for (const auto& p : polyhedra_) h = std::min(h, p.block_value(x));
    return h;
}

std::vector<RowScaleIssue> PwaBarrier::badly_scaled_rows() const {
    std::vector<RowScaleIssue> issues;
    for (int i = 0; i < polyhedron_count(); ++i) {
        const Matrix& C = polyhedra_[static_cast<size_t>(i)].C();
        for (Eigen::Index j = 0; j < C.rows(); ++j) {
            const double norm = C.row(j).norm();
            if (norm < 1e-6 || norm > 1e6) {
                issues.push_back({i, static_cast<int>(j), norm});
            }
        }
    }
    return issues;
}

PwaBarrier PwaBarrier::from_json(const nlohmann::json& j) {
    const int ns = j.at("ns").get<int>();
    if (ns < 1) throw std::invalid_argument("barrier: ns must be positive");
    std::vector<Polyhedron> polys;
    for (const auto& pj : j.at("polyhedra")) {
        const auto& cj = pj.at("C");
        const auto& bj = pj.at("b");
        const int nf = static_cast<int>(cj.size());
        if (nf == 0 || static_cast<int>(bj.size()) != nf) {
            throw std::invalid_argument("barrier: C/b size mismatch");
        }
        Matrix C(nf, ns);
        Vector b(nf);
        for (int r = 0; r < nf; ++r) {
            if (static_cast<int>(cj[r].size()) != ns) {
                throw std::invalid_argument("barrier: row of C does not match ns");
            }
            for (int c = 0; c < ns; ++c) C(r, c) = cj[r][c].get<double>();
            b(r) = bj[r].get<double>();
        }
        polys.emplace_back(std::move(C), std::move(b));
    }
    return PwaBarrier(std::move(polys));
}

nlohmann::json PwaBarrier::to_json() const {
    nlohmann::json j;
    j["ns"] = ns_;
    j["polyhedra"] = nlohmann::json::array();
    for (const auto& p : polyhedra_) {
        nlohmann::json pj;
        pj["C"] = nlohmann::json::array();
        pj["b"] = nlohmann::json::array();
        for (int r = 0; r < p.facet_count(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < p.state_dim(); ++c) row.push_back(p.C()(r, c));
            pj["C"].push_back(row);
            pj["b"].push_back(p.b()(r));
        }
        j["polyhedra"].push_back(pj);
    }
    return j;
}

}  // namespace pwashield
