#include "bifctl/fem.hpp"

#include "bifctl/eigs.hpp"
#include "bifctl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

namespace bifctl::fem {

using mesh::FacetTag;
using mesh::Point;
using sparse::Triplet;

namespace {

unsigned tag_bit(FacetTag t) {
    return 1u << static_cast<unsigned>(t);
}

// local 12-vector index of component k, local node a
inline int loc(int k, int a) {
    return 6 * k + a;
}

} // namespace

QuadratureRule triangle_quadrature(int degree) {
    QuadratureRule r;
    auto sym3 = [&](double a, double w) {
        r.points.push_back({a, a});
        r.points.push_back({1.0 - 2.0 * a, a});
        r.points.push_back({a, 1.0 - 2.0 * a});
        for (int i = 0; i < 3; ++i) r.weights.push_back(0.5 * w);
    };
    if (degree <= 4) {
        r.degree = 4;
        sym3(0.44594849091596488632, 0.22338158967801146570);
        sym3(0.09157621350977074346, 0.10995174365532186764);
    } else if (degree == 5) {
        r.degree = 5;
        const double s = std::sqrt(15.0);
        r.points.push_back({1.0 / 3.0, 1.0 / 3.0});
        r.weights.push_back(0.5 * 9.0 / 40.0);
        sym3((6.0 - s) / 21.0, (155.0 - s) / 1200.0);
        sym3((6.0 + s) / 21.0, (155.0 + s) / 1200.0);
    } else {
        throw ParameterError("triangle quadrature available for degree 4 and 5 only");
    }
    return r;
}

QuadratureRule line_quadrature() {
    QuadratureRule r;
    r.degree = 5;
    const double d = 0.5 * std::sqrt(0.6);
    r.points = {{0.5 - d, 0.0}, {0.5, 0.0}, {0.5 + d, 0.0}};
    r.weights = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    return r;
}

std::string_view to_string(ControlKind kind) {
    switch (kind) {
    case ControlKind::Neumann: return "neumann";
    case ControlKind::Distributed: return "distributed";
    case ControlKind::Channel: return "channel";
    case ControlKind::DirichletBC: return "dirichlet";
    }
    return "?";
}

ControlKind control_kind_from_string(std::string_view name) {
    for (ControlKind k : {ControlKind::Neumann, ControlKind::Distributed, ControlKind::Channel, ControlKind::DirichletBC})
        if (to_string(k) == name) return k;
    throw ParameterError("unknown control kind '" + std::string(name) + "'");
}

std::string_view to_string(FieldRole role) {
    switch (role) {
    case FieldRole::Velocity: return "velocity";
    case FieldRole::Pressure: return "pressure";
    case FieldRole::Control: return "control";
    case FieldRole::Multiplier: return "multiplier";
    }
    return "?";
}

Eigen::Matrix<double, 6, 1> p2_values(double xi, double eta) {
    double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
    Eigen::Matrix<double, 6, 1> n;
    n << l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0;
    return n;
}

Eigen::Matrix<double, 6, 2> p2_reference_gradients(double xi, double eta) {
    double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
    Eigen::RowVector2d d0(-1, -1), d1(1, 0), d2(0, 1);
    Eigen::Matrix<double, 6, 2> g;
    g.row(0) = (4 * l0 - 1) * d0;
    g.row(1) = (4 * l1 - 1) * d1;
    g.row(2) = (4 * l2 - 1) * d2;
    g.row(3) = 4 * (l1 * d0 + l0 * d1);
    g.row(4) = 4 * (l2 * d1 + l1 * d2);
    g.row(5) = 4 * (l0 * d2 + l2 * d0);
    return g;
}

TaylorHoodSpace::TaylorHoodSpace(mesh::Mesh mesh, int quadrature_degree)
    : mesh_(std::move(mesh)), rule_(triangle_quadrature(quadrature_degree)) {
    nq_ = static_cast<int>(rule_.points.size());
    const int nv = mesh_.n_vertices();
    nodes_ = mesh_.vertices;
    vertex_edges_.assign(nv, {});
    auto edge_id = [&](int a, int b) {
        for (const auto& [other, node] : vertex_edges_[a])
            if (other == b) return node;
        int node = static_cast<int>(nodes_.size());
        const auto& pa = mesh_.vertices[a];
        const auto& pb = mesh_.vertices[b];
        nodes_.push_back({0.5 * (pa.x1 + pb.x1), 0.5 * (pa.x2 + pb.x2)});
        edges_.push_back({std::min(a, b), std::max(a, b)});
        vertex_edges_[a].push_back({b, node});
        vertex_edges_[b].push_back({a, node});
        return node;
    };

    cell_nodes_.reserve(mesh_.n_triangles());
    weights_.reserve(static_cast<std::size_t>(mesh_.n_triangles()) * nq_);
    grads_.reserve(static_cast<std::size_t>(mesh_.n_triangles()) * nq_);
    for (int q = 0; q < nq_; ++q) values_.push_back(p2_values(rule_.points[q][0], rule_.points[q][1]));
    std::vector<Eigen::Matrix<double, 6, 2>> ref_grads;
    for (int q = 0; q < nq_; ++q) ref_grads.push_back(p2_reference_gradients(rule_.points[q][0], rule_.points[q][1]));
    Eigen::Matrix<double, 3, 2> p1_ref;
    p1_ref << -1, -1, 1, 0, 0, 1;

    for (int c = 0; c < mesh_.n_triangles(); ++c) {
        const auto& t = mesh_.triangles[c];
        std::array<int, 6> cn{t[0], t[1], t[2], edge_id(t[0], t[1]), edge_id(t[1], t[2]), edge_id(t[2], t[0])};
        cell_nodes_.push_back(cn);
        const auto& p0 = mesh_.vertices[t[0]];
        const auto& p1 = mesh_.vertices[t[1]];
        const auto& p2 = mesh_.vertices[t[2]];
        Eigen::Matrix2d jac;
        jac << p1.x1 - p0.x1, p2.x1 - p0.x1, p1.x2 - p0.x2, p2.x2 - p0.x2;
        double det = jac.determinant();
        if (!(det > 0.0)) throw GeometryError("cell " + std::to_string(c) + " is degenerate or clockwise");
        Eigen::Matrix2d inv_t = jac.inverse().transpose();
        for (int q = 0; q < nq_; ++q) {
            weights_.push_back(rule_.weights[q] * det);
            grads_.push_back(ref_grads[q] * inv_t.transpose());
        }
        grads_p1_.push_back(p1_ref * inv_t.transpose());
    }

    node_tags_.assign(nodes_.size(), 0u);
    for (const auto& f : mesh_.facets) {
        unsigned bit = tag_bit(f.tag);
        node_tags_[f.v0] |= bit;
        node_tags_[f.v1] |= bit;
        node_tags_[edge_node(f.v0, f.v1)] |= bit;
    }

    output_node_ = mesh::locate_output_node(mesh_).index;

    try {
        mirror_vertices_ = mesh::mirror_vertex_permutation(mesh_, 1e-9);
        mirror_nodes_.resize(nodes_.size());
        for (int i = 0; i < nv; ++i) mirror_nodes_[i] = mirror_vertices_[i];
        for (std::size_t e = 0; e < edges_.size(); ++e)
            mirror_nodes_[nv + e] = edge_node(mirror_vertices_[edges_[e][0]], mirror_vertices_[edges_[e][1]]);
    } catch (const GeometryError&) {
        mirror_vertices_.clear();
        mirror_nodes_.clear();
    }
}

bool TaylorHoodSpace::node_on(int node, FacetTag tag) const {
    return (node_tags_.at(node) & tag_bit(tag)) != 0u;
}

std::vector<int> TaylorHoodSpace::nodes_on(std::initializer_list<FacetTag> tags) const {
    unsigned mask = 0;
    for (auto t : tags) mask |= tag_bit(t);
    std::vector<int> out;
    for (int i = 0; i < n_nodes(); ++i)
        if (node_tags_[i] & mask) out.push_back(i);
    return out;
}

int TaylorHoodSpace::edge_node(int v0, int v1) const {
    for (const auto& [other, node] : vertex_edges_.at(v0))
        if (other == v1) return node;
    throw GeometryError("no edge between vertices " + std::to_string(v0) + " and " + std::to_string(v1));
}

std::vector<int> TaylorHoodSpace::dirichlet_velocity_dofs(bool gamma_d_free) const {
    unsigned mask = tag_bit(FacetTag::Inlet) | tag_bit(FacetTag::Gamma0);
    if (!gamma_d_free) mask |= tag_bit(FacetTag::GammaD);
    std::vector<int> out;
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < n_nodes(); ++i)
            if (node_tags_[i] & mask) out.push_back(k * n_nodes() + i);
    return out;
}

std::vector<int> TaylorHoodSpace::free_velocity_dofs(bool gamma_d_free) const {
    std::vector<int> fixed = dirichlet_velocity_dofs(gamma_d_free);
    std::vector<int> out;
    out.reserve(n_velocity() - fixed.size());
    std::size_t j = 0;
    for (int i = 0; i < n_velocity(); ++i) {
        if (j < fixed.size() && fixed[j] == i) {
            ++j;
            continue;
        }
        out.push_back(i);
    }
    return out;
}

Vector TaylorHoodSpace::mirror_velocity(const Vector& full) const {
    if (mirror_nodes_.empty()) throw GeometryError("mesh has no mirror symmetry");
    if (full.size() != n_velocity()) throw StructuralError("mirror_velocity: wrong length");
    const int n = n_nodes();
    Vector out(full.size());
    for (int i = 0; i < n; ++i) {
        out[mirror_nodes_[i]] = full[i];
        out[n + mirror_nodes_[i]] = -full[n + i];
    }
    return out;
}

Vector TaylorHoodSpace::mirror_pressure(const Vector& p) const {
    if (mirror_vertices_.empty()) throw GeometryError("mesh has no mirror symmetry");
    if (p.size() != n_pressure()) throw StructuralError("mirror_pressure: wrong length");
    Vector out(p.size());
    for (int i = 0; i < n_pressure(); ++i) out[mirror_vertices_[i]] = p[i];
    return out;
}

Eigen::Vector3d TaylorHoodSpace::value_p1(int q) const {
    double xi = rule_.points[q][0], eta = rule_.points[q][1];
    return {1.0 - xi - eta, xi, eta};
}

int TaylorHoodSpace::locate(Point p, Eigen::Vector2d* reference) const {
    for (int c = 0; c < n_cells(); ++c) {
        const auto& t = mesh_.triangles[c];
        const auto& p0 = mesh_.vertices[t[0]];
        const auto& p1 = mesh_.vertices[t[1]];
        const auto& p2 = mesh_.vertices[t[2]];
        Eigen::Matrix2d jac;
        jac << p1.x1 - p0.x1, p2.x1 - p0.x1, p1.x2 - p0.x2, p2.x2 - p0.x2;
        Eigen::Vector2d r = jac.inverse() * Eigen::Vector2d(p.x1 - p0.x1, p.x2 - p0.x2);
        const double tol = 1e-12;
        if (r[0] >= -tol && r[1] >= -tol && r[0] + r[1] <= 1.0 + tol) {
            if (reference) *reference = r;
            return c;
        }
    }
    return -1;
}

CsrMatrix assemble_diffusion(const TaylorHoodSpace& space, double mu) {
    const int n = space.n_nodes();
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(space.n_cells()) * 72);
    for (int c = 0; c < space.n_cells(); ++c) {
        Eigen::Matrix<double, 6, 6> k = Eigen::Matrix<double, 6, 6>::Zero();
        for (int q = 0; q < static_cast<int>(space.quadrature().weights.size()); ++q) {
            const auto& g = space.grad_p2(c, q);
            k.noalias() += space.weight(c, q) * g * g.transpose();
        }
        const auto& cn = space.cell_nodes(c);
        for (int comp = 0; comp < 2; ++comp)
            for (int a = 0; a < 6; ++a)
                for (int b = 0; b < 6; ++b) t.push_back({comp * n + cn[a], comp * n + cn[b], mu * k(a, b)});
    }
    return sparse::csr_from_triplets(space.n_velocity(), space.n_velocity(), t);
}

CsrMatrix assemble_divergence(const TaylorHoodSpace& space) {
    const int n = space.n_nodes();
    const int nq = static_cast<int>(space.quadrature().weights.size());
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(space.n_cells()) * 36);
    for (int c = 0; c < space.n_cells(); ++c) {
        Eigen::Matrix<double, 3, 12> d = Eigen::Matrix<double, 3, 12>::Zero();
        for (int q = 0; q < nq; ++q) {
            const auto& g = space.grad_p2(c, q);
            Eigen::Vector3d psi = space.value_p1(q);
            double w = space.weight(c, q);
            for (int a = 0; a < 6; ++a)
                for (int k = 0; k < 2; ++k) d.col(loc(k, a)) -= w * g(a, k) * psi;
        }
        const auto& cn = space.cell_nodes(c);
        const auto& tri = space.mesh().triangles[c];
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 2; ++k)
                for (int a = 0; a < 6; ++a) t.push_back({tri[i], k * n + cn[a], d(i, loc(k, a))});
    }
    return sparse::csr_from_triplets(space.n_pressure(), space.n_velocity(), t);
}

CsrMatrix assemble_velocity_mass(const TaylorHoodSpace& space) {
    const int n = space.n_nodes();
    const int nq = static_cast<int>(space.quadrature().weights.size());
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(space.n_cells()) * 72);
    for (int c = 0; c < space.n_cells(); ++c) {
        Eigen::Matrix<double, 6, 6> m = Eigen::Matrix<double, 6, 6>::Zero();
        for (int q = 0; q < nq; ++q) m.noalias() += space.weight(c, q) * space.value_p2(q) * space.value_p2(q).transpose();
        const auto& cn = space.cell_nodes(c);
        for (int comp = 0; comp < 2; ++comp)
            for (int a = 0; a < 6; ++a)
                for (int b = 0; b < 6; ++b) t.push_back({comp * n + cn[a], comp * n + cn[b], m(a, b)});
    }
    return sparse::csr_from_triplets(space.n_velocity(), space.n_velocity(), t);
}

CsrMatrix assemble_pressure_mass(const TaylorHoodSpace& space) {
    const int nq = static_cast<int>(space.quadrature().weights.size());
    std::vector<Triplet> t;
    for (int c = 0; c < space.n_cells(); ++c) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int q = 0; q < nq; ++q) m.noalias() += space.weight(c, q) * space.value_p1(q) * space.value_p1(q).transpose();
        const auto& tri = space.mesh().triangles[c];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) t.push_back({tri[a], tri[b], m(a, b)});
    }
    return sparse::csr_from_triplets(space.n_pressure(), space.n_pressure(), t);
}

CsrMatrix assemble_line_mass(const TaylorHoodSpace& space, FacetTag tag) {
    const int n = space.n_nodes();
    QuadratureRule lr = line_quadrature();
    Eigen::Matrix3d ref = Eigen::Matrix3d::Zero();
    for (std::size_t q = 0; q < lr.weights.size(); ++q) {
        double s = lr.points[q][0];
        Eigen::Vector3d nv(( 1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1));
        ref += lr.weights[q] * nv * nv.transpose();
    }
    std::vector<Triplet> t;
    const auto& m = space.mesh();
    for (const auto& f : m.facets) {
        if (f.tag != tag) continue;
        double len = std::hypot(m.vertices[f.v1].x1 - m.vertices[f.v0].x1, m.vertices[f.v1].x2 - m.vertices[f.v0].x2);
        std::array<int, 3> nodes{f.v0, space.edge_node(f.v0, f.v1), f.v1};
        for (int comp = 0; comp < 2; ++comp)
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) t.push_back({comp * n + nodes[a], comp * n + nodes[b], len * ref(a, b)});
    }
    return sparse::csr_from_triplets(space.n_velocity(), space.n_velocity(), t);
}

namespace {

struct LocalField {
    Eigen::Matrix<double, 6, 2> coeffs; // node a, component k
};

LocalField gather(const TaylorHoodSpace& space, const Vector& full, int cell) {
    const int n = space.n_nodes();
    const auto& cn = space.cell_nodes(cell);
    LocalField f;
    for (int a = 0; a < 6; ++a) {
        f.coeffs(a, 0) = full[cn[a]];
        f.coeffs(a, 1) = full[n + cn[a]];
    }
    return f;
}

void check_velocity(const TaylorHoodSpace& space, const Vector& v, const char* who) {
    if (v.size() != space.n_velocity()) throw StructuralError(std::string(who) + ": velocity vector has wrong length");
}

void scatter_matrix(const TaylorHoodSpace& space, int cell, const Eigen::Matrix<double, 12, 12>& local,
                    std::vector<Triplet>& t) {
    const int n = space.n_nodes();
    const auto& cn = space.cell_nodes(cell);
    for (int k = 0; k < 2; ++k)
        for (int a = 0; a < 6; ++a)
            for (int l = 0; l < 2; ++l)
                for (int b = 0; b < 6; ++b) t.push_back({k * n + cn[a], l * n + cn[b], local(loc(k, a), loc(l, b))});
}

void scatter_vector(const TaylorHoodSpace& space, int cell, const Eigen::Matrix<double, 6, 2>& local, Vector& out) {
    const int n = space.n_nodes();
    const auto& cn = space.cell_nodes(cell);
    for (int a = 0; a < 6; ++a) {
        out[cn[a]] += local(a, 0);
        out[n + cn[a]] += local(a, 1);
    }
}

} // namespace

Vector convection_form(const TaylorHoodSpace& space, const Vector& a, const Vector& b) {
    check_velocity(space, a, "convection_form");
    check_velocity(space, b, "convection_form");
    const int nq = static_cast<int>(space.quadrature().weights.size());
    Vector out = Vector::Zero(space.n_velocity());
    for (int c = 0; c < space.n_cells(); ++c) {
        LocalField fa = gather(space, a, c), fb = gather(space, b, c);
        Eigen::Matrix<double, 6, 2> local = Eigen::Matrix<double, 6, 2>::Zero();
        for (int q = 0; q < nq; ++q) {
            const auto& phi = space.value_p2(q);
            const auto& g = space.grad_p2(c, q);
            Eigen::RowVector2d ua = phi.transpose() * fa.coeffs;
            Eigen::Matrix2d gb = fb.coeffs.transpose() * g; // gb(k, l) = d_l b_k
            Eigen::RowVector2d conv = (gb * ua.transpose()).transpose();
            local.noalias() += space.weight(c, q) * phi * conv;
        }
        scatter_vector(space, c, local, out);
    }
    return out;
}

Vector convection_residual(const TaylorHoodSpace& space, const Vector& v) {
    return convection_form(space, v, v);
}

Vector convection_adjoint_action(const TaylorHoodSpace& space, const Vector& v, const Vector& w) {
    check_velocity(space, v, "convection_adjoint_action");
    check_velocity(space, w, "convection_adjoint_action");
    const int nq = static_cast<int>(space.quadrature().weights.size());
    Vector out = Vector::Zero(space.n_velocity());
    for (int c = 0; c < space.n_cells(); ++c) {
        LocalField fv = gather(space, v, c), fw = gather(space, w, c);
        Eigen::Matrix<double, 6, 2> local = Eigen::Matrix<double, 6, 2>::Zero();
        for (int q = 0; q < nq; ++q) {
            const auto& phi = space.value_p2(q);
            const auto& g = space.grad_p2(c, q);
            Eigen::RowVector2d u = phi.transpose() * fv.coeffs;
            Eigen::RowVector2d wq = phi.transpose() * fw.coeffs;
            Eigen::Matrix2d gu = fv.coeffs.transpose() * g; // gu(k, l) = d_l u_k
            // s(phi e_l, v, w) = phi sum_k d_l u_k w_k
            Eigen::RowVector2d first = wq * gu;
            // s(v, phi e_l, w) = (u . grad phi) w_l
            Eigen::Matrix<double, 6, 1> adv = g * u.transpose();
            local.noalias() += space.weight(c, q) * (phi * first + adv * wq);
        }
        scatter_vector(space, c, local, out);
    }
    return out;
}

CsrMatrix assemble_convection(const TaylorHoodSpace& space, const Vector& field, ConvectionMode mode) {
    check_velocity(space, field, "assemble_convection");
    const int nq = static_cast<int>(space.quadrature().weights.size());
    std::vector<Triplet> t;
    t.reserve(static_cast<std::size_t>(space.n_cells()) * 144);
    for (int c = 0; c < space.n_cells(); ++c) {
        LocalField f = gather(space, field, c);
        Eigen::Matrix<double, 12, 12> local = Eigen::Matrix<double, 12, 12>::Zero();
        for (int q = 0; q < nq; ++q) {
            const auto& phi = space.value_p2(q);
            const auto& g = space.grad_p2(c, q);
            double w = space.weight(c, q);
            Eigen::RowVector2d u = phi.transpose() * f.coeffs;
            if (mode == ConvectionMode::Hessian) {
                // row (k,i), col (l,j): phi_i d_k phi_j w_l + phi_j d_l phi_i w_k
                for (int k = 0; k < 2; ++k)
                    for (int l = 0; l < 2; ++l) {
                        Eigen::Matrix<double, 6, 6> blk =
                            u[l] * phi * g.col(k).transpose() + u[k] * g.col(l) * phi.transpose();
                        local.block<6, 6>(6 * k, 6 * l).noalias() += w * blk;
                    }
                continue;
            }
            Eigen::Matrix2d gu = f.coeffs.transpose() * g; // gu(k, l) = d_l u_k
            Eigen::Matrix<double, 6, 1> adv = g * u.transpose();
            Eigen::Matrix<double, 6, 6> mass = phi * phi.transpose();
            Eigen::Matrix<double, 6, 6> advm = phi * adv.transpose(); // (u . grad phi_j) phi_i
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) {
                    Eigen::Matrix<double, 6, 6> blk = gu(k, l) * mass;
                    if (k == l) blk += advm;
                    local.block<6, 6>(6 * k, 6 * l).noalias() += w * blk;
                }
        }
        if (mode == ConvectionMode::Adjoint) local.transposeInPlace();
        scatter_matrix(space, c, local, t);
    }
    return sparse::csr_from_triplets(space.n_velocity(), space.n_velocity(), t);
}

std::vector<int> control_dofs(const TaylorHoodSpace& space, ControlKind kind) {
    std::vector<int> nodes;
    switch (kind) {
    case ControlKind::Neumann: nodes = space.nodes_on({FacetTag::Outlet}); break;
    case ControlKind::Channel: nodes = space.nodes_on({FacetTag::GammaCh}); break;
    case ControlKind::Distributed:
        nodes.resize(space.n_nodes());
        for (int i = 0; i < space.n_nodes(); ++i) nodes[i] = i;
        break;
    case ControlKind::DirichletBC:
        for (int i : space.nodes_on({FacetTag::GammaD}))
            if (!space.node_on(i, FacetTag::Gamma0) && !space.node_on(i, FacetTag::Inlet)) nodes.push_back(i);
        break;
    }
    std::vector<int> dofs;
    for (int k = 0; k < 2; ++k)
        for (int i : nodes) dofs.push_back(k * space.n_nodes() + i);
    return dofs;
}

CsrMatrix control_region_mass(const TaylorHoodSpace& space, ControlKind kind) {
    switch (kind) {
    case ControlKind::Neumann: return assemble_line_mass(space, FacetTag::Outlet);
    case ControlKind::Channel: return assemble_line_mass(space, FacetTag::GammaCh);
    case ControlKind::Distributed: return assemble_velocity_mass(space);
    case ControlKind::DirichletBC: return assemble_line_mass(space, FacetTag::GammaD);
    }
    throw ParameterError("unknown control kind");
}

CsrMatrix assemble_control_coupling(const TaylorHoodSpace& space, ControlKind kind) {
    if (kind == ControlKind::DirichletBC)
        throw StructuralError("dirichlet control couples through multiplier blocks, not a coupling matrix");
    std::vector<int> rows(space.n_velocity());
    for (int i = 0; i < space.n_velocity(); ++i) rows[i] = i;
    return sparse::submatrix(control_region_mass(space, kind), rows, control_dofs(space, kind));
}

double inflow_profile(double x2) {
    return 20.0 * (5.0 - x2) * (x2 - 2.5);
}

Field apply_inflow_lift(const TaylorHoodSpace& space) {
    Field f;
    f.role = FieldRole::Velocity;
    f.values = Vector::Zero(space.n_velocity());
    for (int i : space.nodes_on({FacetTag::Inlet})) {
        if (space.node_on(i, FacetTag::Gamma0)) continue;
        f.values[i] = inflow_profile(space.nodes()[i].x2);
    }
    return f;
}

Eigen::VectorXd evaluate_field(const TaylorHoodSpace& space, const Field& field, Point p) {
    Eigen::Vector2d r;
    int c = space.locate(p, &r);
    if (c < 0) throw GeometryError("evaluate_field: point outside the domain");
    if (field.role == FieldRole::Velocity) {
        check_velocity(space, field.values, "evaluate_field");
        Eigen::Matrix<double, 6, 1> phi = p2_values(r[0], r[1]);
        LocalField f = gather(space, field.values, c);
        return (phi.transpose() * f.coeffs).transpose();
    }
    if (field.role == FieldRole::Pressure) {
        if (field.values.size() != space.n_pressure()) throw StructuralError("evaluate_field: pressure length");
        const auto& t = space.mesh().triangles[c];
        Eigen::VectorXd out(1);
        out[0] = (1 - r[0] - r[1]) * field.values[t[0]] + r[0] * field.values[t[1]] + r[1] * field.values[t[2]];
        return out;
    }
    throw StructuralError("evaluate_field: only velocity and pressure fields can be evaluated pointwise");
}

void write_field(const Field& field, std::ostream& out) {
    out << "field v1\nrole " << to_string(field.role) << "\ndofs " << field.values.size() << "\n"
        << std::setprecision(17);
    for (Eigen::Index i = 0; i < field.values.size(); ++i) out << field.values[i] << "\n";
}

Field read_field(std::istream& in) {
    std::string line, key, role;
    if (!std::getline(in, line) || line != "field v1") throw FormatError("not a field v1 file");
    if (!(in >> key >> role) || key != "role") throw FormatError("field: missing role");
    Field f;
    bool found = false;
    for (FieldRole r : {FieldRole::Velocity, FieldRole::Pressure, FieldRole::Control, FieldRole::Multiplier})
        if (to_string(r) == role) {
            f.role = r;
            found = true;
        }
    if (!found) throw FormatError("field: unknown role '" + role + "'");
    long n = 0;
    if (!(in >> key >> n) || key != "dofs" || n < 0) throw FormatError("field: bad dof count");
    f.values.resize(n);
    for (long i = 0; i < n; ++i)
        if (!(in >> f.values[i])) throw FormatError("field: truncated coefficients");
    return f;
}

void write_slice_csv(const TaylorHoodSpace& space, const Vector& velocity, double x1, int samples,
                     std::ostream& out) {
    if (samples < 2) throw ParameterError("slice needs at least two samples");
    double lo = x1 < 10.0 ? 2.5 : 0.0, hi = x1 < 10.0 ? 5.0 : 7.5;
    Field f{FieldRole::Velocity, velocity};
    out << "x1,x2,v1,v2\n" << std::setprecision(17);
    for (int s = 0; s < samples; ++s) {
        double x2 = lo + (hi - lo) * s / (samples - 1);
        Eigen::VectorXd v = evaluate_field(space, f, {x1, x2});
        out << x1 << "," << x2 << "," << v[0] << "," << v[1] << "\n";
    }
}

InnerProductSet build_inner_products(const TaylorHoodSpace& space) {
    InnerProductSet s;
    s.velocity_mass = assemble_velocity_mass(space);
    s.velocity_h1 = sparse::add(assemble_diffusion(space, 1.0), s.velocity_mass);
    s.pressure_mass = assemble_pressure_mass(space);
    s.observation_mass = assemble_line_mass(space, FacetTag::GammaObs);
    return s;
}

double brezzi_inf_sup(const TaylorHoodSpace& space) {
    std::vector<int> free = space.free_velocity_dofs();
    std::vector<int> all_p(space.n_pressure());
    for (int i = 0; i < space.n_pressure(); ++i) all_p[i] = i;
    InnerProductSet ip = build_inner_products(space);
    CsrMatrix x = sparse::submatrix(ip.velocity_h1, free, free);
    CsrMatrix b = sparse::submatrix(assemble_divergence(space), all_p, free);
    const int nv = static_cast<int>(free.size()), np = space.n_pressure();
    sparse::BlockMatrix a({nv, np}, {nv, np});
    a.set(0, 0, x);
    a.set(0, 1, sparse::transpose(b));
    a.set(1, 0, b);
    sparse::BlockMatrix m({nv, np}, {nv, np});
    m.set(1, 1, sparse::scaled(ip.pressure_mass, -1.0));
    auto res = sparse::eigs_shift_invert(a.flatten(), m.flatten(), 1, 0.0);
    if (res.pairs.empty()) throw ConvergenceError("inf-sup eigenproblem failed", INFINITY, res.restarts);
    return std::sqrt(std::abs(res.pairs.front().value.real()));
}

} // namespace bifctl::fem
