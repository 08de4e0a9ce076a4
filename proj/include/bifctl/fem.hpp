#pragma once

#include "bifctl/mesh.hpp"
#include "bifctl/sparse.hpp"

#include <Eigen/Dense>

#include <array>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <string_view>
#include <vector>

namespace bifctl::fem {

using sparse::CsrMatrix;
using sparse::Vector;

struct QuadratureRule {
    int degree = 0;
    std::vector<std::array<double, 2>> points; // reference triangle (0,0),(1,0),(0,1)
    std::vector<double> weights;               // sum to 1/2
};

// degree 4: 6 points, degree 5: 7 points
QuadratureRule triangle_quadrature(int degree);
// 3-point Gauss-Legendre on [0,1]
QuadratureRule line_quadrature();

enum class ControlKind { Neumann, Distributed, Channel, DirichletBC };

std::string_view to_string(ControlKind kind);
ControlKind control_kind_from_string(std::string_view name);

// P2 velocity (two components) and P1 pressure on a triangle mesh.
// Scalar P2 nodes are the mesh vertices followed by edge midpoints; velocity
// component k of node i has index k * n_nodes() + i.
class TaylorHoodSpace {
public:
    explicit TaylorHoodSpace(mesh::Mesh mesh, int quadrature_degree = 4);

    const mesh::Mesh& mesh() const { return mesh_; }
    int n_cells() const { return mesh_.n_triangles(); }
    int n_nodes() const { return static_cast<int>(nodes_.size()); }
    int n_velocity() const { return 2 * n_nodes(); }
    int n_pressure() const { return mesh_.n_vertices(); }
    const std::vector<mesh::Point>& nodes() const { return nodes_; }
    // vertices 0..2, then midpoints of edges (0,1), (1,2), (2,0)
    const std::array<int, 6>& cell_nodes(int cell) const { return cell_nodes_[cell]; }
    const QuadratureRule& quadrature() const { return rule_; }

    bool node_on(int node, mesh::FacetTag tag) const;
    std::vector<int> nodes_on(std::initializer_list<mesh::FacetTag> tags) const;
    int edge_node(int v0, int v1) const;

    // Velocity dofs held fixed: inlet and walls; GammaD is left free when
    // gamma_d_free is set.
    std::vector<int> dirichlet_velocity_dofs(bool gamma_d_free = false) const;
    std::vector<int> free_velocity_dofs(bool gamma_d_free = false) const;

    int output_node() const { return output_node_; }

    const std::vector<int>& mirror_nodes() const { return mirror_nodes_; }
    const std::vector<int>& mirror_vertices() const { return mirror_vertices_; }
    Vector mirror_velocity(const Vector& full) const;
    Vector mirror_pressure(const Vector& p) const;

    // geometry at quadrature points
    double weight(int cell, int q) const { return weights_[cell * nq_ + q]; }
    const Eigen::Matrix<double, 6, 2>& grad_p2(int cell, int q) const { return grads_[cell * nq_ + q]; }
    const Eigen::Matrix<double, 6, 1>& value_p2(int q) const { return values_[q]; }
    const Eigen::Matrix<double, 3, 2>& grad_p1(int cell) const { return grads_p1_[cell]; }
    Eigen::Vector3d value_p1(int q) const;

    // cell containing the point, or -1
    int locate(mesh::Point p, Eigen::Vector2d* reference = nullptr) const;

private:
    mesh::Mesh mesh_;
    QuadratureRule rule_;
    int nq_ = 0;
    std::vector<mesh::Point> nodes_;
    std::vector<std::array<int, 6>> cell_nodes_;
    std::vector<unsigned> node_tags_;
    std::vector<std::array<int, 2>> edges_;
    std::vector<std::vector<std::pair<int, int>>> vertex_edges_;
    std::vector<double> weights_;
    std::vector<Eigen::Matrix<double, 6, 2>> grads_;
    std::vector<Eigen::Matrix<double, 6, 1>> values_;
    std::vector<Eigen::Matrix<double, 3, 2>> grads_p1_;
    std::vector<int> mirror_vertices_;
    std::vector<int> mirror_nodes_;
    int output_node_ = -1;
};

// P2 basis on the reference triangle
Eigen::Matrix<double, 6, 1> p2_values(double xi, double eta);
Eigen::Matrix<double, 6, 2> p2_reference_gradients(double xi, double eta);

// a(v, psi) = mu (grad v, grad psi)
CsrMatrix assemble_diffusion(const TaylorHoodSpace& space, double mu = 1.0);
// b(v, q) = -(div v, q); rows pressure, columns velocity
CsrMatrix assemble_divergence(const TaylorHoodSpace& space);
CsrMatrix assemble_velocity_mass(const TaylorHoodSpace& space);
CsrMatrix assemble_pressure_mass(const TaylorHoodSpace& space);
// L2 mass of velocity traces on facets with the tag
CsrMatrix assemble_line_mass(const TaylorHoodSpace& space, mesh::FacetTag tag);

// s(a, b, c) = ((a . grad) b, c)
enum class ConvectionMode {
    Linearized, // S[v]: d/dv s(v, v, psi)
    Adjoint,    // S[v]^T
    Hessian,    // H[w]_{ij} = s(phi_i, phi_j, w) + s(phi_j, phi_i, w), field argument is w
};
CsrMatrix assemble_convection(const TaylorHoodSpace& space, const Vector& field, ConvectionMode mode);
// vector s(v, v, phi_i)
Vector convection_residual(const TaylorHoodSpace& space, const Vector& v);
// vector s(phi_i, v, w) + s(v, phi_i, w)
Vector convection_adjoint_action(const TaylorHoodSpace& space, const Vector& v, const Vector& w);
// vector s(a, b, phi_i)
Vector convection_form(const TaylorHoodSpace& space, const Vector& a, const Vector& b);

// Control dofs (full velocity indices) and the mass of the control region.
std::vector<int> control_dofs(const TaylorHoodSpace& space, ControlKind kind);
CsrMatrix control_region_mass(const TaylorHoodSpace& space, ControlKind kind);
// c(u, psi) with rows = velocity dofs, columns = control dofs. Throws
// StructuralError for DirichletBC, which couples through multipliers.
CsrMatrix assemble_control_coupling(const TaylorHoodSpace& space, ControlKind kind);

// inflow profile 20 (5 - x2)(x2 - 2.5)
double inflow_profile(double x2);

enum class FieldRole { Velocity, Pressure, Control, Multiplier };
std::string_view to_string(FieldRole role);

struct Field {
    FieldRole role = FieldRole::Velocity;
    Vector values;
};

// Velocity with the inflow profile on inlet nodes and zero elsewhere.
Field apply_inflow_lift(const TaylorHoodSpace& space);

// Velocity returns two components, pressure one.
Eigen::VectorXd evaluate_field(const TaylorHoodSpace& space, const Field& field, mesh::Point p);

void write_field(const Field& field, std::ostream& out);
Field read_field(std::istream& in);

// rows x1,x2,v1,v2 along a vertical line
void write_slice_csv(const TaylorHoodSpace& space, const Vector& velocity, double x1, int samples, std::ostream& out);

struct InnerProductSet {
    CsrMatrix velocity_h1;   // stiffness + mass, full velocity
    CsrMatrix velocity_mass; // full velocity
    CsrMatrix pressure_mass;
    CsrMatrix observation_mass; // line mass on GammaObs, full velocity
};
InnerProductSet build_inner_products(const TaylorHoodSpace& space);

// Smallest generalized singular value of b on free velocity dofs, measured
// in H1 (velocity) and L2 (pressure).
double brezzi_inf_sup(const TaylorHoodSpace& space);

} // namespace bifctl::fem
