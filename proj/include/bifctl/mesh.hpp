#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bifctl::mesh {

struct Point {
    double x1 = 0.0;
    double x2 = 0.0;
};

enum class FacetTag { Inlet, Outlet, GammaD, Gamma0, GammaObs, GammaCh };

std::string_view to_string(FacetTag tag);
FacetTag facet_tag_from_string(std::string_view name);

struct Facet {
    int v0 = 0;
    int v1 = 0;
    FacetTag tag = FacetTag::Gamma0;
};

// Triangles are counter-clockwise.
struct Mesh {
    std::vector<Point> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<Facet> facets; // boundary pieces and the two interior lines

    int n_vertices() const { return static_cast<int>(vertices.size()); }
    int n_triangles() const { return static_cast<int>(triangles.size()); }
    double area() const;
    double facet_length(FacetTag tag) const;
};

// Target cell widths per direction; each segment between fixed grid lines is
// split into ceil(length / h) intervals.
struct MeshSpec {
    std::string name = "custom";
    double hx = 1.25;
    double hy = 1.25;

    static MeshSpec preset(std::string_view name);
};

// Channel domain: inlet [0,10]x[2.5,5] and expansion [10,50]x[0,7.5].
Mesh build_channel_mesh(const MeshSpec& spec);

// Closed-form cell count of build_channel_mesh.
int expected_cell_count(const MeshSpec& spec);

struct NodeLocation {
    int index = -1;
    double distance = 0.0;
};

// Nearest vertex; ties go to the lowest index.
NodeLocation locate_output_node(const Mesh& mesh, Point target = {14.0, 4.0});

// vertex i maps to perm[i] under x2 -> 7.5 - x2; throws GeometryError if the
// vertex set is not mirror symmetric.
std::vector<int> mirror_vertex_permutation(const Mesh& mesh, double tolerance = 1e-12);

void write_mesh(const Mesh& mesh, std::ostream& out);
Mesh read_mesh(std::istream& in);

} // namespace bifctl::mesh
