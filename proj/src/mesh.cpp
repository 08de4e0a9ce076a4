#include "bifctl/mesh.hpp"

#include "bifctl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace bifctl::mesh {

namespace {

constexpr double kHeight = 7.5;
constexpr double kInletLength = 10.0;
constexpr double kLength = 50.0;
constexpr double kObsLine = 47.0;
constexpr double kOutputLine = 14.0;

int intervals(double length, double h) {
    if (!(h > 0.0)) throw ParameterError("mesh width must be positive");
    return std::max(1, static_cast<int>(std::ceil(length / h - 1e-9)));
}

struct Counts {
    int inlet_x, main_x1, main_x2, main_x3; // [0,10], [10,14], [14,47], [47,50]
    int outer_y, mid_y;                      // [0,2.5] and [2.5,5]
};

Counts counts_for(const MeshSpec& s) {
    Counts c{};
    c.inlet_x = intervals(kInletLength, s.hx);
    c.main_x1 = intervals(kOutputLine - kInletLength, s.hx);
    c.main_x2 = intervals(kObsLine - kOutputLine, s.hx);
    c.main_x3 = intervals(kLength - kObsLine, s.hx);
    c.outer_y = intervals(2.5, s.hy);
    c.mid_y = intervals(2.5, s.hy);
    if (c.mid_y % 2 == 1) ++c.mid_y; // keeps a grid line on x2 = 3.75
    return c;
}

void append_segment(std::vector<double>& xs, double a, double b, int n) {
    for (int k = (xs.empty() ? 0 : 1); k <= n; ++k) xs.push_back(k == n ? b : a + (b - a) * k / n);
}

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x1 - o.x1) * (b.x2 - o.x2) - (a.x2 - o.x2) * (b.x1 - o.x1);
}

} // namespace

std::string_view to_string(FacetTag tag) {
    switch (tag) {
    case FacetTag::Inlet: return "Inlet";
    case FacetTag::Outlet: return "Outlet";
    case FacetTag::GammaD: return "GammaD";
    case FacetTag::Gamma0: return "Gamma0";
    case FacetTag::GammaObs: return "GammaObs";
    case FacetTag::GammaCh: return "GammaCh";
    }
    return "?";
}

FacetTag facet_tag_from_string(std::string_view name) {
    for (FacetTag t : {FacetTag::Inlet, FacetTag::Outlet, FacetTag::GammaD, FacetTag::Gamma0, FacetTag::GammaObs,
                       FacetTag::GammaCh})
        if (to_string(t) == name) return t;
    throw FormatError("unknown facet tag '" + std::string(name) + "'");
}

double Mesh::area() const {
    double a = 0.0;
    for (const auto& t : triangles) a += 0.5 * cross(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
    return a;
}

double Mesh::facet_length(FacetTag tag) const {
    double l = 0.0;
    for (const auto& f : facets)
        if (f.tag == tag)
            l += std::hypot(vertices[f.v1].x1 - vertices[f.v0].x1, vertices[f.v1].x2 - vertices[f.v0].x2);
    return l;
}

MeshSpec MeshSpec::preset(std::string_view name) {
    if (name == "coarse") return {"coarse", 1.25, 1.25};
    if (name == "medium") return {"medium", 1.0, 0.625};
    if (name == "paper") return {"paper", 0.75, 0.625};
    throw ParameterError("unknown mesh preset '" + std::string(name) + "'");
}

int expected_cell_count(const MeshSpec& spec) {
    Counts c = counts_for(spec);
    int main_x = c.main_x1 + c.main_x2 + c.main_x3;
    return 4 * (c.inlet_x * c.mid_y + main_x * (2 * c.outer_y + c.mid_y));
}

Mesh build_channel_mesh(const MeshSpec& spec) {
    Counts c = counts_for(spec);

    std::vector<double> xs;
    append_segment(xs, 0.0, kInletLength, c.inlet_x);
    const int i_expansion = static_cast<int>(xs.size()) - 1;
    append_segment(xs, kInletLength, kOutputLine, c.main_x1);
    append_segment(xs, kOutputLine, kObsLine, c.main_x2);
    const int i_obs = static_cast<int>(xs.size()) - 1;
    append_segment(xs, kObsLine, kLength, c.main_x3);

    // lower half, mirrored for an exactly symmetric set of rows
    std::vector<double> lower;
    append_segment(lower, 0.0, 2.5, c.outer_y);
    append_segment(lower, 2.5, 3.75, c.mid_y / 2);
    std::vector<double> ys = lower;
    for (int k = static_cast<int>(lower.size()) - 2; k >= 0; --k) ys.push_back(kHeight - lower[k]);
    const int j_low = c.outer_y;           // row of x2 = 2.5
    const int j_high = c.outer_y + c.mid_y; // row of x2 = 5

    const int nx = static_cast<int>(xs.size()), ny = static_cast<int>(ys.size());
    auto in_inlet_rows = [&](int j) { return j >= j_low && j <= j_high; };

    Mesh m;
    std::vector<int> node(static_cast<std::size_t>(nx) * ny, -1);
    auto id = [&](int i, int j) -> int& { return node[static_cast<std::size_t>(i) * ny + j]; };
    for (int i = 0; i < nx; ++i)
        for (int j = 0; j < ny; ++j)
            if (i >= i_expansion || in_inlet_rows(j)) {
                id(i, j) = m.n_vertices();
                m.vertices.push_back({xs[i], ys[j]});
            }

    for (int i = 0; i + 1 < nx; ++i) {
        for (int j = 0; j + 1 < ny; ++j) {
            if (i < i_expansion && !(j >= j_low && j + 1 <= j_high)) continue;
            int v00 = id(i, j), v10 = id(i + 1, j), v11 = id(i + 1, j + 1), v01 = id(i, j + 1);
            int cen = m.n_vertices();
            m.vertices.push_back({0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])});
            m.triangles.push_back({cen, v00, v10});
            m.triangles.push_back({cen, v10, v11});
            m.triangles.push_back({cen, v11, v01});
            m.triangles.push_back({cen, v01, v00});
        }
    }

    auto vertical = [&](int i, int j0, int j1, FacetTag tag) {
        for (int j = j0; j < j1; ++j) m.facets.push_back({id(i, j), id(i, j + 1), tag});
    };
    auto horizontal = [&](int j, int i0, int i1, FacetTag tag) {
        for (int i = i0; i < i1; ++i) m.facets.push_back({id(i, j), id(i + 1, j), tag});
    };
    vertical(0, j_low, j_high, FacetTag::Inlet);
    vertical(nx - 1, 0, ny - 1, FacetTag::Outlet);
    vertical(i_expansion, 0, j_low, FacetTag::GammaD);
    vertical(i_expansion, j_high, ny - 1, FacetTag::GammaD);
    horizontal(j_low, 0, i_expansion, FacetTag::Gamma0);
    horizontal(j_high, 0, i_expansion, FacetTag::Gamma0);
    horizontal(0, i_expansion, nx - 1, FacetTag::Gamma0);
    horizontal(ny - 1, i_expansion, nx - 1, FacetTag::Gamma0);
    vertical(i_obs, 0, ny - 1, FacetTag::GammaObs);
    vertical(i_expansion, j_low, j_high, FacetTag::GammaCh);
    return m;
}

NodeLocation locate_output_node(const Mesh& mesh, Point target) {
    NodeLocation best;
    double best_d2 = INFINITY;
    for (int i = 0; i < mesh.n_vertices(); ++i) {
        double dx = mesh.vertices[i].x1 - target.x1, dy = mesh.vertices[i].x2 - target.x2;
        double d2 = dx * dx + dy * dy;
        if (d2 < best_d2) {
            best_d2 = d2;
            best.index = i;
        }
    }
    if (best.index < 0) throw GeometryError("locate_output_node: empty mesh");
    best.distance = std::sqrt(best_d2);
    return best;
}

std::vector<int> mirror_vertex_permutation(const Mesh& mesh, double tolerance) {
    const int n = mesh.n_vertices();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto key_less = [&](int a, int b) {
        const auto& p = mesh.vertices[a];
        const auto& q = mesh.vertices[b];
        if (std::abs(p.x1 - q.x1) > tolerance) return p.x1 < q.x1;
        if (std::abs(p.x2 - q.x2) > tolerance) return p.x2 < q.x2;
        return false;
    };
    std::sort(order.begin(), order.end(), key_less);
    std::vector<int> perm(n, -1);
    for (int i = 0; i < n; ++i) {
        Point m{mesh.vertices[i].x1, kHeight - mesh.vertices[i].x2};
        auto it = std::lower_bound(order.begin(), order.end(), m, [&](int a, const Point& q) {
            const auto& p = mesh.vertices[a];
            if (std::abs(p.x1 - q.x1) > tolerance) return p.x1 < q.x1;
            if (std::abs(p.x2 - q.x2) > tolerance) return p.x2 < q.x2;
            return false;
        });
        if (it == order.end() || std::abs(mesh.vertices[*it].x1 - m.x1) > tolerance ||
            std::abs(mesh.vertices[*it].x2 - m.x2) > tolerance) {
            std::ostringstream msg;
            msg << "mesh is not mirror symmetric at vertex " << i;
            throw GeometryError(msg.str());
        }
        perm[i] = *it;
    }
    return perm;
}

void write_mesh(const Mesh& mesh, std::ostream& out) {
    out << "channel-mesh v1\n" << mesh.n_vertices() << "\n" << std::setprecision(17);
    for (const auto& p : mesh.vertices) out << p.x1 << " " << p.x2 << "\n";
    out << mesh.n_triangles() << "\n";
    for (const auto& t : mesh.triangles) out << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << mesh.facets.size() << "\n";
    for (const auto& f : mesh.facets) out << f.v0 << " " << f.v1 << " " << to_string(f.tag) << "\n";
}

Mesh read_mesh(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "channel-mesh v1") throw FormatError("not a channel-mesh v1 file");
    Mesh m;
    int n = 0;
    if (!(in >> n) || n < 0) throw FormatError("bad vertex count");
    m.vertices.resize(n);
    for (auto& p : m.vertices)
        if (!(in >> p.x1 >> p.x2)) throw FormatError("truncated vertex list");
    if (!(in >> n) || n < 0) throw FormatError("bad triangle count");
    m.triangles.resize(n);
    for (auto& t : m.triangles) {
        if (!(in >> t[0] >> t[1] >> t[2])) throw FormatError("truncated triangle list");
        for (int v : t)
            if (v < 0 || v >= m.n_vertices()) throw FormatError("triangle references a missing vertex");
    }
    if (!(in >> n) || n < 0) throw FormatError("bad facet count");
    m.facets.resize(n);
    for (auto& f : m.facets) {
        std::string tag;
        if (!(in >> f.v0 >> f.v1 >> tag)) throw FormatError("truncated facet list");
        if (f.v0 < 0 || f.v0 >= m.n_vertices() || f.v1 < 0 || f.v1 >= m.n_vertices())
            throw FormatError("facet references a missing vertex");
        f.tag = facet_tag_from_string(tag);
    }
    return m;
}

} // namespace bifctl::mesh
