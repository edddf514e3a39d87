#pragma once

#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/rng.hpp"

namespace sizegen {

struct Mesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<double> triangle_areas;

    void recompute_areas() {
        triangle_areas.resize(triangles.size());
        for (size_t t = 0; t < triangles.size(); ++t) {
            const Eigen::Vector3d& a = vertices[triangles[t][0]];
            const Eigen::Vector3d& b = vertices[triangles[t][1]];
            const Eigen::Vector3d& c = vertices[triangles[t][2]];
            triangle_areas[t] = 0.5 * (b - a).cross(c - a).norm();
        }
    }

    double total_area() const {
        double s = 0.0;
        for (double a : triangle_areas) s += a;
        return s;
    }
};

namespace detail {

inline std::runtime_error off_error(int line, const std::string& what) {
    return std::runtime_error("OFF parse error at line " + std::to_string(line) + ": " + what);
}

// Next non-empty, non-comment line. Returns false at EOF.
inline bool next_content_line(std::istream& in, std::string& line, int& line_no) {
    while (std::getline(in, line)) {
        ++line_no;
        const size_t h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        size_t b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        return true;
    }
    return false;
}

}  // namespace detail

// ASCII OFF reader. Accepts OFF and COFF headers (per-vertex colors are
// ignored); polygon faces with more than three vertices are fan-triangulated.
inline Mesh parse_off(std::istream& in) {
    using detail::next_content_line;
    using detail::off_error;

    std::string line;
    int line_no = 0;
    if (!next_content_line(in, line, line_no)) throw off_error(line_no, "empty input");

    std::istringstream header(line);
    std::string magic;
    header >> magic;
    if (magic != "OFF" && magic != "COFF") throw off_error(line_no, "expected OFF or COFF header, got '" + magic + "'");
    const bool has_vertex_color = (magic == "COFF");

    // Counts may share the header line (common in ModelNet files).
    long v_count = -1, f_count = -1, e_count = 0;
    if (!(header >> v_count)) {
        if (!next_content_line(in, line, line_no)) throw off_error(line_no, "missing counts line");
        std::istringstream counts(line);
        if (!(counts >> v_count >> f_count >> e_count)) throw off_error(line_no, "malformed counts line '" + line + "'");
    } else if (!(header >> f_count >> e_count)) {
        throw off_error(line_no, "malformed counts on header line");
    }
    if (v_count < 0 || f_count < 0) throw off_error(line_no, "negative vertex or face count");

    Mesh mesh;
    mesh.vertices.reserve(static_cast<size_t>(v_count));
    for (long i = 0; i < v_count; ++i) {
        if (!next_content_line(in, line, line_no)) throw off_error(line_no, "unexpected EOF in vertex list");
        std::istringstream vs(line);
        double x, y, z;
        if (!(vs >> x >> y >> z)) throw off_error(line_no, "non-numeric vertex coordinates '" + line + "'");
        (void)has_vertex_color;  // trailing color components, if any, are dropped
        mesh.vertices.emplace_back(x, y, z);
    }

    for (long f = 0; f < f_count; ++f) {
        if (!next_content_line(in, line, line_no)) throw off_error(line_no, "unexpected EOF in face list");
        std::istringstream fs(line);
        long k = 0;
        if (!(fs >> k) || k < 3) throw off_error(line_no, "face must list at least 3 vertices");
        std::vector<int> idx(static_cast<size_t>(k));
        for (long j = 0; j < k; ++j) {
            long v;
            if (!(fs >> v)) throw off_error(line_no, "non-numeric face index");
            if (v < 0 || v >= v_count) throw off_error(line_no, "vertex index " + std::to_string(v) + " out of range [0," + std::to_string(v_count - 1) + "]");
            idx[static_cast<size_t>(j)] = static_cast<int>(v);
        }
        for (long j = 1; j + 1 < k; ++j) {
            mesh.triangles.push_back({idx[0], idx[static_cast<size_t>(j)], idx[static_cast<size_t>(j + 1)]});
        }
    }

    mesh.recompute_areas();
    if (mesh.total_area() <= 0.0) throw off_error(line_no, "mesh has zero total area");
    return mesh;
}

inline Mesh parse_off_text(const std::string& text) {
    std::istringstream in(text);
    return parse_off(in);
}

struct SurfaceSample {
    Eigen::MatrixXd points;   // n x 3
    Eigen::MatrixXd normals;  // n x 3, unit face normals
};

// Area-weighted point sample: triangle chosen proportionally to area, then a
// uniform barycentric draw inside it.
inline SurfaceSample sample_mesh_surface(const Mesh& mesh, int n, RngStream& rng) {
    if (mesh.triangles.empty() || mesh.total_area() <= 0.0) throw std::invalid_argument("sample_mesh_surface: mesh has zero total area");

    std::vector<double> cumulative(mesh.triangle_areas.size());
    double acc = 0.0;
    for (size_t t = 0; t < mesh.triangle_areas.size(); ++t) {
        acc += mesh.triangle_areas[t];
        cumulative[t] = acc;
    }

    SurfaceSample s;
    s.points.resize(n, 3);
    s.normals.resize(n, 3);
    for (int i = 0; i < n; ++i) {
        const int t = rng.discrete(cumulative);
        const Eigen::Vector3d& a = mesh.vertices[mesh.triangles[static_cast<size_t>(t)][0]];
        const Eigen::Vector3d& b = mesh.vertices[mesh.triangles[static_cast<size_t>(t)][1]];
        const Eigen::Vector3d& c = mesh.vertices[mesh.triangles[static_cast<size_t>(t)][2]];
        const double r1 = std::sqrt(rng.uniform01());
        const double r2 = rng.uniform01();
        const Eigen::Vector3d p = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
        Eigen::Vector3d nrm = (b - a).cross(c - a);
        const double len = nrm.norm();
        if (len <= 0.0) { --i; continue; }  // degenerate triangle, area ~ 0, resample
        nrm /= len;
        s.points.row(i) = p.transpose();
        s.normals.row(i) = nrm.transpose();
    }
    return s;
}

// Icosphere: subdivided icosahedron projected onto the sphere. Used as the
// built-in mesh stand-in for analytic sphere domains.
inline Mesh make_icosphere(double radius, int subdivisions) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::Vector3d> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            Eigen::Vector3d m = (verts[a] + verts[b]).normalized();
            verts.push_back(m);
            const int id = static_cast<int>(verts.size()) - 1;
            midpoint[key] = id;
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f[0], f[1]);
            const int bc = mid(f[1], f[2]);
            const int ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }

    Mesh mesh;
    mesh.vertices.reserve(verts.size());
    for (const auto& v : verts) mesh.vertices.push_back(v * radius);
    mesh.triangles = std::move(faces);
    mesh.recompute_areas();
    return mesh;
}

// Regular grid mesh over the torus with major radius R and tube radius r.
inline Mesh make_torus_grid(double major_r, double minor_r, int seg_major, int seg_minor) {
    if (seg_major < 3 || seg_minor < 3) throw std::invalid_argument("make_torus_grid: need at least 3 segments per direction");
    Mesh mesh;
    mesh.vertices.reserve(static_cast<size_t>(seg_major) * static_cast<size_t>(seg_minor));
    for (int i = 0; i < seg_major; ++i) {
        const double u = 2.0 * M_PI * i / seg_major;
        for (int j = 0; j < seg_minor; ++j) {
            const double v = 2.0 * M_PI * j / seg_minor;
            const double w = major_r + minor_r * std::cos(v);
            mesh.vertices.emplace_back(w * std::cos(u), w * std::sin(u), minor_r * std::sin(v));
        }
    }
    auto at = [&](int i, int j) { return (i % seg_major) * seg_minor + (j % seg_minor); };
    for (int i = 0; i < seg_major; ++i) {
        for (int j = 0; j < seg_minor; ++j) {
            const int a = at(i, j), b = at(i + 1, j), c = at(i + 1, j + 1), d = at(i, j + 1);
            mesh.triangles.push_back({a, b, c});
            mesh.triangles.push_back({a, c, d});
        }
    }
    mesh.recompute_areas();
    return mesh;
}

}  // namespace sizegen
