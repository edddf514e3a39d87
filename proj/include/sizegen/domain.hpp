#pragma once

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "sizegen/graphon.hpp"
#include "sizegen/mesh.hpp"
#include "sizegen/rng.hpp"

namespace sizegen {

enum class FeatureRule { linear_pair, block_indicator, xyz_normal };

struct Graph {
    int n = 0;
    Eigen::MatrixXd adjacency;  // symmetric, zero diagonal
    bool weighted = false;
};

// Finite sample of a continuous tokenset: latent points, token features,
// per-token measure weights and, for graphon domains, the sampled graph.
struct Tokenset {
    Eigen::MatrixXd latents;   // n x latent_dim
    Eigen::MatrixXd features;  // n x d
    Eigen::VectorXd weights;   // nonnegative, sums to 1
    std::optional<Graph> graph;
    std::optional<int> label;

    int n() const { return static_cast<int>(latents.rows()); }
};

// Generative description of a continuous tokenset. Graphon domains live on
// [0,1] with the uniform measure; surface domains carry the area-weighted
// measure of an analytic sphere/torus or a triangle mesh.
struct DomainSpec {
    enum class Kind { graphon, surface };
    enum class SurfaceKind { sphere, torus, mesh };

    Kind kind = Kind::graphon;

    GraphonKernel kernel;
    double sparsity_exponent = 1.0;  // alpha in (1/2, 1]; edge prob scaled by n^(alpha-1)

    SurfaceKind surface_kind = SurfaceKind::sphere;
    double sphere_radius = 1.0;
    double torus_major = 2.0;
    double torus_minor = 0.5;
    Mesh mesh;

    FeatureRule feature_rule = FeatureRule::linear_pair;

    int latent_dim() const { return kind == Kind::graphon ? 1 : 3; }

    static DomainSpec Graphon(const GraphonKernel& kernel, double alpha = 1.0,
                              FeatureRule rule = FeatureRule::linear_pair) {
        if (!(alpha > 0.5 && alpha <= 1.0)) throw std::invalid_argument("sparsity exponent must lie in (1/2, 1]");
        DomainSpec d;
        d.kind = Kind::graphon;
        d.kernel = kernel;
        d.sparsity_exponent = alpha;
        d.feature_rule = rule;
        return d;
    }

    static DomainSpec Sphere(double radius = 1.0, FeatureRule rule = FeatureRule::xyz_normal) {
        DomainSpec d;
        d.kind = Kind::surface;
        d.surface_kind = SurfaceKind::sphere;
        d.sphere_radius = radius;
        d.feature_rule = rule;
        return d;
    }

    static DomainSpec Torus(double major_r, double minor_r, FeatureRule rule = FeatureRule::xyz_normal) {
        DomainSpec d;
        d.kind = Kind::surface;
        d.surface_kind = SurfaceKind::torus;
        d.torus_major = major_r;
        d.torus_minor = minor_r;
        d.feature_rule = rule;
        return d;
    }

    static DomainSpec FromMesh(Mesh mesh, FeatureRule rule = FeatureRule::xyz_normal) {
        DomainSpec d;
        d.kind = Kind::surface;
        d.surface_kind = SurfaceKind::mesh;
        d.mesh = std::move(mesh);
        d.feature_rule = rule;
        return d;
    }
};

inline int feature_dim(FeatureRule rule) {
    switch (rule) {
        case FeatureRule::linear_pair: return 2;
        case FeatureRule::block_indicator: return 2;
        case FeatureRule::xyz_normal: return 6;
    }
    return 0;
}

// Token features from latent positions. xyz_normal additionally needs the
// per-point surface normals.
inline Eigen::MatrixXd make_features(FeatureRule rule, const Eigen::MatrixXd& latents,
                                     const Eigen::MatrixXd& normals = Eigen::MatrixXd()) {
    const int n = static_cast<int>(latents.rows());
    Eigen::MatrixXd f(n, feature_dim(rule));
    switch (rule) {
        case FeatureRule::linear_pair:
            if (latents.cols() != 1) throw std::invalid_argument("linear_pair expects 1-d latents");
            for (int i = 0; i < n; ++i) {
                f(i, 0) = latents(i, 0);
                f(i, 1) = 1.0 - latents(i, 0);
            }
            break;
        case FeatureRule::block_indicator:
            if (latents.cols() != 1) throw std::invalid_argument("block_indicator expects 1-d latents");
            for (int i = 0; i < n; ++i) {
                // boundary x = 0.5 belongs to the left block
                const bool left = latents(i, 0) <= 0.5;
                f(i, 0) = left ? 1.0 : 0.0;
                f(i, 1) = left ? 0.0 : 1.0;
            }
            break;
        case FeatureRule::xyz_normal:
            if (latents.cols() != 3) throw std::invalid_argument("xyz_normal expects 3-d latents");
            if (normals.rows() != n || normals.cols() != 3) throw std::invalid_argument("xyz_normal requires n x 3 normals");
            f.leftCols(3) = latents;
            f.rightCols(3) = normals;
            break;
    }
    return f;
}

namespace detail {

struct SurfaceDraw {
    Eigen::MatrixXd points;
    Eigen::MatrixXd normals;
};

// Latent draw from a surface domain's area-weighted measure.
inline SurfaceDraw sample_surface_points(const DomainSpec& spec, int n, RngStream& rng) {
    SurfaceDraw out;
    out.points.resize(n, 3);
    out.normals.resize(n, 3);
    switch (spec.surface_kind) {
        case DomainSpec::SurfaceKind::sphere: {
            for (int i = 0; i < n; ++i) {
                Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
                while (v.norm() < 1e-12) v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
                v.normalize();
                out.points.row(i) = (spec.sphere_radius * v).transpose();
                out.normals.row(i) = v.transpose();
            }
            break;
        }
        case DomainSpec::SurfaceKind::torus: {
            // Uniform surface measure: the tube angle v has density
            // proportional to R + r cos(v); sample it by rejection.
            const double R = spec.torus_major, r = spec.torus_minor;
            for (int i = 0; i < n; ++i) {
                const double u = rng.uniform(0.0, 2.0 * M_PI);
                double v;
                do {
                    v = rng.uniform(0.0, 2.0 * M_PI);
                } while (rng.uniform01() * (R + r) > R + r * std::cos(v));
                const double w = R + r * std::cos(v);
                out.points.row(i) << w * std::cos(u), w * std::sin(u), r * std::sin(v);
                out.normals.row(i) << std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v);
            }
            break;
        }
        case DomainSpec::SurfaceKind::mesh: {
            const SurfaceSample s = sample_mesh_surface(spec.mesh, n, rng);
            out.points = s.points;
            out.normals = s.normals;
            break;
        }
    }
    return out;
}

}  // namespace detail

// Latent positions only, drawn from the domain measure. Used by the covering
// and regularity diagnostics, which do not need features or graphs.
inline Eigen::MatrixXd sample_latents(const DomainSpec& spec, int n, RngStream& rng) {
    if (spec.kind == DomainSpec::Kind::graphon) {
        Eigen::MatrixXd x(n, 1);
        for (int i = 0; i < n; ++i) x(i, 0) = rng.uniform01();
        return x;
    }
    return detail::sample_surface_points(spec, n, rng).points;
}

// n i.i.d. tokens from the domain. Graphon domains also get an unweighted
// graph with edge probabilities n^(alpha-1) * W(x_i, x_j).
inline Tokenset sample_tokenset(const DomainSpec& spec, int n, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("sample_tokenset: n must be >= 1");
    Tokenset t;
    t.weights = Eigen::VectorXd::Constant(n, 1.0 / n);

    if (spec.kind == DomainSpec::Kind::graphon) {
        t.latents = sample_latents(spec, n, rng);
        t.features = make_features(spec.feature_rule, t.latents);
        const double gamma = std::pow(static_cast<double>(n), spec.sparsity_exponent - 1.0);
        Graph g;
        g.n = n;
        g.weighted = false;
        g.adjacency = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                double prob = gamma * eval_graphon(spec.kernel, t.latents(i, 0), t.latents(j, 0));
                if (prob > 1.0) prob = 1.0;
                if (rng.bernoulli(prob)) {
                    g.adjacency(i, j) = 1.0;
                    g.adjacency(j, i) = 1.0;
                }
            }
        }
        t.graph = std::move(g);
    } else {
        const detail::SurfaceDraw d = detail::sample_surface_points(spec, n, rng);
        t.latents = d.points;
        t.features = make_features(spec.feature_rule, d.points, d.normals);
    }
    return t;
}

// High-resolution relaxation of the continuous tokenset. For graphons this is
// the weighted complete graph with W(x_i, x_j) edge weights (no Bernoulli
// sampling, no sparsity factor); for surfaces a dense point sample.
inline Tokenset build_reference_tokenset(const DomainSpec& spec, int n, RngStream& rng) {
    if (n < 2) throw std::invalid_argument("build_reference_tokenset: need n >= 2");
    if (spec.kind == DomainSpec::Kind::surface && spec.surface_kind == DomainSpec::SurfaceKind::mesh &&
        spec.mesh.total_area() <= 0.0) {
        throw std::invalid_argument("build_reference_tokenset: degenerate mesh");
    }

    Tokenset t;
    t.weights = Eigen::VectorXd::Constant(n, 1.0 / n);
    if (spec.kind == DomainSpec::Kind::graphon) {
        t.latents = sample_latents(spec, n, rng);
        t.features = make_features(spec.feature_rule, t.latents);
        Graph g;
        g.n = n;
        g.weighted = true;
        g.adjacency.resize(n, n);
        for (int i = 0; i < n; ++i) {
            g.adjacency(i, i) = 0.0;
            for (int j = i + 1; j < n; ++j) {
                const double w = eval_graphon(spec.kernel, t.latents(i, 0), t.latents(j, 0));
                g.adjacency(i, j) = w;
                g.adjacency(j, i) = w;
            }
        }
        t.graph = std::move(g);
    } else {
        const detail::SurfaceDraw d = detail::sample_surface_points(spec, n, rng);
        t.latents = d.points;
        t.features = make_features(spec.feature_rule, d.points, d.normals);
    }
    return t;
}

// --- plain-text edge list: header "n m weighted", rows "i j [weight]" ---

inline void write_edge_list(std::ostream& out, const Graph& g) {
    long m = 0;
    for (int i = 0; i < g.n; ++i)
        for (int j = i + 1; j < g.n; ++j)
            if (g.adjacency(i, j) != 0.0) ++m;
    out << g.n << " " << m << " " << (g.weighted ? 1 : 0) << "\n";
    char buf[64];
    for (int i = 0; i < g.n; ++i) {
        for (int j = i + 1; j < g.n; ++j) {
            const double w = g.adjacency(i, j);
            if (w == 0.0) continue;
            if (g.weighted) {
                std::snprintf(buf, sizeof(buf), "%d %d %.17g\n", i, j, w);
                out << buf;
            } else {
                out << i << " " << j << "\n";
            }
        }
    }
}

inline Graph read_edge_list(std::istream& in) {
    int n = 0, weighted = 0;
    long m = 0;
    if (!(in >> n >> m >> weighted)) throw std::runtime_error("edge list: malformed header");
    if (n < 0 || m < 0) throw std::runtime_error("edge list: negative counts");
    Graph g;
    g.n = n;
    g.weighted = weighted != 0;
    g.adjacency = Eigen::MatrixXd::Zero(n, n);
    for (long e = 0; e < m; ++e) {
        int i, j;
        if (!(in >> i >> j)) throw std::runtime_error("edge list: truncated at edge " + std::to_string(e));
        if (i < 0 || i >= n || j < 0 || j >= n) throw std::runtime_error("edge list: vertex index out of range");
        double w = 1.0;
        if (g.weighted && !(in >> w)) throw std::runtime_error("edge list: missing weight at edge " + std::to_string(e));
        g.adjacency(i, j) = w;
        g.adjacency(j, i) = w;
    }
    return g;
}

}  // namespace sizegen
