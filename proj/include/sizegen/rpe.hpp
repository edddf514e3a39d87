#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/domain.hpp"
#include "sizegen/graphon.hpp"
#include "sizegen/rng.hpp"

namespace sizegen {

// Pairwise positional-encoding tensor. values has one row per ordered pair,
// row index i*n + j, and dp columns; this layout feeds the pair MLP in the
// attention kernel directly.
struct RpeMatrix {
    enum class Kind { random_walk, shortest_path, displacement, kernel_power_reference };

    Kind kind = Kind::displacement;
    int k = 0;  // step count for random_walk / kernel_power_reference
    int n = 0;
    int dp = 1;
    Eigen::MatrixXd values;       // (n*n) x dp
    std::vector<int> degenerate;  // sorted vertex indices with degree 0

    double at(int i, int j, int c = 0) const {
        return values(static_cast<Eigen::Index>(i) * n + j, c);
    }
    double& at(int i, int j, int c = 0) {
        return values(static_cast<Eigen::Index>(i) * n + j, c);
    }
};

// n * (P^k) with P = D^{-1} A. Vertices of degree 0 get all-zero rows in P
// and are recorded in `degenerate` instead of being treated as errors.
inline RpeMatrix random_walk_rpe(const Graph& graph, int k) {
    if (k < 1) throw std::invalid_argument("random_walk_rpe: k must be >= 1");
    const int n = graph.n;

    RpeMatrix r;
    r.kind = RpeMatrix::Kind::random_walk;
    r.k = k;
    r.n = n;
    r.dp = 1;

    Eigen::MatrixXd p(n, n);
    for (int i = 0; i < n; ++i) {
        const double deg = graph.adjacency.row(i).sum();
        if (deg <= 0.0) {
            p.row(i).setZero();
            r.degenerate.push_back(i);
        } else {
            p.row(i) = graph.adjacency.row(i) / deg;
        }
    }

    Eigen::MatrixXd pk = p;
    for (int step = 1; step < k; ++step) pk = pk * p;

    r.values.resize(static_cast<Eigen::Index>(n) * n, 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            r.at(i, j) = static_cast<double>(n) * pk(i, j);
    return r;
}

// Hop distances by per-source BFS over bitset rows; -1 marks unreachable
// pairs. Rejects weighted graphs, hop distance is only defined for binary
// adjacency here.
inline RpeMatrix shortest_path_rpe(const Graph& graph) {
    if (graph.weighted) throw std::invalid_argument("shortest_path_rpe: weighted graphs are not supported");
    const int n = graph.n;
    const int words = (n + 63) / 64;

    std::vector<uint64_t> adj(static_cast<size_t>(n) * words, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double a = graph.adjacency(i, j);
            if (a == 0.0) continue;
            if (a != 1.0) throw std::invalid_argument("shortest_path_rpe: adjacency entries must be 0 or 1");
            adj[static_cast<size_t>(i) * words + j / 64] |= 1ull << (j % 64);
        }
    }

    RpeMatrix r;
    r.kind = RpeMatrix::Kind::shortest_path;
    r.n = n;
    r.dp = 1;
    r.values.setConstant(static_cast<Eigen::Index>(n) * n, 1, -1.0);

    std::vector<uint64_t> visited(words), frontier(words), next(words);
    for (int s = 0; s < n; ++s) {
        std::fill(visited.begin(), visited.end(), 0);
        std::fill(frontier.begin(), frontier.end(), 0);
        frontier[s / 64] = 1ull << (s % 64);
        visited[s / 64] = frontier[s / 64];
        r.at(s, s) = 0.0;
        int dist = 0;
        bool any = true;
        while (any) {
            ++dist;
            std::fill(next.begin(), next.end(), 0);
            for (int w = 0; w < words; ++w) {
                uint64_t bits = frontier[w];
                while (bits) {
                    const int v = w * 64 + std::countr_zero(bits);
                    bits &= bits - 1;
                    const uint64_t* row = &adj[static_cast<size_t>(v) * words];
                    for (int u = 0; u < words; ++u) next[u] |= row[u];
                }
            }
            any = false;
            for (int w = 0; w < words; ++w) {
                uint64_t fresh = next[w] & ~visited[w];
                visited[w] |= fresh;
                frontier[w] = fresh;
                if (!fresh) continue;
                any = true;
                while (fresh) {
                    const int v = w * 64 + std::countr_zero(fresh);
                    fresh &= fresh - 1;
                    r.at(s, v) = static_cast<double>(dist);
                }
            }
        }
    }
    return r;
}

// p(x, y) = x - y for every ordered pair of points.
inline RpeMatrix displacement_rpe(const Eigen::MatrixXd& points) {
    const int n = static_cast<int>(points.rows());
    const int d = static_cast<int>(points.cols());
    RpeMatrix r;
    r.kind = RpeMatrix::Kind::displacement;
    r.n = n;
    r.dp = d;
    r.values.resize(static_cast<Eigen::Index>(n) * n, d);
    for (int c = 0; c < d; ++c) {
        for (int i = 0; i < n; ++i) {
            const double xi = points(i, c);
            for (int j = 0; j < n; ++j) {
                r.values(static_cast<Eigen::Index>(i) * n + j, c) = xi - points(j, c);
            }
        }
    }
    return r;
}

// Monte Carlo approximation of the k-step transition kernel of the graphon,
// evaluated at the given latent pairs. One shared quadrature set of M nodes
// approximates every integral: the degree normalizers and the k-1 chained
// inner integrals. The estimate is
//   Pi_k(x_i, x_j) ~= [U (S/M)^{k-2} (T/M)]_{ij}
// with U[i][a] = p(x_i, z_a), S[a][b] = p(z_a, z_b), T[a][j] = p(z_a, x_j)
// and p(x, y) = w(x, y) / deg(x), deg taken over the same quadrature nodes.
inline RpeMatrix kernel_power_reference(const GraphonKernel& kernel, const Eigen::VectorXd& latents,
                                        int k, int quadrature_nodes, RngStream& rng) {
    if (k < 1) throw std::invalid_argument("kernel_power_reference: k must be >= 1");
    if (quadrature_nodes < 1) throw std::invalid_argument("kernel_power_reference: need at least one quadrature node");
    const int n = static_cast<int>(latents.size());
    const int m = quadrature_nodes;

    Eigen::VectorXd z(m);
    for (int a = 0; a < m; ++a) z(a) = rng.uniform01();

    Eigen::MatrixXd wxz(n, m);  // w(x_i, z_a)
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < m; ++a) wxz(i, a) = eval_graphon(kernel, latents(i), z(a));

    Eigen::VectorXd deg_x = wxz.rowwise().mean();
    for (int i = 0; i < n; ++i)
        if (deg_x(i) <= 0.0) throw std::runtime_error("kernel_power_reference: zero degree at sample point " + std::to_string(i));

    if (k == 1) {
        RpeMatrix r;
        r.kind = RpeMatrix::Kind::kernel_power_reference;
        r.k = 1;
        r.n = n;
        r.dp = 1;
        r.values.resize(static_cast<Eigen::Index>(n) * n, 1);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                r.at(i, j) = eval_graphon(kernel, latents(i), latents(j)) / deg_x(i);
        return r;
    }

    Eigen::MatrixXd s(m, m);  // w(z_a, z_b), then row-normalized
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) s(a, b) = eval_graphon(kernel, z(a), z(b));
    Eigen::VectorXd deg_z = s.rowwise().mean();
    for (int a = 0; a < m; ++a)
        if (deg_z(a) <= 0.0) throw std::runtime_error("kernel_power_reference: zero degree at quadrature node " + std::to_string(a));

    Eigen::MatrixXd u = (wxz.array().colwise() / deg_x.array()).matrix();  // p(x_i, z_a)
    s = (s.array().colwise() / deg_z.array()).matrix();                    // p(z_a, z_b)

    Eigen::MatrixXd t(m, n);  // p(z_a, x_j)
    for (int a = 0; a < m; ++a)
        for (int j = 0; j < n; ++j) t(a, j) = eval_graphon(kernel, z(a), latents(j)) / deg_z(a);

    Eigen::MatrixXd chain = u;
    for (int step = 0; step < k - 2; ++step) chain = (chain * s) / static_cast<double>(m);
    Eigen::MatrixXd pi = (chain * t) / static_cast<double>(m);

    RpeMatrix r;
    r.kind = RpeMatrix::Kind::kernel_power_reference;
    r.k = k;
    r.n = n;
    r.dp = 1;
    r.values.resize(static_cast<Eigen::Index>(n) * n, 1);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) r.at(i, j) = pi(i, j);
    return r;
}

// Sup-norm deviation between two encodings over all pairs whose endpoints are
// defined in both: rows/columns of flagged degree-0 vertices are excluded.
inline double stability_sup_error(const RpeMatrix& discrete, const RpeMatrix& reference) {
    if (discrete.n != reference.n || discrete.dp != reference.dp)
        throw std::invalid_argument("stability_sup_error: shape mismatch");
    const int n = discrete.n;

    std::vector<char> skip(static_cast<size_t>(n), 0);
    for (int v : discrete.degenerate) skip[static_cast<size_t>(v)] = 1;
    for (int v : reference.degenerate) skip[static_cast<size_t>(v)] = 1;

    double sup = 0.0;
    for (int i = 0; i < n; ++i) {
        if (skip[static_cast<size_t>(i)]) continue;
        for (int j = 0; j < n; ++j) {
            if (skip[static_cast<size_t>(j)]) continue;
            for (int c = 0; c < discrete.dp; ++c) {
                const double d = std::abs(discrete.at(i, j, c) - reference.at(i, j, c));
                if (d > sup) sup = d;
            }
        }
    }
    return sup;
}

// --- flat binary cache format ---
// header: magic "RPE1", u32 kind, u32 k, u32 n, u32 dp, u32 flag count,
// then the flagged indices (u32 each), then values row-major f64
// (pair-major: row i*n+j, components contiguous per pair).

inline void write_rpe(std::ostream& out, const RpeMatrix& r) {
    const char magic[4] = {'R', 'P', 'E', '1'};
    out.write(magic, 4);
    auto put_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(static_cast<uint32_t>(r.kind));
    put_u32(static_cast<uint32_t>(r.k));
    put_u32(static_cast<uint32_t>(r.n));
    put_u32(static_cast<uint32_t>(r.dp));
    put_u32(static_cast<uint32_t>(r.degenerate.size()));
    for (int v : r.degenerate) put_u32(static_cast<uint32_t>(v));
    std::vector<double> row(static_cast<size_t>(r.dp));
    for (Eigen::Index pr = 0; pr < r.values.rows(); ++pr) {
        for (int c = 0; c < r.dp; ++c) row[static_cast<size_t>(c)] = r.values(pr, c);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(8 * row.size()));
    }
}

inline RpeMatrix read_rpe(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || magic[0] != 'R' || magic[1] != 'P' || magic[2] != 'E' || magic[3] != '1')
        throw std::runtime_error("read_rpe: bad magic");
    auto get_u32 = [&]() {
        uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw std::runtime_error("read_rpe: truncated header");
        return v;
    };
    RpeMatrix r;
    r.kind = static_cast<RpeMatrix::Kind>(get_u32());
    r.k = static_cast<int>(get_u32());
    r.n = static_cast<int>(get_u32());
    r.dp = static_cast<int>(get_u32());
    const uint32_t flags = get_u32();
    r.degenerate.resize(flags);
    for (uint32_t i = 0; i < flags; ++i) r.degenerate[i] = static_cast<int>(get_u32());
    r.values.resize(static_cast<Eigen::Index>(r.n) * r.n, r.dp);
    std::vector<double> row(static_cast<size_t>(r.dp));
    for (Eigen::Index pr = 0; pr < r.values.rows(); ++pr) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(8 * row.size()));
        if (!in) throw std::runtime_error("read_rpe: truncated values");
        for (int c = 0; c < r.dp; ++c) r.values(pr, c) = row[static_cast<size_t>(c)];
    }
    return r;
}

}  // namespace sizegen
