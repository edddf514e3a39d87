#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/attention_kernel.hpp"
#include "sizegen/model.hpp"

namespace sizegen {

// Reverse-mode tape over the fixed op set used by the model. Nodes hold
// whole matrices, not scalars; forward values are computed eagerly at
// recording time and cached on the node. The fused attention op stores only
// its output and per-row softmax statistics and replays pair-level internals
// blockwise in backward, so reference-sized tokensets do not pin O(n^2)
// activations.
enum class OpKind {
    param,
    constant,
    matmul,
    matmul_nt,  // A * B^T
    add,
    sub,
    scale,
    leaky_relu,
    reshape,           // row-major reinterpretation
    row_softmax_mix,   // measure-weighted softmax over explicit logits
    rpe_attention,     // fused attention layer
    weighted_mean_pool,
    l2_norm,
    log_softmax_ce,
};

struct TapeNode {
    OpKind op = OpKind::constant;
    std::vector<int> in;
    Eigen::MatrixXd value;

    double a = 0.0;   // scale factor / activation slope
    int label = -1;   // cross-entropy class
    Eigen::VectorXd weights;

    // rpe_attention extras
    const RpeMatrix* rpe = nullptr;
    bool scale_logits = true;
    AttentionStats stats;

    // row_softmax_mix cache
    Eigen::MatrixXd att;
};

class Tape {
public:
    int param(const Eigen::MatrixXd& v) {
        TapeNode n;
        n.op = OpKind::param;
        n.value = v;
        nodes_.push_back(std::move(n));
        params_.push_back(last());
        return last();
    }

    int constant(Eigen::MatrixXd v) {
        TapeNode n;
        n.op = OpKind::constant;
        n.value = std::move(v);
        nodes_.push_back(std::move(n));
        return last();
    }

    int matmul(int a, int b) {
        TapeNode n;
        n.op = OpKind::matmul;
        n.in = {a, b};
        n.value.noalias() = val(a) * val(b);
        return push(std::move(n));
    }

    int matmul_nt(int a, int b) {
        TapeNode n;
        n.op = OpKind::matmul_nt;
        n.in = {a, b};
        n.value.noalias() = val(a) * val(b).transpose();
        return push(std::move(n));
    }

    int add(int a, int b) {
        TapeNode n;
        n.op = OpKind::add;
        n.in = {a, b};
        n.value = val(a) + val(b);
        return push(std::move(n));
    }

    int sub(int a, int b) {
        TapeNode n;
        n.op = OpKind::sub;
        n.in = {a, b};
        n.value = val(a) - val(b);
        return push(std::move(n));
    }

    int scale(int a, double s) {
        TapeNode n;
        n.op = OpKind::scale;
        n.in = {a};
        n.a = s;
        n.value = val(a) * s;
        return push(std::move(n));
    }

    int leaky_relu(int a, double slope) {
        TapeNode n;
        n.op = OpKind::leaky_relu;
        n.in = {a};
        n.a = slope;
        n.value = val(a).unaryExpr([slope](double x) { return leaky_relu_scalar(x, slope); });
        return push(std::move(n));
    }

    // Reinterprets the input's entries in row-major order as rows x cols.
    int reshape(int a, int rows, int cols) {
        if (val(a).size() != static_cast<Eigen::Index>(rows) * cols) throw std::invalid_argument("reshape: element count mismatch");
        TapeNode n;
        n.op = OpKind::reshape;
        n.in = {a};
        n.value = reshape_rowmajor(val(a), rows, cols);
        return push(std::move(n));
    }

    int row_softmax_mix(int logits, int values, Eigen::VectorXd weights) {
        const Eigen::MatrixXd& lg = val(logits);
        const Eigen::MatrixXd& vv = val(values);
        if (lg.cols() != vv.rows() || vv.rows() != weights.size()) throw std::invalid_argument("row_softmax_mix: shape mismatch");
        TapeNode n;
        n.op = OpKind::row_softmax_mix;
        n.in = {logits, values};
        n.weights = std::move(weights);
        n.att.resize(lg.rows(), lg.cols());
        for (Eigen::Index i = 0; i < lg.rows(); ++i) {
            const double m = lg.row(i).maxCoeff();
            if (!std::isfinite(m)) throw std::runtime_error("row_softmax_mix: non-finite logit");
            Eigen::VectorXd e = (lg.row(i).array() - m).exp().matrix().transpose();
            e.array() *= n.weights.array();
            const double denom = e.sum();
            if (!(denom > 0.0)) throw std::runtime_error("row_softmax_mix: empty attention row");
            n.att.row(i) = e.transpose() / denom;
        }
        n.value.noalias() = n.att * vv;
        return push(std::move(n));
    }

    int rpe_attention(int h, int q, int k, int v, int w1, int w2, const RpeMatrix* rpe,
                      Eigen::VectorXd weights, double slope, bool scale_logits) {
        TapeNode n;
        n.op = OpKind::rpe_attention;
        n.in = {h, q, k, v, w1, w2};
        n.rpe = rpe;
        n.weights = std::move(weights);
        n.a = slope;
        n.scale_logits = scale_logits;
        AttentionInputs ai = attention_inputs(n);
        n.stats = attention_forward(ai);
        n.value = n.stats.out;
        return push(std::move(n));
    }

    int weighted_mean_pool(int h, Eigen::VectorXd weights) {
        if (val(h).rows() != weights.size()) throw std::invalid_argument("weighted_mean_pool: weight count mismatch");
        TapeNode n;
        n.op = OpKind::weighted_mean_pool;
        n.in = {h};
        n.weights = std::move(weights);
        n.value.noalias() = n.weights.transpose() * val(h);
        return push(std::move(n));
    }

    int l2_norm(int a) {
        TapeNode n;
        n.op = OpKind::l2_norm;
        n.in = {a};
        n.value.resize(1, 1);
        n.value(0, 0) = val(a).norm();
        return push(std::move(n));
    }

    int log_softmax_ce(int a, int label) {
        const Eigen::MatrixXd& row = val(a);
        if (row.rows() != 1) throw std::invalid_argument("log_softmax_ce: expects a 1 x d row");
        if (label < 0 || label >= row.cols()) throw std::invalid_argument("log_softmax_ce: label out of range");
        TapeNode n;
        n.op = OpKind::log_softmax_ce;
        n.in = {a};
        n.label = label;
        const double m = row.maxCoeff();
        const double lse = m + std::log((row.array() - m).exp().sum());
        n.value.resize(1, 1);
        n.value(0, 0) = lse - row(0, label);
        return push(std::move(n));
    }

    const Eigen::MatrixXd& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }

    double scalar(int id) const {
        const Eigen::MatrixXd& v = val(id);
        if (v.size() != 1) throw std::invalid_argument("scalar: node is not 1 x 1");
        return v(0, 0);
    }

    size_t size() const { return nodes_.size(); }
    const std::vector<int>& params() const { return params_; }

    void set_param_value(int idx, const Eigen::MatrixXd& v) { nodes_[static_cast<size_t>(params_[static_cast<size_t>(idx)])].value = v; }

    // Reverse sweep from a scalar output node; returns adjoints for the
    // registered parameters in registration order.
    std::vector<Eigen::MatrixXd> grad(int out_id) const {
        if (val(out_id).size() != 1) throw std::invalid_argument("grad: objective must be scalar");
        std::vector<Eigen::MatrixXd> adj(nodes_.size());
        std::vector<char> live(nodes_.size(), 0);
        adj[static_cast<size_t>(out_id)] = Eigen::MatrixXd::Ones(1, 1);
        live[static_cast<size_t>(out_id)] = 1;

        auto bump = [&](int id, const Eigen::MatrixXd& g) {
            auto& slot = adj[static_cast<size_t>(id)];
            if (!live[static_cast<size_t>(id)]) {
                slot = g;
                live[static_cast<size_t>(id)] = 1;
            } else {
                slot += g;
            }
        };

        for (int id = out_id; id >= 0; --id) {
            if (!live[static_cast<size_t>(id)]) continue;
            const TapeNode& n = nodes_[static_cast<size_t>(id)];
            const Eigen::MatrixXd& g = adj[static_cast<size_t>(id)];
            switch (n.op) {
                case OpKind::param:
                case OpKind::constant:
                    break;
                case OpKind::matmul:
                    bump(n.in[0], g * val(n.in[1]).transpose());
                    bump(n.in[1], val(n.in[0]).transpose() * g);
                    break;
                case OpKind::matmul_nt:
                    bump(n.in[0], g * val(n.in[1]));
                    bump(n.in[1], g.transpose() * val(n.in[0]));
                    break;
                case OpKind::add:
                    bump(n.in[0], g);
                    bump(n.in[1], g);
                    break;
                case OpKind::sub:
                    bump(n.in[0], g);
                    bump(n.in[1], -g);
                    break;
                case OpKind::scale:
                    bump(n.in[0], n.a * g);
                    break;
                case OpKind::leaky_relu: {
                    const double s = n.a;
                    bump(n.in[0], (g.array() * val(n.in[0]).unaryExpr([s](double x) { return x > 0.0 ? 1.0 : s; }).array()).matrix());
                    break;
                }
                case OpKind::reshape:
                    bump(n.in[0], reshape_rowmajor(g, static_cast<int>(val(n.in[0]).rows()), static_cast<int>(val(n.in[0]).cols())));
                    break;
                case OpKind::row_softmax_mix: {
                    const Eigen::MatrixXd& vv = val(n.in[1]);
                    Eigen::MatrixXd m1 = g * vv.transpose();
                    const Eigen::VectorXd rowdot = (g.array() * n.value.array()).rowwise().sum();
                    Eigen::MatrixXd dlogit = n.att.array() * (m1.colwise() - rowdot).array();
                    bump(n.in[0], dlogit);
                    bump(n.in[1], n.att.transpose() * g);
                    break;
                }
                case OpKind::rpe_attention: {
                    AttentionInputs ai = attention_inputs(n);
                    AttentionGrads ag = attention_backward(ai, n.stats, g);
                    bump(n.in[0], ag.dh);
                    bump(n.in[1], ag.dq);
                    bump(n.in[2], ag.dk);
                    bump(n.in[3], ag.dv);
                    bump(n.in[4], ag.dw1);
                    bump(n.in[5], ag.dw2);
                    break;
                }
                case OpKind::weighted_mean_pool:
                    bump(n.in[0], n.weights * g);
                    break;
                case OpKind::l2_norm: {
                    const double norm = n.value(0, 0);
                    if (norm > 0.0) bump(n.in[0], (g(0, 0) / norm) * val(n.in[0]));
                    else bump(n.in[0], Eigen::MatrixXd::Zero(val(n.in[0]).rows(), val(n.in[0]).cols()));
                    break;
                }
                case OpKind::log_softmax_ce: {
                    const Eigen::MatrixXd& row = val(n.in[0]);
                    const double m = row.maxCoeff();
                    Eigen::MatrixXd p = (row.array() - m).exp().matrix();
                    p /= p.sum();
                    p(0, n.label) -= 1.0;
                    bump(n.in[0], g(0, 0) * p);
                    break;
                }
            }
        }

        std::vector<Eigen::MatrixXd> out;
        out.reserve(params_.size());
        for (int pid : params_) {
            if (live[static_cast<size_t>(pid)]) {
                out.push_back(adj[static_cast<size_t>(pid)]);
            } else {
                out.push_back(Eigen::MatrixXd::Zero(val(pid).rows(), val(pid).cols()));
            }
        }
        return out;
    }

    // Recomputes every node from its inputs and returns the largest absolute
    // deviation from the recorded values (0 for a faithful tape).
    double replay() {
        double worst = 0.0;
        for (size_t id = 0; id < nodes_.size(); ++id) {
            TapeNode& n = nodes_[id];
            Eigen::MatrixXd fresh;
            switch (n.op) {
                case OpKind::param:
                case OpKind::constant:
                    continue;
                case OpKind::matmul: fresh = val(n.in[0]) * val(n.in[1]); break;
                case OpKind::matmul_nt: fresh = val(n.in[0]) * val(n.in[1]).transpose(); break;
                case OpKind::add: fresh = val(n.in[0]) + val(n.in[1]); break;
                case OpKind::sub: fresh = val(n.in[0]) - val(n.in[1]); break;
                case OpKind::scale: fresh = val(n.in[0]) * n.a; break;
                case OpKind::leaky_relu: {
                    const double s = n.a;
                    fresh = val(n.in[0]).unaryExpr([s](double x) { return leaky_relu_scalar(x, s); });
                    break;
                }
                case OpKind::reshape: fresh = reshape_rowmajor(val(n.in[0]), static_cast<int>(n.value.rows()), static_cast<int>(n.value.cols())); break;
                case OpKind::row_softmax_mix: fresh = n.att * val(n.in[1]); break;
                case OpKind::rpe_attention: {
                    AttentionInputs ai = attention_inputs(n);
                    fresh = attention_forward(ai).out;
                    break;
                }
                case OpKind::weighted_mean_pool: fresh = n.weights.transpose() * val(n.in[0]); break;
                case OpKind::l2_norm:
                    fresh.resize(1, 1);
                    fresh(0, 0) = val(n.in[0]).norm();
                    break;
                case OpKind::log_softmax_ce: {
                    const Eigen::MatrixXd& row = val(n.in[0]);
                    const double m = row.maxCoeff();
                    fresh.resize(1, 1);
                    fresh(0, 0) = m + std::log((row.array() - m).exp().sum()) - row(0, n.label);
                    break;
                }
            }
            worst = std::max(worst, (fresh - n.value).cwiseAbs().maxCoeff());
        }
        return worst;
    }

    // Hash of every LeakyReLU pre-activation sign. Central differences are
    // only trusted when both perturbed evaluations share this signature.
    uint64_t kink_signature() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto feed = [&h](bool bit) {
            h ^= bit ? 0x100000001b3ull : 0x9e3779b97f4a7c15ull;
            h *= 0x100000001b3ull;
        };
        for (const TapeNode& n : nodes_) {
            if (n.op != OpKind::leaky_relu) continue;
            const Eigen::MatrixXd& x = val(n.in[0]);
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                for (Eigen::Index i = 0; i < x.rows(); ++i) feed(x(i, j) > 0.0);
        }
        return h;
    }

private:
    int last() const { return static_cast<int>(nodes_.size()) - 1; }

    int push(TapeNode n) {
        nodes_.push_back(std::move(n));
        return last();
    }

    static Eigen::MatrixXd reshape_rowmajor(const Eigen::MatrixXd& m, int rows, int cols) {
        Eigen::MatrixXd out(rows, cols);
        Eigen::Index idx = 0;
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                out(idx / cols, idx % cols) = m(i, j);
                ++idx;
            }
        return out;
    }

    AttentionInputs attention_inputs(const TapeNode& n) const {
        AttentionInputs ai;
        ai.h = &val(n.in[0]);
        ai.q = &val(n.in[1]);
        ai.k = &val(n.in[2]);
        ai.v = &val(n.in[3]);
        ai.w1 = &val(n.in[4]);
        ai.w2 = &val(n.in[5]);
        ai.b1 = nullptr;
        ai.b2 = nullptr;
        ai.use_bias = false;
        ai.slope = n.a;
        ai.scale_logits = n.scale_logits;
        ai.rpe = n.rpe;
        ai.weights = &n.weights;
        return ai;
    }

    std::vector<TapeNode> nodes_;
    std::vector<int> params_;
};

// --- model programs over the tape ---

// Registers the model's weight matrices as tape parameters in the canonical
// matrices() order and returns their node ids.
inline std::vector<int> register_params(Tape& tape, const TransformerParams& params) {
    std::vector<int> ids;
    for (const Eigen::MatrixXd* m : params.matrices()) ids.push_back(tape.param(*m));
    return ids;
}

// Records a full model evaluation; returns the node holding the 1 x d_out
// output row. `fused` selects the blockwise attention op (production) or its
// composition from primitive ops (reference path for gradient checks).
inline int tape_forward(Tape& tape, const std::vector<int>& ids, const TransformerParams& params,
                        const Tokenset& tokenset, const RpeMatrix& rpe, bool fused = true) {
    for (const auto& l : params.layers)
        if (l.phi.use_bias) throw std::invalid_argument("tape_forward: biased phi is not trainable");
    if (params.head.use_bias) throw std::invalid_argument("tape_forward: biased head is not trainable");

    const int n = tokenset.n();
    const double slope = params.activation_slope;
    int h = tape.constant(tokenset.features);
    for (size_t l = 0; l < params.layers.size(); ++l) {
        const size_t base = 5 * l;
        if (fused) {
            h = tape.rpe_attention(h, ids[base], ids[base + 1], ids[base + 2], ids[base + 3], ids[base + 4],
                                   &rpe, tokenset.weights, slope, params.scale_logits);
        } else {
            int qh = tape.matmul(h, ids[base]);
            int kh = tape.matmul(h, ids[base + 1]);
            int logits = tape.matmul_nt(qh, kh);
            if (params.scale_logits) logits = tape.scale(logits, 1.0 / std::sqrt(static_cast<double>(params.layers[l].q.cols())));
            int pin = tape.constant(rpe.values);
            int hid = tape.leaky_relu(tape.matmul(pin, ids[base + 3]), slope);
            int pout = tape.matmul(hid, ids[base + 4]);
            int pmat = tape.reshape(pout, n, n);
            logits = tape.add(logits, pmat);
            int vh = tape.matmul(h, ids[base + 2]);
            h = tape.row_softmax_mix(logits, vh, tokenset.weights);
        }
    }
    int pooled = tape.weighted_mean_pool(h, tokenset.weights);
    const size_t hb = 5 * params.layers.size();
    int hh = tape.leaky_relu(tape.matmul(pooled, ids[hb]), slope);
    return tape.matmul(hh, ids[hb + 1]);
}

// A scalar program over the model parameters: receives the tape and the
// parameter node ids (matrices() order), returns the objective node.
using ObjectiveBuilder = std::function<int(Tape&, const std::vector<int>&)>;

// Exact reverse-mode gradients of the recorded scalar, shaped like the
// parameter matrices.
inline std::vector<Eigen::MatrixXd> grad(const TransformerParams& params, const ObjectiveBuilder& objective) {
    Tape tape;
    std::vector<int> ids = register_params(tape, params);
    const int out = objective(tape, ids);
    return tape.grad(out);
}

struct FdReport {
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped = 0;
};

// Central-difference check of grad() on a random coordinate subsample.
// Coordinates whose perturbation flips any LeakyReLU sign are skipped;
// differences are meaningless across a kink.
inline FdReport fd_check(const TransformerParams& params, const ObjectiveBuilder& objective, double eps,
                         RngStream& rng, double sample_fraction = 0.05) {
    if (!(eps > 0.0)) throw std::invalid_argument("fd_check: eps must be positive");

    std::vector<Eigen::MatrixXd> analytic = grad(params, objective);

    auto evaluate = [&](const TransformerParams& p, uint64_t& sig) {
        Tape tape;
        std::vector<int> ids = register_params(tape, p);
        const int out = objective(tape, ids);
        sig = tape.kink_signature();
        const double v = tape.scalar(out);
        if (!std::isfinite(v)) throw std::runtime_error("fd_check: non-finite objective at perturbed point");
        return v;
    };

    FdReport report;
    TransformerParams work = params;
    std::vector<Eigen::MatrixXd*> mats = work.matrices();
    for (size_t m = 0; m < mats.size(); ++m) {
        Eigen::MatrixXd& w = *mats[m];
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                if (rng.uniform01() > sample_fraction) continue;
                const double orig = w(i, j);
                uint64_t sig_plus = 0, sig_minus = 0;
                w(i, j) = orig + eps;
                const double f_plus = evaluate(work, sig_plus);
                w(i, j) = orig - eps;
                const double f_minus = evaluate(work, sig_minus);
                w(i, j) = orig;
                if (sig_plus != sig_minus) {
                    ++report.skipped;
                    continue;
                }
                const double fd = (f_plus - f_minus) / (2.0 * eps);
                const double ad = analytic[m](i, j);
                const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1.0});
                report.max_rel_error = std::max(report.max_rel_error, rel);
                ++report.checked;
            }
        }
    }
    return report;
}

}  // namespace sizegen
