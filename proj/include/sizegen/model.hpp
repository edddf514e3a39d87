#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/attention_kernel.hpp"
#include "sizegen/domain.hpp"
#include "sizegen/rng.hpp"
#include "sizegen/rpe.hpp"

namespace sizegen {

// Two-layer MLP, x -> LeakyReLU(x W1 + b1) W2 + b2, rows are samples.
// The reference configurations run without biases.
struct MlpParams {
    Eigen::MatrixXd w1, w2;
    Eigen::VectorXd b1, b2;
    bool use_bias = false;

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x, double slope) const {
        Eigen::MatrixXd h = x * w1;
        if (use_bias) h.rowwise() += b1.transpose();
        h = h.unaryExpr([slope](double v) { return leaky_relu_scalar(v, slope); });
        Eigen::MatrixXd out = h * w2;
        if (use_bias) out.rowwise() += b2.transpose();
        return out;
    }
};

struct AttentionLayerParams {
    Eigen::MatrixXd q, k, v;  // d x dk, d x dk, d x d_next
    MlpParams phi;            // dp -> 1 logit bias
};

struct ModelDims {
    int input_dim = 2;
    int hidden_dim = 5;
    int key_dim = 2;
    int rpe_dim = 1;
    int phi_hidden = 3;
    int head_hidden = 5;
    int output_dim = 2;
    int layers = 1;
};

// All weights of the K-layer attention model. Matrices are kept inside the
// unit spectral-norm ball by project_spectral_ball; training reprojects after
// every step.
struct TransformerParams {
    std::vector<AttentionLayerParams> layers;
    MlpParams head;
    double activation_slope = 0.01;
    bool scale_logits = true;
    bool layer_norm_flag = false;  // recorded in manifests, no runtime effect

    std::vector<Eigen::MatrixXd*> matrices() {
        std::vector<Eigen::MatrixXd*> m;
        for (auto& l : layers) {
            m.push_back(&l.q);
            m.push_back(&l.k);
            m.push_back(&l.v);
            m.push_back(&l.phi.w1);
            m.push_back(&l.phi.w2);
        }
        m.push_back(&head.w1);
        m.push_back(&head.w2);
        return m;
    }
    std::vector<const Eigen::MatrixXd*> matrices() const {
        std::vector<const Eigen::MatrixXd*> m;
        for (const auto& l : layers) {
            m.push_back(&l.q);
            m.push_back(&l.k);
            m.push_back(&l.v);
            m.push_back(&l.phi.w1);
            m.push_back(&l.phi.w2);
        }
        m.push_back(&head.w1);
        m.push_back(&head.w2);
        return m;
    }

    int input_dim() const { return static_cast<int>(layers.front().q.rows()); }
    int output_dim() const { return static_cast<int>(head.w2.cols()); }
    int rpe_dim() const { return static_cast<int>(layers.front().phi.w1.rows()); }

    // Dimension chain: layer k's value output feeds layer k+1 and the head.
    void validate() const {
        if (layers.empty()) throw std::invalid_argument("TransformerParams: no layers");
        for (size_t l = 0; l < layers.size(); ++l) {
            const auto& lay = layers[l];
            const int d_in = static_cast<int>(lay.q.rows());
            if (lay.k.rows() != d_in || lay.v.rows() != d_in) throw std::invalid_argument("layer " + std::to_string(l) + ": Q/K/V input dims disagree");
            if (lay.q.cols() != lay.k.cols()) throw std::invalid_argument("layer " + std::to_string(l) + ": Q and K key dims disagree");
            if (lay.phi.w1.cols() != lay.phi.w2.rows() || lay.phi.w2.cols() != 1) throw std::invalid_argument("layer " + std::to_string(l) + ": phi must map rpe dim to a scalar");
            if (l + 1 < layers.size() && layers[l + 1].q.rows() != lay.v.cols()) throw std::invalid_argument("layer " + std::to_string(l) + ": output dim does not match next layer input");
        }
        if (head.w1.rows() != layers.back().v.cols()) throw std::invalid_argument("head input dim does not match last layer output");
        if (head.w1.cols() != head.w2.rows()) throw std::invalid_argument("head hidden dims disagree");
    }
};

// Largest singular value via power iteration on M^T M, started from a unit
// vector drawn from a fixed seed so repeated calls agree exactly.
inline double spectral_norm(const Eigen::MatrixXd& m, int max_iters = 200, double tol = 1e-13) {
    if (m.rows() == 0 || m.cols() == 0) return 0.0;
    if (m.isZero(0.0)) return 0.0;

    RngStream rng(0x9d2c5680u);
    Eigen::VectorXd v(m.cols());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
    const double vn = v.norm();
    if (vn == 0.0) v.setOnes();
    v.normalize();

    double sigma = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd u = m * v;
        const double s = u.norm();
        if (s == 0.0) return 0.0;
        Eigen::VectorXd w = m.transpose() * u;
        const double wn = w.norm();
        if (wn == 0.0) return s;
        v = w / wn;
        if (std::abs(s - sigma) <= tol * std::max(1.0, s)) return s;
        sigma = s;
    }
    return sigma;
}

// W <- W / max(1, sigma_max(W)) for every weight matrix. Idempotent up to
// the power-iteration tolerance.
inline TransformerParams& project_spectral_ball(TransformerParams& params) {
    for (Eigen::MatrixXd* m : params.matrices()) {
        const double s = spectral_norm(*m);
        if (s > 1.0) *m /= s;
    }
    return params;
}

inline double max_spectral_norm(const TransformerParams& params) {
    double worst = 0.0;
    for (const Eigen::MatrixXd* m : params.matrices()) worst = std::max(worst, spectral_norm(*m));
    return worst;
}

// Entries i.i.d. uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], then an
// initial spectral projection.
inline TransformerParams random_init(const ModelDims& dims, RngStream& rng) {
    auto mat = [&rng](int rows, int cols) {
        const double a = 1.0 / std::sqrt(static_cast<double>(rows));
        Eigen::MatrixXd m(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) m(i, j) = rng.uniform(-a, a);
        return m;
    };

    TransformerParams p;
    int d = dims.input_dim;
    for (int l = 0; l < dims.layers; ++l) {
        AttentionLayerParams lay;
        lay.q = mat(d, dims.key_dim);
        lay.k = mat(d, dims.key_dim);
        lay.v = mat(d, dims.hidden_dim);
        lay.phi.w1 = mat(dims.rpe_dim, dims.phi_hidden);
        lay.phi.w2 = mat(dims.phi_hidden, 1);
        lay.phi.b1 = Eigen::VectorXd::Zero(dims.phi_hidden);
        lay.phi.b2 = Eigen::VectorXd::Zero(1);
        p.layers.push_back(std::move(lay));
        d = dims.hidden_dim;
    }
    p.head.w1 = mat(d, dims.head_hidden);
    p.head.w2 = mat(dims.head_hidden, dims.output_dim);
    p.head.b1 = Eigen::VectorXd::Zero(dims.head_hidden);
    p.head.b2 = Eigen::VectorXd::Zero(dims.output_dim);
    project_spectral_ball(p);
    return p;
}

inline AttentionInputs layer_attention_inputs(const TransformerParams& params, size_t layer,
                                              const Eigen::MatrixXd& h, const RpeMatrix& rpe,
                                              const Eigen::VectorXd& weights) {
    const AttentionLayerParams& lay = params.layers[layer];
    AttentionInputs in;
    in.h = &h;
    in.q = &lay.q;
    in.k = &lay.k;
    in.v = &lay.v;
    in.w1 = &lay.phi.w1;
    in.w2 = &lay.phi.w2;
    in.b1 = &lay.phi.b1;
    in.b2 = &lay.phi.b2;
    in.use_bias = lay.phi.use_bias;
    in.slope = params.activation_slope;
    in.scale_logits = params.scale_logits;
    in.rpe = &rpe;
    in.weights = &weights;
    return in;
}

struct ForwardResult {
    Eigen::VectorXd output;               // d_out
    std::vector<Eigen::MatrixXd> hiddens; // hiddens[0] = features, ..., hiddens[K]
};

// Full model evaluation under the tokenset's measure weights. The same code
// evaluates sampled tokensets (uniform weights) and high-resolution
// relaxations or explicitly weighted tokensets identically.
inline ForwardResult forward(const TransformerParams& params, const Tokenset& tokenset, const RpeMatrix& rpe) {
    if (tokenset.features.cols() != params.input_dim()) throw std::invalid_argument("forward: feature dim does not match model input dim");
    if (rpe.n != tokenset.n()) throw std::invalid_argument("forward: RPE size does not match tokenset");
    if (rpe.dp != params.rpe_dim()) throw std::invalid_argument("forward: RPE dim does not match phi input dim");

    ForwardResult res;
    res.hiddens.reserve(params.layers.size() + 1);
    res.hiddens.push_back(tokenset.features);
    for (size_t l = 0; l < params.layers.size(); ++l) {
        AttentionInputs in = layer_attention_inputs(params, l, res.hiddens.back(), rpe, tokenset.weights);
        res.hiddens.push_back(attention_forward(in).out);
    }
    const Eigen::MatrixXd pooled = tokenset.weights.transpose() * res.hiddens.back();  // 1 x d
    res.output = params.head.apply(pooled, params.activation_slope).row(0).transpose();
    return res;
}

// Measure-weighted softmax aggregation with explicit logits:
//   row i = sum_j [w_j exp(logit_ij) / sum_l w_l exp(logit_il)] values_j.
// Rectangular shapes are allowed (queries indexed by rows of `logits`).
inline Eigen::MatrixXd one_layer_aggregate(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& values,
                                           const Eigen::VectorXd& weights) {
    if (logits.cols() != values.rows() || values.rows() != weights.size())
        throw std::invalid_argument("one_layer_aggregate: shape mismatch");
    Eigen::MatrixXd out(logits.rows(), values.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        if (!std::isfinite(m)) throw std::runtime_error("one_layer_aggregate: degenerate logit row");
        Eigen::VectorXd e = (logits.row(i).array() - m).exp().matrix().transpose();
        e.array() *= weights.array();
        const double denom = e.sum();
        if (!(denom > 0.0)) throw std::runtime_error("one_layer_aggregate: empty attention row");
        out.row(i) = (e.transpose() * values) / denom;
    }
    return out;
}

// --- checkpoint format ---
// magic "TSP1"; u32 layer count; f64 activation slope; u8 scale flag;
// u8 layer-norm flag; per layer the five matrices, then the two head
// matrices; every matrix is u32 rows, u32 cols, row-major f64.

namespace detail {

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    const uint32_t r = static_cast<uint32_t>(m.rows()), c = static_cast<uint32_t>(m.cols());
    out.write(reinterpret_cast<const char*>(&r), 4);
    out.write(reinterpret_cast<const char*>(&c), 4);
    for (uint32_t i = 0; i < r; ++i)
        for (uint32_t j = 0; j < c; ++j) {
            const double v = m(i, j);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
    uint32_t r = 0, c = 0;
    in.read(reinterpret_cast<char*>(&r), 4);
    in.read(reinterpret_cast<char*>(&c), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated matrix header");
    Eigen::MatrixXd m(r, c);
    for (uint32_t i = 0; i < r; ++i)
        for (uint32_t j = 0; j < c; ++j) {
            double v;
            in.read(reinterpret_cast<char*>(&v), 8);
            if (!in) throw std::runtime_error("checkpoint: truncated matrix data");
            m(i, j) = v;
        }
    return m;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const TransformerParams& p) {
    out.write("TSP1", 4);
    const uint32_t nl = static_cast<uint32_t>(p.layers.size());
    out.write(reinterpret_cast<const char*>(&nl), 4);
    out.write(reinterpret_cast<const char*>(&p.activation_slope), 8);
    const uint8_t scale = p.scale_logits ? 1 : 0, lnorm = p.layer_norm_flag ? 1 : 0;
    out.write(reinterpret_cast<const char*>(&scale), 1);
    out.write(reinterpret_cast<const char*>(&lnorm), 1);
    for (const auto& l : p.layers) {
        detail::write_matrix(out, l.q);
        detail::write_matrix(out, l.k);
        detail::write_matrix(out, l.v);
        detail::write_matrix(out, l.phi.w1);
        detail::write_matrix(out, l.phi.w2);
    }
    detail::write_matrix(out, p.head.w1);
    detail::write_matrix(out, p.head.w2);
}

inline TransformerParams load_checkpoint(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "TSP1") throw std::runtime_error("checkpoint: bad magic");
    uint32_t nl = 0;
    in.read(reinterpret_cast<char*>(&nl), 4);
    TransformerParams p;
    in.read(reinterpret_cast<char*>(&p.activation_slope), 8);
    uint8_t scale = 0, lnorm = 0;
    in.read(reinterpret_cast<char*>(&scale), 1);
    in.read(reinterpret_cast<char*>(&lnorm), 1);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    p.scale_logits = scale != 0;
    p.layer_norm_flag = lnorm != 0;
    for (uint32_t l = 0; l < nl; ++l) {
        AttentionLayerParams lay;
        lay.q = detail::read_matrix(in);
        lay.k = detail::read_matrix(in);
        lay.v = detail::read_matrix(in);
        lay.phi.w1 = detail::read_matrix(in);
        lay.phi.w2 = detail::read_matrix(in);
        lay.phi.b1 = Eigen::VectorXd::Zero(lay.phi.w1.cols());
        lay.phi.b2 = Eigen::VectorXd::Zero(1);
        p.layers.push_back(std::move(lay));
    }
    p.head.w1 = detail::read_matrix(in);
    p.head.w2 = detail::read_matrix(in);
    p.head.b1 = Eigen::VectorXd::Zero(p.head.w1.cols());
    p.head.b2 = Eigen::VectorXd::Zero(p.head.w2.cols());
    p.validate();
    return p;
}

inline void write_manifest(std::ostream& out, const TransformerParams& p) {
    out << "layers = " << p.layers.size() << "\n";
    out << "input_dim = " << p.input_dim() << "\n";
    out << "key_dim = " << p.layers.front().q.cols() << "\n";
    out << "hidden_dim = " << p.layers.front().v.cols() << "\n";
    out << "rpe_dim = " << p.rpe_dim() << "\n";
    out << "phi_hidden = " << p.layers.front().phi.w1.cols() << "\n";
    out << "head_hidden = " << p.head.w1.cols() << "\n";
    out << "output_dim = " << p.output_dim() << "\n";
    out << "activation_slope = " << p.activation_slope << "\n";
    out << "scale_logits = " << (p.scale_logits ? 1 : 0) << "\n";
    out << "layer_norm = " << (p.layer_norm_flag ? 1 : 0) << "\n";
}

}  // namespace sizegen
