#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/autodiff.hpp"
#include "sizegen/model.hpp"
#include "sizegen/rng.hpp"

namespace sizegen {

// SGD / Adam over the model's weight matrices. `direction` is +1 for
// gradient ascent (worst-case error maximization) and -1 for descent.
struct OptimizerState {
    enum class Kind { sgd, adam };

    Kind kind = Kind::sgd;
    double lr = 0.1;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Eigen::MatrixXd> m, v;
    int step = 0;

    static OptimizerState Sgd(double lr) {
        OptimizerState o;
        o.kind = Kind::sgd;
        o.lr = lr;
        return o;
    }

    static OptimizerState Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        OptimizerState o;
        o.kind = Kind::adam;
        o.lr = lr;
        o.beta1 = beta1;
        o.beta2 = beta2;
        o.eps = eps;
        return o;
    }

    void apply(TransformerParams& params, const std::vector<Eigen::MatrixXd>& grads, double direction) {
        std::vector<Eigen::MatrixXd*> mats = params.matrices();
        if (grads.size() != mats.size()) throw std::invalid_argument("optimizer: gradient count mismatch");
        if (kind == Kind::sgd) {
            for (size_t i = 0; i < mats.size(); ++i) *mats[i] += direction * lr * grads[i];
            ++step;
            return;
        }
        if (m.empty()) {
            for (size_t i = 0; i < mats.size(); ++i) {
                m.emplace_back(Eigen::MatrixXd::Zero(mats[i]->rows(), mats[i]->cols()));
                v.emplace_back(Eigen::MatrixXd::Zero(mats[i]->rows(), mats[i]->cols()));
            }
        }
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, step);
        const double bc2 = 1.0 - std::pow(beta2, step);
        for (size_t i = 0; i < mats.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
            const Eigen::MatrixXd mhat = m[i] / bc1;
            const Eigen::MatrixXd vhat = v[i] / bc2;
            *mats[i] += direction * lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
        }
    }
};

inline ObjectiveBuilder make_worst_case_objective(const TransformerParams& structure, const Tokenset& ref,
                                                  const RpeMatrix& ref_rpe, const Tokenset& sample,
                                                  const RpeMatrix& sample_rpe, bool fused = true) {
    return [&structure, &ref, &ref_rpe, &sample, &sample_rpe, fused](Tape& tape, const std::vector<int>& ids) {
        const int out_ref = tape_forward(tape, ids, structure, ref, ref_rpe, fused);
        const int out_sample = tape_forward(tape, ids, structure, sample, sample_rpe, fused);
        return tape.l2_norm(tape.sub(out_ref, out_sample));
    };
}

struct WorstCaseResult {
    TransformerParams params;
    std::vector<double> trace;  // objective value at the start of each epoch
    double final_error = 0.0;   // error of the returned (projected) params
    double max_sigma = 0.0;     // largest post-projection spectral norm seen
    bool aborted = false;       // non-finite objective encountered
};

// Gradient ascent on |Theta(ref) - Theta(sample)|_2 with a spectral-ball
// projection after every step. Each epoch takes one full-batch step.
inline WorstCaseResult train_worst_case(TransformerParams params, const Tokenset& ref, const RpeMatrix& ref_rpe,
                                        const Tokenset& sample, const RpeMatrix& sample_rpe, int epochs,
                                        double lr) {
    WorstCaseResult res;
    res.max_sigma = max_spectral_norm(params);
    OptimizerState opt = OptimizerState::Sgd(lr);

    for (int epoch = 0; epoch < epochs; ++epoch) {
        Tape tape;
        std::vector<int> ids = register_params(tape, params);
        const int out_ref = tape_forward(tape, ids, params, ref, ref_rpe, true);
        const int out_sample = tape_forward(tape, ids, params, sample, sample_rpe, true);
        const int err = tape.l2_norm(tape.sub(out_ref, out_sample));
        const double value = tape.scalar(err);
        res.trace.push_back(value);
        if (!std::isfinite(value)) {
            res.aborted = true;
            res.params = std::move(params);
            res.final_error = value;
            return res;
        }
        const std::vector<Eigen::MatrixXd> grads = tape.grad(err);
        opt.apply(params, grads, +1.0);
        project_spectral_ball(params);
        res.max_sigma = std::max(res.max_sigma, max_spectral_norm(params));
    }

    const Eigen::VectorXd a = forward(params, ref, ref_rpe).output;
    const Eigen::VectorXd b = forward(params, sample, sample_rpe).output;
    res.final_error = (a - b).norm();
    res.params = std::move(params);
    return res;
}

struct ClsExample {
    const Tokenset* tokenset;
    const RpeMatrix* rpe;
    int label;
};

inline double cross_entropy(const Eigen::VectorXd& output, int label) {
    const double m = output.maxCoeff();
    const double lse = m + std::log((output.array() - m).exp().sum());
    return lse - output(label);
}

inline double mean_risk(const TransformerParams& params, const std::vector<ClsExample>& data) {
    double sum = 0.0;
    for (const ClsExample& e : data) sum += cross_entropy(forward(params, *e.tokenset, *e.rpe).output, e.label);
    return sum / static_cast<double>(data.size());
}

struct ClassifierResult {
    TransformerParams params;
    std::vector<double> trace;  // mean training loss per epoch
    double max_sigma = 0.0;
};

// Shuffled mini-batch cross-entropy training with a spectral projection after
// every optimizer step. Class probabilities are softmax over the 2-dim head.
inline ClassifierResult train_classifier(TransformerParams params, const std::vector<ClsExample>& data,
                                         int epochs, int batch_size, OptimizerState opt, RngStream& rng) {
    if (data.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    if (params.output_dim() != 2) throw std::invalid_argument("train_classifier: head output dim must be 2");
    for (const ClsExample& e : data)
        if (e.label != 0 && e.label != 1) throw std::invalid_argument("train_classifier: labels must be 0 or 1");

    ClassifierResult res;
    res.max_sigma = max_spectral_norm(params);

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(batch_size));
            Tape tape;
            std::vector<int> ids = register_params(tape, params);
            int loss = -1;
            for (size_t idx = start; idx < stop; ++idx) {
                const ClsExample& e = data[order[idx]];
                const int out = tape_forward(tape, ids, params, *e.tokenset, *e.rpe, true);
                const int ce = tape.log_softmax_ce(out, e.label);
                loss = (loss < 0) ? ce : tape.add(loss, ce);
            }
            loss = tape.scale(loss, 1.0 / static_cast<double>(stop - start));
            epoch_loss += tape.scalar(loss) * static_cast<double>(stop - start);
            seen += stop - start;
            const std::vector<Eigen::MatrixXd> grads = tape.grad(loss);
            opt.apply(params, grads, -1.0);
            project_spectral_ball(params);
            res.max_sigma = std::max(res.max_sigma, max_spectral_norm(params));
        }
        res.trace.push_back(epoch_loss / static_cast<double>(seen));
    }
    res.params = std::move(params);
    return res;
}

}  // namespace sizegen
