#pragma once

#include <cstdio>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <Eigen/Dense>

#include "sizegen/rpe.hpp"

namespace sizegen {

inline double leaky_relu_scalar(double x, double slope) { return x > 0.0 ? x : slope * x; }

// One measure-weighted attention layer with an RPE bias on the logits:
//   logit_ij = scale * <h_i Q, h_j K> + phi(p_ij)
//   att_ij   = w_j exp(logit_ij) / sum_l w_l exp(logit_il)
//   out_i    = sum_j att_ij (h_j V)
// phi is a two-layer MLP applied to each pair's RPE vector. Computation
// streams over query-row blocks so no n x n buffer outlives a call; the
// backward pass replays each block from the stored row max / denominator,
// which reproduces the forward attention exactly.
//
// For scalar RPEs without bias the pair MLP collapses to an exact two-piece
// linear map phi(p) = c+ max(p,0) + c- min(p,0) with
//   c+ = sum_a W2_a LeakyReLU(W1_a),  c- = sum_a W2_a lrelu_neg(W1_a),
// which avoids materializing per-pair hidden activations. Gradients flow to
// W1/W2 through c+/c- with the same kink convention as the generic path.
using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Desk-scale tokensets keep the normalized attention matrix so backward can
// reuse it; above the cap backward replays the logits blockwise instead.
constexpr Eigen::Index kAttentionCacheEntries = 32u * 1024u * 1024u;

struct AttentionStats {
    Eigen::MatrixXd out;        // n x dv
    Eigen::VectorXd row_max;    // n
    Eigen::VectorXd row_denom;  // n
    RowMajorMat att;            // n x n when cached, empty otherwise
};

struct AttentionGrads {
    Eigen::MatrixXd dh, dq, dk, dv, dw1, dw2;
    Eigen::VectorXd db1, db2;
};

struct AttentionInputs {
    const Eigen::MatrixXd* h;   // n x d
    const Eigen::MatrixXd* q;   // d x dk
    const Eigen::MatrixXd* k;   // d x dk
    const Eigen::MatrixXd* v;   // d x dv
    const Eigen::MatrixXd* w1;  // dp x hphi
    const Eigen::MatrixXd* w2;  // hphi x 1
    const Eigen::VectorXd* b1;  // hphi, optional
    const Eigen::VectorXd* b2;  // 1, optional
    bool use_bias = false;
    double slope = 0.01;
    bool scale_logits = true;
    const RpeMatrix* rpe;
    const Eigen::VectorXd* weights;  // n measure weights
};

namespace detail {

// Large block buffers churn every epoch; keeping them inside the heap instead
// of per-allocation mmap regions avoids page-fault storms on replay.
inline bool tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
    return true;
}
inline const bool allocator_tuned = tune_allocator();

inline int attention_block_rows(int n) {
    const int target = static_cast<int>(512 * 1024 / std::max(1, n));
    return std::max(1, std::min(n, target));
}

struct PhiCollapse {
    bool active = false;
    double cpos = 0.0, cneg = 0.0;
};

inline PhiCollapse phi_collapse(const AttentionInputs& in) {
    PhiCollapse c;
    if (in.rpe->dp != 1 || in.use_bias) return c;
    c.active = true;
    const double s = in.slope;
    for (Eigen::Index a = 0; a < in.w1->cols(); ++a) {
        const double w1 = (*in.w1)(0, a);
        const double w2 = (*in.w2)(a, 0);
        c.cpos += w2 * (w1 > 0.0 ? w1 : s * w1);
        c.cneg += w2 * (w1 > 0.0 ? s * w1 : w1);
    }
    return c;
}

// Scratch buffers reused across the query blocks of one call. Row-major so
// per-query-row passes stream contiguously.
struct AttentionWork {
    RowMajorMat logits, att, m1, dlogit;
    Eigen::MatrixXd pre, act, dhid;
};

// phi hidden pre-activations and activations for one query block; depends
// only on the RPE values and the phi weights.
inline void phi_block(const AttentionInputs& in, int i0, int rows, AttentionWork& work) {
    const int n = static_cast<int>(in.h->rows());
    const auto rpe_block = in.rpe->values.middleRows(static_cast<Eigen::Index>(i0) * n, static_cast<Eigen::Index>(rows) * n);
    work.pre.resize(static_cast<Eigen::Index>(rows) * n, in.w1->cols());
    work.pre.noalias() = rpe_block * (*in.w1);
    if (in.use_bias) work.pre.rowwise() += in.b1->transpose();
    work.act = work.pre.unaryExpr([s = in.slope](double x) { return leaky_relu_scalar(x, s); });
}

// Fills `logits` (rows x n) for queries [i0, i0+rows). When `need_pre` the
// generic path keeps the phi pre-activations in work.pre for the backward.
inline void attention_block_logits(const AttentionInputs& in, const PhiCollapse& collapse,
                                   const Eigen::MatrixXd& qh, const Eigen::MatrixXd& kh, int i0, int rows,
                                   AttentionWork& work, bool need_pre) {
    const int n = static_cast<int>(in.h->rows());
    const double scale = in.scale_logits ? 1.0 / std::sqrt(static_cast<double>(in.q->cols())) : 1.0;

    work.logits.resize(rows, n);
    work.logits.noalias() = qh.middleRows(i0, rows) * kh.transpose();
    if (scale != 1.0) work.logits *= scale;

    if (collapse.active) {
        const double cpos = collapse.cpos, cneg = collapse.cneg;
        const auto seg = in.rpe->values.col(0);
        for (int r = 0; r < rows; ++r) {
            const auto p = seg.segment(static_cast<Eigen::Index>(i0 + r) * n, n).transpose().array();
            work.logits.row(r).array() += cpos * p.max(0.0) + cneg * p.min(0.0);
        }
        return;
    }

    phi_block(in, i0, rows, work);
    Eigen::VectorXd phi = work.act * (*in.w2);
    if (in.use_bias) phi.array() += (*in.b2)(0);
    (void)need_pre;

    for (int r = 0; r < rows; ++r)
        work.logits.row(r) += phi.segment(static_cast<Eigen::Index>(r) * n, n).transpose();
}

}  // namespace detail

inline AttentionStats attention_forward(const AttentionInputs& in) {
    const int n = static_cast<int>(in.h->rows());
    if (in.rpe->n != n) throw std::invalid_argument("attention_forward: RPE size does not match token count");
    if (in.weights->size() != n) throw std::invalid_argument("attention_forward: weight count mismatch");

    const Eigen::MatrixXd qh = (*in.h) * (*in.q);
    const Eigen::MatrixXd kh = (*in.h) * (*in.k);
    const Eigen::MatrixXd vh = (*in.h) * (*in.v);
    const int dv = static_cast<int>(vh.cols());
    const detail::PhiCollapse collapse = detail::phi_collapse(in);

    AttentionStats st;
    st.out.resize(n, dv);
    st.row_max.resize(n);
    st.row_denom.resize(n);
    const bool cache = static_cast<Eigen::Index>(n) * n <= kAttentionCacheEntries;
    if (cache) st.att.resize(n, n);

    const int bmax = detail::attention_block_rows(n);
    detail::AttentionWork work;
    for (int i0 = 0; i0 < n; i0 += bmax) {
        const int rows = std::min(bmax, n - i0);
        detail::attention_block_logits(in, collapse, qh, kh, i0, rows, work, false);
        for (int r = 0; r < rows; ++r) {
            const double m = work.logits.row(r).maxCoeff();
            if (!std::isfinite(m)) throw std::runtime_error("attention_forward: non-finite logit");
            st.row_max(i0 + r) = m;
        }
        work.logits = (work.logits.colwise() - st.row_max.segment(i0, rows)).array().exp().matrix();
        work.logits.array().rowwise() *= in.weights->transpose().array();
        for (int r = 0; r < rows; ++r) {
            const double denom = work.logits.row(r).sum();
            if (!(denom > 0.0)) throw std::runtime_error("attention_forward: empty attention row");
            st.row_denom(i0 + r) = denom;
            work.logits.row(r) /= denom;
        }
        st.out.middleRows(i0, rows).noalias() = work.logits * vh;
        if (cache) st.att.middleRows(i0, rows) = work.logits;
    }
    return st;
}

inline AttentionGrads attention_backward(const AttentionInputs& in, const AttentionStats& st,
                                         const Eigen::MatrixXd& grad_out) {
    const int n = static_cast<int>(in.h->rows());
    const Eigen::MatrixXd qh = (*in.h) * (*in.q);
    const Eigen::MatrixXd kh = (*in.h) * (*in.k);
    const Eigen::MatrixXd vh = (*in.h) * (*in.v);
    const double scale = in.scale_logits ? 1.0 / std::sqrt(static_cast<double>(in.q->cols())) : 1.0;
    const int hphi = static_cast<int>(in.w1->cols());
    const detail::PhiCollapse collapse = detail::phi_collapse(in);

    AttentionGrads g;
    g.dw1 = Eigen::MatrixXd::Zero(in.w1->rows(), in.w1->cols());
    g.dw2 = Eigen::MatrixXd::Zero(in.w2->rows(), in.w2->cols());
    g.db1 = Eigen::VectorXd::Zero(hphi);
    g.db2 = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd dqh = Eigen::MatrixXd::Zero(qh.rows(), qh.cols());
    Eigen::MatrixXd dkh = Eigen::MatrixXd::Zero(kh.rows(), kh.cols());
    Eigen::MatrixXd atg = Eigen::MatrixXd::Zero(n, vh.cols());  // A^T grad_out
    double dcpos = 0.0, dcneg = 0.0;

    const bool cached = st.att.rows() == n && st.att.cols() == n;
    const int bmax = detail::attention_block_rows(n);
    detail::AttentionWork work;
    for (int i0 = 0; i0 < n; i0 += bmax) {
        const int rows = std::min(bmax, n - i0);
        if (cached) {
            if (!collapse.active) detail::phi_block(in, i0, rows, work);
        } else {
            detail::attention_block_logits(in, collapse, qh, kh, i0, rows, work, !collapse.active);
            work.att = (work.logits.colwise() - st.row_max.segment(i0, rows)).array().exp().matrix();
            work.att.array().rowwise() *= in.weights->transpose().array();
            work.att.array().colwise() /= st.row_denom.segment(i0, rows).array();
        }
        const Eigen::Ref<const RowMajorMat> att =
            cached ? Eigen::Ref<const RowMajorMat>(st.att.middleRows(i0, rows))
                   : Eigen::Ref<const RowMajorMat>(work.att);

        work.m1.resize(rows, n);
        work.m1.noalias() = grad_out.middleRows(i0, rows) * vh.transpose();
        const Eigen::VectorXd rowdot =
            (grad_out.middleRows(i0, rows).array() * st.out.middleRows(i0, rows).array()).rowwise().sum();
        work.dlogit = att.array() * (work.m1.colwise() - rowdot).array();

        if (collapse.active) {
            const auto seg = in.rpe->values.col(0);
            for (int r = 0; r < rows; ++r) {
                const auto p = seg.segment(static_cast<Eigen::Index>(i0 + r) * n, n);
                const auto d = work.dlogit.row(r).transpose();
                dcpos += (d.array() * p.array().max(0.0)).sum();
                dcneg += (d.array() * p.array().min(0.0)).sum();
            }
        } else {
            Eigen::VectorXd dphi(static_cast<Eigen::Index>(rows) * n);
            for (int r = 0; r < rows; ++r)
                dphi.segment(static_cast<Eigen::Index>(r) * n, n) = work.dlogit.row(r).transpose();
            g.dw2.noalias() += work.act.transpose() * dphi;
            if (in.use_bias) g.db2(0) += dphi.sum();
            work.dhid.resize(static_cast<Eigen::Index>(rows) * n, hphi);
            work.dhid.noalias() = dphi * in.w2->transpose();
            work.dhid.array() *= work.pre.unaryExpr([s = in.slope](double x) { return x > 0.0 ? 1.0 : s; }).array();
            const auto rpe_block = in.rpe->values.middleRows(static_cast<Eigen::Index>(i0) * n, static_cast<Eigen::Index>(rows) * n);
            g.dw1.noalias() += rpe_block.transpose() * work.dhid;
            if (in.use_bias) g.db1 += work.dhid.colwise().sum().transpose();
        }

        dqh.middleRows(i0, rows).noalias() += scale * (work.dlogit * kh);
        dkh.noalias() += scale * (work.dlogit.transpose() * qh.middleRows(i0, rows));
        atg.noalias() += att.transpose() * grad_out.middleRows(i0, rows);
    }

    if (collapse.active) {
        const double s = in.slope;
        for (Eigen::Index a = 0; a < hphi; ++a) {
            const double w1 = (*in.w1)(0, a);
            const double w2 = (*in.w2)(a, 0);
            const double kpos = w1 > 0.0 ? w1 : s * w1;   // LeakyReLU(w1)
            const double kneg = w1 > 0.0 ? s * w1 : w1;
            const double dpos = w1 > 0.0 ? 1.0 : s;
            const double dneg = w1 > 0.0 ? s : 1.0;
            g.dw1(0, a) = dcpos * w2 * dpos + dcneg * w2 * dneg;
            g.dw2(a, 0) = dcpos * kpos + dcneg * kneg;
        }
    }

    g.dq.noalias() = in.h->transpose() * dqh;
    g.dk.noalias() = in.h->transpose() * dkh;
    g.dv.noalias() = in.h->transpose() * atg;
    g.dh.noalias() = atg * in.v->transpose();
    g.dh.noalias() += dqh * in.q->transpose();
    g.dh.noalias() += dkh * in.k->transpose();
    return g;
}

// Full attention matrix for diagnostics; only sensible for small n.
inline Eigen::MatrixXd attention_rows(const AttentionInputs& in) {
    const int n = static_cast<int>(in.h->rows());
    const Eigen::MatrixXd qh = (*in.h) * (*in.q);
    const Eigen::MatrixXd kh = (*in.h) * (*in.k);
    detail::AttentionWork work;
    detail::attention_block_logits(in, detail::phi_collapse(in), qh, kh, 0, n, work, false);
    Eigen::MatrixXd att(n, n);
    for (int i = 0; i < n; ++i) {
        const double m = work.logits.row(i).maxCoeff();
        Eigen::VectorXd e = (work.logits.row(i).array() - m).exp().matrix().transpose();
        e.array() *= in.weights->array();
        const double denom = e.sum();
        if (!(denom > 0.0)) throw std::runtime_error("attention_rows: empty attention row");
        att.row(i) = e.transpose() / denom;
    }
    return att;
}

}  // namespace sizegen
