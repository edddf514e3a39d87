#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "sizegen/experiments.hpp"
#include "sizegen/model.hpp"

using namespace sizegen;

namespace {

Tokenset random_graph_tokenset(int n, uint64_t seed) {
    RngStream rng(seed);
    return sample_tokenset(DomainSpec::Graphon(GraphonKernel::Constant(0.6)), n, rng);
}

RpeMatrix permute_rpe(const RpeMatrix& r, const std::vector<int>& perm) {
    RpeMatrix out = r;
    for (int i = 0; i < r.n; ++i)
        for (int j = 0; j < r.n; ++j)
            for (int c = 0; c < r.dp; ++c) out.at(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)], c) = r.at(i, j, c);
    out.degenerate.clear();
    for (int v : r.degenerate) out.degenerate.push_back(perm[static_cast<size_t>(v)]);
    std::sort(out.degenerate.begin(), out.degenerate.end());
    return out;
}

}  // namespace

TEST_CASE("single token attends only to itself", "[model]") {
    RngStream rng(3);
    const ModelDims dims{2, 4, 2, 1, 3, 4, 2, 1};
    const TransformerParams params = random_init(dims, rng);

    Tokenset t;
    t.latents.resize(1, 1);
    t.latents << 0.4;
    t.features.resize(1, 2);
    t.features << 0.4, 0.6;
    t.weights = Eigen::VectorXd::Ones(1);
    RpeMatrix rpe;
    rpe.kind = RpeMatrix::Kind::random_walk;
    rpe.n = 1;
    rpe.dp = 1;
    rpe.values = Eigen::MatrixXd::Constant(1, 1, 0.7);

    const ForwardResult res = forward(params, t, rpe);
    const Eigen::MatrixXd pooled = t.features * params.layers[0].v;
    const Eigen::VectorXd expected = params.head.apply(pooled, params.activation_slope).row(0).transpose();
    REQUIRE((res.output - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("duplicating every token with halved weights leaves the output unchanged", "[model]") {
    RngStream rng(5);
    const ModelDims dims{2, 5, 2, 1, 3, 5, 2, 1};
    const TransformerParams params = random_init(dims, rng);

    const Tokenset t = random_graph_tokenset(12, 77);
    const RpeMatrix rpe = random_walk_rpe(*t.graph, 3);
    const Eigen::VectorXd base = forward(params, t, rpe).output;

    Tokenset doubled;
    const int n = t.n();
    doubled.latents.resize(2 * n, t.latents.cols());
    doubled.features.resize(2 * n, t.features.cols());
    doubled.weights.resize(2 * n);
    RpeMatrix rpe2;
    rpe2.kind = rpe.kind;
    rpe2.k = rpe.k;
    rpe2.n = 2 * n;
    rpe2.dp = rpe.dp;
    rpe2.values.resize(static_cast<Eigen::Index>(2 * n) * (2 * n), rpe.dp);
    for (int i = 0; i < 2 * n; ++i) {
        doubled.latents.row(i) = t.latents.row(i % n);
        doubled.features.row(i) = t.features.row(i % n);
        doubled.weights(i) = t.weights(i % n) / 2.0;
        for (int j = 0; j < 2 * n; ++j)
            for (int c = 0; c < rpe.dp; ++c) rpe2.at(i, j, c) = rpe.at(i % n, j % n, c);
    }
    const Eigen::VectorXd out = forward(params, doubled, rpe2).output;
    REQUIRE((out - base).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zeroed logits aggregate to the weighted value mean", "[model]") {
    RngStream rng(6);
    ModelDims dims{2, 3, 2, 1, 3, 3, 2, 1};
    TransformerParams params = random_init(dims, rng);
    params.layers[0].q.setZero();
    params.layers[0].k.setZero();
    params.layers[0].phi.w2.setZero();  // phi output identically zero

    const Tokenset t = random_graph_tokenset(9, 91);
    const RpeMatrix rpe = random_walk_rpe(*t.graph, 2);
    const ForwardResult res = forward(params, t, rpe);

    const Eigen::MatrixXd values = t.features * params.layers[0].v;
    const Eigen::RowVectorXd mean = t.weights.transpose() * values;
    for (int i = 0; i < t.n(); ++i) REQUIRE((res.hiddens[1].row(i) - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-point construction reproduces the closed form", "[model]") {
    const double l = 10.0;
    const TransformerParams params = adversarial_two_point_params(l);
    const double pb = std::exp(-l);

    const Tokenset continuous = two_point_tokenset(1.0 - pb, pb);
    const RpeMatrix rpe = displacement_rpe(continuous.latents);
    const ForwardResult res = forward(params, continuous, rpe);

    // h^(1)(a) = (-1 + e^-L + e^L) / (1 - e^-L + e^L)
    const double expected_ha = (-1.0 + std::exp(-l) + std::exp(l)) / (1.0 - std::exp(-l) + std::exp(l));
    REQUIRE(res.hiddens[1](0, 0) == Catch::Approx(expected_ha).margin(1e-12));

    // output within 5 e^-L of +1
    REQUIRE(std::abs(res.output(0) - 1.0) <= 5.0 * std::exp(-l));

    // the all-a tokenset collapses to exactly -1
    const Tokenset all_a = two_point_tokenset(1.0, 0.0);
    REQUIRE(forward(params, all_a, rpe).output(0) == -1.0);

    // output gap of at least 1 between the two
    REQUIRE(std::abs(res.output(0) - forward(params, all_a, rpe).output(0)) >= 1.0);
}

TEST_CASE("spectral norm matches analytic values and the SVD oracle", "[model]") {
    REQUIRE(spectral_norm(Eigen::MatrixXd::Identity(3, 3)) == Catch::Approx(1.0).margin(1e-9));

    Eigen::MatrixXd d(2, 2);
    d << 2, 0, 0, 0.5;
    REQUIRE(spectral_norm(d) == Catch::Approx(2.0).margin(1e-9));

    Eigen::VectorXd u(3), v(2);
    u << 3, 0, 0;
    v << 0, 2;
    Eigen::MatrixXd rank1 = u * v.transpose();
    REQUIRE(spectral_norm(rank1) == Catch::Approx(6.0).margin(1e-6));

    REQUIRE(spectral_norm(Eigen::MatrixXd::Zero(4, 2)) == 0.0);

    RngStream rng(8);
    for (int t = 0; t < 25; ++t) {
        const int r = static_cast<int>(rng.uniform_int(1, 6));
        const int c = static_cast<int>(rng.uniform_int(1, 6));
        Eigen::MatrixXd m(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
        const double oracle = m.jacobiSvd().singularValues()(0);
        REQUIRE(spectral_norm(m) == Catch::Approx(oracle).margin(1e-8));
    }
}

TEST_CASE("spectral projection scales into the unit ball and is idempotent", "[model]") {
    RngStream rng(9);
    ModelDims dims{2, 4, 2, 1, 3, 4, 2, 1};
    TransformerParams params = random_init(dims, rng);
    params.layers[0].v.setZero();
    params.layers[0].v.diagonal().head(2) << 2.0, 0.5;

    project_spectral_ball(params);
    REQUIRE(params.layers[0].v(0, 0) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(params.layers[0].v(1, 1) == Catch::Approx(0.25).margin(1e-9));
    REQUIRE(max_spectral_norm(params) <= 1.0 + 1e-6);

    TransformerParams again = params;
    project_spectral_ball(again);
    const auto ma = again.matrices();
    const auto mp = params.matrices();
    for (size_t m = 0; m < mp.size(); ++m)
        REQUIRE((*ma[m] - *mp[m]).cwiseAbs().maxCoeff() < 1e-6);

    TransformerParams identities = params;
    for (Eigen::MatrixXd* m : identities.matrices())
        *m = Eigen::MatrixXd::Identity(m->rows(), m->cols());
    TransformerParams projected = identities;
    project_spectral_ball(projected);
    const auto mi = identities.matrices();
    const auto mj = projected.matrices();
    for (size_t m = 0; m < mj.size(); ++m)
        REQUIRE((*mj[m] - *mi[m]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one-layer aggregate limits", "[model]") {
    Eigen::MatrixXd values(3, 2);
    values << 1, 0, 0, 1, 1, 1;
    Eigen::VectorXd w(3);
    w << 0.2, 0.3, 0.5;

    // uniform logits: weighted mean per row
    const Eigen::MatrixXd uniform = one_layer_aggregate(Eigen::MatrixXd::Zero(3, 3), values, w);
    const Eigen::RowVectorXd mean = w.transpose() * values;
    for (int i = 0; i < 3; ++i) REQUIRE((uniform.row(i) - mean).cwiseAbs().maxCoeff() < 1e-12);

    // one saturated logit dominates
    Eigen::MatrixXd sat = Eigen::MatrixXd::Zero(2, 3);
    sat(0, 1) = 1e6;
    const Eigen::MatrixXd saturated = one_layer_aggregate(sat, values, w);
    REQUIRE((saturated.row(0) - values.row(1)).cwiseAbs().maxCoeff() < 1e-9);

    // all weight on the first token
    Eigen::VectorXd spike(3);
    spike << 1, 0, 0;
    RngStream rng(10);
    Eigen::MatrixXd logits(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) logits(i, j) = rng.normal();
    const Eigen::MatrixXd spiked = one_layer_aggregate(logits, values, spike);
    for (int i = 0; i < 3; ++i) REQUIRE((spiked.row(i) - values.row(0)).cwiseAbs().maxCoeff() < 1e-12);

    // a fully masked row cannot be normalized
    Eigen::MatrixXd neg_inf = Eigen::MatrixXd::Constant(2, 3, -std::numeric_limits<double>::infinity());
    REQUIRE_THROWS_AS(one_layer_aggregate(neg_inf, values, w), std::runtime_error);
}

TEST_CASE("permutation equivariance", "[model]") {
    RngStream rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 5 + static_cast<int>(rng.uniform_int(0, 10));
        const ModelDims dims{2, 4, 2, 1, 3, 4, 2, 1};
        const TransformerParams params = random_init(dims, rng);
        const Tokenset t = random_graph_tokenset(n, 1000 + static_cast<uint64_t>(trial));
        const RpeMatrix rpe = random_walk_rpe(*t.graph, 3);

        std::vector<int> perm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);

        Tokenset pt = t;
        for (int i = 0; i < n; ++i) {
            pt.latents.row(perm[static_cast<size_t>(i)]) = t.latents.row(i);
            pt.features.row(perm[static_cast<size_t>(i)]) = t.features.row(i);
            pt.weights(perm[static_cast<size_t>(i)]) = t.weights(i);
        }
        const RpeMatrix prpe = permute_rpe(rpe, perm);

        const ForwardResult a = forward(params, t, rpe);
        const ForwardResult b = forward(params, pt, prpe);
        REQUIRE((a.output - b.output).cwiseAbs().maxCoeff() < 1e-9);
        for (int i = 0; i < n; ++i)
            REQUIRE((a.hiddens[1].row(i) - b.hiddens[1].row(perm[static_cast<size_t>(i)])).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("attention rows sum to one", "[model]") {
    RngStream rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(0, 12));
        const ModelDims dims{2, 4, 2, 1, 3, 4, 2, 2};
        const TransformerParams params = random_init(dims, rng);
        const Tokenset t = random_graph_tokenset(n, 2000 + static_cast<uint64_t>(trial));
        const RpeMatrix rpe = random_walk_rpe(*t.graph, 3);

        Eigen::MatrixXd h = t.features;
        for (size_t l = 0; l < params.layers.size(); ++l) {
            const AttentionInputs in = layer_attention_inputs(params, l, h, rpe, t.weights);
            const Eigen::MatrixXd att = attention_rows(in);
            for (int i = 0; i < n; ++i) REQUIRE(att.row(i).sum() == Catch::Approx(1.0).margin(1e-9));
            h = attention_forward(in).out;
        }
    }
}

TEST_CASE("measure-split invariance", "[model]") {
    RngStream rng(13);
    const ModelDims dims{2, 5, 2, 1, 3, 5, 2, 1};
    const TransformerParams params = random_init(dims, rng);
    const Tokenset t = random_graph_tokenset(10, 3000);
    const RpeMatrix rpe = random_walk_rpe(*t.graph, 3);
    const Eigen::VectorXd base = forward(params, t, rpe).output;

    // split token 0 into two half-weight copies, the second appended at the end
    const int n = t.n();
    Tokenset split;
    split.latents.resize(n + 1, t.latents.cols());
    split.features.resize(n + 1, t.features.cols());
    split.weights.resize(n + 1);
    split.latents.topRows(n) = t.latents;
    split.features.topRows(n) = t.features;
    split.weights.head(n) = t.weights;
    split.latents.row(n) = t.latents.row(0);
    split.features.row(n) = t.features.row(0);
    split.weights(0) = t.weights(0) / 2.0;
    split.weights(n) = t.weights(0) / 2.0;

    RpeMatrix srpe;
    srpe.kind = rpe.kind;
    srpe.k = rpe.k;
    srpe.n = n + 1;
    srpe.dp = rpe.dp;
    srpe.values.resize(static_cast<Eigen::Index>(n + 1) * (n + 1), rpe.dp);
    auto src = [&](int i) { return i == n ? 0 : i; };
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j)
            for (int c = 0; c < rpe.dp; ++c) srpe.at(i, j, c) = rpe.at(src(i), src(j), c);

    const Eigen::VectorXd out = forward(params, split, srpe).output;
    REQUIRE((out - base).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("forward validates shapes", "[model]") {
    RngStream rng(14);
    const ModelDims dims{2, 4, 2, 1, 3, 4, 2, 1};
    const TransformerParams params = random_init(dims, rng);
    const Tokenset t = random_graph_tokenset(6, 4000);
    const RpeMatrix rpe = random_walk_rpe(*t.graph, 2);

    Tokenset bad_features = t;
    bad_features.features.conservativeResize(6, 3);
    REQUIRE_THROWS_AS(forward(params, bad_features, rpe), std::invalid_argument);

    const Tokenset small = random_graph_tokenset(5, 4001);
    REQUIRE_THROWS_AS(forward(params, small, rpe), std::invalid_argument);
}

TEST_CASE("parameter dimension chain is validated", "[model]") {
    RngStream rng(15);
    TransformerParams params = random_init(ModelDims{2, 4, 2, 1, 3, 4, 2, 2}, rng);
    params.validate();
    params.layers[1].q.conservativeResize(3, 2);
    REQUIRE_THROWS_AS(params.validate(), std::invalid_argument);
}

TEST_CASE("checkpoint and manifest round trip", "[model]") {
    RngStream rng(16);
    TransformerParams params = random_init(ModelDims{2, 5, 2, 1, 3, 5, 2, 2}, rng);
    params.activation_slope = 0.02;
    params.scale_logits = false;
    params.layer_norm_flag = true;

    std::stringstream buf(std::ios::in | std::ios::out | std::ios::binary);
    save_checkpoint(buf, params);
    const TransformerParams back = load_checkpoint(buf);
    REQUIRE(back.activation_slope == 0.02);
    REQUIRE_FALSE(back.scale_logits);
    REQUIRE(back.layer_norm_flag);
    const auto orig = params.matrices();
    const auto loaded = back.matrices();
    for (size_t i = 0; i < orig.size(); ++i) REQUIRE((*orig[i] - *loaded[i]).cwiseAbs().maxCoeff() == 0.0);

    std::stringstream manifest;
    write_manifest(manifest, params);
    const std::string text = manifest.str();
    REQUIRE(text.find("layers = 2") != std::string::npos);
    REQUIRE(text.find("layer_norm = 1") != std::string::npos);
    REQUIRE(text.find("hidden_dim = 5") != std::string::npos);

    std::stringstream bad("junk", std::ios::in | std::ios::binary);
    REQUIRE_THROWS_AS(load_checkpoint(bad), std::runtime_error);
}
