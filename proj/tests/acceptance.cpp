// Acceptance suite: one test case per criterion, each printing a single
// PASS/FAIL line. Criteria 1 and 2 persist their sweep artifacts so the
// spectral-discipline criterion can audit the recorded norms afterwards.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sizegen/autodiff.hpp"
#include "sizegen/concentration.hpp"
#include "sizegen/experiments.hpp"
#include "sizegen/train.hpp"

using namespace sizegen;

namespace {

constexpr uint64_t kAcceptanceSeed = 20240817;

const char* kResultsDir = "acceptance_results";

void report(int criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << detail << std::endl;
}

void persist(const std::string& name, const SweepResult& result) {
    std::filesystem::create_directories(kResultsDir);
    std::ofstream csv(std::string(kResultsDir) + "/" + name + ".csv", std::ios::binary);
    write_csv(csv, result);
    std::ofstream sigma(std::string(kResultsDir) + "/" + name + "_sigma.txt");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", result.max_sigma);
    sigma << buf << "\n";
}

double load_sigma(const std::string& name) {
    std::ifstream in(std::string(kResultsDir) + "/" + name + "_sigma.txt");
    if (!in) throw std::runtime_error("missing " + name + " sigma record; run criteria 1 and 2 first");
    double value = 0.0;
    in >> value;
    return value;
}

Tokenset graph_tokenset(int n, uint64_t seed, double c = 0.6) {
    RngStream rng(seed);
    return sample_tokenset(DomainSpec::Graphon(GraphonKernel::Constant(c)), n, rng);
}

}  // namespace

TEST_CASE("criterion 1: worst-case graph sweep slope", "[c1]") {
    ExperimentConfig config = default_worstcase_graph_config();
    config.seed = kAcceptanceSeed;
    const SweepResult result = run_worstcase_sweep(config);
    persist("worstcase_graph", result);

    const SlopeFit mean_fit = fit_slope(result, Statistic::mean);
    const SlopeFit ms_fit = fit_slope(result, Statistic::mean_plus_std);
    const bool pass = mean_fit.slope >= acceptance::kGraphSlopeLo && mean_fit.slope <= acceptance::kGraphSlopeHi;
    report(1, pass,
           "graph worst-case mean slope " + std::to_string(mean_fit.slope) + " (mean+std " +
               std::to_string(ms_fit.slope) + "), band [-0.70, -0.15]");
    REQUIRE(pass);
}

TEST_CASE("criterion 2: worst-case point-cloud sweep slope", "[c2]") {
    ExperimentConfig config = default_worstcase_cloud_config();
    config.seed = kAcceptanceSeed + 1;
    const SweepResult result = run_worstcase_sweep(config);
    persist("worstcase_cloud", result);

    const SlopeFit mean_fit = fit_slope(result, Statistic::mean);
    const SlopeFit ms_fit = fit_slope(result, Statistic::mean_plus_std);
    const bool pass = mean_fit.slope >= acceptance::kCloudSlopeLo && mean_fit.slope <= acceptance::kCloudSlopeHi;
    report(2, pass,
           "point-cloud worst-case mean slope " + std::to_string(mean_fit.slope) + " (mean+std " +
               std::to_string(ms_fit.slope) + "), band [-0.60, -0.10]");
    REQUIRE(pass);
}

TEST_CASE("criterion 3: random-walk RPE stability rate", "[c3]") {
    ExperimentConfig config = default_stability_config();
    config.seed = kAcceptanceSeed + 2;
    const SweepResult result = run_rpe_stability_sweep(config);
    persist("rpe_stability", result);

    std::map<int, std::vector<double>> by_n;
    for (const SweepRow& row : result.rows) by_n[row.n].push_back(row.value);
    bool decreasing = true;
    double prev = std::numeric_limits<double>::infinity();
    std::string medians;
    for (auto& [n, values] : by_n) {
        const double med = summarize(values, Statistic::median);
        decreasing = decreasing && med < prev;
        prev = med;
        medians += " " + std::to_string(med);
    }
    const SlopeFit fit = fit_slope(result, Statistic::median);
    const bool pass = decreasing && fit.slope <= acceptance::kStabilitySlopeMax;
    report(3, pass,
           "stability medians" + medians + " strictly decreasing=" + (decreasing ? "yes" : "no") +
               ", slope " + std::to_string(fit.slope) + " <= -0.25");
    REQUIRE(pass);
}

TEST_CASE("criterion 4: shortest-path instability", "[c4]") {
    ExperimentConfig config = default_instability_config();
    config.seed = kAcceptanceSeed + 3;
    const SweepResult result = run_shortest_path_instability(config);
    persist("sp_instability", result);

    std::map<int, std::vector<double>> by_n;
    for (const SweepRow& row : result.rows) by_n[row.n].push_back(row.value);
    bool frac_ok = true;
    for (auto& [n, values] : by_n) {
        const double mean = summarize(values, Statistic::mean);
        frac_ok = frac_ok && std::abs(mean - acceptance::kInstabilityFrac) <= acceptance::kInstabilityFracTol;
    }
    const SlopeFit fit = fit_slope(result, Statistic::mean);
    const bool slope_ok = std::abs(fit.slope) <= acceptance::kInstabilitySlopeAbs;
    report(4, frac_ok && slope_ok,
           "distance-1 mismatch fraction 0.50 +- 0.05 at every n: " + std::string(frac_ok ? "yes" : "no") +
               ", |slope| = " + std::to_string(std::abs(fit.slope)) + " <= 0.05");
    REQUIRE(frac_ok);
    REQUIRE(slope_ok);
}

TEST_CASE("criterion 5: adversarial two-point construction", "[c5]") {
    const AdversarialReport main_run = run_adversarial_two_point(10.0, 2000, kAcceptanceSeed + 4);
    const AdversarialReport fast = run_adversarial_two_point(6.0, 2000, kAcceptanceSeed + 5);

    const bool continuous_ok = main_run.continuous_error <= 5.0 * std::exp(-10.0);
    const bool all_a_ok = main_run.all_a_output == -1.0;
    const bool gap_ok = main_run.output_gap > 1.0;
    const bool freq_ok = std::abs(fast.all_a_frequency - fast.analytic_all_a) <= acceptance::kAdversarialFreqTol;
    const bool quarter_ok = main_run.gap_quarter_frequency >= 1.0 / std::exp(1.0) - 0.05;

    const bool pass = continuous_ok && all_a_ok && gap_ok && freq_ok && quarter_ok;
    report(5, pass,
           "continuous error " + std::to_string(main_run.continuous_error) + " <= 5e^-10, all-a output " +
               std::to_string(main_run.all_a_output) + ", gap " + std::to_string(main_run.output_gap) +
               "; L=6 all-a freq " + std::to_string(fast.all_a_frequency) + " vs analytic " +
               std::to_string(fast.analytic_all_a) + "; gap>=1/4 freq " +
               std::to_string(main_run.gap_quarter_frequency));
    REQUIRE(continuous_ok);
    REQUIRE(all_a_ok);
    REQUIRE(gap_ok);
    REQUIRE(freq_ok);
    REQUIRE(quarter_ok);
}

TEST_CASE("criterion 6: gradient correctness on the worst-case objective", "[c6]") {
    RngStream rng(kAcceptanceSeed + 6);
    const Tokenset ref = graph_tokenset(5, kAcceptanceSeed + 7);
    const Tokenset sample = graph_tokenset(5, kAcceptanceSeed + 8);
    const RpeMatrix ref_rpe = random_walk_rpe(*ref.graph, 3);
    const RpeMatrix sample_rpe = random_walk_rpe(*sample.graph, 3);
    const TransformerParams params = random_init(ModelDims{2, 5, 2, 1, 3, 5, 2, 1}, rng);
    const ObjectiveBuilder objective = make_worst_case_objective(params, ref, ref_rpe, sample, sample_rpe, false);

    RngStream frng(kAcceptanceSeed + 9);
    const FdReport rep = fd_check(params, objective, 1e-5, frng, 1.0);
    const bool pass = rep.checked > 0 && rep.max_rel_error < acceptance::kFdTol;
    report(6, pass,
           "finite-difference max relative error " + std::to_string(rep.max_rel_error) + " < 1e-4 over " +
               std::to_string(rep.checked) + " coordinates (" + std::to_string(rep.skipped) + " kink skips)");
    REQUIRE(pass);
}

TEST_CASE("criterion 7: spectral discipline during worst-case training", "[c7]") {
    const double graph_sigma = load_sigma("worstcase_graph");
    const double cloud_sigma = load_sigma("worstcase_cloud");
    const bool pass = graph_sigma <= acceptance::kSpectralTol && cloud_sigma <= acceptance::kSpectralTol;
    report(7, pass,
           "max post-step spectral norms: graphs " + std::to_string(graph_sigma) + ", clouds " +
               std::to_string(cloud_sigma) + " <= 1 + 1e-6");
    REQUIRE(pass);
}

TEST_CASE("criterion 8: model invariants on randomized instances", "[c8]") {
    RngStream rng(kAcceptanceSeed + 10);
    double worst_perm = 0.0, worst_rows = 0.0, worst_split = 0.0;

    for (int trial = 0; trial < 100; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_int(0, 16));
        const int layers = 1 + static_cast<int>(rng.uniform_int(0, 1));
        const ModelDims dims{2, 4, 2, 1, 3, 4, 2, layers};
        const TransformerParams params = random_init(dims, rng);
        const Tokenset t = graph_tokenset(n, kAcceptanceSeed + 100 + static_cast<uint64_t>(trial));
        const RpeMatrix rpe = random_walk_rpe(*t.graph, 3);
        const ForwardResult base = forward(params, t, rpe);

        // permutation equivariance
        std::vector<int> perm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);
        Tokenset pt = t;
        RpeMatrix prpe = rpe;
        for (int i = 0; i < n; ++i) {
            pt.features.row(perm[static_cast<size_t>(i)]) = t.features.row(i);
            pt.latents.row(perm[static_cast<size_t>(i)]) = t.latents.row(i);
            pt.weights(perm[static_cast<size_t>(i)]) = t.weights(i);
            for (int j = 0; j < n; ++j)
                prpe.at(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]) = rpe.at(i, j);
        }
        const ForwardResult permuted = forward(params, pt, prpe);
        worst_perm = std::max(worst_perm, (permuted.output - base.output).cwiseAbs().maxCoeff());

        // attention rows sum to one in every layer
        Eigen::MatrixXd h = t.features;
        for (size_t l = 0; l < params.layers.size(); ++l) {
            const AttentionInputs in = layer_attention_inputs(params, l, h, rpe, t.weights);
            const Eigen::MatrixXd att = attention_rows(in);
            for (int i = 0; i < n; ++i) worst_rows = std::max(worst_rows, std::abs(att.row(i).sum() - 1.0));
            h = attention_forward(in).out;
        }

        // measure-split invariance: halve a random token
        const int split_idx = static_cast<int>(rng.uniform_int(0, n - 1));
        Tokenset st;
        st.latents.resize(n + 1, t.latents.cols());
        st.features.resize(n + 1, t.features.cols());
        st.weights.resize(n + 1);
        st.latents.topRows(n) = t.latents;
        st.features.topRows(n) = t.features;
        st.weights.head(n) = t.weights;
        st.latents.row(n) = t.latents.row(split_idx);
        st.features.row(n) = t.features.row(split_idx);
        st.weights(split_idx) = t.weights(split_idx) / 2.0;
        st.weights(n) = t.weights(split_idx) / 2.0;
        RpeMatrix srpe;
        srpe.kind = rpe.kind;
        srpe.k = rpe.k;
        srpe.n = n + 1;
        srpe.dp = rpe.dp;
        srpe.values.resize(static_cast<Eigen::Index>(n + 1) * (n + 1), rpe.dp);
        auto src = [&](int i) { return i == n ? split_idx : i; };
        for (int i = 0; i <= n; ++i)
            for (int j = 0; j <= n; ++j) srpe.at(i, j) = rpe.at(src(i), src(j));
        const ForwardResult split = forward(params, st, srpe);
        worst_split = std::max(worst_split, (split.output - base.output).cwiseAbs().maxCoeff());
    }

    const bool pass = worst_perm < acceptance::kModelInvariantTol && worst_rows < acceptance::kModelInvariantTol &&
                      worst_split < acceptance::kModelInvariantTol;
    report(8, pass,
           "100 randomized instances: permutation " + std::to_string(worst_perm) + ", attention rows " +
               std::to_string(worst_rows) + ", measure split " + std::to_string(worst_split) + " all < 1e-9");
    REQUIRE(pass);
}

TEST_CASE("criterion 9: empirical-measure concentration", "[c9]") {
    const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));
    const double c_chi = 2.0, d_chi = 1.0, tau = 4.0;
    const int trials = 500;

    std::map<int, double> mean_devs;
    double freq_1000 = 0.0;
    for (int n : {250, 1000, 4000}) {
        const double r = std::pow(static_cast<double>(n), -1.0 / (d_chi + 2.0));
        RngStream cov_rng(derive_seed(kAcceptanceSeed + 11, static_cast<uint64_t>(n)));
        const Covering covering = build_covering(domain, r, 1000000, cov_rng);
        int failures = 0;
        double dev_sum = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
            RngStream trng(derive_seed(kAcceptanceSeed + 12, static_cast<uint64_t>(n), static_cast<uint64_t>(trial)));
            const Eigen::MatrixXd latents = sample_latents(domain, n, trng);
            const EventCheck ev = concentration_event_check(latents, covering, tau, c_chi, d_chi);
            if (!ev.holds) ++failures;
            dev_sum += ev.max_deviation;
        }
        mean_devs[n] = dev_sum / trials;
        if (n == 1000) freq_1000 = static_cast<double>(failures) / trials;
    }

    const double bound = concentration_failure_bound(c_chi, 1000.0, tau);
    const bool bound_ok = bound >= 1.0 || freq_1000 <= bound;
    const bool decreasing = mean_devs[1000] < mean_devs[250] && mean_devs[4000] < mean_devs[1000];
    const bool pass = bound_ok && decreasing;
    report(9, pass,
           "failure frequency " + std::to_string(freq_1000) + " vs bound " + std::to_string(bound) +
               (bound >= 1.0 ? " (vacuous)" : "") + "; mean max deviations " + std::to_string(mean_devs[250]) +
               " > " + std::to_string(mean_devs[1000]) + " > " + std::to_string(mean_devs[4000]));
    REQUIRE(pass);
}

TEST_CASE("criterion 10: stable vs unstable RPE generalization", "[c10]") {
    ExperimentConfig config = default_classification_config();
    config.seed = kAcceptanceSeed + 13;
    const SweepResult result = run_classification_comparison(config);
    persist("classification", result);

    std::map<int, std::vector<double>> rw, sp;
    for (const SweepRow& row : result.rows) (row.metric == "gap_rw" ? rw : sp)[row.n].push_back(row.value);
    int wins = 0;
    std::string table;
    for (auto& [n, values] : rw) {
        const double med_rw = summarize(values, Statistic::median);
        const double med_sp = summarize(sp[n], Statistic::median);
        if (med_rw <= med_sp) ++wins;
        table += " n=" + std::to_string(n) + " rw=" + std::to_string(med_rw) + " sp=" + std::to_string(med_sp);
    }
    const bool pass = wins >= 3;
    report(10, pass, "stable RPE wins " + std::to_string(wins) + " of 4 grid values (median over 5 seeds):" + table);
    REQUIRE(pass);
}

TEST_CASE("criterion 11: one-layer discretization rate", "[c11]") {
    const HiddenFn h_id = [](const Eigen::RowVectorXd& x) { return Eigen::VectorXd::Constant(1, x(0)); };
    const PairLogitFn dot = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b); };
    const ValueFn identity = [](const Eigen::VectorXd& v) { return v; };
    const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));

    SweepResult result;
    result.metric_tag = "one_layer_discretization_error";
    for (int n : {100, 200, 400, 800, 1600}) {
        for (int rep = 0; rep < 20; ++rep) {
            RngStream rng(derive_seed(kAcceptanceSeed + 14, static_cast<uint64_t>(n), static_cast<uint64_t>(rep)));
            SweepRow row;
            row.experiment = "discretization";
            row.n = n;
            row.replicate = rep;
            row.metric = "sup_error";
            row.value = one_layer_discretization_error(domain, h_id, dot, identity, n, 16000, rng);
            result.rows.push_back(row);
        }
    }
    persist("discretization", result);

    const SlopeFit fit = fit_slope(result, Statistic::mean);
    const bool pass = fit.slope <= acceptance::kDiscretizationSlopeMax;
    report(11, pass, "one-layer discretization slope " + std::to_string(fit.slope) + " <= -0.15");
    REQUIRE(pass);
}
