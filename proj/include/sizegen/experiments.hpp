#pragma once

#include <atomic>
#include <mutex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sizegen/concentration.hpp"
#include "sizegen/domain.hpp"
#include "sizegen/model.hpp"
#include "sizegen/rpe.hpp"
#include "sizegen/stats.hpp"
#include "sizegen/train.hpp"

namespace sizegen {

// Acceptance thresholds used by the CLI summaries and the acceptance suite.
namespace acceptance {
constexpr double kGraphSlopeLo = -0.70, kGraphSlopeHi = -0.15;
constexpr double kCloudSlopeLo = -0.60, kCloudSlopeHi = -0.10;
constexpr double kStabilitySlopeMax = -0.25;
constexpr double kInstabilityFrac = 0.50, kInstabilityFracTol = 0.05, kInstabilitySlopeAbs = 0.05;
constexpr double kSpectralTol = 1.0 + 1e-6;
constexpr double kModelInvariantTol = 1e-9;
constexpr double kFdTol = 1e-4;
constexpr double kDiscretizationSlopeMax = -0.15;
constexpr double kAdversarialFreqTol = 0.05;
}  // namespace acceptance

struct SweepRow {
    std::string experiment;
    int n = 0;
    int replicate = 0;
    uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::string metric_tag;
    double max_sigma = 0.0;  // worst post-projection spectral norm (training sweeps)
    int skipped = 0;         // replicates aborted by degeneracy guards
};

// --- CSV: header then one row per record, deterministic order and bytes ---

inline void write_csv(std::ostream& out, const SweepResult& result) {
    out << "experiment,n,replicate,seed,metric,value\n";
    char buf[64];
    for (const SweepRow& r : result.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g", r.value);
        out << r.experiment << "," << r.n << "," << r.replicate << "," << r.seed << "," << r.metric << "," << buf << "\n";
    }
}

inline SweepResult read_csv(std::istream& in) {
    SweepResult res;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("sweep csv: empty file");
    if (line.rfind("experiment,", 0) != 0) throw std::runtime_error("sweep csv: missing header");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        SweepRow r;
        std::string field;
        std::getline(ss, r.experiment, ',');
        std::getline(ss, field, ',');
        r.n = std::stoi(field);
        std::getline(ss, field, ',');
        r.replicate = std::stoi(field);
        std::getline(ss, field, ',');
        r.seed = std::stoull(field);
        std::getline(ss, r.metric, ',');
        std::getline(ss, field, ',');
        r.value = std::stod(field);
        res.rows.push_back(std::move(r));
    }
    return res;
}

// Least-squares slope of log(statistic over replicates) against log n.
inline SlopeFit fit_slope(const SweepResult& result, Statistic stat, const std::string& metric = "") {
    std::map<int, std::vector<double>> by_n;
    for (const SweepRow& r : result.rows) {
        if (!metric.empty() && r.metric != metric) continue;
        by_n[r.n].push_back(r.value);
    }
    if (by_n.size() < 2) throw std::invalid_argument("fit_slope: need at least two distinct n values");
    std::vector<double> xs, ys;
    for (auto& [n, values] : by_n) {
        const double s = summarize(values, stat);
        if (!(s > 0.0)) throw std::runtime_error("fit_slope: nonpositive statistic at n = " + std::to_string(n));
        xs.push_back(std::log(static_cast<double>(n)));
        ys.push_back(std::log(s));
    }
    return ols_fit(xs, ys);
}

// Replicate-level parallelism; tasks index into preallocated slots so the
// output order never depends on scheduling.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// Everything a sweep needs; factories below fill the desk-scale defaults.
struct ExperimentConfig {
    std::string kind;
    DomainSpec domain;
    std::vector<int> n_grid;
    int replicates = 20;
    int reference_size = 2000;
    RpeMatrix::Kind rpe_kind = RpeMatrix::Kind::random_walk;
    int rpe_steps = 3;
    ModelDims dims;
    int epochs = 150;
    double lr = 0.1;
    std::string optimizer = "sgd";
    int batch_size = 10;
    int quadrature_nodes = 4000;
    int test_size = 2000;   // classification test tokenset size
    int train_graphs = 200; // per training set, balanced
    int test_graphs = 10;
    uint64_t seed = 1;
    std::string out_path;
    int threads = 0;  // 0 = hardware concurrency
};

inline ExperimentConfig default_worstcase_graph_config() {
    ExperimentConfig c;
    c.kind = "worstcase";
    c.domain = DomainSpec::Graphon(GraphonKernel::TwoBlockSine(1.0, 1e-3), 1.0, FeatureRule::linear_pair);
    c.n_grid = {200, 300, 400, 500, 600, 700, 800};
    c.replicates = 20;
    c.reference_size = 2000;
    c.rpe_kind = RpeMatrix::Kind::random_walk;
    c.rpe_steps = 3;
    c.dims = ModelDims{2, 5, 2, 1, 3, 5, 2, 1};
    c.epochs = 120;
    c.lr = 0.1;
    return c;
}

inline ExperimentConfig default_worstcase_cloud_config() {
    ExperimentConfig c;
    c.kind = "worstcase";
    c.domain = DomainSpec::Sphere(1.0, FeatureRule::xyz_normal);
    c.n_grid = {400, 800, 1600};
    c.replicates = 10;
    c.reference_size = 4000;
    c.rpe_kind = RpeMatrix::Kind::displacement;
    c.dims = ModelDims{6, 5, 2, 3, 5, 5, 2, 1};
    c.epochs = 120;
    c.lr = 0.01;
    return c;
}

inline ExperimentConfig default_stability_config() {
    ExperimentConfig c;
    c.kind = "rpe-stability";
    c.domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5), 1.0);
    c.n_grid = {200, 400, 800, 1600};
    c.replicates = 20;
    c.rpe_steps = 3;
    c.quadrature_nodes = 4000;
    return c;
}

inline ExperimentConfig default_instability_config() {
    ExperimentConfig c;
    c.kind = "sp-instability";
    c.domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5), 1.0);
    c.n_grid = {200, 400, 800, 1600};
    c.replicates = 20;
    return c;
}

inline ExperimentConfig default_classification_config() {
    ExperimentConfig c;
    c.kind = "classify";
    c.domain = DomainSpec::Graphon(GraphonKernel::Sbm(0.9, 1e-3, 0.5), 1.0, FeatureRule::block_indicator);
    c.n_grid = {100, 200, 300, 400};
    c.replicates = 5;  // independent seeds
    c.dims = ModelDims{2, 8, 2, 1, 16, 8, 2, 2};
    c.epochs = 10;
    c.lr = 0.01;
    c.optimizer = "adam";
    c.batch_size = 10;
    c.test_size = 2000;
    c.train_graphs = 200;
    c.test_graphs = 10;
    return c;
}

namespace detail {

inline RpeMatrix experiment_rpe(const ExperimentConfig& config, const Tokenset& t) {
    switch (config.rpe_kind) {
        case RpeMatrix::Kind::random_walk:
            if (!t.graph) throw std::invalid_argument("random-walk RPE needs a graph");
            return random_walk_rpe(*t.graph, config.rpe_steps);
        case RpeMatrix::Kind::shortest_path:
            if (!t.graph) throw std::invalid_argument("shortest-path RPE needs a graph");
            return shortest_path_rpe(*t.graph);
        case RpeMatrix::Kind::displacement:
            return displacement_rpe(t.latents);
        case RpeMatrix::Kind::kernel_power_reference:
            throw std::invalid_argument("kernel power reference is not a sample RPE");
    }
    throw std::logic_error("experiment_rpe: unknown kind");
}

}  // namespace detail

// Worst-case output error sweep: one high-resolution reference tokenset, and
// per (n, replicate) a fresh sample, fresh parameters and a full worst-case
// training run; the recorded metric is the trained output error.
inline SweepResult run_worstcase_sweep(const ExperimentConfig& config) {
    if (config.kind != "worstcase") throw std::invalid_argument("run_worstcase_sweep: wrong config kind");
    if (config.n_grid.empty()) throw std::invalid_argument("run_worstcase_sweep: empty n grid");
    for (size_t i = 1; i < config.n_grid.size(); ++i)
        if (config.n_grid[i] <= config.n_grid[i - 1]) throw std::invalid_argument("n grid must be strictly increasing");
    if (config.reference_size <= config.n_grid.back()) throw std::invalid_argument("reference size must exceed the n grid");
    if (config.domain.kind == DomainSpec::Kind::graphon && config.rpe_kind == RpeMatrix::Kind::displacement)
        throw std::invalid_argument("displacement RPE is for point clouds");

    RngStream ref_rng(derive_seed(config.seed, 0x0eff));
    const Tokenset reference = build_reference_tokenset(config.domain, config.reference_size, ref_rng);
    const RpeMatrix reference_rpe = detail::experiment_rpe(config, reference);

    const int total = static_cast<int>(config.n_grid.size()) * config.replicates;
    std::vector<double> errors(static_cast<size_t>(total));
    std::vector<double> sigmas(static_cast<size_t>(total));
    std::vector<uint64_t> seeds(static_cast<size_t>(total));

    parallel_for(total, config.threads, [&](int idx) {
        const int n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        const int rep = idx % config.replicates;
        const uint64_t seed = derive_seed(config.seed, static_cast<uint64_t>(n), static_cast<uint64_t>(rep));
        RngStream rng(seed);
        const Tokenset sample = sample_tokenset(config.domain, n, rng);
        const RpeMatrix sample_rpe = detail::experiment_rpe(config, sample);
        TransformerParams params = random_init(config.dims, rng);
        WorstCaseResult r = train_worst_case(std::move(params), reference, reference_rpe, sample, sample_rpe,
                                             config.epochs, config.lr);
        if (r.aborted) throw std::runtime_error("worst-case training diverged at n=" + std::to_string(n) + " rep=" + std::to_string(rep));
        errors[static_cast<size_t>(idx)] = r.final_error;
        sigmas[static_cast<size_t>(idx)] = r.max_sigma;
        seeds[static_cast<size_t>(idx)] = seed;
    });

    SweepResult res;
    res.metric_tag = "worst_case_error";
    for (int idx = 0; idx < total; ++idx) {
        SweepRow row;
        row.experiment = "worstcase";
        row.n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        row.replicate = idx % config.replicates;
        row.seed = seeds[static_cast<size_t>(idx)];
        row.metric = "error";
        row.value = errors[static_cast<size_t>(idx)];
        res.rows.push_back(std::move(row));
        res.max_sigma = std::max(res.max_sigma, sigmas[static_cast<size_t>(idx)]);
    }
    return res;
}

// Random-walk RPE stability: sup-norm gap between n (P^k) on a sampled graph
// and the quadrature kernel power on the same latents.
inline SweepResult run_rpe_stability_sweep(const ExperimentConfig& config) {
    if (config.kind != "rpe-stability") throw std::invalid_argument("run_rpe_stability_sweep: wrong config kind");
    if (config.domain.kind != DomainSpec::Kind::graphon) throw std::invalid_argument("rpe stability requires a graphon domain");

    const int total = static_cast<int>(config.n_grid.size()) * config.replicates;
    std::vector<double> errors(static_cast<size_t>(total), -1.0);  // -1 marks a skipped replicate
    std::vector<uint64_t> seeds(static_cast<size_t>(total));

    parallel_for(total, config.threads, [&](int idx) {
        const int n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        const int rep = idx % config.replicates;
        const uint64_t seed = derive_seed(config.seed, static_cast<uint64_t>(n), static_cast<uint64_t>(rep));
        RngStream rng(seed);
        seeds[static_cast<size_t>(idx)] = seed;
        const Tokenset sample = sample_tokenset(config.domain, n, rng);
        const RpeMatrix discrete = random_walk_rpe(*sample.graph, config.rpe_steps);
        if (static_cast<double>(discrete.degenerate.size()) > 0.1 * n) return;  // recorded skip
        const RpeMatrix reference = kernel_power_reference(config.domain.kernel, sample.latents.col(0),
                                                           config.rpe_steps, config.quadrature_nodes, rng);
        errors[static_cast<size_t>(idx)] = stability_sup_error(discrete, reference);
    });

    SweepResult res;
    res.metric_tag = "stability_sup_error";
    for (int idx = 0; idx < total; ++idx) {
        if (errors[static_cast<size_t>(idx)] < 0.0) {
            ++res.skipped;
            continue;
        }
        SweepRow row;
        row.experiment = "rpe-stability";
        row.n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        row.replicate = idx % config.replicates;
        row.seed = seeds[static_cast<size_t>(idx)];
        row.metric = "sup_error";
        row.value = errors[static_cast<size_t>(idx)];
        res.rows.push_back(std::move(row));
    }
    return res;
}

// Shortest-path non-convergence: fraction of vertex pairs whose hop distance
// differs from 1, the modal large-n value for dense graphons.
inline SweepResult run_shortest_path_instability(const ExperimentConfig& config) {
    if (config.kind != "sp-instability") throw std::invalid_argument("run_shortest_path_instability: wrong config kind");
    if (config.domain.kind != DomainSpec::Kind::graphon) throw std::invalid_argument("sp instability requires a graphon domain");

    const int total = static_cast<int>(config.n_grid.size()) * config.replicates;
    std::vector<double> fractions(static_cast<size_t>(total));
    std::vector<uint64_t> seeds(static_cast<size_t>(total));

    parallel_for(total, config.threads, [&](int idx) {
        const int n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        const int rep = idx % config.replicates;
        const uint64_t seed = derive_seed(config.seed, static_cast<uint64_t>(n), static_cast<uint64_t>(rep));
        RngStream rng(seed);
        seeds[static_cast<size_t>(idx)] = seed;
        const Tokenset sample = sample_tokenset(config.domain, n, rng);
        const RpeMatrix sp = shortest_path_rpe(*sample.graph);
        long mismatched = 0;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (i != j && sp.at(i, j) != 1.0) ++mismatched;
        fractions[static_cast<size_t>(idx)] = static_cast<double>(mismatched) / (static_cast<double>(n) * (n - 1));
    });

    SweepResult res;
    res.metric_tag = "distance_one_mismatch_fraction";
    for (int idx = 0; idx < total; ++idx) {
        SweepRow row;
        row.experiment = "sp-instability";
        row.n = config.n_grid[static_cast<size_t>(idx) / static_cast<size_t>(config.replicates)];
        row.replicate = idx % config.replicates;
        row.seed = seeds[static_cast<size_t>(idx)];
        row.metric = "mismatch_fraction";
        row.value = fractions[static_cast<size_t>(idx)];
        res.rows.push_back(std::move(row));
    }
    return res;
}

// Stable vs unstable RPE classification: for each seed and n, train one model
// per RPE kind on a balanced set of graphs from the two graphon classes, then
// measure |R_test - R_train| against a larger-n test set. Train graphs are
// shared between the two RPE kinds so the comparison is paired.
inline SweepResult run_classification_comparison(const ExperimentConfig& config) {
    if (config.kind != "classify") throw std::invalid_argument("run_classification_comparison: wrong config kind");

    const GraphonKernel kernel0 = GraphonKernel::Sbm(0.9, 1e-3, 0.5);  // label 0
    const GraphonKernel kernel1 = GraphonKernel::Constant(0.3);        // label 1
    const DomainSpec domain0 = DomainSpec::Graphon(kernel0, 1.0, FeatureRule::block_indicator);
    const DomainSpec domain1 = DomainSpec::Graphon(kernel1, 1.0, FeatureRule::block_indicator);

    struct Cell {
        double gap_rw = 0.0, gap_sp = 0.0;
        uint64_t seed = 0;
        double max_sigma = 0.0;
    };
    const int n_count = static_cast<int>(config.n_grid.size());
    std::vector<Cell> cells(static_cast<size_t>(config.replicates * n_count));

    parallel_for(config.replicates, config.threads, [&](int rep) {
        const uint64_t rep_seed = derive_seed(config.seed, 0xc1a55, static_cast<uint64_t>(rep));

        struct Trained {
            TransformerParams params;
            double train_risk = 0.0;
            double test_loss_sum = 0.0;
        };
        std::vector<Trained> models(static_cast<size_t>(n_count) * 2);  // [n][kind], kind 0 = rw, 1 = sp

        for (int ni = 0; ni < n_count; ++ni) {
            const int n = config.n_grid[static_cast<size_t>(ni)];
            RngStream rng(derive_seed(rep_seed, static_cast<uint64_t>(n)));

            // balanced training set; adjacency is dropped once the RPEs exist
            std::vector<Tokenset> tokensets;
            std::vector<RpeMatrix> rpes_rw, rpes_sp;
            std::vector<int> labels;
            tokensets.reserve(static_cast<size_t>(config.train_graphs));
            for (int g = 0; g < config.train_graphs; ++g) {
                const int label = g % 2;
                Tokenset t = sample_tokenset(label == 0 ? domain0 : domain1, n, rng);
                rpes_rw.push_back(random_walk_rpe(*t.graph, config.rpe_steps));
                rpes_sp.push_back(shortest_path_rpe(*t.graph));
                t.graph.reset();
                t.label = label;
                tokensets.push_back(std::move(t));
                labels.push_back(label);
            }

            for (int kind = 0; kind < 2; ++kind) {
                std::vector<ClsExample> data;
                for (int g = 0; g < config.train_graphs; ++g)
                    data.push_back({&tokensets[static_cast<size_t>(g)],
                                    kind == 0 ? &rpes_rw[static_cast<size_t>(g)] : &rpes_sp[static_cast<size_t>(g)],
                                    labels[static_cast<size_t>(g)]});
                RngStream train_rng(derive_seed(rep_seed, static_cast<uint64_t>(n), static_cast<uint64_t>(kind) + 1));
                TransformerParams init = random_init(config.dims, train_rng);
                OptimizerState opt = config.optimizer == "adam" ? OptimizerState::Adam(config.lr) : OptimizerState::Sgd(config.lr);
                ClassifierResult trained = train_classifier(std::move(init), data, config.epochs, config.batch_size, opt, train_rng);
                Trained& slot = models[static_cast<size_t>(ni) * 2 + static_cast<size_t>(kind)];
                slot.train_risk = mean_risk(trained.params, data);
                slot.params = std::move(trained.params);
                cells[static_cast<size_t>(rep * n_count + ni)].max_sigma =
                    std::max(cells[static_cast<size_t>(rep * n_count + ni)].max_sigma, trained.max_sigma);
            }
        }

        // streamed test phase: one high-resolution graph at a time, both RPE
        // kinds, every trained model
        RngStream test_rng(derive_seed(rep_seed, 0x7e57));
        for (int g = 0; g < config.test_graphs; ++g) {
            const int label = g % 2;
            Tokenset t = sample_tokenset(label == 0 ? domain0 : domain1, config.test_size, test_rng);
            const RpeMatrix rpe_rw = random_walk_rpe(*t.graph, config.rpe_steps);
            const RpeMatrix rpe_sp = shortest_path_rpe(*t.graph);
            t.graph.reset();
            for (int ni = 0; ni < n_count; ++ni) {
                for (int kind = 0; kind < 2; ++kind) {
                    Trained& slot = models[static_cast<size_t>(ni) * 2 + static_cast<size_t>(kind)];
                    const RpeMatrix& rpe = kind == 0 ? rpe_rw : rpe_sp;
                    slot.test_loss_sum += cross_entropy(forward(slot.params, t, rpe).output, label);
                }
            }
        }

        for (int ni = 0; ni < n_count; ++ni) {
            Cell& cell = cells[static_cast<size_t>(rep * n_count + ni)];
            cell.seed = rep_seed;
            const Trained& rw = models[static_cast<size_t>(ni) * 2];
            const Trained& sp = models[static_cast<size_t>(ni) * 2 + 1];
            cell.gap_rw = std::abs(rw.test_loss_sum / config.test_graphs - rw.train_risk);
            cell.gap_sp = std::abs(sp.test_loss_sum / config.test_graphs - sp.train_risk);
        }
    });

    SweepResult res;
    res.metric_tag = "generalization_gap";
    for (int ni = 0; ni < n_count; ++ni) {
        for (int rep = 0; rep < config.replicates; ++rep) {
            const Cell& cell = cells[static_cast<size_t>(rep * n_count + ni)];
            res.max_sigma = std::max(res.max_sigma, cell.max_sigma);
            SweepRow row;
            row.experiment = "classify";
            row.n = config.n_grid[static_cast<size_t>(ni)];
            row.replicate = rep;
            row.seed = cell.seed;
            row.metric = "gap_rw";
            row.value = cell.gap_rw;
            res.rows.push_back(row);
            row.metric = "gap_sp";
            row.value = cell.gap_sp;
            res.rows.push_back(std::move(row));
        }
    }
    return res;
}

// --- adversarial two-point construction ---

struct AdversarialReport {
    double l = 10.0;
    int trials = 0;
    int n_tokens = 0;
    double continuous_output = 0.0;
    double continuous_error = 0.0;   // |Theta(continuous) - 1|
    double all_a_output = 0.0;       // exactly -1
    double output_gap = 0.0;
    double all_a_frequency = 0.0;
    double analytic_all_a = 0.0;     // (1 - e^-L)^(ceil(e^L))
    double gap_quarter_frequency = 0.0;
    bool small_l_warning = false;
};

// Exact model for the two-point domain: tokens live at -1 and +1, the logit
// is L * (y - x) built from a displacement RPE through an exact two-unit
// ReLU-pair phi, values are the identity, and the head is an exact identity.
inline TransformerParams adversarial_two_point_params(double l, double slope = 0.01) {
    TransformerParams p;
    p.scale_logits = false;
    p.activation_slope = slope;
    AttentionLayerParams lay;
    lay.q = Eigen::MatrixXd::Zero(1, 1);
    lay.k = Eigen::MatrixXd::Zero(1, 1);
    lay.v = Eigen::MatrixXd::Identity(1, 1);
    lay.phi.w1.resize(1, 2);
    lay.phi.w1 << 1.0, -1.0;
    lay.phi.w2.resize(2, 1);
    lay.phi.w2 << -l / (1.0 + slope), l / (1.0 + slope);
    lay.phi.b1 = Eigen::VectorXd::Zero(2);
    lay.phi.b2 = Eigen::VectorXd::Zero(1);
    p.layers.push_back(std::move(lay));
    p.head.w1.resize(1, 2);
    p.head.w1 << 1.0, -1.0;
    p.head.w2.resize(2, 1);
    p.head.w2 << 1.0 / (1.0 + slope), -1.0 / (1.0 + slope);
    p.head.b1 = Eigen::VectorXd::Zero(2);
    p.head.b2 = Eigen::VectorXd::Zero(1);
    return p;
}

inline Tokenset two_point_tokenset(double weight_a, double weight_b) {
    Tokenset t;
    t.latents.resize(2, 1);
    t.latents << -1.0, 1.0;
    t.features = t.latents;
    t.weights.resize(2);
    t.weights << weight_a, weight_b;
    return t;
}

inline AdversarialReport run_adversarial_two_point(double l, int mc_trials, uint64_t seed) {
    AdversarialReport rep;
    rep.l = l;
    rep.trials = mc_trials;
    rep.small_l_warning = l < 10.0;
    rep.n_tokens = static_cast<int>(std::ceil(std::exp(l)));

    const TransformerParams params = adversarial_two_point_params(l);
    const double pb = std::exp(-l);

    const Tokenset continuous = two_point_tokenset(1.0 - pb, pb);
    const RpeMatrix rpe = displacement_rpe(continuous.latents);
    rep.continuous_output = forward(params, continuous, rpe).output(0);
    rep.continuous_error = std::abs(rep.continuous_output - 1.0);

    const Tokenset all_a = two_point_tokenset(1.0, 0.0);
    rep.all_a_output = forward(params, all_a, rpe).output(0);
    rep.output_gap = std::abs(rep.continuous_output - rep.all_a_output);

    rep.analytic_all_a = std::pow(1.0 - pb, static_cast<double>(rep.n_tokens));

    RngStream rng(derive_seed(seed, 0xad7e));
    int all_a_count = 0, gap_count = 0;
    for (int trial = 0; trial < mc_trials; ++trial) {
        int count_b = 0;
        for (int i = 0; i < rep.n_tokens; ++i)
            if (rng.uniform01() < pb) ++count_b;
        if (count_b == 0) ++all_a_count;
        // measure-split invariance collapses the n-token sample to the
        // two-point tokenset with empirical weights
        const Tokenset trial_set = two_point_tokenset(
            static_cast<double>(rep.n_tokens - count_b) / rep.n_tokens,
            static_cast<double>(count_b) / rep.n_tokens);
        const double out = forward(params, trial_set, rpe).output(0);
        if (std::abs(rep.continuous_output - out) >= 0.25) ++gap_count;
    }
    rep.all_a_frequency = static_cast<double>(all_a_count) / mc_trials;
    rep.gap_quarter_frequency = static_cast<double>(gap_count) / mc_trials;
    return rep;
}

// --- flat key = value config files; CLI flags override file values ---

inline std::map<std::string, std::string> read_config_file(std::istream& in) {
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t h = line.find('#');
        if (h != std::string::npos) line.erase(h);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r\n") != std::string::npos)
                throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            const size_t b = s.find_first_not_of(" \t\r\n");
            if (b == std::string::npos) return std::string();
            const size_t e = s.find_last_not_of(" \t\r\n");
            return s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

inline std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

// Applies recognized keys onto a config; unknown keys are an error so typos
// do not silently fall back to defaults.
inline void apply_config(ExperimentConfig& config, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "n_grid") config.n_grid = parse_int_list(value);
        else if (key == "replicates") config.replicates = std::stoi(value);
        else if (key == "reference_size") config.reference_size = std::stoi(value);
        else if (key == "rpe") {
            if (value == "random_walk") config.rpe_kind = RpeMatrix::Kind::random_walk;
            else if (value == "shortest_path") config.rpe_kind = RpeMatrix::Kind::shortest_path;
            else if (value == "displacement") config.rpe_kind = RpeMatrix::Kind::displacement;
            else throw std::runtime_error("config: unknown rpe kind '" + value + "'");
        }
        else if (key == "rpe_steps") config.rpe_steps = std::stoi(value);
        else if (key == "epochs") config.epochs = std::stoi(value);
        else if (key == "lr") config.lr = std::stod(value);
        else if (key == "optimizer") config.optimizer = value;
        else if (key == "batch_size") config.batch_size = std::stoi(value);
        else if (key == "quadrature_nodes") config.quadrature_nodes = std::stoi(value);
        else if (key == "test_size") config.test_size = std::stoi(value);
        else if (key == "train_graphs") config.train_graphs = std::stoi(value);
        else if (key == "test_graphs") config.test_graphs = std::stoi(value);
        else if (key == "seed") config.seed = std::stoull(value);
        else if (key == "out") config.out_path = value;
        else if (key == "threads") config.threads = std::stoi(value);
        else if (key == "epochs_hidden_dim") config.dims.hidden_dim = std::stoi(value);
        else if (key == "hidden_dim") config.dims.hidden_dim = std::stoi(value);
        else if (key == "key_dim") config.dims.key_dim = std::stoi(value);
        else if (key == "phi_hidden") config.dims.phi_hidden = std::stoi(value);
        else if (key == "head_hidden") config.dims.head_hidden = std::stoi(value);
        else if (key == "layers") config.dims.layers = std::stoi(value);
        else if (key == "kernel") {
            if (value == "two_block_sine") config.domain.kernel = GraphonKernel::TwoBlockSine(1.0, 1e-3);
            else if (value == "constant") config.domain.kernel = GraphonKernel::Constant(config.domain.kernel.c);
            else if (value == "sbm") config.domain.kernel = GraphonKernel::Sbm(0.9, 1e-3, 0.5);
            else throw std::runtime_error("config: unknown kernel '" + value + "'");
        }
        else if (key == "kernel_c") config.domain.kernel.c = std::stod(value);
        else if (key == "alpha") config.domain.sparsity_exponent = std::stod(value);
        else throw std::runtime_error("config: unknown key '" + key + "'");
    }
}

}  // namespace sizegen
