// Command-line harness for the sweep experiments: generates CSV results,
// fits log-log slopes and reports pass/fail against the built-in thresholds.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sizegen/experiments.hpp"

namespace {

using namespace sizegen;

void load_config_into(ExperimentConfig& config, const std::string& path) {
    if (path.empty()) return;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    apply_config(config, read_config_file(in));
}

void write_result(const SweepResult& result, const std::string& out_path) {
    if (out_path.empty()) return;
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file " + out_path);
    write_csv(out, result);
    std::cout << "wrote " << result.rows.size() << " rows to " << out_path << "\n";
}

void write_bound_overlay(const std::string& path, const std::vector<int>& grid, double h1, double h2,
                         double h3, double rho, double d_chi) {
    if (path.empty()) return;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open bound overlay file " + path);
    out << "n,bound\n";
    char buf[64];
    for (int n : grid) {
        std::snprintf(buf, sizeof(buf), "%.17g", bound_curve(h1, h2, h3, rho, d_chi, n));
        out << n << "," << buf << "\n";
    }
    std::cout << "wrote bound overlay to " << path << "\n";
}

void print_fit(const std::string& label, const SlopeFit& fit) {
    std::cout << label << ": slope " << fit.slope << " (stderr " << fit.stderr_slope << ", intercept "
              << fit.intercept << ", points " << fit.points_used << ")\n";
}

void print_verdict(const std::string& what, bool ok) {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << what << "\n";
}

struct BoundFlags {
    std::string path;
    double h1 = 1.0, h2 = 1.0, h3 = 1.0, rho = 0.5, d_chi = 1.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--bound-out", path, "write a reference bound-curve overlay CSV");
        cmd->add_option("--bound-h1", h1, "bound constant H1");
        cmd->add_option("--bound-h2", h2, "bound constant H2");
        cmd->add_option("--bound-h3", h3, "bound constant H3");
        cmd->add_option("--bound-rho", rho, "RPE stability exponent rho");
        cmd->add_option("--bound-d", d_chi, "intrinsic dimension D");
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"size-generalization experiment harness"};
    app.require_subcommand(1);

    std::string config_path, out_path, n_grid_flag;
    uint64_t seed = 0;
    int replicates = -1, threads = -1;

    auto add_common = [&](CLI::App* cmd, bool needs_seed) {
        cmd->add_option("--config", config_path, "flat key = value config file");
        auto* s = cmd->add_option("--seed", seed, "base RNG seed");
        if (needs_seed) s->required();
        cmd->add_option("--out", out_path, "output CSV path");
        cmd->add_option("--n-grid", n_grid_flag, "comma-separated token counts");
        cmd->add_option("--replicates", replicates, "replicates per n");
        cmd->add_option("--threads", threads, "worker threads (0 = hardware)");
    };

    auto finish_config = [&](ExperimentConfig& config) {
        load_config_into(config, config_path);
        config.seed = seed;
        if (!n_grid_flag.empty()) config.n_grid = parse_int_list(n_grid_flag);
        if (replicates >= 0) config.replicates = replicates;
        if (threads >= 0) config.threads = threads;
        if (!out_path.empty()) config.out_path = out_path;
    };

    // worstcase
    auto* worst = app.add_subcommand("worstcase", "worst-case output error sweep");
    std::string worst_domain = "graph";
    int worst_epochs = -1;
    double worst_lr = -1.0;
    worst->add_option("--domain", worst_domain, "graph | cloud")->check(CLI::IsMember({"graph", "cloud"}));
    worst->add_option("--epochs", worst_epochs, "ascent epochs per replicate");
    worst->add_option("--lr", worst_lr, "ascent learning rate");
    BoundFlags worst_bound;
    worst_bound.attach(worst);
    add_common(worst, true);

    // rpe-stability
    auto* stab = app.add_subcommand("rpe-stability", "random-walk RPE stability sweep");
    int stab_quadrature = -1, stab_steps = -1;
    stab->add_option("--quadrature", stab_quadrature, "quadrature node count");
    stab->add_option("--steps", stab_steps, "random-walk steps k");
    BoundFlags stab_bound;
    stab_bound.attach(stab);
    add_common(stab, true);

    // sp-instability
    auto* inst = app.add_subcommand("sp-instability", "shortest-path non-convergence sweep");
    add_common(inst, true);

    // classify
    auto* cls = app.add_subcommand("classify", "stable vs unstable RPE classification comparison");
    int cls_train = -1, cls_test_graphs = -1, cls_test_size = -1;
    cls->add_option("--train-graphs", cls_train, "training graphs per set");
    cls->add_option("--test-graphs", cls_test_graphs, "test graphs");
    cls->add_option("--test-size", cls_test_size, "test tokenset size");
    add_common(cls, true);

    // adversarial
    auto* adv = app.add_subcommand("adversarial", "two-point adversarial construction report");
    double adv_l = 10.0;
    int adv_trials = 2000;
    uint64_t adv_seed = 1;
    adv->add_option("--L", adv_l, "logit Lipschitz constant");
    adv->add_option("--mc-trials", adv_trials, "Monte Carlo trials");
    adv->add_option("--seed", adv_seed, "RNG seed");

    // fit-slope
    auto* fit = app.add_subcommand("fit-slope", "fit a log-log slope from a sweep CSV");
    std::string fit_path, fit_stat = "mean", fit_metric;
    fit->add_option("csv", fit_path, "sweep CSV file")->required();
    fit->add_option("--statistic", fit_stat, "mean | mean_plus_std | median")
        ->check(CLI::IsMember({"mean", "mean_plus_std", "median"}));
    fit->add_option("--metric", fit_metric, "restrict to one metric column value");

    // regularity
    auto* reg = app.add_subcommand("regularity", "estimate measure-regularity constants");
    std::string reg_domain = "interval";
    int reg_probes = 20000;
    uint64_t reg_seed = 1;
    std::string reg_radii = "0.05,0.08,0.12,0.2,0.3,0.5";
    reg->add_option("--domain", reg_domain, "interval | sphere | torus")->check(CLI::IsMember({"interval", "sphere", "torus"}));
    reg->add_option("--probes", reg_probes, "probe count");
    reg->add_option("--radii", reg_radii, "comma-separated radius grid");
    reg->add_option("--seed", reg_seed, "RNG seed");

    // concentration
    auto* conc = app.add_subcommand("concentration", "empirical-measure concentration sweep");
    int conc_n = 1000, conc_trials = 500;
    double conc_tau = 4.0, conc_c = 2.0, conc_d = 1.0;
    uint64_t conc_seed = 1;
    std::string conc_out;
    conc->add_option("--n", conc_n, "sample size per trial");
    conc->add_option("--trials", conc_trials, "Monte Carlo trials");
    conc->add_option("--tau", conc_tau, "deviation multiplier tau");
    conc->add_option("--c-chi", conc_c, "regularity constant C");
    conc->add_option("--d-chi", conc_d, "intrinsic dimension D");
    conc->add_option("--seed", conc_seed, "RNG seed")->required();
    conc->add_option("--out", conc_out, "per-cell CSV output");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*worst) {
            ExperimentConfig config = worst_domain == "cloud" ? default_worstcase_cloud_config()
                                                              : default_worstcase_graph_config();
            finish_config(config);
            if (worst_epochs >= 0) config.epochs = worst_epochs;
            if (worst_lr > 0.0) config.lr = worst_lr;
            const SweepResult result = run_worstcase_sweep(config);
            write_result(result, config.out_path);
            const SlopeFit mean_fit = fit_slope(result, Statistic::mean);
            const SlopeFit ms_fit = fit_slope(result, Statistic::mean_plus_std);
            print_fit("mean", mean_fit);
            print_fit("mean+std", ms_fit);
            std::cout << "max spectral norm after steps: " << result.max_sigma << "\n";
            const double lo = worst_domain == "cloud" ? acceptance::kCloudSlopeLo : acceptance::kGraphSlopeLo;
            const double hi = worst_domain == "cloud" ? acceptance::kCloudSlopeHi : acceptance::kGraphSlopeHi;
            print_verdict("mean-curve slope within [" + std::to_string(lo) + ", " + std::to_string(hi) + "]",
                          mean_fit.slope >= lo && mean_fit.slope <= hi);
            print_verdict("spectral discipline sigma <= 1 + 1e-6", result.max_sigma <= acceptance::kSpectralTol);
            write_bound_overlay(worst_bound.path, config.n_grid, worst_bound.h1, worst_bound.h2, worst_bound.h3,
                                worst_bound.rho, worst_bound.d_chi);
        } else if (*stab) {
            ExperimentConfig config = default_stability_config();
            finish_config(config);
            if (stab_quadrature > 0) config.quadrature_nodes = stab_quadrature;
            if (stab_steps > 0) config.rpe_steps = stab_steps;
            const SweepResult result = run_rpe_stability_sweep(config);
            write_result(result, config.out_path);
            if (result.skipped > 0) std::cout << "skipped replicates (degenerate graphs): " << result.skipped << "\n";
            const SlopeFit fit_med = fit_slope(result, Statistic::median);
            print_fit("median", fit_med);
            print_verdict("median slope <= -0.25", fit_med.slope <= acceptance::kStabilitySlopeMax);
            write_bound_overlay(stab_bound.path, config.n_grid, stab_bound.h1, stab_bound.h2, stab_bound.h3,
                                stab_bound.rho, stab_bound.d_chi);
        } else if (*inst) {
            ExperimentConfig config = default_instability_config();
            finish_config(config);
            const SweepResult result = run_shortest_path_instability(config);
            write_result(result, config.out_path);
            const SlopeFit fit_mean = fit_slope(result, Statistic::mean);
            print_fit("mean", fit_mean);
            bool frac_ok = true;
            {
                std::map<int, std::vector<double>> by_n;
                for (const SweepRow& r : result.rows) by_n[r.n].push_back(r.value);
                for (auto& [n, values] : by_n) {
                    const double mean = summarize(values, Statistic::mean);
                    std::cout << "n " << n << ": mismatch fraction " << mean << "\n";
                    frac_ok = frac_ok && std::abs(mean - acceptance::kInstabilityFrac) <= acceptance::kInstabilityFracTol;
                }
            }
            print_verdict("mismatch fraction 0.50 +- 0.05 at every n", frac_ok);
            print_verdict("|slope| <= 0.05", std::abs(fit_mean.slope) <= acceptance::kInstabilitySlopeAbs);
        } else if (*cls) {
            ExperimentConfig config = default_classification_config();
            finish_config(config);
            if (cls_train > 0) config.train_graphs = cls_train;
            if (cls_test_graphs > 0) config.test_graphs = cls_test_graphs;
            if (cls_test_size > 0) config.test_size = cls_test_size;
            const SweepResult result = run_classification_comparison(config);
            write_result(result, config.out_path);
            std::map<int, std::vector<double>> rw, sp;
            for (const SweepRow& r : result.rows) (r.metric == "gap_rw" ? rw : sp)[r.n].push_back(r.value);
            int wins = 0, total = 0;
            for (auto& [n, values] : rw) {
                const double med_rw = summarize(values, Statistic::median);
                const double med_sp = summarize(sp[n], Statistic::median);
                std::cout << "n " << n << ": median gap random-walk " << med_rw << ", shortest-path " << med_sp << "\n";
                ++total;
                if (med_rw <= med_sp) ++wins;
            }
            std::cout << "stable RPE wins " << wins << " of " << total << " grid values\n";
            print_verdict("stable gap <= unstable gap on a majority of n", 2 * wins >= total + (total % 2));
        } else if (*adv) {
            const AdversarialReport rep = run_adversarial_two_point(adv_l, adv_trials, adv_seed);
            if (rep.small_l_warning) std::cout << "warning: L < 10 is outside the theorem regime (fast desk mode)\n";
            std::cout << "L " << rep.l << ", tokens per trial " << rep.n_tokens << "\n";
            std::cout << "continuous output " << rep.continuous_output << " (|error to 1| " << rep.continuous_error << ")\n";
            std::cout << "all-a output " << rep.all_a_output << ", gap " << rep.output_gap << "\n";
            std::cout << "all-a frequency " << rep.all_a_frequency << " vs analytic " << rep.analytic_all_a << "\n";
            std::cout << "gap >= 1/4 frequency " << rep.gap_quarter_frequency << "\n";
            print_verdict("continuous output within 5 e^-L of 1", rep.continuous_error <= 5.0 * std::exp(-rep.l));
            print_verdict("all-a output is exactly -1", rep.all_a_output == -1.0);
            print_verdict("all-a frequency within 0.05 of analytic",
                          std::abs(rep.all_a_frequency - rep.analytic_all_a) <= acceptance::kAdversarialFreqTol);
        } else if (*fit) {
            std::ifstream in(fit_path);
            if (!in) throw std::runtime_error("cannot open " + fit_path);
            const SweepResult result = read_csv(in);
            const Statistic stat = fit_stat == "median" ? Statistic::median
                                   : fit_stat == "mean_plus_std" ? Statistic::mean_plus_std
                                                                 : Statistic::mean;
            print_fit(fit_stat, fit_slope(result, stat, fit_metric));
        } else if (*reg) {
            DomainSpec domain = reg_domain == "sphere" ? DomainSpec::Sphere(1.0)
                                : reg_domain == "torus" ? DomainSpec::Torus(2.0, 0.5)
                                                        : DomainSpec::Graphon(GraphonKernel::Constant(0.5));
            std::vector<double> radii;
            {
                std::stringstream ss(reg_radii);
                std::string item;
                while (std::getline(ss, item, ',')) radii.push_back(std::stod(item));
            }
            RngStream rng(reg_seed);
            const RegularityEstimate est = estimate_regularity(domain, radii, reg_probes, rng);
            std::cout << "C " << est.c_chi << ", D " << est.d_chi << "\n";
            for (size_t i = 0; i < est.residuals.size(); ++i)
                std::cout << "radius " << radii[i] << ": log residual " << est.residuals[i] << "\n";
        } else if (*conc) {
            const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));
            const double r = std::pow(static_cast<double>(conc_n), -1.0 / (conc_d + 2.0));
            RngStream rng(derive_seed(conc_seed, 0xc0c0));
            const Covering covering = build_covering(domain, r, 1000000, rng);
            std::cout << "covering radius " << r << ", cells " << covering.cells() << "\n";
            int failures = 0;
            double worst = 0.0;
            std::ofstream out;
            if (!conc_out.empty()) {
                out.open(conc_out, std::ios::binary);
                if (!out) throw std::runtime_error("cannot open " + conc_out);
                out << "trial,cell,reference_mass,empirical_mass,deviation\n";
            }
            for (int trial = 0; trial < conc_trials; ++trial) {
                RngStream trial_rng(derive_seed(conc_seed, static_cast<uint64_t>(trial) + 1));
                const Eigen::MatrixXd latents = sample_latents(domain, conc_n, trial_rng);
                const EventCheck ev = concentration_event_check(latents, covering, conc_tau, conc_c, conc_d);
                if (!ev.holds) ++failures;
                worst = std::max(worst, ev.max_deviation);
                if (out.is_open()) {
                    char buf[64];
                    for (int c = 0; c < covering.cells(); ++c) {
                        const double dev = std::abs(ev.empirical_masses(c) / covering.cell_masses(c) - 1.0);
                        out << trial << "," << c << ",";
                        std::snprintf(buf, sizeof(buf), "%.17g", covering.cell_masses(c));
                        out << buf << ",";
                        std::snprintf(buf, sizeof(buf), "%.17g", ev.empirical_masses(c));
                        out << buf << ",";
                        std::snprintf(buf, sizeof(buf), "%.17g", dev);
                        out << buf << "\n";
                    }
                }
            }
            const double freq = static_cast<double>(failures) / conc_trials;
            const double bound = concentration_failure_bound(conc_c, conc_n, conc_tau);
            std::cout << "failure frequency " << freq << ", bound " << bound << ", worst deviation " << worst << "\n";
            if (bound < 1.0) print_verdict("failure frequency within the concentration bound", freq <= bound);
            else std::cout << "bound is vacuous (>= 1) at this tau\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
