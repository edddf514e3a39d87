#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "sizegen/domain.hpp"
#include "sizegen/model.hpp"
#include "sizegen/rng.hpp"

namespace sizegen {

// Disjoint covering of the domain by Voronoi cells of a greedy maximal
// r-packing. Reference cell masses are estimated by the probe fractions.
struct Covering {
    Eigen::MatrixXd centers;            // c x dim
    std::vector<int> probe_assignment;  // construction probe -> cell index
    double radius = 0.0;
    Eigen::VectorXd cell_masses;

    int cells() const { return static_cast<int>(centers.rows()); }
};

namespace detail {

// Nearest center by Euclidean distance, ties to the lowest index.
inline int nearest_center(const Eigen::MatrixXd& centers, const Eigen::RowVectorXd& x) {
    int best = 0;
    double best_d = (centers.row(0) - x).squaredNorm();
    for (int c = 1; c < centers.rows(); ++c) {
        const double d = (centers.row(c) - x).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

}  // namespace detail

// Greedy maximal packing: scan probes in order, accept a probe as a center
// iff it lies at distance >= r from every accepted center. Every probe is
// then assigned to its nearest center.
inline Covering build_covering_from_probes(const Eigen::MatrixXd& probes, double r) {
    if (probes.rows() == 0) throw std::invalid_argument("build_covering: no probes");
    if (!(r > 0.0)) throw std::invalid_argument("build_covering: radius must be positive");

    std::vector<int> center_rows;
    for (int i = 0; i < probes.rows(); ++i) {
        bool far = true;
        for (int c : center_rows) {
            if ((probes.row(c) - probes.row(i)).norm() < r) {
                far = false;
                break;
            }
        }
        if (far) center_rows.push_back(i);
    }

    Covering cov;
    cov.radius = r;
    cov.centers.resize(static_cast<Eigen::Index>(center_rows.size()), probes.cols());
    for (size_t c = 0; c < center_rows.size(); ++c) cov.centers.row(static_cast<Eigen::Index>(c)) = probes.row(center_rows[c]);

    cov.probe_assignment.resize(static_cast<size_t>(probes.rows()));
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(cov.cells());
    for (int i = 0; i < probes.rows(); ++i) {
        const int c = detail::nearest_center(cov.centers, probes.row(i));
        cov.probe_assignment[static_cast<size_t>(i)] = c;
        counts(c) += 1.0;
    }
    cov.cell_masses = counts / static_cast<double>(probes.rows());
    return cov;
}

inline Covering build_covering(const DomainSpec& domain, double r, int probe_count, RngStream& rng) {
    if (probe_count < 1) throw std::invalid_argument("build_covering: probe count must be positive");
    return build_covering_from_probes(sample_latents(domain, probe_count, rng), r);
}

struct EventCheck {
    bool holds = false;
    double max_deviation = 0.0;
    Eigen::VectorXd empirical_masses;  // per cell
};

// Empirical-measure concentration event: every cell's empirical/reference
// mass ratio within sqrt(C) * n^(-1/(D+2)) * tau of 1.
inline EventCheck concentration_event_check(const Eigen::MatrixXd& latents, const Covering& covering,
                                            double tau, double c_chi, double d_chi) {
    const int n = static_cast<int>(latents.rows());
    for (int c = 0; c < covering.cells(); ++c)
        if (!(covering.cell_masses(c) > 0.0)) throw std::runtime_error("concentration_event_check: cell with zero reference mass");

    Eigen::VectorXd counts = Eigen::VectorXd::Zero(covering.cells());
    for (int i = 0; i < n; ++i) counts(detail::nearest_center(covering.centers, latents.row(i))) += 1.0;

    EventCheck ev;
    ev.empirical_masses = counts / static_cast<double>(n);
    for (int c = 0; c < covering.cells(); ++c)
        ev.max_deviation = std::max(ev.max_deviation, std::abs(ev.empirical_masses(c) / covering.cell_masses(c) - 1.0));
    const double threshold = std::sqrt(c_chi) * std::pow(static_cast<double>(n), -1.0 / (d_chi + 2.0)) * tau;
    ev.holds = ev.max_deviation <= threshold;
    return ev;
}

// Probability bound on the complement of the concentration event.
inline double concentration_failure_bound(double c_chi, double n, double tau) {
    return 2.0 * c_chi * n * (std::exp(-tau * tau / 4.0) + std::exp(-tau / (2.0 * std::sqrt(c_chi))));
}

struct RegularityEstimate {
    double c_chi = 1.0;
    double d_chi = 1.0;
    std::vector<double> residuals;  // per radius, in log space
};

// Fits the measure-regularity constants from worst-case ball masses:
// min_x mu(B_{r/2}(x)) ~ r^D / C, by least squares on the log-log pairs.
// Centers are a fixed-size prefix of the probe set; masses count all probes.
inline RegularityEstimate estimate_regularity(const DomainSpec& domain, const std::vector<double>& radii,
                                              int probe_count, RngStream& rng) {
    if (probe_count < 1000) throw std::invalid_argument("estimate_regularity: need at least 1000 probes");
    for (double r : radii)
        if (!(r > 0.0)) throw std::invalid_argument("estimate_regularity: radii must be positive");
    if (radii.size() < 2) throw std::invalid_argument("estimate_regularity: need at least two radii");

    const Eigen::MatrixXd probes = sample_latents(domain, probe_count, rng);
    const int centers = std::min(probe_count, 256);

    std::vector<double> xs, ys;
    for (double r : radii) {
        const double half = r / 2.0;
        double min_mass = 1.0;
        for (int c = 0; c < centers; ++c) {
            int count = 0;
            for (int i = 0; i < probes.rows(); ++i)
                if ((probes.row(i) - probes.row(c)).norm() <= half) ++count;
            min_mass = std::min(min_mass, static_cast<double>(count) / static_cast<double>(probe_count));
        }
        if (min_mass <= 0.0) throw std::runtime_error("estimate_regularity: zero-mass ball at radius " + std::to_string(r));
        xs.push_back(std::log(r));
        ys.push_back(std::log(min_mass));
    }

    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-12) throw std::runtime_error("estimate_regularity: degenerate radius grid");
    const double d = (n * sxy - sx * sy) / denom;
    const double a = (sy - d * sx) / n;

    if (!(d > 0.0)) throw std::runtime_error("estimate_regularity: fit rejected (non-increasing ball masses)");

    RegularityEstimate est;
    est.d_chi = d;
    est.c_chi = std::max(1.0, std::exp(-a));
    for (size_t i = 0; i < xs.size(); ++i) est.residuals.push_back(ys[i] - (a + d * xs[i]));
    return est;
}

using HiddenFn = std::function<Eigen::VectorXd(const Eigen::RowVectorXd&)>;
using PairLogitFn = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
using ValueFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Measured one-layer discretization error: the attention aggregation of an
// explicit hidden function evaluated under the n-sample empirical measure
// versus under an N-sample quadrature of the continuous measure, restricted
// to the same n query tokens. Returns the worst row L2 difference.
inline double one_layer_discretization_error_between(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& zs,
                                                     const HiddenFn& h, const PairLogitFn& logit,
                                                     const ValueFn& value) {
    const int n = static_cast<int>(xs.rows());
    const int reference_size = static_cast<int>(zs.rows());
    if (reference_size < n) throw std::invalid_argument("one_layer_discretization_error: reference must be at least sample-sized");

    std::vector<Eigen::VectorXd> hx(static_cast<size_t>(n)), hz(static_cast<size_t>(reference_size));
    for (int i = 0; i < n; ++i) hx[static_cast<size_t>(i)] = h(xs.row(i));
    for (int j = 0; j < reference_size; ++j) hz[static_cast<size_t>(j)] = h(zs.row(j));

    Eigen::MatrixXd values_x(n, hx[0].size() > 0 ? value(hx[0]).size() : 0);
    for (int i = 0; i < n; ++i) values_x.row(i) = value(hx[static_cast<size_t>(i)]).transpose();
    Eigen::MatrixXd values_z(reference_size, values_x.cols());
    for (int j = 0; j < reference_size; ++j) values_z.row(j) = value(hz[static_cast<size_t>(j)]).transpose();

    Eigen::MatrixXd logits_sample(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) logits_sample(i, j) = logit(hx[static_cast<size_t>(i)], hx[static_cast<size_t>(j)]);
    Eigen::MatrixXd logits_ref(n, reference_size);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < reference_size; ++j) logits_ref(i, j) = logit(hx[static_cast<size_t>(i)], hz[static_cast<size_t>(j)]);

    const Eigen::MatrixXd agg_sample =
        one_layer_aggregate(logits_sample, values_x, Eigen::VectorXd::Constant(n, 1.0 / n));
    const Eigen::MatrixXd agg_ref =
        one_layer_aggregate(logits_ref, values_z, Eigen::VectorXd::Constant(reference_size, 1.0 / reference_size));

    double worst = 0.0;
    for (int i = 0; i < n; ++i) worst = std::max(worst, (agg_sample.row(i) - agg_ref.row(i)).norm());
    return worst;
}

inline double one_layer_discretization_error(const DomainSpec& domain, const HiddenFn& h, const PairLogitFn& logit,
                                             const ValueFn& value, int n, int reference_size, RngStream& rng) {
    if (reference_size < n) throw std::invalid_argument("one_layer_discretization_error: reference must be at least sample-sized");
    const Eigen::MatrixXd xs = sample_latents(domain, n, rng);
    const Eigen::MatrixXd zs = sample_latents(domain, reference_size, rng);
    return one_layer_discretization_error_between(xs, zs, h, logit, value);
}

}  // namespace sizegen
