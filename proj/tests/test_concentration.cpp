#include <catch2/catch_amalgamated.hpp>

#include "sizegen/concentration.hpp"
#include "sizegen/stats.hpp"

using namespace sizegen;

TEST_CASE("greedy packing on a dense grid anchored at zero", "[concentration]") {
    const int g = 2001;
    Eigen::MatrixXd probes(g, 1);
    for (int i = 0; i < g; ++i) probes(i, 0) = static_cast<double>(i) / (g - 1);
    const Covering cov = build_covering_from_probes(probes, 0.25);
    REQUIRE(cov.cells() == 5);
    for (int c = 0; c < 5; ++c) REQUIRE(cov.centers(c, 0) == Catch::Approx(0.25 * c).margin(1e-12));
    // five Voronoi cells of equal mass except the boundary ones
    REQUIRE(cov.cell_masses.sum() == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("radius beyond the domain diameter gives a single full cell", "[concentration]") {
    RngStream rng(1);
    const Covering cov = build_covering(DomainSpec::Graphon(GraphonKernel::Constant(0.5)), 5.0, 5000, rng);
    REQUIRE(cov.cells() == 1);
    REQUIRE(cov.cell_masses(0) == 1.0);
}

TEST_CASE("centers are pairwise separated by at least r", "[concentration]") {
    RngStream rng(2);
    for (double r : {0.07, 0.2}) {
        const Covering cov = build_covering(DomainSpec::Graphon(GraphonKernel::Constant(0.5)), r, 20000, rng);
        for (int a = 0; a < cov.cells(); ++a)
            for (int b = a + 1; b < cov.cells(); ++b)
                REQUIRE((cov.centers.row(a) - cov.centers.row(b)).norm() >= r);
        // cell-count bound from the covering lemma with the unit interval's
        // regularity constants C = 2, D = 1
        REQUIRE(cov.cells() <= static_cast<int>(std::ceil(2.0 / r)));
    }
}

TEST_CASE("event check trivial cases", "[concentration]") {
    Covering cov;
    cov.radius = 0.25;
    cov.centers.resize(2, 1);
    cov.centers << 0.25, 0.75;
    cov.cell_masses.resize(2);
    cov.cell_masses << 0.5, 0.5;

    Eigen::MatrixXd balanced(4, 1);
    balanced << 0.1, 0.2, 0.6, 0.9;
    const EventCheck even = concentration_event_check(balanced, cov, 1.0, 2.0, 1.0);
    REQUIRE(even.max_deviation == 0.0);
    REQUIRE(even.holds);

    Eigen::MatrixXd lopsided(4, 1);
    lopsided << 0.1, 0.2, 0.3, 0.4;
    const EventCheck lop = concentration_event_check(lopsided, cov, 1.0, 2.0, 1.0);
    REQUIRE(lop.max_deviation == Catch::Approx(1.0));

    cov.cell_masses(1) = 0.0;
    REQUIRE_THROWS_AS(concentration_event_check(balanced, cov, 1.0, 2.0, 1.0), std::runtime_error);
}

TEST_CASE("failure frequency is monotone non-increasing in tau", "[concentration]") {
    RngStream rng(3);
    const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));
    const int n = 400;
    const double r = std::pow(n, -1.0 / 3.0);
    const Covering cov = build_covering(domain, r, 200000, rng);

    const std::vector<double> taus = {0.5, 1.0, 2.0, 4.0};
    std::vector<int> failures(taus.size(), 0);
    for (int trial = 0; trial < 200; ++trial) {
        RngStream trng(derive_seed(77, static_cast<uint64_t>(trial)));
        const Eigen::MatrixXd latents = sample_latents(domain, n, trng);
        const EventCheck ev = concentration_event_check(latents, cov, 1.0, 2.0, 1.0);
        for (size_t t = 0; t < taus.size(); ++t) {
            const double threshold = std::sqrt(2.0) * std::pow(n, -1.0 / 3.0) * taus[t];
            if (ev.max_deviation > threshold) ++failures[t];
        }
    }
    for (size_t t = 1; t < taus.size(); ++t) REQUIRE(failures[t] <= failures[t - 1]);
}

TEST_CASE("regularity estimate recovers the unit interval constants", "[concentration]") {
    RngStream rng(4);
    const std::vector<double> radii = {0.05, 0.08, 0.12, 0.2, 0.3, 0.5};
    const RegularityEstimate est =
        estimate_regularity(DomainSpec::Graphon(GraphonKernel::Constant(0.5)), radii, 20000, rng);
    // analytic worst case mu(B_{r/2}(0)) = r/2, so C = 2 and D = 1
    REQUIRE(est.d_chi == Catch::Approx(1.0).margin(0.1));
    REQUIRE(est.c_chi >= 1.8);
    REQUIRE(est.c_chi <= 2.5);
}

TEST_CASE("regularity estimate sees the sphere as two-dimensional", "[concentration]") {
    RngStream rng(5);
    const std::vector<double> radii = {0.4, 0.6, 0.9, 1.3};
    const RegularityEstimate est = estimate_regularity(DomainSpec::Sphere(1.0), radii, 50000, rng);
    REQUIRE(est.d_chi == Catch::Approx(2.0).margin(0.2));
}

TEST_CASE("regularity estimation rejects degenerate setups", "[concentration]") {
    RngStream rng(6);
    const DomainSpec interval = DomainSpec::Graphon(GraphonKernel::Constant(0.5));
    REQUIRE_THROWS_AS(estimate_regularity(interval, {0.1, 0.2}, 100, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(estimate_regularity(interval, {0.0, 0.2}, 5000, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(estimate_regularity(interval, {0.1}, 5000, rng), std::invalid_argument);
    // every ball swallows the whole (near-)point domain: all masses 1
    REQUIRE_THROWS_AS(estimate_regularity(DomainSpec::Sphere(1e-12), {0.1, 0.2, 0.4}, 5000, rng),
                      std::runtime_error);
}

TEST_CASE("one-layer discretization error vanishes in degenerate cases", "[concentration]") {
    const HiddenFn h_const = [](const Eigen::RowVectorXd&) { return Eigen::VectorXd::Ones(1); };
    const HiddenFn h_id = [](const Eigen::RowVectorXd& x) { return Eigen::VectorXd::Constant(1, x(0)); };
    const PairLogitFn dot = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b); };
    const ValueFn identity = [](const Eigen::VectorXd& v) { return v; };

    RngStream rng(7);
    const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));
    REQUIRE(one_layer_discretization_error(domain, h_const, dot, identity, 50, 500, rng) == 0.0);

    const Eigen::MatrixXd xs = sample_latents(domain, 40, rng);
    REQUIRE(one_layer_discretization_error_between(xs, xs, h_id, dot, identity) == 0.0);

    RngStream bad(8);
    REQUIRE_THROWS_AS(one_layer_discretization_error(domain, h_id, dot, identity, 100, 50, bad),
                      std::invalid_argument);
}

TEST_CASE("one-layer discretization error shrinks with n", "[concentration]") {
    const HiddenFn h_id = [](const Eigen::RowVectorXd& x) { return Eigen::VectorXd::Constant(1, x(0)); };
    const PairLogitFn dot = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b); };
    const ValueFn identity = [](const Eigen::VectorXd& v) { return v; };
    const DomainSpec domain = DomainSpec::Graphon(GraphonKernel::Constant(0.5));

    auto median_error = [&](int n) {
        std::vector<double> errs;
        for (int rep = 0; rep < 9; ++rep) {
            RngStream rng(derive_seed(99, static_cast<uint64_t>(n), static_cast<uint64_t>(rep)));
            errs.push_back(one_layer_discretization_error(domain, h_id, dot, identity, n, 8000, rng));
        }
        return summarize(errs, Statistic::median);
    };
    const double e100 = median_error(100);
    const double e400 = median_error(400);
    const double e1600 = median_error(1600);
    REQUIRE(e400 < e100);
    REQUIRE(e1600 < e400);
}
