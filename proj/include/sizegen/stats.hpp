#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace sizegen {

enum class Statistic { mean, mean_plus_std, median };

inline double summarize(std::vector<double> values, Statistic stat) {
    if (values.empty()) throw std::invalid_argument("summarize: no values");
    const double n = static_cast<double>(values.size());
    switch (stat) {
        case Statistic::mean: {
            double s = 0.0;
            for (double v : values) s += v;
            return s / n;
        }
        case Statistic::mean_plus_std: {
            double s = 0.0;
            for (double v : values) s += v;
            const double mean = s / n;
            if (values.size() < 2) return mean;
            double ss = 0.0;
            for (double v : values) ss += (v - mean) * (v - mean);
            return mean + std::sqrt(ss / (n - 1.0));
        }
        case Statistic::median: {
            std::sort(values.begin(), values.end());
            const size_t mid = values.size() / 2;
            if (values.size() % 2 == 1) return values[mid];
            return 0.5 * (values[mid - 1] + values[mid]);
        }
    }
    throw std::logic_error("summarize: unknown statistic");
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double stderr_slope = 0.0;
    int points_used = 0;
};

// Ordinary least squares y = intercept + slope * x with the usual residual
// standard error on the slope (0 when the fit interpolates two points).
inline SlopeFit ols_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2) throw std::invalid_argument("ols_fit: need at least two points");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (std::abs(denom) < 1e-300) throw std::invalid_argument("ols_fit: degenerate abscissae");

    SlopeFit fit;
    fit.points_used = static_cast<int>(xs.size());
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    if (xs.size() > 2) {
        double ssr = 0.0;
        for (size_t i = 0; i < xs.size(); ++i) {
            const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
            ssr += r * r;
        }
        const double sxx_centered = sxx - sx * sx / n;
        fit.stderr_slope = std::sqrt(ssr / (n - 2.0) / sxx_centered);
    }
    return fit;
}

// Reference bound shape (H1 + H2 log n) n^(-1/(D+2)) + H3 n^(-rho) log n,
// natural logarithm. Used only to overlay a curve on sweep output.
inline double bound_curve(double h1, double h2, double h3, double rho, double d_chi, double n) {
    if (n < 2.0) throw std::invalid_argument("bound_curve: n must be >= 2");
    const double ln = std::log(n);
    return (h1 + h2 * ln) * std::pow(n, -1.0 / (d_chi + 2.0)) + h3 * std::pow(n, -rho) * ln;
}

}  // namespace sizegen
