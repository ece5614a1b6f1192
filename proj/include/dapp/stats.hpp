#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dapp::stats {

inline double mean(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean: empty sample");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double variance(const std::vector<double>& xs) {
    if (xs.size() < 2) throw std::invalid_argument("variance: need at least 2 samples");
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

inline double median(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("median: empty sample");
    std::sort(xs.begin(), xs.end());
    const std::size_t n = xs.size();
    return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014327;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Survival function of the Kolmogorov distribution, Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2).
inline double kolmogorov_sf(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-12 * std::abs(sum) + 1e-300) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample Kolmogorov-Smirnov test against a continuous CDF.
// Returns the approximate p-value (Stephens' finite-sample correction).
inline double ks_test(std::vector<double> xs, const std::function<double(double)>& cdf) {
    if (xs.empty()) throw std::invalid_argument("ks_test: empty sample");
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    const double sqn = std::sqrt(n);
    return kolmogorov_sf(d * (sqn + 0.12 + 0.11 / sqn));
}

// Two-sample Kolmogorov-Smirnov test; asymptotic p-value.
inline double ks_test_two_sample(std::vector<double> xs, std::vector<double> ys) {
    if (xs.empty() || ys.empty()) throw std::invalid_argument("ks_test_two_sample: empty sample");
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    const double n1 = static_cast<double>(xs.size());
    const double n2 = static_cast<double>(ys.size());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < xs.size() && j < ys.size()) {
        if (xs[i] <= ys[j])
            ++i;
        else
            ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }
    const double ne = std::sqrt(n1 * n2 / (n1 + n2));
    return kolmogorov_sf(d * (ne + 0.12 + 0.11 / ne));
}

namespace detail {

// Regularized upper incomplete gamma Q(a, x), series + continued fraction.
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    const double gln = std::lgamma(a);
    if (x < a + 1.0) {
        // lower series
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        return 1.0 - sum * std::exp(-x + a * std::log(x) - gln);
    }
    // upper continued fraction (Lentz)
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int n = 1; n < 500; ++n) {
        const double an = -n * (n - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - gln) * h;
}

}  // namespace detail

// Survival function of the chi-square distribution with k degrees of freedom.
inline double chi2_sf(double x, double k) { return detail::gamma_q(0.5 * k, 0.5 * x); }

// Pearson chi-square goodness-of-fit p-value for observed counts vs expected counts.
// Bins with expected < 5 are merged into their neighbor.
inline double chi2_gof(const std::vector<double>& observed, const std::vector<double>& expected,
                       int extra_constraints = 0) {
    if (observed.size() != expected.size() || observed.empty())
        throw std::invalid_argument("chi2_gof: size mismatch");
    std::vector<double> obs, exp;
    double po = 0.0, pe = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        po += observed[i];
        pe += expected[i];
        if (pe >= 5.0) {
            obs.push_back(po);
            exp.push_back(pe);
            po = pe = 0.0;
        }
    }
    if (pe > 0.0 && !exp.empty()) {
        obs.back() += po;
        exp.back() += pe;
    }
    if (exp.size() < 2) throw std::invalid_argument("chi2_gof: too few usable bins");
    double stat = 0.0;
    for (std::size_t i = 0; i < exp.size(); ++i) {
        const double diff = obs[i] - exp[i];
        stat += diff * diff / exp[i];
    }
    const double dof = static_cast<double>(exp.size()) - 1.0 - extra_constraints;
    if (dof < 1.0) throw std::invalid_argument("chi2_gof: nonpositive dof");
    return chi2_sf(stat, dof);
}

}  // namespace dapp::stats
