#pragma once

// Reference distributions, empirical CDFs and goodness-of-fit helpers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

namespace splitboot::stats {

// ============================================================================
// Reference p-values
// ============================================================================

inline double normal_two_sided_pvalue(double z) {
    if (std::isnan(z)) return std::numeric_limits<double>::quiet_NaN();
    return std::erfc(std::abs(z) / std::numbers::sqrt2);
}

// Two-sided Student-t p-value P(|T_df| >= |t|).
//
// Integer df up to 200 use the closed-form finite series for the t CDF
// (Abramowitz & Stegun 26.7.3/26.7.4). Everything else goes through Boost.
inline double t_two_sided_pvalue(double t, double df) {
    if (std::isnan(t) || !(df > 0)) return std::numeric_limits<double>::quiet_NaN();
    const double at = std::abs(t);
    if (std::isinf(at)) return 0.0;
    const double rounded = std::round(df);
    if (rounded == df && df <= 200) {
        const int nu = static_cast<int>(df);
        const double denom = df + at * at;
        const double c2 = df / denom;  // cos^2 of atan(t / sqrt(df))
        double a;                      // P(|T| <= t)
        if (nu % 2 == 0) {
            double term = 1.0, sum = 1.0;
            for (int k = 2; k <= nu - 2; k += 2) {
                term *= c2 * (k - 1) / k;
                sum += term;
            }
            a = at / std::sqrt(denom) * sum;
        } else {
            const double angle = std::atan(at / std::sqrt(df));
            if (nu == 1) {
                a = 2.0 * angle / std::numbers::pi;
            } else {
                double term = 1.0, sum = 1.0;
                for (int k = 3; k <= nu - 2; k += 2) {
                    term *= c2 * (k - 1) / k;
                    sum += term;
                }
                const double sin_cos = at * std::sqrt(df) / denom;
                a = 2.0 / std::numbers::pi * (angle + sin_cos * sum);
            }
        }
        return std::clamp(1.0 - a, 0.0, 1.0);
    }
    boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, at));
}

// Upper tail P(F_{d1,d2} >= f).
inline double f_upper_tail(double f, double d1, double d2) {
    if (std::isnan(f)) return std::numeric_limits<double>::quiet_NaN();
    if (f <= 0) return 1.0;
    if (std::isinf(f)) return 0.0;
    boost::math::fisher_f dist(d1, d2);
    return boost::math::cdf(boost::math::complement(dist, f));
}

// ============================================================================
// Empirical distribution helpers
// ============================================================================

// Fraction of `sample` strictly below x.
inline double ecdf_strict(std::span<const double> sample, double x) {
    if (sample.empty()) throw std::invalid_argument("ecdf_strict: empty sample");
    std::size_t count = 0;
    for (double v : sample) count += (v < x);
    return static_cast<double>(count) / static_cast<double>(sample.size());
}

// Right-continuous (type 1) sample quantile of an ascending sample:
// the smallest order statistic x_(k) with k/n >= gamma.
inline double type1_quantile_sorted(std::span<const double> sorted, double gamma) {
    if (sorted.empty()) throw std::invalid_argument("type1_quantile_sorted: empty sample");
    const double n = static_cast<double>(sorted.size());
    auto k = static_cast<std::size_t>(std::ceil(gamma * n - 1e-12 * n));
    k = std::clamp<std::size_t>(k, 1, sorted.size());
    return sorted[k - 1];
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("mean: empty sample");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Unbiased sample variance.
inline double variance(std::span<const double> v) {
    if (v.size() < 2) throw std::invalid_argument("variance: need at least two values");
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

// ============================================================================
// Kolmogorov-Smirnov
// ============================================================================

// One-sample KS statistic against Uniform[0,1].
inline double ks_uniform_statistic(std::vector<double> sample) {
    if (sample.empty()) throw std::invalid_argument("ks_uniform_statistic: empty sample");
    std::sort(sample.begin(), sample.end());
    const double n = static_cast<double>(sample.size());
    double d = 0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
        const double u = std::clamp(sample[i], 0.0, 1.0);
        d = std::max({d, (i + 1) / n - u, u - i / n});
    }
    return d;
}

inline double ks_two_sample_statistic(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(i / na - j / nb));
    }
    return d;
}

// Critical value of the one-sample KS statistic, Stephens' finite-n form.
// `c_alpha` is the asymptotic Kolmogorov quantile (1.6276 at the 1% level).
inline double ks_critical_one_sample(std::size_t n, double c_alpha = 1.6276) {
    const double rn = std::sqrt(static_cast<double>(n));
    return c_alpha / (rn + 0.12 + 0.11 / rn);
}

inline double ks_critical_two_sample(std::size_t n, std::size_t m, double c_alpha = 1.6276) {
    const double nn = static_cast<double>(n), mm = static_cast<double>(m);
    return c_alpha * std::sqrt((nn + mm) / (nn * mm));
}

}  // namespace splitboot::stats
