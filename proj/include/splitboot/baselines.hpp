#pragma once

// Reference tests: the overall-regression F-test, the sandwich Wald test on a
// full-sample stacked fit, and the Meinshausen-Buhlmann quantile aggregation
// of per-split p-values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/dataset.hpp"
#include "splitboot/distributions.hpp"
#include "splitboot/ee_core.hpp"
#include "splitboot/errors.hpp"
#include "splitboot/models/index_model.hpp"
#include "splitboot/parallel.hpp"
#include "splitboot/rng.hpp"
#include "splitboot/splitting.hpp"
#include "splitboot/stats.hpp"

namespace splitboot {

// ============================================================================
// F-test
// ============================================================================

struct FTestResult {
    double statistic = 0;
    double df1 = 0;
    double df2 = 0;
    double rss_null = 0;
    double rss_full = 0;
    double p = 1;
};

// Overall-regression F-test of H0: every coefficient of X is zero in
// Y = X b + e. With `intercept`, an intercept is fitted under both hypotheses
// and only the slopes are tested.
inline FTestResult f_test_detail(const Dataset& data, bool intercept = false) {
    const Eigen::Index n = data.size();
    const Eigen::Index p = data.x.cols();
    const Eigen::Index cols = p + (intercept ? 1 : 0);
    if (p < 1) throw std::invalid_argument("f_test: no covariates");
    if (n <= cols) throw InsufficientData(static_cast<std::size_t>(n), static_cast<std::size_t>(cols + 1));
    Eigen::MatrixXd design(n, cols);
    if (intercept) design.col(0).setOnes();
    design.rightCols(p) = data.x;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < cols) throw RankDeficientDesign(qr.rank(), cols);

    FTestResult r;
    const Eigen::VectorXd resid = data.y - design * qr.solve(data.y);
    r.rss_full = resid.squaredNorm();
    r.rss_null = intercept ? (data.y.array() - data.y.mean()).matrix().squaredNorm() : data.y.squaredNorm();
    r.df1 = static_cast<double>(p);
    r.df2 = static_cast<double>(n - cols);
    const double gain = std::max(r.rss_null - r.rss_full, 0.0);
    if (r.rss_full <= 1e-28 * std::max(r.rss_null, 1e-300)) {
        r.statistic = gain > 0 ? std::numeric_limits<double>::infinity() : 0;
        r.p = gain > 0 ? 0.0 : 1.0;
        return r;
    }
    r.statistic = (gain / r.df1) / (r.rss_full / r.df2);
    r.p = stats::f_upper_tail(r.statistic, r.df1, r.df2);
    return r;
}

inline double f_test(const Dataset& data, bool intercept = false) { return f_test_detail(data, intercept).p; }

// ============================================================================
// Wald test
// ============================================================================

struct WaldResult {
    double estimate = 0;
    double se = 0;
    double z = 0;
    double p = 1;
};

// Two-sided normal-reference test of beta[coefficient] = 0 from the
// full-sample stacked fit and its sandwich covariance.
inline WaldResult wald_test_detail(const StackedModel& model, const Dataset& data, Eigen::Index coefficient,
                                   const SolveOptions& opts = {}) {
    if (coefficient < 0 || coefficient >= model.dim_beta())
        throw std::invalid_argument("wald_test: coefficient index out of range");
    const StackedFit fit = solve_stacked(model, data, opts);
    WaldResult r;
    r.estimate = fit.beta[coefficient];
    if (r.estimate == 0) return r;
    const Eigen::MatrixXd cov = sandwich_covariance(model, data, fit);
    const Eigen::Index k = model.dim_theta() + coefficient;
    r.se = std::sqrt(std::max(cov(k, k), 0.0));
    if (!(r.se > 0)) {
        r.z = std::numeric_limits<double>::infinity();
        r.p = 0;
        return r;
    }
    r.z = r.estimate / r.se;
    r.p = stats::normal_two_sided_pvalue(r.z);
    return r;
}

inline double wald_test(const StackedModel& model, const Dataset& data, Eigen::Index coefficient,
                        const SolveOptions& opts = {}) {
    return wald_test_detail(model, data, coefficient, opts).p;
}

// ============================================================================
// Meinshausen-Buhlmann aggregation
// ============================================================================

// An empty grid evaluates the infimum over gamma in (gamma_min, 1) exactly.
struct MeinshausenOptions {
    double gamma_min = 0.05;
    std::vector<double> gamma_grid;

    void validate() const {
        if (!(gamma_min > 0 && gamma_min < 1)) throw std::invalid_argument("MeinshausenOptions: gamma_min must lie in (0, 1)");
        for (std::size_t i = 0; i < gamma_grid.size(); ++i) {
            const double g = gamma_grid[i];
            if (!(g > gamma_min && g < 1)) throw std::invalid_argument("MeinshausenOptions: grid must lie in (gamma_min, 1)");
            if (i > 0 && !(g > gamma_grid[i - 1])) throw std::invalid_argument("MeinshausenOptions: grid must increase");
        }
    }
};

// `points` log-spaced values strictly inside (gamma_min, 1).
inline std::vector<double> meinshausen_log_grid(double gamma_min, std::size_t points = 512) {
    if (!(gamma_min > 0 && gamma_min < 1)) throw std::invalid_argument("meinshausen_log_grid: gamma_min must lie in (0, 1)");
    if (points < 1) throw std::invalid_argument("meinshausen_log_grid: need at least one point");
    std::vector<double> g(points);
    const double lo = std::log(gamma_min);
    for (std::size_t k = 0; k < points; ++k)
        g[k] = std::exp(lo * (1.0 - static_cast<double>(k + 1) / static_cast<double>(points + 1)));
    return g;
}

// p = min(1, (1 - log gamma_min) inf_gamma Q(gamma) / gamma), with Q(gamma) the
// type-1 empirical gamma-quantile of p_b capped at 1.
//
// Q is constant on ((j-1)/B, j/B], so Q/gamma is smallest at the right end of
// each piece; the exact infimum is a minimum over order statistics, with the
// last piece approaching gamma = 1 from below.
inline double meinshausen_pvalue(std::span<const double> p_b, const MeinshausenOptions& opts = {}) {
    opts.validate();
    if (p_b.empty()) throw std::invalid_argument("meinshausen_pvalue: no p-values");
    std::vector<double> sorted(p_b.begin(), p_b.end());
    for (double v : sorted)
        if (!(v >= 0 && v <= 1)) throw std::invalid_argument("meinshausen_pvalue: p-values must lie in [0, 1]");
    std::sort(sorted.begin(), sorted.end());
    const auto b = static_cast<double>(sorted.size());

    double inf = std::numeric_limits<double>::infinity();
    if (opts.gamma_grid.empty()) {
        for (std::size_t j = 1; j <= sorted.size(); ++j) {
            const double right = static_cast<double>(j) / b;
            if (!(right > opts.gamma_min)) continue;
            inf = std::min(inf, std::min(1.0, sorted[j - 1]) / right);
        }
    } else {
        for (double g : opts.gamma_grid) inf = std::min(inf, std::min(1.0, stats::type1_quantile_sorted(sorted, g)) / g);
    }
    return std::min(1.0, (1.0 - std::log(opts.gamma_min)) * inf);
}

struct MeinshausenLevel {
    double level = 0;
    std::size_t rejections = 0;
    std::size_t reps = 0;
    double se() const { return std::sqrt(level * (1 - level) / static_cast<double>(reps)); }
};

// Null rejection frequency (p <= alpha) of the Meinshausen p-value built from
// B index-model split p-values, under Y = e with e ~ `law` and N(0, 1/2)
// covariates in three dimensions. Split t-tests, or z-tests with the error sd
// known when `known_sigma`.
inline MeinshausenLevel meinshausen_null_level(std::size_t splits, std::size_t n, std::size_t reps, Seed seed,
                                               double alpha = 0.05, int threads = 1,
                                               const ErrorDistribution& law = ErrorDistribution::normal(),
                                               bool known_sigma = false, const MeinshausenOptions& opts = {}) {
    if (reps < 1) throw std::invalid_argument("meinshausen_null_level: reps must be positive");
    const Eigen::Vector3d theta = Eigen::Vector3d::Ones() / std::sqrt(3.0);
    const IndexSplitTest test(3, known_sigma ? std::optional<double>(law.sd()) : std::nullopt);
    std::vector<char> reject(reps, 0);
    parallel_for(reps, threads, [&](std::size_t r) {
        const Dataset data = generate_level_power_data(static_cast<Eigen::Index>(n), theta, 0.0, law, derive_seed(seed, {r, 0}));
        const SplitPlan plan = make_split_plan(n, splits, 0.5, derive_seed(seed, {r, 1}), test.min_per_side());
        const PValueAggregate agg = detail::aggregate_bound(test.bind(data), plan, 1, false);
        std::vector<double> ok;
        ok.reserve(agg.successes);
        for (double p : agg.p_b)
            if (!std::isnan(p)) ok.push_back(p);
        reject[r] = meinshausen_pvalue(ok, opts) <= alpha;
    });
    MeinshausenLevel out;
    out.reps = reps;
    for (char c : reject) out.rejections += static_cast<std::size_t>(c);
    out.level = static_cast<double>(out.rejections) / static_cast<double>(reps);
    return out;
}

}  // namespace splitboot
