#pragma once

// Bernoulli(pi) sample-split plans and split-aggregated stacked estimates.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/ee_core.hpp"
#include "splitboot/errors.hpp"
#include "splitboot/parallel.hpp"
#include "splitboot/rng.hpp"

namespace splitboot {

inline constexpr int kMaxSplitAttempts = 1000;

using SplitRow = std::span<const std::uint8_t>;

// B x n matrix of inclusion indicators: 1 puts a record in the training set
// (stage one), 0 in the test set (stage two).
struct SplitPlan {
    std::size_t n = 0;
    std::size_t splits = 0;
    double pi = 0.5;
    Seed seed = 0;
    std::size_t min_per_side = 1;
    std::vector<std::uint8_t> indicators;  // row-major

    SplitRow row(std::size_t b) const { return {indicators.data() + b * n, n}; }
};

namespace detail {

inline std::size_t count_ones(SplitRow row) {
    std::size_t c = 0;
    for (auto v : row) c += v;
    return c;
}

// Fill one row with i.i.d. Bernoulli(pi) draws. pi = 1/2 reads raw bits.
inline void draw_split_row(Xoshiro256& rng, double pi, std::span<std::uint8_t> out) {
    if (pi == 0.5) {
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (i % 64 == 0) bits = rng();
            out[i] = static_cast<std::uint8_t>(bits & 1U);
            bits >>= 1;
        }
        return;
    }
    for (auto& v : out) v = rng.uniform() < pi ? 1 : 0;
}

}  // namespace detail

// Draw row b of a plan into `out`: substream (seed, b, attempt), redrawn until
// both sides hold at least `min_per_side` records.
inline void draw_valid_row(Seed seed, std::size_t b, double pi, std::size_t min_per_side, std::span<std::uint8_t> out) {
    const std::size_t n = out.size();
    for (int attempt = 0; attempt < kMaxSplitAttempts; ++attempt) {
        Xoshiro256 rng = substream(seed, {b, static_cast<std::uint64_t>(attempt)});
        detail::draw_split_row(rng, pi, out);
        const std::size_t ones = detail::count_ones(out);
        if (ones >= min_per_side && n - ones >= min_per_side) return;
    }
    throw DegenerateSplit("no valid row after " + std::to_string(kMaxSplitAttempts) + " attempts (n=" +
                          std::to_string(n) + ", min per side " + std::to_string(min_per_side) + ")");
}

inline SplitPlan make_split_plan(std::size_t n, std::size_t splits, double pi, Seed seed, std::size_t min_per_side = 1) {
    if (n < 4) throw std::invalid_argument("make_split_plan: n must be at least 4");
    if (splits < 1) throw std::invalid_argument("make_split_plan: need at least one split");
    if (!(pi > 0 && pi < 1)) throw std::invalid_argument("make_split_plan: pi must lie in (0, 1)");
    if (min_per_side < 1) min_per_side = 1;
    if (2 * min_per_side > n)
        throw DegenerateSplit("n=" + std::to_string(n) + " cannot hold " + std::to_string(min_per_side) + " records per side");
    SplitPlan plan{n, splits, pi, seed, min_per_side, std::vector<std::uint8_t>(n * splits)};
    for (std::size_t b = 0; b < splits; ++b)
        draw_valid_row(seed, b, pi, min_per_side, {plan.indicators.data() + b * n, n});
    return plan;
}

// Smallest per-side count that keeps both stages of `model` solvable.
inline std::size_t min_split_side(const StackedModel& model) {
    return static_cast<std::size_t>(std::max(model.dim_theta(), model.dim_beta())) + 1;
}

inline std::pair<std::vector<double>, std::vector<double>> split_weights(SplitRow row) {
    std::vector<double> in(row.size()), out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        in[i] = row[i] ? 1.0 : 0.0;
        out[i] = 1.0 - in[i];
    }
    return {std::move(in), std::move(out)};
}

inline void check_split_row(const StackedModel& model, const Dataset& data, SplitRow row) {
    if (static_cast<Eigen::Index>(row.size()) != data.size())
        throw std::invalid_argument("split row length differs from the sample size");
    const std::size_t ones = detail::count_ones(row);
    const std::size_t need = min_split_side(model);
    if (ones < need || row.size() - ones < need)
        throw DegenerateSplit(std::to_string(ones) + " of " + std::to_string(row.size()) +
                              " records in the training set; each side needs " + std::to_string(need));
}

struct SingleSplitFit {
    Eigen::VectorXd theta;      // plugged (normalized when requested)
    Eigen::VectorXd theta_raw;
    Eigen::VectorXd beta;
    SolveResult second;
};

// Stage one on the records with indicator 1, stage two on the rest.
inline SingleSplitFit single_split_estimate(const StackedModel& model, const Dataset& data, SplitRow row,
                                            const SolveOptions& opts = {}) {
    check_split_row(model, data, row);
    const auto [in, out] = split_weights(row);
    SingleSplitFit fit;
    StageFit s1 = fit_first_stage(model, data, in, opts);
    fit.theta_raw = std::move(s1.theta_raw);
    fit.theta = std::move(s1.theta);
    fit.second = fit_second_stage(model, data, out, fit.theta, opts);
    fit.beta = fit.second.param;
    return fit;
}

struct SplitFailure {
    std::size_t split;
    std::string error;
};

struct SplitEstimate {
    Eigen::MatrixXd theta_b;  // one row per split; failed rows hold NaN
    Eigen::MatrixXd beta_b;
    Eigen::VectorXd theta_bar;
    Eigen::VectorXd beta_bar;
    std::vector<SplitFailure> failures;
    std::size_t successes = 0;
};

// Runs every row of the plan and averages the successful splits in row order.
inline SplitEstimate multi_split_estimate(const StackedModel& model, const Dataset& data, const SplitPlan& plan,
                                          const SolveOptions& opts = {}, int threads = 1) {
    if (static_cast<Eigen::Index>(plan.n) != data.size()) throw std::invalid_argument("plan.n differs from data size");
    const Eigen::Index p = model.dim_theta(), q = model.dim_beta();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    SplitEstimate est;
    est.theta_b = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(plan.splits), p, nan);
    est.beta_b = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(plan.splits), q, nan);
    std::vector<std::string> errors(plan.splits);

    parallel_for(plan.splits, threads, [&](std::size_t b) {
        try {
            const SingleSplitFit f = single_split_estimate(model, data, plan.row(b), opts);
            est.theta_b.row(static_cast<Eigen::Index>(b)) = f.theta.transpose();
            est.beta_b.row(static_cast<Eigen::Index>(b)) = f.beta.transpose();
        } catch (const Error& e) {
            errors[b] = e.what();
        }
    });

    est.theta_bar = Eigen::VectorXd::Zero(p);
    est.beta_bar = Eigen::VectorXd::Zero(q);
    for (std::size_t b = 0; b < plan.splits; ++b) {
        if (!errors[b].empty()) {
            est.failures.push_back({b, errors[b]});
            continue;
        }
        est.theta_bar += est.theta_b.row(static_cast<Eigen::Index>(b)).transpose();
        est.beta_bar += est.beta_b.row(static_cast<Eigen::Index>(b)).transpose();
        ++est.successes;
    }
    if (est.successes == 0) throw AllSplitsFailed(plan.splits);
    est.theta_bar /= static_cast<double>(est.successes);
    est.beta_bar /= static_cast<double>(est.successes);
    return est;
}

// ============================================================================
// Variance of split-averaged estimators
// ============================================================================

// var(mu_hat) = sigma^2 / B * (1 + (B - 1) rho) for B equicorrelated split
// estimates with common variance sigma^2.
inline double split_variance(double sigma, double rho, double splits) {
    return sigma * sigma / splits * (1.0 + (splits - 1.0) * rho);
}

// Limit of split_variance as B grows.
inline double split_variance_limit(double sigma, double rho) { return sigma * sigma * rho; }

inline std::vector<std::pair<std::size_t, double>> split_variance_curve(double sigma, double rho,
                                                                        std::span<const std::size_t> splits) {
    if (!(sigma > 0)) throw std::invalid_argument("split_variance_curve: sigma must be positive");
    if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("split_variance_curve: rho must lie in [0, 1]");
    std::vector<std::pair<std::size_t, double>> curve;
    curve.reserve(splits.size());
    for (std::size_t b : splits) {
        if (b == 0) throw std::invalid_argument("split_variance_curve: B must be positive");
        curve.emplace_back(b, split_variance(sigma, rho, static_cast<double>(b)));
    }
    return curve;
}

// Exact moments of the split-mean estimator in the model Y_i = mu + e_i with
// var(e) = sigma^2, where each split averages its training records and rows
// are Bernoulli(pi) conditioned on both sides holding >= min_per_side records.
//   var(Ybar_b)             = sigma^2 E[1 / n_in]
//   cov(Ybar_b, Ybar_b')    = sigma^2 n E[delta_1 / n_in]^2
struct SplitMeanMoments {
    double split_variance;  // var(Ybar_b)
    double correlation;     // corr(Ybar_b, Ybar_b')
};

inline SplitMeanMoments split_mean_moments(std::size_t n, double pi, std::size_t min_per_side, double sigma = 1.0) {
    const double nd = static_cast<double>(n);
    double mass = 0, inv = 0, share = 0;
    for (std::size_t k = min_per_side; k + min_per_side <= n; ++k) {
        const double kd = static_cast<double>(k);
        const double logp = std::lgamma(nd + 1) - std::lgamma(kd + 1) - std::lgamma(nd - kd + 1) +
                            kd * std::log(pi) + (nd - kd) * std::log1p(-pi);
        const double pk = std::exp(logp);
        mass += pk;
        inv += pk / kd;
        share += pk * (kd / nd) / kd;  // E[delta_1 | n_in = k] / k
    }
    inv /= mass;
    share /= mass;
    const double var = sigma * sigma * inv;
    const double cov = sigma * sigma * nd * share * share;
    return {var, cov / var};
}

}  // namespace splitboot
