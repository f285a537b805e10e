#pragma once

// Shape-constrained logistic behaviour score.
//
//   logit pr(W = 1) = sum_j d_j (1 - 1 / (1 + (x_j / c_j)^b_j))      aerobic terms
//                   + theta_tv x_tv + theta_sit x_sit                  sedentary terms
//                   + theta_s1 sleep + theta_s2 sleep^2                sleep term
//                   + intercept + z' theta_z
//
// with b_j in (0, 1], c_j > 0, d_j >= 0, theta_tv, theta_sit, theta_s2 <= 0.
// The constraints are enforced by fitting unconstrained coordinates:
//   b = sigmoid(u), c = exp(u), d = exp(u), theta_tv = -v^2, theta_sit = -v^2,
//   theta_s2 = -v^2.
//
// Data layout: x = [aerobic_1 .. aerobic_L, sit_tv, sit_other, sleep],
// z = nuisance covariates, w = score-fitting outcome, y = downstream outcome.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/boot_test.hpp"
#include "splitboot/dataset.hpp"
#include "splitboot/ee_core.hpp"
#include "splitboot/errors.hpp"
#include "splitboot/rng.hpp"
#include "splitboot/splitting.hpp"

namespace splitboot {

// ============================================================================
// Model
// ============================================================================

// d (1 - 1 / (1 + (x / c)^b)) for x >= 0.
struct LogisticMarginal {
    double b = 0.5;
    double c = 1.0;
    double d = 1.0;

    double operator()(double x) const {
        if (x <= 0) return 0;
        const double r = std::pow(x / c, b);
        return d * r / (1 + r);
    }
};

struct ScoreModel {
    std::vector<LogisticMarginal> aerobic;
    double theta_tv = 0;
    double theta_sit = 0;
    double theta_sleep1 = 0;
    double theta_sleep2 = 0;
    double intercept = 0;
    Eigen::VectorXd theta_z;

    std::size_t logistic_terms() const { return aerobic.size(); }
    Eigen::Index dim_z() const { return theta_z.size(); }
    std::size_t dim_x() const { return aerobic.size() + 3; }
    std::size_t components() const { return aerobic.size() + 3; }

    // Marginal contribution of component j (aerobic terms, tv, sit, sleep).
    double marginal(std::size_t j, double x) const {
        const std::size_t l = aerobic.size();
        if (j < l) return aerobic[j](x);
        if (j == l) return theta_tv * x;
        if (j == l + 1) return theta_sit * x;
        if (j == l + 2) return theta_sleep1 * x + theta_sleep2 * x * x;
        throw std::out_of_range("ScoreModel::marginal: component index");
    }

    // Sum of the activity marginals; excludes intercept and z.
    double activity_predictor(std::span<const double> x) const {
        double eta = 0;
        for (std::size_t j = 0; j < components(); ++j) eta += marginal(j, x[j]);
        return eta;
    }

    double linear_predictor(std::span<const double> x, std::span<const double> z) const {
        double eta = activity_predictor(x) + intercept;
        for (Eigen::Index k = 0; k < theta_z.size(); ++k) eta += theta_z[k] * z[static_cast<std::size_t>(k)];
        return eta;
    }

    bool satisfies_constraints() const {
        for (const auto& m : aerobic)
            if (!(m.b > 0 && m.b <= 1 && m.c > 0 && m.d >= 0)) return false;
        return theta_tv <= 0 && theta_sit <= 0 && theta_sleep2 <= 0;
    }
};

// ============================================================================
// Unconstrained parameterization
// ============================================================================

namespace detail {

inline double sigmoid(double u) { return logistic_cdf(u); }
inline double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace detail

// Coordinates: (u_b, u_c, u_d) per aerobic term, v_tv, v_sit, theta_s1, v_s2,
// intercept, theta_z.
inline Eigen::Index score_param_dim(std::size_t logistic_terms, Eigen::Index dim_z) {
    return static_cast<Eigen::Index>(3 * logistic_terms) + 5 + dim_z;
}

inline ScoreModel score_model_from_params(const Eigen::VectorXd& u, std::size_t logistic_terms, Eigen::Index dim_z) {
    if (u.size() != score_param_dim(logistic_terms, dim_z)) throw std::invalid_argument("score parameter length mismatch");
    ScoreModel m;
    m.aerobic.resize(logistic_terms);
    Eigen::Index k = 0;
    for (auto& a : m.aerobic) {
        a.b = detail::sigmoid(u[k++]);
        a.c = std::exp(u[k++]);
        a.d = std::exp(u[k++]);
    }
    m.theta_tv = -u[k] * u[k];
    ++k;
    m.theta_sit = -u[k] * u[k];
    ++k;
    m.theta_sleep1 = u[k++];
    m.theta_sleep2 = -u[k] * u[k];
    ++k;
    m.intercept = u[k++];
    m.theta_z = u.segment(k, dim_z);
    return m;
}

// Inverse map. Boundary values b = 1 and d = 0 are pulled just inside the
// open parameter set.
inline Eigen::VectorXd score_params_from_model(const ScoreModel& m) {
    constexpr double tiny = 1e-12;
    Eigen::VectorXd u(score_param_dim(m.logistic_terms(), m.dim_z()));
    Eigen::Index k = 0;
    for (const auto& a : m.aerobic) {
        u[k++] = detail::logit(std::clamp(a.b, tiny, 1 - 1e-9));
        u[k++] = std::log(std::max(a.c, tiny));
        u[k++] = std::log(std::max(a.d, tiny));
    }
    u[k++] = std::sqrt(std::max(-m.theta_tv, 0.0));
    u[k++] = std::sqrt(std::max(-m.theta_sit, 0.0));
    u[k++] = m.theta_sleep1;
    u[k++] = std::sqrt(std::max(-m.theta_sleep2, 0.0));
    u[k++] = m.intercept;
    u.segment(k, m.dim_z()) = m.theta_z;
    return u;
}

namespace detail {

// Linear predictor, gradient and (optionally) Hessian in the unconstrained
// coordinates u, read directly from the parameter vector. Aerobic term:
// d sigmoid(t) with t = b (log x - u_c), b = sigmoid(u_b), d = exp(u_d).
inline double score_eta_derivs(const Eigen::VectorXd& u, std::size_t logistic_terms, std::span<const double> x,
                               std::span<const double> z, double* grad, Eigen::Ref<Eigen::MatrixXd>* hess) {
    Eigen::Index k = 0;
    double eta = 0;
    for (std::size_t j = 0; j < logistic_terms; ++j, k += 3) {
        const double xj = x[j];
        if (xj <= 0) {
            if (grad) grad[k] = grad[k + 1] = grad[k + 2] = 0;
            continue;
        }
        const double b = sigmoid(u[k]);
        const double d = std::exp(u[k + 2]);
        const double lr = std::log(xj) - u[k + 1];
        const double t = b * lr;
        const double sg = sigmoid(t);
        const double val = d * sg;
        eta += val;
        if (!grad) continue;
        const double s1 = sg * (1 - sg), s2 = s1 * (1 - 2 * sg);
        const double db = b * (1 - b);
        const double tb = lr * db, tc = -b;
        grad[k] = d * s1 * tb;
        grad[k + 1] = d * s1 * tc;
        grad[k + 2] = val;
        if (hess) {
            auto& h = *hess;
            h(k, k) = d * (s2 * tb * tb + s1 * lr * db * (1 - 2 * b));
            h(k, k + 1) = h(k + 1, k) = d * (s2 * tb * tc - s1 * db);
            h(k + 1, k + 1) = d * s2 * tc * tc;
            h(k, k + 2) = h(k + 2, k) = grad[k];
            h(k + 1, k + 2) = h(k + 2, k + 1) = grad[k + 1];
            h(k + 2, k + 2) = val;
        }
    }
    const std::size_t l = logistic_terms;
    const double tv = x[l], sit = x[l + 1], sleep = x[l + 2];
    const double v_tv = u[k], v_sit = u[k + 1], th_s1 = u[k + 2], v_s2 = u[k + 3];
    eta += -v_tv * v_tv * tv - v_sit * v_sit * sit + th_s1 * sleep - v_s2 * v_s2 * sleep * sleep + u[k + 4];
    if (grad) {
        grad[k] = -2 * v_tv * tv;
        grad[k + 1] = -2 * v_sit * sit;
        grad[k + 2] = sleep;
        grad[k + 3] = -2 * v_s2 * sleep * sleep;
        grad[k + 4] = 1;
        if (hess) {
            (*hess)(k, k) = -2 * tv;
            (*hess)(k + 1, k + 1) = -2 * sit;
            (*hess)(k + 3, k + 3) = -2 * sleep * sleep;
        }
    }
    k += 5;
    for (std::size_t q = 0; q < z.size(); ++q) {
        eta += u[k + static_cast<Eigen::Index>(q)] * z[q];
        if (grad) grad[k + static_cast<Eigen::Index>(q)] = z[q];
    }
    return eta;
}

}  // namespace detail

// Ridge term -(lambda / 2) |u_aerobic - anchor|^2 added to the mean
// log-likelihood. The 3-parameter logistic has flat likelihood ridges
// (d, c -> infinity with d / c^b fixed; b -> 0 with c -> infinity); the
// penalty keeps the maximizer finite.
struct ScorePenalty {
    double lambda = 0;
    Eigen::VectorXd anchor;  // length 3 L: (u_b, u_c, u_d) per aerobic term
};

// Anchor b = 1/2, d = 1, c = mean of the positive values of each aerobic column.
inline Eigen::VectorXd default_penalty_anchor(const Dataset& data, std::size_t logistic_terms) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * logistic_terms));
    for (std::size_t j = 0; j < logistic_terms; ++j) {
        double s = 0, c = 0;
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            const double v = data.x(i, static_cast<Eigen::Index>(j));
            if (v > 0) {
                s += v;
                ++c;
            }
        }
        a[static_cast<Eigen::Index>(3 * j + 1)] = std::log(c > 0 ? s / c : 1.0);
    }
    return a;
}

// Penalized logistic score equation (w - H(eta)) grad(eta) - lambda (u - anchor)
// of the constrained model in unconstrained coordinates, with the penalized
// log-likelihood as objective and the exact Jacobian
// -H'(eta) grad grad' + (w - H(eta)) hess(eta) - lambda I.
inline EstimatingEquation score_model_equation(std::size_t logistic_terms, Eigen::Index dim_z, ScorePenalty penalty = {}) {
    EstimatingEquation eq;
    const Eigen::Index dim = score_param_dim(logistic_terms, dim_z);
    const auto na = static_cast<Eigen::Index>(3 * logistic_terms);
    if (penalty.lambda < 0) throw std::invalid_argument("score penalty must be nonnegative");
    if (penalty.lambda > 0 && penalty.anchor.size() != na) throw std::invalid_argument("score penalty anchor length mismatch");
    if (penalty.lambda == 0) penalty.anchor = Eigen::VectorXd::Zero(na);
    const double lambda = penalty.lambda;
    const Eigen::VectorXd anchor = penalty.anchor;
    eq.dim_param = dim;
    eq.family = Family::generic;
    eq.evaluate = [logistic_terms, lambda, anchor, na](const RecordView& r, const Eigen::VectorXd& u,
                                                        Eigen::Ref<Eigen::VectorXd> out) {
        const double eta = detail::score_eta_derivs(u, logistic_terms, r.x, r.z, out.data(), nullptr);
        out *= r.w - logistic_cdf(eta);
        if (lambda > 0) out.head(na) -= lambda * (u.head(na) - anchor);
    };
    eq.jacobian = [logistic_terms, dim, lambda, na](const RecordView& r, const Eigen::VectorXd& u,
                                                     Eigen::Ref<Eigen::MatrixXd> out) {
        Eigen::VectorXd grad(dim);
        out.setZero();
        const double eta = detail::score_eta_derivs(u, logistic_terms, r.x, r.z, grad.data(), &out);
        const double p = logistic_cdf(eta);
        out *= r.w - p;
        out.noalias() -= (p * (1 - p)) * grad * grad.transpose();
        if (lambda > 0) out.diagonal().head(na).array() -= lambda;
    };
    eq.objective = [logistic_terms, lambda, anchor, na](const RecordView& r, const Eigen::VectorXd& u) {
        const double ll = logistic_loglik(r.w, detail::score_eta_derivs(u, logistic_terms, r.x, r.z, nullptr, nullptr));
        return lambda > 0 ? ll - 0.5 * lambda * (u.head(na) - anchor).squaredNorm() : ll;
    };
    // Sign-constrained slopes within 1e-3 of zero are set to the boundary.
    eq.snap = [na](Eigen::VectorXd& u) {
        bool changed = false;
        for (Eigen::Index k : {na, na + 1, na + 3}) {
            if (u[k] != 0 && std::abs(u[k]) < 1e-3) {
                u[k] = 0;
                changed = true;
            }
        }
        return changed;
    };
    return eq;
}

// ============================================================================
// Fitting
// ============================================================================

struct ScoreFitOptions {
    std::size_t logistic_terms = 5;
    double ridge = 1e-3;                    // penalty weight lambda on the aerobic coordinates
    std::optional<Eigen::VectorXd> anchor;  // penalty anchor; default_penalty_anchor(data) when unset
    SolveOptions solve{.max_iter = 500, .tol = 1e-8, .ridge_fallback = true};
    std::optional<Eigen::VectorXd> init;    // unconstrained start
};

inline ScorePenalty score_penalty(const Dataset& data, const ScoreFitOptions& opts) {
    if (opts.ridge == 0) return {};
    return {opts.ridge, opts.anchor ? *opts.anchor : default_penalty_anchor(data, opts.logistic_terms)};
}

struct ScoreFit {
    ScoreModel model;
    Eigen::VectorXd params;  // unconstrained
    SolveResult solve;
};

inline void check_score_layout(const Dataset& data, std::size_t logistic_terms) {
    if (static_cast<std::size_t>(data.x.cols()) != logistic_terms + 3)
        throw SchemaMismatch("score data needs " + std::to_string(logistic_terms + 3) + " activity columns, found " +
                             std::to_string(data.x.cols()));
    for (Eigen::Index i = 0; i < data.size(); ++i)
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(logistic_terms); ++j)
            if (data.x(i, j) < 0) throw std::invalid_argument("aerobic activity covariates must be nonnegative");
}

// Neutral start: mid-range logistic terms, small negative slopes, intercept at
// the logit of the outcome rate.
inline Eigen::VectorXd default_score_init(const Dataset& data, std::span<const double> weights, std::size_t logistic_terms) {
    const Eigen::Index k = data.z.cols();
    ScoreModel m;
    m.aerobic.resize(logistic_terms);
    double wsum = 0, total = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const double wt = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
        wsum += wt * data.w[i];
        total += wt;
    }
    for (std::size_t j = 0; j < logistic_terms; ++j) {
        double s = 0, c = 0;
        for (Eigen::Index i = 0; i < data.size(); ++i)
            if (data.x(i, static_cast<Eigen::Index>(j)) > 0) {
                s += data.x(i, static_cast<Eigen::Index>(j));
                ++c;
            }
        m.aerobic[j] = {0.5, c > 0 ? s / c : 1.0, 0.1};
    }
    m.theta_tv = m.theta_sit = -0.01;
    m.theta_sleep2 = -0.01;
    const Eigen::Index sleep_col = static_cast<Eigen::Index>(logistic_terms) + 2;
    m.theta_sleep1 = 2 * 0.01 * data.x.col(sleep_col).mean();
    const double rate = std::clamp(total > 0 ? wsum / total : 0.5, 0.01, 0.99);
    m.intercept = detail::logit(rate);
    m.theta_z = Eigen::VectorXd::Zero(k);
    return score_params_from_model(m);
}

// Maximum-likelihood fit on the records with positive weight.
inline ScoreFit fit_score_model(const Dataset& data, std::span<const double> weights, const ScoreFitOptions& opts = {}) {
    check_score_layout(data, opts.logistic_terms);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t used = 0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (!weights.empty() && !(weights[static_cast<std::size_t>(i)] > 0)) continue;
        lo = std::min(lo, data.w[i]);
        hi = std::max(hi, data.w[i]);
        ++used;
    }
    if (used == 0) throw InsufficientData(0, 1);
    if (lo == hi) throw SeparationDetected("outcome W is constant on the fitting records");

    const Eigen::Index k = data.z.cols();
    const EstimatingEquation eq = score_model_equation(opts.logistic_terms, k, score_penalty(data, opts));
    const Eigen::VectorXd init = opts.init ? *opts.init : default_score_init(data, weights, opts.logistic_terms);
    ScoreFit fit;
    fit.solve = solve_equation(eq, data, weights, init, opts.solve);
    fit.params = fit.solve.param;
    fit.model = score_model_from_params(fit.params, opts.logistic_terms, k);

    bool all_extreme = true;
    for (Eigen::Index i = 0; i < data.size() && all_extreme; ++i) {
        if (!weights.empty() && !(weights[static_cast<std::size_t>(i)] > 0)) continue;
        const RecordView r = data.record(i);
        const double p = logistic_cdf(fit.model.linear_predictor(r.x, r.z));
        all_extreme = p < 1e-8 || p > 1 - 1e-8;
    }
    if (all_extreme) throw SeparationDetected("fitted probabilities are within 1e-8 of 0 or 1 on every record");
    return fit;
}

inline ScoreFit fit_score_model(const Dataset& data, const ScoreFitOptions& opts = {}) {
    return fit_score_model(data, std::span<const double>{}, opts);
}

// ============================================================================
// 0-100 rescaling
// ============================================================================

struct CovariateRanges {
    std::vector<double> lo;
    std::vector<double> hi;
};

inline CovariateRanges activity_ranges(const Dataset& data) {
    if (data.size() < 1) throw InsufficientData(0, 1);
    CovariateRanges r;
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
        r.lo.push_back(data.x.col(j).minCoeff());
        r.hi.push_back(data.x.col(j).maxCoeff());
    }
    return r;
}

// Extremes of component j of `m` over [lo, hi].
inline std::pair<double, double> marginal_extremes(const ScoreModel& m, std::size_t j, double lo, double hi) {
    double a = m.marginal(j, lo), b = m.marginal(j, hi);
    double mn = std::min(a, b), mx = std::max(a, b);
    if (j == m.logistic_terms() + 2 && m.theta_sleep2 < 0) {
        const double vertex = -m.theta_sleep1 / (2 * m.theta_sleep2);
        if (vertex > lo && vertex < hi) mx = std::max(mx, m.marginal(j, vertex));
    }
    return {mn, mx};
}

// Score on 0-100: each marginal is shifted up by the magnitude of its minimum
// over the observed range (when negative); T is the sum of the shifted maxima.
struct RescaledScore {
    ScoreModel model;
    CovariateRanges ranges;
    std::vector<double> offsets;
    std::vector<double> maxima;      // shifted maxima; contribution ceiling is 100 maxima_j / T
    std::vector<bool> degenerate;    // constant marginal over its range; contributes 0
    double total = 0;                // T

    double contribution(std::size_t j, double x) const {
        if (degenerate[j]) return 0;
        return 100.0 / total * (model.marginal(j, x) + offsets[j]);
    }
    double max_contribution(std::size_t j) const { return degenerate[j] ? 0 : 100.0 * maxima[j] / total; }

    double operator()(std::span<const double> x) const {
        double s = 0;
        for (std::size_t j = 0; j < offsets.size(); ++j) s += contribution(j, x[j]);
        return s;
    }
};

inline RescaledScore rescale_score(const ScoreModel& model, const CovariateRanges& ranges) {
    const std::size_t comps = model.components();
    if (ranges.lo.size() != comps || ranges.hi.size() != comps)
        throw std::invalid_argument("rescale_score: range count differs from the number of components");
    RescaledScore s;
    s.model = model;
    s.ranges = ranges;
    s.offsets.assign(comps, 0);
    s.maxima.assign(comps, 0);
    s.degenerate.assign(comps, false);
    for (std::size_t j = 0; j < comps; ++j) {
        const auto [mn, mx] = marginal_extremes(model, j, ranges.lo[j], ranges.hi[j]);
        if (!(mx > mn)) {
            s.degenerate[j] = true;
            continue;
        }
        s.offsets[j] = std::max(0.0, -mn);
        s.maxima[j] = mx + s.offsets[j];
        s.total += s.maxima[j];
    }
    if (!(s.total > 0)) throw DegenerateRange("every marginal is constant over the observed covariate range");
    return s;
}

inline RescaledScore rescale_score(const ScoreModel& model, const Dataset& data) {
    return rescale_score(model, activity_ranges(data));
}

// ============================================================================
// Split test: score on D_in, logistic regression of Y on (score, 1, z) on D_out
// ============================================================================

inline StackedModel make_score_stacked_model(std::size_t logistic_terms, Eigen::Index dim_z, CovariateRanges ranges,
                                             Eigen::VectorXd warm_start = {}, ScorePenalty penalty = {}) {
    StackedModel m;
    m.first_stage = score_model_equation(logistic_terms, dim_z, std::move(penalty));
    m.theta_init = std::move(warm_start);
    m.normalize_theta = false;
    m.index_dim = 1;
    m.index_fn = [logistic_terms, dim_z, ranges = std::move(ranges)](std::span<const double> x, const Eigen::VectorXd& u,
                                                                      Eigen::Ref<Eigen::VectorXd> out) {
        out[0] = rescale_score(score_model_from_params(u, logistic_terms, dim_z), ranges)(x);
    };
    m.second_stage = logistic_regression(
        dim_z + 2,
        [dim_z](const RecordView& r, Eigen::Ref<Eigen::VectorXd> d) {
            d[0] = r.plug[0];
            d[1] = 1.0;
            for (Eigen::Index k = 0; k < dim_z; ++k) d[k + 2] = r.z[static_cast<std::size_t>(k)];
        },
        [](const RecordView& r) { return r.y; });
    m.tested_coefficient = 0;
    return m;
}

// Stage one refits the score on each training set, warm-started from the
// full-sample fit; ranges and penalty anchor come from the full-sample
// covariates.
class ScoreSplitTest {
public:
    explicit ScoreSplitTest(ScoreFitOptions opts = {}) : opts_(std::move(opts)) {}

    // Fix the warm start and ranges (e.g. shared by null replicates that keep X, W, Z).
    void prepare(const Dataset& data) {
        check_score_layout(data, opts_.logistic_terms);
        if (!opts_.anchor) opts_.anchor = default_penalty_anchor(data, opts_.logistic_terms);
        const ScoreFit full = fit_score_model(data, opts_);
        warm_start_ = full.params;
        ranges_ = activity_ranges(data);
    }

    std::size_t min_per_side() const { return opts_.logistic_terms * 3 + 8; }
    const ScoreFitOptions& options() const { return opts_; }

    class Bound {
    public:
        Bound(const ScoreSplitTest& test, const Dataset& data) : opts_(test.opts_.solve) {
            check_score_layout(data, test.opts_.logistic_terms);
            ScoreSplitTest prepared = test;
            if (!prepared.warm_start_) prepared.prepare(data);
            model_ = make_score_stacked_model(prepared.opts_.logistic_terms, data.z.cols(), *prepared.ranges_,
                                              *prepared.warm_start_, score_penalty(data, prepared.opts_));
            data_ = &data;
        }
        SplitOutcome operator()(SplitRow row) const { return per_split_pvalue(model_, *data_, row, opts_); }
        const StackedModel& model() const { return model_; }

    private:
        SolveOptions opts_;
        StackedModel model_;
        const Dataset* data_ = nullptr;
    };

    Bound bind(const Dataset& data) const { return Bound(*this, data); }

private:
    ScoreFitOptions opts_;
    std::optional<Eigen::VectorXd> warm_start_;
    std::optional<CovariateRanges> ranges_;
};

// Bootstrap test of beta0 = 0 in logit pr(Y = 1) = beta0 f(X; theta) + (1, z)'beta
// with f the rescaled score refitted on every training set. Null replicates
// redraw Y from the full-sample logistic fit on (1, z).
inline BootstrapTestReport downstream_logistic_test(const Dataset& data, std::size_t splits, std::size_t null_sims,
                                                    TestSeeds seeds, const ScoreFitOptions& opts = {},
                                                    const NullEngine& engine = ParametricBernoulli{}, double pi = 0.5,
                                                    int threads = 1) {
    ScoreSplitTest test(opts);
    test.prepare(data);
    return bootstrap_test(test, data, splits, null_sims, engine, pi, seeds, threads);
}

// ============================================================================
// Synthetic data
// ============================================================================

// Ground truth of the synthetic generator:
//   aerobic (b, c, d): vig (0.7, 5, 1.0), mod (0.8, 8, 1.2), light (0.6, 1.5, 0.3),
//                      mvpa (0.7, 3, 0.6), weights (0.8, 2, 0.4)
//   theta_tv = -0.15, theta_sit = -0.05, sleep (1.4, -0.1), intercept -5.5,
//   theta_z = (0.3, -0.2, 0, ...).
inline ScoreModel synthetic_score_truth(Eigen::Index dim_z = 2) {
    ScoreModel m;
    m.aerobic = {{0.7, 5, 1.0}, {0.8, 8, 1.2}, {0.6, 1.5, 0.3}, {0.7, 3, 0.6}, {0.8, 2, 0.4}};
    m.theta_tv = -0.15;
    m.theta_sit = -0.05;
    m.theta_sleep1 = 1.4;
    m.theta_sleep2 = -0.1;
    m.intercept = -5.5;
    m.theta_z = Eigen::VectorXd::Zero(dim_z);
    if (dim_z > 0) m.theta_z[0] = 0.3;
    if (dim_z > 1) m.theta_z[1] = -0.2;
    return m;
}

struct ScoreDataOptions {
    Eigen::Index dim_z = 2;
    // Downstream outcome: logit pr(Y = 1) = y_effect s + y_intercept + y_z' z, with s the true
    // rescaled score standardized to mean 0 and variance 1 within the sample, so y_effect is a
    // log odds ratio per standard deviation. y_effect = 0 gives Y independent of X given Z.
    double y_effect = 0;
    double y_intercept = 0;
    double y_z = 0.25;       // same coefficient on every z
    bool y_equals_w = false;
};

// Covariates: vig, weights are zero with probability 0.4, 0.6 and exponential
// (means 10, 3) otherwise; mod, light, mvpa exponential (means 15, 3, 5);
// sit_tv ~ U(0, 8); sit_other ~ U(0, 10); sleep ~ N(7, 1.2^2) clipped to [3, 12];
// z ~ N(0, 1). W ~ Bernoulli(H(truth)).
inline Dataset generate_score_data(std::size_t n, const ScoreModel& truth, Seed seed, const ScoreDataOptions& opts = {}) {
    if (n < 2) throw std::invalid_argument("generate_score_data: n must be at least 2");
    if (truth.logistic_terms() != 5) throw std::invalid_argument("generate_score_data: truth must have five aerobic terms");
    if (truth.dim_z() != opts.dim_z) throw std::invalid_argument("generate_score_data: truth z dimension differs");
    const auto rows = static_cast<Eigen::Index>(n);
    Xoshiro256 rng = substream(seed, {0x5c});
    std::exponential_distribution<double> unit_exp(1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::array<double, 5> zero_prob = {0.4, 0.0, 0.0, 0.0, 0.6};
    const std::array<double, 5> means = {10, 15, 3, 5, 3};

    Dataset d;
    d.x.resize(rows, 8);
    d.z.resize(rows, opts.dim_z);
    d.w.resize(rows);
    d.y.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < 5; ++j) {
            const bool zero = rng.uniform() < zero_prob[static_cast<std::size_t>(j)];
            const double v = means[static_cast<std::size_t>(j)] * unit_exp(rng);
            d.x(i, j) = zero ? 0.0 : v;
        }
        d.x(i, 5) = 8 * rng.uniform();
        d.x(i, 6) = 10 * rng.uniform();
        d.x(i, 7) = std::clamp(7 + 1.2 * normal(rng), 3.0, 12.0);
        for (Eigen::Index k = 0; k < opts.dim_z; ++k) d.z(i, k) = normal(rng);
    }
    const RescaledScore score = rescale_score(truth, activity_ranges(d));
    std::vector<double> s(n);
    for (Eigen::Index i = 0; i < rows; ++i) s[static_cast<std::size_t>(i)] = score(d.record(i).x);
    const double s_mean = stats::mean(s);
    const double s_sd = std::sqrt(stats::variance(s));
    for (double& v : s) v = s_sd > 0 ? (v - s_mean) / s_sd : 0.0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        const RecordView r = d.record(i);
        d.w[i] = rng.uniform() < logistic_cdf(truth.linear_predictor(r.x, r.z)) ? 1.0 : 0.0;
        double eta = opts.y_intercept + opts.y_effect * s[static_cast<std::size_t>(i)];
        for (Eigen::Index k = 0; k < opts.dim_z; ++k) eta += opts.y_z * d.z(i, k);
        const double y = rng.uniform() < logistic_cdf(eta) ? 1.0 : 0.0;
        d.y[i] = opts.y_equals_w ? d.w[i] : y;
    }
    return d;
}

}  // namespace splitboot
