#pragma once

// Estimating equations, a damped Newton root finder with finite-difference
// Jacobians, modified-Newton ascent for equations with an objective, and
// sequential solution of stacked two-stage systems.
//
// An estimating equation is a per-record score Psi(record; param). Its
// M-estimator is the root of the weighted mean score
//
//     g(param) = sum_i w_i Psi(record_i; param) / sum_i w_i.
//
// A stacked model pairs a first-stage equation for theta with a second-stage
// equation for beta that sees theta (or an index f(X; theta)) through the
// record's `plug` field.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/dataset.hpp"
#include "splitboot/errors.hpp"

namespace splitboot {

using ScoreFn = std::function<void(const RecordView&, const Eigen::VectorXd&, Eigen::Ref<Eigen::VectorXd>)>;
// Per-record derivative of the score with respect to the parameter.
using JacobianFn = std::function<void(const RecordView&, const Eigen::VectorXd&, Eigen::Ref<Eigen::MatrixXd>)>;
using DesignFn = std::function<void(const RecordView&, Eigen::Ref<Eigen::VectorXd>)>;
using ResponseFn = std::function<double(const RecordView&)>;
using IndexFn = std::function<void(std::span<const double> x, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out)>;
// Per-record objective whose gradient is the score (e.g. a log-likelihood).
using ObjectiveFn = std::function<double(const RecordView&, const Eigen::VectorXd&)>;
// Moves a parameter onto a constraint boundary in place; returns false when
// nothing changed.
using SnapFn = std::function<bool(Eigen::VectorXd&)>;

enum class Family { generic, linear_least_squares, logistic };

struct EstimatingEquation {
    Eigen::Index dim_param = 0;
    ScoreFn evaluate;
    JacobianFn jacobian;  // optional; finite differences otherwise
    // Optional. When set the root is found as a maximizer of the mean
    // objective: modified Newton ascent with an Armijo line search.
    ObjectiveFn objective;
    // Optional, used with `objective`: tried after every accepted step and
    // kept when the objective does not decrease.
    SnapFn snap;
    Family family = Family::generic;
    // Set for the linear and logistic families: score = d (r - mean(d'param)).
    DesignFn design;
    ResponseFn response;
};

// Least-squares score d (r - d'b); solved in closed form by normal equations.
inline EstimatingEquation linear_least_squares(Eigen::Index dim, DesignFn design, ResponseFn response) {
    EstimatingEquation eq;
    eq.dim_param = dim;
    eq.family = Family::linear_least_squares;
    eq.design = design;
    eq.response = response;
    eq.evaluate = [design, response, dim](const RecordView& rec, const Eigen::VectorXd& b, Eigen::Ref<Eigen::VectorXd> out) {
        Eigen::VectorXd d(dim);
        design(rec, d);
        out = d * (response(rec) - d.dot(b));
    };
    eq.jacobian = [design, dim](const RecordView& rec, const Eigen::VectorXd&, Eigen::Ref<Eigen::MatrixXd> out) {
        Eigen::VectorXd d(dim);
        design(rec, d);
        out.noalias() = -d * d.transpose();
    };
    return eq;
}

inline double logistic_cdf(double eta) noexcept {
    return eta >= 0 ? 1.0 / (1.0 + std::exp(-eta)) : std::exp(eta) / (1.0 + std::exp(eta));
}

// r eta - log(1 + e^eta), the Bernoulli log-likelihood in its logit.
inline double logistic_loglik(double r, double eta) noexcept {
    const double softplus = eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    return r * eta - softplus;
}

// Logistic-regression score d (r - H(d'b)) with its exact Jacobian.
inline EstimatingEquation logistic_regression(Eigen::Index dim, DesignFn design, ResponseFn response) {
    EstimatingEquation eq;
    eq.dim_param = dim;
    eq.family = Family::logistic;
    eq.design = design;
    eq.response = response;
    eq.evaluate = [design, response, dim](const RecordView& rec, const Eigen::VectorXd& b, Eigen::Ref<Eigen::VectorXd> out) {
        Eigen::VectorXd d(dim);
        design(rec, d);
        out = d * (response(rec) - logistic_cdf(d.dot(b)));
    };
    eq.jacobian = [design, dim](const RecordView& rec, const Eigen::VectorXd& b, Eigen::Ref<Eigen::MatrixXd> out) {
        Eigen::VectorXd d(dim);
        design(rec, d);
        const double p = logistic_cdf(d.dot(b));
        out.noalias() = -(p * (1 - p)) * d * d.transpose();
    };
    eq.objective = [design, response, dim](const RecordView& rec, const Eigen::VectorXd& b) {
        Eigen::VectorXd d(dim);
        design(rec, d);
        return logistic_loglik(response(rec), d.dot(b));
    };
    return eq;
}

struct SolveOptions {
    int max_iter = 100;
    double tol = 1e-10;          // sup-norm of the mean equation at convergence
    double damping = 1.0;        // initial Newton step fraction, halved on backtracking
    int max_halvings = 40;
    double jacobian_step = 1e-6; // relative forward-difference step
    // Replace singular Newton systems by a ridge-regularised step instead of
    // throwing SingularJacobian. Used for flat likelihood directions.
    bool ridge_fallback = false;
};

struct SolveResult {
    Eigen::VectorXd param;
    Eigen::VectorXd init;  // the initialization the reported root was reached from
    int iterations = 0;
    double residual = 0;   // sup-norm of the mean equation at `param`
    bool closed_form = false;
};

// ============================================================================
// Weighted record selection
// ============================================================================

namespace detail {

struct Selection {
    std::vector<Eigen::Index> index;
    std::vector<double> weight;
    double total = 0;
};

inline Selection select_records(Eigen::Index n, std::span<const double> weights) {
    Selection s;
    if (!weights.empty() && static_cast<Eigen::Index>(weights.size()) != n)
        throw std::invalid_argument("weights length " + std::to_string(weights.size()) + " != n " + std::to_string(n));
    s.index.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(i)];
        if (wi < 0 || !std::isfinite(wi)) throw std::invalid_argument("weights must be finite and nonnegative");
        if (wi == 0) continue;
        s.index.push_back(i);
        s.weight.push_back(wi);
        s.total += wi;
    }
    return s;
}

// Records of `data` restricted to a selection, with optional plug rows.
class BoundRecords {
public:
    BoundRecords(const Dataset& data, const Selection& sel, const RowMatrix* plugs)
        : data_(data), sel_(sel), plugs_(plugs) {}

    std::size_t size() const noexcept { return sel_.index.size(); }
    double weight(std::size_t k) const noexcept { return sel_.weight[k]; }
    double total_weight() const noexcept { return sel_.total; }

    RecordView operator[](std::size_t k) const noexcept {
        const Eigen::Index i = sel_.index[k];
        RecordView r = data_.record(i);
        if (plugs_ != nullptr && plugs_->cols() > 0)
            r.plug = {plugs_->data() + i * plugs_->cols(), static_cast<std::size_t>(plugs_->cols())};
        return r;
    }

private:
    const Dataset& data_;
    const Selection& sel_;
    const RowMatrix* plugs_;
};

inline Eigen::VectorXd mean_equation(const EstimatingEquation& eq, const BoundRecords& recs, const Eigen::VectorXd& param) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(eq.dim_param);
    Eigen::VectorXd psi(eq.dim_param);
    for (std::size_t k = 0; k < recs.size(); ++k) {
        eq.evaluate(recs[k], param, psi);
        sum += recs.weight(k) * psi;
    }
    return sum / recs.total_weight();
}

inline Eigen::MatrixXd mean_jacobian(const EstimatingEquation& eq, const BoundRecords& recs, const Eigen::VectorXd& param,
                                     const Eigen::VectorXd& g0, double rel_step) {
    const Eigen::Index p = eq.dim_param;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(p, p);
    if (eq.jacobian) {
        Eigen::MatrixXd one(p, p);
        for (std::size_t k = 0; k < recs.size(); ++k) {
            eq.jacobian(recs[k], param, one);
            jac += recs.weight(k) * one;
        }
        return jac / recs.total_weight();
    }
    Eigen::VectorXd shifted = param;
    for (Eigen::Index j = 0; j < p; ++j) {
        const double h = rel_step * std::max(std::abs(param[j]), 1.0);
        shifted[j] = param[j] + h;
        jac.col(j) = (mean_equation(eq, recs, shifted) - g0) / h;
        shifted[j] = param[j];
    }
    return jac;
}

inline bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

inline SolveResult newton(const EstimatingEquation& eq, const BoundRecords& recs, const Eigen::VectorXd& init,
                          const SolveOptions& opts, int iterations_used = 0) {
    const Eigen::Index p = eq.dim_param;
    Eigen::VectorXd start = init;
    bool restarted = false;

    for (;;) {
        Eigen::VectorXd theta = start;
        Eigen::VectorXd g = mean_equation(eq, recs, theta);
        Eigen::VectorXd best = theta;
        double best_res = all_finite(g) ? g.lpNorm<Eigen::Infinity>() : std::numeric_limits<double>::infinity();
        bool diverged = !all_finite(g);
        int it = iterations_used;

        while (!diverged && it < opts.max_iter) {
            const double res = g.lpNorm<Eigen::Infinity>();
            if (res <= opts.tol) return {theta, start, it, res, false};
            ++it;

            const Eigen::MatrixXd jac = mean_jacobian(eq, recs, theta, g, opts.jacobian_step);
            if (!jac.allFinite()) {
                diverged = true;
                break;
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
            Eigen::VectorXd step;
            if (lu.rank() == p) {
                step = lu.solve(-g);
            } else if (opts.ridge_fallback) {
                const Eigen::MatrixXd jtj = jac.transpose() * jac;
                const double lambda = 1e-8 * std::max(jtj.trace() / static_cast<double>(p), 1e-300);
                step = (jtj + lambda * Eigen::MatrixXd::Identity(p, p)).ldlt().solve(-jac.transpose() * g);
            } else {
                throw SingularJacobian();
            }

            const double merit = g.norm();
            double frac = opts.damping;
            bool accepted = false;
            for (int h = 0; h <= opts.max_halvings; ++h, frac *= 0.5) {
                Eigen::VectorXd trial = theta + frac * step;
                Eigen::VectorXd gt = mean_equation(eq, recs, trial);
                if (all_finite(gt) && gt.norm() < merit) {
                    theta = std::move(trial);
                    g = std::move(gt);
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                // Newton direction is not a descent direction for |g|; try the
                // steepest-descent direction of |g|^2 before giving up.
                Eigen::VectorXd grad = jac.transpose() * g;
                const double gn = grad.squaredNorm();
                if (gn > 0) {
                    double frac2 = g.squaredNorm() / gn;
                    for (int h = 0; h <= opts.max_halvings; ++h, frac2 *= 0.5) {
                        Eigen::VectorXd trial = theta - frac2 * grad;
                        Eigen::VectorXd gt = mean_equation(eq, recs, trial);
                        if (all_finite(gt) && gt.norm() < merit) {
                            theta = std::move(trial);
                            g = std::move(gt);
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            if (!accepted) break;
            const double r = g.lpNorm<Eigen::Infinity>();
            if (r < best_res) {
                best_res = r;
                best = theta;
            }
        }
        if (!diverged && all_finite(g) && g.lpNorm<Eigen::Infinity>() <= opts.tol)
            return {theta, start, it, g.lpNorm<Eigen::Infinity>(), false};

        // Divergence: one restart from the zero vector.
        if (diverged && !restarted && !start.isZero()) {
            restarted = true;
            start = Eigen::VectorXd::Zero(p);
            continue;
        }
        throw NonConvergence(best, it, best_res);
    }
}

inline double mean_objective(const EstimatingEquation& eq, const BoundRecords& recs, const Eigen::VectorXd& param) {
    double sum = 0;
    for (std::size_t k = 0; k < recs.size(); ++k) sum += recs.weight(k) * eq.objective(recs[k], param);
    return sum / recs.total_weight();
}

// Maximizes the mean objective. Each step is s = V |E|^-1 V' g from the
// eigendecomposition V E V' of H = -J symmetrized, then backtracks to an
// Armijo increase. Converges when |g| <= tol or, at a concave point, when the
// Newton decrement reaches the rounding level, after which full Newton steps run
// while they reduce |g|.
inline SolveResult ascent(const EstimatingEquation& eq, const BoundRecords& recs, const Eigen::VectorXd& init,
                          const SolveOptions& opts) {
    const Eigen::Index p = eq.dim_param;
    Eigen::VectorXd theta = init;
    double f = mean_objective(eq, recs, theta);
    Eigen::VectorXd g = mean_equation(eq, recs, theta);
    if (!std::isfinite(f) || !all_finite(g)) throw NonConvergence(init, 0, std::numeric_limits<double>::infinity());
    Eigen::VectorXd best = theta;
    double best_res = g.lpNorm<Eigen::Infinity>();

    int it = 0;
    while (it < opts.max_iter) {
        const double res = g.lpNorm<Eigen::Infinity>();
        if (res <= opts.tol) return {theta, init, it, res, false};
        ++it;

        const Eigen::MatrixXd jac = mean_jacobian(eq, recs, theta, g, opts.jacobian_step);
        if (!jac.allFinite()) break;
        // Modified Newton step: eigenvalues of the negated Hessian replaced
        // by their absolute values (floored), so directions of positive
        // curvature are ascended at Newton scale.
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-(jac + jac.transpose()) / 2);
        if (es.info() != Eigen::Success) break;
        Eigen::VectorXd ev = es.eigenvalues();
        const double floor_ev = 1e-10 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
        const bool concave = ev.minCoeff() > floor_ev;
        for (Eigen::Index k = 0; k < p; ++k) ev[k] = std::max(std::abs(ev[k]), floor_ev);
        const Eigen::VectorXd step = es.eigenvectors() * ((es.eigenvectors().transpose() * g).array() / ev.array()).matrix();
        if (!step.allFinite()) break;

        // Newton decrement near the rounding level of the objective: the line
        // search can no longer see an increase, so take the full Newton step
        // while it reduces the equation norm and stop when it does not.
        const double slope = g.dot(step);
        if (concave && slope <= 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f))) {
            Eigen::VectorXd trial = theta + step;
            Eigen::VectorXd gt = mean_equation(eq, recs, trial);
            if (!all_finite(gt) || gt.lpNorm<Eigen::Infinity>() >= res) return {theta, init, it, res, false};
            theta = std::move(trial);
            g = std::move(gt);
            f = mean_objective(eq, recs, theta);
            continue;
        }
        double frac = opts.damping;
        bool accepted = false;
        for (int k = 0; k <= opts.max_halvings; ++k, frac *= 0.5) {
            Eigen::VectorXd trial = theta + frac * step;
            const double ft = mean_objective(eq, recs, trial);
            if (std::isfinite(ft) && ft >= f + 1e-4 * frac * slope) {
                Eigen::VectorXd gt = mean_equation(eq, recs, trial);
                if (!all_finite(gt)) continue;
                theta = std::move(trial);
                g = std::move(gt);
                f = ft;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;
        if (eq.snap) {
            Eigen::VectorXd snapped = theta;
            if (eq.snap(snapped)) {
                const double fs = mean_objective(eq, recs, snapped);
                if (std::isfinite(fs) && fs >= f) {
                    Eigen::VectorXd gs = mean_equation(eq, recs, snapped);
                    if (all_finite(gs)) {
                        theta = std::move(snapped);
                        g = std::move(gs);
                        f = fs;
                    }
                }
            }
        }
        const double r = g.lpNorm<Eigen::Infinity>();
        if (r < best_res) {
            best_res = r;
            best = theta;
        }
    }
    const double res = g.lpNorm<Eigen::Infinity>();
    if (res <= opts.tol) return {theta, init, it, res, false};
    throw NonConvergence(best, it, best_res);
}

inline SolveResult solve_selected(const EstimatingEquation& eq, const Dataset& data, const Selection& sel,
                                  const RowMatrix* plugs, const Eigen::VectorXd& init, const SolveOptions& opts) {
    const Eigen::Index p = eq.dim_param;
    if (p <= 0) throw std::invalid_argument("estimating equation has no parameters");
    if (init.size() != p) throw std::invalid_argument("init has length " + std::to_string(init.size()) + ", expected " + std::to_string(p));
    if (static_cast<Eigen::Index>(sel.index.size()) < p) throw InsufficientData(sel.index.size(), static_cast<std::size_t>(p));

    BoundRecords recs(data, sel, plugs);
    if (eq.family == Family::linear_least_squares) {
        Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
        Eigen::VectorXd d(p);
        for (std::size_t k = 0; k < recs.size(); ++k) {
            const RecordView r = recs[k];
            eq.design(r, d);
            xtx.selfadjointView<Eigen::Lower>().rankUpdate(d, recs.weight(k));
            xty += recs.weight(k) * eq.response(r) * d;
        }
        xtx = xtx.selfadjointView<Eigen::Lower>();
        Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
        if (lu.rank() < p) throw SingularJacobian();
        Eigen::VectorXd b = lu.solve(xty);
        const Eigen::VectorXd g = mean_equation(eq, recs, b);
        const double res = g.lpNorm<Eigen::Infinity>();
        if (res <= opts.tol) return {b, init, 0, res, true};
        SolveResult refined = newton(eq, recs, b, opts);
        refined.init = init;
        return refined;
    }
    if (eq.objective) return ascent(eq, recs, init, opts);
    return newton(eq, recs, init, opts);
}

}  // namespace detail

// Solve the (weighted) mean estimating equation from `init`.
// `weights` is empty (all ones) or one nonnegative weight per record.
inline SolveResult solve_equation(const EstimatingEquation& eq, const Dataset& data, std::span<const double> weights,
                                  const Eigen::VectorXd& init, const SolveOptions& opts = {}) {
    const auto sel = detail::select_records(data.size(), weights);
    return detail::solve_selected(eq, data, sel, nullptr, init, opts);
}

// ============================================================================
// Stacked two-stage models
// ============================================================================

struct StackedModel {
    EstimatingEquation first_stage;
    EstimatingEquation second_stage;
    IndexFn index_fn;              // optional f(X; theta)
    Eigen::Index index_dim = 1;    // length of f(X; theta)
    // Rescale theta-hat to unit norm with its first nonzero coordinate positive
    // before it reaches the second stage.
    bool normalize_theta = false;
    // Error standard deviation of a linear second stage, when known.
    std::optional<double> known_sigma;
    Eigen::Index tested_coefficient = 0;
    Eigen::VectorXd theta_init;    // zero vector when empty
    Eigen::VectorXd beta_init;

    Eigen::Index dim_theta() const noexcept { return first_stage.dim_param; }
    Eigen::Index dim_beta() const noexcept { return second_stage.dim_param; }
    Eigen::Index plug_dim() const noexcept { return index_fn ? index_dim : dim_theta(); }

    Eigen::VectorXd first_init() const {
        return theta_init.size() == dim_theta() ? theta_init : Eigen::VectorXd::Zero(dim_theta());
    }
    Eigen::VectorXd second_init() const {
        return beta_init.size() == dim_beta() ? beta_init : Eigen::VectorXd::Zero(dim_beta());
    }
};

// Unit-norm rescaling with the first nonzero coordinate made positive.
inline Eigen::VectorXd normalize_direction(const Eigen::VectorXd& theta) {
    const double norm = theta.norm();
    if (!(norm > 0) || !std::isfinite(norm)) throw SolverError("cannot normalize a zero or non-finite theta", Stage::first);
    Eigen::VectorXd u = theta / norm;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
        if (u[j] != 0) {
            if (u[j] < 0) u = -u;
            break;
        }
    }
    return u;
}

// Value of theta passed to the second stage for a raw first-stage solution.
inline Eigen::VectorXd plugged_theta(const StackedModel& model, const Eigen::VectorXd& theta_raw) {
    return model.normalize_theta ? normalize_direction(theta_raw) : theta_raw;
}

// Plug rows for every record with nonzero weight (others left at zero).
inline RowMatrix compute_plugs(const StackedModel& model, const Dataset& data, std::span<const double> weights,
                               const Eigen::VectorXd& theta_used) {
    const Eigen::Index n = data.size();
    const Eigen::Index k = model.plug_dim();
    RowMatrix plugs = RowMatrix::Zero(n, k);
    Eigen::VectorXd out(k);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!weights.empty() && weights[static_cast<std::size_t>(i)] == 0) continue;
        if (model.index_fn) {
            const RecordView r = data.record(i);
            model.index_fn(r.x, theta_used, out);
            plugs.row(i) = out.transpose();
        } else {
            plugs.row(i) = theta_used.transpose();
        }
    }
    return plugs;
}

struct StageFit {
    Eigen::VectorXd theta_raw;  // first-stage root
    Eigen::VectorXd theta;      // value plugged into the second stage
    SolveResult first;
};

inline StageFit fit_first_stage(const StackedModel& model, const Dataset& data, std::span<const double> weights,
                                const SolveOptions& opts) {
    return with_stage(Stage::first, [&] {
        StageFit f;
        f.first = solve_equation(model.first_stage, data, weights, model.first_init(), opts);
        f.theta_raw = f.first.param;
        f.theta = plugged_theta(model, f.theta_raw);
        return f;
    });
}

inline SolveResult fit_second_stage(const StackedModel& model, const Dataset& data, std::span<const double> weights,
                                    const Eigen::VectorXd& theta_used, const SolveOptions& opts) {
    return with_stage(Stage::second, [&] {
        const RowMatrix plugs = compute_plugs(model, data, weights, theta_used);
        const auto sel = detail::select_records(data.size(), weights);
        return detail::solve_selected(model.second_stage, data, sel, &plugs, model.second_init(), opts);
    });
}

struct StackedFit {
    Eigen::VectorXd theta;      // reported first-stage estimate (normalized when requested)
    Eigen::VectorXd theta_raw;  // root of the first-stage equation
    Eigen::VectorXd beta;
    SolveResult first;
    SolveResult second;
};

// Full-sample stacked estimator: stage one on all records, then stage two with
// theta fixed at its estimate.
inline StackedFit solve_stacked(const StackedModel& model, const Dataset& data, const SolveOptions& opts = {}) {
    data.validate();
    StackedFit fit;
    StageFit s1 = fit_first_stage(model, data, {}, opts);
    fit.first = std::move(s1.first);
    fit.theta_raw = std::move(s1.theta_raw);
    fit.theta = std::move(s1.theta);
    fit.second = fit_second_stage(model, data, {}, fit.theta, opts);
    fit.beta = fit.second.param;
    return fit;
}

// Per-record stacked score (Psi(theta_raw), K(beta; plug(theta_raw))).
inline Eigen::MatrixXd stacked_scores(const StackedModel& model, const Dataset& data, const Eigen::VectorXd& theta_raw,
                                      const Eigen::VectorXd& beta) {
    const Eigen::Index n = data.size();
    const Eigen::Index p = model.dim_theta(), q = model.dim_beta();
    const RowMatrix plugs = compute_plugs(model, data, {}, plugged_theta(model, theta_raw));
    Eigen::MatrixXd scores(n, p + q);
    Eigen::VectorXd a(p), b(q);
    for (Eigen::Index i = 0; i < n; ++i) {
        RecordView r = data.record(i);
        model.first_stage.evaluate(r, theta_raw, a);
        r.plug = {plugs.data() + i * plugs.cols(), static_cast<std::size_t>(plugs.cols())};
        model.second_stage.evaluate(r, beta, b);
        scores.row(i).head(p) = a.transpose();
        scores.row(i).tail(q) = b.transpose();
    }
    return scores;
}

// Sandwich covariance A^{-1} B A^{-T} / n of the stacked estimator, where A is
// the mean Jacobian of the stacked score (central differences) and B its mean
// outer product. Rows/cols are ordered (theta_raw, beta).
inline Eigen::MatrixXd sandwich_covariance(const StackedModel& model, const Dataset& data, const StackedFit& fit,
                                           double rel_step = 1e-5) {
    const Eigen::Index n = data.size();
    const Eigen::Index p = model.dim_theta(), q = model.dim_beta(), m = p + q;
    Eigen::VectorXd point(m);
    point << fit.theta_raw, fit.beta;

    auto mean_score = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        return stacked_scores(model, data, v.head(p), v.tail(q)).colwise().mean().transpose();
    };
    Eigen::MatrixXd a(m, m);
    Eigen::VectorXd shifted = point;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double h = rel_step * std::max(std::abs(point[j]), 1.0);
        shifted[j] = point[j] + h;
        const Eigen::VectorXd up = mean_score(shifted);
        shifted[j] = point[j] - h;
        const Eigen::VectorXd down = mean_score(shifted);
        shifted[j] = point[j];
        a.col(j) = (up - down) / (2 * h);
    }
    const Eigen::MatrixXd scores = stacked_scores(model, data, fit.theta_raw, fit.beta);
    const Eigen::MatrixXd b = scores.transpose() * scores / static_cast<double>(n);

    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.rank() < m) throw SingularJacobian();
    const Eigen::MatrixXd ainv = lu.inverse();
    Eigen::MatrixXd cov = ainv * b * ainv.transpose() / static_cast<double>(n);
    return (cov + cov.transpose()) / 2;
}

}  // namespace splitboot
