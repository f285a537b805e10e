#pragma once

// The normalized single-index model
//
//     stage one:  Y = X'theta + e           (least squares, theta rescaled to unit norm)
//     stage two:  Y = beta0 (X'theta) + e   (least squares on the index, no intercept)
//
// available both as a generic StackedModel and as a sufficient-statistic
// kernel. The kernel precomputes the per-record moments (x x', x y, y^2) once
// per data set; a split then sums the training-set rows, and the test-set
// moments are totals minus training-set moments.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/boot_test.hpp"
#include "splitboot/dataset.hpp"
#include "splitboot/ee_core.hpp"
#include "splitboot/errors.hpp"
#include "splitboot/splitting.hpp"
#include "splitboot/stats.hpp"

namespace splitboot {

struct IndexModel {
    Eigen::VectorXd theta;  // unit norm
    double beta0 = 0;

    IndexModel(Eigen::VectorXd direction, double slope) : theta(std::move(direction)), beta0(slope) {
        const double norm = theta.norm();
        if (!(norm > 0)) throw std::invalid_argument("IndexModel: theta must be nonzero");
        theta /= norm;
    }
    Eigen::Index dim_x() const noexcept { return theta.size(); }
};

// Generic StackedModel form of the index model for `dim_x` covariates.
inline StackedModel make_index_stacked_model(Eigen::Index dim_x, std::optional<double> known_sigma = std::nullopt) {
    StackedModel m;
    m.first_stage = linear_least_squares(
        dim_x,
        [](const RecordView& r, Eigen::Ref<Eigen::VectorXd> d) {
            for (std::size_t j = 0; j < r.x.size(); ++j) d[static_cast<Eigen::Index>(j)] = r.x[j];
        },
        [](const RecordView& r) { return r.y; });
    m.index_fn = [](std::span<const double> x, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) {
        double s = 0;
        for (std::size_t j = 0; j < x.size(); ++j) s += x[j] * theta[static_cast<Eigen::Index>(j)];
        out[0] = s;
    };
    m.index_dim = 1;
    m.normalize_theta = true;
    m.second_stage = linear_least_squares(
        1, [](const RecordView& r, Eigen::Ref<Eigen::VectorXd> d) { d[0] = r.plug[0]; },
        [](const RecordView& r) { return r.y; });
    m.known_sigma = known_sigma;
    m.tested_coefficient = 0;
    return m;
}

// Sufficient-statistic split test for the index model. Matches
// per_split_pvalue(make_index_stacked_model(dim_x, known_sigma), ...) up to
// rounding.
class IndexSplitTest {
public:
    static constexpr Eigen::Index kMaxDim = 8;

    explicit IndexSplitTest(Eigen::Index dim_x, std::optional<double> known_sigma = std::nullopt)
        : dim_(dim_x), known_sigma_(known_sigma) {
        if (dim_x < 1 || dim_x > kMaxDim) throw std::invalid_argument("IndexSplitTest: dimension must be in [1, 8]");
        if (known_sigma && !(*known_sigma > 0)) throw std::invalid_argument("IndexSplitTest: sigma must be positive");
    }

    Eigen::Index dim_x() const noexcept { return dim_; }
    const std::optional<double>& known_sigma() const noexcept { return known_sigma_; }
    std::size_t min_per_side() const noexcept { return static_cast<std::size_t>(dim_) + 1; }

    class Bound {
    public:
        Bound(const IndexSplitTest& test, const Dataset& data) : p_(test.dim_), sigma_(test.known_sigma_) {
            if (data.x.cols() != p_) throw std::invalid_argument("IndexSplitTest: data has a different covariate dimension");
            n_ = static_cast<std::size_t>(data.size());
            m_ = static_cast<std::size_t>(p_ * (p_ + 1) / 2 + p_ + 1);
            moments_.assign(n_ * m_, 0.0);
            totals_.assign(m_, 0.0);
            for (std::size_t i = 0; i < n_; ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                double* mi = &moments_[i * m_];
                std::size_t k = 0;
                for (Eigen::Index a = 0; a < p_; ++a)
                    for (Eigen::Index b = a; b < p_; ++b) mi[k++] = data.x(r, a) * data.x(r, b);
                for (Eigen::Index a = 0; a < p_; ++a) mi[k++] = data.x(r, a) * data.y[r];
                mi[k] = data.y[r] * data.y[r];
                for (std::size_t q = 0; q < m_; ++q) totals_[q] += mi[q];
            }
            index_.resize(n_);
        }

        SplitOutcome operator()(SplitRow row) const {
            if (row.size() != n_) throw std::invalid_argument("split row length differs from the sample size");
            std::size_t count = 0;
            for (std::size_t i = 0; i < n_; ++i) {
                index_[count] = static_cast<std::uint32_t>(i);
                count += row[i] != 0;
            }
            const auto p = static_cast<std::size_t>(p_);
            if (count < p + 1 || n_ - count < p + 1) throw DegenerateSplit("too few records on one side of the split");

            // Training-set moment sums, two interleaved accumulators.
            double in[kMaxMoments] = {}, in2[kMaxMoments] = {};
            std::size_t j = 0;
            for (; j + 1 < count; j += 2) {
                const double* u = &moments_[index_[j] * m_];
                const double* v = &moments_[index_[j + 1] * m_];
                for (std::size_t q = 0; q < m_; ++q) {
                    in[q] += u[q];
                    in2[q] += v[q];
                }
            }
            if (j < count) {
                const double* u = &moments_[index_[j] * m_];
                for (std::size_t q = 0; q < m_; ++q) in[q] += u[q];
            }
            for (std::size_t q = 0; q < m_; ++q) in[q] += in2[q];

            double g_in[kMaxDim][kMaxDim], g_out[kMaxDim][kMaxDim], b_in[kMaxDim] = {}, b_out[kMaxDim] = {};
            std::size_t k = 0;
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = a; b < p; ++b, ++k) {
                    g_in[a][b] = g_in[b][a] = in[k];
                    g_out[a][b] = g_out[b][a] = totals_[k] - in[k];
                }
            for (std::size_t a = 0; a < p; ++a, ++k) {
                b_in[a] = in[k];
                b_out[a] = totals_[k] - in[k];
            }
            const double yy_out = totals_[k] - in[k];

            double theta[kMaxDim];
            if (!cholesky_solve(g_in, b_in, theta, p)) throw SingularJacobian(Stage::first);
            double norm = 0;
            for (std::size_t a = 0; a < p; ++a) norm += theta[a] * theta[a];
            norm = std::sqrt(norm);
            if (!(norm > 0) || !std::isfinite(norm)) throw SolverError("cannot normalize theta", Stage::first);
            double sign = 1;
            for (std::size_t a = 0; a < p; ++a) {
                if (theta[a] != 0) {
                    sign = theta[a] < 0 ? -1 : 1;
                    break;
                }
            }
            for (std::size_t a = 0; a < p; ++a) theta[a] *= sign / norm;

            double ss = 0, sy = 0;
            for (std::size_t a = 0; a < p; ++a) {
                double row_dot = 0;
                for (std::size_t b = 0; b < p; ++b) row_dot += g_out[a][b] * theta[b];
                ss += theta[a] * row_dot;
                sy += theta[a] * b_out[a];
            }
            if (!(ss > 0)) throw SingularJacobian(Stage::second);
            SplitOutcome o;
            o.beta0 = sy / ss;
            if (sigma_) {
                o.p = stats::normal_two_sided_pvalue(o.beta0 * std::sqrt(ss) / *sigma_);
                return o;
            }
            const double df = static_cast<double>(n_ - count) - 1;
            const double s2 = std::max(yy_out - o.beta0 * sy, 0.0) / df;
            if (s2 == 0) {
                o.p = o.beta0 == 0 ? 1.0 : 0.0;
                return o;
            }
            o.p = stats::t_two_sided_pvalue(o.beta0 / std::sqrt(s2 / ss), df);
            return o;
        }

    private:
        static constexpr std::size_t kMaxMoments = kMaxDim * (kMaxDim + 1) / 2 + kMaxDim + 1;

        // Solves g x = b for symmetric positive definite g; false when a pivot
        // is not positive relative to the diagonal scale.
        static bool cholesky_solve(const double (&g)[kMaxDim][kMaxDim], const double* b, double* x, std::size_t p) {
            double l[kMaxDim][kMaxDim];
            for (std::size_t a = 0; a < p; ++a) {
                for (std::size_t c = 0; c <= a; ++c) {
                    double s = g[a][c];
                    for (std::size_t q = 0; q < c; ++q) s -= l[a][q] * l[c][q];
                    if (a == c) {
                        if (!(s > 1e-13 * std::abs(g[a][a]))) return false;
                        l[a][a] = std::sqrt(s);
                    } else {
                        l[a][c] = s / l[c][c];
                    }
                }
            }
            for (std::size_t a = 0; a < p; ++a) {
                double s = b[a];
                for (std::size_t q = 0; q < a; ++q) s -= l[a][q] * x[q];
                x[a] = s / l[a][a];
            }
            for (std::size_t a = p; a-- > 0;) {
                double s = x[a];
                for (std::size_t q = a + 1; q < p; ++q) s -= l[q][a] * x[q];
                x[a] = s / l[a][a];
            }
            return true;
        }

        Eigen::Index p_;
        std::optional<double> sigma_;
        std::size_t n_ = 0, m_ = 0;
        std::vector<double> moments_;  // n x m, row-major
        std::vector<double> totals_;
        mutable std::vector<std::uint32_t> index_;  // scratch; a Bound is used by one thread
    };

    Bound bind(const Dataset& data) const { return Bound(*this, data); }

private:
    Eigen::Index dim_;
    std::optional<double> known_sigma_;
};

}  // namespace splitboot
