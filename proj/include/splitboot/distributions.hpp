#pragma once

// Error laws used by the level and power studies and the synthetic data
// generator for the index model Y = beta0 (X'theta) + e.

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/dataset.hpp"
#include "splitboot/rng.hpp"

namespace splitboot {

enum class ErrorKind { normal, student_t, laplace, gauss_mixture };

// One of the level-study noise laws. All are symmetric about zero.
//   normal         N(0, sigma^2)
//   student_t      t with `df` degrees of freedom
//   laplace        density exp(-|x|/scale) / (2 scale)
//   gauss_mixture  (1 - p_wide) N(0, 1) + p_wide N(0, wide_variance)
struct ErrorDistribution {
    ErrorKind kind = ErrorKind::normal;
    double sigma = 1.0;
    double df = 0;
    double scale = 1.0;
    double wide_variance = 1.0;
    double p_wide = 0;
    std::string name = "normal";

    static ErrorDistribution normal(double sigma = 1.0) {
        ErrorDistribution d;
        d.sigma = sigma;
        d.name = sigma == 1.0 ? "normal" : "normal(" + std::to_string(sigma) + ")";
        return d;
    }
    static ErrorDistribution student_t(double df) {
        ErrorDistribution d;
        d.kind = ErrorKind::student_t;
        d.df = df;
        d.name = "t" + std::to_string(static_cast<int>(df));
        return d;
    }
    static ErrorDistribution laplace(double scale) {
        ErrorDistribution d;
        d.kind = ErrorKind::laplace;
        d.scale = scale;
        d.name = "laplace" + std::to_string(static_cast<int>(scale));
        return d;
    }
    static ErrorDistribution gauss_mixture(double wide_variance, double p_wide) {
        ErrorDistribution d;
        d.kind = ErrorKind::gauss_mixture;
        d.wide_variance = wide_variance;
        d.p_wide = p_wide;
        d.name = "mix" + std::to_string(static_cast<int>(wide_variance)) + "p" +
                 std::to_string(static_cast<int>(std::lround(p_wide * 100)));
        return d;
    }

    double variance() const {
        switch (kind) {
            case ErrorKind::normal: return sigma * sigma;
            case ErrorKind::student_t: return df > 2 ? df / (df - 2) : std::numeric_limits<double>::infinity();
            case ErrorKind::laplace: return 2 * scale * scale;
            case ErrorKind::gauss_mixture: return (1 - p_wide) + p_wide * wide_variance;
        }
        return 0;
    }
    double sd() const { return std::sqrt(variance()); }
};

// Names accepted on the command line, in the row order of the level tables.
inline const std::vector<std::string>& error_distribution_names() {
    static const std::vector<std::string> names = {"normal", "t8", "t4", "laplace1", "laplace2", "laplace4", "mix5p10", "mix10p50"};
    return names;
}

inline ErrorDistribution error_distribution_from_name(std::string_view name) {
    if (name == "normal") return ErrorDistribution::normal(1.0);
    if (name == "t8") return ErrorDistribution::student_t(8);
    if (name == "t4") return ErrorDistribution::student_t(4);
    if (name == "laplace1") return ErrorDistribution::laplace(1);
    if (name == "laplace2") return ErrorDistribution::laplace(2);
    if (name == "laplace4") return ErrorDistribution::laplace(4);
    // Second component read as a variance: N(0,5) and N(0,10).
    if (name == "mix5p10") return ErrorDistribution::gauss_mixture(5, 0.1);
    if (name == "mix10p50") return ErrorDistribution::gauss_mixture(10, 0.5);
    throw std::invalid_argument("unknown error distribution '" + std::string(name) +
                                "' (expected normal, t8, t4, laplace1, laplace2, laplace4, mix5p10, mix10p50)");
}

// Stateful sampler for one law; owns the <random> distribution objects.
class ErrorSampler {
public:
    explicit ErrorSampler(const ErrorDistribution& dist)
        : dist_(dist), t_(dist.kind == ErrorKind::student_t ? dist.df : 1.0), wide_sd_(std::sqrt(dist.wide_variance)) {}

    // `wide` (optional) reports whether a mixture draw came from the wide component.
    template <class URBG>
    double operator()(URBG& rng, bool* wide = nullptr) {
        switch (dist_.kind) {
            case ErrorKind::normal: return dist_.sigma * normal_(rng);
            case ErrorKind::student_t: return t_(rng);
            case ErrorKind::laplace: {
                const double u = uniform_(rng);
                return u < 0.5 ? dist_.scale * std::log(2 * u) : -dist_.scale * std::log(2 * (1 - u));
            }
            case ErrorKind::gauss_mixture: {
                const bool w = uniform_(rng) < dist_.p_wide;
                if (wide != nullptr) *wide = w;
                const double z = normal_(rng);
                return w ? wide_sd_ * z : z;
            }
        }
        return 0;
    }

private:
    ErrorDistribution dist_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::student_t_distribution<double> t_;
    std::uniform_real_distribution<double> uniform_{std::nextafter(0.0, 1.0), 1.0};
    double wide_sd_;
};

inline Eigen::VectorXd sample_errors(const ErrorDistribution& dist, Eigen::Index n, Seed seed) {
    if (n < 1) throw std::invalid_argument("sample_errors: n must be positive");
    Xoshiro256 rng(seed);
    ErrorSampler sampler(dist);
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e[i] = sampler(rng);
    return e;
}

// Covariate standard deviation of the index-model generator. Coordinates are
// N(0, 1/2), which gives a signal-to-noise ratio E[(X'theta)^2] / var(e) of 1/2
// for unit-variance errors.
inline constexpr double kDefaultCovariateSd = std::numbers::sqrt2 / 2;

// Seeds of the two substreams used by generate_level_power_data.
inline Seed covariate_seed(Seed seed) { return derive_seed(seed, {0x58}); }
inline Seed error_seed(Seed seed) { return derive_seed(seed, {0x45}); }

// n records from Y = beta0 (X'theta) + e with i.i.d. N(0, covariate_sd^2)
// covariates. theta is rescaled to unit norm. W is set equal to Y.
inline Dataset generate_level_power_data(Eigen::Index n, Eigen::VectorXd theta, double beta0, const ErrorDistribution& dist,
                                         Seed seed, double covariate_sd = kDefaultCovariateSd) {
    const Eigen::Index p = theta.size();
    if (p < 1) throw std::invalid_argument("generate_level_power_data: theta is empty");
    if (n < p + 2) throw std::invalid_argument("generate_level_power_data: n must be at least dim(theta) + 2");
    const double norm = theta.norm();
    if (!(norm > 0)) throw std::invalid_argument("generate_level_power_data: theta must be nonzero");
    theta /= norm;

    RowMatrix x(n, p);
    Xoshiro256 xr(covariate_seed(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) x(i, j) = covariate_sd * normal(xr);

    Eigen::VectorXd y = sample_errors(dist, n, error_seed(seed));
    if (beta0 != 0) y.noalias() += beta0 * (x * theta);
    return make_dataset(std::move(y), std::move(x));
}

}  // namespace splitboot
