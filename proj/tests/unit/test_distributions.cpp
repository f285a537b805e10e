#include "catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "splitboot/distributions.hpp"
#include "splitboot/stats.hpp"

using namespace splitboot;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("every listed law parses and has the documented variance", "[distributions]") {
    const std::vector<double> expected = {1, 8.0 / 6, 2, 2, 8, 32, 0.9 + 0.5, 0.5 + 5};
    const auto& names = error_distribution_names();
    REQUIRE(names.size() == expected.size());
    for (std::size_t k = 0; k < names.size(); ++k) {
        const ErrorDistribution d = error_distribution_from_name(names[k]);
        CHECK(d.name == names[k]);
        CHECK_THAT(d.variance(), WithinAbs(expected[k], 1e-14));
    }
    CHECK_THROWS_AS(error_distribution_from_name("cauchy"), std::invalid_argument);
}

TEST_CASE("sampled errors have mean zero and the stated variance", "[distributions]") {
    const Eigen::Index n = 400000;
    for (const auto& name : error_distribution_names()) {
        const ErrorDistribution d = error_distribution_from_name(name);
        const Eigen::VectorXd e = sample_errors(d, n, 77);
        const std::vector<double> v(e.data(), e.data() + n);
        const double sd = d.sd();
        INFO(name);
        CHECK_THAT(stats::mean(v), WithinAbs(0.0, 5 * sd / std::sqrt(static_cast<double>(n))));
        // t4 has infinite fourth moment; its sample variance converges slowly.
        CHECK_THAT(stats::variance(v), WithinRel(d.variance(), name == "t4" ? 0.08 : 0.02));
    }
}

TEST_CASE("Laplace and mixture shapes", "[distributions]") {
    const Eigen::VectorXd e = sample_errors(ErrorDistribution::laplace(2), 200000, 5);
    double abs_mean = 0;
    for (double v : e) abs_mean += std::abs(v) / 200000.0;
    CHECK_THAT(abs_mean, WithinRel(2.0, 0.02));

    ErrorSampler s(ErrorDistribution::gauss_mixture(10, 0.5));
    Xoshiro256 rng(3);
    int wide_count = 0;
    for (int i = 0; i < 100000; ++i) {
        bool wide = false;
        s(rng, &wide);
        wide_count += wide;
    }
    CHECK_THAT(wide_count / 100000.0, WithinAbs(0.5, 0.01));
}

TEST_CASE("level/power generator", "[distributions]") {
    const Eigen::Vector3d theta(2, 2, 2);
    const Dataset a = generate_level_power_data(5000, theta, 0.7, ErrorDistribution::normal(), 21);
    const Dataset b = generate_level_power_data(5000, theta, 0.7, ErrorDistribution::normal(), 21);
    CHECK(a.y == b.y);
    CHECK(a.x == b.x);
    CHECK(a.w == a.y);
    double ss = 0;
    for (Eigen::Index i = 0; i < a.size(); ++i) ss += a.x(i, 1) * a.x(i, 1);
    CHECK_THAT(ss / 5000, WithinRel(0.5, 0.06));

    // Same seed with and without signal differ exactly by beta0 X'theta.
    const Dataset null = generate_level_power_data(5000, theta, 0.0, ErrorDistribution::normal(), 21);
    const Eigen::VectorXd diff = a.y - null.y - 0.7 * (a.x * (theta / theta.norm()));
    CHECK(diff.cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS(generate_level_power_data(3, theta, 0, ErrorDistribution::normal(), 1));
}
