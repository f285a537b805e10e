#include "catch_amalgamated.hpp"

#include <cmath>
#include <vector>

#include "splitboot/models/score_model.hpp"

using namespace splitboot;
using Catch::Matchers::WithinAbs;

namespace {

Eigen::VectorXd random_params(Seed seed, Eigen::Index dim) {
    Xoshiro256 rng(seed);
    Eigen::VectorXd u(dim);
    for (Eigen::Index k = 0; k < dim; ++k) u[k] = 2 * rng.uniform() - 1;
    return u;
}

// Two rows per record (W = 0 and W = 1) weighted by the true probabilities,
// so the weighted likelihood is the expected likelihood under the truth.
std::pair<Dataset, std::vector<double>> expected_likelihood_data(const Dataset& base, const ScoreModel& truth) {
    const Eigen::Index n = base.size();
    Dataset d;
    d.x.resize(2 * n, base.x.cols());
    d.z.resize(2 * n, base.z.cols());
    d.w.resize(2 * n);
    d.y.resize(2 * n);
    std::vector<double> wt(static_cast<std::size_t>(2 * n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const RecordView r = base.record(i);
        const double p = logistic_cdf(truth.linear_predictor(r.x, r.z));
        for (Eigen::Index c = 0; c < 2; ++c) {
            d.x.row(2 * i + c) = base.x.row(i);
            d.z.row(2 * i + c) = base.z.row(i);
            d.w[2 * i + c] = d.y[2 * i + c] = static_cast<double>(c);
            wt[static_cast<std::size_t>(2 * i + c)] = c ? p : 1 - p;
        }
    }
    return {d, wt};
}

}  // namespace

TEST_CASE("parameter map round-trips and satisfies the constraints", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    const Eigen::VectorXd u = score_params_from_model(truth);
    CHECK(u.size() == score_param_dim(5, 2));
    CHECK(u.size() == 22);
    const ScoreModel back = score_model_from_params(u, 5, 2);
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK_THAT(back.aerobic[j].b, WithinAbs(truth.aerobic[j].b, 1e-12));
        CHECK_THAT(back.aerobic[j].c, WithinAbs(truth.aerobic[j].c, 1e-12));
        CHECK_THAT(back.aerobic[j].d, WithinAbs(truth.aerobic[j].d, 1e-12));
    }
    CHECK_THAT(back.theta_tv, WithinAbs(truth.theta_tv, 1e-14));
    CHECK_THAT(back.theta_sleep2, WithinAbs(truth.theta_sleep2, 1e-14));
    CHECK(back.theta_z == truth.theta_z);
    for (Seed s = 0; s < 50; ++s) CHECK(score_model_from_params(3 * random_params(s, 22), 5, 2).satisfies_constraints());
}

TEST_CASE("linear predictor derivatives match finite differences", "[score_model]") {
    const Dataset d = generate_score_data(20, synthetic_score_truth(), 3);
    const Eigen::VectorXd u = score_params_from_model(synthetic_score_truth()) + 0.3 * random_params(9, 22);
    for (Eigen::Index i = 0; i < 5; ++i) {
        const RecordView r = d.record(i);
        Eigen::VectorXd grad(22);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(22, 22);
        Eigen::Ref<Eigen::MatrixXd> href(hess);
        const double eta = detail::score_eta_derivs(u, 5, r.x, r.z, grad.data(), &href);
        CHECK_THAT(eta, WithinAbs(score_model_from_params(u, 5, 2).linear_predictor(r.x, r.z), 1e-12));
        for (Eigen::Index k = 0; k < 22; ++k) {
            const double h = 1e-6;
            Eigen::VectorXd up = u, dn = u;
            up[k] += h;
            dn[k] -= h;
            Eigen::VectorXd gu(22), gd(22);
            const double eu = detail::score_eta_derivs(up, 5, r.x, r.z, gu.data(), nullptr);
            const double ed = detail::score_eta_derivs(dn, 5, r.x, r.z, gd.data(), nullptr);
            CHECK_THAT(grad[k], WithinAbs((eu - ed) / (2 * h), 1e-6 * std::max(1.0, std::abs(grad[k]))));
            for (Eigen::Index m = 0; m < 22; ++m)
                CHECK_THAT(hess(m, k), WithinAbs((gu[m] - gd[m]) / (2 * h), 1e-5 * std::max(1.0, std::abs(hess(m, k)))));
        }
    }
}

TEST_CASE("penalized score equation Jacobian matches finite differences", "[score_model]") {
    const Dataset d = generate_score_data(10, synthetic_score_truth(), 5);
    ScorePenalty pen{0.01, default_penalty_anchor(d, 5)};
    const EstimatingEquation eq = score_model_equation(5, 2, pen);
    const Eigen::VectorXd u = score_params_from_model(synthetic_score_truth()) + 0.2 * random_params(2, 22);
    const RecordView r = d.record(3);
    Eigen::MatrixXd jac(22, 22);
    eq.jacobian(r, u, jac);
    for (Eigen::Index k = 0; k < 22; ++k) {
        const double h = 1e-6;
        Eigen::VectorXd up = u, dn = u, fu(22), fd(22);
        up[k] += h;
        dn[k] -= h;
        eq.evaluate(r, up, fu);
        eq.evaluate(r, dn, fd);
        for (Eigen::Index m = 0; m < 22; ++m) CHECK_THAT(jac(m, k), WithinAbs((fu[m] - fd[m]) / (2 * h), 1e-6));
        // The score is the gradient of the objective.
        Eigen::VectorXd g(22);
        eq.evaluate(r, u, g);
        CHECK_THAT(g[k], WithinAbs((eq.objective(r, up) - eq.objective(r, dn)) / (2 * h), 1e-6));
    }
}

TEST_CASE("expected-likelihood fit recovers the generating marginals", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    const Dataset base = generate_score_data(2500, truth, 3);
    const auto [d, wt] = expected_likelihood_data(base, truth);
    ScoreFitOptions opts;
    opts.ridge = 0;
    const ScoreFit fit = fit_score_model(d, wt, opts);
    const CovariateRanges rg = activity_ranges(base);
    for (std::size_t j = 0; j < 8; ++j) {
        double sup = 0;
        for (int g = 0; g < 100; ++g) {
            const double x = rg.lo[j] + (rg.hi[j] - rg.lo[j]) * g / 99.0;
            sup = std::max(sup, std::abs(fit.model.marginal(j, x) - truth.marginal(j, x)));
        }
        INFO("component " << j);
        CHECK(sup < 0.05);
    }
}

TEST_CASE("sample fit tracks the truth where the data are", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    const Dataset d = generate_score_data(5000, truth, 2);
    const ScoreFit fit = fit_score_model(d);
    CHECK(fit.model.satisfies_constraints());
    double eta_ss = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const RecordView r = d.record(i);
        const double e = fit.model.linear_predictor(r.x, r.z) - truth.linear_predictor(r.x, r.z);
        eta_ss += e * e;
    }
    CHECK(std::sqrt(eta_ss / 5000) < 0.2);
    for (std::size_t j = 0; j < 8; ++j) {
        double ma = 0, mb = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            ma += fit.model.marginal(j, d.x(i, static_cast<Eigen::Index>(j))) / 5000;
            mb += truth.marginal(j, d.x(i, static_cast<Eigen::Index>(j))) / 5000;
        }
        double ss = 0;
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            const double xj = d.x(i, static_cast<Eigen::Index>(j));
            const double e = (fit.model.marginal(j, xj) - ma) - (truth.marginal(j, xj) - mb);
            ss += e * e;
        }
        INFO("component " << j);
        CHECK(std::sqrt(ss / 5000) < 0.1);
    }
    const ScoreFit again = fit_score_model(d);
    CHECK(again.params == fit.params);
}

TEST_CASE("fitted marginals have the required shapes", "[score_model]") {
    const Dataset d = generate_score_data(800, synthetic_score_truth(), 8);
    const ScoreFit fit = fit_score_model(d);
    const CovariateRanges rg = activity_ranges(d);
    for (std::size_t j = 0; j < 8; ++j) {
        std::vector<double> v(100);
        const double step = (rg.hi[j] - rg.lo[j]) / 99.0;
        for (int g = 0; g < 100; ++g) v[static_cast<std::size_t>(g)] = fit.model.marginal(j, rg.lo[j] + step * g);
        for (std::size_t g = 1; g < 100; ++g) {
            if (j < 5) CHECK(v[g] >= v[g - 1] - 1e-12);
            if (j == 5 || j == 6) CHECK(v[g] <= v[g - 1] + 1e-12);
        }
        if (j < 5 || j == 7)
            for (std::size_t g = 2; g < 100; ++g) CHECK(v[g] - 2 * v[g - 1] + v[g - 2] <= 1e-9);
    }
}

TEST_CASE("constant outcome is reported as separation", "[score_model]") {
    Dataset d = generate_score_data(200, synthetic_score_truth(), 4);
    d.w.setZero();
    CHECK_THROWS_AS(fit_score_model(d), SeparationDetected);
}

TEST_CASE("rescaled score lies in [0, 100] and hits 100 at the best corner", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    const Dataset d = generate_score_data(1000, truth, 6);
    const RescaledScore s = rescale_score(truth, d);
    double max_sum = 0;
    for (std::size_t j = 0; j < 8; ++j) max_sum += s.max_contribution(j);
    CHECK_THAT(max_sum, WithinAbs(100.0, 1e-10));
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const double v = s(d.record(i).x);
        CHECK(v >= 0);
        CHECK(v <= 100);
    }
    std::vector<double> best(8), worst(8);
    for (std::size_t j = 0; j < 8; ++j) {
        const double lo = s.ranges.lo[j], hi = s.ranges.hi[j];
        if (j < 5) {
            best[j] = hi;
            worst[j] = lo;
        } else if (j < 7) {
            best[j] = lo;
            worst[j] = hi;
        } else {
            best[j] = std::clamp(-truth.theta_sleep1 / (2 * truth.theta_sleep2), lo, hi);
            worst[j] = truth.marginal(7, lo) < truth.marginal(7, hi) ? lo : hi;
        }
    }
    CHECK_THAT(s(best), WithinAbs(100.0, 1e-10));
    double floor = 0;
    for (std::size_t j = 0; j < 8; ++j) floor += s.contribution(j, worst[j]);
    CHECK_THAT(s(worst), WithinAbs(floor, 1e-12));
    CHECK(s(worst) >= 0);
    const std::vector<double> zeros(8, 0.0);
    CHECK(s(zeros) >= 0);
    CHECK(s(zeros) <= 100);
}

TEST_CASE("single non-constant marginal carries all 100 points", "[score_model]") {
    ScoreModel m;
    m.aerobic = {{0.5, 2, 1.5}};
    m.theta_z = Eigen::VectorXd::Zero(0);
    const CovariateRanges rg{{0, 0, 0, 0}, {5, 1, 1, 1}};
    const RescaledScore s = rescale_score(m, rg);
    CHECK_THAT(s.contribution(0, 5), WithinAbs(100.0, 1e-12));
    CHECK_THAT(s.contribution(0, 0), WithinAbs(0.0, 1e-12));
    CHECK(s.degenerate[1]);
    CHECK(s.max_contribution(2) == 0);
}

TEST_CASE("two marginals split the points by their offset maxima", "[score_model]") {
    ScoreModel m;
    m.aerobic = {{1.0, 1, 0.15}};
    m.theta_tv = -0.85;
    m.theta_z = Eigen::VectorXd::Zero(0);
    // aerobic on [0, inf-like] approaches 0.15; tv on [0, 1] spans [-0.85, 0].
    const CovariateRanges rg{{0, 0, 0, 0}, {1e12, 1, 0, 0}};
    const RescaledScore s = rescale_score(m, rg);
    CHECK_THAT(s.max_contribution(0), WithinAbs(15.0, 1e-6));
    CHECK_THAT(s.max_contribution(1), WithinAbs(85.0, 1e-6));
    CHECK_THAT(s.offsets[1], WithinAbs(0.85, 1e-15));
}

TEST_CASE("every marginal constant raises DegenerateRange", "[score_model]") {
    ScoreModel m;
    m.aerobic = {{0.5, 2, 0.0}};
    m.theta_z = Eigen::VectorXd::Zero(0);
    CHECK_THROWS_AS(rescale_score(m, CovariateRanges{{0, 0, 0, 0}, {1, 1, 1, 1}}), DegenerateRange);
}

TEST_CASE("score excludes the nuisance covariates", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    Dataset d = generate_score_data(300, truth, 7);
    const RescaledScore s = rescale_score(truth, d);
    const RecordView r = d.record(0);
    const double before_score = s(r.x);
    const double before_eta = truth.linear_predictor(r.x, r.z);
    d.z.row(0) *= -3;
    d.z(0, 0) += 1;
    const RecordView r2 = d.record(0);
    CHECK(s(r2.x) == before_score);
    CHECK(truth.linear_predictor(r2.x, r2.z) != before_eta);
}

TEST_CASE("score data generator", "[score_model]") {
    const ScoreModel truth = synthetic_score_truth();
    const Dataset a = generate_score_data(400, truth, 1);
    const Dataset b = generate_score_data(400, truth, 1);
    CHECK(a.x == b.x);
    CHECK(a.w == b.w);
    CHECK(a.y == b.y);
    CHECK(a.x.cols() == 8);
    CHECK(a.z.cols() == 2);
    CHECK(a.x.leftCols(5).minCoeff() >= 0);
    CHECK(a.x.col(7).minCoeff() >= 3);
    CHECK(a.x.col(7).maxCoeff() <= 12);
    const double rate = a.w.mean();
    CHECK(rate > 0.05);
    CHECK(rate < 0.95);
    ScoreDataOptions o;
    o.y_equals_w = true;
    const Dataset c = generate_score_data(400, truth, 1, o);
    CHECK(c.y == c.w);
}

TEST_CASE("split test layout and B = 1 downstream test", "[score_model]") {
    ScoreDataOptions o;
    o.y_effect = 1.0;
    const Dataset d = generate_score_data(300, synthetic_score_truth(), 11, o);
    ScoreSplitTest test;
    CHECK(test.min_per_side() == 23);
    test.prepare(d);
    const auto report = downstream_logistic_test(d, 1, 100, {3, 4});
    const SplitPlan plan = make_split_plan(300, 1, 0.5, 3, test.min_per_side());
    const SplitOutcome single = test.bind(d)(plan.row(0));
    CHECK(report.aggregate.p_H1 == single.p);
    CHECK(report.engine == "bernoulli");
    CHECK(report.null_p.size() == 100);
}
