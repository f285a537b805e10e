// Acceptance checks. One PASS/FAIL line per criterion:
//   acceptance --criterion N [--threads T] [--seed S] [--out-dir DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "splitboot/splitboot.hpp"
#include "../support/oracles.hpp"

using namespace splitboot;

namespace {

struct Context {
    int threads = 1;
    Seed seed = 42;
    std::string out_dir;
};

struct Verdict {
    bool pass = false;
    std::string detail;
};

void log(const std::string& s) { std::cerr << s << std::endl; }

void save_table(const Context& ctx, const ResultTable& t, const std::string& name) {
    std::cout << table_to_text(t) << std::endl;
    if (ctx.out_dir.empty()) return;
    std::filesystem::create_directories(ctx.out_dir);
    emit_table(t, TableFormat::csv, (std::filesystem::path(ctx.out_dir) / (name + ".csv")).string());
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// Reference tables. Rows follow the distribution list / beta0 grid, columns the B grid.
const std::vector<std::string> kDists = {"normal", "t8", "t4", "laplace1", "laplace2", "laplace4", "mix5p10", "mix10p50"};

const std::vector<std::array<double, 4>> kLevelExact = {
    {.050, .046, .050, .046}, {.053, .054, .049, .050}, {.051, .048, .053, .051}, {.058, .049, .053, .049},
    {.049, .046, .049, .050}, {.045, .050, .052, .053}, {.045, .058, .050, .051}, {.049, .054, .048, .052}};

const std::vector<std::array<double, 4>> kLevelResidual = {
    {.051, .046, .048, .050}, {.053, .055, .049, .050}, {.050, .048, .052, .052}, {.056, .053, .049, .047},
    {.051, .051, .048, .049}, {.051, .058, .053, .052}, {.045, .059, .054, .053}, {.048, .051, .047, .048}};

// Columns B = 10, 25, 50, 100, 250, F-test.
const std::vector<std::array<double, 6>> kPowerExact = {
    {.05, .05, .06, .05, .05, .05}, {.07, .08, .08, .08, .08, .10}, {.17, .18, .18, .17, .18, .17},
    {.33, .36, .37, .36, .37, .36}, {.57, .61, .61, .61, .62, .60}, {.78, .80, .81, .81, .82, .80},
    {.91, .93, .94, .94, .94, .95}, {.98, .98, .98, .98, .99, .98}, {.99, 1, 1, 1, 1, 1},
    {1, 1, 1, 1, 1, 1},             {1, 1, 1, 1, 1, 1}};

const std::vector<std::array<double, 5>> kPowerResidual = {
    {.05, .05, .05, .05, .04}, {.07, .08, .08, .08, .07}, {.17, .18, .18, .16, .18}, {.33, .36, .36, .36, .37},
    {.57, .61, .60, .60, .61}, {.78, .80, .81, .81, .81}, {.91, .93, .94, .93, .94}, {.98, .98, .98, .98, .99},
    {.99, 1, 1, 1, 1},         {1, 1, 1, 1, 1},           {1, 1, 1, 1, 1}};

ProgressFn progress_log() {
    return [](const std::string& s) { log(s); };
}

// ---------------------------------------------------------------------------- 1, 2

template <std::size_t C>
Verdict level_check(const Context& ctx, Experiment e, const std::vector<std::array<double, C>>& reference, const std::string& name) {
    ExperimentSpec s = ExperimentSpec::defaults(e);
    s.master_seed = ctx.seed;
    s.dists = kDists;
    const ResultTable t = run_level(s, ctx.threads, progress_log());
    save_table(ctx, t, name);
    double worst = 0, worst_ref = 0;
    std::string where;
    for (Eigen::Index r = 0; r < t.estimate.rows(); ++r)
        for (Eigen::Index c = 0; c < t.estimate.cols(); ++c) {
            const double d = std::abs(t.estimate(r, c) - 0.05);
            if (d >= worst) {
                worst = d;
                where = t.rows[static_cast<std::size_t>(r)] + "/" + t.cols[static_cast<std::size_t>(c)];
            }
            worst_ref = std::max(worst_ref, std::abs(t.estimate(r, c) - reference[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]));
        }
    return {worst <= 0.02 + 1e-12, "max |level - 0.05| = " + fmt(worst) + " at " + where + " (tolerance 0.02); max |level - reference| = " +
                                       fmt(worst_ref)};
}

// ---------------------------------------------------------------------------- 3, 4

template <std::size_t C>
Verdict power_check(const Context& ctx, Experiment e, const std::vector<std::array<double, C>>& reference, const std::string& name) {
    ExperimentSpec s = ExperimentSpec::defaults(e);
    s.master_seed = ctx.seed;
    const ResultTable t = run_power(s, ctx.threads, progress_log());
    save_table(ctx, t, name);
    const std::size_t nb = s.b_grid.size();
    double worst = 0;
    std::string where;
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < nb; ++c) {
            const double d = std::abs(t.estimate(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) - reference[r][c]);
            if (d >= worst) {
                worst = d;
                where = t.rows[r] + "/" + t.cols[c];
            }
        }
    bool pass = worst <= 0.05 + 1e-12;
    std::string detail = "max |power - reference| = " + fmt(worst) + " at " + where + " (tolerance 0.05)";
    if (e == Experiment::power) {
        double gap = 0;
        for (Eigen::Index r = 0; r < t.estimate.rows(); ++r)
            for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(nb); ++c)
                gap = std::max(gap, std::abs(t.estimate(r, c) - t.estimate(r, static_cast<Eigen::Index>(nb))));
        pass = pass && gap <= 0.05 + 1e-12;
        detail += "; max |bootstrap - F| = " + fmt(gap) + " (tolerance 0.05)";
    }
    return {pass, detail};
}

// ---------------------------------------------------------------------------- 5

Verdict var_curve_check(const Context& ctx) {
    ExperimentSpec s = ExperimentSpec::defaults(Experiment::var_curve);
    s.master_seed = ctx.seed;
    const ResultTable curve = run_var_curve(s, ctx.threads);
    const double v50 = curve.at("50", "analytic"), v1 = curve.at("1", "analytic");
    bool pass = std::abs(v50 - 0.51) < 1e-12 && std::abs(v1 - 1.0) < 1e-12;
    std::string detail = "analytic B=50: " + fmt(v50, 6) + ", B=1: " + fmt(v1, 6);

    s.b_grid = {1, 10, 25, 50, 100, 200};
    s.mc_reps = 20000;
    const ResultTable mc = run_var_curve(s, ctx.threads);
    save_table(ctx, mc, "var_curve_mc");
    double worst = 0;
    for (Eigen::Index r = 0; r < mc.estimate.rows(); ++r)
        worst = std::max(worst, std::abs(mc.estimate(r, 1) - mc.estimate(r, 2)) / mc.se(r, 1));
    double gap = 0;
    for (Eigen::Index r = 0; r < mc.estimate.rows(); ++r) gap = std::max(gap, std::abs(mc.estimate(r, 2) - mc.estimate(r, 0)));
    pass = pass && worst <= 3;
    detail += "; Monte Carlo vs finite-n curve: max " + fmt(worst, 2) + " SE (tolerance 3); max |finite-n - analytic| = " + fmt(gap, 4);
    return {pass, detail};
}

// ---------------------------------------------------------------------------- 6

Verdict meinshausen_check(const Context& ctx) {
    ExperimentSpec s = ExperimentSpec::defaults(Experiment::mb_level);
    s.master_seed = ctx.seed;
    const ResultTable t = run_mb_level(s, ctx.threads, progress_log());
    save_table(ctx, t, "mb_level");
    const double level = t.estimate(0, 0);
    s.mb_known_sigma = true;
    const ResultTable known = run_mb_level(s, ctx.threads, progress_log());
    save_table(ctx, known, "mb_level_known_sigma");
    return {level < 0.002, "null rejection rate " + fmt(level, 5) + " over " + std::to_string(s.reps) +
                               " reps at B = 50 with split t-tests (bound 0.002); with known-sd z-tests " + fmt(known.estimate(0, 0), 5)};
}

// ---------------------------------------------------------------------------- 7

Verdict exactness_check(const Context& ctx) {
    const std::size_t reps = 2000, n = 100, splits = 50, null_sims = 1000;
    const ErrorDistribution law = ErrorDistribution::normal();
    const Eigen::Vector3d theta = Eigen::Vector3d::Ones() / std::sqrt(3.0);
    const IndexSplitTest test(3, law.sd());
    std::vector<double> p(reps);
    parallel_for(reps, ctx.threads, [&](std::size_t r) {
        const Dataset d = generate_level_power_data(static_cast<Eigen::Index>(n), theta, 0.0, law, derive_seed(ctx.seed, {0x37, r}));
        const TestSeeds seeds{derive_seed(ctx.seed, {0x37, r, 1}), derive_seed(ctx.seed, {0x37, r, 2})};
        p[r] = bootstrap_test(test, d, splits, null_sims, ExactParametric{law}, 0.5, seeds).p_star;
    });
    const double ks = stats::ks_uniform_statistic(p);
    const double crit = stats::ks_critical_one_sample(reps);
    std::size_t below = 0;
    for (double v : p) below += v < 0.05;
    return {ks <= crit, "KS distance of p* from U(0,1) = " + fmt(ks, 4) + " (1% critical value " + fmt(crit, 4) +
                            "); level at 0.05 = " + fmt(static_cast<double>(below) / reps)};
}

// ---------------------------------------------------------------------------- 8

Verdict oracle_check(const Context& ctx) {
    double ls_err = 0, mb_err = 0, f_err = 0;

    // Closed-form least squares, through both the normal-equation family and the generic Newton path.
    for (Seed k = 0; k < 5; ++k) {
        const Dataset d = generate_level_power_data(12 + 3 * static_cast<Eigen::Index>(k), Eigen::Vector3d(1, -2, 0.5), 0.7,
                                                    ErrorDistribution::laplace(1), derive_seed(ctx.seed, {0x38, k}));
        Eigen::VectorXd w(d.size());
        for (Eigen::Index i = 0; i < d.size(); ++i) w[i] = static_cast<double>((i * 7 + static_cast<Eigen::Index>(k)) % 3);
        const Eigen::MatrixXd xw = d.x.transpose() * w.asDiagonal();
        const Eigen::VectorXd closed = (xw * d.x).inverse() * (xw * d.y);
        auto design = [](const RecordView& r, Eigen::Ref<Eigen::VectorXd> out) {
            for (std::size_t j = 0; j < r.x.size(); ++j) out[static_cast<Eigen::Index>(j)] = r.x[j];
        };
        auto response = [](const RecordView& r) { return r.y; };
        EstimatingEquation ls = linear_least_squares(3, design, response);
        EstimatingEquation generic = ls;
        generic.family = Family::generic;
        generic.jacobian = nullptr;
        const std::vector<double> wv(w.data(), w.data() + w.size());
        for (const EstimatingEquation* eq : {&ls, &generic}) {
            const SolveResult r = solve_equation(*eq, d, wv, Eigen::VectorXd::Zero(3));
            ls_err = std::max(ls_err, (r.param - closed).cwiseAbs().maxCoeff());
        }
    }

    Xoshiro256 rng(derive_seed(ctx.seed, {0x38, 100}));
    for (std::size_t b : {1, 7, 20, 50}) {
        std::vector<double> pv(b);
        for (double& v : pv) v = rng.uniform() * rng.uniform();
        for (double gmin : {0.05, 0.2}) {
            MeinshausenOptions o;
            o.gamma_min = gmin;
            mb_err = std::max(mb_err, std::abs(meinshausen_pvalue(pv, o) - oracle::meinshausen_dense_grid(pv, gmin, 20000000)));
        }
    }

    for (Seed k = 0; k < 5; ++k) {
        const Eigen::Index n = 20 + 20 * static_cast<Eigen::Index>(k);
        const Dataset d = generate_level_power_data(n, Eigen::Vector3d::Ones(), 0.05 * static_cast<double>(k),
                                                    ErrorDistribution::student_t(4), derive_seed(ctx.seed, {0x38, 200, k}));
        const Eigen::VectorXd b = (d.x.transpose() * d.x).ldlt().solve(d.x.transpose() * d.y);
        const double rss = (d.y - d.x * b).squaredNorm();
        const double df2 = static_cast<double>(n - 3);
        const double f = ((d.y.squaredNorm() - rss) / 3) / (rss / df2);
        f_err = std::max(f_err, std::abs(f_test(d) - oracle::f_upper_tail(f, 3, df2)));
    }

    const bool pass = ls_err <= 1e-8 && mb_err <= 1e-6 && f_err <= 1e-10;
    std::ostringstream os;
    os << std::scientific << std::setprecision(2) << "least squares max error " << ls_err << " (1e-8); Meinshausen vs dense grid "
       << mb_err << " (1e-6); F-test vs incomplete beta " << f_err << " (1e-10)";
    return {pass, os.str()};
}

// ---------------------------------------------------------------------------- 9

constexpr std::size_t kScoreN = 1500;

struct ScoreRunCounts {
    std::size_t rejections = 0;
    std::size_t failures = 0;
    std::size_t reps = 0;
    double rate() const { return static_cast<double>(rejections) / static_cast<double>(reps); }
};

ScoreRunCounts score_downstream_rate(const Context& ctx, double effect, std::uint64_t tag, std::size_t reps) {
    constexpr std::size_t n = kScoreN, splits = 5, null_sims = 100;
    ScoreDataOptions o;
    o.y_effect = effect;
    const ScoreModel truth = synthetic_score_truth();
    std::vector<char> reject(reps, 0), failed(reps, 0);
    parallel_for(reps, ctx.threads, [&](std::size_t r) {
        try {
            const Dataset d = generate_score_data(n, truth, derive_seed(ctx.seed, {0x39, tag, r}), o);
            const TestSeeds seeds{derive_seed(ctx.seed, {0x39, tag, r, 1}), derive_seed(ctx.seed, {0x39, tag, r, 2})};
            reject[r] = downstream_logistic_test(d, splits, null_sims, seeds).reject(0.05);
        } catch (const std::exception&) {
            failed[r] = 1;
        }
    });
    ScoreRunCounts c;
    c.reps = reps;
    for (std::size_t r = 0; r < reps; ++r) {
        c.rejections += reject[r];
        c.failures += failed[r];
    }
    return c;
}

Verdict score_check(const Context& ctx) {
    const ScoreModel truth = synthetic_score_truth();
    std::size_t shape_bad = 0, bound_bad = 0;
    double top_gap = 0;
    for (Seed k = 0; k < 10; ++k) {
        const Dataset d = generate_score_data(300, truth, derive_seed(ctx.seed, {0x39, 0, k}));
        const ScoreFit fit = fit_score_model(d);
        const CovariateRanges rg = activity_ranges(d);
        for (std::size_t j = 0; j < 8; ++j) {
            std::vector<double> v(200);
            const double step = (rg.hi[j] - rg.lo[j]) / 199.0;
            for (std::size_t g = 0; g < 200; ++g) v[g] = fit.model.marginal(j, rg.lo[j] + step * static_cast<double>(g));
            for (std::size_t g = 1; g < 200; ++g) {
                if (j < 5 && v[g] < v[g - 1] - 1e-12) ++shape_bad;
                if ((j == 5 || j == 6) && v[g] > v[g - 1] + 1e-12) ++shape_bad;
                if ((j < 5 || j == 7) && g >= 2 && v[g] - 2 * v[g - 1] + v[g - 2] > 1e-9) ++shape_bad;
            }
        }
        const RescaledScore s = rescale_score(fit.model, rg);
        double top = 0;
        for (std::size_t j = 0; j < 8; ++j) top += s.max_contribution(j);
        top_gap = std::max(top_gap, std::abs(top - 100));
        for (Eigen::Index i = 0; i < d.size(); ++i) {
            const double v = s(d.record(i).x);
            if (!(v >= 0 && v <= 100)) ++bound_bad;
        }
    }
    log("score: shape violations " + std::to_string(shape_bad) + ", bound violations " + std::to_string(bound_bad));

    double min_z = 1e300;
    {
        ScoreDataOptions o;
        o.y_effect = 1.5;
        for (Seed k = 0; k < 5; ++k) {
            const Dataset d = generate_score_data(kScoreN, truth, derive_seed(ctx.seed, {0x39, 2, k}), o);
            const ScoreFitOptions fo;
            const ScoreFit fit = fit_score_model(d, fo);
            const StackedModel m = make_score_stacked_model(5, d.z.cols(), activity_ranges(d), fit.params, score_penalty(d, fo));
            min_z = std::min(min_z, std::abs(wald_test_detail(m, d, 0, fo.solve).z));
        }
    }
    log("score: min full-sample Wald |z| at effect 1.5 = " + fmt(min_z, 2));

    const ScoreRunCounts null = score_downstream_rate(ctx, 0.0, 1, 200);
    log("score: null rejection " + fmt(null.rate()) + " (" + std::to_string(null.failures) + " failed)");
    const ScoreRunCounts power = score_downstream_rate(ctx, 1.5, 2, 200);
    log("score: power " + fmt(power.rate()) + " (" + std::to_string(power.failures) + " failed)");

    const bool pass = shape_bad == 0 && bound_bad == 0 && top_gap < 1e-9 && std::abs(null.rate() - 0.05) <= 0.03 &&
                      power.rate() >= 0.95 && min_z > 5;
    return {pass, "shape violations " + std::to_string(shape_bad) + ", [0,100] violations " + std::to_string(bound_bad) +
                      "; null level " + fmt(null.rate()) + " (0.05 +/- 0.03); power " + fmt(power.rate()) +
                      " (>= 0.95) at effect 1.5 with full-sample Wald |z| >= " + fmt(min_z, 1) + "; failed reps " +
                      std::to_string(null.failures + power.failures)};
}

// ---------------------------------------------------------------------------- 10

std::string reduced_runs(Seed seed, int threads) {
    std::ostringstream out;
    for (Experiment e : {Experiment::level, Experiment::level_residual}) {
        ExperimentSpec s = ExperimentSpec::defaults(e);
        s.master_seed = seed;
        s.dists = {"normal", "t4", "mix10p50"};
        s.b_grid = {10, 50};
        s.reps = 40;
        s.null_sims = 200;
        out << table_to_csv(run_level(s, threads));
    }
    for (Experiment e : {Experiment::power, Experiment::power_residual}) {
        ExperimentSpec s = ExperimentSpec::defaults(e);
        s.master_seed = seed;
        s.beta0_grid = {0, 0.3, 0.6};
        s.b_grid = {10, 25};
        s.reps = 40;
        s.null_sims = 200;
        out << table_to_csv(run_power(s, threads));
    }
    {
        ExperimentSpec s = ExperimentSpec::defaults(Experiment::var_curve);
        s.master_seed = seed;
        s.b_grid = {1, 50, 200};
        s.mc_reps = 500;
        out << table_to_csv(run_var_curve(s, threads));
    }
    {
        ExperimentSpec s = ExperimentSpec::defaults(Experiment::mb_level);
        s.master_seed = seed;
        s.reps = 2000;
        out << table_to_csv(run_mb_level(s, threads));
    }
    {
        ScoreDataOptions o;
        o.y_effect = 1.0;
        const Dataset d = generate_score_data(300, synthetic_score_truth(), derive_seed(seed, {0x3a}), o);
        const BootstrapTestReport r = downstream_logistic_test(d, 5, 100, {derive_seed(seed, {0x3a, 1}), derive_seed(seed, {0x3a, 2})},
                                                               {}, ParametricBernoulli{}, 0.5, threads);
        out << std::setprecision(17) << r.p_star << ',' << r.aggregate.p_H1;
        for (double p : r.aggregate.p_b) out << ',' << p;
        for (double p : r.null_p) out << ',' << p;
        out << '\n';
    }
    return out.str();
}

Verdict determinism_check(const Context& ctx) {
    const int many = std::max(4, ctx.threads);
    const std::string a = reduced_runs(ctx.seed, 1);
    const std::string b = reduced_runs(ctx.seed, 1);
    const std::string c = reduced_runs(ctx.seed, many);
    const std::string other = reduced_runs(ctx.seed + 1, many);
    const bool pass = a == b && a == c && a != other;
    return {pass, std::string("repeat ") + (a == b ? "identical" : "DIFFERS") + "; threads 1 vs " + std::to_string(many) + " " +
                      (a == c ? "identical" : "DIFFERS") + "; another seed " + (a != other ? "differs" : "IDENTICAL") + " (" +
                      std::to_string(a.size()) + " bytes compared)"};
}

const std::map<int, std::string> kNames = {
    {1, "level, known error law"},
    {2, "level, residual resampling"},
    {3, "power, known error law, and F-test agreement"},
    {4, "power, residual resampling"},
    {5, "variance of the split-averaged estimator"},
    {6, "Meinshausen aggregation conservativeness"},
    {7, "exactness of p* under the null"},
    {8, "oracle equivalences"},
    {9, "synthetic score pipeline"},
    {10, "determinism across repeats and thread counts"},
};

Verdict run_criterion(const Context& ctx, int c) {
    switch (c) {
        case 1: return level_check(ctx, Experiment::level, kLevelExact, "level_exact");
        case 2: return level_check(ctx, Experiment::level_residual, kLevelResidual, "level_residual");
        case 3: return power_check(ctx, Experiment::power, kPowerExact, "power_exact");
        case 4: return power_check(ctx, Experiment::power_residual, kPowerResidual, "power_residual");
        case 5: return var_curve_check(ctx);
        case 6: return meinshausen_check(ctx);
        case 7: return exactness_check(ctx);
        case 8: return oracle_check(ctx);
        case 9: return score_check(ctx);
        case 10: return determinism_check(ctx);
        default: throw std::invalid_argument("unknown criterion");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitboot acceptance checks"};
    std::vector<int> criteria;
    Context ctx;
    ctx.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    app.add_option("--criterion", criteria, "criterion numbers (1-10); all when omitted")->check(CLI::Range(1, 10));
    app.add_option("--threads", ctx.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--seed", ctx.seed, "master seed");
    app.add_option("--out-dir", ctx.out_dir, "directory for the CSV tables");
    CLI11_PARSE(app, argc, argv);
    if (criteria.empty())
        for (int c = 1; c <= 10; ++c) criteria.push_back(c);

    bool all = true;
    for (int c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = run_criterion(ctx, c);
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "criterion " << c << " [" << (v.pass ? "PASS" : "FAIL") << "] " << kNames.at(c) << ": " << v.detail << " ("
                  << fmt(secs, 1) << " s)" << std::endl;
        all = all && v.pass;
    }
    return all ? 0 : 1;
}
