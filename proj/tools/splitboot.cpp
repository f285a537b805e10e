// splitboot command-line driver.
//
//   splitboot level      --dist normal,t4 --splits 10,50 --reps 1000 --null-sims 1000 --out level.csv
//   splitboot power      --beta0 0,0.2,0.4 --splits 50 --engine residual --out power.json
//   splitboot var-curve  --sigma 1 --rho 0.5 --b-max 200 --mc-reps 5000 --out curve.csv
//   splitboot mb-level   --splits 50 --reps 10000
//   splitboot test       --data mydata.csv --model index --splits 50 --null-sims 1000 --engine residual
//   splitboot demo-score --n 500 --effect 1 --data-out synthetic.csv
//
// Exit status: 0 success, 1 runtime failure, 2 usage error.
// SPLITBOOT_SEED sets the default of --seed.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "splitboot/splitboot.hpp"

namespace sb = splitboot;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::uint64_t seed = 42;
    int threads = 1;
    std::string out;
    std::string format;
    bool fast = false;
    bool timing = false;
    std::string config;
};

struct ExperimentFlags {
    std::vector<std::string> dists;
    std::size_t n = 0;
    std::vector<std::size_t> splits;
    std::vector<double> beta0;
    std::vector<double> theta;
    std::size_t reps = 0;
    std::size_t null_sims = 0;
    double alpha = 0;
    double pi = 0;
    std::string engine = "exact";
    double sigma = 0;
    double rho = 0;
    std::size_t b_max = 0;
    std::size_t mc_reps = 0;
    double gamma_min = 0;
    bool known_sigma = false;
};

struct TestFlags {
    std::string data;
    std::string model = "index";
    std::size_t splits = 50;
    std::size_t null_sims = 1000;
    std::string engine;
    std::string dist = "normal";
    double pi = 0.5;
};

struct DemoFlags {
    std::size_t n = 500;
    double effect = 1.0;
    std::size_t splits = 50;
    std::size_t null_sims = 200;
    std::string data_out;
};

bool given(CLI::App* app, const std::string& name) {
    const CLI::Option* opt = app->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

const auto kPositiveCount = CLI::Range(std::size_t{1}, std::size_t{1} << 40);

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "Master seed")->envname("SPLITBOOT_SEED");
    app->add_option("--threads", c.threads, "Worker threads")->check(CLI::Range(1, 1024));
    app->add_option("--out", c.out, "Output path");
    app->add_option("--format", c.format, "Output format: csv, json or text (default from --out extension, else csv)")
        ->check(CLI::IsMember({"csv", "json", "text"}));
}

void add_experiment_common(CLI::App* app, Common& c) {
    add_common(app, c);
    app->add_flag("--fast", c.fast, "Smoke profile: reps <= 200, null sims <= 300");
    app->add_flag("--timing", c.timing, "Include per-cell wall time in csv/json output");
    app->add_option("--config", c.config, "key=value experiment file; flags override it")->check(CLI::ExistingFile);
}

std::string resolve_format(const Common& c) {
    if (!c.format.empty()) return c.format;
    const auto ext = std::filesystem::path(c.out).extension().string();
    if (ext == ".json") return "json";
    if (ext == ".txt") return "text";
    return "csv";
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void echo(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::cout << "# resolved configuration\n";
    for (const auto& [k, v] : kv) std::cout << "#   " << k << " = " << v << "\n";
    std::cout.flush();
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// ---------------------------------------------------------------------------
// Experiments

sb::ExperimentSpec resolve_spec(sb::Experiment base, CLI::App* app, const Common& c, const ExperimentFlags& f) {
    sb::Experiment e = base;
    if (given(app, "--engine")) {
        const bool residual = f.engine == "residual";
        if (base == sb::Experiment::level) e = residual ? sb::Experiment::level_residual : sb::Experiment::level;
        if (base == sb::Experiment::power) e = residual ? sb::Experiment::power_residual : sb::Experiment::power;
    }
    sb::ExperimentSpec s = sb::ExperimentSpec::defaults(e);
    if (!c.config.empty()) {
        try {
            s = sb::spec_from_config(read_file(c.config));
        } catch (const std::invalid_argument& ex) {
            throw UsageError(std::string("--config: ") + ex.what());
        } catch (const sb::ParseError& ex) {
            throw UsageError(std::string("--config: ") + ex.what());
        }
        const auto family = [](sb::Experiment x) {
            switch (x) {
                case sb::Experiment::level_residual: return sb::Experiment::level;
                case sb::Experiment::power_residual: return sb::Experiment::power;
                default: return x;
            }
        };
        if (family(s.experiment) != family(base))
            throw UsageError("--config: experiment '" + sb::experiment_name(s.experiment) + "' does not match the subcommand");
        if (given(app, "--engine")) s.experiment = e;
    }
    if (given(app, "--dist")) {
        s.dists.clear();
        for (const auto& d : f.dists) {
            if (d == "all") {
                for (const auto& name : sb::error_distribution_names()) s.dists.push_back(name);
            } else {
                s.dists.push_back(d);
            }
        }
    }
    if (given(app, "--n")) s.n = f.n;
    if (given(app, "--splits")) s.b_grid = f.splits;
    if (given(app, "--b-max")) {
        s.b_grid.clear();
        for (std::size_t b = 1; b <= f.b_max; ++b) s.b_grid.push_back(b);
    }
    if (given(app, "--beta0")) s.beta0_grid = f.beta0;
    if (given(app, "--theta")) s.theta = f.theta;
    if (given(app, "--reps")) s.reps = f.reps;
    if (given(app, "--null-sims")) s.null_sims = f.null_sims;
    if (given(app, "--alpha")) s.alpha = f.alpha;
    if (given(app, "--pi")) s.pi = f.pi;
    if (given(app, "--sigma")) s.sigma = f.sigma;
    if (given(app, "--rho")) s.rho = f.rho;
    if (given(app, "--mc-reps")) s.mc_reps = f.mc_reps;
    if (given(app, "--gamma-min")) s.gamma_min = f.gamma_min;
    if (given(app, "--known-sigma")) s.mb_known_sigma = f.known_sigma;
    if (given(app, "--seed") || c.config.empty()) s.master_seed = c.seed;
    if (c.fast) s = s.fast();
    try {
        s.validate();
    } catch (const std::invalid_argument& ex) {
        throw UsageError(std::string("invalid configuration: ") + ex.what());
    }
    return s;
}

int run_experiment_cmd(sb::Experiment base, CLI::App* app, const Common& c, const ExperimentFlags& f) {
    const sb::ExperimentSpec spec = resolve_spec(base, app, c, f);
    auto kv = sb::spec_entries(spec);
    kv.emplace_back("threads", std::to_string(c.threads));
    kv.emplace_back("out", c.out.empty() ? "(stdout only)" : c.out);
    kv.emplace_back("format", resolve_format(c));
    echo(kv);
    const auto t0 = std::chrono::steady_clock::now();
    const sb::ResultTable table =
        sb::run_experiment(spec, c.threads, [](const std::string& line) { std::cerr << line << std::endl; });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << sb::table_to_text(table);
    std::cerr << "elapsed " << fmt(secs, 1) << " s" << std::endl;
    if (!c.out.empty()) sb::emit_table(table, sb::table_format_from_name(resolve_format(c)), c.out, c.timing);
    return 0;
}

void add_experiment_flags(CLI::App* app, ExperimentFlags& f, sb::Experiment e) {
    const bool rates = e != sb::Experiment::var_curve;
    if (rates) {
        app->add_option("--dist", f.dists, "Error distributions (comma list or 'all')")
            ->delimiter(',')
            ->check(CLI::IsMember([] {
                auto v = sb::error_distribution_names();
                v.push_back("all");
                return v;
            }()));
        app->add_option("--reps", f.reps, "Monte Carlo replications")->check(kPositiveCount);
        app->add_option("--alpha", f.alpha, "Test level")->check(CLI::Range(1e-12, 1.0));
        app->add_option("--theta", f.theta, "Index direction (comma list)")->delimiter(',');
    }
    app->add_option("--n", f.n, "Sample size")->check(CLI::Range(std::size_t{4}, std::size_t{1} << 30));
    app->add_option("--splits", f.splits, "Numbers of splits B (comma list)")->delimiter(',')->check(kPositiveCount);
    app->add_option("--pi", f.pi, "Training fraction")->check(CLI::Range(1e-9, 1 - 1e-9));
    if (e == sb::Experiment::level || e == sb::Experiment::power) {
        app->add_option("--null-sims", f.null_sims, "Null replicates N")->check(CLI::Range(std::size_t{100}, std::size_t{1} << 30));
        app->add_option("--engine", f.engine, "Null engine: exact or residual")->check(CLI::IsMember({"exact", "residual"}));
    }
    if (e == sb::Experiment::power) app->add_option("--beta0", f.beta0, "Slopes (comma list)")->delimiter(',');
    if (e == sb::Experiment::var_curve) {
        app->add_option("--sigma", f.sigma, "Error standard deviation")->check(CLI::PositiveNumber);
        app->add_option("--rho", f.rho, "Between-split correlation")->check(CLI::Range(0.0, 1.0));
        app->add_option("--b-max", f.b_max, "Curve over B = 1..b-max")->check(kPositiveCount)->excludes("--splits");
        app->add_option("--mc-reps", f.mc_reps, "Monte Carlo overlay replications (0 disables)");
    }
    if (e == sb::Experiment::mb_level) {
        app->add_option("--gamma-min", f.gamma_min, "Lower quantile bound")->check(CLI::Range(1e-9, 1 - 1e-9));
        app->add_flag("--known-sigma", f.known_sigma, "Split z-tests with the error sd known");
    }
}

// ---------------------------------------------------------------------------
// test

nlohmann::json report_json(const sb::BootstrapTestReport& r) {
    nlohmann::json j;
    j["p_star"] = r.p_star;
    j["p_H1"] = r.aggregate.p_H1;
    j["beta0_hat"] = r.aggregate.beta_bar;
    j["splits"] = r.splits;
    j["null_sims"] = r.N;
    j["pi"] = r.pi;
    j["engine"] = r.engine;
    j["seeds"] = {{"split", r.seeds.split}, {"null", r.seeds.null}};
    j["p_split_min"] = r.aggregate.p_min();
    j["p_split_max"] = r.aggregate.p_max();
    j["failed_splits"] = r.aggregate.failures.size();
    j["null_redraws"] = r.null_redraws;
    auto finite_or_null = [](const std::vector<double>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (double x : v) a.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
        return a;
    };
    j["p_split"] = finite_or_null(r.aggregate.p_b);
    j["beta_split"] = finite_or_null(r.aggregate.beta_b);
    j["null_p"] = r.null_p;
    return j;
}

void print_report(const sb::BootstrapTestReport& r) {
    std::cout << "p*              " << fmt(r.p_star) << "\n"
              << "p_H1            " << fmt(r.aggregate.p_H1) << "\n"
              << "beta0_hat       " << fmt(r.aggregate.beta_bar, 6) << "\n"
              << "B               " << r.splits << "\n"
              << "N               " << r.N << "\n"
              << "engine          " << r.engine << "\n"
              << "split p range   [" << fmt(r.aggregate.p_min()) << ", " << fmt(r.aggregate.p_max()) << "]\n"
              << "failed splits   " << r.aggregate.failures.size() << "\n";
}

void write_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

sb::TestSeeds seeds_from(std::uint64_t seed) { return {sb::derive_seed(seed, {1}), sb::derive_seed(seed, {2})}; }

int run_test_cmd(const Common& c, const TestFlags& f) {
    if (!c.format.empty() && c.format != "json") throw UsageError("--format: the test report is written as json");
    const sb::Schema schema = sb::schema_from_name(f.model);
    const std::string engine = !f.engine.empty() ? f.engine : (schema == sb::Schema::score ? "bernoulli" : "residual");
    if (schema == sb::Schema::score && engine != "bernoulli") throw UsageError("--engine: the score model needs the bernoulli engine");
    if (schema == sb::Schema::index && engine == "bernoulli") throw UsageError("--engine: bernoulli applies to the score model only");
    echo({{"subcommand", "test"},
          {"data", f.data},
          {"model", f.model},
          {"splits", std::to_string(f.splits)},
          {"null_sims", std::to_string(f.null_sims)},
          {"engine", engine},
          {"dist", engine == "exact" ? f.dist : "(unused)"},
          {"pi", sb::detail::num(f.pi)},
          {"seed", std::to_string(c.seed)},
          {"threads", std::to_string(c.threads)},
          {"out", c.out.empty() ? "(stdout only)" : c.out}});

    const sb::Dataset data = sb::load_dataset(f.data, schema);
    const sb::TestSeeds seeds = seeds_from(c.seed);
    sb::BootstrapTestReport report;
    if (schema == sb::Schema::index) {
        const auto k = data.x.cols();
        std::optional<double> sigma;
        sb::NullEngine eng = sb::ResidualResample{};
        if (engine == "exact") {
            const sb::ErrorDistribution law = sb::error_distribution_from_name(f.dist);
            sigma = law.sd();
            eng = sb::ExactParametric{law};
        }
        if (k <= sb::IndexSplitTest::kMaxDim) {
            report = sb::bootstrap_test(sb::IndexSplitTest(k, sigma), data, f.splits, f.null_sims, eng, f.pi, seeds, c.threads);
        } else {
            report = sb::bootstrap_test(sb::make_index_stacked_model(k, sigma), data, f.splits, f.null_sims, eng, f.pi, seeds,
                                        {}, c.threads);
        }
    } else {
        report = sb::downstream_logistic_test(data, f.splits, f.null_sims, seeds, {}, sb::ParametricBernoulli{}, f.pi, c.threads);
    }
    print_report(report);
    if (!c.out.empty()) write_json(report_json(report), c.out);
    return 0;
}

// ---------------------------------------------------------------------------
// demo-score

int run_demo_cmd(const Common& c, const DemoFlags& f) {
    if (!c.format.empty() && c.format != "json") throw UsageError("--format: the demo report is written as json");
    echo({{"subcommand", "demo-score"},
          {"n", std::to_string(f.n)},
          {"effect", sb::detail::num(f.effect)},
          {"splits", std::to_string(f.splits)},
          {"null_sims", std::to_string(f.null_sims)},
          {"seed", std::to_string(c.seed)},
          {"threads", std::to_string(c.threads)},
          {"data_out", f.data_out.empty() ? "(none)" : f.data_out},
          {"out", c.out.empty() ? "(stdout only)" : c.out}});

    const sb::ScoreModel truth = sb::synthetic_score_truth();
    sb::ScoreDataOptions dopts;
    dopts.y_effect = f.effect;
    const sb::Dataset data = sb::generate_score_data(f.n, truth, sb::derive_seed(c.seed, {0}), dopts);
    if (!f.data_out.empty()) sb::write_dataset(data, sb::Schema::score, f.data_out);

    const sb::ScoreFit fit = sb::fit_score_model(data);
    const sb::RescaledScore score = sb::rescale_score(fit.model, data);
    static const char* names[] = {"vig", "mod", "light", "mvpa", "weights", "sit_tv", "sit_other", "sleep"};
    std::cout << "Fitted behaviour score: maximum contribution per component (0-100 scale)\n";
    nlohmann::json contrib = nlohmann::json::object();
    for (std::size_t j = 0; j < score.offsets.size(); ++j) {
        std::cout << "  " << std::left << std::setw(10) << names[j] << std::right << std::setw(8) << fmt(score.max_contribution(j), 2)
                  << "\n";
        contrib[names[j]] = score.max_contribution(j);
    }
    std::cout << "full-sample fit: " << fit.solve.iterations << " iterations\n\n";

    const sb::BootstrapTestReport report =
        sb::downstream_logistic_test(data, f.splits, f.null_sims, seeds_from(c.seed), {}, sb::ParametricBernoulli{}, 0.5, c.threads);
    std::cout << "Downstream test of the score in logistic regression on (score, 1, Z)\n";
    print_report(report);
    if (!c.out.empty()) {
        nlohmann::json j;
        j["max_contribution"] = contrib;
        j["params"] = std::vector<double>(fit.params.data(), fit.params.data() + fit.params.size());
        j["test"] = report_json(report);
        write_json(j, c.out);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Split-sample bootstrap tests for stacked estimating equations"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    Common common;
    ExperimentFlags level_f, power_f, curve_f, mb_f;
    TestFlags test_f;
    DemoFlags demo_f;

    auto* level = app.add_subcommand("level", "Level of the bootstrap test under the null");
    add_experiment_common(level, common);
    add_experiment_flags(level, level_f, sb::Experiment::level);

    auto* power = app.add_subcommand("power", "Power of the bootstrap test and the F-test");
    add_experiment_common(power, common);
    add_experiment_flags(power, power_f, sb::Experiment::power);

    auto* curve = app.add_subcommand("var-curve", "Variance of the split-averaged estimator against B");
    add_experiment_common(curve, common);
    add_experiment_flags(curve, curve_f, sb::Experiment::var_curve);

    auto* mb = app.add_subcommand("mb-level", "Null rejection rate of the Meinshausen aggregated p-value");
    add_experiment_common(mb, common);
    add_experiment_flags(mb, mb_f, sb::Experiment::mb_level);

    auto* test = app.add_subcommand("test", "Bootstrap test on a CSV data set");
    add_common(test, common);
    test->add_option("--data", test_f.data, "Input CSV")->required()->check(CLI::ExistingFile);
    test->add_option("--model", test_f.model, "index (Y,x1..xk) or score (W,Y,vig,...,z1..zk)")
        ->check(CLI::IsMember({"index", "score"}));
    test->add_option("--splits", test_f.splits, "Number of splits B")->check(kPositiveCount);
    test->add_option("--null-sims", test_f.null_sims, "Null replicates N")->check(CLI::Range(std::size_t{100}, std::size_t{1} << 30));
    test->add_option("--engine", test_f.engine, "exact, residual (index) or bernoulli (score)")
        ->check(CLI::IsMember({"exact", "residual", "bernoulli"}));
    test->add_option("--dist", test_f.dist, "Error law for the exact engine")->check(CLI::IsMember(sb::error_distribution_names()));
    test->add_option("--pi", test_f.pi, "Training fraction")->check(CLI::Range(1e-9, 1 - 1e-9));

    auto* demo = app.add_subcommand("demo-score", "Fit and test a behaviour score on synthetic data");
    add_common(demo, common);
    demo->add_option("--n", demo_f.n, "Sample size")->check(CLI::Range(std::size_t{100}, std::size_t{1} << 30));
    demo->add_option("--effect", demo_f.effect, "Score effect on the downstream outcome");
    demo->add_option("--splits", demo_f.splits, "Number of splits B")->check(kPositiveCount);
    demo->add_option("--null-sims", demo_f.null_sims, "Null replicates N")->check(CLI::Range(std::size_t{100}, std::size_t{1} << 30));
    demo->add_option("--data-out", demo_f.data_out, "Write the synthetic data set here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        std::cerr << "run 'splitboot --help-all' for the flag reference\n";
        return 2;
    }

    try {
        if (*level) return run_experiment_cmd(sb::Experiment::level, level, common, level_f);
        if (*power) return run_experiment_cmd(sb::Experiment::power, power, common, power_f);
        if (*curve) return run_experiment_cmd(sb::Experiment::var_curve, curve, common, curve_f);
        if (*mb) return run_experiment_cmd(sb::Experiment::mb_level, mb, common, mb_f);
        if (*test) return run_test_cmd(common, test_f);
        if (*demo) return run_demo_cmd(common, demo_f);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
