#pragma once

// Monte Carlo drivers for the level, power, variance-curve and Meinshausen
// studies, with table output in csv, json and plain-text grid form.
//
// Seeding: replication r of a study derives its data from
// (master_seed, tag, row, r) and its split plan and null sample from
// (master_seed, tag, row, col, r), so results do not depend on the thread
// count or on which cells are requested alongside.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "splitboot/baselines.hpp"
#include "splitboot/boot_test.hpp"
#include "splitboot/distributions.hpp"
#include "splitboot/errors.hpp"
#include "splitboot/models/index_model.hpp"
#include "splitboot/parallel.hpp"
#include "splitboot/rng.hpp"
#include "splitboot/splitting.hpp"
#include "splitboot/stats.hpp"

namespace splitboot {

// ============================================================================
// Experiment specification
// ============================================================================

enum class Experiment { level, level_residual, power, power_residual, var_curve, mb_level };

inline std::string experiment_name(Experiment e) {
    switch (e) {
        case Experiment::level: return "level";
        case Experiment::level_residual: return "level_residual";
        case Experiment::power: return "power";
        case Experiment::power_residual: return "power_residual";
        case Experiment::var_curve: return "var_curve";
        case Experiment::mb_level: return "mb_level";
    }
    return "?";
}

inline Experiment experiment_from_name(const std::string& s) {
    for (Experiment e : {Experiment::level, Experiment::level_residual, Experiment::power, Experiment::power_residual,
                         Experiment::var_curve, Experiment::mb_level})
        if (experiment_name(e) == s) return e;
    throw std::invalid_argument("unknown experiment '" + s + "'");
}

inline bool uses_residual_engine(Experiment e) { return e == Experiment::level_residual || e == Experiment::power_residual; }

struct ExperimentSpec {
    Experiment experiment = Experiment::level;
    std::size_t n = 100;
    std::vector<double> theta = {1, 1, 1};
    std::vector<double> beta0_grid = {0};
    std::vector<std::size_t> b_grid = {10, 25, 50, 100};
    std::vector<std::string> dists = error_distribution_names();
    std::size_t reps = 1000;
    std::size_t null_sims = 1000;
    double alpha = 0.05;
    Seed master_seed = 42;
    double pi = 0.5;
    double covariate_sd = kDefaultCovariateSd;
    // var_curve
    double sigma = 1.0;
    double rho = 0.5;
    std::size_t mc_reps = 0;  // Monte Carlo overlay replications; 0 disables
    // mb_level
    double gamma_min = 0.05;
    bool mb_known_sigma = false;  // split z-tests with the error sd known instead of t-tests

    // Full-scale defaults for each experiment.
    static ExperimentSpec defaults(Experiment e) {
        ExperimentSpec s;
        s.experiment = e;
        switch (e) {
            case Experiment::level:
            case Experiment::level_residual: break;
            case Experiment::power:
            case Experiment::power_residual:
                s.beta0_grid.clear();
                for (int k = 0; k <= 10; ++k) s.beta0_grid.push_back(k / 10.0);
                s.b_grid = {10, 25, 50, 100, 250};
                s.dists = {"normal"};
                break;
            case Experiment::var_curve:
                s.b_grid.clear();
                for (std::size_t b = 1; b <= 200; ++b) s.b_grid.push_back(b);
                s.dists = {"normal"};
                s.reps = 0;
                break;
            case Experiment::mb_level:
                s.b_grid = {50};
                s.dists = {"normal"};
                s.reps = 100000;
                break;
        }
        return s;
    }

    // Smoke-scale profile: reps 200, null sims 300.
    ExperimentSpec fast() const {
        ExperimentSpec s = *this;
        s.reps = std::min<std::size_t>(s.reps, 200);
        s.null_sims = std::min<std::size_t>(s.null_sims, 300);
        s.mc_reps = std::min<std::size_t>(s.mc_reps, 1000);
        return s;
    }

    void validate() const {
        const bool is_curve = experiment == Experiment::var_curve;
        if (!is_curve && reps < 1) throw std::invalid_argument("reps must be at least 1");
        if (b_grid.empty()) throw std::invalid_argument("B grid is empty");
        for (std::size_t b : b_grid)
            if (b < 1) throw std::invalid_argument("B values must be positive");
        if (is_curve) {
            if (!(sigma > 0)) throw std::invalid_argument("sigma must be positive");
            if (!(rho >= 0 && rho <= 1)) throw std::invalid_argument("rho must lie in [0, 1]");
            return;
        }
        if (dists.empty()) throw std::invalid_argument("distribution list is empty");
        for (const auto& d : dists) error_distribution_from_name(d);
        if (theta.empty()) throw std::invalid_argument("theta is empty");
        if (n < theta.size() + 2) throw std::invalid_argument("n must be at least dim(theta) + 2");
        if (!(alpha > 0 && alpha <= 1)) throw std::invalid_argument("alpha must lie in (0, 1]");
        if (!(pi > 0 && pi < 1)) throw std::invalid_argument("pi must lie in (0, 1)");
        if (experiment == Experiment::power || experiment == Experiment::power_residual) {
            if (beta0_grid.empty()) throw std::invalid_argument("beta0 grid is empty");
        }
        if (experiment != Experiment::mb_level && null_sims < 100)
            throw std::invalid_argument("null sims must be at least 100");
    }

    Eigen::VectorXd theta_vector() const {
        Eigen::VectorXd t(static_cast<Eigen::Index>(theta.size()));
        for (std::size_t j = 0; j < theta.size(); ++j) t[static_cast<Eigen::Index>(j)] = theta[j];
        return t / t.norm();
    }
};

// ----------------------------------------------------------------------------
// key=value serialization

namespace detail {

// Shortest decimal form that parses back to the same double.
inline std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string num(std::size_t v) { return std::to_string(v); }
inline std::string num(const std::string& v) { return v; }

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
    return out;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, ','))
        if (!cur.empty()) out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double x = 0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty()) throw std::invalid_argument("config key '" + key + "': not a number: '" + v + "'");
    return x;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw std::invalid_argument("config key '" + key + "': not a nonnegative integer: '" + v + "'");
    return std::stoull(v);
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> spec_entries(const ExperimentSpec& s) {
    using detail::num;
    return {{"experiment", experiment_name(s.experiment)},
            {"n", std::to_string(s.n)},
            {"theta", detail::join(s.theta)},
            {"beta0_grid", detail::join(s.beta0_grid)},
            {"B_grid", detail::join(s.b_grid)},
            {"dists", detail::join(s.dists)},
            {"reps", std::to_string(s.reps)},
            {"null_sims", std::to_string(s.null_sims)},
            {"alpha", num(s.alpha)},
            {"master_seed", std::to_string(s.master_seed)},
            {"pi", num(s.pi)},
            {"covariate_sd", num(s.covariate_sd)},
            {"sigma", num(s.sigma)},
            {"rho", num(s.rho)},
            {"mc_reps", std::to_string(s.mc_reps)},
            {"gamma_min", num(s.gamma_min)},
            {"mb_known_sigma", s.mb_known_sigma ? "1" : "0"}};
}

inline std::string spec_to_config(const ExperimentSpec& s) {
    std::ostringstream os;
    for (const auto& [k, v] : spec_entries(s)) os << k << "=" << v << "\n";
    return os.str();
}

// Lines `key=value`; blank lines and lines starting with '#' are ignored.
// Keys not present keep the defaults of the named experiment.
inline ExperimentSpec spec_from_config(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(lineno, 1, "expected key=value");
        kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
    }
    ExperimentSpec s = ExperimentSpec::defaults(kv.count("experiment") ? experiment_from_name(kv["experiment"]) : Experiment::level);
    for (const auto& [k, v] : kv) {
        if (k == "experiment") continue;
        else if (k == "n") s.n = detail::parse_uint(k, v);
        else if (k == "theta") {
            s.theta.clear();
            for (const auto& t : detail::split_list(v)) s.theta.push_back(detail::parse_double(k, t));
        } else if (k == "beta0_grid") {
            s.beta0_grid.clear();
            for (const auto& t : detail::split_list(v)) s.beta0_grid.push_back(detail::parse_double(k, t));
        } else if (k == "B_grid") {
            s.b_grid.clear();
            for (const auto& t : detail::split_list(v)) s.b_grid.push_back(detail::parse_uint(k, t));
        } else if (k == "dists") s.dists = detail::split_list(v);
        else if (k == "reps") s.reps = detail::parse_uint(k, v);
        else if (k == "null_sims") s.null_sims = detail::parse_uint(k, v);
        else if (k == "alpha") s.alpha = detail::parse_double(k, v);
        else if (k == "master_seed") s.master_seed = detail::parse_uint(k, v);
        else if (k == "pi") s.pi = detail::parse_double(k, v);
        else if (k == "covariate_sd") s.covariate_sd = detail::parse_double(k, v);
        else if (k == "sigma") s.sigma = detail::parse_double(k, v);
        else if (k == "rho") s.rho = detail::parse_double(k, v);
        else if (k == "mc_reps") s.mc_reps = detail::parse_uint(k, v);
        else if (k == "gamma_min") s.gamma_min = detail::parse_double(k, v);
        else if (k == "mb_known_sigma") s.mb_known_sigma = detail::parse_uint(k, v) != 0;
        else throw std::invalid_argument("unknown config key '" + k + "'");
    }
    return s;
}

// ============================================================================
// Result table
// ============================================================================

struct ResultTable {
    std::string title;
    std::string row_header;  // e.g. "Distribution\\B"
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Eigen::MatrixXd estimate;
    Eigen::MatrixXd se;
    std::vector<std::pair<std::string, std::string>> metadata;  // spec echo, seed, failure counts
    Eigen::MatrixXd seconds;  // wall time per cell; emitted only on request

    void resize(std::size_t r, std::size_t c) {
        estimate = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        se = estimate;
        seconds = estimate;
    }
    double at(const std::string& row, const std::string& col) const {
        const auto ri = std::find(rows.begin(), rows.end(), row);
        const auto ci = std::find(cols.begin(), cols.end(), col);
        if (ri == rows.end() || ci == cols.end()) throw std::out_of_range("ResultTable: no cell (" + row + ", " + col + ")");
        return estimate(ri - rows.begin(), ci - cols.begin());
    }
    std::string meta(const std::string& key) const {
        for (const auto& [k, v] : metadata)
            if (k == key) return v;
        return {};
    }
};

inline double rate_se(double p, std::size_t reps) { return std::sqrt(p * (1 - p) / static_cast<double>(reps)); }

// Row label used in the plain-text grid.
inline std::string distribution_label(const std::string& name) {
    static const std::map<std::string, std::string> labels = {
        {"normal", "Normal"},         {"t8", "t8"},
        {"t4", "t4"},                 {"laplace1", "Laplace s=1"},
        {"laplace2", "Laplace s=2"},  {"laplace4", "Laplace s=4"},
        {"mix5p10", "N(0,1)N(0,5)p=.1"}, {"mix10p50", "N(0,1)N(0,10)p=.5"}};
    const auto it = labels.find(name);
    return it == labels.end() ? name : it->second;
}

using ProgressFn = std::function<void(const std::string&)>;

// ============================================================================
// Level and power
// ============================================================================

namespace detail {

inline constexpr std::uint64_t kLevelTag = 0x4c;
inline constexpr std::uint64_t kPowerTag = 0x50;

struct CellCounts {
    std::vector<std::vector<std::size_t>> reject;  // [beta0][B]
    std::vector<std::vector<std::size_t>> failed_splits;
    std::vector<std::size_t> f_reject;             // [beta0]
    std::vector<double> seconds;                   // [B]
};

// For one error law: reps replications; each draws (X, e) once, forms
// Y = beta0 X'theta + e for every beta0 (common random numbers), and per B
// computes one null sample shared by every beta0. The null sample depends on
// the data only through X (exact engine) or the residuals of Y on X, which do
// not change with beta0.
inline CellCounts run_cells(const ExperimentSpec& s, const std::string& dist_name, std::uint64_t tag, std::size_t row,
                            bool residual, bool with_f, int threads) {
    const ErrorDistribution law = error_distribution_from_name(dist_name);
    const Eigen::VectorXd theta = s.theta_vector();
    const auto p = theta.size();
    const IndexSplitTest test(p, residual ? std::nullopt : std::optional<double>(law.sd()));
    const NullEngine engine = residual ? NullEngine(ResidualResample{}) : NullEngine(ExactParametric{law});
    const std::size_t nb = s.beta0_grid.size(), nc = s.b_grid.size();

    std::vector<std::uint8_t> reject(s.reps * nb * nc, 0), f_rej(s.reps * nb, 0);
    std::vector<std::size_t> fails(s.reps * nb * nc, 0);
    std::vector<double> secs(s.reps * nc, 0.0);

    parallel_for(s.reps, threads, [&](std::size_t r) {
        const Dataset base = generate_level_power_data(static_cast<Eigen::Index>(s.n), theta, 0.0, law,
                                                       derive_seed(s.master_seed, {tag, row, r}), s.covariate_sd);
        const Eigen::VectorXd signal = base.x * theta;
        std::vector<Dataset> data;
        data.reserve(nb);
        for (double b0 : s.beta0_grid) data.push_back(base.with_response(base.y + b0 * signal));
        if (with_f)
            for (std::size_t k = 0; k < nb; ++k) f_rej[r * nb + k] = f_test(data[k]) < s.alpha;

        for (std::size_t c = 0; c < nc; ++c) {
            const auto t0 = std::chrono::steady_clock::now();
            const std::size_t splits = s.b_grid[c];
            const SplitPlan plan = make_split_plan(s.n, splits, s.pi, derive_seed(s.master_seed, {tag, row, c, r, 1}),
                                                   test.min_per_side());
            const NullSample null = simulate_null(engine, test, base, {splits, s.pi}, s.null_sims,
                                                  derive_seed(s.master_seed, {tag, row, c, r, 2}));
            for (std::size_t k = 0; k < nb; ++k) {
                const PValueAggregate agg = detail::aggregate_bound(test.bind(data[k]), plan, 1, false);
                reject[(r * nb + k) * nc + c] = p_star(agg.p_H1, null.p) < s.alpha;
                fails[(r * nb + k) * nc + c] = agg.failures.size();
            }
            secs[r * nc + c] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    });

    CellCounts out;
    out.reject.assign(nb, std::vector<std::size_t>(nc, 0));
    out.failed_splits.assign(nb, std::vector<std::size_t>(nc, 0));
    out.f_reject.assign(nb, 0);
    out.seconds.assign(nc, 0.0);
    for (std::size_t r = 0; r < s.reps; ++r) {
        for (std::size_t k = 0; k < nb; ++k) {
            out.f_reject[k] += f_rej[r * nb + k];
            for (std::size_t c = 0; c < nc; ++c) {
                out.reject[k][c] += reject[(r * nb + k) * nc + c];
                out.failed_splits[k][c] += fails[(r * nb + k) * nc + c];
            }
        }
        for (std::size_t c = 0; c < nc; ++c) out.seconds[c] += secs[r * nc + c];
    }
    return out;
}

inline std::string engine_label(bool residual) { return residual ? "residual" : "exact"; }

}  // namespace detail

// Level table: rows are error laws, columns B; each cell is the fraction of
// reps with p* < alpha under beta0 = 0.
inline ResultTable run_level(const ExperimentSpec& spec, int threads = 1, const ProgressFn& progress = {}) {
    if (spec.experiment != Experiment::level && spec.experiment != Experiment::level_residual)
        throw std::invalid_argument("run_level: experiment must be level or level_residual");
    spec.validate();
    ExperimentSpec s = spec;
    s.beta0_grid = {0.0};
    const bool residual = uses_residual_engine(s.experiment);

    ResultTable t;
    t.title = residual ? "Level of the bootstrap test, residual resampling" : "Level of the bootstrap test, known error law";
    t.row_header = "Distribution\\B";
    t.rows = s.dists;
    for (std::size_t b : s.b_grid) t.cols.push_back(std::to_string(b));
    t.resize(t.rows.size(), t.cols.size());
    t.metadata = spec_entries(s);
    t.metadata.emplace_back("engine", detail::engine_label(residual));

    for (std::size_t row = 0; row < s.dists.size(); ++row) {
        const detail::CellCounts cc = detail::run_cells(s, s.dists[row], detail::kLevelTag, row, residual, false, threads);
        for (std::size_t c = 0; c < s.b_grid.size(); ++c) {
            const double est = static_cast<double>(cc.reject[0][c]) / static_cast<double>(s.reps);
            const auto ri = static_cast<Eigen::Index>(row), ci = static_cast<Eigen::Index>(c);
            t.estimate(ri, ci) = est;
            t.se(ri, ci) = rate_se(est, s.reps);
            t.seconds(ri, ci) = cc.seconds[c];
            t.metadata.emplace_back("failed_splits." + s.dists[row] + "." + t.cols[c], std::to_string(cc.failed_splits[0][c]));
            if (progress) {
                std::ostringstream os;
                os << "level " << s.dists[row] << " B=" << s.b_grid[c] << " -> " << std::fixed << std::setprecision(3) << est
                   << " (se " << t.se(ri, ci) << ")";
                progress(os.str());
            }
        }
    }
    return t;
}

// Power table: rows beta0, columns B, plus an F-Test column for the exact engine.
inline ResultTable run_power(const ExperimentSpec& spec, int threads = 1, const ProgressFn& progress = {}) {
    if (spec.experiment != Experiment::power && spec.experiment != Experiment::power_residual)
        throw std::invalid_argument("run_power: experiment must be power or power_residual");
    spec.validate();
    const ExperimentSpec& s = spec;
    const bool residual = uses_residual_engine(s.experiment);
    const bool with_f = !residual;
    if (s.dists.size() != 1) throw std::invalid_argument("run_power: exactly one error distribution");

    ResultTable t;
    t.title = residual ? "Power of the bootstrap test, residual resampling" : "Power of the bootstrap test and the F-test";
    t.row_header = "beta0\\B";
    for (double b0 : s.beta0_grid) {
        std::ostringstream os;
        os << b0;
        t.rows.push_back(os.str());
    }
    for (std::size_t b : s.b_grid) t.cols.push_back(std::to_string(b));
    if (with_f) t.cols.push_back("F-Test");
    t.resize(t.rows.size(), t.cols.size());
    t.metadata = spec_entries(s);
    t.metadata.emplace_back("engine", detail::engine_label(residual));

    const detail::CellCounts cc = detail::run_cells(s, s.dists[0], detail::kPowerTag, 0, residual, with_f, threads);
    const auto reps = static_cast<double>(s.reps);
    for (std::size_t k = 0; k < s.beta0_grid.size(); ++k) {
        const auto ri = static_cast<Eigen::Index>(k);
        for (std::size_t c = 0; c < s.b_grid.size(); ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            const double est = static_cast<double>(cc.reject[k][c]) / reps;
            t.estimate(ri, ci) = est;
            t.se(ri, ci) = rate_se(est, s.reps);
            t.seconds(ri, ci) = cc.seconds[c] / static_cast<double>(s.beta0_grid.size());
            t.metadata.emplace_back("failed_splits." + t.rows[k] + "." + t.cols[c], std::to_string(cc.failed_splits[k][c]));
        }
        if (with_f) {
            const auto ci = static_cast<Eigen::Index>(s.b_grid.size());
            const double est = static_cast<double>(cc.f_reject[k]) / reps;
            t.estimate(ri, ci) = est;
            t.se(ri, ci) = rate_se(est, s.reps);
        }
        if (progress) {
            std::ostringstream os;
            os << "power beta0=" << t.rows[k] << ":" << std::fixed << std::setprecision(3);
            for (Eigen::Index c = 0; c < t.estimate.cols(); ++c) os << " " << t.cols[static_cast<std::size_t>(c)] << "=" << t.estimate(ri, c);
            progress(os.str());
        }
    }
    return t;
}

// ============================================================================
// Variance curve
// ============================================================================

// Columns: "analytic" sigma^2 / B (1 + (B - 1) rho). With mc_reps > 0, also
// "mc": the empirical variance of the split-averaged mean in Y_i = e_i,
// e ~ N(0, sigma^2), divided by the single-split variance sigma^2 E[1/n_in],
// and "theory": the exact finite-n value of that ratio,
// (1 + (B - 1) rho_n) / B with rho_n the between-split correlation.
inline ResultTable run_var_curve(const ExperimentSpec& spec, int threads = 1, const ProgressFn& progress = {}) {
    if (spec.experiment != Experiment::var_curve) throw std::invalid_argument("run_var_curve: experiment must be var_curve");
    spec.validate();
    const ExperimentSpec& s = spec;
    ResultTable t;
    t.title = "Variance of the split-averaged estimator";
    t.row_header = "B";
    for (std::size_t b : s.b_grid) t.rows.push_back(std::to_string(b));
    t.cols = {"analytic"};
    const bool mc = s.mc_reps > 0;
    if (mc) {
        t.cols.push_back("mc");
        t.cols.push_back("theory");
    }
    t.resize(t.rows.size(), t.cols.size());
    t.metadata = spec_entries(s);

    const auto curve = split_variance_curve(s.sigma, s.rho, s.b_grid);
    for (std::size_t k = 0; k < curve.size(); ++k) t.estimate(static_cast<Eigen::Index>(k), 0) = curve[k].second;

    if (mc) {
        if (s.mc_reps < 2) throw std::invalid_argument("run_var_curve: mc_reps must be at least 2");
        if (s.n < 4) throw std::invalid_argument("run_var_curve: n must be at least 4");
        const std::size_t bmax = *std::max_element(s.b_grid.begin(), s.b_grid.end());
        const SplitMeanMoments mom = split_mean_moments(s.n, s.pi, 1, s.sigma);
        t.metadata.emplace_back("single_split_variance", detail::num(mom.split_variance));
        t.metadata.emplace_back("between_split_correlation", detail::num(mom.correlation));
        std::vector<double> est(s.mc_reps * s.b_grid.size());
        parallel_for(s.mc_reps, threads, [&](std::size_t r) {
            Xoshiro256 rng = substream(s.master_seed, {0x56, r});
            std::normal_distribution<double> normal(0.0, s.sigma);
            std::vector<double> y(s.n);
            for (double& v : y) v = normal(rng);
            const SplitPlan plan = make_split_plan(s.n, bmax, s.pi, derive_seed(s.master_seed, {0x56, r, 1}), 1);
            std::vector<double> prefix(bmax + 1, 0.0);
            for (std::size_t b = 0; b < bmax; ++b) {
                const SplitRow row = plan.row(b);
                double sum = 0;
                std::size_t cnt = 0;
                for (std::size_t i = 0; i < s.n; ++i)
                    if (row[i]) {
                        sum += y[i];
                        ++cnt;
                    }
                prefix[b + 1] = prefix[b] + sum / static_cast<double>(cnt);
            }
            for (std::size_t k = 0; k < s.b_grid.size(); ++k)
                est[r * s.b_grid.size() + k] = prefix[s.b_grid[k]] / static_cast<double>(s.b_grid[k]);
        });
        for (std::size_t k = 0; k < s.b_grid.size(); ++k) {
            std::vector<double> col(s.mc_reps);
            for (std::size_t r = 0; r < s.mc_reps; ++r) col[r] = est[r * s.b_grid.size() + k];
            const double v = stats::variance(col) / mom.split_variance;
            const auto ri = static_cast<Eigen::Index>(k);
            const auto b = static_cast<double>(s.b_grid[k]);
            t.estimate(ri, 1) = v;
            t.se(ri, 1) = v * std::sqrt(2.0 / static_cast<double>(s.mc_reps - 1));
            t.estimate(ri, 2) = (1 + (b - 1) * mom.correlation) / b;
        }
    }
    if (progress) progress("var-curve: " + std::to_string(t.rows.size()) + " points");
    return t;
}

// ============================================================================
// Meinshausen level
// ============================================================================

// One row per error law, one column per B: rejection rate of the Meinshausen
// p-value (p <= alpha) under the null.
inline ResultTable run_mb_level(const ExperimentSpec& spec, int threads = 1, const ProgressFn& progress = {}) {
    if (spec.experiment != Experiment::mb_level) throw std::invalid_argument("run_mb_level: experiment must be mb_level");
    spec.validate();
    const ExperimentSpec& s = spec;
    ResultTable t;
    t.title = "Level of the Meinshausen aggregated p-value";
    t.row_header = "Distribution\\B";
    t.rows = s.dists;
    for (std::size_t b : s.b_grid) t.cols.push_back(std::to_string(b));
    t.resize(t.rows.size(), t.cols.size());
    t.metadata = spec_entries(s);
    MeinshausenOptions mo;
    mo.gamma_min = s.gamma_min;
    for (std::size_t row = 0; row < s.dists.size(); ++row) {
        const ErrorDistribution law = error_distribution_from_name(s.dists[row]);
        for (std::size_t c = 0; c < s.b_grid.size(); ++c) {
            const auto t0 = std::chrono::steady_clock::now();
            const MeinshausenLevel lv = meinshausen_null_level(s.b_grid[c], s.n, s.reps, derive_seed(s.master_seed, {0x4d, row, c}),
                                                               s.alpha, threads, law, s.mb_known_sigma, mo);
            const auto ri = static_cast<Eigen::Index>(row), ci = static_cast<Eigen::Index>(c);
            t.estimate(ri, ci) = lv.level;
            t.se(ri, ci) = lv.se();
            t.seconds(ri, ci) = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            t.metadata.emplace_back("rejections." + s.dists[row] + "." + t.cols[c], std::to_string(lv.rejections));
            if (progress)
                progress("mb-level " + s.dists[row] + " B=" + t.cols[c] + " -> " + std::to_string(lv.rejections) + "/" +
                         std::to_string(lv.reps));
        }
    }
    return t;
}

inline ResultTable run_experiment(const ExperimentSpec& spec, int threads = 1, const ProgressFn& progress = {}) {
    switch (spec.experiment) {
        case Experiment::level:
        case Experiment::level_residual: return run_level(spec, threads, progress);
        case Experiment::power:
        case Experiment::power_residual: return run_power(spec, threads, progress);
        case Experiment::var_curve: return run_var_curve(spec, threads, progress);
        case Experiment::mb_level: return run_mb_level(spec, threads, progress);
    }
    throw std::invalid_argument("unknown experiment");
}

// ============================================================================
// Output
// ============================================================================

enum class TableFormat { csv, json, text };

inline TableFormat table_format_from_name(const std::string& s) {
    if (s == "csv") return TableFormat::csv;
    if (s == "json") return TableFormat::json;
    if (s == "text" || s == "txt") return TableFormat::text;
    throw std::invalid_argument("unknown format '" + s + "' (expected csv, json or text)");
}

namespace detail {

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

}  // namespace detail

// csv: '# key=value' metadata lines, then a header
// `<row_header>,<col>...,se_<col>...` and one line per row.
inline std::string table_to_csv(const ResultTable& t, bool timing = false) {
    std::ostringstream os;
    os << "# title=" << t.title << "\n";
    for (const auto& [k, v] : t.metadata) os << "# " << k << "=" << v << "\n";
    os << detail::csv_field(t.row_header);
    for (const auto& c : t.cols) os << "," << detail::csv_field(c);
    for (const auto& c : t.cols) os << "," << detail::csv_field("se_" + c);
    if (timing)
        for (const auto& c : t.cols) os << "," << detail::csv_field("seconds_" + c);
    os << "\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        os << detail::csv_field(t.rows[r]);
        for (Eigen::Index c = 0; c < t.estimate.cols(); ++c) os << "," << detail::num(t.estimate(ri, c));
        for (Eigen::Index c = 0; c < t.se.cols(); ++c) os << "," << detail::num(t.se(ri, c));
        if (timing)
            for (Eigen::Index c = 0; c < t.seconds.cols(); ++c) os << "," << detail::num(t.seconds(ri, c));
        os << "\n";
    }
    return os.str();
}

inline nlohmann::json table_to_json_value(const ResultTable& t, bool timing = false) {
    nlohmann::json j;
    j["title"] = t.title;
    j["row_header"] = t.row_header;
    j["rows"] = t.rows;
    j["cols"] = t.cols;
    auto mat = [](const Eigen::MatrixXd& m) {
        nlohmann::json a = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            a.push_back(row);
        }
        return a;
    };
    j["estimate"] = mat(t.estimate);
    j["se"] = mat(t.se);
    if (timing) j["seconds"] = mat(t.seconds);
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [k, v] : t.metadata) meta[k] = v;
    j["metadata"] = meta;
    return j;
}

inline std::string table_to_json(const ResultTable& t, bool timing = false) { return table_to_json_value(t, timing).dump(2) + "\n"; }

// Grid in the row and column order of the table, three decimals, SEs below.
inline std::string table_to_text(const ResultTable& t) {
    std::vector<std::string> labels;
    for (const auto& r : t.rows) labels.push_back(t.row_header.rfind("Distribution", 0) == 0 ? distribution_label(r) : r);
    std::size_t w0 = t.row_header.size();
    for (const auto& l : labels) w0 = std::max(w0, l.size());
    std::size_t w = 8;
    for (const auto& c : t.cols) w = std::max(w, c.size() + 2);
    std::ostringstream os;
    os << t.title << "\n";
    os << std::left << std::setw(static_cast<int>(w0)) << t.row_header;
    for (const auto& c : t.cols) os << std::right << std::setw(static_cast<int>(w)) << c;
    os << "\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        os << std::left << std::setw(static_cast<int>(w0)) << labels[r];
        for (Eigen::Index c = 0; c < t.estimate.cols(); ++c)
            os << std::right << std::setw(static_cast<int>(w)) << std::fixed << std::setprecision(3)
               << t.estimate(static_cast<Eigen::Index>(r), c);
        os << "\n";
    }
    os << "\nMonte Carlo standard errors\n";
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        os << std::left << std::setw(static_cast<int>(w0)) << labels[r];
        for (Eigen::Index c = 0; c < t.se.cols(); ++c)
            os << std::right << std::setw(static_cast<int>(w)) << std::fixed << std::setprecision(4)
               << t.se(static_cast<Eigen::Index>(r), c);
        os << "\n";
    }
    os.unsetf(std::ios::floatfield);
    os << "\n";
    for (const auto& [k, v] : t.metadata) os << k << "=" << v << "\n";
    return os.str();
}

inline std::string format_table(const ResultTable& t, TableFormat f, bool timing = false) {
    switch (f) {
        case TableFormat::csv: return table_to_csv(t, timing);
        case TableFormat::json: return table_to_json(t, timing);
        case TableFormat::text: return table_to_text(t);
    }
    return {};
}

// Writes the table to `path`; I/O failures name the path.
inline void emit_table(const ResultTable& t, TableFormat f, const std::string& path, bool timing = false) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << format_table(t, f, timing);
    out.flush();
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

namespace detail {

inline std::vector<std::string> parse_csv_line(const std::string& line, std::size_t lineno) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) throw ParseError(lineno, line.size(), "unterminated quote");
    out.push_back(cur);
    return out;
}

}  // namespace detail

// Inverse of table_to_csv (without timing columns).
inline ResultTable table_from_csv(const std::string& text) {
    ResultTable t;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<std::vector<double>> est, se;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.rfind("# ", 0) == 0) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string k = line.substr(2, eq - 2), v = line.substr(eq + 1);
            if (k == "title") t.title = v;
            else t.metadata.emplace_back(k, v);
            continue;
        }
        if (line.empty()) continue;
        auto fields = detail::parse_csv_line(line, lineno);
        if (!header) {
            if (fields.size() < 3 || (fields.size() - 1) % 2 != 0) throw SchemaMismatch("table header has an unexpected column count");
            t.row_header = fields[0];
            const std::size_t k = (fields.size() - 1) / 2;
            t.cols.assign(fields.begin() + 1, fields.begin() + 1 + static_cast<std::ptrdiff_t>(k));
            header = true;
            continue;
        }
        if (fields.size() != 1 + 2 * t.cols.size()) throw ParseError(lineno, 1, "expected " + std::to_string(1 + 2 * t.cols.size()) + " fields");
        t.rows.push_back(fields[0]);
        std::vector<double> e, s;
        for (std::size_t c = 0; c < t.cols.size(); ++c) {
            try {
                e.push_back(std::stod(fields[1 + c]));
                s.push_back(std::stod(fields[1 + t.cols.size() + c]));
            } catch (const std::exception&) {
                throw ParseError(lineno, 2 + c, "not a number");
            }
        }
        est.push_back(e);
        se.push_back(s);
    }
    if (!header) throw SchemaMismatch("no table header");
    t.resize(t.rows.size(), t.cols.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.cols.size(); ++c) {
            t.estimate(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = est[r][c];
            t.se(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = se[r][c];
        }
    return t;
}

}  // namespace splitboot
