#pragma once

// Exception hierarchy shared by every module. Solver-level errors carry the
// stage they came from so stacked fits can report which equation failed.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace splitboot {

enum class Stage { none, first, second };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::first: return "first stage";
        case Stage::second: return "second stage";
        default: return "";
    }
}

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Base for errors raised while solving an estimating equation.
class SolverError : public Error {
public:
    explicit SolverError(const std::string& what, Stage stage = Stage::none)
        : Error(stage == Stage::none ? what : std::string(to_string(stage)) + ": " + what),
          stage_(stage) {}
    Stage stage() const noexcept { return stage_; }

private:
    Stage stage_;
};

class NonConvergence : public SolverError {
public:
    NonConvergence(Eigen::VectorXd best, int iterations, double residual, Stage stage = Stage::none)
        : SolverError("solver did not converge after " + std::to_string(iterations) +
                          " iterations (residual " + std::to_string(residual) + ")",
                      stage),
          best_(std::move(best)), iterations_(iterations), residual_(residual) {}

    const Eigen::VectorXd& best_iterate() const noexcept { return best_; }
    int iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }

private:
    Eigen::VectorXd best_;
    int iterations_;
    double residual_;
};

class SingularJacobian : public SolverError {
public:
    explicit SingularJacobian(Stage stage = Stage::none)
        : SolverError("Jacobian is numerically singular", stage) {}
};

class InsufficientData : public SolverError {
public:
    InsufficientData(std::size_t active, std::size_t needed, Stage stage = Stage::none)
        : SolverError("insufficient data: " + std::to_string(active) + " active records for " +
                          std::to_string(needed) + " parameters",
                      stage) {}
};

class SeparationDetected : public SolverError {
public:
    explicit SeparationDetected(const std::string& detail)
        : SolverError("separation detected: " + detail) {}
};

// Re-raise a solver error with a stage tag attached.
template <class F>
decltype(auto) with_stage(Stage stage, F&& f) {
    try {
        return f();
    } catch (const NonConvergence& e) {
        throw NonConvergence(e.best_iterate(), e.iterations(), e.residual(), stage);
    } catch (const SingularJacobian&) {
        throw SingularJacobian(stage);
    } catch (const SeparationDetected&) {
        throw;
    } catch (const SolverError& e) {
        if (e.stage() != Stage::none) throw;
        throw SolverError(e.what(), stage);
    }
}

class DegenerateSplit : public Error {
public:
    explicit DegenerateSplit(const std::string& what) : Error("degenerate split: " + what) {}
};

class AllSplitsFailed : public Error {
public:
    explicit AllSplitsFailed(std::size_t splits)
        : Error("all " + std::to_string(splits) + " splits failed") {}
};

class RankDeficientDesign : public Error {
public:
    RankDeficientDesign(long rank, long cols)
        : Error("design matrix has rank " + std::to_string(rank) + " < " + std::to_string(cols)) {}
};

class DegenerateRange : public Error {
public:
    explicit DegenerateRange(const std::string& what) : Error("degenerate range: " + what) {}
};

class SchemaMismatch : public Error {
public:
    explicit SchemaMismatch(const std::string& what) : Error("schema mismatch: " + what) {}
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, std::size_t column, const std::string& detail)
        : Error("parse error at line " + std::to_string(line) + ", column " + std::to_string(column) +
                ": " + detail),
          line_(line), column_(column) {}
    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

}  // namespace splitboot
