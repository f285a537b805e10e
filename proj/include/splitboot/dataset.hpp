#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace splitboot {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Read-only view of one observation (W, Y, X, Z). `plug` holds the value the
// stacking machinery feeds into a second-stage equation: f(X; theta) when the
// model has an index function, theta itself otherwise, empty for stage one.
struct RecordView {
    double w = 0;
    double y = 0;
    std::span<const double> x;
    std::span<const double> z;
    std::span<const double> plug;
};

// Column-oriented sample of n i.i.d. records. Fields a model does not use may
// be left empty (zero columns); vectors w and y always have n entries.
struct Dataset {
    Eigen::VectorXd w;
    Eigen::VectorXd y;
    RowMatrix x;
    RowMatrix z;

    Eigen::Index size() const noexcept { return y.size(); }

    RecordView record(Eigen::Index i) const noexcept {
        RecordView r;
        r.w = w[i];
        r.y = y[i];
        if (x.cols() > 0) r.x = {x.data() + i * x.cols(), static_cast<std::size_t>(x.cols())};
        if (z.cols() > 0) r.z = {z.data() + i * z.cols(), static_cast<std::size_t>(z.cols())};
        return r;
    }

    // Throws std::invalid_argument when the fields disagree on n or n < 2.
    void validate() const {
        const Eigen::Index n = y.size();
        if (n < 2) throw std::invalid_argument("dataset needs at least 2 records, got " + std::to_string(n));
        if (w.size() != n) throw std::invalid_argument("dataset: W has " + std::to_string(w.size()) + " rows, Y has " + std::to_string(n));
        if (x.cols() > 0 && x.rows() != n) throw std::invalid_argument("dataset: X row count differs from Y");
        if (z.cols() > 0 && z.rows() != n) throw std::invalid_argument("dataset: Z row count differs from Y");
    }

    // Same covariates, new response Y (W untouched).
    Dataset with_response(const Eigen::VectorXd& new_y) const {
        if (new_y.size() != size()) throw std::invalid_argument("with_response: length mismatch");
        Dataset d = *this;
        d.y = new_y;
        return d;
    }
};

// Convenience constructor for models where W and Y coincide.
inline Dataset make_dataset(Eigen::VectorXd y, RowMatrix x, RowMatrix z = {}) {
    Dataset d;
    d.w = y;
    d.y = std::move(y);
    d.x = std::move(x);
    d.z = std::move(z);
    if (d.x.rows() == 0 && d.x.cols() == 0) d.x.resize(d.y.size(), 0);
    if (d.z.rows() == 0 && d.z.cols() == 0) d.z.resize(d.y.size(), 0);
    d.validate();
    return d;
}

}  // namespace splitboot
