#pragma once

// CSV input and output for the two data layouts:
//
//   index:  Y,x1,...,xk                                         (k >= 1)
//   score:  W,Y,vig,mod,light,mvpa,weights,sit_tv,sit_other,sleep,z1,...,zk   (k >= 0)
//
// Header names are matched case-insensitively after trimming. Cells must be
// finite decimal numbers; an empty or non-numeric cell raises ParseError with
// its 1-based line and column.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "splitboot/dataset.hpp"
#include "splitboot/errors.hpp"

namespace splitboot {

enum class Schema { index, score };

inline Schema schema_from_name(const std::string& s) {
    if (s == "index") return Schema::index;
    if (s == "score") return Schema::score;
    throw std::invalid_argument("unknown model '" + s + "' (expected index or score)");
}

inline const std::vector<std::string>& score_activity_columns() {
    static const std::vector<std::string> cols = {"vig", "mod", "light", "mvpa", "weights", "sit_tv", "sit_other", "sleep"};
    return cols;
}

namespace detail {

inline std::string lower_trim(std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    s = s.substr(a, b - a + 1);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double parse_cell(const std::string& raw, std::size_t line, std::size_t column) {
    const auto a = raw.find_first_not_of(" \t\r");
    if (a == std::string::npos) throw ParseError(line, column, "missing value");
    const auto b = raw.find_last_not_of(" \t\r");
    const char* first = raw.data() + a;
    const char* last = raw.data() + b + 1;
    if (*first == '+') ++first;
    double v = 0;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v))
        throw ParseError(line, column, "not a finite number: '" + raw.substr(a, b - a + 1) + "'");
    return v;
}

// Number of trailing numbered columns `prefix1..prefixk` starting at `from`.
inline std::size_t numbered_columns(const std::vector<std::string>& header, std::size_t from, const std::string& prefix) {
    std::size_t k = 0;
    for (std::size_t j = from; j < header.size(); ++j) {
        if (header[j] != prefix + std::to_string(k + 1))
            throw SchemaMismatch("column " + std::to_string(j + 1) + " is '" + header[j] + "', expected '" + prefix +
                                 std::to_string(k + 1) + "'");
        ++k;
    }
    return k;
}

}  // namespace detail

// Parses CSV text in the given schema.
inline Dataset parse_dataset(const std::string& text, Schema schema) {
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> header;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::lower_trim(line).empty()) continue;
        for (auto& h : detail::split_fields(line)) header.push_back(detail::lower_trim(h));
        break;
    }
    if (header.empty()) throw SchemaMismatch("empty file: no header row");

    std::size_t dim_x = 0, dim_z = 0;
    if (schema == Schema::index) {
        if (header[0] != "y") throw SchemaMismatch("first column is '" + header[0] + "', expected 'Y'");
        dim_x = detail::numbered_columns(header, 1, "x");
        if (dim_x == 0) throw SchemaMismatch("index schema needs at least one covariate column x1");
    } else {
        const auto& act = score_activity_columns();
        if (header.size() < 2 + act.size()) throw SchemaMismatch("score schema needs columns W,Y," + [&] {
            std::string s;
            for (std::size_t j = 0; j < act.size(); ++j) s += (j ? "," : "") + act[j];
            return s;
        }());
        if (header[0] != "w" || header[1] != "y") throw SchemaMismatch("score schema must start with W,Y");
        for (std::size_t j = 0; j < act.size(); ++j)
            if (header[2 + j] != act[j])
                throw SchemaMismatch("column " + std::to_string(3 + j) + " is '" + header[2 + j] + "', expected '" + act[j] + "'");
        dim_x = act.size();
        dim_z = detail::numbered_columns(header, 2 + act.size(), "z");
    }

    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> row_line;
    while (std::getline(is, line)) {
        ++lineno;
        if (detail::lower_trim(line).empty()) continue;
        const auto fields = detail::split_fields(line);
        if (fields.size() != header.size())
            throw ParseError(lineno, std::min(fields.size(), header.size()) + 1,
                             "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        std::vector<double> v(fields.size());
        for (std::size_t j = 0; j < fields.size(); ++j) v[j] = detail::parse_cell(fields[j], lineno, j + 1);
        rows.push_back(std::move(v));
        row_line.push_back(lineno);
    }
    if (rows.empty()) throw SchemaMismatch("no data rows");

    const auto n = static_cast<Eigen::Index>(rows.size());
    Dataset d;
    d.y.resize(n);
    d.w.resize(n);
    d.x.resize(n, static_cast<Eigen::Index>(dim_x));
    d.z.resize(n, static_cast<Eigen::Index>(dim_z));
    const std::size_t x0 = schema == Schema::index ? 1 : 2;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        d.y[i] = schema == Schema::index ? r[0] : r[1];
        d.w[i] = r[0];
        for (std::size_t j = 0; j < dim_x; ++j) d.x(i, static_cast<Eigen::Index>(j)) = r[x0 + j];
        for (std::size_t j = 0; j < dim_z; ++j) d.z(i, static_cast<Eigen::Index>(j)) = r[x0 + dim_x + j];
    }
    if (schema == Schema::score) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const std::size_t at = row_line[static_cast<std::size_t>(i)];
            if (d.w[i] != 0 && d.w[i] != 1) throw ParseError(at, 1, "W must be 0 or 1");
            if (d.y[i] != 0 && d.y[i] != 1) throw ParseError(at, 2, "Y must be 0 or 1");
        }
    }
    d.validate();
    return d;
}

inline Dataset load_dataset(const std::string& path, Schema schema) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dataset(ss.str(), schema);
}

inline std::string dataset_to_csv(const Dataset& d, Schema schema) {
    std::ostringstream os;
    os << std::setprecision(17);
    if (schema == Schema::index) {
        os << "Y";
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) os << ",x" << j + 1;
    } else {
        if (d.x.cols() != static_cast<Eigen::Index>(score_activity_columns().size()))
            throw SchemaMismatch("score schema needs 8 activity columns");
        os << "W,Y";
        for (const auto& c : score_activity_columns()) os << "," << c;
        for (Eigen::Index j = 0; j < d.z.cols(); ++j) os << ",z" << j + 1;
    }
    os << "\n";
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (schema == Schema::score) os << d.w[i] << ",";
        os << d.y[i];
        for (Eigen::Index j = 0; j < d.x.cols(); ++j) os << "," << d.x(i, j);
        if (schema == Schema::score)
            for (Eigen::Index j = 0; j < d.z.cols(); ++j) os << "," << d.z(i, j);
        os << "\n";
    }
    return os.str();
}

inline void write_dataset(const Dataset& d, Schema schema, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << dataset_to_csv(d, schema);
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace splitboot
