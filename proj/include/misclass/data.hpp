#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "misclass/error.hpp"
#include "misclass/formula.hpp"

namespace misclass {

/// Missing cells are stored as quiet NaN; parsed numeric cells are always finite.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

class Dataset {
public:
    Dataset() = default;

    std::size_t n_rows() const { return n_rows_; }
    std::size_t n_columns() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    bool has_column(std::string_view name) const { return find(name) != npos; }

    std::span<const double> column(std::string_view name) const {
        const auto idx = find(name);
        if (idx == npos) fail(ErrorCode::MissingColumn, "no column named '" + std::string(name) + "'");
        return columns_[idx];
    }

    /// Adds or replaces a column. The first column fixes n_rows.
    void set_column(const std::string& name, std::vector<double> values) {
        if (names_.empty() && columns_.empty()) n_rows_ = values.size();
        if (values.size() != n_rows_) {
            fail(ErrorCode::RaggedRows, "column '" + name + "' has " + std::to_string(values.size()) +
                                            " cells, expected " + std::to_string(n_rows_));
        }
        const auto idx = find(name);
        if (idx == npos) {
            names_.push_back(name);
            columns_.push_back(std::move(values));
        } else {
            columns_[idx] = std::move(values);
        }
    }

    std::size_t count_missing(std::string_view name) const {
        std::size_t n = 0;
        for (double v : column(name)) n += is_missing(v) ? 1 : 0;
        return n;
    }

private:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t find(std::string_view name) const {
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i] == name) return i;
        }
        return npos;
    }

    std::size_t n_rows_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> columns_;
};

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
            cells.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return cells;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline double parse_cell(std::string_view cell, std::size_t row, const std::string& column) {
    cell = trim(cell);
    if (cell.empty()) return kMissing;
    if (cell.front() == '+') cell.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        fail(ErrorCode::ParseError, "non-numeric cell '" + std::string(cell) + "' at row " +
                                        std::to_string(row) + ", column '" + column + "'");
    }
    return value;
}

} // namespace detail

/// Parses a numeric CSV with a header row. Rows are 1-based in messages
/// (the header is row 0).
inline Dataset read_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::HeaderError, "empty input, no header row");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> names;
    std::set<std::string> seen;
    for (auto cell : detail::split_commas(line)) {
        std::string name(detail::trim(cell));
        if (name.empty()) fail(ErrorCode::HeaderError, "empty column name in header");
        if (!seen.insert(name).second) fail(ErrorCode::HeaderError, "duplicate column name '" + name + "'");
        names.push_back(std::move(name));
    }

    std::vector<std::vector<double>> columns(names.size());
    std::size_t row = 0;
    std::size_t blank_run = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++row;
        if (line.empty()) {
            ++blank_run;
            continue;
        }
        if (blank_run > 0 && names.size() > 1) {
            fail(ErrorCode::RaggedRows, "row " + std::to_string(row - blank_run) + " is empty");
        }
        for (; blank_run > 0; --blank_run) columns[0].push_back(kMissing);
        const auto cells = detail::split_commas(line);
        if (cells.size() != names.size()) {
            fail(ErrorCode::RaggedRows, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                            " cells, header has " + std::to_string(names.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            columns[j].push_back(detail::parse_cell(cells[j], row, names[j]));
        }
    }

    Dataset ds;
    for (std::size_t j = 0; j < names.size(); ++j) ds.set_column(names[j], std::move(columns[j]));
    return ds;
}

inline Dataset load_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open '" + path + "'");
    return read_csv(in);
}

/// Shortest round-trip decimal text for a finite double; empty for missing.
inline std::string format_number(double v) {
    if (is_missing(v)) return {};
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline void write_csv(std::ostream& out, const Dataset& ds, const std::vector<std::string>& order) {
    for (std::size_t j = 0; j < order.size(); ++j) out << (j ? "," : "") << order[j];
    out << '\n';
    std::vector<std::span<const double>> cols;
    for (const auto& name : order) cols.push_back(ds.column(name));
    for (std::size_t i = 0; i < ds.n_rows(); ++i) {
        for (std::size_t j = 0; j < cols.size(); ++j) out << (j ? "," : "") << format_number(cols[j][i]);
        out << '\n';
    }
}

/// Dataset bound to a model: validated roles plus the annotated-row mask.
class AnalysisFrame {
public:
    AnalysisFrame(Dataset dataset, ModelSpec spec, std::vector<bool> annotated)
        : dataset_(std::move(dataset)), spec_(std::move(spec)), annotated_(std::move(annotated)) {
        for (bool a : annotated_) n_annotated_ += a ? 1 : 0;
    }

    const Dataset& dataset() const { return dataset_; }
    const ModelSpec& spec() const { return spec_; }
    const std::vector<bool>& annotated_mask() const { return annotated_; }
    bool annotated(std::size_t row) const { return annotated_[row]; }
    std::size_t n_rows() const { return dataset_.n_rows(); }
    std::size_t n_annotated() const { return n_annotated_; }
    std::size_t n_unannotated() const { return n_rows() - n_annotated_; }
    bool fully_annotated() const { return n_annotated_ == n_rows(); }

    std::span<const double> column(std::string_view name) const { return dataset_.column(name); }

    /// The column holding the true value of the misclassified variable.
    std::span<const double> latent() const { return column(spec_.proxy->latent); }
    std::span<const double> surrogate() const { return column(spec_.proxy->surrogate); }

    /// Frame restricted to the annotated rows (all rows then annotated).
    AnalysisFrame annotated_only() const {
        Dataset sub;
        for (const auto& name : dataset_.names()) {
            std::vector<double> values;
            values.reserve(n_annotated_);
            const auto col = dataset_.column(name);
            for (std::size_t i = 0; i < col.size(); ++i) {
                if (annotated_[i]) values.push_back(col[i]);
            }
            sub.set_column(name, std::move(values));
        }
        return AnalysisFrame(std::move(sub), spec_, std::vector<bool>(n_annotated_, true));
    }

private:
    Dataset dataset_;
    ModelSpec spec_;
    std::vector<bool> annotated_;
    std::size_t n_annotated_ = 0;
};

namespace detail {

inline void require_binary(std::span<const double> col, const std::string& name) {
    for (std::size_t i = 0; i < col.size(); ++i) {
        if (!is_missing(col[i]) && col[i] != 0.0 && col[i] != 1.0) {
            fail(ErrorCode::NonBinaryLatent, "column '" + name + "' has value " + format_number(col[i]) +
                                                 " at row " + std::to_string(i + 1) + "; expected 0 or 1");
        }
    }
}

} // namespace detail

inline AnalysisFrame build_frame(Dataset dataset, const ModelSpec& spec) {
    for (const auto& name : spec.variables()) {
        if (!dataset.has_column(name)) fail(ErrorCode::MissingColumn, "no column named '" + name + "'");
    }
    const std::string latent = spec.proxy ? spec.proxy->latent : std::string();
    if (spec.proxy) {
        const auto& surrogate = spec.proxy->surrogate;
        if (dataset.count_missing(surrogate) > 0) {
            fail(ErrorCode::IncompleteSurrogate, "surrogate column '" + surrogate + "' has missing cells");
        }
        detail::require_binary(dataset.column(surrogate), surrogate);
        detail::require_binary(dataset.column(latent), latent);
    }
    for (const auto& name : spec.variables()) {
        if (name == latent) continue;
        if (spec.proxy && name == spec.proxy->surrogate) continue;
        if (dataset.count_missing(name) > 0) {
            fail(ErrorCode::IncompleteCovariate, "column '" + name + "' has missing cells");
        }
    }
    std::vector<bool> mask(dataset.n_rows(), true);
    if (spec.proxy) {
        const auto col = dataset.column(latent);
        for (std::size_t i = 0; i < col.size(); ++i) mask[i] = !is_missing(col[i]);
    }
    AnalysisFrame frame(std::move(dataset), spec, std::move(mask));
    if (frame.n_annotated() == 0) fail(ErrorCode::NoAnnotations, "latent column has no observed values");
    return frame;
}

} // namespace misclass
