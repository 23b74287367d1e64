#pragma once
// CSV I/O.  Price format: header "date,asset1,...,assetN", UTF-8, '.'
// decimal separator.  Assets with missing or non-positive cells are dropped
// at load (no imputation); an error is raised only when nothing survives.

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "covarcast/log.hpp"
#include "covarcast/panel.hpp"

namespace covarcast {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline bool is_missing_token(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "na";
}

inline double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error("csv: cannot parse number '" + s + "' (" + context + ")");
    }
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

struct PriceLoadResult {
    PricePanel panel;
    std::vector<std::string> dropped_assets;
};

inline PriceLoadResult load_prices_csv(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_prices_csv: empty input (" + name + ")");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    if (header.size() < 2 || header[0] != "date")
        throw std::runtime_error("load_prices_csv: header must be 'date,asset1,...' (" + name + ")");
    const std::size_t n_raw = header.size() - 1;

    std::vector<std::string> dates;
    std::vector<std::vector<double>> rows;  // parsed values, NaN = missing/bad
    std::vector<bool> drop(n_raw, false);
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("load_prices_csv: row with " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(header.size()) + " (" + name + ")");
        dates.push_back(detail::trim(cells[0]));
        std::vector<double> row(n_raw);
        for (std::size_t j = 0; j < n_raw; ++j) {
            const std::string cell = detail::trim(cells[j + 1]);
            if (detail::is_missing_token(cell)) {
                row[j] = std::numeric_limits<double>::quiet_NaN();
                drop[j] = true;
                continue;
            }
            const double v = detail::parse_double(cell, name + " row " +
                                                  std::to_string(dates.size()));
            if (!(v > 0.0)) drop[j] = true;  // non-positive price: reject the asset
            row[j] = v;
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2)
        throw std::runtime_error("load_prices_csv: fewer than 2 data rows (" + name + ")");

    PriceLoadResult out;
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < n_raw; ++j) {
        if (drop[j]) {
            out.dropped_assets.push_back(header[j + 1]);
            log_warn("dropping asset '" + header[j + 1] +
                     "' (missing or non-positive prices) from " + name);
        } else {
            keep.push_back(j);
        }
    }
    if (keep.empty())
        throw std::runtime_error("load_prices_csv: no asset with a complete positive history (" +
                                 name + ")");

    out.panel.dates = std::move(dates);
    for (std::size_t j : keep) out.panel.assets.push_back(header[j + 1]);
    out.panel.prices.resize(static_cast<Eigen::Index>(rows.size()),
                            static_cast<Eigen::Index>(keep.size()));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t j = 0; j < keep.size(); ++j)
            out.panel.prices(static_cast<Eigen::Index>(t),
                             static_cast<Eigen::Index>(j)) = rows[t][keep[j]];
    out.panel.validate();
    return out;
}

inline PriceLoadResult load_prices_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_prices_csv: cannot open " + path);
    return load_prices_csv(in, path);
}

inline void save_prices_csv(std::ostream& out, const PricePanel& panel) {
    out << "date";
    for (const auto& a : panel.assets) out << ',' << a;
    out << '\n';
    for (Eigen::Index t = 0; t < panel.days(); ++t) {
        out << panel.dates[static_cast<std::size_t>(t)];
        for (Eigen::Index j = 0; j < panel.n_assets(); ++j)
            out << ',' << detail::format_double(panel.prices(t, j));
        out << '\n';
    }
}

inline void save_prices_csv(const std::string& path, const PricePanel& panel) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_prices_csv: cannot open " + path);
    save_prices_csv(out, panel);
}

// Returns use the same layout as prices; values may be negative and nothing
// is dropped, so the parse is strict.
inline void save_returns_csv(std::ostream& out, const ReturnPanel& panel) {
    out << "date";
    for (const auto& a : panel.assets) out << ',' << a;
    out << '\n';
    for (Eigen::Index t = 0; t < panel.days(); ++t) {
        out << panel.dates[static_cast<std::size_t>(t)];
        for (Eigen::Index j = 0; j < panel.n_assets(); ++j)
            out << ',' << detail::format_double(panel.returns(t, j));
        out << '\n';
    }
}

inline void save_returns_csv(const std::string& path, const ReturnPanel& panel) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_returns_csv: cannot open " + path);
    save_returns_csv(out, panel);
}

inline std::string returns_csv_string(const ReturnPanel& panel) {
    std::ostringstream out;
    save_returns_csv(out, panel);
    return out.str();
}

inline ReturnPanel load_returns_csv(std::istream& in, const std::string& name = "<stream>") {
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_returns_csv: empty input (" + name + ")");
    auto header = detail::split_csv_line(line);
    for (auto& h : header) h = detail::trim(h);
    if (header.size() < 2 || header[0] != "date")
        throw std::runtime_error("load_returns_csv: header must be 'date,asset1,...' (" +
                                 name + ")");
    ReturnPanel panel;
    panel.assets.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("load_returns_csv: ragged row (" + name + ")");
        panel.dates.push_back(detail::trim(cells[0]));
        std::vector<double> row(header.size() - 1);
        for (std::size_t j = 1; j < cells.size(); ++j)
            row[j - 1] = detail::parse_double(detail::trim(cells[j]),
                                              name + " row " + std::to_string(rows.size() + 2));
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw std::runtime_error("load_returns_csv: no data rows (" + name + ")");
    panel.returns.resize(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(header.size() - 1));
    for (std::size_t t = 0; t < rows.size(); ++t)
        for (std::size_t j = 0; j + 1 < header.size(); ++j)
            panel.returns(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
                rows[t][j];
    return panel;
}

inline ReturnPanel load_returns_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_returns_csv: cannot open " + path);
    return load_returns_csv(in, path);
}

// Plain numeric matrix with a header row of column labels.
inline void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                            const std::vector<std::string>& columns = {}) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_matrix_csv: cannot open " + path);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out << ',';
        if (j < static_cast<Eigen::Index>(columns.size()))
            out << columns[static_cast<std::size_t>(j)];
        else
            out << 'c' << j;
    }
    out << '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << ',';
            out << detail::format_double(m(i, j));
        }
        out << '\n';
    }
}

inline Eigen::MatrixXd load_matrix_csv(const std::string& path,
                                       std::vector<std::string>* columns = nullptr) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_matrix_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error("load_matrix_csv: empty file " + path);
    auto header = detail::split_csv_line(line);
    if (columns) {
        columns->clear();
        for (auto& h : header) columns->push_back(detail::trim(h));
    }
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error("load_matrix_csv: ragged row in " + path);
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells)
            row.push_back(detail::parse_double(detail::trim(c), path));
        rows.push_back(std::move(row));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < header.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return m;
}

}  // namespace covarcast
