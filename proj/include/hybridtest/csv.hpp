#pragma once

#include <fmt/format.h>

#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hybridtest::csv {

/// A column name with its unit, written to the header as `name[unit]`.
struct Column {
  std::string name;
  std::string unit;  ///< empty for dimensionless or label columns

  std::string header() const { return unit.empty() ? name : name + "[" + unit + "]"; }
};

/// Plain comma-separated table. Cells never contain commas or quotes: labels
/// are identifiers and numbers use a fixed round-trip format.
class Table {
 public:
  explicit Table(std::vector<Column> columns) : columns_(std::move(columns)) {
    if (columns_.empty()) throw std::invalid_argument("table needs at least one column");
  }

  const std::vector<Column>& columns() const { return columns_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  class RowBuilder {
   public:
    explicit RowBuilder(Table& t) : t_(t), unwinding_(std::uncaught_exceptions()) {}
    RowBuilder& operator<<(double v) { return push(number(v)); }
    RowBuilder& operator<<(int v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(long v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(unsigned long v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(unsigned long long v) { return push(std::to_string(v)); }
    RowBuilder& operator<<(bool v) { return push(v ? "1" : "0"); }
    RowBuilder& operator<<(const std::string& v) { return push(label(v)); }
    RowBuilder& operator<<(const char* v) { return push(label(v)); }
    ~RowBuilder() noexcept(false) {
      if (std::uncaught_exceptions() > unwinding_) return;
      if (cells_.size() != t_.columns_.size()) {
        throw std::logic_error("row has " + std::to_string(cells_.size()) + " cells, table has " +
                               std::to_string(t_.columns_.size()) + " columns");
      }
      t_.rows_.push_back(std::move(cells_));
    }

   private:
    RowBuilder& push(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    Table& t_;
    int unwinding_;
    std::vector<std::string> cells_;
  };

  /// `table.row() << a << b << c;` appends one row when the statement ends.
  RowBuilder row() { return RowBuilder(*this); }

  /// Shortest decimal that reads back to the same double; NaN as "nan".
  static std::string number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return fmt::format("{}", v);
  }

  static std::string label(std::string s) {
    if (s.find_first_of(",\"\n\r") != std::string::npos) {
      throw std::invalid_argument("csv label contains a separator: " + s);
    }
    return s;
  }

  std::string str() const {
    std::string out;
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (c) out += ',';
      out += columns_[c].header();
    }
    out += '\n';
    for (const auto& r : rows_) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) out += ',';
        out += r[c];
      }
      out += '\n';
    }
    return out;
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << str();
  }

  std::size_t column_index(const std::string& name) const {
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      if (columns_[c].name == name) return c;
    }
    throw std::out_of_range("no column named " + name);
  }

  double value(std::size_t row, const std::string& name) const {
    const auto& cell = rows_.at(row).at(column_index(name));
    if (cell == "nan") return std::nan("");
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("cell '" + cell + "' is not a number");
    return v;
  }
  const std::string& text(std::size_t row, const std::string& name) const {
    return rows_.at(row).at(column_index(name));
  }

  /// Inverse of str(). Headers may carry a `[unit]` suffix.
  static Table parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.empty()) throw std::invalid_argument("csv text has no header");
    std::vector<Column> cols;
    for (const auto& h : split(line)) {
      const auto open = h.find('[');
      if (open != std::string::npos && h.back() == ']') {
        cols.push_back({h.substr(0, open), h.substr(open + 1, h.size() - open - 2)});
      } else {
        cols.push_back({h, ""});
      }
    }
    Table t(std::move(cols));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto cells = split(line);
      if (cells.size() != t.columns_.size()) {
        throw std::invalid_argument("csv line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                    " cells, expected " + std::to_string(t.columns_.size()));
      }
      t.rows_.push_back(std::move(cells));
    }
    return t;
  }

  static Table read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
  }

 private:
  static std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      out.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

  std::vector<Column> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace hybridtest::csv
