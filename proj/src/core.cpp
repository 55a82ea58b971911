#include "tmlemiss/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace tmlemiss {

ColumnKind kind_for_name(std::string_view name) {
  if (name == "A" || name == "Y") return ColumnKind::continuous;
  if (name.size() == 2 && name[0] == 'Z') return ColumnKind::binary;
  if (name == "X") return ColumnKind::binary;
  if (name.starts_with("M_")) return ColumnKind::binary;
  return ColumnKind::continuous;
}

Dataset::Dataset(std::vector<Column> columns, Eigen::MatrixXd values)
    : Dataset(std::move(columns), std::move(values), {}) {}

Dataset::Dataset(std::vector<Column> columns, Eigen::MatrixXd values,
                 std::vector<std::uint8_t> mask)
    : columns_(std::move(columns)),
      values_(std::move(values)),
      mask_(std::move(mask)) {
  if (static_cast<std::size_t>(values_.cols()) != columns_.size()) {
    throw Error("dataset: value matrix has " + std::to_string(values_.cols()) +
                " columns but " + std::to_string(columns_.size()) +
                " column descriptors");
  }
  if (mask_.empty()) mask_.assign(values_.size(), 0);
  if (mask_.size() != static_cast<std::size_t>(values_.size())) {
    throw Error("dataset: mask size does not match value matrix");
  }
  std::unordered_set<std::string> seen;
  for (const auto& c : columns_) {
    if (!seen.insert(c.name).second) {
      throw Error("dataset: duplicate column name '" + c.name + "'");
    }
  }
}

bool Dataset::has_column(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(),
                     [&](const Column& c) { return c.name == name; });
}

std::size_t Dataset::index_of(std::string_view name) const {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].name == name) return j;
  }
  throw Error("dataset: no column named '" + std::string(name) + "'");
}

bool Dataset::any_missing() const {
  return std::any_of(mask_.begin(), mask_.end(),
                     [](std::uint8_t m) { return m != 0; });
}

bool Dataset::column_has_missing(std::size_t j) const {
  return missing_count(j) > 0;
}

std::size_t Dataset::missing_count(std::size_t j) const {
  const auto first = mask_.begin() + static_cast<std::ptrdiff_t>(j * rows());
  return static_cast<std::size_t>(
      std::count(first, first + static_cast<std::ptrdiff_t>(rows()), 1));
}

double Dataset::value(std::size_t i, std::size_t j) const {
  if (missing(i, j)) {
    throw Error("dataset: read of masked cell (row " + std::to_string(i) +
                ", column " + columns_.at(j).name + ")");
  }
  return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
}

Eigen::VectorXd Dataset::column(std::size_t j) const {
  if (column_has_missing(j)) {
    throw Error("dataset: column '" + columns_.at(j).name +
                "' has masked cells");
  }
  return values_.col(static_cast<Eigen::Index>(j));
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
  const auto n = rows.size();
  Eigen::MatrixXd v(static_cast<Eigen::Index>(n), values_.cols());
  std::vector<std::uint8_t> m(n * cols());
  for (std::size_t r = 0; r < n; ++r) {
    v.row(static_cast<Eigen::Index>(r)) =
        values_.row(static_cast<Eigen::Index>(rows[r]));
    for (std::size_t j = 0; j < cols(); ++j) {
      m[j * n + r] = mask_[j * this->rows() + rows[r]];
    }
  }
  return Dataset(columns_, std::move(v), std::move(m));
}

Dataset Dataset::with_mask(std::vector<std::uint8_t> mask) const {
  return Dataset(columns_, values_, std::move(mask));
}

Dataset Dataset::with_column(Column c, const Eigen::VectorXd& values) const {
  return with_column(std::move(c), values,
                     std::vector<std::uint8_t>(rows(), 0));
}

Dataset Dataset::with_column(Column c, const Eigen::VectorXd& values,
                             std::vector<std::uint8_t> column_mask) const {
  if (static_cast<std::size_t>(values.size()) != rows() ||
      column_mask.size() != rows()) {
    throw Error("dataset: appended column '" + c.name + "' has wrong length");
  }
  auto cols = columns_;
  cols.push_back(std::move(c));
  Eigen::MatrixXd v(values_.rows(), values_.cols() + 1);
  v.leftCols(values_.cols()) = values_;
  v.col(values_.cols()) = values;
  auto m = mask_;
  m.insert(m.end(), column_mask.begin(), column_mask.end());
  return Dataset(std::move(cols), std::move(v), std::move(m));
}

Dataset Dataset::set_value(std::size_t i, std::size_t j, double v) const {
  Dataset out = *this;
  out.values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
  out.mask_[j * rows() + i] = 0;
  return out;
}

void Dataset::validate() const {
  if (rows() == 0) throw Error("dataset: no rows");
  for (std::size_t j = 0; j < cols(); ++j) {
    for (std::size_t i = 0; i < rows(); ++i) {
      if (missing(i, j)) continue;
      const double v = values_(static_cast<Eigen::Index>(i),
                               static_cast<Eigen::Index>(j));
      if (!std::isfinite(v)) {
        throw Error("dataset: non-finite value in column '" +
                    columns_[j].name + "' row " + std::to_string(i));
      }
      if (columns_[j].kind == ColumnKind::binary && v != 0.0 && v != 1.0) {
        throw Error("dataset: binary column '" + columns_[j].name +
                    "' holds " + format_double(v) + " at row " +
                    std::to_string(i));
      }
    }
  }
}

CompleteCases complete_cases(const Dataset& d,
                             std::span<const std::string> vars) {
  std::vector<std::size_t> idx;
  idx.reserve(vars.size());
  for (const auto& v : vars) idx.push_back(d.index_of(v));
  CompleteCases out;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const bool ok = std::none_of(idx.begin(), idx.end(),
                                 [&](std::size_t j) { return d.missing(i, j); });
    if (ok) out.kept_rows.push_back(i);
  }
  out.data = d.select_rows(out.kept_rows);
  out.empty = out.kept_rows.empty();
  return out;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_csv(const Dataset& d, std::ostream& out) {
  for (std::size_t j = 0; j < d.cols(); ++j) {
    out << (j ? "," : "") << d.column_info(j).name;
  }
  out << '\n';
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) {
      if (j) out << ',';
      if (!d.missing(i, j)) out << format_double(d.value(i, j));
      else out << "NA";
    }
    out << '\n';
  }
}

void write_csv(const Dataset& d, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  write_csv(d, f);
  if (!f) throw Error("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace

Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("csv: empty input");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  auto header = split_csv_line(line);
  std::vector<Column> cols;
  for (auto& h : header) {
    h = trim(h);
    cols.push_back({h, kind_for_name(h)});
  }
  if (cols.size() != std::size(kVariableNames)) {
    throw Error("csv: expected header A,Z1,Z2,Z3,Z4,Z5,X,Y");
  }
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j].name != kVariableNames[j]) {
      throw Error("csv: expected column '" + std::string(kVariableNames[j]) +
                  "' at position " + std::to_string(j + 1) + ", found '" +
                  cols[j].name + "'");
    }
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<std::uint8_t>> miss;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != cols.size()) {
      throw Error("csv: line " + std::to_string(line_no) + " has " +
                  std::to_string(cells.size()) + " fields, expected " +
                  std::to_string(cols.size()));
    }
    std::vector<double> r(cols.size(), 0.0);
    std::vector<std::uint8_t> m(cols.size(), 0);
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const auto cell = trim(cells[j]);
      if (cell.empty() || cell == "NA") {
        m[j] = 1;
        continue;
      }
      double v = 0.0;
      auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || p != cell.data() + cell.size()) {
        throw Error("csv: line " + std::to_string(line_no) +
                    ": cannot parse '" + cell + "' in column " + cols[j].name);
      }
      r[j] = v;
    }
    rows.push_back(std::move(r));
    miss.push_back(std::move(m));
  }
  const auto n = rows.size();
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(cols.size()));
  std::vector<std::uint8_t> mask(n * cols.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
      mask[j * n + i] = miss[i][j];
    }
  }
  Dataset d(std::move(cols), std::move(values), std::move(mask));
  d.validate();
  return d;
}

Dataset read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return read_csv(f);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
    : RngStream(master_seed,
                splitmix64(splitmix64(master_seed) ^ splitmix64(~stream_id)),
                true) {}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t key, bool)
    : master_seed_(master_seed), key_(key), engine_(splitmix64(key)) {}

RngStream RngStream::derive(std::uint64_t child) const {
  const std::uint64_t k =
      splitmix64(key_ ^ splitmix64(child + 0x632BE59BD9B4E019ULL));
  return RngStream(master_seed_, k, true);
}

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n <= 1) return 0;
  // Lemire's nearly-divisionless bounded draw.
  const auto bound = static_cast<std::uint64_t>(n);
  unsigned __int128 m = static_cast<unsigned __int128>(engine_()) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(engine_()) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::size_t>(m >> 64);
}

double RngStream::normal() {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return spare_normal_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * f;
  has_spare_normal_ = true;
  return u * f;
}

double logit_inv(double x) {
  if (x > 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

std::string method_token(Method m) {
  switch (m) {
    case Method::cca: return "cca";
    case Method::ext_tmle: return "ext-tmle";
    case Method::ext_tmle_mcmi: return "ext-tmle-mcmi";
    case Method::mi_noint: return "mi-noint";
    case Method::mi_2way: return "mi-2way";
    case Method::mi_higher: return "mi-higher";
    case Method::mi_cart: return "mi-cart";
    case Method::mi_rf: return "mi-rf";
  }
  return "?";
}

Method method_from_token(std::string_view token) {
  for (auto m : kAllMethods) {
    if (method_token(m) == token) return m;
  }
  throw Error("unknown method '" + std::string(token) + "'");
}

std::string method_label(Method m) {
  switch (m) {
    case Method::cca: return "Complete-case";
    case Method::ext_tmle: return "Ext-TMLE";
    case Method::ext_tmle_mcmi: return "Ext-TMLE+MCMI";
    case Method::mi_noint: return "MI-no int";
    case Method::mi_2way: return "MI-2-way int";
    case Method::mi_higher: return "MI-higher int";
    case Method::mi_cart: return "MI-CART";
    case Method::mi_rf: return "MI-RF";
  }
  return "?";
}

bool is_mi_method(Method m) {
  return m != Method::cca && m != Method::ext_tmle &&
         m != Method::ext_tmle_mcmi;
}

EstimateResult make_estimate(Method method, double psi, double se,
                             std::size_t n_used) {
  EstimateResult r;
  r.method = method;
  r.psi = psi;
  r.se = se;
  r.ci_lo = psi - 1.96 * se;
  r.ci_hi = psi + 1.96 * se;
  r.n_used = n_used;
  return r;
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  // Shifted by the first value so identical inputs return that value exactly.
  double s = 0.0;
  for (double x : v) s += x - v[0];
  return v[0] + s / static_cast<double>(v.size());
}

double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace tmlemiss
