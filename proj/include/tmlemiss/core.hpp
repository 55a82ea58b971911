#pragma once

// Shared data model: the analysis table with its missingness mask, the
// deterministic random streams used everywhere, and small scalar helpers.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tmlemiss {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ColumnKind { binary, continuous };

struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::continuous;
};

/// Canonical analysis variables, in file/column order.
inline constexpr std::string_view kVariableNames[] = {"A",  "Z1", "Z2", "Z3",
                                                      "Z4", "Z5", "X",  "Y"};

/// Kind implied by a canonical (or indicator) column name.
ColumnKind kind_for_name(std::string_view name);

/// Rectangular table of doubles with a per-cell missingness mask.
///
/// Values under a set mask bit are kept (the simulator uses them as the
/// oracle) but `value()` and `column()` refuse to hand them out.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Column> columns, Eigen::MatrixXd values);
  Dataset(std::vector<Column> columns, Eigen::MatrixXd values,
          std::vector<std::uint8_t> mask);

  std::size_t rows() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<Column>& columns() const { return columns_; }
  const Column& column_info(std::size_t j) const { return columns_.at(j); }

  bool has_column(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  bool missing(std::size_t i, std::size_t j) const {
    return mask_[j * rows() + i] != 0;
  }
  bool any_missing() const;
  bool column_has_missing(std::size_t j) const;
  std::size_t missing_count(std::size_t j) const;

  /// Observed value; throws if the cell is masked.
  double value(std::size_t i, std::size_t j) const;

  /// Full column; throws if any cell of it is masked.
  Eigen::VectorXd column(std::size_t j) const;
  Eigen::VectorXd column(std::string_view name) const {
    return column(index_of(name));
  }

  /// Stored value regardless of mask. Only simulation oracles use this.
  double underlying(std::size_t i, std::size_t j) const { return values_(i, j); }
  const Eigen::MatrixXd& underlying_values() const { return values_; }

  std::span<const std::uint8_t> mask() const { return mask_; }

  Dataset select_rows(std::span<const std::size_t> rows) const;
  Dataset with_mask(std::vector<std::uint8_t> mask) const;
  Dataset with_column(Column c, const Eigen::VectorXd& values) const;
  Dataset with_column(Column c, const Eigen::VectorXd& values,
                      std::vector<std::uint8_t> column_mask) const;
  Dataset set_value(std::size_t i, std::size_t j, double v) const;

  /// Rejects non-0/1 observed values in binary columns, duplicate names,
  /// and non-finite observed values.
  void validate() const;

 private:
  std::vector<Column> columns_;
  Eigen::MatrixXd values_;
  std::vector<std::uint8_t> mask_;  // column-major, 1 = missing
};

/// Rows observed on every listed column, in original order. An empty result
/// is not an error; `empty` tells the caller.
struct CompleteCases {
  Dataset data;
  std::vector<std::size_t> kept_rows;
  bool empty = false;
};
CompleteCases complete_cases(const Dataset& d,
                             std::span<const std::string> vars);

// CSV: header row of column names, "NA" (or empty) for missing cells.
void write_csv(const Dataset& d, std::ostream& out);
void write_csv(const Dataset& d, const std::string& path);
Dataset read_csv(std::istream& in);
Dataset read_csv(const std::string& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

/// Deterministic random stream keyed by (master seed, stream path).
///
/// `derive(k)` yields a child stream whose key depends only on the parent's
/// key and k, never on how many draws the parent has made, so replication r
/// gets the same numbers whatever order replications run in.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id);

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t key() const { return key_; }

  RngStream derive(std::uint64_t child) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer on [0, n).
  std::size_t uniform_index(std::size_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  RngStream(std::uint64_t master_seed, std::uint64_t key, bool);

  std::uint64_t master_seed_;
  std::uint64_t key_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

/// exp(x) / (1 + exp(x)), evaluated without overflow.
double logit_inv(double x);
double logit(double p);

/// The eight missing-data strategies, in reporting order.
enum class Method {
  cca,
  ext_tmle,
  ext_tmle_mcmi,
  mi_noint,
  mi_2way,
  mi_higher,
  mi_cart,
  mi_rf,
};

inline constexpr Method kAllMethods[] = {
    Method::cca,     Method::ext_tmle,  Method::ext_tmle_mcmi,
    Method::mi_noint, Method::mi_2way,  Method::mi_higher,
    Method::mi_cart, Method::mi_rf};

/// Command-line token: cca, ext-tmle, ext-tmle-mcmi, mi-noint, ...
std::string method_token(Method m);
Method method_from_token(std::string_view token);
/// Report label: Complete-case, Ext-TMLE, ..., MI-RF.
std::string method_label(Method m);
bool is_mi_method(Method m);

struct EstimateResult {
  Method method = Method::cca;
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n_used = 0;
  std::vector<std::string> warnings;
};

/// Normal-theory 95% interval psi +/- 1.96 se.
EstimateResult make_estimate(Method method, double psi, double se,
                             std::size_t n_used);

double mean(std::span<const double> v);
/// Sample variance (divisor n - 1); 0 for fewer than two values.
double sample_variance(std::span<const double> v);

}  // namespace tmlemiss
