#include "oracles.hpp"

#include <doctest.h>

#include <sstream>

using namespace tmlemiss;

TEST_SUITE("core") {

TEST_CASE("logit_inv values") {
  CHECK(logit_inv(0.0) == 0.5);
  CHECK(logit_inv(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  // 40-digit evaluation of exp(-40) / (1 + exp(-40)).
  const double ref = 4.248354255291588977e-18;
  CHECK(logit_inv(-40.0) > 0.0);
  CHECK(std::abs(logit_inv(-40.0) - ref) / ref < 1e-14);
  CHECK(logit_inv(700.0) == 1.0);
  CHECK(logit_inv(-700.0) > 0.0);
  CHECK(std::isfinite(logit_inv(-745.0)));
  CHECK(logit(logit_inv(1.3)) == doctest::Approx(1.3).epsilon(1e-12));
}

TEST_CASE("complete_cases keeps order and is idempotent") {
  Eigen::MatrixXd v(3, 2);
  v << 1, 0, 2, 1, 3, 1;
  Dataset d = oracle::make_dataset({"A", "X"}, v);
  d = d.with_mask({0, 0, 0, 0, 1, 0});  // row 2 missing X
  const std::vector<std::string> vars = {"X"};
  const auto cc = complete_cases(d, vars);
  REQUIRE(cc.data.rows() == 2);
  CHECK(cc.kept_rows == std::vector<std::size_t>{0, 2});
  CHECK(cc.data.value(1, 0) == 3.0);
  const auto twice = complete_cases(cc.data, vars);
  CHECK(twice.data.underlying_values() == cc.data.underlying_values());
  CHECK_FALSE(cc.empty);

  const auto full = complete_cases(oracle::make_dataset({"A", "X"}, v), vars);
  CHECK(full.data.rows() == 3);

  Dataset all_missing = d.with_mask({0, 0, 0, 1, 1, 1});
  const auto none = complete_cases(all_missing, vars);
  CHECK(none.empty);
  CHECK(none.data.rows() == 0);
}

TEST_CASE("masked values are never handed out") {
  Eigen::MatrixXd v(2, 2);
  v << 1, 0, 2, 1;
  Dataset d = oracle::make_dataset({"A", "X"}, v).with_mask({0, 0, 1, 0});
  CHECK_THROWS_AS(d.value(0, 1), Error);
  CHECK_THROWS_AS(d.column(1), Error);
  CHECK(d.value(1, 1) == 1.0);
  CHECK(d.underlying(0, 1) == 0.0);
}

TEST_CASE("validate rejects non-binary exposure") {
  Eigen::MatrixXd v(2, 1);
  v << 0, 2;
  CHECK_THROWS_AS(oracle::make_dataset({"X"}, v).validate(), Error);
}

TEST_CASE("CSV round trip keeps values and mask") {
  RngStream rng(5, 0);
  Eigen::MatrixXd v(20, 8);
  std::vector<std::uint8_t> mask(160, 0);
  for (int i = 0; i < 20; ++i) {
    v(i, 0) = rng.normal();
    for (int j = 1; j < 7; ++j) v(i, j) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    v(i, 7) = rng.normal() * 1e-7 + 1.0 / 3.0;
  }
  for (std::size_t j = 2; j < 8; ++j) {
    for (std::size_t i = 0; i < 20; ++i) mask[j * 20 + i] = rng.bernoulli(0.2);
  }
  std::vector<std::string> names(std::begin(kVariableNames), std::end(kVariableNames));
  const Dataset d = oracle::make_dataset(names, v).with_mask(mask);
  std::stringstream ss;
  write_csv(d, ss);
  const Dataset back = read_csv(ss);
  REQUIRE(back.rows() == 20);
  CHECK(std::equal(back.mask().begin(), back.mask().end(), d.mask().begin()));
  for (std::size_t i = 0; i < 20; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      if (!d.missing(i, j)) CHECK(back.value(i, j) == d.value(i, j));
    }
  }
}

TEST_CASE("CSV accepts NA and empty cells and checks the header") {
  std::stringstream ok("A,Z1,Z2,Z3,Z4,Z5,X,Y\n0.5,1,NA,0,,1,0,2.5\n");
  const Dataset d = read_csv(ok);
  CHECK(d.missing(0, 2));
  CHECK(d.missing(0, 4));
  CHECK(d.value(0, 7) == 2.5);
  std::stringstream bad("A,Z1,Z2,Z3,Z4,Z5,Y,X\n0,0,0,0,0,0,0,0\n");
  CHECK_THROWS_AS(read_csv(bad), Error);
  std::stringstream nonbinary("A,Z1,Z2,Z3,Z4,Z5,X,Y\n0,0,0,0,0,0,0.5,0\n");
  CHECK_THROWS_AS(read_csv(nonbinary), Error);
}

TEST_CASE("format_double round-trips") {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 12345.678, 0.2}) {
    CHECK(std::stod(format_double(x)) == x);
  }
}

TEST_CASE("RngStream is keyed by path, not by parent usage") {
  RngStream a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream p(42, 7);
  const RngStream c1 = p.derive(3);
  for (int i = 0; i < 10; ++i) p.normal();
  RngStream c2 = p.derive(3);
  RngStream c1c = c1;
  for (int i = 0; i < 10; ++i) CHECK(c1c.uniform() == c2.uniform());
  RngStream d1 = RngStream(42, 7).derive(4), d2 = RngStream(42, 7).derive(3);
  CHECK(d1.next_u64() != d2.next_u64());
  CHECK(RngStream(43, 7).next_u64() != RngStream(42, 7).next_u64());
}

TEST_CASE("uniform_index covers its range evenly") {
  RngStream r(1, 1);
  std::array<int, 5> counts{};
  for (int i = 0; i < 50000; ++i) ++counts[r.uniform_index(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("make_estimate interval") {
  const auto e = make_estimate(Method::cca, 0.2, 0.1, 10);
  CHECK(e.ci_lo == doctest::Approx(0.2 - 0.196));
  CHECK(e.ci_hi == doctest::Approx(0.2 + 0.196));
  CHECK(e.ci_lo <= e.psi);
  CHECK(e.psi <= e.ci_hi);
}

TEST_CASE("method tokens and labels") {
  const char* labels[] = {"Complete-case", "Ext-TMLE",     "Ext-TMLE+MCMI", "MI-no int",
                          "MI-2-way int",  "MI-higher int", "MI-CART",      "MI-RF"};
  int k = 0;
  for (auto m : kAllMethods) {
    CHECK(method_label(m) == labels[k++]);
    CHECK(method_from_token(method_token(m)) == m);
  }
  CHECK_THROWS_AS(method_from_token("bogus"), Error);
}

TEST_CASE("mean and variance of identical values are exact") {
  const std::vector<double> v(5, 0.1);
  CHECK(mean(v) == 0.1);
  CHECK(sample_variance(v) == 0.0);
  const std::vector<double> w = {0.1, 0.2, 0.3};
  CHECK(std::sqrt(sample_variance(w)) == doctest::Approx(0.1).epsilon(1e-12));
}

}  // TEST_SUITE
