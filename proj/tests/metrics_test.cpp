#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ebosal/metrics.hpp"
#include "support/reference.hpp"

using namespace ebosal;
namespace et = ebosal::testing;
using ad::Tensor;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ebosal_metrics_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CycleReport report(const std::string& method, int cycle, int seed, double acc, double auroc_value) {
  CycleReport r;
  r.method = method;
  r.cycle = cycle;
  r.seed = seed;
  r.labeled_count = 50 + 10 * static_cast<std::size_t>(cycle);
  r.spent_budget = 30 * static_cast<std::size_t>(cycle);
  r.test_accuracy = acc;
  r.query_precision_cycle = 0.1234567;
  r.query_precision_cumulative = 1.0 / 3.0;
  r.energy_auroc = auroc_value;
  r.mean_energy_known = -12.3456789;
  r.mean_energy_unknown = 3.5e-7;
  r.fallback_engaged = cycle % 2 == 1;
  return r;
}

}  // namespace

TEST(Accuracy, PerfectPredictions) {
  const int labels[] = {0, 1, 2};
  EXPECT_EQ(accuracy_from_logits(Tensor::matrix(3, 3, {5, 0, 0, 0, 5, 0, 0, 0, 5}), labels), 1.0);
}

TEST(Accuracy, ConstantPredictorOnBalancedSet) {
  const int labels[] = {0, 1, 2, 3, 0, 1, 2, 3};
  // All-equal logits: ties go to class 0.
  EXPECT_EQ(accuracy_from_logits(Tensor(ad::Shape{8, 4}, 1.0), labels), 0.25);
}

TEST(Accuracy, TwoOfFour) {
  const int labels[] = {0, 1, 0, 1};
  EXPECT_EQ(accuracy_from_logits(Tensor::matrix(4, 2, {1, 0, 1, 0, 1, 0, 1, 0}), labels), 0.5);
}

TEST(Auroc, PerfectSeparation) {
  const double u[] = {5, 6, 7}, k[] = {1, 2};
  EXPECT_EQ(auroc(u, k), 1.0);
}

TEST(Auroc, AllTies) {
  const double u[] = {3, 3}, k[] = {3, 3, 3};
  EXPECT_EQ(auroc(u, k), 0.5);
}

TEST(Auroc, BruteForcePairs) {
  const std::unordered_map<PoolId, double> scores{{0, 1}, {1, 3}, {2, 2}, {3, 4}};
  const std::unordered_map<PoolId, bool> unknown{{0, false}, {1, false}, {2, true}, {3, true}};
  EXPECT_NEAR(auroc(scores, unknown), et::ref::brute_auroc({2, 4}, {1, 3}), 1e-9);
  EXPECT_EQ(auroc(scores, unknown), 0.75);
}

TEST(Auroc, OneSideMissingIsNaN) {
  const double u[] = {1.0};
  EXPECT_TRUE(std::isnan(auroc(u, {})));
  EXPECT_TRUE(std::isnan(auroc({}, u)));
}

TEST(Auroc, MatchesPairwiseCountOnRandomTiedScores) {
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<int> v(-5, 5), n(1, 30);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> u(n(rng)), k(n(rng));
    for (double& x : u) x = v(rng);
    for (double& x : k) x = v(rng);
    EXPECT_NEAR(auroc(u, k), et::ref::brute_auroc(u, k), 1e-12);
  }
}

TEST(Auroc, InvariantUnderIncreasingTransform) {
  std::mt19937_64 rng(67);
  std::normal_distribution<double> g(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> u(20), k(25);
    for (double& x : u) x = g(rng) + 1.0;
    for (double& x : k) x = g(rng);
    auto f = [](double x) { return std::exp(0.5 * x) + x * x * x; };
    std::vector<double> fu, fk;
    for (double x : u) fu.push_back(f(x));
    for (double x : k) fk.push_back(f(x));
    EXPECT_EQ(auroc(u, k), auroc(fu, fk));
  }
}

TEST(Csv, EmptyListIsHeaderOnly) {
  const auto p = temp_path("empty.csv");
  write_csv({}, p);
  EXPECT_EQ(slurp(p), csv_header() + "\n");
  std::filesystem::remove(p);
}

TEST(Csv, OneReportTwoLines) {
  const auto p = temp_path("one.csv");
  const CycleReport r = report("ebosal", 1, 0, 0.5, 0.9);
  write_csv(std::span<const CycleReport>(&r, 1), p);
  const std::string text = slurp(p);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  EXPECT_NE(text.find("1,0,ebosal,60,30,0.5,0.123457,0.333333,0.9,-12.3457,3.5e-07,1\n"), std::string::npos);
  std::filesystem::remove(p);
}

TEST(Csv, RepeatedWritesAreByteIdentical) {
  const auto a = temp_path("a.csv"), b = temp_path("b.csv");
  std::vector<CycleReport> rs{report("ebosal", 1, 0, 0.5, 0.9), report("random", 2, 1, 0.25, NAN)};
  write_csv(rs, a);
  write_csv(rs, b);
  EXPECT_EQ(slurp(a), slurp(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(Csv, RoundTripToPrintedPrecision) {
  std::mt19937_64 rng(71);
  std::uniform_real_distribution<double> u(0, 1), e(-40, 10);
  std::vector<CycleReport> rs;
  for (int i = 0; i < 50; ++i) {
    CycleReport r = report(i % 2 ? "entropy" : "no_ekus", i, i % 5, u(rng), i % 7 ? u(rng) : NAN);
    r.mean_energy_known = e(rng);
    r.mean_energy_unknown = e(rng);
    rs.push_back(r);
  }
  const auto p = temp_path("roundtrip.csv");
  write_csv(rs, p);
  const auto back = read_csv(p);
  ASSERT_EQ(back.size(), rs.size());
  auto close = [](double a, double b) {
    if (std::isnan(a)) return std::isnan(b);
    return std::abs(a - b) <= 5e-6 * std::max(1.0, std::abs(a));
  };
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(back[i].cycle, rs[i].cycle);
    EXPECT_EQ(back[i].seed, rs[i].seed);
    EXPECT_EQ(back[i].method, rs[i].method);
    EXPECT_EQ(back[i].labeled_count, rs[i].labeled_count);
    EXPECT_EQ(back[i].spent_budget, rs[i].spent_budget);
    EXPECT_TRUE(close(rs[i].test_accuracy, back[i].test_accuracy));
    EXPECT_TRUE(close(rs[i].energy_auroc, back[i].energy_auroc));
    EXPECT_TRUE(close(rs[i].mean_energy_known, back[i].mean_energy_known));
    EXPECT_TRUE(close(rs[i].mean_energy_unknown, back[i].mean_energy_unknown));
    EXPECT_EQ(back[i].fallback_engaged, rs[i].fallback_engaged);
  }
  // Re-emitting the parsed rows reproduces the file.
  const auto q = temp_path("roundtrip2.csv");
  write_csv(back, q);
  EXPECT_EQ(slurp(p), slurp(q));
  std::filesystem::remove(p);
  std::filesystem::remove(q);
}

TEST(Csv, UnwritablePathNamesThePath) {
  try {
    write_csv({}, "/nonexistent_dir_for_test/out.csv");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent_dir_for_test/out.csv"), std::string::npos);
  }
}

TEST(Summary, SingleValue) {
  const double v[] = {0.7};
  const Summary s = summarize(v);
  EXPECT_EQ(s.mean, 0.7);
  EXPECT_EQ(s.sd, 0.0);
}

TEST(Summary, SampleStandardDeviation) {
  const double v[] = {0.4, 0.6};
  const Summary s = summarize(v);
  EXPECT_NEAR(s.mean, 0.5, 1e-15);
  EXPECT_NEAR(s.sd, std::sqrt(0.02), 1e-15);
  EXPECT_NEAR(s.sd, 0.1414, 1e-4);
}

TEST(Summary, NaNsDroppedAndCounted) {
  const double v[] = {0.4, NAN, 0.6, NAN};
  const Summary s = summarize(v);
  EXPECT_EQ(s.n, 2u);
  EXPECT_EQ(s.dropped, 2u);
  EXPECT_NEAR(s.mean, 0.5, 1e-15);
}

TEST(Aggregate, GroupsSortedByMethodThenCycle) {
  std::vector<CycleReport> rs;
  for (int seed = 0; seed < 3; ++seed)
    for (int c = 1; c <= 4; ++c) {
      rs.push_back(report("random", c, seed, 0.1 * seed + 0.01 * c, 0.5));
      rs.push_back(report("ebosal", c, seed, 0.2 * seed + 0.01 * c, seed == 1 ? NAN : 0.8));
    }
  const auto rows = aggregate(rs);
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0].method, "ebosal");
  EXPECT_EQ(rows[0].cycle, 1);
  EXPECT_EQ(rows[4].method, "random");
  EXPECT_EQ(rows[3].cycle, 4);
  EXPECT_EQ(rows[0].runs, 3u);
  EXPECT_NEAR(rows[0].test_accuracy.mean, (0.01 + 0.21 + 0.41) / 3.0, 1e-12);
  EXPECT_EQ(rows[0].energy_auroc.dropped, 1u);
  EXPECT_EQ(rows[0].energy_auroc.n, 2u);
}

TEST(PlotDat, ColumnsPerMethod) {
  std::vector<CycleReport> rs{report("ebosal", 1, 0, 0.5, 0.9), report("ebosal", 2, 0, 0.75, 0.9),
                              report("random", 1, 0, 0.25, NAN)};
  const auto rows = aggregate(rs);
  const auto p = temp_path("acc.dat");
  write_plot_dat(rows, "test_accuracy", p);
  EXPECT_EQ(slurp(p),
            "# test_accuracy\n# cycle ebosal_mean ebosal_sd random_mean random_sd\n"
            "1 0.5 0 0.25 0\n2 0.75 0 nan nan\n");
  EXPECT_THROW(write_plot_dat(rows, "bogus", p), ConfigError);
  std::filesystem::remove(p);
}
