#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebosal/datagen.hpp"
#include "ebosal/model.hpp"

namespace ebosal {

// One row per (run, cycle). CSV column order follows field order, with the
// truncated flag kept out of the CSV.
struct CycleReport {
  int cycle = 0;
  int seed = 0;  // seed index within the experiment
  std::string method;
  std::size_t labeled_count = 0;
  std::size_t spent_budget = 0;
  double test_accuracy = 0.0;
  double query_precision_cycle = 0.0;
  double query_precision_cumulative = 0.0;
  // AUROC of the separator energy, unknown = positive. NaN when undefined or
  // when the method trains no separator.
  double energy_auroc = 0.0;
  double mean_energy_known = 0.0;
  double mean_energy_unknown = 0.0;
  bool fallback_engaged = false;
  bool truncated = false;
};

// Fraction of test samples whose argmax scorer logit (ties to the lowest
// class index) equals the known-class label.
double accuracy(const DualEBM& model, const OpenSetTask& task);
// Same rule for raw logits and integer labels.
double accuracy_from_logits(const ad::Tensor& logits, std::span<const int> labels);

// P(random unknown scores above random known), ties count one half, via the
// rank-sum formula. NaN when either side is empty.
double auroc(std::span<const double> unknown_scores, std::span<const double> known_scores);
double auroc(const std::unordered_map<PoolId, double>& scores,
             const std::unordered_map<PoolId, bool>& is_unknown);

std::string csv_header();
std::string format_number(double v);  // %.6g, NaN as "nan"
void write_csv(std::span<const CycleReport> reports, const std::filesystem::path& path);
std::vector<CycleReport> read_csv(const std::filesystem::path& path);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation, 0 when n == 1
  std::size_t n = 0;
  std::size_t dropped = 0;  // NaN entries excluded
};
Summary summarize(std::span<const double> values);

struct AggregateRow {
  std::string method;
  int cycle = 0;
  std::size_t runs = 0;
  Summary labeled_count;
  Summary test_accuracy;
  Summary query_precision_cycle;
  Summary query_precision_cumulative;
  Summary energy_auroc;
  Summary mean_energy_known;
  Summary mean_energy_unknown;
};

// Groups by (method, cycle); output sorted by method name then cycle.
std::vector<AggregateRow> aggregate(std::span<const CycleReport> reports);
void write_aggregate_csv(std::span<const AggregateRow> rows, const std::filesystem::path& path);

// Whitespace-separated plot table: cycle, then mean and sd per method.
void write_plot_dat(std::span<const AggregateRow> rows, const std::string& metric,
                    const std::filesystem::path& path);
const Summary& metric_of(const AggregateRow& row, const std::string& metric);
// Metric names accepted by metric_of / write_plot_dat.
const std::vector<std::string>& plot_metrics();

}  // namespace ebosal
