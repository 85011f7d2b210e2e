#include "ebosal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace ebosal {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_stream(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}
}  // namespace

double accuracy_from_logits(const ad::Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (n == 0 || labels.size() != n) throw ContractError("accuracy: empty or mismatched test set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.at(i, j) > logits.at(i, best)) best = j;
    correct += static_cast<int>(best) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double accuracy(const DualEBM& model, const OpenSetTask& task) {
  if (task.test.empty()) throw ContractError("accuracy: empty test set");
  std::vector<const std::vector<double>*> rows;
  std::vector<int> labels;
  for (const Sample& s : task.test) {
    const int label = task.label_of(s.true_class);
    if (label < 0) throw ContractError("accuracy: test set contains an unknown-class sample");
    rows.push_back(&s.features);
    labels.push_back(label);
  }
  ad::NoGradGuard guard;
  const ad::Var logits = model.ess_logits(batch_matrix(rows, model.input_dim()));
  return accuracy_from_logits(logits.value(), labels);
}

double auroc(std::span<const double> unknown_scores, std::span<const double> known_scores) {
  const std::size_t nu = unknown_scores.size(), nk = known_scores.size();
  if (nu == 0 || nk == 0) return kNaN;
  std::vector<std::pair<double, bool>> all;
  all.reserve(nu + nk);
  for (double s : unknown_scores) all.emplace_back(s, true);
  for (double s : known_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // Average 1-based ranks across tie groups.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum += avg_rank;
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(nu) * static_cast<double>(nu + 1);
  return u / (static_cast<double>(nu) * static_cast<double>(nk));
}

double auroc(const std::unordered_map<PoolId, double>& scores,
             const std::unordered_map<PoolId, bool>& is_unknown) {
  std::vector<double> unknown, known;
  for (const auto& [id, s] : scores) {
    auto it = is_unknown.find(id);
    if (it == is_unknown.end()) throw ContractError("auroc: no label for id " + std::to_string(id));
    (it->second ? unknown : known).push_back(s);
  }
  return auroc(unknown, known);
}

// ---------------------------------------------------------------- CSV

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string csv_header() {
  return "cycle,seed,method,labeled_count,spent_budget,test_accuracy,query_precision_cycle,"
         "query_precision_cumulative,energy_auroc,mean_energy_known,mean_energy_unknown,"
         "fallback_engaged";
}

void write_csv(std::span<const CycleReport> reports, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << csv_header() << '\n';
  for (const CycleReport& r : reports) {
    out << r.cycle << ',' << r.seed << ',' << r.method << ',' << r.labeled_count << ','
        << r.spent_budget << ',' << format_number(r.test_accuracy) << ','
        << format_number(r.query_precision_cycle) << ','
        << format_number(r.query_precision_cumulative) << ',' << format_number(r.energy_auroc)
        << ',' << format_number(r.mean_energy_known) << ','
        << format_number(r.mean_energy_unknown) << ',' << (r.fallback_engaged ? 1 : 0) << '\n';
  }
  check_stream(out, path);
}

std::vector<CycleReport> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != csv_header())
    throw ConfigError("'" + path.string() + "': unexpected report header");
  std::vector<CycleReport> out;
  auto num = [](const std::string& s) { return s == "nan" ? kNaN : std::stod(s); };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream is(line);
    std::string field;
    while (std::getline(is, field, ',')) f.push_back(field);
    if (f.size() != 12) throw ConfigError("'" + path.string() + "': malformed report row");
    CycleReport r;
    r.cycle = std::stoi(f[0]);
    r.seed = std::stoi(f[1]);
    r.method = f[2];
    r.labeled_count = std::stoul(f[3]);
    r.spent_budget = std::stoul(f[4]);
    r.test_accuracy = num(f[5]);
    r.query_precision_cycle = num(f[6]);
    r.query_precision_cumulative = num(f[7]);
    r.energy_auroc = num(f[8]);
    r.mean_energy_known = num(f[9]);
    r.mean_energy_unknown = num(f[10]);
    r.fallback_engaged = f[11] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------- aggregation

Summary summarize(std::span<const double> values) {
  Summary s;
  double total = 0.0;
  for (double v : values) {
    if (std::isnan(v)) {
      ++s.dropped;
      continue;
    }
    total += v;
    ++s.n;
  }
  if (s.n == 0) {
    s.mean = kNaN;
    return s;
  }
  s.mean = total / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values)
      if (!std::isnan(v)) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

std::vector<AggregateRow> aggregate(std::span<const CycleReport> reports) {
  std::map<std::pair<std::string, int>, std::vector<const CycleReport*>> groups;
  for (const CycleReport& r : reports) groups[{r.method, r.cycle}].push_back(&r);
  std::vector<AggregateRow> out;
  for (const auto& [key, members] : groups) {
    AggregateRow row;
    row.method = key.first;
    row.cycle = key.second;
    row.runs = members.size();
    auto field = [&](auto getter) {
      std::vector<double> v;
      for (const CycleReport* r : members) v.push_back(getter(*r));
      return summarize(v);
    };
    row.labeled_count = field([](const CycleReport& r) { return static_cast<double>(r.labeled_count); });
    row.test_accuracy = field([](const CycleReport& r) { return r.test_accuracy; });
    row.query_precision_cycle = field([](const CycleReport& r) { return r.query_precision_cycle; });
    row.query_precision_cumulative =
        field([](const CycleReport& r) { return r.query_precision_cumulative; });
    row.energy_auroc = field([](const CycleReport& r) { return r.energy_auroc; });
    row.mean_energy_known = field([](const CycleReport& r) { return r.mean_energy_known; });
    row.mean_energy_unknown = field([](const CycleReport& r) { return r.mean_energy_unknown; });
    out.push_back(std::move(row));
  }
  return out;
}

const std::vector<std::string>& plot_metrics() {
  static const std::vector<std::string> names{
      "labeled_count",         "test_accuracy",     "query_precision_cycle",
      "query_precision_cumulative", "energy_auroc", "mean_energy_known",
      "mean_energy_unknown"};
  return names;
}

const Summary& metric_of(const AggregateRow& row, const std::string& metric) {
  if (metric == "labeled_count") return row.labeled_count;
  if (metric == "test_accuracy") return row.test_accuracy;
  if (metric == "query_precision_cycle") return row.query_precision_cycle;
  if (metric == "query_precision_cumulative") return row.query_precision_cumulative;
  if (metric == "energy_auroc") return row.energy_auroc;
  if (metric == "mean_energy_known") return row.mean_energy_known;
  if (metric == "mean_energy_unknown") return row.mean_energy_unknown;
  throw ConfigError("unknown metric '" + metric + "'");
}

void write_aggregate_csv(std::span<const AggregateRow> rows, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "method,cycle,runs";
  for (const auto& m : plot_metrics()) out << ',' << m << "_mean," << m << "_sd";
  out << ",auroc_dropped\n";
  for (const AggregateRow& r : rows) {
    out << r.method << ',' << r.cycle << ',' << r.runs;
    for (const auto& m : plot_metrics()) {
      const Summary& s = metric_of(r, m);
      out << ',' << format_number(s.mean) << ',' << format_number(s.sd);
    }
    out << ',' << r.energy_auroc.dropped << '\n';
  }
  check_stream(out, path);
}

void write_plot_dat(std::span<const AggregateRow> rows, const std::string& metric,
                    const std::filesystem::path& path) {
  std::vector<std::string> methods;
  std::set<int> cycles;
  std::map<std::pair<std::string, int>, const AggregateRow*> index;
  for (const AggregateRow& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    cycles.insert(r.cycle);
    index[{r.method, r.cycle}] = &r;
  }
  auto out = open_out(path);
  out << "# " << metric << "\n# cycle";
  for (const auto& m : methods) out << ' ' << m << "_mean " << m << "_sd";
  out << '\n';
  for (int c : cycles) {
    out << c;
    for (const auto& m : methods) {
      auto it = index.find({m, c});
      if (it == index.end()) {
        out << " nan nan";
      } else {
        const Summary& s = metric_of(*it->second, metric);
        out << ' ' << format_number(s.mean) << ' ' << format_number(s.sd);
      }
    }
    out << '\n';
  }
  check_stream(out, path);
}

}  // namespace ebosal
