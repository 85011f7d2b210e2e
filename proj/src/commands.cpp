#include "ebosal/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "ebosal/metrics.hpp"

namespace ebosal {

namespace fs = std::filesystem;

namespace {

// Collects written artifacts so the manifest lists exactly what was produced.
class OutputDir {
 public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path file(const std::string& relative) {
    const fs::path p = root_ / relative;
    fs::create_directories(p.parent_path());
    artifacts_.push_back(relative);
    return p;
  }

  void write_manifest(const ExperimentConfig& config) {
    std::vector<std::string> sorted = artifacts_;
    sorted.push_back("manifest.json");
    std::sort(sorted.begin(), sorted.end());
    nlohmann::json doc = {{"artifacts", sorted}, {"config", to_json(config)}};
    std::ofstream out(root_ / "manifest.json", std::ios::binary);
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + (root_ / "manifest.json").string() + "'");
  }

  void mark_partial(const std::string& reason) const {
    std::ofstream out(root_ / ".partial", std::ios::binary);
    out << reason << '\n';
  }

 private:
  fs::path root_;
  std::vector<std::string> artifacts_;
};

// Returns false (after logging) when the directory exists, is non-empty, and
// force is not set.
bool prepare_output(const fs::path& root, bool force, std::ostream& log) {
  std::error_code ec;
  if (fs::exists(root, ec) && !fs::is_empty(root, ec) && !force) {
    log << "error: output directory '" << root.string()
        << "' exists and is not empty (use --force to overwrite)\n";
    return false;
  }
  fs::create_directories(root);
  fs::remove(root / ".partial", ec);
  return true;
}

ExperimentSpec spec_for(const ExperimentConfig& config, std::vector<Method> methods) {
  ExperimentSpec spec;
  spec.task = build_task(config.task);
  spec.al = config.al;
  spec.methods = std::move(methods);
  spec.master_seed = config.seed;
  spec.repeats = config.repeats;
  spec.jobs = config.jobs;
  return spec;
}

void write_experiment(const ExperimentResult& result, OutputDir& out) {
  for (const RunResult& run : result.runs) {
    write_csv(run.reports,
              out.file("runs/" + to_string(run.method) + "_seed" + std::to_string(run.seed_index) + ".csv"));
  }
  write_aggregate_csv(result.aggregate, out.file("aggregate.csv"));
  for (const std::string& metric : {std::string("test_accuracy"), std::string("query_precision_cycle"),
                                    std::string("query_precision_cumulative"), std::string("energy_auroc")}) {
    write_plot_dat(result.aggregate, metric, out.file(metric + ".dat"));
  }
}

void print_summary(std::span<const AggregateRow> rows, std::ostream& log) {
  for (const AggregateRow& r : final_cycle_rows(rows)) {
    log << r.method << ": cycle " << r.cycle << " accuracy " << format_number(r.test_accuracy.mean)
        << " cumulative_precision " << format_number(r.query_precision_cumulative.mean)
        << " energy_auroc " << format_number(r.energy_auroc.mean) << '\n';
  }
}

template <class Body>
int guarded(const ExperimentConfig& config, bool force, std::ostream& log, Body&& body) {
  const fs::path root(config.out_dir);
  try {
    if (!prepare_output(root, force, log)) return kExitUsage;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  OutputDir out(root);
  try {
    body(out);
    out.write_manifest(config);
    return kExitOk;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    out.mark_partial(e.what());
    return kExitRunFailed;
  }
}

std::string matrix_cell(const SweepCell& cell, const std::string& metric) {
  if (cell.skipped) return "nan";
  return format_number(metric_of(cell.final_row, metric).mean);
}

}  // namespace

std::vector<AggregateRow> final_cycle_rows(std::span<const AggregateRow> rows) {
  std::vector<AggregateRow> out;
  for (const AggregateRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AggregateRow& o) { return o.method == r.method; });
    if (it == out.end()) {
      out.push_back(r);
    } else if (r.cycle > it->cycle) {
      *it = r;
    }
  }
  std::sort(out.begin(), out.end(),
            [](const AggregateRow& a, const AggregateRow& b) { return a.method < b.method; });
  return out;
}

int cmd_run(const ExperimentConfig& config, bool force, std::ostream& log) {
  return guarded(config, force, log, [&](OutputDir& out) {
    const ExperimentResult result = run_experiment(spec_for(config, config.methods));
    write_experiment(result, out);
    print_summary(result.aggregate, log);
  });
}

int cmd_ablate(const ExperimentConfig& config, bool force, std::ostream& log) {
  return guarded(config, force, log, [&](OutputDir& out) {
    const ExperimentResult result = run_experiment(spec_for(config, all_methods()));
    write_experiment(result, out);
    const auto rows = final_cycle_rows(result.aggregate);
    std::ofstream table(out.file("ablation.csv"), std::ios::binary);
    table << "method,cycle,runs,test_accuracy_mean,test_accuracy_sd,query_precision_cumulative_mean,"
             "query_precision_cumulative_sd,energy_auroc_mean\n";
    for (const AggregateRow& r : rows) {
      table << r.method << ',' << r.cycle << ',' << r.runs << ',' << format_number(r.test_accuracy.mean)
            << ',' << format_number(r.test_accuracy.sd) << ','
            << format_number(r.query_precision_cumulative.mean) << ','
            << format_number(r.query_precision_cumulative.sd) << ','
            << format_number(r.energy_auroc.mean) << '\n';
    }
    if (!table) throw IoError("failed writing ablation.csv");
    print_summary(result.aggregate, log);
  });
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& config, std::ostream& log) {
  if (!config.sweep) throw ConfigError("sweep: config has no sweep grid");
  ExperimentSpec spec = spec_for(config, {Method::ebosal});
  std::vector<SweepCell> cells;
  for (double dk : config.sweep->delta_k) {
    for (double du : config.sweep->delta_u) {
      SweepCell cell;
      cell.delta_k = dk;
      cell.delta_u = du;
      if (!(dk < du)) {
        cell.skipped = true;
        log << "sweep: skipping delta_k=" << format_number(dk) << " delta_u=" << format_number(du)
            << " (delta_k must be below delta_u)\n";
        cells.push_back(std::move(cell));
        continue;
      }
      ExperimentSpec point = spec;
      point.al.margins.delta_k = dk;
      point.al.margins.delta_u = du;
      const auto rows = final_cycle_rows(run_experiment(point).aggregate);
      cell.final_row = rows.front();
      log << "sweep: delta_k=" << format_number(dk) << " delta_u=" << format_number(du)
          << " accuracy " << format_number(cell.final_row.test_accuracy.mean) << " auroc "
          << format_number(cell.final_row.energy_auroc.mean) << '\n';
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

int cmd_sweep(const ExperimentConfig& config, bool force, std::ostream& log) {
  if (!config.sweep) {
    log << "error: sweep requires a 'sweep' section with delta_k and delta_u grids\n";
    return kExitUsage;
  }
  return guarded(config, force, log, [&](OutputDir& out) {
    const auto cells = run_sweep(config, log);
    const auto& ks = config.sweep->delta_k;
    const auto& us = config.sweep->delta_u;
    for (const std::string metric : {"test_accuracy", "energy_auroc", "query_precision_cumulative"}) {
      std::ofstream m(out.file("sweep_" + metric + ".dat"), std::ios::binary);
      m << "# final-cycle " << metric << "; rows delta_k, columns delta_u\ndelta_k\\delta_u";
      for (double du : us) m << ' ' << format_number(du);
      m << '\n';
      for (std::size_t i = 0; i < ks.size(); ++i) {
        m << format_number(ks[i]);
        for (std::size_t j = 0; j < us.size(); ++j) m << ' ' << matrix_cell(cells[i * us.size() + j], metric);
        m << '\n';
      }
      if (!m) throw IoError("failed writing sweep_" + metric + ".dat");
    }
    std::ofstream longform(out.file("sweep.csv"), std::ios::binary);
    longform << "delta_k,delta_u,skipped,runs,test_accuracy_mean,test_accuracy_sd,energy_auroc_mean,"
                "energy_auroc_sd,query_precision_cumulative_mean,query_precision_cumulative_sd\n";
    for (const SweepCell& c : cells) {
      longform << format_number(c.delta_k) << ',' << format_number(c.delta_u) << ',' << (c.skipped ? 1 : 0);
      if (c.skipped) {
        longform << ",0,nan,nan,nan,nan,nan,nan\n";
        continue;
      }
      const AggregateRow& r = c.final_row;
      longform << ',' << r.runs << ',' << format_number(r.test_accuracy.mean) << ','
               << format_number(r.test_accuracy.sd) << ',' << format_number(r.energy_auroc.mean) << ','
               << format_number(r.energy_auroc.sd) << ',' << format_number(r.query_precision_cumulative.mean)
               << ',' << format_number(r.query_precision_cumulative.sd) << '\n';
    }
    if (!longform) throw IoError("failed writing sweep.csv");
  });
}

}  // namespace ebosal
