#pragma once

// Subcommand bodies behind the CLI. Each writes its artifacts under
// config.out_dir plus manifest.json (artifact list and resolved config), and
// returns a process exit code.

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ebosal/alcycle.hpp"
#include "ebosal/config.hpp"
#include "ebosal/metrics.hpp"

namespace ebosal {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRunFailed = 1;
inline constexpr int kExitUsage = 2;

// run: every (method x seed) run, per-run CSVs, aggregate CSV, plot .dat files.
int cmd_run(const ExperimentConfig& config, bool force, std::ostream& log);
// ablate: the five methods on one task plus ablation.csv (final-cycle rows).
int cmd_ablate(const ExperimentConfig& config, bool force, std::ostream& log);
// sweep: ebosal per (delta_k, delta_u) grid point, matrix .dat files.
int cmd_sweep(const ExperimentConfig& config, bool force, std::ostream& log);

// Last cycle of each method, ordered by method name.
std::vector<AggregateRow> final_cycle_rows(std::span<const AggregateRow> rows);

struct SweepCell {
  double delta_k = 0.0;
  double delta_u = 0.0;
  bool skipped = false;
  AggregateRow final_row;
};

// Row-major over sweep.delta_k x sweep.delta_u. Points with delta_k >=
// delta_u are skipped and reported through `log`.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config, std::ostream& log);

}  // namespace ebosal
