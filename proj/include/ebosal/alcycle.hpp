#pragma once

// The active-learning loop: per cycle, train the separator on labeled plus
// pseudo-unknown data, train the scorer on the labeled set, filter the pool by
// separator energy, rank the survivors, and query the top b.

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ebosal/datagen.hpp"
#include "ebosal/losses.hpp"
#include "ebosal/metrics.hpp"
#include "ebosal/model.hpp"

namespace ebosal {

enum class Method { ebosal, random, entropy, no_ekus, no_ess };
std::string to_string(Method method);
Method method_from_string(const std::string& name);
const std::vector<Method>& all_methods();

enum class RefreshCadence { per_epoch, per_cycle };
std::string to_string(RefreshCadence cadence);
RefreshCadence cadence_from_string(const std::string& name);

// Which unlabeled samples the negative-learning term sees.
enum class NlMode {
  pseudo_plus_uniform,  // pseudo-unknown half plus an equal-size draw from D_UL \ D_UK
  pseudo_only,
};
std::string to_string(NlMode mode);
NlMode nl_mode_from_string(const std::string& name);

enum class MarginMode {
  fixed,
  // After a warmup, delta_k / delta_u become the 30th / 70th percentiles of the
  // pool's separator energies.
  auto_calibrate,
};
std::string to_string(MarginMode mode);
MarginMode margin_mode_from_string(const std::string& name);

struct ALConfig {
  int cycles = 10;
  std::size_t budget = 30;
  double rho = 0.05;
  double beta = 0.1;
  double init_fraction = 0.1;
  MarginConfig margins{};
  Method method = Method::ebosal;
  ModelHyper model{};
  // Filter threshold; defaults to delta_k when unset.
  std::optional<double> filter_threshold;
  RefreshCadence refresh = RefreshCadence::per_epoch;
  NlMode nl_mode = NlMode::pseudo_plus_uniform;
  MarginMode margin_mode = MarginMode::fixed;
  int warmup_epochs = 5;
  bool use_invalid_as_unknown = false;
  bool warm_start = false;

  void validate() const;
  double threshold(const MarginConfig& effective) const {
    return filter_threshold.value_or(effective.delta_k);
  }
};

// Independent random streams derived from one run seed.
struct RunStreams {
  std::mt19937_64 data;    // pool init, batch order
  std::mt19937_64 init;    // model initialisation per cycle
  std::mt19937_64 nl;      // complementary labels
  std::mt19937_64 method;  // method-private draws (random selection)

  RunStreams(std::uint64_t run_seed, Method method);
};

struct RunState {
  std::shared_ptr<const OpenSetTask> task;
  PoolState pool;
  DualEBM model;
  RunStreams streams;
  MarginConfig margins;  // effective margins for the current cycle
  std::vector<CycleReport> history;
  int seed_index = 0;
  bool truncated = false;
};

RunState make_run_state(std::shared_ptr<const OpenSetTask> task, const ALConfig& config,
                        std::uint64_t run_seed, int seed_index = 0);

// splitmix64 finaliser.
std::uint64_t mix64(std::uint64_t x);
// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);
// Streams shared by every method for a given seed index, so methods are
// compared on the same initial labeled set and initialisations.
std::uint64_t derive_run_seed(std::uint64_t master_seed, std::size_t seed_index);
// Seed of the method-private stream; adding a method never perturbs others.
std::uint64_t derive_method_seed(std::uint64_t run_seed, std::string_view method_name);

// Separator free energy for the given pool ids, in order.
std::vector<double> ekus_energies(const DualEBM& model, const OpenSetTask& task,
                                  std::span<const PoolId> ids);

// Recomputes separator energies over D_UL and selects the top rho as D_UK.
void refresh_pseudo_unknown(RunState& state, double rho);

void train_ekus(RunState& state, const ALConfig& config);
// Trains the scorer heads on D_L. The backbone is updated only when
// train_backbone is set (or the scorer owns a separate backbone).
void train_ess(RunState& state, const ALConfig& config, bool train_backbone);

struct FilterResult {
  std::vector<PoolId> ids;  // ascending
  bool fallback_engaged = false;
};

// {x in D_UL : E(x) < threshold}, padded with the lowest-energy remaining pool
// samples up to min_count when too few pass.
FilterResult filter_likely_known(const RunState& state, double threshold, std::size_t min_count);
FilterResult filter_by_energy(std::span<const PoolId> ids, std::span<const double> energies,
                              double threshold, std::size_t min_count);

// U(x) + beta * E_ess(x), aligned with ids.
std::vector<double> score_samples(const RunState& state, std::span<const PoolId> ids, double beta);

// The b highest-scoring ids, ties by ascending id.
std::vector<PoolId> select_top_b(std::span<const PoolId> ids, std::span<const double> scores,
                                 std::size_t b);

bool trains_separator(Method method);

struct CycleTrace {
  std::vector<PoolId> candidates;  // ids eligible for selection
  std::vector<PoolId> selected;
};

CycleReport run_cycle(RunState& state, const ALConfig& config, CycleTrace* trace = nullptr);

struct RunResult {
  Method method = Method::ebosal;
  int seed_index = 0;
  std::vector<CycleReport> reports;
  std::vector<std::vector<PoolId>> queries;  // selected ids per cycle
};

// All cycles of one (method, seed index) run.
RunResult run_single(std::shared_ptr<const OpenSetTask> task, const ALConfig& config,
                     std::uint64_t master_seed, int seed_index);

struct ExperimentSpec {
  std::shared_ptr<const OpenSetTask> task;
  ALConfig al;  // method field is overridden per run
  std::vector<Method> methods;
  std::uint64_t master_seed = 0;
  int repeats = 3;
  int jobs = 1;
};

struct ExperimentResult {
  std::vector<RunResult> runs;  // method-major, then seed index
  std::vector<AggregateRow> aggregate;
  std::vector<CycleReport> all_reports() const;
};

ExperimentResult run_experiment(const ExperimentSpec& spec);

}  // namespace ebosal
