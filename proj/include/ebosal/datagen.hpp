#pragma once

// Synthetic open-set tasks, the labeled/unlabeled/invalid pool partition, and
// the simulated annotator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ebosal/errors.hpp"

namespace ebosal {

using PoolId = std::size_t;

enum class GeneratorKind { gaussian_mixture, ring_clusters };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_from_string(const std::string& name);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::gaussian_mixture;
  int num_classes = 20;
  int dim = 8;
  int train_per_class = 150;
  int test_per_class = 50;
  // Gaussian mixture: class means uniform in [-mean_range, mean_range]^dim.
  double mean_range = 3.0;
  // Per-class isotropic standard deviation, uniform in [sigma_min, sigma_max].
  double sigma_min = 0.9;
  double sigma_max = 1.3;
  // Ring clusters: class means evenly spaced on a circle of this radius in the
  // first two coordinates, remaining coordinates zero-mean.
  double ring_radius = 6.0;

  void validate() const;
};

struct Sample {
  std::vector<double> features;
  int true_class = -1;
  PoolId pool_id = 0;
};

struct OpenSetTask {
  int dim = 0;
  int num_classes = 0;
  std::vector<int> known_classes;    // ascending
  std::vector<int> unknown_classes;  // ascending
  double mismatch_ratio = 1.0;
  GeneratorSpec spec;
  // pool_id of train[i] is i.
  std::vector<Sample> train;
  // Known-class samples only; pool_id is the index within test.
  std::vector<Sample> test;

  bool is_known(int true_class) const;
  // Index of a known class in 0..|C_K|-1; -1 for unknown classes.
  int label_of(int true_class) const;
  int num_known() const { return static_cast<int>(known_classes.size()); }
};

// |C_K| = max(2, round(ratio * total)), capped at total.
int known_class_count(int total_classes, double mismatch_ratio);

OpenSetTask make_task(const GeneratorSpec& spec, double mismatch_ratio, std::uint64_t seed);

// Builds a task from externally supplied samples. A seeded per-class
// test_fraction of the known-class samples becomes the test set.
OpenSetTask task_from_samples(std::vector<Sample> samples, double mismatch_ratio,
                              double test_fraction, std::uint64_t seed);

// CSV with header feat_0,...,feat_{d-1},class_id.
std::vector<Sample> read_samples_csv(const std::filesystem::path& path);

struct OracleOutcome {
  PoolId id = 0;
  bool known = false;
  int label = -1;  // index into known_classes when known
};

class PoolState {
 public:
  enum class Membership : std::uint8_t { labeled, unlabeled, invalid };

  struct LabeledEntry {
    PoolId id;
    int label;
  };

  PoolState(const OpenSetTask& task, std::vector<PoolId> initial_labeled);

  const OpenSetTask& task() const { return *task_; }
  const std::vector<LabeledEntry>& labeled() const { return labeled_; }
  // Ascending pool ids.
  const std::vector<PoolId>& unlabeled() const { return unlabeled_; }
  const std::vector<PoolId>& invalid() const { return invalid_; }
  // Ascending pool ids; always a subset of unlabeled().
  const std::vector<PoolId>& pseudo_unknown() const { return pseudo_unknown_; }
  std::size_t spent_budget() const { return spent_budget_; }
  std::size_t initial_labeled_count() const { return initial_labeled_; }
  Membership membership(PoolId id) const;
  const Sample& sample(PoolId id) const { return task_->train.at(id); }

  std::vector<OracleOutcome> oracle_label(std::span<const PoolId> ids);

  // D_UK := the ceil(rho * |D_UL|) highest-energy unlabeled samples, ties by
  // ascending pool id.
  void set_pseudo_unknown(const std::unordered_map<PoolId, double>& energies, double rho);
  void clear_pseudo_unknown() { pseudo_unknown_.clear(); }

  // Throws ContractError when any pool invariant is broken.
  void check_invariants() const;

 private:
  const OpenSetTask* task_;
  std::vector<Membership> membership_;
  std::vector<LabeledEntry> labeled_;
  std::vector<PoolId> unlabeled_;
  std::vector<PoolId> invalid_;
  std::vector<PoolId> pseudo_unknown_;
  std::size_t spent_budget_ = 0;
  std::size_t initial_labeled_ = 0;
};

// Seeds D_L with a uniform draw (without replacement) of init_fraction of the
// known-class training samples; everything else is unlabeled.
PoolState init_pool(const OpenSetTask& task, double init_fraction, std::uint64_t seed);

struct EkusBatch {
  std::vector<PoolId> labeled;
  std::vector<PoolId> pseudo_unknown;
  // False when D_UK was empty and the batch is labeled-only.
  bool has_unknown_half = true;
};

// One epoch of balanced EKUS batches: batch_size/2 labeled plus batch_size/2
// pseudo-unknown samples. The larger side is walked in a seeded permutation;
// the smaller side is drawn with replacement. `extra_unknown` (e.g. the
// invalid set) is merged into the pseudo-unknown side.
std::vector<EkusBatch> balanced_ekus_batches(const PoolState& pool, std::size_t batch_size,
                                             std::uint64_t seed,
                                             std::span<const PoolId> extra_unknown = {});

// Ids sorted by descending score, ties by ascending id; at most k returned.
std::vector<PoolId> top_k_by_score(std::span<const PoolId> ids, std::span<const double> scores,
                                   std::size_t k);

enum class Split : std::uint8_t { labeled, unlabeled, invalid, test };
std::string to_string(Split split);

// Same schema as the import plus a trailing split column.
void write_splits_csv(const PoolState& pool, const std::filesystem::path& path);

}  // namespace ebosal
