#include "ebosal/alcycle.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ebosal {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kInferenceChunk = 1024;
}  // namespace

// ---------------------------------------------------------------- enums

std::string to_string(Method method) {
  switch (method) {
    case Method::ebosal: return "ebosal";
    case Method::random: return "random";
    case Method::entropy: return "entropy";
    case Method::no_ekus: return "no_ekus";
    case Method::no_ess: return "no_ess";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : all_methods())
    if (to_string(m) == name) return m;
  throw ConfigError("unknown method '" + name + "'");
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods{Method::ebosal, Method::random, Method::entropy,
                                           Method::no_ekus, Method::no_ess};
  return methods;
}

std::string to_string(RefreshCadence cadence) {
  return cadence == RefreshCadence::per_epoch ? "per_epoch" : "per_cycle";
}

RefreshCadence cadence_from_string(const std::string& name) {
  if (name == "per_epoch") return RefreshCadence::per_epoch;
  if (name == "per_cycle") return RefreshCadence::per_cycle;
  throw ConfigError("unknown refresh cadence '" + name + "'");
}

std::string to_string(NlMode mode) {
  return mode == NlMode::pseudo_plus_uniform ? "pseudo_plus_uniform" : "pseudo_only";
}

NlMode nl_mode_from_string(const std::string& name) {
  if (name == "pseudo_plus_uniform") return NlMode::pseudo_plus_uniform;
  if (name == "pseudo_only") return NlMode::pseudo_only;
  throw ConfigError("unknown negative-learning mode '" + name + "'");
}

std::string to_string(MarginMode mode) {
  return mode == MarginMode::fixed ? "fixed" : "auto";
}

MarginMode margin_mode_from_string(const std::string& name) {
  if (name == "fixed") return MarginMode::fixed;
  if (name == "auto") return MarginMode::auto_calibrate;
  throw ConfigError("unknown margin mode '" + name + "'");
}

void ALConfig::validate() const {
  if (cycles < 1) throw ConfigError("al: cycles must be >= 1");
  if (budget < 1) throw ConfigError("al: budget must be >= 1");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("al: rho must lie in (0, 1)");
  if (beta < 0.0) throw ConfigError("al: beta must be >= 0");
  if (!(init_fraction > 0.0 && init_fraction < 1.0))
    throw ConfigError("al: init_fraction must lie in (0, 1)");
  if (warmup_epochs < 0) throw ConfigError("al: warmup_epochs must be >= 0");
  margins.validate();
  model.validate();
}

// ---------------------------------------------------------------- seeding

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_run_seed(std::uint64_t master_seed, std::size_t seed_index) {
  return mix64(mix64(master_seed) ^ mix64(0x5eedULL + seed_index));
}

std::uint64_t derive_method_seed(std::uint64_t run_seed, std::string_view method_name) {
  return mix64(run_seed ^ fnv1a(method_name));
}

RunStreams::RunStreams(std::uint64_t run_seed, Method m)
    : data(mix64(run_seed ^ 0x1ULL)),
      init(mix64(run_seed ^ 0x2ULL)),
      nl(mix64(run_seed ^ 0x3ULL)),
      method(derive_method_seed(run_seed, to_string(m))) {}

RunState make_run_state(std::shared_ptr<const OpenSetTask> task, const ALConfig& config,
                        std::uint64_t run_seed, int seed_index) {
  config.validate();
  if (!task) throw ContractError("make_run_state: null task");
  RunStreams streams(run_seed, config.method);
  PoolState pool = init_pool(*task, config.init_fraction, streams.data());
  DualEBM model(static_cast<std::size_t>(task->dim), static_cast<std::size_t>(task->num_known()),
                config.model, streams.init());
  return RunState{std::move(task), std::move(pool), std::move(model), std::move(streams),
                  config.margins, {}, seed_index, false};
}

// ---------------------------------------------------------------- energies

namespace {

ad::Var rows_of(const OpenSetTask& task, std::span<const PoolId> ids) {
  std::vector<const std::vector<double>*> rows;
  rows.reserve(ids.size());
  for (PoolId id : ids) rows.push_back(&task.train.at(id).features);
  return batch_matrix(rows, static_cast<std::size_t>(task.dim));
}

double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

void calibrate_margins(RunState& state) {
  const auto& pool = state.pool.unlabeled();
  if (pool.size() < 2) return;
  const auto energies = ekus_energies(state.model, *state.task, pool);
  double lo = percentile(energies, 0.30);
  double hi = percentile(energies, 0.70);
  if (!(lo < hi)) hi = lo + 1e-6;
  state.margins.delta_k = lo;
  state.margins.delta_u = hi;
}

}  // namespace

std::vector<double> ekus_energies(const DualEBM& model, const OpenSetTask& task,
                                  std::span<const PoolId> ids) {
  ad::NoGradGuard guard;
  std::vector<double> out;
  out.reserve(ids.size());
  for (std::size_t begin = 0; begin < ids.size(); begin += kInferenceChunk) {
    const auto chunk = ids.subspan(begin, std::min(kInferenceChunk, ids.size() - begin));
    const ad::Var e = free_energy(model.ekus_logits(rows_of(task, chunk)));
    out.insert(out.end(), e.value().data().begin(), e.value().data().end());
  }
  return out;
}

void refresh_pseudo_unknown(RunState& state, double rho) {
  const auto& pool = state.pool.unlabeled();
  if (pool.empty()) {
    state.pool.clear_pseudo_unknown();
    return;
  }
  const auto energies = ekus_energies(state.model, *state.task, pool);
  std::unordered_map<PoolId, double> by_id;
  by_id.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) by_id.emplace(pool[i], energies[i]);
  state.pool.set_pseudo_unknown(by_id, rho);
}

// ---------------------------------------------------------------- training

void train_ekus(RunState& state, const ALConfig& config) {
  if (state.pool.labeled().empty()) throw ContractError("train_ekus: labeled set is empty");
  const OpenSetTask& task = *state.task;
  ad::SgdMomentum optimizer(state.model.ekus_parameters(), config.model.optimizer);
  std::uniform_int_distribution<int> complementary(0, task.num_known() - 1);
  const std::size_t half = config.model.batch_size / 2;

  refresh_pseudo_unknown(state, config.rho);
  for (int epoch = 0; epoch < config.model.epochs; ++epoch) {
    if (epoch > 0 && config.refresh == RefreshCadence::per_epoch)
      refresh_pseudo_unknown(state, config.rho);
    if (config.margin_mode == MarginMode::auto_calibrate && epoch == config.warmup_epochs)
      calibrate_margins(state);

    std::vector<PoolId> extra_unknown;
    if (config.use_invalid_as_unknown) extra_unknown = state.pool.invalid();
    const auto batches =
        balanced_ekus_batches(state.pool, config.model.batch_size, state.streams.data(), extra_unknown);

    // Unlabeled samples outside D_UK, for the negative-learning draws.
    std::vector<PoolId> rest;
    if (config.nl_mode == NlMode::pseudo_plus_uniform) {
      std::set_difference(state.pool.unlabeled().begin(), state.pool.unlabeled().end(),
                          state.pool.pseudo_unknown().begin(), state.pool.pseudo_unknown().end(),
                          std::back_inserter(rest));
    }

    for (const EkusBatch& batch : batches) {
      std::vector<PoolId> ids = batch.labeled;
      ids.insert(ids.end(), batch.pseudo_unknown.begin(), batch.pseudo_unknown.end());
      if (!rest.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, rest.size() - 1);
        const std::size_t n_extra = batch.has_unknown_half ? batch.pseudo_unknown.size() : half;
        for (std::size_t i = 0; i < n_extra; ++i) ids.push_back(rest[pick(state.streams.data)]);
      }
      const std::size_t n_known = batch.labeled.size();
      const std::size_t n_pseudo = batch.pseudo_unknown.size();

      const ad::Var logits = state.model.ekus_logits(rows_of(task, ids));
      const ad::Var energy = free_energy(logits);
      const ad::Var e_known = ad::slice_rows(energy, 0, n_known);
      const ad::Var e_pseudo = ad::slice_rows(energy, n_known, n_known + n_pseudo);
      ad::Var probs;
      std::vector<int> comp;
      if (ids.size() > n_known) {
        probs = ad::softmax_rows(ad::slice_rows(logits, n_known, ids.size()));
        comp.resize(ids.size() - n_known);
        for (int& c : comp) c = complementary(state.streams.nl);
      }
      const EkusLossTerms loss = ekus_loss(e_known, e_pseudo, probs, comp, state.margins);
      ad::backward(loss.total);
      optimizer.step();
      optimizer.zero_grad();
    }
  }
}

void train_ess(RunState& state, const ALConfig& config, bool train_backbone) {
  const auto& labeled = state.pool.labeled();
  if (labeled.empty()) throw ContractError("train_ess: labeled set is empty");
  const OpenSetTask& task = *state.task;
  train_backbone = train_backbone || !state.model.shares_backbone();

  std::vector<ad::Var> params = state.model.ess_head_parameters();
  if (train_backbone) {
    auto backbone = state.model.ess_backbone_parameters();
    params.insert(params.end(), backbone.begin(), backbone.end());
  }
  ad::SgdMomentum optimizer(params, config.model.optimizer);

  std::vector<PoolId> ids;
  std::vector<int> labels;
  for (const auto& e : labeled) {
    ids.push_back(e.id);
    labels.push_back(e.label);
  }

  // With a frozen backbone the features never change; compute them once.
  ad::Tensor cached;
  if (!train_backbone) {
    ad::NoGradGuard guard;
    cached = state.model.ess_features(rows_of(task, ids)).value();
  }
  const std::size_t width = cached.cols();

  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = config.model.batch_size;
  for (int epoch = 0; epoch < config.model.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), state.streams.data);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(begin + bs, order.size());
      std::vector<int> batch_labels;
      std::vector<PoolId> batch_ids;
      for (std::size_t i = begin; i < end; ++i) {
        batch_labels.push_back(labels[order[i]]);
        batch_ids.push_back(ids[order[i]]);
      }
      ad::Var features;
      if (train_backbone) {
        features = state.model.ess_features(rows_of(task, batch_ids));
      } else {
        std::vector<double> data;
        data.reserve((end - begin) * width);
        for (std::size_t i = begin; i < end; ++i) {
          const auto row = cached.data().subspan(order[i] * width, width);
          data.insert(data.end(), row.begin(), row.end());
        }
        features = ad::Var::constant(ad::Tensor::matrix(end - begin, width, std::move(data)));
      }
      const ad::Var logits = state.model.ess_logits_from_features(features);
      const ad::Var energy = state.model.ess_energy_from_features(features);
      const ad::Var loss =
          ess_loss(logits, batch_labels, energy, state.margins.alpha, state.margins.delta_s);
      ad::backward(loss);
      optimizer.step();
      optimizer.zero_grad();
    }
  }
}

// ---------------------------------------------------------------- selection

FilterResult filter_by_energy(std::span<const PoolId> ids, std::span<const double> energies,
                              double threshold, std::size_t min_count) {
  if (ids.size() != energies.size()) throw DimensionError("filter: ids and energies differ in length");
  FilterResult result;
  std::vector<PoolId> rejected;
  std::vector<double> rejected_neg_energy;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (energies[i] < threshold) {
      result.ids.push_back(ids[i]);
    } else {
      rejected.push_back(ids[i]);
      rejected_neg_energy.push_back(-energies[i]);
    }
  }
  if (result.ids.size() < min_count && !rejected.empty()) {
    result.fallback_engaged = true;
    const auto pad = top_k_by_score(rejected, rejected_neg_energy, min_count - result.ids.size());
    result.ids.insert(result.ids.end(), pad.begin(), pad.end());
  }
  std::sort(result.ids.begin(), result.ids.end());
  return result;
}

FilterResult filter_likely_known(const RunState& state, double threshold, std::size_t min_count) {
  const auto& pool = state.pool.unlabeled();
  if (pool.empty()) return {};
  const auto energies = ekus_energies(state.model, *state.task, pool);
  return filter_by_energy(pool, energies, threshold, min_count);
}

std::vector<double> score_samples(const RunState& state, std::span<const PoolId> ids, double beta) {
  ad::NoGradGuard guard;
  std::vector<double> scores;
  scores.reserve(ids.size());
  for (std::size_t begin = 0; begin < ids.size(); begin += kInferenceChunk) {
    const auto chunk = ids.subspan(begin, std::min(kInferenceChunk, ids.size() - begin));
    const ad::Var features = state.model.ess_features(rows_of(*state.task, chunk));
    const auto u = entropy(state.model.ess_logits_from_features(features).value());
    const ad::Var e = state.model.ess_energy_from_features(features);
    for (std::size_t i = 0; i < chunk.size(); ++i) scores.push_back(u[i] + beta * e.value()[i]);
  }
  return scores;
}

std::vector<PoolId> select_top_b(std::span<const PoolId> ids, std::span<const double> scores,
                                 std::size_t b) {
  if (b < 1) throw ContractError("select_top_b: b must be >= 1");
  return top_k_by_score(ids, scores, b);
}

bool trains_separator(Method method) { return method == Method::ebosal || method == Method::no_ess; }

// ---------------------------------------------------------------- cycle

CycleReport run_cycle(RunState& state, const ALConfig& config, CycleTrace* trace) {
  if (state.truncated) throw ContractError("run_cycle: run already truncated");
  if (static_cast<int>(state.history.size()) >= config.cycles)
    throw ContractError("run_cycle: all cycles already completed");
  const OpenSetTask& task = *state.task;
  const Method method = config.method;
  const int cycle = static_cast<int>(state.history.size()) + 1;

  const std::uint64_t init_seed = state.streams.init();
  if (!(config.warm_start && cycle > 1)) state.model.reinit(init_seed);
  state.margins = config.margins;

  const bool separator = trains_separator(method);
  if (separator) train_ekus(state, config);
  train_ess(state, config, !separator);

  CycleReport report;
  report.cycle = cycle;
  report.seed = state.seed_index;
  report.method = to_string(method);
  report.test_accuracy = accuracy(state.model, task);
  report.energy_auroc = kNaN;
  report.mean_energy_known = kNaN;
  report.mean_energy_unknown = kNaN;

  const std::vector<PoolId> pool = state.pool.unlabeled();
  std::vector<double> energies;
  if (separator && !pool.empty()) {
    energies = ekus_energies(state.model, task, pool);
    std::vector<double> e_unknown, e_known;
    for (std::size_t i = 0; i < pool.size(); ++i)
      (task.is_known(task.train[pool[i]].true_class) ? e_known : e_unknown).push_back(energies[i]);
    report.energy_auroc = auroc(e_unknown, e_known);
    const auto mean_of = [](const std::vector<double>& v) {
      if (v.empty()) return kNaN;
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    };
    report.mean_energy_known = mean_of(e_known);
    report.mean_energy_unknown = mean_of(e_unknown);
  }

  std::vector<PoolId> candidates;
  std::vector<PoolId> selected;
  if (!pool.empty()) {
    switch (method) {
      case Method::random: {
        candidates = pool;
        std::vector<PoolId> shuffled = pool;
        std::shuffle(shuffled.begin(), shuffled.end(), state.streams.method);
        shuffled.resize(std::min(config.budget, shuffled.size()));
        selected = std::move(shuffled);
        break;
      }
      case Method::entropy:
        candidates = pool;
        selected = select_top_b(candidates, score_samples(state, candidates, 0.0), config.budget);
        break;
      case Method::no_ekus:
        candidates = pool;
        selected = select_top_b(candidates, score_samples(state, candidates, config.beta), config.budget);
        break;
      case Method::ebosal:
      case Method::no_ess: {
        FilterResult filtered =
            filter_by_energy(pool, energies, config.threshold(state.margins), config.budget);
        report.fallback_engaged = filtered.fallback_engaged;
        candidates = std::move(filtered.ids);
        const double beta = method == Method::ebosal ? config.beta : 0.0;
        selected = select_top_b(candidates, score_samples(state, candidates, beta), config.budget);
        break;
      }
    }
  }

  const auto outcomes = state.pool.oracle_label(selected);
  std::size_t known = 0;
  for (const auto& o : outcomes) known += o.known;
  report.query_precision_cycle =
      selected.empty() ? kNaN : static_cast<double>(known) / static_cast<double>(selected.size());
  report.labeled_count = state.pool.labeled().size();
  report.spent_budget = state.pool.spent_budget();
  report.query_precision_cumulative =
      report.spent_budget == 0
          ? kNaN
          : static_cast<double>(report.labeled_count - state.pool.initial_labeled_count()) /
                static_cast<double>(report.spent_budget);
  report.truncated = selected.size() < config.budget || state.pool.unlabeled().empty();
  state.truncated = report.truncated;
  state.history.push_back(report);
  if (trace) {
    trace->candidates = std::move(candidates);
    trace->selected = std::move(selected);
  }
  return report;
}

// ---------------------------------------------------------------- experiments

RunResult run_single(std::shared_ptr<const OpenSetTask> task, const ALConfig& config,
                     std::uint64_t master_seed, int seed_index) {
  RunState state = make_run_state(std::move(task), config,
                                  derive_run_seed(master_seed, static_cast<std::size_t>(seed_index)),
                                  seed_index);
  RunResult result;
  result.method = config.method;
  result.seed_index = seed_index;
  for (int c = 0; c < config.cycles && !state.truncated; ++c) {
    CycleTrace trace;
    result.reports.push_back(run_cycle(state, config, &trace));
    result.queries.push_back(std::move(trace.selected));
  }
  return result;
}

std::vector<CycleReport> ExperimentResult::all_reports() const {
  std::vector<CycleReport> out;
  for (const RunResult& r : runs) out.insert(out.end(), r.reports.begin(), r.reports.end());
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (!spec.task) throw ContractError("run_experiment: null task");
  if (spec.methods.empty()) throw ConfigError("experiment: no methods requested");
  if (spec.repeats < 1) throw ConfigError("experiment: repeats must be >= 1");
  spec.al.validate();

  struct Job {
    Method method;
    int seed_index;
  };
  std::vector<Job> jobs;
  for (Method m : spec.methods)
    for (int s = 0; s < spec.repeats; ++s) jobs.push_back({m, s});

  ExperimentResult result;
  result.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        ALConfig cfg = spec.al;
        cfg.method = jobs[i].method;
        result.runs[i] = run_single(spec.task, cfg, spec.master_seed, jobs[i].seed_index);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(spec.jobs, static_cast<int>(jobs.size())));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  const auto reports = result.all_reports();
  result.aggregate = aggregate(reports);
  return result;
}

}  // namespace ebosal
