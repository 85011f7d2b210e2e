#include "ebosal/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace ebosal {

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::gaussian_mixture: return "gaussian_mixture";
    case GeneratorKind::ring_clusters: return "ring_clusters";
  }
  return "unknown";
}

GeneratorKind generator_from_string(const std::string& name) {
  if (name == "gaussian_mixture") return GeneratorKind::gaussian_mixture;
  if (name == "ring_clusters") return GeneratorKind::ring_clusters;
  throw ConfigError("unknown generator kind '" + name + "'");
}

void GeneratorSpec::validate() const {
  if (num_classes < 2) throw ConfigError("generator: num_classes must be >= 2");
  if (dim < 1) throw ConfigError("generator: dim must be >= 1");
  if (train_per_class < 1) throw ConfigError("generator: train_per_class must be >= 1");
  if (test_per_class < 1) throw ConfigError("generator: test_per_class must be >= 1");
  if (!(sigma_min > 0.0) || sigma_max < sigma_min)
    throw ConfigError("generator: need 0 < sigma_min <= sigma_max");
  if (!(mean_range >= 0.0)) throw ConfigError("generator: mean_range must be >= 0");
  if (kind == GeneratorKind::ring_clusters && dim < 2)
    throw ConfigError("generator: ring_clusters needs dim >= 2");
}

bool OpenSetTask::is_known(int true_class) const {
  return std::binary_search(known_classes.begin(), known_classes.end(), true_class);
}

int OpenSetTask::label_of(int true_class) const {
  auto it = std::lower_bound(known_classes.begin(), known_classes.end(), true_class);
  if (it == known_classes.end() || *it != true_class) return -1;
  return static_cast<int>(it - known_classes.begin());
}

int known_class_count(int total_classes, double mismatch_ratio) {
  if (!(mismatch_ratio > 0.0 && mismatch_ratio <= 1.0))
    throw ConfigError("mismatch_ratio must lie in (0, 1]");
  if (total_classes < 2) throw ConfigError("need at least 2 classes");
  const int k = static_cast<int>(std::lround(mismatch_ratio * total_classes));
  return std::clamp(k, 2, total_classes);
}

namespace {

void assign_classes(OpenSetTask& task, std::vector<int> classes, std::mt19937_64& rng) {
  const int k = known_class_count(static_cast<int>(classes.size()), task.mismatch_ratio);
  std::shuffle(classes.begin(), classes.end(), rng);
  task.known_classes.assign(classes.begin(), classes.begin() + k);
  task.unknown_classes.assign(classes.begin() + k, classes.end());
  std::sort(task.known_classes.begin(), task.known_classes.end());
  std::sort(task.unknown_classes.begin(), task.unknown_classes.end());
}

void renumber(std::vector<Sample>& samples) {
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i].pool_id = i;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(field);
  }
  return out;
}

}  // namespace

OpenSetTask make_task(const GeneratorSpec& spec, double mismatch_ratio, std::uint64_t seed) {
  spec.validate();
  OpenSetTask task;
  task.dim = spec.dim;
  task.num_classes = spec.num_classes;
  task.mismatch_ratio = mismatch_ratio;
  task.spec = spec;

  std::mt19937_64 rng(seed);
  std::vector<int> classes(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) classes[c] = c;
  assign_classes(task, classes, rng);

  const auto d = static_cast<std::size_t>(spec.dim);
  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(d, 0.0));
  std::vector<double> sigmas(spec.num_classes);
  std::uniform_real_distribution<double> coord(-spec.mean_range, spec.mean_range);
  std::uniform_real_distribution<double> sig(spec.sigma_min, spec.sigma_max);
  for (int c = 0; c < spec.num_classes; ++c) {
    if (spec.kind == GeneratorKind::gaussian_mixture) {
      for (double& m : means[c]) m = coord(rng);
    } else {
      const double angle = 2.0 * std::numbers::pi * c / spec.num_classes;
      means[c][0] = spec.ring_radius * std::cos(angle);
      means[c][1] = spec.ring_radius * std::sin(angle);
    }
    sigmas[c] = sig(rng);
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&](int c) {
    Sample s;
    s.true_class = c;
    s.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) s.features[j] = means[c][j] + sigmas[c] * gauss(rng);
    return s;
  };

  for (int c = 0; c < spec.num_classes; ++c)
    for (int i = 0; i < spec.train_per_class; ++i) task.train.push_back(draw(c));
  for (int c : task.known_classes)
    for (int i = 0; i < spec.test_per_class; ++i) task.test.push_back(draw(c));

  // Shuffle so pool ids carry no class information (ties break by id).
  std::shuffle(task.train.begin(), task.train.end(), rng);
  renumber(task.train);
  renumber(task.test);
  return task;
}

OpenSetTask task_from_samples(std::vector<Sample> samples, double mismatch_ratio,
                              double test_fraction, std::uint64_t seed) {
  if (samples.empty()) throw ConfigError("dataset has no samples");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie in (0, 1)");
  const std::size_t d = samples.front().features.size();
  if (d == 0) throw ConfigError("dataset has zero feature columns");
  std::map<int, std::vector<Sample>> by_class;
  for (auto& s : samples) {
    if (s.features.size() != d) throw ConfigError("dataset rows have differing widths");
    by_class[s.true_class].push_back(std::move(s));
  }
  OpenSetTask task;
  task.dim = static_cast<int>(d);
  task.num_classes = static_cast<int>(by_class.size());
  task.mismatch_ratio = mismatch_ratio;
  task.spec.dim = task.dim;
  task.spec.num_classes = task.num_classes;

  std::mt19937_64 rng(seed);
  std::vector<int> classes;
  for (const auto& [c, _] : by_class) classes.push_back(c);
  assign_classes(task, classes, rng);

  for (auto& [c, rows] : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t n_test = 0;
    if (task.is_known(c)) {
      if (rows.size() < 2)
        throw ConfigError("known class " + std::to_string(c) + " needs >= 2 samples");
      n_test = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(test_fraction * rows.size())), 1, rows.size() - 1);
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
      (i < n_test ? task.test : task.train).push_back(std::move(rows[i]));
  }
  std::shuffle(task.train.begin(), task.train.end(), rng);
  renumber(task.train);
  renumber(task.test);
  return task;
}

std::vector<Sample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset '" + path.string() + "' is empty");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "class_id")
    throw ConfigError("dataset '" + path.string() + "': header must end with class_id");
  for (std::size_t j = 0; j + 1 < header.size(); ++j) {
    if (header[j] != "feat_" + std::to_string(j))
      throw ConfigError("dataset '" + path.string() + "': expected column feat_" +
                        std::to_string(j) + ", found '" + header[j] + "'");
  }
  std::vector<Sample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw ConfigError("dataset '" + path.string() + "' line " + std::to_string(line_no) +
                        ": expected " + std::to_string(header.size()) + " fields");
    Sample s;
    try {
      for (std::size_t j = 0; j + 1 < fields.size(); ++j) s.features.push_back(std::stod(fields[j]));
      s.true_class = std::stoi(fields.back());
    } catch (const std::exception&) {
      throw ConfigError("dataset '" + path.string() + "' line " + std::to_string(line_no) +
                        ": unparsable number");
    }
    if (!std::all_of(s.features.begin(), s.features.end(), [](double v) { return std::isfinite(v); }))
      throw ConfigError("dataset '" + path.string() + "' line " + std::to_string(line_no) +
                        ": non-finite feature");
    s.pool_id = out.size();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- PoolState

PoolState::PoolState(const OpenSetTask& task, std::vector<PoolId> initial_labeled)
    : task_(&task), membership_(task.train.size(), Membership::unlabeled) {
  for (PoolId id : initial_labeled) {
    if (id >= task.train.size()) throw ContractError("initial labeled id out of range");
    if (membership_[id] != Membership::unlabeled) throw ContractError("duplicate initial id");
    const int label = task.label_of(task.train[id].true_class);
    if (label < 0) throw ContractError("initial labeled sample belongs to an unknown class");
    membership_[id] = Membership::labeled;
    labeled_.push_back({id, label});
  }
  for (PoolId id = 0; id < membership_.size(); ++id)
    if (membership_[id] == Membership::unlabeled) unlabeled_.push_back(id);
  initial_labeled_ = labeled_.size();
}

PoolState::Membership PoolState::membership(PoolId id) const {
  if (id >= membership_.size()) throw ContractError("pool id " + std::to_string(id) + " out of range");
  return membership_[id];
}

std::vector<OracleOutcome> PoolState::oracle_label(std::span<const PoolId> ids) {
  std::set<PoolId> seen;
  for (PoolId id : ids) {
    if (id >= membership_.size() || membership_[id] != Membership::unlabeled)
      throw ContractError("oracle_label: sample " + std::to_string(id) + " is not in the unlabeled pool");
    if (!seen.insert(id).second)
      throw ContractError("oracle_label: sample " + std::to_string(id) + " queried twice");
  }
  std::vector<OracleOutcome> outcomes;
  outcomes.reserve(ids.size());
  for (PoolId id : ids) {
    const int label = task_->label_of(task_->train[id].true_class);
    if (label >= 0) {
      membership_[id] = Membership::labeled;
      labeled_.push_back({id, label});
    } else {
      membership_[id] = Membership::invalid;
      invalid_.push_back(id);
    }
    outcomes.push_back({id, label >= 0, label});
  }
  std::erase_if(unlabeled_, [&](PoolId id) { return seen.count(id) > 0; });
  std::erase_if(pseudo_unknown_, [&](PoolId id) { return seen.count(id) > 0; });
  spent_budget_ += ids.size();
  return outcomes;
}

std::vector<PoolId> top_k_by_score(std::span<const PoolId> ids, std::span<const double> scores,
                                   std::size_t k) {
  if (ids.size() != scores.size()) throw DimensionError("top_k_by_score: ids and scores differ in length");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  k = std::min(k, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  std::vector<PoolId> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = ids[order[i]];
  return out;
}

void PoolState::set_pseudo_unknown(const std::unordered_map<PoolId, double>& energies, double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ContractError("set_pseudo_unknown: rho must lie in (0, 1]");
  std::vector<double> values;
  values.reserve(unlabeled_.size());
  for (PoolId id : unlabeled_) {
    auto it = energies.find(id);
    if (it == energies.end())
      throw ContractError("set_pseudo_unknown: no energy for pool sample " + std::to_string(id));
    values.push_back(it->second);
  }
  // Guard against rho * n landing a rounding error above an integer.
  const double raw = rho * static_cast<double>(unlabeled_.size());
  const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  pseudo_unknown_ = top_k_by_score(unlabeled_, values, k);
  std::sort(pseudo_unknown_.begin(), pseudo_unknown_.end());
}

void PoolState::check_invariants() const {
  std::size_t n_lab = 0, n_unl = 0, n_inv = 0;
  for (auto m : membership_) {
    n_lab += m == Membership::labeled;
    n_unl += m == Membership::unlabeled;
    n_inv += m == Membership::invalid;
  }
  if (n_lab != labeled_.size() || n_unl != unlabeled_.size() || n_inv != invalid_.size())
    throw ContractError("pool: membership counts disagree with partition lists");
  if (labeled_.size() + unlabeled_.size() + invalid_.size() != task_->train.size())
    throw ContractError("pool: conservation violated");
  for (const auto& e : labeled_) {
    if (membership_[e.id] != Membership::labeled) throw ContractError("pool: labeled entry not labeled");
    if (e.label != task_->label_of(task_->train[e.id].true_class) || e.label < 0)
      throw ContractError("pool: labeled set holds a wrong or unknown-class label");
  }
  for (PoolId id : invalid_) {
    if (membership_[id] != Membership::invalid || task_->is_known(task_->train[id].true_class))
      throw ContractError("pool: invalid set holds a known-class sample");
  }
  if (!std::is_sorted(unlabeled_.begin(), unlabeled_.end()))
    throw ContractError("pool: unlabeled ids out of order");
  for (PoolId id : pseudo_unknown_)
    if (membership_[id] != Membership::unlabeled) throw ContractError("pool: D_UK not within D_UL");
  if (spent_budget_ != labeled_.size() - initial_labeled_ + invalid_.size())
    throw ContractError("pool: budget identity violated");
}

PoolState init_pool(const OpenSetTask& task, double init_fraction, std::uint64_t seed) {
  if (!(init_fraction > 0.0 && init_fraction < 1.0))
    throw ConfigError("init_fraction must lie in (0, 1)");
  std::vector<PoolId> known;
  for (const auto& s : task.train)
    if (task.is_known(s.true_class)) known.push_back(s.pool_id);
  const auto count = static_cast<std::size_t>(std::lround(init_fraction * static_cast<double>(known.size())));
  if (count == 0) throw ConfigError("init_fraction selects no labeled samples");
  std::mt19937_64 rng(seed);
  std::shuffle(known.begin(), known.end(), rng);
  known.resize(count);
  return PoolState(task, std::move(known));
}

std::vector<EkusBatch> balanced_ekus_batches(const PoolState& pool, std::size_t batch_size,
                                             std::uint64_t seed,
                                             std::span<const PoolId> extra_unknown) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("EKUS batch size must be even and >= 2, got " + std::to_string(batch_size));
  if (pool.labeled().empty()) throw ContractError("balanced_ekus_batches: labeled set is empty");
  std::mt19937_64 rng(seed);
  std::vector<PoolId> labeled;
  for (const auto& e : pool.labeled()) labeled.push_back(e.id);
  std::vector<PoolId> unknown(pool.pseudo_unknown().begin(), pool.pseudo_unknown().end());
  unknown.insert(unknown.end(), extra_unknown.begin(), extra_unknown.end());

  std::vector<EkusBatch> batches;
  if (unknown.empty()) {
    std::shuffle(labeled.begin(), labeled.end(), rng);
    for (std::size_t i = 0; i < labeled.size(); i += batch_size) {
      EkusBatch b;
      b.has_unknown_half = false;
      b.labeled.assign(labeled.begin() + static_cast<std::ptrdiff_t>(i),
                       labeled.begin() + static_cast<std::ptrdiff_t>(std::min(i + batch_size, labeled.size())));
      batches.push_back(std::move(b));
    }
    return batches;
  }

  const std::size_t half = batch_size / 2;
  const bool labeled_larger = labeled.size() >= unknown.size();
  std::vector<PoolId>& larger = labeled_larger ? labeled : unknown;
  std::vector<PoolId>& smaller = labeled_larger ? unknown : labeled;
  std::shuffle(larger.begin(), larger.end(), rng);
  const std::size_t n_batches = (larger.size() + half - 1) / half;
  std::uniform_int_distribution<std::size_t> pick(0, smaller.size() - 1);
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<PoolId> big, small;
    for (std::size_t i = 0; i < half; ++i) {
      big.push_back(larger[(b * half + i) % larger.size()]);
      small.push_back(smaller[pick(rng)]);
    }
    EkusBatch batch;
    batch.labeled = labeled_larger ? std::move(big) : std::move(small);
    batch.pseudo_unknown = labeled_larger ? std::move(small) : std::move(big);
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::string to_string(Split split) {
  switch (split) {
    case Split::labeled: return "labeled";
    case Split::unlabeled: return "unlabeled";
    case Split::invalid: return "invalid";
    case Split::test: return "test";
  }
  return "unknown";
}

void write_splits_csv(const PoolState& pool, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write splits file '" + path.string() + "'");
  const OpenSetTask& task = pool.task();
  for (int j = 0; j < task.dim; ++j) out << "feat_" << j << ',';
  out << "class_id,split\n";
  char buf[32];
  auto row = [&](const Sample& s, Split split) {
    for (double v : s.features) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    out << s.true_class << ',' << to_string(split) << '\n';
  };
  for (const Sample& s : task.train) {
    switch (pool.membership(s.pool_id)) {
      case PoolState::Membership::labeled: row(s, Split::labeled); break;
      case PoolState::Membership::unlabeled: row(s, Split::unlabeled); break;
      case PoolState::Membership::invalid: row(s, Split::invalid); break;
    }
  }
  for (const Sample& s : task.test) row(s, Split::test);
  if (!out) throw IoError("failed writing splits file '" + path.string() + "'");
}

}  // namespace ebosal
