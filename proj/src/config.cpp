#include "ebosal/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace ebosal {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

// Reads known keys from one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object())
      throw ConfigError("config key '" + (path_.empty() ? std::string("<root>") : path_) +
                        "': expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + join(path_, key) + "': " + e.what());
    }
  }

  template <class T, class Fn>
  void get_as(const std::string& key, Fn&& convert) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      convert(it->template get<T>());
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + join(path_, key) + "': " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + join(path_, key) + "': " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return join(path_, key); }

  void finish() const {
    for (const auto& [key, _] : obj_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + join(path_, key) + "'");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_task(const json& j, TaskConfig& t) {
  ObjectReader r(j, "task");
  GeneratorSpec& g = t.generator;
  r.get_as<std::string>("generator", [&](const std::string& s) { g.kind = generator_from_string(s); });
  r.get("num_classes", g.num_classes);
  r.get("dim", g.dim);
  r.get("train_per_class", g.train_per_class);
  r.get("test_per_class", g.test_per_class);
  r.get("mean_range", g.mean_range);
  r.get("sigma_min", g.sigma_min);
  r.get("sigma_max", g.sigma_max);
  r.get("ring_radius", g.ring_radius);
  r.get("mismatch_ratio", t.mismatch_ratio);
  r.get("seed", t.seed);
  r.get("csv", t.csv_path);
  r.get("test_fraction", t.test_fraction);
  r.finish();
}

void read_margins(const json& j, MarginConfig& m) {
  ObjectReader r(j, "margins");
  r.get("delta_k", m.delta_k);
  r.get("delta_u", m.delta_u);
  r.get("delta_s", m.delta_s);
  r.get("lambda", m.lambda);
  r.get("gamma", m.gamma);
  r.get("alpha", m.alpha);
  r.finish();
}

void read_model(const json& j, ModelHyper& m) {
  ObjectReader r(j, "model");
  r.get("hidden", m.hidden);
  r.get("epochs", m.epochs);
  r.get("batch_size", m.batch_size);
  r.get("lr", m.optimizer.learning_rate);
  r.get("momentum", m.optimizer.momentum);
  r.get("weight_decay", m.optimizer.weight_decay);
  r.get("max_grad_norm", m.optimizer.max_grad_norm);
  r.get("share_backbone", m.share_backbone);
  r.get("normalize_features", m.normalize_features);
  r.finish();
}

void read_al(const json& j, ALConfig& a) {
  ObjectReader r(j, "al");
  r.get("cycles", a.cycles);
  r.get("budget", a.budget);
  r.get("rho", a.rho);
  r.get("beta", a.beta);
  r.get("init_fraction", a.init_fraction);
  if (const json* ft = r.child("filter_threshold"); ft && !ft->is_null()) {
    if (!ft->is_number()) throw ConfigError("config key 'al.filter_threshold': expected a number");
    a.filter_threshold = ft->get<double>();
  }
  r.get_as<std::string>("refresh", [&](const std::string& s) { a.refresh = cadence_from_string(s); });
  r.get_as<std::string>("nl_mode", [&](const std::string& s) { a.nl_mode = nl_mode_from_string(s); });
  r.get_as<std::string>("margin_mode",
                        [&](const std::string& s) { a.margin_mode = margin_mode_from_string(s); });
  r.get("warmup_epochs", a.warmup_epochs);
  r.get("use_invalid_as_unknown", a.use_invalid_as_unknown);
  r.get("warm_start", a.warm_start);
  r.finish();
}

void read_sweep(const json& j, SweepSpec& s) {
  ObjectReader r(j, "sweep");
  r.get("delta_k", s.delta_k);
  r.get("delta_u", s.delta_u);
  r.finish();
}

}  // namespace

void ExperimentConfig::validate() const {
  task.generator.validate();
  known_class_count(task.generator.num_classes, task.mismatch_ratio);
  if (!(task.test_fraction > 0.0 && task.test_fraction < 1.0))
    throw ConfigError("task.test_fraction must lie in (0, 1)");
  al.validate();
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (methods.empty()) throw ConfigError("methods must not be empty");
  if (out_dir.empty()) throw ConfigError("out must not be empty");
  if (sweep && (sweep->delta_k.empty() || sweep->delta_u.empty()))
    throw ConfigError("sweep grids must be non-empty");
}

json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  const GeneratorSpec& g = c.task.generator;
  json doc = {
      {"seed", c.seed},
      {"repeats", c.repeats},
      {"methods", methods},
      {"out", c.out_dir},
      {"jobs", c.jobs},
      {"task",
       {{"generator", to_string(g.kind)},
        {"num_classes", g.num_classes},
        {"dim", g.dim},
        {"train_per_class", g.train_per_class},
        {"test_per_class", g.test_per_class},
        {"mean_range", g.mean_range},
        {"sigma_min", g.sigma_min},
        {"sigma_max", g.sigma_max},
        {"ring_radius", g.ring_radius},
        {"mismatch_ratio", c.task.mismatch_ratio},
        {"seed", c.task.seed},
        {"csv", c.task.csv_path},
        {"test_fraction", c.task.test_fraction}}},
      {"al",
       {{"cycles", c.al.cycles},
        {"budget", c.al.budget},
        {"rho", c.al.rho},
        {"beta", c.al.beta},
        {"init_fraction", c.al.init_fraction},
        {"filter_threshold", c.al.filter_threshold ? json(*c.al.filter_threshold) : json(nullptr)},
        {"refresh", to_string(c.al.refresh)},
        {"nl_mode", to_string(c.al.nl_mode)},
        {"margin_mode", to_string(c.al.margin_mode)},
        {"warmup_epochs", c.al.warmup_epochs},
        {"use_invalid_as_unknown", c.al.use_invalid_as_unknown},
        {"warm_start", c.al.warm_start}}},
      {"margins",
       {{"delta_k", c.al.margins.delta_k},
        {"delta_u", c.al.margins.delta_u},
        {"delta_s", c.al.margins.delta_s},
        {"lambda", c.al.margins.lambda},
        {"gamma", c.al.margins.gamma},
        {"alpha", c.al.margins.alpha}}},
      {"model",
       {{"hidden", c.al.model.hidden},
        {"epochs", c.al.model.epochs},
        {"batch_size", c.al.model.batch_size},
        {"lr", c.al.model.optimizer.learning_rate},
        {"momentum", c.al.model.optimizer.momentum},
        {"weight_decay", c.al.model.optimizer.weight_decay},
        {"max_grad_norm", c.al.model.optimizer.max_grad_norm},
        {"share_backbone", c.al.model.share_backbone},
        {"normalize_features", c.al.model.normalize_features}}},
  };
  if (c.sweep) doc["sweep"] = {{"delta_k", c.sweep->delta_k}, {"delta_u", c.sweep->delta_u}};
  return doc;
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  ObjectReader r(doc, "");
  r.get("seed", c.seed);
  r.get("repeats", c.repeats);
  r.get_as<std::vector<std::string>>("methods", [&](const std::vector<std::string>& names) {
    c.methods.clear();
    for (const auto& n : names) c.methods.push_back(method_from_string(n));
  });
  r.get("out", c.out_dir);
  r.get("jobs", c.jobs);
  if (const json* j = r.child("task")) read_task(*j, c.task);
  if (const json* j = r.child("al")) read_al(*j, c.al);
  if (const json* j = r.child("margins")) read_margins(*j, c.al.margins);
  if (const json* j = r.child("model")) read_model(*j, c.al.model);
  if (const json* j = r.child("sweep"); j && !j->is_null()) {
    SweepSpec s;
    read_sweep(*j, s);
    c.sweep = std::move(s);
  }
  r.finish();
  return c;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &doc;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + key + "': '" + path[i] + "' is not an object");
    node = &(*node)[path[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + key + "': parent is not an object");
  (*node)[path.back()] = std::move(value);
}

ExperimentConfig parse_config(const std::optional<std::filesystem::path>& path,
                              const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + path->string() + "'");
    try {
      doc = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + path->string() + "': " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  ExperimentConfig c = config_from_json(doc);
  c.validate();
  return c;
}

std::shared_ptr<const OpenSetTask> build_task(const TaskConfig& config) {
  if (!config.csv_path.empty()) {
    return std::make_shared<const OpenSetTask>(task_from_samples(
        read_samples_csv(config.csv_path), config.mismatch_ratio, config.test_fraction, config.seed));
  }
  return std::make_shared<const OpenSetTask>(
      make_task(config.generator, config.mismatch_ratio, config.seed));
}

}  // namespace ebosal
