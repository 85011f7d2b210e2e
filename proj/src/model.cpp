#include "ebosal/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ebosal {

void ModelHyper::validate() const {
  if (hidden.empty()) throw ConfigError("model: at least one hidden layer is required");
  for (std::size_t h : hidden)
    if (h < 1) throw ConfigError("model: hidden sizes must be >= 1");
  if (epochs < 0) throw ConfigError("model: epochs must be >= 0");
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("model: batch_size must be even and >= 2");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("model: learning rate must be > 0");
  if (!(optimizer.max_grad_norm >= 0.0)) throw ConfigError("model: max_grad_norm must be >= 0");
  if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0)
    throw ConfigError("model: momentum must lie in [0, 1)");
  if (optimizer.weight_decay < 0.0) throw ConfigError("model: weight decay must be >= 0");
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out)
    : in_(in),
      out_(out),
      weight_(ad::Var::parameter(ad::Tensor(ad::Shape{in, out}, 0.0))),
      bias_(ad::Var::parameter(ad::Tensor(ad::Shape{out}, 0.0))) {}

ad::Var Linear::forward(const ad::Var& x) const {
  return ad::add_row_bias(ad::matmul(x, weight_), bias_);
}

void Linear::reinit(std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in_ + out_));
  std::uniform_real_distribution<double> u(-a, a);
  ad::Var w = weight_, b = bias_;
  for (double& v : w.value().data()) v = u(rng);
  b.value().fill(0.0);
  w.grad().fill(0.0);
  b.grad().fill(0.0);
}

// ---------------------------------------------------------------- Mlp

Mlp::Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden) : input_dim_(input_dim) {
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    layers_.emplace_back(in, h);
    in = h;
  }
}

ad::Var Mlp::forward(const ad::Var& x) const {
  ad::Var h = x;
  for (const Linear& layer : layers_) h = ad::relu(layer.forward(h));
  return h;
}

void Mlp::reinit(std::mt19937_64& rng) {
  for (Linear& layer : layers_) layer.reinit(rng);
}

std::size_t Mlp::output_dim() const {
  return layers_.empty() ? input_dim_ : layers_.back().out();
}

std::vector<ad::Var> Mlp::parameters() const {
  std::vector<ad::Var> out;
  for (const Linear& layer : layers_) {
    out.push_back(layer.weight());
    out.push_back(layer.bias());
  }
  return out;
}

// ---------------------------------------------------------------- DualEBM

DualEBM::DualEBM(std::size_t input_dim, std::size_t num_known, const ModelHyper& hyper,
                 std::uint64_t seed)
    : num_known_(num_known),
      backbone_(input_dim, hyper.hidden),
      ekus_head_(backbone_.output_dim(), num_known),
      ess_cls_head_(backbone_.output_dim(), num_known),
      ess_energy_head_(backbone_.output_dim(), 1) {
  hyper.validate();
  if (input_dim < 1) throw ConfigError("model: input dimension must be >= 1");
  if (num_known < 2) throw ConfigError("model: need at least 2 known classes");
  if (!hyper.share_backbone) ess_backbone_.emplace(input_dim, hyper.hidden);
  normalize_ = hyper.normalize_features;
  reinit(seed);
}

void DualEBM::check_input(const ad::Var& x) const {
  if (x.value().rank() != 2 || x.value().cols() != input_dim()) {
    throw DimensionError("model input " + ad::shape_to_string(x.shape()) + " does not have " +
                         std::to_string(input_dim()) + " columns");
  }
}

ad::Var DualEBM::finish_features(const ad::Var& h) const {
  return normalize_ ? ad::normalize_rows(h) : h;
}

ad::Var DualEBM::ekus_features(const ad::Var& x) const {
  check_input(x);
  return finish_features(backbone_.forward(x));
}

ad::Var DualEBM::ess_features(const ad::Var& x) const {
  check_input(x);
  if (ess_backbone_) return ess_backbone_->forward(x);
  return finish_features(backbone_.forward(x));
}

ad::Var DualEBM::ekus_logits(const ad::Var& x) const { return ekus_head_.forward(ekus_features(x)); }
ad::Var DualEBM::ess_logits(const ad::Var& x) const { return ess_cls_head_.forward(ess_features(x)); }
ad::Var DualEBM::ess_energy(const ad::Var& x) const { return ess_energy_from_features(ess_features(x)); }

ad::Var DualEBM::ekus_logits_from_features(const ad::Var& features) const {
  return ekus_head_.forward(features);
}

ad::Var DualEBM::ess_logits_from_features(const ad::Var& features) const {
  return ess_cls_head_.forward(features);
}

ad::Var DualEBM::ess_energy_from_features(const ad::Var& features) const {
  ad::Var e = ess_energy_head_.forward(features);
  return ad::reshape(e, ad::Shape{e.value().rows()});
}

std::vector<ad::Var> DualEBM::ekus_parameters() const {
  auto out = backbone_.parameters();
  out.push_back(ekus_head_.weight());
  out.push_back(ekus_head_.bias());
  return out;
}

std::vector<ad::Var> DualEBM::ess_head_parameters() const {
  return {ess_cls_head_.weight(), ess_cls_head_.bias(), ess_energy_head_.weight(),
          ess_energy_head_.bias()};
}

std::vector<ad::Var> DualEBM::ess_backbone_parameters() const {
  return ess_backbone_ ? ess_backbone_->parameters() : backbone_.parameters();
}

std::vector<std::pair<std::string, ad::Var>> DualEBM::named_parameters() const {
  std::vector<std::pair<std::string, ad::Var>> out;
  auto add_mlp = [&](const std::string& prefix, const Mlp& mlp) {
    for (std::size_t i = 0; i < mlp.layers().size(); ++i) {
      out.emplace_back(prefix + "." + std::to_string(i) + ".weight", mlp.layers()[i].weight());
      out.emplace_back(prefix + "." + std::to_string(i) + ".bias", mlp.layers()[i].bias());
    }
  };
  add_mlp("backbone", backbone_);
  if (ess_backbone_) add_mlp("ess_backbone", *ess_backbone_);
  auto add_head = [&](const std::string& name, const Linear& head) {
    out.emplace_back(name + ".weight", head.weight());
    out.emplace_back(name + ".bias", head.bias());
  };
  add_head("ekus_head", ekus_head_);
  add_head("ess_cls_head", ess_cls_head_);
  add_head("ess_energy_head", ess_energy_head_);
  return out;
}

void DualEBM::reinit(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  backbone_.reinit(rng);
  if (ess_backbone_) ess_backbone_->reinit(rng);
  ekus_head_.reinit(rng);
  ess_cls_head_.reinit(rng);
  ess_energy_head_.reinit(rng);
}

// ---------------------------------------------------------------- energies

ad::Var free_energy(const ad::Var& logits) { return ad::neg(ad::logsumexp_rows(logits)); }

std::vector<double> entropy(const ad::Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("entropy: logits must be a matrix");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (c < 1) throw DimensionError("entropy: zero columns");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    double u = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double gap = lse - row[j];  // -log p_j >= 0
      u += std::exp(-gap) * gap;
    }
    out[i] = u;
  }
  return out;
}

ad::Var batch_matrix(const std::vector<const std::vector<double>*>& rows, std::size_t dim) {
  std::vector<double> data;
  data.reserve(rows.size() * dim);
  for (const auto* r : rows) {
    if (r->size() != dim) throw DimensionError("batch_matrix: row width disagrees with dim");
    data.insert(data.end(), r->begin(), r->end());
  }
  return ad::Var::constant(ad::Tensor::matrix(rows.size(), dim, std::move(data)));
}

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(const DualEBM& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  const auto params = model.named_parameters();
  out << "ebosal-checkpoint 1\n" << params.size() << '\n';
  char buf[32];
  for (const auto& [name, var] : params) {
    out << name << ' ' << var.shape().size();
    for (std::size_t d : var.shape()) out << ' ' << d;
    out << '\n';
    const auto data = var.value().data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", data[i]);
      out << (i ? " " : "") << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

void load_checkpoint(DualEBM& model, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "ebosal-checkpoint" || version != 1)
    throw ConfigError("checkpoint '" + path.string() + "': unsupported header");
  std::size_t count = 0;
  in >> count;
  auto params = model.named_parameters();
  if (count != params.size())
    throw ConfigError("checkpoint '" + path.string() + "': parameter count mismatch");
  // Parse everything first so a bad file leaves the model untouched.
  std::vector<std::vector<double>> values(count);
  for (std::size_t p = 0; p < count; ++p) {
    std::string name;
    std::size_t rank = 0;
    in >> name >> rank;
    ad::Shape shape(rank);
    for (auto& d : shape) in >> d;
    if (!in || name != params[p].first || shape != params[p].second.shape())
      throw ConfigError("checkpoint '" + path.string() + "': unexpected parameter '" + name + "'");
    values[p].resize(ad::shape_size(shape));
    for (double& v : values[p]) {
      std::string tok;
      in >> tok;
      try {
        v = std::stod(tok);
      } catch (const std::exception&) {
        throw ConfigError("checkpoint '" + path.string() + "': bad value in '" + name + "'");
      }
    }
  }
  for (std::size_t p = 0; p < count; ++p) {
    ad::Var v = params[p].second;
    std::copy(values[p].begin(), values[p].end(), v.value().data().begin());
    v.grad().fill(0.0);
  }
}

}  // namespace ebosal
