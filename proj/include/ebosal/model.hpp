#pragma once

// The dual-stage network: an MLP backbone feeding three linear heads. The
// separator head's free energy scores known vs unknown; the scorer has its own
// classifier head and a scalar energy head.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ebosal/autodiff.hpp"

namespace ebosal {

struct ModelHyper {
  std::vector<std::size_t> hidden{64, 64};
  int epochs = 60;
  std::size_t batch_size = 32;
  ad::SgdOptions optimizer{};
  // One backbone for both stages (the scorer then trains only its heads). When
  // false the scorer owns a second backbone that it trains itself.
  bool share_backbone = false;
  // Features of the shared (separator) backbone are scaled to unit L2 norm
  // per row, so only the heads control the energy scale. A separate scorer
  // backbone is left unnormalized.
  bool normalize_features = true;

  void validate() const;
};

class Linear {
 public:
  Linear(std::size_t in, std::size_t out);

  ad::Var forward(const ad::Var& x) const;
  // Glorot-uniform weights in [-a, a], a = sqrt(6 / (in + out)); zero bias.
  void reinit(std::mt19937_64& rng);

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  const ad::Var& weight() const { return weight_; }
  const ad::Var& bias() const { return bias_; }

 private:
  std::size_t in_, out_;
  ad::Var weight_;  // in x out
  ad::Var bias_;    // out
};

// Stack of Linear layers, relu after each.
class Mlp {
 public:
  Mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden);

  ad::Var forward(const ad::Var& x) const;
  void reinit(std::mt19937_64& rng);
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const;
  std::vector<ad::Var> parameters() const;
  const std::vector<Linear>& layers() const { return layers_; }

 private:
  std::size_t input_dim_;
  std::vector<Linear> layers_;
};

class DualEBM {
 public:
  DualEBM(std::size_t input_dim, std::size_t num_known, const ModelHyper& hyper,
          std::uint64_t seed);

  ad::Var ekus_features(const ad::Var& x) const;
  ad::Var ess_features(const ad::Var& x) const;
  ad::Var ekus_logits(const ad::Var& x) const;
  ad::Var ess_logits(const ad::Var& x) const;
  // Scalar per sample from the energy head: [n].
  ad::Var ess_energy(const ad::Var& x) const;

  ad::Var ekus_logits_from_features(const ad::Var& features) const;
  ad::Var ess_logits_from_features(const ad::Var& features) const;
  ad::Var ess_energy_from_features(const ad::Var& features) const;

  std::vector<ad::Var> ekus_parameters() const;  // backbone + separator head
  std::vector<ad::Var> ess_head_parameters() const;
  std::vector<ad::Var> ess_backbone_parameters() const;
  std::vector<std::pair<std::string, ad::Var>> named_parameters() const;

  // Redraws every parameter from the init scheme and clears gradients.
  void reinit(std::uint64_t seed);

  std::size_t input_dim() const { return backbone_.input_dim(); }
  std::size_t num_known() const { return num_known_; }
  bool shares_backbone() const { return !ess_backbone_.has_value(); }
  // Heads are public for tests and checkpoint tooling.
  Linear& ekus_head() { return ekus_head_; }
  Linear& ess_cls_head() { return ess_cls_head_; }
  Linear& ess_energy_head() { return ess_energy_head_; }

 private:
  void check_input(const ad::Var& x) const;
  ad::Var finish_features(const ad::Var& h) const;

  std::size_t num_known_;
  bool normalize_ = true;
  Mlp backbone_;
  std::optional<Mlp> ess_backbone_;
  Linear ekus_head_;
  Linear ess_cls_head_;
  Linear ess_energy_head_;
};

// E(x) = -log sum_y exp(f_y(x)), per row: [n x C] -> [n].
ad::Var free_energy(const ad::Var& logits);

// Softmax entropy in nats per row, evaluated as sum_j p_j (lse - f_j) so that
// every term is non-negative.
std::vector<double> entropy(const ad::Tensor& logits);

// Packs rows of sample features into an n x d constant.
ad::Var batch_matrix(const std::vector<const std::vector<double>*>& rows, std::size_t dim);

// Text checkpoint:
//   ebosal-checkpoint 1
//   <parameter count>
//   <name> <rank> <dims...>
//   <values, %.17g, space separated>
void save_checkpoint(const DualEBM& model, const std::filesystem::path& path);
void load_checkpoint(DualEBM& model, const std::filesystem::path& path);

}  // namespace ebosal
