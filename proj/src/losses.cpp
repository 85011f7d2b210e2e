#include "ebosal/losses.hpp"

#include <cmath>
#include <string>

namespace ebosal {

void MarginConfig::validate() const {
  if (!(delta_k < delta_u)) {
    throw ConfigError("margins: delta_k (" + std::to_string(delta_k) +
                      ") must be below delta_u (" + std::to_string(delta_u) + ")");
  }
  if (!std::isfinite(delta_s)) throw ConfigError("margins: delta_s must be finite");
  if (lambda < 0.0 || gamma < 0.0 || alpha < 0.0)
    throw ConfigError("margins: lambda, gamma and alpha must be >= 0");
}

namespace {

bool has_rows(const ad::Var& v) { return v.defined() && v.size() > 0; }

ad::Var zero() { return ad::Var::constant(ad::Tensor::scalar(0.0)); }

// sum max(0, x)^2
ad::Var squared_hinge_sum(const ad::Var& x) { return ad::sum(ad::square(ad::relu(x))); }

}  // namespace

ad::Var hinge_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo, double delta_k,
                   double delta_u) {
  const bool known = has_rows(energy_known), pseudo = has_rows(energy_pseudo);
  if (!known && !pseudo) throw ContractError("hinge_loss: both batches are empty");
  ad::Var k_term, u_term;
  if (known) k_term = squared_hinge_sum(ad::add_scalar(energy_known, -delta_k));
  if (pseudo) u_term = squared_hinge_sum(ad::add_scalar(ad::neg(energy_pseudo), delta_u));
  if (!known) return u_term;
  if (!pseudo) return k_term;
  return ad::add(k_term, u_term);
}

ad::Var contrastive_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo) {
  if (!has_rows(energy_known) || !has_rows(energy_pseudo)) return zero();
  return ad::sub(ad::mean(energy_known), ad::mean(energy_pseudo));
}

ad::Var negative_learning_loss(const ad::Var& probs, std::span<const int> complementary) {
  return ad::mean(ad::neg_log_one_minus(ad::gather_rows(probs, complementary), kLogFloor));
}

EkusLossTerms ekus_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo,
                        const ad::Var& unlabeled_probs, std::span<const int> complementary,
                        const MarginConfig& margins) {
  EkusLossTerms t;
  t.hinge = hinge_loss(energy_known, energy_pseudo, margins.delta_k, margins.delta_u);
  t.total = t.hinge;

  t.contrastive_skipped = !has_rows(energy_known) || !has_rows(energy_pseudo);
  t.contrastive = contrastive_loss(energy_known, energy_pseudo);
  if (!t.contrastive_skipped && margins.lambda != 0.0)
    t.total = ad::add(t.total, ad::scale(t.contrastive, margins.lambda));

  t.negative_learning_skipped = !has_rows(unlabeled_probs);
  t.negative_learning =
      t.negative_learning_skipped ? zero() : negative_learning_loss(unlabeled_probs, complementary);
  if (!t.negative_learning_skipped && margins.gamma != 0.0)
    t.total = ad::add(t.total, ad::scale(t.negative_learning, margins.gamma));
  return t;
}

ad::Var ess_reg_loss(const ad::Var& energy_ess, double delta_s) {
  return squared_hinge_sum(ad::add_scalar(energy_ess, -delta_s));
}

ad::Var ess_loss(const ad::Var& logits, std::span<const int> targets, const ad::Var& energy_ess,
                 double alpha, double delta_s) {
  ad::Var ce = ad::softmax_cross_entropy(logits, targets);
  if (alpha == 0.0) return ce;
  return ad::add(ce, ad::scale(ess_reg_loss(energy_ess, delta_s), alpha));
}

}  // namespace ebosal
