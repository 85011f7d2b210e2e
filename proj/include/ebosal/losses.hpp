#pragma once

// Training objectives for the separator (hinge + contrastive + negative
// learning) and the scorer (cross-entropy + energy margin regularizer).
//
// Normalization is fixed: the hinge and the scorer regularizer are raw sums
// over the batch, the contrastive and negative-learning terms are batch means.
// Changing this rescales lambda and gamma.

#include <span>

#include "ebosal/autodiff.hpp"

namespace ebosal {

struct MarginConfig {
  double delta_k = -4.0;  // known energies pushed below
  double delta_u = -1.0;  // pseudo-unknown energies pushed above
  double delta_s = -3.0;  // scorer energy margin on labeled samples
  double lambda = 0.2;    // contrastive weight
  double gamma = 0.2;     // negative-learning weight
  double alpha = 0.1;     // scorer regularizer weight

  // Margins used with a ResNet-scale backbone, whose energies spread wider.
  static MarginConfig wide_range() { return {-23.0, -5.0, -20.0, 0.2, 0.2, 0.1}; }

  // Throws ConfigError unless delta_k < delta_u and all weights are >= 0.
  void validate() const;
};

inline constexpr double kLogFloor = 1e-12;

// sum max(0, E_known - delta_k)^2 + sum max(0, delta_u - E_pseudo)^2.
// Either batch may be empty (rank-1, length 0) but not both.
ad::Var hinge_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo, double delta_k,
                   double delta_u);

// mean(E_known) - mean(E_pseudo). An empty side yields a constant 0.
ad::Var contrastive_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo);

// mean over rows of -log(max(1 - p[i, comp[i]], 1e-12)).
ad::Var negative_learning_loss(const ad::Var& probs, std::span<const int> complementary);

struct EkusLossTerms {
  ad::Var total;
  ad::Var hinge;
  ad::Var contrastive;
  ad::Var negative_learning;
  bool contrastive_skipped = false;
  bool negative_learning_skipped = false;
};

// L_hinge + lambda * L_contrastive + gamma * L_NL. `unlabeled_probs` may be
// undefined or empty, which skips the NL term.
EkusLossTerms ekus_loss(const ad::Var& energy_known, const ad::Var& energy_pseudo,
                        const ad::Var& unlabeled_probs, std::span<const int> complementary,
                        const MarginConfig& margins);

// sum max(0, E_ess - delta_s)^2 over labeled samples.
ad::Var ess_reg_loss(const ad::Var& energy_ess, double delta_s);

// cross-entropy(logits, targets) + alpha * ess_reg_loss(energy_ess, delta_s).
ad::Var ess_loss(const ad::Var& logits, std::span<const int> targets, const ad::Var& energy_ess,
                 double alpha, double delta_s);

}  // namespace ebosal
