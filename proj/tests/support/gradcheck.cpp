#include "support/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ebosal/losses.hpp"
#include "ebosal/model.hpp"

namespace ebosal::testing {

using ad::Shape;
using ad::Tensor;
using ad::Var;

ad::Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

namespace {

constexpr double kKinkGap = 1e-3;

Var weighted_sum(const Var& v, const Tensor& w) { return ad::sum(ad::mul(v, Var::constant(w))); }

// Redraws entries that sit within kKinkGap of any of the given points.
void keep_away(Tensor& t, std::initializer_list<double> points, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (double& v : t.data()) {
    auto near = [&] {
      for (double p : points)
        if (std::abs(v - p) < kKinkGap) return true;
      return false;
    };
    while (near()) v = u(rng);
  }
}

std::vector<int> random_ints(std::size_t n, int upper, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, upper - 1);
  std::vector<int> out(n);
  for (int& v : out) v = u(rng);
  return out;
}

std::vector<double> energies_of(const Tensor& logits) {
  ad::NoGradGuard guard;
  const Var e = free_energy(Var::constant(logits));
  return {e.value().data().begin(), e.value().data().end()};
}

bool away_from(const std::vector<double>& values, double point) {
  return std::all_of(values.begin(), values.end(),
                     [&](double v) { return std::abs(v - point) >= kKinkGap; });
}

GradCase binary_case(std::string name, Var (*op)(const Var&, const Var&)) {
  return {std::move(name),
          [](std::mt19937_64& rng) {
            GradInstance g;
            g.inputs = {uniform_tensor({3, 4}, rng), uniform_tensor({3, 4}, rng)};
            g.fixed = {uniform_tensor({3, 4}, rng)};
            return g;
          },
          [op](const std::vector<Var>& in, const GradInstance& g) {
            return weighted_sum(op(in[0], in[1]), g.fixed[0]);
          }};
}

GradCase unary_case(std::string name, std::function<Var(const Var&)> op,
                    std::initializer_list<double> kinks = {}) {
  std::vector<double> kink_points(kinks);
  return {std::move(name),
          [kink_points](std::mt19937_64& rng) {
            GradInstance g;
            Tensor a = uniform_tensor({3, 4}, rng);
            for (double p : kink_points) keep_away(a, {p}, rng);
            g.inputs = {std::move(a)};
            g.fixed = {uniform_tensor({3, 4}, rng)};
            return g;
          },
          [op](const std::vector<Var>& in, const GradInstance& g) {
            return weighted_sum(op(in[0]), g.fixed[0]);
          }};
}

std::vector<GradCase> build_cases() {
  std::vector<GradCase> cases;

  cases.push_back({"matmul",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({3, 4}, rng), uniform_tensor({4, 2}, rng)};
                     g.fixed = {uniform_tensor({3, 2}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::matmul(in[0], in[1]), g.fixed[0]);
                   }});
  cases.push_back(binary_case("add", &ad::add));
  cases.push_back(binary_case("sub", &ad::sub));
  cases.push_back(binary_case("mul", &ad::mul));
  cases.push_back(unary_case("scale", [](const Var& a) { return ad::scale(a, -1.7); }));
  cases.push_back(unary_case("add_scalar", [](const Var& a) { return ad::add_scalar(a, 0.6); }));
  cases.push_back(unary_case("neg", [](const Var& a) { return ad::neg(a); }));
  cases.push_back(unary_case("square", [](const Var& a) { return ad::square(a); }));
  cases.push_back(unary_case("relu", [](const Var& a) { return ad::relu(a); }, {0.0}));
  cases.push_back(unary_case("normalize_rows", [](const Var& a) { return ad::normalize_rows(a); }));
  cases.push_back({"add_row_bias",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({3, 4}, rng), uniform_tensor({4}, rng)};
                     g.fixed = {uniform_tensor({3, 4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::add_row_bias(in[0], in[1]), g.fixed[0]);
                   }});
  cases.push_back({"sum",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({3, 4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance&) {
                     return ad::scale(ad::sum(in[0]), 1.3);
                   }});
  cases.push_back({"mean",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({3, 4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance&) {
                     return ad::square(ad::mean(in[0]));
                   }});
  cases.push_back({"reshape",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({3, 4}, rng)};
                     g.fixed = {uniform_tensor({2, 6}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::reshape(in[0], Shape{2, 6}), g.fixed[0]);
                   }});
  cases.push_back({"slice_rows",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({5, 3}, rng)};
                     g.fixed = {uniform_tensor({3, 3}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::slice_rows(in[0], 1, 4), g.fixed[0]);
                   }});
  cases.push_back({"concat_rows",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({2, 3}, rng), uniform_tensor({3, 3}, rng)};
                     g.fixed = {uniform_tensor({5, 3}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     const Var parts[] = {in[0], in[1]};
                     return weighted_sum(ad::concat_rows(parts), g.fixed[0]);
                   }});
  cases.push_back({"logsumexp_rows",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({4, 5}, rng)};
                     g.fixed = {uniform_tensor({4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::logsumexp_rows(in[0]), g.fixed[0]);
                   }});
  cases.push_back({"softmax_rows",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({4, 5}, rng)};
                     g.fixed = {uniform_tensor({4, 5}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::softmax_rows(in[0]), g.fixed[0]);
                   }});
  cases.push_back({"gather_rows",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({4, 5}, rng)};
                     g.fixed = {uniform_tensor({4}, rng)};
                     g.ints = random_ints(4, 5, rng);
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::gather_rows(in[0], g.ints), g.fixed[0]);
                   }});
  cases.push_back({"neg_log_one_minus",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({6}, rng, 0.05, 0.9)};
                     g.fixed = {uniform_tensor({6}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(ad::neg_log_one_minus(in[0], kLogFloor), g.fixed[0]);
                   }});
  cases.push_back({"softmax_cross_entropy",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({5, 4}, rng)};
                     g.ints = random_ints(5, 4, rng);
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return ad::softmax_cross_entropy(in[0], g.ints);
                   }});
  cases.push_back({"free_energy",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({4, 3}, rng)};
                     g.fixed = {uniform_tensor({4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return weighted_sum(free_energy(in[0]), g.fixed[0]);
                   }});
  cases.push_back({"hinge_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     Tensor ek = uniform_tensor({5}, rng), ep = uniform_tensor({4}, rng);
                     keep_away(ek, {-1.0}, rng);
                     keep_away(ep, {1.0}, rng);
                     g.inputs = {std::move(ek), std::move(ep)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance&) {
                     return hinge_loss(in[0], in[1], -1.0, 1.0);
                   }});
  cases.push_back({"contrastive_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({5}, rng), uniform_tensor({4}, rng)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance&) {
                     return ad::square(contrastive_loss(in[0], in[1]));
                   }});
  cases.push_back({"negative_learning_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     g.inputs = {uniform_tensor({6, 4}, rng)};
                     g.ints = random_ints(6, 4, rng);
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return negative_learning_loss(ad::softmax_rows(in[0]), g.ints);
                   }});
  cases.push_back({"ekus_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     Tensor lk, lp;
                     do {
                       lk = uniform_tensor({4, 3}, rng);
                       lp = uniform_tensor({4, 3}, rng);
                     } while (!away_from(energies_of(lk), -1.5) || !away_from(energies_of(lp), -0.8));
                     g.inputs = {std::move(lk), std::move(lp), uniform_tensor({6, 3}, rng)};
                     g.ints = random_ints(6, 3, rng);
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     MarginConfig m;
                     m.delta_k = -1.5;
                     m.delta_u = -0.8;
                     return ekus_loss(free_energy(in[0]), free_energy(in[1]), ad::softmax_rows(in[2]),
                                      g.ints, m)
                         .total;
                   }});
  cases.push_back({"ess_reg_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     Tensor e = uniform_tensor({6}, rng);
                     keep_away(e, {0.0}, rng);
                     g.inputs = {std::move(e)};
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance&) {
                     return ess_reg_loss(in[0], 0.0);
                   }});
  cases.push_back({"ess_loss",
                   [](std::mt19937_64& rng) {
                     GradInstance g;
                     Tensor e = uniform_tensor({5}, rng);
                     keep_away(e, {0.0}, rng);
                     g.inputs = {uniform_tensor({5, 4}, rng), std::move(e)};
                     g.ints = random_ints(5, 4, rng);
                     return g;
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     return ess_loss(in[0], g.ints, in[1], 0.3, 0.0);
                   }});
  // Two relu layers, row normalization, linear head, free energy: the
  // separator's forward pass with respect to every parameter.
  cases.push_back({"mlp_free_energy",
                   [](std::mt19937_64& rng) {
                     for (;;) {
                       GradInstance g;
                       g.inputs = {uniform_tensor({3, 5}, rng), uniform_tensor({5}, rng),
                                   uniform_tensor({5, 4}, rng), uniform_tensor({4}, rng),
                                   uniform_tensor({4, 3}, rng), uniform_tensor({3}, rng)};
                       g.fixed = {uniform_tensor({6, 3}, rng), uniform_tensor({6}, rng)};
                       ad::NoGradGuard guard;
                       const Var x = Var::constant(g.fixed[0]);
                       const Var p1 = ad::add_row_bias(ad::matmul(x, Var::constant(g.inputs[0])),
                                                       Var::constant(g.inputs[1]));
                       const Var p2 = ad::add_row_bias(ad::matmul(ad::relu(p1), Var::constant(g.inputs[2])),
                                                       Var::constant(g.inputs[3]));
                       const Tensor h = ad::relu(p2).value();
                       bool ok = away_from({p1.value().data().begin(), p1.value().data().end()}, 0.0) &&
                                 away_from({p2.value().data().begin(), p2.value().data().end()}, 0.0);
                       for (std::size_t i = 0; ok && i < h.rows(); ++i) {
                         double sq = 0.0;
                         for (std::size_t j = 0; j < h.cols(); ++j) sq += h.at(i, j) * h.at(i, j);
                         ok = sq > 0.01;
                       }
                       if (ok) return g;
                     }
                   },
                   [](const std::vector<Var>& in, const GradInstance& g) {
                     const Var x = Var::constant(g.fixed[0]);
                     const Var h1 = ad::relu(ad::add_row_bias(ad::matmul(x, in[0]), in[1]));
                     const Var h2 = ad::relu(ad::add_row_bias(ad::matmul(h1, in[2]), in[3]));
                     const Var logits = ad::add_row_bias(ad::matmul(ad::normalize_rows(h2), in[4]), in[5]);
                     return weighted_sum(free_energy(logits), g.fixed[1]);
                   }});
  return cases;
}

}  // namespace

GradReport check_gradient(const GradCase& c, const GradInstance& instance, double step) {
  std::vector<Var> vars;
  for (const Tensor& t : instance.inputs) vars.push_back(Var::parameter(t));
  ad::backward(c.build(vars, instance));

  GradReport report;
  for (Var& v : vars) {
    const Tensor analytic = v.grad();
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double original = v.value()[j];
      double plus = 0.0, minus = 0.0;
      {
        ad::NoGradGuard guard;
        v.value()[j] = original + step;
        plus = c.build(vars, instance).value().item();
        v.value()[j] = original - step;
        minus = c.build(vars, instance).value().item();
      }
      v.value()[j] = original;
      const double numeric = (plus - minus) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-4});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(analytic[j] - numeric) / denom);
      ++report.entries;
    }
  }
  return report;
}

const std::vector<GradCase>& gradient_cases() {
  static const std::vector<GradCase> cases = build_cases();
  return cases;
}

}  // namespace ebosal::testing
