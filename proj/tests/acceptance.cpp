// Acceptance run: one PASS/FAIL line per criterion, with the measured values.
// Exit status is non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ebosal/commands.hpp"
#include "ebosal/config.hpp"
#include "support/gradcheck.hpp"
#include "support/pool_fuzz.hpp"
#include "support/reference.hpp"

using namespace ebosal;
namespace et = ebosal::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void verdict(const std::string& id, bool ok, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS " : "FAIL ") << id << ": " << detail << std::endl;
}

std::string num(double v) { return format_number(v); }

// The benchmark: default task and model, 5 cycles of b = 30, 5 seeds.
ExperimentConfig benchmark_config() {
  return parse_config(std::nullopt, {"al.cycles=5", "al.budget=30", "repeats=5", "jobs=1", "seed=0"});
}

// ---------------------------------------------------------------- 1

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_case;
  std::size_t instances = 0, cases = 0;
  std::mt19937_64 rng(2024);
  for (const et::GradCase& c : et::gradient_cases()) {
    ++cases;
    for (int i = 0; i < 100; ++i) {
      const auto r = et::check_gradient(c, c.draw(rng));
      ++instances;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = c.name;
      }
    }
  }
  const double secs = seconds_since(t0);
  verdict("1 gradient suite", worst < 1e-4 && secs < 30.0,
          std::to_string(cases) + " cases x 100 instances, max rel err " + num(worst) + " (" + worst_case +
              "), " + num(secs) + " s");
}

// ---------------------------------------------------------------- 2

void analytic_oracles() {
  using ad::Tensor;
  using ad::Var;
  std::vector<std::pair<std::string, double>> errs;
  auto val = [](const Var& v) { return v.value().item(); };
  auto vec = [](std::vector<double> v) { return Var::constant(Tensor::vector(std::move(v))); };

  errs.emplace_back("free_energy [0,0]", std::abs(free_energy(Var::constant(Tensor::matrix(1, 2, {0, 0})))
                                                      .value()[0] + std::log(2.0)));
  errs.emplace_back("entropy uniform(4)",
                    std::abs(entropy(Tensor::matrix(1, 4, {0, 0, 0, 0}))[0] - std::log(4.0)));
  {
    const int comp[] = {0};
    errs.emplace_back("nl uniform(4)", std::abs(val(negative_learning_loss(
                                                    Var::constant(Tensor::matrix(1, 4, {.25, .25, .25, .25})), comp)) +
                                                std::log(0.75)));
    errs.emplace_back("nl clamp", std::abs(val(negative_learning_loss(
                                               Var::constant(Tensor::matrix(1, 2, {1.0, 0.0})), comp)) +
                                           std::log(1e-12)));
  }
  errs.emplace_back("hinge", std::abs(val(hinge_loss(vec({-20}), vec({-6}), -23, -5)) - 10.0));
  errs.emplace_back("ess reg", std::abs(val(ess_reg_loss(vec({-15, -25, -18}), -20)) - 29.0));

  // Brute-force oracles on random logits.
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-8, 8);
  double fe = 0.0, en = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 9;
    std::vector<double> row(k);
    std::vector<long double> lrow(k);
    for (std::size_t j = 0; j < k; ++j) lrow[j] = row[j] = u(rng);
    const Tensor logits = Tensor::matrix(1, k, row);
    fe = std::max(fe, std::abs(free_energy(Var::constant(logits)).value()[0] +
                               static_cast<double>(et::ref::log_sum_exp(lrow))));
    en = std::max(en, std::abs(entropy(logits)[0] - static_cast<double>(et::ref::entropy(lrow))));
  }
  errs.emplace_back("free_energy brute force", fe);
  errs.emplace_back("entropy brute force", en);

  double worst = 0.0;
  std::string which;
  for (const auto& [name, e] : errs)
    if (!(e <= worst)) {
      worst = e;
      which = name;
    }
  verdict("2 analytic oracles", worst < 1e-9,
          std::to_string(errs.size()) + " checks, max abs err " + num(worst) + (which.empty() ? "" : " (" + which + ")"));
}

// ---------------------------------------------------------------- 3

void pool_fuzz() {
  const auto s = et::run_pool_fuzz(7, 10000);
  verdict("3 pool fuzz", s.oracle_calls >= 10000 && s.violations == 0,
          std::to_string(s.runs) + " runs, " + std::to_string(s.oracle_calls) + " oracle calls, " +
              std::to_string(s.checks) + " checks, " + std::to_string(s.violations) + " violations" +
              (s.violations ? " (first: " + s.first_violation + ")" : ""));
}

// ---------------------------------------------------------------- 4, 5, 8

const AggregateRow& row(const std::vector<AggregateRow>& rows, const std::string& method, int cycle) {
  for (const auto& r : rows)
    if (r.method == method && r.cycle == cycle) return r;
  throw std::runtime_error("missing aggregate row " + method);
}

void benchmark_and_ablation() {
  const ExperimentConfig cfg = benchmark_config();
  ExperimentSpec spec;
  spec.task = build_task(cfg.task);
  spec.al = cfg.al;
  spec.methods = all_methods();
  spec.master_seed = cfg.seed;
  spec.repeats = cfg.repeats;
  spec.jobs = 1;

  const auto t0 = Clock::now();
  const ExperimentResult result = run_experiment(spec);
  const double secs = seconds_since(t0);
  const int last = cfg.al.cycles;
  const auto& rows = result.aggregate;

  const RunState probe = make_run_state(spec.task, spec.al, derive_run_seed(cfg.seed, 0));
  std::cout << "     task: " << spec.task->num_classes << " classes, " << spec.task->num_known()
            << " known, |D_UL| = " << probe.pool.unlabeled().size() << ", |D_L| = " << probe.pool.labeled().size()
            << "\n     per-method final cycle (5-seed means):\n";
  for (const AggregateRow& r : final_cycle_rows(rows))
    std::cout << "       " << r.method << ": accuracy " << num(r.test_accuracy.mean) << " (sd "
              << num(r.test_accuracy.sd) << "), cumulative precision " << num(r.query_precision_cumulative.mean)
              << ", energy auroc " << num(r.energy_auroc.mean) << "\n";

  const double p_eb = row(rows, "ebosal", last).query_precision_cumulative.mean;
  const double p_rand = row(rows, "random", last).query_precision_cumulative.mean;
  verdict("4a precision over random", p_eb >= p_rand + 0.10,
          "ebosal " + num(p_eb) + " vs random " + num(p_rand) + " (need >= +0.10)");

  const double a_eb = row(rows, "ebosal", last).test_accuracy.mean;
  const double a_ent = row(rows, "entropy", last).test_accuracy.mean;
  const double a_rand = row(rows, "random", last).test_accuracy.mean;
  verdict("4b final accuracy", a_eb >= a_ent && a_eb >= a_rand,
          "ebosal " + num(a_eb) + ", entropy " + num(a_ent) + ", random " + num(a_rand));

  double min_auroc = INFINITY;
  std::string per_cycle;
  for (int c = 2; c <= last; ++c) {
    const double a = row(rows, "ebosal", c).energy_auroc.mean;
    min_auroc = std::min(min_auroc, a);
    per_cycle += " " + num(a);
  }
  verdict("4c energy auroc >= 0.80 for cycles >= 2", min_auroc >= 0.80, "per cycle:" + per_cycle);

  // Separation trend: unknown pool energies above known ones in every cycle.
  std::size_t separated = 0, total = 0;
  for (const RunResult& run : result.runs) {
    if (run.method != Method::ebosal) continue;
    for (const CycleReport& r : run.reports) {
      ++total;
      separated += r.mean_energy_unknown > r.mean_energy_known;
    }
  }
  verdict("4c' mean E(unknown) > mean E(known)", separated == total,
          std::to_string(separated) + "/" + std::to_string(total) + " ebosal cycles");

  verdict("4d runtime", secs < 600.0,
          num(secs) + " s single-threaded for all five methods x 5 seeds");

  const double a_noess = row(rows, "no_ess", last).test_accuracy.mean;
  const double a_noekus = row(rows, "no_ekus", last).test_accuracy.mean;
  verdict("5 ablation ordering", a_eb > a_noess && a_eb > a_noekus && a_noekus <= a_rand + 0.03,
          "ebosal " + num(a_eb) + ", no_ess " + num(a_noess) + ", no_ekus " + num(a_noekus) + ", random " +
              num(a_rand));

  // Reduction identity against the entropy runs above.
  ALConfig reduced = spec.al;
  reduced.method = Method::no_ekus;
  reduced.beta = 0.0;
  std::size_t compared = 0, equal = 0;
  for (const RunResult& run : result.runs) {
    if (run.method != Method::entropy) continue;
    const RunResult mine = run_single(spec.task, reduced, cfg.seed, run.seed_index);
    for (std::size_t c = 0; c < run.queries.size(); ++c) {
      ++compared;
      equal += c < mine.queries.size() && mine.queries[c] == run.queries[c];
    }
  }
  verdict("8 no_ekus(beta=0) == entropy", compared > 0 && equal == compared,
          std::to_string(equal) + "/" + std::to_string(compared) + " (seed, cycle) query sets identical");
}

// ---------------------------------------------------------------- 6

void margin_sweep() {
  ExperimentConfig cfg = benchmark_config();
  const std::vector<double> ks{-6.0, -4.0, -2.0}, us{-1.5, -1.0, 0.0};
  cfg.sweep = SweepSpec{ks, us};
  std::ostringstream log;
  const auto t0 = Clock::now();
  const auto cells = run_sweep(cfg, log);
  const double secs = seconds_since(t0);

  auto cell = [&](std::size_t i, std::size_t j) -> const AggregateRow& { return cells[i * us.size() + j].final_row; };
  std::cout << "     sweep (" << num(secs) << " s), rows delta_k, columns delta_u; accuracy / auroc / precision\n";
  for (std::size_t i = 0; i < ks.size(); ++i) {
    std::cout << "       " << num(ks[i]) << ":";
    for (std::size_t j = 0; j < us.size(); ++j)
      std::cout << "  " << num(cell(i, j).test_accuracy.mean) << " / " << num(cell(i, j).energy_auroc.mean)
                << " / " << num(cell(i, j).query_precision_cumulative.mean);
    std::cout << "\n";
  }

  // Column means over the delta_k rows; column 0 has the smallest gaps.
  auto column_mean = [&](std::size_t j, auto metric) {
    double s = 0.0;
    for (std::size_t i = 0; i < ks.size(); ++i) s += metric(cell(i, j));
    return s / static_cast<double>(ks.size());
  };
  auto acc = [](const AggregateRow& r) { return r.test_accuracy.mean; };
  auto roc = [](const AggregateRow& r) { return r.energy_auroc.mean; };
  bool narrow_no_better = true;
  std::string detail = "narrow column delta_u=" + num(us[0]) + " acc " + num(column_mean(0, acc)) + " auroc " +
                       num(column_mean(0, roc)) + " vs";
  for (std::size_t j = 1; j < us.size(); ++j) {
    narrow_no_better = narrow_no_better && column_mean(0, acc) <= column_mean(j, acc) &&
                       column_mean(0, roc) <= column_mean(j, roc);
    detail += " [delta_u=" + num(us[j]) + " acc " + num(column_mean(j, acc)) + " auroc " + num(column_mean(j, roc)) + "]";
  }
  verdict("6a narrow-gap column no better", narrow_no_better, detail);

  const double p_default = cell(1, 1).query_precision_cumulative.mean;
  const double p_loose = cell(2, 1).query_precision_cumulative.mean;
  verdict("6b loose delta_k degrades precision", p_loose < p_default,
          "delta_k=-2: " + num(p_loose) + " vs default delta_k=-4: " + num(p_default) + " (delta_u=-1)");
}

// ---------------------------------------------------------------- 7

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism() {
  const fs::path base = fs::temp_directory_path() / "ebosal_acceptance_determinism";
  fs::remove_all(base);
  std::ostringstream log;
  int codes = 0;
  for (const char* name : {"a", "b"}) {
    const ExperimentConfig cfg =
        parse_config(std::nullopt, {"al.cycles=3", "repeats=2", "out=" + (base / name).string()});
    codes += cmd_run(cfg, false, log);
  }
  std::size_t files = 0, identical = 0;
  for (const auto& e : fs::recursive_directory_iterator(base / "a")) {
    const auto ext = e.path().extension();
    if (!e.is_regular_file() || (ext != ".csv" && ext != ".dat")) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), base / "a");
    identical += fs::exists(base / "b" / rel) && slurp(e.path()) == slurp(base / "b" / rel);
  }
  fs::remove_all(base);
  verdict("7 determinism", codes == 0 && files > 0 && identical == files,
          std::to_string(identical) + "/" + std::to_string(files) + " CSV/.dat files byte-identical");
}

}  // namespace

int main() {
  try {
    gradient_suite();
    analytic_oracles();
    pool_fuzz();
    benchmark_and_ablation();
    margin_sweep();
    determinism();
  } catch (const std::exception& e) {
    verdict("harness", false, e.what());
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
