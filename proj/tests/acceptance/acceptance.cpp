// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; exit status is 1 if any selected one fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"
#include "drpo/experiments.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"
#include "drpo/train.hpp"
#include "drpo_cli/app.hpp"
#include "drpo_cli/selftest.hpp"

using namespace drpo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (ok ? "" : "[x] ") << what << "; ";
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

const SweepCell& cell(const RunReport& r, const std::string& variant, std::size_t n) {
  for (const auto& c : r.cells)
    if (c.variant == variant && c.n == n) return c;
  throw UsageError("missing cell " + variant);
}

// 1. Enumerated unbiasedness on E1-E3.
void exact_unbiasedness(Outcome& o) {
  const auto envs = make_test_environments(0);
  double worst = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& t = envs[i];
    const double truth = total_preference_exact(t.env, t.target);
    const auto& ref = t.env.ref_policy();
    const auto& g = t.env.preference();
    const double is = enumerate_expectation(t.env, [&](const PreferenceTuple& u) {
      return is_term(u, t.target, ref, std::nullopt);
    });
    const double dm = enumerate_expectation(t.env, [&](const PreferenceTuple& u) {
      return dm_term(u, t.target, g, DmExact{});
    });
    const auto wrong_g = make_misspecified_g(t.env, t.wrong_g_seed);
    const double errs[] = {is - truth, dm - truth, enumerated_dr_bias(t.env, t.target, ref, g),
                           enumerated_dr_bias(t.env, t.target, ref, wrong_g),
                           enumerated_dr_bias(t.env, t.target, t.wrong_ref, g)};
    for (double e : errs) worst = std::max(worst, std::abs(e));
  }
  o.require(worst <= 1e-10, "max |E - p*| over IS, DM, psi x3 on E1-E3 = " + fmt(worst, 3));
}

// 2. Double robustness on E4.
void double_robustness(Outcome& o) {
  const auto e4 = make_test_environment("E4", 0);
  SweepConfig cfg("E4", e4.env, e4.target);
  cfg.experiment = "double_robustness";
  cfg.variants = four_way_variants(e4);
  cfg.replications = 500;
  const RunReport r = mse_sweep(cfg);
  for (const char* v : {"true_g,true_ref", "wrong_g,true_ref", "true_g,wrong_ref"}) {
    const double ratio = cell(r, v, 1500).mse / cell(r, v, 100).mse;
    o.require(ratio < 0.2, std::string(v) + " mse(1500)/mse(100) = " + fmt(ratio));
  }
  // squared bias of the both-wrong estimator as run, i.e. with its clip
  const Variant& bw = cfg.variants.back();
  const auto nu = resolve_nuisances(e4.env, bw.nuisance, nullptr);
  EstimatorConfig est = cfg.estimator;
  est.clip_max = bw.clip_max;
  const double truth = total_preference_exact(e4.env, e4.target);
  const double bias = enumerate_expectation(e4.env, [&](const PreferenceTuple& u) {
    return psi_eval(u, e4.target, nu.ref_hat, nu.g_hat, est);
  }) - truth;
  const double both_wrong = cell(r, bw.name, 1500).mse;
  const double both_true = cell(r, "true_g,true_ref", 1500).mse;
  o.require(bias * bias >= 0.0025, "enumerated bias^2 = " + fmt(bias * bias));
  o.require(both_wrong > bias * bias, "both-wrong mse(1500) = " + fmt(both_wrong) + " > bias^2");
  o.require(both_wrong > 5 * both_true, "> 5 x both-true mse " + fmt(both_true));
}

// 3. Efficiency: MSE / SEB near 1 with true nuisances.
void efficiency(Outcome& o) {
  const auto e2 = make_test_environment("E2", 0);
  SweepConfig cfg("E2", e2.env, e2.target);
  cfg.experiment = "efficiency";
  cfg.sample_sizes = {500};
  cfg.replications = 2000;
  cfg.variants = {Variant{"true_g,true_ref", {GTrue{}, RefTrue{}}, std::nullopt}};
  const RunReport r = efficiency_study(cfg);
  const double ratio = r.cells[0].mse_over_seb;
  o.require(ratio >= 0.9 && ratio <= 1.1, "E2 n=500 R=2000 mse/seb = " + fmt(ratio));
}

// 4. Surrogate gradient vs central differences.
void gradients(Outcome& o) {
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto mode = i % 2 ? TrainDmMode::kMonteCarlo : TrainDmMode::kExact;
    const auto f = cli::make_gradient_fixture(derive_seed(2024, {i}), mode);
    std::vector<std::size_t> batch(f.data.size());
    for (std::size_t j = 0; j < batch.size(); ++j) batch[j] = j;
    const FrozenStep step = freeze_drpo_step(f.data, batch, f.policy, f.ref_hat, f.g_hat, f.cfg, i);
    worst = std::max(worst, cli::surrogate_gradient_error(step, f.policy, f.ref_hat, 1e-6));
  }
  o.require(worst < 1e-5, "50 checks, max relative error = " + fmt(worst, 3));
}

// 5. k3 estimator of KL.
void k3(Outcome& o) {
  const auto e2 = make_test_environment("E2", 0);
  const auto& shape = e2.env.shape();
  Philox4x32 rng(99, 0);
  auto random_policy = [&] {
    PerPrompt<double> l(shape.prompts());
    for (std::size_t x = 0; x < shape.prompts(); ++x)
      for (std::size_t y = 0; y < shape.responses(x); ++y) l[x].push_back(2.0 * rng.normal());
    return Policy::from_logits(l);
  };
  double smallest = 1e300;
  for (int i = 0; i < 10000; ++i) {
    const auto p = random_policy(), q = random_policy();
    const PromptId x = rng() % shape.prompts();
    const std::vector<ResponseId> y{static_cast<ResponseId>(rng() % shape.responses(x))};
    smallest = std::min(smallest, kl_k3(p, q, x, y));
  }
  o.require(smallest >= 0.0, "min over 10000 draws = " + fmt(smallest, 3));
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto p = random_policy(), q = random_policy();
    double expect = 0.0;
    for (PromptId x = 0; x < shape.prompts(); ++x)
      for (ResponseId y = 0; y < shape.responses(x); ++y) {
        const std::vector<ResponseId> s{y};
        expect += e2.env.prompt_weights()[x] * p.prob(x, y) * kl_k3(p, q, x, s);
      }
    worst = std::max(worst, std::abs(expect - kl_exact(e2.env, p, q)));
  }
  o.require(worst <= 1e-10, "max |E k3 - KL| = " + fmt(worst, 3));
}

TrainConfig drpo_settings() {
  TrainConfig t;
  t.beta = 0.01;
  t.lr = 0.1;
  t.batch_size = 64;
  t.epochs = 20;
  return t;
}

// 6. DRPO consistency on E1 and E3.
void consistency(Outcome& o) {
  for (const char* name : {"E1", "E3"}) {
    const auto t = make_test_environment(name, 0);
    CompareConfig cfg(name, t.env);
    cfg.methods = {Method::kDrpoGpm};
    cfg.n = 2000;
    cfg.replications = 50;
    cfg.drpo = drpo_settings();
    cfg.cells = {
        {"true_g,wrong_ref", RewardTrue{}, GTrue{}, RefWrong{"wrong_ref", t.wrong_ref}},
        {"gpm,true_ref", RewardTrue{}, GGpmTable{}, RefTrue{}},
        {"uniform_g,true_ref", RewardTrue{}, GUniformRandom{t.wrong_g_seed}, RefTrue{}},
    };
    const RunReport r = optimization_comparison(cfg);
    for (const auto& m : r.methods) {
      std::size_t hits = 0;
      for (double g : m.regrets) hits += g < 0.02 ? 1 : 0;
      const std::string line = std::string(name) + " " + m.cell + " " + std::to_string(hits) + "/50";
      // the uniform-random g cell is reported, not gated: see README
      if (m.cell == "uniform_g,true_ref")
        o.detail << "(info) " << line << "; ";
      else
        o.require(hits >= 45, line);
    }
  }
}

// 7. Robustness ordering on E2.
void robustness(Outcome& o) {
  const auto e2 = make_test_environment("E2", 0);
  CompareConfig cfg("E2", e2.env);
  cfg.n = 1000;
  cfg.replications = 100;
  cfg.drpo = drpo_settings();
  cfg.dpo = DpoConfig{0.01, 0.1, 2000, true};
  cfg.ppo_beta = 0.01;

  CompareConfig a = cfg;
  a.methods = {Method::kDrpoGpm, Method::kDpo};
  a.cells = {{"uniform_ref", RewardTrue{}, GTrue{}, RefUniform{}}};
  const RunReport ra = optimization_comparison(a);
  const auto ga = paired_regret_gap(find_method_cell(ra, "drpo_gpm", "uniform_ref"),
                                    find_method_cell(ra, "dpo", "uniform_ref"));
  o.require(ga.mean < 0 && -ga.mean > ga.half_width,
            "(a) drpo - dpo regret = " + fmt(ga.mean) + " +- " + fmt(ga.half_width));

  CompareConfig b = cfg;
  b.methods = {Method::kDrpoBt, Method::kPpo};
  b.cells = {{"perturbed_reward", RewardPerturbed{1.0}, GTrue{}, RefTrue{}}};
  const RunReport rb = optimization_comparison(b);
  const auto gb = paired_regret_gap(find_method_cell(rb, "drpo_bt", "perturbed_reward"),
                                    find_method_cell(rb, "ppo", "perturbed_reward"));
  o.require(gb.mean < 0 && -gb.mean > gb.half_width,
            "(b) drpo_bt - ppo regret = " + fmt(gb.mean) + " +- " + fmt(gb.half_width));
}

// 8. Consistency without a Bradley-Terry truth on E3.
void non_bt(Outcome& o) {
  const auto e3 = make_test_environment("E3", 0);
  CompareConfig cfg("E3", e3.env);
  cfg.methods = {Method::kDrpoGpm, Method::kPpo};
  cfg.n = 5000;
  cfg.replications = 20;
  cfg.drpo = drpo_settings();
  cfg.ppo_beta = 0.01;
  cfg.cells = {{"gpm,true_ref", RewardPopulationBt{}, GGpmTable{}, RefTrue{}}};
  const RunReport r = optimization_comparison(cfg);
  const auto& drpo = find_method_cell(r, "drpo_gpm", "gpm,true_ref");
  const auto& ppo = find_method_cell(r, "ppo", "gpm,true_ref");
  const double floor = *e3.bt_floor;
  o.require(drpo.regret < 0.02, "drpo_gpm n=5000 mean regret = " + fmt(drpo.regret));
  o.require(ppo.regret > floor, "ppo(best-fit BT) regret = " + fmt(ppo.regret) + " > floor " + fmt(floor));
  o.require(floor >= 0.03, "BT-approximation floor = " + fmt(floor) + " >= 0.03");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 9. Manifest replay is byte-identical across thread counts.
void determinism(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "drpo_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string r = root.string();
  {
    std::ofstream(root / "sweep.json") << R"({"env": "E4", "sample_sizes": [100, 400], "replications": 50, "seed": 3})";
    std::ofstream(root / "eff.json") << R"({"env": "E2", "sample_sizes": [200], "replications": 50,
      "variants": [{"g": "true", "ref": "true"}, {"g": "gpm", "ref": "fitted"}], "fit_multiplier": 10})";
    std::ofstream(root / "cmp.json") << R"({"env": "E2", "n": 300, "replications": 4, "seed": 8,
      "drpo": {"beta": 0.01, "epochs": 3}, "dpo": {"beta": 0.01, "steps": 200, "optimizer": "moment"},
      "ppo": {"beta": 0.01}, "cells": [{"name": "u", "reward": "perturbed:1", "gpm": "gpm", "ref": "uniform"}]})";
  }
  const std::vector<std::vector<std::string>> runs{
      {"gen-env", "--generator", "adversarial"},
      {"simulate", "--env", "E2", "--n", "4000"},
      {"evaluate", "--env", "E2", "--data", r + "/run1/data.json", "--g", "gpm", "--ref", "fitted",
       "--dm-mode", "monte_carlo"},
      {"train", "--method", "drpo", "--env", "E2", "--data", r + "/run1/data.json", "--epochs", "2",
       "--dm-mode", "monte_carlo"},
      {"train", "--method", "dpo", "--env", "E2", "--data", r + "/run1/data.json", "--ref", "uniform"},
      {"sweep", "--config", r + "/sweep.json"},
      {"efficiency", "--config", r + "/eff.json"},
      {"compare", "--config", r + "/cmp.json"},
      {"oracle", "--env", "E3", "--policy", "optimal"},
      {"selftest"},
  };
  std::ostringstream sink;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string first = r + "/run" + std::to_string(i);
    std::vector<std::string> args{"--seed", "11", "--threads", "4", "--out-dir", first};
    args.insert(args.end(), runs[i].begin(), runs[i].end());
    if (cli::run(args, sink, sink) != 0) {
      o.require(false, runs[i][0] + " did not run");
      continue;
    }
    for (const char* threads : {"1", "4"}) {
      const std::string again = first + "_replay" + threads;
      if (cli::run({"--threads", threads, "--out-dir", again, "--from-manifest", first + "/manifest.json"}, sink,
                   sink) != 0) {
        o.require(false, runs[i][0] + " replay failed");
        continue;
      }
      for (const auto& entry : fs::directory_iterator(first)) {
        const auto name = entry.path().filename();
        const bool same = slurp(entry.path()) == slurp(fs::path(again) / name);
        if (!same) o.require(false, runs[i][0] + "/" + name.string() + " differs at --threads " + threads);
        ++checked;
      }
    }
  }
  o.require(o.pass, std::to_string(runs.size()) + " subcommands, " + std::to_string(checked) +
                        " files compared after replay at --threads 1 and 4");
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {"exact unbiasedness", exact_unbiasedness},
      {"double robustness", double_robustness},
      {"semiparametric efficiency", efficiency},
      {"gradient correctness", gradients},
      {"k3 KL", k3},
      {"DRPO consistency", consistency},
      {"robustness ordering", robustness},
      {"non-BT consistency", non_bt},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    all = all && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail.str() << "(" << fmt(secs, 3) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}
