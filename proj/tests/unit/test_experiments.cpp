#include <doctest.h>

#include <cmath>
#include <sstream>

#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/experiments.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"

using namespace drpo;

TEST_CASE("test environments") {
  const auto e1 = make_canonical_env();
  CHECK(e1.env.shape() == VocabShape({2}));
  CHECK(e1.env.preference()(0, 0, 1) == doctest::Approx(0.8));
  CHECK(total_preference_exact(e1.env, e1.target) == doctest::Approx(0.65));

  const auto e3 = make_intransitive_env();
  const auto cycle = find_intransitive_cycle(e3.env.preference());
  REQUIRE(cycle);
  const auto& c = cycle->cycle;
  const auto& g = e3.env.preference();
  CHECK(g(cycle->prompt, c[0], c[1]) > 0.5);
  CHECK(g(cycle->prompt, c[1], c[2]) > 0.5);
  CHECK(g(cycle->prompt, c[2], c[0]) > 0.5);
  CHECK_FALSE(find_intransitive_cycle(make_bt_random_env(5, 8, 1).env.preference()));
  REQUIRE(e3.bt_floor);
  CHECK(*e3.bt_floor == doctest::Approx(bt_approximation_floor(e3.env)));

  const auto e4 = make_adversarial_env(0);
  REQUIRE(e4.both_wrong_bias);
  CHECK(std::abs(*e4.both_wrong_bias) >= 0.05);

  CHECK(make_test_environment("E2", 4).env.prompt_weights() == make_bt_random_env(5, 8, derive_seed(4, {2})).env.prompt_weights());
  CHECK_THROWS_AS(make_test_environment("E9", 0), UsageError);
}

TEST_CASE("mse sweep") {
  const auto e4 = make_adversarial_env(0);
  SweepConfig cfg("E4", e4.env, e4.target);
  cfg.sample_sizes = {50, 200};
  cfg.replications = 60;
  cfg.variants = four_way_variants(e4);
  cfg.threads = 1;
  const auto a = mse_sweep(cfg);
  cfg.threads = 3;
  const auto b = mse_sweep(cfg);
  REQUIRE(a.cells.size() == 8);
  std::ostringstream ca, cb;
  write_results_csv(ca, a);
  write_results_csv(cb, b);
  CHECK(ca.str() == cb.str());
  CHECK(ca.str().rfind("experiment,variant,n,replications,mean,bias,variance,mse,seb,mse_over_seb,ci_half_width\n", 0) == 0);
  for (const auto& c : a.cells) {
    CHECK(c.mse == doctest::Approx(c.bias * c.bias + c.variance));
    CHECK(c.truth == doctest::Approx(total_preference_exact(e4.env, e4.target)));
    CHECK(c.estimates.size() == 60);
  }
  // the both-wrong cell keeps its bias
  const auto& both = a.cells.back();
  CHECK(both.variant == "wrong_g,wrong_ref");
  CHECK(std::abs(both.bias - *e4.both_wrong_bias) < 4 * std::sqrt(both.variance / 60) + 0.01);

  SUBCASE("half the replications, twice the variance of the mean") {
    SweepConfig small = cfg;
    small.replications = 1000;
    small.sample_sizes = {100};
    small.variants.resize(1);
    const auto full = mse_sweep(small);
    small.replications = 500;
    const auto half = mse_sweep(small);
    const double ratio = std::pow(half.cells[0].ci_half_width / full.cells[0].ci_half_width, 2);
    CHECK(ratio == doctest::Approx(2.0).epsilon(0.25));
  }
  SUBCASE("efficiency study needs the both-true variant") {
    SweepConfig bad = cfg;
    bad.variants.erase(bad.variants.begin());
    CHECK_THROWS_AS(efficiency_study(bad), UsageError);
  }
}

TEST_CASE("comparison") {
  const auto e2 = make_bt_random_env(2, 4, 3);
  CompareConfig cfg("small", e2.env);
  cfg.n = 200;
  cfg.replications = 3;
  cfg.drpo.epochs = 2;
  cfg.dpo.steps = 100;
  cfg.cells.push_back({"all_true", RewardTrue{}, GTrue{}, RefTrue{}});
  cfg.threads = 1;
  const auto a = optimization_comparison(cfg);
  cfg.threads = 2;
  const auto b = optimization_comparison(cfg);
  std::ostringstream ca, cb;
  write_comparison_csv(ca, a);
  write_comparison_csv(cb, b);
  CHECK(ca.str() == cb.str());
  CHECK(a.methods.size() == 4);
  const auto& ppo = find_method_cell(a, "ppo", "all_true");
  CHECK(ppo.regrets.size() == 3);
  for (double r : ppo.regrets) CHECK(r >= -1e-12);
  CHECK_THROWS_AS(find_method_cell(a, "ppo", "nope"), UsageError);

  MethodCell x, y;
  x.regrets = {0.1, 0.2, 0.3};
  y.regrets = {0.0, 0.1, 0.2};
  const auto gap = paired_regret_gap(x, y);
  CHECK(gap.mean == doctest::Approx(0.1));
  CHECK(gap.half_width == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("config documents") {
  const auto sweep = sweep_config_from_json(Json::parse(R"({"env": "E4", "sample_sizes": [10], "replications": 3,
      "variants": [{"name": "dr", "g": "uniform", "ref": "wrong", "clip_max": 40}], "seed": 5})"));
  CHECK(sweep.variants.size() == 1);
  CHECK(sweep.variants[0].clip_max == 40.0);
  CHECK(sweep.base_seed == 5);
  CHECK(sweep_config_from_json(Json::parse(R"({"env": "E1"})")).variants.size() == 4);
  CHECK_THROWS_AS(sweep_config_from_json(Json::parse(R"({"sample_sizes": [10]})")), UsageError);
  CHECK_THROWS_AS(sweep_config_from_json(Json::parse(R"({"env": "E1", "replications": "many"})")), UsageError);
  CHECK_THROWS_AS(sweep_config_from_json(Json::parse(R"({"env": "E1", "variants": [{"g": "psychic"}]})")), UsageError);

  const auto cmp = compare_config_from_json(Json::parse(R"({"env": "E2", "methods": ["dpo", "ppo"],
      "cells": [{"reward": "perturbed:0.5", "gpm": "true", "ref": "uniform"}], "dpo": {"optimizer": "moment"}})"));
  CHECK(cmp.methods.size() == 2);
  CHECK(cmp.dpo.moment_averaging);
  CHECK(std::get<RewardPerturbed>(cmp.cells[0].reward).sd == 0.5);
  CHECK_THROWS_AS(compare_config_from_json(Json::parse(R"({"env": "E2"})")), UsageError);
  CHECK_THROWS_AS(parse_method("sft"), UsageError);
  CHECK(to_string(parse_method("drpo_gpm")) == "drpo_gpm");
  CHECK(describe(parse_reward_source("population_bt")) == "population_bt");
}
