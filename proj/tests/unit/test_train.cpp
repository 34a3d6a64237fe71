#include <doctest.h>

#include <cmath>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"
#include "drpo/train.hpp"

using namespace drpo;

namespace {

Policy random_policy(const VocabShape& s, Philox4x32& rng, double scale = 1.0) {
  PerPrompt<double> l(s.prompts());
  for (std::size_t x = 0; x < s.prompts(); ++x)
    for (std::size_t y = 0; y < s.responses(x); ++y) l[x].push_back(scale * rng.normal());
  return Policy::from_logits(l);
}

Policy shifted(const Policy& p, PromptId x, ResponseId y, double h) {
  auto l = p.all_logits();
  l[x][y] += h;
  return Policy::from_logits(l);
}

// max |analytic - central difference| relative to the largest gradient entry
double fd_error(const FrozenStep& step, const Policy& live, const Policy& ref_hat, double h) {
  const auto lg = drpo_surrogate_loss_and_grad(step, live, ref_hat);
  CHECK(lg.loss == doctest::Approx(drpo_surrogate_loss(step, live, ref_hat)).epsilon(1e-13));
  double worst = 0, scale = 1e-8;
  for (std::size_t x = 0; x < live.shape().prompts(); ++x)
    for (std::size_t y = 0; y < live.shape().responses(x); ++y) {
      const double num = (drpo_surrogate_loss(step, shifted(live, x, y, h), ref_hat) -
                          drpo_surrogate_loss(step, shifted(live, x, y, -h), ref_hat)) /
                         (2 * h);
      worst = std::max(worst, std::abs(num - lg.grad[x][y]));
      scale = std::max(scale, std::abs(lg.grad[x][y]));
    }
  return worst / scale;
}

}  // namespace

TEST_CASE("k3 estimator") {
  const auto e2 = make_bt_random_env(5, 8, 2);
  const auto& ref = e2.env.ref_policy();
  const std::vector<ResponseId> ys{0, 3, 3, 7};
  CHECK(kl_k3(ref, ref, 2, ys) == 0.0);
  // r = ref / pi = 2 at the single draw
  const auto pi = Policy::from_probs({{0.25, 0.75}});
  const auto rh = Policy::from_probs({{0.5, 0.5}});
  const std::vector<ResponseId> one{0};
  CHECK(kl_k3(pi, rh, 0, one) == doctest::Approx(1 - std::log(2.0)).epsilon(1e-15));

  Philox4x32 rng(3, 0);
  for (int i = 0; i < 10; ++i) {
    const auto p = random_policy(e2.env.shape(), rng, 2.0);
    const auto q = random_policy(e2.env.shape(), rng, 2.0);
    for (PromptId x = 0; x < 5; ++x) {
      double expect = 0, kl = 0;
      for (ResponseId y = 0; y < 8; ++y) {
        const std::vector<ResponseId> s{y};
        const double v = kl_k3(p, q, x, s);
        CHECK(v >= 0.0);
        expect += p.prob(x, y) * v;
        kl += p.prob(x, y) * std::log(p.prob(x, y) / q.prob(x, y));
      }
      CHECK(std::abs(expect - kl) < 1e-10);
    }
  }
}

TEST_CASE("frozen surrogate") {
  const auto e1 = make_canonical_env();
  const auto& ref = e1.env.ref_policy();
  const auto sure = PreferenceModel::misspecified_constant(e1.env.shape(), 1.0);
  const auto data = augment_swapped(PreferenceDataset({{0, 0, 1, 1}}, 0, false));
  TrainConfig cfg;
  const std::vector<std::size_t> batch{0};
  const auto step = freeze_drpo_step(data, batch, ref, ref, sure, cfg, 1);
  // z equals g_hat, so the residual vanishes
  CHECK(step.elements[0].term2 == 0.0);

  SUBCASE("no KL contribution at the reference") {
    const auto g = e1.env.preference();
    const std::vector<std::size_t> both{0, 1};
    for (auto mode : {TrainDmMode::kExact, TrainDmMode::kMonteCarlo}) {
      TrainConfig a = cfg, b = cfg;
      a.dm_mode = b.dm_mode = mode;
      b.beta = 0.0;
      const double la = drpo_surrogate_loss(freeze_drpo_step(data, both, ref, ref, g, a, 3), ref, ref);
      const double lb = drpo_surrogate_loss(freeze_drpo_step(data, both, ref, ref, g, b, 3), ref, ref);
      CHECK(la == doctest::Approx(lb).epsilon(1e-15));
    }
  }
}

TEST_CASE("surrogate gradient against finite differences") {
  Philox4x32 rng(21, 0);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> sizes;
    const std::size_t prompts = 1 + rng() % 3;
    for (std::size_t x = 0; x < prompts; ++x) sizes.push_back(2 + rng() % 4);
    const VocabShape s(sizes);
    const auto pi = random_policy(s, rng);
    const auto ref_hat = random_policy(s, rng);
    PerPrompt<double> up(prompts);
    for (std::size_t x = 0; x < prompts; ++x)
      for (std::size_t k = 0; k < sizes[x] * (sizes[x] - 1) / 2; ++k) up[x].push_back(rng.uniform());
    const auto g = PreferenceModel::from_upper_triangle(s, up);
    std::vector<PreferenceTuple> t;
    for (int i = 0; i < 12; ++i) {
      const PromptId x = rng() % prompts;
      t.push_back({x, rng() % sizes[x], rng() % sizes[x], static_cast<int>(rng() % 2)});
    }
    const auto data = augment_swapped(PreferenceDataset(t, 0, false));
    std::vector<std::size_t> batch(data.size());
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = i;
    TrainConfig cfg;
    cfg.clip_lo = 0.5;
    cfg.clip_hi = 1.5;
    cfg.beta = 0.3;
    cfg.dm_mode = trial % 2 ? TrainDmMode::kMonteCarlo : TrainDmMode::kExact;
    const auto step = freeze_drpo_step(data, batch, pi, ref_hat, g, cfg, trial);
    // evaluate away from the freeze point too
    worst = std::max(worst, fd_error(step, pi, ref_hat, 1e-6));
    worst = std::max(worst, fd_error(step, random_policy(s, rng), ref_hat, 1e-6));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("drpo training") {
  const auto e1 = make_canonical_env();
  const auto d = sample_dataset(e1.env, 2000, 1);
  TrainConfig cfg;
  cfg.lr = 0.0;
  const auto still = drpo_train(d, e1.env.shape(), e1.env.ref_policy(), e1.env.preference(), cfg, e1.env.ref_policy());
  CHECK(still.policy.all_logits() == e1.env.ref_policy().all_logits());

  TrainConfig def;
  def.epochs = 3;
  const auto a = drpo_train(d, e1.env.shape(), e1.env.ref_policy(), e1.env.preference(), def, e1.env.ref_policy(), &e1.env);
  const auto b = drpo_train(d, e1.env.shape(), e1.env.ref_policy(), e1.env.preference(), def, e1.env.ref_policy());
  CHECK(a.policy.all_logits() == b.policy.all_logits());
  CHECK(total_preference_exact(e1.env, a.policy) >= 0.64);
  CHECK(a.trace.augmented_input);
  REQUIRE_FALSE(a.trace.records.empty());
  CHECK(a.trace.records.front().oracle_pref.has_value());
  CHECK_FALSE(b.trace.records.front().oracle_pref.has_value());

  TrainConfig bad;
  bad.clip_lo = 1.2;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("dpo") {
  SUBCASE("balanced labels are stationary at the reference") {
    const auto e2 = make_bt_random_env(2, 4, 1);
    std::vector<PreferenceTuple> t;
    for (ResponseId a = 0; a < 4; ++a)
      for (ResponseId b = 0; b < 4; ++b) {
        t.push_back({1, a, b, 1});
        t.push_back({1, a, b, 0});
      }
    const PreferenceDataset d(t, 0, false);
    CHECK(dpo_loss_and_grad(d, e2.env.ref_policy(), e2.env.ref_policy(), 0.1).grad_norm() < 1e-10);
  }
  SUBCASE("implied reward recovers the truth") {
    const auto e2 = make_bt_random_env(1, 4, 9);
    const auto d = sample_dataset(e2.env, 100000, 2);
    const auto& ref = e2.env.ref_policy();
    const double beta = 0.5;
    const auto out = dpo_train(d, ref, DpoConfig{beta, 0.05, 3000, true}, ref);
    const auto& r = e2.env.preference().reward()->values()[0];
    for (ResponseId y = 1; y < 4; ++y) {
      const double implied = beta * (std::log(out.policy.prob(0, y) / ref.prob(0, y)) -
                                     std::log(out.policy.prob(0, 0) / ref.prob(0, 0)));
      CHECK(std::abs(implied - (r[y] - r[0])) < 0.1);
    }
  }
  CHECK_THROWS_AS(DpoConfig({0.0, 1.0, 10, false}).validate(), UsageError);
}

TEST_CASE("a wrong reference hurts dpo more than drpo") {
  const auto e2 = make_bt_random_env(5, 8, 0);
  const auto d = sample_dataset(e2.env, 1000, 4);
  const auto uni = Policy::uniform(e2.env.shape());
  const auto dpo = dpo_train(d, uni, DpoConfig{0.01, 0.1, 2000, true}, uni);
  TrainConfig cfg;
  cfg.beta = 0.01;
  cfg.epochs = 20;
  const auto drpo = drpo_train(d, e2.env.shape(), uni, e2.env.preference(), cfg, uni);
  CHECK(total_preference_exact(e2.env, drpo.policy) > total_preference_exact(e2.env, dpo.policy));
}

TEST_CASE("ppo closed form") {
  const auto e1 = make_canonical_env();
  const VocabShape& s = e1.env.shape();
  const auto& ref = e1.env.ref_policy();
  const auto zero = ppo_closed_form(s, RewardTable({{0.0, 0.0}}, 0.0), Policy::from_probs({{0.3, 0.7}}), 0.1);
  CHECK(zero.prob(0, 0) == doctest::Approx(0.3));
  const auto tilt = ppo_closed_form(s, RewardTable({{std::log(4.0), 0.0}}, 2.0), ref, 1.0);
  CHECK(tilt.prob(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  const auto cold = ppo_closed_form(s, RewardTable({{0.1, 0.2}}, 1.0), ref, 1e-4);
  CHECK(cold.prob(0, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ppo_closed_form(s, RewardTable({{0.1, 0.2}}, 1.0), ref, 0.0), UsageError);
}
