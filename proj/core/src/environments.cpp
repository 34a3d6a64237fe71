#include "drpo/environments.hpp"

#include <cmath>
#include <limits>

#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"

namespace drpo {
namespace {

Environment single_prompt_env(std::vector<std::string> names, std::vector<double> ref,
                              PreferenceModel pref) {
  return Environment({"x0"}, {1.0}, {std::move(names)}, Policy::from_probs({std::move(ref)}),
                     std::move(pref));
}

Policy argmax_policy(const PerPrompt<double>& scores) {
  PerPrompt<double> probs;
  for (const auto& row : scores) {
    std::size_t best = 0;
    for (std::size_t y = 1; y < row.size(); ++y)
      if (row[y] > row[best]) best = y;
    std::vector<double> p(row.size(), 0.0);
    p[best] = 1.0;
    probs.push_back(std::move(p));
  }
  return Policy::from_probs(probs);
}

}  // namespace

TestEnvironment make_canonical_env() {
  // sigmoid(ln 4) = 0.8.
  const double half_gap = 0.5 * std::log(4.0);
  auto pref = PreferenceModel::bradley_terry(RewardTable({{half_gap, -half_gap}}, half_gap));
  Environment env = single_prompt_env({"a", "b"}, {0.5, 0.5}, std::move(pref));
  return TestEnvironment{
      "E1",
      env,
      Policy::from_probs({{1.0, 0.0}}),
      Policy::from_probs({{0.8, 0.2}}),
      17,
      "canonical two-response Bradley-Terry environment, g*(a, b) = 0.8",
      std::nullopt,
      std::nullopt,
  };
}

TestEnvironment make_bt_random_env(std::size_t prompts, std::size_t responses,
                                   std::uint64_t seed, double reward_bound) {
  if (prompts == 0 || responses == 0) throw UsageError("bt_random needs prompts and responses");
  Philox4x32 rng(seed, 0xB7);
  std::vector<double> weights(prompts);
  double total = 0.0;
  for (double& w : weights) {
    w = 0.5 + rng.uniform();
    total += w;
  }
  for (double& w : weights) w /= total;
  // Renormalize so the sum is 1 to within rounding of one addition.
  total = 0.0;
  for (std::size_t i = 0; i + 1 < prompts; ++i) total += weights[i];
  weights.back() = 1.0 - total;

  PerPrompt<double> rewards(prompts), ref_logits(prompts), target_logits(prompts);
  for (std::size_t x = 0; x < prompts; ++x) {
    for (std::size_t y = 0; y < responses; ++y) {
      const double r = reward_bound * (2.0 * rng.uniform() - 1.0);
      const double l = rng.normal();
      rewards[x].push_back(r);
      ref_logits[x].push_back(l);
      target_logits[x].push_back(l + r);
    }
  }
  Policy ref = Policy::from_logits(ref_logits);
  auto pref = PreferenceModel::bradley_terry(RewardTable(rewards, reward_bound));
  const VocabShape shape(std::vector<std::size_t>(prompts, responses));
  Environment env(default_prompt_names(prompts), weights, default_vocab_names(shape), ref,
                  std::move(pref));
  return TestEnvironment{
      "E2",
      env,
      Policy::from_logits(target_logits),
      Policy::uniform(shape),
      derive_seed(seed, {0x67}),
      "random Bradley-Terry environment with bounded rewards",
      std::nullopt,
      std::nullopt,
  };
}

TestEnvironment make_intransitive_env() {
  // Responses (rock, paper, scissors); paper beats rock, rock beats
  // scissors, scissors beats paper, each with probability 0.95.
  const double q = 0.95;
  const PerPrompt<double> upper = {
      // (r,p), (r,s), (p,s)
      {1.0 - q, q, 1.0 - q},
      {1.0 - q, q, 1.0 - q},
  };
  const VocabShape shape({3, 3});
  auto pref = PreferenceModel::from_upper_triangle(shape, upper);
  Policy ref = Policy::from_probs({{0.70, 0.05, 0.25}, {0.20, 0.60, 0.20}});
  Environment env({"x0", "x1"}, {0.5, 0.5},
                  {{"rock", "paper", "scissors"}, {"rock", "paper", "scissors"}}, ref,
                  std::move(pref));
  TestEnvironment out{
      "E3",
      env,
      Policy::uniform(shape),
      Policy::uniform(shape),
      29,
      "intransitive rock-paper-scissors preferences (not Bradley-Terry representable)",
      std::nullopt,
      std::nullopt,
  };
  out.bt_floor = bt_approximation_floor(out.env);
  return out;
}

TestEnvironment make_adversarial_env(std::uint64_t seed) {
  const PerPrompt<double> rewards = {{2.0, 1.0, 0.0, -1.0}, {-1.0, 0.5, 2.0, 0.0}};
  auto pref = PreferenceModel::bradley_terry(RewardTable(rewards, 2.0));
  Policy ref = Policy::from_probs({{0.10, 0.20, 0.30, 0.40}, {0.40, 0.25, 0.10, 0.25}});
  Policy target = Policy::from_probs({{0.55, 0.30, 0.10, 0.05}, {0.05, 0.25, 0.60, 0.10}});
  const PerPrompt<double> skewed = {{0.50, 0.30, 0.12, 0.08}, {0.08, 0.25, 0.55, 0.12}};
  const VocabShape shape({4, 4});
  Environment env({"x0", "x1"}, {0.5, 0.5}, default_vocab_names(shape), ref, std::move(pref));

  // wrong_ref mixes the true reference with `skewed`. Bias grows with the
  // mixing weight while Var psi shrinks, so take the smallest weight that
  // clears 0.055: the both-wrong MSE then sits well above noise.
  auto mixed = [&](double lam) {
    PerPrompt<double> p = skewed;
    for (PromptId x = 0; x < p.size(); ++x)
      for (ResponseId y = 0; y < p[x].size(); ++y)
        p[x][y] = (1.0 - lam) * ref.prob(x, y) + lam * skewed[x][y];
    return Policy::from_probs(p);
  };
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    const std::uint64_t g_seed = derive_seed(seed, {0xAD, attempt});
    const PreferenceModel wrong_g = make_misspecified_g(env, g_seed);
    for (int step = 1; step <= 100; ++step) {
      const Policy wrong_ref = mixed(step / 100.0);
      const double bias = enumerated_dr_bias(env, target, wrong_ref, wrong_g);
      if (std::abs(bias) < 0.055) continue;
      const double g_ok = enumerated_dr_bias(env, target, wrong_ref, env.preference());
      const double ref_ok = enumerated_dr_bias(env, target, env.ref_policy(), wrong_g);
      if (std::abs(g_ok) > 1e-10 || std::abs(ref_ok) > 1e-10)
        throw DomainError("adversarial environment: a single-correct pair is biased");
      return TestEnvironment{
          "E4",
          env,
          target,
          wrong_ref,
          g_seed,
          "adversarial misspecification environment (both-wrong DR bias >= 0.05)",
          bias,
          std::nullopt,
      };
    }
  }
  throw DomainError("adversarial environment: no misspecifier seed reached bias 0.05");
}

std::vector<TestEnvironment> make_test_environments(std::uint64_t seed) {
  return {make_canonical_env(), make_bt_random_env(5, 8, derive_seed(seed, {2})),
          make_intransitive_env(), make_adversarial_env(derive_seed(seed, {4}))};
}

TestEnvironment make_test_environment(const std::string& name, std::uint64_t seed) {
  if (name == "E1" || name == "canonical") return make_canonical_env();
  if (name == "E2" || name == "bt_random") return make_bt_random_env(5, 8, derive_seed(seed, {2}));
  if (name == "E3" || name == "intransitive") return make_intransitive_env();
  if (name == "E4" || name == "adversarial") return make_adversarial_env(derive_seed(seed, {4}));
  throw UsageError("unknown test environment '" + name + "'");
}

std::optional<IntransitiveCycle> find_intransitive_cycle(const PreferenceModel& model) {
  const auto& shape = model.shape();
  for (PromptId x = 0; x < shape.prompts(); ++x) {
    const std::size_t k = shape.sizes()[x];
    for (ResponseId a = 0; a < k; ++a)
      for (ResponseId b = 0; b < k; ++b)
        for (ResponseId c = 0; c < k; ++c) {
          if (a == b || b == c || a == c) continue;
          if (model(x, a, b) > 0.5 && model(x, b, c) > 0.5 && model(x, c, a) > 0.5) {
            return IntransitiveCycle{x, {a, b, c}};
          }
        }
  }
  return std::nullopt;
}

double enumerated_dr_bias(const Environment& env, const Policy& target, const Policy& ref_hat,
                          const PreferenceModel& g_hat) {
  const EstimatorConfig cfg{};
  const double mean = enumerate_expectation(env, [&](const PreferenceTuple& t) {
    return psi_eval(t, target, ref_hat, g_hat, cfg);
  });
  return mean - total_preference_exact(env, target);
}

double bt_approximation_floor(const Environment& env) {
  const RewardTable reward = fit_reward_bt_population(env);
  return regret_exact(env, argmax_policy(reward.values()));
}

}  // namespace drpo
