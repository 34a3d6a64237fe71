#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "drpo/core_model.hpp"

namespace drpo {

// Refuse exact enumeration beyond this many (x, y1, y2, z) outcomes.
inline constexpr std::size_t kEnumerationLimit = 100'000'000;

// Throws ResourceRefusal when env.enumeration_terms() exceeds `limit`.
void check_enumeration_budget(const Environment& env, std::size_t limit = kEnumerationLimit);

// Probability-weighted sum of fn(tuple) over every outcome of the
// data-generating process, i.e. the exact expectation under
// f(x) ref(y1|x) ref(y2|x) Bernoulli(g*(x, y1, y2)). Prompts, then y1, y2,
// then z = 1 before z = 0, are visited in index order.
template <typename Fn>
double enumerate_expectation(const Environment& env, Fn&& fn) {
  double total = 0.0;
  const auto& shape = env.shape();
  for (PromptId x = 0; x < shape.prompts(); ++x) {
    const double fx = env.prompt_weights()[x];
    if (fx == 0.0) continue;
    const auto ref = env.ref_policy().probs(x);
    double prompt_total = 0.0;
    for (ResponseId y1 = 0; y1 < ref.size(); ++y1) {
      for (ResponseId y2 = 0; y2 < ref.size(); ++y2) {
        const double pair = ref[y1] * ref[y2];
        const double g = env.preference()(x, y1, y2);
        double term = 0.0;
        if (g > 0.0) term += g * fn(PreferenceTuple{x, y1, y2, 1});
        if (g < 1.0) term += (1.0 - g) * fn(PreferenceTuple{x, y1, y2, 0});
        prompt_total += pair * term;
      }
    }
    total += fx * prompt_total;
  }
  return total;
}

// Exact mean and variance of fn over the data-generating process.
struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

template <typename Fn>
Moments enumerate_moments(const Environment& env, Fn&& fn) {
  Moments m;
  m.mean = enumerate_expectation(env, fn);
  m.variance = enumerate_expectation(env, [&](const PreferenceTuple& t) {
    const double d = fn(t) - m.mean;
    return d * d;
  });
  return m;
}

// p*(pi) = sum_x f(x) sum_{y, y'} pi(y|x) ref(y'|x) g*(x, y, y').
double total_preference_exact(const Environment& env, const Policy& policy);

// J(pi) = sum_x f(x) sum_y pi(y|x) r(y, x).
double expected_reward_exact(const Environment& env, const Policy& policy,
                             const RewardTable& reward);

// Prompt-weighted KL(pi || ref).
double kl_exact(const Environment& env, const Policy& policy, const Policy& ref);

// Probability that a response from `a` beats one from `b` under g*.
double win_rate_exact(const Environment& env, const Policy& a, const Policy& b);

// v(x, y) = sum_{y'} ref(y'|x) g*(x, y, y'): the payoff of answering y.
std::vector<double> response_values(const Environment& env, PromptId x);

// Var(psi) under the true nuisances, enumerated exactly.
double psi_variance_exact(const Environment& env, const Policy& policy);

// Semiparametric efficiency bound Var(psi) / n.
double seb_exact(const Environment& env, const Policy& policy, std::size_t n);

struct OptimalPolicy {
  Policy policy;
  // Per prompt, every response attaining the maximal value (within 1e-12).
  PerPrompt<ResponseId> ties;
  double total_preference = 0.0;
};

// Deterministic maximizer of p*: per prompt, mass 1 on the lowest-index
// argmax of response_values.
OptimalPolicy optimal_policy_enumerate(const Environment& env);

// sup over the tabular class of p* minus p*(policy).
double regret_exact(const Environment& env, const Policy& policy);

struct OracleReport {
  double total_preference = 0.0;
  std::optional<double> expected_reward;  // Bradley-Terry environments
  double kl_to_ref = 0.0;
  double psi_variance = 0.0;
  double seb = 0.0;
  std::size_t n = 1;
  double realized_coverage = 0.0;
};

OracleReport oracle_report(const Environment& env, const Policy& policy, std::size_t n);

}  // namespace drpo
