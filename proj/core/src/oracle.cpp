#include "drpo/oracle.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"

namespace drpo {

void check_enumeration_budget(const Environment& env, std::size_t limit) {
  const std::size_t terms = env.enumeration_terms();
  if (terms > limit) {
    throw ResourceRefusal("exact enumeration needs " + std::to_string(terms) +
                          " terms, above the limit of " + std::to_string(limit));
  }
}

double win_rate_exact(const Environment& env, const Policy& a, const Policy& b) {
  env.shape().require_same(a.shape(), "win_rate_exact (first policy)");
  env.shape().require_same(b.shape(), "win_rate_exact (second policy)");
  double total = 0.0;
  for (PromptId x = 0; x < env.shape().prompts(); ++x) {
    const auto pa = a.probs(x);
    const auto pb = b.probs(x);
    double prompt_total = 0.0;
    for (ResponseId y = 0; y < pa.size(); ++y) {
      if (pa[y] == 0.0) continue;
      double inner = 0.0;
      for (ResponseId yp = 0; yp < pb.size(); ++yp) {
        if (pb[yp] != 0.0) inner += pb[yp] * env.preference()(x, y, yp);
      }
      prompt_total += pa[y] * inner;
    }
    total += env.prompt_weights()[x] * prompt_total;
  }
  return total;
}

double total_preference_exact(const Environment& env, const Policy& policy) {
  return win_rate_exact(env, policy, env.ref_policy());
}

double expected_reward_exact(const Environment& env, const Policy& policy,
                             const RewardTable& reward) {
  env.shape().require_same(policy.shape(), "expected_reward_exact (policy)");
  env.shape().require_same(reward.shape(), "expected_reward_exact (reward)");
  double total = 0.0;
  for (PromptId x = 0; x < env.shape().prompts(); ++x) {
    const auto p = policy.probs(x);
    double prompt_total = 0.0;
    for (ResponseId y = 0; y < p.size(); ++y) prompt_total += p[y] * reward.values()[x][y];
    total += env.prompt_weights()[x] * prompt_total;
  }
  return total;
}

double kl_exact(const Environment& env, const Policy& policy, const Policy& ref) {
  env.shape().require_same(policy.shape(), "kl_exact (policy)");
  env.shape().require_same(ref.shape(), "kl_exact (reference)");
  double total = 0.0;
  for (PromptId x = 0; x < env.shape().prompts(); ++x) {
    const auto p = policy.probs(x);
    const auto q = ref.probs(x);
    double prompt_total = 0.0;
    for (ResponseId y = 0; y < p.size(); ++y) {
      if (!(q[y] > 0.0)) throw DomainError("kl_exact: reference has a zero probability");
      if (p[y] > 0.0) prompt_total += p[y] * (std::log(p[y]) - std::log(q[y]));
    }
    total += env.prompt_weights()[x] * prompt_total;
  }
  // Rounding can leave a tiny negative value when policy == ref.
  return std::max(total, 0.0);
}

std::vector<double> response_values(const Environment& env, PromptId x) {
  const auto ref = env.ref_policy().probs(x);
  std::vector<double> values(ref.size(), 0.0);
  for (ResponseId y = 0; y < ref.size(); ++y) {
    for (ResponseId yp = 0; yp < ref.size(); ++yp) {
      values[y] += ref[yp] * env.preference()(x, y, yp);
    }
  }
  return values;
}

double psi_variance_exact(const Environment& env, const Policy& policy) {
  env.shape().require_same(policy.shape(), "psi_variance_exact");
  const EstimatorConfig cfg{};  // exact DM, no clipping
  const auto& ref = env.ref_policy();
  const auto& g = env.preference();
  return enumerate_moments(env, [&](const PreferenceTuple& t) {
           return psi_eval(t, policy, ref, g, cfg);
         }).variance;
}

double seb_exact(const Environment& env, const Policy& policy, std::size_t n) {
  if (n == 0) throw UsageError("seb_exact: n must be at least 1");
  return psi_variance_exact(env, policy) / static_cast<double>(n);
}

OptimalPolicy optimal_policy_enumerate(const Environment& env) {
  constexpr double kTieTol = 1e-12;
  PerPrompt<double> probs;
  PerPrompt<ResponseId> ties;
  for (PromptId x = 0; x < env.shape().prompts(); ++x) {
    const auto values = response_values(env, x);
    double best = -std::numeric_limits<double>::infinity();
    for (double v : values) best = std::max(best, v);
    std::vector<ResponseId> tie_set;
    for (ResponseId y = 0; y < values.size(); ++y) {
      if (values[y] >= best - kTieTol) tie_set.push_back(y);
    }
    std::vector<double> row(values.size(), 0.0);
    row[tie_set.front()] = 1.0;
    probs.push_back(std::move(row));
    ties.push_back(std::move(tie_set));
  }
  OptimalPolicy out{Policy::from_probs(probs), std::move(ties), 0.0};
  out.total_preference = total_preference_exact(env, out.policy);
  return out;
}

double regret_exact(const Environment& env, const Policy& policy) {
  return optimal_policy_enumerate(env).total_preference - total_preference_exact(env, policy);
}

OracleReport oracle_report(const Environment& env, const Policy& policy, std::size_t n) {
  OracleReport report;
  report.total_preference = total_preference_exact(env, policy);
  if (const RewardTable* r = env.preference().reward()) {
    report.expected_reward = expected_reward_exact(env, policy, *r);
  }
  report.kl_to_ref = kl_exact(env, policy, env.ref_policy());
  report.psi_variance = psi_variance_exact(env, policy);
  report.n = n;
  report.seb = seb_exact(env, policy, n);
  report.realized_coverage = env.coverage(policy);
  return report;
}

}  // namespace drpo
