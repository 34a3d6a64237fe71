#include <doctest.h>

#include <cmath>

#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"
#include "naive.hpp"

using namespace drpo;

namespace {

Policy random_policy(const VocabShape& s, std::uint64_t seed) {
  Philox4x32 rng(seed, 0);
  PerPrompt<double> l(s.prompts());
  for (std::size_t x = 0; x < s.prompts(); ++x)
    for (std::size_t y = 0; y < s.responses(x); ++y) l[x].push_back(1.5 * rng.normal());
  return Policy::from_logits(l);
}

}  // namespace

TEST_CASE("total preference") {
  for (const auto& t : make_test_environments(11)) {
    CAPTURE(t.name);
    CHECK(total_preference_exact(t.env, t.env.ref_policy()) == doctest::Approx(0.5).epsilon(1e-13));
    const auto pi = random_policy(t.env.shape(), 4);
    CHECK(std::abs(total_preference_exact(t.env, pi) - naive::p_star(naive::from(t.env), naive::probs(pi))) < 1e-13);
  }
  const auto e1 = make_canonical_env();
  // 0.5 * 0.5 + 0.5 * 0.8
  CHECK(total_preference_exact(e1.env, Policy::from_probs({{1.0, 0.0}})) == doctest::Approx(0.65).epsilon(1e-15));

  const VocabShape s({3, 2});
  const Environment c(default_prompt_names(2), {0.3, 0.7}, default_vocab_names(s), Policy::uniform(s),
                      PreferenceModel::misspecified_constant(s, 0.9));
  CHECK(total_preference_exact(c, random_policy(s, 2)) == doctest::Approx(0.9));
}

TEST_CASE("expected reward") {
  const auto e2 = make_bt_random_env(3, 4, 8);
  const VocabShape& s = e2.env.shape();
  const RewardTable ones(PerPrompt<double>(3, std::vector<double>(4, 1.0)), 1.0);
  CHECK(expected_reward_exact(e2.env, Policy::uniform(s), ones) == doctest::Approx(1.0));
  const RewardTable& r = *e2.env.preference().reward();
  const auto best = optimal_policy_enumerate(e2.env);
  double want = 0;
  for (std::size_t x = 0; x < 3; ++x) {
    double m = -1e9;
    for (double v : r.values()[x]) m = std::max(m, v);
    want += e2.env.prompt_weights()[x] * m;
  }
  CHECK(expected_reward_exact(e2.env, best.policy, r) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("kl divergence") {
  const auto e2 = make_bt_random_env(5, 8, 2);
  const auto& ref = e2.env.ref_policy();
  CHECK(kl_exact(e2.env, ref, ref) == 0.0);
  const auto e1 = make_canonical_env();
  const double d = 1e-9;
  CHECK(kl_exact(e1.env, Policy::from_probs({{1 - d, d}}), e1.env.ref_policy()) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-7));
  CHECK(kl_exact(e1.env, Policy::from_probs({{1, 0}}), e1.env.ref_policy()) == doctest::Approx(std::log(2.0)));
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto p = random_policy(e2.env.shape(), i);
    const auto q = random_policy(e2.env.shape(), 100 + i);
    const double k = kl_exact(e2.env, p, q);
    CHECK(k >= 0.0);
    CHECK(std::abs(k - naive::kl(e2.env.prompt_weights(), naive::probs(p), naive::probs(q))) < 1e-12);
  }
}

TEST_CASE("efficiency bound") {
  const VocabShape s({3});
  const Environment flat(default_prompt_names(1), {1.0}, default_vocab_names(s), Policy::uniform(s),
                         PreferenceModel::constant(s, 0.5));
  CHECK(psi_variance_exact(flat, flat.ref_policy()) == doctest::Approx(0.0));
  CHECK(seb_exact(flat, flat.ref_policy(), 10) == doctest::Approx(0.0));

  // canonical env, pi = (1, 0): all 8 (y1, y2, z) outcomes by hand
  const auto e1 = make_canonical_env();
  const auto pi = Policy::from_probs({{1.0, 0.0}});
  const auto ne = naive::from(e1.env);
  const auto [mean, var] = naive::psi_moments(ne, naive::probs(pi), ne.ref, ne.g);
  CHECK(mean == doctest::Approx(0.65).epsilon(1e-14));
  CHECK(psi_variance_exact(e1.env, pi) == doctest::Approx(var).epsilon(1e-13));
  CHECK(psi_variance_exact(e1.env, pi) == doctest::Approx(0.09125).epsilon(1e-13));
  CHECK(seb_exact(e1.env, pi, 100) == doctest::Approx(seb_exact(e1.env, pi, 1) / 100).epsilon(1e-14));
}

TEST_CASE("optimal policy") {
  const auto e2 = make_bt_random_env(4, 6, 5);
  const auto best = optimal_policy_enumerate(e2.env);
  const auto& r = e2.env.preference().reward()->values();
  for (std::size_t x = 0; x < 4; ++x) {
    const auto it = std::max_element(r[x].begin(), r[x].end());
    CHECK(best.policy.prob(x, static_cast<std::size_t>(it - r[x].begin())) == 1.0);
  }
  const auto e1 = make_canonical_env();
  const auto b1 = optimal_policy_enumerate(e1.env);
  CHECK(b1.policy.prob(0, 0) == 1.0);
  CHECK(b1.total_preference == doctest::Approx(0.65));
  CHECK(regret_exact(e1.env, Policy::from_probs({{0, 1}})) == doctest::Approx(0.3));

  const VocabShape s({4});
  const Environment flat(default_prompt_names(1), {1.0}, default_vocab_names(s), Policy::uniform(s),
                         PreferenceModel::constant(s, 0.5));
  const auto tie = optimal_policy_enumerate(flat);
  CHECK(tie.policy.prob(0, 0) == 1.0);
  CHECK(tie.ties[0] == std::vector<ResponseId>{0, 1, 2, 3});
}

TEST_CASE("win rate") {
  const auto e1 = make_canonical_env();
  const auto a = Policy::from_probs({{1, 0}});
  const auto b = Policy::from_probs({{0, 1}});
  CHECK(win_rate_exact(e1.env, a, a) == doctest::Approx(0.5));
  CHECK(win_rate_exact(e1.env, a, b) == doctest::Approx(0.8));
  CHECK(win_rate_exact(e1.env, a, e1.env.ref_policy()) == doctest::Approx(total_preference_exact(e1.env, a)));
  const auto e3 = make_intransitive_env();
  const auto p = random_policy(e3.env.shape(), 1), q = random_policy(e3.env.shape(), 2);
  CHECK(win_rate_exact(e3.env, p, q) + win_rate_exact(e3.env, q, p) == doctest::Approx(1.0));
}

TEST_CASE("enumeration budget") {
  const auto e2 = make_bt_random_env(5, 8, 2);
  CHECK(e2.env.enumeration_terms() == 5 * 8 * 8 * 2);
  CHECK_NOTHROW(check_enumeration_budget(e2.env));
  CHECK_THROWS_AS(check_enumeration_budget(e2.env, 100), ResourceRefusal);
}

TEST_CASE("oracle report") {
  const auto e2 = make_bt_random_env(5, 8, 2);
  const auto r = oracle_report(e2.env, e2.target, 250);
  CHECK(r.total_preference == doctest::Approx(total_preference_exact(e2.env, e2.target)));
  REQUIRE(r.expected_reward);
  CHECK(r.seb == doctest::Approx(r.psi_variance / 250));
  CHECK(r.realized_coverage == doctest::Approx(e2.env.coverage(e2.target)));
  CHECK_FALSE(oracle_report(make_intransitive_env().env, Policy::uniform(VocabShape({3, 3})), 1).expected_reward);
}
