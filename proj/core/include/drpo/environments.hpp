#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drpo/core_model.hpp"

namespace drpo {

// An environment plus the fixtures experiments evaluate on it.
struct TestEnvironment {
  std::string name;
  Environment env;
  Policy target;          // policy whose total preference is estimated
  Policy wrong_ref;       // deliberately misspecified reference
  std::uint64_t wrong_g_seed = 0;  // seed of the uniform-random g misspecifier
  std::string description;
  // Enumerated E[psi] - p* with both nuisances wrong (adversarial env).
  std::optional<double> both_wrong_bias;
  // Regret of the argmax of the population best-fit Bradley-Terry reward.
  std::optional<double> bt_floor;
};

// E1: one prompt, responses {a, b}, uniform reference, g*(a, b) = 0.8 (BT).
TestEnvironment make_canonical_env();
// Bradley-Terry environment with rewards U[-bound, bound] and N(0, 1) reference
// logits. E2 is make_bt_random_env(5, 8, seed).
TestEnvironment make_bt_random_env(std::size_t prompts, std::size_t responses,
                                   std::uint64_t seed, double reward_bound = 2.0);
// E3: rock-paper-scissors preferences with skewed references; no reward
// table reproduces it.
TestEnvironment make_intransitive_env();
// E4: the both-wrong nuisance pair carries enumerated bias >= 0.05 while
// each single-correct pair is unbiased. Throws if construction cannot
// certify this.
TestEnvironment make_adversarial_env(std::uint64_t seed);

// {E1, E2, E3, E4}.
std::vector<TestEnvironment> make_test_environments(std::uint64_t seed);
// Looks up "E1".."E4" (or canonical / bt_random / intransitive / adversarial).
TestEnvironment make_test_environment(const std::string& name, std::uint64_t seed);

// A cycle a > b > c > a (each g > 1/2) at some prompt, which no
// Bradley-Terry reward can produce.
struct IntransitiveCycle {
  PromptId prompt = 0;
  std::array<ResponseId, 3> cycle{};
};
std::optional<IntransitiveCycle> find_intransitive_cycle(const PreferenceModel& model);

// Enumerated E[psi(g_hat, ref_hat)] - p*(target) with exact direct method
// and no clipping.
double enumerated_dr_bias(const Environment& env, const Policy& target, const Policy& ref_hat,
                          const PreferenceModel& g_hat);

// Regret of the deterministic argmax of the population best-fit
// Bradley-Terry reward.
double bt_approximation_floor(const Environment& env);

}  // namespace drpo
