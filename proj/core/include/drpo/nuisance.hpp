#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "drpo/core_model.hpp"
#include "drpo/estimators.hpp"

namespace drpo {

// Sources for the preference nuisance g_hat.
struct GTrue {};
struct GBtMle {};
struct GGpmTable {};
struct GUniformRandom {
  std::uint64_t seed = 0;
};
struct GConstant {
  double c = 0.5;
};
using GSource = std::variant<GTrue, GBtMle, GGpmTable, GUniformRandom, GConstant>;

// Sources for the reference nuisance ref_hat.
struct RefTrue {};
struct RefFitted {};
struct RefWrong {
  std::string id;  // path or label the policy came from
  Policy policy;
};
struct RefUniform {};
using RefSource = std::variant<RefTrue, RefFitted, RefWrong, RefUniform>;

struct NuisanceSpec {
  GSource g = GTrue{};
  RefSource ref = RefTrue{};
};

// Textual forms: true | bt_mle | gpm | uniform:SEED | const:C.
std::string describe(const GSource& g);
GSource parse_g_source(const std::string& text);
// Textual forms: true | fitted | uniform | wrong:ID. `wrong:` needs the
// policy supplied separately; parse returns it with an empty placeholder.
std::string describe(const RefSource& ref);
bool g_needs_fit(const GSource& g) noexcept;
bool ref_needs_fit(const RefSource& ref) noexcept;

struct FitMeta {
  std::uint64_t data_seed = 0;
  std::size_t steps = 0;
  double initial_grad_norm = 0.0;
  double final_grad_norm = 0.0;
  bool converged = false;
};

struct BtFit {
  RewardTable reward;
  FitMeta meta;
};

// Ridge-regularized Bradley-Terry maximum likelihood by full-batch gradient
// ascent from zero on
//   sum_i [z log s(r(y1) - r(y2)) + (1 - z) log s(r(y2) - r(y1))] - l2 |r|^2,
// stepping `lr` along the per-tuple-normalized gradient. Stops early once
// |grad| < 1e-6 (1 + |grad at zero|). Rewards are shifted to zero mean per
// prompt afterwards. Swap-augmented input is reduced to its originals.
BtFit fit_reward_bt_mle(const VocabShape& shape, const PreferenceDataset& data,
                        double l2 = 1e-4, std::size_t steps = 50'000, double lr = 2.0);

// Best-fit Bradley-Terry reward against the population distribution of
// the environment (the infinite-data limit of fit_reward_bt_mle), maximizing
//   sum_{a != b} ref(a|x) ref(b|x) g*(x, a, b) log s(r(a) - r(b))
// per prompt by damped Newton. Zero mean per prompt.
RewardTable fit_reward_bt_population(const Environment& env, std::size_t max_iter = 200);

// Smoothed win-frequency table: g(a, b) = (wins(a, b) + s) / (comparisons + 2 s).
// Pairs never compared get 1/2.
PreferenceModel fit_gpm_table(const VocabShape& shape, const PreferenceDataset& data,
                              double smoothing = 1.0);

// probs(y|x) proportional to count of y among Y1 and Y2 at x, plus smoothing.
Policy fit_reference_policy(const VocabShape& shape, const PreferenceDataset& data,
                            double smoothing = 1.0);

// Uniformly random preference table: g(x, a, b) ~ U[0, 1] i.i.d. over pairs
// a < b, g(x, b, a) = 1 - g(x, a, b), diagonal 1/2. Flagged misspecified.
// Antisymmetry is kept so that a correct reference still makes psi unbiased.
PreferenceModel make_misspecified_g(const Environment& env, std::uint64_t seed);

struct FitOptions {
  double bt_l2 = 1e-4;
  std::size_t bt_steps = 50'000;
  double bt_lr = 2.0;
  double gpm_smoothing = 1.0;
  double ref_smoothing = 1.0;
};

struct Nuisances {
  PreferenceModel g_hat;
  Policy ref_hat;
  NuisanceProvenance provenance;
  std::optional<FitMeta> g_fit;
};

// Materializes g_hat and ref_hat. Fitted sources are estimated from
// `fit_data`, which must then be non-null.
Nuisances resolve_nuisances(const Environment& env, const NuisanceSpec& spec,
                            const PreferenceDataset* fit_data, const FitOptions& options = {});

}  // namespace drpo
