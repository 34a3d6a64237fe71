#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drpo/core_model.hpp"

namespace drpo {

// How the direct-method expectation over y* ~ pi is formed inside a step.
enum class TrainDmMode {
  kExact,       // enumerate y* with frozen current probabilities as weights
  kMonteCarlo,  // draw mc_samples responses per batch element
};

struct TrainConfig {
  double beta = 0.04;     // KL weight
  double clip_lo = 0.04;  // lower end of the ratio clip (1 - eps1)
  double clip_hi = 2.5;   // upper end of the ratio clip (1 + eps2)
  std::size_t mc_samples = 3;
  std::size_t batch_size = 64;
  double lr = 0.1;
  // Total steps; when unset, |augmented data| * epochs / batch_size.
  std::optional<std::size_t> steps;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
  // Adam-style update (decays 0.9 / 0.999, stabilizer 1e-8) instead of plain
  // gradient descent.
  bool moment_averaging = true;
  TrainDmMode dm_mode = TrainDmMode::kExact;
  // Full-batch only: halve the step (up to 20 times) until the objective
  // p_DR - beta * KL does not decrease; skip the step otherwise.
  bool backtracking = false;

  void validate() const;
};

struct TraceRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> oracle_pref;
  std::optional<double> oracle_kl;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  bool augmented_input = false;  // drpo_train augmented the data itself
};

struct TrainResult {
  Policy policy;
  TrainTrace trace;
};

// Mean over samples of r - 1 - log r with r = ref_hat(y|x) / policy(y|x).
double kl_k3(const Policy& policy, const Policy& ref_hat, PromptId prompt,
             std::span<const ResponseId> samples);

// Everything a DRPO step holds constant: the y* weights of term I, the
// stop-gradient term II scalar, and (Monte Carlo mode) the k3 sample set.
struct FrozenElement {
  PromptId prompt = 0;
  ResponseId y1 = 0;
  double term2 = 0.0;
  // term I = sum_j weight_j * log pi(response_j | prompt)
  std::vector<ResponseId> term1_responses;
  std::vector<double> term1_weights;
  // Monte Carlo k3 draws; empty in exact mode, where KL is evaluated exactly.
  std::vector<ResponseId> kl_samples;
};

struct FrozenStep {
  std::vector<FrozenElement> elements;
  double beta = 0.0;
  TrainDmMode dm_mode = TrainDmMode::kExact;
};

struct LossAndGrad {
  double loss = 0.0;
  PerPrompt<double> grad;  // d loss / d logits
  double grad_norm() const;
};

// Freezes a batch at `policy`. `batch` indexes into `data`, which must be
// swap-augmented. Draws use Philox stream (batch position) under step_seed.
FrozenStep freeze_drpo_step(const PreferenceDataset& data, std::span<const std::size_t> batch,
                            const Policy& policy, const Policy& ref_hat,
                            const PreferenceModel& g_hat, const TrainConfig& cfg,
                            std::uint64_t step_seed);

// Value of the frozen surrogate at `live`:
//   -(1/2) mean_i [term I_i + term2_i log pi(y1_i)] + beta mean_i KL_i
// where KL_i is KL(pi || ref_hat) at the element's prompt (exact mode) or
// the k3 average over its samples (Monte Carlo mode).
double drpo_surrogate_loss(const FrozenStep& step, const Policy& live, const Policy& ref_hat);
LossAndGrad drpo_surrogate_loss_and_grad(const FrozenStep& step, const Policy& live,
                                         const Policy& ref_hat);

// freeze_drpo_step followed by the surrogate gradient at the same policy.
LossAndGrad drpo_loss_and_grad(const PreferenceDataset& data, std::span<const std::size_t> batch,
                               const Policy& policy, const Policy& ref_hat,
                               const PreferenceModel& g_hat, const TrainConfig& cfg,
                               std::uint64_t step_seed);

// Objective p_DR(pi) - beta * mean_i KL(pi(.|x_i) || ref_hat(.|x_i)) over the
// original comparisons of `data` (unclipped, exact direct method).
double drpo_objective(const PreferenceDataset& data, const Policy& policy,
                      const Policy& ref_hat, const PreferenceModel& g_hat, double beta);

// DRPO training loop. Data that is not swap-augmented is augmented first
// (recorded in the trace). With `trace_env`, each record also carries the
// oracle total preference and KL to the true reference.
TrainResult drpo_train(const PreferenceDataset& data, const VocabShape& shape,
                       const Policy& ref_hat, const PreferenceModel& g_hat,
                       const TrainConfig& cfg, const Policy& init,
                       const Environment* trace_env = nullptr);

struct DpoConfig {
  double beta = 0.1;
  double lr = 1.0;
  std::size_t steps = 500;
  // Same moment-averaged update as TrainConfig; plain descent otherwise.
  bool moment_averaging = false;

  void validate() const;
};

// Full-batch descent on the mean DPO loss
//   -log s(beta [log(pi/ref_hat)(y_w) - log(pi/ref_hat)(y_l)])
// with y_w = y1 if z = 1 else y2. Augmented input is reduced to originals.
TrainResult dpo_train(const PreferenceDataset& data, const Policy& ref_hat, const DpoConfig& cfg,
                      const Policy& init, const Environment* trace_env = nullptr);

// Gradient of the mean DPO loss at `policy` (logit space).
LossAndGrad dpo_loss_and_grad(const PreferenceDataset& data, const Policy& policy,
                              const Policy& ref_hat, double beta);

// Exact maximizer of E[r_hat] - beta KL(pi || ref_hat):
// pi(y|x) proportional to ref_hat(y|x) exp(r_hat(y, x) / beta).
Policy ppo_closed_form(const VocabShape& shape, const RewardTable& reward,
                       const Policy& ref_hat, double beta);

}  // namespace drpo
