#include "drpo/train.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>

#include "drpo/datagen.hpp"
#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"

namespace drpo {
namespace {

PerPrompt<double> zeros_like(const VocabShape& shape) {
  PerPrompt<double> out(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) out[x].assign(shape.sizes()[x], 0.0);
  return out;
}

double log_normalizer(std::span<const double> logits) {
  double top = -std::numeric_limits<double>::infinity();
  for (double l : logits) top = std::max(top, l);
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - top);
  return top + std::log(sum);
}

// Exact in the tails, where log(prob) would underflow.
double log_prob(const Policy& policy, PromptId x, ResponseId y) {
  policy.shape().check(x, y);
  const auto logits = policy.logits(x);
  if (logits[y] == -std::numeric_limits<double>::infinity())
    throw DomainError("log-probability of a zero-probability response");
  return logits[y] - log_normalizer(logits);
}

PerPrompt<double> log_prob_table(const Policy& policy) {
  PerPrompt<double> out = policy.all_logits();
  for (auto& row : out) {
    const double z = log_normalizer(row);
    for (double& l : row) l -= z;
  }
  return out;
}

// grad[x] += scale * (e_y - pi(.|x)), the logit gradient of scale * log pi(y|x).
void add_log_prob_grad(PerPrompt<double>& grad, const Policy& policy, PromptId x, ResponseId y,
                       double scale) {
  const auto probs = policy.probs(x);
  auto& row = grad[x];
  for (std::size_t k = 0; k < probs.size(); ++k) row[k] -= scale * probs[k];
  row[y] += scale;
}

double prompt_kl(const Policy& policy, const Policy& ref_hat, PromptId x) {
  const auto p = policy.probs(x);
  const auto q = ref_hat.probs(x);
  double kl = 0.0;
  for (std::size_t y = 0; y < p.size(); ++y) {
    if (!(q[y] > 0.0)) throw DomainError("reference assigns zero probability");
    if (p[y] > 0.0) kl += p[y] * (std::log(p[y]) - std::log(q[y]));
  }
  return kl;
}

double k3_term(double ref_prob, double policy_prob) {
  if (!(ref_prob > 0.0) || !(policy_prob > 0.0)) {
    throw DomainError("k3 ratio needs positive probabilities");
  }
  const double r = ref_prob / policy_prob;
  // r - 1 - log r >= 0; clamp rounding below zero.
  return std::max(0.0, r - 1.0 - std::log(r));
}

Policy apply_step(const Policy& policy, const PerPrompt<double>& direction, double scale) {
  PerPrompt<double> logits = policy.all_logits();
  for (std::size_t x = 0; x < logits.size(); ++x)
    for (std::size_t y = 0; y < logits[x].size(); ++y) logits[x][y] -= scale * direction[x][y];
  return Policy::from_logits(std::move(logits));
}

struct AdamState {
  PerPrompt<double> m;
  PerPrompt<double> v;
  std::size_t t = 0;
};

PerPrompt<double> adam_direction(AdamState& state, const PerPrompt<double>& grad) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  ++state.t;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  PerPrompt<double> dir = grad;
  for (std::size_t x = 0; x < grad.size(); ++x) {
    for (std::size_t y = 0; y < grad[x].size(); ++y) {
      state.m[x][y] = kBeta1 * state.m[x][y] + (1.0 - kBeta1) * grad[x][y];
      state.v[x][y] = kBeta2 * state.v[x][y] + (1.0 - kBeta2) * grad[x][y] * grad[x][y];
      dir[x][y] = (state.m[x][y] / c1) / (std::sqrt(state.v[x][y] / c2) + kEps);
    }
  }
  return dir;
}

void maybe_trace(TraceRecord& rec, const Environment* env, const Policy& policy) {
  if (env == nullptr) return;
  rec.oracle_pref = total_preference_exact(*env, policy);
  rec.oracle_kl = kl_exact(*env, policy, env->ref_policy());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw UsageError("beta must be nonnegative");
  if (!(clip_lo > 0.0 && clip_lo <= 1.0)) throw UsageError("clip_lo must lie in (0, 1]");
  if (!(clip_hi >= 1.0)) throw UsageError("clip_hi must be at least 1");
  if (mc_samples == 0 || batch_size == 0 || epochs == 0) {
    throw UsageError("mc_samples, batch_size and epochs must be at least 1");
  }
  if (steps && *steps == 0) throw UsageError("steps must be at least 1");
  if (!(lr >= 0.0)) throw UsageError("lr must be nonnegative");
}

double LossAndGrad::grad_norm() const {
  double s = 0.0;
  for (const auto& row : grad)
    for (double g : row) s += g * g;
  return std::sqrt(s);
}

double kl_k3(const Policy& policy, const Policy& ref_hat, PromptId prompt,
             std::span<const ResponseId> samples) {
  policy.shape().require_same(ref_hat.shape(), "kl_k3");
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (ResponseId y : samples) total += k3_term(ref_hat.prob(prompt, y), policy.prob(prompt, y));
  return total / static_cast<double>(samples.size());
}

FrozenStep freeze_drpo_step(const PreferenceDataset& data, std::span<const std::size_t> batch,
                            const Policy& policy, const Policy& ref_hat,
                            const PreferenceModel& g_hat, const TrainConfig& cfg,
                            std::uint64_t step_seed) {
  cfg.validate();
  if (!data.augmented()) {
    throw UsageError("DRPO batches must come from a swap-augmented dataset");
  }
  policy.shape().require_same(ref_hat.shape(), "DRPO reference");
  policy.shape().require_same(g_hat.shape(), "DRPO preference model");
  FrozenStep step;
  step.beta = cfg.beta;
  step.dm_mode = cfg.dm_mode;
  step.elements.reserve(batch.size());
  for (std::size_t pos = 0; pos < batch.size(); ++pos) {
    const PreferenceTuple& t = data.tuples().at(batch[pos]);
    FrozenElement e;
    e.prompt = t.prompt;
    e.y1 = t.y1;
    const double ref1 = ref_hat.prob(t.prompt, t.y1);
    if (!(ref1 > 0.0)) throw DomainError("estimated reference assigns zero probability");
    const double w = std::clamp(policy.prob(t.prompt, t.y1) / ref1, cfg.clip_lo, cfg.clip_hi);
    e.term2 = w * (t.z - g_hat(t.prompt, t.y1, t.y2));
    const auto probs = policy.probs(t.prompt);
    if (cfg.dm_mode == TrainDmMode::kExact) {
      for (ResponseId y = 0; y < probs.size(); ++y) {
        if (probs[y] == 0.0) continue;
        e.term1_responses.push_back(y);
        e.term1_weights.push_back(probs[y] * g_hat(t.prompt, y, t.y2));
      }
    } else {
      Philox4x32 rng(step_seed, pos);
      const double inv = 1.0 / static_cast<double>(cfg.mc_samples);
      for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
        const ResponseId y = sample_categorical(probs, rng.uniform());
        e.term1_responses.push_back(y);
        e.term1_weights.push_back(g_hat(t.prompt, y, t.y2) * inv);
        e.kl_samples.push_back(y);
      }
    }
    step.elements.push_back(std::move(e));
  }
  return step;
}

double drpo_surrogate_loss(const FrozenStep& step, const Policy& live, const Policy& ref_hat) {
  if (step.elements.empty()) return 0.0;
  double preference = 0.0;
  double kl = 0.0;
  for (const auto& e : step.elements) {
    double term1 = 0.0;
    for (std::size_t j = 0; j < e.term1_responses.size(); ++j) {
      term1 += e.term1_weights[j] * log_prob(live, e.prompt, e.term1_responses[j]);
    }
    preference += term1 + e.term2 * log_prob(live, e.prompt, e.y1);
    if (step.dm_mode == TrainDmMode::kExact) {
      kl += prompt_kl(live, ref_hat, e.prompt);
    } else {
      kl += kl_k3(live, ref_hat, e.prompt, e.kl_samples);
    }
  }
  const double batch = static_cast<double>(step.elements.size());
  return -0.5 * preference / batch + step.beta * kl / batch;
}

LossAndGrad drpo_surrogate_loss_and_grad(const FrozenStep& step, const Policy& live,
                                         const Policy& ref_hat) {
  LossAndGrad out;
  out.grad = zeros_like(live.shape());
  if (step.elements.empty()) return out;
  const double batch = static_cast<double>(step.elements.size());
  const double pref_scale = -0.5 / batch;
  const double kl_scale = step.beta / batch;
  double preference = 0.0;
  double kl = 0.0;
  for (const auto& e : step.elements) {
    for (std::size_t j = 0; j < e.term1_responses.size(); ++j) {
      const ResponseId y = e.term1_responses[j];
      preference += e.term1_weights[j] * log_prob(live, e.prompt, y);
      add_log_prob_grad(out.grad, live, e.prompt, y, pref_scale * e.term1_weights[j]);
    }
    preference += e.term2 * log_prob(live, e.prompt, e.y1);
    add_log_prob_grad(out.grad, live, e.prompt, e.y1, pref_scale * e.term2);

    if (step.dm_mode == TrainDmMode::kExact) {
      // d KL(pi || q) / d logit_k = pi_k (log(pi_k / q_k) - KL).
      const double value = prompt_kl(live, ref_hat, e.prompt);
      kl += value;
      const auto p = live.probs(e.prompt);
      const auto q = ref_hat.probs(e.prompt);
      auto& row = out.grad[e.prompt];
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] > 0.0) row[k] += kl_scale * p[k] * (std::log(p[k]) - std::log(q[k]) - value);
      }
    } else if (!e.kl_samples.empty()) {
      const double inv = 1.0 / static_cast<double>(e.kl_samples.size());
      for (ResponseId y : e.kl_samples) {
        const double q = ref_hat.prob(e.prompt, y);
        const double p = live.prob(e.prompt, y);
        kl += inv * k3_term(q, p);
        // d (r - 1 - log r) / d log pi(y) = 1 - r.
        add_log_prob_grad(out.grad, live, e.prompt, y, kl_scale * inv * (1.0 - q / p));
      }
    }
  }
  out.loss = pref_scale * preference + kl_scale * kl;
  return out;
}

LossAndGrad drpo_loss_and_grad(const PreferenceDataset& data, std::span<const std::size_t> batch,
                               const Policy& policy, const Policy& ref_hat,
                               const PreferenceModel& g_hat, const TrainConfig& cfg,
                               std::uint64_t step_seed) {
  const FrozenStep step = freeze_drpo_step(data, batch, policy, ref_hat, g_hat, cfg, step_seed);
  return drpo_surrogate_loss_and_grad(step, policy, ref_hat);
}

double drpo_objective(const PreferenceDataset& data, const Policy& policy,
                      const Policy& ref_hat, const PreferenceModel& g_hat, double beta) {
  const PreferenceDataset originals = strip_augmentation(data);
  if (originals.empty()) return 0.0;
  const double dr = dr_estimate(originals, policy, ref_hat, g_hat, EstimatorConfig{}).value;
  double kl = 0.0;
  for (const auto& t : originals.tuples()) kl += prompt_kl(policy, ref_hat, t.prompt);
  return dr - beta * kl / static_cast<double>(originals.size());
}

TrainResult drpo_train(const PreferenceDataset& input, const VocabShape& shape,
                       const Policy& ref_hat, const PreferenceModel& g_hat,
                       const TrainConfig& cfg, const Policy& init,
                       const Environment* trace_env) {
  cfg.validate();
  shape.require_same(init.shape(), "DRPO initial policy");
  shape.require_same(ref_hat.shape(), "DRPO reference");
  input.check_against(shape);
  if (input.empty()) throw UsageError("drpo_train: empty dataset");

  TrainResult result{init, {}};
  result.trace.augmented_input = !input.augmented();
  const PreferenceDataset data = input.augmented() ? input : augment_swapped(input);
  const std::size_t n = data.size();
  const std::size_t batch_size = cfg.backtracking ? n : std::min(cfg.batch_size, n);
  const std::size_t total_steps =
      cfg.steps.value_or(std::max<std::size_t>(1, n * cfg.epochs / cfg.batch_size));

  AdamState adam{zeros_like(shape), zeros_like(shape), 0};
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;  // forces a shuffle before the first batch
  std::size_t epoch = 0;
  std::vector<std::size_t> batch(batch_size);
  Policy& policy = result.policy;
  double objective = cfg.backtracking ? drpo_objective(data, policy, ref_hat, g_hat, cfg.beta) : 0.0;

  for (std::size_t step = 0; step < total_steps; ++step) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (cursor == n) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Philox4x32 rng(derive_seed(cfg.seed, {0x5348u, epoch++}), 0);
        for (std::size_t i = n; i > 1; --i) {
          const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
          std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }
        cursor = 0;
      }
      batch[b] = order[cursor++];
    }
    const std::uint64_t step_seed = derive_seed(cfg.seed, {0x5354u, step});
    const LossAndGrad lg = drpo_loss_and_grad(data, batch, policy, ref_hat, g_hat, cfg, step_seed);

    if (cfg.backtracking) {
      double scale = cfg.lr;
      for (int attempt = 0; attempt <= 20; ++attempt, scale *= 0.5) {
        Policy candidate = apply_step(policy, lg.grad, scale);
        const double value = drpo_objective(data, candidate, ref_hat, g_hat, cfg.beta);
        if (value >= objective) {
          policy = std::move(candidate);
          objective = value;
          break;
        }
      }
    } else if (cfg.moment_averaging) {
      policy = apply_step(policy, adam_direction(adam, lg.grad), cfg.lr);
    } else {
      policy = apply_step(policy, lg.grad, cfg.lr);
    }

    TraceRecord rec{step, lg.loss, lg.grad_norm(), std::nullopt, std::nullopt};
    maybe_trace(rec, trace_env, policy);
    result.trace.records.push_back(rec);
  }
  return result;
}

LossAndGrad dpo_loss_and_grad(const PreferenceDataset& input, const Policy& policy,
                              const Policy& ref_hat, double beta) {
  const PreferenceDataset data = strip_augmentation(input);
  policy.shape().require_same(ref_hat.shape(), "DPO reference");
  data.check_against(policy.shape());
  LossAndGrad out;
  out.grad = zeros_like(policy.shape());
  if (data.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (const auto& t : data.tuples()) {
    const ResponseId win = t.z == 1 ? t.y1 : t.y2;
    const ResponseId lose = t.z == 1 ? t.y2 : t.y1;
    const double h = beta * ((log_prob(policy, t.prompt, win) - log_prob(ref_hat, t.prompt, win)) -
                             (log_prob(policy, t.prompt, lose) - log_prob(ref_hat, t.prompt, lose)));
    // -log s(h), computed stably.
    out.loss += inv_n * (h >= 0.0 ? std::log1p(std::exp(-h)) : -h + std::log1p(std::exp(h)));
    if (win == lose) continue;
    // d/d logits of (log pi_w - log pi_l) is e_w - e_l; the softmax terms cancel.
    const double c = beta * sigmoid(-h) * inv_n;
    out.grad[t.prompt][win] -= c;
    out.grad[t.prompt][lose] += c;
  }
  return out;
}

namespace {

// DPO loss depends on the data only through (prompt, winner, loser) counts.
struct DpoCounts {
  PromptId prompt;
  ResponseId win;
  ResponseId lose;
  double weight;  // count / N
};

std::vector<DpoCounts> dpo_counts(const PreferenceDataset& data, const VocabShape& shape) {
  std::vector<double> flat;
  std::vector<std::size_t> offset(shape.prompts() + 1, 0);
  for (std::size_t x = 0; x < shape.prompts(); ++x)
    offset[x + 1] = offset[x] + shape.sizes()[x] * shape.sizes()[x];
  flat.assign(offset.back(), 0.0);
  for (const auto& t : data.tuples()) {
    const ResponseId win = t.z == 1 ? t.y1 : t.y2;
    const ResponseId lose = t.z == 1 ? t.y2 : t.y1;
    flat[offset[t.prompt] + win * shape.sizes()[t.prompt] + lose] += 1.0;
  }
  std::vector<DpoCounts> out;
  const double inv_n = 1.0 / static_cast<double>(data.size());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    const std::size_t k = shape.sizes()[x];
    for (std::size_t w = 0; w < k; ++w)
      for (std::size_t l = 0; l < k; ++l)
        if (const double c = flat[offset[x] + w * k + l]; c > 0.0) out.push_back({x, w, l, c * inv_n});
  }
  return out;
}

LossAndGrad dpo_counts_loss_and_grad(const std::vector<DpoCounts>& counts, const Policy& policy,
                                     const PerPrompt<double>& ref_log, double beta) {
  LossAndGrad out;
  out.grad = zeros_like(policy.shape());
  const PerPrompt<double> lp = log_prob_table(policy);
  for (const auto& c : counts) {
    const auto& p = lp[c.prompt];
    const auto& q = ref_log[c.prompt];
    if (p[c.win] == -std::numeric_limits<double>::infinity() ||
        p[c.lose] == -std::numeric_limits<double>::infinity())
      throw DomainError("log-probability of a zero-probability response");
    const double h = beta * ((p[c.win] - q[c.win]) - (p[c.lose] - q[c.lose]));
    out.loss += c.weight * (h >= 0.0 ? std::log1p(std::exp(-h)) : -h + std::log1p(std::exp(h)));
    if (c.win == c.lose) continue;
    const double push = beta * sigmoid(-h) * c.weight;
    out.grad[c.prompt][c.win] -= push;
    out.grad[c.prompt][c.lose] += push;
  }
  return out;
}

}  // namespace

void DpoConfig::validate() const {
  if (!(beta > 0.0)) throw UsageError("dpo: beta must be positive");
  if (!(lr >= 0.0)) throw UsageError("dpo: lr must be nonnegative");
  if (steps == 0) throw UsageError("dpo: steps must be at least 1");
}

TrainResult dpo_train(const PreferenceDataset& data, const Policy& ref_hat, const DpoConfig& cfg,
                      const Policy& init, const Environment* trace_env) {
  cfg.validate();
  if (data.empty()) throw UsageError("dpo_train: empty dataset");
  init.shape().require_same(ref_hat.shape(), "DPO initial policy");
  const PreferenceDataset originals = strip_augmentation(data);
  originals.check_against(init.shape());
  const std::vector<DpoCounts> counts = dpo_counts(originals, init.shape());
  const PerPrompt<double> ref_log = log_prob_table(ref_hat);
  for (const auto& c : counts)
    if (ref_log[c.prompt][c.win] == -std::numeric_limits<double>::infinity() ||
        ref_log[c.prompt][c.lose] == -std::numeric_limits<double>::infinity())
      throw DomainError("DPO reference assigns zero probability to an observed response");
  TrainResult result{init, {}};
  result.trace.records.reserve(cfg.steps);
  AdamState adam{zeros_like(init.shape()), zeros_like(init.shape()), 0};
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const LossAndGrad lg = dpo_counts_loss_and_grad(counts, result.policy, ref_log, cfg.beta);
    if (cfg.moment_averaging) {
      result.policy = apply_step(result.policy, adam_direction(adam, lg.grad), cfg.lr);
    } else {
      result.policy = apply_step(result.policy, lg.grad, cfg.lr);
    }
    TraceRecord rec{step, lg.loss, lg.grad_norm(), std::nullopt, std::nullopt};
    maybe_trace(rec, trace_env, result.policy);
    result.trace.records.push_back(rec);
  }
  return result;
}

Policy ppo_closed_form(const VocabShape& shape, const RewardTable& reward,
                       const Policy& ref_hat, double beta) {
  if (!(beta > 0.0)) throw UsageError("ppo_closed_form: beta must be positive");
  shape.require_same(reward.shape(), "PPO reward");
  shape.require_same(ref_hat.shape(), "PPO reference");
  PerPrompt<double> logits(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    const auto ref = ref_hat.probs(x);
    for (std::size_t y = 0; y < ref.size(); ++y) {
      logits[x].push_back(ref[y] > 0.0 ? std::log(ref[y]) + reward.values()[x][y] / beta
                                       : -std::numeric_limits<double>::infinity());
    }
  }
  return Policy::from_logits(std::move(logits));
}

}  // namespace drpo
