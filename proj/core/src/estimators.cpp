#include "drpo/estimators.hpp"

#include <algorithm>

#include "drpo/errors.hpp"
#include "drpo/fault.hpp"
#include "drpo/parallel.hpp"
#include "drpo/rng.hpp"

namespace drpo {
namespace {

double expected_g_against(const Policy& policy, const PreferenceModel& g_hat, PromptId x,
                          ResponseId opponent) {
  const auto probs = policy.probs(x);
  double total = 0.0;
  for (std::size_t y = 0; y < probs.size(); ++y) {
    if (probs[y] > 0.0) total += probs[y] * g_hat(x, y, opponent);
  }
  return total;
}

double ratio(const Policy& policy, const Policy& ref_hat, PromptId x, ResponseId y,
             std::optional<double> clip_max) {
  const double denom = ref_hat.prob(x, y);
  if (!(denom > 0.0)) {
    throw DomainError("estimated reference assigns zero probability to an observed response");
  }
  const double w = policy.prob(x, y) / denom;
  return clip_max ? std::min(w, *clip_max) : w;
}

void check_inputs(const PreferenceDataset& data, const Policy& policy) {
  data.check_against(policy.shape());
}

void check_ref(const Policy& policy, const Policy& ref_hat) {
  policy.shape().require_same(ref_hat.shape(), "estimated reference");
  if (!ref_hat.strictly_positive()) {
    throw DomainError("estimated reference policy must be strictly positive");
  }
}

template <typename Term>
EstimateReport mean_report(const PreferenceDataset& data, const EstimatorConfig& cfg,
                           unsigned threads, Term&& term) {
  if (data.empty()) throw UsageError("cannot estimate from an empty dataset");
  EstimateReport report;
  report.config = cfg;
  report.per_tuple.resize(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { report.per_tuple[i] = term(i); });
  double total = 0.0;
  for (double v : report.per_tuple) total += v;
  report.value = total / static_cast<double>(data.size());
  return report;
}

}  // namespace

std::string to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kDm: return "dm";
    case EstimatorKind::kIs: return "is";
    case EstimatorKind::kDr: return "dr";
  }
  return "dr";
}

EstimatorKind parse_estimator_kind(const std::string& name) {
  if (name == "dm") return EstimatorKind::kDm;
  if (name == "is") return EstimatorKind::kIs;
  if (name == "dr") return EstimatorKind::kDr;
  throw UsageError("unknown estimator '" + name + "' (expected dm, is or dr)");
}

void EstimatorConfig::validate() const {
  if (clip_max && !(*clip_max > 0.0)) throw UsageError("clip_max must be positive");
  if (const auto* mc = std::get_if<DmMonteCarlo>(&dm_mode); mc && mc->samples == 0) {
    throw UsageError("monte_carlo dm_mode needs at least one sample");
  }
}

double dm_term(const PreferenceTuple& t, const Policy& policy, const PreferenceModel& g_hat,
               const DmMode& mode, std::size_t stream) {
  if (const auto* mc = std::get_if<DmMonteCarlo>(&mode)) {
    Philox4x32 rng(mc->seed, stream);
    const auto probs = policy.probs(t.prompt);
    double total = 0.0;
    for (std::size_t s = 0; s < mc->samples; ++s) {
      const ResponseId y = sample_categorical(probs, rng.uniform());
      total += g_hat(t.prompt, y, t.y1) + g_hat(t.prompt, y, t.y2);
    }
    return 0.5 * total / static_cast<double>(mc->samples);
  }
  return 0.5 * (expected_g_against(policy, g_hat, t.prompt, t.y1) +
                expected_g_against(policy, g_hat, t.prompt, t.y2));
}

double is_term(const PreferenceTuple& t, const Policy& policy, const Policy& ref_hat,
               std::optional<double> clip_max) {
  const double w1 = ratio(policy, ref_hat, t.prompt, t.y1, clip_max);
  const double w2 = ratio(policy, ref_hat, t.prompt, t.y2, clip_max);
  return 0.5 * (w1 * t.z + w2 * (1 - t.z));
}

double psi_eval(const PreferenceTuple& t, const Policy& policy, const Policy& ref_hat,
                const PreferenceModel& g_hat, const EstimatorConfig& cfg, std::size_t stream) {
  const double direct = dm_term(t, policy, g_hat, cfg.dm_mode, stream);
  const double w1 = ratio(policy, ref_hat, t.prompt, t.y1, cfg.clip_max);
  const double w2 = ratio(policy, ref_hat, t.prompt, t.y2, cfg.clip_max);
  double correction = 0.5 * (w1 - w2) * (t.z - g_hat(t.prompt, t.y1, t.y2));
  if (active_fault() == Fault::kFlipSignAugmentation) correction = -correction;
  return direct + correction;
}

EstimateReport dm_estimate(const PreferenceDataset& data, const Policy& policy,
                           const PreferenceModel& g_hat, const EstimatorConfig& cfg,
                           unsigned threads) {
  cfg.validate();
  check_inputs(data, policy);
  policy.shape().require_same(g_hat.shape(), "preference model");
  return mean_report(data, cfg, threads, [&](std::size_t i) {
    return dm_term(data[i], policy, g_hat, cfg.dm_mode, i);
  });
}

EstimateReport is_estimate(const PreferenceDataset& data, const Policy& policy,
                           const Policy& ref_hat, const EstimatorConfig& cfg,
                           unsigned threads) {
  cfg.validate();
  check_inputs(data, policy);
  check_ref(policy, ref_hat);
  return mean_report(data, cfg, threads, [&](std::size_t i) {
    return is_term(data[i], policy, ref_hat, cfg.clip_max);
  });
}

EstimateReport dr_estimate(const PreferenceDataset& data, const Policy& policy,
                           const Policy& ref_hat, const PreferenceModel& g_hat,
                           const EstimatorConfig& cfg, unsigned threads) {
  cfg.validate();
  check_inputs(data, policy);
  check_ref(policy, ref_hat);
  policy.shape().require_same(g_hat.shape(), "preference model");
  return mean_report(data, cfg, threads, [&](std::size_t i) {
    return psi_eval(data[i], policy, ref_hat, g_hat, cfg, i);
  });
}

EstimateReport estimate(const PreferenceDataset& data, const Policy& policy,
                        const Policy& ref_hat, const PreferenceModel& g_hat,
                        const EstimatorConfig& cfg, unsigned threads) {
  switch (cfg.kind) {
    case EstimatorKind::kDm: return dm_estimate(data, policy, g_hat, cfg, threads);
    case EstimatorKind::kIs: return is_estimate(data, policy, ref_hat, cfg, threads);
    case EstimatorKind::kDr: return dr_estimate(data, policy, ref_hat, g_hat, cfg, threads);
  }
  throw UsageError("unknown estimator kind");
}

}  // namespace drpo
