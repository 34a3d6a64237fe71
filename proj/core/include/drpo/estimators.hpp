#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "drpo/core_model.hpp"

namespace drpo {

// Direct-method inner expectation E_{y~pi}[g(x, y, y_a)]: summed over the
// vocabulary, or averaged over `samples` draws per tuple (tuple i uses
// Philox stream i under `seed`).
struct DmExact {
  friend bool operator==(const DmExact&, const DmExact&) = default;
};
struct DmMonteCarlo {
  std::size_t samples = 8;
  std::uint64_t seed = 0;
  friend bool operator==(const DmMonteCarlo&, const DmMonteCarlo&) = default;
};
using DmMode = std::variant<DmExact, DmMonteCarlo>;

enum class EstimatorKind { kDm, kIs, kDr };

std::string to_string(EstimatorKind kind);
EstimatorKind parse_estimator_kind(const std::string& name);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::kDr;
  // Upper cap on pi / ref_hat ratios; none means unclipped.
  std::optional<double> clip_max;
  DmMode dm_mode = DmExact{};

  void validate() const;
};

// Where the nuisances came from, echoed into reports.
struct NuisanceProvenance {
  std::string g_source = "unspecified";
  std::string ref_source = "unspecified";
};

struct EstimateReport {
  double value = 0.0;
  std::vector<double> per_tuple;  // populated by every estimator here
  EstimatorConfig config;
  NuisanceProvenance provenance;
};

// (1/2) [E_{y~pi} g(x, y, y1) + E_{y~pi} g(x, y, y2)].
double dm_term(const PreferenceTuple& t, const Policy& policy, const PreferenceModel& g_hat,
               const DmMode& mode, std::size_t stream = 0);

// (1/2) [w(y1) z + w(y2) (1 - z)], w = clip(pi / ref_hat).
double is_term(const PreferenceTuple& t, const Policy& policy, const Policy& ref_hat,
               std::optional<double> clip_max);

// The doubly robust estimating function: DM term plus
// (1/2) (w(y1) - w(y2)) (z - g_hat(x, y1, y2)).
double psi_eval(const PreferenceTuple& t, const Policy& policy, const Policy& ref_hat,
                const PreferenceModel& g_hat, const EstimatorConfig& cfg,
                std::size_t stream = 0);

EstimateReport dm_estimate(const PreferenceDataset& data, const Policy& policy,
                           const PreferenceModel& g_hat, const EstimatorConfig& cfg,
                           unsigned threads = 1);
EstimateReport is_estimate(const PreferenceDataset& data, const Policy& policy,
                           const Policy& ref_hat, const EstimatorConfig& cfg,
                           unsigned threads = 1);
EstimateReport dr_estimate(const PreferenceDataset& data, const Policy& policy,
                           const Policy& ref_hat, const PreferenceModel& g_hat,
                           const EstimatorConfig& cfg, unsigned threads = 1);

// Dispatches on cfg.kind.
EstimateReport estimate(const PreferenceDataset& data, const Policy& policy,
                        const Policy& ref_hat, const PreferenceModel& g_hat,
                        const EstimatorConfig& cfg, unsigned threads = 1);

}  // namespace drpo
