#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "drpo/core_model.hpp"
#include "drpo/fault.hpp"
#include "drpo/train.hpp"

namespace drpo::cli {

struct InvariantResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// Runs every invariant with `fault` injected; exceptions count as failures.
std::vector<InvariantResult> run_selftest(std::uint64_t seed, Fault fault = Fault::kNone);

void write_junit(std::ostream& out, const std::vector<InvariantResult>& results);

// Central finite differences of drpo_surrogate_loss over every logit of
// `live`, compared with the analytic gradient. Returns
// max |analytic - numeric| / max(max |analytic|, 1e-8).
double surrogate_gradient_error(const FrozenStep& step, const Policy& live,
                                const Policy& ref_hat, double h = 1e-5);

// Random environment-free fixture for gradient checks: a policy, reference,
// table preference and augmented dataset on a small random shape.
struct GradientFixture {
  Policy policy;
  Policy ref_hat;
  PreferenceModel g_hat;
  PreferenceDataset data;
  TrainConfig cfg;
};
GradientFixture make_gradient_fixture(std::uint64_t seed, TrainDmMode mode);

}  // namespace drpo::cli
