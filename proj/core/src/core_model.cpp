#include "drpo/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "drpo/errors.hpp"

namespace drpo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kSymmetryTol = 1e-12;

std::vector<double> softmax_row(const std::vector<double>& logits, PromptId x) {
  double max_logit = kNegInf;
  for (double v : logits) {
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      throw DomainError("logit for prompt " + std::to_string(x) +
                        " is NaN or +infinity");
    }
    max_logit = std::max(max_logit, v);
  }
  if (logits.empty() || max_logit == kNegInf) {
    throw DomainError("prompt " + std::to_string(x) + " has no finite logit");
  }
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

}  // namespace

VocabShape::VocabShape(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {}

std::size_t VocabShape::responses(PromptId x) const {
  check(x);
  return sizes_[x];
}

void VocabShape::check(PromptId x) const {
  if (x >= sizes_.size()) {
    throw IndexError("prompt index " + std::to_string(x) + " out of range (" +
                     std::to_string(sizes_.size()) + " prompts)");
  }
}

void VocabShape::check(PromptId x, ResponseId y) const {
  check(x);
  if (y >= sizes_[x]) {
    throw IndexError("response index " + std::to_string(y) + " out of range for prompt " +
                     std::to_string(x) + " (" + std::to_string(sizes_[x]) + " responses)");
  }
}

void VocabShape::require_same(const VocabShape& other, const char* what) const {
  if (*this != other) throw ShapeError(std::string(what) + ": vocabulary shape mismatch");
}

// --- Policy -----------------------------------------------------------------

Policy::Policy(PerPrompt<double> logits, PerPrompt<double> probs)
    : shape_(VocabShape::of(logits)), logits_(std::move(logits)), probs_(std::move(probs)) {}

Policy Policy::from_logits(PerPrompt<double> logits) {
  PerPrompt<double> probs;
  probs.reserve(logits.size());
  for (std::size_t x = 0; x < logits.size(); ++x) probs.push_back(softmax_row(logits[x], x));
  return Policy(std::move(logits), std::move(probs));
}

Policy Policy::from_probs(const PerPrompt<double>& probs) {
  PerPrompt<double> logits;
  logits.reserve(probs.size());
  for (std::size_t x = 0; x < probs.size(); ++x) {
    std::vector<double> row;
    row.reserve(probs[x].size());
    for (double p : probs[x]) {
      if (!(p >= 0.0) || !std::isfinite(p)) {
        throw DomainError("probability for prompt " + std::to_string(x) +
                          " must be finite and nonnegative");
      }
      row.push_back(p > 0.0 ? std::log(p) : kNegInf);
    }
    logits.push_back(std::move(row));
  }
  return from_logits(std::move(logits));
}

Policy Policy::uniform(const VocabShape& shape) {
  PerPrompt<double> logits;
  for (std::size_t k : shape.sizes()) logits.emplace_back(k, 0.0);
  return from_logits(std::move(logits));
}

double Policy::prob(PromptId x, ResponseId y) const {
  shape_.check(x, y);
  return probs_[x][y];
}

std::span<const double> Policy::probs(PromptId x) const {
  shape_.check(x);
  return probs_[x];
}

std::span<const double> Policy::logits(PromptId x) const {
  shape_.check(x);
  return logits_[x];
}

bool Policy::strictly_positive() const noexcept { return min_prob() > 0.0; }

double Policy::min_prob() const noexcept {
  double m = 1.0;
  for (const auto& row : probs_)
    for (double p : row) m = std::min(m, p);
  return m;
}

// --- RewardTable ------------------------------------------------------------

RewardTable::RewardTable(PerPrompt<double> values, double bound)
    : shape_(VocabShape::of(values)), values_(std::move(values)), bound_(bound) {
  if (!(bound_ >= 0.0) || !std::isfinite(bound_)) {
    throw DomainError("reward bound must be finite and nonnegative");
  }
  for (const auto& row : values_) {
    for (double r : row) {
      if (!std::isfinite(r) || std::abs(r) > bound_) {
        throw DomainError("reward " + std::to_string(r) + " violates declared bound " +
                          std::to_string(bound_));
      }
    }
  }
}

RewardTable RewardTable::tight(PerPrompt<double> values) {
  double bound = 0.0;
  for (const auto& row : values)
    for (double r : row) bound = std::max(bound, std::abs(r));
  return RewardTable(std::move(values), bound);
}

double RewardTable::operator()(PromptId x, ResponseId y) const {
  shape_.check(x, y);
  return values_[x][y];
}

double sigmoid(double t) noexcept {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// --- PreferenceModel --------------------------------------------------------

PreferenceModel PreferenceModel::bradley_terry(RewardTable reward) {
  PreferenceModel m;
  m.kind_ = Kind::kBradleyTerry;
  m.shape_ = reward.shape();
  m.reward_ = std::move(reward);
  return m;
}

namespace {

VocabShape shape_of_matrices(const PerPrompt<double>& matrices) {
  std::vector<std::size_t> sizes;
  for (std::size_t x = 0; x < matrices.size(); ++x) {
    const std::size_t n = matrices[x].size();
    const auto k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (k * k != n || k == 0) {
      throw ShapeError("preference matrix for prompt " + std::to_string(x) +
                       " is not square");
    }
    sizes.push_back(k);
  }
  return VocabShape(std::move(sizes));
}

}  // namespace

PreferenceModel PreferenceModel::table(PerPrompt<double> matrices) {
  PreferenceModel m;
  m.kind_ = Kind::kTable;
  m.shape_ = shape_of_matrices(matrices);
  for (std::size_t x = 0; x < matrices.size(); ++x) {
    const std::size_t k = m.shape_.sizes()[x];
    const auto& g = matrices[x];
    for (std::size_t i = 0; i < k; ++i) {
      if (std::abs(g[i * k + i] - 0.5) > kSymmetryTol) {
        throw DomainError("preference table diagonal must be 1/2");
      }
      for (std::size_t j = 0; j < k; ++j) {
        const double v = g[i * k + j];
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("preference value outside [0, 1]");
        if (std::abs(v + g[j * k + i] - 1.0) > kSymmetryTol) {
          throw DomainError("preference table is not antisymmetric at prompt " +
                            std::to_string(x));
        }
      }
    }
  }
  m.matrices_ = std::move(matrices);
  return m;
}

PreferenceModel PreferenceModel::from_upper_triangle(const VocabShape& shape,
                                                     const PerPrompt<double>& upper) {
  if (upper.size() != shape.prompts()) throw ShapeError("upper-triangle prompt count");
  PerPrompt<double> matrices(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x) {
    const std::size_t k = shape.sizes()[x];
    if (upper[x].size() != k * (k - 1) / 2) {
      throw ShapeError("upper-triangle length for prompt " + std::to_string(x));
    }
    auto& g = matrices[x];
    g.assign(k * k, 0.5);
    std::size_t next = 0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = i + 1; j < k; ++j) {
        const double v = upper[x][next++];
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("preference value outside [0, 1]");
        g[i * k + j] = v;
        g[j * k + i] = 1.0 - v;
      }
    }
  }
  return table(std::move(matrices));
}

PreferenceModel PreferenceModel::misspecified_table(PerPrompt<double> matrices,
                                                    std::optional<std::uint64_t> seed) {
  PreferenceModel m;
  m.kind_ = Kind::kTable;
  m.shape_ = shape_of_matrices(matrices);
  for (const auto& g : matrices)
    for (double v : g)
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("preference value outside [0, 1]");
  m.matrices_ = std::move(matrices);
  m.misspecified_ = true;
  m.seed_ = seed;
  return m;
}

PreferenceModel PreferenceModel::constant(const VocabShape& shape, double c) {
  if (c != 0.5) {
    throw DomainError("a valid constant preference model must equal 1/2; use "
                      "misspecified_constant for other values");
  }
  PreferenceModel m;
  m.kind_ = Kind::kConstant;
  m.shape_ = shape;
  m.constant_ = c;
  return m;
}

PreferenceModel PreferenceModel::misspecified_constant(const VocabShape& shape, double c) {
  if (!(c >= 0.0 && c <= 1.0)) throw DomainError("constant preference outside [0, 1]");
  PreferenceModel m;
  m.kind_ = Kind::kConstant;
  m.shape_ = shape;
  m.constant_ = c;
  m.misspecified_ = true;
  return m;
}

double PreferenceModel::operator()(PromptId x, ResponseId y1, ResponseId y2) const {
  shape_.check(x, y1);
  shape_.check(x, y2);
  switch (kind_) {
    case Kind::kBradleyTerry: {
      const auto& r = reward_->values()[x];
      return sigmoid(r[y1] - r[y2]);
    }
    case Kind::kTable:
      return matrices_[x][y1 * shape_.sizes()[x] + y2];
    case Kind::kConstant:
      return constant_;
  }
  return constant_;
}

std::span<const double> PreferenceModel::matrix(PromptId x) const {
  if (kind_ != Kind::kTable) throw UsageError("matrix() requires a table model");
  shape_.check(x);
  return matrices_[x];
}

// --- PreferenceDataset ------------------------------------------------------

PreferenceDataset::PreferenceDataset(std::vector<PreferenceTuple> tuples, std::uint64_t seed,
                                     bool augmented)
    : tuples_(std::move(tuples)), seed_(seed), augmented_(augmented) {
  for (const auto& t : tuples_) {
    if (t.z != 0 && t.z != 1) throw UsageError("preference label must be 0 or 1");
  }
  if (augmented_) {
    if (tuples_.size() % 2 != 0) throw UsageError("augmented dataset must have even length");
    for (std::size_t i = 0; i < tuples_.size(); i += 2) {
      const auto& a = tuples_[i];
      const auto& b = tuples_[i + 1];
      if (b.prompt != a.prompt || b.y1 != a.y2 || b.y2 != a.y1 || b.z != 1 - a.z) {
        throw UsageError("augmented dataset: tuple " + std::to_string(i + 1) +
                         " is not the swap of its predecessor");
      }
    }
  }
}

void PreferenceDataset::check_against(const VocabShape& shape) const {
  for (const auto& t : tuples_) {
    shape.check(t.prompt, t.y1);
    shape.check(t.prompt, t.y2);
  }
}

// --- Environment ------------------------------------------------------------

Environment::Environment(std::vector<std::string> prompts, std::vector<double> prompt_weights,
                         PerPrompt<std::string> vocab, Policy ref_policy,
                         PreferenceModel preference)
    : prompts_(std::move(prompts)),
      weights_(std::move(prompt_weights)),
      vocab_(std::move(vocab)),
      shape_(VocabShape::of(vocab_)),
      ref_(std::move(ref_policy)),
      preference_(std::move(preference)) {
  if (prompts_.size() != weights_.size() || prompts_.size() != vocab_.size()) {
    throw ShapeError("environment: prompts, weights and vocab disagree in length");
  }
  if (prompts_.empty()) throw UsageError("environment needs at least one prompt");
  double total = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DomainError("prompt weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("prompt weights must sum to 1");
  shape_.require_same(ref_.shape(), "environment reference policy");
  shape_.require_same(preference_.shape(), "environment preference model");
  if (!ref_.strictly_positive()) {
    throw DomainError("reference policy must give every response positive probability");
  }
}

double Environment::coverage(const Policy& policy) const {
  shape_.require_same(policy.shape(), "coverage");
  double worst = 0.0;
  for (std::size_t x = 0; x < shape_.prompts(); ++x) {
    for (std::size_t y = 0; y < shape_.sizes()[x]; ++y) {
      worst = std::max(worst, policy.all_probs()[x][y] / ref_.all_probs()[x][y]);
    }
  }
  return worst;
}

std::size_t Environment::enumeration_terms() const noexcept {
  std::size_t terms = 0;
  for (std::size_t k : shape_.sizes()) terms += 2 * k * k;
  return terms;
}

std::vector<std::string> default_prompt_names(std::size_t prompts) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < prompts; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

PerPrompt<std::string> default_vocab_names(const VocabShape& shape) {
  PerPrompt<std::string> names(shape.prompts());
  for (std::size_t x = 0; x < shape.prompts(); ++x)
    for (std::size_t y = 0; y < shape.sizes()[x]; ++y) names[x].push_back("y" + std::to_string(y));
  return names;
}

}  // namespace drpo
