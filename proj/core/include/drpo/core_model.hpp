#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drpo {

using PromptId = std::size_t;
using ResponseId = std::size_t;

// Values indexed [prompt][response].
template <typename T>
using PerPrompt = std::vector<std::vector<T>>;

// Number of candidate responses for each prompt.
class VocabShape {
 public:
  VocabShape() = default;
  explicit VocabShape(std::vector<std::size_t> sizes);

  template <typename T>
  static VocabShape of(const PerPrompt<T>& table) {
    std::vector<std::size_t> sizes;
    sizes.reserve(table.size());
    for (const auto& row : table) sizes.push_back(row.size());
    return VocabShape(std::move(sizes));
  }

  std::size_t prompts() const noexcept { return sizes_.size(); }
  std::size_t responses(PromptId x) const;
  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }

  // Throws IndexError when out of range.
  void check(PromptId x) const;
  void check(PromptId x, ResponseId y) const;
  // Throws ShapeError naming `what` when the shapes differ.
  void require_same(const VocabShape& other, const char* what) const;

  friend bool operator==(const VocabShape&, const VocabShape&) = default;

 private:
  std::vector<std::size_t> sizes_;
};

// Tabular softmax policy. Logits are finite or -infinity (an exact zero);
// each prompt needs at least one finite logit.
class Policy {
 public:
  static Policy from_logits(PerPrompt<double> logits);
  // Rows are normalized, so counts work too. Zeros become -infinity.
  static Policy from_probs(const PerPrompt<double>& probs);
  static Policy uniform(const VocabShape& shape);

  const VocabShape& shape() const noexcept { return shape_; }
  double prob(PromptId x, ResponseId y) const;
  std::span<const double> probs(PromptId x) const;
  std::span<const double> logits(PromptId x) const;
  const PerPrompt<double>& all_logits() const noexcept { return logits_; }
  const PerPrompt<double>& all_probs() const noexcept { return probs_; }

  bool strictly_positive() const noexcept;
  double min_prob() const noexcept;

 private:
  Policy(PerPrompt<double> logits, PerPrompt<double> probs);

  VocabShape shape_;
  PerPrompt<double> logits_;
  PerPrompt<double> probs_;
};

// Per-prompt, per-response reward with a declared absolute bound.
class RewardTable {
 public:
  RewardTable(PerPrompt<double> values, double bound);
  // Declares the bound as the largest absolute entry.
  static RewardTable tight(PerPrompt<double> values);

  const VocabShape& shape() const noexcept { return shape_; }
  double operator()(PromptId x, ResponseId y) const;
  const PerPrompt<double>& values() const noexcept { return values_; }
  double bound() const noexcept { return bound_; }

 private:
  VocabShape shape_;
  PerPrompt<double> values_;
  double bound_;
};

double sigmoid(double t) noexcept;

// Pairwise preference g(x, y1, y2) = P(y1 beats y2 | x).
//
// Bradley-Terry and validated tables are antisymmetric with a 1/2 diagonal.
// Tables or constants built through the `misspecified_*` factories waive
// that and carry the flag, so they can stand in as deliberately wrong
// nuisances.
class PreferenceModel {
 public:
  enum class Kind { kBradleyTerry, kTable, kConstant };

  static PreferenceModel bradley_terry(RewardTable reward);
  // Full k x k matrices per prompt; throws DomainError unless antisymmetric
  // within 1e-12 with diagonal 1/2 and entries in [0, 1].
  static PreferenceModel table(PerPrompt<double> matrices);
  // Per prompt, values for the ordered pairs (i, j) with i < j in row-major
  // order; the rest is filled by antisymmetry.
  static PreferenceModel from_upper_triangle(const VocabShape& shape,
                                             const PerPrompt<double>& upper);
  static PreferenceModel misspecified_table(PerPrompt<double> matrices,
                                            std::optional<std::uint64_t> seed);
  // c must be 1/2; other values need misspecified_constant.
  static PreferenceModel constant(const VocabShape& shape, double c);
  static PreferenceModel misspecified_constant(const VocabShape& shape, double c);

  Kind kind() const noexcept { return kind_; }
  const VocabShape& shape() const noexcept { return shape_; }
  bool misspecified() const noexcept { return misspecified_; }
  std::optional<std::uint64_t> seed() const noexcept { return seed_; }

  double operator()(PromptId x, ResponseId y1, ResponseId y2) const;

  // Reward table for Bradley-Terry models, nullptr otherwise.
  const RewardTable* reward() const noexcept {
    return reward_ ? &*reward_ : nullptr;
  }
  // Row-major k x k matrix for prompt x (tables only).
  std::span<const double> matrix(PromptId x) const;
  double constant_value() const noexcept { return constant_; }

 private:
  PreferenceModel() = default;

  Kind kind_ = Kind::kConstant;
  VocabShape shape_;
  std::optional<RewardTable> reward_;
  PerPrompt<double> matrices_;
  double constant_ = 0.5;
  bool misspecified_ = false;
  std::optional<std::uint64_t> seed_;
};

struct PreferenceTuple {
  PromptId prompt = 0;
  ResponseId y1 = 0;
  ResponseId y2 = 0;
  int z = 0;  // 1 when y1 is preferred

  friend bool operator==(const PreferenceTuple&, const PreferenceTuple&) = default;
};

class PreferenceDataset {
 public:
  PreferenceDataset() = default;
  // Throws UsageError if `augmented` and the swap layout is violated, or if
  // any label is not 0/1.
  PreferenceDataset(std::vector<PreferenceTuple> tuples, std::uint64_t seed,
                    bool augmented);

  const std::vector<PreferenceTuple>& tuples() const noexcept { return tuples_; }
  std::size_t size() const noexcept { return tuples_.size(); }
  bool empty() const noexcept { return tuples_.empty(); }
  const PreferenceTuple& operator[](std::size_t i) const { return tuples_[i]; }
  std::uint64_t seed() const noexcept { return seed_; }
  bool augmented() const noexcept { return augmented_; }

  void check_against(const VocabShape& shape) const;

  friend bool operator==(const PreferenceDataset&, const PreferenceDataset&) = default;

 private:
  std::vector<PreferenceTuple> tuples_;
  std::uint64_t seed_ = 0;
  bool augmented_ = false;
};

// The simulation ground truth.
class Environment {
 public:
  Environment(std::vector<std::string> prompts, std::vector<double> prompt_weights,
              PerPrompt<std::string> vocab, Policy ref_policy,
              PreferenceModel preference);

  const VocabShape& shape() const noexcept { return shape_; }
  const std::vector<std::string>& prompts() const noexcept { return prompts_; }
  const std::vector<double>& prompt_weights() const noexcept { return weights_; }
  const PerPrompt<std::string>& vocab() const noexcept { return vocab_; }
  const Policy& ref_policy() const noexcept { return ref_; }
  const PreferenceModel& preference() const noexcept { return preference_; }

  // Realized coverage: max over (x, y) of policy(y|x) / ref(y|x).
  double coverage(const Policy& policy) const;
  // Number of (x, y1, y2, z) outcomes an exact enumeration visits.
  std::size_t enumeration_terms() const noexcept;

 private:
  std::vector<std::string> prompts_;
  std::vector<double> weights_;
  PerPrompt<std::string> vocab_;
  VocabShape shape_;
  Policy ref_;
  PreferenceModel preference_;
};

// Builds "x0", "x1", ... and "y0", "y1", ... registries for a shape.
std::vector<std::string> default_prompt_names(std::size_t prompts);
PerPrompt<std::string> default_vocab_names(const VocabShape& shape);

}  // namespace drpo
