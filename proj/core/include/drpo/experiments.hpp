#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "drpo/core_model.hpp"
#include "drpo/environments.hpp"
#include "drpo/estimators.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/serialization.hpp"
#include "drpo/train.hpp"

namespace drpo {

struct Variant {
  std::string name;
  NuisanceSpec nuisance;
  // Overrides the estimator's clip_max when set.
  std::optional<double> clip_max;
};

struct SweepConfig {
  SweepConfig(std::string env_label, Environment env, Policy target);

  std::string experiment = "sweep";
  std::string env_label;
  Environment env;
  Policy target;
  std::vector<std::size_t> sample_sizes{100, 200, 400, 800, 1500};
  std::size_t replications = 500;
  std::vector<Variant> variants;
  EstimatorConfig estimator;
  std::uint64_t base_seed = 0;
  // Fitted nuisances use an independent dataset of round(fit_multiplier * n)
  // tuples, or split halves of the evaluation data when cross_fit is set.
  double fit_multiplier = 1.0;
  bool cross_fit = false;
  FitOptions fit;
  unsigned threads = 0;

  void validate() const;
};

struct SweepCell {
  std::string experiment;
  std::string variant;
  std::size_t n = 0;
  std::size_t replications = 0;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double variance = 0.0;  // 1/R normalization
  double mse = 0.0;
  double seb = 0.0;
  double mse_over_seb = 0.0;
  double ci_half_width = 0.0;
  std::vector<double> estimates;
};

struct MethodCell {
  std::string method;
  std::string cell;
  std::size_t replications = 0;
  double regret = 0.0;     // mean over replications
  double regret_ci = 0.0;  // 1.96 sqrt(var / R)
  std::vector<double> regrets;
  // (opponent, mean exact win rate); opponents are the other methods of the
  // cell plus "reference" and "optimal".
  std::vector<std::pair<std::string, double>> win_rates;
};

struct RunReport {
  std::string experiment;
  std::string ci_method = "normal approximation, 1.96 sqrt(variance / replications)";
  std::vector<SweepCell> cells;
  std::vector<MethodCell> methods;
};

// DR estimates over `replications` dataset draws per (variant, n), scored
// against the exact p*(target). Replication r of variant v at size index j
// draws from seed derive_seed(base_seed, {v, j, r}).
RunReport mse_sweep(const SweepConfig& cfg);

// mse_sweep restricted to configs containing the (true, true) variant.
RunReport efficiency_study(const SweepConfig& cfg);

// The four-way nuisance grid on a test environment: both true, wrong g,
// wrong ref, both wrong.
std::vector<Variant> four_way_variants(const TestEnvironment& env);

enum class Method { kDrpoBt, kDrpoGpm, kDpo, kPpo };
std::string to_string(Method m);
Method parse_method(const std::string& name);

struct RewardTrue {};
struct RewardBtMle {};
struct RewardPerturbed {
  double sd = 1.0;
};
// Best Bradley-Terry approximation of the environment's preferences.
struct RewardPopulationBt {};
using RewardSource = std::variant<RewardTrue, RewardBtMle, RewardPerturbed, RewardPopulationBt>;
std::string describe(const RewardSource& r);
RewardSource parse_reward_source(const std::string& text);

// One nuisance setting of a comparison. DRPO-BT and PPO use the reward
// source; DRPO-GPM uses `gpm` (true, gpm or a misspecifier).
struct CompareCell {
  std::string name;
  RewardSource reward = RewardTrue{};
  GSource gpm = GGpmTable{};
  RefSource ref = RefTrue{};
};

struct CompareConfig {
  CompareConfig(std::string env_label, Environment env);

  std::string env_label;
  Environment env;
  std::vector<Method> methods{Method::kDrpoBt, Method::kDrpoGpm, Method::kDpo, Method::kPpo};
  std::vector<CompareCell> cells;
  std::size_t n = 1000;
  std::size_t replications = 20;
  TrainConfig drpo;
  DpoConfig dpo;
  double ppo_beta = 0.04;
  std::uint64_t seed = 0;
  double fit_multiplier = 1.0;
  FitOptions fit;
  unsigned threads = 0;

  void validate() const;
};

// Replication r of cell c trains every method on data drawn from
// derive_seed(seed, {r}) with nuisances fitted on an independent draw.
RunReport optimization_comparison(const CompareConfig& cfg);

// Paired difference a - b of regrets over replications with its normal
// 95% half-width.
struct PairedGap {
  double mean = 0.0;
  double half_width = 0.0;
};
PairedGap paired_regret_gap(const MethodCell& a, const MethodCell& b);

const MethodCell& find_method_cell(const RunReport& report, const std::string& method,
                                   const std::string& cell);

// results.csv: experiment,variant,n,replications,mean,bias,variance,mse,seb,
// mse_over_seb,ci_half_width
void write_results_csv(std::ostream& out, const RunReport& report);
// method,cell,regret,regret_ci,opponent,win_rate
void write_comparison_csv(std::ostream& out, const RunReport& report);
Json to_json(const RunReport& report);

// Config documents. `env` names a test environment (E1..E4) or an
// environment JSON path; relative paths resolve against `base_dir`.
SweepConfig sweep_config_from_json(const Json& doc, const std::string& base_dir = ".");
CompareConfig compare_config_from_json(const Json& doc, const std::string& base_dir = ".");

}  // namespace drpo
