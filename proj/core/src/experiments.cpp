#include "drpo/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "drpo/datagen.hpp"
#include "drpo/errors.hpp"
#include "drpo/oracle.hpp"
#include "drpo/parallel.hpp"
#include "drpo/rng.hpp"

namespace drpo {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr std::uint64_t kFitTag = 0x464954;
constexpr double kZ95 = 1.96;

struct Summary {
  double mean = 0.0;
  double variance = 0.0;
};

Summary summarize(const std::vector<double>& v) {
  Summary s;
  for (double e : v) s.mean += e;
  s.mean /= static_cast<double>(v.size());
  for (double e : v) s.variance += (e - s.mean) * (e - s.mean);
  s.variance /= static_cast<double>(v.size());
  return s;
}

PreferenceDataset slice(const PreferenceDataset& data, std::size_t begin, std::size_t end) {
  std::vector<PreferenceTuple> part(data.tuples().begin() + static_cast<std::ptrdiff_t>(begin),
                                    data.tuples().begin() + static_cast<std::ptrdiff_t>(end));
  return PreferenceDataset(std::move(part), data.seed(), false);
}

std::size_t fit_size(double multiplier, std::size_t n) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(multiplier * static_cast<double>(n))));
}

double one_estimate(const SweepConfig& cfg, const Variant& variant, std::size_t n,
                    std::uint64_t seed) {
  const PreferenceDataset data = sample_dataset(cfg.env, n, seed);
  EstimatorConfig ec = cfg.estimator;
  if (variant.clip_max) ec.clip_max = variant.clip_max;
  if (auto* mc = std::get_if<DmMonteCarlo>(&ec.dm_mode)) mc->seed = derive_seed(seed, {0x4D43});

  const bool needs_fit = g_needs_fit(variant.nuisance.g) || ref_needs_fit(variant.nuisance.ref);
  if (!needs_fit) {
    const Nuisances nu = resolve_nuisances(cfg.env, variant.nuisance, nullptr, cfg.fit);
    return estimate(data, cfg.target, nu.ref_hat, nu.g_hat, ec).value;
  }
  if (cfg.cross_fit) {
    if (n < 2) throw UsageError("cross-fitting needs at least two tuples");
    const std::size_t half = n / 2;
    const PreferenceDataset a = slice(data, 0, half);
    const PreferenceDataset b = slice(data, half, n);
    const Nuisances from_a = resolve_nuisances(cfg.env, variant.nuisance, &a, cfg.fit);
    const Nuisances from_b = resolve_nuisances(cfg.env, variant.nuisance, &b, cfg.fit);
    const double on_b = estimate(b, cfg.target, from_a.ref_hat, from_a.g_hat, ec).value;
    const double on_a = estimate(a, cfg.target, from_b.ref_hat, from_b.g_hat, ec).value;
    return (on_a * static_cast<double>(a.size()) + on_b * static_cast<double>(b.size())) /
           static_cast<double>(n);
  }
  const PreferenceDataset fit_data =
      sample_dataset(cfg.env, fit_size(cfg.fit_multiplier, n), derive_seed(seed, {kFitTag}));
  const Nuisances nu = resolve_nuisances(cfg.env, variant.nuisance, &fit_data, cfg.fit);
  return estimate(data, cfg.target, nu.ref_hat, nu.g_hat, ec).value;
}

RunReport run_sweep(const SweepConfig& cfg, const std::string& experiment) {
  cfg.validate();
  check_enumeration_budget(cfg.env);
  const double truth = total_preference_exact(cfg.env, cfg.target);
  const double psi_var = psi_variance_exact(cfg.env, cfg.target);

  const std::size_t V = cfg.variants.size();
  const std::size_t J = cfg.sample_sizes.size();
  const std::size_t R = cfg.replications;
  std::vector<double> estimates(V * J * R);
  parallel_for(estimates.size(), resolve_threads(cfg.threads), [&](std::size_t job) {
    const std::size_t r = job % R;
    const std::size_t j = (job / R) % J;
    const std::size_t v = job / (R * J);
    estimates[job] = one_estimate(cfg, cfg.variants[v], cfg.sample_sizes[j],
                                  derive_seed(cfg.base_seed, {v, j, r}));
  });

  RunReport report;
  report.experiment = experiment;
  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t j = 0; j < J; ++j) {
      SweepCell cell;
      cell.experiment = experiment;
      cell.variant = cfg.variants[v].name;
      cell.n = cfg.sample_sizes[j];
      cell.replications = R;
      cell.truth = truth;
      const auto first = estimates.begin() + static_cast<std::ptrdiff_t>((v * J + j) * R);
      cell.estimates.assign(first, first + static_cast<std::ptrdiff_t>(R));
      const Summary s = summarize(cell.estimates);
      cell.mean = s.mean;
      cell.bias = s.mean - truth;
      cell.variance = s.variance;
      double sq = 0.0;
      for (double e : cell.estimates) sq += (e - truth) * (e - truth);
      cell.mse = sq / static_cast<double>(R);
      cell.seb = psi_var / static_cast<double>(cell.n);
      cell.mse_over_seb = cell.seb > 0.0 ? cell.mse / cell.seb
                                         : std::numeric_limits<double>::quiet_NaN();
      cell.ci_half_width = kZ95 * std::sqrt(s.variance / static_cast<double>(R));
      report.cells.push_back(std::move(cell));
    }
  }
  return report;
}

}  // namespace

SweepConfig::SweepConfig(std::string label, Environment e, Policy t)
    : env_label(std::move(label)), env(std::move(e)), target(std::move(t)) {}

void SweepConfig::validate() const {
  target.shape().require_same(env.shape(), "sweep target policy");
  if (replications < 2) throw UsageError("sweep: replications must be at least 2");
  if (sample_sizes.empty()) throw UsageError("sweep: no sample sizes");
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    if (sample_sizes[i] == 0) throw UsageError("sweep: sample sizes must be positive");
    if (i > 0 && sample_sizes[i] <= sample_sizes[i - 1])
      throw UsageError("sweep: sample sizes must be strictly increasing");
  }
  if (variants.empty()) throw UsageError("sweep: no variants");
  for (const auto& v : variants)
    if (v.clip_max && !(*v.clip_max > 0.0))
      throw UsageError("sweep: variant '" + v.name + "' clip_max must be positive");
  if (!(fit_multiplier > 0.0)) throw UsageError("sweep: fit_multiplier must be positive");
  estimator.validate();
}

RunReport mse_sweep(const SweepConfig& cfg) { return run_sweep(cfg, cfg.experiment); }

RunReport efficiency_study(const SweepConfig& cfg) {
  const bool has_true_true = std::any_of(cfg.variants.begin(), cfg.variants.end(), [](const Variant& v) {
    return std::holds_alternative<GTrue>(v.nuisance.g) &&
           std::holds_alternative<RefTrue>(v.nuisance.ref);
  });
  if (!has_true_true) throw UsageError("efficiency study needs a (true g, true ref) variant");
  return run_sweep(cfg, "efficiency");
}

std::vector<Variant> four_way_variants(const TestEnvironment& t) {
  const RefWrong wrong{t.name + ".wrong_ref", t.wrong_ref};
  const GUniformRandom wrong_g{t.wrong_g_seed};
  return {
      {"true_g,true_ref", {GTrue{}, RefTrue{}}, 100.0},
      {"wrong_g,true_ref", {wrong_g, RefTrue{}}, 100.0},
      {"true_g,wrong_ref", {GTrue{}, wrong}, 40.0},
      {"wrong_g,wrong_ref", {wrong_g, wrong}, 40.0},
  };
}

std::string to_string(Method m) {
  switch (m) {
    case Method::kDrpoBt: return "drpo_bt";
    case Method::kDrpoGpm: return "drpo_gpm";
    case Method::kDpo: return "dpo";
    case Method::kPpo: return "ppo";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "drpo_bt") return Method::kDrpoBt;
  if (name == "drpo_gpm") return Method::kDrpoGpm;
  if (name == "dpo") return Method::kDpo;
  if (name == "ppo") return Method::kPpo;
  throw UsageError("unknown method '" + name + "' (expected drpo_bt, drpo_gpm, dpo or ppo)");
}

std::string describe(const RewardSource& r) {
  return std::visit(Overloaded{
                        [](const RewardTrue&) { return std::string("true"); },
                        [](const RewardBtMle&) { return std::string("bt_mle"); },
                        [](const RewardPerturbed& p) { return "perturbed:" + format_number(p.sd); },
                        [](const RewardPopulationBt&) { return std::string("population_bt"); },
                    },
                    r);
}

RewardSource parse_reward_source(const std::string& text) {
  if (text == "true") return RewardTrue{};
  if (text == "bt_mle") return RewardBtMle{};
  if (text == "population_bt") return RewardPopulationBt{};
  if (text.rfind("perturbed:", 0) == 0) {
    std::istringstream in(text.substr(10));
    in.imbue(std::locale::classic());
    double sd = 0.0;
    if (in >> sd && in.eof() && sd >= 0.0) return RewardPerturbed{sd};
  }
  throw UsageError("unknown reward source '" + text +
                   "' (expected true, bt_mle, perturbed:SD or population_bt)");
}

CompareConfig::CompareConfig(std::string label, Environment e)
    : env_label(std::move(label)), env(std::move(e)) {}

void CompareConfig::validate() const {
  if (methods.empty()) throw UsageError("compare: no methods");
  if (cells.empty()) throw UsageError("compare: no cells");
  if (n == 0) throw UsageError("compare: n must be positive");
  if (replications < 2) throw UsageError("compare: replications must be at least 2");
  dpo.validate();
  if (!(ppo_beta > 0.0)) throw UsageError("compare: ppo beta must be positive");
  if (!(fit_multiplier > 0.0)) throw UsageError("compare: fit_multiplier must be positive");
  drpo.validate();
  const bool bt = env.preference().kind() == PreferenceModel::Kind::kBradleyTerry;
  for (const auto& c : cells) {
    if (std::holds_alternative<RewardTrue>(c.reward) && !bt) {
      const bool uses_reward = std::any_of(methods.begin(), methods.end(), [](Method m) {
        return m == Method::kDrpoBt || m == Method::kPpo;
      });
      if (uses_reward)
        throw UsageError("compare: cell '" + c.name +
                         "' asks for the true reward of a non-Bradley-Terry environment");
    }
  }
}

RunReport optimization_comparison(const CompareConfig& cfg) {
  cfg.validate();
  check_enumeration_budget(cfg.env);
  const auto& env = cfg.env;
  const auto& shape = env.shape();
  const OptimalPolicy optimum = optimal_policy_enumerate(env);
  const bool needs_population = std::any_of(cfg.cells.begin(), cfg.cells.end(), [](const auto& c) {
    return std::holds_alternative<RewardPopulationBt>(c.reward);
  });
  const std::optional<RewardTable> population =
      needs_population ? std::optional<RewardTable>(fit_reward_bt_population(env)) : std::nullopt;

  const std::size_t M = cfg.methods.size();
  const std::size_t C = cfg.cells.size();
  const std::size_t R = cfg.replications;
  const std::size_t O = M + 2;  // other methods, reference, optimal
  std::vector<double> regrets(C * R * M);
  std::vector<double> wins(C * R * M * O);

  parallel_for(C * R, resolve_threads(cfg.threads), [&](std::size_t job) {
    const std::size_t c = job / R;
    const std::size_t r = job % R;
    const CompareCell& cell = cfg.cells[c];
    const std::uint64_t seed = derive_seed(cfg.seed, {r});
    const PreferenceDataset data = sample_dataset(env, cfg.n, seed);

    const bool fit = std::holds_alternative<RewardBtMle>(cell.reward) || g_needs_fit(cell.gpm) ||
                     ref_needs_fit(cell.ref);
    std::optional<PreferenceDataset> fit_data;
    if (fit) fit_data = sample_dataset(env, fit_size(cfg.fit_multiplier, cfg.n), derive_seed(seed, {kFitTag}));
    const Nuisances nu = resolve_nuisances(env, NuisanceSpec{cell.gpm, cell.ref},
                                           fit_data ? &*fit_data : nullptr, cfg.fit);

    auto reward = [&]() -> std::optional<RewardTable> {
      return std::visit(
          Overloaded{
              [&](const RewardTrue&) -> std::optional<RewardTable> {
                if (env.preference().kind() != PreferenceModel::Kind::kBradleyTerry) return std::nullopt;
                return *env.preference().reward();
              },
              [&](const RewardBtMle&) -> std::optional<RewardTable> {
                return fit_reward_bt_mle(shape, *fit_data, cfg.fit.bt_l2, cfg.fit.bt_steps, cfg.fit.bt_lr).reward;
              },
              [&](const RewardPerturbed& p) -> std::optional<RewardTable> {
                if (!env.preference().reward()) throw UsageError("perturbed reward needs a Bradley-Terry environment");
                const RewardTable& truth = *env.preference().reward();
                Philox4x32 rng(derive_seed(seed, {0x5045, c}), 0);
                PerPrompt<double> values = truth.values();
                for (auto& row : values)
                  for (double& v : row) v += p.sd * rng.normal();
                return RewardTable::tight(std::move(values));
              },
              [&](const RewardPopulationBt&) -> std::optional<RewardTable> { return population; },
          },
          cell.reward);
    }();

    std::vector<Policy> policies;
    policies.reserve(M);
    for (std::size_t m = 0; m < M; ++m) {
      TrainConfig tc = cfg.drpo;
      tc.seed = derive_seed(seed, {0x4452, c, m});
      switch (cfg.methods[m]) {
        case Method::kDrpoBt: {
          const auto g_bt = PreferenceModel::bradley_terry(*reward);
          policies.push_back(drpo_train(data, shape, nu.ref_hat, g_bt, tc, nu.ref_hat).policy);
          break;
        }
        case Method::kDrpoGpm:
          policies.push_back(drpo_train(data, shape, nu.ref_hat, nu.g_hat, tc, nu.ref_hat).policy);
          break;
        case Method::kDpo:
          policies.push_back(
              dpo_train(data, nu.ref_hat, cfg.dpo, nu.ref_hat).policy);
          break;
        case Method::kPpo:
          policies.push_back(ppo_closed_form(shape, *reward, nu.ref_hat, cfg.ppo_beta));
          break;
      }
    }
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t base = (c * R + r) * M + m;
      regrets[base] = optimum.total_preference - total_preference_exact(env, policies[m]);
      for (std::size_t o = 0; o < M; ++o) wins[base * O + o] = win_rate_exact(env, policies[m], policies[o]);
      wins[base * O + M] = win_rate_exact(env, policies[m], env.ref_policy());
      wins[base * O + M + 1] = win_rate_exact(env, policies[m], optimum.policy);
    }
  });

  RunReport report;
  report.experiment = "compare";
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t m = 0; m < M; ++m) {
      MethodCell mc;
      mc.method = to_string(cfg.methods[m]);
      mc.cell = cfg.cells[c].name;
      mc.replications = R;
      for (std::size_t r = 0; r < R; ++r) mc.regrets.push_back(regrets[(c * R + r) * M + m]);
      const Summary s = summarize(mc.regrets);
      mc.regret = s.mean;
      mc.regret_ci = kZ95 * std::sqrt(s.variance / static_cast<double>(R));
      for (std::size_t o = 0; o < O; ++o) {
        if (o == m) continue;
        double w = 0.0;
        for (std::size_t r = 0; r < R; ++r) w += wins[((c * R + r) * M + m) * O + o];
        const std::string name = o < M ? to_string(cfg.methods[o]) : (o == M ? "reference" : "optimal");
        mc.win_rates.emplace_back(name, w / static_cast<double>(R));
      }
      report.methods.push_back(std::move(mc));
    }
  }
  return report;
}

PairedGap paired_regret_gap(const MethodCell& a, const MethodCell& b) {
  if (a.regrets.size() != b.regrets.size() || a.regrets.size() < 2)
    throw UsageError("paired_regret_gap: mismatched replications");
  std::vector<double> d(a.regrets.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.regrets[i] - b.regrets[i];
  const Summary s = summarize(d);
  return {s.mean, kZ95 * std::sqrt(s.variance / static_cast<double>(d.size()))};
}

const MethodCell& find_method_cell(const RunReport& report, const std::string& method,
                                   const std::string& cell) {
  for (const auto& m : report.methods)
    if (m.method == method && m.cell == cell) return m;
  throw UsageError("no result for method '" + method + "' in cell '" + cell + "'");
}

void write_results_csv(std::ostream& out, const RunReport& report) {
  out << "experiment,variant,n,replications,mean,bias,variance,mse,seb,mse_over_seb,ci_half_width\n";
  for (const auto& c : report.cells) {
    out << c.experiment << ',' << '"' << c.variant << '"' << ',' << c.n << ',' << c.replications
        << ',' << format_number(c.mean) << ',' << format_number(c.bias) << ','
        << format_number(c.variance) << ',' << format_number(c.mse) << ','
        << format_number(c.seb) << ',' << format_number(c.mse_over_seb) << ','
        << format_number(c.ci_half_width) << '\n';
  }
}

void write_comparison_csv(std::ostream& out, const RunReport& report) {
  out << "method,cell,regret,regret_ci,opponent,win_rate\n";
  for (const auto& m : report.methods) {
    for (const auto& [opponent, rate] : m.win_rates) {
      out << m.method << ',' << m.cell << ',' << format_number(m.regret) << ','
          << format_number(m.regret_ci) << ',' << opponent << ',' << format_number(rate) << '\n';
    }
  }
}

Json to_json(const RunReport& report) {
  Json doc = {{"schema_version", kSchemaVersion},
              {"type", "run_report"},
              {"experiment", report.experiment},
              {"ci_method", report.ci_method}};
  Json cells = Json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"experiment", c.experiment},
                     {"variant", c.variant},
                     {"n", c.n},
                     {"replications", c.replications},
                     {"truth", c.truth},
                     {"mean", c.mean},
                     {"bias", c.bias},
                     {"variance", c.variance},
                     {"mse", c.mse},
                     {"seb", c.seb},
                     {"mse_over_seb", c.mse_over_seb},
                     {"ci_half_width", c.ci_half_width}});
  }
  doc["cells"] = std::move(cells);
  Json methods = Json::array();
  for (const auto& m : report.methods) {
    Json wr = Json::object();
    for (const auto& [o, w] : m.win_rates) wr[o] = w;
    methods.push_back({{"method", m.method},
                       {"cell", m.cell},
                       {"replications", m.replications},
                       {"regret", m.regret},
                       {"regret_ci", m.regret_ci},
                       {"win_rates", std::move(wr)}});
  }
  doc["methods"] = std::move(methods);
  return doc;
}

// ---- config documents ----

namespace {

struct EnvChoice {
  std::string label;
  TestEnvironment t;
};

template <typename T>
T get_or(const Json& doc, const char* key, T fallback) {
  if (!doc.contains(key) || doc[key].is_null()) return fallback;
  try {
    return doc[key].get<T>();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("config field '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve_path(const std::string& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : std::filesystem::path(base_dir) / path;
}

EnvChoice load_env(const Json& doc, const std::string& base_dir, std::uint64_t seed) {
  const std::string name = get_or<std::string>(doc, "env", "");
  if (name.empty()) throw UsageError("config needs an 'env' field");
  const std::uint64_t env_seed = get_or<std::uint64_t>(doc, "env_seed", seed);
  static const char* kNames[] = {"E1", "E2", "E3", "E4", "canonical", "bt_random",
                                 "intransitive", "adversarial"};
  for (const char* known : kNames)
    if (name == known) return {name, make_test_environment(name, env_seed)};

  Environment env = environment_from_json(read_json_file(resolve_path(base_dir, name)));
  const std::string target_path = get_or<std::string>(doc, "target", "");
  Policy target = target_path.empty()
                      ? env.ref_policy()
                      : policy_from_json(read_json_file(resolve_path(base_dir, target_path)));
  const VocabShape shape = env.shape();
  return {name, TestEnvironment{name, std::move(env), std::move(target), Policy::uniform(shape),
                                derive_seed(env_seed, {0x67}), "loaded from file", std::nullopt,
                                std::nullopt}};
}

GSource g_from_text(const std::string& text, const TestEnvironment& t) {
  if (text == "uniform") return GUniformRandom{t.wrong_g_seed};
  return parse_g_source(text);
}

RefSource ref_from_text(const std::string& text, const TestEnvironment& t,
                        const std::string& base_dir) {
  if (text == "true") return RefTrue{};
  if (text == "fitted") return RefFitted{};
  if (text == "uniform") return RefUniform{};
  if (text == "wrong") return RefWrong{t.name + ".wrong_ref", t.wrong_ref};
  if (text.rfind("wrong:", 0) == 0) {
    const std::string path = text.substr(6);
    return RefWrong{path, policy_from_json(read_json_file(resolve_path(base_dir, path)))};
  }
  throw UsageError("unknown reference source '" + text +
                   "' (expected true, fitted, uniform, wrong or wrong:PATH)");
}

EstimatorConfig estimator_from_json(const Json& doc) {
  EstimatorConfig cfg;
  if (doc.is_null()) return cfg;
  cfg.kind = parse_estimator_kind(get_or<std::string>(doc, "kind", "dr"));
  if (doc.contains("clip_max") && !doc["clip_max"].is_null()) cfg.clip_max = get_or<double>(doc, "clip_max", 0.0);
  const std::string mode = get_or<std::string>(doc, "dm_mode", "exact");
  if (mode == "monte_carlo") {
    cfg.dm_mode = DmMonteCarlo{get_or<std::size_t>(doc, "dm_samples", 8), 0};
  } else if (mode != "exact") {
    throw UsageError("estimator dm_mode must be exact or monte_carlo");
  }
  cfg.validate();
  return cfg;
}

FitOptions fit_from_json(const Json& doc) {
  FitOptions f;
  if (doc.is_null()) return f;
  f.bt_l2 = get_or<double>(doc, "bt_l2", f.bt_l2);
  f.bt_steps = get_or<std::size_t>(doc, "bt_steps", f.bt_steps);
  f.bt_lr = get_or<double>(doc, "bt_lr", f.bt_lr);
  f.gpm_smoothing = get_or<double>(doc, "gpm_smoothing", f.gpm_smoothing);
  f.ref_smoothing = get_or<double>(doc, "ref_smoothing", f.ref_smoothing);
  return f;
}

const Json& child(const Json& doc, const char* key) {
  static const Json kNull;
  return doc.contains(key) ? doc[key] : kNull;
}

}  // namespace

SweepConfig sweep_config_from_json(const Json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw UsageError("sweep config must be a JSON object");
  const std::uint64_t seed = get_or<std::uint64_t>(doc, "seed", 0);
  EnvChoice choice = load_env(doc, base_dir, seed);
  SweepConfig cfg(choice.label, choice.t.env, choice.t.target);
  cfg.experiment = get_or<std::string>(doc, "experiment", "sweep");
  cfg.base_seed = seed;
  cfg.sample_sizes = get_or<std::vector<std::size_t>>(doc, "sample_sizes", cfg.sample_sizes);
  cfg.replications = get_or<std::size_t>(doc, "replications", cfg.replications);
  cfg.estimator = estimator_from_json(child(doc, "estimator"));
  cfg.fit_multiplier = get_or<double>(doc, "fit_multiplier", cfg.fit_multiplier);
  cfg.cross_fit = get_or<bool>(doc, "cross_fit", false);
  cfg.fit = fit_from_json(child(doc, "fit"));

  const Json& variants = child(doc, "variants");
  if (variants.is_null() || (variants.is_string() && variants.get<std::string>() == "four_way")) {
    cfg.variants = four_way_variants(choice.t);
  } else if (variants.is_array()) {
    for (const auto& v : variants) {
      Variant out;
      out.nuisance.g = g_from_text(get_or<std::string>(v, "g", "true"), choice.t);
      out.nuisance.ref = ref_from_text(get_or<std::string>(v, "ref", "true"), choice.t, base_dir);
      out.name = get_or<std::string>(
          v, "name", describe(out.nuisance.g) + "," + describe(out.nuisance.ref));
      if (v.contains("clip_max") && !v["clip_max"].is_null()) out.clip_max = get_or<double>(v, "clip_max", 0.0);
      cfg.variants.push_back(std::move(out));
    }
  } else {
    throw UsageError("sweep 'variants' must be an array or \"four_way\"");
  }
  cfg.validate();
  return cfg;
}

CompareConfig compare_config_from_json(const Json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw UsageError("compare config must be a JSON object");
  const std::uint64_t seed = get_or<std::uint64_t>(doc, "seed", 0);
  EnvChoice choice = load_env(doc, base_dir, seed);
  CompareConfig cfg(choice.label, choice.t.env);
  cfg.seed = seed;
  if (doc.contains("methods")) {
    cfg.methods.clear();
    for (const auto& m : get_or<std::vector<std::string>>(doc, "methods", {})) cfg.methods.push_back(parse_method(m));
  }
  cfg.n = get_or<std::size_t>(doc, "n", cfg.n);
  cfg.replications = get_or<std::size_t>(doc, "replications", cfg.replications);
  cfg.fit_multiplier = get_or<double>(doc, "fit_multiplier", cfg.fit_multiplier);
  cfg.fit = fit_from_json(child(doc, "fit"));

  const Json& drpo = child(doc, "drpo");
  if (!drpo.is_null()) {
    TrainConfig& t = cfg.drpo;
    t.beta = get_or<double>(drpo, "beta", t.beta);
    t.clip_lo = get_or<double>(drpo, "clip_lo", t.clip_lo);
    t.clip_hi = get_or<double>(drpo, "clip_hi", t.clip_hi);
    t.mc_samples = get_or<std::size_t>(drpo, "mc_samples", t.mc_samples);
    t.batch_size = get_or<std::size_t>(drpo, "batch_size", t.batch_size);
    t.lr = get_or<double>(drpo, "lr", t.lr);
    if (drpo.contains("steps") && !drpo["steps"].is_null()) t.steps = get_or<std::size_t>(drpo, "steps", 1);
    t.epochs = get_or<std::size_t>(drpo, "epochs", t.epochs);
    const std::string opt = get_or<std::string>(drpo, "optimizer", "moment");
    if (opt != "moment" && opt != "gd") throw UsageError("drpo optimizer must be gd or moment");
    t.moment_averaging = opt == "moment";
    const std::string mode = get_or<std::string>(drpo, "dm_mode", "exact");
    if (mode != "exact" && mode != "monte_carlo") throw UsageError("drpo dm_mode must be exact or monte_carlo");
    t.dm_mode = mode == "exact" ? TrainDmMode::kExact : TrainDmMode::kMonteCarlo;
    t.backtracking = get_or<bool>(drpo, "backtracking", false);
  }
  const Json& dpo = child(doc, "dpo");
  if (!dpo.is_null()) {
    cfg.dpo.beta = get_or<double>(dpo, "beta", cfg.dpo.beta);
    cfg.dpo.lr = get_or<double>(dpo, "lr", cfg.dpo.lr);
    cfg.dpo.steps = get_or<std::size_t>(dpo, "steps", cfg.dpo.steps);
    const std::string opt = get_or<std::string>(dpo, "optimizer", "gd");
    if (opt != "moment" && opt != "gd") throw UsageError("dpo optimizer must be gd or moment");
    cfg.dpo.moment_averaging = opt == "moment";
  }
  const Json& ppo = child(doc, "ppo");
  if (!ppo.is_null()) cfg.ppo_beta = get_or<double>(ppo, "beta", cfg.ppo_beta);

  const Json& cells = child(doc, "cells");
  if (!cells.is_array() || cells.empty()) throw UsageError("compare config needs a non-empty 'cells' array");
  for (const auto& c : cells) {
    CompareCell cell;
    cell.reward = parse_reward_source(get_or<std::string>(c, "reward", "true"));
    cell.gpm = g_from_text(get_or<std::string>(c, "gpm", "gpm"), choice.t);
    cell.ref = ref_from_text(get_or<std::string>(c, "ref", "true"), choice.t, base_dir);
    cell.name = get_or<std::string>(c, "name", describe(cell.reward) + "/" + describe(cell.ref));
    cfg.cells.push_back(std::move(cell));
  }
  cfg.validate();
  return cfg;
}

}  // namespace drpo
