#include "commands.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "drpo/datagen.hpp"
#include "drpo/environments.hpp"
#include "drpo/errors.hpp"
#include "drpo/estimators.hpp"
#include "drpo/experiments.hpp"
#include "drpo/fault.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"
#include "drpo/rng.hpp"
#include "drpo/train.hpp"
#include "drpo_cli/app.hpp"
#include "drpo_cli/selftest.hpp"

namespace drpo::cli {
namespace {

bool is_test_env_name(const std::string& s) {
  for (const char* n : {"E1", "E2", "E3", "E4", "canonical", "bt_random", "intransitive", "adversarial"})
    if (s == n) return true;
  return false;
}

// Environment given as a test-suite name or a JSON path, plus the fixtures
// that only test environments carry.
struct LoadedEnv {
  Environment env;
  std::optional<TestEnvironment> fixture;
};

LoadedEnv load_env(const Json& cfg) {
  const std::string spec = cfg.at("env").get<std::string>();
  if (spec.empty()) throw UsageError("--env is required (a file or E1..E4)");
  if (is_test_env_name(spec)) {
    TestEnvironment t = make_test_environment(spec, cfg.value("env_seed", std::uint64_t{0}));
    Environment env = t.env;
    return {std::move(env), std::move(t)};
  }
  return {environment_from_json(read_json_file(spec)), std::nullopt};
}

Policy load_policy(const std::string& spec, const LoadedEnv& e) {
  if (spec == "ref") return e.env.ref_policy();
  if (spec == "target") {
    if (!e.fixture) throw UsageError("--policy target needs a test environment (E1..E4)");
    return e.fixture->target;
  }
  if (spec == "optimal") return optimal_policy_enumerate(e.env).policy;
  Policy p = policy_from_json(read_json_file(spec));
  p.shape().require_same(e.env.shape(), "policy");
  return p;
}

GSource g_source(const std::string& text, const LoadedEnv& e) {
  if (text == "uniform") {
    if (!e.fixture) throw UsageError("--g uniform needs a seed (uniform:SEED) for file environments");
    return GUniformRandom{e.fixture->wrong_g_seed};
  }
  return parse_g_source(text);
}

RefSource ref_source(const std::string& text, const LoadedEnv& e) {
  if (text == "true") return RefTrue{};
  if (text == "fitted") return RefFitted{};
  if (text == "uniform") return RefUniform{};
  if (text == "wrong") {
    if (!e.fixture) throw UsageError("--ref wrong needs a test environment; use wrong:PATH");
    return RefWrong{e.fixture->name + ".wrong_ref", e.fixture->wrong_ref};
  }
  if (text.rfind("wrong:", 0) == 0) {
    const std::string path = text.substr(6);
    Policy p = policy_from_json(read_json_file(path));
    p.shape().require_same(e.env.shape(), "wrong reference");
    return RefWrong{path, std::move(p)};
  }
  throw UsageError("unknown --ref '" + text + "' (expected true, fitted, uniform, wrong or wrong:PATH)");
}

PreferenceDataset load_data(const std::string& path, const Environment& env) {
  if (path.empty()) throw UsageError("--data is required");
  PreferenceDataset d = dataset_from_json(read_json_file(path));
  d.check_against(env.shape());
  return d;
}

// Fitting data defaults to the evaluation data itself.
std::optional<PreferenceDataset> load_fit_data(const Json& cfg, const Environment& env,
                                               const PreferenceDataset& data) {
  const std::string path = cfg.value("fit_data", std::string());
  if (path.empty()) return data;
  return load_data(path, env);
}

void write_csv(Context& ctx, const std::string& name, const std::string& text) {
  write_text_file(ctx.output(name), text);
}

std::string env_summary(const Environment& env) {
  std::ostringstream s;
  s << "prompts=" << env.shape().prompts() << '\n';
  s << "p_star_ref=" << format_number(total_preference_exact(env, env.ref_policy())) << '\n';
  s << "coverage_ref=" << format_number(env.coverage(env.ref_policy())) << '\n';
  return s.str();
}

}  // namespace

LogLevel parse_log_level(const std::string& s) {
  if (s == "error") return LogLevel::kError;
  if (s == "warn") return LogLevel::kWarn;
  if (s == "info") return LogLevel::kInfo;
  if (s == "debug") return LogLevel::kDebug;
  throw UsageError("unknown log level '" + s + "'");
}

void Context::log(LogLevel at, const std::string& msg) const {
  if (at > level || err == nullptr) return;
  static const char* kNames[] = {"error", "warn", "info", "debug"};
  *err << "[" << kNames[static_cast<int>(at)] << "] " << msg << '\n';
}

std::filesystem::path Context::output(const std::string& name) {
  std::filesystem::create_directories(out_dir);
  outputs.push_back(name);
  return out_dir / name;
}

int exec_gen_env(const Json& cfg, Context& ctx) {
  const std::string gen = cfg.at("generator").get<std::string>();
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  TestEnvironment t = [&] {
    if (gen == "canonical") return make_canonical_env();
    if (gen == "intransitive") return make_intransitive_env();
    if (gen == "adversarial") return make_adversarial_env(seed);
    if (gen == "bt_random") {
      return make_bt_random_env(cfg.at("prompts").get<std::size_t>(), cfg.at("responses").get<std::size_t>(),
                                seed, cfg.at("reward_bound").get<double>());
    }
    throw UsageError("unknown generator '" + gen + "' (expected bt_random, intransitive, canonical or adversarial)");
  }();
  check_enumeration_budget(t.env);
  write_json_file(ctx.output("env.json"), to_json(t.env));
  write_json_file(ctx.output("target_policy.json"), to_json(t.target));
  write_json_file(ctx.output("wrong_ref.json"), to_json(t.wrong_ref));

  std::ostream& out = *ctx.out;
  out << "generator=" << gen << '\n' << env_summary(t.env);
  const auto cycle = find_intransitive_cycle(t.env.preference());
  if (!cycle) out << "intransitive_cycle=none\n";
  if (cycle) {
    const auto& v = t.env.vocab()[cycle->prompt];
    out << "intransitive_cycle=" << t.env.prompts()[cycle->prompt] << ':' << v[cycle->cycle[0]] << '>'
        << v[cycle->cycle[1]] << '>' << v[cycle->cycle[2]] << '>' << v[cycle->cycle[0]] << '\n';
  }
  if (t.both_wrong_bias) out << "both_wrong_bias=" << format_number(*t.both_wrong_bias) << '\n';
  if (t.bt_floor) out << "bt_floor=" << format_number(*t.bt_floor) << '\n';
  return kExitOk;
}

int exec_simulate(const Json& cfg, Context& ctx) {
  const LoadedEnv e = load_env(cfg);
  const std::size_t n = cfg.at("n").get<std::size_t>();
  if (n == 0) throw UsageError("--n must be positive");
  PreferenceDataset data = sample_dataset(e.env, n, cfg.at("seed").get<std::uint64_t>(), ctx.threads);
  if (cfg.value("augment", false)) data = augment_swapped(data);
  write_json_file(ctx.output("data.json"), to_json(data));
  std::ostringstream csv;
  write_dataset_csv(csv, data);
  write_csv(ctx, "data.csv", csv.str());
  ctx.log(LogLevel::kInfo, "wrote " + std::to_string(data.size()) + " tuples");
  return kExitOk;
}

int exec_evaluate(const Json& cfg, Context& ctx) {
  const LoadedEnv e = load_env(cfg);
  const Policy policy = load_policy(cfg.at("policy").get<std::string>(), e);
  const PreferenceDataset data = load_data(cfg.at("data").get<std::string>(), e.env);

  EstimatorConfig ec;
  ec.kind = parse_estimator_kind(cfg.at("estimator").get<std::string>());
  if (!cfg.at("clip_max").is_null()) ec.clip_max = cfg.at("clip_max").get<double>();
  const std::string mode = cfg.at("dm_mode").get<std::string>();
  if (mode == "monte_carlo") {
    ec.dm_mode = DmMonteCarlo{cfg.at("dm_samples").get<std::size_t>(), cfg.at("seed").get<std::uint64_t>()};
  } else if (mode != "exact") {
    throw UsageError("--dm-mode must be exact or monte_carlo");
  }
  ec.validate();

  const NuisanceSpec spec{g_source(cfg.at("g").get<std::string>(), e), ref_source(cfg.at("ref").get<std::string>(), e)};
  const auto fit = load_fit_data(cfg, e.env, data);
  const Nuisances nu = resolve_nuisances(e.env, spec, fit ? &*fit : nullptr);
  EstimateReport report = estimate(data, policy, nu.ref_hat, nu.g_hat, ec, ctx.threads);
  report.provenance = nu.provenance;

  write_json_file(ctx.output("estimate.json"), to_json(report));
  std::ostringstream line;
  line << to_string(ec.kind) << ',' << report.provenance.g_source << ',' << report.provenance.ref_source << ','
       << data.size() << ',' << format_number(report.value);
  write_csv(ctx, "estimate.csv", "estimator,g,ref,n,value\n" + line.str() + "\n");
  *ctx.out << line.str() << '\n';
  return kExitOk;
}

int exec_train(const Json& cfg, Context& ctx) {
  const LoadedEnv e = load_env(cfg);
  const std::string method = cfg.at("method").get<std::string>();
  const PreferenceDataset data = load_data(cfg.at("data").get<std::string>(), e.env);
  const auto& shape = e.env.shape();
  const auto fit = load_fit_data(cfg, e.env, data);
  const NuisanceSpec spec{g_source(cfg.at("g").get<std::string>(), e), ref_source(cfg.at("ref").get<std::string>(), e)};
  const Nuisances nu = resolve_nuisances(e.env, spec, fit ? &*fit : nullptr);
  const double beta = cfg.at("beta").get<double>();
  const bool moment = cfg.at("optimizer").get<std::string>() == "moment";

  TrainResult result{nu.ref_hat, {}};
  if (method == "drpo") {
    TrainConfig tc;
    tc.beta = beta;
    tc.clip_lo = cfg.at("clip_lo").get<double>();
    tc.clip_hi = cfg.at("clip_hi").get<double>();
    tc.mc_samples = cfg.at("mc_samples").get<std::size_t>();
    tc.batch_size = cfg.at("batch_size").get<std::size_t>();
    tc.lr = cfg.at("lr").get<double>();
    if (!cfg.at("steps").is_null()) tc.steps = cfg.at("steps").get<std::size_t>();
    tc.epochs = cfg.at("epochs").get<std::size_t>();
    tc.seed = cfg.at("seed").get<std::uint64_t>();
    tc.moment_averaging = moment;
    const std::string mode = cfg.at("dm_mode").get<std::string>();
    if (mode != "exact" && mode != "monte_carlo") throw UsageError("--dm-mode must be exact or monte_carlo");
    tc.dm_mode = mode == "exact" ? TrainDmMode::kExact : TrainDmMode::kMonteCarlo;
    tc.backtracking = cfg.at("backtracking").get<bool>();
    result = drpo_train(data, shape, nu.ref_hat, nu.g_hat, tc, nu.ref_hat, &e.env);
  } else if (method == "dpo") {
    DpoConfig dc{beta, cfg.at("lr").get<double>(),
                 cfg.at("steps").is_null() ? std::size_t{500} : cfg.at("steps").get<std::size_t>(), moment};
    result = dpo_train(data, nu.ref_hat, dc, nu.ref_hat, &e.env);
  } else if (method == "ppo") {
    const RewardSource rs = parse_reward_source(cfg.at("reward").get<std::string>());
    RewardTable reward = [&]() -> RewardTable {
      if (std::holds_alternative<RewardBtMle>(rs)) return fit_reward_bt_mle(shape, *fit).reward;
      if (std::holds_alternative<RewardPopulationBt>(rs)) return fit_reward_bt_population(e.env);
      const RewardTable* truth = e.env.preference().reward();
      if (truth == nullptr) throw UsageError("--reward true|perturbed needs a Bradley-Terry environment");
      if (const auto* p = std::get_if<RewardPerturbed>(&rs)) {
        Philox4x32 rng(derive_seed(cfg.at("seed").get<std::uint64_t>(), {0x5045}), 0);
        PerPrompt<double> v = truth->values();
        for (auto& row : v)
          for (double& x : row) x += p->sd * rng.normal();
        return RewardTable::tight(std::move(v));
      }
      return *truth;
    }();
    result.policy = ppo_closed_form(shape, reward, nu.ref_hat, beta);
  } else {
    throw UsageError("unknown --method '" + method + "' (expected drpo, dpo or ppo)");
  }

  write_json_file(ctx.output(cfg.at("policy_out").get<std::string>()), to_json(result.policy));
  std::ostringstream trace;
  trace << "step,loss,grad_norm,oracle_pref,oracle_kl\n";
  for (const auto& r : result.trace.records) {
    trace << r.step << ',' << format_number(r.loss) << ',' << format_number(r.grad_norm) << ','
          << (r.oracle_pref ? format_number(*r.oracle_pref) : "") << ','
          << (r.oracle_kl ? format_number(*r.oracle_kl) : "") << '\n';
  }
  write_csv(ctx, cfg.at("trace_out").get<std::string>(), trace.str());
  if (result.trace.augmented_input) ctx.log(LogLevel::kInfo, "input was not swap-augmented; augmented before training");

  *ctx.out << "method=" << method << '\n'
           << "total_preference=" << format_number(total_preference_exact(e.env, result.policy)) << '\n'
           << "regret=" << format_number(regret_exact(e.env, result.policy)) << '\n'
           << "kl_to_ref=" << format_number(kl_exact(e.env, result.policy, e.env.ref_policy())) << '\n';
  return kExitOk;
}

namespace {

int exec_sweep_like(const Json& cfg, Context& ctx, bool efficiency) {
  SweepConfig sc = sweep_config_from_json(cfg.at("experiment_config"), cfg.at("base_dir").get<std::string>());
  sc.threads = ctx.threads;
  const RunReport report = efficiency ? efficiency_study(sc) : mse_sweep(sc);
  std::ostringstream csv;
  write_results_csv(csv, report);
  write_csv(ctx, "results.csv", csv.str());
  write_json_file(ctx.output("report.json"), to_json(report));
  for (const auto& c : report.cells) {
    *ctx.out << c.variant << " n=" << c.n << " mse=" << format_number(c.mse)
             << " mse_over_seb=" << format_number(c.mse_over_seb) << '\n';
  }
  return kExitOk;
}

}  // namespace

int exec_sweep(const Json& cfg, Context& ctx) { return exec_sweep_like(cfg, ctx, false); }
int exec_efficiency(const Json& cfg, Context& ctx) { return exec_sweep_like(cfg, ctx, true); }

int exec_compare(const Json& cfg, Context& ctx) {
  CompareConfig cc = compare_config_from_json(cfg.at("experiment_config"), cfg.at("base_dir").get<std::string>());
  cc.threads = ctx.threads;
  const RunReport report = optimization_comparison(cc);
  std::ostringstream csv;
  write_comparison_csv(csv, report);
  write_csv(ctx, "comparison.csv", csv.str());
  write_json_file(ctx.output("report.json"), to_json(report));
  for (const auto& m : report.methods) {
    *ctx.out << m.method << " cell=" << m.cell << " regret=" << format_number(m.regret)
             << " ci=" << format_number(m.regret_ci) << '\n';
  }
  return kExitOk;
}

int exec_oracle(const Json& cfg, Context& ctx) {
  const LoadedEnv e = load_env(cfg);
  check_enumeration_budget(e.env);
  const Policy policy = load_policy(cfg.at("policy").get<std::string>(), e);
  const std::size_t n = cfg.at("n").get<std::size_t>();
  if (n == 0) throw UsageError("--n must be positive");
  const OracleReport r = oracle_report(e.env, policy, n);
  write_json_file(ctx.output("oracle.json"), to_json(r));
  std::ostream& out = *ctx.out;
  out << "total_preference=" << format_number(r.total_preference) << '\n';
  if (r.expected_reward) out << "expected_reward=" << format_number(*r.expected_reward) << '\n';
  out << "kl_to_ref=" << format_number(r.kl_to_ref) << '\n'
      << "psi_variance=" << format_number(r.psi_variance) << '\n'
      << "seb=" << format_number(r.seb) << '\n'
      << "n=" << r.n << '\n'
      << "coverage=" << format_number(r.realized_coverage) << '\n'
      << "optimal_total_preference=" << format_number(optimal_policy_enumerate(e.env).total_preference) << '\n'
      << "regret=" << format_number(regret_exact(e.env, policy)) << '\n';
  return kExitOk;
}

int exec_selftest(const Json& cfg, Context& ctx) {
  const std::string name = cfg.at("fault").get<std::string>();
  Fault fault = Fault::kNone;
  if (name == "flip-sign-augmentation") {
    fault = Fault::kFlipSignAugmentation;
  } else if (name != "none") {
    throw UsageError("unknown --fault '" + name + "' (expected none or flip-sign-augmentation)");
  }
  const auto results = run_selftest(cfg.at("seed").get<std::uint64_t>(), fault);
  std::ofstream xml(ctx.output(cfg.at("junit").get<std::string>()), std::ios::binary);
  write_junit(xml, results);
  if (!xml) throw UsageError("cannot write JUnit report");

  std::size_t failed = 0;
  for (const auto& r : results) {
    *ctx.out << (r.passed ? "PASS " : "FAIL ") << r.name;
    if (!r.passed) *ctx.out << "  " << r.detail;
    *ctx.out << '\n';
    failed += r.passed ? 0 : 1;
  }
  *ctx.out << results.size() - failed << '/' << results.size() << " invariants hold\n";
  return failed == 0 ? kExitOk : kExitCriterion;
}

int dispatch(const std::string& sub, const Json& cfg, Context& ctx) {
  if (sub == "gen-env") return exec_gen_env(cfg, ctx);
  if (sub == "simulate") return exec_simulate(cfg, ctx);
  if (sub == "evaluate") return exec_evaluate(cfg, ctx);
  if (sub == "train") return exec_train(cfg, ctx);
  if (sub == "sweep") return exec_sweep(cfg, ctx);
  if (sub == "efficiency") return exec_efficiency(cfg, ctx);
  if (sub == "compare") return exec_compare(cfg, ctx);
  if (sub == "oracle") return exec_oracle(cfg, ctx);
  if (sub == "selftest") return exec_selftest(cfg, ctx);
  throw UsageError("unknown subcommand '" + sub + "'");
}

}  // namespace drpo::cli
