#include "drpo_cli/app.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "drpo/errors.hpp"
#include "drpo_cli/manifest.hpp"

#ifndef DRPO_LAB_VERSION
#define DRPO_LAB_VERSION "unknown"
#endif

namespace drpo::cli {
namespace {

namespace fs = std::filesystem;

// Binds flags of one subcommand to config keys. The effective config starts
// from defaults, then a --config file, then any flag given explicitly.
class Flags {
 public:
  explicit Flags(CLI::App* sub) : sub_(sub) {
    sub_->add_option("--config", config_path_, "JSON file with values for any flag (keys use underscores)");
  }

  template <typename T>
  CLI::Option* add(const std::string& name, const std::string& key, T def, const std::string& help) {
    defaults_[key] = def;
    auto holder = std::make_shared<T>(def);
    CLI::Option* opt = sub_->add_option(name, *holder, help)->capture_default_str();
    setters_.push_back({opt, [holder, key](Json& j) { j[key] = *holder; }});
    return opt;
  }

  // Flags without a default value (null in the config until given).
  template <typename T>
  CLI::Option* add_optional(const std::string& name, const std::string& key, const std::string& help) {
    defaults_[key] = nullptr;
    auto holder = std::make_shared<T>();
    CLI::Option* opt = sub_->add_option(name, *holder, help);
    setters_.push_back({opt, [holder, key](Json& j) { j[key] = *holder; }});
    return opt;
  }

  void set_default(const std::string& key, Json value) { defaults_[key] = std::move(value); }

  CLI::Option* flag(const std::string& name, const std::string& key, const std::string& help) {
    defaults_[key] = false;
    auto holder = std::make_shared<bool>(false);
    CLI::Option* opt = sub_->add_flag(name, *holder, help);
    setters_.push_back({opt, [holder, key](Json& j) { j[key] = *holder; }});
    return opt;
  }

  Json build() const {
    Json cfg = defaults_;
    if (!config_path_.empty()) {
      const Json file = read_json_file(config_path_);
      if (!file.is_object()) throw UsageError("--config must hold a JSON object");
      for (const auto& [k, v] : file.items()) {
        if (!defaults_.contains(k)) throw UsageError("unknown config key '" + k + "' in " + config_path_);
        cfg[k] = v;
      }
    }
    for (const auto& [opt, set] : setters_)
      if (opt->count() > 0) set(cfg);
    return cfg;
  }

 private:
  CLI::App* sub_;
  std::string config_path_;
  Json defaults_ = Json::object();
  std::vector<std::pair<CLI::Option*, std::function<void(Json&)>>> setters_;
};

bool is_named_env(const std::string& s) {
  for (const char* n : {"E1", "E2", "E3", "E4", "canonical", "bt_random", "intransitive", "adversarial"})
    if (s == n) return true;
  return false;
}

// Rewrites file references to absolute paths so a manifest replays from any
// working directory.
void absolutize(Json& cfg) {
  auto fix = [&](const char* key, std::initializer_list<const char*> keep) {
    if (!cfg.contains(key) || !cfg[key].is_string()) return;
    const std::string v = cfg[key].get<std::string>();
    if (v.empty()) return;
    for (const char* k : keep)
      if (v == k) return;
    cfg[key] = fs::absolute(v).lexically_normal().string();
  };
  if (cfg.contains("env") && cfg["env"].is_string() && !is_named_env(cfg["env"].get<std::string>())) fix("env", {});
  fix("data", {});
  fix("fit_data", {});
  fix("policy", {"ref", "target", "optimal"});
  if (cfg.contains("ref") && cfg["ref"].is_string()) {
    const std::string r = cfg["ref"].get<std::string>();
    if (r.rfind("wrong:", 0) == 0) cfg["ref"] = "wrong:" + fs::absolute(r.substr(6)).lexically_normal().string();
  }
}

std::uint64_t parse_seed_text(const std::string& text, const char* what) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end)
    throw UsageError(std::string(what) + " must be an unsigned 64-bit integer, got '" + text + "'");
  return v;
}

bool is_experiment(const std::string& sub) { return sub == "sweep" || sub == "efficiency" || sub == "compare"; }

// The seed lives at the top level, or inside the experiment config.
Json& seed_slot(Json& cfg, const std::string& sub) {
  return is_experiment(sub) ? cfg["experiment_config"]["seed"] : cfg["seed"];
}

void add_nuisance_flags(Flags& f) {
  f.add<std::string>("--g", "g", "true", "preference nuisance: true|bt_mle|gpm|uniform|uniform:SEED|const:C");
  f.add<std::string>("--ref", "ref", "true", "reference nuisance: true|fitted|uniform|wrong|wrong:PATH");
  f.add<std::string>("--fit-data", "fit_data", "", "dataset for fitted nuisances (default: --data)");
}

int execute(const std::string& sub, Json cfg, std::optional<std::uint64_t> env_override, Context& ctx) {
  Manifest m;
  m.subcommand = sub;
  m.seed_env_override = env_override;
  m.seed = seed_slot(cfg, sub).get<std::uint64_t>();
  m.config = cfg;
  ctx.log(LogLevel::kDebug, "effective config " + cfg.dump());
  const int code = dispatch(sub, cfg, ctx);
  m.outputs = ctx.outputs;
  fs::create_directories(ctx.out_dir);
  write_json_file(ctx.out_dir / "manifest.json", to_json(m));
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Doubly robust preference estimation and optimization lab", "drpo-lab"};
  app.set_version_flag("--version", DRPO_LAB_VERSION);
  app.require_subcommand(0, 1);

  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::string out_dir = ".";
  std::string log_level = "warn";
  std::string from_manifest;
  app.add_option("--seed", seed, "seed (overrides config files)");
  app.add_option("--threads", threads, "worker threads, 0 = available parallelism")->capture_default_str();
  app.add_option("--out-dir", out_dir, "directory for outputs and manifest.json")->capture_default_str();
  app.add_option("--log-level", log_level, "error|warn|info|debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}))
      ->capture_default_str();
  app.add_option("--from-manifest", from_manifest, "re-run the subcommand recorded in a manifest");

  std::map<std::string, std::unique_ptr<Flags>> flags;
  auto sub = [&](const char* name, const char* help) -> Flags& {
    Flags& f = *(flags[name] = std::make_unique<Flags>(app.add_subcommand(name, help)));
    f.set_default("seed", 0);
    return f;
  };

  {
    Flags& f = sub("gen-env", "generate a synthetic environment");
    f.add<std::string>("--generator", "generator", "canonical", "bt_random|intransitive|canonical|adversarial");
    f.add<std::size_t>("--prompts", "prompts", 5, "prompt count (bt_random)");
    f.add<std::size_t>("--responses", "responses", 8, "responses per prompt (bt_random)");
    f.add<double>("--reward-bound", "reward_bound", 2.0, "reward magnitude bound (bt_random)");
  }
  {
    Flags& f = sub("simulate", "draw a preference dataset");
    f.add<std::string>("--env", "env", "", "environment file or E1..E4");
    f.add<std::uint64_t>("--env-seed", "env_seed", 0, "seed for E2/E4");
    f.add<std::size_t>("--n", "n", 1000, "number of comparisons");
    f.flag("--augment", "augment", "append the swapped copy of each comparison");
  }
  {
    Flags& f = sub("evaluate", "estimate the total preference of a policy");
    f.add<std::string>("--env", "env", "", "environment file or E1..E4");
    f.add<std::uint64_t>("--env-seed", "env_seed", 0, "seed for E2/E4");
    f.add<std::string>("--policy", "policy", "target", "policy file, or ref|target|optimal");
    f.add<std::string>("--data", "data", "", "dataset JSON");
    f.add<std::string>("--estimator", "estimator", "dr", "dm|is|dr");
    add_nuisance_flags(f);
    f.add_optional<double>("--clip-max", "clip_max", "cap on policy/reference ratios");
    f.add<std::string>("--dm-mode", "dm_mode", "exact", "exact|monte_carlo");
    f.add<std::size_t>("--dm-samples", "dm_samples", 8, "draws per tuple in monte_carlo mode");
  }
  {
    Flags& f = sub("train", "optimize a policy with drpo, dpo or ppo");
    f.add<std::string>("--method", "method", "drpo", "drpo|dpo|ppo");
    f.add<std::string>("--env", "env", "", "environment file or E1..E4");
    f.add<std::uint64_t>("--env-seed", "env_seed", 0, "seed for E2/E4");
    f.add<std::string>("--data", "data", "", "dataset JSON");
    add_nuisance_flags(f);
    f.add<std::string>("--reward", "reward", "bt_mle", "ppo reward: true|bt_mle|perturbed:SD|population_bt");
    f.add<double>("--beta", "beta", 0.04, "KL weight");
    f.add<double>("--clip-lo", "clip_lo", 0.04, "lower ratio clip");
    f.add<double>("--clip-hi", "clip_hi", 2.5, "upper ratio clip");
    f.add<std::size_t>("--mc-samples", "mc_samples", 3, "responses drawn per element");
    f.add<std::size_t>("--batch-size", "batch_size", 64, "minibatch size");
    f.add<double>("--lr", "lr", 0.1, "step size");
    f.add_optional<std::size_t>("--steps", "steps", "total steps (default from epochs)");
    f.add<std::size_t>("--epochs", "epochs", 1, "passes over the augmented data");
    f.add<std::string>("--optimizer", "optimizer", "moment", "gd|moment")
        ->check(CLI::IsMember({"gd", "moment"}));
    f.add<std::string>("--dm-mode", "dm_mode", "exact", "exact|monte_carlo");
    f.flag("--backtracking", "backtracking", "halve full-batch steps that lower the objective");
    f.add<std::string>("--trace-out", "trace_out", "trace.csv", "trace CSV name under --out-dir");
    f.add<std::string>("--policy-out", "policy_out", "policy.json", "policy JSON name under --out-dir");
  }
  {
    Flags& f = sub("oracle", "exact quantities of a policy by enumeration");
    f.add<std::string>("--env", "env", "", "environment file or E1..E4");
    f.add<std::uint64_t>("--env-seed", "env_seed", 0, "seed for E2/E4");
    f.add<std::string>("--policy", "policy", "ref", "policy file, or ref|target|optimal");
    f.add<std::size_t>("--n", "n", 1, "sample size for the efficiency bound");
  }
  {
    Flags& f = sub("selftest", "run the invariant suite");
    f.add<std::string>("--junit", "junit", "selftest.xml", "JUnit XML name under --out-dir");
    f.add<std::string>("--fault", "fault", "none", "none|flip-sign-augmentation");
  }
  // Experiment commands take a required config file instead of flags.
  std::map<std::string, std::string> experiment_paths;
  const std::pair<const char*, const char*> experiments[] = {
      {"sweep", "replicated estimator MSE study"},
      {"efficiency", "MSE over the efficiency bound, with the (true, true) variant"},
      {"compare", "compare optimizers by oracle regret"}};
  for (const auto& [name, help] : experiments) {
    app.add_subcommand(name, help)->add_option("--config", experiment_paths[name], "experiment JSON config")->required();
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  Context ctx;
  ctx.out_dir = out_dir;
  ctx.threads = threads;
  ctx.out = &out;
  ctx.err = &err;
  try {
    ctx.level = parse_log_level(log_level);

    std::string name;
    Json cfg;
    std::optional<std::uint64_t> env_override;
    if (!from_manifest.empty()) {
      if (!app.get_subcommands().empty()) throw UsageError("--from-manifest cannot be combined with a subcommand");
      const Manifest m = manifest_from_json(read_json_file(from_manifest));
      if (!flags.contains(m.subcommand) && !is_experiment(m.subcommand)) throw UsageError("manifest names unknown subcommand '" + m.subcommand + "'");
      // Replays exactly what was recorded; DRPO_LAB_SEED and --seed are ignored.
      name = m.subcommand;
      cfg = m.config;
      env_override = m.seed_env_override;
      ctx.log(LogLevel::kInfo, "replaying " + name + " from " + from_manifest);
    } else {
      if (app.get_subcommands().empty()) {
        out << app.help();
        return kExitUsage;
      }
      name = app.get_subcommands().front()->get_name();
      if (is_experiment(name)) {
        const fs::path path = fs::absolute(experiment_paths[name]).lexically_normal();
        cfg = {{"experiment_config", read_json_file(path)}, {"base_dir", path.parent_path().string()}};
        if (!cfg["experiment_config"].is_object()) throw UsageError("experiment config must be a JSON object");
        if (!cfg["experiment_config"].contains("seed")) cfg["experiment_config"]["seed"] = 0;
      } else {
        cfg = flags.at(name)->build();
        absolutize(cfg);
      }
      if (seed) seed_slot(cfg, name) = *seed;
      if (const char* env = std::getenv("DRPO_LAB_SEED"); env != nullptr) {
        env_override = parse_seed_text(env, "DRPO_LAB_SEED");
        seed_slot(cfg, name) = *env_override;
        ctx.log(LogLevel::kWarn, "DRPO_LAB_SEED overrides the configured seed");
      }
    }
    Json& slot = seed_slot(cfg, name);
    if (!slot.is_number_integer() || (!slot.is_number_unsigned() && slot.get<std::int64_t>() < 0))
      throw UsageError("seed must be an unsigned integer");
    slot = slot.get<std::uint64_t>();
    return execute(name, std::move(cfg), env_override, ctx);
  } catch (const ResourceRefusal& e) {
    err << "drpo-lab: refused: " << e.what() << '\n';
    return kExitRefusal;
  } catch (const Error& e) {
    err << "drpo-lab: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Json::exception& e) {
    err << "drpo-lab: bad config: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "drpo-lab: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "drpo-lab: internal error: " << e.what() << '\n';
    return kExitCriterion;
  }
}

}  // namespace drpo::cli
