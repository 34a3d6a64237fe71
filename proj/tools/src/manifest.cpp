#include "drpo_cli/manifest.hpp"

#include "drpo/errors.hpp"

#ifndef DRPO_LAB_VERSION
#define DRPO_LAB_VERSION "unknown"
#endif

namespace drpo::cli {

std::string config_hash(const Json& config) { return "fnv1a64:" + fnv1a_hex(config.dump()); }

Json to_json(const Manifest& m) {
  Json doc = {{"schema_version", kSchemaVersion},
              {"type", "manifest"},
              {"tool", "drpo-lab"},
              {"subcommand", m.subcommand},
              {"config", m.config},
              {"config_hash", config_hash(m.config)},
              {"seed", m.seed},
              {"artifact_versions",
               {{"drpo_lab", DRPO_LAB_VERSION}, {"schema_version", kSchemaVersion}}},
              {"outputs", m.outputs}};
  doc["seed_env_override"] =
      m.seed_env_override ? Json({{"DRPO_LAB_SEED", *m.seed_env_override}}) : Json(nullptr);
  return doc;
}

Manifest manifest_from_json(const Json& doc) {
  if (!doc.is_object() || doc.value("type", "") != "manifest")
    throw UsageError("not a drpo-lab manifest");
  if (doc.value("schema_version", 0) != kSchemaVersion)
    throw UsageError("unsupported manifest schema_version");
  Manifest m;
  try {
    m.subcommand = doc.at("subcommand").get<std::string>();
    m.config = doc.at("config");
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.outputs = doc.at("outputs").get<std::vector<std::string>>();
    const Json& env = doc.value("seed_env_override", Json(nullptr));
    if (!env.is_null()) m.seed_env_override = env.at("DRPO_LAB_SEED").get<std::uint64_t>();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("malformed manifest: ") + e.what());
  }
  if (config_hash(m.config) != doc.value("config_hash", ""))
    throw UsageError("manifest config_hash does not match its config");
  return m;
}

}  // namespace drpo::cli
