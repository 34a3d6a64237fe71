#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "drpo/serialization.hpp"

namespace drpo::cli {

// Everything needed to re-run a subcommand: the effective config (flags and
// file values merged), its hash, and the outputs it wrote. Nothing here
// depends on thread count or wall-clock time.
struct Manifest {
  std::string subcommand;
  Json config;
  std::uint64_t seed = 0;
  // Value of DRPO_LAB_SEED when it overrode the configured seed.
  std::optional<std::uint64_t> seed_env_override;
  std::vector<std::string> outputs;
};

Json to_json(const Manifest& m);
Manifest manifest_from_json(const Json& doc);

std::string config_hash(const Json& config);

}  // namespace drpo::cli
