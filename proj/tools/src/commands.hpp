#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "drpo/serialization.hpp"

namespace drpo::cli {

enum class LogLevel { kError, kWarn, kInfo, kDebug };
LogLevel parse_log_level(const std::string& s);

struct Context {
  std::filesystem::path out_dir;
  unsigned threads = 0;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
  LogLevel level = LogLevel::kWarn;
  std::vector<std::string> outputs;  // files written, relative to out_dir

  void log(LogLevel at, const std::string& msg) const;
  std::filesystem::path output(const std::string& name);
};

// Each executor runs from a fully resolved config and returns an exit code.
int exec_gen_env(const Json& cfg, Context& ctx);
int exec_simulate(const Json& cfg, Context& ctx);
int exec_evaluate(const Json& cfg, Context& ctx);
int exec_train(const Json& cfg, Context& ctx);
int exec_sweep(const Json& cfg, Context& ctx);
int exec_efficiency(const Json& cfg, Context& ctx);
int exec_compare(const Json& cfg, Context& ctx);
int exec_oracle(const Json& cfg, Context& ctx);
int exec_selftest(const Json& cfg, Context& ctx);

int dispatch(const std::string& subcommand, const Json& cfg, Context& ctx);

}  // namespace drpo::cli
