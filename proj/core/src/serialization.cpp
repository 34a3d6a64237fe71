#include "drpo/serialization.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "drpo/errors.hpp"

namespace drpo {
namespace {

Json header(const char* type) {
  Json doc = Json::object();
  doc["schema_version"] = kSchemaVersion;
  doc["type"] = type;
  return doc;
}

void expect_type(const Json& doc, const char* type) {
  if (!doc.is_object()) throw UsageError(std::string("expected a JSON object for ") + type);
  if (doc.value("schema_version", 0) != kSchemaVersion) {
    throw UsageError(std::string("unsupported schema_version for ") + type);
  }
  if (doc.value("type", std::string()) != type) {
    throw UsageError(std::string("expected document type '") + type + "', got '" +
                     doc.value("type", std::string()) + "'");
  }
}

Json logits_to_json(const PerPrompt<double>& logits) {
  Json rows = Json::array();
  for (const auto& row : logits) {
    Json out = Json::array();
    for (double v : row) {
      if (std::isinf(v)) {
        out.push_back(nullptr);
      } else {
        out.push_back(v);
      }
    }
    rows.push_back(std::move(out));
  }
  return rows;
}

PerPrompt<double> logits_from_json(const Json& rows) {
  PerPrompt<double> logits;
  for (const auto& row : rows) {
    std::vector<double> out;
    for (const auto& v : row) {
      out.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
    }
    logits.push_back(std::move(out));
  }
  return logits;
}

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw UsageError(std::string("malformed ") + what + " document: " + e.what());
  }
}

}  // namespace

Json to_json(const Policy& policy) {
  Json doc = header("policy");
  doc["logits"] = logits_to_json(policy.all_logits());
  return doc;
}

Policy policy_from_json(const Json& doc) {
  expect_type(doc, "policy");
  return guarded("policy", [&] { return Policy::from_logits(logits_from_json(doc.at("logits"))); });
}

Json to_json(const RewardTable& reward) {
  Json doc = header("reward_table");
  doc["bound"] = reward.bound();
  doc["values"] = reward.values();
  return doc;
}

RewardTable reward_from_json(const Json& doc) {
  expect_type(doc, "reward_table");
  return guarded("reward_table", [&] {
    return RewardTable(doc.at("values").get<PerPrompt<double>>(), doc.at("bound").get<double>());
  });
}

Json to_json(const PreferenceModel& model) {
  Json doc = header("preference_model");
  doc["misspecified"] = model.misspecified();
  if (model.seed()) doc["seed"] = *model.seed();
  switch (model.kind()) {
    case PreferenceModel::Kind::kBradleyTerry:
      doc["kind"] = "bradley_terry";
      doc["reward"] = to_json(*model.reward());
      break;
    case PreferenceModel::Kind::kTable: {
      doc["kind"] = "table";
      Json matrices = Json::array();
      for (std::size_t x = 0; x < model.shape().prompts(); ++x) {
        const auto m = model.matrix(x);
        matrices.push_back(std::vector<double>(m.begin(), m.end()));
      }
      doc["matrices"] = std::move(matrices);
      break;
    }
    case PreferenceModel::Kind::kConstant:
      doc["kind"] = "constant";
      doc["value"] = model.constant_value();
      doc["vocab_sizes"] = model.shape().sizes();
      break;
  }
  return doc;
}

PreferenceModel preference_from_json(const Json& doc) {
  expect_type(doc, "preference_model");
  return guarded("preference_model", [&] {
    const std::string kind = doc.at("kind").get<std::string>();
    const bool misspecified = doc.value("misspecified", false);
    if (kind == "bradley_terry") return PreferenceModel::bradley_terry(reward_from_json(doc.at("reward")));
    if (kind == "table") {
      auto matrices = doc.at("matrices").get<PerPrompt<double>>();
      if (misspecified) {
        std::optional<std::uint64_t> seed;
        if (doc.contains("seed")) seed = doc.at("seed").get<std::uint64_t>();
        return PreferenceModel::misspecified_table(std::move(matrices), seed);
      }
      return PreferenceModel::table(std::move(matrices));
    }
    if (kind == "constant") {
      const VocabShape shape(doc.at("vocab_sizes").get<std::vector<std::size_t>>());
      const double c = doc.at("value").get<double>();
      return misspecified ? PreferenceModel::misspecified_constant(shape, c)
                          : PreferenceModel::constant(shape, c);
    }
    throw UsageError("unknown preference model kind '" + kind + "'");
  });
}

Json to_json(const PreferenceDataset& data) {
  Json doc = header("preference_dataset");
  doc["seed"] = data.seed();
  doc["augmented"] = data.augmented();
  Json tuples = Json::array();
  for (const auto& t : data.tuples()) tuples.push_back({t.prompt, t.y1, t.y2, t.z});
  doc["tuples"] = std::move(tuples);
  return doc;
}

PreferenceDataset dataset_from_json(const Json& doc) {
  expect_type(doc, "preference_dataset");
  return guarded("preference_dataset", [&] {
    std::vector<PreferenceTuple> tuples;
    for (const auto& row : doc.at("tuples")) {
      tuples.push_back({row.at(0).get<std::size_t>(), row.at(1).get<std::size_t>(),
                        row.at(2).get<std::size_t>(), row.at(3).get<int>()});
    }
    return PreferenceDataset(std::move(tuples), doc.at("seed").get<std::uint64_t>(),
                             doc.at("augmented").get<bool>());
  });
}

Json to_json(const Environment& env) {
  Json doc = header("environment");
  doc["prompts"] = env.prompts();
  doc["prompt_weights"] = env.prompt_weights();
  doc["vocab"] = env.vocab();
  doc["ref_policy"] = to_json(env.ref_policy());
  doc["preference"] = to_json(env.preference());
  return doc;
}

Environment environment_from_json(const Json& doc) {
  expect_type(doc, "environment");
  return guarded("environment", [&] {
    return Environment(doc.at("prompts").get<std::vector<std::string>>(),
                       doc.at("prompt_weights").get<std::vector<double>>(),
                       doc.at("vocab").get<PerPrompt<std::string>>(),
                       policy_from_json(doc.at("ref_policy")),
                       preference_from_json(doc.at("preference")));
  });
}

Json to_json(const OracleReport& report) {
  Json doc = header("oracle_report");
  doc["total_preference"] = report.total_preference;
  doc["expected_reward"] = report.expected_reward ? Json(*report.expected_reward) : Json(nullptr);
  doc["kl_to_ref"] = report.kl_to_ref;
  doc["psi_variance"] = report.psi_variance;
  doc["n"] = report.n;
  doc["seb"] = report.seb;
  doc["realized_coverage"] = report.realized_coverage;
  return doc;
}

Json to_json(const EstimatorConfig& cfg) {
  Json doc = Json::object();
  doc["kind"] = to_string(cfg.kind);
  doc["clip_max"] = cfg.clip_max ? Json(*cfg.clip_max) : Json(nullptr);
  if (const auto* mc = std::get_if<DmMonteCarlo>(&cfg.dm_mode)) {
    doc["dm_mode"] = {{"mode", "monte_carlo"}, {"samples", mc->samples}, {"seed", mc->seed}};
  } else {
    doc["dm_mode"] = {{"mode", "exact"}};
  }
  return doc;
}

Json to_json(const EstimateReport& report) {
  Json doc = header("estimate_report");
  doc["value"] = report.value;
  doc["config"] = to_json(report.config);
  doc["provenance"] = {{"g", report.provenance.g_source}, {"ref", report.provenance.ref_source}};
  doc["per_tuple"] = report.per_tuple;
  return doc;
}

Json to_json(const FitMeta& meta) {
  return {{"seed", meta.data_seed},
          {"steps", meta.steps},
          {"initial_grad_norm", meta.initial_grad_norm},
          {"final_grad_norm", meta.final_grad_norm},
          {"converged", meta.converged}};
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

void write_json_file(const std::filesystem::path& path, const Json& doc) {
  write_text_file(path, doc.dump(2) + "\n");
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return Json(v).dump();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace drpo
