#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "drpo/core_model.hpp"
#include "drpo/estimators.hpp"
#include "drpo/nuisance.hpp"
#include "drpo/oracle.hpp"

namespace drpo {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

// Every document carries {"schema_version": 1, "type": "<kind>"}. Doubles are
// written in shortest round-trip form, so parse(dump(v)) is bit-identical.
// Logits of -infinity (exact zero probabilities) are written as null.
Json to_json(const Policy& policy);
Json to_json(const RewardTable& reward);
Json to_json(const PreferenceModel& model);
Json to_json(const PreferenceDataset& data);
Json to_json(const Environment& env);
Json to_json(const OracleReport& report);
Json to_json(const EstimateReport& report);
Json to_json(const EstimatorConfig& cfg);
Json to_json(const FitMeta& meta);

Policy policy_from_json(const Json& doc);
RewardTable reward_from_json(const Json& doc);
PreferenceModel preference_from_json(const Json& doc);
PreferenceDataset dataset_from_json(const Json& doc);
Environment environment_from_json(const Json& doc);

// Throws UsageError on unreadable files or malformed JSON.
Json read_json_file(const std::filesystem::path& path);
// Two-space indented, trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& doc);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// Locale-independent shortest round-trip text for CSV cells; "nan", "inf"
// and "-inf" for non-finite values.
std::string format_number(double v);

// 64-bit FNV-1a of a string, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace drpo
