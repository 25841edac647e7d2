#pragma once

// Experiment configuration with JSON / TOML round-tripping.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "embudget/allocator.hpp"
#include "embudget/recommender.hpp"
#include "embudget/sac.hpp"

namespace embudget {

enum class Policy { kScall, kEs, kMr };

Policy parse_policy(std::string_view name);
std::string_view to_string(Policy policy);

struct ExperimentConfig {
  std::string dataset;  // CSV/TSV path; may be empty when a log is supplied
  int k_core = 0;
  std::int64_t m = 1000;  // new entities per segment
  double train_fraction = 0.8;
  BudgetSpec budget = BudgetSpec::mean(32, 1, 256);
  Distribution dist = Distribution::kPowerLaw;
  TieBreak tie_break = TieBreak::kNewerFirst;
  bool merged = false;  // single shared shape parameter, reduced state
  int groups = 256;     // L
  double gamma = 0.5;   // reservoir ratio
  std::vector<std::uint64_t> seeds{0};
  int search_iterations = 20;  // N
  RecommenderConfig recommender;
  SacConfig agent;
  Policy policy = Policy::kScall;
  // Dense ids whose sizes are traced across segments.
  std::vector<EntityId> tracked_users;
  std::vector<EntityId> tracked_items;
};

// Throws ConfigError on any out-of-range field.
void validate(const ExperimentConfig& config);

nlohmann::ordered_json to_json(const ExperimentConfig& config);
// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);

std::string to_toml(const ExperimentConfig& config);
ExperimentConfig config_from_toml(const std::string& text);

// Format chosen by extension: .toml, otherwise JSON.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path);

// Sets a dotted key ("recommender.batch_size") from its textual value. The
// value is read as JSON when it parses, otherwise as a plain string. The
// result is not validated; call validate() after the last override.
void apply_override(ExperimentConfig& config, std::string_view key,
                    std::string_view value);

}  // namespace embudget
