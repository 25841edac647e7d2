#pragma once

// End-to-end streaming experiment: segment the log, allocate embedding sizes
// per segment (learned policy or a fixed baseline), train and evaluate the
// recommender, and collect a report.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "embudget/allocator.hpp"
#include "embudget/config.hpp"
#include "embudget/recommender.hpp"
#include "embudget/stream_corpus.hpp"

namespace embudget {

struct PlanSummary {
  std::int64_t total = 0;
  int user_min = 0, user_max = 0;
  int item_min = 0, item_max = 0;
  double user_mean = 0.0, item_mean = 0.0;
};

PlanSummary summarize(const AllocationPlan& plan);

struct SearchRecord {
  Action action;
  double eval = 0.0;
  double eval_ref = 0.0;
  double reward = 0.0;
  std::int64_t best_step = 0;
};

struct SegmentRecord {
  int index = 0;
  std::int32_t users = 0;
  std::int32_t items = 0;
  std::int64_t train_events = 0;
  std::int64_t reservoir_events = 0;
  std::int64_t test_events = 0;
  std::int64_t budget = 0;
  std::int64_t param_count = 0;
  std::optional<Action> action;  // learned policy only
  PlanSummary plan;
  MetricsReport metrics;
  std::int64_t steps_run = 0;
  std::int64_t best_step = 0;
  std::vector<SearchRecord> search;
  std::size_t transitions = 0;  // replay size when the permanent step ran
  std::map<EntityId, int> tracked_user_sizes;
  std::map<EntityId, int> tracked_item_sizes;
};

struct RunReport {
  std::string policy;
  std::string dist;
  bool merged = false;
  std::string budget_mode;  // "mean" or "total"
  std::int64_t budget_value = 0;  // c or B
  std::uint64_t seed = 0;
  std::vector<SegmentRecord> segments;
  double mean_recall_at_20 = 0.0;
  double mean_ndcg_at_20 = 0.0;
  double mean_eval = 0.0;

  // Deterministic serialisation (fixed key order, shortest round-trip
  // doubles).
  nlohmann::ordered_json to_json() const;
  std::string dump() const { return to_json().dump(2); }
};

RunReport report_from_json(const nlohmann::json& j);

// One JSON object per call (search iterations, segments). May be empty.
using MetricsSink = std::function<void(const nlohmann::ordered_json&)>;

RunReport run_scall(const ExperimentConfig& config, const InteractionLog& log,
                    std::uint64_t seed, const MetricsSink& sink = {});
RunReport run_baseline(const ExperimentConfig& config,
                       const InteractionLog& log, std::uint64_t seed,
                       const MetricsSink& sink = {});
// Dispatches on config.policy.
RunReport run_policy(const ExperimentConfig& config, const InteractionLog& log,
                     std::uint64_t seed, const MetricsSink& sink = {});

// Loads config.dataset and runs every configured seed.
std::vector<RunReport> run_experiment(const ExperimentConfig& config,
                                      const MetricsSink& sink = {});

}  // namespace embudget
