#pragma once

// Budgeted embedding-size allocation.
//
// An action (w, alpha_u, alpha_v) splits the budget B into wB for users and
// (1 - w)B for items. Within each block, one fraction per entity is drawn
// from a shape-parameterised distribution, sorted descending, normalised,
// and handed out along the frequency-descending entity order. Sizes are the
// floors of the resulting shares, then clamped into [d_min, d_max] and
// repaired so the total never exceeds B.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embudget/stream_corpus.hpp"

namespace embudget {

enum class Distribution { kPowerLaw, kPareto, kTruncNormal };

Distribution parse_distribution(std::string_view name);
std::string_view to_string(Distribution dist);

struct ShapeBounds {
  double lo = 0.0;
  double hi = 0.0;
};

// Open bounds of the shape parameter for each distribution.
ShapeBounds shape_bounds(Distribution dist);

struct Action {
  double w = 0.5;
  double alpha_u = 1.0;
  double alpha_v = 1.0;

  friend bool operator==(const Action&, const Action&) = default;
};

struct BudgetSpec {
  enum class Mode { kMeanSize, kTotal };
  Mode mode = Mode::kMeanSize;
  std::int64_t mean_size = 0;  // c
  std::int64_t total = 0;      // B
  int d_min = 1;
  int d_max = 256;

  static BudgetSpec mean(std::int64_t c, int d_min, int d_max) {
    return {Mode::kMeanSize, c, 0, d_min, d_max};
  }
  static BudgetSpec fixed(std::int64_t b, int d_min, int d_max) {
    return {Mode::kTotal, 0, b, d_min, d_max};
  }
};

// B = c * (users + items) in mean-size mode, else the configured total.
std::int64_t resolve_budget(const BudgetSpec& budget, std::int64_t user_count,
                            std::int64_t item_count);

enum class TieBreak { kNewerFirst, kOlderFirst };

struct AllocationPlan {
  std::vector<int> user_sizes;  // indexed by user id
  std::vector<int> item_sizes;  // indexed by item id
  // Frequency-descending rank -> entity id.
  std::vector<EntityId> user_order;
  std::vector<EntityId> item_order;
  std::int64_t budget = 0;

  std::int64_t total() const;
};

// n i.i.d. draws, sorted descending and normalised to sum to one.
std::vector<double> sample_fractions(std::size_t n, double alpha,
                                     Distribution dist, std::uint64_t seed);

// Entity ids ordered by descending count. Ties put the newer entity (larger
// id) first under kNewerFirst.
std::vector<EntityId> frequency_order(std::span<const std::int64_t> counts,
                                      TieBreak tie_break);

// Clamps into [d_min, d_max], then while the total exceeds B decrements the
// currently largest size. Among equal largest sizes the one furthest down
// the list is decremented first, so a non-increasing input stays
// non-increasing. Throws InfeasibleBudgetError when n * d_min > B.
std::vector<int> clamp_and_repair(std::span<const std::int64_t> raw_sizes,
                                  std::int64_t budget, int d_min, int d_max);

struct AllocateOptions {
  Distribution dist = Distribution::kPowerLaw;
  TieBreak tie_break = TieBreak::kNewerFirst;
};

AllocationPlan allocate(const Action& action, const BudgetSpec& budget,
                        const FrequencyTable& freq, std::uint64_t seed,
                        const AllocateOptions& options = {});

// Merged variant: users and items ranked together and a single shape
// parameter covers the whole budget.
AllocationPlan allocate_merged(double alpha, const BudgetSpec& budget,
                               const FrequencyTable& freq, std::uint64_t seed,
                               const AllocateOptions& options = {});

// Every entity gets floor(B / (users + items)) clamped into bounds.
AllocationPlan allocate_uniform(const BudgetSpec& budget,
                                std::int32_t user_count,
                                std::int32_t item_count);

// i.i.d. uniform integer sizes in [d_min, d_max], rescaled towards B and
// repaired.
AllocationPlan allocate_random(const BudgetSpec& budget,
                               std::int32_t user_count,
                               std::int32_t item_count, std::uint64_t seed);

// Two-column text form: "<row id>\t<size>", users first then items.
void write_plan(const AllocationPlan& plan, const std::filesystem::path& path);
AllocationPlan read_plan(const std::filesystem::path& path);

}  // namespace embudget
