#pragma once

// Tabular summaries over one or more run reports.

#include <string>
#include <vector>

#include "embudget/harness.hpp"

namespace embudget {

// One row per report:
// policy,dist,merged,budget_mode,budget,seed,segments,recall_at_20,ndcg_at_20,eval
std::string comparison_csv(const std::vector<RunReport>& reports);

// Long-format size trajectories of the tracked entities:
// policy,seed,kind,entity,segment,size
std::string trajectory_csv(const std::vector<RunReport>& reports);

// Per-segment metrics of every report:
// policy,dist,budget,seed,segment,users,items,param_count,recall_at_20,ndcg_at_20,eval
std::string segment_csv(const std::vector<RunReport>& reports);

}  // namespace embudget
