#include "embudget/report.hpp"

#include <sstream>

#include "embudget/error.hpp"

namespace embudget {
namespace {

// Shortest text that reads back to the same double.
std::string num(double x) { return nlohmann::json(x).dump(); }

}  // namespace

std::string comparison_csv(const std::vector<RunReport>& reports) {
  if (reports.empty()) throw ValidationError("no reports to compare");
  std::ostringstream os;
  os << "policy,dist,merged,budget_mode,budget,seed,segments,recall_at_20,"
        "ndcg_at_20,eval\n";
  for (const auto& r : reports)
    os << r.policy << ',' << r.dist << ',' << (r.merged ? 1 : 0) << ','
       << r.budget_mode << ',' << r.budget_value << ',' << r.seed << ','
       << r.segments.size() << ',' << num(r.mean_recall_at_20) << ','
       << num(r.mean_ndcg_at_20) << ',' << num(r.mean_eval) << '\n';
  return os.str();
}

std::string trajectory_csv(const std::vector<RunReport>& reports) {
  std::ostringstream os;
  os << "policy,seed,kind,entity,segment,size\n";
  for (const auto& r : reports) {
    // Group by entity so each tracked id forms one contiguous series.
    std::map<EntityId, std::vector<std::pair<int, int>>> users, items;
    for (const auto& s : r.segments) {
      for (auto [id, size] : s.tracked_user_sizes) users[id].emplace_back(s.index, size);
      for (auto [id, size] : s.tracked_item_sizes) items[id].emplace_back(s.index, size);
    }
    auto emit = [&](const char* kind, const auto& series) {
      for (const auto& [id, points] : series)
        for (auto [seg, size] : points)
          os << r.policy << ',' << r.seed << ',' << kind << ',' << id << ','
             << seg << ',' << size << '\n';
    };
    emit("user", users);
    emit("item", items);
  }
  return os.str();
}

std::string segment_csv(const std::vector<RunReport>& reports) {
  std::ostringstream os;
  os << "policy,dist,budget,seed,segment,users,items,param_count,"
        "recall_at_20,ndcg_at_20,eval\n";
  for (const auto& r : reports)
    for (const auto& s : r.segments)
      os << r.policy << ',' << r.dist << ',' << r.budget_value << ','
         << r.seed << ',' << s.index << ',' << s.users << ',' << s.items
         << ',' << s.param_count << ',' << num(s.metrics.recall_at_20) << ','
         << num(s.metrics.ndcg_at_20) << ',' << num(s.metrics.eval_score)
         << '\n';
  return os.str();
}

}  // namespace embudget
