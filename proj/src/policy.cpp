#include "embudget/policy.hpp"

#include <algorithm>
#include <cmath>

#include "embudget/error.hpp"

namespace embudget {

std::vector<double> pooled_frequency(std::span<const std::int64_t> counts,
                                     int groups) {
  if (groups < 1) throw ValidationError("pooling needs at least one group");
  std::vector<double> out(static_cast<std::size_t>(groups), 0.0);
  if (counts.empty()) return out;

  auto [lo_it, hi_it] = std::minmax_element(counts.begin(), counts.end());
  double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
  std::vector<double> norm(counts.size(), 0.0);
  if (hi > lo)
    for (std::size_t i = 0; i < counts.size(); ++i)
      norm[i] = (static_cast<double>(counts[i]) - lo) / (hi - lo);
  std::sort(norm.begin(), norm.end(), std::greater<>());

  auto n = norm.size();
  auto g = static_cast<std::size_t>(groups);
  auto used = std::min(n, g);
  auto base = n / used, extra = n % used;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < used; ++k) {
    auto len = base + (k < extra ? 1 : 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < len; ++i) sum += norm[pos + i];
    out[k] = sum / static_cast<double>(len);
    pos += len;
  }
  return out;
}

double dispersion(std::span<const int> sizes, int d_min, int d_max) {
  if (sizes.empty()) throw ValidationError("dispersion of an empty size list");
  if (d_max <= d_min) return 0.0;
  auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  return static_cast<double>(*hi - *lo) / static_cast<double>(d_max - d_min);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> mean_embeddings(
    const MaskedEmbeddingTable& table) {
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(table.d_max());
  Eigen::VectorXd mv = Eigen::VectorXd::Zero(table.d_max());
  const auto& vals = table.values();
  const auto& sizes = table.sizes();
  for (std::int64_t r = 0; r < table.row_count(); ++r) {
    int d = sizes[static_cast<std::size_t>(r)];
    auto& target = r < table.user_count() ? mu : mv;
    target.head(d) += vals.row(r).head(d).transpose();
  }
  if (table.user_count() > 0) mu /= static_cast<double>(table.user_count());
  if (table.item_count() > 0) mv /= static_cast<double>(table.item_count());
  return {mu, mv};
}

Eigen::VectorXd StateVector::flatten() const {
  std::vector<double> v;
  if (merged) {
    v.insert(v.end(), f_merged.begin(), f_merged.end());
    v.push_back(prev_reward);
    v.push_back(user_ratio);
  } else {
    v.insert(v.end(), f_user.begin(), f_user.end());
    v.insert(v.end(), f_item.begin(), f_item.end());
    v.push_back(prev_reward);
    v.push_back(user_ratio);
    v.push_back(h_user);
    v.push_back(h_item);
  }
  v.insert(v.end(), m_user.data(), m_user.data() + m_user.size());
  v.insert(v.end(), m_item.data(), m_item.data() + m_item.size());
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::int64_t state_length(int groups, int d_max, bool merged) {
  return merged ? std::int64_t{groups} + 2 * std::int64_t{d_max} + 2
                : 2 * std::int64_t{groups} + 2 * std::int64_t{d_max} + 4;
}

StateVector build_state(const FrequencyTable& freq, double prev_reward,
                        const MaskedEmbeddingTable& table,
                        const AllocationPlan& last_plan, int groups,
                        bool merged) {
  StateVector s;
  s.merged = merged;
  s.prev_reward = prev_reward;
  auto users = static_cast<double>(freq.user_counts.size());
  auto items = static_cast<double>(freq.item_counts.size());
  s.user_ratio = users + items > 0 ? users / (users + items) : 0.0;
  if (merged) {
    std::vector<std::int64_t> all(freq.user_counts);
    all.insert(all.end(), freq.item_counts.begin(), freq.item_counts.end());
    s.f_merged = pooled_frequency(all, groups);
  } else {
    s.f_user = pooled_frequency(freq.user_counts, groups);
    s.f_item = pooled_frequency(freq.item_counts, groups);
    if (!last_plan.user_sizes.empty())
      s.h_user = dispersion(last_plan.user_sizes, table.d_min(), table.d_max());
    if (!last_plan.item_sizes.empty())
      s.h_item = dispersion(last_plan.item_sizes, table.d_min(), table.d_max());
  }
  std::tie(s.m_user, s.m_item) = mean_embeddings(table);
  return s;
}

double compute_reward(double eval_new, double eval_ref) {
  if (eval_ref <= 0.0) return eval_new > 0.0 ? 10.0 : 5.0;
  return std::clamp(5.0 * eval_new / eval_ref, 0.0, 10.0);
}

}  // namespace embudget
