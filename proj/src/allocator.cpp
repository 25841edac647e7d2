#include "embudget/allocator.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "embudget/error.hpp"
#include "embudget/rng.hpp"

namespace embudget {
namespace {

std::int64_t capped_sum(std::span<const int> s, int level) {
  std::int64_t total = 0;
  for (int v : s) total += std::min(v, level);
  return total;
}

void check_feasible(std::int64_t budget, std::int64_t entities, int d_min) {
  if (budget < entities * d_min)
    throw InfeasibleBudgetError(
        "budget " + std::to_string(budget) + " cannot give " +
        std::to_string(entities) + " entities the minimum size " +
        std::to_string(d_min));
}

void scatter(std::span<const int> ranked, std::span<const EntityId> order,
             std::vector<int>& out) {
  out.assign(order.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r) out[order[r]] = ranked[r];
}

double truncated_normal(std::mt19937_64& rng, double mean, double scale) {
  std::normal_distribution<double> normal(mean, scale);
  // Acceptance probability is at least ~1/2 whenever mean lies in (0, 1].
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double x = normal(rng);
    if (x > 0.0 && x < 1.0) return x;
  }
  return std::clamp(mean, 1e-12, 1.0 - 1e-12);
}

}  // namespace

Distribution parse_distribution(std::string_view name) {
  if (name == "powerlaw" || name == "power_law") return Distribution::kPowerLaw;
  if (name == "pareto") return Distribution::kPareto;
  if (name == "truncnormal" || name == "normal")
    return Distribution::kTruncNormal;
  throw ConfigError("unknown distribution '" + std::string(name) +
                    "' (expected powerlaw, pareto or truncnormal)");
}

std::string_view to_string(Distribution dist) {
  switch (dist) {
    case Distribution::kPowerLaw: return "powerlaw";
    case Distribution::kPareto: return "pareto";
    case Distribution::kTruncNormal: return "truncnormal";
  }
  return "unknown";
}

ShapeBounds shape_bounds(Distribution dist) {
  switch (dist) {
    case Distribution::kPowerLaw: return {0.1, 30.0};
    case Distribution::kPareto: return {30.0, 100.0};
    case Distribution::kTruncNormal: return {1e-5, 1e-4};
  }
  throw ConfigError("unknown distribution");
}

std::int64_t resolve_budget(const BudgetSpec& budget, std::int64_t user_count,
                            std::int64_t item_count) {
  if (budget.mode == BudgetSpec::Mode::kMeanSize)
    return budget.mean_size * (user_count + item_count);
  return budget.total;
}

std::int64_t AllocationPlan::total() const {
  return std::accumulate(user_sizes.begin(), user_sizes.end(), std::int64_t{0}) +
         std::accumulate(item_sizes.begin(), item_sizes.end(), std::int64_t{0});
}

std::vector<double> sample_fractions(std::size_t n, double alpha,
                                     Distribution dist, std::uint64_t seed) {
  if (n == 0) throw ValidationError("sample_fractions needs n >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw ValidationError("distribution shape parameter must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> q(n);
  switch (dist) {
    case Distribution::kPowerLaw:
      // Inverse CDF of density alpha * x^(alpha - 1) on (0, 1).
      for (auto& x : q) x = std::pow(unif(rng), 1.0 / alpha);
      break;
    case Distribution::kPareto:
      // Standard Pareto with scale 1: support starts at 1.
      for (auto& x : q) x = std::pow(1.0 - unif(rng), -1.0 / alpha);
      break;
    case Distribution::kTruncNormal: {
      double mean = 1.0 / static_cast<double>(n);
      for (auto& x : q) x = truncated_normal(rng, mean, alpha);
      break;
    }
  }
  std::sort(q.begin(), q.end(), std::greater<>());
  double total = std::accumulate(q.begin(), q.end(), 0.0);
  if (!(total > 0.0)) {
    std::fill(q.begin(), q.end(), 1.0 / static_cast<double>(n));
    return q;
  }
  for (auto& x : q) x /= total;
  return q;
}

std::vector<EntityId> frequency_order(std::span<const std::int64_t> counts,
                                      TieBreak tie_break) {
  std::vector<EntityId> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](EntityId a, EntityId b) {
    if (counts[a] != counts[b]) return counts[a] > counts[b];
    return tie_break == TieBreak::kNewerFirst ? a > b : a < b;
  });
  return order;
}

std::vector<int> clamp_and_repair(std::span<const std::int64_t> raw_sizes,
                                  std::int64_t budget, int d_min, int d_max) {
  if (d_min < 1 || d_max < d_min)
    throw ValidationError("size bounds must satisfy d_max >= d_min >= 1");
  auto n = static_cast<std::int64_t>(raw_sizes.size());
  check_feasible(budget, n, d_min);

  std::vector<int> s(raw_sizes.size());
  std::int64_t sum = 0;
  int top = d_min;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (raw_sizes[i] < 0) throw ValidationError("raw sizes must be >= 0");
    s[i] = static_cast<int>(
        std::clamp<std::int64_t>(raw_sizes[i], d_min, d_max));
    sum += s[i];
    top = std::max(top, s[i]);
  }
  if (sum <= budget) return s;

  // Largest level whose cap fits the budget; capping at level + 1 does not.
  int lo = d_min, hi = top;
  while (hi - lo > 1) {
    int mid = lo + (hi - lo) / 2;
    (capped_sum(s, mid) <= budget ? lo : hi) = mid;
  }
  int level = lo;
  std::int64_t over = capped_sum(s, level + 1) - budget;
  for (auto& v : s) v = std::min(v, level + 1);
  for (auto i = static_cast<std::ptrdiff_t>(s.size()) - 1; i >= 0 && over > 0;
       --i) {
    if (s[i] == level + 1) {
      --s[i];
      --over;
    }
  }
  return s;
}

AllocationPlan allocate(const Action& action, const BudgetSpec& budget,
                        const FrequencyTable& freq, std::uint64_t seed,
                        const AllocateOptions& options) {
  if (!(action.w >= 0.0 && action.w <= 1.0))
    throw ValidationError("user share w must lie in (0, 1)");
  auto users = static_cast<std::int64_t>(freq.user_counts.size());
  auto items = static_cast<std::int64_t>(freq.item_counts.size());
  if (users == 0 || items == 0)
    throw ValidationError("frequency table must cover at least one user and item");
  std::int64_t b = resolve_budget(budget, users, items);
  check_feasible(b, users + items, budget.d_min);

  AllocationPlan plan;
  plan.budget = b;
  plan.user_order = frequency_order(freq.user_counts, options.tie_break);
  plan.item_order = frequency_order(freq.item_counts, options.tie_break);
  auto pu = sample_fractions(users, action.alpha_u, options.dist,
                             derive_seed(seed, 1));
  auto pv = sample_fractions(items, action.alpha_v, options.dist,
                             derive_seed(seed, 2));

  std::vector<std::int64_t> raw(static_cast<std::size_t>(users + items));
  double user_share = action.w * static_cast<double>(b);
  double item_share = (1.0 - action.w) * static_cast<double>(b);
  for (std::int64_t r = 0; r < users; ++r)
    raw[r] = static_cast<std::int64_t>(std::floor(user_share * pu[r]));
  for (std::int64_t r = 0; r < items; ++r)
    raw[users + r] = static_cast<std::int64_t>(std::floor(item_share * pv[r]));

  auto sizes = clamp_and_repair(raw, b, budget.d_min, budget.d_max);
  std::span<const int> all(sizes);
  scatter(all.first(users), plan.user_order, plan.user_sizes);
  scatter(all.subspan(users), plan.item_order, plan.item_sizes);
  return plan;
}

AllocationPlan allocate_merged(double alpha, const BudgetSpec& budget,
                               const FrequencyTable& freq, std::uint64_t seed,
                               const AllocateOptions& options) {
  auto users = static_cast<std::int64_t>(freq.user_counts.size());
  auto items = static_cast<std::int64_t>(freq.item_counts.size());
  if (users == 0 || items == 0)
    throw ValidationError("frequency table must cover at least one user and item");
  std::int64_t b = resolve_budget(budget, users, items);
  check_feasible(b, users + items, budget.d_min);

  // Merged index: users keep their ids, items are offset by `users`. Among
  // equal counts the larger merged index (an item, or a newer entity) wins.
  std::vector<std::int64_t> counts(freq.user_counts);
  counts.insert(counts.end(), freq.item_counts.begin(), freq.item_counts.end());
  auto order = frequency_order(counts, options.tie_break);
  auto p = sample_fractions(order.size(), alpha, options.dist,
                            derive_seed(seed, 3));
  std::vector<std::int64_t> raw(order.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    raw[r] = static_cast<std::int64_t>(std::floor(static_cast<double>(b) * p[r]));
  auto sizes = clamp_and_repair(raw, b, budget.d_min, budget.d_max);

  AllocationPlan plan;
  plan.budget = b;
  plan.user_sizes.assign(users, 0);
  plan.item_sizes.assign(items, 0);
  for (std::size_t r = 0; r < order.size(); ++r) {
    auto id = order[r];
    if (id < users) {
      plan.user_sizes[id] = sizes[r];
      plan.user_order.push_back(id);
    } else {
      plan.item_sizes[id - users] = sizes[r];
      plan.item_order.push_back(static_cast<EntityId>(id - users));
    }
  }
  return plan;
}

AllocationPlan allocate_uniform(const BudgetSpec& budget,
                                std::int32_t user_count,
                                std::int32_t item_count) {
  std::int64_t n = std::int64_t{user_count} + item_count;
  std::int64_t b = resolve_budget(budget, user_count, item_count);
  check_feasible(b, n, budget.d_min);
  int size = static_cast<int>(
      std::clamp<std::int64_t>(b / n, budget.d_min, budget.d_max));
  AllocationPlan plan;
  plan.budget = b;
  plan.user_sizes.assign(user_count, size);
  plan.item_sizes.assign(item_count, size);
  plan.user_order.resize(user_count);
  plan.item_order.resize(item_count);
  std::iota(plan.user_order.begin(), plan.user_order.end(), 0);
  std::iota(plan.item_order.begin(), plan.item_order.end(), 0);
  return plan;
}

AllocationPlan allocate_random(const BudgetSpec& budget,
                               std::int32_t user_count,
                               std::int32_t item_count, std::uint64_t seed) {
  std::int64_t n = std::int64_t{user_count} + item_count;
  std::int64_t b = resolve_budget(budget, user_count, item_count);
  check_feasible(b, n, budget.d_min);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(budget.d_min, budget.d_max);
  std::vector<std::int64_t> raw(static_cast<std::size_t>(n));
  std::int64_t drawn = 0;
  for (auto& r : raw) {
    r = pick(rng);
    drawn += r;
  }
  double scale = static_cast<double>(b) / static_cast<double>(drawn);
  for (auto& r : raw)
    r = static_cast<std::int64_t>(std::floor(static_cast<double>(r) * scale));
  auto sizes = clamp_and_repair(raw, b, budget.d_min, budget.d_max);

  AllocationPlan plan;
  plan.budget = b;
  plan.user_sizes.assign(sizes.begin(), sizes.begin() + user_count);
  plan.item_sizes.assign(sizes.begin() + user_count, sizes.end());
  plan.user_order.resize(user_count);
  plan.item_order.resize(item_count);
  std::iota(plan.user_order.begin(), plan.user_order.end(), 0);
  std::iota(plan.item_order.begin(), plan.item_order.end(), 0);
  return plan;
}

void write_plan(const AllocationPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out << "# users=" << plan.user_sizes.size()
      << " items=" << plan.item_sizes.size() << " budget=" << plan.budget
      << '\n';
  std::size_t row = 0;
  for (int s : plan.user_sizes) out << row++ << '\t' << s << '\n';
  for (int s : plan.item_sizes) out << row++ << '\t' << s << '\n';
}

AllocationPlan read_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::string line;
  std::size_t users = 0, items = 0;
  AllocationPlan plan;
  if (!std::getline(in, line) ||
      std::sscanf(line.c_str(), "# users=%zu items=%zu budget=%" SCNd64, &users,
                  &items, &plan.budget) != 3)
    throw FormatError("plan file is missing its header line");
  std::vector<int> sizes;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t id = 0;
    int size = 0;
    if (!(row >> id >> size) || id != sizes.size())
      throw ParseError(line_no, "expected '<row id>\\t<size>' in order");
    sizes.push_back(size);
  }
  if (sizes.size() != users + items)
    throw FormatError("plan file row count does not match its header");
  plan.user_sizes.assign(sizes.begin(), sizes.begin() + users);
  plan.item_sizes.assign(sizes.begin() + users, sizes.end());
  return plan;
}

}  // namespace embudget
