#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "embudget/allocator.hpp"
#include "embudget/error.hpp"

using namespace embudget;

namespace {

// Reference repair: clamp, then one unit at a time take from the largest
// entry, preferring the one furthest down the list.
std::vector<int> greedy_repair(const std::vector<std::int64_t>& raw,
                               std::int64_t budget, int dmin, int dmax) {
  std::vector<int> s;
  for (auto r : raw) s.push_back(static_cast<int>(std::clamp<std::int64_t>(r, dmin, dmax)));
  std::int64_t sum = std::accumulate(s.begin(), s.end(), std::int64_t{0});
  while (sum > budget) {
    std::size_t at = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= s[at]) at = i;
    --s[at];
    --sum;
  }
  return s;
}

double coefficient_of_variation(const std::vector<double>& p) {
  double mean = std::accumulate(p.begin(), p.end(), 0.0) / p.size();
  double var = 0.0;
  for (double x : p) var += (x - mean) * (x - mean);
  return std::sqrt(var / p.size()) / mean;
}

FrequencyTable random_freq(std::mt19937_64& rng, int users, int items) {
  FrequencyTable f;
  std::geometric_distribution<int> g(0.3);
  for (int i = 0; i < users; ++i) f.user_counts.push_back(g(rng));
  for (int i = 0; i < items; ++i) f.item_counts.push_back(g(rng));
  return f;
}

bool non_increasing_along(const std::vector<int>& sizes,
                          const std::vector<EntityId>& order) {
  for (std::size_t r = 1; r < order.size(); ++r)
    if (sizes[order[r - 1]] < sizes[order[r]]) return false;
  return true;
}

}  // namespace

TEST_CASE("distribution names and bounds") {
  CHECK(parse_distribution("powerlaw") == Distribution::kPowerLaw);
  CHECK(parse_distribution("power_law") == Distribution::kPowerLaw);
  CHECK(parse_distribution("pareto") == Distribution::kPareto);
  CHECK(parse_distribution("truncnormal") == Distribution::kTruncNormal);
  CHECK_THROWS_AS(parse_distribution("cauchy"), ConfigError);
  for (auto d : {Distribution::kPowerLaw, Distribution::kPareto, Distribution::kTruncNormal})
    CHECK(parse_distribution(to_string(d)) == d);
  CHECK(shape_bounds(Distribution::kPowerLaw).lo == 0.1);
  CHECK(shape_bounds(Distribution::kPowerLaw).hi == 30.0);
  CHECK(shape_bounds(Distribution::kPareto).lo == 30.0);
  CHECK(shape_bounds(Distribution::kPareto).hi == 100.0);
  CHECK(shape_bounds(Distribution::kTruncNormal).lo == 1e-5);
  CHECK(shape_bounds(Distribution::kTruncNormal).hi == 1e-4);
}

TEST_CASE("resolve_budget") {
  CHECK(resolve_budget(BudgetSpec::mean(16, 1, 256), 4, 6) == 160);
  CHECK(resolve_budget(BudgetSpec::mean(32, 1, 256), 99011, 56441) == 4974464);
  CHECK(resolve_budget(BudgetSpec::mean(16, 1, 256), 66351, 57270) == 1977936);
  CHECK(resolve_budget(BudgetSpec::fixed(2500000, 1, 256), 10, 10) == 2500000);
  CHECK(resolve_budget(BudgetSpec::fixed(1250000, 1, 256), 10, 10) == 1250000);
}

TEST_CASE("sample_fractions basics") {
  for (auto d : {Distribution::kPowerLaw, Distribution::kPareto, Distribution::kTruncNormal}) {
    auto lo = shape_bounds(d).lo * 2;
    auto one = sample_fractions(1, lo, d, 1);
    CHECK(one == std::vector<double>{1.0});
    auto p = sample_fractions(500, lo, d, 3);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0));
    CHECK(std::is_sorted(p.begin(), p.end(), std::greater<>()));
    for (double x : p) CHECK(x >= 0.0);
    CHECK(sample_fractions(500, lo, d, 3) == p);
  }
  CHECK_THROWS_AS(sample_fractions(0, 1.0, Distribution::kPowerLaw, 1), ValidationError);
  CHECK_THROWS_AS(sample_fractions(3, -1.0, Distribution::kPowerLaw, 1), ValidationError);
}

TEST_CASE("power-law inverse CDF") {
  // u = 0.25, alpha = 2 -> 0.5
  CHECK(std::pow(0.25, 1.0 / 2.0) == doctest::Approx(0.5));
  // The sampler's draws follow the CDF x^alpha: the median draw is 0.5^(1/alpha).
  std::mt19937_64 rng(0);
  const double alpha = 2.0;
  const int n = 20001;
  auto p = sample_fractions(n, alpha, Distribution::kPowerLaw, 77);
  // p is normalised; recover the median relative to the mean, which for
  // density alpha x^(alpha-1) is 0.5^(1/alpha) / (alpha / (alpha + 1)).
  double median = p[n / 2] * n;
  double expect = std::pow(0.5, 1.0 / alpha) / (alpha / (alpha + 1.0));
  CHECK(median == doctest::Approx(expect).epsilon(0.02));
}

TEST_CASE("power-law fairness dial is monotone") {
  std::vector<double> alphas{0.1, 1.0, 5.0, 30.0};
  double prev_cv = INFINITY, prev_ratio = INFINITY;
  for (double a : alphas) {
    auto p = sample_fractions(10000, a, Distribution::kPowerLaw, 2024);
    double cv = coefficient_of_variation(p);
    CHECK(cv < prev_cv);
    prev_cv = cv;

    double ratio = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      auto q = sample_fractions(100, a, Distribution::kPowerLaw, 1000 + trial);
      ratio += q.front() / q.back();
    }
    ratio /= 200;
    CHECK(ratio <= prev_ratio);
    prev_ratio = ratio;
  }
}

TEST_CASE("frequency order and tie-breaking") {
  std::vector<std::int64_t> c{5, 3, 5, 1, 3};
  CHECK(frequency_order(c, TieBreak::kNewerFirst) == std::vector<EntityId>{2, 0, 4, 1, 3});
  CHECK(frequency_order(c, TieBreak::kOlderFirst) == std::vector<EntityId>{0, 2, 1, 4, 3});
}

TEST_CASE("clamp and repair hand cases") {
  CHECK(clamp_and_repair(std::vector<std::int64_t>{300, 5}, 1000, 1, 256) ==
        std::vector<int>{256, 5});
  CHECK(clamp_and_repair(std::vector<std::int64_t>{0, 0}, 2, 1, 256) ==
        std::vector<int>{1, 1});
  auto r = clamp_and_repair(std::vector<std::int64_t>{10, 10, 0}, 20, 1, 256);
  CHECK(std::accumulate(r.begin(), r.end(), 0) <= 20);
  CHECK(std::is_sorted(r.begin(), r.end(), std::greater<>()));
  CHECK(r == greedy_repair({10, 10, 0}, 20, 1, 256));
  CHECK(r == std::vector<int>{10, 9, 1});

  try {
    clamp_and_repair(std::vector<std::int64_t>{1, 1, 1}, 2, 1, 8);
    FAIL("expected infeasible budget");
  } catch (const InfeasibleBudgetError& e) {
    CHECK(e.kind() == "infeasible_budget");
  }
}

TEST_CASE("repair agrees with the greedy-decrement oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 500; ++trial) {
    int n = 1 + static_cast<int>(rng() % 30);
    int dmin = 1 + static_cast<int>(rng() % 3);
    int dmax = dmin + static_cast<int>(rng() % 40);
    std::vector<std::int64_t> raw(n);
    for (auto& x : raw) x = static_cast<std::int64_t>(rng() % 80);
    std::sort(raw.begin(), raw.end(), std::greater<>());
    std::int64_t budget = n * dmin + static_cast<std::int64_t>(rng() % (n * 30 + 1));
    auto got = clamp_and_repair(raw, budget, dmin, dmax);
    CHECK(got == greedy_repair(raw, budget, dmin, dmax));
    CHECK(std::is_sorted(got.begin(), got.end(), std::greater<>()));
  }
}

TEST_CASE("single-entity allocation") {
  FrequencyTable f;
  f.user_counts = {3};
  f.item_counts = {1};
  auto plan = allocate({0.5, 1.0, 1.0}, BudgetSpec::fixed(64, 1, 256), f, 7);
  CHECK(plan.user_sizes == std::vector<int>{32});
  CHECK(plan.item_sizes == std::vector<int>{32});
  CHECK(plan.budget == 64);
}

TEST_CASE("allocation invariants over random inputs") {
  std::mt19937_64 rng(5);
  for (auto dist : {Distribution::kPowerLaw, Distribution::kPareto, Distribution::kTruncNormal}) {
    auto bounds = shape_bounds(dist);
    std::uniform_real_distribution<double> ua(bounds.lo, bounds.hi), uw(0.001, 0.999);
    for (int trial = 0; trial < 200; ++trial) {
      int users = 1 + static_cast<int>(rng() % 40);
      int items = 1 + static_cast<int>(rng() % 40);
      auto freq = random_freq(rng, users, items);
      int dmax = 4 + static_cast<int>(rng() % 60);
      BudgetSpec b = trial % 2 ? BudgetSpec::mean(1 + rng() % dmax, 1, dmax)
                               : BudgetSpec::fixed((users + items) * (1 + rng() % dmax), 1, dmax);
      Action a{uw(rng), ua(rng), ua(rng)};
      AllocateOptions opt{dist, TieBreak::kNewerFirst};
      auto plan = allocate(a, b, freq, rng(), opt);
      CHECK(plan.total() <= plan.budget);
      CHECK(plan.user_sizes.size() == static_cast<std::size_t>(users));
      CHECK(plan.item_sizes.size() == static_cast<std::size_t>(items));
      for (int s : plan.user_sizes) CHECK((s >= 1 && s <= dmax));
      for (int s : plan.item_sizes) CHECK((s >= 1 && s <= dmax));
      CHECK(non_increasing_along(plan.user_sizes, plan.user_order));
      CHECK(non_increasing_along(plan.item_sizes, plan.item_order));
      // more frequent never gets less
      for (int i = 0; i < users; ++i)
        for (int j = 0; j < users; ++j)
          if (freq.user_counts[i] > freq.user_counts[j])
            CHECK(plan.user_sizes[i] >= plan.user_sizes[j]);
      auto again = allocate(a, b, freq, 123, opt);
      CHECK(allocate(a, b, freq, 123, opt).user_sizes == again.user_sizes);
    }
  }
}

TEST_CASE("infeasible budgets") {
  FrequencyTable f;
  f.user_counts = {1, 1};
  f.item_counts = {1};
  CHECK_THROWS_AS(allocate({0.5, 1, 1}, BudgetSpec::fixed(2, 1, 8), f, 1), InfeasibleBudgetError);
  CHECK_THROWS_AS(allocate_uniform(BudgetSpec::fixed(2, 1, 8), 2, 1), InfeasibleBudgetError);
  CHECK_THROWS_AS(allocate_random(BudgetSpec::fixed(5, 2, 8), 2, 1, 1), InfeasibleBudgetError);
}

TEST_CASE("w extremes push the item block to the floor") {
  std::mt19937_64 rng(8);
  auto f = random_freq(rng, 30, 20);
  BudgetSpec b = BudgetSpec::mean(8, 1, 1000);
  auto plan = allocate({0.999999, 29.0, 29.0}, b, f, 3);
  std::int64_t items = std::accumulate(plan.item_sizes.begin(), plan.item_sizes.end(), 0);
  std::int64_t users = std::accumulate(plan.user_sizes.begin(), plan.user_sizes.end(), 0);
  CHECK(items == 20);
  CHECK(users >= plan.budget - 20 - 30);
  CHECK(users + items <= plan.budget);
}

TEST_CASE("uniform and random baselines") {
  auto es = allocate_uniform(BudgetSpec::mean(32, 1, 256), 10, 20);
  for (int s : es.user_sizes) CHECK(s == 32);
  for (int s : es.item_sizes) CHECK(s == 32);
  auto clamped = allocate_uniform(BudgetSpec::fixed(100000, 1, 16), 3, 3);
  CHECK(clamped.user_sizes[0] == 16);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto mr = allocate_random(BudgetSpec::mean(8, 1, 32), 25, 35, seed);
    CHECK(mr.total() <= mr.budget);
    for (int s : mr.user_sizes) CHECK((s >= 1 && s <= 32));
    CHECK(allocate_random(BudgetSpec::mean(8, 1, 32), 25, 35, seed).item_sizes == mr.item_sizes);
  }
  auto a = allocate_random(BudgetSpec::mean(8, 1, 32), 25, 35, 1);
  auto b = allocate_random(BudgetSpec::mean(8, 1, 32), 25, 35, 2);
  CHECK(a.user_sizes != b.user_sizes);
}

TEST_CASE("merged allocation covers both blocks under one budget") {
  std::mt19937_64 rng(4);
  auto f = random_freq(rng, 12, 9);
  auto plan = allocate_merged(2.0, BudgetSpec::mean(6, 1, 32), f, 5);
  CHECK(plan.total() <= plan.budget);
  CHECK(plan.user_order.size() == 12);
  CHECK(plan.item_order.size() == 9);
  CHECK(non_increasing_along(plan.user_sizes, plan.user_order));
}

TEST_CASE("plan file round trip") {
  auto path = std::filesystem::temp_directory_path() / "embudget_plan.tsv";
  std::mt19937_64 rng(1);
  auto f = random_freq(rng, 5, 4);
  auto plan = allocate({0.4, 2.0, 3.0}, BudgetSpec::mean(4, 1, 16), f, 9);
  write_plan(plan, path);
  auto back = read_plan(path);
  CHECK(back.user_sizes == plan.user_sizes);
  CHECK(back.item_sizes == plan.item_sizes);
  CHECK(back.budget == plan.budget);
}
