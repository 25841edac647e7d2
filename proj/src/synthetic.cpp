#include "embudget/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "embudget/error.hpp"
#include "embudget/rng.hpp"

namespace embudget {
namespace {

struct Population {
  std::vector<int> by_arrival;   // entity ids sorted by arrival time
  std::vector<double> arrival;   // indexed by entity id
  std::vector<double> weight;    // Zipf weight, indexed by entity id
};

Population make_population(std::int32_t n, double skew, double initial_share,
                           double span, std::mt19937_64& rng) {
  Population p;
  p.arrival.resize(static_cast<std::size_t>(n));
  p.weight.resize(static_cast<std::size_t>(n));
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t r = 0; r < perm.size(); ++r)
    p.weight[static_cast<std::size_t>(perm[r])] =
        1.0 / std::pow(static_cast<double>(r + 1), skew);

  std::uniform_real_distribution<double> unif(0.0, span);
  auto initial = static_cast<std::size_t>(std::ceil(initial_share * n));
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t r = 0; r < perm.size(); ++r)
    p.arrival[static_cast<std::size_t>(perm[r])] = r < initial ? 0.0 : unif(rng);

  p.by_arrival.resize(static_cast<std::size_t>(n));
  std::iota(p.by_arrival.begin(), p.by_arrival.end(), 0);
  std::stable_sort(p.by_arrival.begin(), p.by_arrival.end(), [&](int a, int b) {
    return p.arrival[static_cast<std::size_t>(a)] <
           p.arrival[static_cast<std::size_t>(b)];
  });
  return p;
}

std::vector<Eigen::VectorXd> unit_vectors(std::int32_t n, int dim,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    Eigen::VectorXd v(dim);
    for (int k = 0; k < dim; ++k) v[k] = g(rng);
    out.push_back(v / std::max(v.norm(), 1e-12));
  }
  return out;
}

}  // namespace

std::string synthesize_csv(const SyntheticSpec& s) {
  if (s.users < 1 || s.items < 1 || s.events < 1 || s.latent_dim < 1)
    throw ValidationError("synthetic spec needs positive sizes");
  if (!(s.initial_share > 0.0 && s.initial_share <= 1.0) ||
      !(s.arrival_span >= 0.0 && s.arrival_span <= 1.0))
    throw ValidationError("synthetic arrival parameters out of range");

  std::mt19937_64 rng(derive_seed(s.seed, 100));
  auto users = make_population(s.users, s.user_skew, s.initial_share,
                               s.arrival_span, rng);
  auto items = make_population(s.items, s.item_skew, s.initial_share,
                               s.arrival_span, rng);
  auto pu = unit_vectors(s.users, s.latent_dim, rng);
  auto qv = unit_vectors(s.items, s.latent_dim, rng);

  // Cumulative user weights in arrival order.
  std::vector<double> user_cum(users.by_arrival.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < users.by_arrival.size(); ++i) {
    acc += users.weight[static_cast<std::size_t>(users.by_arrival[i])];
    user_cum[i] = acc;
  }

  std::vector<std::unordered_set<int>> seen(static_cast<std::size_t>(s.users));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::ostringstream os;
  os << "user,item,timestamp\n";
  std::size_t active_users = 0, active_items = 0;
  std::vector<double> item_w;
  for (std::int64_t t = 0; t < s.events; ++t) {
    double tau = static_cast<double>(t) / static_cast<double>(s.events);
    while (active_users < users.by_arrival.size() &&
           users.arrival[static_cast<std::size_t>(
               users.by_arrival[active_users])] <= tau)
      ++active_users;
    while (active_items < items.by_arrival.size() &&
           items.arrival[static_cast<std::size_t>(
               items.by_arrival[active_items])] <= tau)
      ++active_items;

    double x = unif(rng) * user_cum[active_users - 1];
    auto ui = static_cast<std::size_t>(
        std::upper_bound(user_cum.begin(), user_cum.begin() + active_users, x) -
        user_cum.begin());
    int u = users.by_arrival[std::min(ui, active_users - 1)];
    auto& mine = seen[static_cast<std::size_t>(u)];

    item_w.assign(active_items, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < active_items; ++k) {
      int v = items.by_arrival[k];
      if (mine.count(v)) continue;
      double w = items.weight[static_cast<std::size_t>(v)] *
                 std::exp(s.affinity * pu[static_cast<std::size_t>(u)].dot(
                                           qv[static_cast<std::size_t>(v)]));
      item_w[k] = w;
      total += w;
    }
    int chosen;
    if (total <= 0.0) {
      chosen = items.by_arrival[static_cast<std::size_t>(
          std::uniform_int_distribution<std::size_t>(0, active_items - 1)(rng))];
    } else {
      double y = unif(rng) * total;
      std::size_t k = 0;
      for (; k + 1 < active_items; ++k) {
        y -= item_w[k];
        if (y < 0.0 && item_w[k] > 0.0) break;
      }
      while (item_w[k] <= 0.0 && k > 0) --k;
      chosen = items.by_arrival[k];
    }
    mine.insert(chosen);
    os << 'u' << u << ",i" << chosen << ',' << t << '\n';
  }
  return os.str();
}

InteractionLog synthesize_log(const SyntheticSpec& spec) {
  return parse_interactions(synthesize_csv(spec));
}

}  // namespace embudget
