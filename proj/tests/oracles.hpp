#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "embudget/recommender.hpp"

namespace oracle {

using namespace embudget;


// Dense symmetric-normalised adjacency built straight from the edge list.
inline Eigen::MatrixXd dense_adjacency(const EventList& events, int users, int items) {
  int n = users + items;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : events) {
    a(e.user, users + e.item) = 1.0;
    a(users + e.item, e.user) = 1.0;
  }
  Eigen::VectorXd deg = a.rowwise().sum();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (a(i, j) != 0.0) a(i, j) /= std::sqrt(deg[i] * deg[j]);
  return a;
}

inline Eigen::MatrixXd dense_propagate(const Eigen::MatrixXd& e0, const Eigen::MatrixXd& a,
                                int layers) {
  Eigen::MatrixXd sum = e0;
  for (int k = 1; k <= layers; ++k) {
    Eigen::MatrixXd p = a;
    for (int j = 1; j < k; ++j) p = p * a;
    sum += p * e0;
  }
  return sum / static_cast<double>(layers + 1);
}

inline EventList random_edges(std::mt19937_64& rng, int users, int items, int n) {
  EventList ev;
  for (int i = 0; i < n; ++i)
    ev.push_back({static_cast<EntityId>(rng() % users),
                  static_cast<EntityId>(rng() % items), i});
  return ev;
}

inline void random_sizes(MaskedEmbeddingTable& t, std::mt19937_64& rng) {
  std::vector<int> us(t.user_count()), is(t.item_count());
  for (auto& s : us) s = 1 + static_cast<int>(rng() % t.d_max());
  for (auto& s : is) s = 1 + static_cast<int>(rng() % t.d_max());
  t.set_sizes(us, is);
}

// Independent loss used for finite differences: dense propagation on the
// masked table, BPR softplus and the layer-0 regulariser.
inline double oracle_loss(const MaskedEmbeddingTable& t, const Eigen::MatrixXd& a,
                   const std::vector<Triple>& batch, int layers, double eta) {
  Eigen::MatrixXd e0 = t.masked();
  Eigen::MatrixXd f = dense_propagate(e0, a, layers);
  double loss = 0.0, reg = 0.0;
  int U = t.user_count();
  for (const auto& tr : batch) {
    double d = f.row(tr.user).dot(f.row(U + tr.pos)) - f.row(tr.user).dot(f.row(U + tr.neg));
    loss += std::log1p(std::exp(-d));
    reg += e0.row(tr.user).squaredNorm() + e0.row(U + tr.pos).squaredNorm() +
           e0.row(U + tr.neg).squaredNorm();
  }
  return (loss + eta * reg) / static_cast<double>(batch.size());
}

struct Oracle {
  double recall, ndcg, eval;
};

// Brute force: full sort of every candidate, ties to the lower id.
inline Oracle brute_metrics(const Eigen::MatrixXd& f, int users, int items,
                     const EventList& train, const EventList& test, int k) {
  std::vector<std::set<int>> seen(users), truth(users);
  for (const auto& e : train) seen[e.user].insert(e.item);
  for (const auto& e : test)
    if (e.user < users && e.item < items) truth[e.user].insert(e.item);
  double rs = 0, ns = 0, es = 0;
  int n = 0;
  for (int u = 0; u < users; ++u) {
    if (truth[u].empty()) continue;
    std::vector<std::pair<double, int>> c;
    for (int v = 0; v < items; ++v)
      if (!seen[u].count(v)) c.push_back({f.row(u).dot(f.row(users + v)), v});
    std::sort(c.begin(), c.end(), [](auto& a, auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    double hits = 0, dcg = 0, idcg = 0;
    for (int r = 0; r < std::min<int>(k, static_cast<int>(c.size())); ++r)
      if (truth[u].count(c[r].second)) {
        hits += 1;
        dcg += 1.0 / std::log2(r + 2.0);
      }
    for (int r = 0; r < std::min<int>(k, static_cast<int>(truth[u].size())); ++r)
      idcg += 1.0 / std::log2(r + 2.0);
    double rec = hits / static_cast<double>(truth[u].size());
    double nd = dcg / idcg;
    rs += rec;
    ns += nd;
    es += (rec + nd) / 2;
    ++n;
  }
  if (n == 0) return {0, 0, 0};
  return {rs / n, ns / n, es / n};
}

}  // namespace oracle
