#include "embudget/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "embudget/error.hpp"

namespace embudget {
namespace {

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Group test items per user, dropping events outside the graph's id range.
std::vector<std::vector<EntityId>> test_items_by_user(
    const InteractionGraph& graph, std::span<const Event> test) {
  std::vector<std::vector<EntityId>> out(graph.user_count);
  for (const auto& e : test) {
    if (e.user < 0 || e.user >= graph.user_count || e.item < 0 ||
        e.item >= graph.item_count)
      continue;
    out[e.user].push_back(e.item);
  }
  for (auto& v : out) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  return out;
}

}  // namespace

bool InteractionGraph::is_positive(EntityId u, EntityId v) const {
  const auto& items = user_items[u];
  return std::binary_search(items.begin(), items.end(), v);
}

InteractionGraph build_graph(std::span<const Event> events,
                             std::int32_t user_count,
                             std::int32_t item_count) {
  if (user_count <= 0 || item_count <= 0)
    throw ValidationError("graph needs at least one user and one item");
  InteractionGraph g;
  g.user_count = user_count;
  g.item_count = item_count;
  g.user_items.assign(user_count, {});
  for (const auto& e : events) {
    if (e.user < 0 || e.user >= user_count || e.item < 0 ||
        e.item >= item_count)
      continue;
    g.user_items[e.user].push_back(e.item);
  }
  g.user_degree.assign(user_count, 0.0);
  g.item_degree.assign(item_count, 0.0);
  for (EntityId u = 0; u < user_count; ++u) {
    auto& items = g.user_items[u];
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (auto v : items) {
      g.edges.emplace_back(u, v);
      g.user_degree[u] += 1.0;
      g.item_degree[v] += 1.0;
    }
  }

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(g.edges.size() * 2);
  for (auto [u, v] : g.edges) {
    double w = 1.0 / std::sqrt(g.user_degree[u] * g.item_degree[v]);
    trips.emplace_back(u, user_count + v, w);
    trips.emplace_back(user_count + v, u, w);
  }
  g.adjacency.resize(g.node_count(), g.node_count());
  g.adjacency.setFromTriplets(trips.begin(), trips.end());
  g.adjacency.makeCompressed();
  return g;
}

RowMatrix propagate(const RowMatrix& layer0, const InteractionGraph& graph,
                    int layers) {
  if (layer0.rows() != graph.node_count())
    throw ValidationError("embedding rows do not match graph nodes");
  if (layers < 0) throw ValidationError("layer count must be >= 0");
  RowMatrix sum = layer0;
  RowMatrix cur = layer0;
  for (int k = 0; k < layers; ++k) {
    RowMatrix next = graph.adjacency * cur;
    sum += next;
    cur.swap(next);
  }
  if (layers > 0) sum /= static_cast<double>(layers + 1);
  return sum;
}

RowMatrix propagate(const MaskedEmbeddingTable& table,
                    const InteractionGraph& graph, int layers) {
  return propagate(table.masked(), graph, layers);
}

double score(const RowMatrix& final_embeddings, std::int32_t user_count,
             EntityId user, EntityId item) {
  return final_embeddings.row(user).dot(final_embeddings.row(user_count + item));
}

BprResult bpr_loss_and_gradient(const MaskedEmbeddingTable& table,
                                const InteractionGraph& graph,
                                std::span<const Triple> batch, int layers,
                                double eta) {
  BprResult out;
  out.gradient = RowMatrix::Zero(table.row_count(), table.d_max());
  if (batch.empty()) return out;

  const RowMatrix layer0 = table.masked();
  const RowMatrix final_emb = propagate(layer0, graph, layers);
  const auto users = graph.user_count;
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  RowMatrix grad_final = RowMatrix::Zero(final_emb.rows(), final_emb.cols());
  double loss = 0.0;
  double reg = 0.0;
  for (const auto& t : batch) {
    auto ur = t.user, pr = users + t.pos, nr = users + t.neg;
    double diff = final_emb.row(ur).dot(final_emb.row(pr)) -
                  final_emb.row(ur).dot(final_emb.row(nr));
    loss += softplus(-diff);
    // d/d diff of -ln sigma(diff) = -sigma(-diff)
    double g = -sigmoid(-diff) * inv_n;
    grad_final.row(ur) += g * (final_emb.row(pr) - final_emb.row(nr));
    grad_final.row(pr) += g * final_emb.row(ur);
    grad_final.row(nr) -= g * final_emb.row(ur);
    reg += layer0.row(ur).squaredNorm() + layer0.row(pr).squaredNorm() +
           layer0.row(nr).squaredNorm();
  }
  out.loss = loss * inv_n + eta * reg * inv_n;

  // Propagation operator is symmetric, so its adjoint is itself.
  out.gradient = propagate(grad_final, graph, layers);
  for (const auto& t : batch) {
    for (auto r : {static_cast<std::int64_t>(t.user),
                   static_cast<std::int64_t>(users) + t.pos,
                   static_cast<std::int64_t>(users) + t.neg})
      out.gradient.row(r) += 2.0 * eta * inv_n * layer0.row(r);
  }
  for (Eigen::Index r = 0; r < out.gradient.rows(); ++r) {
    int d = table.sizes()[static_cast<std::size_t>(r)];
    out.gradient.row(r).tail(table.d_max() - d).setZero();
  }
  return out;
}

EmbeddingOptimizer::EmbeddingOptimizer(OptimizerKind kind, std::int64_t rows,
                                       int cols)
    : kind_(kind) {
  if (kind_ == OptimizerKind::kAdam) {
    m_ = RowMatrix::Zero(rows, cols);
    v_ = RowMatrix::Zero(rows, cols);
  }
}

void EmbeddingOptimizer::apply(MaskedEmbeddingTable& table,
                               const RowMatrix& gradient,
                               double learning_rate) {
  auto& values = table.mutable_values();
  const auto& sizes = table.sizes();
  if (kind_ == OptimizerKind::kSgd) {
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
      int d = sizes[static_cast<std::size_t>(r)];
      values.row(r).head(d) -= learning_rate * gradient.row(r).head(d);
    }
    return;
  }
  if (m_.rows() != values.rows() || m_.cols() != values.cols())
    throw ValidationError("optimizer state does not match table shape");
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++t_;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    int d = sizes[static_cast<std::size_t>(r)];
    for (int c = 0; c < d; ++c) {
      double g = gradient(r, c);
      double& m = m_(r, c);
      double& v = v_(r, c);
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      values(r, c) -= learning_rate * (m / c1) / (std::sqrt(v / c2) + eps);
    }
  }
}

double bpr_step(MaskedEmbeddingTable& table, const InteractionGraph& graph,
                std::span<const Triple> batch, double learning_rate,
                double eta, int layers, EmbeddingOptimizer* optimizer) {
  if (batch.empty()) return 0.0;
  auto result = bpr_loss_and_gradient(table, graph, batch, layers, eta);
  if (optimizer) {
    optimizer->apply(table, result.gradient, learning_rate);
  } else {
    EmbeddingOptimizer sgd(OptimizerKind::kSgd, 0, 0);
    sgd.apply(table, result.gradient, learning_rate);
  }
  return result.loss;
}

MetricsReport evaluate(const RowMatrix& final_embeddings,
                       const InteractionGraph& graph,
                       std::span<const Event> test, int k) {
  if (k < 1) throw ValidationError("top-k needs k >= 1");
  MetricsReport rep;
  auto by_user = test_items_by_user(graph, test);
  const auto users = graph.user_count;
  const auto items = graph.item_count;
  auto item_block = final_embeddings.bottomRows(items);

  std::vector<double> idcg(static_cast<std::size_t>(k) + 1, 0.0);
  for (int i = 1; i <= k; ++i) idcg[i] = idcg[i - 1] + 1.0 / std::log2(i + 1.0);

  double recall_sum = 0.0, ndcg_sum = 0.0, eval_sum = 0.0;
  std::vector<std::pair<double, EntityId>> cand;
  cand.reserve(items);
  Eigen::VectorXd scores(items);
  for (EntityId u = 0; u < users; ++u) {
    const auto& truth = by_user[u];
    if (truth.empty()) continue;
    scores.noalias() = item_block * final_embeddings.row(u).transpose();
    cand.clear();
    const auto& seen = graph.user_items[u];
    auto it = seen.begin();
    for (EntityId v = 0; v < items; ++v) {
      while (it != seen.end() && *it < v) ++it;
      if (it != seen.end() && *it == v) continue;
      cand.emplace_back(scores[v], v);
    }
    auto top = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    auto better = [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    };
    std::partial_sort(cand.begin(), cand.begin() + top, cand.end(), better);

    double hits = 0.0, dcg = 0.0;
    for (std::size_t r = 0; r < top; ++r) {
      if (std::binary_search(truth.begin(), truth.end(), cand[r].second)) {
        hits += 1.0;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
      }
    }
    double recall = hits / static_cast<double>(truth.size());
    double ndcg = dcg / idcg[std::min<std::size_t>(truth.size(), k)];
    recall_sum += recall;
    ndcg_sum += ndcg;
    eval_sum += (recall + ndcg) / 2.0;
    ++rep.users_evaluated;
  }
  if (rep.users_evaluated > 0) {
    auto n = static_cast<double>(rep.users_evaluated);
    rep.recall_at_20 = recall_sum / n;
    rep.ndcg_at_20 = ndcg_sum / n;
    rep.eval_score = eval_sum / n;
  }
  return rep;
}

MetricsReport evaluate(const MaskedEmbeddingTable& table,
                       const InteractionGraph& graph,
                       std::span<const Event> test, int layers, int k) {
  return evaluate(propagate(table, graph, layers), graph, test, k);
}

double learning_rate_at(const RecommenderConfig& config, std::int64_t step) {
  auto decays = config.lr_decay_every > 0 ? step / config.lr_decay_every : 0;
  double lr = config.learning_rate *
              std::pow(config.lr_decay, static_cast<double>(decays));
  return std::max(lr, config.lr_min);
}

bool EarlyStopper::update(double value) {
  if (value > best_ || best_index_ < 0) {
    best_ = value;
    best_index_ = seen_;
    stale_ = 0;
  } else {
    ++stale_;
  }
  ++seen_;
  return stale_ >= patience_;
}

EntityId sample_negative(const InteractionGraph& graph, EntityId user,
                         std::mt19937_64& rng) {
  std::uniform_int_distribution<EntityId> pick(0, graph.item_count - 1);
  const auto& seen = graph.user_items[user];
  if (seen.size() >= static_cast<std::size_t>(graph.item_count))
    return pick(rng);
  while (true) {
    EntityId v = pick(rng);
    if (!std::binary_search(seen.begin(), seen.end(), v)) return v;
  }
}

TrainingOutcome train_until_early_stop(
    MaskedEmbeddingTable& table, const InteractionGraph& graph,
    std::span<const Event> test, const RecommenderConfig& config,
    std::uint64_t seed, const std::function<void(const EvalPoint&)>& on_eval) {
  if (config.eval_interval < 1 || config.batch_size < 1 || config.patience < 1)
    throw ConfigError("eval_interval, batch_size and patience must be >= 1");
  TrainingOutcome out;
  std::mt19937_64 rng(seed);
  EmbeddingOptimizer opt(config.optimizer, table.row_count(), table.d_max());
  EarlyStopper stopper(config.patience);
  RowMatrix best_values = table.values();
  MetricsReport best_metrics;
  std::vector<Triple> batch(static_cast<std::size_t>(config.batch_size));

  std::int64_t step = 0;
  bool have_edges = !graph.edges.empty();
  std::uniform_int_distribution<std::size_t> pick_edge(
      0, have_edges ? graph.edges.size() - 1 : 0);
  while (step < config.max_steps) {
    for (int s = 0; s < config.eval_interval; ++s, ++step) {
      if (!have_edges) continue;
      for (auto& t : batch) {
        auto [u, v] = graph.edges[pick_edge(rng)];
        t = {u, v, sample_negative(graph, u, rng)};
      }
      out.losses.push_back(bpr_step(table, graph, batch,
                                    learning_rate_at(config, step), config.eta,
                                    config.layers, &opt));
    }
    EvalPoint point{step, evaluate(table, graph, test, config.layers,
                                   config.top_k)};
    out.history.push_back(point);
    if (on_eval) on_eval(point);
    bool stop = stopper.update(point.metrics.eval_score);
    if (stopper.best_index() + 1 == static_cast<int>(out.history.size())) {
      best_values = table.values();
      best_metrics = point.metrics;
      out.best_step = step;
    }
    if (stop) {
      out.stopped_early = true;
      break;
    }
  }
  out.steps_run = step;
  out.best_eval = best_metrics.eval_score;
  out.recall_at_20 = best_metrics.recall_at_20;
  out.ndcg_at_20 = best_metrics.ndcg_at_20;
  table.mutable_values() = std::move(best_values);
  return out;
}

}  // namespace embudget
