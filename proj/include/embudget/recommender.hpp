#pragma once

// Light graph-convolution recommender over a masked embedding table.
//
// The final embedding of every node is the mean of its layer-0..K
// representations, where layer k + 1 is the symmetric-normalised adjacency
// times layer k and layer 0 is the masked table E (.) M. The model is linear
// in E, so the BPR gradient with respect to E is the same propagation
// operator applied to the gradient with respect to the final embeddings.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "embudget/masked_embedding.hpp"
#include "embudget/stream_corpus.hpp"

namespace embudget {

struct InteractionGraph {
  std::int32_t user_count = 0;
  std::int32_t item_count = 0;
  // (users + items) square, weight 1 / sqrt(deg(u) deg(v)) per edge.
  Eigen::SparseMatrix<double, Eigen::RowMajor> adjacency;
  std::vector<double> user_degree;
  std::vector<double> item_degree;
  // Sorted distinct positives per user.
  std::vector<std::vector<EntityId>> user_items;
  // Distinct (user, item) training pairs.
  std::vector<std::pair<EntityId, EntityId>> edges;

  std::int64_t node_count() const {
    return std::int64_t{user_count} + item_count;
  }
  bool is_positive(EntityId u, EntityId v) const;
};

// Events referencing ids outside [0, users) x [0, items) are ignored.
// Repeated interactions collapse into one edge.
InteractionGraph build_graph(std::span<const Event> events,
                             std::int32_t user_count, std::int32_t item_count);

RowMatrix propagate(const RowMatrix& layer0, const InteractionGraph& graph,
                    int layers);
RowMatrix propagate(const MaskedEmbeddingTable& table,
                    const InteractionGraph& graph, int layers);

// Dot product of the final user and item rows.
double score(const RowMatrix& final_embeddings, std::int32_t user_count,
             EntityId user, EntityId item);

struct Triple {
  EntityId user = 0;
  EntityId pos = 0;
  EntityId neg = 0;
};

struct BprResult {
  double loss = 0.0;
  RowMatrix gradient;  // d loss / d E, zero outside each row's prefix
};

// Batch-mean BPR loss plus eta times the batch-mean squared norm of the
// triples' layer-0 (masked) embeddings, and its gradient.
BprResult bpr_loss_and_gradient(const MaskedEmbeddingTable& table,
                                const InteractionGraph& graph,
                                std::span<const Triple> batch, int layers,
                                double eta);

enum class OptimizerKind { kAdam, kSgd };

// Per-coordinate optimiser state for a table's value matrix. Only
// coordinates inside each row's current prefix are ever touched.
class EmbeddingOptimizer {
 public:
  EmbeddingOptimizer(OptimizerKind kind, std::int64_t rows, int cols);
  void apply(MaskedEmbeddingTable& table, const RowMatrix& gradient,
             double learning_rate);

 private:
  OptimizerKind kind_;
  RowMatrix m_, v_;
  std::int64_t t_ = 0;
};

// One descent update. Without an optimiser, plain SGD is used. An empty
// batch is a no-op returning 0.
double bpr_step(MaskedEmbeddingTable& table, const InteractionGraph& graph,
                std::span<const Triple> batch, double learning_rate,
                double eta, int layers = 2,
                EmbeddingOptimizer* optimizer = nullptr);

struct MetricsReport {
  double recall_at_20 = 0.0;
  double ndcg_at_20 = 0.0;
  double eval_score = 0.0;
  std::int64_t users_evaluated = 0;
};

// Top-k over all items except the user's training positives; ties go to the
// lower item id. Users without test items are left out of the averages.
MetricsReport evaluate(const RowMatrix& final_embeddings,
                       const InteractionGraph& graph,
                       std::span<const Event> test, int k = 20);
MetricsReport evaluate(const MaskedEmbeddingTable& table,
                       const InteractionGraph& graph,
                       std::span<const Event> test, int layers, int k = 20);

struct RecommenderConfig {
  int layers = 2;
  int batch_size = 10000;
  int eval_interval = 200;
  int patience = 3;
  double learning_rate = 0.03;
  double lr_decay = 0.95;
  int lr_decay_every = 200;
  double lr_min = 0.001;
  double eta = 1e-4;
  std::int64_t max_steps = 100000;
  int top_k = 20;
  OptimizerKind optimizer = OptimizerKind::kAdam;
};

double learning_rate_at(const RecommenderConfig& config, std::int64_t step);

// Counts consecutive non-improving evaluations.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}
  // Returns true once `patience` evaluations in a row fail to improve.
  bool update(double value);
  double best() const { return best_; }
  int best_index() const { return best_index_; }

 private:
  int patience_;
  double best_ = -1.0;
  int best_index_ = -1;
  int seen_ = 0;
  int stale_ = 0;
};

struct EvalPoint {
  std::int64_t step = 0;
  MetricsReport metrics;
};

struct TrainingOutcome {
  std::int64_t steps_run = 0;    // multiple of the evaluation interval
  std::int64_t best_step = 0;    // j: step of the best evaluation
  double best_eval = 0.0;
  double recall_at_20 = 0.0;
  double ndcg_at_20 = 0.0;
  bool stopped_early = false;
  std::vector<EvalPoint> history;
  std::vector<double> losses;
};

// Negative item for `user`, uniform over items the user has not interacted
// with in the graph.
EntityId sample_negative(const InteractionGraph& graph, EntityId user,
                         std::mt19937_64& rng);

// Repeated BPR steps with uniformly sampled negatives, evaluating every
// eval_interval steps until patience is exhausted. The table is left holding
// the parameters of the best evaluation.
TrainingOutcome train_until_early_stop(
    MaskedEmbeddingTable& table, const InteractionGraph& graph,
    std::span<const Event> test, const RecommenderConfig& config,
    std::uint64_t seed,
    const std::function<void(const EvalPoint&)>& on_eval = {});

}  // namespace embudget
