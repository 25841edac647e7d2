#pragma once

// Fixed-length state construction and reward shaping for the size policy.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "embudget/allocator.hpp"
#include "embudget/masked_embedding.hpp"
#include "embudget/stream_corpus.hpp"

namespace embudget {

// Min-max normalise, sort descending, cut into L contiguous groups whose
// sizes differ by at most one (larger groups first) and return the group
// means. Missing groups (fewer entities than L) are zero. All-equal counts
// normalise to zero.
std::vector<double> pooled_frequency(std::span<const std::int64_t> counts,
                                     int groups);

// (max - min) / (d_max - d_min); 0 when d_max == d_min.
double dispersion(std::span<const int> sizes, int d_min, int d_max);

// Per-coordinate mean of the masked user rows and of the masked item rows.
std::pair<Eigen::VectorXd, Eigen::VectorXd> mean_embeddings(
    const MaskedEmbeddingTable& table);

struct StateVector {
  std::vector<double> f_user;
  std::vector<double> f_item;  // empty in merged mode
  std::vector<double> f_merged;  // merged mode only
  double prev_reward = 0.0;
  double user_ratio = 0.0;
  double h_user = 0.0;
  double h_item = 0.0;
  Eigen::VectorXd m_user;
  Eigen::VectorXd m_item;
  bool merged = false;

  // (f_u, f_v, r, ratio, h_u, h_v, m_u, m_v), or in merged mode
  // (f, r, ratio, m_u, m_v).
  Eigen::VectorXd flatten() const;
};

// Length of the flattened state: 2L + 2 d_max + 4, or L + 2 d_max + 2 in
// merged mode.
std::int64_t state_length(int groups, int d_max, bool merged = false);

StateVector build_state(const FrequencyTable& freq, double prev_reward,
                        const MaskedEmbeddingTable& table,
                        const AllocationPlan& last_plan, int groups,
                        bool merged = false);

// r = clamp(5 * eval_new / eval_ref, 0, 10); parity scores 5.
// eval_ref == 0 gives 10 when eval_new > 0, else 5.
double compute_reward(double eval_new, double eval_ref);

}  // namespace embudget
