#pragma once

// Soft Actor-Critic over a bounded continuous action box.
//
// The actor emits a mean and a log standard deviation per action dimension;
// samples are squashed by tanh into (-1, 1) ("unit" actions) and then mapped
// affinely onto the action box. Critics and the replay buffer work in unit
// space. Twin critics with Polyak-averaged targets and a fixed entropy
// temperature.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "embudget/allocator.hpp"
#include "embudget/mlp.hpp"

namespace embudget {

struct SacConfig {
  int hidden = 512;
  double discount = 0.95;
  double tau = 0.005;
  double temperature = 0.2;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  std::size_t replay_capacity = 10000;
  int batch_size = 8;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
};

// Maps unit actions in (-1, 1)^k onto Action. With `merged` set the single
// dimension is the shared shape parameter and w is fixed at 0.5.
class ActionSpace {
 public:
  ActionSpace(Distribution dist, bool merged = false);

  int dimensions() const { return merged_ ? 1 : 3; }
  bool merged() const { return merged_; }
  ShapeBounds alpha_bounds() const { return bounds_; }

  Action from_unit(const Eigen::VectorXd& unit) const;
  Eigen::VectorXd to_unit(const Action& action) const;

 private:
  ShapeBounds bounds_;
  bool merged_;
};

struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;  // unit space
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool terminal = false;
};

// FIFO ring buffer. Appends and samples are serialised by a mutex.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(Transition t);
  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  // Uniform sample without replacement (requires size() >= n).
  std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const;
  std::vector<Transition> snapshot() const;

  // Binary dump of the buffer contents; load replaces the current contents.
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
  mutable std::mutex mu_;
};

struct UpdateSummary {
  bool applied = false;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_q = 0.0;
};

class SacAgent {
 public:
  SacAgent(int state_dim, int action_dim, const SacConfig& config,
           std::uint64_t seed);

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const SacConfig& config() const { return config_; }

  // Unit-space action: tanh(mean) when greedy, tanh(mean + std * noise)
  // when exploring. Always strictly inside (-1, 1).
  Eigen::VectorXd act(const Eigen::VectorXd& state, bool explore);

  // Pre-squash mean and clamped log-std for one state.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> distribution(
      const Eigen::VectorXd& state) const;

  // One SAC step on a batch drawn from `buffer`; no-op when the buffer holds
  // fewer than batch_size transitions.
  UpdateSummary update(const ReplayBuffer& buffer);
  UpdateSummary update_on(const std::vector<Transition>& batch);

  // Actor objective mean(temperature * log pi - min Q) for given states and
  // fixed reparameterisation noise; fills the actor gradient if asked.
  double actor_objective(const Eigen::MatrixXd& states,
                         const Eigen::MatrixXd& noise,
                         Mlp::Gradients* grad = nullptr) const;

  // Mean squared TD error of critic `which` (0 or 1) against fixed targets.
  double critic_objective(int which, const Eigen::MatrixXd& states,
                          const Eigen::MatrixXd& actions,
                          const Eigen::VectorXd& targets,
                          Mlp::Gradients* grad = nullptr) const;

  Mlp& actor() { return actor_; }
  Mlp& critic(int which) { return which == 0 ? q1_ : q2_; }
  Mlp& target(int which) { return which == 0 ? q1_target_ : q2_target_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic(int which) const { return which == 0 ? q1_ : q2_; }
  const Mlp& target(int which) const {
    return which == 0 ? q1_target_ : q2_target_;
  }

  // JSON manifest plus a flat little-endian float64 parameter file.
  void save(const std::filesystem::path& manifest_path,
            const std::filesystem::path& params_path,
            const ActionSpace* space = nullptr) const;
  static SacAgent load(const std::filesystem::path& manifest_path,
                       const std::filesystem::path& params_path);

 private:
  struct Sample {
    Eigen::MatrixXd mean, log_std, raw_log_std, noise, pre, action, log_prob;
    Mlp::Cache cache;
  };
  Sample sample_actions(const Eigen::MatrixXd& states,
                        const Eigen::MatrixXd& noise) const;
  Eigen::MatrixXd concat(const Eigen::MatrixXd& s,
                         const Eigen::MatrixXd& a) const;

  int state_dim_;
  int action_dim_;
  SacConfig config_;
  std::mt19937_64 rng_;
  Mlp actor_, q1_, q2_, q1_target_, q2_target_;
  MlpAdam actor_opt_, q1_opt_, q2_opt_;
};

}  // namespace embudget
