#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace embudget {

// Input -> Linear -> ReLU -> Linear -> output. Batches are rows.
class Mlp {
 public:
  struct Gradients {
    Eigen::MatrixXd w1, w2;
    Eigen::VectorXd b1, b2;
  };

  // Forward activations kept for the backward pass.
  struct Cache {
    Eigen::MatrixXd input;
    Eigen::MatrixXd hidden;  // post-ReLU
  };

  Mlp() = default;
  // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); the output
  // layer uses `output_scale` as its half-width when positive.
  Mlp(int inputs, int hidden, int outputs, std::mt19937_64& rng,
      double output_scale = 0.0);

  int inputs() const { return static_cast<int>(w1_.cols()); }
  int hidden() const { return static_cast<int>(w1_.rows()); }
  int outputs() const { return static_cast<int>(w2_.rows()); }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache* cache = nullptr) const;

  // Given d loss / d output, returns parameter gradients and, if requested,
  // d loss / d input.
  Gradients backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                     Eigen::MatrixXd* grad_input = nullptr) const;

  std::int64_t parameter_count() const;
  std::vector<double> flat() const;
  void set_flat(const std::vector<double>& params);

  // this = (1 - tau) * this + tau * source
  void soft_update(const Mlp& source, double tau);

  Eigen::MatrixXd& w1() { return w1_; }
  Eigen::MatrixXd& w2() { return w2_; }
  Eigen::VectorXd& b1() { return b1_; }
  Eigen::VectorXd& b2() { return b2_; }
  const Eigen::MatrixXd& w1() const { return w1_; }
  const Eigen::MatrixXd& w2() const { return w2_; }
  const Eigen::VectorXd& b1() const { return b1_; }
  const Eigen::VectorXd& b2() const { return b2_; }

 private:
  Eigen::MatrixXd w1_, w2_;  // (hidden x in), (out x hidden)
  Eigen::VectorXd b1_, b2_;
};

class MlpAdam {
 public:
  MlpAdam() = default;
  MlpAdam(const Mlp& net, double learning_rate);
  void step(Mlp& net, const Mlp::Gradients& g);

 private:
  double lr_ = 1e-3;
  std::int64_t t_ = 0;
  Mlp::Gradients m_, v_;
};

}  // namespace embudget
