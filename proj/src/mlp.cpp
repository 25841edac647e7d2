#include "embudget/mlp.hpp"

#include <cmath>

#include "embudget/error.hpp"

namespace embudget {
namespace {

template <typename M>
void fill_uniform(M& m, double half, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-half, half);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
}

template <typename M>
void adam_update(M& param, M& m, M& v, const M& g, double lr, double c1,
                 double c2) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  m = b1 * m + (1 - b1) * g;
  v = b2 * v + (1 - b2) * g.cwiseProduct(g);
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace

Mlp::Mlp(int inputs, int hidden, int outputs, std::mt19937_64& rng,
         double output_scale) {
  if (inputs < 1 || hidden < 1 || outputs < 1)
    throw ValidationError("MLP dimensions must be positive");
  w1_.resize(hidden, inputs);
  b1_.resize(hidden);
  w2_.resize(outputs, hidden);
  b2_.resize(outputs);
  double h1 = 1.0 / std::sqrt(static_cast<double>(inputs));
  double h2 = output_scale > 0 ? output_scale
                               : 1.0 / std::sqrt(static_cast<double>(hidden));
  fill_uniform(w1_, h1, rng);
  fill_uniform(b1_, h1, rng);
  fill_uniform(w2_, h2, rng);
  fill_uniform(b2_, h2, rng);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache* cache) const {
  Eigen::MatrixXd h = (x * w1_.transpose()).rowwise() + b1_.transpose();
  h = h.cwiseMax(0.0);
  Eigen::MatrixXd y = (h * w2_.transpose()).rowwise() + b2_.transpose();
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(h);
  }
  return y;
}

Mlp::Gradients Mlp::backward(const Cache& cache,
                             const Eigen::MatrixXd& grad_out,
                             Eigen::MatrixXd* grad_input) const {
  Gradients g;
  g.w2 = grad_out.transpose() * cache.hidden;
  g.b2 = grad_out.colwise().sum().transpose();
  Eigen::MatrixXd dh = grad_out * w2_;
  dh = dh.cwiseProduct((cache.hidden.array() > 0.0).cast<double>().matrix());
  g.w1 = dh.transpose() * cache.input;
  g.b1 = dh.colwise().sum().transpose();
  if (grad_input) *grad_input = dh * w1_;
  return g;
}

std::int64_t Mlp::parameter_count() const {
  return w1_.size() + b1_.size() + w2_.size() + b2_.size();
}

std::vector<double> Mlp::flat() const {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(parameter_count()));
  out.insert(out.end(), w1_.data(), w1_.data() + w1_.size());
  out.insert(out.end(), b1_.data(), b1_.data() + b1_.size());
  out.insert(out.end(), w2_.data(), w2_.data() + w2_.size());
  out.insert(out.end(), b2_.data(), b2_.data() + b2_.size());
  return out;
}

void Mlp::set_flat(const std::vector<double>& params) {
  if (static_cast<std::int64_t>(params.size()) != parameter_count())
    throw ValidationError("flat parameter vector has the wrong length");
  const double* p = params.data();
  auto take = [&p](auto& block) {
    std::copy(p, p + block.size(), block.data());
    p += block.size();
  };
  take(w1_);
  take(b1_);
  take(w2_);
  take(b2_);
}

void Mlp::soft_update(const Mlp& source, double tau) {
  w1_ = (1.0 - tau) * w1_ + tau * source.w1_;
  b1_ = (1.0 - tau) * b1_ + tau * source.b1_;
  w2_ = (1.0 - tau) * w2_ + tau * source.w2_;
  b2_ = (1.0 - tau) * b2_ + tau * source.b2_;
}

MlpAdam::MlpAdam(const Mlp& net, double learning_rate) : lr_(learning_rate) {
  for (auto* g : {&m_, &v_}) {
    g->w1 = Eigen::MatrixXd::Zero(net.w1().rows(), net.w1().cols());
    g->w2 = Eigen::MatrixXd::Zero(net.w2().rows(), net.w2().cols());
    g->b1 = Eigen::VectorXd::Zero(net.b1().size());
    g->b2 = Eigen::VectorXd::Zero(net.b2().size());
  }
}

void MlpAdam::step(Mlp& net, const Mlp::Gradients& g) {
  ++t_;
  double c1 = 1.0 - std::pow(0.9, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(0.999, static_cast<double>(t_));
  adam_update(net.w1(), m_.w1, v_.w1, g.w1, lr_, c1, c2);
  adam_update(net.b1(), m_.b1, v_.b1, g.b1, lr_, c1, c2);
  adam_update(net.w2(), m_.w2, v_.w2, g.w2, lr_, c1, c2);
  adam_update(net.b2(), m_.b2, v_.b2, g.b2, lr_, c1, c2);
}

}  // namespace embudget
