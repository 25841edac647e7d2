#include "embudget/sac.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "embudget/error.hpp"

namespace embudget {
namespace {

constexpr double kUnitLimit = 1.0 - 1e-9;
constexpr double kSquashEps = 1e-6;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * M_PI);

double to_box(double y, double lo, double hi) {
  return lo + (hi - lo) * (y + 1.0) / 2.0;
}

double from_box(double x, double lo, double hi) {
  return std::clamp(2.0 * (x - lo) / (hi - lo) - 1.0, -kUnitLimit, kUnitLimit);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw FormatError("truncated binary file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}

void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
  write_u64(os, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(os, v[i]);
}

Eigen::VectorXd read_vec(std::istream& is) {
  auto n = read_u64(is);
  if (n > (1u << 24)) throw FormatError("implausible vector length");
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = read_f64(is);
  return v;
}

}  // namespace

ActionSpace::ActionSpace(Distribution dist, bool merged)
    : bounds_(shape_bounds(dist)), merged_(merged) {}

Action ActionSpace::from_unit(const Eigen::VectorXd& unit) const {
  if (unit.size() != dimensions())
    throw ValidationError("unit action has the wrong dimension");
  auto c = [](double y) { return std::clamp(y, -kUnitLimit, kUnitLimit); };
  Action a;
  if (merged_) {
    a.w = 0.5;
    a.alpha_u = a.alpha_v = to_box(c(unit[0]), bounds_.lo, bounds_.hi);
  } else {
    a.w = to_box(c(unit[0]), 0.0, 1.0);
    a.alpha_u = to_box(c(unit[1]), bounds_.lo, bounds_.hi);
    a.alpha_v = to_box(c(unit[2]), bounds_.lo, bounds_.hi);
  }
  return a;
}

Eigen::VectorXd ActionSpace::to_unit(const Action& action) const {
  if (merged_) {
    Eigen::VectorXd u(1);
    u[0] = from_box(action.alpha_u, bounds_.lo, bounds_.hi);
    return u;
  }
  Eigen::VectorXd u(3);
  u[0] = from_box(action.w, 0.0, 1.0);
  u[1] = from_box(action.alpha_u, bounds_.lo, bounds_.hi);
  u[2] = from_box(action.alpha_v, bounds_.lo, bounds_.hi);
  return u;
}

// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ValidationError("replay capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  std::lock_guard lock(mu_);
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mu_);
  return items_.size();
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n,
                                             std::mt19937_64& rng) const {
  std::lock_guard lock(mu_);
  if (n > items_.size())
    throw ValidationError("cannot sample more transitions than stored");
  std::vector<std::size_t> idx(items_.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // partial Fisher-Yates
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[idx[i]]);
  return out;
}

std::vector<Transition> ReplayBuffer::snapshot() const {
  std::lock_guard lock(mu_);
  // oldest first
  std::vector<Transition> out;
  out.reserve(items_.size());
  std::size_t start = items_.size() < capacity_ ? 0 : next_;
  for (std::size_t i = 0; i < items_.size(); ++i)
    out.push_back(items_[(start + i) % items_.size()]);
  return out;
}

void ReplayBuffer::save(const std::filesystem::path& path) const {
  auto items = snapshot();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io_error", "cannot write " + path.string());
  os.write("EMBR", 4);
  write_u64(os, capacity_);
  write_u64(os, items.size());
  for (const auto& t : items) {
    write_vec(os, t.state);
    write_vec(os, t.action);
    write_f64(os, t.reward);
    write_vec(os, t.next_state);
    write_u64(os, t.terminal ? 1 : 0);
  }
  if (!os) throw Error("io_error", "failed writing " + path.string());
}

void ReplayBuffer::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io_error", "cannot read " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "EMBR")
    throw FormatError("not a replay buffer file");
  auto cap = read_u64(is);
  auto n = read_u64(is);
  if (cap == 0 || n > cap) throw FormatError("inconsistent replay header");
  std::vector<Transition> items;
  items.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Transition t;
    t.state = read_vec(is);
    t.action = read_vec(is);
    t.reward = read_f64(is);
    t.next_state = read_vec(is);
    t.terminal = read_u64(is) != 0;
    items.push_back(std::move(t));
  }
  std::lock_guard lock(mu_);
  capacity_ = cap;
  items_ = std::move(items);
  next_ = items_.size() % capacity_;
}

// ---------------------------------------------------------------------------

SacAgent::SacAgent(int state_dim, int action_dim, const SacConfig& config,
                   std::uint64_t seed)
    : state_dim_(state_dim),
      action_dim_(action_dim),
      config_(config),
      rng_(seed) {
  if (state_dim < 1 || action_dim < 1)
    throw ValidationError("agent dimensions must be positive");
  if (config.batch_size < 1) throw ValidationError("batch size must be positive");
  // Small output layer so the initial policy sits near the centre of the box.
  actor_ = Mlp(state_dim, config.hidden, 2 * action_dim, rng_, 3e-3);
  q1_ = Mlp(state_dim + action_dim, config.hidden, 1, rng_);
  q2_ = Mlp(state_dim + action_dim, config.hidden, 1, rng_);
  q1_target_ = q1_;
  q2_target_ = q2_;
  actor_opt_ = MlpAdam(actor_, config.actor_lr);
  q1_opt_ = MlpAdam(q1_, config.critic_lr);
  q2_opt_ = MlpAdam(q2_, config.critic_lr);
}

Eigen::MatrixXd SacAgent::concat(const Eigen::MatrixXd& s,
                                 const Eigen::MatrixXd& a) const {
  Eigen::MatrixXd x(s.rows(), s.cols() + a.cols());
  x << s, a;
  return x;
}

SacAgent::Sample SacAgent::sample_actions(const Eigen::MatrixXd& states,
                                          const Eigen::MatrixXd& noise) const {
  Sample s;
  Eigen::MatrixXd out = actor_.forward(states, &s.cache);
  const int a = action_dim_;
  s.mean = out.leftCols(a);
  s.raw_log_std = out.rightCols(a);
  s.log_std = s.raw_log_std.cwiseMax(config_.log_std_min)
                  .cwiseMin(config_.log_std_max);
  s.noise = noise;
  s.pre = s.mean + (s.log_std.array().exp() * noise.array()).matrix();
  s.action = s.pre.array().tanh().matrix();
  s.log_prob.resize(states.rows(), 1);
  for (Eigen::Index r = 0; r < states.rows(); ++r) {
    double lp = 0.0;
    for (int k = 0; k < a; ++k) {
      double y = s.action(r, k);
      lp += -0.5 * noise(r, k) * noise(r, k) - s.log_std(r, k) - kHalfLog2Pi -
            std::log(1.0 - y * y + kSquashEps);
    }
    s.log_prob(r, 0) = lp;
  }
  return s;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> SacAgent::distribution(
    const Eigen::VectorXd& state) const {
  if (state.size() != state_dim_)
    throw ValidationError("state has the wrong dimension");
  Eigen::VectorXd out = actor_.forward(state.transpose()).row(0).transpose();
  Eigen::VectorXd mean = out.head(action_dim_);
  Eigen::VectorXd log_std = out.tail(action_dim_)
                                .cwiseMax(config_.log_std_min)
                                .cwiseMin(config_.log_std_max);
  return {mean, log_std};
}

Eigen::VectorXd SacAgent::act(const Eigen::VectorXd& state, bool explore) {
  auto [mean, log_std] = distribution(state);
  Eigen::VectorXd pre = mean;
  if (explore) {
    std::normal_distribution<double> n01;
    for (int k = 0; k < action_dim_; ++k)
      pre[k] += std::exp(log_std[k]) * n01(rng_);
  }
  Eigen::VectorXd y = pre.array().tanh().matrix();
  return y.cwiseMax(-kUnitLimit).cwiseMin(kUnitLimit);
}

double SacAgent::actor_objective(const Eigen::MatrixXd& states,
                                 const Eigen::MatrixXd& noise,
                                 Mlp::Gradients* grad) const {
  const auto B = states.rows();
  const double T = config_.temperature;
  Sample s = sample_actions(states, noise);
  Eigen::MatrixXd x = concat(states, s.action);
  Mlp::Cache c1, c2;
  Eigen::VectorXd q1 = q1_.forward(x, &c1).col(0);
  Eigen::VectorXd q2 = q2_.forward(x, &c2).col(0);
  Eigen::VectorXd qmin = q1.cwiseMin(q2);
  double J = (T * s.log_prob.col(0) - qmin).mean();
  if (!grad) return J;

  // d J / d action through whichever critic is the minimum in each row.
  Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(B, 1), g2 = g1;
  for (Eigen::Index r = 0; r < B; ++r) {
    if (q1[r] <= q2[r]) g1(r, 0) = -1.0 / B;
    else g2(r, 0) = -1.0 / B;
  }
  Eigen::MatrixXd dx1, dx2;
  q1_.backward(c1, g1, &dx1);
  q2_.backward(c2, g2, &dx2);
  Eigen::MatrixXd dA = (dx1 + dx2).rightCols(action_dim_);

  const double dlp = T / static_cast<double>(B);
  Eigen::MatrixXd dout(B, 2 * action_dim_);
  for (Eigen::Index r = 0; r < B; ++r) {
    for (int k = 0; k < action_dim_; ++k) {
      double y = s.action(r, k);
      double one_m = 1.0 - y * y;
      double c = 2.0 * y * one_m / (one_m + kSquashEps);
      double se = std::exp(s.log_std(r, k)) * s.noise(r, k);
      dout(r, k) = dlp * c + dA(r, k) * one_m;
      double raw = s.raw_log_std(r, k);
      bool active = raw >= config_.log_std_min && raw <= config_.log_std_max;
      dout(r, action_dim_ + k) =
          active ? dlp * (-1.0 + c * se) + dA(r, k) * one_m * se : 0.0;
    }
  }
  *grad = actor_.backward(s.cache, dout);
  return J;
}

double SacAgent::critic_objective(int which, const Eigen::MatrixXd& states,
                                  const Eigen::MatrixXd& actions,
                                  const Eigen::VectorXd& targets,
                                  Mlp::Gradients* grad) const {
  const Mlp& net = critic(which);
  Mlp::Cache cache;
  Eigen::VectorXd q = net.forward(concat(states, actions), &cache).col(0);
  Eigen::VectorXd diff = q - targets;
  double loss = diff.squaredNorm() / static_cast<double>(q.size());
  if (grad) {
    Eigen::MatrixXd g = (2.0 / static_cast<double>(q.size())) * diff;
    *grad = net.backward(cache, g);
  }
  return loss;
}

UpdateSummary SacAgent::update(const ReplayBuffer& buffer) {
  auto need = static_cast<std::size_t>(config_.batch_size);
  if (buffer.size() < need) return {};
  return update_on(buffer.sample(need, rng_));
}

UpdateSummary SacAgent::update_on(const std::vector<Transition>& batch) {
  UpdateSummary summary;
  if (batch.empty()) return summary;
  const auto B = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd S(B, state_dim_), S2(B, state_dim_), A(B, action_dim_);
  Eigen::VectorXd R(B), D(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& t = batch[static_cast<std::size_t>(i)];
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ ||
        t.action.size() != action_dim_)
      throw ValidationError("transition dimensions do not match the agent");
    S.row(i) = t.state.transpose();
    S2.row(i) = t.next_state.transpose();
    A.row(i) = t.action.transpose();
    R[i] = t.reward;
    D[i] = t.terminal ? 1.0 : 0.0;
  }

  std::normal_distribution<double> n01;
  auto gaussian = [&](Eigen::Index rows) {
    Eigen::MatrixXd m(rows, action_dim_);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng_);
    return m;
  };

  Sample next = sample_actions(S2, gaussian(B));
  Eigen::MatrixXd x2 = concat(S2, next.action);
  Eigen::VectorXd qt = q1_target_.forward(x2).col(0).cwiseMin(
      q2_target_.forward(x2).col(0));
  Eigen::VectorXd y =
      R + config_.discount *
              (1.0 - D.array()).matrix().cwiseProduct(
                  qt - config_.temperature * next.log_prob.col(0));

  Mlp::Gradients g;
  double l1 = critic_objective(0, S, A, y, &g);
  q1_opt_.step(q1_, g);
  double l2 = critic_objective(1, S, A, y, &g);
  q2_opt_.step(q2_, g);

  summary.actor_loss = actor_objective(S, gaussian(B), &g);
  actor_opt_.step(actor_, g);

  q1_target_.soft_update(q1_, config_.tau);
  q2_target_.soft_update(q2_, config_.tau);

  summary.applied = true;
  summary.critic_loss = 0.5 * (l1 + l2);
  summary.mean_q = q1_.forward(concat(S, A)).mean();
  return summary;
}

void SacAgent::save(const std::filesystem::path& manifest_path,
                    const std::filesystem::path& params_path,
                    const ActionSpace* space) const {
  nlohmann::ordered_json m;
  m["format"] = "embudget-sac";
  m["version"] = 1;
  m["state_dim"] = state_dim_;
  m["action_dim"] = action_dim_;
  m["config"] = {{"hidden", config_.hidden},
                 {"discount", config_.discount},
                 {"tau", config_.tau},
                 {"temperature", config_.temperature},
                 {"actor_lr", config_.actor_lr},
                 {"critic_lr", config_.critic_lr},
                 {"replay_capacity", config_.replay_capacity},
                 {"batch_size", config_.batch_size},
                 {"log_std_min", config_.log_std_min},
                 {"log_std_max", config_.log_std_max}};
  if (space) {
    m["action_space"] = {{"merged", space->merged()},
                         {"w", {0.0, 1.0}},
                         {"alpha", {space->alpha_bounds().lo,
                                    space->alpha_bounds().hi}}};
  }
  auto& nets = m["networks"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  std::ofstream os(params_path, std::ios::binary);
  if (!os) throw Error("io_error", "cannot write " + params_path.string());
  const std::pair<const char*, const Mlp*> all[] = {
      {"actor", &actor_},       {"q1", &q1_},
      {"q2", &q2_},             {"q1_target", &q1_target_},
      {"q2_target", &q2_target_}};
  for (auto [name, net] : all) {
    auto flat = net->flat();
    nets.push_back({{"name", name},
                    {"layers",
                     {{net->inputs(), net->hidden()},
                      {net->hidden(), net->outputs()}}},
                    {"offset", offset},
                    {"count", flat.size()}});
    for (double d : flat) write_f64(os, d);
    offset += flat.size();
  }
  if (!os) throw Error("io_error", "failed writing " + params_path.string());
  std::ofstream ms(manifest_path);
  if (!ms) throw Error("io_error", "cannot write " + manifest_path.string());
  ms << m.dump(2) << "\n";
}

SacAgent SacAgent::load(const std::filesystem::path& manifest_path,
                        const std::filesystem::path& params_path) {
  std::ifstream ms(manifest_path);
  if (!ms) throw Error("io_error", "cannot read " + manifest_path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(ms);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad agent manifest: ") + e.what());
  }
  if (m.value("format", "") != "embudget-sac")
    throw FormatError("not an agent manifest");
  SacConfig c;
  const auto& jc = m.at("config");
  c.hidden = jc.at("hidden");
  c.discount = jc.at("discount");
  c.tau = jc.at("tau");
  c.temperature = jc.at("temperature");
  c.actor_lr = jc.at("actor_lr");
  c.critic_lr = jc.at("critic_lr");
  c.replay_capacity = jc.at("replay_capacity");
  c.batch_size = jc.at("batch_size");
  c.log_std_min = jc.at("log_std_min");
  c.log_std_max = jc.at("log_std_max");
  SacAgent agent(m.at("state_dim"), m.at("action_dim"), c, 0);

  std::ifstream is(params_path, std::ios::binary);
  if (!is) throw Error("io_error", "cannot read " + params_path.string());
  Mlp* targets[] = {&agent.actor_, &agent.q1_, &agent.q2_, &agent.q1_target_,
                    &agent.q2_target_};
  for (Mlp* net : targets) {
    std::vector<double> flat(static_cast<std::size_t>(net->parameter_count()));
    for (double& d : flat) d = read_f64(is);
    net->set_flat(flat);
  }
  return agent;
}

}  // namespace embudget
