#include "embudget/harness.hpp"

#include <algorithm>
#include <numeric>

#include "embudget/error.hpp"
#include "embudget/masked_embedding.hpp"
#include "embudget/policy.hpp"
#include "embudget/rng.hpp"
#include "embudget/sac.hpp"

namespace embudget {
namespace {

using ojson = nlohmann::ordered_json;

// Seed streams; every random draw in a run hangs off one of these.
enum Stream : std::uint64_t {
  kTableInit = 10,
  kAgent = 20,
  kReservoir = 1000,
  kTrain = 2000,
  kAllocate = 3000,
  kAppend = 4000,
  kRandomSizes = 5000,
  kSearchInit = 6000,
  kSearchTrain = 7000,
  kSearchAllocate = 8000,
};

std::uint64_t seg_seed(std::uint64_t seed, Stream s, int t) {
  return derive_seed(seed, static_cast<std::uint64_t>(s) + static_cast<std::uint64_t>(t));
}

std::uint64_t iter_seed(std::uint64_t seed, Stream s, int t, int i) {
  return derive_seed(seg_seed(seed, s, t), static_cast<std::uint64_t>(i));
}

struct SegmentData {
  const Segment* segment = nullptr;
  Reservoir reservoir;
  EventList training;  // train portion followed by the reservoir sample
  FrequencyTable freq;
  InteractionGraph graph;
  BudgetSpec budget;
};

std::vector<SegmentData> prepare(const ExperimentConfig& config,
                                 const std::vector<Segment>& segments,
                                 std::uint64_t seed) {
  std::vector<SegmentData> out(segments.size());
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& seg = segments[k];
    auto& d = out[k];
    d.segment = &seg;
    int t = seg.index;
    d.reservoir = build_reservoir(reservoir_history(segments, t), config.gamma,
                                  seg.train.size(), seg_seed(seed, kReservoir, t));
    d.training = seg.train;
    d.training.insert(d.training.end(), d.reservoir.events.begin(),
                      d.reservoir.events.end());
    d.freq = frequency_counts(seg.train, d.reservoir, seg.user_count,
                              seg.item_count, t);
    d.graph = build_graph(d.training, seg.user_count, seg.item_count);
    d.budget = config.budget;
  }
  return out;
}

// Value of the permanent model's evaluation history at step j: the last
// evaluation at or before j (the first one if j precedes them all).
double snapshot_eval(const std::vector<EvalPoint>& history, std::int64_t j) {
  if (history.empty()) return 0.0;
  const EvalPoint* pick = &history.front();
  for (const auto& p : history)
    if (p.step <= j) pick = &p;
  return pick->metrics.eval_score;
}

ojson action_json(const Action& a) {
  return {{"w", a.w}, {"alpha_u", a.alpha_u}, {"alpha_v", a.alpha_v}};
}

ojson metrics_json(const MetricsReport& m) {
  return {{"recall_at_20", m.recall_at_20},
          {"ndcg_at_20", m.ndcg_at_20},
          {"eval", m.eval_score},
          {"users_evaluated", m.users_evaluated}};
}

MetricsReport metrics_from(const nlohmann::json& j) {
  MetricsReport m;
  m.recall_at_20 = j.at("recall_at_20");
  m.ndcg_at_20 = j.at("ndcg_at_20");
  m.eval_score = j.at("eval");
  m.users_evaluated = j.at("users_evaluated");
  return m;
}

Action action_from(const nlohmann::json& j) {
  return {j.at("w"), j.at("alpha_u"), j.at("alpha_v")};
}

AllocationPlan with_segment(const std::function<AllocationPlan()>& f, int t) {
  try {
    return f();
  } catch (const InfeasibleBudgetError& e) {
    throw InfeasibleBudgetError(
        "segment " + std::to_string(t) + ": " + e.what(), t);
  }
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, const InteractionLog& log,
         std::uint64_t seed, const MetricsSink& sink)
      : config_(config), seed_(seed), sink_(sink) {
    validate(config);
    segments_ = partition_stream(log, config.m, config.train_fraction);
    data_ = prepare(config, segments_, seed);
    report_.policy = std::string(to_string(config.policy));
    report_.dist = std::string(to_string(config.dist));
    report_.merged = config.merged;
    bool mean = config.budget.mode == BudgetSpec::Mode::kMeanSize;
    report_.budget_mode = mean ? "mean" : "total";
    report_.budget_value = mean ? config.budget.mean_size : config.budget.total;
    report_.seed = seed;
  }

  RunReport run() {
    const bool learned = config_.policy == Policy::kScall;
    std::optional<ActionSpace> space;
    std::optional<SacAgent> agent;
    std::optional<ReplayBuffer> buffer;
    if (learned) {
      space.emplace(config_.dist, config_.merged);
      auto dim = state_length(config_.groups, config_.budget.d_max,
                              config_.merged);
      agent.emplace(static_cast<int>(dim), space->dimensions(), config_.agent,
                    derive_seed(seed_, kAgent));
      buffer.emplace(config_.agent.replay_capacity);
    }

    const auto& first = *data_.front().segment;
    MaskedEmbeddingTable table(first.user_count, first.item_count,
                               config_.budget.d_max, config_.budget.d_min,
                               derive_seed(seed_, kTableInit));
    AllocationPlan last_plan;
    std::vector<EvalPoint> last_history;
    double last_reward = 0.0;

    for (std::size_t k = 0; k < data_.size(); ++k) {
      const auto& d = data_[k];
      const auto& seg = *d.segment;
      const int t = seg.index;
      SegmentRecord rec;
      rec.index = t;
      rec.users = seg.user_count;
      rec.items = seg.item_count;
      rec.train_events = static_cast<std::int64_t>(seg.train.size());
      rec.reservoir_events = static_cast<std::int64_t>(d.reservoir.events.size());
      rec.test_events = static_cast<std::int64_t>(seg.test.size());
      rec.budget = resolve_budget(d.budget, seg.user_count, seg.item_count);

      if (learned && k > 0)
        last_reward = search(data_[k - 1], table, last_plan, last_history,
                             last_reward, *space, *agent, *buffer, rec);

      if (k > 0) {
        const auto& prev = *data_[k - 1].segment;
        table.append_rows(seg.user_count - prev.user_count,
                          seg.item_count - prev.item_count,
                          seg_seed(seed_, kAppend, t));
      }

      AllocationPlan plan;
      if (k == 0 || config_.policy == Policy::kEs) {
        plan = with_segment([&] {
          return allocate_uniform(d.budget, seg.user_count, seg.item_count);
        }, t);
      } else if (config_.policy == Policy::kMr) {
        plan = with_segment([&] {
          return allocate_random(d.budget, seg.user_count, seg.item_count,
                                 seg_seed(seed_, kRandomSizes, t));
        }, t);
      } else {
        auto state = build_state(d.freq, last_reward, table, last_plan,
                                 config_.groups, config_.merged)
                         .flatten();
        Action action = space->from_unit(agent->act(state, false));
        plan = with_segment([&] {
          return allocate_plan(action, d, seg_seed(seed_, kAllocate, t));
        }, t);
        rec.action = action;
        rec.transitions = buffer->size();
      }

      table.set_sizes(plan);
      rec.param_count = table.param_count();
      if (rec.param_count > rec.budget)
        throw InfeasibleBudgetError("allocation exceeded the budget", t);
      rec.plan = summarize(plan);
      for (auto u : config_.tracked_users)
        if (u < seg.user_count) rec.tracked_user_sizes[u] = table.size_of(table.user_row(u));
      for (auto v : config_.tracked_items)
        if (v < seg.item_count) rec.tracked_item_sizes[v] = table.size_of(table.item_row(v));

      auto outcome = train_until_early_stop(table, d.graph, seg.test,
                                            config_.recommender,
                                            seg_seed(seed_, kTrain, t));
      rec.metrics = outcome.history.empty() ? MetricsReport{} : best_metrics(outcome);
      rec.steps_run = outcome.steps_run;
      rec.best_step = outcome.best_step;
      last_history = std::move(outcome.history);
      last_plan = std::move(plan);

      if (sink_) {
        ojson j{{"event", "segment"},
                {"policy", report_.policy},
                {"seed", seed_},
                {"segment", t},
                {"users", rec.users},
                {"items", rec.items},
                {"budget", rec.budget},
                {"param_count", rec.param_count},
                {"metrics", metrics_json(rec.metrics)},
                {"steps_run", rec.steps_run},
                {"best_step", rec.best_step}};
        if (rec.action) j["action"] = action_json(*rec.action);
        sink_(j);
      }
      report_.segments.push_back(std::move(rec));
    }

    auto n = static_cast<double>(report_.segments.size());
    for (const auto& s : report_.segments) {
      report_.mean_recall_at_20 += s.metrics.recall_at_20;
      report_.mean_ndcg_at_20 += s.metrics.ndcg_at_20;
      report_.mean_eval += s.metrics.eval_score;
    }
    if (n > 0) {
      report_.mean_recall_at_20 /= n;
      report_.mean_ndcg_at_20 /= n;
      report_.mean_eval /= n;
    }
    return std::move(report_);
  }

 private:
  static MetricsReport best_metrics(const TrainingOutcome& o) {
    for (const auto& p : o.history)
      if (p.step == o.best_step) return p.metrics;
    return o.history.back().metrics;
  }

  AllocationPlan allocate_plan(const Action& action, const SegmentData& d,
                               std::uint64_t seed) const {
    AllocateOptions opts{config_.dist, config_.tie_break};
    if (config_.merged)
      return allocate_merged(action.alpha_u, d.budget, d.freq, seed, opts);
    return allocate(action, d.budget, d.freq, seed, opts);
  }

  // Search iterations on the previous segment's data. Returns the most
  // recent reward.
  double search(const SegmentData& d, const MaskedEmbeddingTable& table,
                const AllocationPlan& last_plan,
                const std::vector<EvalPoint>& last_history, double reward,
                const ActionSpace& space, SacAgent& agent,
                ReplayBuffer& buffer, SegmentRecord& rec) {
    const auto& seg = *d.segment;
    const int t = rec.index;
    Eigen::VectorXd state = build_state(d.freq, reward, table, last_plan,
                                        config_.groups, config_.merged)
                                .flatten();
    for (int i = 0; i < config_.search_iterations; ++i) {
      Eigen::VectorXd unit = agent.act(state, true);
      Action action = space.from_unit(unit);
      AllocationPlan plan = with_segment([&] {
        return allocate_plan(action, d, iter_seed(seed_, kSearchAllocate, t, i));
      }, t);

      MaskedEmbeddingTable fresh(seg.user_count, seg.item_count,
                                 config_.budget.d_max, config_.budget.d_min,
                                 iter_seed(seed_, kSearchInit, t, i));
      fresh.set_sizes(plan);
      auto outcome = train_until_early_stop(fresh, d.graph, seg.test,
                                            config_.recommender,
                                            iter_seed(seed_, kSearchTrain, t, i));
      double eval_ref = snapshot_eval(last_history, outcome.best_step);
      reward = compute_reward(outcome.best_eval, eval_ref);

      Eigen::VectorXd next = build_state(d.freq, reward, fresh, plan,
                                         config_.groups, config_.merged)
                                 .flatten();
      buffer.add({state, unit, reward, next, false});
      auto upd = agent.update(buffer);
      state = std::move(next);

      rec.search.push_back(
          {action, outcome.best_eval, eval_ref, reward, outcome.best_step});
      if (sink_) {
        ojson j{{"event", "search"},
                {"policy", report_.policy},
                {"seed", seed_},
                {"segment", t},
                {"iteration", i},
                {"action", action_json(action)},
                {"eval", outcome.best_eval},
                {"eval_ref", eval_ref},
                {"reward", reward},
                {"best_step", outcome.best_step},
                {"agent_updated", upd.applied}};
        if (upd.applied) {
          j["critic_loss"] = upd.critic_loss;
          j["actor_loss"] = upd.actor_loss;
        }
        sink_(j);
      }
    }
    return reward;
  }

  const ExperimentConfig& config_;
  std::uint64_t seed_;
  const MetricsSink& sink_;
  std::vector<Segment> segments_;
  std::vector<SegmentData> data_;
  RunReport report_;
};

}  // namespace

PlanSummary summarize(const AllocationPlan& plan) {
  PlanSummary s;
  s.total = plan.total();
  auto fill = [](const std::vector<int>& v, int& lo, int& hi, double& mean) {
    if (v.empty()) return;
    auto [a, b] = std::minmax_element(v.begin(), v.end());
    lo = *a;
    hi = *b;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  fill(plan.user_sizes, s.user_min, s.user_max, s.user_mean);
  fill(plan.item_sizes, s.item_min, s.item_max, s.item_mean);
  return s;
}

ojson RunReport::to_json() const {
  ojson j;
  j["policy"] = policy;
  j["dist"] = dist;
  j["merged"] = merged;
  j["budget_mode"] = budget_mode;
  j["budget_value"] = budget_value;
  j["seed"] = seed;
  j["mean_recall_at_20"] = mean_recall_at_20;
  j["mean_ndcg_at_20"] = mean_ndcg_at_20;
  j["mean_eval"] = mean_eval;
  auto& segs = j["segments"] = ojson::array();
  for (const auto& s : segments) {
    ojson r;
    r["index"] = s.index;
    r["users"] = s.users;
    r["items"] = s.items;
    r["train_events"] = s.train_events;
    r["reservoir_events"] = s.reservoir_events;
    r["test_events"] = s.test_events;
    r["budget"] = s.budget;
    r["param_count"] = s.param_count;
    r["action"] = s.action ? action_json(*s.action) : ojson(nullptr);
    r["plan"] = {{"total", s.plan.total},
                 {"user_min", s.plan.user_min},
                 {"user_max", s.plan.user_max},
                 {"user_mean", s.plan.user_mean},
                 {"item_min", s.plan.item_min},
                 {"item_max", s.plan.item_max},
                 {"item_mean", s.plan.item_mean}};
    r["metrics"] = metrics_json(s.metrics);
    r["steps_run"] = s.steps_run;
    r["best_step"] = s.best_step;
    r["transitions"] = s.transitions;
    auto& sr = r["search"] = ojson::array();
    for (const auto& x : s.search)
      sr.push_back({{"action", action_json(x.action)},
                    {"eval", x.eval},
                    {"eval_ref", x.eval_ref},
                    {"reward", x.reward},
                    {"best_step", x.best_step}});
    auto sizes = [](const std::map<EntityId, int>& m) {
      ojson o = ojson::object();
      for (auto [id, size] : m) o[std::to_string(id)] = size;
      return o;
    };
    r["tracked_users"] = sizes(s.tracked_user_sizes);
    r["tracked_items"] = sizes(s.tracked_item_sizes);
    segs.push_back(std::move(r));
  }
  return j;
}

RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport rep;
    rep.policy = j.at("policy");
    rep.dist = j.at("dist");
    rep.merged = j.at("merged");
    rep.budget_mode = j.at("budget_mode");
    rep.budget_value = j.at("budget_value");
    rep.seed = j.at("seed");
    rep.mean_recall_at_20 = j.at("mean_recall_at_20");
    rep.mean_ndcg_at_20 = j.at("mean_ndcg_at_20");
    rep.mean_eval = j.at("mean_eval");
    for (const auto& r : j.at("segments")) {
      SegmentRecord s;
      s.index = r.at("index");
      s.users = r.at("users");
      s.items = r.at("items");
      s.train_events = r.at("train_events");
      s.reservoir_events = r.at("reservoir_events");
      s.test_events = r.at("test_events");
      s.budget = r.at("budget");
      s.param_count = r.at("param_count");
      if (!r.at("action").is_null()) s.action = action_from(r.at("action"));
      const auto& p = r.at("plan");
      s.plan = {p.at("total"), p.at("user_min"), p.at("user_max"),
                p.at("item_min"), p.at("item_max"), p.at("user_mean"),
                p.at("item_mean")};
      s.metrics = metrics_from(r.at("metrics"));
      s.steps_run = r.at("steps_run");
      s.best_step = r.at("best_step");
      s.transitions = r.at("transitions");
      for (const auto& x : r.at("search"))
        s.search.push_back({action_from(x.at("action")), x.at("eval"),
                            x.at("eval_ref"), x.at("reward"), x.at("best_step")});
      for (const auto& [id, size] : r.at("tracked_users").items())
        s.tracked_user_sizes[std::stoi(id)] = size;
      for (const auto& [id, size] : r.at("tracked_items").items())
        s.tracked_item_sizes[std::stoi(id)] = size;
      rep.segments.push_back(std::move(s));
    }
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed run report: ") + e.what());
  }
}

RunReport run_scall(const ExperimentConfig& config, const InteractionLog& log,
                    std::uint64_t seed, const MetricsSink& sink) {
  ExperimentConfig c = config;
  c.policy = Policy::kScall;
  return Runner(c, log, seed, sink).run();
}

RunReport run_baseline(const ExperimentConfig& config,
                       const InteractionLog& log, std::uint64_t seed,
                       const MetricsSink& sink) {
  if (config.policy == Policy::kScall)
    throw ConfigError("run_baseline needs policy es or mr");
  return Runner(config, log, seed, sink).run();
}

RunReport run_policy(const ExperimentConfig& config, const InteractionLog& log,
                     std::uint64_t seed, const MetricsSink& sink) {
  return config.policy == Policy::kScall ? run_scall(config, log, seed, sink)
                                         : run_baseline(config, log, seed, sink);
}

std::vector<RunReport> run_experiment(const ExperimentConfig& config,
                                      const MetricsSink& sink) {
  if (config.dataset.empty()) throw ConfigError("config.dataset is empty");
  auto log = load_interactions(config.dataset, LoadOptions{config.k_core});
  std::vector<RunReport> out;
  for (auto seed : config.seeds) out.push_back(run_policy(config, log, seed, sink));
  return out;
}

}  // namespace embudget
