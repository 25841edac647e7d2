#include "embudget/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

#include <toml.hpp>

#include "embudget/error.hpp"

namespace embudget {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void require_keys(const json& obj, std::string_view where,
                  std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object())
    throw ConfigError(std::string(where) + " must be a table/object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok)
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::string_view tie_name(TieBreak t) {
  return t == TieBreak::kNewerFirst ? "newer_first" : "older_first";
}

TieBreak parse_tie(const std::string& s) {
  if (s == "newer_first") return TieBreak::kNewerFirst;
  if (s == "older_first") return TieBreak::kOlderFirst;
  throw ConfigError("unknown tie_break '" + s + "'");
}

std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

// JSON <-> TOML node conversion. Only the shapes the config uses appear.
toml::array to_toml_array(const json& arr);

toml::table to_toml_table(const json& obj) {
  toml::table t;
  for (const auto& [key, v] : obj.items()) {
    if (v.is_object()) t.insert(key, to_toml_table(v));
    else if (v.is_array()) t.insert(key, to_toml_array(v));
    else if (v.is_boolean()) t.insert(key, v.get<bool>());
    else if (v.is_number_unsigned())
      t.insert(key, static_cast<std::int64_t>(v.get<std::uint64_t>()));
    else if (v.is_number_integer()) t.insert(key, v.get<std::int64_t>());
    else if (v.is_number_float()) t.insert(key, v.get<double>());
    else if (v.is_string()) t.insert(key, v.get<std::string>());
    else throw ConfigError("cannot express '" + key + "' in TOML");
  }
  return t;
}

toml::array to_toml_array(const json& arr) {
  toml::array a;
  for (const auto& v : arr) {
    if (v.is_number_unsigned())
      a.push_back(static_cast<std::int64_t>(v.get<std::uint64_t>()));
    else if (v.is_number_integer()) a.push_back(v.get<std::int64_t>());
    else if (v.is_number_float()) a.push_back(v.get<double>());
    else if (v.is_string()) a.push_back(v.get<std::string>());
    else throw ConfigError("unsupported TOML array element");
  }
  return a;
}

json from_toml_node(const toml::node& n) {
  if (auto* t = n.as_table()) {
    json out = json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = from_toml_node(v);
    return out;
  }
  if (auto* a = n.as_array()) {
    json out = json::array();
    for (const auto& v : *a) out.push_back(from_toml_node(v));
    return out;
  }
  if (n.is_boolean()) return *n.value<bool>();
  if (n.is_integer()) return *n.value<std::int64_t>();
  if (n.is_floating_point()) return *n.value<double>();
  if (n.is_string()) return *n.value<std::string>();
  throw ConfigError("unsupported TOML value type");
}

}  // namespace

Policy parse_policy(std::string_view name) {
  if (name == "scall") return Policy::kScall;
  if (name == "es") return Policy::kEs;
  if (name == "mr") return Policy::kMr;
  throw ConfigError("unknown policy '" + std::string(name) + "'");
}

std::string_view to_string(Policy policy) {
  switch (policy) {
    case Policy::kScall: return "scall";
    case Policy::kEs: return "es";
    case Policy::kMr: return "mr";
  }
  return "scall";
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (c.k_core < 0) fail("k_core must be >= 0");
  if (c.m < 1) fail("m must be >= 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    fail("train_fraction must lie in (0, 1)");
  const auto& b = c.budget;
  if (b.d_min < 1 || b.d_max < b.d_min) fail("need 1 <= d_min <= d_max");
  if (b.mode == BudgetSpec::Mode::kMeanSize && b.mean_size < 1)
    fail("budget.mean_size must be >= 1");
  if (b.mode == BudgetSpec::Mode::kTotal && b.total < 1)
    fail("budget.total must be >= 1");
  if (c.groups < 1) fail("groups must be >= 1");
  if (!(c.gamma >= 0.0) || !std::isfinite(c.gamma)) fail("gamma must be >= 0");
  if (c.seeds.empty()) fail("seeds must not be empty");
  for (auto s : c.seeds)
    if (s > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      fail("seeds must fit in a signed 64-bit integer");
  if (c.search_iterations < 0) fail("search_iterations must be >= 0");
  const auto& r = c.recommender;
  if (r.layers < 0) fail("recommender.layers must be >= 0");
  if (r.batch_size < 1) fail("recommender.batch_size must be >= 1");
  if (r.eval_interval < 1) fail("recommender.eval_interval must be >= 1");
  if (r.patience < 1) fail("recommender.patience must be >= 1");
  if (!(r.learning_rate > 0.0)) fail("recommender.learning_rate must be > 0");
  if (!(r.lr_decay > 0.0 && r.lr_decay <= 1.0))
    fail("recommender.lr_decay must lie in (0, 1]");
  if (r.lr_decay_every < 1) fail("recommender.lr_decay_every must be >= 1");
  if (!(r.lr_min >= 0.0)) fail("recommender.lr_min must be >= 0");
  if (!(r.eta >= 0.0)) fail("recommender.eta must be >= 0");
  if (r.max_steps < 1) fail("recommender.max_steps must be >= 1");
  if (r.top_k < 1) fail("recommender.top_k must be >= 1");
  const auto& a = c.agent;
  if (a.hidden < 1) fail("agent.hidden must be >= 1");
  if (!(a.discount >= 0.0 && a.discount <= 1.0))
    fail("agent.discount must lie in [0, 1]");
  if (!(a.tau > 0.0 && a.tau <= 1.0)) fail("agent.tau must lie in (0, 1]");
  if (!(a.temperature >= 0.0)) fail("agent.temperature must be >= 0");
  if (!(a.actor_lr > 0.0) || !(a.critic_lr > 0.0))
    fail("agent learning rates must be > 0");
  if (a.replay_capacity < 1) fail("agent.replay_capacity must be >= 1");
  if (a.batch_size < 1) fail("agent.batch_size must be >= 1");
  if (!(a.log_std_min < a.log_std_max)) fail("agent log-std bounds inverted");
  for (auto u : c.tracked_users)
    if (u < 0) fail("tracked_users must be non-negative");
  for (auto v : c.tracked_items)
    if (v < 0) fail("tracked_items must be non-negative");
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["dataset"] = c.dataset;
  j["k_core"] = c.k_core;
  j["m"] = c.m;
  j["train_fraction"] = c.train_fraction;
  j["budget"] = {
      {"mode", c.budget.mode == BudgetSpec::Mode::kMeanSize ? "mean" : "total"},
      {"mean_size", c.budget.mean_size},
      {"total", c.budget.total},
      {"d_min", c.budget.d_min},
      {"d_max", c.budget.d_max}};
  j["dist"] = std::string(to_string(c.dist));
  j["tie_break"] = std::string(tie_name(c.tie_break));
  j["merged"] = c.merged;
  j["groups"] = c.groups;
  j["gamma"] = c.gamma;
  j["seeds"] = c.seeds;
  j["search_iterations"] = c.search_iterations;
  const auto& r = c.recommender;
  j["recommender"] = {{"layers", r.layers},
                      {"batch_size", r.batch_size},
                      {"eval_interval", r.eval_interval},
                      {"patience", r.patience},
                      {"learning_rate", r.learning_rate},
                      {"lr_decay", r.lr_decay},
                      {"lr_decay_every", r.lr_decay_every},
                      {"lr_min", r.lr_min},
                      {"eta", r.eta},
                      {"max_steps", r.max_steps},
                      {"top_k", r.top_k},
                      {"optimizer", std::string(optimizer_name(r.optimizer))}};
  const auto& a = c.agent;
  j["agent"] = {{"hidden", a.hidden},
                {"discount", a.discount},
                {"tau", a.tau},
                {"temperature", a.temperature},
                {"actor_lr", a.actor_lr},
                {"critic_lr", a.critic_lr},
                {"replay_capacity", a.replay_capacity},
                {"batch_size", a.batch_size},
                {"log_std_min", a.log_std_min},
                {"log_std_max", a.log_std_max}};
  j["policy"] = std::string(to_string(c.policy));
  j["tracked_users"] = c.tracked_users;
  j["tracked_items"] = c.tracked_items;
  return j;
}

namespace {

ExperimentConfig parse_unchecked(const json& j) {
  ExperimentConfig c;
  require_keys(j, "config",
               {"dataset", "k_core", "m", "train_fraction", "budget", "dist",
                "tie_break", "merged", "groups", "gamma", "seeds",
                "search_iterations", "recommender", "agent", "policy",
                "tracked_users", "tracked_items"});
  read(j, "dataset", c.dataset);
  read(j, "k_core", c.k_core);
  read(j, "m", c.m);
  read(j, "train_fraction", c.train_fraction);
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    require_keys(b, "budget", {"mode", "mean_size", "total", "d_min", "d_max"});
    std::string mode = "mean";
    read(b, "mode", mode);
    if (mode == "mean") c.budget.mode = BudgetSpec::Mode::kMeanSize;
    else if (mode == "total") c.budget.mode = BudgetSpec::Mode::kTotal;
    else throw ConfigError("budget.mode must be 'mean' or 'total'");
    read(b, "mean_size", c.budget.mean_size);
    read(b, "total", c.budget.total);
    read(b, "d_min", c.budget.d_min);
    read(b, "d_max", c.budget.d_max);
  }
  if (j.contains("dist")) c.dist = parse_distribution(j.at("dist").get<std::string>());
  if (j.contains("tie_break")) c.tie_break = parse_tie(j.at("tie_break").get<std::string>());
  read(j, "merged", c.merged);
  read(j, "groups", c.groups);
  read(j, "gamma", c.gamma);
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.clear();
    if (s.is_array()) {
      for (const auto& v : s) {
        if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
          throw ConfigError("seeds must be non-negative integers");
        c.seeds.push_back(v.get<std::uint64_t>());
      }
    } else if (s.is_number_integer() && s.get<std::int64_t>() >= 0) {
      c.seeds.push_back(s.get<std::uint64_t>());
    } else {
      throw ConfigError("seeds must be an integer or a list of integers");
    }
  }
  read(j, "search_iterations", c.search_iterations);
  if (j.contains("recommender")) {
    const auto& r = j.at("recommender");
    require_keys(r, "recommender",
                 {"layers", "batch_size", "eval_interval", "patience",
                  "learning_rate", "lr_decay", "lr_decay_every", "lr_min",
                  "eta", "max_steps", "top_k", "optimizer"});
    auto& o = c.recommender;
    read(r, "layers", o.layers);
    read(r, "batch_size", o.batch_size);
    read(r, "eval_interval", o.eval_interval);
    read(r, "patience", o.patience);
    read(r, "learning_rate", o.learning_rate);
    read(r, "lr_decay", o.lr_decay);
    read(r, "lr_decay_every", o.lr_decay_every);
    read(r, "lr_min", o.lr_min);
    read(r, "eta", o.eta);
    read(r, "max_steps", o.max_steps);
    read(r, "top_k", o.top_k);
    if (r.contains("optimizer"))
      o.optimizer = parse_optimizer(r.at("optimizer").get<std::string>());
  }
  if (j.contains("agent")) {
    const auto& a = j.at("agent");
    require_keys(a, "agent",
                 {"hidden", "discount", "tau", "temperature", "actor_lr",
                  "critic_lr", "replay_capacity", "batch_size", "log_std_min",
                  "log_std_max"});
    auto& o = c.agent;
    read(a, "hidden", o.hidden);
    read(a, "discount", o.discount);
    read(a, "tau", o.tau);
    read(a, "temperature", o.temperature);
    read(a, "actor_lr", o.actor_lr);
    read(a, "critic_lr", o.critic_lr);
    read(a, "replay_capacity", o.replay_capacity);
    read(a, "batch_size", o.batch_size);
    read(a, "log_std_min", o.log_std_min);
    read(a, "log_std_max", o.log_std_max);
  }
  if (j.contains("policy")) c.policy = parse_policy(j.at("policy").get<std::string>());
  read(j, "tracked_users", c.tracked_users);
  read(j, "tracked_items", c.tracked_items);
  return c;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  auto c = parse_unchecked(j);
  validate(c);
  return c;
}

std::string to_toml(const ExperimentConfig& config) {
  json j = to_json(config);
  std::ostringstream os;
  os << to_toml_table(j) << "\n";
  return os.str();
}

ExperimentConfig config_from_toml(const std::string& text) {
  toml::table t;
  try {
    t = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw ConfigError(std::string("TOML: ") + std::string(e.description()) +
                      " at line " +
                      std::to_string(e.source().begin.line));
  }
  return config_from_json(from_toml_node(t));
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".toml") return config_from_toml(ss.str());
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("JSON: ") + e.what());
  }
  return config_from_json(j);
}

void save_config(const ExperimentConfig& config,
                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  if (path.extension() == ".toml") out << to_toml(config);
  else out << to_json(config).dump(2) << "\n";
}

void apply_override(ExperimentConfig& config, std::string_view key,
                    std::string_view value) {
  json j = to_json(config);
  json* node = &j;
  std::string k(key);
  std::size_t pos = 0;
  while (true) {
    auto dot = k.find('.', pos);
    std::string part = k.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (!node->is_object() || !node->contains(part))
      throw ConfigError("unknown config key '" + k + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = std::string(value);
  *node = parsed;
  // validated once all overrides are in
  config = parse_unchecked(j);
}

}  // namespace embudget
