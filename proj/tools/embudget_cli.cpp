// Command-line front end: segment a corpus, run the learned policy or a
// baseline over a stream, and merge run reports into tables.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "embudget/config.hpp"
#include "embudget/error.hpp"
#include "embudget/harness.hpp"
#include "embudget/report.hpp"
#include "embudget/stream_corpus.hpp"
#include "embudget/synthetic.hpp"

namespace fs = std::filesystem;
using namespace embudget;

namespace {

constexpr const char* kOutDirEnv = "EMBUDGET_OUT_DIR";

fs::path output_dir(const std::string& flag) {
  fs::path dir = !flag.empty() ? fs::path(flag)
                 : std::getenv(kOutDirEnv) ? fs::path(std::getenv(kOutDirEnv))
                                           : fs::path("embudget_out");
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out << text;
}

int fail(const std::string& kind, const std::string& message,
         std::optional<int> segment = std::nullopt, int code = 1) {
  nlohmann::ordered_json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  if (segment) j["error"]["segment"] = *segment;
  std::cerr << j.dump() << std::endl;
  return code;
}

struct RunOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string dataset;
  std::vector<std::uint64_t> seeds;
  std::string policy;
  std::string dist;
  std::int64_t mean_size = 0;
  std::int64_t m = 0;
  int search_iterations = -1;
  std::string out_dir;
};

void add_run_flags(CLI::App* cmd, RunOptions& o, bool with_policy) {
  cmd->add_option("-c,--config", o.config_path, "TOML or JSON config file");
  cmd->add_option("--set", o.sets, "Override a config key: key=value (repeatable)");
  cmd->add_option("--dataset", o.dataset, "Interaction log (CSV/TSV)");
  cmd->add_option("--seed", o.seeds, "Seed(s); replaces the config list");
  if (with_policy)
    cmd->add_option("--policy", o.policy, "scall, es or mr");
  cmd->add_option("--dist", o.dist, "powerlaw, pareto or truncnormal");
  cmd->add_option("--mean-size", o.mean_size, "Mean embedding size c");
  cmd->add_option("--m", o.m, "New entities per segment");
  cmd->add_option("--search-iterations", o.search_iterations,
                  "Search iterations per segment");
  cmd->add_option("-o,--out-dir", o.out_dir,
                  std::string("Output directory (default $") + kOutDirEnv + ")");
}

ExperimentConfig resolve_config(const RunOptions& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{}
                                             : load_config(o.config_path);
  for (const auto& s : o.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_override(c, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!o.dataset.empty()) c.dataset = o.dataset;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.policy.empty()) c.policy = parse_policy(o.policy);
  if (!o.dist.empty()) c.dist = parse_distribution(o.dist);
  if (o.mean_size > 0) {
    c.budget.mode = BudgetSpec::Mode::kMeanSize;
    c.budget.mean_size = o.mean_size;
  }
  if (o.m > 0) c.m = o.m;
  if (o.search_iterations >= 0) c.search_iterations = o.search_iterations;
  validate(c);
  return c;
}

void execute(const ExperimentConfig& config, const std::string& out_flag) {
  auto dir = output_dir(out_flag);
  save_config(config, dir / "config.json");
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::app);
  if (!jsonl) throw Error("io_error", "cannot write metrics.jsonl");
  MetricsSink sink = [&](const nlohmann::ordered_json& j) {
    jsonl << j.dump() << '\n';
    jsonl.flush();
  };
  auto reports = run_experiment(config, sink);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    auto name = "report_" + r.policy + "_seed" + std::to_string(r.seed) + ".json";
    write_text(dir / name, r.dump() + "\n");
    summary.push_back({{"report", name},
                       {"mean_recall_at_20", r.mean_recall_at_20},
                       {"mean_ndcg_at_20", r.mean_ndcg_at_20},
                       {"mean_eval", r.mean_eval}});
  }
  write_text(dir / "results.csv", comparison_csv(reports));
  write_text(dir / "segments.csv", segment_csv(reports));
  write_text(dir / "trajectories.csv", trajectory_csv(reports));
  std::cout << summary.dump(2) << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Budgeted embedding-size search for streaming recommenders"};
  app.require_subcommand(1);

  // segment
  std::string seg_input, seg_out;
  std::int64_t seg_m = 1000;
  double seg_fraction = 0.8;
  int seg_kcore = 0;
  auto* seg = app.add_subcommand("segment", "Split a corpus into segments and write a manifest");
  seg->add_option("input", seg_input, "Interaction log (CSV/TSV)")->required();
  seg->add_option("--m", seg_m, "New entities per segment");
  seg->add_option("--train-fraction", seg_fraction, "Train share of each segment");
  seg->add_option("--k-core", seg_kcore, "k-core filter (0 disables)");
  seg->add_option("-o,--out-dir", seg_out, "Output directory");

  RunOptions run_opts, base_opts;
  auto* run = app.add_subcommand("run", "Run the configured policy over the stream");
  add_run_flags(run, run_opts, true);
  auto* base = app.add_subcommand("baseline", "Run the ES or MR baseline");
  add_run_flags(base, base_opts, true);

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Merge run reports into CSV tables");
  rep->add_option("reports", report_inputs, "RunReport JSON files")->required();
  rep->add_option("-o,--out-dir", report_out, "Output directory");

  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic interaction stream");
  synth->add_option("output", synth_out, "CSV file to write")->required();
  synth->add_option("--users", spec.users, "Number of users");
  synth->add_option("--items", spec.items, "Number of items");
  synth->add_option("--events", spec.events, "Number of interactions");
  synth->add_option("--latent-dim", spec.latent_dim, "Rank of the hidden preference model");
  synth->add_option("--affinity", spec.affinity, "Strength of the preference term");
  synth->add_option("--user-skew", spec.user_skew, "Zipf exponent for user activity");
  synth->add_option("--item-skew", spec.item_skew, "Zipf exponent for item popularity");
  synth->add_option("--initial-share", spec.initial_share,
                    "Share of entities present from the start");
  synth->add_option("--seed", spec.seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage_error", e.what(), std::nullopt, 2);
  }

  try {
    if (*seg) {
      auto log = load_interactions(seg_input, LoadOptions{seg_kcore});
      auto segments = partition_stream(log, seg_m, seg_fraction);
      auto dir = output_dir(seg_out);
      auto manifest = segment_manifest_json(log, segments, seg_m, seg_fraction);
      write_text(dir / "segments.json", manifest + "\n");
      write_id_mapping(log, dir / "users.tsv", dir / "items.tsv");
      std::cout << manifest << std::endl;
    } else if (*run) {
      execute(resolve_config(run_opts), run_opts.out_dir);
    } else if (*base) {
      auto config = resolve_config(base_opts);
      if (base_opts.policy.empty() && config.policy == Policy::kScall)
        config.policy = Policy::kEs;
      if (config.policy == Policy::kScall)
        throw ConfigError("baseline expects --policy es or mr");
      execute(config, base_opts.out_dir);
    } else if (*rep) {
      std::vector<RunReport> reports;
      for (const auto& p : report_inputs) {
        std::ifstream in(p);
        if (!in) throw Error("io_error", "cannot read " + p);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw FormatError(p + ": " + e.what());
        }
        if (j.is_array())
          for (const auto& x : j) reports.push_back(report_from_json(x));
        else
          reports.push_back(report_from_json(j));
      }
      auto dir = output_dir(report_out);
      auto table = comparison_csv(reports);
      write_text(dir / "comparison.csv", table);
      write_text(dir / "segments.csv", segment_csv(reports));
      write_text(dir / "trajectories.csv", trajectory_csv(reports));
      std::cout << table;
    } else if (*synth) {
      write_text(synth_out, synthesize_csv(spec));
    }
  } catch (const InfeasibleBudgetError& e) {
    return fail(e.kind(), e.what(), e.segment());
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
  return 0;
}
