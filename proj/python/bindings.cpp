#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <nlohmann/json.hpp>

#include "embudget/allocator.hpp"
#include "embudget/config.hpp"
#include "embudget/error.hpp"
#include "embudget/harness.hpp"
#include "embudget/masked_embedding.hpp"
#include "embudget/policy.hpp"
#include "embudget/report.hpp"
#include "embudget/stream_corpus.hpp"
#include "embudget/synthetic.hpp"

namespace py = pybind11;
using namespace embudget;

namespace {

// JSON text crosses the boundary; the Python side gets plain dicts.
py::object to_py(const std::string& text) {
  return py::module_::import("json").attr("loads")(text);
}

std::string from_py(const py::object& obj) {
  return py::module_::import("json").attr("dumps")(obj).cast<std::string>();
}

ExperimentConfig config_of(const py::object& obj) {
  if (obj.is_none()) return {};
  return config_from_json(nlohmann::json::parse(from_py(obj)));
}

BudgetSpec budget_of(std::int64_t total, int d_min, int d_max) {
  return BudgetSpec::fixed(total, d_min, d_max);
}

py::dict plan_dict(const AllocationPlan& p) {
  py::dict d;
  d["user_sizes"] = p.user_sizes;
  d["item_sizes"] = p.item_sizes;
  d["user_order"] = p.user_order;
  d["item_order"] = p.item_order;
  d["budget"] = p.budget;
  d["total"] = p.total();
  return d;
}

FrequencyTable freq_of(std::vector<std::int64_t> users, std::vector<std::int64_t> items) {
  FrequencyTable f;
  f.user_counts = std::move(users);
  f.item_counts = std::move(items);
  return f;
}

}  // namespace

PYBIND11_MODULE(_embudget, m) {
  m.doc() = "Budgeted embedding-size search for streaming recommenders";

  static py::exception<Error> base(m, "EmbudgetError");
  static py::exception<InfeasibleBudgetError> infeasible(m, "InfeasibleBudgetError",
                                                         base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InfeasibleBudgetError& e) {
      py::set_error(infeasible, e.what());
    } catch (const Error& e) {
      py::set_error(base, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.def("sample_fractions",
        [](std::size_t n, double alpha, const std::string& dist, std::uint64_t seed) {
          return sample_fractions(n, alpha, parse_distribution(dist), seed);
        },
        py::arg("n"), py::arg("alpha"), py::arg("dist") = "powerlaw", py::arg("seed") = 0);

  m.def("resolve_budget",
        [](std::int64_t mean_size, std::int64_t users, std::int64_t items) {
          return resolve_budget(BudgetSpec::mean(mean_size, 1, 1), users, items);
        },
        py::arg("mean_size"), py::arg("users"), py::arg("items"));

  m.def("clamp_and_repair",
        [](const std::vector<std::int64_t>& raw, std::int64_t budget, int d_min, int d_max) {
          return clamp_and_repair(raw, budget, d_min, d_max);
        },
        py::arg("raw"), py::arg("budget"), py::arg("d_min"), py::arg("d_max"));

  m.def("allocate",
        [](double w, double alpha_u, double alpha_v, std::vector<std::int64_t> user_counts,
           std::vector<std::int64_t> item_counts, std::int64_t budget, int d_min, int d_max,
           std::uint64_t seed, const std::string& dist) {
          auto f = freq_of(std::move(user_counts), std::move(item_counts));
          return plan_dict(allocate({w, alpha_u, alpha_v}, budget_of(budget, d_min, d_max), f,
                                    seed, {parse_distribution(dist)}));
        },
        py::arg("w"), py::arg("alpha_u"), py::arg("alpha_v"), py::arg("user_counts"),
        py::arg("item_counts"), py::arg("budget"), py::arg("d_min") = 1,
        py::arg("d_max") = 256, py::arg("seed") = 0, py::arg("dist") = "powerlaw");

  m.def("allocate_uniform",
        [](std::int64_t budget, int d_min, int d_max, std::int32_t users, std::int32_t items) {
          return plan_dict(allocate_uniform(budget_of(budget, d_min, d_max), users, items));
        },
        py::arg("budget"), py::arg("d_min"), py::arg("d_max"), py::arg("users"),
        py::arg("items"));

  m.def("pooled_frequency",
        [](const std::vector<std::int64_t>& counts, int groups) {
          return pooled_frequency(counts, groups);
        },
        py::arg("counts"), py::arg("groups"));
  m.def("state_length", &state_length, py::arg("groups"), py::arg("d_max"),
        py::arg("merged") = false);
  m.def("compute_reward", &compute_reward, py::arg("eval_new"), py::arg("eval_ref"));

  m.def("synthesize_csv",
        [](std::int32_t users, std::int32_t items, std::int64_t events, double affinity,
           std::uint64_t seed) {
          SyntheticSpec s;
          s.users = users;
          s.items = items;
          s.events = events;
          s.affinity = affinity;
          s.seed = seed;
          return synthesize_csv(s);
        },
        py::arg("users") = 600, py::arg("items") = 400, py::arg("events") = 20000,
        py::arg("affinity") = 3.0, py::arg("seed") = 0);

  m.def("segment",
        [](const std::filesystem::path& path, std::int64_t m_new, double train_fraction) {
          auto log = load_interactions(path);
          auto segs = partition_stream(log, m_new, train_fraction);
          return to_py(segment_manifest_json(log, segs, m_new, train_fraction));
        },
        py::arg("path"), py::arg("m"), py::arg("train_fraction") = 0.8);

  m.def("default_config", [] { return to_py(to_json(ExperimentConfig{}).dump()); });

  m.def("run",
        [](const py::object& config, std::uint64_t seed) {
          auto c = config_of(config);
          auto log = load_interactions(c.dataset, LoadOptions{c.k_core});
          RunReport r;
          {
            py::gil_scoped_release release;
            r = run_policy(c, log, seed);
          }
          return to_py(r.dump());
        },
        py::arg("config"), py::arg("seed") = 0);

  m.def("comparison_csv", [](const py::list& reports) {
    std::vector<RunReport> rs;
    for (const auto& r : reports)
      rs.push_back(report_from_json(nlohmann::json::parse(from_py(py::reinterpret_borrow<py::object>(r)))));
    return comparison_csv(rs);
  });

  py::class_<MaskedEmbeddingTable>(m, "MaskedEmbeddingTable")
      .def(py::init<std::int32_t, std::int32_t, int, int, std::uint64_t>(), py::arg("users"),
           py::arg("items"), py::arg("d_max"), py::arg("d_min") = 1, py::arg("seed") = 0)
      .def_property_readonly("user_count", &MaskedEmbeddingTable::user_count)
      .def_property_readonly("item_count", &MaskedEmbeddingTable::item_count)
      .def_property_readonly("d_max", &MaskedEmbeddingTable::d_max)
      .def_property_readonly("sizes", &MaskedEmbeddingTable::sizes)
      .def("set_sizes",
           [](MaskedEmbeddingTable& t, const std::vector<int>& u, const std::vector<int>& v) {
             t.set_sizes(u, v);
           },
           py::arg("user_sizes"), py::arg("item_sizes"))
      .def("lookup", &MaskedEmbeddingTable::lookup, py::arg("row"))
      .def("param_count", &MaskedEmbeddingTable::param_count)
      .def("export_sparse",
           [](const MaskedEmbeddingTable& t, const std::filesystem::path& p, int width) {
             export_sparse(t, p, width);
           },
           py::arg("path"), py::arg("value_width") = 4)
      .def_static("import_sparse", &import_sparse, py::arg("path"));
}
