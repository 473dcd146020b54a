#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "reflectforge/emitter.hpp"
#include "reflectforge/error.hpp"
#include "reflectforge/eval.hpp"
#include "reflectforge/pinpoint.hpp"
#include "reflectforge/pipeline.hpp"
#include "reflectforge/trajectory.hpp"

namespace py = pybind11;
namespace rf = reflectforge;
namespace pl = reflectforge::pipeline;

namespace {

// nlohmann -> Python through the json module; reports are small.
py::object to_py(const rf::io::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

rf::AblationMode mode_arg(const std::string& s) {
  auto m = rf::parse_ablation_mode(s);
  if (!m) throw rf::Error(rf::ErrorCode::InvalidArgument, "unknown mode: " + s);
  return *m;
}

rf::Grammar grammar_arg(const std::string& s) {
  if (s == "full") return rf::Grammar::full;
  if (s == "partial") return rf::Grammar::partial;
  if (s == "plain") return rf::Grammar::plain;
  throw rf::Error(rf::ErrorCode::InvalidArgument, "unknown grammar: " + s);
}

py::dict record_dict(const rf::QARecord& r) { return to_py(rf::to_json(r)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "ReflectForge core: trajectory format, dataset tools, evaluation and the pipeline";

  static py::exception<rf::Error> error_type(m, "ReflectForgeError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const rf::Error& e) {
      py::object cls = error_type;
      py::object exc = cls(e.what());
      exc.attr("code") = std::string(rf::to_string(e.code()));
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<rf::Step>(m, "Step")
      .def(py::init([](std::size_t index, std::string text, const std::string& kind) {
             rf::Step s{index, std::move(text), rf::StepKind::original};
             if (kind == "erroneous") s.kind = rf::StepKind::erroneous;
             else if (kind == "corrected") s.kind = rf::StepKind::corrected;
             else if (kind != "original") throw rf::Error(rf::ErrorCode::InvalidArgument, "kind: " + kind);
             return s;
           }),
           py::arg("index"), py::arg("text"), py::arg("kind") = "original")
      .def_readwrite("index", &rf::Step::index)
      .def_readwrite("text", &rf::Step::text)
      .def_property_readonly("kind", [](const rf::Step& s) { return std::string(rf::to_string(s.kind)); })
      .def("__repr__", [](const rf::Step& s) {
        return "Step(" + std::to_string(s.index) + ", " + std::string(rf::to_string(s.kind)) + ")";
      });

  py::class_<rf::ReflectionPair>(m, "ReflectionPair")
      .def(py::init([](std::string q, std::string a, std::size_t idx) {
             return rf::ReflectionPair{std::move(q), std::move(a), idx};
           }),
           py::arg("question"), py::arg("answer"), py::arg("pinpoint_index") = 0)
      .def_readwrite("question", &rf::ReflectionPair::question)
      .def_readwrite("answer", &rf::ReflectionPair::answer)
      .def_readwrite("pinpoint_index", &rf::ReflectionPair::pinpoint_index);

  py::class_<rf::ReflectiveTrajectory>(m, "ReflectiveTrajectory")
      .def(py::init<>())
      .def_readwrite("question_id", &rf::ReflectiveTrajectory::question_id)
      .def_readwrite("segments", &rf::ReflectiveTrajectory::segments)
      .def_readwrite("answer", &rf::ReflectiveTrajectory::answer)
      .def_property_readonly("reflection_count", &rf::ReflectiveTrajectory::reflection_count)
      .def("__eq__", [](const rf::ReflectiveTrajectory& a, const rf::ReflectiveTrajectory& b) {
        return rf::structurally_equal(a, b);
      });

  m.def("parse_training_text",
        [](const std::string& text, const std::string& grammar) {
          return rf::parse_training_text(text, {}, grammar_arg(grammar));
        },
        py::arg("text"), py::arg("grammar") = "full");
  m.def("serialize_training_text",
        [](const rf::ReflectiveTrajectory& t) { return rf::serialize_training_text(t); });
  m.def("validate",
        [](const rf::ReflectiveTrajectory& t, std::optional<std::string> question) {
          rf::ValidateOptions o;
          o.question = std::move(question);
          py::list out;
          for (const auto& v : rf::validate(t, o)) {
            py::dict d;
            d["segment"] = v.segment_index;
            d["kind"] = std::string(rf::to_string(v.kind));
            d["message"] = v.message;
            out.append(d);
          }
          return out;
        },
        py::arg("trajectory"), py::arg("question") = py::none());
  m.def("project",
        [](const std::string& text, const std::string& mode) {
          auto t = rf::parse_training_text(text);
          return rf::serialize_training_text(rf::project_ablation(t, mode_arg(mode)));
        },
        py::arg("text"), py::arg("mode"),
        "Full-format training text rewritten for an ablation mode.");
  m.def("count_think_blocks",
        [](const std::string& text) { return rf::count_think_blocks(text); });

  m.def("extract_decision", &rf::extract_decision, py::arg("text"), py::arg("option_letters"));
  m.def("extract_choice",
        [](const std::string& text, const std::map<std::string, std::string>& options,
           const std::string& policy) {
          auto p = rf::parse_choice_policy(policy);
          if (!p) throw rf::Error(rf::ErrorCode::InvalidArgument, "unknown policy: " + policy);
          return rf::extract_choice(text, options, *p);
        },
        py::arg("text"), py::arg("options"), py::arg("policy") = "letters");
  m.def("reflection_statistics",
        [](const std::vector<std::string>& responses) {
          return to_py(rf::to_json(rf::reflection_statistics(responses)));
        });

  m.def("dataset_stats",
        [](const std::filesystem::path& file) { return to_py(rf::to_json(rf::compute_stats(file))); });
  m.def("token_manifest", []() { return to_py(rf::token_manifest(rf::SpecialTokens{})); });

  m.def("load_consultations", [](const std::filesystem::path& path) {
    py::list out;
    for (const auto& r : rf::load_consultations(path)) out.append(record_dict(r));
    return out;
  });
  m.def("load_multichoice",
        [](const std::filesystem::path& path, int cop_base) {
          py::list out;
          for (const auto& r : rf::load_multichoice(path, {cop_base})) out.append(record_dict(r));
          return out;
        },
        py::arg("path"), py::arg("cop_base") = 0);

  m.def("resolved_config",
        [](const std::filesystem::path& path) { return to_py(pl::load_config(path).echo()); },
        "The config as the pipeline sees it, without secrets.");
  m.def("run_pipeline",
        [](const std::filesystem::path& config, std::optional<std::vector<std::string>> stages,
           bool resume, std::optional<std::string> mode, std::optional<std::uint64_t> seed,
           std::optional<std::filesystem::path> workdir) {
          auto c = pl::load_config(config);
          if (seed) c.seed = *seed;
          if (workdir) c.workdir = *workdir;
          std::vector<pl::Stage> list;
          if (stages) {
            for (const auto& s : *stages) {
              auto st = pl::parse_stage(s);
              if (!st) throw rf::Error(rf::ErrorCode::ConfigError, "unknown stage: " + s);
              list.push_back(*st);
            }
          } else {
            list = pl::default_stages(c);
          }
          pl::RunOptions o;
          o.resume = resume;
          if (mode) o.mode = mode_arg(*mode);
          std::vector<pl::StageOutcome> outcomes;
          {
            py::gil_scoped_release release;
            outcomes = pl::run(c, list, o);
          }
          py::list out;
          for (const auto& oc : outcomes) {
            py::dict d;
            d["stage"] = std::string(pl::to_string(oc.stage));
            d["skipped"] = oc.skipped;
            d["report"] = to_py(oc.report);
            out.append(d);
          }
          return out;
        },
        py::arg("config"), py::arg("stages") = py::none(), py::arg("resume") = false,
        py::arg("mode") = py::none(), py::arg("seed") = py::none(), py::arg("workdir") = py::none());
}
