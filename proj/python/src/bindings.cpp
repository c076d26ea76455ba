// Python bindings for the core operations.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <filesystem>
#include <optional>

#include "crm/evaluator.hpp"
#include "crm/losses.hpp"
#include "crm/proposals.hpp"
#include "crm/run_config.hpp"
#include "crm/synthgen.hpp"
#include "crm/trainer.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace crm;

namespace {

using Pair = std::pair<double, double>;

TimeSpan span(const Pair& p) { return {p.first, p.second}; }

std::vector<VideoRecord> load_dir(const fs::path& dir, CorpusConfig corpus, int num_clips) {
  corpus.num_clips = num_clips;
  const auto table = EmbeddingTable::load(dir / "embeddings.txt");
  return load_corpus(dir / "annotations.json", dir / "features", table, corpus).records;
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["loss"] = m.loss;
  d["bce"] = m.bce;
  d["tmp"] = m.tmp;
  d["smt"] = m.smt;
  d["consistent_pairs"] = m.consistent_pairs;
  return d;
}

}  // namespace

PYBIND11_MODULE(_crm, m) {
  m.doc() = "Cross-sentence relation mining for weakly supervised moment localization";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);

  m.def("iou", [](const Pair& a, const Pair& b) { return iou(span(a), span(b)); },
        py::arg("a"), py::arg("b"), "Temporal IoU of two (start, end) spans.");
  m.def("hull", [](const Pair& a, const Pair& b) {
          const TimeSpan h = hull(span(a), span(b));
          return Pair{h.start, h.end};
        }, py::arg("a"), py::arg("b"));
  m.def("order_relation", [](const Pair& a, const Pair& b) { return order_relation(span(a), span(b)); },
        py::arg("a"), py::arg("b"), "0 when a starts before b, else 1.");
  m.def("generate_proposals",
        [](int num_clips, const std::vector<int>& window_sizes, int stride) {
          std::vector<std::pair<int, int>> out;
          for (const auto& s : generate_proposals(num_clips, window_sizes, stride).segments)
            out.emplace_back(s.start, s.end);
          return out;
        },
        py::arg("num_clips"), py::arg("window_sizes"), py::arg("stride"));

  m.def("bce_loss", &bce_loss, py::arg("p_pos"), py::arg("p_neg_query"), py::arg("p_neg_video"));
  m.def("joint_probability", &joint_probability, py::arg("p1"), py::arg("p2"));
  m.def("gradient_check",
        [](int max_coordinates, std::uint64_t seed) {
          GradCheckConfig cfg;
          cfg.max_coordinates = max_coordinates;
          cfg.seed = seed;
          const auto r = gradient_check(cfg);
          py::dict d;
          d["max_rel_error"] = r.max_rel_error;
          d["coordinates"] = r.coordinates;
          d["offenders"] = r.offenders.size();
          return d;
        },
        py::arg("max_coordinates") = 200, py::arg("seed") = 7);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("parse", &parse_run_config, py::arg("text"))
      .def_static("load", [](const fs::path& p) { return load_run_config(p); }, py::arg("path"))
      .def("to_text", [](const RunConfig& c) { return to_text(c); })
      .def_property("seed", [](const RunConfig& c) { return c.synth.seed; },
                    [](RunConfig& c, std::uint64_t s) { c.synth.seed = s; })
      .def_property("train_seed", [](const RunConfig& c) { return c.train.seed; },
                    [](RunConfig& c, std::uint64_t s) { c.train.seed = s; })
      .def_property("epochs", [](const RunConfig& c) { return c.train.epochs; },
                    [](RunConfig& c, int e) { c.train.epochs = e; })
      .def_property("losses", [](const RunConfig& c) { return to_string(c.train.losses); },
                    [](RunConfig& c, const std::string& s) { c.train.losses = parse_loss_switches(s); });

  m.def("synth",
        [](const RunConfig& config, const fs::path& out_dir) {
          return write_corpus(generate_corpus(config.synth), config.synth, out_dir);
        },
        py::arg("config"), py::arg("out_dir"), "Writes a synthetic corpus; returns its digest.");

  m.def("train",
        [](const RunConfig& config, const fs::path& data_dir, const fs::path& checkpoint) {
          const auto all = load_dir(data_dir, config.corpus, config.train.model.num_clips);
          const auto corpus = select_split(all, Split::kTrain);
          Checkpoint ckpt;
          {
            py::gil_scoped_release release;
            ckpt = train(corpus, config.train);
          }
          save_checkpoint(checkpoint, ckpt);
          py::list rows;
          for (const auto& em : ckpt.metrics) rows.append(metrics_dict(em));
          return rows;
        },
        py::arg("config"), py::arg("data_dir"), py::arg("checkpoint"),
        "Trains on the train split, saves the checkpoint and returns per-epoch metrics.");

  m.def("evaluate",
        [](const fs::path& checkpoint, const fs::path& data_dir, const std::vector<double>& thresholds,
           const std::string& split, const std::optional<RunConfig>& config) {
          const Checkpoint ckpt = load_checkpoint(checkpoint);
          const RunConfig rc = config.value_or(RunConfig{});
          const auto all = load_dir(data_dir, rc.corpus, ckpt.config.model.num_clips);
          const auto corpus = split == "all" ? all : select_split(all, parse_split(split));
          EvalReport report = evaluate(corpus, ckpt, thresholds, rc.eval.tau);
          report.split = split;
          return report.to_json();
        },
        py::arg("checkpoint"), py::arg("data_dir"), py::arg("thresholds") = std::vector<double>{0.3, 0.5, 0.7},
        py::arg("split") = "test", py::arg("config") = std::nullopt,
        "Evaluation report as a JSON string.");
}
