// crm: synthesize corpora, train, evaluate and audit consistency.
//
// Exit codes:
//   0  success
//   1  runtime failure (I/O, malformed data)
//   2  usage or configuration error, missing data directory
//   3  training aborted on a non-finite loss
//   4  checkpoint does not match the data or configuration
//   5  predictions reference unknown videos or sentences

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "crm/evaluator.hpp"
#include "crm/run_config.hpp"
#include "crm/synthgen.hpp"
#include "crm/trainer.hpp"

namespace fs = std::filesystem;
using namespace crm;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kNonFinite = 3, kMismatch = 4, kUnmatched = 5 };

struct Mismatch : std::runtime_error {
  Mismatch(std::string f, const std::string& msg) : std::runtime_error(msg), field(std::move(f)) {}
  std::string field;
};

RunConfig load_config(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

struct DataDir {
  fs::path annotations, features, embeddings;
};

DataDir locate_data(const std::string& dir) {
  if (dir.empty() || !fs::is_directory(dir)) {
    throw ConfigError("data", "data directory '" + dir + "' does not exist");
  }
  DataDir d{fs::path(dir) / "annotations.json", fs::path(dir) / "features",
            fs::path(dir) / "embeddings.txt"};
  for (const auto* p : {&d.annotations, &d.embeddings}) {
    if (!fs::exists(*p)) throw ConfigError("data", "missing " + p->string());
  }
  return d;
}

std::vector<VideoRecord> load_data(const DataDir& d, const CorpusConfig& corpus, int text_dim) {
  const EmbeddingTable table = EmbeddingTable::load(d.embeddings);
  if (text_dim > 0 && table.dim() != text_dim) {
    throw Mismatch("text_dim", "embedding dimension " + std::to_string(table.dim()) +
                                   " does not match text_dim " + std::to_string(text_dim));
  }
  auto loaded = load_corpus(d.annotations, d.features, table, corpus);
  if (!loaded.skipped.empty()) {
    std::cerr << "skipped " << loaded.skipped.size() << " malformed record(s)\n";
  }
  return std::move(loaded.records);
}

void check_video_dim(const std::vector<VideoRecord>& corpus, int video_dim) {
  for (const auto& v : corpus) {
    if (v.clips.clips.cols() != video_dim) {
      throw Mismatch("video_dim", "video " + v.id + " has feature dimension " +
                                      std::to_string(v.clips.clips.cols()) + ", expected " +
                                      std::to_string(video_dim));
    }
  }
}

void check_model(const ModelConfig& have, const ModelConfig& want) {
  auto field = [](bool same, const char* name) {
    if (!same) throw Mismatch(name, std::string("checkpoint and config disagree on ") + name);
  };
  field(have.video_dim == want.video_dim, "video_dim");
  field(have.text_dim == want.text_dim, "text_dim");
  field(have.hidden_dim == want.hidden_dim, "hidden_dim");
  field(have.num_clips == want.num_clips, "num_clips");
  field(have.grid.window_sizes == want.grid.window_sizes, "window_sizes");
  field(have.grid.stride == want.grid.stride, "stride");
  field(have.v2v_depth == want.v2v_depth, "v2v_depth");
  field(have.q2q_depth == want.q2q_depth, "q2q_depth");
  field(have.q2v_depth == want.q2v_depth, "q2v_depth");
  field(have.v2q_depth == want.v2q_depth, "v2q_depth");
}

std::optional<Split> split_option(const std::string& name) {
  if (name == "all") return std::nullopt;
  return parse_split(name);
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              std::optional<long long> seed) {
  RunConfig config = load_config(config_path);
  if (seed) config.synth.seed = static_cast<std::uint64_t>(*seed);
  const SynthCorpus corpus = generate_corpus(config.synth);
  const std::string digest = write_corpus(corpus, config.synth, out_dir);
  std::cout << "wrote " << corpus.videos.size() << " videos to " << out_dir << " (digest "
            << digest << ")\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_path, const std::string& losses,
              std::optional<long long> seed, std::string metrics_path) {
  RunConfig config = load_config(config_path);
  if (!losses.empty()) {
    try {
      config.train.losses = parse_loss_switches(losses);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("loss", std::string("--loss: ") + e.what());
    }
  }
  if (seed) config.train.seed = static_cast<std::uint64_t>(*seed);
  const DataDir d = locate_data(data_dir);
  const auto all = load_data(d, config.corpus, config.train.model.text_dim);
  check_video_dim(all, config.train.model.video_dim);
  const auto corpus = select_split(all, Split::kTrain);
  if (corpus.empty()) throw ConfigError("data", "no training records in " + data_dir);

  const Checkpoint ckpt = train(corpus, config.train, [](const EpochMetrics& m) {
    std::printf("epoch %3d  loss %.5f  bce %.5f  tmp %.5f  smt %.5f\n", m.epoch, m.loss, m.bce,
                m.tmp, m.smt);
    std::fflush(stdout);
  });
  save_checkpoint(out_path, ckpt);
  if (metrics_path.empty()) metrics_path = out_path + ".metrics.csv";
  std::ofstream csv(metrics_path);
  if (!csv) throw DataError("cannot write " + metrics_path);
  csv << metrics_csv(ckpt.metrics);
  std::cout << "checkpoint: " << out_path << "\nmetrics: " << metrics_path << '\n';
  return kOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& config_path, const std::string& thresholds,
             const std::string& split_name, std::string json_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  RunConfig config = load_config(config_path);
  if (!config_path.empty()) check_model(ckpt.config.model, config.train.model);
  std::vector<double> ms = config.eval.thresholds;
  if (!thresholds.empty()) {
    try {
      ms = parse_number_list(thresholds);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("thresholds", std::string("--thresholds: ") + e.what());
    }
  }
  std::optional<Split> split = config.eval.split;
  if (!split_name.empty()) {
    try {
      split = split_option(split_name);
    } catch (const std::exception& e) {
      throw ConfigError("split", std::string("--split: ") + e.what());
    }
  }

  const DataDir d = locate_data(data_dir);
  CorpusConfig corpus_config = config.corpus;
  corpus_config.num_clips = ckpt.config.model.num_clips;
  const auto all = load_data(d, corpus_config, ckpt.config.model.text_dim);
  check_video_dim(all, ckpt.config.model.video_dim);
  const auto corpus = split ? select_split(all, *split) : all;

  const ProposalGrid grid = generate_proposals(ckpt.config.model.num_clips, ckpt.config.model.grid);
  const PredictionSet predictions =
      predict(corpus, ckpt.params, grid, ckpt.config.max_concat_words, config.eval.with_pairs);
  EvalReport report = make_report(corpus, predictions, ms, config.eval.tau);
  report.split = split ? std::string(to_string(*split)) : "all";
  std::cout << report.to_table();
  if (json_path.empty()) json_path = checkpoint_path + ".eval.json";
  std::ofstream out(json_path);
  if (!out) throw DataError("cannot write " + json_path);
  out << report.to_json() << '\n';
  std::cout << "report: " << json_path << '\n';
  return kOk;
}

int cmd_analyze(const std::string& predictions_path, const std::string& annotations_path,
                double tau) {
  std::ifstream in(predictions_path);
  if (!in) throw ConfigError("predictions", "cannot open " + predictions_path);
  const auto loaded = load_annotations(annotations_path);
  const auto file = read_predictions(in, loaded.records);
  if (!file.unmatched.empty()) {
    std::cerr << file.unmatched.size() << " unmatched prediction(s):\n";
    for (const auto& u : file.unmatched) std::cerr << "  " << u << '\n';
    return kUnmatched;
  }
  std::printf("temporal_consistency     %.4f\n",
              temporal_consistency(loaded.records, file.predictions));
  std::printf("semantic_consistency     %.4f\n",
              semantic_consistency(loaded.records, file.predictions, tau));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-sentence relation mining for weakly supervised moment localization"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, out_path, losses, metrics_path, checkpoint_path;
  std::string thresholds, split_name, json_path, predictions_path, annotations_path;
  long long seed_value = 0;
  double tau = 0.5;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("-c,--config", config_path, "Run configuration file");
  synth->add_option("-o,--out", out_dir, "Output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed_value, "Override data.seed");

  auto* tr = app.add_subcommand("train", "Train a model on the train split");
  tr->add_option("-c,--config", config_path, "Run configuration file");
  tr->add_option("-d,--data", data_dir, "Corpus directory")->required();
  tr->add_option("-o,--out", out_path, "Checkpoint path")->required();
  tr->add_option("--loss", losses, "Comma-separated subset of bce,tmp,smt");
  auto* train_seed = tr->add_option("--seed", seed_value, "Override train.seed");
  tr->add_option("--metrics", metrics_path, "Metric CSV path (default <out>.metrics.csv)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("-k,--checkpoint", checkpoint_path, "Checkpoint path")->required();
  ev->add_option("-d,--data", data_dir, "Corpus directory")->required();
  ev->add_option("-c,--config", config_path, "Run configuration file");
  ev->add_option("--thresholds", thresholds, "Comma-separated IoU thresholds");
  ev->add_option("--split", split_name, "train, val, test or all");
  ev->add_option("--json", json_path, "Report path (default <checkpoint>.eval.json)");

  auto* an = app.add_subcommand("analyze", "Consistency of externally produced predictions");
  an->add_option("-p,--predictions", predictions_path, "Prediction TSV")->required();
  an->add_option("-a,--annotations", annotations_path, "Annotation JSON")->required();
  an->add_option("--tau", tau, "IoU threshold for semantic consistency");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  auto seed_of = [&](CLI::Option* opt) {
    return opt->count() ? std::optional<long long>(seed_value) : std::nullopt;
  };
  try {
    if (*synth) return cmd_synth(config_path, out_dir, seed_of(synth_seed));
    if (*tr) return cmd_train(config_path, data_dir, out_path, losses, seed_of(train_seed), metrics_path);
    if (*ev) return cmd_eval(checkpoint_path, data_dir, config_path, thresholds, split_name, json_path);
    if (*an) return cmd_analyze(predictions_path, annotations_path, tau);
  } catch (const ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << '\n';
    return kUsage;
  } catch (const Mismatch& e) {
    std::cerr << "mismatch [" << e.field << "]: " << e.what() << '\n';
    return kMismatch;
  } catch (const TrainingError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kNonFinite;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
