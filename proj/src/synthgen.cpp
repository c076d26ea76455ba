#include "crm/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace crm {

void SynthConfig::validate() const {
  if (num_videos < 2) throw std::invalid_argument("synth: num_videos must be >= 2");
  if (num_clips < 2) throw std::invalid_argument("synth: num_clips must be >= 2");
  if (video_dim < 1 || text_dim < 1) throw std::invalid_argument("synth: dims must be positive");
  if (min_events < 1 || max_events < min_events) {
    throw std::invalid_argument("synth: bad events_per_video range");
  }
  if (max_events < 2) throw std::invalid_argument("synth: max_events must be >= 2");
  if (num_event_types < max_events) {
    throw std::invalid_argument("synth: num_event_types must be >= max_events");
  }
  if (ambiguity_rate < 0.0 || ambiguity_rate > 1.0) {
    throw std::invalid_argument("synth: ambiguity_rate must lie in [0, 1]");
  }
  if (noise_std < 0.0) throw std::invalid_argument("synth: noise_std must be >= 0");
  if (words_per_sentence < 1 || words_per_type < 1 || confuser_pool < 1) {
    throw std::invalid_argument("synth: vocabulary sizes must be positive");
  }
  if (min_event_length < 1 || max_event_length < min_event_length) {
    throw std::invalid_argument("synth: bad event length range");
  }
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("synth: test_fraction must lie in [0, 1)");
  }
}

namespace {

double to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double std = 1.0) {
  std::normal_distribution<double> normal(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

// Orthogonalizes as many rows as the dimension allows, keeping each row's
// norm at sqrt(dim) so prototypes are equally salient.
Matrix spread_prototypes(Matrix rows) {
  const auto dim = rows.cols();
  const double target = std::sqrt(static_cast<double>(dim));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if (i < dim) {
      for (Eigen::Index j = 0; j < i; ++j) {
        rows.row(i) -= rows.row(i).dot(rows.row(j)) / rows.row(j).squaredNorm() * rows.row(j);
      }
    }
    rows.row(i) *= target / rows.row(i).norm();
  }
  return rows;
}

std::string type_word(int type, int w) {
  return "act" + std::to_string(type) + "w" + std::to_string(w);
}

std::string actor_word(int actor) { return "actor" + std::to_string(actor); }

// Disjoint, ordered event intervals in clip units.
std::vector<Segment> place_events(int count, const SynthConfig& cfg, std::mt19937_64& rng) {
  constexpr int kAttempts = 200;
  std::uniform_int_distribution<int> len_dist(cfg.min_event_length, cfg.max_event_length);
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::vector<int> lengths(static_cast<std::size_t>(count));
    int used = 0;
    for (auto& l : lengths) {
      l = len_dist(rng);
      used += l;
    }
    const int slack = cfg.num_clips - used - (count - 1);  // at least one gap clip
    if (slack < 0) continue;
    // Distribute slack over count+1 gaps by sorted uniform cut points.
    std::uniform_int_distribution<int> cut(0, slack);
    std::vector<int> cuts(static_cast<std::size_t>(count));
    for (auto& c : cuts) c = cut(rng);
    std::sort(cuts.begin(), cuts.end());
    std::vector<Segment> out;
    int cursor = 0, prev_cut = 0;
    for (int i = 0; i < count; ++i) {
      cursor += cuts[static_cast<std::size_t>(i)] - prev_cut + (i > 0 ? 1 : 0);
      prev_cut = cuts[static_cast<std::size_t>(i)];
      out.push_back({cursor, cursor + lengths[static_cast<std::size_t>(i)]});
      cursor = out.back().end;
    }
    return out;
  }
  throw std::runtime_error("synth: events do not fit into the video");
}

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  SynthCorpus out;
  out.table = EmbeddingTable(cfg.text_dim);

  const int k = cfg.num_event_types;
  Matrix visual = spread_prototypes(gaussian(k + cfg.confuser_pool, cfg.video_dim, rng));
  out.type_prototypes = visual.topRows(k).unaryExpr(&to_float);
  out.actor_signatures = visual.bottomRows(cfg.confuser_pool).unaryExpr(&to_float);
  const Matrix text_protos = spread_prototypes(gaussian(k + cfg.confuser_pool, cfg.text_dim, rng));

  for (int t = 0; t < k; ++t) {
    for (int w = 0; w < cfg.words_per_type; ++w) {
      Eigen::VectorXd vec =
          text_protos.row(t).transpose() + gaussian(cfg.text_dim, 1, rng, cfg.word_noise_std);
      out.table.add(type_word(t, w), vec.unaryExpr(&to_float));
      out.grounding[type_word(t, w)] = out.type_prototypes.row(t).transpose();
    }
  }
  for (int a = 0; a < cfg.confuser_pool; ++a) {
    out.table.add(actor_word(a), text_protos.row(k + a).transpose().unaryExpr(&to_float));
    out.grounding[actor_word(a)] = out.actor_signatures.row(a).transpose();
  }

  std::uniform_int_distribution<int> event_count(cfg.min_events, cfg.max_events);
  std::uniform_int_distribution<int> actor_dist(0, cfg.confuser_pool - 1);
  std::uniform_int_distribution<int> word_dist(0, cfg.words_per_type - 1);
  std::bernoulli_distribution ambiguous(cfg.ambiguity_rate);
  std::normal_distribution<double> noise(0.0, 1.0);
  const int num_test = static_cast<int>(std::lround(cfg.test_fraction * cfg.num_videos));

  for (int v = 0; v < cfg.num_videos; ++v) {
    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "synth%04d", v);
    rec.id = id;
    rec.duration = cfg.num_clips;
    rec.split = v >= cfg.num_videos - num_test ? Split::kTest : Split::kTrain;

    const int actor = actor_dist(rng);
    const auto events = place_events(event_count(rng), cfg, rng);
    // Distinct types within a video: content alone identifies each event.
    std::vector<int> types(static_cast<std::size_t>(k));
    for (int t = 0; t < k; ++t) types[static_cast<std::size_t>(t)] = t;
    for (std::size_t i = 0; i < events.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, types.size() - 1);
      std::swap(types[i], types[pick(rng)]);
    }
    Matrix clips(cfg.num_clips, cfg.video_dim);
    for (Eigen::Index r = 0; r < clips.rows(); ++r) {
      for (Eigen::Index c = 0; c < clips.cols(); ++c) clips(r, c) = cfg.noise_std * noise(rng);
    }

    for (std::size_t e = 0; e < events.size(); ++e) {
      const int type = types[e];
      const Segment seg = events[e];
      for (int r = seg.start; r < seg.end; ++r) {
        clips.row(r) += out.type_prototypes.row(type) + out.actor_signatures.row(actor);
      }
      std::string text;
      for (int w = 0; w < cfg.words_per_sentence; ++w) {
        if (!text.empty()) text += ' ';
        text += ambiguous(rng) ? actor_word(actor) : type_word(type, word_dist(rng));
      }
      Sentence s;
      s.text = text;
      s.tokens = tokenize(text, out.table, cfg.words_per_sentence);
      s.position = static_cast<int>(e);
      s.annotation_index = static_cast<int>(e);
      s.set_ground_truth(TimeSpan{static_cast<double>(seg.start), static_cast<double>(seg.end)});
      rec.paragraph.push_back(std::move(s));
    }
    rec.clips.clips = clips.unaryExpr(&to_float);
    rec.clips.valid_count = cfg.num_clips;
    out.videos.push_back(std::move(rec));
  }
  return out;
}

namespace {

std::string fnv_hex(const std::string& data, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string write_corpus(const SynthCorpus& corpus, const SynthConfig& cfg,
                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "features", ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  write_annotations(out_dir / "annotations.json", corpus.videos);
  corpus.table.save(out_dir / "embeddings.txt");
  std::string digest_input = slurp(out_dir / "annotations.json") + slurp(out_dir / "embeddings.txt");
  for (const auto& v : corpus.videos) {
    const fs::path p = feature_path(out_dir / "features", v.id);
    write_features(p, v.clips.clips.topRows(v.clips.valid_count));
    digest_input += slurp(p);
  }

  nlohmann::json manifest;
  manifest["generator"] = "crm-synth";
  manifest["seed"] = cfg.seed;
  manifest["num_videos"] = cfg.num_videos;
  manifest["num_clips"] = cfg.num_clips;
  manifest["video_dim"] = cfg.video_dim;
  manifest["text_dim"] = cfg.text_dim;
  manifest["pool_span"] = 1;
  manifest["max_words"] = cfg.words_per_sentence;
  manifest["ambiguity_rate"] = cfg.ambiguity_rate;
  manifest["noise_std"] = cfg.noise_std;
  manifest["num_event_types"] = cfg.num_event_types;
  manifest["events_per_video"] = {cfg.min_events, cfg.max_events};
  manifest["digest"] = fnv_hex(digest_input);
  std::ofstream out(out_dir / "manifest.json");
  if (!out) throw DataError("cannot write manifest in " + out_dir.string());
  out << manifest.dump(2) << '\n';
  return manifest["digest"].get<std::string>();
}

std::map<double, double> chance_baseline(std::span<const VideoRecord> corpus,
                                         const ProposalGrid& grid,
                                         std::span<const double> thresholds, int trials,
                                         std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("chance_baseline: trials must be >= 1");
  if (grid.size() == 0) throw std::invalid_argument("chance_baseline: empty grid");
  audit::GroundTruthAccess access;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  std::map<double, double> hits;
  for (double m : thresholds) hits[m] = 0.0;
  std::size_t queries = 0;
  for (int t = 0; t < trials; ++t) {
    for (const auto& video : corpus) {
      for (const auto& s : video.paragraph) {
        const Segment seg = grid[pick(rng)];
        const TimeSpan pred =
            clips_to_seconds(seg, video.duration, grid.num_clips, video.clips.valid_count).span;
        const double value = iou(pred, s.ground_truth());
        for (double m : thresholds) {
          if (value > m) hits[m] += 1.0;
        }
        ++queries;
      }
    }
  }
  for (auto& [m, h] : hits) h = queries == 0 ? 0.0 : h / static_cast<double>(queries);
  return hits;
}

}  // namespace crm
