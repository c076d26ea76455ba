#include "crm/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace crm {

void TrainConfig::validate() const {
  if (batch_videos < 2) throw std::invalid_argument("batch_videos must be >= 2");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0, 1)");
  if (max_concat_words < 2) throw std::invalid_argument("max_concat_words must be >= 2");
  if (model.hidden_dim < 1) throw std::invalid_argument("hidden_dim must be >= 1");
  if (model.num_clips < 1) throw std::invalid_argument("num_clips must be >= 1");
}

namespace {

int uniform_index(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return static_cast<int>(dist(rng));
}

const VideoRecord* other_video(std::span<const VideoRecord* const> batch,
                               std::span<const VideoRecord> corpus, const VideoRecord* self,
                               std::mt19937_64& rng) {
  constexpr int kAttempts = 64;
  for (int i = 0; i < kAttempts; ++i) {
    const VideoRecord* cand = batch[static_cast<std::size_t>(uniform_index(rng, batch.size()))];
    if (cand->id != self->id) return cand;
  }
  // Batch holds only copies of `self` (tiny corpus sampled with replacement).
  for (int i = 0; i < kAttempts; ++i) {
    const VideoRecord* cand = &corpus[static_cast<std::size_t>(uniform_index(rng, corpus.size()))];
    if (cand->id != self->id) return cand;
  }
  for (const auto& v : corpus) {
    if (v.id != self->id) return &v;
  }
  throw std::invalid_argument("sample_batch: negatives need at least two distinct videos");
}

NegativeSample draw_negative(std::span<const VideoRecord* const> batch,
                             std::span<const VideoRecord> corpus, const VideoRecord* self,
                             std::mt19937_64& rng) {
  NegativeSample neg;
  neg.video = other_video(batch, corpus, self, rng);
  const VideoRecord* source = other_video(batch, corpus, self, rng);
  neg.query = &source->paragraph[static_cast<std::size_t>(
      uniform_index(rng, source->paragraph.size()))];
  return neg;
}

}  // namespace

std::vector<BatchItem> sample_batch(std::span<const VideoRecord> corpus, int n,
                                    std::mt19937_64& rng) {
  if (corpus.empty()) throw std::invalid_argument("sample_batch: empty corpus");
  if (corpus.size() < 2) throw std::invalid_argument("sample_batch: corpus needs >= 2 videos");
  if (n < 1) throw std::invalid_argument("sample_batch: n must be >= 1");

  std::vector<const VideoRecord*> videos;
  videos.reserve(static_cast<std::size_t>(n));
  if (corpus.size() >= static_cast<std::size_t>(n)) {
    std::vector<std::size_t> idx(corpus.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> dist(static_cast<std::size_t>(i), idx.size() - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[dist(rng)]);
      videos.push_back(&corpus[idx[static_cast<std::size_t>(i)]]);
    }
  } else {
    for (int i = 0; i < n; ++i) videos.push_back(&corpus[static_cast<std::size_t>(uniform_index(rng, corpus.size()))]);
  }

  std::vector<BatchItem> batch;
  batch.reserve(videos.size());
  for (const VideoRecord* v : videos) {
    if (v->paragraph.empty()) throw std::invalid_argument("sample_batch: video " + v->id + " has no sentences");
    BatchItem item;
    item.video = v;
    const auto len = v->paragraph.size();
    if (len >= 2) {
      // Decode a uniform index over the len*(len-1)/2 ordered pairs.
      auto pick = static_cast<std::size_t>(uniform_index(rng, len * (len - 1) / 2));
      std::size_t a = 0;
      while (pick >= len - 1 - a) {
        pick -= len - 1 - a;
        ++a;
      }
      item.first = static_cast<int>(a);
      item.second = static_cast<int>(a + 1 + pick);
    } else {
      item.first = 0;
      item.second = -1;
    }
    item.neg_first = draw_negative(videos, corpus, v, rng);
    if (item.has_pair()) item.neg_second = draw_negative(videos, corpus, v, rng);
    batch.push_back(item);
  }
  return batch;
}

void round_to_float(MmnParams& params) {
  for_each_tensor([](const std::string&, Matrix& m) {
    m = m.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
  }, params);
}

std::string rng_digest(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : ss.str()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Adam {
  MmnParams m, v;
  long step = 0;

  explicit Adam(const MmnParams& params) : m(zeros_like(params)), v(zeros_like(params)) {}

  void update(MmnParams& params, const MmnParams& grads, const TrainConfig& cfg) {
    ++step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for_each_tensor([&sq](const std::string&, const Matrix& g) { sq += g.squaredNorm(); }, grads);
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
    }
    for_each_tensor(
        [&](const std::string&, Matrix& p, const Matrix& g, Matrix& mm, Matrix& vv) {
          const Matrix gs = g * clip_scale;
          mm = b1 * mm + (1.0 - b1) * gs;
          vv = b2 * vv + (1.0 - b2) * gs.cwiseAbs2();
          const Matrix mhat = mm / c1;
          const Matrix vhat = vv / c2;
          p.array() -= cfg.learning_rate * mhat.array() / (vhat.array().sqrt() + cfg.adam_epsilon);
        },
        params, grads, m, v);
    round_to_float(params);
  }
};

std::string describe_batch(std::span<const BatchItem> batch) {
  std::string out;
  for (const auto& item : batch) {
    if (!out.empty()) out += ",";
    out += item.video->id;
  }
  return out;
}

}  // namespace

Checkpoint train(std::span<const VideoRecord> corpus, const TrainConfig& config,
                 const EpochCallback& on_epoch) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");

  std::mt19937_64 rng(config.seed);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.params = init_params(config.model, rng);
  round_to_float(ckpt.params);
  const ProposalGrid grid = generate_proposals(config.model.num_clips, config.model.grid);
  const ObjectiveConfig objective{config.losses, config.tau, config.max_concat_words};

  Adam adam(ckpt.params);
  MmnParams grads;
  const auto n = static_cast<std::size_t>(config.batch_videos);
  const int iterations = static_cast<int>((corpus.size() + n - 1) / n);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch;
    int pair_items = 0, consistent = 0;
    for (int it = 0; it < iterations; ++it) {
      const auto batch = sample_batch(corpus, config.batch_videos, rng);
      const ObjectiveResult r = total_loss(batch, ckpt.params, grid, objective, &grads);
      if (!std::isfinite(r.total)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(it) + " (videos " + describe_batch(batch) + ")");
      }
      if (config.losses.any()) adam.update(ckpt.params, grads, config);
      em.loss += r.total;
      em.bce += r.bce;
      em.tmp += r.tmp;
      em.smt += r.smt;
      pair_items += r.pair_items;
      consistent += r.consistent_best_pairs;
    }
    if (iterations > 0) {
      em.loss /= iterations;
      em.bce /= iterations;
      em.tmp /= iterations;
      em.smt /= iterations;
    }
    em.consistent_pairs = pair_items > 0 ? static_cast<double>(consistent) / pair_items : 0.0;
    ckpt.metrics.push_back(em);
    ckpt.epoch = epoch;
    if (on_epoch) on_epoch(em);
  }
  ckpt.rng_digest = rng_digest(rng);
  return ckpt;
}

std::string metrics_csv(std::span<const EpochMetrics> metrics) {
  std::string out = "epoch,loss,bce,tmp,smt\n";
  char buf[160];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g\n", m.epoch, m.loss, m.bce, m.tmp,
                  m.smt);
    out += buf;
  }
  return out;
}

// ---- checkpoint container ----

namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'C', 'R', 'M', 'C'};
constexpr std::uint8_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == EOF) throw DataError("checkpoint truncated");
    v |= static_cast<std::uint32_t>(c) << (8 * i);
  }
  return v;
}

nlohmann::json grid_to_json(const GridConfig& g) {
  return {{"window_sizes", g.window_sizes}, {"stride", g.stride}};
}

nlohmann::json config_to_json(const TrainConfig& c) {
  const auto& m = c.model;
  return {{"batch_videos", c.batch_videos},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon},
          {"grad_clip", c.grad_clip},
          {"tau", c.tau},
          {"max_concat_words", c.max_concat_words},
          {"seed", c.seed},
          {"losses", {{"bce", c.losses.bce}, {"tmp", c.losses.tmp}, {"smt", c.losses.smt}}},
          {"model",
           {{"video_dim", m.video_dim},
            {"text_dim", m.text_dim},
            {"hidden_dim", m.hidden_dim},
            {"v2v_depth", m.v2v_depth},
            {"q2q_depth", m.q2q_depth},
            {"q2v_depth", m.q2v_depth},
            {"v2q_depth", m.v2q_depth},
            {"num_clips", m.num_clips},
            {"grid", grid_to_json(m.grid)}}}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_videos = j.at("batch_videos");
  c.epochs = j.at("epochs");
  c.learning_rate = j.at("learning_rate");
  c.beta1 = j.at("beta1");
  c.beta2 = j.at("beta2");
  c.adam_epsilon = j.at("adam_epsilon");
  c.grad_clip = j.at("grad_clip");
  c.tau = j.at("tau");
  c.max_concat_words = j.at("max_concat_words");
  c.seed = j.at("seed");
  c.losses = {j.at("losses").at("bce"), j.at("losses").at("tmp"), j.at("losses").at("smt")};
  const auto& m = j.at("model");
  c.model.video_dim = m.at("video_dim");
  c.model.text_dim = m.at("text_dim");
  c.model.hidden_dim = m.at("hidden_dim");
  c.model.v2v_depth = m.at("v2v_depth");
  c.model.q2q_depth = m.at("q2q_depth");
  c.model.q2v_depth = m.at("q2v_depth");
  c.model.v2q_depth = m.at("v2q_depth");
  c.model.num_clips = m.at("num_clips");
  c.model.grid.window_sizes = m.at("grid").at("window_sizes").get<std::vector<int>>();
  c.model.grid.stride = m.at("grid").at("stride");
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["format"] = "crm-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["epoch"] = ckpt.epoch;
  manifest["rng_digest"] = ckpt.rng_digest;
  manifest["config"] = config_to_json(ckpt.config);
  manifest["metric_log"] = metrics_csv(ckpt.metrics);
  nlohmann::json consistency = nlohmann::json::array();
  for (const auto& m : ckpt.metrics) consistency.push_back(m.consistent_pairs);
  manifest["consistent_pairs"] = consistency;
  nlohmann::json names = nlohmann::json::array();
  for_each_tensor([&names](const std::string& name, const Matrix&) { names.push_back(name); },
                  ckpt.params);
  manifest["tensors"] = names;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), 4);
  out.put(static_cast<char>(kCheckpointVersion));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(names.size()));
  for_each_tensor(
      [&out](const std::string& name, const Matrix& m) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          for (Eigen::Index c = 0; c < m.cols(); ++c) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c))));
          }
        }
      },
      ckpt.params);
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kCheckpointMagic) throw DataError(path.string() + ": not a checkpoint");
  const int version = in.get();
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  std::string text(get_u32(in), '\0');
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  if (!in) throw DataError("checkpoint truncated");

  Checkpoint ckpt;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
    ckpt.config = config_from_json(manifest.at("config"));
    ckpt.epoch = manifest.at("epoch");
    ckpt.rng_digest = manifest.at("rng_digest");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad manifest: " + e.what());
  }

  // Rebuild the metric rows from the CSV log.
  std::istringstream log(manifest.at("metric_log").get<std::string>());
  std::string line;
  std::getline(log, line);
  const auto consistency = manifest.value("consistent_pairs", nlohmann::json::array());
  while (std::getline(log, line)) {
    EpochMetrics m;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &m.epoch, &m.loss, &m.bce, &m.tmp,
                    &m.smt) != 5) {
      throw DataError(path.string() + ": bad metric row '" + line + "'");
    }
    if (ckpt.metrics.size() < consistency.size()) {
      m.consistent_pairs = consistency[ckpt.metrics.size()].get<double>();
    }
    ckpt.metrics.push_back(m);
  }

  // Allocate the expected structure, then fill tensors by name.
  std::mt19937_64 scratch(0);
  ckpt.params = zeros_like(init_params(ckpt.config.model, scratch));
  std::map<std::string, Matrix*> slots;
  for_each_tensor([&slots](const std::string& name, Matrix& m) { slots[name] = &m; }, ckpt.params);

  const std::uint32_t count = get_u32(in);
  if (count != slots.size()) throw DataError(path.string() + ": tensor count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_u32(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError(path.string() + ": unexpected tensor " + name);
    Matrix& m = *it->second;
    if (m.rows() != rows || m.cols() != cols) {
      throw DataError(path.string() + ": tensor " + name + " has the wrong shape");
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = std::bit_cast<float>(get_u32(in));
    }
  }
  return ckpt;
}

// ---- gradient check ----

namespace {

std::vector<VideoRecord> tiny_corpus(const GradCheckConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<VideoRecord> corpus;
  const int lengths[] = {3, 2, 1};
  for (int v = 0; v < 3; ++v) {
    VideoRecord rec;
    rec.id = "tiny" + std::to_string(v);
    rec.duration = cfg.num_clips;
    rec.clips.clips = Matrix::NullaryExpr(cfg.num_clips, cfg.feature_dim, [&] { return normal(rng); });
    rec.clips.valid_count = cfg.num_clips - 2 * v;
    rec.clips.clips.bottomRows(cfg.num_clips - rec.clips.valid_count).setZero();
    for (int s = 0; s < lengths[v]; ++s) {
      Sentence sent;
      sent.position = s;
      sent.annotation_index = s;
      const int words = 2 + s;
      sent.tokens.embeddings = Matrix::NullaryExpr(words, cfg.feature_dim, [&] { return normal(rng); });
      sent.tokens.tokens.assign(static_cast<std::size_t>(words), "w");
      rec.paragraph.push_back(std::move(sent));
    }
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

}  // namespace

GradCheckReport gradient_check(const GradCheckConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const std::vector<VideoRecord> corpus = tiny_corpus(cfg, rng);

  ModelConfig model;
  model.video_dim = cfg.feature_dim;
  model.text_dim = cfg.feature_dim;
  model.hidden_dim = cfg.hidden_dim;
  model.num_clips = cfg.num_clips;
  model.grid = cfg.grid;
  MmnParams params = init_params(model, rng);
  // Non-zero biases so their gradients are exercised at a generic point.
  std::normal_distribution<double> normal(0.0, 0.1);
  for_each_tensor([&](const std::string& name, Matrix& m) {
    if (name.ends_with(".bias")) m = Matrix::NullaryExpr(m.rows(), m.cols(), [&] { return normal(rng); });
  }, params);

  const ProposalGrid grid = generate_proposals(cfg.num_clips, cfg.grid);
  const auto batch = sample_batch(corpus, static_cast<int>(corpus.size()), rng);
  const ObjectiveConfig objective{cfg.losses, 0.5, 40};

  MmnParams analytic;
  total_loss(batch, params, grid, objective, &analytic);

  struct Coord {
    std::string name;
    Matrix* value;
    const Matrix* grad;
    Eigen::Index index;
  };
  std::vector<Coord> coords;
  for_each_tensor(
      [&coords](const std::string& name, Matrix& p, const Matrix& g) {
        for (Eigen::Index i = 0; i < p.size(); ++i) coords.push_back({name, &p, &g, i});
      },
      params, analytic);
  if (cfg.max_coordinates > 0 && coords.size() > static_cast<std::size_t>(cfg.max_coordinates)) {
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(cfg.max_coordinates));
  }

  GradCheckReport report;
  report.coordinates = coords.size();
  for (const auto& c : coords) {
    double& x = c.value->data()[c.index];
    const double saved = x;
    x = saved + cfg.step;
    const double up = total_loss(batch, params, grid, objective).total;
    x = saved - cfg.step;
    const double down = total_loss(batch, params, grid, objective).total;
    x = saved;
    const double numeric = (up - down) / (2.0 * cfg.step);
    const double a = c.grad->data()[c.index];
    const double denom = std::max({std::abs(a), std::abs(numeric), cfg.abs_floor});
    const double rel = std::abs(a - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel > cfg.tolerance) {
      const Eigen::Index rows = c.value->rows();
      report.offenders.push_back({c.name, c.index % rows, c.index / rows, a, numeric, rel});
    }
  }
  return report;
}

}  // namespace crm
