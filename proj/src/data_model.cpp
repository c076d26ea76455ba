#include "crm/data_model.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace crm {

namespace audit {
namespace {
std::atomic<std::size_t> g_unauthorized{0};
thread_local int t_access_depth = 0;
}  // namespace

std::size_t unauthorized_reads() { return g_unauthorized.load(); }
void reset() { g_unauthorized.store(0); }
GroundTruthAccess::GroundTruthAccess() { ++t_access_depth; }
GroundTruthAccess::~GroundTruthAccess() { --t_access_depth; }

}  // namespace audit

const TimeSpan& Sentence::ground_truth() const {
  if (audit::t_access_depth == 0) audit::g_unauthorized.fetch_add(1);
  if (!ground_truth_) throw DataError("sentence has no ground-truth segment");
  return *ground_truth_;
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + std::string(name) + "'");
}

void EmbeddingTable::add(const std::string& word, const Eigen::VectorXd& vec) {
  if (vec.size() != dim_) throw DataError("embedding for '" + word + "' has wrong dimension");
  if (!vec.allFinite()) throw DataError("embedding for '" + word + "' is not finite");
  auto [it, inserted] = vectors_.insert_or_assign(word, vec);
  if (inserted) order_.push_back(word);
}

const Eigen::VectorXd* EmbeddingTable::find(const std::string& word) const {
  auto it = vectors_.find(word);
  return it == vectors_.end() ? nullptr : &it->second;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding table " + path.string());
  std::string line;
  std::optional<EmbeddingTable> table;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string word;
    if (!(ss >> word)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number");
    }
    if (!table) table.emplace(static_cast<int>(values.size()));
    table->add(word, Eigen::Map<Eigen::VectorXd>(values.data(),
                                                 static_cast<Eigen::Index>(values.size())));
  }
  if (!table) throw DataError("embedding table " + path.string() + " is empty");
  return std::move(*table);
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write embedding table " + path.string());
  out.precision(17);
  for (const auto& word : order_) {
    out << word;
    for (double v : vectors_.at(word)) out << ' ' << v;
    out << '\n';
  }
}

ClipSequence build_clips(const FrameFeatures& frames, int num_clips, int pool_span) {
  if (num_clips < 1) throw std::invalid_argument("build_clips: num_clips must be >= 1");
  if (pool_span < 1) throw std::invalid_argument("build_clips: pool_span must be >= 1");
  const auto num_frames = static_cast<std::int64_t>(frames.frames.rows());
  if (num_frames == 0 || frames.frames.cols() == 0) {
    throw DataError("build_clips: empty frame matrix");
  }
  ClipSequence out;
  out.clips = Matrix::Zero(num_clips, frames.frames.cols());
  // Long videos are spread evenly over the grid; short ones keep one frame
  // step per clip and leave the tail zero-padded.
  const std::int64_t extent = std::max<std::int64_t>(num_frames, num_clips);
  for (int i = 0; i < num_clips; ++i) {
    // round-half-up of i * extent / L_c in integer arithmetic
    const std::int64_t anchor = (2 * i * extent + num_clips) / (2 * num_clips);
    const std::int64_t stop = std::min<std::int64_t>(anchor + pool_span, num_frames);
    if (anchor >= num_frames) continue;
    out.clips.row(i) = frames.frames.middleRows(anchor, stop - anchor).colwise().maxCoeff();
    out.valid_count = i + 1;
  }
  return out;
}

TokenSequence tokenize(std::string_view text, const EmbeddingTable& table, int max_len) {
  if (text.empty()) throw DataError("tokenize: empty sentence");
  TokenSequence seq;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      seq.tokens.push_back(current);
      current.clear();
    }
  };
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || uc >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
  }
  flush();
  if (seq.tokens.empty()) throw DataError("tokenize: sentence has no tokens");
  if (max_len > 0 && static_cast<int>(seq.tokens.size()) > max_len) seq.tokens.resize(max_len);

  seq.embeddings = Matrix::Zero(static_cast<Eigen::Index>(seq.tokens.size()), table.dim());
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (const auto* vec = table.find(seq.tokens[i])) {
      seq.embeddings.row(static_cast<Eigen::Index>(i)) = vec->transpose();
    }
  }
  return seq;
}

VideoRecord restore_paragraph_order(VideoRecord record) {
  audit::GroundTruthAccess access;
  for (const auto& s : record.paragraph) {
    if (!s.has_ground_truth()) {
      throw DataError("video " + record.id + ": sentence " +
                      std::to_string(s.annotation_index) + " has no ground truth");
    }
  }
  std::stable_sort(record.paragraph.begin(), record.paragraph.end(),
                   [](const Sentence& a, const Sentence& b) {
                     const auto& ga = a.ground_truth();
                     const auto& gb = b.ground_truth();
                     if (ga.start != gb.start) return ga.start < gb.start;
                     if (ga.end != gb.end) return ga.end < gb.end;
                     return a.annotation_index < b.annotation_index;
                   });
  for (std::size_t i = 0; i < record.paragraph.size(); ++i) {
    record.paragraph[i].position = static_cast<int>(i);
  }
  return record;
}

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'C', 'R', 'M', 'F'};
constexpr std::uint8_t kFeatureVersion = 1;

std::uint32_t read_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b = {
      static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
      static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

}  // namespace

FrameFeatures read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing feature file " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kFeatureMagic) throw DataError(path.string() + ": bad magic");
  const int version = in.get();
  if (version != kFeatureVersion) {
    throw DataError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  if (!in) throw DataError(path.string() + ": truncated header");
  FrameFeatures out;
  out.frames.resize(rows, cols);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
    throw DataError(path.string() + ": truncated data");
  }
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      const std::size_t off = (static_cast<std::size_t>(r) * cols + c) * 4;
      const std::uint32_t bits = static_cast<std::uint32_t>(buf[off]) |
                                 (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
                                 (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
                                 (static_cast<std::uint32_t>(buf[off + 3]) << 24);
      const float v = std::bit_cast<float>(bits);
      if (!std::isfinite(v)) throw DataError(path.string() + ": non-finite feature value");
      out.frames(r, c) = v;
    }
  }
  return out;
}

void write_features(const std::filesystem::path& path, const Matrix& frames) {
  if (!frames.allFinite()) throw DataError("refusing to write non-finite features to " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  out.write(kFeatureMagic.data(), 4);
  out.put(static_cast<char>(kFeatureVersion));
  write_u32(out, static_cast<std::uint32_t>(frames.rows()));
  write_u32(out, static_cast<std::uint32_t>(frames.cols()));
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
      write_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(frames(r, c))));
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::filesystem::path feature_path(const std::filesystem::path& feature_dir,
                                   const std::string& video_id) {
  return feature_dir / (video_id + ".crmf");
}

namespace {

// Without a feature directory only the annotation side is parsed.
VideoRecord parse_record(const std::string& id, const nlohmann::json& entry,
                         const std::filesystem::path* feature_dir, const EmbeddingTable& table,
                         const CorpusConfig& config) {
  if (!entry.is_object()) throw DataError("entry is not an object");
  VideoRecord rec;
  rec.id = id;
  rec.duration = entry.at("duration").get<double>();
  if (!(rec.duration > 0.0)) throw DataError("duration must be positive");
  const auto& stamps = entry.at("timestamps");
  const auto& sentences = entry.at("sentences");
  if (!stamps.is_array() || !sentences.is_array() || stamps.size() != sentences.size()) {
    throw DataError("timestamps and sentences must be arrays of equal length");
  }
  if (sentences.empty()) throw DataError("paragraph is empty");
  if (entry.contains("split")) rec.split = parse_split(entry.at("split").get<std::string>());

  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const auto& ts = stamps[i];
    if (!ts.is_array() || ts.size() != 2) throw DataError("timestamp must be [start, end]");
    const TimeSpan span{ts[0].get<double>(), ts[1].get<double>()};
    if (!(span.start < span.end)) {
      throw DataError("timestamp " + std::to_string(i) + " has end <= start");
    }
    if (span.start < 0.0 || span.end > rec.duration) {
      throw DataError("timestamp " + std::to_string(i) + " outside [0, duration]");
    }
    Sentence s;
    s.text = sentences[i].get<std::string>();
    if (feature_dir) s.tokens = tokenize(s.text, table, config.max_words);
    s.annotation_index = static_cast<int>(i);
    s.position = static_cast<int>(i);
    s.set_ground_truth(span);
    rec.paragraph.push_back(std::move(s));
  }

  if (feature_dir) {
    const FrameFeatures frames = read_features(feature_path(*feature_dir, id));
    if (frames.frames.cols() == 0) throw DataError("feature file has zero columns");
    rec.clips = build_clips(frames, config.num_clips, config.pool_span);
  }
  return restore_paragraph_order(std::move(rec));
}

CorpusLoadResult load_records(const std::filesystem::path& annotation_path,
                              const std::filesystem::path* feature_dir,
                              const EmbeddingTable& table, const CorpusConfig& config) {
  std::ifstream in(annotation_path);
  if (!in) throw DataError("cannot open annotation file " + annotation_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(annotation_path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw DataError(annotation_path.string() + ": expected an object");

  CorpusLoadResult result;
  for (const auto& [id, entry] : doc.items()) {
    try {
      result.records.push_back(parse_record(id, entry, feature_dir, table, config));
    } catch (const std::exception& e) {
      std::cerr << "skipping video " << id << ": " << e.what() << '\n';
      result.skipped.push_back({id, e.what()});
    }
  }
  return result;
}

}  // namespace

CorpusLoadResult load_corpus(const std::filesystem::path& annotation_path,
                             const std::filesystem::path& feature_dir,
                             const EmbeddingTable& table, const CorpusConfig& config) {
  return load_records(annotation_path, &feature_dir, table, config);
}

CorpusLoadResult load_annotations(const std::filesystem::path& annotation_path) {
  return load_records(annotation_path, nullptr, EmbeddingTable{}, CorpusConfig{});
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<VideoRecord>& records) {
  audit::GroundTruthAccess access;
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& rec : records) {
    std::vector<const Sentence*> ordered;
    for (const auto& s : rec.paragraph) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(), [](const Sentence* a, const Sentence* b) {
      return a->annotation_index < b->annotation_index;
    });
    nlohmann::json stamps = nlohmann::json::array();
    nlohmann::json sentences = nlohmann::json::array();
    for (const Sentence* s : ordered) {
      const auto& gt = s->ground_truth();
      stamps.push_back({gt.start, gt.end});
      sentences.push_back(s->text);
    }
    doc[rec.id] = {{"duration", rec.duration},
                   {"timestamps", stamps},
                   {"sentences", sentences},
                   {"split", std::string(to_string(rec.split))}};
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write annotation file " + path.string());
  out << doc.dump(1) << '\n';
}

}  // namespace crm
