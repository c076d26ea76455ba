#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "crm/proposals.hpp"

namespace crm {

using Matrix = Eigen::MatrixXd;

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ground-truth boundaries must never drive training. Every read of
// Sentence::ground_truth() outside a GroundTruthAccess scope is counted.
namespace audit {

std::size_t unauthorized_reads();
void reset();

class GroundTruthAccess {
 public:
  GroundTruthAccess();
  ~GroundTruthAccess();
  GroundTruthAccess(const GroundTruthAccess&) = delete;
  GroundTruthAccess& operator=(const GroundTruthAccess&) = delete;
};

}  // namespace audit

struct FrameFeatures {
  Matrix frames;  // F x D_v
  std::optional<double> frame_rate_hint;
};

struct ClipSequence {
  Matrix clips;  // L_c x D_v, rows >= valid_count are zero
  int valid_count = 0;

  int num_clips() const { return static_cast<int>(clips.rows()); }
};

struct TokenSequence {
  Matrix embeddings;  // L_w x D_t
  std::vector<std::string> tokens;

  int length() const { return static_cast<int>(embeddings.rows()); }
};

class Sentence {
 public:
  TokenSequence tokens;
  std::string text;
  int position = 0;          // index in the (restored) paragraph
  int annotation_index = 0;  // index in the source annotation file

  bool has_ground_truth() const { return ground_truth_.has_value(); }
  // Counted by the audit unless a GroundTruthAccess scope is active.
  const TimeSpan& ground_truth() const;
  void set_ground_truth(std::optional<TimeSpan> span) { ground_truth_ = span; }

 private:
  std::optional<TimeSpan> ground_truth_;
};

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view name);

struct VideoRecord {
  std::string id;
  double duration = 0.0;
  ClipSequence clips;
  std::vector<Sentence> paragraph;  // ascending position
  Split split = Split::kTrain;
};

class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 0) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  void add(const std::string& word, const Eigen::VectorXd& vec);
  const Eigen::VectorXd* find(const std::string& word) const;
  const std::vector<std::string>& words() const { return order_; }

  // One "word v1 ... vD" per line.
  static EmbeddingTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  int dim_;
  std::unordered_map<std::string, Eigen::VectorXd> vectors_;
  std::vector<std::string> order_;
};

// Clip i pools frames [a_i, a_i + pool_span) ∩ [0, F) with
// a_i = round(i * max(F, L_c) / L_c): even spreading when F >= L_c,
// zero padding after the last frame otherwise.
ClipSequence build_clips(const FrameFeatures& frames, int num_clips, int pool_span);

// Lowercases, splits on anything that is not a letter or digit, maps
// out-of-vocabulary words to zero vectors, truncates to max_len.
TokenSequence tokenize(std::string_view text, const EmbeddingTable& table, int max_len);

// Orders sentences by ground-truth start, then end, then annotation index.
VideoRecord restore_paragraph_order(VideoRecord record);

// Binary feature file: "CRMF", version byte 1, u32 rows, u32 cols, row-major
// little-endian float32 values.
FrameFeatures read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const Matrix& frames);

struct CorpusConfig {
  int num_clips = 128;
  int pool_span = 5;
  int max_words = 20;
};

struct SkippedRecord {
  std::string id;
  std::string reason;
};

struct CorpusLoadResult {
  std::vector<VideoRecord> records;
  std::vector<SkippedRecord> skipped;
};

// Annotation JSON: {video_id: {duration, timestamps: [[s, e], ...],
// sentences: [...], split?}}. Features are read from
// feature_dir/<video_id>.crmf. Bad records are skipped and reported.
CorpusLoadResult load_corpus(const std::filesystem::path& annotation_path,
                             const std::filesystem::path& feature_dir,
                             const EmbeddingTable& table, const CorpusConfig& config);

// Annotation side only: ground truth and text, no clips or tokens.
CorpusLoadResult load_annotations(const std::filesystem::path& annotation_path);

// Writes the annotation JSON for `records` (sentences in annotation order).
void write_annotations(const std::filesystem::path& path,
                       const std::vector<VideoRecord>& records);

std::filesystem::path feature_path(const std::filesystem::path& feature_dir,
                                   const std::string& video_id);

}  // namespace crm
