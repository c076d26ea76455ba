#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "crm/data_model.hpp"
#include "crm/mmn.hpp"
#include "crm/trainer.hpp"

namespace crm {

// Predicted intervals (seconds) keyed by video id and paragraph position.
struct PredictionSet {
  std::map<std::pair<std::string, int>, TimeSpan> sentences;
  // Predictions for the concatenation of sentences (a, b), a < b.
  std::map<std::tuple<std::string, int, int>, TimeSpan> pairs;

  const TimeSpan* sentence(const std::string& video, int position) const;
  const TimeSpan* pair(const std::string& video, int a, int b) const;
};

// Top-1 localization for every sentence and, when requested, every sentence pair.
PredictionSet predict(std::span<const VideoRecord> corpus, const MmnParams& params,
                      const ProposalGrid& grid, int max_concat = 40, bool with_pairs = true);

// Fraction of queries whose prediction has IoU strictly greater than m.
std::map<double, double> recall_at_iou(std::span<const VideoRecord> corpus,
                                       const PredictionSet& predictions,
                                       std::span<const double> thresholds);
std::map<double, double> recall_at_iou(std::span<const VideoRecord> corpus,
                                       const Checkpoint& checkpoint,
                                       std::span<const double> thresholds);

// Ratio of sentence pairs whose predicted order matches the ground-truth order.
double temporal_consistency(std::span<const VideoRecord> corpus, const PredictionSet& predictions);
double temporal_consistency(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint);

// Ratio of sentence pairs whose concatenated-query prediction has IoU > tau
// with the hull of the two ground-truth segments. Pairs without a pair
// prediction fall back to the hull of the two per-sentence predictions.
double semantic_consistency(std::span<const VideoRecord> corpus, const PredictionSet& predictions,
                            double tau = 0.5);
double semantic_consistency(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint,
                            double tau = 0.5);

struct QueryDetail {
  std::string video;
  int position = 0;
  TimeSpan predicted;
  TimeSpan ground_truth;
  double iou = 0.0;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;

  std::string split;
  std::map<double, double> recall_at;
  double temporal_consistency = 0.0;
  double semantic_consistency = 0.0;
  std::size_t queries = 0;
  std::size_t pairs = 0;
  std::vector<QueryDetail> details;

  std::string to_json() const;
  std::string to_table() const;
};

EvalReport make_report(std::span<const VideoRecord> corpus, const PredictionSet& predictions,
                       std::span<const double> thresholds, double tau = 0.5);

EvalReport evaluate(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint,
                    std::span<const double> thresholds, double tau = 0.5);

// Line format "video_id<TAB>sentence_pos<TAB>start_s<TAB>end_s", where
// sentence_pos is the sentence's index in the annotation file. A position
// "a+b" gives the prediction for the concatenation of sentences a and b.
struct PredictionFile {
  PredictionSet predictions;
  std::vector<std::string> unmatched;  // "line N: reason"
};

PredictionFile read_predictions(std::istream& in, std::span<const VideoRecord> corpus);
void write_predictions(std::ostream& out, std::span<const VideoRecord> corpus,
                       const PredictionSet& predictions);

std::vector<VideoRecord> select_split(std::span<const VideoRecord> corpus, Split split);

}  // namespace crm
