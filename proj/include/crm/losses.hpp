#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "crm/autograd.hpp"
#include "crm/data_model.hpp"
#include "crm/mmn.hpp"
#include "crm/proposals.hpp"

namespace crm {

// Probabilities are clamped to [eps, 1 - eps] before every log.
inline constexpr double kProbEpsilon = 1e-7;

double video_score(const Eigen::VectorXd& scores);

// -2 log p(V|Q) - log(1 - p(V|Q-)) - log(1 - p(V-|Q)).
double bce_loss(double p_pos, double p_neg_query, double p_neg_video);

// Entry (k, k') = a_k * b_k'.
Matrix joint_probability(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct PairEntry {
  int first = 0;   // proposal index for the query at position j
  int second = 0;  // proposal index for the query at position j'
  double prob = 0.0;
};

struct TemporalPartition {
  std::vector<PairEntry> positives;  // proposal order agrees with query order
  std::vector<PairEntry> negatives;
};

TemporalPartition temporal_partition(const Matrix& joint, const ProposalGrid& grid, int j,
                                     int j_prime);

// Most probable consistent pair; ties go to the earlier first-segment start.
std::optional<PairEntry> best_positive(const TemporalPartition& partition,
                                       const ProposalGrid& grid);

// -log max(P+) - log(1 - max(P-)); throws when P+ is empty.
double tmp_loss(const TemporalPartition& partition);

TokenSequence concat_queries(const TokenSequence& a, const TokenSequence& b,
                             int max_concat = 40);

struct ProposalEntry {
  int index = 0;
  double prob = 0.0;
};

struct SemanticPartition {
  ProposalEntry positive;                 // max IoU with the target
  std::vector<ProposalEntry> negatives;   // IoU < tau
  std::vector<ProposalEntry> excluded;    // everything else
};

SemanticPartition semantic_partition(const Eigen::VectorXd& scores, const ProposalGrid& grid,
                                     const Segment& target, double tau);

double smt_loss(const SemanticPartition& partition);

// Scores the concatenated query against the video and applies the semantic
// constraint towards hull(best_pair).
double smt_loss(const ClipSequence& video, const TokenSequence& first,
                const TokenSequence& second, const std::pair<Segment, Segment>& best_pair,
                const MmnParams& params, double tau, const ProposalGrid& grid,
                int max_concat = 40);

// Mean of each non-empty term list, summed.
double combine_losses(std::span<const double> bce_terms, std::span<const double> tmp_terms,
                      std::span<const double> smt_terms);

struct NegativeSample {
  const VideoRecord* video = nullptr;    // V-, paired with the positive query
  const Sentence* query = nullptr;       // Q-, paired with the positive video
};

// One video with one (first < second) or a solitary query.
struct BatchItem {
  const VideoRecord* video = nullptr;
  int first = 0;    // paragraph index
  int second = -1;  // -1: single-sentence video, BCE only
  NegativeSample neg_first;
  NegativeSample neg_second;

  bool has_pair() const { return second >= 0; }
};

struct LossSwitches {
  bool bce = true;
  bool tmp = true;
  bool smt = true;

  bool any() const { return bce || tmp || smt; }
  friend bool operator==(const LossSwitches&, const LossSwitches&) = default;
};

struct ObjectiveConfig {
  LossSwitches losses;
  double tau = 0.5;
  int max_concat = 40;
};

struct ObjectiveResult {
  double total = 0.0;
  double bce = 0.0;  // mean over BCE terms
  double tmp = 0.0;
  double smt = 0.0;
  std::vector<double> bce_terms, tmp_terms, smt_terms;
  int pair_items = 0;
  int consistent_best_pairs = 0;  // global joint argmax lies in P+
};

// Batch objective; when `grads` is non-null it receives d(total)/d(params).
ObjectiveResult total_loss(std::span<const BatchItem> batch, const MmnParams& params,
                           const ProposalGrid& grid, const ObjectiveConfig& config,
                           MmnParams* grads = nullptr);

}  // namespace crm
