#include "crm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace crm {

namespace {

double clamped_log(double p) { return std::log(std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon)); }

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// -log(max P+) - log(1 - max P-) with an empty P- contributing nothing.
template <class Entry>
double constraint_loss(const Entry& positive, const std::vector<Entry>& negatives) {
  double loss = -clamped_log(positive.prob);
  if (!negatives.empty()) {
    const auto it = std::max_element(negatives.begin(), negatives.end(),
                                      [](const Entry& a, const Entry& b) { return a.prob < b.prob; });
    loss -= clamped_log(1.0 - it->prob);
  }
  return loss;
}

}  // namespace

double video_score(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) throw std::invalid_argument("video_score: no proposals");
  return scores.maxCoeff();
}

double bce_loss(double p_pos, double p_neg_query, double p_neg_video) {
  return -2.0 * clamped_log(p_pos) - clamped_log(1.0 - p_neg_query) -
         clamped_log(1.0 - p_neg_video);
}

Matrix joint_probability(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("joint_probability: grids differ");
  return a * b.transpose();
}

TemporalPartition temporal_partition(const Matrix& joint, const ProposalGrid& grid, int j,
                                     int j_prime) {
  if (j == j_prime) throw std::invalid_argument("temporal_partition: queries must differ");
  const auto n = static_cast<Eigen::Index>(grid.size());
  if (joint.rows() != n || joint.cols() != n) {
    throw std::invalid_argument("temporal_partition: joint matrix does not match the grid");
  }
  const int wanted = query_order(j, j_prime);
  TemporalPartition out;
  out.positives.reserve(static_cast<std::size_t>(n * n));
  out.negatives.reserve(static_cast<std::size_t>(n * n));
  for (int k = 0; k < n; ++k) {
    for (int kp = 0; kp < n; ++kp) {
      const PairEntry e{k, kp, joint(k, kp)};
      if (order_relation(grid[static_cast<std::size_t>(k)], grid[static_cast<std::size_t>(kp)]) ==
          wanted) {
        out.positives.push_back(e);
      } else {
        out.negatives.push_back(e);
      }
    }
  }
  return out;
}

std::optional<PairEntry> best_positive(const TemporalPartition& partition,
                                       const ProposalGrid& grid) {
  std::optional<PairEntry> best;
  for (const auto& e : partition.positives) {
    if (!best || e.prob > best->prob ||
        (e.prob == best->prob && grid[static_cast<std::size_t>(e.first)].start <
                                     grid[static_cast<std::size_t>(best->first)].start)) {
      best = e;
    }
  }
  return best;
}

double tmp_loss(const TemporalPartition& partition) {
  if (partition.positives.empty()) {
    throw std::invalid_argument("tmp_loss: no temporally consistent proposal pair");
  }
  const auto best = *std::max_element(
      partition.positives.begin(), partition.positives.end(),
      [](const PairEntry& a, const PairEntry& b) { return a.prob < b.prob; });
  return constraint_loss(best, partition.negatives);
}

TokenSequence concat_queries(const TokenSequence& a, const TokenSequence& b, int max_concat) {
  if (a.length() < 1 || b.length() < 1) throw std::invalid_argument("concat_queries: empty query");
  if (a.embeddings.cols() != b.embeddings.cols()) {
    throw std::invalid_argument("concat_queries: embedding dimensions differ");
  }
  const int total = std::min(a.length() + b.length(), max_concat);
  TokenSequence out;
  out.embeddings.resize(total, a.embeddings.cols());
  const int from_a = std::min(a.length(), total);
  out.embeddings.topRows(from_a) = a.embeddings.topRows(from_a);
  if (total > from_a) out.embeddings.bottomRows(total - from_a) = b.embeddings.topRows(total - from_a);
  out.tokens.assign(a.tokens.begin(), a.tokens.end());
  out.tokens.insert(out.tokens.end(), b.tokens.begin(), b.tokens.end());
  if (static_cast<int>(out.tokens.size()) > total) out.tokens.resize(static_cast<std::size_t>(total));
  return out;
}

SemanticPartition semantic_partition(const Eigen::VectorXd& scores, const ProposalGrid& grid,
                                     const Segment& target, double tau) {
  if (static_cast<std::size_t>(scores.size()) != grid.size() || grid.size() == 0) {
    throw std::invalid_argument("semantic_partition: scores do not match the grid");
  }
  std::size_t best = 0;
  double best_iou = -1.0;
  std::vector<double> ious(grid.size());
  for (std::size_t l = 0; l < grid.size(); ++l) {
    ious[l] = iou(grid[l], target);
    if (ious[l] > best_iou) {
      best_iou = ious[l];
      best = l;
    }
  }
  SemanticPartition out;
  out.positive = {static_cast<int>(best), scores(static_cast<Eigen::Index>(best))};
  for (std::size_t l = 0; l < grid.size(); ++l) {
    if (l == best) continue;
    const ProposalEntry e{static_cast<int>(l), scores(static_cast<Eigen::Index>(l))};
    (ious[l] < tau ? out.negatives : out.excluded).push_back(e);
  }
  return out;
}

double smt_loss(const SemanticPartition& partition) {
  return constraint_loss(partition.positive, partition.negatives);
}

double smt_loss(const ClipSequence& video, const TokenSequence& first,
                const TokenSequence& second, const std::pair<Segment, Segment>& best_pair,
                const MmnParams& params, double tau, const ProposalGrid& grid, int max_concat) {
  const TokenSequence joined = concat_queries(first, second, max_concat);
  const MatchScores scores = match(video, joined.embeddings, params, grid);
  return smt_loss(
      semantic_partition(scores.scores, grid, hull(best_pair.first, best_pair.second), tau));
}

double combine_losses(std::span<const double> bce_terms, std::span<const double> tmp_terms,
                      std::span<const double> smt_terms) {
  return mean(bce_terms) + mean(tmp_terms) + mean(smt_terms);
}

namespace {

Eigen::Index argmax(const ag::Var& column) {
  Eigen::Index r = 0;
  column.value().col(0).maxCoeff(&r);
  return r;
}

ag::Var neg_log(ag::Var p) { return ag::scale(ag::log_clamped(p, kProbEpsilon), -1.0); }

// Forward graph for one batch item, sharing encodings across its pairs.
class ItemGraph {
 public:
  ItemGraph(ag::Tape& tape, const BoundParams& params, const ProposalGrid& grid)
      : tape_(tape), params_(params), grid_(grid) {}

  ag::Var scores(const VideoRecord* video, const Sentence* query) {
    const auto key = std::make_pair(video, query);
    auto it = scores_.find(key);
    if (it != scores_.end()) return it->second;
    ag::Var s = graph::match_encoded(video_encoding(video), query_encoding(query), params_);
    scores_.emplace(key, s);
    return s;
  }

  ag::Var scores(const VideoRecord* video, const Matrix& tokens) {
    return graph::match_encoded(video_encoding(video), graph::encode_query(tape_, tokens, params_),
                                params_);
  }

 private:
  ag::Var video_encoding(const VideoRecord* video) {
    auto it = videos_.find(video);
    if (it != videos_.end()) return it->second;
    ag::Var v = graph::encode_video(tape_, video->clips, params_, grid_);
    videos_.emplace(video, v);
    return v;
  }

  ag::Var query_encoding(const Sentence* query) {
    auto it = queries_.find(query);
    if (it != queries_.end()) return it->second;
    ag::Var q = graph::encode_query(tape_, query->tokens.embeddings, params_);
    queries_.emplace(query, q);
    return q;
  }

  ag::Tape& tape_;
  const BoundParams& params_;
  const ProposalGrid& grid_;
  std::map<const VideoRecord*, ag::Var> videos_;
  std::map<const Sentence*, ag::Var> queries_;
  std::map<std::pair<const VideoRecord*, const Sentence*>, ag::Var> scores_;
};

struct Weighted {
  ag::Var term;
  double weight;
};

}  // namespace

ObjectiveResult total_loss(std::span<const BatchItem> batch, const MmnParams& params,
                           const ProposalGrid& grid, const ObjectiveConfig& config,
                           MmnParams* grads) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");

  int bce_count = 0;
  int pair_count = 0;
  for (const auto& item : batch) {
    if (!item.video) throw std::invalid_argument("total_loss: batch item without video");
    bce_count += item.has_pair() ? 2 : 1;
    pair_count += item.has_pair() ? 1 : 0;
  }
  const double bce_weight = 1.0 / bce_count;
  const double pair_weight = pair_count > 0 ? 1.0 / pair_count : 0.0;

  ObjectiveResult result;
  result.pair_items = pair_count;
  if (grads) *grads = zeros_like(params);
  MmnParams item_grads;
  if (grads) item_grads = zeros_like(params);

  for (const auto& item : batch) {
    const VideoRecord* video = item.video;
    const auto& para = video->paragraph;
    ag::Tape tape;
    const BoundParams bound = bind(tape, params, grads != nullptr);
    ItemGraph g(tape, bound, grid);
    std::vector<Weighted> terms;

    const Sentence* q1 = &para.at(static_cast<std::size_t>(item.first));
    const Sentence* q2 = item.has_pair() ? &para.at(static_cast<std::size_t>(item.second)) : nullptr;

    if (config.losses.bce) {
      auto bce_term = [&](const Sentence* q, const NegativeSample& neg) {
        if (!neg.video || !neg.query) throw std::invalid_argument("total_loss: missing negatives");
        ag::Var pos = g.scores(video, q);
        ag::Var neg_q = g.scores(video, neg.query);
        ag::Var neg_v = g.scores(neg.video, q);
        ag::Var p_pos = ag::entry(pos, argmax(pos), 0);
        ag::Var p_nq = ag::entry(neg_q, argmax(neg_q), 0);
        ag::Var p_nv = ag::entry(neg_v, argmax(neg_v), 0);
        ag::Var loss = ag::add(ag::scale(neg_log(p_pos), 2.0),
                               ag::add(neg_log(ag::one_minus(p_nq)), neg_log(ag::one_minus(p_nv))));
        result.bce_terms.push_back(loss.scalar());
        terms.push_back({loss, bce_weight});
      };
      bce_term(q1, item.neg_first);
      if (q2) bce_term(q2, item.neg_second);
    }

    if (q2 && (config.losses.tmp || config.losses.smt)) {
      ag::Var s1 = g.scores(video, q1);
      ag::Var s2 = g.scores(video, q2);
      const Matrix joint = joint_probability(s1.value().col(0), s2.value().col(0));
      const TemporalPartition part = temporal_partition(joint, grid, q1->position, q2->position);
      const auto best = best_positive(part, grid);
      if (!best) throw std::runtime_error("total_loss: no temporally consistent proposal pair");

      Eigen::Index gk = 0, gkp = 0;
      joint.maxCoeff(&gk, &gkp);
      if (order_relation(grid[static_cast<std::size_t>(gk)], grid[static_cast<std::size_t>(gkp)]) ==
          query_order(q1->position, q2->position)) {
        ++result.consistent_best_pairs;
      }

      if (config.losses.tmp) {
        ag::Var loss = neg_log(ag::cwise_mul(ag::entry(s1, best->first, 0),
                                             ag::entry(s2, best->second, 0)));
        if (!part.negatives.empty()) {
          const auto worst = *std::max_element(
              part.negatives.begin(), part.negatives.end(),
              [](const PairEntry& a, const PairEntry& b) { return a.prob < b.prob; });
          loss = ag::add(loss, neg_log(ag::one_minus(ag::cwise_mul(
                                   ag::entry(s1, worst.first, 0), ag::entry(s2, worst.second, 0)))));
        }
        result.tmp_terms.push_back(loss.scalar());
        terms.push_back({loss, pair_weight});
      }

      if (config.losses.smt) {
        const TokenSequence joined = concat_queries(q1->tokens, q2->tokens, config.max_concat);
        ag::Var s12 = g.scores(video, joined.embeddings);
        const Segment target = hull(grid[static_cast<std::size_t>(best->first)],
                                    grid[static_cast<std::size_t>(best->second)]);
        const SemanticPartition sp = semantic_partition(s12.value().col(0), grid, target, config.tau);
        ag::Var loss = neg_log(ag::entry(s12, sp.positive.index, 0));
        if (!sp.negatives.empty()) {
          const auto worst = *std::max_element(
              sp.negatives.begin(), sp.negatives.end(),
              [](const ProposalEntry& a, const ProposalEntry& b) { return a.prob < b.prob; });
          loss = ag::add(loss, neg_log(ag::one_minus(ag::entry(s12, worst.index, 0))));
        }
        result.smt_terms.push_back(loss.scalar());
        terms.push_back({loss, pair_weight});
      }
    }

    if (grads && !terms.empty()) {
      ag::Var item_total = ag::scale(terms[0].term, terms[0].weight);
      for (std::size_t i = 1; i < terms.size(); ++i) {
        item_total = ag::add(item_total, ag::scale(terms[i].term, terms[i].weight));
      }
      tape.backward(item_total);
      collect_gradients(tape, bound, item_grads);
      for_each_tensor([](const std::string&, Matrix& acc, const Matrix& g) { acc += g; }, *grads,
                      item_grads);
    }
  }

  result.bce = mean(result.bce_terms);
  result.tmp = mean(result.tmp_terms);
  result.smt = mean(result.smt_terms);
  result.total = result.bce + result.tmp + result.smt;
  return result;
}

}  // namespace crm
