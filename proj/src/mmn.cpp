#include "crm/mmn.hpp"

#include <cmath>
#include <stdexcept>

namespace crm {

namespace {

Matrix uniform(Eigen::Index rows, Eigen::Index cols, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

AffineT<Matrix> init_affine(int in, int out, std::mt19937_64& rng) {
  return {uniform(out, in, in, rng), Matrix::Zero(1, out)};
}

AttentionParams init_attention(int dim, std::mt19937_64& rng) {
  AttentionParams p;
  p.wq = uniform(dim, dim, dim, rng);
  p.wk = uniform(dim, dim, dim, rng);
  p.wv = uniform(dim, dim, dim, rng);
  p.fc = init_affine(dim, dim, rng);
  return p;
}

std::vector<AttentionParams> init_stack(int depth, int dim, std::mt19937_64& rng) {
  std::vector<AttentionParams> stack;
  for (int i = 0; i < depth; ++i) stack.push_back(init_attention(dim, rng));
  return stack;
}

template <class T>
void shape_like(const MmnParams& src, MmnParamsT<T>& dst) {
  dst.v2v.resize(src.v2v.size());
  dst.q2q.resize(src.q2q.size());
  dst.q2v.resize(src.q2v.size());
  dst.v2q.resize(src.v2q.size());
}

std::vector<bool> valid_clip_mask(const ClipSequence& clips) {
  std::vector<bool> mask(static_cast<std::size_t>(clips.num_clips()), false);
  for (int i = 0; i < clips.valid_count; ++i) mask[static_cast<std::size_t>(i)] = true;
  return mask;
}

}  // namespace

MmnParams init_params(const ModelConfig& config, std::mt19937_64& rng) {
  const int d = config.hidden_dim;
  if (d < 1 || config.video_dim < 1 || config.text_dim < 1) {
    throw std::invalid_argument("init_params: dimensions must be positive");
  }
  MmnParams p;
  p.video_proj = init_affine(config.video_dim, d, rng);
  p.query_proj = init_affine(config.text_dim, d, rng);
  p.v2v = init_stack(config.v2v_depth, d, rng);
  p.q2q = init_stack(config.q2q_depth, d, rng);
  p.q2v = init_stack(config.q2v_depth, d, rng);
  p.v2q = init_stack(config.v2q_depth, d, rng);
  p.fusion = init_affine(2 * d, d, rng);
  p.proposal_attn = init_attention(3 * d, rng);
  p.classifier_weight = uniform(1, 3 * d, 3 * d, rng);
  p.classifier_bias = Matrix::Zero(1, 1);
  return p;
}

MmnParams zeros_like(const MmnParams& params) {
  MmnParams out;
  shape_like(params, out);
  for_each_tensor([](const std::string&, const Matrix& src, Matrix& dst) {
    dst = Matrix::Zero(src.rows(), src.cols());
  }, params, out);
  return out;
}

std::size_t parameter_count(const MmnParams& params) {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); },
                  params);
  return n;
}

BoundParams bind(ag::Tape& tape, const MmnParams& params, bool trainable) {
  BoundParams out;
  shape_like(params, out);
  for_each_tensor([&tape, trainable](const std::string&, const Matrix& src, ag::Var& dst) {
    dst = trainable ? tape.variable(src) : tape.constant(src);
  }, params, out);
  return out;
}

void collect_gradients(const ag::Tape& tape, const BoundParams& bound, MmnParams& grads) {
  for_each_tensor([&tape](const std::string&, const ag::Var& v, Matrix& g) { g = tape.grad(v); },
                  bound, grads);
}

namespace graph {

ag::Var attention_unit(ag::Var target, ag::Var reference, const AttentionT<ag::Var>& p,
                       const std::vector<bool>* reference_mask, ag::Var* weights) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(target.cols()));
  ag::Var queries = ag::matmul_nt(target, p.wq);
  ag::Var keys = ag::matmul_nt(reference, p.wk);
  ag::Var logits = ag::scale(ag::matmul_nt(queries, keys), inv_sqrt_d);
  ag::Var attn = ag::softmax_rows(logits, reference_mask);
  if (weights) *weights = attn;
  ag::Var values = ag::matmul_nt(reference, p.wv);
  ag::Var mixed = ag::add(target, ag::matmul(attn, values));
  return ag::affine(mixed, p.fc.weight, p.fc.bias);
}

ag::Var encode_video(ag::Tape& tape, const ClipSequence& clips, const BoundParams& p,
                     const ProposalGrid& grid) {
  if (grid.num_clips != clips.num_clips()) {
    throw std::invalid_argument("encode_video: grid built for a different clip count");
  }
  ag::Var v = ag::affine(tape.constant(clips.clips), p.video_proj.weight, p.video_proj.bias);
  const std::vector<bool> mask = valid_clip_mask(clips);
  for (const auto& layer : p.v2v) v = attention_unit(v, v, layer, &mask);
  return ag::pool_segments(v, grid.segments);
}

ag::Var encode_query(ag::Tape& tape, const Matrix& tokens, const BoundParams& p) {
  if (tokens.rows() < 1) throw std::invalid_argument("encode_query: empty query");
  ag::Var q = ag::affine(tape.constant(tokens), p.query_proj.weight, p.query_proj.bias);
  for (const auto& layer : p.q2q) q = attention_unit(q, q, layer);
  return q;
}

CrossOutput cross_attend(ag::Var proposals, ag::Var words, const BoundParams& p) {
  const std::size_t depth = std::max(p.q2v.size(), p.v2q.size());
  for (std::size_t i = 0; i < depth; ++i) {
    ag::Var next_p = i < p.q2v.size() ? attention_unit(proposals, words, p.q2v[i]) : proposals;
    ag::Var next_w = i < p.v2q.size() ? attention_unit(words, proposals, p.v2q[i]) : words;
    proposals = next_p;
    words = next_w;
  }
  return {proposals, words};
}

ag::Var pool_sentence(ag::Var words) { return ag::colmax(words); }

ag::Var fuse(ag::Var proposals, ag::Var sentence, const BoundParams& p) {
  ag::Var q = ag::repeat_rows(sentence, proposals.rows());
  const ag::Var joint_in[] = {proposals, q};
  ag::Var projected = ag::affine(ag::hcat(joint_in), p.fusion.weight, p.fusion.bias);
  const ag::Var parts[] = {ag::add(proposals, q), ag::cwise_mul(proposals, q), projected};
  return ag::hcat(parts);
}

ag::Var score_proposals(ag::Var fused, const BoundParams& p) {
  ag::Var attended = attention_unit(fused, fused, p.proposal_attn);
  ag::Var logits = ag::affine(attended, p.classifier_weight, p.classifier_bias);
  return ag::sigmoid(logits);
}

ag::Var match_encoded(ag::Var proposals, ag::Var words, const BoundParams& p) {
  CrossOutput cross = cross_attend(proposals, words, p);
  return score_proposals(fuse(cross.proposals, pool_sentence(cross.words), p), p);
}

}  // namespace graph

AttentionResult attention_unit(const Matrix& target, const Matrix& reference,
                               const AttentionParams& params,
                               const std::vector<bool>* reference_mask) {
  const auto d = params.wq.rows();
  if (target.cols() != d || reference.cols() != d) {
    throw std::invalid_argument("attention_unit: feature dimension does not match parameters");
  }
  if (reference_mask && static_cast<Eigen::Index>(reference_mask->size()) != reference.rows()) {
    throw std::invalid_argument("attention_unit: mask length does not match reference");
  }
  ag::Tape tape;
  AttentionT<ag::Var> p{tape.constant(params.wq), tape.constant(params.wk),
                        tape.constant(params.wv),
                        {tape.constant(params.fc.weight), tape.constant(params.fc.bias)}};
  ag::Var weights;
  ag::Var out = graph::attention_unit(tape.constant(target), tape.constant(reference), p,
                                      reference_mask, &weights);
  return {out.value(), weights.value()};
}

Encoding encode(const ClipSequence& video, const Matrix& query_tokens, const MmnParams& params,
                const ProposalGrid& grid) {
  ag::Tape tape;
  const BoundParams p = bind(tape, params, false);
  auto cross = graph::cross_attend(graph::encode_video(tape, video, p, grid),
                                   graph::encode_query(tape, query_tokens, p), p);
  return {cross.proposals.value(), cross.words.value()};
}

Eigen::RowVectorXd pool_sentence(const Matrix& words) {
  if (words.rows() < 1) throw std::invalid_argument("pool_sentence: no words");
  return words.colwise().maxCoeff();
}

Eigen::RowVectorXd fuse(const Eigen::RowVectorXd& proposal, const Eigen::RowVectorXd& sentence,
                        const MmnParams& params) {
  const auto d = proposal.size();
  if (sentence.size() != d) throw std::invalid_argument("fuse: dimension mismatch");
  Eigen::RowVectorXd joint(2 * d);
  joint << proposal, sentence;
  Eigen::RowVectorXd out(3 * d);
  out << proposal + sentence, proposal.cwiseProduct(sentence),
      joint * params.fusion.weight.transpose() + params.fusion.bias;
  return out;
}

MatchScores score_proposals(const Matrix& fused, const MmnParams& params,
                            const ProposalGrid& grid) {
  ag::Tape tape;
  const BoundParams p = bind(tape, params, false);
  ag::Var s = graph::score_proposals(tape.constant(fused), p);
  return {s.value().col(0), &grid};
}

MatchScores match(const ClipSequence& video, const Matrix& query_tokens, const MmnParams& params,
                  const ProposalGrid& grid) {
  ag::Tape tape;
  const BoundParams p = bind(tape, params, false);
  ag::Var s = graph::match_encoded(graph::encode_video(tape, video, p, grid),
                                   graph::encode_query(tape, query_tokens, p), p);
  return {s.value().col(0), &grid};
}

std::size_t best_proposal(const Eigen::VectorXd& scores, const ProposalGrid& grid) {
  if (scores.size() == 0 || static_cast<std::size_t>(scores.size()) != grid.size()) {
    throw std::invalid_argument("best_proposal: scores do not match the grid");
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    const double s = scores(static_cast<Eigen::Index>(k));
    const double b = scores(static_cast<Eigen::Index>(best));
    if (s > b) {
      best = k;
    } else if (s == b) {
      const Segment& cand = grid[k];
      const Segment& cur = grid[best];
      if (cand.start < cur.start || (cand.start == cur.start && cand.length() < cur.length())) {
        best = k;
      }
    }
  }
  return best;
}

Localization localize(const VideoRecord& video, const Matrix& query_tokens,
                      const MmnParams& params, const ProposalGrid& grid) {
  const MatchScores m = match(video.clips, query_tokens, params, grid);
  Localization out;
  out.index = best_proposal(m.scores, grid);
  out.segment = grid[out.index];
  out.seconds =
      clips_to_seconds(out.segment, video.duration, grid.num_clips, video.clips.valid_count).span;
  out.score = m.scores(static_cast<Eigen::Index>(out.index));
  return out;
}

}  // namespace crm
