#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "crm/autograd.hpp"
#include "crm/data_model.hpp"
#include "crm/proposals.hpp"

namespace crm {

struct ModelConfig {
  int video_dim = 4096;
  int text_dim = 300;
  int hidden_dim = 256;
  int v2v_depth = 1;
  int q2q_depth = 1;
  int q2v_depth = 1;
  int v2q_depth = 1;
  int num_clips = 128;
  GridConfig grid{{8, 12, 20, 32, 64}, 8};
};

// y = x W^T + b, weight is out x in, bias is 1 x out.
template <class T>
struct AffineT {
  T weight;
  T bias;
};

template <class T>
struct AttentionT {
  T wq, wk, wv;
  AffineT<T> fc;
};

template <class T>
struct MmnParamsT {
  AffineT<T> video_proj;
  AffineT<T> query_proj;
  std::vector<AttentionT<T>> v2v, q2q, q2v, v2q;
  AffineT<T> fusion;           // 2D -> D
  AttentionT<T> proposal_attn;  // acts on the 3D fused rows
  T classifier_weight;         // 1 x 3D
  T classifier_bias;           // 1 x 1
};

using AttentionParams = AttentionT<Matrix>;
using MmnParams = MmnParamsT<Matrix>;
using BoundParams = MmnParamsT<ag::Var>;

namespace detail {

template <class F, class... A>
void visit_affine(const std::string& name, F& f, A&... a) {
  f(name + ".weight", a.weight...);
  f(name + ".bias", a.bias...);
}

template <class F, class... A>
void visit_attention(const std::string& name, F& f, A&... a) {
  f(name + ".wq", a.wq...);
  f(name + ".wk", a.wk...);
  f(name + ".wv", a.wv...);
  visit_affine(name + ".fc", f, a.fc...);
}

template <class F, class First, class... Rest>
void visit_stack(const std::string& name, F& f, First& first, Rest&... rest) {
  for (std::size_t i = 0; i < first.size(); ++i) {
    visit_attention(name + "." + std::to_string(i), f, first[i], rest[i]...);
  }
}

}  // namespace detail

// Calls f(name, tensor...) for every parameter tensor in canonical order.
// All parameter sets must share the same structure.
template <class F, class... P>
void for_each_tensor(F&& f, P&... params) {
  detail::visit_affine("video_proj", f, params.video_proj...);
  detail::visit_affine("query_proj", f, params.query_proj...);
  detail::visit_stack("v2v", f, params.v2v...);
  detail::visit_stack("q2q", f, params.q2q...);
  detail::visit_stack("q2v", f, params.q2v...);
  detail::visit_stack("v2q", f, params.v2q...);
  detail::visit_affine("fusion", f, params.fusion...);
  detail::visit_attention("proposal_attn", f, params.proposal_attn...);
  f(std::string("classifier.weight"), params.classifier_weight...);
  f(std::string("classifier.bias"), params.classifier_bias...);
}

// Uniform in ±sqrt(1/fan_in) for weights, zero biases.
MmnParams init_params(const ModelConfig& config, std::mt19937_64& rng);
MmnParams zeros_like(const MmnParams& params);
std::size_t parameter_count(const MmnParams& params);

// Places every parameter on the tape; constants when not trainable.
BoundParams bind(ag::Tape& tape, const MmnParams& params, bool trainable = true);
// Copies the gradient of each bound variable into `grads` (same structure).
void collect_gradients(const ag::Tape& tape, const BoundParams& bound, MmnParams& grads);

struct AttentionResult {
  Matrix output;   // L_t x D'
  Matrix weights;  // L_t x L_r
};

// FC(target + A * reference * W_v^T) with A = softmax(target W_q^T W_k reference^T / sqrt(D')).
AttentionResult attention_unit(const Matrix& target, const Matrix& reference,
                               const AttentionParams& params,
                               const std::vector<bool>* reference_mask = nullptr);

namespace graph {

ag::Var attention_unit(ag::Var target, ag::Var reference, const AttentionT<ag::Var>& p,
                       const std::vector<bool>* reference_mask = nullptr,
                       ag::Var* weights = nullptr);

// Projection, V2V self-attention (padded clips masked) and proposal pooling.
ag::Var encode_video(ag::Tape& tape, const ClipSequence& clips, const BoundParams& p,
                     const ProposalGrid& grid);
// Projection and Q2Q self-attention.
ag::Var encode_query(ag::Tape& tape, const Matrix& tokens, const BoundParams& p);

struct CrossOutput {
  ag::Var proposals;
  ag::Var words;
};
CrossOutput cross_attend(ag::Var proposals, ag::Var words, const BoundParams& p);

ag::Var pool_sentence(ag::Var words);
// Rows: (S + Q) || (S * Q) || FC(S || Q); L_s x 3D.
ag::Var fuse(ag::Var proposals, ag::Var sentence, const BoundParams& p);
// Extra proposal self-attention followed by the sigmoid classifier; L_s x 1.
ag::Var score_proposals(ag::Var fused, const BoundParams& p);

// Cross-attention, sentence pooling, fusion and scoring on encoded inputs.
ag::Var match_encoded(ag::Var proposals, ag::Var words, const BoundParams& p);

}  // namespace graph

struct Encoding {
  Matrix proposals;  // L_s x D
  Matrix words;      // L_w x D
};

// Self-attention, proposal pooling and cross-attention.
Encoding encode(const ClipSequence& video, const Matrix& query_tokens, const MmnParams& params,
                const ProposalGrid& grid);
Eigen::RowVectorXd pool_sentence(const Matrix& words);
Eigen::RowVectorXd fuse(const Eigen::RowVectorXd& proposal, const Eigen::RowVectorXd& sentence,
                        const MmnParams& params);

struct MatchScores {
  Eigen::VectorXd scores;  // length L_s, each in (0, 1)
  const ProposalGrid* grid = nullptr;

  std::size_t size() const { return static_cast<std::size_t>(scores.size()); }
};

MatchScores score_proposals(const Matrix& fused, const MmnParams& params,
                            const ProposalGrid& grid);
MatchScores match(const ClipSequence& video, const Matrix& query_tokens, const MmnParams& params,
                  const ProposalGrid& grid);

// Highest score; ties go to the earlier start, then the shorter proposal.
std::size_t best_proposal(const Eigen::VectorXd& scores, const ProposalGrid& grid);

struct Localization {
  std::size_t index = 0;
  Segment segment;
  TimeSpan seconds;
  double score = 0.0;
};

Localization localize(const VideoRecord& video, const Matrix& query_tokens,
                      const MmnParams& params, const ProposalGrid& grid);

}  // namespace crm
