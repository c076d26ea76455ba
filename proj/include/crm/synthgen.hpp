#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crm/data_model.hpp"
#include "crm/proposals.hpp"

namespace crm {

// Synthetic corpus of structured moments. Each event type has a visual
// prototype and a small vocabulary; each video has an actor whose visual
// signature appears in all of its events and whose word (drawn from a
// shared confuser pool) replaces a fraction of every sentence's tokens.
// Sentences dominated by the actor word cannot be told apart by content.
struct SynthConfig {
  int num_videos = 200;
  int num_clips = 32;  // one clip per second
  int video_dim = 16;
  int text_dim = 16;
  int min_events = 2;
  int max_events = 3;
  int num_event_types = 6;
  double ambiguity_rate = 0.5;
  double noise_std = 0.5;
  std::uint64_t seed = 0;

  int words_per_sentence = 3;
  int words_per_type = 3;
  int confuser_pool = 3;
  int min_event_length = 4;
  int max_event_length = 10;
  double test_fraction = 0.25;
  double word_noise_std = 0.3;  // per-word deviation from the type's text prototype

  void validate() const;
};

struct SynthCorpus {
  std::vector<VideoRecord> videos;
  EmbeddingTable table;
  Matrix type_prototypes;    // K x D_v
  Matrix actor_signatures;   // confuser_pool x D_v
  // Visual-space grounding of every vocabulary word (prototype or signature).
  std::map<std::string, Eigen::VectorXd> grounding;
};

SynthCorpus generate_corpus(const SynthConfig& config);

// Writes annotations.json, embeddings.txt, features/<id>.crmf and
// manifest.json (seed, config, file digest); returns the manifest digest.
std::string write_corpus(const SynthCorpus& corpus, const SynthConfig& config,
                         const std::filesystem::path& out_dir);

// Recall of a uniformly random proposal choice, averaged over trials.
std::map<double, double> chance_baseline(std::span<const VideoRecord> corpus,
                                         const ProposalGrid& grid,
                                         std::span<const double> thresholds, int trials,
                                         std::uint64_t seed);

}  // namespace crm
