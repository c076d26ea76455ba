#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crm/data_model.hpp"
#include "crm/losses.hpp"
#include "crm/mmn.hpp"

namespace crm {

struct TrainConfig {
  int batch_videos = 64;
  int epochs = 50;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;  // global L2 norm cap; 0 disables
  double tau = 0.5;
  int max_concat_words = 40;
  std::uint64_t seed = 0;
  LossSwitches losses;
  ModelConfig model;

  void validate() const;
};

// Raised when the objective stops being finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double bce = 0.0;
  double tmp = 0.0;
  double smt = 0.0;
  double consistent_pairs = 0.0;  // fraction of pair items whose joint argmax is in P+
};

struct Checkpoint {
  MmnParams params;
  TrainConfig config;
  int epoch = 0;
  std::string rng_digest;
  std::vector<EpochMetrics> metrics;
};

// n videos without replacement (with replacement when the corpus is smaller),
// one ordered sentence pair per video, one V- and one Q- per query.
std::vector<BatchItem> sample_batch(std::span<const VideoRecord> corpus, int n,
                                    std::mt19937_64& rng);

using EpochCallback = std::function<void(const EpochMetrics&)>;

Checkpoint train(std::span<const VideoRecord> corpus, const TrainConfig& config,
                 const EpochCallback& on_epoch = nullptr);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// "epoch,loss,bce,tmp,smt" rows.
std::string metrics_csv(std::span<const EpochMetrics> metrics);

// Hex FNV-1a digest of the generator state.
std::string rng_digest(const std::mt19937_64& rng);

// Rounds every parameter to float32 precision.
void round_to_float(MmnParams& params);

struct GradCheckConfig {
  int hidden_dim = 8;
  int feature_dim = 6;
  int num_clips = 16;
  GridConfig grid{{4, 8, 16}, 8};
  LossSwitches losses;
  double step = 1e-4;
  double tolerance = 1e-3;
  // Denominator floor for the relative error of near-zero gradients.
  double abs_floor = 1e-6;
  int max_coordinates = 0;  // 0 checks every coordinate
  std::uint64_t seed = 7;
};

struct GradCheckOffender {
  std::string tensor;
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<GradCheckOffender> offenders;  // above tolerance
};

// Central finite differences of total_loss on a seeded tiny instance.
GradCheckReport gradient_check(const GradCheckConfig& config = {});

}  // namespace crm
