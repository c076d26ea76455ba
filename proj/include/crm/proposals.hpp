#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace crm {

// Half-open interval [start, end) in clip units.
struct Segment {
  int start = 0;
  int end = 0;

  int length() const { return end - start; }
  bool contains(const Segment& other) const {
    return start <= other.start && other.end <= end;
  }
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Interval in seconds, used for ground truth and converted predictions.
struct TimeSpan {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const TimeSpan&, const TimeSpan&) = default;
};

double iou(const Segment& a, const Segment& b);
double iou(const TimeSpan& a, const TimeSpan& b);

// Smallest contiguous interval covering both arguments.
Segment hull(const Segment& a, const Segment& b);
TimeSpan hull(const TimeSpan& a, const TimeSpan& b);

// 0 when `a` starts strictly before `b`, otherwise 1 (equal starts give 1).
int order_relation(const Segment& a, const Segment& b);
int order_relation(const TimeSpan& a, const TimeSpan& b);

// Indicator of j >= j' for paragraph positions.
int query_order(int j, int j_prime);

struct GridConfig {
  std::vector<int> window_sizes;
  int stride = 8;
};

struct ProposalGrid {
  std::vector<Segment> segments;
  std::vector<int> window_sizes;  // sizes actually used
  std::vector<int> skipped_sizes;  // sizes larger than the clip count
  int stride = 1;
  int num_clips = 0;

  std::size_t size() const { return segments.size(); }
  const Segment& operator[](std::size_t k) const { return segments[k]; }
};

// Sliding windows ordered by window size, then by start. Sizes larger than
// `num_clips` are skipped with a warning on stderr.
ProposalGrid generate_proposals(int num_clips, std::span<const int> window_sizes,
                                int stride);
inline ProposalGrid generate_proposals(int num_clips, const GridConfig& config) {
  return generate_proposals(num_clips, config.window_sizes, config.stride);
}

// Column-wise max over rows [seg.start, seg.end).
Eigen::RowVectorXd pool_proposal_features(const Eigen::MatrixXd& clips,
                                          const Segment& seg);

struct SecondsMapping {
  TimeSpan span;
  bool in_padding = false;  // segment starts at or after the last real clip
};

SecondsMapping clips_to_seconds(const Segment& seg, double duration, int num_clips,
                                int valid_count = -1);

}  // namespace crm
