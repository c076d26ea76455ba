#include "crm/proposals.hpp"

#include <algorithm>
#include <iostream>

namespace crm {

namespace {

template <class T>
double interval_iou(T s_a, T e_a, T s_b, T e_b) {
  const double inter = std::max(0.0, static_cast<double>(std::min(e_a, e_b)) -
                                         static_cast<double>(std::max(s_a, s_b)));
  const double uni = static_cast<double>(std::max(e_a, e_b)) -
                     static_cast<double>(std::min(s_a, s_b));
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

}  // namespace

double iou(const Segment& a, const Segment& b) {
  return interval_iou(a.start, a.end, b.start, b.end);
}

double iou(const TimeSpan& a, const TimeSpan& b) {
  return interval_iou(a.start, a.end, b.start, b.end);
}

Segment hull(const Segment& a, const Segment& b) {
  return {std::min(a.start, b.start), std::max(a.end, b.end)};
}

TimeSpan hull(const TimeSpan& a, const TimeSpan& b) {
  return {std::min(a.start, b.start), std::max(a.end, b.end)};
}

int order_relation(const Segment& a, const Segment& b) { return a.start < b.start ? 0 : 1; }

int order_relation(const TimeSpan& a, const TimeSpan& b) {
  return a.start < b.start ? 0 : 1;
}

int query_order(int j, int j_prime) { return j >= j_prime ? 1 : 0; }

ProposalGrid generate_proposals(int num_clips, std::span<const int> window_sizes,
                                int stride) {
  if (num_clips < 1) throw std::invalid_argument("generate_proposals: num_clips must be >= 1");
  if (stride < 1) throw std::invalid_argument("generate_proposals: stride must be >= 1");

  ProposalGrid grid;
  grid.stride = stride;
  grid.num_clips = num_clips;
  for (int w : window_sizes) {
    if (w < 1) throw std::invalid_argument("generate_proposals: window size must be >= 1");
    if (w > num_clips) {
      std::cerr << "warning: window size " << w << " exceeds " << num_clips
                << " clips; skipped\n";
      grid.skipped_sizes.push_back(w);
      continue;
    }
    if (std::find(grid.window_sizes.begin(), grid.window_sizes.end(), w) !=
        grid.window_sizes.end()) {
      continue;
    }
    grid.window_sizes.push_back(w);
  }
  std::sort(grid.window_sizes.begin(), grid.window_sizes.end());
  for (int w : grid.window_sizes) {
    const int count = (num_clips - w) / stride + 1;
    for (int k = 0; k < count; ++k) grid.segments.push_back({k * stride, k * stride + w});
  }
  return grid;
}

Eigen::RowVectorXd pool_proposal_features(const Eigen::MatrixXd& clips, const Segment& seg) {
  if (seg.start < 0 || seg.end > clips.rows() || seg.start >= seg.end) {
    throw std::out_of_range("pool_proposal_features: segment outside clip range");
  }
  return clips.middleRows(seg.start, seg.length()).colwise().maxCoeff();
}

SecondsMapping clips_to_seconds(const Segment& seg, double duration, int num_clips,
                                int valid_count) {
  const double unit = duration / static_cast<double>(num_clips);
  SecondsMapping out;
  out.span.start = std::clamp(seg.start * unit, 0.0, duration);
  out.span.end = std::clamp(seg.end * unit, 0.0, duration);
  out.in_padding = valid_count >= 0 && seg.start >= valid_count;
  return out;
}

}  // namespace crm
