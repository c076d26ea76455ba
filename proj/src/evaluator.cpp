#include "crm/evaluator.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace crm {

const TimeSpan* PredictionSet::sentence(const std::string& video, int position) const {
  auto it = sentences.find({video, position});
  return it == sentences.end() ? nullptr : &it->second;
}

const TimeSpan* PredictionSet::pair(const std::string& video, int a, int b) const {
  auto it = pairs.find({video, a, b});
  return it == pairs.end() ? nullptr : &it->second;
}

namespace {

std::vector<double> default_thresholds() { return {0.1, 0.3, 0.5}; }

std::string format_threshold(double m) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", m);
  return buf;
}

}  // namespace

PredictionSet predict(std::span<const VideoRecord> corpus, const MmnParams& params,
                      const ProposalGrid& grid, int max_concat, bool with_pairs) {
  PredictionSet out;
  for (const auto& video : corpus) {
    ag::Tape tape;
    const BoundParams p = bind(tape, params, false);
    const ag::Var encoded = graph::encode_video(tape, video.clips, p, grid);
    auto locate = [&](const Matrix& tokens) {
      const ag::Var scores = graph::match_encoded(encoded, graph::encode_query(tape, tokens, p), p);
      const std::size_t k = best_proposal(scores.value().col(0), grid);
      return clips_to_seconds(grid[k], video.duration, grid.num_clips, video.clips.valid_count).span;
    };
    const auto& para = video.paragraph;
    for (const auto& s : para) out.sentences[{video.id, s.position}] = locate(s.tokens.embeddings);
    if (!with_pairs) continue;
    for (std::size_t a = 0; a < para.size(); ++a) {
      for (std::size_t b = a + 1; b < para.size(); ++b) {
        const TokenSequence joined = concat_queries(para[a].tokens, para[b].tokens, max_concat);
        out.pairs[{video.id, para[a].position, para[b].position}] = locate(joined.embeddings);
      }
    }
  }
  return out;
}

std::map<double, double> recall_at_iou(std::span<const VideoRecord> corpus,
                                       const PredictionSet& predictions,
                                       std::span<const double> thresholds) {
  audit::GroundTruthAccess access;
  std::map<double, std::size_t> hits;
  for (double m : thresholds) hits[m] = 0;
  std::size_t total = 0;
  for (const auto& video : corpus) {
    for (const auto& s : video.paragraph) {
      const TimeSpan* pred = predictions.sentence(video.id, s.position);
      if (!pred) continue;
      ++total;
      const double value = iou(*pred, s.ground_truth());
      for (double m : thresholds) {
        if (value > m) ++hits[m];
      }
    }
  }
  std::map<double, double> out;
  for (double m : thresholds) {
    out[m] = total == 0 ? 0.0 : static_cast<double>(hits[m]) / static_cast<double>(total);
  }
  return out;
}

double temporal_consistency(std::span<const VideoRecord> corpus, const PredictionSet& predictions) {
  audit::GroundTruthAccess access;
  std::size_t pairs = 0, consistent = 0;
  for (const auto& video : corpus) {
    const auto& para = video.paragraph;
    for (std::size_t a = 0; a < para.size(); ++a) {
      for (std::size_t b = a + 1; b < para.size(); ++b) {
        const TimeSpan* pa = predictions.sentence(video.id, para[a].position);
        const TimeSpan* pb = predictions.sentence(video.id, para[b].position);
        if (!pa || !pb) continue;
        ++pairs;
        if (order_relation(*pa, *pb) ==
            order_relation(para[a].ground_truth(), para[b].ground_truth())) {
          ++consistent;
        }
      }
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(consistent) / static_cast<double>(pairs);
}

double semantic_consistency(std::span<const VideoRecord> corpus, const PredictionSet& predictions,
                            double tau) {
  audit::GroundTruthAccess access;
  std::size_t pairs = 0, consistent = 0;
  for (const auto& video : corpus) {
    const auto& para = video.paragraph;
    for (std::size_t a = 0; a < para.size(); ++a) {
      for (std::size_t b = a + 1; b < para.size(); ++b) {
        std::optional<TimeSpan> pred;
        if (const TimeSpan* p = predictions.pair(video.id, para[a].position, para[b].position)) {
          pred = *p;
        } else {
          const TimeSpan* pa = predictions.sentence(video.id, para[a].position);
          const TimeSpan* pb = predictions.sentence(video.id, para[b].position);
          if (pa && pb) pred = hull(*pa, *pb);
        }
        if (!pred) continue;
        ++pairs;
        const TimeSpan target = hull(para[a].ground_truth(), para[b].ground_truth());
        if (iou(*pred, target) > tau) ++consistent;
      }
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(consistent) / static_cast<double>(pairs);
}

namespace {

PredictionSet predict_with(std::span<const VideoRecord> corpus, const Checkpoint& ckpt,
                           bool with_pairs) {
  const ProposalGrid grid = generate_proposals(ckpt.config.model.num_clips, ckpt.config.model.grid);
  return predict(corpus, ckpt.params, grid, ckpt.config.max_concat_words, with_pairs);
}

}  // namespace

std::map<double, double> recall_at_iou(std::span<const VideoRecord> corpus,
                                       const Checkpoint& checkpoint,
                                       std::span<const double> thresholds) {
  return recall_at_iou(corpus, predict_with(corpus, checkpoint, false), thresholds);
}

double temporal_consistency(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint) {
  return temporal_consistency(corpus, predict_with(corpus, checkpoint, false));
}

double semantic_consistency(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint,
                            double tau) {
  return semantic_consistency(corpus, predict_with(corpus, checkpoint, true), tau);
}

EvalReport make_report(std::span<const VideoRecord> corpus, const PredictionSet& predictions,
                       std::span<const double> thresholds, double tau) {
  std::vector<double> ms(thresholds.begin(), thresholds.end());
  if (ms.empty()) ms = default_thresholds();
  EvalReport report;
  report.recall_at = recall_at_iou(corpus, predictions, ms);
  report.temporal_consistency = temporal_consistency(corpus, predictions);
  report.semantic_consistency = semantic_consistency(corpus, predictions, tau);
  audit::GroundTruthAccess access;
  for (const auto& video : corpus) {
    const auto n = video.paragraph.size();
    report.pairs += n * (n - 1) / 2;
    for (const auto& s : video.paragraph) {
      const TimeSpan* pred = predictions.sentence(video.id, s.position);
      if (!pred) continue;
      ++report.queries;
      report.details.push_back(
          {video.id, s.position, *pred, s.ground_truth(), iou(*pred, s.ground_truth())});
    }
  }
  return report;
}

EvalReport evaluate(std::span<const VideoRecord> corpus, const Checkpoint& checkpoint,
                    std::span<const double> thresholds, double tau) {
  return make_report(corpus, predict_with(corpus, checkpoint, true), thresholds, tau);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = kSchemaVersion;
  j["split"] = split;
  nlohmann::json recall = nlohmann::json::object();
  for (const auto& [m, r] : recall_at) recall[format_threshold(m)] = r;
  j["recall_at"] = recall;
  j["temporal_consistency"] = temporal_consistency;
  j["semantic_consistency"] = semantic_consistency;
  j["queries"] = queries;
  j["pairs"] = pairs;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : details) {
    rows.push_back({{"video", d.video},
                    {"position", d.position},
                    {"predicted", {d.predicted.start, d.predicted.end}},
                    {"ground_truth", {d.ground_truth.start, d.ground_truth.end}},
                    {"iou", d.iou}});
  }
  j["details"] = rows;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char buf[96];
  out << "split: " << (split.empty() ? "all" : split) << "  queries: " << queries
      << "  pairs: " << pairs << '\n';
  out << "metric                   value\n";
  for (const auto& [m, r] : recall_at) {
    std::snprintf(buf, sizeof buf, "IoU@%-20s %.4f\n", format_threshold(m).c_str(), r);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "temporal_consistency     %.4f\n", temporal_consistency);
  out << buf;
  std::snprintf(buf, sizeof buf, "semantic_consistency     %.4f\n", semantic_consistency);
  out << buf;
  return out.str();
}

PredictionFile read_predictions(std::istream& in, std::span<const VideoRecord> corpus) {
  // annotation index -> paragraph position, per video
  std::map<std::string, std::map<int, int>> index;
  for (const auto& v : corpus) {
    auto& m = index[v.id];
    for (const auto& s : v.paragraph) m[s.annotation_index] = s.position;
  }
  PredictionFile out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cols.push_back(c);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (cols.size() != 4) {
      out.unmatched.push_back(where + "expected 4 tab-separated fields");
      continue;
    }
    auto video = index.find(cols[0]);
    if (video == index.end()) {
      out.unmatched.push_back(where + "unknown video id '" + cols[0] + "'");
      continue;
    }
    TimeSpan span;
    try {
      std::size_t used = 0;
      span.start = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
      span.end = std::stod(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      out.unmatched.push_back(where + "bad start/end");
      continue;
    }
    auto position = [&](const std::string& text) -> std::optional<int> {
      try {
        std::size_t used = 0;
        const int idx = std::stoi(text, &used);
        if (used != text.size()) return std::nullopt;
        auto it = video->second.find(idx);
        if (it == video->second.end()) return std::nullopt;
        return it->second;
      } catch (const std::exception&) {
        return std::nullopt;
      }
    };
    const auto plus = cols[1].find('+');
    if (plus == std::string::npos) {
      const auto pos = position(cols[1]);
      if (!pos) {
        out.unmatched.push_back(where + "unknown sentence '" + cols[1] + "' for " + cols[0]);
        continue;
      }
      out.predictions.sentences[{cols[0], *pos}] = span;
    } else {
      const auto a = position(cols[1].substr(0, plus));
      const auto b = position(cols[1].substr(plus + 1));
      if (!a || !b || *a == *b) {
        out.unmatched.push_back(where + "unknown sentence pair '" + cols[1] + "' for " + cols[0]);
        continue;
      }
      out.predictions.pairs[{cols[0], std::min(*a, *b), std::max(*a, *b)}] = span;
    }
  }
  return out;
}

void write_predictions(std::ostream& out, std::span<const VideoRecord> corpus,
                       const PredictionSet& predictions) {
  char buf[64];
  for (const auto& v : corpus) {
    for (const auto& s : v.paragraph) {
      if (const TimeSpan* p = predictions.sentence(v.id, s.position)) {
        std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\n", p->start, p->end);
        out << v.id << '\t' << s.annotation_index << buf;
      }
    }
    for (const auto& a : v.paragraph) {
      for (const auto& b : v.paragraph) {
        if (a.position >= b.position) continue;
        if (const TimeSpan* p = predictions.pair(v.id, a.position, b.position)) {
          std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\n", p->start, p->end);
          out << v.id << '\t' << a.annotation_index << '+' << b.annotation_index << buf;
        }
      }
    }
  }
}

std::vector<VideoRecord> select_split(std::span<const VideoRecord> corpus, Split split) {
  std::vector<VideoRecord> out;
  for (const auto& v : corpus) {
    if (v.split == split) out.push_back(v);
  }
  return out;
}

}  // namespace crm
