#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "crm/run_config.hpp"
#include "crm/synthgen.hpp"
#include "json.hpp"
#include "support.hpp"

using namespace crm;

namespace {

SynthConfig quick(std::uint64_t seed = 0) {
  SynthConfig c;
  c.num_videos = 40;
  c.seed = seed;
  return c;
}

// Grounds a sentence by its words' visual directions and picks the window
// whose normalized projection is largest.
Segment oracle_pick(const SynthCorpus& corpus, const VideoRecord& v, const Sentence& s,
                    const ProposalGrid& grid) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(corpus.type_prototypes.cols());
  std::istringstream words(s.text);
  for (std::string w; words >> w;) g += corpus.grounding.at(w);
  g.normalize();
  double best = -1e300;
  Segment pick = grid[0];
  for (std::size_t l = 0; l < grid.size(); ++l) {
    const Segment seg = grid[l];
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(g.size());
    for (int r = seg.start; r < seg.end; ++r) sum += v.clips.clips.row(r).transpose();
    const double score = g.dot(sum) / std::sqrt(static_cast<double>(seg.length()));
    if (score > best) {
      best = score;
      pick = seg;
    }
  }
  return pick;
}

struct OracleResult {
  double recall = 0, temporal = 0;
};

OracleResult oracle(const SynthCorpus& corpus, const ProposalGrid& grid, double m) {
  audit::GroundTruthAccess access;
  std::size_t queries = 0, hits = 0, pairs = 0, consistent = 0;
  for (const auto& v : corpus.videos) {
    std::vector<TimeSpan> preds;
    for (const auto& s : v.paragraph) {
      const Segment seg = oracle_pick(corpus, v, s, grid);
      preds.push_back({static_cast<double>(seg.start), static_cast<double>(seg.end)});
      ++queries;
      if (iou(preds.back(), s.ground_truth()) > m) ++hits;
    }
    for (std::size_t a = 0; a < preds.size(); ++a) {
      for (std::size_t b = a + 1; b < preds.size(); ++b) {
        ++pairs;
        if (order_relation(preds[a], preds[b]) ==
            order_relation(v.paragraph[a].ground_truth(), v.paragraph[b].ground_truth())) {
          ++consistent;
        }
      }
    }
  }
  return {static_cast<double>(hits) / queries, static_cast<double>(consistent) / pairs};
}

ProposalGrid dense_grid(int num_clips) {
  ProposalGrid g;
  g.num_clips = num_clips;
  for (int a = 0; a < num_clips; ++a)
    for (int b = a + 1; b <= num_clips; ++b) g.segments.push_back({a, b});
  return g;
}

ProposalGrid desk_grid() {
  const RunConfig rc;
  return generate_proposals(rc.train.model.num_clips, rc.train.model.grid);
}

}  // namespace

TEST(Synth, Deterministic) {
  const auto a = generate_corpus(quick(4)), b = generate_corpus(quick(4)), c = generate_corpus(quick(5));
  ASSERT_EQ(a.videos.size(), b.videos.size());
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    EXPECT_EQ(a.videos[i].clips.clips, b.videos[i].clips.clips);
    ASSERT_EQ(a.videos[i].paragraph.size(), b.videos[i].paragraph.size());
    for (std::size_t s = 0; s < a.videos[i].paragraph.size(); ++s)
      EXPECT_EQ(a.videos[i].paragraph[s].text, b.videos[i].paragraph[s].text);
  }
  EXPECT_NE(a.videos[0].clips.clips, c.videos[0].clips.clips);
}

TEST(Synth, GroundTruthDisjointSortedAndOrdered) {
  audit::GroundTruthAccess access;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto corpus = generate_corpus(quick(seed));
    for (const auto& v : corpus.videos) {
      ASSERT_GE(v.paragraph.size(), 2u);
      ASSERT_LE(v.paragraph.size(), 3u);
      for (std::size_t s = 0; s < v.paragraph.size(); ++s) {
        const auto& gt = v.paragraph[s].ground_truth();
        ASSERT_GE(gt.length(), 4.0);
        ASSERT_LE(gt.length(), 10.0);
        ASSERT_GE(gt.start, 0.0);
        ASSERT_LE(gt.end, v.duration);
        if (s > 0) ASSERT_GT(gt.start, v.paragraph[s - 1].ground_truth().end);
      }
      const auto restored = restore_paragraph_order(v);
      for (std::size_t s = 0; s < v.paragraph.size(); ++s)
        ASSERT_EQ(restored.paragraph[s].text, v.paragraph[s].text);
    }
  }
}

TEST(Synth, SplitIsTrailingFraction) {
  const auto corpus = generate_corpus(quick());
  for (std::size_t i = 0; i < corpus.videos.size(); ++i)
    EXPECT_EQ(corpus.videos[i].split, i >= 30 ? Split::kTest : Split::kTrain);
}

TEST(Synth, UnambiguousNoiselessOracleIsPerfect) {
  SynthConfig c = quick(2);
  c.ambiguity_rate = 0.0;
  c.noise_std = 0.0;
  const auto corpus = generate_corpus(c);
  EXPECT_DOUBLE_EQ(oracle(corpus, dense_grid(c.num_clips), 0.5).recall, 1.0);
  EXPECT_DOUBLE_EQ(oracle(corpus, desk_grid(), 0.5).recall, 1.0);
  EXPECT_DOUBLE_EQ(oracle(corpus, desk_grid(), 0.5).temporal, 1.0);
}

TEST(Synth, DefaultCorpusIsAmbiguous) {
  SynthConfig c;
  EXPECT_LT(oracle(generate_corpus(c), desk_grid(), 0.5).temporal, 0.9);
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig c;
  c.ambiguity_rate = 1.5;
  EXPECT_THROW(generate_corpus(c), std::invalid_argument);
  c = SynthConfig{};
  c.num_event_types = 2;
  EXPECT_THROW(generate_corpus(c), std::invalid_argument);
  c = SynthConfig{};
  c.num_clips = 8;  // three events of length >= 4 cannot fit
  c.min_events = 3;
  EXPECT_THROW(generate_corpus(c), std::runtime_error);
}

TEST(ChanceBaseline, SingleProposalIsExact) {
  const auto corpus = generate_corpus(quick());
  ProposalGrid one;
  one.num_clips = 32;
  one.segments = {{0, 16}};
  const std::vector<double> ms{0.0, 0.2};
  const auto r = chance_baseline(corpus.videos, one, ms, 3, 1);
  audit::GroundTruthAccess access;
  std::size_t n = 0, hit0 = 0, hit2 = 0;
  for (const auto& v : corpus.videos) {
    for (const auto& s : v.paragraph) {
      const double value = iou(TimeSpan{0, 16}, s.ground_truth());
      ++n;
      hit0 += value > 0.0;
      hit2 += value > 0.2;
    }
  }
  EXPECT_DOUBLE_EQ(r.at(0.0), static_cast<double>(hit0) / n);
  EXPECT_DOUBLE_EQ(r.at(0.2), static_cast<double>(hit2) / n);
}

TEST(ChanceBaseline, MatchesExhaustiveExpectation) {
  const auto corpus = generate_corpus(quick());
  const auto grid = desk_grid();
  const std::vector<double> ms{0.0, 0.5, 1.0};
  const auto r = chance_baseline(corpus.videos, grid, ms, 400, 9);
  audit::GroundTruthAccess access;
  double expect0 = 0, expect5 = 0;
  std::size_t n = 0;
  for (const auto& v : corpus.videos) {
    for (const auto& s : v.paragraph) {
      double c0 = 0, c5 = 0;
      for (std::size_t l = 0; l < grid.size(); ++l) {
        const TimeSpan p{static_cast<double>(grid[l].start), static_cast<double>(grid[l].end)};
        c0 += iou(p, s.ground_truth()) > 0.0;
        c5 += iou(p, s.ground_truth()) > 0.5;
      }
      expect0 += c0 / grid.size();
      expect5 += c5 / grid.size();
      ++n;
    }
  }
  EXPECT_NEAR(r.at(0.0), expect0 / n, 0.01);
  EXPECT_NEAR(r.at(0.5), expect5 / n, 0.01);
  EXPECT_EQ(r.at(1.0), 0.0);
}

TEST(WriteCorpus, LoadsBackWithStableDigest) {
  SynthConfig c = quick(6);
  c.num_videos = 10;
  const auto corpus = generate_corpus(c);
  const auto dir = crm::testing::temp_dir("synth_a");
  const std::string digest = write_corpus(corpus, c, dir);
  EXPECT_EQ(write_corpus(generate_corpus(c), c, crm::testing::temp_dir("synth_b")), digest);
  c.seed = 7;
  EXPECT_NE(write_corpus(generate_corpus(c), c, crm::testing::temp_dir("synth_c")), digest);

  const auto manifest = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_EQ(manifest.at("digest"), digest);
  EXPECT_EQ(manifest.at("seed"), 6);

  const auto table = EmbeddingTable::load(dir / "embeddings.txt");
  CorpusConfig cc;
  cc.num_clips = c.num_clips;
  cc.pool_span = 1;
  cc.max_words = c.words_per_sentence;
  const auto loaded = load_corpus(dir / "annotations.json", dir / "features", table, cc);
  EXPECT_TRUE(loaded.skipped.empty());
  ASSERT_EQ(loaded.records.size(), corpus.videos.size());
  audit::GroundTruthAccess access;
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const auto& a = corpus.videos[i];
    const auto& b = loaded.records[i];
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.split, b.split);
    EXPECT_TRUE(a.clips.clips.isApprox(b.clips.clips, 1e-6));
    ASSERT_EQ(a.paragraph.size(), b.paragraph.size());
    for (std::size_t s = 0; s < a.paragraph.size(); ++s) {
      EXPECT_EQ(a.paragraph[s].ground_truth().start, b.paragraph[s].ground_truth().start);
      EXPECT_EQ(a.paragraph[s].tokens.embeddings, b.paragraph[s].tokens.embeddings);
    }
  }
}
