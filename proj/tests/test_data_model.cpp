#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "crm/data_model.hpp"
#include "support.hpp"

using namespace crm;
using crm::testing::temp_dir;

namespace {

// Independent window oracle: anchor = floor(i*F/L_c + 1/2) when F >= L_c,
// i otherwise.
Matrix brute_clips(const Matrix& frames, int lc, int span, int* valid) {
  const int f = static_cast<int>(frames.rows());
  Matrix out = Matrix::Zero(lc, frames.cols());
  *valid = 0;
  for (int i = 0; i < lc; ++i) {
    const int anchor = f >= lc ? static_cast<int>(std::floor(static_cast<double>(i) * f / lc + 0.5)) : i;
    bool any = false;
    for (int fr = anchor; fr < anchor + span && fr < f; ++fr) {
      for (int c = 0; c < frames.cols(); ++c) {
        out(i, c) = any ? std::max(out(i, c), frames(fr, c)) : frames(fr, c);
      }
      any = true;
    }
    if (any) *valid = i + 1;
  }
  return out;
}

Sentence with_span(double s, double e, int idx) {
  Sentence out;
  out.annotation_index = idx;
  out.position = idx;
  out.set_ground_truth(TimeSpan{s, e});
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST(BuildClips, ExactTiling) {
  Matrix frames = Matrix::Random(640, 3);
  const auto clips = build_clips({frames, std::nullopt}, 128, 5);
  EXPECT_EQ(clips.valid_count, 128);
  for (int i = 0; i < 128; ++i) {
    EXPECT_EQ(clips.clips.row(i), frames.middleRows(5 * i, 5).colwise().maxCoeff());
  }
}

TEST(BuildClips, SingleFrame) {
  Matrix frames = Matrix::Constant(1, 3, 2.0);
  const auto clips = build_clips({frames, std::nullopt}, 4, 5);
  EXPECT_EQ(clips.valid_count, 1);
  EXPECT_EQ(clips.clips.row(0), Eigen::RowVectorXd::Constant(3, 2.0));
  EXPECT_TRUE(clips.clips.bottomRows(3).isZero(0));
}

TEST(BuildClips, RampWindows) {
  Matrix frames(10, 2);
  for (int r = 0; r < 10; ++r) frames.row(r) << r, 10 - r;
  const auto clips = build_clips({frames, std::nullopt}, 4, 5);
  const int windows[4][2] = {{0, 5}, {3, 8}, {5, 10}, {8, 10}};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(clips.clips(i, 0), windows[i][1] - 1);
    EXPECT_EQ(clips.clips(i, 1), 10 - windows[i][0]);
  }
  EXPECT_EQ(clips.valid_count, 4);
}

TEST(BuildClips, MatchesBruteForceProperty) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const int f = std::uniform_int_distribution<int>(1, 30)(rng);
    const int d = std::uniform_int_distribution<int>(1, 4)(rng);
    const int lc = std::uniform_int_distribution<int>(1, 40)(rng);
    const int span = std::uniform_int_distribution<int>(1, 6)(rng);
    const Matrix frames = crm::testing::random_matrix(f, d, rng);
    int valid = 0;
    const Matrix expect = brute_clips(frames, lc, span, &valid);
    const auto got = build_clips({frames, std::nullopt}, lc, span);
    ASSERT_EQ(got.clips.rows(), lc);
    ASSERT_EQ(got.valid_count, valid) << "F=" << f << " Lc=" << lc;
    ASSERT_EQ(got.clips, expect);
    ASSERT_TRUE(got.clips.bottomRows(lc - valid).isZero(0));
  }
}

TEST(BuildClips, RejectsEmpty) {
  EXPECT_THROW(build_clips({Matrix(0, 3), std::nullopt}, 4, 5), DataError);
}

TEST(Tokenize, LookupTruncateOov) {
  EmbeddingTable t(2);
  t.add("a", Eigen::Vector2d(1, 2));
  t.add("man", Eigen::Vector2d(3, 4));
  t.add("runs", Eigen::Vector2d(5, 6));
  auto seq = tokenize("A man, runs!", t, 20);
  ASSERT_EQ(seq.length(), 3);
  EXPECT_EQ(seq.embeddings.row(1), Eigen::RowVector2d(3, 4));
  EXPECT_EQ(seq.tokens[0], "a");

  std::string long_text;
  for (int i = 0; i < 25; ++i) long_text += "w" + std::to_string(i) + " ";
  seq = tokenize(long_text, t, 20);
  ASSERT_EQ(seq.length(), 20);
  EXPECT_EQ(seq.tokens.back(), "w19");

  seq = tokenize("zzqx runs", t, 20);
  EXPECT_TRUE(seq.embeddings.row(0).isZero(0));
  EXPECT_EQ(seq.embeddings.row(1), Eigen::RowVector2d(5, 6));

  EXPECT_THROW(tokenize(" ,.; ", t, 20), DataError);
}

TEST(RestoreOrder, Examples) {
  VideoRecord v;
  v.paragraph = {with_span(30, 40, 0), with_span(10, 20, 1), with_span(20, 25, 2)};
  auto r = restore_paragraph_order(v);
  EXPECT_EQ(r.paragraph[0].annotation_index, 1);
  EXPECT_EQ(r.paragraph[1].annotation_index, 2);
  EXPECT_EQ(r.paragraph[2].annotation_index, 0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(r.paragraph[i].position, i);

  v.paragraph = {with_span(0, 1, 0), with_span(5, 6, 1)};
  r = restore_paragraph_order(v);
  EXPECT_EQ(r.paragraph[0].annotation_index, 0);

  v.paragraph = {with_span(10, 20, 0), with_span(10, 15, 1)};
  r = restore_paragraph_order(v);
  EXPECT_EQ(r.paragraph[0].annotation_index, 1);

  v.paragraph = {with_span(0, 1, 0), Sentence{}};
  EXPECT_THROW(restore_paragraph_order(v), DataError);
}

TEST(RestoreOrder, IdempotentAndSortedProperty) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> t(0, 6);
  for (int trial = 0; trial < 300; ++trial) {
    VideoRecord v;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) {
      const int s = t(rng);
      v.paragraph.push_back(with_span(s, s + 1 + t(rng), i));
    }
    const auto once = restore_paragraph_order(v);
    const auto twice = restore_paragraph_order(once);
    audit::GroundTruthAccess access;
    for (int i = 0; i < n; ++i) {
      ASSERT_EQ(once.paragraph[i].annotation_index, twice.paragraph[i].annotation_index);
      if (i > 0) {
        ASSERT_LE(once.paragraph[i - 1].ground_truth().start, once.paragraph[i].ground_truth().start);
      }
    }
  }
}

TEST(Audit, CountsReadsOutsideScope) {
  audit::reset();
  Sentence s = with_span(0, 1, 0);
  {
    audit::GroundTruthAccess access;
    (void)s.ground_truth();
  }
  EXPECT_EQ(audit::unauthorized_reads(), 0u);
  (void)s.ground_truth();
  EXPECT_EQ(audit::unauthorized_reads(), 1u);
  audit::reset();
  EXPECT_EQ(audit::unauthorized_reads(), 0u);
}

TEST(Features, RoundTripAndRejectCorrupt) {
  const auto dir = temp_dir("features");
  Matrix m(3, 2);
  m << 1.5, -2, 0.25, 3, 7, -0.125;
  write_features(dir / "x.crmf", m);
  const auto back = read_features(dir / "x.crmf");
  EXPECT_EQ(back.frames, m);

  write_text(dir / "bad.crmf", "NOPE");
  EXPECT_THROW(read_features(dir / "bad.crmf"), DataError);
  Matrix inf = m;
  inf(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(write_features(dir / "inf.crmf", inf), DataError);
}

TEST(Embeddings, SaveLoad) {
  const auto dir = temp_dir("embeddings");
  EmbeddingTable t(3);
  t.add("x", Eigen::Vector3d(0.5, -1, 2));
  t.add("y", Eigen::Vector3d(1, 1, 1));
  t.save(dir / "e.txt");
  const auto back = EmbeddingTable::load(dir / "e.txt");
  EXPECT_EQ(back.dim(), 3);
  ASSERT_NE(back.find("x"), nullptr);
  EXPECT_EQ(*back.find("x"), Eigen::Vector3d(0.5, -1, 2));
  EXPECT_EQ(back.find("z"), nullptr);
}

class CorpusFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = temp_dir("corpus");
    std::filesystem::create_directories(dir / "feat");
    table = EmbeddingTable(2);
    table.add("a", Eigen::Vector2d(1, 0));
    table.add("b", Eigen::Vector2d(0, 1));
    write_features(dir / "feat" / "v1.crmf", Matrix::Constant(20, 2, 1.0));
    write_features(dir / "feat" / "v2.crmf", Matrix::Constant(6, 2, 2.0));
  }
  std::filesystem::path dir;
  EmbeddingTable table;
};

TEST_F(CorpusFixture, LoadsTwoVideos) {
  write_text(dir / "ann.json", R"({
    "v1": {"duration": 10, "timestamps": [[5, 8], [0, 4]], "sentences": ["a b", "b"]},
    "v2": {"duration": 3, "timestamps": [[0, 1], [1, 2]], "sentences": ["a", "b a"], "split": "test"}
  })");
  const auto res = load_corpus(dir / "ann.json", dir / "feat", table, {8, 2, 20});
  ASSERT_EQ(res.records.size(), 2u);
  EXPECT_TRUE(res.skipped.empty());
  const auto& v1 = res.records[0];
  EXPECT_EQ(v1.paragraph.size(), 2u);
  EXPECT_EQ(v1.paragraph[0].annotation_index, 1);  // reordered by start
  EXPECT_EQ(v1.clips.valid_count, 8);
  const auto& v2 = res.records[1];
  EXPECT_EQ(v2.split, Split::kTest);
  // 6 frames on 8 clips: one frame per clip, the last two padded
  EXPECT_EQ(v2.clips.valid_count, 6);
  EXPECT_TRUE(v2.clips.clips.bottomRows(2).isZero(0));
}

TEST_F(CorpusFixture, ValidCountFollowsFrameCount) {
  write_features(dir / "feat" / "short.crmf", Matrix::Constant(3, 2, 1.0));
  write_text(dir / "ann.json", R"({"short": {"duration": 3, "timestamps": [[0, 1]], "sentences": ["a"]}})");
  // 3 frames on 8 clips: clips 0..2 hold frames, 3..7 are padding
  const auto res = load_corpus(dir / "ann.json", dir / "feat", table, {8, 1, 20});
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].clips.valid_count, 3);
  EXPECT_TRUE(res.records[0].clips.clips.bottomRows(5).isZero(0));
}

TEST_F(CorpusFixture, SkipsBadRecords) {
  write_text(dir / "ann.json", R"({
    "v1": {"duration": 10, "timestamps": [[5, 2]], "sentences": ["a"]},
    "v2": {"duration": 3, "timestamps": [[0, 1]], "sentences": ["a"]},
    "missing": {"duration": 3, "timestamps": [[0, 1]], "sentences": ["a"]},
    "outside": {"duration": 3, "timestamps": [[0, 4]], "sentences": ["a"]}
  })");
  const auto res = load_corpus(dir / "ann.json", dir / "feat", table, {8, 2, 20});
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].id, "v2");
  EXPECT_EQ(res.skipped.size(), 3u);
}

TEST_F(CorpusFixture, SerializeRoundTrip) {
  write_text(dir / "ann.json", R"({
    "v1": {"duration": 10, "timestamps": [[5, 8], [0, 4]], "sentences": ["a b", "b"], "split": "val"}
  })");
  const CorpusConfig cfg{8, 2, 20};
  const auto first = load_corpus(dir / "ann.json", dir / "feat", table, cfg);
  write_annotations(dir / "again.json", first.records);
  const auto second = load_corpus(dir / "again.json", dir / "feat", table, cfg);
  ASSERT_EQ(second.records.size(), 1u);
  const auto& a = first.records[0];
  const auto& b = second.records[0];
  EXPECT_EQ(a.id, b.id);
  EXPECT_EQ(a.duration, b.duration);
  EXPECT_EQ(a.split, b.split);
  EXPECT_EQ(a.clips.clips, b.clips.clips);
  audit::GroundTruthAccess access;
  for (std::size_t i = 0; i < a.paragraph.size(); ++i) {
    EXPECT_EQ(a.paragraph[i].text, b.paragraph[i].text);
    EXPECT_EQ(a.paragraph[i].annotation_index, b.paragraph[i].annotation_index);
    EXPECT_EQ(a.paragraph[i].ground_truth(), b.paragraph[i].ground_truth());
    EXPECT_EQ(a.paragraph[i].tokens.embeddings, b.paragraph[i].tokens.embeddings);
  }
}

TEST_F(CorpusFixture, AnnotationsOnly) {
  write_text(dir / "ann.json", R"({"nofeat": {"duration": 3, "timestamps": [[1, 2], [0, 1]], "sentences": ["a", "b"]}})");
  const auto res = load_annotations(dir / "ann.json");
  ASSERT_EQ(res.records.size(), 1u);
  EXPECT_EQ(res.records[0].paragraph[0].annotation_index, 1);
}
