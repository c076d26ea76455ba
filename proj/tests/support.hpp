#pragma once
// Shared fixtures and independent oracles for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "crm/data_model.hpp"
#include "crm/mmn.hpp"

namespace crm::testing {

inline Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

inline AttentionParams random_attention(int dim, std::mt19937_64& rng, double scale = 0.5) {
  AttentionParams p;
  p.wq = random_matrix(dim, dim, rng, scale);
  p.wk = random_matrix(dim, dim, rng, scale);
  p.wv = random_matrix(dim, dim, rng, scale);
  p.fc.weight = random_matrix(dim, dim, rng, scale);
  p.fc.bias = random_matrix(1, dim, rng, scale);
  return p;
}

// Scalar loops over the attention definition, no Eigen products.
struct LoopAttention {
  std::vector<std::vector<double>> output, weights;
};

inline LoopAttention loop_attention(const Matrix& t, const Matrix& r, const AttentionParams& p,
                                    const std::vector<bool>* mask = nullptr) {
  const int lt = static_cast<int>(t.rows()), lr = static_cast<int>(r.rows());
  const int d = static_cast<int>(t.cols());
  auto project = [&](const Matrix& x, const Matrix& w, int row, int out) {
    double s = 0;
    for (int i = 0; i < d; ++i) s += x(row, i) * w(out, i);
    return s;
  };
  LoopAttention res;
  res.output.assign(lt, std::vector<double>(d, 0.0));
  res.weights.assign(lt, std::vector<double>(lr, 0.0));
  for (int a = 0; a < lt; ++a) {
    std::vector<double> logit(lr, 0.0);
    double mx = -1e300;
    for (int b = 0; b < lr; ++b) {
      if (mask && !(*mask)[b]) continue;
      double s = 0;
      for (int k = 0; k < d; ++k) s += project(t, p.wq, a, k) * project(r, p.wk, b, k);
      logit[b] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, logit[b]);
    }
    double z = 0;
    for (int b = 0; b < lr; ++b) {
      if (mask && !(*mask)[b]) continue;
      res.weights[a][b] = std::exp(logit[b] - mx);
      z += res.weights[a][b];
    }
    for (int b = 0; b < lr; ++b) res.weights[a][b] /= z;
    std::vector<double> mid(d);
    for (int k = 0; k < d; ++k) {
      double s = t(a, k);
      for (int b = 0; b < lr; ++b) s += res.weights[a][b] * project(r, p.wv, b, k);
      mid[k] = s;
    }
    for (int o = 0; o < d; ++o) {
      double s = p.fc.bias(0, o);
      for (int k = 0; k < d; ++k) s += mid[k] * p.fc.weight(o, k);
      res.output[a][o] = s;
    }
  }
  return res;
}

inline EmbeddingTable letter_table(int dim, std::mt19937_64& rng) {
  EmbeddingTable t(dim);
  for (const char* w : {"a", "b", "c", "d", "e", "f", "g", "h"}) {
    t.add(w, random_matrix(dim, 1, rng).col(0));
  }
  return t;
}

// Random record with `lengths` sentences drawn from letter words; ground
// truth spans are consecutive and ordered.
inline VideoRecord random_video(const std::string& id, int num_sentences, int num_clips,
                                int valid, int dim_v, const EmbeddingTable& table,
                                std::mt19937_64& rng) {
  VideoRecord v;
  v.id = id;
  v.duration = num_clips;
  v.clips.clips = Matrix::Zero(num_clips, dim_v);
  v.clips.clips.topRows(valid) = random_matrix(valid, dim_v, rng);
  v.clips.valid_count = valid;
  const auto& words = table.words();
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  for (int s = 0; s < num_sentences; ++s) {
    Sentence sent;
    sent.text = words[pick(rng)] + " " + words[pick(rng)];
    sent.tokens = tokenize(sent.text, table, 20);
    sent.position = s;
    sent.annotation_index = s;
    sent.set_ground_truth(TimeSpan{static_cast<double>(s), static_cast<double>(s + 1)});
    v.paragraph.push_back(std::move(sent));
  }
  return v;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("crm_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace crm::testing
