// Copyright 2026 AspeRa Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aspera/corpus.hpp"
#include "aspera/rng.hpp"
#include "aspera/tensor.hpp"

namespace aspera {

/// Vocabulary-indexed dense word vectors. Row 0 (padding) is pinned to zero.
struct EmbeddingTable {
  std::shared_ptr<const Vocabulary> vocab;
  Tensor matrix;  // |V| x d

  int dim() const { return matrix.cols(); }

  Tensor row(int index) const {
    Tensor v(dim(), 1);
    for (int j = 0; j < dim(); ++j) v[j] = matrix.at(index, j);
    return v;
  }
};

struct SgnsConfig {
  int dim = 200;
  int window = 10;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  double subsample = 1e-4;
  std::uint64_t seed = 42;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Unigram draws proportional to count^0.75, via the classic precomputed table.
class UnigramTable {
 public:
  UnigramTable(const Vocabulary& vocab, std::size_t table_size = 1 << 20) {
    double total = 0.0;
    for (int i = 2; i < vocab.size(); ++i) total += std::pow(vocab.count(i), 0.75);
    table_.reserve(table_size);
    int word = 2;
    double cum = std::pow(vocab.count(word), 0.75) / total;
    for (std::size_t t = 0; t < table_size; ++t) {
      table_.push_back(word);
      if (static_cast<double>(t) / table_size > cum && word < vocab.size() - 1) {
        ++word;
        cum += std::pow(vocab.count(word), 0.75) / total;
      }
    }
  }

  int draw(Rng& rng) const { return table_[rng.index(table_.size())]; }

 private:
  std::vector<int> table_;
};

}  // namespace detail

/// Skip-gram with negative sampling over token documents. Out-of-vocabulary
/// words are dropped from the stream; context vectors are discarded and the
/// center vectors returned. Single-threaded, deterministic per seed.
///
/// on_epoch, when set, observes the table after each full pass.
inline EmbeddingTable train_sgns(
    const std::vector<std::vector<std::string>>& documents,
    std::shared_ptr<const Vocabulary> vocab, const SgnsConfig& cfg,
    const std::function<void(int, const EmbeddingTable&)>& on_epoch = {}) {
  if (!vocab || vocab->real_words() < 2)
    throw std::invalid_argument("train_sgns: vocabulary must hold at least 2 words");
  if (documents.empty()) throw std::invalid_argument("train_sgns: empty corpus");
  const int V = vocab->size();
  const int d = cfg.dim;

  // Map to index streams, dropping unknown words.
  std::vector<std::vector<int>> stream;
  long total_tokens = 0;
  for (const auto& doc : documents) {
    std::vector<int> ids;
    for (const auto& w : doc) {
      int idx = vocab->index_of(w);
      if (idx >= 2) ids.push_back(idx);
    }
    total_tokens += static_cast<long>(ids.size());
    if (!ids.empty()) stream.push_back(std::move(ids));
  }
  if (total_tokens == 0) throw std::invalid_argument("train_sgns: no in-vocabulary tokens");

  Rng rng(cfg.seed);
  Tensor centers(V, d);
  for (int i = 2; i < V; ++i)
    for (int j = 0; j < d; ++j) centers.at(i, j) = rng.real(-0.5 / d, 0.5 / d);
  Tensor contexts(V, d);

  detail::UnigramTable table(*vocab);
  const double lr0 = cfg.learning_rate;
  const double lr_floor = lr0 * 1e-4;
  const double total_positions = static_cast<double>(total_tokens) * cfg.epochs;
  long processed = 0;
  std::vector<double> hidden_grad(d);

  EmbeddingTable out;
  out.vocab = vocab;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& sentence : stream) {
      // Frequency subsampling, applied per occurrence.
      std::vector<int> kept;
      kept.reserve(sentence.size());
      for (int idx : sentence) {
        double f = static_cast<double>(vocab->count(idx)) / total_tokens;
        if (cfg.subsample > 0.0 && f > cfg.subsample) {
          double keep = std::sqrt(cfg.subsample / f);
          if (rng.real() >= keep) {
            ++processed;
            continue;
          }
        }
        kept.push_back(idx);
        ++processed;
      }
      double lr = std::max(lr_floor, lr0 * (1.0 - processed / total_positions));
      for (std::size_t i = 0; i < kept.size(); ++i) {
        int center = kept[i];
        int b = 1 + static_cast<int>(rng.uniform(cfg.window));
        std::size_t lo = i >= static_cast<std::size_t>(b) ? i - b : 0;
        std::size_t hi = std::min(kept.size() - 1, i + b);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          int context = kept[j];
          std::fill(hidden_grad.begin(), hidden_grad.end(), 0.0);
          for (int neg = 0; neg <= cfg.negatives; ++neg) {
            int target;
            double label;
            if (neg == 0) {
              target = context;
              label = 1.0;
            } else {
              target = table.draw(rng);
              if (target == context) continue;
              label = 0.0;
            }
            double score = 0.0;
            for (int c = 0; c < d; ++c) score += centers.at(center, c) * contexts.at(target, c);
            double g = (label - detail::sigmoid(score)) * lr;
            for (int c = 0; c < d; ++c) {
              hidden_grad[c] += g * contexts.at(target, c);
              contexts.at(target, c) += g * centers.at(center, c);
            }
          }
          for (int c = 0; c < d; ++c) centers.at(center, c) += hidden_grad[c];
        }
      }
    }
    if (on_epoch) {
      out.matrix = centers;
      on_epoch(epoch, out);
    }
  }

  // Unknown-word row: mean of the trained vectors, matching the pretrained
  // load rule. Padding row stays zero.
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int i = 2; i < V; ++i) s += centers.at(i, j);
    centers.at(Vocabulary::kUnkIndex, j) = V > 2 ? s / (V - 2) : 0.0;
  }
  out.matrix = std::move(centers);
  return out;
}

struct TextLoadReport {
  int loaded = 0;   // vocabulary words found in the file
  int missing = 0;  // vocabulary words initialized randomly
  int file_dim = 0;
};

/// Load "word v1 ... vd" text vectors for a vocabulary. Missing words get
/// zero-mean uniform rows in [-0.5/d, 0.5/d]; the unknown row is the mean of
/// the loaded rows; the padding row stays zero. An optional "count dim"
/// header line is auto-detected and skipped.
inline EmbeddingTable load_text_embeddings(const std::string& path,
                                           std::shared_ptr<const Vocabulary> vocab,
                                           std::uint64_t seed = 42,
                                           TextLoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_text_embeddings: cannot open " + path);
  std::string line;
  int d = -1;
  Tensor matrix;
  std::vector<bool> filled(vocab->size(), false);
  bool first = true;
  std::vector<double> unk_sum;
  int loaded_rows = 0;
  bool unk_from_file = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string f;
    while (ss >> f) fields.push_back(f);
    if (first && fields.size() == 2) {
      // Possible "count dim" header.
      char* end1 = nullptr;
      char* end2 = nullptr;
      std::strtol(fields[0].c_str(), &end1, 10);
      std::strtol(fields[1].c_str(), &end2, 10);
      if (*end1 == '\0' && *end2 == '\0') {
        first = false;
        continue;
      }
    }
    first = false;
    if (fields.size() < 2) throw std::runtime_error("load_text_embeddings: malformed line");
    int line_dim = static_cast<int>(fields.size()) - 1;
    if (d < 0) {
      d = line_dim;
      matrix = Tensor(vocab->size(), d);
      unk_sum.assign(d, 0.0);
    } else if (line_dim != d) {
      throw std::runtime_error("load_text_embeddings: inconsistent dimension " +
                               std::to_string(line_dim) + " vs " + std::to_string(d));
    }
    const std::string& word = fields[0];
    int idx;
    if (word == "<unk>") {
      idx = Vocabulary::kUnkIndex;
      unk_from_file = true;
    } else {
      if (!vocab->contains(word)) continue;
      idx = vocab->index_of(word);
    }
    if (filled[idx]) continue;
    for (int j = 0; j < d; ++j) {
      double x = std::stod(fields[j + 1]);
      matrix.at(idx, j) = x;
      if (idx >= 2) unk_sum[j] += x;
    }
    filled[idx] = true;
    if (idx >= 2) ++loaded_rows;
  }
  if (d < 0 || loaded_rows == 0)
    throw std::runtime_error("load_text_embeddings: no overlap with vocabulary in " + path);
  Rng rng(seed);
  int missing = 0;
  for (int i = 2; i < vocab->size(); ++i) {
    if (filled[i]) continue;
    ++missing;
    for (int j = 0; j < d; ++j) matrix.at(i, j) = rng.real(-0.5 / d, 0.5 / d);
  }
  if (!unk_from_file)
    for (int j = 0; j < d; ++j)
      matrix.at(Vocabulary::kUnkIndex, j) = unk_sum[j] / loaded_rows;
  if (report) *report = {loaded_rows, missing, d};
  EmbeddingTable t;
  t.vocab = std::move(vocab);
  t.matrix = std::move(matrix);
  return t;
}

/// Same text format as load_text_embeddings. The unknown row is written as
/// the pseudo-word "<unk>"; the padding row is implicit (always zero).
inline void save_text_embeddings(const EmbeddingTable& table, std::ostream& out) {
  char buf[32];
  auto write_row = [&](const std::string& word, int i) {
    out << word;
    for (int j = 0; j < table.dim(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", table.matrix.at(i, j));
      out << ' ' << buf;
    }
    out << '\n';
  };
  write_row("<unk>", Vocabulary::kUnkIndex);
  for (int i = 2; i < table.vocab->size(); ++i) write_row(table.vocab->word(i), i);
}

struct Centroids {
  Tensor centers;  // k x d
  std::vector<int> assignment;
  double objective = 0.0;  // sum of squared distances
};

namespace detail {

inline double sq_dist(const Tensor& points, int row, const Tensor& centers, int c) {
  double s = 0.0;
  for (int j = 0; j < points.cols(); ++j) {
    double diff = points.at(row, j) - centers.at(c, j);
    s += diff * diff;
  }
  return s;
}

inline Centroids lloyd_once(const Tensor& points, int k, int max_iters, Rng& rng,
                            std::vector<double>* history) {
  const int n = points.rows();
  const int d = points.cols();
  Centroids result;
  result.centers = Tensor(k, d);
  // k-means++ seeding.
  std::vector<double> dist2(n, std::numeric_limits<double>::max());
  int first = static_cast<int>(rng.index(n));
  for (int j = 0; j < d; ++j) result.centers.at(0, j) = points.at(first, j);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], sq_dist(points, i, result.centers, c - 1));
      total += dist2[i];
    }
    int chosen = n - 1;
    if (total > 0.0) {
      double r = rng.real() * total;
      double cum = 0.0;
      for (int i = 0; i < n; ++i) {
        cum += dist2[i];
        if (cum >= r) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<int>(rng.index(n));
    }
    for (int j = 0; j < d; ++j) result.centers.at(c, j) = points.at(chosen, j);
  }

  result.assignment.assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sq_dist(points, i, result.centers, 0);
      for (int c = 1; c < k; ++c) {
        double dd = sq_dist(points, i, result.centers, c);
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      objective += best_d;
      if (result.assignment[i] != best) {
        result.assignment[i] = best;
        changed = true;
      }
    }
    result.objective = objective;
    if (history) history->push_back(objective);
    if (!changed && iter > 0) break;
    // Recompute means; an empty cluster is reseeded to the point farthest
    // from its current assignment's center.
    Tensor sums(k, d);
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      ++counts[result.assignment[i]];
      for (int j = 0; j < d; ++j) sums.at(result.assignment[i], j) += points.at(i, j);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        int farthest = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double dd = sq_dist(points, i, result.centers, result.assignment[i]);
          if (dd > far_d) {
            far_d = dd;
            farthest = i;
          }
        }
        for (int j = 0; j < d; ++j) result.centers.at(c, j) = points.at(farthest, j);
        continue;
      }
      for (int j = 0; j < d; ++j) result.centers.at(c, j) = sums.at(c, j) / counts[c];
    }
  }
  // Final assignment pass so centers and assignment agree.
  double objective = 0.0;
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = sq_dist(points, i, result.centers, 0);
    for (int c = 1; c < k; ++c) {
      double dd = sq_dist(points, i, result.centers, c);
      if (dd < best_d) {
        best_d = dd;
        best = c;
      }
    }
    result.assignment[i] = best;
    objective += best_d;
  }
  result.objective = objective;
  return result;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ seeding and multiple restarts (best
/// objective kept). objective_history, when given, records the per-iteration
/// objective of the winning restart.
inline Centroids kmeans(const Tensor& points, int k, int max_iters, std::uint64_t seed,
                        int restarts = 10, std::vector<double>* objective_history = nullptr) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (points.rows() < k)
    throw std::invalid_argument("kmeans: fewer points than clusters");
  std::set<std::vector<double>> distinct;
  for (int i = 0; i < points.rows(); ++i) {
    std::vector<double> row(points.cols());
    for (int j = 0; j < points.cols(); ++j) row[j] = points.at(i, j);
    distinct.insert(std::move(row));
    if (static_cast<int>(distinct.size()) >= k) break;
  }
  if (static_cast<int>(distinct.size()) < k)
    throw std::invalid_argument("kmeans: k exceeds number of distinct points");

  Centroids best;
  std::vector<double> best_history;
  bool have = false;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(seed + static_cast<std::uint64_t>(r));
    std::vector<double> history;
    Centroids c = detail::lloyd_once(points, k, max_iters, rng, &history);
    if (!have || c.objective < best.objective) {
      best = std::move(c);
      best_history = std::move(history);
      have = true;
    }
  }
  if (objective_history) *objective_history = std::move(best_history);
  return best;
}

/// Top-n vocabulary words by cosine similarity to the query, excluding the
/// padding and unknown rows. Ties break by index.
inline std::vector<std::pair<std::string, double>> nearest_words(const EmbeddingTable& table,
                                                                 const Tensor& query, int n) {
  if (query.rows() != table.dim() || !query.is_vector())
    throw std::invalid_argument("nearest_words: query dimension " + query.shape_str() +
                                " vs table dim " + std::to_string(table.dim()));
  double qn = query.norm();
  std::vector<std::pair<double, int>> scored;
  for (int i = 2; i < table.vocab->size(); ++i) {
    double dot_qe = 0.0;
    double en = 0.0;
    for (int j = 0; j < table.dim(); ++j) {
      dot_qe += query[j] * table.matrix.at(i, j);
      en += table.matrix.at(i, j) * table.matrix.at(i, j);
    }
    en = std::sqrt(en);
    double cos = (qn > 1e-12 && en > 1e-12) ? dot_qe / (qn * en) : 0.0;
    scored.emplace_back(cos, i);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int take = std::min<int>(n, static_cast<int>(scored.size()));
  std::vector<std::pair<std::string, double>> out;
  out.reserve(take);
  for (int i = 0; i < take; ++i)
    out.emplace_back(table.vocab->word(scored[i].second), scored[i].first);
  return out;
}

}  // namespace aspera
