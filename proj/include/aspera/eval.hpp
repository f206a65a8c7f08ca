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
#include <iostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "aspera/corpus.hpp"
#include "aspera/model.hpp"

namespace aspera {

/// Document-level co-occurrence counts over a reference corpus: a word
/// counts once per document it appears in. Pair frequencies come from
/// posting-list intersections, so only queried pairs cost anything.
class CoherenceStats {
 public:
  static constexpr double kDefaultEpsilon = 1e-12;

  explicit CoherenceStats(double epsilon = kDefaultEpsilon) : epsilon_(epsilon) {}

  static CoherenceStats build(const std::vector<std::vector<std::string>>& documents,
                              double epsilon = kDefaultEpsilon) {
    if (documents.empty())
      throw std::invalid_argument("CoherenceStats: empty reference corpus");
    CoherenceStats s(epsilon);
    s.doc_count_ = static_cast<long>(documents.size());
    for (long doc = 0; doc < s.doc_count_; ++doc) {
      std::vector<std::string> unique(documents[doc].begin(), documents[doc].end());
      std::sort(unique.begin(), unique.end());
      unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
      for (const std::string& w : unique) s.postings_[w].push_back(doc);
    }
    return s;
  }

  long documents() const { return doc_count_; }
  double epsilon() const { return epsilon_; }

  long document_frequency(const std::string& word) const {
    auto it = postings_.find(word);
    return it == postings_.end() ? 0 : static_cast<long>(it->second.size());
  }

  long co_document_frequency(const std::string& a, const std::string& b) const {
    auto ia = postings_.find(a);
    auto ib = postings_.find(b);
    if (ia == postings_.end() || ib == postings_.end()) return 0;
    const auto& pa = ia->second;
    const auto& pb = ib->second;
    long count = 0;
    std::size_t i = 0, j = 0;
    while (i < pa.size() && j < pb.size()) {
      if (pa[i] == pb[j]) {
        ++count;
        ++i;
        ++j;
      } else if (pa[i] < pb[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    return count;
  }

 private:
  double epsilon_;
  long doc_count_ = 0;
  std::unordered_map<std::string, std::vector<long>> postings_;
};

inline CoherenceStats build_coherence_stats(const std::vector<std::vector<std::string>>& docs,
                                            double epsilon = CoherenceStats::kDefaultEpsilon) {
  return CoherenceStats::build(docs, epsilon);
}

enum class CoherenceMetric { kPmi, kNpmi };

namespace detail {

/// PMI = log((P_ab + eps/D) / (P_a * P_b)); NPMI = PMI / -log(P_ab + eps/D).
/// Words absent from the stats contribute probability eps/D.
inline double pair_score(const CoherenceStats& stats, const std::string& a, const std::string& b,
                         CoherenceMetric metric) {
  double d_count = static_cast<double>(stats.documents());
  double floor_p = stats.epsilon() / d_count;
  double pa = static_cast<double>(stats.document_frequency(a)) / d_count;
  double pb = static_cast<double>(stats.document_frequency(b)) / d_count;
  if (pa <= 0.0) pa = floor_p;
  if (pb <= 0.0) pb = floor_p;
  double pab = static_cast<double>(stats.co_document_frequency(a, b)) / d_count + floor_p;
  double pmi = std::log(pab / (pa * pb));
  if (metric == CoherenceMetric::kPmi) return pmi;
  double denom = -std::log(pab);
  // P_ab ~ 1: the pair co-occurs everywhere; the normalized limit is +/-1.
  if (denom < 1e-15) return pmi >= 0.0 ? 1.0 : -1.0;
  return pmi / denom;
}

}  // namespace detail

struct CoherenceResult {
  std::vector<double> per_aspect;
  double mean = 0.0;
};

/// Mean pairwise coherence over the first top_n words of each list, then the
/// mean across aspects.
inline CoherenceResult coherence(const CoherenceStats& stats,
                                 const std::vector<std::vector<std::string>>& word_lists,
                                 int top_n, CoherenceMetric metric) {
  if (top_n < 2) throw std::invalid_argument("coherence: top_n must be >= 2");
  if (word_lists.empty()) throw std::invalid_argument("coherence: no word lists");
  CoherenceResult out;
  for (const auto& list : word_lists) {
    int n = std::min<int>(top_n, static_cast<int>(list.size()));
    if (n < top_n)
      std::cerr << "coherence: list shorter than top_n, truncating to " << n << "\n";
    if (n < 2) throw std::invalid_argument("coherence: word list shorter than 2");
    double s = 0.0;
    long pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        s += detail::pair_score(stats, list[i], list[j], metric);
        ++pairs;
      }
    out.per_aspect.push_back(s / pairs);
  }
  for (double v : out.per_aspect) out.mean += v;
  out.mean /= out.per_aspect.size();
  return out;
}

struct CoherenceCurveRow {
  int n = 0;
  double pmi = 0.0;
  double npmi = 0.0;
  std::vector<double> pmi_per_aspect;
  std::vector<double> npmi_per_aspect;
};

inline std::vector<CoherenceCurveRow> coherence_curve(
    const CoherenceStats& stats, const std::vector<std::vector<std::string>>& word_lists,
    const std::vector<int>& n_values) {
  std::vector<CoherenceCurveRow> rows;
  for (int n : n_values) {
    CoherenceCurveRow row;
    row.n = n;
    CoherenceResult pmi = coherence(stats, word_lists, n, CoherenceMetric::kPmi);
    CoherenceResult npmi = coherence(stats, word_lists, n, CoherenceMetric::kNpmi);
    row.pmi = pmi.mean;
    row.npmi = npmi.mean;
    row.pmi_per_aspect = std::move(pmi.per_aspect);
    row.npmi_per_aspect = std::move(npmi.per_aspect);
    rows.push_back(row);
  }
  return rows;
}

/// CSV with header "n,pmi,npmi".
inline void write_coherence_csv(const std::vector<CoherenceCurveRow>& rows, std::ostream& out) {
  out << "n,pmi,npmi\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g", r.n, r.pmi, r.npmi);
    out << buf << '\n';
  }
}

struct MseResult {
  double clamped = 0.0;
  double raw = 0.0;
  long evaluated = 0;
};

/// Test MSE of the model's clamped predictions (raw also reported).
inline MseResult evaluate_mse(const AsperaModel& model, const std::vector<EncodedReview>& test) {
  if (test.empty()) throw std::invalid_argument("evaluate_mse: empty test set");
  MseResult r;
  for (const EncodedReview& review : test) {
    if (review.real_tokens() == 0) continue;
    PredictResult p = predict(review, model);
    double rc = p.clamped - review.rating;
    double rr = p.raw - review.rating;
    r.clamped += rc * rc;
    r.raw += rr * rr;
    ++r.evaluated;
  }
  if (r.evaluated == 0) throw std::invalid_argument("evaluate_mse: no encodable test reviews");
  r.clamped /= r.evaluated;
  r.raw /= r.evaluated;
  return r;
}

struct BaselineMse {
  double global_mean = 0.0;
  double user_mean = 0.0;
  double item_mean = 0.0;
};

/// Mean predictors scored on the test set. Unseen users/items fall back to
/// the global train mean.
template <typename ReviewLike>
inline BaselineMse baseline_mse(const std::vector<ReviewLike>& train,
                                const std::vector<ReviewLike>& test) {
  if (train.empty() || test.empty())
    throw std::invalid_argument("baseline_mse: empty train or test");
  double global = 0.0;
  std::unordered_map<std::string, std::pair<double, long>> by_user, by_item;
  for (const auto& r : train) {
    global += r.rating;
    auto& u = by_user[r.user_id];
    u.first += r.rating;
    ++u.second;
    auto& i = by_item[r.item_id];
    i.first += r.rating;
    ++i.second;
  }
  global /= train.size();
  BaselineMse out;
  for (const auto& r : test) {
    auto ui = by_user.find(r.user_id);
    auto ii = by_item.find(r.item_id);
    double up = ui == by_user.end() ? global : ui->second.first / ui->second.second;
    double ip = ii == by_item.end() ? global : ii->second.first / ii->second.second;
    out.global_mean += (global - r.rating) * (global - r.rating);
    out.user_mean += (up - r.rating) * (up - r.rating);
    out.item_mean += (ip - r.rating) * (ip - r.rating);
  }
  out.global_mean /= test.size();
  out.user_mean /= test.size();
  out.item_mean /= test.size();
  return out;
}

struct EvalReport {
  MseResult test_mse;
  BaselineMse baselines;
  std::vector<CoherenceCurveRow> coherence;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["test_mse"] = {{"clamped", test_mse.clamped},
                     {"raw", test_mse.raw},
                     {"evaluated", test_mse.evaluated}};
    j["baselines"] = {{"global_mean", baselines.global_mean},
                      {"user_mean", baselines.user_mean},
                      {"item_mean", baselines.item_mean}};
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : coherence)
      rows.push_back({{"n", r.n},
                      {"pmi", r.pmi},
                      {"npmi", r.npmi},
                      {"pmi_per_aspect", r.pmi_per_aspect},
                      {"npmi_per_aspect", r.npmi_per_aspect}});
    j["coherence"] = rows;
    return j;
  }
};

}  // namespace aspera
