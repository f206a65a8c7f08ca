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

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "aspera/eval.hpp"
#include "helpers.hpp"

using namespace aspera;

namespace {

std::shared_ptr<EmbeddingTable> table_with_vocab(int words, int dim, std::uint64_t seed) {
  auto vocab = std::make_shared<Vocabulary>();
  for (int i = 0; i < words; ++i) vocab->add("w" + std::to_string(i), 100 - i);
  Rng rng(seed);
  auto t = std::make_shared<EmbeddingTable>();
  t->matrix = random_tensor(words + 2, dim, rng);
  for (int j = 0; j < dim; ++j) t->matrix.at(0, j) = 0.0;
  t->vocab = std::move(vocab);
  return t;
}

TowerParams random_tower(int d, int k, std::uint64_t seed) {
  Rng rng(seed);
  TowerParams p;
  p.A = random_tensor(d, d, rng, -0.7, 0.7);
  p.W = random_tensor(k, d, rng, -0.7, 0.7);
  p.b = random_tensor(k, 1, rng, -0.7, 0.7);
  p.T = random_tensor(k, d, rng, -0.7, 0.7);
  return p;
}

EncodedReview review_of(std::vector<int> indices, int l_seq, double rating,
                        const std::string& user = "u", const std::string& item = "i") {
  EncodedReview e;
  e.review_id = "r";
  e.user_id = user;
  e.item_id = item;
  e.rating = rating;
  e.token_indices.assign(l_seq, Vocabulary::kPadIndex);
  e.mask.assign(l_seq, 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    e.token_indices[i] = indices[i];
    e.mask[i] = 1;
  }
  return e;
}

struct RatedReview {
  std::string user_id;
  std::string item_id;
  double rating;
};

}  // namespace

TEST_CASE("evaluate_mse is zero when predictions equal the ratings") {
  AsperaModel m;
  m.embeddings = table_with_vocab(4, 3, 61);
  m.user_tower = random_tower(3, 2, 62);
  m.item_tower = random_tower(3, 2, 63);
  m.user_tower.A = Tensor::identity(3);
  m.item_tower.A = Tensor::identity(3);
  // Single-token reviews predict the squared norm of the word vector.
  for (int j = 0; j < 3; ++j) m.embeddings->matrix.at(2, j) = 0.0;
  m.embeddings->matrix.at(2, 0) = 2.0;  // prediction = 4.0
  std::vector<EncodedReview> test = {review_of({2}, 4, 4.0), review_of({2}, 4, 4.0)};
  MseResult r = evaluate_mse(m, test);
  REQUIRE(r.clamped == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r.raw == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(r.evaluated == 2);
}

TEST_CASE("evaluate_mse matches a scalar-loop oracle on a 20-review fixture") {
  AsperaModel m;
  m.embeddings = table_with_vocab(10, 4, 64);
  m.user_tower = random_tower(4, 3, 65);
  m.item_tower = random_tower(4, 3, 66);
  Rng rng(67);
  std::vector<EncodedReview> test;
  for (int i = 0; i < 20; ++i) {
    std::vector<int> ids;
    int n = 1 + static_cast<int>(rng.uniform(5));
    for (int t = 0; t < n; ++t) ids.push_back(2 + static_cast<int>(rng.uniform(10)));
    test.push_back(review_of(ids, 6, rng.real(1, 5)));
  }
  double want_clamped = 0, want_raw = 0;
  for (const auto& r : test) {
    PredictResult p = predict(r, m);
    want_clamped += (p.clamped - r.rating) * (p.clamped - r.rating);
    want_raw += (p.raw - r.rating) * (p.raw - r.rating);
  }
  MseResult got = evaluate_mse(m, test);
  REQUIRE(got.clamped == Catch::Approx(want_clamped / 20).margin(1e-12));
  REQUIRE(got.raw == Catch::Approx(want_raw / 20).margin(1e-12));
  // Raw predictions here fall outside [1,5] for some reviews, so clamping helps.
  REQUIRE(got.clamped <= got.raw + 1e-15);
}

TEST_CASE("baseline_mse is zero when every rating is identical") {
  std::vector<RatedReview> train = {{"u1", "i1", 3}, {"u2", "i2", 3}};
  std::vector<RatedReview> test = {{"u1", "i2", 3}, {"u3", "i3", 3}};
  BaselineMse b = baseline_mse(train, test);
  REQUIRE(b.global_mean == 0.0);
  REQUIRE(b.user_mean == 0.0);
  REQUIRE(b.item_mean == 0.0);
}

TEST_CASE("unseen users fall back to the global mean") {
  std::vector<RatedReview> train = {{"u1", "i1", 5}, {"u1", "i2", 5}, {"u2", "i1", 1}};
  std::vector<RatedReview> test = {{"zz", "i1", 3}};
  BaselineMse b = baseline_mse(train, test);
  double global = (5 + 5 + 1) / 3.0;
  REQUIRE(b.global_mean == Catch::Approx((global - 3) * (global - 3)));
  REQUIRE(b.user_mean == Catch::Approx((global - 3) * (global - 3)));  // fallback
  double item1 = 3.0;  // (5+1)/2
  REQUIRE(b.item_mean == Catch::Approx((item1 - 3) * (item1 - 3)));
}

TEST_CASE("baseline_mse matches a brute-force grouping oracle on 100 reviews") {
  Rng rng(68);
  std::vector<RatedReview> train, test;
  for (int i = 0; i < 100; ++i)
    train.push_back({"u" + std::to_string(rng.uniform(9)),
                     "i" + std::to_string(rng.uniform(7)), rng.real(1, 5)});
  for (int i = 0; i < 40; ++i)
    test.push_back({"u" + std::to_string(rng.uniform(12)),
                    "i" + std::to_string(rng.uniform(9)), rng.real(1, 5)});

  // Oracle: recompute every group mean by scanning.
  auto mean_of = [&](auto pred) {
    double s = 0;
    long n = 0;
    for (const auto& r : train)
      if (pred(r)) {
        s += r.rating;
        ++n;
      }
    return n ? s / n : std::nan("");
  };
  double global = mean_of([](const RatedReview&) { return true; });
  double eg = 0, eu = 0, ei = 0;
  for (const auto& t : test) {
    double up = mean_of([&](const RatedReview& r) { return r.user_id == t.user_id; });
    double ip = mean_of([&](const RatedReview& r) { return r.item_id == t.item_id; });
    if (std::isnan(up)) up = global;
    if (std::isnan(ip)) ip = global;
    eg += (global - t.rating) * (global - t.rating);
    eu += (up - t.rating) * (up - t.rating);
    ei += (ip - t.rating) * (ip - t.rating);
  }
  BaselineMse b = baseline_mse(train, test);
  REQUIRE(b.global_mean == Catch::Approx(eg / 40).margin(1e-12));
  REQUIRE(b.user_mean == Catch::Approx(eu / 40).margin(1e-12));
  REQUIRE(b.item_mean == Catch::Approx(ei / 40).margin(1e-12));
}

TEST_CASE("global-mean baseline equals test variance around the train mean") {
  Rng rng(69);
  std::vector<RatedReview> train, test;
  for (int i = 0; i < 30; ++i) train.push_back({"u", "i", rng.real(1, 5)});
  for (int i = 0; i < 30; ++i) test.push_back({"u", "i", rng.real(1, 5)});
  double mean = 0;
  for (const auto& r : train) mean += r.rating;
  mean /= train.size();
  double var = 0;
  for (const auto& r : test) var += (r.rating - mean) * (r.rating - mean);
  var /= test.size();
  REQUIRE(baseline_mse(train, test).global_mean == Catch::Approx(var).margin(1e-12));
}

TEST_CASE("coherence stats count document frequencies once per document") {
  CoherenceStats s = build_coherence_stats({{"aa", "bb", "aa"}});
  REQUIRE(s.documents() == 1);
  REQUIRE(s.document_frequency("aa") == 1);
  REQUIRE(s.document_frequency("bb") == 1);
  REQUIRE(s.co_document_frequency("aa", "bb") == 1);
  REQUIRE(s.co_document_frequency("aa", "zz") == 0);
}

TEST_CASE("words that never share a document have zero co-frequency") {
  CoherenceStats s = build_coherence_stats({{"aa", "bb"}, {"cc", "dd"}});
  REQUIRE(s.co_document_frequency("aa", "cc") == 0);
  REQUIRE(s.co_document_frequency("bb", "dd") == 0);
}

namespace {

const std::vector<std::vector<std::string>> kFiveDocs = {
    {"aa", "bb", "cc"}, {"aa", "bb"}, {"aa", "dd"}, {"bb", "cc", "dd"}, {"ee", "aa", "bb"}};

}  // namespace

TEST_CASE("coherence stats equal exhaustive enumeration on the 5-document fixture") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  // Oracle: count by scanning every document for every word and pair.
  std::vector<std::string> words = {"aa", "bb", "cc", "dd", "ee"};
  for (const auto& a : words) {
    long df = 0;
    for (const auto& doc : kFiveDocs)
      df += std::find(doc.begin(), doc.end(), a) != doc.end();
    REQUIRE(s.document_frequency(a) == df);
    for (const auto& b : words) {
      long codf = 0;
      for (const auto& doc : kFiveDocs)
        codf += std::find(doc.begin(), doc.end(), a) != doc.end() &&
                std::find(doc.begin(), doc.end(), b) != doc.end();
      if (a != b) {
        REQUIRE(s.co_document_frequency(a, b) == codf);
        REQUIRE(s.co_document_frequency(a, b) <=
                std::min(s.document_frequency(a), s.document_frequency(b)));
      }
    }
  }
}

TEST_CASE("perfectly co-occurring words approach NPMI 1 as epsilon vanishes") {
  // aa and bb appear together in 3 of 5 documents and never separately:
  // P_ab = P_a = P_b = 0.6.
  std::vector<std::vector<std::string>> docs = {
      {"aa", "bb"}, {"aa", "bb"}, {"aa", "bb"}, {"cc"}, {"dd"}};
  CoherenceStats s = build_coherence_stats(docs, 1e-12);
  CoherenceResult r = coherence(s, {{"aa", "bb"}}, 2, CoherenceMetric::kNpmi);
  REQUIRE(r.mean == Catch::Approx(1.0).margin(1e-9));
  CoherenceStats s2 = build_coherence_stats(docs, 1e-6);
  CoherenceResult r2 = coherence(s2, {{"aa", "bb"}}, 2, CoherenceMetric::kNpmi);
  REQUIRE(std::fabs(r.mean - 1.0) <= std::fabs(r2.mean - 1.0));  // tighter as eps shrinks
}

TEST_CASE("independent words have PMI near zero") {
  // P_a = P_b = 1/2, P_ab = 1/4 exactly.
  std::vector<std::vector<std::string>> docs = {
      {"aa", "bb"}, {"aa", "xx"}, {"bb", "yy"}, {"zz"}};
  CoherenceStats s = build_coherence_stats(docs);
  CoherenceResult r = coherence(s, {{"aa", "bb"}}, 2, CoherenceMetric::kPmi);
  REQUIRE(r.mean == Catch::Approx(0.0).margin(1e-9));
}

TEST_CASE("coherence matches a brute-force pair enumeration oracle") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  std::vector<std::vector<std::string>> lists = {{"aa", "bb", "cc"}, {"dd", "ee", "aa"}};
  const double D = 5.0, eps = CoherenceStats::kDefaultEpsilon;

  auto oracle_pair = [&](const std::string& a, const std::string& b, bool npmi) {
    double pa = s.document_frequency(a) / D;
    double pb = s.document_frequency(b) / D;
    if (pa <= 0) pa = eps / D;
    if (pb <= 0) pb = eps / D;
    double pab = s.co_document_frequency(a, b) / D + eps / D;
    double pmi = std::log(pab / (pa * pb));
    return npmi ? pmi / -std::log(pab) : pmi;
  };
  for (bool npmi : {false, true}) {
    double want_mean = 0;
    CoherenceResult got = coherence(s, lists, 3,
                                    npmi ? CoherenceMetric::kNpmi : CoherenceMetric::kPmi);
    for (std::size_t l = 0; l < lists.size(); ++l) {
      double want = 0;
      int pairs = 0;
      for (std::size_t i = 0; i < lists[l].size(); ++i)
        for (std::size_t j = i + 1; j < lists[l].size(); ++j) {
          want += oracle_pair(lists[l][i], lists[l][j], npmi);
          ++pairs;
        }
      want /= pairs;
      REQUIRE(got.per_aspect[l] == Catch::Approx(want).margin(1e-12));
      want_mean += want;
    }
    REQUIRE(got.mean == Catch::Approx(want_mean / lists.size()).margin(1e-12));
  }
}

TEST_CASE("NPMI stays within [-1, 1] on all fixture pairs") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  std::vector<std::string> words = {"aa", "bb", "cc", "dd", "ee", "absent"};
  for (const auto& a : words)
    for (const auto& b : words) {
      if (a == b) continue;
      CoherenceResult r = coherence(s, {{a, b}}, 2, CoherenceMetric::kNpmi);
      REQUIRE(r.mean >= -1.0 - 1e-12);
      REQUIRE(r.mean <= 1.0 + 1e-12);
    }
}

TEST_CASE("coherence is invariant under list and word permutations") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  CoherenceResult a =
      coherence(s, {{"aa", "bb", "cc"}, {"dd", "ee", "aa"}}, 3, CoherenceMetric::kNpmi);
  CoherenceResult b =
      coherence(s, {{"aa", "ee", "dd"}, {"cc", "bb", "aa"}}, 3, CoherenceMetric::kNpmi);
  REQUIRE(a.mean == Catch::Approx(b.mean).margin(1e-14));
}

TEST_CASE("coherence curve rows match pointwise coherence") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  std::vector<std::vector<std::string>> lists = {{"aa", "bb", "cc", "dd", "ee"}};
  auto rows = coherence_curve(s, lists, {5});
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].n == 5);
  REQUIRE(rows[0].pmi ==
          Catch::Approx(coherence(s, lists, 5, CoherenceMetric::kPmi).mean).margin(1e-14));
  REQUIRE(rows[0].npmi ==
          Catch::Approx(coherence(s, lists, 5, CoherenceMetric::kNpmi).mean).margin(1e-14));

  auto empty = coherence_curve(s, lists, {});
  REQUIRE(empty.empty());
}

TEST_CASE("an off-topic sixth word lowers the coherence curve") {
  // Five words always together; "offtopic" never appears with them.
  std::vector<std::vector<std::string>> docs;
  for (int i = 0; i < 10; ++i) docs.push_back({"c0", "c1", "c2", "c3", "c4"});
  for (int i = 0; i < 10; ++i) docs.push_back({"offtopic", "noise" + std::to_string(i)});
  CoherenceStats s = build_coherence_stats(docs);
  std::vector<std::vector<std::string>> lists = {{"c0", "c1", "c2", "c3", "c4", "offtopic"}};
  auto rows = coherence_curve(s, lists, {5, 6});
  REQUIRE(rows[1].pmi < rows[0].pmi);
  REQUIRE(rows[1].npmi < rows[0].npmi);
}

TEST_CASE("coherence validates top_n and truncates over-long requests") {
  CoherenceStats s = build_coherence_stats(kFiveDocs);
  REQUIRE_THROWS_AS(coherence(s, {{"aa", "bb"}}, 1, CoherenceMetric::kPmi),
                    std::invalid_argument);
  // top_n beyond the list length truncates to the list.
  CoherenceResult full = coherence(s, {{"aa", "bb", "cc"}}, 3, CoherenceMetric::kPmi);
  CoherenceResult trunc = coherence(s, {{"aa", "bb", "cc"}}, 10, CoherenceMetric::kPmi);
  REQUIRE(trunc.mean == Catch::Approx(full.mean).margin(1e-14));
}

TEST_CASE("coherence csv format") {
  std::vector<CoherenceCurveRow> rows = {{5, 0.25, 0.5}};
  std::ostringstream out;
  write_coherence_csv(rows, out);
  REQUIRE(out.str() == "n,pmi,npmi\n5,0.25,0.5\n");
}

TEST_CASE("eval report serializes its sections") {
  EvalReport report;
  report.test_mse = {0.5, 0.7, 10};
  report.baselines = {1.0, 0.9, 0.8};
  report.coherence = {{5, 0.1, 0.2}};
  nlohmann::json j = report.to_json();
  REQUIRE(j["test_mse"]["clamped"] == 0.5);
  REQUIRE(j["baselines"]["item_mean"] == 0.8);
  REQUIRE(j["coherence"][0]["n"] == 5);
}

TEST_CASE("empty inputs are rejected") {
  REQUIRE_THROWS_AS(build_coherence_stats({}), std::invalid_argument);
  std::vector<RatedReview> some = {{"u", "i", 3}};
  REQUIRE_THROWS_AS(baseline_mse(std::vector<RatedReview>{}, some), std::invalid_argument);
  REQUIRE_THROWS_AS(baseline_mse(some, std::vector<RatedReview>{}), std::invalid_argument);
}
