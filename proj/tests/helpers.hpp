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

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aspera/corpus.hpp"
#include "aspera/rng.hpp"

namespace testutil {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    path_ = fs::temp_directory_path() /
            ("aspera_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Synthetic 5-core review corpus with 4-dim latent user/item factors that
// drive both the rating and the review words. Words come in two families:
// topic words tied to the dominant interaction factor, and sentiment words
// tied to the rating band, so review text genuinely predicts the rating.

struct LatentCorpusConfig {
  int users = 60;
  int items = 40;
  int reviews = 1000;
  int tokens_per_review = 24;
  std::uint64_t seed = 7;
};

inline std::string topic_word(int factor, int i) {
  return "topic" + std::to_string(factor) + "word" + std::to_string(i);
}

inline std::string band_word(int band, int i) {
  static const char* kBands[5] = {"awful", "poor", "fine", "good", "great"};
  return std::string(kBands[band]) + "tone" + std::to_string(i);
}

inline std::vector<aspera::Review> make_latent_corpus(const LatentCorpusConfig& cfg) {
  aspera::Rng rng(cfg.seed);
  const int kFactors = 4;
  std::vector<std::vector<double>> users(cfg.users), items(cfg.items);
  for (auto& u : users) {
    u.resize(kFactors);
    for (double& x : u) x = rng.real(-1, 1);
  }
  for (auto& v : items) {
    v.resize(kFactors);
    for (double& x : v) x = rng.real(-1, 1);
  }

  std::vector<aspera::Review> reviews;
  reviews.reserve(cfg.reviews);
  for (int n = 0; n < cfg.reviews; ++n) {
    // Round-robin over users and items keeps every group at >= 5 reviews,
    // mimicking the 5-core filtering.
    int ui = n % cfg.users;
    int ii = (n / cfg.users + n % cfg.users) % cfg.items;
    const auto& u = users[ui];
    const auto& v = items[ii];
    double score = 0.0;
    int dominant = 0;
    double dominant_abs = -1.0;
    for (int f = 0; f < kFactors; ++f) {
      double c = u[f] * v[f];
      score += c;
      if (std::fabs(c) > dominant_abs) {
        dominant_abs = std::fabs(c);
        dominant = f;
      }
    }
    double rating = 3.0 + 1.8 * score + rng.real(-0.25, 0.25);
    rating = std::min(5.0, std::max(1.0, rating));
    int band = std::min(4, std::max(0, static_cast<int>(std::lround(rating)) - 1));

    aspera::Review r;
    r.review_id = "r" + std::to_string(n + 1);
    r.user_id = "u" + std::to_string(ui);
    r.item_id = "b" + std::to_string(ii);
    r.rating = rating;
    for (int t = 0; t < cfg.tokens_per_review; ++t) {
      if (rng.real() < 0.5)
        r.tokens.push_back(band_word(band, static_cast<int>(rng.uniform(20))));
      else
        r.tokens.push_back(topic_word(dominant, static_cast<int>(rng.uniform(30))));
    }
    reviews.push_back(std::move(r));
  }
  return reviews;
}

/// The same corpus serialized in the Amazon 5-core JSON-lines schema.
inline void write_corpus_jsonl(const std::vector<aspera::Review>& reviews,
                               const std::string& path) {
  std::ofstream out(path);
  for (const auto& r : reviews) {
    std::string text;
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      if (i) text += ' ';
      text += r.tokens[i];
    }
    out << "{\"reviewerID\":\"" << r.user_id << "\",\"asin\":\"" << r.item_id
        << "\",\"overall\":" << r.rating << ",\"reviewText\":\"" << text << "\"}\n";
  }
}

// ---------------------------------------------------------------------------
// Planted-topic corpus: every document draws all its words from exactly one
// of `topics` disjoint vocabularies.

inline std::string planted_word(int topic, int i) {
  return "t" + std::to_string(topic) + "w" + std::to_string(i);
}

inline std::vector<std::vector<std::string>> make_planted_topics(int topics, int words_per_topic,
                                                                 int docs, int doc_len,
                                                                 std::uint64_t seed) {
  aspera::Rng rng(seed);
  std::vector<std::vector<std::string>> out;
  out.reserve(docs);
  for (int d = 0; d < docs; ++d) {
    int topic = d % topics;
    std::vector<std::string> doc;
    doc.reserve(doc_len);
    for (int t = 0; t < doc_len; ++t)
      doc.push_back(planted_word(topic, static_cast<int>(rng.uniform(words_per_topic))));
    out.push_back(std::move(doc));
  }
  return out;
}

}  // namespace testutil
