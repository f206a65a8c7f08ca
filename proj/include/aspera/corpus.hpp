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
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "aspera/rng.hpp"

namespace aspera {

struct Review {
  std::string review_id;  // unique within a corpus
  std::string user_id;
  std::string item_id;
  double rating = 0.0;  // stars in [1,5]
  std::vector<std::string> tokens;
};

struct TokenizerOptions {
  bool remove_stopwords = true;
  std::size_t min_token_length = 2;
};

inline const std::unordered_set<std::string>& english_stopwords() {
  static const std::unordered_set<std::string> kStopwords = {
      "a", "about", "above", "after", "again", "against", "all", "am", "an", "and",
      "any", "are", "as", "at", "be", "because", "been", "before", "being", "below",
      "between", "both", "but", "by", "can", "cannot", "could", "did", "do", "does",
      "doing", "down", "during", "each", "few", "for", "from", "further", "had",
      "has", "have", "having", "he", "her", "here", "hers", "herself", "him",
      "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself",
      "me", "more", "most", "my", "myself", "no", "nor", "not", "of", "off", "on",
      "once", "only", "or", "other", "ought", "our", "ours", "ourselves", "out",
      "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
      "the", "their", "theirs", "them", "themselves", "then", "there", "these",
      "they", "this", "those", "through", "to", "too", "under", "until", "up",
      "very", "was", "we", "were", "what", "when", "where", "which", "while",
      "who", "whom", "why", "with", "would", "you", "your", "yours", "yourself",
      "yourselves",
  };
  return kStopwords;
}

/// Lowercase and split on non-alphanumeric runs, then drop stopwords and
/// tokens shorter than min_token_length.
inline std::vector<std::string> tokenize(const std::string& text,
                                         const TokenizerOptions& opts = {}) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.size() >= opts.min_token_length &&
        (!opts.remove_stopwords || english_stopwords().count(cur) == 0))
      out.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c))
      cur.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
  }
  flush();
  return out;
}

struct IngestStats {
  long parsed = 0;
  long skipped_malformed = 0;  // bad JSON, missing fields, bad rating
  long skipped_empty = 0;      // no tokens left after preprocessing
};

/// Read an Amazon 5-core style JSON-lines file: one object per line with
/// reviewerID, asin, overall, reviewText. Malformed lines are counted and
/// skipped; an unreadable file or a file with zero valid reviews is fatal.
inline std::vector<Review> ingest_json_lines(const std::string& path,
                                             const TokenizerOptions& opts = {},
                                             IngestStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("ingest: cannot open " + path);
  IngestStats local;
  std::vector<Review> reviews;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("reviewerID") ||
        !j.contains("asin") || !j.contains("overall") || !j.contains("reviewText") ||
        !j["reviewerID"].is_string() || !j["asin"].is_string() ||
        !j["overall"].is_number() || !j["reviewText"].is_string()) {
      ++local.skipped_malformed;
      continue;
    }
    double rating = j["overall"].get<double>();
    if (rating < 1.0 || rating > 5.0) {
      ++local.skipped_malformed;
      continue;
    }
    Review r;
    r.review_id = "r" + std::to_string(line_no);
    r.user_id = j["reviewerID"].get<std::string>();
    r.item_id = j["asin"].get<std::string>();
    r.rating = rating;
    r.tokens = tokenize(j["reviewText"].get<std::string>(), opts);
    if (r.tokens.empty()) {
      ++local.skipped_empty;
      continue;
    }
    ++local.parsed;
    reviews.push_back(std::move(r));
  }
  if (stats) *stats = local;
  if (reviews.empty()) throw std::runtime_error("ingest: no valid reviews in " + path);
  return reviews;
}

/// Word-to-index map with reserved indices: 0 = padding, 1 = unknown.
/// Retained words get indices >= 2 ordered by descending frequency, ties
/// broken lexicographically.
class Vocabulary {
 public:
  static constexpr int kPadIndex = 0;
  static constexpr int kUnkIndex = 1;

  Vocabulary() {
    words_ = {"<pad>", "<unk>"};
    counts_ = {0, 0};
  }

  void add(const std::string& word, long count) {
    if (index_.count(word)) throw std::invalid_argument("Vocabulary: duplicate word " + word);
    index_[word] = static_cast<int>(words_.size());
    words_.push_back(word);
    counts_.push_back(count);
  }

  int index_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnkIndex : it->second;
  }

  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  const std::string& word(int index) const { return words_.at(index); }
  long count(int index) const { return counts_.at(index); }
  int size() const { return static_cast<int>(words_.size()); }  // includes pad/unk
  int real_words() const { return size() - 2; }

  /// One "word<TAB>index<TAB>count" line per retained word.
  void save(std::ostream& out) const {
    for (int i = 2; i < size(); ++i)
      out << words_[i] << '\t' << i << '\t' << counts_[i] << '\n';
  }

  static Vocabulary load(std::istream& in) {
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto t1 = line.find('\t');
      auto t2 = line.find('\t', t1 + 1);
      if (t1 == std::string::npos || t2 == std::string::npos)
        throw std::runtime_error("Vocabulary: malformed line: " + line);
      std::string word = line.substr(0, t1);
      int index = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
      long count = std::stol(line.substr(t2 + 1));
      if (index != v.size())
        throw std::runtime_error("Vocabulary: non-contiguous index for " + word);
      v.add(word, count);
    }
    return v;
  }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> words_;
  std::vector<long> counts_;
};

/// Retain exactly the words occurring at least min_count times.
inline Vocabulary build_vocabulary(const std::vector<Review>& reviews, long min_count) {
  if (min_count < 1) throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  if (reviews.empty()) throw std::invalid_argument("build_vocabulary: empty review list");
  std::unordered_map<std::string, long> freq;
  for (const Review& r : reviews)
    for (const std::string& t : r.tokens) ++freq[t];
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [word, count] : freq)
    if (count >= min_count) kept.emplace_back(word, count);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [word, count] : kept) v.add(word, count);
  return v;
}

struct EncodedReview {
  std::string review_id;
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::vector<int> token_indices;       // length exactly L_seq
  std::vector<std::uint8_t> mask;       // 1 = real token
  bool all_unknown = false;             // flagged: excluded from training batches

  int real_tokens() const {
    int n = 0;
    for (auto m : mask) n += m;
    return n;
  }

  /// Indices of the unmasked tokens, in order.
  std::vector<int> unmasked_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) out.push_back(token_indices[i]);
    return out;
  }
};

/// Map the first L_seq tokens to vocabulary indices (unknown words map to the
/// unknown index), right-pad with the padding index and mask 0.
inline EncodedReview encode_review(const Review& review, const Vocabulary& vocab, int l_seq) {
  if (l_seq < 1) throw std::invalid_argument("encode_review: L_seq must be >= 1");
  EncodedReview e;
  e.review_id = review.review_id;
  e.user_id = review.user_id;
  e.item_id = review.item_id;
  e.rating = review.rating;
  e.token_indices.assign(l_seq, Vocabulary::kPadIndex);
  e.mask.assign(l_seq, 0);
  bool any_known = false;
  int n = std::min<int>(l_seq, static_cast<int>(review.tokens.size()));
  for (int i = 0; i < n; ++i) {
    int idx = vocab.index_of(review.tokens[i]);
    e.token_indices[i] = idx;
    e.mask[i] = 1;
    if (idx != Vocabulary::kUnkIndex) any_known = true;
  }
  e.all_unknown = !any_known;
  return e;
}

struct SplitCorpus {
  std::vector<Review> train;
  std::vector<Review> validation;
  std::vector<Review> test;
  std::uint64_t seed = 0;
};

/// Random 90/10 train/test split, then 10% of train becomes validation.
/// Deterministic per seed.
inline SplitCorpus split_corpus(const std::vector<Review>& reviews, std::uint64_t seed) {
  if (reviews.size() < 10)
    throw std::invalid_argument("split_corpus: need at least 10 reviews, got " +
                                std::to_string(reviews.size()));
  std::vector<std::size_t> order(reviews.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n = reviews.size();
  std::size_t n_test = static_cast<std::size_t>(std::llround(0.1 * n));
  std::size_t n_val = static_cast<std::size_t>(std::llround(0.1 * (n - n_test)));
  SplitCorpus s;
  s.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const Review& r = reviews[order[i]];
    if (i < n_test)
      s.test.push_back(r);
    else if (i < n_test + n_val)
      s.validation.push_back(r);
    else
      s.train.push_back(r);
  }
  return s;
}

enum class PairKind { kSameUser, kSameItem };

/// Anchor + companion sharing a user or an item. Members index into the
/// train list the pairs were built from; the anchor carries the training
/// rating.
struct ReviewPair {
  int anchor = -1;
  int companion = -1;
  PairKind kind = PairKind::kSameUser;
};

/// One same-user and one same-item pair per review: the companion is the
/// next review in a seeded shuffle of the review's user (or item) group,
/// cyclically. Singleton groups pair the review with itself, so the total is
/// always exactly 2 x |train|.
inline std::vector<ReviewPair> build_pairs(const std::vector<EncodedReview>& train,
                                           std::uint64_t seed) {
  if (train.empty()) throw std::invalid_argument("build_pairs: empty train list");
  Rng rng(seed);
  std::vector<ReviewPair> pairs;
  pairs.reserve(2 * train.size());
  auto emit = [&](PairKind kind, auto key_of) {
    std::map<std::string, std::vector<int>> groups;
    for (std::size_t i = 0; i < train.size(); ++i)
      groups[key_of(train[i])].push_back(static_cast<int>(i));
    std::vector<int> companion(train.size(), -1);
    for (auto& [key, members] : groups) {
      rng.shuffle(members);
      for (std::size_t t = 0; t < members.size(); ++t)
        companion[members[t]] = members[(t + 1) % members.size()];
    }
    for (std::size_t i = 0; i < train.size(); ++i)
      pairs.push_back({static_cast<int>(i), companion[i], kind});
  };
  emit(PairKind::kSameUser, [](const EncodedReview& r) { return r.user_id; });
  emit(PairKind::kSameItem, [](const EncodedReview& r) { return r.item_id; });
  return pairs;
}

}  // namespace aspera
