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

#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspera/abae.hpp"
#include "aspera/corpus.hpp"
#include "aspera/embeddings.hpp"
#include "aspera/model.hpp"

namespace aspera {

/// Bad key value or type in a config file; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EmbeddingSource { kTrain, kLoad };

/// Every tunable of the pipeline, loaded from a flat key=value file.
/// Unknown keys warn (including Table-style "hidden_dim", which is accepted
/// and ignored); bad value types are fatal.
struct RunConfig {
  std::uint64_t seed = 42;
  long min_count = 10;
  int embedding_dim = 200;
  int aspects = 10;
  int words_per_sample = 224;
  int epochs = 18;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double margin = 1.0;
  double mse_weight = 1.0;
  double maxmargin_weight = 1.0;
  double ortho_weight = 0.1;
  int negatives = 20;  // ABAE negatives per batch
  ContextMode context = ContextMode::kMean;
  EmbeddingSource embeddings = EmbeddingSource::kTrain;
  std::string embedding_file;
  bool embeddings_trainable = false;
  bool regenerate_pairs = true;
  bool stopwords = true;
  int sgns_window = 10;
  int sgns_negatives = 5;
  int sgns_epochs = 5;
  double sgns_learning_rate = 0.025;
  double sgns_subsample = 1e-4;
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
  std::vector<int> coherence_n = {5, 10, 15, 20};

  void set(const std::string& key, const std::string& value) {
    auto as_long = [&](long& out) {
      std::size_t used = 0;
      try {
        out = std::stol(value, &used);
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
      }
      if (used != value.size())
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + value + "'");
    };
    auto as_int = [&](int& out) {
      long v;
      as_long(v);
      out = static_cast<int>(v);
    };
    auto as_double = [&](double& out) {
      std::size_t used = 0;
      try {
        out = std::stod(value, &used);
      } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
      }
      if (used != value.size())
        throw ConfigError("config: key '" + key + "' expects a number, got '" + value + "'");
    };
    auto as_bool = [&](bool& out) {
      if (value == "true" || value == "1" || value == "yes")
        out = true;
      else if (value == "false" || value == "0" || value == "no")
        out = false;
      else
        throw ConfigError("config: key '" + key + "' expects a boolean, got '" + value + "'");
    };

    if (key == "seed") {
      long v;
      as_long(v);
      if (v < 0) throw ConfigError("config: seed must be >= 0");
      seed = static_cast<std::uint64_t>(v);
    } else if (key == "min_count") {
      as_long(min_count);
    } else if (key == "embedding_dim") {
      as_int(embedding_dim);
    } else if (key == "aspects") {
      as_int(aspects);
    } else if (key == "words_per_sample") {
      as_int(words_per_sample);
    } else if (key == "epochs") {
      as_int(epochs);
    } else if (key == "batch_size") {
      as_int(batch_size);
    } else if (key == "learning_rate") {
      as_double(learning_rate);
    } else if (key == "margin") {
      as_double(margin);
    } else if (key == "mse_weight") {
      as_double(mse_weight);
    } else if (key == "maxmargin_weight") {
      as_double(maxmargin_weight);
    } else if (key == "ortho_weight") {
      as_double(ortho_weight);
    } else if (key == "negatives") {
      as_int(negatives);
    } else if (key == "context") {
      if (value == "mean")
        context = ContextMode::kMean;
      else if (value == "sum")
        context = ContextMode::kSum;
      else
        throw ConfigError("config: context must be 'mean' or 'sum', got '" + value + "'");
    } else if (key == "embeddings") {
      if (value == "train")
        embeddings = EmbeddingSource::kTrain;
      else if (value == "load")
        embeddings = EmbeddingSource::kLoad;
      else
        throw ConfigError("config: embeddings must be 'train' or 'load', got '" + value + "'");
    } else if (key == "embedding_file") {
      embedding_file = value;
    } else if (key == "embeddings_trainable") {
      as_bool(embeddings_trainable);
    } else if (key == "regenerate_pairs") {
      as_bool(regenerate_pairs);
    } else if (key == "stopwords") {
      as_bool(stopwords);
    } else if (key == "sgns_window") {
      as_int(sgns_window);
    } else if (key == "sgns_negatives") {
      as_int(sgns_negatives);
    } else if (key == "sgns_epochs") {
      as_int(sgns_epochs);
    } else if (key == "sgns_learning_rate") {
      as_double(sgns_learning_rate);
    } else if (key == "sgns_subsample") {
      as_double(sgns_subsample);
    } else if (key == "kmeans_restarts") {
      as_int(kmeans_restarts);
    } else if (key == "kmeans_iters") {
      as_int(kmeans_iters);
    } else if (key == "coherence_n") {
      coherence_n.clear();
      std::istringstream ss(value);
      std::string part;
      while (std::getline(ss, part, ',')) {
        std::size_t used = 0;
        int n = 0;
        try {
          n = std::stoi(part, &used);
        } catch (const std::exception&) {
          used = std::string::npos;
        }
        if (used != part.size())
          throw ConfigError("config: coherence_n expects comma-separated integers");
        coherence_n.push_back(n);
      }
    } else if (key == "hidden_dim") {
      // Present in published hyperparameter tables but unused by any formula
      // here; accepted so those configs load as-is.
      long ignored;
      as_long(ignored);
      std::cerr << "config: key 'hidden_dim' is accepted but ignored\n";
    } else {
      std::cerr << "config: unknown key '" << key << "' ignored\n";
    }
  }

  void validate() const {
    if (embedding_dim < 2) throw ConfigError("config: embedding_dim must be >= 2");
    if (aspects < 2) throw ConfigError("config: aspects must be >= 2");
    if (words_per_sample < 1) throw ConfigError("config: words_per_sample must be >= 1");
    if (epochs < 1) throw ConfigError("config: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("config: learning_rate must be > 0");
    if (margin <= 0) throw ConfigError("config: margin must be > 0");
    if (mse_weight < 0 || maxmargin_weight < 0 || ortho_weight < 0)
      throw ConfigError("config: loss weights must be >= 0");
    if (negatives < 1) throw ConfigError("config: negatives must be >= 1");
    if (min_count < 1) throw ConfigError("config: min_count must be >= 1");
    if (sgns_window < 1 || sgns_negatives < 1 || sgns_epochs < 1)
      throw ConfigError("config: sgns counts must be >= 1");
    if (sgns_learning_rate <= 0) throw ConfigError("config: sgns_learning_rate must be > 0");
    if (embeddings == EmbeddingSource::kLoad && embedding_file.empty())
      throw ConfigError("config: embeddings=load requires embedding_file");
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      std::string t = trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: expected key=value, got '" + t + "'");
      cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["min_count"] = min_count;
    j["embedding_dim"] = embedding_dim;
    j["aspects"] = aspects;
    j["words_per_sample"] = words_per_sample;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["margin"] = margin;
    j["mse_weight"] = mse_weight;
    j["maxmargin_weight"] = maxmargin_weight;
    j["ortho_weight"] = ortho_weight;
    j["negatives"] = negatives;
    j["context"] = context == ContextMode::kMean ? "mean" : "sum";
    j["embeddings"] = embeddings == EmbeddingSource::kTrain ? "train" : "load";
    j["embedding_file"] = embedding_file;
    j["embeddings_trainable"] = embeddings_trainable;
    j["regenerate_pairs"] = regenerate_pairs;
    j["stopwords"] = stopwords;
    j["sgns_window"] = sgns_window;
    j["sgns_negatives"] = sgns_negatives;
    j["sgns_epochs"] = sgns_epochs;
    j["sgns_learning_rate"] = sgns_learning_rate;
    j["sgns_subsample"] = sgns_subsample;
    j["kmeans_restarts"] = kmeans_restarts;
    j["kmeans_iters"] = kmeans_iters;
    j["coherence_n"] = coherence_n;
    return j;
  }

  TokenizerOptions tokenizer_options() const {
    TokenizerOptions t;
    t.remove_stopwords = stopwords;
    return t;
  }

  SgnsConfig sgns_config() const {
    SgnsConfig s;
    s.dim = embedding_dim;
    s.window = sgns_window;
    s.negatives = sgns_negatives;
    s.epochs = sgns_epochs;
    s.learning_rate = sgns_learning_rate;
    s.subsample = sgns_subsample;
    s.seed = seed;
    return s;
  }

  AbaeTrainConfig abae_config() const {
    AbaeTrainConfig a;
    a.aspects = aspects;
    a.margin = margin;
    a.negatives = negatives;
    a.ortho_weight = ortho_weight;
    a.epochs = epochs;
    a.batch_size = batch_size;
    a.learning_rate = learning_rate;
    a.seed = seed;
    a.context = context;
    a.embeddings_trainable = embeddings_trainable;
    a.kmeans_restarts = kmeans_restarts;
    a.kmeans_iters = kmeans_iters;
    return a;
  }

  AsperaTrainConfig aspera_config() const {
    AsperaTrainConfig c;
    c.aspects = aspects;
    c.words_per_sample = words_per_sample;
    c.epochs = epochs;
    c.batch_size = batch_size;
    c.learning_rate = learning_rate;
    c.margin = margin;
    c.mse_weight = mse_weight;
    c.maxmargin_weight = maxmargin_weight;
    c.ortho_weight = ortho_weight;
    c.seed = seed;
    c.context = context;
    c.embeddings_trainable = embeddings_trainable;
    c.regenerate_pairs = regenerate_pairs;
    c.kmeans_restarts = kmeans_restarts;
    c.kmeans_iters = kmeans_iters;
    return c;
  }
};

}  // namespace aspera
