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

#include <ctime>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspera/adam.hpp"
#include "aspera/corpus.hpp"
#include "aspera/embeddings.hpp"
#include "aspera/rng.hpp"
#include "aspera/tape.hpp"

namespace aspera {

/// Whether the context vector y is the mean or the plain sum of the word
/// embeddings. Attention is scale-covariant in y, so the two differ.
enum class ContextMode { kMean, kSum };

/// One ABAE encoder: attention matrix A (d x d), aspect-probability
/// projection W (k x d) and bias b (k), aspect matrix T (k x d).
struct TowerParams {
  Tensor A;
  Tensor W;
  Tensor b;
  Tensor T;
  bool embeddings_trainable = false;

  int dim() const { return A.rows(); }
  int aspects() const { return T.rows(); }
};

/// Forward quantities of one encode: attention a (over the real tokens),
/// context y, text embedding z, aspect probabilities p, reconstruction r.
struct Encoding {
  Tensor attention;
  Tensor context;
  Tensor z;
  Tensor p;
  Tensor r;
};

struct TowerVars {
  Var A, W, b, T;
};

struct EncodeVars {
  Var words;  // gathered embedding rows, one per real token
  Var attention, context, z, p, r;
};

inline TowerVars tower_leaves(Tape& tape, const TowerParams& params) {
  return {tape.leaf(params.A), tape.leaf(params.W), tape.leaf(params.b), tape.leaf(params.T)};
}

inline TowerVars tower_constants(Tape& tape, const TowerParams& params) {
  return {tape.constant(params.A), tape.constant(params.W), tape.constant(params.b),
          tape.constant(params.T)};
}

/// Record one encode on the tape. token_ids are the review's real (unmasked)
/// token indices; padding never enters the graph, which realizes the masked
/// softmax over real tokens.
inline EncodeVars encode_on_tape(Tape& tape, Var embeddings, const std::vector<int>& token_ids,
                                 const TowerVars& tower, ContextMode mode) {
  if (token_ids.empty())
    throw std::invalid_argument("encode: review has no unmasked tokens");
  EncodeVars e;
  e.words = tape.gather_rows(embeddings, token_ids);  // n x d
  e.context = mode == ContextMode::kMean ? tape.mean_rows(e.words) : tape.sum_rows(e.words);
  Var ay = tape.matvec(tower.A, e.context);
  Var logits = tape.matvec(e.words, ay);
  e.attention = tape.softmax(logits);
  e.z = tape.matvec(tape.transpose(e.words), e.attention);
  e.p = tape.softmax(tape.add(tape.matvec(tower.W, e.z), tower.b));
  e.r = tape.matvec(tape.transpose(tower.T), e.p);
  return e;
}

/// Forward-only encode of a review.
inline Encoding encode(const EncodedReview& review, const EmbeddingTable& table,
                       const TowerParams& params, ContextMode mode = ContextMode::kMean) {
  std::vector<int> ids = review.unmasked_indices();
  Tape tape;
  Var emb = tape.constant(table.matrix);
  EncodeVars e = encode_on_tape(tape, emb, ids, tower_constants(tape, params), mode);
  Encoding out;
  out.attention = tape.value(e.attention);
  out.context = tape.value(e.context);
  out.z = tape.value(e.z);
  out.p = tape.value(e.p);
  out.r = tape.value(e.r);
  return out;
}

/// Contrastive max-margin reconstruction error: the mean over negatives of
/// hinge(margin - cos(r, z) + cos(r, n_i)), all vectors L2-normalized.
inline Var reconstruction_loss_on_tape(Tape& tape, Var r, Var z, const std::vector<Var>& negatives,
                                       double margin) {
  if (negatives.empty())
    throw std::invalid_argument("reconstruction_loss: need at least one negative");
  Var rn = tape.l2_normalize(r);
  Var zn = tape.l2_normalize(z);
  Var pos = tape.dot(rn, zn);
  Var margin_c = tape.constant_scalar(margin);
  Var acc{-1};
  for (Var neg : negatives) {
    Var nd = tape.dot(rn, tape.l2_normalize(neg));
    Var term = tape.hinge(tape.add(margin_c, tape.sub(nd, pos)));
    acc = acc.id < 0 ? term : tape.add(acc, term);
  }
  return tape.scale(acc, 1.0 / negatives.size());
}

inline double reconstruction_loss(const Encoding& enc, const std::vector<Tensor>& negatives,
                                  double margin = 1.0) {
  Tape tape;
  std::vector<Var> neg;
  neg.reserve(negatives.size());
  for (const Tensor& n : negatives) neg.push_back(tape.constant(n));
  Var loss = reconstruction_loss_on_tape(tape, tape.constant(enc.r), tape.constant(enc.z), neg,
                                         margin);
  return tape.scalar_value(loss);
}

/// || T_n T_n' - I ||_F^2 with row-normalized T_n.
inline Var ortho_penalty_on_tape(Tape& tape, Var aspect_matrix) {
  int k = tape.value(aspect_matrix).rows();
  Var tn = tape.l2_normalize(aspect_matrix);
  Var gram = tape.matmul(tn, tape.transpose(tn));
  return tape.frobenius_sq(tape.sub(gram, tape.constant(Tensor::identity(k))));
}

inline double ortho_penalty(const Tensor& aspect_matrix) {
  Tape tape;
  return tape.scalar_value(ortho_penalty_on_tape(tape, tape.constant(aspect_matrix)));
}

struct AbaeTrainConfig {
  int aspects = 10;          // k
  double margin = 1.0;
  int negatives = 20;        // m, negatives per batch
  double ortho_weight = 0.1; // lambda
  int epochs = 18;
  int batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 42;
  ContextMode context = ContextMode::kMean;
  bool embeddings_trainable = false;
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
};

/// Aspect matrix initialization: k-means centroids of the real word vectors,
/// rows L2-normalized.
inline Tensor init_aspect_matrix(const EmbeddingTable& table, int k, std::uint64_t seed,
                                 int restarts = 10, int iters = 100) {
  int real = table.vocab->real_words();
  if (real < k)
    throw std::invalid_argument("init_aspect_matrix: fewer words than aspects");
  Tensor points(real, table.dim());
  for (int i = 0; i < real; ++i)
    for (int j = 0; j < table.dim(); ++j) points.at(i, j) = table.matrix.at(i + 2, j);
  Centroids c = kmeans(points, k, iters, seed, restarts);
  Tensor t(k, table.dim());
  for (int i = 0; i < k; ++i) {
    double norm = 0.0;
    for (int j = 0; j < table.dim(); ++j) norm += c.centers.at(i, j) * c.centers.at(i, j);
    norm = std::sqrt(norm);
    for (int j = 0; j < table.dim(); ++j)
      t.at(i, j) = norm > 1e-12 ? c.centers.at(i, j) / norm : c.centers.at(i, j);
  }
  return t;
}

inline TowerParams init_tower(const EmbeddingTable& table, const AbaeTrainConfig& cfg) {
  TowerParams p;
  p.A = Tensor::identity(table.dim());
  p.W = Tensor(cfg.aspects, table.dim());
  p.b = Tensor(cfg.aspects, 1);
  p.T = init_aspect_matrix(table, cfg.aspects, cfg.seed, cfg.kmeans_restarts, cfg.kmeans_iters);
  p.embeddings_trainable = cfg.embeddings_trainable;
  return p;
}

struct AbaeTrainResult {
  TowerParams params;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Standalone ABAE training: per batch, the reconstruction loss of each
/// review against m negatives drawn from the batch's complement, plus the
/// orthogonality penalty, optimized with Adam. Deterministic per seed.
/// With embeddings_trainable the table is updated in place.
inline AbaeTrainResult train_abae(const std::vector<EncodedReview>& corpus,
                                  EmbeddingTable& table, const AbaeTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("train_abae: empty corpus");
  if (cfg.aspects < 2 || cfg.negatives < 1 || cfg.ortho_weight < 0 || cfg.margin <= 0 ||
      cfg.epochs < 1 || cfg.batch_size < 1)
    throw std::invalid_argument("train_abae: invalid training config");
  std::vector<int> usable;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!corpus[i].all_unknown && corpus[i].real_tokens() > 0)
      usable.push_back(static_cast<int>(i));
  if (usable.empty()) throw std::invalid_argument("train_abae: no encodable reviews");

  AbaeTrainResult result;
  result.params = init_tower(table, cfg);
  TowerParams& params = result.params;

  int batch_size = cfg.batch_size;
  if (batch_size > static_cast<int>(usable.size())) {
    std::cerr << "train_abae: batch size " << batch_size << " clamped to corpus size "
              << usable.size() << "\n";
    batch_size = static_cast<int>(usable.size());
  }

  Adam opt({cfg.learning_rate});
  Rng rng(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(usable);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < usable.size(); start += batch_size) {
      std::size_t end = std::min(usable.size(), start + batch_size);
      Tape tape;
      Var emb = cfg.embeddings_trainable ? tape.leaf(table.matrix) : tape.constant(table.matrix);
      TowerVars tower = tower_leaves(tape, params);

      // Negatives shared by the batch, sampled from its complement.
      std::vector<Var> negative_z;
      std::vector<bool> in_batch(corpus.size(), false);
      for (std::size_t i = start; i < end; ++i) in_batch[usable[i]] = true;
      bool complement_exists = usable.size() > end - start;
      for (int m = 0; m < cfg.negatives; ++m) {
        int pick;
        do {
          pick = usable[rng.index(usable.size())];
        } while (complement_exists && in_batch[pick]);
        EncodeVars neg = encode_on_tape(tape, emb, corpus[pick].unmasked_indices(), tower,
                                        cfg.context);
        negative_z.push_back(neg.z);
      }

      Var acc{-1};
      for (std::size_t i = start; i < end; ++i) {
        EncodeVars enc = encode_on_tape(tape, emb, corpus[usable[i]].unmasked_indices(), tower,
                                        cfg.context);
        Var loss = reconstruction_loss_on_tape(tape, enc.r, enc.z, negative_z, cfg.margin);
        acc = acc.id < 0 ? loss : tape.add(acc, loss);
      }
      Var batch_loss = tape.scale(acc, 1.0 / static_cast<double>(end - start));
      if (cfg.ortho_weight != 0.0)
        batch_loss = tape.add(batch_loss,
                              tape.scale(ortho_penalty_on_tape(tape, tower.T), cfg.ortho_weight));

      GradientMap grads = tape.backward(batch_loss);
      std::vector<Tensor*> ps = {&params.A, &params.W, &params.b, &params.T};
      std::vector<const Tensor*> gs = {&grads.at(tower.A), &grads.at(tower.W),
                                       &grads.at(tower.b), &grads.at(tower.T)};
      if (cfg.embeddings_trainable) {
        ps.push_back(&table.matrix);
        gs.push_back(&grads.at(emb));
      }
      opt.step(ps, gs);
      epoch_loss += tape.scalar_value(batch_loss);
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / batches);
  }
  return result;
}

/// Nearest vocabulary words to each aspect row of T.
inline std::vector<std::vector<std::pair<std::string, double>>> top_aspect_words(
    const TowerParams& params, const EmbeddingTable& table, int n) {
  std::vector<std::vector<std::pair<std::string, double>>> out;
  out.reserve(params.aspects());
  for (int a = 0; a < params.aspects(); ++a) {
    Tensor query(table.dim(), 1);
    for (int j = 0; j < table.dim(); ++j) query[j] = params.T.at(a, j);
    out.push_back(nearest_words(table, query, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tower checkpoint: magic line, created line, one JSON body line.

inline constexpr const char* kTowerMagic = "ASPERA-TOWER-v1";

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
  nlohmann::json j;
  j["rows"] = t.rows();
  j["cols"] = t.cols();
  j["data"] = t.data();
  return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  Tensor t(j.at("rows").get<int>(), j.at("cols").get<int>());
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  if (data.size() != t.size()) throw std::runtime_error("checkpoint: tensor size mismatch");
  t.data() = std::move(data);
  return t;
}

inline std::string iso_timestamp() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

}  // namespace detail

inline nlohmann::json tower_to_json(const TowerParams& params) {
  nlohmann::json j;
  j["d"] = params.dim();
  j["k"] = params.aspects();
  j["embeddings_trainable"] = params.embeddings_trainable;
  j["A"] = detail::tensor_to_json(params.A);
  j["W"] = detail::tensor_to_json(params.W);
  j["b"] = detail::tensor_to_json(params.b);
  j["T"] = detail::tensor_to_json(params.T);
  return j;
}

inline TowerParams tower_from_json(const nlohmann::json& j) {
  TowerParams p;
  p.A = detail::tensor_from_json(j.at("A"));
  p.W = detail::tensor_from_json(j.at("W"));
  p.b = detail::tensor_from_json(j.at("b"));
  p.T = detail::tensor_from_json(j.at("T"));
  p.embeddings_trainable = j.value("embeddings_trainable", false);
  if (p.A.rows() != j.at("d").get<int>() || p.T.rows() != j.at("k").get<int>())
    throw std::runtime_error("checkpoint: inconsistent tower shapes");
  return p;
}

inline void save_tower(const TowerParams& params, std::ostream& out,
                       const nlohmann::json& config = nlohmann::json::object(),
                       std::uint64_t seed = 0) {
  nlohmann::json j = tower_to_json(params);
  j["config"] = config;
  j["seed"] = seed;
  out << kTowerMagic << '\n';
  out << "created " << detail::iso_timestamp() << '\n';
  out << j.dump() << '\n';
}

inline TowerParams load_tower(std::istream& in, nlohmann::json* config = nullptr) {
  std::string magic, created, body;
  if (!std::getline(in, magic) || magic != kTowerMagic)
    throw std::runtime_error("load_tower: bad magic header");
  if (!std::getline(in, created) || created.rfind("created ", 0) != 0)
    throw std::runtime_error("load_tower: missing created line");
  if (!std::getline(in, body)) throw std::runtime_error("load_tower: missing body");
  nlohmann::json j = nlohmann::json::parse(body);
  if (config) *config = j.value("config", nlohmann::json::object());
  return tower_from_json(j);
}

}  // namespace aspera
