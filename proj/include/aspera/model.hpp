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
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aspera/abae.hpp"
#include "aspera/adam.hpp"
#include "aspera/corpus.hpp"
#include "aspera/embeddings.hpp"

namespace aspera {

struct AsperaTrainConfig {
  int aspects = 10;        // k
  int words_per_sample = 224;  // L_seq
  int epochs = 18;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double margin = 1.0;
  double mse_weight = 1.0;        // alpha_mse
  double maxmargin_weight = 1.0;  // alpha_mm
  double ortho_weight = 0.1;      // lambda
  std::uint64_t seed = 42;
  ContextMode context = ContextMode::kMean;
  bool embeddings_trainable = false;
  bool regenerate_pairs = true;  // reshuffle pairs each epoch with seed+epoch
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
};

/// Dual-headed AspeRa model: a user tower and an item tower with disjoint
/// parameters over a shared embedding table.
struct AsperaModel {
  TowerParams user_tower;
  TowerParams item_tower;
  std::shared_ptr<EmbeddingTable> embeddings;
  AsperaTrainConfig config;
};

inline AsperaModel init_aspera_model(std::shared_ptr<EmbeddingTable> embeddings,
                                     const AsperaTrainConfig& cfg) {
  AbaeTrainConfig tower_cfg;
  tower_cfg.aspects = cfg.aspects;
  tower_cfg.seed = cfg.seed;
  tower_cfg.embeddings_trainable = cfg.embeddings_trainable;
  tower_cfg.kmeans_restarts = cfg.kmeans_restarts;
  tower_cfg.kmeans_iters = cfg.kmeans_iters;
  AsperaModel m;
  m.embeddings = std::move(embeddings);
  m.user_tower = init_tower(*m.embeddings, tower_cfg);
  m.item_tower = m.user_tower;
  m.config = cfg;
  return m;
}

/// Text and reconstructed embeddings of both pair members through both
/// towers; i is the anchor, j the companion.
struct PairEncodings {
  Encoding user_i, item_i, user_j, item_j;
};

inline PairEncodings encode_pair(const EncodedReview& anchor, const EncodedReview& companion,
                                 const AsperaModel& model) {
  PairEncodings pe;
  pe.user_i = encode(anchor, *model.embeddings, model.user_tower, model.config.context);
  pe.item_i = encode(anchor, *model.embeddings, model.item_tower, model.config.context);
  pe.user_j = encode(companion, *model.embeddings, model.user_tower, model.config.context);
  pe.item_j = encode(companion, *model.embeddings, model.item_tower, model.config.context);
  return pe;
}

/// MSE head: mean over the batch of (z_u' z_i - rating)^2 on the anchor
/// review, raw (unnormalized) dot products.
inline double mse_loss(const std::vector<std::pair<PairEncodings, double>>& batch) {
  if (batch.empty()) throw std::invalid_argument("mse_loss: empty batch");
  double s = 0.0;
  for (const auto& [pe, rating] : batch) {
    double pred = dot(pe.user_i.z, pe.item_i.z);
    double res = pred - rating;
    s += res * res;
  }
  return s / batch.size();
}

/// One alignment hinge: max(0, margin - r'z_own + r'z_other1 + r'z_other2)
/// over L2-normalized vectors.
inline double maxmargin_align(const Tensor& reconstructed, const Tensor& own,
                              const Tensor& other1, const Tensor& other2, double margin = 1.0) {
  Tensor rn = l2_normalized(reconstructed);
  double v = margin - dot(rn, l2_normalized(own)) + dot(rn, l2_normalized(other1)) +
             dot(rn, l2_normalized(other2));
  return v > 0.0 ? v : 0.0;
}

/// One same-entity hinge: max(0, margin - z_i'z_j + z_i'z'_i + z_i'z'_j)
/// over L2-normalized vectors. The user form runs on same-user pairs and the
/// item form symmetrically on same-item pairs.
inline double maxmargin_pair(const Tensor& z_i, const Tensor& z_j, const Tensor& other_i,
                             const Tensor& other_j, double margin = 1.0) {
  Tensor zn = l2_normalized(z_i);
  double v = margin - dot(zn, l2_normalized(z_j)) + dot(zn, l2_normalized(other_i)) +
             dot(zn, l2_normalized(other_j));
  return v > 0.0 ? v : 0.0;
}

/// Mean over the four (reconstruction, own, others) combinations of one pair:
/// (u_i, i_i, i_j), (u_j, i_i, i_j), (i_i, u_i, u_j), (i_j, u_i, u_j).
inline double maxmargin_align_pair(const PairEncodings& pe, double margin = 1.0) {
  double s = 0.0;
  s += maxmargin_align(pe.user_i.r, pe.user_i.z, pe.item_i.z, pe.item_j.z, margin);
  s += maxmargin_align(pe.user_j.r, pe.user_j.z, pe.item_i.z, pe.item_j.z, margin);
  s += maxmargin_align(pe.item_i.r, pe.item_i.z, pe.user_i.z, pe.user_j.z, margin);
  s += maxmargin_align(pe.item_j.r, pe.item_j.z, pe.user_i.z, pe.user_j.z, margin);
  return s / 4.0;
}

inline double maxmargin_pair_term(const PairEncodings& pe, PairKind kind, double margin = 1.0) {
  if (kind == PairKind::kSameUser)
    return maxmargin_pair(pe.user_i.z, pe.user_j.z, pe.item_i.z, pe.item_j.z, margin);
  return maxmargin_pair(pe.item_i.z, pe.item_j.z, pe.user_i.z, pe.user_j.z, margin);
}

struct PairSample {
  PairEncodings encodings;
  PairKind kind = PairKind::kSameUser;
  double rating = 0.0;  // anchor's rating
};

struct LossBreakdown {
  double total = 0.0;
  double mse = 0.0;
  double mm_align = 0.0;
  double mm_pair = 0.0;
  double ortho_user = 0.0;
  double ortho_item = 0.0;
};

/// alpha_mse * MSE + alpha_mm * (align + pair) + lambda * (ortho_u + ortho_i).
inline LossBreakdown total_loss(const std::vector<PairSample>& batch, const Tensor& user_T,
                                const Tensor& item_T, const AsperaTrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  LossBreakdown out;
  std::vector<std::pair<PairEncodings, double>> mse_batch;
  mse_batch.reserve(batch.size());
  for (const PairSample& s : batch) {
    mse_batch.emplace_back(s.encodings, s.rating);
    out.mm_align += maxmargin_align_pair(s.encodings, cfg.margin);
    out.mm_pair += maxmargin_pair_term(s.encodings, s.kind, cfg.margin);
  }
  out.mse = mse_loss(mse_batch);
  out.mm_align /= batch.size();
  out.mm_pair /= batch.size();
  out.ortho_user = ortho_penalty(user_T);
  out.ortho_item = ortho_penalty(item_T);
  out.total = cfg.mse_weight * out.mse + cfg.maxmargin_weight * (out.mm_align + out.mm_pair) +
              cfg.ortho_weight * (out.ortho_user + out.ortho_item);
  return out;
}

// ---------------------------------------------------------------------------
// Tape construction for training. Mirrors the plain functions above; the
// formula oracles in the test suite pin both routes to the same values.

struct PairVars {
  EncodeVars user_i, item_i, user_j, item_j;
};

inline Var align_hinge_on_tape(Tape& t, Var margin_c, Var recon, Var own, Var other1, Var other2) {
  Var rn = t.l2_normalize(recon);
  Var v = t.sub(margin_c, t.dot(rn, t.l2_normalize(own)));
  v = t.add(v, t.dot(rn, t.l2_normalize(other1)));
  v = t.add(v, t.dot(rn, t.l2_normalize(other2)));
  return t.hinge(v);
}

struct BatchLossVars {
  Var total, mse, mm_align, mm_pair, ortho_user, ortho_item;
};

/// Record the full AspeRa batch loss. pairs index into `reviews`.
inline BatchLossVars total_loss_on_tape(Tape& tape, Var embeddings,
                                        const TowerVars& user_tower, const TowerVars& item_tower,
                                        const std::vector<EncodedReview>& reviews,
                                        const std::vector<ReviewPair>& pairs,
                                        const AsperaTrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("total_loss: empty batch");
  Var margin_c = tape.constant_scalar(cfg.margin);
  Var mse_acc{-1}, align_acc{-1}, pair_acc{-1};
  auto accumulate = [&](Var& acc, Var term) {
    acc = acc.id < 0 ? term : tape.add(acc, term);
  };
  for (const ReviewPair& pr : pairs) {
    const EncodedReview& anchor = reviews[pr.anchor];
    const EncodedReview& companion = reviews[pr.companion];
    PairVars pv;
    pv.user_i = encode_on_tape(tape, embeddings, anchor.unmasked_indices(), user_tower,
                               cfg.context);
    pv.item_i = encode_on_tape(tape, embeddings, anchor.unmasked_indices(), item_tower,
                               cfg.context);
    pv.user_j = encode_on_tape(tape, embeddings, companion.unmasked_indices(), user_tower,
                               cfg.context);
    pv.item_j = encode_on_tape(tape, embeddings, companion.unmasked_indices(), item_tower,
                               cfg.context);

    // Rating head on the anchor review, raw dot product.
    Var residual = tape.sub(tape.dot(pv.user_i.z, pv.item_i.z),
                            tape.constant_scalar(anchor.rating));
    accumulate(mse_acc, tape.square(residual));

    Var a1 = align_hinge_on_tape(tape, margin_c, pv.user_i.r, pv.user_i.z, pv.item_i.z,
                                 pv.item_j.z);
    Var a2 = align_hinge_on_tape(tape, margin_c, pv.user_j.r, pv.user_j.z, pv.item_i.z,
                                 pv.item_j.z);
    Var a3 = align_hinge_on_tape(tape, margin_c, pv.item_i.r, pv.item_i.z, pv.user_i.z,
                                 pv.user_j.z);
    Var a4 = align_hinge_on_tape(tape, margin_c, pv.item_j.r, pv.item_j.z, pv.user_i.z,
                                 pv.user_j.z);
    accumulate(align_acc, tape.scale(tape.add(tape.add(a1, a2), tape.add(a3, a4)), 0.25));

    Var pair_term =
        pr.kind == PairKind::kSameUser
            ? align_hinge_on_tape(tape, margin_c, pv.user_i.z, pv.user_j.z, pv.item_i.z,
                                  pv.item_j.z)
            : align_hinge_on_tape(tape, margin_c, pv.item_i.z, pv.item_j.z, pv.user_i.z,
                                  pv.user_j.z);
    accumulate(pair_acc, pair_term);
  }
  double inv_n = 1.0 / static_cast<double>(pairs.size());
  BatchLossVars out;
  out.mse = tape.scale(mse_acc, inv_n);
  out.mm_align = tape.scale(align_acc, inv_n);
  out.mm_pair = tape.scale(pair_acc, inv_n);
  out.ortho_user = ortho_penalty_on_tape(tape, user_tower.T);
  out.ortho_item = ortho_penalty_on_tape(tape, item_tower.T);
  out.total = tape.add(
      tape.add(tape.scale(out.mse, cfg.mse_weight),
               tape.scale(tape.add(out.mm_align, out.mm_pair), cfg.maxmargin_weight)),
      tape.scale(tape.add(out.ortho_user, out.ortho_item), cfg.ortho_weight));
  return out;
}

struct PredictResult {
  double raw = 0.0;
  double clamped = 0.0;  // reported prediction, in [1,5]
};

/// Rating prediction from one review: z_u' z_i through the two towers.
inline PredictResult predict(const EncodedReview& review, const AsperaModel& model) {
  if (review.real_tokens() == 0)
    throw std::invalid_argument("predict: review has no tokens");
  Encoding zu = encode(review, *model.embeddings, model.user_tower, model.config.context);
  Encoding zi = encode(review, *model.embeddings, model.item_tower, model.config.context);
  PredictResult r;
  r.raw = dot(zu.z, zi.z);
  r.clamped = std::clamp(r.raw, 1.0, 5.0);
  return r;
}

struct EpochMetrics {
  int epoch = 0;
  double total = 0.0;
  double mse = 0.0;
  double mm_align = 0.0;
  double mm_pair = 0.0;
  double ortho_u = 0.0;
  double ortho_i = 0.0;
  double val_mse = 0.0;      // clamped predictions
  double val_mse_raw = 0.0;  // raw predictions
};

struct TrainResult {
  AsperaModel model;
  std::vector<EpochMetrics> log;
  bool diverged = false;
};

/// Validation MSE over encodable reviews; {clamped, raw}.
inline std::pair<double, double> validation_mse(const std::vector<EncodedReview>& reviews,
                                                const AsperaModel& model) {
  double s_clamped = 0.0, s_raw = 0.0;
  long n = 0;
  for (const EncodedReview& r : reviews) {
    if (r.real_tokens() == 0) continue;
    PredictResult p = predict(r, model);
    double rc = p.clamped - r.rating;
    double rr = p.raw - r.rating;
    s_clamped += rc * rc;
    s_raw += rr * rr;
    ++n;
  }
  if (n == 0) return {0.0, 0.0};
  return {s_clamped / n, s_raw / n};
}

/// Joint AspeRa training over review pairs. Pairs are rebuilt per epoch with
/// seed+epoch when cfg.regenerate_pairs is set, otherwise built once from
/// cfg.seed. Aborts on non-finite loss, returning the last finite state.
inline TrainResult train(const std::vector<EncodedReview>& train_reviews,
                         const std::vector<EncodedReview>& validation, AsperaModel model,
                         const AsperaTrainConfig& cfg) {
  if (train_reviews.empty()) throw std::invalid_argument("train: empty train set");
  if (cfg.mse_weight < 0 || cfg.maxmargin_weight < 0 || cfg.ortho_weight < 0 ||
      cfg.margin <= 0 || cfg.epochs < 1)
    throw std::invalid_argument("train: invalid training config");
  std::vector<int> usable;
  for (std::size_t i = 0; i < train_reviews.size(); ++i)
    if (!train_reviews[i].all_unknown && train_reviews[i].real_tokens() > 0)
      usable.push_back(static_cast<int>(i));
  if (usable.empty()) throw std::invalid_argument("train: no encodable reviews");
  std::vector<EncodedReview> trainable;
  trainable.reserve(usable.size());
  for (int i : usable) trainable.push_back(train_reviews[i]);

  TrainResult result;
  result.model = std::move(model);
  AsperaModel& m = result.model;
  m.config = cfg;

  int batch_size = std::max(1, std::min<int>(cfg.batch_size, 2 * (int)trainable.size()));
  Adam opt({cfg.learning_rate});
  Rng rng(cfg.seed);
  // With trainable embeddings the table is shared state; checkpoints need
  // their own copy or a diverged matrix would leak into the rollback.
  auto snapshot = [&]() {
    AsperaModel c = m;
    if (cfg.embeddings_trainable)
      c.embeddings = std::make_shared<EmbeddingTable>(*m.embeddings);
    return c;
  };
  AsperaModel last_good = snapshot();

  std::vector<ReviewPair> pairs = build_pairs(trainable, cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.regenerate_pairs && epoch > 0)
      pairs = build_pairs(trainable, cfg.seed + static_cast<std::uint64_t>(epoch));
    rng.shuffle(pairs);

    EpochMetrics em;
    em.epoch = epoch;
    int batches = 0;
    bool bad = false;
    for (std::size_t start = 0; start < pairs.size() && !bad; start += batch_size) {
      std::size_t end = std::min(pairs.size(), start + batch_size);
      std::vector<ReviewPair> batch(pairs.begin() + start, pairs.begin() + end);

      // A non-finite forward value is divergence, not a usage error; the
      // tape raises it as std::runtime_error.
      try {
        Tape tape;
        Var emb = cfg.embeddings_trainable ? tape.leaf(m.embeddings->matrix)
                                           : tape.constant(m.embeddings->matrix);
        TowerVars ut = tower_leaves(tape, m.user_tower);
        TowerVars it = tower_leaves(tape, m.item_tower);
        BatchLossVars loss = total_loss_on_tape(tape, emb, ut, it, trainable, batch, cfg);

        double total = tape.scalar_value(loss.total);
        if (!std::isfinite(total)) {
          bad = true;
          break;
        }
        em.total += total;
        em.mse += tape.scalar_value(loss.mse);
        em.mm_align += tape.scalar_value(loss.mm_align);
        em.mm_pair += tape.scalar_value(loss.mm_pair);
        em.ortho_u += tape.scalar_value(loss.ortho_user);
        em.ortho_i += tape.scalar_value(loss.ortho_item);
        ++batches;

        GradientMap grads = tape.backward(loss.total);
        std::vector<Tensor*> ps = {&m.user_tower.A, &m.user_tower.W, &m.user_tower.b,
                                   &m.user_tower.T, &m.item_tower.A, &m.item_tower.W,
                                   &m.item_tower.b, &m.item_tower.T};
        std::vector<const Tensor*> gs = {&grads.at(ut.A), &grads.at(ut.W), &grads.at(ut.b),
                                         &grads.at(ut.T), &grads.at(it.A), &grads.at(it.W),
                                         &grads.at(it.b), &grads.at(it.T)};
        if (cfg.embeddings_trainable) {
          ps.push_back(&m.embeddings->matrix);
          gs.push_back(&grads.at(emb));
        }
        opt.step(ps, gs);
      } catch (const std::invalid_argument&) {
        throw;
      } catch (const std::runtime_error&) {
        bad = true;
        break;
      }
    }
    if (bad || batches == 0) {
      std::cerr << "train: non-finite loss at epoch " << epoch
                << ", keeping last good checkpoint\n";
      result.model = last_good;
      result.diverged = true;
      break;
    }
    em.total /= batches;
    em.mse /= batches;
    em.mm_align /= batches;
    em.mm_pair /= batches;
    em.ortho_u /= batches;
    em.ortho_i /= batches;
    auto [vc, vr] = validation_mse(validation, m);
    em.val_mse = vc;
    em.val_mse_raw = vr;
    result.log.push_back(em);
    last_good = snapshot();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Model checkpoint: the two towers plus config and embedding reference.

inline constexpr const char* kModelMagic = "ASPERA-MODEL-v1";

inline nlohmann::json aspera_config_to_json(const AsperaTrainConfig& c) {
  return {
      {"aspects", c.aspects},
      {"words_per_sample", c.words_per_sample},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"margin", c.margin},
      {"mse_weight", c.mse_weight},
      {"maxmargin_weight", c.maxmargin_weight},
      {"ortho_weight", c.ortho_weight},
      {"seed", c.seed},
      {"context", c.context == ContextMode::kMean ? "mean" : "sum"},
      {"embeddings_trainable", c.embeddings_trainable},
      {"regenerate_pairs", c.regenerate_pairs},
      {"kmeans_restarts", c.kmeans_restarts},
      {"kmeans_iters", c.kmeans_iters},
  };
}

inline AsperaTrainConfig aspera_config_from_json(const nlohmann::json& j) {
  AsperaTrainConfig c;
  c.aspects = j.value("aspects", c.aspects);
  c.words_per_sample = j.value("words_per_sample", c.words_per_sample);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.margin = j.value("margin", c.margin);
  c.mse_weight = j.value("mse_weight", c.mse_weight);
  c.maxmargin_weight = j.value("maxmargin_weight", c.maxmargin_weight);
  c.ortho_weight = j.value("ortho_weight", c.ortho_weight);
  c.seed = j.value("seed", c.seed);
  c.context = j.value("context", "mean") == std::string("sum") ? ContextMode::kSum
                                                               : ContextMode::kMean;
  c.embeddings_trainable = j.value("embeddings_trainable", c.embeddings_trainable);
  c.regenerate_pairs = j.value("regenerate_pairs", c.regenerate_pairs);
  c.kmeans_restarts = j.value("kmeans_restarts", c.kmeans_restarts);
  c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
  return c;
}

inline void save_model(const AsperaModel& model, std::ostream& out,
                       const std::string& embeddings_file, const std::string& vocab_file,
                       const nlohmann::json& extra_config = nlohmann::json::object()) {
  nlohmann::json j;
  j["config"] = aspera_config_to_json(model.config);
  j["resolved_config"] = extra_config;
  j["seed"] = model.config.seed;
  j["embeddings_file"] = embeddings_file;
  j["vocab_file"] = vocab_file;
  j["user_tower"] = tower_to_json(model.user_tower);
  j["item_tower"] = tower_to_json(model.item_tower);
  out << kModelMagic << '\n';
  out << "created " << detail::iso_timestamp() << '\n';
  out << j.dump() << '\n';
}

struct ModelFileRefs {
  std::string embeddings_file;
  std::string vocab_file;
};

/// Load towers + config; the embedding table is loaded separately through
/// the returned file references.
inline AsperaModel load_model(std::istream& in, ModelFileRefs* refs = nullptr) {
  std::string magic, created, body;
  if (!std::getline(in, magic) || magic != kModelMagic)
    throw std::runtime_error("load_model: bad magic header");
  if (!std::getline(in, created) || created.rfind("created ", 0) != 0)
    throw std::runtime_error("load_model: missing created line");
  if (!std::getline(in, body)) throw std::runtime_error("load_model: missing body");
  nlohmann::json j = nlohmann::json::parse(body);
  AsperaModel m;
  m.config = aspera_config_from_json(j.at("config"));
  m.user_tower = tower_from_json(j.at("user_tower"));
  m.item_tower = tower_from_json(j.at("item_tower"));
  if (refs) {
    refs->embeddings_file = j.value("embeddings_file", "");
    refs->vocab_file = j.value("vocab_file", "");
  }
  return m;
}

}  // namespace aspera
