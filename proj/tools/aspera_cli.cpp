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

// Command-line pipeline: ingest, train-embeddings, train-abae, train-aspera,
// predict, evaluate, inspect-aspects, coherence, gradcheck. One seed drives
// every random choice; artifacts are written atomically.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aspera/aspera.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool g_debug = false;

void log_info(const std::string& msg) { std::cerr << "[aspera] " << msg << "\n"; }

void log_debug(const std::string& msg) {
  if (g_debug) std::cerr << "[aspera:debug] " << msg << "\n";
}

struct Args {
  std::string command;
  std::map<std::string, std::string> flags;
  std::vector<std::pair<std::string, std::string>> overrides;  // --set key=value

  bool has(const std::string& key) const { return flags.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = flags.find(key);
    return it == flags.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = flags.find(key);
    if (it == flags.end())
      throw std::runtime_error("missing required flag --" + key);
    return it->second;
  }
};

Args parse_args(int argc, char** argv) {
  Args a;
  if (argc < 2) throw std::runtime_error("no command given");
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0) throw std::runtime_error("unexpected argument: " + arg);
    std::string key = arg.substr(2);
    if (key == "set") {
      if (i + 1 >= argc) throw std::runtime_error("--set needs key=value");
      std::string kv = argv[++i];
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw std::runtime_error("--set needs key=value");
      a.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
      continue;
    }
    if (i + 1 >= argc) throw std::runtime_error("flag --" + key + " needs a value");
    a.flags[key] = argv[++i];
  }
  return a;
}

aspera::RunConfig load_config(const Args& args) {
  aspera::RunConfig cfg;
  if (args.has("config")) cfg = aspera::RunConfig::from_file(args.get("config"));
  for (const auto& [k, v] : args.overrides) cfg.set(k, v);
  if (args.has("seed")) cfg.set("seed", args.get("seed"));
  cfg.validate();
  return cfg;
}

std::string out_path(const Args& args, const std::string& name) {
  fs::path dir = args.get("out", ".");
  return (dir / name).string();
}

void write_reviews_jsonl(const std::vector<aspera::Review>& reviews, std::ostream& out) {
  for (const auto& r : reviews) {
    std::string text;
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      if (i) text += ' ';
      text += r.tokens[i];
    }
    json j = {{"reviewerID", r.user_id},
              {"asin", r.item_id},
              {"overall", r.rating},
              {"reviewText", text}};
    out << j.dump() << '\n';
  }
}

std::vector<aspera::Review> load_reviews(const std::string& path,
                                         const aspera::RunConfig& cfg) {
  aspera::IngestStats stats;
  auto reviews = aspera::ingest_json_lines(path, cfg.tokenizer_options(), &stats);
  log_info("ingested " + std::to_string(stats.parsed) + " reviews from " + path + " (" +
           std::to_string(stats.skipped_malformed) + " malformed, " +
           std::to_string(stats.skipped_empty) + " empty skipped)");
  return reviews;
}

std::vector<aspera::EncodedReview> encode_all(const std::vector<aspera::Review>& reviews,
                                              const aspera::Vocabulary& vocab, int l_seq) {
  std::vector<aspera::EncodedReview> out;
  out.reserve(reviews.size());
  for (const auto& r : reviews) out.push_back(aspera::encode_review(r, vocab, l_seq));
  return out;
}

std::vector<std::vector<std::string>> token_documents(const std::vector<aspera::Review>& reviews) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(reviews.size());
  for (const auto& r : reviews) docs.push_back(r.tokens);
  return docs;
}

std::shared_ptr<aspera::EmbeddingTable> make_embeddings(
    const std::vector<aspera::Review>& train, std::shared_ptr<const aspera::Vocabulary> vocab,
    const aspera::RunConfig& cfg) {
  auto table = std::make_shared<aspera::EmbeddingTable>();
  if (cfg.embeddings == aspera::EmbeddingSource::kLoad) {
    aspera::TextLoadReport report;
    *table = aspera::load_text_embeddings(cfg.embedding_file, vocab, cfg.seed, &report);
    log_info("loaded embeddings d=" + std::to_string(report.file_dim) + ": " +
             std::to_string(report.loaded) + " found, " + std::to_string(report.missing) +
             " randomly initialized");
  } else {
    log_info("training SGNS embeddings d=" + std::to_string(cfg.embedding_dim));
    *table = aspera::train_sgns(token_documents(train), vocab, cfg.sgns_config());
  }
  return table;
}

void save_vocab_file(const aspera::Vocabulary& vocab, const std::string& path) {
  aspera::atomic_write_file(path, [&](std::ostream& out) { vocab.save(out); });
}

void save_embeddings_file(const aspera::EmbeddingTable& table, const std::string& path) {
  aspera::atomic_write_file(path,
                            [&](std::ostream& out) { aspera::save_text_embeddings(table, out); });
}

void save_manifest(const Args& args, const aspera::RunConfig& cfg, const std::string& name,
                   json extra = json::object()) {
  extra["config"] = cfg.to_json();
  extra["seed"] = cfg.seed;
  aspera::atomic_write_file(out_path(args, name),
                            [&](std::ostream& out) { out << extra.dump(2) << '\n'; });
}

struct ModelBundle {
  aspera::AsperaModel model;
};

ModelBundle load_model_bundle(const Args& args, const aspera::RunConfig& cfg) {
  std::string path = args.require("model");
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model " + path);
  aspera::ModelFileRefs refs;
  ModelBundle b;
  b.model = aspera::load_model(in, &refs);
  fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& override_flag, const std::string& stored) {
    if (args.has(override_flag)) return args.get(override_flag);
    fs::path p(stored);
    if (p.is_absolute()) return stored;
    return (base / p).string();
  };
  std::string vocab_path = resolve("vocab", refs.vocab_file);
  std::string emb_path = resolve("embeddings", refs.embeddings_file);
  std::ifstream vin(vocab_path);
  if (!vin) throw std::runtime_error("cannot open vocabulary " + vocab_path);
  auto vocab = std::make_shared<aspera::Vocabulary>(aspera::Vocabulary::load(vin));
  b.model.embeddings = std::make_shared<aspera::EmbeddingTable>(
      aspera::load_text_embeddings(emb_path, vocab, cfg.seed));
  return b;
}

std::vector<std::vector<std::string>> aspect_word_lists(const aspera::TowerParams& tower,
                                                        const aspera::EmbeddingTable& table,
                                                        int n) {
  std::vector<std::vector<std::string>> lists;
  for (const auto& ranked : aspera::top_aspect_words(tower, table, n)) {
    std::vector<std::string> words;
    words.reserve(ranked.size());
    for (const auto& [w, s] : ranked) words.push_back(w);
    lists.push_back(std::move(words));
  }
  return lists;
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Args& args, const aspera::RunConfig& cfg) {
  auto reviews = load_reviews(args.require("input"), cfg);
  auto vocab = aspera::build_vocabulary(reviews, cfg.min_count);
  auto split = aspera::split_corpus(reviews, cfg.seed);
  save_vocab_file(vocab, out_path(args, "vocab.tsv"));
  aspera::atomic_write_file(out_path(args, "train.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.train, o); });
  aspera::atomic_write_file(out_path(args, "validation.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.validation, o); });
  aspera::atomic_write_file(out_path(args, "test.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.test, o); });
  save_manifest(args, cfg, "ingest.json",
                {{"reviews", reviews.size()},
                 {"vocabulary", vocab.real_words()},
                 {"train", split.train.size()},
                 {"validation", split.validation.size()},
                 {"test", split.test.size()}});
  log_info("split " + std::to_string(reviews.size()) + " reviews into " +
           std::to_string(split.train.size()) + "/" + std::to_string(split.validation.size()) +
           "/" + std::to_string(split.test.size()));
  return 0;
}

int cmd_train_embeddings(const Args& args, const aspera::RunConfig& cfg) {
  auto reviews = load_reviews(args.require("input"), cfg);
  auto vocab = std::make_shared<aspera::Vocabulary>(
      aspera::build_vocabulary(reviews, cfg.min_count));
  auto table = make_embeddings(reviews, vocab, cfg);
  save_vocab_file(*vocab, out_path(args, "vocab.tsv"));
  save_embeddings_file(*table, out_path(args, "embeddings.txt"));
  save_manifest(args, cfg, "embeddings.json",
                {{"vocabulary", vocab->real_words()}, {"dim", table->dim()}});
  return 0;
}

int cmd_train_abae(const Args& args, const aspera::RunConfig& cfg) {
  auto reviews = load_reviews(args.require("input"), cfg);
  std::shared_ptr<aspera::Vocabulary> vocab;
  if (args.has("vocab")) {
    std::ifstream vin(args.get("vocab"));
    if (!vin) throw std::runtime_error("cannot open vocabulary " + args.get("vocab"));
    vocab = std::make_shared<aspera::Vocabulary>(aspera::Vocabulary::load(vin));
  } else {
    vocab = std::make_shared<aspera::Vocabulary>(
        aspera::build_vocabulary(reviews, cfg.min_count));
  }
  std::shared_ptr<aspera::EmbeddingTable> table;
  if (args.has("embeddings")) {
    table = std::make_shared<aspera::EmbeddingTable>(
        aspera::load_text_embeddings(args.get("embeddings"), vocab, cfg.seed));
  } else {
    table = make_embeddings(reviews, vocab, cfg);
  }
  auto encoded = encode_all(reviews, *vocab, cfg.words_per_sample);
  auto result = aspera::train_abae(encoded, *table, cfg.abae_config());
  save_vocab_file(*vocab, out_path(args, "vocab.tsv"));
  save_embeddings_file(*table, out_path(args, "embeddings.txt"));
  aspera::atomic_write_file(out_path(args, "tower.ckpt"), [&](std::ostream& o) {
    aspera::save_tower(result.params, o, cfg.to_json(), cfg.seed);
  });
  aspera::atomic_write_file(out_path(args, "abae_metrics.jsonl"), [&](std::ostream& o) {
    o << json{{"config", cfg.to_json()}, {"seed", cfg.seed}}.dump() << '\n';
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      o << json{{"epoch", e}, {"loss", result.epoch_loss[e]}}.dump() << '\n';
  });
  log_info("final epoch loss " + std::to_string(result.epoch_loss.back()));
  return 0;
}

int cmd_train_aspera(const Args& args, const aspera::RunConfig& cfg) {
  auto reviews = load_reviews(args.require("input"), cfg);
  auto split = aspera::split_corpus(reviews, cfg.seed);
  auto vocab = std::make_shared<aspera::Vocabulary>(
      aspera::build_vocabulary(split.train, cfg.min_count));
  auto table = make_embeddings(split.train, vocab, cfg);
  auto train_enc = encode_all(split.train, *vocab, cfg.words_per_sample);
  auto val_enc = encode_all(split.validation, *vocab, cfg.words_per_sample);

  auto model = aspera::init_aspera_model(table, cfg.aspera_config());
  auto result = aspera::train(train_enc, val_enc, std::move(model), cfg.aspera_config());

  save_vocab_file(*vocab, out_path(args, "vocab.tsv"));
  save_embeddings_file(*result.model.embeddings, out_path(args, "embeddings.txt"));
  aspera::atomic_write_file(out_path(args, "model.ckpt"), [&](std::ostream& o) {
    aspera::save_model(result.model, o, "embeddings.txt", "vocab.tsv", cfg.to_json());
  });
  aspera::atomic_write_file(out_path(args, "metrics.jsonl"), [&](std::ostream& o) {
    o << json{{"config", cfg.to_json()}, {"seed", cfg.seed}}.dump() << '\n';
    for (const auto& em : result.log) {
      o << json{{"epoch", em.epoch},
                {"total", em.total},
                {"mse", em.mse},
                {"mm_align", em.mm_align},
                {"mm_pair", em.mm_pair},
                {"ortho_u", em.ortho_u},
                {"ortho_i", em.ortho_i},
                {"val_mse", em.val_mse},
                {"val_mse_raw", em.val_mse_raw}}
               .dump()
        << '\n';
    }
  });
  aspera::atomic_write_file(out_path(args, "train.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.train, o); });
  aspera::atomic_write_file(out_path(args, "validation.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.validation, o); });
  aspera::atomic_write_file(out_path(args, "test.jsonl"),
                            [&](std::ostream& o) { write_reviews_jsonl(split.test, o); });
  if (result.diverged) {
    log_info("training aborted on non-finite loss; last good checkpoint written");
    return 1;
  }
  log_info("final total loss " + std::to_string(result.log.back().total) + ", val MSE " +
           std::to_string(result.log.back().val_mse));
  return 0;
}

int cmd_predict(const Args& args, const aspera::RunConfig& cfg) {
  ModelBundle bundle = load_model_bundle(args, cfg);
  auto reviews = load_reviews(args.require("input"), cfg);
  auto encoded = encode_all(reviews, *bundle.model.embeddings->vocab,
                            bundle.model.config.words_per_sample);
  std::ostringstream csv;
  csv << "review_id,raw,clamped\n";
  char buf[96];
  for (const auto& e : encoded) {
    auto p = aspera::predict(e, bundle.model);
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g", e.review_id.c_str(), p.raw, p.clamped);
    csv << buf << '\n';
  }
  if (args.has("out")) {
    aspera::atomic_write_file(out_path(args, "predictions.csv"),
                              [&](std::ostream& o) { o << csv.str(); });
    log_info("wrote " + std::to_string(encoded.size()) + " predictions");
  } else {
    std::cout << csv.str();
  }
  return 0;
}

int cmd_evaluate(const Args& args, const aspera::RunConfig& cfg) {
  ModelBundle bundle = load_model_bundle(args, cfg);
  auto test_reviews = load_reviews(args.require("test"), cfg);
  auto test_enc = encode_all(test_reviews, *bundle.model.embeddings->vocab,
                             bundle.model.config.words_per_sample);
  aspera::EvalReport report;
  report.test_mse = aspera::evaluate_mse(bundle.model, test_enc);
  json j = report.to_json();
  if (args.has("train")) {
    auto train_reviews = load_reviews(args.get("train"), cfg);
    report.baselines = aspera::baseline_mse(train_reviews, test_reviews);
    auto stats = aspera::build_coherence_stats(token_documents(train_reviews));
    int max_n = 2;
    for (int n : cfg.coherence_n) max_n = std::max(max_n, n);
    auto lists = aspect_word_lists(bundle.model.user_tower, *bundle.model.embeddings, max_n);
    report.coherence = aspera::coherence_curve(stats, lists, cfg.coherence_n);
    j = report.to_json();
    aspera::atomic_write_file(out_path(args, "coherence.csv"), [&](std::ostream& o) {
      aspera::write_coherence_csv(report.coherence, o);
    });
  }
  j["config"] = cfg.to_json();
  j["seed"] = cfg.seed;
  aspera::atomic_write_file(out_path(args, "report.json"),
                            [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  std::cout << j.dump(2) << std::endl;
  return 0;
}

int cmd_inspect_aspects(const Args& args, const aspera::RunConfig& cfg) {
  int n = std::stoi(args.get("n", "10"));
  std::ostringstream text;
  if (args.has("tower")) {
    std::ifstream in(args.get("tower"));
    if (!in) throw std::runtime_error("cannot open tower " + args.get("tower"));
    auto tower = aspera::load_tower(in);
    std::ifstream vin(args.require("vocab"));
    if (!vin) throw std::runtime_error("cannot open vocabulary " + args.get("vocab"));
    auto vocab = std::make_shared<aspera::Vocabulary>(aspera::Vocabulary::load(vin));
    auto table = aspera::load_text_embeddings(args.require("embeddings"), vocab, cfg.seed);
    auto lists = aspect_word_lists(tower, table, n);
    for (std::size_t a = 0; a < lists.size(); ++a) {
      text << "aspect " << a << ":";
      for (const auto& w : lists[a]) text << ' ' << w;
      text << '\n';
    }
  } else {
    ModelBundle bundle = load_model_bundle(args, cfg);
    auto emit = [&](const char* name, const aspera::TowerParams& tower) {
      text << "# " << name << " tower\n";
      auto lists = aspect_word_lists(tower, *bundle.model.embeddings, n);
      for (std::size_t a = 0; a < lists.size(); ++a) {
        text << "aspect " << a << ":";
        for (const auto& w : lists[a]) text << ' ' << w;
        text << '\n';
      }
    };
    emit("user", bundle.model.user_tower);
    emit("item", bundle.model.item_tower);
  }
  if (args.has("out")) {
    aspera::atomic_write_file(out_path(args, "aspects.txt"),
                              [&](std::ostream& o) { o << text.str(); });
  }
  std::cout << text.str();
  return 0;
}

int cmd_coherence(const Args& args, const aspera::RunConfig& cfg) {
  ModelBundle bundle = load_model_bundle(args, cfg);
  auto reference = load_reviews(args.require("reference"), cfg);
  auto stats = aspera::build_coherence_stats(token_documents(reference));
  std::vector<int> n_values = cfg.coherence_n;
  if (args.has("n-values")) {
    n_values.clear();
    std::istringstream ss(args.get("n-values"));
    std::string part;
    while (std::getline(ss, part, ',')) n_values.push_back(std::stoi(part));
  }
  int max_n = 2;
  for (int n : n_values) max_n = std::max(max_n, n);
  auto lists = aspect_word_lists(bundle.model.user_tower, *bundle.model.embeddings, max_n);
  auto rows = aspera::coherence_curve(stats, lists, n_values);
  std::ostringstream csv;
  aspera::write_coherence_csv(rows, csv);
  if (args.has("out")) {
    aspera::atomic_write_file(out_path(args, "coherence.csv"),
                              [&](std::ostream& o) { o << csv.str(); });
  }
  std::cout << csv.str();
  return 0;
}

// Synthetic gradient check over the full dual-tower loss, mirroring the
// training graph at a small size. Prints max relative error per parameter
// group.
int cmd_gradcheck(const Args& args, const aspera::RunConfig& cfg) {
  (void)args;
  const int d = 8, k = 3, l_seq = 6, n_reviews = 4;
  const char* names[8] = {"user.A", "user.W", "user.b", "user.T",
                          "item.A", "item.W", "item.b", "item.T"};
  double worst = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 3; ++trial) {
    aspera::Rng rng(cfg.seed + trial);
    aspera::Tensor emb = aspera::random_tensor(12, d, rng, -0.8, 0.8);
    for (int j = 0; j < d; ++j) emb.at(0, j) = 0.0;

    std::vector<aspera::EncodedReview> reviews(n_reviews);
    for (int i = 0; i < n_reviews; ++i) {
      reviews[i].user_id = "u" + std::to_string(i % 2);
      reviews[i].item_id = "i" + std::to_string(i / 2);
      reviews[i].rating = 1.0 + 4.0 * rng.real();
      for (int t = 0; t < l_seq; ++t) {
        reviews[i].token_indices.push_back(2 + static_cast<int>(rng.uniform(10)));
        reviews[i].mask.push_back(1);
      }
    }
    std::vector<aspera::ReviewPair> batch = {
        {0, 1, aspera::PairKind::kSameUser},
        {2, 3, aspera::PairKind::kSameItem},
    };
    aspera::AsperaTrainConfig tc;
    tc.aspects = k;
    tc.margin = cfg.margin;
    tc.mse_weight = cfg.mse_weight;
    tc.maxmargin_weight = cfg.maxmargin_weight;
    tc.ortho_weight = cfg.ortho_weight;
    tc.context = cfg.context;

    std::vector<aspera::Tensor> params;
    for (int tower = 0; tower < 2; ++tower) {
      params.push_back(aspera::random_tensor(d, d, rng, -0.5, 0.5));
      params.push_back(aspera::random_tensor(k, d, rng, -0.5, 0.5));
      params.push_back(aspera::random_tensor(k, 1, rng, -0.5, 0.5));
      params.push_back(aspera::random_tensor(k, d, rng, -0.5, 0.5));
    }
    auto build = [&](aspera::Tape& tape, const std::vector<aspera::Var>& vars) {
      aspera::TowerVars ut{vars[0], vars[1], vars[2], vars[3]};
      aspera::TowerVars it{vars[4], vars[5], vars[6], vars[7]};
      aspera::Var e = tape.constant(emb);
      return aspera::total_loss_on_tape(tape, e, ut, it, reviews, batch, tc).total;
    };
    auto report = aspera::gradient_check(build, params, 1e-5, 1e-4);
    if (!report.ok()) ok = false;
    worst = std::max(worst, report.max_rel_err);
    std::printf("trial %d: checked %ld coordinates, %zu excluded at hinge kinks\n", trial,
                report.checked, report.excluded.size());
    for (int p = 0; p < 8; ++p)
      std::printf("  %-7s max rel err %.3g\n", names[p], report.per_param_max[p]);
  }
  std::printf("gradcheck %s: max relative error %.3g (tolerance 1e-4)\n",
              ok ? "PASS" : "FAIL", worst);
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  const char* log_env = std::getenv("ASPERA_LOG");
  g_debug = log_env && std::string(log_env) == "debug";
  try {
    Args args = parse_args(argc, argv);
    aspera::RunConfig cfg = load_config(args);
    log_debug("resolved config: " + cfg.to_json().dump());
    if (args.command == "ingest") return cmd_ingest(args, cfg);
    if (args.command == "train-embeddings") return cmd_train_embeddings(args, cfg);
    if (args.command == "train-abae") return cmd_train_abae(args, cfg);
    if (args.command == "train-aspera") return cmd_train_aspera(args, cfg);
    if (args.command == "predict") return cmd_predict(args, cfg);
    if (args.command == "evaluate") return cmd_evaluate(args, cfg);
    if (args.command == "inspect-aspects") return cmd_inspect_aspects(args, cfg);
    if (args.command == "coherence") return cmd_coherence(args, cfg);
    if (args.command == "gradcheck") return cmd_gradcheck(args, cfg);
    std::cerr << "unknown command: " << args.command << "\n"
              << "commands: ingest train-embeddings train-abae train-aspera predict evaluate "
                 "inspect-aspects coherence gradcheck\n"
              << "flags: --config PATH --seed N --out DIR --input PATH --model PATH --test PATH "
                 "--train PATH --reference PATH --vocab PATH --embeddings PATH --tower PATH "
                 "--n N --n-values CSV --set key=value\n";
    return 2;
  } catch (const aspera::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
