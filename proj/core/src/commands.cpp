#include "lasi/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "lasi/version.hpp"

namespace lasi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

LockFile::LockFile(const std::string& dir) {
  fs::create_directories(dir);
  path_ = dir + "/.lasi.lock";
  FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    throw ConfigError("output directory " + dir + " is locked by another writer (remove " +
                      path_ + " if stale)");
  }
  std::fclose(f);
}

LockFile::~LockFile() { std::remove(path_.c_str()); }

std::string vocab_path(const std::string& out_dir) { return out_dir + "/vocab.txt"; }

std::string sentences_path(const std::string& out_dir, const std::string& split) {
  return out_dir + "/sentences_" + split + ".jsonl";
}

std::string shard_path(const std::string& out_dir, const std::string& split,
                       const data::WindowSpec& window) {
  return out_dir + "/examples_" + split + "_" + window.slug() + ".jsonl";
}

std::string pretrain_dir(const std::string& out_dir, const std::string& kind) {
  return out_dir + "/pretrain_" + kind;
}

std::string finetune_dir(const ExperimentConfig& cfg) {
  return cfg.out_dir + "/finetune_" + cfg.model_kind + "_" +
         data::WindowSpec::parse(cfg.window).slug();
}

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string hash_hex(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

RunManifest base_manifest(const ExperimentConfig& cfg, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.build_id = std::string(kVersion) + "+" + kBuildId;
  m.config_json = cfg.to_json_text();
  return m;
}

std::shared_ptr<const data::Vocab> load_vocab_shared(const std::string& out_dir) {
  return std::make_shared<const data::Vocab>(data::Vocab::load(vocab_path(out_dir)));
}

std::vector<data::Document> docs_from_sentence_rows(const std::vector<data::SentenceRow>& rows) {
  std::vector<data::Document> docs;
  for (const auto& r : rows) {
    if (docs.empty() || docs.back().doc_id != r.doc_id) {
      docs.push_back({r.doc_id, {}});
    }
    docs.back().sentences.push_back({r.k, r.label, r.text});
  }
  return docs;
}

void write_pretrain_log(const std::string& path, const train::PretrainResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (size_t i = 0; i < result.epoch_losses.size(); ++i) {
    json j;
    j["epoch"] = i + 1;
    j["loss"] = result.epoch_losses[i];
    out << j.dump() << "\n";
  }
}

void write_epoch_log(const std::string& path, const train::TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  for (const auto& r : result.log) {
    json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["loss_cls"] = r.loss_cls;
    if (r.has_aux) j["loss_aux"] = r.loss_aux;
    j["val_accuracy"] = r.val_accuracy;
    j["wall_seconds"] = r.wall_seconds;
    out << j.dump() << "\n";
  }
}

}  // namespace

// ---- synth -------------------------------------------------------------------

int cmd_synth(const ExperimentConfig& cfg, int train_docs, int dev_docs, int test_docs) {
  LockFile lock(cfg.data_dir);
  const struct {
    const char* name;
    int n;
    uint64_t salt;
  } splits[] = {{"train", train_docs, 1}, {"dev", dev_docs, 2}, {"test", test_docs, 3}};
  for (const auto& s : splits) {
    data::SynthSpec spec;
    spec.n_docs = s.n;
    spec.seed = Rng::hash_combine(cfg.seed, "synth", s.salt);
    const auto docs = data::synth_corpus(spec);
    data::write_rct(cfg.data_dir + "/" + s.name + ".txt", docs);
    std::cout << "synth: wrote " << docs.size() << " docs to " << cfg.data_dir << "/" << s.name
              << ".txt\n";
  }
  return 0;
}

// ---- ingest ------------------------------------------------------------------

int cmd_ingest(const ExperimentConfig& cfg) {
  Timer timer;
  LockFile lock(cfg.out_dir);

  const auto train_docs = data::parse_rct(cfg.resolved_train_file());
  const auto dev_docs = data::parse_rct(cfg.resolved_dev_file());
  const auto test_docs = data::parse_rct(cfg.resolved_test_file());

  // split hygiene: the vocabulary is a function of the train split only
  const data::Vocab vocab =
      data::build_vocab(train_docs, cfg.vocab_min_freq, cfg.vocab_max_size);
  vocab.save(vocab_path(cfg.out_dir));

  std::vector<data::Document> all_docs = train_docs;
  all_docs.insert(all_docs.end(), dev_docs.begin(), dev_docs.end());
  all_docs.insert(all_docs.end(), test_docs.begin(), test_docs.end());
  const auto stats = data::corpus_stats(all_docs);
  {
    std::ofstream out(cfg.out_dir + "/stats.txt");
    if (!out) throw DataError("cannot write stats.txt");
    out << data::stats_to_text(stats);
  }

  RunManifest manifest = base_manifest(cfg, "ingest");
  manifest.label = "ingest";
  manifest.vocab_hash = hash_hex(vocab.hash());
  manifest.dataset_counts["docs_train"] = static_cast<int64_t>(train_docs.size());
  manifest.dataset_counts["docs_dev"] = static_cast<int64_t>(dev_docs.size());
  manifest.dataset_counts["docs_test"] = static_cast<int64_t>(test_docs.size());
  manifest.dataset_counts["vocab_size"] = vocab.size();

  const struct {
    const char* name;
    const std::vector<data::Document>* docs;
  } splits[] = {{"train", &train_docs}, {"dev", &dev_docs}, {"test", &test_docs}};

  for (const auto& s : splits) {
    int64_t n_sent = 0;
    for (const auto& d : *s.docs) n_sent += static_cast<int64_t>(d.sentences.size());
    manifest.dataset_counts[std::string("sentences_") + s.name] = n_sent;
    data::write_sentences_jsonl(sentences_path(cfg.out_dir, s.name), *s.docs, vocab,
                                static_cast<int>(cfg.max_len));
  }

  for (const auto& wtext : cfg.ingest_windows) {
    const auto window = data::WindowSpec::parse(wtext);
    for (const auto& s : splits) {
      const auto examples =
          data::make_examples(*s.docs, vocab, window, static_cast<int>(cfg.max_len));
      data::write_examples_jsonl(shard_path(cfg.out_dir, s.name, window), examples);
      manifest.dataset_counts["examples_" + std::string(s.name) + "_" + window.slug()] =
          static_cast<int64_t>(examples.size());
    }
  }

  manifest.wall_seconds = timer.seconds();
  manifest.save(cfg.out_dir + "/ingest_manifest.json");
  std::cout << "ingest: " << train_docs.size() << "/" << dev_docs.size() << "/"
            << test_docs.size() << " docs, vocab " << vocab.size() << " (hash "
            << manifest.vocab_hash << ")\n"
            << data::stats_to_text(stats);
  return 0;
}

// ---- pretrain ----------------------------------------------------------------

int cmd_pretrain(const ExperimentConfig& cfg, const std::string& kind) {
  if (kind != "encoder" && kind != "decoder" && kind != "encdec") {
    throw ConfigError("pretrain kind must be encoder|decoder|encdec, got '" + kind + "'");
  }
  Timer timer;
  const std::string dir = pretrain_dir(cfg.out_dir, kind);
  LockFile lock(dir);

  auto vocab = load_vocab_shared(cfg.out_dir);
  const auto spec = cfg.model_spec(vocab->size());
  const auto rows = data::read_sentences_jsonl(sentences_path(cfg.out_dir, "train"));
  if (rows.empty()) throw DataError("pretrain: empty sentence stream (run ingest first)");
  const train::TrainConfig pcfg = cfg.pretrain_config();

  CheckpointMeta meta;
  meta.set("kind", "pretrain_" + kind);
  meta.set("vocab_hash", hash_hex(vocab->hash()));
  spec_to_meta(spec, "enc_spec", meta);
  spec_to_meta(spec, "dec_spec", meta);

  nn::ParamList<float> params;
  const nn::ParamVisitor<float> grab = [&](const std::string& name, Tensor<float>& t) {
    params.emplace_back(name, t);
  };

  train::PretrainResult result;
  // trunks are kept alive through the save below
  std::unique_ptr<lm::EncoderModel<float>> enc;
  std::unique_ptr<lm::DecoderModel<float>> dec;
  std::unique_ptr<lm::EncDecModel<float>> encdec;
  Rng init_rng(cfg.seed);

  if (kind == "encoder") {
    enc = std::make_unique<lm::EncoderModel<float>>(lm::EncoderModel<float>::init(spec, init_rng));
    enc->visit_params("enc", grab);
    std::vector<std::vector<int>> seqs;
    for (const auto& r : rows) {
      int maskable = 0;
      for (int id : r.enc) {
        if (!tok::is_special(id)) ++maskable;
      }
      if (maskable > 0) seqs.push_back(r.enc);
    }
    result = train::pretrain_loop(
        params, static_cast<int>(seqs.size()),
        [&](int idx, Rng& rng) {
          const auto mode = nn::Mode::training(cfg.dropout, rng);
          auto loss = enc->mlm_example_loss(seqs[static_cast<size_t>(idx)], cfg.mlm_rate, rng,
                                            mode);
          return train::BatchItemOut{loss, static_cast<double>(loss.item()), 0, false};
        },
        pcfg);
  } else if (kind == "decoder") {
    dec = std::make_unique<lm::DecoderModel<float>>(lm::DecoderModel<float>::init(spec, init_rng));
    dec->visit_params("dec", grab);
    // next-token pretraining runs over per-document token streams so the
    // model learns to continue past sentence boundaries
    const auto docs = docs_from_sentence_rows(rows);
    const auto chunks =
        data::doc_stream_chunks(docs, *vocab, static_cast<int>(cfg.max_len));
    result = train::pretrain_loop(
        params, static_cast<int>(chunks.size()),
        [&](int idx, Rng& rng) {
          const auto mode = nn::Mode::training(cfg.dropout, rng);
          auto loss = dec->clm_example_loss(chunks[static_cast<size_t>(idx)], mode);
          return train::BatchItemOut{loss, static_cast<double>(loss.item()), 0, false};
        },
        pcfg);
  } else {
    encdec =
        std::make_unique<lm::EncDecModel<float>>(lm::EncDecModel<float>::init(spec, init_rng));
    encdec->visit_params("encdec", grab);
    std::vector<lm::SentencePair> pairs;
    for (const auto& r : rows) pairs.push_back({r.enc, r.dec});
    result = train::pretrain_loop(
        params, static_cast<int>(pairs.size()),
        [&](int idx, Rng& rng) {
          const auto mode = nn::Mode::training(cfg.dropout, rng);
          auto loss = encdec->denoise_example_loss(pairs[static_cast<size_t>(idx)], cfg.mlm_rate,
                                                   rng, mode);
          return train::BatchItemOut{loss, static_cast<double>(loss.item()), 0, false};
        },
        pcfg);
  }

  save_checkpoint(dir + "/checkpoint", meta, params);
  write_pretrain_log(dir + "/pretrain_log.jsonl", result);

  RunManifest manifest = base_manifest(cfg, "pretrain");
  manifest.label = "pretrain " + kind;
  manifest.vocab_hash = hash_hex(vocab->hash());
  manifest.dataset_counts["sentences_train"] = static_cast<int64_t>(rows.size());
  manifest.wall_seconds = timer.seconds();
  manifest.save(dir + "/manifest.json");

  std::cout << "pretrain " << kind << ": loss";
  for (double l : result.epoch_losses) std::cout << " " << l;
  std::cout << " -> " << dir << "\n";
  return 0;
}

// ---- finetune ----------------------------------------------------------------

void load_trunk_checkpoint(const std::string& ckpt_dir, StitchedModel<float>& model,
                           const std::string& prefix) {
  if (!fs::exists(fs::path(ckpt_dir) / "manifest.txt")) {
    throw ConfigError("missing checkpoint: " + ckpt_dir + " (run `lasi pretrain` first)");
  }
  const LoadedCheckpoint ckpt = load_checkpoint(ckpt_dir);
  if (ckpt.meta.has("vocab_hash") && ckpt.meta.get("vocab_hash") != hash_hex(model.vocab->hash())) {
    throw DataError("checkpoint " + ckpt_dir + " vocab hash " + ckpt.meta.get("vocab_hash") +
                    " does not match the ingested vocab " + hash_hex(model.vocab->hash()));
  }
  auto params = model.all_params();
  nn::ParamList<float> wanted;
  for (auto& [name, t] : params) {
    if (name.rfind(prefix, 0) == 0) wanted.emplace_back(name, t);
  }
  if (wanted.empty()) throw ConfigError("model has no parameters with prefix " + prefix);
  load_into(ckpt, wanted, /*require_all=*/true);
}

int cmd_finetune(const ExperimentConfig& cfg) {
  Timer timer;
  const std::string run_dir = finetune_dir(cfg);
  LockFile lock(run_dir);

  auto vocab = load_vocab_shared(cfg.out_dir);
  const auto window = data::WindowSpec::parse(cfg.window);
  const ModelKind kind = parse_kind(cfg.model_kind);
  const auto spec = cfg.model_spec(vocab->size());

  auto model = StitchedModel<float>::build(kind, window, spec, spec, cfg.stitch_spec(), vocab,
                                           cfg.seed);
  if (model.enc) load_trunk_checkpoint(pretrain_dir(cfg.out_dir, "encoder") + "/checkpoint",
                                       model, "enc.");
  if (model.dec) load_trunk_checkpoint(pretrain_dir(cfg.out_dir, "decoder") + "/checkpoint",
                                       model, "dec.");
  if (model.encdec) load_trunk_checkpoint(pretrain_dir(cfg.out_dir, "encdec") + "/checkpoint",
                                          model, "encdec.");

  const auto train_ex = data::read_examples_jsonl(shard_path(cfg.out_dir, "train", window));
  const auto dev_ex = data::read_examples_jsonl(shard_path(cfg.out_dir, "dev", window));

  const auto result = train::train_model(model, train_ex, dev_ex, cfg.train_config());

  CheckpointMeta extra;
  extra.set_i64("best_epoch", result.best_epoch);
  save_model(run_dir + "/checkpoint", model, extra);
  write_epoch_log(run_dir + "/epochs.jsonl", result);

  RunManifest manifest = base_manifest(cfg, "finetune");
  manifest.label = cfg.model_kind + " w=" + window.str();
  manifest.vocab_hash = hash_hex(vocab->hash());
  manifest.dataset_counts["examples_train"] = static_cast<int64_t>(train_ex.size());
  manifest.dataset_counts["examples_dev"] = static_cast<int64_t>(dev_ex.size());
  manifest.dataset_counts["best_epoch"] = result.best_epoch;
  manifest.epoch_log = result.log;
  manifest.evaluations.emplace_back("val_best", train::evaluate(model, dev_ex));
  manifest.wall_seconds = timer.seconds();
  manifest.save(run_dir + "/manifest.json");

  std::cout << "finetune " << cfg.model_kind << " w=" << window.str() << ": best epoch "
            << result.best_epoch << " val acc " << result.best_val_accuracy << " -> " << run_dir
            << "\n";
  return 0;
}

// ---- evaluate ----------------------------------------------------------------

int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_dir) {
  Timer timer;
  auto vocab = load_vocab_shared(cfg.out_dir);
  std::string ckpt = checkpoint_dir;
  if (!fs::exists(fs::path(ckpt) / "manifest.txt") &&
      fs::exists(fs::path(ckpt) / "checkpoint" / "manifest.txt")) {
    ckpt = (fs::path(ckpt) / "checkpoint").string();
  }
  auto model = load_model(ckpt, vocab);

  const std::string run_dir =
      cfg.out_dir + "/eval_" + kind_name(model.kind) + "_" + model.window.slug();
  LockFile lock(run_dir);

  const auto test_ex = data::read_examples_jsonl(shard_path(cfg.out_dir, "test", model.window));
  if (!test_ex.empty() && test_ex[0].ctx_enc.size() != model.window.offsets.size()) {
    throw DataError("test shard context count does not match the model window " +
                    model.window.str());
  }

  // row order mirrors the tweaked-settings table: -2, -1, original, +1, +2
  std::vector<data::PerturbationSpec> removes, adds;
  for (const auto& p : cfg.perturbations) {
    const auto spec = data::PerturbationSpec::parse(p, cfg.seed);
    if (!model.window.lookahead()) {
      throw ConfigError("perturbations only apply to look-ahead windows; model window is " +
                        model.window.str());
    }
    (spec.kind == data::PerturbationSpec::Kind::remove_words ? removes : adds).push_back(spec);
  }
  std::sort(removes.begin(), removes.end(),
            [](const auto& a, const auto& b) { return a.n > b.n; });
  std::sort(adds.begin(), adds.end(), [](const auto& a, const auto& b) { return a.n < b.n; });

  RunManifest manifest = base_manifest(cfg, "evaluate");
  manifest.label = std::string(kind_name(model.kind)) + " w=" + model.window.str();
  manifest.vocab_hash = hash_hex(vocab->hash());
  manifest.dataset_counts["examples_test"] = static_cast<int64_t>(test_ex.size());

  for (const auto& p : removes) {
    manifest.evaluations.emplace_back(p.row_name(), train::evaluate(model, test_ex, p));
  }
  manifest.evaluations.emplace_back("original", train::evaluate(model, test_ex));
  for (const auto& p : adds) {
    manifest.evaluations.emplace_back(p.row_name(), train::evaluate(model, test_ex, p));
  }

  manifest.wall_seconds = timer.seconds();
  manifest.save(run_dir + "/manifest.json");
  {
    std::ofstream out(run_dir + "/evaluations.jsonl");
    if (!out) throw DataError("cannot write evaluations.jsonl");
    for (const auto& [name, m] : manifest.evaluations) {
      json j;
      j["name"] = name;
      j["metrics"] = json::parse(metrics_to_json_text(m));
      out << j.dump() << "\n";
    }
  }

  std::vector<ReportRow> rows;
  for (const auto& [name, m] : manifest.evaluations) {
    rows.push_back({manifest.label, name, m.accuracy(), m.weighted_precision(),
                    m.weighted_recall(), m.weighted_f1(), m.n_examples()});
  }
  std::cout << render_report(rows) << "-> " << run_dir << "\n";
  return 0;
}

// ---- report ------------------------------------------------------------------

int cmd_report(const ExperimentConfig& cfg, std::span<const std::string> manifest_paths,
               const std::string& out_base) {
  (void)cfg;
  const auto rows = rows_from_manifests(manifest_paths);
  const std::string text = render_report(rows);
  {
    std::ofstream out(out_base + ".txt");
    if (!out) throw DataError("cannot write " + out_base + ".txt");
    out << text;
  }
  write_report_csv(out_base + ".csv", rows);
  std::cout << text;
  return 0;
}

}  // namespace lasi::cli
