#include "lasi/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace lasi::cli {

using nlohmann::json;

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  if (const char* env = std::getenv("LASI_DATA_DIR"); env && *env) {
    cfg.data_dir = env;
  } else {
    cfg.data_dir = "data";
  }
  return cfg;
}

std::string ExperimentConfig::resolved_train_file() const {
  return train_file.empty() ? data_dir + "/train.txt" : train_file;
}
std::string ExperimentConfig::resolved_dev_file() const {
  return dev_file.empty() ? data_dir + "/dev.txt" : dev_file;
}
std::string ExperimentConfig::resolved_test_file() const {
  return test_file.empty() ? data_dir + "/test.txt" : test_file;
}

namespace {

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::apply_json_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: bad JSON: ") + e.what());
  }
  maybe(j, "data_dir", data_dir);
  maybe(j, "out_dir", out_dir);
  maybe(j, "train_file", train_file);
  maybe(j, "dev_file", dev_file);
  maybe(j, "test_file", test_file);
  maybe(j, "d_model", d_model);
  maybe(j, "n_heads", n_heads);
  maybe(j, "d_ff", d_ff);
  maybe(j, "max_len", max_len);
  maybe(j, "n_layers", n_layers);
  maybe(j, "dropout", dropout);
  maybe(j, "vocab_min_freq", vocab_min_freq);
  maybe(j, "vocab_max_size", vocab_max_size);
  maybe(j, "model_kind", model_kind);
  maybe(j, "window", window);
  maybe(j, "aux_weight", aux_weight);
  maybe(j, "aux_kind", aux_kind);
  maybe(j, "mask_rate", mask_rate);
  maybe(j, "gbas_heads", gbas_heads);
  maybe(j, "gbls_pair", gbls_pair);
  maybe(j, "gbas_token_level", gbas_token_level);
  maybe(j, "gbas_concat_prev_bert", gbas_concat_prev_bert);
  maybe(j, "gen_tokens", gen_tokens);
  maybe(j, "lr", lr);
  maybe(j, "weight_decay", weight_decay);
  maybe(j, "epochs", epochs);
  maybe(j, "batch_size", batch_size);
  maybe(j, "threads", threads);
  maybe(j, "seed", seed);
  maybe(j, "pretrain_epochs", pretrain_epochs);
  maybe(j, "pretrain_lr", pretrain_lr);
  maybe(j, "mlm_rate", mlm_rate);
  maybe(j, "perturbations", perturbations);
  maybe(j, "ingest_windows", ingest_windows);
}

void ExperimentConfig::apply_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_json_text(buf.str());
}

std::string ExperimentConfig::to_json_text() const {
  json j;
  j["data_dir"] = data_dir;
  j["out_dir"] = out_dir;
  j["train_file"] = resolved_train_file();
  j["dev_file"] = resolved_dev_file();
  j["test_file"] = resolved_test_file();
  j["d_model"] = d_model;
  j["n_heads"] = n_heads;
  j["d_ff"] = d_ff;
  j["max_len"] = max_len;
  j["n_layers"] = n_layers;
  j["dropout"] = dropout;
  j["vocab_min_freq"] = vocab_min_freq;
  j["vocab_max_size"] = vocab_max_size;
  j["model_kind"] = model_kind;
  j["window"] = window;
  j["aux_weight"] = aux_weight;
  j["aux_kind"] = aux_kind;
  j["mask_rate"] = mask_rate;
  j["gbas_heads"] = gbas_heads;
  j["gbls_pair"] = gbls_pair;
  j["gbas_token_level"] = gbas_token_level;
  j["gbas_concat_prev_bert"] = gbas_concat_prev_bert;
  j["gen_tokens"] = gen_tokens;
  j["lr"] = lr;
  j["weight_decay"] = weight_decay;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["threads"] = threads;
  j["seed"] = seed;
  j["pretrain_epochs"] = pretrain_epochs;
  j["pretrain_lr"] = pretrain_lr;
  j["mlm_rate"] = mlm_rate;
  j["perturbations"] = perturbations;
  j["ingest_windows"] = ingest_windows;
  return j.dump(2);
}

train::TrainConfig ExperimentConfig::train_config() const {
  train::TrainConfig t;
  t.lr = lr;
  t.weight_decay = weight_decay;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  t.threads = threads;
  t.validate();
  return t;
}

train::TrainConfig ExperimentConfig::pretrain_config() const {
  train::TrainConfig t = train_config();
  t.lr = pretrain_lr;
  t.epochs = pretrain_epochs;
  return t;
}

stitch::StitchModelSpec ExperimentConfig::stitch_spec() const {
  stitch::StitchModelSpec s;
  s.aux_loss_weight = aux_weight;
  if (aux_kind == "mse") {
    s.aux_loss_kind = stitch::StitchModelSpec::AuxKind::mse;
  } else if (aux_kind == "cosine") {
    s.aux_loss_kind = stitch::StitchModelSpec::AuxKind::cosine;
  } else {
    throw ConfigError("aux_kind must be mse or cosine, got '" + aux_kind + "'");
  }
  s.bert_input_mask_rate = mask_rate;
  s.gbas_heads = gbas_heads;
  if (gbls_pair == "next") {
    s.gbls_pair = stitch::StitchModelSpec::GblsPair::g_prev_to_b_next;
  } else if (gbls_pair == "prev") {
    s.gbls_pair = stitch::StitchModelSpec::GblsPair::g_prev2_to_b_prev;
  } else {
    throw ConfigError("gbls_pair must be next or prev, got '" + gbls_pair + "'");
  }
  s.gbas_token_level = gbas_token_level;
  s.gbas_concat_prev_bert = gbas_concat_prev_bert;
  s.gen_tokens = gen_tokens;
  return s;
}

lm::ModelSpec ExperimentConfig::model_spec(int64_t vocab_size) const {
  lm::ModelSpec spec;
  spec.block.d_model = d_model;
  spec.block.n_heads = n_heads;
  spec.block.d_ff = d_ff;
  spec.block.max_len = max_len;
  spec.block.dropout_rate = dropout;
  spec.vocab_size = vocab_size;
  spec.n_layers = n_layers;
  spec.n_labels = data::kNumLabels;
  spec.block.head_dim();  // validates
  return spec;
}

// ---- manifests -------------------------------------------------------------------

namespace {

json metrics_to_json(const train::Metrics& m) {
  json j;
  j["n_classes"] = m.n_classes;
  j["n"] = m.n_examples();
  j["accuracy"] = m.accuracy();
  j["precision"] = m.weighted_precision();
  j["recall"] = m.weighted_recall();
  j["f1"] = m.weighted_f1();
  j["confusion"] = m.confusion;
  return j;
}

train::Metrics metrics_from_json(const json& j) {
  return train::Metrics::from_confusion(j.at("confusion").get<std::vector<int64_t>>(),
                                        j.at("n_classes").get<int>());
}

json epoch_to_json(const train::EpochRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["loss_cls"] = r.loss_cls;
  if (r.has_aux) j["loss_aux"] = r.loss_aux;
  j["val_accuracy"] = r.val_accuracy;
  j["wall_seconds"] = r.wall_seconds;
  return j;
}

train::EpochRecord epoch_from_json(const json& j) {
  train::EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.loss_cls = j.at("loss_cls").get<double>();
  if (j.contains("loss_aux")) {
    r.loss_aux = j.at("loss_aux").get<double>();
    r.has_aux = true;
  }
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  return r;
}

}  // namespace

std::string metrics_to_json_text(const train::Metrics& m) { return metrics_to_json(m).dump(); }

train::Metrics metrics_from_json_text(const std::string& text) {
  return metrics_from_json(json::parse(text));
}

std::string RunManifest::to_json_text() const {
  json j;
  j["command"] = command;
  j["label"] = label;
  j["build_id"] = build_id;
  j["config"] = json::parse(config_json.empty() ? "{}" : config_json);
  j["vocab_hash"] = vocab_hash;
  j["dataset_counts"] = dataset_counts;
  j["wall_seconds"] = wall_seconds;
  json evals = json::array();
  for (const auto& [name, m] : evaluations) {
    json e;
    e["name"] = name;
    e["metrics"] = metrics_to_json(m);
    evals.push_back(e);
  }
  j["evaluations"] = evals;
  json log = json::array();
  for (const auto& r : epoch_log) log.push_back(epoch_to_json(r));
  j["epoch_log"] = log;
  return j.dump(2);
}

RunManifest RunManifest::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("manifest: bad JSON: ") + e.what());
  }
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.label = j.value("label", std::string());
  m.build_id = j.value("build_id", std::string());
  m.config_json = j.at("config").dump();
  m.vocab_hash = j.value("vocab_hash", std::string());
  if (j.contains("dataset_counts")) {
    m.dataset_counts = j.at("dataset_counts").get<std::map<std::string, int64_t>>();
  }
  m.wall_seconds = j.value("wall_seconds", 0.0);
  for (const auto& e : j.value("evaluations", json::array())) {
    m.evaluations.emplace_back(e.at("name").get<std::string>(),
                               metrics_from_json(e.at("metrics")));
  }
  for (const auto& e : j.value("epoch_log", json::array())) {
    m.epoch_log.push_back(epoch_from_json(e));
  }
  return m;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << to_json_text() << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

}  // namespace lasi::cli
