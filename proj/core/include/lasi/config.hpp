#pragma once

#include <map>
#include <string>
#include <vector>

#include "lasi/metrics.hpp"
#include "lasi/stitch.hpp"
#include "lasi/train.hpp"

namespace lasi::cli {

/// Layered command configuration: built-in defaults < config file < CLI
/// flags. The effective (post-override) values are dumped into every run
/// manifest.
struct ExperimentConfig {
  // data and outputs
  std::string data_dir;  // default: $LASI_DATA_DIR, else "data"
  std::string out_dir = "out";
  std::string train_file, dev_file, test_file;  // default <data_dir>/{train,dev,test}.txt

  // model geometry (desk-scale defaults)
  int64_t d_model = 128;
  int64_t n_heads = 4;
  int64_t d_ff = 512;
  int64_t max_len = 100;
  int64_t n_layers = 2;
  double dropout = 0.1;

  // vocabulary
  int vocab_min_freq = 3;
  int vocab_max_size = 30000;

  // task
  std::string model_kind = "bert";
  std::string window = "-1";

  // stitching
  double aux_weight = 0.05;
  std::string aux_kind = "mse";  // mse | cosine
  double mask_rate = 0.10;
  int64_t gbas_heads = 8;
  std::string gbls_pair = "next";  // next | prev
  bool gbas_token_level = true;
  bool gbas_concat_prev_bert = false;
  int gen_tokens = 50;

  // fine-tuning protocol
  double lr = 2e-5;
  double weight_decay = 0.01;
  int epochs = 10;
  int batch_size = 32;
  int threads = 1;
  uint64_t seed = 42;

  // pretraining (stands in for public checkpoints)
  int pretrain_epochs = 3;
  double pretrain_lr = 1e-3;
  double mlm_rate = 0.15;

  // evaluation
  std::vector<std::string> perturbations;  // remove1 remove2 add1 add2

  // shards produced by ingest
  std::vector<std::string> ingest_windows = {"0", "-1", "-2,-1", "-1,0", "-1,0,1"};

  static ExperimentConfig defaults();

  std::string resolved_train_file() const;
  std::string resolved_dev_file() const;
  std::string resolved_test_file() const;

  void apply_json_text(const std::string& json_text);
  void apply_json_file(const std::string& path);
  std::string to_json_text() const;

  train::TrainConfig train_config() const;
  train::TrainConfig pretrain_config() const;
  stitch::StitchModelSpec stitch_spec() const;
  lm::ModelSpec model_spec(int64_t vocab_size) const;
};

/// Everything needed to re-run a command bit-identically given the same data
/// files, plus the results it produced.
struct RunManifest {
  std::string command;
  std::string label;  // row label for reports, e.g. "bert w=-1"
  std::string build_id;
  std::string config_json;  // effective config, serialized
  std::string vocab_hash;
  std::map<std::string, int64_t> dataset_counts;
  double wall_seconds = 0;
  std::vector<std::pair<std::string, train::Metrics>> evaluations;
  std::vector<train::EpochRecord> epoch_log;

  std::string to_json_text() const;
  static RunManifest from_json_text(const std::string& text);
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

std::string metrics_to_json_text(const train::Metrics& m);
train::Metrics metrics_from_json_text(const std::string& text);

}  // namespace lasi::cli
