#pragma once

#include "lasi/checkpoint.hpp"
#include "lasi/config.hpp"
#include "lasi/report.hpp"
#include "lasi/synth.hpp"

namespace lasi::cli {

/// Generates a synthetic RCT-format train/dev/test trio under data_dir.
int cmd_synth(const ExperimentConfig& cfg, int train_docs, int dev_docs, int test_docs);

/// Parses the three splits, builds the vocabulary from the train split,
/// writes vocab + sentence stream + per-window example shards + a
/// statistics report.
int cmd_ingest(const ExperimentConfig& cfg);

/// Pretrains one trunk (encoder: MLM; decoder: next-token over document
/// streams; encdec: denoising) and writes its checkpoint + loss curve.
int cmd_pretrain(const ExperimentConfig& cfg, const std::string& kind);

/// Fine-tunes the configured model kind on the configured window; writes the
/// best-epoch checkpoint, the per-epoch log, and a run manifest.
int cmd_finetune(const ExperimentConfig& cfg);

/// Evaluates a fine-tuned checkpoint on the test shard, original plus each
/// configured perturbation; emits one metrics record per row.
int cmd_evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_dir);

/// Renders a comparison table (text + CSV) from run manifests.
int cmd_report(const ExperimentConfig& cfg, std::span<const std::string> manifest_paths,
               const std::string& out_base);

// ---- paths and helpers shared with tests ------------------------------------

std::string shard_path(const std::string& out_dir, const std::string& split,
                       const data::WindowSpec& window);
std::string sentences_path(const std::string& out_dir, const std::string& split);
std::string vocab_path(const std::string& out_dir);
std::string pretrain_dir(const std::string& out_dir, const std::string& kind);
std::string finetune_dir(const ExperimentConfig& cfg);

/// Loads a trunk checkpoint into the model parameters carrying the given
/// name prefix; every such parameter must be covered.
void load_trunk_checkpoint(const std::string& ckpt_dir, StitchedModel<float>& model,
                           const std::string& prefix);

/// Exclusive-writer guard for an output directory.
class LockFile {
 public:
  explicit LockFile(const std::string& dir);
  ~LockFile();
  LockFile(const LockFile&) = delete;
  LockFile& operator=(const LockFile&) = delete;

 private:
  std::string path_;
};

}  // namespace lasi::cli
