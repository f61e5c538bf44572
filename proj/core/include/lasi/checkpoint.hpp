#pragma once

#include <map>
#include <string>

#include "lasi/classifier.hpp"

namespace lasi {

/// Ordered key/value metadata written at the top of a checkpoint manifest.
/// Values must be free of whitespace (use compact encodings).
struct CheckpointMeta {
  std::map<std::string, std::string> kv;

  void set(const std::string& key, const std::string& value);
  void set_i64(const std::string& key, int64_t value);
  void set_f64(const std::string& key, double value);
  const std::string& get(const std::string& key) const;
  int64_t get_i64(const std::string& key) const;
  double get_f64(const std::string& key) const;
  bool has(const std::string& key) const { return kv.count(key) > 0; }
};

/// Writes manifest.txt (one line per meta entry and per tensor: name, shape,
/// byte offset, element count) plus payload.bin (raw little-endian float32).
void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const nn::ParamList<float>& params);

struct LoadedTensor {
  Shape shape;
  std::vector<float> data;
};

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, LoadedTensor>> tensors;

  const LoadedTensor* find(const std::string& name) const;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

/// Copies checkpoint tensors into matching names; shape mismatches throw.
/// When require_all is set, every target parameter must be present.
void load_into(const LoadedCheckpoint& ckpt, nn::ParamList<float>& params, bool require_all);

// ---- model-level helpers -----------------------------------------------------

void save_model(const std::string& dir, StitchedModel<float>& model,
                const CheckpointMeta& extra = {});
StitchedModel<float> load_model(const std::string& dir,
                                std::shared_ptr<const data::Vocab> vocab);

CheckpointMeta model_meta(const StitchedModel<float>& model);
lm::ModelSpec spec_from_meta(const CheckpointMeta& meta, const std::string& prefix);
stitch::StitchModelSpec sspec_from_meta(const CheckpointMeta& meta);
void spec_to_meta(const lm::ModelSpec& spec, const std::string& prefix, CheckpointMeta& meta);
void sspec_to_meta(const stitch::StitchModelSpec& sspec, CheckpointMeta& meta);

}  // namespace lasi
