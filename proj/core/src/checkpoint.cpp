#include "lasi/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace lasi {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace fs = std::filesystem;

void CheckpointMeta::set(const std::string& key, const std::string& value) {
  for (char c : value) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      throw ConfigError("checkpoint meta value for '" + key + "' contains whitespace");
    }
  }
  kv[key] = value;
}

void CheckpointMeta::set_i64(const std::string& key, int64_t value) {
  kv[key] = std::to_string(value);
}

void CheckpointMeta::set_f64(const std::string& key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  kv[key] = buf;
}

const std::string& CheckpointMeta::get(const std::string& key) const {
  auto it = kv.find(key);
  if (it == kv.end()) throw DataError("checkpoint meta is missing key '" + key + "'");
  return it->second;
}

int64_t CheckpointMeta::get_i64(const std::string& key) const { return std::stoll(get(key)); }

double CheckpointMeta::get_f64(const std::string& key) const { return std::stod(get(key)); }

void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const nn::ParamList<float>& params) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  std::ofstream payload(fs::path(dir) / "payload.bin", std::ios::binary);
  if (!manifest || !payload) throw DataError("cannot write checkpoint to " + dir);

  manifest << "lasi-checkpoint v1\n";
  for (const auto& [k, v] : meta.kv) manifest << "meta " << k << " " << v << "\n";
  int64_t offset = 0;
  for (const auto& [name, tensor] : params) {
    manifest << "tensor " << name << " ";
    const auto& shape = tensor.shape();
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) manifest << "x";
      manifest << shape[i];
    }
    manifest << " " << offset << " " << tensor.numel() << "\n";
    const auto data = tensor.data();
    payload.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    offset += static_cast<int64_t>(data.size() * sizeof(float));
  }
  if (!manifest || !payload) throw DataError("checkpoint write to " + dir + " failed");
}

const LoadedTensor* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw DataError("cannot open checkpoint manifest in " + dir);
  std::ifstream payload(fs::path(dir) / "payload.bin", std::ios::binary);
  if (!payload) throw DataError("cannot open checkpoint payload in " + dir);

  LoadedCheckpoint out;
  std::string line;
  if (!std::getline(manifest, line) || line != "lasi-checkpoint v1") {
    throw DataError(dir + ": not a checkpoint manifest");
  }
  int line_no = 1;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "meta") {
      std::string k, v;
      is >> k >> v;
      if (k.empty()) throw DataError(dir + ": bad meta line " + std::to_string(line_no));
      out.meta.kv[k] = v;
    } else if (tag == "tensor") {
      std::string name, shape_str;
      int64_t offset = 0, count = 0;
      is >> name >> shape_str >> offset >> count;
      if (!is) throw DataError(dir + ": bad tensor line " + std::to_string(line_no));
      LoadedTensor t;
      int64_t extent = 0;
      bool have = false;
      for (char c : shape_str) {
        if (c == 'x') {
          t.shape.push_back(extent);
          extent = 0;
          have = false;
        } else if (c >= '0' && c <= '9') {
          extent = extent * 10 + (c - '0');
          have = true;
        } else {
          throw DataError(dir + ": bad shape on line " + std::to_string(line_no));
        }
      }
      if (have) t.shape.push_back(extent);
      if (shape_numel(t.shape) != count) {
        throw DataError(dir + ": shape/count mismatch for tensor " + name);
      }
      t.data.resize(static_cast<size_t>(count));
      payload.seekg(offset);
      payload.read(reinterpret_cast<char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (!payload) throw DataError(dir + ": payload truncated at tensor " + name);
      out.tensors.emplace_back(name, std::move(t));
    } else {
      throw DataError(dir + ": unknown manifest tag '" + tag + "'");
    }
  }
  return out;
}

void load_into(const LoadedCheckpoint& ckpt, nn::ParamList<float>& params, bool require_all) {
  for (auto& [name, tensor] : params) {
    const LoadedTensor* src = ckpt.find(name);
    if (!src) {
      if (require_all) throw DataError("checkpoint is missing tensor " + name);
      continue;
    }
    if (src->shape != tensor.shape()) {
      throw DataError("checkpoint tensor " + name + " has shape mismatch: file " +
                      shape_str(src->shape) + " vs model " + shape_str(tensor.shape()));
    }
    auto dst = tensor.mutable_data();
    std::copy(src->data.begin(), src->data.end(), dst.begin());
  }
}

// ---- model-level helpers --------------------------------------------------------

void spec_to_meta(const lm::ModelSpec& spec, const std::string& prefix, CheckpointMeta& meta) {
  meta.set_i64(prefix + ".d_model", spec.block.d_model);
  meta.set_i64(prefix + ".n_heads", spec.block.n_heads);
  meta.set_i64(prefix + ".d_ff", spec.block.d_ff);
  meta.set_i64(prefix + ".max_len", spec.block.max_len);
  meta.set_f64(prefix + ".dropout", spec.block.dropout_rate);
  meta.set_i64(prefix + ".vocab_size", spec.vocab_size);
  meta.set_i64(prefix + ".n_layers", spec.n_layers);
  meta.set_i64(prefix + ".n_labels", spec.n_labels);
}

lm::ModelSpec spec_from_meta(const CheckpointMeta& meta, const std::string& prefix) {
  lm::ModelSpec spec;
  spec.block.d_model = meta.get_i64(prefix + ".d_model");
  spec.block.n_heads = meta.get_i64(prefix + ".n_heads");
  spec.block.d_ff = meta.get_i64(prefix + ".d_ff");
  spec.block.max_len = meta.get_i64(prefix + ".max_len");
  spec.block.dropout_rate = meta.get_f64(prefix + ".dropout");
  spec.vocab_size = meta.get_i64(prefix + ".vocab_size");
  spec.n_layers = meta.get_i64(prefix + ".n_layers");
  spec.n_labels = meta.get_i64(prefix + ".n_labels");
  return spec;
}

void sspec_to_meta(const stitch::StitchModelSpec& s, CheckpointMeta& meta) {
  meta.set_f64("stitch.aux_weight", s.aux_loss_weight);
  meta.set("stitch.aux_kind",
           s.aux_loss_kind == stitch::StitchModelSpec::AuxKind::mse ? "mse" : "cosine");
  meta.set_f64("stitch.mask_rate", s.bert_input_mask_rate);
  meta.set_i64("stitch.gbas_heads", s.gbas_heads);
  meta.set("stitch.gbls_pair",
           s.gbls_pair == stitch::StitchModelSpec::GblsPair::g_prev_to_b_next ? "next" : "prev");
  meta.set_i64("stitch.gbas_token_level", s.gbas_token_level ? 1 : 0);
  meta.set_i64("stitch.gbas_concat_prev_bert", s.gbas_concat_prev_bert ? 1 : 0);
  meta.set_i64("stitch.gen_tokens", s.gen_tokens);
}

stitch::StitchModelSpec sspec_from_meta(const CheckpointMeta& meta) {
  stitch::StitchModelSpec s;
  s.aux_loss_weight = meta.get_f64("stitch.aux_weight");
  s.aux_loss_kind = meta.get("stitch.aux_kind") == "cosine"
                        ? stitch::StitchModelSpec::AuxKind::cosine
                        : stitch::StitchModelSpec::AuxKind::mse;
  s.bert_input_mask_rate = meta.get_f64("stitch.mask_rate");
  s.gbas_heads = meta.get_i64("stitch.gbas_heads");
  s.gbls_pair = meta.get("stitch.gbls_pair") == "prev"
                    ? stitch::StitchModelSpec::GblsPair::g_prev2_to_b_prev
                    : stitch::StitchModelSpec::GblsPair::g_prev_to_b_next;
  s.gbas_token_level = meta.get_i64("stitch.gbas_token_level") != 0;
  s.gbas_concat_prev_bert = meta.get_i64("stitch.gbas_concat_prev_bert") != 0;
  s.gen_tokens = static_cast<int>(meta.get_i64("stitch.gen_tokens"));
  return s;
}

CheckpointMeta model_meta(const StitchedModel<float>& model) {
  CheckpointMeta meta;
  meta.set("kind", kind_name(model.kind));
  meta.set("window", model.window.str());
  spec_to_meta(model.enc_spec, "enc_spec", meta);
  spec_to_meta(model.dec_spec, "dec_spec", meta);
  sspec_to_meta(model.sspec, meta);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(model.vocab->hash()));
  meta.set("vocab_hash", buf);
  return meta;
}

void save_model(const std::string& dir, StitchedModel<float>& model, const CheckpointMeta& extra) {
  CheckpointMeta meta = model_meta(model);
  for (const auto& [k, v] : extra.kv) meta.kv[k] = v;
  save_checkpoint(dir, meta, model.all_params());
}

StitchedModel<float> load_model(const std::string& dir,
                                std::shared_ptr<const data::Vocab> vocab) {
  LoadedCheckpoint ckpt = load_checkpoint(dir);
  const ModelKind kind = parse_kind(ckpt.meta.get("kind"));
  const auto window = data::WindowSpec::parse(ckpt.meta.get("window"));
  const auto enc_spec = spec_from_meta(ckpt.meta, "enc_spec");
  const auto dec_spec = spec_from_meta(ckpt.meta, "dec_spec");
  const auto sspec = sspec_from_meta(ckpt.meta);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(vocab->hash()));
  if (ckpt.meta.get("vocab_hash") != buf) {
    throw DataError("checkpoint " + dir + " was built with vocab " + ckpt.meta.get("vocab_hash") +
                    " but the provided vocab hashes to " + buf);
  }
  auto model = StitchedModel<float>::build(kind, window, enc_spec, dec_spec, sspec,
                                           std::move(vocab), /*seed=*/0);
  auto params = model.all_params();
  load_into(ckpt, params, /*require_all=*/true);
  return model;
}

}  // namespace lasi
