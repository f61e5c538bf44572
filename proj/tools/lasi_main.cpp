// lasi: look-ahead section identification lab.
//
//   lasi synth     generate a synthetic RCT-format dataset
//   lasi ingest    parse splits, build vocab, write shards + stats
//   lasi pretrain  pretrain a trunk (encoder | decoder | encdec)
//   lasi finetune  fine-tune a model kind on a context window
//   lasi evaluate  evaluate a checkpoint (original + perturbations)
//   lasi report    render a comparison table from run manifests
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence.

#include <iostream>

#include "CLI11.hpp"

#include "lasi/commands.hpp"
#include "lasi/version.hpp"

namespace {

using lasi::cli::ExperimentConfig;

void add_common_flags(CLI::App* app, ExperimentConfig& cfg, std::string& config_file) {
  app->add_option("--config", config_file, "JSON config file (defaults < file < flags)");
  app->add_option("--data-dir", cfg.data_dir, "data root (default $LASI_DATA_DIR or ./data)");
  app->add_option("--out", cfg.out_dir, "output/workspace directory");
  app->add_option("--seed", cfg.seed, "global random seed");
  app->add_option("--threads", cfg.threads, "batch worker count (fixed per run)");
}

void add_model_flags(CLI::App* app, ExperimentConfig& cfg) {
  app->add_option("--d-model", cfg.d_model, "hidden width");
  app->add_option("--n-heads", cfg.n_heads, "attention heads");
  app->add_option("--d-ff", cfg.d_ff, "feed-forward width");
  app->add_option("--n-layers", cfg.n_layers, "transformer layers");
  app->add_option("--max-len", cfg.max_len, "sequence length after truncate/pad");
  app->add_option("--dropout", cfg.dropout, "dropout rate");
}

void add_train_flags(CLI::App* app, ExperimentConfig& cfg) {
  app->add_option("--lr", cfg.lr, "learning rate");
  app->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
  app->add_option("--epochs", cfg.epochs, "fine-tuning epochs");
  app->add_option("--batch-size", cfg.batch_size, "mini-batch size");
}

void add_stitch_flags(CLI::App* app, ExperimentConfig& cfg) {
  app->add_option("--window", cfg.window, "context window offsets, e.g. \"-1\" or \"-2,-1\"");
  app->add_option("--aux-weight", cfg.aux_weight, "GBLS alignment loss weight");
  app->add_option("--aux-kind", cfg.aux_kind, "GBLS alignment loss kind (mse|cosine)");
  app->add_option("--mask-rate", cfg.mask_rate, "train-time BERT input masking rate");
  app->add_option("--gbas-heads", cfg.gbas_heads, "stitching attention head count");
  app->add_option("--gbls-pair", cfg.gbls_pair, "GBLS mapper pairing (next|prev)");
  app->add_option("--gen-tokens", cfg.gen_tokens, "BERT(GPT) generated token budget");
  app->add_flag("--gbas-pooled", [&cfg](int64_t) { cfg.gbas_token_level = false; },
                "use pooled-vector stitching attention (ablation)");
  app->add_flag("--gbas-concat-prev-bert", cfg.gbas_concat_prev_bert,
                "also concatenate B(s_{k-2}) before the GBAS head");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"look-ahead section identification lab"};
  app.set_version_flag("--version", std::string(lasi::kVersion) + "+" + lasi::kBuildId);
  app.require_subcommand(1);

  ExperimentConfig cfg = ExperimentConfig::defaults();
  std::string config_file;

  // the config file layers between defaults and flags, so apply it before
  // CLI11 writes flag values into cfg
  for (int i = 1; i < argc; ++i) {
    const std::string_view arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      config_file = argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      config_file = arg.substr(9);
    }
  }
  try {
    if (!config_file.empty()) cfg.apply_json_file(config_file);
  } catch (const lasi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }

  auto* synth = app.add_subcommand("synth", "generate a synthetic RCT-format dataset");
  int synth_train = 200, synth_dev = 40, synth_test = 40;
  add_common_flags(synth, cfg, config_file);
  synth->add_option("--train-docs", synth_train, "train split size (documents)");
  synth->add_option("--dev-docs", synth_dev, "dev split size");
  synth->add_option("--test-docs", synth_test, "test split size");

  auto* ingest = app.add_subcommand("ingest", "parse splits, build vocab, write shards");
  add_common_flags(ingest, cfg, config_file);
  ingest->add_option("--train-file", cfg.train_file, "train split path");
  ingest->add_option("--dev-file", cfg.dev_file, "dev (validation) split path");
  ingest->add_option("--test-file", cfg.test_file, "test split path");
  ingest->add_option("--min-freq", cfg.vocab_min_freq, "vocabulary min frequency");
  ingest->add_option("--max-vocab", cfg.vocab_max_size, "vocabulary size cap");
  ingest->add_option("--max-len", cfg.max_len, "sequence length after truncate/pad");
  ingest->add_option("--windows", cfg.ingest_windows, "windows to shard");

  auto* pretrain = app.add_subcommand("pretrain", "pretrain a trunk on the train split");
  std::string pretrain_kind = "encoder";
  add_common_flags(pretrain, cfg, config_file);
  add_model_flags(pretrain, cfg);
  pretrain->add_option("--kind", pretrain_kind, "encoder | decoder | encdec")->required();
  pretrain->add_option("--pretrain-epochs", cfg.pretrain_epochs, "pretraining epochs");
  pretrain->add_option("--pretrain-lr", cfg.pretrain_lr, "pretraining learning rate");
  pretrain->add_option("--mlm-rate", cfg.mlm_rate, "MLM/denoising mask rate");
  pretrain->add_option("--batch-size", cfg.batch_size, "mini-batch size");

  auto* finetune = app.add_subcommand("finetune", "fine-tune a model kind");
  add_common_flags(finetune, cfg, config_file);
  add_model_flags(finetune, cfg);
  add_train_flags(finetune, cfg);
  add_stitch_flags(finetune, cfg);
  finetune->add_option("--model", cfg.model_kind,
                       "bert|gpt|encdec|bert_of_gpt|gpt_plus_bert|gbls|gbas");

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a fine-tuned checkpoint");
  std::string ckpt_dir;
  add_common_flags(evaluate, cfg, config_file);
  evaluate->add_option("--checkpoint", ckpt_dir, "checkpoint (or run) directory")->required();
  evaluate->add_option("--perturb", cfg.perturbations,
                       "test-only perturbations: remove1 remove2 add1 add2");

  auto* report = app.add_subcommand("report", "render a comparison table from manifests");
  std::vector<std::string> manifest_paths;
  std::string report_out = "report";
  add_common_flags(report, cfg, config_file);
  report->add_option("manifests", manifest_paths, "run manifest JSON files")->required();
  report->add_option("--report-out", report_out, "output base name (.txt/.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(synth)) return lasi::cli::cmd_synth(cfg, synth_train, synth_dev, synth_test);
    if (app.got_subcommand(ingest)) return lasi::cli::cmd_ingest(cfg);
    if (app.got_subcommand(pretrain)) return lasi::cli::cmd_pretrain(cfg, pretrain_kind);
    if (app.got_subcommand(finetune)) return lasi::cli::cmd_finetune(cfg);
    if (app.got_subcommand(evaluate)) return lasi::cli::cmd_evaluate(cfg, ckpt_dir);
    if (app.got_subcommand(report)) return lasi::cli::cmd_report(cfg, manifest_paths, report_out);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const lasi::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lasi::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const lasi::DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
