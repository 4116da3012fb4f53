#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mlffn/mlffn.h"

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string config_path;
  std::optional<uint64_t> seed;
  bool offline = false;
  std::string out;
  bool verbose = false;
};

class ConfigHandle {
 public:
  ~ConfigHandle() { mlffn_config_free(ptr_); }
  mlffn_config** out() { return &ptr_; }
  mlffn_config* get() const { return ptr_; }

 private:
  mlffn_config* ptr_ = nullptr;
};

int report_failure(mlffn_status status) {
  std::cerr << "mlffn: error [" << mlffn_last_error_code() << "]: " << mlffn_last_error() << "\n";
  return status == MLFFN_ERR_ARGUMENT ? MLFFN_ERR_CONFIG : static_cast<int>(status);
}

struct UsageError {
  std::string message;
};

void check(mlffn_status status) {
  if (status != MLFFN_OK) {
    throw status;
  }
}

void open_config(const Globals& g, ConfigHandle& config) {
  if (!g.config_path.empty()) {
    check(mlffn_config_load(g.config_path.c_str(), config.out()));
    if (g.seed) {
      check(mlffn_config_set_seed(config.get(), *g.seed));
    }
  } else if (g.seed) {
    check(mlffn_config_default(*g.seed, config.out()));
  } else {
    throw UsageError{"a seed is required: pass --config or --seed"};
  }
  if (g.offline) {
    check(mlffn_config_set_offline(config.get()));
  }
}

fs::path out_dir(const Globals& g, const ConfigHandle& config, const char* sub = nullptr) {
  if (!g.out.empty()) {
    return g.out;
  }
  char* s = nullptr;
  check(mlffn_config_out_dir(config.get(), &s));
  fs::path p(s);
  mlffn_string_free(s);
  return sub ? p / sub : p;
}

std::string or_default(const std::string& value, const fs::path& fallback) {
  return value.empty() ? fallback.string() : value;
}

const char* c_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print_epoch(const char* variant, int epoch, double train_loss, double train_accuracy, double val_loss,
                 double val_accuracy, void*) {
  std::fprintf(stderr, "%s epoch %d train_loss %.6f train_acc %.4f val_loss %.6f val_acc %.4f\n", variant, epoch,
               train_loss, train_accuracy, val_loss, val_accuracy);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Driving-style classification with multi-level features and semantic fusion", "mlffn"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mlffn_version()));

  Globals g;
  app.add_option("--config", g.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_flag("--offline", g.offline, "Use the local describer and embedder only");
  app.add_option("--out", g.out, "Output directory");
  app.add_flag("-v,--verbose", g.verbose, "Per-epoch progress on stderr");

  auto* synth = app.add_subcommand("synth", "Write the seeded synthetic labeled segments");

  auto* extract = app.add_subcommand("extract", "Parse, clean and extract features from a directory of segments");
  std::string in_dir;
  bool skip_bad = false;
  std::optional<double> tau;
  extract->add_option("--in", in_dir, "Directory of segment CSV files")->required()->check(CLI::ExistingDirectory);
  extract->add_flag("--skip-bad", skip_bad, "Skip unreadable files instead of failing");
  extract->add_option("--tau", tau, "Hard-event threshold for all indicators");

  std::string features_csv;
  std::string embeddings_csv;
  std::string descriptions_jsonl;
  std::string checkpoint;
  std::string segments_dir;

  auto* describe = app.add_subcommand("describe", "Generate semantic descriptions for a feature matrix");
  describe->add_option("--features", features_csv, "Feature matrix (default <out>/features.csv)");

  auto* embed = app.add_subcommand("embed", "Embed descriptions as fixed-width vectors");
  embed->add_option("--descriptions", descriptions_jsonl, "Descriptions (default <out>/descriptions.jsonl)");

  auto* train = app.add_subcommand("train", "Train one model variant");
  std::string variant;
  std::optional<int> epochs;
  std::optional<double> lr;
  train->add_option("--features", features_csv, "Feature matrix (default <out>/features.csv)");
  train->add_option("--embeddings", embeddings_csv, "Text embeddings (default <out>/embeddings.csv)");
  train->add_option("--segments", segments_dir, "Segment directory for raw_series input");
  train->add_option("--variant", variant, "full, no_attention, no_multiscale, text_only or numeric_only");
  train->add_option("--epochs", epochs, "Maximum epochs");
  train->add_option("--lr", lr, "Learning rate");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string split = "test";
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/model.ckpt)");
  eval->add_option("--features", features_csv, "Feature matrix (default <out>/features.csv)");
  eval->add_option("--embeddings", embeddings_csv, "Text embeddings (default <out>/embeddings.csv)");
  eval->add_option("--segments", segments_dir, "Segment directory for raw_series input");
  eval->add_option("--split", split, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));

  auto* ablate = app.add_subcommand("ablate", "Train and score all five variants");
  ablate->add_option("--features", features_csv, "Feature matrix (default <out>/features.csv)");
  ablate->add_option("--embeddings", embeddings_csv, "Text embeddings (default <out>/embeddings.csv)");
  ablate->add_option("--epochs", epochs, "Maximum epochs");
  ablate->add_option("--lr", lr, "Learning rate");

  auto* report = app.add_subcommand("report", "Correlation matrix and feature distributions");
  report->add_option("--features", features_csv, "Feature matrix (default <out>/features.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : MLFFN_ERR_CONFIG;
  }

  try {
    ConfigHandle config;
    open_config(g, config);
    mlffn_epoch_fn progress = g.verbose ? print_epoch : nullptr;

    std::string model_patch;
    if (!variant.empty()) {
      model_patch += "\"variant\":\"" + variant + "\"";
    }
    if (epochs) {
      model_patch += (model_patch.empty() ? "" : ",") + std::string("\"epochs\":") + std::to_string(*epochs);
    }
    if (lr) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", *lr);
      model_patch += (model_patch.empty() ? "" : ",") + std::string("\"lr\":") + buf;
    }
    if (!model_patch.empty()) {
      check(mlffn_config_set_model_json(config.get(), ("{" + model_patch + "}").c_str()));
    }

    if (synth->parsed()) {
      const auto out = out_dir(g, config, "segments");
      size_t files = 0;
      check(mlffn_synth(config.get(), out.c_str(), &files));
      std::cout << "files: " << files << "\nout: " << out.string() << "\n";
    } else if (extract->parsed()) {
      if (tau) {
        check(mlffn_config_set_tau(config.get(), *tau));
      }
      const auto out = out_dir(g, config);
      mlffn_extract_summary s{};
      check(mlffn_extract(config.get(), in_dir.c_str(), out.c_str(), skip_bad ? 1 : 0, &s));
      std::cout << "rows: " << s.rows << "\ndropped: " << s.dropped << "\nskipped: " << s.skipped
                << "\nout: " << (out / "features.csv").string() << "\n";
    } else if (describe->parsed()) {
      const auto out = out_dir(g, config);
      const auto in = or_default(features_csv, out / "features.csv");
      mlffn_describe_summary s{};
      check(mlffn_describe(config.get(), in.c_str(), out.c_str(), &s));
      std::cout << "rows: " << s.rows << "\nremote: " << s.remote << "\nfallback: " << s.fallback
                << "\ncached: " << s.cached << "\nrequests: " << s.requests
                << "\nout: " << (out / "descriptions.jsonl").string() << "\n";
    } else if (embed->parsed()) {
      const auto out = out_dir(g, config);
      const auto in = or_default(descriptions_jsonl, out / "descriptions.jsonl");
      size_t rows = 0;
      check(mlffn_embed(config.get(), in.c_str(), out.c_str(), &rows));
      std::cout << "rows: " << rows << "\nout: " << (out / "embeddings.csv").string() << "\n";
    } else if (train->parsed()) {
      const auto out = out_dir(g, config);
      const auto features = or_default(features_csv, out / "features.csv");
      std::string embeddings = embeddings_csv;
      if (embeddings.empty() && variant != "numeric_only") {
        embeddings = (out / "embeddings.csv").string();
      }
      mlffn_train_summary s{};
      check(mlffn_train(config.get(), features.c_str(), c_or_null(embeddings), out.c_str(), c_or_null(segments_dir),
                        progress, nullptr, &s));
      std::cout << "epochs_run: " << s.epochs_run << "\nbest_epoch: " << s.best_epoch
                << "\nbest_val_accuracy: " << s.best_val_accuracy << "\nearly_stopped: " << s.early_stopped
                << "\ntest_accuracy: " << s.test_accuracy << "\nparam_count: " << s.param_count
                << "\nout: " << (out / "model.ckpt").string() << "\n";
    } else if (eval->parsed()) {
      const auto out = out_dir(g, config);
      const auto ckpt = or_default(checkpoint, out / "model.ckpt");
      const auto features = or_default(features_csv, out / "features.csv");
      std::string embeddings = embeddings_csv;
      if (embeddings.empty() && fs::exists(out / "embeddings.csv")) {
        embeddings = (out / "embeddings.csv").string();
      }
      mlffn_metrics m{};
      check(mlffn_eval(config.get(), ckpt.c_str(), features.c_str(), c_or_null(embeddings), split.c_str(),
                       out.c_str(), c_or_null(segments_dir), &m));
      std::cout << "split: " << split << "\ncount: " << m.count << "\naccuracy: " << m.accuracy
                << "\nprecision: " << m.precision << "\nrecall: " << m.recall << "\nf1: " << m.f1
                << "\nmacro_precision: " << m.macro_precision << "\nmacro_recall: " << m.macro_recall
                << "\nmacro_f1: " << m.macro_f1 << "\n";
    } else if (ablate->parsed()) {
      const auto out = out_dir(g, config);
      const auto features = or_default(features_csv, out / "features.csv");
      const auto embeddings = or_default(embeddings_csv, out / "embeddings.csv");
      mlffn_ablation_row rows[MLFFN_NUM_VARIANTS]{};
      check(mlffn_ablate(config.get(), features.c_str(), embeddings.c_str(), out.c_str(), progress, nullptr, rows));
      std::printf("%-24s %7s %7s %7s %7s\n", "Model", "Acc.", "Pre.", "Rec.", "F1");
      for (const auto& r : rows) {
        std::printf("%-24s %7.4f %7.4f %7.4f %7.4f\n", r.title, r.accuracy, r.precision, r.recall, r.f1);
      }
      std::cout << "out: " << (out / "ablation.csv").string() << "\n";
    } else if (report->parsed()) {
      const auto out = out_dir(g, config);
      const auto features = or_default(features_csv, out / "features.csv");
      size_t warnings = 0;
      check(mlffn_report(config.get(), features.c_str(), out.c_str(), &warnings));
      std::cout << "warnings: " << warnings << "\nout: " << out.string() << "\n";
    }
  } catch (mlffn_status status) {
    return report_failure(status);
  } catch (const UsageError& e) {
    std::cerr << "mlffn: error [ConfigError]: " << e.message << "\n";
    return MLFFN_ERR_CONFIG;
  }
  return 0;
}
