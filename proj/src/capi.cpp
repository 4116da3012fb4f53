#include "mlffn/mlffn.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <string>
#include <vector>

#include "json.hpp"

#include "mlffn/commands.hpp"
#include "mlffn/embed.hpp"
#include "mlffn/error.hpp"
#include "mlffn/features.hpp"
#include "mlffn/model.hpp"
#include "mlffn/pipeline.hpp"

struct mlffn_config {
  mlffn::pipeline::RunConfig run;
};

struct mlffn_model {
  explicit mlffn_model(mlffn::model::FusionNet n) : net(std::move(n)), variant(mlffn::model::variant_key(net.config().variant)) {}
  mlffn::model::FusionNet net;
  std::string variant;
};

namespace {

namespace fs = std::filesystem;
using mlffn::Error;
using mlffn::ErrorCategory;

thread_local std::string g_last_error;
thread_local std::string g_last_code;

mlffn_status fail(mlffn_status status, std::string code, std::string message) {
  g_last_code = std::move(code);
  g_last_error = std::move(message);
  return status;
}

mlffn_status status_of(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config:
      return MLFFN_ERR_CONFIG;
    case ErrorCategory::Data:
      return MLFFN_ERR_DATA;
    case ErrorCategory::Network:
      return MLFFN_ERR_NETWORK;
    case ErrorCategory::Numeric:
      return MLFFN_ERR_NUMERIC;
    case ErrorCategory::Internal:
      break;
  }
  return MLFFN_ERR_INTERNAL;
}

template <typename F>
mlffn_status guarded(F&& body) {
  try {
    g_last_error.clear();
    g_last_code.clear();
    body();
    return MLFFN_OK;
  } catch (const Error& e) {
    return fail(status_of(e.category()), std::string(mlffn::to_string(e.code())), e.detail());
  } catch (const nlohmann::json::exception& e) {
    return fail(MLFFN_ERR_CONFIG, "ConfigError", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(MLFFN_ERR_DATA, "IoError", e.what());
  } catch (const std::bad_alloc&) {
    return fail(MLFFN_ERR_INTERNAL, "Internal", "out of memory");
  } catch (const std::exception& e) {
    return fail(MLFFN_ERR_INTERNAL, "Internal", e.what());
  } catch (...) {
    return fail(MLFFN_ERR_INTERNAL, "Internal", "unknown exception");
  }
}

mlffn_status null_arg(const char* name) {
  return fail(MLFFN_ERR_ARGUMENT, "InvalidArgument", std::string(name) + " is null");
}

fs::path path_or_empty(const char* p) { return p ? fs::path(p) : fs::path(); }

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) {
    throw std::bad_alloc();
  }
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void copy_field(char* dst, std::size_t cap, std::string_view src) {
  const auto n = std::min(cap - 1, src.size());
  std::memcpy(dst, src.data(), n);
  dst[n] = '\0';
}

void fill_metrics(const mlffn::eval::MetricsReport& m, mlffn_metrics* out) {
  out->accuracy = m.accuracy;
  out->precision = m.precision;
  out->recall = m.recall;
  out->f1 = m.f1;
  out->macro_precision = m.macro_precision;
  out->macro_recall = m.macro_recall;
  out->macro_f1 = m.macro_f1;
  std::size_t count = 0;
  for (const auto& c : m.per_class) {
    count += c.support;
  }
  out->count = count;
}

}  // namespace

extern "C" {

const char* mlffn_version(void) { return "0.1.0"; }

const char* mlffn_last_error(void) { return g_last_error.c_str(); }

const char* mlffn_last_error_code(void) { return g_last_code.c_str(); }

void mlffn_string_free(char* s) { std::free(s); }

mlffn_status mlffn_config_default(uint64_t seed, mlffn_config** out) {
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] {
    auto c = std::make_unique<mlffn_config>();
    mlffn::pipeline::set_seed(c->run, seed);
    *out = c.release();
  });
}

mlffn_status mlffn_config_parse(const char* json, mlffn_config** out) {
  if (!json) {
    return null_arg("json");
  }
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] {
    auto c = std::make_unique<mlffn_config>();
    c->run = mlffn::pipeline::parse_run_config(json);
    *out = c.release();
  });
}

mlffn_status mlffn_config_load(const char* path, mlffn_config** out) {
  if (!path) {
    return null_arg("path");
  }
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] {
    auto c = std::make_unique<mlffn_config>();
    c->run = mlffn::pipeline::load_run_config(path);
    *out = c.release();
  });
}

mlffn_status mlffn_config_set_seed(mlffn_config* config, uint64_t seed) {
  if (!config) {
    return null_arg("config");
  }
  return guarded([&] { mlffn::pipeline::set_seed(config->run, seed); });
}

mlffn_status mlffn_config_set_offline(mlffn_config* config) {
  if (!config) {
    return null_arg("config");
  }
  return guarded([&] { mlffn::pipeline::set_offline(config->run); });
}

mlffn_status mlffn_config_set_tau(mlffn_config* config, double tau) {
  if (!config) {
    return null_arg("config");
  }
  if (!(tau > 0.0)) {
    return fail(MLFFN_ERR_CONFIG, "ConfigError", "tau must be positive");
  }
  return guarded([&] { config->run.features.tau = mlffn::features::Thresholds::uniform(tau); });
}

mlffn_status mlffn_config_set_model_json(mlffn_config* config, const char* json) {
  if (!config) {
    return null_arg("config");
  }
  if (!json) {
    return null_arg("json");
  }
  return guarded([&] {
    auto patch = nlohmann::json::parse(json);
    if (!patch.is_object()) {
      throw Error(mlffn::ErrorCode::ConfigError, "model override must be a JSON object");
    }
    if (patch.contains("seed")) {
      throw Error(mlffn::ErrorCode::ConfigError, "the model seed follows the run seed");
    }
    auto merged = nlohmann::json::parse(mlffn::model::config_to_json(config->run.model));
    merged.merge_patch(patch);
    auto mc = mlffn::model::config_from_json(merged.dump());
    mlffn::model::validate(mc);
    config->run.model = mc;
  });
}

mlffn_status mlffn_config_out_dir(const mlffn_config* config, char** out) {
  if (!config) {
    return null_arg("config");
  }
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] { *out = dup_string(config->run.out_dir.string()); });
}

mlffn_status mlffn_config_to_json(const mlffn_config* config, char** out) {
  if (!config) {
    return null_arg("config");
  }
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] { *out = dup_string(mlffn::pipeline::run_config_json(config->run)); });
}

void mlffn_config_free(mlffn_config* config) { delete config; }

mlffn_status mlffn_synth(const mlffn_config* config, const char* out_dir, size_t* files) {
  if (!config) {
    return null_arg("config");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto s = mlffn::commands::synth(config->run, out_dir);
    if (files) {
      *files = s.files;
    }
  });
}

mlffn_status mlffn_extract(const mlffn_config* config, const char* in_dir, const char* out_dir, int skip_bad,
                           mlffn_extract_summary* summary) {
  if (!config) {
    return null_arg("config");
  }
  if (!in_dir) {
    return null_arg("in_dir");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto s = mlffn::commands::extract(config->run, in_dir, out_dir, skip_bad != 0);
    if (summary) {
      *summary = {s.rows, s.dropped, s.skipped};
    }
  });
}

mlffn_status mlffn_describe(const mlffn_config* config, const char* features_csv, const char* out_dir,
                            mlffn_describe_summary* summary) {
  if (!config) {
    return null_arg("config");
  }
  if (!features_csv) {
    return null_arg("features_csv");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto s = mlffn::commands::describe(config->run, features_csv, out_dir);
    if (summary) {
      *summary = {s.rows, s.remote, s.fallback, s.cached, s.requests};
    }
  });
}

mlffn_status mlffn_embed(const mlffn_config* config, const char* descriptions_jsonl, const char* out_dir,
                         size_t* rows) {
  if (!config) {
    return null_arg("config");
  }
  if (!descriptions_jsonl) {
    return null_arg("descriptions_jsonl");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto s = mlffn::commands::embed(config->run, descriptions_jsonl, out_dir);
    if (rows) {
      *rows = s.rows;
    }
  });
}

mlffn_status mlffn_train(const mlffn_config* config, const char* features_csv, const char* embeddings_csv,
                         const char* out_dir, const char* segments_dir, mlffn_epoch_fn on_epoch, void* user,
                         mlffn_train_summary* summary) {
  if (!config) {
    return null_arg("config");
  }
  if (!features_csv) {
    return null_arg("features_csv");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const std::string variant(mlffn::model::variant_key(config->run.model.variant));
    mlffn::model::EpochCallback cb;
    if (on_epoch) {
      cb = [&](const mlffn::model::EpochRecord& r) {
        on_epoch(variant.c_str(), r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, user);
      };
    }
    const auto s = mlffn::commands::train(config->run, features_csv, path_or_empty(embeddings_csv), out_dir,
                                          path_or_empty(segments_dir), cb);
    if (summary) {
      *summary = {s.epochs_run, s.best_epoch, s.best_val_accuracy, s.early_stopped ? 1 : 0, s.test_accuracy,
                  s.param_count};
    }
  });
}

mlffn_status mlffn_eval(const mlffn_config* config, const char* checkpoint, const char* features_csv,
                        const char* embeddings_csv, const char* split, const char* out_dir, const char* segments_dir,
                        mlffn_metrics* metrics) {
  if (!config) {
    return null_arg("config");
  }
  if (!checkpoint) {
    return null_arg("checkpoint");
  }
  if (!features_csv) {
    return null_arg("features_csv");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto m = mlffn::commands::evaluate(config->run, checkpoint, features_csv, path_or_empty(embeddings_csv),
                                             split ? split : "test", out_dir, path_or_empty(segments_dir));
    if (metrics) {
      fill_metrics(m, metrics);
    }
  });
}

mlffn_status mlffn_ablate(const mlffn_config* config, const char* features_csv, const char* embeddings_csv,
                          const char* out_dir, mlffn_epoch_fn on_epoch, void* user,
                          mlffn_ablation_row rows[MLFFN_NUM_VARIANTS]) {
  if (!config) {
    return null_arg("config");
  }
  if (!features_csv) {
    return null_arg("features_csv");
  }
  if (!embeddings_csv) {
    return null_arg("embeddings_csv");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    mlffn::eval::AblationProgress cb;
    if (on_epoch) {
      cb = [&](mlffn::model::Variant v, const mlffn::model::EpochRecord& r) {
        const std::string key(mlffn::model::variant_key(v));
        on_epoch(key.c_str(), r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy, user);
      };
    }
    const auto result = mlffn::commands::ablate(config->run, features_csv, embeddings_csv, out_dir, cb);
    if (rows) {
      for (std::size_t i = 0; i < result.size() && i < MLFFN_NUM_VARIANTS; ++i) {
        auto& row = rows[i];
        copy_field(row.variant, sizeof(row.variant), mlffn::model::variant_key(result[i].variant));
        copy_field(row.title, sizeof(row.title), mlffn::model::variant_title(result[i].variant));
        row.accuracy = result[i].metrics.accuracy;
        row.precision = result[i].metrics.precision;
        row.recall = result[i].metrics.recall;
        row.f1 = result[i].metrics.f1;
      }
    }
  });
}

mlffn_status mlffn_report(const mlffn_config* config, const char* features_csv, const char* out_dir,
                          size_t* warnings) {
  if (!config) {
    return null_arg("config");
  }
  if (!features_csv) {
    return null_arg("features_csv");
  }
  if (!out_dir) {
    return null_arg("out_dir");
  }
  return guarded([&] {
    const auto s = mlffn::commands::report(config->run, features_csv, out_dir);
    if (warnings) {
      *warnings = s.warnings.size();
    }
  });
}

mlffn_status mlffn_model_load(const char* checkpoint, mlffn_model** out) {
  if (!checkpoint) {
    return null_arg("checkpoint");
  }
  if (!out) {
    return null_arg("out");
  }
  return guarded([&] { *out = new mlffn_model(mlffn::model::load_checkpoint(checkpoint)); });
}

size_t mlffn_model_num_classes(const mlffn_model* model) { return model ? model->net.config().num_classes : 0; }

size_t mlffn_model_feature_dim(const mlffn_model* model) { return model ? model->net.config().feature_dim : 0; }

size_t mlffn_model_text_dim(const mlffn_model* model) {
  return model && model->net.config().uses_text() ? model->net.config().text_dim : 0;
}

size_t mlffn_model_param_count(mlffn_model* model) { return model ? model->net.param_count() : 0; }

const char* mlffn_model_variant(const mlffn_model* model) { return model ? model->variant.c_str() : ""; }

mlffn_status mlffn_model_predict(mlffn_model* model, const double* features, const double* text, size_t n,
                                 int* labels, double* probabilities) {
  if (!model) {
    return null_arg("model");
  }
  if (!features) {
    return null_arg("features");
  }
  if (!labels) {
    return null_arg("labels");
  }
  const auto& mc = model->net.config();
  if (mc.input_mode != mlffn::model::InputMode::FeatureVector) {
    return fail(MLFFN_ERR_ARGUMENT, "InvalidArgument", "prediction takes feature-vector models only");
  }
  if (mc.uses_text() && !text) {
    return null_arg("text");
  }
  if (n == 0) {
    return MLFFN_OK;
  }
  return guarded([&] {
    std::vector<mlffn::model::Sample> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::span<const double> row(features + i * mc.feature_dim, mc.feature_dim);
      samples[i].numeric = model->net.norm_stats ? mlffn::features::z_scores(row, *model->net.norm_stats)
                                                 : std::vector<double>(row.begin(), row.end());
      if (mc.uses_text()) {
        samples[i].text.assign(text + i * mc.text_dim, text + (i + 1) * mc.text_dim);
      } else {
        samples[i].text.assign(mc.text_dim, 0.0);
      }
    }
    const auto pred = mlffn::model::predict(model->net, samples);
    const auto k = mc.num_classes;
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = pred.labels[i];
      if (probabilities) {
        for (std::size_t c = 0; c < k; ++c) {
          probabilities[i * k + c] = pred.probabilities.data()[i * k + c];
        }
      }
    }
  });
}

void mlffn_model_free(mlffn_model* model) { delete model; }

mlffn_status mlffn_embed_text(const char* text, double* out, size_t out_len) {
  if (!text) {
    return null_arg("text");
  }
  if (!out) {
    return null_arg("out");
  }
  if (out_len < mlffn::embed::kEmbedDim) {
    return fail(MLFFN_ERR_ARGUMENT, "InvalidArgument", "output buffer holds fewer than 768 values");
  }
  return guarded([&] {
    const auto e = mlffn::embed::embed_local(text);
    std::copy(e.values.begin(), e.values.end(), out);
  });
}

}  // extern "C"
