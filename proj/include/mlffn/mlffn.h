#ifndef MLFFN_H
#define MLFFN_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define MLFFN_API __declspec(dllexport)
#else
#define MLFFN_API __attribute__((visibility("default")))
#endif

/* Status values double as CLI exit codes. */
typedef enum mlffn_status {
  MLFFN_OK = 0,
  MLFFN_ERR_INTERNAL = 1,
  MLFFN_ERR_CONFIG = 2,
  MLFFN_ERR_DATA = 3,
  MLFFN_ERR_NETWORK = 4,
  MLFFN_ERR_NUMERIC = 5,
  MLFFN_ERR_ARGUMENT = 6
} mlffn_status;

typedef struct mlffn_config mlffn_config;
typedef struct mlffn_model mlffn_model;

MLFFN_API const char* mlffn_version(void);

/* Message and error-code name of the last failure on the calling thread. */
MLFFN_API const char* mlffn_last_error(void);
MLFFN_API const char* mlffn_last_error_code(void);

MLFFN_API void mlffn_string_free(char* s);

/* Run configuration */
MLFFN_API mlffn_status mlffn_config_default(uint64_t seed, mlffn_config** out);
MLFFN_API mlffn_status mlffn_config_parse(const char* json, mlffn_config** out);
MLFFN_API mlffn_status mlffn_config_load(const char* path, mlffn_config** out);
MLFFN_API mlffn_status mlffn_config_set_seed(mlffn_config* config, uint64_t seed);
MLFFN_API mlffn_status mlffn_config_set_offline(mlffn_config* config);
MLFFN_API mlffn_status mlffn_config_set_tau(mlffn_config* config, double tau);
MLFFN_API mlffn_status mlffn_config_set_model_json(mlffn_config* config, const char* json);
MLFFN_API mlffn_status mlffn_config_out_dir(const mlffn_config* config, char** out);
MLFFN_API mlffn_status mlffn_config_to_json(const mlffn_config* config, char** out);
MLFFN_API void mlffn_config_free(mlffn_config* config);

typedef void (*mlffn_epoch_fn)(const char* variant, int epoch, double train_loss, double train_accuracy,
                               double val_loss, double val_accuracy, void* user);

/* Pipeline stages; each writes only under out_dir and the cache directory. */
typedef struct mlffn_extract_summary {
  size_t rows;
  size_t dropped;
  size_t skipped;
} mlffn_extract_summary;

typedef struct mlffn_describe_summary {
  size_t rows;
  size_t remote;
  size_t fallback;
  size_t cached;
  size_t requests;
} mlffn_describe_summary;

typedef struct mlffn_train_summary {
  int epochs_run;
  int best_epoch;
  double best_val_accuracy;
  int early_stopped;
  double test_accuracy;
  size_t param_count;
} mlffn_train_summary;

typedef struct mlffn_metrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double macro_precision;
  double macro_recall;
  double macro_f1;
  size_t count;
} mlffn_metrics;

typedef struct mlffn_ablation_row {
  char variant[32];
  char title[48];
  double accuracy;
  double precision;
  double recall;
  double f1;
} mlffn_ablation_row;

#define MLFFN_NUM_VARIANTS 5

MLFFN_API mlffn_status mlffn_synth(const mlffn_config* config, const char* out_dir, size_t* files);
MLFFN_API mlffn_status mlffn_extract(const mlffn_config* config, const char* in_dir, const char* out_dir,
                                     int skip_bad, mlffn_extract_summary* summary);
MLFFN_API mlffn_status mlffn_describe(const mlffn_config* config, const char* features_csv, const char* out_dir,
                                      mlffn_describe_summary* summary);
MLFFN_API mlffn_status mlffn_embed(const mlffn_config* config, const char* descriptions_jsonl, const char* out_dir,
                                   size_t* rows);
/* embeddings_csv may be NULL for the numeric_only variant; segments_dir only for raw_series input. */
MLFFN_API mlffn_status mlffn_train(const mlffn_config* config, const char* features_csv, const char* embeddings_csv,
                                   const char* out_dir, const char* segments_dir, mlffn_epoch_fn on_epoch,
                                   void* user, mlffn_train_summary* summary);
/* split: "train", "val", "test" or "all". */
MLFFN_API mlffn_status mlffn_eval(const mlffn_config* config, const char* checkpoint, const char* features_csv,
                                  const char* embeddings_csv, const char* split, const char* out_dir,
                                  const char* segments_dir, mlffn_metrics* metrics);
MLFFN_API mlffn_status mlffn_ablate(const mlffn_config* config, const char* features_csv, const char* embeddings_csv,
                                    const char* out_dir, mlffn_epoch_fn on_epoch, void* user,
                                    mlffn_ablation_row rows[MLFFN_NUM_VARIANTS]);
MLFFN_API mlffn_status mlffn_report(const mlffn_config* config, const char* features_csv, const char* out_dir,
                                    size_t* warnings);

/* Trained model */
MLFFN_API mlffn_status mlffn_model_load(const char* checkpoint, mlffn_model** out);
MLFFN_API size_t mlffn_model_num_classes(const mlffn_model* model);
MLFFN_API size_t mlffn_model_feature_dim(const mlffn_model* model);
MLFFN_API size_t mlffn_model_text_dim(const mlffn_model* model);
MLFFN_API size_t mlffn_model_param_count(mlffn_model* model);
MLFFN_API const char* mlffn_model_variant(const mlffn_model* model);
/* features: n x feature_dim raw (un-normalized) values; text: n x text_dim or NULL
   for numeric_only. labels: n entries; probabilities: n x num_classes or NULL. */
MLFFN_API mlffn_status mlffn_model_predict(mlffn_model* model, const double* features, const double* text, size_t n,
                                           int* labels, double* probabilities);
MLFFN_API void mlffn_model_free(mlffn_model* model);

/* Deterministic local text embedding; out receives 768 values. */
MLFFN_API mlffn_status mlffn_embed_text(const char* text, double* out, size_t out_len);

#ifdef __cplusplus
}
#endif

#endif
