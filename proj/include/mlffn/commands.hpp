#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mlffn/eval.hpp"
#include "mlffn/pipeline.hpp"

// File-level pipeline stages. Each reads its inputs, writes only under out_dir
// (plus the configured cache directory) and returns a short summary.
namespace mlffn::commands {

namespace fs = std::filesystem;

// Cache directory used by commands: the configured one, else <out_dir>/cache.
fs::path cache_dir_for(const pipeline::RunConfig& config, const fs::path& out_dir);

struct SynthSummary {
  std::size_t files = 0;
};
// Writes <out_dir>/<id>.csv per labeled segment.
SynthSummary synth(const pipeline::RunConfig& config, const fs::path& out_dir);

struct ExtractSummary {
  std::size_t rows = 0;
  std::size_t dropped = 0;
  std::size_t skipped = 0;
};
// features.csv, drop_report.json, extract_meta.json
ExtractSummary extract(const pipeline::RunConfig& config, const fs::path& in_dir, const fs::path& out_dir,
                       bool skip_bad);

struct DescribeSummary {
  std::size_t rows = 0;
  std::size_t remote = 0;
  std::size_t fallback = 0;
  std::size_t cached = 0;
  std::size_t requests = 0;  // HTTP requests issued, retries included
};
// descriptions.jsonl, norm_stats.txt, split.json
DescribeSummary describe(const pipeline::RunConfig& config, const fs::path& features_csv, const fs::path& out_dir);

struct EmbedSummary {
  std::size_t rows = 0;
  std::string encoder_id;
};
// embeddings.csv
EmbedSummary embed(const pipeline::RunConfig& config, const fs::path& descriptions_jsonl, const fs::path& out_dir);

struct TrainSummary {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  bool early_stopped = false;
  double test_accuracy = 0.0;
  std::size_t param_count = 0;
};
// model.ckpt, train_log.jsonl, split.json, train_summary.json. embeddings_csv
// may be empty for the numeric_only variant; segments_dir is needed only for
// raw_series input.
TrainSummary train(const pipeline::RunConfig& config, const fs::path& features_csv, const fs::path& embeddings_csv,
                   const fs::path& out_dir, const fs::path& segments_dir = {},
                   const model::EpochCallback& on_epoch = {});

// split is one of train, val, test, all. Writes metrics_<split>.json.
eval::MetricsReport evaluate(const pipeline::RunConfig& config, const fs::path& checkpoint,
                             const fs::path& features_csv, const fs::path& embeddings_csv, const std::string& split,
                             const fs::path& out_dir, const fs::path& segments_dir = {});

// ablation.csv, ablation_macro.csv, ablation_log.jsonl
std::vector<eval::AblationRow> ablate(const pipeline::RunConfig& config, const fs::path& features_csv,
                                      const fs::path& embeddings_csv, const fs::path& out_dir,
                                      const eval::AblationProgress& progress = {});

struct ReportSummary {
  std::size_t features = 0;
  std::size_t curves = 0;
  std::vector<std::string> warnings;
};
// correlation.csv, distribution_samples.csv, distribution_kde.csv, report_warnings.txt
ReportSummary report(const pipeline::RunConfig& config, const fs::path& features_csv, const fs::path& out_dir,
                     const std::vector<std::string>& feature_names = {});

// Embedding rows re-ordered to match the feature rows by id.
std::vector<embed::TextEmbedding> load_embeddings(const fs::path& path,
                                                  const std::vector<features::FeatureVector>& rows);

}  // namespace mlffn::commands
