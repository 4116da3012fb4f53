#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlffn/embed.hpp"
#include "mlffn/eval.hpp"
#include "mlffn/features.hpp"
#include "mlffn/ingest.hpp"
#include "mlffn/model.hpp"
#include "mlffn/semantic.hpp"

namespace mlffn::pipeline {

inline constexpr int kConfigVersion = 1;

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir;  // empty: no cache in the library, <out_dir>/cache in commands
  features::FeatureConfig features;
  ingest::CleanConfig clean;
  semantic::LlmConfig llm;
  embed::EmbedConfig embedding;
  model::ModelConfig model;
  std::array<double, 3> split = eval::kDefaultRatios;
  eval::SynthConfig synth;
  bool offline = false;
};

// Requires "seed"; any key outside the documented set is a ConfigError.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_json(const RunConfig& config);

// Propagates the run seed into the model and the synthetic generator.
void set_seed(RunConfig& config, std::uint64_t seed);
// Drops both remote endpoints.
void set_offline(RunConfig& config);

semantic::LlmConfig describer_config(const RunConfig& config);
embed::EmbedConfig embedder_config(const RunConfig& config);

struct ExtractResult {
  std::vector<TrajectorySegment> segments;
  std::vector<features::FeatureVector> features;
  ingest::CleanResult clean;
  std::vector<std::pair<std::string, std::string>> skipped;  // file, reason
};

// Parses every *.csv under dir in name order. Without skip_bad the first
// unreadable file aborts the run.
ExtractResult extract_dir(const std::filesystem::path& dir, const RunConfig& config, bool skip_bad);
ExtractResult extract_segments(std::vector<TrajectorySegment> segments, const RunConfig& config);

std::vector<int> labels_of(std::span<const features::FeatureVector> rows);

std::vector<semantic::SemanticDescription> describe_all(std::span<const features::FeatureVector> rows,
                                                        const features::NormStats& stats,
                                                        const semantic::LlmConfig& config);
std::vector<embed::TextEmbedding> embed_all(std::span<const semantic::SemanticDescription> descriptions,
                                            const embed::EmbedConfig& config);

// One sample per row: normalized features (or resampled raw series) plus text embedding.
std::vector<model::Sample> make_samples(const model::ModelConfig& config,
                                        std::span<const features::FeatureVector> rows,
                                        const features::NormStats& stats,
                                        std::span<const embed::TextEmbedding> embeddings,
                                        std::span<const std::size_t> indices,
                                        std::span<const TrajectorySegment> segments = {});

struct SplitStats {
  eval::Split split;
  features::NormStats stats;  // fitted on the training split only
};

// Seeded stratified split over the row labels, then training-split statistics.
SplitStats split_and_fit(const RunConfig& config, std::span<const features::FeatureVector> rows);

// Samples carry both channels so any variant can train on them.
eval::DatasetSplits build_splits(const model::ModelConfig& config, std::span<const features::FeatureVector> rows,
                                 const SplitStats& fitted, std::span<const embed::TextEmbedding> embeddings,
                                 std::span<const TrajectorySegment> segments = {});

struct PreparedData {
  features::NormStats stats;  // fitted on the training split only
  eval::Split split;
  std::vector<semantic::SemanticDescription> descriptions;
  std::vector<embed::TextEmbedding> embeddings;
  eval::DatasetSplits data;
  model::ModelConfig model;  // feature_dim matched to the data
};

PreparedData prepare(const RunConfig& config, std::span<const features::FeatureVector> rows,
                     std::span<const TrajectorySegment> segments = {});

std::string descriptions_jsonl(std::span<const features::FeatureVector> rows,
                               std::span<const semantic::SemanticDescription> descriptions);
std::string embeddings_csv(std::span<const std::string> ids, std::span<const embed::TextEmbedding> embeddings);
std::vector<std::pair<std::string, std::vector<double>>> parse_embeddings_csv(std::string_view text);

}  // namespace mlffn::pipeline
