#pragma once

// Dual-channel fusion classifier: a projected text embedding and a
// convolutional/attention encoder over the numeric input, joined by a
// two-layer head.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlffn/features.hpp"
#include "mlffn/nn.hpp"

namespace mlffn::model {

enum class Variant { Full, NoAttention, NoMultiscale, TextOnly, NumericOnly };

inline constexpr std::array<Variant, 5> kAllVariants = {
    Variant::Full, Variant::NoAttention, Variant::NoMultiscale, Variant::TextOnly,
    Variant::NumericOnly};

// Config key, e.g. "no_attention".
std::string_view variant_key(Variant v);
// Table row name, e.g. "w/o Spatio-Temp Attn.".
std::string_view variant_title(Variant v);
Variant parse_variant(std::string_view key);

enum class InputMode { FeatureVector, RawSeries };

std::string_view input_mode_key(InputMode mode);
InputMode parse_input_mode(std::string_view key);

inline constexpr std::size_t kTextDim = 768;
inline constexpr std::size_t kRawChannels = 3;

struct ModelConfig {
  std::size_t num_classes = 4;
  std::size_t feature_dim = 36;
  InputMode input_mode = InputMode::FeatureVector;
  std::size_t raw_len = 200;
  std::size_t text_dim = kTextDim;
  std::size_t d_k = 64;
  std::vector<std::size_t> kernels = {3, 5, 7};
  std::size_t branch_channels = 64;
  std::vector<std::size_t> refine_channels = {128, 128};
  std::size_t refine_kernel = 3;
  std::size_t pool_out_len = 1;
  std::size_t semantic_width = 128;
  std::size_t numeric_width = 128;
  std::size_t hidden = 256;
  double dropout = 0.3;
  double lr = 2e-5;
  std::size_t batch = 64;
  double weight_decay = 0.01;
  int epochs = 100;
  int patience = 20;
  std::uint64_t seed = 0;
  Variant variant = Variant::Full;
  bool deterministic = true;

  bool uses_text() const { return variant != Variant::NumericOnly; }
  bool uses_numeric() const { return variant != Variant::TextOnly; }
  bool uses_attention() const { return variant != Variant::NoAttention; }
  std::size_t input_channels() const {
    return input_mode == InputMode::RawSeries ? kRawChannels : 1;
  }
  std::size_t sequence_length() const {
    return input_mode == InputMode::RawSeries ? raw_len : feature_dim;
  }
  // Flattened numeric input width per sample.
  std::size_t numeric_input_width() const { return input_channels() * sequence_length(); }
};

void validate(const ModelConfig& config);
ModelConfig make_variant(ModelConfig base, Variant variant);
ModelConfig make_variant(ModelConfig base, std::string_view variant_key);

// Canonical JSON text; the fingerprint hashes exactly this text.
std::string config_to_json(const ModelConfig& config);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig config_from_json(std::string_view json_text);
std::uint64_t fingerprint(const ModelConfig& config);

struct Sample {
  std::string id;
  std::vector<double> numeric;  // feature_vector: D values; raw_series: 3 x raw_len, channel-major
  std::vector<double> text;     // text_dim values
  int label = -1;
};

struct Batch {
  nn::Tensor numeric;  // [B, C, L]
  nn::Tensor text;     // [B, text_dim]
  std::vector<int> labels;
};

Batch make_batch(const ModelConfig& config, std::span<const Sample> samples,
                 std::span<const std::size_t> indices);
Batch make_batch(const ModelConfig& config, std::span<const Sample> samples);

// Linear resampling of speed, acceleration and jerk to a fixed length,
// laid out channel-major.
std::vector<double> resample_series(const TrajectorySegment& segment, std::size_t length);

class FusionNet {
 public:
  explicit FusionNet(ModelConfig config);

  const ModelConfig& config() const { return config_; }

  nn::Tensor forward(const Batch& batch, nn::Mode mode);
  // Accumulates parameter gradients for the last forward pass.
  void backward(const nn::Tensor& dlogits);

  nn::ParamList params();
  // Non-trainable state saved alongside parameters (batch-norm running stats).
  std::vector<std::pair<std::string, nn::Tensor*>> buffers();
  std::size_t param_count();

  // Fingerprint recorded when the weights were created or loaded.
  std::uint64_t stored_fingerprint() const { return stored_fingerprint_; }
  void set_stored_fingerprint(std::uint64_t fp) { stored_fingerprint_ = fp; }

  std::optional<features::NormStats> norm_stats;

  // Named sub-layers, exposed for inspection and tests.
  nn::Dense semantic_proj;
  std::vector<nn::Conv1d> branches;
  nn::Attention attention;
  std::vector<nn::Conv1d> refine_convs;
  std::vector<nn::BatchNorm1d> refine_norms;
  nn::Dense numeric_proj;
  nn::Param fuse_weight;  // [hidden, fused width]
  nn::Param fuse_bias;    // [hidden]
  nn::Dense classifier;

 private:
  nn::Tensor forward_numeric(const nn::Tensor& x, nn::Mode mode);
  void backward_numeric(const nn::Tensor& d_final);

  ModelConfig config_;
  std::uint64_t stored_fingerprint_ = 0;
  nn::Rng dropout_rng_;

  nn::ReLU semantic_relu_;
  nn::Dropout semantic_dropout_;
  std::vector<nn::ReLU> branch_relus_;
  std::vector<nn::ReLU> refine_relus_;
  nn::AdaptiveMaxPool1d pool_;
  nn::ReLU hidden_relu_;

  std::vector<nn::Tensor> fuse_inputs_;
  std::vector<std::size_t> branch_widths_;
  std::vector<std::size_t> pool_shape_;
};

struct Prediction {
  std::vector<int> labels;
  nn::Tensor probabilities;  // [N, K]
  nn::Tensor logits;         // [N, K]
};

// Argmax with ties resolved to the lowest class index.
int argmax_row(std::span<const double> row);

// Eval-mode inference. Throws FingerprintMismatch when the model's
// configuration no longer hashes to the fingerprint it was stored with.
Prediction predict(FusionNet& net, std::span<const Sample> samples, std::size_t batch_size = 256);
Prediction predict(FusionNet& net, const ModelConfig& expected, std::span<const Sample> samples,
                   std::size_t batch_size = 256);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  FusionNet model;
  std::vector<EpochRecord> log;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(const ModelConfig& config, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const EpochCallback& on_epoch = {});

// One line per epoch and split: {"epoch", "split", "loss", "accuracy"}.
std::string training_log_jsonl(std::span<const EpochRecord> log);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_checkpoint(FusionNet& net);
FusionNet parse_checkpoint(std::string_view bytes);
void save_checkpoint(FusionNet& net, const std::filesystem::path& path);
FusionNet load_checkpoint(const std::filesystem::path& path);

}  // namespace mlffn::model
