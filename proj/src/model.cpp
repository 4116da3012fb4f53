#include "mlffn/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>

#include "json.hpp"
#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::model {

using nn::Mode;
using nn::Tensor;
using json = nlohmann::ordered_json;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

MatMap mat(double* p, std::size_t r, std::size_t c) {
  return MatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
ConstMatMap mat(const double* p, std::size_t r, std::size_t c) {
  return ConstMatMap(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

struct VariantInfo {
  Variant variant;
  std::string_view key;
  std::string_view title;
};

constexpr std::array<VariantInfo, 5> kVariantInfo = {{
    {Variant::Full, "full", "Full Model"},
    {Variant::NoAttention, "no_attention", "w/o Spatio-Temp Attn."},
    {Variant::NoMultiscale, "no_multiscale", "w/o Multi-Scale Conv."},
    {Variant::TextOnly, "text_only", "Text Features Only"},
    {Variant::NumericOnly, "numeric_only", "Num. Features Only"},
}};

}  // namespace

std::string_view variant_key(Variant v) {
  for (const auto& info : kVariantInfo) {
    if (info.variant == v) return info.key;
  }
  return "full";
}

std::string_view variant_title(Variant v) {
  for (const auto& info : kVariantInfo) {
    if (info.variant == v) return info.title;
  }
  return "Full Model";
}

Variant parse_variant(std::string_view key) {
  for (const auto& info : kVariantInfo) {
    if (info.key == key) return info.variant;
  }
  throw Error(ErrorCode::UnknownVariant, std::string(key));
}

std::string_view input_mode_key(InputMode mode) {
  return mode == InputMode::RawSeries ? "raw_series" : "feature_vector";
}

InputMode parse_input_mode(std::string_view key) {
  if (key == "feature_vector") return InputMode::FeatureVector;
  if (key == "raw_series") return InputMode::RawSeries;
  throw Error(ErrorCode::ConfigError, "unknown input_mode '" + std::string(key) + "'");
}

// ------------------------------------------------------------------ config

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); };
  if (c.num_classes < 2) fail("num_classes must be at least 2");
  if (c.feature_dim == 0) fail("feature_dim must be positive");
  if (c.text_dim == 0) fail("text_dim must be positive");
  if (c.kernels.empty()) fail("kernels must not be empty");
  for (auto k : c.kernels) {
    if (k % 2 == 0) {
      throw Error(ErrorCode::EvenKernel, "kernel size " + std::to_string(k));
    }
  }
  if (c.refine_kernel % 2 == 0) {
    throw Error(ErrorCode::EvenKernel, "refine kernel size " + std::to_string(c.refine_kernel));
  }
  if (c.branch_channels == 0 || c.d_k == 0) fail("branch_channels and d_k must be positive");
  if (c.refine_channels.empty()) fail("refine_channels must not be empty");
  for (auto ch : c.refine_channels) {
    if (ch == 0) fail("refine channel widths must be positive");
  }
  if (c.input_mode == InputMode::RawSeries && c.raw_len < 2) fail("raw_len must be at least 2");
  if (c.pool_out_len == 0 || c.pool_out_len > c.sequence_length()) {
    fail("pool_out_len must lie in [1, sequence length]");
  }
  if (c.semantic_width == 0 || c.numeric_width == 0 || c.hidden == 0) fail("layer widths must be positive");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
    throw Error(ErrorCode::BadRate, "dropout " + util::format_double(c.dropout));
  }
  if (!(c.lr > 0.0)) fail("lr must be positive");
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (c.batch == 0) fail("batch must be positive");
  if (c.epochs < 1) fail("epochs must be at least 1");
  if (c.patience < 1) fail("patience must be at least 1");
}

ModelConfig make_variant(ModelConfig base, Variant variant) {
  if (variant == Variant::NoMultiscale && base.kernels.size() > 1) {
    base.branch_channels *= base.kernels.size();
    base.kernels = {3};
  }
  base.variant = variant;
  validate(base);
  return base;
}

ModelConfig make_variant(ModelConfig base, std::string_view key) {
  return make_variant(std::move(base), parse_variant(key));
}

namespace {

json config_json(const ModelConfig& c) {
  json j;
  j["num_classes"] = c.num_classes;
  j["feature_dim"] = c.feature_dim;
  j["input_mode"] = input_mode_key(c.input_mode);
  j["raw_len"] = c.raw_len;
  j["text_dim"] = c.text_dim;
  j["d_k"] = c.d_k;
  j["kernels"] = c.kernels;
  j["branch_channels"] = c.branch_channels;
  j["refine_channels"] = c.refine_channels;
  j["refine_kernel"] = c.refine_kernel;
  j["pool_out_len"] = c.pool_out_len;
  j["semantic_width"] = c.semantic_width;
  j["numeric_width"] = c.numeric_width;
  j["hidden"] = c.hidden;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["batch"] = c.batch;
  j["weight_decay"] = c.weight_decay;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["variant"] = variant_key(c.variant);
  j["deterministic"] = c.deterministic;
  return j;
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("model field '") + key + "': " + e.what());
  }
}

ModelConfig config_from(const json& j) {
  static const std::vector<std::string> known = [] {
    std::vector<std::string> keys;
    const auto defaults = config_json(ModelConfig{});
    for (const auto& item : defaults.items()) keys.push_back(item.key());
    return keys;
  }();
  if (!j.is_object()) {
    throw Error(ErrorCode::ConfigError, "model config must be an object");
  }
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end()) {
      throw Error(ErrorCode::ConfigError, "unknown model config key '" + item.key() + "'");
    }
  }
  ModelConfig c;
  read_field(j, "num_classes", c.num_classes);
  read_field(j, "feature_dim", c.feature_dim);
  std::string mode(input_mode_key(c.input_mode));
  read_field(j, "input_mode", mode);
  c.input_mode = parse_input_mode(mode);
  read_field(j, "raw_len", c.raw_len);
  read_field(j, "text_dim", c.text_dim);
  read_field(j, "d_k", c.d_k);
  read_field(j, "kernels", c.kernels);
  read_field(j, "branch_channels", c.branch_channels);
  read_field(j, "refine_channels", c.refine_channels);
  read_field(j, "refine_kernel", c.refine_kernel);
  read_field(j, "pool_out_len", c.pool_out_len);
  read_field(j, "semantic_width", c.semantic_width);
  read_field(j, "numeric_width", c.numeric_width);
  read_field(j, "hidden", c.hidden);
  read_field(j, "dropout", c.dropout);
  read_field(j, "lr", c.lr);
  read_field(j, "batch", c.batch);
  read_field(j, "weight_decay", c.weight_decay);
  read_field(j, "epochs", c.epochs);
  read_field(j, "patience", c.patience);
  read_field(j, "seed", c.seed);
  std::string variant(variant_key(c.variant));
  read_field(j, "variant", variant);
  c.variant = parse_variant(variant);
  read_field(j, "deterministic", c.deterministic);
  return c;
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("model config: ") + e.what());
  }
  return config_from(j);
}

std::uint64_t fingerprint(const ModelConfig& config) { return util::fnv1a(config_to_json(config)); }

// ------------------------------------------------------------------ batching

Batch make_batch(const ModelConfig& config, std::span<const Sample> samples,
                 std::span<const std::size_t> indices) {
  const auto b = indices.size();
  Batch batch;
  batch.labels.reserve(b);
  const auto channels = config.input_channels();
  const auto len = config.sequence_length();
  const auto width = config.numeric_input_width();
  if (config.uses_numeric()) batch.numeric = Tensor({b, channels, len});
  if (config.uses_text()) batch.text = Tensor({b, config.text_dim});
  for (std::size_t n = 0; n < b; ++n) {
    const auto& s = samples[indices[n]];
    if (config.uses_numeric()) {
      if (s.numeric.empty()) {
        throw Error(ErrorCode::VariantChannelMissing, "sample '" + s.id + "' has no numeric input");
      }
      if (s.numeric.size() != width) {
        throw Error(ErrorCode::ShapeMismatch, "sample '" + s.id + "' numeric width " +
                                                  std::to_string(s.numeric.size()) + " vs " +
                                                  std::to_string(width));
      }
      std::copy(s.numeric.begin(), s.numeric.end(), batch.numeric.data() + n * width);
    }
    if (config.uses_text()) {
      if (s.text.empty()) {
        throw Error(ErrorCode::VariantChannelMissing, "sample '" + s.id + "' has no text embedding");
      }
      if (s.text.size() != config.text_dim) {
        throw Error(ErrorCode::ShapeMismatch, "sample '" + s.id + "' text width " +
                                                  std::to_string(s.text.size()) + " vs " +
                                                  std::to_string(config.text_dim));
      }
      std::copy(s.text.begin(), s.text.end(), batch.text.data() + n * config.text_dim);
    }
    batch.labels.push_back(s.label);
  }
  return batch;
}

Batch make_batch(const ModelConfig& config, std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(config, samples, idx);
}

std::vector<double> resample_series(const TrajectorySegment& segment, std::size_t length) {
  const auto T = segment.size();
  if (T < 2 || length < 2) {
    throw Error(ErrorCode::TooShort, "resample needs at least 2 points");
  }
  std::vector<double> out;
  out.reserve(kRawChannels * length);
  for (const auto* series : {&segment.v, &segment.a, &segment.j}) {
    for (std::size_t i = 0; i < length; ++i) {
      const double pos = static_cast<double>(i) * static_cast<double>(T - 1) /
                         static_cast<double>(length - 1);
      const auto lo = std::min(static_cast<std::size_t>(pos), T - 2);
      const double frac = pos - static_cast<double>(lo);
      out.push_back((*series)[lo] + frac * ((*series)[lo + 1] - (*series)[lo]));
    }
  }
  return out;
}

// ------------------------------------------------------------------ network

FusionNet::FusionNet(ModelConfig config)
    : config_(std::move(config)),
      semantic_dropout_(0.0),
      pool_(1) {
  validate(config_);
  stored_fingerprint_ = fingerprint(config_);
  nn::Rng root(config_.seed);
  dropout_rng_ = root.fork("dropout");
  auto init_rng = root.fork("init");

  std::size_t fused = 0;
  if (config_.uses_text()) {
    semantic_proj = nn::Dense("semantic.proj", config_.text_dim, config_.semantic_width);
    semantic_proj.init(init_rng);
    semantic_dropout_ = nn::Dropout(config_.dropout);
    fused += config_.semantic_width;
  }
  if (config_.uses_numeric()) {
    const auto in_ch = config_.input_channels();
    std::size_t cat = 0;
    for (auto k : config_.kernels) {
      branches.emplace_back("numeric.branch_k" + std::to_string(k), in_ch, config_.branch_channels, k);
      branches.back().init(init_rng);
      branch_relus_.emplace_back();
      branch_widths_.push_back(config_.branch_channels);
      cat += config_.branch_channels;
    }
    std::size_t ch = cat;
    if (config_.uses_attention()) {
      attention = nn::Attention("numeric.attention", cat, config_.d_k);
      attention.init(init_rng);
      ch = config_.d_k;
    }
    for (std::size_t i = 0; i < config_.refine_channels.size(); ++i) {
      const auto out = config_.refine_channels[i];
      const auto prefix = "numeric.refine" + std::to_string(i + 1);
      refine_convs.emplace_back(prefix + ".conv", ch, out, config_.refine_kernel, false);
      refine_convs.back().init(init_rng);
      refine_norms.emplace_back(prefix + ".bn", out);
      refine_relus_.emplace_back();
      ch = out;
    }
    pool_ = nn::AdaptiveMaxPool1d(config_.pool_out_len);
    numeric_proj = nn::Dense("numeric.proj", ch * config_.pool_out_len, config_.numeric_width);
    numeric_proj.init(init_rng);
    fused += config_.numeric_width;
  }
  fuse_weight = nn::Param("fusion.hidden.weight", {config_.hidden, fused});
  fuse_bias = nn::Param("fusion.hidden.bias", {config_.hidden});
  {
    auto rw = init_rng.fork(fuse_weight.name);
    nn::init_uniform_fan_in(fuse_weight, fused, rw);
    auto rb = init_rng.fork(fuse_bias.name);
    nn::init_uniform_fan_in(fuse_bias, fused, rb);
  }
  classifier = nn::Dense("fusion.logits", config_.hidden, config_.num_classes);
  classifier.init(init_rng);
}

Tensor FusionNet::forward_numeric(const Tensor& x, Mode mode) {
  std::vector<Tensor> outs;
  outs.reserve(branches.size());
  for (std::size_t i = 0; i < branches.size(); ++i) {
    outs.push_back(branch_relus_[i].forward(branches[i].forward(x)));
  }
  Tensor h = outs.size() == 1 ? std::move(outs[0]) : nn::concat_channels(outs);
  if (config_.uses_attention()) {
    h = nn::swap_last_axes(attention.forward(nn::swap_last_axes(h)));
  }
  for (std::size_t i = 0; i < refine_convs.size(); ++i) {
    h = refine_relus_[i].forward(refine_norms[i].forward(refine_convs[i].forward(h), mode));
  }
  h = pool_.forward(h);
  pool_shape_ = h.shape();
  h.reshape({pool_shape_[0], pool_shape_[1] * pool_shape_[2]});
  return numeric_proj.forward(h);
}

void FusionNet::backward_numeric(const Tensor& d_final) {
  Tensor d = numeric_proj.backward(d_final);
  d.reshape(pool_shape_);
  d = pool_.backward(d);
  for (std::size_t i = refine_convs.size(); i-- > 0;) {
    d = refine_convs[i].backward(refine_norms[i].backward(refine_relus_[i].backward(d)));
  }
  if (config_.uses_attention()) {
    d = nn::swap_last_axes(attention.backward(nn::swap_last_axes(d)));
  }
  if (branches.size() == 1) {
    branches[0].backward(branch_relus_[0].backward(d));
    return;
  }
  auto parts = nn::split_channels(d, branch_widths_);
  for (std::size_t i = 0; i < branches.size(); ++i) {
    branches[i].backward(branch_relus_[i].backward(parts[i]));
  }
}

Tensor FusionNet::forward(const Batch& batch, Mode mode) {
  fuse_inputs_.clear();
  if (config_.uses_text()) {
    if (batch.text.empty()) {
      throw Error(ErrorCode::VariantChannelMissing, "text embedding required by variant " +
                                                        std::string(variant_key(config_.variant)));
    }
    Tensor e = semantic_relu_.forward(semantic_proj.forward(batch.text));
    fuse_inputs_.push_back(semantic_dropout_.forward(e, mode, dropout_rng_));
  }
  if (config_.uses_numeric()) {
    if (batch.numeric.empty()) {
      throw Error(ErrorCode::VariantChannelMissing, "numeric input required by variant " +
                                                        std::string(variant_key(config_.variant)));
    }
    fuse_inputs_.push_back(forward_numeric(batch.numeric, mode));
  }
  const auto b = fuse_inputs_.front().dim(0);
  for (const auto& part : fuse_inputs_) {
    if (part.dim(0) != b) {
      throw Error(ErrorCode::ShapeMismatch, "channel batch sizes differ");
    }
  }
  const auto hidden = config_.hidden;
  const auto fused = fuse_weight.value.dim(1);
  Tensor pre({b, hidden});
  auto P = mat(pre.data(), b, hidden);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < fuse_inputs_.size(); ++i) {
    const auto& part = fuse_inputs_[i];
    const auto w = part.dim(1);
    ConstStridedMap W(fuse_weight.value.data() + offset, static_cast<Eigen::Index>(hidden),
                      static_cast<Eigen::Index>(w), Eigen::OuterStride<>(static_cast<Eigen::Index>(fused)));
    if (i == 0) {
      P.noalias() = mat(part.data(), b, w) * W.transpose();
    } else {
      P.noalias() += mat(part.data(), b, w) * W.transpose();
    }
    offset += w;
  }
  P.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(fuse_bias.value.data(),
                                                      static_cast<Eigen::Index>(hidden));
  return classifier.forward(hidden_relu_.forward(pre));
}

void FusionNet::backward(const Tensor& dlogits) {
  Tensor dpre = hidden_relu_.backward(classifier.backward(dlogits));
  const auto b = dpre.dim(0);
  const auto hidden = config_.hidden;
  const auto fused = fuse_weight.value.dim(1);
  const auto dP = mat(static_cast<const double*>(dpre.data()), b, hidden);
  Eigen::Map<Eigen::RowVectorXd>(fuse_bias.grad.data(), static_cast<Eigen::Index>(hidden)) +=
      dP.colwise().sum();
  std::vector<Tensor> dparts;
  std::size_t offset = 0;
  for (const auto& part : fuse_inputs_) {
    const auto w = part.dim(1);
    const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(fused));
    StridedMap dW(fuse_weight.grad.data() + offset, static_cast<Eigen::Index>(hidden),
                  static_cast<Eigen::Index>(w), stride);
    ConstStridedMap W(fuse_weight.value.data() + offset, static_cast<Eigen::Index>(hidden),
                      static_cast<Eigen::Index>(w), stride);
    dW.noalias() += dP.transpose() * mat(part.data(), b, w);
    Tensor dpart({b, w});
    mat(dpart.data(), b, w).noalias() = dP * W;
    dparts.push_back(std::move(dpart));
    offset += w;
  }
  std::size_t i = 0;
  if (config_.uses_text()) {
    semantic_proj.backward(semantic_relu_.backward(semantic_dropout_.backward(dparts[i++])));
  }
  if (config_.uses_numeric()) {
    backward_numeric(dparts[i]);
  }
}

nn::ParamList FusionNet::params() {
  nn::ParamList out;
  auto add = [&](nn::ParamList ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  if (config_.uses_text()) add(semantic_proj.params());
  if (config_.uses_numeric()) {
    for (auto& b : branches) add(b.params());
    if (config_.uses_attention()) add(attention.params());
    for (std::size_t i = 0; i < refine_convs.size(); ++i) {
      add(refine_convs[i].params());
      add(refine_norms[i].params());
    }
    add(numeric_proj.params());
  }
  out.push_back(&fuse_weight);
  out.push_back(&fuse_bias);
  add(classifier.params());
  return out;
}

std::vector<std::pair<std::string, Tensor*>> FusionNet::buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < refine_norms.size(); ++i) {
    const auto prefix = "numeric.refine" + std::to_string(i + 1) + ".bn";
    out.emplace_back(prefix + ".running_mean", &refine_norms[i].running_mean);
    out.emplace_back(prefix + ".running_var", &refine_norms[i].running_var);
  }
  return out;
}

std::size_t FusionNet::param_count() { return nn::count_parameters(params()); }

// ------------------------------------------------------------------ inference

int argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = k;
  }
  return static_cast<int>(best);
}

namespace {

Prediction run_eval(FusionNet& net, std::span<const Sample> samples, std::size_t batch_size) {
  const auto n = samples.size();
  const auto k = net.config().num_classes;
  Prediction out;
  out.logits = Tensor({n, k});
  out.labels.reserve(n);
  batch_size = std::max<std::size_t>(batch_size, 1);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const auto end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    auto logits = net.forward(make_batch(net.config(), samples, idx), Mode::Eval);
    std::copy(logits.storage().begin(), logits.storage().end(), out.logits.data() + start * k);
  }
  out.probabilities = n > 0 ? nn::softmax_rows(out.logits) : Tensor({0, k});
  for (std::size_t i = 0; i < n; ++i) {
    out.labels.push_back(argmax_row(std::span<const double>(out.logits.data() + i * k, k)));
  }
  return out;
}

void check_fingerprint(std::uint64_t expected, std::uint64_t actual) {
  if (expected != actual) {
    throw Error(ErrorCode::FingerprintMismatch,
                "config fingerprint " + util::hex64(actual) + " vs checkpoint " + util::hex64(expected));
  }
}

}  // namespace

Prediction predict(FusionNet& net, std::span<const Sample> samples, std::size_t batch_size) {
  check_fingerprint(net.stored_fingerprint(), fingerprint(net.config()));
  return run_eval(net, samples, batch_size);
}

Prediction predict(FusionNet& net, const ModelConfig& expected, std::span<const Sample> samples,
                   std::size_t batch_size) {
  check_fingerprint(net.stored_fingerprint(), fingerprint(expected));
  return predict(net, samples, batch_size);
}

// ------------------------------------------------------------------ training

namespace {

struct EvalStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalStats evaluate(FusionNet& net, std::span<const Sample> samples) {
  auto pred = run_eval(net, samples, 256);
  std::vector<int> labels;
  labels.reserve(samples.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    labels.push_back(samples[i].label);
    correct += pred.labels[i] == samples[i].label ? 1 : 0;
  }
  EvalStats s;
  s.loss = nn::cross_entropy(pred.logits, labels).loss;
  s.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return s;
}

}  // namespace

TrainResult train(const ModelConfig& config, std::span<const Sample> train_set,
                  std::span<const Sample> val_set, const EpochCallback& on_epoch) {
  validate(config);
  if (train_set.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val_set.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  FusionNet net(config);
  auto params = net.params();
  nn::AdamW opt({config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  const auto shuffle_root = nn::Rng(config.seed).fork("shuffle");

  TrainResult result{net, {}, 0, -1.0, false};
  double best_loss = 0.0;
  int since_best = 0;
  std::vector<std::size_t> order(train_set.size());
  const auto k = config.num_classes;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto rng = shuffle_root.fork("epoch" + std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch, ++batch_id) {
      const auto end = std::min(order.size(), start + config.batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      auto batch = make_batch(config, train_set, idx);
      nn::zero_grads(params);
      auto logits = net.forward(batch, Mode::Train);
      if (!logits.all_finite()) throw NonfiniteLossError(epoch, batch_id);
      auto ce = nn::cross_entropy(logits, batch.labels);
      if (!std::isfinite(ce.loss)) throw NonfiniteLossError(epoch, batch_id);
      net.backward(ce.grad);
      opt.step(params);
      loss_sum += ce.loss * static_cast<double>(idx.size());
      for (std::size_t n = 0; n < idx.size(); ++n) {
        auto row = std::span<const double>(logits.data() + n * k, k);
        correct += argmax_row(row) == batch.labels[n] ? 1 : 0;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    auto val = evaluate(net, val_set);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (val.accuracy > result.best_val_accuracy ||
        (val.accuracy == result.best_val_accuracy && val.loss < best_loss)) {
      result.best_val_accuracy = val.accuracy;
      best_loss = val.loss;
      result.best_epoch = epoch;
      result.model = net;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

std::string training_log_jsonl(std::span<const EpochRecord> log) {
  std::string out;
  for (const auto& r : log) {
    for (int split = 0; split < 2; ++split) {
      json j;
      j["epoch"] = r.epoch;
      j["split"] = split == 0 ? "train" : "val";
      j["loss"] = split == 0 ? r.train_loss : r.val_loss;
      j["accuracy"] = split == 0 ? r.train_accuracy : r.val_accuracy;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

// ------------------------------------------------------------------ checkpoint

namespace {

constexpr std::string_view kMagic = "MLFFNCK1";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) {
      throw Error(ErrorCode::CorruptCheckpoint, "truncated at byte " + std::to_string(pos_));
    }
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint64_t u64() { return le(take(8)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(take(4))); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  static std::uint64_t le(std::string_view b) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < b.size(); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
    }
    return v;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct Entry {
  std::string name;
  Tensor* tensor;
  std::string kind;
};

std::vector<Entry> entries(FusionNet& net) {
  std::vector<Entry> out;
  for (auto* p : net.params()) out.push_back({p->name, &p->value, "param"});
  for (auto& [name, t] : net.buffers()) out.push_back({name, t, "buffer"});
  return out;
}

}  // namespace

std::string serialize_checkpoint(FusionNet& net) {
  json manifest;
  manifest["format"] = "mlffn-checkpoint";
  manifest["config"] = config_json(net.config());
  manifest["fingerprint"] = util::hex64(net.stored_fingerprint());
  manifest["param_count"] = net.param_count();
  json tensors = json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const auto& e : entries(net)) {
    json t;
    t["name"] = e.name;
    t["kind"] = e.kind;
    t["shape"] = e.tensor->shape();
    t["offset"] = offset;
    tensors.push_back(t);
    for (double v : e.tensor->storage()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
    offset += e.tensor->size();
  }
  manifest["tensors"] = tensors;
  if (net.norm_stats) {
    manifest["norm_stats"] = {{"names", net.norm_stats->names},
                              {"mean", net.norm_stats->mean},
                              {"std", net.norm_stats->std}};
  } else {
    manifest["norm_stats"] = nullptr;
  }
  const auto text = manifest.dump();
  std::string out(kMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  put_u64(out, payload.size());
  out += payload;
  put_u64(out, util::fnv1a(payload));
  return out;
}

FusionNet parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(kMagic.size()) != kMagic) {
    throw Error(ErrorCode::CorruptCheckpoint, "bad magic");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                               ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto manifest_len = r.u64();
  if (manifest_len > r.remaining()) throw Error(ErrorCode::CorruptCheckpoint, "truncated manifest");
  const auto text = r.take(manifest_len);
  const auto payload_len = r.u64();
  if (payload_len > r.remaining()) throw Error(ErrorCode::CorruptCheckpoint, "truncated payload");
  const auto payload = r.take(payload_len);
  const auto checksum = r.u64();
  if (r.remaining() != 0) throw Error(ErrorCode::CorruptCheckpoint, "trailing bytes");
  if (checksum != util::fnv1a(payload)) throw Error(ErrorCode::CorruptCheckpoint, "payload checksum");

  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("manifest: ") + e.what());
  }
  try {
    FusionNet net(config_from(manifest.at("config")));
    const auto fp = manifest.at("fingerprint").get<std::string>();
    net.set_stored_fingerprint(std::stoull(fp, nullptr, 16));
    const auto& tensors = manifest.at("tensors");
    auto expected = entries(net);
    if (tensors.size() != expected.size()) {
      throw Error(ErrorCode::CorruptCheckpoint, "tensor count does not match configuration");
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto& t = tensors[i];
      auto& e = expected[i];
      if (t.at("name").get<std::string>() != e.name ||
          t.at("shape").get<std::vector<std::size_t>>() != e.tensor->shape()) {
        throw Error(ErrorCode::CorruptCheckpoint, "tensor '" + e.name + "' does not match configuration");
      }
      const auto offset = t.at("offset").get<std::size_t>();
      if ((offset + e.tensor->size()) * 8 > payload.size()) {
        throw Error(ErrorCode::CorruptCheckpoint, "tensor '" + e.name + "' exceeds payload");
      }
      for (std::size_t k = 0; k < e.tensor->size(); ++k) {
        (*e.tensor)[k] = std::bit_cast<double>(Reader::le(payload.substr((offset + k) * 8, 8)));
      }
    }
    const auto& ns = manifest.at("norm_stats");
    if (!ns.is_null()) {
      features::NormStats stats;
      stats.names = ns.at("names").get<std::vector<std::string>>();
      stats.mean = ns.at("mean").get<std::vector<double>>();
      stats.std = ns.at("std").get<std::vector<double>>();
      net.norm_stats = std::move(stats);
    }
    return net;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::CorruptCheckpoint, "bad fingerprint");
  } catch (const std::out_of_range&) {
    throw Error(ErrorCode::CorruptCheckpoint, "bad fingerprint");
  }
}

void save_checkpoint(FusionNet& net, const std::filesystem::path& path) {
  util::write_file_atomic(path, serialize_checkpoint(net));
}

FusionNet load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(util::read_file(path));
}

}  // namespace mlffn::model
