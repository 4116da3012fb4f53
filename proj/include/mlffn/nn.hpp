#pragma once

// Small tensor and layer toolkit with hand-written backward passes.
// Layers cache what their backward pass needs during forward; call
// backward at most once per forward, in reverse order.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlffn::nn {

enum class Mode { Train, Eval };

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double value);
  void reshape(std::vector<std::size_t> shape);
  bool all_finite() const;
  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
void require_shape(const Tensor& t, const std::vector<std::size_t>& shape, std::string_view what);

// Counter-based generator: output i is a SplitMix64 mix of (key, i), so a
// stream is fully determined by its seed and position.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(seed) {}

  result_type operator()();
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  double uniform();  // [0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();   // Box-Muller
  std::uint64_t below(std::uint64_t n);

  // Independent stream keyed by name.
  Rng fork(std::string_view name) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;

  Param() = default;
  Param(std::string name, std::vector<std::size_t> shape);

  void zero_grad() { grad.fill(0.0); }
};

using ParamList = std::vector<Param*>;

void zero_grads(const ParamList& params);
std::size_t count_parameters(const ParamList& params);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform_fan_in(Param& p, std::size_t fan_in, Rng& rng);

class Dense {
 public:
  Dense() = default;
  Dense(std::string name, std::size_t in, std::size_t out, bool bias = true);

  void init(Rng& rng);
  // x [B, in] -> [B, out], y = x W^T + b
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  ParamList params();

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

  Param weight;  // [out, in]
  Param bias;    // [out]

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = true;
  Tensor x_;
};

// Same-length 1-D cross-correlation with zero padding (k-1)/2.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         bool bias = true);

  void init(Rng& rng);
  // x [B, C_in, L] -> [B, C_out, L]
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  ParamList params();

  std::size_t kernel() const { return kernel_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  Param weight;  // [C_out, C_in, k]
  Param bias;    // [C_out]

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t kernel_ = 1;
  bool has_bias_ = true;
  std::vector<std::size_t> x_shape_;
  std::vector<double> cols_;  // per batch item [C_in*k, L]
};

class BatchNorm1d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm1d() = default;
  BatchNorm1d(std::string name, std::size_t channels);

  // x [B, C, L]; train mode normalizes over (B, L) and updates running stats.
  Tensor forward(const Tensor& x, Mode mode);
  Tensor backward(const Tensor& dy);
  ParamList params();

  Param gamma;
  Param beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  std::size_t channels_ = 0;
  Mode mode_ = Mode::Eval;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);

 private:
  std::vector<unsigned char> mask_;
  std::vector<std::size_t> shape_;
};

// Single-head scaled dot-product self-attention over positions.
class Attention {
 public:
  Attention() = default;
  Attention(std::string name, std::size_t channels, std::size_t d_k);

  void init(Rng& rng);
  // x [B, L, C] -> [B, L, d_k]
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy);
  ParamList params();

  // Softmax weights of the last forward, [B, L, L].
  const Tensor& weights() const { return p_; }
  std::size_t d_k() const { return dk_; }

  Param wq;  // [d_k, C]
  Param wk;
  Param wv;

 private:
  std::size_t channels_ = 0;
  std::size_t dk_ = 0;
  Tensor x_;
  Tensor q_;
  Tensor k_;
  Tensor v_;
  Tensor p_;
};

class AdaptiveMaxPool1d {
 public:
  explicit AdaptiveMaxPool1d(std::size_t out_len = 1) : out_len_(out_len) {}

  // x [B, C, L] -> [B, C, out_len]; bins [floor(i*L/out), ceil((i+1)*L/out))
  Tensor forward(const Tensor& x);
  // Gradient goes to the argmax of each bin, first index on ties.
  Tensor backward(const Tensor& dy);

 private:
  std::size_t out_len_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// Inverted dropout; identity in eval mode or at rate 0.
class Dropout {
 public:
  explicit Dropout(double rate = 0.0);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng);
  Tensor backward(const Tensor& dy);
  double rate() const { return rate_; }

 private:
  double rate_;
  bool active_ = false;
  std::vector<double> mask_;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits
};

// Mean over the batch of -log softmax(logits)[label].
LossResult cross_entropy(const Tensor& logits, std::span<const int> labels);
Tensor softmax_rows(const Tensor& logits);

// [B, C, L] <-> [B, L, C]
Tensor swap_last_axes(const Tensor& x);
// Concatenate [B, C_i, L] along the channel axis.
Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> channels);
// Concatenate [B, F_i] along the feature axis.
Tensor concat_features(std::span<const Tensor> parts);
std::vector<Tensor> split_features(const Tensor& x, std::span<const std::size_t> widths);

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // theta *= (1 - lr*wd), then the bias-corrected Adam update.
  void step(const ParamList& params);

  long steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  long step_ = 0;
};

struct GradTarget {
  std::string name;
  Tensor* value;
  const Tensor* analytic;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Central differences of loss() against precomputed analytic gradients.
// max_per_tensor = 0 checks every coordinate, otherwise a seeded sample.
GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           double h = 1e-5, std::size_t max_per_tensor = 0,
                           std::uint64_t seed = 0);

}  // namespace mlffn::nn
