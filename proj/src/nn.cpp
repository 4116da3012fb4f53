#include "mlffn/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlffn/error.hpp"
#include "mlffn/util.hpp"

namespace mlffn::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

MatMap as_mat(double* data, std::size_t rows, std::size_t cols) {
  return MatMap(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_mat(const double* data, std::size_t rows, std::size_t cols) {
  return ConstMatMap(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + ": expected rank " +
                                              std::to_string(rank) + ", got " + t.shape_string());
  }
}

// Plain left-to-right loops: vectorized reductions change their summation
// order with buffer alignment, which would make results address-dependent.
double sequential_sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void softmax_inplace(double* x, std::size_t n) {
  double mx = x[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (std::size_t i = 0; i < n; ++i) x[i] /= sum;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "tensor " + shape_string() + " given " +
                                              std::to_string(data_.size()) + " values");
  }
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(std::vector<std::size_t> shape) {
  if (shape_size(shape) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string());
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    s += (i ? "," : "") + std::to_string(shape_[i]);
  }
  return s + "]";
}

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& shape, std::string_view what) {
  if (t.shape() != shape) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(what) + ": got " + t.shape_string() + ", expected " +
                    Tensor(shape).shape_string());
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::result_type Rng::operator()() {
  ++counter_;
  return splitmix64(key_ ^ splitmix64(counter_));
}

double Rng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = max() - max() % n;
  std::uint64_t x = (*this)();
  while (x >= limit) {
    x = (*this)();
  }
  return x % n;
}

Rng Rng::fork(std::string_view name) const {
  return Rng(splitmix64(key_ ^ util::fnv1a(name)));
}

Param::Param(std::string name_, std::vector<std::size_t> shape)
    : name(std::move(name_)), value(shape), grad(shape), m(shape), v(shape) {}

void zero_grads(const ParamList& params) {
  for (auto* p : params) {
    p->zero_grad();
  }
}

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto* p : params) {
    n += p->value.size();
  }
  return n;
}

void init_uniform_fan_in(Param& p, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& w : p.value.storage()) {
    w = rng.uniform(-bound, bound);
  }
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::string name, std::size_t in, std::size_t out, bool bias)
    : weight(name + ".weight", {out, in}),
      bias(name + ".bias", {bias ? out : 0}),
      in_(in),
      out_(out),
      has_bias_(bias) {}

void Dense::init(Rng& rng) {
  auto r = rng.fork(weight.name);
  init_uniform_fan_in(weight, in_, r);
  if (has_bias_) {
    auto rb = rng.fork(bias.name);
    init_uniform_fan_in(bias, in_, rb);
  }
}

Tensor Dense::forward(const Tensor& x) {
  require_rank(x, 2, "dense input");
  if (x.dim(1) != in_) {
    throw Error(ErrorCode::ShapeMismatch, weight.name + ": input " + x.shape_string() +
                                              " vs in=" + std::to_string(in_));
  }
  x_ = x;
  const auto b = x.dim(0);
  Tensor y({b, out_});
  auto Y = as_mat(y.data(), b, out_);
  Y.noalias() = as_mat(x.data(), b, in_) * as_mat(weight.value.data(), out_, in_).transpose();
  if (has_bias_) {
    Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value.data(), static_cast<Eigen::Index>(out_));
  }
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  const auto b = x_.dim(0);
  require_shape(dy, {b, out_}, weight.name + " grad");
  auto dY = as_mat(dy.data(), b, out_);
  as_mat(weight.grad.data(), out_, in_).noalias() += dY.transpose() * as_mat(x_.data(), b, in_);
  if (has_bias_) {
    Eigen::Map<Eigen::RowVectorXd>(bias.grad.data(), static_cast<Eigen::Index>(out_)) += dY.colwise().sum();
  }
  Tensor dx({b, in_});
  as_mat(dx.data(), b, in_).noalias() = dY * as_mat(weight.value.data(), out_, in_);
  return dx;
}

ParamList Dense::params() {
  if (has_bias_) {
    return {&weight, &bias};
  }
  return {&weight};
}

// ---------------------------------------------------------------- Conv1d

Conv1d::Conv1d(std::string name, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, bool bias)
    : weight(name + ".weight", {out_channels, in_channels, kernel}),
      bias(name + ".bias", {bias ? out_channels : 0}),
      in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      has_bias_(bias) {
  if (kernel % 2 == 0) {
    throw Error(ErrorCode::EvenKernel, name + ": kernel size " + std::to_string(kernel));
  }
}

void Conv1d::init(Rng& rng) {
  auto r = rng.fork(weight.name);
  init_uniform_fan_in(weight, in_ * kernel_, r);
  if (has_bias_) {
    auto rb = rng.fork(bias.name);
    init_uniform_fan_in(bias, in_ * kernel_, rb);
  }
}

Tensor Conv1d::forward(const Tensor& x) {
  require_rank(x, 3, "conv1d input");
  if (x.dim(1) != in_) {
    throw Error(ErrorCode::ShapeMismatch, weight.name + ": input " + x.shape_string() +
                                              " vs C_in=" + std::to_string(in_));
  }
  const auto b = x.dim(0);
  const auto len = x.dim(2);
  const auto rows = in_ * kernel_;
  const auto pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
  x_shape_ = x.shape();
  cols_.assign(b * rows * len, 0.0);
  Tensor y({b, out_, len});
  const auto W = as_mat(weight.value.data(), out_, rows);
  for (std::size_t n = 0; n < b; ++n) {
    double* cols = cols_.data() + n * rows * len;
    const double* xn = x.data() + n * in_ * len;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t j = 0; j < kernel_; ++j) {
        double* row = cols + (c * kernel_ + j) * len;
        const auto shift = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::size_t t = 0; t < len; ++t) {
          const auto src = static_cast<std::ptrdiff_t>(t) + shift;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
            row[t] = xn[c * len + static_cast<std::size_t>(src)];
          }
        }
      }
    }
    auto Y = as_mat(y.data() + n * out_ * len, out_, len);
    Y.noalias() = W * as_mat(cols, rows, len);
    if (has_bias_) {
      Y.colwise() += ConstVecMap(bias.value.data(), static_cast<Eigen::Index>(out_));
    }
  }
  return y;
}

Tensor Conv1d::backward(const Tensor& dy) {
  const auto b = x_shape_.at(0);
  const auto len = x_shape_.at(2);
  require_shape(dy, {b, out_, len}, weight.name + " grad");
  const auto rows = in_ * kernel_;
  const auto pad = static_cast<std::ptrdiff_t>(kernel_ / 2);
  const auto W = as_mat(weight.value.data(), out_, rows);
  auto dW = as_mat(weight.grad.data(), out_, rows);
  Tensor dx(x_shape_);
  RowMat dcols(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(len));
  for (std::size_t n = 0; n < b; ++n) {
    const auto dY = as_mat(dy.data() + n * out_ * len, out_, len);
    const auto cols = as_mat(cols_.data() + n * rows * len, rows, len);
    dW.noalias() += dY * cols.transpose();
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) {
        bias.grad[o] += sequential_sum(dy.data() + (n * out_ + o) * len, len);
      }
    }
    dcols.noalias() = W.transpose() * dY;
    double* dxn = dx.data() + n * in_ * len;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t j = 0; j < kernel_; ++j) {
        const double* row = dcols.data() + (c * kernel_ + j) * len;
        const auto shift = static_cast<std::ptrdiff_t>(j) - pad;
        for (std::size_t t = 0; t < len; ++t) {
          const auto src = static_cast<std::ptrdiff_t>(t) + shift;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(len)) {
            dxn[c * len + static_cast<std::size_t>(src)] += row[t];
          }
        }
      }
    }
  }
  return dx;
}

ParamList Conv1d::params() {
  if (has_bias_) {
    return {&weight, &bias};
  }
  return {&weight};
}

// ---------------------------------------------------------------- BatchNorm1d

BatchNorm1d::BatchNorm1d(std::string name, std::size_t channels)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      channels_(channels) {
  gamma.value.fill(1.0);
}

Tensor BatchNorm1d::forward(const Tensor& x, Mode mode) {
  require_rank(x, 3, "batchnorm input");
  if (x.dim(1) != channels_) {
    throw Error(ErrorCode::ShapeMismatch, gamma.name + ": input " + x.shape_string());
  }
  const auto b = x.dim(0);
  const auto len = x.dim(2);
  const auto count = b * len;
  mode_ = mode;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0);
  if (mode == Mode::Train && count < 2) {
    throw Error(ErrorCode::DegenerateBatch, gamma.name + ": train mode needs B*L >= 2");
  }
  for (std::size_t c = 0; c < channels_; ++c) {
    double mu = 0.0;
    double var = 0.0;
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < b; ++n) {
        const double* row = x.data() + (n * channels_ + c) * len;
        for (std::size_t t = 0; t < len; ++t) {
          mu += row[t];
        }
      }
      mu /= static_cast<double>(count);
      for (std::size_t n = 0; n < b; ++n) {
        const double* row = x.data() + (n * channels_ + c) * len;
        for (std::size_t t = 0; t < len; ++t) {
          var += (row[t] - mu) * (row[t] - mu);
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
      running_mean[c] = (1.0 - kMomentum) * running_mean[c] + kMomentum * mu;
      running_var[c] = (1.0 - kMomentum) * running_var[c] + kMomentum * unbiased;
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_[c] = inv;
    const double g = gamma.value[c];
    const double be = beta.value[c];
    for (std::size_t n = 0; n < b; ++n) {
      const auto off = (n * channels_ + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        const double xh = (x[off + t] - mu) * inv;
        xhat_[off + t] = xh;
        y[off + t] = g * xh + be;
      }
    }
  }
  return y;
}

Tensor BatchNorm1d::backward(const Tensor& dy) {
  require_shape(dy, xhat_.shape(), gamma.name + " grad");
  const auto b = dy.dim(0);
  const auto len = dy.dim(2);
  const auto count = static_cast<double>(b * len);
  Tensor dx(dy.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
      const auto off = (n * channels_ + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        sum_dy += dy[off + t];
        sum_dy_xhat += dy[off + t] * xhat_[off + t];
      }
    }
    gamma.grad[c] += sum_dy_xhat;
    beta.grad[c] += sum_dy;
    const double g = gamma.value[c];
    const double inv = inv_std_[c];
    for (std::size_t n = 0; n < b; ++n) {
      const auto off = (n * channels_ + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        if (mode_ == Mode::Train) {
          dx[off + t] = g * inv / count *
                        (count * dy[off + t] - sum_dy - xhat_[off + t] * sum_dy_xhat);
        } else {
          dx[off + t] = g * inv * dy[off + t];
        }
      }
    }
  }
  return dx;
}

ParamList BatchNorm1d::params() { return {&gamma, &beta}; }

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x) {
  shape_ = x.shape();
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = x[i] > 0.0 ? 1 : 0;
    // NaN passes through so non-finite inputs surface in the loss.
    y[i] = (mask_[i] || std::isnan(x[i])) ? x[i] : 0.0;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  require_shape(dy, shape_, "relu grad");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx[i] = mask_[i] ? dy[i] : 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------- Attention

Attention::Attention(std::string name, std::size_t channels, std::size_t d_k)
    : wq(name + ".wq", {d_k, channels}),
      wk(name + ".wk", {d_k, channels}),
      wv(name + ".wv", {d_k, channels}),
      channels_(channels),
      dk_(d_k) {}

void Attention::init(Rng& rng) {
  for (auto* p : {&wq, &wk, &wv}) {
    auto r = rng.fork(p->name);
    init_uniform_fan_in(*p, channels_, r);
  }
}

Tensor Attention::forward(const Tensor& x) {
  require_rank(x, 3, "attention input");
  if (x.dim(2) != channels_) {
    throw Error(ErrorCode::ShapeMismatch, wq.name + ": input " + x.shape_string() +
                                              " vs C=" + std::to_string(channels_));
  }
  const auto b = x.dim(0);
  const auto len = x.dim(1);
  const auto rows = b * len;
  x_ = x;
  q_ = Tensor({b, len, dk_});
  k_ = Tensor({b, len, dk_});
  v_ = Tensor({b, len, dk_});
  const auto X = as_mat(x.data(), rows, channels_);
  as_mat(q_.data(), rows, dk_).noalias() = X * as_mat(wq.value.data(), dk_, channels_).transpose();
  as_mat(k_.data(), rows, dk_).noalias() = X * as_mat(wk.value.data(), dk_, channels_).transpose();
  as_mat(v_.data(), rows, dk_).noalias() = X * as_mat(wv.value.data(), dk_, channels_).transpose();

  const double scale = 1.0 / std::sqrt(static_cast<double>(dk_));
  p_ = Tensor({b, len, len});
  Tensor out({b, len, dk_});
  for (std::size_t n = 0; n < b; ++n) {
    const auto Q = as_mat(q_.data() + n * len * dk_, len, dk_);
    const auto K = as_mat(k_.data() + n * len * dk_, len, dk_);
    const auto V = as_mat(v_.data() + n * len * dk_, len, dk_);
    auto P = as_mat(p_.data() + n * len * len, len, len);
    P.noalias() = (Q * K.transpose()) * scale;
    for (std::size_t r = 0; r < len; ++r) {
      softmax_inplace(p_.data() + (n * len + r) * len, len);
    }
    as_mat(out.data() + n * len * dk_, len, dk_).noalias() = P * V;
  }
  return out;
}

Tensor Attention::backward(const Tensor& dy) {
  const auto b = x_.dim(0);
  const auto len = x_.dim(1);
  const auto rows = b * len;
  require_shape(dy, {b, len, dk_}, wq.name + " grad");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk_));
  Tensor dq({b, len, dk_});
  Tensor dk({b, len, dk_});
  Tensor dv({b, len, dk_});
  RowMat dP(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(len));
  for (std::size_t n = 0; n < b; ++n) {
    const auto off = n * len * dk_;
    const auto Q = as_mat(q_.data() + off, len, dk_);
    const auto K = as_mat(k_.data() + off, len, dk_);
    const auto V = as_mat(v_.data() + off, len, dk_);
    const auto P = as_mat(p_.data() + n * len * len, len, len);
    const auto dA = as_mat(dy.data() + off, len, dk_);
    as_mat(dv.data() + off, len, dk_).noalias() = P.transpose() * dA;
    dP.noalias() = dA * V.transpose();
    // Softmax Jacobian per row: dS = P * (dP - <dP, P>)
    Eigen::VectorXd inner(static_cast<Eigen::Index>(len));
    for (Eigen::Index r = 0; r < inner.size(); ++r) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < inner.size(); ++k) acc += dP(r, k) * P(r, k);
      inner(r) = acc;
    }
    RowMat dS = P.array() * (dP.array().colwise() - inner.array());
    dS *= scale;
    as_mat(dq.data() + off, len, dk_).noalias() = dS * K;
    as_mat(dk.data() + off, len, dk_).noalias() = dS.transpose() * Q;
  }
  const auto X = as_mat(x_.data(), rows, channels_);
  const auto dQ = as_mat(dq.data(), rows, dk_);
  const auto dK = as_mat(dk.data(), rows, dk_);
  const auto dV = as_mat(dv.data(), rows, dk_);
  as_mat(wq.grad.data(), dk_, channels_).noalias() += dQ.transpose() * X;
  as_mat(wk.grad.data(), dk_, channels_).noalias() += dK.transpose() * X;
  as_mat(wv.grad.data(), dk_, channels_).noalias() += dV.transpose() * X;
  Tensor dx({b, len, channels_});
  auto dX = as_mat(dx.data(), rows, channels_);
  dX.noalias() = dQ * as_mat(wq.value.data(), dk_, channels_);
  dX.noalias() += dK * as_mat(wk.value.data(), dk_, channels_);
  dX.noalias() += dV * as_mat(wv.value.data(), dk_, channels_);
  return dx;
}

ParamList Attention::params() { return {&wq, &wk, &wv}; }

// ---------------------------------------------------------------- AdaptiveMaxPool1d

Tensor AdaptiveMaxPool1d::forward(const Tensor& x) {
  require_rank(x, 3, "adaptive max pool input");
  const auto b = x.dim(0);
  const auto c = x.dim(1);
  const auto len = x.dim(2);
  if (out_len_ == 0 || out_len_ > len) {
    throw Error(ErrorCode::ShapeMismatch, "adaptive max pool: out_len " + std::to_string(out_len_) +
                                              " for length " + std::to_string(len));
  }
  in_shape_ = x.shape();
  argmax_.assign(b * c * out_len_, 0);
  Tensor y({b, c, out_len_});
  for (std::size_t row = 0; row < b * c; ++row) {
    const double* xr = x.data() + row * len;
    for (std::size_t i = 0; i < out_len_; ++i) {
      const auto start = (i * len) / out_len_;
      const auto end = ((i + 1) * len + out_len_ - 1) / out_len_;
      std::size_t best = start;
      for (auto t = start + 1; t < end && !std::isnan(xr[best]); ++t) {
        if (xr[t] > xr[best] || std::isnan(xr[t])) {
          best = t;
        }
      }
      argmax_[row * out_len_ + i] = best;
      y[row * out_len_ + i] = xr[best];
    }
  }
  return y;
}

Tensor AdaptiveMaxPool1d::backward(const Tensor& dy) {
  const auto rows = in_shape_.at(0) * in_shape_.at(1);
  const auto len = in_shape_.at(2);
  require_shape(dy, {in_shape_[0], in_shape_[1], out_len_}, "adaptive max pool grad");
  Tensor dx(in_shape_);
  for (std::size_t row = 0; row < rows; ++row) {
    for (std::size_t i = 0; i < out_len_; ++i) {
      dx[row * len + argmax_[row * out_len_ + i]] += dy[row * out_len_ + i];
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorCode::BadRate, "dropout rate " + util::format_double(rate));
  }
}

Tensor Dropout::forward(const Tensor& x, Mode mode, Rng& rng) {
  active_ = mode == Mode::Train && rate_ > 0.0;
  if (!active_) {
    return x;
  }
  const double keep_scale = 1.0 / (1.0 - rate_);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = rng.uniform() >= rate_ ? keep_scale : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (!active_) {
    return dy;
  }
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    dx[i] = dy[i] * mask_[i];
  }
  return dx;
}

// ---------------------------------------------------------------- losses

Tensor softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax input");
  const auto b = logits.dim(0);
  const auto k = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t n = 0; n < b; ++n) {
    const double* row = logits.data() + n * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      p[n * k + c] = std::exp(row[c] - mx);
      sum += p[n * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      p[n * k + c] /= sum;
    }
  }
  return p;
}

LossResult cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const auto b = logits.dim(0);
  const auto k = logits.dim(1);
  if (labels.size() != b) {
    throw Error(ErrorCode::ShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) +
                                              " labels for batch " + std::to_string(b));
  }
  LossResult result;
  result.grad = Tensor(logits.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < b; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw Error(ErrorCode::BadLabel, "label " + std::to_string(label) + " outside [0," +
                                           std::to_string(k) + ")");
    }
    const double* row = logits.data() + n * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      sum += std::exp(row[c] - mx);
    }
    const double log_z = mx + std::log(sum);
    total += log_z - row[label];
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(row[c] - log_z);
      result.grad[n * k + c] = (p - (static_cast<int>(c) == label ? 1.0 : 0.0)) /
                               static_cast<double>(b);
    }
  }
  result.loss = total / static_cast<double>(b);
  return result;
}

// ---------------------------------------------------------------- reshaping

Tensor swap_last_axes(const Tensor& x) {
  require_rank(x, 3, "swap_last_axes");
  const auto b = x.dim(0);
  const auto r = x.dim(1);
  const auto c = x.dim(2);
  Tensor y({b, c, r});
  for (std::size_t n = 0; n < b; ++n) {
    as_mat(y.data() + n * r * c, c, r) = as_mat(x.data() + n * r * c, r, c).transpose();
  }
  return y;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  const auto b = parts.front().dim(0);
  const auto len = parts.front().dim(2);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 3, "concat_channels");
    if (p.dim(0) != b || p.dim(2) != len) {
      throw Error(ErrorCode::ShapeMismatch, "concat_channels: " + p.shape_string());
    }
    total += p.dim(1);
  }
  Tensor y({b, total, len});
  for (std::size_t n = 0; n < b; ++n) {
    double* dst = y.data() + n * total * len;
    for (const auto& p : parts) {
      const auto chunk = p.dim(1) * len;
      std::copy_n(p.data() + n * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return y;
}

std::vector<Tensor> split_channels(const Tensor& x, std::span<const std::size_t> channels) {
  const auto b = x.dim(0);
  const auto total = x.dim(1);
  const auto len = x.dim(2);
  std::vector<Tensor> out;
  for (auto c : channels) {
    out.emplace_back(std::vector<std::size_t>{b, c, len});
  }
  for (std::size_t n = 0; n < b; ++n) {
    const double* src = x.data() + n * total * len;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const auto chunk = channels[i] * len;
      std::copy_n(src, chunk, out[i].data() + n * chunk);
      src += chunk;
    }
  }
  return out;
}

Tensor concat_features(std::span<const Tensor> parts) {
  const auto b = parts.front().dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_features");
    if (p.dim(0) != b) {
      throw Error(ErrorCode::ShapeMismatch, "concat_features: " + p.shape_string());
    }
    total += p.dim(1);
  }
  Tensor y({b, total});
  for (std::size_t n = 0; n < b; ++n) {
    double* dst = y.data() + n * total;
    for (const auto& p : parts) {
      std::copy_n(p.data() + n * p.dim(1), p.dim(1), dst);
      dst += p.dim(1);
    }
  }
  return y;
}

std::vector<Tensor> split_features(const Tensor& x, std::span<const std::size_t> widths) {
  const auto b = x.dim(0);
  const auto total = x.dim(1);
  std::vector<Tensor> out;
  for (auto w : widths) {
    out.emplace_back(std::vector<std::size_t>{b, w});
  }
  for (std::size_t n = 0; n < b; ++n) {
    const double* src = x.data() + n * total;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      std::copy_n(src, widths[i], out[i].data() + n * widths[i]);
      src += widths[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------- AdamW

void AdamW::step(const ParamList& params) {
  ++step_;
  const auto& c = config_;
  const double decay = 1.0 - c.lr * c.weight_decay;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step_));
  for (auto* p : params) {
    auto& theta = p->value.storage();
    const auto& g = p->grad.storage();
    auto& m = p->m.storage();
    auto& v = p->v.storage();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] *= decay;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

// ---------------------------------------------------------------- gradient checking

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<const GradTarget> targets,
                           double h, std::size_t max_per_tensor, std::uint64_t seed) {
  GradCheckResult result;
  Rng rng(seed);
  for (const auto& target : targets) {
    auto& values = target.value->storage();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_per_tensor > 0 && coords.size() > max_per_tensor) {
      for (std::size_t i = 0; i < max_per_tensor; ++i) {
        const auto j = i + rng.below(coords.size() - i);
        std::swap(coords[i], coords[j]);
      }
      coords.resize(max_per_tensor);
    }
    for (auto i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss();
      values[i] = saved - h;
      const double down = loss();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error((*target.analytic)[i], numeric);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = target.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace mlffn::nn
