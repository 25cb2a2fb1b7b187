#pragma once

// Differentiable layers with hand-written backward passes. Each layer
// caches what its backward pass needs during forward; gradients accumulate
// into Parameter::grad until the optimizer clears them.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/tensor.hpp"

namespace tbnet {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace detail

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns dL/dx.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  /// Per-sample output shape for a per-sample input shape; throws ShapeError.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::string kind() const = 0;
  virtual std::string describe() const { return kind(); }

  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  virtual std::vector<Buffer<T>*> buffers() { return {}; }

  /// Folds the piecewise-linear choices of the last forward pass (ReLU gates,
  /// pooling winners) into a running FNV-1a hash.
  virtual void hash_activation_pattern(std::uint64_t& h) const { (void)h; }
};

namespace detail {

inline void fnv_mix(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= 1099511628211ULL;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// How a convolution treats (H + 2p - k) not divisible by the stride.
enum class OutputRounding { Exact, Floor };

/// Cross-correlation with zero padding (no kernel flip). Exact rounding
/// rejects geometries whose output size is not integral.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding, bool bias, std::mt19937_64& rng, OutputRounding rounding = OutputRounding::Exact)
      : rounding_(rounding),
        in_ch_(in_ch),
        out_ch_(out_ch),
        k_(kernel),
        stride_(stride),
        pad_(padding),
        weight_(name + ".weight", detail::he_normal<T>({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng)) {
    if (in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0) throw PreconditionError("Conv2d: zero-sized hyperparameter");
    if (bias) bias_ = std::make_unique<Parameter<T>>(name + ".bias", Tensor<T>({out_ch}));
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return bias_.get(); }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3) throw ShapeError("Conv2d: expected (C, H, W) input, got " + shape_string(in));
    if (in[0] != in_ch_)
      throw ShapeError("Conv2d: channel mismatch, expected " + std::to_string(in_ch_) + " got " + std::to_string(in[0]));
    return {out_ch_, out_dim(in[1], "height"), out_dim(in[2], "width")};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4) throw ShapeError("Conv2d: expected 4-D input, got " + shape_string(x.shape()));
    const Shape os = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    const std::size_t n = x.dim(0);
    in_shape_ = x.shape();
    const std::size_t rows = in_ch_ * k_ * k_;
    const std::size_t cols = os[1] * os[2];
    cols_.assign(n * rows * cols, T(0));
    Tensor<T> y({n, out_ch_, os[1], os[2]});
    const detail::ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
    for (std::size_t b = 0; b < n; ++b) {
      T* col = cols_.data() + b * rows * cols;
      im2col(x.data() + b * in_ch_ * in_shape_[2] * in_shape_[3], col, os[1], os[2]);
      detail::MatMap<T> out(y.data() + b * out_ch_ * cols, static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(cols));
      out.noalias() = w * detail::ConstMatMap<T>(col, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      if (bias_)
        for (std::size_t o = 0; o < out_ch_; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bias_->value[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t n = in_shape_[0];
    const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
    const std::size_t rows = in_ch_ * k_ * k_;
    const std::size_t cols = oh * ow;
    Tensor<T> dx(in_shape_);
    detail::MatMap<T> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
    const detail::ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
    std::vector<T> dcol(rows * cols);
    for (std::size_t b = 0; b < n; ++b) {
      const detail::ConstMatMap<T> dy(grad_out.data() + b * out_ch_ * cols, static_cast<Eigen::Index>(out_ch_),
                                      static_cast<Eigen::Index>(cols));
      const detail::ConstMatMap<T> col(cols_.data() + b * rows * cols, static_cast<Eigen::Index>(rows),
                                       static_cast<Eigen::Index>(cols));
      dw.noalias() += dy * col.transpose();
      if (bias_)
        for (std::size_t o = 0; o < out_ch_; ++o) bias_->grad[o] += dy.row(static_cast<Eigen::Index>(o)).sum();
      detail::MatMap<T> dc(dcol.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      dc.noalias() = w.transpose() * dy;
      col2im(dcol.data(), dx.data() + b * in_ch_ * in_shape_[2] * in_shape_[3], oh, ow);
    }
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override {
    if (bias_) return {&weight_, bias_.get()};
    return {&weight_};
  }

  std::string kind() const override { return "conv"; }
  std::string describe() const override {
    return "conv" + std::to_string(k_) + "x" + std::to_string(k_) + "/" + std::to_string(out_ch_) + " s" +
           std::to_string(stride_) + " p" + std::to_string(pad_) + (bias_ ? "" : " nobias");
  }

 private:
  std::size_t out_dim(std::size_t in, const char* what) const {
    const std::size_t padded = in + 2 * pad_;
    if (padded < k_ || (rounding_ == OutputRounding::Exact && (padded - k_) % stride_ != 0))
      throw ShapeError(std::string("Conv2d: non-integral output ") + what + " for input " + std::to_string(in) + ", k=" +
                       std::to_string(k_) + " s=" + std::to_string(stride_) + " p=" + std::to_string(pad_));
    return (padded - k_) / stride_ + 1;
  }

  void im2col(const T* img, T* col, std::size_t oh, std::size_t ow) const {
    const auto h = static_cast<std::ptrdiff_t>(in_shape_[2]);
    const auto w = static_cast<std::ptrdiff_t>(in_shape_[3]);
    const std::size_t cols = oh * ow;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          T* dst = col + ((c * k_ + ky) * k_ + kx) * cols;
          const T* src = img + c * in_shape_[2] * in_shape_[3];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              if (ix >= 0 && ix < w) dst[oy * ow + ox] = src[iy * w + ix];
            }
          }
        }
  }

  void col2im(const T* col, T* img, std::size_t oh, std::size_t ow) const {
    const auto h = static_cast<std::ptrdiff_t>(in_shape_[2]);
    const auto w = static_cast<std::ptrdiff_t>(in_shape_[3]);
    const std::size_t cols = oh * ow;
    for (std::size_t c = 0; c < in_ch_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const T* src = col + ((c * k_ + ky) * k_ + kx) * cols;
          T* dst = img + c * in_shape_[2] * in_shape_[3];
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= h) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
              if (ix >= 0 && ix < w) dst[iy * w + ix] += src[oy * ow + ox];
            }
          }
        }
  }

  OutputRounding rounding_;
  std::size_t in_ch_, out_ch_, k_, stride_, pad_;
  Parameter<T> weight_;
  std::unique_ptr<Parameter<T>> bias_;
  Shape in_shape_;
  std::vector<T> cols_;
};

// ---------------------------------------------------------------------------

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    input_ = x;
    Tensor<T> y = x;
    for (auto& v : y.values()) v = v > T(0) ? v : T(0);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(input_[i] > T(0))) dx[i] = T(0);
    return dx;
  }

  std::string kind() const override { return "relu"; }

  void hash_activation_pattern(std::uint64_t& h) const override {
    for (std::size_t i = 0; i < input_.size(); ++i) detail::fnv_mix(h, input_[i] > T(0));
  }

 private:
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// Per-channel normalization over (batch, H, W); accepts (N, C) inputs too.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm(std::string name, std::size_t channels)
      : channels_(channels),
        gamma_(name + ".gamma", Tensor<T>({channels}, T(1))),
        beta_(name + ".beta", Tensor<T>({channels}, T(0))),
        running_mean_{name + ".running_mean", Tensor<T>({channels}, T(0))},
        running_var_{name + ".running_var", Tensor<T>({channels}, T(1))} {}

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Buffer<T>& running_mean() { return running_mean_; }
  Buffer<T>& running_var() { return running_var_; }

  Shape output_shape(const Shape& in) const override {
    if (in.empty() || in[0] != channels_)
      throw ShapeError("BatchNorm: expected " + std::to_string(channels_) + " channels, got " + shape_string(in));
    return in;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
    const std::size_t n = x.dim(0);
    const std::size_t spatial = x.size() / (n * channels_);
    const std::size_t m = n * spatial;
    mode_ = mode;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T(0));
    Tensor<T> y(x.shape());
    if (mode == Mode::Train && n < 2) throw PreconditionError("BatchNorm: training mode needs a batch of at least 2");

    for (std::size_t c = 0; c < channels_; ++c) {
      double mean = 0.0, var = 0.0;
      if (mode == Mode::Train) {
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t s = 0; s < spatial; ++s) mean += x[(b * channels_ + c) * spatial + s];
        mean /= static_cast<double>(m);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t s = 0; s < spatial; ++s) {
            const double d = x[(b * channels_ + c) * spatial + s] - mean;
            var += d * d;
          }
        var /= static_cast<double>(m);
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        running_mean_.value[c] = static_cast<T>((1.0 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
        running_var_.value[c] = static_cast<T>((1.0 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + kEpsilon));
      inv_std_[c] = inv_std;
      const T mu = static_cast<T>(mean);
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = (b * channels_ + c) * spatial + s;
          xhat_[i] = (x[i] - mu) * inv_std;
          y[i] = gamma_.value[c] * xhat_[i] + beta_.value[c];
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t n = grad_out.dim(0);
    const std::size_t spatial = grad_out.size() / (n * channels_);
    const auto m = static_cast<T>(n * spatial);
    Tensor<T> dx(grad_out.shape());
    for (std::size_t c = 0; c < channels_; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = (b * channels_ + c) * spatial + s;
          sum_dy += grad_out[i];
          sum_dy_xhat += grad_out[i] * xhat_[i];
        }
      beta_.grad[c] += sum_dy;
      gamma_.grad[c] += sum_dy_xhat;
      const T g = gamma_.value[c];
      for (std::size_t b = 0; b < n; ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = (b * channels_ + c) * spatial + s;
          if (mode_ == Mode::Train)
            dx[i] = g * inv_std_[c] / m * (m * grad_out[i] - sum_dy - xhat_[i] * sum_dy_xhat);
          else
            dx[i] = g * inv_std_[c] * grad_out[i];
        }
    }
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Buffer<T>*> buffers() override { return {&running_mean_, &running_var_}; }
  std::string kind() const override { return "batchnorm"; }
  std::string describe() const override { return "batchnorm/" + std::to_string(channels_); }

 private:
  std::size_t channels_;
  Parameter<T> gamma_, beta_;
  Buffer<T> running_mean_, running_var_;
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

/// Max pooling; padded cells never win. Ties go to the first row-major maximum.
template <typename T>
class MaxPool final : public Layer<T> {
 public:
  MaxPool(std::size_t kernel, std::size_t stride, std::size_t padding = 0)
      : k_(kernel), stride_(stride), pad_(padding) {
    if (kernel == 0 || stride == 0 || padding >= kernel) throw PreconditionError("MaxPool: invalid hyperparameters");
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3) throw ShapeError("MaxPool: expected (C, H, W) input, got " + shape_string(in));
    if (k_ == 2 && stride_ == 2 && pad_ == 0 && (in[1] % 2 != 0 || in[2] % 2 != 0))
      throw ShapeError("MaxPool 2x2: spatial dims must be even, got " + shape_string(in));
    if (in[1] + 2 * pad_ < k_ || in[2] + 2 * pad_ < k_) throw ShapeError("MaxPool: input smaller than window");
    return {in[0], (in[1] + 2 * pad_ - k_) / stride_ + 1, (in[2] + 2 * pad_ - k_) / stride_ + 1};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4) throw ShapeError("MaxPool: expected 4-D input");
    const Shape os = output_shape({x.dim(1), x.dim(2), x.dim(3)});
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({n, c, os[1], os[2]});
    argmax_.assign(y.size(), 0);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const std::size_t plane = (b * c + ch) * h * w;
        for (std::size_t oy = 0; oy < os[1]; ++oy)
          for (std::size_t ox = 0; ox < os[2]; ++ox) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_i = plane;
            bool found = false;
            for (std::size_t ky = 0; ky < k_; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k_; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) - static_cast<std::ptrdiff_t>(pad_);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const std::size_t i = plane + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                if (!found || x[i] > best) {
                  best = x[i];
                  best_i = i;
                  found = true;
                }
              }
            }
            const std::size_t o = ((b * c + ch) * os[1] + oy) * os[2] + ox;
            y[o] = best;
            argmax_[o] = best_i;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax_[o]] += grad_out[o];
    return dx;
  }

  std::string kind() const override { return "maxpool"; }

  void hash_activation_pattern(std::uint64_t& h) const override {
    for (std::size_t i : argmax_) detail::fnv_mix(h, i);
  }
  std::string describe() const override {
    return "maxpool" + std::to_string(k_) + "x" + std::to_string(k_) + " s" + std::to_string(stride_) + " p" +
           std::to_string(pad_);
  }

 private:
  std::size_t k_, stride_, pad_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 3) throw ShapeError("GlobalAvgPool: expected (C, H, W) input, got " + shape_string(in));
    return {in[0]};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    if (x.rank() != 4) throw ShapeError("GlobalAvgPool: expected 4-D input");
    in_shape_ = x.shape();
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> y({n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
      T s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
      y[p] = s / static_cast<T>(hw);
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> dx(in_shape_);
    const std::size_t hw = in_shape_[2] * in_shape_[3];
    for (std::size_t p = 0; p < grad_out.size(); ++p)
      for (std::size_t i = 0; i < hw; ++i) dx[p * hw + i] = grad_out[p] / static_cast<T>(hw);
    return dx;
  }

  std::string kind() const override { return "avgpool"; }
  std::string describe() const override { return "global_avgpool"; }

 private:
  Shape in_shape_;
};

// ---------------------------------------------------------------------------

/// Affine map on the flattened per-sample input: y = W x + b.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng)
      : in_(in_features),
        out_(out_features),
        weight_(name + ".weight", detail::he_normal<T>({out_features, in_features}, in_features, rng)),
        bias_(name + ".bias", Tensor<T>({out_features})) {}

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  Shape output_shape(const Shape& in) const override {
    if (shape_size(in) != in_)
      throw ShapeError("Linear: expected " + std::to_string(in_) + " input features, got " + shape_string(in));
    return {out_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    const std::size_t n = x.dim(0);
    output_shape(Shape(x.shape().begin() + 1, x.shape().end()));
    input_ = x;
    Tensor<T> y({n, out_});
    const detail::ConstMatMap<T> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
    const detail::ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    detail::MatMap<T> ym(y.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
    ym.noalias() = xm * w.transpose();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_; ++o) y[b * out_ + o] += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const std::size_t n = input_.dim(0);
    const detail::ConstMatMap<T> dy(grad_out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out_));
    const detail::ConstMatMap<T> xm(input_.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
    const detail::ConstMatMap<T> w(weight_.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    detail::MatMap<T> dw(weight_.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dw.noalias() += dy.transpose() * xm;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += grad_out[b * out_ + o];
    Tensor<T> dx(input_.shape());
    detail::MatMap<T> dxm(dx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in_));
    dxm.noalias() = dy * w;
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "fc"; }
  std::string describe() const override { return "fc " + std::to_string(in_) + "->" + std::to_string(out_); }

 private:
  std::size_t in_, out_;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

// ---------------------------------------------------------------------------

/// relu(F(x) + shortcut(x)) with F = conv3x3-BN-ReLU-conv3x3-BN and the
/// shortcut either identity or a strided 1x1 projection followed by BN.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t stride, std::mt19937_64& rng)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        stride_(stride),
        conv1_(name + ".conv1", in_ch, out_ch, 3, stride, 1, false, rng, OutputRounding::Floor),
        bn1_(name + ".bn1", out_ch),
        conv2_(name + ".conv2", out_ch, out_ch, 3, 1, 1, false, rng),
        bn2_(name + ".bn2", out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      proj_conv_ = std::make_unique<Conv2d<T>>(name + ".shortcut.conv", in_ch, out_ch, 1, stride, 0, false, rng,
                                               OutputRounding::Floor);
      proj_bn_ = std::make_unique<BatchNorm<T>>(name + ".shortcut.bn", out_ch);
    }
  }

  bool has_projection() const { return proj_conv_ != nullptr; }
  Conv2d<T>& conv1() { return conv1_; }
  Conv2d<T>& conv2() { return conv2_; }
  BatchNorm<T>& bn1() { return bn1_; }
  BatchNorm<T>& bn2() { return bn2_; }

  Shape output_shape(const Shape& in) const override {
    const Shape branch = bn2_.output_shape(conv2_.output_shape(conv1_.output_shape(in)));
    const Shape sc = proj_conv_ ? proj_conv_->output_shape(in) : in;
    if (branch != sc)
      throw ShapeError("ResidualBlock: branch " + shape_string(branch) + " and shortcut " + shape_string(sc) + " disagree");
    return branch;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> f = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x, mode), mode), mode), mode), mode);
    const Tensor<T> sc = proj_conv_ ? proj_bn_->forward(proj_conv_->forward(x, mode), mode) : x;
    if (f.shape() != sc.shape()) throw ShapeError("ResidualBlock: branch/shortcut shape mismatch");
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += sc[i];
    return relu_out_.forward(f, mode);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    const Tensor<T> dsum = relu_out_.backward(grad_out);
    Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(dsum)))));
    const Tensor<T> dsc = proj_conv_ ? proj_conv_->backward(proj_bn_->backward(dsum)) : dsum;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsc[i];
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override {
    std::vector<Parameter<T>*> out;
    for (Layer<T>* l : sublayers())
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::vector<Buffer<T>*> buffers() override {
    std::vector<Buffer<T>*> out;
    for (Layer<T>* l : sublayers())
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }

  std::string kind() const override { return "residual"; }

  void hash_activation_pattern(std::uint64_t& h) const override {
    relu1_.hash_activation_pattern(h);
    relu_out_.hash_activation_pattern(h);
  }
  std::string describe() const override {
    return "residual " + std::to_string(in_ch_) + "->" + std::to_string(out_ch_) + " s" + std::to_string(stride_) +
           (proj_conv_ ? " proj" : " identity");
  }

 private:
  std::vector<Layer<T>*> sublayers() {
    std::vector<Layer<T>*> out{&conv1_, &bn1_, &conv2_, &bn2_};
    if (proj_conv_) {
      out.push_back(proj_conv_.get());
      out.push_back(proj_bn_.get());
    }
    return out;
  }

  std::size_t in_ch_, out_ch_, stride_;
  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  std::unique_ptr<Conv2d<T>> proj_conv_;
  std::unique_ptr<BatchNorm<T>> proj_bn_;
  ReLU<T> relu_out_;
};

// ---------------------------------------------------------------------------

/// Mean softmax cross-entropy over the batch; returns the loss and writes
/// (softmax - onehot) / N into grad.
template <typename T>
double softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Tensor<T>* grad = nullptr) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be (batch, classes)");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (k < 2) throw PreconditionError("softmax_cross_entropy: need at least 2 classes");
  if (n == 0) throw PreconditionError("softmax_cross_entropy: empty batch");
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: one label per row required");
  if (grad) *grad = Tensor<T>(logits.shape());
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t b = 0; b < n; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw PreconditionError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    double mx = logits[b * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[b * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(logits[b * k + j]) - mx);
      z += p[j];
    }
    const double log_z = std::log(z) + mx;
    total += log_z - static_cast<double>(logits[b * k + static_cast<std::size_t>(y)]);
    if (grad)
      for (std::size_t j = 0; j < k; ++j)
        (*grad)[b * k + j] =
            static_cast<T>((p[j] / z - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) / static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

/// Row-wise softmax probabilities.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t b = 0; b < n; ++b) {
    double mx = logits[b * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[b * k + j]));
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(logits[b * k + j]) - mx);
    for (std::size_t j = 0; j < k; ++j)
      out[b * k + j] = static_cast<T>(std::exp(static_cast<double>(logits[b * k + j]) - mx) / z);
  }
  return out;
}

}  // namespace tbnet
