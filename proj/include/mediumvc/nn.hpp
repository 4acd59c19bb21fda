#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mediumvc/tensor.hpp"

namespace mvc::nn {

/// Named parameter with its gradient. `shape` is the logical shape; `value`
/// stores the same elements in row-major order.
struct Param {
  std::string name;
  std::vector<Index> shape;
  Mat value;
  Mat grad;

  Index size() const noexcept { return value.size(); }
};

/// Ordered, address-stable parameter registry.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Param& add(std::string name, std::vector<Index> shape, Index rows, Index cols);

  std::size_t size() const noexcept { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;

  Index total_elements() const;
  void zero_grad();
  /// Rounds every value to the nearest float so storage as f32 is lossless.
  void round_to_f32();
  /// Copies values (not gradients) from a store with identical layout.
  void copy_values_from(const ParamStore& other);
  /// FNV-1a over names, shapes and f32 bit patterns of the values.
  std::uint64_t checksum() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

using Rng = std::mt19937_64;

double gelu(double x);
double gelu_grad(double x);

/// Elementwise GELU (erf form) with cached input.
class Gelu {
 public:
  Mat forward(const Mat& x);
  Mat backward(const Mat& dy) const;

 private:
  Mat input_;
};

/// Per-channel standardization over time, population variance, no affine.
class InstanceNorm {
 public:
  explicit InstanceNorm(double eps = 1e-5) : eps_(eps) {}
  Mat forward(const Mat& x);
  Mat backward(const Mat& dy) const;

 private:
  double eps_;
  Mat normalized_;
  RowVec inv_std_;
};

/// Effective weight g * v / ||v|| per output column, plus bias.
/// Throws Numeric when a direction column has zero norm.
class WeightNorm {
 public:
  WeightNorm() = default;
  WeightNorm(ParamStore& store, const std::string& prefix, std::vector<Index> v_shape,
             Index fan_in, Index fan_out, Rng& rng, double gain);

  const Mat& weight();
  /// Effective weight from the last `weight()` call.
  const Mat& cached_weight() const { return weight_; }
  /// Maps dL/dW of the effective weight onto v and g.
  void backward_weight(const Mat& dweight);

  Param& direction() { return *v_; }
  Param& scale() { return *g_; }
  Param& bias() { return *b_; }
  const Param& bias() const { return *b_; }

 private:
  Param* v_ = nullptr;
  Param* g_ = nullptr;
  Param* b_ = nullptr;
  Mat weight_;
  RowVec norms_;
};

/// y = x W + b on T x in inputs.
class WNLinear {
 public:
  WNLinear() = default;
  WNLinear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng,
           double gain = 1.0);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  WeightNorm& wn() { return wn_; }
  Index in_dim() const noexcept { return in_; }
  Index out_dim() const noexcept { return out_; }

 private:
  Index in_ = 0, out_ = 0;
  WeightNorm wn_;
  Mat input_;
};

/// 1-D convolution over time, odd kernel, zero "same" padding.
class WNConv1d {
 public:
  WNConv1d() = default;
  WNConv1d(ParamStore& store, const std::string& prefix, Index in, Index out, Index kernel,
           Rng& rng, double gain = 1.0);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  WeightNorm& wn() { return wn_; }

 private:
  Mat im2col(const Mat& x) const;
  Index in_ = 0, out_ = 0, kernel_ = 0;
  WeightNorm wn_;
  Mat columns_;
  Index frames_ = 0;
};

/// out = sqrt(|e|) * content + e, broadcast over frames.
class AdaIN {
 public:
  Mat forward(const Mat& content, const Vec& spk);
  /// Returns d content; adds d spk into `dspk`.
  Mat backward(const Mat& dy, Vec& dspk) const;

 private:
  Mat content_;
  Vec spk_;
};

Mat adain(const Mat& content, const Vec& spk);

/// Time-axis multi-head self-attention, no positional encoding.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& prefix, Index channels,
                     Index heads, Rng& rng);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  WNLinear& output_projection() { return out_; }

 private:
  Index channels_ = 0, heads_ = 0;
  WNLinear q_, k_, v_, out_;
  Mat qm_, km_, vm_;
  std::vector<Mat> attention_;
};

/// Self-attention with residual, then a weight-normalized C -> 2C -> C
/// feed-forward with residual. Exactly equivariant to frame permutations.
class Convertor {
 public:
  Convertor() = default;
  Convertor(ParamStore& store, const std::string& prefix, Index channels, Index heads,
            Rng& rng);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  MultiHeadAttention& attention() { return attention_; }
  WNLinear& ff_out() { return ff2_; }

 private:
  MultiHeadAttention attention_;
  WNLinear ff1_, ff2_;
  Gelu act_;
  std::vector<Index> order_;
};

/// x + conv2(gelu(conv1(x))).
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParamStore& store, const std::string& prefix, Index channels, Index kernel,
           Rng& rng);

  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);
  WNConv1d& second() { return conv2_; }

 private:
  WNConv1d conv1_, conv2_;
  Gelu act_;
};

/// Loss callback for gradient checking: returns the loss and, when asked,
/// fills the analytic gradients of every parameter it depends on.
using LossFn = std::function<double(bool with_grad)>;

struct GradCheckOptions {
  double eps = 1e-4;
  int coords_per_param = 8;
  std::uint64_t seed = 7;
};

/// Max over sampled coordinates of |analytic - central difference| /
/// max(1e-8, |analytic| + |numeric|).
double grad_check(const LossFn& loss, ParamStore& params, GradCheckOptions opts = {});

/// Same check against a free vector input with its own analytic gradient.
double grad_check_vector(const std::function<double(const Vec&, Vec*)>& loss, const Vec& x,
                         double eps = 1e-4);

}  // namespace mvc::nn
