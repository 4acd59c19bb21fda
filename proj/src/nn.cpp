#include "mediumvc/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mediumvc/error.hpp"

namespace mvc::nn {

// ---------------------------------------------------------------- ParamStore

Param& ParamStore::add(std::string name, std::vector<Index> shape, Index rows, Index cols) {
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Index ParamStore::total_elements() const {
  Index n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

void ParamStore::round_to_f32() {
  for (auto& p : params_)
    p->value = p->value.unaryExpr([](double x) { return static_cast<double>(static_cast<float>(x)); });
}

void ParamStore::copy_values_from(const ParamStore& other) {
  if (other.size() != size()) fail(ErrorCategory::Shape, "parameter layout mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    if (other[i].name != params_[i]->name || other[i].value.rows() != params_[i]->value.rows() ||
        other[i].value.cols() != params_[i]->value.cols())
      fail(ErrorCategory::Shape, "parameter layout mismatch at " + params_[i]->name);
    params_[i]->value = other[i].value;
  }
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t byte) {
    h ^= byte;
    h *= 0x100000001b3ull;
  };
  for (const auto& p : params_) {
    for (char c : p->name) mix(static_cast<unsigned char>(c));
    for (Index i = 0; i < p->value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(p->value.data()[i]);
      for (int b = 0; b < 8; ++b) mix((bits >> (8 * b)) & 0xff);
    }
  }
  return h;
}

// --------------------------------------------------------------- activations

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat Gelu::forward(const Mat& x) {
  input_ = x;
  return x.unaryExpr([](double v) { return gelu(v); });
}

Mat Gelu::backward(const Mat& dy) const {
  return dy.cwiseProduct(input_.unaryExpr([](double v) { return gelu_grad(v); }));
}

// ------------------------------------------------------------ InstanceNorm

Mat InstanceNorm::forward(const Mat& x) {
  if (x.rows() < 1) fail(ErrorCategory::Shape, "instance norm needs at least one frame");
  const double n = static_cast<double>(x.rows());
  const RowVec mean = x.colwise().sum() / n;
  const Mat centered = x.rowwise() - mean;
  const RowVec var = centered.cwiseAbs2().colwise().sum() / n;
  inv_std_ = (var.array() + eps_).rsqrt().matrix();
  normalized_ = centered * inv_std_.asDiagonal();
  return normalized_;
}

Mat InstanceNorm::backward(const Mat& dy) const {
  const double n = static_cast<double>(dy.rows());
  const RowVec mean_dy = dy.colwise().sum() / n;
  const RowVec mean_dy_y = dy.cwiseProduct(normalized_).colwise().sum() / n;
  Mat dx = dy.rowwise() - mean_dy;
  dx -= normalized_ * mean_dy_y.asDiagonal();
  return dx * inv_std_.asDiagonal();
}

// -------------------------------------------------------------- WeightNorm

WeightNorm::WeightNorm(ParamStore& store, const std::string& prefix, std::vector<Index> v_shape,
                       Index fan_in, Index fan_out, Rng& rng, double gain) {
  v_ = &store.add(prefix + ".v", std::move(v_shape), fan_in, fan_out);
  g_ = &store.add(prefix + ".g", {fan_out}, 1, fan_out);
  b_ = &store.add(prefix + ".b", {fan_out}, 1, fan_out);
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (Index i = 0; i < v_->value.size(); ++i) v_->value.data()[i] = dist(rng);
  // Start with w = v.
  g_->value = v_->value.colwise().norm();
}

const Mat& WeightNorm::weight() {
  norms_ = v_->value.colwise().norm();
  for (Index j = 0; j < norms_.size(); ++j)
    if (!(norms_[j] > 0.0))
      fail(ErrorCategory::Numeric, "weight-norm direction has zero norm: " + v_->name);
  const RowVec scale = g_->value.row(0).cwiseQuotient(norms_);
  weight_ = v_->value * scale.asDiagonal();
  return weight_;
}

void WeightNorm::backward_weight(const Mat& dweight) {
  // u = v / ||v||; dg = <dW, u>; dv = (g / ||v||) (dW - u <dW, u>)
  const Mat u = v_->value * norms_.cwiseInverse().asDiagonal();
  const RowVec proj = dweight.cwiseProduct(u).colwise().sum();
  g_->grad.row(0) += proj;
  const RowVec scale = g_->value.row(0).cwiseQuotient(norms_);
  v_->grad += (dweight - u * proj.asDiagonal()) * scale.asDiagonal();
}

// ---------------------------------------------------------------- WNLinear

WNLinear::WNLinear(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng,
                   double gain)
    : in_(in), out_(out), wn_(store, prefix, {in, out}, in, out, rng, gain) {}

Mat WNLinear::forward(const Mat& x) {
  if (x.cols() != in_)
    fail(ErrorCategory::Shape, "linear expects " + std::to_string(in_) + " inputs, got " +
                                   std::to_string(x.cols()));
  input_ = x;
  Mat y = x * wn_.weight();
  y.rowwise() += wn_.bias().value.row(0);
  return y;
}

Mat WNLinear::backward(const Mat& dy) {
  Mat dx = dy * wn_.cached_weight().transpose();
  wn_.bias().grad.row(0) += dy.colwise().sum();
  wn_.backward_weight(input_.transpose() * dy);
  return dx;
}

// ---------------------------------------------------------------- WNConv1d

WNConv1d::WNConv1d(ParamStore& store, const std::string& prefix, Index in, Index out,
                   Index kernel, Rng& rng, double gain)
    : in_(in),
      out_(out),
      kernel_(kernel),
      wn_(store, prefix, {kernel, in, out}, kernel * in, out, rng, gain) {
  if (kernel % 2 == 0) fail(ErrorCategory::Config, "convolution kernel must be odd");
}

Mat WNConv1d::im2col(const Mat& x) const {
  const Index frames = x.rows(), pad = kernel_ / 2;
  Mat cols = Mat::Zero(frames, kernel_ * in_);
  for (Index k = 0; k < kernel_; ++k) {
    const Index shift = k - pad;
    const Index t0 = std::max<Index>(0, -shift), t1 = std::min(frames, frames - shift);
    if (t1 > t0) cols.block(t0, k * in_, t1 - t0, in_) = x.middleRows(t0 + shift, t1 - t0);
  }
  return cols;
}

Mat WNConv1d::forward(const Mat& x) {
  if (x.cols() != in_)
    fail(ErrorCategory::Shape, "conv expects " + std::to_string(in_) + " channels, got " +
                                   std::to_string(x.cols()));
  frames_ = x.rows();
  columns_ = im2col(x);
  Mat y = columns_ * wn_.weight();
  y.rowwise() += wn_.bias().value.row(0);
  return y;
}

Mat WNConv1d::backward(const Mat& dy) {
  const Mat dcols = dy * wn_.cached_weight().transpose();
  wn_.bias().grad.row(0) += dy.colwise().sum();
  wn_.backward_weight(columns_.transpose() * dy);
  const Index pad = kernel_ / 2;
  Mat dx = Mat::Zero(frames_, in_);
  for (Index k = 0; k < kernel_; ++k) {
    const Index shift = k - pad;
    const Index t0 = std::max<Index>(0, -shift), t1 = std::min(frames_, frames_ - shift);
    if (t1 > t0) dx.middleRows(t0 + shift, t1 - t0) += dcols.block(t0, k * in_, t1 - t0, in_);
  }
  return dx;
}

// ------------------------------------------------------------------- AdaIN

Mat adain(const Mat& content, const Vec& spk) {
  if (content.cols() != spk.size())
    fail(ErrorCategory::Shape, "AdaIN: content has " + std::to_string(content.cols()) +
                                   " channels, speaker embedding " + std::to_string(spk.size()));
  const RowVec alpha = spk.cwiseAbs().cwiseSqrt().transpose();
  Mat out = content * alpha.asDiagonal();
  out.rowwise() += spk.transpose();
  return out;
}

Mat AdaIN::forward(const Mat& content, const Vec& spk) {
  content_ = content;
  spk_ = spk;
  return adain(content, spk);
}

Mat AdaIN::backward(const Mat& dy, Vec& dspk) const {
  const Vec alpha = spk_.cwiseAbs().cwiseSqrt();
  const Vec dalpha = dy.cwiseProduct(content_).colwise().sum().transpose();
  const Vec dbeta = dy.colwise().sum().transpose();
  for (Index c = 0; c < spk_.size(); ++c) {
    double dadx = 0.0;
    // d sqrt|e| / de = sign(e) / (2 sqrt|e|); taken as 0 at e = 0.
    if (spk_[c] != 0.0) dadx = (spk_[c] > 0.0 ? 1.0 : -1.0) / (2.0 * alpha[c]);
    dspk[c] += dbeta[c] + dalpha[c] * dadx;
  }
  return dy * alpha.asDiagonal();
}

// ------------------------------------------------------ MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& prefix,
                                       Index channels, Index heads, Rng& rng)
    : channels_(channels),
      heads_(heads),
      q_(store, prefix + ".q", channels, channels, rng),
      k_(store, prefix + ".k", channels, channels, rng),
      v_(store, prefix + ".v", channels, channels, rng),
      out_(store, prefix + ".out", channels, channels, rng) {
  if (heads <= 0 || channels % heads != 0)
    fail(ErrorCategory::Config, "channels must be divisible by the number of heads");
}

Mat MultiHeadAttention::forward(const Mat& x) {
  qm_ = q_.forward(x);
  km_ = k_.forward(x);
  vm_ = v_.forward(x);
  const Index d = channels_ / heads_, frames = x.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  attention_.resize(static_cast<std::size_t>(heads_));
  Mat mixed(frames, channels_);
  for (Index h = 0; h < heads_; ++h) {
    Mat scores = (qm_.middleCols(h * d, d) * km_.middleCols(h * d, d).transpose()) * scale;
    for (Index i = 0; i < frames; ++i) {
      auto row = scores.row(i);
      row = (row.array() - row.maxCoeff()).exp().matrix();
      row /= row.sum();
    }
    mixed.middleCols(h * d, d) = scores * vm_.middleCols(h * d, d);
    attention_[h] = std::move(scores);
  }
  return out_.forward(mixed);
}

Mat MultiHeadAttention::backward(const Mat& dy) {
  const Mat dmixed = out_.backward(dy);
  const Index d = channels_ / heads_, frames = dy.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Mat dq(frames, channels_), dk(frames, channels_), dv(frames, channels_);
  for (Index h = 0; h < heads_; ++h) {
    const Mat& a = attention_[h];
    const auto dout = dmixed.middleCols(h * d, d);
    dv.middleCols(h * d, d) = a.transpose() * dout;
    const Mat da = dout * vm_.middleCols(h * d, d).transpose();
    const Vec row_dot = da.cwiseProduct(a).rowwise().sum();
    const Mat ds = a.cwiseProduct(da.colwise() - row_dot) * scale;
    dq.middleCols(h * d, d) = ds * km_.middleCols(h * d, d);
    dk.middleCols(h * d, d) = ds.transpose() * qm_.middleCols(h * d, d);
  }
  return q_.backward(dq) + k_.backward(dk) + v_.backward(dv);
}

// --------------------------------------------------------------- Convertor

Convertor::Convertor(ParamStore& store, const std::string& prefix, Index channels, Index heads,
                     Rng& rng)
    : attention_(store, prefix + ".attn", channels, heads, rng),
      ff1_(store, prefix + ".ff1", channels, 2 * channels, rng, std::numbers::sqrt2),
      ff2_(store, prefix + ".ff2", 2 * channels, channels, rng) {}

Mat Convertor::forward(const Mat& x) {
  // Frames are processed in lexicographic row order so the attention sums
  // run in an order that does not depend on where a frame sits in time.
  // Permuting the input then permutes the output bit for bit.
  order_.resize(static_cast<std::size_t>(x.rows()));
  std::iota(order_.begin(), order_.end(), Index{0});
  std::sort(order_.begin(), order_.end(), [&x](Index a, Index b) {
    for (Index c = 0; c < x.cols(); ++c)
      if (x(a, c) != x(b, c)) return x(a, c) < x(b, c);
    return false;
  });
  const Mat xs = x(order_, Eigen::all);
  const Mat x1 = xs + attention_.forward(xs);
  const Mat ys = x1 + ff2_.forward(act_.forward(ff1_.forward(x1)));
  Mat y(x.rows(), x.cols());
  y(order_, Eigen::all) = ys;
  return y;
}

Mat Convertor::backward(const Mat& dy) {
  const Mat dys = dy(order_, Eigen::all);
  const Mat dx1 = dys + ff1_.backward(act_.backward(ff2_.backward(dys)));
  const Mat dxs = dx1 + attention_.backward(dx1);
  Mat dx(dy.rows(), dy.cols());
  dx(order_, Eigen::all) = dxs;
  return dx;
}

// ---------------------------------------------------------------- ResBlock

ResBlock::ResBlock(ParamStore& store, const std::string& prefix, Index channels, Index kernel,
                   Rng& rng)
    : conv1_(store, prefix + ".conv1", channels, channels, kernel, rng, std::numbers::sqrt2),
      conv2_(store, prefix + ".conv2", channels, channels, kernel, rng) {}

Mat ResBlock::forward(const Mat& x) { return x + conv2_.forward(act_.forward(conv1_.forward(x))); }

Mat ResBlock::backward(const Mat& dy) {
  return dy + conv1_.backward(act_.backward(conv2_.backward(dy)));
}

// --------------------------------------------------------------- gradcheck

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

void require_finite(double loss) {
  if (!std::isfinite(loss)) fail(ErrorCategory::Numeric, "gradient check: non-finite loss");
}

}  // namespace

double grad_check(const LossFn& loss, ParamStore& params, GradCheckOptions opts) {
  params.zero_grad();
  require_finite(loss(true));
  Rng rng(opts.seed);
  double worst = 0.0;
  for (auto& p : params) {
    const Mat analytic = p->grad;
    std::uniform_int_distribution<Index> pick(0, p->size() - 1);
    const int coords = static_cast<int>(std::min<Index>(opts.coords_per_param, p->size()));
    for (int c = 0; c < coords; ++c) {
      const Index i = coords == p->size() ? c : pick(rng);
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + opts.eps;
      const double up = loss(false);
      x = saved - opts.eps;
      const double down = loss(false);
      x = saved;
      require_finite(up);
      require_finite(down);
      const double numeric = (up - down) / (2.0 * opts.eps);
      worst = std::max(worst, relative_error(analytic.data()[i], numeric));
    }
  }
  return worst;
}

double grad_check_vector(const std::function<double(const Vec&, Vec*)>& loss, const Vec& x,
                         double eps) {
  Vec analytic = Vec::Zero(x.size());
  require_finite(loss(x, &analytic));
  double worst = 0.0;
  Vec probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = loss(probe, nullptr);
    probe[i] = x[i] - eps;
    const double down = loss(probe, nullptr);
    probe[i] = x[i];
    require_finite(up);
    require_finite(down);
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

}  // namespace mvc::nn
