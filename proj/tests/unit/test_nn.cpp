#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mediumvc/error.hpp"
#include "mediumvc/nn.hpp"

using namespace mvc;
using namespace mvc::nn;

namespace {

Mat random_mat(Index rows, Index cols, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  std::normal_distribution<double> d(mean, stddev);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

Vec random_unit(Index n, Rng& rng) {
  std::normal_distribution<double> d;
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = d(rng);
  return v / v.norm();
}

double l1_loss(const Mat& pred, const Mat& target, Mat* grad) {
  const Mat diff = pred - target;
  if (grad) *grad = diff.unaryExpr([](double x) { return (x > 0.0) - (x < 0.0) + 0.0; }) / static_cast<double>(diff.size());
  return diff.cwiseAbs().mean();
}

}  // namespace

TEST_SUITE("instance_norm") {
  TEST_CASE("hand-computed z-scores") {
    Mat x(3, 1);
    x << 1, 2, 3;
    InstanceNorm in;
    const Mat y = in.forward(x);
    CHECK(y(0, 0) == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y(1, 0) == doctest::Approx(0.0));
    CHECK(y(2, 0) == doctest::Approx(1.2247).epsilon(1e-3));
  }

  TEST_CASE("constant channel maps to zeros") {
    Mat x = Mat::Constant(3, 2, 5.0);
    InstanceNorm in;
    CHECK(in.forward(x).cwiseAbs().maxCoeff() <= 1e-2);
  }

  TEST_CASE("moments for random shapes") {
    Rng rng(1);
    std::uniform_int_distribution<int> frames(2, 512);
    std::uniform_real_distribution<double> spread(0.5, 5.0), offset(-10.0, 10.0);
    for (int trial = 0; trial < 30; ++trial) {
      const Index channels = trial % 2 ? 36 : 256;
      const Index t = frames(rng);
      const Mat x = random_mat(t, channels, rng, offset(rng), spread(rng));
      InstanceNorm in;
      const Mat y = in.forward(x);
      const RowVec mean = y.colwise().mean();
      const RowVec var = (y.rowwise() - mean).cwiseAbs2().colwise().mean();
      for (Index c = 0; c < channels; ++c) {
        const double in_var = (x.col(c).array() - x.col(c).mean()).square().mean();
        REQUIRE(std::abs(mean[c]) <= 1e-5);
        if (in_var > 1e-5) REQUIRE(std::abs(var[c] - 1.0) <= 1e-3);
      }
    }
  }

  TEST_CASE("affine invariance per channel") {
    Rng rng(2);
    std::uniform_real_distribution<double> gain(0.5, 3.0), shift(-5.0, 5.0);
    const Mat x = random_mat(50, 8, rng);
    Mat z = x;
    for (Index c = 0; c < 8; ++c) z.col(c) = z.col(c) * gain(rng) + Vec::Constant(50, shift(rng));
    InstanceNorm a, b;
    CHECK((a.forward(x) - b.forward(z)).cwiseAbs().maxCoeff() < 1e-4);
  }

  TEST_CASE("backward matches finite differences") {
    Rng rng(3);
    const Mat x0 = random_mat(7, 4, rng);
    const Mat w = random_mat(7, 4, rng);
    auto fn = [&](const Vec& flat, Vec* grad) {
      const Mat x = Eigen::Map<const Mat>(flat.data(), 7, 4);
      InstanceNorm in;
      const Mat y = in.forward(x);
      if (grad) {
        const Mat dx = in.backward(w);
        *grad = Eigen::Map<const Vec>(dx.data(), dx.size());
      }
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check_vector(fn, Eigen::Map<const Vec>(x0.data(), x0.size())) < 1e-6);
  }
}

TEST_SUITE("adain") {
  TEST_CASE("unit parameters add one") {
    Rng rng(4);
    const Mat c = random_mat(5, 256, rng);
    const Mat out = adain(c, Vec::Ones(256));
    CHECK((out - (c.array() + 1.0).matrix()).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("zero embedding annihilates") {
    Rng rng(5);
    CHECK(adain(random_mat(5, 256, rng), Vec::Zero(256)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("dimension mismatch is a shape error") {
    try {
      adain(Mat::Zero(3, 256), Vec::Zero(255));
      FAIL("expected a shape error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Shape);
    }
  }

  TEST_CASE("moment contract at T = 1000 for unit-norm embeddings") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      InstanceNorm in;
      const Mat content = in.forward(random_mat(1000, 256, rng, 0.3, 2.0));
      const Vec e = random_unit(256, rng);
      const Mat out = adain(content, e);
      const RowVec mean = out.colwise().mean();
      const RowVec sd = (out.rowwise() - mean).cwiseAbs2().colwise().mean().cwiseSqrt();
      for (Index c = 0; c < 256; ++c) {
        REQUIRE(std::abs(mean[c] - e[c]) <= 1e-3);
        REQUIRE(std::abs(sd[c] - std::sqrt(std::abs(e[c]))) <= 1e-2);
      }
    }
  }

  TEST_CASE("gradient with respect to the embedding") {
    Rng rng(7);
    const Mat content = random_mat(9, 16, rng);
    const Mat w = random_mat(9, 16, rng);
    Vec e = random_unit(16, rng);
    // Keep coordinates away from the kink of sqrt|e| at zero.
    for (Index i = 0; i < e.size(); ++i)
      if (std::abs(e[i]) < 0.05) e[i] = std::copysign(0.05, e[i]);
    auto fn = [&](const Vec& spk, Vec* grad) {
      AdaIN layer;
      const Mat y = layer.forward(content, spk);
      if (grad) {
        grad->setZero(spk.size());
        layer.backward(w, *grad);
      }
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check_vector(fn, e) < 1e-3);
  }
}

TEST_SUITE("weight_norm") {
  TEST_CASE("column norm equals |g|") {
    Rng rng(8);
    ParamStore store;
    WNLinear lin(store, "lin", 12, 7, rng);
    std::uniform_real_distribution<double> g(-3.0, 3.0);
    for (Index j = 0; j < 7; ++j) lin.wn().scale().value(0, j) = g(rng);
    const Mat& w = lin.wn().weight();
    for (Index j = 0; j < 7; ++j) CHECK(std::abs(w.col(j).norm() - std::abs(lin.wn().scale().value(0, j))) <= 1e-6);
    lin.wn().scale().value.setOnes();
    const Mat& w1 = lin.wn().weight();
    for (Index j = 0; j < 7; ++j) CHECK(std::abs(w1.col(j).norm() - 1.0) <= 1e-6);
  }

  TEST_CASE("direction scale does not change the output") {
    Rng rng(9);
    ParamStore store;
    WNConv1d conv(store, "conv", 6, 5, 5, rng);
    const Mat x = random_mat(20, 6, rng);
    const Mat a = conv.forward(x);
    conv.wn().direction().value *= 10.0;
    CHECK((conv.forward(x) - a).cwiseAbs().maxCoeff() <= 1e-5);
  }

  TEST_CASE("zero scale gives zero output") {
    Rng rng(10);
    ParamStore store;
    WNLinear lin(store, "lin", 6, 4, rng);
    lin.wn().scale().value.setZero();
    lin.wn().bias().value.setZero();
    CHECK(lin.forward(random_mat(9, 6, rng, 0.0, 10.0)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("zero direction is a numeric error") {
    Rng rng(11);
    ParamStore store;
    WNLinear lin(store, "lin", 3, 2, rng);
    lin.wn().direction().value.col(1).setZero();
    try {
      lin.forward(Mat::Ones(2, 3));
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::Numeric);
    }
  }
}

TEST_SUITE("convertor") {
  TEST_CASE("shape is preserved") {
    Rng rng(12);
    ParamStore store;
    Convertor block(store, "cv", 16, 4, rng);
    for (Index t : {1, 7, 64}) {
      const Mat y = block.forward(random_mat(t, 16, rng));
      CHECK(y.rows() == t);
      CHECK(y.cols() == 16);
    }
  }

  TEST_CASE("frame permutation permutes the output exactly") {
    Rng rng(13);
    ParamStore store;
    Convertor block(store, "cv", 32, 4, rng);
    for (int trial = 0; trial < 10; ++trial) {
      const Index t = 2 + trial * 13;
      const Mat x = random_mat(t, 32, rng);
      std::vector<Index> perm(static_cast<std::size_t>(t));
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      const Mat y = block.forward(x);
      const Mat yp = block.forward(x(perm, Eigen::all));
      CHECK(yp == y(perm, Eigen::all));
    }
  }

  TEST_CASE("zero input with zeroed output projections gives zero") {
    Rng rng(14);
    ParamStore store;
    Convertor block(store, "cv", 16, 4, rng);
    for (auto* lin : {&block.attention().output_projection(), &block.ff_out()}) {
      lin->wn().scale().value.setZero();
      lin->wn().bias().value.setZero();
    }
    CHECK(block.forward(Mat::Zero(10, 16)).cwiseAbs().maxCoeff() == 0.0);
  }

  TEST_CASE("heads must divide channels") {
    Rng rng(15);
    ParamStore store;
    CHECK_THROWS_AS(Convertor(store, "cv", 18, 4, rng), Error);
  }

  TEST_CASE("gradients match finite differences") {
    Rng rng(16);
    ParamStore store;
    Convertor block(store, "cv", 8, 4, rng);
    const Mat x0 = random_mat(6, 8, rng);
    const Mat w = random_mat(6, 8, rng);
    Mat x = x0;
    Mat dx_analytic;
    auto loss = [&](bool with_grad) {
      const Mat y = block.forward(x);
      if (with_grad) dx_analytic = block.backward(w);
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check(loss, store) < 1e-3);
    auto fn = [&](const Vec& flat, Vec* grad) {
      const Mat xi = Eigen::Map<const Mat>(flat.data(), 6, 8);
      const Mat y = block.forward(xi);
      if (grad) {
        const Mat dx = block.backward(w);
        *grad = Eigen::Map<const Vec>(dx.data(), dx.size());
      }
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check_vector(fn, Eigen::Map<const Vec>(x0.data(), x0.size())) < 1e-5);
  }
}

TEST_SUITE("res_block") {
  TEST_CASE("zeroed final conv is the identity") {
    Rng rng(17);
    ParamStore store;
    ResBlock block(store, "rb", 12, 5, rng);
    block.second().wn().scale().value.setZero();
    block.second().wn().bias().value.setZero();
    const Mat x = random_mat(30, 12, rng);
    CHECK(block.forward(x) == x);
  }

  TEST_CASE("shape is preserved") {
    Rng rng(18);
    ParamStore store;
    ResBlock block(store, "rb", 12, 5, rng);
    for (Index t : {1, 100}) CHECK(block.forward(random_mat(t, 12, rng)).rows() == t);
  }

  TEST_CASE("bounded inputs give finite outputs") {
    Rng rng(19);
    ParamStore store;
    ResBlock block(store, "rb", 64, 5, rng);
    std::uniform_real_distribution<double> d(-10.0, 10.0);
    Mat x(200, 64);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    CHECK(block.forward(x).allFinite());
  }

  TEST_CASE("gradients match finite differences") {
    Rng rng(20);
    ParamStore store;
    ResBlock block(store, "rb", 6, 5, rng);
    const Mat x = random_mat(9, 6, rng);
    const Mat w = random_mat(9, 6, rng);
    auto loss = [&](bool with_grad) {
      const Mat y = block.forward(x);
      if (with_grad) block.backward(w);
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check(loss, store) < 1e-3);
  }
}

TEST_SUITE("grad_check") {
  TEST_CASE("quadratic loss is exact") {
    Rng rng(21);
    ParamStore store;
    Param& p = store.add("p", {10}, 1, 10);
    p.value = random_mat(1, 10, rng);
    auto loss = [&](bool with_grad) {
      if (with_grad) p.grad = p.value;
      return 0.5 * p.value.squaredNorm();
    };
    CHECK(grad_check(loss, store) < 1e-8);
  }

  TEST_CASE("conv, instance norm and L1 pipeline") {
    Rng rng(22);
    ParamStore store;
    WNConv1d c1(store, "c1", 5, 8, 5, rng);
    WNConv1d c2(store, "c2", 8, 3, 3, rng);
    Gelu act;
    InstanceNorm in;
    const Mat x = random_mat(12, 5, rng);
    const Mat target = random_mat(12, 3, rng);
    auto loss = [&](bool with_grad) {
      const Mat y = c2.forward(in.forward(act.forward(c1.forward(x))));
      Mat g;
      const double l = l1_loss(y, target, with_grad ? &g : nullptr);
      if (with_grad) c1.backward(act.backward(in.backward(c2.backward(g))));
      return l;
    };
    CHECK(grad_check(loss, store, {1e-4, 16, 3}) < 1e-3);
  }

  TEST_CASE("attention layer") {
    Rng rng(23);
    ParamStore store;
    MultiHeadAttention att(store, "att", 8, 2, rng);
    const Mat x = random_mat(5, 8, rng);
    const Mat w = random_mat(5, 8, rng);
    auto loss = [&](bool with_grad) {
      const Mat y = att.forward(x);
      if (with_grad) att.backward(w);
      return y.cwiseProduct(w).sum();
    };
    CHECK(grad_check(loss, store) < 1e-3);
  }

  TEST_CASE("non-finite loss is a failure") {
    ParamStore store;
    store.add("p", {1}, 1, 1);
    auto loss = [](bool) { return std::nan(""); };
    CHECK_THROWS_AS(grad_check(loss, store), Error);
  }
}

TEST_SUITE("param_store") {
  TEST_CASE("rounding to f32 is idempotent and checksums track values") {
    Rng rng(24);
    ParamStore store;
    WNLinear lin(store, "lin", 4, 3, rng);
    store.round_to_f32();
    const auto sum = store.checksum();
    store.round_to_f32();
    CHECK(store.checksum() == sum);
    store[0].value(0, 0) += 1.0;
    CHECK(store.checksum() != sum);
    CHECK(store.total_elements() == 4 * 3 + 3 + 3);
    CHECK(store.find("lin.v") != nullptr);
    CHECK(store.find("nope") == nullptr);
  }
}
