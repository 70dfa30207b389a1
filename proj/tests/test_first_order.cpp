#include <gtest/gtest.h>

#include <numeric>

#include "gradpack/engine.hpp"
#include "gradpack/errors.hpp"
#include "gradpack/first_order.hpp"
#include "gradpack/harness/models.hpp"
#include "oracles.hpp"

using namespace gradpack;

namespace {

Network small_cnn(std::uint64_t seed) {
  harness::ModelSize s;
  s.height = s.width = 4;
  s.conv1 = 2;
  s.conv2 = 2;
  s.hidden = 4;
  s.classes = 3;
  Network net = harness::make_model("cnn-small", s);
  Rng rng(seed);
  net.init_params(rng);
  return net;
}

Network small_mlp(std::uint64_t seed, LossKind loss = LossKind::cross_entropy) {
  auto net = oracle::make_net(loss, std::make_unique<Linear>(5, 4), std::make_unique<ReLU>(Shape{4}),
                              std::make_unique<Linear>(4, 3));
  Rng rng(seed);
  net.init_params(rng);
  return net;
}

const Extension kFirst[] = {Extension::batch_grad, Extension::batch_l2,
                            Extension::sum_grad_squared, Extension::variance};

}  // namespace

TEST(Engine, GradientMatchesFiniteDifferences) {
  for (int which = 0; which < 3; ++which) {
    Network net = which == 0 ? small_mlp(1) : which == 1 ? small_cnn(2) : small_mlp(3, LossKind::mse);
    Rng rng(10 + which);
    const Tensor x = oracle::random_tensor(oracle::batched(4, net.input_shape()), rng);
    const Targets y = net.loss() == LossKind::mse
                          ? Targets(oracle::random_tensor({4, 3}, rng))
                          : Targets(oracle::random_labels(4, 3, rng));
    const auto result = backward(net, forward_cached(net, x, y), {});
    const auto fd = oracle::fd_gradient(net, x, y);
    std::size_t j = 0;
    for (const auto& b : result.blocks)
      for (double g : b.grad.values()) EXPECT_NEAR(g, fd[j++], 1e-6) << b.name;
    EXPECT_EQ(j, fd.size());
  }
}

TEST(Engine, BlocksAreShapedLikeParameters) {
  Network net = small_cnn(1);
  Rng rng(2);
  const Tensor x = oracle::random_tensor(oracle::batched(3, net.input_shape()), rng);
  const auto r = backward(net, forward_cached(net, x, oracle::random_labels(3, 3, rng)), kFirst);
  for (const auto& b : r.blocks) {
    const auto& p = net.layer(b.layer).params()[b.block];
    EXPECT_EQ(b.grad.shape(), p.value.shape());
    EXPECT_EQ(b.variance->shape(), p.value.shape());
    EXPECT_EQ(b.batch_grad->shape(), (Shape{3, p.size()}));
    EXPECT_EQ(b.batch_l2->shape(), (Shape{3}));
  }
  EXPECT_EQ(r.at(0, 1).name, "0.bias");
  EXPECT_THROW(r.at(1, 0), ConfigurationError);
}

TEST(Engine, ExtensionNames) {
  EXPECT_EQ(parse_extension("DiagGGN-MC"), Extension::diag_ggn_mc);
  EXPECT_EQ(parse_extension("sum_grad_squared"), Extension::sum_grad_squared);
  EXPECT_EQ(parse_extension("KFLR"), Extension::kflr);
  EXPECT_THROW(parse_extension("newton"), ConfigurationError);
  EXPECT_TRUE(parse_extension_list("").empty());
  EXPECT_EQ(parse_extension_list("batch_grad, variance").size(), 2u);
  for (auto e : kAllExtensions) EXPECT_EQ(parse_extension(extension_name(e)), e);
}

TEST(Engine, ForwardErrorsNameTheLayer) {
  Network net = small_mlp(1);
  try {
    forward_cached(net, Tensor({2, 4}), Labels{0, 1});
    FAIL();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 0"), std::string::npos);
  }
}

namespace {
// A parameterized layer without a parameter Jacobian product.
class Opaque final : public Layer {
 public:
  Opaque() : Layer({3}, {3}) { params_.push_back({"scale", Tensor({3}, 1.0)}); }
  std::string kind() const override { return "Opaque"; }
  Tensor forward(const Tensor& x) const override {
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= params_[0].value[i % 3];
    return y;
  }
  Tensor jac_t_mat_prod(const LayerIO&, const Tensor& m) const override { return m; }
  Tensor jac_mat_prod(const LayerIO&, const Tensor& m) const override { return m; }
};
}  // namespace

TEST(Engine, UnsupportedLayerIsReportedWithContext) {
  auto net = oracle::make_net(LossKind::cross_entropy, std::make_unique<Linear>(2, 3),
                              std::make_unique<Opaque>());
  const Tensor x({2, 2}, {1, 2, 3, 4});
  const Extension ext[] = {Extension::kflr};
  try {
    backward(net, forward_cached(net, x, Labels{0, 1}), ext);
    FAIL();
  } catch (const UnsupportedOperation& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("layer 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("Opaque"), std::string::npos) << msg;
  }
}

TEST(FirstOrder, BatchGradMatchesForLoop) {
  for (int which = 0; which < 2; ++which) {
    Network net = which ? small_cnn(4) : small_mlp(5);
    for (std::size_t n : {1, 2, 8}) {
      Rng rng(n);
      const Tensor x = oracle::random_tensor(oracle::batched(n, net.input_shape()), rng);
      const Labels y = oracle::random_labels(n, 3, rng);
      const Extension ext[] = {Extension::batch_grad};
      const auto r = backward(net, forward_cached(net, x, y), ext);
      const auto loop = for_loop_batch_grad(net, x, y);
      ASSERT_EQ(loop.size(), r.blocks.size());
      for (std::size_t b = 0; b < loop.size(); ++b) {
        EXPECT_LE(max_abs_diff(*r.blocks[b].batch_grad, loop[b]), 1e-12);
        // Row sum is the gradient exactly.
        const Tensor sum = reduce(*r.blocks[b].batch_grad, {0}, ReduceOp::sum);
        EXPECT_TRUE(bitwise_equal(sum, r.blocks[b].grad.reshaped({sum.numel()})));
      }
    }
  }
}

TEST(FirstOrder, SecondMomentExamples) {
  // Scalar model f = w * x with loss contributions whose gradients are 1 and 3.
  const Linear layer(1, 1);
  const Tensor x({2, 1}, {1.0, 3.0});
  const Tensor y({2, 1});
  const Tensor g({2, 1, 1}, {0.5, 0.5});  // (1/N) grad_f l_n with grad_f l_n = 1
  const LayerIO io{x, y};
  const Tensor sgs = first_order::sum_grad_squared(layer, io, 0, g);
  EXPECT_DOUBLE_EQ(sgs[0], 5.0);
  const Tensor grad = layer.param_jac_t_mat_prod(io, 0, g, true);
  EXPECT_DOUBLE_EQ(grad[0], 2.0);
  EXPECT_DOUBLE_EQ(first_order::variance(sgs, grad)[0], 1.0);
  const Tensor l2 = first_order::batch_l2(layer, io, 0, g);
  EXPECT_DOUBLE_EQ(l2[0], 0.25);
  EXPECT_DOUBLE_EQ(l2[1], 2.25);
}

TEST(FirstOrder, MomentsMatchBatchGrad) {
  for (int which = 0; which < 2; ++which) {
    Network net = which ? small_cnn(6) : small_mlp(7);
    Rng rng(8);
    const std::size_t n = 6;
    const Tensor x = oracle::random_tensor(oracle::batched(n, net.input_shape()), rng);
    const Labels y = oracle::random_labels(n, 3, rng);
    const auto r = backward(net, forward_cached(net, x, y), kFirst);
    for (const auto& b : r.blocks) {
      const Tensor& bg = *b.batch_grad;
      const std::size_t d = bg.dim(1);
      for (std::size_t s = 0; s < n; ++s) {
        double norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) norm += bg[s * d + j] * bg[s * d + j];
        EXPECT_NEAR((*b.batch_l2)[s], norm, 1e-10);
      }
      for (std::size_t j = 0; j < d; ++j) {
        // Population variance of the unscaled per-sample gradients.
        double mean = 0.0, sq = 0.0;
        for (std::size_t s = 0; s < n; ++s) mean += n * bg[s * d + j] / n;
        for (std::size_t s = 0; s < n; ++s) sq += std::pow(n * bg[s * d + j], 2) / n;
        EXPECT_NEAR((*b.sum_grad_squared)[j], sq, 1e-10);
        EXPECT_NEAR((*b.variance)[j], sq - mean * mean, 1e-10);
        EXPECT_GE((*b.variance)[j], -1e-12);
      }
    }
  }
}

TEST(FirstOrder, SingleSampleAndCopiesHaveNoVariance) {
  Network net = small_mlp(9);
  Rng rng(9);
  const Tensor one = oracle::random_tensor({1, 5}, rng);
  auto r = backward(net, forward_cached(net, one, Labels{2}), kFirst);
  for (const auto& b : r.blocks)
    for (double v : b.variance->values()) EXPECT_EQ(v, 0.0);

  Tensor copies({4, 5});
  for (std::size_t s = 0; s < 4; ++s)
    std::copy(one.values().begin(), one.values().end(), copies.data() + 5 * s);
  r = backward(net, forward_cached(net, copies, Labels{2, 2, 2, 2}), kFirst);
  for (const auto& b : r.blocks)
    for (double v : b.variance->values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(FirstOrder, ZeroGradientGivesZeros) {
  const Linear layer(3, 2);
  const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}), y({2, 2});
  const Tensor g({2, 2, 1});
  for (std::size_t b = 0; b < 2; ++b) {
    const Tensor l2 = first_order::batch_l2(layer, {x, y}, b, g);
    const Tensor sgs = first_order::sum_grad_squared(layer, {x, y}, b, g);
    for (double v : l2.values()) EXPECT_EQ(v, 0.0);
    for (double v : sgs.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(FirstOrder, FastPathsDoNotMaterializeIndividualGradients) {
  // Large N and d so that one [N x d] buffer dwarfs everything O(N + d).
  Rng rng(11);
  const std::size_t n = 512;
  Linear lin(200, 100);
  for (auto& p : lin.params()) p.value = oracle::random_tensor(p.value.shape(), rng);
  Conv2d conv(4, 8, 8, 8, oracle::conv3x3());
  for (auto& p : conv.params()) p.value = oracle::random_tensor(p.value.shape(), rng);

  for (const Layer* layer : {static_cast<const Layer*>(&lin), static_cast<const Layer*>(&conv)}) {
    const Tensor x = oracle::random_tensor(oracle::batched(n, layer->input_shape()), rng);
    const Tensor y = layer->forward(x);
    const Tensor g = oracle::random_tensor({n, layer->out_dim(), 1}, rng);
    const std::size_t d = layer->params()[0].size();
    const std::size_t individual = n * d * sizeof(double);
    memory::PeakScope scope;
    const auto m = first_order::moments(*layer, {x, y}, 0, g, true, true);
    // Unfold and transpose buffers of a single sample.
    const std::size_t inputs = layer->in_dim() * sizeof(double) * 32;
    EXPECT_LT(scope.peak_bytes(), 2 * d * sizeof(double) + n * sizeof(double) + inputs)
        << layer->kind();
    EXPECT_LT(scope.peak_bytes(), individual / 8) << layer->kind();
    EXPECT_EQ(m.batch_l2->numel(), n);
  }
}
