#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "gradpack/engine.hpp"
#include "gradpack/errors.hpp"
#include "gradpack/harness/models.hpp"
#include "gradpack/second_order.hpp"
#include "oracles.hpp"

using namespace gradpack;

namespace {

Network relu_mlp(std::uint64_t seed, LossKind loss = LossKind::cross_entropy) {
  auto net = oracle::make_net(loss, std::make_unique<Linear>(4, 5), std::make_unique<ReLU>(Shape{5}),
                              std::make_unique<Linear>(5, 3));
  Rng rng(seed);
  net.init_params(rng);
  return net;
}

Network tiny_cnn(const std::string& name, std::uint64_t seed) {
  harness::ModelSize s;
  s.height = s.width = 4;
  s.conv1 = 2;
  s.conv2 = 2;
  s.hidden = 4;
  s.classes = 3;
  Network net = harness::make_model(name, s);
  Rng rng(seed);
  net.init_params(rng);
  return net;
}

struct Problem {
  Tensor x;
  Labels y;
};

Problem problem(const Network& net, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return {oracle::random_tensor(oracle::batched(n, net.input_shape()), rng),
          oracle::random_labels(n, net.classes(), rng)};
}

BackwardResult run(const Network& net, const Problem& p, std::initializer_list<Extension> ext,
                   std::uint64_t seed = 0, std::size_t mc = 1) {
  const std::vector<Extension> e(ext);
  return backward(net, forward_cached(net, p.x, p.y), e, BackwardOptions{seed, mc});
}

// Dense GGN restricted to one block, reindexed from [out x in] weight order
// to the [in x out] order of A (x) B.
std::vector<double> block_in_kron_order(const std::vector<double>& g, std::size_t total,
                                        std::size_t offset, std::size_t out, std::size_t in) {
  const std::size_t d = out * in;
  std::vector<double> b(d * d);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t o2 = 0; o2 < out; ++o2)
        for (std::size_t i2 = 0; i2 < in; ++i2)
          b[(i * out + o) * d + (i2 * out + o2)] =
              g[(offset + o * in + i) * total + offset + o2 * in + i2];
  return b;
}

void expect_symmetric_psd(const Tensor& m, double tol) {
  const std::size_t n = m.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(m[i * n + j], m[j * n + i], tol);
  // Gershgorin is too weak; check x^T M x >= 0 on random directions.
  Rng rng(99);
  for (int t = 0; t < 20; ++t) {
    const Tensor v = oracle::random_tensor({n}, rng);
    double q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) q += v[i] * m[i * n + j] * v[j];
    EXPECT_GE(q, -tol);
  }
}

}  // namespace

TEST(DiagGGN, ClosedFormExample) {
  auto net = oracle::make_net(LossKind::mse, std::make_unique<Linear>(2, 1));
  net.set_flat_params(std::vector<double>{1.0, 2.0, 0.0});
  const Tensor x({1, 2}, {1.0, 1.0});
  const Extension ext[] = {Extension::diag_ggn};
  const auto r = backward(net, forward_cached(net, x, Tensor({1, 1}, {0.0})), ext);
  // sqrt(2)^2 is one ulp off 2.
  EXPECT_LE(max_abs_diff(*r.at(0, 0).diag_ggn, Tensor({1, 2}, {2.0, 2.0})), 1e-15);
}

TEST(DiagGGN, ZeroInputsGiveZeroWeightDiagonal) {
  Network net = relu_mlp(1);
  const Problem p{Tensor({3, 4}), Labels{0, 1, 2}};
  const auto r = run(net, p, {Extension::diag_ggn});
  for (double v : r.at(0, 0).diag_ggn->values()) EXPECT_EQ(v, 0.0);
}

TEST(DiagGGN, MatchesDenseOracleAndTrace) {
  for (int which = 0; which < 3; ++which) {
    Network net = which == 0   ? relu_mlp(2)
                  : which == 1 ? tiny_cnn("cnn-small", 3)
                               : relu_mlp(4, LossKind::mse);
    Rng rng(5);
    const Tensor x = oracle::random_tensor(oracle::batched(3, net.input_shape()), rng);
    const Targets y = net.loss() == LossKind::mse ? Targets(oracle::random_tensor({3, 3}, rng))
                                                  : Targets(oracle::random_labels(3, 3, rng));
    const Extension ext[] = {Extension::diag_ggn};
    const auto r = backward(net, forward_cached(net, x, y), ext);
    const auto dense = oracle::dense_ggn(net, x);
    const std::size_t d = net.num_params();
    std::size_t j = 0;
    for (const auto& b : r.blocks) {
      double trace = 0.0, sum = 0.0;
      for (double v : b.diag_ggn->values()) {
        EXPECT_NEAR(v, dense[j * d + j], 1e-8) << b.name;
        EXPECT_GE(v, -1e-12);
        trace += dense[j * d + j];
        sum += v;
        ++j;
      }
      EXPECT_NEAR(sum, trace, 1e-8);
    }
  }
}

TEST(DiagGGN, InvariantToBatchPermutation) {
  Network net = tiny_cnn("cnn-sigmoid", 6);
  const Problem p = problem(net, 5, 7);
  std::vector<std::size_t> perm(5);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[3]);
  Problem q{take_samples(p.x, perm), std::get<Labels>(take_samples(Targets(p.y), perm))};
  const auto all = {Extension::diag_ggn, Extension::kflr, Extension::kfra, Extension::diag_hessian};
  const auto a = run(net, p, all), b = run(net, q, all);
  for (std::size_t i = 0; i < a.blocks.size(); ++i) {
    EXPECT_LE(max_abs_diff(*a.blocks[i].diag_ggn, *b.blocks[i].diag_ggn), 1e-10);
    EXPECT_LE(max_abs_diff(*a.blocks[i].diag_hessian, *b.blocks[i].diag_hessian), 1e-10);
    EXPECT_LE(max_abs_diff(a.blocks[i].kflr->a, b.blocks[i].kflr->a), 1e-10);
    EXPECT_LE(max_abs_diff(a.blocks[i].kflr->b, b.blocks[i].kflr->b), 1e-10);
    EXPECT_LE(max_abs_diff(a.blocks[i].kfra->b, b.blocks[i].kfra->b), 1e-10);
  }
}

TEST(DiagGGNMC, OneHotPredictionGivesZeros) {
  auto net = oracle::make_net(LossKind::cross_entropy, std::make_unique<Linear>(2, 3));
  net.set_flat_params(std::vector<double>{0, 0, 400, 400, 0, 0, 0, 0, 0});
  const Problem p{Tensor({2, 2}, {1, 1, 2, 1}), Labels{1, 1}};
  const auto r = run(net, p, {Extension::diag_ggn_mc});
  for (const auto& b : r.blocks)
    for (double v : b.diag_ggn_mc->values()) EXPECT_EQ(v, 0.0);
}

TEST(DiagGGNMC, ReproducibleAndConvergent) {
  Network net = relu_mlp(8);
  const Problem p = problem(net, 3, 9);
  const auto a = run(net, p, {Extension::diag_ggn_mc}, 17);
  const auto b = run(net, p, {Extension::diag_ggn_mc}, 17);
  for (std::size_t i = 0; i < a.blocks.size(); ++i)
    EXPECT_TRUE(bitwise_equal(*a.blocks[i].diag_ggn_mc, *b.blocks[i].diag_ggn_mc));

  // Many columns in one draw approach the exact diagonal.
  const auto exact = run(net, p, {Extension::diag_ggn});
  const auto mc = run(net, p, {Extension::diag_ggn_mc}, 3, 20000);
  for (std::size_t i = 0; i < exact.blocks.size(); ++i) {
    const Tensor& e = *exact.blocks[i].diag_ggn;
    const Tensor& m = *mc.blocks[i].diag_ggn_mc;
    for (std::size_t j = 0; j < e.numel(); ++j)
      EXPECT_NEAR(m[j], e[j], 0.05 * std::max(e[j], 0.05)) << i << "," << j;
  }
}

TEST(Kronecker, SingleSampleInputFactorIsOuterProduct) {
  Network net = relu_mlp(10);
  const Problem p = problem(net, 1, 11);
  const auto r = run(net, p, {Extension::kfac, Extension::kflr});
  const Tensor& a = r.at(0, 0).kfac->a;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a[i * 4 + j], p.x[i] * p.x[j]);
  EXPECT_TRUE(bitwise_equal(a, r.at(0, 0).kflr->a));
  EXPECT_EQ(r.at(0, 1).kflr->a.shape(), (Shape{1, 1}));
}

TEST(Kronecker, KflrIsExactForOneLinearLayerAtOneSample) {
  for (const LossKind loss : {LossKind::cross_entropy, LossKind::mse}) {
    auto net = oracle::make_net(loss, std::make_unique<Linear>(3, 4));
    Rng rng(12);
    net.init_params(rng);
    const Tensor x = oracle::random_tensor({1, 3}, rng);
    const Targets y = loss == LossKind::mse ? Targets(oracle::random_tensor({1, 4}, rng))
                                            : Targets(Labels{2});
    const Extension ext[] = {Extension::kflr};
    const auto r = backward(net, forward_cached(net, x, y), ext);
    const auto dense = oracle::dense_ggn(net, x);
    const std::size_t total = net.num_params();
    const auto want = block_in_kron_order(dense, total, 0, 4, 3);
    const auto got = oracle::kron(r.at(0, 0).kflr->a, r.at(0, 0).kflr->b);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-8);
    // Bias block: the full GGN of the bias.
    const Tensor& bb = r.at(0, 1).kflr->b;
    for (std::size_t o = 0; o < 4; ++o)
      for (std::size_t o2 = 0; o2 < 4; ++o2)
        EXPECT_NEAR(bb[o * 4 + o2], dense[(12 + o) * total + 12 + o2], 1e-8);
  }
}

TEST(Kronecker, KfraEqualsKflrOnLinearNetsAtOneSample) {
  auto net = oracle::make_net(LossKind::cross_entropy, std::make_unique<Linear>(3, 4),
                              std::make_unique<Linear>(4, 4), std::make_unique<Linear>(4, 2));
  Rng rng(13);
  net.init_params(rng);
  const Problem p{oracle::random_tensor({1, 3}, rng), Labels{1}};
  const auto r = run(net, p, {Extension::kflr, Extension::kfra, Extension::kfac});
  for (const auto& b : r.blocks) {
    EXPECT_LE(max_abs_diff(b.kfra->a, b.kflr->a), 1e-10) << b.name;
    EXPECT_LE(max_abs_diff(b.kfra->b, b.kflr->b), 1e-10) << b.name;
  }
}

TEST(Kronecker, MseOutputFactorIsTwiceIdentityAtTheHead) {
  auto net = oracle::make_net(LossKind::mse, std::make_unique<Linear>(3, 2));
  Rng rng(14);
  net.init_params(rng);
  const Tensor x = oracle::random_tensor({4, 3}, rng);
  const Extension ext[] = {Extension::kflr};
  const auto r = backward(net, forward_cached(net, x, oracle::random_tensor({4, 2}, rng)), ext);
  EXPECT_LE(max_abs_diff(r.at(0, 0).kflr->b, Tensor({2, 2}, {2, 0, 0, 2})), 1e-14);
}

TEST(Kronecker, FullKernelConvEqualsLinear) {
  // A conv whose kernel covers the whole input is a linear map of the
  // flattened image; the factors must agree.
  const std::size_t c = 2, h = 3, w = 3, out = 4;
  ConvGeometry g{h, w, 1, 1, 0, 0};
  auto conv_net = oracle::make_net(LossKind::cross_entropy, std::make_unique<Conv2d>(c, out, h, w, g),
                                   std::make_unique<Flatten>(Shape{out, 1, 1}),
                                   std::make_unique<Sigmoid>(Shape{out}),
                                   std::make_unique<Linear>(out, 3));
  auto lin_net = oracle::make_net(LossKind::cross_entropy, std::make_unique<Linear>(c * h * w, out),
                                  std::make_unique<Identity>(Shape{out}),
                                  std::make_unique<Sigmoid>(Shape{out}),
                                  std::make_unique<Linear>(out, 3));
  Rng rng(15);
  conv_net.init_params(rng);
  lin_net.set_flat_params(conv_net.flat_params());
  const Tensor x = oracle::random_tensor({5, c, h, w}, rng);
  const Labels y = oracle::random_labels(5, 3, rng);
  const auto all = {Extension::kflr, Extension::kfac, Extension::kfra, Extension::diag_ggn};
  const Problem pc{x, y}, pl{x.reshaped({5, c * h * w}), y};
  const auto rc = run(conv_net, pc, all, 4), rl = run(lin_net, pl, all, 4);
  for (std::size_t blk = 0; blk < 2; ++blk) {
    const auto& a = rc.at(0, blk);
    const auto& b = rl.at(0, blk);
    for (auto pair : {&BlockResult::kflr, &BlockResult::kfac, &BlockResult::kfra}) {
      EXPECT_LE(max_abs_diff((a.*pair)->a, (b.*pair)->a), 1e-10);
      EXPECT_LE(max_abs_diff((a.*pair)->b, (b.*pair)->b), 1e-10);
    }
    EXPECT_LE(max_abs_diff(a.diag_ggn->reshaped({a.diag_ggn->numel()}),
                           b.diag_ggn->reshaped({b.diag_ggn->numel()})),
              1e-10);
  }
}

TEST(Kronecker, FactorsAreSymmetricPsd) {
  Network net = tiny_cnn("cnn-small", 16);
  const Problem p = problem(net, 6, 17);
  const auto r = run(net, p, {Extension::kfac, Extension::kflr, Extension::kfra});
  for (const auto& b : r.blocks)
    for (auto pair : {&BlockResult::kfac, &BlockResult::kflr, &BlockResult::kfra}) {
      expect_symmetric_psd((b.*pair)->a, 1e-10);
      expect_symmetric_psd((b.*pair)->b, 1e-10);
    }
}

TEST(Kfra, HeadIsMeanLossHessianAndGbarStaysPsd) {
  Network net = relu_mlp(18);
  const Problem p = problem(net, 4, 19);
  const auto r = run(net, p, {Extension::kfra});
  const Tensor& head = r.kfra_gbar.back();
  const std::size_t c = 3;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double want = 0.0;
      for (std::size_t s = 0; s < 4; ++s) want += oracle::output_hessian(net, p.x, s)[i * c + j] / 4;
      EXPECT_NEAR(head[i * c + j], want, 1e-14);
    }
  for (std::size_t i = 1; i < r.kfra_gbar.size(); ++i) expect_symmetric_psd(r.kfra_gbar[i], 1e-10);
}

TEST(Kfra, PropagationMatchesPerSampleJacobians) {
  // (1/N) sum_n J_n^T G J_n from dense Jacobians of a sigmoid layer.
  Sigmoid layer(Shape{3});
  Rng rng(20);
  const Tensor x = oracle::random_tensor({4, 3}, rng);
  const Tensor y = layer.forward(x);
  Tensor g({3, 3}, {2, 1, 0, 1, 3, 1, 0, 1, 2});
  const Tensor got = second_order::propagate_gbar(layer, {x, y}, g);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double want = 0.0;
      for (std::size_t s = 0; s < 4; ++s) {
        const double di = y[s * 3 + i] * (1 - y[s * 3 + i]);
        const double dj = y[s * 3 + j] * (1 - y[s * 3 + j]);
        want += di * g[i * 3 + j] * dj / 4;
      }
      EXPECT_NEAR(got[i * 3 + j], want, 1e-14);
    }
}

TEST(DiagHessian, EqualsDiagGgnWithoutCurvedLayers) {
  for (int which = 0; which < 2; ++which) {
    Network net = which ? tiny_cnn("cnn-small", 21) : relu_mlp(22);
    const Problem p = problem(net, 4, 23);
    const auto r = run(net, p, {Extension::diag_ggn, Extension::diag_hessian});
    for (const auto& b : r.blocks)
      EXPECT_LE(max_abs_diff(*b.diag_ggn, *b.diag_hessian), 1e-10) << b.name;
  }
}

TEST(DiagHessian, MatchesFiniteDifferencesThroughSigmoid) {
  Network net = tiny_cnn("cnn-sigmoid", 24);
  ASSERT_LE(net.num_params(), 100u);
  const Problem p = problem(net, 3, 25);
  const auto r = run(net, p, {Extension::diag_hessian});
  const auto fd = oracle::fd_hessian_diag(net, p.x, p.y);
  std::size_t j = 0;
  for (const auto& b : r.blocks)
    for (double v : b.diag_hessian->values()) EXPECT_NEAR(v, fd[j++], 1e-4) << b.name;

  auto deep = oracle::make_net(LossKind::mse, std::make_unique<Linear>(3, 4),
                               std::make_unique<Tanh>(Shape{4}), std::make_unique<Linear>(4, 4),
                               std::make_unique<Sigmoid>(Shape{4}), std::make_unique<Linear>(4, 2));
  Rng rng(26);
  deep.init_params(rng);
  const Tensor x = oracle::random_tensor({3, 3}, rng);
  const Tensor t = oracle::random_tensor({3, 2}, rng);
  const Extension ext[] = {Extension::diag_hessian};
  const auto rd = backward(deep, forward_cached(deep, x, t), ext);
  const auto fdd = oracle::fd_hessian_diag(deep, x, t);
  j = 0;
  for (const auto& b : rd.blocks)
    for (double v : b.diag_hessian->values()) EXPECT_NEAR(v, fdd[j++], 1e-4) << b.name;
}

TEST(DiagHessian, OutputLayerSeesOnlyTheLossFactor) {
  Network net = tiny_cnn("cnn-sigmoid", 27);
  const Problem p = problem(net, 3, 28);
  const auto r = run(net, p, {Extension::diag_ggn, Extension::diag_hessian});
  const std::size_t last = net.size() - 1;
  for (std::size_t blk = 0; blk < 2; ++blk)
    EXPECT_TRUE(bitwise_equal(*r.at(last, blk).diag_ggn, *r.at(last, blk).diag_hessian));
}

TEST(DiagHessian, ResidualSplitBySign) {
  Sigmoid layer(Shape{2});
  const Tensor x({1, 2}, {0.3, -0.7});
  const Tensor y = layer.forward(x);
  const Tensor g({1, 2}, {1.0, 1.0});
  const auto fs = second_order::residual_factors(layer, {x, y}, g);
  ASSERT_EQ(fs.size(), 2u);  // sigma'' changes sign at 0
  EXPECT_EQ(fs[0].sign, 1);
  EXPECT_EQ(fs[1].sign, -1);
  EXPECT_EQ(fs[0].data.at({0, 0, 0}), 0.0);
  EXPECT_GT(fs[0].data.at({0, 1, 1}), 0.0);
  EXPECT_GT(fs[1].data.at({0, 0, 0}), 0.0);
  EXPECT_TRUE(second_order::residual_factors(layer, {x, y}, Tensor({1, 2})).empty());
}

TEST(SecondOrder, UnsupportedLayers) {
  MaxPool2d pool(1, 2, 2, 2, 2);
  const Tensor x({1, 1, 2, 2});
  EXPECT_THROW(second_order::input_factor(pool, {x, x}), UnsupportedOperation);
  Linear l(2, 2);
  const Tensor a({1, 2}), b({1, 2});
  EXPECT_THROW(second_order::kfra(l, {a, b}, 0, Tensor({3, 3})), DimensionError);
  EXPECT_THROW(second_order::diag_ggn(l, {a, b}, 0, SqrtFactor{Tensor({1, 3, 2}), 1}),
               DimensionError);
}
