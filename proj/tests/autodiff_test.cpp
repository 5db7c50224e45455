#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "propfly/errors.hpp"
#include "propfly/param_store.hpp"
#include "support.hpp"

namespace propfly {
namespace {

using ad::Tensor;

double gelu_erf(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

TEST(Apply, MatmulByIdentity) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor i = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor c = ad::matmul(a, i);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Apply, MseOfEqualTensorsIsZero) {
  const Tensor a = Tensor::from({3}, {1, 2, 3});
  EXPECT_EQ(ad::mse(a, a.clone()).item(), 0.0);
}

TEST(Apply, MeanGeluMatchesErfReference) {
  const Tensor x = Tensor::from({3}, {-10, 0, 10});
  const double expected = (gelu_erf(-10) + gelu_erf(0) + gelu_erf(10)) / 3.0;
  EXPECT_NEAR(ad::mean(ad::gelu(x)).item(), expected, 1e-12);
  EXPECT_NEAR(ad::mean(ad::gelu(x)).item(), 10.0 / 3.0, 1e-9);
}

TEST(Apply, ShapeErrorNamesOpAndShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    ad::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find(ad::shape_string(a.shape())), std::string::npos);
  }
  EXPECT_THROW(ad::add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(ad::mse(Tensor::zeros({4}), Tensor::zeros({5})), ShapeError);
}

TEST(Apply, ScalarBroadcastOnly) {
  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor s = Tensor::scalar(2.0);
  const Tensor p = ad::mul(a, s);
  EXPECT_EQ(p.at(3), 8.0);
  EXPECT_THROW(ad::mul(a, Tensor::zeros({2})), ShapeError);
}

TEST(Apply, RecordsOnlyWhenGradRequired) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  ad::add(Tensor::zeros({2}), Tensor::zeros({2}));
  EXPECT_EQ(tape.size(), 0u);
  ad::add(Tensor::zeros({2}, true), Tensor::zeros({2}));
  EXPECT_EQ(tape.size(), 1u);
  {
    ad::NoGradGuard guard;
    const Tensor r = ad::add(Tensor::zeros({2}, true), Tensor::zeros({2}));
    EXPECT_FALSE(r.requires_grad());
  }
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Backward, SumGivesOnes) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor x = Tensor::from({3}, {0.5, -2, 7}, true);
  ad::backward(ad::sum(x));
  EXPECT_EQ(x.grad_or_zero(), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, HandChainRule) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor w = Tensor::scalar(2.0, true);
  ad::backward(ad::mse(ad::mul(w, Tensor::scalar(3.0)), Tensor::scalar(5.0)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor x = Tensor::from({2}, {1, 2}, true);
  EXPECT_THROW(ad::backward(ad::scale(x, 2.0)), ContractError);
}

TEST(Backward, UnreachableLeafHasZeroGrad) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor used = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {3, 4}, true);
  ad::backward(ad::sum(used));
  EXPECT_EQ(unused.grad_or_zero(), (std::vector<double>{0, 0}));
}

TEST(Backward, TapeIsTopologicallyOrdered) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  CounterRng rng(1, Purpose::kTest);
  const Tensor w = test::random_tensor(rng, {4, 3}, true);
  const Tensor x = test::random_tensor(rng, {2, 4});
  ad::mean(ad::gelu(ad::matmul(ad::gelu(ad::matmul(x, w)), test::random_tensor(rng, {3, 2}, true))));
  std::vector<const ad::Node*> produced;
  for (const auto& rec : tape.records()) {
    for (const auto& in : rec.inputs) {
      if (in->is_leaf) continue;
      EXPECT_NE(std::find(produced.begin(), produced.end(), in.get()), produced.end());
    }
    produced.push_back(rec.output.get());
  }
}

TEST(Detach, BlocksGradientExactly) {
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor x = Tensor::from({3}, {1, -2, 3}, true);
  Tensor w = Tensor::from({3}, {0.5, 0.5, 0.5}, true);
  const Tensor upstream = ad::scale(x, 3.0);
  ad::backward(ad::sum(ad::mul(ad::detach(upstream), w)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_EQ(x.grad_or_zero(), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(w.grad_or_zero(), (std::vector<double>{3, -6, 9}));
}

TEST(Detach, Idempotent) {
  const Tensor x = Tensor::from({2}, {1.25, -3}, true);
  const Tensor d1 = ad::detach(x);
  const Tensor d2 = ad::detach(d1);
  EXPECT_FALSE(d1.requires_grad());
  EXPECT_EQ(std::vector<double>(d1.data().begin(), d1.data().end()),
            std::vector<double>(d2.data().begin(), d2.data().end()));
}

TEST(GradCheck, QuadraticIsExact) {
  ParamStore p;
  CounterRng rng(2, Purpose::kTest);
  p.add("p", test::random_tensor(rng, {3, 4}, true), Role::kPhi);
  const auto r = grad_check([](const ParamStore& s) { return ad::sum(ad::mul(s.get("p"), s.get("p"))); }, p);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.coords_checked, 12u);
}

TEST(GradCheck, TwoLayerMlp) {
  CounterRng rng(3, Purpose::kTest);
  ParamStore p;
  p.add("w1", test::random_tensor(rng, {5, 7}, true, 0.5), Role::kPhi);
  p.add("b1", test::random_tensor(rng, {1, 7}, true, 0.1), Role::kPhi);
  p.add("w2", test::random_tensor(rng, {7, 3}, true, 0.5), Role::kPhi);
  const Tensor x = test::random_tensor(rng, {4, 5});
  const Tensor y = test::random_tensor(rng, {4, 3});
  const Tensor ones = Tensor::filled({4, 1}, 1.0);
  const auto f = [&](const ParamStore& s) {
    const Tensor h = ad::gelu(ad::add(ad::matmul(x, s.get("w1")), ad::matmul(ones, s.get("b1"))));
    return ad::mse(ad::matmul(h, s.get("w2")), y);
  };
  EXPECT_LT(grad_check(f, p).max_rel_error, 1e-4);
}

TEST(GradCheck, NonFiniteValueRejected) {
  ParamStore p;
  p.add("p", Tensor::from({1}, {1e200}, true), Role::kPhi);
  EXPECT_THROW(grad_check([](const ParamStore& s) { return ad::sum(ad::mul(s.get("p"), s.get("p"))); }, p),
               NumericsError);
}

TEST(GradCheck, RejectsNonPositiveStep) {
  ParamStore p;
  p.add("p", Tensor::from({1}, {1.0}, true), Role::kPhi);
  EXPECT_THROW(grad_check([](const ParamStore& s) { return ad::sum(s.get("p")); }, p, {0.0, 0}), ContractError);
}

// Randomized op graphs: each case draws an op kind and random extents and
// checks every gradient against central differences.
TEST(Property, EveryOpMatchesFiniteDifferences) {
  const ad::OpKind kinds[] = {ad::OpKind::kAdd,   ad::OpKind::kSub,  ad::OpKind::kMul,
                              ad::OpKind::kMatmul, ad::OpKind::kScale, ad::OpKind::kSum,
                              ad::OpKind::kMean,  ad::OpKind::kGelu, ad::OpKind::kMse};
  CounterRng rng(4, Purpose::kTest);
  for (int c = 0; c < 180; ++c) {
    const ad::OpKind kind = kinds[c % 9];
    const std::size_t m = 1 + rng.below(4), k = 1 + rng.below(4), n = 1 + rng.below(4);
    const bool scalar_b = (kind == ad::OpKind::kAdd || kind == ad::OpKind::kSub || kind == ad::OpKind::kMul) &&
                          rng.bernoulli(0.3);
    ParamStore p;
    p.add("a", test::random_tensor(rng, {m, k}, true), Role::kPhi);
    if (kind == ad::OpKind::kMatmul)
      p.add("b", test::random_tensor(rng, {k, n}, true), Role::kPhi);
    else
      p.add("b", test::random_tensor(rng, scalar_b ? ad::Shape{1} : ad::Shape{m, k}, true), Role::kPhi);
    const double factor = rng.uniform(-2, 2);
    const std::size_t out_cols = kind == ad::OpKind::kMatmul ? n : k;
    const Tensor weights = test::random_tensor(rng, {m, out_cols});
    const auto f = [&](const ParamStore& s) {
      std::vector<Tensor> inputs = {s.get("a")};
      if (kind != ad::OpKind::kScale && kind != ad::OpKind::kSum && kind != ad::OpKind::kMean &&
          kind != ad::OpKind::kGelu)
        inputs.push_back(s.get("b"));
      const Tensor y = ad::apply(kind, inputs, factor);
      if (y.numel() == 1) return ad::scale(y, 1.7);
      return ad::sum(ad::mul(y, weights));
    };
    const auto r = grad_check(f, p);
    EXPECT_LT(r.max_rel_error, 1e-4) << ad::op_name(kind) << " case " << c << " worst " << r.worst_param;
  }
}

TEST(Property, BackwardIsLinear) {
  CounterRng rng(5, Purpose::kTest);
  for (int c = 0; c < 20; ++c) {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    Tensor w = test::random_tensor(rng, {3, 4}, true);
    const Tensor x = test::random_tensor(rng, {2, 3});
    const Tensor y = test::random_tensor(rng, {2, 4});
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    auto l1 = [&] { return ad::mse(ad::gelu(ad::matmul(x, w)), y); };
    auto l2 = [&] { return ad::mean(ad::mul(ad::matmul(x, w), ad::matmul(x, w))); };
    ad::backward(l1());
    const auto g1 = w.grad_or_zero();
    w.zero_grad();
    ad::backward(l2());
    const auto g2 = w.grad_or_zero();
    w.zero_grad();
    ad::backward(ad::add(ad::scale(l1(), a), ad::scale(l2(), b)));
    const auto g = w.grad_or_zero();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], a * g1[i] + b * g2[i], 1e-10);
  }
}

TEST(Property, ReplayIsBitIdentical) {
  CounterRng rng(6, Purpose::kTest);
  const Tensor w0 = test::random_tensor(rng, {6, 5});
  const Tensor x = test::random_tensor(rng, {4, 6});
  auto run = [&] {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    Tensor w = w0.clone(true);
    const Tensor loss = ad::mean(ad::gelu(ad::matmul(x, w)));
    const double v = loss.item();
    ad::backward(loss);
    return std::make_pair(v, w.grad_or_zero());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TensorInvariants, ExtentsAndGradShape) {
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({0, 2}), ShapeError);
  ad::Tape tape;
  ad::TapeScope scope(tape);
  Tensor x = Tensor::zeros({2, 3}, true);
  ad::backward(ad::sum(x));
  EXPECT_EQ(x.grad().size(), x.numel());
}

}  // namespace
}  // namespace propfly
