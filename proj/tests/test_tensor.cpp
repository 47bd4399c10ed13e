// Built against the double-precision library.
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "docmt/model.hpp"
#include "docmt/rng.hpp"
#include "docmt/tensor.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace docmt;

static_assert(sizeof(Real) == 8, "tensor tests need the double build");

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_tensor(Shape shape, Rng& rng, bool grad = false) {
  std::vector<Real> v(shape_numel(shape));
  for (Real& x : v) x = rng.uniform(-1, 1);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Central differences of f() with respect to every entry of x.
std::vector<double> numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-6) {
  std::vector<double> g(x.numel());
  NoGradGuard guard;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Real saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f();
    x.data()[i] = saved - h;
    const double down = f();
    x.data()[i] = saved;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Matmul, IdentityAndSmallProducts) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(values(matmul(eye, b)), (std::vector<double>{3, 4, 5, 6}));
  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  EXPECT_EQ(values(matmul(row, col)), std::vector<double>{11});
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    const auto want = oracle::triple_loop(values(a), values(b), 3, 4, 2);
    const auto got = values(matmul(a, b));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Matmul, BatchedBroadcastsLeadingDims) {
  Rng rng(3);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  const auto got = values(matmul(a, b));
  ASSERT_EQ(got.size(), 2u * 3 * 5);
  const auto av = values(a);
  for (std::size_t batch = 0; batch < 2; ++batch) {
    std::vector<double> slice(av.begin() + batch * 12, av.begin() + (batch + 1) * 12);
    const auto want = oracle::triple_loop(slice, values(b), 3, 4, 5);
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[batch * 15 + i], want[i], 1e-12);
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_str({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_str({4, 2})), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformAndStable) {
  auto s = values(softmax(Tensor::from({3}, {0, 0, 0})));
  for (double v : s) EXPECT_NEAR(v, 1.0 / 3, 1e-15);
  auto big = values(softmax(Tensor::from({2}, {1000, 0})));
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
}

TEST(Softmax, MatchesExtendedPrecision) {
  const auto got = values(softmax(Tensor::from({3}, {1, 2, 3})));
  long double z = 0;
  for (int i = 1; i <= 3; ++i) z += std::exp(static_cast<long double>(i));
  for (int i = 1; i <= 3; ++i) {
    EXPECT_NEAR(got[static_cast<std::size_t>(i - 1)], static_cast<double>(std::exp(static_cast<long double>(i)) / z), 1e-10);
  }
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(11);
  Tensor x = random_tensor({5, 7}, rng);
  for (Real& v : x.data()) v *= 50;
  const auto s = values(softmax(x));
  for (int r = 0; r < 5; ++r) {
    EXPECT_NEAR(std::accumulate(s.begin() + r * 7, s.begin() + (r + 1) * 7, 0.0), 1.0, 1e-6);
  }
}

TEST(LayerNorm, Examples) {
  Tensor g = Tensor::full({3}, 1);
  Tensor b = Tensor::zeros({3});
  for (double v : values(layer_norm(Tensor::from({3}, {5, 5, 5}), g, b))) EXPECT_NEAR(v, 0, 1e-12);
  Tensor g2 = Tensor::full({2}, 1);
  Tensor b2 = Tensor::zeros({2});
  const auto two = values(layer_norm(Tensor::from({2}, {1, 3}), g2, b2, 1e-12));
  EXPECT_NEAR(two[0], -1, 1e-9);
  EXPECT_NEAR(two[1], 1, 1e-9);
}

TEST(LayerNorm, StandardizesRandomRow) {
  Rng rng(5);
  Tensor x = random_tensor({1, 32}, rng);
  const auto y = values(layer_norm(x, Tensor::full({32}, 1), Tensor::zeros({32})));
  double mean = 0, var = 0;
  for (double v : y) mean += v / 32;
  for (double v : y) var += (v - mean) * (v - mean) / 32;
  EXPECT_NEAR(mean, 0, 1e-5);
  EXPECT_NEAR(var, 1, 1e-5);
}

TEST(CrossEntropy, Examples) {
  Tensor sharp = Tensor::from({1, 3}, {100, 0, 0});
  const std::vector<int> gold{0};
  EXPECT_NEAR(cross_entropy_ls(sharp, gold, 0).item(), 0, 1e-12);
  Tensor flat = Tensor::zeros({1, 4});
  EXPECT_NEAR(cross_entropy_ls(flat, gold, 0).item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, SmoothedMatchesDirectSum) {
  const std::vector<double> logits{0.3, -1.2, 2.0, 0.0, 0.7};
  const std::vector<int> gold{2};
  const double eps = 0.1;
  double z = 0;
  for (double l : logits) z += std::exp(l);
  double want = 0;
  for (std::size_t v = 0; v < 5; ++v) {
    const double q = v == 2 ? 1 - eps : eps / 4;
    want -= q * (logits[v] - std::log(z));
  }
  Tensor t = Tensor::from({1, 5}, {logits.begin(), logits.end()});
  EXPECT_NEAR(cross_entropy_ls(t, gold, eps).item(), want, 1e-10);
}

TEST(CrossEntropy, IgnoredRowsAreExcluded) {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 9, 9, -9});
  const std::vector<int> both{2, -1};
  const std::vector<int> one{2};
  Tensor first = Tensor::from({1, 3}, {1, 2, 3});
  EXPECT_NEAR(cross_entropy_ls(t, both, 0, -1).item(), cross_entropy_ls(first, one, 0).item(), 1e-12);
}

TEST(Backward, SumAndHalfSquaredNorm) {
  Rng rng(2);
  Tensor theta = random_tensor({3, 4}, rng, true);
  backward(sum(theta));
  for (double g : std::vector<double>(theta.grad().begin(), theta.grad().end())) EXPECT_EQ(g, 1.0);
  theta.zero_grad();
  backward(scale(sum(mul(theta, theta)), 0.5));
  for (std::size_t i = 0; i < theta.numel(); ++i) EXPECT_NEAR(theta.grad()[i], theta.data()[i], 1e-15);
}

TEST(Backward, SecondCallOnConsumedGraphThrows) {
  Tensor theta = Tensor::from({2}, {1, 2}, true);
  Tensor loss = sum(mul(theta, theta));
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
}

TEST(Backward, SharedNodeAccumulates) {
  // y = x * x used twice: d/dx sum(y + y) = 4x. A node reached along two
  // paths must be processed once, after both contributions arrive.
  Tensor x = Tensor::from({3}, {1, -2, 0.5}, true);
  Tensor y = mul(x, x);
  backward(sum(add(y, y)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 4 * x.data()[i], 1e-14);
}

TEST(Backward, OpCompositionMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor a = random_tensor({2, 3, 4}, rng, true);
  Tensor w = random_tensor({4, 5}, rng, true);
  Tensor gain = random_tensor({5}, rng, true);
  Tensor bias = random_tensor({5}, rng, true);
  const std::vector<int> targets{0, 4, 2, -1, 1, 3};
  auto f = [&]() {
    Tensor h = relu(matmul(a, w));
    Tensor n = layer_norm(h, gain, bias);
    Tensor t = transpose(n, 0, 1);
    Tensor s = sub(softmax(t), scale(log_softmax(t), 0.5));
    return cross_entropy_ls(reshape(s, {6, 5}), targets, 0.1, -1);
  };
  backward(f());
  for (Tensor* t : {&a, &w, &gain, &bias}) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    const auto numeric = numeric_grad(*t, [&] { return f().item(); });
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      EXPECT_LT(gradcheck::rel_error(analytic[i], numeric[i]), 1e-5) << i;
    }
  }
}

TEST(Backward, EmbeddingAndMeanMatchFiniteDifferences) {
  Rng rng(4);
  Tensor table = random_tensor({6, 3}, rng, true);
  const std::vector<int> ids{1, 4, 1, 0};
  auto f = [&]() { return mean(mul(embedding(table, ids, {2, 2}), embedding(table, ids, {2, 2}))); };
  backward(f());
  const std::vector<double> analytic(table.grad().begin(), table.grad().end());
  const auto numeric = numeric_grad(table, [&] { return f().item(); });
  for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_LT(gradcheck::rel_error(analytic[i], numeric[i]), 1e-6);
}

TEST(Dropout, IdentityCasesAndRate) {
  Rng rng(1);
  Tensor x = Tensor::full({1000000}, 1);
  EXPECT_EQ(values(dropout(x, 0, rng, true)), values(x));
  EXPECT_EQ(values(dropout(x, 0.5, rng, false)), values(x));
  const auto y = values(dropout(x, 0.5, rng, true));
  const double zeros = static_cast<double>(std::count(y.begin(), y.end(), 0.0)) / 1e6;
  EXPECT_NEAR(zeros, 0.5, 0.002);
  for (double v : y) ASSERT_TRUE(v == 0.0 || v == 2.0);
}

TEST(Dropout, DeterministicPerSeed) {
  Tensor x = Tensor::full({100}, 1);
  Rng r1(42), r2(42);
  EXPECT_EQ(values(dropout(x, 0.3, r1, true)), values(dropout(x, 0.3, r2, true)));
}

TEST(Rng, SplitMix64ReferenceValues) {
  // First outputs of SplitMix64 seeded with 0, as published with the algorithm.
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06c45d188009454fULL);
}

TEST(GradCheck, TinyTransformerAllParameters) {
  ModelConfig c;
  c.num_layers = 2;
  c.model_width = 16;
  c.num_heads = 2;
  c.ffn_width = 32;
  c.src_vocab = 12;
  c.tgt_vocab = 10;
  c.dropout = 0.1;
  ModelParams params = init_model(c, 3);
  const std::vector<SentencePair> pairs{{{4, 5, 6}, {7, 8}}, {{9, 4}, {5, 6, 7, 9}}};
  const auto report = gradcheck::check_model(params, make_batch(pairs), 0.1);
  EXPECT_EQ(report.checked, params.parameter_count());
  EXPECT_LT(report.max_rel_error, 1e-4) << report.worst_param;
}
