#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lmvc/gradcheck.hpp"
#include "lmvc/masks.hpp"
#include "lmvc/optim.hpp"
#include "lmvc/tensor.hpp"

using namespace lmvc;

namespace {

// Independent triple-loop product used as the matmul oracle.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m,
                                 int k, int n) {
  std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int p = 0; p < k; ++p)
        c[static_cast<size_t>(i) * n + j] +=
            a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
  return c;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
  Tensor t = Tensor::zeros({3, 4});
  CHECK(t.numel() == 12);
  CHECK(t.rows() == 3);
  CHECK(t.cols() == 4);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  Tensor g = Tensor::zeros({2, 2}, true);
  g.zero_grad();
  CHECK(g.grad().size() == g.numel());
}

TEST_CASE("matmul identity and row sum") {
  Tensor a = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.data() == std::vector<double>{3, 4, 5, 6});

  Tensor row = Tensor::from({1, 3}, {1, 2, 3});
  Tensor ones = Tensor::from({3, 1}, {1, 1, 1});
  CHECK(matmul(row, ones).value() == 6.0);
}

TEST_CASE("matmul matches naive oracle") {
  Rng rng = make_rng(7);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor a = Tensor::randn({4, 5}, 1.0, rng);
  Tensor b = Tensor::randn({5, 3}, 1.0, rng);
  Tensor c = matmul(a, b);
  auto oracle = naive_matmul(a.data(), b.data(), 4, 5, 3);
  for (size_t i = 0; i < oracle.size(); ++i) CHECK(c.data()[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  (void)d;
}

TEST_CASE("matmul dimension error") {
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("masked softmax rows") {
  SUBCASE("uniform") {
    Tensor x = Tensor::from({1, 3}, {0, 0, 0});
    AttnMask m = AttnMask::blocked(1, 3);
    for (int k = 0; k < 3; ++k) m.set(0, k, true);
    Tensor p = masked_softmax_rows(x, m);
    for (double v : p.data()) CHECK(v == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("single survivor gets exact one, blocked gets exact zero") {
    Tensor x = Tensor::from({2, 2}, {5, 5, 5, 5});
    AttnMask m = full_mask(2);
    m.set(0, 1, false);
    Tensor p = masked_softmax_rows(x, m);
    CHECK(p.at(0, 0) == 1.0);
    CHECK(p.at(0, 1) == 0.0);  // exact zero, not merely small
  }
  SUBCASE("two-way softmax by hand") {
    Tensor x = Tensor::from({3, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3});
    AttnMask m = full_mask(3);
    m.set(0, 2, false);
    Tensor p = masked_softmax_rows(x, m);
    const double e1 = std::exp(1.0), e2 = std::exp(2.0);
    CHECK(p.at(0, 0) == doctest::Approx(e1 / (e1 + e2)).epsilon(1e-14));
    CHECK(p.at(0, 1) == doctest::Approx(e2 / (e1 + e2)).epsilon(1e-14));
    CHECK(p.at(0, 2) == 0.0);
  }
  SUBCASE("rows sum to one within 1e-12") {
    Rng rng = make_rng(3);
    Tensor x = Tensor::randn({8, 8}, 3.0, rng);
    AttnMask m = causal_mask(8);
    Tensor p = masked_softmax_rows(x, m);
    for (int i = 0; i < 8; ++i) {
      double s = 0.0;
      for (int j = 0; j < 8; ++j) s += p.at(i, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  SUBCASE("fully masked row is an error") {
    AttnMask m = full_mask(2);
    m.set(1, 0, false);
    m.set(1, 1, false);
    CHECK_THROWS_AS(masked_softmax_rows(Tensor::zeros({2, 2}), m), NumericError);
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits give ln V") {
    Tensor logits = Tensor::zeros({2, 4});
    std::vector<int> targets{1, 3};
    Tensor l = cross_entropy(logits, targets, -1);
    CHECK(l.value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("all targets ignored: zero loss, zero gradient") {
    Rng rng = make_rng(1);
    Tensor logits = Tensor::randn({3, 4}, 1.0, rng, true);
    std::vector<int> targets{-1, -1, -1};
    Tensor l = cross_entropy(logits, targets, -1);
    CHECK(l.value() == 0.0);
    l.backward();
    for (double g : logits.grad()) CHECK(g == 0.0);
  }
  SUBCASE("random logits match per-row -log p oracle") {
    Rng rng = make_rng(11);
    Tensor logits = Tensor::randn({3, 5}, 2.0, rng);
    std::vector<int> targets{0, 4, 2};
    Tensor l = cross_entropy(logits, targets, -1);
    double want = 0.0;
    for (int i = 0; i < 3; ++i) {
      double mx = -1e300, s = 0.0;
      for (int j = 0; j < 5; ++j) mx = std::max(mx, logits.at(i, j));
      for (int j = 0; j < 5; ++j) s += std::exp(logits.at(i, j) - mx);
      want -= logits.at(i, targets[static_cast<size_t>(i)]) - mx - std::log(s);
    }
    CHECK(l.value() == doctest::Approx(want / 3.0).epsilon(1e-12));
  }
  SUBCASE("target outside vocabulary") {
    std::vector<int> bad{5};
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 5}), bad, -1), IndexError);
  }
  SUBCASE("ignored rows contribute no gradient") {
    Rng rng = make_rng(5);
    Tensor logits = Tensor::randn({2, 3}, 1.0, rng, true);
    std::vector<int> targets{1, -1};
    Tensor l = cross_entropy(logits, targets, -1);
    l.backward();
    for (int j = 0; j < 3; ++j) CHECK(logits.grad()[3 + j] == 0.0);
  }
}

TEST_CASE("gradient_check quadratic") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Rng rng = make_rng(0);
  double err = gradient_check([&] { return sum(mul(x, x)); }, {&x}, 1e-6, 10, rng);
  CHECK(err < 1e-8);
  // analytic gradient is [2, 4]
  x.zero_grad();
  Tensor l = sum(mul(x, x));
  l.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  CHECK(x.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("gradient_check cross entropy row") {
  Rng rng = make_rng(21);
  Tensor logits = Tensor::randn({1, 3}, 1.0, rng, true);
  std::vector<int> targets{2};
  double err = gradient_check([&] { return cross_entropy(logits, targets, -1); }, {&logits}, 1e-5,
                              3, rng);
  CHECK(err < 1e-6);
}

TEST_CASE("gradient_check composite ops stay under 1e-6") {
  Rng rng = make_rng(42);
  SUBCASE("matmul + add_rowwise + gelu") {
    Tensor x = Tensor::randn({3, 4}, 1.0, rng, true);
    Tensor w = Tensor::randn({4, 5}, 0.5, rng, true);
    Tensor b = Tensor::randn({5}, 0.5, rng, true);
    std::vector<int> t{1, 0, 4};
    auto f = [&] { return cross_entropy(gelu(linear(x, w, b)), t, -1); };
    CHECK(gradient_check(f, {&x, &w, &b}, 1e-5, 60, rng) < 1e-6);
  }
  SUBCASE("layer norm") {
    Tensor x = Tensor::randn({4, 6}, 1.5, rng, true);
    Tensor g = Tensor::randn({6}, 0.3, rng, true);
    Tensor b = Tensor::randn({6}, 0.3, rng, true);
    auto f = [&] { return sum(mul(layer_norm_rows(x, g, b), layer_norm_rows(x, g, b))); };
    CHECK(gradient_check(f, {&x, &g, &b}, 1e-5, 60, rng) < 1e-6);
  }
  SUBCASE("masked softmax") {
    Tensor x = Tensor::randn({5, 5}, 2.0, rng, true);
    AttnMask m = causal_mask(5);
    Tensor weights = Tensor::randn({5, 5}, 1.0, rng);
    auto f = [&] { return sum(mul(masked_softmax_rows(x, m), weights)); };
    CHECK(gradient_check(f, {&x}, 1e-6, 25, rng) < 1e-6);
  }
  SUBCASE("multi head attention") {
    Tensor q = Tensor::randn({6, 8}, 0.8, rng, true);
    Tensor k = Tensor::randn({6, 8}, 0.8, rng, true);
    Tensor v = Tensor::randn({6, 8}, 0.8, rng, true);
    AttnMask m = causal_mask(6);
    std::vector<int> t{1, 2, 3, 4, 5, 6};
    auto f = [&] { return cross_entropy(multi_head_attention(q, k, v, m, 2), t, -1); };
    CHECK(gradient_check(f, {&q, &k, &v}, 1e-5, 80, rng) < 1e-6);
  }
  SUBCASE("embedding sum") {
    Tensor table = Tensor::randn({7, 4}, 1.0, rng, true);
    std::vector<std::vector<int>> ids{{0, 3}, {1}, {2, 2, 6}};
    std::vector<int> t{0, 3, 1};
    auto f = [&] { return cross_entropy(embedding_sum_rows(table, ids), t, -1); };
    CHECK(gradient_check(f, {&table}, 1e-5, 28, rng) < 1e-6);
  }
  SUBCASE("slice and concat") {
    Tensor a = Tensor::randn({4, 3}, 1.0, rng, true);
    Tensor b = Tensor::randn({2, 3}, 1.0, rng, true);
    auto f = [&] {
      Tensor cat = concat_rows(slice_rows(a, 1, 3), b);
      return sum(mul(cat, cat));
    };
    CHECK(gradient_check(f, {&a, &b}, 1e-5, 18, rng) < 1e-6);
  }
}

TEST_CASE("dropout disabled under null rng, scales otherwise") {
  Tensor x = Tensor::full({4, 4}, 1.0);
  Tensor same = dropout(x, 0.5, nullptr);
  CHECK(same.data() == x.data());
  Rng rng = make_rng(9);
  Tensor dropped = dropout(x, 0.5, &rng);
  for (double v : dropped.data()) CHECK((v == 0.0 || v == doctest::Approx(2.0)));
}

TEST_CASE("adamw") {
  SUBCASE("zero gradients and zero decay leave params unchanged") {
    Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    p.zero_grad();
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    AdamW opt({&p}, cfg);
    opt.step();
    CHECK(p.data() == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("first step moves opposite the gradient sign") {
    Tensor p = Tensor::from({1}, {0.5}, true);
    p.zero_grad();
    p.grad()[0] = 3.0;
    AdamW opt({&p}, AdamWConfig{});
    opt.step();
    CHECK(p.data()[0] < 0.5);
    p.zero_grad();
    p.grad()[0] = -3.0;
    const double before = p.data()[0];
    opt.step();
    CHECK(p.data()[0] > before);
  }
  SUBCASE("three-step trajectory matches hand-unrolled equations") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.01;
    Tensor p = Tensor::from({1, 1}, {1.0}, true);
    AdamW opt({&p}, cfg);

    double x = 1.0, m = 0.0, v = 0.0;  // independent unroll of the same equations
    for (int step = 1; step <= 3; ++step) {
      const double g = 2.0 * p.data()[0];  // d/dx of x^2 at the optimizer's x
      p.zero_grad();
      p.grad()[0] = g;
      opt.step();

      const double gh = 2.0 * x;
      m = cfg.beta1 * m + (1 - cfg.beta1) * gh;
      v = cfg.beta2 * v + (1 - cfg.beta2) * gh * gh;
      const double mhat = m / (1 - std::pow(cfg.beta1, step));
      const double vhat = v / (1 - std::pow(cfg.beta2, step));
      x -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * x);
      CHECK(p.data()[0] == doctest::Approx(x).epsilon(1e-15));
    }
  }
  SUBCASE("non-finite gradient rejects the step") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    p.zero_grad();
    p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    AdamW opt({&p}, AdamWConfig{});
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(p.data()[0] == 1.0);
  }
  SUBCASE("epoch boundary multiplies the learning rate by the decay ratio") {
    Tensor p = Tensor::from({1}, {1.0}, true);
    AdamWConfig cfg;
    cfg.lr = 5e-4;
    AdamW opt({&p}, cfg);
    opt.on_epoch_end();
    CHECK(opt.lr() == doctest::Approx(5e-4 * 0.986).epsilon(1e-15));
  }
  SUBCASE("decoupled decay shrinks weights even with zero gradient") {
    Tensor p = Tensor::from({1, 1}, {2.0}, true);
    p.zero_grad();
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.5;
    AdamW opt({&p}, cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }
}
