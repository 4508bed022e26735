#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <cmath>
#include <limits>

#include "ssem/error.hpp"
#include "ssem/kernels.hpp"
#include "ssem/network.hpp"
#include "support.hpp"

using namespace ssem;

namespace {

// Textbook convolution: build the zero-padded input explicitly, then slide.
struct Padded {
  std::size_t out, lo;
};

Padded pad_axis(std::size_t in, std::size_t k, std::size_t s, Padding p) {
  if (p == Padding::valid) return {(in - k) / s + 1, 0};
  const std::size_t out = (in + s - 1) / s;
  const std::size_t need = (out - 1) * s + k;
  const std::size_t total = need > in ? need - in : 0;
  return {out, total / 2};
}

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, Extent3 s, Padding p) {
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t KD = w.dim(0), KH = w.dim(1), KW = w.dim(2), O = w.dim(4);
  const auto pd = pad_axis(D, KD, s.d, p), ph = pad_axis(H, KH, s.h, p), pw = pad_axis(W, KW, s.w, p);
  Tensor y({pd.out, ph.out, pw.out, O});
  auto at = [&](long z, long r, long c, std::size_t ch) {
    if (z < 0 || r < 0 || c < 0 || z >= static_cast<long>(D) || r >= static_cast<long>(H) || c >= static_cast<long>(W))
      return 0.0;
    return x[((static_cast<std::size_t>(z) * H + static_cast<std::size_t>(r)) * W + static_cast<std::size_t>(c)) * C + ch];
  };
  for (std::size_t od = 0; od < pd.out; ++od)
    for (std::size_t oh = 0; oh < ph.out; ++oh)
      for (std::size_t ow = 0; ow < pw.out; ++ow)
        for (std::size_t o = 0; o < O; ++o) {
          double acc = b[o];
          for (std::size_t a = 0; a < KD; ++a)
            for (std::size_t bb = 0; bb < KH; ++bb)
              for (std::size_t c = 0; c < KW; ++c)
                for (std::size_t ch = 0; ch < C; ++ch) {
                  const long z = static_cast<long>(od * s.d + a) - static_cast<long>(pd.lo);
                  const long r = static_cast<long>(oh * s.h + bb) - static_cast<long>(ph.lo);
                  const long q = static_cast<long>(ow * s.w + c) - static_cast<long>(pw.lo);
                  acc += at(z, r, q, ch) * w[(((a * KH + bb) * KW + c) * C + ch) * O + o];
                }
          y[((od * ph.out + oh) * pw.out + ow) * O + o] = acc;
        }
  return y;
}

struct ConvCase {
  Shape in;
  Extent3 k, s;
  std::size_t co;
  Padding p;
};

std::vector<ConvCase> conv_cases() {
  return {
      {{5, 6, 7, 2}, {3, 3, 3}, {1, 1, 1}, 3, Padding::same},
      {{5, 6, 7, 2}, {3, 3, 3}, {1, 1, 1}, 9, Padding::valid},
      {{7, 8, 9, 1}, {5, 5, 3}, {2, 2, 2}, 5, Padding::same},
      {{7, 8, 9, 3}, {3, 2, 4}, {2, 3, 1}, 4, Padding::valid},
      {{4, 4, 4, 4}, {1, 1, 1}, {1, 1, 1}, 13, Padding::same},
      {{3, 9, 4, 2}, {2, 4, 3}, {3, 2, 2}, 8, Padding::same},
  };
}

}  // namespace

TEST_CASE("tensor element count matches its shape") {
  Tensor t({2, 3, 4}, 1.5);
  CHECK(t.size() == 24);
  CHECK(shape_product(t.shape()) == t.size());
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
  const Tensor r = t.reshaped({4, 6});
  CHECK(r.dim(0) == 4);
  const std::vector<Tensor> parts{Tensor({2}, 1.0), Tensor({2}, 2.0)};
  const Tensor batch = Tensor::stack(parts);
  CHECK(batch.shape() == Shape{2, 2});
  CHECK(batch.slice(1) == parts[1]);
  Tensor bad({2}, 0.0);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(bad.all_finite());
}

TEST_CASE("shape law for same and valid padding") {
  for (std::size_t in = 1; in <= 17; ++in)
    for (std::size_t k = 1; k <= 5; ++k)
      for (std::size_t s = 1; s <= 3; ++s) {
        CHECK(plan_axis(in, k, s, Padding::same).out == (in + s - 1) / s);
        if (k <= in) CHECK(plan_axis(in, k, s, Padding::valid).out == (in - k) / s + 1);
        else CHECK_THROWS_AS(plan_axis(in, k, s, Padding::valid), DimensionError);
      }
}

TEST_CASE("conv3d forward examples") {
  SUBCASE("paper-sized first layer keeps its extents") {
    const Tensor x = test::random_tensor({20, 50, 50, 1}, 1);
    const Tensor w = test::random_tensor({3, 3, 3, 1, 32}, 2);
    const Tensor y = kernels::conv3d_forward(x, w, Tensor({32}), {1, 1, 1}, Padding::same);
    CHECK(y.shape() == Shape{20, 50, 50, 32});
  }
  SUBCASE("zero input gives zero output") {
    const Tensor y = kernels::conv3d_forward(Tensor({6, 6, 6, 2}), test::random_tensor({3, 3, 3, 2, 4}, 3),
                                             Tensor({4}), {1, 1, 1}, Padding::same);
    for (double v : y.values()) CHECK(v == 0.0);
  }
  SUBCASE("ones under a ones filter sum to 27") {
    const Tensor y = kernels::conv3d_forward(Tensor({4, 4, 4, 1}, 1.0), Tensor({3, 3, 3, 1, 1}, 1.0), Tensor({1}),
                                             {1, 1, 1}, Padding::valid);
    CHECK(y.shape() == Shape{2, 2, 2, 1});
    for (double v : y.values()) CHECK(v == 27.0);
  }
  SUBCASE("shape errors") {
    CHECK_THROWS_AS(kernels::conv3d_forward(Tensor({4, 4, 4, 2}), Tensor({3, 3, 3, 1, 1}), Tensor({1}), {1, 1, 1},
                                            Padding::same),
                    DimensionError);
    CHECK_THROWS_AS(kernels::conv3d_forward(Tensor({4, 4, 4}), Tensor({3, 3, 3, 1, 1}), Tensor({1}), {1, 1, 1},
                                            Padding::same),
                    DimensionError);
    CHECK_THROWS_AS(kernels::conv3d_forward(Tensor({0, 4, 4, 1}), Tensor({3, 3, 3, 1, 1}), Tensor({1}), {1, 1, 1},
                                            Padding::same),
                    DimensionError);
  }
}

TEST_CASE("conv3d forward matches the explicit-padding oracle") {
  std::uint64_t seed = 10;
  for (const auto& c : conv_cases()) {
    const Tensor x = test::random_tensor(c.in, seed++);
    const Tensor w = test::random_tensor({c.k.d, c.k.h, c.k.w, c.in[3], c.co}, seed++);
    const Tensor b = test::random_tensor({c.co}, seed++);
    const Tensor want = naive_conv(x, w, b, c.s, c.p);
    const Tensor fast = kernels::conv3d_forward(x, w, b, c.s, c.p);
    const Tensor ref = reference::conv3d_forward(x, w, b, c.s, c.p);
    REQUIRE(fast.shape() == want.shape());
    REQUIRE(ref.shape() == want.shape());
    CHECK(test::max_abs_diff(fast, want) < 1e-12);
    CHECK(test::max_abs_diff(ref, want) < 1e-12);
  }
}

TEST_CASE("conv3d backward satisfies the adjoint identities") {
  // For a map linear in x (and in w), <dL/dx, dx> = <conv(dx, w, 0), g>.
  std::uint64_t seed = 100;
  for (const auto& c : conv_cases()) {
    const Shape ws{c.k.d, c.k.h, c.k.w, c.in[3], c.co};
    const Tensor x = test::random_tensor(c.in, seed++);
    const Tensor w = test::random_tensor(ws, seed++);
    const Tensor y = naive_conv(x, w, Tensor({c.co}), c.s, c.p);
    const Tensor g = test::random_tensor(y.shape(), seed++);
    const Tensor dx = test::random_tensor(c.in, seed++);
    const Tensor dw = test::random_tensor(ws, seed++);
    for (int impl = 0; impl < 2; ++impl) {
      const Conv3dGrads gr = impl == 0 ? kernels::conv3d_backward(x, w, g, c.s, c.p)
                                       : reference::conv3d_backward(x, w, g, c.s, c.p);
      const double lhs_x = test::dot(gr.input, dx);
      const double rhs_x = test::dot(naive_conv(dx, w, Tensor({c.co}), c.s, c.p), g);
      CHECK(std::abs(lhs_x - rhs_x) <= 1e-10 * std::max(1.0, std::abs(rhs_x)));
      const double lhs_w = test::dot(gr.weights, dw);
      const double rhs_w = test::dot(naive_conv(x, dw, Tensor({c.co}), c.s, c.p), g);
      CHECK(std::abs(lhs_w - rhs_w) <= 1e-10 * std::max(1.0, std::abs(rhs_w)));
      for (std::size_t o = 0; o < c.co; ++o) {
        double sum = 0.0;
        for (std::size_t i = o; i < g.size(); i += c.co) sum += g[i];
        CHECK(gr.bias[o] == doctest::Approx(sum).epsilon(1e-12));
      }
    }
    const Conv3dGrads no_input = kernels::conv3d_backward(x, w, g, c.s, c.p, false);
    CHECK(no_input.input.empty());
    CHECK(no_input.weights == kernels::conv3d_backward(x, w, g, c.s, c.p).weights);
  }
}

TEST_CASE("convolution is linear in its input") {
  const Tensor x = test::random_tensor({5, 7, 6, 2}, 7);
  const Tensor w = test::random_tensor({3, 3, 3, 2, 3}, 8);
  const Tensor zero({3});
  for (double a : {-3.5, 0.25, 2.0, 17.0}) {
    Tensor ax = x;
    for (double& v : ax.values()) v *= a;
    const Tensor lhs = kernels::conv3d_forward(ax, w, zero, {1, 1, 1}, Padding::same);
    const Tensor rhs = kernels::conv3d_forward(x, w, zero, {1, 1, 1}, Padding::same);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      CHECK(std::abs(lhs[i] - a * rhs[i]) <= 1e-12 * std::max(1.0, std::abs(a * rhs[i])));
    }
  }
}

TEST_CASE("parallel kernels are independent of the thread count") {
  const Tensor x = test::random_tensor({6, 9, 8, 3}, 21);
  const Tensor w = test::random_tensor({3, 3, 3, 3, 11}, 22);
  const Tensor b = test::random_tensor({11}, 23);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const Tensor y1 = kernels::conv3d_forward(x, w, b, {1, 1, 1}, Padding::same);
  const Conv3dGrads g1 = kernels::conv3d_backward(x, w, y1, {1, 1, 1}, Padding::same);
  omp_set_num_threads(4);
  const Tensor y4 = kernels::conv3d_forward(x, w, b, {1, 1, 1}, Padding::same);
  const Conv3dGrads g4 = kernels::conv3d_backward(x, w, y4, {1, 1, 1}, Padding::same);
  omp_set_num_threads(saved);
  CHECK(y1 == y4);
  CHECK(g1.input == g4.input);
  CHECK(g1.weights == g4.weights);
  CHECK(g1.bias == g4.bias);
}

TEST_CASE("maxpool3d forward examples") {
  SUBCASE("shape arithmetic") {
    const auto r = kernels::maxpool3d_forward(test::random_tensor({20, 50, 50, 32}, 5), {2, 2, 2}, {2, 2, 2},
                                              Padding::valid);
    CHECK(r.output.shape() == Shape{10, 25, 25, 32});
  }
  SUBCASE("constant input stays constant") {
    const auto r = kernels::maxpool3d_forward(Tensor({4, 6, 6, 2}, 3.25), {2, 2, 2}, {2, 2, 2}, Padding::valid);
    for (double v : r.output.values()) CHECK(v == 3.25);
  }
  SUBCASE("single peak is found") {
    Tensor x({1, 4, 4, 1});
    x[5] = 9.0;
    const auto r = kernels::maxpool3d_forward(x, {1, 4, 4}, {1, 4, 4}, Padding::valid);
    REQUIRE(r.output.size() == 1);
    CHECK(r.output[0] == 9.0);
    CHECK(r.argmax[0] == 5);
  }
  SUBCASE("ties go to the lowest flat index") {
    const auto r = kernels::maxpool3d_forward(Tensor({2, 2, 2, 1}, 1.0), {2, 2, 2}, {2, 2, 2}, Padding::valid);
    CHECK(r.argmax[0] == 0);
    const auto ref = reference::maxpool3d_forward(Tensor({2, 2, 2, 1}, 1.0), {2, 2, 2}, {2, 2, 2}, Padding::valid);
    CHECK(ref.argmax[0] == 0);
  }
  SUBCASE("oversized window under valid padding is rejected") {
    CHECK_THROWS_AS(kernels::maxpool3d_forward(Tensor({2, 2, 2, 1}), {3, 3, 3}, {1, 1, 1}, Padding::valid),
                    DimensionError);
  }
}

TEST_CASE("maxpool3d matches a brute-force window maximum") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Tensor x = test::random_tensor({7, 8, 9, 2}, 300 + seed);
    const Extent3 win{3, 3, 3}, st{2, 2, 2};
    const auto r = kernels::maxpool3d_forward(x, win, st, Padding::valid);
    const auto ref = reference::maxpool3d_forward(x, win, st, Padding::valid);
    CHECK(r.output == ref.output);
    CHECK(r.argmax == ref.argmax);
    const std::size_t OD = r.output.dim(0), OH = r.output.dim(1), OW = r.output.dim(2);
    for (std::size_t od = 0; od < OD; ++od)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow)
          for (std::size_t c = 0; c < 2; ++c) {
            double m = -1e300;
            for (std::size_t a = 0; a < 3; ++a)
              for (std::size_t b = 0; b < 3; ++b)
                for (std::size_t e = 0; e < 3; ++e)
                  m = std::max(m, x[(((od * 2 + a) * 8 + oh * 2 + b) * 9 + ow * 2 + e) * 2 + c]);
            CHECK(r.output[((od * OH + oh) * OW + ow) * 2 + c] == m);
          }
    const Tensor g = test::random_tensor(r.output.shape(), 400 + seed);
    const Tensor back = kernels::maxpool3d_backward(x.shape(), r.argmax, g);
    CHECK(back == reference::maxpool3d_backward(x.shape(), ref.argmax, g));
    double total = 0.0;
    for (double v : back.values()) total += v;
    double want = 0.0;
    for (double v : g.values()) want += v;
    CHECK(total == doctest::Approx(want).epsilon(1e-12));
  }
  // Same padding: padded positions never win even when every value is negative.
  const Tensor neg = test::random_tensor({3, 5, 5, 1}, 9, -2.0, -1.0);
  const auto r = kernels::maxpool3d_forward(neg, {2, 2, 2}, {2, 2, 2}, Padding::same);
  CHECK(r.output == reference::maxpool3d_forward(neg, {2, 2, 2}, {2, 2, 2}, Padding::same).output);
  for (double v : r.output.values()) CHECK(v < -1.0 + 1e-15);
}

TEST_CASE("dense forward examples") {
  SUBCASE("identity weights") {
    const Tensor x({3}, std::vector<double>{0.5, -2.0, 7.0});
    const Tensor eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(kernels::dense_forward(x, eye, Tensor({3})) == x);
  }
  SUBCASE("zero weights return the bias") {
    const Tensor b({2}, std::vector<double>{4.0, -1.0});
    CHECK(kernels::dense_forward(Tensor({3}, 1.0), Tensor({3, 2}), b) == b);
  }
  SUBCASE("hand arithmetic") {
    const Tensor y = kernels::dense_forward(Tensor({2}, std::vector<double>{1, 2}),
                                            Tensor({2, 2}, std::vector<double>{1, 0, 0, 1}), Tensor({2}, 1.0));
    CHECK(y[0] == 2.0);
    CHECK(y[1] == 3.0);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(kernels::dense_forward(Tensor({3}), Tensor({2, 2}), Tensor({2})), DimensionError);
  }
}

TEST_CASE("dense backward agrees with the reference and the adjoint") {
  const Tensor x = test::random_tensor({2, 3, 5}, 51);
  const Tensor w = test::random_tensor({30, 7}, 52);
  const Tensor g = test::random_tensor({7}, 53);
  const DenseGrads a = kernels::dense_backward(x, w, g);
  const DenseGrads r = reference::dense_backward(x, w, g);
  CHECK(a.input.shape() == x.shape());
  CHECK(test::max_abs_diff(a.input, r.input) < 1e-13);
  CHECK(test::max_abs_diff(a.weights, r.weights) < 1e-13);
  CHECK(a.bias == g);
  for (std::size_t i = 0; i < 30; ++i)
    for (std::size_t o = 0; o < 7; ++o) CHECK(a.weights[i * 7 + o] == doctest::Approx(x[i] * g[o]).epsilon(1e-14));
}

TEST_CASE("relu forward and backward") {
  const Tensor x({4}, std::vector<double>{-1.0, 0.0, 2.0, -0.5});
  const Tensor y = kernels::relu_forward(x);
  CHECK(y == Tensor({4}, std::vector<double>{0.0, 0.0, 2.0, 0.0}));
  const Tensor g = kernels::relu_backward(x, Tensor({4}, 1.0));
  CHECK(g == Tensor({4}, std::vector<double>{0.0, 0.0, 1.0, 0.0}));
}

TEST_CASE("softmax examples and properties") {
  const std::vector<double> zero{0.0, 0.0};
  CHECK(softmax(zero) == SoftLabel{0.5, 0.5});
  const std::vector<double> big{1000.0, 0.0};
  const SoftLabel s = softmax(big);
  CHECK(std::isfinite(s.p0));
  CHECK(s.p0 == doctest::Approx(1.0));
  CHECK(s.p1 < 1e-300);
  const std::vector<double> l3{std::log(3.0), 0.0};
  const SoftLabel t = softmax(l3);
  CHECK(std::abs(t.p0 - 0.75) < 1e-15);
  CHECK(std::abs(t.p1 - 0.25) < 1e-15);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> z{u(rng), u(rng)};
    const SoftLabel p = softmax(z);
    CHECK(std::abs(p.p0 + p.p1 - 1.0) <= 1e-12);
    CHECK(p.p0 >= 0.0);
    CHECK(p.p1 >= 0.0);
    const double c = u(rng) * 10.0;
    const std::vector<double> zc{z[0] + c, z[1] + c};
    const SoftLabel q = softmax(zc);
    CHECK(std::abs(q.p0 - p.p0) <= 1e-12);
    CHECK(std::abs(q.p1 - p.p1) <= 1e-12);
  }
}

TEST_CASE("cross-entropy examples") {
  CHECK(cross_entropy_loss({1.0, 0.0}, {1.0, 0.0}) == 0.0);
  CHECK(cross_entropy_loss({0.5, 0.5}, {1.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy_loss({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double clamped = cross_entropy_loss({1.0, 0.0}, {0.0, 1.0});
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(-std::log(1e-12)));
  CHECK(cross_entropy_loss({0.3, 0.7}, {0.2, 0.8}) >= 0.0);
}

TEST_CASE("backward pass examples") {
  SUBCASE("zero dense layer: bias gradient is mean(softmax(0) - target)") {
    const Network net({3}, {LayerSpec::dense(2), LayerSpec::softmax()});
    ModelParams p = net.initialize(1);
    for (auto& t : p.tensors)
      for (double& v : t.values()) v = 0.0;
    const auto xs = test::random_samples({3}, 4, 2);
    const auto ys = test::random_targets(4, 3);
    const auto r = backward_pass(net, p, xs, ys);
    double m0 = 0.0, m1 = 0.0;
    for (const auto& y : ys) {
      m0 += 0.5 - y.p0;
      m1 += 0.5 - y.p1;
    }
    CHECK(r.gradients.tensors[1][0] == doctest::Approx(m0 / 4).epsilon(1e-14));
    CHECK(r.gradients.tensors[1][1] == doctest::Approx(m1 / 4).epsilon(1e-14));
    CHECK(r.loss == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("duplicated sample keeps mean semantics") {
    const Network net({2, 4, 4, 1}, {LayerSpec::conv3d(2, {2, 3, 3}), LayerSpec::relu(), LayerSpec::dense(2),
                                     LayerSpec::softmax()});
    const ModelParams p = net.initialize(5);
    const std::vector<Tensor> one{test::random_tensor({2, 4, 4, 1}, 6)};
    const std::vector<Tensor> two{one[0], one[0]};
    const std::vector<SoftLabel> y1{{0.3, 0.7}}, y2{{0.3, 0.7}, {0.3, 0.7}};
    const auto a = backward_pass(net, p, one, y1);
    const auto b = backward_pass(net, p, two, y2);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-15));
    for (std::size_t t = 0; t < a.gradients.tensors.size(); ++t)
      CHECK(test::max_abs_diff(a.gradients.tensors[t], b.gradients.tensors[t]) < 1e-15);
  }
  SUBCASE("random 3-layer toy net agrees with central differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const Network net({3, 5, 4, 1}, {LayerSpec::conv3d(3, {2, 3, 3}), LayerSpec::relu(), LayerSpec::dense(5),
                                       LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
      const ModelParams p = net.initialize(seed);
      const auto xs = test::random_samples({3, 5, 4, 1}, 2, seed + 10);
      const auto ys = test::random_targets(2, seed + 20);
      CHECK(test::full_gradient_error(net, p, xs, ys, 1e-5) < 1e-4);
    }
  }
  SUBCASE("batch tensor overload equals the span overload") {
    const Network net({4}, {LayerSpec::dense(3), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
    const ModelParams p = net.initialize(2);
    const auto xs = test::random_samples({4}, 3, 7);
    const auto ys = test::random_targets(3, 8);
    const auto a = backward_pass(net, p, xs, ys);
    const auto b = backward_pass(net, p, Tensor::stack(xs), ys);
    CHECK(a.loss == b.loss);
    for (std::size_t t = 0; t < a.gradients.tensors.size(); ++t) CHECK(a.gradients.tensors[t] == b.gradients.tensors[t]);
  }
  SUBCASE("target count must match the batch") {
    const Network net({4}, {LayerSpec::dense(2), LayerSpec::softmax()});
    const auto xs = test::random_samples({4}, 3, 7);
    const auto ys = test::random_targets(2, 8);
    CHECK_THROWS_AS(backward_pass(net, net.initialize(0), xs, ys), DimensionError);
  }
  SUBCASE("NaN gradient names the layer") {
    const Network net({4}, {LayerSpec::dense(3), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
    ModelParams p = net.initialize(2);
    p.tensors[2][0] = std::numeric_limits<double>::quiet_NaN();
    const auto xs = test::random_samples({4}, 2, 7);
    const auto ys = test::random_targets(2, 8);
    try {
      backward_pass(net, p, xs, ys);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
  }
}

TEST_CASE("finite difference checker examples") {
  SUBCASE("linear model is exact") {
    const Network net({6}, {LayerSpec::dense(2), LayerSpec::softmax()});
    const ModelParams p = net.initialize(3);
    const auto xs = test::random_samples({6}, 4, 5);
    const auto ys = test::random_targets(4, 6);
    CHECK(finite_difference_check(net, p, xs, ys, 1e-5) < 1e-8);
    // Closed form: dL/dW[i][k] = mean_s x_s[i] (p_s[k] - y_s[k]).
    const auto r = backward_pass(net, p, xs, ys);
    for (std::size_t i = 0; i < 6; ++i)
      for (int k = 0; k < 2; ++k) {
        double want = 0.0;
        for (std::size_t s = 0; s < 4; ++s) want += xs[s][i] * (forward(net, p, xs[s])[k] - ys[s][k]);
        CHECK(r.gradients.tensors[0][i * 2 + static_cast<std::size_t>(k)] == doctest::Approx(want / 4).epsilon(1e-12));
      }
  }
  SUBCASE("toy 2-layer 3D CNN at 8x8x8") {
    const Network net({8, 8, 8, 1}, {LayerSpec::conv3d(3, {3, 3, 3}), LayerSpec::relu(),
                                     LayerSpec::maxpool3d({2, 2, 2}, {2, 2, 2}), LayerSpec::conv3d(4, {3, 3, 3}),
                                     LayerSpec::relu(), LayerSpec::maxpool3d({2, 2, 2}, {2, 2, 2}),
                                     LayerSpec::dense(2), LayerSpec::softmax()});
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const ModelParams p = net.initialize(seed);
      const auto xs = test::random_samples({8, 8, 8, 1}, 2, seed);
      const auto ys = test::random_targets(2, seed);
      CHECK(finite_difference_check(net, p, xs, ys, 1e-5) < 1e-4);
    }
  }
  SUBCASE("step 0 is a precondition error") {
    const Network net({2}, {LayerSpec::dense(2), LayerSpec::softmax()});
    const auto xs = test::random_samples({2}, 1, 5);
    const auto ys = test::random_targets(1, 6);
    CHECK_THROWS_AS(finite_difference_check(net, net.initialize(0), xs, ys, 0.0), PreconditionError);
  }
}

TEST_CASE("sgd step examples") {
  const Network net({1}, {LayerSpec::dense(2), LayerSpec::softmax()});
  ModelParams p = net.initialize(0);
  Gradients zero{{Tensor(p.tensors[0].shape()), Tensor(p.tensors[1].shape())}};
  CHECK(sgd_step(p, zero, 0.1) == p);
  p.tensors[0][0] = 1.0;
  Gradients g = zero;
  g.tensors[0][0] = 0.5;
  CHECK(sgd_step(p, g, 0.1).tensors[0][0] == doctest::Approx(0.95).epsilon(1e-15));
  const ModelParams twice = sgd_step(sgd_step(p, g, 0.1), g, 0.1);
  CHECK(twice.tensors[0][0] == doctest::Approx(1.0 - 2 * 0.1 * 0.5).epsilon(1e-15));
  CHECK_THROWS_AS(sgd_step(p, g, 0.0), PreconditionError);
  Gradients bad{{Tensor({3})}};
  CHECK_THROWS_AS(sgd_step(p, bad, 0.1), DimensionError);
  Gradients wrong_shape{{Tensor({2, 1}), Tensor({2})}};
  CHECK_THROWS_AS(sgd_step(p, wrong_shape, 0.1), DimensionError);
}

TEST_CASE("identical seeds give bit-identical results") {
  const Network net({4, 6, 6, 1}, {LayerSpec::conv3d(2, {3, 3, 3}), LayerSpec::relu(),
                                   LayerSpec::maxpool3d({2, 2, 2}, {2, 2, 2}), LayerSpec::dense(2),
                                   LayerSpec::softmax()});
  CHECK(net.initialize(9) == net.initialize(9));
  CHECK_FALSE(net.initialize(9) == net.initialize(10));
  const auto xs = test::random_samples({4, 6, 6, 1}, 3, 1);
  const auto ys = test::random_targets(3, 2);
  const auto a = backward_pass(net, net.initialize(9), xs, ys);
  const auto b = backward_pass(net, net.initialize(9), xs, ys);
  CHECK(a.loss == b.loss);
  for (std::size_t t = 0; t < a.gradients.tensors.size(); ++t) CHECK(a.gradients.tensors[t] == b.gradients.tensors[t]);
}

TEST_CASE("layer spec validation") {
  CHECK_THROWS(Network({4}, {LayerSpec::dense(2)}));
  CHECK_THROWS(Network({4}, {LayerSpec::dense(0), LayerSpec::dense(2), LayerSpec::softmax()}));
  CHECK_THROWS(Network({4, 4, 4, 1}, {LayerSpec::conv3d(2, {0, 3, 3}), LayerSpec::dense(2), LayerSpec::softmax()}));
  CHECK_THROWS(Network({4}, {LayerSpec::dense(3), LayerSpec::softmax()}));
  CHECK(LayerSpec::conv3d(32, {3, 3, 3}).canonical() == "conv3d filters=32 kernel=3x3x3 stride=1x1x1 padding=same");
}

TEST_CASE("kink-straddling entries are reported, not compared") {
  // A ReLU unit sitting exactly at its kink: the one-sided slopes differ.
  const Network net({1}, {LayerSpec::dense(1), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
  ModelParams p = net.initialize(1);
  p.tensors[0][0] = 1.0;
  p.tensors[1][0] = -0.5;
  p.tensors[2][0] = 1.0;
  p.tensors[2][1] = -1.0;
  const std::vector<Tensor> xs{Tensor({1}, 0.5)};
  const std::vector<SoftLabel> ys{{0.0, 1.0}};
  const auto r = finite_difference_report(net, p, xs, ys, 1e-5);
  CHECK(r.skipped > 0);
  CHECK(r.max_raw_error > 1e-2);
  CHECK(r.checked + r.skipped == 6);
  CHECK(r.max_relative_error < 1e-6);
}
