#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ssem/classifier.hpp"
#include "ssem/cnn.hpp"
#include "ssem/error.hpp"
#include "ssem/gmm.hpp"
#include "support.hpp"

using namespace ssem;

namespace {

// Two-feature logistic regression by Newton/IRLS with an optional ridge term.
struct Logistic {
  double b = 0.0, w0 = 0.0, w1 = 0.0;
};

Logistic irls(const std::vector<std::array<double, 2>>& x, const std::vector<int>& y, double ridge) {
  Logistic m;
  for (int it = 0; it < 100; ++it) {
    double g[3] = {0, 0, 0};
    double h[3][3] = {{0}};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f[3] = {1.0, x[i][0], x[i][1]};
      const double p = 1.0 / (1.0 + std::exp(-(m.b + m.w0 * f[1] + m.w1 * f[2])));
      for (int a = 0; a < 3; ++a) {
        g[a] += (p - y[i]) * f[a];
        for (int c = 0; c < 3; ++c) h[a][c] += p * (1 - p) * f[a] * f[c];
      }
    }
    const double coef[3] = {m.b, m.w0, m.w1};
    for (int a = 0; a < 3; ++a) {
      g[a] += ridge * coef[a];
      h[a][a] += ridge;
    }
    // Solve h * step = g by Cramer's rule.
    auto det3 = [](double a[3][3]) {
      return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
             a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    };
    const double d = det3(h);
    double step[3];
    for (int col = 0; col < 3; ++col) {
      double t[3][3];
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) t[r][c] = c == col ? g[r] : h[r][c];
      step[col] = det3(t) / d;
    }
    m.b -= step[0];
    m.w0 -= step[1];
    m.w1 -= step[2];
    if (std::abs(step[0]) + std::abs(step[1]) + std::abs(step[2]) < 1e-14) break;
  }
  return m;
}

struct Toy2d {
  std::vector<std::array<double, 2>> x;
  std::vector<int> y;
  LabeledSet set;
};

Toy2d make_toy(std::size_t n, double separation, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  Toy2d t;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    const double c = y == 1 ? separation : -separation;
    const std::array<double, 2> p{c + g(rng), 0.5 * c + g(rng)};
    t.x.push_back(p);
    t.y.push_back(y);
    t.set.add(Tensor({2}, std::vector<double>{p[0], p[1]}), SoftLabel::one_hot(y));
  }
  return t;
}

// The two-logit softmax is logistic in the logit difference.
Logistic as_logistic(const CnnClassifier& c) {
  const auto& w = c.params().tensors[0];
  const auto& b = c.params().tensors[1];
  return {b[1] - b[0], w[1] - w[0], w[3] - w[2]};
}

GmmParams gmm1d(double w0, double m0, double m1, double v0, double v1) {
  GmmParams p;
  p.weights = {w0, 1.0 - w0};
  p.means = {std::vector<double>{m0}, std::vector<double>{m1}};
  p.variances = {std::vector<double>{v0}, std::vector<double>{v1}};
  return p;
}

std::vector<std::vector<double>> two_clusters(std::size_t n, double mu, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<std::vector<double>> data;
  for (std::size_t i = 0; i < n; ++i) data.push_back({(i % 2 ? mu : -mu) + g(rng)});
  return data;
}

std::string bytes_of(const Classifier& c) {
  std::ostringstream out;
  c.save(out);
  return out.str();
}

}  // namespace

TEST_CASE("cnn2 builder") {
  SUBCASE("paper widths at full scale") {
    const Network net = cnn2_network({20, 50, 50, 1});
    CHECK(conv_filter_counts(net) == std::vector<std::size_t>{32, 64});
    CHECK(dense_widths(net) == std::vector<std::size_t>{1024, 2});
    CHECK(net.output_shapes().front() == Shape{20, 50, 50, 32});
    CHECK(net.layers().back().kind == LayerKind::softmax);
  }
  SUBCASE("same seed gives identical parameters") {
    CHECK(build_cnn2({8, 8, 8, 1}, 4, 0.25).params() == build_cnn2({8, 8, 8, 1}, 4, 0.25).params());
  }
  SUBCASE("desk-scale input forwards to a valid label") {
    const CnnClassifier c = build_cnn2({8, 8, 8, 1}, 1, 0.125);
    CHECK(c.predict_one(test::random_tensor({8, 8, 8, 1}, 2, 0.0, 1.0)).valid());
  }
  SUBCASE("input too small for two pools") {
    CHECK_THROWS_AS(build_cnn2({3, 8, 8, 1}, 1), DimensionError);
    CHECK_THROWS_AS(build_cnn2({8, 8, 8, 1}, 1, 0.0), PreconditionError);
  }
}

TEST_CASE("alexnet3d builder") {
  SUBCASE("scale 1 widths") {
    const Network net = alexnet3d_network({20, 50, 50, 1}, 1.0);
    CHECK(conv_filter_counts(net) == std::vector<std::size_t>{96, 128, 256, 384, 256});
    CHECK(dense_widths(net) == std::vector<std::size_t>{4096, 1024, 2});
    const auto& first = net.layers().front();
    CHECK(first.stride == Extent3{2, 2, 2});
    CHECK(first.padding == Padding::same);
  }
  SUBCASE("scale 1/8 widths") {
    const Network net = alexnet3d_network({18, 18, 18, 1}, 0.125);
    CHECK(conv_filter_counts(net) == std::vector<std::size_t>{12, 16, 32, 48, 32});
    CHECK(dense_widths(net) == std::vector<std::size_t>{512, 128, 2});
  }
  SUBCASE("tiny input fails with the offending layer named") {
    try {
      alexnet3d_network({4, 4, 4, 1}, 0.125);
      FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
  }
}

TEST_CASE("both architectures pass gradient checks at desk scale") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Network cnn = cnn2_network({10, 16, 16, 1}, 0.125);
    const auto xs = test::random_samples({10, 16, 16, 1}, 2, seed);
    const auto ys = test::random_targets(2, seed);
    const auto rc = finite_difference_report(cnn, cnn.initialize(seed), xs, ys, 1e-5);
    CHECK(rc.max_relative_error < 1e-4);
    CHECK(rc.skipped * 10 <= rc.checked + rc.skipped);
    const Network alex = alexnet3d_network({18, 18, 18, 1}, 0.125);
    const auto xa = test::random_samples({18, 18, 18, 1}, 2, seed + 50);
    const auto ra = finite_difference_report(alex, alex.initialize(seed), xa, ys, 1e-5);
    CHECK(ra.max_relative_error < 1e-4);
    CHECK(ra.skipped * 10 <= ra.checked + ra.skipped);
  }
}

TEST_CASE("predict_proba contract") {
  SUBCASE("zeroed final layer gives one half") {
    CnnClassifier c = build_cnn2({8, 8, 8, 1}, 3, 0.125);
    ModelParams p = c.params();
    for (double& v : p.tensors[p.tensors.size() - 2].values()) v = 0.0;
    for (double& v : p.tensors.back().values()) v = 0.0;
    c.set_params(p);
    for (const auto& s : c.predict_proba(test::random_samples({8, 8, 8, 1}, 3, 4))) CHECK(s == SoftLabel{0.5, 0.5});
  }
  SUBCASE("repeated sample gives identical outputs") {
    const CnnClassifier c = build_cnn2({8, 8, 8, 1}, 3, 0.125);
    const Tensor x = test::random_tensor({8, 8, 8, 1}, 5);
    const std::vector<Tensor> two{x, x};
    const auto out = c.predict_proba(two);
    CHECK(out[0] == out[1]);
    CHECK(c.predict_proba(Tensor::stack(two)) == out);
  }
  SUBCASE("signature mismatch is an error") {
    const CnnClassifier c = build_cnn2({8, 8, 8, 1}, 3, 0.125);
    const std::vector<Tensor> bad{Tensor({8, 8, 9, 1})};
    CHECK_THROWS_AS(c.predict_proba(bad), DimensionError);
  }
  SUBCASE("symmetric gmm at the midpoint") {
    const GmmClassifier g(gmm1d(0.5, -1.0, 1.0, 1.0, 1.0));
    CHECK(g.predict_one(Tensor({1}, 0.0)) == SoftLabel{0.5, 0.5});
  }
  SUBCASE("outputs sum to one for every classifier kind") {
    std::vector<std::unique_ptr<Classifier>> kinds;
    kinds.push_back(build_cnn2({10, 16, 16, 1}, 7, 0.125).clone());
    kinds.push_back(build_alexnet3d({18, 18, 18, 1}, 0.125, 7).clone());
    kinds.push_back(GmmClassifier(gmm1d(0.3, -2.0, 3.0, 0.5, 2.0)).clone());
    for (const auto& c : kinds) {
      for (std::uint64_t s = 0; s < 20; ++s) {
        const SoftLabel p = c->predict_one(test::random_tensor(c->input_shape(), s, -5.0, 5.0));
        CHECK(std::abs(p.p0 + p.p1 - 1.0) <= 1e-12);
      }
    }
  }
}

TEST_CASE("logistic-equivalent net matches an IRLS oracle") {
  const Network net({2}, {LayerSpec::dense(2), LayerSpec::softmax()});
  SUBCASE("separable data reaches training accuracy 1") {
    const Toy2d t = make_toy(60, 2.0, 0.4, 1);
    const Logistic oracle = irls(t.x, t.y, 1e-3);
    std::size_t oracle_hits = 0;
    for (std::size_t i = 0; i < t.x.size(); ++i) {
      const double z = oracle.b + oracle.w0 * t.x[i][0] + oracle.w1 * t.x[i][1];
      oracle_hits += (z > 0) == (t.y[i] == 1);
    }
    REQUIRE(oracle_hits == t.x.size());
    const auto out = train_supervised(CnnClassifier(net, 1), t.set, {200, 8, 0.1, 2});
    CHECK(accuracy_on(*out.classifier, t.set) == 1.0);
    CHECK(out.loss_history.size() == 200);
  }
  SUBCASE("overlapping data converges to the maximum-likelihood coefficients") {
    const Toy2d t = make_toy(200, 0.7, 1.0, 3);
    const Logistic oracle = irls(t.x, t.y, 0.0);
    const auto out = train_supervised(CnnClassifier(net, 1), t.set, {4000, 200, 1.0, 0});
    const Logistic got = as_logistic(static_cast<const CnnClassifier&>(*out.classifier));
    CHECK(got.b == doctest::Approx(oracle.b).epsilon(1e-4));
    CHECK(got.w0 == doctest::Approx(oracle.w0).epsilon(1e-4));
    CHECK(got.w1 == doctest::Approx(oracle.w1).epsilon(1e-4));
  }
}

TEST_CASE("train_supervised contract") {
  const Network net({2}, {LayerSpec::dense(3), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()});
  const Toy2d t = make_toy(20, 1.0, 0.5, 5);
  SUBCASE("zero epochs are rejected") {
    CHECK_THROWS_AS(train_supervised(CnnClassifier(net, 1), t.set, {0, 4, 0.1, 0}), PreconditionError);
    CHECK_THROWS_AS(train_supervised(CnnClassifier(net, 1), LabeledSet{}, {1, 4, 0.1, 0}), PreconditionError);
  }
  SUBCASE("loss history is deterministic per seed") {
    const auto a = train_supervised(CnnClassifier(net, 1), t.set, {5, 4, 0.1, 9});
    const auto b = train_supervised(CnnClassifier(net, 1), t.set, {5, 4, 0.1, 9});
    CHECK(a.loss_history == b.loss_history);
    CHECK(bytes_of(*a.classifier) == bytes_of(*b.classifier));
  }
  SUBCASE("duplicated data under full-batch training") {
    LabeledSet twice = t.set;
    twice.append(t.set);
    const auto a = train_supervised(CnnClassifier(net, 1), t.set, {30, 20, 0.1, 0});
    const auto b = train_supervised(CnnClassifier(net, 1), twice, {30, 40, 0.1, 0});
    const auto& pa = static_cast<const CnnClassifier&>(*a.classifier).params();
    const auto& pb = static_cast<const CnnClassifier&>(*b.classifier).params();
    for (std::size_t k = 0; k < pa.tensors.size(); ++k) CHECK(test::max_abs_diff(pa.tensors[k], pb.tensors[k]) < 1e-12);
  }
  SUBCASE("divergent training aborts") {
    CHECK_THROWS_AS(train_supervised(CnnClassifier(net, 1), t.set, {50, 4, 1e300, 0}), Error);
  }
  SUBCASE("input classifier is left untouched") {
    const CnnClassifier start(net, 1);
    const std::string before = bytes_of(start);
    train_supervised(start, t.set, {3, 4, 0.1, 0});
    CHECK(bytes_of(start) == before);
  }
}

TEST_CASE("gmm closed-form fit") {
  SUBCASE("recovers well-separated means") {
    const auto data = two_clusters(200, 5.0, 0.5, 11);
    const auto r = gmm_fit_closed_form(data, gmm1d(0.5, -1.0, 1.0, 1.0, 1.0), 50);
    const auto& m = r.params.means;
    const double lo = std::min(m[0][0], m[1][0]), hi = std::max(m[0][0], m[1][0]);
    CHECK(std::abs(lo + 5.0) < 0.2);
    CHECK(std::abs(hi - 5.0) < 0.2);
  }
  SUBCASE("true parameters are a near fixed point") {
    const auto data = two_clusters(20000, 5.0, 0.5, 12);
    const GmmParams truth = gmm1d(0.5, -5.0, 5.0, 0.25, 0.25);
    const auto r = gmm_fit_closed_form(data, truth, 1);
    for (int k = 0; k < 2; ++k) {
      CHECK(std::abs(r.params.weights[k] - truth.weights[k]) < 1e-2);
      CHECK(std::abs(r.params.means[k][0] - truth.means[k][0]) < 1e-2);
      CHECK(std::abs(r.params.variances[k][0] - truth.variances[k][0]) < 1e-2);
    }
  }
  SUBCASE("log-likelihood never decreases") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto data = two_clusters(300, 1.0 + static_cast<double>(seed) * 0.3, 1.0, seed);
      const auto r = gmm_fit_closed_form(data, gmm1d(0.4, -0.3, 0.8, 2.0, 0.5), 40);
      REQUIRE(r.log_likelihood.size() == 40);
      for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
        CHECK(r.log_likelihood[i] >= r.log_likelihood[i - 1] - 1e-9);
    }
  }
  SUBCASE("collapsing component is clamped to the floor") {
    std::vector<std::vector<double>> data{{0.0}, {0.0}, {0.0}, {10.0}, {11.0}, {12.0}};
    const auto r = gmm_fit_closed_form(data, gmm1d(0.5, 0.0, 11.0, 1.0, 1.0), 20);
    CHECK(r.clamp_events > 0);
    CHECK(r.params.variances[0][0] >= kVarianceFloor);
    r.params.validate();
  }
  SUBCASE("degenerate inputs") {
    std::vector<std::vector<double>> same{{1.0}, {1.0}, {1.0}};
    CHECK_THROWS_AS(gmm_fit_closed_form(same, gmm1d(0.5, 0.0, 2.0, 1.0, 1.0), 5), PreconditionError);
    CHECK_THROWS_AS(GmmClassifier(gmm1d(0.5, 0.0, 2.0, 0.0, 1.0)), PreconditionError);
  }
}

TEST_CASE("gmm fit uses targets as responsibilities") {
  const auto data = two_clusters(50, 2.0, 1.0, 21);
  LabeledSet set;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double mass[2] = {0, 0}, sum[2] = {0, 0};
  for (const auto& x : data) {
    const double r = u(rng);
    set.add(Tensor({1}, x), {1.0 - r, r});
    mass[0] += 1.0 - r;
    mass[1] += r;
    sum[0] += (1.0 - r) * x[0];
    sum[1] += r * x[0];
  }
  GmmClassifier g(gmm1d(0.5, -1.0, 1.0, 1.0, 1.0));
  g.fit(set, {});
  for (int k = 0; k < 2; ++k) {
    const double mean = sum[k] / mass[k];
    double sq = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) sq += set.targets[i][k] * (data[i][0] - mean) * (data[i][0] - mean);
    CHECK(g.params().means[k][0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(g.params().variances[k][0] == doctest::Approx(sq / mass[k]).epsilon(1e-12));
    CHECK(g.params().weights[k] == doctest::Approx(mass[k] / (mass[0] + mass[1])).epsilon(1e-12));
  }
}

TEST_CASE("checkpoints") {
  const auto dir = test::scratch_dir("models");
  SUBCASE("cnn round trip is byte exact") {
    const CnnClassifier c = build_cnn2({8, 8, 8, 1}, 5, 0.125);
    const std::string path = (dir / "cnn.ckpt").string();
    save_checkpoint(c, path);
    const auto back = load_checkpoint(path, c);
    CHECK(back->fingerprint() == c.fingerprint());
    CHECK(bytes_of(*back) == bytes_of(c));
    CHECK(static_cast<const CnnClassifier&>(*back).params() == c.params());
    const std::string b = bytes_of(c);
    CHECK(b.substr(0, 8) == "SSEMCKPT");
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[8 + i])) << (8 * i);
    CHECK(b.size() == 12 + len + 8 * c.params().scalar_count());
    CHECK(b.substr(12, len).find(c.network().canonical_text().substr(0, 20)) != std::string::npos);
  }
  SUBCASE("alexnet and gmm round trip") {
    const CnnClassifier a = build_alexnet3d({18, 18, 18, 1}, 0.125, 2);
    std::istringstream ia(bytes_of(a));
    CHECK(bytes_of(*load_checkpoint(ia)) == bytes_of(a));
    const GmmClassifier g(gmm1d(0.3, -2.0, 3.0, 0.5, 2.0));
    std::istringstream ig(bytes_of(g));
    const auto gb = load_checkpoint(ig);
    CHECK(static_cast<const GmmClassifier&>(*gb).params() == g.params());
  }
  SUBCASE("architecture mismatch is rejected") {
    const std::string path = (dir / "other.ckpt").string();
    save_checkpoint(build_cnn2({8, 8, 8, 1}, 5, 0.125), path);
    try {
      load_checkpoint(path, build_cnn2({8, 8, 8, 1}, 5, 0.25));
      FAIL("expected a fingerprint mismatch");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::fingerprint_mismatch);
    }
  }
  SUBCASE("corruption is diagnosed") {
    std::string b = bytes_of(build_cnn2({8, 8, 8, 1}, 5, 0.125));
    std::string bad = b;
    bad[0] = 'X';
    std::istringstream i1(bad);
    try {
      load_checkpoint(i1);
      FAIL("expected bad magic");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::bad_magic);
    }
    std::istringstream i2(b.substr(0, b.size() - 5));
    try {
      load_checkpoint(i2);
      FAIL("expected truncation");
    } catch (const FormatError& e) {
      CHECK(e.kind() == FormatError::Kind::truncated);
    }
  }
}
