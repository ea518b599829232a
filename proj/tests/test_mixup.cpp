#include "vesseldg/mixup.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace vdg;

namespace {

BankEntry make_entry(int subject_id, int h, int w, std::uint64_t seed) {
  BankEntry e;
  e.subject_id = subject_id;
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto fill = [&](Tensorf& t) {
    t = Tensorf(1, h, w);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = u(rng);
  };
  fill(e.x0);
  fill(e.x1);
  fill(e.x2);
  fill(e.x3);
  e.y.subject_id = subject_id;
  e.y.pixels.resize(h, w);
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) e.y.pixels(yy, xx) = (yy < h / 2) ? 1 : 0;
  return e;
}

MixupCoefficients lam(double a, double b, double c) {
  MixupCoefficients l;
  l.lambda << a, b, c;
  return l;
}

}  // namespace

TEST_CASE("dirichlet pdf closed-form values") {
  DirichletParams uniform;  // alpha = [1,1,1]
  CHECK(dirichlet_pdf(lam(1.0 / 3, 1.0 / 3, 1.0 / 3), uniform) == doctest::Approx(2.0));
  CHECK(dirichlet_pdf(lam(0.7, 0.2, 0.1), uniform) == doctest::Approx(2.0));

  DirichletParams a211;
  a211.alpha << 2.0, 1.0, 1.0;
  // density = 6 * lambda_1
  CHECK(dirichlet_pdf(lam(1.0, 0.0, 0.0), a211) == doctest::Approx(6.0));
  CHECK(dirichlet_pdf(lam(0.0, 0.5, 0.5), a211) == doctest::Approx(0.0));
  CHECK(dirichlet_pdf(lam(0.5, 0.25, 0.25), a211) == doctest::Approx(3.0));
}

TEST_CASE("dirichlet pdf rejects off-simplex points") {
  DirichletParams alpha;
  CHECK_THROWS_AS(dirichlet_pdf(lam(0.5, 0.5, 0.1), alpha), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_pdf(lam(-0.1, 0.6, 0.5), alpha), std::invalid_argument);
}

TEST_CASE("sampler moments match the closed-form Dirichlet mean and variance") {
  const int n = 100000;
  DirichletParams uniform;
  Rng rng(7);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  std::vector<double> l1;
  l1.reserve(n);
  for (int i = 0; i < n; ++i) {
    auto l = sample_lambda(uniform, rng);
    CHECK(std::abs(l.lambda.sum() - 1.0) <= 1e-9);
    CHECK(l.lambda.minCoeff() >= 0.0);
    mean += l.lambda;
    l1.push_back(l.lambda[0]);
  }
  mean /= n;
  for (int i = 0; i < 3; ++i) CHECK(std::abs(mean[i] - 1.0 / 3) < 0.005);

  DirichletParams peaked;
  peaked.alpha << 5.0, 5.0, 5.0;
  Eigen::Vector3d m2 = Eigen::Vector3d::Zero(), m1 = Eigen::Vector3d::Zero();
  for (int i = 0; i < n; ++i) {
    auto l = sample_lambda(peaked, rng);
    m1 += l.lambda;
    m2 += l.lambda.cwiseProduct(l.lambda);
  }
  m1 /= n;
  m2 /= n;
  const double a0 = 15.0;
  const double expected_var = 5.0 * (a0 - 5.0) / (a0 * a0 * (a0 + 1.0));
  for (int i = 0; i < 3; ++i) {
    const double var = m2[i] - m1[i] * m1[i];
    CHECK(std::abs(var - expected_var) < 0.2 * expected_var);
  }

  // KS test of the first marginal against Beta(1,2): CDF is 1 - (1-x)^2
  std::sort(l1.begin(), l1.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = 1.0 - (1.0 - l1[i]) * (1.0 - l1[i]);
    d = std::max(d, std::max(std::abs((i + 1.0) / n - cdf), std::abs(cdf - double(i) / n)));
  }
  const double crit_001 = 1.63 / std::sqrt(double(n));
  CHECK(d < crit_001);
}

TEST_CASE("sampler is deterministic under a fixed seed") {
  DirichletParams alpha;
  Rng r1(99), r2(99);
  for (int i = 0; i < 100; ++i)
    CHECK(sample_lambda(alpha, r1).lambda == sample_lambda(alpha, r2).lambda);
}

TEST_CASE("mix hits simplex vertices exactly") {
  auto e = make_entry(4, 8, 8, 1);
  CHECK((mix(e, lam(1, 0, 0)).image.data == e.x0.data).all());
  CHECK((mix(e, lam(0, 1, 0)).image.data == e.x2.data).all());
  CHECK((mix(e, lam(0, 0, 1)).image.data == e.x3.data).all());
}

TEST_CASE("mix at the centroid is the arithmetic mean") {
  auto e = make_entry(4, 8, 8, 2);
  auto s = mix(e, lam(1.0 / 3, 1.0 / 3, 1.0 / 3));
  for (Eigen::Index i = 0; i < s.image.data.size(); ++i)
    CHECK(s.image.data[i] ==
          doctest::Approx((e.x0.data[i] + e.x2.data[i] + e.x3.data[i]) / 3.0f).epsilon(1e-6));
}

TEST_CASE("mix is pixelwise convex and keeps the anatomy") {
  auto e = make_entry(7, 8, 8, 3);
  Rng rng(5);
  DirichletParams alpha;
  for (int rep = 0; rep < 1000; ++rep) {
    auto l = sample_lambda(alpha, rng);
    auto s = mix(e, l);
    CHECK(s.subject_id == 7);
    for (Eigen::Index i = 0; i < s.image.data.size(); ++i) {
      const float lo = std::min({e.x0.data[i], e.x2.data[i], e.x3.data[i]});
      const float hi = std::max({e.x0.data[i], e.x2.data[i], e.x3.data[i]});
      CHECK(s.image.data[i] >= lo - 1e-6f);
      CHECK(s.image.data[i] <= hi + 1e-6f);
    }
  }
}

TEST_CASE("meta test batch cardinality, determinism, shared ground truth") {
  std::vector<BankEntry> owned;
  for (int s = 0; s < 3; ++s) owned.push_back(make_entry(s, 8, 8, 10 + s));
  std::vector<const BankEntry*> entries;
  for (auto& e : owned) entries.push_back(&e);
  DirichletParams alpha;

  Rng r1(42);
  auto batch = draw_meta_test_batch(entries, 3, alpha, r1);
  REQUIRE(batch.size() == 9);
  for (int s = 0; s < 3; ++s)
    for (int m = 0; m < 3; ++m) {
      const auto& smp = batch[s * 3 + m];
      CHECK(smp.subject_id == s);
      CHECK(smp.sample_index == m);
    }

  Rng r2(42);
  auto batch2 = draw_meta_test_batch(entries, 3, alpha, r2);
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK((batch[i].image.data == batch2[i].image.data).all());
    CHECK(batch[i].lambda.lambda == batch2[i].lambda.lambda);
  }

  CHECK_THROWS_AS(draw_meta_test_batch({}, 3, alpha, r1), std::invalid_argument);
  CHECK_THROWS_AS(draw_meta_test_batch(entries, 0, alpha, r1), std::invalid_argument);
}

TEST_CASE("pdf and sampler agree on a coarse simplex histogram") {
  // bin lambda_1 into 10 strata; expected mass of [a,b] under alpha=[2,1,1]
  // is the Beta(2,2) CDF difference: F(x) = 3x^2 - 2x^3
  DirichletParams a211;
  a211.alpha << 2.0, 1.0, 1.0;
  Rng rng(77);
  const int n = 50000;
  std::vector<int> counts(10, 0);
  for (int i = 0; i < n; ++i) {
    auto l = sample_lambda(a211, rng);
    int b = std::min(9, static_cast<int>(l.lambda[0] * 10));
    ++counts[b];
  }
  auto beta_cdf = [](double x) { return 3 * x * x - 2 * x * x * x; };
  for (int b = 0; b < 10; ++b) {
    const double expected = beta_cdf((b + 1) / 10.0) - beta_cdf(b / 10.0);
    CHECK(std::abs(counts[b] / double(n) - expected) < 0.01);
  }
}
