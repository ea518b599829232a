#include "vesseldg/losses.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <numeric>

using namespace vdg;
using vdg::testing::central_diff;
using vdg::testing::grad_close;
using Vec = nn::VectorX<double>;

namespace {

VesselMap checkerboard(int h, int w) {
  VesselMap y;
  y.pixels.resize(h, w);
  for (int yy = 0; yy < h; ++yy)
    for (int xx = 0; xx < w; ++xx) y.pixels(yy, xx) = (yy + xx) % 2;
  y.subject_id = 0;
  return y;
}

FeatureBatch<double> random_batch(int n_subjects, int per_subject, int dim, Rng& rng) {
  FeatureBatch<double> b;
  std::normal_distribution<double> dist(0.0, 1.0);
  for (int s = 0; s < n_subjects; ++s)
    for (int m = 0; m < per_subject; ++m) {
      Vec z(dim);
      for (int i = 0; i < dim; ++i) z[i] = dist(rng);
      b.add(z, s, m == 0);
    }
  return b;
}

}  // namespace

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK(w.w_seg == 100.0);
  CHECK(w.w_sim == 100.0);
  CHECK(w.w_ncc == 1.0);
  w.validate();
  w.w_sim = -1.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("seg loss is near zero for confident correct logits") {
  auto y = checkerboard(4, 4);
  Tensor<double> logits(2, 4, 4);
  for (int yy = 0; yy < 4; ++yy)
    for (int xx = 0; xx < 4; ++xx) {
      logits.at(1, yy, xx) = y.pixels(yy, xx) ? 10.0 : -10.0;
      logits.at(0, yy, xx) = -logits.at(1, yy, xx);
    }
  CHECK(seg_loss(logits, y) < 0.05);
}

TEST_CASE("uniform logits on a balanced label give a ln 2 cross-entropy term") {
  auto y = checkerboard(4, 4);  // 8 vessel, 8 background pixels
  Tensor<double> logits(2, 4, 4);
  logits.data.setZero();
  // p1 = 0.5 everywhere: CE = ln 2; Dice = 1 - (2*0.5*8+eps)/(8+8+eps) = 0.5
  const double expected_ce = std::log(2.0);
  const double expected_dice = 1.0 - (2.0 * 0.5 * 8 + kDiceSmooth) / (0.5 * 16 + 8 + kDiceSmooth);
  CHECK(seg_loss(logits, y) == doctest::Approx(expected_ce + expected_dice).epsilon(1e-6));
}

TEST_CASE("seg loss rejects bad input") {
  auto y = checkerboard(4, 4);
  Tensor<double> wrong(2, 4, 5);
  CHECK_THROWS_AS(seg_loss(wrong, y), std::invalid_argument);
  Tensor<double> nanlog(2, 4, 4);
  nanlog.data.setZero();
  nanlog.data[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(seg_loss(nanlog, y), std::invalid_argument);
}

TEST_CASE("seg loss gradient matches finite differences on a 4x4 case") {
  Rng rng(21);
  auto y = checkerboard(4, 4);
  std::normal_distribution<double> dist(0.0, 2.0);
  Tensor<double> logits(2, 4, 4);
  for (Eigen::Index i = 0; i < logits.data.size(); ++i) logits.data[i] = dist(rng);
  Tensor<double> dlogits;
  seg_loss(logits, y, &dlogits);
  auto loss = [&] { return seg_loss(logits, y); };
  for (Eigen::Index i = 0; i < logits.data.size(); ++i)
    CHECK(grad_close(dlogits.data[i], central_diff(&logits.data[i], loss), 1e-4));
}

TEST_CASE("sim loss hand cases") {
  Vec anchor = Vec::Zero(2);
  std::vector<Vec> samples{(Vec(2) << 1, 0).finished(), (Vec(2) << 0, -2).finished()};
  // mean reduction over 2 samples x 2 coordinates: (1 + 2) / 4
  CHECK(sim_loss(anchor, samples) == doctest::Approx(0.75));
  std::vector<Vec> coincident{anchor, anchor};
  CHECK(sim_loss(anchor, coincident) == doctest::Approx(0.0));
  // L1 homogeneity
  Vec a2 = 2.5 * anchor;
  std::vector<Vec> s2;
  for (auto& s : samples) s2.push_back(2.5 * s);
  CHECK(sim_loss(a2, s2) == doctest::Approx(2.5 * 0.75));
  std::vector<Vec> bad{Vec::Zero(3)};
  CHECK_THROWS_AS(sim_loss(anchor, bad), std::invalid_argument);
}

TEST_CASE("sim loss gradients are the scaled sign pattern") {
  Vec anchor = (Vec(3) << 1, 2, 3).finished();
  std::vector<Vec> samples{(Vec(3) << 2, 2, 0).finished()};
  std::vector<Vec> grads;
  sim_loss(anchor, samples, &grads);
  REQUIRE(grads.size() == 1);
  // sign of (sample - anchor) divided by samples x coordinates = 1 x 3
  CHECK(grads[0][0] == doctest::Approx(1.0 / 3.0));
  CHECK(grads[0][1] == doctest::Approx(0.0));
  CHECK(grads[0][2] == doctest::Approx(-1.0 / 3.0));
}

TEST_CASE("ncc matrix hand cases") {
  FeatureBatch<double> b;
  b.add((Vec(2) << 1, 0).finished(), 0, true);
  auto single = ncc_matrix(b);
  CHECK(single.c(0, 0) == doctest::Approx(1.0));
  CHECK(single.c_star(0, 0) == doctest::Approx(1.0));

  b.add((Vec(2) << -2, 0).finished(), 1, true);   // antipodal direction
  b.add((Vec(2) << 0, 3).finished(), 0, false);   // orthogonal to both
  auto m = ncc_matrix(b);
  CHECK(m.c(0, 1) == doctest::Approx(-1.0));
  CHECK(m.c(0, 2) == doctest::Approx(0.0));
  CHECK(m.c(1, 2) == doctest::Approx(0.0));
  // indicator target follows subject ids
  CHECK(m.c_star(0, 2) == doctest::Approx(1.0));
  CHECK(m.c_star(0, 1) == doctest::Approx(0.0));
  // symmetry, unit diagonal, range
  CHECK((m.c - m.c.transpose()).cwiseAbs().maxCoeff() < 1e-6);
  for (int p = 0; p < 3; ++p) CHECK(m.c(p, p) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(m.c.maxCoeff() <= 1.0 + 1e-9);
  CHECK(m.c.minCoeff() >= -1.0 - 1e-9);
}

TEST_CASE("ncc matrix reports the offending index for zero vectors") {
  FeatureBatch<double> b;
  b.add((Vec(2) << 1, 1).finished(), 0, true);
  b.add(Vec::Zero(2), 1, true);
  try {
    ncc_matrix(b);
    FAIL("expected throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("ncc loss hand value") {
  // C = I, C* = all-ones: two unit off-diagonal residuals
  NccMatrix<double> m;
  m.c = nn::MatrixX<double>::Identity(2, 2);
  m.c_star = nn::MatrixX<double>::Ones(2, 2);
  CHECK(ncc_loss(m) == doctest::Approx(2.0));
  m.c_star = m.c;
  CHECK(ncc_loss(m) == doctest::Approx(0.0));
}

TEST_CASE("ncc loss is scale invariant and permutation equivariant") {
  Rng rng(31);
  auto b = random_batch(3, 2, 5, rng);
  const double base = ncc_loss(ncc_matrix(b));
  FeatureBatch<double> scaled = b;
  scaled.vectors *= 7.3;
  CHECK(std::abs(ncc_loss(ncc_matrix(scaled)) - base) < 1e-9);

  FeatureBatch<double> perm;
  std::vector<int> order{5, 2, 0, 4, 1, 3};
  for (int p : order) perm.add(b.vectors.row(p).transpose(), b.subject_ids[p], b.anchor_flags[p]);
  CHECK(ncc_loss(ncc_matrix(perm)) == doctest::Approx(base));
}

TEST_CASE("ncc gradient matches finite differences over 50 seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    auto b = random_batch(2, 2, 3, rng);
    auto m = ncc_matrix(b);
    auto g = ncc_loss_grad(b, m);
    auto loss = [&] { return ncc_loss(ncc_matrix(b)); };
    for (int p = 0; p < b.size(); ++p)
      for (int i = 0; i < b.vectors.cols(); ++i)
        CHECK(grad_close(g(p, i), central_diff(&b.vectors(p, i), loss), 1e-4, 1e-7));
  }
}

TEST_CASE("pulling same-subject vectors together lowers the ncc loss") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    auto b = random_batch(2, 3, 4, rng);
    const double before = ncc_loss(ncc_matrix(b));
    // move every non-anchor vector 10% of the way toward its subject anchor
    FeatureBatch<double> moved = b;
    for (int p = 0; p < b.size(); ++p) {
      if (b.anchor_flags[p]) continue;
      for (int q = 0; q < b.size(); ++q)
        if (b.anchor_flags[q] && b.subject_ids[q] == b.subject_ids[p]) {
          moved.vectors.row(p) += 0.1 * (b.vectors.row(q) - b.vectors.row(p));
          break;
        }
    }
    CHECK(ncc_loss(ncc_matrix(moved)) < before);
  }
}

TEST_CASE("meta test loss is the documented weighted sum") {
  LossWeights w;
  CHECK(meta_test_loss(0.0, 0.0, 0.0, w) == doctest::Approx(0.0));
  CHECK(meta_test_loss(0.5, 0.01, 2.0, w) == doctest::Approx(53.0));
  LossWeights seg_only{1.0, 0.0, 0.0};
  CHECK(meta_test_loss(0.7, 123.0, 456.0, seg_only) == doctest::Approx(0.7));
  CHECK_THROWS_AS(meta_test_loss(std::numeric_limits<double>::infinity(), 0.0, 0.0, w),
                  std::invalid_argument);
}

TEST_CASE("all loss gradients pass randomized finite-difference checks, 50 seeds") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(1000 + seed);
    std::normal_distribution<double> dist(0.0, 1.5);
    // seg on a random 3x4 label
    VesselMap y;
    y.pixels.resize(3, 4);
    std::bernoulli_distribution coin(0.4);
    for (int yy = 0; yy < 3; ++yy)
      for (int xx = 0; xx < 4; ++xx) y.pixels(yy, xx) = coin(rng) ? 1 : 0;
    Tensor<double> logits(2, 3, 4);
    for (Eigen::Index i = 0; i < logits.data.size(); ++i) logits.data[i] = dist(rng);
    Tensor<double> dlogits;
    seg_loss(logits, y, &dlogits);
    auto sloss = [&] { return seg_loss(logits, y); };
    for (Eigen::Index i = 0; i < logits.data.size(); ++i)
      CHECK(grad_close(dlogits.data[i], central_diff(&logits.data[i], sloss), 1e-3, 1e-7));

    // ncc on a random batch
    auto b = random_batch(3, 2, 4, rng);
    auto g = ncc_loss_grad(b, ncc_matrix(b));
    auto nloss = [&] { return ncc_loss(ncc_matrix(b)); };
    for (int p = 0; p < b.size(); ++p)
      for (int i = 0; i < b.vectors.cols(); ++i)
        CHECK(grad_close(g(p, i), central_diff(&b.vectors(p, i), nloss), 1e-3, 1e-7));
  }
}
