#pragma once

#include "vesseldg/phantom.hpp"
#include "vesseldg/segnet.hpp"
#include "vesseldg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdg {

struct LossWeights {
  double w_seg = 100.0;
  double w_sim = 100.0;
  double w_ncc = 1.0;

  void validate() const {
    if (!(std::isfinite(w_seg) && std::isfinite(w_sim) && std::isfinite(w_ncc)) || w_seg < 0 ||
        w_sim < 0 || w_ncc < 0)
      throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
  }
};

inline constexpr double kDiceSmooth = 1e-6;

/// Cross-entropy + soft Dice over 2-class logits. If dlogits is non-null the
/// analytic gradient is written there (same shape as logits).
template <typename S>
S seg_loss(const Tensor<S>& logits, const VesselMap& y, Tensor<S>* dlogits = nullptr) {
  if (logits.c != 2 || logits.h != y.h() || logits.w != y.w())
    throw std::invalid_argument("seg_loss: logits/label shape mismatch");
  if (!logits.data.allFinite()) throw std::invalid_argument("seg_loss: non-finite logits");

  const int n = logits.pixels();
  const S inv_n = S(1) / static_cast<S>(n);
  Eigen::Array<S, Eigen::Dynamic, 1> p1(n), yv(n);
  for (int i = 0; i < n; ++i) yv[i] = static_cast<S>(y.pixels(i / y.w(), i % y.w()));
  {
    auto l0 = logits.channel(0);
    auto l1 = logits.channel(1);
    p1 = (S(1) / (S(1) + (l0 - l1).exp()));
  }

  // cross-entropy, mean over pixels (computed via stable log-sigmoid)
  S ce = S(0);
  {
    auto l0 = logits.channel(0);
    auto l1 = logits.channel(1);
    Eigen::Array<S, Eigen::Dynamic, 1> d = l1 - l0;  // log(p1/p0)
    // log p1 = -log(1+exp(-d)); log p0 = -log(1+exp(d))
    Eigen::Array<S, Eigen::Dynamic, 1> logp1 = -(S(1) + (-d).exp()).log();
    Eigen::Array<S, Eigen::Dynamic, 1> logp0 = logp1 - d;
    ce = -((yv * logp1 + (S(1) - yv) * logp0).sum()) * inv_n;
  }

  const S eps = static_cast<S>(kDiceSmooth);
  const S num = S(2) * (p1 * yv).sum() + eps;
  const S den = p1.sum() + yv.sum() + eps;
  const S dice_loss = S(1) - num / den;

  if (dlogits) {
    *dlogits = Tensor<S>(2, logits.h, logits.w);
    Eigen::Array<S, Eigen::Dynamic, 1> dce_dl1 = (p1 - yv) * inv_n;
    Eigen::Array<S, Eigen::Dynamic, 1> ddice_dp1 = -(S(2) * yv * den - num) / (den * den);
    Eigen::Array<S, Eigen::Dynamic, 1> dl1 = dce_dl1 + ddice_dp1 * p1 * (S(1) - p1);
    dlogits->channel(1) = dl1;
    dlogits->channel(0) = -dl1;
  }
  return ce + dice_loss;
}

/// L1 pull of sample features toward the (fixed) anchor, with mean reduction
/// over coordinates and samples so the scale is independent of the feature
/// dimension and sample count. Optional per-sample gradients (sign of the
/// difference, scaled by the reduction); the anchor is treated as a constant.
template <typename S>
S sim_loss(const nn::VectorX<S>& anchor, const std::vector<nn::VectorX<S>>& samples,
           std::vector<nn::VectorX<S>>* grads = nullptr) {
  if (samples.empty()) return S(0);
  S total = S(0);
  if (grads) grads->clear();
  const S scale = S(1) / (static_cast<S>(samples.size()) * static_cast<S>(anchor.size()));
  for (const auto& z : samples) {
    if (z.size() != anchor.size()) throw std::invalid_argument("sim_loss: dimensionality mismatch");
    nn::VectorX<S> d = z - anchor;
    total += d.template lpNorm<1>() * scale;
    if (grads) grads->push_back((d.array().sign() * scale).matrix());
  }
  return total;
}

/// Pairwise cosine matrix C plus its ideal target C* (same-subject indicator).
template <typename S>
struct NccMatrix {
  nn::MatrixX<S> c;
  nn::MatrixX<S> c_star;
};

template <typename S>
NccMatrix<S> ncc_matrix(const FeatureBatch<S>& batch) {
  const int n = batch.size();
  if (n == 0) throw std::invalid_argument("ncc_matrix: empty batch");
  nn::VectorX<S> norms(n);
  for (int p = 0; p < n; ++p) {
    norms[p] = batch.vectors.row(p).norm();
    if (!(norms[p] > S(0)))
      throw std::invalid_argument("ncc_matrix: zero-norm feature vector at batch index " +
                                  std::to_string(p));
  }
  NccMatrix<S> m;
  m.c = batch.vectors * batch.vectors.transpose();
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) m.c(p, q) /= norms[p] * norms[q];
  m.c_star.resize(n, n);
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q)
      m.c_star(p, q) = batch.subject_ids[p] == batch.subject_ids[q] ? S(1) : S(0);
  return m;
}

/// Squared Frobenius distance to the ideal clustering matrix.
template <typename S>
S ncc_loss(const NccMatrix<S>& m) {
  return (m.c_star - m.c).squaredNorm();
}

/// d(ncc_loss)/dz for every feature row. Rows flagged as detached (anchors, in
/// the episodic trainer's use) still shape C but can be masked by the caller.
template <typename S>
nn::MatrixX<S> ncc_loss_grad(const FeatureBatch<S>& batch, const NccMatrix<S>& m) {
  const int n = batch.size();
  nn::VectorX<S> norms(n);
  for (int p = 0; p < n; ++p) norms[p] = batch.vectors.row(p).norm();
  nn::MatrixX<S> g = nn::MatrixX<S>::Zero(n, batch.vectors.cols());
  for (int p = 0; p < n; ++p) {
    for (int q = 0; q < n; ++q) {
      if (q == p) continue;  // diagonal of C is constant 1
      const S resid =S(-4) * (m.c_star(p, q) - m.c(p, q));  // both (p,q) and (q,p) terms
      g.row(p) += resid * (batch.vectors.row(q) / (norms[p] * norms[q]) -
                           m.c(p, q) * batch.vectors.row(p) / (norms[p] * norms[p]));
    }
  }
  return g;
}

/// Weighted meta-test objective.
template <typename S>
S meta_test_loss(S seg, S sim, S ncc, const LossWeights& w) {
  w.validate();
  if (!(std::isfinite(static_cast<double>(seg)) && std::isfinite(static_cast<double>(sim)) &&
        std::isfinite(static_cast<double>(ncc))))
    throw std::invalid_argument("meta_test_loss: non-finite component");
  return static_cast<S>(w.w_seg) * seg + static_cast<S>(w.w_sim) * sim + static_cast<S>(w.w_ncc) * ncc;
}

}  // namespace vdg
