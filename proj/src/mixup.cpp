#include "vesseldg/mixup.hpp"

#include <cmath>
#include <stdexcept>

namespace vdg {

void DirichletParams::validate() const {
  for (int i = 0; i < 3; ++i)
    if (!(alpha[i] > 0.0) || !std::isfinite(alpha[i]))
      throw std::invalid_argument("DirichletParams: alpha entries must be positive and finite");
}

void MixupCoefficients::validate() const {
  for (int i = 0; i < 3; ++i)
    if (!(lambda[i] >= 0.0)) throw std::invalid_argument("MixupCoefficients: negative coefficient");
  if (std::abs(lambda.sum() - 1.0) > kSimplexTol)
    throw std::invalid_argument("MixupCoefficients: coefficients do not sum to 1");
}

double dirichlet_pdf(const MixupCoefficients& lambda, const DirichletParams& alpha) {
  alpha.validate();
  lambda.validate();
  const double log_norm = std::lgamma(alpha.alpha.sum()) - std::lgamma(alpha.alpha[0]) -
                          std::lgamma(alpha.alpha[1]) - std::lgamma(alpha.alpha[2]);
  double density = std::exp(log_norm);
  for (int i = 0; i < 3; ++i) density *= std::pow(lambda.lambda[i], alpha.alpha[i] - 1.0);
  return density;
}

MixupCoefficients sample_lambda(const DirichletParams& alpha, Rng& rng) {
  alpha.validate();
  Eigen::Vector3d g;
  for (int i = 0; i < 3; ++i) {
    std::gamma_distribution<double> gamma(alpha.alpha[i], 1.0);
    g[i] = gamma(rng);
  }
  const double total = g.sum();
  MixupCoefficients out;
  if (total <= 0.0) {  // astronomically unlikely underflow; fall back to centroid
    out.lambda.setConstant(1.0 / 3.0);
    return out;
  }
  out.lambda[0] = g[0] / total;
  out.lambda[1] = g[1] / total;
  out.lambda[2] = std::max(0.0, 1.0 - out.lambda[0] - out.lambda[1]);
  return out;
}

MixupSample mix(const BankEntry& entry, const MixupCoefficients& lambda) {
  lambda.validate();
  if (!entry.x0.same_shape(entry.x2) || !entry.x0.same_shape(entry.x3))
    throw std::invalid_argument("mix: pseudo-modality shape mismatch");
  MixupSample s;
  s.lambda = lambda;
  s.subject_id = entry.subject_id;
  s.image = Tensorf(1, entry.x0.h, entry.x0.w);
  s.image.data = static_cast<float>(lambda.lambda[0]) * entry.x0.data +
                 static_cast<float>(lambda.lambda[1]) * entry.x2.data +
                 static_cast<float>(lambda.lambda[2]) * entry.x3.data;
  s.image.data = s.image.data.min(1.0f).max(0.0f);
  return s;
}

std::vector<MixupSample> draw_meta_test_batch(const std::vector<const BankEntry*>& entries, int m,
                                              const DirichletParams& alpha, Rng& rng) {
  if (entries.empty()) throw std::invalid_argument("draw_meta_test_batch: empty bank");
  if (m < 1) throw std::invalid_argument("draw_meta_test_batch: M must be >= 1");
  std::vector<MixupSample> out;
  out.reserve(entries.size() * m);
  for (const BankEntry* e : entries) {
    for (int i = 0; i < m; ++i) {
      MixupSample s = mix(*e, sample_lambda(alpha, rng));
      s.sample_index = i;
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace vdg
