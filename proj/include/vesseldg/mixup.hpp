#pragma once

#include "vesseldg/pseudomod.hpp"
#include "vesseldg/rng.hpp"

#include <Eigen/Core>

#include <vector>

namespace vdg {

struct DirichletParams {
  Eigen::Vector3d alpha{1.0, 1.0, 1.0};
  void validate() const;
};

/// A point on the 2-simplex: lambda_i >= 0, sum = 1 within 1e-9.
struct MixupCoefficients {
  Eigen::Vector3d lambda{1.0, 0.0, 0.0};
  void validate() const;
};

inline constexpr double kSimplexTol = 1e-9;

/// Standard Dirichlet density Gamma(sum a)/prod Gamma(a_i) * prod l_i^(a_i-1).
/// Throws if lambda is off the simplex.
double dirichlet_pdf(const MixupCoefficients& lambda, const DirichletParams& alpha);

/// Exact sampling via normalized independent Gamma draws.
MixupCoefficients sample_lambda(const DirichletParams& alpha, Rng& rng);

/// Convex combination of a subject's {x0, x2, x3}; x1 is the meta-train
/// corner and never enters the mix. Anatomy (y) is carried unchanged.
struct MixupSample {
  Tensorf image;
  MixupCoefficients lambda;
  int subject_id = -1;
  int sample_index = 0;
};

MixupSample mix(const BankEntry& entry, const MixupCoefficients& lambda);

/// M independent samples per bank entry; sample_index runs 0..M-1 per subject.
std::vector<MixupSample> draw_meta_test_batch(const std::vector<const BankEntry*>& entries, int m,
                                              const DirichletParams& alpha, Rng& rng);

}  // namespace vdg
