#pragma once

#include "vesseldg/rng.hpp"
#include "vesseldg/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vdg {

/// Binary vessel anatomy of one synthetic subject.
struct VesselMap {
  Eigen::ArrayXX<unsigned char> pixels;  // H x W, values {0,1}
  int subject_id = -1;

  int h() const { return static_cast<int>(pixels.rows()); }
  int w() const { return static_cast<int>(pixels.cols()); }
  double density() const { return pixels.cast<double>().mean(); }
};

/// One grayscale rendering of a vessel map under a style family.
struct StyleRendering {
  Tensorf image;  // 1 x H x W, intensities in [0,1]
  std::string style_id;
  int subject_id = -1;
};

/// A parametric family of image styles. Ranges are closed intervals sampled
/// per rendering; [a,a] pins a parameter.
struct StyleFamily {
  std::string name;
  bool vessels_bright = true;  // contrast polarity
  float gamma_min = 1.0f, gamma_max = 1.0f;
  float noise_sigma_min = 0.0f, noise_sigma_max = 0.0f;
  float blur_sigma_min = 0.0f, blur_sigma_max = 0.0f;
  float gradient_amp_min = 0.0f, gradient_amp_max = 0.0f;  // background gradient
  float contrast_min = 1.0f, contrast_max = 1.0f;          // vessel level over background
  float occlusion_prob = 0.0f;                             // chance of lesion-like blobs
  bool preprocess_at_test = false;  // fundus-analog styles get the CLAHE pipeline at test time

  void validate() const;  // finite bounds, min <= max
};

struct BranchingParams {
  int n_trunks = 3;
  float trunk_width = 2.6f;       // pixels, at 128x128 scale
  float width_decay = 0.72f;      // child width = parent width * decay
  float branch_prob = 0.22f;      // per growth step
  float step_len = 5.0f;          // pixels per growth segment
  float angle_jitter = 0.35f;     // rad, per step
  int max_depth = 5;
  float min_width = 0.9f;
  double density_min = 0.03;
  double density_max = 0.20;
  int max_retries = 25;

  void validate(int h, int w) const;
};

/// Deterministic recursive-branching vessel tree. Anti-aliased strokes are
/// rasterized to a coverage canvas and thresholded at 0.5 to define the map.
/// Throws std::invalid_argument for H or W < 32 and std::runtime_error when the
/// density window cannot be met within max_retries.
VesselMap generate_vessel_map(std::uint64_t seed, int h, int w, const BranchingParams& params = {});

/// Renders a vessel map under a style family. Pure function of (map, family, seed).
/// Post: |mean(vessel px) - mean(background px)| >= margin.
StyleRendering render(const VesselMap& map, const StyleFamily& family, std::uint64_t seed,
                      float margin = 0.15f);

/// Shipped defaults. Sources are fundus-analog (dark vessels, mild
/// degradations); targets mirror the three shift types: occlusion blobs,
/// contrast/site shift, polarity/modality shift.
std::vector<StyleFamily> default_source_families();
std::vector<StyleFamily> default_target_families();
StyleFamily identity_family();

struct Subject {
  VesselMap map;
  std::vector<StyleRendering> renderings;  // train: one source style; test: one per target style
  std::string source_family;               // empty for test subjects
};

struct Dataset {
  int h = 0, w = 0;
  std::uint64_t seed = 0;
  std::vector<StyleFamily> source_families, target_families;
  std::vector<Subject> train, test;
};

/// Builds the train/test split: each subject belongs to exactly one side;
/// train subjects carry a single source-family rendering (round-robin
/// assignment), test subjects one rendering per target family.
/// Throws if the family sets overlap or the target set is empty.
Dataset build_split(int n_train, int n_test, const std::vector<StyleFamily>& source_families,
                    const std::vector<StyleFamily>& target_families, std::uint64_t seed, int h = 128,
                    int w = 128, const BranchingParams& params = {});

/// Persists renderings and ground truth as PGM files plus a versioned JSON
/// manifest (one record per subject).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Separable Gaussian blur, reflect boundary; sigma <= 0 is a no-op.
Tensorf gaussian_blur(const Tensorf& img, float sigma);

}  // namespace vdg
