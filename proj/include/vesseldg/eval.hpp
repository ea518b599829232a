#pragma once

#include "vesseldg/meta_trainer.hpp"
#include "vesseldg/phantom.hpp"
#include "vesseldg/segnet.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vdg {

struct MetricRecord {
  int subject_id = -1;
  std::string domain;  // style family name
  double dice = 0.0;
  float threshold = 0.5f;
};

/// Dice overlap 2|P&Y| / (|P|+|Y|); 1 when both masks are empty.
double dice(const Eigen::ArrayXX<unsigned char>& pred, const VesselMap& y);

/// Thresholded vessel probability for one image (softmax channel 1).
Eigen::ArrayXX<unsigned char> predict_mask(nn::ResUNet<float>& net, const Tensorf& image,
                                           float threshold = 0.5f);

/// One record per (test subject, target family). Fundus-analog families are
/// routed through the CLAHE preprocessing; the rest are fed raw.
std::vector<MetricRecord> evaluate(nn::ResUNet<float>& net, const Dataset& ds, float threshold = 0.5f);

void write_metrics_csv(const std::vector<MetricRecord>& records, const std::filesystem::path& path);

double mean_dice(const std::vector<MetricRecord>& records);
double mean_dice(const std::vector<MetricRecord>& records, const std::string& domain);

struct AblationFlags {
  bool episodic = false;
  bool l_sim = false;
  bool l_ncc = false;

  void validate() const;  // L_sim requires episodic training
};

struct AblationCell {
  AblationFlags flags;
  std::vector<std::pair<std::string, double>> per_domain_dice;  // mean over seeds
  double overall = 0.0;
};

/// Trains and evaluates the six flag combinations of the component ablation,
/// each over the same seed family, and returns one row per combination.
std::vector<AblationCell> run_ablation(const PseudoModalityBank& bank, const Dataset& ds,
                                       const EpisodeConfig& base_cfg, int n_seeds = 3);

std::string format_ablation_table(const std::vector<AblationCell>& table);

/// Upper-bound analog: a fresh segmenter trained directly on renderings of
/// one target family (train subjects re-rendered in that family).
double oracle_dice(const Dataset& ds, const StyleFamily& family, const EpisodeConfig& cfg);

}  // namespace vdg
