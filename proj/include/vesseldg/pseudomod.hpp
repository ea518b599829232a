#pragma once

#include "vesseldg/phantom.hpp"
#include "vesseldg/segnet.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace vdg {

/// One subject's anatomy-consistent image set: the CLAHE-preprocessed source
/// plus the latent images of the three independently trained synthesis nets.
/// All grids share H x W, intensities in [0,1], one shared ground truth.
struct BankEntry {
  Tensorf x0, x1, x2, x3;
  VesselMap y;
  int subject_id = -1;

  const Tensorf& modality(int k) const;
  void validate() const;
};

using PseudoModalityBank = std::vector<BankEntry>;

/// Contrast-limited adaptive histogram equalization on a [0,1] grayscale
/// image. clip_limit is relative to the uniform bin height (2.0 default),
/// tile mappings are blended bilinearly.
Tensorf clahe(const Tensorf& gray, float clip_limit = 2.0f, int tiles = 8);

/// CLAHE of the intensity-reversed green channel (channel 1 of a 3-channel
/// input, the image itself if grayscale); output in [0,1].
Tensorf preprocess_d0(const Tensorf& image, float clip_limit = 2.0f, int tiles = 8);

struct SynthTrainConfig {
  int epochs = 12;
  int batch_size = 10;
  float lr = 1e-3f;
};

struct SynthTrainReport {
  std::vector<float> epoch_loss;  // mean L_seg per epoch
  float initial_loss = 0.0f;      // before any update
};

/// Trains one synthesis network on (raw rendering, vessel map) pairs with
/// L_seg = CE + Dice. Seeds control both init and batch shuffling; aborts
/// with a diagnostic on non-finite loss.
SynthesisNet<float> train_synthesis(const std::vector<Subject>& subjects, std::uint64_t seed,
                                    const SynthTrainConfig& cfg, SynthTrainReport* report = nullptr);

/// Runs the three trained nets over the dataset and assembles the bank.
/// x1..x3 are the latent images on each subject's raw source rendering,
/// min-max rescaled to [0,1]; x0 is the CLAHE preprocessing of the same image.
PseudoModalityBank build_bank(std::vector<SynthesisNet<float>>& nets, const std::vector<Subject>& subjects);

void save_bank(const PseudoModalityBank& bank, const std::filesystem::path& dir);
PseudoModalityBank load_bank(const std::filesystem::path& dir);

/// Anatomy-consistency probe: trains a fresh segmenter on x0 only and reports
/// the mean Dice of its predictions on x1..x3 of the same subjects.
double anatomy_consistency_probe(const PseudoModalityBank& bank, std::uint64_t seed, int epochs = 12);

}  // namespace vdg
