#pragma once

#include "vesseldg/losses.hpp"
#include "vesseldg/mixup.hpp"
#include "vesseldg/pseudomod.hpp"
#include "vesseldg/segnet.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vdg {

/// All hyperparameters of one training run.
struct EpisodeConfig {
  int batch_size = 10;
  int epochs = 30;
  float eta_train = 1e-3f;
  float eta_test = 5e-3f;
  float lr_decay = 0.5f;
  int decay_every = 3;  // epochs
  LossWeights weights;
  DirichletParams alpha;
  int m_samples = 3;  // mixup samples per subject per episode
  std::uint64_t seed = 0;
  bool episodic = true;
  bool use_sim = true;  // requires episodic (needs the meta-train anchors)
  bool use_ncc = true;
  bool detach_anchor = true;  // anchor-gradient policy; only the detached form is implemented
  bool lookahead = false;     // reserved; sequential-and-kept updates are the implemented semantics

  void validate() const;
};

/// Learning rate after step decay: eta * decay^floor(epoch / every).
float scheduled_lr(float eta, int epoch, float decay = 0.5f, int every = 3);

struct EpochRecord {
  int epoch = 0;
  float lr_train = 0.0f, lr_test = 0.0f;
  float meta_train_seg = 0.0f;
  float meta_test_seg = 0.0f, meta_test_sim = 0.0f, meta_test_ncc = 0.0f, meta_test_total = 0.0f;
  double wall_seconds = 0.0;
};

struct EpisodeReport {
  std::vector<EpochRecord> epochs;
  std::filesystem::path final_checkpoint;
};

/// Mutable training-loop state: both optimizer states, the shuffling and
/// mixup RNG streams, and the global step counter. Serializable so a run can
/// resume from any epoch checkpoint bit-identically.
struct TrainerState {
  TrainerState(nn::ResUNet<float>& net, const EpisodeConfig& cfg);

  nn::Adam<float> opt_train, opt_test;
  Rng shuffle_rng, mix_rng;
  long step = 0;
  int epoch = 0;
};

struct EpisodeStats {
  float seg_train = 0.0f;
  float seg_test = 0.0f, sim = 0.0f, ncc = 0.0f, total = 0.0f;
  long step_meta_train = 0, step_meta_test = 0;  // stage-ordering evidence
};

/// Appends one row per loss evaluation to a CSV training log.
class CsvLogger {
 public:
  explicit CsvLogger(const std::filesystem::path& path);
  void log(long step, int epoch, const std::string& stage, float lr, float l_seg, float l_sim,
           float l_ncc, float l_test);

 private:
  std::ofstream out_;
};

/// One episode over one subject batch: a meta-train L_seg step on x1 at
/// lr_train (recording the per-subject anchors), then a meta-test L_test step
/// on M Dirichlet-mixup samples per subject through the updated parameters.
EpisodeStats run_episode(nn::ResUNet<float>& net, const std::vector<const BankEntry*>& batch,
                         TrainerState& state, const EpisodeConfig& cfg, float lr_train, float lr_test,
                         CsvLogger* logger = nullptr);

/// Full training run. Episodic when cfg.episodic; otherwise a single-stage
/// L_seg run on x0 (plus the NCC clustering term over mixup features when
/// cfg.use_ncc). When out_dir is non-empty, writes train_log.csv, a
/// checkpoint per epoch and a final one. Throws on non-finite losses.
EpisodeReport train(nn::ResUNet<float>& net, const PseudoModalityBank& bank, const EpisodeConfig& cfg,
                    const std::filesystem::path& out_dir = {});

/// Plain supervised training with L_seg only (the ablation grid's bare row).
EpisodeReport train_baseline(nn::ResUNet<float>& net, const PseudoModalityBank& bank,
                             const EpisodeConfig& cfg, const std::filesystem::path& out_dir = {});

/// Resumes a run from an epoch checkpoint written by train(); the remaining
/// epochs reproduce what an uninterrupted run would have logged.
EpisodeReport resume_train(nn::ResUNet<float>& net, const PseudoModalityBank& bank,
                           const EpisodeConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir = {});

std::string episode_config_to_json(const EpisodeConfig& cfg);
EpisodeConfig episode_config_from_json(const std::string& json_text);

}  // namespace vdg
