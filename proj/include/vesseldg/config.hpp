#pragma once

#include "vesseldg/meta_trainer.hpp"
#include "vesseldg/phantom.hpp"
#include "vesseldg/pseudomod.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vdg {

struct DataConfig {
  int n_train = 20;
  int n_test = 12;
  int h = 128;
  int w = 128;
};

struct MixupDumpConfig {
  std::vector<Eigen::Vector3d> alphas{{1.0, 1.0, 1.0}, {5.0, 5.0, 5.0}, {1.5, 5.0, 1.5}};
  int samples_per_alpha = 9;
  int subject_index = 0;
};

/// One structured config file drives every command; flags override fields.
struct AppConfig {
  std::uint64_t seed = 1234;
  std::filesystem::path out = "runs/default";
  bool deterministic = true;
  DataConfig data;
  SynthTrainConfig synthesis;
  EpisodeConfig train;
  float eval_threshold = 0.5f;
  int ablation_seeds = 3;
  MixupDumpConfig mixup_dump;
};

AppConfig load_app_config(const std::filesystem::path& path);
std::string app_config_to_json(const AppConfig& cfg);

/// Written before a command starts work; records everything needed to
/// reproduce its outputs.
void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const AppConfig& cfg, const std::string& status = "started");

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace vdg
