#include "vesseldg/config.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <stdexcept>

namespace vdg {

namespace {
using json = nlohmann::json;

template <typename T>
void maybe_get(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

json app_config_json(const AppConfig& cfg) {
  json j;
  // runtime plumbing such as the output directory is deliberately omitted so
  // that stored configs (and the checkpoints embedding them) depend only on
  // the experiment parameters
  j["seed"] = cfg.seed;
  j["deterministic"] = cfg.deterministic;
  j["data"] = {{"n_train", cfg.data.n_train}, {"n_test", cfg.data.n_test}, {"h", cfg.data.h},
               {"w", cfg.data.w}};
  j["synthesis"] = {{"epochs", cfg.synthesis.epochs}, {"batch_size", cfg.synthesis.batch_size},
                    {"lr", cfg.synthesis.lr}};
  j["train"] = json::parse(episode_config_to_json(cfg.train));
  j["eval"] = {{"threshold", cfg.eval_threshold}};
  j["ablation"] = {{"n_seeds", cfg.ablation_seeds}};
  json alphas = json::array();
  for (const auto& a : cfg.mixup_dump.alphas) alphas.push_back({a[0], a[1], a[2]});
  j["mixup_dump"] = {{"alphas", alphas},
                     {"samples_per_alpha", cfg.mixup_dump.samples_per_alpha},
                     {"subject_index", cfg.mixup_dump.subject_index}};
  return j;
}

}  // namespace

std::string app_config_to_json(const AppConfig& cfg) { return app_config_json(cfg).dump(2); }

AppConfig load_app_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  json j = json::parse(in);
  AppConfig cfg;
  maybe_get(j, "seed", cfg.seed);
  if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
  maybe_get(j, "deterministic", cfg.deterministic);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    maybe_get(d, "n_train", cfg.data.n_train);
    maybe_get(d, "n_test", cfg.data.n_test);
    maybe_get(d, "h", cfg.data.h);
    maybe_get(d, "w", cfg.data.w);
  }
  if (j.contains("synthesis")) {
    const auto& s = j.at("synthesis");
    maybe_get(s, "epochs", cfg.synthesis.epochs);
    maybe_get(s, "batch_size", cfg.synthesis.batch_size);
    maybe_get(s, "lr", cfg.synthesis.lr);
  }
  if (j.contains("train")) cfg.train = episode_config_from_json(j.at("train").dump());
  if (j.contains("eval")) maybe_get(j.at("eval"), "threshold", cfg.eval_threshold);
  if (j.contains("ablation")) maybe_get(j.at("ablation"), "n_seeds", cfg.ablation_seeds);
  if (j.contains("mixup_dump")) {
    const auto& m = j.at("mixup_dump");
    if (m.contains("alphas")) {
      cfg.mixup_dump.alphas.clear();
      for (const auto& a : m.at("alphas"))
        cfg.mixup_dump.alphas.emplace_back(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    }
    maybe_get(m, "samples_per_alpha", cfg.mixup_dump.samples_per_alpha);
    maybe_get(m, "subject_index", cfg.mixup_dump.subject_index);
  }
  return cfg;
}

void write_run_manifest(const std::filesystem::path& out_dir, const std::string& command,
                        const AppConfig& cfg, const std::string& status) {
  std::filesystem::create_directories(out_dir);
  json j;
  j["command"] = command;
  j["tool_version"] = kToolVersion;
  j["seed"] = cfg.seed;
  j["status"] = status;
  j["config"] = app_config_json(cfg);
  const auto now = std::chrono::system_clock::now();
  j["timestamp_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count();
  std::ofstream out(out_dir / ("run_manifest_" + command + ".json"));
  if (!out) throw std::runtime_error("cannot write run manifest in " + out_dir.string());
  out << j.dump(2) << "\n";
}

}  // namespace vdg
