// Command-line entry point: dataset generation, pseudo-modality synthesis,
// episodic training, evaluation, the component ablation grid, and mixup
// sample dumps.

#include "vesseldg/checkpoint.hpp"
#include "vesseldg/config.hpp"
#include "vesseldg/eval.hpp"
#include "vesseldg/image_io.hpp"
#include "vesseldg/meta_trainer.hpp"
#include "vesseldg/mixup.hpp"
#include "vesseldg/pseudomod.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

namespace {

bool verbose() {
  const char* lvl = std::getenv("VESSELDG_LOG");
  return lvl == nullptr || std::string(lvl) != "quiet";
}

void info(const std::string& msg) {
  if (verbose()) std::cerr << "[vesseldg] " << msg << "\n";
}

int cmd_gen_data(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "gen-data", cfg);
  auto ds = vdg::build_split(cfg.data.n_train, cfg.data.n_test, vdg::default_source_families(),
                             vdg::default_target_families(), vdg::derive_seed(cfg.seed, "phantom"),
                             cfg.data.h, cfg.data.w);
  vdg::save_dataset(ds, cfg.out / "data");
  info("wrote " + std::to_string(ds.train.size()) + " train + " + std::to_string(ds.test.size()) +
       " test subjects to " + (cfg.out / "data").string());
  return 0;
}

int cmd_train_pseudo(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "train-pseudo", cfg);
  auto ds = vdg::load_dataset(cfg.out / "data");
  std::vector<vdg::SynthesisNet<float>> nets;
  for (int k = 1; k <= 3; ++k) {
    info("training synthesis net " + std::to_string(k));
    vdg::SynthTrainReport report;
    nets.push_back(vdg::train_synthesis(ds.train, vdg::derive_seed(cfg.seed, "synth" + std::to_string(k)),
                                        cfg.synthesis, &report));
    info("  L_seg " + std::to_string(report.initial_loss) + " -> " +
         std::to_string(report.epoch_loss.back()));
    vdg::save_checkpoint(cfg.out / ("synth" + std::to_string(k) + ".ckpt"), nets.back().params(),
                         app_config_to_json(cfg));
  }
  auto bank = vdg::build_bank(nets, ds.train);
  vdg::save_bank(bank, cfg.out / "bank");
  info("bank with " + std::to_string(bank.size()) + " subjects written");
  return 0;
}

int cmd_meta_train(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "meta-train", cfg);
  auto bank = vdg::load_bank(cfg.out / "bank");
  vdg::EpisodeConfig tc = cfg.train;
  tc.seed = vdg::derive_seed(cfg.seed, "meta_train");
  vdg::Rng init_rng = vdg::make_rng(vdg::derive_seed(tc.seed, "net_init"));
  auto net = vdg::make_seg_net<float>(init_rng);
  auto report = vdg::train(net, bank, tc, cfg.out / "seg");
  if (!report.epochs.empty())
    info("final epoch: L_test " + std::to_string(report.epochs.back().meta_test_total));
  return 0;
}

int cmd_eval(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "eval", cfg);
  auto ds = vdg::load_dataset(cfg.out / "data");
  vdg::Rng init_rng = vdg::make_rng(0);
  auto net = vdg::make_seg_net<float>(init_rng);
  const auto ckpt = cfg.out / "seg" / "final.ckpt";
  if (std::filesystem::exists(ckpt)) {
    vdg::load_checkpoint(ckpt, net.params());
  } else {
    info("no checkpoint at " + ckpt.string() + "; evaluating the untrained network");
  }
  auto records = vdg::evaluate(net, ds, cfg.eval_threshold);
  std::filesystem::create_directories(cfg.out / "eval");
  vdg::write_metrics_csv(records, cfg.out / "eval" / "metrics.csv");
  for (const auto& fam : ds.target_families)
    std::printf("%-20s mean Dice %.4f\n", fam.name.c_str(), vdg::mean_dice(records, fam.name));
  std::printf("%-20s mean Dice %.4f\n", "overall", vdg::mean_dice(records));
  return 0;
}

int cmd_ablation(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "ablation", cfg);
  auto ds = vdg::load_dataset(cfg.out / "data");
  auto bank = vdg::load_bank(cfg.out / "bank");
  vdg::EpisodeConfig tc = cfg.train;
  tc.seed = vdg::derive_seed(cfg.seed, "ablation");
  auto table = vdg::run_ablation(bank, ds, tc, cfg.ablation_seeds);
  const std::string text = vdg::format_ablation_table(table);
  std::filesystem::create_directories(cfg.out / "ablation");
  std::ofstream(cfg.out / "ablation" / "table.txt") << text;
  std::cout << text;
  return 0;
}

int cmd_dump_mixup(const vdg::AppConfig& cfg) {
  vdg::write_run_manifest(cfg.out, "dump-mixup", cfg);
  auto bank = vdg::load_bank(cfg.out / "bank");
  const auto& entry = bank.at(cfg.mixup_dump.subject_index);
  const auto dir = cfg.out / "mixup_dump";
  std::filesystem::create_directories(dir);
  std::ofstream lambdas(dir / "lambdas.csv");
  lambdas << "alpha1,alpha2,alpha3,sample,lambda1,lambda2,lambda3\n";
  for (const auto& a : cfg.mixup_dump.alphas) {
    vdg::DirichletParams alpha;
    alpha.alpha = a;
    vdg::Rng rng = vdg::make_rng(vdg::derive_seed(cfg.seed, "dump"));
    for (int i = 0; i < cfg.mixup_dump.samples_per_alpha; ++i) {
      auto s = vdg::mix(entry, vdg::sample_lambda(alpha, rng));
      char name[96];
      std::snprintf(name, sizeof(name), "alpha_%g_%g_%g_sample_%02d.pgm", a[0], a[1], a[2], i);
      vdg::write_pgm16(dir / name, s.image);
      char row[160];
      std::snprintf(row, sizeof(row), "%g,%g,%g,%d,%.9f,%.9f,%.9f\n", a[0], a[1], a[2], i,
                    s.lambda.lambda[0], s.lambda.lambda[1], s.lambda.lambda[2]);
      lambdas << row;
    }
  }
  info("mixup samples written to " + dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-vessel domain-generalization pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_override;
  std::uint64_t seed_override = 0;
  bool have_seed = false, deterministic = false;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed_override, "root seed override")->each([&](const std::string&) {
    have_seed = true;
  });
  app.add_option("--out", out_override, "output directory override");
  app.add_flag("--deterministic", deterministic, "strict single-threaded deterministic mode");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* pseudo = app.add_subcommand("train-pseudo", "train the 3 synthesis nets and build the bank");
  auto* meta = app.add_subcommand("meta-train", "episodic training of the segmentation net");
  auto* ev = app.add_subcommand("eval", "evaluate a trained net on the held-out styles");
  auto* abl = app.add_subcommand("ablation", "run the component ablation grid");
  auto* dump = app.add_subcommand("dump-mixup", "dump mixup samples and their coefficients");

  CLI11_PARSE(app, argc, argv);

  try {
    vdg::AppConfig cfg;
    if (!config_path.empty()) cfg = vdg::load_app_config(config_path);
    if (have_seed) cfg.seed = seed_override;
    if (!out_override.empty()) cfg.out = out_override;
    if (deterministic) cfg.deterministic = true;

    if (gen->parsed()) return cmd_gen_data(cfg);
    if (pseudo->parsed()) return cmd_train_pseudo(cfg);
    if (meta->parsed()) return cmd_meta_train(cfg);
    if (ev->parsed()) return cmd_eval(cfg);
    if (abl->parsed()) return cmd_ablation(cfg);
    if (dump->parsed()) return cmd_dump_mixup(cfg);
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return std::string(e.what()).find("non-finite") != std::string::npos ? 3 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
