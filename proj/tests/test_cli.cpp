// Drives the installed command-line binary end to end on a miniature
// configuration. The binary path is injected by the build system.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace {

namespace fs = std::filesystem;

const std::string kCli = VESSELDG_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = "VESSELDG_LOG=quiet " + kCli + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_tiny_config(const fs::path& dir) {
  const fs::path p = dir / "config.json";
  std::ofstream out(p);
  out << R"({
    "seed": 77,
    "data": {"n_train": 3, "n_test": 2, "h": 48, "w": 48},
    "synthesis": {"epochs": 1, "batch_size": 3, "lr": 0.001},
    "train": {"epochs": 1, "batch_size": 3, "m_samples": 2}
  })";
  return p;
}

}  // namespace

TEST_CASE("unknown command and missing subcommand exit nonzero") {
  CHECK(run("frobnicate") != 0);
  CHECK(run("") != 0);
}

TEST_CASE("gen-data writes the dataset and is deterministic per seed") {
  auto d1 = fresh_dir("vdg_cli_gen1");
  auto d2 = fresh_dir("vdg_cli_gen2");
  auto cfg = write_tiny_config(d1);
  REQUIRE(run("--config " + cfg.string() + " --out " + d1.string() + " gen-data") == 0);
  REQUIRE(run("--config " + cfg.string() + " --out " + d2.string() + " gen-data") == 0);

  REQUIRE(fs::exists(d1 / "data" / "manifest.json"));
  CHECK(fs::exists(d1 / "run_manifest_gen-data.json"));

  // every dataset file is byte-identical between the two runs
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(d1 / "data")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), d1 / "data");
    CHECK(slurp(e.path()) == slurp(d2 / "data" / rel));
    ++compared;
  }
  CHECK(compared > 3);

  // a different seed changes the data
  auto d3 = fresh_dir("vdg_cli_gen3");
  REQUIRE(run("--config " + cfg.string() + " --out " + d3.string() + " --seed 78 gen-data") == 0);
  bool any_diff = false;
  for (const auto& e : fs::recursive_directory_iterator(d1 / "data")) {
    if (!e.is_regular_file() || e.path().extension() != ".pgm") continue;
    const auto rel = fs::relative(e.path(), d1 / "data");
    if (slurp(e.path()) != slurp(d3 / "data" / rel)) any_diff = true;
  }
  CHECK(any_diff);

  fs::remove_all(d1);
  fs::remove_all(d2);
  fs::remove_all(d3);
}

TEST_CASE("pipeline commands compose and eval tolerates an untrained net") {
  auto dir = fresh_dir("vdg_cli_pipe");
  auto cfg = write_tiny_config(dir);
  const std::string base = "--config " + cfg.string() + " --out " + dir.string() + " ";

  REQUIRE(run(base + "gen-data") == 0);

  // eval before training: must still produce a valid CSV
  REQUIRE(run(base + "eval") == 0);
  CHECK(fs::exists(dir / "eval" / "metrics.csv"));
  {
    std::string csv = slurp(dir / "eval" / "metrics.csv");
    CHECK(csv.find("dice") != std::string::npos);
  }

  REQUIRE(run(base + "train-pseudo") == 0);
  CHECK(fs::exists(dir / "bank" / "bank_manifest.json"));
  CHECK(fs::exists(dir / "synth1.ckpt"));
  CHECK(fs::exists(dir / "synth3.ckpt"));

  REQUIRE(run(base + "meta-train") == 0);
  CHECK(fs::exists(dir / "seg" / "final.ckpt"));
  CHECK(fs::exists(dir / "seg" / "train_log.csv"));

  REQUIRE(run(base + "eval") == 0);

  REQUIRE(run(base + "dump-mixup") == 0);
  CHECK(fs::exists(dir / "mixup_dump" / "lambdas.csv"));
  // one image per (alpha, sample): 3 alphas x 9 samples by default
  int pgms = 0;
  for (const auto& e : fs::directory_iterator(dir / "mixup_dump"))
    if (e.path().extension() == ".pgm") ++pgms;
  CHECK(pgms == 27);

  fs::remove_all(dir);
}

TEST_CASE("commands depending on missing inputs fail cleanly") {
  auto dir = fresh_dir("vdg_cli_missing");
  auto cfg = write_tiny_config(dir);
  const std::string base = "--config " + cfg.string() + " --out " + dir.string() + " ";
  CHECK(run(base + "train-pseudo") == 1);  // no dataset yet
  CHECK(run(base + "meta-train") == 1);    // no bank yet
  fs::remove_all(dir);
}

TEST_CASE("meta-train rerun under one seed is bit-identical") {
  auto d1 = fresh_dir("vdg_cli_det1");
  auto d2 = fresh_dir("vdg_cli_det2");
  auto cfg = write_tiny_config(d1);
  for (const fs::path& d : {d1, d2}) {
    const std::string base = "--config " + cfg.string() + " --out " + d.string() + " --deterministic ";
    REQUIRE(run(base + "gen-data") == 0);
    REQUIRE(run(base + "train-pseudo") == 0);
    REQUIRE(run(base + "meta-train") == 0);
  }
  CHECK(slurp(d1 / "seg" / "train_log.csv") == slurp(d2 / "seg" / "train_log.csv"));
  CHECK(slurp(d1 / "seg" / "final.ckpt") == slurp(d2 / "seg" / "final.ckpt"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}
