#include "vesseldg/eval.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace vdg;

namespace {

VesselMap map_from(std::initializer_list<std::initializer_list<int>> rows) {
  VesselMap y;
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows.begin()->size());
  y.pixels.resize(h, w);
  int r = 0;
  for (auto& row : rows) {
    int c = 0;
    for (int v : row) y.pixels(r, c++) = static_cast<unsigned char>(v);
    ++r;
  }
  return y;
}

}  // namespace

TEST_CASE("dice hand cases") {
  auto y = map_from({{1, 1, 0, 0}, {0, 0, 0, 0}});
  CHECK(dice(y.pixels, y) == doctest::Approx(1.0));
  auto disjoint = map_from({{0, 0, 1, 1}, {0, 0, 0, 0}});
  CHECK(dice(disjoint.pixels, y) == doctest::Approx(0.0));

  // |P| = |Y| = 100, overlap 50
  VesselMap big;
  big.pixels = Eigen::ArrayXX<unsigned char>::Zero(20, 20);
  Eigen::ArrayXX<unsigned char> pred = Eigen::ArrayXX<unsigned char>::Zero(20, 20);
  for (int i = 0; i < 100; ++i) big.pixels(i / 20, i % 20) = 1;     // cells 0..99
  for (int i = 50; i < 150; ++i) pred(i / 20, i % 20) = 1;          // cells 50..149
  CHECK(dice(pred, big) == doctest::Approx(0.5));

  // both empty -> 1 by definition
  VesselMap empty;
  empty.pixels = Eigen::ArrayXX<unsigned char>::Zero(4, 4);
  CHECK(dice(empty.pixels, empty) == doctest::Approx(1.0));

  // symmetry
  VesselMap as_map;
  as_map.pixels = pred;
  CHECK(dice(big.pixels, as_map) == doctest::Approx(dice(pred, big)));

  Eigen::ArrayXX<unsigned char> wrong = Eigen::ArrayXX<unsigned char>::Zero(3, 3);
  CHECK_THROWS_AS(dice(wrong, big), std::invalid_argument);
}

TEST_CASE("evaluation yields one record per subject x family and leaves the net intact") {
  auto ds = build_split(2, 3, default_source_families(), default_target_families(), 321, 48, 48);
  Rng rng(1);
  auto net = make_seg_net<float>(rng);
  std::vector<nn::MatrixX<float>> before;
  for (auto* p : net.params()) before.push_back(p->value);

  auto records = evaluate(net, ds);
  CHECK(records.size() == 3 * default_target_families().size());
  std::set<std::pair<int, std::string>> keys;
  for (const auto& r : records) {
    CHECK(r.dice >= 0.0);
    CHECK(r.dice <= 1.0);
    keys.insert({r.subject_id, r.domain});
  }
  CHECK(keys.size() == records.size());

  auto params = net.params();
  for (size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);

  // determinism
  auto records2 = evaluate(net, ds);
  for (size_t i = 0; i < records.size(); ++i) CHECK(records[i].dice == records2[i].dice);

  Dataset empty = ds;
  empty.test.clear();
  CHECK_THROWS_AS(evaluate(net, empty), std::invalid_argument);
}

TEST_CASE("metric csv is written with one row per record") {
  std::vector<MetricRecord> records{{0, "shift1", 0.75, 0.5f}, {1, "shift2", 0.5, 0.5f}};
  const auto path = std::filesystem::temp_directory_path() / "vdg_metrics.csv";
  write_metrics_csv(records, path);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);  // header
  CHECK(line.find("dice") != std::string::npos);
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  std::filesystem::remove(path);
}

TEST_CASE("mean dice aggregations") {
  std::vector<MetricRecord> records{
      {0, "a", 0.8, 0.5f}, {1, "a", 0.6, 0.5f}, {0, "b", 0.2, 0.5f}};
  CHECK(mean_dice(records) == doctest::Approx((0.8 + 0.6 + 0.2) / 3));
  CHECK(mean_dice(records, "a") == doctest::Approx(0.7));
  CHECK(mean_dice(records, "b") == doctest::Approx(0.2));
}

TEST_CASE("ablation flags enforce the sim-requires-episodic rule") {
  AblationFlags ok{true, true, false};
  ok.validate();
  AblationFlags bad{false, true, false};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("ablation table formatting covers six rows") {
  std::vector<AblationCell> cells(6);
  const bool grid[6][3] = {{false, false, false}, {false, false, true}, {true, false, false},
                           {true, true, false},   {true, false, true},  {true, true, true}};
  for (int i = 0; i < 6; ++i) {
    cells[i].flags = {grid[i][0], grid[i][1], grid[i][2]};
    cells[i].per_domain_dice = {{"shift1", 0.5 + 0.01 * i}};
    cells[i].overall = 0.5 + 0.01 * i;
  }
  std::string table = format_ablation_table(cells);
  int lines = 0;
  std::istringstream ss(table);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) ++lines;
  CHECK(lines >= 7);  // header + six rows
}
