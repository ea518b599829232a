#include "vesseldg/pseudomod.hpp"

#include <doctest.h>

#include <filesystem>

using namespace vdg;

namespace {

std::vector<Subject> toy_subjects(int n, std::uint64_t seed, int side = 48) {
  auto families = default_source_families();
  std::vector<Subject> out;
  for (int i = 0; i < n; ++i) {
    Subject s;
    s.map = generate_vessel_map(derive_seed(seed, "map" + std::to_string(i)), side, side);
    s.map.subject_id = i;
    const auto& fam = families[i % families.size()];
    s.renderings.push_back(render(s.map, fam, derive_seed(seed, "style" + std::to_string(i))));
    s.renderings[0].subject_id = i;
    s.source_family = fam.name;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("clahe of a flat image is flat") {
  Tensorf flat(1, 32, 32);
  flat.data.setConstant(0.4f);
  Tensorf out = clahe(flat);
  CHECK((out.data.maxCoeff() - out.data.minCoeff()) < 1e-4f);
}

TEST_CASE("clahe output stays in range and is deterministic") {
  Rng rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensorf img(1, 40, 40);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = u(rng);
  Tensorf a = clahe(img), b = clahe(img);
  CHECK((a.data == b.data).all());
  CHECK(a.data.minCoeff() >= 0.0f);
  CHECK(a.data.maxCoeff() <= 1.0f);
}

TEST_CASE("preprocess reverses polarity: dark vessels come out bright") {
  auto m = generate_vessel_map(4, 48, 48);
  auto r = render(m, default_source_families()[0], 9);  // dark vessels
  Tensorf out = preprocess_d0(r.image);
  CHECK(out.data.minCoeff() >= 0.0f);
  CHECK(out.data.maxCoeff() <= 1.0f);
  double v_in = 0, b_in = 0, v_out = 0, b_out = 0;
  long vn = 0, bn = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      if (m.pixels(y, x)) { v_in += r.image.at(0, y, x); v_out += out.at(0, y, x); ++vn; }
      else { b_in += r.image.at(0, y, x); b_out += out.at(0, y, x); ++bn; }
    }
  CHECK(v_in / vn < b_in / bn);    // dark vessels in
  CHECK(v_out / vn > b_out / bn);  // bright vessels out
}

TEST_CASE("preprocess rejects non-finite pixels") {
  Tensorf img(1, 32, 32);
  img.data.setZero();
  img.data[5] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(preprocess_d0(img), std::invalid_argument);
}

TEST_CASE("synthesis training lowers the loss and differs across seeds") {
  auto subjects = toy_subjects(6, 11);
  SynthTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 3;
  SynthTrainReport rep;
  auto net1 = train_synthesis(subjects, 1, cfg, &rep);
  REQUIRE(rep.epoch_loss.size() == 3);
  CHECK(rep.epoch_loss.back() < rep.initial_loss);
  auto net2 = train_synthesis(subjects, 2, cfg);
  Tensorf probe = subjects[0].renderings[0].image;
  auto l1 = net1.forward(probe).latent;
  auto l2 = net2.forward(probe).latent;
  CHECK((l1.data - l2.data).abs().mean() > 0.0f);
}

TEST_CASE("zero-epoch training is a no-op over the seeded initialization") {
  auto subjects = toy_subjects(2, 12);
  SynthTrainConfig cfg;
  cfg.epochs = 0;
  auto trained = train_synthesis(subjects, 5, cfg);
  Rng rng = make_rng(derive_seed(5, "synth_init"));
  SynthesisNet<float> fresh(rng);
  auto pt = trained.params();
  auto pf = fresh.params();
  REQUIRE(pt.size() == pf.size());
  for (size_t i = 0; i < pt.size(); ++i) CHECK(pt[i]->value == pf[i]->value);
}

TEST_CASE("bank assembly: invariants, determinism, persistence") {
  auto subjects = toy_subjects(3, 15);
  SynthTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 3;
  std::vector<SynthesisNet<float>> nets;
  for (std::uint64_t s = 1; s <= 3; ++s) nets.push_back(train_synthesis(subjects, s, cfg));

  auto bank = build_bank(nets, subjects);
  REQUIRE(bank.size() == 3);
  for (const auto& e : bank) {
    e.validate();
    CHECK(e.x0.h == e.x1.h);
    CHECK(e.x1.h == e.x2.h);
    CHECK(e.x2.h == e.x3.h);
    for (const Tensorf* t : {&e.x0, &e.x1, &e.x2, &e.x3}) {
      CHECK(t->data.minCoeff() >= 0.0f);
      CHECK(t->data.maxCoeff() <= 1.0f);
    }
    // style diversity between latents of one subject
    CHECK((e.x1.data - e.x2.data).abs().mean() > 0.01f);
    CHECK((e.x1.data - e.x3.data).abs().mean() > 0.01f);
    CHECK((e.x2.data - e.x3.data).abs().mean() > 0.01f);
  }
  // modality accessor mirrors the fields
  CHECK(&bank[0].modality(0) == &bank[0].x0);
  CHECK(&bank[0].modality(3) == &bank[0].x3);
  CHECK_THROWS_AS(bank[0].modality(4), std::out_of_range);

  auto bank2 = build_bank(nets, subjects);
  for (size_t i = 0; i < bank.size(); ++i) {
    CHECK((bank[i].x0.data == bank2[i].x0.data).all());
    CHECK((bank[i].x1.data == bank2[i].x1.data).all());
    CHECK((bank[i].x3.data == bank2[i].x3.data).all());
  }

  const auto dir = std::filesystem::temp_directory_path() / "vdg_test_bank";
  std::filesystem::remove_all(dir);
  save_bank(bank, dir);
  auto loaded = load_bank(dir);
  REQUIRE(loaded.size() == bank.size());
  for (size_t i = 0; i < bank.size(); ++i) {
    CHECK(loaded[i].subject_id == bank[i].subject_id);
    CHECK((loaded[i].y.pixels == bank[i].y.pixels).all());
    CHECK((loaded[i].x2.data - bank[i].x2.data).abs().maxCoeff() < 1.0f / 65000.0f);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("bank entry validation rejects shape drift") {
  auto subjects = toy_subjects(1, 16);
  BankEntry e;
  e.subject_id = 0;
  e.y = subjects[0].map;
  e.x0 = e.x1 = e.x2 = preprocess_d0(subjects[0].renderings[0].image);
  e.x3 = Tensorf(1, 8, 8);
  e.x3.data.setZero();
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
}
