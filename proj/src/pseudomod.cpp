#include "vesseldg/pseudomod.hpp"

#include "vesseldg/image_io.hpp"
#include "vesseldg/losses.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace vdg {

const Tensorf& BankEntry::modality(int k) const {
  switch (k) {
    case 0: return x0;
    case 1: return x1;
    case 2: return x2;
    case 3: return x3;
    default: throw std::out_of_range("BankEntry: modality index");
  }
}

void BankEntry::validate() const {
  for (int k = 0; k < 4; ++k) {
    const Tensorf& m = modality(k);
    if (m.c != 1 || m.h != y.h() || m.w != y.w())
      throw std::invalid_argument("BankEntry: modality/label shape mismatch");
    if (m.data.minCoeff() < -1e-6f || m.data.maxCoeff() > 1.0f + 1e-6f)
      throw std::invalid_argument("BankEntry: intensities outside [0,1]");
  }
}

Tensorf clahe(const Tensorf& gray, float clip_limit, int tiles) {
  if (gray.c != 1) throw std::invalid_argument("clahe: expected grayscale input");
  if (!gray.data.allFinite()) throw std::invalid_argument("clahe: non-finite pixels");
  constexpr int kBins = 256;
  const int h = gray.h, w = gray.w;
  const int ty = tiles, tx = tiles;

  auto bin_of = [&](float v) {
    int b = static_cast<int>(std::clamp(v, 0.0f, 1.0f) * (kBins - 1) + 0.5f);
    return std::clamp(b, 0, kBins - 1);
  };

  // per-tile clipped-histogram CDF lookup tables
  std::vector<Eigen::ArrayXf> lut(static_cast<size_t>(ty) * tx);
  for (int tyi = 0; tyi < ty; ++tyi) {
    for (int txi = 0; txi < tx; ++txi) {
      const int y0 = tyi * h / ty, y1 = (tyi + 1) * h / ty;
      const int x0 = txi * w / tx, x1 = (txi + 1) * w / tx;
      const int area = (y1 - y0) * (x1 - x0);
      Eigen::ArrayXf hist = Eigen::ArrayXf::Zero(kBins);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) hist[bin_of(gray.at(0, y, x))] += 1.0f;
      const float clip = std::max(1.0f, clip_limit * area / kBins);
      float excess = 0.0f;
      for (int b = 0; b < kBins; ++b)
        if (hist[b] > clip) {
          excess += hist[b] - clip;
          hist[b] = clip;
        }
      hist += excess / kBins;
      Eigen::ArrayXf cdf(kBins);
      float acc = 0.0f;
      for (int b = 0; b < kBins; ++b) {
        acc += hist[b];
        cdf[b] = acc / area;
      }
      lut[static_cast<size_t>(tyi) * tx + txi] = cdf;
    }
  }

  // bilinear blend of the four surrounding tile mappings
  Tensorf out(1, h, w);
  for (int y = 0; y < h; ++y) {
    const float fy = (y + 0.5f) * ty / h - 0.5f;
    const int t0y = std::clamp(static_cast<int>(std::floor(fy)), 0, ty - 1);
    const int t1y = std::min(t0y + 1, ty - 1);
    const float wy = std::clamp(fy - t0y, 0.0f, 1.0f);
    for (int x = 0; x < w; ++x) {
      const float fx = (x + 0.5f) * tx / w - 0.5f;
      const int t0x = std::clamp(static_cast<int>(std::floor(fx)), 0, tx - 1);
      const int t1x = std::min(t0x + 1, tx - 1);
      const float wx = std::clamp(fx - t0x, 0.0f, 1.0f);
      const int b = bin_of(gray.at(0, y, x));
      const float v00 = lut[static_cast<size_t>(t0y) * tx + t0x][b];
      const float v01 = lut[static_cast<size_t>(t0y) * tx + t1x][b];
      const float v10 = lut[static_cast<size_t>(t1y) * tx + t0x][b];
      const float v11 = lut[static_cast<size_t>(t1y) * tx + t1x][b];
      out.at(0, y, x) = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
    }
  }
  out.data = out.data.min(1.0f).max(0.0f);
  return out;
}

Tensorf preprocess_d0(const Tensorf& image, float clip_limit, int tiles) {
  if (!image.data.allFinite()) throw std::invalid_argument("preprocess_d0: non-finite pixels");
  Tensorf green(1, image.h, image.w);
  if (image.c == 3) green.data = image.channel(1);
  else if (image.c == 1) green.data = image.channel(0);
  else throw std::invalid_argument("preprocess_d0: expected 1- or 3-channel image");
  green.data = 1.0f - green.data.min(1.0f).max(0.0f);
  return clahe(green, clip_limit, tiles);
}

namespace {

float minibatch_synth_step(SynthesisNet<float>& net, nn::Adam<float>& opt,
                           const std::vector<const Subject*>& batch, float lr) {
  net.zero_grad();
  float total = 0.0f;
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (const Subject* s : batch) {
    auto out = net.forward(s->renderings.front().image);
    Tensorf dlogits;
    const float loss = seg_loss(out.logits, s->map, &dlogits);
    if (!std::isfinite(loss))
      throw std::runtime_error("train_synthesis: diverged (non-finite L_seg) on subject " +
                               std::to_string(s->map.subject_id));
    total += loss;
    dlogits.data *= inv_b;
    net.backward(dlogits);
  }
  opt.step(lr);
  return total * inv_b;
}

float mean_synth_loss(SynthesisNet<float>& net, const std::vector<Subject>& subjects) {
  float total = 0.0f;
  for (const auto& s : subjects) {
    auto out = net.forward(s.renderings.front().image);
    total += seg_loss<float>(out.logits, s.map);
  }
  return total / static_cast<float>(subjects.size());
}

Tensorf minmax_rescale(const Tensorf& img) {
  Tensorf out = img;
  const float lo = img.data.minCoeff(), hi = img.data.maxCoeff();
  if (hi - lo < 1e-12f) {
    out.data.setZero();
  } else {
    out.data = (img.data - lo) / (hi - lo);
  }
  return out;
}

}  // namespace

SynthesisNet<float> train_synthesis(const std::vector<Subject>& subjects, std::uint64_t seed,
                                    const SynthTrainConfig& cfg, SynthTrainReport* report) {
  if (subjects.empty()) throw std::invalid_argument("train_synthesis: empty dataset");
  Rng init_rng = make_rng(derive_seed(seed, "synth_init"));
  SynthesisNet<float> net(init_rng);
  nn::Adam<float> opt(net.params());
  Rng shuffle_rng = make_rng(derive_seed(seed, "synth_shuffle"));

  if (report) {
    report->epoch_loss.clear();
    report->initial_loss = mean_synth_loss(net, subjects);
  }

  std::vector<const Subject*> order;
  for (const auto& s : subjects) order.push_back(&s);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    float epoch_total = 0.0f;
    int n_batches = 0;
    for (size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<const Subject*> batch(order.begin() + i,
                                        order.begin() + std::min(i + cfg.batch_size, order.size()));
      epoch_total += minibatch_synth_step(net, opt, batch, cfg.lr);
      ++n_batches;
    }
    if (report) report->epoch_loss.push_back(epoch_total / n_batches);
  }
  return net;
}

PseudoModalityBank build_bank(std::vector<SynthesisNet<float>>& nets, const std::vector<Subject>& subjects) {
  if (nets.size() != 3) throw std::invalid_argument("build_bank: expected 3 synthesis nets");
  PseudoModalityBank bank;
  for (const auto& s : subjects) {
    const Tensorf& raw = s.renderings.front().image;
    BankEntry e;
    e.subject_id = s.map.subject_id;
    e.y = s.map;
    e.x0 = preprocess_d0(raw);
    Tensorf* slots[3] = {&e.x1, &e.x2, &e.x3};
    for (int k = 0; k < 3; ++k) {
      auto out = nets[k].forward(raw);
      Tensorf& latent = out.latent;
      if (latent.h != s.map.h() || latent.w != s.map.w())
        throw std::runtime_error("build_bank: latent/label shape mismatch");
      // canonical polarity: orient the latent so it correlates positively
      // with the net's own vessel probability, i.e. vessels come out bright
      // in every pseudo-modality (as they do in x0 after preprocessing)
      Eigen::ArrayXf p1 = 1.0f / (1.0f + (out.logits.channel(0) - out.logits.channel(1)).exp());
      const float cov =
          ((latent.data - latent.data.mean()) * (p1 - p1.mean())).mean();
      if (cov < 0.0f) latent.data = -latent.data;
      *slots[k] = minmax_rescale(latent);
    }
    e.validate();
    bank.push_back(std::move(e));
  }
  return bank;
}

void save_bank(const PseudoModalityBank& bank, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "vesseldg-bank";
  manifest["version"] = 1;
  manifest["entries"] = nlohmann::json::array();
  for (const auto& e : bank) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%04d", e.subject_id);
    const std::string stem = "subj_" + std::string(idbuf);
    nlohmann::json rec{{"id", e.subject_id}, {"gt", stem + "_gt.pgm"}};
    write_pgm_binary(dir / (stem + "_gt.pgm"), e.y.pixels);
    for (int k = 0; k < 4; ++k) {
      const std::string file = stem + "_x" + std::to_string(k) + ".pgm";
      write_pgm16(dir / file, e.modality(k));
      rec["x" + std::to_string(k)] = file;
    }
    manifest["entries"].push_back(std::move(rec));
  }
  std::ofstream out(dir / "bank_manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_bank: cannot write manifest");
}

PseudoModalityBank load_bank(const std::filesystem::path& dir) {
  std::ifstream in(dir / "bank_manifest.json");
  if (!in) throw std::runtime_error("load_bank: missing manifest in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.at("format") != "vesseldg-bank" || manifest.at("version") != 1)
    throw std::runtime_error("load_bank: unsupported manifest format/version");
  PseudoModalityBank bank;
  for (const auto& rec : manifest.at("entries")) {
    BankEntry e;
    e.subject_id = rec.at("id");
    e.y.subject_id = e.subject_id;
    e.y.pixels = read_pgm_binary(dir / rec.at("gt").get<std::string>());
    Tensorf* slots[4] = {&e.x0, &e.x1, &e.x2, &e.x3};
    for (int k = 0; k < 4; ++k) *slots[k] = read_pgm(dir / rec.at("x" + std::to_string(k)).get<std::string>());
    e.validate();
    bank.push_back(std::move(e));
  }
  return bank;
}

double anatomy_consistency_probe(const PseudoModalityBank& bank, std::uint64_t seed, int epochs) {
  if (bank.empty()) throw std::invalid_argument("anatomy_consistency_probe: empty bank");
  Rng init_rng = make_rng(derive_seed(seed, "probe_init"));
  auto net = make_seg_net<float>(init_rng);
  nn::Adam<float> opt(net.params());
  Rng shuffle_rng = make_rng(derive_seed(seed, "probe_shuffle"));

  std::vector<const BankEntry*> order;
  for (const auto& e : bank) order.push_back(&e);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t i = 0; i < order.size(); i += 10) {
      net.zero_grad();
      const size_t end = std::min(i + 10, order.size());
      const float inv_b = 1.0f / static_cast<float>(end - i);
      for (size_t j = i; j < end; ++j) {
        auto out = net.forward(order[j]->x0);
        Tensorf dlogits;
        seg_loss(out.logits, order[j]->y, &dlogits);
        dlogits.data *= inv_b;
        net.backward(dlogits);
      }
      opt.step(1e-3f);
    }
  }

  double total = 0.0;
  int n = 0;
  for (const auto& e : bank) {
    for (int k = 1; k <= 3; ++k) {
      auto out = net.forward(e.modality(k));
      // Dice of thresholded vessel probability vs shared ground truth
      long inter = 0, psum = 0, ysum = 0;
      for (int y = 0; y < e.y.h(); ++y)
        for (int x = 0; x < e.y.w(); ++x) {
          const bool pred = out.logits.at(1, y, x) > out.logits.at(0, y, x);
          const bool gt = e.y.pixels(y, x) != 0;
          inter += pred && gt;
          psum += pred;
          ysum += gt;
        }
      total += (psum + ysum) == 0 ? 1.0 : 2.0 * inter / static_cast<double>(psum + ysum);
      ++n;
    }
  }
  return total / n;
}

}  // namespace vdg
