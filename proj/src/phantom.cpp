#include "vesseldg/phantom.hpp"

#include "vesseldg/image_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace vdg {

namespace {

using json = nlohmann::json;

struct Canvas {
  Eigen::ArrayXXf coverage;  // H x W in [0,1]
  Canvas(int h, int w) : coverage(Eigen::ArrayXXf::Zero(h, w)) {}

  // Anti-aliased capsule stroke: coverage from distance to the segment.
  void stroke(float x0, float y0, float x1, float y1, float width) {
    const float r = width * 0.5f;
    const int h = static_cast<int>(coverage.rows());
    const int w = static_cast<int>(coverage.cols());
    int ymin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - r - 1)));
    int ymax = std::min(h - 1, static_cast<int>(std::ceil(std::max(y0, y1) + r + 1)));
    int xmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - r - 1)));
    int xmax = std::min(w - 1, static_cast<int>(std::ceil(std::max(x0, x1) + r + 1)));
    const float dx = x1 - x0, dy = y1 - y0;
    const float len2 = std::max(dx * dx + dy * dy, 1e-12f);
    for (int y = ymin; y <= ymax; ++y) {
      for (int x = xmin; x <= xmax; ++x) {
        const float t = std::clamp(((x - x0) * dx + (y - y0) * dy) / len2, 0.0f, 1.0f);
        const float px = x0 + t * dx - x, py = y0 + t * dy - y;
        const float dist = std::sqrt(px * px + py * py);
        const float cov = std::clamp(r + 0.5f - dist, 0.0f, 1.0f);
        coverage(y, x) = std::max(coverage(y, x), cov);
      }
    }
  }
};

void grow_branch(Canvas& canvas, Rng& rng, float x, float y, float angle, float width, int depth,
                 const BranchingParams& p) {
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> jitter(0.0f, p.angle_jitter);
  const int h = static_cast<int>(canvas.coverage.rows());
  const int w = static_cast<int>(canvas.coverage.cols());
  const int max_steps = (h + w) / static_cast<int>(p.step_len);
  for (int step = 0; step < max_steps && width >= p.min_width; ++step) {
    angle += jitter(rng);
    const float nx = x + p.step_len * std::cos(angle);
    const float ny = y + p.step_len * std::sin(angle);
    canvas.stroke(x, y, nx, ny, width);
    x = nx;
    y = ny;
    if (x < -2 || y < -2 || x > w + 1 || y > h + 1) break;
    width *= 0.985f;  // slow taper along the branch
    if (depth < p.max_depth && unit(rng) < p.branch_prob) {
      const float side = unit(rng) < 0.5f ? 1.0f : -1.0f;
      std::uniform_real_distribution<float> spread(0.35f, 0.9f);
      grow_branch(canvas, rng, x, y, angle + side * spread(rng), width * p.width_decay, depth + 1, p);
    }
  }
}

Eigen::ArrayXX<unsigned char> rasterize_tree(std::uint64_t seed, int h, int w, const BranchingParams& p) {
  Canvas canvas(h, w);
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  for (int t = 0; t < p.n_trunks; ++t) {
    // start on a random border, heading inward
    const int side = static_cast<int>(unit(rng) * 4.0f) % 4;
    float x, y, angle;
    if (side == 0) { x = unit(rng) * w; y = 0; angle = std::numbers::pi_v<float> / 2; }
    else if (side == 1) { x = unit(rng) * w; y = static_cast<float>(h - 1); angle = -std::numbers::pi_v<float> / 2; }
    else if (side == 2) { x = 0; y = unit(rng) * h; angle = 0; }
    else { x = static_cast<float>(w - 1); y = unit(rng) * h; angle = std::numbers::pi_v<float>; }
    angle += (unit(rng) - 0.5f) * 0.8f;
    grow_branch(canvas, rng, x, y, angle, p.trunk_width, 0, p);
  }
  return (canvas.coverage >= 0.5f).cast<unsigned char>();
}

}  // namespace

void BranchingParams::validate(int h, int w) const {
  if (h < 32 || w < 32) throw std::invalid_argument("generate_vessel_map: H and W must be >= 32");
  if (n_trunks < 1 || trunk_width < min_width || step_len <= 0 || width_decay <= 0 ||
      width_decay >= 1 || density_min < 0 || density_max <= density_min || density_max > 1)
    throw std::invalid_argument("generate_vessel_map: branching parameters out of range");
}

VesselMap generate_vessel_map(std::uint64_t seed, int h, int w, const BranchingParams& params) {
  params.validate(h, w);
  std::uint64_t attempt_seed = seed;
  for (int attempt = 0; attempt < params.max_retries; ++attempt) {
    auto pixels = rasterize_tree(attempt_seed, h, w, params);
    const double density = pixels.cast<double>().mean();
    if (density >= params.density_min && density <= params.density_max) {
      VesselMap map;
      map.pixels = std::move(pixels);
      return map;
    }
    attempt_seed = derive_seed(attempt_seed, "retry");
  }
  throw std::runtime_error("generate_vessel_map: density window unreachable after retries");
}

void StyleFamily::validate() const {
  auto range_ok = [](float lo, float hi) { return std::isfinite(lo) && std::isfinite(hi) && lo <= hi; };
  if (name.empty() || !range_ok(gamma_min, gamma_max) || gamma_min <= 0 ||
      !range_ok(noise_sigma_min, noise_sigma_max) || noise_sigma_min < 0 ||
      !range_ok(blur_sigma_min, blur_sigma_max) || blur_sigma_min < 0 ||
      !range_ok(gradient_amp_min, gradient_amp_max) || gradient_amp_min < 0 ||
      !range_ok(contrast_min, contrast_max) || contrast_min <= 0 || occlusion_prob < 0 ||
      occlusion_prob > 1)
    throw std::invalid_argument("StyleFamily '" + name + "': invalid parameter ranges");
}

Tensorf gaussian_blur(const Tensorf& img, float sigma) {
  if (sigma <= 0.0f) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  Eigen::ArrayXf kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5f * i * i / (sigma * sigma));
  kernel /= kernel.sum();
  auto reflect = [](int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
  };
  Tensorf tmp(img.c, img.h, img.w), out(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c) {
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(c, y, reflect(x + k, img.w));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        float acc = 0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(c, reflect(y + k, img.h), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

namespace {

Tensorf render_once(const VesselMap& map, const StyleFamily& f, Rng& rng) {
  const int h = map.h(), w = map.w();
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  auto sample = [&](float lo, float hi) { return lo + (hi - lo) * unit(rng); };

  const float gamma = sample(f.gamma_min, f.gamma_max);
  const float noise_sigma = sample(f.noise_sigma_min, f.noise_sigma_max);
  const float blur_sigma = sample(f.blur_sigma_min, f.blur_sigma_max);
  const float grad_amp = sample(f.gradient_amp_min, f.gradient_amp_max);
  const float contrast = sample(f.contrast_min, f.contrast_max);
  const float grad_angle = unit(rng) * 2.0f * std::numbers::pi_v<float>;

  Tensorf img(1, h, w);
  const float gx = std::cos(grad_angle), gy = std::sin(grad_angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = static_cast<float>(map.pixels(y, x));
      const float ramp = 0.5f + 0.5f * (gx * (x / static_cast<float>(w - 1) - 0.5f) * 2.0f +
                                        gy * (y / static_cast<float>(h - 1) - 0.5f) * 2.0f);
      const float bg = grad_amp * ramp;
      img.at(0, y, x) = std::min(1.0f, contrast) * v + bg * (1.0f - v);
    }

  // lesion-like occlusion blobs: pull the image toward the local background
  if (f.occlusion_prob > 0.0f && unit(rng) < f.occlusion_prob) {
    std::uniform_int_distribution<int> nblobs(2, 4);
    const int n = nblobs(rng);
    for (int b = 0; b < n; ++b) {
      const float cx = unit(rng) * w, cy = unit(rng) * h;
      const float radius = sample(0.08f, 0.20f) * std::min(h, w);
      const float level = sample(0.3f, 0.9f);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const float d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          const float mask = std::exp(-d2 / (2.0f * radius * radius));
          img.at(0, y, x) = img.at(0, y, x) * (1.0f - mask) + level * mask;
        }
    }
  }

  img = gaussian_blur(img, blur_sigma);
  if (gamma != 1.0f)
    img.data = img.data.max(0.0f).pow(gamma);
  if (noise_sigma > 0.0f) {
    std::normal_distribution<float> noise(0.0f, noise_sigma);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] += noise(rng);
  }
  if (!f.vessels_bright) img.data = 1.0f - img.data;
  img.data = img.data.min(1.0f).max(0.0f);
  return img;
}

float mean_gap(const Tensorf& img, const VesselMap& map) {
  double vsum = 0, bsum = 0;
  long vn = 0, bn = 0;
  for (int y = 0; y < map.h(); ++y)
    for (int x = 0; x < map.w(); ++x) {
      if (map.pixels(y, x)) { vsum += img.at(0, y, x); ++vn; }
      else { bsum += img.at(0, y, x); ++bn; }
    }
  if (vn == 0 || bn == 0) return 0.0f;
  return static_cast<float>(std::abs(vsum / vn - bsum / bn));
}

}  // namespace

StyleRendering render(const VesselMap& map, const StyleFamily& family, std::uint64_t seed, float margin) {
  family.validate();
  std::uint64_t attempt_seed = seed;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Rng rng = make_rng(attempt_seed);
    Tensorf img = render_once(map, family, rng);
    if (mean_gap(img, map) >= margin) {
      StyleRendering r;
      r.image = std::move(img);
      r.style_id = family.name;
      r.subject_id = map.subject_id;
      return r;
    }
    attempt_seed = derive_seed(attempt_seed, "render_retry");
  }
  throw std::runtime_error("render: could not reach vessel/background contrast margin for family " +
                           family.name);
}

std::vector<StyleFamily> default_source_families() {
  // three fundus-analog datasets of the same modality: realistic sensor noise,
  // mild cross-dataset variation only (the preprocessing step is what unifies
  // them into the single source appearance the segmenter trains on)
  StyleFamily a{.name = "fundus_a", .vessels_bright = false, .gamma_min = 0.9f, .gamma_max = 1.1f,
                .noise_sigma_min = 0.08f, .noise_sigma_max = 0.12f, .blur_sigma_min = 0.3f,
                .blur_sigma_max = 0.6f, .gradient_amp_min = 0.05f, .gradient_amp_max = 0.20f,
                .contrast_min = 0.85f, .contrast_max = 1.0f, .preprocess_at_test = true};
  StyleFamily b = a;
  b.name = "fundus_b";
  b.gamma_min = 1.0f; b.gamma_max = 1.2f;
  StyleFamily c = a;
  c.name = "fundus_c";
  c.noise_sigma_min = 0.06f; c.noise_sigma_max = 0.10f;
  return {a, b, c};
}

std::vector<StyleFamily> default_target_families() {
  // type I analog: pathology-like occlusions over a fundus-style base
  StyleFamily t1{.name = "shift1_pathology", .vessels_bright = false, .gamma_min = 0.9f,
                 .gamma_max = 1.1f, .noise_sigma_min = 0.01f, .noise_sigma_max = 0.04f,
                 .blur_sigma_min = 0.4f, .blur_sigma_max = 0.8f, .gradient_amp_min = 0.05f,
                 .gradient_amp_max = 0.25f, .contrast_min = 0.8f, .contrast_max = 1.0f,
                 .occlusion_prob = 1.0f, .preprocess_at_test = true};
  // type II analog: cross-site contrast/gamma/noise shift, still fundus-like
  StyleFamily t2{.name = "shift2_site", .vessels_bright = false, .gamma_min = 1.2f, .gamma_max = 1.5f,
                 .noise_sigma_min = 0.03f, .noise_sigma_max = 0.06f, .blur_sigma_min = 0.6f,
                 .blur_sigma_max = 1.0f, .gradient_amp_min = 0.15f, .gradient_amp_max = 0.30f,
                 .contrast_min = 0.7f, .contrast_max = 0.85f, .preprocess_at_test = true};
  // type III analog: modality change (angiography-like bright vessels, washed-out
  // contrast), fed raw
  StyleFamily t3{.name = "shift3_modality", .vessels_bright = true, .gamma_min = 0.7f, .gamma_max = 1.3f,
                 .noise_sigma_min = 0.02f, .noise_sigma_max = 0.06f, .blur_sigma_min = 0.3f,
                 .blur_sigma_max = 0.7f, .gradient_amp_min = 0.05f, .gradient_amp_max = 0.20f,
                 .contrast_min = 0.45f, .contrast_max = 0.75f, .preprocess_at_test = false};
  return {t1, t2, t3};
}

StyleFamily identity_family() {
  StyleFamily f;
  f.name = "identity";
  f.vessels_bright = true;
  return f;
}

Dataset build_split(int n_train, int n_test, const std::vector<StyleFamily>& source_families,
                    const std::vector<StyleFamily>& target_families, std::uint64_t seed, int h, int w,
                    const BranchingParams& params) {
  if (target_families.empty()) throw std::invalid_argument("build_split: target family set is empty");
  if (source_families.empty()) throw std::invalid_argument("build_split: source family set is empty");
  for (const auto& s : source_families)
    for (const auto& t : target_families)
      if (s.name == t.name)
        throw std::invalid_argument("build_split: family '" + s.name + "' appears in both source and target");

  Dataset ds;
  ds.h = h;
  ds.w = w;
  ds.seed = seed;
  ds.source_families = source_families;
  ds.target_families = target_families;

  int subject_id = 0;
  for (int i = 0; i < n_train; ++i, ++subject_id) {
    Subject s;
    s.map = generate_vessel_map(derive_seed(seed, "subject" + std::to_string(subject_id)), h, w, params);
    s.map.subject_id = subject_id;
    const StyleFamily& fam = source_families[i % source_families.size()];
    s.source_family = fam.name;
    s.renderings.push_back(render(s.map, fam, derive_seed(seed, "render" + std::to_string(subject_id))));
    ds.train.push_back(std::move(s));
  }
  for (int i = 0; i < n_test; ++i, ++subject_id) {
    Subject s;
    s.map = generate_vessel_map(derive_seed(seed, "subject" + std::to_string(subject_id)), h, w, params);
    s.map.subject_id = subject_id;
    for (const auto& fam : target_families)
      s.renderings.push_back(
          render(s.map, fam, derive_seed(seed, "render" + std::to_string(subject_id) + fam.name)));
    ds.test.push_back(std::move(s));
  }
  return ds;
}

namespace {

json family_to_json(const StyleFamily& f) {
  return json{{"name", f.name},
              {"vessels_bright", f.vessels_bright},
              {"gamma", {f.gamma_min, f.gamma_max}},
              {"noise_sigma", {f.noise_sigma_min, f.noise_sigma_max}},
              {"blur_sigma", {f.blur_sigma_min, f.blur_sigma_max}},
              {"gradient_amp", {f.gradient_amp_min, f.gradient_amp_max}},
              {"contrast", {f.contrast_min, f.contrast_max}},
              {"occlusion_prob", f.occlusion_prob},
              {"preprocess_at_test", f.preprocess_at_test}};
}

StyleFamily family_from_json(const json& j) {
  StyleFamily f;
  f.name = j.at("name");
  f.vessels_bright = j.at("vessels_bright");
  f.gamma_min = j.at("gamma")[0]; f.gamma_max = j.at("gamma")[1];
  f.noise_sigma_min = j.at("noise_sigma")[0]; f.noise_sigma_max = j.at("noise_sigma")[1];
  f.blur_sigma_min = j.at("blur_sigma")[0]; f.blur_sigma_max = j.at("blur_sigma")[1];
  f.gradient_amp_min = j.at("gradient_amp")[0]; f.gradient_amp_max = j.at("gradient_amp")[1];
  f.contrast_min = j.at("contrast")[0]; f.contrast_max = j.at("contrast")[1];
  f.occlusion_prob = j.at("occlusion_prob");
  f.preprocess_at_test = j.at("preprocess_at_test");
  return f;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "vesseldg-dataset";
  manifest["version"] = 1;
  manifest["seed"] = ds.seed;
  manifest["h"] = ds.h;
  manifest["w"] = ds.w;
  for (const auto& f : ds.source_families) manifest["source_families"].push_back(family_to_json(f));
  for (const auto& f : ds.target_families) manifest["target_families"].push_back(family_to_json(f));
  manifest["subjects"] = json::array();

  auto dump_subject = [&](const Subject& s, const std::string& split) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%04d", s.map.subject_id);
    const std::string stem = "subj_" + std::string(idbuf);
    const std::string gt_file = stem + "_gt.pgm";
    write_pgm_binary(dir / gt_file, s.map.pixels);
    json rec{{"id", s.map.subject_id}, {"split", split}, {"gt", gt_file},
             {"source_family", s.source_family}, {"renderings", json::array()}};
    for (const auto& r : s.renderings) {
      const std::string img_file = stem + "_" + r.style_id + ".pgm";
      write_pgm16(dir / img_file, r.image);
      rec["renderings"].push_back(json{{"style", r.style_id}, {"file", img_file}});
    }
    manifest["subjects"].push_back(std::move(rec));
  };
  for (const auto& s : ds.train) dump_subject(s, "train");
  for (const auto& s : ds.test) dump_subject(s, "test");

  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_dataset: cannot write manifest");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_dataset: missing manifest in " + dir.string());
  json manifest = json::parse(in);
  if (manifest.at("format") != "vesseldg-dataset" || manifest.at("version") != 1)
    throw std::runtime_error("load_dataset: unsupported manifest format/version");

  Dataset ds;
  ds.seed = manifest.at("seed");
  ds.h = manifest.at("h");
  ds.w = manifest.at("w");
  for (const auto& j : manifest.at("source_families")) ds.source_families.push_back(family_from_json(j));
  for (const auto& j : manifest.at("target_families")) ds.target_families.push_back(family_from_json(j));
  for (const auto& rec : manifest.at("subjects")) {
    Subject s;
    s.map.subject_id = rec.at("id");
    s.map.pixels = read_pgm_binary(dir / rec.at("gt").get<std::string>());
    s.source_family = rec.at("source_family");
    for (const auto& r : rec.at("renderings")) {
      StyleRendering sr;
      sr.style_id = r.at("style");
      sr.subject_id = s.map.subject_id;
      sr.image = read_pgm(dir / r.at("file").get<std::string>());
      s.renderings.push_back(std::move(sr));
    }
    if (rec.at("split") == "train") ds.train.push_back(std::move(s));
    else ds.test.push_back(std::move(s));
  }
  return ds;
}

}  // namespace vdg
