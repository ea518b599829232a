#include "vesseldg/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vdg {

double dice(const Eigen::ArrayXX<unsigned char>& pred, const VesselMap& y) {
  if (pred.rows() != y.pixels.rows() || pred.cols() != y.pixels.cols())
    throw std::invalid_argument("dice: shape mismatch");
  long inter = 0, psum = 0, ysum = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      const bool p = pred(r, c) != 0, g = y.pixels(r, c) != 0;
      inter += p && g;
      psum += p;
      ysum += g;
    }
  if (psum + ysum == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(psum + ysum);
}

Eigen::ArrayXX<unsigned char> predict_mask(nn::ResUNet<float>& net, const Tensorf& image,
                                           float threshold) {
  auto out = net.forward(image);
  Eigen::ArrayXX<unsigned char> mask(image.h, image.w);
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      const float p1 = 1.0f / (1.0f + std::exp(out.logits.at(0, y, x) - out.logits.at(1, y, x)));
      mask(y, x) = p1 > threshold ? 1 : 0;
    }
  return mask;
}

std::vector<MetricRecord> evaluate(nn::ResUNet<float>& net, const Dataset& ds, float threshold) {
  if (ds.test.empty()) throw std::invalid_argument("evaluate: empty test split");
  std::vector<MetricRecord> records;
  for (const auto& subject : ds.test) {
    for (const auto& rendering : subject.renderings) {
      auto fam = std::find_if(ds.target_families.begin(), ds.target_families.end(),
                              [&](const StyleFamily& f) { return f.name == rendering.style_id; });
      const bool preprocess = fam != ds.target_families.end() && fam->preprocess_at_test;
      const Tensorf input = preprocess ? preprocess_d0(rendering.image) : rendering.image;
      MetricRecord rec;
      rec.subject_id = subject.map.subject_id;
      rec.domain = rendering.style_id;
      rec.threshold = threshold;
      rec.dice = dice(predict_mask(net, input, threshold), subject.map);
      records.push_back(std::move(rec));
    }
  }
  return records;
}

void write_metrics_csv(const std::vector<MetricRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
  out << "subject_id,domain,dice,threshold\n";
  for (const auto& r : records) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f,%.3f", r.dice, static_cast<double>(r.threshold));
    out << r.subject_id << "," << r.domain << "," << buf << "\n";
  }
}

double mean_dice(const std::vector<MetricRecord>& records) {
  if (records.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : records) total += r.dice;
  return total / static_cast<double>(records.size());
}

double mean_dice(const std::vector<MetricRecord>& records, const std::string& domain) {
  double total = 0.0;
  int n = 0;
  for (const auto& r : records)
    if (r.domain == domain) {
      total += r.dice;
      ++n;
    }
  return n == 0 ? 0.0 : total / n;
}

void AblationFlags::validate() const {
  if (l_sim && !episodic)
    throw std::invalid_argument("ablation: L_sim requires the episodic training strategy");
}

std::vector<AblationCell> run_ablation(const PseudoModalityBank& bank, const Dataset& ds,
                                       const EpisodeConfig& base_cfg, int n_seeds) {
  const AblationFlags grid[6] = {
      {false, false, false}, {false, false, true}, {true, false, false},
      {true, true, false},   {true, false, true},  {true, true, true},
  };
  std::vector<AblationCell> table;
  for (const auto& flags : grid) {
    flags.validate();
    AblationCell cell;
    cell.flags = flags;
    std::vector<std::string> domains;
    for (const auto& f : ds.target_families) domains.push_back(f.name);
    std::vector<double> domain_sums(domains.size(), 0.0);
    double overall_sum = 0.0;
    for (int s = 0; s < n_seeds; ++s) {
      EpisodeConfig cfg = base_cfg;
      cfg.seed = derive_seed(base_cfg.seed, "ablation_seed" + std::to_string(s));
      cfg.episodic = flags.episodic;
      cfg.use_sim = flags.l_sim;
      cfg.use_ncc = flags.l_ncc;
      Rng init_rng = make_rng(derive_seed(cfg.seed, "net_init"));
      auto net = make_seg_net<float>(init_rng);
      train(net, bank, cfg);
      auto records = evaluate(net, ds);
      for (size_t d = 0; d < domains.size(); ++d) domain_sums[d] += mean_dice(records, domains[d]);
      overall_sum += mean_dice(records);
    }
    for (size_t d = 0; d < domains.size(); ++d)
      cell.per_domain_dice.emplace_back(domains[d], domain_sums[d] / n_seeds);
    cell.overall = overall_sum / n_seeds;
    table.push_back(std::move(cell));
  }
  return table;
}

std::string format_ablation_table(const std::vector<AblationCell>& table) {
  std::ostringstream out;
  out << "Episodic  L_sim  L_ncc";
  if (!table.empty())
    for (const auto& [domain, _] : table.front().per_domain_dice) out << "  " << domain;
  out << "  Average\n";
  for (const auto& cell : table) {
    out << (cell.flags.episodic ? "    x    " : "    -    ")
        << (cell.flags.l_sim ? "   x   " : "   -   ") << (cell.flags.l_ncc ? "   x  " : "   -  ");
    for (const auto& [domain, d] : cell.per_domain_dice) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "  %*.4f", static_cast<int>(domain.size()), d);
      out << buf;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "   %.4f\n", cell.overall);
    out << buf;
  }
  return out.str();
}

double oracle_dice(const Dataset& ds, const StyleFamily& family, const EpisodeConfig& cfg) {
  // re-render the train subjects in the target family, train directly on it
  PseudoModalityBank oracle_bank;
  for (const auto& subject : ds.train) {
    BankEntry e;
    e.subject_id = subject.map.subject_id;
    e.y = subject.map;
    auto r = render(subject.map, family, derive_seed(cfg.seed, "oracle" + std::to_string(e.subject_id)));
    e.x0 = family.preprocess_at_test ? preprocess_d0(r.image) : r.image;
    e.x1 = e.x0;
    e.x2 = e.x0;
    e.x3 = e.x0;
    oracle_bank.push_back(std::move(e));
  }
  Rng init_rng = make_rng(derive_seed(cfg.seed, "oracle_init"));
  auto net = make_seg_net<float>(init_rng);
  train_baseline(net, oracle_bank, cfg);
  auto records = evaluate(net, ds);
  return mean_dice(records, family.name);
}

}  // namespace vdg
