#include "vesseldg/meta_trainer.hpp"

#include "vesseldg/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace vdg {

namespace {
using json = nlohmann::json;

void require_finite(float v, const std::string& component) {
  if (!std::isfinite(v))
    throw std::runtime_error("training aborted: non-finite " + component);
}

std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace

void EpisodeConfig::validate() const {
  weights.validate();
  alpha.validate();
  if (batch_size < 1) throw std::invalid_argument("EpisodeConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("EpisodeConfig: epochs must be >= 0");
  if (!(eta_train > 0) || !(eta_test > 0))
    throw std::invalid_argument("EpisodeConfig: learning rates must be positive");
  if (!(lr_decay > 0) || decay_every < 1)
    throw std::invalid_argument("EpisodeConfig: invalid decay schedule");
  if (m_samples < 1) throw std::invalid_argument("EpisodeConfig: m_samples must be >= 1");
  if (use_sim && !episodic)
    throw std::invalid_argument("EpisodeConfig: L_sim requires episodic training (no anchors otherwise)");
  if (!detach_anchor)
    throw std::invalid_argument("EpisodeConfig: only the detached anchor policy is implemented");
  if (lookahead)
    throw std::invalid_argument("EpisodeConfig: lookahead updates are reserved, not implemented");
}

float scheduled_lr(float eta, int epoch, float decay, int every) {
  return eta * std::pow(decay, static_cast<float>(epoch / every));
}

TrainerState::TrainerState(nn::ResUNet<float>& net, const EpisodeConfig& cfg)
    : opt_train(net.params()),
      opt_test(net.params()),
      shuffle_rng(make_rng(derive_seed(cfg.seed, "shuffle"))),
      mix_rng(make_rng(derive_seed(cfg.seed, "mixup"))) {}

CsvLogger::CsvLogger(const std::filesystem::path& path) : out_(path) {
  if (!out_) throw std::runtime_error("CsvLogger: cannot open " + path.string());
  out_ << "step,epoch,stage,lr,L_seg,L_sim,L_ncc,L_test\n";
}

void CsvLogger::log(long step, int epoch, const std::string& stage, float lr, float l_seg, float l_sim,
                    float l_ncc, float l_test) {
  out_ << step << "," << epoch << "," << stage << "," << fmt_float(lr) << "," << fmt_float(l_seg) << ","
       << fmt_float(l_sim) << "," << fmt_float(l_ncc) << "," << fmt_float(l_test) << "\n";
  out_.flush();
}

namespace {

std::vector<const BankEntry*> sorted_by_subject(std::vector<const BankEntry*> batch) {
  std::sort(batch.begin(), batch.end(),
            [](const BankEntry* a, const BankEntry* b) { return a->subject_id < b->subject_id; });
  return batch;
}

}  // namespace

EpisodeStats run_episode(nn::ResUNet<float>& net, const std::vector<const BankEntry*>& batch,
                         TrainerState& state, const EpisodeConfig& cfg, float lr_train, float lr_test,
                         CsvLogger* logger) {
  if (batch.empty()) throw std::invalid_argument("run_episode: empty batch");
  EpisodeStats stats;
  const int epoch = state.epoch;

  // ---- meta-train: L_seg on x1 ----
  net.zero_grad();
  const float inv_b = 1.0f / static_cast<float>(batch.size());
  for (const BankEntry* e : batch) {
    auto out = net.forward(e->x1);
    Tensorf dlogits;
    const float loss = seg_loss(out.logits, e->y, &dlogits);
    require_finite(loss, "meta-train L_seg (subject " + std::to_string(e->subject_id) + ")");
    stats.seg_train += loss * inv_b;
    dlogits.data *= inv_b;
    net.backward(dlogits);
  }
  state.opt_train.step(lr_train);
  stats.step_meta_train = ++state.step;
  if (logger)
    logger->log(stats.step_meta_train, epoch, "meta_train", lr_train, stats.seg_train, 0, 0, 0);

  // ---- meta-test: L_test on M mixup samples per subject, updated params ----
  const auto entries = sorted_by_subject(batch);
  auto samples = draw_meta_test_batch(entries, cfg.m_samples, cfg.alpha, state.mix_rng);

  // per-subject anchors: the x1 features under the updated parameters. They
  // participate in the feature losses with gradient (live anchors), so L_sim
  // is a two-sided pull and L_ncc also separates the anchors themselves.
  std::map<int, nn::VectorX<float>> anchors;
  if (cfg.use_sim || cfg.use_ncc)
    for (const BankEntry* e : batch) anchors[e->subject_id] = net.forward(e->x1).z;
  else
    for (const BankEntry* e : batch) anchors[e->subject_id] = nn::VectorX<float>::Zero(net.feature_dim());

  const int n_samples = static_cast<int>(samples.size());
  const float inv_n = 1.0f / static_cast<float>(n_samples);
  std::vector<Tensorf> dlogits_seg(n_samples);
  std::vector<nn::VectorX<float>> zs(n_samples);

  for (int si = 0; si < n_samples; ++si) {
    auto out = net.forward(samples[si].image);
    const float loss = seg_loss(out.logits, entries[si / cfg.m_samples]->y, &dlogits_seg[si]);
    require_finite(loss, "meta-test L_seg (subject " + std::to_string(samples[si].subject_id) + ")");
    stats.seg_test += loss * inv_n;
    zs[si] = out.z;
  }

  // the cosine-based feature losses see unit-normalized taps; keep norms and
  // unit vectors so the loss gradients can be backprojected through the
  // normalization (scale invariance makes the loss values themselves
  // indifferent to the normalization, but it tames the gradient magnitude)
  std::vector<float> znorm(n_samples);
  std::vector<nn::VectorX<float>> zhat(n_samples);
  for (int si = 0; si < n_samples; ++si) {
    znorm[si] = std::max(zs[si].norm(), 1e-12f);
    zhat[si] = zs[si] / znorm[si];
  }
  std::map<int, float> anorm;
  std::map<int, nn::VectorX<float>> ahat;
  for (auto& kv : anchors) {
    anorm[kv.first] = std::max(kv.second.norm(), 1e-12f);
    ahat[kv.first] = kv.second / anorm[kv.first];
  }

  // rows: per subject ascending, anchor first, then samples by index
  FeatureBatch<float> features;
  std::vector<int> sample_row(n_samples, -1);
  int row = 0;
  for (size_t ei = 0; ei < entries.size(); ++ei) {
    features.add(ahat.at(entries[ei]->subject_id), entries[ei]->subject_id, true);
    ++row;
    for (int m = 0; m < cfg.m_samples; ++m) {
      const int si = static_cast<int>(ei) * cfg.m_samples + m;
      features.add(zhat[si], samples[si].subject_id, false);
      sample_row[si] = row++;
    }
  }

  // L_sim: pull sample features and their subject's anchor toward each other
  std::vector<nn::VectorX<float>> dz(n_samples, nn::VectorX<float>::Zero(net.feature_dim()));
  std::vector<nn::VectorX<float>> danchor(entries.size(),
                                          nn::VectorX<float>::Zero(net.feature_dim()));
  if (cfg.use_sim) {
    const float inv_subj = 1.0f / static_cast<float>(entries.size());
    for (size_t ei = 0; ei < entries.size(); ++ei) {
      const auto& anchor = ahat.at(entries[ei]->subject_id);
      std::vector<nn::VectorX<float>> subject_samples, grads;
      for (int m = 0; m < cfg.m_samples; ++m) subject_samples.push_back(zhat[ei * cfg.m_samples + m]);
      stats.sim += sim_loss(anchor, subject_samples, &grads) * inv_subj;
      for (int m = 0; m < cfg.m_samples; ++m) {
        const nn::VectorX<float> g = static_cast<float>(cfg.weights.w_sim) * inv_subj * grads[m];
        dz[ei * cfg.m_samples + m] += g;
        danchor[ei] -= g;
      }
    }
    require_finite(stats.sim, "meta-test L_sim");
  }

  if (cfg.use_ncc) {
    auto m = ncc_matrix(features);
    stats.ncc = ncc_loss(m);
    require_finite(stats.ncc, "meta-test L_ncc");
    auto g = ncc_loss_grad(features, m);
    for (int si = 0; si < n_samples; ++si)
      dz[si] += static_cast<float>(cfg.weights.w_ncc) * g.row(sample_row[si]).transpose();
    int arow = 0;
    for (size_t ei = 0; ei < entries.size(); ++ei) {
      danchor[ei] += static_cast<float>(cfg.weights.w_ncc) * g.row(arow).transpose();
      arow += 1 + cfg.m_samples;
    }
  }

  // chain rule through z / |z|: dL/dz = (I - zzT/|z|^2) dL/dzhat / |z|
  for (int si = 0; si < n_samples; ++si)
    dz[si] = (dz[si] - zhat[si] * zhat[si].dot(dz[si])) / znorm[si];
  for (size_t ei = 0; ei < entries.size(); ++ei) {
    const auto& h = ahat.at(entries[ei]->subject_id);
    danchor[ei] = (danchor[ei] - h * h.dot(danchor[ei])) / anorm.at(entries[ei]->subject_id);
  }

  stats.total = meta_test_loss(stats.seg_test, stats.sim, stats.ncc, cfg.weights);

  // second forward per sample to rebuild activations, then backward with the
  // combined logits- and feature-gradients
  net.zero_grad();
  const float w_seg = static_cast<float>(cfg.weights.w_seg);
  for (int si = 0; si < n_samples; ++si) {
    net.forward(samples[si].image);
    dlogits_seg[si].data *= w_seg * inv_n;
    net.backward(dlogits_seg[si], &dz[si]);
  }
  if (cfg.use_sim || cfg.use_ncc) {
    for (size_t ei = 0; ei < entries.size(); ++ei) {
      auto out = net.forward(entries[ei]->x1);
      Tensorf zero_dl(out.logits.c, out.logits.h, out.logits.w);
      net.backward(zero_dl, &danchor[ei]);
    }
  }
  state.opt_test.step(lr_test);
  stats.step_meta_test = ++state.step;
  if (logger)
    logger->log(stats.step_meta_test, epoch, "meta_test", lr_test, stats.seg_test, stats.sim, stats.ncc,
                stats.total);
  return stats;
}

namespace {

/// Non-episodic step: L_seg on x0 (optionally + w_ncc * L_ncc over the
/// feature stack of x0 images and mixup samples).
EpisodeStats run_single_stage(nn::ResUNet<float>& net, const std::vector<const BankEntry*>& batch,
                              TrainerState& state, const EpisodeConfig& cfg, float lr,
                              CsvLogger* logger) {
  EpisodeStats stats;
  const auto entries = sorted_by_subject(batch);
  const float inv_b = 1.0f / static_cast<float>(entries.size());

  std::vector<Tensorf> dlogits(entries.size());
  std::vector<nn::VectorX<float>> zs(entries.size());
  for (size_t i = 0; i < entries.size(); ++i) {
    auto out = net.forward(entries[i]->x0);
    const float loss = seg_loss(out.logits, entries[i]->y, &dlogits[i]);
    require_finite(loss, "L_seg (subject " + std::to_string(entries[i]->subject_id) + ")");
    stats.seg_train += loss * inv_b;
    zs[i] = out.z;
  }

  std::vector<MixupSample> samples;
  std::vector<nn::VectorX<float>> sample_z;
  FeatureBatch<float> features;
  if (cfg.use_ncc) {
    samples = draw_meta_test_batch(entries, cfg.m_samples, cfg.alpha, state.mix_rng);
    sample_z.resize(samples.size());
    for (size_t si = 0; si < samples.size(); ++si) sample_z[si] = net.forward(samples[si].image).z;
    // same unit-normalized tap as the episodic path
    auto normed = [](const nn::VectorX<float>& z, float& n) {
      n = std::max(z.norm(), 1e-12f);
      return nn::VectorX<float>(z / n);
    };
    std::vector<float> zn(entries.size()), sn(samples.size());
    std::vector<nn::VectorX<float>> zh(entries.size()), sh(samples.size());
    for (size_t i = 0; i < entries.size(); ++i) zh[i] = normed(zs[i], zn[i]);
    for (size_t si = 0; si < samples.size(); ++si) sh[si] = normed(sample_z[si], sn[si]);
    for (size_t i = 0; i < entries.size(); ++i) {
      features.add(zh[i], entries[i]->subject_id, true);
      for (int m = 0; m < cfg.m_samples; ++m)
        features.add(sh[i * cfg.m_samples + m], entries[i]->subject_id, false);
    }
    auto mat = ncc_matrix(features);
    stats.ncc = ncc_loss(mat);
    require_finite(stats.ncc, "L_ncc");

    net.zero_grad();
    auto g = ncc_loss_grad(features, mat);
    const float w_ncc = static_cast<float>(cfg.weights.w_ncc);
    auto through_norm = [](const nn::VectorX<float>& h, float n, const nn::VectorX<float>& d) {
      return nn::VectorX<float>((d - h * h.dot(d)) / n);
    };
    int row = 0;
    for (size_t i = 0; i < entries.size(); ++i) {
      net.forward(entries[i]->x0);
      nn::VectorX<float> dz = through_norm(zh[i], zn[i], w_ncc * g.row(row++).transpose());
      dlogits[i].data *= inv_b;
      net.backward(dlogits[i], &dz);
      for (int m = 0; m < cfg.m_samples; ++m) {
        const size_t si = i * cfg.m_samples + m;
        net.forward(samples[si].image);
        nn::VectorX<float> dzs = through_norm(sh[si], sn[si], w_ncc * g.row(row++).transpose());
        Tensorf zero_dlogits(2, samples[si].image.h, samples[si].image.w);
        net.backward(zero_dlogits, &dzs);
      }
    }
  } else {
    net.zero_grad();
    for (size_t i = 0; i < entries.size(); ++i) {
      net.forward(entries[i]->x0);
      dlogits[i].data *= inv_b;
      net.backward(dlogits[i]);
    }
  }

  state.opt_train.step(lr);
  stats.step_meta_train = ++state.step;
  stats.total = stats.seg_train + static_cast<float>(cfg.weights.w_ncc) * stats.ncc;
  if (logger)
    logger->log(stats.step_meta_train, state.epoch, "train", lr, stats.seg_train, 0, stats.ncc,
                stats.total);
  return stats;
}

void save_trainer_checkpoint(const std::filesystem::path& path, nn::ResUNet<float>& net,
                             TrainerState& state, const EpisodeConfig& cfg) {
  std::vector<nn::ParamTensor<float>> moment_storage;
  std::vector<nn::ParamTensor<float>*> all = net.params();
  auto net_params = net.params();
  auto add_moments = [&](nn::Adam<float>& opt, const std::string& prefix) {
    for (size_t i = 0; i < net_params.size(); ++i) {
      nn::ParamTensor<float> m;
      m.name = prefix + ".m." + net_params[i]->name;
      m.value = opt.moment1()[i];
      moment_storage.push_back(std::move(m));
      nn::ParamTensor<float> v;
      v.name = prefix + ".v." + net_params[i]->name;
      v.value = opt.moment2()[i];
      moment_storage.push_back(std::move(v));
    }
  };
  add_moments(state.opt_train, "opt_train");
  add_moments(state.opt_test, "opt_test");
  for (auto& m : moment_storage) all.push_back(&m);

  json meta;
  meta["config"] = json::parse(episode_config_to_json(cfg));
  meta["epoch"] = state.epoch;
  meta["step"] = state.step;
  meta["t_train"] = state.opt_train.timestep();
  meta["t_test"] = state.opt_test.timestep();
  std::ostringstream sh, mx;
  sh << state.shuffle_rng;
  mx << state.mix_rng;
  meta["shuffle_rng"] = sh.str();
  meta["mix_rng"] = mx.str();
  save_checkpoint(path, all, meta.dump());
}

void load_trainer_checkpoint(const std::filesystem::path& path, nn::ResUNet<float>& net,
                             TrainerState& state) {
  auto net_params = net.params();
  std::vector<nn::ParamTensor<float>> moment_storage;
  auto reserve_moments = [&](nn::Adam<float>& opt, const std::string& prefix) {
    for (size_t i = 0; i < net_params.size(); ++i) {
      nn::ParamTensor<float> m;
      m.name = prefix + ".m." + net_params[i]->name;
      m.value.resize(opt.moment1()[i].rows(), opt.moment1()[i].cols());
      moment_storage.push_back(std::move(m));
      nn::ParamTensor<float> v;
      v.name = prefix + ".v." + net_params[i]->name;
      v.value.resize(opt.moment2()[i].rows(), opt.moment2()[i].cols());
      moment_storage.push_back(std::move(v));
    }
  };
  reserve_moments(state.opt_train, "opt_train");
  reserve_moments(state.opt_test, "opt_test");
  std::vector<nn::ParamTensor<float>*> all = net_params;
  for (auto& m : moment_storage) all.push_back(&m);

  json meta = json::parse(load_checkpoint(path, all));
  state.epoch = meta.at("epoch");
  state.step = meta.at("step");
  state.opt_train.timestep() = meta.at("t_train");
  state.opt_test.timestep() = meta.at("t_test");
  std::istringstream sh(meta.at("shuffle_rng").get<std::string>()),
      mx(meta.at("mix_rng").get<std::string>());
  sh >> state.shuffle_rng;
  mx >> state.mix_rng;
  size_t idx = 0;
  for (size_t i = 0; i < net_params.size(); ++i) {
    state.opt_train.moment1()[i] = moment_storage[idx++].value;
    state.opt_train.moment2()[i] = moment_storage[idx++].value;
  }
  for (size_t i = 0; i < net_params.size(); ++i) {
    state.opt_test.moment1()[i] = moment_storage[idx++].value;
    state.opt_test.moment2()[i] = moment_storage[idx++].value;
  }
}

EpisodeReport train_loop(nn::ResUNet<float>& net, const PseudoModalityBank& bank,
                         const EpisodeConfig& cfg, TrainerState& state,
                         const std::filesystem::path& out_dir) {
  cfg.validate();
  if (bank.empty()) throw std::invalid_argument("train: empty bank");

  std::unique_ptr<CsvLogger> logger;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    logger = std::make_unique<CsvLogger>(out_dir / "train_log.csv");
  }

  EpisodeReport report;
  for (; state.epoch < cfg.epochs; ++state.epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const float lr_train = scheduled_lr(cfg.eta_train, state.epoch, cfg.lr_decay, cfg.decay_every);
    const float lr_test = scheduled_lr(cfg.eta_test, state.epoch, cfg.lr_decay, cfg.decay_every);
    // shuffle from the canonical order every epoch so a resumed run replays
    // the exact same permutations from the restored rng state
    std::vector<const BankEntry*> order;
    for (const auto& e : bank) order.push_back(&e);
    std::shuffle(order.begin(), order.end(), state.shuffle_rng);

    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.lr_train = lr_train;
    rec.lr_test = lr_test;
    int n_batches = 0;
    for (size_t i = 0; i < order.size(); i += cfg.batch_size) {
      std::vector<const BankEntry*> batch(order.begin() + i,
                                          order.begin() + std::min(i + cfg.batch_size, order.size()));
      EpisodeStats stats = cfg.episodic
                               ? run_episode(net, batch, state, cfg, lr_train, lr_test, logger.get())
                               : run_single_stage(net, batch, state, cfg, lr_train, logger.get());
      rec.meta_train_seg += stats.seg_train;
      rec.meta_test_seg += stats.seg_test;
      rec.meta_test_sim += stats.sim;
      rec.meta_test_ncc += stats.ncc;
      rec.meta_test_total += stats.total;
      ++n_batches;
    }
    rec.meta_train_seg /= n_batches;
    rec.meta_test_seg /= n_batches;
    rec.meta_test_sim /= n_batches;
    rec.meta_test_ncc /= n_batches;
    rec.meta_test_total /= n_batches;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);

    if (!out_dir.empty()) {
      char name[48];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%03d.ckpt", state.epoch);
      save_trainer_checkpoint(out_dir / name, net, state, cfg);
    }
  }
  if (!out_dir.empty()) {
    report.final_checkpoint = out_dir / "final.ckpt";
    save_trainer_checkpoint(report.final_checkpoint, net, state, cfg);
  }
  return report;
}

}  // namespace

std::string episode_config_to_json(const EpisodeConfig& cfg) {
  json j;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["eta_train"] = cfg.eta_train;
  j["eta_test"] = cfg.eta_test;
  j["lr_decay"] = cfg.lr_decay;
  j["decay_every"] = cfg.decay_every;
  j["w_seg"] = cfg.weights.w_seg;
  j["w_sim"] = cfg.weights.w_sim;
  j["w_ncc"] = cfg.weights.w_ncc;
  j["alpha"] = {cfg.alpha.alpha[0], cfg.alpha.alpha[1], cfg.alpha.alpha[2]};
  j["m_samples"] = cfg.m_samples;
  j["seed"] = cfg.seed;
  j["episodic"] = cfg.episodic;
  j["use_sim"] = cfg.use_sim;
  j["use_ncc"] = cfg.use_ncc;
  j["detach_anchor"] = cfg.detach_anchor;
  j["lookahead"] = cfg.lookahead;
  return j.dump();
}

EpisodeConfig episode_config_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  EpisodeConfig cfg;  // absent keys keep their defaults
  auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
  };
  get("batch_size", cfg.batch_size);
  get("epochs", cfg.epochs);
  get("eta_train", cfg.eta_train);
  get("eta_test", cfg.eta_test);
  get("lr_decay", cfg.lr_decay);
  get("decay_every", cfg.decay_every);
  get("w_seg", cfg.weights.w_seg);
  get("w_sim", cfg.weights.w_sim);
  get("w_ncc", cfg.weights.w_ncc);
  if (j.contains("alpha"))
    cfg.alpha.alpha = Eigen::Vector3d(j.at("alpha")[0], j.at("alpha")[1], j.at("alpha")[2]);
  get("m_samples", cfg.m_samples);
  get("seed", cfg.seed);
  get("episodic", cfg.episodic);
  get("use_sim", cfg.use_sim);
  get("use_ncc", cfg.use_ncc);
  get("detach_anchor", cfg.detach_anchor);
  get("lookahead", cfg.lookahead);
  return cfg;
}

EpisodeReport train(nn::ResUNet<float>& net, const PseudoModalityBank& bank, const EpisodeConfig& cfg,
                    const std::filesystem::path& out_dir) {
  TrainerState state(net, cfg);
  return train_loop(net, bank, cfg, state, out_dir);
}

EpisodeReport train_baseline(nn::ResUNet<float>& net, const PseudoModalityBank& bank,
                             const EpisodeConfig& cfg, const std::filesystem::path& out_dir) {
  EpisodeConfig c = cfg;
  c.episodic = false;
  c.use_sim = false;
  c.use_ncc = false;
  TrainerState state(net, c);
  return train_loop(net, bank, c, state, out_dir);
}

EpisodeReport resume_train(nn::ResUNet<float>& net, const PseudoModalityBank& bank,
                           const EpisodeConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir) {
  TrainerState state(net, cfg);
  load_trainer_checkpoint(checkpoint, net, state);
  ++state.epoch;  // checkpoint is written after its epoch completes
  return train_loop(net, bank, cfg, state, out_dir);
}

}  // namespace vdg
