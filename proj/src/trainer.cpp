#include "featreplay/trainer.hpp"

#include "featreplay/errors.hpp"
#include "featreplay/nn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace featreplay {

std::string to_string(Method method) {
  switch (method) {
    case Method::Ccvae: return "ccvae";
    case Method::CvaeTaskOnly: return "cvae_task_only";
    case Method::Sequential: return "sequential";
    case Method::Ewc: return "ewc";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (Method m : {Method::Ccvae, Method::CvaeTaskOnly, Method::Sequential, Method::Ewc}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name + "'");
}

bool uses_vae(Method method) { return method == Method::Ccvae || method == Method::CvaeTaskOnly; }

std::string to_string(Scorer scorer) {
  switch (scorer) {
    case Scorer::Reconstruction: return "reconstruction";
    case Scorer::Mahalanobis: return "mahalanobis";
    case Scorer::MaxSoftmax: return "max_softmax";
  }
  return "unknown";
}

void TrajectoryConfig::validate() const {
  if (eval_every < 1 || epochs_per_task < eval_every) throw ConfigError("schedule: need epochs_per_task >= eval_every >= 1");
  if (vae_epochs < 1 || batch_size < 1 || vae_batch_size < 2) throw ConfigError("schedule: vae_epochs, batch sizes must be positive (VAE batch >= 2)");
  if (!(optimizer.lr > 0.0) || !(optimizer.lr_decay > 0.0) || optimizer.lr_decay > 1.0) throw ConfigError("optimizer: lr > 0 and decay in (0, 1]");
  if (ewc_lambda < 0.0) throw ConfigError("ewc_lambda must be non-negative");
  if (!(vae_beta > 0.0) || beta_warmup < 0.0 || beta_warmup > 1.0) throw ConfigError("vae_beta > 0 and beta_warmup in [0, 1] required");
  if (skip_dropout < 0.0 || skip_dropout >= 1.0) throw ConfigError("skip_dropout must lie in [0, 1)");
  if (memory_per_task < 0) throw ConfigError("memory_per_task must be non-negative");
  unet.validate();
  vae.validate();
}

nlohmann::json TrajectoryConfig::to_json() const {
  return {{"method", to_string(method)},
          {"epochs_per_task", epochs_per_task},
          {"vae_epochs", vae_epochs},
          {"batch_size", batch_size},
          {"vae_batch_size", vae_batch_size},
          {"optimizer", {{"lr", optimizer.lr}, {"lr_decay", optimizer.lr_decay}}},
          {"eval_every", eval_every},
          {"ewc_lambda", ewc_lambda},
          {"vae_beta", vae_beta},
          {"beta_warmup", beta_warmup},
          {"skip_dropout", skip_dropout},
          {"memory_per_task", memory_per_task},
          {"artifact_augmentation", artifact_augmentation},
          {"artifacts",
           {{"bias_order", artifacts.bias_order()},
            {"bias_coeff_range", artifacts.bias_coeff_range()},
            {"ghosts", artifacts.ghosts()},
            {"ghost_axis", artifacts.ghost_axis()},
            {"ghost_intensity", artifacts.ghost_intensity()},
            {"spikes", artifacts.spikes()},
            {"spike_amplitude", artifacts.spike_amplitude()}}},
          {"seed", seed},
          {"artifact_seed", artifact_seed},
          {"unet", unet.to_json()},
          {"vae", vae.to_json()}};
}

TrajectoryConfig TrajectoryConfig::from_json(const nlohmann::json& j) {
  TrajectoryConfig c;
  try {
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    c.epochs_per_task = j.value("epochs_per_task", c.epochs_per_task);
    c.vae_epochs = j.value("vae_epochs", c.vae_epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.vae_batch_size = j.value("vae_batch_size", c.vae_batch_size);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      c.optimizer.lr = o.value("lr", c.optimizer.lr);
      c.optimizer.lr_decay = o.value("lr_decay", c.optimizer.lr_decay);
    }
    c.eval_every = j.value("eval_every", c.eval_every);
    c.ewc_lambda = j.value("ewc_lambda", c.ewc_lambda);
    c.vae_beta = j.value("vae_beta", c.vae_beta);
    c.beta_warmup = j.value("beta_warmup", c.beta_warmup);
    c.skip_dropout = j.value("skip_dropout", c.skip_dropout);
    c.memory_per_task = j.value("memory_per_task", c.memory_per_task);
    c.artifact_augmentation = j.value("artifact_augmentation", c.artifact_augmentation);
    if (j.contains("artifacts")) {
      const auto& a = j.at("artifacts");
      const ArtifactStrengths d;
      c.artifacts = ArtifactStrengths(a.value("bias_order", d.bias_order()), a.value("bias_coeff_range", d.bias_coeff_range()),
                                      a.value("ghosts", d.ghosts()), a.value("ghost_axis", d.ghost_axis()),
                                      a.value("ghost_intensity", d.ghost_intensity()), a.value("spikes", d.spikes()),
                                      a.value("spike_amplitude", d.spike_amplitude()));
    }
    c.seed = j.value("seed", c.seed);
    c.artifact_seed = j.value("artifact_seed", c.artifact_seed);
    if (j.contains("unet")) c.unet = UNetConfig::from_json(j.at("unet"));
    if (j.contains("vae")) c.vae = CcvaeConfig::from_json(j.at("vae"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("trajectory config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<SliceSample> task_slices(const std::vector<Volume>& volumes, int task, const UNetConfig& cfg) {
  std::vector<SliceSample> out;
  for (const Volume& v : volumes) {
    for (auto& s : slice_volume(v, task, cfg.height, cfg.width)) out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng.shuffle(idx);
  return idx;
}

// Batches of `size` over a shuffled order; a trailing singleton joins the previous batch.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, int size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(size)) {
    const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

FeatureBatch select(const FeatureBatch& data, const std::vector<std::size_t>& idx) {
  FeatureBatch out;
  out.features.resize(data.features.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.features.col(static_cast<Eigen::Index>(k)) = data.features.col(static_cast<Eigen::Index>(idx[k]));
    out.tasks.push_back(data.tasks[idx[k]]);
    out.slices.push_back(data.slices[idx[k]]);
  }
  return out;
}

}  // namespace

double ewc_penalty(const std::vector<nn::Param*>& params, const std::vector<EwcAnchor>& anchors, double lambda, bool add_grad) {
  double total = 0.0;
  for (const EwcAnchor& a : anchors) {
    if (a.fisher.size() != params.size() || a.theta.size() != params.size()) throw InputError("ewc_penalty: anchor/parameter mismatch");
    for (std::size_t k = 0; k < params.size(); ++k) {
      const Mat diff = params[k]->value - a.theta[k];
      total += (a.fisher[k].array() * diff.array().square()).sum();
      if (add_grad) params[k]->grad += lambda * a.fisher[k].cwiseProduct(diff);
    }
  }
  return 0.5 * lambda * total;
}

std::vector<double> train_segmenter(UNet2D& unet, const std::vector<SliceSample>& slices, const Memory* memory,
                                    const std::vector<EwcAnchor>& anchors, const TrajectoryConfig& cfg, Rng& rng, const EpochHook& hook) {
  if (slices.empty()) throw InputError("train_segmenter: no training slices");
  const bool replay = memory && !memory->empty();
  nn::Adam opt(unet.trainable_params(), cfg.optimizer);
  const std::vector<nn::Param*> all = unet.all_params();
  const int classes = unet.config().classes;
  const Eigen::Index plane = static_cast<Eigen::Index>(unet.config().height) * unet.config().width;
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
    double total = 0.0;
    int steps = 0;
    for (const auto& batch : make_batches(shuffled_indices(slices.size(), rng), cfg.batch_size)) {
      std::vector<const SliceSample*> ptrs;
      std::vector<std::uint8_t> labels;
      std::vector<bool> keep;
      for (std::size_t i : batch) {
        ptrs.push_back(&slices[i]);
        labels.insert(labels.end(), slices[i].mask.begin(), slices[i].mask.end());
        keep.push_back(cfg.skip_dropout <= 0.0 || rng.uniform() >= cfg.skip_dropout);
      }
      Mat pseudo;
      Mat targets;
      if (replay) {
        const auto n = static_cast<Eigen::Index>(batch.size());
        pseudo.resize(memory->entries.front().u.size(), n);
        targets.resize(classes, n * plane);
        for (Eigen::Index k = 0; k < n; ++k) {
          const MemoryEntry& e = memory->entries[rng.index(memory->size())];
          pseudo.col(k) = e.u;
          targets.middleCols(k * plane, plane) = e.soft_label;
        }
      }
      opt.zero_grad();
      const nn::FeatureMap logits = unet.forward_train(UNet2D::pack_images(ptrs), keep, replay ? &pseudo : nullptr);
      const int real = static_cast<int>(batch.size());
      nn::LossGrad lg = nn::cross_entropy_dice(nn::slice_batch(logits, 0, real), labels);
      nn::FeatureMap dlogits = logits;
      dlogits.data.leftCols(lg.dlogits.cols()) = lg.dlogits;
      double loss = lg.loss;
      if (replay) {
        const nn::LossGrad mg = nn::soft_cross_entropy(nn::slice_batch(logits, real, real), targets);
        dlogits.data.rightCols(mg.dlogits.cols()) = mg.dlogits;
        loss += mg.loss;
      }
      unet.backward(dlogits);
      if (!anchors.empty()) loss += ewc_penalty(all, anchors, cfg.ewc_lambda, true);
      opt.step();
      total += loss;
      ++steps;
    }
    opt.end_epoch();
    losses.push_back(total / steps);
    if (hook) hook(epoch, losses.back());
  }
  return losses;
}

FeatureStats train_first_task(UNet2D& unet, const std::vector<SliceSample>& slices, const TrajectoryConfig& cfg, Rng& rng,
                              const EpochHook& hook) {
  train_segmenter(unet, slices, nullptr, {}, cfg, rng, hook);
  unet.freeze_encoder();
  return FeatureStats::fit(unet.encode_features(slices));
}

FeatureBatch real_feature_batch(const UNet2D& unet, const std::vector<SliceSample>& slices, const Ccvae& vae) {
  FeatureBatch out;
  for (const auto& s : slices) {
    out.tasks.push_back(s.task);
    out.slices.push_back(s.s);
  }
  out.features = vae.normalize(unet.encode_features(slices), out.tasks);
  return out;
}

FeatureBatch memory_feature_batch(const Memory& memory, const Ccvae& vae) {
  FeatureBatch out;
  if (memory.empty()) return out;
  Mat u(memory.entries.front().u.size(), static_cast<Eigen::Index>(memory.size()));
  for (std::size_t k = 0; k < memory.size(); ++k) {
    u.col(static_cast<Eigen::Index>(k)) = memory.entries[k].u;
    out.tasks.push_back(memory.entries[k].task);
    out.slices.push_back(memory.entries[k].s);
  }
  out.features = vae.normalize(u, out.tasks);
  return out;
}

FeatureBatch concat_batches(const FeatureBatch& a, const FeatureBatch& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.features.rows() != b.features.rows()) throw InputError("concat_batches: width mismatch");
  FeatureBatch out;
  out.features.resize(a.features.rows(), a.size() + b.size());
  out.features << a.features, b.features;
  out.tasks = a.tasks;
  out.tasks.insert(out.tasks.end(), b.tasks.begin(), b.tasks.end());
  out.slices = a.slices;
  out.slices.insert(out.slices.end(), b.slices.begin(), b.slices.end());
  return out;
}

std::vector<double> train_vae_stage(Ccvae& vae, const FeatureBatch& data, const TrajectoryConfig& cfg, Rng& rng) {
  if (data.size() < 2) throw InputError("train_vae_stage: need at least two feature vectors");
  nn::Adam opt(vae.params(), cfg.optimizer);
  const int warm = std::max(1, static_cast<int>(std::lround(cfg.beta_warmup * cfg.vae_epochs)));
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.vae_epochs; ++epoch) {
    const double beta = cfg.vae_beta * std::min(1.0, static_cast<double>(epoch + 1) / warm);
    double total = 0.0;
    int steps = 0;
    for (const auto& idx : make_batches(shuffled_indices(static_cast<std::size_t>(data.size()), rng), cfg.vae_batch_size)) {
      opt.zero_grad();
      total += vae.train_step(select(data, idx), beta, rng).total;
      opt.step();
      ++steps;
    }
    opt.end_epoch();
    losses.push_back(total / steps);
  }
  for (int t : data.tasks) {
    if (!vae.seen_tasks().contains(t)) vae.mark_task_seen(t);
  }
  return losses;
}

ContinualStepLog continual_step(UNet2D& unet, Ccvae& vae, const std::vector<SliceSample>& new_slices, int new_task,
                                const std::vector<int>& tasks_seen, const TrajectoryConfig& cfg, Rng& rng,
                                std::map<int, DiagGaussian>* gaussians, const EpochHook& hook) {
  if (!unet.encoder_frozen()) throw StateError("continual_step: encoder must be frozen");
  if (new_slices.empty()) throw InputError("continual_step: no slices for the new task");
  ContinualStepLog log;
  const int per_task = cfg.memory_per_task > 0 ? cfg.memory_per_task : static_cast<int>(new_slices.size());
  Memory memory = build_memory(vae, unet, tasks_seen, per_task, rng.next_u64());
  log.memory_entries = memory.size();

  log.decoder_losses = train_segmenter(unet, new_slices, &memory, {}, cfg, rng, hook);

  for (const auto& s : new_slices) {
    if (s.task != new_task) throw InputError("continual_step: slice task does not match new_task");
  }
  vae.set_stats(new_task, FeatureStats::fit(unet.encode_features(new_slices)));
  const FeatureBatch real = real_feature_batch(unet, new_slices, vae);
  const FeatureBatch pseudo = memory_feature_batch(memory, vae);
  log.vae_losses = train_vae_stage(vae, concat_batches(real, pseudo), cfg, rng);

  if (gaussians) {
    for (int t : tasks_seen) {
      std::vector<std::size_t> idx;
      for (std::size_t k = 0; k < pseudo.tasks.size(); ++k) {
        if (pseudo.tasks[k] == t) idx.push_back(k);
      }
      if (idx.size() >= 2) (*gaussians)[t] = fit_gaussian(vae.encode_batch(select(pseudo, idx)).first);
    }
    (*gaussians)[new_task] = fit_gaussian(vae.encode_batch(real).first);
  }
  flush_memory(memory);
  return log;
}

std::vector<Mat> ewc_fisher(UNet2D& unet, const std::vector<SliceSample>& slices) {
  if (slices.empty()) throw InputError("ewc_fisher: no slices");
  const std::vector<nn::Param*> params = unet.all_params();
  std::vector<Mat> fisher;
  for (auto* p : params) fisher.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  for (const SliceSample& s : slices) {
    for (auto* p : params) p->zero_grad();
    nn::FeatureMap logits = unet.forward_train(UNet2D::pack_images({&s}), {true}, nullptr, nn::Mode::Eval);
    // d(-sum log p(argmax)) / d logits = softmax - onehot(argmax).
    Mat d = nn::softmax_channels(logits.data);
    for (Eigen::Index c = 0; c < d.cols(); ++c) {
      Eigen::Index best = 0;
      d.col(c).maxCoeff(&best);
      d(best, c) -= 1.0;
    }
    logits.data = std::move(d);
    unet.backward(logits);
    for (std::size_t k = 0; k < params.size(); ++k) fisher[k] += params[k]->grad.cwiseAbs2();
  }
  for (auto& f : fisher) f /= static_cast<double>(slices.size());
  for (auto* p : params) p->zero_grad();
  return fisher;
}

double mean_reconstruction_error(const Ccvae& vae, const UNet2D& unet, const std::vector<Volume>& volumes, int task) {
  if (volumes.empty()) throw InputError("mean_reconstruction_error: no volumes");
  FeatureBatch batch = real_feature_batch(unet, task_slices(volumes, task, unet.config()), vae);
  return vae.reconstruction_errors(batch).mean();
}

// --- evaluation ---------------------------------------------------------------------------

namespace {

struct EvalItem {
  const Volume* volume = nullptr;
  int task = -1;
  std::string kind;
  int source = -1;
};

struct Prediction {
  double dice = 0.0;
  EceAccumulator ece;
};

Prediction predict_eval(const UNet2D& unet, const Volume& v) {
  const UNetConfig& cfg = unet.config();
  const auto maps = unet.predict_volume(v);
  const auto slices = slice_volume(v, 0, cfg.height, cfg.width);
  Prediction out;
  std::vector<std::vector<std::uint8_t>> labels;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    const Mat& p = maps[k];
    std::vector<std::uint8_t> pred(static_cast<std::size_t>(p.cols()));
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      Eigen::Index best = 0;
      const double conf = p.col(c).maxCoeff(&best);
      pred[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(best);
      out.ece.add(std::min(conf, 1.0), best == slices[k].mask[static_cast<std::size_t>(c)]);
    }
    labels.push_back(std::move(pred));
  }
  out.dice = dice(restack_slices(v, labels, cfg.height, cfg.width), v.mask, cfg.classes);
  return out;
}

double score_volume(Scorer scorer, const UNet2D& unet, const Ccvae* vae, const std::map<int, DiagGaussian>& gaussians,
                    const std::vector<int>& seen, const Volume& v, TaskScores* detail) {
  TaskScores ts;
  switch (scorer) {
    case Scorer::Reconstruction: ts = reconstruction_score(*vae, unet, v, seen); break;
    case Scorer::Mahalanobis: ts = mahalanobis_score(*vae, unet, v, seen, gaussians); break;
    case Scorer::MaxSoftmax:
      ts.score = max_softmax_score(unet, v);
      ts.best_task = -1;
      break;
  }
  if (detail) *detail = ts;
  return ts.score;
}

}  // namespace

StageResult evaluate_stage(const TaskStream& stream, int stage, const UNet2D& unet, const Ccvae* vae,
                           const std::map<int, DiagGaussian>& gaussians, const TrajectoryConfig& cfg) {
  const int n_tasks = static_cast<int>(stream.tasks.size());
  if (stage < 0 || stage >= n_tasks) throw InputError("evaluate_stage: stage out of range");
  std::vector<int> seen(static_cast<std::size_t>(stage + 1));
  std::iota(seen.begin(), seen.end(), 0);

  // Evaluation pool: originals of every task, their artifact copies, the held-out domain.
  std::vector<std::vector<AugmentedVolume>> augmented(static_cast<std::size_t>(n_tasks));
  std::vector<EvalItem> items;
  for (int t = 0; t < n_tasks; ++t) {
    for (const Volume& v : stream.tasks[static_cast<std::size_t>(t)].test) items.push_back({&v, t, "original", -1});
  }
  if (cfg.artifact_augmentation) {
    int offset = 0;
    for (int t = 0; t < n_tasks; ++t) {
      const auto& tests = stream.tasks[static_cast<std::size_t>(t)].test;
      if (!tests.empty()) augmented[static_cast<std::size_t>(t)] = augment_test_set(tests, cfg.artifacts, derive_seed(cfg.artifact_seed, t));
      for (std::size_t i = 0; i < tests.size(); ++i) {
        const AugmentedVolume& a = augmented[static_cast<std::size_t>(t)][tests.size() + i];
        items.push_back({&a.volume, t, to_string(a.kind), offset + static_cast<int>(i)});
      }
      offset += static_cast<int>(tests.size());
    }
  }
  if (stream.has_ood_task) {
    for (const Volume& v : stream.ood_task.test) items.push_back({&v, -1, "ood_domain", -1});
  }

  StageResult result;
  result.stage = stage;
  result.task_name = stream.tasks[static_cast<std::size_t>(stage)].name;
  std::vector<Prediction> preds;
  std::vector<std::vector<double>> per_task(static_cast<std::size_t>(n_tasks));
  std::vector<double> all_dice;
  EceAccumulator ece_all;
  for (const EvalItem& it : items) {
    preds.push_back(predict_eval(unet, *it.volume));
    result.volumes.push_back({it.volume->subject_id, it.task, it.kind, it.source, 100.0 * preds.back().dice});
    if (it.kind == "original") per_task[static_cast<std::size_t>(it.task)].push_back(100.0 * preds.back().dice);
    all_dice.push_back(100.0 * preds.back().dice);
    ece_all.merge(preds.back().ece);
  }
  for (const auto& d : per_task) result.task_dice.push_back(mean_std(d));
  result.dice_all = mean_std(all_dice);
  result.ece_all = ece_all.value();

  std::vector<Scorer> scorers;
  if (vae) {
    scorers = {Scorer::Reconstruction};
    if (!gaussians.empty()) scorers.push_back(Scorer::Mahalanobis);
  } else {
    scorers = {Scorer::MaxSoftmax};
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (Scorer scorer : scorers) {
    ScorerEval se;
    se.scorer = scorer;
    for (int t : seen) {
      for (const Volume& v : stream.tasks[static_cast<std::size_t>(t)].val) se.val_scores.push_back(score_volume(scorer, unet, vae, gaussians, seen, v, nullptr));
    }
    se.tau = calibrate_threshold(se.val_scores);
    int accepted = 0;
    for (double s : se.val_scores) accepted += classify(s, se.tau);
    se.val_id_fraction = static_cast<double>(accepted) / static_cast<double>(se.val_scores.size());

    std::vector<double> scores;
    std::vector<double> id_dice;
    EceAccumulator ece_id;
    for (std::size_t i = 0; i < items.size(); ++i) {
      TaskScores detail;
      scores.push_back(score_volume(scorer, unet, vae, gaussians, seen, *items[i].volume, &detail));
      se.verdicts.push_back(make_verdict(items[i].volume->subject_id, detail, se.tau));
      if (se.verdicts.back().is_id) {
        ++se.n_id;
        id_dice.push_back(100.0 * preds[i].dice);
        ece_id.merge(preds[i].ece);
      }
    }
    se.dice_id = mean_std(id_dice);
    se.ece_id = ece_id.value();

    int pairs = 0, wins = 0;
    std::vector<double> id_scores, ood_scores;
    std::vector<int> original_index;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (items[i].kind == "original") original_index.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
      const EvalItem& it = items[i];
      const bool seen_task = it.task >= 0 && it.task <= stage;
      if (it.source >= 0 && seen_task) {
        ++pairs;
        wins += scores[i] > scores[static_cast<std::size_t>(original_index[static_cast<std::size_t>(it.source)])];
      }
      if (it.kind == "original" && seen_task) id_scores.push_back(scores[i]);
      if (it.kind == "ood_domain") ood_scores.push_back(scores[i]);
    }
    se.artifact_pair_rate = pairs > 0 ? static_cast<double>(wins) / pairs : nan;
    se.ood_auroc = !ood_scores.empty() && !id_scores.empty() ? auroc(id_scores, ood_scores) : nan;
    result.scorers.push_back(std::move(se));
  }
  return result;
}

namespace {

void write_stage(const std::filesystem::path& dir, int stage, UNet2D& unet, Ccvae* vae, const StageResult& result,
                 const TrajectoryConfig& cfg) {
  std::filesystem::create_directories(dir);
  unet.save(dir / "unet", stage + 1);
  if (vae) vae->save(dir / "vae");
  nlohmann::json j;
  j["method"] = to_string(cfg.method);
  j["stage"] = stage;
  j["tasks_seen"] = stage + 1;
  j["scorer"] = to_string(result.scorers.front().scorer);
  j["tau"] = result.scorers.front().tau;
  std::ofstream out(dir / "ood.json");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("cannot write " + (dir / "ood.json").string());
}

std::vector<double> test_dice_per_task(const TaskStream& stream, const UNet2D& unet) {
  std::vector<double> out;
  for (const auto& task : stream.tasks) {
    double total = 0.0;
    for (const Volume& v : task.test) total += dice(unet.segment_volume(v), v.mask, unet.config().classes);
    out.push_back(task.test.empty() ? 0.0 : 100.0 * total / static_cast<double>(task.test.size()));
  }
  return out;
}

}  // namespace

Trajectory run_sequence(const TaskStream& stream, const TrajectoryConfig& cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const int n_tasks = static_cast<int>(stream.tasks.size());
  if (n_tasks < 1) throw ConfigError("run_sequence: stream has no tasks");
  const bool vae_method = uses_vae(cfg.method);
  CcvaeConfig vae_cfg = cfg.vae;
  vae_cfg.feature_dim = static_cast<int>(cfg.unet.feature_dim());
  if (cfg.method == Method::CvaeTaskOnly) vae_cfg.slice_conditioning = false;
  if (vae_method && vae_cfg.max_tasks < n_tasks) throw ConfigError("run_sequence: vae.max_tasks smaller than the stream");

  Trajectory traj;
  traj.method = cfg.method;
  traj.stream_name = stream.name;
  for (const auto& t : stream.tasks) traj.task_names.push_back(t.name);

  Rng rng(derive_seed(cfg.seed, 100));
  UNet2D unet(cfg.unet, derive_seed(cfg.seed, 1));
  std::optional<Ccvae> vae;
  if (vae_method) {
    vae.emplace(vae_cfg, derive_seed(cfg.seed, 2));
    vae->require_feature_dim(unet.feature_dim());
  }
  std::vector<EwcAnchor> anchors;

  for (int stage = 0; stage < n_tasks; ++stage) {
    const TaskDataset& task = stream.tasks[static_cast<std::size_t>(stage)];
    const std::vector<SliceSample> slices = task_slices(task.train, stage, cfg.unet);
    EpochHook hook = [&](int epoch, double loss) {
      if ((epoch + 1) % cfg.eval_every != 0) return;
      traj.curve.push_back({stage, stage * cfg.epochs_per_task + epoch + 1, loss, test_dice_per_task(stream, unet)});
    };
    std::vector<int> seen_before(static_cast<std::size_t>(stage));
    std::iota(seen_before.begin(), seen_before.end(), 0);

    if (vae_method) {
      if (stage == 0) {
        vae->set_stats(0, train_first_task(unet, slices, cfg, rng, hook));
        const FeatureBatch real = real_feature_batch(unet, slices, *vae);
        train_vae_stage(*vae, real, cfg, rng);
        traj.gaussians[0] = fit_gaussian(vae->encode_batch(real).first);
      } else {
        continual_step(unet, *vae, slices, stage, seen_before, cfg, rng, &traj.gaussians, hook);
      }
    } else {
      train_segmenter(unet, slices, nullptr, cfg.method == Method::Ewc ? anchors : std::vector<EwcAnchor>{}, cfg, rng, hook);
      if (cfg.method == Method::Ewc && stage + 1 < n_tasks) {
        EwcAnchor a;
        a.fisher = ewc_fisher(unet, slices);
        for (auto* p : unet.all_params()) a.theta.push_back(p->value);
        anchors.push_back(std::move(a));
      }
    }

    StageResult result = evaluate_stage(stream, stage, unet, vae ? &*vae : nullptr, traj.gaussians, cfg);
    std::vector<double> row, row_std;
    for (const auto& ms : result.task_dice) {
      row.push_back(ms.mean);
      row_std.push_back(ms.std);
    }
    traj.dice.push_back(row);
    traj.dice_std.push_back(row_std);
    if (out_dir) {
      const auto dir = *out_dir / ("stage_" + std::to_string(stage));
      write_stage(dir, stage, unet, vae ? &*vae : nullptr, result, cfg);
      traj.checkpoints.push_back(dir);
    }
    traj.stages.push_back(std::move(result));
  }

  if (vae_method) {
    traj.conditioning.assign(static_cast<std::size_t>(n_tasks), std::vector<double>(static_cast<std::size_t>(n_tasks), 0.0));
    for (int a = 0; a < n_tasks; ++a) {
      const auto& val = stream.tasks[static_cast<std::size_t>(a)].val;
      for (int b = 0; b < n_tasks; ++b) {
        traj.conditioning[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
            val.empty() ? std::numeric_limits<double>::quiet_NaN() : mean_reconstruction_error(*vae, unet, val, b);
      }
    }
  }
  traj.unet.emplace(std::move(unet));
  if (vae) traj.vae.emplace(std::move(*vae));
  return traj;
}

Trajectory run_cvae_ablation(const TaskStream& stream, TrajectoryConfig cfg, const std::optional<std::filesystem::path>& out_dir) {
  cfg.method = Method::CvaeTaskOnly;
  cfg.vae.slice_conditioning = false;
  return run_sequence(stream, cfg, out_dir);
}

}  // namespace featreplay
