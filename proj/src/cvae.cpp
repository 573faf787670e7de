#include "featreplay/cvae.hpp"

#include "featreplay/errors.hpp"

#include <algorithm>
#include <cmath>

namespace featreplay {

void CcvaeConfig::validate() const {
  if (feature_dim < 1 || max_tasks < 1) throw ConfigError("CcvaeConfig: feature_dim and max_tasks must be positive");
  if (hidden.size() != 3) throw ConfigError("CcvaeConfig: expected 3 hidden widths (4 linear layers per side)");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("CcvaeConfig: hidden widths must be positive");
  }
}

nlohmann::json CcvaeConfig::to_json() const {
  return {{"feature_dim", feature_dim}, {"max_tasks", max_tasks}, {"hidden", hidden}, {"slice_conditioning", slice_conditioning},
          {"leaky_slope", leaky_slope}};
}

CcvaeConfig CcvaeConfig::from_json(const nlohmann::json& j) {
  CcvaeConfig c;
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.max_tasks = j.value("max_tasks", c.max_tasks);
  c.hidden = j.value("hidden", c.hidden);
  c.slice_conditioning = j.value("slice_conditioning", c.slice_conditioning);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  return c;
}

FeatureStats FeatureStats::fit(const Mat& columns) {
  if (columns.cols() < 2) throw InputError("FeatureStats::fit: need at least two feature vectors");
  FeatureStats s;
  s.mean = columns.rowwise().mean();
  const Mat centered = columns.colwise() - s.mean;
  const Vec var = centered.array().square().rowwise().sum().matrix() / static_cast<double>(columns.cols() - 1);
  s.stddev = (var.array() + 1e-6).sqrt().matrix();
  return s;
}

Mat FeatureStats::normalize(const Mat& columns) const {
  if (empty()) return columns;
  Mat out = columns.colwise() - mean;
  return out.array().colwise() / stddev.array();
}

Mat FeatureStats::denormalize(const Mat& columns) const {
  if (empty()) return columns;
  Mat out = columns.array().colwise() * stddev.array();
  return out.colwise() + mean;
}

double kl_divergence(const Vec& mu, const Vec& logvar) {
  if (mu.size() != logvar.size()) throw InputError("kl_divergence: shape mismatch");
  return -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum();
}

ElboTerms elbo_loss(const Vec& u, const Vec& u_hat, const Vec& mu, const Vec& logvar, double beta) {
  if (u.size() != u_hat.size() || mu.size() != logvar.size()) throw InputError("elbo_loss: shape mismatch");
  if (!(beta > 0.0)) throw InputError("elbo_loss: beta must be positive");
  ElboTerms t;
  t.recon = (u - u_hat).squaredNorm();
  t.kl = kl_divergence(mu, logvar);
  t.total = t.recon + beta * t.kl;
  return t;
}

Vec reparameterize(const Vec& mu, const Vec& logvar, Rng& rng) {
  if (mu.size() != logvar.size()) throw InputError("reparameterize: shape mismatch");
  Vec z(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double lv = std::clamp(logvar[i], kLogvarMin, kLogvarMax);
    z[i] = mu[i] + std::exp(0.5 * lv) * rng.normal();
  }
  return z;
}

Vec reparameterize(const Vec& mu, const Vec& logvar, std::uint64_t seed) {
  Rng rng(seed);
  return reparameterize(mu, logvar, rng);
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
T& as_lvalue(T&& t) {
  return t;
}

const CcvaeConfig& validated(const CcvaeConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Ccvae::Ccvae(const CcvaeConfig& config, std::uint64_t seed)
    : config_(validated(config)),
      enc_out_("vae.encoder.out", config.hidden[2], 2 * config.latent_dim(), as_lvalue(Rng(derive_seed(seed, 1)))),
      dec_out_("vae.decoder.out", config.hidden[2], config.feature_dim, as_lvalue(Rng(derive_seed(seed, 2)))) {
  Rng rng(seed);
  int in = config_.input_width();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "vae.encoder.hidden" + std::to_string(i);
    enc_.push_back(Hidden{nn::Linear(name, in, config_.hidden[i], rng), nn::BatchNorm(name + ".norm", config_.hidden[i]),
                          nn::LeakyRelu(config_.leaky_slope)});
    in = config_.hidden[i];
  }
  in = config_.latent_dim() + config_.condition_width();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = "vae.decoder.hidden" + std::to_string(i);
    dec_.push_back(Hidden{nn::Linear(name, in, config_.hidden[i], rng), nn::BatchNorm(name + ".norm", config_.hidden[i]),
                          nn::LeakyRelu(config_.leaky_slope)});
    in = config_.hidden[i];
  }
}

void Ccvae::require_feature_dim(std::int64_t d_u) const {
  if (d_u != config_.feature_dim || config_.latent_dim() != config_.feature_dim) {
    throw ConfigError("ccVAE latent/feature width " + std::to_string(config_.feature_dim) + " does not match UNet D_u " +
                      std::to_string(d_u));
  }
}

void Ccvae::check_condition(int task, double s) const {
  if (task < 0 || task >= config_.max_tasks) throw InputError("ccVAE: task index " + std::to_string(task) + " out of range");
  if (!(s >= 0.0 && s <= 1.0)) throw InputError("ccVAE: slice position must lie in [0, 1]");
}

Mat Ccvae::conditioned(const Mat& x, const std::vector<int>& tasks, const std::vector<double>& slices) const {
  const Eigen::Index n = x.cols();
  if (static_cast<Eigen::Index>(tasks.size()) != n || static_cast<Eigen::Index>(slices.size()) != n) {
    throw InputError("ccVAE: conditioning size mismatch");
  }
  Mat out = Mat::Zero(x.rows() + config_.condition_width(), n);
  out.topRows(x.rows()) = x;
  for (Eigen::Index k = 0; k < n; ++k) {
    check_condition(tasks[static_cast<std::size_t>(k)], slices[static_cast<std::size_t>(k)]);
    out(x.rows() + tasks[static_cast<std::size_t>(k)], k) = 1.0;
    if (config_.slice_conditioning) out(x.rows() + config_.max_tasks, k) = slices[static_cast<std::size_t>(k)];
  }
  return out;
}

Mat Ccvae::run_infer(const std::vector<Hidden>& hidden, const nn::Linear& out, const Mat& x) const {
  Mat h = x;
  for (const auto& layer : hidden) h = layer.act.infer(layer.norm.infer(layer.linear.infer(h)));
  return out.infer(h);
}

Mat Ccvae::run_forward(std::vector<Hidden>& hidden, nn::Linear& out, const Mat& x, nn::Mode mode) {
  Mat h = x;
  for (auto& layer : hidden) h = layer.act.forward(layer.norm.forward(layer.linear.forward(h), mode));
  return out.forward(h);
}

void Ccvae::run_backward(std::vector<Hidden>& hidden, nn::Linear& out, const Mat& dy, Mat* dx) {
  Mat d = out.backward(dy);
  for (std::size_t i = hidden.size(); i-- > 0;) {
    auto& layer = hidden[i];
    d = layer.norm.backward(layer.act.backward(d));
    d = layer.linear.backward(d, i > 0 || dx != nullptr);
  }
  if (dx) *dx = std::move(d);
}

std::pair<Mat, Mat> Ccvae::encode_batch(const FeatureBatch& batch) const {
  require_feature_dim(batch.features.rows());
  const Mat out = run_infer(enc_, enc_out_, conditioned(batch.features, batch.tasks, batch.slices));
  const Eigen::Index d = config_.latent_dim();
  Mat logvar = out.bottomRows(d).cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  return {out.topRows(d), std::move(logvar)};
}

Mat Ccvae::decode_batch(const Mat& z, const std::vector<int>& tasks, const std::vector<double>& slices) const {
  if (z.rows() != config_.latent_dim()) throw InputError("ccVAE decode: latent width mismatch");
  return run_infer(dec_, dec_out_, conditioned(z, tasks, slices));
}

std::pair<Vec, Vec> Ccvae::encode(const Vec& u, int task, double s) const {
  FeatureBatch b{u, {task}, {s}};
  auto [mu, logvar] = encode_batch(b);
  return {mu.col(0), logvar.col(0)};
}

Vec Ccvae::decode(const Vec& z, int task, double s) const { return decode_batch(z, {task}, {s}).col(0); }

Vec Ccvae::reconstruction_errors(const FeatureBatch& batch) const {
  const auto [mu, logvar] = encode_batch(batch);
  const Mat recon = decode_batch(mu, batch.tasks, batch.slices);
  return (recon - batch.features).array().square().colwise().mean().transpose();
}

ElboTerms Ccvae::elbo_from_posterior(const FeatureBatch& batch, const Mat& mu, const Mat& logvar, const Mat& eps, double beta, nn::Mode mode,
                                     Mat* dmu, Mat* dlogvar) {
  const Eigen::Index n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Mat lv = logvar.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax);
  const Mat stddev = (0.5 * lv.array()).exp().matrix();
  const Mat z = mu + stddev.cwiseProduct(eps);
  const Mat recon = run_forward(dec_, dec_out_, conditioned(z, batch.tasks, batch.slices), mode);
  const Mat diff = recon - batch.features;

  ElboTerms t;
  t.recon = diff.squaredNorm() * inv_n;
  t.kl = -0.5 * (1.0 + lv.array() - mu.array().square() - lv.array().exp()).sum() * inv_n;
  t.total = t.recon + beta * t.kl;

  Mat dinput;
  run_backward(dec_, dec_out_, 2.0 * inv_n * diff, &dinput);
  const Mat dz = dinput.topRows(config_.latent_dim());
  if (dmu) *dmu = dz + beta * inv_n * mu;
  if (dlogvar) {
    Mat dlv = 0.5 * dz.cwiseProduct(eps).cwiseProduct(stddev) + 0.5 * beta * inv_n * (lv.array().exp() - 1.0).matrix();
    for (Eigen::Index i = 0; i < dlv.size(); ++i) {
      if (logvar.data()[i] < kLogvarMin || logvar.data()[i] > kLogvarMax) dlv.data()[i] = 0.0;
    }
    *dlogvar = std::move(dlv);
  }
  return t;
}

ElboTerms Ccvae::train_step(const FeatureBatch& batch, double beta, Rng& rng) {
  require_feature_dim(batch.features.rows());
  const Eigen::Index d = config_.latent_dim();
  const Mat out = run_forward(enc_, enc_out_, conditioned(batch.features, batch.tasks, batch.slices), nn::Mode::Train);
  Mat eps(d, batch.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = rng.normal();
  Mat dmu, dlogvar;
  const ElboTerms t = elbo_from_posterior(batch, out.topRows(d), out.bottomRows(d), eps, beta, nn::Mode::Train, &dmu, &dlogvar);
  Mat dout(2 * d, batch.size());
  dout.topRows(d) = dmu;
  dout.bottomRows(d) = dlogvar;
  run_backward(enc_, enc_out_, dout, nullptr);
  return t;
}

std::vector<nn::Param*> Ccvae::encoder_params() {
  std::vector<nn::Param*> out;
  for (auto& h : enc_) {
    for (auto* p : h.linear.params()) out.push_back(p);
    for (auto* p : h.norm.params()) out.push_back(p);
  }
  for (auto* p : enc_out_.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> Ccvae::decoder_params() {
  std::vector<nn::Param*> out;
  for (auto& h : dec_) {
    for (auto* p : h.linear.params()) out.push_back(p);
    for (auto* p : h.norm.params()) out.push_back(p);
  }
  for (auto* p : dec_out_.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> Ccvae::params() {
  auto out = encoder_params();
  for (auto* p : decoder_params()) out.push_back(p);
  return out;
}

Eigen::Index Ccvae::parameter_count() {
  Eigen::Index n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

void Ccvae::mark_task_seen(int task) {
  check_condition(task, 0.5);
  seen_.insert(task);
}

void Ccvae::set_stats(int task, FeatureStats stats) {
  check_condition(task, 0.5);
  if (stats.mean.size() != config_.feature_dim || stats.stddev.size() != config_.feature_dim) {
    throw InputError("ccVAE: normalization statistics width mismatch");
  }
  stats_[task] = std::move(stats);
}

const FeatureStats& Ccvae::stats(int task) const {
  auto it = stats_.find(task);
  if (it == stats_.end()) throw StateError("ccVAE: no feature statistics for task " + std::to_string(task));
  return it->second;
}

Mat Ccvae::normalize(const Mat& u, const std::vector<int>& tasks) const {
  if (static_cast<Eigen::Index>(tasks.size()) != u.cols()) throw InputError("ccVAE: one task per feature column required");
  Mat out(u.rows(), u.cols());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    const FeatureStats& st = stats(tasks[j]);
    out.col(j) = ((u.col(j) - st.mean).array() / st.stddev.array()).matrix();
  }
  return out;
}

Mat Ccvae::denormalize(const Mat& x, const std::vector<int>& tasks) const {
  if (static_cast<Eigen::Index>(tasks.size()) != x.cols()) throw InputError("ccVAE: one task per feature column required");
  Mat out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const FeatureStats& st = stats(tasks[j]);
    out.col(j) = (x.col(j).array() * st.stddev.array()).matrix() + st.mean;
  }
  return out;
}

nn::NamedTensors Ccvae::named_tensors() {
  nn::NamedTensors out;
  for (auto* p : params()) out.emplace_back(p->name, &p->value);
  for (auto* group : {&enc_, &dec_}) {
    for (auto& h : *group) {
      for (auto& b : h.norm.buffers()) out.emplace_back(b.name, b.value);
    }
  }
  return out;
}

void Ccvae::save(const std::filesystem::path& dir) {
  nlohmann::json meta;
  meta["config"] = config_.to_json();
  meta["seen_tasks"] = std::vector<int>(seen_.begin(), seen_.end());
  std::vector<int> stat_tasks;
  nn::NamedTensors tensors = named_tensors();
  // Normalization statistics are aggregate moments, stored next to the weights.
  std::vector<Mat> moments;
  moments.reserve(2 * stats_.size());
  for (const auto& [t, st] : stats_) {
    stat_tasks.push_back(t);
    moments.emplace_back(st.mean);
    moments.emplace_back(st.stddev);
  }
  for (std::size_t i = 0; i < stat_tasks.size(); ++i) {
    const std::string prefix = "feature_stats." + std::to_string(stat_tasks[i]);
    tensors.emplace_back(prefix + ".mean", &moments[2 * i]);
    tensors.emplace_back(prefix + ".stddev", &moments[2 * i + 1]);
  }
  meta["stats_tasks"] = stat_tasks;
  nn::write_checkpoint(dir, "ccvae", meta, tensors);
}

Ccvae Ccvae::load(const std::filesystem::path& dir) {
  const nlohmann::json manifest = nn::read_manifest(dir);
  const nlohmann::json& meta = manifest.at("meta");
  Ccvae vae(CcvaeConfig::from_json(meta.at("config")), 0);
  nn::NamedTensors tensors = vae.named_tensors();
  const auto stat_tasks = meta.value("stats_tasks", std::vector<int>{});
  std::vector<Mat> moments(2 * stat_tasks.size(), Mat(vae.config_.feature_dim, 1));
  for (std::size_t i = 0; i < stat_tasks.size(); ++i) {
    const std::string prefix = "feature_stats." + std::to_string(stat_tasks[i]);
    tensors.emplace_back(prefix + ".mean", &moments[2 * i]);
    tensors.emplace_back(prefix + ".stddev", &moments[2 * i + 1]);
  }
  nn::read_checkpoint(dir, "ccvae", tensors);
  for (int t : meta.value("seen_tasks", std::vector<int>{})) vae.seen_.insert(t);
  for (std::size_t i = 0; i < stat_tasks.size(); ++i) {
    vae.set_stats(stat_tasks[i], FeatureStats{moments[2 * i].col(0), moments[2 * i + 1].col(0)});
  }
  return vae;
}

Vec sample_pseudo_feature(const Ccvae& vae, int task, double s, std::uint64_t seed) {
  if (!vae.seen_tasks().contains(task)) throw InputError("sample_pseudo_feature: task " + std::to_string(task) + " has not been learned");
  Rng rng(seed);
  Vec z(vae.config().latent_dim());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  const Mat decoded = vae.decode_batch(z, {task}, {s});
  return vae.denormalize(decoded, {task}).col(0);
}

}  // namespace featreplay
