#include "featreplay/segmenter.hpp"

#include "featreplay/errors.hpp"
#include "featreplay/nn/losses.hpp"

#include <iostream>

namespace featreplay {

using nn::FeatureMap;
using nn::Mat;
using nn::Mode;

void UNetConfig::validate() const {
  if (height <= 0 || width <= 0 || levels < 1 || base_channels < 1 || classes < 2) {
    throw ConfigError("UNetConfig: sizes must be positive, levels >= 1 and classes >= 2");
  }
  const int factor = 1 << levels;
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("UNetConfig: input " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by 2^" +
                      std::to_string(levels));
  }
}

std::int64_t UNetConfig::feature_dim() const {
  return static_cast<std::int64_t>(bottleneck_height()) * bottleneck_width() * bottleneck_channels();
}

nlohmann::json UNetConfig::to_json() const {
  return {{"height", height}, {"width", width}, {"levels", levels}, {"base_channels", base_channels}, {"classes", classes},
          {"leaky_slope", leaky_slope}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.classes = j.value("classes", c.classes);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  return c;
}

// ---------------------------------------------------------------------------

UNet2D::ConvBlock::ConvBlock(const std::string& name, int in, int out, double slope, Rng& rng)
    : conv1(name + ".conv1", in, out, 3, rng),
      norm1(name + ".norm1", out),
      act1(slope),
      conv2(name + ".conv2", out, out, 3, rng),
      norm2(name + ".norm2", out),
      act2(slope) {}

FeatureMap UNet2D::ConvBlock::forward(const FeatureMap& x, Mode mode) {
  FeatureMap y = conv1.forward(x);
  y.data = act1.forward(norm1.forward(y.data, mode));
  y = conv2.forward(y);
  y.data = act2.forward(norm2.forward(y.data, mode));
  return y;
}

FeatureMap UNet2D::ConvBlock::infer(const FeatureMap& x) const {
  FeatureMap y = conv1.infer(x);
  y.data = act1.infer(norm1.infer(y.data));
  y = conv2.infer(y);
  y.data = act2.infer(norm2.infer(y.data));
  return y;
}

FeatureMap UNet2D::ConvBlock::backward(const FeatureMap& dy, bool input_grad) {
  FeatureMap d = dy;
  d.data = norm2.backward(act2.backward(dy.data));
  d = conv2.backward(d);
  d.data = norm1.backward(act1.backward(d.data));
  return conv1.backward(d, input_grad);
}

std::vector<nn::Param*> UNet2D::ConvBlock::params() {
  std::vector<nn::Param*> out;
  for (auto* group : {&conv1, &conv2}) {
    for (auto* p : group->params()) out.push_back(p);
  }
  for (auto* group : {&norm1, &norm2}) {
    for (auto* p : group->params()) out.push_back(p);
  }
  return out;
}

std::vector<nn::Buffer> UNet2D::ConvBlock::buffers() {
  auto out = norm1.buffers();
  for (auto& b : norm2.buffers()) out.push_back(b);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
T& as_lvalue(T&& t) {
  return t;
}

const UNetConfig& validated(const UNetConfig& c) {
  c.validate();
  return c;
}

}  // namespace

UNet2D::UNet2D(const UNetConfig& config, std::uint64_t seed)
    : config_(validated(config)),
      head_("head", config.base_channels, config.classes, 1, as_lvalue(Rng(derive_seed(seed, 7)))) {
  Rng rng(seed);
  const int L = config_.levels;
  const int base = config_.base_channels;
  int in = 1;
  for (int l = 0; l <= L; ++l) {
    const int out = base << l;
    const std::string name = l == L ? "encoder.bottleneck" : "encoder.level" + std::to_string(l);
    enc_blocks_.emplace_back(name, in, out, config_.leaky_slope, rng);
    in = out;
  }
  pools_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    const int out = base << l;
    ups_.emplace_back("decoder.up" + std::to_string(l), out * 2, out, rng);
    dec_blocks_.emplace_back("decoder.level" + std::to_string(l), out * 2, out, config_.leaky_slope, rng);
  }
}

FeatureMap UNet2D::pack_images(const std::vector<const SliceSample*>& slices) {
  if (slices.empty()) return FeatureMap(1, 0, 0, 0);
  const int h = slices.front()->image.height, w = slices.front()->image.width;
  FeatureMap m(1, static_cast<int>(slices.size()), h, w);
  for (std::size_t n = 0; n < slices.size(); ++n) {
    const Image2D& img = slices[n]->image;
    if (img.height != h || img.width != w) throw InputError("pack_images: inconsistent slice shapes");
    std::copy(img.pixels.begin(), img.pixels.end(), m.data.data() + static_cast<Eigen::Index>(n) * h * w);
  }
  return m;
}

UNet2D::EncoderOut UNet2D::encoder_infer(const FeatureMap& x) const {
  if (x.height != config_.height || x.width != config_.width || x.channels() != 1) {
    throw InputError("UNet2D: input shape does not match the configured " + std::to_string(config_.height) + "x" +
                     std::to_string(config_.width));
  }
  EncoderOut out;
  FeatureMap y = x;
  for (int l = 0; l < config_.levels; ++l) {
    out.skips.push_back(enc_blocks_[static_cast<std::size_t>(l)].infer(y));
    y = pools_[static_cast<std::size_t>(l)].infer(out.skips.back());
  }
  out.bottleneck = enc_blocks_.back().infer(y);
  return out;
}

FeatureMap UNet2D::decoder_infer(const FeatureMap& bottleneck, const std::vector<FeatureMap>& skips) const {
  FeatureMap y = bottleneck;
  for (int l = config_.levels - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    y = dec_blocks_[i].infer(nn::concat_channels(ups_[i].infer(y), skips[i]));
  }
  return head_.infer(y);
}

FeatureMap UNet2D::bottleneck_from_columns(const Mat& features) const {
  if (features.rows() != feature_dim()) throw InputError("UNet2D: feature length does not match D_u");
  const int n = static_cast<int>(features.cols());
  FeatureMap b(config_.bottleneck_channels(), n, config_.bottleneck_height(), config_.bottleneck_width());
  const int plane = b.plane();
  for (int k = 0; k < n; ++k) {
    for (int c = 0; c < b.channels(); ++c) {
      for (int p = 0; p < plane; ++p) b.data(c, static_cast<Eigen::Index>(k) * plane + p) = features(static_cast<Eigen::Index>(c) * plane + p, k);
    }
  }
  return b;
}

Mat UNet2D::columns_from_bottleneck(const FeatureMap& b) const {
  const int plane = b.plane();
  Mat out(static_cast<Eigen::Index>(b.channels()) * plane, b.batch);
  for (int k = 0; k < b.batch; ++k) {
    for (int c = 0; c < b.channels(); ++c) {
      for (int p = 0; p < plane; ++p) out(static_cast<Eigen::Index>(c) * plane + p, k) = b.data(c, static_cast<Eigen::Index>(k) * plane + p);
    }
  }
  return out;
}

FeatureCode UNet2D::encode(const SliceSample& slice) const {
  const FeatureMap x = pack_images({&slice});
  EncoderOut e = encoder_infer(x);
  FeatureCode code;
  const Mat col = columns_from_bottleneck(e.bottleneck);
  code.u.assign(col.data(), col.data() + col.size());
  code.task = slice.task;
  code.s = slice.s;
  code.skips = std::move(e.skips);
  return code;
}

Mat UNet2D::encode_features(const std::vector<SliceSample>& slices) const {
  std::vector<const SliceSample*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  return columns_from_bottleneck(encoder_infer(pack_images(ptrs)).bottleneck);
}

ProbabilityMap UNet2D::decode(const FeatureCode& code, bool use_skips) const {
  if (static_cast<std::int64_t>(code.u.size()) != feature_dim()) throw InputError("decode: length(u) != D_u");
  if (use_skips && !code.skips) throw InputError("decode: use_skips requested but the code carries no skips");
  const Mat col = Eigen::Map<const Eigen::VectorXd>(code.u.data(), static_cast<Eigen::Index>(code.u.size()));
  const FeatureMap b = bottleneck_from_columns(col);
  std::vector<FeatureMap> skips;
  if (use_skips) {
    skips = *code.skips;
  } else {
    for (int l = 0; l < config_.levels; ++l) skips.emplace_back(config_.base_channels << l, 1, config_.height >> l, config_.width >> l);
  }
  return nn::softmax_channels(decoder_infer(b, skips).data);
}

std::vector<ProbabilityMap> UNet2D::decode_without_skips(const Mat& features) const {
  const FeatureMap b = bottleneck_from_columns(features);
  std::vector<FeatureMap> skips;
  for (int l = 0; l < config_.levels; ++l) skips.emplace_back(config_.base_channels << l, b.batch, config_.height >> l, config_.width >> l);
  const Mat probs = nn::softmax_channels(decoder_infer(b, skips).data);
  const Eigen::Index plane = static_cast<Eigen::Index>(config_.height) * config_.width;
  std::vector<ProbabilityMap> out;
  for (int k = 0; k < b.batch; ++k) out.emplace_back(probs.middleCols(k * plane, plane));
  return out;
}

ProbabilityMap UNet2D::predict(const Image2D& image) const {
  SliceSample s;
  s.image = image;
  const EncoderOut e = encoder_infer(pack_images({&s}));
  return nn::softmax_channels(decoder_infer(e.bottleneck, e.skips).data);
}

std::vector<ProbabilityMap> UNet2D::predict_volume(const Volume& v) const {
  const auto slices = slice_volume(v, 0, config_.height, config_.width);
  std::vector<const SliceSample*> ptrs;
  for (const auto& s : slices) ptrs.push_back(&s);
  const EncoderOut e = encoder_infer(pack_images(ptrs));
  const Mat probs = nn::softmax_channels(decoder_infer(e.bottleneck, e.skips).data);
  const Eigen::Index plane = static_cast<Eigen::Index>(config_.height) * config_.width;
  std::vector<ProbabilityMap> out;
  for (std::size_t k = 0; k < slices.size(); ++k) out.emplace_back(probs.middleCols(static_cast<Eigen::Index>(k) * plane, plane));
  return out;
}

std::vector<std::uint8_t> UNet2D::segment_volume(const Volume& v) const {
  const auto probs = predict_volume(v);
  std::vector<std::vector<std::uint8_t>> labels;
  labels.reserve(probs.size());
  for (const auto& p : probs) {
    std::vector<std::uint8_t> lab(static_cast<std::size_t>(p.cols()));
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
      Eigen::Index best = 0;
      p.col(i).maxCoeff(&best);
      lab[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    labels.push_back(std::move(lab));
  }
  return restack_slices(v, labels, config_.height, config_.width);
}

// ---------------------------------------------------------------------------

FeatureMap UNet2D::forward_train(const FeatureMap& images, const std::vector<bool>& keep_skips, const Mat* pseudo, Mode mode) {
  const int real = images.batch;
  const int n_pseudo = pseudo ? static_cast<int>(pseudo->cols()) : 0;
  if (real + n_pseudo == 0) throw InputError("forward_train: empty batch");
  if (static_cast<int>(keep_skips.size()) != real) throw InputError("forward_train: keep_skips size mismatch");
  real_batch_ = real;
  keep_skips_ = keep_skips;

  std::vector<FeatureMap> skips;
  FeatureMap bottleneck(config_.bottleneck_channels(), 0, config_.bottleneck_height(), config_.bottleneck_width());
  encoder_cached_ = false;
  if (real > 0) {
    if (images.height != config_.height || images.width != config_.width) throw InputError("forward_train: image shape mismatch");
    if (frozen_) {
      EncoderOut e = encoder_infer(images);
      skips = std::move(e.skips);
      bottleneck = std::move(e.bottleneck);
    } else {
      FeatureMap y = images;
      for (int l = 0; l < config_.levels; ++l) {
        const auto i = static_cast<std::size_t>(l);
        skips.push_back(enc_blocks_[i].forward(y, mode));
        y = pools_[i].forward(skips.back());
      }
      bottleneck = enc_blocks_.back().forward(y, mode);
      encoder_cached_ = true;
    }
    for (auto& s : skips) nn::zero_samples(s, keep_skips);
  } else {
    for (int l = 0; l < config_.levels; ++l) skips.emplace_back(config_.base_channels << l, 0, config_.height >> l, config_.width >> l);
  }
  if (n_pseudo > 0) {
    bottleneck = nn::concat_batch(bottleneck, bottleneck_from_columns(*pseudo));
    for (int l = 0; l < config_.levels; ++l) {
      auto& s = skips[static_cast<std::size_t>(l)];
      s = nn::concat_batch(s, FeatureMap(config_.base_channels << l, n_pseudo, config_.height >> l, config_.width >> l));
    }
  }

  up_channels_.assign(static_cast<std::size_t>(config_.levels), 0);
  FeatureMap y = bottleneck;
  for (int l = config_.levels - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    FeatureMap up = ups_[i].forward(y);
    up_channels_[i] = up.channels();
    y = dec_blocks_[i].forward(nn::concat_channels(up, skips[i]), mode);
  }
  return head_.forward(y);
}

void UNet2D::backward(const FeatureMap& dlogits) {
  FeatureMap dy = head_.backward(dlogits);
  std::vector<FeatureMap> dskips(static_cast<std::size_t>(config_.levels));
  for (int l = 0; l < config_.levels; ++l) {
    const auto i = static_cast<std::size_t>(l);
    FeatureMap dcat = dec_blocks_[i].backward(dy, true);
    FeatureMap dup;
    dup.batch = dcat.batch;
    dup.height = dcat.height;
    dup.width = dcat.width;
    dup.data = dcat.data.topRows(up_channels_[i]);
    dskips[i] = dup;
    dskips[i].data = dcat.data.bottomRows(dcat.data.rows() - up_channels_[i]);
    dy = ups_[i].backward(dup, true);
  }
  if (!encoder_cached_) return;

  FeatureMap dx = nn::slice_batch(dy, 0, real_batch_);
  dx = enc_blocks_.back().backward(dx, true);
  for (int l = config_.levels - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    FeatureMap ds = nn::slice_batch(dskips[i], 0, real_batch_);
    nn::zero_samples(ds, keep_skips_);
    ds.data += pools_[i].backward(dx).data;
    dx = enc_blocks_[i].backward(ds, l > 0);
  }
}

void UNet2D::freeze_encoder() {
  if (frozen_) {
    std::cerr << "warning: UNet encoder is already frozen\n";
    return;
  }
  frozen_ = true;
}

std::vector<nn::Param*> UNet2D::encoder_params() {
  std::vector<nn::Param*> out;
  for (auto& b : enc_blocks_) {
    for (auto* p : b.params()) out.push_back(p);
  }
  return out;
}

std::vector<nn::Param*> UNet2D::decoder_params() {
  std::vector<nn::Param*> out;
  for (int l = config_.levels - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    for (auto* p : ups_[i].params()) out.push_back(p);
    for (auto* p : dec_blocks_[i].params()) out.push_back(p);
  }
  for (auto* p : head_.params()) out.push_back(p);
  return out;
}

std::vector<nn::Param*> UNet2D::trainable_params() { return frozen_ ? decoder_params() : all_params(); }

std::vector<nn::Param*> UNet2D::all_params() {
  auto out = encoder_params();
  for (auto* p : decoder_params()) out.push_back(p);
  return out;
}

std::vector<nn::Buffer> UNet2D::buffers() {
  std::vector<nn::Buffer> out;
  for (auto& b : enc_blocks_) {
    for (auto& buf : b.buffers()) out.push_back(buf);
  }
  for (auto& b : dec_blocks_) {
    for (auto& buf : b.buffers()) out.push_back(buf);
  }
  return out;
}

nn::NamedTensors UNet2D::named_tensors() {
  nn::NamedTensors out;
  for (auto* p : all_params()) out.emplace_back(p->name, &p->value);
  for (auto& b : buffers()) out.emplace_back(b.name, b.value);
  return out;
}

void UNet2D::save(const std::filesystem::path& dir, int tasks_trained) {
  nlohmann::json meta;
  meta["config"] = config_.to_json();
  meta["tasks_trained"] = tasks_trained;
  meta["encoder_frozen"] = frozen_;
  nn::write_checkpoint(dir, "unet2d", meta, named_tensors());
}

UNet2D UNet2D::load(const std::filesystem::path& dir, int* tasks_trained) {
  const nlohmann::json manifest = nn::read_manifest(dir);
  const nlohmann::json& meta = manifest.at("meta");
  UNet2D net(UNetConfig::from_json(meta.at("config")), 0);
  nn::read_checkpoint(dir, "unet2d", net.named_tensors());
  net.frozen_ = meta.value("encoder_frozen", false);
  if (tasks_trained) *tasks_trained = meta.value("tasks_trained", 0);
  return net;
}

}  // namespace featreplay
