#pragma once

#include "featreplay/datagen.hpp"
#include "featreplay/nn/checkpoint.hpp"
#include "featreplay/nn/layers.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace featreplay {

struct UNetConfig {
  int height = 32;
  int width = 32;
  int levels = 3;
  int base_channels = 4;
  int classes = 2;  ///< foreground classes + background
  double leaky_slope = 0.01;

  /// Throws ConfigError unless H and W are divisible by 2^levels and sizes are positive.
  void validate() const;
  int bottleneck_channels() const { return base_channels << levels; }
  int bottleneck_height() const { return height >> levels; }
  int bottleneck_width() const { return width >> levels; }
  /// D_u = (H / 2^L) * (W / 2^L) * (base * 2^L).
  std::int64_t feature_dim() const;

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

/// Flattened bottleneck activations of one slice plus its conditioning metadata.
struct FeatureCode {
  std::vector<double> u;
  int task = 0;
  double s = 0.5;
  /// Per-level encoder activations (batch of one); absent for generated features.
  std::optional<std::vector<nn::FeatureMap>> skips;
};

/// Per-pixel class probabilities of one slice: classes x (H*W).
using ProbabilityMap = nn::Mat;

/// Compact 2D encoder-decoder with per-level skip connections.
///
/// Encoder blocks are conv-BN-LeakyReLU twice followed by 2x2 max pooling; the
/// decoder mirrors them with 2x2 transposed convolutions and channel
/// concatenation of the skip activations. After freeze_encoder() the encoder
/// runs in inference mode (batch-norm statistics included) and receives no
/// gradients.
class UNet2D {
 public:
  UNet2D(const UNetConfig& config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }
  std::int64_t feature_dim() const { return config_.feature_dim(); }

  // --- inference (const, cache-free) -------------------------------------------------

  FeatureCode encode(const SliceSample& slice) const;
  ProbabilityMap decode(const FeatureCode& code, bool use_skips) const;
  ProbabilityMap predict(const Image2D& image) const;
  /// Probabilities for a batch of bottleneck vectors (columns of `features`) with zero skips.
  std::vector<ProbabilityMap> decode_without_skips(const nn::Mat& features) const;
  /// Encode a batch of slices; column n of the result is slice n's u.
  nn::Mat encode_features(const std::vector<SliceSample>& slices) const;
  /// Slice-wise argmax segmentation restacked to the volume's shape.
  std::vector<std::uint8_t> segment_volume(const Volume& v) const;
  /// Per-slice probability maps of a volume (slicing-axis order).
  std::vector<ProbabilityMap> predict_volume(const Volume& v) const;

  // --- training ------------------------------------------------------------------------

  /// Forward pass with caches for backward(). Real samples come from `images`
  /// (a 1-channel map); `pseudo` optionally appends generated bottleneck vectors
  /// (one column each) that are decoded with zero skips. Samples with
  /// keep_skips[n] == false have their skips zeroed. Returns logits.
  nn::FeatureMap forward_train(const nn::FeatureMap& images, const std::vector<bool>& keep_skips, const nn::Mat* pseudo = nullptr,
                               nn::Mode mode = nn::Mode::Train);
  /// Accumulate gradients for the last forward_train(). Encoder gradients are
  /// only produced while the encoder is trainable.
  void backward(const nn::FeatureMap& dlogits);

  void freeze_encoder();
  bool encoder_frozen() const { return frozen_; }

  std::vector<nn::Param*> encoder_params();
  std::vector<nn::Param*> decoder_params();
  /// Parameters an optimizer should update in the current state.
  std::vector<nn::Param*> trainable_params();
  std::vector<nn::Param*> all_params();

  void save(const std::filesystem::path& dir, int tasks_trained);
  /// Load a checkpoint; returns the stored task count.
  static UNet2D load(const std::filesystem::path& dir, int* tasks_trained = nullptr);

  /// Pack slices into a 1-channel batch.
  static nn::FeatureMap pack_images(const std::vector<const SliceSample*>& slices);

 private:
  struct ConvBlock {
    nn::Conv2d conv1;
    nn::BatchNorm norm1;
    nn::LeakyRelu act1;
    nn::Conv2d conv2;
    nn::BatchNorm norm2;
    nn::LeakyRelu act2;

    ConvBlock(const std::string& name, int in, int out, double slope, Rng& rng);
    nn::FeatureMap forward(const nn::FeatureMap& x, nn::Mode mode);
    nn::FeatureMap infer(const nn::FeatureMap& x) const;
    nn::FeatureMap backward(const nn::FeatureMap& dy, bool input_grad);
    std::vector<nn::Param*> params();
    std::vector<nn::Buffer> buffers();
  };

  struct EncoderOut {
    std::vector<nn::FeatureMap> skips;
    nn::FeatureMap bottleneck;
  };

  EncoderOut encoder_infer(const nn::FeatureMap& x) const;
  nn::FeatureMap decoder_infer(const nn::FeatureMap& bottleneck, const std::vector<nn::FeatureMap>& skips) const;
  nn::FeatureMap bottleneck_from_columns(const nn::Mat& features) const;
  nn::Mat columns_from_bottleneck(const nn::FeatureMap& bottleneck) const;
  std::vector<nn::Buffer> buffers();
  nn::NamedTensors named_tensors();

  UNetConfig config_;
  std::vector<ConvBlock> enc_blocks_;  // levels + 1 (last one is the bottleneck block)
  std::vector<nn::MaxPool2> pools_;
  std::vector<nn::UpConv2> ups_;
  std::vector<ConvBlock> dec_blocks_;
  nn::Conv2d head_;
  bool frozen_ = false;

  // Training caches.
  int real_batch_ = 0;
  bool encoder_cached_ = false;
  std::vector<bool> keep_skips_;
  std::vector<int> up_channels_;
};

}  // namespace featreplay
