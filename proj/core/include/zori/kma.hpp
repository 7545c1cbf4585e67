#pragma once

// Knowledge-maintained adaptation.
//
// Backbone channels are split with the same O criterion used for text
// channels: the highest-O (least similar, most varying across classes)
// channels carry semantic alignment and stay frozen; the rest get a
// per-channel affine adapter that is trained with frozen gradients zeroed.

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "zori/dec.hpp"
#include "zori/tensor.hpp"

namespace zori {

inline constexpr std::size_t kDefaultTrainableChannels = 32;
inline constexpr std::size_t kDefaultInstancesPerClass = 1;

struct ChannelPartition {
  std::vector<std::size_t> frozen;     // ascending
  std::vector<std::size_t> trainable;  // ascending
  std::size_t source_dim = 0;

  bool is_frozen(std::size_t channel) const;
  friend bool operator==(const ChannelPartition&, const ChannelPartition&) = default;
};

nlohmann::json to_json(const ChannelPartition& p);
ChannelPartition channel_partition_from_json(const nlohmann::json& j);

// Per-class backbone descriptors: the mean of the first `instances_per_class`
// instance features of each class, L2-normalized.
EmbeddingMatrix class_feature_means(const std::vector<std::vector<std::vector<double>>>& per_class,
                                    std::size_t instances_per_class = kDefaultInstancesPerClass);

ChannelPartition partition_channels(const EmbeddingMatrix& class_features, double lambda,
                                    std::size_t n_trainable);

class ChannelAdapter {
 public:
  // Identity adapter: scale 1, bias 0 on every channel.
  explicit ChannelAdapter(ChannelPartition partition);

  // Throws InvalidArgument if a frozen channel is not (1, 0).
  static ChannelAdapter with_params(ChannelPartition partition, std::vector<double> scale,
                                    std::vector<double> bias);

  const ChannelPartition& partition() const noexcept { return partition_; }
  std::span<const double> scale() const noexcept { return scale_; }
  std::span<const double> bias() const noexcept { return bias_; }
  std::size_t dim() const noexcept { return scale_.size(); }

  std::vector<double> apply(std::span<const double> features) const;

  // Gradient-descent update. Gradient entries for frozen channels must be
  // zero; a nonzero frozen entry is rejected rather than silently dropped.
  void descend(std::span<const double> grad_scale, std::span<const double> grad_bias, double lr);

  // 2 x D matrix: row 0 scale, row 1 bias.
  EmbeddingMatrix state() const;
  static ChannelAdapter from_state(ChannelPartition partition, const EmbeddingMatrix& state);

 private:
  ChannelAdapter(ChannelPartition partition, std::vector<double> scale, std::vector<double> bias);

  ChannelPartition partition_;
  std::vector<double> scale_;
  std::vector<double> bias_;
};

FeatureMap apply_adapter(const ChannelAdapter& adapter, const FeatureMap& fm);

struct LabeledFeature {
  std::vector<double> features;
  std::size_t label = 0;
};

struct AdapterGradient {
  double loss = 0.0;
  std::vector<double> grad_scale;
  std::vector<double> grad_bias;
};

// Mean cross-entropy of softmax(logit_scale * cosine(adapted, class)) over
// the batch, with gradients w.r.t. scale and bias. Frozen entries are zero.
AdapterGradient adapter_gradient(const ChannelAdapter& adapter,
                                 const std::vector<LabeledFeature>& batch,
                                 const Classifier& classifier, double logit_scale = 1.0);

// Loss only; used as the objective for finite-difference checks.
double adapter_loss(const ChannelAdapter& adapter, const std::vector<LabeledFeature>& batch,
                    const Classifier& classifier, double logit_scale = 1.0);

// One masked gradient step; returns the loss before the update.
double adapter_step(ChannelAdapter& adapter, const std::vector<LabeledFeature>& batch,
                    const Classifier& classifier, double lr, double logit_scale = 1.0);

}  // namespace zori
