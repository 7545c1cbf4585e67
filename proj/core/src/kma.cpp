#include "zori/kma.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

bool ChannelPartition::is_frozen(std::size_t channel) const {
  return std::binary_search(frozen.begin(), frozen.end(), channel);
}

nlohmann::json to_json(const ChannelPartition& p) {
  return {{"source_D", p.source_dim}, {"frozen", p.frozen}, {"trainable", p.trainable}};
}

ChannelPartition channel_partition_from_json(const nlohmann::json& j) {
  ChannelPartition p;
  try {
    p.source_dim = j.at("source_D").get<std::size_t>();
    p.frozen = j.at("frozen").get<std::vector<std::size_t>>();
    p.trainable = j.at("trainable").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad channel partition: ") + e.what());
  }
  std::vector<int> hits(p.source_dim, 0);
  for (const auto* group : {&p.frozen, &p.trainable}) {
    if (!std::is_sorted(group->begin(), group->end())) {
      throw Error(ErrorCode::kFormatError, "partition index lists must be sorted");
    }
    for (const auto i : *group) {
      if (i >= p.source_dim) throw Error(ErrorCode::kFormatError, "partition index out of range");
      ++hits[i];
    }
  }
  if (std::any_of(hits.begin(), hits.end(), [](int h) { return h != 1; })) {
    throw Error(ErrorCode::kFormatError, "partition must cover every channel exactly once");
  }
  return p;
}

EmbeddingMatrix class_feature_means(const std::vector<std::vector<std::vector<double>>>& per_class,
                                    std::size_t instances_per_class) {
  if (instances_per_class == 0) throw Error(ErrorCode::kBadCount, "T must be at least 1");
  std::vector<std::vector<double>> rows;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& inst = per_class[c];
    if (inst.size() < instances_per_class) {
      throw Error(ErrorCode::kInsufficientInstances,
                  "class " + std::to_string(c) + " has " + std::to_string(inst.size()) +
                      " instances, need " + std::to_string(instances_per_class))
          .with_index(static_cast<std::int64_t>(c));
    }
    std::vector<double> mean(inst.front().size(), 0.0);
    for (std::size_t t = 0; t < instances_per_class; ++t) {
      if (inst[t].size() != mean.size()) throw Error(ErrorCode::kDimMismatch, "ragged instances");
      for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += inst[t][d];
    }
    for (auto& v : mean) v /= static_cast<double>(instances_per_class);
    rows.push_back(std::move(mean));
  }
  return l2_normalize_rows(EmbeddingMatrix::from_rows(rows));
}

ChannelPartition partition_channels(const EmbeddingMatrix& class_features, double lambda,
                                    std::size_t n_trainable) {
  const std::size_t d = class_features.cols();
  if (n_trainable == 0 || n_trainable >= d) {
    throw Error(ErrorCode::kBadCount, "n_trainable must be in (0, " + std::to_string(d) + ")");
  }
  const auto score = score_channels(class_features, lambda);
  ChannelPartition p;
  p.source_dim = d;
  p.frozen = select_top_k(score, d - n_trainable).indices;
  std::sort(p.frozen.begin(), p.frozen.end());
  for (std::size_t c = 0; c < d; ++c) {
    if (!std::binary_search(p.frozen.begin(), p.frozen.end(), c)) p.trainable.push_back(c);
  }
  return p;
}

ChannelAdapter::ChannelAdapter(ChannelPartition partition)
    : ChannelAdapter(partition, std::vector<double>(partition.source_dim, 1.0),
                     std::vector<double>(partition.source_dim, 0.0)) {}

ChannelAdapter::ChannelAdapter(ChannelPartition partition, std::vector<double> scale,
                               std::vector<double> bias)
    : partition_(std::move(partition)), scale_(std::move(scale)), bias_(std::move(bias)) {}

ChannelAdapter ChannelAdapter::with_params(ChannelPartition partition, std::vector<double> scale,
                                           std::vector<double> bias) {
  if (scale.size() != partition.source_dim || bias.size() != partition.source_dim) {
    throw Error(ErrorCode::kDimMismatch, "adapter parameter length mismatch");
  }
  for (const auto c : partition.frozen) {
    if (scale[c] != 1.0 || bias[c] != 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "frozen channel must keep scale 1 and bias 0")
          .with_index(static_cast<std::int64_t>(c));
    }
  }
  for (std::size_t c = 0; c < scale.size(); ++c) {
    if (!std::isfinite(scale[c]) || !std::isfinite(bias[c])) {
      throw Error(ErrorCode::kNonFiniteInput, "adapter parameter is not finite")
          .with_index(static_cast<std::int64_t>(c));
    }
  }
  return ChannelAdapter(std::move(partition), std::move(scale), std::move(bias));
}

std::vector<double> ChannelAdapter::apply(std::span<const double> features) const {
  if (features.size() != dim()) throw Error(ErrorCode::kDimMismatch, "feature length mismatch");
  std::vector<double> out(features.begin(), features.end());
  for (const auto c : partition_.trainable) out[c] = scale_[c] * features[c] + bias_[c];
  return out;
}

void ChannelAdapter::descend(std::span<const double> grad_scale, std::span<const double> grad_bias,
                             double lr) {
  if (grad_scale.size() != dim() || grad_bias.size() != dim()) {
    throw Error(ErrorCode::kDimMismatch, "gradient length mismatch");
  }
  for (const auto c : partition_.frozen) {
    if (grad_scale[c] != 0.0 || grad_bias[c] != 0.0) {
      throw Error(ErrorCode::kInvalidArgument, "gradient touches a frozen channel")
          .with_index(static_cast<std::int64_t>(c));
    }
  }
  for (const auto c : partition_.trainable) {
    scale_[c] -= lr * grad_scale[c];
    bias_[c] -= lr * grad_bias[c];
  }
}

EmbeddingMatrix ChannelAdapter::state() const {
  std::vector<double> data(scale_);
  data.insert(data.end(), bias_.begin(), bias_.end());
  return EmbeddingMatrix(2, dim(), std::move(data),
                         std::vector<std::string>{"scale", "bias"});
}

ChannelAdapter ChannelAdapter::from_state(ChannelPartition partition, const EmbeddingMatrix& state) {
  if (state.rows() != 2 || state.cols() != partition.source_dim) {
    throw Error(ErrorCode::kDimMismatch, "adapter state must be 2 x source_D");
  }
  const auto s = state.row(0);
  const auto b = state.row(1);
  return with_params(std::move(partition), {s.begin(), s.end()}, {b.begin(), b.end()});
}

FeatureMap apply_adapter(const ChannelAdapter& adapter, const FeatureMap& fm) {
  if (fm.channels() != adapter.dim()) {
    throw Error(ErrorCode::kDimMismatch, "feature map channels do not match adapter");
  }
  std::vector<double> data(fm.data());
  const std::size_t plane = fm.height() * fm.width();
  for (const auto c : adapter.partition().trainable) {
    const double s = adapter.scale()[c];
    const double b = adapter.bias()[c];
    for (std::size_t i = 0; i < plane; ++i) data[c * plane + i] = s * data[c * plane + i] + b;
  }
  return FeatureMap(fm.channels(), fm.height(), fm.width(), std::move(data));
}

namespace {

void check_batch(const ChannelAdapter& adapter, const std::vector<LabeledFeature>& batch,
                 const Classifier& classifier) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "adapter batch is empty");
  if (classifier.input_dim() != adapter.dim()) {
    throw Error(ErrorCode::kDimMismatch, "classifier input dimension does not match adapter");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].features.size() != adapter.dim()) {
      throw Error(ErrorCode::kDimMismatch, "batch feature length mismatch")
          .with_index(static_cast<std::int64_t>(i));
    }
    if (batch[i].label >= classifier.num_classes()) {
      throw Error(ErrorCode::kInvalidArgument, "batch label out of range")
          .with_index(static_cast<std::int64_t>(i));
    }
  }
}

// Positions in adapter space that reach the classifier, in column order.
std::vector<std::size_t> used_channels(const Classifier& classifier) {
  if (classifier.selection()) return classifier.selection()->indices;
  std::vector<std::size_t> all(classifier.weights().cols());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

}  // namespace

AdapterGradient adapter_gradient(const ChannelAdapter& adapter,
                                 const std::vector<LabeledFeature>& batch,
                                 const Classifier& classifier, double logit_scale) {
  check_batch(adapter, batch, classifier);
  const auto& w = classifier.weights();
  const auto channels = used_channels(classifier);
  const std::size_t n_classes = w.rows();

  AdapterGradient g;
  g.grad_scale.assign(adapter.dim(), 0.0);
  g.grad_bias.assign(adapter.dim(), 0.0);

  std::vector<double> u(channels.size());
  std::vector<double> logits(n_classes);
  std::vector<double> g_unit(channels.size());
  for (const auto& sample : batch) {
    const auto z = adapter.apply(sample.features);
    for (std::size_t j = 0; j < channels.size(); ++j) u[j] = z[channels[j]];
    const double norm = l2_norm(u);
    if (!(norm >= 1e-12)) throw Error(ErrorCode::kZeroNormRow, "adapted feature has zero norm");
    for (auto& v : u) v /= norm;  // u is now the unit query
    for (std::size_t c = 0; c < n_classes; ++c) logits[c] = logit_scale * dot(u, w.row(c));
    const auto p = softmax(logits);
    g.loss += -std::log(std::max(p[sample.label], 1e-300));

    // dL/d(unit) = logit_scale * sum_c (p_c - [c == y]) w_c
    std::fill(g_unit.begin(), g_unit.end(), 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
      const double coeff = logit_scale * (p[c] - (c == sample.label ? 1.0 : 0.0));
      const auto wc = w.row(c);
      for (std::size_t j = 0; j < channels.size(); ++j) g_unit[j] += coeff * wc[j];
    }
    // Through the normalization: (I - u u^T) g / |z|.
    const double radial = dot(g_unit, u);
    for (std::size_t j = 0; j < channels.size(); ++j) {
      const double dz = (g_unit[j] - radial * u[j]) / norm;
      const auto ch = channels[j];
      g.grad_scale[ch] += dz * sample.features[ch];
      g.grad_bias[ch] += dz;
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  g.loss *= inv;
  for (auto& v : g.grad_scale) v *= inv;
  for (auto& v : g.grad_bias) v *= inv;
  for (const auto c : adapter.partition().frozen) {
    g.grad_scale[c] = 0.0;
    g.grad_bias[c] = 0.0;
  }
  return g;
}

double adapter_loss(const ChannelAdapter& adapter, const std::vector<LabeledFeature>& batch,
                    const Classifier& classifier, double logit_scale) {
  check_batch(adapter, batch, classifier);
  double loss = 0.0;
  for (const auto& sample : batch) {
    const auto z = adapter.apply(sample.features);
    auto scores = classify(classifier, z);
    for (auto& s : scores) s *= logit_scale;
    const auto p = softmax(scores);
    loss += -std::log(std::max(p[sample.label], 1e-300));
  }
  return loss / static_cast<double>(batch.size());
}

double adapter_step(ChannelAdapter& adapter, const std::vector<LabeledFeature>& batch,
                    const Classifier& classifier, double lr, double logit_scale) {
  const auto g = adapter_gradient(adapter, batch, classifier, logit_scale);
  adapter.descend(g.grad_scale, g.grad_bias, lr);
  return g.loss;
}

}  // namespace zori
