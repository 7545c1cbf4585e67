#pragma once

// Discrimination-enhanced classifier.
//
// Class text embeddings are scored per channel by how similar the classes
// are on that channel (S, mean product over ordered class pairs) and how
// spread out they are (V, population variance). Channels are ranked by
// O = -lambda*S + (1-lambda)*V and the classifier keeps the top k.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "zori/tensor.hpp"

namespace zori {

inline constexpr double kDefaultLambda = 0.7;
inline constexpr std::size_t kDefaultTopK = 300;

struct ChannelScore {
  std::vector<double> similarity;  // S
  std::vector<double> variance;    // V
  std::vector<double> objective;   // O
  double lambda = kDefaultLambda;
};

struct ChannelSelection {
  std::vector<std::size_t> indices;  // descending O, ties by ascending index
  std::size_t source_dim = 0;

  std::size_t k() const noexcept { return indices.size(); }
  friend bool operator==(const ChannelSelection&, const ChannelSelection&) = default;
};

nlohmann::json to_json(const ChannelSelection& s);
ChannelSelection channel_selection_from_json(const nlohmann::json& j);

class Classifier {
 public:
  Classifier(EmbeddingMatrix weights, std::vector<std::string> class_names,
             std::optional<ChannelSelection> selection = std::nullopt);

  const EmbeddingMatrix& weights() const noexcept { return weights_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::optional<ChannelSelection>& selection() const noexcept { return selection_; }
  std::size_t num_classes() const noexcept { return weights_.rows(); }
  // Length of the queries `classify` accepts: the pre-selection dimension
  // when a selection is attached, otherwise the weight column count.
  std::size_t input_dim() const noexcept;

 private:
  EmbeddingMatrix weights_;
  std::vector<std::string> class_names_;
  std::optional<ChannelSelection> selection_;
};

ChannelScore score_channels(const EmbeddingMatrix& embeddings, double lambda = kDefaultLambda);

ChannelSelection select_top_k(const ChannelScore& score, std::size_t k);

std::vector<double> slice_channels(std::span<const double> v, const ChannelSelection& selection);

// Text classifier with every channel (rows L2-normalized).
Classifier build_naive_classifier(const EmbeddingMatrix& embeddings,
                                  std::vector<std::string> class_names);

Classifier build_refined_classifier(const EmbeddingMatrix& embeddings,
                                    const ChannelSelection& selection,
                                    std::vector<std::string> class_names);

// Cosine score per class. `query` lives in the classifier's input space and
// is sliced to the selected channels when the classifier carries a selection.
std::vector<double> classify(const Classifier& classifier, std::span<const double> query);

// Cosine score per class for a query already expressed in the classifier's
// weight columns.
std::vector<double> classify_sliced(const Classifier& classifier, std::span<const double> query);

EmbeddingMatrix average_prompt_templates(const std::vector<EmbeddingMatrix>& per_template);

}  // namespace zori
