#include "zori/dec.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

nlohmann::json to_json(const ChannelSelection& s) {
  return {{"k", s.k()}, {"source_D", s.source_dim}, {"indices", s.indices}};
}

ChannelSelection channel_selection_from_json(const nlohmann::json& j) {
  ChannelSelection s;
  try {
    s.source_dim = j.at("source_D").get<std::size_t>();
    s.indices = j.at("indices").get<std::vector<std::size_t>>();
    if (j.at("k").get<std::size_t>() != s.indices.size()) {
      throw Error(ErrorCode::kFormatError, "selection k does not match index count");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad channel selection: ") + e.what());
  }
  std::vector<bool> seen(s.source_dim, false);
  for (const auto i : s.indices) {
    if (i >= s.source_dim || seen[i]) {
      throw Error(ErrorCode::kFormatError, "selection indices must be distinct and < source_D");
    }
    seen[i] = true;
  }
  if (s.indices.empty()) throw Error(ErrorCode::kFormatError, "empty channel selection");
  return s;
}

Classifier::Classifier(EmbeddingMatrix weights, std::vector<std::string> class_names,
                       std::optional<ChannelSelection> selection)
    : weights_(std::move(weights)),
      class_names_(std::move(class_names)),
      selection_(std::move(selection)) {
  if (class_names_.size() != weights_.rows()) {
    throw Error(ErrorCode::kDimMismatch, "class name count does not match classifier rows");
  }
  if (selection_ && selection_->k() != weights_.cols()) {
    throw Error(ErrorCode::kDimMismatch, "selection size does not match classifier columns");
  }
  if (!weights_.normalized()) weights_ = l2_normalize_rows(weights_);
}

std::size_t Classifier::input_dim() const noexcept {
  return selection_ ? selection_->source_dim : weights_.cols();
}

ChannelScore score_channels(const EmbeddingMatrix& embeddings, double lambda) {
  if (embeddings.rows() < 2) {
    throw Error(ErrorCode::kTooFewClasses, "channel scoring needs at least two classes");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda must be in [0, 1]");
  }
  const EmbeddingMatrix x = embeddings.normalized() ? embeddings : l2_normalize_rows(embeddings);
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  const double nd = static_cast<double>(n);

  std::vector<double> sum(d, 0.0);
  std::vector<double> sum_sq(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      sum[c] += r[c];
      sum_sq[c] += r[c] * r[c];
    }
  }

  ChannelScore score;
  score.lambda = lambda;
  score.similarity.resize(d);
  score.variance.assign(d, 0.0);
  score.objective.resize(d);
  // Sum over ordered pairs i != j of x_i x_j = (sum x)^2 - sum x^2.
  for (std::size_t c = 0; c < d; ++c) {
    score.similarity[c] = (sum[c] * sum[c] - sum_sq[c]) / (nd * (nd - 1.0));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = r[c] - sum[c] / nd;
      score.variance[c] += dev * dev;
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    score.variance[c] /= nd;
    score.objective[c] = -lambda * score.similarity[c] + (1.0 - lambda) * score.variance[c];
  }
  return score;
}

ChannelSelection select_top_k(const ChannelScore& score, std::size_t k) {
  const std::size_t d = score.objective.size();
  if (k < 1 || k > d) {
    throw Error(ErrorCode::kKOutOfRange,
                "k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  }
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& o = score.objective;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&o](std::size_t a, std::size_t b) {
                      if (o[a] != o[b]) return o[a] > o[b];
                      return a < b;
                    });
  order.resize(k);
  return ChannelSelection{std::move(order), d};
}

std::vector<double> slice_channels(std::span<const double> v, const ChannelSelection& selection) {
  if (v.size() != selection.source_dim) {
    throw Error(ErrorCode::kDimMismatch, "vector length " + std::to_string(v.size()) +
                                             " != selection source_D " +
                                             std::to_string(selection.source_dim));
  }
  std::vector<double> out;
  out.reserve(selection.k());
  for (const auto i : selection.indices) out.push_back(v[i]);
  return out;
}

Classifier build_naive_classifier(const EmbeddingMatrix& embeddings,
                                  std::vector<std::string> class_names) {
  return Classifier(l2_normalize_rows(embeddings), std::move(class_names));
}

Classifier build_refined_classifier(const EmbeddingMatrix& embeddings,
                                    const ChannelSelection& selection,
                                    std::vector<std::string> class_names) {
  if (selection.source_dim != embeddings.cols()) {
    throw Error(ErrorCode::kDimMismatch, "selection was computed for a different dimension");
  }
  std::vector<double> data;
  data.reserve(embeddings.rows() * selection.k());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const auto sliced = slice_channels(embeddings.row(r), selection);
    data.insert(data.end(), sliced.begin(), sliced.end());
  }
  EmbeddingMatrix weights(embeddings.rows(), selection.k(), std::move(data),
                          embeddings.row_labels());
  return Classifier(l2_normalize_rows(weights), std::move(class_names), selection);
}

std::vector<double> classify_sliced(const Classifier& classifier, std::span<const double> query) {
  const auto& w = classifier.weights();
  if (query.size() != w.cols()) {
    throw Error(ErrorCode::kDimMismatch, "query length " + std::to_string(query.size()) +
                                             " != classifier columns " + std::to_string(w.cols()));
  }
  const auto q = l2_normalize(query);
  std::vector<double> scores(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) scores[i] = dot(q, w.row(i));
  return scores;
}

std::vector<double> classify(const Classifier& classifier, std::span<const double> query) {
  if (!classifier.selection()) return classify_sliced(classifier, query);
  return classify_sliced(classifier, slice_channels(query, *classifier.selection()));
}

EmbeddingMatrix average_prompt_templates(const std::vector<EmbeddingMatrix>& per_template) {
  if (per_template.empty()) {
    throw Error(ErrorCode::kEmptyTemplateList, "no prompt templates");
  }
  const auto rows = per_template.front().rows();
  const auto cols = per_template.front().cols();
  std::vector<double> acc(rows * cols, 0.0);
  for (std::size_t t = 0; t < per_template.size(); ++t) {
    const auto& m = per_template[t];
    if (m.rows() != rows || m.cols() != cols) {
      throw Error(ErrorCode::kShapeMismatch, "template matrices differ in shape")
          .with_index(static_cast<std::int64_t>(t));
    }
    const auto unit = l2_normalize_rows(m);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += unit.data()[i];
  }
  for (auto& v : acc) v /= static_cast<double>(per_template.size());
  return l2_normalize_rows(
      EmbeddingMatrix(rows, cols, std::move(acc), per_template.front().row_labels()));
}

}  // namespace zori
