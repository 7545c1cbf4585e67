#pragma once

// Prior-injected prediction with a cache bank of visual prototypes.
//
// Keys are L2-normalized instance embeddings; each key carries a one-hot
// class label. A query is scored against all keys by cosine similarity,
// the similarities are softmaxed and used to mix the labels, and the result
// is added (weighted by alpha) to the text classifier score.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zori/dec.hpp"
#include "zori/tensor.hpp"

namespace zori {

inline constexpr std::size_t kDefaultCacheSize = 4;
inline constexpr double kDefaultAlpha = 0.5;

enum class Provenance { kSeenGroundTruth, kUnseenPseudo };

std::string_view provenance_name(Provenance p);
Provenance provenance_from_name(std::string_view name);

struct ClassInstances {
  std::size_t class_index = 0;
  std::vector<std::vector<double>> embeddings;  // input order is selection order
};

struct ScoredEmbedding {
  double score = 0.0;
  std::vector<double> embedding;
};

struct UnseenPseudoSamples {
  std::size_t class_index = 0;
  std::vector<ScoredEmbedding> candidates;
};

class CacheBank {
 public:
  CacheBank(EmbeddingMatrix keys, std::vector<std::size_t> labels,
            std::vector<std::string> class_names, std::size_t samples_per_seen_class,
            std::size_t samples_per_unseen_class, std::vector<Provenance> provenance);

  const EmbeddingMatrix& keys() const noexcept { return keys_; }
  // Class index of each key row; the one-hot value matrix is implied.
  const std::vector<std::size_t>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::vector<Provenance>& provenance() const noexcept { return provenance_; }
  std::size_t K() const noexcept { return k_; }
  std::size_t P() const noexcept { return p_; }
  std::size_t num_classes() const noexcept { return class_names_.size(); }
  std::size_t rows() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return keys_.cols(); }

  // rows x N one-hot matrix.
  EmbeddingMatrix values() const;
  std::vector<std::size_t> rows_per_class() const;

 private:
  EmbeddingMatrix keys_;
  std::vector<std::size_t> labels_;
  std::vector<std::string> class_names_;
  std::size_t k_;
  std::size_t p_;
  std::vector<Provenance> provenance_;
};

// First K embeddings of every seen class, normalized and concatenated in
// the order the classes are given.
CacheBank build_seen_bank(const std::vector<ClassInstances>& seen, std::size_t K,
                          std::vector<std::string> class_names);

// Number of pseudo rows each unseen class receives: max(1, K/2).
std::size_t unseen_replication(std::size_t K);

// Appends the top-scoring pseudo embedding of every class that has no seen
// rows, replicated max(1, K/2) times.
CacheBank augment_unseen(const CacheBank& bank, const std::vector<UnseenPseudoSamples>& pseudo);

// softmax(normalize(query) . keys^T) . L
std::vector<double> cache_logits(const CacheBank& bank, std::span<const double> query);

// classify(classifier, query) + alpha * cache_logits(bank, query)
std::vector<double> prior_injected_logits(const Classifier& classifier, const CacheBank& bank,
                                          std::span<const double> query,
                                          double alpha = kDefaultAlpha);

// Directory layout: keys.zemb, values.zemb, meta.json.
void write_cache_bank(const std::filesystem::path& dir, const CacheBank& bank);
CacheBank read_cache_bank(const std::filesystem::path& dir);

}  // namespace zori
