#include "zori/cachebank.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "zori/error.hpp"
#include "zori/zemb.hpp"

namespace zori {

std::string_view provenance_name(Provenance p) {
  return p == Provenance::kSeenGroundTruth ? "seen-groundtruth" : "unseen-pseudo";
}

Provenance provenance_from_name(std::string_view name) {
  if (name == "seen-groundtruth") return Provenance::kSeenGroundTruth;
  if (name == "unseen-pseudo") return Provenance::kUnseenPseudo;
  throw Error(ErrorCode::kFormatError, "unknown provenance '" + std::string(name) + "'");
}

CacheBank::CacheBank(EmbeddingMatrix keys, std::vector<std::size_t> labels,
                     std::vector<std::string> class_names, std::size_t samples_per_seen_class,
                     std::size_t samples_per_unseen_class, std::vector<Provenance> provenance)
    : keys_(std::move(keys)),
      labels_(std::move(labels)),
      class_names_(std::move(class_names)),
      k_(samples_per_seen_class),
      p_(samples_per_unseen_class),
      provenance_(std::move(provenance)) {
  if (labels_.size() != keys_.rows() || provenance_.size() != keys_.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "cache bank keys, labels and provenance differ in length");
  }
  for (std::size_t r = 0; r < labels_.size(); ++r) {
    if (labels_[r] >= class_names_.size()) {
      throw Error(ErrorCode::kInvalidArgument, "cache label out of range")
          .with_index(static_cast<std::int64_t>(r));
    }
  }
  if (!keys_.normalized()) keys_ = l2_normalize_rows(keys_);

  const auto counts = rows_per_class();
  std::vector<std::optional<Provenance>> class_origin(class_names_.size());
  for (std::size_t r = 0; r < labels_.size(); ++r) {
    auto& origin = class_origin[labels_[r]];
    if (origin && *origin != provenance_[r]) {
      throw Error(ErrorCode::kInvalidArgument, "class mixes seen and pseudo cache rows")
          .with_index(static_cast<std::int64_t>(labels_[r]));
    }
    origin = provenance_[r];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) continue;
    const std::size_t expected = *class_origin[c] == Provenance::kSeenGroundTruth ? k_ : p_;
    if (counts[c] != expected) {
      throw Error(ErrorCode::kInvalidArgument,
                  "class " + class_names_[c] + " has " + std::to_string(counts[c]) +
                      " cache rows, expected " + std::to_string(expected))
          .with_index(static_cast<std::int64_t>(c));
    }
  }
}

EmbeddingMatrix CacheBank::values() const {
  std::vector<double> data(rows() * num_classes(), 0.0);
  for (std::size_t r = 0; r < rows(); ++r) data[r * num_classes() + labels_[r]] = 1.0;
  return EmbeddingMatrix(rows(), num_classes(), std::move(data));
}

std::vector<std::size_t> CacheBank::rows_per_class() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (const auto l : labels_) ++counts[l];
  return counts;
}

CacheBank build_seen_bank(const std::vector<ClassInstances>& seen, std::size_t K,
                          std::vector<std::string> class_names) {
  if (K == 0) throw Error(ErrorCode::kBadCount, "K must be at least 1");
  if (seen.empty()) throw Error(ErrorCode::kEmptyBank, "no seen classes");
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  std::vector<bool> used(class_names.size(), false);
  for (const auto& cls : seen) {
    if (cls.class_index >= class_names.size()) {
      throw Error(ErrorCode::kInvalidArgument, "seen class index out of range")
          .with_index(static_cast<std::int64_t>(cls.class_index));
    }
    if (used[cls.class_index]) {
      throw Error(ErrorCode::kInvalidArgument, "seen class listed twice")
          .with_index(static_cast<std::int64_t>(cls.class_index));
    }
    used[cls.class_index] = true;
    if (cls.embeddings.size() < K) {
      throw Error(ErrorCode::kInsufficientInstances,
                  "class " + class_names[cls.class_index] + " has " +
                      std::to_string(cls.embeddings.size()) + " instances, need " +
                      std::to_string(K))
          .with_index(static_cast<std::int64_t>(cls.class_index));
    }
    for (std::size_t i = 0; i < K; ++i) {
      rows.push_back(l2_normalize(cls.embeddings[i]));
      labels.push_back(cls.class_index);
    }
  }
  std::vector<Provenance> provenance(rows.size(), Provenance::kSeenGroundTruth);
  return CacheBank(l2_normalize_rows(EmbeddingMatrix::from_rows(rows)), std::move(labels),
                   std::move(class_names), K, 0, std::move(provenance));
}

std::size_t unseen_replication(std::size_t K) { return std::max<std::size_t>(1, K / 2); }

CacheBank augment_unseen(const CacheBank& bank, const std::vector<UnseenPseudoSamples>& pseudo) {
  const auto counts = bank.rows_per_class();
  const std::size_t replicas = unseen_replication(bank.K());

  std::vector<const UnseenPseudoSamples*> by_class(bank.num_classes(), nullptr);
  for (const auto& p : pseudo) {
    if (p.class_index >= bank.num_classes()) {
      throw Error(ErrorCode::kInvalidArgument, "pseudo class index out of range")
          .with_index(static_cast<std::int64_t>(p.class_index));
    }
    if (counts[p.class_index] != 0) {
      throw Error(ErrorCode::kInvalidArgument,
                  "class " + bank.class_names()[p.class_index] + " already has cache rows")
          .with_index(static_cast<std::int64_t>(p.class_index));
    }
    by_class[p.class_index] = &p;
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels(bank.labels());
  std::vector<Provenance> provenance(bank.provenance());
  for (std::size_t r = 0; r < bank.rows(); ++r) {
    const auto k = bank.keys().row(r);
    rows.emplace_back(k.begin(), k.end());
  }
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    if (counts[c] != 0) continue;
    const auto* p = by_class[c];
    if (p == nullptr || p->candidates.empty()) {
      throw Error(ErrorCode::kMissingUnseenClass,
                  "no pseudo samples for unseen class " + bank.class_names()[c])
          .with_index(static_cast<std::int64_t>(c));
    }
    // Highest score wins; ties go to the earliest candidate.
    const auto best = std::max_element(
        p->candidates.begin(), p->candidates.end(),
        [](const ScoredEmbedding& a, const ScoredEmbedding& b) { return a.score < b.score; });
    if (best->embedding.size() != bank.dim()) {
      throw Error(ErrorCode::kDimMismatch, "pseudo embedding length mismatch")
          .with_index(static_cast<std::int64_t>(c));
    }
    const auto unit = l2_normalize(best->embedding);
    for (std::size_t i = 0; i < replicas; ++i) {
      rows.push_back(unit);
      labels.push_back(c);
      provenance.push_back(Provenance::kUnseenPseudo);
    }
  }
  return CacheBank(l2_normalize_rows(EmbeddingMatrix::from_rows(rows)), std::move(labels),
                   bank.class_names(), bank.K(), replicas, std::move(provenance));
}

std::vector<double> cache_logits(const CacheBank& bank, std::span<const double> query) {
  if (bank.rows() == 0) throw Error(ErrorCode::kEmptyBank, "cache bank is empty");
  if (query.size() != bank.dim()) {
    throw Error(ErrorCode::kDimMismatch, "query length " + std::to_string(query.size()) +
                                             " != cache key dimension " +
                                             std::to_string(bank.dim()));
  }
  const auto q = l2_normalize(query);
  std::vector<double> affinity(bank.rows());
  for (std::size_t r = 0; r < bank.rows(); ++r) affinity[r] = dot(q, bank.keys().row(r));
  const auto weights = softmax(affinity);
  std::vector<double> logits(bank.num_classes(), 0.0);
  for (std::size_t r = 0; r < bank.rows(); ++r) logits[bank.labels()[r]] += weights[r];
  return logits;
}

std::vector<double> prior_injected_logits(const Classifier& classifier, const CacheBank& bank,
                                          std::span<const double> query, double alpha) {
  if (classifier.num_classes() != bank.num_classes()) {
    throw Error(ErrorCode::kClassCountMismatch, "classifier has " +
                                                    std::to_string(classifier.num_classes()) +
                                                    " classes, cache bank " +
                                                    std::to_string(bank.num_classes()));
  }
  auto logits = classify(classifier, query);
  const auto cached = cache_logits(bank, query);
  for (std::size_t c = 0; c < logits.size(); ++c) logits[c] += alpha * cached[c];
  return logits;
}

void write_cache_bank(const std::filesystem::path& dir, const CacheBank& bank) {
  std::filesystem::create_directories(dir);
  write_embeddings(dir / "keys.zemb", bank.keys());
  write_embeddings(dir / "values.zemb", bank.values().with_labels(std::nullopt));
  nlohmann::json meta;
  meta["K"] = bank.K();
  meta["P"] = bank.P();
  meta["class_names"] = bank.class_names();
  auto& prov = meta["provenance"] = nlohmann::json::array();
  for (const auto p : bank.provenance()) prov.push_back(provenance_name(p));
  std::ofstream out(dir / "meta.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

CacheBank read_cache_bank(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + (dir / "meta.json").string());
  nlohmann::json meta;
  std::vector<std::string> names;
  std::vector<Provenance> provenance;
  std::size_t k = 0;
  std::size_t p = 0;
  try {
    meta = nlohmann::json::parse(in);
    k = meta.at("K").get<std::size_t>();
    p = meta.at("P").get<std::size_t>();
    names = meta.at("class_names").get<std::vector<std::string>>();
    for (const auto& s : meta.at("provenance")) {
      provenance.push_back(provenance_from_name(s.get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad cache meta.json: ") + e.what());
  }
  auto keys = read_embeddings(dir / "keys.zemb");
  const auto values = read_embeddings(dir / "values.zemb");
  if (values.rows() != keys.rows() || values.cols() != names.size()) {
    throw Error(ErrorCode::kFormatError, "values.zemb shape does not match keys and classes");
  }
  std::vector<std::size_t> labels;
  for (std::size_t r = 0; r < values.rows(); ++r) {
    std::size_t hot = names.size();
    std::size_t ones = 0;
    for (std::size_t c = 0; c < values.cols(); ++c) {
      const double v = values.at(r, c);
      if (v == 1.0) {
        hot = c;
        ++ones;
      } else if (v != 0.0) {
        ones = 2;
      }
    }
    if (ones != 1) {
      throw Error(ErrorCode::kFormatError, "values row is not one-hot")
          .with_index(static_cast<std::int64_t>(r));
    }
    labels.push_back(hot);
  }
  return CacheBank(l2_normalize_rows(keys), std::move(labels), std::move(names), k, p,
                   std::move(provenance));
}

}  // namespace zori
