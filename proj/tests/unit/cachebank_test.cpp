#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "../support/oracles.hpp"
#include "../support/test_util.hpp"
#include "zori/cachebank.hpp"

namespace zori {
namespace {

using testing::random_rows;
using testing::random_vector;

std::vector<ClassInstances> seeded_instances(std::uint64_t seed, std::size_t classes,
                                             std::size_t per_class, std::size_t d) {
  std::vector<ClassInstances> out;
  for (std::size_t c = 0; c < classes; ++c) {
    out.push_back({c, random_rows(seed * 100 + c, per_class, d)});
  }
  return out;
}

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("class" + std::to_string(i));
  return out;
}

TEST(BuildSeenBank, OrthogonalPair) {
  const auto bank = build_seen_bank({{0, {{2, 0, 0}}}, {1, {{0, 3, 0}}}}, 1, names(2));
  EXPECT_EQ(bank.rows(), 2u);
  EXPECT_EQ(bank.keys().data(), (std::vector<double>{1, 0, 0, 0, 1, 0}));
  EXPECT_EQ(bank.values().data(), (std::vector<double>{1, 0, 0, 1}));
  EXPECT_TRUE(bank.keys().normalized());
  EXPECT_EQ(bank.provenance(),
            (std::vector<Provenance>{Provenance::kSeenGroundTruth, Provenance::kSeenGroundTruth}));
}

TEST(BuildSeenBank, DefaultCacheSize) { EXPECT_EQ(kDefaultCacheSize, 4u); }

TEST(BuildSeenBank, MatchesConcatenationOracle) {
  const auto inst = seeded_instances(3, 3, 4, 5);
  // Classes given out of index order: bank rows follow the given order.
  std::vector<ClassInstances> given{inst[2], inst[0], inst[1]};
  const auto bank = build_seen_bank(given, 2, names(3));
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> labels;
  for (const auto& ci : given) {
    for (std::size_t i = 0; i < 2; ++i) {
      rows.push_back(oracle::unit(ci.embeddings[i]));
      labels.push_back(ci.class_index);
    }
  }
  ASSERT_EQ(bank.rows(), 6u);
  EXPECT_EQ(bank.labels(), labels);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t d = 0; d < 5; ++d) EXPECT_NEAR(bank.keys().at(r, d), rows[r][d], 1e-15);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(bank.values().at(r, c), c == labels[r] ? 1.0 : 0.0);
    }
  }
}

TEST(BuildSeenBank, InsufficientInstances) {
  try {
    build_seen_bank(seeded_instances(1, 2, 3, 4), 4, names(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientInstances);
    EXPECT_EQ(e.index(), 0);
  }
}

TEST(AugmentUnseen, Replication) {
  EXPECT_EQ(unseen_replication(4), 2u);
  EXPECT_EQ(unseen_replication(1), 1u);
  EXPECT_EQ(unseen_replication(5), 2u);
}

TEST(AugmentUnseen, TopOneReplicatedHalfK) {
  const auto seen = build_seen_bank(seeded_instances(2, 2, 4, 6), 4, names(3));
  const UnseenPseudoSamples pseudo{
      2, {{0.3, random_vector(1, 6)}, {0.9, random_vector(2, 6)}, {0.9, random_vector(3, 6)}}};
  const auto bank = augment_unseen(seen, {pseudo});
  EXPECT_EQ(bank.rows(), 10u);
  EXPECT_EQ(bank.P(), 2u);
  EXPECT_EQ(bank.rows_per_class(), (std::vector<std::size_t>{4, 4, 2}));
  const auto expected = oracle::unit(pseudo.candidates[1].embedding);
  for (std::size_t r = 8; r < 10; ++r) {
    EXPECT_EQ(bank.labels()[r], 2u);
    EXPECT_EQ(bank.provenance()[r], Provenance::kUnseenPseudo);
    for (std::size_t d = 0; d < 6; ++d) EXPECT_NEAR(bank.keys().at(r, d), expected[d], 1e-15);
  }
  EXPECT_EQ(bank.keys().row(8)[0], bank.keys().row(9)[0]);
  EXPECT_EQ(bank.values().cols(), 3u);
}

TEST(AugmentUnseen, KOneGivesOneRow) {
  const auto seen = build_seen_bank(seeded_instances(2, 2, 1, 3), 1, names(4));
  const auto bank = augment_unseen(
      seen, {{3, {{0.5, {1, 1, 1}}}}, {2, {{0.5, {1, 0, 1}}}}});
  EXPECT_EQ(bank.rows_per_class(), (std::vector<std::size_t>{1, 1, 1, 1}));
  EXPECT_EQ(bank.labels(), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(AugmentUnseen, Errors) {
  const auto seen = build_seen_bank(seeded_instances(2, 2, 4, 3), 4, names(4));
  try {
    augment_unseen(seen, {{2, {{0.5, {1, 1, 1}}}}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingUnseenClass);
    EXPECT_EQ(e.index(), 3);
  }
  EXPECT_ZORI_ERROR(augment_unseen(seen, {{2, {{0.5, {1, 1, 1}}}}, {3, {}}}),
                    ErrorCode::kMissingUnseenClass);
  EXPECT_ZORI_ERROR(augment_unseen(seen, {{2, {{0.5, {1, 1}}}}, {3, {{0.5, {1, 1, 1}}}}}),
                    ErrorCode::kDimMismatch);
}

TEST(CacheBank, RejectsWrongRowCounts) {
  const auto keys = EmbeddingMatrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
  const auto seen = Provenance::kSeenGroundTruth;
  EXPECT_ZORI_ERROR(CacheBank(keys, {0, 0, 1}, names(2), 2, 1, {seen, seen, seen}),
                    ErrorCode::kInvalidArgument);
  EXPECT_ZORI_ERROR(CacheBank(keys, {0, 0, 1}, names(2), 2, 1,
                              {seen, Provenance::kUnseenPseudo, seen}),
                    ErrorCode::kInvalidArgument);
  EXPECT_ZORI_ERROR(CacheBank(keys, {0, 0, 5}, names(2), 1, 1, {seen, seen, seen}),
                    ErrorCode::kInvalidArgument);
  EXPECT_ZORI_ERROR(CacheBank(keys, {0, 1}, names(2), 1, 1, {seen, seen}),
                    ErrorCode::kShapeMismatch);
}

TEST(CacheLogits, OrthogonalKeys) {
  const auto bank = build_seen_bank({{0, {{1, 0}}}, {1, {{0, 1}}}}, 1, names(2));
  const std::vector<double> q{1, 0};
  const auto l = cache_logits(bank, q);
  EXPECT_NEAR(l[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  EXPECT_NEAR(l[0], 0.7311, 1e-4);
  EXPECT_NEAR(l[1], 0.2689, 1e-4);
}

TEST(CacheLogits, IdenticalKeysGiveLabelDistribution) {
  const std::vector<double> k{0.2, -0.4, 0.7};
  const auto seen = build_seen_bank({{0, {k, k, k, k}}, {1, {k, k, k, k}}}, 4, names(3));
  const auto bank = augment_unseen(seen, {{2, {{1.0, k}}}});
  const auto l = cache_logits(bank, random_vector(5, 3));
  EXPECT_NEAR(l[0], 0.4, 1e-12);
  EXPECT_NEAR(l[1], 0.4, 1e-12);
  EXPECT_NEAR(l[2], 0.2, 1e-12);
}

TEST(CacheLogits, MatchesMatrixOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto seen = build_seen_bank(seeded_instances(seed, 4, 2, 7), 2, names(6));
    const auto bank = augment_unseen(seen, {{4, {{0.1, random_vector(seed + 10, 7)}}},
                                            {5, {{0.1, random_vector(seed + 20, 7)}}}});
    ASSERT_EQ(bank.rows(), 10u);
    const auto q = random_vector(seed + 30, 7);
    const auto expected = oracle::cache_logits(testing::to_rows(bank.keys()), bank.labels(), 6, q);
    const auto got = cache_logits(bank, q);
    double sum = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(got[c], expected[c], 1e-12);
      EXPECT_GE(got[c], 0.0);
      sum += got[c];
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(CacheLogits, InvariantToBankDuplicationAndQueryScale) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = seeded_instances(seed + 50, 3, 3, 6);
    const auto bank = build_seen_bank(inst, 3, names(3));
    // Every class repeated: the doubled bank has 6 rows per class.
    std::vector<ClassInstances> doubled;
    for (const auto& ci : inst) {
      auto twice = ci.embeddings;
      twice.insert(twice.end(), ci.embeddings.begin(), ci.embeddings.end());
      doubled.push_back({ci.class_index, twice});
    }
    const auto big = build_seen_bank(doubled, 6, names(3));
    const auto q = random_vector(seed + 70, 6);
    auto scaled = q;
    for (auto& v : scaled) v *= 37.5;
    const auto a = cache_logits(bank, q);
    const auto b = cache_logits(big, q);
    const auto c = cache_logits(bank, scaled);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-9);
      EXPECT_NEAR(a[i], c[i], 1e-9);
    }
  }
}

TEST(CacheLogits, Errors) {
  const auto bank = build_seen_bank({{0, {{1, 0}}}, {1, {{0, 1}}}}, 1, names(2));
  const std::vector<double> q{1, 0, 0};
  EXPECT_ZORI_ERROR(cache_logits(bank, q), ErrorCode::kDimMismatch);
}

TEST(PriorInjected, AlphaZeroIsClassifier) {
  const auto text = EmbeddingMatrix::from_rows(random_rows(8, 3, 5));
  const auto clf = build_naive_classifier(text, names(3));
  const auto bank = build_seen_bank(seeded_instances(9, 3, 1, 5), 1, names(3));
  const auto q = random_vector(4, 5);
  EXPECT_EQ(prior_injected_logits(clf, bank, q, 0.0), classify(clf, q));
  EXPECT_EQ(kDefaultAlpha, 0.5);
}

TEST(PriorInjected, CompositionAndAffinity) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto text = EmbeddingMatrix::from_rows(random_rows(seed + 1, 4, 12));
    const auto sel = select_top_k(score_channels(text, 0.7), 6);
    const auto clf = build_refined_classifier(text, sel, names(4));
    const auto seen = build_seen_bank(seeded_instances(seed + 2, 3, 4, 12), 4, names(4));
    const auto bank = augment_unseen(seen, {{3, {{0.7, random_vector(seed + 3, 12)}}}});
    const auto q = random_vector(seed + 4, 12);

    const auto text_part = oracle::cosine_scores(
        [&] {
          oracle::Matrix sub;
          for (std::size_t r = 0; r < 4; ++r) {
            std::vector<double> row;
            for (const auto i : sel.indices) row.push_back(text.at(r, i));
            sub.push_back(row);
          }
          return sub;
        }(),
        slice_channels(q, sel));
    const auto cache_part =
        oracle::cache_logits(testing::to_rows(bank.keys()), bank.labels(), 4, q);
    const auto l0 = prior_injected_logits(clf, bank, q, 0.0);
    const auto l1 = prior_injected_logits(clf, bank, q, 1.0);
    const auto lh = prior_injected_logits(clf, bank, q, 0.5);
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(lh[c], text_part[c] + 0.5 * cache_part[c], 1e-12);
      for (const double alpha : {0.0, 0.25, 0.5, 2.0, 7.5}) {
        const auto la = prior_injected_logits(clf, bank, q, alpha);
        EXPECT_NEAR(la[c], l0[c] + alpha * (l1[c] - l0[c]), 1e-9);
      }
    }
  }
}

TEST(PriorInjected, ClassCountMismatch) {
  const auto clf = build_naive_classifier(EmbeddingMatrix::from_rows({{1, 0}, {0, 1}}), names(2));
  const auto bank = build_seen_bank({{0, {{1, 0}}}, {1, {{0, 1}}}}, 1, names(3));
  const std::vector<double> q{1, 0};
  EXPECT_ZORI_ERROR(prior_injected_logits(clf, bank, q), ErrorCode::kClassCountMismatch);
}

TEST(CacheBankFiles, RoundTrip) {
  testing::TempDir dir("bank");
  const auto seen = build_seen_bank(seeded_instances(4, 2, 4, 5), 4, names(3));
  const auto bank = augment_unseen(seen, {{2, {{0.7, random_vector(1, 5)}}}});
  write_cache_bank(dir.path() / "b", bank);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "b" / "keys.zemb"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "b" / "values.zemb"));
  const auto meta = nlohmann::json::parse(std::ifstream(dir.path() / "b" / "meta.json"));
  EXPECT_EQ(meta["K"], 4);
  EXPECT_EQ(meta["P"], 2);
  EXPECT_EQ(meta["provenance"][9], "unseen-pseudo");
  const auto back = read_cache_bank(dir.path() / "b");
  EXPECT_EQ(back.labels(), bank.labels());
  EXPECT_EQ(back.provenance(), bank.provenance());
  EXPECT_EQ(back.class_names(), bank.class_names());
  EXPECT_EQ(back.K(), 4u);
  EXPECT_EQ(back.P(), 2u);
  for (std::size_t i = 0; i < bank.keys().data().size(); ++i) {
    EXPECT_NEAR(back.keys().data()[i], bank.keys().data()[i], 1e-7);
  }
}

TEST(CacheBankFiles, MissingDirectory) {
  EXPECT_ZORI_ERROR(read_cache_bank("/nonexistent/bank"), ErrorCode::kIoError);
}

}  // namespace
}  // namespace zori
