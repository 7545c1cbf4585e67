#include <gtest/gtest.h>

#include <string>

#include "../support/test_util.hpp"
#include "zori/zemb.hpp"

namespace zori {
namespace {

using testing::TempDir;

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Hand-assembled file: 1 x 2 matrix (1.0, -2.0) labelled "a".
std::vector<std::uint8_t> golden_bytes() {
  std::vector<std::uint8_t> b{'Z', 'E', 'M', 'B'};
  put32(b, 1);
  put32(b, 0);
  put32(b, 2);
  put64(b, 1);
  put64(b, 2);
  put32(b, 0x3F800000u);  // 1.0f
  put32(b, 0xC0000000u);  // -2.0f
  const std::string side = R"({"labels":["a"]})";
  put64(b, side.size());
  b.insert(b.end(), side.begin(), side.end());
  return b;
}

TEST(Zemb, EncodesGoldenLayout) {
  ZembTensor t{{1, 2}, {1.0f, -2.0f}, std::vector<std::string>{"a"}};
  EXPECT_EQ(encode_zemb(t), golden_bytes());
  EXPECT_EQ(decode_zemb(golden_bytes()), t);
}

TEST(Zemb, NoSidecarWithoutLabels) {
  ZembTensor t{{2}, {0.5f, 0.25f}, std::nullopt};
  EXPECT_EQ(encode_zemb(t).size(), 16u + 8u + 8u);
  EXPECT_EQ(decode_zemb(encode_zemb(t)), t);
}

TEST(Zemb, EmbeddingFileRoundTripIsBitIdentical) {
  TempDir dir("zemb");
  const auto path = dir.path() / "m.zemb";
  const EmbeddingMatrix m(2, 3, {0.1, -2.5, 3.0, 1e-3, 7.0, -0.0},
                          std::vector<std::string>{"x", "y"});
  write_embeddings(path, m);
  const auto bytes = read_file_bytes(path);
  const auto back = read_embeddings(path);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(static_cast<float>(back.data()[i]), static_cast<float>(m.data()[i]));
  }
  EXPECT_EQ(back.row_labels(), m.row_labels());
  write_embeddings(path, back);
  EXPECT_EQ(read_file_bytes(path), bytes);
}

TEST(Zemb, RandomTensorsRoundTrip) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CounterRng rng(seed, 1);
    ZembTensor t;
    const auto rank = 1 + rng.below(3);
    std::uint64_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      t.dims.push_back(1 + rng.below(5));
      n *= t.dims.back();
    }
    for (std::uint64_t i = 0; i < n; ++i) t.payload.push_back(static_cast<float>(rng.normal()));
    if (rng.uniform() < 0.5) {
      std::vector<std::string> labels;
      for (std::uint64_t i = 0; i < t.dims[0]; ++i) labels.push_back("l" + std::to_string(i));
      t.labels = labels;
    }
    const auto bytes = encode_zemb(t);
    EXPECT_EQ(decode_zemb(bytes), t);
    EXPECT_EQ(encode_zemb(decode_zemb(bytes)), bytes);
  }
}

TEST(Zemb, FeatureMapRoundTrip) {
  TempDir dir("zemb");
  FeatureMap fm(2, 2, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  write_feature_map(dir.path() / "f.zemb", fm);
  EXPECT_EQ(read_feature_map(dir.path() / "f.zemb"), fm);
}

std::uint64_t format_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_zemb(bytes);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatError);
    return e.offset().value_or(~0ull);
  }
  ADD_FAILURE() << "decode accepted malformed bytes";
  return ~0ull;
}

TEST(Zemb, TruncatedPayloadReportsPayloadOffset) {
  auto bytes = encode_zemb(ZembTensor{{2, 3}, std::vector<float>(6, 1.0f), std::nullopt});
  bytes.resize(bytes.size() - 5);
  EXPECT_EQ(format_offset(bytes), 16u + 2u * 8u);
}

TEST(Zemb, BadMagic) {
  auto bytes = golden_bytes();
  bytes[0] = 'X';
  EXPECT_EQ(format_offset(bytes), 0u);
  try {
    decode_zemb(bytes);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(Zemb, UnknownVersionAndDtype) {
  auto v = golden_bytes();
  v[4] = 2;
  EXPECT_EQ(format_offset(v), 4u);
  auto d = golden_bytes();
  d[8] = 1;
  EXPECT_EQ(format_offset(d), 8u);
}

TEST(Zemb, TruncatedHeader) {
  auto bytes = golden_bytes();
  bytes.resize(10);
  format_offset(bytes);
}

TEST(Zemb, BadSidecars) {
  auto len = golden_bytes();
  len.push_back(' ');
  EXPECT_EQ(format_offset(len), 32u + 8u);

  auto json = golden_bytes();
  json[json.size() - 2] = '!';
  format_offset(json);

  ZembTensor t{{2, 1}, {1.0f, 2.0f}, std::nullopt};
  auto count = encode_zemb(t);
  const std::string side = R"({"labels":["only_one"]})";
  put64(count, side.size());
  count.insert(count.end(), side.begin(), side.end());
  format_offset(count);
}

TEST(Zemb, RankChecks) {
  TempDir dir("zemb");
  write_zemb(dir.path() / "r3.zemb", ZembTensor{{1, 1, 1}, {1.0f}, std::nullopt});
  EXPECT_ZORI_ERROR(read_embeddings(dir.path() / "r3.zemb"), ErrorCode::kFormatError);
  write_zemb(dir.path() / "r2.zemb", ZembTensor{{1, 1}, {1.0f}, std::nullopt});
  EXPECT_ZORI_ERROR(read_feature_map(dir.path() / "r2.zemb"), ErrorCode::kFormatError);
}

TEST(Zemb, MissingFileIsIoError) {
  EXPECT_ZORI_ERROR(read_zemb("/nonexistent/dir/x.zemb"), ErrorCode::kIoError);
}

TEST(Zemb, FileErrorsKeepOffset) {
  TempDir dir("zemb");
  auto bytes = golden_bytes();
  bytes[0] = 'Q';
  write_file_bytes(dir.path() / "bad.zemb", bytes);
  try {
    read_embeddings(dir.path() / "bad.zemb");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFormatError);
    EXPECT_EQ(e.offset(), 0u);
  }
}

}  // namespace
}  // namespace zori
