#pragma once

// ZEMB: little-endian binary tensor container shared with external
// embedding extractors.
//
//   offset  field
//   0       magic "ZEMB"
//   4       version   u32 = 1
//   8       dtype     u32 (0 = float32)
//   12      rank      u32
//   16      dims      rank x u64
//   ..      payload   prod(dims) x float32, row-major
//   ..      optional  u64 byte length + UTF-8 JSON {"labels": [...]}
//
// Readers reject unknown versions and dtypes. Labels, when present, name
// the entries of the first dimension.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "zori/tensor.hpp"

namespace zori {

inline constexpr std::uint32_t kZembVersion = 1;
inline constexpr std::uint32_t kZembFloat32 = 0;

struct ZembTensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> payload;
  std::optional<std::vector<std::string>> labels;

  friend bool operator==(const ZembTensor&, const ZembTensor&) = default;
};

std::vector<std::uint8_t> encode_zemb(const ZembTensor& t);
// Throws FormatError with the byte offset where decoding failed.
ZembTensor decode_zemb(const std::vector<std::uint8_t>& bytes);

void write_zemb(const std::filesystem::path& path, const ZembTensor& t);
ZembTensor read_zemb(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

void write_feature_map(const std::filesystem::path& path, const FeatureMap& fm);
FeatureMap read_feature_map(const std::filesystem::path& path);

ZembTensor to_zemb(const EmbeddingMatrix& m);
EmbeddingMatrix embeddings_from_zemb(const ZembTensor& t);

}  // namespace zori
