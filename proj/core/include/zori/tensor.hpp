#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace zori {

// Dense row-major matrix of embeddings: one row per class or instance,
// one column per channel. Elements are always finite. The `normalized`
// flag is only ever set when every row has unit L2 norm (within 1e-5).
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                  std::optional<std::vector<std::string>> row_labels = std::nullopt);

  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows,
                                   std::optional<std::vector<std::string>> row_labels = std::nullopt);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> row(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const std::vector<double>& data() const noexcept { return data_; }
  const std::optional<std::vector<std::string>>& row_labels() const noexcept { return labels_; }
  bool normalized() const noexcept { return normalized_; }

  // Checks the unit-norm invariant and sets the flag; throws
  // InvalidArgument if any row is off by more than 1e-5.
  EmbeddingMatrix& mark_normalized();

  EmbeddingMatrix with_labels(std::optional<std::vector<std::string>> labels) const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
  std::optional<std::vector<std::string>> labels_;
  bool normalized_ = false;
};

// Channels x height x width.
class FeatureMap {
 public:
  FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
             std::vector<double> data);

  std::size_t channels() const noexcept { return channels_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * height_ + y) * width_ + x];
  }
  std::span<const double> channel(std::size_t c) const {
    return {data_.data() + c * height_ * width_, height_ * width_};
  }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  std::size_t channels_;
  std::size_t height_;
  std::size_t width_;
  std::vector<double> data_;
};

class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t height, std::size_t width);
  BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits);

  // Axis-aligned rectangle [y0, y0+h) x [x0, x0+w), clipped to the grid.
  static BinaryMask rectangle(std::size_t height, std::size_t width, std::int64_t y0,
                              std::int64_t x0, std::int64_t h, std::int64_t w);

  // Row-major run lengths, alternating background/foreground and starting
  // with a (possibly zero) background run.
  static BinaryMask from_rle(std::size_t height, std::size_t width,
                             std::span<const std::uint64_t> counts);
  std::vector<std::uint64_t> to_rle() const;

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  bool get(std::size_t y, std::size_t x) const { return bits_[y * width_ + x] != 0; }
  void set(std::size_t y, std::size_t x, bool v = true) { bits_[y * width_ + x] = v ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::size_t count() const noexcept;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> bits_;
};

double l2_norm(std::span<const double> v);
std::vector<double> l2_normalize(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

// Throws ZeroNormRow(index) when a row norm is below 1e-12.
EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m);

// Max-subtracted softmax; throws NonFiniteInput.
std::vector<double> softmax(std::span<const double> v);

// Per-channel mean over the set bits of `mask`.
std::vector<double> mask_pool(const FeatureMap& fm, const BinaryMask& mask);

}  // namespace zori
