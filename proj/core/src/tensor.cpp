#include "zori/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zori/error.hpp"

namespace zori {

namespace {

constexpr double kMinNorm = 1e-12;
constexpr double kUnitTolerance = 1e-5;

void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::kNonFiniteInput, std::string(what) + " has a non-finite element")
          .with_index(static_cast<std::int64_t>(i));
    }
  }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                                 std::optional<std::vector<std::string>> row_labels)
    : rows_(rows), cols_(cols), data_(std::move(data)), labels_(std::move(row_labels)) {
  if (rows_ == 0 || cols_ == 0) {
    throw Error(ErrorCode::kShapeMismatch, "embedding matrix needs at least one row and column");
  }
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kShapeMismatch, "data size " + std::to_string(data_.size()) +
                                               " does not match " + std::to_string(rows_) + "x" +
                                               std::to_string(cols_));
  }
  if (labels_ && labels_->size() != rows_) {
    throw Error(ErrorCode::kShapeMismatch, "row label count does not match row count");
  }
  require_finite(data_, "embedding matrix");
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<std::vector<double>>& rows,
                                           std::optional<std::vector<std::string>> row_labels) {
  if (rows.empty()) throw Error(ErrorCode::kShapeMismatch, "no rows");
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) {
      throw Error(ErrorCode::kShapeMismatch, "ragged rows").with_index(static_cast<std::int64_t>(r));
    }
    data.insert(data.end(), rows[r].begin(), rows[r].end());
  }
  return EmbeddingMatrix(rows.size(), cols, std::move(data), std::move(row_labels));
}

std::span<const double> EmbeddingMatrix::row(std::size_t i) const {
  if (i >= rows_) throw Error(ErrorCode::kDimMismatch, "row index out of range");
  return {data_.data() + i * cols_, cols_};
}

EmbeddingMatrix& EmbeddingMatrix::mark_normalized() {
  for (std::size_t r = 0; r < rows_; ++r) {
    if (std::abs(l2_norm(row(r)) - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::kInvalidArgument, "row is not unit norm")
          .with_index(static_cast<std::int64_t>(r));
    }
  }
  normalized_ = true;
  return *this;
}

EmbeddingMatrix EmbeddingMatrix::with_labels(std::optional<std::vector<std::string>> labels) const {
  EmbeddingMatrix out(rows_, cols_, data_, std::move(labels));
  out.normalized_ = normalized_;
  return out;
}

FeatureMap::FeatureMap(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<double> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
  if (channels_ == 0 || height_ == 0 || width_ == 0) {
    throw Error(ErrorCode::kShapeMismatch, "feature map dimensions must be positive");
  }
  if (data_.size() != channels_ * height_ * width_) {
    throw Error(ErrorCode::kShapeMismatch, "feature map data size mismatch");
  }
  require_finite(data_, "feature map");
}

BinaryMask::BinaryMask(std::size_t height, std::size_t width)
    : height_(height), width_(width), bits_(height * width, 0) {}

BinaryMask::BinaryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
  if (bits_.size() != height_ * width_) {
    throw Error(ErrorCode::kShapeMismatch, "mask bit count does not match dimensions");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

BinaryMask BinaryMask::rectangle(std::size_t height, std::size_t width, std::int64_t y0,
                                 std::int64_t x0, std::int64_t h, std::int64_t w) {
  BinaryMask m(height, width);
  const auto ylo = std::max<std::int64_t>(0, y0);
  const auto xlo = std::max<std::int64_t>(0, x0);
  const auto yhi = std::min<std::int64_t>(static_cast<std::int64_t>(height), y0 + h);
  const auto xhi = std::min<std::int64_t>(static_cast<std::int64_t>(width), x0 + w);
  for (auto y = ylo; y < yhi; ++y) {
    for (auto x = xlo; x < xhi; ++x) m.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  }
  return m;
}

BinaryMask BinaryMask::from_rle(std::size_t height, std::size_t width,
                                std::span<const std::uint64_t> counts) {
  const std::uint64_t total = static_cast<std::uint64_t>(height) * width;
  std::vector<std::uint8_t> bits;
  bits.reserve(total);
  std::uint8_t value = 0;
  for (const auto run : counts) {
    if (run > total - bits.size()) {
      throw Error(ErrorCode::kFormatError, "RLE runs exceed mask size");
    }
    bits.insert(bits.end(), run, value);
    value ^= 1;
  }
  if (bits.size() != total) {
    throw Error(ErrorCode::kFormatError, "RLE runs do not cover the mask");
  }
  return BinaryMask(height, width, std::move(bits));
}

std::vector<std::uint64_t> BinaryMask::to_rle() const {
  std::vector<std::uint64_t> counts;
  std::uint8_t value = 0;
  std::uint64_t run = 0;
  for (const auto b : bits_) {
    if (b != value) {
      counts.push_back(run);
      run = 0;
      value = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kDimMismatch, "dot product length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = l2_norm(v);
  if (!(n >= kMinNorm)) throw Error(ErrorCode::kZeroNormRow, "vector has zero norm");
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m) {
  std::vector<double> data(m.data());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double n = l2_norm(m.row(r));
    if (!(n >= kMinNorm)) {
      throw Error(ErrorCode::kZeroNormRow, "row " + std::to_string(r) + " has zero norm")
          .with_index(static_cast<std::int64_t>(r));
    }
    for (std::size_t c = 0; c < m.cols(); ++c) data[r * m.cols() + c] /= n;
  }
  EmbeddingMatrix out(m.rows(), m.cols(), std::move(data), m.row_labels());
  out.mark_normalized();
  return out;
}

std::vector<double> softmax(std::span<const double> v) {
  require_finite(v, "softmax input");
  if (v.empty()) return {};
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

std::vector<double> mask_pool(const FeatureMap& fm, const BinaryMask& mask) {
  if (mask.height() != fm.height() || mask.width() != fm.width()) {
    throw Error(ErrorCode::kDimMismatch, "mask dimensions do not match feature map");
  }
  std::vector<std::size_t> on;
  const auto bits = mask.bits();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) on.push_back(i);
  }
  if (on.empty()) throw Error(ErrorCode::kEmptyMask, "mask has no set pixels");
  std::vector<double> pooled(fm.channels(), 0.0);
  for (std::size_t c = 0; c < fm.channels(); ++c) {
    const auto plane = fm.channel(c);
    double s = 0.0;
    for (const auto i : on) s += plane[i];
    pooled[c] = s / static_cast<double>(on.size());
  }
  return pooled;
}

}  // namespace zori
