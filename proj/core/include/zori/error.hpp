#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace zori {

enum class ErrorCode {
  kZeroNormRow,
  kNonFiniteInput,
  kEmptyMask,
  kDimMismatch,
  kShapeMismatch,
  kFormatError,
  kIoError,
  kTooFewClasses,
  kKOutOfRange,
  kEmptyTemplateList,
  kInvalidArgument,
  kBadCount,
  kEmptyBatch,
  kInsufficientInstances,
  kMissingUnseenClass,
  kEmptyBank,
  kClassCountMismatch,
  kNotAProbabilityVector,
  kLengthMismatch,
  kBothEmpty,
  kEmptySplit,
  kUnknownDataset,
  kSplitMismatch,
  kBadConfig,
  kDoesNotFit,
  kConfigError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure raised by the library. `index` carries the offending row,
// class or channel where one exists; `offset` the byte offset for file
// format errors; `field` the dotted config path for config errors.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  const std::optional<std::int64_t>& index() const noexcept { return index_; }
  const std::optional<std::uint64_t>& offset() const noexcept { return offset_; }
  const std::optional<std::string>& field() const noexcept { return field_; }

  Error& with_index(std::int64_t i) {
    index_ = i;
    return *this;
  }
  Error& with_offset(std::uint64_t o) {
    offset_ = o;
    return *this;
  }
  Error& with_field(std::string f) {
    field_ = std::move(f);
    return *this;
  }

 private:
  ErrorCode code_;
  std::optional<std::int64_t> index_;
  std::optional<std::uint64_t> offset_;
  std::optional<std::string> field_;
};

}  // namespace zori
