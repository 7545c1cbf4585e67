#include "zori/zemb.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

namespace {

constexpr char kMagic[4] = {'Z', 'E', 'M', 'B'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint64_t pos() const { return pos_; }
  std::uint64_t remaining() const { return bytes_.size() - pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (remaining() < n) {
      throw Error(ErrorCode::kFormatError, std::string("truncated ") + what).with_offset(pos_);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  const std::uint8_t* take(std::uint64_t n, const char* what) {
    need(n, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::uint64_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (const auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) {
      throw Error(ErrorCode::kFormatError, "dimension product overflows");
    }
    n *= d;
  }
  return n;
}

}  // namespace

std::vector<std::uint8_t> encode_zemb(const ZembTensor& t) {
  if (element_count(t.dims) != t.payload.size()) {
    throw Error(ErrorCode::kShapeMismatch, "payload size does not match dims");
  }
  std::vector<std::uint8_t> out;
  out.reserve(16 + 8 * t.dims.size() + 4 * t.payload.size());
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kZembVersion);
  put_u32(out, kZembFloat32);
  put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (const auto d : t.dims) put_u64(out, d);
  for (const float f : t.payload) put_u32(out, std::bit_cast<std::uint32_t>(f));
  if (t.labels) {
    const std::string sidecar = nlohmann::json{{"labels", *t.labels}}.dump();
    put_u64(out, sidecar.size());
    out.insert(out.end(), sidecar.begin(), sidecar.end());
  }
  return out;
}

ZembTensor decode_zemb(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  const auto* magic = in.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kFormatError, "bad magic").with_offset(0);
  }
  const auto version_at = in.pos();
  if (in.u32("version") != kZembVersion) {
    throw Error(ErrorCode::kFormatError, "unsupported version").with_offset(version_at);
  }
  const auto dtype_at = in.pos();
  if (in.u32("dtype") != kZembFloat32) {
    throw Error(ErrorCode::kFormatError, "unsupported dtype").with_offset(dtype_at);
  }
  const auto rank = in.u32("rank");
  ZembTensor t;
  t.dims.reserve(rank);
  for (std::uint32_t i = 0; i < rank; ++i) t.dims.push_back(in.u64("dims"));
  const auto count = element_count(t.dims);
  if (count > in.remaining() / 4) {
    throw Error(ErrorCode::kFormatError, "truncated payload").with_offset(in.pos());
  }
  const auto* payload = in.take(count * 4, "payload");
  t.payload.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    t.payload[i] = std::bit_cast<float>(bits);
  }
  if (in.remaining() == 0) return t;

  const auto sidecar_at = in.pos();
  const auto length = in.u64("sidecar length");
  if (length != in.remaining()) {
    throw Error(ErrorCode::kFormatError, "sidecar length does not match trailing bytes")
        .with_offset(sidecar_at);
  }
  const auto* text = in.take(length, "sidecar");
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(text, text + length);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kFormatError, std::string("sidecar is not JSON: ") + e.what())
        .with_offset(sidecar_at + 8);
  }
  if (!sidecar.is_object() || !sidecar.contains("labels") || !sidecar["labels"].is_array()) {
    throw Error(ErrorCode::kFormatError, "sidecar lacks a labels array").with_offset(sidecar_at + 8);
  }
  std::vector<std::string> labels;
  for (const auto& l : sidecar["labels"]) {
    if (!l.is_string()) {
      throw Error(ErrorCode::kFormatError, "non-string label").with_offset(sidecar_at + 8);
    }
    labels.push_back(l.get<std::string>());
  }
  if (t.dims.empty() || labels.size() != t.dims[0]) {
    throw Error(ErrorCode::kFormatError, "label count does not match first dimension")
        .with_offset(sidecar_at + 8);
  }
  t.labels = std::move(labels);
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

void write_zemb(const std::filesystem::path& path, const ZembTensor& t) {
  write_file_bytes(path, encode_zemb(t));
}

ZembTensor read_zemb(const std::filesystem::path& path) {
  try {
    return decode_zemb(read_file_bytes(path));
  } catch (Error& e) {
    if (e.code() != ErrorCode::kFormatError) throw;
    Error wrapped(ErrorCode::kFormatError, path.string() + ": " + e.what());
    if (e.offset()) wrapped.with_offset(*e.offset());
    throw wrapped;
  }
}

ZembTensor to_zemb(const EmbeddingMatrix& m) {
  ZembTensor t;
  t.dims = {m.rows(), m.cols()};
  t.payload.reserve(m.data().size());
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    const auto f = static_cast<float>(m.data()[i]);
    if (!std::isfinite(f)) {
      throw Error(ErrorCode::kInvalidArgument, "value does not fit float32")
          .with_index(static_cast<std::int64_t>(i));
    }
    t.payload.push_back(f);
  }
  t.labels = m.row_labels();
  return t;
}

EmbeddingMatrix embeddings_from_zemb(const ZembTensor& t) {
  if (t.dims.size() != 2) {
    throw Error(ErrorCode::kFormatError, "embedding file must have rank 2, got " +
                                             std::to_string(t.dims.size()));
  }
  std::vector<double> data(t.payload.begin(), t.payload.end());
  return EmbeddingMatrix(t.dims[0], t.dims[1], std::move(data), t.labels);
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  write_zemb(path, to_zemb(m));
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  return embeddings_from_zemb(read_zemb(path));
}

void write_feature_map(const std::filesystem::path& path, const FeatureMap& fm) {
  ZembTensor t;
  t.dims = {fm.channels(), fm.height(), fm.width()};
  t.payload.assign(fm.data().begin(), fm.data().end());
  write_zemb(path, t);
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  const auto t = read_zemb(path);
  if (t.dims.size() != 3) {
    throw Error(ErrorCode::kFormatError, "feature map file must have rank 3");
  }
  return FeatureMap(t.dims[0], t.dims[1], t.dims[2],
                    std::vector<double>(t.payload.begin(), t.payload.end()));
}

}  // namespace zori
