#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "zori/tensor.hpp"

namespace zori {

enum class Protocol { kZSRI, kGZSRI };

std::string_view protocol_name(Protocol p);
Protocol protocol_from_name(std::string_view name);

struct InstanceAnnotation {
  std::string image_id;
  std::size_t class_id = 0;
  BinaryMask mask;
};

struct Detection {
  std::string image_id;
  std::size_t class_id = 0;
  double score = 0.0;
  BinaryMask mask;
};

struct ImageInfo {
  std::string id;
  std::size_t width = 0;
  std::size_t height = 0;

  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

// COCO-style subset. class_id in every annotation indexes `categories`.
struct AnnotationSet {
  std::vector<ImageInfo> images;
  std::vector<InstanceAnnotation> annotations;
  std::vector<std::string> categories;

  // Throws InvalidArgument when an annotation references a missing image
  // or category, or its mask does not match the image size.
  void validate() const;
};

// {"h": H, "w": W, "rle": [...]}
nlohmann::json mask_to_json(const BinaryMask& m);
BinaryMask mask_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AnnotationSet& set);
AnnotationSet annotation_set_from_json(const nlohmann::json& j);
AnnotationSet read_annotation_set(const std::filesystem::path& path);
void write_annotation_set(const std::filesystem::path& path, const AnnotationSet& set);

// One JSON object per line:
// {"image_id", "class_id", "score", "mask": {"h", "w", "rle"}}
std::string detection_to_json_line(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);
std::vector<Detection> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);

}  // namespace zori
