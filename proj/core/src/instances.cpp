#include "zori/instances.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

std::string_view protocol_name(Protocol p) { return p == Protocol::kZSRI ? "ZSRI" : "GZSRI"; }

Protocol protocol_from_name(std::string_view name) {
  if (name == "ZSRI") return Protocol::kZSRI;
  if (name == "GZSRI") return Protocol::kGZSRI;
  throw Error(ErrorCode::kInvalidArgument, "unknown protocol '" + std::string(name) + "'");
}

void AnnotationSet::validate() const {
  std::map<std::string, const ImageInfo*> by_id;
  for (const auto& img : images) {
    if (!by_id.emplace(img.id, &img).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate image id " + img.id);
    }
  }
  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const auto& a = annotations[i];
    const auto it = by_id.find(a.image_id);
    if (it == by_id.end()) {
      throw Error(ErrorCode::kInvalidArgument, "annotation references unknown image " + a.image_id)
          .with_index(static_cast<std::int64_t>(i));
    }
    if (a.class_id >= categories.size()) {
      throw Error(ErrorCode::kInvalidArgument, "annotation references unknown category")
          .with_index(static_cast<std::int64_t>(i));
    }
    if (a.mask.height() != it->second->height || a.mask.width() != it->second->width) {
      throw Error(ErrorCode::kInvalidArgument, "annotation mask does not match image size")
          .with_index(static_cast<std::int64_t>(i));
    }
  }
}

nlohmann::json mask_to_json(const BinaryMask& m) {
  return {{"h", m.height()}, {"w", m.width()}, {"rle", m.to_rle()}};
}

BinaryMask mask_from_json(const nlohmann::json& j) {
  try {
    const auto counts = j.at("rle").get<std::vector<std::uint64_t>>();
    return BinaryMask::from_rle(j.at("h").get<std::size_t>(), j.at("w").get<std::size_t>(),
                                counts);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad mask: ") + e.what());
  }
}

nlohmann::json to_json(const AnnotationSet& set) {
  nlohmann::json j;
  auto& images = j["images"] = nlohmann::json::array();
  for (const auto& img : set.images) {
    images.push_back({{"id", img.id}, {"width", img.width}, {"height", img.height}});
  }
  auto& cats = j["categories"] = nlohmann::json::array();
  for (std::size_t c = 0; c < set.categories.size(); ++c) {
    cats.push_back({{"id", c}, {"name", set.categories[c]}});
  }
  auto& anns = j["annotations"] = nlohmann::json::array();
  for (std::size_t i = 0; i < set.annotations.size(); ++i) {
    const auto& a = set.annotations[i];
    anns.push_back({{"id", i},
                    {"image_id", a.image_id},
                    {"category_id", a.class_id},
                    {"mask", mask_to_json(a.mask)}});
  }
  return j;
}

AnnotationSet annotation_set_from_json(const nlohmann::json& j) {
  AnnotationSet set;
  try {
    for (const auto& img : j.at("images")) {
      set.images.push_back({img.at("id").get<std::string>(), img.at("width").get<std::size_t>(),
                            img.at("height").get<std::size_t>()});
    }
    // Category ids are arbitrary on disk; internally a class is its position.
    std::map<std::int64_t, std::size_t> position;
    for (const auto& cat : j.at("categories")) {
      if (!position.emplace(cat.at("id").get<std::int64_t>(), set.categories.size()).second) {
        throw Error(ErrorCode::kFormatError, "duplicate category id");
      }
      set.categories.push_back(cat.at("name").get<std::string>());
    }
    for (const auto& ann : j.at("annotations")) {
      const auto it = position.find(ann.at("category_id").get<std::int64_t>());
      if (it == position.end()) throw Error(ErrorCode::kFormatError, "unknown category_id");
      set.annotations.push_back(
          {ann.at("image_id").get<std::string>(), it->second, mask_from_json(ann.at("mask"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad annotation file: ") + e.what());
  }
  set.validate();
  return set;
}

AnnotationSet read_annotation_set(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  try {
    return annotation_set_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what())
        .with_offset(static_cast<std::uint64_t>(e.byte));
  }
}

void write_annotation_set(const std::filesystem::path& path, const AnnotationSet& set) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << to_json(set).dump() << '\n';
}

std::string detection_to_json_line(const Detection& d) {
  nlohmann::json j{{"image_id", d.image_id},
                   {"class_id", d.class_id},
                   {"score", d.score},
                   {"mask", mask_to_json(d.mask)}};
  return j.dump();
}

Detection detection_from_json(const nlohmann::json& j) {
  try {
    Detection d{j.at("image_id").get<std::string>(), j.at("class_id").get<std::size_t>(),
                j.at("score").get<double>(), mask_from_json(j.at("mask"))};
    if (!std::isfinite(d.score)) throw Error(ErrorCode::kFormatError, "non-finite score");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad detection: ") + e.what());
  }
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<Detection> dets;
  std::string line;
  std::uint64_t offset = 0;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      dets.push_back(detection_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kFormatError, path.string() + ": " + e.what())
          .with_offset(start + e.byte - 1)
          .with_index(line_no);
    } catch (Error& e) {
      throw Error(e.code(), path.string() + " line " + std::to_string(line_no) + ": " + e.what())
          .with_offset(start)
          .with_index(line_no);
    }
  }
  return dets;
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (const auto& d : dets) out << detection_to_json_line(d) << '\n';
}

}  // namespace zori
