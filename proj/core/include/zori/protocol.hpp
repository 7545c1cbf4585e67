#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "zori/instances.hpp"

namespace zori {

struct SeenUnseenSplit {
  std::string dataset_name;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;

  // Throws InvalidArgument when a class is both seen and unseen.
  void validate() const;
  bool is_seen(std::string_view name) const;
  bool is_unseen(std::string_view name) const;

  friend bool operator==(const SeenUnseenSplit&, const SeenUnseenSplit&) = default;
};

// "isaid" (11/4), "nwpu" (7/3) or "sior" (16/4).
SeenUnseenSplit builtin_split(std::string_view name);

// {"seen": [...], "unseen": [...], "dataset_name": optional}
SeenUnseenSplit split_from_json(const nlohmann::json& j, std::string default_name = "custom");
nlohmann::json to_json(const SeenUnseenSplit& split);
// A builtin name, or a path to a split JSON file.
SeenUnseenSplit resolve_split(const std::string& name_or_path);

// Drops every image that contains an unseen object and every annotation
// that is not of a seen class; categories are reduced to the seen classes
// (input order) and annotations reindexed. Seen classes must all be
// categories; unseen ones may be missing.
AnnotationSet filter_train(const AnnotationSet& set, const SeenUnseenSplit& split);

// GZSRI: unchanged. ZSRI: only unseen-class annotations remain; all images
// and categories are kept so class ids stay valid.
AnnotationSet filter_test(const AnnotationSet& set, const SeenUnseenSplit& split,
                          Protocol protocol);

// e.g. isaid_seen_11_4_train.json, isaid_gzsri_val.json,
// isaid_unseen_11_4_val.json
std::string train_file_name(const SeenUnseenSplit& split);
std::string test_file_name(const SeenUnseenSplit& split, Protocol protocol);

}  // namespace zori
