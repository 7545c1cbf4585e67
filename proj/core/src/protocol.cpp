#include "zori/protocol.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

void SeenUnseenSplit::validate() const {
  for (const auto& s : seen) {
    if (is_unseen(s)) throw Error(ErrorCode::kInvalidArgument, "class '" + s + "' is both seen and unseen");
  }
  const std::set<std::string> s(seen.begin(), seen.end());
  const std::set<std::string> u(unseen.begin(), unseen.end());
  if (s.size() != seen.size() || u.size() != unseen.size()) {
    throw Error(ErrorCode::kInvalidArgument, "split lists contain duplicates");
  }
}

bool SeenUnseenSplit::is_seen(std::string_view name) const {
  return std::find(seen.begin(), seen.end(), name) != seen.end();
}

bool SeenUnseenSplit::is_unseen(std::string_view name) const {
  return std::find(unseen.begin(), unseen.end(), name) != unseen.end();
}

SeenUnseenSplit builtin_split(std::string_view name) {
  if (name == "isaid") {
    return {"isaid",
            {"ship", "storage tank", "baseball diamond", "basketball court", "ground track field",
             "bridge", "large vehicle", "small vehicle", "roundabout", "plane", "harbor"},
            {"tennis court", "helicopter", "swimming pool", "soccer ball field"}};
  }
  if (name == "nwpu") {
    return {"nwpu",
            {"airplane", "storage tank", "baseball diamond", "tennis court", "ground track field",
             "bridge", "vehicle"},
            {"ship", "basketball court", "harbor"}};
  }
  if (name == "sior") {
    return {"sior",
            {"airplane", "baseball field", "bridge", "chimney", "dam", "expressway service area",
             "expressway toll station", "golf field", "harbor", "overpass", "ship", "stadium",
             "storage tank", "tennis court", "train station", "vehicle"},
            {"airport", "basketball court", "ground track field", "windmill"}};
  }
  throw Error(ErrorCode::kUnknownDataset, "unknown dataset '" + std::string(name) + "'");
}

SeenUnseenSplit split_from_json(const nlohmann::json& j, std::string default_name) {
  SeenUnseenSplit split;
  try {
    split.dataset_name = j.value("dataset_name", default_name);
    split.seen = j.at("seen").get<std::vector<std::string>>();
    split.unseen = j.at("unseen").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kFormatError, std::string("bad split definition: ") + e.what());
  }
  split.validate();
  return split;
}

nlohmann::json to_json(const SeenUnseenSplit& split) {
  return {{"dataset_name", split.dataset_name}, {"seen", split.seen}, {"unseen", split.unseen}};
}

SeenUnseenSplit resolve_split(const std::string& name_or_path) {
  if (name_or_path == "isaid" || name_or_path == "nwpu" || name_or_path == "sior") {
    return builtin_split(name_or_path);
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw Error(ErrorCode::kUnknownDataset,
                "'" + name_or_path + "' is neither a builtin split nor a readable file");
  }
  try {
    return split_from_json(nlohmann::json::parse(in),
                           std::filesystem::path(name_or_path).stem().string());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kFormatError, name_or_path + ": " + e.what())
        .with_offset(static_cast<std::uint64_t>(e.byte));
  }
}

namespace {

void require_split_in_categories(const AnnotationSet& set, const SeenUnseenSplit& split,
                                 bool unseen_may_be_absent = false) {
  for (const auto* group : {&split.seen, &split.unseen}) {
    if (unseen_may_be_absent && group == &split.unseen) continue;
    for (const auto& name : *group) {
      if (std::find(set.categories.begin(), set.categories.end(), name) == set.categories.end()) {
        throw Error(ErrorCode::kSplitMismatch, "split class '" + name + "' is not a category");
      }
    }
  }
}

}  // namespace

AnnotationSet filter_train(const AnnotationSet& set, const SeenUnseenSplit& split) {
  split.validate();
  // Unseen classes may already be gone, which keeps the filter idempotent.
  require_split_in_categories(set, split, true);

  std::vector<std::size_t> remap(set.categories.size(), set.categories.size());
  AnnotationSet out;
  for (std::size_t c = 0; c < set.categories.size(); ++c) {
    if (split.is_seen(set.categories[c])) {
      remap[c] = out.categories.size();
      out.categories.push_back(set.categories[c]);
    }
  }
  std::set<std::string> tainted;
  for (const auto& a : set.annotations) {
    if (split.is_unseen(set.categories[a.class_id])) tainted.insert(a.image_id);
  }
  for (const auto& img : set.images) {
    if (!tainted.contains(img.id)) out.images.push_back(img);
  }
  for (const auto& a : set.annotations) {
    if (tainted.contains(a.image_id) || remap[a.class_id] == set.categories.size()) continue;
    out.annotations.push_back({a.image_id, remap[a.class_id], a.mask});
  }
  return out;
}

AnnotationSet filter_test(const AnnotationSet& set, const SeenUnseenSplit& split,
                          Protocol protocol) {
  split.validate();
  require_split_in_categories(set, split);
  if (protocol == Protocol::kGZSRI) return set;
  AnnotationSet out;
  out.images = set.images;
  out.categories = set.categories;
  for (const auto& a : set.annotations) {
    if (split.is_unseen(set.categories[a.class_id])) out.annotations.push_back(a);
  }
  return out;
}

std::string train_file_name(const SeenUnseenSplit& split) {
  return split.dataset_name + "_seen_" + std::to_string(split.seen.size()) + "_" +
         std::to_string(split.unseen.size()) + "_train.json";
}

std::string test_file_name(const SeenUnseenSplit& split, Protocol protocol) {
  if (protocol == Protocol::kGZSRI) return split.dataset_name + "_gzsri_val.json";
  return split.dataset_name + "_unseen_" + std::to_string(split.seen.size()) + "_" +
         std::to_string(split.unseen.size()) + "_val.json";
}

}  // namespace zori
