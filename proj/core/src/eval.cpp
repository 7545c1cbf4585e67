#include "zori/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "zori/error.hpp"

namespace zori {

namespace {

struct Overlap {
  std::size_t intersection = 0;
  std::size_t uni = 0;
};

Overlap overlap(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw Error(ErrorCode::kDimMismatch, "masks differ in size");
  }
  Overlap o;
  const auto ab = a.bits();
  const auto bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    o.intersection += static_cast<std::size_t>(ab[i] & bb[i]);
    o.uni += static_cast<std::size_t>(ab[i] | bb[i]);
  }
  return o;
}

// IoU used inside matching: an empty union never matches.
double match_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto o = overlap(a, b);
  return o.uni == 0 ? 0.0 : static_cast<double>(o.intersection) / static_cast<double>(o.uni);
}

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&dets](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

// For one class: whether each detection (in descending score order) is a
// true positive at each threshold. Matching is per image.
std::vector<std::vector<bool>> true_positive_flags(const std::vector<Detection>& sorted_dets,
                                                   const std::vector<InstanceAnnotation>& gts,
                                                   const std::vector<double>& thrs) {
  std::map<std::string, std::vector<std::size_t>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gts_by_image[gts[g].image_id].push_back(g);
  std::map<std::string, std::vector<std::size_t>> dets_by_image;
  for (std::size_t d = 0; d < sorted_dets.size(); ++d) {
    dets_by_image[sorted_dets[d].image_id].push_back(d);
  }

  std::vector<std::vector<bool>> flags(thrs.size(), std::vector<bool>(sorted_dets.size(), false));
  for (const auto& [image, det_idx] : dets_by_image) {
    const auto it = gts_by_image.find(image);
    if (it == gts_by_image.end()) continue;
    std::vector<Detection> image_dets;
    for (const auto d : det_idx) image_dets.push_back(sorted_dets[d]);
    std::vector<InstanceAnnotation> image_gts;
    for (const auto g : it->second) image_gts.push_back(gts[g]);
    for (std::size_t t = 0; t < thrs.size(); ++t) {
      const auto matches = match_greedy(image_dets, image_gts, thrs[t]);
      for (const auto& m : matches) {
        if (m.gt) flags[t][det_idx[m.det]] = true;
      }
    }
  }
  return flags;
}

double all_point_ap(const std::vector<bool>& tp, std::size_t num_gt) {
  std::vector<double> precision(tp.size());
  std::vector<double> recall(tp.size());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) ++hits;
    precision[i] = static_cast<double>(hits) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(hits) / static_cast<double>(num_gt);
  }
  // Precision envelope: monotone non-increasing from the right.
  for (std::size_t i = tp.size(); i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

GroupSummary summarize(const std::vector<double>& seen, const std::vector<double>& unseen,
                       Protocol protocol) {
  GroupSummary s;
  if (protocol == Protocol::kGZSRI) s.seen = mean_of(seen);
  s.unseen = mean_of(unseen);
  if (s.seen && s.unseen) s.hm = harmonic_mean(*s.seen, *s.unseen);
  return s;
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string threshold_key(double thr) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.2f", thr);
  return buf;
}

}  // namespace

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  const auto o = overlap(a, b);
  if (o.uni == 0) throw Error(ErrorCode::kBothEmpty, "both masks are empty");
  return static_cast<double>(o.intersection) / static_cast<double>(o.uni);
}

std::vector<MatchResult> match_greedy(const std::vector<Detection>& dets,
                                      const std::vector<InstanceAnnotation>& gts, double iou_thr) {
  std::vector<bool> taken(gts.size(), false);
  std::vector<MatchResult> out;
  out.reserve(dets.size());
  for (std::size_t d = 0; d < dets.size(); ++d) {
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double iou = match_iou(dets[d].mask, gts[g].mask);
      if (iou >= iou_thr && iou > best_iou) {
        best = g;
        best_iou = iou;
      }
    }
    if (best) taken[*best] = true;
    out.push_back({d, best});
  }
  return out;
}

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<InstanceAnnotation>& gts,
                                        double iou_thr) {
  if (gts.empty()) return std::nullopt;
  std::vector<Detection> sorted;
  for (const auto i : score_order(dets)) sorted.push_back(dets[i]);
  const auto flags = true_positive_flags(sorted, gts, {iou_thr});
  return all_point_ap(flags[0], gts.size());
}

std::vector<Detection> truncate_per_image(const std::vector<Detection>& dets, std::size_t k) {
  std::map<std::string, std::size_t> kept;
  std::vector<bool> keep(dets.size(), false);
  for (const auto i : score_order(dets)) {
    auto& n = kept[dets[i].image_id];
    if (n < k) {
      keep[i] = true;
      ++n;
    }
  }
  std::vector<Detection> out;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (keep[i]) out.push_back(dets[i]);
  }
  return out;
}

std::optional<std::map<double, double>> recall_at_100(const std::vector<Detection>& dets,
                                                      const std::vector<InstanceAnnotation>& gts,
                                                      const std::vector<double>& iou_thrs) {
  if (gts.empty()) return std::nullopt;
  const auto kept = truncate_per_image(dets, kRecallTopK);
  std::set<std::size_t> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  std::vector<std::size_t> matched(iou_thrs.size(), 0);
  for (const auto c : classes) {
    std::vector<Detection> class_dets;
    for (const auto i : score_order(kept)) {
      if (kept[i].class_id == c) class_dets.push_back(kept[i]);
    }
    std::vector<InstanceAnnotation> class_gts;
    for (const auto& g : gts) {
      if (g.class_id == c) class_gts.push_back(g);
    }
    const auto flags = true_positive_flags(class_dets, class_gts, iou_thrs);
    for (std::size_t t = 0; t < iou_thrs.size(); ++t) {
      matched[t] += static_cast<std::size_t>(std::count(flags[t].begin(), flags[t].end(), true));
    }
  }
  std::map<double, double> out;
  for (std::size_t t = 0; t < iou_thrs.size(); ++t) {
    out[iou_thrs[t]] = static_cast<double>(matched[t]) / static_cast<double>(gts.size());
  }
  return out;
}

double harmonic_mean(double a, double b) {
  if (a + b == 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

std::map<std::size_t, double> EvalReport::per_class_ap() const {
  std::map<std::size_t, double> out;
  for (const auto& c : classes) {
    if (c.ap) out[c.class_id] = *c.ap;
  }
  return out;
}

std::map<std::pair<std::size_t, double>, double> EvalReport::per_class_recall() const {
  std::map<std::pair<std::size_t, double>, double> out;
  for (const auto& c : classes) {
    for (const auto& [thr, r] : c.recall) out[{c.class_id, thr}] = r;
  }
  return out;
}

const GroupSummary& EvalReport::recall_at_05() const {
  static const GroupSummary kEmpty;
  const auto it = recall.find(0.5);
  return it == recall.end() ? kEmpty : it->second;
}

EvalReport evaluate(const std::vector<Detection>& dets, const AnnotationSet& gt,
                    const SeenUnseenSplit& split, Protocol protocol) {
  split.validate();
  for (const auto* group : {&split.seen, &split.unseen}) {
    for (const auto& name : *group) {
      if (std::find(gt.categories.begin(), gt.categories.end(), name) == gt.categories.end()) {
        throw Error(ErrorCode::kSplitMismatch, "split class '" + name + "' is not a category");
      }
    }
  }

  EvalReport report;
  report.protocol = protocol;
  std::vector<bool> evaluated(gt.categories.size(), false);
  for (std::size_t c = 0; c < gt.categories.size(); ++c) {
    const auto& name = gt.categories[c];
    const bool unseen = split.is_unseen(name);
    const bool seen = split.is_seen(name);
    if (unseen || (seen && protocol == Protocol::kGZSRI)) {
      evaluated[c] = true;
      report.classes.push_back(
          {c, name, unseen ? ClassGroup::kUnseen : ClassGroup::kSeen, 0, std::nullopt, {}});
    }
  }
  if (report.classes.empty()) {
    throw Error(ErrorCode::kEmptySplit, "no classes to evaluate under " +
                                            std::string(protocol_name(protocol)));
  }

  std::vector<Detection> kept_dets;
  for (const auto& d : dets) {
    if (d.class_id < evaluated.size() && evaluated[d.class_id]) kept_dets.push_back(d);
  }
  const auto truncated = truncate_per_image(kept_dets, kRecallTopK);

  std::vector<double> ap_seen, ap_unseen;
  std::map<double, std::vector<double>> rec_seen, rec_unseen;
  for (auto& cm : report.classes) {
    std::vector<InstanceAnnotation> class_gts;
    for (const auto& a : gt.annotations) {
      if (a.class_id == cm.class_id) class_gts.push_back(a);
    }
    cm.num_gt = class_gts.size();
    if (class_gts.empty()) continue;

    std::vector<Detection> class_dets;
    for (const auto& d : kept_dets) {
      if (d.class_id == cm.class_id) class_dets.push_back(d);
    }
    cm.ap = 100.0 * *average_precision(class_dets, class_gts, kApIouThreshold);

    std::vector<Detection> class_top;
    for (const auto& d : truncated) {
      if (d.class_id == cm.class_id) class_top.push_back(d);
    }
    std::vector<Detection> sorted;
    for (const auto i : score_order(class_top)) sorted.push_back(class_top[i]);
    const auto flags = true_positive_flags(sorted, class_gts, kRecallIouThresholds);
    for (std::size_t t = 0; t < kRecallIouThresholds.size(); ++t) {
      const auto hits = std::count(flags[t].begin(), flags[t].end(), true);
      cm.recall[kRecallIouThresholds[t]] =
          100.0 * static_cast<double>(hits) / static_cast<double>(class_gts.size());
    }

    const bool unseen = cm.group == ClassGroup::kUnseen;
    (unseen ? ap_unseen : ap_seen).push_back(*cm.ap);
    for (const auto& [thr, r] : cm.recall) (unseen ? rec_unseen : rec_seen)[thr].push_back(r);
  }

  report.map = summarize(ap_seen, ap_unseen, protocol);
  for (const auto thr : kRecallIouThresholds) {
    report.recall[thr] = summarize(rec_seen[thr], rec_unseen[thr], protocol);
  }
  return report;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["protocol"] = protocol_name(report.protocol);
  j["map"] = {{"seen", optional_json(report.map.seen)},
              {"unseen", optional_json(report.map.unseen)},
              {"hm", optional_json(report.map.hm)}};
  auto& rec = j["recall"] = nlohmann::json::object();
  for (const auto& [thr, s] : report.recall) {
    rec[threshold_key(thr)] = {{"seen", optional_json(s.seen)},
                               {"unseen", optional_json(s.unseen)},
                               {"hm", optional_json(s.hm)}};
  }
  auto& classes = j["classes"] = nlohmann::json::array();
  for (const auto& c : report.classes) {
    nlohmann::json cj{{"class_id", c.class_id},
                      {"name", c.name},
                      {"group", c.group == ClassGroup::kSeen ? "seen" : "unseen"},
                      {"num_gt", c.num_gt},
                      {"ap50", optional_json(c.ap)}};
    auto& cr = cj["recall"] = nlohmann::json::object();
    for (const auto& [thr, r] : c.recall) cr[threshold_key(thr)] = r;
    classes.push_back(std::move(cj));
  }
  return j;
}

std::string format_report_table(const EvalReport& report) {
  auto cell = [](const std::optional<double>& v) {
    char buf[32];
    if (v) {
      std::snprintf(buf, sizeof(buf), "%8.2f", *v);
    } else {
      std::snprintf(buf, sizeof(buf), "%8s", "-");
    }
    return std::string(buf);
  };
  std::ostringstream out;
  out << "protocol: " << protocol_name(report.protocol) << "\n\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%-28s %-7s %6s %8s %8s %8s %8s\n", "class", "group", "gts",
                "AP50", "R@.4", "R@.5", "R@.6");
  out << line;
  for (const auto& c : report.classes) {
    auto rec = [&c](double thr) -> std::optional<double> {
      const auto it = c.recall.find(thr);
      if (it == c.recall.end()) return std::nullopt;
      return it->second;
    };
    std::snprintf(line, sizeof(line), "%-28s %-7s %6zu ", c.name.c_str(),
                  c.group == ClassGroup::kSeen ? "seen" : "unseen", c.num_gt);
    out << line << cell(c.ap) << ' ' << cell(rec(0.4)) << ' ' << cell(rec(0.5)) << ' '
        << cell(rec(0.6)) << '\n';
  }
  out << '\n';
  std::snprintf(line, sizeof(line), "%-20s %8s %8s %8s\n", "metric", "seen", "unseen", "HM");
  out << line;
  auto row = [&](const std::string& name, const GroupSummary& s) {
    std::snprintf(line, sizeof(line), "%-20s ", name.c_str());
    out << line << cell(s.seen) << ' ' << cell(s.unseen) << ' ' << cell(s.hm) << '\n';
  };
  row("mAP@0.5", report.map);
  for (const auto& [thr, s] : report.recall) row("Recall@100 IoU" + threshold_key(thr), s);
  return out.str();
}

}  // namespace zori
