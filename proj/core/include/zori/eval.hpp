#pragma once

// Mask-based instance segmentation metrics for the zero-shot protocols:
// AP at IoU 0.5 (all-point interpolation) and Recall@100 at IoU
// {0.4, 0.5, 0.6}, averaged over seen and unseen classes and combined by
// harmonic mean.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zori/instances.hpp"
#include "zori/protocol.hpp"

namespace zori {

inline constexpr double kApIouThreshold = 0.5;
inline constexpr std::size_t kRecallTopK = 100;
inline const std::vector<double> kRecallIouThresholds = {0.4, 0.5, 0.6};

// |a ∩ b| / |a ∪ b|. Throws DimMismatch, or BothEmpty when the union is empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

struct MatchResult {
  std::size_t det = 0;
  std::optional<std::size_t> gt;
};

// `dets` must already be in descending score order. Each detection takes
// the still-unmatched ground truth with the highest IoU >= iou_thr (lowest
// index on ties).
std::vector<MatchResult> match_greedy(const std::vector<Detection>& dets,
                                      const std::vector<InstanceAnnotation>& gts, double iou_thr);

// Single class, any number of images. nullopt when there is no ground truth.
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<InstanceAnnotation>& gts,
                                        double iou_thr = kApIouThreshold);

// Keeps the `k` highest-scoring detections of every image regardless of
// class (stable on ties), preserving input order otherwise.
std::vector<Detection> truncate_per_image(const std::vector<Detection>& dets, std::size_t k);

// Fraction of ground truths matched after per-image top-100 truncation and
// per-class matching. nullopt when there is no ground truth.
std::optional<std::map<double, double>> recall_at_100(
    const std::vector<Detection>& dets, const std::vector<InstanceAnnotation>& gts,
    const std::vector<double>& iou_thrs = kRecallIouThresholds);

// 2ab/(a+b), 0 when a+b = 0.
double harmonic_mean(double a, double b);

enum class ClassGroup { kSeen, kUnseen };

struct ClassMetrics {
  std::size_t class_id = 0;
  std::string name;
  ClassGroup group = ClassGroup::kSeen;
  std::size_t num_gt = 0;
  std::optional<double> ap;             // percent
  std::map<double, double> recall;      // percent, per IoU threshold

  friend bool operator==(const ClassMetrics&, const ClassMetrics&) = default;
};

struct GroupSummary {
  std::optional<double> seen;
  std::optional<double> unseen;
  std::optional<double> hm;

  friend bool operator==(const GroupSummary&, const GroupSummary&) = default;
};

// All values are percentages in [0, 100]. Class means only include classes
// with at least one ground-truth instance.
struct EvalReport {
  Protocol protocol = Protocol::kGZSRI;
  std::vector<ClassMetrics> classes;  // evaluated classes, category order
  GroupSummary map;                   // AP@0.5
  std::map<double, GroupSummary> recall;

  std::map<std::size_t, double> per_class_ap() const;
  std::map<std::pair<std::size_t, double>, double> per_class_recall() const;
  // Headline recall at IoU 0.5.
  const GroupSummary& recall_at_05() const;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

EvalReport evaluate(const std::vector<Detection>& dets, const AnnotationSet& gt,
                    const SeenUnseenSplit& split, Protocol protocol);

nlohmann::json to_json(const EvalReport& report);
std::string format_report_table(const EvalReport& report);

}  // namespace zori
