#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "imaboost/detectors.hpp"
#include "imaboost/geometry.hpp"

namespace imaboost {

using GroundTruth = std::vector<std::vector<GroundTruthObject>>;

struct PRPoint {
  double recall = 0.0;
  double precision = 0.0;

  friend bool operator==(const PRPoint&, const PRPoint&) = default;
};

/// Cumulative precision/recall after each ranked detection of one class.
struct PRCurve {
  int cls = 1;
  std::size_t num_gt = 0;
  std::vector<PRPoint> points;
  /// TP flag of each ranked detection.
  std::vector<bool> is_tp;
  /// Detection ids in rank order (global image-major index into the
  /// detection lists).
  std::vector<std::size_t> ranked_ids;

  std::size_t tp() const;
  std::size_t fp() const { return is_tp.size() - tp(); }
};

/// Per-class curves for classes 1..num_classes.
///
/// Detections of a class are ranked by score (ties: lower detection id
/// first). Each one is a TP when an unclaimed ground-truth object of its
/// image and class overlaps it with IoU >= iou_threshold; it claims the
/// unclaimed object of highest IoU (ties: lowest object index). Classes
/// without ground truth report recall 0.
std::vector<PRCurve> pr_points(const ImageDetections& detections, const GroundTruth& ground_truth,
                               int num_classes, double iou_threshold = 0.5);

enum class APMode { all_point, voc11 };

const char* ap_mode_name(APMode mode);

/// Area under the precision envelope (all-point) or the VOC2007 11-point
/// average. Empty curves score 0.
double average_precision(const PRCurve& curve, APMode mode = APMode::all_point);

struct ClassResult {
  int cls = 1;
  std::size_t num_gt = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  double ap = 0.0;
};

/// Unweighted mean AP over the classes that have ground truth; 0 if none.
double mean_ap(std::span<const ClassResult> classes);

struct FpTaxonomy {
  std::size_t loc = 0;
  std::size_t sim = 0;
  std::size_t oth = 0;
  std::size_t bg = 0;

  std::size_t total() const { return loc + sim + oth + bg; }
  friend bool operator==(const FpTaxonomy&, const FpTaxonomy&) = default;
};

enum class FpKind { loc, sim, oth, bg };

/// Overlap thresholds of the false-positive taxonomy.
inline constexpr double kTaxonomyMinOverlap = 0.1;

/// Classifies every false positive (as decided by pr_points at
/// iou_threshold). Checked in order: Loc when a same-class object overlaps
/// it with IoU >= 0.1 (this covers duplicates of claimed objects); Sim when
/// an object of a different class in the detection's similarity group does;
/// Oth when any other object does; BG otherwise.
FpTaxonomy fp_taxonomy(const ImageDetections& detections, const GroundTruth& ground_truth,
                       int num_classes, const std::vector<std::vector<int>>& similarity_groups = {},
                       double iou_threshold = 0.5);

/// Label of one false positive against its image's objects.
FpKind classify_false_positive(const Detection& det, std::span<const GroundTruthObject> objects,
                               const std::vector<std::vector<int>>& similarity_groups);

struct EvalOptions {
  double iou_threshold = 0.5;
  APMode mode = APMode::all_point;
  std::vector<std::vector<int>> similarity_groups;
};

struct EvalReport {
  std::vector<ClassResult> classes;
  std::vector<PRCurve> curves;
  double map = 0.0;
  APMode mode = APMode::all_point;
  FpTaxonomy fp;
  std::size_t missed = 0;
};

EvalReport evaluate(const ImageDetections& detections, const GroundTruth& ground_truth,
                    int num_classes, const EvalOptions& opt = {});

/// Tab-separated "class AP TP FP missed num_gt" table plus a mAP row; AP in
/// fractions.
std::string ap_table(const EvalReport& report);

/// Two-column "recall precision" file with a header line.
std::string pr_table(const PRCurve& curve);

std::string fp_table(const FpTaxonomy& fp);

}  // namespace imaboost
