#pragma once

#include <span>
#include <string>
#include <vector>

namespace imaboost {

/// Axis-aligned box in center form, normalized image coordinates.
///
/// A valid box has positive width and height and every corner inside
/// [-0.5, 1.5]. Anchors may hang over the image border; clipping only
/// happens through clip_to_image().
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double xmin() const { return cx - 0.5 * w; }
  double xmax() const { return cx + 0.5 * w; }
  double ymin() const { return cy - 0.5 * h; }
  double ymax() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  bool is_valid() const;

  /// Builds a box from corner coordinates.
  static BBox from_corners(double x1, double y1, double x2, double y2);

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws std::invalid_argument naming `what` when the box is not valid.
BBox checked(const BBox& box, const std::string& what = "box");

/// Intersection of the box with the unit square. Returns false when the
/// clipped box has no area left (w or h below min_extent).
bool clip_to_image(const BBox& box, BBox& out, double min_extent = 1e-6);

/// Background class index. Object classes run 1..C.
inline constexpr int kBackground = 0;

struct Detection {
  int cls = 1;
  double score = 0.0;
  BBox box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

/// Annotated object. `hard` marks synthetic objects whose evidence was
/// generated close to the background.
struct GroundTruthObject {
  int cls = 1;
  BBox box;
  bool hard = false;

  friend bool operator==(const GroundTruthObject&, const GroundTruthObject&) = default;
};

double intersection_area(const BBox& a, const BBox& b);

/// Intersection over union. Symmetric, 0 for disjoint boxes.
double iou(const BBox& a, const BBox& b);

/// Strict total order used wherever detections are ranked: score
/// descending, then (cls, cx, cy, w, h) ascending.
bool ranks_before(const Detection& a, const Detection& b);

struct NmsOptions {
  double iou_threshold = 0.45;
  double score_threshold = 0.01;
};

/// Greedy per-class non-maximum suppression.
///
/// Detections scoring below score_threshold are dropped first. Survivors are
/// returned in ranking order; within a class no two survivors overlap with
/// IoU > iou_threshold.
std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           double score_threshold);

inline std::vector<Detection> nms(std::span<const Detection> dets,
                                  const NmsOptions& opt = {}) {
  return nms(dets, opt.iou_threshold, opt.score_threshold);
}

}  // namespace imaboost
