#include "imaboost/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace imaboost {

namespace {
constexpr double kCornerMin = -0.5;
constexpr double kCornerMax = 1.5;
}  // namespace

bool BBox::is_valid() const {
  if (!std::isfinite(cx) || !std::isfinite(cy) || !std::isfinite(w) || !std::isfinite(h))
    return false;
  if (w <= 0.0 || h <= 0.0) return false;
  return xmin() >= kCornerMin && xmax() <= kCornerMax && ymin() >= kCornerMin &&
         ymax() <= kCornerMax;
}

BBox BBox::from_corners(double x1, double y1, double x2, double y2) {
  return {0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1};
}

BBox checked(const BBox& box, const std::string& what) {
  if (!box.is_valid()) {
    throw std::invalid_argument(what + " is not a valid box (cx=" + std::to_string(box.cx) +
                                ", cy=" + std::to_string(box.cy) + ", w=" +
                                std::to_string(box.w) + ", h=" + std::to_string(box.h) + ")");
  }
  return box;
}

bool clip_to_image(const BBox& box, BBox& out, double min_extent) {
  const double x1 = std::max(0.0, box.xmin());
  const double y1 = std::max(0.0, box.ymin());
  const double x2 = std::min(1.0, box.xmax());
  const double y2 = std::min(1.0, box.ymax());
  if (!(x2 - x1 >= min_extent) || !(y2 - y1 >= min_extent)) return false;
  out = BBox::from_corners(x1, y1, x2, y2);
  return true;
}

double intersection_area(const BBox& a, const BBox& b) {
  const double iw = std::min(a.xmax(), b.xmax()) - std::max(a.xmin(), b.xmin());
  if (iw <= 0.0) return 0.0;
  const double ih = std::min(a.ymax(), b.ymax()) - std::max(a.ymin(), b.ymin());
  if (ih <= 0.0) return 0.0;
  return iw * ih;
}

double iou(const BBox& a, const BBox& b) {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.cls, a.box.cx, a.box.cy, a.box.w, a.box.h) <
         std::tie(b.cls, b.box.cx, b.box.cy, b.box.w, b.box.h);
}

std::vector<Detection> nms(std::span<const Detection> dets, double iou_threshold,
                           double score_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0))
    throw std::invalid_argument("nms: iou_threshold must lie in (0, 1]");

  std::vector<Detection> ranked;
  ranked.reserve(dets.size());
  for (const auto& d : dets)
    if (d.score >= score_threshold) ranked.push_back(d);
  std::sort(ranked.begin(), ranked.end(), ranks_before);

  // Kept boxes per class; suppression never crosses classes.
  std::map<int, std::vector<BBox>> kept_by_class;
  std::vector<Detection> out;
  for (const auto& d : ranked) {
    auto& kept = kept_by_class[d.cls];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const BBox& k) {
      return iou(k, d.box) > iou_threshold;
    });
    if (suppressed) continue;
    kept.push_back(d.box);
    out.push_back(d);
  }
  return out;
}

}  // namespace imaboost
