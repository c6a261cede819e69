#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "imaboost/geometry.hpp"

namespace imaboost {

inline constexpr int kBoxesPerLocation = 6;

/// Geometry of one prediction layer.
///
/// Each aspect ratio r yields a box of width scale*sqrt(r) and height
/// scale/sqrt(r). An optional extra square box of side extra_square_scale is
/// appended (the SSD sqrt(s_k * s_k+1) box). Together they must give exactly
/// six boxes per grid location.
struct LayerSpec {
  int grid_w = 1;
  int grid_h = 1;
  double scale = 0.2;
  std::vector<double> aspect_ratios;
  std::optional<double> extra_square_scale;

  int boxes_per_location() const {
    return static_cast<int>(aspect_ratios.size()) + (extra_square_scale ? 1 : 0);
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// The six-box layer used by the default layout: ratios {1, 2, 1/2, 3, 1/3}
/// plus one square of side sqrt(scale * next_scale).
LayerSpec ssd_layer(int grid, double scale, double next_scale);

/// Three layers at 8x8, 4x4 and 2x2 (504 anchors).
std::vector<LayerSpec> default_layout();

struct Anchor {
  BBox box;
  int layer_index = 0;
  int location_index = 0;
  int variant_index = 0;
};

/// Anchors in layer order, then row-major location, then variant. The
/// position in the returned vector is the anchor id.
std::vector<Anchor> generate_default_boxes(std::span<const LayerSpec> layers);

/// Pos/Neg partition of the anchors of one image.
struct MatchAssignment {
  /// (anchor id, object index), sorted by anchor id.
  std::vector<std::pair<std::size_t, std::size_t>> pos;
  /// Anchor ids, ascending.
  std::vector<std::size_t> neg;

  std::size_t num_pos() const { return pos.size(); }
};

struct MatchOptions {
  double threshold = 0.5;
  /// Every object claims at least one anchor, even below threshold.
  bool best_match_guarantee = true;
};

/// Matches each anchor to its most-overlapped object.
///
/// An anchor is positive when that IoU reaches the threshold; ties in the
/// per-anchor argmax go to the lowest object index. With the guarantee on,
/// objects then claim anchors greedily: the globally highest remaining
/// (object, anchor) IoU pair is fixed first (ties: lowest anchor id, then
/// lowest object index), removing both from contention, so each object gets
/// a distinct anchor whenever there are at least as many anchors as objects.
MatchAssignment match(std::span<const Anchor> anchors, std::span<const GroundTruthObject> objects,
                      const MatchOptions& opt = {});

/// Regression target for a positive anchor.
struct OffsetVector {
  double d_cx = 0.0;
  double d_cy = 0.0;
  double d_w = 0.0;
  double d_h = 0.0;

  double operator[](int i) const {
    switch (i) {
      case 0: return d_cx;
      case 1: return d_cy;
      case 2: return d_w;
      default: return d_h;
    }
  }
  double& operator[](int i) {
    switch (i) {
      case 0: return d_cx;
      case 1: return d_cy;
      case 2: return d_w;
      default: return d_h;
    }
  }

  friend bool operator==(const OffsetVector&, const OffsetVector&) = default;
};

enum class OffsetEncoding {
  /// (dcx/aw, dcy/ah, ln(w/aw), ln(h/ah))
  ssd,
  /// Plain component-wise difference gt - anchor.
  raw_difference,
};

OffsetVector encode_offsets(const BBox& gt, const BBox& anchor,
                            OffsetEncoding mode = OffsetEncoding::ssd);

/// Exact inverse of encode_offsets. The result is not validated; decoded
/// predictions can leave the image and go through clip_to_image().
BBox decode_offsets(const OffsetVector& pred, const BBox& anchor,
                    OffsetEncoding mode = OffsetEncoding::ssd);

/// SSD hard negative mining: keeps the max(ratio * num_pos, min_keep)
/// negatives with the largest background loss. Ties go to the lower anchor
/// id. Returned ids are ascending.
std::vector<std::size_t> select_hard_negatives(std::span<const std::size_t> neg,
                                               std::span<const double> neg_losses,
                                               std::size_t num_pos, double ratio,
                                               std::size_t min_keep = 1);

}  // namespace imaboost
