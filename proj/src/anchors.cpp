#include "imaboost/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace imaboost {

LayerSpec ssd_layer(int grid, double scale, double next_scale) {
  LayerSpec spec;
  spec.grid_w = grid;
  spec.grid_h = grid;
  spec.scale = scale;
  spec.aspect_ratios = {1.0, 2.0, 0.5, 3.0, 1.0 / 3.0};
  spec.extra_square_scale = std::sqrt(scale * next_scale);
  return spec;
}

std::vector<LayerSpec> default_layout() {
  return {ssd_layer(8, 0.1, 0.25), ssd_layer(4, 0.25, 0.5), ssd_layer(2, 0.5, 0.75)};
}

std::vector<Anchor> generate_default_boxes(std::span<const LayerSpec> layers) {
  std::vector<Anchor> anchors;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const LayerSpec& layer = layers[li];
    const std::string where = "layer " + std::to_string(li);
    if (layer.grid_w <= 0 || layer.grid_h <= 0)
      throw std::invalid_argument(where + ": grid dimensions must be positive");
    if (!(layer.scale > 0.0 && layer.scale <= 1.0))
      throw std::invalid_argument(where + ": scale must lie in (0, 1]");
    if (layer.boxes_per_location() != kBoxesPerLocation)
      throw std::invalid_argument(where + ": configuration yields " +
                                  std::to_string(layer.boxes_per_location()) +
                                  " boxes per location, expected 6");

    std::vector<std::pair<double, double>> shapes;
    for (double r : layer.aspect_ratios) {
      if (!(r > 0.0)) throw std::invalid_argument(where + ": aspect ratios must be positive");
      shapes.emplace_back(layer.scale * std::sqrt(r), layer.scale / std::sqrt(r));
    }
    if (layer.extra_square_scale) {
      const double s = *layer.extra_square_scale;
      if (!(s > 0.0)) throw std::invalid_argument(where + ": extra square scale must be positive");
      shapes.emplace_back(s, s);
    }

    for (int j = 0; j < layer.grid_h; ++j) {
      for (int i = 0; i < layer.grid_w; ++i) {
        const double cx = (i + 0.5) / layer.grid_w;
        const double cy = (j + 0.5) / layer.grid_h;
        for (int v = 0; v < kBoxesPerLocation; ++v) {
          Anchor a;
          a.box = checked({cx, cy, shapes[v].first, shapes[v].second}, where + " anchor");
          a.layer_index = static_cast<int>(li);
          a.location_index = j * layer.grid_w + i;
          a.variant_index = v;
          anchors.push_back(a);
        }
      }
    }
  }
  return anchors;
}

MatchAssignment match(std::span<const Anchor> anchors, std::span<const GroundTruthObject> objects,
                      const MatchOptions& opt) {
  if (!(opt.threshold > 0.0 && opt.threshold < 1.0))
    throw std::invalid_argument("match: threshold must lie in (0, 1)");

  const std::size_t na = anchors.size();
  const std::size_t no = objects.size();
  std::vector<double> overlap(na * no);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t o = 0; o < no; ++o) overlap[a * no + o] = iou(anchors[a].box, objects[o].box);

  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> owner(na, kNone);
  for (std::size_t a = 0; a < na; ++a) {
    std::size_t best = kNone;
    double best_iou = -1.0;
    for (std::size_t o = 0; o < no; ++o) {
      if (overlap[a * no + o] > best_iou) {
        best_iou = overlap[a * no + o];
        best = o;
      }
    }
    if (best != kNone && best_iou >= opt.threshold) owner[a] = best;
  }

  if (opt.best_match_guarantee && no > 0 && na > 0) {
    std::vector<char> anchor_taken(na, 0);
    std::vector<char> object_done(no, 0);
    for (std::size_t round = 0; round < std::min(na, no); ++round) {
      std::size_t best_a = kNone;
      std::size_t best_o = kNone;
      double best_iou = -1.0;
      for (std::size_t a = 0; a < na; ++a) {
        if (anchor_taken[a]) continue;
        for (std::size_t o = 0; o < no; ++o) {
          if (object_done[o]) continue;
          if (overlap[a * no + o] > best_iou) {
            best_iou = overlap[a * no + o];
            best_a = a;
            best_o = o;
          }
        }
      }
      anchor_taken[best_a] = 1;
      object_done[best_o] = 1;
      owner[best_a] = best_o;
    }
  }

  MatchAssignment out;
  for (std::size_t a = 0; a < na; ++a) {
    if (owner[a] == kNone)
      out.neg.push_back(a);
    else
      out.pos.emplace_back(a, owner[a]);
  }
  return out;
}

OffsetVector encode_offsets(const BBox& gt, const BBox& anchor, OffsetEncoding mode) {
  if (mode == OffsetEncoding::raw_difference)
    return {gt.cx - anchor.cx, gt.cy - anchor.cy, gt.w - anchor.w, gt.h - anchor.h};
  return {(gt.cx - anchor.cx) / anchor.w, (gt.cy - anchor.cy) / anchor.h,
          std::log(gt.w / anchor.w), std::log(gt.h / anchor.h)};
}

BBox decode_offsets(const OffsetVector& pred, const BBox& anchor, OffsetEncoding mode) {
  if (mode == OffsetEncoding::raw_difference)
    return {anchor.cx + pred.d_cx, anchor.cy + pred.d_cy, anchor.w + pred.d_w,
            anchor.h + pred.d_h};
  return {anchor.cx + pred.d_cx * anchor.w, anchor.cy + pred.d_cy * anchor.h,
          anchor.w * std::exp(pred.d_w), anchor.h * std::exp(pred.d_h)};
}

std::vector<std::size_t> select_hard_negatives(std::span<const std::size_t> neg,
                                               std::span<const double> neg_losses,
                                               std::size_t num_pos, double ratio,
                                               std::size_t min_keep) {
  if (neg.size() != neg_losses.size())
    throw std::invalid_argument("select_hard_negatives: size mismatch");
  const auto wanted = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_pos)));
  const std::size_t keep = std::min(neg.size(), std::max(wanted, min_keep));

  std::vector<std::size_t> order(neg.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (neg_losses[a] != neg_losses[b]) return neg_losses[a] > neg_losses[b];
    return neg[a] < neg[b];
  });
  std::vector<std::size_t> out;
  out.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) out.push_back(neg[order[k]]);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace imaboost
