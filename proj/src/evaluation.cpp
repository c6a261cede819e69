#include "imaboost/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace imaboost {

namespace {

struct RankedDet {
  std::size_t id;
  std::size_t image;
  const Detection* det;
};

// Detections of one class, ranked; ties by id.
std::vector<RankedDet> ranked_for_class(const ImageDetections& detections, int cls) {
  std::vector<RankedDet> out;
  std::size_t id = 0;
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (const auto& d : detections[i]) {
      if (d.cls == cls) out.push_back({id, i, &d});
      ++id;
    }
  std::stable_sort(out.begin(), out.end(), [](const RankedDet& a, const RankedDet& b) {
    if (a.det->score != b.det->score) return a.det->score > b.det->score;
    return a.id < b.id;
  });
  return out;
}

}  // namespace

std::size_t PRCurve::tp() const {
  return static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
}

std::vector<PRCurve> pr_points(const ImageDetections& detections, const GroundTruth& ground_truth,
                               int num_classes, double iou_threshold) {
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("pr_points: detections and ground truth cover different images");
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("pr_points: iou_threshold must lie in (0, 1)");

  std::vector<PRCurve> curves;
  for (int cls = 1; cls <= num_classes; ++cls) {
    PRCurve curve;
    curve.cls = cls;
    std::vector<std::vector<char>> claimed(ground_truth.size());
    for (std::size_t i = 0; i < ground_truth.size(); ++i) {
      claimed[i].assign(ground_truth[i].size(), 0);
      for (const auto& o : ground_truth[i]) curve.num_gt += o.cls == cls ? 1 : 0;
    }

    std::size_t tp = 0;
    std::size_t seen = 0;
    for (const auto& r : ranked_for_class(detections, cls)) {
      const auto& objs = ground_truth[r.image];
      std::size_t best = objs.size();
      double best_iou = -1.0;
      for (std::size_t k = 0; k < objs.size(); ++k) {
        if (objs[k].cls != cls || claimed[r.image][k]) continue;
        const double v = iou(objs[k].box, r.det->box);
        if (v > best_iou) {
          best_iou = v;
          best = k;
        }
      }
      const bool hit = best < objs.size() && best_iou >= iou_threshold;
      if (hit) {
        claimed[r.image][best] = 1;
        ++tp;
      }
      ++seen;
      curve.is_tp.push_back(hit);
      curve.ranked_ids.push_back(r.id);
      const double recall =
          curve.num_gt ? static_cast<double>(tp) / static_cast<double>(curve.num_gt) : 0.0;
      curve.points.push_back({recall, static_cast<double>(tp) / static_cast<double>(seen)});
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

const char* ap_mode_name(APMode mode) { return mode == APMode::all_point ? "allpoint" : "voc11"; }

double average_precision(const PRCurve& curve, APMode mode) {
  const auto& pts = curve.points;
  if (pts.empty()) return 0.0;

  if (mode == APMode::voc11) {
    double sum = 0.0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double best = 0.0;
      for (const auto& p : pts)
        if (p.recall >= level) best = std::max(best, p.precision);
      sum += best;
    }
    return sum / 11.0;
  }

  // Precision envelope: max precision at any recall >= r.
  std::vector<double> envelope(pts.size());
  double running = 0.0;
  for (std::size_t k = pts.size(); k-- > 0;) {
    running = std::max(running, pts[k].precision);
    envelope[k] = running;
  }
  double area = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    if (pts[k].recall > prev_recall) {
      area += (pts[k].recall - prev_recall) * envelope[k];
      prev_recall = pts[k].recall;
    }
  }
  return area;
}

double mean_ap(std::span<const ClassResult> classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : classes) {
    if (c.num_gt == 0) continue;
    sum += c.ap;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

FpKind classify_false_positive(const Detection& det, std::span<const GroundTruthObject> objects,
                               const std::vector<std::vector<int>>& similarity_groups) {
  auto similar = [&](int a, int b) {
    for (const auto& g : similarity_groups)
      if (std::find(g.begin(), g.end(), a) != g.end() && std::find(g.begin(), g.end(), b) != g.end())
        return true;
    return false;
  };
  bool sim = false;
  bool oth = false;
  for (const auto& o : objects) {
    if (iou(o.box, det.box) < kTaxonomyMinOverlap) continue;
    if (o.cls == det.cls) return FpKind::loc;
    if (similar(o.cls, det.cls))
      sim = true;
    else
      oth = true;
  }
  if (sim) return FpKind::sim;
  if (oth) return FpKind::oth;
  return FpKind::bg;
}

FpTaxonomy fp_taxonomy(const ImageDetections& detections, const GroundTruth& ground_truth,
                       int num_classes, const std::vector<std::vector<int>>& similarity_groups,
                       double iou_threshold) {
  const auto curves = pr_points(detections, ground_truth, num_classes, iou_threshold);
  // id -> (image, detection)
  std::vector<std::pair<std::size_t, std::size_t>> where;
  for (std::size_t i = 0; i < detections.size(); ++i)
    for (std::size_t k = 0; k < detections[i].size(); ++k) where.emplace_back(i, k);

  FpTaxonomy out;
  for (const auto& c : curves) {
    for (std::size_t r = 0; r < c.is_tp.size(); ++r) {
      if (c.is_tp[r]) continue;
      const auto [img, k] = where[c.ranked_ids[r]];
      switch (classify_false_positive(detections[img][k], ground_truth[img], similarity_groups)) {
        case FpKind::loc: ++out.loc; break;
        case FpKind::sim: ++out.sim; break;
        case FpKind::oth: ++out.oth; break;
        case FpKind::bg: ++out.bg; break;
      }
    }
  }
  return out;
}

EvalReport evaluate(const ImageDetections& detections, const GroundTruth& ground_truth,
                    int num_classes, const EvalOptions& opt) {
  EvalReport report;
  report.mode = opt.mode;
  report.curves = pr_points(detections, ground_truth, num_classes, opt.iou_threshold);
  for (const auto& c : report.curves) {
    ClassResult r;
    r.cls = c.cls;
    r.num_gt = c.num_gt;
    r.tp = c.tp();
    r.fp = c.fp();
    r.ap = average_precision(c, opt.mode);
    report.missed += r.num_gt - r.tp;
    report.classes.push_back(r);
  }
  report.map = mean_ap(report.classes);
  report.fp = fp_taxonomy(detections, ground_truth, num_classes, opt.similarity_groups,
                          opt.iou_threshold);
  return report;
}

std::string ap_table(const EvalReport& report) {
  std::ostringstream os;
  os.precision(10);
  os << "class\tap\ttp\tfp\tmissed\tnum_gt\n";
  for (const auto& c : report.classes)
    os << c.cls << '\t' << c.ap << '\t' << c.tp << '\t' << c.fp << '\t' << (c.num_gt - c.tp) << '\t'
       << c.num_gt << '\n';
  os << "mAP(" << ap_mode_name(report.mode) << ")\t" << report.map << "\t\t\t\t\n";
  return os.str();
}

std::string pr_table(const PRCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "# class " << curve.cls << "; recall precision (fractions)\n";
  os << "recall\tprecision\n";
  for (const auto& p : curve.points) os << p.recall << '\t' << p.precision << '\n';
  return os.str();
}

std::string fp_table(const FpTaxonomy& fp) {
  std::ostringstream os;
  os << "category\tcount\n"
     << "Loc\t" << fp.loc << "\nSim\t" << fp.sim << "\nOth\t" << fp.oth << "\nBG\t" << fp.bg
     << "\ntotal\t" << fp.total() << '\n';
  return os.str();
}

}  // namespace imaboost
