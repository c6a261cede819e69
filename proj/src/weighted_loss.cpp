#include "imaboost/weighted_loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace imaboost {

void LossConfig::validate() const {
  if (!(alpha_cls >= 0.0) || !(alpha_reg >= 0.0))
    throw std::invalid_argument("LossConfig: alpha weights must be non-negative");
  if (!(alpha_cls + alpha_reg > 0.0))
    throw std::invalid_argument("LossConfig: alpha_cls + alpha_reg must be positive");
  if (num_classes < 1) throw std::invalid_argument("LossConfig: num_classes must be positive");
}

double map_weight(double weight, std::size_t num_objects) {
  if (num_objects == 0) throw std::invalid_argument("map_weight: object count must be positive");
  if (!(weight > 0.0 && weight <= 1.0))
    throw std::invalid_argument("map_weight: weight " + std::to_string(weight) +
                                " outside (0, 1]");
  return static_cast<double>(num_objects) * weight;
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_derivative(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

void LossBatch::validate(int num_classes) const {
  const auto width = static_cast<std::size_t>(num_classes) + 1;
  auto check_simplex = [&](const std::vector<double>& p, const char* what) {
    if (p.size() != width)
      throw std::invalid_argument(std::string(what) + ": class vector has wrong length");
    double s = 0.0;
    for (double v : p) {
      if (!(v > 0.0)) throw std::invalid_argument(std::string(what) + ": probability not positive");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument(std::string(what) + ": probabilities do not sum to 1");
  };
  for (const auto& t : pos) {
    check_simplex(t.pre_cls, "positive");
    if (t.gt_class < 1 || t.gt_class > num_classes)
      throw std::invalid_argument("positive: target class out of range");
    if (!(t.weight >= 0.0)) throw std::invalid_argument("positive: negative sample weight");
  }
  for (const auto& t : neg) check_simplex(t.pre_cls, "negative");
}

namespace {
double neg_log(double p) { return -std::log(std::max(p, kProbabilityFloor)); }

double residual_loss(const OffsetVector& pre, const OffsetVector& gt) {
  double s = 0.0;
  for (int l = 0; l < 4; ++l) s += smooth_l1(pre[l] - gt[l]);
  return s;
}
}  // namespace

double classification_loss(const LossBatch& batch) {
  double pos_sum = 0.0;
  for (const auto& t : batch.pos) pos_sum += t.weight * neg_log(t.pre_cls[t.gt_class]);
  double neg_sum = 0.0;
  for (const auto& t : batch.neg) neg_sum += neg_log(t.pre_cls[kBackground]);
  return pos_sum + neg_sum;
}

double regression_loss(const LossBatch& batch) {
  double s = 0.0;
  for (const auto& t : batch.pos) s += t.weight * residual_loss(t.pre_loc, t.gt_loc);
  return s;
}

double total_loss(const LossBatch& batch, const LossConfig& cfg) {
  if (batch.num_pos() == 0) throw EmptyPositiveSetError();
  const double num = static_cast<double>(batch.num_pos());
  return (cfg.alpha_cls * classification_loss(batch) + cfg.alpha_reg * regression_loss(batch)) /
         num;
}

LossBatch forward(const LinearDetectorParams& model, const TrainingBatch& batch) {
  LossBatch out;
  out.pos.reserve(batch.pos.size());
  for (const auto& s : batch.pos) {
    PositiveTerm t;
    t.pre_cls = class_probabilities(model, s.feature);
    t.gt_class = s.gt_class;
    double loc[4];
    predict_offsets(model, s.feature, loc);
    t.pre_loc = {loc[0], loc[1], loc[2], loc[3]};
    t.gt_loc = s.gt_loc;
    t.weight = s.weight;
    out.pos.push_back(std::move(t));
  }
  out.neg.reserve(batch.neg.size());
  for (const auto& f : batch.neg) out.neg.push_back({class_probabilities(model, f)});
  out.num_pos_override = batch.num_pos_override;
  return out;
}

LinearDetectorParams LossGradient::total() const {
  LinearDetectorParams g = cls_pos;
  g += cls_neg;
  g += reg_pos;
  return g;
}

namespace {
// grad += scale * (p - onehot(target)) x^T
void accumulate_softmax_grad(Matrix& grad, const std::vector<double>& p, int target,
                             std::span<const double> x, double scale) {
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double coeff = scale * (p[c] - (static_cast<int>(c) == target ? 1.0 : 0.0));
    if (coeff == 0.0) continue;
    auto row = grad.row(c);
    for (std::size_t k = 0; k < x.size(); ++k) row[k] += coeff * x[k];
  }
}
}  // namespace

LossGradient loss_gradient(const TrainingBatch& batch, const LossConfig& cfg,
                           const LinearDetectorParams& model) {
  if (batch.num_pos() == 0) throw EmptyPositiveSetError();
  const int nc = model.num_classes();
  const std::size_t d = model.feature_dim();
  const double num = static_cast<double>(batch.num_pos());
  const double cls_scale = cfg.alpha_cls / num;
  const double reg_scale = cfg.alpha_reg / num;

  LossGradient g{LinearDetectorParams(nc, d), LinearDetectorParams(nc, d),
                 LinearDetectorParams(nc, d), 0.0};
  double cls_loss = 0.0;
  double reg_loss = 0.0;

  for (const auto& s : batch.pos) {
    const auto p = class_probabilities(model, s.feature);
    cls_loss += s.weight * neg_log(p[s.gt_class]);
    accumulate_softmax_grad(g.cls_pos.class_weights, p, s.gt_class, s.feature,
                            cls_scale * s.weight);

    double loc[4];
    predict_offsets(model, s.feature, loc);
    for (int l = 0; l < 4; ++l) {
      const double r = loc[l] - s.gt_loc[l];
      reg_loss += s.weight * smooth_l1(r);
      const double coeff = reg_scale * s.weight * smooth_l1_derivative(r);
      if (coeff == 0.0) continue;
      auto row = g.reg_pos.loc_weights.row(static_cast<std::size_t>(l));
      for (std::size_t k = 0; k < d; ++k) row[k] += coeff * s.feature[k];
    }
  }
  for (const auto& f : batch.neg) {
    const auto p = class_probabilities(model, f);
    cls_loss += neg_log(p[kBackground]);
    accumulate_softmax_grad(g.cls_neg.class_weights, p, kBackground, f, cls_scale);
  }
  g.loss = (cfg.alpha_cls * cls_loss + cfg.alpha_reg * reg_loss) / num;
  return g;
}

}  // namespace imaboost
