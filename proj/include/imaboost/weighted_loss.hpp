#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "imaboost/anchors.hpp"
#include "imaboost/linear_model.hpp"

namespace imaboost {

/// Balance between the classification and regression terms of the loss.
struct LossConfig {
  double alpha_cls = 1.0;
  double alpha_reg = 1.0;
  int num_classes = 1;

  void validate() const;
};

/// Raised by total_loss() and loss_gradient() when a batch has no positive
/// anchor; the loss is undefined and the caller skips the batch.
class EmptyPositiveSetError : public std::runtime_error {
 public:
  EmptyPositiveSetError() : std::runtime_error("empty positive set: loss is undefined") {}
};

/// Loss weight of a positive sample: N times its boosting weight. Defined for
/// weights in (0, 1].
double map_weight(double weight, std::size_t num_objects);

double smooth_l1(double x);
/// d smooth_l1 / dx.
double smooth_l1_derivative(double x);

/// Floor applied to probabilities before taking the logarithm.
inline constexpr double kProbabilityFloor = 1e-12;

struct PositiveTerm {
  std::vector<double> pre_cls;  // length C+1, on the simplex
  int gt_class = 1;             // index of the one-hot target
  OffsetVector pre_loc;
  OffsetVector gt_loc;
  double weight = 1.0;  // f(w) >= 0
};

struct NegativeTerm {
  std::vector<double> pre_cls;  // target is background
};

/// Predictions and targets of one training batch.
struct LossBatch {
  std::vector<PositiveTerm> pos;
  std::vector<NegativeTerm> neg;
  /// Num; 0 means pos.size(). Set when positives were left out of the
  /// terms but still count as positives.
  std::size_t num_pos_override = 0;

  std::size_t num_pos() const { return num_pos_override ? num_pos_override : pos.size(); }

  /// Checks simplex membership (1e-9), strict positivity and weights >= 0.
  void validate(int num_classes) const;
};

/// -sum_pos f_i ln p_i[gt] - sum_neg ln p_i[background]
double classification_loss(const LossBatch& batch);

/// sum_pos f_i sum_l smooth_l1(pre_loc - gt_loc)
double regression_loss(const LossBatch& batch);

/// (alpha_cls * Lcls + alpha_reg * Lreg) / num_pos
double total_loss(const LossBatch& batch, const LossConfig& cfg);

/// Recorded features and targets, consumed by the linear detector. Feature
/// spans point into storage owned by the caller.
struct TrainingBatch {
  struct Positive {
    std::span<const double> feature;
    int gt_class = 1;
    OffsetVector gt_loc;
    double weight = 1.0;
  };
  std::vector<Positive> pos;
  std::vector<std::span<const double>> neg;
  std::size_t num_pos_override = 0;

  std::size_t num_pos() const { return num_pos_override ? num_pos_override : pos.size(); }
};

/// Runs the linear detector over the batch's features.
LossBatch forward(const LinearDetectorParams& model, const TrainingBatch& batch);

/// Gradient of total_loss split into its three sums:
///   cls_pos = (a1/Num) sum_pos f_i grad(cls_i)
///   cls_neg = (a1/Num) sum_neg grad(cls_i)
///   reg_pos = (a2/Num) sum_pos f_i grad(reg_i)
struct LossGradient {
  LinearDetectorParams cls_pos;
  LinearDetectorParams cls_neg;
  LinearDetectorParams reg_pos;
  double loss = 0.0;

  LinearDetectorParams total() const;
};

LossGradient loss_gradient(const TrainingBatch& batch, const LossConfig& cfg,
                           const LinearDetectorParams& model);

}  // namespace imaboost
