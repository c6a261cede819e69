#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "imaboost/anchors.hpp"
#include "imaboost/geometry.hpp"
#include "imaboost/linear_model.hpp"
#include "imaboost/synthdata.hpp"
#include "imaboost/weighted_loss.hpp"

namespace imaboost {

/// Detections per image, in dataset image order.
using ImageDetections = std::vector<std::vector<Detection>>;

/// A trained detector. Immutable; predict() is deterministic and may be called
/// concurrently.
class DetectionModel {
 public:
  virtual ~DetectionModel() = default;
  virtual ImageDetections predict(const SyntheticDataset& dataset) const = 0;
  virtual std::string kind() const = 0;
  virtual void save(const std::filesystem::path& path) const = 0;
};

using ModelPtr = std::shared_ptr<const DetectionModel>;

struct FitContext {
  /// 1-based boosting iteration.
  int iteration = 1;
  /// Model of the previous iteration, if any (used for warm starts).
  const DetectionModel* previous = nullptr;
};

/// Trains a model from per-object boosting weights. Each positive anchor
/// inherits the weight of the object it is matched to.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual ModelPtr fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
                       const FitContext& ctx) = 0;
};

/// Loads a model written by DetectionModel::save, dispatching on its header.
ModelPtr load_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Linear reference detector

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

struct LinearTrainOptions {
  LossConfig loss;
  double step_size = 0.3;
  int epochs = 200;
  std::uint64_t seed = 7;
  /// Stddev of the initial class weights; loc weights start at zero.
  double init_scale = 0.01;
  /// Start iteration m from the model of iteration m-1.
  bool warm_start = false;
  /// Hard negative mining: keep neg_pos_ratio * Num hardest negatives per
  /// epoch. 0 uses every negative.
  double neg_pos_ratio = 0.0;
  OffsetEncoding encoding = OffsetEncoding::ssd;
  NmsOptions nms;
};

/// Zero loc weights, class weights N(0, init_scale^2) from a seeded stream.
LinearDetectorParams init_params(int num_classes, std::size_t feature_dim, std::uint64_t seed,
                                 double init_scale);

/// Collects the positive and negative anchors of every image. loss_weights is
/// per object (already mapped, f(w)); a positive anchor takes the weight of
/// its object. With drop_zero_weight, positives of zero-weight objects are
/// left out while still counting toward Num.
TrainingBatch build_training_batch(const SyntheticDataset& dataset,
                                   std::span<const double> loss_weights, OffsetEncoding encoding,
                                   bool drop_zero_weight = false);

struct LinearFitResult {
  LinearDetectorParams params;
  /// Loss before each epoch's step, followed by the final loss.
  std::vector<double> loss_history;
};

/// Full-batch fixed-step gradient descent on the weighted loss.
LinearFitResult gradient_descent(const TrainingBatch& batch, const LinearTrainOptions& opt,
                                 LinearDetectorParams init);

/// Trains on the dataset with boosting weights w (non-negative, summing to 1
/// over the N objects); positive anchors of object j get loss weight N*w_j.
LinearFitResult linear_fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
                           const LinearTrainOptions& opt,
                           const LinearDetectorParams* init = nullptr);

/// Softmax + offset decode per anchor, background-argmax anchors dropped,
/// boxes clipped to the image, then per-class NMS per image.
ImageDetections linear_predict(const LinearDetectorParams& model, const SyntheticDataset& dataset,
                               OffsetEncoding encoding = OffsetEncoding::ssd,
                               const NmsOptions& nms_opt = {});

class LinearModel final : public DetectionModel {
 public:
  LinearModel(LinearDetectorParams params, OffsetEncoding encoding, NmsOptions nms,
              std::vector<double> loss_history = {})
      : params_(std::move(params)),
        encoding_(encoding),
        nms_(nms),
        loss_history_(std::move(loss_history)) {}

  ImageDetections predict(const SyntheticDataset& dataset) const override;
  std::string kind() const override { return "linear"; }
  void save(const std::filesystem::path& path) const override;

  const LinearDetectorParams& params() const { return params_; }
  OffsetEncoding encoding() const { return encoding_; }
  const NmsOptions& nms_options() const { return nms_; }
  const std::vector<double>& loss_history() const { return loss_history_; }

  std::string to_text() const;
  static LinearModel from_text(const std::string& text);

 private:
  LinearDetectorParams params_;
  OffsetEncoding encoding_;
  NmsOptions nms_;
  std::vector<double> loss_history_;
};

class LinearDetector final : public Detector {
 public:
  explicit LinearDetector(LinearTrainOptions opt) : opt_(std::move(opt)) {}
  ModelPtr fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
               const FitContext& ctx) override;
  const LinearTrainOptions& options() const { return opt_; }

 private:
  LinearTrainOptions opt_;
};

// ---------------------------------------------------------------------------
// Oracle detector

/// Scripted detector for exact verification of the boosting loop.
///
/// Object j is detected with probability
///   clamp(detect_probability + weight_slope * (N * w_j - 1), 0, 1)
/// (hard objects use hard_detect_probability as the base when it is >= 0).
/// When miss_schedule has an entry for the iteration (the last entry covers
/// later iterations), detection is exactly "j not in that set" instead.
/// A detection is the object's box shrunk by 3% per side length, so IoU with
/// the object is 0.9409.
struct OracleDetectorSpec {
  double detect_probability = 1.0;
  double hard_detect_probability = -1.0;
  double weight_slope = 0.0;
  std::vector<std::vector<std::size_t>> miss_schedule;
  double false_positives_per_image = 0.0;
  double score_min = 0.5;
  double score_max = 1.0;
  double fp_score_min = 0.05;
  double fp_score_max = 0.5;
  std::uint64_t seed = 11;

  void validate() const;
};

inline constexpr double kOracleShrink = 0.97;

class OracleModel final : public DetectionModel {
 public:
  /// `weights` are the boosting weights the model was fit with; they only
  /// apply when predicting on the dataset whose fingerprint is given.
  OracleModel(OracleDetectorSpec spec, int iteration, std::uint64_t train_fingerprint,
              std::vector<double> weights);

  ImageDetections predict(const SyntheticDataset& dataset) const override;
  std::string kind() const override { return "oracle"; }
  void save(const std::filesystem::path& path) const override;

  /// Whether global object j of the dataset is detected.
  bool detects(const SyntheticDataset& dataset, std::size_t j, bool hard) const;
  double detect_probability(const SyntheticDataset& dataset, std::size_t j, bool hard) const;

  std::string to_json() const;
  static OracleModel from_json(const std::string& text);

 private:
  OracleDetectorSpec spec_;
  int iteration_;
  std::uint64_t train_fingerprint_;
  std::vector<double> weights_;
};

ImageDetections oracle_predict(const OracleDetectorSpec& spec, const SyntheticDataset& dataset,
                               std::span<const double> object_weights, int iteration = 1);

class OracleDetector final : public Detector {
 public:
  explicit OracleDetector(OracleDetectorSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  ModelPtr fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
               const FitContext& ctx) override;

 private:
  OracleDetectorSpec spec_;
};

}  // namespace imaboost
