#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "imaboost/anchors.hpp"
#include "imaboost/detectors.hpp"
#include "imaboost/geometry.hpp"
#include "imaboost/synthdata.hpp"

namespace imaboost {

/// Boosting weights of the N training objects at one iteration. The vector
/// is a probability vector with strictly positive entries.
struct WeightState {
  int iteration = 1;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  /// Throws std::logic_error unless the sum is 1 within 1e-9 and every
  /// entry is positive.
  void validate() const;

  friend bool operator==(const WeightState&, const WeightState&) = default;
};

/// Uniform 1/N at iteration 1.
WeightState init_weights(std::size_t num_objects);

/// Weight of each positive anchor (in match order): the weight of the object
/// it is matched to. object_offset is the global index of the image's first
/// object.
std::vector<double> assign_anchor_weights(const MatchAssignment& match, const WeightState& state,
                                          std::size_t object_offset = 0);

/// 0 when some detection has the object's class and IoU >= theta with it,
/// 1 otherwise.
int detection_indicator(const GroundTruthObject& obj, std::span<const Detection> detections,
                        double theta = 0.5);

/// Indicators of every object of the dataset, in global object order.
std::vector<int> detection_indicators(const SyntheticDataset& dataset,
                                      const ImageDetections& detections, double theta = 0.5);

/// Weighted share of undetected objects: sum w_j I_j / sum w_j.
double error_rate(const WeightState& state, std::span<const int> indicators);

inline constexpr double kErrorClamp = 1e-8;

/// ln((1-E)/E) + ln(C-1) with E clamped to [1e-8, 1-1e-8]. Non-positive
/// values are returned unchanged.
double model_weight(double error, int num_classes);

/// w_j * exp(alpha * (1 - I_j)), renormalized to sum 1. Detected objects gain
/// a factor e^alpha; undetected ones keep theirs, so after normalization
/// their weights shrink whenever alpha > 0.
WeightState update_weights(const WeightState& state, std::span<const int> indicators, double alpha);

/// Scores multiplied by alpha; classes and boxes unchanged.
std::vector<Detection> rescore(std::span<const Detection> detections, double alpha);

/// Union of the rescored per-model detections of each image, then per-class
/// NMS. per_model[m][i] holds model m's detections on image i.
ImageDetections fuse_predictions(std::span<const ImageDetections> per_model,
                                 std::span<const double> alphas, const NmsOptions& nms_opt = {});

struct IterationRecord {
  int m = 1;
  double error = 0.0;
  double alpha = 0.0;
  /// Weights used to train model m.
  WeightState weights;
  std::vector<int> indicators;
  std::optional<double> single_score;
  std::optional<double> ensemble_score;
  std::string warning;
};

struct EnsembleMember {
  ModelPtr model;
  double alpha = 0.0;
};

struct IMAEnsemble {
  std::vector<EnsembleMember> members;
  std::vector<IterationRecord> iterations;
  /// Weights after the last update (never used for training).
  WeightState final_weights;
  int num_classes = 1;
  double theta = 0.5;
  /// NMS used when fusing member outputs.
  NmsOptions nms;

  std::size_t size() const { return members.size(); }
};

struct IMAOptions {
  int rounds = 3;
  double theta = 0.5;
  int num_classes = 1;
};

/// Called after iteration m has been appended to the ensemble; may fill the
/// record's score fields.
using EvalHook = std::function<void(int m, const IMAEnsemble& so_far, IterationRecord& record)>;

/// A detector failure during iteration m.
class BoostingError : public std::runtime_error {
 public:
  BoostingError(int iteration, const std::string& what)
      : std::runtime_error("IMA iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

/// The invert boosting loop: for m = 1..M fit G_m with the current weights,
/// run it on the training set, then compute E_m, alpha_m and the next
/// weights.
IMAEnsemble run_ima(const SyntheticDataset& train, Detector& detector, const IMAOptions& opt,
                    const EvalHook& hook = {});

/// Runs the first `upto` members (all when 0) on the dataset and fuses their
/// rescored detections.
ImageDetections fuse(const IMAEnsemble& ensemble, const SyntheticDataset& dataset,
                     const NmsOptions& nms_opt = {}, std::size_t upto = 0);

inline constexpr int kManifestVersion = 1;

/// Writes manifest.json plus one model file per member.
void save_ensemble(const IMAEnsemble& ensemble, const std::filesystem::path& dir);
IMAEnsemble load_ensemble(const std::filesystem::path& dir);

/// The manifest text save_ensemble writes, given the model file names.
std::string manifest_json(const IMAEnsemble& ensemble, std::span<const std::string> model_files);

}  // namespace imaboost
