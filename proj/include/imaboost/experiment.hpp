#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "imaboost/detectors.hpp"
#include "imaboost/evaluation.hpp"
#include "imaboost/ima.hpp"
#include "imaboost/synthdata.hpp"

namespace imaboost {

/// Invalid or incomplete configuration. `field` is the dotted path of the
/// offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config field '" + field + "': " + what), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

enum class DetectorKind { oracle, linear };

struct ExperimentConfig {
  /// Exactly one of dataset_path / scene is set.
  std::optional<std::filesystem::path> dataset_path;
  std::optional<SceneConfig> scene;
  double train_fraction = 0.7;

  DetectorKind detector = DetectorKind::linear;
  LinearTrainOptions linear;
  OracleDetectorSpec oracle;

  int rounds = 3;
  double theta = 0.5;
  NmsOptions nms;
  EvalOptions eval;

  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  /// Verbatim config text, copied next to the outputs.
  std::string source_text;
};

/// Parses a JSON config. Relative dataset paths resolve against base_dir.
/// Unknown keys are rejected.
ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Scene generator settings from a JSON object ("scene" section or a
/// stand-alone gen-data config).
SceneConfig parse_scene_config(std::string_view json_text);

/// Seeds derived from the global experiment seed.
std::uint64_t split_seed(const ExperimentConfig& cfg);
std::uint64_t detector_seed(const ExperimentConfig& cfg);

std::unique_ptr<Detector> make_detector(const ExperimentConfig& cfg);

struct BoostOutcome {
  SyntheticDataset train;
  SyntheticDataset test;
  IMAEnsemble ensemble;
};

/// Generates or loads the data, splits it, runs the boosting loop and scores
/// each iteration on the test split: single-model mAP of G_m and mAP of the
/// fused ensemble of G_1..G_m (absent for m = 1).
BoostOutcome run_boost_experiment(const ExperimentConfig& cfg);

/// Per-iteration table: m, E_m, alpha_m, single mAP(%), ensemble mAP(%);
/// "-" marks an absent ensemble score.
std::string iteration_table(const IMAEnsemble& ensemble);

/// mAP of one detector output against a dataset.
double dataset_map(const ImageDetections& detections, const SyntheticDataset& dataset,
                   const EvalOptions& opt = {});

}  // namespace imaboost
