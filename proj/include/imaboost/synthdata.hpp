#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "imaboost/anchors.hpp"
#include "imaboost/geometry.hpp"

namespace imaboost {

/// Parameters of the synthetic scene generator.
///
/// Feature layout per anchor (d = feature_dim):
///   [0]      constant 1
///   [1..4]   noisy encoded offsets to the matched object (noise only for
///            background anchors)
///   [5..d)   prototype of the anchor's class plus Gaussian noise
/// Hard objects blend their class prototype into the background prototype
/// with weight hard_signal; clean objects use a signal strength drawn
/// uniformly from [clean_signal_min, 1].
struct SceneConfig {
  std::size_t image_count = 100;
  int num_classes = 3;
  int min_objects = 1;
  int max_objects = 4;
  double min_size = 0.08;
  double max_size = 0.35;
  std::size_t feature_dim = 16;
  double margin = 2.0;
  double p_noise = 0.0;
  double feature_noise = 0.25;
  double offset_noise = 0.05;
  double hard_signal = 0.3;
  double clean_signal_min = 0.6;
  double match_threshold = 0.5;
  std::vector<LayerSpec> layers = default_layout();
  std::uint64_t seed = 1;

  void validate() const;

  friend bool operator==(const SceneConfig&, const SceneConfig&) = default;
};

struct SceneImage {
  /// Position of the image in the dataset it was generated in.
  std::uint64_t image_id = 0;
  std::vector<GroundTruthObject> objects;
  /// anchors x feature_dim, row-major.
  std::vector<double> features;

  friend bool operator==(const SceneImage&, const SceneImage&) = default;
};

/// Generated scenes over a fixed anchor layout. Objects are globally indexed
/// image-major: object j of the dataset is object (j - offset[i]) of image i.
class SyntheticDataset {
 public:
  SyntheticDataset() = default;
  SyntheticDataset(SceneConfig config, std::vector<SceneImage> images);

  const SceneConfig& config() const { return config_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }
  const std::vector<SceneImage>& images() const { return images_; }
  const std::vector<MatchAssignment>& matches() const { return matches_; }

  std::size_t image_count() const { return images_.size(); }
  std::size_t anchor_count() const { return anchors_.size(); }
  std::size_t feature_dim() const { return config_.feature_dim; }
  int num_classes() const { return config_.num_classes; }
  std::size_t object_count() const { return object_offsets_.empty() ? 0 : total_objects_; }

  /// Global index of the first object of image i.
  std::size_t object_offset(std::size_t image) const { return object_offsets_[image]; }
  std::span<const double> feature(std::size_t image, std::size_t anchor) const;

  /// Ground truth, image-major, in global object order.
  std::vector<GroundTruthObject> all_objects() const;
  std::vector<std::vector<GroundTruthObject>> ground_truth() const;

  /// Content hash (FNV-1a over ids, objects and features).
  std::uint64_t fingerprint() const { return fingerprint_; }

  friend bool operator==(const SyntheticDataset& a, const SyntheticDataset& b) {
    return a.config_ == b.config_ && a.images_ == b.images_;
  }

 private:
  SceneConfig config_;
  std::vector<Anchor> anchors_;
  std::vector<SceneImage> images_;
  std::vector<MatchAssignment> matches_;
  std::vector<std::size_t> object_offsets_;
  std::size_t total_objects_ = 0;
  std::uint64_t fingerprint_ = 0;
};

/// Deterministic in config: image i is drawn from its own stream
/// sub_seed(seed, i), so images can be generated in any order.
SyntheticDataset generate(const SceneConfig& config);

/// Image-level random partition; round(train_fraction * n) images go to the
/// training side. Images keep their relative order within each side.
std::pair<SyntheticDataset, SyntheticDataset> split(const SyntheticDataset& dataset,
                                                    double train_fraction, std::uint64_t seed);

/// Corrupt or unreadable dataset file. `offset` is the byte position where
/// parsing failed.
class DatasetParseError : public std::runtime_error {
 public:
  DatasetParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class DatasetVersionError : public std::runtime_error {
 public:
  DatasetVersionError(std::uint32_t found, std::uint32_t expected)
      : std::runtime_error("dataset file version " + std::to_string(found) +
                           " is not supported (expected version " + std::to_string(expected) +
                           ")"),
        found_(found),
        expected_(expected) {}
  std::uint32_t found() const { return found_; }
  std::uint32_t expected() const { return expected_; }

 private:
  std::uint32_t found_;
  std::uint32_t expected_;
};

inline constexpr std::uint32_t kDatasetFormatVersion = 1;

std::string serialize(const SyntheticDataset& dataset);
SyntheticDataset deserialize(std::string_view bytes);

void save(const SyntheticDataset& dataset, const std::filesystem::path& path);
SyntheticDataset load(const std::filesystem::path& path);

/// One line per object: "image_id class cx cy w h hard".
std::string ground_truth_text(const SyntheticDataset& dataset);

}  // namespace imaboost
