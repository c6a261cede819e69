#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace imaboost::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct GenDataArgs {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  /// Also write the ground truth as text next to the dataset.
  bool ground_truth_text = false;
};

struct BoostArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
};

struct EvalArgs {
  std::filesystem::path ensemble;
  std::filesystem::path dataset;
  std::filesystem::path out;
  /// Evaluate iteration m alone instead of the fused ensemble.
  std::optional<int> single;
  /// Fuse only the first `upto` members.
  std::optional<int> upto;
  double iou_threshold = 0.5;
  std::string ap_mode = "allpoint";
  /// Comma-separated class lists, e.g. "1,2".
  std::vector<std::string> similarity_groups;
};

// Each command reports progress on `log` and returns an exit code.
int cmd_gen_data(const GenDataArgs& args, std::ostream& log);
int cmd_boost(const BoostArgs& args, std::ostream& log);
int cmd_eval(const EvalArgs& args, std::ostream& log);
int cmd_analyze_fp(const EvalArgs& args, std::ostream& log);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv);

}  // namespace imaboost::cli
