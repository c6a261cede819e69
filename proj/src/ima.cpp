#include "imaboost/ima.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace imaboost {

void WeightState::validate() const {
  if (weights.empty()) throw std::logic_error("weight state is empty");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::logic_error("weight state has a non-positive entry");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::logic_error("weight state does not sum to 1");
}

WeightState init_weights(std::size_t num_objects) {
  if (num_objects == 0) throw std::invalid_argument("init_weights: no objects");
  return {1, std::vector<double>(num_objects, 1.0 / static_cast<double>(num_objects))};
}

std::vector<double> assign_anchor_weights(const MatchAssignment& match, const WeightState& state,
                                          std::size_t object_offset) {
  std::vector<double> out;
  out.reserve(match.pos.size());
  for (const auto& [anchor, obj] : match.pos) {
    const std::size_t j = object_offset + obj;
    if (j >= state.size())
      throw std::out_of_range("assign_anchor_weights: anchor " + std::to_string(anchor) +
                              " matched to object " + std::to_string(j) + " of " +
                              std::to_string(state.size()));
    out.push_back(state.weights[j]);
  }
  return out;
}

int detection_indicator(const GroundTruthObject& obj, std::span<const Detection> detections,
                        double theta) {
  for (const auto& d : detections)
    if (d.cls == obj.cls && iou(obj.box, d.box) >= theta) return 0;
  return 1;
}

std::vector<int> detection_indicators(const SyntheticDataset& dataset,
                                      const ImageDetections& detections, double theta) {
  if (detections.size() != dataset.image_count())
    throw std::invalid_argument("detection_indicators: one detection list per image required");
  std::vector<int> out;
  out.reserve(dataset.object_count());
  for (std::size_t i = 0; i < dataset.image_count(); ++i)
    for (const auto& obj : dataset.images()[i].objects)
      out.push_back(detection_indicator(obj, detections[i], theta));
  return out;
}

double error_rate(const WeightState& state, std::span<const int> indicators) {
  if (indicators.size() != state.size())
    throw std::invalid_argument("error_rate: indicator count differs from object count");
  double missed = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < indicators.size(); ++j) {
    missed += state.weights[j] * indicators[j];
    total += state.weights[j];
  }
  return missed / total;
}

double model_weight(double error, int num_classes) {
  if (num_classes < 2) throw std::invalid_argument("model_weight: needs at least 2 classes");
  const double e = std::clamp(error, kErrorClamp, 1.0 - kErrorClamp);
  return std::log((1.0 - e) / e) + std::log(static_cast<double>(num_classes - 1));
}

WeightState update_weights(const WeightState& state, std::span<const int> indicators, double alpha) {
  if (indicators.size() != state.size())
    throw std::invalid_argument("update_weights: indicator count differs from object count");
  const double gain = std::exp(alpha);
  WeightState next{state.iteration + 1, state.weights};
  double z = 0.0;
  for (std::size_t j = 0; j < next.size(); ++j) {
    if (indicators[j] == 0) next.weights[j] *= gain;
    z += next.weights[j];
  }
  for (double& w : next.weights) w /= z;
  return next;
}

std::vector<Detection> rescore(std::span<const Detection> detections, double alpha) {
  std::vector<Detection> out(detections.begin(), detections.end());
  for (auto& d : out) d.score *= alpha;
  return out;
}

ImageDetections fuse_predictions(std::span<const ImageDetections> per_model,
                                 std::span<const double> alphas, const NmsOptions& nms_opt) {
  if (per_model.size() != alphas.size())
    throw std::invalid_argument("fuse_predictions: one alpha per model required");
  if (per_model.empty()) throw std::invalid_argument("fuse_predictions: empty ensemble");
  const std::size_t images = per_model.front().size();
  ImageDetections out(images);
  for (std::size_t i = 0; i < images; ++i) {
    std::vector<Detection> pooled;
    for (std::size_t m = 0; m < per_model.size(); ++m) {
      if (per_model[m].size() != images)
        throw std::invalid_argument("fuse_predictions: models disagree on image count");
      const auto scaled = rescore(per_model[m][i], alphas[m]);
      pooled.insert(pooled.end(), scaled.begin(), scaled.end());
    }
    out[i] = nms(pooled, nms_opt);
  }
  return out;
}

IMAEnsemble run_ima(const SyntheticDataset& train, Detector& detector, const IMAOptions& opt,
                    const EvalHook& hook) {
  if (opt.rounds < 1) throw std::invalid_argument("run_ima: at least one round required");
  if (!(opt.theta > 0.0 && opt.theta < 1.0))
    throw std::invalid_argument("run_ima: theta must lie in (0, 1)");

  IMAEnsemble ensemble;
  ensemble.num_classes = opt.num_classes;
  ensemble.theta = opt.theta;
  WeightState state = init_weights(train.object_count());

  for (int m = 1; m <= opt.rounds; ++m) {
    state.validate();
    ModelPtr model;
    ImageDetections train_dets;
    try {
      FitContext ctx{m, ensemble.members.empty() ? nullptr : ensemble.members.back().model.get()};
      model = detector.fit(train, state.weights, ctx);
      train_dets = model->predict(train);
    } catch (const BoostingError&) {
      throw;
    } catch (const std::exception& e) {
      throw BoostingError(m, e.what());
    }

    IterationRecord rec;
    rec.m = m;
    rec.weights = state;
    rec.indicators = detection_indicators(train, train_dets, opt.theta);
    rec.error = error_rate(state, rec.indicators);
    rec.alpha = model_weight(rec.error, opt.num_classes);
    if (!(rec.alpha > 0.0))
      rec.warning = "non-positive model weight " + std::to_string(rec.alpha) + " (error rate " +
                    std::to_string(rec.error) + ")";

    ensemble.members.push_back({model, rec.alpha});
    ensemble.iterations.push_back(rec);
    if (hook) hook(m, ensemble, ensemble.iterations.back());

    state = update_weights(state, rec.indicators, rec.alpha);
  }
  state.validate();
  ensemble.final_weights = state;
  return ensemble;
}

ImageDetections fuse(const IMAEnsemble& ensemble, const SyntheticDataset& dataset,
                     const NmsOptions& nms_opt, std::size_t upto) {
  if (ensemble.members.empty()) throw std::invalid_argument("fuse: empty ensemble");
  const std::size_t count = upto == 0 ? ensemble.size() : std::min(upto, ensemble.size());
  std::vector<ImageDetections> per_model;
  std::vector<double> alphas;
  for (std::size_t m = 0; m < count; ++m) {
    per_model.push_back(ensemble.members[m].model->predict(dataset));
    alphas.push_back(ensemble.members[m].alpha);
  }
  return fuse_predictions(per_model, alphas, nms_opt);
}

// ---------------------------------------------------------------------------
// Manifest

namespace {
constexpr const char* kManifestFormat = "imaboost-ensemble";

std::string model_file_name(const EnsembleMember& member, std::size_t m) {
  const std::string ext = member.model->kind() == "linear" ? ".txt" : ".json";
  return "model_" + std::to_string(m) + ext;
}
}  // namespace

std::string manifest_json(const IMAEnsemble& ensemble, std::span<const std::string> model_files) {
  using nlohmann::json;
  json j;
  j["format"] = kManifestFormat;
  j["version"] = kManifestVersion;
  j["rounds"] = ensemble.size();
  j["num_classes"] = ensemble.num_classes;
  j["theta"] = ensemble.theta;
  j["nms"] = {{"iou_threshold", ensemble.nms.iou_threshold},
              {"score_threshold", ensemble.nms.score_threshold}};
  json members = json::array();
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    const auto& rec = ensemble.iterations[k];
    json e;
    e["m"] = rec.m;
    e["model_file"] = model_files[k];
    e["kind"] = ensemble.members[k].model->kind();
    e["alpha"] = ensemble.members[k].alpha;
    e["error"] = rec.error;
    e["weights"] = rec.weights.weights;
    e["indicators"] = rec.indicators;
    e["single_score"] = rec.single_score ? json(*rec.single_score) : json(nullptr);
    e["ensemble_score"] = rec.ensemble_score ? json(*rec.ensemble_score) : json(nullptr);
    e["warning"] = rec.warning;
    members.push_back(std::move(e));
  }
  j["members"] = std::move(members);
  j["final_weights"] = ensemble.final_weights.weights;
  return j.dump(1) + "\n";
}

void save_ensemble(const IMAEnsemble& ensemble, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    files.push_back(model_file_name(ensemble.members[k], k + 1));
    ensemble.members[k].model->save(dir / files.back());
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest_json(ensemble, files);
}

IMAEnsemble load_ensemble(const std::filesystem::path& dir) {
  using nlohmann::json;
  const auto path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const json j = json::parse(std::string(std::istreambuf_iterator<char>(in), {}));
  if (j.at("format") != kManifestFormat) throw std::runtime_error(path.string() + ": not an ensemble manifest");
  const int version = j.at("version");
  if (version != kManifestVersion)
    throw std::runtime_error(path.string() + ": manifest version " + std::to_string(version) +
                             " is not supported (expected version " +
                             std::to_string(kManifestVersion) + ")");
  IMAEnsemble ens;
  ens.num_classes = j.at("num_classes");
  ens.theta = j.at("theta");
  ens.nms.iou_threshold = j.at("nms").at("iou_threshold");
  ens.nms.score_threshold = j.at("nms").at("score_threshold");
  for (const auto& e : j.at("members")) {
    IterationRecord rec;
    rec.m = e.at("m");
    rec.alpha = e.at("alpha");
    rec.error = e.at("error");
    rec.weights = {rec.m, e.at("weights").get<std::vector<double>>()};
    rec.indicators = e.at("indicators").get<std::vector<int>>();
    if (!e.at("single_score").is_null()) rec.single_score = e.at("single_score").get<double>();
    if (!e.at("ensemble_score").is_null()) rec.ensemble_score = e.at("ensemble_score").get<double>();
    rec.warning = e.at("warning");
    const auto model_path = dir / e.at("model_file").get<std::string>();
    if (!std::filesystem::exists(model_path))
      throw std::runtime_error("missing model file " + model_path.string());
    ens.members.push_back({load_model(model_path), rec.alpha});
    ens.iterations.push_back(std::move(rec));
  }
  if (ens.members.empty()) throw std::runtime_error(path.string() + ": ensemble has no members");
  if (j.at("rounds").get<std::size_t>() != ens.size())
    throw std::runtime_error(path.string() + ": member count does not match rounds");
  ens.final_weights = {static_cast<int>(ens.size()) + 1,
                       j.at("final_weights").get<std::vector<double>>()};
  return ens;
}

}  // namespace imaboost
