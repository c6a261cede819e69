#include "imaboost/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"
#include "imaboost/rng.hpp"

namespace imaboost {

namespace {

using nlohmann::json;

// A JSON object plus its dotted path; tracks which keys were read so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(field(key), "missing required field");
    return j_.at(key);
  }

  Section sub(const std::string& key) { return Section(raw(key), field(key)); }

  template <typename T>
  T req(const std::string& key) {
    const json& v = raw(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key), "has the wrong type");
    }
  }

  template <typename T>
  T opt(const std::string& key, T fallback) {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return req<T>(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("not valid JSON: ") + e.what());
  }
}

template <typename F>
void checked_field(const std::string& field, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

SceneConfig scene_from(Section s, const std::string& name) {
  SceneConfig c;
  c.image_count = s.req<std::size_t>("image_count");
  c.num_classes = s.req<int>("num_classes");
  c.min_objects = s.opt("min_objects", c.min_objects);
  c.max_objects = s.opt("max_objects", c.max_objects);
  c.min_size = s.opt("min_size", c.min_size);
  c.max_size = s.opt("max_size", c.max_size);
  c.feature_dim = s.opt("feature_dim", c.feature_dim);
  c.margin = s.opt("margin", c.margin);
  c.p_noise = s.opt("p_noise", c.p_noise);
  c.feature_noise = s.opt("feature_noise", c.feature_noise);
  c.offset_noise = s.opt("offset_noise", c.offset_noise);
  c.hard_signal = s.opt("hard_signal", c.hard_signal);
  c.clean_signal_min = s.opt("clean_signal_min", c.clean_signal_min);
  c.match_threshold = s.opt("match_threshold", c.match_threshold);
  c.seed = s.opt<std::uint64_t>("seed", c.seed);
  if (s.has("layers")) {
    const json& layers = s.raw("layers");
    if (!layers.is_array()) throw ConfigError(s.field("layers"), "expected an array");
    c.layers.clear();
    for (std::size_t k = 0; k < layers.size(); ++k) {
      Section l(layers[k], s.field("layers") + "[" + std::to_string(k) + "]");
      LayerSpec spec;
      spec.grid_w = l.req<int>("grid_w");
      spec.grid_h = l.req<int>("grid_h");
      spec.scale = l.req<double>("scale");
      spec.aspect_ratios = l.req<std::vector<double>>("aspect_ratios");
      if (l.has("extra_square_scale")) spec.extra_square_scale = l.req<double>("extra_square_scale");
      l.finish();
      c.layers.push_back(std::move(spec));
    }
  }
  s.finish();
  checked_field(name, [&] { c.validate(); });
  return c;
}

APMode parse_ap_mode(const std::string& field, const std::string& s) {
  if (s == "allpoint") return APMode::all_point;
  if (s == "voc11") return APMode::voc11;
  throw ConfigError(field, "must be 'allpoint' or 'voc11'");
}

}  // namespace

SceneConfig parse_scene_config(std::string_view json_text) {
  const json j = parse_json(json_text);
  Section root(j, "");
  if (root.has("scene")) {
    SceneConfig c = scene_from(root.sub("scene"), "scene");
    root.finish();
    return c;
  }
  return scene_from(root, "scene");
}

ExperimentConfig parse_experiment_config(std::string_view json_text,
                                         const std::filesystem::path& base_dir) {
  const json j = parse_json(json_text);
  Section root(j, "");
  ExperimentConfig cfg;
  cfg.source_text = std::string(json_text);
  cfg.seed = root.opt<std::uint64_t>("seed", cfg.seed);
  cfg.output_dir = root.opt<std::string>("output_dir", cfg.output_dir.string());

  const bool has_dataset = root.has("dataset");
  const bool has_scene = root.has("scene");
  if (has_dataset == has_scene)
    throw ConfigError(has_dataset ? "scene" : "dataset",
                      "exactly one of 'dataset' and 'scene' must be given");
  if (has_dataset) {
    Section d = root.sub("dataset");
    std::filesystem::path p = d.req<std::string>("path");
    cfg.dataset_path = p.is_absolute() ? p : base_dir / p;
    d.finish();
    if (!std::filesystem::exists(*cfg.dataset_path))
      throw ConfigError("dataset.path", "file " + cfg.dataset_path->string() + " does not exist");
  } else {
    cfg.scene = scene_from(root.sub("scene"), "scene");
  }
  cfg.train_fraction = root.opt("train_fraction", cfg.train_fraction);
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0))
    throw ConfigError("train_fraction", "must lie in (0, 1)");

  {
    Section det = root.sub("detector");
    const auto kind = det.req<std::string>("kind");
    if (kind == "linear")
      cfg.detector = DetectorKind::linear;
    else if (kind == "oracle")
      cfg.detector = DetectorKind::oracle;
    else
      throw ConfigError("detector.kind", "must be 'linear' or 'oracle'");

    if (det.has("linear")) {
      Section l = det.sub("linear");
      auto& o = cfg.linear;
      o.step_size = l.opt("step_size", o.step_size);
      o.epochs = l.opt("epochs", o.epochs);
      o.init_scale = l.opt("init_scale", o.init_scale);
      o.warm_start = l.opt("warm_start", o.warm_start);
      o.neg_pos_ratio = l.opt("neg_pos_ratio", o.neg_pos_ratio);
      const auto enc = l.opt<std::string>("encoding", "ssd");
      if (enc == "ssd")
        o.encoding = OffsetEncoding::ssd;
      else if (enc == "raw")
        o.encoding = OffsetEncoding::raw_difference;
      else
        throw ConfigError("detector.linear.encoding", "must be 'ssd' or 'raw'");
      l.finish();
      if (!(o.step_size > 0.0)) throw ConfigError("detector.linear.step_size", "must be positive");
      if (o.epochs < 0) throw ConfigError("detector.linear.epochs", "must be non-negative");
    }
    if (det.has("oracle")) {
      Section s = det.sub("oracle");
      auto& o = cfg.oracle;
      o.detect_probability = s.opt("detect_probability", o.detect_probability);
      o.hard_detect_probability = s.opt("hard_detect_probability", o.hard_detect_probability);
      o.weight_slope = s.opt("weight_slope", o.weight_slope);
      o.miss_schedule = s.opt("miss_schedule", o.miss_schedule);
      o.false_positives_per_image = s.opt("false_positives_per_image", o.false_positives_per_image);
      o.score_min = s.opt("score_min", o.score_min);
      o.score_max = s.opt("score_max", o.score_max);
      o.fp_score_min = s.opt("fp_score_min", o.fp_score_min);
      o.fp_score_max = s.opt("fp_score_max", o.fp_score_max);
      s.finish();
      checked_field("detector.oracle", [&] { o.validate(); });
    }
    det.finish();
  }

  {
    Section ima = root.sub("ima");
    cfg.rounds = ima.req<int>("rounds");
    cfg.theta = ima.opt("theta", cfg.theta);
    ima.finish();
    if (cfg.rounds < 1) throw ConfigError("ima.rounds", "must be at least 1");
    if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) throw ConfigError("ima.theta", "must lie in (0, 1)");
  }
  if (root.has("loss")) {
    Section l = root.sub("loss");
    cfg.linear.loss.alpha_cls = l.opt("alpha_cls", cfg.linear.loss.alpha_cls);
    cfg.linear.loss.alpha_reg = l.opt("alpha_reg", cfg.linear.loss.alpha_reg);
    l.finish();
    checked_field("loss", [&] { cfg.linear.loss.validate(); });
  }
  if (root.has("nms")) {
    Section n = root.sub("nms");
    cfg.nms.iou_threshold = n.opt("iou_threshold", cfg.nms.iou_threshold);
    cfg.nms.score_threshold = n.opt("score_threshold", cfg.nms.score_threshold);
    n.finish();
    if (!(cfg.nms.iou_threshold > 0.0 && cfg.nms.iou_threshold <= 1.0))
      throw ConfigError("nms.iou_threshold", "must lie in (0, 1]");
  }
  cfg.linear.nms = cfg.nms;
  if (root.has("eval")) {
    Section e = root.sub("eval");
    cfg.eval.iou_threshold = e.opt("iou_threshold", cfg.eval.iou_threshold);
    cfg.eval.mode = parse_ap_mode("eval.ap_mode", e.opt<std::string>("ap_mode", "allpoint"));
    cfg.eval.similarity_groups = e.opt("similarity_groups", cfg.eval.similarity_groups);
    e.finish();
    if (!(cfg.eval.iou_threshold > 0.0 && cfg.eval.iou_threshold < 1.0))
      throw ConfigError("eval.iou_threshold", "must lie in (0, 1)");
  }
  root.finish();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_experiment_config(text, path.parent_path());
}

std::uint64_t split_seed(const ExperimentConfig& cfg) { return sub_seed(cfg.seed, 2); }
std::uint64_t detector_seed(const ExperimentConfig& cfg) { return sub_seed(cfg.seed, 3); }

std::unique_ptr<Detector> make_detector(const ExperimentConfig& cfg) {
  if (cfg.detector == DetectorKind::oracle) {
    OracleDetectorSpec spec = cfg.oracle;
    spec.seed = detector_seed(cfg);
    return std::make_unique<OracleDetector>(spec);
  }
  LinearTrainOptions opt = cfg.linear;
  opt.seed = detector_seed(cfg);
  opt.nms = cfg.nms;
  return std::make_unique<LinearDetector>(opt);
}

double dataset_map(const ImageDetections& detections, const SyntheticDataset& dataset,
                   const EvalOptions& opt) {
  const auto curves = pr_points(detections, dataset.ground_truth(), dataset.num_classes(),
                                opt.iou_threshold);
  std::vector<ClassResult> classes;
  for (const auto& c : curves)
    classes.push_back({c.cls, c.num_gt, c.tp(), c.fp(), average_precision(c, opt.mode)});
  return mean_ap(classes);
}

BoostOutcome run_boost_experiment(const ExperimentConfig& cfg) {
  SyntheticDataset all;
  if (cfg.dataset_path) {
    all = load(*cfg.dataset_path);
  } else {
    all = generate(*cfg.scene);
  }
  auto [train, test] = split(all, cfg.train_fraction, split_seed(cfg));
  if (train.object_count() == 0) throw std::runtime_error("training split has no objects");

  auto detector = make_detector(cfg);
  IMAOptions opt{cfg.rounds, cfg.theta, all.num_classes()};

  // Per-model test predictions are cached so each cumulative fusion reuses them.
  std::vector<ImageDetections> test_preds;
  std::vector<double> alphas;
  const SyntheticDataset& test_ref = test;
  auto hook = [&](int m, const IMAEnsemble& so_far, IterationRecord& rec) {
    test_preds.push_back(so_far.members.back().model->predict(test_ref));
    alphas.push_back(so_far.members.back().alpha);
    rec.single_score = dataset_map(test_preds.back(), test_ref, cfg.eval);
    if (m > 1) rec.ensemble_score = dataset_map(fuse_predictions(test_preds, alphas, cfg.nms), test_ref, cfg.eval);
  };
  IMAEnsemble ensemble = run_ima(train, *detector, opt, hook);
  ensemble.nms = cfg.nms;
  return {std::move(train), std::move(test), std::move(ensemble)};
}

std::string iteration_table(const IMAEnsemble& ensemble) {
  std::ostringstream os;
  os << "m\terror_rate\talpha\tsingle_mAP(%)\tensemble_mAP(%)\n";
  char buf[64];
  for (const auto& rec : ensemble.iterations) {
    os << rec.m;
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f", rec.error, rec.alpha);
    os << buf;
    if (rec.single_score) {
      std::snprintf(buf, sizeof buf, "\t%.2f", 100.0 * *rec.single_score);
      os << buf;
    } else {
      os << "\t-";
    }
    if (rec.ensemble_score) {
      std::snprintf(buf, sizeof buf, "\t%.2f", 100.0 * *rec.ensemble_score);
      os << buf;
    } else {
      os << "\t-";
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace imaboost
