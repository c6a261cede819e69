#include "imaboost/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "imaboost/rng.hpp"

namespace imaboost {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

const char* encoding_name(OffsetEncoding e) {
  return e == OffsetEncoding::ssd ? "ssd" : "raw";
}

OffsetEncoding parse_encoding(const std::string& s) {
  if (s == "ssd") return OffsetEncoding::ssd;
  if (s == "raw") return OffsetEncoding::raw_difference;
  throw std::runtime_error("unknown offset encoding '" + s + "'");
}

void check_object_weights(const SyntheticDataset& dataset, std::span<const double> w) {
  if (w.size() != dataset.object_count())
    throw std::invalid_argument("object weight vector has " + std::to_string(w.size()) +
                                " entries for " + std::to_string(dataset.object_count()) +
                                " objects");
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("object weights must be finite and non-negative");
    sum += v;
  }
  if (!w.empty() && std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("object weights must sum to 1");
}

constexpr const char* kLinearHeader = "imaboost-linear-model";
constexpr int kLinearVersion = 1;
constexpr const char* kOracleKind = "imaboost-oracle-model";
constexpr int kOracleVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Linear detector

LinearDetectorParams init_params(int num_classes, std::size_t feature_dim, std::uint64_t seed,
                                 double init_scale) {
  LinearDetectorParams p(num_classes, feature_dim);
  Rng rng(seed);
  for (double& v : p.class_weights.values()) v = init_scale * rng.normal();
  return p;
}

TrainingBatch build_training_batch(const SyntheticDataset& dataset,
                                   std::span<const double> loss_weights, OffsetEncoding encoding,
                                   bool drop_zero_weight) {
  if (loss_weights.size() != dataset.object_count())
    throw std::invalid_argument("build_training_batch: one loss weight per object required");
  TrainingBatch batch;
  std::size_t counted = 0;
  const auto& anchors = dataset.anchors();
  for (std::size_t i = 0; i < dataset.image_count(); ++i) {
    const auto& img = dataset.images()[i];
    const auto& m = dataset.matches()[i];
    const std::size_t offset = dataset.object_offset(i);
    for (const auto& [a, o] : m.pos) {
      ++counted;
      const double w = loss_weights[offset + o];
      if (drop_zero_weight && w == 0.0) continue;
      batch.pos.push_back({dataset.feature(i, a), img.objects[o].cls,
                           encode_offsets(img.objects[o].box, anchors[a].box, encoding), w});
    }
    for (std::size_t a : m.neg) batch.neg.push_back(dataset.feature(i, a));
  }
  if (counted != batch.pos.size()) batch.num_pos_override = counted;
  return batch;
}

namespace {

TrainingBatch mine_negatives(const TrainingBatch& full, const LinearDetectorParams& model,
                             double ratio) {
  std::vector<std::size_t> ids(full.neg.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> losses(full.neg.size());
  for (std::size_t k = 0; k < full.neg.size(); ++k)
    losses[k] = -std::log(std::max(class_probabilities(model, full.neg[k])[kBackground],
                                   kProbabilityFloor));
  const auto keep = select_hard_negatives(ids, losses, full.num_pos(), ratio);
  TrainingBatch mined;
  mined.pos = full.pos;
  mined.num_pos_override = full.num_pos_override;
  for (std::size_t k : keep) mined.neg.push_back(full.neg[k]);
  return mined;
}

}  // namespace

LinearFitResult gradient_descent(const TrainingBatch& batch, const LinearTrainOptions& opt,
                                 LinearDetectorParams init) {
  opt.loss.validate();
  if (opt.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (!(opt.step_size > 0.0)) throw std::invalid_argument("step_size must be positive");

  LinearFitResult result{std::move(init), {}};
  auto& params = result.params;
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    const TrainingBatch mined =
        opt.neg_pos_ratio > 0.0 ? mine_negatives(batch, params, opt.neg_pos_ratio) : TrainingBatch{};
    const TrainingBatch& active = opt.neg_pos_ratio > 0.0 ? mined : batch;
    LossGradient g = loss_gradient(active, opt.loss, params);
    if (!std::isfinite(g.loss)) throw TrainingFailure("training loss became non-finite", epoch);
    result.loss_history.push_back(g.loss);
    LinearDetectorParams step = g.total();
    step *= -opt.step_size;
    params += step;
    if (!params.all_finite()) throw TrainingFailure("parameters became non-finite", epoch);
  }
  if (opt.epochs > 0) {
    const double final_loss = total_loss(forward(params, batch), opt.loss);
    if (!std::isfinite(final_loss))
      throw TrainingFailure("training loss became non-finite", opt.epochs);
    result.loss_history.push_back(final_loss);
  }
  return result;
}

LinearFitResult linear_fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
                           const LinearTrainOptions& opt, const LinearDetectorParams* init) {
  check_object_weights(dataset, object_weights);
  const std::size_t n = object_weights.size();
  std::vector<double> loss_weights(n);
  for (std::size_t j = 0; j < n; ++j)
    loss_weights[j] = object_weights[j] == 0.0 ? 0.0 : map_weight(object_weights[j], n);

  LinearTrainOptions local = opt;
  local.loss.num_classes = dataset.num_classes();
  const TrainingBatch batch = build_training_batch(dataset, loss_weights, opt.encoding);
  LinearDetectorParams start =
      init ? *init : init_params(dataset.num_classes(), dataset.feature_dim(), opt.seed, opt.init_scale);
  if (start.num_classes() != dataset.num_classes() || start.feature_dim() != dataset.feature_dim())
    throw std::invalid_argument("linear_fit: initial parameters do not match the dataset");
  return gradient_descent(batch, local, std::move(start));
}

ImageDetections linear_predict(const LinearDetectorParams& model, const SyntheticDataset& dataset,
                               OffsetEncoding encoding, const NmsOptions& nms_opt) {
  if (model.feature_dim() != dataset.feature_dim())
    throw std::invalid_argument("linear_predict: feature dimension mismatch");
  ImageDetections out(dataset.image_count());
  const auto& anchors = dataset.anchors();
  for (std::size_t i = 0; i < dataset.image_count(); ++i) {
    std::vector<Detection> raw;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const auto x = dataset.feature(i, a);
      const auto p = class_probabilities(model, x);
      const auto best = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      if (best == kBackground) continue;
      double loc[4];
      predict_offsets(model, x, loc);
      const BBox decoded = decode_offsets({loc[0], loc[1], loc[2], loc[3]}, anchors[a].box, encoding);
      BBox clipped;
      if (!clip_to_image(decoded, clipped)) continue;
      raw.push_back({best, p[static_cast<std::size_t>(best)], clipped});
    }
    out[i] = nms(raw, nms_opt);
  }
  return out;
}

ImageDetections LinearModel::predict(const SyntheticDataset& dataset) const {
  return linear_predict(params_, dataset, encoding_, nms_);
}

std::string LinearModel::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << kLinearHeader << ' ' << kLinearVersion << '\n';
  os << "classes " << params_.num_classes() << '\n';
  os << "feature_dim " << params_.feature_dim() << '\n';
  os << "encoding " << encoding_name(encoding_) << '\n';
  os << "nms " << nms_.iou_threshold << ' ' << nms_.score_threshold << '\n';
  auto dump = [&](const char* name, const Matrix& m) {
    os << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) os << (c ? " " : "") << m(r, c);
      os << '\n';
    }
  };
  dump("class_weights", params_.class_weights);
  dump("loc_weights", params_.loc_weights);
  os << "loss_history " << loss_history_.size() << '\n';
  for (std::size_t k = 0; k < loss_history_.size(); ++k) os << (k ? " " : "") << loss_history_[k];
  os << '\n';
  return os.str();
}

LinearModel LinearModel::from_text(const std::string& text) {
  std::istringstream is(text);
  auto expect = [&](const std::string& key) {
    std::string got;
    if (!(is >> got) || got != key)
      throw std::runtime_error("linear model: expected '" + key + "', found '" + got + "'");
  };
  expect(kLinearHeader);
  int version = 0;
  is >> version;
  if (version != kLinearVersion)
    throw std::runtime_error("linear model: version " + std::to_string(version) +
                             " is not supported (expected version " +
                             std::to_string(kLinearVersion) + ")");
  int classes = 0;
  std::size_t dim = 0;
  std::string enc;
  NmsOptions nms_opt;
  expect("classes");
  is >> classes;
  expect("feature_dim");
  is >> dim;
  expect("encoding");
  is >> enc;
  expect("nms");
  is >> nms_opt.iou_threshold >> nms_opt.score_threshold;
  if (!is || classes < 1 || dim == 0) throw std::runtime_error("linear model: malformed header");

  LinearDetectorParams params(classes, dim);
  auto read_matrix = [&](const char* name, Matrix& m) {
    expect(name);
    std::size_t rows = 0, cols = 0;
    is >> rows >> cols;
    if (rows != m.rows() || cols != m.cols())
      throw std::runtime_error(std::string("linear model: ") + name + " has the wrong shape");
    for (double& v : m.values())
      if (!(is >> v)) throw std::runtime_error(std::string("linear model: truncated ") + name);
  };
  read_matrix("class_weights", params.class_weights);
  read_matrix("loc_weights", params.loc_weights);
  expect("loss_history");
  std::size_t n = 0;
  is >> n;
  std::vector<double> history(n);
  for (double& v : history)
    if (!(is >> v)) throw std::runtime_error("linear model: truncated loss history");
  return LinearModel(std::move(params), parse_encoding(enc), nms_opt, std::move(history));
}

void LinearModel::save(const std::filesystem::path& path) const { write_file(path, to_text()); }

ModelPtr LinearDetector::fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
                             const FitContext& ctx) {
  const LinearDetectorParams* init = nullptr;
  if (opt_.warm_start && ctx.previous) {
    if (const auto* prev = dynamic_cast<const LinearModel*>(ctx.previous)) init = &prev->params();
  }
  LinearTrainOptions opt = opt_;
  // Fresh initialization draws a distinct stream per iteration.
  opt.seed = sub_seed(opt_.seed, static_cast<std::uint64_t>(ctx.iteration));
  auto result = linear_fit(dataset, object_weights, opt, init);
  return std::make_shared<LinearModel>(std::move(result.params), opt_.encoding, opt_.nms,
                                       std::move(result.loss_history));
}

// ---------------------------------------------------------------------------
// Oracle detector

void OracleDetectorSpec::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(detect_probability)) throw std::invalid_argument("detect_probability must lie in [0, 1]");
  if (hard_detect_probability >= 0.0 && !prob(hard_detect_probability))
    throw std::invalid_argument("hard_detect_probability must lie in [0, 1]");
  if (!(false_positives_per_image >= 0.0))
    throw std::invalid_argument("false_positives_per_image must be non-negative");
  if (!(score_min <= score_max) || !(fp_score_min <= fp_score_max))
    throw std::invalid_argument("score ranges must be ordered");
}

OracleModel::OracleModel(OracleDetectorSpec spec, int iteration, std::uint64_t train_fingerprint,
                         std::vector<double> weights)
    : spec_(std::move(spec)),
      iteration_(iteration),
      train_fingerprint_(train_fingerprint),
      weights_(std::move(weights)) {
  spec_.validate();
}

double OracleModel::detect_probability(const SyntheticDataset& dataset, std::size_t j,
                                       bool hard) const {
  const double base = hard && spec_.hard_detect_probability >= 0.0 ? spec_.hard_detect_probability
                                                                   : spec_.detect_probability;
  double scaled_weight = 1.0;
  if (dataset.fingerprint() == train_fingerprint_ && j < weights_.size())
    scaled_weight = static_cast<double>(weights_.size()) * weights_[j];
  return std::clamp(base + spec_.weight_slope * (scaled_weight - 1.0), 0.0, 1.0);
}

bool OracleModel::detects(const SyntheticDataset& dataset, std::size_t j, bool hard) const {
  if (!spec_.miss_schedule.empty()) {
    const auto slot = std::min<std::size_t>(static_cast<std::size_t>(std::max(iteration_, 1)) - 1,
                                            spec_.miss_schedule.size() - 1);
    const auto& miss = spec_.miss_schedule[slot];
    return std::find(miss.begin(), miss.end(), j) == miss.end();
  }
  Rng rng(sub_seed(sub_seed(spec_.seed, static_cast<std::uint64_t>(iteration_)),
                   sub_seed(dataset.fingerprint(), j)));
  return rng.bernoulli(detect_probability(dataset, j, hard));
}

ImageDetections OracleModel::predict(const SyntheticDataset& dataset) const {
  ImageDetections out(dataset.image_count());
  const std::uint64_t stream = sub_seed(spec_.seed, static_cast<std::uint64_t>(iteration_));
  for (std::size_t i = 0; i < dataset.image_count(); ++i) {
    const auto& img = dataset.images()[i];
    Rng rng(sub_seed(stream, sub_seed(dataset.fingerprint(), ~std::uint64_t{0} - i)));
    for (std::size_t k = 0; k < img.objects.size(); ++k) {
      const auto& obj = img.objects[k];
      const double score = rng.uniform(spec_.score_min, spec_.score_max);
      if (!detects(dataset, dataset.object_offset(i) + k, obj.hard)) continue;
      out[i].push_back({obj.cls, score,
                        {obj.box.cx, obj.box.cy, obj.box.w * kOracleShrink,
                         obj.box.h * kOracleShrink}});
    }

    const double whole = std::floor(spec_.false_positives_per_image);
    const int n_fp =
        static_cast<int>(whole) + (rng.bernoulli(spec_.false_positives_per_image - whole) ? 1 : 0);
    for (int f = 0; f < n_fp; ++f) {
      const int cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(dataset.num_classes())));
      const double score = rng.uniform(spec_.fp_score_min, spec_.fp_score_max);
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double w = rng.uniform(0.05, 0.15);
        const double h = rng.uniform(0.05, 0.15);
        const BBox box{rng.uniform(0.5 * w, 1.0 - 0.5 * w), rng.uniform(0.5 * h, 1.0 - 0.5 * h), w, h};
        const bool on_background = std::none_of(img.objects.begin(), img.objects.end(),
                                                [&](const auto& o) { return iou(o.box, box) > 0.0; });
        if (on_background) {
          out[i].push_back({cls, score, box});
          break;
        }
      }
    }
  }
  return out;
}

std::string OracleModel::to_json() const {
  nlohmann::json j;
  j["kind"] = kOracleKind;
  j["version"] = kOracleVersion;
  j["iteration"] = iteration_;
  j["train_fingerprint"] = train_fingerprint_;
  j["weights"] = weights_;
  j["spec"] = {{"detect_probability", spec_.detect_probability},
               {"hard_detect_probability", spec_.hard_detect_probability},
               {"weight_slope", spec_.weight_slope},
               {"miss_schedule", spec_.miss_schedule},
               {"false_positives_per_image", spec_.false_positives_per_image},
               {"score_min", spec_.score_min},
               {"score_max", spec_.score_max},
               {"fp_score_min", spec_.fp_score_min},
               {"fp_score_max", spec_.fp_score_max},
               {"seed", spec_.seed}};
  return j.dump(1) + "\n";
}

OracleModel OracleModel::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("kind") != kOracleKind) throw std::runtime_error("not an oracle model file");
  if (j.at("version") != kOracleVersion)
    throw std::runtime_error("oracle model: version " + j.at("version").dump() +
                             " is not supported (expected version " +
                             std::to_string(kOracleVersion) + ")");
  const auto& s = j.at("spec");
  OracleDetectorSpec spec;
  spec.detect_probability = s.at("detect_probability");
  spec.hard_detect_probability = s.at("hard_detect_probability");
  spec.weight_slope = s.at("weight_slope");
  spec.miss_schedule = s.at("miss_schedule").get<std::vector<std::vector<std::size_t>>>();
  spec.false_positives_per_image = s.at("false_positives_per_image");
  spec.score_min = s.at("score_min");
  spec.score_max = s.at("score_max");
  spec.fp_score_min = s.at("fp_score_min");
  spec.fp_score_max = s.at("fp_score_max");
  spec.seed = s.at("seed");
  return OracleModel(std::move(spec), j.at("iteration"), j.at("train_fingerprint"),
                     j.at("weights").get<std::vector<double>>());
}

void OracleModel::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

ImageDetections oracle_predict(const OracleDetectorSpec& spec, const SyntheticDataset& dataset,
                               std::span<const double> object_weights, int iteration) {
  return OracleModel(spec, iteration, dataset.fingerprint(),
                     {object_weights.begin(), object_weights.end()})
      .predict(dataset);
}

ModelPtr OracleDetector::fit(const SyntheticDataset& dataset, std::span<const double> object_weights,
                             const FitContext& ctx) {
  check_object_weights(dataset, object_weights);
  return std::make_shared<OracleModel>(spec_, ctx.iteration, dataset.fingerprint(),
                                       std::vector<double>(object_weights.begin(), object_weights.end()));
}

// ---------------------------------------------------------------------------

ModelPtr load_model(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  if (text.rfind(kLinearHeader, 0) == 0)
    return std::make_shared<LinearModel>(LinearModel::from_text(text));
  if (!text.empty() && text.front() == '{')
    return std::make_shared<OracleModel>(OracleModel::from_json(text));
  throw std::runtime_error(path.string() + ": unrecognized model file");
}

}  // namespace imaboost
