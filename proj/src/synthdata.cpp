#include "imaboost/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "imaboost/rng.hpp"

namespace imaboost {

static_assert(std::endian::native == std::endian::little,
              "dataset files are written in host byte order, assumed little-endian");

namespace {

constexpr std::size_t kFeatureHeader = 5;  // bias + 4 offset channels
constexpr char kMagic[8] = {'I', 'M', 'B', 'D', 'S', 'E', 'T', '\0'};
constexpr std::string_view kRngTag = "mt19937_64/splitmix64-subseed/boxmuller-v1";
constexpr std::uint64_t kPrototypeStream = ~std::uint64_t{0};

double best_concentric_iou(double side, std::span<const Anchor> anchors) {
  double best = 0.0;
  for (const auto& a : anchors) {
    const double inter = std::min(side, a.box.w) * std::min(side, a.box.h);
    best = std::max(best, inter / (side * side + a.box.area() - inter));
  }
  return best;
}

std::vector<std::vector<double>> make_prototypes(const SceneConfig& cfg) {
  const std::size_t dims = cfg.feature_dim - kFeatureHeader;
  Rng rng(sub_seed(cfg.seed, kPrototypeStream));
  std::vector<std::vector<double>> protos;
  for (int c = 0; c <= cfg.num_classes; ++c) {
    std::vector<double> v(dims);
    for (double& x : v) x = rng.normal();
    // Gram-Schmidt against earlier prototypes.
    for (const auto& p : protos) {
      double dp = 0.0, pp = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        dp += v[k] * p[k];
        pp += p[k] * p[k];
      }
      for (std::size_t k = 0; k < dims; ++k) v[k] -= dp / pp * p[k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x *= cfg.margin / norm;
    protos.push_back(std::move(v));
  }
  return protos;
}

SceneImage generate_image(const SceneConfig& cfg, std::uint64_t index,
                          std::span<const Anchor> anchors,
                          const std::vector<std::vector<double>>& protos) {
  Rng rng(sub_seed(cfg.seed, index));
  SceneImage img;
  img.image_id = index;

  const auto span_objects = static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1);
  const int count = cfg.min_objects + static_cast<int>(rng.below(span_objects));
  std::vector<double> strength;
  const double log_lo = std::log(cfg.min_size);
  const double log_hi = std::log(cfg.max_size);
  for (int k = 0; k < count; ++k) {
    GroundTruthObject obj;
    obj.cls = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
    const double side = std::exp(rng.uniform(log_lo, log_hi));
    const double aspect = std::exp(rng.uniform(-0.25, 0.25));
    const double w = std::clamp(side * aspect, cfg.min_size, cfg.max_size);
    const double h = std::clamp(side / aspect, cfg.min_size, cfg.max_size);
    const double cx = rng.uniform(0.5 * w, 1.0 - 0.5 * w);
    const double cy = rng.uniform(0.5 * h, 1.0 - 0.5 * h);
    obj.box = {cx, cy, w, h};
    obj.hard = rng.bernoulli(cfg.p_noise);
    const double clean = rng.uniform(cfg.clean_signal_min, 1.0);
    strength.push_back(obj.hard ? cfg.hard_signal : clean);
    img.objects.push_back(obj);
  }

  const MatchAssignment m =
      match(anchors, img.objects, {.threshold = cfg.match_threshold, .best_match_guarantee = true});
  std::vector<std::size_t> owner(anchors.size(), img.objects.size());
  for (const auto& [a, o] : m.pos) owner[a] = o;

  const std::size_t d = cfg.feature_dim;
  const auto& bg = protos[kBackground];
  img.features.assign(anchors.size() * d, 0.0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double* x = img.features.data() + a * d;
    x[0] = 1.0;
    const bool positive = owner[a] < img.objects.size();
    OffsetVector target;
    if (positive) target = encode_offsets(img.objects[owner[a]].box, anchors[a].box);
    for (int l = 0; l < 4; ++l) x[1 + l] = target[l] + cfg.offset_noise * rng.normal();
    for (std::size_t k = kFeatureHeader; k < d; ++k) {
      const std::size_t p = k - kFeatureHeader;
      double mean = bg[p];
      if (positive) {
        const auto& obj = img.objects[owner[a]];
        const double s = strength[owner[a]];
        mean = s * protos[static_cast<std::size_t>(obj.cls)][p] + (1.0 - s) * bg[p];
      }
      x[k] = mean + cfg.feature_noise * rng.normal();
    }
  }
  return img;
}

// Byte-level writer/reader for the dataset container.
class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view s) { out_.append(s); }
  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view get_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    return std::string(get_bytes(n, what));
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw DatasetParseError(what, pos_); }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(std::string("unexpected end of file reading ") + what);
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_config(Writer& w, const SceneConfig& c) {
  w.put<std::uint64_t>(c.image_count);
  w.put<std::int32_t>(c.num_classes);
  w.put<std::int32_t>(c.min_objects);
  w.put<std::int32_t>(c.max_objects);
  w.put<double>(c.min_size);
  w.put<double>(c.max_size);
  w.put<std::uint64_t>(c.feature_dim);
  w.put<double>(c.margin);
  w.put<double>(c.p_noise);
  w.put<double>(c.feature_noise);
  w.put<double>(c.offset_noise);
  w.put<double>(c.hard_signal);
  w.put<double>(c.clean_signal_min);
  w.put<double>(c.match_threshold);
  w.put<std::uint64_t>(c.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.layers.size()));
  for (const auto& l : c.layers) {
    w.put<std::int32_t>(l.grid_w);
    w.put<std::int32_t>(l.grid_h);
    w.put<double>(l.scale);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(l.aspect_ratios.size()));
    for (double r : l.aspect_ratios) w.put<double>(r);
    w.put<std::uint8_t>(l.extra_square_scale ? 1 : 0);
    w.put<double>(l.extra_square_scale.value_or(0.0));
  }
}

SceneConfig get_config(Reader& r) {
  SceneConfig c;
  c.image_count = r.get<std::uint64_t>("image count");
  c.num_classes = r.get<std::int32_t>("class count");
  c.min_objects = r.get<std::int32_t>("min objects");
  c.max_objects = r.get<std::int32_t>("max objects");
  c.min_size = r.get<double>("min size");
  c.max_size = r.get<double>("max size");
  c.feature_dim = r.get<std::uint64_t>("feature dim");
  c.margin = r.get<double>("margin");
  c.p_noise = r.get<double>("noise fraction");
  c.feature_noise = r.get<double>("feature noise");
  c.offset_noise = r.get<double>("offset noise");
  c.hard_signal = r.get<double>("hard signal");
  c.clean_signal_min = r.get<double>("clean signal");
  c.match_threshold = r.get<double>("match threshold");
  c.seed = r.get<std::uint64_t>("seed");
  const auto layers = r.get<std::uint32_t>("layer count");
  if (layers > 64) r.fail("implausible layer count");
  c.layers.clear();
  for (std::uint32_t k = 0; k < layers; ++k) {
    LayerSpec l;
    l.grid_w = r.get<std::int32_t>("grid width");
    l.grid_h = r.get<std::int32_t>("grid height");
    l.scale = r.get<double>("scale");
    const auto nr = r.get<std::uint32_t>("aspect ratio count");
    if (nr > 64) r.fail("implausible aspect ratio count");
    for (std::uint32_t q = 0; q < nr; ++q) l.aspect_ratios.push_back(r.get<double>("aspect ratio"));
    const auto has_extra = r.get<std::uint8_t>("extra box flag");
    const double extra = r.get<double>("extra box scale");
    if (has_extra) l.extra_square_scale = extra;
    c.layers.push_back(std::move(l));
  }
  return c;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t k = 0; k < n; ++k) {
    h ^= p[k];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

void SceneConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  if (min_objects < 0 || max_objects < min_objects)
    throw std::invalid_argument("objects per image range is empty");
  if (!(min_size > 0.0) || !(max_size < 0.5) || min_size > max_size)
    throw std::invalid_argument("object size range must lie within (0, 0.5)");
  if (feature_dim < kFeatureHeader + static_cast<std::size_t>(num_classes) + 1)
    throw std::invalid_argument("feature_dim must be at least num_classes + 6");
  if (!(p_noise >= 0.0 && p_noise <= 1.0)) throw std::invalid_argument("p_noise must lie in [0, 1]");
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  if (!(feature_noise >= 0.0) || !(offset_noise >= 0.0))
    throw std::invalid_argument("noise magnitudes must be non-negative");
  if (!(hard_signal >= 0.0 && hard_signal <= 1.0))
    throw std::invalid_argument("hard_signal must lie in [0, 1]");
  if (!(clean_signal_min >= 0.0 && clean_signal_min <= 1.0))
    throw std::invalid_argument("clean_signal_min must lie in [0, 1]");
  if (!(match_threshold > 0.0 && match_threshold < 1.0))
    throw std::invalid_argument("match_threshold must lie in (0, 1)");
  if (layers.empty()) throw std::invalid_argument("anchor layout has no layers");

  const auto anchors = generate_default_boxes(layers);
  for (double side : {min_size, max_size}) {
    if (best_concentric_iou(side, anchors) < match_threshold)
      throw std::invalid_argument("object size " + std::to_string(side) +
                                  " cannot fit the anchor grid at the match threshold");
  }
}

SyntheticDataset::SyntheticDataset(SceneConfig config, std::vector<SceneImage> images)
    : config_(std::move(config)), images_(std::move(images)) {
  anchors_ = generate_default_boxes(config_.layers);
  const std::size_t d = config_.feature_dim;
  fingerprint_ = kFnvOffset;
  for (const auto& img : images_) {
    if (img.features.size() != anchors_.size() * d)
      throw std::invalid_argument("image feature matrix does not match the anchor layout");
    object_offsets_.push_back(total_objects_);
    total_objects_ += img.objects.size();
    matches_.push_back(match(anchors_, img.objects,
                             {.threshold = config_.match_threshold, .best_match_guarantee = true}));
    fnv(fingerprint_, &img.image_id, sizeof img.image_id);
    for (const auto& o : img.objects) {
      fnv(fingerprint_, &o.cls, sizeof o.cls);
      fnv(fingerprint_, &o.box, sizeof o.box);
    }
    fnv(fingerprint_, img.features.data(), img.features.size() * sizeof(double));
  }
}

std::span<const double> SyntheticDataset::feature(std::size_t image, std::size_t anchor) const {
  const std::size_t d = config_.feature_dim;
  return {images_[image].features.data() + anchor * d, d};
}

std::vector<GroundTruthObject> SyntheticDataset::all_objects() const {
  std::vector<GroundTruthObject> out;
  out.reserve(total_objects_);
  for (const auto& img : images_) out.insert(out.end(), img.objects.begin(), img.objects.end());
  return out;
}

std::vector<std::vector<GroundTruthObject>> SyntheticDataset::ground_truth() const {
  std::vector<std::vector<GroundTruthObject>> out;
  out.reserve(images_.size());
  for (const auto& img : images_) out.push_back(img.objects);
  return out;
}

SyntheticDataset generate(const SceneConfig& config) {
  config.validate();
  const auto anchors = generate_default_boxes(config.layers);
  const auto protos = make_prototypes(config);
  std::vector<SceneImage> images;
  images.reserve(config.image_count);
  for (std::uint64_t i = 0; i < config.image_count; ++i)
    images.push_back(generate_image(config, i, anchors, protos));
  return SyntheticDataset(config, std::move(images));
}

std::pair<SyntheticDataset, SyntheticDataset> split(const SyntheticDataset& dataset,
                                                    double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("split: train_fraction must lie in (0, 1)");
  const std::size_t n = dataset.image_count();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t k = n; k > 1; --k) std::swap(order[k - 1], order[rng.below(k)]);

  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<SceneImage> imgs;
    imgs.reserve(idx.size());
    for (std::size_t i : idx) imgs.push_back(dataset.images()[i]);
    return SyntheticDataset(dataset.config(), std::move(imgs));
  };
  return {pick(train_idx), pick(test_idx)};
}

std::string serialize(const SyntheticDataset& dataset) {
  Writer w;
  w.put_bytes({kMagic, sizeof kMagic});
  w.put<std::uint32_t>(kDatasetFormatVersion);
  w.put_string(kRngTag);
  put_config(w, dataset.config());
  w.put<std::uint64_t>(dataset.image_count());
  for (const auto& img : dataset.images()) {
    w.put<std::uint64_t>(img.image_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(img.objects.size()));
    for (const auto& o : img.objects) {
      w.put<std::int32_t>(o.cls);
      w.put<double>(o.box.cx);
      w.put<double>(o.box.cy);
      w.put<double>(o.box.w);
      w.put<double>(o.box.h);
      w.put<std::uint8_t>(o.hard ? 1 : 0);
    }
    w.put<std::uint64_t>(img.features.size());
    w.put_bytes({reinterpret_cast<const char*>(img.features.data()),
                 img.features.size() * sizeof(double)});
  }
  return w.take();
}

SyntheticDataset deserialize(std::string_view bytes) {
  Reader r(bytes);
  if (r.get_bytes(sizeof kMagic, "magic") != std::string_view(kMagic, sizeof kMagic))
    throw DatasetParseError("not a dataset file (bad magic)", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kDatasetFormatVersion) throw DatasetVersionError(version, kDatasetFormatVersion);
  const std::size_t tag_at = r.pos();
  if (r.get_string("generator tag") != kRngTag)
    throw DatasetParseError("unknown random generator tag", tag_at);

  const std::size_t config_at = r.pos();
  SceneConfig config = get_config(r);
  std::vector<Anchor> anchors;
  try {
    anchors = generate_default_boxes(config.layers);
  } catch (const std::invalid_argument& e) {
    throw DatasetParseError(std::string("invalid anchor layout: ") + e.what(), config_at);
  }
  const std::size_t expected_features = anchors.size() * config.feature_dim;

  const auto n_images = r.get<std::uint64_t>("image count");
  std::vector<SceneImage> images;
  for (std::uint64_t i = 0; i < n_images; ++i) {
    SceneImage img;
    img.image_id = r.get<std::uint64_t>("image id");
    const auto n_obj = r.get<std::uint32_t>("object count");
    if (static_cast<std::size_t>(n_obj) * 37 > r.remaining()) r.fail("object count exceeds file size");
    for (std::uint32_t k = 0; k < n_obj; ++k) {
      GroundTruthObject o;
      o.cls = r.get<std::int32_t>("object class");
      o.box.cx = r.get<double>("object box");
      o.box.cy = r.get<double>("object box");
      o.box.w = r.get<double>("object box");
      o.box.h = r.get<double>("object box");
      o.hard = r.get<std::uint8_t>("object flag") != 0;
      if (o.cls < 1 || o.cls > config.num_classes) r.fail("object class out of range");
      if (!o.box.is_valid()) r.fail("invalid object box");
      img.objects.push_back(o);
    }
    const auto n_feat = r.get<std::uint64_t>("feature count");
    if (n_feat != expected_features) r.fail("feature count does not match the anchor layout");
    const auto raw = r.get_bytes(n_feat * sizeof(double), "features");
    img.features.resize(n_feat);
    std::memcpy(img.features.data(), raw.data(), raw.size());
    images.push_back(std::move(img));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last image");
  return SyntheticDataset(std::move(config), std::move(images));
}

void save(const SyntheticDataset& dataset, const std::filesystem::path& path) {
  const std::string bytes = serialize(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

SyntheticDataset load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string ground_truth_text(const SyntheticDataset& dataset) {
  std::ostringstream os;
  os.precision(17);
  os << "# image_id class cx cy w h hard\n";
  for (const auto& img : dataset.images())
    for (const auto& o : img.objects)
      os << img.image_id << ' ' << o.cls << ' ' << o.box.cx << ' ' << o.box.cy << ' ' << o.box.w
         << ' ' << o.box.h << ' ' << (o.hard ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace imaboost
