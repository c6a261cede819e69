#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "imaboost/experiment.hpp"

namespace py = pybind11;
using namespace imaboost;

namespace {

std::string box_repr(const BBox& b) {
  return "BBox(cx=" + std::to_string(b.cx) + ", cy=" + std::to_string(b.cy) +
         ", w=" + std::to_string(b.w) + ", h=" + std::to_string(b.h) + ")";
}

void bind_geometry(py::module_& m) {
  py::class_<BBox>(m, "BBox")
      .def(py::init<>())
      .def(py::init([](double cx, double cy, double w, double h) { return BBox{cx, cy, w, h}; }),
           py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_readwrite("cx", &BBox::cx)
      .def_readwrite("cy", &BBox::cy)
      .def_readwrite("w", &BBox::w)
      .def_readwrite("h", &BBox::h)
      .def_property_readonly("area", &BBox::area)
      .def("is_valid", &BBox::is_valid)
      .def_static("from_corners", &BBox::from_corners)
      .def(py::self == py::self)
      .def("__repr__", &box_repr);

  py::class_<Detection>(m, "Detection")
      .def(py::init([](int cls, double score, BBox box) { return Detection{cls, score, box}; }),
           py::arg("cls"), py::arg("score"), py::arg("box"))
      .def_readwrite("cls", &Detection::cls)
      .def_readwrite("score", &Detection::score)
      .def_readwrite("box", &Detection::box)
      .def(py::self == py::self)
      .def("__repr__", [](const Detection& d) {
        return "Detection(cls=" + std::to_string(d.cls) + ", score=" + std::to_string(d.score) +
               ", box=" + box_repr(d.box) + ")";
      });

  py::class_<GroundTruthObject>(m, "GroundTruthObject")
      .def(py::init([](int cls, BBox box, bool hard) { return GroundTruthObject{cls, box, hard}; }),
           py::arg("cls"), py::arg("box"), py::arg("hard") = false)
      .def_readwrite("cls", &GroundTruthObject::cls)
      .def_readwrite("box", &GroundTruthObject::box)
      .def_readwrite("hard", &GroundTruthObject::hard);

  py::class_<NmsOptions>(m, "NmsOptions")
      .def(py::init<>())
      .def_readwrite("iou_threshold", &NmsOptions::iou_threshold)
      .def_readwrite("score_threshold", &NmsOptions::score_threshold);

  m.def("iou", &iou, py::arg("a"), py::arg("b"));
  m.def("nms",
        [](const std::vector<Detection>& dets, double iou_threshold, double score_threshold) {
          return nms(dets, iou_threshold, score_threshold);
        },
        py::arg("detections"), py::arg("iou_threshold") = 0.45, py::arg("score_threshold") = 0.01);
}

void bind_data(py::module_& m) {
  py::class_<SceneConfig>(m, "SceneConfig")
      .def(py::init<>())
      .def_readwrite("image_count", &SceneConfig::image_count)
      .def_readwrite("num_classes", &SceneConfig::num_classes)
      .def_readwrite("min_objects", &SceneConfig::min_objects)
      .def_readwrite("max_objects", &SceneConfig::max_objects)
      .def_readwrite("feature_dim", &SceneConfig::feature_dim)
      .def_readwrite("margin", &SceneConfig::margin)
      .def_readwrite("p_noise", &SceneConfig::p_noise)
      .def_readwrite("feature_noise", &SceneConfig::feature_noise)
      .def_readwrite("hard_signal", &SceneConfig::hard_signal)
      .def_readwrite("clean_signal_min", &SceneConfig::clean_signal_min)
      .def_readwrite("seed", &SceneConfig::seed)
      .def("validate", &SceneConfig::validate);

  py::class_<SyntheticDataset>(m, "SyntheticDataset")
      .def_property_readonly("image_count", &SyntheticDataset::image_count)
      .def_property_readonly("object_count", &SyntheticDataset::object_count)
      .def_property_readonly("anchor_count", &SyntheticDataset::anchor_count)
      .def_property_readonly("num_classes", &SyntheticDataset::num_classes)
      .def_property_readonly("feature_dim", &SyntheticDataset::feature_dim)
      .def_property_readonly("fingerprint", &SyntheticDataset::fingerprint)
      .def_property_readonly("config", &SyntheticDataset::config)
      .def("objects", &SyntheticDataset::all_objects)
      .def("ground_truth", &SyntheticDataset::ground_truth)
      .def(py::self == py::self);

  m.def("generate", &generate, py::arg("config"));
  m.def("split", &split, py::arg("dataset"), py::arg("train_fraction"), py::arg("seed"));
  m.def("save", &save, py::arg("dataset"), py::arg("path"));
  m.def("load", &load, py::arg("path"));
  m.def("ground_truth_text", &ground_truth_text, py::arg("dataset"));
}

void bind_boosting(py::module_& m) {
  py::class_<WeightState>(m, "WeightState")
      .def(py::init([](int iteration, std::vector<double> w) { return WeightState{iteration, std::move(w)}; }),
           py::arg("iteration"), py::arg("weights"))
      .def_readwrite("iteration", &WeightState::iteration)
      .def_readwrite("weights", &WeightState::weights)
      .def("validate", &WeightState::validate);

  m.def("init_weights", &init_weights, py::arg("num_objects"));
  m.def("error_rate",
        [](const WeightState& s, const std::vector<int>& ind) { return error_rate(s, ind); },
        py::arg("state"), py::arg("indicators"));
  m.def("model_weight", &model_weight, py::arg("error"), py::arg("num_classes"));
  m.def("update_weights",
        [](const WeightState& s, const std::vector<int>& ind, double alpha) {
          return update_weights(s, ind, alpha);
        },
        py::arg("state"), py::arg("indicators"), py::arg("alpha"));
  m.def("detection_indicators", &detection_indicators, py::arg("dataset"), py::arg("detections"),
        py::arg("theta") = 0.5);
  m.def("fuse_predictions",
        [](const std::vector<ImageDetections>& per_model, const std::vector<double>& alphas,
           const NmsOptions& opt) { return fuse_predictions(per_model, alphas, opt); },
        py::arg("per_model"), py::arg("alphas"), py::arg("nms") = NmsOptions{});
  m.def("map_weight", &map_weight, py::arg("weight"), py::arg("num_objects"));
  m.def("smooth_l1", &smooth_l1, py::arg("x"));

  py::class_<LinearTrainOptions>(m, "LinearTrainOptions")
      .def(py::init<>())
      .def_readwrite("step_size", &LinearTrainOptions::step_size)
      .def_readwrite("epochs", &LinearTrainOptions::epochs)
      .def_readwrite("seed", &LinearTrainOptions::seed)
      .def_readwrite("init_scale", &LinearTrainOptions::init_scale)
      .def_readwrite("warm_start", &LinearTrainOptions::warm_start)
      .def_readwrite("neg_pos_ratio", &LinearTrainOptions::neg_pos_ratio)
      .def_readwrite("nms", &LinearTrainOptions::nms);

  py::class_<LinearDetectorParams>(m, "LinearDetectorParams")
      .def_property_readonly("num_classes", &LinearDetectorParams::num_classes)
      .def_property_readonly("feature_dim", &LinearDetectorParams::feature_dim)
      .def_property_readonly("class_weights",
                             [](const LinearDetectorParams& p) { return p.class_weights.values(); })
      .def_property_readonly("loc_weights",
                             [](const LinearDetectorParams& p) { return p.loc_weights.values(); });

  py::class_<LinearFitResult>(m, "LinearFitResult")
      .def_readonly("params", &LinearFitResult::params)
      .def_readonly("loss_history", &LinearFitResult::loss_history);

  m.def("linear_fit",
        [](const SyntheticDataset& ds, const std::vector<double>& w, const LinearTrainOptions& opt) {
          return linear_fit(ds, w, opt);
        },
        py::arg("dataset"), py::arg("object_weights"), py::arg("options") = LinearTrainOptions{});
  m.def("linear_predict",
        [](const LinearDetectorParams& p, const SyntheticDataset& ds, const NmsOptions& opt) {
          return linear_predict(p, ds, OffsetEncoding::ssd, opt);
        },
        py::arg("params"), py::arg("dataset"), py::arg("nms") = NmsOptions{});

  py::class_<OracleDetectorSpec>(m, "OracleDetectorSpec")
      .def(py::init<>())
      .def_readwrite("detect_probability", &OracleDetectorSpec::detect_probability)
      .def_readwrite("hard_detect_probability", &OracleDetectorSpec::hard_detect_probability)
      .def_readwrite("weight_slope", &OracleDetectorSpec::weight_slope)
      .def_readwrite("miss_schedule", &OracleDetectorSpec::miss_schedule)
      .def_readwrite("false_positives_per_image", &OracleDetectorSpec::false_positives_per_image)
      .def_readwrite("seed", &OracleDetectorSpec::seed);

  m.def("oracle_predict",
        [](const OracleDetectorSpec& spec, const SyntheticDataset& ds, const std::vector<double>& w,
           int iteration) { return oracle_predict(spec, ds, w, iteration); },
        py::arg("spec"), py::arg("dataset"), py::arg("object_weights"), py::arg("iteration") = 1);
}

void bind_eval(py::module_& m) {
  py::enum_<APMode>(m, "APMode").value("allpoint", APMode::all_point).value("voc11", APMode::voc11);

  py::class_<PRPoint>(m, "PRPoint")
      .def_readonly("recall", &PRPoint::recall)
      .def_readonly("precision", &PRPoint::precision);
  py::class_<PRCurve>(m, "PRCurve")
      .def_readonly("cls", &PRCurve::cls)
      .def_readonly("num_gt", &PRCurve::num_gt)
      .def_readonly("points", &PRCurve::points)
      .def_readonly("is_tp", &PRCurve::is_tp);
  py::class_<ClassResult>(m, "ClassResult")
      .def_readonly("cls", &ClassResult::cls)
      .def_readonly("num_gt", &ClassResult::num_gt)
      .def_readonly("tp", &ClassResult::tp)
      .def_readonly("fp", &ClassResult::fp)
      .def_readonly("ap", &ClassResult::ap);
  py::class_<FpTaxonomy>(m, "FpTaxonomy")
      .def_readonly("loc", &FpTaxonomy::loc)
      .def_readonly("sim", &FpTaxonomy::sim)
      .def_readonly("oth", &FpTaxonomy::oth)
      .def_readonly("bg", &FpTaxonomy::bg)
      .def_property_readonly("total", &FpTaxonomy::total);
  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("classes", &EvalReport::classes)
      .def_readonly("curves", &EvalReport::curves)
      .def_readonly("map", &EvalReport::map)
      .def_readonly("fp", &EvalReport::fp)
      .def_readonly("missed", &EvalReport::missed);

  m.def("pr_points", &pr_points, py::arg("detections"), py::arg("ground_truth"),
        py::arg("num_classes"), py::arg("iou_threshold") = 0.5);
  m.def("average_precision", &average_precision, py::arg("curve"), py::arg("mode") = APMode::all_point);
  m.def("evaluate",
        [](const ImageDetections& d, const GroundTruth& gt, int num_classes, double iou_threshold,
           APMode mode) {
          EvalOptions opt;
          opt.iou_threshold = iou_threshold;
          opt.mode = mode;
          return evaluate(d, gt, num_classes, opt);
        },
        py::arg("detections"), py::arg("ground_truth"), py::arg("num_classes"),
        py::arg("iou_threshold") = 0.5, py::arg("mode") = APMode::all_point);
}

void bind_experiment(py::module_& m) {
  py::class_<IterationRecord>(m, "IterationRecord")
      .def_readonly("m", &IterationRecord::m)
      .def_readonly("error", &IterationRecord::error)
      .def_readonly("alpha", &IterationRecord::alpha)
      .def_readonly("weights", &IterationRecord::weights)
      .def_readonly("indicators", &IterationRecord::indicators)
      .def_readonly("single_score", &IterationRecord::single_score)
      .def_readonly("ensemble_score", &IterationRecord::ensemble_score)
      .def_readonly("warning", &IterationRecord::warning);

  py::class_<IMAEnsemble>(m, "IMAEnsemble")
      .def_readonly("iterations", &IMAEnsemble::iterations)
      .def_readonly("final_weights", &IMAEnsemble::final_weights)
      .def_property_readonly("alphas",
                             [](const IMAEnsemble& e) {
                               std::vector<double> a;
                               for (const auto& mem : e.members) a.push_back(mem.alpha);
                               return a;
                             })
      .def("__len__", &IMAEnsemble::size)
      .def("predict", [](const IMAEnsemble& e, std::size_t m, const SyntheticDataset& ds) {
        if (m < 1 || m > e.size()) throw py::index_error("model index outside 1..M");
        return e.members[m - 1].model->predict(ds);
      }, py::arg("m"), py::arg("dataset"))
      .def("fuse", [](const IMAEnsemble& e, const SyntheticDataset& ds, std::size_t upto) {
        return fuse(e, ds, e.nms, upto);
      }, py::arg("dataset"), py::arg("upto") = 0);

  m.def("run_ima_oracle",
        [](const SyntheticDataset& train, const OracleDetectorSpec& spec, int rounds, double theta) {
          OracleDetector det(spec);
          return run_ima(train, det, {rounds, theta, train.num_classes()});
        },
        py::arg("train"), py::arg("spec"), py::arg("rounds"), py::arg("theta") = 0.5);
  m.def("run_ima_linear",
        [](const SyntheticDataset& train, const LinearTrainOptions& opt, int rounds, double theta) {
          LinearDetector det(opt);
          return run_ima(train, det, {rounds, theta, train.num_classes()});
        },
        py::arg("train"), py::arg("options"), py::arg("rounds"), py::arg("theta") = 0.5);

  py::class_<BoostOutcome>(m, "BoostOutcome")
      .def_readonly("train", &BoostOutcome::train)
      .def_readonly("test", &BoostOutcome::test)
      .def_readonly("ensemble", &BoostOutcome::ensemble);

  m.def("run_boost",
        [](const std::string& json_text, const std::string& base_dir) {
          return run_boost_experiment(parse_experiment_config(json_text, base_dir));
        },
        py::arg("config_json"), py::arg("base_dir") = ".");
  m.def("iteration_table", &iteration_table, py::arg("ensemble"));
  m.def("save_ensemble", &save_ensemble, py::arg("ensemble"), py::arg("directory"));
  m.def("load_ensemble", &load_ensemble, py::arg("directory"));
}

}  // namespace

PYBIND11_MODULE(_imaboost, m) {
  m.doc() = "Invert multi-class AdaBoost for object detectors";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<BoostingError>(m, "BoostingError", PyExc_RuntimeError);
  py::register_exception<DatasetParseError>(m, "DatasetParseError", PyExc_ValueError);
  py::register_exception<DatasetVersionError>(m, "DatasetVersionError", PyExc_ValueError);

  bind_geometry(m);
  bind_data(m);
  bind_boosting(m);
  bind_eval(m);
  bind_experiment(m);
}
