#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "imaboost/experiment.hpp"

namespace imaboost::cli {

namespace {

namespace fs = std::filesystem;

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("--config", "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename F>
int guarded(std::ostream& log, F&& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

std::string dataset_summary(const SyntheticDataset& ds) {
  std::size_t hard = 0;
  for (const auto& img : ds.images())
    for (const auto& o : img.objects) hard += o.hard ? 1 : 0;
  const double frac = ds.object_count() ? static_cast<double>(hard) / ds.object_count() : 0.0;
  char buf[160];
  std::snprintf(buf, sizeof buf, "images %zu  objects %zu  hard %zu (fraction %.4f)\n",
                ds.image_count(), ds.object_count(), hard, frac);
  return buf;
}

std::vector<std::vector<int>> parse_groups(const std::vector<std::string>& specs) {
  std::vector<std::vector<int>> groups;
  for (const auto& s : specs) {
    std::vector<int> g;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        g.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError("--sim-group", "'" + s + "' is not a comma-separated class list");
      }
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

EvalOptions eval_options(const EvalArgs& args) {
  EvalOptions opt;
  if (!(args.iou_threshold > 0.0 && args.iou_threshold < 1.0))
    throw ConfigError("--iou-thresh", "must lie in (0, 1)");
  opt.iou_threshold = args.iou_threshold;
  if (args.ap_mode == "allpoint")
    opt.mode = APMode::all_point;
  else if (args.ap_mode == "voc11")
    opt.mode = APMode::voc11;
  else
    throw ConfigError("--ap-mode", "must be 'allpoint' or 'voc11'");
  opt.similarity_groups = parse_groups(args.similarity_groups);
  return opt;
}

struct Scored {
  SyntheticDataset dataset;
  ImageDetections detections;
  std::string label;
};

Scored detect(const EvalArgs& args) {
  if (args.single && args.upto) throw ConfigError("--single", "cannot be combined with --upto");
  const IMAEnsemble ens = load_ensemble(args.ensemble);
  Scored s{load(args.dataset), {}, {}};
  if (args.single) {
    const int m = *args.single;
    if (m < 1 || static_cast<std::size_t>(m) > ens.size())
      throw ConfigError("--single", "iteration " + std::to_string(m) + " outside 1.." +
                                        std::to_string(ens.size()));
    s.detections = ens.members[static_cast<std::size_t>(m - 1)].model->predict(s.dataset);
    s.label = "single model m=" + std::to_string(m);
  } else {
    std::size_t upto = 0;
    if (args.upto) {
      if (*args.upto < 1) throw ConfigError("--upto", "must be at least 1");
      upto = static_cast<std::size_t>(*args.upto);
    }
    s.detections = fuse(ens, s.dataset, ens.nms, upto);
    const std::size_t used = upto == 0 ? ens.size() : std::min(upto, ens.size());
    s.label = "fused ensemble of " + std::to_string(used) + " model(s)";
  }
  return s;
}

std::string fp_by_class(const ImageDetections& dets, const SyntheticDataset& ds,
                        const EvalOptions& opt) {
  std::ostringstream os;
  os << "class\tLoc\tSim\tOth\tBG\ttotal\n";
  for (int c = 1; c <= ds.num_classes(); ++c) {
    ImageDetections only(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (const auto& d : dets[i])
        if (d.cls == c) only[i].push_back(d);
    const auto fp = fp_taxonomy(only, ds.ground_truth(), ds.num_classes(), opt.similarity_groups,
                                opt.iou_threshold);
    os << c << '\t' << fp.loc << '\t' << fp.sim << '\t' << fp.oth << '\t' << fp.bg << '\t'
       << fp.total() << '\n';
  }
  return os.str();
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args, std::ostream& log) {
  return guarded(log, [&] {
    SceneConfig cfg = parse_scene_config(read_file(args.config));
    if (args.seed) cfg.seed = *args.seed;
    const SyntheticDataset ds = generate(cfg);
    save(ds, args.out);
    if (args.ground_truth_text) {
      fs::path gt = args.out;
      gt += ".gt.txt";
      write_file(gt, ground_truth_text(ds));
    }
    log << "wrote " << args.out.string() << '\n' << dataset_summary(ds);
  });
}

int cmd_boost(const BoostArgs& args, std::ostream& log) {
  return guarded(log, [&] {
    ExperimentConfig cfg = load_experiment_config(args.config);
    if (args.seed) cfg.seed = *args.seed;
    const fs::path out = args.out ? *args.out : cfg.output_dir;
    fs::create_directories(out);
    write_file(out / "config.json", cfg.source_text);

    const BoostOutcome r = run_boost_experiment(cfg);
    save_ensemble(r.ensemble, out / "ensemble");
    save(r.train, out / "train.imbd");
    save(r.test, out / "test.imbd");

    const std::string table = iteration_table(r.ensemble);
    write_file(out / "iterations.tsv",
               "# test-split mAP per boosting iteration; seed " + std::to_string(cfg.seed) +
                   "; ap mode " + ap_mode_name(cfg.eval.mode) + "\n" + table);
    log << "train: " << dataset_summary(r.train) << "test:  " << dataset_summary(r.test) << table;
    for (const auto& rec : r.ensemble.iterations)
      if (!rec.warning.empty()) log << "warning: iteration " << rec.m << ": " << rec.warning << '\n';
    log << "wrote " << out.string() << '\n';
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& log) {
  return guarded(log, [&] {
    const EvalOptions opt = eval_options(args);
    const Scored s = detect(args);
    const EvalReport rep = evaluate(s.detections, s.dataset.ground_truth(), s.dataset.num_classes(), opt);

    char head[256];
    std::snprintf(head, sizeof head, "# %s; IoU threshold %.4g; AP as fraction\n", s.label.c_str(),
                  opt.iou_threshold);
    write_file(args.out / "ap.tsv", head + ap_table(rep));
    for (const auto& c : rep.curves)
      write_file(args.out / ("pr_class_" + std::to_string(c.cls) + ".tsv"), pr_table(c));
    write_file(args.out / "fp.tsv", std::string("# false positives of ") + s.label + "\n" + fp_table(rep.fp));

    char buf[96];
    std::snprintf(buf, sizeof buf, "mAP(%%) %.2f (%s)\n", 100.0 * rep.map, ap_mode_name(rep.mode));
    log << s.label << '\n' << ap_table(rep) << buf << "wrote " << args.out.string() << '\n';
  });
}

int cmd_analyze_fp(const EvalArgs& args, std::ostream& log) {
  return guarded(log, [&] {
    const EvalOptions opt = eval_options(args);
    const Scored s = detect(args);
    const FpTaxonomy fp = fp_taxonomy(s.detections, s.dataset.ground_truth(), s.dataset.num_classes(),
                                      opt.similarity_groups, opt.iou_threshold);
    const std::string header = "# false positives of " + s.label + "\n";
    write_file(args.out / "fp.tsv", header + fp_table(fp));
    write_file(args.out / "fp_by_class.tsv", header + fp_by_class(s.detections, s.dataset, opt));
    log << s.label << '\n' << fp_table(fp) << "wrote " << args.out.string() << '\n';
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Invert multi-class AdaBoost for object detectors"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic detection dataset");
  g->add_option("--config", gen.config, "Scene config (JSON)")->required();
  g->add_option("--out", gen.out, "Dataset file to write")->required();
  g->add_option("--seed", gen.seed, "Override the scene seed");
  g->add_flag("--gt-text", gen.ground_truth_text, "Also write <out>.gt.txt");

  BoostArgs boost;
  auto* b = app.add_subcommand("boost", "Run the boosting loop and score every iteration");
  b->add_option("--config", boost.config, "Experiment config (JSON)")->required();
  b->add_option("--out", boost.out, "Output directory (default: output_dir from the config)");
  b->add_option("--seed", boost.seed, "Override the global seed");

  EvalArgs eval;
  auto add_eval = [](CLI::App* sub, EvalArgs& a) {
    sub->add_option("--ensemble", a.ensemble, "Ensemble directory")->required();
    sub->add_option("--dataset", a.dataset, "Dataset file")->required();
    sub->add_option("--out", a.out, "Output directory")->required();
    sub->add_option("--single", a.single, "Evaluate iteration m alone");
    sub->add_option("--upto", a.upto, "Fuse only the first k members");
    sub->add_option("--iou-thresh", a.iou_threshold, "TP overlap threshold")->capture_default_str();
    sub->add_option("--ap-mode", a.ap_mode, "allpoint or voc11")->capture_default_str();
    sub->add_option("--sim-group", a.similarity_groups, "Similar classes, e.g. 1,2 (repeatable)");
  };
  auto* e = app.add_subcommand("eval", "Evaluate an ensemble or one of its models");
  add_eval(e, eval);
  auto* f = app.add_subcommand("analyze-fp", "Break false positives down by cause");
  add_eval(f, eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitConfig;
  }

  if (g->parsed()) return cmd_gen_data(gen, std::cout);
  if (b->parsed()) return cmd_boost(boost, std::cout);
  if (e->parsed()) return cmd_eval(eval, std::cout);
  return cmd_analyze_fp(eval, std::cout);
}

}  // namespace imaboost::cli
