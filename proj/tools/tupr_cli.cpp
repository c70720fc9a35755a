// tupr: command-line front end for the refinement pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tupr/pipeline.hpp"
#include "tupr/simd/kernels.hpp"

namespace fs = std::filesystem;
using namespace tupr;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<double> c_u;
  std::optional<std::size_t> boundary_budget;
  std::optional<std::size_t> n_u;
  std::optional<int> knn_k;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<int> threads;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--config", o.config, "JSON config file");
  app->add_option("--c-u", o.c_u, "background distance cutoff (inference)");
  app->add_option("--boundary-budget", o.boundary_budget, "max boundary points per scan");
  app->add_option("--n-u", o.n_u, "training sample size per scan");
  app->add_option("--knn-k", o.knn_k, "KNN neighbor count");
  app->add_option("--seed", o.seed, "master seed");
  app->add_option("--mode", o.mode, "coarse source: oracle or loaded");
  app->add_option("--epochs", o.epochs, "training epochs");
  app->add_option("--threads", o.threads, "worker threads (0: all cores)");
  app->add_option("--set", o.sets, "override any config key, e.g. --set knn.enabled=false");
}

PipelineConfig resolve(const CommonOptions& o) {
  PipelineConfig cfg = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  auto set = [&](const char* key, const auto& value) {
    if (value) apply_override(cfg, key, nlohmann::json(*value).dump());
  };
  set("selection.c_u", o.c_u);
  set("selection.boundary_budget", o.boundary_budget);
  set("selection.n_u", o.n_u);
  set("knn.k", o.knn_k);
  set("seed", o.seed);
  set("train.epochs", o.epochs);
  set("threads", o.threads);
  if (o.mode) apply_override(cfg, "mode", *o.mode);
  return cfg;
}

void print_report(const ConfusionMatrix& cm, const ClassMap& map) {
  std::cout << format_report(cm, map.names());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LiDAR segmentation refinement: range projection, KNN, uncertain-point transformer"};
  app.require_subcommand(1);
  bool scalar = false;
  app.add_flag("--scalar-kernels", scalar, "disable SIMD kernels");

  CommonOptions common;

  // gen
  auto* gen = app.add_subcommand("gen", "write a seeded synthetic corpus");
  std::string gen_out;
  std::optional<int> gen_scans;
  gen->add_option("--out", gen_out, "output corpus directory")->required();
  gen->add_option("--scans", gen_scans, "number of scans");
  add_common(gen, common);

  // project
  auto* proj = app.add_subcommand("project", "project one scan; write a range image and optional pool dump");
  std::string proj_scan, proj_out, proj_labels, proj_probs, proj_pool;
  proj->add_option("--scan", proj_scan, "velodyne .bin file")->required();
  proj->add_option("--out", proj_out, "range image (.pgm)")->required();
  proj->add_option("--labels", proj_labels, "label file (oracle mode)");
  proj->add_option("--probs", proj_probs, "coarse probability file (loaded mode)");
  proj->add_option("--pool-dump", proj_pool, "write the uncertain point pool here");
  add_common(proj, common);

  // train
  auto* tr = app.add_subcommand("train", "train the refiner on a labeled corpus");
  std::string tr_corpus, tr_out;
  tr->add_option("--corpus", tr_corpus, "corpus directory")->required();
  tr->add_option("--out", tr_out, "run directory")->required();
  add_common(tr, common);

  // refine
  auto* ref = app.add_subcommand("refine", "refine every scan of a corpus");
  std::string ref_corpus, ref_out, ref_model;
  ref->add_option("--corpus", ref_corpus, "corpus directory")->required();
  ref->add_option("--out", ref_out, "run directory")->required();
  ref->add_option("--model", ref_model, "checkpoint (model.tupr)");
  add_common(ref, common);

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_pred, ev_gt, ev_out;
  ev->add_option("--pred", ev_pred, "prediction label directory")->required();
  ev->add_option("--gt", ev_gt, "ground-truth label directory")->required();
  ev->add_option("--out", ev_out, "directory for report.txt / report.kv");
  add_common(ev, common);

  // export
  auto* ex = app.add_subcommand("export", "write a labeled scan as colored ASCII PLY");
  std::string ex_scan, ex_labels, ex_out;
  ex->add_option("--scan", ex_scan, "velodyne .bin file")->required();
  ex->add_option("--labels", ex_labels, "label file")->required();
  ex->add_option("--out", ex_out, "output .ply")->required();
  add_common(ex, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (scalar) simd::set_backend(simd::Backend::Scalar);
    PipelineConfig cfg = resolve(common);

    if (gen->parsed()) {
      if (gen_scans) cfg.generator.scans = *gen_scans;
      cfg.validate();
      const auto ids = generate_corpus(gen_out, cfg);
      std::printf("wrote %zu scans to %s\n", ids.size(), gen_out.c_str());
    } else if (proj->parsed()) {
      const ClassMap map = cfg.load_class_map();
      PointCloud cloud = read_point_cloud(proj_scan);
      cloud.scan_id = fs::path(proj_scan).stem().string();
      if (!proj_labels.empty()) cloud.labels = read_labels(proj_labels, map);
      std::optional<CoarseSegmentation> loaded;
      if (!proj_probs.empty())
        loaded = load_coarse(proj_probs, cfg.projection.height, cfg.projection.width, cfg.num_classes);
      if (proj_pool.empty()) {
        const RangeImage img = project(cloud, cfg.projection);
        write_range_pgm(img, proj_out);
      } else {
        const ScanStages s = prepare_scan(cloud, loaded, cfg);
        write_range_pgm(s.image, proj_out);
        const auto pool =
            build_pool(s.image, s.coarse, cfg.selection_for_scan(scan_key(cloud.scan_id), false), s.knn_labels);
        write_pool_dump(pool, s.image, s.coarse, proj_pool);
        std::printf("pool: %zu of %zu points\n", pool.size(), cloud.size());
      }
    } else if (tr->parsed()) {
      const auto out = run_train(tr_corpus, tr_out, cfg);
      for (const auto& e : out.log) std::fputs(format_epoch_line(e).c_str(), stdout);
    } else if (ref->parsed()) {
      std::optional<fs::path> model;
      if (!ref_model.empty()) model = ref_model;
      const auto out = run_refine(ref_corpus, model, ref_out, cfg);
      std::printf("pool points: %zu\n", out.pool_points);
      if (out.final_cm) {
        const ClassMap map = cfg.load_class_map();
        print_report(*out.final_cm, map);
        std::printf("knn-only mIoU %.2f\n", 100.0 * miou(*out.knn_cm).mean);
      }
    } else if (ev->parsed()) {
      const ClassMap map = cfg.load_class_map();
      const auto cm = run_eval(ev_pred, ev_gt, map);
      print_report(cm, map);
      if (!ev_out.empty()) {
        write_text_atomic(fs::path(ev_out) / "report.txt", format_report(cm, map.names()));
        write_text_atomic(fs::path(ev_out) / "report.kv", format_key_values(cm, map.names()));
        write_text_atomic(fs::path(ev_out) / "config.json", to_json(cfg).dump(2) + "\n");
      }
    } else if (ex->parsed()) {
      const ClassMap map = cfg.load_class_map();
      const PointCloud cloud = read_point_cloud(ex_scan);
      const auto labels = read_labels(ex_labels, map);
      export_ply(cloud, labels, default_palette(), ex_out);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::Data);
  }
}
