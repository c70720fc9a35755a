#include "tupr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "tupr/rng.hpp"

namespace tupr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum SeedStream : std::uint64_t {
  kSelectionSeed = 1,
  kOracleSeed = 2,
  kTrainSeed = 3,
  kModelSeed = 4,
  kInferenceSeed = 5,
  kSceneSeed = 6,
};

template <typename F>
auto in_stage(const char* name, const std::string& scan_id, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage ") + name + " (scan " + scan_id + "): " + e.what());
  }
}

// Runs fn(i) for i in [0, count) on a small worker pool. Results must be written
// to per-index slots; the error of the lowest failing index is rethrown.
template <typename F>
void parallel_for(std::size_t count, int threads, F&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, count);
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    pool.clear();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

const char* mode_name(CoarseSource m) { return m == CoarseSource::Oracle ? "oracle" : "loaded"; }

CoarseSource parse_mode(const std::string& s) {
  if (s == "oracle") return CoarseSource::Oracle;
  if (s == "loaded") return CoarseSource::Loaded;
  throw UsageError("mode must be 'oracle' or 'loaded', got '" + s + "'");
}

// Every key of `doc` must exist in `reference`.
void check_known_keys(const json& doc, const json& reference, const std::string& prefix) {
  for (const auto& [key, value] : doc.items()) {
    if (!reference.contains(key)) throw UsageError("unknown config key '" + prefix + key + "'");
    if (value.is_object() && reference.at(key).is_object())
      check_known_keys(value, reference.at(key), prefix + key + ".");
  }
}

template <typename T>
void read_into(const json& doc, const char* section, const char* key, T& field) {
  if (!doc.contains(section)) return;
  const auto& s = doc.at(section);
  if (s.contains(key)) field = s.at(key).get<T>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void PipelineConfig::validate() const {
  projection.validate();
  knn.validate();
  selection.validate();
  oracle.validate();
  if (num_classes < 2) throw UsageError("config: num_classes must be >= 2");
  if (ignore_class >= num_classes) throw UsageError("config: ignore_class outside 0..C-1");
  if (!(train_c_u > 0.0)) throw UsageError("config: train.c_u must be > 0");
  if (context_size < 1) throw UsageError("config: inference.context_size must be >= 1");
  if (train.epochs < 1) throw UsageError("config: train.epochs must be >= 1");
  if (!(train.learning_rate > 0.0)) throw UsageError("config: train.learning_rate must be > 0");
  if (!train.class_weights.empty() && train.class_weights.size() != static_cast<std::size_t>(num_classes))
    throw UsageError("config: train.class_weights needs one weight per class");
  if (generator.scans < 0) throw UsageError("config: generator.scans must be >= 0");
}

ClassMap PipelineConfig::load_class_map() const {
  ClassMap map = class_map.empty() ? ClassMap::semantic_kitti() : ClassMap::load(class_map);
  if (map.num_classes() != num_classes)
    throw UsageError("class map has " + std::to_string(map.num_classes()) + " classes but config says " +
                     std::to_string(num_classes));
  return map;
}

ModelDims PipelineConfig::model_dims() const {
  ModelDims d = model;
  d.num_classes = static_cast<std::size_t>(num_classes);
  d.input_dim = kGeometryFeatures + static_cast<std::size_t>(num_classes);
  return d;
}

SelectionConfig PipelineConfig::selection_for_scan(std::uint64_t key, bool training) const {
  SelectionConfig s = selection;
  s.seed = hash_key(seed, kSelectionSeed, key);
  if (training) s.c_u = train_c_u;
  return s;
}

OracleNoiseSpec PipelineConfig::oracle_for_scan(std::uint64_t key) const {
  OracleNoiseSpec o = oracle;
  o.seed = hash_key(seed, kOracleSeed, key);
  return o;
}

TrainConfig PipelineConfig::train_config() const {
  TrainConfig t = train;
  t.seed = hash_key(seed, kTrainSeed);
  t.n_u = selection.n_u;
  t.ignore_class = ignore_class;
  return t;
}

InferenceConfig PipelineConfig::inference_config(std::uint64_t key) const {
  return {context_size, hash_key(seed, kInferenceSeed, key)};
}

ordered_json to_json(const PipelineConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["mode"] = mode_name(c.mode);
  j["threads"] = c.threads;
  j["classes"] = {{"num_classes", c.num_classes}, {"ignore_class", c.ignore_class}, {"class_map", c.class_map}};
  j["projection"] = {{"width", c.projection.width},
                     {"height", c.projection.height},
                     {"fov_up", c.projection.fov_up_deg},
                     {"fov_down", c.projection.fov_down_deg}};
  j["knn"] = {{"enabled", c.knn_enabled},  {"k", c.knn.k},
              {"window", c.knn.window},    {"sigma", c.knn.sigma},
              {"range_cutoff", c.knn.range_cutoff}, {"weighted", c.knn.weighted}};
  j["selection"] = {{"boundary_budget", c.selection.boundary_budget},
                    {"c_u", c.selection.c_u},
                    {"n_u", c.selection.n_u},
                    {"agg_k", c.selection.agg_k},
                    {"agg_window", c.selection.agg_window},
                    {"background_rule", c.selection.background_rule == BackgroundRule::Far ? "far" : "near"},
                    {"distance", c.selection.distance_mode == DistanceMode::Range ? "range" : "euclidean"}};
  j["model"] = {{"embed_hidden", c.model.embed_hidden},
                {"model_dim", c.model.model_dim},
                {"layers", c.model.layers},
                {"head_hidden1", c.model.head_hidden1},
                {"head_hidden2", c.model.head_hidden2}};
  j["train"] = {{"epochs", c.train.epochs},        {"learning_rate", c.train.learning_rate},
                {"beta1", c.train.beta1},          {"beta2", c.train.beta2},
                {"epsilon", c.train.epsilon},      {"c_u", c.train_c_u},
                {"class_weights", c.train.class_weights}};
  j["inference"] = {{"enabled", c.refiner_enabled}, {"context_size", c.context_size}};
  j["oracle"] = {{"blur_radius", c.oracle.blur_radius},
                 {"flip_rate", c.oracle.flip_rate},
                 {"temperature", c.oracle.temperature}};
  j["generator"] = {{"scans", c.generator.scans},
                    {"rings", c.generator.rings},
                    {"azimuth_steps", c.generator.azimuth_steps},
                    {"boxes", c.generator.boxes},
                    {"cylinders", c.generator.cylinders},
                    {"walls", c.generator.walls},
                    {"noise_sigma", c.generator.noise_sigma},
                    {"ground_extent", c.generator.ground_extent}};
  return j;
}

PipelineConfig config_from_json(const json& doc) {
  PipelineConfig c;
  try {
    check_known_keys(doc, json::parse(to_json(c).dump()), "");
    if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
    if (doc.contains("mode")) c.mode = parse_mode(doc.at("mode").get<std::string>());
    if (doc.contains("threads")) c.threads = doc.at("threads").get<int>();
    read_into(doc, "classes", "num_classes", c.num_classes);
    read_into(doc, "classes", "ignore_class", c.ignore_class);
    read_into(doc, "classes", "class_map", c.class_map);
    read_into(doc, "projection", "width", c.projection.width);
    read_into(doc, "projection", "height", c.projection.height);
    read_into(doc, "projection", "fov_up", c.projection.fov_up_deg);
    read_into(doc, "projection", "fov_down", c.projection.fov_down_deg);
    read_into(doc, "knn", "enabled", c.knn_enabled);
    read_into(doc, "knn", "k", c.knn.k);
    read_into(doc, "knn", "window", c.knn.window);
    read_into(doc, "knn", "sigma", c.knn.sigma);
    read_into(doc, "knn", "range_cutoff", c.knn.range_cutoff);
    read_into(doc, "knn", "weighted", c.knn.weighted);
    read_into(doc, "selection", "boundary_budget", c.selection.boundary_budget);
    read_into(doc, "selection", "c_u", c.selection.c_u);
    read_into(doc, "selection", "n_u", c.selection.n_u);
    read_into(doc, "selection", "agg_k", c.selection.agg_k);
    read_into(doc, "selection", "agg_window", c.selection.agg_window);
    std::string rule = "far", distance = "range";
    read_into(doc, "selection", "background_rule", rule);
    read_into(doc, "selection", "distance", distance);
    if (rule != "far" && rule != "near") throw UsageError("selection.background_rule must be far or near");
    if (distance != "range" && distance != "euclidean")
      throw UsageError("selection.distance must be range or euclidean");
    c.selection.background_rule = rule == "far" ? BackgroundRule::Far : BackgroundRule::Near;
    c.selection.distance_mode = distance == "range" ? DistanceMode::Range : DistanceMode::Euclidean;
    read_into(doc, "model", "embed_hidden", c.model.embed_hidden);
    read_into(doc, "model", "model_dim", c.model.model_dim);
    read_into(doc, "model", "layers", c.model.layers);
    read_into(doc, "model", "head_hidden1", c.model.head_hidden1);
    read_into(doc, "model", "head_hidden2", c.model.head_hidden2);
    read_into(doc, "train", "epochs", c.train.epochs);
    read_into(doc, "train", "learning_rate", c.train.learning_rate);
    read_into(doc, "train", "beta1", c.train.beta1);
    read_into(doc, "train", "beta2", c.train.beta2);
    read_into(doc, "train", "epsilon", c.train.epsilon);
    read_into(doc, "train", "c_u", c.train_c_u);
    read_into(doc, "train", "class_weights", c.train.class_weights);
    read_into(doc, "inference", "enabled", c.refiner_enabled);
    read_into(doc, "inference", "context_size", c.context_size);
    read_into(doc, "oracle", "blur_radius", c.oracle.blur_radius);
    read_into(doc, "oracle", "flip_rate", c.oracle.flip_rate);
    read_into(doc, "oracle", "temperature", c.oracle.temperature);
    read_into(doc, "generator", "scans", c.generator.scans);
    read_into(doc, "generator", "rings", c.generator.rings);
    read_into(doc, "generator", "azimuth_steps", c.generator.azimuth_steps);
    read_into(doc, "generator", "boxes", c.generator.boxes);
    read_into(doc, "generator", "cylinders", c.generator.cylinders);
    read_into(doc, "generator", "walls", c.generator.walls);
    read_into(doc, "generator", "noise_sigma", c.generator.noise_sigma);
    read_into(doc, "generator", "ground_extent", c.generator.ground_extent);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return config_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  json doc = json::parse(to_json(cfg).dump());
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw UsageError("unknown config key '" + key + "'");
    node = &node->at(parts[i]);
  }
  if (node->is_object()) throw UsageError("config key '" + key + "' is a section");
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  if (node->is_string() && !parsed.is_string()) parsed = value;
  *node = parsed;
  cfg = config_from_json(doc);
}

std::uint64_t scan_key(const std::string& scan_id) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : scan_id) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Per-scan stages

ScanStages prepare_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                        const PipelineConfig& cfg) {
  const std::string& id = cloud.scan_id;
  const auto key = scan_key(id);
  ScanStages s;
  s.image = in_stage("project", id, [&] { return project(cloud, cfg.projection); });
  s.coarse = in_stage("coarse", id, [&] {
    if (cfg.mode == CoarseSource::Loaded) {
      if (!loaded) throw DataError("loaded mode needs a coarse probability file");
      check_compatible(*loaded, s.image);
      if (loaded->num_classes != cfg.num_classes) throw DataError("coarse probabilities have the wrong class count");
      return *loaded;
    }
    if (!cloud.labels) throw DataError("oracle mode needs ground-truth labels");
    return oracle_coarse(s.image, *cloud.labels, cfg.num_classes, cfg.oracle_for_scan(key));
  });
  s.pixel_labels = argmax_labels(s.coarse, cfg.ignore_class);
  s.back_projected = in_stage("back-project", id,
                              [&] { return back_project_labels(s.image, s.pixel_labels, cfg.ignore_class); });
  s.knn_labels = cfg.knn_enabled ? in_stage("knn", id, [&] {
    return knn_refine(s.image, s.pixel_labels, cfg.knn, cfg.num_classes);
  })
                                 : s.back_projected;
  return s;
}

ScanResult run_refine_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                           const PipelineConfig& cfg, const RefinerModel* model) {
  const std::string& id = cloud.scan_id;
  const auto key = scan_key(id);
  ScanStages s = prepare_scan(cloud, loaded, cfg);
  ScanResult r;
  r.knn_labels = s.knn_labels;
  r.labels = s.knn_labels;
  if (!cfg.refiner_enabled || model == nullptr) return r;
  if (model->dims.input_dim != kGeometryFeatures + static_cast<std::size_t>(cfg.num_classes) ||
      model->dims.num_classes != static_cast<std::size_t>(cfg.num_classes))
    throw UsageError("model was trained for a different class count");

  const auto pool = in_stage("select", id, [&] {
    return build_pool(s.image, s.coarse, cfg.selection_for_scan(key, false), s.knn_labels);
  });
  r.pool_size = pool.size();
  if (pool.empty()) return r;
  const auto refined = in_stage("refine", id, [&] { return refine(*model, pool, cfg.inference_config(key)); });
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (r.labels[pool.indices[k]] != refined[k]) ++r.changed;
    r.labels[pool.indices[k]] = refined[k];
  }
  return r;
}

TrainingScan make_training_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                                const PipelineConfig& cfg) {
  if (!cloud.labels) throw DataError("scan " + cloud.scan_id + " has no labels for training");
  ScanStages s = prepare_scan(cloud, loaded, cfg);
  TrainingScan t;
  t.scan_id = cloud.scan_id;
  t.pool = in_stage("select", cloud.scan_id, [&] {
    return build_pool(s.image, s.coarse, cfg.selection_for_scan(scan_key(cloud.scan_id), true), s.knn_labels);
  });
  t.gt = *cloud.labels;
  return t;
}

RefinerModel initial_model(const PipelineConfig& cfg, std::span<const TrainingScan> scans) {
  RefinerModel m = RefinerModel::create(cfg.model_dims(), hash_key(cfg.seed, kModelSeed));
  fit_input_normalization(m, scans);
  return m;
}

// ---------------------------------------------------------------------------
// Corpus handling

std::vector<std::string> list_scans(const fs::path& corpus) {
  const fs::path dir = corpus / "velodyne";
  if (!fs::is_directory(dir)) throw DataError("no velodyne directory in " + corpus.string());
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".bin") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

PointCloud load_scan(const fs::path& corpus, const std::string& id, const ClassMap& map) {
  PointCloud cloud = read_point_cloud(corpus / "velodyne" / (id + ".bin"));
  cloud.scan_id = id;
  const fs::path labels = corpus / "labels" / (id + ".label");
  if (fs::exists(labels)) {
    cloud.labels = read_labels(labels, map);
    if (cloud.labels->size() != cloud.size())
      throw DataError("scan " + id + ": " + std::to_string(cloud.labels->size()) + " labels for " +
                      std::to_string(cloud.size()) + " points");
  }
  return cloud;
}

std::optional<CoarseSegmentation> load_scan_coarse(const fs::path& corpus, const std::string& id,
                                                   const PipelineConfig& cfg) {
  if (cfg.mode != CoarseSource::Loaded) return std::nullopt;
  return load_coarse(corpus / "probs" / (id + ".bin"), cfg.projection.height, cfg.projection.width,
                     cfg.num_classes);
}

SyntheticSceneSpec scene_spec(const PipelineConfig& cfg, int index) {
  SyntheticSceneSpec s;
  s.seed = hash_key(cfg.seed, kSceneSeed, static_cast<std::uint64_t>(index));
  s.ground_extent = cfg.generator.ground_extent;
  s.boxes = cfg.generator.boxes;
  s.cylinders = cfg.generator.cylinders;
  s.walls = cfg.generator.walls;
  s.noise_sigma = cfg.generator.noise_sigma;
  s.scanner.rings = cfg.generator.rings;
  s.scanner.azimuth_steps = cfg.generator.azimuth_steps;
  s.scanner.fov_up_deg = cfg.projection.fov_up_deg;
  s.scanner.fov_down_deg = cfg.projection.fov_down_deg;
  return s;
}

std::vector<std::string> generate_corpus(const fs::path& out, const PipelineConfig& cfg) {
  const ClassMap map = cfg.load_class_map();
  std::vector<std::string> ids(static_cast<std::size_t>(cfg.generator.scans));
  parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
    char id[16];
    std::snprintf(id, sizeof id, "%06zu", i);
    ids[i] = id;
    PointCloud cloud = generate_scene(scene_spec(cfg, static_cast<int>(i)));
    write_point_cloud(cloud.points, out / "velodyne" / (ids[i] + ".bin"));
    write_labels(*cloud.labels, map, out / "labels" / (ids[i] + ".label"));
  });
  write_text_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  return ids;
}

std::string format_epoch_line(const EpochLog& e) {
  char line[128];
  std::snprintf(line, sizeof line, "%d %.9f %.9f %.9f\n", e.epoch, e.loss, e.wce, e.lovasz);
  return line;
}

TrainOutcome run_train(const fs::path& corpus, const fs::path& out, const PipelineConfig& cfg) {
  cfg.validate();
  const ClassMap map = cfg.load_class_map();
  std::vector<std::string> labeled;
  for (const auto& id : list_scans(corpus))
    if (fs::exists(corpus / "labels" / (id + ".label"))) labeled.push_back(id);
  if (labeled.empty()) throw DataError("no labeled scans in " + corpus.string());

  std::vector<TrainingScan> scans(labeled.size());
  parallel_for(labeled.size(), cfg.threads, [&](std::size_t i) {
    const PointCloud cloud = load_scan(corpus, labeled[i], map);
    scans[i] = make_training_scan(cloud, load_scan_coarse(corpus, labeled[i], cfg), cfg);
  });

  TrainOutcome result{initial_model(cfg, scans), {}};
  result.log = train(result.model, scans, cfg.train_config());

  std::string log_text;
  for (const auto& e : result.log) log_text += format_epoch_line(e);
  write_text_atomic(out / "train_log.txt", log_text);
  save_model(result.model, out / "model.tupr");
  write_text_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  return result;
}

RefineOutcome run_refine(const fs::path& corpus, const std::optional<fs::path>& model_path, const fs::path& out,
                         const PipelineConfig& cfg) {
  cfg.validate();
  const ClassMap map = cfg.load_class_map();
  std::optional<RefinerModel> model;
  if (cfg.refiner_enabled) {
    if (!model_path) throw UsageError("refine needs --model unless inference.enabled is false");
    model = load_model(*model_path);
  }

  const auto ids = list_scans(corpus);
  std::vector<ScanResult> results(ids.size());
  std::vector<std::optional<std::vector<ClassId>>> gts(ids.size());
  parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
    PointCloud cloud = load_scan(corpus, ids[i], map);
    results[i] = run_refine_scan(cloud, load_scan_coarse(corpus, ids[i], cfg), cfg, model ? &*model : nullptr);
    write_labels(results[i].labels, map, out / "predictions" / (ids[i] + ".label"));
    write_labels(results[i].knn_labels, map, out / "knn" / (ids[i] + ".label"));
    gts[i] = std::move(cloud.labels);
  });

  RefineOutcome outcome;
  for (const auto& r : results) outcome.pool_points += r.pool_size;
  const bool all_labeled = !ids.empty() && std::all_of(gts.begin(), gts.end(), [](const auto& g) { return g.has_value(); });
  if (all_labeled) {
    ConfusionMatrix final_cm(static_cast<std::size_t>(cfg.num_classes), cfg.ignore_class);
    ConfusionMatrix knn_cm = final_cm;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      final_cm.accumulate(*gts[i], results[i].labels);
      knn_cm.accumulate(*gts[i], results[i].knn_labels);
    }
    const auto& names = map.names();
    std::string report = format_report(final_cm, names);
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %8.2f\n%-16s %8.2f\n", "knn-only mIoU", 100.0 * miou(knn_cm).mean,
                  "knn-only oACC", 100.0 * oacc(knn_cm));
    report += line;
    std::string kv = format_key_values(final_cm, names);
    std::ostringstream extra;
    extra.precision(17);
    extra << "knn.miou " << miou(knn_cm).mean << "\nknn.oacc " << oacc(knn_cm) << "\npool_points "
          << outcome.pool_points << '\n';
    kv += extra.str();
    write_text_atomic(out / "report.txt", report);
    write_text_atomic(out / "report.kv", kv);
    outcome.final_cm = std::move(final_cm);
    outcome.knn_cm = std::move(knn_cm);
  }
  write_text_atomic(out / "config.json", to_json(cfg).dump(2) + "\n");
  return outcome;
}

ConfusionMatrix run_eval(const fs::path& pred_dir, const fs::path& gt_dir, const ClassMap& map) {
  const fs::path preds = fs::is_directory(pred_dir / "predictions") ? pred_dir / "predictions" : pred_dir;
  const fs::path gts = fs::is_directory(gt_dir / "labels") ? gt_dir / "labels" : gt_dir;
  auto stems = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    std::set<std::string> s;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".label") s.insert(e.path().stem().string());
    return s;
  };
  const auto p = stems(preds), g = stems(gts);
  std::string missing;
  for (const auto& id : g)
    if (!p.contains(id)) missing += " " + id + "(prediction)";
  for (const auto& id : p)
    if (!g.contains(id)) missing += " " + id + "(ground truth)";
  if (!missing.empty()) throw DataError("scan sets differ; missing:" + missing);
  if (g.empty()) throw DataError("no label files in " + gts.string());

  ConfusionMatrix cm(static_cast<std::size_t>(map.num_classes()), map.ignore_class());
  for (const auto& id : g) {
    const auto gt = read_labels(gts / (id + ".label"), map);
    const auto pred = read_labels(preds / (id + ".label"), map);
    if (gt.size() != pred.size())
      throw DataError("scan " + id + ": " + std::to_string(pred.size()) + " predictions for " +
                      std::to_string(gt.size()) + " ground-truth labels");
    cm.accumulate(gt, pred);
  }
  return cm;
}

// ---------------------------------------------------------------------------
// PLY export

std::vector<Rgb> default_palette() {
  return {{128, 128, 128}, {100, 150, 245}, {100, 230, 245}, {30, 60, 150},   {80, 30, 180},
          {0, 0, 255},     {255, 30, 30},   {255, 40, 200},  {150, 30, 90},   {255, 0, 255},
          {255, 150, 255}, {75, 0, 75},     {175, 0, 75},    {255, 200, 0},   {255, 120, 50},
          {0, 175, 0},     {135, 60, 0},    {150, 240, 80},  {255, 240, 150}, {255, 0, 0}};
}

std::string format_ply(const PointCloud& cloud, std::span<const ClassId> labels, std::span<const Rgb> palette) {
  if (labels.size() != cloud.size())
    throw DataError("ply: " + std::to_string(labels.size()) + " labels for " + std::to_string(cloud.size()) +
                    " points");
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\n"
                    "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (labels[i] >= palette.size())
      throw DataError("ply: palette has no color for class " + std::to_string(labels[i]));
    const auto& p = cloud.points[i];
    const auto& c = palette[labels[i]];
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %u %u %u\n", p.x, p.y, p.z, unsigned{c[0]}, unsigned{c[1]},
                  unsigned{c[2]});
    out += line;
  }
  return out;
}

void export_ply(const PointCloud& cloud, std::span<const ClassId> labels, std::span<const Rgb> palette,
                const fs::path& path) {
  write_text_atomic(path, format_ply(cloud, labels, palette));
}

}  // namespace tupr
