#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tupr/coarse.hpp"
#include "tupr/kitti_io.hpp"
#include "tupr/knn_refiner.hpp"
#include "tupr/metrics.hpp"
#include "tupr/range_projection.hpp"
#include "tupr/refiner_net.hpp"
#include "tupr/training.hpp"
#include "tupr/uncertainty.hpp"

namespace tupr {

struct GeneratorConfig {
  int scans = 25;
  int rings = 64;
  int azimuth_steps = 2048;
  int boxes = 6;
  int cylinders = 8;
  int walls = 3;
  double noise_sigma = 0.02;
  double ground_extent = 50.0;
};

/// Everything a run needs. Module seeds are derived from `seed`.
struct PipelineConfig {
  std::uint64_t seed = 0;
  CoarseSource mode = CoarseSource::Oracle;
  int threads = 0;  // 0: hardware concurrency

  int num_classes = 20;
  ClassId ignore_class = 0;
  std::string class_map;  // empty: built-in Semantic-KITTI map

  ProjectionConfig projection;
  KnnConfig knn;
  bool knn_enabled = true;
  SelectionConfig selection;
  double train_c_u = 1.0;
  ModelDims model;  // input_dim and num_classes are derived
  TrainConfig train;
  bool refiner_enabled = true;
  std::size_t context_size = 4096;
  OracleNoiseSpec oracle;
  GeneratorConfig generator;

  void validate() const;
  ClassMap load_class_map() const;
  ModelDims model_dims() const;
  SelectionConfig selection_for_scan(std::uint64_t scan_key, bool training) const;
  OracleNoiseSpec oracle_for_scan(std::uint64_t scan_key) const;
  TrainConfig train_config() const;
  InferenceConfig inference_config(std::uint64_t scan_key) const;
};

nlohmann::ordered_json to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& doc);
PipelineConfig load_config(const std::filesystem::path& path);
/// Sets one dotted key (e.g. "selection.c_u") from its textual value.
void apply_override(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Stable 64-bit key of a scan id (FNV-1a), used to derive per-scan seeds.
std::uint64_t scan_key(const std::string& scan_id) noexcept;

/// Per-scan intermediate products, computed once and shared by both branches.
struct ScanStages {
  RangeImage image;
  CoarseSegmentation coarse;
  std::vector<ClassId> pixel_labels;
  std::vector<ClassId> back_projected;
  std::vector<ClassId> knn_labels;  // back_projected when KNN is disabled
};

/// project -> coarse probabilities -> argmax -> back-projection -> KNN.
/// `loaded` supplies backbone probabilities in Loaded mode; Oracle mode needs labels.
ScanStages prepare_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                        const PipelineConfig& cfg);

struct ScanResult {
  std::vector<ClassId> labels;      // final output
  std::vector<ClassId> knn_labels;  // KNN-only baseline
  std::size_t pool_size = 0;
  std::size_t changed = 0;  // pool entries whose label the refiner replaced
};

/// Full refinement of one scan. With the refiner disabled, or an empty pool,
/// the output equals the KNN labels.
ScanResult run_refine_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                           const PipelineConfig& cfg, const RefinerModel* model);

/// Training pool (cut at train_c_u) with ground truth for one labeled scan.
TrainingScan make_training_scan(const PointCloud& cloud, const std::optional<CoarseSegmentation>& loaded,
                                const PipelineConfig& cfg);

/// A freshly initialized model with input statistics fitted to `scans`.
RefinerModel initial_model(const PipelineConfig& cfg, std::span<const TrainingScan> scans);

// ---------------------------------------------------------------------------
// Corpus directories: <dir>/velodyne/<id>.bin, <dir>/labels/<id>.label and, in
// Loaded mode, <dir>/probs/<id>.bin.

std::vector<std::string> list_scans(const std::filesystem::path& corpus);
PointCloud load_scan(const std::filesystem::path& corpus, const std::string& id, const ClassMap& map);
std::optional<CoarseSegmentation> load_scan_coarse(const std::filesystem::path& corpus, const std::string& id,
                                                   const PipelineConfig& cfg);

/// Writes a seeded synthetic corpus; returns the scan ids.
std::vector<std::string> generate_corpus(const std::filesystem::path& out, const PipelineConfig& cfg);
SyntheticSceneSpec scene_spec(const PipelineConfig& cfg, int index);

struct TrainOutcome {
  RefinerModel model;
  std::vector<EpochLog> log;
};
/// Trains on every labeled scan of `corpus`; writes model.tupr, train_log.txt, config.json.
TrainOutcome run_train(const std::filesystem::path& corpus, const std::filesystem::path& out,
                       const PipelineConfig& cfg);
std::string format_epoch_line(const EpochLog& e);

struct RefineOutcome {
  std::optional<ConfusionMatrix> final_cm;
  std::optional<ConfusionMatrix> knn_cm;
  std::size_t pool_points = 0;
};
/// Refines every scan; writes predictions/<id>.label, knn/<id>.label, reports and config.json.
RefineOutcome run_refine(const std::filesystem::path& corpus, const std::optional<std::filesystem::path>& model,
                         const std::filesystem::path& out, const PipelineConfig& cfg);

/// Accumulates predictions against ground truth over matching scan sets.
ConfusionMatrix run_eval(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                         const ClassMap& map);

using Rgb = std::array<std::uint8_t, 3>;
/// Semantic-KITTI colors; the unlabeled class is gray.
std::vector<Rgb> default_palette();
void export_ply(const PointCloud& cloud, std::span<const ClassId> labels, std::span<const Rgb> palette,
                const std::filesystem::path& path);
std::string format_ply(const PointCloud& cloud, std::span<const ClassId> labels, std::span<const Rgb> palette);

}  // namespace tupr
