#pragma once

// Synthetic pedestrian scenes: a parametric, fully seeded stand-in for a
// street-scene pedestrian dataset. Scenes are grayscale grids in [0,1];
// pedestrians are bright vertical rectangles whose intensity peaks at the
// box center, distractors are thin poles and round blobs, and occluders are
// flat gray boxes drawn over pedestrians.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace secmlops::synthdata {

// Continuous pixel coordinates: pixel (r, c) covers [r, r+1) x [c, c+1).
struct Box {
  double top = 0;
  double left = 0;
  double bottom = 0;
  double right = 0;

  double height() const { return bottom - top; }
  double width() const { return right - left; }
  double area() const;
  bool operator==(const Box&) const = default;
};

double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

inline constexpr double kPedestrianAspect = 0.41;

struct PedestrianGT {
  double center_row = 0;
  double center_col = 0;
  double height = 0;
  double width = 0;
  double visibility = 1.0;
  bool ignore = false;

  Box box() const;
  bool operator==(const PedestrianGT&) const = default;
};

struct Scene {
  int id = 0;
  int height = 0;
  int width = 0;
  std::uint64_t rng_seed = 0;
  std::vector<double> pixels;  // row-major, height * width

  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const Scene&) const = default;
};

struct SceneLabels {
  std::vector<PedestrianGT> pedestrians;
  std::vector<Box> occluders;
  std::vector<Box> distractors;
  bool operator==(const SceneLabels&) const = default;
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
  std::vector<int> golden;
  double golden_fraction = 0.10;
  bool operator==(const DatasetSplit&) const = default;
};

struct DatasetConfig {
  int height = 64;
  int width = 128;
  int train_scenes = 200;
  int val_scenes = 40;
  int test_scenes = 60;
  double golden_fraction = 0.10;

  int pedestrians_min = 0;
  int pedestrians_max = 4;
  double pedestrian_height_min = 8;
  double pedestrian_height_max = 28;
  double aspect = kPedestrianAspect;
  double occlusion_probability = 0.3;
  double ignore_probability = 0.05;

  int distractors_min = 1;
  int distractors_max = 3;
  double pole_fraction = 0.75;

  double noise_stddev = 0.02;

  double mean_pedestrians() const { return 0.5 * (pedestrians_min + pedestrians_max); }
  int golden_scenes() const;
  int total_scenes() const;
  // Throws Error(kInvalidConfig).
  void validate() const;
  bool operator==(const DatasetConfig&) const = default;
};

struct Dataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::vector<Scene> scenes;       // indexed by scene id
  std::vector<SceneLabels> labels;  // parallel to scenes
  DatasetSplit split;

  const Scene& scene(int id) const { return scenes.at(static_cast<std::size_t>(id)); }
  const std::vector<PedestrianGT>& gts(int id) const {
    return labels.at(static_cast<std::size_t>(id)).pedestrians;
  }
  bool operator==(const Dataset&) const = default;
};

std::uint64_t scene_seed(std::uint64_t dataset_seed, int scene_id);

// Pure function of (config, id, rng_seed); regeneration is bit-identical.
std::pair<Scene, SceneLabels> generate_scene(const DatasetConfig& config, int id,
                                             std::uint64_t rng_seed);

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

// Visible fraction of the pedestrian box after removing the union of the
// occluders. Throws Error(kDegenerateBox) for zero-area boxes.
double compute_visibility(const PedestrianGT& ped, const std::vector<Box>& occluders);

struct EdgeParams {
  double threshold_ratio = 0.25;  // tau_e, fraction of the max Sobel magnitude
  double exclusion_radius = 8.0;  // R, pixels
  int min_component_size = 1;
};

struct AdvCandidateSet {
  int scene_id = 0;
  std::vector<std::pair<double, double>> centers;  // (row, col), sorted by component size desc
  std::vector<int> component_sizes;
};

// Sobel magnitude (replicated border) thresholded at threshold_ratio * max.
// Empty when the scene has no gradient at all.
std::vector<std::uint8_t> edge_map(const Scene& scene, const EdgeParams& params);

struct EdgeComponent {
  double row = 0;  // centroid, continuous coordinates
  double col = 0;
  int size = 0;
};

// 8-connected components of the edge map, sorted by size desc (ties by
// centroid row, then col).
std::vector<EdgeComponent> edge_components(const Scene& scene, const EdgeParams& params);

AdvCandidateSet extract_adversarial_centers(const Scene& scene,
                                            const std::vector<PedestrianGT>& gts,
                                            const EdgeParams& params = {});

// Euclidean distance from (row, col) to the nearest edge-map pixel center;
// +inf when the edge map is empty.
double distance_to_nearest_edge(const std::vector<std::uint8_t>& edges, int height, int width,
                                double row, double col);

// Dataset directory: scene_<id>.smlb per scene plus index.json.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Single-scene binary array: 16-byte header (4-byte magic, u32 H, u32 W,
// u32 reserved) followed by H*W little-endian float64 values.
inline constexpr char kSceneMagic[4] = {'S', 'M', 'L', 'B'};
inline constexpr char kAdversarialMagic[4] = {'S', 'M', 'L', 'A'};
void write_scene_array(const Scene& scene, const std::filesystem::path& file,
                       const char (&magic)[4] = kSceneMagic);
// Returns the pixels and fills height/width; rejects files whose magic is
// neither SMLB nor SMLA.
Scene read_scene_array(const std::filesystem::path& file, std::string* magic_out = nullptr);

void to_json(nlohmann::json& j, const Box& b);
void from_json(const nlohmann::json& j, Box& b);
void to_json(nlohmann::json& j, const PedestrianGT& g);
void from_json(const nlohmann::json& j, PedestrianGT& g);
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);
void to_json(nlohmann::json& j, const DatasetSplit& s);
void from_json(const nlohmann::json& j, DatasetSplit& s);

// SHA-256 over the canonical index plus every scene's pixel bytes.
std::string dataset_digest(const Dataset& dataset);

}  // namespace secmlops::synthdata
