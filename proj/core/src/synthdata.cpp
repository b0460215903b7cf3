#include "secmlops/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "secmlops/error.hpp"
#include "secmlops/rng.hpp"

namespace secmlops::synthdata {

double Box::area() const { return std::max(0.0, height()) * std::max(0.0, width()); }

double intersection_area(const Box& a, const Box& b) {
  const double h = std::min(a.bottom, b.bottom) - std::max(a.top, b.top);
  const double w = std::min(a.right, b.right) - std::max(a.left, b.left);
  return (h > 0 && w > 0) ? h * w : 0.0;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Box PedestrianGT::box() const {
  return {center_row - 0.5 * height, center_col - 0.5 * width, center_row + 0.5 * height,
          center_col + 0.5 * width};
}

int DatasetConfig::golden_scenes() const {
  return static_cast<int>(std::ceil(golden_fraction * train_scenes - 1e-9));
}

int DatasetConfig::total_scenes() const {
  return train_scenes + val_scenes + test_scenes + golden_scenes();
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::kInvalidConfig, why); };
  if (height < 16 || width < 16) fail("scene dimensions must be at least 16x16");
  if (pedestrians_min < 0 || pedestrians_max < pedestrians_min) fail("invalid pedestrian count range");
  if (!(pedestrian_height_min >= 2) || pedestrian_height_max < pedestrian_height_min)
    fail("invalid pedestrian height range");
  if (pedestrian_height_max > height - 2) fail("pedestrian height range does not fit the scene");
  if (!(aspect > 0) || std::round(aspect * pedestrian_height_max) > width - 2)
    fail("pedestrian width does not fit the scene");
  if (train_scenes < 0 || val_scenes < 0 || test_scenes < 0) fail("negative split size");
  if (!(golden_fraction >= 0 && golden_fraction <= 1)) fail("golden_fraction must lie in [0,1]");
  for (double p : {occlusion_probability, ignore_probability, pole_fraction}) {
    if (!(p >= 0 && p <= 1)) fail("probabilities must lie in [0,1]");
  }
  if (distractors_min < 0 || distractors_max < distractors_min) fail("invalid distractor count range");
  if (!(noise_stddev >= 0)) fail("noise_stddev must be non-negative");
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, int scene_id) {
  std::uint64_t state = dataset_seed ^ (0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(scene_id) + 1));
  return splitmix64(state);
}

double compute_visibility(const PedestrianGT& ped, const std::vector<Box>& occluders) {
  const Box box = ped.box();
  const double total = box.area();
  if (!(total > 0)) throw Error(ErrorKind::kDegenerateBox, "pedestrian box has zero area");

  // Exact union area of the clipped occluders by coordinate compression.
  std::vector<Box> clipped;
  std::vector<double> xs{box.left, box.right};
  std::vector<double> ys{box.top, box.bottom};
  for (const Box& o : occluders) {
    Box c{std::max(o.top, box.top), std::max(o.left, box.left), std::min(o.bottom, box.bottom),
          std::min(o.right, box.right)};
    if (c.height() <= 0 || c.width() <= 0) continue;
    clipped.push_back(c);
    xs.push_back(c.left);
    xs.push_back(c.right);
    ys.push_back(c.top);
    ys.push_back(c.bottom);
  }
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());

  double covered = 0;
  for (std::size_t i = 0; i + 1 < ys.size(); ++i) {
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
      const double cy = 0.5 * (ys[i] + ys[i + 1]);
      const double cx = 0.5 * (xs[j] + xs[j + 1]);
      for (const Box& c : clipped) {
        if (cy > c.top && cy < c.bottom && cx > c.left && cx < c.right) {
          covered += (ys[i + 1] - ys[i]) * (xs[j + 1] - xs[j]);
          break;
        }
      }
    }
  }
  return std::clamp((total - covered) / total, 0.0, 1.0);
}

namespace {

bool overlaps_with_margin(const Box& a, const Box& b, double margin) {
  return a.top - margin < b.bottom && b.top - margin < a.bottom && a.left - margin < b.right &&
         b.left - margin < a.right;
}

}  // namespace

std::pair<Scene, SceneLabels> generate_scene(const DatasetConfig& config, int id,
                                             std::uint64_t rng_seed) {
  const int H = config.height;
  const int W = config.width;
  Rng rng(rng_seed);

  Scene scene;
  scene.id = id;
  scene.height = H;
  scene.width = W;
  scene.rng_seed = rng_seed;
  scene.pixels.assign(static_cast<std::size_t>(H) * W, 0.0);

  const double base = rng.uniform(0.10, 0.25);
  const double slope = rng.uniform(-0.05, 0.05);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) scene.at(r, c) = base + slope * ((c + 0.5) / W - 0.5);
  }

  SceneLabels labels;
  std::vector<Box> ped_boxes;
  const int n_ped = static_cast<int>(rng.integer(config.pedestrians_min, config.pedestrians_max));
  for (int k = 0; k < n_ped; ++k) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double h = std::round(rng.uniform(config.pedestrian_height_min, config.pedestrian_height_max));
      const double w = std::max(1.0, std::round(config.aspect * h));
      const double top = static_cast<double>(rng.integer(0, H - static_cast<int>(h)));
      const double left = static_cast<double>(rng.integer(0, W - static_cast<int>(w)));
      const Box b{top, left, top + h, left + w};
      const bool clash = std::any_of(ped_boxes.begin(), ped_boxes.end(),
                                     [&](const Box& o) { return overlaps_with_margin(b, o, 3.0); });
      if (clash) continue;
      ped_boxes.push_back(b);
      PedestrianGT gt;
      gt.center_row = top + 0.5 * h;
      gt.center_col = left + 0.5 * w;
      gt.height = h;
      gt.width = w;
      labels.pedestrians.push_back(gt);
      break;
    }
  }

  // Distractors keep a wide horizontal berth from pedestrians so their
  // edge clusters are candidates rather than excluded centers.
  const int n_dis = static_cast<int>(rng.integer(config.distractors_min, config.distractors_max));
  struct Blob {
    double row, col, radius, level;
  };
  std::vector<std::pair<Box, double>> poles;
  std::vector<Blob> blobs;
  for (int k = 0; k < n_dis; ++k) {
    const bool pole = rng.bernoulli(config.pole_fraction);
    for (int attempt = 0; attempt < 64; ++attempt) {
      Box b;
      Blob blob{};
      if (pole) {
        const int pw = static_cast<int>(rng.integer(1, 2));
        const int ph = static_cast<int>(rng.integer(H / 3, H - 4));
        const int top = static_cast<int>(rng.integer(0, H - ph));
        const int left = static_cast<int>(rng.integer(1, W - pw - 1));
        b = {double(top), double(left), double(top + ph), double(left + pw)};
      } else {
        blob.radius = rng.uniform(2.0, 3.5);
        blob.row = rng.uniform(blob.radius + 1, H - blob.radius - 1);
        blob.col = rng.uniform(blob.radius + 1, W - blob.radius - 1);
        b = {blob.row - blob.radius, blob.col - blob.radius, blob.row + blob.radius,
             blob.col + blob.radius};
      }
      const double level = rng.uniform(0.6, 0.9);
      auto too_close = [&](const Box& o) { return overlaps_with_margin(b, o, 10.0); };
      if (std::any_of(ped_boxes.begin(), ped_boxes.end(), too_close)) continue;
      if (std::any_of(labels.distractors.begin(), labels.distractors.end(),
                      [&](const Box& o) { return overlaps_with_margin(b, o, 2.0); }))
        continue;
      labels.distractors.push_back(b);
      if (pole) {
        poles.emplace_back(b, level);
      } else {
        blob.level = level;
        blobs.push_back(blob);
      }
      break;
    }
  }

  for (const PedestrianGT& gt : labels.pedestrians) {
    const Box b = gt.box();
    const double peak = rng.uniform(0.6, 0.85);
    for (int r = static_cast<int>(b.top); r < static_cast<int>(b.bottom); ++r) {
      const double t = 2.0 * (r + 0.5 - b.top) / gt.height - 1.0;
      const double level = peak * (1.0 - 0.5 * std::abs(t));
      for (int c = static_cast<int>(b.left); c < static_cast<int>(b.right); ++c) scene.at(r, c) = level;
    }
  }
  for (const auto& [b, level] : poles) {
    for (int r = static_cast<int>(b.top); r < static_cast<int>(b.bottom); ++r) {
      for (int c = static_cast<int>(b.left); c < static_cast<int>(b.right); ++c) scene.at(r, c) = level;
    }
  }
  for (const Blob& blob : blobs) {
    for (int r = 0; r < H; ++r) {
      for (int c = 0; c < W; ++c) {
        const double dr = r + 0.5 - blob.row;
        const double dc = c + 0.5 - blob.col;
        if (dr * dr + dc * dc <= blob.radius * blob.radius) scene.at(r, c) = blob.level;
      }
    }
  }

  for (const PedestrianGT& gt : labels.pedestrians) {
    if (!rng.bernoulli(config.occlusion_probability)) continue;
    const Box b = gt.box();
    const double frac = rng.uniform(0.2, 0.8);
    const double occ_h = std::max(1.0, std::round(frac * gt.height));
    const double pad_l = static_cast<double>(rng.integer(0, 2));
    const double pad_r = static_cast<double>(rng.integer(0, 2));
    const double level = rng.uniform(0.3, 0.45);
    Box o{b.bottom - occ_h, std::max(0.0, b.left - pad_l), b.bottom, std::min<double>(W, b.right + pad_r)};
    labels.occluders.push_back(o);
    for (int r = static_cast<int>(o.top); r < static_cast<int>(o.bottom); ++r) {
      for (int c = static_cast<int>(o.left); c < static_cast<int>(o.right); ++c) scene.at(r, c) = level;
    }
  }

  for (double& p : scene.pixels) {
    if (config.noise_stddev > 0) p += rng.normal(0.0, config.noise_stddev);
    p = std::clamp(p, 0.0, 1.0);
  }

  for (PedestrianGT& gt : labels.pedestrians) {
    gt.visibility = compute_visibility(gt, labels.occluders);
    gt.ignore = rng.bernoulli(config.ignore_probability);
  }
  return {std::move(scene), std::move(labels)};
}

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.seed = seed;
  const int total = config.total_scenes();
  ds.scenes.reserve(total);
  ds.labels.reserve(total);
  for (int id = 0; id < total; ++id) {
    auto [scene, labels] = generate_scene(config, id, scene_seed(seed, id));
    ds.scenes.push_back(std::move(scene));
    ds.labels.push_back(std::move(labels));
  }

  std::vector<int> ids(total);
  for (int i = 0; i < total; ++i) ids[i] = i;
  Rng rng(seed, streams::kSplit);
  rng.shuffle(ids);
  auto take = [&, pos = std::size_t{0}](int n) mutable {
    std::vector<int> out(ids.begin() + pos, ids.begin() + pos + n);
    std::sort(out.begin(), out.end());
    pos += n;
    return out;
  };
  ds.split.golden = take(config.golden_scenes());
  ds.split.train = take(config.train_scenes);
  ds.split.val = take(config.val_scenes);
  ds.split.test = take(config.test_scenes);
  ds.split.golden_fraction = config.golden_fraction;
  return ds;
}

std::vector<std::uint8_t> edge_map(const Scene& scene, const EdgeParams& params) {
  const int H = scene.height;
  const int W = scene.width;
  std::vector<double> mag(static_cast<std::size_t>(H) * W);
  auto px = [&](int r, int c) {
    return scene.at(std::clamp(r, 0, H - 1), std::clamp(c, 0, W - 1));
  };
  double max_mag = 0;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r, c - 1) + px(r + 1, c - 1));
      const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1)) -
                        (px(r - 1, c - 1) + 2 * px(r - 1, c) + px(r - 1, c + 1));
      const double m = std::sqrt(gx * gx + gy * gy);
      mag[static_cast<std::size_t>(r) * W + c] = m;
      max_mag = std::max(max_mag, m);
    }
  }
  std::vector<std::uint8_t> edges(mag.size(), 0);
  if (max_mag <= 1e-12) return edges;
  const double thr = params.threshold_ratio * max_mag;
  for (std::size_t i = 0; i < mag.size(); ++i) edges[i] = mag[i] >= thr ? 1 : 0;
  return edges;
}

std::vector<EdgeComponent> edge_components(const Scene& scene, const EdgeParams& params) {
  const int H = scene.height;
  const int W = scene.width;
  const auto edges = edge_map(scene, params);
  std::vector<std::uint8_t> seen(edges.size(), 0);
  std::vector<EdgeComponent> out;
  std::deque<std::pair<int, int>> queue;
  for (int r0 = 0; r0 < H; ++r0) {
    for (int c0 = 0; c0 < W; ++c0) {
      const std::size_t i0 = static_cast<std::size_t>(r0) * W + c0;
      if (!edges[i0] || seen[i0]) continue;
      seen[i0] = 1;
      queue.emplace_back(r0, c0);
      double sum_r = 0, sum_c = 0;
      int size = 0;
      while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        sum_r += r + 0.5;
        sum_c += c + 0.5;
        ++size;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
            const std::size_t j = static_cast<std::size_t>(rr) * W + cc;
            if (edges[j] && !seen[j]) {
              seen[j] = 1;
              queue.emplace_back(rr, cc);
            }
          }
        }
      }
      if (size >= params.min_component_size) out.push_back({sum_r / size, sum_c / size, size});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const EdgeComponent& a, const EdgeComponent& b) {
    if (a.size != b.size) return a.size > b.size;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });
  return out;
}

AdvCandidateSet extract_adversarial_centers(const Scene& scene,
                                            const std::vector<PedestrianGT>& gts,
                                            const EdgeParams& params) {
  AdvCandidateSet set;
  set.scene_id = scene.id;
  const double r2 = params.exclusion_radius * params.exclusion_radius;
  for (const EdgeComponent& comp : edge_components(scene, params)) {
    const bool near_gt = std::any_of(gts.begin(), gts.end(), [&](const PedestrianGT& g) {
      const double dr = g.center_row - comp.row, dc = g.center_col - comp.col;
      return dr * dr + dc * dc < r2;
    });
    if (near_gt) continue;
    set.centers.emplace_back(comp.row, comp.col);
    set.component_sizes.push_back(comp.size);
  }
  return set;
}

double distance_to_nearest_edge(const std::vector<std::uint8_t>& edges, int height, int width,
                                double row, double col) {
  double best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      if (!edges[static_cast<std::size_t>(r) * width + c]) continue;
      const double dr = r + 0.5 - row, dc = c + 0.5 - col;
      best = std::min(best, dr * dr + dc * dc);
    }
  }
  return std::sqrt(best);
}

}  // namespace secmlops::synthdata
