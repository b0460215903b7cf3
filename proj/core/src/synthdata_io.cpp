#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "secmlops/digest.hpp"
#include "secmlops/error.hpp"
#include "secmlops/synthdata.hpp"

namespace secmlops::synthdata {

void to_json(nlohmann::json& j, const Box& b) {
  j = nlohmann::json{{"top", b.top}, {"left", b.left}, {"bottom", b.bottom}, {"right", b.right}};
}
void from_json(const nlohmann::json& j, Box& b) {
  j.at("top").get_to(b.top);
  j.at("left").get_to(b.left);
  j.at("bottom").get_to(b.bottom);
  j.at("right").get_to(b.right);
}

void to_json(nlohmann::json& j, const PedestrianGT& g) {
  j = nlohmann::json{{"center_row", g.center_row}, {"center_col", g.center_col},
                     {"height", g.height},         {"width", g.width},
                     {"visibility", g.visibility}, {"ignore", g.ignore}};
}
void from_json(const nlohmann::json& j, PedestrianGT& g) {
  j.at("center_row").get_to(g.center_row);
  j.at("center_col").get_to(g.center_col);
  j.at("height").get_to(g.height);
  j.at("width").get_to(g.width);
  j.at("visibility").get_to(g.visibility);
  j.at("ignore").get_to(g.ignore);
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"train_scenes", c.train_scenes},
                     {"val_scenes", c.val_scenes},
                     {"test_scenes", c.test_scenes},
                     {"golden_fraction", c.golden_fraction},
                     {"pedestrians_min", c.pedestrians_min},
                     {"pedestrians_max", c.pedestrians_max},
                     {"pedestrian_height_min", c.pedestrian_height_min},
                     {"pedestrian_height_max", c.pedestrian_height_max},
                     {"aspect", c.aspect},
                     {"occlusion_probability", c.occlusion_probability},
                     {"ignore_probability", c.ignore_probability},
                     {"distractors_min", c.distractors_min},
                     {"distractors_max", c.distractors_max},
                     {"pole_fraction", c.pole_fraction},
                     {"noise_stddev", c.noise_stddev}};
}

// Missing keys keep their defaults so configs can be partial.
void from_json(const nlohmann::json& j, DatasetConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("height", c.height);
  opt("width", c.width);
  opt("train_scenes", c.train_scenes);
  opt("val_scenes", c.val_scenes);
  opt("test_scenes", c.test_scenes);
  opt("golden_fraction", c.golden_fraction);
  opt("pedestrians_min", c.pedestrians_min);
  opt("pedestrians_max", c.pedestrians_max);
  opt("pedestrian_height_min", c.pedestrian_height_min);
  opt("pedestrian_height_max", c.pedestrian_height_max);
  opt("aspect", c.aspect);
  opt("occlusion_probability", c.occlusion_probability);
  opt("ignore_probability", c.ignore_probability);
  opt("distractors_min", c.distractors_min);
  opt("distractors_max", c.distractors_max);
  opt("pole_fraction", c.pole_fraction);
  opt("noise_stddev", c.noise_stddev);
}

void to_json(nlohmann::json& j, const DatasetSplit& s) {
  j = nlohmann::json{{"train", s.train},
                     {"val", s.val},
                     {"test", s.test},
                     {"golden", s.golden},
                     {"golden_fraction", s.golden_fraction}};
}
void from_json(const nlohmann::json& j, DatasetSplit& s) {
  j.at("train").get_to(s.train);
  j.at("val").get_to(s.val);
  j.at("test").get_to(s.test);
  j.at("golden").get_to(s.golden);
  j.at("golden_fraction").get_to(s.golden_fraction);
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

std::string scene_bytes(const Scene& scene, const char (&magic)[4]) {
  std::string out;
  out.reserve(16 + scene.pixels.size() * 8);
  out.append(magic, 4);
  put_u32(out, static_cast<std::uint32_t>(scene.height));
  put_u32(out, static_cast<std::uint32_t>(scene.width));
  put_u32(out, 0);
  for (double v : scene.pixels) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  return out;
}

std::string scene_file_name(int id) {
  std::ostringstream name;
  name << "scene_" << std::setw(6) << std::setfill('0') << id << ".smlb";
  return name.str();
}

nlohmann::json index_json(const Dataset& ds) {
  nlohmann::json scenes = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
    scenes.push_back({{"id", ds.scenes[i].id},
                      {"file", scene_file_name(ds.scenes[i].id)},
                      {"rng_seed", ds.scenes[i].rng_seed},
                      {"pedestrians", ds.labels[i].pedestrians},
                      {"occluders", ds.labels[i].occluders},
                      {"distractors", ds.labels[i].distractors}});
  }
  return {{"format", "secmlops-dataset/1"},
          {"seed", ds.seed},
          {"config", ds.config},
          {"split", ds.split},
          {"scenes", std::move(scenes)}};
}

}  // namespace

void write_scene_array(const Scene& scene, const std::filesystem::path& file, const char (&magic)[4]) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open " + file.string());
  const std::string bytes = scene_bytes(scene, magic);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + file.string());
}

Scene read_scene_array(const std::filesystem::path& file, std::string* magic_out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + file.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16) throw Error(ErrorKind::kFormat, file.string() + ": truncated header");
  const std::string magic = bytes.substr(0, 4);
  if (magic != "SMLB" && magic != "SMLA") throw Error(ErrorKind::kFormat, file.string() + ": bad magic");
  Scene scene;
  scene.height = static_cast<int>(get_u32(bytes.data() + 4));
  scene.width = static_cast<int>(get_u32(bytes.data() + 8));
  const std::size_t n = static_cast<std::size_t>(scene.height) * scene.width;
  if (bytes.size() != 16 + 8 * n) throw Error(ErrorKind::kFormat, file.string() + ": size mismatch");
  scene.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[16 + 8 * i + b])) << (8 * b);
    scene.pixels[i] = std::bit_cast<double>(bits);
  }
  if (magic_out) *magic_out = magic;
  return scene;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const Scene& scene : dataset.scenes) write_scene_array(scene, dir / scene_file_name(scene.id));
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write index.json in " + dir.string());
  out << index_json(dataset).dump(1) << '\n';
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorKind::kIo, "missing index.json in " + dir.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("index.json: ") + e.what());
  }
  Dataset ds;
  ds.seed = index.at("seed").get<std::uint64_t>();
  ds.config = index.at("config").get<DatasetConfig>();
  ds.split = index.at("split").get<DatasetSplit>();
  for (const auto& entry : index.at("scenes")) {
    Scene scene = read_scene_array(dir / entry.at("file").get<std::string>());
    scene.id = entry.at("id").get<int>();
    scene.rng_seed = entry.at("rng_seed").get<std::uint64_t>();
    if (scene.id != static_cast<int>(ds.scenes.size()))
      throw Error(ErrorKind::kFormat, "scene ids must be dense and ordered");
    SceneLabels labels;
    entry.at("pedestrians").get_to(labels.pedestrians);
    entry.at("occluders").get_to(labels.occluders);
    entry.at("distractors").get_to(labels.distractors);
    ds.scenes.push_back(std::move(scene));
    ds.labels.push_back(std::move(labels));
  }
  return ds;
}

std::string dataset_digest(const Dataset& dataset) {
  std::string bytes = index_json(dataset).dump();
  for (const Scene& scene : dataset.scenes) bytes += scene_bytes(scene, kSceneMagic);
  return sha256_hex(bytes);
}

}  // namespace secmlops::synthdata
