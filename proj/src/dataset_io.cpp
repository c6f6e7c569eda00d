#include "latdyn/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace latdyn {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&v, bytes, sizeof(T));
  }
  return v;
}

template <typename T>
void write_raw(const fs::path& path, const T* values, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (std::size_t i = 0; i < count; ++i) {
    const T v = to_little(values[i]);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
std::vector<T> read_raw(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(T)) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expected) +
                             " values, file holds " + std::to_string(bytes / sizeof(T)));
  }
  in.seekg(0);
  std::vector<T> out(expected);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  for (auto& v : out) v = to_little(v);
  return out;
}

}  // namespace

void write_f32(const fs::path& path, const std::vector<float>& values) {
  write_raw(path, values.data(), values.size());
}

std::vector<float> read_f32(const fs::path& path, std::size_t expected) {
  return read_raw<float>(path, expected);
}

void write_f64(const fs::path& path, const double* values, std::size_t count) {
  write_raw(path, values, count);
}

std::vector<double> read_f64(const fs::path& path, std::size_t expected) {
  return read_raw<double>(path, expected);
}

void save_dataset(const Dataset& data, const fs::path& dir) {
  if (data.trajectories.empty()) throw std::invalid_argument("save_dataset: empty dataset");
  fs::create_directories(dir);
  const auto& first = data.trajectories.front();
  const std::size_t n = data.trajectories.size();
  const std::size_t k = first.length();
  const int h = first.images.front().height;
  const int w = first.images.front().width;
  const auto m = static_cast<std::size_t>(first.controls.front().size());

  std::vector<float> images;
  std::vector<float> controls;
  std::vector<float> states;
  images.reserve(n * k * h * w);
  controls.reserve(n * k * m);
  states.reserve(n * k * 2);
  for (const auto& traj : data.trajectories) {
    if (traj.length() != k || traj.controls.size() != k || traj.plant_states.size() != k) {
      throw std::invalid_argument("save_dataset: ragged trajectories");
    }
    for (std::size_t t = 0; t < k; ++t) {
      const auto& img = traj.images[t];
      if (img.height != h || img.width != w) {
        throw std::invalid_argument("save_dataset: mixed image sizes");
      }
      for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
        images.push_back(static_cast<float>(img.pixels[i]));
      }
      for (std::size_t j = 0; j < m; ++j) {
        controls.push_back(static_cast<float>(traj.controls[t][static_cast<Eigen::Index>(j)]));
      }
      states.push_back(static_cast<float>(traj.plant_states[t].theta));
      states.push_back(static_cast<float>(traj.plant_states[t].theta_dot));
    }
  }
  write_f32(dir / "images.f32", images);
  write_f32(dir / "controls.f32", controls);
  write_f32(dir / "states.f32", states);

  const auto& c = data.config;
  json manifest = {
      {"format", "latdyn-dataset"},
      {"version", 1},
      {"seed", data.seed},
      {"dtype", "float32"},
      {"endianness", "little"},
      {"arrays",
       {{"images", {{"file", "images.f32"}, {"shape", {n, k, h, w}}}},
        {"controls", {{"file", "controls.f32"}, {"shape", {n, k, m}}}},
        {"states", {{"file", "states.f32"}, {"shape", {n, k, 2}}}}}},
      {"config",
       {{"n_traj", c.n_traj},
        {"length", c.length},
        {"action_repeat", c.action_repeat},
        {"policy_std", c.policy_std},
        {"image_size", c.image_size}}},
  };
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << manifest.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
  }
  const json manifest = json::parse(read_text(manifest_path));
  if (manifest.value("format", "") != "latdyn-dataset") {
    throw std::runtime_error(manifest_path.string() + ": not a latdyn dataset manifest");
  }
  const auto shape = manifest.at("arrays").at("images").at("shape").get<std::vector<std::size_t>>();
  const auto cshape =
      manifest.at("arrays").at("controls").at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 4 || cshape.size() != 3) {
    throw std::runtime_error(manifest_path.string() + ": malformed array shapes");
  }
  const std::size_t n = shape[0], k = shape[1], h = shape[2], w = shape[3], m = cshape[2];

  Dataset data;
  data.seed = manifest.at("seed").get<std::uint64_t>();
  const auto& cfg = manifest.at("config");
  data.config.n_traj = cfg.at("n_traj").get<std::size_t>();
  data.config.length = cfg.at("length").get<std::size_t>();
  data.config.action_repeat = cfg.at("action_repeat").get<int>();
  data.config.policy_std = cfg.at("policy_std").get<double>();
  data.config.image_size = cfg.at("image_size").get<int>();

  const auto images = read_f32(dir / "images.f32", n * k * h * w);
  const auto controls = read_f32(dir / "controls.f32", n * k * m);
  const auto states = read_f32(dir / "states.f32", n * k * 2);

  data.trajectories.resize(n);
  std::size_t pi = 0, ci = 0, si = 0;
  for (auto& traj : data.trajectories) {
    for (std::size_t t = 0; t < k; ++t) {
      Image img(static_cast<int>(h), static_cast<int>(w));
      for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels[i] = images[pi++];
      Eigen::VectorXd u(static_cast<Eigen::Index>(m));
      for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = controls[ci++];
      PlantState s;
      s.theta = states[si++];
      s.theta_dot = states[si++];
      traj.images.push_back(std::move(img));
      traj.controls.push_back(std::move(u));
      traj.plant_states.push_back(s);
    }
  }
  return data;
}

void write_pgm(const Image& img, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    const double v = std::clamp(img.pixels[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

Image read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error(path.string() + ": not a P5 PGM");
  in.get();
  Image img(h, w);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = static_cast<unsigned char>(in.get()) / 255.0;
  }
  return img;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t hash_file(const fs::path& path) { return fnv1a(read_text(path)); }

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace latdyn
