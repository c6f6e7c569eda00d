#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latdyn/pendulum_env.hpp"

namespace latdyn {

struct Dataset {
  CollectConfig config;
  std::uint64_t seed = 0;
  std::vector<Trajectory> trajectories;
};

/// Writes `manifest.json` plus little-endian float32 arrays `images.f32`
/// [n, K, h, w], `controls.f32` [n, K, m] and `states.f32` [n, K, 2].
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Binary PGM (P5, maxval 255).
void write_pgm(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

void write_f32(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32(const std::filesystem::path& path, std::size_t expected);
void write_f64(const std::filesystem::path& path, const double* values, std::size_t count);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected);

/// 64-bit FNV-1a over a byte string or file contents.
std::uint64_t fnv1a(const std::string& bytes);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);
std::string read_text(const std::filesystem::path& path);

}  // namespace latdyn
