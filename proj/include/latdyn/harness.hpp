#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latdyn/dataset_io.hpp"
#include "latdyn/latent_mpc.hpp"
#include "latdyn/model.hpp"
#include "latdyn/trainer.hpp"

namespace latdyn {

/// Bad configuration, arguments or missing inputs (CLI exit code 1).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { predict, control, visualize_latents };

std::string to_string(ExperimentKind kind);

struct PredictOptions {
  std::size_t first_sequence = 0;
  std::size_t num_sequences = 32;
  std::size_t init_frames = 4;
  std::size_t predict_frames = 20;
  bool corrupt = true;
  /// 1-based frames of the initial window that get corrupted.
  std::size_t noise_frame = 2;
  double noise_sigma = 0.4;
  std::size_t occlusion_frame = 4;
  double occlusion_area = 0.4;
  std::size_t dump_frames = 0;  // PGM dumps for the first N sequences
};

struct ControlOptions {
  /// (N_o occlusions, D steps each)
  std::vector<std::pair<std::size_t, std::size_t>> settings = {{0, 0}, {1, 1}, {2, 1},
                                                               {1, 2}, {2, 2}, {3, 2}};
  double goal_theta = 2.9;      // rad, 0 is pointing up
  double initial_spread = 1.0;  // initial angle ~ goal_theta + U(-spread, spread)
  double occlusion_area = 0.4;
  double occlusion_intensity = 1.0;
  EpisodeConfig episode;
};

struct LatentOptions {
  std::size_t first_sequence = 0;
  std::size_t num_sequences = 32;
  /// Fraction of frames replaced by an occluded version.
  double occluded_fraction = 0.0;
  double occlusion_area = 0.4;
};

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::predict;
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;  // predict and latents
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<bool> heteroscedastic = {true, false};
  PredictOptions predict;
  ControlOptions control;
  LatentOptions latents;

  /// Throws ValidationError naming the offending field or missing path.
  void validate() const;
};

/// Parses one experiment section. Unknown keys are rejected.
ExperimentSpec parse_experiment(const nlohmann::json& j, ExperimentKind kind);
nlohmann::json experiment_to_json(const ExperimentSpec& spec);

struct MetricsRecord {
  std::string label;
  bool heteroscedastic = true;
  std::uint64_t seed = 0;
  std::size_t index = 0;              // sequence or occlusion-setting index
  std::vector<double> frame_mse;      // predict
  double mean_mse = 0.0;              // predict
  double tracking_error = 0.0;        // control
  std::vector<double> alphas;
  bool truncated = false;
  double seconds = 0.0;
};

/// One-sided sign test of "a < b" over paired samples; ties are dropped.
struct PairedComparison {
  std::size_t n = 0;
  std::size_t wins = 0;  // a < b
  std::size_t losses = 0;
  std::size_t ties = 0;
  double p_value = 1.0;
  double median_a = 0.0;
  double median_b = 0.0;
  double mean_a = 0.0;
  double mean_b = 0.0;
};

PairedComparison compare_paired(const std::vector<double>& a, const std::vector<double>& b);
double median(std::vector<double> v);

struct PredictionOutcome {
  std::vector<Image> predicted;
  std::vector<double> frame_mse;
  std::vector<double> alphas;  // of the initial window
};

/// Infers the window from `observed` (init_frames images, possibly
/// corrupted), rolls the mean forward under the recorded controls and decodes
/// `predict_frames` images, scored against the clean trajectory frames.
PredictionOutcome predict_sequence(const Model& model, const Trajectory& traj,
                                   std::span<const Image> observed, bool heteroscedastic,
                                   std::size_t predict_frames);

struct PredictResult {
  std::vector<MetricsRecord> records;
  PairedComparison comparison;  // heteroscedastic vs not, when both ran
};

PredictResult run_predict(const ExperimentSpec& spec, const Model& model, const Dataset& data);

struct ControlResult {
  std::vector<MetricsRecord> records;
  std::vector<PairedComparison> per_setting;  // heteroscedastic vs not
};

/// Occlusion schedule for an episode of `steps` steps: `n_occlusions` events
/// of `duration` steps at uniform random starts.
CorruptionSpec occlusion_schedule(std::size_t n_occlusions, std::size_t duration,
                                  std::size_t steps, int image_size, double area,
                                  double intensity, std::mt19937_64& rng);

ControlResult run_control(const ExperimentSpec& spec, const Model& model);

struct LatentRow {
  std::size_t sequence = 0;
  std::size_t frame = 0;
  Eigen::VectorXd z;
  double theta = 0.0;
  double theta_dot = 0.0;
  double alpha = 1.0;
  bool corrupted = false;
  bool heteroscedastic = true;
};

std::vector<LatentRow> dump_latents(const ExperimentSpec& spec, const Model& model,
                                    const Dataset& data);

/// FNV-1a over the manifest and every tensor file.
std::uint64_t checkpoint_hash(const std::filesystem::path& dir);
std::uint64_t config_hash(const nlohmann::json& config);

/// <output_dir>/run-<config hash>; deterministic so reruns overwrite.
std::filesystem::path run_directory(const std::filesystem::path& output_dir,
                                    const nlohmann::json& config);

/// File-writing front ends used by the CLI. Each returns the directory
/// written to.
struct GenDataSpec {
  CollectConfig collect;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::size_t dump_pgm = 0;  // frames of trajectory 0 written as PGM
};
GenDataSpec parse_gen_data(const nlohmann::json& j);
std::filesystem::path run_gen_data(const GenDataSpec& spec);

struct TrainSpec {
  TrainConfig train;
  std::filesystem::path dataset;
  std::filesystem::path checkpoint_dir;
};
TrainSpec parse_train(const nlohmann::json& j);
std::filesystem::path run_train(const TrainSpec& spec, bool verbose);

std::filesystem::path run_experiment(const ExperimentSpec& spec, bool verbose);

}  // namespace latdyn
