#include "latdyn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/binomial.hpp>

namespace latdyn {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::predict: return "predict";
    case ExperimentKind::control: return "control";
    case ExperimentKind::visualize_latents: return "latents";
  }
  return "unknown";
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ValidationError("config key '" + key + "' has the wrong type: " + v.dump());
  }
}

std::vector<bool> parse_flags(const json& v) {
  if (v.is_boolean()) return {v.get<bool>()};
  if (v.is_string() && v.get<std::string>() == "both") return {true, false};
  throw ValidationError("config key 'heteroscedastic' must be true, false or \"both\"");
}

json flags_to_json(const std::vector<bool>& flags) {
  if (flags.size() == 2) return "both";
  return flags.empty() ? json(nullptr) : json(static_cast<bool>(flags.front()));
}

std::vector<std::uint64_t> parse_seeds(const json& v) {
  if (v.is_number_unsigned()) {
    std::vector<std::uint64_t> s(v.get<std::size_t>());
    std::iota(s.begin(), s.end(), std::uint64_t{0});
    return s;
  }
  return get_as<std::vector<std::uint64_t>>(v, "seeds");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

json comparison_json(const PairedComparison& c) {
  return {{"n", c.n},          {"wins", c.wins},         {"losses", c.losses},
          {"ties", c.ties},    {"p_value", c.p_value},   {"median_heteroscedastic", c.median_a},
          {"median_homoscedastic", c.median_b},          {"mean_heteroscedastic", c.mean_a},
          {"mean_homoscedastic", c.mean_b}};
}

}  // namespace

void ExperimentSpec::validate() const {
  require(!checkpoint.empty(), "experiment: 'checkpoint' is required");
  require(fs::exists(checkpoint / "manifest.json"),
          "checkpoint not found: " + (checkpoint / "manifest.json").string());
  if (kind != ExperimentKind::control) {
    require(!dataset.empty(), "experiment: 'dataset' is required");
    require(fs::exists(dataset / "manifest.json"),
            "dataset not found: " + (dataset / "manifest.json").string());
  }
  require(!seeds.empty(), "experiment: 'seeds' must be non-empty");
  require(!heteroscedastic.empty(), "experiment: no heteroscedastic setting selected");
  switch (kind) {
    case ExperimentKind::predict: {
      const auto& p = predict;
      require(p.num_sequences >= 1, "predict: num_sequences must be >= 1");
      require(p.init_frames >= 1, "predict: init_frames must be >= 1");
      require(p.predict_frames >= 1, "predict: predict_frames must be >= 1");
      if (p.corrupt) {
        require(p.noise_frame >= 1 && p.noise_frame <= p.init_frames,
                "predict: noise_frame must lie in the initial window");
        require(p.occlusion_frame >= 1 && p.occlusion_frame <= p.init_frames,
                "predict: occlusion_frame must lie in the initial window");
        require(p.noise_sigma >= 0.0, "predict: noise_sigma must be >= 0");
        require(p.occlusion_area > 0.0 && p.occlusion_area <= 1.0,
                "predict: occlusion_area must be in (0, 1]");
      }
      break;
    }
    case ExperimentKind::control: {
      const auto& c = control;
      require(!c.settings.empty(), "control: 'settings' must be non-empty");
      for (const auto& [n_o, d] : c.settings) {
        require(n_o == 0 || d >= 1,
                "control: an occlusion setting with N_o > 0 needs D >= 1");
        require(d <= c.episode.steps, "control: occlusion duration exceeds the episode");
      }
      require(c.episode.mpc.horizon >= 1, "control: horizon must be >= 1");
      require(c.episode.mpc.max_iters >= 1, "control: max_iters must be >= 1");
      require(c.episode.mpc.tol > 0.0, "control: tol must be > 0");
      require(c.episode.init_window >= 1, "control: init_window must be >= 1");
      require(c.episode.goal_window >= 1, "control: goal_window must be >= 1");
      require(c.episode.action_repeat >= 1, "control: action_repeat must be >= 1");
      require(c.occlusion_area > 0.0 && c.occlusion_area <= 1.0,
              "control: occlusion_area must be in (0, 1]");
      require(c.initial_spread >= 0.0, "control: initial_spread must be >= 0");
      break;
    }
    case ExperimentKind::visualize_latents: {
      const auto& l = latents;
      require(l.num_sequences >= 1, "latents: num_sequences must be >= 1");
      require(l.occluded_fraction >= 0.0 && l.occluded_fraction <= 1.0,
              "latents: occluded_fraction must be in [0, 1]");
      require(l.occlusion_area > 0.0 && l.occlusion_area <= 1.0,
              "latents: occlusion_area must be in (0, 1]");
      break;
    }
  }
}

ExperimentSpec parse_experiment(const json& j, ExperimentKind kind) {
  require(j.is_object(), to_string(kind) + " config must be a JSON object");
  ExperimentSpec s;
  s.kind = kind;
  for (const auto& [key, v] : j.items()) {
    if (key == "checkpoint") s.checkpoint = get_as<std::string>(v, key);
    else if (key == "dataset") s.dataset = get_as<std::string>(v, key);
    else if (key == "output_dir") s.output_dir = get_as<std::string>(v, key);
    else if (key == "seeds") s.seeds = parse_seeds(v);
    else if (key == "heteroscedastic") s.heteroscedastic = parse_flags(v);
    else if (kind == ExperimentKind::predict) {
      auto& p = s.predict;
      if (key == "first_sequence") p.first_sequence = get_as<std::size_t>(v, key);
      else if (key == "num_sequences") p.num_sequences = get_as<std::size_t>(v, key);
      else if (key == "init_frames") p.init_frames = get_as<std::size_t>(v, key);
      else if (key == "predict_frames") p.predict_frames = get_as<std::size_t>(v, key);
      else if (key == "corrupt") p.corrupt = get_as<bool>(v, key);
      else if (key == "noise_frame") p.noise_frame = get_as<std::size_t>(v, key);
      else if (key == "noise_sigma") p.noise_sigma = get_as<double>(v, key);
      else if (key == "occlusion_frame") p.occlusion_frame = get_as<std::size_t>(v, key);
      else if (key == "occlusion_area") p.occlusion_area = get_as<double>(v, key);
      else if (key == "dump_frames") p.dump_frames = get_as<std::size_t>(v, key);
      else throw ValidationError("unknown predict config key: " + key);
    } else if (kind == ExperimentKind::control) {
      auto& c = s.control;
      auto& e = c.episode;
      if (key == "settings") {
        c.settings = get_as<std::vector<std::pair<std::size_t, std::size_t>>>(v, key);
      } else if (key == "goal_theta") c.goal_theta = get_as<double>(v, key);
      else if (key == "initial_spread") c.initial_spread = get_as<double>(v, key);
      else if (key == "occlusion_area") c.occlusion_area = get_as<double>(v, key);
      else if (key == "occlusion_intensity") c.occlusion_intensity = get_as<double>(v, key);
      else if (key == "steps") e.steps = get_as<std::size_t>(v, key);
      else if (key == "init_window") e.init_window = get_as<std::size_t>(v, key);
      else if (key == "goal_window") e.goal_window = get_as<std::size_t>(v, key);
      else if (key == "action_repeat") e.action_repeat = get_as<int>(v, key);
      else if (key == "alpha_max") e.alpha_max = get_as<double>(v, key);
      else if (key == "horizon") e.mpc.horizon = get_as<std::size_t>(v, key);
      else if (key == "max_iters") e.mpc.max_iters = get_as<int>(v, key);
      else if (key == "tol") e.mpc.tol = get_as<double>(v, key);
      else throw ValidationError("unknown control config key: " + key);
    } else {
      auto& l = s.latents;
      if (key == "first_sequence") l.first_sequence = get_as<std::size_t>(v, key);
      else if (key == "num_sequences") l.num_sequences = get_as<std::size_t>(v, key);
      else if (key == "occluded_fraction") l.occluded_fraction = get_as<double>(v, key);
      else if (key == "occlusion_area") l.occlusion_area = get_as<double>(v, key);
      else throw ValidationError("unknown latents config key: " + key);
    }
  }
  return s;
}

json experiment_to_json(const ExperimentSpec& s) {
  json j = {{"kind", to_string(s.kind)},
            {"checkpoint", s.checkpoint.generic_string()},
            {"output_dir", s.output_dir.generic_string()},
            {"seeds", s.seeds},
            {"heteroscedastic", flags_to_json(s.heteroscedastic)}};
  switch (s.kind) {
    case ExperimentKind::predict: {
      const auto& p = s.predict;
      j["dataset"] = s.dataset.generic_string();
      j["first_sequence"] = p.first_sequence;
      j["num_sequences"] = p.num_sequences;
      j["init_frames"] = p.init_frames;
      j["predict_frames"] = p.predict_frames;
      j["corrupt"] = p.corrupt;
      j["noise_frame"] = p.noise_frame;
      j["noise_sigma"] = p.noise_sigma;
      j["occlusion_frame"] = p.occlusion_frame;
      j["occlusion_area"] = p.occlusion_area;
      j["dump_frames"] = p.dump_frames;
      break;
    }
    case ExperimentKind::control: {
      const auto& c = s.control;
      j["settings"] = c.settings;
      j["goal_theta"] = c.goal_theta;
      j["initial_spread"] = c.initial_spread;
      j["occlusion_area"] = c.occlusion_area;
      j["occlusion_intensity"] = c.occlusion_intensity;
      j["steps"] = c.episode.steps;
      j["init_window"] = c.episode.init_window;
      j["goal_window"] = c.episode.goal_window;
      j["action_repeat"] = c.episode.action_repeat;
      j["alpha_max"] = c.episode.alpha_max;
      j["horizon"] = c.episode.mpc.horizon;
      j["max_iters"] = c.episode.mpc.max_iters;
      j["tol"] = c.episode.mpc.tol;
      break;
    }
    case ExperimentKind::visualize_latents: {
      const auto& l = s.latents;
      j["dataset"] = s.dataset.generic_string();
      j["first_sequence"] = l.first_sequence;
      j["num_sequences"] = l.num_sequences;
      j["occluded_fraction"] = l.occluded_fraction;
      j["occlusion_area"] = l.occlusion_area;
      break;
    }
  }
  return j;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

PairedComparison compare_paired(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("compare_paired: length mismatch");
  PairedComparison c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) ++c.wins;
    else if (a[i] > b[i]) ++c.losses;
    else ++c.ties;
  }
  c.n = c.wins + c.losses;
  if (c.n > 0) {
    // P(X >= wins), X ~ Bin(n, 1/2)
    const boost::math::binomial_distribution<double> bin(static_cast<double>(c.n), 0.5);
    c.p_value = c.wins == 0 ? 1.0 : boost::math::cdf(boost::math::complement(bin, c.wins - 1.0));
  }
  if (!a.empty()) {
    c.median_a = median(a);
    c.median_b = median(b);
    c.mean_a = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    c.mean_b = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  }
  return c;
}

PredictionOutcome predict_sequence(const Model& model, const Trajectory& traj,
                                   std::span<const Image> observed, bool heteroscedastic,
                                   std::size_t predict_frames) {
  const std::size_t t0 = observed.size();
  if (t0 == 0) throw std::invalid_argument("predict: empty initial window");
  if (traj.length() < t0 + predict_frames) {
    throw std::invalid_argument("predict: sequence of length " + std::to_string(traj.length()) +
                                " is shorter than " + std::to_string(t0 + predict_frames) +
                                " frames");
  }
  const LatentWindow w = infer_window(observed, traj.controls, model, heteroscedastic);
  const std::span<const Eigen::VectorXd> future(traj.controls.data() + t0 - 1, predict_frames);
  const DynamicsNet net = model.dynamics();
  const ParamRollout roll =
      net.rollout_params(model.store, w.latents.back().mean, future, w.hidden);

  Eigen::MatrixXd A(model.config.measurement_dim, static_cast<Eigen::Index>(predict_frames));
  for (std::size_t j = 0; j < predict_frames; ++j) {
    A.col(static_cast<Eigen::Index>(j)) = roll.steps[j].C * roll.means[j + 1];
  }
  const Eigen::MatrixXd X = model.codec().decode_means(model.store, A);

  PredictionOutcome out;
  out.alphas = w.alphas;
  const int hw = model.config.image_size;
  for (std::size_t j = 0; j < predict_frames; ++j) {
    Image img(hw, hw, 0.0);
    img.pixels = X.col(static_cast<Eigen::Index>(j));
    const auto& truth = traj.images[t0 + j];
    out.frame_mse.push_back((img.pixels - truth.pixels).squaredNorm() /
                            static_cast<double>(img.size()));
    out.predicted.push_back(std::move(img));
  }
  return out;
}

PredictResult run_predict(const ExperimentSpec& spec, const Model& model, const Dataset& data) {
  const auto& p = spec.predict;
  if (p.first_sequence + p.num_sequences > data.trajectories.size()) {
    throw ValidationError("predict: dataset has " + std::to_string(data.trajectories.size()) +
                          " sequences, need " +
                          std::to_string(p.first_sequence + p.num_sequences));
  }
  const int hw = model.config.image_size;
  if (data.config.image_size != hw) {
    throw ValidationError("predict: dataset image size " + std::to_string(data.config.image_size) +
                          " does not match checkpoint image size " + std::to_string(hw));
  }
  const std::uint64_t seed = spec.seeds.front();

  PredictResult res;
  std::vector<double> on, off;
  for (std::size_t i = p.first_sequence; i < p.first_sequence + p.num_sequences; ++i) {
    const Trajectory& traj = data.trajectories[i];
    if (traj.length() < p.init_frames + p.predict_frames) {
      throw ValidationError("predict: sequence " + std::to_string(i) + " is too short");
    }
    std::mt19937_64 rng(derive_seed(seed, i));
    std::vector<Image> observed(traj.images.begin(),
                                traj.images.begin() + static_cast<std::ptrdiff_t>(p.init_frames));
    if (p.corrupt) {
      const CorruptionEvent noise{p.noise_frame - 1, 1, GaussianNoise{p.noise_sigma}};
      const CorruptionEvent occl{p.occlusion_frame - 1, 1,
                                 random_occlusion(hw, hw, p.occlusion_area, 1.0, rng)};
      for (const auto& ev : {noise, occl}) {
        observed[ev.step] = corrupt(observed[ev.step], std::span(&ev, 1), rng);
      }
    }
    for (bool flag : spec.heteroscedastic) {
      const auto t0 = Clock::now();
      PredictionOutcome out = predict_sequence(model, traj, observed, flag, p.predict_frames);
      MetricsRecord r;
      r.label = "seq" + std::to_string(i) + (flag ? "_on" : "_off");
      r.heteroscedastic = flag;
      r.seed = seed;
      r.index = i;
      r.frame_mse = out.frame_mse;
      r.mean_mse = std::accumulate(out.frame_mse.begin(), out.frame_mse.end(), 0.0) /
                   static_cast<double>(out.frame_mse.size());
      r.alphas = out.alphas;
      r.seconds = seconds_since(t0);
      (flag ? on : off).push_back(r.mean_mse);
      if (!spec.output_dir.empty() && i < p.first_sequence + p.dump_frames) {
        const fs::path dir = spec.output_dir / "frames" / r.label;
        for (std::size_t k = 0; k < observed.size(); ++k) {
          write_pgm(observed[k], dir / ("input_" + std::to_string(k + 1) + ".pgm"));
        }
        for (std::size_t k = 0; k < out.predicted.size(); ++k) {
          const auto frame = std::to_string(p.init_frames + k + 1);
          write_pgm(out.predicted[k], dir / ("pred_" + frame + ".pgm"));
          write_pgm(traj.images[p.init_frames + k], dir / ("truth_" + frame + ".pgm"));
        }
      }
      res.records.push_back(std::move(r));
    }
  }
  if (!on.empty() && on.size() == off.size()) res.comparison = compare_paired(on, off);
  return res;
}

CorruptionSpec occlusion_schedule(std::size_t n_occlusions, std::size_t duration,
                                  std::size_t steps, int image_size, double area,
                                  double intensity, std::mt19937_64& rng) {
  CorruptionSpec spec;
  if (n_occlusions == 0 || duration == 0) return spec;
  if (duration > steps) throw std::invalid_argument("occlusion duration exceeds the episode");
  std::uniform_int_distribution<std::size_t> start(1, steps - duration + 1);
  for (std::size_t i = 0; i < n_occlusions; ++i) {
    const std::size_t k = start(rng);
    spec.events.push_back(
        {k, duration, random_occlusion(image_size, image_size, area, intensity, rng)});
  }
  return spec;
}

ControlResult run_control(const ExperimentSpec& spec, const Model& model) {
  const auto& c = spec.control;
  const int hw = model.config.image_size;
  const PlantState goal{wrap_angle(c.goal_theta), 0.0};

  ControlResult res;
  res.per_setting.resize(c.settings.size());
  std::vector<std::vector<double>> on(c.settings.size()), off(c.settings.size());
  for (const std::uint64_t seed : spec.seeds) {
    std::mt19937_64 init_rng(derive_seed(seed, 0x1417));
    std::uniform_real_distribution<double> spread(-c.initial_spread, c.initial_spread);
    const PlantState initial{wrap_angle(c.goal_theta + spread(init_rng)), 0.0};

    for (std::size_t j = 0; j < c.settings.size(); ++j) {
      const auto [n_o, d] = c.settings[j];
      std::mt19937_64 sched_rng(derive_seed(seed, 0x5C00 + j));
      const CorruptionSpec schedule = occlusion_schedule(
          n_o, d, c.episode.steps, hw, c.occlusion_area, c.occlusion_intensity, sched_rng);
      const std::uint64_t noise_seed = derive_seed(seed, 0x9000 + j);

      for (bool flag : spec.heteroscedastic) {
        EpisodeConfig ecfg = c.episode;
        ecfg.heteroscedastic = flag;
        const auto t0 = Clock::now();
        const EpisodeLog log =
            receding_horizon_run(initial, goal, schedule, model, ecfg, noise_seed);
        MetricsRecord r;
        r.label = "setting" + std::to_string(j) + "_seed" + std::to_string(seed) +
                  (flag ? "_on" : "_off");
        r.heteroscedastic = flag;
        r.seed = seed;
        r.index = j;
        r.tracking_error = log.cumulative_error;
        r.truncated = log.truncated;
        for (const auto& rec : log.records) r.alphas.push_back(rec.alpha);
        r.seconds = seconds_since(t0);
        (flag ? on[j] : off[j]).push_back(r.tracking_error);

        if (!spec.output_dir.empty()) {
          auto out = open_out(spec.output_dir / "episodes" / (r.label + ".jsonl"));
          for (const auto& rec : log.records) {
            const json line = {{"k", rec.k},
                               {"u", std::vector<double>(rec.control.data(),
                                                         rec.control.data() + rec.control.size())},
                               {"theta", rec.state.theta},
                               {"theta_dot", rec.state.theta_dot},
                               {"alpha", rec.alpha},
                               {"stage_cost", rec.stage_cost},
                               {"planned_cost", rec.planned_cost},
                               {"solves", rec.solves},
                               {"converged", rec.converged},
                               {"corrupted", rec.corrupted}};
            out << line.dump() << '\n';
          }
          if (log.truncated) out << json{{"truncated", true}}.dump() << '\n';
        }
        res.records.push_back(std::move(r));
      }
    }
  }
  for (std::size_t j = 0; j < c.settings.size(); ++j) {
    if (!on[j].empty() && on[j].size() == off[j].size()) {
      res.per_setting[j] = compare_paired(on[j], off[j]);
    }
  }
  return res;
}

std::vector<LatentRow> dump_latents(const ExperimentSpec& spec, const Model& model,
                                    const Dataset& data) {
  const auto& l = spec.latents;
  if (l.first_sequence + l.num_sequences > data.trajectories.size()) {
    throw ValidationError("latents: dataset has " + std::to_string(data.trajectories.size()) +
                          " sequences, need " +
                          std::to_string(l.first_sequence + l.num_sequences));
  }
  const int hw = model.config.image_size;
  const std::uint64_t seed = spec.seeds.front();
  std::vector<LatentRow> rows;
  for (std::size_t i = l.first_sequence; i < l.first_sequence + l.num_sequences; ++i) {
    const Trajectory& traj = data.trajectories[i];
    std::mt19937_64 rng(derive_seed(seed, i));
    std::bernoulli_distribution pick(l.occluded_fraction);
    std::vector<Image> frames = traj.images;
    std::vector<bool> corrupted(frames.size(), false);
    for (std::size_t k = 0; k < frames.size(); ++k) {
      if (l.occluded_fraction > 0.0 && pick(rng)) {
        const CorruptionEvent ev{k, 1, random_occlusion(hw, hw, l.occlusion_area, 1.0, rng)};
        frames[k] = corrupt(frames[k], std::span(&ev, 1), rng);
        corrupted[k] = true;
      }
    }
    for (bool flag : spec.heteroscedastic) {
      const LatentWindow w = infer_window(frames, traj.controls, model, flag);
      for (std::size_t k = 0; k < frames.size(); ++k) {
        rows.push_back({i, k, w.latents[k].mean, traj.plant_states[k].theta,
                        traj.plant_states[k].theta_dot, w.alphas[k], corrupted[k], flag});
      }
    }
  }
  return rows;
}

std::uint64_t checkpoint_hash(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const std::string text = read_text(manifest_path);
  std::string acc = hex64(fnv1a(text));
  const json manifest = json::parse(text);
  for (const auto& p : manifest.at("parameters")) {
    acc += hex64(hash_file(dir / p.at("file").get<std::string>()));
  }
  return fnv1a(acc);
}

std::uint64_t config_hash(const json& config) { return fnv1a(config.dump()); }

fs::path run_directory(const fs::path& output_dir, const json& config) {
  return output_dir / ("run-" + hex64(config_hash(config)));
}

GenDataSpec parse_gen_data(const json& j) {
  require(j.is_object(), "gen-data config must be a JSON object");
  GenDataSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "output_dir") s.output_dir = get_as<std::string>(v, key);
    else if (key == "seed") s.seed = get_as<std::uint64_t>(v, key);
    else if (key == "n_traj") s.collect.n_traj = get_as<std::size_t>(v, key);
    else if (key == "length") s.collect.length = get_as<std::size_t>(v, key);
    else if (key == "action_repeat") s.collect.action_repeat = get_as<int>(v, key);
    else if (key == "policy_std") s.collect.policy_std = get_as<double>(v, key);
    else if (key == "image_size") s.collect.image_size = get_as<int>(v, key);
    else if (key == "dump_pgm") s.dump_pgm = get_as<std::size_t>(v, key);
    else throw ValidationError("unknown gen-data config key: " + key);
  }
  require(!s.output_dir.empty(), "gen-data: 'output_dir' is required");
  require(s.collect.n_traj >= 1, "gen-data: n_traj must be >= 1");
  require(s.collect.length >= 1, "gen-data: length must be >= 1");
  require(s.collect.action_repeat >= 1, "gen-data: action_repeat must be >= 1");
  require(s.collect.policy_std >= 0.0, "gen-data: policy_std must be >= 0");
  require(s.collect.image_size >= 4 && s.collect.image_size <= 64,
          "gen-data: image_size must be in [4, 64]");
  return s;
}

fs::path run_gen_data(const GenDataSpec& spec) {
  Dataset data;
  data.config = spec.collect;
  data.seed = spec.seed;
  data.trajectories = collect_trajectories(spec.collect, spec.seed);
  save_dataset(data, spec.output_dir);
  const auto& first = data.trajectories.front();
  for (std::size_t k = 0; k < std::min(spec.dump_pgm, first.length()); ++k) {
    write_pgm(first.images[k], spec.output_dir / "frames" / ("traj0_" + std::to_string(k) + ".pgm"));
  }
  return spec.output_dir;
}

TrainSpec parse_train(const json& j) {
  require(j.is_object(), "train config must be a JSON object");
  TrainSpec s;
  json rest = json::object();
  for (const auto& [key, v] : j.items()) {
    if (key == "dataset") s.dataset = get_as<std::string>(v, key);
    else if (key == "checkpoint_dir") s.checkpoint_dir = get_as<std::string>(v, key);
    else rest[key] = v;
  }
  try {
    s.train = rest.get<TrainConfig>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  require(!s.dataset.empty(), "train: 'dataset' is required");
  require(!s.checkpoint_dir.empty(), "train: 'checkpoint_dir' is required");
  return s;
}

fs::path run_train(const TrainSpec& spec, bool verbose) {
  require(fs::exists(spec.dataset / "manifest.json"),
          "dataset not found: " + (spec.dataset / "manifest.json").string());
  const Dataset data = load_dataset(spec.dataset);
  try {
    spec.train.validate(data.trajectories.size(), data.config.length);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  require(data.config.image_size == spec.train.model.image_size,
          "train: dataset image size " + std::to_string(data.config.image_size) +
              " does not match model image_size " + std::to_string(spec.train.model.image_size));

  EpochCallback log;
  if (verbose) {
    log = [](const EpochRecord& r) {
      std::cerr << "epoch " << r.epoch << "  loss " << fmt(r.train_loss) << "  val_mse "
                << fmt(r.val_mse) << '\n';
    };
  }
  TrainStats stats;
  const Model model = train(data.trajectories, spec.train, &stats, log);
  save_checkpoint(model, spec.checkpoint_dir);

  auto csv = open_out(spec.checkpoint_dir / "curve.csv");
  csv << "# config_hash=" << hex64(config_hash(spec.train))
      << " checkpoint_hash=" << hex64(checkpoint_hash(spec.checkpoint_dir)) << '\n';
  csv << "epoch,train_loss,val_mse\n";
  for (const auto& r : model.curve) {
    csv << r.epoch << ',' << fmt(r.train_loss) << ',' << fmt(r.val_mse) << '\n';
  }
  if (verbose) {
    std::cerr << "trained " << stats.batches << " batches in " << fmt(stats.seconds) << " s"
              << (model.diverged ? " (diverged, restored last good epoch)" : "") << '\n';
  }
  if (model.diverged) throw std::runtime_error("training diverged; last good epoch was saved");
  return spec.checkpoint_dir;
}

fs::path run_experiment(const ExperimentSpec& spec, bool verbose) {
  spec.validate();
  const json cfg = experiment_to_json(spec);
  const fs::path dir = run_directory(spec.output_dir.empty() ? "." : spec.output_dir, cfg);
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg);

  const Model model = load_checkpoint(spec.checkpoint);
  const std::string header = "# config_hash=" + hex64(config_hash(cfg)) +
                             " checkpoint_hash=" + hex64(checkpoint_hash(spec.checkpoint)) + "\n";
  ExperimentSpec run = spec;
  run.output_dir = dir;

  switch (spec.kind) {
    case ExperimentKind::predict: {
      const Dataset data = load_dataset(spec.dataset);
      const PredictResult res = run_predict(run, model, data);
      auto csv = open_out(dir / "metrics.csv");
      csv << header << "sequence,heteroscedastic,mean_mse";
      for (std::size_t k = 0; k < spec.predict.predict_frames; ++k) csv << ",mse_" << k + 1;
      for (std::size_t k = 0; k < spec.predict.init_frames; ++k) csv << ",alpha_" << k + 1;
      csv << '\n';
      for (const auto& r : res.records) {
        csv << r.index << ',' << r.heteroscedastic << ',' << fmt(r.mean_mse);
        for (double v : r.frame_mse) csv << ',' << fmt(v);
        for (double v : r.alphas) csv << ',' << fmt(v);
        csv << '\n';
      }
      write_json(dir / "summary.json", comparison_json(res.comparison));
      if (verbose) {
        std::cerr << "mean MSE heteroscedastic " << fmt(res.comparison.mean_a) << ", without "
                  << fmt(res.comparison.mean_b) << ", wins " << res.comparison.wins << "/"
                  << res.comparison.n << ", p = " << fmt(res.comparison.p_value) << '\n';
      }
      break;
    }
    case ExperimentKind::control: {
      const ControlResult res = run_control(run, model);
      auto csv = open_out(dir / "metrics.csv");
      csv << header << "setting,n_occlusions,duration,seed,heteroscedastic,tracking_error,truncated\n";
      for (const auto& r : res.records) {
        const auto [n_o, d] = spec.control.settings[r.index];
        csv << r.index << ',' << n_o << ',' << d << ',' << r.seed << ',' << r.heteroscedastic
            << ',' << fmt(r.tracking_error) << ',' << r.truncated << '\n';
      }
      json summary = json::array();
      for (std::size_t j = 0; j < res.per_setting.size(); ++j) {
        json s = comparison_json(res.per_setting[j]);
        s["n_occlusions"] = spec.control.settings[j].first;
        s["duration"] = spec.control.settings[j].second;
        summary.push_back(s);
        if (verbose) {
          std::cerr << "setting (" << s["n_occlusions"] << "," << s["duration"]
                    << ") median error heteroscedastic " << fmt(res.per_setting[j].median_a)
                    << ", without " << fmt(res.per_setting[j].median_b) << '\n';
        }
      }
      write_json(dir / "summary.json", summary);
      break;
    }
    case ExperimentKind::visualize_latents: {
      const Dataset data = load_dataset(spec.dataset);
      const auto rows = dump_latents(run, model, data);
      auto csv = open_out(dir / "latents.csv");
      csv << header << "sequence,frame";
      for (int i = 0; i < model.config.state_dim; ++i) csv << ",z" << i;
      csv << ",theta,theta_dot,alpha,corrupted,heteroscedastic\n";
      for (const auto& r : rows) {
        csv << r.sequence << ',' << r.frame;
        for (Eigen::Index i = 0; i < r.z.size(); ++i) csv << ',' << fmt(r.z(i));
        csv << ',' << fmt(r.theta) << ',' << fmt(r.theta_dot) << ',' << fmt(r.alpha) << ','
            << r.corrupted << ',' << r.heteroscedastic << '\n';
      }
      break;
    }
  }
  return dir;
}

}  // namespace latdyn
