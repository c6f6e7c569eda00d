#include "latdyn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "latdyn/dataset_io.hpp"

namespace latdyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kCheckpointVersion = 1;

}  // namespace

CodecConfig ModelConfig::codec() const {
  CodecConfig c;
  c.image_size = image_size;
  c.measurement_dim = measurement_dim;
  c.hidden = codec_hidden;
  c.likelihood = likelihood;
  c.pixel_sigma = pixel_sigma;
  return c;
}

DynamicsConfig ModelConfig::dynamics() const {
  DynamicsConfig d;
  d.state_dim = state_dim;
  d.control_dim = control_dim;
  d.measurement_dim = measurement_dim;
  d.hidden_dim = hidden_dim;
  d.num_bases = num_bases;
  return d;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  };
  positive(image_size, "image_size");
  positive(state_dim, "state_dim");
  positive(control_dim, "control_dim");
  positive(measurement_dim, "measurement_dim");
  positive(hidden_dim, "hidden_dim");
  positive(num_bases, "num_bases");
  if (image_size > 64) throw std::invalid_argument("model config: image_size must be <= 64");
  if (codec_hidden.empty()) throw std::invalid_argument("model config: codec_hidden is empty");
  for (int h : codec_hidden) positive(h, "codec_hidden");
  if (!(pixel_sigma > 0.0)) throw std::invalid_argument("model config: pixel_sigma must be > 0");
  if (!(init_process_var > 0.0 && init_measurement_var > 0.0 && init_prior_var > 0.0)) {
    throw std::invalid_argument("model config: initial variances must be > 0");
  }
}

ModelConfig ModelConfig::pendulum() { return ModelConfig{}; }

ModelConfig ModelConfig::reacher() {
  ModelConfig c;
  c.state_dim = 10;
  c.measurement_dim = 4;
  c.control_dim = 2;
  return c;
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"image_size", c.image_size},
           {"state_dim", c.state_dim},
           {"control_dim", c.control_dim},
           {"measurement_dim", c.measurement_dim},
           {"hidden_dim", c.hidden_dim},
           {"num_bases", c.num_bases},
           {"codec_hidden", c.codec_hidden},
           {"likelihood", to_string(c.likelihood)},
           {"pixel_sigma", c.pixel_sigma},
           {"init_process_var", c.init_process_var},
           {"init_measurement_var", c.init_measurement_var},
           {"init_prior_var", c.init_prior_var}};
}

void from_json(const json& j, ModelConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "image_size") c.image_size = value.get<int>();
    else if (key == "state_dim") c.state_dim = value.get<int>();
    else if (key == "control_dim") c.control_dim = value.get<int>();
    else if (key == "measurement_dim") c.measurement_dim = value.get<int>();
    else if (key == "hidden_dim") c.hidden_dim = value.get<int>();
    else if (key == "num_bases") c.num_bases = value.get<int>();
    else if (key == "codec_hidden") c.codec_hidden = value.get<std::vector<int>>();
    else if (key == "likelihood") c.likelihood = parse_likelihood(value.get<std::string>());
    else if (key == "pixel_sigma") c.pixel_sigma = value.get<double>();
    else if (key == "init_process_var") c.init_process_var = value.get<double>();
    else if (key == "init_measurement_var") c.init_measurement_var = value.get<double>();
    else if (key == "init_prior_var") c.init_prior_var = value.get<double>();
    else throw std::invalid_argument("unknown model config key: " + key);
  }
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  std::mt19937_64 rng(seed);
  codec().register_params(store, rng);
  dynamics().register_params(store, rng);
  store.add("noise.log_q",
            Eigen::MatrixXd::Constant(cfg.state_dim, 1, std::log(cfg.init_process_var)));
  store.add("noise.log_r",
            Eigen::MatrixXd::Constant(cfg.measurement_dim, 1, std::log(cfg.init_measurement_var)));
  store.add("noise.log_prior",
            Eigen::MatrixXd::Constant(cfg.state_dim, 1, std::log(cfg.init_prior_var)));
}

NoiseModel Model::noise() const {
  NoiseModel nm;
  nm.Q = store.get("noise.log_q").value.col(0).array().exp().matrix().asDiagonal();
  nm.R_diag = store.get("noise.log_r").value.col(0).array().exp().matrix();
  return nm;
}

Gaussian Model::prior() const {
  Gaussian g;
  g.mean = Eigen::VectorXd::Zero(config.state_dim);
  g.cov = store.get("noise.log_prior").value.col(0).array().exp().matrix().asDiagonal();
  return g;
}

void save_checkpoint(const Model& model, const fs::path& dir) {
  fs::create_directories(dir / "tensors");
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> shapes;
  ad::save_tensors(model.store, dir / "tensors", shapes);

  json params = json::array();
  for (const auto& [name, shape] : shapes) {
    params.push_back({{"name", name},
                      {"group", name.substr(0, name.find('.'))},
                      {"shape", shape},
                      {"file", "tensors/" + name + ".f64"}});
  }
  json curve = json::array();
  for (const auto& r : model.curve) {
    curve.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_mse", r.val_mse}});
  }
  json manifest = {
      {"format", "latdyn-checkpoint"},
      {"version", kCheckpointVersion},
      {"dtype", "float64"},
      {"endianness", "little"},
      {"config", model.config},
      {"baseline",
       {{"mean_train_loss", model.baseline.mean_train_loss},
        {"n_images", model.baseline.n_images}}},
      {"parameters", params},
      {"training", {{"curve", curve}, {"diverged", model.diverged}}},
  };
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

Model load_checkpoint(const fs::path& dir, const ModelConfig* expected) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("checkpoint manifest not found: " + manifest_path.string());
  }
  const json manifest = json::parse(read_text(manifest_path));
  if (manifest.value("format", "") != "latdyn-checkpoint") {
    throw std::runtime_error(manifest_path.string() + ": not a latdyn checkpoint");
  }
  if (manifest.value("version", -1) != kCheckpointVersion) {
    throw std::runtime_error(manifest_path.string() + ": unsupported checkpoint version " +
                             manifest.at("version").dump());
  }
  ModelConfig cfg = manifest.at("config").get<ModelConfig>();
  if (expected != nullptr) {
    const json have = cfg;
    const json want = *expected;
    for (const auto& [key, value] : want.items()) {
      if (have.at(key) != value) {
        throw std::runtime_error("checkpoint field '" + key + "' is " + have.at(key).dump() +
                                 ", expected " + value.dump());
      }
    }
  }

  Model model(cfg, 0);
  std::vector<std::pair<std::string, std::vector<Eigen::Index>>> shapes;
  for (const auto& p : manifest.at("parameters")) {
    shapes.emplace_back(p.at("name").get<std::string>(),
                        p.at("shape").get<std::vector<Eigen::Index>>());
  }
  ad::load_tensors(model.store, dir / "tensors", shapes);
  model.baseline.mean_train_loss = manifest.at("baseline").at("mean_train_loss").get<double>();
  model.baseline.n_images = manifest.at("baseline").at("n_images").get<std::size_t>();
  const auto& training = manifest.at("training");
  model.diverged = training.at("diverged").get<bool>();
  for (const auto& r : training.at("curve")) {
    model.curve.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                           r.at("val_mse").get<double>()});
  }
  return model;
}

}  // namespace latdyn
