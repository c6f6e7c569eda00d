// latdyn: data generation, training and experiments from the command line.
//
// Exit codes: 0 success, 1 validation error (bad flags, config or missing
// inputs), 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "latdyn/dataset_io.hpp"
#include "latdyn/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, const std::string& section) {
  cmd->add_option("--config", c.config,
                  "JSON config file; a top-level \"" + section +
                      "\" object is used when present, otherwise the whole file")
      ->required();
  cmd->add_option("--seed", c.seed, "override the seed(s) in the config");
  cmd->add_flag("-v,--verbose", c.verbose, "progress on stderr");
}

json load_section(const Common& c, const std::string& section) {
  if (!fs::exists(c.config)) throw latdyn::ValidationError("config file not found: " + c.config);
  json j;
  try {
    j = json::parse(latdyn::read_text(c.config));
  } catch (const json::parse_error& e) {
    throw latdyn::ValidationError("cannot parse config " + c.config + ": " + e.what());
  }
  if (!j.is_object()) throw latdyn::ValidationError("config " + c.config + " is not an object");
  if (j.contains(section)) return j.at(section);
  return j;
}

int run(const std::string& name, const Common& c) {
  if (name == "gen-data") {
    auto spec = latdyn::parse_gen_data(load_section(c, "gen-data"));
    if (c.seed) spec.seed = *c.seed;
    std::cout << latdyn::run_gen_data(spec).string() << '\n';
  } else if (name == "train") {
    auto spec = latdyn::parse_train(load_section(c, "train"));
    if (c.seed) spec.train.seed = *c.seed;
    std::cout << latdyn::run_train(spec, c.verbose).string() << '\n';
  } else {
    const auto kind = name == "predict"   ? latdyn::ExperimentKind::predict
                      : name == "control" ? latdyn::ExperimentKind::control
                                          : latdyn::ExperimentKind::visualize_latents;
    auto spec = latdyn::parse_experiment(load_section(c, name), kind);
    if (c.seed) {
      for (std::size_t i = 0; i < spec.seeds.size(); ++i) spec.seeds[i] = *c.seed + i;
    }
    std::cout << latdyn::run_experiment(spec, c.verbose).string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent linear-Gaussian dynamics from pendulum images"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"gen-data", "simulate random-exploration pendulum trajectories and write a dataset"},
      {"train", "fit encoder, decoder and dynamics on a dataset and write a checkpoint"},
      {"predict", "20-step image prediction from a short, partly corrupted window"},
      {"control", "receding-horizon latent MPC episodes under occlusion schedules"},
      {"latents", "smoothed latent states, angles and novelty weights as CSV"},
  };
  Common common;
  for (const auto& s : subs) add_common(app.add_subcommand(s.name, s.help), common, s.name);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return run(name, common);
  } catch (const latdyn::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 2;
  }
}
