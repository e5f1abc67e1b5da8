// siamssl command-line front end.
//
//   siamssl run <config> [--override key=value ...] [--parallel-seeds N]
//   siamssl baseline <config> [--override key=value ...]
//   siamssl scatter <checkpoint> <data> <out.csv> [--labels file] [--limit N]
//
// Exit status: 0 success, 2 configuration error, 3 runtime failure.

#include "siamssl/config.hpp"
#include "siamssl/runner.hpp"
#include "siamssl/scatter.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

int run_verb(const std::string& config_path, const std::vector<std::string>& overrides, int parallel_seeds,
             siamssl::Verb verb) {
  siamssl::RunConfig rc;
  try {
    auto cf = siamssl::ConfigFile::load(config_path);
    for (const auto& o : overrides) cf.override_with(o);
    if (parallel_seeds > 0) cf.override_with("run.parallel_seeds=" + std::to_string(parallel_seeds));
    rc = siamssl::parse_run_config(cf);
  } catch (const siamssl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    const auto outcome = siamssl::run_experiment(rc, verb);
    if (outcome.failed > 0) {
      std::cerr << "error: " << outcome.failed << " of " << outcome.seeds.size()
                << " seed job(s) failed; partial results in " << outcome.output_dir << '\n';
      return kExitRuntime;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

template <typename T>
siamssl::ScatterResult scatter_with(const std::string& checkpoint, const siamssl::Dataset& data,
                                    const std::string& out) {
  return siamssl::emit_scatter(siamssl::load_checkpoint<T>(checkpoint), data, out);
}

int scatter_verb(const std::string& checkpoint, const std::string& data_path, const std::string& labels_path,
                 std::size_t limit, const std::string& out) {
  try {
    siamssl::Dataset data;
    if (std::filesystem::path(data_path).extension() == ".csv") {
      data = siamssl::read_csv(data_path);
      if (limit && limit < data.size()) {
        std::vector<std::size_t> keep(limit);
        std::iota(keep.begin(), keep.end(), std::size_t{0});
        data = data.subset(keep);
      }
    } else {
      data = siamssl::load_idx(data_path, labels_path, limit);
    }
    std::ifstream probe(checkpoint);
    std::string magic, header;
    std::getline(probe, magic);
    std::getline(probe, header);
    const bool wide = header.find("\"float64\"") != std::string::npos;
    const auto res = wide ? scatter_with<double>(checkpoint, data, out) : scatter_with<float>(checkpoint, data, out);
    siamssl::log::info("wrote " + res.csv_path + " and " + res.svg_path + " (" + std::to_string(res.points) +
                       " points, silhouette " + siamssl::format_number(res.silhouette) + ")");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  siamssl::retain_freed_memory();
  CLI::App app{"Semi-supervised metric learning by self-training with triplet embeddings"};
  app.set_version_flag("--version", SIAMSSL_VERSION);
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  bool verbose = false;
  app.add_flag("-q,--quiet", quiet, "Only report warnings and errors");
  app.add_flag("-v,--verbose", verbose, "Debug output");

  std::string config_path;
  std::vector<std::string> overrides;
  int parallel_seeds = 0;
  auto* run = app.add_subcommand("run", "Run every configured method for every seed");
  run->add_option("config", config_path, "Run configuration file")->required();
  run->add_option("--override", overrides, "Set a config key (key=value), repeatable");
  run->add_option("--parallel-seeds", parallel_seeds, "Seed jobs to run concurrently")->check(CLI::PositiveNumber);

  auto* baseline = app.add_subcommand("baseline", "Run only the supervised reference methods");
  baseline->add_option("config", config_path, "Run configuration file")->required();
  baseline->add_option("--override", overrides, "Set a config key (key=value), repeatable");
  baseline->add_option("--parallel-seeds", parallel_seeds, "Seed jobs to run concurrently")->check(CLI::PositiveNumber);

  std::string checkpoint, data_path, out_path, labels_path;
  std::size_t limit = 0;
  auto* scatter = app.add_subcommand("scatter", "Write 2-D embeddings of a dataset as CSV and SVG");
  scatter->add_option("checkpoint", checkpoint, "Model checkpoint with 2-dimensional output")->required();
  scatter->add_option("data", data_path, "Dataset: CSV file or IDX images file")->required();
  scatter->add_option("out", out_path, "Output CSV path; the SVG is written alongside")->required();
  scatter->add_option("--labels", labels_path, "IDX labels file for an IDX images input");
  scatter->add_option("--limit", limit, "Use only the first N examples");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (quiet) siamssl::log::set_level(siamssl::log::Level::warn);
  if (verbose) siamssl::log::set_level(siamssl::log::Level::debug);

  if (*run) return run_verb(config_path, overrides, parallel_seeds, siamssl::Verb::run);
  if (*baseline) return run_verb(config_path, overrides, parallel_seeds, siamssl::Verb::baseline);
  return scatter_verb(checkpoint, data_path, labels_path, limit, out_path);
}
