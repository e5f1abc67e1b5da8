#pragma once

// Config-driven experiment runner: loads data, runs every requested method for
// every seed, and writes per-seed reports, a summary table and a manifest.
//
// Output layout under run.output_dir:
//   manifest.cfg                  canonical config, re-runnable
//   summary.csv                   mean and sample std of final test error per method
//   seed-<s>/report_<m>.csv       one row per meta-iteration
//   seed-<s>/timing_<m>.csv       wall time per meta-iteration
//   seed-<s>/model_<m>.ckpt       trained network
//   seed-<s>/scatter_*.csv/.svg   2-D embeddings of the test set (run.scatter)

#include "siamssl/config.hpp"
#include "siamssl/data.hpp"
#include "siamssl/log.hpp"
#include "siamssl/net.hpp"
#include "siamssl/report.hpp"
#include "siamssl/scatter.hpp"
#include "siamssl/selftrain.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace siamssl {

enum class Verb { run, baseline };

/// Keeps large freed blocks in the heap. Training allocates and frees tens of
/// megabytes per mini-batch; returning them to the kernel each time costs more
/// than the arithmetic.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

struct LoadedData {
  Dataset train;
  Dataset test;
};

inline LoadedData load_datasets(const DatasetConfig& cfg) {
  LoadedData d;
  if (cfg.source == "idx") {
    d.train = load_idx(cfg.train_images, cfg.train_labels, cfg.train_limit);
    d.test = load_idx(cfg.test_images, cfg.test_labels, cfg.test_limit);
  } else if (cfg.source == "csv") {
    d.train = read_csv(cfg.train_csv);
    d.test = read_csv(cfg.test_csv);
    std::vector<std::size_t> keep;
    if (cfg.train_limit && cfg.train_limit < d.train.size()) {
      keep.resize(cfg.train_limit);
      std::iota(keep.begin(), keep.end(), std::size_t{0});
      d.train = d.train.subset(keep);
    }
    if (cfg.test_limit && cfg.test_limit < d.test.size()) {
      keep.resize(cfg.test_limit);
      std::iota(keep.begin(), keep.end(), std::size_t{0});
      d.test = d.test.subset(keep);
    }
  } else {
    d.train = make_blobs(cfg.per_class, cfg.centers, cfg.stddev, derive_seed(cfg.seed, 0));
    d.test = make_blobs(cfg.test_per_class, cfg.centers, cfg.stddev, derive_seed(cfg.seed, 1));
  }
  if (d.train.shape != d.test.shape)
    throw ConsistencyError("train shape " + d.train.shape.str() + " differs from test shape " + d.test.shape.str());
  if (!d.train.has_labels() || !d.test.has_labels()) throw ConsistencyError("train and test sets need labels");
  for (int y : d.train.labels)
    if (y == kUnlabeled) throw ConsistencyError("training set contains unlabeled rows");
  for (int y : d.test.labels)
    if (y == kUnlabeled) throw ConsistencyError("test set contains unlabeled rows");
  d.train.num_classes = d.test.num_classes = std::max(d.train.num_classes, d.test.num_classes);
  d.train.validate();
  d.test.validate();
  return d;
}

/// Resolves run.output_dir: relative paths live under $SIAMSSL_OUTPUT_ROOT when set,
/// else under the working directory.
inline std::string resolve_output_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_relative()) {
    const char* root = std::getenv("SIAMSSL_OUTPUT_ROOT");
    p = (root && *root ? std::filesystem::path(root) : std::filesystem::current_path()) / p;
  }
  return std::filesystem::absolute(p).lexically_normal().string();
}

/// Methods the verb runs: `baseline` keeps only the supervised references.
inline std::vector<std::string> methods_for(const RunConfig& rc, Verb verb) {
  if (verb == Verb::run) return rc.methods;
  std::vector<std::string> out;
  for (const auto& m : rc.methods)
    if (m == "supervised" || m == "all_labels") out.push_back(m);
  if (out.empty()) out.push_back("supervised");
  return out;
}

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, double> final_error;
  std::map<std::string, double> silhouette;  // "initial" and per method, with run.scatter
  bool failed = false;
  std::string error;
};

template <typename T>
SeedResult run_seed(const RunConfig& rc, Verb verb, const LoadedData& data, std::uint64_t seed,
                    const std::filesystem::path& dir) {
  SeedResult res;
  res.seed = seed;
  std::filesystem::create_directories(dir);
  const std::uint64_t split_seed = derive_seed(rc.fixed_split ? rc.seeds.front() : seed, 2);
  const Split split = split_balanced(data.train, rc.n_labeled, split_seed, data.test);
  const Model<T> initial =
      init_model<T>(rc.model.layers(), data.train.shape, derive_seed(seed, 1), rc.model.expected_dim());
  const bool scatter = rc.scatter && initial.embedding_dim == 2;
  if (rc.scatter && !scatter) log::warn("run.scatter ignored: embedding is not 2-dimensional");
  if (scatter) res.silhouette["initial"] = emit_scatter(initial, data.test, (dir / "scatter_initial.csv").string()).silhouette;

  for (const auto& method : methods_for(rc, verb)) {
    SelfTrainConfig cfg = rc.selftrain;
    cfg.seed = seed;
    const std::string tag = "seed " + std::to_string(seed) + " " + method;
    ReportWriter writer((dir / ("report_" + method + ".csv")).string());
    Model<T> trained;
    RunReport report;
    if (method == "supervised" || method == "all_labels") {
      report = supervised_baseline(data.train, split, cfg, initial, method == "all_labels", &trained);
      for (const auto& r : report.iterations) writer.append(r);
      log::info(tag + ": labeled " + std::to_string(report.iterations[0].labeled_size) + ", test error " +
                format_mean_std(report.final_test_error(), std::numeric_limits<double>::quiet_NaN()) + "%");
    } else {
      cfg.variant = method == "llgc" ? Variant::llgc : Variant::siamese;
      const int total = cfg.meta_iterations;
      report = self_train(
          data.train, split, cfg, initial,
          [&](const IterationRecord& r) {
            writer.append(r);
            std::string msg = tag + ": iteration " + std::to_string(r.iteration) + "/" + std::to_string(total) +
                              ", labeled " + std::to_string(r.labeled_size) + ", test error " +
                              format_mean_std(r.test_error, std::numeric_limits<double>::quiet_NaN()) + "%";
            if (r.selected > 0) {
              char buf[64];
              std::snprintf(buf, sizeof buf, ", +%zu pseudo-labels (%.1f%% correct)", r.selected, r.pseudo_accuracy);
              msg += buf;
            }
            log::info(msg);
          },
          &trained);
    }
    write_timing_csv(report, (dir / ("timing_" + method + ".csv")).string());
    save_checkpoint(trained, (dir / ("model_" + method + ".ckpt")).string());
    if (scatter)
      res.silhouette[method] = emit_scatter(trained, data.test, (dir / ("scatter_" + method + ".csv")).string()).silhouette;
    res.final_error[method] = report.final_test_error();
  }
  if (!res.silhouette.empty()) {
    std::ofstream out(dir / "silhouette.csv");
    out << "model,silhouette\n";
    for (const auto& [name, s] : res.silhouette) out << name << ',' << format_number(s) << '\n';
  }
  return res;
}

struct RunOutcome {
  std::string output_dir;
  std::vector<SummaryRow> summary;
  std::vector<SeedResult> seeds;
  std::size_t failed = 0;
};

/// Executes the configured experiment. Seed jobs that fail are reported in the
/// outcome; artifacts already written stay on disk.
inline RunOutcome run_experiment(RunConfig rc, Verb verb) {
  RunOutcome outcome;
  rc.output_dir = resolve_output_dir(rc.output_dir);
  outcome.output_dir = rc.output_dir;
  const LoadedData data = load_datasets(rc.dataset);
  const std::filesystem::path root(rc.output_dir);
  std::filesystem::create_directories(root);
  {
    std::ofstream manifest(root / "manifest.cfg");
    manifest << to_manifest(rc);
    if (!manifest) throw FormatError((root / "manifest.cfg").string() + ": write failed");
  }
  log::info("train " + std::to_string(data.train.size()) + " x " + data.train.shape.str() + ", test " +
            std::to_string(data.test.size()) + ", " + std::to_string(data.train.num_classes) + " classes; output " +
            rc.output_dir);

  outcome.seeds.resize(rc.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < rc.seeds.size(); i = next++) {
      const std::uint64_t seed = rc.seeds[i];
      const auto dir = root / ("seed-" + std::to_string(seed));
      try {
        outcome.seeds[i] = rc.model.precision == "float64" ? run_seed<double>(rc, verb, data, seed, dir)
                                                           : run_seed<float>(rc, verb, data, seed, dir);
      } catch (const std::exception& e) {
        outcome.seeds[i].seed = seed;
        outcome.seeds[i].failed = true;
        outcome.seeds[i].error = e.what();
        log::warn("seed " + std::to_string(seed) + " failed: " + e.what());
      }
    }
  };
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(rc.parallel_seeds), rc.seeds.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (const auto& method : methods_for(rc, verb)) {
    std::vector<double> finals;
    for (const auto& s : outcome.seeds)
      if (!s.failed) finals.push_back(s.final_error.at(method));
    outcome.summary.push_back(summarize(method, finals));
  }
  for (const auto& s : outcome.seeds) outcome.failed += s.failed;
  write_summary_csv(outcome.summary, (root / "summary.csv").string());
  for (const auto& row : outcome.summary)
    log::info("summary " + row.method + ": " + format_mean_std(row.mean, row.stddev) + "% over " +
              std::to_string(row.finals.size()) + " seed(s)");
  return outcome;
}

}  // namespace siamssl
