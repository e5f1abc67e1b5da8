#pragma once

// Run configuration: a flat text file of `key = value` lines. `[section]` headers
// prefix the keys that follow, so `[train]` + `epochs = 20` is `train.epochs = 20`.
// `#` starts a comment. Overrides use the same dotted keys.

#include "siamssl/errors.hpp"
#include "siamssl/net.hpp"
#include "siamssl/selftrain.hpp"
#include "siamssl/types.hpp"

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifndef SIAMSSL_VERSION
#define SIAMSSL_VERSION "0.0.0"
#endif

namespace siamssl {

/// Parsed key/value pairs with the line each one came from.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;  // 0 for command-line overrides
  };

  static ConfigFile parse(std::istream& in, const std::string& source) {
    ConfigFile cf;
    cf.source_ = source;
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      const auto hash = raw.find('#');
      const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
      if (text.empty()) continue;
      if (text.front() == '[') {
        if (text.back() != ']' || text.size() < 3) throw cf.error_at(line, "malformed section header '" + text + "'");
        section = trim(text.substr(1, text.size() - 2));
        if (!valid_key(section)) throw cf.error_at(line, "invalid section name '" + section + "'");
        continue;
      }
      const auto eq = text.find('=');
      if (eq == std::string::npos) throw cf.error_at(line, "expected 'key = value', got '" + text + "'");
      const std::string key = trim(text.substr(0, eq));
      if (!valid_key(key)) throw cf.error_at(line, "invalid key '" + key + "'");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cf.entries_.count(full)) throw cf.error_at(line, full + ": duplicate key");
      cf.entries_[full] = {trim(text.substr(eq + 1)), line};
    }
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot open config file");
    auto cf = parse(in, path);
    cf.base_dir_ = std::filesystem::absolute(path).parent_path();
    return cf;
  }

  /// Applies `key=value` on top of the file contents.
  void override_with(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--override " + assignment + ": expected key=value");
    const std::string key = trim(assignment.substr(0, eq));
    if (!valid_key(key)) throw ConfigError("--override " + assignment + ": invalid key '" + key + "'");
    entries_[key] = {trim(assignment.substr(eq + 1)), 0};
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  /// Raw value of `key`, or `fallback` when absent. Marks the key as consumed.
  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.value.empty()) throw ConfigError(source_ + ": " + key + ": required key missing");
    return it->second.value;
  }

  template <typename N>
  N get_number(const std::string& key, N fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return parse_number<N>(key, get(key, ""));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    const std::string v = get(key, "");
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw error(key, "expected true or false, got '" + v + "'");
  }

  /// Comma separated values, whitespace trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key, const std::string& fallback) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key, fallback));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  template <typename N>
  N parse_number(const std::string& key, const std::string& text) const {
    N value{};
    const char* end = text.data() + text.size();
    auto res = std::from_chars(text.data(), end, value);
    if (res.ec != std::errc{} || res.ptr != end || text.empty())
      throw error(key, "expected a number, got '" + text + "'");
    return value;
  }

  /// Error located at the line that defined `key` (or the override).
  ConfigError error(const std::string& key, const std::string& message) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return ConfigError(source_ + ": " + key + ": " + message);
    if (it->second.line == 0) return ConfigError("--override " + key + ": " + message);
    return error_at(it->second.line, key + ": " + message);
  }

  /// Rejects keys that nothing consumed, so typos do not pass silently.
  void check_unused() const {
    for (const auto& [key, entry] : entries_)
      if (!used_.count(key)) throw error(key, "unknown key");
  }

  /// Resolves a path relative to the directory of the config file.
  std::string resolve_path(const std::string& p) const {
    if (p.empty()) return p;
    std::filesystem::path path(p);
    if (path.is_relative()) path = base_dir_ / path;
    return path.lexically_normal().string();
  }

  const std::string& source() const { return source_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static bool valid_key(const std::string& k) {
    if (k.empty() || k.front() == '.' || k.back() == '.') return false;
    return std::all_of(k.begin(), k.end(), [](char c) {
      return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-';
    });
  }

  ConfigError error_at(int line, const std::string& message) const {
    return ConfigError(source_ + ":" + std::to_string(line) + ": " + message, line);
  }

  std::string source_ = "<config>";
  std::filesystem::path base_dir_ = std::filesystem::current_path();
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
};

struct DatasetConfig {
  std::string source = "blobs";  // blobs | idx | csv
  std::string train_images, train_labels, test_images, test_labels;
  std::string train_csv, test_csv;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;
  std::vector<std::vector<double>> centers = {{0, 0}, {3, 0}, {0, 3}};
  int per_class = 50;
  int test_per_class = 100;
  double stddev = 1.0;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::string name = "simple";  // simple | mlp | embed2d
  std::string precision = "float32";
  int mlp_hidden = 32;
  int mlp_layers = 2;
  int mlp_dim = 2;

  std::vector<LayerSpec> layers() const {
    if (name == "simple") return simple_model_spec();
    if (name == "embed2d") return embed2d_model_spec();
    return mlp_model_spec(mlp_hidden, mlp_layers, mlp_dim);
  }

  int expected_dim() const {
    if (name == "simple") return 16;
    if (name == "embed2d") return 2;
    return mlp_dim;
  }
};

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> m = {"supervised", "siamese", "llgc", "all_labels"};
  return m;
}

struct RunConfig {
  DatasetConfig dataset;
  std::size_t n_labeled = 0;
  ModelConfig model;
  SelfTrainConfig selftrain;  // variant and seed are set per job
  std::vector<std::string> methods = {"supervised", "siamese"};
  bool fixed_split = false;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir;
  bool scatter = false;
  int parallel_seeds = 1;
};

namespace detail {

inline std::vector<std::vector<double>> parse_centers(const ConfigFile& cf, const std::string& key,
                                                      const std::string& text) {
  std::vector<std::vector<double>> out;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    std::vector<double> c;
    std::stringstream coords(group);
    std::string v;
    while (std::getline(coords, v, ',')) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t");
      if (b == std::string::npos) continue;
      c.push_back(cf.parse_number<double>(key, v.substr(b, e - b + 1)));
    }
    if (!c.empty()) out.push_back(std::move(c));
  }
  if (out.size() < 2) throw cf.error(key, "need at least 2 centers ('x,y; x,y; ...')");
  for (const auto& c : out)
    if (c.size() != out.front().size()) throw cf.error(key, "centers differ in dimension");
  return out;
}

template <typename E>
E parse_choice(const ConfigFile& cf, const std::string& key, const std::string& fallback,
               const std::vector<std::pair<std::string, E>>& choices) {
  const std::string v = cf.get(key, fallback);
  std::string names;
  for (const auto& [name, value] : choices) {
    if (v == name) return value;
    names += (names.empty() ? "" : ", ") + name;
  }
  throw cf.error(key, "unknown value '" + v + "' (expected one of: " + names + ")");
}

}  // namespace detail

/// Builds and validates a RunConfig. Errors name the key and, when it came from
/// the file, its line.
inline RunConfig parse_run_config(const ConfigFile& cf) {
  RunConfig rc;
  auto& ds = rc.dataset;
  ds.source = detail::parse_choice<std::string>(cf, "dataset.source", "blobs",
                                                {{"blobs", "blobs"}, {"idx", "idx"}, {"csv", "csv"}});
  ds.train_limit = cf.get_number<std::size_t>("dataset.train_limit", 0);
  ds.test_limit = cf.get_number<std::size_t>("dataset.test_limit", 0);
  if (ds.source == "idx") {
    ds.train_images = cf.resolve_path(cf.require("dataset.train_images"));
    ds.train_labels = cf.resolve_path(cf.require("dataset.train_labels"));
    ds.test_images = cf.resolve_path(cf.require("dataset.test_images"));
    ds.test_labels = cf.resolve_path(cf.require("dataset.test_labels"));
    for (const char* key : {"dataset.train_images", "dataset.train_labels", "dataset.test_images", "dataset.test_labels"})
      if (!std::filesystem::exists(cf.resolve_path(cf.get(key, ""))))
        throw cf.error(key, "file not found: " + cf.resolve_path(cf.get(key, "")));
  } else if (ds.source == "csv") {
    ds.train_csv = cf.resolve_path(cf.require("dataset.train_csv"));
    ds.test_csv = cf.resolve_path(cf.require("dataset.test_csv"));
    for (const char* key : {"dataset.train_csv", "dataset.test_csv"})
      if (!std::filesystem::exists(cf.resolve_path(cf.get(key, ""))))
        throw cf.error(key, "file not found: " + cf.resolve_path(cf.get(key, "")));
  } else {
    if (cf.has("dataset.blobs.centers"))
      ds.centers = detail::parse_centers(cf, "dataset.blobs.centers", cf.get("dataset.blobs.centers", ""));
    ds.per_class = cf.get_number<int>("dataset.blobs.per_class", ds.per_class);
    ds.test_per_class = cf.get_number<int>("dataset.blobs.test_per_class", ds.test_per_class);
    ds.stddev = cf.get_number<double>("dataset.blobs.stddev", ds.stddev);
    ds.seed = cf.get_number<std::uint64_t>("dataset.blobs.seed", ds.seed);
    if (ds.per_class < 1) throw cf.error("dataset.blobs.per_class", "must be positive");
    if (ds.test_per_class < 1) throw cf.error("dataset.blobs.test_per_class", "must be positive");
    if (!(ds.stddev >= 0)) throw cf.error("dataset.blobs.stddev", "must be non-negative");
  }

  rc.n_labeled = cf.parse_number<std::size_t>("split.n_labeled", cf.require("split.n_labeled"));
  if (rc.n_labeled == 0) throw cf.error("split.n_labeled", "must be positive");

  auto& m = rc.model;
  m.name = detail::parse_choice<std::string>(cf, "model.name", "simple",
                                             {{"simple", "simple"}, {"mlp", "mlp"}, {"embed2d", "embed2d"}});
  m.precision = detail::parse_choice<std::string>(cf, "model.precision", "float32",
                                                  {{"float32", "float32"}, {"float64", "float64"}});
  m.mlp_hidden = cf.get_number<int>("model.mlp.hidden", m.mlp_hidden);
  m.mlp_layers = cf.get_number<int>("model.mlp.layers", m.mlp_layers);
  m.mlp_dim = cf.get_number<int>("model.mlp.dim", m.mlp_dim);
  if (m.mlp_hidden < 1) throw cf.error("model.mlp.hidden", "must be positive");
  if (m.mlp_layers < 0) throw cf.error("model.mlp.layers", "must be non-negative");
  if (m.mlp_dim < 1) throw cf.error("model.mlp.dim", "must be positive");

  auto& st = rc.selftrain;
  st.train.epochs = cf.get_number<int>("train.epochs", st.train.epochs);
  st.train.batch_size = cf.get_number<int>("train.batch_size", st.train.batch_size);
  st.train.margin = cf.get_number<double>("train.margin", st.train.margin);
  st.train.adam.learning_rate = cf.get_number<double>("train.lr", st.train.adam.learning_rate);
  st.train.adam.beta1 = cf.get_number<double>("train.beta1", st.train.adam.beta1);
  st.train.adam.beta2 = cf.get_number<double>("train.beta2", st.train.adam.beta2);
  st.train.adam.epsilon = cf.get_number<double>("train.eps", st.train.adam.epsilon);
  if (st.train.epochs < 0) throw cf.error("train.epochs", "must be non-negative");
  if (st.train.batch_size < 2) throw cf.error("train.batch_size", "must be at least 2");
  if (!(st.train.margin >= 0)) throw cf.error("train.margin", "must be non-negative");
  if (!(st.train.adam.learning_rate > 0)) throw cf.error("train.lr", "must be positive");
  if (!(st.train.adam.beta1 >= 0 && st.train.adam.beta1 < 1)) throw cf.error("train.beta1", "must lie in [0, 1)");
  if (!(st.train.adam.beta2 >= 0 && st.train.adam.beta2 < 1)) throw cf.error("train.beta2", "must lie in [0, 1)");
  if (!(st.train.adam.epsilon > 0)) throw cf.error("train.eps", "must be positive");

  rc.methods = cf.get_list("selftrain.methods", "supervised, siamese");
  if (rc.methods.empty()) throw cf.error("selftrain.methods", "no methods listed");
  for (const auto& name : rc.methods)
    if (std::find(known_methods().begin(), known_methods().end(), name) == known_methods().end())
      throw cf.error("selftrain.methods", "unknown method '" + name + "' (expected supervised, siamese, llgc, all_labels)");
  st.meta_iterations = cf.get_number<int>("selftrain.meta_iterations", st.meta_iterations);
  st.selection_percent = cf.get_number<double>("selftrain.percent", st.selection_percent);
  st.basis = detail::parse_choice<SelectionBasis>(cf, "selftrain.basis", "current",
                                                  {{"current", SelectionBasis::current}, {"initial", SelectionBasis::initial}});
  st.restart = detail::parse_choice<Restart>(cf, "selftrain.restart", "warm", {{"warm", Restart::warm}, {"cold", Restart::cold}});
  rc.fixed_split = cf.get_bool("selftrain.fixed_split", false);
  if (st.meta_iterations < 1) throw cf.error("selftrain.meta_iterations", "must be at least 1");
  if (!(st.selection_percent > 0 && st.selection_percent <= 100)) throw cf.error("selftrain.percent", "must lie in (0, 100]");

  st.llgc.alpha = cf.get_number<double>("llgc.alpha", st.llgc.alpha);
  st.llgc.sigma = cf.get_number<double>("llgc.sigma", st.llgc.sigma);
  st.llgc.tolerance = cf.get_number<double>("llgc.tolerance", st.llgc.tolerance);
  st.llgc.max_iterations = cf.get_number<int>("llgc.max_iterations", st.llgc.max_iterations);
  st.llgc_size_cap = cf.get_number<std::size_t>("llgc.size_cap", st.llgc_size_cap);
  if (!(st.llgc.alpha >= 0 && st.llgc.alpha < 1)) throw cf.error("llgc.alpha", "must lie in [0, 1)");
  if (!(st.llgc.sigma > 0)) throw cf.error("llgc.sigma", "must be positive");
  if (!(st.llgc.tolerance > 0)) throw cf.error("llgc.tolerance", "must be positive");
  if (st.llgc.max_iterations < 1) throw cf.error("llgc.max_iterations", "must be positive");
  if (st.llgc_size_cap < 1) throw cf.error("llgc.size_cap", "must be positive");

  st.eval_k = cf.get_number<int>("eval.k", st.eval_k);
  if (st.eval_k < 1) throw cf.error("eval.k", "must be positive");

  rc.seeds.clear();
  for (const auto& s : cf.get_list("run.seeds", "1, 2, 3")) rc.seeds.push_back(cf.parse_number<std::uint64_t>("run.seeds", s));
  if (rc.seeds.empty()) throw cf.error("run.seeds", "at least one seed is required");
  if (std::set<std::uint64_t>(rc.seeds.begin(), rc.seeds.end()).size() != rc.seeds.size())
    throw cf.error("run.seeds", "seeds must be distinct");
  const std::string stem = std::filesystem::path(cf.source()).stem().string();
  rc.output_dir = cf.get("run.output_dir", "runs/" + (stem.empty() ? std::string("run") : stem));
  rc.scatter = cf.get_bool("run.scatter", false);
  rc.parallel_seeds = cf.get_number<int>("run.parallel_seeds", 1);
  if (rc.parallel_seeds < 1) throw cf.error("run.parallel_seeds", "must be positive");

  cf.get("manifest.version", "");
  cf.check_unused();
  return rc;
}

/// Canonical config text: every setting spelled out, paths absolute, numbers in
/// shortest round-trip form. Parsing it back yields the same RunConfig.
inline std::string to_manifest(const RunConfig& rc) {
  std::ostringstream out;
  auto num = [](auto v) { return format_number(v); };
  auto join = [](const auto& items, auto&& fmt, const char* sep) {
    std::string s;
    for (const auto& it : items) s += (s.empty() ? "" : sep) + fmt(it);
    return s;
  };
  out << "# siamssl run manifest\n[manifest]\nversion = " << SIAMSSL_VERSION << "\n\n[dataset]\n";
  const auto& ds = rc.dataset;
  out << "source = " << ds.source << '\n';
  if (ds.source == "idx") {
    out << "train_images = " << ds.train_images << "\ntrain_labels = " << ds.train_labels
        << "\ntest_images = " << ds.test_images << "\ntest_labels = " << ds.test_labels << '\n';
  } else if (ds.source == "csv") {
    out << "train_csv = " << ds.train_csv << "\ntest_csv = " << ds.test_csv << '\n';
  } else {
    out << "blobs.centers = "
        << join(ds.centers, [&](const std::vector<double>& c) { return join(c, [&](double v) { return num(v); }, ","); }, "; ")
        << "\nblobs.per_class = " << ds.per_class << "\nblobs.test_per_class = " << ds.test_per_class
        << "\nblobs.stddev = " << num(ds.stddev) << "\nblobs.seed = " << ds.seed << '\n';
  }
  out << "train_limit = " << ds.train_limit << "\ntest_limit = " << ds.test_limit << "\n\n";
  out << "[split]\nn_labeled = " << rc.n_labeled << "\n\n";
  out << "[model]\nname = " << rc.model.name << "\nprecision = " << rc.model.precision
      << "\nmlp.hidden = " << rc.model.mlp_hidden << "\nmlp.layers = " << rc.model.mlp_layers
      << "\nmlp.dim = " << rc.model.mlp_dim << "\n\n";
  const auto& st = rc.selftrain;
  out << "[train]\nepochs = " << st.train.epochs << "\nbatch_size = " << st.train.batch_size
      << "\nmargin = " << num(st.train.margin) << "\nlr = " << num(st.train.adam.learning_rate)
      << "\nbeta1 = " << num(st.train.adam.beta1) << "\nbeta2 = " << num(st.train.adam.beta2)
      << "\neps = " << num(st.train.adam.epsilon) << "\n\n";
  out << "[selftrain]\nmethods = " << join(rc.methods, [](const std::string& s) { return s; }, ", ")
      << "\nmeta_iterations = " << st.meta_iterations << "\npercent = " << num(st.selection_percent)
      << "\nbasis = " << (st.basis == SelectionBasis::current ? "current" : "initial")
      << "\nrestart = " << (st.restart == Restart::warm ? "warm" : "cold")
      << "\nfixed_split = " << (rc.fixed_split ? "true" : "false") << "\n\n";
  out << "[llgc]\nalpha = " << num(st.llgc.alpha) << "\nsigma = " << num(st.llgc.sigma)
      << "\ntolerance = " << num(st.llgc.tolerance) << "\nmax_iterations = " << st.llgc.max_iterations
      << "\nsize_cap = " << st.llgc_size_cap << "\n\n";
  out << "[eval]\nk = " << st.eval_k << "\n\n";
  out << "[run]\nseeds = " << join(rc.seeds, [](std::uint64_t s) { return std::to_string(s); }, ", ")
      << "\noutput_dir = " << rc.output_dir << "\nscatter = " << (rc.scatter ? "true" : "false")
      << "\nparallel_seeds = " << rc.parallel_seeds << '\n';
  return out.str();
}

}  // namespace siamssl
