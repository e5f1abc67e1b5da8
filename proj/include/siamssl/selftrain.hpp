#pragma once

// Self-training meta-loop around the triplet-trained embedding network:
// train on the labeled set, embed, pseudo-label the pool with 1-NN (optionally
// refined by label propagation), promote the most confident p% and repeat.

#include "siamssl/data.hpp"
#include "siamssl/embedknn.hpp"
#include "siamssl/errors.hpp"
#include "siamssl/llgc.hpp"
#include "siamssl/log.hpp"
#include "siamssl/net.hpp"
#include "siamssl/selection.hpp"
#include "siamssl/triplet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace siamssl {

enum class Variant { siamese, llgc };
enum class Restart { warm, cold };

struct TrainConfig {
  int epochs = 200;
  int batch_size = 100;
  double margin = 0.3;
  AdamConfig adam;
};

struct SelfTrainConfig {
  Variant variant = Variant::siamese;
  int meta_iterations = 25;
  double selection_percent = 10.0;
  TrainConfig train;
  LlgcConfig llgc;
  /// Labeled rows beyond this count are subsampled before building the LLGC graph.
  std::size_t llgc_size_cap = 2000;
  SelectionBasis basis = SelectionBasis::current;
  Restart restart = Restart::warm;
  int eval_k = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (meta_iterations < 1) throw ArgumentError("meta_iterations must be at least 1");
    if (!(selection_percent > 0.0 && selection_percent <= 100.0))
      throw ArgumentError("selection percentage must lie in (0, 100]");
    if (train.batch_size < 2) throw ArgumentError("batch_size must be at least 2");
    if (train.epochs < 0) throw ArgumentError("epochs must be non-negative");
    if (train.margin < 0.0) throw ArgumentError("margin must be non-negative");
    if (eval_k < 1) throw ArgumentError("eval k must be positive");
    if (variant == Variant::llgc) {
      llgc.validate();
      if (llgc_size_cap < 1) throw ArgumentError("llgc size cap must be positive");
    }
  }
};

/// Labeled/unlabeled partition during self-training. Pseudo-labeled entries are
/// flagged so they can be audited against ground truth and never replace it.
template <typename T>
struct MetaState {
  std::vector<std::size_t> labeled_idx;
  std::vector<int> labeled_labels;
  std::vector<char> is_pseudo;
  std::vector<std::size_t> unlabeled_idx;
  Model<T> model;
  AdamState<T> adam;
  int iteration = 0;
};

struct IterationRecord {
  int iteration = 0;
  std::size_t labeled_size = 0;  // size of the set the network was trained on
  std::size_t pool_size = 0;     // unlabeled pool before selection
  std::size_t selected = 0;
  double pseudo_accuracy = std::numeric_limits<double>::quiet_NaN();             // of this iteration's picks
  double cumulative_pseudo_accuracy = std::numeric_limits<double>::quiet_NaN();  // of all pseudo-labels so far
  double mean_triplet_loss = 0.0;  // last training epoch
  double test_error = 0.0;         // percent
  int llgc_iterations = 0;
  bool llgc_converged = true;
  double wall_seconds = 0.0;
};

struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  std::vector<IterationRecord> iterations;

  double final_test_error() const {
    return iterations.empty() ? std::numeric_limits<double>::quiet_NaN() : iterations.back().test_error;
  }
};

using IterationObserver = std::function<void(const IterationRecord&)>;

struct TrainStats {
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
  std::size_t steps = 0;
  std::size_t empty_batches = 0;
};

/// Runs `epochs` passes of shuffled mini-batches over the labeled examples, one Adam
/// step per batch on the mean batch-all triplet loss.
template <typename T>
TrainStats train_embedding(Model<T>& model, AdamState<T>& adam, const Dataset& data,
                           std::span<const std::size_t> indices, std::span<const int> labels, const TrainConfig& config,
                           std::uint64_t seed) {
  if (indices.size() != labels.size()) throw ArgumentError("train_embedding: indices and labels differ in length");
  if (config.batch_size < 2) throw ArgumentError("train_embedding: batch_size must be at least 2");
  if (std::set<int>(labels.begin(), labels.end()).size() < 2)
    throw TrainingError("train_embedding: labeled set has fewer than 2 classes, no valid triplets exist");
  TrainStats stats;
  if (config.epochs == 0) return stats;

  const TripletLossConfig loss_cfg{config.margin};
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> batch_idx;
  std::vector<int> batch_labels;
  ForwardCache<T> cache;
  const auto B = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t len = std::min(B, order.size() - start);
      batch_idx.clear();
      batch_labels.clear();
      for (std::size_t k = start; k < start + len; ++k) {
        batch_idx.push_back(indices[order[k]]);
        batch_labels.push_back(labels[order[k]]);
      }
      const auto triplets = mine_all_valid(batch_labels);
      ++stats.steps;
      if (triplets.empty()) {
        ++stats.empty_batches;
        continue;
      }
      const Matrix<T> x = data.gather<T>(batch_idx);
      const Matrix<T> emb = forward(model, x, cache);
      loss_sum += triplet_loss<T>(emb, triplets, loss_cfg).mean;
      ++loss_batches;
      const Matrix<T> g = triplet_grad<T>(emb, triplets, loss_cfg);
      adam_step(model, backward(model, cache, g), adam);
    }
    const double epoch_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    if (epoch == 0) stats.first_epoch_loss = epoch_loss;
    stats.last_epoch_loss = epoch_loss;
  }
  if (stats.empty_batches > 0)
    log::warn("train_embedding: " + std::to_string(stats.empty_batches) + " of " + std::to_string(stats.steps) +
              " mini-batches had no valid triplets (loss 0, no update)");
  return stats;
}

/// Mean batch-all triplet loss of the model over the given examples in chunks of
/// `batch_size`, without updating anything.
template <typename T>
double mean_triplet_loss(const Model<T>& model, const Dataset& data, std::span<const std::size_t> indices,
                         std::span<const int> labels, int batch_size, double margin) {
  double sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t len = std::min(static_cast<std::size_t>(batch_size), indices.size() - start);
    const auto triplets = mine_all_valid(labels.subspan(start, len));
    if (triplets.empty()) continue;
    const Matrix<T> emb = forward(model, data.gather<T>(indices.subspan(start, len)));
    sum += triplet_loss<T>(emb, triplets, TripletLossConfig{margin}).mean;
    ++batches;
  }
  return batches ? sum / static_cast<double>(batches) : 0.0;
}

/// 1-NN (or k-NN) test error in percent, using the embedded reference set.
template <typename T>
double evaluate(const Model<T>& model, const Dataset& reference_data, std::span<const std::size_t> reference_idx,
                std::span<const int> reference_labels, const Dataset& test, int k = 1) {
  if (reference_idx.empty()) throw ArgumentError("evaluate: empty reference set");
  if (!test.has_labels()) throw ArgumentError("evaluate: test set has no labels");
  if (test.size() == 0) return 0.0;
  const auto ref = embed(model, reference_data, reference_idx);
  const auto tst = embed(model, test);
  const auto pred = knn_predict<T>(tst.rows, ref.rows, reference_labels, k);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i].label != test.labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(test.size());
}

namespace detail {

template <typename T>
MetaState<T> initial_state(const Dataset& train, const Split& split, const Model<T>& initial) {
  MetaState<T> st;
  st.labeled_idx = split.labeled_idx;
  for (std::size_t i : split.labeled_idx) st.labeled_labels.push_back(train.labels.at(i));
  st.is_pseudo.assign(st.labeled_idx.size(), 0);
  st.unlabeled_idx = split.unlabeled_idx;
  st.model = initial;
  return st;
}

inline void check_split(const Dataset& train, const Split& split) {
  if (!train.has_labels()) throw ArgumentError("self-training needs ground-truth labels for the labeled split");
  std::vector<char> seen(train.size(), 0);
  for (auto* part : {&split.labeled_idx, &split.unlabeled_idx})
    for (std::size_t i : *part) {
      if (i >= train.size()) throw ArgumentError("split index " + std::to_string(i) + " out of range");
      if (seen[i]) throw ArgumentError("split index " + std::to_string(i) + " appears twice");
      seen[i] = 1;
    }
}

template <typename T>
void prepare_iteration(MetaState<T>& st, const SelfTrainConfig& cfg, int t) {
  if (cfg.restart == Restart::cold && t > 1) {
    st.model = init_model<T>(st.model.specs, st.model.input_shape, derive_seed(cfg.seed, 1000 + t));
    st.adam = AdamState<T>{};
  }
  st.adam.config = cfg.train.adam;
}

}  // namespace detail

/// Shared loop of both self-training variants (dispatching on config.variant).
template <typename T>
RunReport self_train(const Dataset& train, const Split& split, const SelfTrainConfig& cfg, const Model<T>& initial,
                     const IterationObserver& observer = {}, Model<T>* trained = nullptr) {
  cfg.validate();
  detail::check_split(train, split);
  MetaState<T> st = detail::initial_state(train, split, initial);
  const std::size_t initial_pool = st.unlabeled_idx.size();
  RunReport report;
  report.method = cfg.variant == Variant::siamese ? "siamese" : "llgc";
  report.seed = cfg.seed;
  std::size_t pseudo_total = 0;
  std::size_t pseudo_correct = 0;

  for (int t = 1; t <= cfg.meta_iterations; ++t) {
    const auto clock_start = std::chrono::steady_clock::now();
    st.iteration = t;
    detail::prepare_iteration(st, cfg, t);
    IterationRecord rec;
    rec.iteration = t;
    rec.labeled_size = st.labeled_idx.size();
    rec.pool_size = st.unlabeled_idx.size();

    const auto stats = train_embedding(st.model, st.adam, train, st.labeled_idx, st.labeled_labels, cfg.train,
                                       derive_seed(cfg.seed, 100 + static_cast<std::uint64_t>(t)));
    rec.mean_triplet_loss = stats.last_epoch_loss;

    const auto emb_l = embed(st.model, train, st.labeled_idx);
    if (split.test.size() > 0) {
      const auto emb_test = embed(st.model, split.test);
      const auto pred = knn_predict<T>(emb_test.rows, emb_l.rows, st.labeled_labels, cfg.eval_k);
      std::size_t wrong = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) wrong += pred[i].label != split.test.labels[i];
      rec.test_error = 100.0 * static_cast<double>(wrong) / static_cast<double>(split.test.size());
    }

    if (st.unlabeled_idx.empty()) {
      log::info(report.method + " iteration " + std::to_string(t) + ": unlabeled pool exhausted, retraining only");
    } else {
      const auto emb_u = embed(st.model, train, st.unlabeled_idx);
      const auto knn = knn_predict<T>(emb_u.rows, emb_l.rows, st.labeled_labels, 1);
      const std::size_t basis = cfg.basis == SelectionBasis::current ? st.unlabeled_idx.size() : initial_pool;
      std::vector<std::size_t> picked;
      std::vector<int> new_labels;  // indexed by pool position
      if (cfg.variant == Variant::siamese) {
        picked = select_top_by_distance(knn, cfg.selection_percent, basis);
        for (const auto& p : knn) new_labels.push_back(p.label);
      } else {
        // Anchor the graph with (a capped subsample of) the labeled rows.
        std::vector<std::size_t> anchor(st.labeled_idx.size());
        std::iota(anchor.begin(), anchor.end(), std::size_t{0});
        if (anchor.size() > cfg.llgc_size_cap) {
          std::mt19937_64 rng(derive_seed(cfg.seed, 500 + static_cast<std::uint64_t>(t)));
          std::shuffle(anchor.begin(), anchor.end(), rng);
          anchor.resize(cfg.llgc_size_cap);
          std::sort(anchor.begin(), anchor.end());
        }
        Matrix<T> graph(static_cast<Eigen::Index>(anchor.size()) + emb_u.rows.rows(), emb_u.rows.cols());
        std::vector<int> anchor_labels;
        for (std::size_t r = 0; r < anchor.size(); ++r) {
          graph.row(static_cast<Eigen::Index>(r)) = emb_l.rows.row(static_cast<Eigen::Index>(anchor[r]));
          anchor_labels.push_back(st.labeled_labels[anchor[r]]);
        }
        graph.bottomRows(emb_u.rows.rows()) = emb_u.rows;
        std::vector<int> knn_labels;
        for (const auto& p : knn) knn_labels.push_back(p.label);
        const auto Y = seed_label_matrix(anchor_labels, knn_labels, train.num_classes);
        const auto S = normalize_affinity(affinity(graph, cfg.llgc.sigma));
        const auto prop = propagate(S, Y.Y, cfg.llgc);
        rec.llgc_iterations = prop.iterations_used;
        rec.llgc_converged = prop.converged;
        if (!prop.converged)
          log::warn("llgc iteration " + std::to_string(t) + ": propagation stopped after " +
                    std::to_string(prop.iterations_used) + " steps without converging; using current labels");
        const auto hard = harden(prop.F, Y.labeled_count);
        picked = select_top_by_score(hard.scores, cfg.selection_percent, basis);
        new_labels = hard.labels;
      }

      std::size_t correct = 0;
      std::vector<char> drop(st.unlabeled_idx.size(), 0);
      for (std::size_t pos : picked) {
        const std::size_t idx = st.unlabeled_idx[pos];
        st.labeled_idx.push_back(idx);
        st.labeled_labels.push_back(new_labels[pos]);
        st.is_pseudo.push_back(1);
        correct += new_labels[pos] == train.labels[idx];
        drop[pos] = 1;
      }
      std::vector<std::size_t> remaining;
      remaining.reserve(st.unlabeled_idx.size() - picked.size());
      for (std::size_t pos = 0; pos < st.unlabeled_idx.size(); ++pos)
        if (!drop[pos]) remaining.push_back(st.unlabeled_idx[pos]);
      st.unlabeled_idx = std::move(remaining);

      rec.selected = picked.size();
      pseudo_total += picked.size();
      pseudo_correct += correct;
      if (!picked.empty())
        rec.pseudo_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(picked.size());
    }
    if (pseudo_total > 0)
      rec.cumulative_pseudo_accuracy = 100.0 * static_cast<double>(pseudo_correct) / static_cast<double>(pseudo_total);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
    report.iterations.push_back(rec);
    if (observer) observer(rec);
  }
  if (trained) *trained = std::move(st.model);
  return report;
}

/// Siamese self-training: pseudo-labels come straight from 1-NN in embedding space and
/// the closest p% of the pool are promoted.
template <typename T>
RunReport siamese_self_train(const Dataset& train, const Split& split, SelfTrainConfig cfg, const Model<T>& initial,
                             const IterationObserver& observer = {}, Model<T>* trained = nullptr) {
  if (cfg.variant != Variant::siamese) throw ArgumentError("siamese_self_train: config variant must be siamese");
  return self_train(train, split, cfg, initial, observer, trained);
}

/// LLGC self-training: 1-NN predictions seed the label matrix, propagation over the
/// embedding graph relabels the pool, and the highest-scoring p% are promoted.
template <typename T>
RunReport llgc_self_train(const Dataset& train, const Split& split, SelfTrainConfig cfg, const Model<T>& initial,
                          const IterationObserver& observer = {}, Model<T>* trained = nullptr) {
  if (cfg.variant != Variant::llgc) throw ArgumentError("llgc_self_train: config variant must be llgc");
  return self_train(train, split, cfg, initial, observer, trained);
}

/// One training phase on ground truth only. With `all_labels` the whole training set
/// is used with its true labels (the fully supervised reference).
template <typename T>
RunReport supervised_baseline(const Dataset& train, const Split& split, const SelfTrainConfig& cfg,
                              const Model<T>& initial, bool all_labels = false, Model<T>* trained = nullptr) {
  detail::check_split(train, split);
  const auto clock_start = std::chrono::steady_clock::now();
  std::vector<std::size_t> idx = split.labeled_idx;
  if (all_labels) {
    idx.insert(idx.end(), split.unlabeled_idx.begin(), split.unlabeled_idx.end());
    std::sort(idx.begin(), idx.end());
  }
  std::vector<int> labels;
  for (std::size_t i : idx) labels.push_back(train.labels.at(i));
  Model<T> model = initial;
  AdamState<T> adam;
  adam.config = cfg.train.adam;
  // Same training seed stream as the first self-training iteration.
  const auto stats = train_embedding(model, adam, train, idx, labels, cfg.train, derive_seed(cfg.seed, 101));
  IterationRecord rec;
  rec.iteration = 1;
  rec.labeled_size = idx.size();
  rec.pool_size = all_labels ? 0 : split.unlabeled_idx.size();
  rec.mean_triplet_loss = stats.last_epoch_loss;
  if (split.test.size() > 0) rec.test_error = evaluate(model, train, idx, labels, split.test, cfg.eval_k);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  RunReport report;
  report.method = all_labels ? "all_labels" : "supervised";
  report.seed = cfg.seed;
  report.iterations.push_back(rec);
  if (trained) *trained = std::move(model);
  return report;
}

}  // namespace siamssl
