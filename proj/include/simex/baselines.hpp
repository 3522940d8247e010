#pragma once

// Comparison methods the similarity engine is validated against:
// raw sample-space distances, bottleneck-embedding distances, the
// freeze-conv transfer-retrain baseline, and missing-class confusion
// probes.

#include "simex/dataset.hpp"
#include "simex/losses.hpp"
#include "simex/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

enum class PairScheme { PairwiseMean, CentroidDistance };

namespace detail {

// Seeded subsample of cross pairs (a from A, b from B), capped.
inline std::vector<std::pair<int, int>> sample_pairs(int na, int nb, std::uint64_t seed,
                                                     long cap = 10000) {
  const long total = long(na) * nb;
  std::vector<std::pair<int, int>> pairs;
  if (total <= cap) {
    pairs.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < na; ++i)
      for (int j = 0; j < nb; ++j) pairs.emplace_back(i, j);
    return pairs;
  }
  // The pair set must be symmetric in (A,B) so d(A,B) == d(B,A) under the
  // same seed; draw index pairs from the smaller-first orientation.
  RngStream rng(seed);
  pairs.reserve(static_cast<std::size_t>(cap));
  for (long k = 0; k < cap; ++k) {
    const int lo = int(rng.next_below(std::uint64_t(std::min(na, nb))));
    const int hi = int(rng.next_below(std::uint64_t(std::max(na, nb))));
    pairs.emplace_back(na <= nb ? lo : hi, na <= nb ? hi : lo);
  }
  return pairs;
}

}  // namespace detail

// Mean per-pair distance directly in the sample space. metric mse is the
// pixel-mean squared difference; issim is 1 - SSIM.
inline double sample_distance(const Dataset& a, const Dataset& b, const LossKind& metric,
                              std::uint64_t seed = 0,
                              PairScheme scheme = PairScheme::PairwiseMean) {
  if (a.n == 0 || b.n == 0) throw std::invalid_argument("sample_distance: empty set");
  if (a.height != b.height || a.width != b.width)
    throw std::invalid_argument("sample_distance: shape mismatch");

  if (scheme == PairScheme::CentroidDistance) {
    Tensor<float> ca({a.height, a.width}), cb({a.height, a.width});
    for (int i = 0; i < a.n; ++i)
      ca.data += Eigen::Map<const Eigen::ArrayXf>(a.sample_ptr(i), a.sample_size());
    for (int i = 0; i < b.n; ++i)
      cb.data += Eigen::Map<const Eigen::ArrayXf>(b.sample_ptr(i), b.sample_size());
    ca.data /= float(a.n);
    cb.data /= float(b.n);
    return double(sample_delta(ca, cb, metric).value);
  }

  double total = 0;
  const auto pairs = detail::sample_pairs(a.n, b.n, seed);
  for (const auto& [i, j] : pairs) {
    const Tensor<float> xa = a.sample<float>(i);
    const Tensor<float> xb = b.sample<float>(j);
    total += double(sample_delta(xa, xb, metric).value);
  }
  return total / double(pairs.size());
}

// Mean L2 distance between bottleneck embeddings over the same seeded
// pair-subsampling scheme.
template <typename Scalar>
double embedding_distance(const AutoencoderModel<Scalar>& model, const Dataset& a,
                          const Dataset& b, std::uint64_t seed = 0) {
  if (a.n == 0 || b.n == 0) throw std::invalid_argument("embedding_distance: empty set");
  if (a.height != b.height || a.width != b.width ||
      a.height != model.meta.input_h || a.width != model.meta.input_w)
    throw std::invalid_argument("embedding_distance: shape mismatch");

  auto embed_all = [&](const Dataset& d) {
    std::vector<int> idx(static_cast<std::size_t>(d.n));
    std::iota(idx.begin(), idx.end(), 0);
    return bottleneck_embed(model, d.batch<Scalar>(idx));
  };
  const Tensor<Scalar> ea = embed_all(a);
  const Tensor<Scalar> eb = embed_all(b);
  const long w = ea.size() / a.n;

  double total = 0;
  const auto pairs = detail::sample_pairs(a.n, b.n, seed);
  for (const auto& [i, j] : pairs) {
    double ss = 0;
    for (long k = 0; k < w; ++k) {
      const double d = double(ea.data[long(i) * w + k]) - double(eb.data[long(j) * w + k]);
      ss += d * d;
    }
    total += std::sqrt(ss);
  }
  return total / double(pairs.size());
}

struct TransferResult {
  std::string base_id, target_id;
  double retrained_accuracy = 0;
  double base_accuracy = 0;
  double normalized_accuracy = 0;  // retrained / base
  int epochs_to_best = 0;
  double wall_seconds = 0;
};

inline double evaluate_accuracy(const std::vector<int>& predictions,
                                const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw std::invalid_argument("evaluate_accuracy: size mismatch or empty");
  long hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return double(hits) / double(predictions.size());
}

template <typename Scalar>
std::vector<int> predict_labels(const ClassifierModel<Scalar>& model, const Dataset& d) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(d.n));
  const int chunk = 256;
  for (int b = 0; b < d.n; b += chunk) {
    std::vector<int> idx;
    for (int i = b; i < std::min(d.n, b + chunk); ++i) idx.push_back(i);
    const Tensor<Scalar> proba = predict_proba(model, d.batch<Scalar>(idx));
    const int c = proba.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (proba.data[long(i) * c + j] > proba.data[long(i) * c + best]) best = j;
      out.push_back(best);
    }
  }
  return out;
}

template <typename Scalar>
double evaluate_accuracy(const ClassifierModel<Scalar>& model, const Dataset& test) {
  if (test.n == 0) throw std::invalid_argument("evaluate_accuracy: empty test set");
  if (!test.labeled()) throw std::invalid_argument("evaluate_accuracy: unlabeled test set");
  return evaluate_accuracy(predict_labels(model, test), test.labels);
}

// Freezes the conv trunk of a trained base classifier and retrains its FC
// head on the target's train split. Tracks the best test accuracy; stops
// once the test loss has not improved for `patience` epochs.
template <typename Scalar>
TransferResult transfer_retrain(const ClassifierModel<Scalar>& base,
                                const Dataset& target_train, const Dataset& target_test,
                                const TrainConfig& cfg, double base_accuracy,
                                int patience = 3) {
  if (!target_train.labeled() || !target_test.labeled())
    throw std::invalid_argument("transfer_retrain: target must be labeled");
  for (int l : target_train.labels)
    if (l >= base.meta.num_classes)
      throw std::invalid_argument("transfer_retrain: target class count exceeds base");

  const auto t0 = std::chrono::steady_clock::now();
  ClassifierModel<Scalar> model = base;

  TransferResult res;
  res.base_id = base.meta.reference_id;
  res.target_id = target_train.id;
  res.base_accuracy = base_accuracy;

  TrainConfig per_epoch = cfg;
  per_epoch.epochs = 1;

  // one optimizer across epochs; only FC params are registered
  std::vector<Tensor<Scalar>*> trainable;
  {
    auto& layers = model.net.layers();
    for (std::size_t li = base.conv_layer_count; li < layers.size(); ++li)
      for (auto& p : layers[li].params) trainable.push_back(&p);
  }

  double best_loss = std::numeric_limits<double>::infinity();
  double best_acc = 0;
  int best_epoch = 0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    per_epoch.seed = RngStream(cfg.seed).derive(std::uint64_t(epoch)).seed();
    train(model, target_train, per_epoch, base.conv_layer_count);

    // test loss for the stopping rule, accuracy for the report
    std::vector<int> idx(static_cast<std::size_t>(target_test.n));
    std::iota(idx.begin(), idx.end(), 0);
    Tensor<Scalar> logits = model.net.forward(target_test.batch<Scalar>(idx));
    Tensor<Scalar> unused;
    const double test_loss = detail::softmax_xent(logits, target_test.labels, unused);
    const double acc = evaluate_accuracy(model, target_test);
    if (test_loss < best_loss) {
      best_loss = test_loss;
      best_acc = acc;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= patience) {
      break;
    }
  }
  res.retrained_accuracy = best_acc;
  res.normalized_accuracy = base_accuracy > 0 ? best_acc / base_accuracy : 0;
  res.epochs_to_best = best_epoch;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

struct ConfusionReport {
  int held_out_class = 0;
  std::vector<int> classes;          // the 9 remaining class labels, ascending
  std::vector<double> mean_softmax;  // aligned with classes, sums to 1
};

// Trains a 9-class classifier with class k withheld, then reports the mean
// softmax that held-out class-k samples place on the other classes.
template <typename Scalar = float>
ConfusionReport confusion_probe(const Dataset& train_data, const Dataset& probe_data,
                                int k, const TrainConfig& cfg) {
  const auto part = partition_by_class(train_data);
  if (part.size() != 10)
    throw std::invalid_argument("confusion_probe: need all 10 classes, found " +
                                std::to_string(part.size()));
  if (part.find(k) == part.end())
    throw std::invalid_argument("confusion_probe: class " + std::to_string(k) +
                                " missing");

  // remap the 9 remaining classes to contiguous labels
  ConfusionReport rep;
  rep.held_out_class = k;
  std::map<int, int> remap;
  for (const auto& [cls, idx] : part)
    if (cls != k) {
      remap[cls] = int(rep.classes.size());
      rep.classes.push_back(cls);
    }

  std::vector<int> keep;
  for (const auto& [cls, idx] : part)
    if (cls != k) keep.insert(keep.end(), idx.begin(), idx.end());
  std::sort(keep.begin(), keep.end());
  Dataset nine = train_data.subset(keep, train_data.id + "/minus-" + std::to_string(k));
  for (auto& l : nine.labels) l = remap.at(l);

  auto model = build_classifier<Scalar>(nine.height, nine.width, 9, cfg.seed);
  model.meta.reference_id = nine.id;
  train(model, nine, cfg);

  // mean softmax of the held-out class samples
  std::vector<int> probe_idx;
  for (int i = 0; i < probe_data.n; ++i)
    if (probe_data.labels.at(static_cast<std::size_t>(i)) == k) probe_idx.push_back(i);
  if (probe_idx.empty())
    throw std::invalid_argument("confusion_probe: no probe samples of class " +
                                std::to_string(k));
  rep.mean_softmax.assign(9, 0.0);
  const int chunk = 256;
  for (std::size_t b = 0; b < probe_idx.size(); b += chunk) {
    std::vector<int> idx(probe_idx.begin() + long(b),
                         probe_idx.begin() + long(std::min(probe_idx.size(), b + chunk)));
    const Tensor<Scalar> proba = predict_proba(model, probe_data.batch<Scalar>(idx));
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < 9; ++j)
        rep.mean_softmax[std::size_t(j)] += double(proba.data[long(i) * 9 + j]);
  }
  for (auto& v : rep.mean_softmax) v /= double(probe_idx.size());
  return rep;
}

}  // namespace simex
