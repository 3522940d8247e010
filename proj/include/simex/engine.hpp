#pragma once

// The similarity engine: pretrain one autoencoder per reference set, push
// unknown samples through each member, average the per-sample
// reconstruction differences into a Delta matrix, and rank references by
// ascending Delta. Also implements per-reference L2-norm normalization and
// the ordering-convergence early stop.

#include "simex/analytics.hpp"
#include "simex/checkpoint.hpp"
#include "simex/dataset.hpp"
#include "simex/losses.hpp"
#include "simex/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace simex {

template <typename Scalar = float>
struct Fleet {
  std::map<std::string, AutoencoderModel<Scalar>> members;  // reference id -> model
  TrainConfig config;

  std::vector<std::string> reference_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, m] : members) ids.push_back(id);
    return ids;
  }
};

struct DeltaResult {
  double mean = 0;
  std::vector<double> per_sample;
};

struct DeltaMatrix {
  std::vector<std::string> row_ids;  // unknown sets
  std::vector<std::string> col_ids;  // references
  Eigen::MatrixXd values;            // Delta(row | col)
  std::string loss;
  bool normalized = false;
  std::map<std::string, double> reference_norms;  // present iff normalized
};

struct SimilarityOrdering {
  std::vector<std::string> order;  // most similar (smallest Delta) first
  std::vector<double> deltas;      // aligned, non-decreasing
  std::string tie_break = "lexical-id";
};

// Deterministic per-member seed derived from the shared seed and the
// reference id, so parallel and serial pretraining agree bit for bit.
inline std::uint64_t member_seed(std::uint64_t base_seed, const std::string& reference_id) {
  return RngStream(base_seed ^ RngStream::hash_string(reference_id)).next_u64();
}

template <typename Scalar = float>
Fleet<Scalar> pretrain_fleet(const std::map<std::string, Dataset>& references,
                             const TrainConfig& config, int num_workers = 1) {
  if (references.empty()) throw std::invalid_argument("pretrain_fleet: no references");
  for (const auto& [id, d] : references)
    if (d.n == 0)
      throw std::invalid_argument("pretrain_fleet: reference '" + id + "' is empty");

  Fleet<Scalar> fleet;
  fleet.config = config;
  std::vector<std::pair<std::string, const Dataset*>> jobs;
  for (const auto& [id, d] : references) jobs.emplace_back(id, &d);
  std::vector<AutoencoderModel<Scalar>> trained(jobs.size());
  std::vector<std::string> errors(jobs.size());

  auto run_job = [&](std::size_t j) {
    const auto& [id, data] = jobs[j];
    try {
      TrainConfig cfg = config;
      cfg.seed = member_seed(config.seed, id);
      auto model = build_autoencoder<Scalar>(data->height, data->width, cfg.seed);
      model.meta.reference_id = id;
      train(model, *data, cfg);
      trained[j] = std::move(model);
    } catch (const std::exception& e) {
      errors[j] = "reference '" + id + "': " + e.what();
    }
  };

  if (num_workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < num_workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1))
          run_job(j);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("pretrain_fleet: " + e);
  for (std::size_t j = 0; j < jobs.size(); ++j)
    fleet.members.emplace(jobs[j].first, std::move(trained[j]));
  return fleet;
}

// Delta(X | Y_k): mean per-sample reconstruction difference of X through
// one fleet member. The per-sample list is kept for percentile reporting.
template <typename Scalar>
DeltaResult evaluate_delta(const AutoencoderModel<Scalar>& member, const Dataset& x,
                           const LossKind& kind) {
  if (x.n == 0) throw std::invalid_argument("evaluate_delta: empty unknown set");
  if (!member.meta.loss.empty() && member.meta.loss != loss_name(kind.id))
    throw std::invalid_argument("evaluate_delta: member trained with loss '" +
                                member.meta.loss + "', asked to compare with '" +
                                loss_name(kind.id) + "'");
  DeltaResult res;
  res.per_sample.reserve(static_cast<std::size_t>(x.n));
  const int chunk = 256;
  for (int b = 0; b < x.n; b += chunk) {
    const int e = std::min(x.n, b + chunk);
    std::vector<int> idx;
    for (int i = b; i < e; ++i) idx.push_back(i);
    const Tensor<Scalar> batch = x.batch<Scalar>(idx);
    const Tensor<Scalar> out = reconstruct(member, batch);
    const long sz = x.sample_size();
    for (int i = 0; i < e - b; ++i) {
      Tensor<Scalar> xi({x.height, x.width}), oi({x.height, x.width});
      xi.data = batch.data.segment(long(i) * sz, sz);
      oi.data = out.data.segment(long(i) * sz, sz);
      res.per_sample.push_back(double(sample_delta(xi, oi, kind).value));
    }
  }
  // fixed left-to-right accumulation keeps the mean bit-reproducible
  double total = 0;
  for (double v : res.per_sample) total += v;
  res.mean = total / double(res.per_sample.size());
  return res;
}

template <typename Scalar>
DeltaMatrix delta_matrix(const Fleet<Scalar>& fleet,
                         const std::map<std::string, Dataset>& unknowns,
                         const LossKind& kind, int num_workers = 1) {
  if (fleet.members.empty() || unknowns.empty())
    throw std::invalid_argument("delta_matrix: empty fleet or unknown list");
  DeltaMatrix m;
  for (const auto& [id, d] : unknowns) m.row_ids.push_back(id);
  m.col_ids = fleet.reference_ids();
  m.loss = loss_name(kind.id);
  m.values.resize(long(m.row_ids.size()), long(m.col_ids.size()));

  struct Cell { std::size_t r, c; };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < m.row_ids.size(); ++r)
    for (std::size_t c = 0; c < m.col_ids.size(); ++c) cells.push_back({r, c});

  auto run_cell = [&](const Cell& cell) {
    const Dataset& x = unknowns.at(m.row_ids[cell.r]);
    const auto& member = fleet.members.at(m.col_ids[cell.c]);
    m.values(long(cell.r), long(cell.c)) = evaluate_delta(member, x, kind).mean;
  };

  if (num_workers <= 1) {
    for (const auto& cell : cells) run_cell(cell);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < num_workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < cells.size(); j = next.fetch_add(1))
          run_cell(cells[j]);
      });
    for (auto& t : pool) t.join();
  }
  return m;
}

// References sorted by ascending Delta; equal values fall back to lexical
// id order so reruns agree.
inline SimilarityOrdering order_by_similarity(const std::vector<std::string>& ids,
                                              const std::vector<double>& deltas) {
  if (ids.empty() || ids.size() != deltas.size())
    throw std::invalid_argument("order_by_similarity: id/delta size mismatch");
  for (double d : deltas)
    if (!std::isfinite(d))
      throw std::invalid_argument("order_by_similarity: non-finite delta");
  std::vector<std::size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (deltas[a] != deltas[b]) return deltas[a] < deltas[b];
    return ids[a] < ids[b];
  });
  SimilarityOrdering out;
  for (std::size_t i : idx) {
    out.order.push_back(ids[i]);
    out.deltas.push_back(deltas[i]);
  }
  return out;
}

inline SimilarityOrdering order_row(const DeltaMatrix& m, const std::string& row_id) {
  const auto it = std::find(m.row_ids.begin(), m.row_ids.end(), row_id);
  if (it == m.row_ids.end())
    throw std::invalid_argument("order_row: unknown row id '" + row_id + "'");
  const long r = it - m.row_ids.begin();
  std::vector<double> deltas(m.values.cols());
  for (long c = 0; c < m.values.cols(); ++c) deltas[std::size_t(c)] = m.values(r, c);
  return order_by_similarity(m.col_ids, deltas);
}

// Mean sample L2 norm of a reference set (sqrt of per-sample pixel sum of
// squares, averaged over samples).
inline double mean_l2_norm(const Dataset& d) {
  if (d.n == 0) throw std::invalid_argument("mean_l2_norm: empty dataset");
  double total = 0;
  for (int i = 0; i < d.n; ++i) {
    double ss = 0;
    const float* p = d.sample_ptr(i);
    for (long j = 0; j < d.sample_size(); ++j) ss += double(p[j]) * p[j];
    total += std::sqrt(ss);
  }
  return total / d.n;
}

// Divides each column by its reference's dataset-wide mean sample L2 norm.
// Within-column orderings are untouched (positive scaling).
inline DeltaMatrix normalize_deltas(const DeltaMatrix& m,
                                    const std::map<std::string, Dataset>& references) {
  if (m.normalized) throw std::invalid_argument("normalize_deltas: already normalized");
  DeltaMatrix out = m;
  out.normalized = true;
  for (std::size_t c = 0; c < m.col_ids.size(); ++c) {
    const auto it = references.find(m.col_ids[c]);
    if (it == references.end())
      throw std::invalid_argument("normalize_deltas: missing reference '" +
                                  m.col_ids[c] + "'");
    const double norm = mean_l2_norm(it->second);
    if (norm == 0)
      throw std::invalid_argument("normalize_deltas: zero-norm reference '" +
                                  m.col_ids[c] + "'");
    out.reference_norms[m.col_ids[c]] = norm;
    out.values.col(long(c)) /= norm;
  }
  return out;
}

// ---- ordering-convergence early stop --------------------------------------

struct ConvergenceResult {
  int convergence_epoch = 0;   // epoch at which training stopped
  bool converged = false;
  std::vector<int> checkpoint_epochs;
  std::vector<SimilarityOrdering> orderings;  // one per evaluated checkpoint
  std::vector<double> rho_vs_final;           // empty unless final supplied
};

inline std::vector<int> default_checkpoint_epochs() { return {3, 5, 7, 10, 25, 50, 100}; }

// Trains one reference autoencoder, pausing at each checkpoint epoch to
// rank the probe sets by Delta. Stops at the first checkpoint whose probe
// ordering has been identical for `stability_window` consecutive
// checkpoints; the interim model at that point is returned.
template <typename Scalar = float>
AutoencoderModel<Scalar> train_with_ordering_convergence(
    const Dataset& reference, const std::map<std::string, Dataset>& probe_sets,
    const TrainConfig& config, ConvergenceResult& result,
    std::vector<int> checkpoint_epochs = default_checkpoint_epochs(),
    int stability_window = 3,
    const std::vector<std::string>* final_ordering = nullptr) {
  if (!std::is_sorted(checkpoint_epochs.begin(), checkpoint_epochs.end()))
    throw std::invalid_argument("checkpoint epochs must be ascending");
  if (checkpoint_epochs.empty())
    throw std::invalid_argument("need at least one checkpoint epoch");
  if (stability_window < 2)
    throw std::invalid_argument("stability_window must be >= 2");
  if (probe_sets.empty()) throw std::invalid_argument("no probe sets");

  result = ConvergenceResult{};
  auto model = build_autoencoder<Scalar>(reference.height, reference.width, config.seed);
  model.meta.reference_id = reference.id;

  // Training proceeds in legs between checkpoints; optimizer accumulators
  // and the shuffle stream persist across legs, so the interim model equals
  // the one an uninterrupted run would hold at that epoch.
  OptimizerState<Scalar> opt(config.optimizer, model.net.params());
  RngStream shuffler(RngStream(config.seed).derive(0));
  TrainConfig leg = config;
  int trained = 0;
  int streak = 0;
  for (int cp : checkpoint_epochs) {
    leg.epochs = cp - trained;
    if (leg.epochs < 0) throw std::invalid_argument("checkpoint epochs must be ascending");
    train_epochs(model, reference, leg, opt, shuffler);
    trained = cp;

    std::vector<std::string> ids;
    std::vector<double> deltas;
    for (const auto& [id, probe] : probe_sets) {
      ids.push_back(id);
      deltas.push_back(evaluate_delta(model, probe, config.loss).mean);
    }
    const SimilarityOrdering ordering = order_by_similarity(ids, deltas);

    if (!result.orderings.empty() && result.orderings.back().order == ordering.order)
      ++streak;
    else
      streak = 1;
    result.checkpoint_epochs.push_back(cp);
    result.orderings.push_back(ordering);
    if (final_ordering)
      result.rho_vs_final.push_back(spearman_rho(ordering.order, *final_ordering));
    if (streak >= stability_window) {
      result.converged = true;
      result.convergence_epoch = cp;
      return model;
    }
  }
  result.converged = false;
  result.convergence_epoch = checkpoint_epochs.back();
  return model;
}

// ---- exports --------------------------------------------------------------

inline void write_delta_csv(const DeltaMatrix& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "unknown";
  for (const auto& c : m.col_ids) f << ',' << c;
  f << '\n';
  f.precision(17);
  for (std::size_t r = 0; r < m.row_ids.size(); ++r) {
    f << m.row_ids[r];
    for (long c = 0; c < m.values.cols(); ++c) f << ',' << m.values(long(r), c);
    f << '\n';
  }
  if (!f) throw std::runtime_error("write failure on " + path);
}

inline nlohmann::json delta_to_json(const DeltaMatrix& m) {
  nlohmann::json j;
  j["row_ids"] = m.row_ids;
  j["col_ids"] = m.col_ids;
  j["loss"] = m.loss;
  j["normalized"] = m.normalized;
  if (m.normalized) j["reference_norms"] = m.reference_norms;
  nlohmann::json vals = nlohmann::json::array();
  for (long r = 0; r < m.values.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (long c = 0; c < m.values.cols(); ++c) row.push_back(m.values(r, c));
    vals.push_back(std::move(row));
  }
  j["values"] = std::move(vals);
  return j;
}

}  // namespace simex
