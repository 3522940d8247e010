#pragma once

// Validation statistics: Spearman rank correlation (fractional ranks on
// ties) and the greedy global-minimum class pairing.

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace simex {

struct RankList {
  std::vector<std::string> ids;   // most-preferred first
  std::vector<double> ranks;      // fractional ranks aligned with ids
};

// Fractional ranks of a value map; ties share the average of their
// positions. The returned sequence is ordered by (value, id) ascending, or
// descending values when ascending == false.
inline RankList rank_of(const std::map<std::string, double>& values, bool ascending = true) {
  for (const auto& [id, v] : values)
    if (!std::isfinite(v))
      throw std::invalid_argument("rank_of: non-finite value for id '" + id + "'");
  std::vector<std::pair<std::string, double>> items(values.begin(), values.end());
  std::sort(items.begin(), items.end(), [&](const auto& a, const auto& b) {
    if (a.second != b.second) return ascending ? a.second < b.second : a.second > b.second;
    return a.first < b.first;
  });
  RankList out;
  out.ids.reserve(items.size());
  out.ranks.resize(items.size());
  for (const auto& [id, v] : items) out.ids.push_back(id);
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j + 1 < items.size() && items[j + 1].second == items[i].second) ++j;
    const double avg = (double(i) + double(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) out.ranks[k] = avg;
    i = j + 1;
  }
  return out;
}

namespace detail {

inline std::map<std::string, double> rank_map(const RankList& r) {
  if (r.ids.empty()) throw std::invalid_argument("spearman_rho: empty rank list");
  std::map<std::string, double> m;
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    const double rank = r.ranks.empty() ? double(i + 1) : r.ranks[i];
    if (!m.emplace(r.ids[i], rank).second)
      throw std::invalid_argument("spearman_rho: duplicate id '" + r.ids[i] + "'");
  }
  return m;
}

}  // namespace detail

// Spearman's rho. Tie-free inputs use the exact 1 - 6*sum(d^2)/(n(n^2-1))
// formula; with ties it falls back to Pearson over the fractional ranks.
inline double spearman_rho(const RankList& a, const RankList& b) {
  const auto ra = detail::rank_map(a);
  const auto rb = detail::rank_map(b);
  if (ra.size() != rb.size())
    throw std::invalid_argument("spearman_rho: rank lists differ in size");
  const std::size_t n = ra.size();
  if (n < 2) throw std::invalid_argument("spearman_rho: need at least 2 ids");

  Eigen::VectorXd x(n), y(n);
  std::size_t i = 0;
  bool ties = false;
  for (const auto& [id, rank] : ra) {
    const auto it = rb.find(id);
    if (it == rb.end())
      throw std::invalid_argument("spearman_rho: id '" + id + "' missing from second list");
    x[long(i)] = rank;
    y[long(i)] = it->second;
    ties = ties || rank != std::floor(rank) || it->second != std::floor(it->second);
    ++i;
  }
  // fractional (x.5) ranks only appear on ties; integer ranks can still tie,
  // but then two ids share a rank and the sets {1..n} mismatch
  if (!ties) {
    std::vector<double> sx(x.data(), x.data() + n), sy(y.data(), y.data() + n);
    std::sort(sx.begin(), sx.end());
    std::sort(sy.begin(), sy.end());
    for (std::size_t k = 0; k < n; ++k)
      ties = ties || sx[k] != double(k + 1) || sy[k] != double(k + 1);
  }
  if (!ties) {
    const double d2 = (x - y).squaredNorm();
    const double dn = double(n);
    return 1.0 - 6.0 * d2 / (dn * (dn * dn - 1.0));
  }
  const Eigen::VectorXd cx = x.array() - x.mean();
  const Eigen::VectorXd cy = y.array() - y.mean();
  const double den = std::sqrt(cx.squaredNorm() * cy.squaredNorm());
  if (den == 0)
    throw std::invalid_argument("spearman_rho: constant ranks, rho undefined");
  return cx.dot(cy) / den;
}

inline double spearman_rho(const std::vector<std::string>& order_a,
                           const std::vector<std::string>& order_b) {
  return spearman_rho(RankList{order_a, {}}, RankList{order_b, {}});
}

struct Pairing {
  int row = 0, col = 0;
  double cost = 0;
};

struct PairingResult {
  std::vector<Pairing> pairs;        // in selection order, costs non-decreasing
  std::vector<int> unpaired_rows;
  std::vector<int> unpaired_cols;
};

// Repeatedly pick the globally cheapest cell whose row and column are both
// unused; ties break by (row, col) ascending. Deliberately greedy, not an
// optimal assignment.
inline PairingResult greedy_pairing(const Eigen::MatrixXd& costs) {
  const long r = costs.rows(), c = costs.cols();
  if (r < 1 || c < 1) throw std::invalid_argument("greedy_pairing: empty cost matrix");
  if (!costs.allFinite())
    throw std::invalid_argument("greedy_pairing: non-finite cost entries");

  std::vector<bool> row_used(static_cast<std::size_t>(r));
  std::vector<bool> col_used(static_cast<std::size_t>(c));
  PairingResult out;
  const long npairs = std::min(r, c);
  for (long p = 0; p < npairs; ++p) {
    long bi = -1, bj = -1;
    double best = 0;
    for (long i = 0; i < r; ++i) {
      if (row_used[std::size_t(i)]) continue;
      for (long j = 0; j < c; ++j) {
        if (col_used[std::size_t(j)]) continue;
        if (bi < 0 || costs(i, j) < best) {
          best = costs(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    row_used[std::size_t(bi)] = col_used[std::size_t(bj)] = true;
    out.pairs.push_back({int(bi), int(bj), best});
  }
  for (long i = 0; i < r; ++i)
    if (!row_used[std::size_t(i)]) out.unpaired_rows.push_back(int(i));
  for (long j = 0; j < c; ++j)
    if (!col_used[std::size_t(j)]) out.unpaired_cols.push_back(int(j));
  return out;
}

}  // namespace simex
