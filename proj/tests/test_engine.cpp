#include "doctest.h"

#include "simex/engine.hpp"
#include "simex/synth.hpp"

#include <fstream>
#include <map>
#include <string>
#include <vector>

using namespace simex;

namespace {

// 16x16 glyph sets keep fleet training fast
Dataset glyph_class(int cls, int count, std::uint64_t seed, const std::string& id) {
  GlyphParams p;
  p.count_per_class = count;
  p.num_classes = 10;
  p.height = p.width = 16;
  Dataset all = synth_glyphs(p, seed);
  std::vector<int> idx;
  for (int i = 0; i < all.n; ++i)
    if (all.labels[std::size_t(i)] == cls) idx.push_back(i);
  Dataset d = all.subset(idx, id);
  d.labels.clear();
  return d;
}

TrainConfig fleet_cfg(int epochs, std::uint64_t seed = 0) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerConfig::adam(1e-3);
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("fleet keeps one member per reference with derived seeds") {
  std::map<std::string, Dataset> refs = {
      {"hbar", glyph_class(0, 6, 1, "hbar")},
      {"vbar", glyph_class(1, 6, 1, "vbar")},
      {"cross", glyph_class(4, 6, 1, "cross")},
  };
  const auto fleet = pretrain_fleet<float>(refs, fleet_cfg(1, 9));
  CHECK(fleet.members.size() == 3);
  CHECK(fleet.reference_ids() == std::vector<std::string>({"cross", "hbar", "vbar"}));
  for (const auto& [id, m] : fleet.members) {
    CHECK(m.meta.reference_id == id);
    CHECK(m.meta.seed == member_seed(9, id));
    CHECK(m.meta.epochs_trained == 1);
  }
  CHECK(member_seed(9, "hbar") != member_seed(9, "vbar"));
  CHECK(member_seed(9, "hbar") != member_seed(10, "hbar"));

  std::map<std::string, Dataset> with_empty = refs;
  with_empty["empty"] = Dataset{};
  with_empty["empty"].id = "empty";
  CHECK_THROWS_AS(pretrain_fleet<float>(with_empty, fleet_cfg(1)), std::invalid_argument);
  CHECK_THROWS_AS(pretrain_fleet<float>({}, fleet_cfg(1)), std::invalid_argument);
}

TEST_CASE("parallel pretraining is bit-identical to serial") {
  std::map<std::string, Dataset> refs = {
      {"a", glyph_class(0, 5, 3, "a")},
      {"b", glyph_class(1, 5, 3, "b")},
      {"c", glyph_class(2, 5, 3, "c")},
      {"d", glyph_class(3, 5, 3, "d")},
  };
  const auto serial = pretrain_fleet<float>(refs, fleet_cfg(2, 17), 1);
  const auto parallel = pretrain_fleet<float>(refs, fleet_cfg(2, 17), 4);
  for (const auto& [id, ms] : serial.members) {
    const auto& mp = parallel.members.at(id);
    const auto ps = ms.net.params();
    const auto pp = mp.net.params();
    REQUIRE(ps.size() == pp.size());
    for (std::size_t i = 0; i < ps.size(); ++i)
      CHECK((ps[i]->data == pp[i]->data).all());
  }
}

TEST_CASE("delta of a reference against its own autoencoder is smallest") {
  std::map<std::string, Dataset> refs = {
      {"hbar", glyph_class(0, 12, 5, "hbar")},
      {"circle", glyph_class(6, 12, 5, "circle")},
  };
  const auto fleet = pretrain_fleet<float>(refs, fleet_cfg(25, 2));
  const auto m = delta_matrix(fleet, refs, LossKind::mse());

  // row hbar: its own member reconstructs it better than the circle member
  const auto oh = order_row(m, "hbar");
  CHECK(oh.order[0] == "hbar");
  const auto oc = order_row(m, "circle");
  CHECK(oc.order[0] == "circle");
}

TEST_CASE("evaluate_delta mean equals the mean of per-sample deltas") {
  const Dataset d = glyph_class(2, 10, 7, "diag");
  auto model = build_autoencoder<float>(16, 16, 1);
  const auto res = evaluate_delta(model, d, LossKind::mse());
  REQUIRE(int(res.per_sample.size()) == d.n);
  double total = 0;
  for (double v : res.per_sample) total += v;
  CHECK(res.mean == total / d.n);
  for (double v : res.per_sample) CHECK(v >= 0.0);

  // duplicating every sample leaves the mean unchanged
  std::vector<int> twice;
  for (int i = 0; i < d.n; ++i) {
    twice.push_back(i);
    twice.push_back(i);
  }
  const auto res2 = evaluate_delta(model, d.subset(twice), LossKind::mse());
  CHECK(res2.mean == doctest::Approx(res.mean).epsilon(1e-12));
}

TEST_CASE("evaluate_delta rejects loss mismatch and empty input") {
  const Dataset d = glyph_class(0, 4, 1, "x");
  auto model = build_autoencoder<float>(16, 16, 0);
  model.meta.loss = "mse";
  CHECK_THROWS_WITH_AS(evaluate_delta(model, d, LossKind::issim()),
                       doctest::Contains("trained with loss"), std::invalid_argument);
  Dataset empty;
  CHECK_THROWS_AS(evaluate_delta(model, empty, LossKind::mse()), std::invalid_argument);
}

TEST_CASE("ordering sorts ascending with lexical tie-break") {
  const auto o =
      order_by_similarity({"zeta", "alpha", "beta", "mid"}, {0.5, 0.5, 0.2, 0.3});
  CHECK(o.order == std::vector<std::string>({"beta", "mid", "alpha", "zeta"}));
  CHECK(o.deltas == std::vector<double>({0.2, 0.3, 0.5, 0.5}));
  CHECK(o.tie_break == "lexical-id");

  CHECK_THROWS_AS(order_by_similarity({"a"}, {0.1, 0.2}), std::invalid_argument);
  CHECK_THROWS_AS(order_by_similarity({"a"}, {std::nan("")}), std::invalid_argument);
}

TEST_CASE("delta matrix parallel equals serial and exports consistently") {
  std::map<std::string, Dataset> refs = {
      {"hbar", glyph_class(0, 5, 11, "hbar")},
      {"vbar", glyph_class(1, 5, 11, "vbar")},
      {"diag", glyph_class(2, 5, 11, "diag")},
  };
  const auto fleet = pretrain_fleet<float>(refs, fleet_cfg(2, 4));
  const auto serial = delta_matrix(fleet, refs, LossKind::mse(), 1);
  const auto parallel = delta_matrix(fleet, refs, LossKind::mse(), 4);
  CHECK(serial.values == parallel.values);

  const auto j = delta_to_json(serial);
  CHECK(j["loss"] == "mse");
  CHECK(j["row_ids"].size() == 3);
  CHECK(j["values"][1][2].get<double>() == serial.values(1, 2));

  const std::string csv_path = "/tmp/simex_test_delta.csv";
  write_delta_csv(serial, csv_path);
  std::ifstream f(csv_path);
  std::string header;
  std::getline(f, header);
  CHECK(header == "unknown,diag,hbar,vbar");
  int rows = 0;
  for (std::string line; std::getline(f, line);) ++rows;
  CHECK(rows == 3);
}

TEST_CASE("normalization scales columns by reference norms, preserving row order") {
  std::map<std::string, Dataset> refs = {
      {"thin", glyph_class(1, 6, 21, "thin")},
      {"thick", glyph_class(7, 6, 21, "thick")},
  };
  const auto fleet = pretrain_fleet<float>(refs, fleet_cfg(2, 6));
  const auto m = delta_matrix(fleet, refs, LossKind::mse());
  const auto n = normalize_deltas(m, refs);

  CHECK(n.normalized);
  for (std::size_t c = 0; c < m.col_ids.size(); ++c) {
    const double norm = n.reference_norms.at(m.col_ids[c]);
    CHECK(norm == doctest::Approx(mean_l2_norm(refs.at(m.col_ids[c]))));
    for (long r = 0; r < m.values.rows(); ++r)
      CHECK(n.values(r, long(c)) == doctest::Approx(m.values(r, long(c)) / norm).epsilon(1e-15));
  }

  CHECK_THROWS_WITH_AS(normalize_deltas(n, refs), doctest::Contains("already normalized"),
                       std::invalid_argument);
  std::map<std::string, Dataset> missing = {{"thin", refs.at("thin")}};
  CHECK_THROWS_AS(normalize_deltas(m, missing), std::invalid_argument);
}

TEST_CASE("convergence stops once the probe ordering is stable") {
  const Dataset ref = glyph_class(0, 10, 33, "hbar");
  std::map<std::string, Dataset> probes = {
      {"same", glyph_class(0, 6, 44, "same")},
      {"far", glyph_class(6, 6, 44, "far")},
  };
  TrainConfig cfg = fleet_cfg(0, 3);
  ConvergenceResult res;
  const auto model = train_with_ordering_convergence<float>(
      ref, probes, cfg, res, {1, 2, 3, 4, 5, 6}, 3);

  CHECK(res.checkpoint_epochs.size() == res.orderings.size());
  if (res.converged) {
    const std::size_t n = res.orderings.size();
    REQUIRE(n >= 3);
    CHECK(res.convergence_epoch == res.checkpoint_epochs.back());
    CHECK(res.orderings[n - 1].order == res.orderings[n - 2].order);
    CHECK(res.orderings[n - 1].order == res.orderings[n - 3].order);
  } else {
    CHECK(res.convergence_epoch == 6);
  }
  CHECK(model.meta.epochs_trained == res.convergence_epoch);
}

TEST_CASE("convergence epoch accounting follows the stability window rule") {
  // probes identical from the first checkpoint on: stop at the 3rd checkpoint
  const Dataset ref = glyph_class(1, 8, 50, "vbar");
  std::map<std::string, Dataset> probes = {
      {"near", glyph_class(1, 5, 51, "near")},
      {"far", glyph_class(6, 5, 51, "far")},
  };
  // zero learning rate would be rejected, but epochs=checkpoints with a
  // converged-from-the-start ordering is exercised via a well-separated pair
  TrainConfig cfg = fleet_cfg(0, 12);
  cfg.optimizer = OptimizerConfig::adam(1e-5);  // tiny steps, ordering frozen early
  ConvergenceResult res;
  train_with_ordering_convergence<float>(ref, probes, cfg, res, {1, 2, 3, 4, 5}, 3);
  if (res.converged) {
    // streak counts identical consecutive orderings including the first
    const int stop_idx = int(res.checkpoint_epochs.size()) - 1;
    CHECK(stop_idx >= 2);
    for (int k = stop_idx - 2; k < stop_idx; ++k)
      CHECK(res.orderings[std::size_t(k)].order == res.orderings[std::size_t(stop_idx)].order);
  }

  // rho trace against a supplied final ordering has one entry per checkpoint
  ConvergenceResult res2;
  const std::vector<std::string> final_order = {"near", "far"};
  train_with_ordering_convergence<float>(ref, probes, cfg, res2, {1, 2, 3}, 3, &final_order);
  CHECK(res2.rho_vs_final.size() == res2.checkpoint_epochs.size());
  for (double r : res2.rho_vs_final) {
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
  }

  ConvergenceResult bad;
  CHECK_THROWS_AS(train_with_ordering_convergence<float>(ref, probes, cfg, bad, {5, 3}, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_with_ordering_convergence<float>(ref, probes, cfg, bad, {}, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(train_with_ordering_convergence<float>(ref, probes, cfg, bad, {1, 2}, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      train_with_ordering_convergence<float>(ref, {}, cfg, bad, {1, 2}, 2),
      std::invalid_argument);
}

TEST_CASE("interrupted training with persistent state matches one straight run") {
  const Dataset ref = glyph_class(2, 8, 60, "diag");
  std::map<std::string, Dataset> probes = {
      {"p1", glyph_class(2, 4, 61, "p1")},
      {"p2", glyph_class(5, 4, 61, "p2")},
  };
  TrainConfig cfg = fleet_cfg(0, 77);

  // convergence run with an unreachable window trains through every leg
  ConvergenceResult res;
  const auto legged = train_with_ordering_convergence<float>(
      ref, probes, cfg, res, {1, 2, 4}, 100);

  TrainConfig straight = cfg;
  straight.epochs = 4;
  auto direct = build_autoencoder<float>(16, 16, cfg.seed);
  direct.meta.reference_id = ref.id;
  train(direct, ref, straight);

  const auto pa = legged.net.params();
  const auto pb = direct.net.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->data == pb[i]->data).all());
}
