#pragma once

// Latency benchmark: similarity inference through one fleet member versus
// FC-head transfer retraining under the five reference optimizer
// configurations, plus the PGM reconstruction gallery.

#include "simex/baselines.hpp"
#include "simex/engine.hpp"

#include "json.hpp"

#include <chrono>
#include <fstream>
#include <string>
#include <vector>

namespace simex {

struct BenchSample {
  double seconds = 0;
  int epochs = 0;  // retrain configs only
};

struct BenchConfigReport {
  std::string name;
  std::vector<BenchSample> samples;
  double mean_seconds = 0, min_seconds = 0, max_seconds = 0, stddev_seconds = 0;
  int epochs_used = 0;  // epochs-to-best of the last sample
};

struct BenchReport {
  int schema_version = 1;
  int repeats = 0;
  BenchConfigReport inference;                  // similarity inference timing
  std::vector<BenchConfigReport> retrain;       // one per optimizer config
  std::map<std::string, double> speedups;       // retrain mean / inference mean
};

// The five retrain configurations: the named baseline (rmsprop 1e-3), three
// optimizer families at defaults, and rmsprop at a tenth of the baseline lr.
inline std::vector<std::pair<std::string, OptimizerConfig>> retrain_configs() {
  return {
      {"tl-1-rmsprop-1e-3", OptimizerConfig::rmsprop(1e-3)},
      {"tl-2-adam", OptimizerConfig::adam()},
      {"tl-3-adadelta", OptimizerConfig::adadelta()},
      {"tl-4-sgd-momentum", OptimizerConfig::sgd_momentum()},
      {"tl-5-rmsprop-1e-4", OptimizerConfig::rmsprop(1e-4)},
  };
}

namespace detail {

inline void finalize_stats(BenchConfigReport& r) {
  if (r.samples.empty()) throw std::runtime_error("bench: no samples collected");
  double total = 0;
  r.min_seconds = r.samples.front().seconds;
  r.max_seconds = r.samples.front().seconds;
  for (const auto& s : r.samples) {
    total += s.seconds;
    r.min_seconds = std::min(r.min_seconds, s.seconds);
    r.max_seconds = std::max(r.max_seconds, s.seconds);
  }
  r.mean_seconds = total / double(r.samples.size());
  double ss = 0;
  for (const auto& s : r.samples) {
    const double d = s.seconds - r.mean_seconds;
    ss += d * d;
  }
  r.stddev_seconds = std::sqrt(ss / double(r.samples.size()));
  r.epochs_used = r.samples.back().epochs;
}

}  // namespace detail

// Times (a) pushing every unknown sample through one pretrained fleet member
// and averaging the per-sample differences, against (b) retraining the FC
// head of a pretrained base classifier to its min-test-loss point under each
// optimizer configuration. One warm-up run per configuration is discarded;
// `repeats` timed runs follow, strictly serial.
template <typename Scalar>
BenchReport bench_pairwise(const AutoencoderModel<Scalar>& member, const Dataset& unknown,
                           const ClassifierModel<Scalar>& base,
                           const Dataset& target_train, const Dataset& target_test,
                           const TrainConfig& retrain_cfg, int repeats = 5) {
  if (repeats < 1) throw std::invalid_argument("bench: repeats must be >= 1");
  BenchReport report;
  report.repeats = repeats;
  const LossKind loss =
      member.meta.loss == "issim" ? LossKind::issim() : LossKind::mse();

  using clock = std::chrono::steady_clock;
  auto timed = [](auto&& fn) {
    const auto t0 = clock::now();
    fn();
    return std::chrono::duration<double>(clock::now() - t0).count();
  };

  report.inference.name = "similarity-inference";
  (void)evaluate_delta(member, unknown, loss);  // warm-up
  for (int r = 0; r < repeats; ++r) {
    BenchSample s;
    s.seconds = timed([&] { (void)evaluate_delta(member, unknown, loss); });
    report.inference.samples.push_back(s);
  }
  detail::finalize_stats(report.inference);

  const double base_acc = evaluate_accuracy(base, target_test);
  for (const auto& [name, opt] : retrain_configs()) {
    BenchConfigReport r;
    r.name = name;
    TrainConfig cfg = retrain_cfg;
    cfg.optimizer = opt;
    (void)transfer_retrain(base, target_train, target_test, cfg, base_acc);  // warm-up
    for (int rep = 0; rep < repeats; ++rep) {
      TransferResult tr;
      BenchSample s;
      s.seconds = timed(
          [&] { tr = transfer_retrain(base, target_train, target_test, cfg, base_acc); });
      s.epochs = tr.epochs_to_best;
      r.samples.push_back(s);
    }
    detail::finalize_stats(r);
    report.speedups[name] = r.mean_seconds / report.inference.mean_seconds;
    report.retrain.push_back(std::move(r));
  }
  return report;
}

inline nlohmann::json bench_to_json(const BenchReport& r) {
  auto cfg_json = [](const BenchConfigReport& c) {
    nlohmann::json j;
    j["name"] = c.name;
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : c.samples)
      samples.push_back({{"seconds", s.seconds}, {"epochs", s.epochs}});
    j["samples"] = std::move(samples);
    j["mean_seconds"] = c.mean_seconds;
    j["min_seconds"] = c.min_seconds;
    j["max_seconds"] = c.max_seconds;
    j["stddev_seconds"] = c.stddev_seconds;
    j["epochs_used"] = c.epochs_used;
    return j;
  };
  nlohmann::json j;
  j["schema_version"] = r.schema_version;
  j["repeats"] = r.repeats;
  j["inference"] = cfg_json(r.inference);
  nlohmann::json retrain = nlohmann::json::array();
  for (const auto& c : r.retrain) retrain.push_back(cfg_json(c));
  j["retrain"] = std::move(retrain);
  j["speedups"] = r.speedups;
  return j;
}

// ---- PGM gallery ----------------------------------------------------------

// 8-bit binary PGM; quantization matches the IDX writer.
inline void write_pgm(const float* pixels, int h, int w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (long i = 0; i < long(h) * w; ++i)
    buf[static_cast<std::size_t>(i)] = quantize_pixel(pixels[i]);
  f.write(reinterpret_cast<const char*>(buf.data()), long(buf.size()));
  if (!f) throw std::runtime_error("write failure on " + path);
}

// Writes input_NNN.pgm / recon_NNN.pgm pairs into dir for the given samples.
template <typename Scalar>
void emit_reconstruction_gallery(const AutoencoderModel<Scalar>& model,
                                 const Dataset& samples, const std::string& dir) {
  if (samples.n == 0) throw std::invalid_argument("gallery: empty sample set");
  std::filesystem::create_directories(dir);
  std::vector<int> idx(static_cast<std::size_t>(samples.n));
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor<Scalar> batch = samples.batch<Scalar>(idx);
  const Tensor<Scalar> out = reconstruct(model, batch);
  const long sz = samples.sample_size();
  std::vector<float> img(static_cast<std::size_t>(sz));
  for (int i = 0; i < samples.n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "input_%03d.pgm", i);
    for (long j = 0; j < sz; ++j) img[std::size_t(j)] = float(batch.data[long(i) * sz + j]);
    write_pgm(img.data(), samples.height, samples.width, dir + "/" + name);
    std::snprintf(name, sizeof name, "recon_%03d.pgm", i);
    for (long j = 0; j < sz; ++j) img[std::size_t(j)] = float(out.data[long(i) * sz + j]);
    write_pgm(img.data(), samples.height, samples.width, dir + "/" + name);
  }
}

}  // namespace simex
