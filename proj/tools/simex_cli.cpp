// simex command-line front end: dataset synthesis, fleet pretraining,
// similarity comparison, greedy pairing, confusion probes and the latency
// benchmark. One JSON config drives a run; individual flags override
// top-level config fields. Every run leaves a manifest in the output
// directory so it can be reproduced exactly.
//
// Exit codes: 0 ok, 1 usage, 2 config, 3 runtime.

#include "simex/baselines.hpp"
#include "simex/bench.hpp"
#include "simex/engine.hpp"
#include "simex/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simex;

namespace {

constexpr int kReportSchemaVersion = 1;
constexpr int kCheckpointFormatVersion = 1;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<std::string> loss;
  std::optional<std::string> optimizer;
  std::optional<double> learning_rate;
  std::optional<int> workers;
  std::optional<int> repeats;
};

void add_common(CLI::App* cmd, CliOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON config file");
  cmd->add_option("--out", opt.out_dir, "output directory (overrides config out_dir)");
  cmd->add_option("--seed", opt.seed, "base seed override");
  cmd->add_option("--epochs", opt.epochs, "training epochs override");
  cmd->add_option("--batch-size", opt.batch_size, "batch size override");
  cmd->add_option("--loss", opt.loss, "loss kind: mse | issim");
  cmd->add_option("--optimizer", opt.optimizer,
                  "optimizer: rmsprop | adam | adadelta | sgd-momentum");
  cmd->add_option("--lr", opt.learning_rate, "learning rate override");
  cmd->add_option("--workers", opt.workers, "parallel worker count");
  cmd->add_option("--repeats", opt.repeats, "benchmark repeat count");
}

// Effective config: file (if any), then flag overrides on top-level fields.
json effective_config(const CliOptions& opt) {
  json cfg = json::object();
  if (!opt.config_path.empty()) {
    std::ifstream f(opt.config_path);
    if (!f) throw std::invalid_argument("config: cannot open " + opt.config_path);
    try {
      f >> cfg;
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: " + opt.config_path + ": " + e.what());
    }
    if (!cfg.is_object()) throw std::invalid_argument("config: top level must be an object");
  }
  if (!opt.out_dir.empty()) cfg["out_dir"] = opt.out_dir;
  if (opt.seed) cfg["seed"] = *opt.seed;
  if (opt.epochs) cfg["epochs"] = *opt.epochs;
  if (opt.batch_size) cfg["batch_size"] = *opt.batch_size;
  if (opt.loss) cfg["loss"] = *opt.loss;
  if (opt.optimizer) cfg["optimizer"] = *opt.optimizer;
  if (opt.learning_rate) cfg["learning_rate"] = *opt.learning_rate;
  if (opt.workers) cfg["workers"] = *opt.workers;
  if (opt.repeats) cfg["repeats"] = *opt.repeats;
  if (!cfg.contains("out_dir")) throw std::invalid_argument("config: out_dir is required");
  return cfg;
}

TrainConfig train_config_from(const json& cfg) {
  TrainConfig tc;
  const std::string opt_name = cfg.value("optimizer", "rmsprop");
  const OptimizerId id = optimizer_from_name(opt_name);
  switch (id) {
    case OptimizerId::Rmsprop: tc.optimizer = OptimizerConfig::rmsprop(); break;
    case OptimizerId::Adam: tc.optimizer = OptimizerConfig::adam(); break;
    case OptimizerId::Adadelta: tc.optimizer = OptimizerConfig::adadelta(); break;
    case OptimizerId::SgdMomentum: tc.optimizer = OptimizerConfig::sgd_momentum(); break;
  }
  if (cfg.contains("learning_rate"))
    tc.optimizer.learning_rate = cfg.at("learning_rate").get<double>();
  tc.loss = loss_from_name(cfg.value("loss", "mse")) == LossId::Mse ? LossKind::mse()
                                                                    : LossKind::issim();
  tc.epochs = cfg.value("epochs", 30);
  tc.batch_size = cfg.value("batch_size", 128);
  tc.seed = cfg.value("seed", std::uint64_t{0});
  return tc;
}

// Dataset descriptor: {"id", "images", ["labels"], ["class"], ["take"]} or
// {"id", "synth": {"count_per_class", "num_classes", "height", "seed",
//                  ["noise"], ["rotate": [lo, hi]], ["texture_seed"]}}.
Dataset dataset_from_descriptor(const json& j) {
  if (!j.is_object() || !j.contains("id"))
    throw std::invalid_argument("dataset descriptor needs an 'id'");
  const std::string id = j.at("id");
  Dataset d;
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    GlyphParams p;
    p.count_per_class = s.value("count_per_class", 20);
    p.num_classes = s.value("num_classes", 10);
    p.height = p.width = s.value("height", 28);
    const std::uint64_t seed = s.value("seed", std::uint64_t{0});
    d = synth_glyphs(p, seed);
    if (s.contains("rotate")) {
      const auto r = s.at("rotate");
      d = synth_rotated(d, r.at(0).get<double>(), r.at(1).get<double>(),
                        RngStream(seed).derive(1).seed());
    }
    if (s.contains("noise"))
      d = synth_noisy(d, s.at("noise").get<double>(), RngStream(seed).derive(2).seed());
    if (s.contains("texture_seed"))
      d = synth_textured(d, s.at("texture_seed").get<std::uint64_t>());
  } else if (j.contains("images")) {
    const std::string images = j.at("images");
    if (!fs::exists(images))
      throw std::invalid_argument("dataset '" + id + "': missing file " + images);
    std::optional<std::string> labels;
    if (j.contains("labels")) {
      labels = j.at("labels").get<std::string>();
      if (!fs::exists(*labels))
        throw std::invalid_argument("dataset '" + id + "': missing file " + *labels);
    }
    d = load_idx(images, labels);
  } else {
    throw std::invalid_argument("dataset '" + id + "': need 'images' or 'synth'");
  }
  if (j.contains("class")) {
    const int cls = j.at("class").get<int>();
    if (!d.labeled())
      throw std::invalid_argument("dataset '" + id + "': class filter needs labels");
    std::vector<int> idx;
    for (int i = 0; i < d.n; ++i)
      if (d.labels[std::size_t(i)] == cls) idx.push_back(i);
    d = d.subset(idx);
    d.labels.clear();
  }
  if (j.contains("take")) {
    const int take = j.at("take").get<int>();
    if (take < 1 || take > d.n)
      throw std::invalid_argument("dataset '" + id + "': take out of range");
    std::vector<int> idx(static_cast<std::size_t>(take));
    std::iota(idx.begin(), idx.end(), 0);
    d = d.subset(idx);
  }
  d.id = id;
  return d;
}

std::map<std::string, Dataset> datasets_from(const json& cfg, const std::string& key) {
  if (!cfg.contains(key))
    throw std::invalid_argument("config: '" + key + "' list is required");
  std::map<std::string, Dataset> out;
  for (const auto& j : cfg.at(key)) {
    Dataset d = dataset_from_descriptor(j);
    const std::string id = d.id;
    if (!out.emplace(id, std::move(d)).second)
      throw std::invalid_argument("config: duplicate dataset id '" + id + "'");
  }
  if (out.empty()) throw std::invalid_argument("config: '" + key + "' is empty");
  return out;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failure on " + path);
}

void write_manifest(const json& cfg, const std::string& command, const fs::path& out_dir) {
  json m;
  m["schema_version"] = kReportSchemaVersion;
  m["command"] = command;
  m["config"] = cfg;
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(RngStream::hash_string(cfg.dump())));
  m["config_hash"] = hash;
  m["seed"] = cfg.value("seed", std::uint64_t{0});
  m["versions"] = {{"checkpoint_format", kCheckpointFormatVersion},
                   {"report_schema", kReportSchemaVersion}};
  write_json_file(m, (out_dir / "manifest.json").string());
}

fs::path prepare_out_dir(const json& cfg) {
  const fs::path dir = cfg.at("out_dir").get<std::string>();
  fs::create_directories(dir);
  return dir;
}

// ---- commands -------------------------------------------------------------

int cmd_synth(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  if (!cfg.contains("datasets"))
    throw std::invalid_argument("config: synth needs a 'datasets' list");
  json written = json::array();
  for (const auto& j : cfg.at("datasets")) {
    Dataset d = dataset_from_descriptor(j);
    const std::string img = (out / (d.id + "-images.idx")).string();
    std::optional<std::string> lab;
    if (d.labeled()) lab = (out / (d.id + "-labels.idx")).string();
    write_idx(d, img, lab);
    json e;
    e["id"] = d.id;
    e["n"] = d.n;
    e["height"] = d.height;
    e["width"] = d.width;
    e["images"] = img;
    if (lab) e["labels"] = *lab;
    written.push_back(std::move(e));
  }
  write_json_file({{"schema_version", kReportSchemaVersion}, {"datasets", written}},
                  (out / "synth.json").string());
  write_manifest(cfg, "synth", out);
  std::cout << "wrote " << written.size() << " dataset(s) to " << out << "\n";
  return 0;
}

int cmd_pretrain(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  const auto refs = datasets_from(cfg, "references");
  const TrainConfig tc = train_config_from(cfg);
  const int workers = cfg.value("workers", 1);

  const auto fleet = pretrain_fleet<float>(refs, tc, workers);
  const fs::path fleet_dir = out / "fleet";
  fs::create_directories(fleet_dir);
  json members = json::array();
  for (const auto& [id, model] : fleet.members) {
    const std::string path = (fleet_dir / (id + ".ckpt")).string();
    save_checkpoint(model, path);
    members.push_back({{"id", id},
                       {"checkpoint", path},
                       {"seed", model.meta.seed},
                       {"epochs", model.meta.epochs_trained}});
  }
  write_json_file({{"schema_version", kReportSchemaVersion}, {"members", members}},
                  (out / "fleet.json").string());
  write_manifest(cfg, "pretrain", out);
  std::cout << "pretrained " << fleet.members.size() << " member(s) into " << fleet_dir
            << "\n";
  return 0;
}

Fleet<float> load_fleet(const json& cfg) {
  Fleet<float> fleet;
  if (cfg.contains("fleet_dir")) {
    const fs::path dir = cfg.at("fleet_dir").get<std::string>();
    if (!fs::is_directory(dir))
      throw std::invalid_argument("config: fleet_dir " + dir.string() +
                                  " is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
      if (e.path().extension() == ".ckpt") {
        auto model = load_autoencoder<float>(e.path().string());
        const std::string id = model.meta.reference_id.empty()
                                   ? e.path().stem().string()
                                   : model.meta.reference_id;
        fleet.members.emplace(id, std::move(model));
      }
    if (fleet.members.empty())
      throw std::invalid_argument("config: no .ckpt files in " + dir.string());
    return fleet;
  }
  // no checkpoints: pretrain in-process from the references list
  const auto refs = datasets_from(cfg, "references");
  return pretrain_fleet<float>(refs, train_config_from(cfg), cfg.value("workers", 1));
}

DeltaMatrix compute_delta(const json& cfg, const Fleet<float>& fleet,
                          const std::map<std::string, Dataset>& unknowns) {
  const LossKind kind = loss_from_name(cfg.value("loss", "mse")) == LossId::Mse
                            ? LossKind::mse()
                            : LossKind::issim();
  DeltaMatrix m = delta_matrix(fleet, unknowns, kind, cfg.value("workers", 1));
  if (cfg.value("normalize", false)) {
    const auto refs = datasets_from(cfg, "references");
    m = normalize_deltas(m, refs);
  }
  return m;
}

int cmd_compare(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  const auto fleet = load_fleet(cfg);
  const auto unknowns = datasets_from(cfg, "unknowns");
  const DeltaMatrix m = compute_delta(cfg, fleet, unknowns);

  write_delta_csv(m, (out / "delta.csv").string());
  json report = delta_to_json(m);
  report["schema_version"] = kReportSchemaVersion;
  json orderings = json::object();
  for (const auto& id : m.row_ids) {
    const auto o = order_row(m, id);
    orderings[id] = {{"order", o.order}, {"deltas", o.deltas}, {"tie_break", o.tie_break}};
  }
  report["orderings"] = std::move(orderings);
  write_json_file(report, (out / "delta.json").string());

  if (cfg.contains("gallery")) {
    const json& g = cfg.at("gallery");
    const std::string member = g.at("member");
    const auto it = fleet.members.find(member);
    if (it == fleet.members.end())
      throw std::invalid_argument("gallery: unknown fleet member '" + member + "'");
    Dataset samples = unknowns.at(g.at("unknown").get<std::string>());
    const int count = std::min(samples.n, g.value("count", 8));
    std::vector<int> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), 0);
    emit_reconstruction_gallery(it->second, samples.subset(idx),
                                (out / "gallery").string());
  }
  write_manifest(cfg, "compare", out);
  std::cout << "delta matrix " << m.row_ids.size() << "x" << m.col_ids.size()
            << " written to " << out << "\n";
  return 0;
}

int cmd_pair(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  const auto fleet = load_fleet(cfg);
  const auto unknowns = datasets_from(cfg, "unknowns");
  const DeltaMatrix m = compute_delta(cfg, fleet, unknowns);
  const PairingResult pr = greedy_pairing(m.values);

  json pairs = json::array();
  for (const auto& p : pr.pairs)
    pairs.push_back({{"unknown", m.row_ids[std::size_t(p.row)]},
                     {"reference", m.col_ids[std::size_t(p.col)]},
                     {"delta", p.cost}});
  json report;
  report["schema_version"] = kReportSchemaVersion;
  report["loss"] = m.loss;
  report["pairs"] = std::move(pairs);
  json ur = json::array(), uc = json::array();
  for (int r : pr.unpaired_rows) ur.push_back(m.row_ids[std::size_t(r)]);
  for (int c : pr.unpaired_cols) uc.push_back(m.col_ids[std::size_t(c)]);
  report["unpaired_unknowns"] = std::move(ur);
  report["unpaired_references"] = std::move(uc);
  write_json_file(report, (out / "pairing.json").string());
  write_delta_csv(m, (out / "delta.csv").string());
  write_manifest(cfg, "pair", out);
  std::cout << "paired " << pr.pairs.size() << " set(s); report in " << out << "\n";
  return 0;
}

int cmd_confusion(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  if (!cfg.contains("train") || !cfg.contains("probe"))
    throw std::invalid_argument("config: confusion needs 'train' and 'probe' descriptors");
  const Dataset train_data = dataset_from_descriptor(cfg.at("train"));
  const Dataset probe_data = dataset_from_descriptor(cfg.at("probe"));
  const TrainConfig tc = train_config_from(cfg);

  std::vector<int> ks;
  if (cfg.contains("held_out"))
    ks.push_back(cfg.at("held_out").get<int>());
  else
    for (int k = 0; k < 10; ++k) ks.push_back(k);

  json rows = json::array();
  for (int k : ks) {
    const auto rep = confusion_probe<float>(train_data, probe_data, k, tc);
    json row;
    row["held_out_class"] = rep.held_out_class;
    row["classes"] = rep.classes;
    row["mean_softmax"] = rep.mean_softmax;
    rows.push_back(std::move(row));
  }
  write_json_file({{"schema_version", kReportSchemaVersion}, {"probes", rows}},
                  (out / "confusion.json").string());
  write_manifest(cfg, "confusion", out);
  std::cout << "confusion probes for " << ks.size() << " class(es) in " << out << "\n";
  return 0;
}

int cmd_bench(const CliOptions& opt) {
  const json cfg = effective_config(opt);
  const fs::path out = prepare_out_dir(cfg);
  const Dataset unknown = dataset_from_descriptor(cfg.at("unknown"));
  const Dataset target_train = dataset_from_descriptor(cfg.at("target_train"));
  const Dataset target_test = dataset_from_descriptor(cfg.at("target_test"));

  TrainConfig tc = train_config_from(cfg);

  // Pretraining is the one-time cost and stays outside the timed section;
  // checkpoints are either supplied or built here and saved for reuse.
  AutoencoderModel<float> member;
  if (cfg.contains("member_checkpoint")) {
    const std::string p = cfg.at("member_checkpoint");
    if (!fs::exists(p)) throw std::invalid_argument("bench: missing checkpoint " + p);
    member = load_autoencoder<float>(p);
  } else if (cfg.contains("reference")) {
    const Dataset ref = dataset_from_descriptor(cfg.at("reference"));
    member = build_autoencoder<float>(ref.height, ref.width, tc.seed);
    member.meta.reference_id = ref.id;
    train(member, ref, tc);
    save_checkpoint(member, (out / "member.ckpt").string());
  } else {
    throw std::invalid_argument("config: bench needs 'member_checkpoint' or 'reference'");
  }

  ClassifierModel<float> base;
  if (cfg.contains("classifier_checkpoint")) {
    const std::string p = cfg.at("classifier_checkpoint");
    if (!fs::exists(p)) throw std::invalid_argument("bench: missing checkpoint " + p);
    base = load_classifier<float>(p);
  } else if (cfg.contains("base_train")) {
    const Dataset base_data = dataset_from_descriptor(cfg.at("base_train"));
    int max_label = 0;
    for (int l : base_data.labels) max_label = std::max(max_label, l);
    base = build_classifier<float>(base_data.height, base_data.width,
                                   max_label >= 9 ? 10 : 9, tc.seed);
    base.meta.reference_id = base_data.id;
    train(base, base_data, tc);
    save_checkpoint(base, (out / "classifier.ckpt").string());
  } else {
    throw std::invalid_argument(
        "config: bench needs 'classifier_checkpoint' or 'base_train'");
  }
  const int repeats = cfg.value("repeats", 5);
  const auto report =
      bench_pairwise(member, unknown, base, target_train, target_test, tc, repeats);
  write_json_file(bench_to_json(report), (out / "bench.json").string());
  write_manifest(cfg, "bench", out);

  std::cout << "inference mean " << report.inference.mean_seconds << " s over "
            << repeats << " repeats\n";
  for (const auto& r : report.retrain)
    std::cout << "  " << r.name << ": mean " << r.mean_seconds << " s, speedup "
              << report.speedups.at(r.name) << "x\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"similarity prediction via reconstruction-error fleets"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::map<std::string, CliOptions> opts;
  std::map<std::string, int (*)(const CliOptions&)> handlers = {
      {"synth", cmd_synth},       {"pretrain", cmd_pretrain}, {"compare", cmd_compare},
      {"pair", cmd_pair},         {"confusion", cmd_confusion}, {"bench", cmd_bench},
  };
  const std::map<std::string, std::string> descriptions = {
      {"synth", "generate synthetic datasets and write them as IDX files"},
      {"pretrain", "train one autoencoder per reference set and checkpoint the fleet"},
      {"compare", "rank references by reconstruction difference for each unknown set"},
      {"pair", "greedy one-to-one pairing of unknown sets with references"},
      {"confusion", "9-class held-out confusion probes"},
      {"bench", "latency benchmark: similarity inference vs transfer retraining"},
  };
  for (const auto& [name, fn] : handlers)
    add_common(app.add_subcommand(name, descriptions.at(name)), opts[name]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;  // usage problems map to 1, --help to 0
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return handlers.at(command)(opts.at(command));
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
