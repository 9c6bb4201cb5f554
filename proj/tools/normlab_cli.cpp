// normlab command-line tool: geometry simulation (sim), layer gradient
// verification (gradcheck), desk-scale training (train), angle metrics on
// feature files (angles), and run comparison (compare).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "normlab/data.hpp"
#include "normlab/exec.hpp"
#include "normlab/geomsim.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/metrics.hpp"
#include "normlab/model.hpp"
#include "normlab/persist.hpp"
#include "normlab/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace normlab;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// Every run directory gets a manifest with the fully resolved
// configuration; no timestamps, so reruns are byte-identical.
void write_manifest(const std::string& dir, const std::string& command,
                    const json& resolved) {
  json m;
  m["tool"] = "normlab";
  m["version"] = kToolVersion;
  m["checkpoint_format"] = 1;
  m["command"] = command;
  m["config"] = resolved;
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw std::runtime_error("cannot write manifest in " + dir);
  f << m.dump(2) << "\n";
}

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& ctx) {
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      throw std::runtime_error("unknown config key '" + ctx + item.key() + "'");
}

Shape parse_shape(const std::string& s) {
  Shape shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    if (part.empty()) throw std::runtime_error("bad shape '" + s + "'");
    shape.push_back(std::stoll(part));
  }
  if (shape.size() != 2 && shape.size() != 4)
    throw std::runtime_error("shape must be BxD or BxCxHxW, got '" + s + "'");
  return shape;
}

// ---- sim -------------------------------------------------------------------

struct SimArgs {
  std::string norm = "l2bn";
  int64_t classes = 3;
  int64_t dim = 2;
  int iters = 200;
  uint64_t seed = 1;
  double tol = 1e-4;
  bool record_centers = false;
  std::string out;
};

int run_sim(const SimArgs& a) {
  Rng rng(a.seed);
  CenterConfig cfg;
  cfg.centers = randn(rng, {a.classes, a.dim});
  cfg.norm_kind = norm_kind_from_string(a.norm);
  cfg.max_iters = a.iters;
  cfg.convergence_tol_deg = a.tol;
  cfg.record_centers = a.record_centers;

  Trajectory traj = iterate(cfg);

  fs::create_directories(a.out);
  export_trajectory(traj, a.out + "/trajectory.csv");
  json resolved{{"norm", a.norm},   {"classes", a.classes}, {"dim", a.dim},
                {"iters", a.iters}, {"seed", a.seed},       {"tol", a.tol},
                {"record_centers", a.record_centers}};
  write_manifest(a.out, "sim", resolved);

  std::cout << "final_min_angle_deg=" << fmt(traj.min_angle_deg.back())
            << " converged_at="
            << (traj.converged_at ? std::to_string(*traj.converged_at)
                                  : std::string("none"))
            << "\n";
  return 0;
}

// ---- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  std::string layer = "bn";
  std::string shape = "6x4";
  uint64_t seed = 1;
  double tol = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a) {
  Shape shape = parse_shape(a.shape);
  NormKind kind = norm_kind_from_string(a.layer);
  NormSpec spec = gradcheck_spec(kind, shape);
  NormGradCheck res = check_norm_gradients(spec, shape, a.seed);
  std::cout << "layer=" << a.layer << " shape=" << a.shape << "\n";
  std::cout << "grad_input  max_rel_err=" << fmt(res.err_input) << "\n";
  if (res.has_affine) {
    std::cout << "grad_gamma  max_rel_err=" << fmt(res.err_gamma) << "\n";
    std::cout << "grad_beta   max_rel_err=" << fmt(res.err_beta) << "\n";
  }
  bool ok = res.worst() <= a.tol;
  std::cout << (ok ? "PASS" : "FAIL") << " (tol=" << a.tol << ")\n";
  return ok ? 0 : 1;
}

// ---- train -------------------------------------------------------------------

Dataset dataset_from_config(const json& j, uint64_t default_seed) {
  std::string type = j.at("type").get<std::string>();
  if (type == "blobs") {
    require_keys(j, {"type", "classes", "dim", "per_class", "center_scale",
                     "norm_spread", "seed"},
                 "dataset.");
    BlobSpec spec;
    spec.num_classes = j.value("classes", 10);
    spec.dim = j.value("dim", 32);
    spec.samples_per_class = j.value("per_class", 100);
    spec.center_scale = j.value("center_scale", 1.0);
    spec.norm_spread = j.value("norm_spread", 1.0);
    spec.seed = j.value("seed", default_seed);
    return make_blobs(spec);
  }
  if (type == "idx") {
    require_keys(j, {"type", "train_images", "train_labels", "test_images",
                     "test_labels", "classes"},
                 "dataset.");
    Dataset d;
    DataPart train = load_idx(j.at("train_images").get<std::string>(),
                              j.at("train_labels").get<std::string>());
    d.x_train = std::move(train.x);
    d.y_train = std::move(train.y);
    if (j.contains("test_images")) {
      DataPart test = load_idx(j.at("test_images").get<std::string>(),
                               j.at("test_labels").get<std::string>());
      d.x_test = std::move(test.x);
      d.y_test = std::move(test.y);
    }
    int64_t max_label = 0;
    for (int64_t y : d.y_train) max_label = std::max(max_label, y);
    for (int64_t y : d.y_test) max_label = std::max(max_label, y);
    d.num_classes = j.value("classes", max_label + 1);
    d.provenance = Dataset::Provenance::idx_files;
    d.validate();
    return d;
  }
  if (type == "csv") {
    require_keys(j, {"type", "train", "test", "label_column", "classes"},
                 "dataset.");
    std::string label_col = j.at("label_column").get<std::string>();
    Dataset d;
    DataPart train = load_csv(j.at("train").get<std::string>(), label_col);
    d.x_train = std::move(train.x);
    d.y_train = std::move(train.y);
    if (j.contains("test")) {
      DataPart test = load_csv(j.at("test").get<std::string>(), label_col);
      d.x_test = std::move(test.x);
      d.y_test = std::move(test.y);
    }
    int64_t max_label = 0;
    for (int64_t y : d.y_train) max_label = std::max(max_label, y);
    for (int64_t y : d.y_test) max_label = std::max(max_label, y);
    d.num_classes = j.value("classes", max_label + 1);
    d.provenance = Dataset::Provenance::csv;
    d.validate();
    return d;
  }
  throw std::runtime_error("dataset.type must be blobs, idx, or csv");
}

// documented key set; anything else is a hard error
TrainConfig train_config_from_json(const json& j) {
  require_keys(j, {"seed", "epochs", "batch_size", "learning_rate", "momentum",
                   "weight_decay", "deterministic", "arch", "hidden", "norm",
                   "placement", "eps_l2", "eps_var", "bn_momentum", "affine",
                   "scale_by_sqrt_numel", "gn_channels_per_group", "dataset"},
               "");
  TrainConfig cfg;
  cfg.seed = j.value("seed", 1);
  cfg.epochs = j.value("epochs", 10);
  cfg.batch_size = j.value("batch_size", 32);
  cfg.learning_rate = j.value("learning_rate", 0.1);
  cfg.momentum_sgd = j.value("momentum", 0.9);
  cfg.weight_decay = j.value("weight_decay", 0.0);
  cfg.deterministic = j.value("deterministic", true);
  std::string arch = j.value("arch", std::string("mlp"));
  if (arch == "mlp")
    cfg.arch = Arch::mlp;
  else if (arch == "cnn")
    cfg.arch = Arch::cnn;
  else
    throw std::runtime_error("arch must be mlp or cnn");
  if (j.contains("hidden")) cfg.hidden = j.at("hidden").get<std::vector<int64_t>>();
  cfg.norm.kind = norm_kind_from_string(j.value("norm", std::string("bn")));
  cfg.placement = placement_from_string(j.value("placement", std::string("none")));
  cfg.norm.eps_l2 = j.value("eps_l2", 1e-12);
  cfg.norm.eps_var = j.value("eps_var", 1e-5);
  cfg.norm.momentum = j.value("bn_momentum", 0.1);
  cfg.norm.affine = j.value("affine", true);
  if (j.contains("scale_by_sqrt_numel"))
    cfg.norm.scale_by_sqrt_numel = j.at("scale_by_sqrt_numel").get<bool>();
  cfg.norm.channels_per_group = j.value("gn_channels_per_group", 1);
  return cfg;
}

json resolved_train_json(const TrainConfig& cfg, const json& dataset_cfg) {
  json r;
  r["seed"] = cfg.seed;
  r["epochs"] = cfg.epochs;
  r["batch_size"] = cfg.batch_size;
  r["learning_rate"] = cfg.learning_rate;
  r["momentum"] = cfg.momentum_sgd;
  r["weight_decay"] = cfg.weight_decay;
  r["deterministic"] = cfg.deterministic;
  r["arch"] = cfg.arch == Arch::mlp ? "mlp" : "cnn";
  r["hidden"] = cfg.hidden;
  r["norm"] = to_string(cfg.norm.kind);
  r["placement"] = to_string(cfg.placement);
  r["eps_l2"] = cfg.norm.eps_l2;
  r["eps_var"] = cfg.norm.eps_var;
  r["bn_momentum"] = cfg.norm.momentum;
  r["affine"] = cfg.norm.affine;
  if (cfg.norm.scale_by_sqrt_numel.has_value())
    r["scale_by_sqrt_numel"] = *cfg.norm.scale_by_sqrt_numel;
  r["gn_channels_per_group"] = cfg.norm.channels_per_group;
  r["dataset"] = dataset_cfg;
  return r;
}

int run_train(const std::string& config_path, const std::string& out_dir) {
  std::ifstream cf(config_path);
  if (!cf) throw std::runtime_error("cannot open config " + config_path);
  json j = json::parse(cf);
  TrainConfig cfg = train_config_from_json(j);
  if (!j.contains("dataset"))
    throw std::runtime_error("config needs a dataset section");
  json dataset_cfg = j.at("dataset");
  Dataset data = dataset_from_config(dataset_cfg, cfg.seed);
  if (!dataset_cfg.contains("seed") && dataset_cfg.at("type") == "blobs")
    dataset_cfg["seed"] = cfg.seed;

  TrainResult result = train(cfg, data);

  fs::create_directories(out_dir);
  write_log(result.records, out_dir + "/log.csv", LogFormat::csv);
  write_log(result.records, out_dir + "/log.jsonl", LogFormat::jsonl);
  save_checkpoint(result.stack, out_dir + "/model.ckpt");
  write_manifest(out_dir, "train", resolved_train_json(cfg, dataset_cfg));

  for (const EpochRecord& r : result.records) {
    std::cout << "epoch " << r.epoch << " loss=" << fmt6(r.train_loss)
              << " train_acc=" << fmt6(r.train_acc);
    if (r.test_acc) std::cout << " test_acc=" << fmt6(*r.test_acc);
    std::cout << " intra=" << fmt6(r.angles.intra_train)
              << " inter=" << fmt6(r.angles.inter)
              << " iir=" << fmt6(r.angles.iir_train) << "\n";
  }
  const EpochRecord& last = result.records.back();
  std::cout << "final iir_train=" << fmt(last.angles.iir_train);
  if (last.test_acc) std::cout << " test_acc=" << fmt(*last.test_acc);
  std::cout << " log=" << out_dir << "/log.csv\n";
  return 0;
}

// ---- angles ------------------------------------------------------------------

int run_angles(const std::string& features_path, const std::string& label_col,
               const std::string& test_path) {
  DataPart train = load_csv(features_path, label_col);
  int64_t max_label = 0;
  for (int64_t y : train.y) max_label = std::max(max_label, y);

  LabeledFeatures train_lf{std::move(train.x), std::move(train.y), max_label + 1};
  AngleReport rep;
  if (!test_path.empty()) {
    DataPart test = load_csv(test_path, label_col);
    LabeledFeatures test_lf{std::move(test.x), std::move(test.y), max_label + 1};
    rep = angle_report(train_lf, &test_lf);
  } else {
    rep = angle_report(train_lf, nullptr);
  }

  json out;
  out["intra_train_deg"] = rep.intra_train;
  if (rep.intra_test) out["intra_test_deg"] = *rep.intra_test;
  out["inter_deg"] = rep.inter;
  out["iir_train"] = rep.iir_train;
  if (rep.iir_test) out["iir_test"] = *rep.iir_test;
  std::cout << out.dump() << "\n\n";

  std::printf("%-16s %12s\n", "metric", "value");
  std::printf("%-16s %12.4f\n", "intra_train_deg", rep.intra_train);
  if (rep.intra_test) std::printf("%-16s %12.4f\n", "intra_test_deg", *rep.intra_test);
  std::printf("%-16s %12.4f\n", "inter_deg", rep.inter);
  std::printf("%-16s %12.4f\n", "iir_train", rep.iir_train);
  if (rep.iir_test) std::printf("%-16s %12.4f\n", "iir_test", *rep.iir_test);
  return 0;
}

// ---- compare -----------------------------------------------------------------

int run_compare(const std::string& dir_a, const std::string& dir_b) {
  auto logs_a = read_log_csv(dir_a + "/log.csv");
  auto logs_b = read_log_csv(dir_b + "/log.csv");
  size_t n = std::min(logs_a.size(), logs_b.size());
  if (n == 0) throw std::runtime_error("no overlapping epochs to compare");

  auto acc = [](const EpochRecord& r) {
    return r.test_acc ? *r.test_acc : r.train_acc;
  };

  std::printf("deltas are run-b minus run-a\n");
  std::printf("%5s %10s %10s %10s %10s %10s %10s\n", "epoch", "acc_a", "acc_b",
              "d_acc", "iir_a", "iir_b", "d_iir");
  for (size_t i = 0; i < n; ++i) {
    const EpochRecord &a = logs_a[i], &b = logs_b[i];
    std::printf("%5d %10.4f %10.4f %+10.4f %10.4f %10.4f %+10.4f\n", a.epoch,
                acc(a), acc(b), acc(b) - acc(a), a.angles.iir_train,
                b.angles.iir_train, b.angles.iir_train - a.angles.iir_train);
  }
  const EpochRecord &fa = logs_a[n - 1], &fb = logs_b[n - 1];
  std::printf("\nfinal epoch %d:\n", fa.epoch);
  std::printf("  d_accuracy %+.6f\n", acc(fb) - acc(fa));
  std::printf("  d_intra    %+.6f deg\n",
              fb.angles.intra_train - fa.angles.intra_train);
  std::printf("  d_inter    %+.6f deg\n", fb.angles.inter - fa.angles.inter);
  std::printf("  d_iir      %+.6f\n",
              fb.angles.iir_train - fa.angles.iir_train);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  exec::set_threads(exec::default_parallel_threads());

  CLI::App app{"normlab: normalization-layer laboratory"};
  app.require_subcommand(1);

  SimArgs sim;
  CLI::App* sim_cmd =
      app.add_subcommand("sim", "iterate a normalization map over class centers");
  sim_cmd->add_option("--norm", sim.norm, "bn or l2bn")
      ->check(CLI::IsMember({"bn", "l2bn"}));
  sim_cmd->add_option("--classes", sim.classes, "number of class centers");
  sim_cmd->add_option("--dim", sim.dim, "center dimensionality");
  sim_cmd->add_option("--iters", sim.iters, "maximum iterations");
  sim_cmd->add_option("--seed", sim.seed, "rng seed for the initial centers");
  sim_cmd->add_option("--tol", sim.tol, "convergence tolerance in degrees; 0 disables");
  sim_cmd->add_flag("--record-centers", sim.record_centers,
                    "include center coordinates in the trajectory csv");
  sim_cmd->add_option("--out", sim.out, "output directory")->required();

  GradcheckArgs gc;
  CLI::App* gc_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of a layer backward");
  gc_cmd->add_option("--layer", gc.layer,
                     "l2|bn|ln|in|pn|gn|l2bn|lnbn|inbn|pnbn")
      ->required();
  gc_cmd->add_option("--shape", gc.shape, "input shape, e.g. 6x4 or 4x3x2x2");
  gc_cmd->add_option("--seed", gc.seed, "rng seed");
  gc_cmd->add_option("--tol", gc.tol, "max relative error accepted");

  std::string train_config, train_out;
  CLI::App* train_cmd = app.add_subcommand("train", "run a training experiment");
  train_cmd->add_option("--config", train_config, "json config file")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  std::string ang_features, ang_label_col = "label", ang_test;
  CLI::App* ang_cmd =
      app.add_subcommand("angles", "angle metrics for a labeled feature csv");
  ang_cmd->add_option("--features", ang_features, "training feature csv")->required();
  ang_cmd->add_option("--labels-column", ang_label_col, "label column name");
  ang_cmd->add_option("--test-features", ang_test, "optional test feature csv");

  std::string cmp_a, cmp_b;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "diff two run directories");
  cmp_cmd->add_option("--run-a", cmp_a, "first run directory")->required();
  cmp_cmd->add_option("--run-b", cmp_b, "second run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (sim_cmd->parsed()) return run_sim(sim);
    if (gc_cmd->parsed()) return run_gradcheck(gc);
    if (train_cmd->parsed()) return run_train(train_config, train_out);
    if (ang_cmd->parsed()) return run_angles(ang_features, ang_label_col, ang_test);
    if (cmp_cmd->parsed()) return run_compare(cmp_a, cmp_b);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
