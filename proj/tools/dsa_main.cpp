// dsa: command-line surface for the segment-aggregation library.
//
// Subcommands: gradcheck, oracle, flops, train-demo. Every command is a
// deterministic function of its flags and --seed; --format json emits a
// machine-readable report carrying every number the table shows.
// Exit codes: 0 success, 1 check failure, 2 usage or parse error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dsanet/backbone.hpp"
#include "dsanet/conv4d.hpp"
#include "dsanet/cost_model.hpp"
#include "dsanet/gradcheck.hpp"
#include "dsanet/rng.hpp"
#include "dsanet/serialize.hpp"

namespace {

using nlohmann::ordered_json;

enum class LogLevel { kQuiet, kInfo, kDebug };

LogLevel log_level() {
  const char* env = std::getenv("DSA_LOG");
  if (env == nullptr) return LogLevel::kQuiet;
  const std::string v(env);
  if (v == "debug") return LogLevel::kDebug;
  if (v == "info") return LogLevel::kInfo;
  return LogLevel::kQuiet;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << "[dsa] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << "[dsa] " << msg << "\n";
}

struct CommonFlags {
  std::uint64_t seed = 1;
  std::string format = "table";
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "root seed for all randomness");
  cmd->add_option("--format", flags.format, "table|json")
      ->check(CLI::IsMember({"table", "json"}));
  cmd->add_option("--jobs", flags.jobs, "parallel workers for sweeps")
      ->check(CLI::Range(std::size_t{1}, std::size_t{64}));
}

int run_gradcheck(const CommonFlags& common, std::size_t trials) {
  dsanet::GradSuiteOptions options;
  options.seed = common.seed;
  options.trials = trials;
  options.jobs = common.jobs;
  log_info("running gradient suite, trials=" + std::to_string(trials));
  const dsanet::GradSuiteReport report = dsanet::run_gradient_suite(options);

  if (common.format == "json") {
    ordered_json j;
    j["command"] = "gradcheck";
    j["seed"] = common.seed;
    j["trials"] = trials;
    j["tolerance"] = report.tolerance;
    j["cases"] = ordered_json::array();
    for (const auto& r : report.results) {
      j["cases"].push_back({{"op", r.name},
                            {"worst_rel_error", r.worst_rel_error},
                            {"pass", r.worst_rel_error < report.tolerance}});
    }
    j["pass"] = report.all_ok();
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("%-24s %14s  %s\n", "op", "worst rel err", "status");
    for (const auto& r : report.results) {
      std::printf("%-24s %14.3e  %s\n", r.name.c_str(), r.worst_rel_error,
                  r.worst_rel_error < report.tolerance ? "ok" : "FAIL");
    }
    std::printf("overall: %s (tolerance %.1e, %zu trials per op)\n",
                report.all_ok() ? "ok" : "FAIL", report.tolerance, trials);
  }
  if (!report.all_ok()) {
    for (const auto& r : report.results) {
      if (!(r.worst_rel_error < report.tolerance)) {
        std::cerr << "gradcheck failed: op " << r.name << " rel error "
                  << r.worst_rel_error << " at seed " << r.worst_seed << "\n";
      }
    }
    return 1;
  }
  return 0;
}

int run_oracle(const CommonFlags& common, std::size_t max_extent,
               std::size_t seeds) {
  dsanet::OracleSweepOptions options;
  options.max_extent = max_extent;
  options.seeds = seeds;
  options.seed = common.seed;
  options.jobs = common.jobs;
  log_info("running oracle sweep");
  const dsanet::OracleSweepResult result = dsanet::oracle_sweep(options);
  const double tolerance = 1e-12;
  const bool pass = result.max_deviation < tolerance;

  if (common.format == "json") {
    ordered_json j;
    j["command"] = "oracle";
    j["seed"] = common.seed;
    j["cells"] = result.cells;
    j["max_abs_deviation"] = result.max_deviation;
    j["tolerance"] = tolerance;
    j["worst_shape"] = result.worst_shape;
    j["pass"] = pass;
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("cells: %zu\nmax |segment_conv - conv4d(embed)|: %.3e\n",
                result.cells, result.max_deviation);
    std::printf("worst shape: %s\n",
                dsanet::shape_str(result.worst_shape).c_str());
    std::printf("status: %s (tolerance %.0e)\n", pass ? "ok" : "FAIL",
                tolerance);
  }
  if (!pass) {
    std::cerr << "oracle failed at shape "
              << dsanet::shape_str(result.worst_shape) << ", deviation "
              << result.max_deviation << "\n";
    return 1;
  }
  return 0;
}

struct FlopsFlags {
  std::string arch = "i3d_r50";
  std::string arch_dir;
  std::size_t frames = 4;
  std::size_t res = 224;
  std::size_t u = 4;
  std::size_t classes = 0;  // 0 = architecture default
  bool params_only = false;
  bool with_dsa = false;
  std::vector<std::string> dsa_stages{"res3", "res4"};
  std::size_t l = 3;
  std::size_t alpha = 2;
  double beta = 0.125;
};

std::filesystem::path resolve_arch(const FlopsFlags& flags) {
  namespace fs = std::filesystem;
  fs::path direct(flags.arch);
  if (direct.extension() == ".json" || fs::exists(direct)) return direct;
  const fs::path dir = flags.arch_dir.empty() ? dsanet::builtin_arch_dir()
                                              : fs::path(flags.arch_dir);
  return dir / (flags.arch + ".json");
}

int run_flops(const CommonFlags& common, const FlopsFlags& flags) {
  const std::filesystem::path path = resolve_arch(flags);
  log_debug("loading architecture from " + path.string());
  const dsanet::ArchSpec arch = dsanet::load_arch(path);
  const dsanet::CostReport report =
      dsanet::arch_cost(arch, flags.frames, flags.res, flags.u, flags.classes);

  dsanet::CostReport overhead;
  if (flags.with_dsa) {
    dsanet::DsaPlacementCost placement;
    placement.stages = flags.dsa_stages;
    placement.snippets = flags.u;
    placement.kernel_size = flags.l;
    placement.width_factor = flags.alpha;
    placement.dynamic_fraction = flags.beta;
    overhead = dsanet::dsa_overhead(arch, placement, flags.frames, flags.res);
  }

  if (common.format == "json") {
    ordered_json j;
    j["command"] = "flops";
    j["report"] =
        nlohmann::json::parse(dsanet::report_render(report, dsanet::ReportFormat::kJson));
    if (flags.with_dsa) {
      j["dsa_overhead"] = nlohmann::json::parse(
          dsanet::report_render(overhead, dsanet::ReportFormat::kJson));
      j["dsa_relative_macs"] =
          static_cast<double>(overhead.total_macs()) /
          static_cast<double>(report.total_macs());
      j["dsa_relative_params"] =
          static_cast<double>(overhead.total_params()) /
          static_cast<double>(report.total_params());
    }
    std::cout << j.dump(2) << "\n";
  } else {
    if (flags.params_only) {
      std::printf("%s: %.3f M params (%llu)\n", report.arch.c_str(),
                  static_cast<double>(report.total_params()) / 1e6,
                  report.total_params());
    } else {
      std::cout << dsanet::report_render(report, dsanet::ReportFormat::kTable);
    }
    if (flags.with_dsa) {
      std::cout << "\naggregation-module overhead:\n"
                << dsanet::report_render(overhead, dsanet::ReportFormat::kTable);
      std::printf("relative: %.6f%% MACs, %.6f%% params\n",
                  100.0 * static_cast<double>(overhead.total_macs()) /
                      static_cast<double>(report.total_macs()),
                  100.0 * static_cast<double>(overhead.total_params()) /
                      static_cast<double>(report.total_params()));
    }
  }
  return 0;
}

struct TrainFlags {
  std::size_t n = 2000;
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch = 32;
  std::size_t width = 16;
  std::size_t blocks = 2;
  double beta = 0.125;
  std::string save_dir;
};

ordered_json train_one(const char* tag, const dsanet::ToyNetSpec& spec,
                       const dsanet::OrderDataset& dataset,
                       const TrainFlags& flags, std::uint64_t seed) {
  dsanet::Rng init_rng(dsanet::derive_seed(seed, 7));
  dsanet::ToyNetParams params = dsanet::ToyNetParams::init(spec, init_rng);
  log_info(std::string("training ") + tag);
  const dsanet::TrainResult result = dsanet::train_toy(
      spec, params, dataset, flags.epochs, flags.lr, seed, flags.batch);

  if (!flags.save_dir.empty()) {
    std::map<std::string, dsanet::Tensor> tensors;
    dsanet::ToyNetParams& p = params;
    dsanet::for_each_param(spec, p, [&](const std::string& name,
                                        dsanet::Tensor& t) {
      tensors[name] = t;
    });
    dsanet::save_bundle(std::filesystem::path(flags.save_dir) / tag, tensors,
                        {{"epochs", static_cast<double>(flags.epochs)},
                         {"lr", flags.lr}});
  }

  ordered_json j;
  j["epoch_loss"] = result.epoch_loss;
  j["epoch_train_accuracy"] = result.epoch_train_accuracy;
  j["train_accuracy"] = result.train_accuracy;
  j["holdout_accuracy"] = result.holdout_accuracy;
  return j;
}

int run_train_demo(const CommonFlags& common, const TrainFlags& flags) {
  const dsanet::OrderDataset dataset =
      dsanet::make_order_dataset(flags.n, dsanet::derive_seed(common.seed, 1));

  const dsanet::ToyNetSpec baseline_spec =
      dsanet::make_demo_spec(flags.blocks, flags.width, 0.0);
  const dsanet::ToyNetSpec dsa_spec =
      dsanet::make_demo_spec(flags.blocks, flags.width, flags.beta);

  ordered_json baseline, dsa;
  try {
    baseline = train_one("baseline", baseline_spec, dataset, flags, common.seed);
    dsa = train_one("dsa", dsa_spec, dataset, flags, common.seed);
  } catch (const std::exception& e) {
    std::cerr << "train-demo: " << e.what() << "\n";
    return 1;
  }

  const double gap = dsa["holdout_accuracy"].get<double>() -
                     baseline["holdout_accuracy"].get<double>();
  if (common.format == "json") {
    ordered_json j;
    j["command"] = "train-demo";
    j["seed"] = common.seed;
    j["samples"] = flags.n;
    j["epochs"] = flags.epochs;
    j["lr"] = flags.lr;
    j["beta"] = flags.beta;
    j["baseline"] = baseline;
    j["dsa"] = dsa;
    j["holdout_gap"] = gap;
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("order task: %zu samples (half train, half holdout), %zu epochs\n",
                flags.n, flags.epochs);
    std::printf("baseline (beta=0)    holdout accuracy: %.4f\n",
                baseline["holdout_accuracy"].get<double>());
    std::printf("dsa      (beta=%.3f) holdout accuracy: %.4f\n", flags.beta,
                dsa["holdout_accuracy"].get<double>());
    std::printf("gap: %+.4f\n", gap);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic segment aggregation: checks, cost model, demo"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference validation of every differentiable op");
  std::size_t trials = 10;
  add_common(gradcheck, common);
  gradcheck->add_option("--trials", trials, "random draws per op")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000}));

  auto* oracle = app.add_subcommand(
      "oracle", "segment_conv vs brute-force 4D convolution sweep");
  std::size_t max_extent = 4, oracle_seeds = 5;
  add_common(oracle, common);
  oracle->add_option("--max-extent", max_extent, "cap every grid dimension")
      ->check(CLI::Range(std::size_t{1}, std::size_t{8}));
  oracle->add_option("--seeds", oracle_seeds, "random draws per shape")
      ->check(CLI::Range(std::size_t{1}, std::size_t{100}));

  auto* flops = app.add_subcommand(
      "flops", "analytic MACs/params for a staged architecture");
  FlopsFlags flops_flags;
  add_common(flops, common);
  flops->add_option("--arch", flops_flags.arch, "architecture name or JSON path");
  flops->add_option("--arch-dir", flops_flags.arch_dir,
                    "directory for named architectures");
  flops->add_option("--frames", flops_flags.frames, "frames per snippet");
  flops->add_option("--res", flops_flags.res, "input resolution");
  flops->add_option("--u", flops_flags.u, "snippets per clip");
  flops->add_option("--classes", flops_flags.classes,
                    "classifier classes (0 = architecture default)");
  flops->add_flag("--params", flops_flags.params_only,
                  "print the parameter count headline");
  flops->add_flag("--dsa", flops_flags.with_dsa,
                  "append aggregation-module overhead");
  flops->add_option("--dsa-stages", flops_flags.dsa_stages,
                    "stages that receive modules");
  flops->add_option("--l", flops_flags.l, "kernel taps");
  flops->add_option("--alpha", flops_flags.alpha, "MLP width factor");
  flops->add_option("--beta", flops_flags.beta, "dynamic channel fraction");

  auto* train = app.add_subcommand(
      "train-demo", "order-task comparison of baseline vs aggregation nets");
  TrainFlags train_flags;
  add_common(train, common);
  train->add_option("--n", train_flags.n, "dataset size (even)");
  train->add_option("--epochs", train_flags.epochs, "training epochs");
  train->add_option("--lr", train_flags.lr, "SGD learning rate");
  train->add_option("--batch", train_flags.batch, "minibatch size");
  train->add_option("--width", train_flags.width, "network width");
  train->add_option("--blocks", train_flags.blocks, "residual blocks");
  train->add_option("--beta", train_flags.beta, "dynamic channel fraction");
  train->add_option("--save-dir", train_flags.save_dir,
                    "write trained parameters here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gradcheck->parsed()) return run_gradcheck(common, trials);
    if (oracle->parsed()) return run_oracle(common, max_extent, oracle_seeds);
    if (flops->parsed()) return run_flops(common, flops_flags);
    if (train->parsed()) return run_train_demo(common, train_flags);
  } catch (const std::exception& e) {
    std::cerr << "dsa: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
