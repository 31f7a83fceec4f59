// Command-line front end: train a fusion model, fuse image pairs, score
// fused outputs, dump per-state feature images, and benchmark the sampled
// decomposition loss against the full one.
//
// Exit statuses: 0 success, 1 partial or runtime failure, 2 configuration
// error (invalid flags, config fields, or command misuse).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "contifuse/checkpoint.hpp"
#include "contifuse/constraints.hpp"
#include "contifuse/dataset.hpp"
#include "contifuse/decomposition_loss.hpp"
#include "contifuse/metrics.hpp"
#include "contifuse/pipeline.hpp"
#include "contifuse/rng.hpp"
#include "contifuse/run_config.hpp"
#include "contifuse/trainer.hpp"

namespace cf = contifuse;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kConfig = 2;

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string config_path;
  std::string data;
  std::string out;
  std::string resume;
  std::vector<std::string> sets;
  long long epochs = -1;
  long long batch_size = -1;
  long long seed = -1;
  std::string loss_mode;
  std::string decay;
  std::string precision;
};

void apply_set_entries(cf::RunConfig& rc, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw cf::ContractError("--set wants key=value, got '" + s + "'");
    cf::apply_run_config_entry(rc, cf::detail::trim(s.substr(0, eq)),
                               cf::detail::trim(s.substr(eq + 1)));
  }
}

template <typename T>
int run_train(const cf::RunConfig& rc, const cf::Discovery& d, const TrainOpts& opt) {
  cf::FusionNet<T> net(rc.model, rc.train.seed);
  cf::Trainer<T> trainer(net, rc.train, cf::load_train_samples<T>(d.pairs), rc.aug);
  if (!opt.resume.empty()) {
    trainer.load_checkpoint(opt.resume);
    std::printf("resumed %s at epoch %lld\n", opt.resume.c_str(),
                static_cast<long long>(trainer.next_epoch()));
  }

  const fs::path out(rc.out_dir);
  const fs::path csv_path = out / "loss.csv";
  const bool fresh_log = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
  std::ofstream log(csv_path, std::ios::app);
  if (!log) throw cf::RuntimeError("cannot open " + csv_path.string());
  if (fresh_log) log << cf::step_log_header() << "\n";

  auto save = [&](cf::Dim completed) {
    const fs::path p = out / ("ckpt-" + std::to_string(completed) + ".bin");
    trainer.save_checkpoint(p.string());
    std::printf("checkpoint %s\n", p.string().c_str());
  };
  if (trainer.next_epoch() == 0) save(0);

  const cf::Dim epochs = trainer.config().epochs;
  while (!trainer.done()) {
    double epoch_loss = 0;
    double last_lr = 0;
    cf::Dim steps = 0;
    trainer.run_epoch([&](const cf::StepLog& s) {
      log << cf::format_step_log(s) << "\n";
      log.flush();
      epoch_loss += s.total;
      last_lr = s.lr;
      ++steps;
    });
    const cf::Dim done = trainer.next_epoch();
    std::printf("epoch %lld/%lld  mean loss %.6f  lr %.3g\n", static_cast<long long>(done),
                static_cast<long long>(epochs), epoch_loss / double(steps), last_lr);
    std::fflush(stdout);
    if (done % trainer.config().checkpoint_every == 0 || trainer.done()) save(done);
  }
  return kOk;
}

int cmd_train(const TrainOpts& opt) {
  cf::RunConfig rc;
  if (!opt.config_path.empty()) cf::apply_run_config_file(rc, opt.config_path);
  apply_set_entries(rc, opt.sets);
  if (!opt.data.empty()) rc.data_root = opt.data;
  if (!opt.out.empty()) rc.out_dir = opt.out;
  if (opt.epochs >= 0) cf::apply_run_config_entry(rc, "train.epochs", std::to_string(opt.epochs));
  if (opt.batch_size >= 0)
    cf::apply_run_config_entry(rc, "train.batch_size", std::to_string(opt.batch_size));
  if (opt.seed >= 0) cf::apply_run_config_entry(rc, "train.seed", std::to_string(opt.seed));
  if (!opt.loss_mode.empty()) cf::apply_run_config_entry(rc, "train.loss_mode", opt.loss_mode);
  if (!opt.decay.empty()) cf::apply_run_config_entry(rc, "train.decay", opt.decay);
  if (!opt.precision.empty()) cf::apply_run_config_entry(rc, "train.precision", opt.precision);

  std::vector<std::string> bad = cf::run_config_violations(rc);
  if (rc.data_root.empty()) bad.push_back("data.root is required (config key or --data)");
  if (rc.out_dir.empty()) bad.push_back("out.dir is required (config key or --out)");
  if (!bad.empty()) {
    std::fprintf(stderr, "train: invalid configuration:\n");
    for (const auto& b : bad) std::fprintf(stderr, "  - %s\n", b.c_str());
    return kConfig;
  }
  rc.validate();

  cf::Discovery d = fs::is_directory(rc.data_root) ? cf::discover_dataset(rc.data_root)
                                                   : cf::discover_manifest(rc.data_root);
  for (const auto& w : d.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  fs::create_directories(rc.out_dir);
  const std::string rendered = cf::render_run_config(rc);
  std::ofstream cfg_out(fs::path(rc.out_dir) / "config.txt");
  cfg_out << rendered;
  cfg_out.close();
  std::fputs(rendered.c_str(), stdout);
  std::printf("pairs: %zu\n", d.pairs.size());
  std::fflush(stdout);

  return rc.precision == "f64" ? run_train<double>(rc, d, opt) : run_train<float>(rc, d, opt);
}

// ---------------------------------------------------------------------------
// fuse / dump-states

std::string checkpoint_precision(const cf::Checkpoint& ck) {
  if (ck.meta.contains("trainer")) return ck.meta.at("trainer").value("dtype", "f32");
  return "f32";
}

struct FuseOpts {
  std::string ckpt, ir, vis, out;
  bool grayscale = false;
};

template <typename T>
int run_fuse(const cf::Checkpoint& ck, const std::vector<cf::PairRecord>& records,
             const FuseOpts& opt) {
  cf::FusionNet<T> net = cf::model_from_checkpoint<T>(ck);
  fs::create_directories(opt.out);
  std::size_t failed = 0;
  for (const auto& rec : records) {
    try {
      const cf::ImagePair<T> pair = cf::load_pair<T>(rec);
      const cf::Tensor<T> fused = cf::fuse_luma(net, pair.ir, pair.vis);
      const fs::path dst = fs::path(opt.out) / (rec.id + ".png");
      cf::save_png(dst.string(), cf::render_fused(fused, pair, opt.grayscale));
      std::printf("wrote %s\n", dst.string().c_str());
    } catch (const std::exception& e) {
      std::fprintf(stderr, "fuse: %s: %s\n", rec.id.c_str(), e.what());
      ++failed;
    }
  }
  std::printf("fused %zu of %zu pairs\n", records.size() - failed, records.size());
  return failed == 0 ? kOk : kPartial;
}

int cmd_fuse(const FuseOpts& opt) {
  const cf::Checkpoint ck = cf::Checkpoint::load(opt.ckpt);
  std::vector<cf::PairRecord> records;
  if (fs::is_directory(opt.ir) && fs::is_directory(opt.vis)) {
    cf::Discovery d = cf::discover_pair_dirs(opt.ir, opt.vis);
    for (const auto& w : d.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    records = std::move(d.pairs);
  } else if (fs::is_regular_file(opt.ir) && fs::is_regular_file(opt.vis)) {
    records.push_back({fs::path(opt.ir).stem().string(), opt.ir, opt.vis});
  } else {
    throw cf::ContractError("--ir and --vis must both be files or both be directories");
  }
  return checkpoint_precision(ck) == "f64" ? run_fuse<double>(ck, records, opt)
                                           : run_fuse<float>(ck, records, opt);
}

struct DumpOpts {
  std::string ckpt, ir, vis, out;
  long long layer = 1;
};

template <typename T>
int run_dump(const cf::Checkpoint& ck, const DumpOpts& opt) {
  cf::FusionNet<T> net = cf::model_from_checkpoint<T>(ck);
  const cf::PairRecord rec{fs::path(opt.ir).stem().string(), opt.ir, opt.vis};
  const cf::ImagePair<T> pair = cf::load_pair<T>(rec);
  const std::vector<cf::ImageU8> states =
      cf::dump_state_images(net, pair.ir, pair.vis, cf::Dim(opt.layer));
  fs::create_directories(opt.out);
  for (std::size_t i = 0; i < states.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "state-%02zu.png", i);
    const fs::path dst = fs::path(opt.out) / name;
    cf::save_png(dst.string(), states[i]);
    std::printf("wrote %s\n", dst.string().c_str());
  }
  std::printf("layer %lld: state 0 is the visible endpoint, state %zu the infrared endpoint\n",
              opt.layer, states.size() - 1);
  return kOk;
}

int cmd_dump_states(const DumpOpts& opt) {
  const cf::Checkpoint ck = cf::Checkpoint::load(opt.ckpt);
  return checkpoint_precision(ck) == "f64" ? run_dump<double>(ck, opt) : run_dump<float>(ck, opt);
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string fused, ir, vis, report;
  std::string metrics;
};

int cmd_eval(const EvalOpts& opt) {
  const cf::MetricMask mask =
      opt.metrics.empty() ? cf::MetricMask{} : cf::parse_metric_mask(opt.metrics);
  const cf::MetricReport report = cf::evaluate_directory(opt.fused, opt.ir, opt.vis, mask);
  std::ofstream out(opt.report);
  if (!out) throw cf::RuntimeError("cannot open report file: " + opt.report);
  out << cf::metric_report_csv(report);
  out.close();
  std::fputs(cf::metric_report_table(report).c_str(), stdout);
  std::printf("report written to %s (%zu scored, %zu skipped)\n", opt.report.c_str(),
              report.rows.size(), report.skipped.size());
  return report.complete() ? kOk : kPartial;
}

// ---------------------------------------------------------------------------
// bench-sds

struct BenchOpts {
  std::vector<long long> ks{5, 7, 9, 11, 15};
  long long trials = 3;
  long long layers = 2;
  long long seed = 0;
};

int cmd_bench_sds(const BenchOpts& opt) {
  using clock = std::chrono::steady_clock;
  if (opt.trials < 1) throw cf::ContractError("--trials must be >= 1");
  if (opt.layers < 1) throw cf::ContractError("--layers must be >= 1");
  const cf::Dim C = 8, H = 32, W = 32;
  const cf::DecompositionSettings settings;

  std::printf("synthetic stacks: %lld layer(s), %lld x %lld x %lld features, %lld trial(s)\n",
              opt.layers, static_cast<long long>(C), static_cast<long long>(H),
              static_cast<long long>(W), opt.trials);
  std::printf("%6s %12s %12s %10s %10s %8s\n", "K", "full evals", "sds evals", "full ms", "sds ms",
              "ratio");
  for (long long k : opt.ks) {
    if (k < 1) throw cf::ContractError("--k entries must be >= 1");
    const cf::Dim K = cf::Dim(k);
    long long full_evals = 0, sds_evals = 0;
    double full_ms = 0, sds_ms = 0;
    for (long long trial = 0; trial < opt.trials; ++trial) {
      std::vector<cf::Tensor<double>> stacks;
      cf::Rng rng(cf::derive_seed({std::uint64_t(opt.seed), cf::seed_tag("bench"),
                                   std::uint64_t(k), std::uint64_t(trial)}));
      std::vector<std::vector<cf::ConstraintPair>> sets;
      for (long long l = 0; l < opt.layers; ++l) {
        cf::Tensor<double> s({K + 2, C, H, W});
        for (cf::Dim i = 0; i < s.numel(); ++i) s[i] = rng.uniform();
        stacks.push_back(std::move(s));
        sets.push_back(cf::sds_sample(
            cf::sds_seed(std::uint64_t(opt.seed), std::uint64_t(trial), std::uint64_t(l)), K));
      }

      cf::EvalCounter full_c, sds_c;
      auto t0 = clock::now();
      cf::decomposition_loss_full(stacks, settings, &full_c);
      auto t1 = clock::now();
      cf::decomposition_loss_sds(stacks, sets, settings, &sds_c);
      auto t2 = clock::now();
      full_ms += std::chrono::duration<double, std::milli>(t1 - t0).count();
      sds_ms += std::chrono::duration<double, std::milli>(t2 - t1).count();
      full_evals = full_c.pair_evals;
      sds_evals = sds_c.pair_evals;
    }
    full_ms /= double(opt.trials);
    sds_ms /= double(opt.trials);
    std::printf("%6lld %12lld %12lld %10.2f %10.2f %8.2f\n", k, full_evals, sds_evals, full_ms,
                sds_ms, double(full_evals) / double(sds_evals));
  }
  std::printf("full-mode evaluations grow quadratically in K; sampled mode grows linearly\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continuous-decomposition infrared/visible image fusion toolkit"};
  app.require_subcommand(1);

  TrainOpts topt;
  CLI::App* train = app.add_subcommand("train", "train a fusion model");
  train->add_option("--config", topt.config_path, "config file of key = value lines");
  train->add_option("--data", topt.data, "dataset root (ir/ + vi/) or manifest file");
  train->add_option("--out", topt.out, "output directory for checkpoints, loss.csv, config.txt");
  train->add_option("--resume", topt.resume, "checkpoint to continue from (same config required)");
  train->add_option("--epochs", topt.epochs, "override train.epochs");
  train->add_option("--batch-size", topt.batch_size, "override train.batch_size");
  train->add_option("--seed", topt.seed, "override train.seed");
  train->add_option("--loss-mode", topt.loss_mode, "sds or full");
  train->add_option("--decay", topt.decay, "gaussian or linear");
  train->add_option("--precision", topt.precision, "f32 or f64");
  train->add_option("--set", topt.sets, "generic key=value override, repeatable")
      ->take_all();

  FuseOpts fopt;
  CLI::App* fuse = app.add_subcommand("fuse", "fuse infrared/visible pairs with a checkpoint");
  fuse->add_option("--checkpoint", fopt.ckpt, "model checkpoint")->required();
  fuse->add_option("--ir", fopt.ir, "infrared image or directory")->required();
  fuse->add_option("--vis", fopt.vis, "visible image or directory")->required();
  fuse->add_option("--out", fopt.out, "output directory")->required();
  fuse->add_flag("--grayscale", fopt.grayscale, "skip chroma recomposition");

  DumpOpts dopt;
  CLI::App* dump = app.add_subcommand("dump-states", "write per-state feature images");
  dump->add_option("--checkpoint", dopt.ckpt, "model checkpoint")->required();
  dump->add_option("--ir", dopt.ir, "infrared image")->required();
  dump->add_option("--vis", dopt.vis, "visible image")->required();
  dump->add_option("--layer", dopt.layer, "encoder layer, 1-based (default 1)");
  dump->add_option("--out", dopt.out, "output directory")->required();

  EvalOpts eopt;
  CLI::App* eval = app.add_subcommand("eval", "score fused images against their sources");
  eval->add_option("--fused", eopt.fused, "directory of fused images")->required();
  eval->add_option("--ir", eopt.ir, "directory of infrared sources")->required();
  eval->add_option("--vis", eopt.vis, "directory of visible sources")->required();
  eval->add_option("--report", eopt.report, "CSV report path")->required();
  eval->add_option("--metrics", eopt.metrics, "comma list of mi,sf,ag,vif,qabf (default all)");

  BenchOpts bopt;
  CLI::App* bench = app.add_subcommand("bench-sds", "compare full vs sampled loss cost");
  bench->add_option("--k", bopt.ks, "state counts to benchmark")->delimiter(',');
  bench->add_option("--trials", bopt.trials, "trials per K");
  bench->add_option("--layers", bopt.layers, "synthetic stack layers");
  bench->add_option("--seed", bopt.seed, "stack and sampling seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(topt);
    if (*fuse) return cmd_fuse(fopt);
    if (*dump) return cmd_dump_states(dopt);
    if (*eval) return cmd_eval(eopt);
    if (*bench) return cmd_bench_sds(bopt);
  } catch (const cf::ContractError& e) {
    std::fprintf(stderr, "contifuse: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "contifuse: %s\n", e.what());
    return kPartial;
  }
  return kConfig;
}
