#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mspn/baseline.hpp"
#include "mspn/checkpoint.hpp"
#include "mspn/data.hpp"
#include "mspn/eval.hpp"
#include "mspn/gradcheck.hpp"
#include "mspn/graph.hpp"
#include "mspn/optim.hpp"

namespace fs = std::filesystem;
using namespace mspn;

namespace {

int default_workers() {
  if (const char* env = std::getenv("MSPN_WORKERS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return omp_get_max_threads();
}

struct TrainFlags {
  std::string data;
  std::string out;
  std::string variant = "MSPN";
  std::string pool_mode = "max";
  std::string history;
  std::vector<int> channels{96, 256, 384, 512};
  std::vector<int> fc{1024, 1024};
  double lr = 0.01;
  double momentum = 0.9;
  int patience = 3;
  int batch = 64;
  int max_epochs = 500;
  double val_frac = 0.1;
  uint64_t seed = 1;
  int workers = default_workers();
  int precision = 32;
  bool fc_given = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_variant) {
  cmd->add_option("--data", f.data, "dataset root with train/ and test/ splits")
      ->required();
  cmd->add_option("--out", f.out, "checkpoint file to write")->required();
  if (with_variant) {
    cmd->add_option("--variant", f.variant,
                    "Variant-1..Variant-5 or MSPN (pooling stage set)");
    cmd->add_option("--pool-mode", f.pool_mode, "row pooling: max or average")
        ->check(CLI::IsMember({"max", "average"}));
  }
  cmd->add_option("--seed", f.seed, "seed for init, shuffling and splits");
  cmd->add_option("--lr", f.lr, "initial learning rate");
  cmd->add_option("--momentum", f.momentum, "sgd momentum");
  cmd->add_option("--patience", f.patience, "epochs without val improvement before decay");
  cmd->add_option("--batch", f.batch, "minibatch size");
  cmd->add_option("--max-epochs", f.max_epochs, "epoch safety cap");
  cmd->add_option("--val-frac", f.val_frac, "fraction of training data held out");
  cmd->add_option("--channels", f.channels, "conv channel counts c1,c2,c3,c4")
      ->delimiter(',')
      ->expected(4);
  cmd->add_option("--fc", f.fc, "fully-connected widths f1,f2")
      ->delimiter(',')
      ->expected(2);
  cmd->add_option("--workers", f.workers,
                  "parallel sample workers (default from MSPN_WORKERS)");
  cmd->add_option("--precision", f.precision, "floating point width: 32 or 64")
      ->check(CLI::IsMember({32, 64}));
}

MSPNConfig config_from(const TrainFlags& f) {
  MSPNConfig cfg;
  cfg.conv_channels = {f.channels[0], f.channels[1], f.channels[2], f.channels[3]};
  cfg.fc_widths = {f.fc[0], f.fc[1]};
  cfg.ssp_mode = f.pool_mode == "max" ? PoolMode::kMax : PoolMode::kAverage;
  return cfg;
}

TrainConfig train_config_from(const TrainFlags& f) {
  TrainConfig tc;
  tc.initial_lr = f.lr;
  tc.momentum = f.momentum;
  tc.plateau_patience = f.patience;
  tc.batch_size = f.batch;
  tc.max_epochs = f.max_epochs;
  tc.val_fraction = f.val_frac;
  tc.seed = f.seed;
  tc.workers = f.workers;
  return tc;
}

// history sink: a file when --history is set, stdout otherwise
struct HistoryWriter {
  std::ofstream file;
  bool to_file = false;
  explicit HistoryWriter(const std::string& path) {
    if (!path.empty()) {
      file.open(path);
      if (!file) throw IoError("cannot open history file: " + path);
      to_file = true;
    }
  }
  void write(const EpochRecord& r) {
    if (to_file)
      file << epoch_record_jsonl(r) << "\n";
    else
      std::cout << epoch_record_jsonl(r) << "\n";
  }
};

template <typename T>
int run_train_t(const TrainFlags& f) {
  omp_set_num_threads(f.workers);
  const LoadResult loaded = load_dataset(f.data, "train", {32, 26});
  if (loaded.manifest.siw10_verified)
    std::cerr << "note: per-class counts match the SIW-10 training split"
                 " (siw10-verified)\n";
  if (loaded.manifest.skipped_files > 0)
    std::cerr << "warning: skipped " << loaded.manifest.skipped_files
              << " unreadable files\n";

  NetworkGraph<T> g = build_variant<T>(f.variant, config_from(f), !f.fc_given);
  init_params(g, f.seed);
  g.class_names = loaded.dataset.class_names;

  const SplitResult split = stratified_split(loaded.dataset, f.val_frac, f.seed);
  HistoryWriter hist(f.history);
  const TrainHistory h = train(g, split.train, split.val, train_config_from(f),
                               [&](const EpochRecord& r) { hist.write(r); });

  save_checkpoint(g, f.out);
  std::cerr << "trained " << f.variant << " for " << h.epochs.size() << " epochs"
            << (h.lr_floor_reached ? " (rate floor reached)" : "") << "; best val error "
            << h.best_val_error << " at epoch " << h.best_epoch << "; saved " << f.out
            << "\n";
  return 0;
}

int run_train(const TrainFlags& f) {
  return f.precision == 64 ? run_train_t<double>(f) : run_train_t<float>(f);
}

int run_eval(const std::string& model, const std::string& data, const std::string& report,
             int workers) {
  omp_set_num_threads(workers);
  NetworkGraph<float> g = load_checkpoint<float>(model);
  if (g.kind != GraphKind::kMspn)
    throw ConfigError("checkpoint " + model +
                      " holds a patch network; use baseline-eval for it");
  const LoadResult loaded = load_dataset(data, "test", {32, g.min_input_width()});
  if (loaded.manifest.siw10_verified)
    std::cerr << "note: per-class counts match the SIW-10 test split (siw10-verified)\n";

  const EvalResult r = evaluate(
      [&](const Sample& s, std::size_t) { return predict_label(g, s); },
      loaded.dataset, workers);
  if (!report.empty()) write_reports(r, report);
  std::printf("accuracy %.4f  avg_error %.4f\n", r.accuracy, r.avg_error);
  return 0;
}

int run_ablate(const TrainFlags& f, const std::string& out_dir) {
  omp_set_num_threads(f.workers);
  const LoadResult train_set = load_dataset(f.data, "train", {32, 26});
  const LoadResult test_set = load_dataset(f.data, "test", {32, 26});
  fs::create_directories(out_dir);

  static const char* kConfigNames[6] = {"ssp-1",         "ssp-2",
                                        "ssp-3",         "ssp-2 + ssp-3",
                                        "ssp-1 + ssp-2", "ssp-1 + ssp-2 + ssp-3"};

  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  if (!csv) throw IoError("cannot write ablation.csv under " + out_dir);
  csv << "variant,configuration,avg_error_percent,accuracy\n";
  std::printf("%-10s  %-22s  %s\n", "variant", "configuration", "avg error (%)");

  for (std::size_t i = 0; i < variant_names().size(); ++i) {
    const std::string name = variant_names()[i];
    NetworkGraph<float> g = build_variant<float>(name, config_from(f), !f.fc_given);
    init_params(g, f.seed);
    g.class_names = train_set.dataset.class_names;
    const SplitResult split = stratified_split(train_set.dataset, f.val_frac, f.seed);
    train(g, split.train, split.val, train_config_from(f));

    const EvalResult r = evaluate(
        [&](const Sample& s, std::size_t) { return predict_label(g, s); },
        test_set.dataset, f.workers);
    save_checkpoint(g, (fs::path(out_dir) / (name + ".mspn")).string());
    write_reports(r, (fs::path(out_dir) / name).string());

    char err[32];
    std::snprintf(err, sizeof err, "%.6f", 100.0 * r.avg_error);
    csv << name << "," << kConfigNames[i] << "," << err << "," << r.accuracy << "\n";
    std::printf("%-10s  %-22s  %.2f\n", name.c_str(), kConfigNames[i],
                100.0 * r.avg_error);
  }
  std::cerr << "wrote " << (fs::path(out_dir) / "ablation.csv").string() << "\n";
  return 0;
}

int run_gradcheck_cmd(int trials, uint64_t seed) {
  const auto results = mspn::run_gradcheck(trials, seed);
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-14s trials=%-4d max_rel_err=%.3e  %s\n", r.kind.c_str(), r.trials,
                r.max_rel_err, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 3;
}

int run_baseline_train(const TrainFlags& f) {
  omp_set_num_threads(f.workers);
  // the patch pipeline resizes to height 40 itself, keep the native aspect
  const LoadResult loaded = load_dataset(f.data, "train", {40, 1});
  NetworkGraph<float> net = build_patchnet<float>(config_from(f));
  init_params(net, f.seed);

  HistoryWriter hist(f.history);
  const TrainHistory h =
      baseline_train(net, loaded.dataset, train_config_from(f),
                     [&](const EpochRecord& r) { hist.write(r); });
  save_checkpoint(net, f.out);
  std::cerr << "trained patch baseline for " << h.epochs.size()
            << " epochs; best val error " << h.best_val_error << "; saved " << f.out
            << "\n";
  return 0;
}

int run_baseline_eval(const std::string& model, const std::string& data,
                      const std::string& report, uint64_t eval_seed, int workers) {
  omp_set_num_threads(workers);
  NetworkGraph<float> net = load_checkpoint<float>(model);
  if (net.kind != GraphKind::kPatchNet)
    throw ConfigError("checkpoint " + model + " is not a patch network; use eval");
  const LoadResult loaded = load_dataset(data, "test", {40, 1});

  const EvalResult r = evaluate(
      [&](const Sample& s, std::size_t i) {
        return baseline_predict(net, s.image, eval_seed, i).label;
      },
      loaded.dataset, workers);
  if (!report.empty()) write_reports(r, report);
  std::printf("accuracy %.4f  avg_error %.4f\n", r.accuracy, r.avg_error);
  return 0;
}

int run_synth(const std::string& out, const SynthSpec& spec) {
  const SynthCorpus corpus = synth_generate(spec);
  save_dataset(out, "train", corpus.train);
  save_dataset(out, "test", corpus.test);
  std::ofstream rec(fs::path(out) / "synth_spec.json");
  if (!rec) throw IoError("cannot write synth_spec.json under " + out);
  rec << synth_spec_json(spec);
  std::cerr << "wrote " << corpus.train.size() << " train and " << corpus.test.size()
            << " test images under " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-stage spatially-sensitive pooling network for script"
               " identification on variable-width text lines"};
  app.require_subcommand(1);
  int rc = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic glyph-line corpus");
  SynthSpec spec;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output dataset root")->required();
  synth->add_option("--seed", spec.seed, "corpus seed");
  synth->add_option("--train-per-class", spec.train_per_class, "training lines per class");
  synth->add_option("--test-per-class", spec.test_per_class, "test lines per class");
  synth->add_option("--shared-frac", spec.shared_fraction,
                    "fraction of glyphs shared across all classes");
  synth->add_option("--alphabet", spec.alphabet_size, "glyphs per class");
  synth->add_option("--noise", spec.noise, "additive gaussian noise sigma");
  synth->add_option("--min-len", spec.min_len, "shortest line, in glyphs");
  synth->add_option("--max-len", spec.max_len, "longest line, in glyphs");
  synth->callback([&] { rc = run_synth(synth_out, spec); });

  // train
  auto* train_cmd = app.add_subcommand("train", "train a network on a dataset");
  TrainFlags tf;
  add_train_flags(train_cmd, tf, true);
  train_cmd->add_option("--history", tf.history,
                        "write per-epoch json lines here instead of stdout");
  train_cmd->callback([&] {
    tf.fc_given = train_cmd->count("--fc") > 0;
    rc = run_train(tf);
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string eval_model, eval_data, eval_report;
  int eval_workers = default_workers();
  eval_cmd->add_option("--model", eval_model, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset root")->required();
  eval_cmd->add_option("--report", eval_report, "directory for metrics/confusion files");
  eval_cmd->add_option("--workers", eval_workers, "parallel evaluation workers");
  eval_cmd->callback([&] { rc = run_eval(eval_model, eval_data, eval_report, eval_workers); });

  // ablate
  auto* ablate_cmd =
      app.add_subcommand("ablate", "train and compare all six pooling-stage variants");
  TrainFlags af;
  std::string ablate_out;
  af.data.clear();
  ablate_cmd->add_option("--data", af.data, "dataset root")->required();
  ablate_cmd->add_option("--out", ablate_out, "output directory")->required();
  ablate_cmd->add_option("--seed", af.seed, "seed shared by all variants");
  ablate_cmd->add_option("--lr", af.lr, "initial learning rate");
  ablate_cmd->add_option("--momentum", af.momentum, "sgd momentum");
  ablate_cmd->add_option("--patience", af.patience, "plateau patience");
  ablate_cmd
      ->add_option("--pool-mode", af.pool_mode, "row pooling: max or average")
      ->check(CLI::IsMember({"max", "average"}));
  ablate_cmd->add_option("--batch", af.batch, "minibatch size");
  ablate_cmd->add_option("--max-epochs", af.max_epochs, "epoch safety cap");
  ablate_cmd->add_option("--val-frac", af.val_frac, "validation fraction");
  ablate_cmd->add_option("--channels", af.channels, "conv channels c1,c2,c3,c4")
      ->delimiter(',')
      ->expected(4);
  ablate_cmd->add_option("--fc", af.fc, "fc widths f1,f2")->delimiter(',')->expected(2);
  ablate_cmd->add_option("--workers", af.workers, "parallel sample workers");
  ablate_cmd->callback([&] {
    af.fc_given = ablate_cmd->count("--fc") > 0;
    rc = run_ablate(af, ablate_out);
  });

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference check of every backward pass, 64-bit");
  int gc_trials = 20;
  uint64_t gc_seed = 20240601;
  gc->add_option("--trials", gc_trials, "random shapes per layer kind")
      ->check(CLI::PositiveNumber);
  gc->add_option("--seed", gc_seed, "seed for the random shapes");
  gc->callback([&] { rc = run_gradcheck_cmd(gc_trials, gc_seed); });

  // baseline-train / baseline-eval
  auto* bt = app.add_subcommand("baseline-train",
                                "train the fixed-size patch classifier baseline");
  TrainFlags bf;
  add_train_flags(bt, bf, false);
  bt->add_option("--history", bf.history, "write per-epoch json lines here");
  bt->callback([&] { rc = run_baseline_train(bf); });

  auto* be = app.add_subcommand("baseline-eval",
                                "evaluate the patch baseline by probability averaging");
  std::string be_model, be_data, be_report;
  uint64_t be_seed = 123;
  int be_workers = default_workers();
  be->add_option("--model", be_model, "patch checkpoint file")->required();
  be->add_option("--data", be_data, "dataset root")->required();
  be->add_option("--report", be_report, "directory for metrics/confusion files");
  be->add_option("--eval-seed", be_seed, "seed for test-time patch sampling");
  be->add_option("--workers", be_workers, "parallel evaluation workers");
  be->callback([&] { rc = run_baseline_eval(be_model, be_data, be_report, be_seed, be_workers); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::logic_error& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
