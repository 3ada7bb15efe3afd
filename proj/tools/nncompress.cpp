// Command-line front end: train the reference CNN, compress a saved model
// with the iterative low-rank pipeline, evaluate accuracy, or inspect ranks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "nnc/dataset.hpp"
#include "nnc/errors.hpp"
#include "nnc/model_io.hpp"
#include "nnc/pipeline.hpp"
#include "nnc/rank_selection.hpp"
#include "nnc/reference_model.hpp"
#include "nnc/runtime.hpp"

namespace {

// Exit codes, also documented in the README.
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kIoError = 3;
constexpr int kMalformedModel = 4;
constexpr int kDiverged = 5;
constexpr int kNothingToDo = 6;

struct Options {
  std::string model_path;
  std::string out_dir = ".";
  std::string dataset_path;
  double k = 0.6;
  int epochs = 10;
  double learning_rate = 0.02;
  double momentum = 0.9;
  int batch_size = 16;
  int max_iterations = 4;
  double drop_threshold = 0.01;
  bool no_weaken = false;
  bool early_stop = false;
  std::uint64_t seed = 0;
  std::uint64_t dataset_seed = 0;
  bool dataset_seed_set = false;
  int verbosity = 1;
};

// The global seed fans out to independent streams so one flag reproduces the
// whole run.
std::uint64_t derived_dataset_seed(const Options& opt) {
  return opt.dataset_seed_set ? opt.dataset_seed : opt.seed ^ 0x5eed0da7aULL;
}
std::uint64_t derived_train_seed(const Options& opt) { return opt.seed ^ 0x7ea1717eULL; }
std::uint64_t derived_init_seed(const Options& opt) { return opt.seed ^ 0x1317a11ceULL; }

nnc::Dataset load_or_make_dataset(const Options& opt) {
  if (!opt.dataset_path.empty()) return nnc::load_dataset(opt.dataset_path);
  return nnc::make_dataset(derived_dataset_seed(opt));
}

void ensure_out_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw nnc::IoError("cannot create output directory " + dir + ": " + ec.message());
}

nnc::TrainConfig train_config(const Options& opt) {
  nnc::TrainConfig cfg;
  cfg.learning_rate = opt.learning_rate;
  cfg.momentum = opt.momentum;
  cfg.batch_size = opt.batch_size;
  cfg.epochs = opt.epochs;
  cfg.seed = derived_train_seed(opt);
  cfg.early_stop = opt.early_stop;
  return cfg;
}

std::string config_echo(const Options& opt, const char* subcommand) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["k"] = opt.k;
  j["epochs"] = opt.epochs;
  j["lr"] = opt.learning_rate;
  j["momentum"] = opt.momentum;
  j["batch_size"] = opt.batch_size;
  j["max_iterations"] = opt.max_iterations;
  j["drop_threshold"] = opt.drop_threshold;
  j["no_weaken"] = opt.no_weaken;
  j["early_stop"] = opt.early_stop;
  j["seed"] = opt.seed;
  j["dataset_seed"] = derived_dataset_seed(opt);
  if (!opt.dataset_path.empty()) j["dataset_path"] = opt.dataset_path;
  return j.dump();
}

void warn_weakening_band(const Options& opt) {
  if (opt.k < 0.5 || opt.k > 0.7)
    std::fprintf(stderr,
                 "warning: weakening factor %.3f is outside the recommended band "
                 "[0.5, 0.7]\n",
                 opt.k);
}

int cmd_train(const Options& opt) {
  warn_weakening_band(opt);
  const nnc::Dataset ds = load_or_make_dataset(opt);
  nnc::ModelGraph model = nnc::build_reference_cnn(derived_init_seed(opt), ds.num_classes,
                                                   ds.train.inputs.h);
  if (opt.verbosity > 0)
    std::printf("training reference cnn: %d train / %d test samples, %d classes\n",
                ds.train.size(), ds.test.size(), ds.num_classes);

  const nnc::FineTuneResult result = nnc::fine_tune(model, ds.train, train_config(opt));
  if (!result.loss_decreased)
    std::fprintf(stderr,
                 "warning: training loss did not decrease; keeping the best-seen weights\n");
  const double accuracy = nnc::evaluate_accuracy(result.model, ds.test);
  if (opt.verbosity > 0) std::printf("test accuracy: %.4f\n", accuracy);
  if (accuracy < 0.90)
    std::fprintf(stderr,
                 "warning: accuracy gate unmet (%.4f < 0.90); saving the model anyway — "
                 "consider more --epochs\n",
                 accuracy);

  ensure_out_dir(opt.out_dir);
  const std::string stem = (std::filesystem::path(opt.out_dir) / "model").string();
  nnc::save_model(result.model, stem);
  if (opt.verbosity > 0) std::printf("saved %s.json / %s.bin\n", stem.c_str(), stem.c_str());
  return kOk;
}

int cmd_compress(const Options& opt) {
  warn_weakening_band(opt);
  const nnc::ModelGraph model = nnc::load_model(opt.model_path);
  const nnc::Dataset ds = load_or_make_dataset(opt);

  nnc::StopRule stop;
  stop.max_iterations = opt.max_iterations;
  stop.accuracy_drop_threshold = opt.drop_threshold;

  const nnc::CompressionResult result =
      nnc::compress(model, ds, opt.k, train_config(opt), stop, !opt.no_weaken);

  ensure_out_dir(opt.out_dir);
  const std::filesystem::path out(opt.out_dir);
  nnc::save_model(result.model, (out / "compressed").string());
  {
    std::ofstream f(out / "report.json", std::ios::trunc);
    f << nnc::report_json(result, config_echo(opt, "compress"));
  }
  {
    std::ofstream f(out / "timings.json", std::ios::trunc);
    f << nnc::render_timings(result);
  }
  const std::string table = nnc::render_report(result);
  {
    std::ofstream f(out / "report.txt", std::ios::trunc);
    f << table;
  }
  if (opt.verbosity > 0) std::fputs(table.c_str(), stdout);

  if (result.diverged) return kDiverged;
  if (result.nothing_to_do) return kNothingToDo;
  return kOk;
}

int cmd_eval(const Options& opt) {
  const nnc::ModelGraph model = nnc::load_model(opt.model_path);
  const nnc::Dataset ds = load_or_make_dataset(opt);
  std::printf("accuracy %.6f\n", nnc::evaluate_accuracy(model, ds.test));
  return kOk;
}

int cmd_inspect(const Options& opt) {
  warn_weakening_band(opt);
  const nnc::ModelGraph model = nnc::load_model(opt.model_path);
  const nnc::CountReport counts = nnc::count(model, model.input_shape());

  std::vector<nnc::RankPlan> plans;
  try {
    plans = nnc::build_rank_plan(model, opt.k);
  } catch (const nnc::NothingToDo&) {
    // Plain models still get their shape and count listing.
  }
  auto plan_for = [&plans](const std::string& name) -> const nnc::RankPlan* {
    for (const auto& p : plans)
      if (p.layer_id == name) return &p;
    return nullptr;
  };

  std::printf("%-12s %-16s %10s %12s  %s\n", "layer", "type", "params", "MACs",
              "ranks (initial -> extreme -> weakened)");
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& lc = counts.per_layer[i];
    std::string rank_text = "-";
    if (const nnc::RankPlan* plan = plan_for(lc.name)) {
      rank_text.clear();
      for (const auto& [mode, initial] : plan->initial_ranks) {
        if (!rank_text.empty()) rank_text += ", ";
        const char* tag = mode == 0 ? "rank" : (mode == 3 ? "mode3" : "mode4");
        rank_text += tag;
        rank_text += " " + std::to_string(initial) + " -> " +
                     std::to_string(plan->extreme_ranks.at(mode)) + " -> " +
                     std::to_string(plan->weakened_ranks.at(mode));
      }
      if (plan->skip) rank_text += " [skip: " + plan->skip_reason + "]";
      if (plan->near_pure_noise) rank_text += " [near-pure-noise]";
    }
    std::printf("%-12s %-16s %10lld %12lld  %s\n", lc.name.c_str(), lc.type.c_str(),
                static_cast<long long>(lc.params), static_cast<long long>(lc.macs),
                rank_text.c_str());
  }
  std::printf("total params %lld, total MACs %lld (k = %.3f)\n",
              static_cast<long long>(counts.total_params),
              static_cast<long long>(counts.total_macs), opt.k);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative low-rank CNN compression toolkit"};
  app.require_subcommand(1);

  Options opt;

  auto add_common = [&](CLI::App* sub, bool needs_model) {
    if (needs_model)
      sub->add_option("--model", opt.model_path, "path to a saved model (stem or .json)")
          ->required();
    sub->add_option("--out", opt.out_dir, "output directory")->capture_default_str();
    sub->add_option("--dataset", opt.dataset_path,
                    "path to a cached dataset (overrides --dataset-seed)");
    sub->add_option("--k", opt.k, "rank weakening factor in (0,1)")
        ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)))
        ->capture_default_str();
    sub->add_option("--epochs", opt.epochs, "fine-tuning epochs per iteration")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--lr", opt.learning_rate, "SGD learning rate")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--momentum", opt.momentum, "SGD momentum")
        ->check(CLI::Range(0.0, 0.999))
        ->capture_default_str();
    sub->add_option("--batch-size", opt.batch_size, "mini-batch size")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--seed", opt.seed, "global seed")->capture_default_str();
    sub->add_option("--dataset-seed", opt.dataset_seed,
                    "dataset seed (defaults to a stream derived from --seed)")
        ->each([&](const std::string&) { opt.dataset_seed_set = true; });
    sub->add_option("-v,--verbosity", opt.verbosity, "0 = quiet, 1 = normal")
        ->capture_default_str();
  };

  CLI::App* train = app.add_subcommand("train", "train the reference CNN and save it");
  add_common(train, false);

  CLI::App* compress =
      app.add_subcommand("compress", "iteratively compress a saved model");
  add_common(compress, true);
  // Fine-tuning wants a gentler rate than from-scratch training; an explicit
  // --lr overrides this.
  CLI::Option* compress_lr = compress->get_option("--lr");
  compress->add_option("--max-iterations", opt.max_iterations, "iteration cap")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  compress->add_option("--drop-threshold", opt.drop_threshold,
                       "per-iteration accuracy drop that stops the loop")
      ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)))
      ->capture_default_str();
  compress->add_flag("--no-weaken", opt.no_weaken,
                     "decompose at the extreme ranks (one-time compression baseline)");
  compress->add_flag("--early-stop", opt.early_stop,
                     "keep fine-tuning while test error improves (up to 3x epochs)");

  CLI::App* eval = app.add_subcommand("eval", "print test accuracy of a saved model");
  add_common(eval, true);

  CLI::App* inspect =
      app.add_subcommand("inspect", "print per-layer shapes, ranks and counts");
  add_common(inspect, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(opt);
    if (compress->parsed()) {
      if (compress_lr->count() == 0) opt.learning_rate = 0.01;
      return cmd_compress(opt);
    }
    if (eval->parsed()) return cmd_eval(opt);
    return cmd_inspect(opt);
  } catch (const nnc::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kIoError;
  } catch (const nnc::UnknownVersion& e) {
    std::fprintf(stderr, "model version error: %s\n", e.what());
    return kMalformedModel;
  } catch (const nnc::ChecksumMismatch& e) {
    std::fprintf(stderr, "checksum error: %s\n", e.what());
    return kMalformedModel;
  } catch (const nnc::MalformedManifest& e) {
    std::fprintf(stderr, "malformed model: %s\n", e.what());
    return kMalformedModel;
  } catch (const nnc::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDiverged;
  } catch (const nnc::NothingToDo& e) {
    std::fprintf(stderr, "nothing to do: %s\n", e.what());
    return kNothingToDo;
  } catch (const nnc::InvalidArgument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kUsage;
  } catch (const nnc::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
