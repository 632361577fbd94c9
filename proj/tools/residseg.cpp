// Command-line driver: phantom generation, the two training phases,
// evaluation, the four-regime comparison and figure output.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "residseg/checkpoint.hpp"
#include "residseg/config.hpp"
#include "residseg/dataset.hpp"
#include "residseg/error.hpp"
#include "residseg/metrics.hpp"
#include "residseg/phantom.hpp"
#include "residseg/training.hpp"
#include "residseg/viz.hpp"

namespace fs = std::filesystem;
using namespace residseg;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kCheckpoint = 4 };

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("RESIDSEG_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("RESIDSEG_SEED is not an unsigned integer: '") + v + "'");
  return s;
}

// flag > environment > config file
RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (auto s = c.seed ? c.seed : env_seed()) cfg.set_seed(*s);
  cfg.validate();
  return cfg;
}

EpochCallback progress(const Common& c, const std::string& tag) {
  if (c.quiet) return {};
  return [tag](const std::string& phase, const EpochRecord& r) {
    std::fprintf(stderr, "[%s] %s epoch %d loss %.6f", tag.c_str(), phase.c_str(), r.epoch, r.train_loss);
    if (r.test_dice) std::fprintf(stderr, " dice %.4f", *r.test_dice);
    std::fprintf(stderr, "\n");
  };
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text)) throw Error("cannot write " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create directory " + dir.string());
}

std::uint64_t checkpoint_fingerprint(const fs::path& path) { return config_fingerprint(read_checkpoint_config(path)); }

int cmd_phantom(const Common& c, PhantomSpec spec) {
  if (auto s = c.seed ? c.seed : env_seed()) spec.seed = *s;
  spec.validate();
  const Dataset ds = generate_corpus(spec);
  save_dataset(ds, c.out);
  std::map<std::string, int> per_class;
  double area_sum = 0.0;
  int masked = 0;
  for (const auto& s : ds.samples) {
    ++per_class[to_string(s.acr)];
    if (s.has_mask()) {
      area_sum += static_cast<double>(count_set(s.lesion_mask())) / static_cast<double>(s.image.size());
      ++masked;
    }
  }
  std::printf("wrote %zu samples to %s\n", ds.size(), c.out.c_str());
  for (const auto& [acr, n] : per_class) std::printf("  %s: %d\n", acr.c_str(), n);
  if (masked) std::printf("  mean lesion area: %.4f of image\n", area_sum / masked);
  return kOk;
}

int cmd_pretrain(const Common& c) {
  RunConfig cfg = resolve_config(c);
  const Dataset corpus = load_dataset(c.data);
  const Dataset benign = filter_by_acr(corpus, kBenignClasses, "pretrain");
  make_dir(c.out);
  if (cfg.pretrain.checkpoint_dir.empty()) cfg.pretrain.checkpoint_dir = c.out;
  UNet<float> model(cfg.unet, init_seed(cfg.pretrain.seed));
  const PhaseResult r = pretrain(model, benign, cfg.pretrain, progress(c, "pretrain"));
  save_run_config(cfg, fs::path(c.out) / "run.cfg");
  RegimeReport report;
  report.regime = {Head::kSupervised, Init::kScratch};
  report.config_fingerprint = config_fingerprint(cfg.unet);
  report.seconds = r.seconds;
  report.train = r;
  write_text(fs::path(c.out) / "report.json", report.to_json());
  const auto& last = r.history.records().back();
  std::printf("pretrain: %d epochs, final loss %.6f, best epoch %d\n", last.epoch, last.train_loss, r.best_epoch);
  std::printf("best checkpoint %s (fingerprint %s)\n",
              (fs::path(cfg.pretrain.checkpoint_dir) / "pretrain_best.ckpt").c_str(),
              hex64(config_fingerprint(cfg.unet)).c_str());
  return kOk;
}

int cmd_train(const Common& c, const std::string& head_name, const std::vector<std::string>& init) {
  RunConfig cfg = resolve_config(c);
  const Head head = parse_head(head_name);
  std::string init_path;
  if (init.empty() || init[0] == "scratch") {
    if (init.size() > 1) throw ConfigError("--init scratch takes no path");
  } else if (init[0] == "checkpoint") {
    if (init.size() != 2) throw ConfigError("--init checkpoint requires a PATH");
    init_path = init[1];
  } else {
    throw ConfigError("--init must be 'scratch' or 'checkpoint PATH'");
  }
  const RegimeData data = prepare_regime_data(load_dataset(c.data), cfg.eval.train_frac, cfg.eval.split_seed);
  make_dir(c.out);
  if (cfg.train.checkpoint_dir.empty()) cfg.train.checkpoint_dir = c.out;
  UNet<float> model(cfg.unet, init_seed(cfg.train.seed));
  RegimeReport report;
  report.regime = {head, init_path.empty() ? Init::kScratch : Init::kPretrained};
  if (!init_path.empty()) {
    load_checkpoint_into(model, init_path);
    report.init_checkpoint = init_path;
    report.init_checkpoint_hash = file_hash(init_path);
    report.init_checkpoint_fingerprint = hex64(checkpoint_fingerprint(init_path));
  }
  report.train = train_segmentation(model, head, data.train, data.test, cfg.train, !init_path.empty(),
                                    progress(c, report.regime.label()));
  report.dice_avg_window = std::min<int>(cfg.eval.dice_avg_window, report.train.history.dice_values().size());
  report.dice_max = dice_max(report.train.history);
  report.dice_avg = dice_avg_last(report.train.history, report.dice_avg_window);
  report.seconds = report.train.seconds;
  report.config_fingerprint = config_fingerprint(cfg.unet);
  report.test_id_hash = id_set_hash(data.test.id_set());
  save_run_config(cfg, fs::path(c.out) / "run.cfg");
  write_text(fs::path(c.out) / "report.json", report.to_json());
  std::printf("%s: DICE_max %.4f, DICE_avg(last %d) %.4f\n", report.regime.label().c_str(), report.dice_max,
              report.dice_avg_window, report.dice_avg);
  if (!init_path.empty()) std::printf("init checkpoint fingerprint %s\n", report.init_checkpoint_fingerprint.c_str());
  std::printf("model fingerprint %s\n", hex64(report.config_fingerprint).c_str());
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& head_name, double threshold,
             const std::string& csv_path) {
  const Head head = parse_head(head_name);
  ResidualMode mode = ResidualMode::kClamp;
  if (!c.config.empty()) {
    const RunConfig cfg = resolve_config(c);
    mode = cfg.train.residual_mode;
    if (threshold <= 0.0) threshold = cfg.train.threshold;
  }
  if (threshold <= 0.0) threshold = 0.5;
  if (!(threshold < 1.0)) throw ConfigError("--threshold must lie in (0, 1)");
  UNet<float> model = load_checkpoint(checkpoint);
  const Dataset malignant = filter_by_acr(load_dataset(c.data), kMalignantClasses, "eval");
  const auto scores = evaluate(forward_of(model), malignant, head, threshold, mode);
  std::string csv = "id,dice\n";
  std::vector<double> values;
  char line[256];
  for (const auto& s : scores) {
    std::snprintf(line, sizeof line, "%s,%.17g\n", s.id.c_str(), s.dice);
    csv += line;
    std::printf("%-24s %.6f\n", s.id.c_str(), s.dice);
    values.push_back(s.dice);
  }
  const double mean = mean_dice(values);
  std::snprintf(line, sizeof line, "mean,%.17g\n", mean);
  csv += line;
  std::printf("%-24s %.6f\n", "mean", mean);
  if (!csv_path.empty()) write_text(csv_path, csv);
  return kOk;
}

int cmd_compare(const Common& c) {
  RunConfig cfg = resolve_config(c);
  const Dataset corpus = c.data.empty() ? generate_corpus(cfg.data) : load_dataset(c.data);
  const RegimeData data = prepare_regime_data(corpus, cfg.eval.train_frac, cfg.eval.split_seed);
  check_disjoint(data);
  make_dir(c.out);
  save_run_config(cfg, fs::path(c.out) / "run.cfg");

  std::optional<PretrainOutcome> pre;
  std::vector<RegimeReport> reports;
  for (const Regime& regime : kRegimes) {
    const fs::path dir = fs::path(c.out) / regime.label();
    make_dir(dir);
    TrainConfig pcfg = cfg.pretrain;
    TrainConfig tcfg = cfg.train;
    pcfg.checkpoint_dir = (fs::path(c.out) / "pretrain").string();
    tcfg.checkpoint_dir = dir.string();
    if (regime.init == Init::kPretrained && !pre) {
      make_dir(pcfg.checkpoint_dir);
      pre = run_pretrain(data, cfg.unet, pcfg, progress(c, "pretrain"));
    }
    RegimeOptions options;
    options.dice_avg_window = cfg.eval.dice_avg_window;
    options.cached_pretrain = pre ? &*pre : nullptr;
    options.on_epoch = progress(c, regime.label());
    try {
      reports.push_back(run_regime(regime, data, cfg.unet, pcfg, tcfg, options));
    } catch (const Error& e) {
      std::fprintf(stderr, "regime %s failed\n", regime.label().c_str());
      throw;
    }
    write_text(dir / "report.json", reports.back().to_json());
  }

  std::string csv = "method,regime,dice_max,dice_avg_last" + std::to_string(cfg.eval.dice_avg_window) + "\n";
  std::printf("%-40s %9s %18s\n", "Method", "DICE_Max", ("DICE_Avg(last " + std::to_string(cfg.eval.dice_avg_window) + ")").c_str());
  char line[256];
  for (const auto& r : reports) {
    std::printf("%-40s %9.4f %18.4f\n", r.regime.method().c_str(), r.dice_max, r.dice_avg);
    std::snprintf(line, sizeof line, "%s,%s,%.17g,%.17g\n", r.regime.method().c_str(), r.regime.label().c_str(),
                  r.dice_max, r.dice_avg);
    csv += line;
  }
  write_text(fs::path(c.out) / "compare.csv", csv);
  return kOk;
}

int cmd_viz(const Common& c, const std::string& checkpoint, const std::string& head_name, int n) {
  const Head head = parse_head(head_name);
  if (n < 1) throw ConfigError("--n must be >= 1");
  UNet<float> model = load_checkpoint(checkpoint);
  Dataset malignant = filter_by_acr(load_dataset(c.data), kMalignantClasses, "viz");
  if (static_cast<int>(malignant.size()) > n) malignant.samples.resize(n);
  const Rendered r = render_outputs(forward_of(model), malignant, head, ResidualMode::kClamp);
  std::vector<Image2D> inputs;
  std::vector<BinaryMask> masks;
  for (const auto& s : malignant.samples) {
    inputs.push_back(s.image);
    masks.push_back(s.lesion_mask());
  }
  write_pgm(c.out, triptych(inputs, head == Head::kDiscriminative ? r.prediction : r.output, masks));
  std::printf("wrote %s (%zu samples)\n", c.out.c_str(), inputs.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstruction-pretrained residual segmentation pipeline"};
  app.require_subcommand(1);
  Common common;
  std::function<int()> run;

  auto add_common = [&](CLI::App* sub, bool needs_data, bool needs_config) {
    if (needs_config) sub->add_option("-c,--config", common.config, "run configuration file");
    if (needs_data) sub->add_option("-d,--data", common.data, "dataset directory")->required();
    sub->add_option("--seed", common.seed, "overrides every seed (precedence over RESIDSEG_SEED and config)");
    sub->add_flag("-q,--quiet", common.quiet, "no per-epoch progress");
  };

  PhantomSpec spec;
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset directory");
  phantom->add_option("-o,--out", common.out, "output directory")->required();
  phantom->add_option("--size", spec.size, "image side (power of two)");
  phantom->add_option("--benign", spec.n_benign, "number of ACR1/ACR2 phantoms");
  phantom->add_option("--malignant", spec.n_malignant, "number of ACR4-6 phantoms");
  add_common(phantom, false, false);
  phantom->callback([&] { run = [&] { return cmd_phantom(common, spec); }; });

  auto* pre = app.add_subcommand("pretrain", "reconstruction pretraining on benign samples");
  pre->add_option("-o,--out", common.out, "output directory")->required();
  add_common(pre, true, true);
  pre->callback([&] { run = [&] { return cmd_pretrain(common); }; });

  std::string head = "discriminative";
  std::vector<std::string> init;
  auto* train = app.add_subcommand("train", "segmentation training on malignant samples");
  train->add_option("-o,--out", common.out, "output directory")->required();
  train->add_option("--head", head, "supervised or discriminative");
  train->add_option("--init", init, "'scratch' or 'checkpoint PATH'")->expected(1, 2);
  add_common(train, true, true);
  train->callback([&] { run = [&] { return cmd_train(common, head, init); }; });

  std::string checkpoint, csv;
  double threshold = 0.0;
  auto* eval = app.add_subcommand("eval", "per-image and mean DICE of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--head", head, "supervised or discriminative");
  eval->add_option("--threshold", threshold, "binarization threshold (default 0.5)");
  eval->add_option("--csv", csv, "write per-image scores here");
  add_common(eval, true, true);
  eval->callback([&] { run = [&] { return cmd_eval(common, checkpoint, head, threshold, csv); }; });

  auto* compare = app.add_subcommand("compare", "run the four regimes on one split");
  compare->add_option("-o,--out", common.out, "output directory")->required();
  compare->add_option("-c,--config", common.config, "run configuration file");
  compare->add_option("-d,--data", common.data, "dataset directory (default: generate from [data])");
  compare->add_option("--seed", common.seed, "overrides every seed (precedence over RESIDSEG_SEED and config)");
  compare->add_flag("-q,--quiet", common.quiet, "no per-epoch progress");
  compare->callback([&] { run = [&] { return cmd_compare(common); }; });

  int n = 4;
  auto* viz = app.add_subcommand("viz", "input / output / mask grid as a PGM image");
  viz->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  viz->add_option("--head", head, "supervised or discriminative");
  viz->add_option("--n", n, "number of samples");
  viz->add_option("-o,--out", common.out, "output image path")->required();
  add_common(viz, true, false);
  viz->callback([&] { run = [&] { return cmd_viz(common, checkpoint, head, n); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  try {
    return run();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kCheckpoint;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
}
