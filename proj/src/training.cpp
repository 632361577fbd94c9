#include "residseg/training.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include <json.hpp>

#include "residseg/checkpoint.hpp"
#include "residseg/config.hpp"
#include "residseg/error.hpp"
#include "residseg/nn/ops.hpp"
#include "residseg/nn/optim.hpp"
#include "residseg/phantom.hpp"
#include "residseg/seed.hpp"
#include "residseg/transforms.hpp"

namespace residseg {

namespace fs = std::filesystem;

std::string to_string(Head head) { return head == Head::kSupervised ? "supervised" : "discriminative"; }
std::string to_string(Init init) { return init == Init::kScratch ? "scratch" : "pretrained"; }

Head parse_head(const std::string& text) {
  if (text == "supervised") return Head::kSupervised;
  if (text == "discriminative") return Head::kDiscriminative;
  throw ConfigError("unknown head '" + text + "' (expected supervised or discriminative)");
}

std::string Regime::label() const { return to_string(head) + "-" + to_string(init); }

std::string Regime::method() const {
  if (head == Head::kSupervised) {
    return init == Init::kScratch ? "Fully supervised (scratch) (baseline)" : "Fully supervised (pretrained)";
  }
  return init == Init::kScratch ? "Discriminative (scratch)" : "Discriminative (pretrained)";
}

template <typename T>
nn::Var subtraction_head(nn::Tape<T>& tape, nn::Var input, nn::Var output, ResidualMode mode) {
  nn::Var diff = nn::sub(tape, input, output);
  return mode == ResidualMode::kClamp ? nn::clamp(tape, diff, 0.0, 1.0) : diff;
}

template <typename T>
nn::Var segment(nn::Tape<T>& tape, const ForwardFn<T>& backbone, nn::Var input, Head head, ResidualMode mode) {
  nn::Var out = backbone(tape, input);
  return head == Head::kSupervised ? out : subtraction_head(tape, input, out, mode);
}

template <typename T>
nn::Var segmentation_loss(nn::Tape<T>& tape, nn::Var pred, nn::Var target, const TrainConfig& cfg) {
  nn::Var dice = nn::scale(tape, nn::soft_dice_loss(tape, pred, target, 1.0), cfg.dice_weight);
  nn::Var bce = nn::scale(tape, nn::bce_loss(tape, pred, target), cfg.bce_weight);
  return nn::add(tape, dice, bce);
}

#define RESIDSEG_INSTANTIATE(T)                                                                             \
  template nn::Var subtraction_head<T>(nn::Tape<T>&, nn::Var, nn::Var, ResidualMode);                       \
  template nn::Var segment<T>(nn::Tape<T>&, const ForwardFn<T>&, nn::Var, Head, ResidualMode);              \
  template nn::Var segmentation_loss<T>(nn::Tape<T>&, nn::Var, nn::Var, const TrainConfig&);
RESIDSEG_INSTANTIATE(float)
RESIDSEG_INSTANTIATE(double)
#undef RESIDSEG_INSTANTIATE

nn::Tensor4<float> to_batch(const std::vector<const Image2D*>& images) {
  if (images.empty()) throw Error("to_batch: no images");
  const int h = images.front()->height;
  const int w = images.front()->width;
  nn::Tensor4<float> t({static_cast<int>(images.size()), 1, h, w});
  for (std::size_t i = 0; i < images.size(); ++i) {
    require_same_size(*images.front(), *images[i], "to_batch");
    std::copy(images[i]->data.begin(), images[i]->data.end(), t.data() + i * images[i]->size());
  }
  return t;
}

nn::Tensor4<float> to_batch(const std::vector<BinaryMask>& masks) {
  if (masks.empty()) throw Error("to_batch: no masks");
  nn::Tensor4<float> t({static_cast<int>(masks.size()), 1, masks.front().height, masks.front().width});
  for (std::size_t i = 0; i < masks.size(); ++i) {
    require_same_size(masks.front(), masks[i], "to_batch");
    for (std::size_t j = 0; j < masks[i].size(); ++j) t.data()[i * masks[i].size() + j] = masks[i].data[j] ? 1.0f : 0.0f;
  }
  return t;
}

Image2D plane_image(const nn::Tensor4<float>& t, int n) {
  const auto s = t.shape();
  Image2D out(s.h, s.w);
  const float* p = t.data() + static_cast<std::size_t>(n) * s.c * s.h * s.w;
  std::copy(p, p + out.size(), out.data.begin());
  return out;
}

namespace {

constexpr std::uint64_t kStreamTag = 0x5354524d;   // per-epoch sample order
constexpr std::uint64_t kCorruptTag = 0x434f5252;  // per-(epoch, sample) corruption
constexpr std::uint64_t kInitTag = 0x494e4954;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void require_segmentation_data(const Dataset& ds, const std::string& phase) {
  if (ds.empty()) throw DataError(DataError::Kind::kEmpty, phase + ": no malignant samples");
  for (const auto& s : ds.samples) {
    if (!is_malignant(s.acr)) {
      throw DataError(DataError::Kind::kWrongPhase,
                      phase + ": sample " + s.id + " is " + to_string(s.acr) + "; segmentation uses ACR4-6 only");
    }
    if (!s.has_mask()) throw DataError(DataError::Kind::kMissingMask, phase + ": sample " + s.id + " has no mask");
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {kStreamTag, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::uint64_t stream_step(std::uint64_t h, int epoch, const std::string& id) {
  return fnv1a(std::to_string(epoch) + ":" + id + ";", h);
}

std::vector<nn::Tensor4<float>> snapshot(const UNet<float>& model) {
  std::vector<nn::Tensor4<float>> out;
  for (const auto& p : model.parameters()) out.push_back(p.value);
  return out;
}

// One optimizer step; returns the batch loss.
template <typename LossFn>
double train_step(UNet<float>& model, nn::Adam<float>& opt, LossFn&& loss_of) {
  model.parameters().zero_grad();
  nn::Tape<float> tape;
  nn::Var loss = loss_of(tape);
  const double value = tape.value(loss)[0];
  tape.backward(loss);
  opt.step(model.parameters());
  return value;
}

void write_phase_files(const TrainConfig& cfg, const std::string& phase, const UNet<float>& model, bool best) {
  if (cfg.checkpoint_dir.empty()) return;
  save_checkpoint(model, fs::path(cfg.checkpoint_dir) / (phase + (best ? "_best.ckpt" : "_final.ckpt")));
}

void finish_phase(PhaseResult& r, UNet<float>& model, const TrainConfig& cfg) {
  r.final_hash = weights_hash(model);
  write_phase_files(cfg, r.phase, model, false);
  if (!cfg.checkpoint_dir.empty()) r.history.write_csv(fs::path(cfg.checkpoint_dir) / (r.phase + "_history.csv"));
}

}  // namespace

std::uint64_t init_seed(std::uint64_t phase_seed) { return derive_seed(phase_seed, {kInitTag}); }

std::uint64_t weights_hash(const UNet<float>& model) { return fnv1a(serialize_checkpoint(model)); }

void set_parameters(UNet<float>& model, const std::vector<nn::Tensor4<float>>& values) {
  if (values.size() != model.parameters().size()) throw Error("set_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    nn::require_same_shape(model.parameters()[i].value.shape(), values[i].shape(), "set_parameters");
    model.parameters()[i].value = values[i];
  }
}

std::vector<ImageDice> evaluate(const ForwardFn<float>& backbone, const Dataset& malignant, Head head,
                                double threshold, ResidualMode mode, int batch) {
  require_segmentation_data(malignant, "eval");
  std::vector<ImageDice> out;
  for (std::size_t start = 0; start < malignant.size(); start += batch) {
    const std::size_t end = std::min(malignant.size(), start + batch);
    std::vector<const Image2D*> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(&malignant.samples[i].image);
    nn::Tape<float> tape(false);
    const auto& pred = tape.value(segment(tape, backbone, tape.constant(to_batch(images)), head, mode));
    for (std::size_t i = start; i < end; ++i) {
      const auto& s = malignant.samples[i];
      out.push_back({s.id, dice(binarize(plane_image(pred, static_cast<int>(i - start)), threshold), s.lesion_mask())});
    }
  }
  return out;
}

Rendered render_outputs(const ForwardFn<float>& backbone, const Dataset& ds, Head head, ResidualMode mode) {
  Rendered r;
  for (const auto& s : ds.samples) {
    nn::Tape<float> tape(false);
    nn::Var in = tape.constant(to_batch({&s.image}));
    nn::Var out = backbone(tape, in);
    nn::Var pred = head == Head::kSupervised ? out : subtraction_head(tape, in, out, mode);
    r.output.push_back(plane_image(tape.value(out), 0));
    r.prediction.push_back(plane_image(tape.value(pred), 0));
  }
  return r;
}

PhaseResult pretrain(UNet<float>& model, const Dataset& benign, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (benign.empty()) throw DataError(DataError::Kind::kEmpty, "pretrain: no benign samples");
  for (const auto& s : benign.samples) {
    if (!is_benign(s.acr) || s.has_mask()) {
      throw DataError(DataError::Kind::kWrongPhase,
                      "pretrain: sample " + s.id + " is " + to_string(s.acr) + "; pretraining uses ACR1-2 only");
    }
  }
  const auto t0 = Clock::now();
  PhaseResult r;
  r.phase = "pretrain";
  r.learning_rate = cfg.learning_rate;
  r.init_hash = weights_hash(model);
  r.stream_hash = fnv1a("stream");
  std::vector<ShapeMask> foreground;
  std::vector<std::uint64_t> id_hash;
  for (const auto& s : benign.samples) {
    foreground.push_back(foreground_mask(s.image));
    id_hash.push_back(fnv1a(s.id));
    r.train_ids.insert(s.id);
  }
  nn::Adam<float> opt({cfg.learning_rate});
  double best_loss = 0.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(benign.size(), cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Image2D> corrupted, original;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        auto c = corrupt(benign.samples[i].image, foreground[i], cfg.policy,
                         derive_seed(cfg.seed, {kCorruptTag, static_cast<std::uint64_t>(epoch), id_hash[i]}));
        corrupted.push_back(std::move(c.corrupted));
        original.push_back(std::move(c.original));
        r.stream_hash = stream_step(r.stream_hash, epoch, benign.samples[i].id);
      }
      std::vector<const Image2D*> cin, oin;
      for (std::size_t k = 0; k < corrupted.size(); ++k) {
        cin.push_back(&corrupted[k]);
        oin.push_back(&original[k]);
      }
      const auto x = to_batch(cin);
      const auto y = to_batch(oin);
      total += static_cast<double>(end - start) * train_step(model, opt, [&](nn::Tape<float>& tape) {
        return nn::mse_loss(tape, model.forward(tape, tape.constant(x)), tape.constant(y));
      });
    }
    EpochRecord rec{epoch, total / static_cast<double>(benign.size()), std::nullopt};
    r.history.add(rec);
    if (epoch == 1 || rec.train_loss < best_loss) {
      best_loss = rec.train_loss;
      r.best_epoch = epoch;
      r.best_parameters = snapshot(model);
      r.best_hash = weights_hash(model);
      write_phase_files(cfg, r.phase, model, true);
    }
    if (on_epoch) on_epoch(r.phase, rec);
  }
  finish_phase(r, model, cfg);
  r.seconds = seconds_since(t0);
  return r;
}

PhaseResult train_segmentation(UNet<float>& model, Head head, const Dataset& train, const Dataset& test,
                               const TrainConfig& cfg, bool finetune, const EpochCallback& on_epoch) {
  cfg.validate();
  require_segmentation_data(train, "train");
  require_segmentation_data(test, "test");
  const auto t0 = Clock::now();
  PhaseResult r;
  r.phase = "train";
  r.learning_rate = finetune ? cfg.lr_finetune : cfg.learning_rate;
  r.init_hash = weights_hash(model);
  r.stream_hash = fnv1a("stream");
  r.train_ids = train.id_set();
  r.eval_ids = test.id_set();
  std::vector<BinaryMask> masks;
  for (const auto& s : train.samples) masks.push_back(s.lesion_mask());
  const ForwardFn<float> backbone = forward_of(model);
  nn::Adam<float> opt({r.learning_rate});
  double best_dice = -1.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Image2D*> images;
      std::vector<BinaryMask> targets;
      for (std::size_t k = start; k < end; ++k) {
        images.push_back(&train.samples[order[k]].image);
        targets.push_back(masks[order[k]]);
        r.stream_hash = stream_step(r.stream_hash, epoch, train.samples[order[k]].id);
      }
      const auto x = to_batch(images);
      const auto m = to_batch(targets);
      total += static_cast<double>(end - start) * train_step(model, opt, [&](nn::Tape<float>& tape) {
        nn::Var pred = segment(tape, backbone, tape.constant(x), head, cfg.residual_mode);
        return segmentation_loss(tape, pred, tape.constant(m), cfg);
      });
    }
    EpochRecord rec{epoch, total / static_cast<double>(train.size()), std::nullopt};
    if (epoch % cfg.eval_every == 0) {
      std::vector<double> scores;
      for (const auto& d : evaluate(backbone, test, head, cfg.threshold, cfg.residual_mode)) scores.push_back(d.dice);
      rec.test_dice = mean_dice(scores);
      if (*rec.test_dice > best_dice) {
        best_dice = *rec.test_dice;
        r.best_epoch = epoch;
        r.best_parameters = snapshot(model);
        r.best_hash = weights_hash(model);
        write_phase_files(cfg, r.phase, model, true);
      }
    }
    r.history.add(rec);
    if (on_epoch) on_epoch(r.phase, rec);
  }
  finish_phase(r, model, cfg);
  r.seconds = seconds_since(t0);
  return r;
}

RegimeData prepare_regime_data(const Dataset& corpus, double train_frac, std::uint64_t split_seed) {
  RegimeData d;
  d.benign = filter_by_acr(corpus, kBenignClasses, "pretrain");
  auto [train, test] = split(filter_by_acr(corpus, kMalignantClasses, "train"), train_frac, split_seed);
  d.train = std::move(train);
  d.test = std::move(test);
  return d;
}

void check_disjoint(const RegimeData& data) {
  const auto b = data.benign.id_set();
  const auto tr = data.train.id_set();
  const auto te = data.test.id_set();
  auto check = [](const std::set<std::string>& x, const std::set<std::string>& y, const char* what) {
    for (const auto& id : x) {
      if (y.count(id)) throw DataError(DataError::Kind::kMalformed, std::string(what) + " share sample id '" + id + "'");
    }
  };
  check(b, tr, "pretrain and train sets");
  check(b, te, "pretrain and test sets");
  check(tr, te, "train and test sets");
}

PretrainOutcome run_pretrain(const RegimeData& data, const UNetConfig& ucfg, const TrainConfig& pretrain_cfg,
                             const EpochCallback& on_epoch) {
  UNet<float> model(ucfg, init_seed(pretrain_cfg.seed));
  try {
    return {pretrain(model, data.benign, pretrain_cfg, on_epoch), ucfg};
  } catch (const DataError& e) {
    throw DataError(e.kind(), std::string("pretrain phase: ") + e.what());
  }
}

RegimeReport run_regime(const Regime& regime, const RegimeData& data, const UNetConfig& ucfg,
                        const TrainConfig& pretrain_cfg, const TrainConfig& train_cfg, const RegimeOptions& options) {
  check_disjoint(data);
  RegimeReport report;
  report.regime = regime;
  report.dice_avg_window = options.dice_avg_window;
  report.config_fingerprint = config_fingerprint(ucfg);
  report.test_id_hash = id_set_hash(data.test.id_set());
  UNet<float> model(ucfg, init_seed(train_cfg.seed));
  if (regime.init == Init::kPretrained) {
    std::optional<PretrainOutcome> fresh;
    const PretrainOutcome* pre = options.cached_pretrain;
    if (!pre || !(pre->config == ucfg)) {
      fresh = run_pretrain(data, ucfg, pretrain_cfg, options.on_epoch);
      pre = &*fresh;
    }
    set_parameters(model, pre->result.best_parameters);
    report.pretrain = pre->result;
    report.pretrain->best_parameters.clear();
  }
  try {
    report.train = train_segmentation(model, regime.head, data.train, data.test, train_cfg,
                                      regime.init == Init::kPretrained, options.on_epoch);
  } catch (const DataError& e) {
    throw DataError(e.kind(), regime.label() + " train phase: " + e.what());
  }
  report.dice_max = dice_max(report.train.history);
  report.dice_avg = dice_avg_last(report.train.history, options.dice_avg_window);
  report.seconds = report.train.seconds + (report.pretrain ? report.pretrain->seconds : 0.0);
  return report;
}

namespace {

nlohmann::ordered_json phase_json(const PhaseResult& r) {
  nlohmann::ordered_json j;
  j["phase"] = r.phase;
  j["learning_rate"] = r.learning_rate;
  j["epochs"] = r.history.size();
  j["best_epoch"] = r.best_epoch;
  j["init_hash"] = hex64(r.init_hash);
  j["best_hash"] = hex64(r.best_hash);
  j["final_hash"] = hex64(r.final_hash);
  j["stream_hash"] = hex64(r.stream_hash);
  j["train_ids"] = r.train_ids.size();
  j["train_id_hash"] = hex64(id_set_hash(r.train_ids));
  j["eval_ids"] = r.eval_ids.size();
  j["eval_id_hash"] = hex64(id_set_hash(r.eval_ids));
  j["seconds"] = r.seconds;
  auto& h = j["history"] = nlohmann::ordered_json::array();
  for (const auto& rec : r.history.records()) {
    nlohmann::ordered_json e;
    e["epoch"] = rec.epoch;
    e["train_loss"] = rec.train_loss;
    e["test_dice"] = rec.test_dice ? nlohmann::ordered_json(*rec.test_dice) : nlohmann::ordered_json(nullptr);
    h.push_back(e);
  }
  return j;
}

}  // namespace

std::string RegimeReport::to_json() const {
  nlohmann::ordered_json j;
  j["regime"] = regime.label();
  j["method"] = regime.method();
  j["head"] = to_string(regime.head);
  j["init"] = to_string(regime.init);
  j["dice_max"] = dice_max;
  j["dice_avg"] = dice_avg;
  j["dice_avg_window"] = dice_avg_window;
  j["config_fingerprint"] = hex64(config_fingerprint);
  j["test_id_hash"] = hex64(test_id_hash);
  j["seconds"] = seconds;
  if (!init_checkpoint.empty()) {
    j["init_checkpoint"] = init_checkpoint;
    j["init_checkpoint_hash"] = hex64(init_checkpoint_hash);
    j["init_checkpoint_fingerprint"] = init_checkpoint_fingerprint;
  }
  j["pretrain"] = pretrain ? phase_json(*pretrain) : nlohmann::ordered_json(nullptr);
  j["train"] = phase_json(train);
  return j.dump(2) + "\n";
}

}  // namespace residseg
