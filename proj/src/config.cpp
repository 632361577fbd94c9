#include "residseg/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "residseg/error.hpp"
#include "residseg/seed.hpp"

namespace residseg {

std::string to_string(ResidualMode mode) { return mode == ResidualMode::kClamp ? "clamp" : "signed"; }

ResidualMode parse_residual_mode(const std::string& text) {
  if (text == "clamp") return ResidualMode::kClamp;
  if (text == "signed") return ResidualMode::kSigned;
  throw ConfigError("unknown residual mode '" + text + "' (expected clamp or signed)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !(lr_finetune >= 0.0)) throw ConfigError("learning rates must be >= 0");
  if (!(dice_weight >= 0.0 && bce_weight >= 0.0) || dice_weight + bce_weight == 0.0) {
    throw ConfigError("loss_weights must be >= 0 and not both zero");
  }
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0, 1)");
  policy.validate();
}

void EvalConfig::validate() const {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("eval.train_frac must lie in (0, 1)");
  if (dice_avg_window < 1) throw ConfigError("eval.dice_avg_window must be >= 1");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end) throw ConfigError("'" + s + "' is not a valid number");
  return v;
}

std::string fmt_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string fmt(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return fmt_real(v);
  } else {
    return std::to_string(v);
  }
}

template <typename T>
std::pair<T, T> parse_pair(const std::string& s) {
  const auto items = split_list(s);
  if (items.size() != 2) throw ConfigError("'" + s + "' is not a pair 'lo, hi'");
  return {parse_number<T>(items[0]), parse_number<T>(items[1])};
}

struct Field {
  std::string key;
  std::function<std::string()> emit;
  std::function<void(const std::string&)> parse;
};

template <typename T>
Field number(const std::string& key, T& ref) {
  return {key, [&ref] { return fmt(ref); }, [&ref](const std::string& s) { ref = parse_number<T>(s); }};
}

template <typename T>
Field pair(const std::string& key, std::pair<T, T>& ref) {
  return {key, [&ref] { return fmt(ref.first) + ", " + fmt(ref.second); },
          [&ref](const std::string& s) { ref = parse_pair<T>(s); }};
}

std::vector<Field> data_fields(PhantomSpec& d) {
  return {number("size", d.size),
          number("n_benign", d.n_benign),
          number("n_malignant", d.n_malignant),
          pair("mass_count_range", d.mass_count_range),
          pair("calc_count_range", d.calc_count_range),
          pair("mass_radius_frac", d.mass_radius_frac),
          pair("calc_radius_frac", d.calc_radius_frac),
          number("tissue_texture_scale", d.tissue_texture_scale),
          number("seed", d.seed)};
}

std::vector<Field> unet_fields(UNetConfig& u) {
  return {number("depth", u.depth),
          number("base_channels", u.base_channels),
          number("channel_cap", u.channel_cap),
          number("input_size", u.input_size),
          number("keep_long_skip_from_level", u.keep_long_skip_from_level),
          number("leaky_slope", u.leaky_slope),
          number("norm_eps", u.norm_eps),
          {"final_activation", [&u] { return std::string(u.final_activation == FinalActivation::kSigmoid ? "sigmoid" : "linear"); },
           [&u](const std::string& s) {
             if (s == "sigmoid") u.final_activation = FinalActivation::kSigmoid;
             else if (s == "linear") u.final_activation = FinalActivation::kLinear;
             else throw ConfigError("unknown final_activation '" + s + "' (expected sigmoid or linear)");
           }}};
}

std::vector<Field> train_fields(TrainConfig& t, bool with_policy) {
  std::vector<Field> f = {
      number("epochs", t.epochs),
      number("batch_size", t.batch_size),
      number("learning_rate", t.learning_rate),
      number("lr_finetune", t.lr_finetune),
      number("seed", t.seed),
      {"loss_weights", [&t] { return fmt_real(t.dice_weight) + ", " + fmt_real(t.bce_weight); },
       [&t](const std::string& s) { std::tie(t.dice_weight, t.bce_weight) = parse_pair<double>(s); }},
      number("eval_every", t.eval_every),
      number("threshold", t.threshold),
      {"checkpoint_dir", [&t] { return t.checkpoint_dir; }, [&t](const std::string& s) { t.checkpoint_dir = s; }},
      {"residual_mode", [&t] { return to_string(t.residual_mode); },
       [&t](const std::string& s) { t.residual_mode = parse_residual_mode(s); }},
  };
  if (!with_policy) return f;
  CorruptionPolicy& p = t.policy;
  std::vector<Field> policy = {
      number("gamma_prob", p.gamma_prob),
      pair("gamma_log_range", p.gamma_log_range),
      number("inpaint_prob", p.inpaint_prob),
      pair("inpaint_regions", p.inpaint_regions),
      pair("inpaint_area_frac", p.inpaint_area_frac),
      {"inpaint_shapes",
       [&p] {
         std::string out;
         for (auto k : p.inpaint_shapes) out += (out.empty() ? "" : ", ") + to_string(k);
         return out;
       },
       [&p](const std::string& s) {
         p.inpaint_shapes.clear();
         if (trim(s).empty()) return;
         for (const auto& item : split_list(s)) {
           try {
             p.inpaint_shapes.push_back(parse_shape_kind(item));
           } catch (const std::exception& e) {
             throw ConfigError(e.what());
           }
         }
       }},
      {"inpaint_fill", [&p] { return to_string(p.inpaint_fill); },
       [&p](const std::string& s) {
         try {
           p.inpaint_fill = parse_fill_mode(s);
         } catch (const std::exception& e) {
           throw ConfigError(e.what());
         }
       }},
      number("outpaint_prob", p.outpaint_prob),
      pair("outpaint_keep_frac", p.outpaint_keep_frac),
  };
  f.insert(f.end(), policy.begin(), policy.end());
  return f;
}

std::vector<Field> eval_fields(EvalConfig& e) {
  return {number("train_frac", e.train_frac), number("split_seed", e.split_seed),
          number("dice_avg_window", e.dice_avg_window)};
}

std::string emit_section(const std::string& name, const std::vector<Field>& fields) {
  std::string out = "[" + name + "]\n";
  for (const auto& f : fields) out += f.key + " = " + f.emit() + "\n";
  return out;
}

void apply_section(const IniDocument::Section& section, const std::vector<Field>& fields) {
  for (const auto& e : section.entries) {
    const Field* field = nullptr;
    for (const auto& f : fields) {
      if (f.key == e.key) field = &f;
    }
    if (!field) {
      throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + e.key + "' in [" + section.name + "]");
    }
    try {
      field->parse(e.value);
    } catch (const ConfigError& err) {
      throw ConfigError("line " + std::to_string(e.line) + ": " + section.name + "." + e.key + ": " + err.what());
    }
  }
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text) {
  IniDocument doc;
  std::istringstream is(text);
  std::string raw;
  int lineno = 0;
  std::set<std::string> seen_sections;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      const std::string name = trim(line.substr(1, line.size() - 2));
      if (!seen_sections.insert(name).second) {
        throw ConfigError("line " + std::to_string(lineno) + ": duplicate section [" + name + "]");
      }
      doc.sections.push_back({name, {}, lineno});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    if (doc.sections.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside of any section");
    Entry entry{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    auto& entries = doc.sections.back().entries;
    for (const auto& other : entries) {
      if (other.key == entry.key) {
        throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + entry.key + "'");
      }
    }
    entries.push_back(std::move(entry));
  }
  return doc;
}

const IniDocument::Section* IniDocument::find(const std::string& name) const {
  for (const auto& s : sections) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

RunConfig::RunConfig() { train.epochs = 40; }

void RunConfig::validate() const {
  data.validate();
  unet.validate();
  pretrain.validate();
  train.validate();
  eval.validate();
  if (unet.input_size != data.size) {
    throw ConfigError("unet.input_size " + std::to_string(unet.input_size) + " differs from data.size " +
                      std::to_string(data.size));
  }
}

void RunConfig::set_seed(std::uint64_t seed) {
  data.seed = seed;
  pretrain.seed = seed;
  train.seed = seed;
  eval.split_seed = seed;
}

RunConfig parse_run_config(const std::string& text) {
  const IniDocument doc = IniDocument::parse(text);
  RunConfig cfg;
  for (const auto& section : doc.sections) {
    if (section.name == "data") {
      apply_section(section, data_fields(cfg.data));
    } else if (section.name == "unet") {
      apply_section(section, unet_fields(cfg.unet));
    } else if (section.name == "pretrain") {
      apply_section(section, train_fields(cfg.pretrain, true));
    } else if (section.name == "train") {
      apply_section(section, train_fields(cfg.train, false));
    } else if (section.name == "eval") {
      apply_section(section, eval_fields(cfg.eval));
    } else {
      throw ConfigError("line " + std::to_string(section.line) + ": unknown section [" + section.name + "]");
    }
  }
  cfg.validate();
  return cfg;
}

std::string emit_run_config(const RunConfig& cfg) {
  RunConfig c = cfg;
  return emit_section("data", data_fields(c.data)) + "\n" + emit_section("unet", unet_fields(c.unet)) + "\n" +
         emit_section("pretrain", train_fields(c.pretrain, true)) + "\n" +
         emit_section("train", train_fields(c.train, false)) + "\n" + emit_section("eval", eval_fields(c.eval));
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << emit_run_config(cfg);
}

std::string emit_unet_config(const UNetConfig& cfg) {
  UNetConfig c = cfg;
  return emit_section("unet", unet_fields(c));
}

UNetConfig parse_unet_section(const IniDocument::Section& section) {
  UNetConfig cfg;
  apply_section(section, unet_fields(cfg));
  cfg.validate();
  return cfg;
}

std::uint64_t config_fingerprint(const UNetConfig& cfg) { return fnv1a(emit_unet_config(cfg)); }

std::uint64_t config_fingerprint(const RunConfig& cfg) { return fnv1a(emit_run_config(cfg)); }

}  // namespace residseg
