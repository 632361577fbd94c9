#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "residseg/phantom.hpp"
#include "residseg/train_config.hpp"
#include "residseg/unet.hpp"

namespace residseg {

/// Parsed `[section]` / `key = value` document. Order is preserved.
struct IniDocument {
  struct Entry {
    std::string key;
    std::string value;
    int line = 0;
  };
  struct Section {
    std::string name;
    std::vector<Entry> entries;
    int line = 0;
  };
  std::vector<Section> sections;

  static IniDocument parse(const std::string& text);
  const Section* find(const std::string& name) const;
};

/// Everything a pipeline run needs.
struct RunConfig {
  PhantomSpec data;
  UNetConfig unet;
  TrainConfig pretrain;
  TrainConfig train;
  EvalConfig eval;

  RunConfig();
  void validate() const;
  /// Sets every seed (data, pretrain, train, split).
  void set_seed(std::uint64_t seed);

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Unknown sections or keys, duplicates and unparsable values raise ConfigError.
RunConfig parse_run_config(const std::string& text);
std::string emit_run_config(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& cfg, const std::filesystem::path& path);

/// The `[unet]` section on its own.
std::string emit_unet_config(const UNetConfig& cfg);
UNetConfig parse_unet_section(const IniDocument::Section& section);

/// Hash of the canonical `[unet]` emission.
std::uint64_t config_fingerprint(const UNetConfig& cfg);
std::uint64_t config_fingerprint(const RunConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace residseg
