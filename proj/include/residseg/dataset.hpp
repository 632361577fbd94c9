#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "residseg/image.hpp"

namespace residseg {

/// Patient-level assessment category, 1 (negative) to 6 (proven malignant).
enum class Acr { k1 = 1, k2, k3, k4, k5, k6 };

std::string to_string(Acr acr);
/// Accepts "ACR4" or "4".
Acr parse_acr(const std::string& text);
inline bool is_benign(Acr a) { return a == Acr::k1 || a == Acr::k2; }
inline bool is_malignant(Acr a) { return a == Acr::k4 || a == Acr::k5 || a == Acr::k6; }

inline const std::set<Acr> kBenignClasses{Acr::k1, Acr::k2};
inline const std::set<Acr> kMalignantClasses{Acr::k4, Acr::k5, Acr::k6};

struct Sample {
  std::string id;
  Image2D image;
  Acr acr = Acr::k1;
  std::optional<BinaryMask> mass_mask;
  std::optional<BinaryMask> calc_mask;

  bool has_mask() const { return mass_mask.has_value() || calc_mask.has_value(); }
  /// Union of the mass and calcification masks.
  BinaryMask lesion_mask() const;
  /// Masks present iff ACR4-6, image-sized, square unit-interval image.
  void validate() const;
};

struct Dataset {
  std::vector<Sample> samples;
  std::map<std::string, std::string> meta;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::vector<std::string> ids() const;
  std::set<std::string> id_set() const;
  /// Unique ids, uniform image size and per-sample validity.
  void validate() const;
};

/// Order-preserving subset; throws DataError naming `phase` when nothing is left.
Dataset filter_by_acr(const Dataset& ds, const std::set<Acr>& keep, const std::string& phase = "filter");

/// Seeded shuffle, cut at floor(n·train_frac); each side keeps the original order.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed);

/// Order-independent digest of a set of ids.
std::uint64_t id_set_hash(const std::set<std::string>& ids);

/// Writes manifest.tsv, images/*.pgm (16-bit) and masks/*.pgm (8-bit).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Reads a directory written by `save_dataset` or laid out the same way.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace residseg
