#include "residseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "residseg/error.hpp"
#include "residseg/metrics.hpp"
#include "residseg/pgm.hpp"
#include "residseg/seed.hpp"

namespace residseg {

std::string to_string(Acr acr) { return "ACR" + std::to_string(static_cast<int>(acr)); }

Acr parse_acr(const std::string& text) {
  std::string digits = text;
  if (digits.rfind("ACR", 0) == 0) digits = digits.substr(3);
  if (digits.size() == 1 && digits[0] >= '1' && digits[0] <= '6') return static_cast<Acr>(digits[0] - '0');
  throw DataError(DataError::Kind::kMalformed, "invalid ACR label '" + text + "'");
}

BinaryMask Sample::lesion_mask() const { return combine_masks(mass_mask, calc_mask, image.height, image.width); }

void Sample::validate() const {
  if (image.height != image.width || image.empty()) {
    throw DataError(DataError::Kind::kSizeMismatch, id + ": image must be square and non-empty");
  }
  if (is_malignant(acr) && !has_mask()) {
    throw DataError(DataError::Kind::kMissingMask, id + ": " + to_string(acr) + " sample has no lesion mask");
  }
  if (!is_malignant(acr) && has_mask()) {
    throw DataError(DataError::Kind::kMaskOnBenign, id + ": " + to_string(acr) + " sample must not carry a mask");
  }
  for (const auto* m : {&mass_mask, &calc_mask}) {
    if (m->has_value() && ((**m).height != image.height || (**m).width != image.width)) {
      throw DataError(DataError::Kind::kSizeMismatch, id + ": mask size differs from image size");
    }
  }
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

std::set<std::string> Dataset::id_set() const {
  std::set<std::string> out;
  for (const auto& s : samples) out.insert(s.id);
  return out;
}

void Dataset::validate() const {
  std::set<std::string> seen;
  for (const auto& s : samples) {
    s.validate();
    if (!seen.insert(s.id).second) throw DataError(DataError::Kind::kMalformed, "duplicate sample id '" + s.id + "'");
    if (s.image.height != samples.front().image.height) {
      throw DataError(DataError::Kind::kSizeMismatch,
                      s.id + ": image size " + std::to_string(s.image.height) + " differs from dataset size " +
                          std::to_string(samples.front().image.height));
    }
  }
}

Dataset filter_by_acr(const Dataset& ds, const std::set<Acr>& keep, const std::string& phase) {
  Dataset out;
  out.meta = ds.meta;
  for (const auto& s : ds.samples) {
    if (keep.count(s.acr)) out.samples.push_back(s);
  }
  if (out.empty()) {
    std::string classes;
    for (auto a : keep) classes += (classes.empty() ? "" : ",") + to_string(a);
    throw DataError(DataError::Kind::kEmpty, phase + ": no samples with class in {" + classes + "}");
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw std::invalid_argument("split: train_frac must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac + 1e-9));
  if (cut == 0 || cut == n) {
    throw DataError(DataError::Kind::kEmpty, "split: " + std::to_string(n) + " samples at train_frac " +
                                                 std::to_string(train_frac) + " leave one side empty");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0x5b1}));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  std::vector<std::size_t> test_idx(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::pair<Dataset, Dataset> out;
  out.first.meta = ds.meta;
  out.second.meta = ds.meta;
  for (auto i : train_idx) out.first.samples.push_back(ds.samples[i]);
  for (auto i : test_idx) out.second.samples.push_back(ds.samples[i]);
  return out;
}

std::uint64_t id_set_hash(const std::set<std::string>& ids) {
  std::uint64_t h = fnv1a("idset");
  for (const auto& id : ids) {
    h = fnv1a(id, h);
    h = fnv1a(std::string_view("\0", 1), h);
  }
  return h;
}

namespace {

namespace fs = std::filesystem;

constexpr const char* kManifestHeader = "id\tacr\timage_path\tmass_mask_path\tcalc_mask_path";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

fs::path require_file(const fs::path& dir, const std::string& rel) {
  fs::path p = dir / rel;
  if (!fs::exists(p)) throw DataError(DataError::Kind::kMissingFile, "manifest references missing file " + p.string());
  return p;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  ds.validate();
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec || !fs::is_directory(dir / "images")) throw Error("cannot create dataset directory " + dir.string());
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw Error("cannot write " + (dir / "manifest.tsv").string());
  manifest << kManifestHeader << '\n';
  for (const auto& s : ds.samples) {
    const std::string image_rel = "images/" + s.id + ".pgm";
    write_pgm(dir / image_rel, to_raster16(s.image));
    std::string mass_rel, calc_rel;
    if (s.mass_mask) {
      mass_rel = "masks/" + s.id + "_mass.pgm";
      write_pgm(dir / mass_rel, to_raster8(*s.mass_mask));
    }
    if (s.calc_mask) {
      calc_rel = "masks/" + s.id + "_calc.pgm";
      write_pgm(dir / calc_rel, to_raster8(*s.calc_mask));
    }
    manifest << s.id << '\t' << to_string(s.acr) << '\t' << image_rel << '\t' << mass_rel << '\t' << calc_rel << '\n';
  }
  if (!ds.meta.empty()) {
    std::ofstream meta(dir / "meta.tsv");
    for (const auto& [k, v] : ds.meta) meta << k << '\t' << v << '\n';
  }
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.tsv";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw DataError(DataError::Kind::kMissingManifest, "missing manifest " + manifest_path.string());
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("id\t", 0) == 0) continue;
    auto cells = split_tabs(line);
    if (cells.size() < 3 || cells.size() > 5) {
      throw DataError(DataError::Kind::kMalformed, manifest_path.string() + ":" + std::to_string(lineno) +
                                                       ": expected 3 to 5 tab-separated columns");
    }
    cells.resize(5);
    Sample s;
    s.id = cells[0];
    s.acr = parse_acr(cells[1]);
    if (!is_malignant(s.acr) && (!cells[3].empty() || !cells[4].empty())) {
      throw DataError(DataError::Kind::kMaskOnBenign,
                      s.id + ": " + to_string(s.acr) + " entry lists a mask path (manifest line " + std::to_string(lineno) + ")");
    }
    s.image = to_image(read_pgm(require_file(dir, cells[2])));
    if (!cells[3].empty()) s.mass_mask = to_mask(read_pgm(require_file(dir, cells[3])));
    if (!cells[4].empty()) s.calc_mask = to_mask(read_pgm(require_file(dir, cells[4])));
    ds.samples.push_back(std::move(s));
  }
  std::ifstream meta(dir / "meta.tsv");
  while (meta && std::getline(meta, line)) {
    auto tab = line.find('\t');
    if (tab != std::string::npos) ds.meta[line.substr(0, tab)] = line.substr(tab + 1);
  }
  ds.validate();
  return ds;
}

}  // namespace residseg
