#include "residseg/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "residseg/error.hpp"

namespace residseg {

BinaryMask combine_masks(const BinaryMask& mass, const BinaryMask& calc) {
  require_same_size(mass, calc, "combine_masks");
  BinaryMask out(mass.height, mass.width, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = mass.data[i] || calc.data[i];
  return out;
}

BinaryMask combine_masks(const std::optional<BinaryMask>& mass, const std::optional<BinaryMask>& calc, int height,
                         int width) {
  const BinaryMask empty(height, width, 0);
  const BinaryMask& a = mass ? *mass : empty;
  const BinaryMask& b = calc ? *calc : empty;
  require_same_size(a, empty, "combine_masks");
  return combine_masks(a, b);
}

BinaryMask binarize(const Image2D& pred, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize: threshold must lie in (0, 1)");
  BinaryMask out(pred.height, pred.width, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) out.data[i] = pred.data[i] > threshold;
  return out;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size(pred, gt, "dice");
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.data[i] != 0;
    const bool b = gt.data[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

double mean_dice(const std::vector<double>& per_image) {
  if (per_image.empty()) throw Error("mean_dice: no images");
  return std::accumulate(per_image.begin(), per_image.end(), 0.0) / static_cast<double>(per_image.size());
}

void MetricsHistory::add(EpochRecord record) {
  if (!records_.empty() && record.epoch <= records_.back().epoch) {
    throw Error("metrics history: epoch " + std::to_string(record.epoch) + " does not follow epoch " +
                std::to_string(records_.back().epoch));
  }
  records_.push_back(record);
}

std::vector<double> MetricsHistory::dice_values() const {
  std::vector<double> out;
  for (const auto& r : records_) {
    if (r.test_dice) out.push_back(*r.test_dice);
  }
  return out;
}

namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string MetricsHistory::to_csv() const {
  std::string out = "epoch,train_loss,test_dice\n";
  for (const auto& r : records_) {
    out += std::to_string(r.epoch) + "," + format_real(r.train_loss) + "," +
           (r.test_dice ? format_real(*r.test_dice) : std::string()) + "\n";
  }
  return out;
}

MetricsHistory MetricsHistory::from_csv(const std::string& text) {
  MetricsHistory h;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "epoch,train_loss,test_dice") throw Error("metrics csv: bad header");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw Error("metrics csv: malformed row '" + line + "'");
    EpochRecord r;
    try {
      r.epoch = std::stoi(line.substr(0, c1));
      r.train_loss = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      const std::string d = line.substr(c2 + 1);
      if (!d.empty()) r.test_dice = std::stod(d);
    } catch (const std::logic_error&) {
      throw Error("metrics csv: malformed row '" + line + "'");
    }
    h.add(r);
  }
  return h;
}

void MetricsHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << to_csv();
}

double dice_max(const MetricsHistory& h) {
  const auto v = h.dice_values();
  if (v.empty()) throw Error("dice_max: history has 0 DICE entries, need at least 1");
  return *std::max_element(v.begin(), v.end());
}

double dice_avg_last(const MetricsHistory& h, int n) {
  if (n < 1) throw std::invalid_argument("dice_avg_last: n must be >= 1");
  const auto v = h.dice_values();
  if (static_cast<int>(v.size()) < n) {
    throw Error("dice_avg_last: history has " + std::to_string(v.size()) + " DICE entries, need " + std::to_string(n));
  }
  return std::accumulate(v.end() - n, v.end(), 0.0) / n;
}

}  // namespace residseg
