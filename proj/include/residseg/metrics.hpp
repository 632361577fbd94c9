#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "residseg/image.hpp"

namespace residseg {

/// Elementwise union; both masks must have the same size.
BinaryMask combine_masks(const BinaryMask& mass, const BinaryMask& calc);
/// Absent masks count as all-zero grids of the given size.
BinaryMask combine_masks(const std::optional<BinaryMask>& mass, const std::optional<BinaryMask>& calc, int height,
                         int width);

/// Pixel set iff value > threshold. Requires 0 < threshold < 1.
BinaryMask binarize(const Image2D& pred, double threshold);

/// 2|P∩G| / (|P|+|G|); two empty masks score 1.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Mean of per-image scores.
double mean_dice(const std::vector<double>& per_image);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> test_dice;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

class MetricsHistory {
 public:
  /// Epochs must be strictly increasing.
  void add(EpochRecord record);
  const std::vector<EpochRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::vector<double> dice_values() const;

  /// CSV with header `epoch,train_loss,test_dice`; missing DICE is an empty cell.
  std::string to_csv() const;
  static MetricsHistory from_csv(const std::string& text);
  void write_csv(const std::filesystem::path& path) const;

  friend bool operator==(const MetricsHistory&, const MetricsHistory&) = default;

 private:
  std::vector<EpochRecord> records_;
};

double dice_max(const MetricsHistory& h);
/// Mean of the final n recorded DICE values.
double dice_avg_last(const MetricsHistory& h, int n = 10);

}  // namespace residseg
