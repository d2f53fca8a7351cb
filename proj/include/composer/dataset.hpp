#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "composer/errors.hpp"
#include "composer/rng.hpp"

namespace composer {

/// Immutable image-classification dataset. Pixels are stored as the raw bytes
/// of the source files and exposed in [0,1] by dividing by 255, so exports
/// round-trip exactly.
struct LabeledDataset {
  int count = 0;
  int rows = 0;
  int cols = 0;
  int num_classes = 0;
  std::string name;
  std::string provenance;       // source paths / synthesis seed, human-readable
  std::vector<uint8_t> pixels;  // count * rows * cols, row-major per image
  std::vector<int> labels;      // count entries in [0, num_classes)

  int image_size() const { return rows * cols; }
  double pixel(int index, int offset) const {
    return pixels[static_cast<size_t>(index) * image_size() + offset] / 255.0;
  }
  /// Flattened image `index` as doubles in [0,1].
  std::vector<double> example(int index) const;

  void validate() const;  // throws DataError on any broken invariant
};

/// Parse an IDX image/label file pair (gzip-compressed files are accepted and
/// inflated transparently). Errors name the offending file.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Export to plain (uncompressed) IDX files with magics 2051/2049.
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Synthesize the 28x56 wide variant: each source digit lands in the left or
/// right half (fair coin keyed by (seed, index)); labels 0-9 = left digits,
/// 10-19 = right digits. Deterministic for a fixed seed.
LabeledDataset make_wide_mnist(const LabeledDataset& source, uint64_t seed);

/// One mini-batch of flattened examples.
struct Batch {
  std::vector<std::vector<double>> xs;
  std::vector<int> ys;
  int size() const { return static_cast<int>(ys.size()); }
};

/// Stream of constant-size batches: a fresh permutation per epoch keyed by
/// (seed, epoch), with the short final batch dropped so every batch has
/// exactly `batch_size` examples.
class BatchIterator {
public:
  BatchIterator(const LabeledDataset& data, int batch_size, uint64_t seed);

  Batch next();
  int64_t epoch() const { return epoch_; }
  int batches_per_epoch() const { return data_->count / batch_size_; }

private:
  void reshuffle();

  const LabeledDataset* data_;
  int batch_size_;
  uint64_t seed_;
  int64_t epoch_ = -1;
  int cursor_ = 0;  // next batch index within the epoch
  std::vector<int> order_;
};

}  // namespace composer
