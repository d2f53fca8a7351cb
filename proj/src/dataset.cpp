#include "composer/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace composer {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> bytes(size > 0 ? static_cast<size_t>(size) : 0);
  if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw DataError("short read from " + path);
  }
  std::fclose(f);
  return bytes;
}

std::vector<uint8_t> gunzip(const std::vector<uint8_t>& in, const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw DataError("zlib initialization failed for " + path);
  std::vector<uint8_t> out;
  out.reserve(in.size() * 4);
  std::vector<uint8_t> buf(1 << 16);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  while (ret != Z_STREAM_END) {
    zs.next_out = buf.data();
    zs.avail_out = static_cast<uInt>(buf.size());
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt gzip stream in " + path);
    }
    out.insert(out.end(), buf.data(), buf.data() + (buf.size() - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

std::vector<uint8_t> read_maybe_gzip(const std::string& path) {
  std::vector<uint8_t> bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return gunzip(bytes, path);
  return bytes;
}

uint32_t read_u32_be(const std::vector<uint8_t>& b, size_t at, const std::string& path) {
  if (at + 4 > b.size()) throw DataError("truncated IDX header in " + path);
  return (uint32_t(b[at]) << 24) | (uint32_t(b[at + 1]) << 16) | (uint32_t(b[at + 2]) << 8) |
         uint32_t(b[at + 3]);
}

void put_u32_be(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v >> 24));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v));
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot write " + path);
  if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
    std::fclose(f);
    throw DataError("short write to " + path);
  }
  std::fclose(f);
}

std::string basename_of(const std::string& path) {
  const size_t slash = path.find_last_of('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

}  // namespace

std::vector<double> LabeledDataset::example(int index) const {
  std::vector<double> x(image_size());
  const size_t base = static_cast<size_t>(index) * image_size();
  for (int k = 0; k < image_size(); ++k) x[k] = pixels[base + k] / 255.0;
  return x;
}

void LabeledDataset::validate() const {
  if (count < 0 || rows <= 0 || cols <= 0 || num_classes <= 0)
    throw DataError("dataset " + name + " has non-positive dimensions");
  if (pixels.size() != static_cast<size_t>(count) * rows * cols)
    throw DataError("dataset " + name + " pixel payload size mismatch");
  if (labels.size() != static_cast<size_t>(count))
    throw DataError("dataset " + name + " label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= num_classes) throw DataError("dataset " + name + " label out of range");
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const std::vector<uint8_t> img = read_maybe_gzip(images_path);
  const std::vector<uint8_t> lab = read_maybe_gzip(labels_path);

  if (read_u32_be(img, 0, images_path) != 2051)
    throw DataError("bad IDX image magic in " + images_path);
  const uint32_t count = read_u32_be(img, 4, images_path);
  const uint32_t rows = read_u32_be(img, 8, images_path);
  const uint32_t cols = read_u32_be(img, 12, images_path);
  const size_t want_img = 16 + static_cast<size_t>(count) * rows * cols;
  if (img.size() != want_img)
    throw DataError("image payload size mismatch in " + images_path + " (expected " +
                    std::to_string(want_img) + " bytes, found " + std::to_string(img.size()) +
                    ")");

  if (read_u32_be(lab, 0, labels_path) != 2049)
    throw DataError("bad IDX label magic in " + labels_path);
  const uint32_t lab_count = read_u32_be(lab, 4, labels_path);
  if (lab.size() != 8 + static_cast<size_t>(lab_count))
    throw DataError("label payload size mismatch in " + labels_path);
  if (lab_count != count)
    throw DataError("count mismatch between " + images_path + " (" + std::to_string(count) +
                    ") and " + labels_path + " (" + std::to_string(lab_count) + ")");

  LabeledDataset ds;
  ds.count = static_cast<int>(count);
  ds.rows = static_cast<int>(rows);
  ds.cols = static_cast<int>(cols);
  ds.name = basename_of(images_path);
  ds.provenance = images_path + " + " + labels_path;
  ds.pixels.assign(img.begin() + 16, img.end());
  ds.labels.resize(count);
  int max_label = 0;
  for (uint32_t i = 0; i < count; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  ds.validate();
  std::vector<uint8_t> img;
  img.reserve(16 + ds.pixels.size());
  put_u32_be(img, 2051);
  put_u32_be(img, static_cast<uint32_t>(ds.count));
  put_u32_be(img, static_cast<uint32_t>(ds.rows));
  put_u32_be(img, static_cast<uint32_t>(ds.cols));
  img.insert(img.end(), ds.pixels.begin(), ds.pixels.end());
  write_file(images_path, img);

  std::vector<uint8_t> lab;
  lab.reserve(8 + ds.labels.size());
  put_u32_be(lab, 2049);
  put_u32_be(lab, static_cast<uint32_t>(ds.count));
  for (int y : ds.labels) lab.push_back(static_cast<uint8_t>(y));
  write_file(labels_path, lab);
}

LabeledDataset make_wide_mnist(const LabeledDataset& source, uint64_t seed) {
  if (source.rows != 28 || source.cols != 28 || source.num_classes != 10)
    throw UsageError("make_wide_mnist requires a 28x28 10-class source");

  LabeledDataset out;
  out.count = source.count;
  out.rows = 28;
  out.cols = 56;
  out.num_classes = 20;
  out.name = source.name + "-wide";
  out.provenance = "wide synthesis seed " + std::to_string(seed) + " from " + source.provenance;
  out.pixels.assign(static_cast<size_t>(out.count) * out.rows * out.cols, 0);
  out.labels.resize(out.count);

  for (int i = 0; i < source.count; ++i) {
    Rng coin = Rng::keyed(seed, {kTagWideSide, static_cast<uint64_t>(i)});
    const bool left = coin.next_double() < 0.5;
    const int col0 = left ? 0 : 28;
    out.labels[i] = source.labels[i] + (left ? 0 : 10);
    const size_t src_base = static_cast<size_t>(i) * 28 * 28;
    const size_t dst_base = static_cast<size_t>(i) * 28 * 56;
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c)
        out.pixels[dst_base + r * 56 + col0 + c] = source.pixels[src_base + r * 28 + c];
  }
  out.validate();
  return out;
}

BatchIterator::BatchIterator(const LabeledDataset& data, int batch_size, uint64_t seed)
    : data_(&data), batch_size_(batch_size), seed_(seed) {
  if (batch_size <= 0 || batch_size > data.count)
    throw UsageError("batch size must be in [1, dataset count]");
  reshuffle();
}

void BatchIterator::reshuffle() {
  ++epoch_;
  cursor_ = 0;
  order_.resize(data_->count);
  std::iota(order_.begin(), order_.end(), 0);
  Rng rng = Rng::keyed(seed_, {kTagShuffle, static_cast<uint64_t>(epoch_)});
  for (int i = data_->count - 1; i > 0; --i)
    std::swap(order_[i], order_[rng.uniform_int(i + 1)]);
}

Batch BatchIterator::next() {
  if (cursor_ >= batches_per_epoch()) reshuffle();
  Batch b;
  b.xs.reserve(batch_size_);
  b.ys.reserve(batch_size_);
  for (int k = 0; k < batch_size_; ++k) {
    const int idx = order_[cursor_ * batch_size_ + k];
    b.xs.push_back(data_->example(idx));
    b.ys.push_back(data_->labels[idx]);
  }
  ++cursor_;
  return b;
}

}  // namespace composer
