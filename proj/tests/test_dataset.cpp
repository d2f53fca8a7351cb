#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "composer/dataset.hpp"
#include "doctest.h"

using namespace composer;

namespace {

const std::string kDataDir = COMPOSER_DATA_DIR;

LabeledDataset tiny_dataset(int count, int rows = 2, int cols = 3, int classes = 4) {
  LabeledDataset ds;
  ds.count = count;
  ds.rows = rows;
  ds.cols = cols;
  ds.num_classes = classes;
  ds.name = "tiny";
  ds.pixels.resize(static_cast<size_t>(count) * rows * cols);
  ds.labels.resize(count);
  Rng rng(99);
  for (auto& p : ds.pixels) p = static_cast<uint8_t>(rng.uniform_int(256));
  for (int i = 0; i < count; ++i) ds.labels[i] = i % classes;
  return ds;
}

struct TempFiles {
  std::string img, lab;
  TempFiles(const char* tag) {
    img = std::string("/tmp/composer_ds_") + tag + "_img.idx";
    lab = std::string("/tmp/composer_ds_") + tag + "_lab.idx";
  }
  ~TempFiles() {
    std::remove(img.c_str());
    std::remove(lab.c_str());
  }
};

void truncate_file(const std::string& path, long drop) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<unsigned char> bytes(size);
  REQUIRE(std::fread(bytes.data(), 1, bytes.size(), f) == bytes.size());
  std::fclose(f);
  bytes.resize(size - drop);
  f = std::fopen(path.c_str(), "wb");
  REQUIRE(f);
  REQUIRE(std::fwrite(bytes.data(), 1, bytes.size(), f) == bytes.size());
  std::fclose(f);
}

}  // namespace

TEST_CASE("load_idx reads the bundled gzipped corpus") {
  auto train = load_idx(kDataDir + "/mnist10k-train-images-idx3-ubyte.gz",
                        kDataDir + "/mnist10k-train-labels-idx1-ubyte.gz");
  auto test = load_idx(kDataDir + "/mnist10k-test-images-idx3-ubyte.gz",
                       kDataDir + "/mnist10k-test-labels-idx1-ubyte.gz");
  CHECK(train.rows == 28);
  CHECK(train.cols == 28);
  CHECK(test.rows == 28);
  CHECK(train.count + test.count == 10000);
  CHECK(train.num_classes == 10);
  CHECK(test.num_classes == 10);
  for (int y : train.labels) {
    CHECK(y >= 0);
    CHECK(y < 10);
  }
  // Pixel accessor maps bytes into [0,1].
  double mx = 0.0;
  for (int k = 0; k < train.image_size(); ++k) mx = std::max(mx, train.pixel(0, k));
  CHECK(mx <= 1.0);
  CHECK(mx > 0.0);
}

TEST_CASE("IDX export size follows the 16 + count*rows*cols formula") {
  TempFiles tf("size");
  auto ds = tiny_dataset(37, 28, 28, 10);
  save_idx(ds, tf.img, tf.lab);
  std::FILE* f = std::fopen(tf.img.c_str(), "rb");
  REQUIRE(f);
  std::fseek(f, 0, SEEK_END);
  CHECK(std::ftell(f) == 16 + 37L * 28 * 28);
  std::fclose(f);
  f = std::fopen(tf.lab.c_str(), "rb");
  REQUIRE(f);
  std::fseek(f, 0, SEEK_END);
  CHECK(std::ftell(f) == 8 + 37L);
  std::fclose(f);
}

TEST_CASE("save_idx/load_idx round-trips exactly") {
  TempFiles tf("round");
  auto ds = tiny_dataset(25);
  save_idx(ds, tf.img, tf.lab);
  auto back = load_idx(tf.img, tf.lab);
  CHECK(back.count == ds.count);
  CHECK(back.rows == ds.rows);
  CHECK(back.cols == ds.cols);
  CHECK(back.pixels == ds.pixels);
  CHECK(back.labels == ds.labels);
}

TEST_CASE("load_idx rejects malformed files naming the culprit") {
  TempFiles tf("bad");
  auto ds = tiny_dataset(10);
  save_idx(ds, tf.img, tf.lab);

  SUBCASE("truncated image payload") {
    truncate_file(tf.img, 1);
    CHECK_THROWS_WITH_AS(load_idx(tf.img, tf.lab), doctest::Contains(tf.img.c_str()), DataError);
  }
  SUBCASE("truncated label payload") {
    truncate_file(tf.lab, 1);
    CHECK_THROWS_WITH_AS(load_idx(tf.img, tf.lab), doctest::Contains(tf.lab.c_str()), DataError);
  }
  SUBCASE("bad image magic") {
    std::FILE* f = std::fopen(tf.img.c_str(), "r+b");
    REQUIRE(f);
    const unsigned char wrong[4] = {0, 0, 9, 9};
    std::fwrite(wrong, 1, 4, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_idx(tf.img, tf.lab), DataError);
  }
  SUBCASE("count mismatch between image and label files") {
    TempFiles other("bad2");
    auto bigger = tiny_dataset(11);
    save_idx(bigger, other.img, other.lab);
    CHECK_THROWS_WITH_AS(load_idx(tf.img, other.lab), doctest::Contains("count mismatch"),
                         DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_idx("/tmp/does_not_exist_composer.idx", tf.lab), DataError);
  }
}

TEST_CASE("make_wide_mnist geometry, labels, and determinism") {
  auto src = load_idx(kDataDir + "/mnist10k-test-images-idx3-ubyte.gz",
                      kDataDir + "/mnist10k-test-labels-idx1-ubyte.gz");
  auto wide = make_wide_mnist(src, 7);
  CHECK(wide.rows == 28);
  CHECK(wide.cols == 56);
  CHECK(wide.num_classes == 20);
  CHECK(wide.count == src.count);

  // Exactly one half carries the digit; label encodes the side.
  int left_count = 0;
  for (int i = 0; i < wide.count; ++i) {
    long left_sum = 0, right_sum = 0;
    for (int r = 0; r < 28; ++r)
      for (int c = 0; c < 28; ++c) {
        left_sum += wide.pixels[static_cast<size_t>(i) * 28 * 56 + r * 56 + c];
        right_sum += wide.pixels[static_cast<size_t>(i) * 28 * 56 + r * 56 + 28 + c];
      }
    const bool left = wide.labels[i] < 10;
    left_count += left;
    CHECK((left ? right_sum : left_sum) == 0);
    CHECK((left ? left_sum : right_sum) > 0);  // every digit image has ink
    CHECK(wide.labels[i] % 10 == src.labels[i]);
  }

  // Fair-coin side split within 3 sigma.
  const double frac = static_cast<double>(left_count) / wide.count;
  const double sigma = std::sqrt(0.25 / wide.count);
  CHECK(std::fabs(frac - 0.5) < 3.0 * sigma);

  // Side assignment is reproducible straight from the keyed stream.
  for (int i = 0; i < wide.count; ++i) {
    Rng coin = Rng::keyed(7, {kTagWideSide, static_cast<uint64_t>(i)});
    CHECK((coin.next_double() < 0.5) == (wide.labels[i] < 10));
  }

  // Per-digit histogram identity: wide label d counts = left-assigned source d counts.
  std::vector<int> wide_hist(20, 0), expect_hist(20, 0);
  for (int i = 0; i < wide.count; ++i) {
    ++wide_hist[wide.labels[i]];
    Rng coin = Rng::keyed(7, {kTagWideSide, static_cast<uint64_t>(i)});
    const bool left = coin.next_double() < 0.5;
    ++expect_hist[src.labels[i] + (left ? 0 : 10)];
  }
  CHECK(wide_hist == expect_hist);

  // Same seed -> byte-identical; different seed -> different sides somewhere.
  auto again = make_wide_mnist(src, 7);
  CHECK(again.pixels == wide.pixels);
  CHECK(again.labels == wide.labels);
  auto other = make_wide_mnist(src, 8);
  CHECK(other.labels != wide.labels);

  auto not_mnist = tiny_dataset(4);
  CHECK_THROWS_AS(make_wide_mnist(not_mnist, 1), UsageError);
}

TEST_CASE("batch_iterator: coverage, determinism, drop-short") {
  auto ds = tiny_dataset(10);

  SUBCASE("one epoch covers floor(count/N)*N distinct examples") {
    BatchIterator it(ds, 3, 5);
    std::set<std::vector<double>> seen;
    for (int b = 0; b < 3; ++b) {
      Batch batch = it.next();
      CHECK(batch.size() == 3);
      CHECK(it.epoch() == 0);
      for (auto& x : batch.xs) seen.insert(x);
    }
    CHECK(seen.size() == 9);  // 10th example dropped this epoch
    it.next();
    CHECK(it.epoch() == 1);
  }

  SUBCASE("same seed gives the same stream, different epochs differ") {
    BatchIterator a(ds, 3, 5), b(ds, 3, 5);
    std::vector<int> first_epoch;
    for (int k = 0; k < 6; ++k) {
      Batch ba = a.next(), bb = b.next();
      CHECK(ba.ys == bb.ys);
      CHECK(ba.xs == bb.xs);
      for (int y : ba.ys) first_epoch.push_back(y);
    }
    // Orders across the two epochs are not identical.
    std::vector<int> e0(first_epoch.begin(), first_epoch.begin() + 9);
    std::vector<int> e1(first_epoch.begin() + 9, first_epoch.end());
    CHECK(e0 != e1);
  }

  SUBCASE("N = count yields a single identity-coverage batch") {
    BatchIterator it(ds, 10, 1);
    Batch batch = it.next();
    CHECK(batch.size() == 10);
    std::multiset<int> ys(batch.ys.begin(), batch.ys.end());
    std::multiset<int> want(ds.labels.begin(), ds.labels.end());
    CHECK(ys == want);
  }

  SUBCASE("batch size larger than the dataset is rejected") {
    CHECK_THROWS_AS(BatchIterator(ds, 11, 1), UsageError);
    CHECK_THROWS_AS(BatchIterator(ds, 0, 1), UsageError);
  }
}
