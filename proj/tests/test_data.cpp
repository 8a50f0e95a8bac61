#include <gtest/gtest.h>

#include <algorithm>

#include "amc/data.hpp"
#include "amc/train.hpp"
#include "helpers.hpp"

using namespace amc;

namespace {

std::vector<std::uint8_t> be(std::initializer_list<std::uint32_t> words) {
  std::vector<std::uint8_t> b;
  for (std::uint32_t w : words)
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(w >> s));
  return b;
}

std::vector<std::uint8_t> cat(std::vector<std::uint8_t> a, const std::vector<std::uint8_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Dataset tagged(std::size_t n, Partition p, std::size_t classes = 4, std::uint64_t seed = 1) {
  Dataset ds = synth_generate(classes, n, 8, seed);
  ds.partition = p;
  return ds;
}

Dataset with_labels(std::vector<std::size_t> labels, std::size_t classes) {
  Dataset ds;
  ds.num_classes = classes;
  ds.images = amc::test::random_tensor({labels.size(), 1, 2, 2}, 3, 0.0, 1.0);
  ds.labels = std::move(labels);
  ds.name = "counts";
  return ds;
}

}  // namespace

TEST(Idx, ParsesHandBuiltFixture) {
  const auto dir = amc::test::temp_dir("idx-valid");
  write_file(dir / "img", cat(be({0x803, 2, 2, 2}), {0, 255, 128, 64, 1, 2, 254, 17}));
  write_file(dir / "lab", cat(be({0x801, 2}), {3, 7}));
  const Dataset ds = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(ds.images.shape(), (Shape{2, 1, 2, 2}));
  const std::vector<double> want{0.0, 1.0, 128 / 255.0, 64 / 255.0, 1 / 255.0, 2 / 255.0, 254 / 255.0, 17 / 255.0};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_EQ(ds.images[i], want[i]);
  EXPECT_EQ(ds.labels, (std::vector<std::size_t>{3, 7}));
  EXPECT_EQ(ds.num_classes, 8u);
}

TEST(Idx, RejectsImageMagicOnLabels) {
  const auto dir = amc::test::temp_dir("idx-magic");
  write_file(dir / "img", cat(be({0x803, 1, 1, 1}), {9}));
  write_file(dir / "lab", cat(be({0x803, 1}), {0}));
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL() << "accepted wrong magic";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(Idx, RejectsTruncatedPayloadWithOffset) {
  const auto dir = amc::test::temp_dir("idx-trunc");
  write_file(dir / "img", cat(be({0x803, 2, 2, 2}), {1, 2, 3, 4, 5}));
  write_file(dir / "lab", cat(be({0x801, 2}), {0, 1}));
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL() << "accepted truncated payload";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 21u);
  }
  write_file(dir / "img", be({0x803, 2}));
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), FormatError);
}

TEST(Idx, RejectsCountMismatch) {
  const auto dir = amc::test::temp_dir("idx-count");
  write_file(dir / "img", cat(be({0x803, 2, 1, 1}), {1, 2}));
  write_file(dir / "lab", cat(be({0x801, 3}), {0, 1, 1}));
  EXPECT_THROW(load_idx(dir / "img", dir / "lab"), FormatError);
}

TEST(Idx, WriteThenLoadIsBitIdentical) {
  const auto dir = amc::test::temp_dir("idx-roundtrip");
  Dataset ds = tagged(37, Partition::train, 5, 8);
  for (double& v : ds.images.values()) v = std::round(v * 255.0) / 255.0;
  write_idx(ds, dir / "img", dir / "lab");
  const Dataset back = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(back.images, ds.images);
  EXPECT_EQ(back.labels, ds.labels);
  write_idx(back, dir / "img2", dir / "lab2");
  EXPECT_EQ(read_file(dir / "img"), read_file(dir / "img2"));
  EXPECT_EQ(read_file(dir / "lab"), read_file(dir / "lab2"));
}

TEST(Split, ThousandGivesThreeHundredTwoTenFourNinety) {
  const Splits s = split(tagged(50, Partition::train), tagged(1000, Partition::test), {0.30, 0.30, 4});
  EXPECT_EQ(s.validation.size(), 300u);
  EXPECT_EQ(s.attack_reserve.size(), 210u);
  EXPECT_EQ(s.test.size(), 490u);
  EXPECT_EQ(s.train.size(), 50u);
  EXPECT_EQ(s.validation.partition, Partition::validation);
  EXPECT_EQ(s.attack_reserve.partition, Partition::attack_reserve);
  EXPECT_EQ(s.test.partition, Partition::final_test);
}

TEST(Split, PartsFormThePartition) {
  Dataset test = tagged(101, Partition::test);
  // Unique first pixel per row identifies each sample.
  for (std::size_t i = 0; i < test.size(); ++i) test.images[i * 64] = static_cast<double>(i) / 100.0;
  const Splits s = split(tagged(5, Partition::train), test, {0.30, 0.30, 9});
  std::vector<double> ids;
  for (const Dataset* part : {&s.validation, &s.attack_reserve, &s.test})
    for (std::size_t i = 0; i < part->size(); ++i) ids.push_back(part->images[i * 64]);
  std::sort(ids.begin(), ids.end());
  ASSERT_EQ(ids.size(), 101u);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], static_cast<double>(i) / 100.0);
}

TEST(Split, SameSeedSameAssignment) {
  const Dataset train = tagged(5, Partition::train), test = tagged(200, Partition::test);
  const Splits a = split(train, test, {0.3, 0.3, 5}), b = split(train, test, {0.3, 0.3, 5});
  EXPECT_EQ(a.attack_reserve.images, b.attack_reserve.images);
  const Splits c = split(train, test, {0.3, 0.3, 6});
  EXPECT_NE(a.attack_reserve.images, c.attack_reserve.images);
}

TEST(Split, RejectsTinyOrUntaggedPartitions) {
  EXPECT_THROW(split(tagged(5, Partition::train), tagged(2, Partition::test), {0.3, 0.3, 1}), Error);
  EXPECT_THROW(split(tagged(5, Partition::test), tagged(100, Partition::test), {0.3, 0.3, 1}), Error);
  EXPECT_THROW(split(tagged(5, Partition::train), tagged(100, Partition::test), {0.0, 0.3, 1}), Error);
  EXPECT_THROW(split(tagged(5, Partition::train), tagged(100, Partition::test), {0.3, 1.0, 1}), Error);
}

TEST(Balance, MinCountRule) {
  std::vector<std::size_t> y;
  for (std::size_t c : {0, 1, 2})
    for (std::size_t k = 0; k < std::vector<std::size_t>{10, 4, 7}[c]; ++k) y.push_back(c);
  const Dataset out = balance_classes(with_labels(y, 3), 2);
  EXPECT_EQ(class_counts(out), (std::vector<std::size_t>{4, 4, 4}));
}

TEST(Balance, BalancedInputIsKeptWhole) {
  const Dataset ds = tagged(40, Partition::train);
  const Dataset out = balance_classes(ds, 3);
  EXPECT_EQ(out.images, ds.images);
  EXPECT_EQ(out.labels, ds.labels);
}

TEST(Balance, CountsEqualOnRandomLabels) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto y = amc::test::random_labels(60, 5, seed);
    Dataset ds = with_labels(y, 5);
    const auto in_counts = class_counts(ds);
    if (*std::min_element(in_counts.begin(), in_counts.end()) == 0) continue;
    const auto counts = class_counts(balance_classes(ds, seed));
    EXPECT_EQ(counts, std::vector<std::size_t>(5, *std::min_element(in_counts.begin(), in_counts.end())));
  }
}

TEST(Balance, NamesAbsentClass) {
  try {
    balance_classes(with_labels({0, 0, 2}, 3), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
  }
}

TEST(Augment, ZeroShiftIsIdentity) {
  const Dataset ds = tagged(10, Partition::train);
  EXPECT_EQ(augment_shift(ds, 0, 4).images, ds.images);
}

TEST(Augment, MatchesIndexOffsetOracle) {
  const Dataset ds = tagged(12, Partition::train);
  const Dataset out = augment_shift(ds, 2, 7);
  const auto shifts = draw_shifts(ds.size(), 2, 7);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto [dy, dx] = shifts[n];
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        const int si = i - dy, sj = j - dx;
        const double want = (si < 0 || sj < 0 || si >= 8 || sj >= 8) ? 0.0 : ds.images[n * 64 + si * 8 + sj];
        EXPECT_EQ(out.images[n * 64 + i * 8 + j], want);
      }
  }
  EXPECT_EQ(out.labels, ds.labels);
  for (double v : out.images.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
}

TEST(Augment, RejectsExcessiveShift) { EXPECT_THROW(augment_shift(tagged(2, Partition::train), 8, 1), Error); }

TEST(Synth, DeterministicAndInRange) {
  const Dataset a = synth_generate(6, 50, 12, 3), b = synth_generate(6, 50, 12, 3);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  for (double v : a.images.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_NO_THROW(check_dataset(a));
}

TEST(Synth, RejectsInvalidSizes) {
  EXPECT_THROW(synth_generate(4, 10, 7, 1), Error);
  EXPECT_THROW(synth_generate(11, 10, 16, 1), Error);
  EXPECT_THROW(synth_generate(1, 10, 16, 1), Error);
  EXPECT_THROW(synth_generate(4, 0, 16, 1), Error);
}

TEST(Synth, LearnableWithinThirtyEpochs) {
  Dataset train = synth_generate(4, 600, 16, 21);
  train.partition = Partition::train;
  const Dataset test = synth_generate(4, 400, 16, 22);
  const ModelState m = train_plain(build(desk_target_spec({1, 16, 16}, 4), 1), train, {30, 0.05, 32, 2});
  EXPECT_GE(accuracy(m, test), 0.9);
}

TEST(Subsample, KeepsOrderAndSize) {
  const Dataset ds = tagged(30, Partition::train);
  const Dataset s = subsample(ds, 10, 5);
  EXPECT_EQ(s.size(), 10u);
  EXPECT_EQ(subsample(ds, 50, 5).size(), 30u);
}
