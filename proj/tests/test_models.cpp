#include <gtest/gtest.h>

#include <fstream>

#include "amc/serialize.hpp"
#include "amc/train.hpp"
#include "helpers.hpp"

using namespace amc;
using amc::test::random_tensor;

namespace {

Dataset blobs(std::size_t n, std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor({n, 2});
  ds.labels.resize(n);
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y = i % 2;
    ds.labels[i] = y;
    ds.images[2 * i] = (y ? 0.75 : 0.25) + noise(rng);
    ds.images[2 * i + 1] = (y ? 0.25 : 0.75) + noise(rng);
  }
  return ds;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) { return read_file(p); }

}  // namespace

TEST(Build, SameSeedIdenticalParameters) {
  const auto spec = desk_target_spec({1, 16, 16}, 4);
  EXPECT_EQ(encode(to_container(build(spec, 3))), encode(to_container(build(spec, 3))));
  EXPECT_NE(build(spec, 3).params, build(spec, 4).params);
}

TEST(Build, ProxyParameterCountByHand) {
  // conv 1->8, 8->8, 8->16, 16->16 (3x3 + bias), two pools 16->8->4,
  // dense 16*4*4 -> 64, head 64 -> 4
  const std::size_t conv = (8 * 1 * 9 + 8) + (8 * 8 * 9 + 8) + (16 * 8 * 9 + 16) + (16 * 16 * 9 + 16);
  const std::size_t dense = (16 * 4 * 4) * 64 + 64;
  const std::size_t head = 64 * 4 + 4;
  EXPECT_EQ(build(desk_proxy_spec({1, 16, 16}, 4), 1).parameter_count(), conv + dense + head);
}

TEST(Build, TargetStaysDeskScale) {
  EXPECT_LE(build(desk_target_spec({1, 16, 16}, 4), 1).parameter_count(), 50000u);
  EXPECT_LE(build(desk_proxy_spec({1, 16, 16}, 4), 1).parameter_count(), 50000u);
}

TEST(Build, DropoutRateOneRejected) {
  const ArchitectureSpec spec{"bad", {4}, 2, {LayerSpec::dense(3), LayerSpec::drop(1.0)}};
  EXPECT_THROW(build(spec, 1), Error);
}

TEST(Build, IncompatibleShapesNameLayerIndex) {
  const ArchitectureSpec spec{"bad", {1, 2, 2}, 2, {LayerSpec::pool(), LayerSpec::pool()}};
  try {
    (void)build(spec, 1);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Build, InitWithinGlorotBound) {
  const ModelState m = build(test::mlp_spec(10, 6, 3), 1);
  const double bound = std::sqrt(6.0 / 16.0);
  for (double v : m.params[0].value.values()) EXPECT_LE(std::abs(v), bound);
  for (double v : m.params[1].value.values()) EXPECT_EQ(v, 0.0);
}

TEST(TrainPlain, ZeroEpochsLeavesParameters) {
  const ModelState m = build(test::mlp_spec(2, 4, 2), 1);
  EXPECT_EQ(train_plain(m, blobs(20, 1), {0, 0.1, 4, 1}), m);
}

TEST(TrainPlain, SeparableBlobs) {
  const Dataset train = blobs(200, 1), test = blobs(200, 2);
  const ModelState m = train_plain(build(test::mlp_spec(2, 8, 2), 1), train, {50, 0.1, 16, 3});
  EXPECT_GE(accuracy(m, test), 0.95);
}

TEST(TrainPlain, DeterministicUnderSeed) {
  const Dataset train = blobs(64, 1);
  const ModelState m0 = build(test::mlp_spec(2, 8, 2), 1);
  EXPECT_EQ(train_plain(m0, train, {3, 0.1, 8, 5}), train_plain(m0, train, {3, 0.1, 8, 5}));
  EXPECT_NE(train_plain(m0, train, {3, 0.1, 8, 5}), train_plain(m0, train, {3, 0.1, 8, 6}));
}

TEST(TrainPlain, EmptyDatasetRejected) {
  Dataset empty;
  empty.num_classes = 2;
  EXPECT_THROW(train_plain(build(test::mlp_spec(2, 2, 2), 1), empty, {1, 0.1, 4, 1}), Error);
}

TEST(Predict, ArgmaxAndTies) {
  EXPECT_EQ(argmax_rows(Tensor({1, 2}, std::vector<double>{0.1, 0.9}))[0], 1u);
  EXPECT_EQ(argmax_rows(Tensor({1, 2}, std::vector<double>{0.5, 0.5}))[0], 0u);
}

TEST(Predict, BatchMatchesRowScan) {
  const Tensor z = random_tensor({3, 5}, 4);
  const auto labels = argmax_rows(z);
  for (std::size_t r = 0; r < 3; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 5; ++c)
      if (z[r * 5 + c] > z[r * 5 + best]) best = c;
    EXPECT_EQ(labels[r], best);
  }
}

TEST(Predict, InvariantUnderPositiveLogitScaling) {
  ModelState m = build(test::mlp_spec(4, 5, 3), 2);
  const Tensor x = random_tensor({10, 4}, 6);
  const auto before = predict_label(m, x);
  for (std::size_t p = 2; p < 4; ++p)  // head weight and bias scale the logits
    for (double& v : m.params[p].value.values()) v *= 3.5;
  EXPECT_EQ(predict_label(m, x), before);
}

TEST(Transfer, ValueCopyAndIsolation) {
  const ModelState src = build(test::mlp_spec(2, 4, 2), 1);
  ModelState copy = transfer_params(src, src.spec);
  EXPECT_EQ(copy.params, src.params);
  const ModelState snapshot = src;
  copy = train_plain(copy, blobs(16, 1), {1, 0.1, 4, 1});
  EXPECT_EQ(src, snapshot);
  EXPECT_NE(copy.params, src.params);
}

TEST(Transfer, DifferentWidthRejected) {
  const ModelState src = build(test::mlp_spec(2, 4, 2), 1);
  EXPECT_THROW(transfer_params(src, test::mlp_spec(2, 5, 2)), Error);
}

TEST(Transfer, EqualsSaveLoad) {
  const auto dir = test::temp_dir("transfer");
  const ModelState src = build(desk_target_spec({1, 8, 8}, 3), 9);
  save(src, dir / "m.amcm");
  EXPECT_EQ(transfer_params(src, src.spec), load(dir / "m.amcm"));
}

TEST(Persistence, RoundTripIdenticalFiles) {
  const auto dir = test::temp_dir("persist");
  const ModelState m = build(desk_proxy_spec({1, 16, 16}, 4), 2);
  save(m, dir / "a.amcm");
  const ModelState back = load(dir / "a.amcm");
  EXPECT_EQ(back, m);
  save(back, dir / "b.amcm");
  EXPECT_EQ(file_bytes(dir / "a.amcm"), file_bytes(dir / "b.amcm"));
}

TEST(Persistence, HeaderLayout) {
  const auto bytes = encode(to_container(build(test::mlp_spec(2, 2, 2), 1)));
  ASSERT_GT(bytes.size(), 6u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "AMCM");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), 1);
}

TEST(Persistence, TruncatedRejectedWithOffset) {
  auto bytes = encode(to_container(build(test::mlp_spec(2, 2, 2), 1)));
  bytes.resize(bytes.size() - 5);
  try {
    (void)model_from_container(decode(bytes));
    FAIL() << "expected rejection";
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(Persistence, WrongMagicRejected) {
  auto bytes = encode(to_container(build(test::mlp_spec(2, 2, 2), 1)));
  bytes[0] = 'X';
  EXPECT_THROW(decode(bytes), FormatError);
}

TEST(Persistence, CorruptHeaderRejected) {
  auto bytes = encode(to_container(build(test::mlp_spec(2, 2, 2), 1)));
  bytes[10] = '#';  // first byte of the header JSON
  EXPECT_THROW(decode(bytes), FormatError);
}
