#pragma once

// Datasets: IDX ingestion, the validation / attack-reserve / test split,
// class balancing, shift augmentation and a synthetic glyph generator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "amc/rng.hpp"
#include "amc/serialize.hpp"
#include "amc/tensor.hpp"

namespace amc {

enum class Partition { unspecified, train, test, validation, attack_reserve, final_test, proxy_pool };

inline const char* partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::test: return "test";
    case Partition::validation: return "validation";
    case Partition::attack_reserve: return "attack_reserve";
    case Partition::final_test: return "final_test";
    case Partition::proxy_pool: return "proxy_pool";
    case Partition::unspecified: break;
  }
  return "unspecified";
}

struct Dataset {
  Tensor images;  // [n, C, H, W], values in [0,1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string name;
  Partition partition = Partition::unspecified;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
};

inline void check_dataset(const Dataset& ds) {
  if (ds.images.rank() < 2 || ds.images.dim(0) != ds.labels.size())
    throw Error("dataset '" + ds.name + "': " + std::to_string(ds.labels.size()) + " labels for images " +
                shape_str(ds.images.shape()));
  for (std::size_t y : ds.labels)
    if (y >= ds.num_classes) throw Error("dataset '" + ds.name + "': label " + std::to_string(y) + " out of range");
  for (double v : ds.images.values())
    if (!(v >= 0.0 && v <= 1.0)) throw Error("dataset '" + ds.name + "': pixel outside [0,1]");
}

/// Subset by row indices; keeps name, class count and partition tag.
inline Dataset select(const Dataset& ds, const std::vector<std::size_t>& rows, Partition partition) {
  Dataset out{gather_rows(ds.images, rows), {}, ds.num_classes, ds.name, partition};
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(ds.labels[r]);
  return out;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

/// Seeded random subset of `n` samples (for desk-scale slices of large sets).
inline Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n >= ds.size()) return ds;
  auto idx = shuffled_indices(ds.size(), seed);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return select(ds, idx, ds.partition);
}

// ---------------------------------------------------------------- IDX

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const char* what) {
  if (b.size() < at + 4) throw FormatError(std::string("truncated IDX header (") + what + ")", b.size());
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) | (std::uint32_t{b[at + 2]} << 8) |
         std::uint32_t{b[at + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace detail

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;
};

inline IdxImages parse_idx_images(const std::vector<std::uint8_t>& b) {
  const std::uint32_t magic = detail::be32(b, 0, "magic");
  if (magic != kIdxImagesMagic) throw FormatError("wrong IDX image magic", 0);
  IdxImages img{detail::be32(b, 4, "count"), detail::be32(b, 8, "rows"), detail::be32(b, 12, "cols"), {}};
  const std::size_t need = img.count * img.rows * img.cols;
  if (b.size() - 16 < need) throw FormatError("truncated IDX image payload", b.size());
  if (b.size() - 16 > need) throw FormatError("trailing bytes after IDX image payload", 16 + need);
  img.pixels.assign(b.begin() + 16, b.end());
  return img;
}

inline std::vector<std::uint8_t> parse_idx_labels(const std::vector<std::uint8_t>& b) {
  const std::uint32_t magic = detail::be32(b, 0, "magic");
  if (magic != kIdxLabelsMagic) throw FormatError("wrong IDX label magic", 0);
  const std::size_t count = detail::be32(b, 4, "count");
  if (b.size() - 8 < count) throw FormatError("truncated IDX label payload", b.size());
  if (b.size() - 8 > count) throw FormatError("trailing bytes after IDX label payload", 8 + count);
  return {b.begin() + 8, b.end()};
}

/// Reads an IDX image/label file pair; pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        Partition partition = Partition::unspecified) {
  const IdxImages img = parse_idx_images(read_file(images_path));
  const std::vector<std::uint8_t> lab = parse_idx_labels(read_file(labels_path));
  if (lab.size() != img.count)
    throw FormatError("label count " + std::to_string(lab.size()) + " does not match image count " +
                          std::to_string(img.count),
                      4);
  Dataset ds;
  ds.name = images_path.filename().string();
  ds.partition = partition;
  ds.images = Tensor({img.count, 1, img.rows, img.cols});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) ds.images[i] = img.pixels[i] / 255.0;
  ds.labels.assign(lab.begin(), lab.end());
  std::size_t max_label = 0;
  for (std::size_t y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = std::max<std::size_t>(2, max_label + 1);
  return ds;
}

/// Writes a single-channel dataset as IDX, quantizing pixels to round(255 v).
inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  if (ds.images.rank() != 4 || ds.images.dim(1) != 1) throw Error("write_idx: expects [n,1,H,W] images");
  std::vector<std::uint8_t> img;
  detail::put_be32(img, kIdxImagesMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, static_cast<std::uint32_t>(ds.images.dim(2)));
  detail::put_be32(img, static_cast<std::uint32_t>(ds.images.dim(3)));
  for (double v : ds.images.values()) img.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  std::vector<std::uint8_t> lab;
  detail::put_be32(lab, kIdxLabelsMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) lab.push_back(static_cast<std::uint8_t>(y));
  write_file(images_path, img);
  write_file(labels_path, lab);
}

// ---------------------------------------------------------------- split

struct SplitSpec {
  double validation_fraction = 0.30;
  double attack_reserve_fraction = 0.30;  // of what remains after validation
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  Dataset validation;
  Dataset attack_reserve;
  Dataset test;
};

struct SplitSizes {
  std::size_t validation = 0, attack_reserve = 0, test = 0;
};

inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  auto in_unit = [](double f) { return f > 0.0 && f < 1.0; };
  if (!in_unit(spec.validation_fraction) || !in_unit(spec.attack_reserve_fraction))
    throw Error("split fractions must lie in (0,1)");
  SplitSizes s;
  s.validation = static_cast<std::size_t>(std::lround(spec.validation_fraction * static_cast<double>(n)));
  s.attack_reserve = static_cast<std::size_t>(std::lround(
      spec.attack_reserve_fraction * (1.0 - spec.validation_fraction) * static_cast<double>(n)));
  if (s.validation + s.attack_reserve >= n || s.validation == 0 || s.attack_reserve == 0)
    throw Error("test partition of " + std::to_string(n) + " samples is too small to split");
  s.test = n - s.validation - s.attack_reserve;
  return s;
}

/// Training data passes through untouched; the original test partition is
/// shuffled and cut into validation, attack reserve and final test parts.
inline Splits split(const Dataset& train, const Dataset& test, const SplitSpec& spec) {
  if (train.partition != Partition::train || test.partition != Partition::test)
    throw Error("split: expected datasets tagged train and test, got " + std::string(partition_name(train.partition)) +
                " and " + partition_name(test.partition));
  const SplitSizes sizes = split_sizes(test.size(), spec);
  const auto idx = shuffled_indices(test.size(), spec.seed);
  auto part = [&](std::size_t begin, std::size_t end, Partition p) {
    return select(test, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                                 idx.begin() + static_cast<std::ptrdiff_t>(end)),
                  p);
  };
  Splits s;
  s.train = train;
  s.validation = part(0, sizes.validation, Partition::validation);
  s.attack_reserve = part(sizes.validation, sizes.validation + sizes.attack_reserve, Partition::attack_reserve);
  s.test = part(sizes.validation + sizes.attack_reserve, test.size(), Partition::final_test);
  return s;
}

// ---------------------------------------------------------------- balancing

inline std::vector<std::size_t> class_counts(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t y : ds.labels) ++counts.at(y);
  return counts;
}

/// Subsamples every class down to the smallest class count. Surviving rows
/// keep their original relative order.
inline Dataset balance_classes(const Dataset& ds, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::size_t min_count = ds.size();
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) throw Error("balance_classes: class " + std::to_string(c) + " is absent from '" + ds.name + "'");
    min_count = std::min(min_count, by_class[c].size());
  }
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (auto& rows : by_class) {
    std::shuffle(rows.begin(), rows.end(), rng);
    keep.insert(keep.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(min_count));
  }
  std::sort(keep.begin(), keep.end());
  return select(ds, keep, ds.partition);
}

// ---------------------------------------------------------------- augmentation

struct Shift {
  int dy = 0, dx = 0;
};

/// Translates every channel of one [C,H,W] image by (dy, dx), filling with 0.
inline void shift_image(const double* src, double* dst, std::size_t C, std::size_t H, std::size_t W, Shift s) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const long si = static_cast<long>(i) - s.dy, sj = static_cast<long>(j) - s.dx;
        const bool inside = si >= 0 && sj >= 0 && si < static_cast<long>(H) && sj < static_cast<long>(W);
        dst[(c * H + i) * W + j] =
            inside ? src[(c * H + static_cast<std::size_t>(si)) * W + static_cast<std::size_t>(sj)] : 0.0;
      }
}

inline std::vector<Shift> draw_shifts(std::size_t n, std::size_t max_shift, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> d(-static_cast<int>(max_shift), static_cast<int>(max_shift));
  std::vector<Shift> out(n);
  for (auto& s : out) {
    s.dy = d(rng);
    s.dx = d(rng);
  }
  return out;
}

inline Dataset augment_shift(const Dataset& ds, std::size_t max_shift, std::uint64_t seed) {
  if (ds.images.rank() != 4) throw Error("augment_shift: expects [n,C,H,W] images");
  const std::size_t C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
  if (max_shift >= std::min(H, W))
    throw Error("augment_shift: max_shift " + std::to_string(max_shift) + " must be below " + std::to_string(std::min(H, W)));
  Dataset out = ds;
  if (max_shift == 0) return out;
  const auto shifts = draw_shifts(ds.size(), max_shift, seed);
  const std::size_t row = C * H * W;
  for (std::size_t i = 0; i < ds.size(); ++i)
    shift_image(ds.images.data() + i * row, out.images.data() + i * row, C, H, W, shifts[i]);
  return out;
}

// ---------------------------------------------------------------- synthetic glyphs

struct SynthOptions {
  double noise = 0.1;        // uniform pixel noise amplitude
  std::size_t max_jitter = 1;  // glyph translation, pixels
  double min_intensity = 0.7;  // stroke brightness lower bound (upper bound 1)
};

namespace detail {

/// Stroke membership for glyph `cls` at pixel (i, j) on a side x side canvas.
inline bool glyph_pixel(std::size_t cls, long i, long j, long side) {
  const long c = side / 2, t = std::max<long>(1, side / 8), lo = side / 4, hi = side - 1 - side / 4;
  auto hbar = [&](long row) { return std::abs(i - row) < t && j >= lo && j <= hi; };
  auto vbar = [&](long col) { return std::abs(j - col) < t && i >= lo && i <= hi; };
  const bool in_box = i >= lo && i <= hi && j >= lo && j <= hi;
  switch (cls) {
    case 0: return hbar(c);
    case 1: return vbar(c);
    case 2: return in_box && std::abs(i - j) < t;
    case 3: return in_box && std::abs(i + j - (side - 1)) < t;
    case 4: return hbar(c) || vbar(c);
    case 5: return in_box && (std::abs(i - j) < t || std::abs(i + j - (side - 1)) < t);
    case 6: return in_box && (i - lo < t || hi - i < t || j - lo < t || hi - j < t);
    case 7: return (i - c) * (i - c) + (j - c) * (j - c) <= (side / 5) * (side / 5);
    case 8: return hbar(lo + t) || hbar(hi - t);
    case 9: return vbar(lo + t) || vbar(hi - t);
    default: return false;
  }
}

}  // namespace detail

/// Renders n single-channel side x side images of class-distinct glyphs
/// (bars, diagonals, crosses, boxes, blobs) with seeded jitter and noise.
/// Labels cycle through the classes, so counts differ by at most one.
inline Dataset synth_generate(std::size_t num_classes, std::size_t n, std::size_t side, std::uint64_t seed,
                              const SynthOptions& opt = {}) {
  if (side < 8) throw Error("synth_generate: side must be >= 8");
  if (num_classes < 2 || num_classes > 10) throw Error("synth_generate: num_classes must lie in [2,10]");
  if (n == 0) throw Error("synth_generate: n must be positive");
  if (opt.noise < 0.0 || opt.min_intensity <= 0.0 || opt.min_intensity > 1.0)
    throw Error("synth_generate: invalid noise or intensity");
  Dataset ds;
  ds.name = "synthetic-glyphs";
  ds.num_classes = num_classes;
  ds.images = Tensor({n, 1, side, side});
  ds.labels.resize(n);
  Rng rng(seed);
  const long jit = static_cast<long>(std::min(opt.max_jitter, side / 8));
  std::uniform_int_distribution<long> jitter(-jit, jit);
  std::uniform_real_distribution<double> intensity(opt.min_intensity, 1.0);
  std::uniform_real_distribution<double> noise(-opt.noise, opt.noise);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t cls = k % num_classes;
    ds.labels[k] = cls;
    const long dy = jitter(rng), dx = jitter(rng);
    const double level = intensity(rng);
    double* img = ds.images.data() + k * side * side;
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        const bool on = detail::glyph_pixel(cls, static_cast<long>(i) - dy, static_cast<long>(j) - dx,
                                            static_cast<long>(side));
        const double v = (on ? level : 0.0) + (opt.noise > 0.0 ? noise(rng) : 0.0);
        img[i * side + j] = std::clamp(v, 0.0, 1.0);
      }
  }
  return ds;
}

// ---------------------------------------------------------------- persistence

inline TensorContainer to_container(const Dataset& ds) {
  TensorContainer c;
  c.header = {{"kind", "dataset"}, {"name", ds.name}, {"num_classes", ds.num_classes},
              {"partition", partition_name(ds.partition)}};
  Tensor labels({ds.size()});
  for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = static_cast<double>(ds.labels[i]);
  c.tensors.push_back({"images", ds.images});
  c.tensors.push_back({"labels", std::move(labels)});
  return c;
}

}  // namespace amc
