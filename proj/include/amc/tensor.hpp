#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace amc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A rejected binary payload; carries the byte offset where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// 64-byte aligned allocation. Eigen's vectorized kernels choose their
/// peeling by pointer alignment, so a fixed alignment keeps floating-point
/// summation order, and hence every result, identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) { check(); }
  Tensor(Shape shape, const std::vector<double>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check();
  }
  Tensor(Shape shape, std::initializer_list<double> data) : shape_(std::move(shape)), data_(data) { check(); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Buffer& values() noexcept { return data_; }
  const Buffer& values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Elements per leading-axis slice (e.g. per sample of a batch).
  std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : size() / shape_[0]; }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw Error("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check() const {
    if (shape_size(shape_) != data_.size())
      throw Error("tensor shape " + shape_str(shape_) + " does not match " + std::to_string(data_.size()) +
                  " values");
  }

  Shape shape_;
  Buffer data_;
};

/// Rows [begin, end) of the leading axis.
inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t row = t.row_size();
  Shape shape = t.shape();
  shape[0] = end - begin;
  Buffer data(t.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                           t.values().begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(shape), std::move(data));
}

/// Rows at the given leading-axis indices, in order.
inline Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  const std::size_t row = t.row_size();
  Shape shape = t.shape();
  shape[0] = rows.size();
  Buffer data;
  data.reserve(rows.size() * row);
  for (std::size_t r : rows) {
    auto first = t.values().begin() + static_cast<std::ptrdiff_t>(r * row);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(row));
  }
  return Tensor(std::move(shape), std::move(data));
}

/// Concatenates along the leading axis; inner shapes must agree.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.empty() && a.rank() == 0) return b;
  if (b.empty() && b.rank() == 0) return a;
  Shape inner_a(a.shape().begin() + 1, a.shape().end());
  Shape inner_b(b.shape().begin() + 1, b.shape().end());
  if (inner_a != inner_b)
    throw Error("cannot concatenate " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  Buffer data = a.values();
  data.insert(data.end(), b.values().begin(), b.values().end());
  return Tensor(std::move(shape), std::move(data));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw Error("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace amc
