#pragma once

// Binary tensor container shared by model checkpoints, adversarial batches and
// persisted datasets:
//
//   "AMCM" | u16 version | u32 header length | header JSON (canonical dump)
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 extents..., little-endian f64 payload
//
// All integers are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "amc/model.hpp"
#include "amc/tensor.hpp"
#include "json.hpp"

namespace amc {

inline constexpr char kContainerMagic[4] = {'A', 'M', 'C', 'M'};
inline constexpr std::uint16_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct TensorContainer {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor& at(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw Error("container has no tensor named '" + name + "'");
  }
};

namespace detail {

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
  }
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode(const TensorContainer& c) {
  std::vector<std::uint8_t> out(std::begin(kContainerMagic), std::end(kContainerMagic));
  detail::put_le(out, kContainerVersion);
  const std::string header = c.header.dump();
  detail::put_le(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  detail::put_le(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    detail::put_le(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_le(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) detail::put_le(out, static_cast<std::uint64_t>(e));
    for (double v : t.values()) detail::put_le(out, v);
  }
  return out;
}

inline TensorContainer decode(const std::vector<std::uint8_t>& buf) {
  detail::Reader r(buf);
  if (r.bytes(4, "magic") != std::string(kContainerMagic, 4)) throw FormatError("bad magic, expected AMCM", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version), r.offset() - 2);
  TensorContainer c;
  const auto hlen = r.get<std::uint32_t>("header length");
  const std::size_t hstart = r.offset();
  try {
    c.header = nlohmann::json::parse(r.bytes(hlen, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("corrupt header: ") + e.what(), hstart);
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.bytes(r.get<std::uint32_t>("name length"), "tensor name");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(r.get<std::uint64_t>("extent"));
    const std::size_t n = shape_size(shape);
    if (n > (buf.size() - r.offset()) / sizeof(double)) throw FormatError("truncated tensor payload", r.offset());
    Buffer data(n);
    for (double& v : data) v = r.get<double>("tensor payload");
    nt.value = Tensor(std::move(shape), std::move(data));
    c.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.offset());
  return c;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("short write to '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_container(const TensorContainer& c, const std::filesystem::path& path) {
  write_file(path, encode(c));
}
inline TensorContainer load_container(const std::filesystem::path& path) { return decode(read_file(path)); }

// ---------------------------------------------------------------- models

inline TensorContainer to_container(const ModelState& m) {
  TensorContainer c;
  c.header = {{"kind", "model"}, {"spec", m.spec}, {"seed", m.seed}};
  for (const Param& p : m.params) c.tensors.push_back({p.name, p.value});
  return c;
}

inline ModelState model_from_container(const TensorContainer& c) {
  if (c.header.value("kind", "") != "model") throw FormatError("container does not hold a model", 0);
  ModelState m;
  try {
    m.spec = c.header.at("spec").get<ArchitectureSpec>();
    m.seed = c.header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad model header: ") + e.what(), 0);
  }
  const auto shapes = detail::param_shapes(m.spec);
  if (shapes.size() != c.tensors.size())
    throw FormatError("model expects " + std::to_string(shapes.size()) + " tensors, file holds " +
                          std::to_string(c.tensors.size()),
                      0);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].name != c.tensors[i].name || shapes[i].shape != c.tensors[i].value.shape())
      throw FormatError("tensor '" + c.tensors[i].name + "' does not match architecture slot '" + shapes[i].name + "'", 0);
    m.params.push_back({c.tensors[i].name, c.tensors[i].value});
  }
  return m;
}

inline void save(const ModelState& m, const std::filesystem::path& path) { save_container(to_container(m), path); }
inline ModelState load(const std::filesystem::path& path) { return model_from_container(load_container(path)); }

}  // namespace amc
