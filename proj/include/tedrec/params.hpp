#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tedrec/error.hpp"
#include "tedrec/tensor.hpp"

namespace tedrec {

struct InitSpec {
  enum class Kind { Zeros, Ones, Normal, Constant };
  Kind kind = Kind::Zeros;
  double value = 0.0;  // std-dev for Normal, fill value for Constant

  static InitSpec zeros() { return {Kind::Zeros, 0.0}; }
  static InitSpec ones() { return {Kind::Ones, 1.0}; }
  static InitSpec normal(double std) { return {Kind::Normal, std}; }
  static InitSpec constant(double v) { return {Kind::Constant, v}; }
};

template <class T>
struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  InitSpec init;
  // Leading dimensions are flattened into rows; the last dimension is cols.
  Matrix<T> value;
};

inline std::pair<std::size_t, std::size_t> flatten_shape(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw InvalidArgument("parameter shape must have at least one dimension");
  const std::size_t cols = shape.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, cols};
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Named trainable arrays in registration order. Entries live in a deque so
// references handed out by add() stay valid as more parameters are added.
template <class T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Matrix<T>& add(const std::string& name, std::vector<std::size_t> shape, InitSpec init) {
    if (index_.count(name)) throw InvalidArgument("duplicate parameter name: " + name);
    auto [rows, cols] = flatten_shape(shape);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(shape), init, Matrix<T>(rows, cols)});
    return entries_.back().value;
  }

  // Fills every entry from its init spec, in registration order.
  void initialize(std::mt19937_64& rng) {
    for (auto& e : entries_) {
      switch (e.init.kind) {
        case InitSpec::Kind::Zeros: e.value.set_zero(); break;
        case InitSpec::Kind::Ones: e.value.fill(T{1}); break;
        case InitSpec::Kind::Constant: e.value.fill(static_cast<T>(e.init.value)); break;
        case InitSpec::Kind::Normal: {
          std::normal_distribution<double> dist(0.0, e.init.value);
          for (auto& v : e.value.flat()) v = static_cast<T>(dist(rng));
          break;
        }
      }
    }
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter: " + name);
    return it->second;
  }
  Matrix<T>& operator[](const std::string& name) { return entries_[index_of(name)].value; }
  const Matrix<T>& operator[](const std::string& name) const { return entries_[index_of(name)].value; }

  std::size_t size() const { return entries_.size(); }
  ParamEntry<T>& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& entry(std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  // Value snapshot for keeping the best model during training.
  std::vector<Matrix<T>> snapshot() const {
    std::vector<Matrix<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }
  void restore(const std::vector<Matrix<T>>& snap) {
    if (snap.size() != entries_.size()) throw InvalidArgument("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!snap[i].same_shape(entries_[i].value)) throw InvalidArgument("restore: shape mismatch for " + entries_[i].name);
      // copy in place: views into the value buffers must stay valid
      std::copy(snap[i].flat().begin(), snap[i].flat().end(), entries_[i].value.flat().begin());
    }
  }

 private:
  std::deque<ParamEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

// Gradients aligned index-for-index with a ParamStore.
template <class T>
class GradStore {
 public:
  GradStore() = default;
  explicit GradStore(const ParamStore<T>& params) {
    for (const auto& e : params) grads_.emplace_back(e.value.rows(), e.value.cols());
  }

  std::size_t size() const { return grads_.size(); }
  Matrix<T>& operator[](std::size_t i) { return grads_[i]; }
  const Matrix<T>& operator[](std::size_t i) const { return grads_[i]; }

  void zero() {
    for (auto& g : grads_) g.set_zero();
  }
  void add(const GradStore& other) {
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      auto dst = grads_[i].flat();
      auto src = other.grads_[i].flat();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }
  void scale(T s) {
    for (auto& g : grads_) {
      for (auto& v : g.flat()) v *= s;
    }
  }
  bool matches(const ParamStore<T>& params) const {
    if (params.size() != grads_.size()) return false;
    for (std::size_t i = 0; i < grads_.size(); ++i) {
      if (!grads_[i].same_shape(params.entry(i).value)) return false;
    }
    return true;
  }

 private:
  std::vector<Matrix<T>> grads_;
};

// ---------------------------------------------------------------------------
// Checkpoint file:
//   "TEDCKPT1"
//   u64 entry count
//   per entry: u32 name length, name bytes, u32 rank, rank x u64 dims,
//              prod(dims) x f64 values
// All integers and floats little-endian.

inline constexpr char kCheckpointMagic[8] = {'T', 'E', 'D', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}
  std::uint64_t u(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string str(std::size_t len) {
    need(len);
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw IoError(source_ + ": truncated file");
  }
  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

template <class T>
std::string encode_checkpoint(const ParamStore<T>& params) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, params.size());
  for (const auto& e : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto dim : e.shape) detail::put_u64(out, dim);
    for (T v : e.value.flat()) detail::put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  return out;
}

// Loads values into an already-registered store. Every name and shape must
// match; the first mismatch is reported by parameter name.
template <class T>
void decode_checkpoint(const std::string& bytes, ParamStore<T>& params, const std::string& source = "checkpoint") {
  detail::ByteReader r(bytes, source);
  if (r.str(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw IoError(source + ": bad magic (expected TEDCKPT1)");
  }
  const std::uint64_t count = r.u(8);
  if (count != params.size()) {
    throw DataError(source + ": holds " + std::to_string(count) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  std::vector<std::vector<T>> staged(count);  // nothing is written unless the whole file matches
  for (std::size_t i = 0; i < count; ++i) {
    const auto& e = params.entry(i);
    const std::string name = r.str(r.u(4));
    if (name != e.name) throw DataError(source + ": parameter " + std::to_string(i) + " is '" + name + "', expected '" + e.name + "'");
    std::vector<std::size_t> shape(r.u(4));
    for (auto& dim : shape) dim = r.u(8);
    if (shape != e.shape) {
      throw DataError(source + ": shape mismatch for parameter '" + name + "': file " + shape_string(shape) +
                      ", model " + shape_string(e.shape));
    }
    staged[i].resize(e.value.size());
    for (auto& v : staged[i]) v = static_cast<T>(std::bit_cast<double>(r.u(8)));
  }
  if (!r.at_end()) throw IoError(source + ": trailing bytes after last parameter");
  for (std::size_t i = 0; i < count; ++i) std::copy(staged[i].begin(), staged[i].end(), params.entry(i).value.flat().begin());
}

template <class T>
void save_checkpoint(const ParamStore<T>& params, const std::string& path) {
  detail::write_file_bytes(path, encode_checkpoint(params));
}

template <class T>
void load_checkpoint(const std::string& path, ParamStore<T>& params) {
  decode_checkpoint(detail::read_file_bytes(path), params, path);
}

}  // namespace tedrec
