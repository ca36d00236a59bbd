#pragma once

// Little-endian binary encoding shared by checkpoints, tensor caches and the
// scenario store. Every writer keeps a running FNV-1a checksum of the bytes
// it has emitted so files can end with an integrity footer.

#include "dramn/adjacency.hpp"
#include "dramn/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace dramn {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) {
    os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    sum_ = fnv1a(p, n, sum_);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void i64(std::int64_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void f64_array(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }

  // rows, cols, then row-major values.
  void matrix(const Matrix& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    f64_array(rm.data(), static_cast<std::size_t>(rm.size()));
  }

  void footer() {
    const std::uint64_t s = sum_;
    os_.write(reinterpret_cast<const char*>(&s), sizeof s);
  }

  std::uint64_t checksum() const { return sum_; }
  bool good() const { return os_.good(); }

 private:
  std::ostream& os_;
  std::uint64_t sum_ = 1469598103934665603ULL;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::istream& is) : is_(is) {}

  void bytes(void* p, std::size_t n) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw DataError("truncated binary file");
    sum_ = fnv1a(p, n, sum_);
  }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, sizeof v); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, sizeof v); return v; }
  std::int64_t i64() { std::int64_t v; bytes(&v, sizeof v); return v; }
  double f64() { double v; bytes(&v, sizeof v); return v; }
  std::string str(std::size_t max_len = 1 << 20) {
    const auto n = u64();
    if (n > max_len) throw DataError("string field too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  Matrix matrix(std::uint64_t max_elems = 1ULL << 31) {
    const auto r = u64();
    const auto c = u64();
    if (r != 0 && c > max_elems / r) throw DataError("matrix field too large");
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Index>(r), static_cast<Index>(c));
    bytes(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
    return rm;
  }

  /// Reads the trailing checksum and compares it against the bytes consumed.
  void verify_footer() {
    const std::uint64_t expected = sum_;
    std::uint64_t stored = 0;
    is_.read(reinterpret_cast<char*>(&stored), sizeof stored);
    if (is_.gcount() != sizeof stored) throw DataError("missing checksum footer");
    if (stored != expected) throw DataError("checksum mismatch");
  }

 private:
  std::istream& is_;
  std::uint64_t sum_ = 1469598103934665603ULL;
};

inline constexpr char kTensorMagic[8] = {'D', 'R', 'A', 'M', 'N', 'A', 'D', 'J'};

/// Header (n, d, t_start) then layer-major, row-major float64 values.
inline void write_tensor(BinaryWriter& w, const AdjacencyTensor& t) {
  w.u64(static_cast<std::uint64_t>(t.n()));
  w.u64(static_cast<std::uint64_t>(t.d()));
  w.i64(t.source_window);
  for (const auto& layer : t.layers) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = layer;
    w.f64_array(rm.data(), static_cast<std::size_t>(rm.size()));
  }
}

inline AdjacencyTensor read_tensor(BinaryReader& r) {
  const auto n = r.u64();
  const auto d = r.u64();
  if (n > 100000 || d > 64) throw DataError("implausible tensor header");
  AdjacencyTensor t;
  t.source_window = r.i64();
  t.layers.reserve(d);
  for (std::uint64_t k = 0; k < d; ++k) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
        static_cast<Index>(n), static_cast<Index>(n));
    r.bytes(rm.data(), static_cast<std::size_t>(rm.size()) * sizeof(double));
    t.layers.emplace_back(rm);
  }
  return t;
}

}  // namespace dramn
