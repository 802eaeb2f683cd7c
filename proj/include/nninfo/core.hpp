#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <utility>
#include <vector>

namespace nninfo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define NNINFO_DEFINE_ERROR(Name, Kind)                            \
  class Name : public Error {                                      \
   public:                                                         \
    explicit Name(const std::string& what) : Error(what) {}        \
    const char* kind() const noexcept override { return Kind; }    \
  };

NNINFO_DEFINE_ERROR(ShapeError, "shape")
NNINFO_DEFINE_ERROR(ArgumentError, "argument")
NNINFO_DEFINE_ERROR(CapacityError, "capacity")
NNINFO_DEFINE_ERROR(FormError, "form")
NNINFO_DEFINE_ERROR(NumericalError, "numerical")
NNINFO_DEFINE_ERROR(StabilityUndefinedError, "stability-undefined")
NNINFO_DEFINE_ERROR(DegeneratePlaneError, "degenerate-plane")

#undef NNINFO_DEFINE_ERROR

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  const char* kind() const noexcept override { return "divergence"; }
  long step() const noexcept { return step_; }

 private:
  long step_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ArgumentError(msg);
}

// Full k x k curvature matrices are only formed below this size.
inline constexpr std::size_t kDenseCap = 2000;

inline void require_dense(std::size_t k) {
  if (k > kDenseCap)
    throw CapacityError("k = " + std::to_string(k) + " exceeds the dense-matrix cap of " +
                        std::to_string(kDenseCap) +
                        "; use the trace/diagonal estimators instead");
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Dense row-major array of doubles with an explicit shape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<double> data, std::vector<std::size_t> shape)
      : data_(std::move(data)), shape_(std::move(shape)) {
    std::size_t n = 1;
    for (auto s : shape_) n *= s;
    if (n != data_.size()) throw ShapeError("tensor data length does not match shape");
    check_finite();
  }

  static Tensor vector(std::vector<double> v) {
    const auto n = v.size();
    return Tensor(std::move(v), {n});
  }

  static Tensor from(const RowMatrix& m) {
    std::vector<double> d(m.data(), m.data() + m.size());
    return Tensor(std::move(d), {static_cast<std::size_t>(m.rows()),
                                 static_cast<std::size_t>(m.cols())});
  }

  static Tensor from(const Vector& v) {
    return vector(std::vector<double>(v.data(), v.data() + v.size()));
  }

  const std::vector<double>& data() const noexcept { return data_; }
  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  /// Rank-1 tensors are viewed as a single row.
  RowMatrix as_rows() const {
    if (rank() == 1) {
      return Eigen::Map<const RowMatrix>(data_.data(), 1, static_cast<Eigen::Index>(shape_[0]));
    }
    if (rank() == 2) {
      return Eigen::Map<const RowMatrix>(data_.data(), static_cast<Eigen::Index>(shape_[0]),
                                         static_cast<Eigen::Index>(shape_[1]));
    }
    throw ShapeError("expected a rank-1 or rank-2 tensor");
  }

 private:
  void check_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) throw NumericalError("tensor contains non-finite entries");
  }

  std::vector<double> data_;
  std::vector<std::size_t> shape_;
};

// ---------------------------------------------------------------------------
// WeightVector
// ---------------------------------------------------------------------------

struct Segment {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Segment&) const = default;
};

/// Flat parameter vector plus the layer layout that maps segments to
/// parameter blocks (row-major within a segment).
class WeightVector {
 public:
  WeightVector() = default;
  WeightVector(Vector values, std::vector<Segment> layout)
      : values_(std::move(values)), layout_(std::move(layout)) {
    std::size_t total = 0;
    for (const auto& s : layout_) total += s.size();
    if (total != static_cast<std::size_t>(values_.size()))
      throw ShapeError("weight layout does not cover the value vector");
    if (values_.size() == 0) throw ShapeError("weight vector must have k > 0");
    if (!values_.allFinite()) throw NumericalError("weight vector contains non-finite entries");
  }

  /// A flat vector with a single unnamed segment.
  static WeightVector flat(Vector values) {
    const auto k = static_cast<std::size_t>(values.size());
    return WeightVector(std::move(values), {Segment{"w", k, 1}});
  }

  std::size_t k() const noexcept { return static_cast<std::size_t>(values_.size()); }
  const Vector& values() const noexcept { return values_; }
  const std::vector<Segment>& layout() const noexcept { return layout_; }

  std::size_t offset_of(std::size_t segment) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < segment; ++i) off += layout_.at(i).size();
    return off;
  }

  /// Same layout, new values.
  WeightVector with_values(Vector v) const { return WeightVector(std::move(v), layout_); }

 private:
  Vector values_;
  std::vector<Segment> layout_;
};

// ---------------------------------------------------------------------------
// Seeds and random streams
// ---------------------------------------------------------------------------

struct Seed {
  std::uint64_t value = 0;
  bool operator==(const Seed&) const = default;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent child stream for trial `index` of a master seed.
inline Seed derive(Seed master, std::uint64_t index) {
  return Seed{splitmix64(splitmix64(master.value) ^ splitmix64(index + 0x632be59bd9b4e019ULL))};
}

using Rng = std::mt19937_64;

inline Rng make_rng(Seed s) { return Rng(splitmix64(s.value)); }

/// Standard normal draws via Box-Muller on the raw engine output, so streams
/// are identical across standard-library implementations.
class Normal {
 public:
  double operator()(Rng& rng) {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  static double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

 private:
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * Normal::uniform01(rng); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Rejection sampling keeps this independent of the library's distributions.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

// ---------------------------------------------------------------------------
// Deterministic parallel map
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index owns its
/// output slot, so results do not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const unsigned count = std::min<unsigned>(jobs, static_cast<unsigned>(n));
  pool.reserve(count);
  for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Number formatting
// ---------------------------------------------------------------------------

/// Shortest representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ArgumentError("cannot parse number '" + std::string(s) + "'");
  return v;
}

}  // namespace nninfo
