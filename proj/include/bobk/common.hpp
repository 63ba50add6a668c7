#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace bobk {

using cplx = std::complex<double>;

constexpr double pi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// small vector/matrix types
// ---------------------------------------------------------------------------

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3 operator-(Vec3 a) { return {-a.x, -a.y, -a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm2(Vec3 a) { return dot(a, a); }
inline double norm(Vec3 a) { return std::sqrt(norm2(a)); }
inline Vec3 normalized(Vec3 a) {
  double n = norm(a);
  return n > 0 ? (1.0 / n) * a : Vec3{0, 0, 0};
}

// Symmetric 3x3 matrix, row-major storage of the full matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }
  static Mat3 scaled_identity(double s) {
    Mat3 r;
    r.m = {s, 0, 0, 0, s, 0, 0, 0, s};
    return r;
  }
  double operator()(int i, int j) const { return m[3 * i + j]; }
  double& operator()(int i, int j) { return m[3 * i + j]; }

  double quad_form(Vec3 v) const {
    Vec3 mv{m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
    return dot(v, mv);
  }
  double trace() const { return m[0] + m[4] + m[8]; }
};

inline Mat3 operator-(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (int i = 0; i < 9; ++i) r.m[i] = a.m[i] - b.m[i];
  return r;
}

// Eigenvalues of a symmetric 3x3 matrix (analytic, ascending order).
inline std::array<double, 3> sym3_eigenvalues(const Mat3& a) {
  double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  if (p1 < 1e-300) {
    std::array<double, 3> ev{a(0, 0), a(1, 1), a(2, 2)};
    std::sort(ev.begin(), ev.end());
    return ev;
  }
  double q = a.trace() / 3.0;
  double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
              (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
  double p = std::sqrt(p2 / 6.0);
  Mat3 b;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b(i, j) = (a(i, j) - (i == j ? q : 0.0)) / p;
  double detb = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
  double r = std::clamp(detb / 2.0, -1.0, 1.0);
  double phi = std::acos(r) / 3.0;
  double e1 = q + 2.0 * p * std::cos(phi);
  double e3 = q + 2.0 * p * std::cos(phi + 2.0 * pi / 3.0);
  double e2 = 3.0 * q - e1 - e3;
  std::array<double, 3> ev{e1, e2, e3};
  std::sort(ev.begin(), ev.end());
  return ev;
}

// Cholesky-based positive-semidefiniteness test with a relative tolerance.
inline bool is_psd(const Mat3& a, double tol = 1e-10) {
  auto ev = sym3_eigenvalues(a);
  double scale = std::max({std::abs(ev[0]), std::abs(ev[2]), 1e-30});
  return ev[0] >= -tol * scale;
}

// ---------------------------------------------------------------------------
// compensated summation
// ---------------------------------------------------------------------------

// Kahan-Neumaier accumulator; used wherever a fixed, reproducible summation
// order matters.
struct KahanSum {
  double s = 0, c = 0;
  void add(double x) {
    double t = s + x;
    if (std::abs(s) >= std::abs(x))
      c += (s - t) + x;
    else
      c += (x - t) + s;
    s = t;
  }
  double value() const { return s + c; }
};

struct KahanSumC {
  KahanSum re, im;
  void add(cplx z) {
    re.add(z.real());
    im.add(z.imag());
  }
  cplx value() const { return {re.value(), im.value()}; }
};

// ---------------------------------------------------------------------------
// threading
// ---------------------------------------------------------------------------

inline int worker_count() {
#if defined(_OPENMP)
  int hw = omp_get_max_threads();
#else
  int hw = 1;
#endif
  if (const char* e = std::getenv("BOBK_THREADS")) {
    int v = std::atoi(e);
    if (v > 0) return std::min(v, 256);
  }
  return hw;
}

// Parallel loop over [0, n). Each index writes only its own outputs, so the
// result is independent of the worker count.
template <class F>
inline void parallel_for(std::int64_t n, F&& f) {
#if defined(_OPENMP)
  int nw = worker_count();
#pragma omp parallel for schedule(static) num_threads(nw)
  for (std::int64_t i = 0; i < n; ++i) f(i);
#else
  for (std::int64_t i = 0; i < n; ++i) f(i);
#endif
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

// Shortest round-trip decimal form; used for all CSV/JSON number output so
// that emitted files are reproducible byte-for-byte.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // prefer a shorter representation when it round-trips
  for (int prec = 1; prec <= 16; ++prec) {
    char tmp[40];
    std::snprintf(tmp, sizeof(tmp), "%.*g", prec, v);
    if (std::strtod(tmp, nullptr) == v) return tmp;
  }
  return buf;
}

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

[[noreturn]] inline void fail(const std::string& what) { throw std::runtime_error(what); }

}  // namespace bobk
