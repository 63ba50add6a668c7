#pragma once

#include <cstring>
#include <fstream>
#include <vector>

#include "bobk/common.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Uniform Cartesian grid in frequency space, nodes xi_i = -R_max + i*h.
// N is odd so the origin is a node.
// ---------------------------------------------------------------------------

struct SpectralGrid {
  double r_max = 16.0;
  int n = 49;

  SpectralGrid() = default;
  SpectralGrid(double R, int N) : r_max(R), n(N) {
    if (N < 3 || N % 2 == 0) fail("SpectralGrid: N must be odd and >= 3");
    if (!(R > 0)) fail("SpectralGrid: R_max must be positive");
  }

  double h() const { return 2.0 * r_max / (n - 1); }
  // (i - center) * h: the origin node is exactly 0 and coord(n-1-i) is
  // exactly -coord(i), which the Hermitian mirroring relies on
  double coord(int i) const { return (i - (n - 1) / 2) * h(); }
  Vec3 node(int i, int j, int k) const { return {coord(i), coord(j), coord(k)}; }
  std::int64_t size() const { return std::int64_t(n) * n * n; }
  // i-fastest linear index
  std::int64_t lin(int i, int j, int k) const {
    return std::int64_t(i) + std::int64_t(n) * (std::int64_t(j) + std::int64_t(n) * k);
  }
  void unlin(std::int64_t idx, int& i, int& j, int& k) const {
    i = int(idx % n);
    j = int((idx / n) % n);
    k = int(idx / (std::int64_t(n) * n));
  }
  int origin_index() const { return (n - 1) / 2; }
  std::int64_t origin_lin() const {
    int c = origin_index();
    return lin(c, c, c);
  }
  std::int64_t mirror(std::int64_t idx) const {
    int i, j, k;
    unlin(idx, i, j, k);
    return lin(n - 1 - i, n - 1 - j, n - 1 - k);
  }
  bool operator==(const SpectralGrid& o) const { return n == o.n && r_max == o.r_max; }
};

// Nodes inside the inscribed ball |xi| <= R_max. Evolution and norms operate
// on these; cube corners outside the ball stay frozen at initial data.
struct BallMask {
  std::vector<std::uint8_t> inside;          // per linear index
  std::vector<std::int64_t> indices;         // masked linear indices
  std::vector<std::int64_t> half_indices;    // masked indices with idx <= mirror(idx)

  std::int64_t count() const { return std::int64_t(indices.size()); }
};

inline BallMask restrict_to_ball(const SpectralGrid& g) {
  BallMask m;
  m.inside.assign(g.size(), 0);
  double r2 = g.r_max * g.r_max * (1.0 + 1e-14);
  for (int k = 0; k < g.n; ++k)
    for (int j = 0; j < g.n; ++j)
      for (int i = 0; i < g.n; ++i) {
        std::int64_t idx = g.lin(i, j, k);
        if (norm2(g.node(i, j, k)) <= r2) {
          m.inside[idx] = 1;
          m.indices.push_back(idx);
          if (idx <= g.mirror(idx)) m.half_indices.push_back(idx);
        }
      }
  return m;
}

// ---------------------------------------------------------------------------
// Complex field sample psi(xi_ijk); split real/imaginary storage.
// ---------------------------------------------------------------------------

struct CharField {
  SpectralGrid grid;
  std::vector<double> re, im;
  double time = 0.0;

  CharField() = default;
  explicit CharField(const SpectralGrid& g, double t = 0.0)
      : grid(g), re(g.size(), 0.0), im(g.size(), 0.0), time(t) {}

  cplx value(std::int64_t idx) const { return {re[idx], im[idx]}; }
  void set(std::int64_t idx, cplx v) {
    re[idx] = v.real();
    im[idx] = v.imag();
  }
  cplx at(int i, int j, int k) const { return value(grid.lin(i, j, k)); }
  cplx origin_value() const { return value(grid.origin_lin()); }

  double max_abs(const BallMask& mask) const {
    double m = 0.0;
    for (auto idx : mask.indices)
      m = std::max(m, std::abs(value(idx)));
    return m;
  }
  // max over masked nodes of |psi(-xi) - conj(psi(xi))|
  double hermitian_drift(const BallMask& mask) const {
    double d = 0.0;
    for (auto idx : mask.half_indices) {
      cplx a = value(idx), b = value(grid.mirror(idx));
      d = std::max(d, std::abs(b - std::conj(a)));
    }
    return d;
  }

  struct InvariantReport {
    bool ok = true;
    std::string message;
  };
  InvariantReport check_invariants(const BallMask& mask, double tol_drift = 1e-6) const {
    InvariantReport r;
    if (std::abs(origin_value() - cplx(1.0, 0.0)) > 1e-12) {
      r.ok = false;
      r.message = "origin node differs from 1";
      return r;
    }
    if (max_abs(mask) > 1.0 + tol_drift) {
      r.ok = false;
      r.message = "|psi| exceeds 1 + tol_drift";
      return r;
    }
    if (hermitian_drift(mask) > tol_drift) {
      r.ok = false;
      r.message = "Hermitian symmetry drift exceeds tol_drift";
      return r;
    }
    return r;
  }
};

// ---------------------------------------------------------------------------
// Tricubic interpolation (4-point Lagrange per axis, exact for per-axis
// cubics, O(h^4) on smooth data). Queries are canonicalized to the
// lexicographically nonnegative half-space and conjugated back, so
// interpolate(-xi) == conj(interpolate(xi)) holds by construction.
// ---------------------------------------------------------------------------

namespace detail {

// Lagrange basis for 4 consecutive nodes; t in node units relative to the
// first stencil node (t in [1,2] in the interior, wider at clamped faces).
inline void cubic_weights(double t, double w[4]) {
  double t1 = t, t2 = t - 1.0, t3 = t - 2.0, t4 = t - 3.0;
  double t34 = t3 * t4, t12 = t1 * t2;
  w[0] = t2 * t34 * (-1.0 / 6.0);
  w[1] = t1 * t34 * 0.5;
  w[2] = t12 * t4 * (-0.5);
  w[3] = t12 * t3 * (1.0 / 6.0);
}

inline void stencil_1d(const SpectralGrid& g, double x, int& base, double w[4]) {
  double u = (x + g.r_max) / g.h();
  int b = int(std::floor(u)) - 1;
  b = std::clamp(b, 0, g.n - 4);
  cubic_weights(u - b, w);
  base = b;
}

inline bool lex_negative(Vec3 x) {
  if (x.x != 0.0) return x.x < 0.0;
  if (x.y != 0.0) return x.y < 0.0;
  return x.z < 0.0;
}

}  // namespace detail

inline cplx interpolate(const CharField& f, Vec3 xi) {
  const SpectralGrid& g = f.grid;
  if (norm2(xi) > g.r_max * g.r_max * (1.0 + 1e-12))
    fail("interpolate: point outside |xi| <= R_max (geometry bug upstream)");
  bool flip = detail::lex_negative(xi);
  if (flip) xi = -xi;
  int bx, by, bz;
  double wx[4], wy[4], wz[4];
  detail::stencil_1d(g, xi.x, bx, wx);
  detail::stencil_1d(g, xi.y, by, wy);
  detail::stencil_1d(g, xi.z, bz, wz);
  double vr = 0.0, vi = 0.0;
  for (int c = 0; c < 4; ++c)
    for (int b = 0; b < 4; ++b) {
      const std::int64_t row = g.lin(bx, by + b, bz + c);
      const double wyz = wy[b] * wz[c];
      double rr = 0.0, ri = 0.0;
      for (int a = 0; a < 4; ++a) {
        rr += wx[a] * f.re[row + a];
        ri += wx[a] * f.im[row + a];
      }
      vr += wyz * rr;
      vi += wyz * ri;
    }
  return flip ? cplx(vr, -vi) : cplx(vr, vi);
}

// ---------------------------------------------------------------------------
// Binary dump: 32-byte header (magic "BOBK", version, N, pad, R_max, t),
// then interleaved (re, im) doubles in i-fastest order, little-endian.
// ---------------------------------------------------------------------------

namespace detail {
struct DumpHeader {
  char magic[4];
  std::uint32_t version;
  std::uint32_t n;
  std::uint32_t pad;
  double r_max;
  double t;
};
static_assert(sizeof(DumpHeader) == 32, "dump header must be 32 bytes");
}  // namespace detail

inline void dump_field(const CharField& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("dump_field: cannot open " + path);
  detail::DumpHeader h{};
  std::memcpy(h.magic, "BOBK", 4);
  h.version = 1;
  h.n = std::uint32_t(f.grid.n);
  h.pad = 0;
  h.r_max = f.grid.r_max;
  h.t = f.time;
  out.write(reinterpret_cast<const char*>(&h), sizeof(h));
  std::vector<double> buf(2 * f.grid.size());
  for (std::int64_t i = 0; i < f.grid.size(); ++i) {
    buf[2 * i] = f.re[i];
    buf[2 * i + 1] = f.im[i];
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(double)));
  if (!out) fail("dump_field: write failed for " + path);
}

inline CharField load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("load_field: cannot open " + path);
  detail::DumpHeader h{};
  in.read(reinterpret_cast<char*>(&h), sizeof(h));
  if (!in || std::memcmp(h.magic, "BOBK", 4) != 0) fail("load_field: bad magic");
  if (h.version != 1) fail("load_field: unsupported version");
  CharField f(SpectralGrid(h.r_max, int(h.n)), h.t);
  std::vector<double> buf(2 * f.grid.size());
  in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(double)));
  if (!in) fail("load_field: truncated file");
  for (std::int64_t i = 0; i < f.grid.size(); ++i) {
    f.re[i] = buf[2 * i];
    f.im[i] = buf[2 * i + 1];
  }
  return f;
}

}  // namespace bobk
