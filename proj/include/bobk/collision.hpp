#pragma once

#include <memory>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "bobk/common.hpp"
#include "bobk/fastmath.hpp"
#include "bobk/grid.hpp"
#include "bobk/kernel.hpp"
#include "bobk/measures.hpp"
#include "bobk/quadrature.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Collision geometry xi^± = xi/2 ± (|xi|/2) sigma and the projection/
// reflection points used by the regularized splitting.
// ---------------------------------------------------------------------------

struct CollisionGeometry {
  Vec3 xi, sigma;
  Vec3 xi_plus, xi_minus;
  Vec3 zeta;           // (xi^+ . xi/|xi|) xi/|xi|
  Vec3 xi_plus_tilde;  // 2 zeta - xi^+, the reflection of xi^+ about the xi axis
  Vec3 eta_plus;       // xi^+ - zeta
};

inline CollisionGeometry xi_pm(Vec3 xi, Vec3 sigma) {
  if (std::abs(norm(sigma) - 1.0) > 1e-12)
    throw std::invalid_argument("xi_pm: sigma must be a unit vector");
  CollisionGeometry g;
  g.xi = xi;
  g.sigma = sigma;
  double n = norm(xi);
  g.xi_plus = 0.5 * xi + (0.5 * n) * sigma;
  g.xi_minus = xi - g.xi_plus;
  Vec3 om = n > 0 ? (1.0 / n) * xi : Vec3{0, 0, 1};
  g.zeta = dot(g.xi_plus, om) * om;
  g.eta_plus = g.xi_plus - g.zeta;
  g.xi_plus_tilde = g.zeta - g.eta_plus;
  return g;
}

// Orthonormal frame (e1, e2) perpendicular to xi; e1 built by Gram-Schmidt
// against the coordinate axis with the smallest |xi| component (ties pick the
// lowest index), e2 = omega x e1. This fixes the phi origin deterministically.
inline void phi_frame(Vec3 xi, Vec3& e1, Vec3& e2) {
  Vec3 om = normalized(xi);
  int a = 0;
  double best = std::abs(xi.x);
  if (std::abs(xi.y) < best) {
    best = std::abs(xi.y);
    a = 1;
  }
  if (std::abs(xi.z) < best) a = 2;
  Vec3 axis{a == 0 ? 1.0 : 0.0, a == 1 ? 1.0 : 0.0, a == 2 ? 1.0 : 0.0};
  e1 = normalized(axis - dot(axis, om) * om);
  e2 = cross(om, e1);
}

// ---------------------------------------------------------------------------
// Fast float-precision interpolation of the residual field delta = psi - psi0.
// The carrier supplies the smooth part in double precision; the residual is
// small whenever the field is near its initial datum, so float storage costs
// nothing measurable against the quadrature tolerances.
// ---------------------------------------------------------------------------

namespace detail {

// Geometry constants hoisted out of the interpolation inner loop.
struct InterpParams {
  double r_max, inv_h;
  int n;
  explicit InterpParams(const SpectralGrid& g)
      : r_max(g.r_max), inv_h(1.0 / g.h()), n(g.n) {}
};

inline void stencil_fast(double x, const InterpParams& p, int& base, double w[4]) {
  double u = (x + p.r_max) * p.inv_h;
  int b = int(u) - 1;  // u >= 0 on the domain, so int() truncates like floor
  b = b < 0 ? 0 : (b > p.n - 4 ? p.n - 4 : b);
  cubic_weights(u - b, w);
  base = b;
}

// Tricubic interpolation of the residual field, stored as interleaved
// (re, im) float pairs. One grid row of the stencil is 8 consecutive floats,
// which maps onto a single 256-bit lane group.
inline cplx interp_delta_f(const InterpParams& g, const float* d, Vec3 xi) {
  // branchless sign canonicalization: evaluate in the lexicographically
  // nonnegative half-space and conjugate back
  double key = xi.x;
  key = (key == 0.0) ? xi.y : key;
  key = (key == 0.0) ? xi.z : key;
  const double sgn = key < 0.0 ? -1.0 : 1.0;
  xi = sgn * xi;
  int bx, by, bz;
  double wxd[4], wyd[4], wzd[4];
  stencil_fast(xi.x, g, bx, wxd);
  stencil_fast(xi.y, g, by, wyd);
  stencil_fast(xi.z, g, bz, wzd);
  const std::int64_t n = g.n, n2 = n * n;
  const float* base = d + 2 * (bx + n * by + n2 * bz);
#if defined(__AVX2__) && defined(__FMA__)
  __m256 wx = _mm256_setr_ps(float(wxd[0]), float(wxd[0]), float(wxd[1]), float(wxd[1]),
                             float(wxd[2]), float(wxd[2]), float(wxd[3]), float(wxd[3]));
  // r_b = sum_c wz_c row(b,c): 4 broadcasts of wz, then fold with wy
  __m256 r0 = _mm256_setzero_ps(), r1 = r0, r2 = r0, r3 = r0;
  for (int c = 0; c < 4; ++c) {
    const float* pc = base + 2 * n2 * c;
    const __m256 wz = _mm256_set1_ps(float(wzd[c]));
    r0 = _mm256_fmadd_ps(wz, _mm256_loadu_ps(pc), r0);
    r1 = _mm256_fmadd_ps(wz, _mm256_loadu_ps(pc + 2 * n), r1);
    r2 = _mm256_fmadd_ps(wz, _mm256_loadu_ps(pc + 4 * n), r2);
    r3 = _mm256_fmadd_ps(wz, _mm256_loadu_ps(pc + 6 * n), r3);
  }
  __m256 acc = _mm256_mul_ps(r0, _mm256_set1_ps(float(wyd[0])));
  acc = _mm256_fmadd_ps(r1, _mm256_set1_ps(float(wyd[1])), acc);
  acc = _mm256_fmadd_ps(r2, _mm256_set1_ps(float(wyd[2])), acc);
  acc = _mm256_fmadd_ps(r3, _mm256_set1_ps(float(wyd[3])), acc);
  acc = _mm256_mul_ps(acc, wx);
  __m128 s = _mm_add_ps(_mm256_castps256_ps128(acc), _mm256_extractf128_ps(acc, 1));
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  double vr = _mm_cvtss_f32(s);
  double vi = _mm_cvtss_f32(_mm_shuffle_ps(s, s, 1));
  return {vr, sgn * vi};
#else
  float wx[4] = {float(wxd[0]), float(wxd[1]), float(wxd[2]), float(wxd[3])};
  float vr = 0.f, vi = 0.f;
  for (int c = 0; c < 4; ++c)
    for (int b = 0; b < 4; ++b) {
      const float* row = base + 2 * (n * b + n2 * c);
      const float wyz = float(wyd[b] * wzd[c]);
      float rr = 0.f, ri = 0.f;
      for (int a = 0; a < 4; ++a) {
        rr += wx[a] * row[2 * a];
        ri += wx[a] * row[2 * a + 1];
      }
      vr += wyz * rr;
      vi += wyz * ri;
    }
  return {double(vr), sgn * double(vi)};
#endif
}

constexpr int max_phi = 128;
constexpr int max_atoms = 12;
constexpr int max_gauss = 8;

// per-phi carrier values for one theta ring
struct PhiScratch {
  alignas(64) double cpr[max_phi];   // Re carrier(xi+)
  alignas(64) double cpi[max_phi];   // Im carrier(xi+)
  alignas(64) double cm1r[max_phi];  // Re (carrier(xi-) - 1)
  alignas(64) double cm1i[max_phi];
  alignas(64) double sdr[max_phi];   // Re second difference at (zeta, eta+)
  alignas(64) double sdi[max_phi];
  alignas(64) double xb[max_phi], sb[max_phi], cb[max_phi];
};

// ---------------- carrier kernels -----------------------------------------

// Dirac sums / line measures: psi = sum w_a cis(-b_a . xi)
struct AtomCarrierK {
  int m = 0;
  double w[max_atoms];
  Vec3 b[max_atoms];

  explicit AtomCarrierK(const std::vector<Carrier::FlatAtom>& atoms) {
    if (int(atoms.size()) > max_atoms) fail("collision: too many atoms in carrier");
    m = int(atoms.size());
    for (int i = 0; i < m; ++i) {
      w[i] = atoms[i].w;
      b[i] = atoms[i].b;
    }
  }

  struct Node {
    double bxi[max_atoms], be1[max_atoms], be2[max_atoms];
    double cxr, cxi;  // carrier(xi) at the node
  };
  Node make_node(Vec3 xi, Vec3 e1, Vec3 e2) const {
    Node n;
    double cr = 0, ci = 0;
    for (int a = 0; a < m; ++a) {
      n.bxi[a] = dot(b[a], xi);
      n.be1[a] = dot(b[a], e1);
      n.be2[a] = dot(b[a], e2);
      double s, c;
      fastmath::sincos(n.bxi[a], s, c);
      cr += w[a] * c;
      ci -= w[a] * s;
    }
    n.cxr = cr;
    n.cxi = ci;
    return n;
  }

  struct Theta {
    double qb[max_atoms], rb[max_atoms];
    double czr[max_atoms], czi[max_atoms];  // cis(-b.zeta)
    double cdr[max_atoms], cdi[max_atoms];  // cis(-c_minus b.xi)
    cplx shift;                             // carrier(zeta) - carrier(xi)
  };
  Theta make_theta(const Node& n, double cplus, double cminus, double r) const {
    Theta t;
    double shr = 0, shi = 0;
    for (int a = 0; a < m; ++a) {
      t.qb[a] = r * n.be1[a];
      t.rb[a] = r * n.be2[a];
      double pz = cplus * n.bxi[a];
      double d = cminus * n.bxi[a];
      double s, c;
      fastmath::sincos(pz, s, c);
      t.czr[a] = c;
      t.czi[a] = -s;
      fastmath::sincos(d, s, c);
      t.cdr[a] = c;
      t.cdi[a] = -s;
      // cis(-pz) - cis(-bxi) = cis(-bxi) (cis(d) - 1)
      double cisd_m1_r = c - 1.0, cisd_m1_i = s;
      double bxr, bxs;
      fastmath::sincos(n.bxi[a], bxs, bxr);
      shr += w[a] * (bxr * cisd_m1_r + bxs * cisd_m1_i);
      shi += w[a] * (-bxs * cisd_m1_r + bxr * cisd_m1_i);
    }
    t.shift = {shr, shi};
    return t;
  }

  void phi_batch(const Theta& t, const double* cphi, const double* sphi, int nphi,
                 bool want_sd, PhiScratch& sc) const {
    for (int k = 0; k < nphi; ++k) {
      sc.cpr[k] = 0;
      sc.cpi[k] = 0;
      sc.cm1r[k] = 0;
      sc.cm1i[k] = 0;
      sc.sdr[k] = 0;
      sc.sdi[k] = 0;
    }
    for (int a = 0; a < m; ++a) {
      const double qb = t.qb[a], rb = t.rb[a], wa = w[a];
      const double czr = t.czr[a], czi = t.czi[a], cdr = t.cdr[a], cdi = t.cdi[a];
      for (int k = 0; k < nphi; ++k) sc.xb[k] = qb * cphi[k] + rb * sphi[k];
      fastmath::sincos_batch(sc.xb, sc.sb, sc.cb, nphi);
      for (int k = 0; k < nphi; ++k) {
        const double cx = sc.cb[k], sx = sc.sb[k];
        // carrier(xi+): cis(-pz) * cis(-x)
        sc.cpr[k] += wa * (czr * cx + czi * sx);
        sc.cpi[k] += wa * (czi * cx - czr * sx);
        // carrier(xi-) - 1: cis(-d) * cis(+x) - 1, per atom
        sc.cm1r[k] += wa * ((cdr * cx - cdi * sx) - 1.0);
        sc.cm1i[k] += wa * (cdi * cx + cdr * sx);
      }
      if (want_sd) {
        for (int k = 0; k < nphi; ++k) {
          const double f = -2.0 * (1.0 - sc.cb[k]) * wa;  // -4 sin^2(x/2)
          sc.sdr[k] += f * czr;
          sc.sdi[k] += f * czi;
        }
      }
    }
  }
};

// Gaussian mixtures: psi = sum w e^{-q(xi)/2} cis(-mean.xi)
struct GaussCarrierK {
  int m = 0;
  double w[max_gauss];
  Vec3 mean[max_gauss];
  Mat3 cov[max_gauss];

  explicit GaussCarrierK(const std::vector<Carrier::FlatGaussian>& comps) {
    if (int(comps.size()) > max_gauss) fail("collision: too many Gaussian components");
    m = int(comps.size());
    for (int i = 0; i < m; ++i) {
      w[i] = comps[i].w;
      mean[i] = comps[i].mean;
      cov[i] = comps[i].cov;
    }
  }

  struct Node {
    double qxx[max_gauss];                   // xi' Sigma xi
    double x1[max_gauss], x2[max_gauss];     // xi' Sigma e1, xi' Sigma e2
    double e11[max_gauss], e12[max_gauss], e22[max_gauss];
    double mxi[max_gauss], m1[max_gauss], m2[max_gauss];
    double cxr, cxi;
  };
  Node make_node(Vec3 xi, Vec3 e1, Vec3 e2) const {
    Node n;
    double cr = 0, ci = 0;
    for (int a = 0; a < m; ++a) {
      auto sv = [&](Vec3 v) -> Vec3 {
        return {cov[a](0, 0) * v.x + cov[a](0, 1) * v.y + cov[a](0, 2) * v.z,
                cov[a](1, 0) * v.x + cov[a](1, 1) * v.y + cov[a](1, 2) * v.z,
                cov[a](2, 0) * v.x + cov[a](2, 1) * v.y + cov[a](2, 2) * v.z};
      };
      Vec3 sxi = sv(xi), se1 = sv(e1), se2 = sv(e2);
      n.qxx[a] = dot(xi, sxi);
      n.x1[a] = dot(xi, se1);
      n.x2[a] = dot(xi, se2);
      n.e11[a] = dot(e1, se1);
      n.e12[a] = dot(e1, se2);
      n.e22[a] = dot(e2, se2);
      n.mxi[a] = dot(mean[a], xi);
      n.m1[a] = dot(mean[a], e1);
      n.m2[a] = dot(mean[a], e2);
      double s, c;
      fastmath::sincos(n.mxi[a], s, c);
      double ea = fastmath::exp(-0.5 * n.qxx[a]);
      cr += w[a] * ea * c;
      ci -= w[a] * ea * s;
    }
    n.cxr = cr;
    n.cxi = ci;
    return n;
  }

  struct Theta {
    const Node* n;
    double cplus, cminus, r;
    cplx shift;
  };
  Theta make_theta(const Node& n, double cplus, double cminus, double r) const {
    Theta t{&n, cplus, cminus, r, {}};
    cplx sh{};
    for (int a = 0; a < m; ++a) {
      double qx = 0.5 * n.qxx[a];
      double qz = 0.5 * cplus * cplus * n.qxx[a];
      double dm = (cplus - 1.0) * n.mxi[a];
      cplx inner = std::expm1(qx - qz) * cplx(std::cos(dm), -std::sin(dm)) +
                   cplx(-2.0 * std::pow(std::sin(0.5 * dm), 2), -std::sin(dm));
      sh += w[a] * std::exp(-qx) * cplx(std::cos(n.mxi[a]), -std::sin(n.mxi[a])) * inner;
    }
    t.shift = sh;
    return t;
  }

  void phi_batch(const Theta& t, const double* cphi, const double* sphi, int nphi,
                 bool want_sd, PhiScratch& sc) const {
    const Node& n = *t.n;
    const double cp = t.cplus, cm = t.cminus, r = t.r;
    for (int k = 0; k < nphi; ++k) {
      sc.cpr[k] = 0;
      sc.cpi[k] = 0;
      sc.cm1r[k] = 0;
      sc.cm1i[k] = 0;
      sc.sdr[k] = 0;
      sc.sdi[k] = 0;
    }
    for (int a = 0; a < m; ++a) {
      const double wa = w[a];
      for (int k = 0; k < nphi; ++k) {
        const double cf = cphi[k], sf = sphi[k];
        const double u1 = cf * n.x1[a] + sf * n.x2[a];  // xi' Sigma e(phi)
        const double quu =
            cf * cf * n.e11[a] + 2.0 * cf * sf * n.e12[a] + sf * sf * n.e22[a];
        const double me = cf * n.m1[a] + sf * n.m2[a];  // mean . e(phi)
        // xi+ = cp xi + r e, xi- = cm xi - r e
        const double qp = cp * cp * n.qxx[a] + 2.0 * cp * r * u1 + r * r * quu;
        const double qm = cm * cm * n.qxx[a] - 2.0 * cm * r * u1 + r * r * quu;
        const double php = cp * n.mxi[a] + r * me;
        const double phm = cm * n.mxi[a] - r * me;
        double sp_, cp_, sm_, cm_;
        fastmath::sincos(php, sp_, cp_);
        fastmath::sincos(phm, sm_, cm_);
        const double ep = fastmath::exp(-0.5 * qp);
        const double em = fastmath::exp(-0.5 * qm);
        sc.cpr[k] += wa * ep * cp_;
        sc.cpi[k] -= wa * ep * sp_;
        sc.cm1r[k] += wa * (em * cm_ - 1.0);
        sc.cm1i[k] -= wa * em * sm_;
        if (want_sd) {
          // psi(zeta+e) + psi(zeta-e) - 2 psi(zeta)
          //   = 2 psi_a(zeta) (e^{-qe} cosh(wc) - 1), wc = zeta'Sigma e + i mean.e
          const double qe = 0.5 * r * r * quu;
          const double wr = cp * r * u1;  // zeta = cp xi
          const double ea = fastmath::exp(wr), eb = fastmath::exp(-wr);
          double sme, cme;
          fastmath::sincos(r * me, sme, cme);
          const double chr = 0.5 * (ea + eb) * cme;
          const double chi = 0.5 * (ea - eb) * sme;
          const double em1 = std::expm1(-qe);
          const double fr = em1 * chr + (chr - 1.0);
          const double fi = em1 * chi + chi;
          const double qz = 0.5 * cp * cp * n.qxx[a];
          const double ez = fastmath::exp(-qz);
          double sz, cz;
          fastmath::sincos(cp * n.mxi[a], sz, cz);
          const double pzr = wa * ez * cz, pzi = -wa * ez * sz;
          sc.sdr[k] += 2.0 * (pzr * fr - pzi * fi);
          sc.sdi[k] += 2.0 * (pzr * fi + pzi * fr);
        }
      }
    }
  }
};

// Tabulated densities: carrier = interpolated grid transform of psi0.
struct TabCarrierK {
  const CharField* field;

  struct Node {
    Vec3 xi;
    double cxr, cxi;
  };
  Node make_node(Vec3 xi, Vec3, Vec3) const {
    cplx v = interpolate(*field, xi);
    return {xi, v.real(), v.imag()};
  }
  struct Theta {
    Vec3 xi;
    double cplus, cminus, r;
    cplx shift;
  };
  Theta make_theta(const Node& n, double cplus, double cminus, double r) const {
    Theta t{n.xi, cplus, cminus, r, {}};
    t.shift = interpolate(*field, cplus * n.xi) - cplx(n.cxr, n.cxi);
    return t;
  }
  void phi_batch(const Theta& t, const double* cphi, const double* sphi, int nphi,
                 bool want_sd, PhiScratch& sc) const {
    fail_if_unset();
    Vec3 e1, e2;
    phi_frame(t.xi, e1, e2);
    Vec3 zeta = t.cplus * t.xi;
    cplx cz = interpolate(*field, zeta);
    for (int k = 0; k < nphi; ++k) {
      Vec3 e = cphi[k] * e1 + sphi[k] * e2;
      Vec3 xp = zeta + t.r * e;
      Vec3 xm = t.xi - xp;
      cplx vp = interpolate(*field, xp);
      cplx vm = interpolate(*field, xm);
      sc.cpr[k] = vp.real();
      sc.cpi[k] = vp.imag();
      sc.cm1r[k] = vm.real() - 1.0;
      sc.cm1i[k] = vm.imag();
      if (want_sd) {
        Vec3 xt = zeta - t.r * e;
        cplx sd = vp + interpolate(*field, xt) - 2.0 * cz;
        sc.sdr[k] = sd.real();
        sc.sdi[k] = sd.imag();
      } else {
        sc.sdr[k] = 0;
        sc.sdi[k] = 0;
      }
    }
  }
  void fail_if_unset() const {
    if (!field) fail("collision: tabulated carrier transform not prepared");
  }
};

// No carrier: delta is the full field.
struct NullCarrierK {
  struct Node {
    double cxr = 0, cxi = 0;
  };
  Node make_node(Vec3, Vec3, Vec3) const { return {}; }
  struct Theta {
    cplx shift{};
  };
  Theta make_theta(const Node&, double, double, double) const { return {}; }
  void phi_batch(const Theta&, const double*, const double*, int nphi, bool,
                 PhiScratch& sc) const {
    for (int k = 0; k < nphi; ++k) {
      sc.cpr[k] = 0;
      sc.cpi[k] = 0;
      sc.cm1r[k] = -1.0;
      sc.cm1i[k] = 0;
      sc.sdr[k] = 0;
      sc.sdi[k] = 0;
    }
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Collision operator: Bobylev right-hand side on the masked ball.
// ---------------------------------------------------------------------------

struct RhsOutput {
  std::vector<double> re, im;  // full grid, zero outside the mask and at 0
  double tail_bound = 0;       // closed-form bound on the omitted theta tail
  cplx value(std::int64_t idx) const { return {re[idx], im[idx]}; }
};

class CollisionOperator {
 public:
  CollisionOperator(const SpectralGrid& grid, const BallMask& mask, AngularKernel kernel,
                    const SphereQuadrature& quad,
                    std::shared_ptr<const Carrier> carrier = nullptr, double alpha = 0.0)
      : grid_(grid), mask_(&mask), kernel_(std::move(kernel)), quad_(quad),
        carrier_(std::move(carrier)), alpha_(alpha) {
    if (carrier_) carrier_->prepare_transform(grid_);
    // cache carrier node values (the residual reference)
    cre_.assign(grid_.size(), 0.0);
    cim_.assign(grid_.size(), 0.0);
    if (carrier_) {
      for (std::int64_t idx = 0; idx < grid_.size(); ++idx) {
        int i, j, k;
        grid_.unlin(idx, i, j, k);
        Vec3 xi = grid_.node(i, j, k);
        if (detail::lex_negative(xi)) continue;
        cplx v = carrier_->eval(xi);
        cre_[idx] = v.real();
        cim_[idx] = v.imag();
        std::int64_t mi = grid_.mirror(idx);
        cre_[mi] = v.real();
        cim_[mi] = -v.imag();
      }
      cre_[grid_.origin_lin()] = 1.0;
      cim_[grid_.origin_lin()] = 0.0;
    }
    // theta tables with the kernel folded in
    if (quad_.n_phi > detail::max_phi) fail("collision: n_phi exceeds engine limit");
    quad_.assign_phi_counts((pi / grid_.h() + 4.0) * 0.5 * grid_.r_max);
    for (auto& tn : quad_.theta_nodes) {
      ThetaTab t;
      t.reg = tn.regularized;
      t.cplus = std::pow(std::cos(0.5 * tn.theta), 2);
      t.cminus = 1.0 - t.cplus;
      t.rfac = 0.5 * std::sin(tn.theta);
      t.wb = tn.weight * kernel_(tn.theta) * std::sin(tn.theta);
      t.phi_set = -1;
      for (std::size_t i = 0; i < phi_sets_.size(); ++i)
        if (phi_sets_[i].np == tn.n_phi) t.phi_set = int(i);
      if (t.phi_set < 0) {
        PhiSet ps;
        ps.np = tn.n_phi;
        ps.c.resize(ps.np);
        ps.s.resize(ps.np);
        for (int k = 0; k < ps.np; ++k) {
          ps.c[k] = std::cos(2.0 * pi * k / ps.np);
          ps.s[k] = std::sin(2.0 * pi * k / ps.np);
        }
        t.phi_set = int(phi_sets_.size());
        phi_sets_.push_back(std::move(ps));
      }
      theta_.push_back(t);
    }
  }

  const AngularKernel& kernel() const { return kernel_; }
  const SphereQuadrature& quadrature() const { return quad_; }

  // Direct quadrature of b (psi+ psi- - psi); bounded integrand only.
  RhsOutput direct(const CharField& f) const {
    if (!kernel_.has_cutoff())
      throw std::invalid_argument(
          "rhs_direct: non-cutoff kernel has a non-integrable integrand; "
          "use rhs_regularized");
    RhsOutput out = make_output(f);
    dispatch(f, Mode::Direct, out.re.data(), out.im.data());
    out.tail_bound = 2.0 * pi * kernel_.cutoff_level() * quad_.theta_min * quad_.theta_min;
    return out;
  }

  // Split integrand below theta_c: second-difference, drift and product terms
  // are each integrable against the singular kernel; direct form above.
  RhsOutput regularized(const CharField& f, double field_tol = 1e-3) const {
    if (f.max_abs(*mask_) > 1.0 + field_tol)
      fail("rhs_regularized: field violates |psi| <= 1 + tol; the split bounds "
           "presume a characteristic-function field");
    RhsOutput out = make_output(f);
    dispatch(f, Mode::Regularized, out.re.data(), out.im.data());
    double alpha = alpha_ > 0 ? alpha_ : std::min(2.0, 2.0 * kernel_.s() + 1.0);
    out.tail_bound = regularized_tail_bound(quad_, kernel_, alpha,
                                            norm_one_minus(f, alpha), grid_.r_max);
    return out;
  }

  // Gap integral int b (1 - |psi(xi^-)|) dsigma per node (real field).
  std::vector<double> gap_integral(const CharField& f) const {
    std::vector<double> out(grid_.size(), 0.0);
    std::vector<double> im(grid_.size(), 0.0);
    dispatch(f, Mode::Gap, out.data(), im.data());
    return out;
  }

 private:
  enum class Mode { Direct, Regularized, Gap };

  RhsOutput make_output(const CharField& f) const {
    if (!(f.grid == grid_)) fail("collision: field grid mismatch");
    RhsOutput out;
    out.re.assign(grid_.size(), 0.0);
    out.im.assign(grid_.size(), 0.0);
    return out;
  }

  double norm_one_minus(const CharField& f, double alpha) const {
    double best = 0;
    for (auto idx : mask_->indices) {
      int i, j, k;
      grid_.unlin(idx, i, j, k);
      Vec3 xi = grid_.node(i, j, k);
      double n = norm(xi);
      if (n == 0) continue;
      best = std::max(best, std::abs(f.value(idx) - 1.0) / std::pow(n, alpha));
    }
    return best;
  }

  void dispatch(const CharField& f, Mode mode, double* outr, double* outi) const {
    if (!carrier_) {
      run_pass(detail::NullCarrierK{}, f, mode, outr, outi);
    } else if (!carrier_->flat_atoms().empty()) {
      run_pass(detail::AtomCarrierK(carrier_->flat_atoms()), f, mode, outr, outi);
    } else if (!carrier_->flat_gaussians().empty()) {
      run_pass(detail::GaussCarrierK(carrier_->flat_gaussians()), f, mode, outr, outi);
    } else {
      carrier_->prepare_transform(grid_);
      detail::TabCarrierK ck{carrier_->transform_field()};
      ck.fail_if_unset();
      run_pass(ck, f, mode, outr, outi);
    }
  }

  template <class CK>
  void run_pass(const CK& ck, const CharField& f, Mode mode, double* outr,
                double* outi) const {
    const int nphi = quad_.n_phi;
    const double wphi = quad_.phi_weight();
    // residual field, interleaved float pairs
    std::vector<float> dfl(2 * grid_.size());
    const bool have_carrier = carrier_ != nullptr;
    for (std::int64_t i = 0; i < grid_.size(); ++i) {
      dfl[2 * i] = float(f.re[i] - (have_carrier ? cre_[i] : 0.0));
      dfl[2 * i + 1] = float(f.im[i] - (have_carrier ? cim_[i] : 0.0));
    }
    const float* dptr = dfl.data();
    const detail::InterpParams ip(grid_);
    const auto& half = mask_->half_indices;
    const std::int64_t origin = grid_.origin_lin();

    parallel_for(std::int64_t(half.size()), [&](std::int64_t wi) {
      const std::int64_t idx = half[wi];
      if (idx == origin) return;  // integrand vanishes identically at xi = 0
      int i, j, k;
      grid_.unlin(idx, i, j, k);
      const Vec3 xi = grid_.node(i, j, k);
      const double nrm = norm(xi);
      Vec3 e1, e2;
      phi_frame(xi, e1, e2);
      typename CK::Node nc = ck.make_node(xi, e1, e2);
      const cplx psix = f.value(idx);
      const cplx dx = psix - cplx(have_carrier ? cre_[idx] : 0.0,
                                  have_carrier ? cim_[idx] : 0.0);
      detail::PhiScratch sc;
      KahanSumC acc_c;
      KahanSum acc_g;
      for (const auto& tt : theta_) {
        const double r = nrm * tt.rfac;
        const bool split = (mode == Mode::Regularized) && tt.reg;
        typename CK::Theta tc = ck.make_theta(nc, tt.cplus, tt.cminus, r);
        ck.phi_batch(tc, cphi_.data(), sphi_.data(), nphi, split, sc);
        const Vec3 zeta = tt.cplus * xi;
        const Vec3 re1 = r * e1, re2 = r * e2;
        if (mode == Mode::Gap) {
          double gsum = 0;
          for (int p = 0; p < nphi; ++p) {
            Vec3 xm = (xi - zeta) - (cphi_[p] * re1 + sphi_[p] * re2);
            cplx dm = detail::interp_delta_f(ip, dptr, xm);
            cplx m1(sc.cm1r[p] + dm.real(), sc.cm1i[p] + dm.imag());
            double am = std::abs(cplx(1.0, 0.0) + m1);
            // 1 - |psi-| = -(2 Re m1 + |m1|^2) / (1 + |psi-|)
            gsum += -(2.0 * m1.real() + std::norm(m1)) / (1.0 + am);
          }
          acc_g.add(tt.wb * wphi * gsum);
          continue;
        }
        double sr = 0, si = 0;
        for (int p = 0; p < nphi; ++p) {
          Vec3 ev = cphi_[p] * re1 + sphi_[p] * re2;
          Vec3 xp = zeta + ev;
          Vec3 xm = (xi - zeta) - ev;
          cplx dp = detail::interp_delta_f(ip, dptr, xp);
          cplx dm = detail::interp_delta_f(ip, dptr, xm);
          cplx cp(sc.cpr[p], sc.cpi[p]);
          cplx cm1(sc.cm1r[p], sc.cm1i[p]);
          cplx val;
          if (split) {
            // (1/2) second difference + drift + psi+ (psi- - 1) + residual
            cplx prod = (cp + dp) * (cm1 + dm);
            val = 0.5 * cplx(sc.sdr[p], sc.sdi[p]) + tc.shift + (dp - dx) + prod;
          } else {
            cplx psip = cp + dp;
            cplx psim = cplx(1.0, 0.0) + cm1 + dm;
            val = psip * psim - psix;
          }
          sr += val.real();
          si += val.imag();
        }
        acc_c.add(tt.wb * wphi * cplx(sr, si));
      }
      const std::int64_t mi = grid_.mirror(idx);
      if (mode == Mode::Gap) {
        double v = acc_g.value();
        outr[idx] = v;
        outr[mi] = v;
      } else {
        cplx v = acc_c.value();
        outr[idx] = v.real();
        outi[idx] = v.imag();
        outr[mi] = v.real();
        outi[mi] = -v.imag();
      }
    });
  }

  struct ThetaTab {
    double cplus, cminus, rfac, wb;
    bool reg;
  };

  SpectralGrid grid_;
  const BallMask* mask_;
  AngularKernel kernel_;
  SphereQuadrature quad_;
  std::shared_ptr<const Carrier> carrier_;
  double alpha_ = 0;
  std::vector<double> cre_, cim_;
  std::vector<ThetaTab> theta_;
  std::vector<double> cphi_, sphi_;
};

// Spec-level convenience entry points (mask derived from the field's grid).
inline RhsOutput rhs_direct(const CharField& f, const AngularKernel& kernel,
                            const SphereQuadrature& quad,
                            std::shared_ptr<const Carrier> carrier = nullptr) {
  BallMask mask = restrict_to_ball(f.grid);
  return CollisionOperator(f.grid, mask, kernel, quad, std::move(carrier)).direct(f);
}

inline RhsOutput rhs_regularized(const CharField& f, const AngularKernel& kernel,
                                 const SphereQuadrature& quad,
                                 std::shared_ptr<const Carrier> carrier = nullptr) {
  BallMask mask = restrict_to_ball(f.grid);
  return CollisionOperator(f.grid, mask, kernel, quad, std::move(carrier)).regularized(f);
}

}  // namespace bobk
