#pragma once

#include <memory>
#include <variant>
#include <vector>

#include "bobk/common.hpp"
#include "bobk/grid.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Symbolic descriptions of probability-measure initial data.
// ---------------------------------------------------------------------------

struct DiracSum {
  struct Atom {
    double weight;
    Vec3 location;
  };
  std::vector<Atom> atoms;
};

struct LineMeasure {
  Vec3 direction;  // unit vector
  struct Atom {
    double weight;
    double offset;
  };
  std::vector<Atom> atoms;
};

struct GaussianMixture {
  struct Component {
    double weight;
    Vec3 mean;
    Mat3 covariance;
  };
  std::vector<Component> components;
};

// Nonnegative density sampled on a uniform velocity cube; values are
// normalized so that sum * dv^3 = 1.
struct TabulatedDensity {
  double v_max = 6.0;
  int n = 32;
  std::vector<double> values;  // i-fastest, size n^3

  double dv() const { return 2.0 * v_max / (n - 1); }
  Vec3 vnode(int i, int j, int k) const {
    double d = dv();
    return {-v_max + i * d, -v_max + j * d, -v_max + k * d};
  }
};

using MeasureSpec = std::variant<DiracSum, LineMeasure, GaussianMixture, TabulatedDensity>;

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

inline void validate(const MeasureSpec& spec, double tol = 1e-9) {
  auto check_weights = [&](double total, bool any_negative) {
    if (any_negative) fail("MeasureSpec: negative weight");
    if (std::abs(total - 1.0) > tol) fail("MeasureSpec: weights must sum to 1");
  };
  if (auto* d = std::get_if<DiracSum>(&spec)) {
    if (d->atoms.empty()) fail("MeasureSpec: empty Dirac sum");
    double w = 0;
    bool neg = false;
    for (auto& a : d->atoms) {
      w += a.weight;
      neg |= a.weight < 0;
    }
    check_weights(w, neg);
  } else if (auto* l = std::get_if<LineMeasure>(&spec)) {
    if (l->atoms.empty()) fail("MeasureSpec: empty line measure");
    if (std::abs(norm(l->direction) - 1.0) > 1e-9)
      fail("MeasureSpec: line direction must be a unit vector");
    double w = 0;
    bool neg = false;
    for (auto& a : l->atoms) {
      w += a.weight;
      neg |= a.weight < 0;
    }
    check_weights(w, neg);
  } else if (auto* g = std::get_if<GaussianMixture>(&spec)) {
    if (g->components.empty()) fail("MeasureSpec: empty Gaussian mixture");
    double w = 0;
    bool neg = false;
    for (auto& c : g->components) {
      w += c.weight;
      neg |= c.weight < 0;
      if (!is_psd(c.covariance)) fail("MeasureSpec: covariance not positive semidefinite");
    }
    check_weights(w, neg);
  } else if (auto* t = std::get_if<TabulatedDensity>(&spec)) {
    if (t->n < 2 || std::int64_t(t->values.size()) != std::int64_t(t->n) * t->n * t->n)
      fail("MeasureSpec: tabulated density size mismatch");
    double s = 0;
    for (double v : t->values) {
      if (v < 0) fail("MeasureSpec: tabulated density must be nonnegative");
      s += v;
    }
    double d = t->dv();
    if (std::abs(s * d * d * d - 1.0) > 1e-6)
      fail("MeasureSpec: tabulated density must integrate to 1");
  }
}

inline bool is_single_dirac(const MeasureSpec& spec) {
  if (auto* d = std::get_if<DiracSum>(&spec)) {
    Vec3 first = d->atoms[0].location;
    for (auto& a : d->atoms)
      if (a.weight > 0 && norm(a.location - first) > 0) return false;
    return true;
  }
  if (auto* l = std::get_if<LineMeasure>(&spec)) {
    double first = l->atoms[0].offset;
    for (auto& a : l->atoms)
      if (a.weight > 0 && a.offset != first) return false;
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Closed-form moments
// ---------------------------------------------------------------------------

inline Vec3 mean(const MeasureSpec& spec) {
  Vec3 m{};
  if (auto* d = std::get_if<DiracSum>(&spec)) {
    for (auto& a : d->atoms) m = m + a.weight * a.location;
  } else if (auto* l = std::get_if<LineMeasure>(&spec)) {
    double o = 0;
    for (auto& a : l->atoms) o += a.weight * a.offset;
    m = o * l->direction;
  } else if (auto* g = std::get_if<GaussianMixture>(&spec)) {
    for (auto& c : g->components) m = m + c.weight * c.mean;
  } else if (auto* t = std::get_if<TabulatedDensity>(&spec)) {
    double d3 = std::pow(t->dv(), 3);
    for (int k = 0; k < t->n; ++k)
      for (int j = 0; j < t->n; ++j)
        for (int i = 0; i < t->n; ++i) {
          std::int64_t idx = std::int64_t(i) + std::int64_t(t->n) * (j + std::int64_t(t->n) * k);
          m = m + (t->values[idx] * d3) * t->vnode(i, j, k);
        }
  }
  return m;
}

// Second-moment matrix E[v v^T].
inline Mat3 second_moment(const MeasureSpec& spec) {
  Mat3 s{};
  auto acc = [&](double w, Vec3 v) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s(i, j) += w * v[i] * v[j];
  };
  if (auto* d = std::get_if<DiracSum>(&spec)) {
    for (auto& a : d->atoms) acc(a.weight, a.location);
  } else if (auto* l = std::get_if<LineMeasure>(&spec)) {
    for (auto& a : l->atoms) acc(a.weight, a.offset * l->direction);
  } else if (auto* g = std::get_if<GaussianMixture>(&spec)) {
    for (auto& c : g->components) {
      acc(c.weight, c.mean);
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s(i, j) += c.weight * c.covariance(i, j);
    }
  } else if (auto* t = std::get_if<TabulatedDensity>(&spec)) {
    double d3 = std::pow(t->dv(), 3);
    for (int k = 0; k < t->n; ++k)
      for (int j = 0; j < t->n; ++j)
        for (int i = 0; i < t->n; ++i) {
          std::int64_t idx = std::int64_t(i) + std::int64_t(t->n) * (j + std::int64_t(t->n) * k);
          acc(t->values[idx] * d3, t->vnode(i, j, k));
        }
  }
  return s;
}

inline double energy(const MeasureSpec& spec) { return second_moment(spec).trace(); }

// E |v|^alpha; alpha = 2 uses the closed form, Gaussians otherwise use a
// tensor Gauss-Hermite rule.
inline double alpha_moment(const MeasureSpec& spec, double alpha) {
  if (alpha == 2.0) return energy(spec);
  if (auto* d = std::get_if<DiracSum>(&spec)) {
    double m = 0;
    for (auto& a : d->atoms) m += a.weight * std::pow(norm(a.location), alpha);
    return m;
  }
  if (auto* l = std::get_if<LineMeasure>(&spec)) {
    double m = 0;
    for (auto& a : l->atoms) m += a.weight * std::pow(std::abs(a.offset), alpha);
    return m;
  }
  if (auto* g = std::get_if<GaussianMixture>(&spec)) {
    // 20-point Gauss-Hermite per axis (weight e^{-x^2}); v = mean + sqrt(2) L x
    static const int gh_n = 20;
    static const double gh_x[gh_n] = {
        -5.3874808900112, -4.6036824495507, -3.9447640401156, -3.3478545673832,
        -2.7888060584281, -2.2549740020893, -1.7385377121166, -1.2340762153953,
        -0.7374737285454, -0.2453407083009, 0.2453407083009,  0.7374737285454,
        1.2340762153953,  1.7385377121166,  2.2549740020893,  2.7888060584281,
        3.3478545673832,  3.9447640401156,  4.6036824495507,  5.3874808900112};
    static const double gh_w[gh_n] = {
        2.229393645534e-13, 4.399340992273e-10, 1.086069370769e-07, 7.802556478532e-06,
        2.283386360163e-04, 3.243773342238e-03, 2.481052088746e-02, 1.090172060200e-01,
        2.866755053628e-01, 4.622436696006e-01, 4.622436696006e-01, 2.866755053628e-01,
        1.090172060200e-01, 2.481052088746e-02, 3.243773342238e-03, 2.283386360163e-04,
        7.802556478532e-06, 1.086069370769e-07, 4.399340992273e-10, 2.229393645534e-13};
    const double inv_sqrt_pi3 = 1.0 / std::pow(pi, 1.5);
    double total = 0;
    for (auto& c : g->components) {
      // lower Cholesky of the covariance (PSD; small bumps for degenerate dirs)
      Mat3 a = c.covariance;
      double l00 = std::sqrt(std::max(a(0, 0), 0.0));
      double l10 = l00 > 0 ? a(1, 0) / l00 : 0.0;
      double l11 = std::sqrt(std::max(a(1, 1) - l10 * l10, 0.0));
      double l20 = l00 > 0 ? a(2, 0) / l00 : 0.0;
      double l21 = l11 > 0 ? (a(2, 1) - l20 * l10) / l11 : 0.0;
      double l22 = std::sqrt(std::max(a(2, 2) - l20 * l20 - l21 * l21, 0.0));
      double comp = 0;
      for (int i = 0; i < gh_n; ++i)
        for (int j = 0; j < gh_n; ++j)
          for (int k = 0; k < gh_n; ++k) {
            double sx = std::sqrt(2.0) * gh_x[i], sy = std::sqrt(2.0) * gh_x[j],
                   sz = std::sqrt(2.0) * gh_x[k];
            Vec3 v{c.mean.x + l00 * sx, c.mean.y + l10 * sx + l11 * sy,
                   c.mean.z + l20 * sx + l21 * sy + l22 * sz};
            comp += gh_w[i] * gh_w[j] * gh_w[k] * std::pow(norm(v), alpha);
          }
      total += c.weight * comp * inv_sqrt_pi3;
    }
    return total;
  }
  auto* t = std::get_if<TabulatedDensity>(&spec);
  double d3 = std::pow(t->dv(), 3), m = 0;
  for (int k = 0; k < t->n; ++k)
    for (int j = 0; j < t->n; ++j)
      for (int i = 0; i < t->n; ++i) {
        std::int64_t idx = std::int64_t(i) + std::int64_t(t->n) * (j + std::int64_t(t->n) * k);
        m += t->values[idx] * d3 * std::pow(norm(t->vnode(i, j, k)), alpha);
      }
  return m;
}

// ---------------------------------------------------------------------------
// Characteristic function psi(xi) = int e^{-i v.xi} dPsi(v) and stable small
// quantities used by the collision quadrature:
//   char_minus_one:   psi(xi) - 1 without cancellation near xi = 0
//   second_difference: psi(z+e) + psi(z-e) - 2 psi(z)
//   shift_difference:  psi(z) - psi(x), z near x
// ---------------------------------------------------------------------------

namespace detail {
// e^{-ix} - 1 = -2 sin^2(x/2) - i sin(x), cancellation-free
inline cplx cis_neg_minus_one(double x) {
  double sh = std::sin(0.5 * x);
  return {-2.0 * sh * sh, -std::sin(x)};
}
inline cplx cis_neg(double x) { return {std::cos(x), -std::sin(x)}; }
}  // namespace detail

class TabulatedTransform;  // below

// Evaluates a measure's characteristic function and its stabilized
// differences. For tabulated densities a grid transform cache is built once
// (see TabulatedTransform); the cache is prepared before any concurrent use.
class Carrier {
 public:
  explicit Carrier(MeasureSpec spec);

  // also usable as a trivial carrier psi = 1 (single Dirac at the origin)
  static Carrier unit() { return Carrier(MeasureSpec(DiracSum{{{1.0, Vec3{}}}})); }

  const MeasureSpec& spec() const { return spec_; }

  cplx eval(Vec3 xi) const {
    if (!atoms_.empty()) {
      cplx v{};
      for (auto& a : atoms_) v += a.w * detail::cis_neg(dot(a.b, xi));
      return v;
    }
    if (!gauss_.empty()) {
      cplx v{};
      for (auto& c : gauss_)
        v += c.w * std::exp(-0.5 * c.cov.quad_form(xi)) * detail::cis_neg(dot(c.mean, xi));
      return v;
    }
    return eval_tabulated(xi);
  }

  cplx eval_minus_one(Vec3 xi) const {
    if (!atoms_.empty()) {
      cplx v{};
      for (auto& a : atoms_) v += a.w * detail::cis_neg_minus_one(dot(a.b, xi));
      return v;
    }
    if (!gauss_.empty()) {
      cplx v{};
      for (auto& c : gauss_) {
        double q = 0.5 * c.cov.quad_form(xi);
        double x = dot(c.mean, xi);
        // e^{-q} cis(-x) - 1 = expm1(-q) cis(-x) + (cis(-x) - 1)
        v += c.w * (std::expm1(-q) * detail::cis_neg(x) + detail::cis_neg_minus_one(x));
      }
      return v;
    }
    return eval_tabulated(xi) - 1.0;
  }

  // psi(z + e) + psi(z - e) - 2 psi(z)
  cplx second_difference(Vec3 z, Vec3 e) const {
    if (!atoms_.empty()) {
      cplx v{};
      for (auto& a : atoms_) {
        double he = 0.5 * dot(a.b, e);
        double sh = std::sin(he);
        v += a.w * (-4.0 * sh * sh) * detail::cis_neg(dot(a.b, z));
      }
      return v;
    }
    if (!gauss_.empty()) {
      cplx v{};
      for (auto& c : gauss_) {
        double qe = 0.5 * c.cov.quad_form(e);
        Vec3 cz{c.cov(0, 0) * z.x + c.cov(0, 1) * z.y + c.cov(0, 2) * z.z,
                c.cov(1, 0) * z.x + c.cov(1, 1) * z.y + c.cov(1, 2) * z.z,
                c.cov(2, 0) * z.x + c.cov(2, 1) * z.y + c.cov(2, 2) * z.z};
        cplx w(dot(cz, e), dot(c.mean, e));
        // psi(z±e) = psi(z) e^{-qe} e^{∓w}; sum - 2 psi(z):
        //   2 psi(z) (e^{-qe} cosh w - 1)
        cplx coshw = std::cosh(w);
        cplx factor = 2.0 * (std::expm1(-qe) * coshw + 2.0 * std::pow(std::sinh(0.5 * w), 2));
        double qz = 0.5 * c.cov.quad_form(z);
        v += c.w * std::exp(-qz) * detail::cis_neg(dot(c.mean, z)) * factor;
      }
      return v;
    }
    return eval_tabulated(z + e) + eval_tabulated(z - e) - 2.0 * eval_tabulated(z);
  }

  // psi(z) - psi(x) for z near x
  cplx shift_difference(Vec3 x, Vec3 z) const {
    if (!atoms_.empty()) {
      cplx v{};
      for (auto& a : atoms_)
        v += a.w * detail::cis_neg(dot(a.b, x)) * detail::cis_neg_minus_one(dot(a.b, z - x));
      return v;
    }
    if (!gauss_.empty()) {
      cplx v{};
      for (auto& c : gauss_) {
        double qx = 0.5 * c.cov.quad_form(x), qz = 0.5 * c.cov.quad_form(z);
        double dm = dot(c.mean, z - x);
        // psi(z) - psi(x) = psi(x) (e^{qx-qz} cis(-dm) - 1)
        cplx inner = std::expm1(qx - qz) * detail::cis_neg(dm) + detail::cis_neg_minus_one(dm);
        v += c.w * std::exp(-qx) * detail::cis_neg(dot(c.mean, x)) * inner;
      }
      return v;
    }
    return eval_tabulated(z) - eval_tabulated(x);
  }

  // flat atom list (Dirac sums and line measures); empty otherwise
  struct FlatAtom {
    double w;
    Vec3 b;
  };
  const std::vector<FlatAtom>& flat_atoms() const { return atoms_; }
  struct FlatGaussian {
    double w;
    Vec3 mean;
    Mat3 cov;
  };
  const std::vector<FlatGaussian>& flat_gaussians() const { return gauss_; }
  bool is_tabulated() const { return atoms_.empty() && gauss_.empty(); }

  void prepare_transform(const SpectralGrid& grid) const;
  const CharField* transform_field() const;  // null until prepare_transform

 private:
  cplx eval_tabulated(Vec3 xi) const;

  MeasureSpec spec_;
  std::vector<FlatAtom> atoms_;
  std::vector<FlatGaussian> gauss_;
  mutable std::shared_ptr<TabulatedTransform> transform_;
};

// Characteristic function of a tabulated density evaluated by a separable
// discrete transform onto a spectral grid, interpolated thereafter.
class TabulatedTransform {
 public:
  TabulatedTransform(const TabulatedDensity& tab, const SpectralGrid& grid)
      : field_(grid) {
    const int nv = tab.n, ng = grid.n;
    const double dv = tab.dv(), d3 = dv * dv * dv;
    // stage 1: sum over v1 -> G(xi1, j, k)
    std::vector<cplx> g1(std::int64_t(ng) * nv * nv);
    for (int k = 0; k < nv; ++k)
      for (int j = 0; j < nv; ++j)
        for (int a = 0; a < ng; ++a) {
          cplx s{};
          double xi1 = grid.coord(a);
          for (int i = 0; i < nv; ++i) {
            double v1 = -tab.v_max + i * dv;
            std::int64_t idx =
                std::int64_t(i) + std::int64_t(nv) * (j + std::int64_t(nv) * k);
            s += tab.values[idx] * detail::cis_neg(v1 * xi1);
          }
          g1[std::int64_t(a) + std::int64_t(ng) * (j + std::int64_t(nv) * k)] = s;
        }
    // stage 2: sum over v2 -> H(xi1, xi2, k)
    std::vector<cplx> g2(std::int64_t(ng) * ng * nv);
    for (int k = 0; k < nv; ++k)
      for (int b = 0; b < ng; ++b) {
        double xi2 = grid.coord(b);
        for (int a = 0; a < ng; ++a) {
          cplx s{};
          for (int j = 0; j < nv; ++j) {
            double v2 = -tab.v_max + j * dv;
            s += g1[std::int64_t(a) + std::int64_t(ng) * (j + std::int64_t(nv) * k)] *
                 detail::cis_neg(v2 * xi2);
          }
          g2[std::int64_t(a) + std::int64_t(ng) * (b + std::int64_t(ng) * k)] = s;
        }
      }
    // stage 3: sum over v3 -> psi(xi1, xi2, xi3)
    for (int c = 0; c < ng; ++c) {
      double xi3 = grid.coord(c);
      for (int b = 0; b < ng; ++b)
        for (int a = 0; a < ng; ++a) {
          cplx s{};
          for (int k = 0; k < nv; ++k) {
            double v3 = -tab.v_max + k * dv;
            s += g2[std::int64_t(a) + std::int64_t(ng) * (b + std::int64_t(ng) * k)] *
                 detail::cis_neg(v3 * xi3);
          }
          field_.set(field_.grid.lin(a, b, c), s * d3);
        }
    }
  }

  cplx eval(Vec3 xi) const { return interpolate(field_, xi); }
  const CharField& field() const { return field_; }

 private:
  CharField field_;
};

inline Carrier::Carrier(MeasureSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  if (auto* d = std::get_if<DiracSum>(&spec_)) {
    for (auto& a : d->atoms) atoms_.push_back({a.weight, a.location});
  } else if (auto* l = std::get_if<LineMeasure>(&spec_)) {
    for (auto& a : l->atoms) atoms_.push_back({a.weight, a.offset * l->direction});
  } else if (auto* g = std::get_if<GaussianMixture>(&spec_)) {
    for (auto& c : g->components) gauss_.push_back({c.weight, c.mean, c.covariance});
  }
}

inline void Carrier::prepare_transform(const SpectralGrid& grid) const {
  if (!is_tabulated()) return;
  if (transform_ && transform_->field().grid == grid) return;
  transform_ = std::make_shared<TabulatedTransform>(std::get<TabulatedDensity>(spec_), grid);
}

inline const CharField* Carrier::transform_field() const {
  return transform_ ? &transform_->field() : nullptr;
}

inline cplx Carrier::eval_tabulated(Vec3 xi) const {
  if (transform_) return transform_->eval(xi);
  // direct sum; exact but O(n^3) per point, used for spot checks
  auto& t = std::get<TabulatedDensity>(spec_);
  double d3 = std::pow(t.dv(), 3);
  KahanSumC s;
  for (int k = 0; k < t.n; ++k)
    for (int j = 0; j < t.n; ++j)
      for (int i = 0; i < t.n; ++i) {
        std::int64_t idx = std::int64_t(i) + std::int64_t(t.n) * (j + std::int64_t(t.n) * k);
        if (t.values[idx] == 0.0) continue;
        s.add(t.values[idx] * d3 * detail::cis_neg(dot(t.vnode(i, j, k), xi)));
      }
  return s.value();
}

// psi_0(xi) for a measure spec (exact; tabulated variants use the direct sum).
inline cplx characteristic(const MeasureSpec& spec, Vec3 xi) {
  return Carrier(spec).eval(xi);
}

// Sample a measure's characteristic function onto a grid. The lower
// lexicographic half is mirrored so Hermitian symmetry holds exactly.
inline CharField sample_field(const Carrier& carrier, const SpectralGrid& grid,
                              double t = 0.0) {
  carrier.prepare_transform(grid);
  CharField f(grid, t);
  for (std::int64_t idx = 0; idx < grid.size(); ++idx) {
    int i, j, k;
    grid.unlin(idx, i, j, k);
    Vec3 xi = grid.node(i, j, k);
    if (detail::lex_negative(xi)) continue;
    cplx v = carrier.eval(xi);
    f.set(idx, v);
    f.set(grid.mirror(idx), std::conj(v));
  }
  f.set(grid.origin_lin(), 1.0);
  return f;
}

// ---------------------------------------------------------------------------
// K^alpha membership and distances
// ---------------------------------------------------------------------------

struct MembershipCertificate {
  bool member = false;
  double alpha = 0;
  double moment = 0;  // int |v|^alpha dPsi
  Vec3 mean_value{};
  std::string reason;
};

// Finite alpha-moment, plus vanishing mean when alpha > 1.
inline MembershipCertificate kalpha_membership(const MeasureSpec& spec, double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0)) fail("kalpha_membership: alpha must lie in (0,2]");
  MembershipCertificate c;
  c.alpha = alpha;
  c.moment = alpha_moment(spec, alpha);
  c.mean_value = mean(spec);
  bool moment_ok = std::isfinite(c.moment);
  bool mean_ok = alpha <= 1.0 || norm(c.mean_value) <= 1e-10;
  c.member = moment_ok && mean_ok;
  if (!moment_ok)
    c.reason = "alpha-moment not finite";
  else if (!mean_ok)
    c.reason = "mean must vanish for alpha > 1";
  return c;
}

struct KAlphaNorm {
  double alpha = 0;
  double value = 0;               // may be +inf
  double near_origin_term = 0;    // analytic small-xi contribution, when available
  double far_tail_bound = 0;      // 2 / R_max^alpha bound for |xi| > R_max
  std::int64_t argmax_index = -1; // grid node attaining the sup, if any
};

// Analytic limit of |psi - phi| / |xi|^alpha as xi -> 0 for symbolic specs.
// Order-2 Taylor expansion: first moments enter at order 1, second moments at
// order 2. Returns +inf when a lower-order mismatch makes the ratio blow up.
inline double near_origin_ratio(const MeasureSpec& a, const MeasureSpec& b, double alpha) {
  Vec3 dm = mean(a) - mean(b);
  double dm_n = norm(dm);
  if (dm_n > 1e-13) {
    if (alpha > 1.0) return std::numeric_limits<double>::infinity();
    if (alpha == 1.0) return dm_n;
    return 0.0;  // alpha < 1: ratio -> 0 at the origin
  }
  Mat3 ds = second_moment(a) - second_moment(b);
  auto ev = sym3_eigenvalues(ds);
  double smax = std::max(std::abs(ev[0]), std::abs(ev[2]));
  if (smax > 1e-13 && alpha == 2.0) return 0.5 * smax;
  return 0.0;
}

// sup over nonzero masked grid nodes of |psi - phi| / |xi|^alpha.
template <class FA, class FB>
KAlphaNorm kalpha_distance_fn(const FA& psi, const FB& phi, double alpha,
                              const SpectralGrid& grid, const BallMask& mask) {
  if (!(alpha > 0.0 && alpha <= 2.0)) fail("kalpha_distance: alpha must lie in (0,2]");
  KAlphaNorm r;
  r.alpha = alpha;
  r.far_tail_bound = 2.0 / std::pow(grid.r_max, alpha);
  double best = 0;
  std::int64_t arg = -1;
  for (auto idx : mask.indices) {
    int i, j, k;
    grid.unlin(idx, i, j, k);
    Vec3 xi = grid.node(i, j, k);
    double n = norm(xi);
    if (n == 0.0) continue;
    double v = std::abs(psi(xi) - phi(xi)) / std::pow(n, alpha);
    if (v > best) {
      best = v;
      arg = idx;
    }
  }
  r.value = best;
  r.argmax_index = arg;
  return r;
}

inline KAlphaNorm kalpha_distance(const CharField& a, const CharField& b, double alpha,
                                  const BallMask& mask) {
  if (!(a.grid == b.grid)) fail("kalpha_distance: fields on different grids");
  if (!(alpha > 0.0 && alpha <= 2.0)) fail("kalpha_distance: alpha must lie in (0,2]");
  KAlphaNorm r;
  r.alpha = alpha;
  r.far_tail_bound = 2.0 / std::pow(a.grid.r_max, alpha);
  double best = 0;
  std::int64_t arg = -1;
  for (auto idx : mask.indices) {
    int i, j, k;
    a.grid.unlin(idx, i, j, k);
    Vec3 xi = a.grid.node(i, j, k);
    double n = norm(xi);
    if (n == 0.0) continue;
    double v = std::abs(a.value(idx) - b.value(idx)) / std::pow(n, alpha);
    if (v > best) {
      best = v;
      arg = idx;
    }
  }
  r.value = best;
  r.argmax_index = arg;
  return r;
}

// Grid sup augmented with the analytic near-origin ratio (symbolic specs).
inline KAlphaNorm kalpha_distance(const MeasureSpec& a, const MeasureSpec& b, double alpha,
                                  const SpectralGrid& grid, const BallMask& mask) {
  Carrier ca(a), cb(b);
  ca.prepare_transform(grid);
  cb.prepare_transform(grid);
  KAlphaNorm r = kalpha_distance_fn([&](Vec3 xi) { return ca.eval(xi); },
                                    [&](Vec3 xi) { return cb.eval(xi); }, alpha, grid, mask);
  bool symbolic = !std::holds_alternative<TabulatedDensity>(a) &&
                  !std::holds_alternative<TabulatedDensity>(b);
  if (symbolic) {
    r.near_origin_term = near_origin_ratio(a, b, alpha);
    r.value = std::max(r.value, r.near_origin_term);
  }
  return r;
}

// High-accuracy ||psi - 1||_alpha for symbolic specs: analytic near-origin
// limit plus a dense direction/radius scan with golden-section polish. Used
// where an underestimated norm would spoil inequality checks.
inline double kalpha_norm_dense(const MeasureSpec& spec, double alpha) {
  Carrier c(spec);
  if (c.is_tabulated()) fail("kalpha_norm_dense: symbolic specs only");
  auto ratio_at = [&](Vec3 xi) {
    double n = norm(xi);
    if (n < 1e-300) return 0.0;
    return std::abs(c.eval_minus_one(xi)) / std::pow(n, alpha);
  };

  MeasureSpec one = DiracSum{{{1.0, Vec3{}}}};
  double best = near_origin_ratio(spec, one, alpha);
  if (std::isinf(best)) return best;

  // candidate directions: atoms/means, axes, and a Fibonacci sphere
  std::vector<Vec3> dirs = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1},
                            {0, 1, 1}, {1, 1, 1}, {1, -1, 0}, {0, 1, -1}};
  for (auto& a : c.flat_atoms())
    if (norm(a.b) > 0) dirs.push_back(a.b);
  for (auto& g : c.flat_gaussians())
    if (norm(g.mean) > 0) dirs.push_back(g.mean);
  const int nfib = 640;
  for (int i = 0; i < nfib; ++i) {
    double zc = 1.0 - 2.0 * (i + 0.5) / nfib;
    double rr = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    double ph = 2.0 * pi * 0.6180339887498949 * i;
    dirs.push_back({rr * std::cos(ph), rr * std::sin(ph), zc});
  }

  Vec3 best_dir{0, 0, 1};
  double best_r = 1.0;
  for (auto d0 : dirs) {
    Vec3 d = normalized(d0);
    for (int i = 0; i <= 2400; ++i) {
      double r = std::pow(10.0, -6.0 + 12.0 * i / 2400.0);
      double v = ratio_at(r * d);
      if (v > best) {
        best = v;
        best_dir = d;
        best_r = r;
      }
    }
  }
  // golden-section polish on the radius along the best direction
  {
    double lo = best_r / 1.05, hi = best_r * 1.05;
    const double gr = 0.6180339887498949;
    double a1 = hi - gr * (hi - lo), b1 = lo + gr * (hi - lo);
    double fa = ratio_at(a1 * best_dir), fb = ratio_at(b1 * best_dir);
    for (int it = 0; it < 80; ++it) {
      if (fa < fb) {
        lo = a1;
        a1 = b1;
        fa = fb;
        b1 = lo + gr * (hi - lo);
        fb = ratio_at(b1 * best_dir);
      } else {
        hi = b1;
        b1 = a1;
        fb = fa;
        a1 = hi - gr * (hi - lo);
        fa = ratio_at(a1 * best_dir);
      }
    }
    best = std::max(best, std::max(fa, fb));
  }
  return best;
}

}  // namespace bobk
