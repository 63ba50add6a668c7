#pragma once

#include <optional>
#include <vector>

#include "bobk/common.hpp"
#include "bobk/kernel.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Sphere rule for int_{S^2} b(cos theta) F(theta, phi) sin theta dtheta dphi
// over theta in (0, pi/2], phi in [0, 2pi).
//
// theta: geometric panels (ratio toward 0) with 2-point Gauss-Legendre on the
// regularized zone (0, theta_c], plus a Gauss-Legendre rule on the direct
// zone [theta_c, pi/2]. Cutoff kernels get a panel edge at the min{b,n} kink
// so every panel integrand is smooth. Below the smallest panel edge the
// integrand tail is bounded in closed form and reported, never added.
//
// phi: uniform nodes, spectrally accurate for the periodic integrands here.
// ---------------------------------------------------------------------------

struct SphereQuadParams {
  int n_theta_reg = 48;    // graded nodes in the regularized zone (2 per panel)
  int n_phi = 32;
  double theta_c = pi / 8;
  double grading_ratio = 1.35;
  int n_theta_direct = 16;
};

struct SphereQuadrature {
  struct ThetaNode {
    double theta;
    double weight;  // d(theta) weight; b * sin(theta) applied by the caller
    bool regularized;
    int n_phi;      // ring resolution; small rings carry few azimuthal modes
  };

  SphereQuadParams params;
  std::vector<ThetaNode> theta_nodes;
  int n_phi = 32;
  double theta_c = pi / 8;
  double theta_min = 0;  // smallest panel edge

  // Uniform phi rules are spectrally accurate; the integrand bandwidth on a
  // ring scales with its radius R sin(theta)/2 times the field's velocity
  // support, so small-theta rings may use n_phi/2 or n_phi/4 nodes. Bandwidth
  // argument: Fourier modes decay like J_n(k), negligible for n > k + 8.
  void assign_phi_counts(double bandwidth_scale) {
    for (auto& tn : theta_nodes) {
      double k = bandwidth_scale * std::sin(tn.theta);
      int np = n_phi;
      if (k <= 0.5 && n_phi / 4 >= 8)
        np = n_phi / 4;
      else if (k <= 2.0 && n_phi / 2 >= 8)
        np = n_phi / 2;
      tn.n_phi = np;
    }
  }
};

namespace detail {

// Gauss-Legendre nodes/weights on [-1,1] by Newton iteration on P_n.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double xi = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = xi;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * xi * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (xi * p1 - p0) / (xi * xi - 1.0);
      double dx = p1 / dp;
      xi -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    x[n - 1 - i] = xi;
    w[n - 1 - i] = 2.0 / ((1.0 - xi * xi) * dp * dp);
  }
}

}  // namespace detail

inline SphereQuadrature make_sphere_quadrature(const SphereQuadParams& p,
                                               const AngularKernel* kernel = nullptr) {
  if (p.n_theta_reg < 2 || p.n_theta_reg % 2 != 0)
    fail("SphereQuadrature: n_theta_reg must be even and >= 2");
  if (p.n_phi < 4 || p.n_phi % 2 != 0) fail("SphereQuadrature: n_phi must be even and >= 4");
  if (!(p.theta_c > 0 && p.theta_c < pi / 2)) fail("SphereQuadrature: theta_c out of range");
  if (!(p.grading_ratio > 1.0)) fail("SphereQuadrature: grading ratio must exceed 1");

  SphereQuadrature q;
  q.params = p;
  q.n_phi = p.n_phi;
  q.theta_c = p.theta_c;

  // regularized zone: geometric panel edges theta_c / ratio^j
  int n_panels = p.n_theta_reg / 2;
  std::vector<double> edges;
  double e = p.theta_c;
  for (int j = 0; j <= n_panels; ++j) {
    edges.push_back(e);
    e /= p.grading_ratio;
  }
  q.theta_min = edges.back();

  // Below the cutoff kink the kernel is the constant n and the integrand is
  // smooth, so a shallow Gauss subdivision replaces the fine grading there.
  double kink_theta = 0;
  if (kernel) {
    if (auto kink = kernel->cutoff_kink_theta()) {
      if (*kink > q.theta_min && *kink < p.theta_c) {
        kink_theta = *kink;
        edges.erase(std::remove_if(edges.begin(), edges.end(),
                                   [&](double x) { return x < kink_theta; }),
                    edges.end());
        edges.push_back(kink_theta);
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  const double g2n = 1.0 / std::sqrt(3.0);  // 2-point Gauss-Legendre
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    double a = edges[i], b = edges[i + 1];
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    q.theta_nodes.push_back({mid - half * g2n, half, true, p.n_phi});
    q.theta_nodes.push_back({mid + half * g2n, half, true, p.n_phi});
  }
  if (kink_theta > 0) {
    std::vector<double> gx, gw;
    detail::gauss_legendre(5, gx, gw);
    double sub_ratio = std::pow(kink_theta / q.theta_min, 1.0 / 3.0);
    double hi = kink_theta;
    for (int panel = 0; panel < 3; ++panel) {
      double lo = hi / sub_ratio;
      double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
      for (int i = 0; i < 5; ++i)
        q.theta_nodes.push_back({mid + half * gx[i], half * gw[i], true, p.n_phi});
      hi = lo;
    }
  }

  // direct zone: Gauss-Legendre on [theta_c, pi/2], split at a kink if any
  std::vector<std::pair<double, double>> direct_panels = {{p.theta_c, pi / 2}};
  if (kernel) {
    if (auto kink = kernel->cutoff_kink_theta()) {
      if (*kink > p.theta_c && *kink < pi / 2)
        direct_panels = {{p.theta_c, *kink}, {*kink, pi / 2}};
    }
  }
  int per_panel = std::max(4, p.n_theta_direct / int(direct_panels.size()));
  std::vector<double> gx, gw;
  detail::gauss_legendre(per_panel, gx, gw);
  for (auto [a, b] : direct_panels) {
    double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    for (int i = 0; i < per_panel; ++i)
      q.theta_nodes.push_back({mid + half * gx[i], half * gw[i], false, p.n_phi});
  }
  return q;
}

// Surface measure of the direct zone integrated by the rule; the exact value
// is 2 pi (cos theta_c); reproduced to 1e-10 by construction (rule check).
inline double direct_zone_area(const SphereQuadrature& q) {
  KahanSum s;
  for (auto& tn : q.theta_nodes)
    if (!tn.regularized) s.add(tn.weight * std::sin(tn.theta));
  return 2.0 * pi * s.value();
}

// Closed-form bound on the regularized-zone tail below theta_min for a field
// with ||1 - psi||_alpha <= norm_alpha, from the term-by-term estimates
//   |I1|,|I3| <= 2 pi K ||.|| (R/2)^a  t^(a-2s)/(a-2s)
//   |I2|      <= 2 pi K ||.|| R^a [4 2^{-a} t^(a-2s)/(a-2s) + 4^{-a} t^(2a-2s)/(2a-2s)]
// evaluated at t = theta_min, |xi| = R. Reported alongside rhs values.
inline double regularized_tail_bound(const SphereQuadrature& q, const AngularKernel& k,
                                     double alpha, double norm_alpha, double r_max) {
  double t = q.theta_min, s2 = 2.0 * k.s();
  if (!(alpha > s2)) return std::numeric_limits<double>::infinity();
  double ra = std::pow(r_max, alpha);
  double lead = std::pow(t, alpha - s2) / (alpha - s2);
  double i13 = 2.0 * std::pow(2.0, -alpha) * lead;
  double i2 = 4.0 * std::pow(2.0, -alpha) * lead +
              std::pow(4.0, -alpha) * std::pow(t, 2.0 * alpha - s2) / (2.0 * alpha - s2);
  return 2.0 * pi * k.K() * norm_alpha * ra * (i13 + i2);
}

}  // namespace bobk
