#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>

#include "bobk/common.hpp"

namespace bobk {

// ---------------------------------------------------------------------------
// Angular cross section b(cos theta) on the symmetrized range (0, pi/2],
// with the grazing singularity b ~ K * theta^(-2-2s) as theta -> 0.
// ---------------------------------------------------------------------------

class AngularKernel {
 public:
  using Profile = std::function<double(double)>;  // theta in (0, pi/2] -> b >= 0

  AngularKernel(double s, double K, std::optional<double> cutoff_level = std::nullopt,
                Profile profile = nullptr, std::string profile_name = "power-law")
      : s_(s), big_k_(K), cutoff_(cutoff_level), profile_(std::move(profile)),
        profile_name_(std::move(profile_name)) {
    if (!(s_ > 0.0 && s_ < 1.0)) fail("AngularKernel: s must lie in (0,1)");
    if (!(big_k_ > 0.0)) fail("AngularKernel: K must be positive");
    if (cutoff_ && !(*cutoff_ > 0.0)) fail("AngularKernel: cutoff level must be positive");
  }

  static AngularKernel power_law(double s, double K = 1.0) { return AngularKernel(s, K); }

  AngularKernel with_cutoff(double n) const {
    AngularKernel k = *this;
    if (!(n > 0.0)) fail("AngularKernel: cutoff level must be positive");
    k.cutoff_ = n;
    return k;
  }
  AngularKernel without_cutoff() const {
    AngularKernel k = *this;
    k.cutoff_.reset();
    return k;
  }

  double s() const { return s_; }
  double K() const { return big_k_; }
  bool has_cutoff() const { return cutoff_.has_value(); }
  double cutoff_level() const { return *cutoff_; }
  const std::string& profile_name() const { return profile_name_; }
  bool is_power_law() const { return !profile_; }

  // Raw (uncapped) profile value.
  double profile(double theta) const {
    if (!(theta > 0.0 && theta <= pi / 2 + 1e-12))
      fail("AngularKernel: theta outside (0, pi/2]");
    double v = profile_ ? profile_(theta) : big_k_ * std::pow(theta, -2.0 - 2.0 * s_);
    if (v < 0.0) fail("AngularKernel: negative profile value");
    return v;
  }

  // b_n(cos theta) = min{b(cos theta), n} when a cutoff level is present.
  double operator()(double theta) const {
    double v = profile(theta);
    return cutoff_ ? std::min(v, *cutoff_) : v;
  }

  // Angle at which the power-law profile reaches the cutoff level; quadrature
  // panels are split there so every panel sees a smooth integrand.
  std::optional<double> cutoff_kink_theta() const {
    if (!cutoff_ || profile_) return std::nullopt;
    double t = std::pow(big_k_ / *cutoff_, 1.0 / (2.0 + 2.0 * s_));
    if (t <= 0.0 || t >= pi / 2) return std::nullopt;
    return t;
  }

  // Relative deviations of b(cos theta) * theta^(2+2s) from K at
  // theta in {1e-2, 1e-3, 1e-4}; must be decreasing for a valid profile.
  std::array<double, 3> asymptotic_deviations() const {
    std::array<double, 3> dev{};
    const double thetas[3] = {1e-2, 1e-3, 1e-4};
    for (int i = 0; i < 3; ++i) {
      double v = profile(thetas[i]) * std::pow(thetas[i], 2.0 + 2.0 * s_);
      dev[i] = std::abs(v - big_k_) / big_k_;
    }
    return dev;
  }

 private:
  double s_, big_k_;
  std::optional<double> cutoff_;
  Profile profile_;
  std::string profile_name_;
};

// Symmetrization [b(cos t) + b(cos(pi - t))] * 1_{0<=t<=pi/2} of a profile
// given on the full deviation-angle range (0, pi).
inline AngularKernel symmetrized_b(const std::function<double(double)>& raw_profile,
                                   double s, double K,
                                   std::string profile_name = "symmetrized") {
  // spot-check nonnegativity on a sample of the full range
  for (int i = 1; i <= 64; ++i) {
    double t = pi * i / 65.0;
    if (raw_profile(t) < 0.0) fail("symmetrized_b: raw profile is negative on (0, pi)");
  }
  auto prof = [raw_profile](double theta) {
    double a = raw_profile(theta);
    double b = raw_profile(pi - theta);
    if (a < 0.0 || b < 0.0) fail("symmetrized_b: raw profile is negative");
    return a + b;
  };
  return AngularKernel(s, K, std::nullopt, prof, std::move(profile_name));
}

// ---------------------------------------------------------------------------
// Graded 1-D quadrature in theta.
//
// Geometric panels (ratio `ratio`) from pi/2 down to theta_min, 8-point
// Gauss-Legendre per panel. Integrands here behave like powers of theta near
// zero, so geometric grading equidistributes the error. Panels are split at
// the cutoff kink when the kernel has one.
// ---------------------------------------------------------------------------

namespace detail {

// 8-point Gauss-Legendre nodes/weights on [-1, 1].
inline const std::array<double, 8>& gl8_nodes() {
  static const std::array<double, 8> x = {
      -0.9602898564975362, -0.7966664774136267, -0.5255324099163290,
      -0.1834346424956498, 0.1834346424956498,  0.5255324099163290,
      0.7966664774136267,  0.9602898564975362};
  return x;
}
inline const std::array<double, 8>& gl8_weights() {
  static const std::array<double, 8> w = {
      0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
      0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
      0.2223810344533745, 0.1012285362903763};
  return w;
}

template <class F>
double gl8_panel(const F& f, double a, double b) {
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  KahanSum acc;
  for (int i = 0; i < 8; ++i)
    acc.add(gl8_weights()[i] * f(mid + half * gl8_nodes()[i]));
  return half * acc.value();
}

}  // namespace detail

// Integrate f over [theta_min, pi/2] with graded panels; optional extra panel
// edge (kink) inserted where the integrand loses smoothness.
template <class F>
double graded_theta_integral(const F& f, double theta_min = 1e-8, double ratio = 1.25,
                             std::optional<double> kink = std::nullopt) {
  if (!(theta_min > 0.0 && theta_min < pi / 2)) fail("graded_theta_integral: bad theta_min");
  std::vector<double> edges;
  double e = pi / 2;
  edges.push_back(e);
  while (e / ratio > theta_min) {
    e /= ratio;
    edges.push_back(e);
  }
  edges.push_back(theta_min);
  if (kink && *kink > theta_min && *kink < pi / 2) edges.push_back(*kink);
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  KahanSum acc;
  for (std::size_t i = 0; i + 1 < edges.size(); ++i)
    acc.add(detail::gl8_panel(f, edges[i], edges[i + 1]));
  return acc.value();
}

// ---------------------------------------------------------------------------
// Scalar constants of the kernel.
// ---------------------------------------------------------------------------

// lambda_alpha = 2 pi * int_0^{pi/2} b(cos t) {cos^a(t/2) + sin^a(t/2) - 1} sin t dt.
// Finite iff alpha > 2s for the non-cutoff kernel; the closed-form tail below
// theta_min is added for the power-law profile.
inline double lambda_alpha(const AngularKernel& kernel, double alpha,
                           double theta_min = 1e-8) {
  if (!(alpha > 0.0 && alpha <= 2.0)) fail("lambda_alpha: alpha must lie in (0,2]");
  if (!kernel.has_cutoff() && !(alpha > 2.0 * kernel.s()))
    fail("lambda_alpha: integral diverges (alpha <= 2s with no cutoff level); "
         "requires alpha > 2s or a cutoff kernel");

  auto f = [&](double t) {
    double c = std::cos(0.5 * t), s = std::sin(0.5 * t);
    return kernel(t) * (std::pow(c, alpha) + std::pow(s, alpha) - 1.0) * std::sin(t);
  };
  double core = graded_theta_integral(f, theta_min, 1.25, kernel.cutoff_kink_theta());

  double tail = 0.0;
  if (!kernel.has_cutoff() && kernel.is_power_law()) {
    // leading terms of the integrand expansion at 0:
    //   K t^(-2-2s) [ (t/2)^a - (a/8) t^2 ] * (t + O(t^3))
    double s2 = 2.0 * kernel.s();
    tail = kernel.K() * (std::pow(theta_min, alpha - s2) / (std::pow(2.0, alpha) * (alpha - s2)) -
                         (alpha / 8.0) * std::pow(theta_min, 2.0 - s2) / (2.0 - s2));
  }
  return 2.0 * pi * (core + tail);
}

// Cancellation constant 2 pi * int b(cos t) sin t (1 - cos^{-3}(t/2)) dt; the
// integrand is O(t^{1-2s}) at 0, so the constant is finite for every s < 1.
// The value is negative; its absolute value bounds the J2 term of the
// weighted-norm estimate.
inline double cancellation_constant(const AngularKernel& kernel, double theta_min = 1e-8) {
  auto f = [&](double t) {
    double c = std::cos(0.5 * t);
    return kernel(t) * std::sin(t) * (1.0 - 1.0 / (c * c * c));
  };
  double core = graded_theta_integral(f, theta_min, 1.25, kernel.cutoff_kink_theta());
  double tail = 0.0;
  if (!kernel.has_cutoff() && kernel.is_power_law()) {
    // 1 - cos^{-3}(t/2) = -(3/8) t^2 + O(t^4)
    double s2 = 2.0 * kernel.s();
    tail = -kernel.K() * (3.0 / 8.0) * std::pow(theta_min, 2.0 - s2) / (2.0 - s2);
  }
  return 2.0 * pi * (core + tail);
}

// Total mass 2 pi * int b_n sin t dt of a cutoff kernel (the loss-term
// coefficient); infinite without a cutoff.
inline double kernel_mass(const AngularKernel& kernel, double theta_min = 1e-8) {
  if (!kernel.has_cutoff()) fail("kernel_mass: non-cutoff kernel has infinite mass");
  auto f = [&](double t) { return kernel(t) * std::sin(t); };
  return 2.0 * pi * graded_theta_integral(f, theta_min, 1.25, kernel.cutoff_kink_theta());
}

}  // namespace bobk
