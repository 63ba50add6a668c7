#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace bobk::fastmath {

// Branch-light sin/cos and exp for the collision quadrature inner loops,
// written so GCC can vectorize the surrounding batch loops. Absolute accuracy
// ~1e-14, well below every quadrature tolerance in the suite. Arguments stay
// within |x| <~ 1e3 (phases b.xi on the grid ball), so a three-constant
// Cody-Waite reduction is sufficient.

inline void sincos(double x, double& s, double& c) {
  constexpr double two_over_pi = 0.63661977236758134308;
  constexpr double p1 = 1.57079632673412561417e0;
  constexpr double p2 = 6.07710050650619224932e-11;
  constexpr double p3 = 2.02226624879595063154e-21;

  double k = std::nearbyint(x * two_over_pi);
  double r = x - k * p1;
  r -= k * p2;
  r -= k * p3;
  std::int64_t q = std::int64_t(k) & 3;

  double r2 = r * r;
  double sp = -7.64716373181981648386e-13;
  sp = sp * r2 + 1.60590438368216145994e-10;
  sp = sp * r2 - 2.50521083854417187751e-8;
  sp = sp * r2 + 2.75573192239198747630e-6;
  sp = sp * r2 - 1.98412698412696162806e-4;
  sp = sp * r2 + 8.33333333333332974823e-3;
  sp = sp * r2 - 1.66666666666666657415e-1;
  double sr = r + r * r2 * sp;

  double cp = 4.77947733238738529744e-14;
  cp = cp * r2 - 1.14707455977297247138e-11;
  cp = cp * r2 + 2.08767569878680989792e-9;
  cp = cp * r2 - 2.75573143513906633035e-7;
  cp = cp * r2 + 2.48015872888517179954e-5;
  cp = cp * r2 - 1.38888888888730564116e-3;
  cp = cp * r2 + 4.16666666666665929218e-2;
  double cr = 1.0 - 0.5 * r2 + r2 * r2 * cp;

  bool swap = (q & 1) != 0;
  double s0 = swap ? cr : sr;
  double c0 = swap ? sr : cr;
  bool sneg = (q == 2) || (q == 3);
  bool cneg = (q == 1) || (q == 2);
  s = sneg ? -s0 : s0;
  c = cneg ? -c0 : c0;
}

inline void sincos_batch(const double* x, double* s, double* c, int n) {
  for (int i = 0; i < n; ++i) sincos(x[i], s[i], c[i]);
}

inline double exp(double x) {
  constexpr double log2e = 1.44269504088896340736;
  constexpr double ln2_hi = 6.93145751953125e-1;
  constexpr double ln2_lo = 1.42860682030941723212e-6;
  x = x < -708.0 ? -708.0 : (x > 708.0 ? 708.0 : x);
  double k = std::nearbyint(x * log2e);
  double r = x - k * ln2_hi;
  r -= k * ln2_lo;
  // e^r on |r| <= ln2/2, Taylor through r^11
  double q = 1.0 / 39916800.0;
  q = q * r + 1.0 / 3628800.0;
  q = q * r + 1.0 / 362880.0;
  q = q * r + 1.0 / 40320.0;
  q = q * r + 1.0 / 5040.0;
  q = q * r + 1.0 / 720.0;
  q = q * r + 1.0 / 120.0;
  q = q * r + 1.0 / 24.0;
  q = q * r + 1.0 / 6.0;
  q = q * r + 0.5;
  q = q * r + 1.0;
  q = q * r + 1.0;
  std::int64_t ik = std::int64_t(k);
  std::uint64_t bits = std::uint64_t(ik + 1023) << 52;
  double scale;
  std::memcpy(&scale, &bits, sizeof(scale));
  return q * scale;
}

}  // namespace bobk::fastmath
