// Score normalization and Welch's unequal-variance t-test. The two-sided
// p-value comes from the regularized incomplete beta function, evaluated with
// the modified Lentz continued fraction.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oryx/common.hpp"

namespace oryx {

// (score - random) / (expert - random); affine, may leave [0, 1].
inline double norm_score(double score, double random_score, double expert_score) {
  ORYX_REQUIRE_MSG(expert_score != random_score,
                   "normalization span is zero (expert == random)");
  return (score - random_score) / (expert_score - random_score);
}

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz).
inline double beta_cf(double a, double b, double x) {
  constexpr double eps = 1e-15, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  ORYX_REQUIRE(a > 0.0 && b > 0.0 && x >= 0.0 && x <= 1.0);
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                a * std::log(x) + b * std::log1p(-x));
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_cf(a, b, x) / a;
  return 1.0 - front * detail::beta_cf(b, a, 1.0 - x) / b;
}

// Two-sided survival of Student's t with `dof` degrees of freedom.
inline double student_t_p_two_sided(double t, double dof) {
  ORYX_REQUIRE(dof > 0.0);
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
};

// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
inline WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  ORYX_REQUIRE_MSG(a.size() >= 2 && b.size() >= 2, "each sample needs at least 2 values");
  auto mean = [](const std::vector<double>& v, double n) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / n;
  };
  auto var1 = [](const std::vector<double>& v, double m, double n) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (n - 1.0);
  };
  const double ma = mean(a, na), mb = mean(b, nb);
  const double va = var1(a, ma, na), vb = var1(b, mb, nb);
  ORYX_REQUIRE_MSG(va > 0.0 || vb > 0.0, "both samples have zero variance");
  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.dof = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p = student_t_p_two_sided(r.t, r.dof);
  return r;
}

}  // namespace oryx
