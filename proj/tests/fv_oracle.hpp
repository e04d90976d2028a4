#pragma once

#include <bosegp/linalg.hpp>
#include <bosegp/scattering.hpp>

#include <cmath>

namespace testutil {

// Cell-centred finite volumes for (-Delta + V/2) f = lambda f on [0, R] with
// Neumann walls; faces sit on multiples of h so the jump at r = 1 is a face.
struct FvEigen {
  double lambda;
  Eigen::VectorXd centres, f;
};

inline FvEigen fv_neumann(const bosegp::scattering::RadialPotential& V, double R, int n) {
  const double h = R / n;
  Eigen::VectorXd diag(n), off = Eigen::VectorXd::Zero(n), mass(n), centres(n);
  for (int i = 0; i < n; ++i) {
    mass(i) = (std::pow(i + 1.0, 3) - std::pow(double(i), 3)) * h * h * h / 3.0;
    centres(i) = (i + 0.5) * h;
  }
  Eigen::VectorXd K = Eigen::VectorXd::Zero(n);
  for (int i = 0; i + 1 < n; ++i) {
    const double face = (i + 1) * h;
    const double k = face * face / h;
    K(i) += k;
    K(i + 1) += k;
    off(i) = -k;
  }
  for (int i = 0; i < n; ++i) diag(i) = (K(i) + 0.5 * V(centres(i)) * mass(i)) / mass(i);
  for (int i = 0; i + 1 < n; ++i) off(i) /= std::sqrt(mass(i) * mass(i + 1));

  // Lowest eigenvalue by Sturm-count bisection.
  auto count_below = [&](double x) {
    int c = 0;
    double d = 1;
    for (int i = 0; i < n; ++i) {
      d = diag(i) - x - (i ? off(i - 1) * off(i - 1) / d : 0.0);
      if (d == 0) d = 1e-300;
      if (d < 0) ++c;
    }
    return c;
  };
  double lo = 0, hi = diag.maxCoeff() + 2 * off.cwiseAbs().maxCoeff();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (count_below(mid) >= 1 ? hi : lo) = mid;
  }
  const double lambda = 0.5 * (lo + hi);

  // Eigenvector by inverse iteration just below the eigenvalue.
  const double shift = lambda - 1e-9 * std::max(lambda, 1e-12);
  Eigen::VectorXd a(n), b(n), c(n);
  for (int i = 0; i < n; ++i) {
    b(i) = diag(i) - shift;
    a(i) = i ? off(i - 1) : 0.0;
    c(i) = i + 1 < n ? off(i) : 0.0;
  }
  Eigen::VectorXd x = Eigen::VectorXd::Ones(n);
  for (int it = 0; it < 4; ++it) x = bosegp::linalg::thomas_solve(a, b, c, x).normalized();
  Eigen::VectorXd f = x.cwiseQuotient(mass.cwiseSqrt());
  return {lambda, centres, f};
}

// f at a face r = j h as the mean of the adjacent cells.
inline double fv_face_value(const FvEigen& e, double r, double h) {
  const int j = static_cast<int>(std::lround(r / h));
  return 0.5 * (e.f(j - 1) + e.f(j));
}

inline double richardson3(double h1, double h2, double h4) {
  const double r1 = (4 * h2 - h1) / 3, r2 = (4 * h4 - h2) / 3;
  return (16 * r2 - r1) / 15;
}

}  // namespace testutil
