#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace bosegp {

using cplx = std::complex<double>;
using VectorXc = Eigen::VectorXcd;
using MatrixXc = Eigen::MatrixXcd;
using SparseXc = Eigen::SparseMatrix<cplx>;

// Every failure the library reports is one of these; `what()` carries the detail.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ResourceLimit : public Error {
 public:
  using Error::Error;
};

class ConvergenceFailure : public Error {
 public:
  using Error::Error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

// Saturating binomial coefficient; returns +inf-like max when it does not fit.
inline std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    const std::uint64_t num = n - k + i;
    // r * num / i is exact because r * num is divisible by i at every step.
    if (r > kMax / num) return kMax;
    r = r * num / i;
  }
  return r;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "fit_line: need at least two points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0, "fit_line: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

// Slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, "loglog_slope: non-positive data");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  return fit_line(lx, ly).slope;
}

// Least squares for log y = c0 + c1 log x1 + c2 log x2; returns (c1, c2).
inline std::pair<double, double> loglog_fit2(const std::vector<double>& x1,
                                             const std::vector<double>& x2,
                                             const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(y.size());
  require(n >= 3 && x1.size() == y.size() && x2.size() == y.size(), "loglog_fit2: bad sizes");
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(x1[i] > 0 && x2[i] > 0 && y[i] > 0, "loglog_fit2: non-positive data");
    A(i, 0) = 1.0;
    A(i, 1) = std::log(x1[i]);
    A(i, 2) = std::log(x2[i]);
    b(i) = std::log(y[i]);
  }
  Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  return {c(1), c(2)};
}

}  // namespace bosegp
