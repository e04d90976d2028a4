#pragma once

#include <bosegp/common.hpp>

#include <algorithm>
#include <numbers>
#include <optional>

namespace bosegp::scattering {

class MeshTooCoarse : public ConvergenceFailure {
 public:
  using ConvergenceFailure::ConvergenceFailure;
};

// Radial potential V(r) >= 0, a polynomial on each piece [r0, r1); zero past
// the last piece.
class RadialPotential {
 public:
  struct Piece {
    double r0 = 0, r1 = 0;
    std::vector<double> coeffs;  // V(r) = sum_k coeffs[k] r^k
    double operator()(double r) const {
      double v = 0;
      for (std::size_t k = coeffs.size(); k-- > 0;) v = v * r + coeffs[k];
      return v;
    }
  };

  RadialPotential() = default;

  static RadialPotential zero() { return {}; }

  static RadialPotential piecewise_polynomial(const std::vector<double>& breaks,
                                              const std::vector<std::vector<double>>& coeffs) {
    require(breaks.size() == coeffs.size() + 1, "RadialPotential: need one more break than pieces");
    require(!breaks.empty() && breaks.front() == 0.0, "RadialPotential: breaks must start at 0");
    RadialPotential v;
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      require(breaks[i + 1] > breaks[i], "RadialPotential: breaks must increase");
      v.pieces_.push_back({breaks[i], breaks[i + 1], coeffs[i]});
    }
    v.validate();
    return v;
  }

  static RadialPotential piecewise_constant(const std::vector<double>& breaks,
                                            const std::vector<double>& values) {
    std::vector<std::vector<double>> c;
    for (double x : values) c.push_back({x});
    return piecewise_polynomial(breaks, c);
  }

  static RadialPotential soft_sphere(double height, double radius) {
    return piecewise_constant({0.0, radius}, {height});
  }

  // Linear interpolation of samples (r_i, V_i) with r_0 = 0.
  static RadialPotential tabulated(const std::vector<double>& r, const std::vector<double>& v) {
    require(r.size() == v.size() && r.size() >= 2, "RadialPotential: bad table");
    std::vector<std::vector<double>> c;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) {
      require(r[i + 1] > r[i], "RadialPotential: table abscissae must increase");
      const double slope = (v[i + 1] - v[i]) / (r[i + 1] - r[i]);
      c.push_back({v[i] - slope * r[i], slope});
    }
    return piecewise_polynomial(r, c);
  }

  // N^2 V(N r): breaks shrink by N, the r^k coefficient grows by N^{2+k}.
  RadialPotential scaled(double N) const {
    require(N > 0, "RadialPotential: scale must be positive");
    RadialPotential out;
    for (const auto& p : pieces_) {
      Piece q{p.r0 / N, p.r1 / N, p.coeffs};
      for (std::size_t k = 0; k < q.coeffs.size(); ++k) q.coeffs[k] *= std::pow(N, 2.0 + k);
      out.pieces_.push_back(q);
    }
    return out;
  }

  double operator()(double r) const {
    for (const auto& p : pieces_)
      if (r >= p.r0 && r < p.r1) return p(r);
    return 0.0;
  }

  const std::vector<Piece>& pieces() const { return pieces_; }
  bool is_zero() const { return max_value() == 0.0; }

  double support_radius() const {
    double r = 0;
    for (const auto& p : pieces_)
      if (p.coeffs.size() && std::any_of(p.coeffs.begin(), p.coeffs.end(), [](double c) { return c != 0; }))
        r = p.r1;
    return r;
  }

  double max_value() const {
    double m = 0;
    for (const auto& p : pieces_)
      for (int i = 0; i <= kSamples; ++i) m = std::max(m, p(p.r0 + (p.r1 - p.r0) * i / kSamples));
    return m;
  }

 private:
  static constexpr int kSamples = 64;

  void validate() const {
    for (const auto& p : pieces_)
      for (int i = 0; i <= kSamples; ++i) {
        const double x = p.r0 + (p.r1 - p.r0) * i / kSamples;
        const double v = p(x);
        if (!std::isfinite(v)) throw InvalidArgument("RadialPotential: non-finite value");
        if (v < 0) throw InvalidArgument("RadialPotential: negative V rejected (V must be >= 0)");
      }
  }

  std::vector<Piece> pieces_;
};

// u'' = (V/2 - lambda) u, u(0) = 0, u'(0) = 1, by RK4 on segments whose ends
// include every break of V, so the integrand is smooth inside each step.
struct RadialTrajectory {
  std::vector<double> r, u, du;
  std::vector<std::size_t> segment_starts;  // node index where each segment begins
};

inline RadialTrajectory integrate_radial(const RadialPotential& V, double lambda, double R, double step) {
  require(R > 0 && step > 0, "integrate_radial: need R > 0 and step > 0");
  struct Seg {
    double a, b;
    const RadialPotential::Piece* piece;
  };
  std::vector<Seg> segs;
  double x = 0;
  for (const auto& p : V.pieces()) {
    if (p.r0 >= R) break;
    if (p.r0 > x) segs.push_back({x, p.r0, nullptr});
    segs.push_back({p.r0, std::min(p.r1, R), &p});
    x = std::min(p.r1, R);
  }
  if (x < R) segs.push_back({x, R, nullptr});

  RadialTrajectory t;
  double u = 0, du = 1;
  t.r.push_back(0);
  t.u.push_back(u);
  t.du.push_back(du);
  for (const auto& s : segs) {
    t.segment_starts.push_back(t.r.size() - 1);
    long n = std::max<long>(2, static_cast<long>(std::ceil((s.b - s.a) / step - 1e-9)));
    if (n % 2) ++n;  // even step counts keep Simpson's rule available per segment
    const double h = (s.b - s.a) / n;
    auto g = [&](double r) { return 0.5 * (s.piece ? (*s.piece)(r) : 0.0) - lambda; };
    for (long i = 0; i < n; ++i) {
      const double r = s.a + i * h;
      const double g0 = g(r), g1 = g(r + 0.5 * h), g2 = g(r + h);
      const double k1u = du, k1v = g0 * u;
      const double k2u = du + 0.5 * h * k1v, k2v = g1 * (u + 0.5 * h * k1u);
      const double k3u = du + 0.5 * h * k2v, k3v = g1 * (u + 0.5 * h * k2u);
      const double k4u = du + h * k3v, k4v = g2 * (u + h * k3u);
      u += h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u);
      du += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
      t.r.push_back(i + 1 == n ? s.b : s.a + (i + 1) * h);
      t.u.push_back(u);
      t.du.push_back(du);
    }
  }
  t.segment_starts.push_back(t.r.size() - 1);
  return t;
}

// Composite Simpson over the trajectory segments for samples y at the nodes.
inline double simpson(const RadialTrajectory& t, const std::vector<double>& y, double upto = INFINITY) {
  double s = 0;
  for (std::size_t k = 0; k + 1 < t.segment_starts.size(); ++k) {
    const std::size_t a = t.segment_starts[k], b = t.segment_starts[k + 1];
    if (t.r[a] >= upto) break;
    const double h = (t.r[b] - t.r[a]) / static_cast<double>(b - a);
    double seg = y[a] + y[b];
    for (std::size_t i = a + 1; i < b; ++i) seg += ((i - a) % 2 ? 4.0 : 2.0) * y[i];
    s += seg * h / 3;
  }
  return s;
}

struct ZeroEnergySolution {
  std::vector<double> r, f, u;
  double scattering_length = 0;           // from the exterior fit u = c (r - a)
  double scattering_length_integral = 0;  // from 8 pi a = int V f
  double slope = 1;                       // c
  double discretization_error = 0;        // Richardson estimate of the error in a_h, from a_{h/2}
  double ode_residual = 0;                // max |-2u'' + Vu| (second differences) / max|u|
  double R_max = 0, step = 0;
};

struct NeumannSolution {
  int N = 0;
  double ell = 0, radius = 0, lambda = 0;
  std::vector<double> r, f, df;  // f normalised with f(radius) = 1
  double boundary_residual = 0;  // |u'(R) R - u(R)| / |u(R)|
  double ode_residual = 0;       // max |-f'' - 2f'/r + (V/2 - lambda) f| at interior nodes

  double w(double x) const { return 1.0 - f_at(x); }
  double dw(double x) const { return x >= radius ? 0.0 : -interp(x, true); }
  double f_at(double x) const { return x >= radius ? 1.0 : interp(x, false); }

 private:
  // Cubic Hermite interpolation on the node values and slopes.
  double interp(double x, bool derivative) const {
    auto it = std::upper_bound(r.begin(), r.end(), x);
    std::size_t i = it == r.begin() ? 0 : static_cast<std::size_t>(it - r.begin()) - 1;
    if (i + 1 >= r.size()) i = r.size() - 2;
    const double h = r[i + 1] - r[i], t = (x - r[i]) / h;
    const double h00 = 2 * t * t * t - 3 * t * t + 1, h10 = t * t * t - 2 * t * t + t;
    const double h01 = -2 * t * t * t + 3 * t * t, h11 = t * t * t - t * t;
    if (!derivative) return h00 * f[i] + h10 * h * df[i] + h01 * f[i + 1] + h11 * h * df[i + 1];
    const double d00 = (6 * t * t - 6 * t) / h, d10 = 3 * t * t - 4 * t + 1;
    const double d01 = (-6 * t * t + 6 * t) / h, d11 = 3 * t * t - 2 * t;
    return d00 * f[i] + d10 * df[i] + d01 * f[i + 1] + d11 * df[i + 1];
  }
};

struct ScatteringSolution {
  ZeroEnergySolution zero;
  std::optional<NeumannSolution> neumann;
};

namespace detail {

struct Extraction {
  double a = 0, c = 1, a_int = 0;
};

inline Extraction extract(const RadialPotential& V, const RadialTrajectory& t, double R0, double R_max) {
  const double from = R_max - 0.2 * (R_max - R0);
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < t.r.size(); ++i)
    if (t.r[i] >= from) {
      xs.push_back(t.r[i]);
      ys.push_back(t.u[i]);
    }
  Extraction e;
  auto line = fit_line(xs, ys);
  e.c = line.slope;
  e.a = -line.intercept / line.slope;
  // Simpson per segment with that segment's own piece, so breaks see one-sided limits.
  double s = 0;
  for (std::size_t k = 0; k + 1 < t.segment_starts.size(); ++k) {
    const std::size_t a = t.segment_starts[k], b = t.segment_starts[k + 1];
    const double mid = 0.5 * (t.r[a] + t.r[b]);
    const RadialPotential::Piece* piece = nullptr;
    for (const auto& p : V.pieces())
      if (mid >= p.r0 && mid < p.r1) piece = &p;
    if (!piece) continue;
    const double h = (t.r[b] - t.r[a]) / static_cast<double>(b - a);
    auto val = [&](std::size_t i) { return (*piece)(t.r[i]) * t.u[i] * t.r[i]; };
    double seg = val(a) + val(b);
    for (std::size_t i = a + 1; i < b; ++i) seg += ((i - a) % 2 ? 4.0 : 2.0) * val(i);
    s += seg * h / 3;
  }
  e.a_int = s / (2 * e.c);
  return e;
}

}  // namespace detail

// Zero-energy scattering solution with u = r f, -2u'' + V u = 0.
inline ZeroEnergySolution solve_zero_energy(const RadialPotential& V, double R_max, double step,
                                            double tolerance = 1e-8) {
  const double R0 = V.support_radius();
  require(R_max > R0 && R_max > 0, "solve_zero_energy: R_max must exceed the support radius");
  require(step > 0 && tolerance > 0, "solve_zero_energy: step and tolerance must be positive");
  auto t = integrate_radial(V, 0.0, R_max, step);
  auto e = detail::extract(V, t, R0, R_max);
  auto t2 = integrate_radial(V, 0.0, R_max, 0.5 * step);
  auto e2 = detail::extract(V, t2, R0, R_max);

  ZeroEnergySolution s;
  s.R_max = R_max;
  s.step = step;
  s.scattering_length = e.a;
  s.scattering_length_integral = e.a_int;
  s.slope = e.c;
  s.discretization_error = std::abs(e.a - e2.a) * 16.0 / 15.0;
  if (s.discretization_error > tolerance * std::max(1.0, R0))
    throw MeshTooCoarse("solve_zero_energy: mesh too coarse (error estimate " +
                        std::to_string(s.discretization_error) + " above tolerance)");
  s.r = t.r;
  s.u = t.u;
  if (V.is_zero()) {
    // Free equation: u = r, f = 1, a = 0 exactly.
    s.u = s.r;
    s.f.assign(s.r.size(), 1.0);
    s.scattering_length = s.scattering_length_integral = s.discretization_error = 0.0;
    s.slope = 1.0;
    return s;
  }
  s.f.resize(t.r.size());
  double umax = 0;
  for (std::size_t i = 0; i < t.r.size(); ++i) {
    s.f[i] = i == 0 ? t.du[0] / e.c : t.u[i] / (e.c * t.r[i]);
    umax = std::max(umax, std::abs(t.u[i]));
  }
  for (std::size_t k = 0; k + 1 < t.segment_starts.size(); ++k) {
    const std::size_t a = t.segment_starts[k], b = t.segment_starts[k + 1];
    const double mid = 0.5 * (t.r[a] + t.r[b]);
    const double h = (t.r[b] - t.r[a]) / static_cast<double>(b - a);
    double vseg = 0;
    for (const auto& p : V.pieces())
      if (mid >= p.r0 && mid < p.r1) vseg = 1;
    for (std::size_t i = a + 1; i < b; ++i) {
      const double upp = (t.u[i + 1] - 2 * t.u[i] + t.u[i - 1]) / (h * h);
      const double v = vseg ? V(t.r[i]) : 0.0;
      s.ode_residual = std::max(s.ode_residual, std::abs(-2 * upp + v * t.u[i]) / umax);
    }
  }
  return s;
}

// Neumann ground state of (-Delta + V/2) f = lambda f on the ball of radius N ell.
inline NeumannSolution solve_neumann(const RadialPotential& V, int N, double ell, double step) {
  require(N >= 1 && ell > 0 && step > 0, "solve_neumann: need N >= 1, ell > 0, step > 0");
  const double R = N * ell;
  require(R > V.support_radius(), "solve_neumann: N ell must exceed the support radius");
  auto too_high = [&](double lambda) {
    auto t = integrate_radial(V, lambda, R, step);
    for (std::size_t i = 1; i < t.u.size(); ++i)
      if (t.u[i] <= 0) return true;
    return t.du.back() * R - t.u.back() < 0;
  };
  double lo = 0, hi = 0.5 * V.max_value();
  if (hi > 0) {
    if (too_high(lo)) throw ConvergenceFailure("solve_neumann: shooting bracket failure at lambda = 0");
    if (!too_high(hi)) throw ConvergenceFailure("solve_neumann: shooting bracket failure at max V / 2");
    for (int it = 0; it < 200 && hi - lo > 4 * std::numeric_limits<double>::epsilon() * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (too_high(mid) ? hi : lo) = mid;
    }
  }
  NeumannSolution s;
  s.N = N;
  s.ell = ell;
  s.radius = R;
  s.lambda = 0.5 * (lo + hi);
  auto t = integrate_radial(V, s.lambda, R, step);
  const double uR = t.u.back();
  const double scale = uR / R;  // u / r at the boundary
  s.boundary_residual = std::abs(t.du.back() * R - uR) / std::abs(uR);
  s.r = t.r;
  s.f.resize(t.r.size());
  s.df.resize(t.r.size());
  for (std::size_t i = 0; i < t.r.size(); ++i) {
    if (i == 0) {
      s.f[i] = t.du[0] / scale;
      s.df[i] = 0.0;
    } else {
      const double r = t.r[i];
      s.f[i] = t.u[i] / (r * scale);
      s.df[i] = (t.du[i] * r - t.u[i]) / (r * r * scale);
    }
  }
  if (V.is_zero()) {
    // u = r exactly; clean the last ulp so f is identically one.
    std::fill(s.f.begin(), s.f.end(), 1.0);
    std::fill(s.df.begin(), s.df.end(), 0.0);
  }
  // Residual of the f-form equation from second differences of u = r f.
  for (std::size_t k = 0; k + 1 < t.segment_starts.size(); ++k) {
    const std::size_t a = t.segment_starts[k], b = t.segment_starts[k + 1];
    const double mid = 0.5 * (t.r[a] + t.r[b]);
    const double h = (t.r[b] - t.r[a]) / static_cast<double>(b - a);
    const RadialPotential::Piece* piece = nullptr;
    for (const auto& p : V.pieces())
      if (mid >= p.r0 && mid < p.r1) piece = &p;
    for (std::size_t i = a + 1; i < b; ++i) {
      const double upp = (t.u[i + 1] - 2 * t.u[i] + t.u[i - 1]) / (h * h) / scale;
      const double v = piece ? (*piece)(t.r[i]) : 0.0;
      const double res = -upp / t.r[i] + (0.5 * v - s.lambda) * s.f[i];
      s.ode_residual = std::max(s.ode_residual, std::abs(res));
    }
  }
  return s;
}

inline ScatteringSolution solve(const RadialPotential& V, double R_max, double step,
                                std::optional<std::pair<int, double>> neumann = std::nullopt) {
  ScatteringSolution s;
  s.zero = solve_zero_energy(V, R_max, step);
  if (neumann) s.neumann = solve_neumann(V, neumann->first, neumann->second, step);
  return s;
}

// Radial Fourier transform with the e^{-2 pi i p x} convention:
// w_hat(p) = 4 pi int w(r) sin(2 pi p r) / (2 pi p r) r^2 dr.
inline double radial_fourier(const NeumannSolution& s, double p) {
  const double k = 2 * std::numbers::pi * p;
  double sum = 0;
  // Trapezoid-corrected Simpson needs uniform sub-meshes; integrate node to node
  // with Simpson on pairs of intervals where the spacing is uniform.
  const auto& r = s.r;
  std::size_t i = 0;
  auto g = [&](std::size_t j) {
    const double x = r[j];
    const double sinc = x == 0 || k == 0 ? 1.0 : std::sin(k * x) / (k * x);
    return (1.0 - s.f[j]) * sinc * x * x;
  };
  while (i + 2 < r.size()) {
    const double h1 = r[i + 1] - r[i], h2 = r[i + 2] - r[i + 1];
    if (std::abs(h1 - h2) <= 1e-9 * h1) {
      sum += h1 / 3 * (g(i) + 4 * g(i + 1) + g(i + 2));
      i += 2;
    } else {
      sum += 0.5 * h1 * (g(i) + g(i + 1));
      i += 1;
    }
  }
  if (i + 1 < r.size()) sum += 0.5 * (r[i + 1] - r[i]) * (g(i) + g(i + 1));
  return 4 * std::numbers::pi * sum;
}

struct WBounds {
  double C_decay = 0;     // max w(r)(r + 1)
  double C_gradient = 0;  // max |w'(r)|(r^2 + 1)
  double C_fourier = 0;   // max p^2 |w_hat(p)|
  std::vector<double> p, w_hat;
};

inline std::vector<double> default_p_grid(int count = 400, double p_min = 1e-2, double p_max = 50.0) {
  std::vector<double> p(count);
  for (int i = 0; i < count; ++i) p[i] = p_min * std::pow(p_max / p_min, i / double(count - 1));
  return p;
}

inline WBounds w_ell_bounds_check(const NeumannSolution& s, const std::vector<double>& p_grid = default_p_grid()) {
  WBounds b;
  for (std::size_t i = 0; i < s.r.size(); ++i) {
    const double r = s.r[i];
    b.C_decay = std::max(b.C_decay, (1.0 - s.f[i]) * (r + 1));
    b.C_gradient = std::max(b.C_gradient, std::abs(s.df[i]) * (r * r + 1));
  }
  b.p = p_grid;
  for (double p : p_grid) {
    const double wh = radial_fourier(s, p);
    b.w_hat.push_back(wh);
    b.C_fourier = std::max(b.C_fourier, p * p * std::abs(wh));
  }
  if (!std::isfinite(b.C_decay) || !std::isfinite(b.C_gradient) || !std::isfinite(b.C_fourier))
    throw ConvergenceFailure("w_ell_bounds_check: non-finite constant");
  return b;
}

struct CouplingCheck {
  double a = 0;           // scattering length of V
  double a_scaled = 0;    // scattering length of N^2 V(N .)
  double a_over_N = 0;
  double relative_difference = 0;
  bool passed = true;
};

// Scaling law: N^2 V(N .) has scattering length a / N. The scaled problem is
// solved afresh on the scaled mesh.
inline CouplingCheck gp_coupling(const RadialPotential& V, const ZeroEnergySolution& sol, int N,
                                 double rel_tol = 1e-4) {
  require(N >= 1, "gp_coupling: N must be positive");
  CouplingCheck c;
  c.a = sol.scattering_length;
  c.a_over_N = c.a / N;
  if (V.is_zero()) return c;
  auto scaled = solve_zero_energy(V.scaled(N), sol.R_max / N, sol.step / N);
  c.a_scaled = scaled.scattering_length;
  c.relative_difference = std::abs(c.a_scaled - c.a_over_N) / std::abs(c.a_over_N);
  c.passed = c.relative_difference <= rel_tol;
  return c;
}

}  // namespace bosegp::scattering
