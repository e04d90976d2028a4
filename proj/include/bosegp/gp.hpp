#pragma once

#include <bosegp/common.hpp>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <numbers>
#include <optional>

namespace bosegp::gp {

enum class GridKind { interval_dirichlet, interval_periodic, radial3d };

// Nodes and quadrature weights. Intervals are [-L, L] (Dirichlet nodes exclude
// the ends); the radial grid is cell-centred on [0, R] with exact shell volumes
// as weights and phi = 0 imposed at the face r = R by a ghost cell.
struct Grid {
  GridKind kind = GridKind::interval_dirichlet;
  int n = 0;
  double extent = 0;  // L for intervals, R for radial
  double h = 0;
  std::vector<double> x, w;

  static Grid interval(int n, double L, bool periodic = false) {
    require(n >= 3 && L > 0, "Grid: need n >= 3 and L > 0");
    Grid g;
    g.kind = periodic ? GridKind::interval_periodic : GridKind::interval_dirichlet;
    g.n = n;
    g.extent = L;
    g.h = periodic ? 2 * L / n : 2 * L / (n + 1);
    for (int i = 0; i < n; ++i) {
      g.x.push_back(-L + (periodic ? i : i + 1) * g.h);
      g.w.push_back(g.h);
    }
    return g;
  }

  static Grid radial(int n, double R) {
    require(n >= 3 && R > 0, "Grid: need n >= 3 and R > 0");
    Grid g;
    g.kind = GridKind::radial3d;
    g.n = n;
    g.extent = R;
    g.h = R / n;
    for (int i = 0; i < n; ++i) {
      const double r = (i + 0.5) * g.h;
      g.x.push_back(r);
      g.w.push_back(4 * std::numbers::pi * g.h * (r * r + g.h * g.h / 12));
    }
    return g;
  }

  bool periodic() const { return kind == GridKind::interval_periodic; }
  bool radial() const { return kind == GridKind::radial3d; }
  double distance(int i) const { return std::abs(x[i]); }

  double integrate(const std::vector<double>& f) const {
    double s = 0;
    for (int i = 0; i < n; ++i) s += w[i] * f[i];
    return s;
  }
  double norm2(const std::vector<double>& f) const {
    double s = 0;
    for (int i = 0; i < n; ++i) s += w[i] * f[i] * f[i];
    return std::sqrt(s);
  }

  // Kinetic form phi^T K phi = sum_links c (phi_i - phi_j)^2 + sum_walls c phi_i^2.
  struct Link {
    int i, j;
    double c;
  };
  std::vector<Link> links() const {
    std::vector<Link> out;
    if (radial()) {
      for (int i = 0; i + 1 < n; ++i) {
        const double face = (i + 1) * h;
        out.push_back({i, i + 1, 4 * std::numbers::pi * face * face / h});
      }
    } else {
      for (int i = 0; i + 1 < n; ++i) out.push_back({i, i + 1, 1.0 / h});
      if (periodic()) out.push_back({n - 1, 0, 1.0 / h});
    }
    return out;
  }
  std::vector<std::pair<int, double>> walls() const {
    if (radial()) return {{n - 1, 2 * 4 * std::numbers::pi * extent * extent / h}};
    if (periodic()) return {};
    return {{0, 1.0 / h}, {n - 1, 1.0 / h}};
  }

  Eigen::SparseMatrix<double> stiffness() const {
    std::vector<Eigen::Triplet<double>> t;
    for (auto [i, j, c] : links()) {
      t.emplace_back(i, i, c);
      t.emplace_back(j, j, c);
      t.emplace_back(i, j, -c);
      t.emplace_back(j, i, -c);
    }
    for (auto [i, c] : walls()) t.emplace_back(i, i, c);
    Eigen::SparseMatrix<double> K(n, n);
    K.setFromTriplets(t.begin(), t.end());
    return K;
  }

  // Discrete Laplacian -W^{-1} K phi.
  std::vector<double> laplacian(const std::vector<double>& phi) const {
    std::vector<double> out(n, 0.0);
    for (auto [i, j, c] : links()) {
      out[i] -= c * (phi[i] - phi[j]);
      out[j] -= c * (phi[j] - phi[i]);
    }
    for (auto [i, c] : walls()) out[i] -= c * phi[i];
    for (int i = 0; i < n; ++i) out[i] /= w[i];
    return out;
  }

  // Centred first differences with the boundary conditions supplying ghosts.
  std::vector<double> gradient(const std::vector<double>& phi) const {
    std::vector<double> g(n);
    for (int i = 0; i < n; ++i) {
      double left, right;
      if (periodic()) {
        left = phi[(i + n - 1) % n];
        right = phi[(i + 1) % n];
      } else if (radial()) {
        left = i ? phi[i - 1] : phi[0];  // even extension through r = 0
        right = i + 1 < n ? phi[i + 1] : -phi[i];
      } else {
        left = i ? phi[i - 1] : 0.0;
        right = i + 1 < n ? phi[i + 1] : 0.0;
      }
      g[i] = (right - left) / (2 * h);
    }
    return g;
  }
};

// Trap catalogue. All are even in x; evaluated on |x|.
struct Trap {
  enum class Kind { harmonic, quartic, soft_box, none } kind = Kind::harmonic;
  double strength = 1.0;  // omega for harmonic, prefactor for quartic
  double width = 1.0;     // L for the soft box (|x|/L)^12

  double operator()(double x) const {
    switch (kind) {
      case Kind::harmonic: return strength * strength * x * x;
      case Kind::quartic: return strength * x * x * x * x;
      case Kind::soft_box: return std::pow(std::abs(x) / width, 12);
      case Kind::none: return 0.0;
    }
    return 0.0;
  }
  std::vector<double> sample(const Grid& g) const {
    std::vector<double> v(g.n);
    for (int i = 0; i < g.n; ++i) v[i] = (*this)(g.x[i]);
    return v;
  }
  static Trap harmonic(double omega = 1.0) { return {Kind::harmonic, omega, 1.0}; }
  static Trap quartic(double c = 1.0) { return {Kind::quartic, c, 1.0}; }
  static Trap soft_box(double L) { return {Kind::soft_box, 1.0, L}; }
  static Trap none() { return {Kind::none, 0.0, 1.0}; }
};

// Smallest C with V(x + y) <= C (V(x) + C)(V(y) + C) on all sample pairs,
// by bisection (the right side grows with C).
inline double submultiplicativity_constant(const Trap& V, const std::vector<double>& samples) {
  auto holds = [&](double C) {
    for (double x : samples)
      for (double y : samples)
        if (V(x + y) > C * (V(x) + C) * (V(y) + C)) return false;
    return true;
  };
  double hi = 1.0;
  while (!holds(hi)) {
    hi *= 2;
    if (hi > 1e12) throw ConvergenceFailure("submultiplicativity_constant: no constant up to 1e12");
  }
  double lo = 0.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    (holds(mid) ? hi : lo) = mid;
  }
  return hi;
}

struct EnergyParts {
  double kinetic = 0, potential = 0, interaction = 0;
  double total() const { return kinetic + potential + interaction; }
};

inline void check_trap(const Grid& g, const std::vector<double>& vext) {
  require(static_cast<int>(vext.size()) == g.n, "gp: trap samples do not match the grid");
  for (double v : vext)
    if (!std::isfinite(v)) throw InvalidArgument("gp: non-finite trap value inside the domain");
}

// int |grad phi|^2 + V |phi|^2 + 4 pi a |phi|^4, as the quadratic form of the
// stiffness matrix plus weighted sums.
inline EnergyParts gp_energy_parts(const Grid& g, const std::vector<double>& phi,
                                   const std::vector<double>& vext, double a) {
  require(static_cast<int>(phi.size()) == g.n, "gp_energy: phi does not match the grid");
  check_trap(g, vext);
  EnergyParts e;
  for (auto [i, j, c] : g.links()) e.kinetic += c * (phi[i] - phi[j]) * (phi[i] - phi[j]);
  for (auto [i, c] : g.walls()) e.kinetic += c * phi[i] * phi[i];
  double q = 0;
  for (int i = 0; i < g.n; ++i) {
    e.potential += g.w[i] * vext[i] * phi[i] * phi[i];
    q += g.w[i] * std::pow(phi[i], 4);
  }
  e.interaction = 4 * std::numbers::pi * a * q;
  return e;
}

inline double gp_energy(const Grid& g, const std::vector<double>& phi, const std::vector<double>& vext,
                        double a) {
  return gp_energy_parts(g, phi, vext, a).total();
}

inline double quartic_norm(const Grid& g, const std::vector<double>& phi) {
  double q = 0;
  for (int i = 0; i < g.n; ++i) q += g.w[i] * std::pow(phi[i], 4);
  return q;
}

// -Delta phi + V phi + 8 pi a phi^3, the GP operator; the energy gradient is
// twice this times the weights.
inline std::vector<double> gp_operator(const Grid& g, const std::vector<double>& phi,
                                       const std::vector<double>& vext, double a) {
  auto out = g.laplacian(phi);
  const double g2 = 8 * std::numbers::pi * a;
  for (int i = 0; i < g.n; ++i) out[i] = -out[i] + vext[i] * phi[i] + g2 * phi[i] * phi[i] * phi[i];
  return out;
}

struct GPState {
  Grid grid;
  std::vector<double> phi, vext;
  double a = 0;
  double coupling = 0;      // 4 pi a
  double energy = 0;
  double eps_eigen = 0;     // lowest eigenvalue of -Delta + V + 8 pi a phi^2
  double eps_identity = 0;  // E(phi) + 4 pi a ||phi||_4^4
  double residual = 0;      // ||L phi - eps phi||_2 with the Rayleigh eps
  int iterations = 0;
  std::vector<double> energy_history;  // accepted steps
  int positivity_restarts = 0;
};

struct MinimizeOptions {
  double tau0 = 0.5;
  double tau_max = 1e4;
  int max_iterations = 200000;
  std::optional<std::vector<double>> initial;
};

namespace detail {

// Lowest eigenvalue of W^{-1/2}(K + W diag(d))W^{-1/2}: Sturm bisection for the
// tridiagonal grids, a dense solve for the periodic one.
inline double lowest_eigenvalue(const Grid& g, const std::vector<double>& d) {
  const int n = g.n;
  Eigen::VectorXd diag(n), off = Eigen::VectorXd::Zero(n);
  std::vector<double> kd(n, 0.0);
  for (auto [i, j, c] : g.links()) {
    kd[i] += c;
    kd[j] += c;
  }
  for (auto [i, c] : g.walls()) kd[i] += c;
  for (int i = 0; i < n; ++i) diag(i) = kd[i] / g.w[i] + d[i];
  if (g.periodic()) {
    require(n <= 4000, "gp: periodic eigenvalue check limited to n <= 4000");
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) A(i, i) = diag(i);
    for (auto [i, j, c] : g.links()) {
      const double o = -c / std::sqrt(g.w[i] * g.w[j]);
      A(i, j) += o;
      A(j, i) += o;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
  }
  for (auto [i, j, c] : g.links()) off(std::min(i, j)) = -c / std::sqrt(g.w[i] * g.w[j]);
  double lo = INFINITY, hi = -INFINITY;
  for (int i = 0; i < n; ++i) {
    const double rad = std::abs(off(i)) + (i ? std::abs(off(i - 1)) : 0.0);
    lo = std::min(lo, diag(i) - rad);
    hi = std::max(hi, diag(i) + rad);
  }
  auto count_below = [&](double x) {
    int cnt = 0;
    double q = 1;
    for (int i = 0; i < n; ++i) {
      q = diag(i) - x - (i ? off(i - 1) * off(i - 1) / q : 0.0);
      if (q == 0) q = -1e-300;
      if (q < 0) ++cnt;
    }
    return cnt;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (count_below(mid) >= 1 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Fills energy, both eps extractions and the residual for a normalised phi.
inline void evaluate(GPState& s) {
  const Grid& g = s.grid;
  s.coupling = 4 * std::numbers::pi * s.a;
  s.energy = gp_energy(g, s.phi, s.vext, s.a);
  s.eps_identity = s.energy + s.coupling * quartic_norm(g, s.phi);
  auto L = gp_operator(g, s.phi, s.vext, s.a);
  double rq = 0, nn = 0;
  for (int i = 0; i < g.n; ++i) {
    rq += g.w[i] * s.phi[i] * L[i];
    nn += g.w[i] * s.phi[i] * s.phi[i];
  }
  rq /= nn;
  double r2 = 0;
  for (int i = 0; i < g.n; ++i) r2 += g.w[i] * std::pow(L[i] - rq * s.phi[i], 2);
  s.residual = std::sqrt(r2);
  std::vector<double> d(g.n);
  for (int i = 0; i < g.n; ++i) d[i] = s.vext[i] + 2 * s.coupling * s.phi[i] * s.phi[i];
  s.eps_eigen = detail::lowest_eigenvalue(g, d);
}

// Backward-Euler normalised gradient flow:
// (W/tau + K + W diag(V + 8 pi a phi_n^2)) phi* = W phi_n / tau, then normalise.
// Steps that raise the energy or lose positivity are retried with tau / 2.
inline GPState minimize_gp(const Grid& g, const std::vector<double>& vext, double a, double tol,
                           const MinimizeOptions& opt = {}) {
  check_trap(g, vext);
  require(a >= 0, "minimize_gp: scattering length must be >= 0");
  require(tol > 0, "minimize_gp: tolerance must be positive");
  const int n = g.n;
  if (!g.periodic()) {
    // Confinement: the trap should not decrease toward the boundary.
    const double centre = g.radial() ? vext.front() : vext[n / 2];
    const double edge = g.radial() ? vext.back() : std::min(vext.front(), vext.back());
    require(edge >= centre, "minimize_gp: trap is not confining on the grid");
  }
  GPState s;
  s.grid = g;
  s.vext = vext;
  s.a = a;
  if (opt.initial) {
    s.phi = *opt.initial;
    require(static_cast<int>(s.phi.size()) == n, "minimize_gp: initial guess does not match the grid");
    for (double p : s.phi) require(p > 0, "minimize_gp: initial guess must be positive");
  } else {
    s.phi.resize(n);
    for (int i = 0; i < n; ++i) s.phi[i] = 1.0 / (1.0 + vext[i]);
  }
  auto normalise = [&](std::vector<double>& p) {
    const double nr = g.norm2(p);
    for (double& x : p) x /= nr;
  };
  normalise(s.phi);

  const Eigen::SparseMatrix<double> K = g.stiffness();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  Eigen::SparseMatrix<double> A = K;
  for (int i = 0; i < n; ++i) A.coeffRef(i, i) += 1.0;
  A.makeCompressed();
  ldlt.analyzePattern(A);

  const double g2 = 8 * std::numbers::pi * a;
  double tau = opt.tau0;
  double E = gp_energy(g, s.phi, vext, a);
  s.energy_history.push_back(E);
  evaluate(s);
  std::vector<double> next(n);
  Eigen::VectorXd rhs(n);
  while (s.residual > tol) {
    if (s.iterations >= opt.max_iterations)
      throw ConvergenceFailure("minimize_gp: no convergence (residual " + std::to_string(s.residual) + ")");
    ++s.iterations;
    for (int i = 0; i < n; ++i) {
      A.coeffRef(i, i) = K.coeff(i, i) + g.w[i] * (1.0 / tau + vext[i] + g2 * s.phi[i] * s.phi[i]);
      rhs(i) = g.w[i] * s.phi[i] / tau;
    }
    ldlt.factorize(A);
    if (ldlt.info() != Eigen::Success) throw ConvergenceFailure("minimize_gp: factorisation failed");
    Eigen::VectorXd sol = ldlt.solve(rhs);
    bool positive = true;
    for (int i = 0; i < n; ++i) {
      next[i] = sol(i);
      if (!(next[i] > 0)) positive = false;
    }
    if (!positive) {
      ++s.positivity_restarts;
      tau *= 0.5;
      if (tau < 1e-14) throw ConvergenceFailure("minimize_gp: positivity lost at every step size");
      continue;
    }
    normalise(next);
    const double En = gp_energy(g, next, vext, a);
    if (En > E + 1e-14 * std::abs(E)) {
      tau *= 0.5;
      if (tau < 1e-14) throw ConvergenceFailure("minimize_gp: energy increase at every step size");
      continue;
    }
    s.phi.swap(next);
    E = En;
    s.energy_history.push_back(E);
    tau = std::min(tau * 1.5, opt.tau_max);
    evaluate(s);
  }
  return s;
}

struct DecayConstants {
  double nu = 0;
  double C_phi = 0, C_grad = 0, C_lap = 0;
  double C() const { return std::max({C_phi, C_grad, C_lap}); }
};

// Smallest C with |phi|, |grad phi|, |Delta phi| <= C e^{-nu |x|} on the
// outer half of the grid.
inline DecayConstants decay_check(const GPState& s, double nu) {
  require(nu >= 0, "decay_check: nu must be >= 0");
  const Grid& g = s.grid;
  auto grad = g.gradient(s.phi);
  auto lap = g.laplacian(s.phi);
  DecayConstants d;
  d.nu = nu;
  for (int i = 0; i < g.n; ++i) {
    const double r = g.distance(i);
    if (r < 0.5 * g.extent) continue;
    const double e = std::exp(nu * r);
    d.C_phi = std::max(d.C_phi, std::abs(s.phi[i]) * e);
    d.C_grad = std::max(d.C_grad, std::abs(grad[i]) * e);
    d.C_lap = std::max(d.C_lap, std::abs(lap[i]) * e);
  }
  if (!std::isfinite(d.C())) throw ConvergenceFailure("decay_check: non-finite constant");
  return d;
}

// N^{-1} E_N - E_GP(phi): diagnostic only, the limit is asymptotic.
inline double energy_upper_bound_check(const GPState& s, double ground_energy, int n_particles) {
  require(n_particles >= 1, "energy_upper_bound_check: need N >= 1");
  return ground_energy / n_particles - s.energy;
}

// Thomas-Fermi density (eps - V)_+ / (8 pi a) with eps fixed by normalisation.
inline std::vector<double> thomas_fermi_density(const Grid& g, const std::vector<double>& vext, double a,
                                                double* eps_out = nullptr) {
  require(a > 0, "thomas_fermi_density: need a > 0");
  const double g2 = 8 * std::numbers::pi * a;
  auto mass = [&](double eps) {
    double m = 0;
    for (int i = 0; i < g.n; ++i) m += g.w[i] * std::max(0.0, eps - vext[i]) / g2;
    return m;
  };
  double lo = *std::min_element(vext.begin(), vext.end()), hi = lo + 1;
  while (mass(hi) < 1) hi = lo + 2 * (hi - lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) < 1 ? lo : hi) = mid;
  }
  const double eps = 0.5 * (lo + hi);
  if (eps_out) *eps_out = eps;
  std::vector<double> rho(g.n);
  for (int i = 0; i < g.n; ++i) rho[i] = std::max(0.0, eps - vext[i]) / g2;
  return rho;
}

}  // namespace bosegp::gp
