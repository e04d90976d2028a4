#include <bosegp/gp.hpp>
#include <bosegp/meanfield.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace bosegp;
using namespace bosegp::gp;

namespace {

std::vector<double> gaussian_1d(const Grid& g) {
  std::vector<double> p(g.n);
  for (int i = 0; i < g.n; ++i) p[i] = std::exp(-g.x[i] * g.x[i] / 2) / std::pow(std::numbers::pi, 0.25);
  return p;
}

}  // namespace

TEST(GpEnergy, HarmonicGaussianIsOne) {
  auto g = Grid::interval(4000, 10.0);
  auto e = gp_energy_parts(g, gaussian_1d(g), Trap::harmonic().sample(g), 0.0);
  EXPECT_NEAR(e.kinetic, 0.5, 1e-5);
  EXPECT_NEAR(e.potential, 0.5, 1e-10);
  EXPECT_NEAR(e.total(), 1.0, 1e-5);
}

TEST(GpEnergy, PeriodicConstantIsZero) {
  auto g = Grid::interval(64, 0.5, true);
  std::vector<double> phi(g.n, 1.0);
  EXPECT_EQ(gp_energy(g, phi, Trap::none().sample(g), 0.0), 0.0);
}

TEST(GpEnergy, QuarticTermMatchesSeparateQuadrature) {
  auto g = Grid::interval(2000, 10.0);
  auto phi = gaussian_1d(g);
  const double a = 0.37;
  auto e = gp_energy_parts(g, phi, Trap::none().sample(g), a);
  // Trapezoid on the closed interval, written out independently; the exact
  // value is 1 / sqrt(2 pi).
  const double h = 20.0 / 2001;
  double trap = 0;
  for (int i = 0; i <= 2001; ++i) {
    const double x = -10.0 + i * h;
    const double f = std::exp(-2 * x * x) / std::numbers::pi;
    trap += (i == 0 || i == 2001 ? 0.5 : 1.0) * f * h;
  }
  EXPECT_NEAR(e.interaction, 4 * std::numbers::pi * a * trap, 1e-10);
  EXPECT_NEAR(trap, 1 / std::sqrt(2 * std::numbers::pi), 1e-12);
  EXPECT_THROW(gp_energy(g, phi, std::vector<double>(g.n, INFINITY), a), InvalidArgument);
}

TEST(GpEnergy, GradientMatchesDirectionalDerivatives) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto g : {Grid::interval(40, 3.0), Grid::interval(40, 3.0, true), Grid::radial(40, 4.0)}) {
    std::vector<double> phi(g.n), d(g.n), v = Trap::quartic(0.3).sample(g);
    for (int i = 0; i < g.n; ++i) {
      phi[i] = u(rng);
      d[i] = u(rng) - 0.55;
    }
    const double a = 0.2;
    auto L = gp_operator(g, phi, v, a);
    double analytic = 0;
    for (int i = 0; i < g.n; ++i) analytic += 2 * g.w[i] * L[i] * d[i];
    std::vector<double> errs, steps;
    for (double eps : {1e-2, 5e-3, 2.5e-3}) {
      auto p = phi, m = phi;
      for (int i = 0; i < g.n; ++i) {
        p[i] += eps * d[i];
        m[i] -= eps * d[i];
      }
      const double fd = (gp_energy(g, p, v, a) - gp_energy(g, m, v, a)) / (2 * eps);
      errs.push_back(std::abs(fd - analytic));
      steps.push_back(eps);
    }
    EXPECT_LT(errs.back(), 1e-4 * std::abs(analytic));
    EXPECT_NEAR(loglog_slope(steps, errs), 2.0, 0.2);
  }
}

TEST(GpMinimize, HarmonicOscillatorOneAndThreeDimensions) {
  const double tol = 1e-8;
  auto g1 = Grid::interval(2000, 10.0);
  auto s1 = minimize_gp(g1, Trap::harmonic().sample(g1), 0.0, tol);
  EXPECT_NEAR(s1.eps_eigen, 1.0, 1e-4);
  auto exact = gaussian_1d(g1);
  double diff = 0;
  for (int i = 0; i < g1.n; ++i) diff += g1.w[i] * std::pow(s1.phi[i] - exact[i], 2);
  EXPECT_LT(std::sqrt(diff), 1e-4);

  auto g3 = Grid::radial(2000, 8.0);
  auto s3 = minimize_gp(g3, Trap::harmonic().sample(g3), 0.0, tol);
  EXPECT_NEAR(s3.eps_eigen / 3.0, 1.0, 1e-4);
  EXPECT_NEAR(s3.eps_identity / 3.0, 1.0, 1e-4);
  EXPECT_LT(s3.residual, 1e-6);
  EXPECT_NEAR(g3.norm2(s3.phi), 1.0, 1e-8);
  for (int i = 0; i < g3.n; i += 50) {
    const double r = g3.x[i];
    EXPECT_NEAR(s3.phi[i], std::exp(-r * r / 2) / std::pow(std::numbers::pi, 0.75), 1e-4);
  }
}

TEST(GpMinimize, InteractingIdentitiesAndMonotoneEnergy) {
  const double tol = 1e-8;
  for (auto trap : {Trap::harmonic(), Trap::quartic(0.5), Trap::soft_box(3.0)}) {
    auto g = Grid::radial(1500, 6.0);
    auto s = minimize_gp(g, trap.sample(g), 0.5, tol);
    EXPECT_LT(s.residual, 1e-6);
    EXPECT_NEAR(s.eps_eigen, s.eps_identity, 1e-5);
    for (double p : s.phi) EXPECT_GT(p, 0.0);
    for (std::size_t k = 1; k < s.energy_history.size(); ++k)
      EXPECT_LE(s.energy_history[k], s.energy_history[k - 1] * (1 + 1e-13));
  }
}

TEST(GpMinimize, ThomasFermiBulk) {
  // eps_TF = 49 gives a TF radius of 7.
  const double g4 = 16807.0 * 4 * std::numbers::pi / 15;
  const double a = g4 / (4 * std::numbers::pi);
  auto g = Grid::radial(2000, 10.0);
  auto v = Trap::harmonic().sample(g);
  auto s = minimize_gp(g, v, a, 1e-8);
  double eps_tf = 0;
  auto rho = thomas_fermi_density(g, v, a, &eps_tf);
  EXPECT_NEAR(eps_tf, 49.0, 0.05);
  const double bulk = 0.9 * std::sqrt(eps_tf);
  double diff = 0, ref = 0;
  for (int i = 0; i < g.n; ++i) {
    if (g.x[i] > bulk) break;
    diff += g.w[i] * std::abs(s.phi[i] * s.phi[i] - rho[i]);
    ref += g.w[i] * rho[i];
  }
  EXPECT_LT(diff / ref, 0.02);
  auto parts = gp_energy_parts(g, s.phi, v, a);
  EXPECT_LT(parts.kinetic, 0.02 * parts.total());
  EXPECT_NEAR(s.eps_eigen, s.eps_identity, 1e-5);
}

TEST(GpMinimize, UniqueFromRandomPositiveStarts) {
  const double tol = 1e-9;
  auto g = Grid::interval(400, 6.0);
  auto v = Trap::quartic().sample(g);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<std::vector<double>> states;
  for (int k = 0; k < 2; ++k) {
    MinimizeOptions opt;
    opt.initial = std::vector<double>(g.n);
    for (double& p : *opt.initial) p = u(rng);
    states.push_back(minimize_gp(g, v, 1.0, tol, opt).phi);
  }
  std::vector<double> d(g.n);
  for (int i = 0; i < g.n; ++i) d[i] = states[0][i] - states[1][i];
  EXPECT_LT(g.norm2(d), 10 * tol);
}

TEST(GpMinimize, RejectsBadInput) {
  auto g = Grid::radial(100, 5.0);
  std::vector<double> falling(g.n);
  for (int i = 0; i < g.n; ++i) falling[i] = -g.x[i];
  EXPECT_THROW(minimize_gp(g, falling, 0.0, 1e-8), InvalidArgument);
  EXPECT_THROW(minimize_gp(g, Trap::harmonic().sample(g), -1.0, 1e-8), InvalidArgument);
  MinimizeOptions opt;
  opt.max_iterations = 1;
  EXPECT_THROW(minimize_gp(g, Trap::harmonic().sample(g), 1.0, 1e-12, opt), ConvergenceFailure);
}

TEST(GpDecay, GaussianTail) {
  auto g = Grid::radial(1600, 8.0);
  auto s = minimize_gp(g, Trap::harmonic().sample(g), 0.2, 1e-8);
  auto d0 = decay_check(s, 0.0);
  double mx = 0;
  for (int i = 0; i < g.n; ++i)
    if (g.x[i] >= 4.0) mx = std::max(mx, s.phi[i]);
  EXPECT_EQ(d0.C_phi, mx);
  double prev = d0.C();
  for (double nu : {0.5, 1.0, 2.0, 4.0}) {
    auto d = decay_check(s, nu);
    EXPECT_TRUE(std::isfinite(d.C()));
    EXPECT_GE(d.C(), prev);
    prev = d.C();
  }
  // log phi is concave in the tail, and its slope eventually passes any -nu.
  std::vector<double> logs;
  for (int i = 0; i < g.n; i += 40)
    if (g.x[i] >= 4.0 && g.x[i] < 7.0) logs.push_back(std::log(s.phi[i]));
  for (std::size_t k = 1; k + 1 < logs.size(); ++k) EXPECT_LE(logs[k + 1] - 2 * logs[k] + logs[k - 1], 0.0);
  const double slope = (logs.back() - logs[logs.size() - 2]) / (40 * g.h);
  EXPECT_LT(slope, -4.0);
}

TEST(GpTraps, SubmultiplicativeOnSamples) {
  std::vector<double> xs;
  for (int i = -20; i <= 20; ++i) xs.push_back(0.5 * i);
  for (auto t : {Trap::harmonic(2.0), Trap::quartic(), Trap::soft_box(2.0)}) {
    const double C = submultiplicativity_constant(t, xs);
    EXPECT_TRUE(std::isfinite(C));
    EXPECT_GT(C, 0.0);
    for (double x : xs)
      for (double y : xs) EXPECT_LE(t(x + y), C * (t(x) + C) * (t(y) + C) * (1 + 1e-12));
  }
}

TEST(GpUpperBound, TorusToys) {
  using namespace bosegp::meanfield;
  auto g = Grid::interval(32, 0.5, true);
  auto v0 = Trap::none().sample(g);
  // a = 0, V = 0: constant minimiser, both sides zero.
  auto free = minimize_gp(g, v0, 0.0, 1e-10);
  auto zero_model = TorusModel::cubic(1, 1, [](const Momentum&) { return 0.0; }, 4);
  auto zero_run = prepare(zero_model, 1e-9);
  EXPECT_NEAR(energy_upper_bound_check(free, zero_run.window.ground_energy, 4), 0.0, 1e-12);

  // Only vhat(0): N^{-1} E_N = (1 - 1/N) vhat(0)/2, GP value vhat(0)/2.
  const double a = 0.5 / (4 * std::numbers::pi);
  auto gps = minimize_gp(g, v0, a, 1e-10);
  EXPECT_NEAR(gps.energy, 0.5, 1e-10);
  double prev = INFINITY;
  for (int N : {4, 8, 16}) {
    auto model = TorusModel::cubic(1, 1, [](const Momentum& p) { return norm2(p) == 0 ? 1.0 : 0.0; }, N);
    auto run = prepare(model, 1e-9);
    const double gap = energy_upper_bound_check(gps, run.window.ground_energy, N);
    EXPECT_NEAR(gap, -0.5 / N, 1e-10);
    EXPECT_LT(std::abs(gap), prev);
    prev = std::abs(gap);
  }
}
