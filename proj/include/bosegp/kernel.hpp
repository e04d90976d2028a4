#pragma once

#include <bosegp/common.hpp>
#include <bosegp/gp.hpp>
#include <bosegp/scattering.hpp>

#include <Eigen/Eigenvalues>
#include <fftw3.h>

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <optional>

namespace bosegp::kernel {

// Real 3D FFT on the unit periodic box with n^3 points. backward() is
// normalised so backward(forward(f)) = f.
class Fft3 {
 public:
  explicit Fft3(int n) : n_(n), total_(std::size_t(n) * n * n), half_(std::size_t(n) * n * (n / 2 + 1)) {
    require(n >= 2 && n % 2 == 0, "Fft3: n must be even");
    std::vector<double> r(total_);
    std::vector<std::complex<double>> c(half_);
    std::lock_guard<std::mutex> lock(planner_mutex());
    fwd_ = fftw_plan_dft_r2c_3d(n, n, n, r.data(), reinterpret_cast<fftw_complex*>(c.data()), FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_dft_c2r_3d(n, n, n, reinterpret_cast<fftw_complex*>(c.data()), r.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  ~Fft3() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }
  Fft3(const Fft3&) = delete;
  Fft3& operator=(const Fft3&) = delete;

  int n() const { return n_; }
  std::size_t half_size() const { return half_; }

  std::vector<std::complex<double>> forward(const std::vector<double>& f) const {
    std::vector<double> in(f);
    std::vector<std::complex<double>> out(half_);
    // New-array execution is the thread-safe part of the FFTW interface; plans
    // are made FFTW_UNALIGNED so any vector storage is acceptable.
    fftw_execute_dft_r2c(fwd_, in.data(), reinterpret_cast<fftw_complex*>(out.data()));
    return out;
  }
  std::vector<double> backward(const std::vector<std::complex<double>>& F) const {
    std::vector<std::complex<double>> in(F);  // c2r destroys its input
    std::vector<double> out(total_);
    fftw_execute_dft_c2r(bwd_, reinterpret_cast<fftw_complex*>(in.data()), out.data());
    const double s = 1.0 / static_cast<double>(total_);
    for (double& x : out) x *= s;
    return out;
  }

  // Signed frequency of half-spectrum entry q along the three axes.
  std::array<int, 3> frequency(std::size_t q) const {
    const int m = n_ / 2 + 1;
    const int k = static_cast<int>(q % m), j = static_cast<int>((q / m) % n_), i = static_cast<int>(q / (std::size_t(m) * n_));
    return {i <= n_ / 2 ? i : i - n_, j <= n_ / 2 ? j : j - n_, k};
  }

 private:
  static std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
  }
  int n_;
  std::size_t total_, half_;
  fftw_plan fwd_, bwd_;
};

// Grid helpers on [0,1)^3, flat index (i n + j) n + k.
struct Box {
  int n = 0;
  double h = 0;
  std::size_t size() const { return std::size_t(n) * n * n; }
  double weight() const { return h * h * h; }
  std::array<int, 3> coords(std::size_t f) const {
    return {static_cast<int>(f / (std::size_t(n) * n)), static_cast<int>((f / n) % n), static_cast<int>(f % n)};
  }
  std::size_t flat(int i, int j, int k) const {
    auto w = [&](int a) { return static_cast<std::size_t>(((a % n) + n) % n); };
    return (w(i) * n + w(j)) * n + w(k);
  }
  std::size_t difference(std::size_t x, std::size_t y) const {
    auto a = coords(x), b = coords(y);
    return flat(a[0] - b[0], a[1] - b[1], a[2] - b[2]);
  }
  // Minimal-image length of the displacement with flat index z.
  double wrapped_length(std::size_t z) const {
    auto c = coords(z);
    double s = 0;
    for (int a : c) {
      const int m = a <= n / 2 ? a : a - n;
      s += double(m) * m;
    }
    return std::sqrt(s) * h;
  }
  double inner(const std::vector<double>& a, const std::vector<double>& b) const {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s * weight();
  }
};

// Condensate profiles on the box, centred at (1/2, 1/2, 1/2) and normalised.
inline std::vector<double> normalise_on_box(const Box& b, std::vector<double> phi) {
  const double nr = std::sqrt(b.inner(phi, phi));
  require(nr > 0, "kernel: condensate profile vanishes on the box");
  for (double& x : phi) x /= nr;
  return phi;
}

inline std::vector<double> gaussian_profile(int n, double sigma) {
  Box b{n, 1.0 / n};
  std::vector<double> phi(b.size());
  for (std::size_t f = 0; f < b.size(); ++f) {
    auto c = b.coords(f);
    double r2 = 0;
    for (int a : c) r2 += std::pow((a - n / 2) * b.h, 2);
    phi[f] = std::exp(-r2 / (2 * sigma * sigma));
  }
  return normalise_on_box(b, phi);
}

// A radial GP minimiser mapped onto the box: physical radius = box_length * |x - centre|.
inline std::vector<double> profile_from_gp(const gp::GPState& s, int n, double box_length) {
  require(s.grid.radial(), "profile_from_gp: needs a radial GP state");
  Box b{n, 1.0 / n};
  std::vector<double> phi(b.size());
  const auto& r = s.grid.x;
  for (std::size_t f = 0; f < b.size(); ++f) {
    auto c = b.coords(f);
    double r2 = 0;
    for (int a : c) r2 += std::pow((a - n / 2) * b.h, 2);
    const double rho = std::sqrt(r2) * box_length;
    if (rho <= r.front()) {
      phi[f] = s.phi.front();
    } else if (rho >= r.back()) {
      phi[f] = 0.0;
    } else {
      auto it = std::upper_bound(r.begin(), r.end(), rho);
      const std::size_t i = static_cast<std::size_t>(it - r.begin());
      const double t = (rho - r[i - 1]) / (r[i] - r[i - 1]);
      phi[f] = (1 - t) * s.phi[i - 1] + t * s.phi[i];
    }
  }
  return normalise_on_box(b, phi);
}

struct KernelOptions {
  double alpha = 1.0;
  bool filter = true;  // false: chi_H = 1 test mode
};

// eta(x, y) = phi(x) phi(y) [C(x - y) - G(x) - G(y) + c] with
// C = -(W_N * chi_H^vee), G = C * phi^2 and c = <phi^2, G>; this is
// Q (x) Q applied to C(x - y) phi(x) phi(y).
class CorrelationKernel {
 public:
  int N = 0;
  double ell = 0, alpha = 0;
  bool filtered = true;
  Box box;
  std::vector<double> phi, C, G;
  double c = 0;
  double hs_norm = 0, grad_norm = 0;

  std::size_t size() const { return box.size(); }
  double weight() const { return box.weight(); }

  double value(std::size_t x, std::size_t y) const {
    return phi[x] * phi[y] * (C[box.difference(x, y)] - G[x] - G[y] + c);
  }

  // (eta f)(x) = int eta(x, y) f(y) dy.
  std::vector<double> apply(const std::vector<double>& f) const {
    std::vector<double> pf(size());
    for (std::size_t i = 0; i < size(); ++i) pf[i] = phi[i] * f[i];
    const double s1 = box.inner(phi, f);
    std::vector<double> pgf(size());
    for (std::size_t i = 0; i < size(); ++i) pgf[i] = pf[i] * G[i];
    const double s2 = box.weight() * std::accumulate(pgf.begin(), pgf.end(), 0.0);
    auto conv = convolve(C, pf);
    for (std::size_t i = 0; i < size(); ++i) conv[i] = phi[i] * (conv[i] - G[i] * s1 - s2 + c * s1);
    return conv;
  }

  std::vector<double> slice(std::size_t x) const {
    std::vector<double> s(size());
    for (std::size_t y = 0; y < size(); ++y) s[y] = value(x, y);
    return s;
  }
  double slice_norm(std::size_t x) const {
    auto s = slice(x);
    return std::sqrt(box.inner(s, s));
  }

  // ||eta_x|| / |phi(x)| for every x at once, by convolutions.
  std::vector<double> slice_ratios() const {
    const std::size_t M = size();
    std::vector<double> p2(M), C2(M), p2G(M);
    double p2G2 = 0;
    for (std::size_t i = 0; i < M; ++i) {
      p2[i] = phi[i] * phi[i];
      C2[i] = C[i] * C[i];
      p2G[i] = p2[i] * G[i];
      p2G2 += p2[i] * G[i] * G[i];
    }
    p2G2 *= weight();
    const double norm = box.inner(phi, phi);
    auto a1 = convolve(C2, p2), a2 = convolve(C, p2G), a3 = convolve(C, p2);
    std::vector<double> out(M);
    for (std::size_t i = 0; i < M; ++i) {
      const double ax = c - G[i];
      const double S = a1[i] - 2 * a2[i] + p2G2 + 2 * ax * (a3[i] - c) + ax * ax * norm;
      out[i] = std::sqrt(std::max(0.0, S));
    }
    return out;
  }

  Eigen::MatrixXd dense() const {
    require(size() <= 4096, "CorrelationKernel::dense: box too large");
    const auto M = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd E(M, M);
    for (Eigen::Index x = 0; x < M; ++x)
      for (Eigen::Index y = 0; y < M; ++y) E(x, y) = value(std::size_t(x), std::size_t(y));
    return E;
  }

  // conv(A, f)(x) = int A(x - y) f(y) dy on the unit box.
  std::vector<double> convolve(const std::vector<double>& A, const std::vector<double>& f) const {
    auto FA = fft().forward(A), Ff = fft().forward(f);
    for (std::size_t q = 0; q < FA.size(); ++q) FA[q] *= Ff[q];
    auto out = fft().backward(FA);
    for (double& x : out) x *= weight();
    return out;
  }
  // corr(a, b)(z) = sum_x a(x) b(x - z) (plain sum, no weight).
  std::vector<double> correlate(const std::vector<double>& a, const std::vector<double>& b) const {
    auto Fa = fft().forward(a), Fb = fft().forward(b);
    for (std::size_t q = 0; q < Fa.size(); ++q) Fa[q] *= std::conj(Fb[q]);
    return fft().backward(Fa);
  }
  // Spectral derivative along an axis; the Nyquist plane is dropped.
  std::vector<double> derivative(const std::vector<double>& f, int axis) const {
    auto F = fft().forward(f);
    for (std::size_t q = 0; q < F.size(); ++q) {
      const int k = fft().frequency(q)[axis];
      F[q] = (std::abs(k) == box.n / 2) ? 0.0 : F[q] * std::complex<double>(0, 2 * std::numbers::pi * k);
    }
    return fft().backward(F);
  }

  const Fft3& fft() const { return *fft_; }
  void set_fft(std::shared_ptr<const Fft3> f) { fft_ = std::move(f); }

 private:
  std::shared_ptr<const Fft3> fft_;
};

namespace detail {

inline double grad_norm(const CorrelationKernel& K) {
  const std::size_t M = K.size();
  const double w = K.weight();
  std::vector<double> p2(M), g(M), b1(M);
  for (std::size_t i = 0; i < M; ++i) {
    p2[i] = K.phi[i] * K.phi[i];
    g[i] = K.phi[i] * K.G[i];
    b1[i] = g[i] - K.c * K.phi[i];
  }
  const auto R1 = K.correlate(p2, p2);
  double total = 0;
  for (int axis = 0; axis < 3; ++axis) {
    const auto dphi = K.derivative(K.phi, axis);
    const auto dC = K.derivative(K.C, axis);
    std::vector<double> pdp(M), dp2(M);
    for (std::size_t i = 0; i < M; ++i) {
      pdp[i] = K.phi[i] * dphi[i];
      dp2[i] = dphi[i] * dphi[i];
    }
    const auto R2 = K.correlate(pdp, p2), R3 = K.correlate(dp2, p2);
    double m2 = 0;
    for (std::size_t z = 0; z < M; ++z)
      m2 += dC[z] * dC[z] * R1[z] + 2 * dC[z] * K.C[z] * R2[z] + K.C[z] * K.C[z] * R3[z];
    m2 *= w * w;
    // M b = d_x of the K-application, product rule on the grid factors.
    auto Mb = [&](const std::vector<double>& b) {
      std::vector<double> pb(M);
      for (std::size_t i = 0; i < M; ++i) pb[i] = K.phi[i] * b[i];
      auto c0 = K.convolve(K.C, pb), c1 = K.convolve(dC, pb);
      std::vector<double> out(M);
      for (std::size_t i = 0; i < M; ++i) out[i] = dphi[i] * c0[i] + K.phi[i] * c1[i];
      return out;
    };
    const auto dCp2 = K.convolve(dC, p2);
    std::vector<double> dg(M);
    for (std::size_t i = 0; i < M; ++i) dg[i] = dphi[i] * K.G[i] + K.phi[i] * dCp2[i];
    const auto& a1 = dphi;
    const auto& a2 = dg;
    const auto& b2 = K.phi;
    const auto box = K.box;
    total += m2 + box.inner(a1, a1) * box.inner(b1, b1) + box.inner(a2, a2) * box.inner(b2, b2) -
             2 * box.inner(a1, Mb(b1)) - 2 * box.inner(a2, Mb(b2)) + 2 * box.inner(a1, a2) * box.inner(b1, b2);
  }
  return std::sqrt(std::max(0.0, total));
}

}  // namespace detail

inline double required_resolution(double ell, double alpha) { return std::pow(ell, -alpha); }

// phi: samples on the n^3 box (normalised there). W_N(z) = N w_l(N |z|) at
// minimal-image distances; chi_H keeps |p| >= ell^-alpha with p in Z^3
// (Fourier convention e^{-2 pi i p x}).
inline CorrelationKernel build_kernel(const scattering::NeumannSolution& w, const std::vector<double>& phi, int n,
                                      const KernelOptions& opt = {}) {
  require(n >= 4 && n % 2 == 0, "build_kernel: mesh size must be even and >= 4");
  Box box{n, 1.0 / n};
  require(phi.size() == box.size(), "build_kernel: phi does not match the mesh");
  require(opt.alpha >= 0, "build_kernel: alpha must be >= 0");
  const double cut = required_resolution(w.ell, opt.alpha);
  if (opt.filter && !(n / 2.0 > cut)) {
    const int need = 2 * static_cast<int>(std::floor(cut)) + 2;
    throw InvalidArgument("build_kernel: mesh too coarse to resolve ell^-alpha = " + std::to_string(cut) +
                          " (need n >= " + std::to_string(need) + ")");
  }
  CorrelationKernel K;
  K.N = w.N;
  K.ell = w.ell;
  K.alpha = opt.alpha;
  K.filtered = opt.filter;
  K.box = box;
  K.phi = normalise_on_box(box, phi);
  K.set_fft(std::make_shared<const Fft3>(n));

  const std::size_t M = box.size();
  std::vector<double> W(M);
  for (std::size_t z = 0; z < M; ++z) W[z] = w.N * w.w(w.N * box.wrapped_length(z));
  if (opt.filter) {
    auto F = K.fft().forward(W);
    for (std::size_t q = 0; q < F.size(); ++q) {
      auto k = K.fft().frequency(q);
      const double p = std::sqrt(double(k[0]) * k[0] + double(k[1]) * k[1] + double(k[2]) * k[2]);
      if (p < cut) F[q] = 0.0;
    }
    K.C = K.fft().backward(F);
    for (double& x : K.C) x = -x;
  } else {
    K.C.resize(M);
    for (std::size_t z = 0; z < M; ++z) K.C[z] = -W[z];
  }
  std::vector<double> p2(M);
  for (std::size_t i = 0; i < M; ++i) p2[i] = K.phi[i] * K.phi[i];
  K.G = K.convolve(K.C, p2);
  K.c = box.inner(p2, K.G);

  const auto R1 = K.correlate(p2, p2);
  double k2 = 0;
  for (std::size_t z = 0; z < M; ++z) k2 += K.C[z] * K.C[z] * R1[z];
  k2 *= box.weight() * box.weight();
  std::vector<double> g(M);
  for (std::size_t i = 0; i < M; ++i) g[i] = K.phi[i] * K.G[i];
  K.hs_norm = std::sqrt(std::max(0.0, k2 - 2 * box.inner(g, g) + K.c * K.c));
  K.grad_norm = detail::grad_norm(K);
  return K;
}

// Idempotence of the discrete high-pass projection on a field.
inline double filter_idempotence_defect(const Fft3& fft, const std::vector<double>& f, double cut) {
  auto once = [&](const std::vector<double>& v) {
    auto F = fft.forward(v);
    for (std::size_t q = 0; q < F.size(); ++q) {
      auto k = fft.frequency(q);
      if (std::sqrt(double(k[0]) * k[0] + double(k[1]) * k[1] + double(k[2]) * k[2]) < cut) F[q] = 0.0;
    }
    return fft.backward(F);
  };
  auto a = once(f), b = once(a);
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

struct KernelMetrics {
  int N = 0;
  double ell = 0, alpha = 0;
  double hs_norm = 0, grad_norm = 0;
  double pointwise_constant = 0;  // max |eta(x,y)| / (N |phi(x)| |phi(y)|)
  double slice_constant = 0;      // max ||eta_x|| / (ell^{alpha/2} |phi(x)|)
  double max_orthogonality = 0;   // max |<phi, eta_x>| / ||eta_x|| over samples
  double max_asymmetry = 0;       // max |eta(x,y) - eta(y,x)| over samples
};

// Samples x on the sub-lattice with `stride`; pointwise quantities use all y.
inline KernelMetrics kernel_metrics(const CorrelationKernel& K, int stride = 8) {
  KernelMetrics m;
  m.N = K.N;
  m.ell = K.ell;
  m.alpha = K.alpha;
  m.hs_norm = K.hs_norm;
  m.grad_norm = K.grad_norm;
  const int n = K.box.n;
  const std::size_t M = K.size();
  double gmax = 0;
  for (std::size_t i = 0; i < M; ++i) gmax = std::max(gmax, std::abs(K.phi[i]));
  std::vector<std::size_t> xs;
  for (int i = 0; i < n; i += stride)
    for (int j = 0; j < n; j += stride)
      for (int k = 0; k < n; k += stride) xs.push_back(K.box.flat(i + stride / 2, j + stride / 2, k + stride / 2));
  xs.push_back(K.box.flat(n / 2, n / 2, n / 2));
  for (std::size_t x : xs) {
    for (std::size_t y = 0; y < M; ++y) {
      const double r = std::abs(K.C[K.box.difference(x, y)] - K.G[x] - K.G[y] + K.c) / K.N;
      m.pointwise_constant = std::max(m.pointwise_constant, r);
    }
    if (std::abs(K.phi[x]) < 1e-6 * gmax) continue;
    auto s = K.slice(x);
    const double sn = std::sqrt(K.box.inner(s, s));
    if (sn > 0) m.max_orthogonality = std::max(m.max_orthogonality, std::abs(K.box.inner(K.phi, s)) / sn);
    for (std::size_t y : xs) m.max_asymmetry = std::max(m.max_asymmetry, std::abs(K.value(x, y) - K.value(y, x)));
  }
  const auto ratios = K.slice_ratios();
  const double scale = std::pow(K.ell, K.alpha / 2);
  for (double r : ratios) m.slice_constant = std::max(m.slice_constant, r / scale);
  return m;
}

struct KernelBounds {
  std::vector<KernelMetrics> rows;
  std::map<int, double> ell_slope;          // per N: slope of log ||eta|| against log ell
  std::map<double, double> grad_slope;      // per ell: slope of log ||grad eta|| against log N
  std::map<double, double> pointwise_spread;  // per ell: max relative deviation from the mean
  // per ell: slopes between consecutive N, to tell a pre-asymptotic fit
  // from a genuine violation
  std::map<double, std::vector<double>> grad_local_slopes;
  double alpha = 0;
  bool ell_ok = true, grad_ok = true, spread_ok = true, finite = true;
  bool holds = true;
};

inline KernelBounds verify_kernel_bounds(const std::vector<KernelMetrics>& rows, double spread_tol = 0.15) {
  require(!rows.empty(), "verify_kernel_bounds: no kernels");
  KernelBounds b;
  b.rows = rows;
  b.alpha = rows.front().alpha;
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> byN;
  std::map<double, std::pair<std::vector<double>, std::vector<double>>> byEll;
  std::map<double, std::vector<double>> ratios;
  for (const auto& r : rows) {
    require(r.alpha == b.alpha, "verify_kernel_bounds: mixed alpha");
    byN[r.N].first.push_back(r.ell);
    byN[r.N].second.push_back(r.hs_norm);
    byEll[r.ell].first.push_back(r.N);
    byEll[r.ell].second.push_back(r.grad_norm);
    ratios[r.ell].push_back(r.pointwise_constant);
  }
  for (auto& [N, xy] : byN)
    if (xy.first.size() >= 2) {
      b.ell_slope[N] = loglog_slope(xy.first, xy.second);
      if (b.ell_slope[N] < b.alpha / 2 - 0.1) b.ell_ok = false;
    }
  for (auto& [ell, xy] : byEll)
    if (xy.first.size() >= 2) {
      b.grad_slope[ell] = loglog_slope(xy.first, xy.second);
      if (b.grad_slope[ell] > 0.5 + 0.1) b.grad_ok = false;
      std::vector<std::size_t> order(xy.first.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](auto i, auto j) { return xy.first[i] < xy.first[j]; });
      for (std::size_t k = 1; k < order.size(); ++k) {
        const auto i = order[k - 1], j = order[k];
        b.grad_local_slopes[ell].push_back(std::log(xy.second[j] / xy.second[i]) / std::log(xy.first[j] / xy.first[i]));
      }
    }
  for (auto& [ell, v] : ratios) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double dev = 0;
    for (double x : v) dev = std::max(dev, std::abs(x / mean - 1));
    b.pointwise_spread[ell] = dev;
    if (v.size() >= 2 && dev > spread_tol) b.spread_ok = false;
  }
  for (const auto& r : rows)
    if (!std::isfinite(r.hs_norm) || !std::isfinite(r.grad_norm) || !std::isfinite(r.pointwise_constant))
      b.finite = false;
  b.holds = b.ell_ok && b.grad_ok && b.spread_ok && b.finite;
  return b;
}

// A kernel given by its values on a quadrature grid with uniform weight.
struct DenseKernel {
  Eigen::MatrixXd values;
  double w = 1.0;
  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  double weight() const { return w; }
  double value(std::size_t x, std::size_t y) const { return values(Eigen::Index(x), Eigen::Index(y)); }
  std::vector<double> apply(const std::vector<double>& f) const {
    Eigen::Map<const Eigen::VectorXd> v(f.data(), Eigen::Index(f.size()));
    Eigen::VectorXd out = w * (values * v);
    return {out.data(), out.data() + out.size()};
  }
  double slice_norm(std::size_t x) const { return std::sqrt(w) * values.row(Eigen::Index(x)).norm(); }
  double hs_norm() const { return w * values.norm(); }
};

struct PowerCheck {
  int power = 0;
  std::vector<std::array<double, 3>> samples;  // (|eta^(n)(x,y)|, bound, ratio)
  double max_ratio = 0;
  bool pointwise_holds = true;
  std::optional<double> hs_power_norm;  // ||eta^n||_HS when computed densely
  std::optional<double> hs_norm_power;  // ||eta||^n
};

// eta^(n)(x, y) via n - 1 applications to the column eta(., y); bound
// |eta^(n)(x,y)| <= ||eta_x|| ||eta_y|| ||eta||^{n-2}.
template <class Kernel>
PowerCheck hs_powers(const Kernel& K, int power, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                     double hs_norm, bool dense_norms = false) {
  require(power >= 2, "hs_powers: need n >= 2");
  PowerCheck pc;
  pc.power = power;
  std::map<std::size_t, std::vector<double>> columns;
  for (auto [x, y] : pairs) {
    (void)x;
    if (columns.count(y)) continue;
    std::vector<double> col(K.size());
    for (std::size_t z = 0; z < K.size(); ++z) col[z] = K.value(z, y);
    for (int k = 1; k < power; ++k) col = K.apply(col);
    columns.emplace(y, std::move(col));
  }
  for (auto [x, y] : pairs) {
    const double v = std::abs(columns.at(y)[x]);
    const double bound = K.slice_norm(x) * K.slice_norm(y) * std::pow(hs_norm, power - 2);
    const double ratio = bound > 0 ? v / bound : (v == 0 ? 0.0 : INFINITY);
    pc.samples.push_back({v, bound, ratio});
    pc.max_ratio = std::max(pc.max_ratio, ratio);
    if (v > bound * (1 + 1e-10) + 1e-300) pc.pointwise_holds = false;
  }
  if (dense_norms) {
    require(K.size() <= 2048, "hs_powers: dense HS norms limited to 2048 points");
    const auto M = static_cast<Eigen::Index>(K.size());
    Eigen::MatrixXd A(M, M);
    for (Eigen::Index i = 0; i < M; ++i)
      for (Eigen::Index j = 0; j < M; ++j) A(i, j) = K.weight() * K.value(std::size_t(i), std::size_t(j));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()), Eigen::EigenvaluesOnly);
    double s = 0, s1 = 0;
    for (Eigen::Index i = 0; i < M; ++i) {
      s += std::pow(es.eigenvalues()(i), 2 * power);
      s1 += std::pow(es.eigenvalues()(i), 2);
    }
    pc.hs_power_norm = std::sqrt(s);
    pc.hs_norm_power = std::pow(std::sqrt(s1), power);
  }
  return pc;
}

struct ModeExport {
  Eigen::MatrixXd eta;                  // eta_pq = <u_p, eta u_q>
  std::vector<std::array<int, 3>> k;    // plane-wave label of each mode
  std::vector<int> parity;              // 0: cos, 1: sin
  double captured_fraction = 0;         // sum eta_pq^2 / ||eta||^2
  double discarded_fraction = 1;
  bool target_met = false;
};

// Real plane waves ordered by |k|^2, made orthonormal and orthogonal to phi
// by Gram-Schmidt, added until the discarded HS mass drops below the target.
inline ModeExport export_modes(const CorrelationKernel& K, int max_modes, double target_discard = 0.01) {
  require(max_modes >= 1, "export_modes: need at least one mode");
  const std::size_t G = K.size();
  require(double(G) * max_modes <= 5e7, "export_modes: mesh times modes exceeds the memory budget");
  const int n = K.box.n;
  std::vector<std::array<int, 3>> ks;
  const int kmax = n / 2 - 1;
  for (int a = -kmax; a <= kmax; ++a)
    for (int b = -kmax; b <= kmax; ++b)
      for (int c = -kmax; c <= kmax; ++c) {
        const bool upper = a > 0 || (a == 0 && (b > 0 || (b == 0 && c >= 0)));
        if (upper) ks.push_back({a, b, c});
      }
  std::stable_sort(ks.begin(), ks.end(), [](const auto& x, const auto& y) {
    return x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
  });

  ModeExport ex;
  std::vector<std::vector<double>> U, EU;
  const double total = K.hs_norm * K.hs_norm;
  double captured = 0;
  Eigen::MatrixXd eta(0, 0);
  auto finished = [&] {
    return total == 0 || static_cast<int>(U.size()) >= max_modes || 1 - captured / total < target_discard;
  };
  for (const auto& k : ks) {
    if (finished()) break;
    for (int par = 0; par < 2 && !finished(); ++par) {
      if (par == 1 && k[0] == 0 && k[1] == 0 && k[2] == 0) continue;
      std::vector<double> u(G);
      for (std::size_t f = 0; f < G; ++f) {
        auto c = K.box.coords(f);
        const double arg = 2 * std::numbers::pi * (k[0] * c[0] + k[1] * c[1] + k[2] * c[2]) * K.box.h;
        u[f] = par == 0 ? std::cos(arg) : std::sin(arg);
      }
      for (int pass = 0; pass < 2; ++pass) {
        const double pp = K.box.inner(K.phi, u);
        for (std::size_t f = 0; f < G; ++f) u[f] -= pp * K.phi[f];
        for (const auto& v : U) {
          const double d = K.box.inner(v, u);
          for (std::size_t f = 0; f < G; ++f) u[f] -= d * v[f];
        }
      }
      const double nr = std::sqrt(K.box.inner(u, u));
      if (nr < 1e-8) continue;
      for (double& x : u) x /= nr;
      auto eu = K.apply(u);
      const Eigen::Index m = static_cast<Eigen::Index>(U.size());
      eta.conservativeResize(m + 1, m + 1);
      for (Eigen::Index p = 0; p < m; ++p) {
        const double v = 0.5 * (K.box.inner(U[std::size_t(p)], eu) + K.box.inner(u, EU[std::size_t(p)]));
        eta(p, m) = eta(m, p) = v;
        captured += 2 * v * v;
      }
      eta(m, m) = K.box.inner(u, eu);
      captured += eta(m, m) * eta(m, m);
      U.push_back(std::move(u));
      EU.push_back(std::move(eu));
      ex.k.push_back(k);
      ex.parity.push_back(par);
    }
  }
  ex.eta = eta;
  ex.captured_fraction = total > 0 ? captured / total : 1.0;
  ex.discarded_fraction = 1 - ex.captured_fraction;
  ex.target_met = ex.discarded_fraction < target_discard;
  return ex;
}

}  // namespace bosegp::kernel
