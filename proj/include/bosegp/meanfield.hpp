#pragma once

#include <bosegp/fock.hpp>
#include <bosegp/linalg.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <map>
#include <numbers>
#include <random>

namespace bosegp::meanfield {

using fock::BasisPtr;
using fock::SparseOperator;

using Momentum = std::vector<int>;  // integer label k; the physical momentum is 2*pi*k
using VHat = std::function<double(const Momentum&)>;

inline int norm2(const Momentum& k) {
  int s = 0;
  for (int c : k) s += c * c;
  return s;
}

inline Momentum negate(Momentum k) {
  for (int& c : k) c = -c;
  return k;
}

struct TorusModel {
  int dimension = 1;
  std::vector<Momentum> modes;  // modes[0] is the zero momentum
  VHat v_hat;
  int num_particles = 1;

  // All k with max_i |k_i| <= cutoff, ordered by |k|^2 then lexicographically.
  static TorusModel cubic(int dimension, int cutoff, VHat v_hat, int num_particles) {
    require(dimension >= 1 && dimension <= 3, "TorusModel: dimension must be 1, 2 or 3");
    require(cutoff >= 0, "TorusModel: negative cutoff");
    TorusModel m;
    m.dimension = dimension;
    m.v_hat = std::move(v_hat);
    m.num_particles = num_particles;
    Momentum k(dimension, -cutoff);
    while (true) {
      m.modes.push_back(k);
      int i = dimension - 1;
      while (i >= 0 && k[i] == cutoff) k[i--] = -cutoff;
      if (i < 0) break;
      ++k[i];
    }
    std::stable_sort(m.modes.begin(), m.modes.end(), [](const Momentum& a, const Momentum& b) {
      return norm2(a) < norm2(b);
    });
    m.validate();
    return m;
  }

  int num_modes() const { return static_cast<int>(modes.size()); }

  std::optional<int> find(const Momentum& k) const {
    for (int i = 0; i < num_modes(); ++i)
      if (modes[i] == k) return i;
    return std::nullopt;
  }

  double kinetic(int mode) const {
    const double tp = 2 * std::numbers::pi;
    return tp * tp * norm2(modes[mode]);
  }

  double v(const Momentum& k) const { return v_hat(k); }

  void validate() const {
    require(num_particles >= 1, "TorusModel: need at least one particle");
    require(!modes.empty() && norm2(modes[0]) == 0, "TorusModel: modes[0] must be the zero momentum");
    require(static_cast<bool>(v_hat), "TorusModel: missing v_hat");
    std::map<Momentum, int> seen;
    for (const auto& k : modes) {
      require(static_cast<int>(k.size()) == dimension, "TorusModel: momentum has wrong dimension");
      require(seen.emplace(k, 0).second, "TorusModel: duplicate momentum");
    }
    for (const auto& k : modes)
      if (!seen.count(negate(k))) throw InvalidArgument("TorusModel: mode set is not closed under negation");
    // Positivity and parity wherever v_hat is sampled, i.e. on differences of modes.
    for (const auto& p : modes)
      for (const auto& q : modes) {
        Momentum r(dimension);
        for (int i = 0; i < dimension; ++i) r[i] = p[i] - q[i];
        const double a = v_hat(r), b = v_hat(negate(r));
        if (!(a >= 0)) throw InvalidArgument("TorusModel: v_hat must be non-negative");
        if (std::abs(a - b) > 1e-14 * std::max(1.0, std::abs(a)))
          throw InvalidArgument("TorusModel: v_hat must be even");
      }
  }
};

inline Momentum add(const Momentum& a, const Momentum& b, int sign = 1) {
  Momentum r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + sign * b[i];
  return r;
}

inline void check_basis(const TorusModel& model, const fock::FockBasis& basis) {
  model.validate();
  require(basis.num_modes() == model.num_modes(), "meanfield: basis modes do not match model modes");
  require(!basis.restricted(), "meanfield: Hamiltonian needs the condensate mode in the basis");
}

// H = sum_p |p|^2 a*_p a_p + 1/(2N) sum_{p,q,r} vhat(r) a*_{p+r} a*_{q-r} a_q a_p,
// keeping only terms whose outgoing momenta stay in the mode set.
inline SparseOperator assemble_mf_hamiltonian(const TorusModel& model, const BasisPtr& basis) {
  check_basis(model, *basis);
  const int M = model.num_modes();
  const double inv2N = 1.0 / (2.0 * model.num_particles);
  // out[p][q] lists (p', q', vhat(r)) with k_{p'} = k_p + r, k_{q'} = k_q - r.
  struct Channel {
    int p2, q2;
    double w;
  };
  std::vector<std::vector<std::vector<Channel>>> chan(M, std::vector<std::vector<Channel>>(M));
  for (int p = 0; p < M; ++p)
    for (int q = 0; q < M; ++q)
      for (int p2 = 0; p2 < M; ++p2) {
        const Momentum r = add(model.modes[p2], model.modes[p], -1);
        auto q2 = model.find(add(model.modes[q], r, -1));
        if (!q2) continue;
        const double w = model.v(r);
        if (w != 0.0) chan[p][q].push_back({p2, *q2, w * inv2N});
      }
  fock::Triplets t;
  fock::Occupation occ(M);
  for (std::size_t k = 0; k < basis->dimension(); ++k) {
    const auto s = basis->state(k);
    double kin = 0;
    for (int p = 0; p < M; ++p) kin += model.kinetic(p) * s[p];
    if (kin != 0.0) t.emplace_back(k, k, kin);
    for (int p = 0; p < M; ++p) {
      if (s[p] == 0) continue;
      for (int q = 0; q < M; ++q) {
        if (s[q] == 0 || (p == q && s[p] < 2)) continue;
        for (const auto& c : chan[p][q]) {
          std::copy(s.begin(), s.end(), occ.begin());
          const int cre[2] = {c.p2, c.q2};
          const int ann[2] = {q, p};
          const double amp = fock::apply_monomial(occ, cre, ann);
          if (amp == 0.0) continue;
          if (auto j = basis->find(occ)) t.emplace_back(*j, k, c.w * amp);
        }
      }
    }
  }
  return fock::from_triplets(basis, t, true);
}

// Total momentum along one axis (integer labels).
inline SparseOperator total_momentum(const TorusModel& model, const BasisPtr& basis, int axis) {
  require(axis >= 0 && axis < model.dimension, "total_momentum: invalid axis");
  return fock::diagonal_operator(basis, [&](std::span<const int> s) {
    double v = 0;
    for (int p = 0; p < model.num_modes(); ++p) v += model.modes[p][axis] * s[p];
    return cplx(v);
  });
}

// [H, e^{kappa N+/2}] from the pair-creation block X2 (raises N+ by 2) and the
// cubic block X1 (raises by 1): X2 E (1 - e^kappa) + X1 E (1 - e^{kappa/2}) - h.c.
inline SparseOperator commutator_closed_form(const TorusModel& model, const BasisPtr& basis,
                                             double kappa) {
  check_basis(model, *basis);
  const int M = model.num_modes();
  const double N = model.num_particles;
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc x2(d, d), x1(d, d);
  for (int r = 1; r < M; ++r) {
    const double w = model.v(model.modes[r]);
    if (w == 0.0) continue;
    const int mr = *model.find(negate(model.modes[r]));
    x2 += fock::monomial(basis, {r, mr}, {0, 0}).matrix() * cplx(w / (2 * N));
  }
  for (int p = 1; p < M; ++p)
    for (int r = 1; r < M; ++r) {
      const double w = model.v(model.modes[r]);
      if (w == 0.0) continue;
      auto pr = model.find(add(model.modes[p], model.modes[r]));
      if (!pr || *pr == 0) continue;
      const int mr = *model.find(negate(model.modes[r]));
      x1 += fock::monomial(basis, {*pr, mr}, {p, 0}).matrix() * cplx(w / N);
    }
  SparseXc E = fock::number_function(basis, [&](double n) { return std::exp(0.5 * kappa * n); }).matrix();
  SparseXc c = SparseXc(x2 * E) * cplx(1 - std::exp(kappa)) + SparseXc(x1 * E) * cplx(1 - std::exp(0.5 * kappa));
  SparseXc cadj = c.adjoint();
  return {basis, c - cadj};
}

inline double commutator_identity_check(const TorusModel& model, const SparseOperator& H,
                                        double kappa) {
  require(kappa >= 0, "commutator_identity_check: kappa must be non-negative");
  const auto& basis = H.basis_ptr();
  auto E = fock::number_function(basis, [&](double n) { return std::exp(0.5 * kappa * n); });
  auto direct = fock::commutator(H, E);
  auto closed = commutator_closed_form(model, basis, kappa);
  return fock::max_entry(direct - closed);
}

// Smallest C with |<psi, E[H,E] psi>| <= C kappa <psi, N+ e^{kappa N+} psi> over
// `samples` random normalised vectors. The supremum over all vectors is not
// finite near the pure condensate, hence the sampled fit.
inline double commutator_sandwich_constant(const SparseOperator& H, double kappa, int samples,
                                           std::mt19937_64& rng) {
  const auto& basis = H.basis_ptr();
  auto E = fock::number_function(basis, [&](double n) { return std::exp(0.5 * kappa * n); });
  auto NeN = fock::number_function(basis, [&](double n) { return n * std::exp(kappa * n); });
  SparseXc EC = (E * fock::commutator(H, E)).matrix();
  std::normal_distribution<double> g;
  double c = 0;
  for (int s = 0; s < samples; ++s) {
    VectorXc v(basis->dimension());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = cplx(g(rng), g(rng));
    v.normalize();
    const double num = std::abs(v.dot(EC * v));
    const double den = kappa * v.dot(NeN.apply(v)).real();
    if (den > 0) c = std::max(c, num / den);
  }
  return c;
}

struct SpectralWindow {
  double ground_energy = 0;
  double width = 0;
  Eigen::VectorXd energies;
  MatrixXc vectors;  // orthonormal columns
  std::size_t dimension() const { return static_cast<std::size_t>(vectors.cols()); }
};

struct SpectralOptions {
  std::size_t dense_max = 2500;
  double edge_tol = 1e-10;  // relative slack so an eigenvalue exactly at E0 + zeta is kept
  linalg::LanczosOptions lanczos{};
};

inline SpectralWindow spectral_window(const SparseOperator& H, double zeta,
                                      const SpectralOptions& opt = {}) {
  require(zeta > 0, "spectral_window: zeta must be positive");
  require(H.hermitian_hint(), "spectral_window: operator must be Hermitian");
  SpectralWindow w;
  w.width = zeta;
  const auto d = static_cast<Eigen::Index>(H.dimension());
  linalg::EigenPairs ep;
  if (H.dimension() <= opt.dense_max) {
    ep = linalg::dense_hermitian_eigen(H.dense());
  } else {
    double e0 = std::numeric_limits<double>::quiet_NaN();
    ep = linalg::lanczos_lowest(
        [&](const VectorXc& v) { return VectorXc(H.matrix() * v); }, d, static_cast<int>(d),
        [&](double e) {
          if (std::isnan(e0)) {
            e0 = e;
            return false;
          }
          return e > e0 + zeta + opt.edge_tol * std::max(1.0, std::abs(e0));
        },
        opt.lanczos);
  }
  w.ground_energy = ep.values(0);
  const double cut = w.ground_energy + zeta + opt.edge_tol * std::max(1.0, std::abs(w.ground_energy));
  Eigen::Index k = 0;
  while (k < ep.values.size() && ep.values(k) <= cut) ++k;
  w.energies = ep.values.head(k);
  w.vectors = ep.vectors.leftCols(k);
  return w;
}

inline void check_counting(const SpectralWindow& w, const SparseOperator& counting) {
  require(w.dimension() > 0, "exp_moment: empty window");
  require(static_cast<std::size_t>(w.vectors.rows()) == counting.dimension(),
          "exp_moment: counting operator does not match the window");
}

struct MomentResult {
  double value = 1.0;
  VectorXc maximizer;
};

// sup over the window of <psi, e^{kappa N} psi>: largest eigenvalue of the
// compression W* e^{kappa N} W.
inline MomentResult exp_moment_ex(const SpectralWindow& w, double kappa, const SparseOperator& counting) {
  check_counting(w, counting);
  require(kappa >= 0, "exp_moment: kappa must be non-negative");
  MomentResult r;
  if (kappa == 0.0) {
    r.value = 1.0;
    r.maximizer = w.vectors.col(0);
    return r;
  }
  fock::ExpAction e(counting, kappa);
  MatrixXc comp = w.vectors.adjoint() * e.apply(w.vectors);
  comp = 0.5 * (comp + comp.adjoint()).eval();
  auto ep = linalg::dense_hermitian_eigen(comp);
  r.value = ep.values(ep.values.size() - 1);
  r.maximizer = w.vectors * ep.vectors.col(ep.values.size() - 1);
  return r;
}

inline double exp_moment(const SpectralWindow& w, double kappa, const SparseOperator& counting) {
  return exp_moment_ex(w, kappa, counting).value;
}

struct MomentReport {
  std::vector<double> kappa_grid;
  std::vector<double> sup_moments;
  std::vector<double> tail;  // tail[n] = sup over the window of P[N >= n]
  double fitted_rate = 0;    // minus the least-squares slope of log tail
};

inline Eigen::VectorXd counting_values(const SparseOperator& counting) {
  require(counting.is_diagonal(), "counting operator must be diagonal in the occupation basis");
  return counting.diagonal().real();
}

inline MomentReport moment_report(const SpectralWindow& w, const SparseOperator& counting,
                                  const std::vector<double>& kappa_grid) {
  check_counting(w, counting);
  require(!kappa_grid.empty(), "moment_report: empty kappa grid");
  MomentReport rep;
  rep.kappa_grid = kappa_grid;
  for (double k : kappa_grid) rep.sup_moments.push_back(exp_moment(w, k, counting));
  const Eigen::VectorXd n = counting_values(counting);
  const int nmax = static_cast<int>(std::lround(n.maxCoeff()));
  for (int m = 0; m <= nmax; ++m) {
    Eigen::VectorXd proj = (n.array() >= m - 0.5).cast<double>();
    MatrixXc comp = w.vectors.adjoint() * proj.cast<cplx>().asDiagonal() * w.vectors;
    rep.tail.push_back(m == 0 ? 1.0 : std::max(0.0, linalg::lambda_max_dense(comp)));
  }
  for (std::size_t m = 1; m < rep.tail.size(); ++m) rep.tail[m] = std::min(rep.tail[m], rep.tail[m - 1]);
  std::vector<double> xs, ys;
  for (std::size_t m = 0; m < rep.tail.size(); ++m)
    if (rep.tail[m] > 1e-300) {
      xs.push_back(static_cast<double>(m));
      ys.push_back(std::log(rep.tail[m]));
    }
  rep.fitted_rate = xs.size() >= 2 ? -fit_line(xs, ys).slope : 0.0;
  return rep;
}

struct TailCheck {
  bool holds = true;
  double min_margin = std::numeric_limits<double>::infinity();
  std::size_t comparisons = 0;
};

// P[N >= n] <= e^{-kappa n} <e^{kappa N}> for one vector and all n. The right
// side is summed as sum_i e^{kappa(n_i - n)} |psi_i|^2 in the same index order as
// the left side, so each term dominates its counterpart and the comparison is
// exact in floating point (no tolerance).
inline TailCheck markov_tail_check(const VectorXc& psi, const SparseOperator& counting,
                                   const std::vector<double>& kappa_grid) {
  const Eigen::VectorXd n = counting_values(counting);
  const int nmax = static_cast<int>(std::lround(n.maxCoeff()));
  TailCheck tc;
  for (double kappa : kappa_grid)
    for (int m = 0; m <= nmax + 1; ++m) {
      double lhs = 0, rhs = 0;
      for (Eigen::Index i = 0; i < psi.size(); ++i) {
        const double p = std::norm(psi(i));
        if (n(i) >= m) lhs += p;
        rhs += std::exp(kappa * (n(i) - m)) * p;
      }
      ++tc.comparisons;
      tc.min_margin = std::min(tc.min_margin, rhs - lhs);
      if (!(lhs <= rhs)) tc.holds = false;
    }
  return tc;
}

inline double lambda_min(const SparseOperator& A, std::size_t dense_max = 2500) {
  if (A.dimension() <= dense_max) return linalg::lambda_min_dense(A.dense());
  return linalg::lanczos_lambda_min([&](const VectorXc& v) { return VectorXc(A.matrix() * v); },
                                    static_cast<Eigen::Index>(A.dimension()));
}

// Smallest C >= 0 with H - (N/2) vhat(0) - N+ + C >= 0.
inline double verify_coercivity(const TorusModel& model, const SparseOperator& H) {
  const auto& basis = H.basis_ptr();
  const double shift = 0.5 * model.num_particles * model.v(model.modes[0]);
  SparseOperator A = H - fock::identity(basis) * cplx(shift) - fock::number_operator(basis);
  return std::max(0.0, -lambda_min(A));
}

struct BootstrapRow {
  double kappa = 0;
  double lhs = 0;         // sup <N+ e^{kappa N+}>
  double moment = 0;      // sup <e^{kappa N+}>
  double rhs = 0;         // (C + sqrt(zeta)) / (1 - C kappa) * moment, proof constant C
  double rhs_fitted = 0;  // same with the fitted constant
  double margin = 0;      // rhs - lhs; +inf when vacuous
  bool vacuous = false;   // 1 - C kappa <= 0: the proof constant gives no bound here
  double integral_error = 0;
};

struct BootstrapTable {
  double C = 0;             // proof constant max(C_coercive, C_commutator)
  double C_coercive = 0;
  double C_commutator = 0;
  double C_fitted = 0;      // smallest C for which every row holds
  std::vector<BootstrapRow> rows;
  bool holds = true;        // every non-vacuous row holds with C, and every row with C_fitted
  double max_integral_error = 0;
};

namespace detail {

// max over psi in span(W) of |psi* A psi| / (psi* B psi), B >= 0.
inline double window_ratio(const MatrixXc& A, const MatrixXc& B) {
  auto eb = linalg::dense_hermitian_eigen(0.5 * (B + B.adjoint()));
  const double bmax = eb.values.maxCoeff();
  if (bmax <= 0) return 0.0;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < eb.values.size(); ++i)
    if (eb.values(i) > 1e-13 * bmax) keep.push_back(i);
  MatrixXc S(B.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    S.col(static_cast<Eigen::Index>(j)) = eb.vectors.col(keep[j]) / std::sqrt(eb.values(keep[j]));
  MatrixXc At = S.adjoint() * A * S;
  double best = 0;
  const int steps = 256;
  for (int s = 0; s < steps; ++s) {
    const cplx ph = std::polar(1.0, std::numbers::pi * s / steps);
    MatrixXc h = ph * At;
    best = std::max(best, std::abs(linalg::lambda_max_dense(h)));
    best = std::max(best, std::abs(linalg::lambda_min_dense(h)));
  }
  return best;
}

}  // namespace detail

// The bootstrap inequality
//   sup <N+ e^{kN+}> <= (C + zeta^{1/2}) / (1 - C k) sup <e^{kN+}>
// on the window, with C the larger of the coercivity constant (shifted to the
// window's ground energy) and the commutator ratio fitted on the window.
inline BootstrapTable bootstrap_verification(const TorusModel& model, const SparseOperator& H,
                                             const SpectralWindow& w,
                                             const std::vector<double>& kappa_grid) {
  require(!kappa_grid.empty(), "bootstrap_verification: empty kappa grid");
  const auto& basis = H.basis_ptr();
  auto counting = fock::number_operator(basis);
  BootstrapTable tab;
  tab.C_coercive = verify_coercivity(model, H) + w.ground_energy -
                   0.5 * model.num_particles * model.v(model.modes[0]);
  tab.C_coercive = std::max(0.0, tab.C_coercive);
  const Eigen::VectorXd n = counting_values(counting);
  for (double kappa : kappa_grid) {
    if (kappa <= 0) continue;
    auto E = fock::number_function(basis, [&](double x) { return std::exp(0.5 * kappa * x); });
    SparseXc EC = (E * fock::commutator(H, E)).matrix();
    MatrixXc A = w.vectors.adjoint() * (EC * w.vectors);
    Eigen::VectorXd ne = n.array() * (kappa * n.array()).exp();
    MatrixXc B = w.vectors.adjoint() * ne.cast<cplx>().asDiagonal() * w.vectors;
    tab.C_commutator = std::max(tab.C_commutator, detail::window_ratio(A, B) / kappa);
  }
  tab.C = std::max(tab.C_coercive, tab.C_commutator);

  const double sz = std::sqrt(w.width);
  std::vector<VectorXc> probes;
  for (Eigen::Index j = 0; j < w.vectors.cols(); ++j) probes.push_back(w.vectors.col(j));
  for (double kappa : kappa_grid) {
    BootstrapRow row;
    row.kappa = kappa;
    Eigen::VectorXd ne = n.array() * (kappa * n.array()).exp();
    MatrixXc B = w.vectors.adjoint() * ne.cast<cplx>().asDiagonal() * w.vectors;
    row.lhs = std::max(0.0, linalg::lambda_max_dense(B));
    auto mom = exp_moment_ex(w, kappa, counting);
    row.moment = mom.value;
    row.vacuous = !(1.0 - tab.C * kappa > 0);
    row.rhs = row.vacuous ? std::numeric_limits<double>::infinity()
                          : (tab.C + sz) / (1.0 - tab.C * kappa) * row.moment;
    row.margin = row.rhs - row.lhs;
    if (row.margin < 0) tab.holds = false;
    const double r = row.lhs / row.moment;
    tab.C_fitted = std::max(tab.C_fitted, (r - sz) / (1.0 + r * kappa));

    std::vector<VectorXc> vs = probes;
    vs.push_back(mom.maximizer);
    for (const auto& psi : vs) {
      Eigen::VectorXd p2 = psi.cwiseAbs2();
      auto expect = [&](double t, bool weighted) {
        double s = 0;
        for (Eigen::Index i = 0; i < p2.size(); ++i) s += (weighted ? n(i) : 1.0) * std::exp(t * n(i)) * p2(i);
        return s;
      };
      double integral = 0;
      if (kappa > 0)
        integral = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            [&](double t) { return expect(t, true); }, 0.0, kappa, 15, 1e-14);
      const double err = std::abs(expect(kappa, false) - 1.0 - integral);
      row.integral_error = std::max(row.integral_error, err);
    }
    tab.max_integral_error = std::max(tab.max_integral_error, row.integral_error);
    tab.rows.push_back(row);
  }
  tab.C_fitted = std::max(0.0, tab.C_fitted);
  const double kmax = *std::max_element(kappa_grid.begin(), kappa_grid.end());
  if (!(1.0 - tab.C_fitted * kmax > 0))
    throw InvalidArgument("bootstrap_verification: kappa_max too large for the fitted C (1 - C kappa <= 0)");
  for (auto& row : tab.rows) {
    row.rhs_fitted = (tab.C_fitted + sz) / (1.0 - tab.C_fitted * row.kappa) * row.moment;
    // Fitted rows hold by construction up to rounding in the fit itself.
    if (row.rhs_fitted < row.lhs * (1 - 1e-12)) tab.holds = false;
  }
  return tab;
}

// Everything the moment experiments need for one N.
struct MeanFieldRun {
  BasisPtr basis;
  SparseOperator H;
  SpectralWindow window;
  SparseOperator counting;
};

inline MeanFieldRun prepare(const TorusModel& model, double zeta,
                            std::size_t cap = fock::FockBasis::kDefaultCap,
                            const SpectralOptions& opt = {}) {
  MeanFieldRun r;
  r.basis = fock::build_sector(model.num_modes(), model.num_particles, cap);
  r.H = assemble_mf_hamiltonian(model, r.basis);
  r.window = spectral_window(r.H, zeta, opt);
  r.counting = fock::number_operator(r.basis);
  return r;
}

}  // namespace bosegp::meanfield
