#pragma once

#include <bosegp/common.hpp>
#include <bosegp/fock.hpp>
#include <bosegp/linalg.hpp>

#include <algorithm>
#include <optional>
#include <sstream>

namespace bosegp::bogoliubov {

using fock::BasisPtr;
using fock::SparseOperator;

inline constexpr double kSmallNorm = 0.5;

// B(eta) = 1/2 sum_pq (eta_pq b*_p b*_q - conj(eta_pq) b_p b_q) on an
// excitation basis (condensate mode 0 excluded). eta is stored over all M
// modes with a vanishing condensate row and column.
struct QuadraticGenerator {
  MatrixXc eta;
  SparseOperator B;
  int total_N = 0;
  double hs_norm = 0;

  const BasisPtr& basis() const { return B.basis_ptr(); }
  int num_modes() const { return basis()->num_modes(); }
  int cap() const { return basis()->max_particles(); }
  std::size_t dimension() const { return B.dimension(); }

  fock::ExpAction exp(double sign = 1.0) const { return fock::ExpAction(B, cplx(sign), 1e-13); }
};

namespace detail {

inline MatrixXc embed_eta(const MatrixXc& eta, int M) {
  if (eta.rows() == M && eta.cols() == M) return eta;
  require(eta.rows() == M - 1 && eta.cols() == M - 1,
          "build_generator: eta must be M x M or (M-1) x (M-1)");
  MatrixXc e = MatrixXc::Zero(M, M);
  e.bottomRightCorner(M - 1, M - 1) = eta;
  return e;
}

inline VectorXc embed_mode(const VectorXc& f, int M) {
  if (f.size() == M) return f;
  require(f.size() == M - 1, "mode vector must have M or M-1 entries");
  VectorXc g = VectorXc::Zero(M);
  g.tail(M - 1) = f;
  return g;
}

}  // namespace detail

inline QuadraticGenerator build_generator(const MatrixXc& eta_modes, const BasisPtr& basis, int total_N) {
  require(basis->restricted(), "build_generator: basis must exclude the condensate mode");
  require(total_N >= basis->max_particles(), "build_generator: total_N below the particle cap");
  const int M = basis->num_modes();
  QuadraticGenerator g;
  g.eta = detail::embed_eta(eta_modes, M);
  require(g.eta.allFinite(), "build_generator: eta not finite");
  const double scale = std::max(1.0, g.eta.cwiseAbs().maxCoeff());
  if ((g.eta - g.eta.transpose()).cwiseAbs().maxCoeff() > 1e-14 * scale)
    throw InvalidArgument("build_generator: eta must be symmetric");
  if (g.eta.row(0).cwiseAbs().maxCoeff() > 0 || g.eta.col(0).cwiseAbs().maxCoeff() > 0)
    throw InvalidArgument("build_generator: eta must vanish on the condensate mode");
  g.eta = 0.5 * (g.eta + g.eta.transpose()).eval();
  g.total_N = total_N;
  g.hs_norm = g.eta.norm();
  auto cc = fock::pair_operator(basis, g.eta, fock::Ladder::create, fock::Ladder::create, total_N);
  g.B = (cc - cc.adjoint()) * cplx(0.5);
  return g;
}

// Same eta and N on a basis with a different particle cap.
inline QuadraticGenerator with_cap(const QuadraticGenerator& g, int cap) {
  return build_generator(g.eta, fock::build_basis(g.num_modes(), cap, true), g.total_N);
}

// Two excitation modes coupled by eta_12 = eta_21 = s with ||eta||_HS = norm.
inline MatrixXc pair_kernel(double norm) {
  MatrixXc e = MatrixXc::Zero(2, 2);
  e(0, 1) = e(1, 0) = norm / std::sqrt(2.0);
  return e;
}

inline double unitarity_defect(const QuadraticGenerator& g, const std::vector<VectorXc>& vs) {
  auto E = g.exp();
  double d = 0;
  for (const auto& v : vs) d = std::max(d, std::abs(E(v).norm() - v.norm()) / std::max(v.norm(), 1e-300));
  return d;
}

// e^{-B} X e^{B}, as a dense matrix.
inline MatrixXc conjugate(const QuadraticGenerator& g, const SparseOperator& X) {
  require(X.basis() == *g.basis(), "conjugate: basis mismatch");
  return g.exp(-1.0).matrix() * (X.matrix() * g.exp(1.0).matrix());
}

// sum_{j<=k} ad_{-B}^j(X) / j!, the nested-commutator expansion of e^{-B}Xe^{B}.
inline MatrixXc nested_commutator_series(const QuadraticGenerator& g, const SparseOperator& X, int k) {
  require(k >= 0, "nested_commutator_series: negative order");
  const SparseXc& Bs = g.B.matrix();
  MatrixXc term = X.dense(), sum = term;
  for (int j = 1; j <= k; ++j) {
    term = (term * Bs - Bs * term) / double(j);
    sum += term;
  }
  return sum;
}

struct SeriesAction {
  VectorXc cosh_f, sinh_f;  // b(cosh_f) + b*(sinh_f) is the predicted conjugate of b(f)
  double tail_bound = 0;
};

// Truncated cosh/sinh of eta acting on f, summing the powers of eta up to k.
// With a real symmetric eta this is cosh(eta) f and sinh(eta) conj(f); the
// general form uses eta eta^* for the even terms.
inline SeriesAction series_action(const MatrixXc& eta, const VectorXc& f, int k) {
  require(k >= 0, "series_action: negative order");
  const double n = eta.norm();
  require(n < kSmallNorm, "series_action: ||eta||_HS must be below 0.5 for the series");
  const MatrixXc etabar = eta.conjugate();
  SeriesAction s;
  s.cosh_f = VectorXc::Zero(f.size());
  s.sinh_f = VectorXc::Zero(f.size());
  // row vector r_j = conj(f)^T P_j with P_j = eta etabar eta ... (j factors);
  // even j contributes to b(.), odd j to b*(.).
  Eigen::RowVectorXcd r = f.adjoint();
  double fact = 1;
  for (int j = 0; j <= k; ++j) {
    if (j > 0) {
      r = (j % 2 ? r * eta : r * etabar).eval();
      fact *= j;
    }
    if (j % 2 == 0)
      s.cosh_f += r.adjoint() / fact;
    else
      s.sinh_f += r.transpose() / fact;
  }
  s.tail_bound = std::exp(n) * std::pow(n, k + 1) / std::tgamma(k + 2.0) * f.norm();
  return s;
}

// Basis states with at most `max_excitations` particles, as unit columns.
inline MatrixXc low_sector_vectors(const fock::FockBasis& b, int max_excitations) {
  std::vector<Eigen::Index> idx;
  for (std::size_t k = 0; k < b.dimension(); ++k)
    if (b.total(k) <= max_excitations) idx.push_back(Eigen::Index(k));
  MatrixXc P = MatrixXc::Zero(Eigen::Index(b.dimension()), Eigen::Index(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) P(idx[j], Eigen::Index(j)) = 1.0;
  return P;
}

// Operator norm of A restricted to the column span of an isometry P.
inline double restricted_norm(const MatrixXc& A, const MatrixXc& P) {
  if (P.cols() == 0) return 0;
  Eigen::JacobiSVD<MatrixXc> svd(A * P);
  return svd.singularValues()(0);
}

struct RemainderData {
  VectorXc f, cosh_f, sinh_f;
  MatrixXc d;  // e^{-B} b(f) e^{B} - b(cosh f) - b*(sinh f)
  double tail_bound = 0;
  double norm = 0;         // on the test subspace
  std::vector<double> vector_norms;
};

struct ActionOptions {
  int test_excitations = 2;  // test vectors: basis states with at most this many particles
  double series_tol = 1e-10;
};

inline RemainderData approximate_action_check(const QuadraticGenerator& g, const VectorXc& f_modes, int k,
                                              const ActionOptions& opt = {}) {
  const int M = g.num_modes();
  RemainderData r;
  r.f = detail::embed_mode(f_modes, M);
  require(std::abs(r.f(0)) == 0.0, "approximate_action_check: f must vanish on the condensate");
  auto s = series_action(g.eta, r.f, k);
  r.tail_bound = s.tail_bound;
  if (s.tail_bound > opt.series_tol) {
    std::ostringstream os;
    os << "approximate_action_check: series tail " << s.tail_bound << " above " << opt.series_tol
       << " at order " << k << "; increase k";
    throw ConvergenceFailure(os.str());
  }
  r.cosh_f = s.cosh_f;
  r.sinh_f = s.sinh_f;
  const auto& basis = g.basis();
  const auto bf = fock::modified_annihilation(basis, r.f, g.total_N);
  const MatrixXc exact = conjugate(g, bf);
  const MatrixXc pred = (fock::modified_annihilation(basis, r.cosh_f, g.total_N) +
                         fock::modified_creation(basis, r.sinh_f, g.total_N))
                            .dense();
  r.d = exact - pred;
  const MatrixXc P = low_sector_vectors(*basis, opt.test_excitations);
  r.norm = restricted_norm(r.d, P);
  for (Eigen::Index j = 0; j < P.cols(); ++j) r.vector_norms.push_back((r.d * P.col(j)).norm());
  return r;
}

struct ScalingRow {
  int N = 0;
  double kappa = 0;
  double value = 0;
};

struct ScalingTable {
  std::vector<ScalingRow> rows;
  double N_exponent = 0;
  double kappa_exponent = 0;  // only fitted when kappa varies
};

struct SweepOptions {
  int cap = 24;  // particle cap, clipped to N
  int order = 12;
  ActionOptions action;
};

// ||d_eta(f)|| on the test subspace across total N, same eta and modes.
inline ScalingTable remainder_scaling(const MatrixXc& eta, const VectorXc& f, const std::vector<int>& Ns,
                                      const SweepOptions& opt = {}) {
  ScalingTable t;
  std::vector<double> xs, ys;
  const int M = int(eta.rows()) + 1;
  for (int N : Ns) {
    auto g = build_generator(eta, fock::build_basis(M, std::min(N, opt.cap), true), N);
    auto r = approximate_action_check(g, f, opt.order, opt.action);
    t.rows.push_back({N, 0.0, r.norm});
    xs.push_back(N);
    ys.push_back(r.norm);
  }
  if (xs.size() >= 2) t.N_exponent = loglog_slope(xs, ys);
  return t;
}

struct GronwallResult {
  double kappa = 0;
  double C = 0;           // smallest C with C e^{2 kappa N} - e^{B} e^{kappa N} e^{-B} >= 0
  double psd_margin = 0;  // lambda_min of that difference at the fitted C
  int cap = 0;
};

// The smallest admissible C is lambda_max(D^{-1} A D^{-1}) with D = e^{kappa N},
// A = e^{B} e^{kappa N} e^{-B}, because D^{-1} is invertible; the margin
// confirms it on the undeformed operator.
inline GronwallResult gronwall_conjugation_check(const QuadraticGenerator& g, double kappa) {
  require(kappa > 0 && kappa <= 0.5, "gronwall_conjugation_check: kappa must be in (0, 0.5]");
  require(g.hs_norm < kSmallNorm, "gronwall_conjugation_check: ||eta||_HS must be below 0.5");
  const auto& basis = g.basis();
  const auto Nop = fock::number_operator(basis);
  const Eigen::VectorXd n = Nop.diagonal().real();
  const MatrixXc E = g.exp(1.0).matrix(), Einv = g.exp(-1.0).matrix();
  MatrixXc A = E * (n * kappa).array().exp().matrix().cast<cplx>().asDiagonal() * Einv;
  A = (0.5 * (A + A.adjoint())).eval();
  const Eigen::VectorXd dinv = (-kappa * n).array().exp();
  MatrixXc S = dinv.cast<cplx>().asDiagonal() * A * dinv.cast<cplx>().asDiagonal();
  GronwallResult r;
  r.kappa = kappa;
  r.cap = g.cap();
  r.C = linalg::lambda_max_dense(0.5 * (S + S.adjoint()));
  MatrixXc Mx = -A;
  Mx.diagonal() += (r.C * (2 * kappa * n).array().exp()).matrix().cast<cplx>();
  r.psd_margin = linalg::lambda_min_dense(Mx);
  return r;
}

struct CapStability {
  GronwallResult base, doubled;
  double relative_change = 0;
};

inline CapStability gronwall_cap_stability(const QuadraticGenerator& g, double kappa) {
  CapStability s;
  s.base = gronwall_conjugation_check(g, kappa);
  s.doubled = gronwall_conjugation_check(with_cap(g, 2 * g.cap()), kappa);
  s.relative_change = std::abs(s.doubled.C / s.base.C - 1);
  return s;
}

// Smallest C with e^{-B}(N+1)^k e^{B} <= C^k (N+1)^k.
inline double number_growth_constant(const QuadraticGenerator& g, int k) {
  require(k >= 1, "number_growth_constant: k must be positive");
  const Eigen::VectorXd n = fock::number_operator(g.basis()).diagonal().real().array() + 1.0;
  const Eigen::VectorXd w = n.array().pow(double(k));
  const MatrixXc E = g.exp(1.0).matrix(), Einv = g.exp(-1.0).matrix();
  MatrixXc A = Einv * w.cast<cplx>().asDiagonal() * E;
  const Eigen::VectorXd s = w.array().rsqrt();
  MatrixXc S = s.cast<cplx>().asDiagonal() * A * s.cast<cplx>().asDiagonal();
  return std::pow(linalg::lambda_max_dense(0.5 * (S + S.adjoint())), 1.0 / k);
}

// ||[e^{kappa N}, d_eta(f)]|| on the test subspace.
inline double commutator_remainder(const QuadraticGenerator& g, double kappa, const VectorXc& f, int k = 12,
                                   const ActionOptions& opt = {}) {
  require(kappa >= 0, "commutator_remainder: negative kappa");
  auto r = approximate_action_check(g, f, k, opt);
  if (kappa == 0) return 0;
  const Eigen::VectorXd n = fock::number_operator(g.basis()).diagonal().real();
  const VectorXc D = (kappa * n).array().exp().matrix().cast<cplx>();
  const MatrixXc c = D.asDiagonal() * r.d - r.d * D.asDiagonal();
  return restricted_norm(c, low_sector_vectors(*g.basis(), opt.test_excitations));
}

inline ScalingTable commutator_scaling(const MatrixXc& eta, const VectorXc& f, const std::vector<int>& Ns,
                                       const std::vector<double>& kappas, const SweepOptions& opt = {}) {
  ScalingTable t;
  std::vector<double> xn, xk, y;
  const int M = int(eta.rows()) + 1;
  for (int N : Ns) {
    auto g = build_generator(eta, fock::build_basis(M, std::min(N, opt.cap), true), N);
    for (double kappa : kappas) {
      const double v = commutator_remainder(g, kappa, f, opt.order, opt.action);
      t.rows.push_back({N, kappa, v});
      xn.push_back(N);
      xk.push_back(kappa);
      y.push_back(v);
    }
  }
  if (kappas.size() >= 2 && Ns.size() >= 2) {
    auto [a, b] = loglog_fit2(xn, xk, y);
    t.N_exponent = a;
    t.kappa_exponent = b;
  } else if (Ns.size() >= 2) {
    t.N_exponent = loglog_slope(xn, y);
  }
  return t;
}

struct CubicProbe {
  MatrixXc plus, minus;
  double residual = 0;  // max entry of plus + minus
};

// sqrt(N)[b(cosh h) + b*(sinh h) + h.c.] as it appears among the linear terms,
// and the block that cancels it; the second is assembled from -h on its own.
inline CubicProbe cubic_cancellation_probe(const QuadraticGenerator& g, const VectorXc& h_modes, int k = 12) {
  const VectorXc h = detail::embed_mode(h_modes, g.num_modes());
  auto block = [&](const VectorXc& v) {
    auto s = series_action(g.eta, v, k);
    auto L = fock::modified_annihilation(g.basis(), s.cosh_f, g.total_N) +
             fock::modified_creation(g.basis(), s.sinh_f, g.total_N);
    return MatrixXc(std::sqrt(double(g.total_N)) * (L + L.adjoint()).dense());
  };
  CubicProbe p;
  p.plus = block(h);
  p.minus = block(-h);
  p.residual = fock::max_entry(MatrixXc(p.plus + p.minus));
  return p;
}

}  // namespace bosegp::bogoliubov
