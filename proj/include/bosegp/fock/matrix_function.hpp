#pragma once

#include <bosegp/fock/operators.hpp>

#include <unsupported/Eigen/MatrixFunctions>

namespace bosegp::fock {

enum class MatrixFunctionTag { exp, expm_scaled };

struct MatrixFunctionOptions {
  cplx scale = 1.0;  // t in e^{tA}; only read for expm_scaled
  std::size_t dense_threshold = 500;
  int krylov_dim = 30;
  int max_iterations = 10000;
  bool force_krylov = false;
};

struct MatrixFunctionResult {
  VectorXc value;
  double error_estimate = 0.0;
  int steps = 0;
  bool dense = false;
};

namespace detail {

inline double norm1(const SparseXc& a) {
  double r = 0;
  for (int k = 0; k < a.outerSize(); ++k) {
    double s = 0;
    for (SparseXc::InnerIterator it(a, k); it; ++it) s += std::abs(it.value());
    r = std::max(r, s);
  }
  return r;
}

// Time-stepped Arnoldi approximation of e^{tA}v with the local error estimate
// of Sidje's expv; tol is an absolute error per unit time.
inline MatrixFunctionResult krylov_expv(const SparseXc& a, cplx t, const VectorXc& v, double tol,
                                        int m_max, int max_steps) {
  MatrixFunctionResult res;
  res.value = v;
  const double T = std::abs(t);
  const double beta0 = v.norm();
  if (T == 0.0 || beta0 == 0.0) return res;
  const cplx dir = t / T;
  const Eigen::Index n = v.size();
  const int m = static_cast<int>(std::min<Eigen::Index>(m_max, n));
  const double anorm = std::max(norm1(a), 1e-300);
  const double btol = 1e-14 * anorm;
  const double gamma = 0.9, delta = 1.2;
  const double xm = 1.0 / m;
  const double fact = std::pow((m + 1) / std::exp(1.0), m + 1) * std::sqrt(2 * M_PI * (m + 1));
  double tau = std::min(T, (1.0 / anorm) * std::pow((fact * tol) / (4.0 * beta0 * anorm), xm));

  VectorXc w = v;
  double tk = 0;
  MatrixXc V(n, m + 1);
  while (tk < T) {
    if (++res.steps > max_steps)
      throw ConvergenceFailure("apply_matrix_function: Krylov iteration did not converge");
    const double beta = w.norm();
    if (beta == 0.0) break;
    V.col(0) = w / beta;
    MatrixXc H = MatrixXc::Zero(m + 2, m + 2);
    bool happy = false;
    int mb = m;
    for (int j = 0; j < m; ++j) {
      VectorXc p = dir * (a * V.col(j));
      for (int pass = 0; pass < 2; ++pass)
        for (int i = 0; i <= j; ++i) {
          const cplx h = V.col(i).dot(p);
          H(i, j) += h;
          p -= h * V.col(i);
        }
      const double s = p.norm();
      if (s < btol) {
        happy = true;
        mb = j + 1;
        tau = T - tk;
        break;
      }
      H(j + 1, j) = s;
      V.col(j + 1) = p / s;
    }
    double avnorm = 0;
    if (!happy) {
      H(m + 1, m) = 1.0;
      avnorm = (dir * (a * V.col(m))).norm();
    }
    const int mx = happy ? mb : m + 2;
    MatrixXc F;
    double err_loc = 0;
    for (int reject = 0;; ++reject) {
      F = (tau * H.topLeftCorner(mx, mx)).exp();
      if (happy) break;
      const double phi1 = std::abs(beta * F(m, 0));
      const double phi2 = std::abs(beta * F(m + 1, 0) * avnorm);
      if (phi1 > 10 * phi2)
        err_loc = phi2;
      else if (phi1 > phi2)
        err_loc = phi1 * phi2 / (phi1 - phi2);
      else
        err_loc = phi1;
      if (err_loc <= delta * tau * tol) break;
      if (reject > 50) throw ConvergenceFailure("apply_matrix_function: step size collapsed");
      tau = gamma * tau * std::pow(tau * tol / err_loc, xm);
    }
    const int mw = happy ? mb : m + 1;
    w = beta * (V.leftCols(mw) * F.col(0).head(mw));
    tk += tau;
    res.error_estimate += err_loc;
    if (!happy && err_loc > 0)
      tau = std::min(T - tk, gamma * tau * std::pow(tau * tol / err_loc, xm));
    else
      tau = T - tk;
  }
  res.value = w;
  return res;
}

}  // namespace detail

inline cplx function_scale(MatrixFunctionTag f, const MatrixFunctionOptions& opt) {
  return f == MatrixFunctionTag::exp ? cplx(1.0) : opt.scale;
}

// f(A)v: entrywise for diagonal A, exact dense exponential at dimension <=
// dense_threshold, Krylov otherwise (tolerance relative to |v|).
inline MatrixFunctionResult apply_matrix_function_ex(const SparseOperator& a, MatrixFunctionTag f,
                                                     const VectorXc& v, double tolerance,
                                                     const MatrixFunctionOptions& opt = {}) {
  require(tolerance > 0, "apply_matrix_function: tolerance must be positive");
  require(static_cast<std::size_t>(v.size()) == a.dimension(),
          "apply_matrix_function: vector does not match operator");
  const cplx t = function_scale(f, opt);
  MatrixFunctionResult res;
  if (a.is_diagonal()) {
    const VectorXc d = a.diagonal();
    res.value = v;
    for (Eigen::Index i = 0; i < v.size(); ++i) res.value(i) *= std::exp(t * d(i));
    res.dense = true;
    return res;
  }
  if (!opt.force_krylov && a.dimension() <= opt.dense_threshold) {
    MatrixXc e = (t * a.dense()).exp();
    res.value = e * v;
    res.dense = true;
    return res;
  }
  return detail::krylov_expv(a.matrix(), t, v, tolerance * std::max(v.norm(), 1e-300),
                             opt.krylov_dim, opt.max_iterations);
}

inline VectorXc apply_matrix_function(const SparseOperator& a, MatrixFunctionTag f,
                                      const VectorXc& v, double tolerance,
                                      const MatrixFunctionOptions& opt = {}) {
  return apply_matrix_function_ex(a, f, v, tolerance, opt).value;
}

// e^{tA} prepared once for repeated application; keeps the dense matrix when
// the dimension allows it.
class ExpAction {
 public:
  ExpAction(SparseOperator a, cplx t, double tolerance = 1e-12, MatrixFunctionOptions opt = {})
      : a_(std::move(a)), t_(t), tol_(tolerance), opt_(opt) {
    opt_.scale = t_;
    if (a_.is_diagonal()) {
      diag_ = a_.diagonal();
      for (Eigen::Index i = 0; i < diag_.size(); ++i) diag_(i) = std::exp(t_ * diag_(i));
      mode_ = Mode::diagonal;
    } else if (!opt_.force_krylov && a_.dimension() <= opt_.dense_threshold) {
      dense_ = (t_ * a_.dense()).exp();
      mode_ = Mode::dense;
    }
  }

  VectorXc operator()(const VectorXc& v) const {
    switch (mode_) {
      case Mode::diagonal: return diag_.cwiseProduct(v);
      case Mode::dense: return dense_ * v;
      default:
        return apply_matrix_function(a_, MatrixFunctionTag::expm_scaled, v, tol_, opt_);
    }
  }

  MatrixXc apply(const MatrixXc& vs) const {
    if (mode_ == Mode::diagonal) return diag_.asDiagonal() * vs;
    if (mode_ == Mode::dense) return dense_ * vs;
    MatrixXc out(vs.rows(), vs.cols());
    for (Eigen::Index j = 0; j < vs.cols(); ++j) out.col(j) = (*this)(vs.col(j));
    return out;
  }

  bool exact() const { return mode_ != Mode::krylov; }
  std::size_t dimension() const { return a_.dimension(); }

  // Dense matrix of e^{tA}; builds it column by column on the Krylov path.
  MatrixXc matrix() const {
    if (mode_ == Mode::dense) return dense_;
    if (mode_ == Mode::diagonal) return MatrixXc(diag_.asDiagonal());
    return apply(MatrixXc::Identity(static_cast<Eigen::Index>(dimension()),
                                    static_cast<Eigen::Index>(dimension())));
  }

 private:
  enum class Mode { diagonal, dense, krylov };
  SparseOperator a_;
  cplx t_;
  double tol_;
  MatrixFunctionOptions opt_;
  Mode mode_ = Mode::krylov;
  VectorXc diag_;
  MatrixXc dense_;
};

}  // namespace bosegp::fock
