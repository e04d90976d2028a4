#pragma once

#include <bosegp/common.hpp>

#include <Eigen/Eigenvalues>

#include <functional>
#include <random>

namespace bosegp::linalg {

using LinearMap = std::function<VectorXc(const VectorXc&)>;

struct EigenPairs {
  Eigen::VectorXd values;  // ascending
  MatrixXc vectors;        // columns, orthonormal
};

inline EigenPairs dense_hermitian_eigen(const MatrixXc& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(a);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("dense Hermitian eigensolver failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

inline double lambda_max_dense(const MatrixXc& a) {
  MatrixXc h = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("dense Hermitian eigensolver failed");
  return es.eigenvalues()(es.eigenvalues().size() - 1);
}

inline double lambda_min_dense(const MatrixXc& a) {
  MatrixXc h = 0.5 * (a + a.adjoint());
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(h, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConvergenceFailure("dense Hermitian eigensolver failed");
  return es.eigenvalues()(0);
}

struct LanczosOptions {
  int krylov_dim = 60;
  int keep = 20;
  int max_restarts = 500;
  double tol = 1e-10;
  std::uint64_t seed = 0x5eed;
};

// Lowest eigenpairs of a Hermitian map: thick-restart Lanczos (Rayleigh-Ritz
// on an explicitly stored Krylov basis, keeping the lowest Ritz vectors at each
// restart) with deflation of converged pairs. Pairs come out in ascending order
// until `count` are found or `stop(value)` fires; the triggering pair is dropped.
inline EigenPairs lanczos_lowest(const LinearMap& op, Eigen::Index dim, int count,
                                 const std::function<bool(double)>& stop = nullptr,
                                 const LanczosOptions& opt = {}) {
  require(dim > 0 && count > 0, "lanczos_lowest: empty problem");
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss;
  std::vector<VectorXc> locked;
  std::vector<double> values;

  auto random_vec = [&]() {
    VectorXc v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = cplx(gauss(rng), gauss(rng));
    return v;
  };
  auto project_out = [&](VectorXc& v, const MatrixXc& basis, Eigen::Index cols) {
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : locked) v -= q * q.dot(v);
      if (cols > 0) v -= basis.leftCols(cols) * (basis.leftCols(cols).adjoint() * v);
    }
  };

  while (static_cast<int>(locked.size()) < count &&
         static_cast<Eigen::Index>(locked.size()) < dim) {
    const Eigen::Index room = dim - static_cast<Eigen::Index>(locked.size());
    const Eigen::Index m = std::min<Eigen::Index>(opt.krylov_dim, room);
    const Eigen::Index keep = std::max<Eigen::Index>(1, std::min<Eigen::Index>(opt.keep, m - 1));
    MatrixXc V(dim, m), AV(dim, m);
    Eigen::Index cols = 0;
    VectorXc next = random_vec();
    bool converged = false;
    double theta = 0, resid = 0;
    VectorXc x;
    for (int restart = 0; restart < opt.max_restarts && !converged; ++restart) {
      while (cols < m) {
        project_out(next, V, cols);
        double nrm = next.norm();
        if (nrm < 1e-12) {
          // Invariant subspace reached: continue with a fresh direction.
          next = random_vec();
          project_out(next, V, cols);
          nrm = next.norm();
          if (nrm < 1e-12) break;
        }
        V.col(cols) = next / nrm;
        AV.col(cols) = op(V.col(cols));
        next = AV.col(cols);
        ++cols;
      }
      MatrixXc G = V.leftCols(cols).adjoint() * AV.leftCols(cols);
      G = 0.5 * (G + G.adjoint()).eval();
      Eigen::SelfAdjointEigenSolver<MatrixXc> es(G);
      theta = es.eigenvalues()(0);
      const VectorXc y = es.eigenvectors().col(0);
      x = V.leftCols(cols) * y;
      VectorXc r = AV.leftCols(cols) * y - theta * x;
      resid = r.norm();
      converged = resid <= opt.tol * std::max(1.0, std::abs(theta));
      if (converged || cols < m) {
        if (!converged && cols < m) {
          // Whole complement spanned: Ritz pairs are exact up to rounding.
          converged = true;
        }
        break;
      }
      const Eigen::Index k = std::min(keep, cols);
      MatrixXc Y = es.eigenvectors().leftCols(k);
      MatrixXc V2 = V.leftCols(cols) * Y;
      MatrixXc AV2 = AV.leftCols(cols) * Y;
      V.leftCols(k) = V2;
      AV.leftCols(k) = AV2;
      cols = k;
      next = r;
    }
    if (!converged)
      throw ConvergenceFailure("lanczos_lowest: eigenpair did not converge (residual " +
                               std::to_string(resid) + ")");
    if (stop && stop(theta)) break;
    for (const auto& q : locked) x -= q * q.dot(x);
    x.normalize();
    locked.push_back(x);
    values.push_back(theta);
  }
  EigenPairs out;
  out.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  out.vectors.resize(dim, static_cast<Eigen::Index>(locked.size()));
  for (std::size_t i = 0; i < locked.size(); ++i) out.vectors.col(static_cast<Eigen::Index>(i)) = locked[i];
  return out;
}

inline double lanczos_lambda_min(const LinearMap& op, Eigen::Index dim, const LanczosOptions& opt = {}) {
  return lanczos_lowest(op, dim, 1, nullptr, opt).values(0);
}

inline double lanczos_lambda_max(const LinearMap& op, Eigen::Index dim, const LanczosOptions& opt = {}) {
  return -lanczos_lowest([&](const VectorXc& v) { return VectorXc(-op(v)); }, dim, 1, nullptr, opt)
              .values(0);
}

// Tridiagonal solve (Thomas); a: sub, b: diag, c: super, all of length n.
inline Eigen::VectorXd thomas_solve(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                    const Eigen::VectorXd& c, const Eigen::VectorXd& d) {
  const Eigen::Index n = b.size();
  Eigen::VectorXd cp(n), dp(n), x(n);
  cp(0) = c(0) / b(0);
  dp(0) = d(0) / b(0);
  for (Eigen::Index i = 1; i < n; ++i) {
    const double den = b(i) - a(i) * cp(i - 1);
    if (den == 0.0) throw ConvergenceFailure("thomas_solve: zero pivot");
    cp(i) = c(i) / den;
    dp(i) = (d(i) - a(i) * dp(i - 1)) / den;
  }
  x(n - 1) = dp(n - 1);
  for (Eigen::Index i = n - 2; i >= 0; --i) x(i) = dp(i) - cp(i) * x(i + 1);
  return x;
}

}  // namespace bosegp::linalg
