#pragma once

#include <bosegp/fock/operators.hpp>

#include <numeric>

namespace bosegp::fock {

struct ExcitationVector {
  BasisPtr basis;  // restricted basis, at most N excitations
  VectorXc coeffs;
  bool input_normalized = true;

  double norm() const { return coeffs.norm(); }

  // j-th component: coefficients of the j-excitation states (in basis order).
  VectorXc component(int j) const {
    std::vector<cplx> out;
    for (std::size_t k = 0; k < basis->dimension(); ++k)
      if (basis->total(k) == j) out.push_back(coeffs(static_cast<Eigen::Index>(k)));
    return Eigen::Map<VectorXc>(out.data(), static_cast<Eigen::Index>(out.size()));
  }

  std::vector<double> component_norms() const {
    std::vector<double> n2(static_cast<std::size_t>(basis->max_particles()) + 1, 0.0);
    for (std::size_t k = 0; k < basis->dimension(); ++k)
      n2[basis->total(k)] += std::norm(coeffs(static_cast<Eigen::Index>(k)));
    for (double& v : n2) v = std::sqrt(v);
    return n2;
  }
};

// U_N: the N-particle sector over M modes onto the excitation Fock space over
// the M-1 modes orthogonal to the condensate. In the occupation basis this is a
// relabelling of states; the condensate occupation is N minus the excitations.
class ExcitationMap {
 public:
  explicit ExcitationMap(BasisPtr sector, int condensate_mode = 0)
      : sector_(std::move(sector)), c_(condensate_mode) {
    require(sector_->fixed_total() && !sector_->restricted(),
            "ExcitationMap: needs an unrestricted fixed-N sector basis");
    require(c_ >= 0 && c_ < sector_->num_modes(), "ExcitationMap: invalid condensate mode");
    excitations_ = build_basis(sector_->num_modes(), sector_->max_particles(), true);
    require(excitations_->dimension() == sector_->dimension(),
            "ExcitationMap: sector and excitation space differ in size");
    perm_.resize(sector_->dimension());
    Occupation e(sector_->num_modes());
    for (std::size_t k = 0; k < sector_->dimension(); ++k) {
      const auto s = sector_->state(k);
      for (int q = 0; q < sector_->num_modes(); ++q) e[label(q)] = s[q];
      e[0] = 0;
      perm_[k] = excitations_->index(e);
    }
  }

  const BasisPtr& sector_basis() const { return sector_; }
  const BasisPtr& excitation_basis() const { return excitations_; }
  int condensate_mode() const { return c_; }
  int total_N() const { return sector_->max_particles(); }

  // Original mode q carries label(q) in the excitation basis; the condensate gets 0.
  int label(int q) const {
    if (q == c_) return 0;
    if (q == 0) return c_;
    return q;
  }

  VectorXc relabel(const VectorXc& f) const {
    require(f.size() == sector_->num_modes(), "ExcitationMap: mode vector has wrong length");
    VectorXc g(f.size());
    for (int q = 0; q < f.size(); ++q) g(label(q)) = f(q);
    return g;
  }

  ExcitationVector apply(const VectorXc& psi) const {
    require(static_cast<std::size_t>(psi.size()) == sector_->dimension(),
            "ExcitationMap: vector does not match sector basis");
    ExcitationVector out;
    out.basis = excitations_;
    out.coeffs = VectorXc::Zero(psi.size());
    for (std::size_t k = 0; k < perm_.size(); ++k)
      out.coeffs(static_cast<Eigen::Index>(perm_[k])) = psi(static_cast<Eigen::Index>(k));
    out.input_normalized = std::abs(psi.norm() - 1.0) <= 1e-10;
    return out;
  }

  VectorXc apply_inverse(const ExcitationVector& xi) const {
    require(xi.basis && *xi.basis == *excitations_, "ExcitationMap: foreign excitation vector");
    VectorXc psi(xi.coeffs.size());
    for (std::size_t k = 0; k < perm_.size(); ++k)
      psi(static_cast<Eigen::Index>(k)) = xi.coeffs(static_cast<Eigen::Index>(perm_[k]));
    return psi;
  }

  // U A U* as an operator on the excitation basis.
  SparseOperator conjugate(const SparseOperator& a) const {
    require(a.basis() == *sector_, "ExcitationMap: operator is not on the sector basis");
    const auto d = static_cast<Eigen::Index>(perm_.size());
    Triplets t;
    const SparseXc& m = a.matrix();
    for (int k = 0; k < m.outerSize(); ++k)
      for (SparseXc::InnerIterator it(m, k); it; ++it)
        t.emplace_back(static_cast<Eigen::Index>(perm_[it.row()]),
                       static_cast<Eigen::Index>(perm_[it.col()]), it.value());
    SparseXc out(d, d);
    out.setFromTriplets(t.begin(), t.end());
    return {excitations_, std::move(out), a.hermitian_hint()};
  }

 private:
  BasisPtr sector_;
  BasisPtr excitations_;
  int c_;
  std::vector<std::size_t> perm_;
};

inline double log_factorial(int n) { return std::lgamma(n + 1.0); }

// Symmetric first-quantized tensor psi(i_1..i_N), flattened with i_1 fastest,
// to occupation coefficients c_m = sqrt(N!/prod m!) psi(any ordering).
inline VectorXc occupation_from_tensor(const BasisPtr& sector, const VectorXc& tensor,
                                       double symmetry_tol = 1e-12) {
  require(sector->fixed_total(), "occupation_from_tensor: needs a fixed-N sector basis");
  const int M = sector->num_modes();
  const int N = sector->max_particles();
  std::size_t size = 1;
  for (int i = 0; i < N; ++i) size *= static_cast<std::size_t>(M);
  require(static_cast<std::size_t>(tensor.size()) == size, "occupation_from_tensor: wrong size");
  const double scale = std::max(1.0, tensor.cwiseAbs().maxCoeff());
  VectorXc out = VectorXc::Zero(static_cast<Eigen::Index>(sector->dimension()));
  std::vector<bool> seen(sector->dimension(), false);
  Occupation occ(M);
  for (std::size_t flat = 0; flat < size; ++flat) {
    std::fill(occ.begin(), occ.end(), 0);
    std::size_t r = flat;
    for (int i = 0; i < N; ++i) {
      ++occ[r % M];
      r /= M;
    }
    const std::size_t k = sector->index(occ);
    const cplx v = tensor(static_cast<Eigen::Index>(flat));
    double lw = log_factorial(N);
    for (int m : occ) lw -= log_factorial(m);
    const cplx c = v * std::exp(0.5 * lw);
    if (!seen[k]) {
      seen[k] = true;
      out(static_cast<Eigen::Index>(k)) = c;
    } else if (std::abs(c - out(static_cast<Eigen::Index>(k))) > symmetry_tol * scale * std::exp(0.5 * lw)) {
      throw InvalidArgument("occupation_from_tensor: input tensor is not symmetric");
    }
  }
  return out;
}

}  // namespace bosegp::fock
