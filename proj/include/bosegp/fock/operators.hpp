#pragma once

#include <bosegp/fock/basis.hpp>

#include <functional>
#include <optional>

namespace bosegp::fock {

class SparseOperator {
 public:
  SparseOperator() = default;

  SparseOperator(BasisPtr basis, SparseXc m, bool hermitian_hint = false)
      : basis_(std::move(basis)), m_(std::move(m)), hermitian_(hermitian_hint) {
    require(basis_ != nullptr, "SparseOperator: null basis");
    const auto d = static_cast<Eigen::Index>(basis_->dimension());
    require(m_.rows() == d && m_.cols() == d, "SparseOperator: matrix does not match basis");
    m_.makeCompressed();
    if (hermitian_) {
      const double scale = std::max(1.0, max_abs());
      if (hermitian_defect() > 1e-12 * scale)
        throw InvalidArgument("SparseOperator: hermitian_hint set on a non-Hermitian matrix");
      // Remove rounding asymmetry so downstream eigensolvers see an exact Hermitian matrix.
      SparseXc adj = m_.adjoint();
      m_ = (m_ + adj) * 0.5;
      m_.prune(cplx(0.0));
      m_.makeCompressed();
    }
  }

  const FockBasis& basis() const { return *basis_; }
  const BasisPtr& basis_ptr() const { return basis_; }
  const SparseXc& matrix() const { return m_; }
  std::size_t dimension() const { return basis_->dimension(); }
  bool hermitian_hint() const { return hermitian_; }

  VectorXc apply(const VectorXc& v) const { return m_ * v; }
  MatrixXc dense() const { return MatrixXc(m_); }

  SparseOperator adjoint() const {
    SparseXc a = m_.adjoint();
    return {basis_, std::move(a), hermitian_};
  }

  double max_abs() const {
    double r = 0;
    for (int k = 0; k < m_.outerSize(); ++k)
      for (SparseXc::InnerIterator it(m_, k); it; ++it) r = std::max(r, std::abs(it.value()));
    return r;
  }

  double hermitian_defect() const {
    SparseXc d = m_ - SparseXc(m_.adjoint());
    double r = 0;
    for (int k = 0; k < d.outerSize(); ++k)
      for (SparseXc::InnerIterator it(d, k); it; ++it) r = std::max(r, std::abs(it.value()));
    return r;
  }

  bool is_diagonal() const {
    for (int k = 0; k < m_.outerSize(); ++k)
      for (SparseXc::InnerIterator it(m_, k); it; ++it)
        if (it.row() != it.col() && it.value() != cplx(0.0)) return false;
    return true;
  }

  VectorXc diagonal() const { return m_.diagonal(); }

  SparseOperator operator+(const SparseOperator& o) const {
    same_basis(o);
    return {basis_, m_ + o.m_, hermitian_ && o.hermitian_};
  }
  SparseOperator operator-(const SparseOperator& o) const {
    same_basis(o);
    return {basis_, m_ - o.m_, hermitian_ && o.hermitian_};
  }
  SparseOperator operator*(const SparseOperator& o) const {
    same_basis(o);
    SparseXc p = m_ * o.m_;
    return {basis_, std::move(p), false};
  }
  SparseOperator operator*(cplx s) const {
    return {basis_, m_ * s, hermitian_ && s.imag() == 0.0};
  }
  friend SparseOperator operator*(cplx s, const SparseOperator& a) { return a * s; }

 private:
  void same_basis(const SparseOperator& o) const {
    if (!(basis_ == o.basis_ || *basis_ == *o.basis_))
      throw InvalidArgument("SparseOperator: operands live on different bases");
  }

  BasisPtr basis_;
  SparseXc m_;
  bool hermitian_ = false;
};

inline SparseOperator commutator(const SparseOperator& a, const SparseOperator& b) {
  return a * b - b * a;
}

inline double max_entry(const SparseXc& m) {
  double r = 0;
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseXc::InnerIterator it(m, k); it; ++it) r = std::max(r, std::abs(it.value()));
  return r;
}

inline double max_entry(const SparseOperator& a) { return max_entry(a.matrix()); }

inline double max_entry(const MatrixXc& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

// Amplitude of a*_{c1}...a*_{ck} a_{d1}...a_{dl} acting on occ (annihilators act
// right to left); occ is overwritten by the image. Returns 0 if a mode runs empty.
inline double apply_monomial(Occupation& occ, std::span<const int> creators,
                             std::span<const int> annihilators) {
  double amp = 1.0;
  for (auto it = annihilators.rbegin(); it != annihilators.rend(); ++it) {
    int& m = occ[*it];
    if (m == 0) return 0.0;
    amp *= std::sqrt(static_cast<double>(m));
    --m;
  }
  for (auto it = creators.rbegin(); it != creators.rend(); ++it) {
    int& m = occ[*it];
    ++m;
    amp *= std::sqrt(static_cast<double>(m));
  }
  return amp;
}

using Triplets = std::vector<Eigen::Triplet<cplx>>;

inline SparseOperator from_triplets(const BasisPtr& basis, const Triplets& t, bool hermitian) {
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  m.setFromTriplets(t.begin(), t.end());
  return {basis, std::move(m), hermitian};
}

// Normal-ordered monomial evaluated directly on basis states. Terms whose image
// leaves the basis are dropped; because annihilators act first, intermediate
// states never exceed the cap, so this equals the product of truncated ladders
// whenever both endpoints are admitted.
inline SparseOperator monomial(const BasisPtr& basis, const std::vector<int>& creators,
                               const std::vector<int>& annihilators, cplx coef = 1.0) {
  for (int p : creators) basis->check_mode(p);
  for (int p : annihilators) basis->check_mode(p);
  Triplets t;
  Occupation occ(basis->num_modes());
  for (std::size_t k = 0; k < basis->dimension(); ++k) {
    const auto s = basis->state(k);
    std::copy(s.begin(), s.end(), occ.begin());
    const double amp = apply_monomial(occ, creators, annihilators);
    if (amp == 0.0) continue;
    if (auto j = basis->find(occ)) t.emplace_back(static_cast<Eigen::Index>(*j),
                                                  static_cast<Eigen::Index>(k), coef * amp);
  }
  return from_triplets(basis, t, false);
}

inline SparseOperator creation(const BasisPtr& basis, int mode) {
  return monomial(basis, {mode}, {});
}

inline SparseOperator annihilation(const BasisPtr& basis, int mode) {
  return monomial(basis, {}, {mode});
}

inline SparseOperator identity(const BasisPtr& basis) {
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  m.setIdentity();
  return {basis, std::move(m), true};
}

// Diagonal operator g(occupation vector).
inline SparseOperator diagonal_operator(const BasisPtr& basis,
                                        const std::function<cplx(std::span<const int>)>& g,
                                        bool hermitian = true) {
  Triplets t;
  for (std::size_t k = 0; k < basis->dimension(); ++k) {
    const cplx v = g(basis->state(k));
    if (v != cplx(0.0)) t.emplace_back(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k), v);
  }
  return from_triplets(basis, t, hermitian);
}

inline std::vector<int> non_condensate_modes(const FockBasis& basis) {
  std::vector<int> out;
  for (int p = 1; p < basis.num_modes(); ++p) out.push_back(p);
  return out;
}

inline double count_modes(std::span<const int> occ, const std::vector<int>& modes) {
  double n = 0;
  for (int p : modes) n += occ[p];
  return n;
}

// Number of particles in `modes`; default: every non-condensate mode.
inline SparseOperator number_operator(const BasisPtr& basis,
                                      std::optional<std::vector<int>> modes = std::nullopt) {
  const std::vector<int> ms = modes ? *modes : non_condensate_modes(*basis);
  for (int p : ms)
    if (p < 0 || p >= basis->num_modes()) throw InvalidArgument("number_operator: invalid mode");
  return diagonal_operator(basis, [&](std::span<const int> s) { return cplx(count_modes(s, ms)); });
}

// f(number) as a diagonal operator, e.g. exp(kappa * N).
inline SparseOperator number_function(const BasisPtr& basis, const std::function<double(double)>& f,
                                      std::optional<std::vector<int>> modes = std::nullopt) {
  const std::vector<int> ms = modes ? *modes : non_condensate_modes(*basis);
  return diagonal_operator(basis,
                           [&](std::span<const int> s) { return cplx(f(count_modes(s, ms))); });
}

// a*(f) = sum_p f_p a*_p and a(f) = sum_p conj(f_p) a_p; f is indexed by mode.
inline SparseOperator creation(const BasisPtr& basis, const VectorXc& f) {
  require(f.size() == basis->num_modes(), "creation: mode vector has wrong length");
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  for (int p = 0; p < basis->num_modes(); ++p) {
    if (f(p) == cplx(0.0)) continue;
    m += creation(basis, p).matrix() * f(p);
  }
  return {basis, std::move(m)};
}

inline SparseOperator annihilation(const BasisPtr& basis, const VectorXc& f) {
  return creation(basis, f).adjoint();
}

// a*(f) a(g) from normal-ordered monomials; unlike the product of single
// ladders this survives on fixed-N sector bases.
inline SparseOperator creation_annihilation(const BasisPtr& basis, const VectorXc& f,
                                            const VectorXc& g) {
  const int M = basis->num_modes();
  require(f.size() == M && g.size() == M, "creation_annihilation: mode vector has wrong length");
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  for (int p = 0; p < M; ++p)
    for (int q = 0; q < M; ++q) {
      const cplx c = f(p) * std::conj(g(q));
      if (c == cplx(0.0)) continue;
      m += monomial(basis, {p}, {q}).matrix() * c;
    }
  return {basis, std::move(m)};
}

// b_p = sqrt((N - Ncal)/N) a_p with Ncal the particle count after annihilation.
inline SparseOperator modified_annihilation(const BasisPtr& basis, int mode, int total_N) {
  basis->check_mode(mode);
  require(total_N >= 1 && total_N >= basis->max_particles(),
          "modified_annihilation: total_N must be >= max_particles");
  Triplets t;
  Occupation occ(basis->num_modes());
  for (std::size_t k = 0; k < basis->dimension(); ++k) {
    const auto s = basis->state(k);
    if (s[mode] == 0) continue;
    std::copy(s.begin(), s.end(), occ.begin());
    const double amp = std::sqrt(static_cast<double>(occ[mode]));
    --occ[mode];
    const double after = basis->total(k) - 1;
    const double w = std::sqrt((total_N - after) / static_cast<double>(total_N));
    if (auto j = basis->find(occ))
      t.emplace_back(static_cast<Eigen::Index>(*j), static_cast<Eigen::Index>(k), amp * w);
  }
  return from_triplets(basis, t, false);
}

inline SparseOperator modified_creation(const BasisPtr& basis, int mode, int total_N) {
  return modified_annihilation(basis, mode, total_N).adjoint();
}

// b(f) = sum_p conj(f_p) b_p.
inline SparseOperator modified_annihilation(const BasisPtr& basis, const VectorXc& f, int total_N) {
  require(f.size() == basis->num_modes(), "modified_annihilation: mode vector has wrong length");
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  for (int p = 0; p < basis->num_modes(); ++p) {
    if (f(p) == cplx(0.0)) continue;
    if (basis->restricted() && p == 0)
      throw InvalidArgument("modified_annihilation: f must vanish on the condensate mode");
    m += modified_annihilation(basis, p, total_N).matrix() * std::conj(f(p));
  }
  return {basis, std::move(m)};
}

inline SparseOperator modified_creation(const BasisPtr& basis, const VectorXc& f, int total_N) {
  return modified_annihilation(basis, f, total_N).adjoint();
}

enum class Ladder { annihilate, create };

// B_{l,r}(j) = sum_{x,y} j'(x,y) b^{l}_y b^{r}_x, with j' = conj(j) when the left
// factor annihilates. j is indexed by mode (rows x, columns y).
inline SparseOperator pair_operator(const BasisPtr& basis, const MatrixXc& j, Ladder left,
                                    Ladder right, int total_N) {
  const int M = basis->num_modes();
  require(j.rows() == M && j.cols() == M, "pair_operator: kernel has wrong shape");
  const auto modes = basis->active_modes();
  std::vector<SparseXc> bl(M), br(M);
  for (int p : modes) {
    SparseXc b = modified_annihilation(basis, p, total_N).matrix();
    bl[p] = left == Ladder::annihilate ? b : SparseXc(b.adjoint());
    br[p] = right == Ladder::annihilate ? b : SparseXc(b.adjoint());
  }
  const auto d = static_cast<Eigen::Index>(basis->dimension());
  SparseXc m(d, d);
  for (int x : modes)
    for (int y : modes) {
      const cplx c = left == Ladder::annihilate ? std::conj(j(x, y)) : j(x, y);
      if (c == cplx(0.0)) continue;
      m += SparseXc(bl[y] * br[x]) * c;
    }
  return {basis, std::move(m)};
}

}  // namespace bosegp::fock
