#include <bosegp/meanfield.hpp>

#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "test_util.hpp"

using namespace bosegp;
using namespace bosegp::meanfield;

namespace {

VHat constant_vhat(double c) {
  return [c](const Momentum&) { return c; };
}

VHat zero_mode_vhat(double c) {
  return [c](const Momentum& k) { return norm2(k) == 0 ? c : 0.0; };
}

TorusModel ring(int N, VHat v) { return TorusModel::cubic(1, 1, std::move(v), N); }

// First-quantized oracle: H on (C^M)^{(x)N} in the plane-wave basis, then
// compressed onto normalised symmetrised tensors |m>.
Eigen::VectorXd first_quantized_spectrum(const TorusModel& model) {
  const int M = model.num_modes(), N = model.num_particles;
  std::size_t D = 1;
  for (int i = 0; i < N; ++i) D *= M;
  auto digits = [&](std::size_t flat) {
    std::vector<int> d(N);
    for (int i = 0; i < N; ++i) {
      d[i] = static_cast<int>(flat % M);
      flat /= M;
    }
    return d;
  };
  auto flatten = [&](const std::vector<int>& d) {
    std::size_t f = 0;
    for (int i = N - 1; i >= 0; --i) f = f * M + d[i];
    return f;
  };
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(D, D);
  for (std::size_t col = 0; col < D; ++col) {
    auto d = digits(col);
    for (int i = 0; i < N; ++i) H(col, col) += model.kinetic(d[i]);
    for (int i = 0; i < N; ++i)
      for (int j = i + 1; j < N; ++j)
        for (int pi = 0; pi < M; ++pi) {
          Momentum r = add(model.modes[pi], model.modes[d[i]], -1);
          auto pj = model.find(add(model.modes[d[j]], r, -1));
          if (!pj) continue;
          auto e = d;
          e[i] = pi;
          e[j] = *pj;
          H(flatten(e), col) += model.v(r) / N;
        }
  }
  // Orthonormal symmetric states, one per occupation class.
  std::map<std::vector<int>, std::vector<std::size_t>> classes;
  for (std::size_t f = 0; f < D; ++f) {
    std::vector<int> occ(M, 0);
    for (int x : digits(f)) ++occ[x];
    classes[occ].push_back(f);
  }
  Eigen::MatrixXd S(D, classes.size());
  S.setZero();
  int c = 0;
  for (auto& [occ, members] : classes) {
    for (auto f : members) S(f, c) = 1.0 / std::sqrt(double(members.size()));
    ++c;
  }
  Eigen::MatrixXd Hs = S.transpose() * H * S;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs);
  return es.eigenvalues();
}

}  // namespace

TEST(TorusModel, ModeSetAndValidation) {
  auto m = ring(3, constant_vhat(1));
  ASSERT_EQ(m.num_modes(), 3);
  EXPECT_EQ(m.modes[0], Momentum{0});
  EXPECT_EQ(TorusModel::cubic(2, 1, constant_vhat(1), 2).num_modes(), 9);
  TorusModel bad = m;
  bad.modes = {{0}, {1}};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  TorusModel neg = m;
  neg.v_hat = [](const Momentum& k) { return k[0] == 1 ? -1.0 : 1.0; };
  EXPECT_THROW(neg.validate(), InvalidArgument);
}

TEST(Hamiltonian, FreeGasCondensate) {
  auto model = ring(5, constant_vhat(0));
  auto run = prepare(model, 1.0);
  EXPECT_NEAR(run.window.ground_energy, 0.0, 1e-12);
  ASSERT_EQ(run.window.dimension(), 1u);
  const auto k = run.basis->index(fock::Occupation{5, 0, 0});
  EXPECT_NEAR(std::abs(run.window.vectors(k, 0)), 1.0, 1e-12);
  EXPECT_EQ(exp_moment(run.window, 0.7, run.counting), 1.0);
  EXPECT_NEAR(verify_coercivity(model, run.H), 0.0, 1e-12);
}

TEST(Hamiltonian, ZeroModeInteractionExactEnergy) {
  for (int N : {2, 4, 7}) {
    auto model = ring(N, zero_mode_vhat(1));
    auto run = prepare(model, 1.0);
    EXPECT_NEAR(run.window.ground_energy, (N - 1) / 2.0, 1e-12);
    const auto k = run.basis->index(fock::Occupation{N, 0, 0});
    EXPECT_NEAR(std::abs(run.window.vectors(k, 0)), 1.0, 1e-12);
    EXPECT_NEAR(verify_coercivity(model, run.H), 0.5, 1e-10);
  }
}

TEST(Hamiltonian, MatchesFirstQuantizedOracle) {
  for (int N : {2, 3}) {
    auto model = ring(N, constant_vhat(1));
    auto basis = fock::build_sector(3, N);
    auto H = assemble_mf_hamiltonian(model, basis);
    auto ev = linalg::dense_hermitian_eigen(H.dense()).values;
    auto oracle = first_quantized_spectrum(model);
    ASSERT_EQ(ev.size(), oracle.size());
    EXPECT_LT((ev - oracle).cwiseAbs().maxCoeff(), 1e-10);
  }
  // A 2D mode set with a non-constant potential.
  auto model = TorusModel::cubic(2, 1, [](const Momentum& k) { return 1.0 / (1 + norm2(k)); }, 2);
  auto H = assemble_mf_hamiltonian(model, fock::build_sector(9, 2));
  auto ev = linalg::dense_hermitian_eigen(H.dense()).values;
  EXPECT_LT((ev - first_quantized_spectrum(model)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Hamiltonian, ConservationLaws) {
  auto model = TorusModel::cubic(1, 2, [](const Momentum& k) { return std::exp(-0.3 * norm2(k)); }, 4);
  auto basis = fock::build_basis(model.num_modes(), 4, false);
  auto H = assemble_mf_hamiltonian(model, basis);
  EXPECT_LT(H.hermitian_defect(), 1e-14);
  auto P = total_momentum(model, basis, 0);
  EXPECT_LT(fock::max_entry(fock::commutator(H, P)), 1e-12);
  std::vector<int> all(model.num_modes());
  std::iota(all.begin(), all.end(), 0);
  auto Ntot = fock::number_operator(basis, all);
  EXPECT_LT(fock::max_entry(fock::commutator(H, Ntot)), 1e-12);
}

TEST(SpectralWindow, CountsAndInvariants) {
  auto model = ring(4, constant_vhat(1));
  auto run = prepare(model, 1.0);
  auto dense = linalg::dense_hermitian_eigen(run.H.dense()).values;
  int count = 0;
  for (Eigen::Index i = 0; i < dense.size(); ++i) count += dense(i) <= dense(0) + 1.0;
  EXPECT_EQ(run.window.dimension(), static_cast<std::size_t>(count));
  const auto& W = run.window.vectors;
  EXPECT_LT((W.adjoint() * W - MatrixXc::Identity(W.cols(), W.cols())).norm(), 1e-10);
  for (Eigen::Index j = 0; j < W.cols(); ++j)
    EXPECT_LE(W.col(j).dot(run.H.apply(W.col(j))).real(), run.window.ground_energy + 1.0 + 1e-8);
  // A wider window on a larger sector, through both eigensolvers.
  auto big = TorusModel::cubic(1, 2, constant_vhat(1), 6);
  auto basis = fock::build_sector(5, 6);
  auto H = assemble_mf_hamiltonian(big, basis);
  SpectralOptions lz;
  lz.dense_max = 0;
  auto w1 = spectral_window(H, 60.0);
  auto w2 = spectral_window(H, 60.0, lz);
  ASSERT_EQ(w1.dimension(), w2.dimension());
  ASSERT_GT(w1.dimension(), 1u);
  EXPECT_LT((w1.energies - w2.energies).cwiseAbs().maxCoeff(), 1e-8);
  auto cnt = fock::number_operator(basis);
  EXPECT_NEAR(exp_moment(w1, 0.2, cnt), exp_moment(w2, 0.2, cnt), 1e-8);
}

TEST(SpectralWindow, StableUnderSmallZetaPerturbation) {
  auto run = prepare(ring(6, constant_vhat(1)), 1.0);
  for (double dz : {-1e-8, 1e-8}) {
    auto w = spectral_window(run.H, 1.0 + dz);
    EXPECT_EQ(w.dimension(), run.window.dimension());
  }
}

TEST(ExpMoment, MatchesDenseOracle) {
  auto run = prepare(ring(6, constant_vhat(1)), 1.0);
  MatrixXc Nd = run.counting.dense();
  MatrixXc E = (0.2 * Nd).exp();
  MatrixXc comp = run.window.vectors.adjoint() * E * run.window.vectors;
  const double oracle = linalg::lambda_max_dense(comp);
  EXPECT_NEAR(exp_moment(run.window, 0.2, run.counting), oracle, 1e-8);
  EXPECT_EQ(exp_moment(run.window, 0.0, run.counting), 1.0);
  double prev = 1.0;
  for (double k : {0.05, 0.1, 0.2, 0.4}) {
    const double m = exp_moment(run.window, k, run.counting);
    EXPECT_GE(m, prev);
    prev = m;
  }
}

TEST(ExpMoment, ReportAndMarkovTail) {
  auto run = prepare(ring(8, constant_vhat(1)), 1.0);
  auto rep = moment_report(run.window, run.counting, {0.0, 0.1, 0.2});
  EXPECT_EQ(rep.sup_moments[0], 1.0);
  for (double m : rep.sup_moments) EXPECT_GE(m, 1.0);
  EXPECT_EQ(rep.tail[0], 1.0);
  for (std::size_t n = 1; n < rep.tail.size(); ++n) EXPECT_LE(rep.tail[n], rep.tail[n - 1]);
  EXPECT_GT(rep.fitted_rate, 0.0);
  for (Eigen::Index j = 0; j < run.window.vectors.cols(); ++j) {
    auto tc = markov_tail_check(run.window.vectors.col(j), run.counting, rep.kappa_grid);
    EXPECT_TRUE(tc.holds);
    EXPECT_GE(tc.min_margin, 0.0);
  }
}

TEST(ExpMoment, StableUnderModeSetEnlargement) {
  auto small = prepare(TorusModel::cubic(1, 1, constant_vhat(1), 4), 1.0);
  auto large = prepare(TorusModel::cubic(1, 2, constant_vhat(1), 4), 1.0);
  const double a = exp_moment(small.window, 0.2, small.counting);
  const double b = exp_moment(large.window, 0.2, large.counting);
  EXPECT_LT(std::abs(a - b) / a, 0.01);
}

TEST(Commutator, ClosedFormMatchesDirect) {
  auto model = ring(4, constant_vhat(1));
  auto basis = fock::build_sector(3, 4);
  auto H = assemble_mf_hamiltonian(model, basis);
  EXPECT_LT(commutator_identity_check(model, H, 0.3), 1e-10);
  EXPECT_LT(commutator_identity_check(model, H, 1e-9), 1e-12);
  auto wide = TorusModel::cubic(1, 2, [](const Momentum& k) { return 1.0 / (1 + norm2(k)); }, 5);
  auto b2 = fock::build_sector(5, 5);
  EXPECT_LT(commutator_identity_check(wide, assemble_mf_hamiltonian(wide, b2), 0.25), 1e-10);
  auto plane = TorusModel::cubic(2, 1, constant_vhat(0.5), 3);
  auto b3 = fock::build_sector(9, 3);
  EXPECT_LT(commutator_identity_check(plane, assemble_mf_hamiltonian(plane, b3), 0.3), 1e-10);
}

TEST(Commutator, SandwichBoundHasOneConstant) {
  auto model = ring(6, constant_vhat(1));
  auto basis = fock::build_sector(3, 6);
  auto H = assemble_mf_hamiltonian(model, basis);
  std::mt19937_64 rng(99);
  const double c1 = commutator_sandwich_constant(H, 0.2, 100, rng);
  const double c2 = commutator_sandwich_constant(H, 0.2, 100, rng);
  EXPECT_TRUE(std::isfinite(c1));
  EXPECT_GT(c1, 0.0);
  EXPECT_LT(std::max(c1, c2) / std::min(c1, c2), 2.0);
}

TEST(Bootstrap, InteractingCaseHolds) {
  auto model = ring(6, constant_vhat(1));
  auto run = prepare(model, 1.0);
  std::vector<double> grid{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  auto tab = bootstrap_verification(model, run.H, run.window, grid);
  EXPECT_TRUE(tab.holds);
  EXPECT_LT(tab.max_integral_error, 1e-6);
  EXPECT_LE(tab.C_fitted, tab.C + 1e-12);
  EXPECT_GT(tab.C_commutator, 0.0);
  ASSERT_EQ(tab.rows.size(), grid.size());
  // kappa = 0: the bound reads <N+> <= C + zeta^{1/2}.
  EXPECT_NEAR(tab.rows[0].moment, 1.0, 0.0);
  for (const auto& r : tab.rows) {
    EXPECT_GE(r.margin, 0.0);
    EXPECT_GE(r.rhs_fitted, r.lhs);
  }
  // The proof constant stays informative at small kappa.
  EXPECT_FALSE(tab.rows[1].vacuous);
}

TEST(Bootstrap, FreeGasHasMaximalSlack) {
  auto model = ring(4, constant_vhat(0));
  auto run = prepare(model, 1.0);
  auto tab = bootstrap_verification(model, run.H, run.window, {0.1, 0.2});
  for (const auto& r : tab.rows) {
    EXPECT_NEAR(r.lhs, 0.0, 1e-14);
    EXPECT_NEAR(r.margin, r.rhs, 1e-14);
  }
}
