#pragma once

#include <bosegp/bogoliubov.hpp>
#include <bosegp/cli/config.hpp>
#include <bosegp/cli/report.hpp>
#include <bosegp/gp.hpp>
#include <bosegp/kernel.hpp>
#include <bosegp/meanfield.hpp>
#include <bosegp/scattering.hpp>

#include <atomic>
#include <exception>
#include <optional>
#include <random>
#include <thread>

namespace bosegp::cli {

namespace fs = std::filesystem;

// Applies fn to 0..n-1 on `threads` workers; results come back in index order
// and the first failure (by index) is rethrown after all workers finish.
template <class F>
auto ordered_map(std::size_t n, int threads, F fn) {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> out(n);
  std::vector<std::exception_ptr> err(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i].emplace(fn(i));
      } catch (...) {
        err[i] = std::current_exception();
      }
    }
  };
  const int t = static_cast<int>(std::clamp<std::size_t>(std::size_t(std::max(threads, 1)), 1, std::max<std::size_t>(n, 1)));
  std::vector<std::thread> pool;
  for (int k = 1; k < t; ++k) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (auto& e : err)
    if (e) std::rethrow_exception(e);
  std::vector<R> r;
  r.reserve(n);
  for (auto& o : out) r.push_back(std::move(*o));
  return r;
}

struct RunOptions {
  std::optional<fs::path> out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  fs::path base_dir = ".";  // relative source paths resolve against this
};

struct RunResult {
  int exit_code = 0;  // 0 all enabled checks passed, 1 a check failed, 2 invalid config or runtime error
  std::vector<Check> checks;
  std::vector<Diagnostic> diagnostics;
  std::string error;
  fs::path out;
};

namespace detail {

struct Context {
  json tol, checks, limits;
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path dir;       // this stage's output directory
  fs::path root;      // the run's output directory
  fs::path base_dir;  // config location
  bool pipeline = false;

  double t(const std::string& key) const { return tol.at(key).get<double>(); }
  CheckList checklist(const std::string& stage) const { return CheckList{stage, checks, {}}; }
};

struct StageOutput {
  json results = json::object();
  std::vector<Check> checks;
};

inline const std::map<std::string, std::string>& stage_dirs() {
  static const std::map<std::string, std::string> d{
      {"scattering", "01-scattering"}, {"gp", "02-gp"}, {"kernel", "03-kernel"}, {"bogoliubov", "04-bogoliubov"}};
  return d;
}

inline fs::path resolve_source(const Context& ctx, const std::string& p) {
  fs::path q(p);
  return q.is_absolute() ? q : ctx.base_dir / q;
}

inline json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidArgument("missing artifact " + p.string());
  return json::parse(in);
}

inline double max_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end()); }
inline double min_of(const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); }

// ---------------------------------------------------------------- meanfield

inline meanfield::VHat make_vhat(const json& v) {
  if (v["type"] == "constant") {
    const double c = v["value"].get<double>();
    return [c](const meanfield::Momentum&) { return c; };
  }
  const double A = v["amplitude"].get<double>(), w = v["width"].get<double>();
  return [A, w](const meanfield::Momentum& k) {
    const double p = 2 * std::numbers::pi * w;
    return A * std::exp(-0.5 * p * p * meanfield::norm2(k));
  };
}

struct ZetaBlock {
  double zeta = 0;
  std::size_t window_dim = 0;
  double ground_energy = 0;
  std::vector<double> moments, sandwich, markov_margin;
  std::vector<int> markov_holds;
  meanfield::BootstrapTable bootstrap;
};

struct MeanfieldPoint {
  int N = 0;
  std::uint64_t dimension = 0;
  double coercivity = 0;
  std::vector<double> commutator_error;
  std::vector<ZetaBlock> blocks;
};

inline StageOutput run_meanfield(const json& s, const Context& ctx) {
  const auto Ns = ints(s["N"]);
  const auto kappas = doubles(s["kappa"]), zetas = doubles(s["zeta"]), ckappas = doubles(s["commutator_kappa"]);
  const int samples = s["sandwich_samples"].get<int>();
  const auto cap = ctx.limits["max_basis_dimension"].get<std::size_t>();
  auto points = ordered_map(Ns.size(), ctx.threads, [&](std::size_t i) {
    MeanfieldPoint pt;
    pt.N = Ns[i];
    auto model = meanfield::TorusModel::cubic(s["dimension"].get<int>(), s["cutoff"].get<int>(), make_vhat(s["vhat"]), Ns[i]);
    for (std::size_t z = 0; z < zetas.size(); ++z) {
      auto run = meanfield::prepare(model, zetas[z], cap);
      if (z == 0) {
        pt.dimension = run.basis->dimension();
        pt.coercivity = meanfield::verify_coercivity(model, run.H);
        for (double k : ckappas) pt.commutator_error.push_back(meanfield::commutator_identity_check(model, run.H, k));
      }
      ZetaBlock b;
      b.zeta = zetas[z];
      b.window_dim = run.window.dimension();
      b.ground_energy = run.window.ground_energy;
      std::seed_seq seq{std::uint32_t(ctx.seed), std::uint32_t(ctx.seed >> 32), std::uint32_t(Ns[i]), std::uint32_t(z)};
      std::mt19937_64 rng(seq);
      for (double k : kappas) {
        b.moments.push_back(meanfield::exp_moment(run.window, k, run.counting));
        b.sandwich.push_back(k > 0 ? meanfield::commutator_sandwich_constant(run.H, k, samples, rng) : 0.0);
        bool holds = true;
        double margin = INFINITY;
        for (Eigen::Index c = 0; c < run.window.vectors.cols(); ++c) {
          auto tc = meanfield::markov_tail_check(run.window.vectors.col(c), run.counting, {k});
          holds = holds && tc.holds;
          margin = std::min(margin, tc.min_margin);
        }
        b.markov_holds.push_back(holds);
        b.markov_margin.push_back(margin);
      }
      b.bootstrap = meanfield::bootstrap_verification(model, run.H, run.window, kappas);
      pt.blocks.push_back(std::move(b));
    }
    return pt;
  });

  Table moments{{"N", "zeta", "kappa", "window_dimension", "ground_energy", "sup_moment", "sandwich_constant",
                 "markov_holds", "markov_min_margin"}, {}};
  Table coerc{{"N", "basis_dimension", "coercivity_constant"}, {}};
  Table comm{{"N", "kappa", "max_entry_error"}, {}};
  Table boot{{"N", "zeta", "kappa", "lhs", "moment", "rhs", "rhs_fitted", "vacuous", "C", "C_fitted"}, {}};
  for (const auto& p : points) {
    coerc.add({(long long)p.N, (long long)p.dimension, p.coercivity});
    for (std::size_t k = 0; k < ckappas.size(); ++k) comm.add({(long long)p.N, ckappas[k], p.commutator_error[k]});
    for (const auto& b : p.blocks) {
      for (std::size_t k = 0; k < kappas.size(); ++k)
        moments.add({(long long)p.N, b.zeta, kappas[k], (long long)b.window_dim, b.ground_energy, b.moments[k],
                     b.sandwich[k], (long long)b.markov_holds[k], b.markov_margin[k]});
      for (const auto& r : b.bootstrap.rows)
        boot.add({(long long)p.N, b.zeta, r.kappa, r.lhs, r.moment, r.rhs, r.rhs_fitted, (long long)r.vacuous,
                  b.bootstrap.C, b.bootstrap.C_fitted});
    }
  }
  write_table(ctx.dir / "moments.csv", moments);
  write_table(ctx.dir / "coercivity.csv", coerc);
  write_table(ctx.dir / "commutator.csv", comm);
  write_table(ctx.dir / "bootstrap.csv", boot);

  auto cl = ctx.checklist("meanfield");
  std::vector<double> all;
  for (const auto& p : points)
    for (const auto& b : p.blocks) all.insert(all.end(), b.moments.begin(), b.moments.end());
  cl.add("moment_lower_bound", min_of(all), ">=", 1.0 - ctx.t("moment_floor"), "min sup-window moment");
  if (Ns.size() >= 2) {
    double worst_var = 0, worst_growth = 0;
    for (std::size_t z = 0; z < zetas.size(); ++z)
      for (std::size_t k = 0; k < kappas.size(); ++k) {
        std::vector<std::pair<int, double>> series;
        for (const auto& p : points) series.push_back({p.N, p.blocks[z].moments[k]});
        std::sort(series.begin(), series.end());
        double lo = INFINITY, hi = 0;
        for (auto& [n, m] : series) lo = std::min(lo, m), hi = std::max(hi, m);
        worst_var = std::max(worst_var, hi / lo - 1);
        worst_growth = std::max(worst_growth, hi / series.front().second);
      }
    cl.add("moment_uniformity", worst_var, "<", ctx.t("moment_variation"), "max/min - 1 across N");
    cl.add("moment_growth", worst_growth, "<=", ctx.t("moment_growth"), "max over N relative to the smallest N");
    std::vector<double> cs;
    for (const auto& p : points) cs.push_back(p.coercivity);
    const double lo = min_of(cs), hi = max_of(cs);
    const double ratio = lo > 0 ? hi / lo : (hi == 0 ? 1.0 : INFINITY);
    cl.add("coercivity_uniform", ratio, "<", ctx.t("coercivity_ratio"), "max/min fitted constant across N");
  }
  std::vector<double> errs;
  for (const auto& p : points) errs.insert(errs.end(), p.commutator_error.begin(), p.commutator_error.end());
  cl.add("commutator_identity", max_of(errs), "<=", ctx.t("commutator_identity"), "max entry, direct vs closed form");
  double margin = INFINITY;
  long long failures = 0;
  for (const auto& p : points)
    for (const auto& b : p.blocks)
      for (std::size_t k = 0; k < kappas.size(); ++k) {
        margin = std::min(margin, b.markov_margin[k]);
        failures += !b.markov_holds[k];
      }
  cl.add("markov_tail", double(failures), "==", 0.0, "violations over all window vectors; min margin " + format_double(margin));
  long long boot_fail = 0;
  for (const auto& p : points)
    for (const auto& b : p.blocks) boot_fail += !b.bootstrap.holds;
  cl.add("bootstrap", double(boot_fail), "==", 0.0, "sweep points where the bootstrap inequality fails");

  StageOutput o;
  o.results["moments"] = moments.to_json();
  o.results["coercivity"] = coerc.to_json();
  o.results["commutator"] = comm.to_json();
  o.results["bootstrap"] = boot.to_json();
  o.checks = cl.items;
  return o;
}

// --------------------------------------------------------------- scattering

inline scattering::RadialPotential make_potential(const json& p) {
  const auto t = p["type"].get<std::string>();
  if (t == "soft_sphere") return scattering::RadialPotential::soft_sphere(p["height"].get<double>(), p["radius"].get<double>());
  if (t == "piecewise_constant")
    return scattering::RadialPotential::piecewise_constant(doubles(p["breaks"]), doubles(p["values"]));
  return scattering::RadialPotential::zero();
}

inline json neumann_to_json(const scattering::NeumannSolution& s) {
  return json{{"N", s.N},          {"ell", s.ell}, {"radius", s.radius}, {"lambda", s.lambda},
              {"boundary_residual", s.boundary_residual}, {"ode_residual", s.ode_residual},
              {"r", s.r},          {"f", s.f},     {"df", s.df}};
}

inline scattering::NeumannSolution neumann_from_json(const json& j) {
  scattering::NeumannSolution s;
  s.N = j["N"].get<int>();
  s.ell = j["ell"].get<double>();
  s.radius = j["radius"].get<double>();
  s.lambda = j["lambda"].get<double>();
  s.boundary_residual = j["boundary_residual"].get<double>();
  s.ode_residual = j["ode_residual"].get<double>();
  s.r = j["r"].get<std::vector<double>>();
  s.f = j["f"].get<std::vector<double>>();
  s.df = j["df"].get<std::vector<double>>();
  return s;
}

struct NeumannPoint {
  scattering::NeumannSolution sol;
  bool bounds_ok = false;
  scattering::WBounds bounds;
  std::string bounds_error;
};

inline StageOutput run_scattering(const json& s, const Context& ctx) {
  const auto V = make_potential(s["potential"]);
  const auto zero = scattering::solve_zero_energy(V, s["R_max"].get<double>(), s["step"].get<double>(),
                                                  s["mesh_tol"].get<double>());
  const double a = zero.scattering_length, ai = zero.scattering_length_integral;
  const double rel = a != 0 ? std::abs(a - ai) / std::abs(a) : std::abs(ai);
  std::optional<double> analytic;
  if (s["potential"]["type"] == "soft_sphere") {
    const double k = std::sqrt(0.5 * s["potential"]["height"].get<double>()), R = s["potential"]["radius"].get<double>();
    analytic = k > 0 ? R - std::tanh(k * R) / k : 0.0;
  }
  Table sc{{"potential", "scattering_length", "scattering_length_integral", "extraction_relative_difference",
            "analytic", "analytic_relative_error", "discretization_error", "ode_residual"}, {}};
  const double an = analytic.value_or(NAN);
  const double an_err = analytic ? (an != 0 ? std::abs(a / an - 1) : std::abs(a)) : NAN;
  sc.add({s["potential"]["type"].get<std::string>(), a, ai, rel, an, an_err, zero.discretization_error, zero.ode_residual});
  write_table(ctx.dir / "scattering.csv", sc);
  write_json_file(ctx.dir / "zero_energy.json",
                  json{{"scattering_length", a},
                       {"scattering_length_integral", ai},
                       {"slope", zero.slope},
                       {"discretization_error", zero.discretization_error},
                       {"ode_residual", zero.ode_residual},
                       {"R_max", zero.R_max},
                       {"step", zero.step}});

  const auto Ns = ints(s["N"]);
  const auto ells = doubles(s["ell"]);
  const double nstep = s["neumann_step"].get<double>();
  auto pts = ordered_map(Ns.size() * ells.size(), ctx.threads, [&](std::size_t i) {
    NeumannPoint p;
    p.sol = scattering::solve_neumann(V, Ns[i / ells.size()], ells[i % ells.size()], nstep);
    try {
      p.bounds = scattering::w_ell_bounds_check(p.sol);
      p.bounds_ok = true;
    } catch (const ConvergenceFailure& e) {
      p.bounds_error = e.what();
    }
    return p;
  });
  Table nt{{"N", "ell", "radius", "lambda", "boundary_residual", "ode_residual", "C_decay", "C_gradient", "C_fourier",
            "bounds_finite"}, {}};
  json index = json::array();
  fs::create_directories(ctx.dir / "neumann");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    nt.add({(long long)p.sol.N, p.sol.ell, p.sol.radius, p.sol.lambda, p.sol.boundary_residual, p.sol.ode_residual,
            p.bounds.C_decay, p.bounds.C_gradient, p.bounds.C_fourier, (long long)p.bounds_ok});
    const std::string file = "neumann/N" + std::to_string(p.sol.N) + "_ell" + std::to_string(i % ells.size()) + ".json";
    write_json_file(ctx.dir / file, neumann_to_json(p.sol));
    index.push_back(json{{"N", p.sol.N}, {"ell", p.sol.ell}, {"file", file}});
  }
  write_table(ctx.dir / "neumann.csv", nt);
  write_json_file(ctx.dir / "neumann_index.json", index);

  std::vector<int> uniq(Ns);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  auto couplings = ordered_map(uniq.size(), ctx.threads, [&](std::size_t i) {
    return scattering::gp_coupling(V, zero, uniq[i], ctx.t("gp_coupling"));
  });
  Table ct{{"N", "a", "a_scaled", "a_over_N", "relative_difference"}, {}};
  std::vector<double> cdiff;
  for (std::size_t i = 0; i < uniq.size(); ++i) {
    const auto& c = couplings[i];
    ct.add({(long long)uniq[i], c.a, c.a_scaled, c.a_over_N, c.relative_difference});
    cdiff.push_back(c.relative_difference);
  }
  write_table(ctx.dir / "coupling.csv", ct);

  auto cl = ctx.checklist("scattering");
  cl.add("extraction_agreement", rel, "<=", ctx.t("scattering_relative"), "exterior fit vs integral of V f");
  if (analytic) cl.add("analytic_soft_sphere", an_err, "<=", ctx.t("scattering_relative"), "R - tanh(kR)/k with k = sqrt(V/2)");
  std::vector<double> br;
  long long bad = 0;
  std::string why;
  for (const auto& p : pts) {
    br.push_back(p.sol.boundary_residual);
    if (!p.bounds_ok) {
      ++bad;
      if (why.empty()) why = p.bounds_error;
    }
  }
  cl.add("neumann_boundary", max_of(br), "<=", ctx.t("neumann_boundary"), "max |u'(R)R - u(R)|/|u(R)|");
  cl.add("w_bounds_finite", double(bad), "==", 0.0, why.empty() ? "sweep points with a non-finite w bound" : why);
  cl.add("gp_coupling", max_of(cdiff), "<=", ctx.t("gp_coupling"), "scattering length of N^2 V(N.) against a/N");

  StageOutput o;
  o.results["scattering"] = sc.to_json();
  o.results["neumann"] = nt.to_json();
  o.results["coupling"] = ct.to_json();
  o.checks = cl.items;
  return o;
}

// ----------------------------------------------------------------------- gp

inline gp::Grid make_grid(const json& g) {
  const auto kind = g["kind"].get<std::string>();
  const int n = g["n"].get<int>();
  const double L = g["extent"].get<double>();
  if (kind == "radial") return gp::Grid::radial(n, L);
  return gp::Grid::interval(n, L, kind == "periodic");
}

inline gp::Trap make_trap(const json& t) {
  const auto type = t["type"].get<std::string>();
  if (type == "harmonic") return gp::Trap::harmonic(t.value("strength", 1.0));
  if (type == "quartic") return gp::Trap::quartic(t.value("strength", 1.0));
  if (type == "soft_box") return gp::Trap::soft_box(t.value("width", 1.0));
  return gp::Trap::none();
}

inline json gp_state_to_json(const json& grid, const gp::GPState& s) {
  return json{{"grid", grid},           {"a", s.a},
              {"energy", s.energy},     {"eps_eigen", s.eps_eigen},
              {"eps_identity", s.eps_identity}, {"residual", s.residual},
              {"phi", s.phi}};
}

inline gp::GPState gp_state_from_json(const json& j) {
  gp::GPState s;
  s.grid = make_grid(j["grid"]);
  s.a = j["a"].get<double>();
  s.energy = j["energy"].get<double>();
  s.eps_eigen = j["eps_eigen"].get<double>();
  s.eps_identity = j["eps_identity"].get<double>();
  s.residual = j["residual"].get<double>();
  s.phi = j["phi"].get<std::vector<double>>();
  require(s.phi.size() == s.grid.x.size(), "GP state: phi does not match its grid");
  return s;
}

inline StageOutput run_gp(const json& s, const Context& ctx) {
  const auto g = make_grid(s["grid"]);
  const auto vext = make_trap(s["trap"]).sample(g);
  std::vector<double> as;
  if (s["a"].is_string())
    as.push_back(read_json(ctx.root / stage_dirs().at("scattering") / "zero_energy.json")["scattering_length"].get<double>());
  else
    as = doubles(s["a"]);
  const double tol = s["tol"].get<double>();
  auto states = ordered_map(as.size(), ctx.threads, [&](std::size_t i) { return gp::minimize_gp(g, vext, as[i], tol); });
  Table t{{"a", "energy", "eps_eigen", "eps_identity", "eps_difference", "residual", "iterations", "l2_norm", "min_phi"}, {}};
  std::vector<double> res, diff, mins;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto& st = states[i];
    const double mn = min_of(st.phi);
    const double d = std::abs(st.eps_eigen - st.eps_identity);
    t.add({st.a, st.energy, st.eps_eigen, st.eps_identity, d, st.residual, (long long)st.iterations,
           std::sqrt(g.norm2(st.phi)), mn});
    res.push_back(st.residual);
    diff.push_back(d);
    mins.push_back(mn);
    write_json_file(ctx.dir / ("gp_state_" + std::to_string(i) + ".json"), gp_state_to_json(s["grid"], st));
  }
  write_table(ctx.dir / "gp.csv", t);
  auto cl = ctx.checklist("gp");
  cl.add("gp_residual", max_of(res), "<=", ctx.t("gp_residual"), "||L phi - eps phi||");
  cl.add("gp_eps_agreement", max_of(diff), "<=", ctx.t("gp_eps_agreement"), "eigenvalue vs E + 4 pi a ||phi||_4^4");
  cl.add("gp_positive", min_of(mins), ">", 0.0, "min of the minimiser");
  StageOutput o;
  o.results["gp"] = t.to_json();
  o.checks = cl.items;
  return o;
}

// ------------------------------------------------------------------- kernel

struct KernelPoint {
  kernel::KernelMetrics m;
  std::optional<kernel::ModeExport> modes;
};

inline StageOutput run_kernel(const json& s, const Context& ctx) {
  const int n = s["mesh"].get<int>();
  const auto Ns = ints(s["N"]);
  const auto ells = doubles(s["ell"]);
  const double alpha = s["alpha"].get<double>();
  const auto& prof = s["profile"];
  std::vector<double> phi;
  if (prof["type"] == "gaussian") {
    phi = kernel::gaussian_profile(n, prof["sigma"].get<double>());
  } else {
    const fs::path src = prof.contains("source") ? resolve_source(ctx, prof["source"].get<std::string>())
                                                 : ctx.root / stage_dirs().at("gp") / "gp_state_0.json";
    phi = kernel::profile_from_gp(gp_state_from_json(read_json(src)), n, prof["box_length"].get<double>());
  }
  std::map<std::pair<int, double>, fs::path> artifacts;
  if (ctx.pipeline) {
    const fs::path sdir = ctx.root / stage_dirs().at("scattering");
    for (const auto& e : read_json(sdir / "neumann_index.json"))
      artifacts[{e["N"].get<int>(), e["ell"].get<double>()}] = sdir / e["file"].get<std::string>();
  }
  const auto& ex = s["export"];
  const int max_modes = ex["max_modes"].get<int>();
  auto pts = ordered_map(Ns.size() * ells.size(), ctx.threads, [&](std::size_t i) {
    const int N = Ns[i / ells.size()];
    const double ell = ells[i % ells.size()];
    scattering::NeumannSolution w;
    if (ctx.pipeline) {
      auto it = artifacts.find({N, ell});
      if (it == artifacts.end()) throw InvalidArgument("missing Neumann artifact for N = " + std::to_string(N));
      w = neumann_from_json(read_json(it->second));
    } else {
      w = scattering::solve_neumann(make_potential(s["potential"]), N, ell, s["neumann_step"].get<double>());
    }
    auto K = kernel::build_kernel(w, phi, n, {alpha, true});
    KernelPoint p;
    p.m = kernel::kernel_metrics(K, s["stride"].get<int>());
    if (max_modes > 0 && N == ex["N"].get<int>() && ell == ex["ell"].get<double>())
      p.modes = kernel::export_modes(K, max_modes, ex["target"].get<double>());
    return p;
  });
  Table t{{"N", "ell", "alpha", "hs_norm", "grad_norm", "pointwise_constant", "slice_constant", "max_orthogonality",
           "max_asymmetry"}, {}};
  std::vector<kernel::KernelMetrics> rows;
  for (const auto& p : pts) {
    const auto& m = p.m;
    t.add({(long long)m.N, m.ell, m.alpha, m.hs_norm, m.grad_norm, m.pointwise_constant, m.slice_constant,
           m.max_orthogonality, m.max_asymmetry});
    rows.push_back(m);
  }
  write_table(ctx.dir / "kernel.csv", t);
  const auto b = kernel::verify_kernel_bounds(rows, ctx.t("kernel_spread"));

  StageOutput o;
  o.results["kernel"] = t.to_json();
  json fits = json::object();
  json es = json::array(), gs = json::array(), sp = json::array();
  for (const auto& [N, v] : b.ell_slope) es.push_back(json{{"N", N}, {"slope", v}});
  for (const auto& [ell, v] : b.grad_slope)
    gs.push_back(json{{"ell", ell}, {"slope", v}, {"local_slopes", b.grad_local_slopes.count(ell) ? json(b.grad_local_slopes.at(ell)) : json::array()}});
  for (const auto& [ell, v] : b.pointwise_spread) sp.push_back(json{{"ell", ell}, {"spread", v}});
  fits["ell_slope"] = es;
  fits["grad_slope"] = gs;
  fits["pointwise_spread"] = sp;
  o.results["fits"] = fits;

  auto cl = ctx.checklist("kernel");
  if (!b.ell_slope.empty()) {
    double lo = INFINITY;
    for (const auto& [N, v] : b.ell_slope) lo = std::min(lo, v);
    cl.add("kernel_ell_slope", lo, ">=", alpha / 2 - ctx.t("kernel_ell_margin"), "min over N of d log||eta|| / d log ell");
  }
  if (!b.grad_slope.empty()) {
    double hi = -INFINITY;
    for (const auto& [ell, v] : b.grad_slope) hi = std::max(hi, v);
    cl.add("kernel_grad_slope", hi, "<=", ctx.t("kernel_grad_slope"), "max over ell of d log||grad eta|| / d log N");
  }
  double spread = 0;
  bool any = false;
  for (const auto& e : s["spread_ell"]) {
    auto it = b.pointwise_spread.find(e.get<double>());
    if (it == b.pointwise_spread.end()) continue;
    spread = std::max(spread, it->second);
    any = true;
  }
  if (any && Ns.size() >= 2)
    cl.add("kernel_spread", spread, "<=", ctx.t("kernel_spread"), "max |eta|/(N|phi||phi|) relative spread across N");
  cl.add("kernel_finite", b.finite ? 0.0 : 1.0, "==", 0.0, "non-finite kernel norms");

  for (const auto& p : pts) {
    if (!p.modes) continue;
    const auto& m = *p.modes;
    json eta = json::array(), ks = json::array();
    for (Eigen::Index r = 0; r < m.eta.rows(); ++r) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.eta.cols(); ++c) row.push_back(m.eta(r, c));
      eta.push_back(row);
    }
    for (const auto& k : m.k) ks.push_back(json{k[0], k[1], k[2]});
    json art{{"N", p.m.N}, {"ell", p.m.ell}, {"modes", m.eta.rows()}, {"captured_fraction", m.captured_fraction},
             {"discarded_fraction", m.discarded_fraction}, {"target_met", m.target_met}, {"k", ks},
             {"parity", m.parity}, {"eta", eta}};
    write_json_file(ctx.dir / "eta_modes.json", art);
    o.results["export"] = json{{"N", p.m.N}, {"ell", p.m.ell}, {"modes", m.eta.rows()},
                               {"captured_fraction", m.captured_fraction}, {"target_met", m.target_met}};
  }
  o.checks = cl.items;
  return o;
}

// --------------------------------------------------------------- bogoliubov

struct EtaInput {
  MatrixXc eta;
  double scale = 1.0;  // applied to the exported kernel block
  std::string source;
};

inline EtaInput make_eta(const json& e, const Context& ctx) {
  EtaInput in;
  const auto t = e["type"].get<std::string>();
  if (t == "pair") {
    in.eta = bogoliubov::pair_kernel(e["norm"].get<double>());
    in.source = "pair";
  } else if (t == "matrix") {
    const auto m = static_cast<Eigen::Index>(e["real"].size());
    in.eta = MatrixXc::Zero(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) {
        const double im = e.contains("imag") ? e["imag"][i][j].get<double>() : 0.0;
        in.eta(i, j) = cplx(e["real"][i][j].get<double>(), im);
      }
    in.source = "matrix";
  } else {
    const fs::path src = e.contains("source") ? resolve_source(ctx, e["source"].get<std::string>())
                                              : ctx.root / stage_dirs().at("kernel") / "eta_modes.json";
    const auto j = read_json(src);
    const int want = e["modes"].get<int>();
    const int have = j["modes"].get<int>();
    if (have < want)
      throw InvalidArgument("bogoliubov.eta: mode file holds " + std::to_string(have) + " modes, " +
                            std::to_string(want) + " requested");
    in.eta = MatrixXc::Zero(want, want);
    for (int i = 0; i < want; ++i)
      for (int k = 0; k < want; ++k) in.eta(i, k) = j["eta"][i][k].get<double>();
    if (e.contains("norm")) {
      const double nr = in.eta.norm();
      require(nr > 0, "bogoliubov.eta: exported block vanishes, cannot rescale");
      in.scale = e["norm"].get<double>() / nr;
      in.eta *= in.scale;
    }
    in.source = "kernel";
  }
  return in;
}

inline StageOutput run_bogoliubov(const json& s, const Context& ctx) {
  const auto in = make_eta(s["eta"], ctx);
  const int m = static_cast<int>(in.eta.rows()), M = m + 1;
  VectorXc f = VectorXc::Zero(m);
  if (s["f"].empty()) f(0) = 1.0;
  else
    for (int i = 0; i < m; ++i) f(i) = s["f"][i].get<double>();
  const auto Ns = ints(s["N"]);
  const int cap = s["cap"].get<int>(), order = s["order"].get<int>();
  bogoliubov::ActionOptions aopt;
  aopt.test_excitations = s["test_excitations"].get<int>();
  aopt.series_tol = s["series_tol"].get<double>();
  auto rem = ordered_map(Ns.size(), ctx.threads, [&](std::size_t i) {
    auto g = bogoliubov::build_generator(in.eta, fock::build_basis(M, std::min(Ns[i], cap), true,
                                                                   ctx.limits["max_basis_dimension"].get<std::size_t>()),
                                         Ns[i]);
    return bogoliubov::approximate_action_check(g, f, order, aopt);
  });
  Table rt{{"N", "cap", "remainder_norm", "tail_bound"}, {}};
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    rt.add({(long long)Ns[i], (long long)std::min(Ns[i], cap), rem[i].norm, rem[i].tail_bound});
    xs.push_back(Ns[i]);
    ys.push_back(rem[i].norm);
  }
  write_table(ctx.dir / "remainder.csv", rt);

  const auto& gj = s["gronwall"];
  const auto gk = doubles(gj["kappa"]);
  const int gN = gj["N"].get<int>(), gcap = gj["cap"].get<int>();
  auto gron = ordered_map(gk.size(), ctx.threads, [&](std::size_t i) {
    auto g = bogoliubov::build_generator(in.eta, fock::build_basis(M, gcap, true), gN);
    return bogoliubov::gronwall_cap_stability(g, gk[i]);
  });
  Table gt{{"kappa", "N", "cap", "C", "C_doubled_cap", "relative_change", "psd_margin", "psd_margin_doubled"}, {}};
  std::vector<double> Cs, changes;
  for (std::size_t i = 0; i < gk.size(); ++i) {
    const auto& r = gron[i];
    gt.add({gk[i], (long long)gN, (long long)gcap, r.base.C, r.doubled.C, r.relative_change, r.base.psd_margin,
            r.doubled.psd_margin});
    Cs.push_back(std::max(r.base.C, r.doubled.C));
    changes.push_back(r.relative_change);
  }
  write_table(ctx.dir / "gronwall.csv", gt);

  StageOutput o;
  o.results["eta"] = json{{"source", in.source}, {"modes", m}, {"hs_norm", in.eta.norm()}, {"scale", in.scale}};
  o.results["remainder"] = rt.to_json();
  o.results["gronwall"] = gt.to_json();
  auto cl = ctx.checklist("bogoliubov");
  const double expected = s["expected_exponent"].get<double>();
  if (xs.size() >= 2) {
    if (min_of(ys) > 0) {
      const double slope = loglog_slope(xs, ys);
      o.results["remainder_exponent"] = slope;
      cl.add("remainder_exponent", std::abs(slope - expected), "<=", ctx.t("remainder_exponent_band"),
             "fitted N exponent " + format_double(slope) + ", expected " + format_double(expected));
    } else {
      cl.add("remainder_exponent", max_of(ys), "==", 0.0, "remainder vanishes identically");
    }
  }
  cl.add("gronwall_bound", max_of(Cs), "<=", ctx.t("gronwall_bound"), "fitted C, both caps");
  cl.add("gronwall_cap_stability", max_of(changes), "<=", ctx.t("gronwall_cap_change"), "|C(2 cap)/C(cap) - 1|");
  o.checks = cl.items;
  return o;
}

inline StageOutput run_section(const std::string& section, const json& s, const Context& ctx) {
  if (section == "meanfield") return run_meanfield(s, ctx);
  if (section == "scattering") return run_scattering(s, ctx);
  if (section == "gp") return run_gp(s, ctx);
  if (section == "kernel") return run_kernel(s, ctx);
  return run_bogoliubov(s, ctx);
}

inline void write_stage(const fs::path& dir, const std::string& title, const json& head, const StageOutput& so,
                        const std::string& error) {
  json rep = head;
  rep["results"] = so.results;
  json cs = json::array();
  for (const auto& c : so.checks) cs.push_back(c.to_json());
  rep["checks"] = cs;
  if (!error.empty()) rep["error"] = error;
  bool ok = error.empty();
  for (const auto& c : so.checks) ok = ok && (!c.enabled || c.passed);
  rep["status"] = ok ? "PASS" : "FAIL";
  write_json_file(dir / "report.json", rep);
  write_text(dir / "summary.txt", summary_text(title, so.checks, error));
}

}  // namespace detail

// Runs one experiment. Never throws for bad configs or numerical failures;
// those come back as diagnostics or `error` with exit code 2.
inline RunResult run(const json& cfg, const RunOptions& opt = {}) {
  RunResult res;
  auto v = validate(cfg);
  if (!v.ok()) {
    res.diagnostics = v.errors;
    res.exit_code = 2;
    return res;
  }
  json rc = v.resolved;
  if (opt.seed) rc["seed"] = *opt.seed;
  detail::Context ctx;
  ctx.tol = rc["tolerances"];
  ctx.checks = rc["checks"];
  ctx.limits = rc["limits"];
  ctx.seed = rc["seed"].get<std::uint64_t>();
  ctx.threads = opt.threads;
  ctx.base_dir = opt.base_dir;
  ctx.root = opt.out ? *opt.out : fs::path(rc["output"].get<std::string>());
  ctx.pipeline = rc["kind"] == "full-pipeline";
  res.out = ctx.root;
  const std::string kind = rc["kind"].get<std::string>();

  json head{{"schema_version", kSchemaVersion}, {"kind", kind}, {"seed", ctx.seed}};
  json top = head;
  top["config"] = rc;
  json stage_results = json::object();
  try {
    fs::create_directories(ctx.root);
    std::vector<std::string> stages = ctx.pipeline ? rc["stages"].get<std::vector<std::string>>()
                                                   : std::vector<std::string>{section_of(kind)};
    // pipeline stages run in pipeline order whatever order the config lists them in
    if (ctx.pipeline) {
      std::vector<std::string> ordered;
      for (const auto& s : pipeline_stages())
        if (std::find(stages.begin(), stages.end(), s) != stages.end()) ordered.push_back(s);
      stages = ordered;
    }
    for (const auto& s : stages) {
      ctx.dir = ctx.pipeline ? ctx.root / detail::stage_dirs().at(s) : ctx.root;
      fs::create_directories(ctx.dir);
      detail::StageOutput so;
      std::string err;
      try {
        so = detail::run_section(s, rc[s], ctx);
      } catch (const std::exception& e) {
        err = e.what();
      }
      if (ctx.pipeline) {
        json sh = head;
        sh["stage"] = s;
        sh["config"] = rc[s];
        detail::write_stage(ctx.dir, "stage " + s, sh, so, err);
      }
      stage_results[s] = so.results;
      res.checks.insert(res.checks.end(), so.checks.begin(), so.checks.end());
      if (!err.empty()) {
        res.error = s + ": " + err;
        break;
      }
    }
  } catch (const std::exception& e) {
    res.error = e.what();
  }

  bool ok = res.error.empty();
  for (const auto& c : res.checks) ok = ok && (!c.enabled || c.passed);
  res.exit_code = !res.error.empty() ? 2 : ok ? 0 : 1;
  try {
    top["results"] = stage_results;
    json cs = json::array();
    for (const auto& c : res.checks) cs.push_back(c.to_json());
    top["checks"] = cs;
    if (!res.error.empty()) top["error"] = res.error;
    top["status"] = ok ? "PASS" : "FAIL";
    write_json_file(ctx.root / "report.json", top);
    write_text(ctx.root / "summary.txt", summary_text("bosegp " + kind, res.checks, res.error));
  } catch (const std::exception& e) {
    if (res.error.empty()) res.error = e.what();
    res.exit_code = 2;
  }
  return res;
}

}  // namespace bosegp::cli
