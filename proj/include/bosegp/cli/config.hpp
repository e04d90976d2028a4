#pragma once

#include <bosegp/common.hpp>
#include <bosegp/fock.hpp>
#include <bosegp/kernel.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace bosegp::cli {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& kinds() {
  static const std::vector<std::string> k{"meanfield-moments", "scattering",        "gp",
                                          "kernel-bounds",     "bogoliubov-checks", "full-pipeline"};
  return k;
}

// Section names in pipeline order; each non-pipeline kind runs exactly one.
inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"scattering", "gp", "kernel", "bogoliubov"};
  return s;
}

inline std::string section_of(const std::string& kind) {
  if (kind == "meanfield-moments") return "meanfield";
  if (kind == "kernel-bounds") return "kernel";
  if (kind == "bogoliubov-checks") return "bogoliubov";
  return kind;
}

// Module defaults. A user value replaces a default wholesale when the default
// is a tagged object (it has "type" or "kind"); other objects are merged.
inline json default_tolerances() {
  return json{{"moment_floor", 1e-12},       {"moment_variation", 0.25},  {"moment_growth", 2.0},
              {"coercivity_ratio", 2.0},     {"commutator_identity", 1e-10},
              {"scattering_relative", 1e-6}, {"neumann_boundary", 1e-8},  {"gp_coupling", 1e-4},
              {"gp_residual", 1e-6},         {"gp_eps_agreement", 1e-5},
              {"kernel_ell_margin", 0.1},    {"kernel_grad_slope", 0.6},  {"kernel_spread", 0.15},
              {"remainder_exponent_band", 0.2}, {"gronwall_bound", 2.0},  {"gronwall_cap_change", 0.25}};
}

inline json default_limits() { return json{{"max_basis_dimension", 1000000}, {"max_dense_dimension", 3000}}; }

inline json soft_sphere_json(double height = 2.0, double radius = 1.0) {
  return json{{"type", "soft_sphere"}, {"height", height}, {"radius", radius}};
}

inline json default_section(const std::string& section, bool pipeline) {
  if (section == "meanfield")
    return json{{"dimension", 1},
                {"cutoff", 1},
                {"vhat", json{{"type", "constant"}, {"value", 1.0}}},
                {"N", {4, 6, 8, 10, 12}},
                {"kappa", {0.2}},
                {"zeta", {1.0}},
                {"commutator_kappa", {0.3}},
                {"sandwich_samples", 100}};
  if (section == "scattering")
    return json{{"potential", soft_sphere_json()}, {"R_max", 10.0}, {"step", 1e-3}, {"mesh_tol", 1e-8},
                {"N", {50}},  {"ell", {0.5}},       {"neumann_step", 1e-3}};
  if (section == "gp")
    return json{{"grid", json{{"kind", "radial"}, {"n", 1500}, {"extent", 6.0}}},
                {"trap", json{{"type", "harmonic"}, {"strength", 1.0}}},
                {"a", pipeline ? json("from_scattering") : json::array({0.5})},
                {"tol", 1e-8}};
  if (section == "kernel") {
    json k{{"mesh", 64},
           {"profile", pipeline ? json{{"type", "gp"}, {"box_length", 8.0}} : json{{"type", "gaussian"}, {"sigma", 0.1}}},
           {"N", {20, 40, 80}},
           {"ell", {0.5, 0.25, 0.125}},
           {"alpha", 1.0},
           {"stride", 16},
           {"spread_ell", {0.5}},
           {"export", json{{"max_modes", pipeline ? 2 : 0}, {"N", 20}, {"ell", 0.5}, {"target", 0.01}}}};
    if (!pipeline) {
      k["potential"] = soft_sphere_json();
      k["neumann_step"] = 2e-3;
    }
    return k;
  }
  if (section == "bogoliubov")
    return json{{"eta", pipeline ? json{{"type", "kernel"}, {"modes", 2}, {"norm", 0.1}}
                                 : json{{"type", "pair"}, {"norm", 0.1}}},
                {"f", json::array()},
                {"N", {10, 20, 40, 80}},
                {"cap", 24},
                {"order", 12},
                {"test_excitations", 2},
                {"series_tol", 1e-10},
                {"expected_exponent", -1.0},
                {"gronwall", json{{"N", 20}, {"cap", 10}, {"kappa", {0.2}}}}};
  return json::object();
}

// Check names per section; the "checks" object may switch any of them off.
inline const std::map<std::string, std::vector<std::string>>& check_names() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"meanfield",
       {"moment_lower_bound", "moment_uniformity", "moment_growth", "coercivity_uniform", "commutator_identity", "markov_tail",
        "bootstrap"}},
      {"scattering", {"extraction_agreement", "analytic_soft_sphere", "neumann_boundary", "w_bounds_finite", "gp_coupling"}},
      {"gp", {"gp_residual", "gp_eps_agreement", "gp_positive"}},
      {"kernel", {"kernel_ell_slope", "kernel_grad_slope", "kernel_spread", "kernel_finite"}},
      {"bogoliubov", {"remainder_exponent", "gronwall_bound", "gronwall_cap_stability"}}};
  return m;
}

inline std::vector<std::string> sections_for(const std::string& kind) {
  if (kind == "full-pipeline") return pipeline_stages();
  return {section_of(kind)};
}

struct Diagnostic {
  std::string path;
  std::string message;
  std::string str() const { return path.empty() ? message : path + ": " + message; }
};

struct Validation {
  std::vector<Diagnostic> errors;
  std::vector<std::string> notes;  // feasibility figures that passed
  json resolved;                   // config with defaults filled in
  bool ok() const { return errors.empty(); }
};

namespace detail {

inline bool tagged(const json& j) { return j.is_object() && (j.contains("type") || j.contains("kind")); }

inline json merge(const json& def, const json& user) {
  if (!def.is_object() || !user.is_object() || tagged(def)) return user;
  json out = def;
  for (auto it = user.begin(); it != user.end(); ++it)
    out[it.key()] = def.contains(it.key()) ? merge(def[it.key()], it.value()) : it.value();
  return out;
}

inline std::string index_path(const std::string& p, std::size_t i) { return p + "[" + std::to_string(i) + "]"; }

class Checker {
 public:
  std::vector<Diagnostic>& errs;

  void error(const std::string& path, const std::string& msg) { errs.push_back({path, msg}); }

  bool number(const json& j, const std::string& path, double lo = -INFINITY, bool lo_open = false,
              double hi = INFINITY) {
    if (!j.is_number()) return error(path, "must be a number"), false;
    const double v = j.get<double>();
    if (!std::isfinite(v)) return error(path, "must be finite"), false;
    if (v < lo || (lo_open && v == lo)) {
      std::ostringstream os;
      os << "must be " << (lo_open ? "> " : ">= ") << lo;
      return error(path, os.str()), false;
    }
    if (v > hi) {
      std::ostringstream os;
      os << "must be <= " << hi;
      return error(path, os.str()), false;
    }
    return true;
  }

  bool integer(const json& j, const std::string& path, long long lo, long long hi = 1LL << 40) {
    if (!j.is_number_integer()) return error(path, "must be an integer"), false;
    const long long v = j.get<long long>();
    if (v < lo || v > hi)
      return error(path, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]"), false;
    return true;
  }

  bool grid(const json& j, const std::string& path, double lo, bool lo_open, bool integral = false) {
    if (!j.is_array()) return error(path, "must be an array"), false;
    if (j.empty()) return error(path, "grid non-empty"), false;
    bool ok = true;
    for (std::size_t i = 0; i < j.size(); ++i)
      ok = (integral ? integer(j[i], index_path(path, i), static_cast<long long>(lo))
                     : number(j[i], index_path(path, i), lo, lo_open)) &&
           ok;
    return ok;
  }

  void keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
    if (!j.is_object()) return error(path, "must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!allowed.count(it.key())) error(path + "." + it.key(), "unknown field");
  }

  std::string tag(const json& j, const std::string& path, const std::string& key,
                  const std::vector<std::string>& allowed) {
    if (!j.is_object()) return error(path, "must be an object"), "";
    if (!j.contains(key) || !j[key].is_string()) return error(path + "." + key, "must be a string"), "";
    const auto v = j[key].get<std::string>();
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end()) {
      std::string all;
      for (const auto& a : allowed) all += (all.empty() ? "" : ", ") + a;
      error(path + "." + key, "must be one of " + all);
      return "";
    }
    return v;
  }
};

inline std::vector<double> doubles(const json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(x.get<double>());
  return v;
}

inline std::vector<int> ints(const json& j) {
  std::vector<int> v;
  for (const auto& x : j) v.push_back(x.get<int>());
  return v;
}

inline void check_potential(Checker& c, const json& p, const std::string& path) {
  const auto t = c.tag(p, path, "type", {"soft_sphere", "piecewise_constant", "zero"});
  if (t == "soft_sphere") {
    c.keys(p, path, {"type", "height", "radius"});
    if (p.contains("height")) c.number(p["height"], path + ".height", 0.0);
    else c.error(path + ".height", "required");
    if (p.contains("radius")) c.number(p["radius"], path + ".radius", 0.0, true);
    else c.error(path + ".radius", "required");
  } else if (t == "piecewise_constant") {
    c.keys(p, path, {"type", "breaks", "values"});
    if (!p.contains("breaks") || !p.contains("values")) return c.error(path, "needs breaks and values");
    if (!c.grid(p["breaks"], path + ".breaks", 0.0, false) || !c.grid(p["values"], path + ".values", 0.0, false))
      return;
    const auto b = doubles(p["breaks"]);
    if (b.front() != 0.0) c.error(path + ".breaks", "must start at 0");
    for (std::size_t i = 1; i < b.size(); ++i)
      if (!(b[i] > b[i - 1])) c.error(index_path(path + ".breaks", i), "breaks must increase");
    if (p["values"].size() + 1 != b.size()) c.error(path + ".values", "need one value per interval");
  } else if (t == "zero") {
    c.keys(p, path, {"type"});
  }
}

inline void check_meanfield(Checker& c, const json& s, const json& limits, std::vector<std::string>& notes) {
  const std::string P = "meanfield";
  const bool dim_ok = c.integer(s["dimension"], P + ".dimension", 1, 3);
  const bool cut_ok = c.integer(s["cutoff"], P + ".cutoff", 0, 8);
  const auto t = c.tag(s["vhat"], P + ".vhat", "type", {"constant", "gaussian"});
  if (t == "constant") {
    c.keys(s["vhat"], P + ".vhat", {"type", "value"});
    if (s["vhat"].contains("value")) c.number(s["vhat"]["value"], P + ".vhat.value", 0.0);
    else c.error(P + ".vhat.value", "required");
  } else if (t == "gaussian") {
    c.keys(s["vhat"], P + ".vhat", {"type", "amplitude", "width"});
    if (s["vhat"].contains("amplitude")) c.number(s["vhat"]["amplitude"], P + ".vhat.amplitude", 0.0);
    else c.error(P + ".vhat.amplitude", "required");
    if (s["vhat"].contains("width")) c.number(s["vhat"]["width"], P + ".vhat.width", 0.0, true);
    else c.error(P + ".vhat.width", "required");
  }
  const bool n_ok = c.grid(s["N"], P + ".N", 1, false, true);
  c.grid(s["kappa"], P + ".kappa", 0.0, false);
  c.grid(s["zeta"], P + ".zeta", 0.0, true);
  c.grid(s["commutator_kappa"], P + ".commutator_kappa", 0.0, false);
  c.integer(s["sandwich_samples"], P + ".sandwich_samples", 1, 100000);
  if (!(dim_ok && cut_ok && n_ok)) return;
  int M = 1;
  for (int d = 0; d < s["dimension"].get<int>(); ++d) M *= 2 * s["cutoff"].get<int>() + 1;
  const auto cap = limits["max_basis_dimension"].get<std::uint64_t>();
  const auto Ns = ints(s["N"]);
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    const auto dim = fock::FockBasis::count(M, Ns[i], false, true);
    std::ostringstream os;
    os << "basis dimension " << dim << (dim > cap ? " exceeds cap " : " within cap ") << cap << " (M=" << M
       << ", N=" << Ns[i] << ")";
    if (dim > cap) c.error(index_path(P + ".N", i), os.str());
    else notes.push_back(index_path(P + ".N", i) + ": " + os.str());
  }
}

inline void check_scattering(Checker& c, const json& s) {
  const std::string P = "scattering";
  check_potential(c, s["potential"], P + ".potential");
  c.number(s["R_max"], P + ".R_max", 0.0, true);
  c.number(s["step"], P + ".step", 0.0, true);
  c.number(s["mesh_tol"], P + ".mesh_tol", 0.0, true);
  c.grid(s["N"], P + ".N", 1, false, true);
  c.grid(s["ell"], P + ".ell", 0.0, true);
  c.number(s["neumann_step"], P + ".neumann_step", 0.0, true);
  if (s["potential"].value("type", "") == "soft_sphere" && s["R_max"].is_number() &&
      s["potential"].contains("radius") && s["potential"]["radius"].is_number() &&
s["R_max"].get<double>() <= s["potential"]["radius"].get<double>())
    c.error(P + ".R_max", "must exceed the potential's support radius");
}

inline void check_gp(Checker& c, const json& s, bool pipeline) {
  const std::string P = "gp";
  const auto& g = s["grid"];
  c.tag(g, P + ".grid", "kind", {"radial", "interval", "periodic"});
  c.keys(g, P + ".grid", {"kind", "n", "extent"});
  if (g.contains("n")) c.integer(g["n"], P + ".grid.n", 3, 1000000);
  else c.error(P + ".grid.n", "required");
  if (g.contains("extent")) c.number(g["extent"], P + ".grid.extent", 0.0, true);
  else c.error(P + ".grid.extent", "required");
  const auto t = c.tag(s["trap"], P + ".trap", "type", {"harmonic", "quartic", "soft_box", "none"});
  if (t == "harmonic" || t == "quartic") {
    c.keys(s["trap"], P + ".trap", {"type", "strength"});
    if (s["trap"].contains("strength")) c.number(s["trap"]["strength"], P + ".trap.strength", 0.0, true);
  } else if (t == "soft_box") {
    c.keys(s["trap"], P + ".trap", {"type", "width"});
    if (s["trap"].contains("width")) c.number(s["trap"]["width"], P + ".trap.width", 0.0, true);
  } else if (t == "none") {
    c.keys(s["trap"], P + ".trap", {"type"});
  }
  if (s["a"].is_string()) {
    if (!pipeline || s["a"] != "from_scattering") c.error(P + ".a", "\"from_scattering\" is only valid in full-pipeline");
  } else {
    c.grid(s["a"], P + ".a", 0.0, false);
  }
  c.number(s["tol"], P + ".tol", 0.0, true);
  if (pipeline && g.value("kind", "") != "radial")
    c.error(P + ".grid.kind", "the pipeline maps a radial GP state onto the kernel box");
}

inline void check_kernel(Checker& c, const json& s, bool pipeline, const json& scattering) {
  const std::string P = "kernel";
  const bool mesh_ok = c.integer(s["mesh"], P + ".mesh", 4, 256);
  if (mesh_ok && s["mesh"].get<int>() % 2) c.error(P + ".mesh", "must be even");
  const auto t = c.tag(s["profile"], P + ".profile", "type", {"gaussian", "gp"});
  if (t == "gaussian") {
    c.keys(s["profile"], P + ".profile", {"type", "sigma"});
    if (s["profile"].contains("sigma")) c.number(s["profile"]["sigma"], P + ".profile.sigma", 0.0, true);
    else c.error(P + ".profile.sigma", "required");
  } else if (t == "gp") {
    c.keys(s["profile"], P + ".profile", {"type", "box_length", "source"});
    if (s["profile"].contains("box_length")) c.number(s["profile"]["box_length"], P + ".profile.box_length", 0.0, true);
    else c.error(P + ".profile.box_length", "required");
    if (!pipeline && !s["profile"].contains("source"))
      c.error(P + ".profile.source", "a GP profile outside the pipeline needs a state file");
  }
  if (s.contains("potential")) {
    if (pipeline) c.error(P + ".potential", "taken from the scattering stage in full-pipeline");
    else check_potential(c, s["potential"], P + ".potential");
  }
  if (s.contains("neumann_step")) {
    if (pipeline) c.error(P + ".neumann_step", "taken from the scattering stage in full-pipeline");
    else c.number(s["neumann_step"], P + ".neumann_step", 0.0, true);
  }
  const bool n_ok = c.grid(s["N"], P + ".N", 1, false, true);
  const bool ell_ok = c.grid(s["ell"], P + ".ell", 0.0, true);
  const bool alpha_ok = c.number(s["alpha"], P + ".alpha", 0.0);
  c.integer(s["stride"], P + ".stride", 1, 256);
  if (s["spread_ell"].is_array()) {
    for (std::size_t i = 0; i < s["spread_ell"].size(); ++i) c.number(s["spread_ell"][i], index_path(P + ".spread_ell", i), 0.0, true);
  } else {
    c.error(P + ".spread_ell", "must be an array");
  }
  const auto& ex = s["export"];
  c.keys(ex, P + ".export", {"max_modes", "N", "ell", "target"});
  c.integer(ex["max_modes"], P + ".export.max_modes", 0, 64);
  c.integer(ex["N"], P + ".export.N", 1);
  c.number(ex["ell"], P + ".export.ell", 0.0, true);
  c.number(ex["target"], P + ".export.target", 0.0, true, 1.0);
  if (pipeline && ex["max_modes"].is_number_integer() && ex["max_modes"].get<int>() < 1)
    c.error(P + ".export.max_modes", "the pipeline's bogoliubov stage needs exported modes");
  if (!(mesh_ok && ell_ok && alpha_ok)) return;
  const int n = s["mesh"].get<int>();
  const double alpha = s["alpha"].get<double>();
  for (std::size_t i = 0; i < s["ell"].size(); ++i) {
    const double need = kernel::required_resolution(s["ell"][i].get<double>(), alpha);
    if (!(n / 2.0 > need)) {
      std::ostringstream os;
      os << "resolution refusal: mesh " << n << " resolves |p| < " << n / 2 << " but ell^-alpha = " << need
         << " (ell = " << s["ell"][i].get<double>() << ")";
      c.error(P + ".mesh", os.str());
    }
  }
  if (n_ok && ell_ok && ex["N"].is_number_integer() && ex["ell"].is_number() && ex["max_modes"].is_number_integer() &&
      ex["max_modes"].get<int>() > 0) {
    const auto Ns = ints(s["N"]);
    const auto ells = doubles(s["ell"]);
    if (std::find(Ns.begin(), Ns.end(), ex["N"].get<int>()) == Ns.end() ||
        std::find(ells.begin(), ells.end(), ex["ell"].get<double>()) == ells.end())
      c.error(P + ".export", "N and ell must be points of the kernel sweep");
  }
  if (pipeline && n_ok && ell_ok && scattering["N"].is_array() && scattering["ell"].is_array()) {
    const auto sN = ints(scattering["N"]);
    const auto sE = doubles(scattering["ell"]);
    for (std::size_t i = 0; i < s["N"].size(); ++i)
      if (std::find(sN.begin(), sN.end(), s["N"][i].get<int>()) == sN.end())
        c.error(index_path(P + ".N", i), "no scattering artifact for this N (add it to scattering.N)");
    for (std::size_t i = 0; i < s["ell"].size(); ++i)
      if (std::find(sE.begin(), sE.end(), s["ell"][i].get<double>()) == sE.end())
        c.error(index_path(P + ".ell", i), "no scattering artifact for this ell (add it to scattering.ell)");
  }
}

inline double hs_norm_of(const json& eta) {
  const auto t = eta.value("type", "");
  if (t == "pair" || t == "kernel") return eta.value("norm", -1.0);
  double s = 0;
  for (const char* part : {"real", "imag"})
    if (eta.contains(part))
      for (const auto& row : eta[part])
        for (const auto& x : row) s += x.get<double>() * x.get<double>();
  return std::sqrt(s);
}

inline void check_bogoliubov(Checker& c, const json& s, bool pipeline, const json& limits,
                             std::vector<std::string>& notes) {
  const std::string P = "bogoliubov";
  const auto& eta = s["eta"];
  const auto t = c.tag(eta, P + ".eta", "type", {"pair", "matrix", "kernel"});
  int modes = 0;
  bool eta_ok = true;
  if (t == "pair") {
    c.keys(eta, P + ".eta", {"type", "norm"});
    eta_ok = eta.contains("norm") && c.number(eta["norm"], P + ".eta.norm", 0.0);
    modes = 2;
  } else if (t == "matrix") {
    c.keys(eta, P + ".eta", {"type", "real", "imag"});
    if (!eta.contains("real") || !eta["real"].is_array() || eta["real"].empty()) {
      c.error(P + ".eta.real", "grid non-empty");
      eta_ok = false;
    } else {
      modes = static_cast<int>(eta["real"].size());
      for (const char* part : {"real", "imag"}) {
        if (!eta.contains(part)) continue;
        const std::string pp = P + ".eta." + part;
        if (!eta[part].is_array() || static_cast<int>(eta[part].size()) != modes) {
          c.error(pp, "must be a square matrix matching real");
          eta_ok = false;
          continue;
        }
        for (int i = 0; i < modes; ++i) {
          const auto& row = eta[part][i];
          if (!row.is_array() || static_cast<int>(row.size()) != modes) {
            c.error(index_path(pp, i), "row length must equal the number of rows");
            eta_ok = false;
            continue;
          }
          for (int j = 0; j < modes; ++j) eta_ok = c.number(row[j], index_path(index_path(pp, i), j)) && eta_ok;
        }
      }
    }
  } else if (t == "kernel") {
    c.keys(eta, P + ".eta", {"type", "modes", "norm", "source"});
    eta_ok = eta.contains("modes") && c.integer(eta["modes"], P + ".eta.modes", 1, 64);
    if (eta_ok) modes = eta["modes"].get<int>();
    if (eta.contains("norm")) eta_ok = c.number(eta["norm"], P + ".eta.norm", 0.0) && eta_ok;
    if (!pipeline && !eta.contains("source")) c.error(P + ".eta.source", "a kernel eta outside the pipeline needs a mode file");
  } else {
    eta_ok = false;
  }
  if (eta_ok && t != "kernel") {
    const double hs = hs_norm_of(eta);
    if (!(hs < 0.5)) {
      std::ostringstream os;
      os << "Hilbert-Schmidt norm " << hs << " is not below 0.5";
      c.error(P + ".eta", os.str());
    }
  }
  if (eta_ok && t == "kernel" && eta.contains("norm") && !(eta["norm"].get<double>() < 0.5))
    c.error(P + ".eta.norm", "must be below 0.5");
  if (!s["f"].is_array()) c.error(P + ".f", "must be an array");
  else {
    for (std::size_t i = 0; i < s["f"].size(); ++i) c.number(s["f"][i], index_path(P + ".f", i));
    if (!s["f"].empty() && modes > 0 && static_cast<int>(s["f"].size()) != modes)
      c.error(P + ".f", "length must equal the number of eta modes (" + std::to_string(modes) + ")");
  }
  const bool n_ok = c.grid(s["N"], P + ".N", 1, false, true);
  const bool cap_ok = c.integer(s["cap"], P + ".cap", 1, 1000);
  c.integer(s["order"], P + ".order", 0, 200);
  c.integer(s["test_excitations"], P + ".test_excitations", 0, 10);
  c.number(s["series_tol"], P + ".series_tol", 0.0, true);
  c.number(s["expected_exponent"], P + ".expected_exponent");
  const auto& g = s["gronwall"];
  c.keys(g, P + ".gronwall", {"N", "cap", "kappa"});
  const bool gN = c.integer(g["N"], P + ".gronwall.N", 1);
  const bool gcap = c.integer(g["cap"], P + ".gronwall.cap", 1, 1000);
  c.grid(g["kappa"], P + ".gronwall.kappa", 0.0, true);
  if (g["kappa"].is_array())
    for (std::size_t i = 0; i < g["kappa"].size(); ++i)
      if (g["kappa"][i].is_number() && g["kappa"][i].get<double>() > 0.5)
        c.error(index_path(P + ".gronwall.kappa", i), "must be <= 0.5");
  if (gN && gcap && g["N"].get<int>() < 2 * g["cap"].get<int>())
    c.error(P + ".gronwall.N", "must be at least twice gronwall.cap (the cap is doubled)");
  if (modes <= 0 || !n_ok || !cap_ok) return;
  const int M = modes + 1;
  const auto cap_lim = limits["max_basis_dimension"].get<std::uint64_t>();
  const auto dense_lim = limits["max_dense_dimension"].get<std::uint64_t>();
  const auto Ns = ints(s["N"]);
  const int top = std::min(*std::max_element(Ns.begin(), Ns.end()), s["cap"].get<int>());
  auto report = [&](const std::string& path, int n, std::uint64_t lim, const char* what) {
    const auto dim = fock::FockBasis::count(M, n, true, false);
    std::ostringstream os;
    os << what << " dimension " << dim << (dim > lim ? " exceeds cap " : " within cap ") << lim << " (modes=" << modes
       << ", n=" << n << ")";
    if (dim > lim) c.error(path, os.str());
    else notes.push_back(path + ": " + os.str());
  };
  report(P + ".cap", top, cap_lim, "basis");
  if (gcap) {
    report(P + ".gronwall.cap", 2 * g["cap"].get<int>(), dense_lim, "dense basis");
  }
}

}  // namespace detail

// Schema and feasibility check; never throws on bad input.
inline Validation validate(const json& cfg) {
  Validation v;
  detail::Checker c{v.errors};
  if (!cfg.is_object()) {
    c.error("", "config must be a JSON object");
    return v;
  }
  if (!cfg.contains("schema_version")) c.error("schema_version", "required");
  else if (!cfg["schema_version"].is_number_integer() || cfg["schema_version"].get<long long>() != kSchemaVersion)
    c.error("schema_version", "must be " + std::to_string(kSchemaVersion));
  std::string kind;
  if (!cfg.contains("kind") || !cfg["kind"].is_string()) {
    c.error("kind", "required string");
  } else {
    kind = cfg["kind"].get<std::string>();
    if (std::find(kinds().begin(), kinds().end(), kind) == kinds().end()) {
      c.error("kind", "unknown experiment kind '" + kind + "'");
      kind.clear();
    }
  }
  std::set<std::string> allowed{"schema_version", "kind", "seed", "output", "tolerances", "checks", "limits"};
  if (!kind.empty())
    for (const auto& s : sections_for(kind)) allowed.insert(s);
  if (kind == "full-pipeline") allowed.insert("stages");
  for (auto it = cfg.begin(); it != cfg.end(); ++it)
    if (!allowed.count(it.key())) c.error(it.key(), kind.empty() ? "unknown field" : "unknown field for kind " + kind);
  if (cfg.contains("seed") && !cfg["seed"].is_number_unsigned() &&
      !(cfg["seed"].is_number_integer() && cfg["seed"].get<long long>() >= 0))
    c.error("seed", "must be a non-negative integer");
  if (cfg.contains("output") && !cfg["output"].is_string()) c.error("output", "must be a string");

  json resolved = json::object();
  resolved["schema_version"] = kSchemaVersion;
  resolved["kind"] = kind;
  resolved["seed"] = cfg.value("seed", json(0));
  resolved["output"] = cfg.value("output", std::string("out"));

  json tol = default_tolerances();
  if (cfg.contains("tolerances")) {
    const auto& t = cfg["tolerances"];
    if (!t.is_object()) c.error("tolerances", "must be an object");
    else
      for (auto it = t.begin(); it != t.end(); ++it) {
        if (!tol.contains(it.key())) c.error("tolerances." + it.key(), "unknown tolerance");
        else if (c.number(it.value(), "tolerances." + it.key(), 0.0, true)) tol[it.key()] = it.value();
      }
  }
  resolved["tolerances"] = tol;

  json lim = default_limits();
  if (cfg.contains("limits")) {
    const auto& l = cfg["limits"];
    if (!l.is_object()) c.error("limits", "must be an object");
    else
      for (auto it = l.begin(); it != l.end(); ++it) {
        if (!lim.contains(it.key())) c.error("limits." + it.key(), "unknown limit");
        else if (c.integer(it.value(), "limits." + it.key(), 1)) lim[it.key()] = it.value();
      }
  }
  resolved["limits"] = lim;

  json checks = json::object();
  std::set<std::string> known;
  if (!kind.empty())
    for (const auto& s : sections_for(kind))
      for (const auto& n : check_names().at(s)) known.insert(n);
  if (cfg.contains("checks")) {
    const auto& ch = cfg["checks"];
    if (!ch.is_object()) c.error("checks", "must be an object");
    else
      for (auto it = ch.begin(); it != ch.end(); ++it) {
        if (!kind.empty() && !known.count(it.key())) c.error("checks." + it.key(), "unknown check for kind " + kind);
        else if (!it.value().is_boolean()) c.error("checks." + it.key(), "must be true or false");
        else checks[it.key()] = it.value();
      }
  }
  resolved["checks"] = checks;

  if (kind.empty()) {
    v.resolved = resolved;
    return v;
  }
  const bool pipeline = kind == "full-pipeline";
  if (pipeline) {
    json stages = cfg.value("stages", json(pipeline_stages()));
    if (!stages.is_array() || stages.empty()) c.error("stages", "grid non-empty");
    else
      for (std::size_t i = 0; i < stages.size(); ++i)
        if (!stages[i].is_string() ||
            std::find(pipeline_stages().begin(), pipeline_stages().end(), stages[i].get<std::string>()) ==
                pipeline_stages().end())
          c.error(detail::index_path("stages", i), "must be one of scattering, gp, kernel, bogoliubov");
    resolved["stages"] = stages;
  }
  for (const auto& s : sections_for(kind)) {
    const json def = default_section(s, pipeline);
    json sec = def;
    if (cfg.contains(s)) {
      if (!cfg[s].is_object()) {
        c.error(s, "must be an object");
      } else {
        for (auto it = cfg[s].begin(); it != cfg[s].end(); ++it)
          if (!def.contains(it.key())) c.error(s + "." + it.key(), "unknown field");
        sec = detail::merge(def, cfg[s]);
      }
    }
    resolved[s] = sec;
  }
  if (!v.errors.empty()) {
    v.resolved = resolved;
    return v;
  }
  for (const auto& s : sections_for(kind)) {
    const json& sec = resolved[s];
    if (s == "meanfield") detail::check_meanfield(c, sec, lim, v.notes);
    if (s == "scattering") detail::check_scattering(c, sec);
    if (s == "gp") detail::check_gp(c, sec, pipeline);
    if (s == "kernel") detail::check_kernel(c, sec, pipeline, pipeline ? resolved["scattering"] : json());
    if (s == "bogoliubov") detail::check_bogoliubov(c, sec, pipeline, lim, v.notes);
  }
  v.resolved = resolved;
  return v;
}

struct Loaded {
  json config;
  std::vector<Diagnostic> errors;
};

inline Loaded load_config(const std::filesystem::path& path) {
  Loaded l;
  std::ifstream in(path);
  if (!in) {
    l.errors.push_back({"", "cannot open " + path.string()});
    return l;
  }
  try {
    l.config = json::parse(in);
  } catch (const json::parse_error& e) {
    l.errors.push_back({"", std::string("parse error: ") + e.what()});
  }
  return l;
}

}  // namespace bosegp::cli
