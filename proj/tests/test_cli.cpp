#include <bosegp/cli/run.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

using namespace bosegp;
using namespace bosegp::cli;

namespace {

const fs::path kSource = BOSEGP_SOURCE_DIR;

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("bosegp_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

json load(const std::string& rel) {
  std::ifstream in(kSource / rel);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool has_error(const Validation& v, const std::string& path, const std::string& fragment) {
  for (const auto& d : v.errors)
    if (d.path == path && d.message.find(fragment) != std::string::npos) return true;
  return false;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) m[fs::relative(e.path(), root).string()] = slurp(e.path());
  return m;
}

}  // namespace

TEST(CliValidate, EmptyGridHasFieldPath) {
  json c{{"schema_version", 1}, {"kind", "meanfield-moments"}, {"meanfield", {{"kappa", json::array()}}}};
  auto v = validate(c);
  EXPECT_FALSE(v.ok());
  EXPECT_TRUE(has_error(v, "meanfield.kappa", "grid non-empty"));
  json b{{"schema_version", 1}, {"kind", "bogoliubov-checks"}, {"bogoliubov", {{"N", json::array()}}}};
  EXPECT_TRUE(has_error(validate(b), "bogoliubov.N", "grid non-empty"));
}

TEST(CliValidate, BasisDimensionBinomialAccepted) {
  // 10 excitation modes, at most 10 particles: C(20, 10) states
  std::uint64_t oracle = 1;
  for (int i = 1; i <= 10; ++i) oracle = oracle * (10 + i) / i;
  ASSERT_EQ(oracle, 184756u);
  json c{{"schema_version", 1},
         {"kind", "bogoliubov-checks"},
         {"bogoliubov",
          {{"eta", {{"type", "kernel"}, {"modes", 10}, {"source", "eta_modes.json"}}},
           {"N", {10}},
           {"cap", 10},
           {"gronwall", {{"N", 4}, {"cap", 2}}}}}};
  auto v = validate(c);
  EXPECT_TRUE(v.ok()) << (v.errors.empty() ? "" : v.errors[0].str());
  bool seen = false;
  for (const auto& n : v.notes)
    if (n.find("bogoliubov.cap") == 0 && n.find("dimension 184756 within cap 1000000") != std::string::npos) seen = true;
  EXPECT_TRUE(seen);
  // one more particle overflows a smaller cap, with the dimension in the message
  c["bogoliubov"]["cap"] = 11;
  c["bogoliubov"]["N"] = {11};
  c["limits"] = {{"max_basis_dimension", 200000}};
  auto w = validate(c);
  EXPECT_TRUE(has_error(w, "bogoliubov.cap", "dimension 352716 exceeds cap 200000"));
}

TEST(CliValidate, MeshResolutionRefusal) {
  json c{{"schema_version", 1},
         {"kind", "kernel-bounds"},
         {"kernel", {{"mesh", 16}, {"ell", {1.0 / 32}}, {"alpha", 1.0}, {"N", {20}}}}};
  auto v = validate(c);
  EXPECT_TRUE(has_error(v, "kernel.mesh", "resolution refusal"));
  c["kernel"]["mesh"] = 66;
  EXPECT_TRUE(validate(c).ok());
}

TEST(CliValidate, SchemaErrorsNeverThrow) {
  EXPECT_FALSE(validate(json::array()).ok());
  EXPECT_TRUE(has_error(validate(json{{"kind", "gp"}}), "schema_version", "required"));
  EXPECT_TRUE(has_error(validate(json{{"schema_version", 2}, {"kind", "gp"}}), "schema_version", "must be 1"));
  EXPECT_TRUE(has_error(validate(json{{"schema_version", 1}, {"kind", "nope"}}), "kind", "unknown experiment kind"));
  json c{{"schema_version", 1}, {"kind", "gp"}, {"gp", {{"tol", -1.0}, {"grdi", 3}}}, {"meanfield", json::object()}};
  c["tolerances"] = {{"gp_residual", 0.0}, {"made_up", 1.0}};
  c["checks"] = {{"bootstrap", false}};
  auto v = validate(c);
  EXPECT_TRUE(has_error(v, "gp.grdi", "unknown field"));
  EXPECT_TRUE(has_error(v, "meanfield", "unknown field"));
  EXPECT_TRUE(has_error(v, "tolerances.gp_residual", "> 0"));
  EXPECT_TRUE(has_error(v, "tolerances.made_up", "unknown tolerance"));
  EXPECT_TRUE(has_error(v, "checks.bootstrap", "unknown check"));
  json bad{{"schema_version", 1},
           {"kind", "meanfield-moments"},
           {"meanfield", {{"N", {4, "six"}}, {"vhat", {{"type", "gaussian"}}}, {"dimension", 9}}}};
  EXPECT_NO_THROW({
    auto w = validate(bad);
    EXPECT_TRUE(has_error(w, "meanfield.N[1]", "integer"));
    EXPECT_TRUE(has_error(w, "meanfield.vhat.amplitude", "required"));
    EXPECT_TRUE(has_error(w, "meanfield.dimension", "[1, 3]"));
  });
  json big{{"schema_version", 1}, {"kind", "bogoliubov-checks"}, {"bogoliubov", {{"eta", {{"type", "pair"}, {"norm", 0.6}}}}}};
  EXPECT_TRUE(has_error(validate(big), "bogoliubov.eta", "not below 0.5"));
  for (const auto& name : {"meanfield_moments", "scattering_soft_sphere", "gp_harmonic", "kernel_bounds",
                           "bogoliubov_pair", "full_pipeline"})
    EXPECT_TRUE(validate(load(std::string("configs/") + name + ".json")).ok()) << name;
}

TEST(CliSchema, ShippedSchemaMatchesCode) {
  auto s = load("schema/config.schema.json");
  EXPECT_EQ(s["properties"]["schema_version"]["const"].get<int>(), kSchemaVersion);
  EXPECT_EQ(s["properties"]["kind"]["enum"].get<std::vector<std::string>>(), kinds());
  const auto tol = default_tolerances();
  const auto& st = s["properties"]["tolerances"]["properties"];
  EXPECT_EQ(st.size(), tol.size());
  for (auto it = tol.begin(); it != tol.end(); ++it) EXPECT_EQ(st[it.key()]["default"].get<double>(), it.value().get<double>());
  std::set<std::string> names, schema_names;
  for (const auto& [sec, v] : check_names()) names.insert(v.begin(), v.end());
  for (auto it = s["properties"]["checks"]["properties"].begin(); it != s["properties"]["checks"]["properties"].end(); ++it)
    schema_names.insert(it.key());
  EXPECT_EQ(names, schema_names);
  for (const auto& sec : {"meanfield", "scattering", "gp", "kernel", "bogoliubov"}) {
    const auto def = default_section(sec, false);
    for (auto it = def.begin(); it != def.end(); ++it)
      EXPECT_TRUE(s["properties"][sec]["properties"].contains(it.key())) << sec << "." << it.key();
  }
}

TEST(CliReport, SeventeenDigitsAndStableColumns) {
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(format_double(1.0 / 3), "0.33333333333333331");
  for (double x : {0.1, 1e-300, 6.02214076e23, -2.5, 1.0 / 7}) EXPECT_EQ(std::stod(format_double(x)), x);
  Table t{{"b", "a", "c"}, {}};
  t.add({1.5, 2LL, std::string("x")});
  std::ostringstream os;
  t.write_csv(os);
  EXPECT_EQ(os.str(), "b,a,c\n1.5,2,x\n");
  EXPECT_THROW(t.add({1.0}), InvalidArgument);
  json j{{"z", 0.1}, {"a", {1, 2}}, {"m", json::object()}};
  EXPECT_EQ(to_json_string(j), "{\n  \"z\": 0.10000000000000001,\n  \"a\": [1, 2],\n  \"m\": {}\n}\n");
  EXPECT_EQ(json::parse(to_json_string(j))["z"].get<double>(), 0.1);
}

TEST(CliPool, OrderedResultsAndFirstError) {
  auto r = ordered_map(50, 7, [](std::size_t i) { return int(i * i); });
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r[i], int(i * i));
  EXPECT_TRUE(ordered_map(0, 4, [](std::size_t i) { return i; }).empty());
  try {
    ordered_map(20, 4, [](std::size_t i) -> int {
      if (i == 7 || i == 13) throw InvalidArgument("item " + std::to_string(i));
      return 0;
    });
    FAIL() << "no exception";
  } catch (const InvalidArgument& e) {
    EXPECT_STREQ(e.what(), "item 7");
  }
}

TEST(CliRun, MeanfieldSixRowsAllAtLeastOne) {
  const auto out = scratch("mf");
  RunOptions o;
  o.out = out;
  auto r = run(load("configs/meanfield_moments.json"), o);
  EXPECT_EQ(r.exit_code, 0) << r.error;
  auto rows = read_csv(out / "moments.csv");
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0][0], "N");
  const auto col = std::find(rows[0].begin(), rows[0].end(), "sup_moment") - rows[0].begin();
  std::set<std::pair<std::string, std::string>> grid;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_GE(std::stod(rows[i][col]), 1.0);
    grid.insert({rows[i][0], rows[i][2]});
  }
  EXPECT_EQ(grid.size(), 6u);
  const auto summary = slurp(out / "summary.txt");
  EXPECT_NE(summary.find("PASS meanfield.markov_tail"), std::string::npos);
  EXPECT_NE(summary.find("status: PASS"), std::string::npos);
}

TEST(CliRun, SoftSphereScatteringLength) {
  const auto out = scratch("sc");
  RunOptions o;
  o.out = out;
  auto r = run(load("configs/scattering_soft_sphere.json"), o);
  EXPECT_EQ(r.exit_code, 0) << r.error;
  auto rows = read_csv(out / "scattering.csv");
  ASSERT_EQ(rows.size(), 2u);
  ASSERT_EQ(rows[0][1], "scattering_length");
  EXPECT_NEAR(std::stod(rows[1][1]), 1 - std::tanh(1.0), 1e-6 * (1 - std::tanh(1.0)));
  EXPECT_NEAR(std::stod(rows[1][1]), 0.238406, 1e-6);
  auto rep = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep["status"], "PASS");
  EXPECT_EQ(rep["config"]["scattering"]["R_max"].get<double>(), 10.0);  // defaults are echoed
}

TEST(CliRun, SameSeedByteIdenticalAcrossThreads) {
  const auto cfg = load("configs/meanfield_moments.json");
  RunOptions a, b, c;
  a.out = scratch("det_a");
  b.out = scratch("det_b");
  b.threads = 3;
  c.out = scratch("det_c");
  c.seed = 12345;
  ASSERT_EQ(run(cfg, a).exit_code, 0);
  ASSERT_EQ(run(cfg, b).exit_code, 0);
  ASSERT_EQ(run(cfg, c).exit_code, 0);
  const auto ta = tree(*a.out), tb = tree(*b.out), tc = tree(*c.out);
  EXPECT_EQ(ta.size(), 6u);
  EXPECT_EQ(ta, tb);
  // the seed only feeds the sampled sandwich constant
  EXPECT_NE(ta.at("moments.csv"), tc.at("moments.csv"));
  EXPECT_EQ(ta.at("coercivity.csv"), tc.at("coercivity.csv"));

  const auto bog = load("configs/bogoliubov_pair.json");
  RunOptions d, e;
  d.out = scratch("det_d");
  e.out = scratch("det_e");
  e.threads = 4;
  ASSERT_EQ(run(bog, d).exit_code, 0);
  ASSERT_EQ(run(bog, e).exit_code, 0);
  EXPECT_EQ(tree(*d.out), tree(*e.out));
}

TEST(CliRun, ExitStatusFollowsEnabledChecks) {
  auto cfg = load("configs/bogoliubov_pair.json");
  cfg["bogoliubov"]["N"] = {10, 20};
  RunOptions o;
  o.out = scratch("exit");
  EXPECT_EQ(run(cfg, o).exit_code, 0);
  cfg["tolerances"] = {{"gronwall_bound", 1.0}};  // C is just above 1
  auto r = run(cfg, o);
  EXPECT_EQ(r.exit_code, 1);
  bool failed = false;
  for (const auto& c : r.checks) failed = failed || (c.name == "gronwall_bound" && c.status() == "FAIL");
  EXPECT_TRUE(failed);
  EXPECT_NE(slurp(*o.out / "summary.txt").find("FAIL bogoliubov.gronwall_bound"), std::string::npos);
  cfg["checks"] = {{"gronwall_bound", false}};
  r = run(cfg, o);
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_NE(slurp(*o.out / "summary.txt").find("SKIP bogoliubov.gronwall_bound"), std::string::npos);

  cfg["bogoliubov"]["cap"] = 0;
  r = run(cfg, o);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_FALSE(r.diagnostics.empty());

  // a runtime failure is reported, not thrown
  json k{{"schema_version", 1},
         {"kind", "kernel-bounds"},
         {"kernel", {{"mesh", 8}, {"N", {10}}, {"ell", {0.5}}, {"profile", {{"type", "gp"}, {"box_length", 4.0}, {"source", "missing.json"}}}}}};
  o.base_dir = scratch("nowhere");
  r = run(k, o);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.error.find("missing artifact"), std::string::npos);
  EXPECT_NE(slurp(*o.out / "summary.txt").find("ERROR"), std::string::npos);
}

TEST(CliRun, PipelineStagesRerunFromArtifacts) {
  auto cfg = load("configs/full_pipeline.json");
  cfg["bogoliubov"]["N"] = {10, 20, 40};
  RunOptions o;
  o.out = scratch("pipe");
  o.threads = 2;
  auto r = run(cfg, o);
  ASSERT_EQ(r.exit_code, 0) << r.error;
  for (const auto& d : {"01-scattering", "02-gp", "03-kernel", "04-bogoliubov"}) {
    EXPECT_TRUE(fs::exists(*o.out / d / "report.json")) << d;
    EXPECT_TRUE(fs::exists(*o.out / d / "summary.txt")) << d;
  }
  EXPECT_TRUE(fs::exists(*o.out / "03-kernel" / "eta_modes.json"));
  const auto before = tree(*o.out / "04-bogoliubov");
  const auto kernel_before = tree(*o.out / "03-kernel");
  cfg["stages"] = {"bogoliubov", "kernel"};
  ASSERT_EQ(run(cfg, o).exit_code, 0);
  EXPECT_EQ(tree(*o.out / "04-bogoliubov"), before);
  EXPECT_EQ(tree(*o.out / "03-kernel"), kernel_before);
  // without the upstream artifacts a stage cannot run
  RunOptions fresh;
  fresh.out = scratch("pipe_fresh");
  cfg["stages"] = {"kernel"};
  r = run(cfg, fresh);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.error.find("missing artifact"), std::string::npos);
}

TEST(CliBinary, FlagsAndExitCodes) {
  const std::string exe = BOSEGP_CLI_PATH;
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  const auto cfg = (kSource / "configs/scattering_soft_sphere.json").string();
  EXPECT_EQ(status(exe + " validate " + cfg), 0);
  const auto out = scratch("bin");
  EXPECT_EQ(status(exe + " run " + cfg + " --out " + out.string() + " --seed 3 --threads 2"), 0);
  auto rep = json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep["seed"].get<std::uint64_t>(), 3u);
  const auto bad = scratch("bin_bad.json");
  std::ofstream(bad) << R"({"schema_version": 1, "kind": "meanfield-moments", "meanfield": {"zeta": []}})";
  EXPECT_EQ(status(exe + " validate " + bad.string()), 2);
  EXPECT_EQ(status(exe + " run " + bad.string() + " --out " + out.string()), 2);
  EXPECT_NE(status(exe + " frobnicate"), 0);
}
