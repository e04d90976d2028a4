#pragma once

#include <bosegp/cli/config.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace bosegp::cli {

// Every float goes out with 17 significant digits so reports round-trip.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace detail {

inline void write_json(std::ostream& os, const json& j, int indent, int depth) {
  const std::string pad(std::size_t(indent) * (depth + 1), ' '), end(std::size_t(indent) * depth, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        os << "{}";
        return;
      }
      os << "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) os << ",\n";
        first = false;
        os << pad << json(it.key()).dump() << ": ";
        write_json(os, it.value(), indent, depth + 1);
      }
      os << "\n" << end << "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        os << "[]";
        return;
      }
      // numeric arrays stay on one line
      bool flat = true;
      for (const auto& x : j) flat = flat && x.is_primitive();
      os << "[";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) os << (flat ? ", " : ",");
        if (!flat) os << "\n" << pad;
        write_json(os, j[i], indent, depth + 1);
      }
      if (!flat) os << "\n" << end;
      os << "]";
      return;
    }
    case json::value_t::number_float: {
      const double x = j.get<double>();
      // JSON has no inf/nan; they go out as strings
      if (std::isfinite(x)) os << format_double(x);
      else os << '"' << format_double(x) << '"';
      return;
    }
    default:
      os << j.dump();
  }
}

}  // namespace detail

inline void write_json(std::ostream& os, const json& j) {
  detail::write_json(os, j, 2, 0);
  os << "\n";
}

inline std::string to_json_string(const json& j) {
  std::ostringstream os;
  write_json(os, j);
  return os.str();
}

using Cell = std::variant<double, long long, std::string>;

// A sweep table: one row per grid point, columns in declaration order.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    require(row.size() == columns.size(), "Table: row width does not match the header");
    rows.push_back(std::move(row));
  }

  void write_csv(std::ostream& os) const {
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << "\n";
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) os << ",";
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, double>) os << format_double(v);
              else os << v;
            },
            r[c]);
      }
      os << "\n";
    }
  }

  json to_json() const {
    json out = json::array();
    for (const auto& r : rows) {
      json o = json::object();
      for (std::size_t c = 0; c < r.size(); ++c) std::visit([&](const auto& v) { o[columns[c]] = v; }, r[c]);
      out.push_back(o);
    }
    return out;
  }
};

struct Check {
  std::string stage;
  std::string name;
  bool enabled = true;
  bool passed = false;
  double value = 0;
  double threshold = 0;
  std::string relation;  // how value is compared with threshold
  std::string detail;

  std::string status() const { return !enabled ? "SKIP" : passed ? "PASS" : "FAIL"; }

  json to_json() const {
    return json{{"stage", stage},         {"name", name},   {"status", status()}, {"value", value},
                {"relation", relation},   {"threshold", threshold}, {"detail", detail}};
  }

  std::string line() const {
    std::ostringstream os;
    os << status() << " " << stage << "." << name << ": " << format_double(value) << " " << relation << " "
       << format_double(threshold);
    if (!detail.empty()) os << " (" << detail << ")";
    return os.str();
  }
};

struct CheckList {
  std::string stage;
  json enabled_map;  // the config's "checks" object
  std::vector<Check> items;

  bool enabled(const std::string& name) const {
    return !enabled_map.contains(name) || enabled_map[name].get<bool>();
  }

  // value <= threshold, value >= threshold, or |value - target| <= band
  Check& add(const std::string& name, double value, const std::string& relation, double threshold,
             std::string detail = {}) {
    Check c{stage, name, enabled(name), false, value, threshold, relation, std::move(detail)};
    if (relation == "<=") c.passed = value <= threshold;
    else if (relation == "<") c.passed = value < threshold;
    else if (relation == ">=") c.passed = value >= threshold;
    else if (relation == ">") c.passed = value > threshold;
    else if (relation == "==") c.passed = value == threshold;
    else throw InvalidArgument("CheckList: unknown relation " + relation);
    if (!std::isfinite(value) && relation != "==") c.passed = false;
    items.push_back(std::move(c));
    return items.back();
  }

  bool all_passed() const {
    for (const auto& c : items)
      if (c.enabled && !c.passed) return false;
    return true;
  }
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + p.string());
  out << s;
}

inline void write_table(const std::filesystem::path& p, const Table& t) {
  std::ostringstream os;
  t.write_csv(os);
  write_text(p, os.str());
}

inline void write_json_file(const std::filesystem::path& p, const json& j) { write_text(p, to_json_string(j)); }

inline std::string summary_text(const std::string& title, const std::vector<Check>& checks, const std::string& error) {
  std::ostringstream os;
  os << title << "\n";
  std::size_t pass = 0, fail = 0, skip = 0;
  for (const auto& c : checks) {
    os << c.line() << "\n";
    if (!c.enabled) ++skip;
    else if (c.passed) ++pass;
    else ++fail;
  }
  if (!error.empty()) os << "ERROR " << error << "\n";
  os << "checks: " << pass << " passed, " << fail << " failed, " << skip << " skipped\n";
  os << "status: " << (fail == 0 && error.empty() ? "PASS" : "FAIL") << "\n";
  return os.str();
}

}  // namespace bosegp::cli
