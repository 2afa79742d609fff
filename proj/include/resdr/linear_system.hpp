#pragma once

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "resdr/core.hpp"

namespace resdr {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using Terms = std::vector<std::pair<int, double>>;

struct SparseRow {
  Terms terms;
  double rhs = 0.0;
  std::string label;
};

/// Column bounds plus sparse rows: eq rows are a.x = rhs, ineq rows a.x <= rhs.
struct LinearSystem {
  std::vector<std::string> var_names;
  std::vector<double> lb;
  std::vector<double> ub;
  std::vector<SparseRow> eq;
  std::vector<SparseRow> ineq;

  int num_vars() const { return static_cast<int>(var_names.size()); }

  int add_variable(std::string name, double lo = -kInf, double hi = kInf) {
    var_names.push_back(std::move(name));
    lb.push_back(lo);
    ub.push_back(hi);
    return num_vars() - 1;
  }

  void tighten(int col, double lo, double hi) {
    if (lo > lb[col]) lb[col] = lo;
    if (hi < ub[col]) ub[col] = hi;
  }

  void add_equality(Terms terms, double rhs, std::string label) {
    eq.push_back({std::move(terms), rhs, std::move(label)});
  }

  void add_less_equal(Terms terms, double rhs, std::string label) {
    ineq.push_back({std::move(terms), rhs, std::move(label)});
  }

  /// lo <= a.x <= hi as zero, one or two rows (or one equality).
  void add_range(const Terms& terms, double lo, double hi, const std::string& label) {
    if (lo == hi) {
      add_equality(terms, lo, label);
      return;
    }
    if (hi < kInf) add_less_equal(terms, hi, label + "_upper");
    if (lo > -kInf) {
      Terms neg = terms;
      for (auto& [c, v] : neg) v = -v;
      add_less_equal(std::move(neg), -lo, label + "_lower");
    }
  }

  /// Every row references existing columns and bounds are ordered.
  bool well_formed() const {
    auto ok = [&](const std::vector<SparseRow>& rows) {
      for (const SparseRow& r : rows)
        for (auto [c, v] : r.terms)
          if (c < 0 || c >= num_vars()) return false;
      return true;
    };
    for (int i = 0; i < num_vars(); ++i)
      if (lb[i] > ub[i]) return false;
    return ok(eq) && ok(ineq);
  }
};

inline double dot(const Terms& terms, const std::vector<double>& x) {
  double s = 0.0;
  for (auto [c, v] : terms) s += v * x[c];
  return s;
}

}  // namespace resdr
