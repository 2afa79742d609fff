#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace resdr {

enum class Phase : int { A = 0, B = 1, C = 2 };

inline constexpr std::array<Phase, 3> kPhases{Phase::A, Phase::B, Phase::C};
inline constexpr int kNumPhases = 3;

inline constexpr int index(Phase p) { return static_cast<int>(p); }

inline char phase_letter(Phase p) { return "ABC"[index(p)]; }
inline char phase_letter(int p) { return "ABC"[p]; }

inline Phase parse_phase(char c) {
  switch (c) {
    case 'A': case 'a': return Phase::A;
    case 'B': case 'b': return Phase::B;
    case 'C': case 'c': return Phase::C;
    default: throw std::invalid_argument(std::string("unknown phase '") + c + "'");
  }
}

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Complex = std::complex<double>;
using CVec3 = Eigen::Vector3cd;
using CMat3 = Eigen::Matrix3cd;
using Vec6 = Eigen::Matrix<double, 6, 1>;  // stacked (P_A, P_B, P_C, Q_A, Q_B, Q_C)
using PhaseMask = std::array<bool, 3>;
using Series = std::vector<double>;

/// Balanced positive-sequence unit phasors 1, a^2, a (A leads, B lags 120 deg, C leads 120 deg).
inline CVec3 nominal_phasors() {
  const double k = 2.0 * 3.14159265358979323846 / 3.0;
  return CVec3(Complex(1.0, 0.0), std::polar(1.0, -k), std::polar(1.0, k));
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input; `where` names the offending field path.
class ParseError : public Error {
 public:
  ParseError(std::string where, const std::string& what)
      : Error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

class TopologyError : public InvariantError {
 public:
  enum class Kind { CycleDetected, Disconnected };
  TopologyError(Kind kind, const std::string& what) : InvariantError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class NotConverged : public Error {
 public:
  NotConverged(int iterations, double residual, int t = -1)
      : Error("power flow not converged after " + std::to_string(iterations) +
              " iterations (residual " + std::to_string(residual) + ")" +
              (t >= 0 ? " at t=" + std::to_string(t + 1) : std::string())),
        iterations_(iterations),
        residual_(residual),
        t_(t) {}
  int iterations() const { return iterations_; }
  double residual() const { return residual_; }
  int t() const { return t_; }

 private:
  int iterations_;
  double residual_;
  int t_;
};

class Infeasible : public Error {
 public:
  Infeasible(const std::string& what, std::vector<std::string> active_rows)
      : Error(what), active_rows_(std::move(active_rows)) {}
  const std::vector<std::string>& active_rows() const { return active_rows_; }

 private:
  std::vector<std::string> active_rows_;
};

class MaxIterations : public Error {
 public:
  using Error::Error;
};

/// Verbosity from RESDR_LOG: 0 quiet (default), 1 info, 2 debug, 3 trace.
inline int log_level() {
  static const int level = [] {
    const char* v = std::getenv("RESDR_LOG");
    if (!v) return 0;
    const std::string s(v);
    if (s == "trace" || s == "3") return 3;
    if (s == "debug" || s == "2") return 2;
    if (s == "info" || s == "1") return 1;
    return 0;
  }();
  return level;
}

template <class... Args>
void log_at(int level, const char* fmt, Args... args) {
  if (log_level() < level) return;
  std::fprintf(stderr, "[resdr] ");
  if constexpr (sizeof...(Args) == 0)
    std::fputs(fmt, stderr);
  else
    std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

}  // namespace resdr
