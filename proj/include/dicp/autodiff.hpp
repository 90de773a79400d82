#pragma once
// Minimal tape-based reverse-mode automatic differentiation.
//
// A Var is either a constant (no tape node) or a reference to a node on the
// thread's active Tape. Every elementary operation records at most two parents
// with their local partial derivatives; Tape::adjoints() sweeps the node list
// backwards once to obtain the gradient of one output with respect to every
// recorded node.

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace dicp::ad {

class Tape {
 public:
  struct Node {
    int lhs;
    int rhs;
    double d_lhs;
    double d_rhs;
  };

  int push(int lhs, double d_lhs, int rhs = -1, double d_rhs = 0.0) {
    nodes_.push_back({lhs, rhs, d_lhs, d_rhs});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int leaf() { return push(-1, 0.0); }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  /// d(output)/d(node) for every node on the tape.
  std::vector<double> adjoints(int output) const {
    std::vector<double> adj(nodes_.size(), 0.0);
    if (output < 0) return adj;
    adj[static_cast<std::size_t>(output)] = 1.0;
    for (int i = output; i >= 0; --i) {
      const double a = adj[static_cast<std::size_t>(i)];
      if (a == 0.0) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.lhs >= 0) adj[static_cast<std::size_t>(n.lhs)] += a * n.d_lhs;
      if (n.rhs >= 0) adj[static_cast<std::size_t>(n.rhs)] += a * n.d_rhs;
    }
    return adj;
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline thread_local Tape* active_tape = nullptr;
}

/// Makes `tape` the recording target of the current thread for its lifetime.
class Recording {
 public:
  explicit Recording(Tape& tape) : previous_(detail::active_tape) {
    detail::active_tape = &tape;
  }
  ~Recording() { detail::active_tape = previous_; }
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Tape* previous_;
};

class Var {
 public:
  Var() = default;
  Var(double value) : value_(value) {}  // NOLINT: implicit constants are intended

  /// A new independent variable on the active tape.
  static Var independent(double value) {
    if (detail::active_tape == nullptr) {
      throw std::logic_error("ad::Var::independent called without an active tape");
    }
    Var v(value);
    v.id_ = detail::active_tape->leaf();
    return v;
  }

  double value() const { return value_; }
  int id() const { return id_; }
  bool is_constant() const { return id_ < 0; }

  // Result of a unary op with local derivative `d`.
  static Var unary(double value, const Var& x, double d) {
    Var r(value);
    if (!x.is_constant()) r.id_ = detail::active_tape->push(x.id_, d);
    return r;
  }

  static Var binary(double value, const Var& x, double dx, const Var& y, double dy) {
    Var r(value);
    if (x.is_constant() && y.is_constant()) return r;
    if (x.is_constant()) {
      r.id_ = detail::active_tape->push(y.id_, dy);
    } else if (y.is_constant()) {
      r.id_ = detail::active_tape->push(x.id_, dx);
    } else {
      r.id_ = detail::active_tape->push(x.id_, dx, y.id_, dy);
    }
    return r;
  }

  friend Var operator+(const Var& a, const Var& b) {
    return binary(a.value_ + b.value_, a, 1.0, b, 1.0);
  }
  friend Var operator-(const Var& a, const Var& b) {
    return binary(a.value_ - b.value_, a, 1.0, b, -1.0);
  }
  friend Var operator*(const Var& a, const Var& b) {
    return binary(a.value_ * b.value_, a, b.value_, b, a.value_);
  }
  friend Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.value_;
    return binary(a.value_ * inv, a, inv, b, -a.value_ * inv * inv);
  }
  friend Var operator-(const Var& a) { return unary(-a.value_, a, -1.0); }
  friend Var operator+(const Var& a) { return a; }

  Var& operator+=(const Var& b) { return *this = *this + b; }
  Var& operator-=(const Var& b) { return *this = *this - b; }
  Var& operator*=(const Var& b) { return *this = *this * b; }
  Var& operator/=(const Var& b) { return *this = *this / b; }

  friend bool operator<(const Var& a, const Var& b) { return a.value_ < b.value_; }
  friend bool operator>(const Var& a, const Var& b) { return a.value_ > b.value_; }
  friend bool operator<=(const Var& a, const Var& b) { return a.value_ <= b.value_; }
  friend bool operator>=(const Var& a, const Var& b) { return a.value_ >= b.value_; }
  friend bool operator==(const Var& a, const Var& b) { return a.value_ == b.value_; }
  friend bool operator!=(const Var& a, const Var& b) { return a.value_ != b.value_; }

 private:
  double value_ = 0.0;
  int id_ = -1;
};

// sqrt has an infinite slope at zero; the zero-input case contributes no
// gradient so that exact matches (zero residuals) stay finite.
inline Var sqrt(const Var& x) {
  const double s = std::sqrt(x.value());
  return Var::unary(s, x, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var exp(const Var& x) {
  const double e = std::exp(x.value());
  return Var::unary(e, x, e);
}
inline Var log(const Var& x) { return Var::unary(std::log(x.value()), x, 1.0 / x.value()); }
inline Var sin(const Var& x) { return Var::unary(std::sin(x.value()), x, std::cos(x.value())); }
inline Var cos(const Var& x) { return Var::unary(std::cos(x.value()), x, -std::sin(x.value())); }
inline Var tanh(const Var& x) {
  const double t = std::tanh(x.value());
  return Var::unary(t, x, 1.0 - t * t);
}
inline Var abs(const Var& x) {
  return Var::unary(std::abs(x.value()), x, x.value() < 0.0 ? -1.0 : 1.0);
}
inline Var atan2(const Var& y, const Var& x) {
  const double r2 = x.value() * x.value() + y.value() * y.value();
  return Var::binary(std::atan2(y.value(), x.value()), y, x.value() / r2, x, -y.value() / r2);
}
inline Var abs2(const Var& x) { return x * x; }
inline bool isfinite(const Var& x) { return std::isfinite(x.value()); }

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.value(); }

}  // namespace dicp::ad

namespace Eigen {

template <>
struct NumTraits<dicp::ad::Var> {
  using Real = dicp::ad::Var;
  using NonInteger = dicp::ad::Var;
  using Nested = dicp::ad::Var;
  using Literal = dicp::ad::Var;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3
  };
  static Real epsilon() { return std::numeric_limits<double>::epsilon(); }
  static Real dummy_precision() { return 1e-12; }
  static Real highest() { return std::numeric_limits<double>::max(); }
  static Real lowest() { return std::numeric_limits<double>::lowest(); }
  static int digits10() { return std::numeric_limits<double>::digits10; }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<dicp::ad::Var, double, BinaryOp> {
  using ReturnType = dicp::ad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, dicp::ad::Var, BinaryOp> {
  using ReturnType = dicp::ad::Var;
};

}  // namespace Eigen
