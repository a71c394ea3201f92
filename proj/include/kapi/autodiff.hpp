#pragma once

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kapi/errors.hpp"

namespace kapi::ad {

enum class Op : std::uint8_t {
  Leaf,
  Add, Sub, Mul, Div,
  Neg,
  AddC,   // x + c        (c stashed in d1)
  SubCR,  // c - x        (c stashed in d1)
  MulC,   // c * x        (c == d0)
  CDiv,   // c / x        (c stashed in d1)
  Exp, Log, Log1p, Tanh, Sin, Cos, Sqrt,
  PowC,   // x^c          (c stashed in d1)
  Abs, Min, Max,
  Wrap,   // x - round(x), derivative 1 a.e.
};

class Tape;

/// Handle to one scalar node on a Tape. Cheap to copy; arithmetic on Vars
/// records nodes eagerly and evaluates forward values immediately.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t i = 0;
  double val() const;
};

/// Append-only scalar tape. Parents always precede children, so one reverse
/// sweep over the node array computes all adjoints. Values are computed at
/// record time; replay() recomputes them from the recorded ops to verify
/// determinism.
class Tape {
 public:
  static constexpr std::uint32_t kNone = 0xFFFFFFFFu;

  void clear() {
    op_.clear(); p0_.clear(); p1_.clear(); d0_.clear(); d1_.clear(); val_.clear();
  }
  void reserve(std::size_t n) {
    op_.reserve(n); p0_.reserve(n); p1_.reserve(n); d0_.reserve(n); d1_.reserve(n); val_.reserve(n);
  }
  std::size_t size() const { return val_.size(); }
  double value(std::uint32_t i) const { return val_[i]; }

  Var leaf(double v) { return push(Op::Leaf, kNone, kNone, 0.0, 0.0, v); }

  Var push(Op op, std::uint32_t p0, std::uint32_t p1, double d0, double d1, double v) {
    op_.push_back(op);
    p0_.push_back(p0);
    p1_.push_back(p1);
    d0_.push_back(d0);
    d1_.push_back(d1);
    val_.push_back(v);
    return Var{this, static_cast<std::uint32_t>(val_.size() - 1)};
  }

  /// Reverse sweep from `loss`; adjoints of every node are left in the
  /// returned buffer (valid until the next backward/clear).
  const std::vector<double>& backward(Var loss);

  /// Recomputes every non-leaf value from the recorded ops; returns the
  /// maximum absolute difference against the stored values.
  double replay() const;

  /// Index of the first node whose value or adjoint is non-finite.
  std::size_t first_bad_node(const std::vector<double>& adjoint) const;

 private:
  std::vector<Op> op_;
  std::vector<std::uint32_t> p0_, p1_;
  std::vector<double> d0_, d1_;
  std::vector<double> val_;
  std::vector<double> adjoint_;

  friend double replay_one(const Tape&, std::size_t);
};

inline double Var::val() const { return tape->value(i); }

// ---- Var arithmetic -------------------------------------------------------

inline Var operator+(Var a, Var b) {
  return a.tape->push(Op::Add, a.i, b.i, 1.0, 1.0, a.val() + b.val());
}
inline Var operator-(Var a, Var b) {
  return a.tape->push(Op::Sub, a.i, b.i, 1.0, -1.0, a.val() - b.val());
}
inline Var operator*(Var a, Var b) {
  return a.tape->push(Op::Mul, a.i, b.i, b.val(), a.val(), a.val() * b.val());
}
inline Var operator/(Var a, Var b) {
  const double q = a.val() / b.val();
  const double inv = 1.0 / b.val();
  return a.tape->push(Op::Div, a.i, b.i, inv, -q * inv, q);
}
inline Var operator-(Var a) { return a.tape->push(Op::Neg, a.i, Tape::kNone, -1.0, 0.0, -a.val()); }

inline Var operator+(Var a, double c) { return a.tape->push(Op::AddC, a.i, Tape::kNone, 1.0, c, a.val() + c); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return a.tape->push(Op::SubCR, a.i, Tape::kNone, -1.0, c, c - a.val()); }
inline Var operator*(Var a, double c) { return a.tape->push(Op::MulC, a.i, Tape::kNone, c, 0.0, c * a.val()); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) {
  const double v = a.val();
  return a.tape->push(Op::CDiv, a.i, Tape::kNone, -c / (v * v), c, c / v);
}

inline Var exp(Var a) {
  const double v = std::exp(a.val());
  return a.tape->push(Op::Exp, a.i, Tape::kNone, v, 0.0, v);
}
inline Var log(Var a) {
  return a.tape->push(Op::Log, a.i, Tape::kNone, 1.0 / a.val(), 0.0, std::log(a.val()));
}
inline Var log1p(Var a) {
  return a.tape->push(Op::Log1p, a.i, Tape::kNone, 1.0 / (1.0 + a.val()), 0.0, std::log1p(a.val()));
}
inline Var tanh(Var a) {
  const double t = std::tanh(a.val());
  return a.tape->push(Op::Tanh, a.i, Tape::kNone, 1.0 - t * t, 0.0, t);
}
inline Var sin(Var a) {
  return a.tape->push(Op::Sin, a.i, Tape::kNone, std::cos(a.val()), 0.0, std::sin(a.val()));
}
inline Var cos(Var a) {
  return a.tape->push(Op::Cos, a.i, Tape::kNone, -std::sin(a.val()), 0.0, std::cos(a.val()));
}
inline Var sqrt(Var a) {
  const double s = std::sqrt(a.val());
  return a.tape->push(Op::Sqrt, a.i, Tape::kNone, 0.5 / s, 0.0, s);
}
inline Var pow(Var a, double c) {
  const double v = a.val();
  return a.tape->push(Op::PowC, a.i, Tape::kNone, c * std::pow(v, c - 1.0), c, std::pow(v, c));
}
inline Var abs(Var a) {
  const double v = a.val();
  const double s = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return a.tape->push(Op::Abs, a.i, Tape::kNone, s, 0.0, std::abs(v));
}
inline Var min(Var a, Var b) {
  const bool first = a.val() <= b.val();
  return a.tape->push(Op::Min, a.i, b.i, first ? 1.0 : 0.0, first ? 0.0 : 1.0,
                      first ? a.val() : b.val());
}
inline Var max(Var a, Var b) {
  const bool first = a.val() >= b.val();
  return a.tape->push(Op::Max, a.i, b.i, first ? 1.0 : 0.0, first ? 0.0 : 1.0,
                      first ? a.val() : b.val());
}
/// x - round(x): reduces a periodic offset to [-0.5, 0.5]; derivative 1.
inline Var wrap_unit(Var a) {
  const double v = a.val();
  return a.tape->push(Op::Wrap, a.i, Tape::kNone, 1.0, 0.0, v - std::round(v));
}
inline Var sq(Var a) { return a * a; }

inline double value(double x) { return x; }
inline double value(Var x) { return x.val(); }
inline double wrap_unit(double x) { return x - std::round(x); }
inline double sq(double x) { return x * x; }

// ---- forward-mode duals ---------------------------------------------------

/// First-order dual number over scalar T (double for plain forward mode, Var
/// to lift the tangent computation onto the reverse tape).
template <class T>
struct Dual {
  T v{};
  T d{};
};

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
  return {a.v * b.v, a.v * b.d + a.d * b.v};
}
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
  auto q = a.v / b.v;
  return {q, (a.d - q * b.d) / b.v};
}

// mixed ops with a tangent-free scalar (parameters, constants)
template <class T> Dual<T> operator*(const T& c, const Dual<T>& x) { return {c * x.v, c * x.d}; }
template <class T> Dual<T> operator*(const Dual<T>& x, const T& c) { return {x.v * c, x.d * c}; }
template <class T> Dual<T> operator+(const Dual<T>& x, const T& c) { return {x.v + c, x.d}; }
template <class T> Dual<T> operator+(const T& c, const Dual<T>& x) { return {c + x.v, x.d}; }
template <class T> Dual<T> operator-(const T& c, const Dual<T>& x) { return {c - x.v, -x.d}; }
template <class T> Dual<T> operator-(const Dual<T>& x, const T& c) { return {x.v - c, x.d}; }
template <class T> Dual<T> operator/(const T& c, const Dual<T>& x) {
  auto q = c / x.v;
  return {q, -((q / x.v) * x.d)};
}
template <class T> Dual<T> operator/(const Dual<T>& x, const T& c) { return {x.v / c, x.d / c}; }
inline Dual<Var> operator*(double c, const Dual<Var>& x) { return {c * x.v, c * x.d}; }
inline Dual<Var> operator*(const Dual<Var>& x, double c) { return {x.v * c, x.d * c}; }
inline Dual<Var> operator+(double c, const Dual<Var>& x) { return {c + x.v, x.d}; }
inline Dual<Var> operator+(const Dual<Var>& x, double c) { return {x.v + c, x.d}; }
inline Dual<Var> operator-(double c, const Dual<Var>& x) { return {c - x.v, -x.d}; }
inline Dual<Var> operator-(const Dual<Var>& x, double c) { return {x.v - c, x.d}; }
inline Dual<Var> operator/(double c, const Dual<Var>& x) {
  Var q = c / x.v;
  return {q, -((q / x.v) * x.d)};
}
inline Dual<Var> operator/(const Dual<Var>& x, double c) { return {x.v / c, x.d / c}; }

template <class T> Dual<T> exp(const Dual<T>& x) {
  using std::exp;
  auto e = exp(x.v);
  return {e, e * x.d};
}
template <class T> Dual<T> tanh(const Dual<T>& x) {
  using std::tanh;
  auto t = tanh(x.v);
  return {t, (1.0 - t * t) * x.d};
}
template <class T> Dual<T> sin(const Dual<T>& x) {
  using std::cos; using std::sin;
  return {sin(x.v), cos(x.v) * x.d};
}
template <class T> Dual<T> cos(const Dual<T>& x) {
  using std::cos; using std::sin;
  return {cos(x.v), -(sin(x.v) * x.d)};
}
template <class T> Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  auto s = sqrt(x.v);
  return {s, (0.5 / s) * x.d};
}
template <class T> Dual<T> log(const Dual<T>& x) {
  using std::log;
  return {log(x.v), x.d / x.v};
}
template <class T> Dual<T> log1p(const Dual<T>& x) {
  using std::log1p;
  return {log1p(x.v), x.d / (1.0 + x.v)};
}
template <class T> Dual<T> wrap_unit(const Dual<T>& x) { return {wrap_unit(x.v), x.d}; }
template <class T> Dual<T> sq(const Dual<T>& x) { return x * x; }
template <class T> double value(const Dual<T>& x) { return value(x.v); }

// numerically stable squashes, usable with double, Var and Dual alike
template <class T>
T softplus(T x) {
  using std::exp;
  using std::log1p;
  if (value(x) > 0.0) return x + log1p(exp(-x));
  return log1p(exp(x));
}
template <class T>
T logistic(T x) {
  using std::exp;
  if (value(x) >= 0.0) return 1.0 / (1.0 + exp(-x));
  T e = exp(x);
  return e / (1.0 + e);
}

// ---- parameter storage ----------------------------------------------------

/// Named flat arrays of doubles over one contiguous buffer. Array ids are
/// assigned in registration order; the flat layout is what the optimizer,
/// gradient and checkpoint code operate on.
class ParamStore {
 public:
  struct ArrayInfo {
    std::string name;
    int rows = 0, cols = 0;
    std::size_t offset = 0, len = 0;
  };

  int add(std::string name, int rows, int cols = 1) {
    ArrayInfo info;
    info.name = std::move(name);
    info.rows = rows;
    info.cols = cols;
    info.offset = flat_.size();
    info.len = static_cast<std::size_t>(rows) * cols;
    flat_.resize(flat_.size() + info.len, 0.0);
    arrays_.push_back(std::move(info));
    return static_cast<int>(arrays_.size()) - 1;
  }

  std::span<double> array(int id) {
    const auto& a = arrays_[id];
    return {flat_.data() + a.offset, a.len};
  }
  std::span<const double> array(int id) const {
    const auto& a = arrays_[id];
    return {flat_.data() + a.offset, a.len};
  }
  const ArrayInfo& info(int id) const { return arrays_[id]; }
  int array_count() const { return static_cast<int>(arrays_.size()); }
  int find(const std::string& name) const {
    for (int i = 0; i < array_count(); ++i)
      if (arrays_[i].name == name) return i;
    return -1;
  }

  std::span<double> flat() { return flat_; }
  std::span<const double> flat() const { return flat_; }
  std::size_t size() const { return flat_.size(); }

 private:
  std::vector<double> flat_;
  std::vector<ArrayInfo> arrays_;
};

/// Read access to parameter arrays with scalar type P: doubles straight from
/// the store, or Vars staged as tape leaves.
template <class P>
class ParamsView {
 public:
  ParamsView(const ParamStore& layout, std::span<const P> flat) : layout_(&layout), flat_(flat) {}
  std::span<const P> array(int id) const {
    const auto& a = layout_->info(id);
    return flat_.subspan(a.offset, a.len);
  }
  std::span<const P> flat() const { return flat_; }

 private:
  const ParamStore* layout_;
  std::span<const P> flat_;
};

inline ParamsView<double> view(const ParamStore& store) { return {store, store.flat()}; }

/// Stages every parameter as a tape leaf, in flat order.
inline std::vector<Var> stage(Tape& tape, const ParamStore& store) {
  std::vector<Var> vars;
  vars.reserve(store.size());
  for (double v : store.flat()) vars.push_back(tape.leaf(v));
  return vars;
}

/// Reverse-mode gradient of `loss` with respect to the staged parameters.
/// Throws NaNDetected (with the offending node index) if the loss value or
/// any requested adjoint is non-finite.
Eigen::VectorXd grad(Var loss, std::span<const Var> staged);

}  // namespace kapi::ad
