#include "kapi/autodiff.hpp"

#include <cmath>

namespace kapi::ad {

const std::vector<double>& Tape::backward(Var loss) {
  const std::size_t n = size();
  adjoint_.assign(n, 0.0);
  adjoint_[loss.i] = 1.0;
  for (std::size_t k = n; k-- > 0;) {
    const double a = adjoint_[k];
    if (a == 0.0) continue;
    const std::uint32_t q0 = p0_[k];
    if (q0 == kNone) continue;
    adjoint_[q0] += a * d0_[k];
    const std::uint32_t q1 = p1_[k];
    if (q1 != kNone) adjoint_[q1] += a * d1_[k];
  }
  return adjoint_;
}

double replay_one(const Tape& t, std::size_t k) {
  const double x = t.p0_[k] != Tape::kNone ? t.val_[t.p0_[k]] : 0.0;
  const double y = t.p1_[k] != Tape::kNone ? t.val_[t.p1_[k]] : 0.0;
  const double c = t.d1_[k];
  switch (t.op_[k]) {
    case Op::Leaf: return t.val_[k];
    case Op::Add: return x + y;
    case Op::Sub: return x - y;
    case Op::Mul: return x * y;
    case Op::Div: return x / y;
    case Op::Neg: return -x;
    case Op::AddC: return x + c;
    case Op::SubCR: return c - x;
    case Op::MulC: return t.d0_[k] * x;
    case Op::CDiv: return c / x;
    case Op::Exp: return std::exp(x);
    case Op::Log: return std::log(x);
    case Op::Log1p: return std::log1p(x);
    case Op::Tanh: return std::tanh(x);
    case Op::Sin: return std::sin(x);
    case Op::Cos: return std::cos(x);
    case Op::Sqrt: return std::sqrt(x);
    case Op::PowC: return std::pow(x, c);
    case Op::Abs: return std::abs(x);
    case Op::Min: return x <= y ? x : y;
    case Op::Max: return x >= y ? x : y;
    case Op::Wrap: return x - std::round(x);
  }
  return 0.0;
}

double Tape::replay() const {
  double worst = 0.0;
  for (std::size_t k = 0; k < size(); ++k) {
    const double diff = std::abs(replay_one(*this, k) - val_[k]);
    if (diff > worst) worst = diff;
  }
  return worst;
}

std::size_t Tape::first_bad_node(const std::vector<double>& adjoint) const {
  for (std::size_t k = 0; k < size(); ++k) {
    if (!std::isfinite(val_[k])) return k;
    if (k < adjoint.size() && !std::isfinite(adjoint[k])) return k;
  }
  return static_cast<std::size_t>(-1);
}

Eigen::VectorXd grad(Var loss, std::span<const Var> staged) {
  Tape& tape = *loss.tape;
  if (!std::isfinite(loss.val()))
    throw NaNDetected("non-finite loss value", tape.first_bad_node({}));
  const auto& adj = tape.backward(loss);
  Eigen::VectorXd g(static_cast<Eigen::Index>(staged.size()));
  bool ok = true;
  for (std::size_t k = 0; k < staged.size(); ++k) {
    g[static_cast<Eigen::Index>(k)] = adj[staged[k].i];
    ok = ok && std::isfinite(g[static_cast<Eigen::Index>(k)]);
  }
  if (!ok) throw NaNDetected("non-finite gradient", tape.first_bad_node(adj));
  return g;
}

}  // namespace kapi::ad
