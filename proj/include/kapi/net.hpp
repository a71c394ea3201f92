#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "kapi/autodiff.hpp"
#include "kapi/rng.hpp"

namespace kapi::ad {

/// Dense layer application; weights are row-major (out x in). A is either P
/// itself or Dual<P>, so the same code serves inference, reverse-mode
/// training and forward-over-reverse time derivatives.
template <class P, class A>
void dense_apply(std::span<const P> W, std::span<const P> b, std::span<const A> x,
                 std::span<A> y, bool tanh_act) {
  using std::tanh;
  const std::size_t nin = x.size();
  const std::size_t nout = y.size();
  for (std::size_t o = 0; o < nout; ++o) {
    const P* row = W.data() + o * nin;
    A acc = row[0] * x[0];
    for (std::size_t i = 1; i < nin; ++i) acc = acc + row[i] * x[i];
    acc = acc + b[o];
    y[o] = tanh_act ? tanh(acc) : acc;
  }
}

/// Fully connected tanh network with a linear output layer. Holds ParamStore
/// array ids only; weights live in the store.
struct Mlp {
  int in = 0, out = 0;
  std::vector<int> hidden;
  std::vector<int> w_ids, b_ids;

  static Mlp create(ParamStore& store, const std::string& prefix, int in,
                    std::vector<int> hidden, int out, CounterRng& rng) {
    Mlp m;
    m.in = in;
    m.out = out;
    m.hidden = std::move(hidden);
    int prev = in;
    std::vector<int> sizes = m.hidden;
    sizes.push_back(out);
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      const int width = sizes[l];
      const int w = store.add(prefix + ".w" + std::to_string(l), width, prev);
      const int b = store.add(prefix + ".b" + std::to_string(l), width);
      // scaled uniform init for tanh layers, zero biases
      const double bound = std::sqrt(6.0 / (prev + width));
      for (double& v : store.array(w)) v = rng.uniform(-bound, bound);
      m.w_ids.push_back(w);
      m.b_ids.push_back(b);
      prev = width;
    }
    return m;
  }

  template <class P, class A>
  void forward(const ParamsView<P>& params, std::span<const A> input, std::vector<A>& output,
               std::vector<A>& scratch_a, std::vector<A>& scratch_b) const {
    const std::size_t layers = w_ids.size();
    std::span<const A> cur = input;
    for (std::size_t l = 0; l < layers; ++l) {
      const bool last = (l + 1 == layers);
      std::vector<A>& dst = last ? output : (l % 2 == 0 ? scratch_a : scratch_b);
      dst.resize(last ? static_cast<std::size_t>(out) : static_cast<std::size_t>(hidden[l]));
      dense_apply<P, A>(params.array(w_ids[l]), params.array(b_ids[l]), cur,
                        std::span<A>(dst), !last);
      cur = dst;
    }
  }
};

/// [t, sin(2*pi*k*t), cos(2*pi*k*t)] for k = 1..harmonics.
template <class A>
void time_features(const A& t, int harmonics, std::vector<A>& out) {
  using std::cos; using std::sin;
  out.clear();
  out.reserve(1 + 2 * static_cast<std::size_t>(harmonics));
  out.push_back(t);
  for (int k = 1; k <= harmonics; ++k) {
    const double w = 2.0 * M_PI * k;
    out.push_back(sin(w * t));
    out.push_back(cos(w * t));
  }
}

}  // namespace kapi::ad
