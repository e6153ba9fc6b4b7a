#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rlqp/rng.hpp"
#include "rlqp/sparse.hpp"

namespace rlqp {

enum class Activation : std::uint32_t { Identity = 0, ReLU = 1, Tanh = 2 };

struct MlpSpec {
  Index input_width = 0;
  std::vector<Index> hidden;
  Index output_width = 0;
  Activation hidden_activation = Activation::ReLU;
  Activation output_activation = Activation::Identity;

  void validate() const {
    if (input_width < 1 || output_width < 1)
      throw std::invalid_argument("mlp: widths must be at least 1");
    if (hidden.size() != 2 && hidden.size() != 3)
      throw std::invalid_argument("mlp: supported depth is 2 or 3 hidden layers");
    for (Index h : hidden)
      if (h < 1) throw std::invalid_argument("mlp: hidden widths must be at least 1");
  }

  Index num_layers() const { return static_cast<Index>(hidden.size()) + 1; }

  // widths per layer boundary: input, hidden..., output
  std::vector<Index> widths() const {
    std::vector<Index> w;
    w.push_back(input_width);
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(output_width);
    return w;
  }
};

struct MlpParams {
  struct Layer {
    std::vector<double> w;  // row-major, out x in
    std::vector<double> b;
  };
  std::vector<Layer> layers;
};

inline MlpParams glorot_init(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  const auto w = spec.widths();
  MlpParams p;
  p.layers.resize(spec.num_layers());
  for (Index k = 0; k < spec.num_layers(); ++k) {
    const Index fan_in = w[k], fan_out = w[k + 1];
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    p.layers[k].w.resize(static_cast<std::size_t>(fan_out) * fan_in);
    p.layers[k].b.assign(fan_out, 0.0);
    for (auto& v : p.layers[k].w) v = rng.uniform(-bound, bound);
  }
  return p;
}

namespace detail {

inline double activate(Activation a, double v) {
  switch (a) {
    case Activation::Identity: return v;
    case Activation::ReLU: return v > 0.0 ? v : 0.0;
    case Activation::Tanh: return std::tanh(v);
  }
  return v;
}

// derivative from the pre-activation and the already computed output
inline double activate_deriv(Activation a, double pre, double out) {
  switch (a) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - out * out;
  }
  return 1.0;
}

}  // namespace detail

/// Per-layer buffers retained by forward for the backward pass. Reusable
/// across calls; buffers are resized once per shape.
struct ForwardTape {
  std::vector<std::vector<double>> pre;  // pre[k]: preactivation of layer k
  std::vector<std::vector<double>> act;  // act[0]: input, act[k+1]: output of layer k
};

inline std::span<const double> forward(const MlpSpec& spec, const MlpParams& params,
                                       std::span<const double> input, ForwardTape& tape) {
  const auto w = spec.widths();
  if (input.size() != static_cast<std::size_t>(spec.input_width))
    throw std::invalid_argument("forward: input width mismatch");
  if (params.layers.size() != static_cast<std::size_t>(spec.num_layers()))
    throw std::invalid_argument("forward: parameter layer count mismatch");
  const Index nl = spec.num_layers();
  tape.pre.resize(nl);
  tape.act.resize(nl + 1);
  tape.act[0].assign(input.begin(), input.end());
  for (Index k = 0; k < nl; ++k) {
    const Index in = w[k], out = w[k + 1];
    const MlpParams::Layer& layer = params.layers[k];
    if (layer.w.size() != static_cast<std::size_t>(in) * out ||
        layer.b.size() != static_cast<std::size_t>(out))
      throw std::invalid_argument("forward: layer " + std::to_string(k) + " has wrong shape");
    tape.pre[k].resize(out);
    tape.act[k + 1].resize(out);
    const Activation act = k + 1 == nl ? spec.output_activation : spec.hidden_activation;
    const std::vector<double>& xin = tape.act[k];
    for (Index o = 0; o < out; ++o) {
      double s = layer.b[o];
      const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * in;
      for (Index i = 0; i < in; ++i) s += wrow[i] * xin[i];
      tape.pre[k][o] = s;
      tape.act[k + 1][o] = detail::activate(act, s);
    }
  }
  return tape.act[nl];
}

inline std::vector<double> forward(const MlpSpec& spec, const MlpParams& params,
                                   std::span<const double> input) {
  ForwardTape tape;
  auto out = forward(spec, params, input, tape);
  return std::vector<double>(out.begin(), out.end());
}

/// Parameter gradients plus the gradient with respect to the network input
/// (needed when a policy network feeds a critic).
struct MlpGrads {
  std::vector<MlpParams::Layer> layers;
  std::vector<double> input;

  void zero() {
    for (auto& l : layers) {
      std::fill(l.w.begin(), l.w.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    std::fill(input.begin(), input.end(), 0.0);
  }
};

inline MlpGrads make_grads(const MlpSpec& spec) {
  const auto w = spec.widths();
  MlpGrads g;
  g.layers.resize(spec.num_layers());
  for (Index k = 0; k < spec.num_layers(); ++k) {
    g.layers[k].w.assign(static_cast<std::size_t>(w[k + 1]) * w[k], 0.0);
    g.layers[k].b.assign(w[k + 1], 0.0);
  }
  g.input.assign(spec.input_width, 0.0);
  return g;
}

/// Reverse pass over a tape left by forward. Parameter gradients are added
/// into grads (call grads.zero() between batches); grads.input is replaced.
inline void backward(const MlpSpec& spec, const MlpParams& params, const ForwardTape& tape,
                     std::span<const double> dout, MlpGrads& grads) {
  const auto w = spec.widths();
  const Index nl = spec.num_layers();
  if (dout.size() != static_cast<std::size_t>(spec.output_width))
    throw std::invalid_argument("backward: output gradient width mismatch");
  if (tape.act.size() != static_cast<std::size_t>(nl) + 1)
    throw std::invalid_argument("backward: tape does not match network depth");

  std::vector<double> g(dout.begin(), dout.end());
  std::vector<double> gnext;
  for (Index k = nl - 1; k >= 0; --k) {
    const Index in = w[k], out = w[k + 1];
    const Activation act = k + 1 == nl ? spec.output_activation : spec.hidden_activation;
    const MlpParams::Layer& layer = params.layers[k];
    MlpParams::Layer& grad = grads.layers[k];
    const std::vector<double>& xin = tape.act[k];
    gnext.assign(in, 0.0);
    for (Index o = 0; o < out; ++o) {
      const double dpre = g[o] * detail::activate_deriv(act, tape.pre[k][o], tape.act[k + 1][o]);
      if (dpre == 0.0) continue;
      grad.b[o] += dpre;
      const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * in;
      double* grow = grad.w.data() + static_cast<std::size_t>(o) * in;
      for (Index i = 0; i < in; ++i) {
        grow[i] += dpre * xin[i];
        gnext[i] += dpre * wrow[i];
      }
    }
    std::swap(g, gnext);
  }
  grads.input = g;
}

struct AdamState {
  struct Slot {
    std::vector<double> m_w, v_w, m_b, v_b;
  };
  std::vector<Slot> slots;
  std::int64_t step = 0;
};

inline AdamState make_adam(const MlpSpec& spec) {
  const auto w = spec.widths();
  AdamState s;
  s.slots.resize(spec.num_layers());
  for (Index k = 0; k < spec.num_layers(); ++k) {
    const std::size_t nw = static_cast<std::size_t>(w[k + 1]) * w[k];
    s.slots[k].m_w.assign(nw, 0.0);
    s.slots[k].v_w.assign(nw, 0.0);
    s.slots[k].m_b.assign(w[k + 1], 0.0);
    s.slots[k].v_b.assign(w[k + 1], 0.0);
  }
  return s;
}

inline void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (params.layers.size() != state.slots.size() || params.layers.size() != grads.layers.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  state.step++;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].w, grads.layers[k].w, state.slots[k].m_w, state.slots[k].v_w);
    update(params.layers[k].b, grads.layers[k].b, state.slots[k].m_b, state.slots[k].v_b);
  }
}

/// target <- polyak * target + (1 - polyak) * online.
inline void polyak_update(MlpParams& target, const MlpParams& online, double polyak) {
  if (target.layers.size() != online.layers.size())
    throw std::invalid_argument("polyak_update: layer count mismatch");
  if (!(polyak >= 0.0 && polyak <= 1.0))
    throw std::invalid_argument("polyak_update: factor outside [0, 1]");
  for (std::size_t k = 0; k < target.layers.size(); ++k) {
    auto blend = [&](std::vector<double>& t, const std::vector<double>& o) {
      if (t.size() != o.size()) throw std::invalid_argument("polyak_update: shape mismatch");
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = polyak * t[i] + (1.0 - polyak) * o[i];
    };
    blend(target.layers[k].w, online.layers[k].w);
    blend(target.layers[k].b, online.layers[k].b);
  }
}

// ---------------------------------------------------------------------------
// weight file format (little endian):
//   8 bytes   magic "RLQPNET1"
//   u32       input width
//   u32       hidden layer count
//   u32 * h   hidden widths
//   u32       output width
//   u32       hidden activation
//   u32       output activation
//   f64 ...   per layer: weights row-major, then biases
// ---------------------------------------------------------------------------

inline constexpr char kNetMagic[8] = {'R', 'L', 'Q', 'P', 'N', 'E', 'T', '1'};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  os.write(buf, 4);
}

inline void write_f64(std::ostream& os, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  os.write(buf, 8);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
  char buf[4];
  if (!is.read(buf, 4)) throw std::runtime_error("net file: truncated reading " + what);
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

inline double read_f64(std::istream& is, const std::string& what) {
  char buf[8];
  if (!is.read(buf, 8)) throw std::runtime_error("net file: truncated reading " + what);
  double v;
  std::memcpy(&v, buf, 8);
  return v;
}

}  // namespace detail

inline void save_net(const std::string& path, const MlpSpec& spec, const MlpParams& params) {
  spec.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_net: cannot open " + path);
  os.write(kNetMagic, 8);
  detail::write_u32(os, static_cast<std::uint32_t>(spec.input_width));
  detail::write_u32(os, static_cast<std::uint32_t>(spec.hidden.size()));
  for (Index h : spec.hidden) detail::write_u32(os, static_cast<std::uint32_t>(h));
  detail::write_u32(os, static_cast<std::uint32_t>(spec.output_width));
  detail::write_u32(os, static_cast<std::uint32_t>(spec.hidden_activation));
  detail::write_u32(os, static_cast<std::uint32_t>(spec.output_activation));
  const auto w = spec.widths();
  if (params.layers.size() != static_cast<std::size_t>(spec.num_layers()))
    throw std::runtime_error("save_net: parameter layer count mismatch");
  for (Index k = 0; k < spec.num_layers(); ++k) {
    const auto& layer = params.layers[k];
    if (layer.w.size() != static_cast<std::size_t>(w[k + 1]) * w[k] ||
        layer.b.size() != static_cast<std::size_t>(w[k + 1]))
      throw std::runtime_error("save_net: layer " + std::to_string(k) + " has wrong shape");
    for (double v : layer.w) detail::write_f64(os, v);
    for (double v : layer.b) detail::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("save_net: write failed for " + path);
}

inline std::pair<MlpSpec, MlpParams> load_net(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_net: cannot open " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kNetMagic, 8) != 0)
    throw std::runtime_error("load_net: bad magic in " + path);
  MlpSpec spec;
  spec.input_width = static_cast<Index>(detail::read_u32(is, "input width"));
  const std::uint32_t nh = detail::read_u32(is, "hidden count");
  if (nh != 2 && nh != 3) throw std::runtime_error("load_net: unsupported hidden layer count");
  spec.hidden.resize(nh);
  for (auto& h : spec.hidden) h = static_cast<Index>(detail::read_u32(is, "hidden width"));
  spec.output_width = static_cast<Index>(detail::read_u32(is, "output width"));
  const std::uint32_t ha = detail::read_u32(is, "hidden activation");
  const std::uint32_t oa = detail::read_u32(is, "output activation");
  if (ha > 2 || oa > 2) throw std::runtime_error("load_net: unknown activation code");
  spec.hidden_activation = static_cast<Activation>(ha);
  spec.output_activation = static_cast<Activation>(oa);
  spec.validate();

  MlpParams params;
  const auto w = spec.widths();
  params.layers.resize(spec.num_layers());
  for (Index k = 0; k < spec.num_layers(); ++k) {
    auto& layer = params.layers[k];
    layer.w.resize(static_cast<std::size_t>(w[k + 1]) * w[k]);
    layer.b.resize(w[k + 1]);
    for (auto& v : layer.w) v = detail::read_f64(is, "weights");
    for (auto& v : layer.b) v = detail::read_f64(is, "biases");
  }
  is.peek();
  if (!is.eof()) throw std::runtime_error("load_net: trailing bytes in " + path);
  return {std::move(spec), std::move(params)};
}

}  // namespace rlqp
