#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "rlqp/nn.hpp"
#include "rlqp/rng.hpp"

namespace {

using namespace rlqp;

// Straightforward reference evaluation, accumulating input-by-input instead
// of row-by-row so an indexing mistake in the library cannot cancel out here.
std::vector<double> ref_forward(const MlpSpec& spec, const MlpParams& params,
                                const std::vector<double>& input) {
  auto w = spec.widths();
  std::vector<double> x = input;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const Index in = w[k], out = w[k + 1];
    std::vector<double> next(params.layers[k].b);
    for (Index i = 0; i < in; ++i)
      for (Index o = 0; o < out; ++o) next[o] += params.layers[k].w[o * in + i] * x[i];
    const bool last = k + 1 == params.layers.size();
    const Activation act = last ? spec.output_activation : spec.hidden_activation;
    for (double& v : next) {
      if (act == Activation::ReLU) v = std::max(v, 0.0);
      if (act == Activation::Tanh) v = std::tanh(v);
    }
    x = std::move(next);
  }
  return x;
}

MlpSpec chain_spec(Index in, std::vector<Index> hidden, Index out, Activation head) {
  MlpSpec s;
  s.input_width = in;
  s.hidden = std::move(hidden);
  s.output_width = out;
  s.output_activation = head;
  return s;
}

// All weights one, all biases zero.
MlpParams ones_params(const MlpSpec& spec) {
  auto w = spec.widths();
  MlpParams p;
  p.layers.resize(spec.num_layers());
  for (Index k = 0; k < spec.num_layers(); ++k) {
    p.layers[k].w.assign(static_cast<std::size_t>(w[k + 1]) * w[k], 1.0);
    p.layers[k].b.assign(w[k + 1], 0.0);
  }
  return p;
}

std::filesystem::path temp_net_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("mlp spec validation", "[nn]") {
  MlpSpec s = chain_spec(2, {4, 4}, 1, Activation::Tanh);
  REQUIRE_NOTHROW(s.validate());
  REQUIRE(s.widths() == std::vector<Index>{2, 4, 4, 1});
  REQUIRE(s.num_layers() == 3);

  MlpSpec bad = s;
  bad.input_width = 0;
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.hidden = {4};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.hidden = {4, 4, 4, 4};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = s;
  bad.hidden = {4, 0};
  REQUIRE_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("glorot init stays within its bound and zeroes biases", "[nn]") {
  MlpSpec spec = chain_spec(3, {5, 4}, 2, Activation::Identity);
  Rng rng(7);
  MlpParams p = glorot_init(spec, rng);
  auto w = spec.widths();
  for (Index k = 0; k < spec.num_layers(); ++k) {
    const double bound = std::sqrt(6.0 / (w[k] + w[k + 1]));
    for (double v : p.layers[k].w) {
      REQUIRE(v >= -bound);
      REQUIRE(v <= bound);
    }
    for (double v : p.layers[k].b) REQUIRE(v == 0.0);
  }
}

TEST_CASE("forward of the zero network is zero through a tanh head", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 3}, 1, Activation::Tanh);
  MlpParams p = ones_params(spec);
  for (auto& l : p.layers) std::fill(l.w.begin(), l.w.end(), 0.0);
  auto out = forward(spec, p, std::vector<double>{0.7, -0.3});
  REQUIRE(out.size() == 1);
  REQUIRE(out[0] == 0.0);
}

TEST_CASE("relu gates a negative input to the bias of the head", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Tanh);
  MlpParams p = ones_params(spec);
  p.layers[2].b[0] = 0.5;
  auto out = forward(spec, p, std::vector<double>{-2.0});
  REQUIRE(out[0] == std::tanh(0.5));
}

TEST_CASE("forward with hand numbers pins the row-major layout", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 2}, 1, Activation::Identity);
  MlpParams p;
  p.layers.resize(3);
  p.layers[0].w = {1, 2, 3, 4, 5, 6};
  p.layers[0].b = {0.1, 0.2, 0.3};
  p.layers[1].w = {1, 0, -1, 0, 1, 0};
  p.layers[1].b = {0, 0};
  p.layers[2].w = {0.5, 0.25};
  p.layers[2].b = {0.1};
  // layer 1: [2.1, 5.2, 8.3]; layer 2 pre [-6.2, 5.2] -> relu [0, 5.2];
  // head: 0.25 * 5.2 + 0.1 = 1.4
  auto out = forward(spec, p, std::vector<double>{1.0, 0.5});
  REQUIRE(out[0] == Catch::Approx(1.4).margin(1e-12));
}

TEST_CASE("forward matches the reference evaluation", "[nn]") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const Index in = 1 + rng.uniform_int(0, 4);
    const Index out_w = 1 + rng.uniform_int(0, 2);
    std::vector<Index> hidden(trial % 2 == 0 ? 2 : 3);
    for (auto& h : hidden) h = 1 + rng.uniform_int(0, 5);
    const Activation head = trial % 2 == 0 ? Activation::Tanh : Activation::Identity;
    MlpSpec spec = chain_spec(in, hidden, out_w, head);
    MlpParams p = glorot_init(spec, rng);
    std::vector<double> input(in);
    for (auto& v : input) v = rng.uniform(-2.0, 2.0);

    auto got = forward(spec, p, input);
    auto want = ref_forward(spec, p, input);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i)
      REQUIRE(got[i] == Catch::Approx(want[i]).margin(1e-14));
  }
}

TEST_CASE("forward is deterministic", "[nn]") {
  MlpSpec spec = chain_spec(4, {6, 5}, 2, Activation::Tanh);
  Rng rng(11);
  MlpParams p = glorot_init(spec, rng);
  std::vector<double> input = {0.3, -0.8, 1.2, 0.05};
  auto a = forward(spec, p, input);
  auto b = forward(spec, p, input);
  REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

TEST_CASE("forward rejects shape mismatches", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 3}, 1, Activation::Tanh);
  MlpParams p = ones_params(spec);
  ForwardTape tape;
  std::vector<double> bad_input = {1.0};
  REQUIRE_THROWS_AS(forward(spec, p, bad_input, tape), std::invalid_argument);

  MlpParams missing = p;
  missing.layers.pop_back();
  std::vector<double> input = {1.0, 2.0};
  REQUIRE_THROWS_AS(forward(spec, missing, input, tape), std::invalid_argument);

  MlpParams lopsided = p;
  lopsided.layers[1].w.pop_back();
  REQUIRE_THROWS_AS(forward(spec, lopsided, input, tape), std::invalid_argument);
}

TEST_CASE("backward through an all-ones chain gives hand gradients", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Identity);
  MlpParams p = ones_params(spec);
  ForwardTape tape;
  auto out = forward(spec, p, std::vector<double>{3.0}, tape);
  REQUIRE(out[0] == 3.0);

  MlpGrads g = make_grads(spec);
  backward(spec, p, tape, std::vector<double>{1.0}, g);
  // every activation along the chain equals the input, so each weight sees it
  REQUIRE(g.layers[2].w[0] == 3.0);
  REQUIRE(g.layers[1].w[0] == 3.0);
  REQUIRE(g.layers[0].w[0] == 3.0);
  REQUIRE(g.layers[0].b[0] == 1.0);
  REQUIRE(g.input[0] == 1.0);
}

TEST_CASE("backward through tanh at zero has unit slope", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Tanh);
  MlpParams p = ones_params(spec);
  p.layers[2].b[0] = -1.0;  // cancels the unit activation, head sees zero
  ForwardTape tape;
  auto out = forward(spec, p, std::vector<double>{1.0}, tape);
  REQUIRE(out[0] == 0.0);

  MlpGrads g = make_grads(spec);
  backward(spec, p, tape, std::vector<double>{1.0}, g);
  REQUIRE(g.layers[2].b[0] == 1.0);
  REQUIRE(g.input[0] == 1.0);
}

TEST_CASE("backward accumulates across calls and zero resets", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Identity);
  MlpParams p = ones_params(spec);
  ForwardTape tape;
  forward(spec, p, std::vector<double>{2.0}, tape);
  MlpGrads g = make_grads(spec);
  backward(spec, p, tape, std::vector<double>{1.0}, g);
  backward(spec, p, tape, std::vector<double>{1.0}, g);
  REQUIRE(g.layers[0].w[0] == 4.0);
  g.zero();
  REQUIRE(g.layers[0].w[0] == 0.0);
  REQUIRE(g.input[0] == 0.0);
}

TEST_CASE("backward matches central finite differences", "[nn]") {
  Rng rng(2024);
  const double h = 1e-5;
  double worst = 0.0;
  int nets_checked = 0;
  while (nets_checked < 20) {
    const Index in = 1 + rng.uniform_int(0, 3);
    const Index out_w = 1 + rng.uniform_int(0, 2);
    std::vector<Index> hidden(nets_checked % 2 == 0 ? 2 : 3);
    for (auto& hw : hidden) hw = 1 + rng.uniform_int(0, 4);
    const Activation head = nets_checked % 3 == 0 ? Activation::Identity : Activation::Tanh;
    MlpSpec spec = chain_spec(in, hidden, out_w, head);
    MlpParams p = glorot_init(spec, rng);
    std::vector<double> input(in), cotangent(out_w);
    for (auto& v : input) v = rng.uniform(-2.0, 2.0);
    for (auto& v : cotangent) v = rng.uniform(-1.0, 1.0);

    ForwardTape tape;
    forward(spec, p, input, tape);
    // a relu kink within the step size makes the finite difference itself
    // wrong; redraw rather than loosen the tolerance
    bool near_kink = false;
    for (std::size_t k = 0; k < tape.pre.size() && !near_kink; ++k)
      for (double pre : tape.pre[k])
        if (std::abs(pre) < 1e-3) near_kink = true;
    if (near_kink) continue;
    ++nets_checked;

    MlpGrads g = make_grads(spec);
    backward(spec, p, tape, cotangent, g);

    auto loss = [&](const MlpParams& params, const std::vector<double>& x) {
      auto out = forward(spec, params, x);
      double s = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) s += cotangent[i] * out[i];
      return s;
    };
    auto check = [&](double got, double fd) {
      const double rel = std::abs(got - fd) / std::max({std::abs(got), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
    };
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      for (std::size_t i = 0; i < p.layers[k].w.size(); ++i) {
        MlpParams pp = p;
        pp.layers[k].w[i] += h;
        MlpParams pm = p;
        pm.layers[k].w[i] -= h;
        check(g.layers[k].w[i], (loss(pp, input) - loss(pm, input)) / (2 * h));
      }
      for (std::size_t i = 0; i < p.layers[k].b.size(); ++i) {
        MlpParams pp = p;
        pp.layers[k].b[i] += h;
        MlpParams pm = p;
        pm.layers[k].b[i] -= h;
        check(g.layers[k].b[i], (loss(pp, input) - loss(pm, input)) / (2 * h));
      }
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
      std::vector<double> xp = input, xm = input;
      xp[i] += h;
      xm[i] -= h;
      check(g.input[i], (loss(p, xp) - loss(p, xm)) / (2 * h));
    }
  }
  REQUIRE(nets_checked >= 20);
  REQUIRE(worst < 1e-4);
}

TEST_CASE("adam leaves parameters alone on a zero gradient", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 3}, 1, Activation::Tanh);
  Rng rng(5);
  MlpParams p = glorot_init(spec, rng);
  MlpParams before = p;
  MlpGrads g = make_grads(spec);
  AdamState adam = make_adam(spec);
  adam_step(p, g, adam, 1e-3);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    REQUIRE(p.layers[k].w == before.layers[k].w);
    REQUIRE(p.layers[k].b == before.layers[k].b);
  }
  REQUIRE(adam.step == 1);
}

TEST_CASE("adam first step moves by about the learning rate", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Identity);
  MlpParams p = ones_params(spec);
  MlpGrads g = make_grads(spec);
  for (auto& l : g.layers) {
    std::fill(l.w.begin(), l.w.end(), 0.3);
    std::fill(l.b.begin(), l.b.end(), -0.7);
  }
  AdamState adam = make_adam(spec);
  const double lr = 1e-2;
  adam_step(p, g, adam, lr);
  // bias correction makes the first update lr * g / (|g| + eps)
  REQUIRE(p.layers[0].w[0] == Catch::Approx(1.0 - lr).epsilon(1e-6));
  REQUIRE(p.layers[0].b[0] == Catch::Approx(0.0 + lr).epsilon(1e-6));
}

TEST_CASE("adam two steps reproduce hand accumulators", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Identity);
  MlpParams p = ones_params(spec);
  MlpGrads g = make_grads(spec);
  std::fill(g.layers[0].w.begin(), g.layers[0].w.end(), 0.5);
  AdamState adam = make_adam(spec);
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  adam_step(p, g, adam, lr);
  adam_step(p, g, adam, lr);

  double m = 0.0, v = 0.0, x = 1.0;
  const double grad = 0.5;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    x -= lr * mh / (std::sqrt(vh) + eps);
  }
  REQUIRE(p.layers[0].w[0] == Catch::Approx(x).margin(1e-15));
  REQUIRE(adam.step == 2);
}

TEST_CASE("polyak blending", "[nn]") {
  MlpSpec spec = chain_spec(1, {1, 1}, 1, Activation::Identity);
  MlpParams online = ones_params(spec);
  MlpParams target = ones_params(spec);
  target.layers[0].w[0] = 2.0;
  online.layers[0].w[0] = 4.0;

  SECTION("factor zero copies the online net") {
    polyak_update(target, online, 0.0);
    REQUIRE(target.layers[0].w[0] == 4.0);
  }
  SECTION("halfway between 2 and 4 is 3") {
    polyak_update(target, online, 0.5);
    REQUIRE(target.layers[0].w[0] == 3.0);
  }
  SECTION("equal nets are a fixed point") {
    MlpParams same = online;
    polyak_update(same, online, 0.995);
    REQUIRE(same.layers[0].w[0] == online.layers[0].w[0]);
  }
  SECTION("distance to the online net contracts by the factor") {
    Rng rng(13);
    MlpSpec big = chain_spec(3, {8, 8}, 2, Activation::Tanh);
    MlpParams o = glorot_init(big, rng);
    MlpParams t = glorot_init(big, rng);
    double before = 0.0;
    for (std::size_t k = 0; k < t.layers.size(); ++k)
      for (std::size_t i = 0; i < t.layers[k].w.size(); ++i)
        before = std::max(before, std::abs(t.layers[k].w[i] - o.layers[k].w[i]));
    polyak_update(t, o, 0.995);
    double after = 0.0;
    for (std::size_t k = 0; k < t.layers.size(); ++k)
      for (std::size_t i = 0; i < t.layers[k].w.size(); ++i)
        after = std::max(after, std::abs(t.layers[k].w[i] - o.layers[k].w[i]));
    REQUIRE(after <= 0.995 * before + 1e-12);
  }
  SECTION("factor outside the unit interval is rejected") {
    REQUIRE_THROWS_AS(polyak_update(target, online, 1.5), std::invalid_argument);
  }
}

TEST_CASE("weight file round trip is bit exact", "[nn]") {
  MlpSpec spec = chain_spec(6, {5, 4, 3}, 1, Activation::Tanh);
  Rng rng(99);
  MlpParams p = glorot_init(spec, rng);
  const auto path = temp_net_path("rlqp_nn_roundtrip.bin");
  save_net(path.string(), spec, p);
  auto [spec2, p2] = load_net(path.string());
  REQUIRE(spec2.input_width == spec.input_width);
  REQUIRE(spec2.hidden == spec.hidden);
  REQUIRE(spec2.output_width == spec.output_width);
  REQUIRE(spec2.hidden_activation == spec.hidden_activation);
  REQUIRE(spec2.output_activation == spec.output_activation);
  REQUIRE(p2.layers.size() == p.layers.size());
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    REQUIRE(std::memcmp(p2.layers[k].w.data(), p.layers[k].w.data(),
                        p.layers[k].w.size() * sizeof(double)) == 0);
    REQUIRE(std::memcmp(p2.layers[k].b.data(), p.layers[k].b.data(),
                        p.layers[k].b.size() * sizeof(double)) == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("weight file rejects damage", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 3}, 1, Activation::Tanh);
  Rng rng(1);
  MlpParams p = glorot_init(spec, rng);
  const auto path = temp_net_path("rlqp_nn_damage.bin");
  save_net(path.string(), spec, p);

  SECTION("flipped magic byte") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
    f.close();
    REQUIRE_THROWS_WITH(load_net(path.string()), Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("truncated parameters") {
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 4);
    REQUIRE_THROWS_WITH(load_net(path.string()), Catch::Matchers::ContainsSubstring("truncated"));
  }
  SECTION("trailing bytes") {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.put('\0');
    f.close();
    REQUIRE_THROWS_WITH(load_net(path.string()), Catch::Matchers::ContainsSubstring("trailing"));
  }
  SECTION("unsupported hidden layer count in the header") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12);  // hidden-count field
    std::uint32_t impostor = 7;
    f.write(reinterpret_cast<const char*>(&impostor), 4);
    f.close();
    REQUIRE_THROWS_WITH(load_net(path.string()),
                        Catch::Matchers::ContainsSubstring("hidden layer count"));
  }
  SECTION("missing file") {
    REQUIRE_THROWS_WITH(load_net("/nonexistent/rlqp_net.bin"),
                        Catch::Matchers::ContainsSubstring("cannot open"));
  }
  std::filesystem::remove(path);
}

TEST_CASE("saving rejects parameters that do not match the spec", "[nn]") {
  MlpSpec spec = chain_spec(2, {3, 3}, 1, Activation::Tanh);
  Rng rng(2);
  MlpParams p = glorot_init(spec, rng);
  p.layers[1].w.pop_back();
  const auto path = temp_net_path("rlqp_nn_badshape.bin");
  REQUIRE_THROWS_WITH(save_net(path.string(), spec, p),
                      Catch::Matchers::ContainsSubstring("shape"));
  std::filesystem::remove(path);
}
