#include <doctest.h>

#include <cmath>
#include <limits>

#include "vra/fast_engine.hpp"
#include "vra/forward.hpp"
#include "vra/rng.hpp"
#include "vra/train.hpp"

using namespace vra;

namespace {

NetworkModel random_net(uint64_t seed, bool sigmoid, bool deep) {
  NetworkModel m;
  m.input_shape = {6};
  m.num_classes = 3;
  LayerSpec d1 = LayerSpec::dense(6, 10);
  LayerSpec d2 = LayerSpec::dense(10, deep ? 8 : 3);
  Rng rng(seed);
  auto fill = [&rng](LayerSpec& l, double s) {
    for (float& w : l.weights) w = float(rng.next_gaussian() * s);
    for (float& b : l.bias) b = float(rng.next_gaussian() * 0.1);
  };
  fill(d1, 0.5);
  fill(d2, 0.5);
  m.layers.push_back(d1);
  m.layers.push_back(sigmoid ? LayerSpec::sigmoid() : LayerSpec::relu());
  m.layers.push_back(d2);
  if (deep) {
    m.layers.push_back(sigmoid ? LayerSpec::sigmoid() : LayerSpec::relu());
    LayerSpec d3 = LayerSpec::dense(8, 3);
    fill(d3, 0.5);
    m.layers.push_back(d3);
  }
  return m;
}

// Central finite difference of the loss along the injected neuron's output,
// on the double-precision shadow forward. Returns false when the bracket
// straddles a nonsmooth point (one-sided differences disagree), in which case
// the comparison is not a valid derivative check.
bool central_fd(const NetworkModel& m, std::span<const float> input,
                NeuronRef target, double at_delta, double h, double* out) {
  auto loss_at = [&](double delta) {
    InjectionHook hook = InjectionHook::add(target, float(delta));
    std::vector<double> logits = forward_logits_f64(m, input, &hook);
    // golden top from the float golden pass, as the implementation defines it
    Tensor batch({1, int(input.size())},
                 std::vector<float>(input.begin(), input.end()));
    int t = forward(m, batch).golden_top[0];
    return misclassification_loss_f64(logits, t);
  };
  double lp = loss_at(at_delta + h);
  double lm = loss_at(at_delta - h);
  double l0 = loss_at(at_delta);
  double fwd = (lp - l0) / h;
  double bwd = (l0 - lm) / h;
  double central = (lp - lm) / (2.0 * h);
  *out = central;
  double scale = std::max({std::fabs(fwd), std::fabs(bwd), 1e-12});
  return std::fabs(fwd - bwd) / scale <= 2e-2;  // smooth across the bracket
}

}  // namespace

TEST_CASE("gradient is exactly zero on a dead downstream path") {
  NetworkModel m;
  m.input_shape = {2};
  m.num_classes = 2;
  LayerSpec d1 = LayerSpec::dense(2, 2);
  d1.weights = {1.0f, 0.0f, 0.0f, 1.0f};
  LayerSpec d2 = LayerSpec::dense(2, 2);
  d2.weights = {0.0f, 0.7f, 0.0f, -0.4f};  // column 0 is all zero
  m.layers.push_back(d1);
  m.layers.push_back(d2);

  Tensor batch({3, 2}, {1.0f, 2.0f, -0.5f, 0.25f, 3.0f, -1.0f});
  InjectionHook hook = InjectionHook::add(NeuronRef{0, 0}, 10000.0f);
  std::vector<NeuronGradient> g = grad_wrt_neuron(m, batch, hook);
  for (const NeuronGradient& ng : g) {
    CHECK(ng.sum_grad == 0.0);
    CHECK(ng.loss_grad == 0.0);
    CHECK_FALSE(ng.undefined);
  }
}

TEST_CASE("single dense layer: gradient sign matches the analytic derivative") {
  // Target neuron feeds a 2-class dense layer with weights w0, w1; the loss
  // falls with the neuron value iff the non-top logit grows faster.
  for (auto [w0, w1] : std::vector<std::pair<float, float>>{
           {1.0f, -1.0f}, {-0.5f, 2.0f}, {2.0f, 0.5f}}) {
    NetworkModel m;
    m.input_shape = {1};
    m.num_classes = 2;
    LayerSpec d1 = LayerSpec::dense(1, 1);
    d1.weights = {1.0f};
    LayerSpec d2 = LayerSpec::dense(1, 2);
    d2.weights = {w0, w1};
    d2.bias = {0.1f, 0.0f};
    m.layers.push_back(d1);
    m.layers.push_back(d2);

    Tensor batch({1, 1}, {0.5f});
    ForwardResult fr = forward(m, batch);
    int t = fr.golden_top[0];
    InjectionHook hook = InjectionHook::add(NeuronRef{0, 0}, 0.25f);
    std::vector<NeuronGradient> g = grad_wrt_neuron(m, batch, hook);
    // d(sum)/dx for 2 classes is w_t - w_other; the sigmoid factor is
    // positive, so the sign carries over to the loss gradient.
    double analytic = double(t == 0 ? w0 - w1 : w1 - w0);
    CHECK(g[0].sum_grad == doctest::Approx(analytic).epsilon(1e-6));
    if (analytic != 0.0) {
      CHECK((g[0].loss_grad > 0) == (analytic > 0));
    }
  }
}

TEST_CASE("gradient matches central finite differences (step 1e-2)") {
  int checked = 0, redrawn = 0;
  uint64_t seed = 1000;
  while (checked < 100) {
    ++seed;
    Rng rng(seed);
    bool sigmoid = rng.next_below(2) == 0;
    bool deep = rng.next_below(2) == 0;
    NetworkModel m = random_net(splitmix64(seed), sigmoid, deep);
    std::vector<float> input(6);
    for (float& v : input) v = float(rng.next_gaussian());
    std::vector<Surface> surfaces = analysis_surfaces(m);
    int surf = int(rng.next_below(uint64_t(surfaces.size())));
    int neuron = int(rng.next_below(uint64_t(surfaces[size_t(surf)].size)));
    double at = rng.next_below(2) ? 0.0 : rng.next_uniform(-0.5, 0.5);

    double fd = 0.0;
    if (!central_fd(m, input, NeuronRef{surf, neuron}, at, 1e-2, &fd)) {
      ++redrawn;  // bracket crossed a ReLU switch; not a valid FD estimate
      REQUIRE(redrawn < 200);
      continue;
    }
    Tensor batch({1, 6}, input);
    InjectionHook hook = InjectionHook::add(NeuronRef{surf, neuron}, float(at));
    std::vector<NeuronGradient> g = grad_wrt_neuron(m, batch, hook);
    double rel =
        std::fabs(g[0].loss_grad - fd) / std::max(1e-6, std::fabs(fd));
    CHECK(rel <= 1e-3);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("event-driven tangent agrees with the reference gradient") {
  for (uint64_t seed : {5u, 6u, 7u, 8u}) {
    NetworkModel m = random_net(seed * 31, seed % 2 == 0, seed % 3 == 0);
    Rng rng(seed);
    std::vector<float> data(4 * 6);
    for (float& v : data) v = float(rng.next_gaussian());
    Tensor all({4, 6}, data);
    GoldenCache cache = GoldenCache::build(m, all, {}, 1);
    InjectionEngine engine(cache);

    for (int j = 0; j < 4; ++j) {
      for (int neuron = 0; neuron < 10; neuron += 3) {
        float delta = float(rng.next_uniform(-2.0, 2.0));
        ProbeOutcome probe = engine.run(j, 0, neuron, false, delta, true);
        Tensor one({1, 6}, std::vector<float>(data.begin() + j * 6,
                                              data.begin() + (j + 1) * 6));
        InjectionHook hook = InjectionHook::add(NeuronRef{0, neuron}, delta);
        NeuronGradient ref = grad_wrt_neuron(m, one, hook)[0];
        if (ref.sum_grad == 0.0) {
          CHECK(probe.tangent == 0.0f);
        } else {
          CHECK(double(probe.tangent) ==
                doctest::Approx(ref.sum_grad).epsilon(1e-3));
        }
      }
    }
  }
}

TEST_CASE("NaN in the downstream path flags the gradient undefined") {
  NetworkModel m = random_net(777, false, false);
  Tensor batch({1, 6}, {1.0f, -1.0f, 0.5f, 0.25f, 2.0f, -0.5f});
  float nan = std::numeric_limits<float>::quiet_NaN();
  InjectionHook hook = InjectionHook::replace(NeuronRef{0, 2}, nan);
  std::vector<NeuronGradient> g = grad_wrt_neuron(m, batch, hook);
  CHECK(g[0].undefined);

  GoldenCache cache = GoldenCache::build(m, batch, {}, 1);
  InjectionEngine engine(cache);
  ProbeOutcome probe = engine.run(0, 0, 2, true, nan, true);
  CHECK(probe.tangent_undefined);
}
