#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sddq/nn.hpp"

using namespace sddq;
using namespace sddq::nn;

namespace {

// Straight-line re-evaluation used as an oracle for DenseNet::forward.
std::vector<double> reference_forward(const DenseNet& net, std::vector<double> x) {
  for (const auto& layer : net.layers()) {
    std::vector<double> y(layer.weight.rows);
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      double acc = layer.bias[r];
      for (std::size_t c = 0; c < layer.weight.cols; ++c) acc += layer.weight(r, c) * x[c];
      y[r] = acc;
    }
    switch (layer.activation) {
      case Activation::kIdentity: break;
      case Activation::kRelu: for (double& v : y) v = v > 0 ? v : 0; break;
      case Activation::kTanh: for (double& v : y) v = std::tanh(v); break;
      case Activation::kSigmoid: for (double& v : y) v = 1.0 / (1.0 + std::exp(-v)); break;
      case Activation::kSoftmax: {
        double m = y[0];
        for (double v : y) m = std::max(m, v);
        double z = 0;
        for (double& v : y) z += (v = std::exp(v - m));
        for (double& v : y) v /= z;
        break;
      }
    }
    x = std::move(y);
  }
  return x;
}

std::vector<double> random_vector(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// A batch MSE loss over a dense net; returns loss and fills grads.
double dense_mse(const DenseNet& net, const std::vector<std::vector<double>>& xs,
                 const std::vector<std::vector<double>>& ts, GradientSet* grads) {
  double loss = 0;
  DenseCache cache;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto y = net.forward(xs[i], &cache);
    std::vector<double> g(y.size());
    loss += mse_loss(y, ts[i], g) / xs.size();
    for (double& v : g) v /= xs.size();
    if (grads) net.backward_accumulate(cache, g, *grads);
  }
  return loss;
}

}  // namespace

TEST_CASE("zero-weight softmax head is uniform") {
  const LayerSpec specs[] = {{3, 4, Activation::kSoftmax}};
  const auto net = DenseNet::zeros(specs);
  const double x[] = {0.3, -2.0, 5.0};
  const auto y = net.forward(x);
  REQUIRE(y.size() == 4);
  for (double v : y) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("identity layer passes input through") {
  DenseLayer layer{Matrix(3, 3), {0, 0, 0}, Activation::kIdentity};
  for (std::size_t i = 0; i < 3; ++i) layer.weight(i, i) = 1.0;
  const DenseNet net({layer});
  const std::vector<double> x = {1.5, -2.0, 0.25};
  CHECK(net.forward(x) == x);
}

TEST_CASE("random dense net matches straight-line evaluation") {
  Rng rng(42);
  const LayerSpec specs[] = {{6, 9, Activation::kRelu}, {9, 7, Activation::kTanh}, {7, 5, Activation::kSoftmax}};
  const auto net = DenseNet::random(specs, rng);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_vector(6, rng);
    const auto a = net.forward(x);
    const auto b = reference_forward(net, x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
}

TEST_CASE("dense construction and dimension errors") {
  Rng rng(1);
  const LayerSpec bad_chain[] = {{3, 4, Activation::kRelu}, {5, 2, Activation::kIdentity}};
  CHECK_THROWS_AS(DenseNet::random(bad_chain, rng), ConfigError);
  const LayerSpec mid_softmax[] = {{3, 4, Activation::kSoftmax}, {4, 2, Activation::kIdentity}};
  CHECK_THROWS_AS(DenseNet::random(mid_softmax, rng), ConfigError);
  const LayerSpec ok[] = {{3, 2, Activation::kIdentity}};
  const auto net = DenseNet::random(ok, rng);
  const double x[] = {1, 2};
  CHECK_THROWS_AS(net.forward(x), ConfigError);
}

TEST_CASE("softmax is a distribution with positive entries") {
  Rng rng(3);
  const LayerSpec specs[] = {{4, 11, Activation::kSoftmax}};
  const auto net = DenseNet::random(specs, rng);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_vector(4, rng);
    for (double& v : x) v *= 40.0;  // large logits stress stability
    const auto y = net.forward(x);
    double sum = 0;
    for (double v : y) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("sigmoid and tanh heads stay in range") {
  Rng rng(5);
  const LayerSpec s[] = {{3, 2, Activation::kSigmoid}};
  const LayerSpec t[] = {{3, 2, Activation::kTanh}};
  const auto ns = DenseNet::random(s, rng);
  const auto nt = DenseNet::random(t, rng);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_vector(3, rng);
    for (double v : ns.forward(x)) CHECK((v > 0.0 && v < 1.0));
    for (double v : nt.forward(x)) CHECK((v > -1.0 && v < 1.0));
  }
}

TEST_CASE("dense backward on zero output gradient is zero") {
  Rng rng(7);
  const LayerSpec specs[] = {{4, 5, Activation::kTanh}, {5, 3, Activation::kIdentity}};
  const auto net = DenseNet::random(specs, rng);
  DenseCache cache;
  net.forward(random_vector(4, rng), &cache);
  const std::vector<double> zero(3, 0.0);
  const auto g = net.backward(cache, zero);
  CHECK(g.params.global_norm() == 0.0);
  for (double v : g.input) CHECK(v == 0.0);
}

TEST_CASE("single weight chain rule") {
  DenseLayer layer{Matrix(1, 1, 0.7), {0.0}, Activation::kIdentity};
  const DenseNet net({layer});
  DenseCache cache;
  const double x[] = {3.0};
  net.forward(x, &cache);
  const double one[] = {1.0};
  const auto g = net.backward(cache, one);
  CHECK(g.params.arrays[0][0] == doctest::Approx(3.0));
  CHECK(g.params.arrays[1][0] == doctest::Approx(1.0));
  CHECK(g.input[0] == doctest::Approx(0.7));
}

TEST_CASE("stale dense cache is a contract violation") {
  Rng rng(9);
  const LayerSpec specs[] = {{2, 2, Activation::kTanh}};
  auto net = DenseNet::random(specs, rng);
  auto other = DenseNet::random(specs, rng);
  DenseCache cache;
  net.forward(random_vector(2, rng), &cache);
  const double g[] = {1.0, 1.0};
  CHECK_THROWS_AS(other.backward(cache, g), ContractError);
  net.parameters();  // mutable access invalidates caches
  CHECK_THROWS_AS(net.backward(cache, g), ContractError);
}

TEST_CASE("dense gradients agree with finite differences for every activation") {
  for (Activation out : {Activation::kIdentity, Activation::kSigmoid, Activation::kTanh, Activation::kSoftmax}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Rng rng(seed);
      const LayerSpec specs[] = {{5, 7, Activation::kTanh}, {7, 6, Activation::kRelu}, {6, 4, out}};
      auto net = DenseNet::random(specs, rng);
      std::vector<std::vector<double>> xs, ts;
      for (int i = 0; i < 4; ++i) {
        xs.push_back(random_vector(5, rng));
        ts.push_back(random_vector(4, rng));
      }
      GradientSet grads = GradientSet::zeros_like(std::as_const(net).parameters());
      dense_mse(net, xs, ts, &grads);
      const double err = finite_diff_check(net.parameters(), grads, [&] { return dense_mse(net, xs, ts, nullptr); });
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("finite-difference check catches a sabotaged gradient") {
  Rng rng(11);
  const LayerSpec specs[] = {{3, 4, Activation::kTanh}, {4, 2, Activation::kIdentity}};
  auto net = DenseNet::random(specs, rng);
  std::vector<std::vector<double>> xs{random_vector(3, rng)}, ts{random_vector(2, rng)};
  GradientSet zero = GradientSet::zeros_like(std::as_const(net).parameters());
  const double err = finite_diff_check(net.parameters(), zero, [&] { return dense_mse(net, xs, ts, nullptr); });
  CHECK(err > 0.99);
}

TEST_CASE("finite-difference check conventions") {
  CHECK(finite_diff_check({}, GradientSet{}, [] { return 0.0; }) == 0.0);
  DenseLayer layer{Matrix(1, 1, 1.0), {0.0}, Activation::kIdentity};
  DenseNet net({layer});
  auto g = GradientSet::zeros_like(std::as_const(net).parameters());
  CHECK_THROWS_AS(finite_diff_check(net.parameters(), g, [] { return NAN; }), ContractError);
}

TEST_CASE("lstm zero weights score one half") {
  const auto net = LstmNet::zeros({4, 3, 5});
  const std::vector<std::vector<double>> seq = {{1, 2, 3, 4}, {-1, 0, 1, 0}};
  for (double s : net.forward(seq)) CHECK(s == doctest::Approx(0.5));
  CHECK(net.forward(std::span<const std::vector<double>>{}).empty());
}

TEST_CASE("lstm scores are causal and in (0,1)") {
  Rng rng(13);
  const auto net = LstmNet::random({6, 5, 7}, rng);
  std::vector<std::vector<double>> seq;
  for (int i = 0; i < 8; ++i) seq.push_back(random_vector(6, rng));
  const auto full = net.forward(seq);
  for (double s : full) CHECK((s > 0.0 && s < 1.0));
  for (std::size_t t = 1; t <= seq.size(); ++t) {
    const auto prefix = net.forward(std::span<const std::vector<double>>(seq.data(), t));
    for (std::size_t i = 0; i < t; ++i) CHECK(prefix[i] == full[i]);
  }
}

TEST_CASE("lstm rejects elements of the wrong width") {
  const auto net = LstmNet::zeros({3, 2, 2});
  const std::vector<std::vector<double>> seq = {{1, 2}};
  CHECK_THROWS_AS(net.forward(seq), ConfigError);
}

TEST_CASE("lstm forget bias starts at one") {
  Rng rng(2);
  auto net = LstmNet::random({3, 2, 4}, rng);
  const auto params = std::as_const(net).parameters();
  const auto& bias = params[3];
  for (std::size_t j = 0; j < 4; ++j) CHECK(bias.values[j] == 0.0);
  for (std::size_t j = 4; j < 8; ++j) CHECK(bias.values[j] == 1.0);
}

TEST_CASE("lstm BPTT agrees with finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    auto net = LstmNet::random({5, 4, 6}, rng);
    std::vector<std::vector<double>> seq;
    for (int i = 0; i < 5; ++i) seq.push_back(random_vector(5, rng));
    const std::vector<double> labels = {1, 0, 1, 1, 0};
    auto loss = [&](GradientSet* grads) {
      LstmCache cache;
      const auto s = net.forward(seq, &cache);
      std::vector<double> g(s.size());
      double total = 0;
      for (std::size_t t = 0; t < s.size(); ++t) {
        total += bce_loss(s[t], labels[t], g[t]) / s.size();
        g[t] /= s.size();
      }
      if (grads) net.backward_accumulate(cache, g, *grads);
      return total;
    };
    GradientSet grads = GradientSet::zeros_like(std::as_const(net).parameters());
    loss(&grads);
    CHECK(finite_diff_check(net.parameters(), grads, [&] { return loss(nullptr); }) < 1e-4);
  }
}

TEST_CASE("clip_gradients scaling cases") {
  GradientSet g;
  g.arrays = {{1.2, 0.0}, {1.6}};  // norm 2
  CHECK(clip_gradients(g, 1.0) == doctest::Approx(2.0));
  CHECK(g.arrays[0][0] == doctest::Approx(0.6));
  CHECK(g.arrays[1][0] == doctest::Approx(0.8));
  CHECK(g.global_norm() == doctest::Approx(1.0));

  GradientSet small;
  small.arrays = {{0.3, 0.4}};  // norm 0.5
  clip_gradients(small, 1.0);
  CHECK(small.arrays[0][0] == 0.3);
  CHECK(small.arrays[0][1] == 0.4);

  GradientSet zero;
  zero.arrays = {{0.0, 0.0}};
  clip_gradients(zero, 1.0);
  CHECK(zero.arrays[0][0] == 0.0);
}

TEST_CASE("clip_gradients is idempotent") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    GradientSet g;
    g.arrays = {random_vector(5, rng), random_vector(3, rng)};
    g.scale(3.0);
    clip_gradients(g, 1.0);
    GradientSet twice = g;
    clip_gradients(twice, 1.0);
    for (std::size_t a = 0; a < g.arrays.size(); ++a) {
      for (std::size_t i = 0; i < g.arrays[a].size(); ++i) {
        CHECK(twice.arrays[a][i] == doctest::Approx(g.arrays[a][i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("rmsprop single step from a fresh accumulator") {
  std::vector<double> p = {0.0};
  const std::vector<ParamView> params = {{"w", 1, 1, std::span<double>(p)}};
  GradientSet g;
  g.arrays = {{1.0}};
  RmsProp opt({0.001, 0.9, 1e-8});
  opt.step(params, g);
  CHECK(opt.accumulators()[0][0] == doctest::Approx(0.1));
  CHECK(p[0] == doctest::Approx(-0.0031623).epsilon(1e-4));
}

TEST_CASE("rmsprop zero gradient decays the accumulator only") {
  std::vector<double> p = {0.5, -0.5};
  const std::vector<ParamView> params = {{"w", 2, 1, std::span<double>(p)}};
  RmsProp opt;
  GradientSet g;
  g.arrays = {{1.0, 2.0}};
  opt.step(params, g);
  const auto before = p;
  const auto acc = opt.accumulators()[0];
  g.arrays = {{0.0, 0.0}};
  opt.step(params, g);
  CHECK(p == before);
  CHECK(opt.accumulators()[0][0] == doctest::Approx(0.9 * acc[0]));
  CHECK(opt.accumulators()[0][1] == doctest::Approx(0.9 * acc[1]));
}

TEST_CASE("rmsprop with a constant gradient approaches lr-sized steps") {
  std::vector<double> p = {0.0};
  const std::vector<ParamView> params = {{"w", 1, 1, std::span<double>(p)}};
  RmsProp opt;
  GradientSet g;
  g.arrays = {{0.5}};
  double last = 0.0;
  for (int i = 0; i < 300; ++i) {
    const double before = p[0];
    opt.step(params, g);
    last = before - p[0];
  }
  CHECK(opt.accumulators()[0][0] == doctest::Approx(0.25).epsilon(1e-6));
  CHECK(last == doctest::Approx(0.001).epsilon(1e-6));
  for (double a : opt.accumulators()[0]) CHECK(a >= 0.0);
}

TEST_CASE("rmsprop with zero learning rate leaves parameters bit-identical") {
  Rng rng(19);
  auto p = random_vector(6, rng);
  const auto before = p;
  const std::vector<ParamView> params = {{"w", 6, 1, std::span<double>(p)}};
  GradientSet g;
  g.arrays = {random_vector(6, rng)};
  RmsPropConfig cfg;
  cfg.learning_rate = 0.0;
  RmsProp opt(cfg);
  opt.step(params, g);
  CHECK(p == before);
}

TEST_CASE("forward and backward are deterministic") {
  Rng a(23), b(23);
  const LayerSpec specs[] = {{4, 6, Activation::kRelu}, {6, 3, Activation::kIdentity}};
  const auto na = DenseNet::random(specs, a);
  const auto nb = DenseNet::random(specs, b);
  const auto x = random_vector(4, a);
  DenseCache ca, cb;
  CHECK(na.forward(x, &ca) == nb.forward(x, &cb));
  const double g[] = {0.1, -0.2, 0.3};
  CHECK(na.backward(ca, g).params.arrays == nb.backward(cb, g).params.arrays);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  Rng rng(29);
  const LayerSpec specs[] = {{5, 4, Activation::kTanh}, {4, 2, Activation::kIdentity}};
  auto net = DenseNet::random(specs, rng);
  const auto path = (std::filesystem::temp_directory_path() / "sddq_ckpt_test.json").string();
  save_checkpoint(path, std::as_const(net).parameters("q."), "test");
  auto copy = DenseNet::zeros(specs);
  assign_parameters(copy.parameters("q."), load_checkpoint(path, "test"));
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    CHECK(copy.layers()[l].weight.values == net.layers()[l].weight.values);
    CHECK(copy.layers()[l].bias == net.layers()[l].bias);
  }
  CHECK_THROWS_AS(load_checkpoint(path, "other_kind"), ConfigError);
  const LayerSpec narrower[] = {{5, 3, Activation::kTanh}, {3, 2, Activation::kIdentity}};
  auto wrong = DenseNet::zeros(narrower);
  CHECK_THROWS_AS(assign_parameters(wrong.parameters("q."), load_checkpoint(path, "test")), ConfigError);
  std::filesystem::remove(path);
}
