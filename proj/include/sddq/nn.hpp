#pragma once

// Minimal dense/LSTM kernel with hand-written backprop, RMSProp and
// global-norm gradient clipping. Everything is double precision and
// row-major.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sddq {

using Rng = std::mt19937_64;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace sddq

namespace sddq::nn {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid, kSoftmax };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// A named, shaped view onto one parameter array of a network.
struct ParamView {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::span<double> values;
};

// One real array per parameter array, shape-matched to a network's
// parameter list.
struct GradientSet {
  std::vector<std::vector<double>> arrays;

  static GradientSet zeros_like(std::span<const ParamView> params);
  double global_norm() const;
  void scale(double factor);
  void add(const GradientSet& other);
  bool shape_matches(std::span<const ParamView> params) const;
};

// Global L2-norm clipping over every array in the set. Returns the
// pre-clip norm.
double clip_gradients(GradientSet& grads, double max_norm);

struct RmsPropConfig {
  double learning_rate = 0.001;
  double decay = 0.9;
  double epsilon = 1e-8;
};

class RmsProp {
 public:
  RmsProp() = default;
  explicit RmsProp(RmsPropConfig config);

  // acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr*g/(sqrt(acc)+eps)
  void step(std::span<const ParamView> params, const GradientSet& grads);

  const RmsPropConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& accumulators() const { return accumulators_; }

 private:
  RmsPropConfig config_;
  std::vector<std::vector<double>> accumulators_;
};

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::kIdentity;
};

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::kIdentity;
};

class DenseNet;

struct DenseCache {
  const DenseNet* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<std::vector<double>> inputs;   // per layer
  std::vector<std::vector<double>> outputs;  // per layer, post-activation
};

struct DenseGradients {
  GradientSet params;
  std::vector<double> input;
};

class DenseNet {
 public:
  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
  static DenseNet random(std::span<const LayerSpec> specs, Rng& rng);
  static DenseNet zeros(std::span<const LayerSpec> specs);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  std::vector<double> forward(std::span<const double> input, DenseCache* cache = nullptr) const;

  DenseGradients backward(const DenseCache& cache, std::span<const double> output_grad) const;
  // Adds parameter gradients into `into`; returns the input gradient.
  std::vector<double> backward_accumulate(const DenseCache& cache,
                                          std::span<const double> output_grad,
                                          GradientSet& into) const;

  // Parameter order: layer0.weight, layer0.bias, layer1.weight, ...
  // Obtaining mutable views invalidates outstanding caches.
  std::vector<ParamView> parameters(const std::string& prefix = "");
  std::vector<ParamView> parameters(const std::string& prefix = "") const;
  std::size_t parameter_count() const;

  std::uint64_t revision() const { return revision_; }
  void touch() { ++revision_; }

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t revision_ = 0;
};

// LSTM sequence scorer: linear input encoder -> LSTM cell -> sigmoid
// head, one score per position. Gate order in the packed weight matrix is
// input, forget, output, candidate.
struct LstmShape {
  std::size_t input = 0;
  std::size_t encoder = 80;
  std::size_t cells = 126;
};

class LstmNet;

struct LstmCache {
  const LstmNet* owner = nullptr;
  std::uint64_t revision = 0;
  std::vector<std::vector<double>> inputs;
  std::vector<std::vector<double>> encoded;
  std::vector<std::vector<double>> gates;   // 4H post-activation
  std::vector<std::vector<double>> cells;   // c_t
  std::vector<std::vector<double>> hidden;  // h_t
  std::vector<double> scores;
};

class LstmNet {
 public:
  LstmNet() = default;
  static LstmNet random(LstmShape shape, Rng& rng);
  static LstmNet zeros(LstmShape shape);

  const LstmShape& shape() const { return shape_; }

  std::vector<double> forward(std::span<const std::vector<double>> sequence,
                              LstmCache* cache = nullptr) const;
  // score_grads[t] = dL/dscore_t. Adds parameter gradients into `into`.
  void backward_accumulate(const LstmCache& cache, std::span<const double> score_grads,
                           GradientSet& into) const;
  GradientSet backward(const LstmCache& cache, std::span<const double> score_grads) const;

  // Order: encoder.weight, encoder.bias, lstm.weight, lstm.bias,
  // head.weight, head.bias.
  std::vector<ParamView> parameters(const std::string& prefix = "");
  std::vector<ParamView> parameters(const std::string& prefix = "") const;

  Matrix& head_weight() { ++revision_; return head_w_; }
  std::vector<double>& head_bias() { ++revision_; return head_b_; }

  std::uint64_t revision() const { return revision_; }

 private:
  LstmShape shape_;
  Matrix enc_w_;
  std::vector<double> enc_b_;
  Matrix gate_w_;  // 4H x (E + H)
  std::vector<double> gate_b_;
  Matrix head_w_;  // 1 x H
  std::vector<double> head_b_;
  std::uint64_t revision_ = 0;
};

// Loss helpers. Each returns the loss and writes dL/d(prediction).
double mse_loss(std::span<const double> prediction, std::span<const double> target,
                std::span<double> grad);
double bce_loss(double prediction, double target, double& grad);
double categorical_ce_loss(std::span<const double> probs, std::size_t target,
                           std::span<double> grad);

double sigmoid(double x);

// Central-difference gradient check over every parameter entry.
// Returns max |ga - gn| / max(1e-8, |ga| + |gn|); 0 for an empty
// parameter list. Throws ContractError on a non-finite loss.
double finite_diff_check(std::span<const ParamView> params, const GradientSet& analytic,
                         const std::function<double()>& loss, double h = 1e-4);

// Flat JSON checkpoint: one entry per parameter array with name, shape and
// row-major values. Doubles round-trip bit-exactly.
struct NamedArray {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, std::span<const ParamView> params,
                     const std::string& kind);
std::vector<NamedArray> load_checkpoint(const std::string& path, const std::string& kind);
// Copies arrays into params by name; throws ConfigError on a missing name or
// a shape mismatch.
void assign_parameters(std::span<const ParamView> params, std::span<const NamedArray> arrays);

}  // namespace sddq::nn
