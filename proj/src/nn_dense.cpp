#include <algorithm>
#include <cmath>

#include "sddq/nn.hpp"

namespace sddq::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kSoftmax: return "softmax";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  for (auto a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh,
                 Activation::kSigmoid, Activation::kSoftmax}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown activation '" + name + "'");
}

double sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void apply_activation(Activation act, std::vector<double>& z) {
  switch (act) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      for (double& v : z) v = v > 0 ? v : 0.0;
      break;
    case Activation::kTanh:
      for (double& v : z) v = std::tanh(v);
      break;
    case Activation::kSigmoid:
      for (double& v : z) v = sigmoid(v);
      break;
    case Activation::kSoftmax: {
      const double peak = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (double& v : z) {
        v = std::exp(v - peak);
        total += v;
      }
      for (double& v : z) v /= total;
      break;
    }
  }
}

// dL/dz from dL/dy and the post-activation output y.
void activation_backward(Activation act, std::span<const double> y, std::span<const double> gy,
                         std::vector<double>& gz) {
  gz.resize(y.size());
  switch (act) {
    case Activation::kIdentity:
      std::copy(gy.begin(), gy.end(), gz.begin());
      break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < y.size(); ++i) gz[i] = y[i] > 0 ? gy[i] : 0.0;
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < y.size(); ++i) gz[i] = gy[i] * (1.0 - y[i] * y[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) gz[i] = gy[i] * y[i] * (1.0 - y[i]);
      break;
    case Activation::kSoftmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) gz[i] = y[i] * (gy[i] - dot);
      break;
    }
  }
}

}  // namespace

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    if (layer.weight.values.size() != layer.weight.rows * layer.weight.cols ||
        layer.bias.size() != layer.weight.rows) {
      throw ConfigError("dense layer " + std::to_string(k) + ": bias/weight shape mismatch");
    }
    if (k > 0 && layer.weight.cols != layers_[k - 1].weight.rows) {
      throw ConfigError("dense layer " + std::to_string(k) + ": input dimension " +
                        std::to_string(layer.weight.cols) + " does not match previous output " +
                        std::to_string(layers_[k - 1].weight.rows));
    }
    if (layer.activation == Activation::kSoftmax && k + 1 != layers_.size()) {
      throw ConfigError("softmax is only allowed as the terminal activation");
    }
  }
}

DenseNet DenseNet::random(std::span<const LayerSpec> specs, Rng& rng) {
  std::vector<DenseLayer> layers;
  for (const auto& spec : specs) {
    DenseLayer layer{Matrix(spec.out, spec.in), std::vector<double>(spec.out, 0.0),
                     spec.activation};
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : layer.weight.values) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

DenseNet DenseNet::zeros(std::span<const LayerSpec> specs) {
  std::vector<DenseLayer> layers;
  for (const auto& spec : specs) {
    layers.push_back({Matrix(spec.out, spec.in), std::vector<double>(spec.out, 0.0),
                      spec.activation});
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_dim() const { return layers_.empty() ? 0 : layers_.front().weight.cols; }

std::size_t DenseNet::output_dim() const { return layers_.empty() ? 0 : layers_.back().weight.rows; }

std::vector<double> DenseNet::forward(std::span<const double> input, DenseCache* cache) const {
  if (input.size() != input_dim()) {
    throw ConfigError("dense forward: input length " + std::to_string(input.size()) +
                      " != expected " + std::to_string(input_dim()));
  }
  if (cache) {
    cache->owner = this;
    cache->revision = revision_;
    cache->inputs.resize(layers_.size());
    cache->outputs.resize(layers_.size());
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    std::vector<double> z(layer.bias);
    const double* w = layer.weight.values.data();
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      const double* row = w + r * layer.weight.cols;
      double acc = 0.0;
      for (std::size_t c = 0; c < layer.weight.cols; ++c) acc += row[c] * x[c];
      z[r] += acc;
    }
    apply_activation(layer.activation, z);
    if (cache) {
      cache->inputs[k] = std::move(x);
      cache->outputs[k] = z;
    }
    x = std::move(z);
  }
  return x;
}

std::vector<double> DenseNet::backward_accumulate(const DenseCache& cache,
                                                  std::span<const double> output_grad,
                                                  GradientSet& into) const {
  if (cache.owner != this || cache.revision != revision_ ||
      cache.outputs.size() != layers_.size()) {
    throw ContractError("dense backward: cache does not come from the matching forward call");
  }
  if (output_grad.size() != output_dim()) {
    throw ContractError("dense backward: output gradient has wrong length");
  }
  if (into.arrays.size() != 2 * layers_.size()) {
    throw ContractError("dense backward: gradient set does not match network");
  }
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  std::vector<double> gz;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& layer = layers_[k];
    activation_backward(layer.activation, cache.outputs[k], delta, gz);
    const auto& x = cache.inputs[k];
    auto& gw = into.arrays[2 * k];
    auto& gb = into.arrays[2 * k + 1];
    const std::size_t cols = layer.weight.cols;
    std::vector<double> next(cols, 0.0);
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      const double g = gz[r];
      if (g == 0.0) continue;
      gb[r] += g;
      double* gw_row = gw.data() + r * cols;
      const double* w_row = layer.weight.values.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        gw_row[c] += g * x[c];
        next[c] += g * w_row[c];
      }
    }
    delta = std::move(next);
  }
  return delta;
}

DenseGradients DenseNet::backward(const DenseCache& cache, std::span<const double> output_grad) const {
  DenseGradients out;
  out.params = GradientSet::zeros_like(parameters());
  out.input = backward_accumulate(cache, output_grad, out.params);
  return out;
}

std::vector<ParamView> DenseNet::parameters(const std::string& prefix) {
  ++revision_;
  std::vector<ParamView> views;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    auto& layer = layers_[k];
    const std::string base = prefix + "layer" + std::to_string(k);
    views.push_back({base + ".weight", layer.weight.rows, layer.weight.cols,
                     std::span<double>(layer.weight.values)});
    views.push_back({base + ".bias", layer.bias.size(), 1, std::span<double>(layer.bias)});
  }
  return views;
}

std::vector<ParamView> DenseNet::parameters(const std::string& prefix) const {
  // Read-only views; callers must not write through them.
  auto* self = const_cast<DenseNet*>(this);
  std::vector<ParamView> views;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    auto& layer = self->layers_[k];
    const std::string base = prefix + "layer" + std::to_string(k);
    views.push_back({base + ".weight", layer.weight.rows, layer.weight.cols,
                     std::span<double>(layer.weight.values)});
    views.push_back({base + ".bias", layer.bias.size(), 1, std::span<double>(layer.bias)});
  }
  return views;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.values.size() + layer.bias.size();
  return n;
}

}  // namespace sddq::nn
