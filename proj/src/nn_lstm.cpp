#include <cmath>
#include <utility>

#include "sddq/nn.hpp"

namespace sddq::nn {

namespace {

void fill_uniform(Matrix& m, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : m.values) w = dist(rng);
}

}  // namespace

LstmNet LstmNet::zeros(LstmShape shape) {
  if (shape.input == 0 || shape.encoder == 0 || shape.cells == 0) {
    throw ConfigError("lstm: all dimensions must be positive");
  }
  LstmNet net;
  net.shape_ = shape;
  net.enc_w_ = Matrix(shape.encoder, shape.input);
  net.enc_b_.assign(shape.encoder, 0.0);
  net.gate_w_ = Matrix(4 * shape.cells, shape.encoder + shape.cells);
  net.gate_b_.assign(4 * shape.cells, 0.0);
  net.head_w_ = Matrix(1, shape.cells);
  net.head_b_.assign(1, 0.0);
  return net;
}

LstmNet LstmNet::random(LstmShape shape, Rng& rng) {
  LstmNet net = zeros(shape);
  fill_uniform(net.enc_w_, rng);
  fill_uniform(net.gate_w_, rng);
  fill_uniform(net.head_w_, rng);
  for (std::size_t j = 0; j < shape.cells; ++j) net.gate_b_[shape.cells + j] = 1.0;
  return net;
}

std::vector<double> LstmNet::forward(std::span<const std::vector<double>> sequence,
                                     LstmCache* cache) const {
  const std::size_t E = shape_.encoder;
  const std::size_t H = shape_.cells;
  const std::size_t V = E + H;
  std::vector<double> scores;
  scores.reserve(sequence.size());
  if (cache) {
    *cache = LstmCache{};
    cache->owner = this;
    cache->revision = revision_;
  }
  std::vector<double> h(H, 0.0), c(H, 0.0), v(V), z(4 * H);
  for (const auto& x : sequence) {
    if (x.size() != shape_.input) {
      throw ConfigError("lstm forward: element width " + std::to_string(x.size()) +
                        " != expected " + std::to_string(shape_.input));
    }
    for (std::size_t r = 0; r < E; ++r) {
      const double* row = enc_w_.values.data() + r * shape_.input;
      double acc = enc_b_[r];
      for (std::size_t k = 0; k < shape_.input; ++k) acc += row[k] * x[k];
      v[r] = acc;
    }
    std::copy(h.begin(), h.end(), v.begin() + static_cast<std::ptrdiff_t>(E));
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double* row = gate_w_.values.data() + r * V;
      double acc = gate_b_[r];
      for (std::size_t k = 0; k < V; ++k) acc += row[k] * v[k];
      z[r] = acc;
    }
    for (std::size_t j = 0; j < 3 * H; ++j) z[j] = sigmoid(z[j]);
    for (std::size_t j = 3 * H; j < 4 * H; ++j) z[j] = std::tanh(z[j]);
    double out = head_b_[0];
    for (std::size_t j = 0; j < H; ++j) {
      c[j] = z[H + j] * c[j] + z[j] * z[3 * H + j];
      h[j] = z[2 * H + j] * std::tanh(c[j]);
      out += head_w_.values[j] * h[j];
    }
    const double score = sigmoid(out);
    scores.push_back(score);
    if (cache) {
      cache->inputs.push_back(x);
      cache->encoded.emplace_back(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(E));
      cache->gates.push_back(z);
      cache->cells.push_back(c);
      cache->hidden.push_back(h);
    }
  }
  if (cache) cache->scores = scores;
  return scores;
}

void LstmNet::backward_accumulate(const LstmCache& cache, std::span<const double> score_grads,
                                  GradientSet& into) const {
  if (cache.owner != this || cache.revision != revision_) {
    throw ContractError("lstm backward: cache does not come from the matching forward call");
  }
  const std::size_t T = cache.scores.size();
  if (score_grads.size() != T) throw ContractError("lstm backward: one gradient per position");
  if (into.arrays.size() != 6) throw ContractError("lstm backward: gradient set does not match");
  const std::size_t E = shape_.encoder;
  const std::size_t H = shape_.cells;
  const std::size_t V = E + H;
  auto& g_enc_w = into.arrays[0];
  auto& g_enc_b = into.arrays[1];
  auto& g_gate_w = into.arrays[2];
  auto& g_gate_b = into.arrays[3];
  auto& g_head_w = into.arrays[4];
  auto& g_head_b = into.arrays[5];

  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dz(4 * H), dv(V), v(V);
  const std::vector<double> zeros(H, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    const auto& gates = cache.gates[t];
    const auto& c = cache.cells[t];
    const auto& h = cache.hidden[t];
    const auto& c_prev = t > 0 ? cache.cells[t - 1] : zeros;
    const auto& h_prev = t > 0 ? cache.hidden[t - 1] : zeros;
    const double s = cache.scores[t];
    const double d_out = score_grads[t] * s * (1.0 - s);
    g_head_b[0] += d_out;
    for (std::size_t j = 0; j < H; ++j) {
      g_head_w[j] += d_out * h[j];
      const double dh = d_out * head_w_.values[j] + dh_next[j];
      const double i = gates[j], f = gates[H + j], o = gates[2 * H + j], g = gates[3 * H + j];
      const double tc = std::tanh(c[j]);
      const double dcell = dh * o * (1.0 - tc * tc) + dc_next[j];
      dz[j] = dcell * g * i * (1.0 - i);
      dz[H + j] = dcell * c_prev[j] * f * (1.0 - f);
      dz[2 * H + j] = dh * tc * o * (1.0 - o);
      dz[3 * H + j] = dcell * i * (1.0 - g * g);
      dc_next[j] = dcell * f;
    }
    std::copy(cache.encoded[t].begin(), cache.encoded[t].end(), v.begin());
    std::copy(h_prev.begin(), h_prev.end(), v.begin() + static_cast<std::ptrdiff_t>(E));
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double g = dz[r];
      if (g == 0.0) continue;
      g_gate_b[r] += g;
      double* gw = g_gate_w.data() + r * V;
      const double* w = gate_w_.values.data() + r * V;
      for (std::size_t k = 0; k < V; ++k) {
        gw[k] += g * v[k];
        dv[k] += g * w[k];
      }
    }
    std::copy(dv.begin() + static_cast<std::ptrdiff_t>(E), dv.end(), dh_next.begin());
    const auto& x = cache.inputs[t];
    for (std::size_t r = 0; r < E; ++r) {
      const double g = dv[r];
      if (g == 0.0) continue;
      g_enc_b[r] += g;
      double* gw = g_enc_w.data() + r * shape_.input;
      for (std::size_t k = 0; k < shape_.input; ++k) gw[k] += g * x[k];
    }
  }
}

GradientSet LstmNet::backward(const LstmCache& cache, std::span<const double> score_grads) const {
  GradientSet grads = GradientSet::zeros_like(parameters());
  backward_accumulate(cache, score_grads, grads);
  return grads;
}

std::vector<ParamView> LstmNet::parameters(const std::string& prefix) {
  ++revision_;
  return std::as_const(*this).parameters(prefix);
}

std::vector<ParamView> LstmNet::parameters(const std::string& prefix) const {
  auto* self = const_cast<LstmNet*>(this);
  return {
      {prefix + "encoder.weight", enc_w_.rows, enc_w_.cols, std::span<double>(self->enc_w_.values)},
      {prefix + "encoder.bias", enc_b_.size(), 1, std::span<double>(self->enc_b_)},
      {prefix + "lstm.weight", gate_w_.rows, gate_w_.cols, std::span<double>(self->gate_w_.values)},
      {prefix + "lstm.bias", gate_b_.size(), 1, std::span<double>(self->gate_b_)},
      {prefix + "head.weight", head_w_.rows, head_w_.cols, std::span<double>(self->head_w_.values)},
      {prefix + "head.bias", head_b_.size(), 1, std::span<double>(self->head_b_)},
  };
}

}  // namespace sddq::nn
