#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sddq/nn.hpp"

namespace sddq::nn {

GradientSet GradientSet::zeros_like(std::span<const ParamView> params) {
  GradientSet g;
  g.arrays.reserve(params.size());
  for (const auto& p : params) g.arrays.emplace_back(p.values.size(), 0.0);
  return g;
}

double GradientSet::global_norm() const {
  double sq = 0.0;
  for (const auto& a : arrays) {
    for (double v : a) sq += v * v;
  }
  return std::sqrt(sq);
}

void GradientSet::scale(double factor) {
  for (auto& a : arrays) {
    for (double& v : a) v *= factor;
  }
}

void GradientSet::add(const GradientSet& other) {
  if (other.arrays.size() != arrays.size()) throw ContractError("gradient add: shape mismatch");
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (other.arrays[i].size() != arrays[i].size()) throw ContractError("gradient add: shape mismatch");
    for (std::size_t j = 0; j < arrays[i].size(); ++j) arrays[i][j] += other.arrays[i][j];
  }
}

bool GradientSet::shape_matches(std::span<const ParamView> params) const {
  if (params.size() != arrays.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != arrays[i].size()) return false;
  }
  return true;
}

double clip_gradients(GradientSet& grads, double max_norm) {
  if (!(max_norm > 0)) throw ContractError("clip_gradients: max_norm must be positive");
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

RmsProp::RmsProp(RmsPropConfig config) : config_(config) {
  if (!(config.learning_rate >= 0) || !(config.decay > 0 && config.decay < 1) ||
      !(config.epsilon > 0)) {
    throw ConfigError("rmsprop: require lr >= 0, decay in (0,1), epsilon > 0");
  }
}

void RmsProp::step(std::span<const ParamView> params, const GradientSet& grads) {
  if (!grads.shape_matches(params)) throw ContractError("rmsprop: gradient/parameter shape mismatch");
  if (accumulators_.empty()) {
    for (const auto& p : params) accumulators_.emplace_back(p.values.size(), 0.0);
  } else if (accumulators_.size() != params.size()) {
    throw ContractError("rmsprop: optimizer state belongs to a different network");
  }
  const double decay = config_.decay;
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& acc = accumulators_[i];
    const auto& g = grads.arrays[i];
    auto values = params[i].values;
    for (std::size_t j = 0; j < values.size(); ++j) {
      acc[j] = decay * acc[j] + (1.0 - decay) * g[j] * g[j];
      if (lr != 0.0) values[j] -= lr * g[j] / (std::sqrt(acc[j]) + config_.epsilon);
    }
  }
}

double mse_loss(std::span<const double> prediction, std::span<const double> target,
                std::span<double> grad) {
  const double n = static_cast<double>(prediction.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    loss += d * d;
    grad[i] = 2.0 * d / n;
  }
  return loss / n;
}

double bce_loss(double prediction, double target, double& grad) {
  constexpr double kFloor = 1e-12;
  const double p = std::clamp(prediction, kFloor, 1.0 - kFloor);
  grad = -target / p + (1.0 - target) / (1.0 - p);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double categorical_ce_loss(std::span<const double> probs, std::size_t target,
                           std::span<double> grad) {
  constexpr double kFloor = 1e-12;
  std::fill(grad.begin(), grad.end(), 0.0);
  const double p = std::max(probs[target], kFloor);
  grad[target] = -1.0 / p;
  return -std::log(p);
}

double finite_diff_check(std::span<const ParamView> params, const GradientSet& analytic,
                         const std::function<double()>& loss, double h) {
  if (!analytic.shape_matches(params)) throw ContractError("finite_diff_check: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].values;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + h;
      const double up = loss();
      values[j] = saved - h;
      const double down = loss();
      values[j] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw ContractError("finite_diff_check: non-finite loss at " + params[i].name);
      }
      const double numeric = (up - down) / (2.0 * h);
      const double exact = analytic.arrays[i][j];
      const double rel =
          std::abs(exact - numeric) / std::max(1e-8, std::abs(exact) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

void save_checkpoint(const std::string& path, std::span<const ParamView> params,
                     const std::string& kind) {
  nlohmann::json doc;
  doc["format"] = "sddq-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["kind"] = kind;
  auto& arrays = doc["params"] = nlohmann::json::array();
  for (const auto& p : params) {
    arrays.push_back({{"name", p.name},
                      {"shape", {p.rows, p.cols}},
                      {"values", std::vector<double>(p.values.begin(), p.values.end())}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out << doc.dump() << '\n';
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

std::vector<NamedArray> load_checkpoint(const std::string& path, const std::string& kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  if (doc.value("format", "") != "sddq-checkpoint") {
    throw ConfigError("checkpoint '" + path + "': unknown format");
  }
  if (doc.value("version", 0) != kCheckpointVersion) {
    throw ConfigError("checkpoint '" + path + "': unsupported version");
  }
  if (!kind.empty() && doc.value("kind", "") != kind) {
    throw ConfigError("checkpoint '" + path + "' holds a '" + doc.value("kind", "") +
                      "', expected '" + kind + "'");
  }
  std::vector<NamedArray> out;
  for (const auto& entry : doc.at("params")) {
    NamedArray a;
    a.name = entry.at("name").get<std::string>();
    a.rows = entry.at("shape").at(0).get<std::size_t>();
    a.cols = entry.at("shape").at(1).get<std::size_t>();
    a.values = entry.at("values").get<std::vector<double>>();
    if (a.values.size() != a.rows * a.cols) {
      throw ConfigError("checkpoint '" + path + "': array " + a.name + " has wrong length");
    }
    out.push_back(std::move(a));
  }
  return out;
}

void assign_parameters(std::span<const ParamView> params, std::span<const NamedArray> arrays) {
  for (const auto& p : params) {
    auto it = std::find_if(arrays.begin(), arrays.end(),
                           [&](const NamedArray& a) { return a.name == p.name; });
    if (it == arrays.end()) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (it->rows != p.rows || it->cols != p.cols) {
      throw ConfigError("checkpoint parameter " + p.name + " has shape " +
                        std::to_string(it->rows) + "x" + std::to_string(it->cols) +
                        ", expected " + std::to_string(p.rows) + "x" + std::to_string(p.cols));
    }
    std::copy(it->values.begin(), it->values.end(), p.values.begin());
  }
}

}  // namespace sddq::nn
