#include "visemalign/optimize.hpp"

#include <algorithm>
#include <cmath>

namespace visemalign {

std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::kSgdMomentum ? "sgd" : "rmsprop";
}

OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd" || s == "sgd_momentum") return OptimizerKind::kSgdMomentum;
  if (s == "rmsprop") return OptimizerKind::kRmsprop;
  throw ContractError("unknown optimizer '" + std::string(s) + "' (expected sgd|rmsprop)");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ContractError("optimizer: learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("optimizer: momentum must be in [0, 1)");
  if (!(decay_rate >= 0.0 && decay_rate < 1.0)) throw ContractError("optimizer: decay rate must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ContractError("optimizer: epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw ContractError("optimizer: weight decay must be >= 0");
  if (!(clip > 0.0)) throw ContractError("optimizer: clip threshold must be > 0");
  if (batch_size == 0) throw ContractError("optimizer: batch size must be >= 1");
}

void clip_elementwise(const ParamBlocks& grads, double threshold) {
  if (!(threshold > 0.0)) throw ContractError("clip_elementwise: threshold must be > 0");
  for (const auto& b : grads)
    for (double& g : b.value->data()) g = std::clamp(g, -threshold, threshold);
}

OptimState::OptimState(const OptimizerConfig& cfg, const ParamBlocks& params) : config_(cfg) {
  config_.validate();
  buffers_.reserve(params.size());
  for (const auto& b : params) buffers_.emplace_back(b.value->rows(), b.value->cols());
}

void OptimState::check_shapes(const ParamBlocks& params, const ParamBlocks& grads) const {
  if (params.size() != buffers_.size() || grads.size() != buffers_.size()) {
    throw ShapeError("optimizer: parameter/gradient block count does not match state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value->same_shape(buffers_[i]) || !grads[i].value->same_shape(buffers_[i])) {
      throw ShapeError("optimizer: shape mismatch in block " + std::string(params[i].name) + " (param " +
                       params[i].value->shape_string() + ", grad " + grads[i].value->shape_string() +
                       ", state " + buffers_[i].shape_string() + ")");
    }
  }
}

void OptimState::step(const ParamBlocks& params, const ParamBlocks& grads) {
  if (config_.kind == OptimizerKind::kSgdMomentum) {
    sgd_momentum_step(params, grads);
  } else {
    rmsprop_step(params, grads);
  }
}

void OptimState::sgd_momentum_step(const ParamBlocks& params, const ParamBlocks& grads) {
  check_shapes(params, grads);
  const double lr = config_.learning_rate;
  const double mu = config_.momentum;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const double wd = params[b].is_weight ? config_.weight_decay : 0.0;
    auto p = params[b].value->data();
    auto g = grads[b].value->data();
    auto buf = buffers_[b].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      buf[i] = mu * buf[i] - lr * (g[i] + wd * p[i]);
      p[i] += buf[i];
    }
  }
  ++steps_;
}

void OptimState::rmsprop_step(const ParamBlocks& params, const ParamBlocks& grads) {
  check_shapes(params, grads);
  const double lr = config_.learning_rate;
  const double rho = config_.decay_rate;
  const double eps = config_.epsilon;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const double wd = params[b].is_weight ? config_.weight_decay : 0.0;
    auto p = params[b].value->data();
    auto g = grads[b].value->data();
    auto cache = buffers_[b].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + wd * p[i];
      cache[i] = rho * cache[i] + (1.0 - rho) * gi * gi;
      p[i] -= lr * gi / (std::sqrt(cache[i]) + eps);
    }
  }
  ++steps_;
}

}  // namespace visemalign
