#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "visemalign/numerics.hpp"
#include "visemalign/param_blocks.hpp"

namespace visemalign {

enum class OptimizerKind { kSgdMomentum, kRmsprop };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.01;
  double momentum = 0.9;      // SGD
  double decay_rate = 0.99;   // RMSprop running-average decay
  double epsilon = 1e-8;      // RMSprop
  double weight_decay = 0.0;  // L2, weight matrices only
  double clip = 5.0;          // elementwise gradient clip
  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Clamp every entry of every block into [-threshold, threshold].
void clip_elementwise(const ParamBlocks& grads, double threshold);

/// Per-parameter optimizer buffers (momentum or squared-gradient cache).
class OptimState {
 public:
  OptimState(const OptimizerConfig& cfg, const ParamBlocks& params);

  const OptimizerConfig& config() const { return config_; }
  std::size_t steps() const { return steps_; }
  const std::vector<Matrix>& buffers() const { return buffers_; }

  // Dispatches on config().kind.
  void step(const ParamBlocks& params, const ParamBlocks& grads);
  void sgd_momentum_step(const ParamBlocks& params, const ParamBlocks& grads);
  void rmsprop_step(const ParamBlocks& params, const ParamBlocks& grads);

 private:
  void check_shapes(const ParamBlocks& params, const ParamBlocks& grads) const;

  OptimizerConfig config_;
  std::vector<Matrix> buffers_;
  std::size_t steps_ = 0;
};

}  // namespace visemalign
