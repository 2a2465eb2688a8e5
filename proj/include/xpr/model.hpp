// All trainable parameters of the pipeline, plus seeded initialization.
#pragma once

#include "xpr/aggregation.hpp"
#include "xpr/encoder.hpp"

#include <functional>
#include <span>
#include <string_view>

namespace xpr {

struct ModelParams {
  EncoderParams enc;
  AttentionParams att;
  NetVladParams vlad;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Seeded initialization from cfg.seed. Every value is representable as a
/// 32-bit float, so a checkpoint of a fresh model reloads bit-identically.
ModelParams init_model(const Config& cfg);

/// Same shapes as `like`, every trainable value zero (the fixed projection is kept).
ModelParams zero_grads(const ModelParams& like);

/// Visits every trainable tensor by name. The fixed NetVLAD projection is excluded.
void for_each_trainable(ModelParams& params, const std::function<void(std::string_view, std::span<double>)>& fn);
void for_each_trainable(const ModelParams& params,
                        const std::function<void(std::string_view, std::span<const double>)>& fn);

/// params += scale * delta over trainable tensors.
void axpy(ModelParams& params, double scale, const ModelParams& delta);

std::size_t trainable_size(const ModelParams& params);

/// Rounds every trainable value to the nearest 32-bit float, the checkpoint precision.
void round_to_float(ModelParams& params);

/// Throws ConfigError when the parameter shapes do not fit `cfg`.
void check_model_shapes(const ModelParams& params, const Config& cfg);

}  // namespace xpr
