#pragma once

#include "expose/types.hpp"

namespace expose {

/// Shape and regularization hyperparameters of the expression denoiser.
struct ModelConfig {
  int length = 200;          // frames per clip (8 s at 25 fps)
  int feature_dim = kFeatureDim;
  int model_dim = 512;
  int mlp_dim = 1024;
  int num_heads = 8;
  int num_layers = 8;
  double dropout = 0.1;
  double cfg_dropout = 0.25;
  int audio_dim = 32;
  int adapter_tokens = 8;
  int diffusion_steps = 1000;

  int head_dim() const { return model_dim / num_heads; }
  /// Throws ConfigError when any invariant is broken.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace expose
