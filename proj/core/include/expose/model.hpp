#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "expose/adapter.hpp"
#include "expose/model_config.hpp"
#include "expose/types.hpp"

namespace expose {

/// One transformer block. Weights map rows: y = x * W + b.
template <class S>
struct LayerParamsT {
  Mat<S> ln1_gain, ln1_bias;                                  // 1 x C
  Mat<S> tilm_scale_w, tilm_scale_b, tilm_shift_w, tilm_shift_b;  // D x C, 1 x C
  Mat<S> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;              // C x C, 1 x C
  Mat<S> ln2_gain, ln2_bias;
  Mat<S> ff1_w, ff1_b, ff2_w, ff2_b;                          // C x M, M x C
};

/// Frozen pre-trained denoiser weights.
template <class S>
struct BaseParamsT {
  Mat<S> in_w, in_b;                        // F x C
  Mat<S> time_w1, time_b1, time_w2, time_b2;  // C x C
  std::vector<LayerParamsT<S>> layers;
  Mat<S> lnf_gain, lnf_bias;
  Mat<S> out_w, out_b;                      // C x F
  Mat<S> uncond_audio;                      // 1 x D
  Mat<S> uncond_identity;                   // N x C

  std::vector<NamedTensor<Mat<S>>> tensors();
  std::vector<NamedTensor<const Mat<S>>> tensors() const;
  std::int64_t parameter_count() const;

  /// Same layout with every tensor zeroed.
  BaseParamsT zeros_like() const;
  template <class T>
  BaseParamsT<T> cast() const;
};

using BaseModelParams = BaseParamsT<float>;

/// Closed-form parameter count of BaseModelParams for a config.
std::int64_t count_base_params(const ModelConfig& config);

BaseModelParams init_base_params(const ModelConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Building blocks

template <class S>
Mat<S> mish(const Mat<S>& x);
template <class S>
Mat<S> mish_grad(const Mat<S>& x);

/// y_l = x_l * s(a_l) + m(a_l), with s, m = linear(mish(a)).
MatrixF tilm(const MatrixF& x, const AudioFeatures& audio, const MatrixF& scale_w, const MatrixF& scale_b,
             const MatrixF& shift_w, const MatrixF& shift_b);

/// Fixed sinusoidal code for timestep t in [1, max_steps]; first half cosines, second half sines.
RowVecF sinusoidal_timestep_embedding(int t, int dim, int max_steps);
/// Sinusoidal code passed through the learned Linear-Mish-Linear map.
RowVecF timestep_embedding(int t, const BaseModelParams& params, const ModelConfig& config);
/// Fixed sinusoidal absolute positions, L x C.
MatrixF positional_encoding(int length, int dim);

/// Deterministic spectral-band frame features: log band energies over framed windows,
/// linearly resampled to `length` frames and `dim` bands.
AudioFeatures encode_audio(const Waveform& waveform, int length, int dim);

// ---------------------------------------------------------------------------
// Denoiser

/// A batch of B clips flattened to (B * L) rows. Per-clip flags select which
/// conditions are present: audio_on = 0 substitutes the learned unconditional
/// audio vector, identity_on = 0 substitutes the unconditional identity tokens.
template <class S>
struct DenoiseBatch {
  Mat<S> noisy;                        // (B*L) x F
  Mat<S> audio;                        // (B*L) x D
  std::vector<int> timesteps;          // B
  std::vector<std::uint8_t> audio_on;  // B
  std::vector<std::uint8_t> identity_on;  // B

  int batch_size() const { return static_cast<int>(timesteps.size()); }
};

template <class S>
struct LayerCache {
  Mat<S> x_in, ln1_xhat, ln1_out, tilm_scale, tilm_out, q, k, v, probs, attn_concat, attn_mask;
  Eigen::Matrix<S, Eigen::Dynamic, 1> ln1_rstd, ln2_rstd;
  Mat<S> x_mid, ln2_xhat, ln2_out, ff_pre, ff_act, ff_mask;
};

/// Activations saved by the forward pass; reused across calls to avoid reallocation.
template <class S>
struct ForwardCache {
  Mat<S> audio_eff, audio_mish, time_code, time_pre, time_act, time_emb;
  std::vector<LayerCache<S>> layers;
  Mat<S> ext_k_on, ext_v_on, ext_k_off, ext_v_off;
  Mat<S> lnf_xhat, lnf_out;
  Eigen::Matrix<S, Eigen::Dynamic, 1> lnf_rstd;
};

/// Dropout is active only when a generator is supplied and the config rate is positive.
struct DropoutContext {
  Rng* rng = nullptr;
};

/// Predicts the added noise, (B*L) x F. `adapter` may be null: the identity slots
/// then carry zero keys and values (no subject projection exists yet).
template <class S>
Mat<S> denoise_forward(const ModelConfig& config, const BaseParamsT<S>& params, const AdapterParamsT<S>* adapter,
                       const DenoiseBatch<S>& batch, ForwardCache<S>& cache, DropoutContext dropout = {});

/// Backpropagates d_out through the cached forward pass. Either gradient sink may be null.
template <class S>
void denoise_backward(const ModelConfig& config, const BaseParamsT<S>& params, const AdapterParamsT<S>* adapter,
                      const DenoiseBatch<S>& batch, const ForwardCache<S>& cache, const Mat<S>& d_out,
                      BaseParamsT<S>* base_grad, AdapterParamsT<S>* adapter_grad);

/// Mean squared error over all elements between `noise` and the prediction, with gradients.
template <class S>
S denoise_loss_and_grad(const ModelConfig& config, const BaseParamsT<S>& params, const AdapterParamsT<S>* adapter,
                        const DenoiseBatch<S>& batch, const Mat<S>& noise, ForwardCache<S>& cache,
                        BaseParamsT<S>* base_grad, AdapterParamsT<S>* adapter_grad, DropoutContext dropout = {});

/// Single clip, evaluation mode, fully conditional.
MatrixF denoise(const ModelConfig& config, const ExpressionSequence& noisy, int t, const AudioFeatures& audio,
                const BaseModelParams& params, const AdapterParams* adapter);

/// Result of classifier-free condition dropout for one training clip.
struct DroppedConditions {
  AudioFeatures audio;
  std::optional<AdapterParams> adapter;
  bool audio_dropped = false;
  bool identity_dropped = false;
};

/// Two independent coins with probability p: audio first, identity second.
struct ConditionCoins {
  bool audio_dropped = false;
  bool identity_dropped = false;
};
ConditionCoins draw_condition_coins(double p, Rng& rng);

DroppedConditions apply_condition_dropout(const AudioFeatures& audio, const AdapterParams* adapter,
                                          const BaseModelParams& base, double p, Rng& rng);

}  // namespace expose
