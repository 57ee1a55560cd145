#include "expose/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "expose/errors.hpp"

namespace expose {

void ModelConfig::validate() const {
  if (length < 1 || feature_dim < 1 || model_dim < 1 || mlp_dim < 1 || num_heads < 1 || num_layers < 1 ||
      audio_dim < 1 || adapter_tokens < 0 || diffusion_steps < 1)
    throw ConfigError("model dimensions must be positive");
  if (model_dim % num_heads != 0) throw ConfigError("model_dim must be divisible by num_heads");
  if (!(dropout >= 0.0 && dropout < 1.0) || !(cfg_dropout >= 0.0 && cfg_dropout < 1.0))
    throw ConfigError("dropout rates must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping

namespace {

template <class P, class Out>
void collect_layer(P& l, const std::string& prefix, Out& out) {
  out.push_back({prefix + "ln1.gain", &l.ln1_gain});
  out.push_back({prefix + "ln1.bias", &l.ln1_bias});
  out.push_back({prefix + "tilm.scale.w", &l.tilm_scale_w});
  out.push_back({prefix + "tilm.scale.b", &l.tilm_scale_b});
  out.push_back({prefix + "tilm.shift.w", &l.tilm_shift_w});
  out.push_back({prefix + "tilm.shift.b", &l.tilm_shift_b});
  out.push_back({prefix + "attn.q.w", &l.q_w});
  out.push_back({prefix + "attn.q.b", &l.q_b});
  out.push_back({prefix + "attn.k.w", &l.k_w});
  out.push_back({prefix + "attn.k.b", &l.k_b});
  out.push_back({prefix + "attn.v.w", &l.v_w});
  out.push_back({prefix + "attn.v.b", &l.v_b});
  out.push_back({prefix + "attn.o.w", &l.o_w});
  out.push_back({prefix + "attn.o.b", &l.o_b});
  out.push_back({prefix + "ln2.gain", &l.ln2_gain});
  out.push_back({prefix + "ln2.bias", &l.ln2_bias});
  out.push_back({prefix + "ff1.w", &l.ff1_w});
  out.push_back({prefix + "ff1.b", &l.ff1_b});
  out.push_back({prefix + "ff2.w", &l.ff2_w});
  out.push_back({prefix + "ff2.b", &l.ff2_b});
}

template <class P, class Out>
void collect_base(P& p, Out& out) {
  out.push_back({"input.w", &p.in_w});
  out.push_back({"input.b", &p.in_b});
  out.push_back({"time.w1", &p.time_w1});
  out.push_back({"time.b1", &p.time_b1});
  out.push_back({"time.w2", &p.time_w2});
  out.push_back({"time.b2", &p.time_b2});
  for (std::size_t i = 0; i < p.layers.size(); ++i) collect_layer(p.layers[i], "layer" + std::to_string(i) + ".", out);
  out.push_back({"final_ln.gain", &p.lnf_gain});
  out.push_back({"final_ln.bias", &p.lnf_bias});
  out.push_back({"output.w", &p.out_w});
  out.push_back({"output.b", &p.out_b});
  out.push_back({"uncond.audio", &p.uncond_audio});
  out.push_back({"uncond.identity", &p.uncond_identity});
}

}  // namespace

template <class S>
std::vector<NamedTensor<Mat<S>>> BaseParamsT<S>::tensors() {
  std::vector<NamedTensor<Mat<S>>> out;
  collect_base(*this, out);
  return out;
}

template <class S>
std::vector<NamedTensor<const Mat<S>>> BaseParamsT<S>::tensors() const {
  std::vector<NamedTensor<const Mat<S>>> out;
  collect_base(*this, out);
  return out;
}

template <class S>
std::int64_t BaseParamsT<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : tensors()) n += t.tensor->size();
  return n;
}

template <class S>
BaseParamsT<S> BaseParamsT<S>::zeros_like() const {
  BaseParamsT<S> z = *this;
  for (auto& t : z.tensors()) t.tensor->setZero();
  return z;
}

template <class S>
template <class T>
BaseParamsT<T> BaseParamsT<S>::cast() const {
  BaseParamsT<T> out;
  out.layers.resize(layers.size());
  auto dst = out.tensors();
  const auto src = tensors();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<T>();
  return out;
}

template struct BaseParamsT<float>;
template struct BaseParamsT<double>;
template BaseParamsT<double> BaseParamsT<float>::cast<double>() const;
template BaseParamsT<float> BaseParamsT<double>::cast<float>() const;
template BaseParamsT<float> BaseParamsT<float>::cast<float>() const;

std::int64_t count_base_params(const ModelConfig& c) {
  const std::int64_t C = c.model_dim, F = c.feature_dim, D = c.audio_dim, M = c.mlp_dim;
  const std::int64_t per_layer = 2 * C             // ln1
                                 + 2 * (D * C + C)  // tilm scale and shift
                                 + 4 * (C * C + C)  // q k v o
                                 + 2 * C            // ln2
                                 + (C * M + M) + (M * C + C);
  return (F * C + C) + 2 * (C * C + C) + c.num_layers * per_layer + 2 * C + (C * F + F) + D +
         static_cast<std::int64_t>(c.adapter_tokens) * C;
}

BaseModelParams init_base_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int C = config.model_dim, F = config.feature_dim, D = config.audio_dim, M = config.mlp_dim;
  std::normal_distribution<float> normal(0.0f, 1.0f);
  auto randn = [&](int r, int c, double stddev) {
    MatrixF m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(stddev) * normal(rng);
    return m;
  };
  auto zeros = [](int r, int c) { return MatrixF::Zero(r, c); };
  auto ones = [](int r, int c) { return MatrixF::Ones(r, c); };

  BaseModelParams p;
  p.in_w = randn(F, C, 1.0 / std::sqrt(F));
  p.in_b = zeros(1, C);
  p.time_w1 = randn(C, C, 1.0 / std::sqrt(C));
  p.time_b1 = zeros(1, C);
  p.time_w2 = randn(C, C, 1.0 / std::sqrt(C));
  p.time_b2 = zeros(1, C);
  p.layers.resize(config.num_layers);
  for (auto& l : p.layers) {
    l.ln1_gain = ones(1, C);
    l.ln1_bias = zeros(1, C);
    l.tilm_scale_w = randn(D, C, 0.1 / std::sqrt(D));
    l.tilm_scale_b = ones(1, C);
    l.tilm_shift_w = randn(D, C, 0.1 / std::sqrt(D));
    l.tilm_shift_b = zeros(1, C);
    l.q_w = randn(C, C, 1.0 / std::sqrt(C));
    l.q_b = zeros(1, C);
    l.k_w = randn(C, C, 1.0 / std::sqrt(C));
    l.k_b = zeros(1, C);
    l.v_w = randn(C, C, 1.0 / std::sqrt(C));
    l.v_b = zeros(1, C);
    l.o_w = randn(C, C, 0.5 / std::sqrt(C));
    l.o_b = zeros(1, C);
    l.ln2_gain = ones(1, C);
    l.ln2_bias = zeros(1, C);
    l.ff1_w = randn(C, M, 1.0 / std::sqrt(C));
    l.ff1_b = zeros(1, M);
    l.ff2_w = randn(M, C, 0.5 / std::sqrt(M));
    l.ff2_b = zeros(1, C);
  }
  p.lnf_gain = ones(1, C);
  p.lnf_bias = zeros(1, C);
  p.out_w = randn(C, F, 0.1 / std::sqrt(C));
  p.out_b = zeros(1, F);
  p.uncond_audio = randn(1, D, 0.02);
  // Stays zero while no projection pair exists, so the identity-unconditional
  // branch coincides with zero-key, zero-value attention slots.
  p.uncond_identity = zeros(config.adapter_tokens, C);
  return p;
}

// ---------------------------------------------------------------------------
// Elementwise pieces

// mish(x) = x tanh(softplus(x)) = x n / (n + 2) with n = e^x (e^x + 2).
template <class S>
Mat<S> mish(const Mat<S>& x) {
  Mat<S> out(x.rows(), x.cols());
  auto e = out.array();
  e = x.array().min(S(20)).exp();
  e = e * (e + S(2));
  e = x.array() * e / (e + S(2));
  return out;
}

template <class S>
Mat<S> mish_grad(const Mat<S>& x) {
  using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Arr e = x.array().min(S(20)).exp();
  const Arr n = e * (e + S(2));
  const Arr w = n / (n + S(2));
  return (w + x.array() * (S(1) - w * w) * e / (S(1) + e)).matrix();
}

template Mat<float> mish<float>(const Mat<float>&);
template Mat<double> mish<double>(const Mat<double>&);
template Mat<float> mish_grad<float>(const Mat<float>&);
template Mat<double> mish_grad<double>(const Mat<double>&);

namespace {

constexpr double kLayerNormEps = 1e-5;

template <class S>
void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& xhat,
                Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd, Mat<S>& y) {
  const Eigen::Matrix<S, Eigen::Dynamic, 1> mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  const Eigen::Matrix<S, Eigen::Dynamic, 1> var = xhat.array().square().rowwise().mean();
  rstd = (var.array() + S(kLayerNormEps)).rsqrt();
  xhat = xhat.array().colwise() * rstd.array();
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

template <class S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd,
                           const Mat<S>& gain, Mat<S>* d_gain, Mat<S>* d_bias) {
  if (d_gain) *d_gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  if (d_bias) *d_bias += dy.colwise().sum();
  const Mat<S> dxhat = dy.array().rowwise() * gain.row(0).array();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().mean();
  const Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Mat<S> dx = (dxhat.array().colwise() - m1.array()) - (xhat.array().colwise() * m2.array());
  return dx.array().colwise() * rstd.array();
}

template <class S>
void dropout_mask(Mat<S>& mask, Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  mask.resize(rows, cols);
  std::bernoulli_distribution keep(1.0 - rate);
  const S scale = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : S(0);
}

template <class S>
void sinusoid_row(double position, Eigen::Ref<Mat<S>> row) {
  const Eigen::Index dim = row.cols();
  const Eigen::Index half = dim / 2;
  for (Eigen::Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    row(0, i) = static_cast<S>(std::cos(position * freq));
    row(0, half + i) = static_cast<S>(std::sin(position * freq));
  }
  if (dim % 2 == 1) row(0, dim - 1) = S(0);
}

template <class S>
const Mat<S>& positions_for(int length, int dim) {
  thread_local Mat<S> cached;
  if (cached.rows() != length || cached.cols() != dim) {
    cached.resize(length, dim);
    for (int l = 0; l < length; ++l) sinusoid_row<S>(l, cached.row(l));
  }
  return cached;
}

}  // namespace

MatrixF tilm(const MatrixF& x, const AudioFeatures& audio, const MatrixF& scale_w, const MatrixF& scale_b,
             const MatrixF& shift_w, const MatrixF& shift_b) {
  if (x.rows() != audio.values.rows()) throw ShapeError("TiLM token and audio lengths differ");
  if (scale_w.rows() != audio.values.cols() || scale_w.cols() != x.cols() || shift_w.rows() != scale_w.rows() ||
      shift_w.cols() != x.cols())
    throw ShapeError("TiLM weight shapes do not match inputs");
  const MatrixF m = mish<float>(audio.values);
  const MatrixF s = (m * scale_w).rowwise() + scale_b.row(0);
  const MatrixF shift = (m * shift_w).rowwise() + shift_b.row(0);
  return (x.array() * s.array() + shift.array()).matrix();
}

RowVecF sinusoidal_timestep_embedding(int t, int dim, int max_steps) {
  if (t < 1 || t > max_steps) throw DomainError("timestep " + std::to_string(t) + " out of range");
  MatrixF row(1, dim);
  sinusoid_row<float>(t, row);
  return row.row(0);
}

RowVecF timestep_embedding(int t, const BaseModelParams& p, const ModelConfig& config) {
  MatrixF code = sinusoidal_timestep_embedding(t, config.model_dim, config.diffusion_steps);
  const MatrixF pre = (code * p.time_w1).rowwise() + p.time_b1.row(0);
  const MatrixF out = (mish<float>(pre) * p.time_w2).rowwise() + p.time_b2.row(0);
  return out.row(0);
}

MatrixF positional_encoding(int length, int dim) { return positions_for<float>(length, dim); }

AudioFeatures encode_audio(const Waveform& waveform, int length, int dim) {
  const Eigen::Index h = waveform.samples.size();
  if (h == 0) throw InputError("empty waveform");
  if (length < 1 || dim < 1) throw ConfigError("feature grid must be positive");

  // 25 ms windows with a 10 ms hop, as for common speech front ends.
  const int window = std::max(2, static_cast<int>(std::lround(0.025 * waveform.sample_rate)));
  const int hop = std::max(1, static_cast<int>(std::lround(0.010 * waveform.sample_rate)));
  const int frames = 1 + static_cast<int>(std::max<Eigen::Index>(0, h - window) / hop);
  const int bins = window / 2;

  MatrixF raw(frames, dim);
  std::vector<double> frame(window);
  for (int f = 0; f < frames; ++f) {
    for (int i = 0; i < window; ++i) {
      const Eigen::Index idx = static_cast<Eigen::Index>(f) * hop + i;
      const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (window - 1));
      frame[i] = idx < h ? hann * waveform.samples[idx] : 0.0;
    }
    for (int band = 0; band < dim; ++band) {
      const int lo = 1 + band * bins / dim;
      const int hi = std::max(lo + 1, 1 + (band + 1) * bins / dim);
      double energy = 0.0;
      for (int k = lo; k < hi; ++k) {
        double re = 0.0, im = 0.0;
        for (int i = 0; i < window; ++i) {
          const double ang = 2.0 * std::numbers::pi * k * i / window;
          re += frame[i] * std::cos(ang);
          im -= frame[i] * std::sin(ang);
        }
        energy += re * re + im * im;
      }
      raw(f, band) = static_cast<float>(std::log(1e-8 + energy / (hi - lo)));
    }
  }

  AudioFeatures out{MatrixF(length, dim)};
  for (int l = 0; l < length; ++l) {
    const double pos = length == 1 ? 0.0 : static_cast<double>(l) * (frames - 1) / (length - 1);
    const int i0 = static_cast<int>(std::floor(pos));
    const int i1 = std::min(frames - 1, i0 + 1);
    const float w = static_cast<float>(pos - i0);
    out.values.row(l) = (1.0f - w) * raw.row(i0) + w * raw.row(i1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoiser forward / backward

namespace {

template <class S>
void check_batch(const ModelConfig& config, const BaseParamsT<S>& params, const DenoiseBatch<S>& batch) {
  const int b = batch.batch_size();
  const Eigen::Index rows = static_cast<Eigen::Index>(b) * config.length;
  if (b < 1) throw ShapeError("empty denoiser batch");
  if (batch.noisy.rows() != rows || batch.noisy.cols() != config.feature_dim)
    throw ShapeError("noisy expressions must be (B*L) x " + std::to_string(config.feature_dim));
  if (batch.audio.rows() != rows || batch.audio.cols() != config.audio_dim)
    throw ShapeError("audio features must be (B*L) x " + std::to_string(config.audio_dim));
  if (static_cast<int>(batch.audio_on.size()) != b || static_cast<int>(batch.identity_on.size()) != b)
    throw ShapeError("condition flags must have one entry per clip");
  if (static_cast<int>(params.layers.size()) != config.num_layers || params.in_w.cols() != config.model_dim)
    throw ShapeError("parameters do not match the model config");
  for (int t : batch.timesteps)
    if (t < 1 || t > config.diffusion_steps) throw DomainError("timestep " + std::to_string(t) + " out of range");
  if (!batch.noisy.allFinite() || !batch.audio.allFinite()) throw NumericError("non-finite denoiser input");
}

}  // namespace

template <class S>
Mat<S> denoise_forward(const ModelConfig& config, const BaseParamsT<S>& p, const AdapterParamsT<S>* adapter,
                       const DenoiseBatch<S>& batch, ForwardCache<S>& cache, DropoutContext dropout) {
  check_batch(config, p, batch);
  const int B = batch.batch_size();
  const int L = config.length;
  const int C = config.model_dim;
  const int H = config.num_heads;
  const bool use_dropout = dropout.rng != nullptr && config.dropout > 0.0;

  cache.audio_eff = batch.audio;
  for (int b = 0; b < B; ++b)
    if (!batch.audio_on[b]) cache.audio_eff.middleRows(b * L, L).rowwise() = p.uncond_audio.row(0);
  cache.audio_mish = mish<S>(cache.audio_eff);

  cache.time_code.resize(B, C);
  for (int b = 0; b < B; ++b) sinusoid_row<S>(batch.timesteps[b], cache.time_code.row(b));
  cache.time_pre = (cache.time_code * p.time_w1).rowwise() + p.time_b1.row(0);
  cache.time_act = mish<S>(cache.time_pre);
  cache.time_emb = (cache.time_act * p.time_w2).rowwise() + p.time_b2.row(0);

  const Mat<S>& pos = positions_for<S>(L, C);
  Mat<S> x = (batch.noisy * p.in_w).rowwise() + p.in_b.row(0);
  for (int b = 0; b < B; ++b) {
    auto blk = x.middleRows(b * L, L);
    blk += pos;
    blk.rowwise() += cache.time_emb.row(b);
  }

  if (adapter) {
    if (adapter->dim() != C || adapter->tokens.cols() != C) throw ShapeError("adapter width differs from model width");
    cache.ext_k_on = adapter->tokens * adapter->key_proj.transpose();
    cache.ext_v_on = adapter->tokens * adapter->value_proj.transpose();
    cache.ext_k_off = p.uncond_identity * adapter->key_proj.transpose();
    cache.ext_v_off = p.uncond_identity * adapter->value_proj.transpose();
  } else {
    cache.ext_k_on = Mat<S>::Zero(p.uncond_identity.rows(), C);
    cache.ext_v_on = cache.ext_k_on;
    cache.ext_k_off = cache.ext_k_on;
    cache.ext_v_off = cache.ext_k_on;
  }
  const Eigen::Index n_max = std::max(cache.ext_k_on.rows(), cache.ext_k_off.rows());

  cache.layers.resize(config.num_layers);
  for (int i = 0; i < config.num_layers; ++i) {
    const auto& lp = p.layers[i];
    auto& lc = cache.layers[i];
    lc.x_in = x;
    layer_norm(x, lp.ln1_gain, lp.ln1_bias, lc.ln1_xhat, lc.ln1_rstd, lc.ln1_out);
    lc.tilm_scale = (cache.audio_mish * lp.tilm_scale_w).rowwise() + lp.tilm_scale_b.row(0);
    lc.tilm_out = lc.ln1_out.cwiseProduct(lc.tilm_scale);
    lc.tilm_out.noalias() += cache.audio_mish * lp.tilm_shift_w;
    lc.tilm_out.rowwise() += lp.tilm_shift_b.row(0);

    lc.q = (lc.tilm_out * lp.q_w).rowwise() + lp.q_b.row(0);
    lc.k = (lc.tilm_out * lp.k_w).rowwise() + lp.k_b.row(0);
    lc.v = (lc.tilm_out * lp.v_w).rowwise() + lp.v_b.row(0);
    lc.attn_concat.resize(static_cast<Eigen::Index>(B) * L, C);
    lc.probs.resize(static_cast<Eigen::Index>(B) * H * L, L + n_max);
    for (int b = 0; b < B; ++b) {
      const Mat<S>& ek = batch.identity_on[b] ? cache.ext_k_on : cache.ext_k_off;
      const Mat<S>& ev = batch.identity_on[b] ? cache.ext_v_on : cache.ext_v_off;
      extended_attention<S>(lc.q.middleRows(b * L, L), lc.k.middleRows(b * L, L), lc.v.middleRows(b * L, L), ek, ev,
                            H, lc.attn_concat.middleRows(b * L, L),
                            lc.probs.block(static_cast<Eigen::Index>(b) * H * L, 0, H * L, L + ek.rows()));
    }
    Mat<S> attn = (lc.attn_concat * lp.o_w).rowwise() + lp.o_b.row(0);
    if (use_dropout) {
      dropout_mask(lc.attn_mask, attn.rows(), attn.cols(), config.dropout, *dropout.rng);
      attn = attn.cwiseProduct(lc.attn_mask);
    } else {
      lc.attn_mask.resize(0, 0);
    }
    lc.x_mid = lc.x_in + attn;

    layer_norm(lc.x_mid, lp.ln2_gain, lp.ln2_bias, lc.ln2_xhat, lc.ln2_rstd, lc.ln2_out);
    lc.ff_pre = (lc.ln2_out * lp.ff1_w).rowwise() + lp.ff1_b.row(0);
    lc.ff_act = mish<S>(lc.ff_pre);
    Mat<S> ff = (lc.ff_act * lp.ff2_w).rowwise() + lp.ff2_b.row(0);
    if (use_dropout) {
      dropout_mask(lc.ff_mask, ff.rows(), ff.cols(), config.dropout, *dropout.rng);
      ff = ff.cwiseProduct(lc.ff_mask);
    } else {
      lc.ff_mask.resize(0, 0);
    }
    x = lc.x_mid + ff;
  }

  layer_norm(x, p.lnf_gain, p.lnf_bias, cache.lnf_xhat, cache.lnf_rstd, cache.lnf_out);
  return (cache.lnf_out * p.out_w).rowwise() + p.out_b.row(0);
}

template <class S>
void denoise_backward(const ModelConfig& config, const BaseParamsT<S>& p, const AdapterParamsT<S>* adapter,
                      const DenoiseBatch<S>& batch, const ForwardCache<S>& cache, const Mat<S>& d_out,
                      BaseParamsT<S>* g, AdapterParamsT<S>* ag) {
  const int B = batch.batch_size();
  const int L = config.length;
  const int H = config.num_heads;
  if (!adapter) ag = nullptr;

  if (g) {
    g->out_w.noalias() += cache.lnf_out.transpose() * d_out;
    g->out_b += d_out.colwise().sum();
  }
  Mat<S> d_x = layer_norm_backward<S>(d_out * p.out_w.transpose(), cache.lnf_xhat, cache.lnf_rstd, p.lnf_gain,
                                      g ? &g->lnf_gain : nullptr, g ? &g->lnf_bias : nullptr);

  Mat<S> d_audio_mish = Mat<S>::Zero(cache.audio_mish.rows(), cache.audio_mish.cols());
  Mat<S> d_ext_k_on = Mat<S>::Zero(cache.ext_k_on.rows(), cache.ext_k_on.cols());
  Mat<S> d_ext_v_on = d_ext_k_on;
  Mat<S> d_ext_k_off = Mat<S>::Zero(cache.ext_k_off.rows(), cache.ext_k_off.cols());
  Mat<S> d_ext_v_off = d_ext_k_off;
  Mat<S> d_q, d_k, d_v;

  for (int i = config.num_layers - 1; i >= 0; --i) {
    const auto& lp = p.layers[i];
    const auto& lc = cache.layers[i];
    auto* lg = g ? &g->layers[i] : nullptr;

    // Feed-forward residual branch.
    Mat<S> d_ff = lc.ff_mask.size() ? Mat<S>(d_x.cwiseProduct(lc.ff_mask)) : d_x;
    if (lg) {
      lg->ff2_w.noalias() += lc.ff_act.transpose() * d_ff;
      lg->ff2_b += d_ff.colwise().sum();
    }
    Mat<S> d_pre = (d_ff * lp.ff2_w.transpose()).cwiseProduct(mish_grad<S>(lc.ff_pre));
    if (lg) {
      lg->ff1_w.noalias() += lc.ln2_out.transpose() * d_pre;
      lg->ff1_b += d_pre.colwise().sum();
    }
    Mat<S> d_mid = d_x + layer_norm_backward<S>(d_pre * lp.ff1_w.transpose(), lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gain,
                                                 lg ? &lg->ln2_gain : nullptr, lg ? &lg->ln2_bias : nullptr);

    // Attention residual branch.
    Mat<S> d_attn = lc.attn_mask.size() ? Mat<S>(d_mid.cwiseProduct(lc.attn_mask)) : d_mid;
    if (lg) {
      lg->o_w.noalias() += lc.attn_concat.transpose() * d_attn;
      lg->o_b += d_attn.colwise().sum();
    }
    const Mat<S> d_concat = d_attn * lp.o_w.transpose();
    d_q.resize(lc.q.rows(), lc.q.cols());
    d_k.resize(lc.k.rows(), lc.k.cols());
    d_v.resize(lc.v.rows(), lc.v.cols());
    for (int b = 0; b < B; ++b) {
      const bool on = batch.identity_on[b];
      const Mat<S>& ek = on ? cache.ext_k_on : cache.ext_k_off;
      const Mat<S>& ev = on ? cache.ext_v_on : cache.ext_v_off;
      Mat<S>& dek = on ? d_ext_k_on : d_ext_k_off;
      Mat<S>& dev = on ? d_ext_v_on : d_ext_v_off;
      extended_attention_backward<S>(
          lc.q.middleRows(b * L, L), lc.k.middleRows(b * L, L), lc.v.middleRows(b * L, L), ek, ev, H,
          lc.probs.block(static_cast<Eigen::Index>(b) * H * L, 0, H * L, L + ek.rows()),
          d_concat.middleRows(b * L, L), d_q.middleRows(b * L, L), d_k.middleRows(b * L, L),
          d_v.middleRows(b * L, L), dek, dev);
    }
    if (lg) {
      lg->q_w.noalias() += lc.tilm_out.transpose() * d_q;
      lg->k_w.noalias() += lc.tilm_out.transpose() * d_k;
      lg->v_w.noalias() += lc.tilm_out.transpose() * d_v;
      lg->q_b += d_q.colwise().sum();
      lg->k_b += d_k.colwise().sum();
      lg->v_b += d_v.colwise().sum();
    }
    Mat<S> d_tilm = d_q * lp.q_w.transpose();
    d_tilm.noalias() += d_k * lp.k_w.transpose();
    d_tilm.noalias() += d_v * lp.v_w.transpose();

    // TiLM: u = h * s(a) + m(a).
    const Mat<S> d_scale = d_tilm.cwiseProduct(lc.ln1_out);
    if (lg) {
      lg->tilm_scale_w.noalias() += cache.audio_mish.transpose() * d_scale;
      lg->tilm_scale_b += d_scale.colwise().sum();
      lg->tilm_shift_w.noalias() += cache.audio_mish.transpose() * d_tilm;
      lg->tilm_shift_b += d_tilm.colwise().sum();
    }
    d_audio_mish.noalias() += d_scale * lp.tilm_scale_w.transpose();
    d_audio_mish.noalias() += d_tilm * lp.tilm_shift_w.transpose();
    const Mat<S> d_ln1 = d_tilm.cwiseProduct(lc.tilm_scale);
    d_x = d_mid + layer_norm_backward<S>(d_ln1, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gain, lg ? &lg->ln1_gain : nullptr,
                                         lg ? &lg->ln1_bias : nullptr);
  }

  if (g) {
    g->in_w.noalias() += batch.noisy.transpose() * d_x;
    g->in_b += d_x.colwise().sum();
    Mat<S> d_temb(B, d_x.cols());
    for (int b = 0; b < B; ++b) d_temb.row(b) = d_x.middleRows(b * L, L).colwise().sum();
    g->time_w2.noalias() += cache.time_act.transpose() * d_temb;
    g->time_b2 += d_temb.colwise().sum();
    const Mat<S> d_tpre = (d_temb * p.time_w2.transpose()).cwiseProduct(mish_grad<S>(cache.time_pre));
    g->time_w1.noalias() += cache.time_code.transpose() * d_tpre;
    g->time_b1 += d_tpre.colwise().sum();

    const Mat<S> d_audio = d_audio_mish.cwiseProduct(mish_grad<S>(cache.audio_eff));
    for (int b = 0; b < B; ++b)
      if (!batch.audio_on[b]) g->uncond_audio += d_audio.middleRows(b * L, L).colwise().sum();
  }

  if (adapter) {
    // ext = tokens * W^T, so d tokens = d ext * W and d W = d ext^T * tokens.
    if (ag) {
      ag->tokens.noalias() += d_ext_k_on * adapter->key_proj + d_ext_v_on * adapter->value_proj;
      ag->key_proj.noalias() += d_ext_k_on.transpose() * adapter->tokens + d_ext_k_off.transpose() * p.uncond_identity;
      ag->value_proj.noalias() +=
          d_ext_v_on.transpose() * adapter->tokens + d_ext_v_off.transpose() * p.uncond_identity;
    }
    if (g) g->uncond_identity.noalias() += d_ext_k_off * adapter->key_proj + d_ext_v_off * adapter->value_proj;
  }
}

template <class S>
S denoise_loss_and_grad(const ModelConfig& config, const BaseParamsT<S>& params, const AdapterParamsT<S>* adapter,
                        const DenoiseBatch<S>& batch, const Mat<S>& noise, ForwardCache<S>& cache,
                        BaseParamsT<S>* base_grad, AdapterParamsT<S>* adapter_grad, DropoutContext dropout) {
  const Mat<S> pred = denoise_forward(config, params, adapter, batch, cache, dropout);
  if (noise.rows() != pred.rows() || noise.cols() != pred.cols()) throw ShapeError("noise target shape mismatch");
  const Mat<S> diff = pred - noise;
  const S count = static_cast<S>(diff.size());
  const S loss = diff.squaredNorm() / count;
  if (base_grad || adapter_grad) {
    const Mat<S> d_out = diff * (S(2) / count);
    denoise_backward(config, params, adapter, batch, cache, d_out, base_grad, adapter_grad);
  }
  return loss;
}

template Mat<float> denoise_forward<float>(const ModelConfig&, const BaseParamsT<float>&,
                                           const AdapterParamsT<float>*, const DenoiseBatch<float>&,
                                           ForwardCache<float>&, DropoutContext);
template Mat<double> denoise_forward<double>(const ModelConfig&, const BaseParamsT<double>&,
                                             const AdapterParamsT<double>*, const DenoiseBatch<double>&,
                                             ForwardCache<double>&, DropoutContext);
template void denoise_backward<float>(const ModelConfig&, const BaseParamsT<float>&, const AdapterParamsT<float>*,
                                      const DenoiseBatch<float>&, const ForwardCache<float>&, const Mat<float>&,
                                      BaseParamsT<float>*, AdapterParamsT<float>*);
template void denoise_backward<double>(const ModelConfig&, const BaseParamsT<double>&, const AdapterParamsT<double>*,
                                       const DenoiseBatch<double>&, const ForwardCache<double>&, const Mat<double>&,
                                       BaseParamsT<double>*, AdapterParamsT<double>*);
template float denoise_loss_and_grad<float>(const ModelConfig&, const BaseParamsT<float>&,
                                            const AdapterParamsT<float>*, const DenoiseBatch<float>&,
                                            const Mat<float>&, ForwardCache<float>&, BaseParamsT<float>*,
                                            AdapterParamsT<float>*, DropoutContext);
template double denoise_loss_and_grad<double>(const ModelConfig&, const BaseParamsT<double>&,
                                              const AdapterParamsT<double>*, const DenoiseBatch<double>&,
                                              const Mat<double>&, ForwardCache<double>&, BaseParamsT<double>*,
                                              AdapterParamsT<double>*, DropoutContext);

MatrixF denoise(const ModelConfig& config, const ExpressionSequence& noisy, int t, const AudioFeatures& audio,
                const BaseModelParams& params, const AdapterParams* adapter) {
  if (noisy.length() != config.length || audio.length() != config.length)
    throw ShapeError("clip length differs from model length " + std::to_string(config.length));
  DenoiseBatch<float> batch{noisy.values, audio.values, {t}, {1}, {1}};
  ForwardCache<float> cache;
  return denoise_forward(config, params, adapter, batch, cache);
}

ConditionCoins draw_condition_coins(double p, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ConditionCoins c;
  c.audio_dropped = u(rng) < p;
  c.identity_dropped = u(rng) < p;
  return c;
}

DroppedConditions apply_condition_dropout(const AudioFeatures& audio, const AdapterParams* adapter,
                                          const BaseModelParams& base, double p, Rng& rng) {
  const ConditionCoins coins = draw_condition_coins(p, rng);
  DroppedConditions out;
  out.audio_dropped = coins.audio_dropped;
  out.identity_dropped = coins.identity_dropped;
  out.audio = audio;
  if (coins.audio_dropped) out.audio.values.rowwise() = base.uncond_audio.row(0);
  if (adapter) {
    out.adapter = *adapter;
    if (coins.identity_dropped) out.adapter->tokens = base.uncond_identity;
  }
  return out;
}

}  // namespace expose
