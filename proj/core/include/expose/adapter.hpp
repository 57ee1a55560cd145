#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "expose/model_config.hpp"
#include "expose/types.hpp"

namespace expose {

template <class S>
struct NamedTensor {
  std::string name;
  S* tensor;
};

/// Subject adapter: N tokens and one key/value projection pair shared by every layer.
/// Extra keys are tokens * key_proj^T (the C x C map applied to each token).
template <class S>
struct AdapterParamsT {
  Mat<S> tokens;      // N x C
  Mat<S> key_proj;    // C x C
  Mat<S> value_proj;  // C x C

  int token_count() const { return static_cast<int>(tokens.rows()); }
  int dim() const { return static_cast<int>(key_proj.rows()); }

  std::vector<NamedTensor<Mat<S>>> tensors() {
    return {{"adapter.tokens", &tokens}, {"adapter.key_proj", &key_proj}, {"adapter.value_proj", &value_proj}};
  }
  std::vector<NamedTensor<const Mat<S>>> tensors() const {
    return {{"adapter.tokens", &tokens}, {"adapter.key_proj", &key_proj}, {"adapter.value_proj", &value_proj}};
  }

  std::int64_t parameter_count() const { return tokens.size() + key_proj.size() + value_proj.size(); }

  static AdapterParamsT zeros(int tokens_n, int dim) {
    return {Mat<S>::Zero(tokens_n, dim), Mat<S>::Zero(dim, dim), Mat<S>::Zero(dim, dim)};
  }

  template <class T>
  AdapterParamsT<T> cast() const {
    return {tokens.template cast<T>(), key_proj.template cast<T>(), value_proj.template cast<T>()};
  }
};

using AdapterParams = AdapterParamsT<float>;

/// N * C + 2 * C^2.
std::int64_t count_adapter_params(std::int64_t dim, std::int64_t tokens);

/// Tokens and key projection ~ N(0, 0.02^2); value projection zero.
AdapterParams init_adapter(const ModelConfig& config, Rng& rng);

/// Multi-head scaled dot-product attention of q over [k; ext_k] and [v; ext_v].
/// q, k, v are L x C, ext_k and ext_v are N x C (N may be 0). When probs is given
/// it receives the (heads * L) x (L + N) softmax weights, head-major.
template <class S>
void extended_attention(const Eigen::Ref<const Mat<S>>& q, const Eigen::Ref<const Mat<S>>& k,
                        const Eigen::Ref<const Mat<S>>& v, const Eigen::Ref<const Mat<S>>& ext_k,
                        const Eigen::Ref<const Mat<S>>& ext_v, int heads, Eigen::Ref<Mat<S>> out,
                        Eigen::Ref<Mat<S>> probs);

/// Backward of extended_attention given its saved softmax weights. Gradients for
/// q, k, v are written; gradients for ext_k and ext_v are accumulated.
template <class S>
void extended_attention_backward(const Eigen::Ref<const Mat<S>>& q, const Eigen::Ref<const Mat<S>>& k,
                                 const Eigen::Ref<const Mat<S>>& v, const Eigen::Ref<const Mat<S>>& ext_k,
                                 const Eigen::Ref<const Mat<S>>& ext_v, int heads,
                                 const Eigen::Ref<const Mat<S>>& probs, const Eigen::Ref<const Mat<S>>& d_out,
                                 Eigen::Ref<Mat<S>> d_q, Eigen::Ref<Mat<S>> d_k, Eigen::Ref<Mat<S>> d_v,
                                 Eigen::Ref<Mat<S>> d_ext_k, Eigen::Ref<Mat<S>> d_ext_v);

/// Attention with the adapter's projected tokens appended to keys and values.
MatrixF adapted_attention(const MatrixF& q, const MatrixF& k, const MatrixF& v, const AdapterParams& adapter,
                          int heads, MatrixF* probs = nullptr);

}  // namespace expose
