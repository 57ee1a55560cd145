#include "expose/adapter.hpp"

#include <cmath>

#include "expose/errors.hpp"

namespace expose {

std::int64_t count_adapter_params(std::int64_t dim, std::int64_t tokens) {
  return tokens * dim + 2 * dim * dim;
}

AdapterParams init_adapter(const ModelConfig& config, Rng& rng) {
  config.validate();
  const int c = config.model_dim;
  const int n = config.adapter_tokens;
  std::normal_distribution<float> normal(0.0f, 0.02f);
  AdapterParams a = AdapterParams::zeros(n, c);
  for (int i = 0; i < a.tokens.size(); ++i) a.tokens.data()[i] = normal(rng);
  for (int i = 0; i < a.key_proj.size(); ++i) a.key_proj.data()[i] = normal(rng);
  return a;
}

template <class S>
void extended_attention(const Eigen::Ref<const Mat<S>>& q, const Eigen::Ref<const Mat<S>>& k,
                        const Eigen::Ref<const Mat<S>>& v, const Eigen::Ref<const Mat<S>>& ext_k,
                        const Eigen::Ref<const Mat<S>>& ext_v, int heads, Eigen::Ref<Mat<S>> out,
                        Eigen::Ref<Mat<S>> probs) {
  const Eigen::Index len = q.rows();
  const Eigen::Index c = q.cols();
  const Eigen::Index n = ext_k.rows();
  if (k.rows() != len || v.rows() != len || k.cols() != c || v.cols() != c)
    throw ShapeError("attention q/k/v shapes disagree");
  if (n > 0 && (ext_k.cols() != c || ext_v.cols() != c || ext_v.rows() != n))
    throw ShapeError("adapter key/value width differs from model width");
  if (heads < 1 || c % heads != 0) throw ShapeError("model width not divisible by head count");
  const Eigen::Index dh = c / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  // Contiguous scratch keeps the softmax exp vectorized.
  thread_local Mat<S> scores;
  scores.resize(len, len + n);
  for (int h = 0; h < heads; ++h) {
    scores.leftCols(len).noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    if (n > 0) scores.rightCols(n).noalias() = q.middleCols(h * dh, dh) * ext_k.middleCols(h * dh, dh).transpose();
    for (Eigen::Index r = 0; r < len; ++r) {
      auto row = scores.row(r).array();
      row = (row - row.maxCoeff()) * scale;
    }
    scores.array() = scores.array().exp();
    for (Eigen::Index r = 0; r < len; ++r) scores.row(r) /= scores.row(r).sum();
    probs.block(h * len, 0, len, len + n) = scores;
    auto o = out.middleCols(h * dh, dh);
    o.noalias() = scores.leftCols(len) * v.middleCols(h * dh, dh);
    if (n > 0) o.noalias() += scores.rightCols(n) * ext_v.middleCols(h * dh, dh);
  }
}

template <class S>
void extended_attention_backward(const Eigen::Ref<const Mat<S>>& q, const Eigen::Ref<const Mat<S>>& k,
                                 const Eigen::Ref<const Mat<S>>& v, const Eigen::Ref<const Mat<S>>& ext_k,
                                 const Eigen::Ref<const Mat<S>>& ext_v, int heads,
                                 const Eigen::Ref<const Mat<S>>& probs, const Eigen::Ref<const Mat<S>>& d_out,
                                 Eigen::Ref<Mat<S>> d_q, Eigen::Ref<Mat<S>> d_k, Eigen::Ref<Mat<S>> d_v,
                                 Eigen::Ref<Mat<S>> d_ext_k, Eigen::Ref<Mat<S>> d_ext_v) {
  const Eigen::Index len = q.rows();
  const Eigen::Index c = q.cols();
  const Eigen::Index n = ext_k.rows();
  const Eigen::Index dh = c / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  Mat<S> d_p(len, len + n);

  for (int h = 0; h < heads; ++h) {
    const auto p = probs.block(h * len, 0, len, len + n);
    const auto d_o = d_out.middleCols(h * dh, dh);
    d_p.leftCols(len).noalias() = d_o * v.middleCols(h * dh, dh).transpose();
    if (n > 0) d_p.rightCols(n).noalias() = d_o * ext_v.middleCols(h * dh, dh).transpose();
    d_v.middleCols(h * dh, dh).noalias() = p.leftCols(len).transpose() * d_o;
    if (n > 0) d_ext_v.middleCols(h * dh, dh).noalias() += p.rightCols(n).transpose() * d_o;

    // softmax backward: dS = P * (dP - <dP, P>_row)
    const Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (d_p.array() * p.array()).rowwise().sum();
    d_p = (p.array() * (d_p.array().colwise() - dots.array())).matrix() * scale;

    d_q.middleCols(h * dh, dh).noalias() = d_p.leftCols(len) * k.middleCols(h * dh, dh);
    if (n > 0) d_q.middleCols(h * dh, dh).noalias() += d_p.rightCols(n) * ext_k.middleCols(h * dh, dh);
    d_k.middleCols(h * dh, dh).noalias() = d_p.leftCols(len).transpose() * q.middleCols(h * dh, dh);
    if (n > 0) d_ext_k.middleCols(h * dh, dh).noalias() += d_p.rightCols(n).transpose() * q.middleCols(h * dh, dh);
  }
}

template void extended_attention<float>(const Eigen::Ref<const MatrixF>&, const Eigen::Ref<const MatrixF>&,
                                        const Eigen::Ref<const MatrixF>&, const Eigen::Ref<const MatrixF>&,
                                        const Eigen::Ref<const MatrixF>&, int, Eigen::Ref<MatrixF>,
                                        Eigen::Ref<MatrixF>);
template void extended_attention<double>(const Eigen::Ref<const MatrixD>&, const Eigen::Ref<const MatrixD>&,
                                         const Eigen::Ref<const MatrixD>&, const Eigen::Ref<const MatrixD>&,
                                         const Eigen::Ref<const MatrixD>&, int, Eigen::Ref<MatrixD>,
                                         Eigen::Ref<MatrixD>);
template void extended_attention_backward<float>(
    const Eigen::Ref<const MatrixF>&, const Eigen::Ref<const MatrixF>&, const Eigen::Ref<const MatrixF>&,
    const Eigen::Ref<const MatrixF>&, const Eigen::Ref<const MatrixF>&, int, const Eigen::Ref<const MatrixF>&,
    const Eigen::Ref<const MatrixF>&, Eigen::Ref<MatrixF>, Eigen::Ref<MatrixF>, Eigen::Ref<MatrixF>,
    Eigen::Ref<MatrixF>, Eigen::Ref<MatrixF>);
template void extended_attention_backward<double>(
    const Eigen::Ref<const MatrixD>&, const Eigen::Ref<const MatrixD>&, const Eigen::Ref<const MatrixD>&,
    const Eigen::Ref<const MatrixD>&, const Eigen::Ref<const MatrixD>&, int, const Eigen::Ref<const MatrixD>&,
    const Eigen::Ref<const MatrixD>&, Eigen::Ref<MatrixD>, Eigen::Ref<MatrixD>, Eigen::Ref<MatrixD>,
    Eigen::Ref<MatrixD>, Eigen::Ref<MatrixD>);

MatrixF adapted_attention(const MatrixF& q, const MatrixF& k, const MatrixF& v, const AdapterParams& adapter,
                          int heads, MatrixF* probs) {
  if (adapter.token_count() > 0 && (adapter.dim() != q.cols() || adapter.tokens.cols() != q.cols()))
    throw ShapeError("adapter width differs from attention width");
  const MatrixF ext_k = adapter.token_count() > 0 ? MatrixF(adapter.tokens * adapter.key_proj.transpose())
                                                  : MatrixF(0, q.cols());
  const MatrixF ext_v = adapter.token_count() > 0 ? MatrixF(adapter.tokens * adapter.value_proj.transpose())
                                                  : MatrixF(0, q.cols());
  MatrixF out(q.rows(), q.cols());
  MatrixF p(heads * q.rows(), q.rows() + ext_k.rows());
  extended_attention<float>(q, k, v, ext_k, ext_v, heads, out, p);
  if (probs) *probs = std::move(p);
  return out;
}

}  // namespace expose
