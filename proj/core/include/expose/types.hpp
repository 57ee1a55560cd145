#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>

namespace expose {

/// Row-major dense matrix; rows are frames (or batch*frames), columns are channels.
template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatrixF = Mat<float>;
using MatrixD = Mat<double>;
using RowVecF = RowVec<float>;

/// All stochastic operations take one of these explicitly.
using Rng = std::mt19937_64;

inline constexpr int kExpressionDims = 50;
inline constexpr int kJawDims = 3;
inline constexpr int kFeatureDim = kExpressionDims + kJawDims;
inline constexpr double kFrameRate = 25.0;

/// L x 53 trajectory of expression (50) and jaw pose (3) coefficients.
struct ExpressionSequence {
  MatrixF values;
  double frame_rate = kFrameRate;

  int length() const { return static_cast<int>(values.rows()); }
};

/// L x D frame-synchronous audio conditioning.
struct AudioFeatures {
  MatrixF values;

  int length() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }
};

struct Waveform {
  Eigen::VectorXf samples;
  double sample_rate = 16000.0;
};

}  // namespace expose
