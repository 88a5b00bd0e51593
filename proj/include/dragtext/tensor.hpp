// Copyright 2026 The dragtext Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>

#include "dragtext/error.hpp"

namespace dragtext {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Channel-major spatial tensor. Column `r * width + c` holds the channel
/// vector at lattice point (r, c).
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix data;

  Tensor3() = default;
  Tensor3(int c, int h, int w) : channels(c), height(h), width(w), data(Matrix::Zero(c, h * w)) {}
  Tensor3(int h, int w, Matrix values)
      : channels(static_cast<int>(values.rows())), height(h), width(w), data(std::move(values)) {
    if (data.cols() != static_cast<Eigen::Index>(h) * w) {
      detail::fail(ErrorCode::ShapeError, "tensor data has ", data.cols(), " columns, expected ", h * w);
    }
  }

  static Tensor3 zeros_like(const Tensor3& other) {
    return Tensor3(other.channels, other.height, other.width);
  }

  int pixels() const noexcept { return height * width; }
  int index(int r, int c) const noexcept { return r * width + c; }

  double& at(int ch, int r, int c) { return data(ch, index(r, c)); }
  double at(int ch, int r, int c) const { return data(ch, index(r, c)); }

  auto column(int r, int c) { return data.col(index(r, c)); }
  auto column(int r, int c) const { return data.col(index(r, c)); }

  bool same_shape(const Tensor3& other) const noexcept {
    return channels == other.channels && height == other.height && width == other.width;
  }

  bool all_finite() const { return data.allFinite(); }
};

inline void require_same_shape(const Tensor3& a, const Tensor3& b, const char* what) {
  if (!a.same_shape(b)) {
    detail::fail(ErrorCode::ShapeMismatch, what, ": ", a.channels, "x", a.height, "x", a.width, " vs ",
                 b.channels, "x", b.height, "x", b.width);
  }
}

inline double sign(double x) noexcept { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline Matrix sign(const Matrix& m) {
  return m.unaryExpr([](double x) { return sign(x); });
}

inline double rms(const Matrix& m) {
  return m.size() == 0 ? 0.0 : std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

}  // namespace dragtext
