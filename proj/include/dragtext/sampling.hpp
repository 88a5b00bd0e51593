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

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "dragtext/domain.hpp"
#include "dragtext/tensor.hpp"

namespace dragtext {

struct Cell {
  int row = 0;
  int col = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

inline Point to_point(const Cell& c) { return {double(c.row), double(c.col)}; }

inline bool in_bounds(const Point& p, int height, int width) {
  return p.row >= 0.0 && p.col >= 0.0 && p.row <= height - 1 && p.col <= width - 1;
}

inline Point clamp_point(const Point& p, int height, int width) {
  return {std::clamp(p.row, 0.0, double(height - 1)), std::clamp(p.col, 0.0, double(width - 1))};
}

/// Lattice points (x, y) with |x - center.row| <= r and |y - center.col| <= r
/// inside [0, height) x [0, width), in row-major order.
inline std::vector<Cell> square_region(const Point& center, int r, int height, int width) {
  std::vector<Cell> cells;
  const int r0 = std::max(0, static_cast<int>(std::ceil(center.row - r)));
  const int r1 = std::min(height - 1, static_cast<int>(std::floor(center.row + r)));
  const int c0 = std::max(0, static_cast<int>(std::ceil(center.col - r)));
  const int c1 = std::min(width - 1, static_cast<int>(std::floor(center.col + r)));
  for (int x = r0; x <= r1; ++x) {
    for (int y = c0; y <= c1; ++y) cells.push_back({x, y});
  }
  return cells;
}

/// Unit vector from handle to target, or nullopt (reached) when the two are
/// within `tolerance`.
inline std::optional<Point> drag_direction(const Point& handle, const Point& target, double tolerance = 1.0) {
  const double dr = target.row - handle.row;
  const double dc = target.col - handle.col;
  const double n = std::hypot(dr, dc);
  if (!(n > tolerance) || n == 0.0) return std::nullopt;
  return Point{dr / n, dc / n};
}

struct BilinearCorner {
  int index;
  double weight;
};

/// Four lattice neighbours of `p` with their blend weights. Corners past the
/// last row/column collapse onto it with zero weight contribution.
inline std::array<BilinearCorner, 4> bilinear_corners(const Point& p, int height, int width) {
  if (!in_bounds(p, height, width)) {
    detail::fail(ErrorCode::OutOfBounds, "sample (", p.row, ", ", p.col, ") outside ", height, "x", width);
  }
  const int r0 = std::min(static_cast<int>(std::floor(p.row)), height - 1);
  const int c0 = std::min(static_cast<int>(std::floor(p.col)), width - 1);
  const int r1 = std::min(r0 + 1, height - 1);
  const int c1 = std::min(c0 + 1, width - 1);
  const double fr = p.row - r0;
  const double fc = p.col - c0;
  return {{{r0 * width + c0, (1.0 - fr) * (1.0 - fc)},
           {r0 * width + c1, (1.0 - fr) * fc},
           {r1 * width + c0, fr * (1.0 - fc)},
           {r1 * width + c1, fr * fc}}};
}

inline Vector bilinear_sample(const Tensor3& f, const Point& p) {
  const auto corners = bilinear_corners(p, f.height, f.width);
  Vector out = Vector::Zero(f.channels);
  for (const auto& k : corners) {
    if (k.weight != 0.0) out += k.weight * f.data.col(k.index);
  }
  return out;
}

inline Vector bilinear_sample(const FeatureMap& f, const Point& p) { return bilinear_sample(f.values, p); }

/// Accumulates dL/dF into `grad` given dL/d(sample).
inline void bilinear_sample_vjp(const Point& p, const Vector& g, Tensor3& grad) {
  const auto corners = bilinear_corners(p, grad.height, grad.width);
  for (const auto& k : corners) {
    if (k.weight != 0.0) grad.data.col(k.index) += k.weight * g;
  }
}

/// d(sample)/d(position) as a channels x 2 Jacobian (row, col). One-sided at
/// lattice lines.
inline Matrix bilinear_sample_position_jacobian(const Tensor3& f, const Point& p) {
  const auto k = bilinear_corners(p, f.height, f.width);
  const double fr = p.row - std::floor(std::min(p.row, double(f.height - 1)));
  const double fc = p.col - std::floor(std::min(p.col, double(f.width - 1)));
  Matrix j(f.channels, 2);
  j.col(0) = (1.0 - fc) * (f.data.col(k[2].index) - f.data.col(k[0].index)) +
             fc * (f.data.col(k[3].index) - f.data.col(k[1].index));
  j.col(1) = (1.0 - fr) * (f.data.col(k[1].index) - f.data.col(k[0].index)) +
             fr * (f.data.col(k[3].index) - f.data.col(k[2].index));
  return j;
}

}  // namespace dragtext
