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
#include <cmath>
#include <cstdint>
#include <numbers>

#include "dragtext/domain.hpp"
#include "dragtext/rng.hpp"

namespace dragtext {

/// Seeded synthetic editing case: one soft blob on a flat background, a
/// handle at the blob centre, a target 3-5 cells away and a box mask around
/// both.
struct ToyScene {
  ImageTensor image;
  Matrix mask;
  Point handle;
  Point target;
};

inline ToyScene make_toy_scene(std::uint64_t seed, int height = 16, int width = 16) {
  Rng g(seed);
  double bg[3], col[3];
  for (double& v : bg) v = 0.2 + 0.1 * g.uniform();
  const int hr = g.uniform_int(5, std::max(6, height - 5));
  const int hc = g.uniform_int(5, std::max(6, width - 5));
  const double angle = g.uniform() * 2.0 * std::numbers::pi;
  const double dist = 3.0 + 2.0 * g.uniform();
  const int tr = static_cast<int>(std::lround(std::clamp(hr + dist * std::sin(angle), 1.0, height - 2.0)));
  const int tc = static_cast<int>(std::lround(std::clamp(hc + dist * std::cos(angle), 1.0, width - 2.0)));
  for (double& v : col) v = 0.5 + 0.5 * g.uniform();
  constexpr double sigma = 1.5;
  Tensor3 x(3, height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double w = std::exp(-((r - hr) * (r - hr) + (c - hc) * (c - hc)) / (2.0 * sigma * sigma));
      for (int ch = 0; ch < 3; ++ch) x.at(ch, r, c) = std::clamp(bg[ch] + (col[ch] - bg[ch]) * w, 0.0, 1.0);
    }
  }
  Matrix mask = Matrix::Zero(height, width);
  const int r0 = std::max(0, std::min(hr, tr) - 4), r1 = std::min(height - 1, std::max(hr, tr) + 4);
  const int c0 = std::max(0, std::min(hc, tc) - 4), c1 = std::min(width - 1, std::max(hc, tc) + 4);
  mask.block(r0, c0, r1 - r0 + 1, c1 - c0 + 1).setOnes();
  return {ImageTensor(std::move(x)), std::move(mask), {double(hr), double(hc)}, {double(tr), double(tc)}};
}

inline constexpr const char* kToyPrompt = "a photo of a jug and a glass";

}  // namespace dragtext
