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

#include <cmath>
#include <utility>
#include <vector>

#include "dragtext/dragcore.hpp"

namespace dragtext {

/// (1 - omega) a + omega b, componentwise.
inline Matrix affine_blend(const Matrix& a, const Matrix& b, double omega) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    detail::fail(ErrorCode::ShapeMismatch, "blend operands ", a.rows(), "x", a.cols(), " vs ", b.rows(), "x",
                 b.cols());
  }
  if (!std::isfinite(omega)) detail::fail_field(ErrorCode::BadInput, "omegas", "omega must be finite");
  return (1.0 - omega) * a + omega * b;
}

/// Blends latent and text with the same omega. omega = 0 gives the original
/// pair and omega = 1 the dragged pair; values outside [0, 1] extrapolate.
inline std::pair<Tensor3, Matrix> interpolate_pair(const Tensor3& original_latent, const Tensor3& dragged_latent,
                                                   const Matrix& original_text, const Matrix& dragged_text,
                                                   double omega) {
  require_same_shape(original_latent, dragged_latent, "interpolated latents");
  Tensor3 z(original_latent.height, original_latent.width,
            affine_blend(original_latent.data, dragged_latent.data, omega));
  return {std::move(z), affine_blend(original_text, dragged_text, omega)};
}

inline DragEndpoint interpolate_endpoints(const DragEndpoint& a, const DragEndpoint& b, double omega) {
  if (a.latent.timestep != b.latent.timestep) {
    detail::fail(ErrorCode::ShapeMismatch, "endpoints sit at timesteps ", a.latent.timestep, " and ",
                 b.latent.timestep);
  }
  if (a.bottleneck.has_value() != b.bottleneck.has_value()) {
    detail::fail(ErrorCode::ShapeMismatch, "only one endpoint carries a bottleneck feature");
  }
  auto [z, c] = interpolate_pair(a.latent.values, b.latent.values, a.text, b.text, omega);
  DragEndpoint out{{std::move(z), a.latent.timestep, 0}, std::move(c), std::nullopt};
  if (a.bottleneck) {
    require_same_shape(*a.bottleneck, *b.bottleneck, "interpolated bottlenecks");
    out.bottleneck = Tensor3(a.bottleneck->height, a.bottleneck->width,
                             affine_blend(a.bottleneck->data, b.bottleneck->data, omega));
  }
  return out;
}

/// One decoded image per omega, each denoised from the drag timestep.
inline std::vector<ImageTensor> render_interpolation(const Backend& backend, const DragEndpoint& original,
                                                     const DragEndpoint& dragged, const std::vector<double>& omegas) {
  std::vector<ImageTensor> out;
  out.reserve(omegas.size());
  for (double w : omegas) out.push_back(render_endpoint(backend, interpolate_endpoints(original, dragged, w)));
  return out;
}

inline std::vector<ImageTensor> render_interpolation(const Backend& backend, const DragResult& result,
                                                     const std::vector<double>& omegas) {
  return render_interpolation(backend, result.original, result.dragged, omegas);
}

/// w^k = sum_i |g_i - h_i^k| / sum_i |g_i - h_i^0|.
inline double intention_blend_weight(const PointSet& points) {
  double now = 0.0, initial = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    now += distance(points.targets()[i], points.handles()[i]);
    initial += distance(points.targets()[i], points.initial_handles()[i]);
  }
  if (initial == 0.0) detail::fail(ErrorCode::ZeroInitialDistance, "every initial handle sits on its target");
  return now / initial;
}

/// w c_org + (1 - w) c_int. The weight multiplies the original embedding.
inline Matrix intention_blend(const Matrix& original, const Matrix& intention, double w) {
  return affine_blend(intention, original, w);
}

}  // namespace dragtext
