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

#include <cstddef>
#include <functional>
#include <vector>

#include "dragtext/backend.hpp"
#include "dragtext/domain.hpp"
#include "dragtext/sampling.hpp"

namespace dragtext {

/// One L1 matching term. The feature at `position` (clamped to the grid) is
/// pulled toward `reference`, a value copied out of the graph: gradients never
/// reach whatever produced it.
struct MatchTerm {
  std::size_t point = 0;
  Point position;
  Vector reference;
};

/// Builds the matching terms for a feature map at the given block.
using TermBuilder = std::function<std::vector<MatchTerm>(const Tensor3& features, int block)>;

/// Sum over terms of weight[point] * |F(clamp(position)) - reference|_1.
/// Per-point (unweighted) sums go to `per_point`; dL/dF is accumulated into
/// `grad` when given.
inline double match_loss(const Tensor3& f, const std::vector<MatchTerm>& terms, const std::vector<double>& weights,
                         std::vector<double>* per_point, Tensor3* grad) {
  double total = 0.0;
  for (const auto& term : terms) {
    const Point p = clamp_point(term.position, f.height, f.width);
    const Vector diff = bilinear_sample(f, p) - term.reference;
    const double l = diff.lpNorm<1>();
    const double w = weights.empty() ? 1.0 : weights.at(term.point);
    total += w * l;
    if (per_point) per_point->at(term.point) += l;
    if (grad && w != 0.0) bilinear_sample_vjp(p, w * diff.unaryExpr([](double v) { return sign(v); }), *grad);
  }
  return total;
}

/// Motion supervision terms: region around each active handle, samples one
/// unit along the drag direction, references read from the same map.
inline std::vector<MatchTerm> shifted_terms(const Tensor3& f, const PointSet& points, int radius, double tolerance) {
  std::vector<MatchTerm> terms;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points.active(i)) continue;
    const auto d = drag_direction(points.handles()[i], points.targets()[i], tolerance);
    if (!d) continue;
    for (const Cell& q : square_region(points.handles()[i], radius, f.height, f.width)) {
      terms.push_back({i, {q.row + d->row, q.col + d->col}, f.column(q.row, q.col)});
    }
  }
  return terms;
}

/// Anchored terms: samples `stride` units along the drag direction from the
/// region around the current handle, references from `original` at the same
/// offset around the initial handle.
inline std::vector<MatchTerm> anchored_terms(const Tensor3& original, const PointSet& points, int radius,
                                             double tolerance, double stride) {
  std::vector<MatchTerm> terms;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points.active(i)) continue;
    const Point h = points.handles()[i];
    const Point h0 = points.initial_handles()[i];
    const auto d = drag_direction(h, points.targets()[i], tolerance);
    if (!d) continue;
    for (const Cell& q : square_region(h, radius, original.height, original.width)) {
      const Point q0 = clamp_point({h0.row + (q.row - h.row), h0.col + (q.col - h.col)}, original.height,
                                   original.width);
      terms.push_back({i, {q.row + stride * d->row, q.col + stride * d->col}, bilinear_sample(original, q0)});
    }
  }
  return terms;
}

/// Per-point template patch: column (dr + r) * (2r + 1) + (dc + r) holds the
/// feature for integer offset (dr, dc) from the handle.
inline Matrix template_patch(const Tensor3& f, const Point& center, int radius) {
  const int side = 2 * radius + 1;
  Matrix t(f.channels, side * side);
  for (int dr = -radius; dr <= radius; ++dr) {
    for (int dc = -radius; dc <= radius; ++dc) {
      t.col((dr + radius) * side + (dc + radius)) =
          bilinear_sample(f, clamp_point({center.row + dr, center.col + dc}, f.height, f.width));
    }
  }
  return t;
}

/// Template terms: offsets around the (possibly fractional) handle that stay
/// on the grid, samples one unit along the drag direction, references from
/// the point's template patch.
inline std::vector<MatchTerm> template_terms(const std::vector<Matrix>& templates, const PointSet& points, int radius,
                                             double tolerance, int height, int width) {
  std::vector<MatchTerm> terms;
  const int side = 2 * radius + 1;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points.active(i)) continue;
    const Point h = points.handles()[i];
    const auto d = drag_direction(h, points.targets()[i], tolerance);
    if (!d) continue;
    for (int dr = -radius; dr <= radius; ++dr) {
      for (int dc = -radius; dc <= radius; ++dc) {
        const Point q{h.row + dr, h.col + dc};
        if (!in_bounds(q, height, width)) continue;
        terms.push_back({i, {q.row + d->row, q.col + d->col}, templates.at(i).col((dr + radius) * side + (dc + radius))});
      }
    }
  }
  return terms;
}

/// lambda * |(a - ref) * frozen|_1 with `frozen` broadcast over channels;
/// gradient with respect to `a` accumulated into `grad` when given.
inline double masked_l1(const Tensor3& a, const Tensor3& ref, const Eigen::RowVectorXd& frozen, double lambda,
                        Tensor3* grad) {
  require_same_shape(a, ref, "masked difference");
  const Matrix diff = ((a.data - ref.data).array().rowwise() * frozen.array()).matrix();
  if (grad) grad->data.array() += lambda * (sign(diff).array().rowwise() * frozen.array());
  return lambda * diff.lpNorm<1>();
}

/// Differentiable forward path used by the losses: either the latent itself
/// is optimized, or an injected bottleneck feature with the latent held fixed.
class ForwardPath {
 public:
  explicit ForwardPath(const Backend& backend, const Tensor3* fixed_latent = nullptr)
      : backend_(backend), fixed_latent_(fixed_latent) {
    if (fixed_latent_ && !backend_.supports_bottleneck()) {
      detail::fail(ErrorCode::BackendCapabilityError, "backend '", backend_.info().name,
                   "' cannot inject an external bottleneck feature");
    }
  }

  const Backend& backend() const noexcept { return backend_; }
  bool bottleneck() const noexcept { return fixed_latent_ != nullptr; }

  FeatureMap features(const Tensor3& x, int t, const Matrix& c, int block) const {
    return bottleneck() ? backend_.feature_map_from_bottleneck(x, t, c, block) : backend_.feature_map(x, t, c, block);
  }

  InputGrads features_vjp(const Tensor3& x, int t, const Matrix& c, int block, const Tensor3& g) const {
    return bottleneck() ? backend_.feature_map_from_bottleneck_vjp(x, t, c, block, g)
                        : backend_.feature_map_vjp(x, t, c, block, g);
  }

  /// One DDIM step t -> t - 1 of the latent, noise predicted from x.
  Tensor3 step(const Tensor3& x, int t, const Matrix& c) const {
    if (!bottleneck()) return ddim_denoise_step(backend_, x, t, c);
    const auto k = ddim_denoise_coeffs(backend_.info(), t);
    Tensor3 out = backend_.predict_noise_from_bottleneck(x, t, c);
    out.data = k.a * fixed_latent_->data + k.b * out.data;
    return out;
  }

  InputGrads step_vjp(const Tensor3& x, int t, const Matrix& c, const Tensor3& g) const {
    if (!bottleneck()) return ddim_denoise_step_vjp(backend_, x, t, c, g);
    const auto k = ddim_denoise_coeffs(backend_.info(), t);
    Tensor3 scaled = g;
    scaled.data *= k.b;
    return backend_.predict_noise_from_bottleneck_vjp(x, t, c, scaled);
  }

 private:
  const Backend& backend_;
  const Tensor3* fixed_latent_;
};

struct LossEval {
  double value = 0.0;
  double match = 0.0;
  double regularizer = 0.0;
  std::vector<double> per_point;
  /// Gradient with respect to the optimized variable (latent/bottleneck for
  /// the image loss, text values for the text loss).
  Matrix grad;
};

struct ImageLossSpec {
  int timestep = 0;
  int block = 3;
  double lambda_image = 0.0;
  Eigen::RowVectorXd frozen;  // 1 - M_image, flattened
  const Tensor3* reference_step = nullptr;  // sg(z_{t-1}^0)
};

/// Image-side loss: matching terms on F(x, c) plus the masked one-step
/// denoise penalty. Gradient only with respect to x.
inline LossEval image_loss(const ForwardPath& path, const Tensor3& x, const Matrix& c, const ImageLossSpec& spec,
                           const TermBuilder& build, std::size_t num_points, bool want_grad = true) {
  LossEval out;
  out.per_point.assign(num_points, 0.0);
  const FeatureMap f = path.features(x, spec.timestep, c, spec.block);
  const auto terms = build(f.values, spec.block);
  Tensor3 gf = Tensor3::zeros_like(f.values);
  out.match = match_loss(f.values, terms, {}, &out.per_point, want_grad ? &gf : nullptr);
  Tensor3 gx = Tensor3::zeros_like(x);
  if (want_grad) gx = path.features_vjp(x, spec.timestep, c, spec.block, gf).input;
  if (spec.lambda_image != 0.0 && spec.reference_step) {
    const Tensor3 prev = path.step(x, spec.timestep, c);
    Tensor3 gprev = Tensor3::zeros_like(prev);
    out.regularizer = masked_l1(prev, *spec.reference_step, spec.frozen, spec.lambda_image, want_grad ? &gprev : nullptr);
    if (want_grad) gx.data += path.step_vjp(x, spec.timestep, c, gprev).input.data;
  }
  out.value = out.match + out.regularizer;
  if (want_grad) out.grad = std::move(gx.data);
  return out;
}

struct TextLossSpec {
  int timestep = 0;
  int block = 3;
  double lambda_text = 0.0;
  const Matrix* original = nullptr;  // sg(c^0)
  const Matrix* token_mask = nullptr;
  std::vector<double> alphas;  // empty = all ones
};

/// Text-side loss: weighted matching terms on F(x, c) plus the masked
/// deviation from the original embedding. Gradient only with respect to c.
inline LossEval text_loss(const ForwardPath& path, const Tensor3& x, const Matrix& c, const TextLossSpec& spec,
                          const TermBuilder& build, std::size_t num_points, bool want_grad = true) {
  LossEval out;
  out.per_point.assign(num_points, 0.0);
  const FeatureMap f = path.features(x, spec.timestep, c, spec.block);
  const auto terms = build(f.values, spec.block);
  Tensor3 gf = Tensor3::zeros_like(f.values);
  out.match = match_loss(f.values, terms, spec.alphas, &out.per_point, want_grad ? &gf : nullptr);
  Matrix gc = Matrix::Zero(c.rows(), c.cols());
  if (want_grad) gc = path.features_vjp(x, spec.timestep, c, spec.block, gf).text;
  const Matrix dev = (c - *spec.original).cwiseProduct(*spec.token_mask);
  out.regularizer = spec.lambda_text * dev.lpNorm<1>();
  if (want_grad) gc += spec.lambda_text * sign(dev).cwiseProduct(*spec.token_mask);
  out.value = out.match + out.regularizer;
  if (want_grad) out.grad = std::move(gc);
  return out;
}

}  // namespace dragtext
