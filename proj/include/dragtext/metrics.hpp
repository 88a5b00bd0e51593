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

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dragtext/backend.hpp"
#include "dragtext/sampling.hpp"

namespace dragtext {

/// Lattice point of `features` nearest (L2) to `reference`; first minimum in
/// row-major order.
inline Cell nearest_feature(const Tensor3& features, const Vector& reference) {
  double best = std::numeric_limits<double>::infinity();
  Cell cell{};
  for (int r = 0; r < features.height; ++r) {
    for (int c = 0; c < features.width; ++c) {
      const double d = (features.column(r, c) - reference).squaredNorm();
      if (d < best) {
        best = d;
        cell = {r, c};
      }
    }
  }
  return cell;
}

struct MeanDistance {
  double value = 0.0;
  std::vector<Cell> correspondences;
  std::vector<double> per_point;
};

/// Correspondence features: block-3 map of the clean latent at t = 0 under
/// the original prompt.
inline Tensor3 correspondence_features(const Backend& backend, const ImageTensor& image, const Matrix& text,
                                       int block = 3) {
  return backend.feature_map(backend.encode(image).values, 0, text, block).values;
}

/// Locates each initial handle in the edited image by global feature
/// correspondence and averages the distance to its target. Distances are in
/// image pixels.
inline MeanDistance mean_distance(const Backend& backend, const ImageTensor& original, const ImageTensor& edited,
                                  const PointSet& points, const Matrix& text, int block = 3) {
  if (original.height() != edited.height() || original.width() != edited.width()) {
    detail::fail(ErrorCode::ResolutionMismatch, "original ", original.height(), "x", original.width(), " vs edited ",
                 edited.height(), "x", edited.width());
  }
  const Tensor3 fo = correspondence_features(backend, original, text, block);
  const Tensor3 fe = correspondence_features(backend, edited, text, block);
  const double scale = backend.info().latent_downsample_factor;
  MeanDistance md;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Cell c = nearest_feature(fe, bilinear_sample(fo, points.initial_handles()[i]));
    md.correspondences.push_back(c);
    md.per_point.push_back(scale * distance(to_point(c), points.targets()[i]));
    md.value += md.per_point.back();
  }
  md.value /= static_cast<double>(points.size());
  return md;
}

using PerceptualMetric = std::function<double(const ImageTensor&, const ImageTensor&)>;

/// Mean absolute pixel difference. A stand-in for a learned perceptual
/// metric; its values are not comparable with LPIPS.
inline double mean_abs_pixel_distance(const ImageTensor& a, const ImageTensor& b) {
  if (!a.pixels().same_shape(b.pixels())) {
    detail::fail(ErrorCode::ResolutionMismatch, "images ", a.height(), "x", a.width(), " vs ", b.height(), "x",
                 b.width());
  }
  return (a.pixels().data - b.pixels().data).cwiseAbs().mean();
}

inline double perceptual_distance(const ImageTensor& a, const ImageTensor& b,
                                  const PerceptualMetric& metric = mean_abs_pixel_distance) {
  if (!a.pixels().same_shape(b.pixels())) {
    detail::fail(ErrorCode::ResolutionMismatch, "images ", a.height(), "x", a.width(), " vs ", b.height(), "x",
                 b.width());
  }
  return metric(a, b);
}

inline double combined_score(double perceptual, double md) {
  if (!(perceptual >= 0.0) || !(md >= 0.0)) {
    detail::fail(ErrorCode::BadInput, "combined score needs nonnegative inputs");
  }
  return perceptual * md;
}

struct MetricsReport {
  double md = 0.0;
  double perceptual = 0.0;
  double product = 0.0;
  std::vector<double> per_point_distances;
};

inline MetricsReport evaluate(const Backend& backend, const ImageTensor& original, const ImageTensor& edited,
                              const PointSet& points, const Matrix& text,
                              const PerceptualMetric& metric = mean_abs_pixel_distance) {
  const MeanDistance md = mean_distance(backend, original, edited, points, text);
  MetricsReport r;
  r.md = md.value;
  r.perceptual = perceptual_distance(original, edited, metric);
  r.product = combined_score(r.perceptual, r.md);
  r.per_point_distances = md.per_point;
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"md", r.md}, {"perceptual", r.perceptual}, {"product", r.product},
          {"per_point_distances", r.per_point_distances}};
}

/// Published full-scale benchmark numbers (LPIPS, MD), without and with text
/// optimization. Reference data only.
struct PublishedScores {
  std::string_view method;
  double lpips;
  double md;
  double lpips_text;
  double md_text;
};

inline constexpr std::array<PublishedScores, 4> kPublishedScores = {{
    {"dragdiffusion", 0.117, 33.21, 0.124, 29.78},
    {"freedrag", 0.101, 34.44, 0.104, 31.59},
    {"dragnoise", 0.103, 35.55, 0.097, 34.23},
    {"gooddrag", 0.129, 24.29, 0.131, 20.53},
}};

/// Published scores by decoder block used for text optimization.
inline constexpr std::array<std::array<double, 2>, 4> kPublishedBlockScores = {{
    {0.135, 36.02},
    {0.154, 37.08},
    {0.124, 31.96},
    {0.119, 33.60},
}};

}  // namespace dragtext
