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
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dragtext/error.hpp"
#include "dragtext/tensor.hpp"

namespace dragtext {

inline constexpr int kTokens = 77;

/// RGB image with channels in [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;

  explicit ImageTensor(Tensor3 pixels) : pixels_(std::move(pixels)) {
    if (pixels_.channels != 3) {
      detail::fail(ErrorCode::ShapeError, "image must have 3 channels, got ", pixels_.channels);
    }
    if (pixels_.height <= 0 || pixels_.width <= 0) {
      detail::fail(ErrorCode::ShapeError, "image must be non-empty");
    }
    if (!pixels_.all_finite()) detail::fail(ErrorCode::BadImage, "image has non-finite entries");
    if (pixels_.data.minCoeff() < 0.0 || pixels_.data.maxCoeff() > 1.0) {
      detail::fail(ErrorCode::BadImage, "pixel values must lie in [0, 1]");
    }
  }

  const Tensor3& pixels() const noexcept { return pixels_; }
  int height() const noexcept { return pixels_.height; }
  int width() const noexcept { return pixels_.width; }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.pixels_.same_shape(b.pixels_) && a.pixels_.data == b.pixels_.data;
  }

 private:
  Tensor3 pixels_;
};

struct LatentState {
  Tensor3 values;
  int timestep = 0;
  int iteration = 0;
};

/// Prompt embedding (77 x d) plus the semantic-token mask. The first
/// `semantic_len` rows (begin token and prompt tokens) are masked in;
/// end-of-sequence and padding rows are masked out.
class TextEmbedding {
 public:
  TextEmbedding() = default;

  TextEmbedding(Matrix values, int semantic_len) : values_(std::move(values)), semantic_len_(semantic_len) {
    if (values_.rows() != kTokens) {
      detail::fail(ErrorCode::ShapeError, "text embedding must have ", kTokens, " rows, got ", values_.rows());
    }
    if (semantic_len_ < 1 || semantic_len_ > kTokens) {
      detail::fail(ErrorCode::ShapeError, "semantic length ", semantic_len_, " outside [1, ", kTokens, "]");
    }
    if (!values_.allFinite()) detail::fail(ErrorCode::ShapeError, "text embedding has non-finite entries");
    token_mask_ = Matrix::Zero(values_.rows(), values_.cols());
    token_mask_.topRows(semantic_len_).setOnes();
  }

  const Matrix& values() const noexcept { return values_; }
  const Matrix& token_mask() const noexcept { return token_mask_; }
  int semantic_len() const noexcept { return semantic_len_; }
  int dim() const noexcept { return static_cast<int>(values_.cols()); }

  /// Same mask, new values.
  TextEmbedding with_values(Matrix values) const { return TextEmbedding(std::move(values), semantic_len_); }

 private:
  Matrix values_;
  Matrix token_mask_;
  int semantic_len_ = 1;
};

struct Point {
  double row = 0.0;
  double col = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.row - b.row, a.col - b.col); }

/// Handle/target pairs on the feature grid. Deactivation is one-way.
class PointSet {
 public:
  PointSet() = default;

  PointSet(std::vector<Point> handles, std::vector<Point> targets)
      : handles_(std::move(handles)), targets_(std::move(targets)) {
    if (handles_.empty()) detail::fail_field(ErrorCode::BadInput, "points.pairs", "at least one point pair is required");
    if (handles_.size() != targets_.size()) {
      detail::fail_field(ErrorCode::BadInput, "points.pairs", "handle/target count mismatch");
    }
    initial_ = handles_;
    active_.assign(handles_.size(), true);
  }

  std::size_t size() const noexcept { return handles_.size(); }
  const std::vector<Point>& handles() const noexcept { return handles_; }
  const std::vector<Point>& targets() const noexcept { return targets_; }
  const std::vector<Point>& initial_handles() const noexcept { return initial_; }
  bool active(std::size_t i) const { return active_.at(i); }

  bool any_active() const {
    for (bool a : active_) {
      if (a) return true;
    }
    return false;
  }

  void deactivate(std::size_t i) { active_.at(i) = false; }

  void set_handle(std::size_t i, Point p) {
    if (!active_.at(i)) detail::fail(ErrorCode::BadInput, "handle ", i, " is inactive and cannot move");
    handles_[i] = p;
  }

 private:
  std::vector<Point> handles_;
  std::vector<Point> targets_;
  std::vector<Point> initial_;
  std::vector<bool> active_;
};

/// Binary editable-region mask on the latent grid; 1 = editable.
class EditMask {
 public:
  EditMask() = default;

  explicit EditMask(Matrix values) : values_(std::move(values)) {
    for (Eigen::Index i = 0; i < values_.size(); ++i) {
      const double v = values_.data()[i];
      if (v != 0.0 && v != 1.0) detail::fail_field(ErrorCode::BadInput, "mask", "mask entries must be 0 or 1");
    }
    if (values_.size() == 0 || values_.sum() == 0.0) {
      detail::fail_field(ErrorCode::EmptyMask, "mask", "mask has no editable entries");
    }
  }

  static EditMask all_editable(int height, int width) { return EditMask(Matrix::Ones(height, width)); }

  const Matrix& values() const noexcept { return values_; }
  int height() const noexcept { return static_cast<int>(values_.rows()); }
  int width() const noexcept { return static_cast<int>(values_.cols()); }

  /// (1 - M) laid out like a Tensor3 row so it can scale every channel.
  Eigen::RowVectorXd frozen_row() const {
    Eigen::RowVectorXd row(values_.size());
    for (int r = 0; r < height(); ++r) {
      for (int c = 0; c < width(); ++c) row(r * width() + c) = 1.0 - values_(r, c);
    }
    return row;
  }

 private:
  Matrix values_;
};

struct FeatureMap {
  Tensor3 values;
  int source_block = 3;
};

enum class Method { DragDiffusion, FreeDrag, DragNoise, GoodDrag };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::DragDiffusion: return "dragdiffusion";
    case Method::FreeDrag: return "freedrag";
    case Method::DragNoise: return "dragnoise";
    case Method::GoodDrag: return "gooddrag";
  }
  return "dragdiffusion";
}

inline Method parse_method(std::string_view name) {
  if (name == "dragdiffusion") return Method::DragDiffusion;
  if (name == "freedrag") return Method::FreeDrag;
  if (name == "dragnoise") return Method::DragNoise;
  if (name == "gooddrag") return Method::GoodDrag;
  detail::fail_field(ErrorCode::BadConfig, "config.method", "unknown method '", name, "'");
}

struct FreeDragKnobs {
  double tau_lo_scale = 0.1;
  double tau_hi_scale = 1.0;
  int max_inner_iters = 5;
};

struct GoodDragKnobs {
  double lr_scale = 0.5;
};

struct DragConfig {
  Method method = Method::DragDiffusion;
  int timestep = 35;
  int max_iters = 80;
  int region_radius_ms = 1;
  int region_radius_pt = 3;
  double lr_latent = 0.01;
  double lr_text = 0.004;
  double lambda_image = 0.1;
  double lambda_text = 0.1;
  /// Decoder block feeding text optimization. Motion supervision and
  /// tracking read `image_block`.
  int unet_block = 3;
  int image_block = 3;
  int gooddrag_B = 10;
  int tracking_every = 1;
  double reach_tolerance = 1.0;
  bool text_optimization = true;
  int preview_every = 10;
  std::string backend = "toy";
  std::uint64_t seed = 0;
  FreeDragKnobs freedrag;
  GoodDragKnobs gooddrag;

  /// Hyperparameters published for each host method.
  static DragConfig defaults_for(Method method) {
    DragConfig c;
    c.method = method;
    switch (method) {
      case Method::DragDiffusion:
        break;
      case Method::FreeDrag:
        c.max_iters = 300;
        c.region_radius_ms = 3;
        c.lambda_image = 10.0;
        break;
      case Method::DragNoise:
        c.lr_latent = 0.02;
        c.lambda_image = 0.2;
        break;
      case Method::GoodDrag:
        c.timestep = 38;
        c.max_iters = 70;
        c.region_radius_ms = 4;
        c.region_radius_pt = 12;
        c.lr_latent = 0.02;
        c.lambda_image = 0.2;
        c.tracking_every = 3;
        c.gooddrag_B = 10;
        break;
    }
    return c;
  }

  void validate() const {
    auto bad = [](const char* field, auto&&... msg) {
      detail::fail_field(ErrorCode::BadConfig, std::string("config.") + field, msg...);
    };
    if (timestep < 1) bad("timestep", "timestep must be >= 1");
    if (max_iters < 1) bad("max_iters", "max_iters must be >= 1");
    if (region_radius_ms < 1) bad("region_radius_ms", "radius must be >= 1");
    if (region_radius_pt < 1) bad("region_radius_pt", "radius must be >= 1");
    if (!(lr_latent > 0.0) || !std::isfinite(lr_latent)) bad("lr_latent", "learning rate must be > 0");
    if (!(lr_text > 0.0) || !std::isfinite(lr_text)) bad("lr_text", "learning rate must be > 0");
    if (!(lambda_image >= 0.0) || !std::isfinite(lambda_image)) bad("lambda_image", "lambda must be >= 0");
    if (!(lambda_text >= 0.0) || !std::isfinite(lambda_text)) bad("lambda_text", "lambda must be >= 0");
    if (unet_block < 1 || unet_block > 4) bad("unet_block", "block must be in 1..4");
    if (image_block < 1 || image_block > 4) bad("image_block", "block must be in 1..4");
    if (tracking_every < 1) bad("tracking_every", "must be >= 1");
    if (!(reach_tolerance >= 0.0)) bad("reach_tolerance", "must be >= 0");
    if (preview_every < 0) bad("preview_every", "must be >= 0");
    if (method == Method::GoodDrag) {
      if (gooddrag_B < 1) bad("gooddrag_B", "B must be >= 1");
      if (max_iters % gooddrag_B != 0) {
        bad("gooddrag_B", "max_iters ", max_iters, " is not divisible by B = ", gooddrag_B);
      }
      if (timestep < max_iters / gooddrag_B) {
        bad("timestep", "timestep ", timestep, " cannot absorb ", max_iters / gooddrag_B, " interleaved denoise steps");
      }
      if (!(gooddrag.lr_scale > 0.0)) bad("variant.gooddrag.lr_scale", "must be > 0");
    }
    if (method == Method::FreeDrag) {
      if (freedrag.max_inner_iters < 1) bad("variant.freedrag.max_inner_iters", "must be >= 1");
      if (!(freedrag.tau_lo_scale >= 0.0) || freedrag.tau_hi_scale < freedrag.tau_lo_scale) {
        bad("variant.freedrag", "need 0 <= tau_lo_scale <= tau_hi_scale");
      }
    }
  }
};

inline nlohmann::json to_json(const DragConfig& c) {
  return {
      {"method", to_string(c.method)},
      {"timestep", c.timestep},
      {"max_iters", c.max_iters},
      {"region_radius_ms", c.region_radius_ms},
      {"region_radius_pt", c.region_radius_pt},
      {"lr_latent", c.lr_latent},
      {"lr_text", c.lr_text},
      {"lambda_image", c.lambda_image},
      {"lambda_text", c.lambda_text},
      {"unet_block", c.unet_block},
      {"image_block", c.image_block},
      {"gooddrag_B", c.gooddrag_B},
      {"tracking_every", c.tracking_every},
      {"reach_tolerance", c.reach_tolerance},
      {"text_optimization", c.text_optimization},
      {"preview_every", c.preview_every},
      {"backend", c.backend},
      {"seed", c.seed},
      {"variant",
       {{"freedrag",
         {{"tau_lo_scale", c.freedrag.tau_lo_scale},
          {"tau_hi_scale", c.freedrag.tau_hi_scale},
          {"max_inner_iters", c.freedrag.max_inner_iters}}},
        {"gooddrag", {{"lr_scale", c.gooddrag.lr_scale}}}}},
  };
}

namespace detail {

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail_field(ErrorCode::BadConfig, prefix + key, "wrong type: ", e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || key == k;
    if (!ok) fail_field(ErrorCode::BadConfig, prefix + key, "unknown config key");
  }
}

}  // namespace detail

/// Fields omitted from `j` take the defaults of the chosen method.
inline DragConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) detail::fail_field(ErrorCode::BadConfig, "config", "config must be a JSON object");
  detail::reject_unknown(j,
                         {"method", "timestep", "max_iters", "region_radius_ms", "region_radius_pt", "lr_latent",
                          "lr_text", "lambda_image", "lambda_text", "unet_block", "image_block", "gooddrag_B",
                          "tracking_every", "reach_tolerance", "text_optimization", "preview_every", "backend",
                          "seed", "variant"},
                         "config.");
  Method method = Method::DragDiffusion;
  if (j.contains("method")) {
    if (!j["method"].is_string()) detail::fail_field(ErrorCode::BadConfig, "config.method", "must be a string");
    method = parse_method(j["method"].get<std::string>());
  }
  DragConfig c = DragConfig::defaults_for(method);
  const std::string p = "config.";
  detail::read_field(j, "timestep", c.timestep, p);
  detail::read_field(j, "max_iters", c.max_iters, p);
  detail::read_field(j, "region_radius_ms", c.region_radius_ms, p);
  detail::read_field(j, "region_radius_pt", c.region_radius_pt, p);
  detail::read_field(j, "lr_latent", c.lr_latent, p);
  detail::read_field(j, "lr_text", c.lr_text, p);
  detail::read_field(j, "lambda_image", c.lambda_image, p);
  detail::read_field(j, "lambda_text", c.lambda_text, p);
  detail::read_field(j, "unet_block", c.unet_block, p);
  detail::read_field(j, "image_block", c.image_block, p);
  detail::read_field(j, "gooddrag_B", c.gooddrag_B, p);
  detail::read_field(j, "tracking_every", c.tracking_every, p);
  detail::read_field(j, "reach_tolerance", c.reach_tolerance, p);
  detail::read_field(j, "text_optimization", c.text_optimization, p);
  detail::read_field(j, "preview_every", c.preview_every, p);
  detail::read_field(j, "backend", c.backend, p);
  detail::read_field(j, "seed", c.seed, p);
  if (j.contains("variant")) {
    const auto& v = j["variant"];
    if (!v.is_object()) detail::fail_field(ErrorCode::BadConfig, "config.variant", "must be an object");
    detail::reject_unknown(v, {"freedrag", "gooddrag", "dragnoise"}, "config.variant.");
    if (v.contains("freedrag")) {
      const auto& f = v["freedrag"];
      detail::reject_unknown(f, {"tau_lo_scale", "tau_hi_scale", "max_inner_iters"}, "config.variant.freedrag.");
      detail::read_field(f, "tau_lo_scale", c.freedrag.tau_lo_scale, "config.variant.freedrag.");
      detail::read_field(f, "tau_hi_scale", c.freedrag.tau_hi_scale, "config.variant.freedrag.");
      detail::read_field(f, "max_inner_iters", c.freedrag.max_inner_iters, "config.variant.freedrag.");
    }
    if (v.contains("gooddrag")) {
      const auto& g = v["gooddrag"];
      detail::reject_unknown(g, {"lr_scale"}, "config.variant.gooddrag.");
      detail::read_field(g, "lr_scale", c.gooddrag.lr_scale, "config.variant.gooddrag.");
    }
  }
  c.validate();
  return c;
}

/// Parses {"pairs":[{"handle":[r,c],"target":[r,c]}], "space":"image"|"feature"}.
/// Image-space coordinates are divided by `downsample_factor`.
inline PointSet points_from_json(const nlohmann::json& j, int downsample_factor) {
  if (!j.is_object() || !j.contains("pairs") || !j["pairs"].is_array()) {
    detail::fail_field(ErrorCode::BadInput, "points.pairs", "expected an object with a 'pairs' array");
  }
  std::string space = "image";
  if (j.contains("space")) {
    if (!j["space"].is_string()) detail::fail_field(ErrorCode::BadInput, "points.space", "must be a string");
    space = j["space"].get<std::string>();
  }
  if (space != "image" && space != "feature") {
    detail::fail_field(ErrorCode::BadInput, "points.space", "must be 'image' or 'feature'");
  }
  const double scale = space == "image" ? 1.0 / downsample_factor : 1.0;
  std::vector<Point> handles, targets;
  const auto& pairs = j["pairs"];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto read = [&](const char* key) {
      const std::string field = "points.pairs[" + std::to_string(i) + "]." + key;
      const auto& pair = pairs[i];
      if (!pair.is_object() || !pair.contains(key)) detail::fail_field(ErrorCode::BadInput, field, "missing");
      const auto& v = pair[key];
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        detail::fail_field(ErrorCode::BadInput, field, "expected [row, col]");
      }
      Point p{v[0].get<double>() * scale, v[1].get<double>() * scale};
      if (!std::isfinite(p.row) || !std::isfinite(p.col)) detail::fail_field(ErrorCode::BadInput, field, "non-finite");
      return p;
    };
    handles.push_back(read("handle"));
    targets.push_back(read("target"));
  }
  return PointSet(std::move(handles), std::move(targets));
}

inline nlohmann::json points_to_json(const PointSet& points) {
  nlohmann::json pairs = nlohmann::json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& h = points.initial_handles()[i];
    const auto& g = points.targets()[i];
    pairs.push_back({{"handle", {h.row, h.col}}, {"target", {g.row, g.col}}});
  }
  return {{"pairs", pairs}, {"space", "feature"}};
}

/// Reduces a full-resolution binary mask to the latent grid: a latent cell is
/// editable when any pixel of its block is.
inline EditMask downsample_mask(const Matrix& pixel_mask, int factor) {
  if (factor < 1 || pixel_mask.rows() % factor != 0 || pixel_mask.cols() % factor != 0) {
    detail::fail_field(ErrorCode::ShapeError, "mask", "mask dims ", pixel_mask.rows(), "x", pixel_mask.cols(),
                       " not divisible by factor ", factor);
  }
  Matrix out = Matrix::Zero(pixel_mask.rows() / factor, pixel_mask.cols() / factor);
  for (Eigen::Index r = 0; r < pixel_mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < pixel_mask.cols(); ++c) {
      if (pixel_mask(r, c) != 0.0) out(r / factor, c / factor) = 1.0;
    }
  }
  return EditMask(std::move(out));
}

struct SessionInputs {
  ImageTensor image;
  EditMask mask;
  PointSet points;
  DragConfig config;
};

/// Checks every cross-object invariant. `downsample_factor` maps the image grid
/// to the latent/feature grid the mask and points live on.
inline SessionInputs validate_session_inputs(const ImageTensor& image, const EditMask& mask, const PointSet& points,
                                             const DragConfig& config, int downsample_factor) {
  config.validate();
  if (downsample_factor < 1 || image.height() % downsample_factor != 0 || image.width() % downsample_factor != 0) {
    detail::fail_field(ErrorCode::ShapeError, "image", "image dims not divisible by ", downsample_factor);
  }
  const int h = image.height() / downsample_factor;
  const int w = image.width() / downsample_factor;
  if (mask.height() != h || mask.width() != w) {
    detail::fail_field(ErrorCode::ShapeMismatch, "mask", "mask is ", mask.height(), "x", mask.width(),
                       ", latent grid is ", h, "x", w);
  }
  if (mask.values().sum() == 0.0) detail::fail_field(ErrorCode::EmptyMask, "mask", "mask has no editable entries");
  if (points.size() == 0) detail::fail_field(ErrorCode::BadInput, "points.pairs", "no point pairs");
  auto inside = [&](const Point& p) {
    return p.row >= 0.0 && p.col >= 0.0 && p.row <= h - 1 && p.col <= w - 1;
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::string base = "points.pairs[" + std::to_string(i) + "]";
    if (!inside(points.handles()[i])) {
      detail::fail_field(ErrorCode::OutOfBoundsPoint, base + ".handle", "handle (", points.handles()[i].row, ", ",
                         points.handles()[i].col, ") outside ", h, "x", w, " grid");
    }
    if (!inside(points.targets()[i])) {
      detail::fail_field(ErrorCode::OutOfBoundsPoint, base + ".target", "target (", points.targets()[i].row, ", ",
                         points.targets()[i].col, ") outside ", h, "x", w, " grid");
    }
  }
  return SessionInputs{image, mask, points, config};
}

}  // namespace dragtext
