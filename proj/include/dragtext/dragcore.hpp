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

#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragtext/backend.hpp"
#include "dragtext/domain.hpp"
#include "dragtext/losses.hpp"
#include "dragtext/optim.hpp"
#include "dragtext/sampling.hpp"

namespace dragtext {

/// One trajectory log line.
struct DragRecord {
  int k = 0;
  double loss_ms = 0.0;
  std::optional<double> loss_text;
  std::vector<Point> handles;
  double text_drift_l1 = 0.0;
};

inline nlohmann::json to_json(const DragRecord& r) {
  nlohmann::json handles = nlohmann::json::array();
  for (const auto& h : r.handles) handles.push_back({h.row, h.col});
  return {{"k", r.k},
          {"L_ms", r.loss_ms},
          {"L_text", r.loss_text ? nlohmann::json(*r.loss_text) : nlohmann::json(nullptr)},
          {"handles", handles},
          {"text_drift_l1", r.text_drift_l1}};
}

inline std::string to_jsonl(const std::vector<DragRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

/// A point from which an image can be rendered: a noisy latent, a text
/// embedding and, for bottleneck-optimizing methods, the bottleneck feature
/// injected at the first denoising step.
struct DragEndpoint {
  LatentState latent;
  Matrix text;
  std::optional<Tensor3> bottleneck;
};

inline ImageTensor render_endpoint(const Backend& backend, const DragEndpoint& e) {
  LatentState z = e.latent;
  if (e.bottleneck && z.timestep > 0) {
    const auto k = ddim_denoise_coeffs(backend.info(), z.timestep);
    const Tensor3 eps = backend.predict_noise_from_bottleneck(*e.bottleneck, z.timestep, e.text);
    z.values.data = k.a * z.values.data + k.b * eps.data;
    z.timestep -= 1;
  }
  while (z.timestep > 0) {
    z.values = ddim_denoise_step(backend, z.values, z.timestep, e.text);
    z.timestep -= 1;
  }
  return backend.decode(z);
}

/// Values derived from the unedited latent at one timestep; never mutated.
struct OriginalCache {
  int timestep = 0;
  Tensor3 latent;          // z_t^0
  Tensor3 variable;        // what the loop optimizes (latent or bottleneck)
  FeatureMap image_features;
  FeatureMap text_features;
  Tensor3 denoised_step;   // z_{t-1}^0

  const FeatureMap& features(int block) const {
    return block == image_features.source_block ? image_features : text_features;
  }
};


struct DragState;

struct DragCallbacks {
  std::function<void(const DragRecord&)> on_record;
  /// Sees the state right after each record is appended to its trajectory.
  std::function<void(const DragState&)> on_state;
  std::function<bool()> cancelled;
};

/// Mutable state of one drag loop.
struct DragState {
  const Backend* backend = nullptr;
  DragConfig config;
  EditMask mask;
  Eigen::RowVectorXd frozen;
  TextEmbedding original_text;
  Matrix text;
  Tensor3 latent;
  /// Optimized tensor: the latent itself, or the bottleneck feature.
  Tensor3 variable;
  bool bottleneck_mode = false;
  int timestep = 0;
  int k = 0;
  PointSet points;
  LatentState source;
  /// originals[j] is the unedited trajectory after j interleaved denoise steps.
  std::vector<OriginalCache> originals;
  std::size_t stage = 0;
  Adam latent_opt{0.01};
  Adam text_opt{0.004};
  std::vector<DragRecord> trajectory;

  /// The noisy latent the final image is denoised from.
  const Tensor3& current_latent() const { return bottleneck_mode ? latent : variable; }
  ForwardPath path() const { return ForwardPath(*backend, bottleneck_mode ? &latent : nullptr); }
  const OriginalCache& original() const { return originals.at(stage); }
};

namespace detail {

inline OriginalCache make_original(const DragState& s, const Tensor3& latent, int timestep) {
  OriginalCache o;
  o.timestep = timestep;
  o.latent = latent;
  const Matrix& c0 = s.original_text.values();
  o.variable = s.bottleneck_mode ? s.backend->bottleneck_feature(latent, timestep, c0) : latent;
  const ForwardPath path(*s.backend, s.bottleneck_mode ? &o.latent : nullptr);
  o.image_features = path.features(o.variable, timestep, c0, s.config.image_block);
  o.text_features = s.config.unet_block == s.config.image_block
                        ? o.image_features
                        : path.features(o.variable, timestep, c0, s.config.unet_block);
  if (timestep >= 1) o.denoised_step = path.step(o.variable, timestep, c0);
  return o;
}

}  // namespace detail

/// Encodes, inverts and caches the original trajectory. `stages` extra
/// timesteps below t are cached for interleaved denoising.
inline DragState prepare_drag(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                              bool bottleneck_mode = false, int stages = 0) {
  const BackendInfo& info = backend.info();
  in.config.validate();
  if (in.config.timestep > info.num_train_timesteps) {
    detail::fail_field(ErrorCode::BadConfig, "config.timestep", "timestep ", in.config.timestep, " exceeds T = ",
                       info.num_train_timesteps);
  }
  if (c0.dim() != info.embed_dim) {
    detail::fail(ErrorCode::ShapeMismatch, "text dim ", c0.dim(), " but backend expects ", info.embed_dim);
  }
  DragState s;
  s.backend = &backend;
  s.config = in.config;
  s.mask = in.mask;
  s.frozen = in.mask.frozen_row();
  s.original_text = c0;
  s.text = c0.values();
  s.points = in.points;
  s.bottleneck_mode = bottleneck_mode;
  s.source = backend.encode(in.image);
  if (s.source.values.height != in.mask.height() || s.source.values.width != in.mask.width()) {
    detail::fail_field(ErrorCode::ShapeMismatch, "mask", "mask ", in.mask.height(), "x", in.mask.width(),
                       " does not match latent ", s.source.values.height, "x", s.source.values.width);
  }
  const LatentState zt = ddim_invert(backend, s.source, c0, in.config.timestep);
  s.timestep = zt.timestep;
  s.latent = zt.values;
  Tensor3 z = zt.values;
  for (int j = 0; j <= stages; ++j) {
    const int t = zt.timestep - j;
    if (j > 0) z = ddim_denoise_step(backend, z, t + 1, c0.values());
    s.originals.push_back(detail::make_original(s, z, t));
  }
  s.variable = s.originals.front().variable;
  s.latent_opt = Adam(in.config.lr_latent);
  s.text_opt = Adam(in.config.lr_text);
  return s;
}

inline ImageLossSpec image_loss_spec(const DragState& s) {
  return {s.timestep, s.config.image_block, s.config.lambda_image, s.frozen, &s.original().denoised_step};
}

inline TextLossSpec text_loss_spec(const DragState& s, std::vector<double> alphas = {}) {
  return {s.timestep, s.config.unet_block, s.config.lambda_text, &s.original_text.values(),
          &s.original_text.token_mask(), std::move(alphas)};
}

inline TermBuilder shifted_builder(const DragState& s) {
  return [&s](const Tensor3& f, int) {
    return shifted_terms(f, s.points, s.config.region_radius_ms, s.config.reach_tolerance);
  };
}

inline void require_active(const DragState& s) {
  if (!s.points.any_active()) detail::fail(ErrorCode::NoActivePoints, "every point has reached its target");
}

/// Motion supervision loss at the current state (default: shifted terms).
inline LossEval motion_supervision_loss(const DragState& s, const TermBuilder& build = {}, bool want_grad = true) {
  require_active(s);
  return image_loss(s.path(), s.variable, s.text, image_loss_spec(s), build ? build : shifted_builder(s),
                    s.points.size(), want_grad);
}

/// Text optimization loss at the current state (default: shifted terms).
inline LossEval text_optimization_loss(const DragState& s, const TermBuilder& build = {},
                                       std::vector<double> alphas = {}, bool want_grad = true) {
  require_active(s);
  return text_loss(s.path(), s.variable, s.text, text_loss_spec(s, std::move(alphas)),
                   build ? build : shifted_builder(s), s.points.size(), want_grad);
}

inline void latent_update(DragState& s, const LossEval& e) { s.latent_opt.step(s.variable.data, e.grad); }

inline void text_update(DragState& s, const LossEval& e) { s.text_opt.step(s.text, e.grad); }

/// Moves every active handle to the lattice point of its r2 window whose
/// feature is nearest (L1) to the original feature at the initial handle.
/// Ties go to the first candidate in row-major order.
inline void track_points(DragState& s) {
  const FeatureMap f = s.path().features(s.variable, s.timestep, s.text, s.config.image_block);
  const Tensor3& f0 = s.original().image_features.values;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (!s.points.active(i)) continue;
    const Vector ref = bilinear_sample(f0, s.points.initial_handles()[i]);
    double best = std::numeric_limits<double>::infinity();
    Cell best_cell{};
    for (const Cell& q : square_region(s.points.handles()[i], s.config.region_radius_pt, f.values.height,
                                       f.values.width)) {
      const double dist = (f.values.column(q.row, q.col) - ref).lpNorm<1>();
      if (dist < best) {
        best = dist;
        best_cell = q;
      }
    }
    s.points.set_handle(i, to_point(best_cell));
  }
}

/// Deactivates points within reach tolerance; returns whether any remain.
inline bool update_reached(DragState& s) {
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (s.points.active(i) && distance(s.points.handles()[i], s.points.targets()[i]) <= s.config.reach_tolerance) {
      s.points.deactivate(i);
    }
  }
  return s.points.any_active();
}

inline double text_drift_l1(const DragState& s) { return (s.text - s.original_text.values()).lpNorm<1>(); }

/// Masked-row drift |(c - c0) * M_text|_1.
inline double masked_text_drift(const Matrix& text, const TextEmbedding& original) {
  return (text - original.values()).cwiseProduct(original.token_mask()).lpNorm<1>();
}

struct DragResult {
  ImageTensor image;
  DragEndpoint original;
  DragEndpoint dragged;
  TextEmbedding original_text;
  LatentState source;
  PointSet points;
  std::vector<DragRecord> trajectory;
  DragConfig config;
  int iterations = 0;
};

inline DragEndpoint current_endpoint(const DragState& s) {
  DragEndpoint e{{s.current_latent(), s.timestep, s.k}, s.text, std::nullopt};
  if (s.bottleneck_mode) e.bottleneck = s.variable;
  return e;
}

inline DragEndpoint original_endpoint(const DragState& s) {
  const OriginalCache& o = s.original();
  DragEndpoint e{{o.latent, o.timestep, 0}, s.original_text.values(), std::nullopt};
  if (s.bottleneck_mode) e.bottleneck = o.variable;
  return e;
}

inline DragResult finish_drag(DragState& s) {
  DragResult r;
  r.original = original_endpoint(s);
  r.dragged = current_endpoint(s);
  r.image = render_endpoint(*s.backend, r.dragged);
  r.original_text = s.original_text;
  r.source = s.source;
  r.points = s.points;
  r.trajectory = s.trajectory;
  r.config = s.config;
  r.iterations = s.k;
  return r;
}

/// Runs iterations until every point is reached or K passes are done.
/// `iteration` performs one pass and returns its record; `after` runs once the
/// record is published.
inline void drive(DragState& s, const DragCallbacks& cb, const std::function<DragRecord(DragState&)>& iteration,
                  const std::function<void(DragState&)>& after = {}) {
  while (s.k < s.config.max_iters) {
    if (cb.cancelled && cb.cancelled()) detail::fail(ErrorCode::Cancelled, "drag cancelled at k = ", s.k);
    if (!update_reached(s)) break;
    DragRecord rec = iteration(s);
    rec.k = s.k;
    rec.handles = s.points.handles();
    rec.text_drift_l1 = text_drift_l1(s);
    s.trajectory.push_back(rec);
    if (cb.on_state) cb.on_state(s);
    if (cb.on_record) cb.on_record(rec);
    ++s.k;
    if (after) after(s);
  }
}

/// One pass: motion supervision, latent step, text loss at the new latent,
/// text step, then point tracking when due.
inline DragRecord standard_iteration(DragState& s, const TermBuilder& build = {}) {
  DragRecord rec;
  const LossEval ms = motion_supervision_loss(s, build);
  rec.loss_ms = ms.value;
  latent_update(s, ms);
  if (s.config.text_optimization) {
    const LossEval lt = text_optimization_loss(s, build);
    rec.loss_text = lt.value;
    text_update(s, lt);
  }
  if ((s.k + 1) % s.config.tracking_every == 0) track_points(s);
  return rec;
}

inline DragResult run_dragdiffusion(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                                    const DragCallbacks& cb = {}) {
  DragState s = prepare_drag(backend, in, c0);
  drive(s, cb, [](DragState& st) { return standard_iteration(st); });
  return finish_drag(s);
}

}  // namespace dragtext
