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
#include <string_view>
#include <vector>

#include "dragtext/dragcore.hpp"

namespace dragtext {

// ---------------------------------------------------------------- FreeDrag

enum class AdaptationClass { WellLearned, Learning, PoorlyLearned };

inline std::string_view to_string(AdaptationClass c) {
  switch (c) {
    case AdaptationClass::WellLearned: return "well_learned";
    case AdaptationClass::Learning: return "learning";
    case AdaptationClass::PoorlyLearned: return "poorly_learned";
  }
  return "poorly_learned";
}

/// Boundaries belong to the lower class.
inline AdaptationClass freedrag_classify(double loss, double tau_lo, double tau_hi) {
  if (loss <= tau_lo) return AdaptationClass::WellLearned;
  if (loss <= tau_hi) return AdaptationClass::Learning;
  return AdaptationClass::PoorlyLearned;
}

/// Classifies from the last entry of a per-point loss history.
inline AdaptationClass freedrag_classify(const std::vector<double>& history, double tau_lo, double tau_hi) {
  if (history.empty()) detail::fail(ErrorCode::BadInput, "empty loss history");
  return freedrag_classify(history.back(), tau_lo, tau_hi);
}

inline double freedrag_alpha(AdaptationClass c) { return c == AdaptationClass::PoorlyLearned ? 0.0 : 1.0; }

struct TemplateFeatureSet {
  /// Per-point template patches at the image and text blocks.
  std::vector<Matrix> image;
  std::vector<Matrix> text;
  std::vector<AdaptationClass> classes;
  std::vector<double> tau_lo;
  std::vector<double> tau_hi;

  std::vector<double> alphas() const {
    std::vector<double> a;
    for (auto c : classes) a.push_back(freedrag_alpha(c));
    return a;
  }
};

/// Templates start as the original features around each initial handle.
inline TemplateFeatureSet init_templates(const DragState& s) {
  TemplateFeatureSet t;
  const int r = s.config.region_radius_ms;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const Point h0 = s.points.initial_handles()[i];
    t.image.push_back(template_patch(s.original().image_features.values, h0, r));
    t.text.push_back(template_patch(s.original().text_features.values, h0, r));
  }
  t.classes.assign(s.points.size(), AdaptationClass::WellLearned);
  return t;
}

/// Template terms against `templates` (the image or the text set).
inline TermBuilder template_builder(const DragState& s, const std::vector<Matrix>& templates) {
  return [&s, &templates](const Tensor3& f, int) {
    return template_terms(templates, s.points, s.config.region_radius_ms, s.config.reach_tolerance, f.height,
                          f.width);
  };
}

inline LossEval freedrag_ms_loss(const DragState& s, const TemplateFeatureSet& t, bool want_grad = true) {
  return motion_supervision_loss(s, template_builder(s, t.image), want_grad);
}

inline LossEval freedrag_text_loss(const DragState& s, const TemplateFeatureSet& t, std::vector<double> alphas,
                                   bool want_grad = true) {
  return text_optimization_loss(s, template_builder(s, t.text), std::move(alphas), want_grad);
}

/// Moves well-learned and learning points one unit toward their targets and
/// refreshes their templates from the current features; poorly learned points
/// keep both position and template.
inline void freedrag_advance(DragState& s, TemplateFeatureSet& t) {
  const ForwardPath path = s.path();
  const Tensor3 fi = path.features(s.variable, s.timestep, s.text, s.config.image_block).values;
  const Tensor3 ft = s.config.unet_block == s.config.image_block
                         ? fi
                         : path.features(s.variable, s.timestep, s.text, s.config.unet_block).values;
  const int r = s.config.region_radius_ms;
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    if (!s.points.active(i) || t.classes[i] == AdaptationClass::PoorlyLearned) continue;
    const Point h = s.points.handles()[i];
    const auto d = drag_direction(h, s.points.targets()[i], s.config.reach_tolerance);
    if (!d) continue;
    const double step = std::min(1.0, distance(h, s.points.targets()[i]));
    const Point moved{h.row + step * d->row, h.col + step * d->col};
    s.points.set_handle(i, moved);
    const Matrix pi = template_patch(fi, moved, r);
    const Matrix pt = template_patch(ft, moved, r);
    if (t.classes[i] == AdaptationClass::WellLearned) {
      t.image[i] = pi;
      t.text[i] = pt;
    } else {
      t.image[i] = 0.5 * (t.image[i] + pi);
      t.text[i] = 0.5 * (t.text[i] + pt);
    }
  }
}

inline DragResult run_freedrag(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                               const DragCallbacks& cb = {}) {
  DragState s = prepare_drag(backend, in, c0);
  TemplateFeatureSet t = init_templates(s);
  bool thresholds_set = false;
  drive(s, cb, [&](DragState& st) {
    DragRecord rec;
    const std::size_t n = st.points.size();
    std::vector<double> latest(n, 0.0);
    for (int j = 0; j < st.config.freedrag.max_inner_iters; ++j) {
      const LossEval e = freedrag_ms_loss(st, t);
      if (!thresholds_set) {
        for (std::size_t i = 0; i < n; ++i) {
          t.tau_lo.push_back(st.config.freedrag.tau_lo_scale * e.per_point[i]);
          t.tau_hi.push_back(st.config.freedrag.tau_hi_scale * e.per_point[i]);
        }
        thresholds_set = true;
      }
      if (j == 0) rec.loss_ms = e.value;
      latent_update(st, e);
      latest = freedrag_ms_loss(st, t, false).per_point;
      bool settled = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (st.points.active(i) && latest[i] > t.tau_lo[i]) settled = false;
      }
      if (settled) break;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (st.points.active(i)) t.classes[i] = freedrag_classify(latest[i], t.tau_lo[i], t.tau_hi[i]);
    }
    if (st.config.text_optimization) {
      const LossEval lt = freedrag_text_loss(st, t, t.alphas());
      rec.loss_text = lt.value;
      text_update(st, lt);
    }
    freedrag_advance(st, t);
    return rec;
  });
  return finish_drag(s);
}

// --------------------------------------------------------------- DragNoise

/// Optimizes the bottleneck feature; the noisy latent is never written.
inline DragState prepare_dragnoise(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0) {
  if (!backend.supports_bottleneck()) {
    detail::fail(ErrorCode::BackendCapabilityError, "backend '", backend.info().name,
                 "' cannot inject an external bottleneck feature");
  }
  return prepare_drag(backend, in, c0, true);
}

/// One Adam step on the bottleneck feature.
inline void dragnoise_latent_update(DragState& s, const LossEval& e) {
  if (!s.bottleneck_mode) detail::fail(ErrorCode::BadInput, "state is not in bottleneck mode");
  latent_update(s, e);
}

inline DragResult run_dragnoise(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                                const DragCallbacks& cb = {}) {
  DragState s = prepare_dragnoise(backend, in, c0);
  drive(s, cb, [](DragState& st) { return standard_iteration(st); });
  return finish_drag(s);
}

// ---------------------------------------------------------------- GoodDrag

inline constexpr double kGoodDragStride = 4.0;

inline TermBuilder gooddrag_builder(const DragState& s) {
  return [&s](const Tensor3&, int block) {
    return anchored_terms(s.original().features(block).values, s.points, s.config.region_radius_ms,
                          s.config.reach_tolerance, kGoodDragStride);
  };
}

inline LossEval gooddrag_ms_loss(const DragState& s, bool want_grad = true) {
  return motion_supervision_loss(s, gooddrag_builder(s), want_grad);
}

inline LossEval gooddrag_text_loss(const DragState& s, bool want_grad = true) {
  return text_optimization_loss(s, gooddrag_builder(s), {}, want_grad);
}

/// Timestep of the latent at iteration k.
inline int gooddrag_timestep(int t_start, int k, int B) { return t_start - k / B; }

/// One denoising step of the dragged latent with the current text; the
/// original references move to the same timestep.
inline void gooddrag_denoise(DragState& s) {
  s.variable = ddim_denoise_step(*s.backend, s.variable, s.timestep, s.text);
  s.timestep -= 1;
  s.stage += 1;
}

inline DragState prepare_gooddrag(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0) {
  in.config.validate();
  DragState s = prepare_drag(backend, in, c0, false, in.config.max_iters / in.config.gooddrag_B);
  s.latent_opt = Adam(in.config.lr_latent * in.config.gooddrag.lr_scale);
  return s;
}

inline DragResult run_gooddrag(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                               const DragCallbacks& cb = {}) {
  DragState s = prepare_gooddrag(backend, in, c0);
  const int B = s.config.gooddrag_B;
  drive(
      s, cb, [](DragState& st) { return standard_iteration(st, gooddrag_builder(st)); },
      [B](DragState& st) {
        if (st.k % B == 0) gooddrag_denoise(st);
      });
  return finish_drag(s);
}

// ------------------------------------------------------------------ entry

/// Full drag session for the configured method.
inline DragResult run_drag(const Backend& backend, const SessionInputs& in, const TextEmbedding& c0,
                           const DragCallbacks& cb = {}) {
  switch (in.config.method) {
    case Method::DragDiffusion: return run_dragdiffusion(backend, in, c0, cb);
    case Method::FreeDrag: return run_freedrag(backend, in, c0, cb);
    case Method::DragNoise: return run_dragnoise(backend, in, c0, cb);
    case Method::GoodDrag: return run_gooddrag(backend, in, c0, cb);
  }
  return run_dragdiffusion(backend, in, c0, cb);
}

}  // namespace dragtext
