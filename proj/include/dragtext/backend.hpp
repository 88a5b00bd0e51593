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
#include <string>
#include <string_view>
#include <vector>

#include "dragtext/domain.hpp"
#include "dragtext/error.hpp"
#include "dragtext/tensor.hpp"

namespace dragtext {

struct BackendInfo {
  std::string name;
  int latent_downsample_factor = 1;
  int latent_channels = 4;
  int embed_dim = 8;
  int num_train_timesteps = 50;
  /// alpha_bar[t] for t = 0..T; alpha_bar[0] = 1.
  std::vector<double> alpha_bar;
  /// Channels of the injectable bottleneck feature, 0 when unsupported.
  int bottleneck_channels = 0;
};

/// Vector-Jacobian product result: gradient with respect to the spatial input
/// (latent or bottleneck feature) and with respect to the text values.
struct InputGrads {
  Tensor3 input;
  Matrix text;
};

/// Diffusion backend contract. Implementations are immutable after
/// construction and every op is a pure function of its arguments, so one
/// instance may serve concurrent sessions.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendInfo& info() const = 0;

  virtual LatentState encode(const ImageTensor& image) const = 0;
  virtual ImageTensor decode(const LatentState& latent) const = 0;
  virtual TextEmbedding encode_text(std::string_view prompt) const = 0;

  virtual Tensor3 predict_noise(const Tensor3& z, int t, const Matrix& text) const = 0;
  virtual InputGrads predict_noise_vjp(const Tensor3& z, int t, const Matrix& text, const Tensor3& grad) const = 0;

  virtual FeatureMap feature_map(const Tensor3& z, int t, const Matrix& text, int block) const = 0;
  virtual InputGrads feature_map_vjp(const Tensor3& z, int t, const Matrix& text, int block,
                                     const Tensor3& grad) const = 0;

  virtual bool supports_bottleneck() const { return false; }

  virtual Tensor3 bottleneck_feature(const Tensor3&, int, const Matrix&) const { no_bottleneck(); }
  virtual FeatureMap feature_map_from_bottleneck(const Tensor3&, int, const Matrix&, int) const { no_bottleneck(); }
  virtual InputGrads feature_map_from_bottleneck_vjp(const Tensor3&, int, const Matrix&, int,
                                                     const Tensor3&) const {
    no_bottleneck();
  }
  virtual Tensor3 predict_noise_from_bottleneck(const Tensor3&, int, const Matrix&) const { no_bottleneck(); }
  virtual InputGrads predict_noise_from_bottleneck_vjp(const Tensor3&, int, const Matrix&, const Tensor3&) const {
    no_bottleneck();
  }

  /// Fine-tuning hook (e.g. LoRA) for real-model adapters. The toy backend
  /// has nothing to fit.
  virtual void prepare(const ImageTensor&, const TextEmbedding&) {}

  // Convenience overloads on domain types.
  Tensor3 predict_noise(const LatentState& z, int t, const TextEmbedding& text) const {
    return predict_noise(z.values, t, text.values());
  }
  FeatureMap feature_map(const LatentState& z, int t, const TextEmbedding& text, int block) const {
    return feature_map(z.values, t, text.values(), block);
  }

 protected:
  [[noreturn]] void no_bottleneck() const {
    detail::fail(ErrorCode::BackendCapabilityError, "backend '", info().name,
                 "' cannot inject an external bottleneck feature");
  }
};

namespace detail {

inline void check_timestep(const BackendInfo& info, int t, int lo) {
  if (t < lo || t > info.num_train_timesteps) {
    fail(ErrorCode::TimestepError, "timestep ", t, " outside [", lo, ", ", info.num_train_timesteps, "]");
  }
}

}  // namespace detail

/// Coefficients of one deterministic DDIM step z' = a z + b eps.
struct DdimCoeffs {
  double a;
  double b;
};

/// Step from timestep t to t - 1.
inline DdimCoeffs ddim_denoise_coeffs(const BackendInfo& info, int t) {
  detail::check_timestep(info, t, 1);
  const double at = info.alpha_bar[t];
  const double ap = info.alpha_bar[t - 1];
  return {std::sqrt(ap / at), std::sqrt(1.0 - ap) - std::sqrt(ap) * std::sqrt(1.0 - at) / std::sqrt(at)};
}

/// Step from timestep t - 1 to t.
inline DdimCoeffs ddim_invert_coeffs(const BackendInfo& info, int t) {
  detail::check_timestep(info, t, 1);
  const double at = info.alpha_bar[t];
  const double ap = info.alpha_bar[t - 1];
  return {std::sqrt(at / ap), std::sqrt(1.0 - at) - std::sqrt(at) * std::sqrt(1.0 - ap) / std::sqrt(ap)};
}

inline Tensor3 ddim_denoise_step(const Backend& backend, const Tensor3& z, int t, const Matrix& text) {
  const auto k = ddim_denoise_coeffs(backend.info(), t);
  Tensor3 out = backend.predict_noise(z, t, text);
  out.data = k.a * z.data + k.b * out.data;
  return out;
}

inline InputGrads ddim_denoise_step_vjp(const Backend& backend, const Tensor3& z, int t, const Matrix& text,
                                        const Tensor3& grad) {
  const auto k = ddim_denoise_coeffs(backend.info(), t);
  Tensor3 scaled = grad;
  scaled.data *= k.b;
  InputGrads g = backend.predict_noise_vjp(z, t, text, scaled);
  g.input.data += k.a * grad.data;
  return g;
}

inline LatentState ddim_denoise_step(const Backend& backend, const LatentState& z, const TextEmbedding& text) {
  return {ddim_denoise_step(backend, z.values, z.timestep, text.values()), z.timestep - 1, z.iteration};
}

/// Runs `steps` inversion steps from the latent's current timestep.
inline LatentState ddim_invert(const Backend& backend, const LatentState& z, const TextEmbedding& text, int steps) {
  if (steps < 0 || z.timestep + steps > backend.info().num_train_timesteps) {
    detail::fail(ErrorCode::TimestepError, "cannot invert ", steps, " steps from timestep ", z.timestep);
  }
  LatentState out = z;
  for (int s = 0; s < steps; ++s) {
    const int t = out.timestep + 1;
    const auto k = ddim_invert_coeffs(backend.info(), t);
    Tensor3 eps = backend.predict_noise(out.values, t, text.values());
    out.values.data = k.a * out.values.data + k.b * eps.data;
    out.timestep = t;
  }
  return out;
}

/// Denoises down to timestep 0.
inline LatentState ddim_denoise(const Backend& backend, const LatentState& z, const TextEmbedding& text) {
  detail::check_timestep(backend.info(), z.timestep, 0);
  LatentState out = z;
  while (out.timestep > 0) out = ddim_denoise_step(backend, out, text);
  return out;
}

}  // namespace dragtext
