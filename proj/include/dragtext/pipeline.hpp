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

#include <memory>
#include <string>

#include "json.hpp"

#include "dragtext/embedmanip.hpp"
#include "dragtext/image_io.hpp"
#include "dragtext/metrics.hpp"
#include "dragtext/registry.hpp"
#include "dragtext/variants.hpp"

namespace dragtext {

/// Validated, backend-bound inputs of one edit. The CLI and the service both
/// go through prepare_edit and run_edit, so identical inputs give identical
/// bytes on either front end.
struct PreparedEdit {
  std::shared_ptr<const Backend> backend;
  SessionInputs inputs;
  TextEmbedding text;
  std::string prompt;
};

inline PreparedEdit prepare_edit(BackendCache& backends, const ImageTensor& image, const Matrix& pixel_mask,
                                 const nlohmann::json& points, const DragConfig& config, const std::string& prompt) {
  config.validate();
  auto backend = backends.get(config.backend, config.seed);
  const int factor = backend->info().latent_downsample_factor;
  if (pixel_mask.rows() != image.height() || pixel_mask.cols() != image.width()) {
    detail::fail_field(ErrorCode::ShapeMismatch, "mask", "mask ", pixel_mask.rows(), "x", pixel_mask.cols(),
                       " does not match image ", image.height(), "x", image.width());
  }
  if (image.height() % factor != 0 || image.width() % factor != 0) {
    detail::fail_field(ErrorCode::ShapeError, "image", "image dims not divisible by ", factor);
  }
  EditMask mask = downsample_mask(pixel_mask, factor);
  PointSet pts = points_from_json(points, factor);
  SessionInputs inputs = validate_session_inputs(image, mask, pts, config, factor);
  TextEmbedding text = backend->encode_text(prompt);
  return {std::move(backend), std::move(inputs), std::move(text), prompt};
}

struct EditOutcome {
  DragResult result;
  MetricsReport metrics;
  Bytes png;
  std::string trajectory;
};

inline EditOutcome run_edit(const PreparedEdit& edit, const DragCallbacks& cb = {}) {
  EditOutcome out;
  out.result = run_drag(*edit.backend, edit.inputs, edit.text, cb);
  out.metrics = evaluate(*edit.backend, edit.inputs.image, out.result.image, edit.inputs.points, edit.text.values());
  out.png = encode_png(out.result.image);
  out.trajectory = to_jsonl(out.result.trajectory);
  return out;
}

// ---------------------------------------------------------- persistence

inline nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) detail::fail(ErrorCode::BadInput, "matrix size mismatch");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

inline nlohmann::json tensor_to_json(const Tensor3& t) {
  return {{"height", t.height}, {"width", t.width}, {"values", matrix_to_json(t.data)}};
}

inline Tensor3 tensor_from_json(const nlohmann::json& j) {
  return Tensor3(j.at("height").get<int>(), j.at("width").get<int>(), matrix_from_json(j.at("values")));
}

inline nlohmann::json endpoint_to_json(const DragEndpoint& e) {
  nlohmann::json j = {{"timestep", e.latent.timestep},
                      {"latent", tensor_to_json(e.latent.values)},
                      {"text", matrix_to_json(e.text)}};
  if (e.bottleneck) j["bottleneck"] = tensor_to_json(*e.bottleneck);
  return j;
}

inline DragEndpoint endpoint_from_json(const nlohmann::json& j) {
  DragEndpoint e{{tensor_from_json(j.at("latent")), j.at("timestep").get<int>(), 0},
                 matrix_from_json(j.at("text")),
                 std::nullopt};
  if (j.contains("bottleneck")) e.bottleneck = tensor_from_json(j.at("bottleneck"));
  return e;
}

/// Everything needed to re-render interpolations of a finished edit.
inline nlohmann::json run_record(const PreparedEdit& edit, const EditOutcome& out) {
  return {{"prompt", edit.prompt},
          {"config", to_json(edit.inputs.config)},
          {"points", points_to_json(edit.inputs.points)},
          {"iterations", out.result.iterations},
          {"metrics", to_json(out.metrics)},
          {"original", endpoint_to_json(out.result.original)},
          {"dragged", endpoint_to_json(out.result.dragged)}};
}

struct StoredRun {
  DragConfig config;
  DragEndpoint original;
  DragEndpoint dragged;
};

inline StoredRun stored_run_from_json(const nlohmann::json& j) {
  try {
    return {config_from_json(j.at("config")), endpoint_from_json(j.at("original")),
            endpoint_from_json(j.at("dragged"))};
  } catch (const nlohmann::json::exception& e) {
    detail::fail(ErrorCode::BadInput, "malformed run record: ", e.what());
  }
}

}  // namespace dragtext
