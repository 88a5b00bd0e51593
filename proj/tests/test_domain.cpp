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


#include <gtest/gtest.h>

#include "dragtext/domain.hpp"

namespace dragtext {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::BadInput;
}

ImageTensor gray(int h, int w) {
  Tensor3 t(3, h, w);
  t.data.setConstant(0.5);
  return ImageTensor(t);
}

TEST(ImageTensor, Invariants) {
  EXPECT_EQ(code_of([] { ImageTensor(Tensor3(1, 4, 4)); }), ErrorCode::ShapeError);
  Tensor3 t(3, 2, 2);
  t.data(0, 0) = 1.5;
  EXPECT_EQ(code_of([&] { ImageTensor{t}; }), ErrorCode::BadImage);
  t.data(0, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { ImageTensor{t}; }), ErrorCode::BadImage);
}

TEST(TextEmbedding, MaskRowsAreConstant) {
  for (int l : {1, 5, 77}) {
    TextEmbedding e(Matrix::Random(77, 8), l);
    const Matrix& m = e.token_mask();
    int ones = 0;
    for (int r = 0; r < 77; ++r) {
      EXPECT_TRUE((m.row(r).array() == m(r, 0)).all());
      ones += m(r, 0) == 1.0;
    }
    EXPECT_EQ(ones, l);
    EXPECT_EQ(e.with_values(Matrix::Zero(77, 8)).token_mask(), m);
  }
  EXPECT_EQ(code_of([] { TextEmbedding(Matrix::Zero(76, 8), 1); }), ErrorCode::ShapeError);
  EXPECT_EQ(code_of([] { TextEmbedding(Matrix::Zero(77, 8), 0); }), ErrorCode::ShapeError);
}

TEST(PointSet, DeactivationIsMonotone) {
  PointSet p({{1, 1}, {2, 2}}, {{5, 5}, {6, 6}});
  p.deactivate(0);
  EXPECT_FALSE(p.active(0));
  EXPECT_THROW(p.set_handle(0, {2, 2}), Error);
  p.set_handle(1, {3, 3});
  EXPECT_EQ(p.handles()[1], (Point{3, 3}));
  EXPECT_EQ(p.initial_handles()[1], (Point{2, 2}));
  p.deactivate(0);
  EXPECT_FALSE(p.active(0));
  EXPECT_TRUE(p.any_active());
  EXPECT_THROW(PointSet({}, {}), Error);
}

TEST(EditMask, Invariants) {
  EXPECT_EQ(code_of([] { EditMask(Matrix::Zero(4, 4)); }), ErrorCode::EmptyMask);
  Matrix m = Matrix::Zero(4, 4);
  m(1, 1) = 0.5;
  EXPECT_EQ(code_of([&] { EditMask{m}; }), ErrorCode::BadInput);
  m(1, 1) = 1;
  EditMask mask(m);
  EXPECT_EQ(mask.frozen_row()(5), 0.0);
  EXPECT_EQ(mask.frozen_row()(0), 1.0);
}

TEST(DragConfig, PublishedDefaults) {
  auto dd = DragConfig::defaults_for(Method::DragDiffusion);
  EXPECT_EQ(dd.timestep, 35);
  EXPECT_EQ(dd.max_iters, 80);
  EXPECT_EQ(dd.region_radius_ms, 1);
  EXPECT_EQ(dd.region_radius_pt, 3);
  EXPECT_DOUBLE_EQ(dd.lr_latent, 0.01);
  EXPECT_DOUBLE_EQ(dd.lambda_image, 0.1);
  EXPECT_DOUBLE_EQ(dd.lr_text, 0.004);
  EXPECT_DOUBLE_EQ(dd.lambda_text, 0.1);
  EXPECT_EQ(dd.unet_block, 3);
  auto fd = DragConfig::defaults_for(Method::FreeDrag);
  EXPECT_EQ(fd.max_iters, 300);
  EXPECT_EQ(fd.region_radius_ms, 3);
  EXPECT_DOUBLE_EQ(fd.lambda_image, 10.0);
  auto dn = DragConfig::defaults_for(Method::DragNoise);
  EXPECT_DOUBLE_EQ(dn.lr_latent, 0.02);
  EXPECT_DOUBLE_EQ(dn.lambda_image, 0.2);
  auto gd = DragConfig::defaults_for(Method::GoodDrag);
  EXPECT_EQ(gd.timestep, 38);
  EXPECT_EQ(gd.max_iters, 70);
  EXPECT_EQ(gd.region_radius_ms, 4);
  EXPECT_EQ(gd.region_radius_pt, 12);
  EXPECT_EQ(gd.gooddrag_B, 10);
  EXPECT_EQ(gd.tracking_every, 3);
  EXPECT_DOUBLE_EQ(gd.lambda_image, 0.2);
}

TEST(DragConfig, Validation) {
  auto gd = DragConfig::defaults_for(Method::GoodDrag);
  EXPECT_NO_THROW(gd.validate());
  gd.max_iters = 71;
  EXPECT_EQ(code_of([&] { gd.validate(); }), ErrorCode::BadConfig);
  auto c = DragConfig{};
  c.region_radius_ms = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = DragConfig{};
  c.lr_text = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = DragConfig{};
  c.max_iters = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::BadConfig);
  c = DragConfig{};
  c.lambda_text = 0;  // the ablation sweep starts at zero
  EXPECT_NO_THROW(c.validate());
}

TEST(DragConfig, JsonRoundTripAndDefaults) {
  auto c = config_from_json({{"method", "gooddrag"}, {"lambda_text", 1.0}});
  EXPECT_EQ(c.method, Method::GoodDrag);
  EXPECT_EQ(c.region_radius_pt, 12);
  EXPECT_DOUBLE_EQ(c.lambda_text, 1.0);
  auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  try {
    config_from_json({{"method", "gooddrag"}, {"max_iters", 71}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadConfig);
    EXPECT_EQ(e.field(), "config.gooddrag_B");
  }
  try {
    config_from_json({{"lamda_text", 1.0}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.field(), "config.lamda_text");
  }
  EXPECT_THROW(config_from_json({{"method", "draggan"}}), Error);
  EXPECT_THROW(config_from_json({{"timestep", "x"}}), Error);
  auto v = config_from_json({{"method", "freedrag"}, {"variant", {{"freedrag", {{"tau_lo_scale", 0.2}}}}}});
  EXPECT_DOUBLE_EQ(v.freedrag.tau_lo_scale, 0.2);
}

TEST(Points, JsonSpaces) {
  nlohmann::json j = {{"pairs", {{{"handle", {8, 16}}, {"target", {24, 32}}}}}, {"space", "image"}};
  auto p = points_from_json(j, 8);
  EXPECT_EQ(p.handles()[0], (Point{1, 2}));
  EXPECT_EQ(p.targets()[0], (Point{3, 4}));
  j["space"] = "feature";
  EXPECT_EQ(points_from_json(j, 8).handles()[0], (Point{8, 16}));
  try {
    points_from_json({{"pairs", {{{"handle", {1}}, {"target", {1, 2}}}}}}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.field(), "points.pairs[0].handle");
  }
  EXPECT_THROW(points_from_json({{"pairs", nlohmann::json::array()}}, 1), Error);
  auto rt = points_from_json(points_to_json(p), 1);
  EXPECT_EQ(rt.handles()[0], p.handles()[0]);
}

TEST(Mask, Downsample) {
  Matrix m = Matrix::Zero(16, 16);
  m(9, 3) = 255;
  auto em = downsample_mask(m, 8);
  EXPECT_EQ(em.height(), 2);
  EXPECT_EQ(em.values()(1, 0), 1.0);
  EXPECT_EQ(em.values().sum(), 1.0);
  EXPECT_THROW(downsample_mask(Matrix::Zero(16, 16), 8), Error);
}

TEST(ValidateSessionInputs, Examples) {
  const ImageTensor img = gray(512, 512);
  const EditMask mask = EditMask::all_editable(64, 64);
  PointSet ok({{10, 10}}, {{20, 20}});
  const auto cfg = DragConfig::defaults_for(Method::DragDiffusion);
  auto v = validate_session_inputs(img, mask, ok, cfg, 8);
  EXPECT_EQ(v.points.handles()[0], ok.handles()[0]);
  EXPECT_EQ(v.image, img);

  PointSet bad({{-1, 4}}, {{20, 20}});
  try {
    validate_session_inputs(img, mask, bad, cfg, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBoundsPoint);
    EXPECT_EQ(e.field(), "points.pairs[0].handle");
  }
  PointSet far({{1, 4}}, {{64, 20}});
  EXPECT_EQ(code_of([&] { validate_session_inputs(img, mask, far, cfg, 8); }), ErrorCode::OutOfBoundsPoint);
  EXPECT_EQ(code_of([&] { validate_session_inputs(img, EditMask::all_editable(32, 32), ok, cfg, 8); }),
            ErrorCode::ShapeMismatch);
  auto gd = DragConfig::defaults_for(Method::GoodDrag);
  EXPECT_NO_THROW(validate_session_inputs(img, mask, ok, gd, 8));
  gd.max_iters = 71;
  EXPECT_EQ(code_of([&] { validate_session_inputs(img, mask, ok, gd, 8); }), ErrorCode::BadConfig);
}

}  // namespace
}  // namespace dragtext
