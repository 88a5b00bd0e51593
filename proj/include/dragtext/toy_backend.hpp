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

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dragtext/backend.hpp"
#include "dragtext/rng.hpp"

namespace dragtext {

/// Deterministic desk-scale diffusion backend.
///
/// latent     z = E (x - 0.5), E a random 4x3 matrix; decode uses pinv(E)
/// hidden     h = tanh(W1 patch3x3(z) + b1)              (bottleneck, 48 ch)
/// attention  a = V^T softmax(K Q / sqrt(8)), Q = Wq h, K = c Wk^T, V = c Wv^T
/// features   F_b = W2_b (h + gamma_b a)                 (48 ch, b = 1..4)
/// noise      eps = -beta U F_3, U fitted so that U W2_3 h(z) ~ z
///
/// Features do not depend on the timestep. The latent grid equals the image
/// grid (downsampling factor 1).
class ToyBackend final : public Backend {
 public:
  static constexpr int kChannels = 4;
  static constexpr int kEmbedDim = 8;
  static constexpr int kHidden = 48;
  static constexpr int kKeyDim = 8;
  static constexpr int kFeatures = 48;
  static constexpr int kSteps = 50;
  static constexpr int kPatch = 9 * kChannels;
  static constexpr double kLatentScale = 0.3;
  static constexpr double kBeta = 0.15;
  static constexpr std::array<double, 4> kGamma = {0.25, 0.5, 1.0, 2.0};

  explicit ToyBackend(std::uint64_t seed = 0) : seed_(seed) {
    info_.name = "toy";
    info_.latent_downsample_factor = 1;
    info_.latent_channels = kChannels;
    info_.embed_dim = kEmbedDim;
    info_.num_train_timesteps = kSteps;
    info_.bottleneck_channels = kHidden;
    info_.alpha_bar.resize(kSteps + 1);
    for (int t = 0; t <= kSteps; ++t) info_.alpha_bar[t] = 1.0 - 0.98 * t / kSteps;

    Rng rng(seed);
    auto draw = [&](int rows, int cols, double scale) {
      Matrix m(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = rng.normal() * scale;
      }
      return m;
    };
    E_ = draw(kChannels, 3, kLatentScale);
    E_pinv_ = E_.completeOrthogonalDecomposition().pseudoInverse();
    W1_ = draw(kHidden, kPatch, 1.0 / std::sqrt(double(kPatch)) / kLatentScale);
    b1_ = draw(kHidden, 1, 0.1);
    Wq_ = draw(kKeyDim, kHidden, 1.0 / std::sqrt(double(kHidden)));
    Wk_ = draw(kKeyDim, kEmbedDim, 1.0 / std::sqrt(double(kEmbedDim)));
    Wv_ = draw(kHidden, kEmbedDim, 1.0 / std::sqrt(double(kEmbedDim)));
    for (auto& w : W2_) w = draw(kFeatures, kHidden, 1.0 / std::sqrt(double(kHidden)));
    fit_noise_head(rng);
  }

  const BackendInfo& info() const override { return info_; }
  std::uint64_t seed() const noexcept { return seed_; }

  LatentState encode(const ImageTensor& image) const override {
    const Tensor3& x = image.pixels();
    Matrix z = E_ * (x.data.array() - 0.5).matrix();
    return {Tensor3(x.height, x.width, std::move(z)), 0, 0};
  }

  ImageTensor decode(const LatentState& latent) const override {
    if (latent.timestep != 0) detail::fail(ErrorCode::TimestepError, "decode needs t = 0, got ", latent.timestep);
    check_latent(latent.values);
    Matrix x = ((E_pinv_ * latent.values.data).array() + 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
    return ImageTensor(Tensor3(latent.values.height, latent.values.width, std::move(x)));
  }

  /// Lower-cased whitespace tokens. Row 0 is the begin token, then one row
  /// per word (at most 75), the end token and padding.
  TextEmbedding encode_text(std::string_view prompt) const override {
    std::vector<std::string> words;
    {
      std::string lowered(prompt);
      std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                     [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
      std::istringstream in(lowered);
      std::string w;
      while (in >> w && words.size() < kTokens - 2) words.push_back(w);
    }
    Rng rng(seed_ * 0x9E3779B97F4A7C15ULL + 1000);
    auto row = [&](Rng& r, double scale) {
      Eigen::RowVectorXd v(kEmbedDim);
      for (int i = 0; i < kEmbedDim; ++i) v(i) = r.normal() * scale;
      return v;
    };
    const Eigen::RowVectorXd bos = row(rng, 1.0);
    const Eigen::RowVectorXd eos = row(rng, 1.0);
    const Eigen::RowVectorXd pad = row(rng, 0.1);
    Matrix c(kTokens, kEmbedDim);
    for (int i = 0; i < kTokens; ++i) c.row(i) = row(rng, 0.1);
    c.row(0) += bos;
    const int n = static_cast<int>(words.size());
    for (int i = 0; i < n; ++i) {
      Rng wr(fnv1a(words[i]) ^ (seed_ * 0xD1B54A32D192ED03ULL));
      c.row(1 + i) += row(wr, 1.0);
    }
    c.row(1 + n) += eos;
    for (int i = 2 + n; i < kTokens; ++i) c.row(i) += pad;
    return TextEmbedding(std::move(c), 1 + n);
  }

  Tensor3 predict_noise(const Tensor3& z, int t, const Matrix& text) const override {
    detail::check_timestep(info_, t, 1);
    check_latent(z);
    return noise_from_hidden(z, hidden(z), text);
  }

  InputGrads predict_noise_vjp(const Tensor3& z, int t, const Matrix& text, const Tensor3& grad) const override {
    detail::check_timestep(info_, t, 1);
    check_latent(z);
    require_same_shape(grad, Tensor3(kChannels, z.height, z.width), "noise gradient");
    const Matrix h = hidden(z);
    auto [gh, gc] = noise_backward(h, text, grad);
    return {hidden_backward(z, h, gh), std::move(gc)};
  }

  FeatureMap feature_map(const Tensor3& z, int t, const Matrix& text, int block) const override {
    detail::check_timestep(info_, t, 0);
    check_latent(z);
    check_block(block);
    return features_from_hidden(z, hidden(z), text, block);
  }

  InputGrads feature_map_vjp(const Tensor3& z, int t, const Matrix& text, int block,
                             const Tensor3& grad) const override {
    detail::check_timestep(info_, t, 0);
    check_latent(z);
    check_block(block);
    require_same_shape(grad, Tensor3(kFeatures, z.height, z.width), "feature gradient");
    const Matrix h = hidden(z);
    auto [gh, gc] = features_backward(h, text, block, grad.data);
    return {hidden_backward(z, h, gh), std::move(gc)};
  }

  bool supports_bottleneck() const override { return true; }

  Tensor3 bottleneck_feature(const Tensor3& z, int t, const Matrix&) const override {
    detail::check_timestep(info_, t, 0);
    check_latent(z);
    return Tensor3(z.height, z.width, hidden(z));
  }

  FeatureMap feature_map_from_bottleneck(const Tensor3& s, int t, const Matrix& text, int block) const override {
    detail::check_timestep(info_, t, 0);
    check_bottleneck(s);
    check_block(block);
    return features_from_hidden(s, s.data, text, block);
  }

  InputGrads feature_map_from_bottleneck_vjp(const Tensor3& s, int t, const Matrix& text, int block,
                                             const Tensor3& grad) const override {
    detail::check_timestep(info_, t, 0);
    check_bottleneck(s);
    check_block(block);
    require_same_shape(grad, Tensor3(kFeatures, s.height, s.width), "feature gradient");
    auto [gh, gc] = features_backward(s.data, text, block, grad.data);
    return {Tensor3(s.height, s.width, std::move(gh)), std::move(gc)};
  }

  Tensor3 predict_noise_from_bottleneck(const Tensor3& s, int t, const Matrix& text) const override {
    detail::check_timestep(info_, t, 1);
    check_bottleneck(s);
    return noise_from_hidden(s, s.data, text);
  }

  InputGrads predict_noise_from_bottleneck_vjp(const Tensor3& s, int t, const Matrix& text,
                                               const Tensor3& grad) const override {
    detail::check_timestep(info_, t, 1);
    check_bottleneck(s);
    require_same_shape(grad, Tensor3(kChannels, s.height, s.width), "noise gradient");
    auto [gh, gc] = noise_backward(s.data, text, grad);
    return {Tensor3(s.height, s.width, std::move(gh)), std::move(gc)};
  }

  const Matrix& encoder_matrix() const noexcept { return E_; }

 private:
  struct Attention {
    Matrix q;  // kKeyDim x P
    Matrix k;  // 77 x kKeyDim
    Matrix v;  // 77 x kHidden
    Matrix a;  // softmax weights, 77 x P
    Matrix read;  // kHidden x P
  };

  struct HiddenGrads {
    Matrix hidden;
    Matrix text;
  };

  void check_latent(const Tensor3& z) const {
    if (z.channels != kChannels) detail::fail(ErrorCode::ShapeError, "latent needs ", kChannels, " channels");
    if (z.height <= 0 || z.width <= 0) detail::fail(ErrorCode::ShapeError, "empty latent");
  }

  void check_bottleneck(const Tensor3& s) const {
    if (s.channels != kHidden) detail::fail(ErrorCode::ShapeError, "bottleneck needs ", kHidden, " channels");
  }

  static void check_block(int block) {
    if (block < 1 || block > 4) detail::fail(ErrorCode::BadBlock, "block ", block, " outside 1..4");
  }

  static void check_text(const Matrix& c) {
    if (c.rows() != kTokens || c.cols() != kEmbedDim) {
      detail::fail(ErrorCode::ShapeError, "text must be ", kTokens, "x", kEmbedDim, ", got ", c.rows(), "x",
                   c.cols());
    }
  }

  /// Zero-padded 3x3 neighbourhoods; row ((dr+1)*3 + (dc+1))*C + ch.
  static Matrix patches(const Tensor3& z) {
    Matrix p = Matrix::Zero(kPatch, z.pixels());
    for (int r = 0; r < z.height; ++r) {
      for (int c = 0; c < z.width; ++c) {
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= z.height || cc < 0 || cc >= z.width) continue;
            p.block<kChannels, 1>(((dr + 1) * 3 + (dc + 1)) * kChannels, z.index(r, c)) = z.column(rr, cc);
          }
        }
      }
    }
    return p;
  }

  static Tensor3 unpatch(const Matrix& gp, int height, int width) {
    Tensor3 g(kChannels, height, width);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
            g.column(rr, cc) += gp.block<kChannels, 1>(((dr + 1) * 3 + (dc + 1)) * kChannels, r * width + c);
          }
        }
      }
    }
    return g;
  }

  Matrix hidden(const Tensor3& z) const {
    Matrix pre = W1_ * patches(z);
    pre.colwise() += b1_.col(0);
    return pre.array().tanh().matrix();
  }

  Tensor3 hidden_backward(const Tensor3& z, const Matrix& h, const Matrix& gh) const {
    const Matrix gpre = (gh.array() * (1.0 - h.array().square())).matrix();
    return unpatch(W1_.transpose() * gpre, z.height, z.width);
  }

  Attention attend(const Matrix& h, const Matrix& c) const {
    check_text(c);
    Attention at;
    at.q = Wq_ * h;
    at.k = c * Wk_.transpose();
    at.v = c * Wv_.transpose();
    Matrix s = at.k * at.q / std::sqrt(double(kKeyDim));
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double m = s.col(j).maxCoeff();
      s.col(j) = (s.col(j).array() - m).exp().matrix();
      s.col(j) /= s.col(j).sum();
    }
    at.a = std::move(s);
    at.read = at.v.transpose() * at.a;
    return at;
  }

  Matrix mixed(const Matrix& h, const Attention& at, int block) const {
    return W2_[block - 1] * (h + kGamma[block - 1] * at.read);
  }

  FeatureMap features_from_hidden(const Tensor3& grid, const Matrix& h, const Matrix& c, int block) const {
    const Attention at = attend(h, c);
    return {Tensor3(grid.height, grid.width, mixed(h, at, block)), block};
  }

  Tensor3 noise_from_hidden(const Tensor3& grid, const Matrix& h, const Matrix& c) const {
    const Attention at = attend(h, c);
    return Tensor3(grid.height, grid.width, -kBeta * (U_ * mixed(h, at, 3)));
  }

  /// Backward through u = h + gamma * read(h, c) given dL/du.
  HiddenGrads mix_backward(const Matrix& h, const Matrix& c, double gamma, const Matrix& gu) const {
    const Attention at = attend(h, c);
    const Matrix g_read = gamma * gu;
    const Matrix g_v = at.a * g_read.transpose();
    const Matrix g_a = at.v * g_read;
    const Eigen::RowVectorXd dots = (at.a.array() * g_a.array()).colwise().sum();
    Matrix g_s = (at.a.array() * (g_a.rowwise() - dots).array()).matrix();
    g_s /= std::sqrt(double(kKeyDim));
    const Matrix g_k = g_s * at.q.transpose();
    const Matrix g_q = at.k.transpose() * g_s;
    Matrix gh = gu + Wq_.transpose() * g_q;
    Matrix gc = g_k * Wk_ + g_v * Wv_;
    return {std::move(gh), std::move(gc)};
  }

  HiddenGrads features_backward(const Matrix& h, const Matrix& c, int block, const Matrix& gf) const {
    return mix_backward(h, c, kGamma[block - 1], W2_[block - 1].transpose() * gf);
  }

  HiddenGrads noise_backward(const Matrix& h, const Matrix& c, const Tensor3& geps) const {
    const Matrix gf = -kBeta * (U_.transpose() * geps.data);
    return features_backward(h, c, 3, gf);
  }

  /// Least-squares fit of U on the content path over random latents.
  void fit_noise_head(Rng& rng) {
    constexpr int kSamples = 200;
    constexpr int kGrid = 16;
    Matrix ata = Matrix::Zero(kFeatures, kFeatures);
    Matrix atb = Matrix::Zero(kFeatures, kChannels);
    for (int n = 0; n < kSamples; ++n) {
      Tensor3 z(kChannels, kGrid, kGrid);
      for (Eigen::Index i = 0; i < z.data.size(); ++i) z.data.data()[i] = rng.normal() * 0.7 * kLatentScale;
      const Matrix f = W2_[2] * hidden(z);
      ata.noalias() += f * f.transpose();
      atb.noalias() += f * z.data.transpose();
    }
    U_ = ata.ldlt().solve(atb).transpose();
  }

  std::uint64_t seed_;
  BackendInfo info_;
  Matrix E_, E_pinv_, W1_, b1_, Wq_, Wk_, Wv_, U_;
  std::array<Matrix, 4> W2_;
};

}  // namespace dragtext
