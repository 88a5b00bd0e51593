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


// Acceptance runner: one PASS/FAIL line per primary criterion. Every
// tolerance and threshold is pinned below. Exit status is nonzero when any
// line fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "dragtext/artifacts.hpp"
#include "dragtext/embedmanip.hpp"
#include "dragtext/image_io.hpp"
#include "dragtext/metrics.hpp"
#include "dragtext/variants.hpp"
#include "fd_oracle.hpp"
#include "oracles.hpp"
#include "scene_fixture.hpp"

#ifndef DRAGTEXT_CLI_PATH
#define DRAGTEXT_CLI_PATH "dragtext"
#endif

namespace dragtext::acceptance {
namespace {

using Clock = std::chrono::steady_clock;
using testing::random_state;
using testing::shared_toy;

// Pinned thresholds.
constexpr double kGradRelTol = 1e-4;          // central FD, step 1e-4
constexpr int kGradPoints = 5;                // seeded points per gradient
constexpr double kGradBudgetSec = 60.0;
constexpr int kTrackingInstances = 100;
constexpr double kTrackingBudgetSec = 30.0;
constexpr int kLossInstances = 50;
constexpr double kLossAbsTol = 1e-10;
constexpr int kInversionSteps = 35;
constexpr double kInversionRms = 1e-2;
constexpr int kInversionCases = 50;
constexpr double kInversionPairedShare = 0.95;
constexpr int kSuiteSize = 20;
constexpr std::uint64_t kSuiteSeed = 100;
constexpr double kEfficacyShare = 0.70;
constexpr double kEfficacyBudgetSec = 600.0;
constexpr double kAblationShare = 0.70;
constexpr double kInterpShare = 0.80;
constexpr int kDeterminismRuns = 3;
constexpr double kScoreTol = 1e-4;
constexpr const char* kMismatchedPrompt = "a painting of a red dog";

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  if (!ok) ++failures;
  std::cout << (ok ? "PASS  " : "FAIL  ") << name << "  " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// ------------------------------------------------------------ gradients

Tensor3 random_latent(Rng& rng) {
  Tensor3 z(ToyBackend::kChannels, 16, 16);
  z.data = testing::random_like(z.data, rng) * ToyBackend::kLatentScale;
  return z;
}

Matrix perturbed_text(Rng& rng) {
  Matrix c = shared_toy().encode_text(kToyPrompt).values();
  return c + 0.05 * testing::random_like(c, rng);
}

void gradient_suite() {
  const auto t0 = Clock::now();
  const ToyBackend& b = shared_toy();
  std::map<std::string, double> worst;
  for (int seed = 0; seed < kGradPoints; ++seed) {
    Rng rng(1000 + seed);
    {
      DragState s = random_state(rng, Method::DragDiffusion);
      const LossEval e = motion_supervision_loss(s);
      const Tensor3 f0 = s.path().features(s.variable, s.timestep, s.text, s.config.image_block).values;
      const auto terms = shifted_terms(f0, s.points, s.config.region_radius_ms, s.config.reach_tolerance);
      auto f = [&](const Matrix& z) {
        DragState t = s;
        t.variable.data = z;
        return image_loss(t.path(), t.variable, t.text, image_loss_spec(t),
                          [&](const Tensor3&, int) { return terms; }, t.points.size(), false)
            .value;
      };
      worst["dLms/dz"] = std::max(worst["dLms/dz"], testing::directional_check(f, s.variable.data, e.grad, rng).rel_error);
    }
    {
      const DragState s = random_state(rng, Method::DragDiffusion);
      const LossEval e = text_optimization_loss(s);
      const Tensor3 f0 = s.path().features(s.variable, s.timestep, s.text, s.config.unet_block).values;
      const auto terms = shifted_terms(f0, s.points, s.config.region_radius_ms, s.config.reach_tolerance);
      auto f = [&](const Matrix& c) {
        return text_loss(s.path(), s.variable, c, text_loss_spec(s), [&](const Tensor3&, int) { return terms; },
                         s.points.size(), false)
            .value;
      };
      worst["dLtext/dc"] = std::max(worst["dLtext/dc"], testing::directional_check(f, s.text, e.grad, rng).rel_error);
    }
    const Tensor3 z = random_latent(rng);
    const Matrix c = perturbed_text(rng);
    const int t = rng.uniform_int(1, b.info().num_train_timesteps + 1);
    const int block = rng.uniform_int(1, 5);
    Tensor3 ge(z.channels, z.height, z.width);
    ge.data = testing::random_like(ge.data, rng);
    const InputGrads eg = b.predict_noise_vjp(z, t, c, ge);
    auto eps_z = [&](const Matrix& x) {
      Tensor3 zz = z;
      zz.data = x;
      return (b.predict_noise(zz, t, c).data.array() * ge.data.array()).sum();
    };
    auto eps_c = [&](const Matrix& x) { return (b.predict_noise(z, t, x).data.array() * ge.data.array()).sum(); };
    worst["deps/dz"] = std::max(worst["deps/dz"], testing::directional_check(eps_z, z.data, eg.input.data, rng).rel_error);
    worst["deps/dc"] = std::max(worst["deps/dc"], testing::directional_check(eps_c, c, eg.text, rng).rel_error);
    const FeatureMap fm = b.feature_map(z, t, c, block);
    Tensor3 gf = Tensor3::zeros_like(fm.values);
    gf.data = testing::random_like(gf.data, rng);
    const InputGrads fg = b.feature_map_vjp(z, t, c, block, gf);
    auto feat_c = [&](const Matrix& x) {
      return (b.feature_map(z, t, x, block).values.data.array() * gf.data.array()).sum();
    };
    worst["dF/dc"] = std::max(worst["dF/dc"], testing::directional_check(feat_c, c, fg.text, rng).rel_error);
  }
  const double secs = seconds_since(t0);
  double max_err = 0.0;
  std::string detail;
  for (const auto& [k, v] : worst) {
    max_err = std::max(max_err, v);
    detail += k + "=" + fmt(v) + " ";
  }
  report(max_err < kGradRelTol && secs < kGradBudgetSec, "gradient-suite",
         detail + "(rel < " + fmt(kGradRelTol) + ", " + std::to_string(kGradPoints) + " points each) time=" +
             fmt(secs) + "s (< 60s)");
}

// ------------------------------------------------------- stop-gradient

/// Nonzero feature-gradient columns that are not bilinear corners of any
/// sample position.
int leaked_columns(const Tensor3& f, const std::vector<MatchTerm>& terms, const std::vector<double>& weights) {
  Tensor3 g = Tensor3::zeros_like(f);
  match_loss(f, terms, weights, nullptr, &g);
  std::set<int> support;
  for (const auto& t : terms) {
    for (const auto& k : bilinear_corners(clamp_point(t.position, f.height, f.width), f.height, f.width)) {
      if (k.weight != 0.0) support.insert(k.index);
    }
  }
  int leaks = 0;
  for (int col = 0; col < f.pixels(); ++col) {
    if (!support.count(col) && !(g.data.col(col).array() == 0.0).all()) ++leaks;
  }
  return leaks;
}

void stop_gradient_suite() {
  Rng rng(2000);
  int leaks = 0, checks = 0;
  for (int trial = 0; trial < 20; ++trial) {
    for (Method m : {Method::DragDiffusion, Method::FreeDrag, Method::DragNoise, Method::GoodDrag}) {
      DragState s = random_state(rng, m);
      const TemplateFeatureSet tpl = init_templates(s);
      for (int block : {s.config.image_block, s.config.unet_block}) {
        const Tensor3 f = oracle::features(s, block);
        std::vector<MatchTerm> terms;
        switch (m) {
          case Method::FreeDrag:
            terms = template_builder(s, block == s.config.image_block ? tpl.image : tpl.text)(f, block);
            break;
          case Method::GoodDrag: terms = gooddrag_builder(s)(f, block); break;
          default: terms = shifted_builder(s)(f, block); break;
        }
        leaks += leaked_columns(f, terms, {});
        ++checks;
      }
      // Text regularizer: rows outside the semantic mask receive no gradient
      // from it, and c0 is a constant.
      const LossEval with = text_optimization_loss(s);
      DragState z = s;
      z.config.lambda_text = 0.0;
      const LossEval without = text_optimization_loss(z);
      const int l = s.original_text.semantic_len();
      if (!(with.grad.bottomRows(kTokens - l) == without.grad.bottomRows(kTokens - l))) ++leaks;
      ++checks;
    }
  }
  // Originals never change during a run.
  const ToyBackend& b = shared_toy();
  DragState s = prepare_drag(b, testing::toy_inputs(5), b.encode_text(kToyPrompt));
  const OriginalCache before = s.original();
  const Matrix c0 = s.original_text.values();
  for (int i = 0; i < 5; ++i) standard_iteration(s);
  if (!(s.original().image_features.values.data == before.image_features.values.data) ||
      !(s.original().denoised_step.data == before.denoised_step.data) || !(s.original_text.values() == c0)) {
    ++leaks;
  }
  ++checks;
  report(leaks == 0, "stop-gradient", "violations=" + std::to_string(leaks) + " over " + std::to_string(checks) +
                                          " checks (exact, shifted/template/anchored terms, text regularizer, originals)");
}

// ------------------------------------------------------------- tracking

void tracking_oracle() {
  const auto t0 = Clock::now();
  Rng rng(3000);
  int mismatches = 0;
  for (int trial = 0; trial < kTrackingInstances; ++trial) {
    DragState s = random_state(rng, Method::DragDiffusion);
    s.config.region_radius_pt = std::array{1, 3, 12}[trial % 3];
    const Tensor3 f = s.path().features(s.variable, s.timestep, s.text, s.config.image_block).values;
    std::vector<oracle::Cell2> want;
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      want.push_back(oracle::track(f, s.original().image_features.values, s.points.handles()[i],
                                   s.points.initial_handles()[i], s.config.region_radius_pt));
    }
    track_points(s);
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      if (s.points.handles()[i].row != want[i].r || s.points.handles()[i].col != want[i].c) ++mismatches;
    }
  }
  const double secs = seconds_since(t0);
  report(mismatches == 0 && secs < kTrackingBudgetSec, "tracking-oracle",
         "mismatches=" + std::to_string(mismatches) + " over " + std::to_string(kTrackingInstances) +
             " instances (r2 in {1,3,12}) time=" + fmt(secs) + "s (< 30s)");
}

// --------------------------------------------------------- loss oracles

void loss_oracles() {
  Rng rng(4000);
  std::map<std::string, double> worst;
  auto track = [&](const std::string& k, double got, double want) {
    worst[k] = std::max(worst[k], std::abs(got - want));
  };
  for (int i = 0; i < kLossInstances; ++i) {
    const DragState s = random_state(rng, Method::DragDiffusion);
    track("L_ms", motion_supervision_loss(s, {}, false).value, oracle::ms_loss(s));
    track("L_text", text_optimization_loss(s, {}, {}, false).value, oracle::dragtext_text_loss(s));
  }
  for (int i = 0; i < kLossInstances; ++i) {
    const DragState s = random_state(rng, Method::FreeDrag);
    TemplateFeatureSet t = init_templates(s);
    for (auto& m : t.image) m += 0.1 * testing::random_like(m, rng);
    for (auto& m : t.text) m += 0.1 * testing::random_like(m, rng);
    for (auto& c : t.classes) c = static_cast<AdaptationClass>(rng.uniform_int(0, 3));
    track("freedrag_ms", freedrag_ms_loss(s, t, false).value, oracle::freedrag_ms_loss(s, t));
    track("freedrag_text", freedrag_text_loss(s, t, t.alphas(), false).value,
          oracle::freedrag_text_loss(s, t, t.alphas()));
  }
  for (int i = 0; i < kLossInstances; ++i) {
    const DragState s = random_state(rng, Method::GoodDrag);
    track("gooddrag_ms", gooddrag_ms_loss(s, false).value, oracle::gooddrag_ms_loss(s));
    track("gooddrag_text", gooddrag_text_loss(s, false).value, oracle::gooddrag_text_loss(s));
  }
  double max_err = 0.0;
  std::string detail;
  for (const auto& [k, v] : worst) {
    max_err = std::max(max_err, v);
    detail += k + "=" + fmt(v) + " ";
  }
  report(max_err <= kLossAbsTol, "loss-oracles",
         detail + "(abs <= 1e-10, " + std::to_string(kLossInstances) + " instances each)");
}

// ------------------------------------------------------------ inversion

void inversion_round_trip() {
  const ToyBackend& b = shared_toy();
  const TextEmbedding c = b.encode_text(kToyPrompt);
  const TextEmbedding other = b.encode_text(kMismatchedPrompt);
  double worst = 0.0;
  int paired_wins = 0;
  for (int i = 0; i < kInversionCases; ++i) {
    const LatentState z0 = b.encode(make_toy_scene(5000 + i).image);
    const LatentState zt = ddim_invert(b, z0, c, kInversionSteps);
    const double paired = rms(ddim_denoise(b, zt, c).values.data - z0.values.data);
    const double unpaired = rms(ddim_denoise(b, zt, other).values.data - z0.values.data);
    worst = std::max(worst, paired);
    if (paired < unpaired) ++paired_wins;
  }
  const double share = double(paired_wins) / kInversionCases;
  report(worst < kInversionRms && share >= kInversionPairedShare, "inversion-round-trip",
         "max_rms=" + fmt(worst) + " (< 1e-2) paired_better=" + std::to_string(paired_wins) + "/" +
             std::to_string(kInversionCases) + " (>= 95%)");
}

// ---------------------------------------------------------- drag suite

struct SuiteRun {
  DragResult result;
  MetricsReport metrics;
  SessionInputs inputs;
};

std::map<std::tuple<int, double, bool>, SuiteRun> suite_cache;

const SuiteRun& suite_run(int i, double lambda_text, bool text_opt) {
  const auto key = std::make_tuple(i, lambda_text, text_opt);
  auto it = suite_cache.find(key);
  if (it != suite_cache.end()) return it->second;
  const ToyBackend& b = shared_toy();
  SessionInputs in = testing::toy_inputs(kSuiteSeed + i);
  in.config.lambda_text = lambda_text;
  in.config.text_optimization = text_opt;
  const TextEmbedding c0 = b.encode_text(kToyPrompt);
  SuiteRun r{run_drag(b, in, c0), {}, in};
  r.metrics = evaluate(b, in.image, r.result.image, in.points, c0.values());
  return suite_cache.emplace(key, std::move(r)).first->second;
}

constexpr double kDefaultLambdaText = 0.1;

void drag_efficacy() {
  const auto t0 = Clock::now();
  int wins = 0;
  double mean_with = 0.0, mean_without = 0.0;
  for (int i = 0; i < kSuiteSize; ++i) {
    const double with = suite_run(i, kDefaultLambdaText, true).metrics.md;
    const double without = suite_run(i, kDefaultLambdaText, false).metrics.md;
    if (with <= without) ++wins;
    mean_with += with / kSuiteSize;
    mean_without += without / kSuiteSize;
  }
  const double secs = seconds_since(t0);
  const double share = double(wins) / kSuiteSize;
  report(share >= kEfficacyShare && mean_with < mean_without && secs < kEfficacyBudgetSec, "drag-efficacy",
         "md_text<=md_plain on " + std::to_string(wins) + "/" + std::to_string(kSuiteSize) +
             " (>= 70%) mean_md text=" + fmt(mean_with) + " plain=" + fmt(mean_without) +
             " (text strictly lower) time=" + fmt(secs) + "s (< 600s)");
}

double handle_displacement(const DragResult& r) {
  double d = 0.0;
  for (std::size_t i = 0; i < r.points.size(); ++i) d += distance(r.points.handles()[i], r.points.initial_handles()[i]);
  return d / double(r.points.size());
}

void lambda_ablation() {
  const std::array<double, 3> lambdas = {0.0, 0.1, 10.0};
  int monotone = 0, displacement_ok = 0;
  for (int i = 0; i < kSuiteSize; ++i) {
    std::array<double, 3> drift{};
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      const SuiteRun& r = suite_run(i, lambdas[j], true);
      drift[j] = masked_text_drift(r.result.dragged.text, r.result.original_text);
    }
    if (drift[1] <= drift[0] && drift[2] <= drift[1]) ++monotone;
    if (handle_displacement(suite_run(i, 0.0, true).result) >= handle_displacement(suite_run(i, 10.0, true).result)) {
      ++displacement_ok;
    }
  }
  const double share = double(displacement_ok) / kSuiteSize;
  report(monotone == kSuiteSize && share >= kAblationShare, "lambda-text-ablation",
         "drift monotone on " + std::to_string(monotone) + "/" + std::to_string(kSuiteSize) +
             " (all) displacement(0)>=displacement(10) on " + std::to_string(displacement_ok) + "/" +
             std::to_string(kSuiteSize) + " (>= 70%)");
}

// -------------------------------------------------------- interpolation

void interpolation_identities() {
  const ToyBackend& b = shared_toy();
  const TextEmbedding c0 = b.encode_text(kToyPrompt);
  const std::vector<double> grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  int bitwise = 0, monotone = 0, extrapolated = 0;
  for (int i = 0; i < kSuiteSize; ++i) {
    const SuiteRun& r = suite_run(i, kDefaultLambdaText, true);
    const auto imgs = render_interpolation(b, r.result, grid);
    if (imgs.front().pixels().data == render_endpoint(b, r.result.original).pixels().data &&
        imgs.back().pixels().data == r.result.image.pixels().data) {
      ++bitwise;
    }
    try {
      const auto out = render_interpolation(b, r.result, {-1.0, 2.0});
      if (out[0].pixels().all_finite() && out[1].pixels().all_finite()) ++extrapolated;
    } catch (const std::exception&) {
    }
    // Displacement of the handle content, located by feature
    // correspondence against the unedited image.
    const Tensor3 fo = correspondence_features(b, r.inputs.image, c0.values());
    bool ok = true;
    double prev = -1.0;
    for (const auto& im : imgs) {
      const Tensor3 fe = correspondence_features(b, im, c0.values());
      double d = 0.0;
      for (std::size_t p = 0; p < r.inputs.points.size(); ++p) {
        const Point h0 = r.inputs.points.initial_handles()[p];
        d += distance(to_point(nearest_feature(fe, bilinear_sample(fo, h0))), h0);
      }
      if (d < prev) ok = false;
      prev = d;
    }
    if (ok) ++monotone;
  }
  const double share = double(monotone) / kSuiteSize;
  report(bitwise == kSuiteSize && extrapolated == kSuiteSize && share >= kInterpShare, "interpolation",
         "bitwise endpoints " + std::to_string(bitwise) + "/" + std::to_string(kSuiteSize) + " omega in {-1,2} ran " +
             std::to_string(extrapolated) + "/" + std::to_string(kSuiteSize) + " displacement monotone on " +
             std::to_string(monotone) + "/" + std::to_string(kSuiteSize) + " (>= 80%)");
}

// ---------------------------------------------------------- determinism

void cli_determinism() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("dragtext_accept_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const ToyScene s = make_toy_scene(77);
  write_file(dir / "image.png", encode_png(s.image));
  write_file(dir / "mask.png", encode_mask_png(s.mask));
  const nlohmann::json pts = {
      {"pairs", {{{"handle", {s.handle.row, s.handle.col}}, {"target", {s.target.row, s.target.col}}}}}};
  write_file(dir / "points.json", pts.dump());
  const std::vector<std::string> configs = {
      "--method dragdiffusion --seed 1",
      "--method freedrag --seed 2",
      "--method dragnoise --seed 3",
      "--method gooddrag --seed 4",
      "--method dragdiffusion --no-text-opt --lambda-text 1 --seed 5",
  };
  int stable = 0, errors = 0;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    std::set<std::string> hashes;
    for (int run = 0; run < kDeterminismRuns; ++run) {
      const fs::path out = dir / ("c" + std::to_string(c) + "_" + std::to_string(run));
      const std::string cmd = std::string("\"") + DRAGTEXT_CLI_PATH + "\" drag --image \"" +
                              (dir / "image.png").string() + "\" --mask \"" + (dir / "mask.png").string() +
                              "\" --points \"" + (dir / "points.json").string() + "\" --prompt \"" + kToyPrompt +
                              "\" " + configs[c] + " --out-dir \"" + out.string() + "\" > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        ++errors;
        continue;
      }
      std::string h;
      for (const char* f : {"edited.png", "trajectory.jsonl", "metrics.json", "run.json"}) {
        h += sha256_hex(read_file(out / f));
      }
      hashes.insert(h);
    }
    if (hashes.size() == 1) ++stable;
  }
  fs::remove_all(dir);
  report(stable == int(configs.size()) && errors == 0, "cli-determinism",
         "identical hashes on " + std::to_string(stable) + "/" + std::to_string(configs.size()) + " configs x " +
             std::to_string(kDeterminismRuns) + " runs, failed invocations=" + std::to_string(errors));
}

// ------------------------------------------------------- combined score

void combined_score_check() {
  const double a = combined_score(0.117, 33.21);
  const double b = combined_score(0.124, 29.78);
  bool order = true;
  for (const auto& p : kPublishedScores) {
    if (!(combined_score(p.lpips_text, p.md_text) < combined_score(p.lpips, p.md))) order = false;
  }
  report(std::abs(a - 3.8856) <= kScoreTol && std::abs(b - 3.6927) <= kScoreTol && order, "combined-score",
         "(0.117,33.21)->" + fmt(a, 8) + " (0.124,29.78)->" + fmt(b, 8) +
             " (within 1e-4) text-optimized product lower for all 4 methods: " + (order ? "yes" : "no"));
}

}  // namespace
}  // namespace dragtext::acceptance

int main(int argc, char** argv) {
  using namespace dragtext::acceptance;
  const std::vector<std::pair<std::string, std::function<void()>>> criteria = {
      {"gradient-suite", gradient_suite},
      {"stop-gradient", stop_gradient_suite},
      {"tracking-oracle", tracking_oracle},
      {"loss-oracles", loss_oracles},
      {"inversion-round-trip", inversion_round_trip},
      {"drag-efficacy", drag_efficacy},
      {"lambda-text-ablation", lambda_ablation},
      {"interpolation", interpolation_identities},
      {"cli-determinism", cli_determinism},
      {"combined-score", combined_score_check},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && name != only) continue;
    try {
      fn();
    } catch (const std::exception& e) {
      report(false, name, std::string("threw: ") + e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}
