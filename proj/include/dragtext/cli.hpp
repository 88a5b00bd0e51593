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

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dragtext/pipeline.hpp"
#include "dragtext/service.hpp"

namespace dragtext::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kBackend = 3, kCancelled = 4 };

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::Cancelled: return kCancelled;
    case ErrorCode::BackendError:
    case ErrorCode::BackendCapabilityError: return kBackend;
    default: return kValidation;
  }
}

inline std::atomic<bool>& interrupt_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

struct DragOptions {
  std::string image;
  std::string mask;
  std::string points;
  std::string prompt;
  std::string config;
  std::optional<std::string> method;
  std::optional<double> lambda_text;
  std::optional<double> eta_text;
  std::optional<int> unet_block;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  bool no_text_opt = false;
  std::string out_dir = ".";
};

/// Config file first, then method, then explicit flags.
inline DragConfig build_config(const DragOptions& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    const Bytes raw = read_file(o.config);
    try {
      j = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      detail::fail_field(ErrorCode::BadConfig, "config", "cannot parse ", o.config, ": ", e.what());
    }
    if (!j.is_object()) detail::fail_field(ErrorCode::BadConfig, "config", "config must be a JSON object");
  }
  if (o.method) j["method"] = *o.method;
  if (o.lambda_text) j["lambda_text"] = *o.lambda_text;
  if (o.eta_text) j["lr_text"] = *o.eta_text;
  if (o.unet_block) j["unet_block"] = *o.unet_block;
  if (o.seed) j["seed"] = *o.seed;
  if (o.backend) j["backend"] = *o.backend;
  if (o.no_text_opt) j["text_optimization"] = false;
  return config_from_json(j);
}

inline nlohmann::json read_json_file(const std::string& path, const std::string& field) {
  const Bytes raw = read_file(path);
  try {
    return nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    detail::fail_field(ErrorCode::BadInput, field, "cannot parse ", path, ": ", e.what());
  }
}

inline PreparedEdit load_edit(BackendCache& backends, const DragOptions& o, const DragConfig& config) {
  const ImageTensor image = decode_image(read_file(o.image));
  const Matrix mask = decode_mask(read_file(o.mask));
  return prepare_edit(backends, image, mask, read_json_file(o.points, "points"), config, o.prompt);
}

inline DragCallbacks interruptible(std::vector<DragRecord>* partial) {
  DragCallbacks cb;
  cb.cancelled = [] { return interrupt_flag().load(); };
  if (partial) cb.on_record = [partial](const DragRecord& r) { partial->push_back(r); };
  return cb;
}

/// Writes edited.png, trajectory.jsonl, metrics.json and run.json.
inline void write_outputs(const std::filesystem::path& dir, const PreparedEdit& edit, const EditOutcome& out) {
  std::filesystem::create_directories(dir);
  write_file(dir / "edited.png", out.png);
  write_file(dir / "trajectory.jsonl", out.trajectory);
  write_file(dir / "metrics.json", to_json(out.metrics).dump(2) + "\n");
  write_file(dir / "run.json", run_record(edit, out).dump() + "\n");
}

template <typename F>
int guarded(std::ostream& err, F&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "dragtext: " << e.what();
    if (!e.field().empty()) err << " [" << e.field() << "]";
    err << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "dragtext: " << e.what() << "\n";
    return kBackend;
  }
}

inline int cmd_drag(const DragOptions& o, std::ostream& log, std::ostream& err) {
  std::vector<DragRecord> partial;
  return guarded(err, [&] {
    const DragConfig config = build_config(o);
    BackendCache backends;
    const PreparedEdit edit = load_edit(backends, o, config);
    try {
      const EditOutcome out = run_edit(edit, interruptible(&partial));
      write_outputs(o.out_dir, edit, out);
      log << "iterations " << out.result.iterations << "  md " << out.metrics.md << "  perceptual "
          << out.metrics.perceptual << "\n";
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Cancelled) {
        std::filesystem::create_directories(o.out_dir);
        write_file(std::filesystem::path(o.out_dir) / "trajectory.jsonl", to_jsonl(partial));
      }
      throw;
    }
    return static_cast<int>(kOk);
  });
}

enum class SweepKnob { LambdaText, UnetBlock };

inline SweepKnob parse_knob(const std::string& s) {
  if (s == "lambda-text") return SweepKnob::LambdaText;
  if (s == "unet-block") return SweepKnob::UnetBlock;
  detail::fail_field(ErrorCode::BadInput, "sweep", "unknown sweep knob '", s, "'");
}

struct AblationRow {
  double value = 0.0;
  double md = 0.0;
  double text_drift = 0.0;
  double perceptual = 0.0;
  int iterations = 0;
};

inline std::string format_csv(const std::string& knob, const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << knob << ",md,text_drift_l1,perceptual,iterations\n";
  for (const auto& r : rows) {
    os << r.value << "," << r.md << "," << r.text_drift << "," << r.perceptual << "," << r.iterations << "\n";
  }
  return os.str();
}

/// One full run per value, in the given order.
inline std::vector<AblationRow> run_ablation(const DragOptions& base, SweepKnob knob, const std::vector<double>& values) {
  if (values.empty()) detail::fail_field(ErrorCode::BadInput, "values", "empty sweep list");
  BackendCache backends;
  std::vector<AblationRow> rows;
  for (double v : values) {
    DragOptions o = base;
    if (knob == SweepKnob::LambdaText) {
      o.lambda_text = v;
    } else {
      if (v != std::floor(v)) detail::fail_field(ErrorCode::BadInput, "values", "block must be an integer, got ", v);
      o.unet_block = static_cast<int>(v);
    }
    const DragConfig config = build_config(o);
    const PreparedEdit edit = load_edit(backends, o, config);
    const EditOutcome out = run_edit(edit, interruptible(nullptr));
    AblationRow row;
    row.value = v;
    row.md = out.metrics.md;
    row.perceptual = out.metrics.perceptual;
    row.iterations = out.result.iterations;
    row.text_drift = out.result.trajectory.empty() ? 0.0 : out.result.trajectory.back().text_drift_l1;
    rows.push_back(row);
  }
  return rows;
}

inline int cmd_ablate(const DragOptions& o, const std::string& knob, const std::vector<double>& values,
                      const std::string& out_csv, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const SweepKnob k = parse_knob(knob);
    const std::string csv = format_csv(knob == "lambda-text" ? "lambda_text" : "unet_block", run_ablation(o, k, values));
    if (out_csv.empty() || out_csv == "-") {
      log << csv;
    } else {
      const auto parent = std::filesystem::path(out_csv).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
      write_file(out_csv, csv);
    }
    return static_cast<int>(kOk);
  });
}

inline std::string omega_label(double w) {
  std::ostringstream os;
  os << w;
  return os.str();
}

inline int cmd_interp(const std::string& run_dir, const std::vector<double>& omegas, const std::string& out_dir,
                      std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    if (omegas.empty()) detail::fail_field(ErrorCode::BadInput, "omegas", "empty omega list");
    const auto record_path = std::filesystem::path(run_dir) / "run.json";
    if (!std::filesystem::exists(record_path)) {
      detail::fail_field(ErrorCode::BadInput, "run-dir", "missing ", record_path.string());
    }
    const StoredRun run = stored_run_from_json(read_json_file(record_path.string(), "run-dir"));
    BackendCache backends;
    const auto backend = backends.get(run.config.backend, run.config.seed);
    const auto images = render_interpolation(*backend, run.original, run.dragged, omegas);
    std::filesystem::create_directories(out_dir);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto name = "omega_" + std::to_string(i) + "_" + omega_label(omegas[i]) + ".png";
      write_file(std::filesystem::path(out_dir) / name, encode_png(images[i]));
    }
    write_file(std::filesystem::path(out_dir) / "strip.png", encode_png(hstack(images)));
    log << images.size() << " images written to " << out_dir << "\n";
    return static_cast<int>(kOk);
  });
}

struct ServeOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> backend;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
};

inline int cmd_serve(const ServeOptions& so, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    ServiceOptions opts = ServiceOptions::from_env();
    if (so.backend) opts.backend = *so.backend;
    if (so.seed) opts.seed = *so.seed;
    if (so.data_dir) opts.data_dir = *so.data_dir;
    HttpService service(opts);
    if (!service.bind(so.host, so.port)) {
      err << "dragtext: cannot bind " << so.host << ":" << so.port << "\n";
      return static_cast<int>(kBackend);
    }
    log << "listening on http://" << so.host << ":" << so.port << " (backend " << opts.backend << ")\n";
    service.listen_after_bind();
    return static_cast<int>(kOk);
  });
}

inline void add_drag_flags(CLI::App& app, DragOptions& o) {
  app.add_option("--image", o.image, "input image (PNG or JPEG)")->required()->check(CLI::ExistingFile);
  app.add_option("--mask", o.mask, "editable-region mask image")->required()->check(CLI::ExistingFile);
  app.add_option("--points", o.points, "handle/target points JSON")->required()->check(CLI::ExistingFile);
  app.add_option("--prompt", o.prompt, "text prompt");
  app.add_option("--config", o.config, "config JSON; flags override it")->check(CLI::ExistingFile);
  app.add_option("--method", o.method, "dragdiffusion|freedrag|dragnoise|gooddrag (default dragdiffusion)");
  app.add_option("--lambda-text", o.lambda_text, "text regularization weight");
  app.add_option("--eta-text", o.eta_text, "text learning rate");
  app.add_option("--unet-block", o.unet_block, "decoder block for text-loss features");
  app.add_option("--seed", o.seed, "backend seed");
  app.add_option("--backend", o.backend, "toy or adapter:<name>");
  app.add_flag("--no-text-opt", o.no_text_opt, "disable text optimization");
}

/// Strict comma-separated number list. Empty lists and empty or
/// non-numeric items are usage errors.
inline std::vector<double> parse_number_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    item = b == std::string::npos ? std::string{} : item.substr(b, e - b + 1);
    double v = 0.0;
    std::size_t used = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size()) {
      detail::fail_field(ErrorCode::BadInput, field, "'", item, "' is not a number");
    }
    out.push_back(v);
  }
  if (out.empty()) detail::fail_field(ErrorCode::BadInput, field, "empty list");
  return out;
}

/// Entry point shared by the binary and tests.
inline int run(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Point-based drag editing with joint latent and text optimization"};
  app.require_subcommand(1);

  DragOptions drag_opts;
  auto* drag = app.add_subcommand("drag", "run one drag edit");
  add_drag_flags(*drag, drag_opts);
  drag->add_option("--out-dir", drag_opts.out_dir, "output directory")->capture_default_str();

  DragOptions ablate_opts;
  std::string knob;
  std::string sweep_values;
  std::string csv_path;
  auto* ablate = app.add_subcommand("ablate", "sweep lambda-text or unet-block");
  add_drag_flags(*ablate, ablate_opts);
  ablate->add_option("--sweep", knob, "lambda-text|unet-block")->required()->check(
      CLI::IsMember({"lambda-text", "unet-block"}));
  ablate->add_option("--values", sweep_values, "comma-separated values")->required();
  ablate->add_option("--out", csv_path, "CSV path, '-' for stdout");

  std::string run_dir;
  std::string omegas;
  std::string interp_out = ".";
  auto* interp = app.add_subcommand("interp", "render an omega interpolation strip");
  interp->add_option("--run-dir", run_dir, "directory written by drag")->required();
  interp->add_option("--omegas", omegas, "comma-separated omegas")->required();
  interp->add_option("--out-dir", interp_out, "output directory")->capture_default_str();

  ServeOptions serve_opts;
  auto* serve = app.add_subcommand("serve", "start the HTTP session service");
  serve->add_option("--host", serve_opts.host)->capture_default_str();
  serve->add_option("--port", serve_opts.port)->capture_default_str();
  serve->add_option("--backend", serve_opts.backend, "overrides DRAGTEXT_BACKEND");
  serve->add_option("--seed", serve_opts.seed, "overrides DRAGTEXT_SEED");
  serve->add_option("--data-dir", serve_opts.data_dir, "overrides DRAGTEXT_DATA_DIR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    log << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    log << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "dragtext: " << e.what() << "\n";
    return kValidation;
  }

  if (*drag) return cmd_drag(drag_opts, log, err);
  if (*ablate) {
    std::vector<double> values;
    if (int rc = guarded(err, [&] { values = parse_number_list(sweep_values, "values"); return 0; })) return rc;
    return cmd_ablate(ablate_opts, knob, values, csv_path, log, err);
  }
  if (*interp) {
    std::vector<double> ws;
    if (int rc = guarded(err, [&] { ws = parse_number_list(omegas, "omegas"); return 0; })) return rc;
    return cmd_interp(run_dir, ws, interp_out, log, err);
  }
  if (*serve) return cmd_serve(serve_opts, log, err);
  return kValidation;
}

inline void install_interrupt_handler() {
  std::signal(SIGINT, [](int) { interrupt_flag() = true; });
  std::signal(SIGTERM, [](int) { interrupt_flag() = true; });
}

}  // namespace dragtext::cli
