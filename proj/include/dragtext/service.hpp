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
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "dragtext/artifacts.hpp"
#include "dragtext/pipeline.hpp"

// After Eigen: <resolv.h> defines a `_res` macro that breaks Eigen templates.
#include "httplib.h"

namespace dragtext {

struct ServiceOptions {
  std::string backend = "toy";
  std::uint64_t seed = 0;
  std::filesystem::path data_dir = "dragtext-data";
  int workers = 2;

  /// DRAGTEXT_BACKEND, DRAGTEXT_SEED and DRAGTEXT_DATA_DIR override defaults.
  static ServiceOptions from_env() {
    ServiceOptions o;
    if (const char* b = std::getenv("DRAGTEXT_BACKEND"); b && *b) o.backend = b;
    if (const char* s = std::getenv("DRAGTEXT_SEED"); s && *s) o.seed = std::stoull(s);
    if (const char* d = std::getenv("DRAGTEXT_DATA_DIR"); d && *d) o.data_dir = d;
    return o;
  }
};

enum class SessionStatus { New, Running, Done, Failed, Cancelled };

inline std::string_view to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::New: return "new";
    case SessionStatus::Running: return "running";
    case SessionStatus::Done: return "done";
    case SessionStatus::Failed: return "failed";
    case SessionStatus::Cancelled: return "cancelled";
  }
  return "failed";
}

/// HTTP-shaped reply from the transport-independent session layer.
struct Reply {
  int status = 200;
  nlohmann::json body;
};

/// Error with an HTTP status attached.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string error, std::string message, std::string field = {}, std::string code = {})
      : std::runtime_error(message), status_(status) {
    body_ = {{"error", std::move(error)}, {"message", std::move(message)}};
    if (!field.empty()) body_["field"] = std::move(field);
    if (!code.empty()) body_["code"] = std::move(code);
  }
  int status() const noexcept { return status_; }
  const nlohmann::json& body() const noexcept { return body_; }

 private:
  int status_;
  nlohmann::json body_;
};

struct Session {
  std::string id;
  std::string prompt;
  int semantic_len = 1;
  ImageTensor image;
  std::string image_ref;
  std::string mask_ref;
  std::optional<PreparedEdit> edit;
  SessionStatus status = SessionStatus::New;
  std::vector<nlohmann::json> events;
  bool finished = false;
  std::atomic<bool> cancel_requested{false};
  std::optional<DragResult> result;
  nlohmann::json result_json;
  std::string trajectory_ref;
  std::map<std::uint64_t, std::string> interpolation_cache;
  std::string error;

  mutable std::mutex mu;
  std::condition_variable cv;
};

/// Session bookkeeping, independent of the HTTP transport.
class SessionService {
 public:
  explicit SessionService(ServiceOptions options)
      : options_(std::move(options)), store_(options_.data_dir), pool_(std::max(1, options_.workers)) {
    default_backend_ = backends_.get(options_.backend, options_.seed);
  }

  ~SessionService() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mu_);
      if (stopped_) return;
      stopped_ = true;
      for (auto& [id, s] : sessions_) s->cancel_requested = true;
    }
    pool_.shutdown();
  }

  const ServiceOptions& options() const noexcept { return options_; }
  ArtifactStore& store() noexcept { return store_; }

  Reply create_session(const Bytes& image_bytes, const std::string& prompt) {
    ImageTensor image;
    try {
      image = decode_image(image_bytes);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::TooLarge) throw ServiceError(413, "TooLarge", e.what(), "image", "TooLarge");
      throw ServiceError(400, "BadImage", e.what(), "image", std::string(to_string(e.code())));
    }
    auto s = std::make_shared<Session>();
    s->id = new_id();
    s->prompt = prompt;
    s->semantic_len = default_backend_->encode_text(prompt).semantic_len();
    s->image = std::move(image);
    s->image_ref = store_.put(image_bytes, detail::is_png(image_bytes) ? "png" : "jpg");
    {
      std::lock_guard lock(mu_);
      sessions_[s->id] = s;
    }
    return {201, describe(*s)};
  }

  Reply set_inputs(const std::string& id, const Bytes& mask_bytes, const std::string& points_text,
                   const std::string& config_text) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->status != SessionStatus::New) {
      throw ServiceError(409, "WrongState", "inputs can only be set while the session is new");
    }
    const nlohmann::json points = parse_json(points_text, "points");
    nlohmann::json config = config_text.empty() ? nlohmann::json::object() : parse_json(config_text, "config");
    if (!config.is_object()) throw ServiceError(422, "ValidationFailed", "config must be an object", "config");
    if (!config.contains("backend")) config["backend"] = options_.backend;
    if (!config.contains("seed")) config["seed"] = options_.seed;
    try {
      const DragConfig cfg = config_from_json(config);
      Matrix pixel_mask;
      try {
        pixel_mask = decode_mask(mask_bytes);
      } catch (const Error& e) {
        throw Error(e.code(), e.what(), "mask");
      }
      PreparedEdit edit = prepare_edit(backends_, s->image, pixel_mask, points, cfg, s->prompt);
      s->mask_ref = store_.put(mask_bytes, "png");
      s->edit = std::move(edit);
    } catch (const Error& e) {
      const std::string field = e.field().empty() ? "config" : e.field();
      throw ServiceError(422, "ValidationFailed", e.what(), field, std::string(to_string(e.code())));
    }
    return {200, describe_locked(*s)};
  }

  Reply run(const std::string& id) {
    auto s = find(id);
    {
      std::lock_guard lock(s->mu);
      if (s->status != SessionStatus::New) {
        throw ServiceError(409, "WrongState", "session is " + std::string(to_string(s->status)));
      }
      if (!s->edit) throw ServiceError(409, "WrongState", "inputs have not been set");
      s->status = SessionStatus::Running;
    }
    if (!pool_.enqueue([this, s] { execute(s); })) {
      std::lock_guard lock(s->mu);
      s->status = SessionStatus::Failed;
      s->error = "worker pool is shut down";
      publish_locked(*s, {{"type", "failed"}, {"status", "failed"}, {"error", s->error}}, true);
      throw ServiceError(503, "Unavailable", s->error);
    }
    return {202, {{"id", id}, {"status", "running"}}};
  }

  Reply cancel(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mu);
    if (s->status == SessionStatus::Cancelled) return {200, {{"id", id}, {"status", "cancelled"}}};
    if (s->status != SessionStatus::Running) {
      throw ServiceError(409, "WrongState", "session is " + std::string(to_string(s->status)));
    }
    s->cancel_requested = true;
    return {202, {{"id", id}, {"status", "running"}, {"cancel_requested", true}}};
  }

  Reply get(const std::string& id) {
    auto s = find(id);
    return {200, describe(*s)};
  }

  /// Events from position `from`; blocks up to `wait` for new ones. The flag
  /// tells whether the stream has ended.
  std::pair<std::vector<nlohmann::json>, bool> events(const std::string& id, std::size_t from,
                                                      std::chrono::milliseconds wait) {
    auto s = find(id);
    std::unique_lock lock(s->mu);
    s->cv.wait_for(lock, wait, [&] { return s->events.size() > from || s->finished; });
    std::vector<nlohmann::json> out;
    for (std::size_t i = from; i < s->events.size(); ++i) out.push_back(s->events[i]);
    return {out, s->finished && from + out.size() >= s->events.size()};
  }

  /// Blocks until the session leaves the running state.
  SessionStatus wait(const std::string& id, std::chrono::milliseconds timeout = std::chrono::minutes(10)) {
    auto s = find(id);
    std::unique_lock lock(s->mu);
    s->cv.wait_for(lock, timeout, [&] { return s->finished || s->status == SessionStatus::New; });
    return s->status;
  }

  Reply interpolate(const std::string& id, const std::string& body_text) {
    auto s = find(id);
    const nlohmann::json body = parse_json(body_text, "omegas");
    const nlohmann::json omegas = body.is_object() && body.contains("omegas") ? body["omegas"] : body;
    if (!omegas.is_array() || omegas.empty()) {
      throw ServiceError(422, "ValidationFailed", "expected a non-empty array of omegas", "omegas");
    }
    std::vector<double> ws;
    for (std::size_t i = 0; i < omegas.size(); ++i) {
      const std::string field = "omegas[" + std::to_string(i) + "]";
      if (!omegas[i].is_number()) throw ServiceError(422, "ValidationFailed", "omega must be a number", field);
      const double w = omegas[i].get<double>();
      if (!std::isfinite(w)) throw ServiceError(422, "ValidationFailed", "omega must be finite", field);
      ws.push_back(w);
    }
    std::lock_guard lock(s->mu);
    if (s->status != SessionStatus::Done || !s->result) {
      throw ServiceError(409, "WrongState", "session is " + std::string(to_string(s->status)));
    }
    nlohmann::json images = nlohmann::json::array();
    for (double w : ws) {
      std::uint64_t key;
      std::memcpy(&key, &w, sizeof key);
      auto it = s->interpolation_cache.find(key);
      if (it == s->interpolation_cache.end()) {
        const auto rendered = render_interpolation(*s->edit->backend, *s->result, {w});
        it = s->interpolation_cache.emplace(key, store_.put(encode_png(rendered.front()), "png")).first;
      }
      images.push_back({{"omega", w}, {"image", it->second}});
    }
    return {200, {{"id", id}, {"images", images}}};
  }

 private:
  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "NotFound", "no session " + id);
    return it->second;
  }

  static nlohmann::json parse_json(const std::string& text, const std::string& field) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ServiceError(422, "ValidationFailed", std::string("invalid JSON: ") + e.what(), field);
    }
  }

  std::string new_id() {
    std::lock_guard lock(mu_);
    static const char* hex = "0123456789abcdef";
    std::string id;
    do {
      id.clear();
      for (int i = 0; i < 16; ++i) id += hex[id_rng_() & 0xF];
    } while (sessions_.count(id));
    return id;
  }

  nlohmann::json describe(const Session& s) const {
    std::lock_guard lock(s.mu);
    return describe_locked(s);
  }

  nlohmann::json describe_locked(const Session& s) const {
    nlohmann::json j = {{"id", s.id},
                        {"status", to_string(s.status)},
                        {"prompt", s.prompt},
                        {"semantic_len", s.semantic_len},
                        {"empty_prompt", s.semantic_len == 1},
                        {"image", s.image_ref},
                        {"width", s.image.width()},
                        {"height", s.image.height()},
                        {"events", s.events.size()}};
    if (s.edit) {
      j["mask"] = s.mask_ref;
      j["points"] = points_to_json(s.edit->inputs.points);
      j["config"] = to_json(s.edit->inputs.config);
      j["latent_downsample_factor"] = s.edit->backend->info().latent_downsample_factor;
    }
    if (!s.trajectory_ref.empty()) j["trajectory"] = s.trajectory_ref;
    if (!s.result_json.is_null()) j["result"] = s.result_json;
    if (!s.error.empty()) j["error"] = s.error;
    return j;
  }

  void publish_locked(Session& s, nlohmann::json event, bool final_event) {
    s.events.push_back(std::move(event));
    if (final_event) s.finished = true;
    s.cv.notify_all();
  }

  void execute(const std::shared_ptr<Session>& s) {
    const PreparedEdit& edit = *s->edit;
    const int every = edit.inputs.config.preview_every;
    DragCallbacks cb;
    cb.cancelled = [&] { return s->cancel_requested.load(); };
    cb.on_state = [&](const DragState& st) {
      nlohmann::json ev = to_json(st.trajectory.back());
      ev["type"] = "iteration";
      if (every > 0 && (st.k + 1) % every == 0) {
        ev["preview"] = store_.put(encode_png(render_endpoint(*edit.backend, current_endpoint(st))), "png");
      }
      std::lock_guard lock(s->mu);
      publish_locked(*s, std::move(ev), false);
    };
    try {
      EditOutcome out = run_edit(edit, cb);
      const std::string image_ref = store_.put(out.png, "png");
      const std::string traj_ref = store_.put(out.trajectory, "jsonl");
      nlohmann::json result = {{"image", image_ref},
                               {"trajectory", traj_ref},
                               {"iterations", out.result.iterations},
                               {"metrics", to_json(out.metrics)}};
      std::lock_guard lock(s->mu);
      s->trajectory_ref = traj_ref;
      s->result_json = result;
      s->result = std::move(out.result);
      s->status = SessionStatus::Done;
      publish_locked(*s, {{"type", "done"}, {"status", "done"}, {"result", result}}, true);
    } catch (const Error& e) {
      std::lock_guard lock(s->mu);
      nlohmann::json partial;
      for (const auto& ev : s->events) {
        nlohmann::json r = ev;
        r.erase("type");
        r.erase("preview");
        partial.push_back(r);
      }
      std::string jsonl;
      for (const auto& r : partial) jsonl += r.dump() + "\n";
      s->trajectory_ref = store_.put(jsonl, "jsonl");
      if (e.code() == ErrorCode::Cancelled) {
        s->status = SessionStatus::Cancelled;
        publish_locked(*s, {{"type", "cancelled"}, {"status", "cancelled"}, {"trajectory", s->trajectory_ref}}, true);
      } else {
        s->status = SessionStatus::Failed;
        s->error = e.what();
        publish_locked(*s, {{"type", "failed"}, {"status", "failed"}, {"error", s->error}}, true);
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(s->mu);
      s->status = SessionStatus::Failed;
      s->error = e.what();
      publish_locked(*s, {{"type", "failed"}, {"status", "failed"}, {"error", s->error}}, true);
    }
  }

  ServiceOptions options_;
  ArtifactStore store_;
  BackendCache backends_;
  std::shared_ptr<const Backend> default_backend_;
  httplib::ThreadPool pool_;
  std::mutex mu_;
  bool stopped_ = false;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_{std::random_device{}()};
};

/// REST + server-sent events front end.
class HttpService {
 public:
  explicit HttpService(ServiceOptions options) : sessions_(std::move(options)) { routes(); }
  ~HttpService() { stop(); }

  SessionService& sessions() noexcept { return sessions_; }

  int bind_to_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

  void stop() {
    sessions_.shutdown();
    if (server_.is_running()) server_.stop();
  }

 private:
  static void send(httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& fn) {
    try {
      send(res, fn());
    } catch (const ServiceError& e) {
      res.status = e.status();
      res.set_content(e.body().dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json({{"error", "Internal"}, {"message", e.what()}}).dump(), "application/json");
    }
  }

  static std::string field(const httplib::Request& req, const std::string& key) {
    if (req.has_file(key)) return req.get_file_value(key).content;
    if (req.has_param(key)) return req.get_param_value(key);
    return {};
  }

  static Bytes field_bytes(const httplib::Request& req, const std::string& key) {
    const std::string s = field(req, key);
    return Bytes(s.begin(), s.end());
  }

  static std::string content_type(const std::string& ref) {
    if (ref.ends_with(".png")) return "image/png";
    if (ref.ends_with(".jpg")) return "image/jpeg";
    if (ref.ends_with(".jsonl")) return "application/x-ndjson";
    if (ref.ends_with(".json")) return "application/json";
    return "application/octet-stream";
  }

  void routes() {
    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID");
      res.status = 204;
    });
    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_file("image")) throw ServiceError(400, "BadImage", "missing 'image' part", "image");
        return sessions_.create_session(field_bytes(req, "image"), field(req, "prompt"));
      });
    });
    server_.Post(R"(/sessions/([0-9a-f]+)/inputs)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!req.has_file("mask")) throw ServiceError(422, "ValidationFailed", "missing 'mask' part", "mask");
        return sessions_.set_inputs(req.matches[1], field_bytes(req, "mask"), field(req, "points"),
                                    field(req, "config"));
      });
    });
    server_.Post(R"(/sessions/([0-9a-f]+)/run)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return sessions_.run(req.matches[1]); });
    });
    server_.Post(R"(/sessions/([0-9a-f]+)/cancel)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return sessions_.cancel(req.matches[1]); });
    });
    server_.Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { return sessions_.get(req.matches[1]); });
    });
    server_.Post(R"(/sessions/([0-9a-f]+)/interpolate)",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   guarded(res, [&] { return sessions_.interpolate(req.matches[1], req.body); });
                 });
    server_.Get(R"(/sessions/([0-9a-f]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string id = req.matches[1];
      long after = -1;
      try {
        if (req.has_header("Last-Event-ID")) after = std::stol(req.get_header_value("Last-Event-ID"));
        if (req.has_param("after")) after = std::stol(req.get_param_value("after"));
      } catch (const std::exception&) {
        after = -1;
      }
      try {
        sessions_.get(id);
      } catch (const ServiceError& e) {
        res.status = e.status();
        res.set_content(e.body().dump(), "application/json");
        return;
      }
      auto cursor = std::make_shared<std::size_t>(0);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, id, after, cursor](std::size_t,
                                                                                      httplib::DataSink& sink) {
        auto [batch, ended] = sessions_.events(id, *cursor, std::chrono::milliseconds(250));
        *cursor += batch.size();
        for (const auto& ev : batch) {
          const std::string type = ev.value("type", "iteration");
          if (type == "iteration" && ev.value("k", -1) <= after) continue;
          std::string frame;
          if (type == "iteration") frame += "id: " + std::to_string(ev.value("k", 0)) + "\n";
          frame += "event: " + type + "\ndata: " + ev.dump() + "\n\n";
          if (!sink.write(frame.data(), frame.size())) return false;
        }
        if (ended) sink.done();
        return true;
      });
    });
    server_.Get(R"(/artifacts/([0-9a-f]{64}\.[a-z]{1,8}))", [this](const httplib::Request& req,
                                                                  httplib::Response& res) {
      const std::string ref = req.matches[1];
      auto bytes = sessions_.store().get(ref);
      if (!bytes) {
        res.status = 404;
        res.set_content(nlohmann::json({{"error", "NotFound"}, {"message", "no artifact " + ref}}).dump(),
                        "application/json");
        return;
      }
      res.set_content(std::string(bytes->begin(), bytes->end()), content_type(ref));
    });
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      send(res, {200, {{"status", "ok"}, {"backend", sessions_.options().backend}}});
    });
  }

  SessionService sessions_;
  httplib::Server server_;
};

}  // namespace dragtext
