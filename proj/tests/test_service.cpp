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

#include <thread>
#include <unistd.h>

#include "dragtext/service.hpp"
#include "scene_fixture.hpp"

namespace dragtext {
namespace {

using nlohmann::json;

struct Upload {
  std::string image;
  std::string mask;
  std::string points;
};

Upload toy_upload(std::uint64_t seed) {
  const ToyScene s = make_toy_scene(seed);
  const Bytes img = encode_png(s.image);
  const Bytes mask = encode_mask_png(s.mask);
  json pts = {{"pairs", {{{"handle", {s.handle.row, s.handle.col}}, {"target", {s.target.row, s.target.col}}}}}};
  return {std::string(img.begin(), img.end()), std::string(mask.begin(), mask.end()), pts.dump()};
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("dragtext_service_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    std::filesystem::remove_all(dir_);
    ServiceOptions o;
    o.data_dir = dir_;
    service_ = std::make_unique<HttpService>(o);
    port_ = service_->bind_to_any_port();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(60, 0);
  }

  void TearDown() override {
    service_->stop();
    thread_.join();
    std::filesystem::remove_all(dir_);
  }

  httplib::Result create(const std::string& image, const std::string& prompt) {
    httplib::MultipartFormDataItems items = {{"image", image, "image.png", "image/png"}, {"prompt", prompt, "", ""}};
    return client_->Post("/sessions", items);
  }

  httplib::Result set_inputs(const std::string& id, const Upload& u, const json& config) {
    httplib::MultipartFormDataItems items = {{"mask", u.mask, "mask.png", "image/png"},
                                             {"points", u.points, "", "application/json"},
                                             {"config", config.dump(), "", "application/json"}};
    return client_->Post("/sessions/" + id + "/inputs", items);
  }

  std::string ready_session(const Upload& u, const json& config) {
    auto r = create(u.image, kToyPrompt);
    EXPECT_EQ(r->status, 201);
    const std::string id = json::parse(r->body)["id"];
    auto s = set_inputs(id, u, config);
    EXPECT_EQ(s->status, 200) << s->body;
    return id;
  }

  /// Reads the whole SSE stream and returns its (event, data) frames.
  std::vector<std::pair<std::string, json>> stream(const std::string& path) {
    auto r = client_->Get(path);
    EXPECT_EQ(r->status, 200);
    std::vector<std::pair<std::string, json>> frames;
    std::istringstream in(r->body);
    std::string line, event;
    while (std::getline(in, line)) {
      if (line.rfind("event: ", 0) == 0) event = line.substr(7);
      if (line.rfind("data: ", 0) == 0) frames.emplace_back(event, json::parse(line.substr(6)));
    }
    return frames;
  }

  static inline int counter_ = 0;
  std::filesystem::path dir_;
  std::unique_ptr<HttpService> service_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(ServiceTest, CreateSession) {
  const Upload u = toy_upload(1);
  auto r = create(u.image, kToyPrompt);
  ASSERT_EQ(r->status, 201);
  const json j = json::parse(r->body);
  EXPECT_EQ(j["status"], "new");
  EXPECT_EQ(j["semantic_len"], 9);
  EXPECT_EQ(j["empty_prompt"], false);
  EXPECT_EQ(r->get_header_value("Access-Control-Allow-Origin"), "*");

  auto a = client_->Get("/artifacts/" + j["image"].get<std::string>());
  ASSERT_EQ(a->status, 200);
  EXPECT_EQ(a->body, u.image);
}

TEST_F(ServiceTest, EmptyPromptFlagged) {
  auto r = create(toy_upload(1).image, "");
  ASSERT_EQ(r->status, 201);
  const json j = json::parse(r->body);
  EXPECT_EQ(j["semantic_len"], 1);
  EXPECT_EQ(j["empty_prompt"], true);
}

TEST_F(ServiceTest, CorruptAndOversizeImages) {
  auto bad = create("not an image", "x");
  EXPECT_EQ(bad->status, 400);
  EXPECT_EQ(json::parse(bad->body)["error"], "BadImage");
  const Bytes big = encode_png(kMaxImageSide + 1, 1, Bytes(kMaxImageSide + 1, 0), true);
  auto large = create(std::string(big.begin(), big.end()), "x");
  EXPECT_EQ(large->status, 413);
}

TEST_F(ServiceTest, InputsDefaultsAndValidation) {
  const Upload u = toy_upload(2);
  const std::string id = json::parse(create(u.image, kToyPrompt)->body)["id"];

  auto r = set_inputs(id, u, json::object());
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_EQ(json::parse(r->body)["config"], to_json(DragConfig::defaults_for(Method::DragDiffusion)));

  auto g = set_inputs(id, u, {{"method", "gooddrag"}});
  ASSERT_EQ(g->status, 200);
  EXPECT_EQ(json::parse(g->body)["config"]["region_radius_pt"], 12);

  Upload off = u;
  off.points = json({{"pairs", {{{"handle", {2, 2}}, {"target", {40, 3}}}}}}).dump();
  auto o = set_inputs(id, off, json::object());
  EXPECT_EQ(o->status, 422);
  const json oe = json::parse(o->body);
  EXPECT_EQ(oe["error"], "ValidationFailed");
  EXPECT_EQ(oe["code"], "OutOfBoundsPoint");
  EXPECT_EQ(oe["field"], "points.pairs[0].target");

  auto k = set_inputs(id, u, {{"method", "gooddrag"}, {"max_iters", 75}});
  EXPECT_EQ(k->status, 422);
  EXPECT_EQ(json::parse(k->body)["field"], "config.gooddrag_B");

  auto unknown = set_inputs(id, u, {{"lambda_txt", 1}});
  EXPECT_EQ(unknown->status, 422);
  EXPECT_EQ(json::parse(unknown->body)["field"], "config.lambda_txt");

  auto missing = set_inputs("0123456789abcdef", u, json::object());
  EXPECT_EQ(missing->status, 404);
}

TEST_F(ServiceTest, RunStreamsOrderedEvents) {
  const Upload u = toy_upload(3);
  const std::string id = ready_session(u, {{"max_iters", 25}, {"preview_every", 5}});
  auto r = client_->Post("/sessions/" + id + "/run");
  ASSERT_EQ(r->status, 202);
  auto again = client_->Post("/sessions/" + id + "/run");
  EXPECT_EQ(again->status, 409);
  auto late = set_inputs(id, u, json::object());
  EXPECT_EQ(late->status, 409);

  const auto frames = stream("/sessions/" + id + "/events");
  ASSERT_GE(frames.size(), 1u);
  EXPECT_LE(frames.size(), 26u);
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    EXPECT_EQ(frames[i].first, "iteration");
    EXPECT_EQ(frames[i].second["k"], int(i));
    EXPECT_EQ(frames[i].second.contains("preview"), (i + 1) % 5 == 0);
    EXPECT_TRUE(frames[i].second.contains("L_text"));
  }
  ASSERT_EQ(frames.back().first, "done");
  const json result = frames.back().second["result"];
  EXPECT_EQ(result["iterations"], int(frames.size()) - 1);
  EXPECT_TRUE(result["metrics"].contains("md"));
  auto img = client_->Get("/artifacts/" + result["image"].get<std::string>());
  ASSERT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  auto traj = client_->Get("/artifacts/" + result["trajectory"].get<std::string>());
  ASSERT_EQ(traj->status, 200);
  EXPECT_EQ(std::count(traj->body.begin(), traj->body.end(), '\n'), long(frames.size()) - 1);

  const json state = json::parse(client_->Get("/sessions/" + id)->body);
  EXPECT_EQ(state["status"], "done");

  if (frames.size() > 3) {
    const auto resumed = stream("/sessions/" + id + "/events?after=1");
    ASSERT_EQ(resumed.size(), frames.size() - 2);
    EXPECT_EQ(resumed.front().second["k"], 2);
    httplib::Headers h = {{"Last-Event-ID", "2"}};
    auto r2 = client_->Get("/sessions/" + id + "/events", h);
    EXPECT_EQ(r2->body.find("id: 2\n"), std::string::npos);
    EXPECT_NE(r2->body.find("id: 3\n"), std::string::npos);
  }
}

TEST_F(ServiceTest, CancelKeepsPartialLog) {
  const Upload u = toy_upload(4);
  // Tracking never runs, so the handle never arrives and the loop lasts K
  // iterations unless cancelled.
  const std::string id = ready_session(u, {{"max_iters", 2000}, {"tracking_every", 100000}, {"preview_every", 0}});
  ASSERT_EQ(client_->Post("/sessions/" + id + "/run")->status, 202);
  auto [first, ended] = service_->sessions().events(id, 0, std::chrono::seconds(30));
  ASSERT_FALSE(first.empty());
  auto c = client_->Post("/sessions/" + id + "/cancel");
  ASSERT_EQ(c->status, 202);
  EXPECT_EQ(service_->sessions().wait(id), SessionStatus::Cancelled);
  EXPECT_EQ(client_->Post("/sessions/" + id + "/cancel")->status, 200);
  const auto frames = stream("/sessions/" + id + "/events");
  ASSERT_GE(frames.size(), 2u);
  EXPECT_EQ(frames.back().first, "cancelled");
  EXPECT_LT(frames.size(), 2001u);
  const std::string ref = frames.back().second["trajectory"];
  auto traj = client_->Get("/artifacts/" + ref);
  EXPECT_EQ(std::count(traj->body.begin(), traj->body.end(), '\n'), long(frames.size()) - 1);
  EXPECT_EQ(client_->Post("/sessions/" + id + "/interpolate", R"({"omegas":[0]})", "application/json")->status, 409);
}

TEST_F(ServiceTest, Interpolate) {
  const Upload u = toy_upload(5);
  const std::string id = ready_session(u, {{"max_iters", 10}});
  EXPECT_EQ(client_->Post("/sessions/" + id + "/interpolate", R"({"omegas":[0]})", "application/json")->status, 409);
  ASSERT_EQ(client_->Post("/sessions/" + id + "/run")->status, 202);
  ASSERT_EQ(service_->sessions().wait(id), SessionStatus::Done);

  const std::string body = R"({"omegas":[0,0.5,1,2,-1]})";
  auto r = client_->Post("/sessions/" + id + "/interpolate", body, "application/json");
  ASSERT_EQ(r->status, 200) << r->body;
  const json images = json::parse(r->body)["images"];
  ASSERT_EQ(images.size(), 5u);
  const json state = json::parse(client_->Get("/sessions/" + id)->body);
  EXPECT_EQ(images[2]["image"], state["result"]["image"]);
  auto again = client_->Post("/sessions/" + id + "/interpolate", body, "application/json");
  EXPECT_EQ(again->body, r->body);

  for (const char* bad : {R"({"omegas":[0,"x"]})", R"({"omegas":[1e999]})", R"({"omegas":[]})", "nope"}) {
    auto e = client_->Post("/sessions/" + id + "/interpolate", bad, "application/json");
    EXPECT_EQ(e->status, 422) << bad;
  }
}

TEST_F(ServiceTest, UnknownArtifactAndSession) {
  EXPECT_EQ(client_->Get("/artifacts/" + std::string(64, 'a') + ".png")->status, 404);
  EXPECT_EQ(client_->Get("/sessions/0123456789abcdef")->status, 404);
  EXPECT_EQ(client_->Get("/sessions/0123456789abcdef/events")->status, 404);
  EXPECT_EQ(client_->Post("/sessions/0123456789abcdef/run")->status, 404);
}

TEST_F(ServiceTest, RunFailureReported) {
  const Upload u = toy_upload(6);
  const std::string id = ready_session(u, {{"method", "dragnoise"}, {"backend", "adapter:content-only"},
                                           {"max_iters", 5}});
  ASSERT_EQ(client_->Post("/sessions/" + id + "/run")->status, 202);
  EXPECT_EQ(service_->sessions().wait(id), SessionStatus::Failed);
  const auto frames = stream("/sessions/" + id + "/events");
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(frames[0].first, "failed");
  EXPECT_NE(frames[0].second["error"].get<std::string>().find("BackendCapabilityError"), std::string::npos);
}

}  // namespace
}  // namespace dragtext

int main(int argc, char** argv) {
  dragtext::AdapterRegistry::instance().add(
      "content-only", [](std::uint64_t seed) { return std::make_shared<dragtext::testing::ContentOnlyBackend>(seed); });
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
