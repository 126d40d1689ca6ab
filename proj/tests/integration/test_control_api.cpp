#include <gtest/gtest.h>

#include <httplib.h>
#include <json.hpp>

#include <thread>

#include "harness.hpp"
#include "raft/control_api.hpp"

using namespace raft;
using namespace raft::test;
using nlohmann::json;

namespace {

class ControlApiTest : public ::testing::Test {
 protected:
  void start(std::chrono::milliseconds verify_delay = std::chrono::milliseconds(0)) {
    std::filesystem::create_directories(dir_ / "devices");
    make_device(dir_ / "devices" / "a.img", 8 * 4096, 1);
    make_device(dir_ / "devices" / "b.img", 6 * 4096, 2);
    make_device(dir_ / "devices" / "c.img", 4 * 4096, 3);
    auto scfg = server_config(dir_ / "store");
    scfg.verify_delay = verify_delay;
    server_ = std::make_unique<AcquisitionServer>(scfg);

    ClientConfig cfg;
    cfg.passphrase_digest = passphrase_digest(kPassphrase);
    cfg.scan_root = dir_ / "devices";
    cfg.chunk_size = 4096;
    cfg.insecure_transport_ok = true;
    cfg.case_id = "case1";
    agent_ = std::make_unique<ClientAgent>(cfg, loopback_connector(*server_));
    api_ = std::make_unique<ControlApi>(*agent_, "127.0.0.1", 0);
    http_ = std::make_unique<httplib::Client>("127.0.0.1", api_->start());
    http_->set_read_timeout(10, 0);
  }

  void TearDown() override {
    if (api_) api_->stop();
    agent_.reset();
    if (server_) server_->shutdown();
  }

  std::string unlock() {
    auto res = http_->Post("/unlock", json{{"passphrase", kPassphrase}}.dump(), "application/json");
    EXPECT_EQ(res->status, 200);
    return json::parse(res->body).at("token");
  }

  httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

  json wait_for_job(const std::string& id) {
    for (int i = 0; i < 500; ++i) {
      auto res = http_->Get("/jobs/" + id);
      const auto body = json::parse(res->body);
      if (body.at("state") != "running") return body;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    ADD_FAILURE() << "job " << id << " did not finish";
    return {};
  }

  TempDir dir_;
  std::unique_ptr<AcquisitionServer> server_;
  std::unique_ptr<ClientAgent> agent_;
  std::unique_ptr<ControlApi> api_;
  std::unique_ptr<httplib::Client> http_;
};

std::vector<std::pair<std::uint64_t, json>> sse_frames(const std::string& body) {
  std::vector<std::pair<std::uint64_t, json>> out;
  std::size_t pos = 0;
  while (true) {
    const auto end = body.find("\n\n", pos);
    if (end == std::string::npos) break;
    const auto frame = body.substr(pos, end - pos);
    pos = end + 2;
    if (frame.rfind("id: ", 0) != 0) continue;
    const auto id = std::stoull(frame.substr(4));
    const auto data = frame.find("data: ");
    out.emplace_back(id, json::parse(frame.substr(data + 6)));
  }
  return out;
}

}  // namespace

TEST_F(ControlApiTest, DevicesListedWithoutToken) {
  start();
  auto res = http_->Get("/devices");
  ASSERT_EQ(res->status, 200);
  const auto body = json::parse(res->body);
  EXPECT_FALSE(body.at("unlocked"));
  ASSERT_EQ(body.at("devices").size(), 3u);
  EXPECT_EQ(body.at("devices")[0].at("device_id"), "a.img");
  EXPECT_EQ(body.at("devices")[0].at("total_bytes"), 8 * 4096);
  EXPECT_EQ(body.at("devices")[0].at("state"), "unselected");
}

TEST_F(ControlApiTest, MutatingCallsNeedToken) {
  start();
  EXPECT_EQ(http_->Post("/acquire", "{}", "application/json")->status, 401);
  EXPECT_EQ(http_->Post("/queue", R"({"priorities":{}})", "application/json")->status, 401);
  EXPECT_EQ(http_->Post("/acquire", bearer("forged"), "{}", "application/json")->status, 401);
  EXPECT_EQ(http_->Post("/abort/job-1")->status, 401);
}

TEST_F(ControlApiTest, UnlockLocksAfterRepeatedFailures) {
  start();
  for (int i = 0; i < 4; ++i) {
    auto res = http_->Post("/unlock", R"({"passphrase":"nope"})", "application/json");
    EXPECT_EQ(res->status, 401);
    EXPECT_EQ(json::parse(res->body).at("error"), "BadPassphrase");
  }
  EXPECT_EQ(http_->Post("/unlock", R"({"passphrase":"nope"})", "application/json")->status, 423);
  EXPECT_EQ(http_->Post("/unlock", json{{"passphrase", kPassphrase}}.dump(), "application/json")->status, 423);
  EXPECT_EQ(http_->Post("/unlock", "not json", "application/json")->status, 400);
}

TEST_F(ControlApiTest, QueueAndSelectedAcquisition) {
  start();
  const auto token = unlock();
  auto res = http_->Post("/queue", bearer(token), R"({"priorities":{"c.img":1,"a.img":2}})", "application/json");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("queue"), json::array({"c.img", "a.img"}));
  EXPECT_EQ(http_->Post("/queue", bearer(token), R"({"priorities":{"z.img":1}})", "application/json")->status, 404);
  EXPECT_EQ(http_->Post("/queue", bearer(token), R"({"priorities":{"a.img":1,"b.img":1}})", "application/json")->status,
            400);

  res = http_->Post("/acquire", bearer(token), R"({"mode":"selected"})", "application/json");
  ASSERT_EQ(res->status, 202);
  const std::string id = json::parse(res->body).at("job_id");
  const auto job = wait_for_job(id);
  EXPECT_EQ(job.at("state"), "done");
  EXPECT_EQ(job.at("devices"), json::array({"c.img", "a.img"}));
  ASSERT_EQ(job.at("results").size(), 2u);
  for (const auto& r : job.at("results")) EXPECT_EQ(r.at("verdict"), "verified");
  EXPECT_EQ(http_->Get("/jobs/job-404")->status, 404);
}

TEST_F(ControlApiTest, SecondAcquireWhileRunningConflicts) {
  start(std::chrono::milliseconds(50));
  const auto token = unlock();
  auto first = http_->Post("/acquire", bearer(token), R"({"mode":"all"})", "application/json");
  ASSERT_EQ(first->status, 202);
  EXPECT_EQ(http_->Post("/acquire", bearer(token), R"({"mode":"all"})", "application/json")->status, 409);
  const std::string id = json::parse(first->body).at("job_id");
  auto abort = http_->Post("/abort/" + id, bearer(token), "", "application/json");
  EXPECT_EQ(abort->status, 202);
  const auto job = wait_for_job(id);
  EXPECT_EQ(job.at("state"), "aborted");
  EXPECT_EQ(http_->Post("/abort/job-77", bearer(token), "", "application/json")->status, 404);
}

TEST_F(ControlApiTest, NothingQueuedConflicts) {
  start();
  const auto token = unlock();
  EXPECT_EQ(http_->Post("/acquire", bearer(token), R"({"mode":"selected"})", "application/json")->status, 409);
  EXPECT_EQ(http_->Post("/acquire", bearer(token), R"({"mode":"some"})", "application/json")->status, 400);
}

TEST_F(ControlApiTest, EventStreamReplaysFromLastEventId) {
  start();
  const auto token = unlock();
  auto res = http_->Post("/acquire", bearer(token), R"({"mode":"all"})", "application/json");
  wait_for_job(json::parse(res->body).at("job_id"));

  auto all = http_->Get("/events?follow=0");
  ASSERT_EQ(all->status, 200);
  EXPECT_EQ(all->get_header_value("Content-Type"), "text/event-stream");
  const auto frames = sse_frames(all->body);
  ASSERT_GT(frames.size(), 10u);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    EXPECT_EQ(frames[i].first, i + 1);
    EXPECT_EQ(frames[i].second.at("id"), i + 1);
  }
  std::set<std::string> kinds;
  for (const auto& [id, data] : frames) kinds.insert(data.at("kind"));
  for (const auto* k : {"device_listed", "prehash_started", "prehash_done", "chunk_sent", "chunk_acked", "job_finalized"}) {
    EXPECT_TRUE(kinds.count(k)) << k;
  }

  auto replay = http_->Get("/events?follow=0", {{"Last-Event-ID", "5"}});
  const auto tail = sse_frames(replay->body);
  ASSERT_EQ(tail.size(), frames.size() - 5);
  EXPECT_EQ(tail.front().first, 6u);
  EXPECT_EQ(sse_frames(http_->Get("/events?follow=0&last_event_id=7")->body).front().first, 8u);
}

TEST_F(ControlApiTest, FollowingStreamDeliversLiveEvents) {
  start(std::chrono::milliseconds(10));
  const auto token = unlock();
  const auto before = agent_->events().size();

  std::string received;
  std::atomic<bool> got_final{false};
  std::thread listener([&] {
    httplib::Client c("127.0.0.1", api_->port());
    c.set_read_timeout(10, 0);
    c.Get("/events", {{"Last-Event-ID", std::to_string(before)}}, [&](const char* data, std::size_t n) {
      received.append(data, n);
      std::size_t finished = 0;
      for (auto p = received.find("event: job_finalized"); p != std::string::npos;
           p = received.find("event: job_finalized", p + 1)) {
        ++finished;
      }
      if (finished == 3) {
        got_final = true;
        return false;
      }
      return true;
    });
  });
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http_->Post("/acquire", bearer(token), R"({"mode":"all"})", "application/json");
  listener.join();
  EXPECT_TRUE(got_final);
  const auto frames = sse_frames(received);
  ASSERT_FALSE(frames.empty());
  EXPECT_EQ(frames.front().first, before + 1);
}
