#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <thread>

#include "raft/client.hpp"

namespace raft {

/// JSON-over-HTTP control surface of a ClientAgent, for the operator console.
/// Mutating endpoints need `Authorization: Bearer <token>` from POST /unlock.
class ControlApi {
 public:
  explicit ControlApi(ClientAgent& agent, std::string bind_address = "127.0.0.1", std::uint16_t port = 0);
  ~ControlApi();
  ControlApi(const ControlApi&) = delete;
  ControlApi& operator=(const ControlApi&) = delete;

  /// Binds and serves on a background thread; returns the port. Throws BindFailed.
  std::uint16_t start();
  void stop();
  std::uint16_t port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string bind_address_;
  std::uint16_t port_;
  std::thread thread_;
};

/// Serialized forms shared with tests and the console.
std::string progress_event_json(const ProgressEvent& event);
std::string job_status_json(const JobStatus& status);

}  // namespace raft
