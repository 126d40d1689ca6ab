#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "raft/wire.hpp"

namespace raft {

struct ChannelProperties {
  bool confidential = false;
  bool integrity_protected = false;
  bool server_authenticated = false;

  bool secure() const { return confidential && integrity_protected && server_authenticated; }
};

/// Ordered, reliable byte stream. Single owner, but close() may be called
/// from another thread to unblock a pending read.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  /// Returns 0 at end of stream. Throws ConnectionLost.
  virtual std::size_t read_some(std::span<std::uint8_t> buf) = 0;
  /// Throws ConnectionLost.
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  virtual void close() = 0;
  virtual ChannelProperties properties() const = 0;

  /// False if the stream ended first.
  bool read_exact(std::span<std::uint8_t> buf);
};

/// Refuses plain channels unless the operator explicitly allowed them.
void require_secure_channel(const Endpoint& endpoint, bool insecure_override);

/// Reads one frame; nullopt on a clean end of stream between frames.
std::optional<wire::Message> read_message(Endpoint& endpoint);
void write_message(Endpoint& endpoint, const wire::Message& message);

/// In-process connected pair with FIFO delivery.
std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> loopback_pair(
    ChannelProperties properties = {});

struct LatencyModel {
  std::chrono::milliseconds fixed{0};
  std::chrono::milliseconds jitter{0};
};

struct FaultPlan {
  std::uint64_t seed = 0;
  double corrupt_chunk_probability = 0.0;
  std::optional<std::uint64_t> drop_connection_after_bytes;
  LatencyModel latency;
  std::optional<double> bandwidth_limit_bps;  // bits per second

  /// Throws InvalidArgument for probabilities outside [0, 1] or a non-positive bandwidth.
  void validate() const;
};

/// Counters shared between a fault-injecting endpoint and whoever inspects it.
struct FaultStats {
  std::atomic<std::uint64_t> chunk_frames{0};
  std::atomic<std::uint64_t> corrupted_chunks{0};
  std::atomic<std::uint64_t> bytes_written{0};
  std::atomic<bool> dropped{false};
};

/// Deterministic 64-bit generator and a platform-independent [0,1) draw.
class FaultRng {
 public:
  explicit FaultRng(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

/// Applies the plan to everything written through the returned endpoint:
/// flips one payload byte of a CHUNK_DATA frame with the plan's probability
/// (headers and seq field untouched), drops the connection after the byte
/// budget, and paces writes for latency and bandwidth.
std::unique_ptr<Endpoint> wrap_with_faults(std::unique_ptr<Endpoint> inner, const FaultPlan& plan,
                                           std::shared_ptr<FaultStats> stats = nullptr);

inline constexpr std::uint16_t kDefaultPort = 8472;

/// Throws ConnectFailed.
std::unique_ptr<Endpoint> stream_connect(const std::string& host, std::uint16_t port);

class StreamListener {
 public:
  /// Port 0 picks an ephemeral port. Throws BindFailed.
  StreamListener(const std::string& bind_address, std::uint16_t port);
  ~StreamListener();
  StreamListener(const StreamListener&) = delete;
  StreamListener& operator=(const StreamListener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Waits up to `timeout`; nullptr on timeout or after close().
  std::unique_ptr<Endpoint> accept(std::chrono::milliseconds timeout);
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> closed_{false};
};

}  // namespace raft
