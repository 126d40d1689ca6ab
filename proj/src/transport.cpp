#include "raft/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>
#include <vector>

#include "raft/error.hpp"

namespace raft {

bool Endpoint::read_exact(std::span<std::uint8_t> buf) {
  std::size_t done = 0;
  while (done < buf.size()) {
    const auto n = read_some(buf.subspan(done));
    if (n == 0) {
      if (done == 0) return false;
      throw Error(ErrorCode::ConnectionLost, "stream ended mid-frame");
    }
    done += n;
  }
  return true;
}

void require_secure_channel(const Endpoint& endpoint, bool insecure_override) {
  if (endpoint.properties().secure() || insecure_override) return;
  throw Error(ErrorCode::InsecureTransport,
              "channel is not confidential, integrity-protected and server-authenticated; "
              "pass the insecure override to use it anyway");
}

std::optional<wire::Message> read_message(Endpoint& endpoint) {
  std::uint8_t header[wire::kHeaderSize];
  if (!endpoint.read_exact(header)) return std::nullopt;
  const auto h = wire::decode_header(header);
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(h.payload_length));
  if (!payload.empty() && !endpoint.read_exact(payload)) {
    throw Error(ErrorCode::ConnectionLost, "stream ended mid-frame");
  }
  return wire::decode_payload(h.type, payload);
}

void write_message(Endpoint& endpoint, const wire::Message& message) {
  endpoint.write_all(wire::encode_frame(message));
}

// ---------------------------------------------------------------- loopback

namespace {

class Pipe {
 public:
  static constexpr std::size_t kCapacity = 4 << 20;

  std::size_t read(std::span<std::uint8_t> buf) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return buffered_ > 0 || closed_; });
    if (buffered_ == 0) return 0;
    std::size_t done = 0;
    while (done < buf.size() && !blocks_.empty()) {
      auto& front = blocks_.front();
      const auto take = std::min(buf.size() - done, front.size() - head_);
      std::memcpy(buf.data() + done, front.data() + head_, take);
      done += take;
      head_ += take;
      if (head_ == front.size()) {
        blocks_.pop_front();
        head_ = 0;
      }
    }
    buffered_ -= done;
    cv_.notify_all();
    return done;
  }

  void write(std::span<const std::uint8_t> bytes) {
    std::unique_lock lock(mu_);
    while (!bytes.empty()) {
      cv_.wait(lock, [this] { return buffered_ < kCapacity || closed_; });
      if (closed_) throw Error(ErrorCode::ConnectionLost, "loopback peer closed");
      const auto take = std::min(bytes.size(), kCapacity - buffered_);
      blocks_.emplace_back(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(take));
      buffered_ += take;
      bytes = bytes.subspan(take);
      cv_.notify_all();
    }
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> blocks_;
  std::size_t head_ = 0;
  std::size_t buffered_ = 0;
  bool closed_ = false;
};

class LoopbackEndpoint final : public Endpoint {
 public:
  LoopbackEndpoint(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out, ChannelProperties props)
      : in_(std::move(in)), out_(std::move(out)), props_(props) {}
  ~LoopbackEndpoint() override { close(); }

  std::size_t read_some(std::span<std::uint8_t> buf) override { return in_->read(buf); }
  void write_all(std::span<const std::uint8_t> bytes) override { out_->write(bytes); }
  void close() override {
    in_->close();
    out_->close();
  }
  ChannelProperties properties() const override { return props_; }

 private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
  ChannelProperties props_;
};

}  // namespace

std::pair<std::unique_ptr<Endpoint>, std::unique_ptr<Endpoint>> loopback_pair(ChannelProperties properties) {
  auto a_to_b = std::make_shared<Pipe>();
  auto b_to_a = std::make_shared<Pipe>();
  return {std::make_unique<LoopbackEndpoint>(b_to_a, a_to_b, properties),
          std::make_unique<LoopbackEndpoint>(a_to_b, b_to_a, properties)};
}

// ---------------------------------------------------------------- faults

void FaultPlan::validate() const {
  if (!(corrupt_chunk_probability >= 0.0 && corrupt_chunk_probability <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "corrupt_chunk_probability must lie in [0, 1]");
  }
  if (bandwidth_limit_bps && !(*bandwidth_limit_bps > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bandwidth limit must be positive");
  }
  if (latency.fixed.count() < 0 || latency.jitter.count() < 0) {
    throw Error(ErrorCode::InvalidArgument, "latency must be non-negative");
  }
}

std::uint64_t FaultRng::next() {
  // splitmix64
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

class FaultInjectingEndpoint final : public Endpoint {
 public:
  FaultInjectingEndpoint(std::unique_ptr<Endpoint> inner, FaultPlan plan, std::shared_ptr<FaultStats> stats)
      : inner_(std::move(inner)), plan_(std::move(plan)), stats_(std::move(stats)), rng_(plan_.seed) {}

  std::size_t read_some(std::span<std::uint8_t> buf) override { return inner_->read_some(buf); }

  void write_all(std::span<const std::uint8_t> bytes) override {
    if (stats_->dropped) throw Error(ErrorCode::ConnectionLost, "connection dropped by fault plan");
    apply_latency();
    std::vector<std::uint8_t> data(bytes.begin(), bytes.end());
    corrupt_in_place(data);

    std::span<const std::uint8_t> rest(data);
    if (plan_.drop_connection_after_bytes) {
      const auto budget = *plan_.drop_connection_after_bytes;
      const auto written = stats_->bytes_written.load();
      if (written + rest.size() > budget) {
        send(rest.first(static_cast<std::size_t>(budget - written)));
        stats_->dropped = true;
        inner_->close();
        throw Error(ErrorCode::ConnectionLost, "connection dropped by fault plan after " +
                                                   std::to_string(budget) + " bytes");
      }
    }
    send(rest);
  }

  void close() override { inner_->close(); }
  ChannelProperties properties() const override { return inner_->properties(); }

 private:
  static constexpr std::size_t kPacingSlice = 64 * 1024;

  void apply_latency() {
    auto delay = plan_.latency.fixed;
    if (plan_.latency.jitter.count() > 0) {
      delay += std::chrono::milliseconds(
          static_cast<std::int64_t>(rng_.uniform() * static_cast<double>(plan_.latency.jitter.count())));
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
  }

  void send(std::span<const std::uint8_t> bytes) {
    if (!plan_.bandwidth_limit_bps) {
      inner_->write_all(bytes);
      stats_->bytes_written += bytes.size();
      return;
    }
    if (!pacing_started_) {
      pacing_start_ = std::chrono::steady_clock::now();
      pacing_started_ = true;
    }
    while (!bytes.empty()) {
      const auto slice = bytes.first(std::min(bytes.size(), kPacingSlice));
      inner_->write_all(slice);
      stats_->bytes_written += slice.size();
      paced_bytes_ += slice.size();
      const double seconds = static_cast<double>(paced_bytes_) * 8.0 / *plan_.bandwidth_limit_bps;
      std::this_thread::sleep_until(pacing_start_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                        std::chrono::duration<double>(seconds)));
      bytes = bytes.subspan(slice.size());
    }
  }

  // Tracks frame boundaries across writes; only CHUNK_DATA payload bytes
  // past the 8-byte seq field are ever modified.
  void corrupt_in_place(std::vector<std::uint8_t>& data) {
    std::size_t i = 0;
    while (i < data.size()) {
      if (header_fill_ < wire::kHeaderSize) {
        const auto take = std::min(wire::kHeaderSize - header_fill_, data.size() - i);
        std::memcpy(header_ + header_fill_, data.data() + i, take);
        header_fill_ += take;
        i += take;
        if (header_fill_ == wire::kHeaderSize) begin_frame();
        continue;
      }
      const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(payload_left_, data.size() - i));
      if (corrupt_at_ && *corrupt_at_ >= payload_pos_ && *corrupt_at_ < payload_pos_ + take) {
        data[i + static_cast<std::size_t>(*corrupt_at_ - payload_pos_)] ^= corrupt_mask_;
        corrupt_at_.reset();
      }
      payload_pos_ += take;
      payload_left_ -= take;
      i += take;
      if (payload_left_ == 0) header_fill_ = 0;
    }
  }

  void begin_frame() {
    const auto h = wire::decode_header(std::span<const std::uint8_t>(header_, wire::kHeaderSize));
    payload_left_ = h.payload_length;
    payload_pos_ = 0;
    corrupt_at_.reset();
    if (h.type == wire::MessageType::ChunkData && h.payload_length > 8) {
      ++stats_->chunk_frames;
      const double draw = rng_.uniform();
      const auto position = rng_.next();
      const auto mask = static_cast<std::uint8_t>(rng_.next() % 255 + 1);
      if (draw < plan_.corrupt_chunk_probability) {
        corrupt_at_ = 8 + position % (h.payload_length - 8);
        corrupt_mask_ = mask;
        ++stats_->corrupted_chunks;
      }
    }
    if (payload_left_ == 0) header_fill_ = 0;
  }

  std::unique_ptr<Endpoint> inner_;
  FaultPlan plan_;
  std::shared_ptr<FaultStats> stats_;
  FaultRng rng_;

  std::uint8_t header_[wire::kHeaderSize]{};
  std::size_t header_fill_ = 0;
  std::uint64_t payload_left_ = 0;
  std::uint64_t payload_pos_ = 0;
  std::optional<std::uint64_t> corrupt_at_;
  std::uint8_t corrupt_mask_ = 0xff;

  bool pacing_started_ = false;
  std::chrono::steady_clock::time_point pacing_start_;
  std::uint64_t paced_bytes_ = 0;
};

}  // namespace

std::unique_ptr<Endpoint> wrap_with_faults(std::unique_ptr<Endpoint> inner, const FaultPlan& plan,
                                           std::shared_ptr<FaultStats> stats) {
  plan.validate();
  if (!stats) stats = std::make_shared<FaultStats>();
  return std::make_unique<FaultInjectingEndpoint>(std::move(inner), plan, std::move(stats));
}

// ---------------------------------------------------------------- sockets

namespace {

class SocketEndpoint final : public Endpoint {
 public:
  explicit SocketEndpoint(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~SocketEndpoint() override {
    close();
    ::close(fd_);
  }

  std::size_t read_some(std::span<std::uint8_t> buf) override {
    while (true) {
      const ssize_t n = ::recv(fd_, buf.data(), buf.size(), 0);
      if (n >= 0) return static_cast<std::size_t>(n);
      if (errno == EINTR) continue;
      throw Error(ErrorCode::ConnectionLost, std::strerror(errno));
    }
  }

  void write_all(std::span<const std::uint8_t> bytes) override {
    while (!bytes.empty()) {
      const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::ConnectionLost, std::strerror(errno));
      }
      bytes = bytes.subspan(static_cast<std::size_t>(n));
    }
  }

  void close() override {
    if (!shut_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

  ChannelProperties properties() const override { return {}; }

 private:
  int fd_;
  std::atomic<bool> shut_{false};
};

}  // namespace

std::unique_ptr<Endpoint> stream_connect(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::ConnectFailed, host + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      return std::make_unique<SocketEndpoint>(fd);
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::ConnectFailed, host + ":" + service + ": " + last_error);
}

StreamListener::StreamListener(const std::string& bind_address, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (const int rc = ::getaddrinfo(bind_address.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::BindFailed, bind_address + ": " + ::gai_strerror(rc));
  }
  std::string last_error = "no addresses";
  for (auto* ai = res; ai != nullptr && fd_ < 0; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
      fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw Error(ErrorCode::BindFailed, bind_address + ":" + service + ": " + last_error);

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  if (addr.ss_family == AF_INET) {
    port_ = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  } else {
    port_ = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);
  }
}

StreamListener::~StreamListener() {
  close();
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<Endpoint> StreamListener::accept(std::chrono::milliseconds timeout) {
  if (closed_) return nullptr;
  pollfd pfd{fd_, POLLIN, 0};
  const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (rc <= 0 || closed_) return nullptr;
  const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) return nullptr;
  return std::make_unique<SocketEndpoint>(fd);
}

void StreamListener::close() {
  if (!closed_.exchange(true) && fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

}  // namespace raft
