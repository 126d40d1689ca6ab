#include "raft/timing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "raft/transport.hpp"

namespace raft {

namespace fs = std::filesystem;

double estimate_total_time(const TimingInputs& in) {
  const std::pair<const char*, double> fields[] = {
      {"H", in.image_bits}, {"B", in.bandwidth_bps}, {"C", in.chunk_bits}, {"V", in.verify_bps}};
  for (const auto& [name, value] : fields) {
    if (!(value > 0.0) || !std::isfinite(value)) {
      throw Error(ErrorCode::NonPositiveInput, std::string(name) + " must be a positive finite number");
    }
  }
  return in.image_bits / in.bandwidth_bps + in.chunk_bits / in.verify_bps;
}

double estimate_with_retransmissions(const TimingInputs& in, double corrupt_probability, double retries) {
  estimate_total_time(in);
  if (!(corrupt_probability >= 0.0 && corrupt_probability <= 1.0) || !(retries >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "probability must lie in [0, 1] and retries must be >= 0");
  }
  return in.image_bits / in.bandwidth_bps * (1.0 + corrupt_probability * retries) + in.chunk_bits / in.verify_bps;
}

// ---------------------------------------------------------------- bench

const BenchSummary* BenchReport::summary(HashAlgorithm alg) const {
  for (const auto& s : summaries) {
    if (s.algorithm == alg) return &s;
  }
  return nullptr;
}

BenchReport bench_hash(const BenchConfig& config) {
  if (config.sizes.empty() || config.algorithms.empty() || config.repeats == 0) {
    throw Error(ErrorCode::InvalidArgument, "bench needs at least one size, one algorithm and one repeat");
  }
  std::error_code ec;
  fs::create_directories(config.work_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, config.work_dir.string() + ": " + ec.message());

  BenchReport report;
  for (const auto size : config.sizes) {
    if (size == 0) throw Error(ErrorCode::InvalidArgument, "bench size must be positive");
    const auto path = config.work_dir / ("bench-" + std::to_string(size) + ".zero");
    make_zero_file(path, size);
    for (const auto alg : config.algorithms) {
      double best = 0;
      for (unsigned r = 0; r < config.repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        digest_file(path, alg);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        best = r == 0 ? secs : std::min(best, secs);
      }
      report.samples.push_back({alg, size, best, best * 1073741824.0 / static_cast<double>(size)});
    }
    fs::remove(path, ec);
  }
  for (const auto alg : config.algorithms) {
    std::vector<double> values;
    for (const auto& s : report.samples) {
      if (s.algorithm == alg) values.push_back(s.normalized_seconds);
    }
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double dev = 0;
    for (double v : values) dev = std::max(dev, std::abs(v - mean) / mean);
    report.summaries.push_back({alg, mean, dev});
  }
  return report;
}

std::string format_bench_tsv(const BenchReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  out << "algorithm\tsize_bytes\tseconds\tseconds_per_gib\n";
  for (const auto& s : report.samples) {
    out << algorithm_name(s.algorithm) << '\t' << s.size_bytes << '\t' << s.seconds << '\t'
        << s.normalized_seconds << '\n';
  }
  for (const auto& s : report.summaries) {
    out << "# " << algorithm_name(s.algorithm) << " mean_seconds_per_gib " << s.mean_normalized
        << " max_relative_deviation " << s.max_relative_deviation << '\n';
  }
  return out.str();
}

std::string format_bench_json(const BenchReport& report) {
  nlohmann::json j;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : report.samples) {
    j["samples"].push_back({{"algorithm", algorithm_name(s.algorithm)},
                            {"size_bytes", s.size_bytes},
                            {"seconds", s.seconds},
                            {"seconds_per_gib", s.normalized_seconds}});
  }
  j["summaries"] = nlohmann::json::array();
  for (const auto& s : report.summaries) {
    j["summaries"].push_back({{"algorithm", algorithm_name(s.algorithm)},
                              {"mean_seconds_per_gib", s.mean_normalized},
                              {"max_relative_deviation", s.max_relative_deviation}});
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- overhead

OverheadReport measure_overhead(const Trace& trace) {
  std::optional<double> start, end, last_received, final_hash;
  const TraceEvent* last_chunk = nullptr;
  const TraceEvent* last_verify = nullptr;
  const TraceEvent* last_append = nullptr;
  for (const auto& ev : trace) {
    switch (ev.kind) {
      case TraceKind::JobAccepted:
        if (!start) start = ev.start;
        break;
      case TraceKind::ChunkReceived:
        if (!last_received || ev.end >= *last_received) {
          last_received = ev.end;
          last_chunk = &ev;
        }
        break;
      case TraceKind::ChunkVerify:
        if (!last_verify || ev.end >= last_verify->end) last_verify = &ev;
        break;
      case TraceKind::ChunkAppend:
        if (!last_append || ev.end >= last_append->end) last_append = &ev;
        break;
      case TraceKind::FinalVerify:
        final_hash = ev.end - ev.start;
        break;
      case TraceKind::FinalResult:
        end = ev.start;
        break;
      case TraceKind::Nak:
        break;
    }
  }
  if (!start) throw Error(ErrorCode::IncompleteTrace, "no job start in trace");
  if (!end) throw Error(ErrorCode::IncompleteTrace, "no final result in trace");
  if (!last_chunk || !last_append) throw Error(ErrorCode::IncompleteTrace, "no chunk activity in trace");

  OverheadReport r;
  r.total_seconds = *end - *start;
  r.transfer_seconds = *last_received - *start;
  r.trailing_verify_seconds = last_verify ? last_verify->end - last_verify->start : 0.0;
  r.recombination_seconds = last_append->end - last_append->start;
  r.final_hash_seconds = final_hash.value_or(0.0);
  r.overhead_seconds = r.final_hash_seconds + r.recombination_seconds;
  r.overhead_percent = r.total_seconds > 0 ? 100.0 * r.overhead_seconds / r.total_seconds : 0.0;
  return r;
}

// ---------------------------------------------------------------- simulator

std::uint64_t SimulationResult::nak_count() const {
  std::uint64_t n = 0;
  for (const auto& c : connections) n += c.nacked.size();
  return n;
}

namespace {

struct ToClient {
  wire::Message message;
};
struct ToServer {
  wire::ServerEvent event;
  std::optional<std::pair<double, double>> verify_span;
};
struct Reconnect {};

struct SimEvent {
  double time;
  std::uint64_t order;
  std::size_t connection;
  std::variant<ToClient, ToServer, Reconnect> what;
};

struct Later {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    return a.time != b.time ? a.time > b.time : a.order > b.order;
  }
};

class Simulator {
 public:
  explicit Simulator(const SimulationConfig& config) : cfg_(config) {
    if (cfg_.chunk_count == 0 || cfg_.chunk_bytes == 0) {
      throw Error(ErrorCode::InvalidArgument, "simulation needs at least one non-empty chunk");
    }
    FaultRng rng(cfg_.seed);
    source_.resize(cfg_.chunk_count * cfg_.chunk_bytes);
    for (auto& b : source_) b = static_cast<std::uint8_t>(rng.next() >> 56);
    job_.case_id = "sim";
    job_.device.device_id = "sim0";
    job_.device.label = "sim0";
    job_.device.total_bytes = source_.size();
    job_.chunk_size = cfg_.chunk_bytes;
    job_.chunk_digest_algorithm = cfg_.chunk_digest_algorithm;
    job_.whole_image_digest = digest_bytes(HashAlgorithm::SHA256, source_);
    secret_ = digest_text(HashAlgorithm::SHA256, "simulation").bytes();
  }

  SimulationResult run() {
    start_connection(0.0);
    std::uint64_t guard = 0;
    while (!queue_.empty()) {
      if (++guard > 50'000'000) throw Error(ErrorCode::InvalidArgument, "simulation did not settle");
      auto ev = queue_.top();
      queue_.pop();
      now_ = ev.time;
      std::visit(
          [&](auto& w) {
            using T = std::decay_t<decltype(w)>;
            if constexpr (std::is_same_v<T, ToClient>) {
              on_client(ev.connection, std::move(w.message));
            } else if constexpr (std::is_same_v<T, ToServer>) {
              on_server(ev.connection, w);
            } else {
              start_connection(now_);
            }
          },
          ev.what);
    }
    result_.appended = image_.size() / cfg_.chunk_bytes;
    return std::move(result_);
  }

 private:
  struct Connection {
    wire::ClientSessionState client;
    wire::ServerSessionState server;
    bool alive = true;
    bool server_ended = false;
    bool reconnect_after_server = false;
    double link_free = 0;
    double server_clock = 0;
    double verifier_free = 0;
    std::uint64_t chunk_frames = 0;
  };

  void push(double t, std::size_t conn, std::variant<ToClient, ToServer, Reconnect> what) {
    queue_.push({t, order_++, conn, std::move(what)});
  }

  void start_connection(double t) {
    Connection c;
    c.client = wire::ClientSessionState::initial(job_, secret_, cfg_.retry_limit, cfg_.window);
    c.client.client_nonce = wire::Bytes(16, 0x11);
    c.server = wire::ServerSessionState::initial(wire::Bytes(16, 0x22), secret_, cfg_.window);
    c.link_free = t;
    c.server_clock = t;
    c.verifier_free = t;
    conns_.push_back(std::move(c));
    result_.connections.emplace_back();
    client_step(conns_.size() - 1, wire::client_event::Start{});
  }

  void client_step(std::size_t id, const wire::ClientEvent& first) {
    std::deque<wire::ClientEvent> local{first};
    while (!local.empty()) {
      auto& c = conns_[id];
      auto step = wire::client_step(std::move(c.client), local.front());
      local.pop_front();
      c.client = std::move(step.state);
      for (auto& action : step.actions) {
        if (const auto* req = std::get_if<wire::RequestChunk>(&action)) {
          const auto offset = req->seq * cfg_.chunk_bytes;
          auto bytes = std::make_shared<const wire::Bytes>(source_.begin() + static_cast<std::ptrdiff_t>(offset),
                                                           source_.begin() + static_cast<std::ptrdiff_t>(offset + cfg_.chunk_bytes));
          auto digest = digest_bytes(cfg_.chunk_digest_algorithm, *bytes);
          local.emplace_back(wire::client_event::ChunkReady{req->seq, std::move(bytes), std::move(digest)});
        } else {
          send_uplink(id, std::get<wire::Message>(action));
        }
      }
    }
    const auto& c = conns_[id];
    if (c.client.phase == wire::ClientPhase::Done || c.client.phase == wire::ClientPhase::Failed) {
      result_.total_seconds = now_;
      result_.client_phase = c.client.phase;
      result_.client_error = c.client.error;
      result_.verified = c.client.phase == wire::ClientPhase::Done;
    }
  }

  void send_uplink(std::size_t id, wire::Message msg) {
    auto& c = conns_[id];
    if (!c.alive) return;
    double cost = 0;
    if (auto* data = std::get_if<wire::ChunkData>(&msg)) {
      cost = cfg_.transfer_seconds;
      result_.connections[id].sent.push_back(data->seq);
      const auto attempt = c.client.attempts[data->seq];
      if (cfg_.corrupt && cfg_.corrupt(data->seq, attempt)) {
        auto copy = std::make_shared<wire::Bytes>(*data->payload);
        (*copy)[copy->size() / 2] ^= 0xFF;
        data->payload = std::move(copy);
        ++result_.corrupted;
      }
    }
    const double start = std::max(now_, c.link_free);
    c.link_free = start + cost;
    push(c.link_free, id, ToServer{wire::server_event::Inbound{std::move(msg)}, std::nullopt});
  }

  void on_client(std::size_t id, wire::Message msg) {
    auto& c = conns_[id];
    if (!c.alive) return;
    auto& trace = result_.connections[id];
    if (const auto* accept = std::get_if<wire::JobAccept>(&msg)) trace.resume_from = accept->resume_from_seq;
    if (const auto* ack = std::get_if<wire::Ack>(&msg)) trace.acked.push_back(ack->seq);
    if (const auto* nak = std::get_if<wire::Nak>(&msg)) trace.nacked.push_back(nak->seq);
    client_step(id, wire::client_event::Inbound{std::move(msg)});
  }

  void on_server(std::size_t id, const ToServer& in) {
    auto& c = conns_[id];
    if (c.server_ended) return;
    const bool inbound = std::holds_alternative<wire::server_event::Inbound>(in.event);
    if (inbound && !c.alive) return;

    c.server_clock = std::max(c.server_clock, now_);
    if (const auto* ib = std::get_if<wire::server_event::Inbound>(&in.event)) {
      if (const auto* data = std::get_if<wire::ChunkData>(&ib->message)) {
        result_.trace.push_back({TraceKind::ChunkReceived, data->seq, now_, now_});
      }
    }
    if (const auto* done = std::get_if<wire::server_event::VerifyDone>(&in.event); done && in.verify_span) {
      result_.trace.push_back({TraceKind::ChunkVerify, done->seq, in.verify_span->first, in.verify_span->second});
    }

    std::deque<wire::ServerEvent> local{in.event};
    while (!local.empty()) {
      auto step = wire::server_step(std::move(conns_[id].server), local.front());
      local.pop_front();
      auto& cc = conns_[id];
      cc.server = std::move(step.state);
      for (auto& cmd : step.commands) {
        if (auto follow = execute(id, cmd)) local.push_back(std::move(*follow));
      }
      for (auto& m : step.messages) {
        if (std::holds_alternative<wire::FinalResult>(m)) {
          result_.trace.push_back({TraceKind::FinalResult, std::nullopt, cc.server_clock, cc.server_clock});
        }
        if (cc.alive) push(cc.server_clock + cfg_.downlink_seconds, id, ToClient{std::move(m)});
      }
    }

    auto& cc = conns_[id];
    if (const auto* ib = std::get_if<wire::server_event::Inbound>(&in.event);
        ib && std::holds_alternative<wire::ChunkData>(ib->message) && cc.alive) {
      ++cc.chunk_frames;
      if (id == 0 && cfg_.drop_after_chunk_frames && cc.chunk_frames >= *cfg_.drop_after_chunk_frames) drop(id);
    }
    result_.server_phase = cc.server.phase;
    if (cc.server.phase == wire::ServerPhase::Done || cc.server.phase == wire::ServerPhase::Failed) {
      cc.server_ended = true;
      if (cc.reconnect_after_server) push(cc.server_clock, id, Reconnect{});
    }
  }

  void drop(std::size_t id) {
    auto& c = conns_[id];
    c.alive = false;
    c.client.phase = wire::ClientPhase::Failed;
    c.client.error = ErrorCode::ConnectionLost;
    const bool retry = conns_.size() <= cfg_.max_reconnects;
    c.reconnect_after_server = retry;
    if (!retry) {
      result_.client_phase = wire::ClientPhase::Failed;
      result_.client_error = ErrorCode::ConnectionLost;
      result_.total_seconds = now_;
    }
    push(now_, id, ToServer{wire::server_event::Disconnected{}, std::nullopt});
  }

  std::optional<wire::ServerEvent> execute(std::size_t id, const wire::ServerCommand& cmd) {
    auto& c = conns_[id];
    return std::visit(
        [&](const auto& k) -> std::optional<wire::ServerEvent> {
          using T = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<T, wire::command::OpenJob>) {
            std::optional<wire::PriorSession> prior;
            if (!image_.empty()) {
              prior = wire::PriorSession{"sim-prior", job_.whole_image_digest, cfg_.chunk_bytes,
                                         image_.size() / cfg_.chunk_bytes};
            }
            const auto from = wire::resume_point(k.job, prior);
            result_.trace.push_back({TraceKind::JobAccepted, std::nullopt, c.server_clock, c.server_clock});
            return wire::server_event::JobOpened{"sim-session", from};
          } else if constexpr (std::is_same_v<T, wire::command::Verify>) {
            const double start = std::max(c.server_clock, c.verifier_free);
            const double end = start + cfg_.verify_seconds;
            c.verifier_free = end;
            const bool ok = digest_bytes(k.claimed.algorithm(), *k.payload) == k.claimed;
            push(end, id, ToServer{wire::server_event::VerifyDone{k.seq, ok}, std::make_pair(start, end)});
          } else if constexpr (std::is_same_v<T, wire::command::Append>) {
            if (k.seq * cfg_.chunk_bytes != image_.size()) {
              throw Error(ErrorCode::OutOfOrderAppend, "simulated append out of order");
            }
            image_.insert(image_.end(), k.payload->begin(), k.payload->end());
            const double start = c.server_clock;
            c.server_clock += cfg_.append_seconds;
            result_.trace.push_back({TraceKind::ChunkAppend, k.seq, start, c.server_clock});
          } else if constexpr (std::is_same_v<T, wire::command::Discard>) {
            result_.trace.push_back({TraceKind::Nak, k.seq, c.server_clock, c.server_clock});
          } else if constexpr (std::is_same_v<T, wire::command::FinalVerify>) {
            const double start = c.server_clock;
            c.server_clock += cfg_.final_verify_seconds;
            result_.trace.push_back({TraceKind::FinalVerify, std::nullopt, start, c.server_clock});
            auto recomputed = digest_bytes(job_.whole_image_digest.algorithm(), image_);
            const bool ok = recomputed == job_.whole_image_digest;
            return wire::server_event::FinalDone{ok, std::move(recomputed)};
          }
          return std::nullopt;
        },
        cmd);
  }

  SimulationConfig cfg_;
  wire::Bytes source_;
  wire::Bytes image_;
  wire::JobParams job_;
  wire::Bytes secret_;
  std::vector<Connection> conns_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  std::uint64_t order_ = 0;
  double now_ = 0;
  SimulationResult result_;
};

}  // namespace

SimulationResult simulate_pipeline(const SimulationConfig& config) { return Simulator(config).run(); }

}  // namespace raft
