#include "raft/wire.hpp"

#include <openssl/crypto.h>

#include <algorithm>
#include <cstring>

#include "raft/hashing.hpp"

namespace raft::wire {

std::string_view message_type_name(MessageType type) {
  switch (type) {
    case MessageType::Hello: return "HELLO";
    case MessageType::Auth: return "AUTH";
    case MessageType::AuthResult: return "AUTH_RESULT";
    case MessageType::JobOpen: return "JOB_OPEN";
    case MessageType::JobAccept: return "JOB_ACCEPT";
    case MessageType::ChunkData: return "CHUNK_DATA";
    case MessageType::ChunkDigest: return "CHUNK_DIGEST";
    case MessageType::Ack: return "ACK";
    case MessageType::Nak: return "NAK";
    case MessageType::JobFinalize: return "JOB_FINALIZE";
    case MessageType::FinalResult: return "FINAL_RESULT";
    case MessageType::Abort: return "ABORT";
  }
  return "UNKNOWN";
}

MessageType type_of(const Message& m) {
  // variant index order mirrors the wire type codes
  return static_cast<MessageType>(m.index() + 1);
}

std::string describe(const Message& m) {
  std::string out(message_type_name(type_of(m)));
  std::visit(
      [&out](const auto& msg) {
        using T = std::decay_t<decltype(msg)>;
        if constexpr (std::is_same_v<T, ChunkData>) {
          out += " seq=" + std::to_string(msg.seq) +
                 " bytes=" + std::to_string(msg.payload ? msg.payload->size() : 0);
        } else if constexpr (std::is_same_v<T, ChunkDigest>) {
          out += " seq=" + std::to_string(msg.seq) + " " + std::string(algorithm_name(msg.digest.algorithm())) +
                 "=" + msg.digest.hex();
        } else if constexpr (std::is_same_v<T, Ack>) {
          out += " seq=" + std::to_string(msg.seq);
        } else if constexpr (std::is_same_v<T, Nak>) {
          out += " seq=" + std::to_string(msg.seq) + " reason=" + msg.reason;
        } else if constexpr (std::is_same_v<T, JobOpen>) {
          out += " case=" + msg.case_id + " device=" + msg.device.device_id +
                 " bytes=" + std::to_string(msg.device.total_bytes) +
                 " chunk_size=" + std::to_string(msg.chunk_size);
        } else if constexpr (std::is_same_v<T, JobAccept>) {
          out += " session=" + msg.session_id + " resume_from=" + std::to_string(msg.resume_from_seq);
        } else if constexpr (std::is_same_v<T, FinalResult>) {
          out += msg.verified ? " verified " : " failed ";
          out += msg.recomputed_digest.hex();
        } else if constexpr (std::is_same_v<T, AuthResult>) {
          out += msg.ok ? " ok" : " fail";
        } else if constexpr (std::is_same_v<T, Abort>) {
          out += " reason=" + msg.reason;
        }
      },
      m);
  return out;
}

DecodeError::DecodeError(DecodeFailure kind, const std::string& detail)
    : Error(ErrorCode::DecodeError, detail), kind_(kind) {}

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) u8(static_cast<std::uint8_t>(v >> shift));
  }
  void u64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) u8(static_cast<std::uint8_t>(v >> shift));
  }
  void raw(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  void bytes(std::span<const std::uint8_t> b) {
    u32(static_cast<std::uint32_t>(b.size()));
    raw(b);
  }
  void str(const std::string& s) {
    bytes(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  void digest(const DigestValue& d) {
    u8(static_cast<std::uint8_t>(d.algorithm()));
    raw(d.bytes());
  }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(u8() << 8);
    return static_cast<std::uint16_t>(v | u8());
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | u8();
    return v;
  }
  Bytes raw(std::size_t n) {
    need(n);
    Bytes out(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
              in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  Bytes bytes() { return raw(u32()); }
  std::string str() {
    auto b = bytes();
    return std::string(b.begin(), b.end());
  }
  HashAlgorithm algorithm() {
    const auto code = u8();
    if (code < 1 || code > 6) throw DecodeError(DecodeFailure::Malformed, "unknown digest algorithm code");
    return static_cast<HashAlgorithm>(code);
  }
  DigestValue digest() {
    const auto alg = algorithm();
    return DigestValue(alg, raw(digest_length(alg)));
  }
  Bytes rest() { return raw(in_.size() - pos_); }
  void finish() const {
    if (pos_ != in_.size()) throw DecodeError(DecodeFailure::Malformed, "trailing bytes in payload");
  }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw DecodeError(DecodeFailure::Malformed, "payload shorter than its fields");
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_device(Writer& w, const DeviceDescriptor& d) {
  w.str(d.device_id);
  w.str(d.label);
  w.u64(d.total_bytes);
  w.u32(static_cast<std::uint32_t>(d.partitions.size()));
  for (const auto& p : d.partitions) {
    w.u64(p.offset);
    w.u64(p.length);
    w.str(p.label);
  }
  w.u8(static_cast<std::uint8_t>(d.source_kind));
}

DeviceDescriptor read_device(Reader& r) {
  DeviceDescriptor d;
  d.device_id = r.str();
  d.label = r.str();
  d.total_bytes = r.u64();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Partition p;
    p.offset = r.u64();
    p.length = r.u64();
    p.label = r.str();
    d.partitions.push_back(std::move(p));
  }
  const auto kind = r.u8();
  if (kind > 1) throw DecodeError(DecodeFailure::Malformed, "unknown source kind");
  d.source_kind = static_cast<SourceKind>(kind);
  return d;
}

Bytes encode_payload(const Message& message) {
  Writer w;
  std::visit(
      [&w](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) {
          w.u16(m.protocol_version);
          w.bytes(m.nonce);
        } else if constexpr (std::is_same_v<T, Auth>) {
          w.bytes(m.passphrase_proof);
        } else if constexpr (std::is_same_v<T, AuthResult>) {
          w.u8(m.ok ? 1 : 0);
        } else if constexpr (std::is_same_v<T, JobOpen>) {
          w.str(m.case_id);
          write_device(w, m.device);
          w.u64(m.chunk_size);
          w.u8(static_cast<std::uint8_t>(m.chunk_digest_algorithm));
          w.digest(m.whole_image_digest);
        } else if constexpr (std::is_same_v<T, JobAccept>) {
          w.str(m.session_id);
          w.u64(m.resume_from_seq);
        } else if constexpr (std::is_same_v<T, ChunkData>) {
          // payload runs to the end of the frame; no inner length prefix
          w.u64(m.seq);
          if (m.payload) w.raw(*m.payload);
        } else if constexpr (std::is_same_v<T, ChunkDigest>) {
          w.u64(m.seq);
          w.digest(m.digest);
        } else if constexpr (std::is_same_v<T, Ack>) {
          w.u64(m.seq);
        } else if constexpr (std::is_same_v<T, Nak>) {
          w.u64(m.seq);
          w.str(m.reason);
        } else if constexpr (std::is_same_v<T, JobFinalize>) {
        } else if constexpr (std::is_same_v<T, FinalResult>) {
          w.u8(m.verified ? 1 : 0);
          w.digest(m.recomputed_digest);
        } else if constexpr (std::is_same_v<T, Abort>) {
          w.str(m.reason);
        }
      },
      message);
  return w.take();
}

}  // namespace

Bytes encode_frame(const Message& message) {
  if (const auto* chunk = std::get_if<ChunkData>(&message)) {
    if (chunk->payload && chunk->payload->size() + 8 > kMaxPayload) {
      throw Error(ErrorCode::PayloadTooLarge, "chunk payload exceeds 2^32 bytes");
    }
  }
  Bytes payload = encode_payload(message);
  if (payload.size() > kMaxPayload) throw Error(ErrorCode::PayloadTooLarge, "frame payload exceeds 2^32 bytes");
  Bytes frame(kHeaderSize + payload.size());
  std::copy(std::begin(kMagic), std::end(kMagic), frame.begin());
  frame[4] = kVersion;
  frame[5] = static_cast<std::uint8_t>(type_of(message));
  const std::uint64_t len = payload.size();
  for (int i = 0; i < 8; ++i) frame[6 + i] = static_cast<std::uint8_t>(len >> (56 - 8 * i));
  std::copy(payload.begin(), payload.end(), frame.begin() + kHeaderSize);
  return frame;
}

FrameHeader decode_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) throw DecodeError(DecodeFailure::NeedMoreBytes, "NeedMoreBytes");
  if (!std::equal(std::begin(kMagic), std::end(kMagic), header.begin())) {
    throw DecodeError(DecodeFailure::BadMagic, "frame does not start with RAFT magic");
  }
  if (header[4] != kVersion) {
    throw DecodeError(DecodeFailure::UnsupportedVersion, "frame version " + std::to_string(header[4]));
  }
  const auto type = header[5];
  if (type < 1 || type > 12) throw DecodeError(DecodeFailure::UnknownType, "type " + std::to_string(type));
  std::uint64_t len = 0;
  for (std::size_t i = 6; i < 14; ++i) len = (len << 8) | header[i];
  if (len > kMaxPayload) throw DecodeError(DecodeFailure::TooLarge, "payload length " + std::to_string(len));
  return {static_cast<MessageType>(type), len};
}

Message decode_payload(MessageType type, std::span<const std::uint8_t> payload) {
  Reader r(payload);
  Message out;
  switch (type) {
    case MessageType::Hello: {
      Hello m;
      m.protocol_version = r.u16();
      m.nonce = r.bytes();
      out = std::move(m);
      break;
    }
    case MessageType::Auth: out = Auth{r.bytes()}; break;
    case MessageType::AuthResult: out = AuthResult{r.u8() != 0}; break;
    case MessageType::JobOpen: {
      JobOpen m;
      m.case_id = r.str();
      m.device = read_device(r);
      m.chunk_size = r.u64();
      m.chunk_digest_algorithm = r.algorithm();
      m.whole_image_digest = r.digest();
      out = std::move(m);
      break;
    }
    case MessageType::JobAccept: {
      JobAccept m;
      m.session_id = r.str();
      m.resume_from_seq = r.u64();
      out = std::move(m);
      break;
    }
    case MessageType::ChunkData: {
      ChunkData m;
      m.seq = r.u64();
      m.payload = std::make_shared<const Bytes>(r.rest());
      out = std::move(m);
      break;
    }
    case MessageType::ChunkDigest: {
      ChunkDigest m;
      m.seq = r.u64();
      m.digest = r.digest();
      out = std::move(m);
      break;
    }
    case MessageType::Ack: out = Ack{r.u64()}; break;
    case MessageType::Nak: {
      Nak m;
      m.seq = r.u64();
      m.reason = r.str();
      out = std::move(m);
      break;
    }
    case MessageType::JobFinalize: out = JobFinalize{}; break;
    case MessageType::FinalResult: {
      FinalResult m;
      m.verified = r.u8() != 0;
      m.recomputed_digest = r.digest();
      out = std::move(m);
      break;
    }
    case MessageType::Abort: out = Abort{r.str()}; break;
    default: throw DecodeError(DecodeFailure::UnknownType, "unknown message type");
  }
  r.finish();
  return out;
}

Decoded decode_frame(std::span<const std::uint8_t> buffer) {
  const auto header = decode_header(buffer);
  if (buffer.size() - kHeaderSize < header.payload_length) {
    throw DecodeError(DecodeFailure::NeedMoreBytes, "NeedMoreBytes");
  }
  const auto len = static_cast<std::size_t>(header.payload_length);
  return {decode_payload(header.type, buffer.subspan(kHeaderSize, len)), kHeaderSize + len};
}

Bytes passphrase_proof(std::span<const std::uint8_t> passphrase_digest,
                       std::span<const std::uint8_t> server_nonce) {
  Hasher h(HashAlgorithm::SHA256);
  h.update(passphrase_digest);
  h.update(server_nonce);
  return h.finish().bytes();
}

std::uint64_t JobParams::chunk_length(std::uint64_t seq) const {
  const std::uint64_t offset = seq * chunk_size;
  if (offset >= device.total_bytes) return 0;
  return std::min(chunk_size, device.total_bytes - offset);
}

JobOpen to_message(const JobParams& job) {
  JobOpen m;
  m.case_id = job.case_id;
  m.device = job.device;
  m.device.path.clear();
  m.chunk_size = job.chunk_size;
  m.chunk_digest_algorithm = job.chunk_digest_algorithm;
  m.whole_image_digest = job.whole_image_digest;
  return m;
}

JobParams from_message(const JobOpen& msg) {
  JobParams job;
  job.case_id = msg.case_id;
  job.device = msg.device;
  job.chunk_size = msg.chunk_size;
  job.chunk_digest_algorithm = msg.chunk_digest_algorithm;
  job.whole_image_digest = msg.whole_image_digest;
  return job;
}

// ---------------------------------------------------------------- client

std::string_view phase_name(ClientPhase p) {
  switch (p) {
    case ClientPhase::Connected: return "Connected";
    case ClientPhase::Authenticated: return "Authenticated";
    case ClientPhase::JobOpen: return "JobOpen";
    case ClientPhase::Transferring: return "Transferring";
    case ClientPhase::AwaitingFinal: return "AwaitingFinal";
    case ClientPhase::Done: return "Done";
    case ClientPhase::Failed: return "Failed";
  }
  return "?";
}

ClientSessionState ClientSessionState::initial(JobParams job, Bytes passphrase_digest,
                                               std::uint32_t retry_limit, std::uint32_t window) {
  ClientSessionState s;
  s.job = std::move(job);
  s.passphrase_digest = std::move(passphrase_digest);
  s.retry_limit = retry_limit;
  s.window = std::max<std::uint32_t>(window, 1);
  return s;
}

namespace {

bool erase_value(std::vector<std::uint64_t>& v, std::uint64_t x) {
  auto it = std::find(v.begin(), v.end(), x);
  if (it == v.end()) return false;
  v.erase(it);
  return true;
}

void client_fail(ClientStep& step, std::optional<ErrorCode> code, const std::string& reason, bool send_abort) {
  step.state.phase = ClientPhase::Failed;
  step.state.error = code;
  step.state.failure_reason = reason;
  step.error = code;
  if (send_abort) step.actions.emplace_back(Message{Abort{reason}});
}

void client_fill_window(ClientStep& step) {
  auto& s = step.state;
  const auto count = s.job.chunk_count();
  while (s.in_flight.size() < s.window) {
    std::uint64_t seq;
    if (!s.retransmit_queue.empty()) {
      seq = s.retransmit_queue.front();
      s.retransmit_queue.pop_front();
    } else if (s.next_seq < count) {
      seq = s.next_seq++;
    } else {
      break;
    }
    ++s.attempts[seq];
    s.in_flight.push_back(seq);
    s.awaiting_payload.push_back(seq);
    step.actions.emplace_back(RequestChunk{seq});
  }
}

void client_maybe_finalize(ClientStep& step) {
  auto& s = step.state;
  if (s.acked == s.job.chunk_count() && s.in_flight.empty() && s.retransmit_queue.empty()) {
    s.phase = ClientPhase::AwaitingFinal;
    step.actions.emplace_back(Message{JobFinalize{}});
  }
}

void client_violation(ClientStep& step, const std::string& what) {
  client_fail(step, ErrorCode::ProtocolViolation,
              what + " in state " + std::string(phase_name(step.state.phase)), true);
}

void client_inbound(ClientStep& step, const Message& msg) {
  auto& s = step.state;
  if (const auto* abort = std::get_if<Abort>(&msg)) {
    client_fail(step, std::nullopt, "server aborted: " + abort->reason, false);
    return;
  }
  switch (s.phase) {
    case ClientPhase::Connected: {
      if (const auto* hello = std::get_if<Hello>(&msg); hello && s.hello_sent && !s.auth_sent) {
        if (hello->protocol_version != kProtocolVersion) {
          client_fail(step, ErrorCode::ProtocolViolation, "unsupported protocol version", true);
          return;
        }
        s.auth_sent = true;
        step.actions.emplace_back(Message{Auth{passphrase_proof(s.passphrase_digest, hello->nonce)}});
        return;
      }
      if (const auto* result = std::get_if<AuthResult>(&msg); result && s.auth_sent) {
        if (!result->ok) {
          client_fail(step, ErrorCode::Unauthorized, "server refused authentication", false);
          return;
        }
        s.phase = ClientPhase::Authenticated;
        step.actions.emplace_back(Message{to_message(s.job)});
        s.phase = ClientPhase::JobOpen;
        return;
      }
      client_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ClientPhase::JobOpen: {
      if (const auto* accept = std::get_if<JobAccept>(&msg)) {
        const auto count = s.job.chunk_count();
        if (accept->resume_from_seq > count) {
          client_violation(step, "resume point beyond chunk count");
          return;
        }
        s.session_id = accept->session_id;
        s.next_seq = accept->resume_from_seq;
        s.acked = accept->resume_from_seq;
        s.phase = ClientPhase::Transferring;
        client_fill_window(step);
        client_maybe_finalize(step);
        return;
      }
      client_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ClientPhase::Transferring: {
      if (const auto* ack = std::get_if<Ack>(&msg)) {
        if (!erase_value(s.in_flight, ack->seq) || erase_value(s.awaiting_payload, ack->seq)) {
          client_violation(step, "ACK for chunk " + std::to_string(ack->seq) + " not in flight");
          return;
        }
        ++s.acked;
        client_fill_window(step);
        client_maybe_finalize(step);
        return;
      }
      if (const auto* nak = std::get_if<Nak>(&msg)) {
        if (!erase_value(s.in_flight, nak->seq) || erase_value(s.awaiting_payload, nak->seq)) {
          client_violation(step, "NAK for chunk " + std::to_string(nak->seq) + " not in flight");
          return;
        }
        if (s.attempts[nak->seq] >= s.retry_limit) {
          client_fail(step, ErrorCode::RetryLimitExceeded,
                      "chunk " + std::to_string(nak->seq) + " failed verification " +
                          std::to_string(s.attempts[nak->seq]) + " times",
                      true);
          return;
        }
        s.retransmit_queue.push_front(nak->seq);
        client_fill_window(step);
        return;
      }
      client_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ClientPhase::AwaitingFinal: {
      if (const auto* result = std::get_if<FinalResult>(&msg)) {
        s.final_result = *result;
        if (result->verified) {
          s.phase = ClientPhase::Done;
        } else {
          client_fail(step, std::nullopt, "final whole-image verification failed", false);
        }
        return;
      }
      client_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ClientPhase::Authenticated:
    case ClientPhase::Done:
    case ClientPhase::Failed: return;
  }
}

}  // namespace

ClientStep client_step(ClientSessionState state, const ClientEvent& event) {
  ClientStep step{std::move(state), {}, std::nullopt};
  auto& s = step.state;
  if (s.phase == ClientPhase::Done || s.phase == ClientPhase::Failed) return step;

  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, client_event::Start>) {
          if (s.phase != ClientPhase::Connected || s.hello_sent) {
            client_violation(step, "duplicate start");
            return;
          }
          s.hello_sent = true;
          step.actions.emplace_back(Message{Hello{kProtocolVersion, s.client_nonce}});
        } else if constexpr (std::is_same_v<T, client_event::Inbound>) {
          client_inbound(step, ev.message);
        } else if constexpr (std::is_same_v<T, client_event::ChunkReady>) {
          if (s.phase != ClientPhase::Transferring || !erase_value(s.awaiting_payload, ev.seq)) {
            client_violation(step, "chunk " + std::to_string(ev.seq) + " was not requested");
            return;
          }
          step.actions.emplace_back(Message{ChunkData{ev.seq, ev.payload}});
          step.actions.emplace_back(Message{ChunkDigest{ev.seq, ev.digest}});
        } else if constexpr (std::is_same_v<T, client_event::Timeout>) {
          client_fail(step, ErrorCode::ConnectionLost,
                      "timed out in state " + std::string(phase_name(s.phase)), true);
        }
      },
      event);
  return step;
}

// ---------------------------------------------------------------- server

std::string_view phase_name(ServerPhase p) {
  switch (p) {
    case ServerPhase::AwaitingAuth: return "AwaitingAuth";
    case ServerPhase::AwaitingJob: return "AwaitingJob";
    case ServerPhase::Receiving: return "Receiving";
    case ServerPhase::Finalizing: return "Finalizing";
    case ServerPhase::Done: return "Done";
    case ServerPhase::Failed: return "Failed";
  }
  return "?";
}

ServerSessionState ServerSessionState::initial(Bytes server_nonce, std::optional<Bytes> passphrase_digest,
                                               std::uint32_t window) {
  ServerSessionState s;
  s.server_nonce = std::move(server_nonce);
  s.passphrase_digest = std::move(passphrase_digest);
  s.window = std::max<std::uint32_t>(window, 1);
  return s;
}

namespace {

void server_fail(ServerStep& step, ErrorCode code, const std::string& reason) {
  step.state.phase = ServerPhase::Failed;
  step.state.error = code;
  step.state.failure_reason = reason;
  step.error = code;
  step.state.pending.clear();
  step.messages.emplace_back(Abort{reason});
  step.commands.emplace_back(command::Close{reason});
}

void server_violation(ServerStep& step, const std::string& what, ErrorCode code = ErrorCode::ProtocolViolation) {
  server_fail(step, code, what + " in state " + std::string(phase_name(step.state.phase)));
}

void server_try_verify(ServerStep& step) {
  auto& s = step.state;
  if (s.in_verify || s.disconnected) return;
  auto it = s.pending.find(s.next_append);
  if (it == s.pending.end() || !it->second.digest) return;
  const auto seq = it->first;
  const auto expected = s.job->chunk_length(seq);
  if (!it->second.payload || it->second.payload->size() != expected) {
    step.commands.emplace_back(command::Discard{seq});
    step.messages.emplace_back(Nak{seq, "length mismatch"});
    s.pending.erase(it);
    return;
  }
  s.in_verify = seq;
  step.commands.emplace_back(command::Verify{seq, it->second.payload, *it->second.digest});
}

void server_after_disconnect(ServerStep& step) {
  auto& s = step.state;
  if (s.disconnected && !s.in_verify) {
    s.phase = ServerPhase::Failed;
    s.failure_reason = "client disconnected";
    s.pending.clear();
    step.commands.emplace_back(command::Close{"client disconnected"});
  }
}

void server_inbound(ServerStep& step, const Message& msg) {
  auto& s = step.state;
  if (const auto* abort = std::get_if<Abort>(&msg)) {
    s.phase = ServerPhase::Failed;
    s.failure_reason = "client aborted: " + abort->reason;
    s.pending.clear();
    step.commands.emplace_back(command::Close{s.failure_reason});
    return;
  }
  switch (s.phase) {
    case ServerPhase::AwaitingAuth: {
      if (const auto* hello = std::get_if<Hello>(&msg); hello && !s.hello_seen) {
        if (hello->protocol_version != kProtocolVersion) {
          server_violation(step, "unsupported protocol version " + std::to_string(hello->protocol_version));
          return;
        }
        s.hello_seen = true;
        step.messages.emplace_back(Hello{kProtocolVersion, s.server_nonce});
        return;
      }
      if (const auto* auth = std::get_if<Auth>(&msg); auth && s.hello_seen) {
        bool ok = true;
        if (s.passphrase_digest) {
          const auto expected = passphrase_proof(*s.passphrase_digest, s.server_nonce);
          ok = auth->passphrase_proof.size() == expected.size() &&
               CRYPTO_memcmp(auth->passphrase_proof.data(), expected.data(), expected.size()) == 0;
        }
        step.messages.emplace_back(AuthResult{ok});
        if (ok) {
          s.phase = ServerPhase::AwaitingJob;
        } else {
          s.phase = ServerPhase::Failed;
          s.error = ErrorCode::Unauthorized;
          s.failure_reason = "authentication failed";
          step.commands.emplace_back(command::Close{s.failure_reason});
        }
        return;
      }
      server_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ServerPhase::AwaitingJob: {
      if (const auto* open = std::get_if<JobOpen>(&msg); open && !s.job_requested) {
        if (open->device.total_bytes == 0) {
          server_violation(step, "zero-byte device", ErrorCode::ZeroSizeSource);
          return;
        }
        if (open->chunk_size == 0 || open->chunk_size + 8 > kMaxPayload) {
          server_violation(step, "unusable chunk size", ErrorCode::InvalidChunkSize);
          return;
        }
        s.job_requested = true;
        s.job = from_message(*open);
        step.commands.emplace_back(command::OpenJob{*s.job});
        return;
      }
      server_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ServerPhase::Receiving: {
      const auto count = s.job->chunk_count();
      if (const auto* data = std::get_if<ChunkData>(&msg)) {
        const auto seq = data->seq;
        if (seq >= count || seq < s.next_append || seq >= s.next_append + s.window || s.pending.contains(seq)) {
          server_violation(step, "chunk " + std::to_string(seq) + " out of order (next " +
                                     std::to_string(s.next_append) + ")",
                           ErrorCode::OutOfOrderChunk);
          return;
        }
        s.pending[seq] = PendingChunk{data->payload, std::nullopt};
        return;
      }
      if (const auto* digest = std::get_if<ChunkDigest>(&msg)) {
        auto it = s.pending.find(digest->seq);
        if (it == s.pending.end() || it->second.digest) {
          server_violation(step, "digest for chunk " + std::to_string(digest->seq) + " without its data");
          return;
        }
        if (digest->digest.algorithm() != s.job->chunk_digest_algorithm) {
          server_violation(step, "chunk digest algorithm differs from the job's");
          return;
        }
        it->second.digest = digest->digest;
        server_try_verify(step);
        return;
      }
      if (std::holds_alternative<JobFinalize>(msg)) {
        if (s.next_append != count || s.in_verify || !s.pending.empty()) {
          server_violation(step, "JOB_FINALIZE with " + std::to_string(s.next_append) + " of " +
                                     std::to_string(count) + " chunks verified");
          return;
        }
        s.phase = ServerPhase::Finalizing;
        step.commands.emplace_back(command::FinalVerify{});
        return;
      }
      server_violation(step, "unexpected " + describe(msg));
      return;
    }
    case ServerPhase::Finalizing:
      server_violation(step, "unexpected " + describe(msg));
      return;
    case ServerPhase::Done:
    case ServerPhase::Failed: return;
  }
}

}  // namespace

ServerStep server_step(ServerSessionState state, const ServerEvent& event) {
  ServerStep step{std::move(state), {}, {}, std::nullopt};
  auto& s = step.state;
  if (s.phase == ServerPhase::Done || s.phase == ServerPhase::Failed) return step;

  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, server_event::Inbound>) {
          if (s.disconnected) return;
          server_inbound(step, ev.message);
        } else if constexpr (std::is_same_v<T, server_event::JobOpened>) {
          if (s.phase != ServerPhase::AwaitingJob || !s.job_requested) {
            server_violation(step, "job opened twice");
            return;
          }
          s.session_id = ev.session_id;
          s.next_append = std::min(ev.resume_from, s.job->chunk_count());
          s.phase = ServerPhase::Receiving;
          step.messages.emplace_back(JobAccept{s.session_id, s.next_append});
        } else if constexpr (std::is_same_v<T, server_event::JobRefused>) {
          server_fail(step, ErrorCode::ProtocolViolation, "job refused: " + ev.reason);
        } else if constexpr (std::is_same_v<T, server_event::VerifyDone>) {
          if (s.phase != ServerPhase::Receiving || s.in_verify != ev.seq) {
            server_violation(step, "verification result for chunk " + std::to_string(ev.seq) + " not in verification");
            return;
          }
          auto it = s.pending.find(ev.seq);
          s.in_verify.reset();
          if (ev.ok) {
            step.commands.emplace_back(command::Append{ev.seq, it->second.payload});
            step.messages.emplace_back(Ack{ev.seq});
            ++s.next_append;
          } else {
            step.commands.emplace_back(command::Discard{ev.seq});
            step.messages.emplace_back(Nak{ev.seq, "digest mismatch"});
          }
          s.pending.erase(it);
          server_try_verify(step);
          server_after_disconnect(step);
        } else if constexpr (std::is_same_v<T, server_event::FinalDone>) {
          if (s.phase != ServerPhase::Finalizing) {
            server_violation(step, "final verification result outside finalizing");
            return;
          }
          s.final_result = FinalResult{ev.verified, ev.recomputed};
          s.phase = ServerPhase::Done;
          step.messages.emplace_back(*s.final_result);
          step.commands.emplace_back(command::Close{ev.verified ? "verified" : "final verification failed"});
        } else if constexpr (std::is_same_v<T, server_event::Disconnected>) {
          s.disconnected = true;
          server_after_disconnect(step);
        }
      },
      event);
  return step;
}

// ---------------------------------------------------------------- resume

std::uint64_t resume_point(const JobParams& job, const std::optional<PriorSession>& prior) {
  if (!prior) return 0;
  if (prior->whole_image_digest != job.whole_image_digest) {
    throw Error(ErrorCode::DigestMismatchOnResume,
                "session " + prior->session_id + " imaged " + prior->whole_image_digest.hex() +
                    ", new job claims " + job.whole_image_digest.hex());
  }
  if (prior->chunk_size != job.chunk_size) {
    throw Error(ErrorCode::InvalidArgument, "session " + prior->session_id + " used chunk size " +
                                                std::to_string(prior->chunk_size));
  }
  return std::min(prior->chunks_verified, job.chunk_count());
}

}  // namespace raft::wire
