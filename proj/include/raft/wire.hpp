#pragma once

// Framed message set and the two session state machines. Both machines are
// pure: step(state, event) returns the next state plus what to send and do,
// and never performs I/O.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "raft/error.hpp"
#include "raft/evidence.hpp"

namespace raft::wire {

inline constexpr std::uint8_t kMagic[4] = {0x52, 0x41, 0x46, 0x54};  // "RAFT"
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 14;  // magic, version, type, u64 length
inline constexpr std::uint64_t kMaxPayload = 1ULL << 32;
inline constexpr std::uint16_t kProtocolVersion = 1;

enum class MessageType : std::uint8_t {
  Hello = 1,
  Auth = 2,
  AuthResult = 3,
  JobOpen = 4,
  JobAccept = 5,
  ChunkData = 6,
  ChunkDigest = 7,
  Ack = 8,
  Nak = 9,
  JobFinalize = 10,
  FinalResult = 11,
  Abort = 12,
};

std::string_view message_type_name(MessageType type);

using Bytes = std::vector<std::uint8_t>;
/// Chunk payloads are shared rather than copied between the machine and runtime.
using SharedBytes = std::shared_ptr<const Bytes>;

struct Hello {
  std::uint16_t protocol_version = kProtocolVersion;
  Bytes nonce;
  friend bool operator==(const Hello&, const Hello&) = default;
};
struct Auth {
  Bytes passphrase_proof;
  friend bool operator==(const Auth&, const Auth&) = default;
};
struct AuthResult {
  bool ok = false;
  friend bool operator==(const AuthResult&, const AuthResult&) = default;
};
struct JobOpen {
  std::string case_id;
  DeviceDescriptor device;  // path is not transmitted
  std::uint64_t chunk_size = 0;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA512;
  DigestValue whole_image_digest{HashAlgorithm::MD5, Bytes(16)};
  friend bool operator==(const JobOpen&, const JobOpen&) = default;
};
struct JobAccept {
  std::string session_id;
  std::uint64_t resume_from_seq = 0;
  friend bool operator==(const JobAccept&, const JobAccept&) = default;
};
struct ChunkData {
  std::uint64_t seq = 0;
  SharedBytes payload;
  friend bool operator==(const ChunkData& a, const ChunkData& b) {
    return a.seq == b.seq && (a.payload == b.payload || (a.payload && b.payload && *a.payload == *b.payload));
  }
};
struct ChunkDigest {
  std::uint64_t seq = 0;
  DigestValue digest{HashAlgorithm::MD5, Bytes(16)};
  friend bool operator==(const ChunkDigest&, const ChunkDigest&) = default;
};
struct Ack {
  std::uint64_t seq = 0;
  friend bool operator==(const Ack&, const Ack&) = default;
};
struct Nak {
  std::uint64_t seq = 0;
  std::string reason;
  friend bool operator==(const Nak&, const Nak&) = default;
};
struct JobFinalize {
  friend bool operator==(const JobFinalize&, const JobFinalize&) = default;
};
struct FinalResult {
  bool verified = false;
  DigestValue recomputed_digest{HashAlgorithm::MD5, Bytes(16)};
  friend bool operator==(const FinalResult&, const FinalResult&) = default;
};
struct Abort {
  std::string reason;
  friend bool operator==(const Abort&, const Abort&) = default;
};

using Message = std::variant<Hello, Auth, AuthResult, JobOpen, JobAccept, ChunkData, ChunkDigest,
                             Ack, Nak, JobFinalize, FinalResult, Abort>;

MessageType type_of(const Message& m);
std::string describe(const Message& m);

/// Deterministic frame: magic, version, type, big-endian u64 length, payload.
Bytes encode_frame(const Message& message);

enum class DecodeFailure { NeedMoreBytes, BadMagic, UnsupportedVersion, UnknownType, Malformed, TooLarge };

class DecodeError : public Error {
 public:
  DecodeError(DecodeFailure kind, const std::string& detail);
  DecodeFailure kind() const { return kind_; }

 private:
  DecodeFailure kind_;
};

struct FrameHeader {
  MessageType type;
  std::uint64_t payload_length;
};

/// Validates the 14 header bytes.
FrameHeader decode_header(std::span<const std::uint8_t> header);
Message decode_payload(MessageType type, std::span<const std::uint8_t> payload);

struct Decoded {
  Message message;
  std::size_t consumed;
};

/// Decodes the frame at the front of the buffer; throws DecodeError
/// (NeedMoreBytes when truncated).
Decoded decode_frame(std::span<const std::uint8_t> buffer);

/// SHA-256(passphrase_digest || server_nonce).
Bytes passphrase_proof(std::span<const std::uint8_t> passphrase_digest,
                       std::span<const std::uint8_t> server_nonce);

/// What a job is, as both sides see it.
struct JobParams {
  std::string case_id;
  DeviceDescriptor device;
  std::uint64_t chunk_size = kDefaultChunkSize;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA512;
  DigestValue whole_image_digest{HashAlgorithm::MD5, Bytes(16)};

  std::uint64_t chunk_count() const { return chunk_count_for(device.total_bytes, chunk_size); }
  std::uint64_t chunk_length(std::uint64_t seq) const;
};

JobOpen to_message(const JobParams& job);
JobParams from_message(const JobOpen& msg);

// ---------------------------------------------------------------- client

enum class ClientPhase { Connected, Authenticated, JobOpen, Transferring, AwaitingFinal, Done, Failed };

std::string_view phase_name(ClientPhase p);

struct ClientSessionState {
  ClientPhase phase = ClientPhase::Connected;
  JobParams job;
  Bytes passphrase_digest;
  Bytes client_nonce;
  std::uint32_t retry_limit = 5;
  std::uint32_t window = 2;

  bool hello_sent = false;
  bool auth_sent = false;
  std::string session_id;
  std::uint64_t next_seq = 0;
  std::deque<std::uint64_t> retransmit_queue;
  std::vector<std::uint64_t> in_flight;  // requested but not yet acked/naked, send order
  std::vector<std::uint64_t> awaiting_payload;  // requested, ChunkReady not yet seen
  std::map<std::uint64_t, std::uint32_t> attempts;
  std::uint64_t acked = 0;  // count of chunks acknowledged, including those skipped by resume
  std::optional<FinalResult> final_result;
  std::optional<ErrorCode> error;
  std::string failure_reason;

  static ClientSessionState initial(JobParams job, Bytes passphrase_digest,
                                    std::uint32_t retry_limit = 5, std::uint32_t window = 2);
};

namespace client_event {
struct Start {};
struct Inbound {
  Message message;
};
/// Payload and digest of a chunk the machine asked for.
struct ChunkReady {
  std::uint64_t seq = 0;
  SharedBytes payload;
  DigestValue digest{HashAlgorithm::MD5, Bytes(16)};
};
struct Timeout {};
}  // namespace client_event

using ClientEvent =
    std::variant<client_event::Start, client_event::Inbound, client_event::ChunkReady, client_event::Timeout>;

/// Ask the runtime to read (and digest) a chunk and deliver ChunkReady.
struct RequestChunk {
  std::uint64_t seq = 0;
  friend bool operator==(const RequestChunk&, const RequestChunk&) = default;
};

using ClientAction = std::variant<Message, RequestChunk>;

struct ClientStep {
  ClientSessionState state;
  std::vector<ClientAction> actions;
  std::optional<ErrorCode> error;  // ProtocolViolation / RetryLimitExceeded
};

ClientStep client_step(ClientSessionState state, const ClientEvent& event);

// ---------------------------------------------------------------- server

enum class ServerPhase { AwaitingAuth, AwaitingJob, Receiving, Finalizing, Done, Failed };

std::string_view phase_name(ServerPhase p);

struct PendingChunk {
  SharedBytes payload;
  std::optional<DigestValue> digest;
};

struct ServerSessionState {
  ServerPhase phase = ServerPhase::AwaitingAuth;
  Bytes server_nonce;
  std::optional<Bytes> passphrase_digest;  // nullopt: any proof accepted
  std::uint32_t window = 2;

  bool hello_seen = false;
  bool job_requested = false;
  bool disconnected = false;
  std::optional<JobParams> job;
  std::string session_id;
  std::uint64_t next_append = 0;  // chunks verified and appended so far
  std::optional<std::uint64_t> in_verify;
  std::map<std::uint64_t, PendingChunk> pending;
  std::optional<FinalResult> final_result;
  std::optional<ErrorCode> error;
  std::string failure_reason;

  static ServerSessionState initial(Bytes server_nonce, std::optional<Bytes> passphrase_digest,
                                    std::uint32_t window = 2);
};

namespace server_event {
struct Inbound {
  Message message;
};
struct JobOpened {
  std::string session_id;
  std::uint64_t resume_from = 0;
};
struct JobRefused {
  std::string reason;
};
struct VerifyDone {
  std::uint64_t seq = 0;
  bool ok = false;
};
struct FinalDone {
  bool verified = false;
  DigestValue recomputed{HashAlgorithm::MD5, Bytes(16)};
};
struct Disconnected {};
}  // namespace server_event

using ServerEvent = std::variant<server_event::Inbound, server_event::JobOpened, server_event::JobRefused,
                                 server_event::VerifyDone, server_event::FinalDone, server_event::Disconnected>;

namespace command {
struct OpenJob {
  JobParams job;
};
struct Verify {
  std::uint64_t seq = 0;
  SharedBytes payload;
  DigestValue claimed{HashAlgorithm::MD5, Bytes(16)};
};
struct Append {
  std::uint64_t seq = 0;
  SharedBytes payload;
};
struct Discard {
  std::uint64_t seq = 0;
};
struct FinalVerify {};
struct Close {
  std::string reason;
};
}  // namespace command

using ServerCommand = std::variant<command::OpenJob, command::Verify, command::Append, command::Discard,
                                   command::FinalVerify, command::Close>;

struct ServerStep {
  ServerSessionState state;
  /// Executed in order before `messages` are sent.
  std::vector<ServerCommand> commands;
  std::vector<Message> messages;
  std::optional<ErrorCode> error;
};

ServerStep server_step(ServerSessionState state, const ServerEvent& event);

// ---------------------------------------------------------------- resume

/// What the store knows about an unfinished earlier session for a device.
struct PriorSession {
  std::string session_id;
  DigestValue whole_image_digest{HashAlgorithm::MD5, Bytes(16)};
  std::uint64_t chunk_size = 0;
  std::uint64_t chunks_verified = 0;
};

/// Lowest seq not yet verified; 0 with no prior session.
/// Throws DigestMismatchOnResume when the prior session imaged different content.
std::uint64_t resume_point(const JobParams& job, const std::optional<PriorSession>& prior);

}  // namespace raft::wire
