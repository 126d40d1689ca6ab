#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "raft/evidence.hpp"
#include "raft/trace.hpp"
#include "raft/transport.hpp"
#include "raft/wire.hpp"

namespace raft {

/// `<root>/<case_id>/<session_id>/<device_id>/` holding image.raw,
/// manifest.tsv, metadata.txt and transfer.log.
class EvidenceStore {
 public:
  /// Creates the root if needed. Throws StoreUnwritable.
  explicit EvidenceStore(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path device_dir(const std::string& case_id, const std::string& session_id,
                                   const std::string& device_id) const;

  /// `<UTC compact timestamp>-<8 hex random>`.
  static std::string new_session_id();

  struct Resumable {
    wire::PriorSession prior;
    EvidenceRecord record;
    std::filesystem::path dir;
  };

  /// Latest session for (case, device) whose verdict is still pending.
  std::optional<Resumable> find_resumable(const std::string& case_id, const std::string& device_id) const;

  /// Every device directory holding a metadata.txt.
  std::vector<std::filesystem::path> record_dirs() const;

 private:
  std::filesystem::path root_;
};

/// Rejects empty names, separators and dot-names so ids cannot escape the store.
void check_path_component(const std::string& what, const std::string& value);

struct VerifyVerdict {
  bool ok = false;
  DigestValue recomputed;
};

VerifyVerdict verify_chunk(std::span<const std::uint8_t> payload, const DigestValue& claimed);

/// Strictly in-order, append-only writer for image.raw.
class ImageWriter {
 public:
  /// Opens for append; an existing file is truncated to `keep_bytes` (crash leftovers).
  ImageWriter(std::filesystem::path path, std::uint64_t next_seq, std::uint64_t keep_bytes);
  ~ImageWriter();
  ImageWriter(const ImageWriter&) = delete;
  ImageWriter& operator=(const ImageWriter&) = delete;

  /// Throws OutOfOrderAppend unless seq == chunks appended so far. Returns the new length.
  std::uint64_t append(std::uint64_t seq, std::span<const std::uint8_t> payload);
  std::uint64_t length() const { return length_; }
  std::uint64_t next_seq() const { return next_seq_; }
  void sync();

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t next_seq_ = 0;
  std::uint64_t length_ = 0;
};

struct FinalizeOutcome {
  Verdict verdict = Verdict::Failed;
  std::optional<DigestValue> recomputed;
  std::optional<ErrorCode> error;  // ImageLengthMismatch
  ChunkManifest manifest;          // chunk digests recomputed from image.raw
};

/// Single pass over image.raw: whole-image digest plus per-chunk digests;
/// writes manifest.tsv and metadata.txt with the verdict.
FinalizeOutcome finalize(const std::filesystem::path& device_dir, EvidenceRecord& record);

void write_metadata(const std::filesystem::path& device_dir, const EvidenceRecord& record);
/// metadata.txt merged with manifest.tsv when present.
EvidenceRecord read_evidence_record(const std::filesystem::path& device_dir);

struct ServerConfig {
  std::filesystem::path store_root;
  std::string bind_address = "127.0.0.1";
  std::uint16_t port = kDefaultPort;
  std::optional<std::vector<std::uint8_t>> passphrase_digest;
  std::uint32_t window = 2;
  /// Artificial per-chunk verification cost (instrumented runs).
  std::chrono::milliseconds verify_delay{0};
  /// How long a reconnecting client waits for its previous session to wind down.
  std::chrono::milliseconds resume_wait{5000};

  // Test instrumentation.
  std::function<void(std::uint64_t seq)> on_verify_start;
  std::function<void(const std::filesystem::path& image)> before_finalize;
};

/// `key: value` file with keys store, bind_address, port, passphrase_digest,
/// window and verify_delay_ms. Throws ParseError.
ServerConfig parse_server_config(std::string_view text);
/// Relative store paths resolve against the file's directory. Throws NotFound.
ServerConfig load_server_config(const std::filesystem::path& path);

struct SessionOutcome {
  std::string session_id;
  std::string case_id;
  std::string device_id;
  std::filesystem::path record_dir;
  wire::ServerPhase phase = wire::ServerPhase::AwaitingAuth;
  Verdict verdict = Verdict::Pending;
  std::optional<ErrorCode> error;
  std::string reason;
  std::uint64_t resumed_from = 0;
  std::uint64_t acks = 0;
  std::uint64_t naks = 0;
  std::uint64_t appended = 0;
  std::uint64_t mismatched_appends = 0;  // must stay 0: appends whose digest did not match
  Trace trace;
};

/// Multi-session acquisition server. Each connection gets its own session
/// thread, reader thread and verification worker.
class AcquisitionServer {
 public:
  explicit AcquisitionServer(ServerConfig config);
  ~AcquisitionServer();
  AcquisitionServer(const AcquisitionServer&) = delete;
  AcquisitionServer& operator=(const AcquisitionServer&) = delete;

  /// Binds and starts accepting; returns the bound port. Throws BindFailed.
  std::uint16_t listen();
  /// Runs a session over an already-connected endpoint (loopback, tests).
  void serve(std::unique_ptr<Endpoint> endpoint);

  /// Stops accepting, lets in-flight verifications finish, leaves
  /// unfinished sessions resumable, and joins everything.
  void shutdown();

  std::size_t completed_sessions() const;
  /// Blocks until at least n sessions have ended or the timeout passes.
  bool wait_for_sessions(std::size_t n, std::chrono::milliseconds timeout) const;
  std::vector<SessionOutcome> outcomes() const;
  const EvidenceStore& store() const { return store_; }

 private:
  class Session;
  friend class Session;

  // Claims (case, device) for a live session; waits while another session holds it.
  bool claim(const std::string& key, std::chrono::milliseconds wait);
  void release(const std::string& key);
  void record(SessionOutcome outcome);

  ServerConfig config_;
  EvidenceStore store_;
  std::unique_ptr<StreamListener> listener_;
  std::thread accept_thread_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  bool stopping_ = false;
  std::set<std::string> active_devices_;
  std::vector<std::shared_ptr<Session>> sessions_;
  std::vector<std::thread> threads_;
  std::vector<SessionOutcome> outcomes_;
};

/// CLI entry: serve until `stop` becomes true. Ready line goes to `log`.
void run_server(const ServerConfig& config, const std::function<bool()>& stop,
                const std::function<void(const std::string&)>& log);

}  // namespace raft
