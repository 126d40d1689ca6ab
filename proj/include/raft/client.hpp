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
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "raft/evidence.hpp"
#include "raft/transport.hpp"
#include "raft/wire.hpp"

namespace raft {

struct ClientConfig {
  std::string server_host = "127.0.0.1";
  std::uint16_t server_port = kDefaultPort;
  /// SHA-256 of the passphrase, hex in the file.
  std::vector<std::uint8_t> passphrase_digest;
  std::filesystem::path scan_root;
  std::uint64_t chunk_size = kDefaultChunkSize;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA512;
  HashAlgorithm whole_image_algorithm = HashAlgorithm::SHA512;
  bool insecure_transport_ok = false;

  std::string case_id = "default";
  std::uint32_t retry_limit = 5;
  std::uint32_t max_reconnects = 3;
  std::optional<FaultPlan> faults;  // any fault_* key present
};

/// `key: value` lines, '#' comments. Throws ParseError / UnknownAlgorithm.
ClientConfig parse_client_config(std::string_view text);
/// Relative scan_root is resolved against the file's directory. Throws NotFound.
ClientConfig load_client_config(const std::filesystem::path& path);

/// SHA-256 of the passphrase text.
std::vector<std::uint8_t> passphrase_digest(std::string_view passphrase);

enum class SelectionState { Unselected, Queued, Active, Done, Failed };

std::string_view selection_state_name(SelectionState s);

struct InventoryEntry {
  DeviceDescriptor device;
  SelectionState state = SelectionState::Unselected;
  std::optional<std::uint32_t> priority;
  std::string error;  // why a device could not be opened
};

/// One descriptor per regular file under scan_root (not recursive), ordered
/// by label then id. Unreadable files are listed as Failed. Throws ScanRootMissing.
std::vector<InventoryEntry> enumerate_devices(const std::filesystem::path& scan_root);

/// Device ids in drain order: ascending priority, unprioritized entries excluded.
std::vector<std::string> queue_order(const std::vector<InventoryEntry>& inventory);

struct BiosLookupResult {
  std::string manufacturer;  // canonical row name, empty when unknown
  std::vector<std::string> passwords;
  std::string advisory;  // set when the manufacturer is not in the table
};

/// Case-insensitive match against the bundled AWARD / AMI / PHOENIX table.
BiosLookupResult lookup_bios_backdoor(std::string_view manufacturer);
std::vector<std::string> bios_manufacturers();

/// Local unlock. Compares in constant time; locks for the life of the
/// process after five consecutive failures.
class PassphraseGate {
 public:
  static constexpr std::uint32_t kMaxFailures = 5;

  explicit PassphraseGate(std::vector<std::uint8_t> digest);

  /// Returns a fresh session token. Throws BadPassphrase or Locked.
  std::string unlock(std::string_view passphrase);
  bool valid_token(std::string_view token) const;
  bool unlocked() const;
  bool locked() const;

 private:
  std::vector<std::uint8_t> digest_;
  mutable std::mutex mu_;
  std::uint32_t failures_ = 0;
  std::vector<std::string> tokens_;
};

enum class ProgressKind {
  DeviceListed,
  PrehashStarted,
  PrehashDone,
  ChunkSent,
  ChunkAcked,
  ChunkNacked,
  JobFinalized,
  Error
};

std::string_view progress_kind_name(ProgressKind k);

struct ProgressEvent {
  std::uint64_t id = 0;  // assigned by EventLog, strictly increasing
  ProgressKind kind = ProgressKind::Error;
  Timestamp at{};
  std::string job_id;
  std::string device_id;
  std::string session_id;
  std::optional<std::uint64_t> seq;
  std::optional<std::uint32_t> attempt;
  std::string detail;  // digest hex, verdict name or error text
};

using EventSink = std::function<void(ProgressEvent)>;

/// Append-only event history with blocking reads for stream subscribers.
class EventLog {
 public:
  std::uint64_t append(ProgressEvent event);
  /// Events with id > after.
  std::vector<ProgressEvent> since(std::uint64_t after) const;
  /// Like since(), but waits up to `timeout` when nothing is newer.
  std::vector<ProgressEvent> wait_since(std::uint64_t after, std::chrono::milliseconds timeout) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<ProgressEvent> events_;
};

using Connector = std::function<std::unique_ptr<Endpoint>()>;

struct AcquisitionOptions {
  std::string case_id = "default";
  std::uint64_t chunk_size = kDefaultChunkSize;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA512;
  HashAlgorithm whole_image_algorithm = HashAlgorithm::SHA512;
  std::vector<std::uint8_t> passphrase_digest;
  std::uint32_t retry_limit = 5;
  std::uint32_t window = 2;
  bool insecure_transport_ok = false;
  std::uint32_t max_reconnects = 3;
  std::chrono::milliseconds reconnect_delay{50};
  /// No inbound traffic for this long counts as a lost connection.
  std::chrono::milliseconds idle_timeout{30000};
  std::string job_id;
  std::function<bool()> should_abort;
};

/// What one connection of an acquisition sent and received.
struct ConnectionTrace {
  std::uint64_t resume_from = 0;
  std::vector<std::uint64_t> sent;
  std::vector<std::uint64_t> acked;
  std::vector<std::uint64_t> nacked;
  std::string end_reason;
};

struct AcquisitionResult {
  std::string device_id;
  Verdict verdict = Verdict::Pending;
  std::optional<ErrorCode> error;
  std::string detail;
  std::string session_id;
  std::optional<DigestValue> whole_image_digest;
  std::optional<DigestValue> recomputed_digest;
  std::vector<ConnectionTrace> connections;

  bool verified() const { return verdict == Verdict::Verified; }
  std::uint64_t nak_count() const;
};

/// Prehashes the source once, then drives the protocol over connections from
/// `connect`, reconnecting and resuming on ConnectionLost. Never throws for
/// per-device failures; they land in the result.
AcquisitionResult run_acquisition(const Connector& connect, const DeviceDescriptor& device,
                                  const AcquisitionOptions& options, const EventSink& sink = {});

enum class JobState { Running, Done, Failed, Aborted };

std::string_view job_state_name(JobState s);

struct JobStatus {
  std::string id;
  JobState state = JobState::Running;
  std::vector<std::string> devices;  // drain order
  std::optional<std::string> current_device;
  std::vector<AcquisitionResult> results;
};

enum class AcquireMode { All, Selected };

/// The evidence-side agent: inventory, unlock, queue, and one acquisition
/// driver at a time.
class ClientAgent {
 public:
  ClientAgent(ClientConfig config, Connector connector = {});
  ~ClientAgent();
  ClientAgent(const ClientAgent&) = delete;
  ClientAgent& operator=(const ClientAgent&) = delete;

  const ClientConfig& config() const { return config_; }
  EventLog& events() { return events_; }
  const EventLog& events() const { return events_; }

  std::vector<InventoryEntry> inventory() const;
  void rescan();

  /// Throws BadPassphrase / Locked.
  std::string unlock(std::string_view passphrase);
  bool valid_token(std::string_view token) const { return gate_.valid_token(token); }
  bool unlocked() const { return gate_.unlocked(); }

  /// Replaces the queue. Throws UnknownDevice, DeviceActive, DuplicatePriority.
  void set_priorities(const std::map<std::string, std::uint32_t>& priorities);
  std::vector<std::string> queue() const;

  /// Starts a background job. Throws Unauthorized, NoDevices, DeviceActive
  /// (a job is already running).
  std::string start_acquire(AcquireMode mode);
  /// Runs to completion on the calling thread.
  JobStatus acquire(AcquireMode mode);
  std::vector<AcquisitionResult> acquire_all() { return acquire(AcquireMode::All).results; }

  std::optional<JobStatus> job(const std::string& id) const;
  /// Throws NotFound for an unknown job.
  void abort(const std::string& id);
  /// Blocks until the job leaves Running.
  std::optional<JobStatus> wait(const std::string& id, std::chrono::milliseconds timeout) const;

  AcquisitionOptions acquisition_options() const;

 private:
  std::string prepare_job(AcquireMode mode);
  void run_job(const std::string& id);
  void set_state(const std::string& device_id, SelectionState state, const std::string& error = {});

  ClientConfig config_;
  Connector connector_;
  PassphraseGate gate_;
  EventLog events_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<InventoryEntry> inventory_;
  std::map<std::string, JobStatus> jobs_;
  std::map<std::string, bool> abort_flags_;
  std::optional<std::string> active_job_;
  std::thread worker_;
  std::uint64_t job_counter_ = 0;
};

}  // namespace raft
