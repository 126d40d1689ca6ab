#include "raft/client.hpp"

#include <openssl/crypto.h>
#include <openssl/rand.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <set>

#include "blocking_queue.hpp"
#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "raft/imaging.hpp"
#include "text_util.hpp"

namespace raft {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

bool parse_bool(const std::string& key, std::string_view v) {
  std::string s(v);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  throw Error(ErrorCode::ParseError, key + ": expected a boolean, got '" + std::string(v) + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, key + ": expected a number, got '" + v + "'");
  }
}

}  // namespace

ClientConfig parse_client_config(std::string_view text) {
  ClientConfig cfg;
  FaultPlan plan;
  bool any_fault = false;
  for (const auto& [key, value] : detail::parse_key_values(text)) {
    if (key == "server_host") {
      cfg.server_host = value;
    } else if (key == "server_port") {
      const auto port = detail::parse_u64(value);
      if (port == 0 || port > 65535) throw Error(ErrorCode::ParseError, "server_port out of range");
      cfg.server_port = static_cast<std::uint16_t>(port);
    } else if (key == "passphrase_digest") {
      cfg.passphrase_digest = from_hex(value);
      if (cfg.passphrase_digest.size() != 32) {
        throw Error(ErrorCode::ParseError, "passphrase_digest must be 64 hex digits (SHA-256)");
      }
    } else if (key == "scan_root") {
      cfg.scan_root = value;
    } else if (key == "chunk_size") {
      cfg.chunk_size = detail::parse_u64(value);
      if (cfg.chunk_size == 0) throw Error(ErrorCode::InvalidChunkSize, "chunk_size must be positive");
    } else if (key == "chunk_digest_algorithm") {
      cfg.chunk_digest_algorithm = parse_algorithm(value);
    } else if (key == "whole_image_algorithm") {
      cfg.whole_image_algorithm = parse_algorithm(value);
    } else if (key == "insecure_transport_ok") {
      cfg.insecure_transport_ok = parse_bool(key, value);
    } else if (key == "case_id") {
      cfg.case_id = value;
    } else if (key == "retry_limit") {
      cfg.retry_limit = static_cast<std::uint32_t>(detail::parse_u64(value));
    } else if (key == "max_reconnects") {
      cfg.max_reconnects = static_cast<std::uint32_t>(detail::parse_u64(value));
    } else if (key == "fault_seed") {
      plan.seed = detail::parse_u64(value);
      any_fault = true;
    } else if (key == "fault_corrupt_chunk_probability") {
      plan.corrupt_chunk_probability = parse_double(key, value);
      any_fault = true;
    } else if (key == "fault_drop_connection_after_bytes") {
      plan.drop_connection_after_bytes = detail::parse_u64(value);
      any_fault = true;
    } else if (key == "fault_latency_ms") {
      plan.latency.fixed = std::chrono::milliseconds(detail::parse_u64(value));
      any_fault = true;
    } else if (key == "fault_jitter_ms") {
      plan.latency.jitter = std::chrono::milliseconds(detail::parse_u64(value));
      any_fault = true;
    } else if (key == "fault_bandwidth_bps") {
      plan.bandwidth_limit_bps = parse_double(key, value);
      any_fault = true;
    } else {
      throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
  }
  if (cfg.passphrase_digest.empty()) throw Error(ErrorCode::ParseError, "passphrase_digest is required");
  if (any_fault) {
    plan.validate();
    cfg.faults = plan;
  }
  return cfg;
}

ClientConfig load_client_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto cfg = parse_client_config(text);
  if (!cfg.scan_root.empty() && cfg.scan_root.is_relative()) {
    cfg.scan_root = path.parent_path() / cfg.scan_root;
  }
  return cfg;
}

std::vector<std::uint8_t> passphrase_digest(std::string_view passphrase) {
  return digest_text(HashAlgorithm::SHA256, passphrase).bytes();
}

// ---------------------------------------------------------------- inventory

std::string_view selection_state_name(SelectionState s) {
  switch (s) {
    case SelectionState::Unselected: return "unselected";
    case SelectionState::Queued: return "queued";
    case SelectionState::Active: return "active";
    case SelectionState::Done: return "done";
    case SelectionState::Failed: return "failed";
  }
  return "?";
}

std::vector<InventoryEntry> enumerate_devices(const fs::path& scan_root) {
  std::error_code ec;
  if (scan_root.empty() || !fs::is_directory(scan_root, ec)) {
    throw Error(ErrorCode::ScanRootMissing, "scan root '" + scan_root.string() + "' is not a directory");
  }
  std::vector<InventoryEntry> out;
  for (const auto& entry : fs::directory_iterator(scan_root, ec)) {
    if (entry.is_directory(ec)) continue;
    const auto name = entry.path().filename().string();
    if (name.empty() || name.front() == '.') continue;
    InventoryEntry item;
    item.device.device_id = name;
    item.device.label = entry.path().stem().string();
    item.device.path = entry.path().string();
    item.device.source_kind = entry.is_block_file(ec) ? SourceKind::BlockDevice : SourceKind::FileBacked;
    try {
      item.device.total_bytes = probe_source_size(entry.path());
      if (item.device.total_bytes == 0) {
        item.state = SelectionState::Failed;
        item.error = std::string(to_string(ErrorCode::ZeroSizeSource)) + ": source is empty";
      }
    } catch (const Error& e) {
      item.state = SelectionState::Failed;
      item.error = e.what();
    }
    out.push_back(std::move(item));
  }
  std::sort(out.begin(), out.end(), [](const InventoryEntry& a, const InventoryEntry& b) {
    return std::tie(a.device.label, a.device.device_id) < std::tie(b.device.label, b.device.device_id);
  });
  return out;
}

std::vector<std::string> queue_order(const std::vector<InventoryEntry>& inventory) {
  std::vector<const InventoryEntry*> queued;
  for (const auto& e : inventory) {
    if (e.priority) queued.push_back(&e);
  }
  std::sort(queued.begin(), queued.end(),
            [](const InventoryEntry* a, const InventoryEntry* b) { return *a->priority < *b->priority; });
  std::vector<std::string> out;
  for (const auto* e : queued) out.push_back(e->device.device_id);
  return out;
}

// ---------------------------------------------------------------- BIOS table

namespace {

struct BiosRow {
  const char* manufacturer;
  std::vector<std::string> passwords;
};

const std::vector<BiosRow>& bios_table() {
  static const std::vector<BiosRow> rows = {
      {"AWARD",
       {"01322222", "589589",   "589721",   "595595",   "598598",   "ALFAROME", "ALLY",    "ALLy",
        "aLLY",     "aLLy",     "aPAf",     "award",    "AWARD PW", "AWARD SW", "AWARD?SW", "AWARD_PW",
        "AWARD_SW", "AWKWARD",  "awkward",  "BIOSTAR",  "CONCAT",   "CONDO",    "Condo",   "condo",
        "d8on",     "djonet",   "HLT",      "J256",     "J262",     "j262",     "j322",    "j332",
        "J64",      "KDD",      "LKWPETER", "Lkwpeter", "PINT",     "pint",     "SER",     "SKY_FOX",
        "SYXZ",     "syxz",     "TTPTHA",   "ZAAAADA",  "ZAAADA",   "ZBAAACA",  "ZJAAADC"}},
      {"AMI",
       {"AMI", "AAAMMMIII", "BIOS", "PASSWORD", "HEWITT RAND", "AMI?SW", "AMI_SW", "LKWPETER", "A.M.I.",
        "CONDO"}},
      {"PHOENIX", {"BIOS", "CMOS", "phoenix", "PHOENIX", "Phoenix"}},
  };
  return rows;
}

std::string upper(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

}  // namespace

BiosLookupResult lookup_bios_backdoor(std::string_view manufacturer) {
  const auto key = upper(detail::trim(manufacturer));
  for (const auto& row : bios_table()) {
    if (key == row.manufacturer) return {row.manufacturer, row.passwords, {}};
  }
  BiosLookupResult out;
  out.advisory = "no backdoor passwords known for manufacturer '" + std::string(manufacturer) +
                 "'; known manufacturers: AWARD, AMI, PHOENIX";
  return out;
}

std::vector<std::string> bios_manufacturers() {
  std::vector<std::string> out;
  for (const auto& row : bios_table()) out.emplace_back(row.manufacturer);
  return out;
}

// ---------------------------------------------------------------- passphrase gate

PassphraseGate::PassphraseGate(std::vector<std::uint8_t> digest) : digest_(std::move(digest)) {
  if (digest_.size() != 32) throw Error(ErrorCode::InvalidArgument, "passphrase digest must be 32 bytes");
}

std::string PassphraseGate::unlock(std::string_view passphrase) {
  const auto candidate = passphrase_digest(passphrase);
  std::lock_guard lock(mu_);
  if (failures_ >= kMaxFailures) throw Error(ErrorCode::Locked, "too many failed unlock attempts");
  if (CRYPTO_memcmp(candidate.data(), digest_.data(), digest_.size()) != 0) {
    ++failures_;
    if (failures_ >= kMaxFailures) throw Error(ErrorCode::Locked, "too many failed unlock attempts");
    throw Error(ErrorCode::BadPassphrase, "passphrase rejected");
  }
  failures_ = 0;
  std::uint8_t raw[24];
  RAND_bytes(raw, sizeof raw);
  tokens_.push_back(to_hex(raw));
  return tokens_.back();
}

bool PassphraseGate::valid_token(std::string_view token) const {
  std::lock_guard lock(mu_);
  bool found = false;
  for (const auto& t : tokens_) {
    if (t.size() == token.size() && CRYPTO_memcmp(t.data(), token.data(), t.size()) == 0) found = true;
  }
  return found;
}

bool PassphraseGate::unlocked() const {
  std::lock_guard lock(mu_);
  return !tokens_.empty();
}

bool PassphraseGate::locked() const {
  std::lock_guard lock(mu_);
  return failures_ >= kMaxFailures;
}

// ---------------------------------------------------------------- events

std::string_view progress_kind_name(ProgressKind k) {
  switch (k) {
    case ProgressKind::DeviceListed: return "device_listed";
    case ProgressKind::PrehashStarted: return "prehash_started";
    case ProgressKind::PrehashDone: return "prehash_done";
    case ProgressKind::ChunkSent: return "chunk_sent";
    case ProgressKind::ChunkAcked: return "chunk_acked";
    case ProgressKind::ChunkNacked: return "chunk_nacked";
    case ProgressKind::JobFinalized: return "job_finalized";
    case ProgressKind::Error: return "error";
  }
  return "?";
}

std::uint64_t EventLog::append(ProgressEvent event) {
  std::uint64_t id;
  {
    std::lock_guard lock(mu_);
    id = events_.size() + 1;
    event.id = id;
    events_.push_back(std::move(event));
  }
  cv_.notify_all();
  return id;
}

std::vector<ProgressEvent> EventLog::since(std::uint64_t after) const {
  std::lock_guard lock(mu_);
  if (after >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(after), events_.end()};
}

std::vector<ProgressEvent> EventLog::wait_since(std::uint64_t after, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return events_.size() > after; });
  if (after >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(after), events_.end()};
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

// ---------------------------------------------------------------- acquisition driver

std::uint64_t AcquisitionResult::nak_count() const {
  std::uint64_t n = 0;
  for (const auto& c : connections) n += c.nacked.size();
  return n;
}

namespace {

struct Inbound {
  std::optional<wire::Message> message;  // nullopt: stream ended
  std::string error;
};

enum class ConnectionEnd { Finished, Lost, Aborted };

class Driver {
 public:
  Driver(const DeviceDescriptor& device, const AcquisitionOptions& options, const EventSink& sink,
         AcquisitionResult& result)
      : device_(device), options_(options), sink_(sink), result_(result) {}

  void emit(ProgressKind kind, std::optional<std::uint64_t> seq = std::nullopt,
            std::optional<std::uint32_t> attempt = std::nullopt, std::string detail = {}) {
    if (!sink_) return;
    ProgressEvent ev;
    ev.kind = kind;
    ev.at = now_utc();
    ev.job_id = options_.job_id;
    ev.device_id = device_.device_id;
    ev.session_id = result_.session_id;
    ev.seq = seq;
    ev.attempt = attempt;
    ev.detail = std::move(detail);
    sink_(std::move(ev));
  }

  bool aborted() const { return options_.should_abort && options_.should_abort(); }

  ConnectionEnd run_connection(const ReadOnlySource& source, const wire::JobParams& job, Endpoint& endpoint,
                               ConnectionTrace& trace) {
    detail::BlockingQueue<Inbound> inbox;
    std::thread reader([&] {
      try {
        while (auto msg = read_message(endpoint)) inbox.push({std::move(msg), {}});
        inbox.push({std::nullopt, "connection closed by peer"});
      } catch (const Error& e) {
        inbox.push({std::nullopt, e.what()});
      }
    });
    struct Join {
      Endpoint& ep;
      std::thread& t;
      ~Join() {
        ep.close();
        if (t.joinable()) t.join();
      }
    } join{endpoint, reader};

    std::uint8_t nonce[16];
    RAND_bytes(nonce, sizeof nonce);
    auto state = wire::ClientSessionState::initial(job, options_.passphrase_digest, options_.retry_limit,
                                                   options_.window);
    state.client_nonce.assign(nonce, nonce + sizeof nonce);

    std::deque<wire::ClientEvent> local;
    local.emplace_back(wire::client_event::Start{});
    auto idle_deadline = std::chrono::steady_clock::now() + options_.idle_timeout;

    while (true) {
      if (state.phase == wire::ClientPhase::Done || state.phase == wire::ClientPhase::Failed) break;
      if (aborted()) {
        try {
          write_message(endpoint, wire::Abort{"aborted by operator"});
        } catch (const Error&) {
        }
        trace.end_reason = "aborted";
        result_.error = std::nullopt;
        result_.detail = "aborted by operator";
        return ConnectionEnd::Aborted;
      }

      wire::ClientEvent event;
      if (!local.empty()) {
        event = std::move(local.front());
        local.pop_front();
      } else {
        auto item = inbox.pop_for(std::chrono::milliseconds(100));
        if (!item) {
          if (std::chrono::steady_clock::now() > idle_deadline) {
            event = wire::client_event::Timeout{};
          } else {
            continue;
          }
        } else if (!item->message) {
          trace.end_reason = item->error;
          return ConnectionEnd::Lost;
        } else {
          idle_deadline = std::chrono::steady_clock::now() + options_.idle_timeout;
          note_inbound(*item->message, state, trace);
          event = wire::client_event::Inbound{std::move(*item->message)};
        }
      }

      const bool was_timeout = std::holds_alternative<wire::client_event::Timeout>(event);
      auto step = wire::client_step(std::move(state), event);
      state = std::move(step.state);
      if (!state.session_id.empty()) result_.session_id = state.session_id;

      for (auto& action : step.actions) {
        if (const auto* req = std::get_if<wire::RequestChunk>(&action)) {
          const auto span = plan_span(job, req->seq);
          auto payload = read_chunk(source, span, job.chunk_digest_algorithm);
          local.emplace_back(wire::client_event::ChunkReady{
              req->seq, std::make_shared<const wire::Bytes>(std::move(payload.bytes)), std::move(payload.digest)});
          continue;
        }
        const auto& msg = std::get<wire::Message>(action);
        try {
          write_message(endpoint, msg);
        } catch (const Error& e) {
          trace.end_reason = e.what();
          return ConnectionEnd::Lost;
        }
        if (const auto* data = std::get_if<wire::ChunkData>(&msg)) {
          trace.sent.push_back(data->seq);
          emit(ProgressKind::ChunkSent, data->seq, state.attempts[data->seq]);
        }
      }
      if (was_timeout) {
        trace.end_reason = "no traffic from server";
        return ConnectionEnd::Lost;
      }
    }

    if (state.final_result) result_.recomputed_digest = state.final_result->recomputed_digest;
    if (state.phase == wire::ClientPhase::Done) {
      result_.verdict = Verdict::Verified;
      result_.error = std::nullopt;
      trace.end_reason = "verified";
    } else {
      result_.verdict = Verdict::Failed;
      result_.error = state.error;
      result_.detail = state.failure_reason;
      trace.end_reason = state.failure_reason;
    }
    return ConnectionEnd::Finished;
  }

 private:
  static ChunkSpan plan_span(const wire::JobParams& job, std::uint64_t seq) {
    return {seq, seq * job.chunk_size, job.chunk_length(seq)};
  }

  void note_inbound(const wire::Message& msg, const wire::ClientSessionState& state, ConnectionTrace& trace) {
    if (const auto* accept = std::get_if<wire::JobAccept>(&msg)) {
      trace.resume_from = accept->resume_from_seq;
      result_.session_id = accept->session_id;
    } else if (const auto* ack = std::get_if<wire::Ack>(&msg)) {
      trace.acked.push_back(ack->seq);
      emit(ProgressKind::ChunkAcked, ack->seq);
    } else if (const auto* nak = std::get_if<wire::Nak>(&msg)) {
      trace.nacked.push_back(nak->seq);
      const auto it = state.attempts.find(nak->seq);
      emit(ProgressKind::ChunkNacked, nak->seq, it == state.attempts.end() ? 0 : it->second, nak->reason);
    }
  }

  const DeviceDescriptor& device_;
  const AcquisitionOptions& options_;
  const EventSink& sink_;
  AcquisitionResult& result_;
};

}  // namespace

AcquisitionResult run_acquisition(const Connector& connect, const DeviceDescriptor& device,
                                  const AcquisitionOptions& options, const EventSink& sink) {
  AcquisitionResult result;
  result.device_id = device.device_id;
  Driver driver(device, options, sink, result);

  auto fail = [&](ErrorCode code, const std::string& detail) {
    result.verdict = Verdict::Failed;
    result.error = code;
    result.detail = detail;
    driver.emit(ProgressKind::Error, std::nullopt, std::nullopt, detail);
  };

  std::optional<ReadOnlySource> source;
  wire::JobParams job;
  try {
    source.emplace(open_source(device));
    driver.emit(ProgressKind::PrehashStarted, std::nullopt, std::nullopt, std::string(algorithm_name(options.whole_image_algorithm)));
    auto whole = prehash_source(*source, options.whole_image_algorithm);
    driver.emit(ProgressKind::PrehashDone, std::nullopt, std::nullopt, whole.hex());
    result.whole_image_digest = whole;
    job.case_id = options.case_id;
    job.device = device;
    job.device.path.clear();
    job.chunk_size = options.chunk_size;
    job.chunk_digest_algorithm = options.chunk_digest_algorithm;
    job.whole_image_digest = whole;
    plan_chunks(device.total_bytes, options.chunk_size);
  } catch (const Error& e) {
    fail(e.code(), e.what());
    return result;
  }

  for (std::uint32_t attempt = 0;; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options.reconnect_delay);
    std::unique_ptr<Endpoint> endpoint;
    try {
      endpoint = connect();
      require_secure_channel(*endpoint, options.insecure_transport_ok);
    } catch (const Error& e) {
      const bool retryable = e.code() == ErrorCode::ConnectFailed || e.code() == ErrorCode::ConnectionLost;
      if (!retryable || attempt >= options.max_reconnects) {
        fail(e.code(), e.what());
        return result;
      }
      continue;
    }
    result.connections.emplace_back();
    ConnectionEnd end;
    try {
      end = driver.run_connection(*source, job, *endpoint, result.connections.back());
    } catch (const Error& e) {
      fail(e.code(), e.what());
      return result;
    }
    if (end == ConnectionEnd::Aborted) {
      result.verdict = Verdict::Failed;
      driver.emit(ProgressKind::Error, std::nullopt, std::nullopt, "aborted by operator");
      return result;
    }
    if (end == ConnectionEnd::Finished) {
      driver.emit(ProgressKind::JobFinalized, std::nullopt, std::nullopt, std::string(verdict_name(result.verdict)));
      if (!result.verified()) {
        driver.emit(ProgressKind::Error, std::nullopt, std::nullopt,
                    (result.error ? std::string(to_string(*result.error)) + ": " : std::string()) + result.detail);
      }
      return result;
    }
    if (attempt >= options.max_reconnects) {
      fail(ErrorCode::ConnectionLost, "connection lost: " + result.connections.back().end_reason);
      return result;
    }
  }
}

// ---------------------------------------------------------------- agent

std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    case JobState::Aborted: return "aborted";
  }
  return "?";
}

ClientAgent::ClientAgent(ClientConfig config, Connector connector)
    : config_(std::move(config)), connector_(std::move(connector)), gate_(config_.passphrase_digest) {
  if (!connector_) {
    const auto host = config_.server_host;
    const auto port = config_.server_port;
    const auto faults = config_.faults;
    connector_ = [host, port, faults]() -> std::unique_ptr<Endpoint> {
      auto ep = stream_connect(host, port);
      if (faults) return wrap_with_faults(std::move(ep), *faults);
      return ep;
    };
  }
  if (!config_.scan_root.empty()) rescan();
}

ClientAgent::~ClientAgent() {
  {
    std::lock_guard lock(mu_);
    for (auto& [id, flag] : abort_flags_) flag = true;
  }
  if (worker_.joinable()) worker_.join();
}

std::vector<InventoryEntry> ClientAgent::inventory() const {
  std::lock_guard lock(mu_);
  return inventory_;
}

void ClientAgent::rescan() {
  auto found = enumerate_devices(config_.scan_root);
  {
    std::lock_guard lock(mu_);
    if (active_job_) throw Error(ErrorCode::DeviceActive, "cannot rescan while a job is running");
    inventory_ = found;
  }
  for (const auto& e : found) {
    ProgressEvent ev;
    ev.kind = ProgressKind::DeviceListed;
    ev.at = now_utc();
    ev.device_id = e.device.device_id;
    ev.detail = e.error.empty() ? std::to_string(e.device.total_bytes) : e.error;
    events_.append(std::move(ev));
  }
}

std::string ClientAgent::unlock(std::string_view passphrase) { return gate_.unlock(passphrase); }

void ClientAgent::set_priorities(const std::map<std::string, std::uint32_t>& priorities) {
  std::lock_guard lock(mu_);
  std::set<std::uint32_t> seen;
  for (const auto& [id, priority] : priorities) {
    auto it = std::find_if(inventory_.begin(), inventory_.end(),
                           [&](const InventoryEntry& e) { return e.device.device_id == id; });
    if (it == inventory_.end()) throw Error(ErrorCode::UnknownDevice, "no device '" + id + "'");
    if (it->state == SelectionState::Active) throw Error(ErrorCode::DeviceActive, "device '" + id + "' is being acquired");
    if (!seen.insert(priority).second) {
      throw Error(ErrorCode::DuplicatePriority, "priority " + std::to_string(priority) + " used twice");
    }
  }
  for (auto& e : inventory_) {
    if (e.state == SelectionState::Active) continue;
    auto it = priorities.find(e.device.device_id);
    if (it == priorities.end()) {
      e.priority.reset();
      if (e.state == SelectionState::Queued) e.state = SelectionState::Unselected;
    } else {
      e.priority = it->second;
      if (e.state == SelectionState::Unselected) e.state = SelectionState::Queued;
    }
  }
}

std::vector<std::string> ClientAgent::queue() const {
  std::lock_guard lock(mu_);
  return queue_order(inventory_);
}

AcquisitionOptions ClientAgent::acquisition_options() const {
  AcquisitionOptions o;
  o.case_id = config_.case_id;
  o.chunk_size = config_.chunk_size;
  o.chunk_digest_algorithm = config_.chunk_digest_algorithm;
  o.whole_image_algorithm = config_.whole_image_algorithm;
  o.passphrase_digest = config_.passphrase_digest;
  o.retry_limit = config_.retry_limit;
  o.insecure_transport_ok = config_.insecure_transport_ok;
  o.max_reconnects = config_.max_reconnects;
  return o;
}

std::string ClientAgent::prepare_job(AcquireMode mode) {
  if (!gate_.unlocked()) throw Error(ErrorCode::Unauthorized, "agent is locked");
  std::lock_guard lock(mu_);
  if (active_job_) throw Error(ErrorCode::DeviceActive, "job " + *active_job_ + " is still running");
  std::vector<std::string> order;
  if (mode == AcquireMode::All) {
    for (const auto& e : inventory_) order.push_back(e.device.device_id);
  } else {
    order = queue_order(inventory_);
  }
  if (order.empty()) {
    throw Error(ErrorCode::NoDevices, mode == AcquireMode::All ? "no devices found" : "no devices queued");
  }
  const auto id = "job-" + std::to_string(++job_counter_);
  JobStatus status;
  status.id = id;
  status.devices = order;
  jobs_[id] = status;
  abort_flags_[id] = false;
  active_job_ = id;
  for (auto& e : inventory_) {
    if (std::find(order.begin(), order.end(), e.device.device_id) != order.end()) {
      e.state = SelectionState::Queued;
    }
  }
  return id;
}

void ClientAgent::set_state(const std::string& device_id, SelectionState state, const std::string& error) {
  for (auto& e : inventory_) {
    if (e.device.device_id == device_id) {
      e.state = state;
      if (!error.empty()) e.error = error;
    }
  }
}

void ClientAgent::run_job(const std::string& id) {
  std::vector<std::string> order;
  std::vector<DeviceDescriptor> devices;
  {
    std::lock_guard lock(mu_);
    order = jobs_[id].devices;
    for (const auto& dev_id : order) {
      for (const auto& e : inventory_) {
        if (e.device.device_id == dev_id) devices.push_back(e.device);
      }
    }
  }
  auto options = acquisition_options();
  options.job_id = id;
  options.should_abort = [this, id] {
    std::lock_guard lock(mu_);
    return abort_flags_[id];
  };
  EventSink sink = [this](ProgressEvent ev) { events_.append(std::move(ev)); };

  bool aborted = false;
  bool any_failed = false;
  for (const auto& device : devices) {
    {
      std::lock_guard lock(mu_);
      if (abort_flags_[id]) {
        aborted = true;
        break;
      }
      jobs_[id].current_device = device.device_id;
      set_state(device.device_id, SelectionState::Active);
    }
    auto result = run_acquisition(connector_, device, options, sink);
    std::lock_guard lock(mu_);
    if (abort_flags_[id]) aborted = true;
    set_state(device.device_id, result.verified() ? SelectionState::Done : SelectionState::Failed,
              result.verified() ? std::string() : result.detail);
    if (!result.verified()) any_failed = true;
    jobs_[id].results.push_back(std::move(result));
    if (aborted) break;
  }
  {
    std::lock_guard lock(mu_);
    auto& job = jobs_[id];
    job.current_device.reset();
    job.state = aborted ? JobState::Aborted : any_failed ? JobState::Failed : JobState::Done;
    for (auto& e : inventory_) {
      if (e.state == SelectionState::Queued && !e.priority) e.state = SelectionState::Unselected;
    }
    active_job_.reset();
  }
  cv_.notify_all();
}

std::string ClientAgent::start_acquire(AcquireMode mode) {
  const auto id = prepare_job(mode);
  if (worker_.joinable()) worker_.join();
  worker_ = std::thread([this, id] { run_job(id); });
  return id;
}

JobStatus ClientAgent::acquire(AcquireMode mode) {
  const auto id = prepare_job(mode);
  run_job(id);
  std::lock_guard lock(mu_);
  return jobs_[id];
}

std::optional<JobStatus> ClientAgent::job(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

void ClientAgent::abort(const std::string& id) {
  std::lock_guard lock(mu_);
  auto it = abort_flags_.find(id);
  if (it == abort_flags_.end()) throw Error(ErrorCode::NotFound, "no job '" + id + "'");
  it->second = true;
}

std::optional<JobStatus> ClientAgent::wait(const std::string& id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] {
    auto it = jobs_.find(id);
    return it == jobs_.end() || it->second.state != JobState::Running;
  });
  auto it = jobs_.find(id);
  if (it == jobs_.end()) return std::nullopt;
  return it->second;
}

}  // namespace raft
