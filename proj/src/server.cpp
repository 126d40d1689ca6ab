#include "raft/server.hpp"

#include <fcntl.h>
#include <openssl/rand.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <ctime>
#include <deque>
#include <fstream>

#include "blocking_queue.hpp"
#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "text_util.hpp"

namespace raft {

std::string_view trace_kind_name(TraceKind kind) {
  switch (kind) {
    case TraceKind::JobAccepted: return "job_accepted";
    case TraceKind::ChunkReceived: return "chunk_received";
    case TraceKind::ChunkVerify: return "chunk_verify";
    case TraceKind::ChunkAppend: return "chunk_append";
    case TraceKind::Nak: return "nak";
    case TraceKind::FinalVerify: return "final_verify";
    case TraceKind::FinalResult: return "final_result";
  }
  return "?";
}

namespace fs = std::filesystem;

void check_path_component(const std::string& what, const std::string& value) {
  if (value.empty() || value == "." || value == ".." ||
      value.find_first_of(std::string_view("/\\\0\n", 4)) != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, what + " '" + value + "' is not usable as a directory name");
  }
}

// ---------------------------------------------------------------- store

EvidenceStore::EvidenceStore(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw Error(ErrorCode::StoreUnwritable, root_.string() + ": " + ec.message());
  if (::access(root_.c_str(), W_OK | X_OK) != 0) {
    throw Error(ErrorCode::StoreUnwritable, root_.string() + ": " + std::strerror(errno));
  }
}

fs::path EvidenceStore::device_dir(const std::string& case_id, const std::string& session_id,
                                   const std::string& device_id) const {
  check_path_component("case_id", case_id);
  check_path_component("session_id", session_id);
  check_path_component("device_id", device_id);
  return root_ / case_id / session_id / device_id;
}

std::string EvidenceStore::new_session_id() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  std::uint8_t token[4];
  RAND_bytes(token, sizeof token);
  return std::string(stamp) + "-" + to_hex(token);
}

std::optional<EvidenceStore::Resumable> EvidenceStore::find_resumable(const std::string& case_id,
                                                                      const std::string& device_id) const {
  const auto case_dir = root_ / case_id;
  std::error_code ec;
  if (!fs::is_directory(case_dir, ec)) return std::nullopt;
  std::optional<Resumable> best;
  for (const auto& entry : fs::directory_iterator(case_dir, ec)) {
    const auto dir = entry.path() / device_id;
    if (!fs::exists(dir / "metadata.txt", ec)) continue;
    EvidenceRecord record;
    try {
      record = read_evidence_record(dir);
    } catch (const Error&) {
      continue;
    }
    if (record.final_verdict != Verdict::Pending) continue;
    const auto image = dir / "image.raw";
    const std::uint64_t length = fs::exists(image, ec) ? fs::file_size(image, ec) : 0;
    const auto chunk_size = record.manifest.chunk_size;
    std::uint64_t verified = length / chunk_size;
    if (length == record.device.total_bytes) verified = record.manifest.chunk_count();
    if (best && best->prior.session_id > record.session_id) continue;
    Resumable r{wire::PriorSession{record.session_id, *record.manifest.whole_image_digest, chunk_size, verified},
                std::move(record), dir};
    best = std::move(r);
  }
  return best;
}

std::vector<fs::path> EvidenceStore::record_dirs() const {
  std::vector<fs::path> out;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root_, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (it->path().filename() == "metadata.txt") out.push_back(it->path().parent_path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- verify / append

VerifyVerdict verify_chunk(std::span<const std::uint8_t> payload, const DigestValue& claimed) {
  auto recomputed = digest_bytes(claimed.algorithm(), payload);
  const bool ok = recomputed == claimed;
  return {ok, std::move(recomputed)};
}

ImageWriter::ImageWriter(fs::path path, std::uint64_t next_seq, std::uint64_t keep_bytes)
    : path_(std::move(path)), next_seq_(next_seq), length_(keep_bytes) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::IoError, path_.string() + ": " + std::strerror(errno));
  struct stat st {};
  ::fstat(fd_, &st);
  const auto existing = static_cast<std::uint64_t>(st.st_size);
  if (existing < keep_bytes) {
    ::close(fd_);
    throw Error(ErrorCode::IoError, path_.string() + " is shorter than its verified chunks");
  }
  if (existing > keep_bytes && ::ftruncate(fd_, static_cast<off_t>(keep_bytes)) != 0) {
    ::close(fd_);
    throw Error(ErrorCode::IoError, path_.string() + ": cannot drop unverified tail");
  }
  ::lseek(fd_, static_cast<off_t>(keep_bytes), SEEK_SET);
}

ImageWriter::~ImageWriter() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t ImageWriter::append(std::uint64_t seq, std::span<const std::uint8_t> payload) {
  if (seq != next_seq_) {
    throw Error(ErrorCode::OutOfOrderAppend,
                "append of chunk " + std::to_string(seq) + " while expecting " + std::to_string(next_seq_));
  }
  std::size_t done = 0;
  while (done < payload.size()) {
    const ssize_t n = ::write(fd_, payload.data() + done, payload.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::IoError, path_.string() + ": " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  length_ += payload.size();
  ++next_seq_;
  return length_;
}

void ImageWriter::sync() {
  if (fd_ >= 0) ::fdatasync(fd_);
}

// ---------------------------------------------------------------- finalize / metadata

namespace {

void write_file_atomically(const fs::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp);
    out << content;
    if (!out.flush()) throw Error(ErrorCode::IoError, "cannot write " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot replace " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

void write_metadata(const fs::path& device_dir, const EvidenceRecord& record) {
  write_file_atomically(device_dir / "metadata.txt", format_metadata(record));
}

EvidenceRecord read_evidence_record(const fs::path& device_dir) {
  auto record = parse_metadata(read_file(device_dir / "metadata.txt"));
  std::error_code ec;
  if (fs::exists(device_dir / "manifest.tsv", ec)) {
    auto chunks = parse_manifest(read_file(device_dir / "manifest.tsv"));
    if (chunks.size() != record.manifest.chunk_count()) {
      throw Error(ErrorCode::ParseError, "manifest.tsv chunk count disagrees with metadata");
    }
    for (std::size_t i = 0; i < chunks.size(); ++i) record.manifest.chunks[i].digest = chunks[i].digest;
  }
  return record;
}

FinalizeOutcome finalize(const fs::path& device_dir, EvidenceRecord& record) {
  FinalizeOutcome out;
  out.manifest = record.manifest;
  const auto expected = *record.manifest.whole_image_digest;
  const auto image = device_dir / "image.raw";

  std::ifstream in(image, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + image.string());
  Hasher whole(expected.algorithm());
  Hasher chunk(record.chunk_digest_algorithm);
  std::vector<std::uint8_t> buf(kStreamBufferSize);
  std::uint64_t position = 0;
  std::size_t chunk_index = 0;
  std::uint64_t chunk_filled = 0;
  while (true) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto n = static_cast<std::size_t>(in.gcount());
    if (n == 0) break;
    std::span<const std::uint8_t> bytes(buf.data(), n);
    whole.update(bytes);
    while (!bytes.empty() && chunk_index < out.manifest.chunks.size()) {
      auto& rec = out.manifest.chunks[chunk_index];
      const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(bytes.size(), rec.length - chunk_filled));
      chunk.update(bytes.first(take));
      chunk_filled += take;
      bytes = bytes.subspan(take);
      if (chunk_filled == rec.length) {
        rec.digest = chunk.finish();
        rec.state = ChunkState::Verified;
        rec.attempts = std::max<std::uint32_t>(rec.attempts, 1);
        ++chunk_index;
        chunk_filled = 0;
      }
    }
    position += n;
  }
  out.recomputed = whole.finish();

  if (position != record.device.total_bytes) {
    out.error = ErrorCode::ImageLengthMismatch;
    out.verdict = Verdict::Failed;
  } else {
    out.verdict = *out.recomputed == expected ? Verdict::Verified : Verdict::Failed;
  }

  if (chunk_index == out.manifest.chunks.size()) {
    write_file_atomically(device_dir / "manifest.tsv", format_manifest(out.manifest));
    record.manifest = out.manifest;
  }
  record.final_verdict = out.verdict;
  record.finalized_at = now_utc();
  record.metadata["recomputed_digest"] = out.recomputed->hex();
  if (out.error) record.metadata["final_error"] = std::string(to_string(*out.error));
  write_metadata(device_dir, record);
  return out;
}

// ---------------------------------------------------------------- config

ServerConfig parse_server_config(std::string_view text) {
  ServerConfig cfg;
  for (const auto& [key, value] : detail::parse_key_values(text)) {
    if (key == "store") {
      cfg.store_root = value;
    } else if (key == "bind_address") {
      cfg.bind_address = value;
    } else if (key == "port") {
      const auto port = detail::parse_u64(value);
      if (port > 65535) throw Error(ErrorCode::ParseError, "port out of range");
      cfg.port = static_cast<std::uint16_t>(port);
    } else if (key == "passphrase_digest") {
      auto digest = from_hex(value);
      if (digest.size() != 32) throw Error(ErrorCode::ParseError, "passphrase_digest must be 64 hex digits (SHA-256)");
      cfg.passphrase_digest = std::move(digest);
    } else if (key == "window") {
      cfg.window = static_cast<std::uint32_t>(detail::parse_u64(value));
      if (cfg.window == 0) throw Error(ErrorCode::ParseError, "window must be positive");
    } else if (key == "verify_delay_ms") {
      cfg.verify_delay = std::chrono::milliseconds(detail::parse_u64(value));
    } else {
      throw Error(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
  }
  return cfg;
}

ServerConfig load_server_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "config file " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto cfg = parse_server_config(text);
  if (!cfg.store_root.empty() && cfg.store_root.is_relative()) cfg.store_root = path.parent_path() / cfg.store_root;
  return cfg;
}

// ---------------------------------------------------------------- sessions

namespace {

std::vector<std::uint8_t> random_bytes(std::size_t n) {
  std::vector<std::uint8_t> out(n);
  RAND_bytes(out.data(), static_cast<int>(n));
  return out;
}

using SteadyTime = std::chrono::steady_clock::time_point;

struct VerifyTiming {
  SteadyTime start;
  SteadyTime end;
};

struct QueueItem {
  wire::ServerEvent event;
  SteadyTime at;
  std::optional<VerifyTiming> verify;
};

}  // namespace

class AcquisitionServer::Session {
 public:
  Session(AcquisitionServer& server, std::unique_ptr<Endpoint> endpoint)
      : server_(server), endpoint_(std::move(endpoint)), t0_(std::chrono::steady_clock::now()) {}

  void stop() { endpoint_->close(); }

  void run() {
    reader_ = std::thread([this] { read_loop(); });
    auto state = wire::ServerSessionState::initial(random_bytes(16), server_.config_.passphrase_digest,
                                                   server_.config_.window);
    std::deque<QueueItem> immediate;
    while (state.phase != wire::ServerPhase::Done && state.phase != wire::ServerPhase::Failed) {
      QueueItem item = immediate.empty() ? queue_.pop() : std::move(immediate.front());
      if (!immediate.empty()) immediate.pop_front();
      note_event(item);
      auto step = wire::server_step(std::move(state), item.event);
      state = std::move(step.state);
      for (auto& cmd : step.commands) {
        if (auto follow = execute(cmd, state)) immediate.push_back(std::move(*follow));
      }
      for (const auto& msg : step.messages) send(msg);
    }
    finish(state);
  }

 private:
  double seconds(SteadyTime t) const { return std::chrono::duration<double>(t - t0_).count(); }

  void read_loop() {
    try {
      while (auto msg = read_message(*endpoint_)) {
        queue_.push({wire::server_event::Inbound{std::move(*msg)}, std::chrono::steady_clock::now(), std::nullopt});
      }
    } catch (const Error& e) {
      log("reader: " + std::string(e.what()));
    }
    queue_.push({wire::server_event::Disconnected{}, std::chrono::steady_clock::now(), std::nullopt});
  }

  void note_event(const QueueItem& item) {
    std::visit(
        [&](const auto& ev) {
          using T = std::decay_t<decltype(ev)>;
          if constexpr (std::is_same_v<T, wire::server_event::Inbound>) {
            log("recv " + wire::describe(ev.message));
            if (const auto* data = std::get_if<wire::ChunkData>(&ev.message)) {
              outcome_.trace.push_back({TraceKind::ChunkReceived, data->seq, seconds(item.at), seconds(item.at)});
            }
          } else if constexpr (std::is_same_v<T, wire::server_event::VerifyDone>) {
            log("verify-done seq=" + std::to_string(ev.seq) + (ev.ok ? " ok" : " mismatch"));
            verify_ok_[ev.seq] = ev.ok;
            if (item.verify) {
              outcome_.trace.push_back(
                  {TraceKind::ChunkVerify, ev.seq, seconds(item.verify->start), seconds(item.verify->end)});
            }
          } else if constexpr (std::is_same_v<T, wire::server_event::Disconnected>) {
            log("disconnected");
          }
        },
        item.event);
  }

  std::optional<QueueItem> execute(const wire::ServerCommand& cmd, const wire::ServerSessionState& state) {
    return std::visit(
        [&](const auto& c) -> std::optional<QueueItem> {
          using T = std::decay_t<decltype(c)>;
          const auto now = std::chrono::steady_clock::now();
          if constexpr (std::is_same_v<T, wire::command::OpenJob>) {
            return QueueItem{open_job(c.job), now, std::nullopt};
          } else if constexpr (std::is_same_v<T, wire::command::Verify>) {
            start_verify(c);
          } else if constexpr (std::is_same_v<T, wire::command::Append>) {
            const auto start = std::chrono::steady_clock::now();
            if (!verify_ok_[c.seq]) ++outcome_.mismatched_appends;
            writer_->append(c.seq, *c.payload);
            const auto end = std::chrono::steady_clock::now();
            ++outcome_.appended;
            outcome_.trace.push_back({TraceKind::ChunkAppend, c.seq, seconds(start), seconds(end)});
            log("verified seq=" + std::to_string(c.seq) + " at " + format_timestamp(now_utc()) +
                " image_bytes=" + std::to_string(writer_->length()));
          } else if constexpr (std::is_same_v<T, wire::command::Discard>) {
            outcome_.trace.push_back({TraceKind::Nak, c.seq, seconds(now), seconds(now)});
            log("discard seq=" + std::to_string(c.seq));
          } else if constexpr (std::is_same_v<T, wire::command::FinalVerify>) {
            return QueueItem{final_verify(), std::chrono::steady_clock::now(), std::nullopt};
          } else if constexpr (std::is_same_v<T, wire::command::Close>) {
            log("close: " + c.reason);
          }
          (void)state;
          return std::nullopt;
        },
        cmd);
  }

  wire::ServerEvent open_job(const wire::JobParams& job) {
    try {
      check_path_component("case_id", job.case_id);
      check_path_component("device_id", job.device.device_id);
    } catch (const Error& e) {
      return wire::server_event::JobRefused{e.what()};
    }
    const auto key = job.case_id + "\n" + job.device.device_id;
    if (!server_.claim(key, server_.config_.resume_wait)) {
      return wire::server_event::JobRefused{"device " + job.device.device_id + " is busy in another session"};
    }
    claimed_ = key;

    const auto& store = server_.store_;
    std::uint64_t resume_from = 0;
    bool resumed = false;
    if (auto prior = store.find_resumable(job.case_id, job.device.device_id)) {
      try {
        resume_from = wire::resume_point(job, prior->prior);
        record_ = std::move(prior->record);
        dir_ = prior->dir;
        resumed = true;
        log("resuming session " + record_.session_id + " from seq " + std::to_string(resume_from));
      } catch (const Error& e) {
        log(std::string("resume refused: ") + e.what());
      }
    }
    try {
      if (!resumed) {
        record_ = EvidenceRecord{};
        record_.case_id = job.case_id;
        record_.session_id = EvidenceStore::new_session_id();
        record_.device = job.device;
        record_.manifest = ChunkManifest::plan(job.device, job.chunk_size);
        record_.manifest.whole_image_digest = job.whole_image_digest;
        record_.chunk_digest_algorithm = job.chunk_digest_algorithm;
        record_.opened_at = now_utc();
        dir_ = store.device_dir(job.case_id, record_.session_id, job.device.device_id);
        fs::create_directories(dir_);
        record_.image_path = fs::relative(dir_ / "image.raw", store.root()).generic_string();
      }
      writer_ = std::make_unique<ImageWriter>(dir_ / "image.raw", resume_from, resume_from * job.chunk_size);
      write_metadata(dir_, record_);
      open_log();
    } catch (const std::exception& e) {
      return wire::server_event::JobRefused{e.what()};
    }
    outcome_.session_id = record_.session_id;
    outcome_.case_id = job.case_id;
    outcome_.device_id = job.device.device_id;
    outcome_.record_dir = dir_;
    outcome_.resumed_from = resume_from;
    const auto now = std::chrono::steady_clock::now();
    outcome_.trace.push_back({TraceKind::JobAccepted, std::nullopt, seconds(now), seconds(now)});
    return wire::server_event::JobOpened{record_.session_id, resume_from};
  }

  void start_verify(const wire::command::Verify& c) {
    if (verifier_.joinable()) verifier_.join();
    verifier_ = std::thread([this, c] {
      const auto start = std::chrono::steady_clock::now();
      if (server_.config_.on_verify_start) server_.config_.on_verify_start(c.seq);
      if (server_.config_.verify_delay.count() > 0) std::this_thread::sleep_for(server_.config_.verify_delay);
      const auto verdict = verify_chunk(*c.payload, c.claimed);
      const auto end = std::chrono::steady_clock::now();
      queue_.push({wire::server_event::VerifyDone{c.seq, verdict.ok}, end, VerifyTiming{start, end}});
    });
  }

  wire::ServerEvent final_verify() {
    writer_->sync();
    writer_.reset();
    if (server_.config_.before_finalize) server_.config_.before_finalize(dir_ / "image.raw");
    const auto start = std::chrono::steady_clock::now();
    const auto result = finalize(dir_, record_);
    const auto end = std::chrono::steady_clock::now();
    outcome_.trace.push_back({TraceKind::FinalVerify, std::nullopt, seconds(start), seconds(end)});
    outcome_.verdict = result.verdict;
    if (result.error) outcome_.error = result.error;
    log("final verdict " + std::string(verdict_name(result.verdict)) + " recomputed=" + result.recomputed->hex());
    return wire::server_event::FinalDone{result.verdict == Verdict::Verified, *result.recomputed};
  }

  void send(const wire::Message& msg) {
    if (send_failed_) return;
    try {
      write_message(*endpoint_, msg);
      log("send " + wire::describe(msg));
      if (std::holds_alternative<wire::Ack>(msg)) ++outcome_.acks;
      if (std::holds_alternative<wire::Nak>(msg)) ++outcome_.naks;
      if (std::holds_alternative<wire::FinalResult>(msg)) {
        const auto now = std::chrono::steady_clock::now();
        outcome_.trace.push_back({TraceKind::FinalResult, std::nullopt, seconds(now), seconds(now)});
      }
    } catch (const Error& e) {
      send_failed_ = true;
      log(std::string("send failed: ") + e.what());
    }
  }

  void finish(const wire::ServerSessionState& state) {
    endpoint_->close();
    if (reader_.joinable()) reader_.join();
    if (verifier_.joinable()) verifier_.join();
    writer_.reset();
    outcome_.phase = state.phase;
    outcome_.error = outcome_.error ? outcome_.error : state.error;
    outcome_.reason = state.failure_reason;
    log("session end phase=" + std::string(wire::phase_name(state.phase)) +
        (state.failure_reason.empty() ? "" : " reason=" + state.failure_reason));
    log_.reset();
    if (claimed_) server_.release(*claimed_);
    server_.record(std::move(outcome_));
  }

  void open_log() {
    log_ = std::make_unique<std::ofstream>(dir_ / "transfer.log", std::ios::app);
    for (const auto& line : early_log_) *log_ << line;
    early_log_.clear();
    log_->flush();
  }

  void log(const std::string& text) {
    const auto mono_us =
        std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - t0_).count();
    std::string line = std::to_string(mono_us) + "\t" + format_timestamp(now_utc()) + "\t" + text + "\n";
    if (log_) {
      *log_ << line;
      log_->flush();
    } else {
      early_log_.push_back(std::move(line));
    }
  }

  AcquisitionServer& server_;
  std::unique_ptr<Endpoint> endpoint_;
  SteadyTime t0_;
  detail::BlockingQueue<QueueItem> queue_;
  std::thread reader_;
  std::thread verifier_;
  std::unique_ptr<ImageWriter> writer_;
  EvidenceRecord record_;
  fs::path dir_;
  std::optional<std::string> claimed_;
  std::map<std::uint64_t, bool> verify_ok_;
  bool send_failed_ = false;
  std::unique_ptr<std::ofstream> log_;
  std::vector<std::string> early_log_;
  SessionOutcome outcome_;
};

AcquisitionServer::AcquisitionServer(ServerConfig config)
    : config_(std::move(config)), store_(config_.store_root) {}

AcquisitionServer::~AcquisitionServer() { shutdown(); }

std::uint16_t AcquisitionServer::listen() {
  listener_ = std::make_unique<StreamListener>(config_.bind_address, config_.port);
  const auto port = listener_->port();
  accept_thread_ = std::thread([this] {
    while (true) {
      {
        std::lock_guard lock(mu_);
        if (stopping_) return;
      }
      auto endpoint = listener_->accept(std::chrono::milliseconds(100));
      if (endpoint) serve(std::move(endpoint));
    }
  });
  return port;
}

void AcquisitionServer::serve(std::unique_ptr<Endpoint> endpoint) {
  auto session = std::make_shared<Session>(*this, std::move(endpoint));
  std::lock_guard lock(mu_);
  if (stopping_) {
    session->stop();
    return;
  }
  sessions_.push_back(session);
  threads_.emplace_back([session] { session->run(); });
}

void AcquisitionServer::shutdown() {
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    if (stopping_ && threads_.empty() && !accept_thread_.joinable()) return;
    stopping_ = true;
    for (auto& s : sessions_) s->stop();
  }
  cv_.notify_all();
  if (listener_) listener_->close();
  if (accept_thread_.joinable()) accept_thread_.join();
  {
    std::lock_guard lock(mu_);
    for (auto& s : sessions_) s->stop();
    threads.swap(threads_);
  }
  for (auto& t : threads) t.join();
  std::lock_guard lock(mu_);
  sessions_.clear();
}

bool AcquisitionServer::claim(const std::string& key, std::chrono::milliseconds wait) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, wait, [&] { return stopping_ || !active_devices_.contains(key); })) return false;
  if (stopping_) return false;
  active_devices_.insert(key);
  return true;
}

void AcquisitionServer::release(const std::string& key) {
  {
    std::lock_guard lock(mu_);
    active_devices_.erase(key);
  }
  cv_.notify_all();
}

void AcquisitionServer::record(SessionOutcome outcome) {
  {
    std::lock_guard lock(mu_);
    outcomes_.push_back(std::move(outcome));
  }
  cv_.notify_all();
}

std::size_t AcquisitionServer::completed_sessions() const {
  std::lock_guard lock(mu_);
  return outcomes_.size();
}

bool AcquisitionServer::wait_for_sessions(std::size_t n, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return outcomes_.size() >= n; });
}

std::vector<SessionOutcome> AcquisitionServer::outcomes() const {
  std::lock_guard lock(mu_);
  return outcomes_;
}

void run_server(const ServerConfig& config, const std::function<bool()>& stop,
                const std::function<void(const std::string&)>& log) {
  AcquisitionServer server(config);
  const auto port = server.listen();
  log("raft server listening on " + config.bind_address + ":" + std::to_string(port) + " store=" +
      config.store_root.string());
  while (!stop()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  log("raft server shutting down");
  server.shutdown();
  log("raft server stopped after " + std::to_string(server.completed_sessions()) + " sessions");
}

}  // namespace raft
