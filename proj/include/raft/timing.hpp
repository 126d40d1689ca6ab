#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "raft/evidence.hpp"
#include "raft/trace.hpp"
#include "raft/wire.hpp"

namespace raft {

/// All quantities in bits and bits per second.
struct TimingInputs {
  double image_bits = 0;       // H
  double bandwidth_bps = 0;    // B
  double chunk_bits = 0;       // C
  double verify_bps = 0;       // V
};

/// T = H/B + C/V. Throws NonPositiveInput.
double estimate_total_time(const TimingInputs& in);

/// Extension, not part of the original model: scales the transfer term by
/// (1 + p * retries) to account for expected retransmissions.
double estimate_with_retransmissions(const TimingInputs& in, double corrupt_probability, double retries);

struct BenchSample {
  HashAlgorithm algorithm = HashAlgorithm::SHA256;
  std::uint64_t size_bytes = 0;
  double seconds = 0;              // best of the repeats
  double normalized_seconds = 0;   // seconds * 2^30 / size_bytes
};

struct BenchSummary {
  HashAlgorithm algorithm = HashAlgorithm::SHA256;
  double mean_normalized = 0;
  /// max |x - mean| / mean over the sizes.
  double max_relative_deviation = 0;
};

struct BenchReport {
  std::vector<BenchSample> samples;
  std::vector<BenchSummary> summaries;

  const BenchSummary* summary(HashAlgorithm alg) const;
};

struct BenchConfig {
  std::vector<std::uint64_t> sizes;
  std::vector<HashAlgorithm> algorithms;
  std::filesystem::path work_dir;  // zero fixtures are created and removed here
  unsigned repeats = 3;
};

/// Sequential wall-clock benchmark of digest_file over zero-filled files.
BenchReport bench_hash(const BenchConfig& config);

std::string format_bench_tsv(const BenchReport& report);
std::string format_bench_json(const BenchReport& report);

/// Where the time of one acquisition went, from JOB_ACCEPT to FINAL_RESULT.
struct OverheadReport {
  double total_seconds = 0;
  double transfer_seconds = 0;        // until the last chunk finished arriving
  double trailing_verify_seconds = 0; // verification of the last chunk
  double recombination_seconds = 0;   // append of the last chunk only
  double final_hash_seconds = 0;      // whole-image re-hash
  double overhead_seconds = 0;        // final_hash + recombination
  double overhead_percent = 0;
};

/// Throws IncompleteTrace when the trace lacks the job start, a chunk or the final result.
OverheadReport measure_overhead(const Trace& trace);

/// Deterministic discrete-event model of one acquisition. The real client and
/// server state machines run against a virtual clock: the uplink is serial and
/// each CHUNK_DATA occupies it for `transfer_seconds`, other frames are free,
/// the server has one verifier that needs `verify_seconds` per chunk.
struct SimulationConfig {
  std::uint64_t chunk_count = 10;
  std::uint64_t chunk_bytes = 64;  // real payload size fed to the machines
  double transfer_seconds = 0.1;
  double verify_seconds = 0.02;
  double append_seconds = 0.0;
  double final_verify_seconds = 0.0;
  double downlink_seconds = 0.0;  // server-to-client latency per frame
  std::uint32_t window = 2;
  std::uint32_t retry_limit = 5;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA256;
  std::uint64_t seed = 1;  // payload content
  /// (seq, attempt starting at 1) -> corrupt this transmission.
  std::function<bool(std::uint64_t seq, std::uint32_t attempt)> corrupt;
  /// Drop the connection once this many CHUNK_DATA frames have been delivered.
  std::optional<std::uint64_t> drop_after_chunk_frames;
  std::uint32_t max_reconnects = 1;
};

struct SimulatedConnection {
  std::uint64_t resume_from = 0;
  std::vector<std::uint64_t> sent;
  std::vector<std::uint64_t> acked;
  std::vector<std::uint64_t> nacked;
};

struct SimulationResult {
  double total_seconds = 0;
  wire::ClientPhase client_phase = wire::ClientPhase::Connected;
  wire::ServerPhase server_phase = wire::ServerPhase::AwaitingAuth;
  std::optional<ErrorCode> client_error;
  bool verified = false;
  std::uint64_t corrupted = 0;
  std::uint64_t appended = 0;
  std::vector<SimulatedConnection> connections;
  Trace trace;  // server side, same shape as a live session trace

  std::uint64_t nak_count() const;
};

SimulationResult simulate_pipeline(const SimulationConfig& config);

}  // namespace raft
