#pragma once

// Shared domain types for acquisitions: devices, digests, chunk manifests and
// stored evidence records. Nothing in here touches the filesystem.

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace raft {

enum class HashAlgorithm : std::uint8_t { MD5 = 1, SHA1, SHA224, SHA256, SHA384, SHA512 };

inline constexpr HashAlgorithm kAllAlgorithms[] = {
    HashAlgorithm::MD5,    HashAlgorithm::SHA1,   HashAlgorithm::SHA224,
    HashAlgorithm::SHA256, HashAlgorithm::SHA384, HashAlgorithm::SHA512};

constexpr std::size_t digest_bits(HashAlgorithm alg) {
  switch (alg) {
    case HashAlgorithm::MD5: return 128;
    case HashAlgorithm::SHA1: return 160;
    case HashAlgorithm::SHA224: return 224;
    case HashAlgorithm::SHA256: return 256;
    case HashAlgorithm::SHA384: return 384;
    case HashAlgorithm::SHA512: return 512;
  }
  return 0;
}

constexpr std::size_t digest_length(HashAlgorithm alg) { return digest_bits(alg) / 8; }

/// Canonical lowercase name ("md5", "sha1", ... "sha512").
std::string_view algorithm_name(HashAlgorithm alg);

/// Accepts "sha512", "SHA-512", "Sha512" etc. Throws UnknownAlgorithm.
HashAlgorithm parse_algorithm(std::string_view name);

/// Comma separated list of supported names, for usage messages.
std::string supported_algorithms();

std::string to_hex(std::span<const std::uint8_t> bytes);
/// Case-insensitive. Throws ParseError on odd length or non-hex characters.
std::vector<std::uint8_t> from_hex(std::string_view hex);

class DigestValue {
 public:
  DigestValue(HashAlgorithm alg, std::vector<std::uint8_t> bytes);

  static DigestValue from_hex(HashAlgorithm alg, std::string_view hex);

  HashAlgorithm algorithm() const { return alg_; }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::string hex() const { return to_hex(bytes_); }

  friend bool operator==(const DigestValue&, const DigestValue&) = default;

 private:
  HashAlgorithm alg_;
  std::vector<std::uint8_t> bytes_;
};

enum class SourceKind : std::uint8_t { FileBacked = 0, BlockDevice = 1 };

struct Partition {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::string label;

  friend bool operator==(const Partition&, const Partition&) = default;
};

struct DeviceDescriptor {
  std::string device_id;
  std::string label;
  std::uint64_t total_bytes = 0;
  std::vector<Partition> partitions;
  SourceKind source_kind = SourceKind::FileBacked;
  /// Where the bytes live (image file or block device node). Not part of the wire form.
  std::string path;

  /// Throws InvalidArgument if partitions overlap or exceed total_bytes.
  void validate() const;

  friend bool operator==(const DeviceDescriptor&, const DeviceDescriptor&) = default;
};

struct ChunkSpan {
  std::uint64_t seq = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const ChunkSpan&, const ChunkSpan&) = default;
};

inline constexpr std::uint64_t kDefaultChunkSize = 100ULL * 1024 * 1024;

/// Contiguous cover of [0, total_bytes). Throws ZeroSizeSource / InvalidChunkSize.
std::vector<ChunkSpan> plan_chunks(std::uint64_t total_bytes, std::uint64_t chunk_size);

std::uint64_t chunk_count_for(std::uint64_t total_bytes, std::uint64_t chunk_size);

enum class ChunkState : std::uint8_t { Pending, InFlight, NakRequeued, Verified };

struct ChunkRecord {
  std::uint64_t seq = 0;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::optional<DigestValue> digest;
  ChunkState state = ChunkState::Pending;
  std::uint32_t attempts = 0;

  ChunkSpan span() const { return {seq, offset, length}; }
};

struct ChunkManifest {
  std::string device_id;
  std::uint64_t chunk_size = 0;
  std::optional<DigestValue> whole_image_digest;
  std::vector<ChunkRecord> chunks;

  std::uint64_t chunk_count() const { return chunks.size(); }
  std::uint64_t total_bytes() const;

  /// Builds pending records for a device of the given size.
  static ChunkManifest plan(const DeviceDescriptor& device, std::uint64_t chunk_size);

  /// Checks seq/offset/length layout against total_bytes. Throws InvalidArgument.
  void validate(std::uint64_t total_bytes) const;
};

/// Tab separated manifest text, LF line endings, ordered by seq.
/// Every chunk must carry a digest.
std::string format_manifest(const ChunkManifest& manifest);
/// Parses chunk lines; returned records are Pending with zero attempts.
std::vector<ChunkRecord> parse_manifest(std::string_view text);

enum class Verdict : std::uint8_t { Pending, Verified, Failed };

std::string_view verdict_name(Verdict v);
Verdict parse_verdict(std::string_view text);

using Timestamp = std::chrono::time_point<std::chrono::system_clock, std::chrono::milliseconds>;

Timestamp now_utc();
/// RFC-3339 UTC with millisecond precision and trailing Z.
std::string format_timestamp(Timestamp ts);
Timestamp parse_timestamp(std::string_view text);

struct EvidenceRecord {
  std::string case_id;
  std::string session_id;
  DeviceDescriptor device;
  ChunkManifest manifest;
  HashAlgorithm chunk_digest_algorithm = HashAlgorithm::SHA512;
  std::string image_path;  // relative to the store root
  std::map<std::string, std::string> metadata;  // extra keys
  Verdict final_verdict = Verdict::Pending;
  Timestamp opened_at{};
  std::optional<Timestamp> finalized_at;
};

/// `key: value` lines with keys in sorted order.
std::string format_metadata(const EvidenceRecord& record);
/// Restores everything except manifest.chunks (which live in manifest.tsv).
EvidenceRecord parse_metadata(std::string_view text);

}  // namespace raft
