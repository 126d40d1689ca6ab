#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "raft/evidence.hpp"
#include "raft/hashing.hpp"

namespace raft {

/// Read-only view of an evidence source. The type has no write operations and
/// the underlying descriptor is opened O_RDONLY.
class ReadOnlySource {
 public:
  ReadOnlySource(ReadOnlySource&& other) noexcept;
  ReadOnlySource& operator=(ReadOnlySource&& other) noexcept;
  ReadOnlySource(const ReadOnlySource&) = delete;
  ReadOnlySource& operator=(const ReadOnlySource&) = delete;
  ~ReadOnlySource();

  const DeviceDescriptor& descriptor() const { return descriptor_; }
  std::uint64_t size() const { return descriptor_.total_bytes; }
  std::uint64_t cursor() const { return cursor_; }
  void seek(std::uint64_t offset) { cursor_ = offset; }

  /// Sequential read from the cursor. Returns 0 at end of source.
  std::size_t read(std::span<std::uint8_t> buf);
  /// Positional read. Reads at or beyond size() return 0.
  std::size_t read_at(std::uint64_t offset, std::span<std::uint8_t> buf) const;

  /// Queries the kernel for the descriptor's access mode.
  bool is_read_only() const;

  friend ReadOnlySource open_source(const DeviceDescriptor& descriptor);

 private:
  ReadOnlySource(DeviceDescriptor descriptor, int fd);

  DeviceDescriptor descriptor_;
  int fd_ = -1;
  std::uint64_t cursor_ = 0;
};

/// Length of the backing file or block device, opened read-only.
std::uint64_t probe_source_size(const std::filesystem::path& path);

/// Throws NotFound, PermissionDenied or LengthMismatch.
ReadOnlySource open_source(const DeviceDescriptor& descriptor);

/// Whole-image digest; the cursor is back at 0 afterwards.
DigestValue prehash_source(ReadOnlySource& source, HashAlgorithm alg);

struct ChunkPayload {
  std::vector<std::uint8_t> bytes;
  DigestValue digest;
};

/// Reads exactly the span's range once, digesting while reading.
ChunkPayload read_chunk(const ReadOnlySource& source, const ChunkSpan& span, HashAlgorithm alg);

struct SplitResult {
  std::vector<std::filesystem::path> chunk_files;
  std::filesystem::path hash_log;
  WindowDigests digests;
};

/// Local split mode: chunk_<seq> files (6-digit seq) plus `hash.log`, the
/// hashwindow equal to the chunk size.
SplitResult split_to_files(ReadOnlySource& source, std::uint64_t chunk_size,
                           const std::filesystem::path& dest_dir,
                           const std::vector<HashAlgorithm>& algorithms);

std::string chunk_file_name(std::uint64_t seq);

}  // namespace raft
