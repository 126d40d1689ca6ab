#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "raft/evidence.hpp"

namespace raft {

/// Incremental digest context. Single owner; movable, not copyable.
class Hasher {
 public:
  explicit Hasher(HashAlgorithm alg);
  ~Hasher();
  Hasher(Hasher&&) noexcept;
  Hasher& operator=(Hasher&&) noexcept;
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  HashAlgorithm algorithm() const { return alg_; }
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  /// Produces the digest and resets the context for reuse.
  DigestValue finish();

 private:
  struct Impl;
  HashAlgorithm alg_;
  std::unique_ptr<Impl> impl_;
};

DigestValue digest_bytes(HashAlgorithm alg, std::span<const std::uint8_t> bytes);
DigestValue digest_text(HashAlgorithm alg, std::string_view text);

/// Pull-style byte source: fills the buffer, returns bytes written, 0 at end.
using ReadFn = std::function<std::size_t(std::span<std::uint8_t>)>;

inline constexpr std::size_t kStreamBufferSize = 1 << 20;

DigestValue digest_stream(std::istream& in, HashAlgorithm alg);
DigestValue digest_stream(const ReadFn& read, HashAlgorithm alg);
DigestValue digest_file(const std::filesystem::path& path, HashAlgorithm alg);

struct HashWindowConfig {
  std::uint64_t window_bytes = 0;  // 0: whole stream only
  std::vector<HashAlgorithm> algorithms;

  /// Throws InvalidArgument on an empty or duplicated algorithm list.
  void validate() const;
};

struct HashLogEntry {
  std::optional<std::uint64_t> window_index;  // nullopt: the WHOLE entry
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  std::vector<DigestValue> digests;  // same order as HashWindowConfig::algorithms

  bool whole() const { return !window_index.has_value(); }
  friend bool operator==(const HashLogEntry&, const HashLogEntry&) = default;
};

struct WindowDigests {
  std::vector<HashLogEntry> windows;
  HashLogEntry whole;
};

/// Feeds bytes once into every configured algorithm, cutting a window entry
/// each time window_bytes have been seen.
class WindowHasher {
 public:
  explicit WindowHasher(HashWindowConfig config);

  void update(std::span<const std::uint8_t> bytes);
  WindowDigests finish();

 private:
  void close_window();

  HashWindowConfig config_;
  std::vector<Hasher> window_;
  std::vector<Hasher> whole_;
  std::uint64_t window_start_ = 0;
  std::uint64_t position_ = 0;
  std::vector<HashLogEntry> entries_;
};

WindowDigests digest_windows(std::istream& in, const HashWindowConfig& config);
WindowDigests digest_windows(const ReadFn& read, const HashWindowConfig& config);

/// `window <index> <start>-<end> <algorithm> <hex>` and `total <algorithm> <hex>` lines.
std::string format_hash_log(const WindowDigests& digests);
WindowDigests parse_hash_log(std::string_view text);

/// Percentage of hex positions that differ, rounded half-up to one decimal.
double hex_diff_percent(const DigestValue& a, const DigestValue& b);

/// Writes size_bytes zero bytes to path (truncating). Throws IoError.
void make_zero_file(const std::filesystem::path& path, std::uint64_t size_bytes);

}  // namespace raft
