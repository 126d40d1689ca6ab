#include "raft/evidence.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "raft/error.hpp"
#include "text_util.hpp"

namespace raft {

std::string_view algorithm_name(HashAlgorithm alg) {
  switch (alg) {
    case HashAlgorithm::MD5: return "md5";
    case HashAlgorithm::SHA1: return "sha1";
    case HashAlgorithm::SHA224: return "sha224";
    case HashAlgorithm::SHA256: return "sha256";
    case HashAlgorithm::SHA384: return "sha384";
    case HashAlgorithm::SHA512: return "sha512";
  }
  return "unknown";
}

HashAlgorithm parse_algorithm(std::string_view name) {
  std::string folded;
  for (char c : name) {
    if (c == '-' || c == '_') continue;
    folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  for (auto alg : kAllAlgorithms) {
    if (algorithm_name(alg) == folded) return alg;
  }
  throw Error(ErrorCode::UnknownAlgorithm,
              "'" + std::string(name) + "' (supported: " + supported_algorithms() + ")");
}

std::string supported_algorithms() {
  std::string out;
  for (auto alg : kAllAlgorithms) {
    if (!out.empty()) out += ",";
    out += algorithm_name(alg);
  }
  return out;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(ErrorCode::ParseError, "odd-length hex string");
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::ParseError, "non-hex character in digest");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

DigestValue::DigestValue(HashAlgorithm alg, std::vector<std::uint8_t> bytes)
    : alg_(alg), bytes_(std::move(bytes)) {
  if (bytes_.size() != digest_length(alg_)) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(algorithm_name(alg_)) + " digest must be " +
                    std::to_string(digest_length(alg_)) + " bytes, got " +
                    std::to_string(bytes_.size()));
  }
}

DigestValue DigestValue::from_hex(HashAlgorithm alg, std::string_view hex) {
  return DigestValue(alg, raft::from_hex(hex));
}

void DeviceDescriptor::validate() const {
  std::vector<Partition> sorted = partitions;
  std::sort(sorted.begin(), sorted.end(),
            [](const Partition& a, const Partition& b) { return a.offset < b.offset; });
  std::uint64_t prev_end = 0;
  for (const auto& p : sorted) {
    if (p.offset > total_bytes || p.length > total_bytes - p.offset) {
      throw Error(ErrorCode::InvalidArgument, "partition '" + p.label + "' exceeds device");
    }
    if (p.offset < prev_end) {
      throw Error(ErrorCode::InvalidArgument, "partition '" + p.label + "' overlaps");
    }
    prev_end = p.offset + p.length;
  }
}

std::uint64_t chunk_count_for(std::uint64_t total_bytes, std::uint64_t chunk_size) {
  if (chunk_size == 0) throw Error(ErrorCode::InvalidChunkSize, "chunk size must be > 0");
  return total_bytes / chunk_size + (total_bytes % chunk_size != 0 ? 1 : 0);
}

std::vector<ChunkSpan> plan_chunks(std::uint64_t total_bytes, std::uint64_t chunk_size) {
  if (chunk_size == 0) throw Error(ErrorCode::InvalidChunkSize, "chunk size must be > 0");
  if (total_bytes == 0) throw Error(ErrorCode::ZeroSizeSource, "a zero-byte source is not imageable");
  const std::uint64_t count = chunk_count_for(total_bytes, chunk_size);
  std::vector<ChunkSpan> spans;
  spans.reserve(count);
  for (std::uint64_t seq = 0; seq < count; ++seq) {
    const std::uint64_t offset = seq * chunk_size;
    spans.push_back({seq, offset, std::min(chunk_size, total_bytes - offset)});
  }
  return spans;
}

std::uint64_t ChunkManifest::total_bytes() const {
  std::uint64_t sum = 0;
  for (const auto& c : chunks) sum += c.length;
  return sum;
}

ChunkManifest ChunkManifest::plan(const DeviceDescriptor& device, std::uint64_t chunk_size) {
  ChunkManifest m;
  m.device_id = device.device_id;
  m.chunk_size = chunk_size;
  for (const auto& span : plan_chunks(device.total_bytes, chunk_size)) {
    ChunkRecord r;
    r.seq = span.seq;
    r.offset = span.offset;
    r.length = span.length;
    m.chunks.push_back(std::move(r));
  }
  return m;
}

void ChunkManifest::validate(std::uint64_t total) const {
  if (chunk_size == 0) throw Error(ErrorCode::InvalidChunkSize, "chunk size must be > 0");
  if (chunks.size() != chunk_count_for(total, chunk_size)) {
    throw Error(ErrorCode::InvalidArgument, "chunk count does not match device size");
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& c = chunks[i];
    const bool last = i + 1 == chunks.size();
    if (c.seq != i || c.offset != i * chunk_size || c.length == 0 ||
        (!last && c.length != chunk_size) || c.length > chunk_size) {
      throw Error(ErrorCode::InvalidArgument, "bad chunk record at seq " + std::to_string(i));
    }
    if (c.state == ChunkState::Verified && c.attempts == 0) {
      throw Error(ErrorCode::InvalidArgument, "verified chunk with zero attempts");
    }
  }
  if (total_bytes() != total) {
    throw Error(ErrorCode::InvalidArgument, "chunk lengths do not sum to device size");
  }
}

std::string format_manifest(const ChunkManifest& manifest) {
  std::string out = "manifest-version 1\n";
  for (const auto& c : manifest.chunks) {
    if (!c.digest) {
      throw Error(ErrorCode::InvalidArgument,
                  "chunk " + std::to_string(c.seq) + " has no digest to serialize");
    }
    out += std::to_string(c.seq);
    out += '\t';
    out += std::to_string(c.offset);
    out += '\t';
    out += std::to_string(c.length);
    out += '\t';
    out += algorithm_name(c.digest->algorithm());
    out += '\t';
    out += c.digest->hex();
    out += '\n';
  }
  return out;
}

std::vector<ChunkRecord> parse_manifest(std::string_view text) {
  auto lines = detail::split_lines(text);
  if (lines.empty() || lines.front() != "manifest-version 1") {
    throw Error(ErrorCode::ParseError, "missing 'manifest-version 1' header");
  }
  std::vector<ChunkRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto fields = detail::split(lines[i], '\t');
    if (fields.size() != 5) {
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(i + 1) + ": expected 5 fields");
    }
    ChunkRecord r;
    r.seq = detail::parse_u64(fields[0]);
    r.offset = detail::parse_u64(fields[1]);
    r.length = detail::parse_u64(fields[2]);
    r.digest = DigestValue::from_hex(parse_algorithm(fields[3]), fields[4]);
    if (r.seq != out.size()) {
      throw Error(ErrorCode::ParseError, "manifest seq values must be 0..n-1 in order");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Pending: return "pending";
    case Verdict::Verified: return "verified";
    case Verdict::Failed: return "failed";
  }
  return "pending";
}

Verdict parse_verdict(std::string_view text) {
  if (text == "pending") return Verdict::Pending;
  if (text == "verified") return Verdict::Verified;
  if (text == "failed") return Verdict::Failed;
  throw Error(ErrorCode::ParseError, "unknown verdict '" + std::string(text) + "'");
}

Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

std::string format_timestamp(Timestamp ts) {
  const auto ms = ts.time_since_epoch().count();
  std::int64_t secs = ms / 1000;
  std::int64_t frac = ms % 1000;
  if (frac < 0) {
    frac += 1000;
    --secs;
  }
  const std::time_t t = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(frac));
  return buf;
}

Timestamp parse_timestamp(std::string_view text) {
  std::tm tm{};
  int ms = 0;
  int consumed = 0;
  const std::string s(text);
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d.%3dZ%n", &tm.tm_year, &tm.tm_mon,
                            &tm.tm_mday, &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms, &consumed);
  if (n != 7 || static_cast<std::size_t>(consumed) != s.size()) {
    throw Error(ErrorCode::ParseError, "bad RFC-3339 timestamp '" + s + "'");
  }
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return Timestamp(std::chrono::milliseconds(static_cast<std::int64_t>(secs) * 1000 + ms));
}

namespace {

void check_value(const std::string& key, const std::string& value) {
  if (value.find('\n') != std::string::npos || value.find('\r') != std::string::npos) {
    throw Error(ErrorCode::InvalidArgument, "metadata value for '" + key + "' contains a line break");
  }
}

}  // namespace

std::string format_metadata(const EvidenceRecord& r) {
  std::map<std::string, std::string> kv = r.metadata;
  kv["case_id"] = r.case_id;
  kv["session_id"] = r.session_id;
  kv["device_id"] = r.device.device_id;
  kv["device_label"] = r.device.label;
  kv["source_kind"] = r.device.source_kind == SourceKind::BlockDevice ? "block_device" : "file_backed";
  kv["total_bytes"] = std::to_string(r.device.total_bytes);
  kv["partition_count"] = std::to_string(r.device.partitions.size());
  for (std::size_t i = 0; i < r.device.partitions.size(); ++i) {
    const auto& p = r.device.partitions[i];
    kv["partition_" + std::to_string(i)] =
        std::to_string(p.offset) + "/" + std::to_string(p.length) + "/" + p.label;
  }
  kv["chunk_size"] = std::to_string(r.manifest.chunk_size);
  kv["chunk_count"] = std::to_string(r.manifest.chunk_count());
  kv["chunk_digest_algorithm"] = algorithm_name(r.chunk_digest_algorithm);
  if (!r.manifest.whole_image_digest) {
    throw Error(ErrorCode::InvalidArgument, "evidence record has no whole-image digest");
  }
  kv["whole_image_algorithm"] = algorithm_name(r.manifest.whole_image_digest->algorithm());
  kv["whole_image_digest"] = r.manifest.whole_image_digest->hex();
  kv["image_path"] = r.image_path;
  kv["final_verdict"] = verdict_name(r.final_verdict);
  kv["opened_at"] = format_timestamp(r.opened_at);
  kv["finalized_at"] = r.finalized_at ? format_timestamp(*r.finalized_at) : "";

  std::string out;
  for (const auto& [key, value] : kv) {
    check_value(key, value);
    out += key;
    out += ": ";
    out += value;
    out += '\n';
  }
  return out;
}

EvidenceRecord parse_metadata(std::string_view text) {
  std::map<std::string, std::string> kv;
  for (auto line : detail::split_lines(text)) {
    if (line.empty()) continue;
    auto pos = line.find(": ");
    if (pos == std::string_view::npos) {
      // "finalized_at:" with an empty value has no trailing space once trimmed by editors
      if (!line.empty() && line.back() == ':') {
        kv[std::string(line.substr(0, line.size() - 1))] = "";
        continue;
      }
      throw Error(ErrorCode::ParseError, "metadata line without ': ' separator");
    }
    kv[std::string(line.substr(0, pos))] = std::string(line.substr(pos + 2));
  }
  auto take = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::ParseError, "metadata missing key '" + key + "'");
    std::string v = std::move(it->second);
    kv.erase(it);
    return v;
  };

  EvidenceRecord r;
  r.case_id = take("case_id");
  r.session_id = take("session_id");
  r.device.device_id = take("device_id");
  r.device.label = take("device_label");
  r.device.source_kind = take("source_kind") == "block_device" ? SourceKind::BlockDevice
                                                               : SourceKind::FileBacked;
  r.device.total_bytes = detail::parse_u64(take("total_bytes"));
  const auto partition_count = detail::parse_u64(take("partition_count"));
  for (std::uint64_t i = 0; i < partition_count; ++i) {
    const auto value = take("partition_" + std::to_string(i));
    auto first = value.find('/');
    auto second = first == std::string::npos ? first : value.find('/', first + 1);
    if (second == std::string::npos) throw Error(ErrorCode::ParseError, "bad partition entry");
    Partition p;
    p.offset = detail::parse_u64(std::string_view(value).substr(0, first));
    p.length = detail::parse_u64(std::string_view(value).substr(first + 1, second - first - 1));
    p.label = value.substr(second + 1);
    r.device.partitions.push_back(std::move(p));
  }
  const auto chunk_size = detail::parse_u64(take("chunk_size"));
  const auto chunk_count = detail::parse_u64(take("chunk_count"));
  r.chunk_digest_algorithm = parse_algorithm(take("chunk_digest_algorithm"));
  const auto whole_alg = parse_algorithm(take("whole_image_algorithm"));
  r.manifest = ChunkManifest::plan(r.device, chunk_size);
  if (r.manifest.chunk_count() != chunk_count) {
    throw Error(ErrorCode::ParseError, "chunk_count disagrees with total_bytes/chunk_size");
  }
  r.manifest.whole_image_digest = DigestValue::from_hex(whole_alg, take("whole_image_digest"));
  r.image_path = take("image_path");
  r.final_verdict = parse_verdict(take("final_verdict"));
  r.opened_at = parse_timestamp(take("opened_at"));
  const auto finalized = take("finalized_at");
  if (!finalized.empty()) r.finalized_at = parse_timestamp(finalized);
  r.metadata = std::move(kv);
  return r;
}

}  // namespace raft
