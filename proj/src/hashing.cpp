#include "raft/hashing.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <istream>
#include <set>

#include "raft/error.hpp"
#include "text_util.hpp"

namespace raft {

namespace {

const EVP_MD* evp_for(HashAlgorithm alg) {
  switch (alg) {
    case HashAlgorithm::MD5: return EVP_md5();
    case HashAlgorithm::SHA1: return EVP_sha1();
    case HashAlgorithm::SHA224: return EVP_sha224();
    case HashAlgorithm::SHA256: return EVP_sha256();
    case HashAlgorithm::SHA384: return EVP_sha384();
    case HashAlgorithm::SHA512: return EVP_sha512();
  }
  throw Error(ErrorCode::UnknownAlgorithm, "no digest for algorithm");
}

struct CtxDeleter {
  void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};

}  // namespace

struct Hasher::Impl {
  std::unique_ptr<EVP_MD_CTX, CtxDeleter> ctx{EVP_MD_CTX_new()};
};

Hasher::Hasher(HashAlgorithm alg) : alg_(alg), impl_(std::make_unique<Impl>()) {
  if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx.get(), evp_for(alg), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "cannot initialise digest context");
  }
}

Hasher::~Hasher() = default;
Hasher::Hasher(Hasher&&) noexcept = default;
Hasher& Hasher::operator=(Hasher&&) noexcept = default;

void Hasher::update(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) return;
  EVP_DigestUpdate(impl_->ctx.get(), bytes.data(), bytes.size());
}

void Hasher::update(std::string_view text) {
  update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

DigestValue Hasher::finish() {
  std::vector<std::uint8_t> out(EVP_MAX_MD_SIZE);
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx.get(), out.data(), &len);
  out.resize(len);
  EVP_DigestInit_ex(impl_->ctx.get(), evp_for(alg_), nullptr);
  return DigestValue(alg_, std::move(out));
}

DigestValue digest_bytes(HashAlgorithm alg, std::span<const std::uint8_t> bytes) {
  Hasher h(alg);
  h.update(bytes);
  return h.finish();
}

DigestValue digest_text(HashAlgorithm alg, std::string_view text) {
  Hasher h(alg);
  h.update(text);
  return h.finish();
}

namespace {

ReadFn istream_reader(std::istream& in) {
  return [&in, consumed = std::uint64_t{0}](std::span<std::uint8_t> buf) mutable -> std::size_t {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (in.bad()) throw SourceReadError("stream read failed", consumed);
    consumed += got;
    return got;
  };
}

template <typename Sink>
void pump(const ReadFn& read, Sink&& sink) {
  std::vector<std::uint8_t> buf(kStreamBufferSize);
  while (true) {
    const std::size_t n = read(buf);
    if (n == 0) break;
    sink(std::span<const std::uint8_t>(buf.data(), n));
  }
}

}  // namespace

DigestValue digest_stream(const ReadFn& read, HashAlgorithm alg) {
  Hasher h(alg);
  pump(read, [&h](auto bytes) { h.update(bytes); });
  return h.finish();
}

DigestValue digest_stream(std::istream& in, HashAlgorithm alg) {
  return digest_stream(istream_reader(in), alg);
}

DigestValue digest_file(const std::filesystem::path& path, HashAlgorithm alg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::NotFound, "cannot open " + path.string());
  return digest_stream(in, alg);
}

void HashWindowConfig::validate() const {
  if (algorithms.empty()) throw Error(ErrorCode::InvalidArgument, "at least one algorithm required");
  std::set<HashAlgorithm> seen(algorithms.begin(), algorithms.end());
  if (seen.size() != algorithms.size()) {
    throw Error(ErrorCode::InvalidArgument, "duplicate algorithm in hash window config");
  }
}

WindowHasher::WindowHasher(HashWindowConfig config) : config_(std::move(config)) {
  config_.validate();
  for (auto alg : config_.algorithms) {
    window_.emplace_back(alg);
    whole_.emplace_back(alg);
  }
}

void WindowHasher::update(std::span<const std::uint8_t> bytes) {
  while (!bytes.empty()) {
    std::size_t take = bytes.size();
    if (config_.window_bytes > 0) {
      const std::uint64_t room = window_start_ + config_.window_bytes - position_;
      take = static_cast<std::size_t>(std::min<std::uint64_t>(take, room));
    }
    auto part = bytes.first(take);
    for (auto& h : whole_) h.update(part);
    if (config_.window_bytes > 0) {
      for (auto& h : window_) h.update(part);
    }
    position_ += take;
    bytes = bytes.subspan(take);
    if (config_.window_bytes > 0 && position_ - window_start_ == config_.window_bytes) {
      close_window();
    }
  }
}

void WindowHasher::close_window() {
  HashLogEntry e;
  e.window_index = entries_.size();
  e.start = window_start_;
  e.end = position_;
  for (auto& h : window_) e.digests.push_back(h.finish());
  entries_.push_back(std::move(e));
  window_start_ = position_;
}

WindowDigests WindowHasher::finish() {
  if (config_.window_bytes > 0 && position_ > window_start_) close_window();
  WindowDigests out;
  out.windows = std::move(entries_);
  out.whole.start = 0;
  out.whole.end = position_;
  for (auto& h : whole_) out.whole.digests.push_back(h.finish());
  entries_.clear();
  window_start_ = position_ = 0;
  return out;
}

WindowDigests digest_windows(const ReadFn& read, const HashWindowConfig& config) {
  WindowHasher hasher(config);
  pump(read, [&hasher](auto bytes) { hasher.update(bytes); });
  return hasher.finish();
}

WindowDigests digest_windows(std::istream& in, const HashWindowConfig& config) {
  return digest_windows(istream_reader(in), config);
}

std::string format_hash_log(const WindowDigests& digests) {
  std::string out;
  for (const auto& w : digests.windows) {
    for (const auto& d : w.digests) {
      out += "window " + std::to_string(*w.window_index) + " " + std::to_string(w.start) + "-" +
             std::to_string(w.end) + " " + std::string(algorithm_name(d.algorithm())) + " " +
             d.hex() + "\n";
    }
  }
  for (const auto& d : digests.whole.digests) {
    out += "total " + std::string(algorithm_name(d.algorithm())) + " " + d.hex() + "\n";
  }
  return out;
}

WindowDigests parse_hash_log(std::string_view text) {
  WindowDigests out;
  std::uint64_t max_end = 0;
  for (auto line : detail::split_lines(text)) {
    if (line.empty()) continue;
    auto f = detail::split(line, ' ');
    if (f.size() == 5 && f[0] == "window") {
      const auto index = detail::parse_u64(f[1]);
      auto range = detail::split(f[2], '-');
      if (range.size() != 2) throw Error(ErrorCode::ParseError, "bad window range");
      const auto start = detail::parse_u64(range[0]);
      const auto end = detail::parse_u64(range[1]);
      auto digest = DigestValue::from_hex(parse_algorithm(f[3]), f[4]);
      if (out.windows.empty() || *out.windows.back().window_index != index) {
        HashLogEntry e;
        e.window_index = index;
        e.start = start;
        e.end = end;
        out.windows.push_back(std::move(e));
      }
      out.windows.back().digests.push_back(std::move(digest));
      max_end = std::max(max_end, end);
    } else if (f.size() == 3 && f[0] == "total") {
      out.whole.digests.push_back(DigestValue::from_hex(parse_algorithm(f[1]), f[2]));
    } else {
      throw Error(ErrorCode::ParseError, "unrecognised hash log line '" + std::string(line) + "'");
    }
  }
  // The total lines carry no byte range; the last window's end is the best we can restore.
  out.whole.end = max_end;
  return out;
}

double hex_diff_percent(const DigestValue& a, const DigestValue& b) {
  if (a.algorithm() != b.algorithm()) {
    throw Error(ErrorCode::AlgorithmMismatch, std::string(algorithm_name(a.algorithm())) + " vs " +
                                                  std::string(algorithm_name(b.algorithm())));
  }
  const std::string ha = a.hex();
  const std::string hb = b.hex();
  std::uint64_t differing = 0;
  for (std::size_t i = 0; i < ha.size(); ++i) differing += ha[i] != hb[i] ? 1 : 0;
  // tenths of a percent, half-up, in integer arithmetic
  const std::uint64_t n = ha.size();
  const std::uint64_t tenths = (2 * differing * 1000 + n) / (2 * n);
  return static_cast<double>(tenths) / 10.0;
}

void make_zero_file(const std::filesystem::path& path, std::uint64_t size_bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  const std::vector<char> zeros(kStreamBufferSize, 0);
  std::uint64_t remaining = size_bytes;
  while (remaining > 0) {
    const auto n = static_cast<std::streamsize>(std::min<std::uint64_t>(remaining, zeros.size()));
    out.write(zeros.data(), n);
    remaining -= static_cast<std::uint64_t>(n);
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace raft
