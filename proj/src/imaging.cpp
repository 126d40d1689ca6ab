#include "raft/imaging.hpp"

#include <fcntl.h>
#include <linux/fs.h>
#include <sys/ioctl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "raft/error.hpp"

namespace raft {

namespace {

int open_read_only(const std::string& path) {
  const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    const int err = errno;
    if (err == ENOENT || err == ENOTDIR) throw Error(ErrorCode::NotFound, path);
    if (err == EACCES || err == EPERM) throw Error(ErrorCode::PermissionDenied, path);
    throw Error(ErrorCode::IoError, path + ": " + std::strerror(err));
  }
  return fd;
}

std::uint64_t fd_size(int fd, const std::string& path) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw Error(ErrorCode::IoError, path + ": fstat failed");
  if (S_ISBLK(st.st_mode)) {
    std::uint64_t bytes = 0;
    if (::ioctl(fd, BLKGETSIZE64, &bytes) != 0) {
      throw Error(ErrorCode::IoError, path + ": cannot query block device size");
    }
    return bytes;
  }
  if (!S_ISREG(st.st_mode)) throw Error(ErrorCode::InvalidArgument, path + " is not a file or block device");
  return static_cast<std::uint64_t>(st.st_size);
}

}  // namespace

ReadOnlySource::ReadOnlySource(DeviceDescriptor descriptor, int fd)
    : descriptor_(std::move(descriptor)), fd_(fd) {}

ReadOnlySource::ReadOnlySource(ReadOnlySource&& other) noexcept
    : descriptor_(std::move(other.descriptor_)), fd_(other.fd_), cursor_(other.cursor_) {
  other.fd_ = -1;
}

ReadOnlySource& ReadOnlySource::operator=(ReadOnlySource&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    descriptor_ = std::move(other.descriptor_);
    fd_ = other.fd_;
    cursor_ = other.cursor_;
    other.fd_ = -1;
  }
  return *this;
}

ReadOnlySource::~ReadOnlySource() {
  if (fd_ >= 0) ::close(fd_);
}

std::size_t ReadOnlySource::read_at(std::uint64_t offset, std::span<std::uint8_t> buf) const {
  if (offset >= size() || buf.empty()) return 0;
  const auto want = static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), size() - offset));
  std::size_t done = 0;
  while (done < want) {
    const ssize_t n = ::pread(fd_, buf.data() + done, want - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SourceReadError(descriptor_.path + ": " + std::strerror(errno), done);
    }
    if (n == 0) {
      throw SourceReadError(descriptor_.path + ": source shorter than its descriptor", done);
    }
    done += static_cast<std::size_t>(n);
  }
  return done;
}

std::size_t ReadOnlySource::read(std::span<std::uint8_t> buf) {
  const std::size_t n = read_at(cursor_, buf);
  cursor_ += n;
  return n;
}

bool ReadOnlySource::is_read_only() const {
  const int flags = ::fcntl(fd_, F_GETFL);
  return flags >= 0 && (flags & O_ACCMODE) == O_RDONLY;
}

std::uint64_t probe_source_size(const std::filesystem::path& path) {
  const int fd = open_read_only(path.string());
  try {
    const auto size = fd_size(fd, path.string());
    ::close(fd);
    return size;
  } catch (...) {
    ::close(fd);
    throw;
  }
}

ReadOnlySource open_source(const DeviceDescriptor& descriptor) {
  const int fd = open_read_only(descriptor.path);
  ReadOnlySource source(descriptor, fd);
  const auto actual = fd_size(fd, descriptor.path);
  if (actual != descriptor.total_bytes) {
    throw Error(ErrorCode::LengthMismatch, descriptor.path + ": descriptor says " +
                                               std::to_string(descriptor.total_bytes) +
                                               " bytes, source has " + std::to_string(actual));
  }
  return source;
}

DigestValue prehash_source(ReadOnlySource& source, HashAlgorithm alg) {
  source.seek(0);
  Hasher hasher(alg);
  std::vector<std::uint8_t> buf(kStreamBufferSize);
  while (true) {
    const auto n = source.read(buf);
    if (n == 0) break;
    hasher.update(std::span<const std::uint8_t>(buf.data(), n));
  }
  source.seek(0);
  return hasher.finish();
}

ChunkPayload read_chunk(const ReadOnlySource& source, const ChunkSpan& span, HashAlgorithm alg) {
  if (span.length == 0 || span.offset > source.size() || span.length > source.size() - span.offset) {
    throw Error(ErrorCode::OutOfBounds, "chunk " + std::to_string(span.seq) + " [" +
                                            std::to_string(span.offset) + ", +" +
                                            std::to_string(span.length) + ") outside source");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(span.length));
  Hasher hasher(alg);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto take = std::min(kStreamBufferSize, bytes.size() - done);
    std::span<std::uint8_t> part(bytes.data() + done, take);
    std::size_t n = 0;
    try {
      n = source.read_at(span.offset + done, part);
    } catch (const SourceReadError& e) {
      throw SourceReadError("chunk " + std::to_string(span.seq), done + e.bytes_consumed());
    }
    hasher.update(std::span<const std::uint8_t>(part.data(), n));
    done += n;
  }
  return {std::move(bytes), hasher.finish()};
}

std::string chunk_file_name(std::uint64_t seq) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "chunk_%06llu", static_cast<unsigned long long>(seq));
  return buf;
}

SplitResult split_to_files(ReadOnlySource& source, std::uint64_t chunk_size,
                           const std::filesystem::path& dest_dir,
                           const std::vector<HashAlgorithm>& algorithms) {
  const auto spans = plan_chunks(source.size(), chunk_size);
  std::error_code ec;
  std::filesystem::create_directories(dest_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dest_dir.string() + ": " + ec.message());

  WindowHasher hasher(HashWindowConfig{chunk_size, algorithms});
  SplitResult result;
  std::vector<std::uint8_t> buf(kStreamBufferSize);
  for (const auto& span : spans) {
    const auto path = dest_dir / chunk_file_name(span.seq);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
    std::uint64_t remaining = span.length;
    std::uint64_t offset = span.offset;
    while (remaining > 0) {
      const auto take = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, buf.size()));
      const auto n = source.read_at(offset, std::span(buf.data(), take));
      hasher.update(std::span<const std::uint8_t>(buf.data(), n));
      out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(n));
      offset += n;
      remaining -= n;
    }
    if (!out.flush()) throw Error(ErrorCode::IoError, "write failed for " + path.string());
    result.chunk_files.push_back(path);
  }
  result.digests = hasher.finish();
  result.hash_log = dest_dir / "hash.log";
  std::ofstream log(result.hash_log, std::ios::binary | std::ios::trunc);
  log << format_hash_log(result.digests);
  if (!log.flush()) throw Error(ErrorCode::IoError, "write failed for " + result.hash_log.string());
  return result;
}

}  // namespace raft
