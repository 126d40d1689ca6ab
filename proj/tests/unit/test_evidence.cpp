#include <gtest/gtest.h>

#include <random>

#include "raft/error.hpp"
#include "raft/evidence.hpp"

using namespace raft;

namespace {

DeviceDescriptor device(std::uint64_t total) {
  DeviceDescriptor d;
  d.device_id = "disk0";
  d.label = "Evidence disk";
  d.total_bytes = total;
  return d;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no raft::Error thrown";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(Algorithms, NamesRoundTrip) {
  for (auto alg : kAllAlgorithms) {
    EXPECT_EQ(parse_algorithm(algorithm_name(alg)), alg);
  }
  EXPECT_EQ(parse_algorithm("SHA-512"), HashAlgorithm::SHA512);
  EXPECT_EQ(parse_algorithm("Md5"), HashAlgorithm::MD5);
  EXPECT_EQ(code_of([] { parse_algorithm("blake2"); }), ErrorCode::UnknownAlgorithm);
}

TEST(Algorithms, DigestLengths) {
  EXPECT_EQ(digest_length(HashAlgorithm::MD5), 16u);
  EXPECT_EQ(digest_length(HashAlgorithm::SHA1), 20u);
  EXPECT_EQ(digest_length(HashAlgorithm::SHA224), 28u);
  EXPECT_EQ(digest_length(HashAlgorithm::SHA256), 32u);
  EXPECT_EQ(digest_length(HashAlgorithm::SHA384), 48u);
  EXPECT_EQ(digest_length(HashAlgorithm::SHA512), 64u);
}

TEST(Hex, RoundTripAndCase) {
  const std::vector<std::uint8_t> bytes{0x00, 0xab, 0xff, 0x10};
  EXPECT_EQ(to_hex(bytes), "00abff10");
  EXPECT_EQ(from_hex("00ABff10"), bytes);
  EXPECT_EQ(code_of([] { from_hex("abc"); }), ErrorCode::ParseError);
  EXPECT_EQ(code_of([] { from_hex("zz"); }), ErrorCode::ParseError);
}

TEST(DigestValue, RejectsWrongLength) {
  EXPECT_EQ(code_of([] { DigestValue(HashAlgorithm::SHA256, std::vector<std::uint8_t>(31)); }),
            ErrorCode::InvalidArgument);
  const auto d = DigestValue::from_hex(HashAlgorithm::MD5, "9E107D9D372BB6826BD81D3542A419D6");
  EXPECT_EQ(d.hex(), "9e107d9d372bb6826bd81d3542a419d6");
}

TEST(PlanChunks, TenBytesByFour) {
  const auto spans = plan_chunks(10, 4);
  ASSERT_EQ(spans.size(), 3u);
  EXPECT_EQ(spans[0], (ChunkSpan{0, 0, 4}));
  EXPECT_EQ(spans[1], (ChunkSpan{1, 4, 4}));
  EXPECT_EQ(spans[2], (ChunkSpan{2, 8, 2}));
}

TEST(PlanChunks, ExactMultipleAndSingleChunk) {
  EXPECT_EQ(plan_chunks(8, 4).size(), 2u);
  EXPECT_EQ(plan_chunks(3, 100).size(), 1u);
  EXPECT_EQ(plan_chunks(3, 100)[0].length, 3u);
}

TEST(PlanChunks, Errors) {
  EXPECT_EQ(code_of([] { plan_chunks(0, 4); }), ErrorCode::ZeroSizeSource);
  EXPECT_EQ(code_of([] { plan_chunks(10, 0); }), ErrorCode::InvalidChunkSize);
}

TEST(PlanChunks, PropertyContiguousCover) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const std::uint64_t total = 1 + rng() % 1'000'000;
    const std::uint64_t chunk = 1 + rng() % 70'000;
    const auto spans = plan_chunks(total, chunk);
    ASSERT_EQ(spans.size(), chunk_count_for(total, chunk));
    std::uint64_t next = 0;
    for (std::size_t s = 0; s < spans.size(); ++s) {
      ASSERT_EQ(spans[s].seq, s);
      ASSERT_EQ(spans[s].offset, next);
      ASSERT_GT(spans[s].length, 0u);
      ASSERT_LE(spans[s].length, chunk);
      if (s + 1 < spans.size()) ASSERT_EQ(spans[s].length, chunk);
      next += spans[s].length;
    }
    ASSERT_EQ(next, total);
  }
}

TEST(DeviceDescriptor, PartitionsMustFit) {
  auto d = device(1000);
  d.partitions = {{0, 500, "p1"}, {500, 500, "p2"}};
  EXPECT_NO_THROW(d.validate());
  d.partitions = {{0, 600, "p1"}, {500, 500, "p2"}};
  EXPECT_EQ(code_of([&] { d.validate(); }), ErrorCode::InvalidArgument);
  d.partitions = {{900, 200, "p1"}};
  EXPECT_EQ(code_of([&] { d.validate(); }), ErrorCode::InvalidArgument);
}

TEST(Manifest, FormatParseRoundTrip) {
  auto m = ChunkManifest::plan(device(10), 4);
  for (auto& c : m.chunks) {
    c.digest = DigestValue(HashAlgorithm::SHA256, std::vector<std::uint8_t>(32, static_cast<std::uint8_t>(c.seq)));
  }
  const auto text = format_manifest(m);
  EXPECT_EQ(text.substr(0, text.find('\n')), "manifest-version 1");
  const auto parsed = parse_manifest(text);
  ASSERT_EQ(parsed.size(), 3u);
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    EXPECT_EQ(parsed[i].span(), m.chunks[i].span());
    EXPECT_EQ(parsed[i].digest, m.chunks[i].digest);
  }
  EXPECT_NE(text.find("2\t8\t2\tsha256\t"), std::string::npos);
}

TEST(Manifest, RejectsMissingDigestAndGarbage) {
  const auto m = ChunkManifest::plan(device(10), 4);
  EXPECT_ANY_THROW(format_manifest(m));
  EXPECT_EQ(code_of([] { parse_manifest("manifest-version 1\n0\t0\tx\tsha256\tab\n"); }), ErrorCode::ParseError);
}

TEST(Verdict, Names) {
  for (auto v : {Verdict::Pending, Verdict::Verified, Verdict::Failed}) {
    EXPECT_EQ(parse_verdict(verdict_name(v)), v);
  }
}

TEST(Timestamp, Rfc3339Utc) {
  const Timestamp t{std::chrono::milliseconds(1'700'000'000'123LL)};
  EXPECT_EQ(format_timestamp(t), "2023-11-14T22:13:20.123Z");
  EXPECT_EQ(parse_timestamp("2023-11-14T22:13:20.123Z"), t);
  const auto now = now_utc();
  EXPECT_EQ(parse_timestamp(format_timestamp(now)), now);
  EXPECT_EQ(format_timestamp(now).back(), 'Z');
}

TEST(Metadata, RoundTripSortedKeys) {
  EvidenceRecord r;
  r.case_id = "case-7";
  r.session_id = "20260101T000000Z-0badf00d";
  r.device = device(10);
  r.device.partitions = {{0, 6, "boot"}, {6, 4, "data"}};
  r.manifest = ChunkManifest::plan(r.device, 4);
  r.manifest.whole_image_digest = DigestValue(HashAlgorithm::SHA512, std::vector<std::uint8_t>(64, 0xab));
  r.chunk_digest_algorithm = HashAlgorithm::SHA256;
  r.image_path = "case-7/20260101T000000Z-0badf00d/disk0/image.raw";
  r.final_verdict = Verdict::Verified;
  r.opened_at = Timestamp{std::chrono::milliseconds(1'000)};
  r.finalized_at = Timestamp{std::chrono::milliseconds(2'000)};
  r.metadata["note"] = "seized at scene";

  const auto text = format_metadata(r);
  std::vector<std::string> keys;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto eol = text.find('\n', pos);
    const auto line = text.substr(pos, eol - pos);
    keys.push_back(line.substr(0, line.find(':')));
    pos = eol + 1;
  }
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  for (const char* required :
       {"case_id", "session_id", "device_id", "device_label", "total_bytes", "partition_count", "partition_0",
        "partition_1", "chunk_size", "chunk_count", "chunk_digest_algorithm", "whole_image_algorithm",
        "whole_image_digest", "final_verdict", "opened_at", "finalized_at"}) {
    EXPECT_NE(std::find(keys.begin(), keys.end(), required), keys.end()) << required;
  }

  const auto back = parse_metadata(text);
  EXPECT_EQ(back.case_id, r.case_id);
  EXPECT_EQ(back.session_id, r.session_id);
  EXPECT_EQ(back.device.device_id, r.device.device_id);
  EXPECT_EQ(back.device.label, r.device.label);
  EXPECT_EQ(back.device.total_bytes, r.device.total_bytes);
  EXPECT_EQ(back.device.partitions, r.device.partitions);
  EXPECT_EQ(back.manifest.chunk_size, 4u);
  EXPECT_EQ(back.manifest.chunk_count(), 3u);
  EXPECT_EQ(back.manifest.whole_image_digest, r.manifest.whole_image_digest);
  EXPECT_EQ(back.chunk_digest_algorithm, r.chunk_digest_algorithm);
  EXPECT_EQ(back.image_path, r.image_path);
  EXPECT_EQ(back.final_verdict, r.final_verdict);
  EXPECT_EQ(back.opened_at, r.opened_at);
  EXPECT_EQ(back.finalized_at, r.finalized_at);
  EXPECT_EQ(back.metadata.at("note"), "seized at scene");
  EXPECT_EQ(format_metadata(back), text);
}

TEST(Metadata, PendingHasEmptyFinalizedAt) {
  EvidenceRecord r;
  r.case_id = "c";
  r.session_id = "s";
  r.device = device(4);
  r.manifest = ChunkManifest::plan(r.device, 4);
  r.manifest.whole_image_digest = DigestValue(HashAlgorithm::MD5, std::vector<std::uint8_t>(16));
  const auto text = format_metadata(r);
  EXPECT_NE(text.find("final_verdict: pending\n"), std::string::npos);
  EXPECT_FALSE(parse_metadata(text).finalized_at.has_value());
}
