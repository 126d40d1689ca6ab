#include <gtest/gtest.h>

#include <deque>
#include <random>

#include "raft/hashing.hpp"
#include "raft/wire.hpp"

using namespace raft;
using namespace raft::wire;

namespace {

DeviceDescriptor device(std::uint64_t bytes) {
  DeviceDescriptor d;
  d.device_id = "disk0";
  d.label = "disk0";
  d.total_bytes = bytes;
  d.partitions = {{0, bytes / 2, "p1"}, {bytes / 2, bytes - bytes / 2, "p2"}};
  return d;
}

JobParams job(std::uint64_t bytes, std::uint64_t chunk) {
  JobParams j;
  j.case_id = "case-7";
  j.device = device(bytes);
  j.chunk_size = chunk;
  j.chunk_digest_algorithm = HashAlgorithm::SHA256;
  j.whole_image_digest = digest_text(HashAlgorithm::SHA512, "image");
  return j;
}

SharedBytes payload(std::size_t n, std::uint8_t fill) { return std::make_shared<const Bytes>(n, fill); }

Message round_trip(const Message& m) {
  const auto frame = encode_frame(m);
  const auto decoded = decode_frame(frame);
  EXPECT_EQ(decoded.consumed, frame.size());
  return decoded.message;
}

DecodeFailure failure_of(std::span<const std::uint8_t> bytes) {
  try {
    decode_frame(bytes);
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.code(), ErrorCode::DecodeError);
    return e.kind();
  }
  ADD_FAILURE() << "decoded without error";
  return DecodeFailure::Malformed;
}

template <typename T>
std::vector<T> messages_of(const std::vector<ClientAction>& actions) {
  std::vector<T> out;
  for (const auto& a : actions) {
    if (const auto* m = std::get_if<Message>(&a)) {
      if (const auto* t = std::get_if<T>(m)) out.push_back(*t);
    }
  }
  return out;
}

std::vector<std::uint64_t> requests_of(const std::vector<ClientAction>& actions) {
  std::vector<std::uint64_t> out;
  for (const auto& a : actions) {
    if (const auto* r = std::get_if<RequestChunk>(&a)) out.push_back(r->seq);
  }
  return out;
}

/// Client machine driven up to Transferring with the given resume point.
ClientStep client_in_transfer(const JobParams& j, std::uint64_t resume_from = 0, std::uint32_t retry_limit = 5) {
  const Bytes secret(32, 0x11);
  auto s = ClientSessionState::initial(j, secret, retry_limit, 2);
  auto step = client_step(s, client_event::Start{});
  step = client_step(step.state, client_event::Inbound{Hello{kProtocolVersion, Bytes(16, 0x22)}});
  step = client_step(step.state, client_event::Inbound{AuthResult{true}});
  EXPECT_EQ(step.state.phase, ClientPhase::JobOpen);
  step = client_step(step.state, client_event::Inbound{JobAccept{"S1", resume_from}});
  return step;
}

}  // namespace

TEST(Frame, RoundTripsEveryMessageType) {
  const auto j = job(10'000, 4096);
  const std::vector<Message> all = {
      Hello{kProtocolVersion, Bytes(16, 7)},
      Auth{Bytes(32, 9)},
      AuthResult{true},
      to_message(j),
      JobAccept{"20240101T000000Z-0a0b0c0d", 3},
      ChunkData{2, payload(1000, 0xAB)},
      ChunkDigest{2, digest_text(HashAlgorithm::SHA256, "x")},
      Ack{2},
      Nak{2, "digest mismatch"},
      JobFinalize{},
      FinalResult{true, digest_text(HashAlgorithm::SHA512, "image")},
      Abort{"operator abort"},
  };
  for (std::size_t i = 0; i < all.size(); ++i) {
    EXPECT_EQ(static_cast<std::size_t>(type_of(all[i])), i + 1);
    EXPECT_EQ(round_trip(all[i]), all[i]) << describe(all[i]);
  }
}

TEST(Frame, JobOpenDropsPathButKeepsDescriptor) {
  auto j = job(10'000, 4096);
  j.device.path = "/dev/sdz";
  const auto back = from_message(std::get<JobOpen>(round_trip(to_message(j))));
  EXPECT_TRUE(back.device.path.empty());
  EXPECT_EQ(back.device.partitions, j.device.partitions);
  EXPECT_EQ(back.whole_image_digest, j.whole_image_digest);
  EXPECT_EQ(back.chunk_count(), 3u);
  EXPECT_EQ(back.chunk_length(2), 10'000u - 8192u);
}

TEST(Frame, GoldenAckBytes) {
  const Bytes expected = {0x52, 0x41, 0x46, 0x54, 0x01, 0x08, 0, 0, 0, 0, 0, 0, 0, 8, 0, 0, 0, 0, 0, 0, 0, 3};
  EXPECT_EQ(encode_frame(Ack{3}), expected);
}

TEST(Frame, EncodingIsDeterministic) {
  const Message m = ChunkData{9, payload(333, 1)};
  EXPECT_EQ(encode_frame(m), encode_frame(m));
  EXPECT_EQ(encode_frame(m).size(), kHeaderSize + 8 + 333);
}

TEST(Frame, DecodesConcatenatedFrames) {
  auto buf = encode_frame(Ack{1});
  const auto second = encode_frame(Nak{2, "x"});
  buf.insert(buf.end(), second.begin(), second.end());
  const auto first = decode_frame(buf);
  EXPECT_EQ(std::get<Ack>(first.message).seq, 1u);
  const auto next = decode_frame(std::span(buf).subspan(first.consumed));
  EXPECT_EQ(std::get<Nak>(next.message).reason, "x");
}

TEST(Frame, DecodeFailures) {
  const auto good = encode_frame(Ack{5});
  EXPECT_EQ(failure_of(std::span(good).first(5)), DecodeFailure::NeedMoreBytes);
  EXPECT_EQ(failure_of(std::span(good).first(good.size() - 1)), DecodeFailure::NeedMoreBytes);

  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(failure_of(bad), DecodeFailure::BadMagic);
  bad = good;
  bad[4] = 0x02;
  EXPECT_EQ(failure_of(bad), DecodeFailure::UnsupportedVersion);
  bad = good;
  bad[5] = 0;
  EXPECT_EQ(failure_of(bad), DecodeFailure::UnknownType);
  bad[5] = 13;
  EXPECT_EQ(failure_of(bad), DecodeFailure::UnknownType);
  bad = good;
  bad[6] = 0x01;  // 2^56 byte payload
  EXPECT_EQ(failure_of(bad), DecodeFailure::TooLarge);

  // declared length 9 for an ACK: trailing byte
  bad = good;
  bad[13] = 9;
  bad.push_back(0);
  EXPECT_EQ(failure_of(bad), DecodeFailure::Malformed);
  // ACK with a 4-byte payload
  Bytes shortack = {0x52, 0x41, 0x46, 0x54, 0x01, 0x08, 0, 0, 0, 0, 0, 0, 0, 4, 0, 0, 0, 1};
  EXPECT_EQ(failure_of(shortack), DecodeFailure::Malformed);
}

TEST(Frame, HeaderOnly) {
  const auto frame = encode_frame(Nak{1, "r"});
  const auto h = decode_header(std::span(frame).first(kHeaderSize));
  EXPECT_EQ(h.type, MessageType::Nak);
  EXPECT_EQ(h.payload_length, frame.size() - kHeaderSize);
  EXPECT_EQ(message_type_name(h.type), "NAK");
}

TEST(PassphraseProof, MatchesIndependentDigest) {
  const auto secret = digest_text(HashAlgorithm::SHA256, "correct horse").bytes();
  Bytes nonce(16);
  for (std::size_t i = 0; i < nonce.size(); ++i) nonce[i] = static_cast<std::uint8_t>(i);
  EXPECT_EQ(DigestValue(HashAlgorithm::SHA256, passphrase_proof(secret, nonce)).hex(),
            "d7954e3d98cd97c64df7005d7e8ca123d25625ec0f601bfa08b0d05d0731152d");
}

TEST(ClientMachine, HandshakeSendsHelloAuthAndJobOpen) {
  const auto j = job(10'000, 4096);
  const Bytes secret(32, 0x11);
  auto step = client_step(ClientSessionState::initial(j, secret), client_event::Start{});
  ASSERT_EQ(messages_of<Hello>(step.actions).size(), 1u);

  const Bytes nonce(16, 0x22);
  step = client_step(step.state, client_event::Inbound{Hello{kProtocolVersion, nonce}});
  const auto auth = messages_of<Auth>(step.actions);
  ASSERT_EQ(auth.size(), 1u);
  EXPECT_EQ(auth[0].passphrase_proof, passphrase_proof(secret, nonce));

  step = client_step(step.state, client_event::Inbound{AuthResult{true}});
  ASSERT_EQ(messages_of<JobOpen>(step.actions).size(), 1u);
  EXPECT_EQ(step.state.phase, ClientPhase::JobOpen);
}

TEST(ClientMachine, RefusedAuthFailsUnauthorized) {
  auto step = client_step(ClientSessionState::initial(job(100, 10), Bytes(32)), client_event::Start{});
  step = client_step(step.state, client_event::Inbound{Hello{kProtocolVersion, Bytes(16)}});
  step = client_step(step.state, client_event::Inbound{AuthResult{false}});
  EXPECT_EQ(step.state.phase, ClientPhase::Failed);
  EXPECT_EQ(step.error, ErrorCode::Unauthorized);
}

TEST(ClientMachine, WindowOfTwoRequestsFirstChunks) {
  const auto step = client_in_transfer(job(10 * 100, 100));
  EXPECT_EQ(requests_of(step.actions), (std::vector<std::uint64_t>{0, 1}));
  EXPECT_EQ(step.state.in_flight.size(), 2u);
}

TEST(ClientMachine, ChunkReadySendsDataThenDigest) {
  auto step = client_in_transfer(job(1000, 100));
  const auto d = digest_text(HashAlgorithm::SHA256, "c0");
  step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
  ASSERT_EQ(step.actions.size(), 2u);
  EXPECT_EQ(type_of(std::get<Message>(step.actions[0])), MessageType::ChunkData);
  EXPECT_EQ(type_of(std::get<Message>(step.actions[1])), MessageType::ChunkDigest);
  // a second ChunkReady for the same seq was not requested
  step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
  EXPECT_EQ(step.error, ErrorCode::ProtocolViolation);
}

TEST(ClientMachine, NakQueuesRetransmitAtFront) {
  auto step = client_in_transfer(job(1000, 100));
  const auto d = digest_text(HashAlgorithm::SHA256, "c");
  step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
  step = client_step(step.state, client_event::ChunkReady{1, payload(100, 0), d});
  step = client_step(step.state, client_event::Inbound{Nak{0, "digest mismatch"}});
  EXPECT_EQ(requests_of(step.actions), (std::vector<std::uint64_t>{0}));
  EXPECT_EQ(step.state.attempts[0], 2u);
  step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
  step = client_step(step.state, client_event::Inbound{Ack{0}});
  EXPECT_EQ(requests_of(step.actions), (std::vector<std::uint64_t>{2}));
}

TEST(ClientMachine, RetryLimitExceededAfterFiveAttempts) {
  auto step = client_in_transfer(job(1000, 100), 0, 5);
  const auto d = digest_text(HashAlgorithm::SHA256, "c");
  int naks = 0;
  while (step.state.phase == ClientPhase::Transferring) {
    step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
    step = client_step(step.state, client_event::Inbound{Nak{0, "digest mismatch"}});
    ++naks;
    ASSERT_LE(naks, 5);
  }
  EXPECT_EQ(naks, 5);
  EXPECT_EQ(step.error, ErrorCode::RetryLimitExceeded);
  EXPECT_EQ(messages_of<Abort>(step.actions).size(), 1u);
}

TEST(ClientMachine, AckForUnsentChunkIsViolation) {
  auto step = client_in_transfer(job(1000, 100));
  step = client_step(step.state, client_event::Inbound{Ack{7}});
  EXPECT_EQ(step.error, ErrorCode::ProtocolViolation);
}

TEST(ClientMachine, ResumeSkipsVerifiedChunks) {
  const auto step = client_in_transfer(job(1000, 100), 6);
  EXPECT_EQ(requests_of(step.actions), (std::vector<std::uint64_t>{6, 7}));
  EXPECT_EQ(step.state.acked, 6u);
}

TEST(ClientMachine, ResumeAtEndFinalizesImmediately) {
  const auto step = client_in_transfer(job(1000, 100), 10);
  EXPECT_TRUE(requests_of(step.actions).empty());
  EXPECT_EQ(messages_of<JobFinalize>(step.actions).size(), 1u);
  EXPECT_EQ(step.state.phase, ClientPhase::AwaitingFinal);
}

TEST(ClientMachine, FinalResultDecidesOutcome) {
  auto step = client_in_transfer(job(100, 100));
  const auto d = digest_text(HashAlgorithm::SHA256, "c");
  step = client_step(step.state, client_event::ChunkReady{0, payload(100, 0), d});
  step = client_step(step.state, client_event::Inbound{Ack{0}});
  ASSERT_EQ(step.state.phase, ClientPhase::AwaitingFinal);
  auto ok = client_step(step.state, client_event::Inbound{FinalResult{true, d}});
  EXPECT_EQ(ok.state.phase, ClientPhase::Done);
  auto bad = client_step(step.state, client_event::Inbound{FinalResult{false, d}});
  EXPECT_EQ(bad.state.phase, ClientPhase::Failed);
}

TEST(ClientMachine, TimeoutIsConnectionLost) {
  auto step = client_in_transfer(job(1000, 100));
  step = client_step(step.state, client_event::Timeout{});
  EXPECT_EQ(step.error, ErrorCode::ConnectionLost);
}

namespace {

ServerStep server_receiving(const JobParams& j, std::optional<Bytes> secret, std::uint64_t resume_from = 0) {
  const Bytes nonce(16, 0x33);
  auto step = server_step(ServerSessionState::initial(nonce, secret), server_event::Inbound{Hello{kProtocolVersion, Bytes(16)}});
  const Bytes proof = secret ? passphrase_proof(*secret, nonce) : Bytes(32);
  step = server_step(step.state, server_event::Inbound{Auth{proof}});
  step = server_step(step.state, server_event::Inbound{to_message(j)});
  EXPECT_EQ(step.commands.size(), 1u);
  step = server_step(step.state, server_event::JobOpened{"S1", resume_from});
  return step;
}

}  // namespace

TEST(ServerMachine, RepliesHelloWithNonceAndChecksProof) {
  const Bytes secret(32, 0x44);
  const Bytes nonce(16, 0x33);
  auto step = server_step(ServerSessionState::initial(nonce, secret), server_event::Inbound{Hello{kProtocolVersion, Bytes(16)}});
  ASSERT_EQ(step.messages.size(), 1u);
  EXPECT_EQ(std::get<Hello>(step.messages[0]).nonce, nonce);

  auto bad = server_step(step.state, server_event::Inbound{Auth{Bytes(32, 0)}});
  EXPECT_FALSE(std::get<AuthResult>(bad.messages.at(0)).ok);
  EXPECT_EQ(bad.state.phase, ServerPhase::Failed);
  EXPECT_EQ(bad.state.error, ErrorCode::Unauthorized);

  auto good = server_step(step.state, server_event::Inbound{Auth{passphrase_proof(secret, nonce)}});
  EXPECT_TRUE(std::get<AuthResult>(good.messages.at(0)).ok);
  EXPECT_EQ(good.state.phase, ServerPhase::AwaitingJob);
}

TEST(ServerMachine, ChunkBeforeAuthIsViolation) {
  auto step = server_step(ServerSessionState::initial(Bytes(16), std::nullopt),
                          server_event::Inbound{ChunkData{0, payload(1, 0)}});
  EXPECT_EQ(step.error, ErrorCode::ProtocolViolation);
  EXPECT_EQ(std::get<Abort>(step.messages.at(0)).reason.empty(), false);
}

TEST(ServerMachine, VerifiesInOrderAndAppendsOnAck) {
  const auto j = job(300, 100);
  auto step = server_receiving(j, Bytes(32, 1));
  EXPECT_EQ(std::get<JobAccept>(step.messages.at(0)).resume_from_seq, 0u);
  const auto d = digest_text(HashAlgorithm::SHA256, "c");

  step = server_step(step.state, server_event::Inbound{ChunkData{1, payload(100, 1)}});
  step = server_step(step.state, server_event::Inbound{ChunkDigest{1, d}});
  EXPECT_TRUE(step.commands.empty());  // seq 1 waits for seq 0
  step = server_step(step.state, server_event::Inbound{ChunkData{0, payload(100, 0)}});
  step = server_step(step.state, server_event::Inbound{ChunkDigest{0, d}});
  ASSERT_EQ(step.commands.size(), 1u);
  EXPECT_EQ(std::get<command::Verify>(step.commands[0]).seq, 0u);

  step = server_step(step.state, server_event::VerifyDone{0, true});
  ASSERT_EQ(step.commands.size(), 2u);
  EXPECT_EQ(std::get<command::Append>(step.commands[0]).seq, 0u);
  EXPECT_EQ(std::get<command::Verify>(step.commands[1]).seq, 1u);
  EXPECT_EQ(std::get<Ack>(step.messages.at(0)).seq, 0u);

  step = server_step(step.state, server_event::VerifyDone{1, false});
  EXPECT_EQ(std::get<command::Discard>(step.commands.at(0)).seq, 1u);
  EXPECT_EQ(std::get<Nak>(step.messages.at(0)).seq, 1u);
  EXPECT_EQ(step.state.next_append, 1u);
}

TEST(ServerMachine, OutOfWindowChunkIsRejected) {
  auto step = server_receiving(job(1000, 100), std::nullopt);
  step = server_step(step.state, server_event::Inbound{ChunkData{2, payload(100, 0)}});
  EXPECT_EQ(step.error, ErrorCode::OutOfOrderChunk);
}

TEST(ServerMachine, ResumeRejectsAlreadyVerifiedSeq) {
  auto step = server_receiving(job(1000, 100), std::nullopt, 4);
  EXPECT_EQ(std::get<JobAccept>(step.messages.at(0)).resume_from_seq, 4u);
  auto old = server_step(step.state, server_event::Inbound{ChunkData{3, payload(100, 0)}});
  EXPECT_EQ(old.error, ErrorCode::OutOfOrderChunk);
  auto fine = server_step(step.state, server_event::Inbound{ChunkData{4, payload(100, 0)}});
  EXPECT_FALSE(fine.error);
}

TEST(ServerMachine, WrongLengthIsNakedWithoutVerify) {
  auto step = server_receiving(job(250, 100), std::nullopt);
  step = server_step(step.state, server_event::Inbound{ChunkData{0, payload(99, 0)}});
  step = server_step(step.state, server_event::Inbound{ChunkDigest{0, digest_text(HashAlgorithm::SHA256, "c")}});
  EXPECT_EQ(std::get<Nak>(step.messages.at(0)).reason, "length mismatch");
}

TEST(ServerMachine, EarlyFinalizeIsViolation) {
  auto step = server_receiving(job(250, 100), std::nullopt);
  step = server_step(step.state, server_event::Inbound{JobFinalize{}});
  EXPECT_EQ(step.error, ErrorCode::ProtocolViolation);
}

TEST(ServerMachine, DisconnectDuringVerifyClosesAfterResult) {
  auto step = server_receiving(job(250, 100), std::nullopt);
  step = server_step(step.state, server_event::Inbound{ChunkData{0, payload(100, 0)}});
  step = server_step(step.state, server_event::Inbound{ChunkDigest{0, digest_text(HashAlgorithm::SHA256, "c")}});
  step = server_step(step.state, server_event::Disconnected{});
  EXPECT_TRUE(step.commands.empty());
  step = server_step(step.state, server_event::VerifyDone{0, true});
  ASSERT_EQ(step.commands.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<command::Append>(step.commands[0]));
  EXPECT_TRUE(std::holds_alternative<command::Close>(step.commands[1]));
  EXPECT_EQ(step.state.phase, ServerPhase::Failed);
}

TEST(Resume, Point) {
  const auto j = job(1000, 100);
  EXPECT_EQ(resume_point(j, std::nullopt), 0u);
  PriorSession prior{"S0", j.whole_image_digest, 100, 4};
  EXPECT_EQ(resume_point(j, prior), 4u);
  prior.chunks_verified = 50;
  EXPECT_EQ(resume_point(j, prior), 10u);
  prior.whole_image_digest = digest_text(HashAlgorithm::SHA512, "other");
  try {
    resume_point(j, prior);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DigestMismatchOnResume);
  }
}

// Both machines wired back to back with an in-memory channel; chunks are
// corrupted at random and verification compares real digests.
TEST(Machines, PropertyEveryChunkAnsweredOnceAndAppendedInOrder) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    std::mt19937_64 rng(seed);
    const std::uint64_t chunks = 1 + rng() % 12;
    const auto j = job(chunks * 16 - rng() % 16, 16);
    const Bytes secret(32, 0x5A);
    std::bernoulli_distribution corrupt(0.3);

    auto c = client_step(ClientSessionState::initial(j, secret, 50, 2), client_event::Start{});
    auto s = ServerStep{ServerSessionState::initial(Bytes(16, 3), secret, 2), {}, {}, std::nullopt};
    std::deque<Message> to_server, to_client;
    std::vector<std::uint64_t> appended;
    std::map<std::uint64_t, int> sent, answered;
    std::size_t max_in_flight = 0;

    auto take_client = [&](const ClientStep& step) {
      max_in_flight = std::max(max_in_flight, step.state.in_flight.size());
      for (const auto& a : step.actions) {
        if (const auto* m = std::get_if<Message>(&a)) {
          if (const auto* data = std::get_if<ChunkData>(m)) ++sent[data->seq];
          to_server.push_back(*m);
        }
      }
    };
    std::deque<ClientEvent> client_local;
    auto requests = [&](const ClientStep& step) {
      for (auto seq : requests_of(step.actions)) {
        Bytes bytes(j.chunk_length(seq), static_cast<std::uint8_t>(seq));
        const auto digest = digest_bytes(HashAlgorithm::SHA256, bytes);
        if (corrupt(rng)) bytes[bytes.size() / 2] ^= 0xFF;
        client_local.push_back(client_event::ChunkReady{seq, std::make_shared<const Bytes>(bytes), digest});
      }
    };
    std::deque<ServerEvent> server_local;
    auto take_server = [&](const ServerStep& step) {
      for (const auto& cmd : step.commands) {
        if (const auto* v = std::get_if<command::Verify>(&cmd)) {
          server_local.push_back(server_event::VerifyDone{v->seq, digest_bytes(HashAlgorithm::SHA256, *v->payload) == v->claimed});
        } else if (const auto* ap = std::get_if<command::Append>(&cmd)) {
          appended.push_back(ap->seq);
        } else if (std::holds_alternative<command::OpenJob>(cmd)) {
          server_local.push_back(server_event::JobOpened{"S", 0});
        } else if (std::holds_alternative<command::FinalVerify>(cmd)) {
          server_local.push_back(server_event::FinalDone{true, j.whole_image_digest});
        }
      }
      for (const auto& m : step.messages) {
        if (const auto* a = std::get_if<Ack>(&m)) ++answered[a->seq];
        if (const auto* n = std::get_if<Nak>(&m)) ++answered[n->seq];
        to_client.push_back(m);
      }
    };

    take_client(c);
    for (int guard = 0; guard < 100'000; ++guard) {
      if (!client_local.empty()) {
        c = client_step(c.state, client_local.front());
        client_local.pop_front();
        take_client(c);
        requests(c);
      } else if (!to_server.empty()) {
        s = server_step(s.state, server_event::Inbound{to_server.front()});
        to_server.pop_front();
        take_server(s);
      } else if (!server_local.empty()) {
        s = server_step(s.state, server_local.front());
        server_local.pop_front();
        take_server(s);
      } else if (!to_client.empty()) {
        c = client_step(c.state, client_event::Inbound{to_client.front()});
        to_client.pop_front();
        take_client(c);
        requests(c);
      } else {
        break;
      }
    }

    ASSERT_EQ(c.state.phase, ClientPhase::Done) << "seed " << seed << " " << c.state.failure_reason;
    EXPECT_EQ(s.state.phase, ServerPhase::Done);
    std::vector<std::uint64_t> expected(j.chunk_count());
    for (std::uint64_t i = 0; i < expected.size(); ++i) expected[i] = i;
    EXPECT_EQ(appended, expected);
    EXPECT_EQ(sent, answered);
    EXPECT_LE(max_in_flight, 2u);
  }
}
