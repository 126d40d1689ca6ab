// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "harness.hpp"
#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "raft/timing.hpp"

using namespace raft;
using namespace raft::test;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome pass(std::string detail = {}) { return {true, std::move(detail)}; }
Outcome fail(std::string detail) { return {false, std::move(detail)}; }

const char* kDog = "The quick brown fox jumps over the lazy dog";
const char* kCog = "The quick brown fox jumps over the lazy cog";

struct TableRow {
  HashAlgorithm alg;
  const char* dog;
  const char* cog;
  double diff_percent;
};

// Digest comparison table, values as printed (upper case, spaces removed).
const TableRow kTable[] = {
    {HashAlgorithm::MD5, "9E107D9D372BB6826BD81D3542A419D6", "1055D3E698D289F2AF8663725127BD4B", 100.0},
    {HashAlgorithm::SHA1, "2FD4E1C67A2D28FCED849EE1BB76E7391B93EB12", "DE9F2C7FD25E1B3AFAD3E85A0BD17D9B100DB4B3", 95.0},
    {HashAlgorithm::SHA256, "D7A8FBB307D7809469CA9ABCB0082E4F8D5651E46D3CDB762D02D0BF37C9E592",
     "E4C4D8F3BF76B692DE791A173E05321150F7A345B46484FE427F6ACC7ECC81BE", 95.3},
    {HashAlgorithm::SHA384,
     "CA737F1014A48F4C0B6DD43CB177B0AFD9E5169367544C494011E3317DBF9A509CB1E5DC1E85A941BBEE3D7F2AFBC9B1",
     "098CEA620B0978CAA5F0BEFBA6DDCF22764BEA977E1C70B3483EDFDF1DE25F4B40D6CEA3CADF00F809D422FEB1F0161B", 95.8},
    {HashAlgorithm::SHA512,
     "07E547D9586F6A73F73FBAC0435ED76951218FB7D0C8D788A309D785436BBB642E93A252A954F23912547D1E8A3B5ED6E1BFD7097821233FA"
     "0538F3DB854FEE6",
     "3EEEE1D0E11733EF152A6C29503B3AE20C4F1F3CDA4CB26F1BC1A41F91C7FE4AB3BD86494049E201C4BD5155F31ECB7A3C8606843C4CC8DFC"
     "AB7DA11C8AE5045",
     96.1},
};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome hash_vectors() {
  for (const auto& row : kTable) {
    for (auto [text, printed] : {std::pair{kDog, row.dog}, std::pair{kCog, row.cog}}) {
      const auto got = digest_text(row.alg, text).hex();
      if (got != lower(printed)) {
        return fail(std::string(algorithm_name(row.alg)) + " gave " + got + ", table prints " + printed);
      }
    }
  }
  return pass("10 digests");
}

Outcome avalanche() {
  std::string detail;
  bool ok = true;
  for (const auto& row : kTable) {
    const double got = hex_diff_percent(DigestValue::from_hex(row.alg, row.dog), DigestValue::from_hex(row.alg, row.cog));
    const bool match = got == row.diff_percent;
    ok = ok && match;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(algorithm_name(row.alg)) + " " + fmt("%.1f", got) +
              (match ? "" : " (table " + fmt("%.1f", row.diff_percent) + ")");
  }
  return {ok, detail};
}

struct Acquired {
  AcquisitionResult result;
  std::vector<ProgressEvent> events;
};

Outcome check_copy(const AcquisitionResult& r, const AcquisitionServer& server, const DeviceDescriptor& d) {
  if (!r.verified()) {
    return fail(d.device_id + " not verified: " + (r.error ? std::string(to_string(*r.error)) : "") + " " + r.detail);
  }
  const auto dir = server.store().device_dir("case1", r.session_id, d.device_id);
  if (!same_bytes(dir / "image.raw", d.path)) return fail(d.device_id + " image.raw differs from the source");
  if (read_evidence_record(dir).final_verdict != Verdict::Verified) return fail(d.device_id + " metadata verdict not verified");
  return pass();
}

constexpr std::uint64_t kMiB = 1024 * 1024;

Outcome end_to_end() {
  TempDir dir;
  const auto device = make_device(dir / "disk.img", 64 * kMiB, 2024);
  AcquisitionServer server(server_config(dir / "store"));
  const auto r = run_acquisition(loopback_connector(server), device, options(4 * kMiB));
  server.shutdown();
  auto o = check_copy(r, server, device);
  if (o.pass) o.detail = "64 MiB, 16 chunks, session " + r.session_id;
  return o;
}

Outcome fault_tolerance() {
  TempDir dir;
  const auto device = make_device(dir / "disk.img", 64 * kMiB, 2024);
  AcquisitionServer server(server_config(dir / "store"));
  FaultPlan plan;
  plan.seed = 7;
  plan.corrupt_chunk_probability = 0.3;
  auto stats = std::make_shared<FaultStats>();
  std::vector<ProgressEvent> events;
  const auto r = run_acquisition(all_connections_faulty(loopback_connector(server), plan, stats), device,
                                 options(4 * kMiB), [&](ProgressEvent ev) { events.push_back(std::move(ev)); });
  server.shutdown();
  auto o = check_copy(r, server, device);
  if (!o.pass) return o;
  std::uint64_t nak_events = 0;
  std::set<std::uint64_t> acked;
  std::vector<std::uint64_t> nacked;
  for (const auto& ev : events) {
    if (ev.kind == ProgressKind::ChunkNacked) {
      ++nak_events;
      nacked.push_back(*ev.seq);
    }
    if (ev.kind == ProgressKind::ChunkAcked) acked.insert(*ev.seq);
  }
  for (auto seq : nacked) {
    if (!acked.count(seq)) return fail("chunk " + std::to_string(seq) + " NAKed but never acknowledged");
  }
  const auto corrupted = stats->corrupted_chunks.load();
  if (corrupted == 0) return fail("fault plan corrupted nothing");
  if (nak_events != corrupted) {
    return fail(std::to_string(nak_events) + " NAK events vs " + std::to_string(corrupted) + " corrupted chunks");
  }
  return pass(std::to_string(corrupted) + " corrupted, " + std::to_string(nak_events) + " NAKs, all retransmitted");
}

Outcome resume() {
  TempDir dir;
  const auto device = make_device(dir / "disk.img", 64 * kMiB, 2024);
  AcquisitionServer server(server_config(dir / "store"));
  FaultPlan plan;
  plan.drop_connection_after_bytes = device.total_bytes / 2;
  auto stats = std::make_shared<FaultStats>();
  const auto r = run_acquisition(first_connection_faulty(loopback_connector(server), plan, stats), device,
                                 options(4 * kMiB));
  server.shutdown();
  auto o = check_copy(r, server, device);
  if (!o.pass) return o;
  if (!stats->dropped || r.connections.size() != 2) return fail("expected one dropped and one resumed connection");
  const auto& first = r.connections[0];
  const auto& second = r.connections[1];
  std::uint64_t resent = 0;
  for (auto seq : second.sent) {
    resent += std::count(first.acked.begin(), first.acked.end(), seq) > 0 || seq < second.resume_from;
  }
  if (resent != 0) return fail(std::to_string(resent) + " verified chunks re-sent");
  if (second.resume_from == 0) return fail("resumed from 0");
  return pass("dropped after " + std::to_string(first.acked.size()) + " verified chunks, resumed at seq " +
              std::to_string(second.resume_from));
}

Outcome pipelining() {
  SimulationConfig cfg;
  cfg.chunk_count = 10;
  cfg.transfer_seconds = 0.1;
  cfg.verify_seconds = 0.02;
  const auto r = simulate_pipeline(cfg);
  const double target = 10 * 0.1 + 0.02;
  const double err = std::abs(r.total_seconds - target) / target;
  const auto detail = "simulated " + fmt("%.3f", r.total_seconds) + " s vs 10t+d " + fmt("%.3f", target) + " s";
  if (!r.verified) return fail("simulated run did not verify");
  return {err < 0.15, detail};
}

Outcome linearity() {
  TempDir dir;
  BenchConfig cfg;
  cfg.sizes = {64 * kMiB, 128 * kMiB, 256 * kMiB};
  cfg.algorithms = {HashAlgorithm::SHA256, HashAlgorithm::SHA512};
  cfg.work_dir = dir.path();
  const auto report = bench_hash(cfg);
  const auto* s256 = report.summary(HashAlgorithm::SHA256);
  const auto* s512 = report.summary(HashAlgorithm::SHA512);
  const auto detail = "sha256 " + fmt("%.3f", s256->mean_normalized) + " s/GiB dev " +
                      fmt("%.1f%%", 100 * s256->max_relative_deviation) + ", sha512 " +
                      fmt("%.3f", s512->mean_normalized) + " s/GiB dev " + fmt("%.1f%%", 100 * s512->max_relative_deviation);
  const bool ok = s256->max_relative_deviation < 0.25 && s512->max_relative_deviation < 0.25 &&
                  s512->mean_normalized > s256->mean_normalized;
  return {ok, detail};
}

Outcome timing_formula() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> mant(1.0, 10.0);
  std::uniform_int_distribution<int> expo(3, 10);
  auto draw = [&] { return mant(rng) * std::pow(10.0, expo(rng)); };
  for (int i = 0; i < 20; ++i) {
    const TimingInputs in{draw(), draw(), draw(), draw()};
    const double hand = in.image_bits / in.bandwidth_bps + in.chunk_bits / in.verify_bps;
    const double t = estimate_total_time(in);
    if (t != hand) return fail("input " + std::to_string(i) + " differs from H/B + C/V");
    auto scaled = [&](double TimingInputs::*field) {
      auto copy = in;
      copy.*field *= 2.0;
      return estimate_total_time(copy);
    };
    if (!(scaled(&TimingInputs::image_bits) >= t && scaled(&TimingInputs::chunk_bits) >= t &&
          scaled(&TimingInputs::bandwidth_bps) <= t && scaled(&TimingInputs::verify_bps) <= t)) {
      return fail("monotonicity violated on input " + std::to_string(i));
    }
  }
  return pass("20 inputs exact, monotone in H, B, C, V");
}

Outcome multi_session() {
  TempDir dir;
  AcquisitionServer server(server_config(dir / "store"));
  const auto port = server.listen();
  std::vector<DeviceDescriptor> devices;
  for (int i = 0; i < 3; ++i) {
    devices.push_back(make_device(dir / ("disk" + std::to_string(i) + ".img"), 16 * kMiB + 4096 * i, 100 + i));
  }
  std::vector<std::future<AcquisitionResult>> futures;
  for (const auto& d : devices) {
    futures.push_back(std::async(std::launch::async, [port, d] {
      return run_acquisition([port] { return stream_connect("127.0.0.1", port); }, d, options(kMiB));
    }));
  }
  std::vector<AcquisitionResult> results;
  for (auto& f : futures) results.push_back(f.get());
  server.shutdown();
  std::set<fs::path> dirs;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto o = check_copy(results[i], server, devices[i]);
    if (!o.pass) return o;
    dirs.insert(server.store().device_dir("case1", results[i].session_id, devices[i].device_id).parent_path());
  }
  if (dirs.size() != 3) return fail("session directories are not distinct");
  return pass("3 verified records in distinct session directories");
}

Outcome bios() {
  const std::vector<std::string> award = {
      "01322222", "589589",   "589721",  "595595",   "598598",   "ALFAROME", "ALLY",     "ALLy",     "aLLY",
      "aLLy",     "aPAf",     "award",   "AWARD PW", "AWARD SW", "AWARD?SW", "AWARD_PW", "AWARD_SW", "AWKWARD",
      "awkward",  "BIOSTAR",  "CONCAT",  "CONDO",    "Condo",    "condo",    "d8on",     "djonet",   "HLT",
      "J256",     "J262",     "j262",    "j322",     "j332",     "J64",      "KDD",      "LKWPETER", "Lkwpeter",
      "PINT",     "pint",     "SER",     "SKY_FOX",  "SYXZ",     "syxz",     "TTPTHA",   "ZAAAADA",  "ZAAADA",
      "ZBAAACA",  "ZJAAADC"};
  const std::vector<std::string> ami = {"AMI",    "AAAMMMIII", "BIOS",     "PASSWORD", "HEWITT RAND",
                                        "AMI?SW", "AMI_SW",    "LKWPETER", "A.M.I.",   "CONDO"};
  const std::vector<std::string> phoenix = {"BIOS", "CMOS", "phoenix", "PHOENIX", "Phoenix"};
  if (lookup_bios_backdoor("AWARD").passwords != award) return fail("AWARD row differs");
  if (lookup_bios_backdoor("ami").passwords != ami) return fail("AMI row differs");
  if (lookup_bios_backdoor("Phoenix").passwords != phoenix) return fail("PHOENIX row differs");
  const auto unknown = lookup_bios_backdoor("Insyde");
  if (!unknown.passwords.empty() || unknown.advisory.empty()) return fail("unknown manufacturer not advisory-only");
  return pass("3 rows verbatim, unknown gives advisory");
}

struct Criterion {
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"hash-vectors", 1, hash_vectors},
      {"avalanche-percentages", 1, avalanche},
      {"end-to-end-byte-identity", 30, end_to_end},
      {"fault-tolerance", 60, fault_tolerance},
      {"resume", 60, resume},
      {"pipelining-overhead", 5, pipelining},
      {"linearity", 120, linearity},
      {"timing-formula", 1, timing_formula},
      {"multi-session-isolation", 60, multi_session},
      {"bios-lookup", 1, bios},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.pass && secs > c.limit_seconds) {
      o = fail("took " + fmt("%.2f", secs) + " s, limit " + fmt("%.0f", c.limit_seconds) + " s; " + o.detail);
    }
    failures += !o.pass;
    std::printf("%s %s (%.2f s) %s\n", o.pass ? "PASS" : "FAIL", c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
