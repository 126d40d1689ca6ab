// raft: server, client agent, local imaging, hashing and benchmarks.
//
// Exit codes: 0 ok, 2 usage or configuration, 3 domain failure,
// 4 authentication refused, 5 protocol or transport failure.

#include <csignal>
#include <cstdlib>
#include <atomic>
#include <charconv>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "raft/client.hpp"
#include "raft/control_api.hpp"
#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "raft/imaging.hpp"
#include "raft/server.hpp"
#include "raft/timing.hpp"

namespace fs = std::filesystem;
using namespace raft;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kDomain = 3;
constexpr int kAuth = 4;
constexpr int kProtocol = 5;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidChunkSize:
    case ErrorCode::UnknownAlgorithm:
    case ErrorCode::ParseError:
    case ErrorCode::StoreUnwritable:
    case ErrorCode::BindFailed:
    case ErrorCode::InsecureTransport:
    case ErrorCode::ScanRootMissing:
    case ErrorCode::NonPositiveInput: return kUsage;
    case ErrorCode::BadPassphrase:
    case ErrorCode::Locked:
    case ErrorCode::Unauthorized: return kAuth;
    case ErrorCode::DecodeError:
    case ErrorCode::ProtocolViolation:
    case ErrorCode::OutOfOrderChunk:
    case ErrorCode::RetryLimitExceeded:
    case ErrorCode::DigestMismatchOnResume:
    case ErrorCode::ConnectionLost:
    case ErrorCode::ConnectFailed: return kProtocol;
    default: return kDomain;
  }
}

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

void log_line(const std::string& text) { std::cerr << text << std::endl; }

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

std::vector<HashAlgorithm> parse_algorithm_list(const std::string& text) {
  std::vector<HashAlgorithm> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(parse_algorithm(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw Error(ErrorCode::UnknownAlgorithm, "no algorithm given; supported: " + supported_algorithms());
  return out;
}

std::uint64_t parse_size(const std::string& text) {
  std::uint64_t value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr == text.data()) throw Error(ErrorCode::InvalidArgument, "bad size '" + text + "'");
  std::string suffix(ptr, end);
  for (auto& c : suffix) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  std::uint64_t mult = 1;
  if (suffix.empty() || suffix == "B") {
    mult = 1;
  } else if (suffix == "K" || suffix == "KIB") {
    mult = 1ULL << 10;
  } else if (suffix == "M" || suffix == "MIB") {
    mult = 1ULL << 20;
  } else if (suffix == "G" || suffix == "GIB") {
    mult = 1ULL << 30;
  } else {
    throw Error(ErrorCode::InvalidArgument, "bad size suffix in '" + text + "'");
  }
  return value * mult;
}

std::vector<std::uint64_t> parse_size_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = text.find(',', start);
    out.push_back(parse_size(text.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

/// Shortest round-trip decimal, always with a fractional part ("5.0").
std::string format_seconds(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

// ---------------------------------------------------------------- subcommands

int cmd_server(const std::string& store, int port, const std::string& config_path, const std::string& bind) {
  ServerConfig cfg;
  const auto config_file = !config_path.empty() ? std::optional<std::string>(config_path) : env("RAFT_CONFIG");
  if (config_file) cfg = load_server_config(*config_file);
  if (auto s = env("RAFT_STORE")) cfg.store_root = *s;
  if (!store.empty()) cfg.store_root = store;
  if (port >= 0) cfg.port = static_cast<std::uint16_t>(port);
  if (!bind.empty()) cfg.bind_address = bind;
  if (cfg.store_root.empty()) throw Error(ErrorCode::InvalidArgument, "no evidence store given (--store or RAFT_STORE)");
  if (!cfg.passphrase_digest) log_line("warning: no passphrase_digest configured; any client proof is accepted");
  install_signal_handlers();
  run_server(cfg, [] { return g_stop.load(); }, log_line);
  return kOk;
}

struct ClientFlags {
  std::string config;
  bool headless = false;
  bool all = false;
  bool insecure = false;
  std::optional<std::uint64_t> seed;
  std::string passphrase;
  int control_port = 8473;
  std::string control_bind = "127.0.0.1";
};

int cmd_client(const ClientFlags& flags) {
  std::string config_path = flags.config;
  if (config_path.empty()) {
    if (auto c = env("RAFT_CONFIG")) config_path = *c;
  }
  if (config_path.empty()) throw Error(ErrorCode::InvalidArgument, "no client config given (--config or RAFT_CONFIG)");
  auto cfg = load_client_config(config_path);
  if (flags.insecure) cfg.insecure_transport_ok = true;
  if (flags.seed) {
    if (!cfg.faults) cfg.faults = FaultPlan{};
    cfg.faults->seed = *flags.seed;
  }
  if (flags.headless && !flags.all) throw Error(ErrorCode::InvalidArgument, "--headless requires --all");

  ClientAgent agent(cfg);
  for (const auto& e : agent.inventory()) {
    log_line("device " + e.device.device_id + " " + std::to_string(e.device.total_bytes) + " bytes " +
             std::string(selection_state_name(e.state)) + (e.error.empty() ? "" : " (" + e.error + ")"));
  }

  if (!flags.headless) {
    ControlApi api(agent, flags.control_bind, static_cast<std::uint16_t>(flags.control_port));
    const auto port = api.start();
    log_line("raft client control API listening on " + flags.control_bind + ":" + std::to_string(port));
    install_signal_handlers();
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    api.stop();
    return kOk;
  }

  std::string passphrase = flags.passphrase;
  if (passphrase.empty()) {
    if (auto p = env("RAFT_PASSPHRASE")) passphrase = *p;
  }
  if (passphrase.empty()) throw Error(ErrorCode::Unauthorized, "headless mode needs the passphrase (--passphrase or RAFT_PASSPHRASE)");
  agent.unlock(passphrase);

  const auto status = agent.acquire(AcquireMode::All);
  int code = kOk;
  for (const auto& r : status.results) {
    std::cout << r.device_id << '\t' << verdict_name(r.verdict) << '\t' << r.session_id << '\t'
              << (r.whole_image_digest ? r.whole_image_digest->hex() : "-") << '\n';
    if (!r.verified()) {
      log_line("device " + r.device_id + " failed: " + r.detail);
      const int c = r.error ? exit_code_for(*r.error) : kDomain;
      code = std::max(code, c);
    }
  }
  return code;
}

int cmd_image(const std::string& source, const std::string& chunk_size, const std::string& algs,
              const std::string& out) {
  const auto algorithms = parse_algorithm_list(algs);
  const auto size = parse_size(chunk_size);
  DeviceDescriptor d;
  d.device_id = fs::path(source).filename().string();
  d.label = d.device_id;
  d.path = source;
  d.total_bytes = probe_source_size(source);
  auto src = open_source(d);
  const auto result = split_to_files(src, size, out, algorithms);
  std::cout << format_hash_log(result.digests);
  return kOk;
}

int cmd_hash(const std::string& file, const std::string& algs) {
  const auto algorithms = parse_algorithm_list(algs);
  for (const auto alg : algorithms) {
    std::cout << digest_file(file, alg).hex() << "  " << algorithm_name(alg) << '\n';
  }
  return kOk;
}

int cmd_bench(const std::string& sizes, const std::string& algs, const std::string& dir, const std::string& json_out,
              unsigned repeats) {
  BenchConfig cfg;
  cfg.sizes = parse_size_list(sizes);
  cfg.algorithms = parse_algorithm_list(algs);
  cfg.work_dir = dir.empty() ? fs::temp_directory_path() / "raft-bench" : fs::path(dir);
  cfg.repeats = repeats;
  const auto report = bench_hash(cfg);
  std::cout << format_bench_tsv(report);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + json_out);
    out << format_bench_json(report);
  }
  return kOk;
}

int cmd_estimate(double h, double b, double c, double v, std::optional<double> p, std::optional<double> retries) {
  const TimingInputs in{h, b, c, v};
  if (p || retries) {
    std::cout << format_seconds(estimate_with_retransmissions(in, p.value_or(0.0), retries.value_or(0.0))) << '\n';
  } else {
    std::cout << format_seconds(estimate_total_time(in)) << '\n';
  }
  return kOk;
}

int cmd_bios(const std::string& manufacturer) {
  const auto result = lookup_bios_backdoor(manufacturer);
  if (!result.advisory.empty()) log_line(result.advisory);
  for (const auto& p : result.passwords) std::cout << p << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raft: remote acquisition of forensic disk images"};
  app.require_subcommand(1);

  std::string store, server_config, bind;
  int port = -1;
  auto* server = app.add_subcommand("server", "Run the acquisition server");
  server->add_option("--store", store, "Evidence store root (env RAFT_STORE)");
  server->add_option("--port", port, "Listen port, 0 for ephemeral")->check(CLI::Range(0, 65535));
  server->add_option("--config", server_config, "Server config file (env RAFT_CONFIG)");
  server->add_option("--bind", bind, "Bind address");

  ClientFlags cf;
  std::optional<std::uint64_t> seed;
  auto* client = app.add_subcommand("client", "Run the client agent");
  client->add_option("--config", cf.config, "Client config file (env RAFT_CONFIG)");
  client->add_flag("--headless", cf.headless, "Acquire without the control API");
  client->add_flag("--all", cf.all, "Acquire every enumerated device");
  client->add_flag("--insecure", cf.insecure, "Allow a plain (unencrypted) transport");
  client->add_option("--seed", seed, "Fault plan seed");
  client->add_option("--passphrase", cf.passphrase, "Unlock passphrase for headless mode (env RAFT_PASSPHRASE)");
  client->add_option("--control-port", cf.control_port, "Control API port")->check(CLI::Range(0, 65535));
  client->add_option("--control-bind", cf.control_bind, "Control API bind address");

  std::string image_source, chunk_size, image_algs, image_out;
  auto* image = app.add_subcommand("image", "Split a source into chunk files with a hash log");
  image->add_option("source", image_source, "Image file or block device")->required();
  image->add_option("--chunk-size", chunk_size, "Chunk size in bytes (K/M/G suffixes allowed)")->required();
  image->add_option("--hash", image_algs, "Algorithm or comma separated list")->required();
  image->add_option("--out", image_out, "Output directory")->required();

  std::string hash_file, hash_algs;
  auto* hash = app.add_subcommand("hash", "Digest a file");
  hash->add_option("file", hash_file, "File to digest")->required();
  hash->add_option("--alg", hash_algs, "Algorithm or comma separated list")->required();

  std::string bench_sizes, bench_algs = "sha256,sha512", bench_dir, bench_json;
  unsigned bench_repeats = 3;
  auto* bench = app.add_subcommand("bench", "Benchmark digest speed over zero-filled files");
  bench->add_option("--sizes", bench_sizes, "Comma separated sizes (K/M/G suffixes allowed)")->required();
  bench->add_option("--algs", bench_algs, "Comma separated algorithms");
  bench->add_option("--dir", bench_dir, "Scratch directory");
  bench->add_option("--json", bench_json, "Also write the report as JSON");
  bench->add_option("--repeats", bench_repeats, "Repeats per measurement (best is kept)")->check(CLI::PositiveNumber);

  double h = 0, b = 0, c = 0, v = 0;
  std::optional<double> retransmit_p, retries;
  auto* estimate = app.add_subcommand("estimate", "Estimate acquisition time T = H/B + C/V");
  estimate->add_option("--H", h, "Image size in bits")->required();
  estimate->add_option("--B", b, "Upload bandwidth in bits/s")->required();
  estimate->add_option("--C", c, "Chunk size in bits")->required();
  estimate->add_option("--V", v, "Server hash speed in bits/s")->required();
  estimate->add_option("--retransmit-probability", retransmit_p, "Extension: per-chunk corruption probability");
  estimate->add_option("--retries", retries, "Extension: expected retries per corrupted chunk");

  std::string manufacturer;
  auto* bios = app.add_subcommand("bios-lookup", "Known backdoor BIOS passwords for a manufacturer");
  bios->add_option("manufacturer", manufacturer, "AWARD, AMI or PHOENIX")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*server) return cmd_server(store, port, server_config, bind);
    if (*client) {
      cf.seed = seed;
      return cmd_client(cf);
    }
    if (*image) return cmd_image(image_source, chunk_size, image_algs, image_out);
    if (*hash) return cmd_hash(hash_file, hash_algs);
    if (*bench) return cmd_bench(bench_sizes, bench_algs, bench_dir, bench_json, bench_repeats);
    if (*estimate) return cmd_estimate(h, b, c, v, retransmit_p, retries);
    if (*bios) return cmd_bios(manufacturer);
  } catch (const Error& e) {
    std::cerr << "raft: " << e.what() << '\n';
    if (e.code() == ErrorCode::UnknownAlgorithm) std::cerr << "supported algorithms: " << supported_algorithms() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "raft: " << e.what() << '\n';
    return kDomain;
  }
  return kUsage;
}
