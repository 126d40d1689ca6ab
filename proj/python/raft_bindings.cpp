#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "raft/client.hpp"
#include "raft/error.hpp"
#include "raft/hashing.hpp"
#include "raft/imaging.hpp"
#include "raft/timing.hpp"
#include "raft/wire.hpp"

namespace py = pybind11;
using namespace raft;

namespace {

std::span<const std::uint8_t> as_span(const py::bytes& b) {
  const std::string_view view = b;
  return {reinterpret_cast<const std::uint8_t*>(view.data()), view.size()};
}

py::bytes to_bytes(const std::vector<std::uint8_t>& v) {
  return py::bytes(reinterpret_cast<const char*>(v.data()), v.size());
}

}  // namespace

PYBIND11_MODULE(_raft, m) {
  m.doc() = "Chunked forensic acquisition toolkit: digests, chunk planning, wire frames and timing.";

  static py::exception<Error> error_type(m, "RaftError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object code = py::str(std::string(to_string(e.code())));
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(py::str(e.what()));
      exc.attr("code") = code;
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  m.def("algorithms", [] {
    std::vector<std::string> out;
    for (auto alg : kAllAlgorithms) out.emplace_back(algorithm_name(alg));
    return out;
  });

  m.def(
      "digest",
      [](const std::string& alg, const py::bytes& data) {
        return digest_bytes(parse_algorithm(alg), as_span(data)).hex();
      },
      py::arg("algorithm"), py::arg("data"), "Lowercase hex digest of a bytes object.");

  m.def(
      "digest_file", [](const std::string& alg, const std::filesystem::path& path) {
        py::gil_scoped_release release;
        return digest_file(path, parse_algorithm(alg)).hex();
      },
      py::arg("algorithm"), py::arg("path"));

  m.def(
      "hex_diff_percent",
      [](const std::string& alg, const std::string& a, const std::string& b) {
        const auto algorithm = parse_algorithm(alg);
        return hex_diff_percent(DigestValue::from_hex(algorithm, a), DigestValue::from_hex(algorithm, b));
      },
      py::arg("algorithm"), py::arg("a"), py::arg("b"));

  m.def(
      "plan_chunks",
      [](std::uint64_t total, std::uint64_t chunk) {
        std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>> out;
        for (const auto& s : plan_chunks(total, chunk)) out.emplace_back(s.seq, s.offset, s.length);
        return out;
      },
      py::arg("total_bytes"), py::arg("chunk_size"), "List of (seq, offset, length).");

  m.def(
      "estimate_total_time",
      [](double h, double b, double c, double v) { return estimate_total_time({h, b, c, v}); }, py::arg("H"),
      py::arg("B"), py::arg("C"), py::arg("V"));

  m.def(
      "bios_lookup",
      [](const std::string& manufacturer) {
        const auto r = lookup_bios_backdoor(manufacturer);
        return py::make_tuple(r.passwords, r.advisory);
      },
      py::arg("manufacturer"), "(passwords, advisory); advisory is empty for known manufacturers.");

  m.def(
      "encode_ack", [](std::uint64_t seq) { return to_bytes(wire::encode_frame(wire::Ack{seq})); }, py::arg("seq"));
  m.def(
      "encode_chunk",
      [](std::uint64_t seq, const py::bytes& payload) {
        auto span = as_span(payload);
        auto shared = std::make_shared<const wire::Bytes>(span.begin(), span.end());
        return to_bytes(wire::encode_frame(wire::ChunkData{seq, shared}));
      },
      py::arg("seq"), py::arg("payload"));
  m.def(
      "describe_frame",
      [](const py::bytes& frame) {
        const auto decoded = wire::decode_frame(as_span(frame));
        return py::make_tuple(wire::describe(decoded.message), decoded.consumed);
      },
      py::arg("frame"), "(description, bytes consumed) of the frame at the front of the buffer.");

  m.def(
      "split_to_files",
      [](const std::filesystem::path& source, std::uint64_t chunk_size, const std::filesystem::path& out,
         const std::vector<std::string>& algs) {
        std::vector<HashAlgorithm> algorithms;
        for (const auto& a : algs) algorithms.push_back(parse_algorithm(a));
        DeviceDescriptor d;
        d.device_id = source.filename().string();
        d.label = d.device_id;
        d.path = source.string();
        d.total_bytes = probe_source_size(source);
        auto src = open_source(d);
        const auto result = split_to_files(src, chunk_size, out, algorithms);
        std::vector<std::string> files;
        for (const auto& f : result.chunk_files) files.push_back(f.string());
        return py::make_tuple(files, format_hash_log(result.digests));
      },
      py::arg("source"), py::arg("chunk_size"), py::arg("out_dir"), py::arg("algorithms"));

  m.def(
      "simulate",
      [](std::uint64_t chunks, double transfer, double verify, double corrupt_probability, std::uint64_t seed) {
        SimulationConfig cfg;
        cfg.chunk_count = chunks;
        cfg.transfer_seconds = transfer;
        cfg.verify_seconds = verify;
        if (corrupt_probability > 0) {
          cfg.corrupt = [corrupt_probability, seed](std::uint64_t seq, std::uint32_t attempt) {
            FaultRng rng(seed ^ (seq * 0x9E3779B97F4A7C15ULL) ^ attempt);
            return rng.uniform() < corrupt_probability;
          };
        }
        const auto r = simulate_pipeline(cfg);
        py::dict out;
        out["total_seconds"] = r.total_seconds;
        out["verified"] = r.verified;
        out["naks"] = r.nak_count();
        out["corrupted"] = r.corrupted;
        out["appended"] = r.appended;
        return out;
      },
      py::arg("chunks"), py::arg("transfer_seconds"), py::arg("verify_seconds"), py::arg("corrupt_probability") = 0.0,
      py::arg("seed") = 1);
}
