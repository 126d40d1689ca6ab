#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace raft {

/// Timeline of one session, in seconds on a steady clock from session start.
enum class TraceKind { JobAccepted, ChunkReceived, ChunkVerify, ChunkAppend, Nak, FinalVerify, FinalResult };

struct TraceEvent {
  TraceKind kind;
  std::optional<std::uint64_t> seq;
  double start = 0.0;
  double end = 0.0;  // equal to start for instantaneous events
};

using Trace = std::vector<TraceEvent>;

std::string_view trace_kind_name(TraceKind kind);

}  // namespace raft
