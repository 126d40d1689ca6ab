"""Python bindings for the raft acquisition toolkit."""

from ._raft import (
    RaftError,
    algorithms,
    bios_lookup,
    describe_frame,
    digest,
    digest_file,
    encode_ack,
    encode_chunk,
    estimate_total_time,
    hex_diff_percent,
    plan_chunks,
    simulate,
    split_to_files,
)

__all__ = [
    "RaftError",
    "algorithms",
    "bios_lookup",
    "describe_frame",
    "digest",
    "digest_file",
    "encode_ack",
    "encode_chunk",
    "estimate_total_time",
    "hex_diff_percent",
    "plan_chunks",
    "simulate",
    "split_to_files",
]
