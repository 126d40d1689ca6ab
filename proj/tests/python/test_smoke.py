import hashlib
import os
import subprocess

import pytest

import raft

FOX = b"The quick brown fox jumps over the lazy dog"


def test_algorithms():
    assert raft.algorithms() == ["md5", "sha1", "sha224", "sha256", "sha384", "sha512"]


@pytest.mark.parametrize("alg", ["md5", "sha1", "sha224", "sha256", "sha384", "sha512"])
def test_digest_matches_hashlib(alg):
    assert raft.digest(alg, FOX) == hashlib.new(alg, FOX).hexdigest()


def test_md5_fox():
    assert raft.digest("MD5", FOX) == "9e107d9d372bb6826bd81d3542a419d6"


def test_digest_file(tmp_path):
    data = os.urandom(300_000)
    path = tmp_path / "blob"
    path.write_bytes(data)
    assert raft.digest_file("sha256", path) == hashlib.sha256(data).hexdigest()


def test_unknown_algorithm():
    with pytest.raises(raft.RaftError) as info:
        raft.digest("blake2", b"")
    assert info.value.code == "UnknownAlgorithm"


def test_hex_diff_percent():
    a = "00" * 16
    assert raft.hex_diff_percent("md5", a, a) == 0.0
    assert raft.hex_diff_percent("md5", a, "ff" * 16) == 100.0


def test_plan_chunks():
    assert raft.plan_chunks(10, 4) == [(0, 0, 4), (1, 4, 4), (2, 8, 2)]
    with pytest.raises(raft.RaftError) as info:
        raft.plan_chunks(0, 4)
    assert info.value.code == "ZeroSizeSource"


def test_estimate_total_time():
    assert raft.estimate_total_time(8e9, 2e9, 4e6, 4e6) == 5.0
    with pytest.raises(raft.RaftError) as info:
        raft.estimate_total_time(0, 1, 1, 1)
    assert info.value.code == "NonPositiveInput"


def test_bios_lookup():
    passwords, advisory = raft.bios_lookup("phoenix")
    assert passwords == ["BIOS", "CMOS", "phoenix", "PHOENIX", "Phoenix"]
    assert advisory == ""
    passwords, advisory = raft.bios_lookup("Insyde")
    assert passwords == []
    assert advisory


def test_ack_golden_bytes():
    assert raft.encode_ack(3) == b"RAFT\x01\x08" + b"\x00" * 7 + b"\x08" + b"\x00" * 7 + b"\x03"


def test_describe_frame():
    frame = raft.encode_chunk(2, b"abc")
    assert raft.describe_frame(frame + raft.encode_ack(1)) == ("CHUNK_DATA seq=2 bytes=3", 25)
    with pytest.raises(raft.RaftError):
        raft.describe_frame(b"NOPE" + bytes(10))


def test_split_to_files(tmp_path):
    source = tmp_path / "src.bin"
    source.write_bytes(b"0123456789")
    files, log = raft.split_to_files(source, 4, tmp_path / "out", ["sha256"])
    assert len(files) == 3
    assert b"".join(open(f, "rb").read() for f in files) == b"0123456789"
    assert hashlib.sha256(b"89").hexdigest() in log


def test_simulate():
    r = raft.simulate(10, 0.1, 0.02)
    assert r["verified"]
    assert r["total_seconds"] == pytest.approx(1.02)
    r = raft.simulate(20, 0.1, 0.02, 0.3, 1)
    assert r["verified"]
    assert r["naks"] == r["corrupted"] > 0
    assert r["appended"] == 20
    r = raft.simulate(3, 0.1, 0.02, 1.0, 1)
    assert not r["verified"]
    assert r["appended"] == 0


@pytest.mark.skipif("RAFT_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_estimate():
    out = subprocess.run(
        [os.environ["RAFT_CLI"], "estimate", "--H", "8e9", "--B", "2e9", "--C", "4e6", "--V", "4e6"],
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "5.0"
