"""Binary artifact holding public parameters: sampling matrices and KLT bases.

Layout (all integers big-endian)::

    file     := magic "AKPA" | version u16 | n_sections u16 | section*
    section  := tag 4 ASCII bytes | body_len u32 | body
    "SMTX"   := M u16 | N u16 | seed u64 | sign bits, row-major, MSB first,
                1 = +1, 0 = -1, zero padded to a byte boundary
    "KLTB"   := L u16 | S u16 | eigenvalues f64[S] | phi f64[L*S] row-major

Unknown section tags are skipped on read so newer writers stay readable.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .amplify import KltBasis
from .reconcile import SamplingMatrix

MAGIC = b"AKPA"
VERSION = 1


class ArtifactError(ValueError):
    pass


def _matrix_body(a: SamplingMatrix) -> bytes:
    head = struct.pack(">HHQ", a.m_rows, a.n_cols, a.seed & 0xFFFFFFFFFFFFFFFF)
    return head + np.packbits((a.signs > 0).astype(np.uint8).ravel()).tobytes()


def _read_matrix(body: bytes) -> SamplingMatrix:
    m, n, seed = struct.unpack(">HHQ", body[:12])
    need = (m * n + 7) // 8
    if len(body) != 12 + need:
        raise ArtifactError("matrix section has the wrong length")
    bits = np.unpackbits(np.frombuffer(body[12:], np.uint8))[: m * n]
    return SamplingMatrix(np.where(bits.reshape(m, n) == 1, 1, -1).astype(np.int8), seed)


def _basis_body(b: KltBasis) -> bytes:
    return (struct.pack(">HH", b.block_len, b.n_eigenvectors)
            + b.eigenvalues.astype(">f8").tobytes() + b.phi.astype(">f8").tobytes())


def _read_basis(body: bytes) -> KltBasis:
    l, s = struct.unpack(">HH", body[:4])
    if len(body) != 4 + 8 * (s + l * s):
        raise ArtifactError("basis section has the wrong length")
    ev = np.frombuffer(body[4:4 + 8 * s], ">f8").astype(float)
    phi = np.frombuffer(body[4 + 8 * s:], ">f8").astype(float).reshape(l, s)
    return KltBasis(phi, ev)


def to_bytes(matrices=(), bases=()) -> bytes:
    sections = [(b"SMTX", _matrix_body(a)) for a in matrices]
    sections += [(b"KLTB", _basis_body(b)) for b in bases]
    out = MAGIC + struct.pack(">HH", VERSION, len(sections))
    for tag, body in sections:
        out += tag + struct.pack(">I", len(body)) + body
    return out


def from_bytes(data: bytes) -> dict:
    """Returns ``{"matrices": [...], "bases": [...]}`` in file order."""
    if data[:4] != MAGIC:
        raise ArtifactError("bad magic")
    version, count = struct.unpack(">HH", data[4:8])
    if version != VERSION:
        raise ArtifactError(f"unsupported version {version}")
    out = {"matrices": [], "bases": []}
    pos = 8
    for _ in range(count):
        if pos + 8 > len(data):
            raise ArtifactError("truncated section header")
        tag = data[pos:pos + 4]
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise ArtifactError("truncated section body")
        if tag == b"SMTX":
            out["matrices"].append(_read_matrix(body))
        elif tag == b"KLTB":
            out["bases"].append(_read_basis(body))
        pos += 8 + length
    if pos != len(data):
        raise ArtifactError("trailing bytes after last section")
    return out


def write(path, matrices=(), bases=()) -> None:
    Path(path).write_bytes(to_bytes(matrices, bases))


def read(path) -> dict:
    return from_bytes(Path(path).read_bytes())
