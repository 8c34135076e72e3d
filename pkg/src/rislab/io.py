"""RCH1 channel dataset files.

Layout (little-endian): ``b"RCH1"``, five uint32 header fields
``K, N_t, N_r, M, sample_count``, then for every sample the float64
``(re, im)`` pairs of ``direct[0..K)``, ``bs_ris`` and ``ris_user[0..K)``,
each matrix in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .channel import ChannelSet
from .nn_core import FormatError

MAGIC = b"RCH1"
HEADER = struct.Struct("<5I")
HEADER_END = len(MAGIC) + HEADER.size


def _sample_values(K, N_t, N_r, M) -> int:
    return K * N_r * N_t + M * N_t + K * N_r * M


def write_channels(path, channel_sets: Sequence[ChannelSet]) -> None:
    sets = list(channel_sets)
    if not sets:
        raise ValueError("nothing to write")
    first = sets[0]
    dims = (first.K, first.N_t, first.N_r, first.M)
    chunks = [MAGIC, HEADER.pack(*dims, len(sets))]
    for ch in sets:
        if (ch.K, ch.N_t, ch.N_r, ch.M) != dims:
            raise ValueError("all channel sets in a file must share dimensions")
        flat = np.concatenate([ch.direct.ravel(), ch.bs_ris.ravel(),
                               ch.ris_user.ravel()])
        chunks.append(flat.astype("<c16").tobytes())
    try:
        Path(path).write_bytes(b"".join(chunks))
    except OSError as exc:
        raise OSError(f"cannot write channel file {path}: {exc}") from exc


def read_channels(path) -> List[ChannelSet]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected RCH1", 0)
    if len(data) < HEADER_END:
        raise FormatError(f"{path}: truncated header", len(data))
    K, N_t, N_r, M, n = HEADER.unpack_from(data, len(MAGIC))
    if min(K, N_t, N_r, M) < 1:
        raise FormatError(f"{path}: header has a zero dimension", len(MAGIC))
    per = _sample_values(K, N_t, N_r, M)
    expected = HEADER_END + 16 * per * n
    if len(data) != expected:
        raise FormatError(
            f"{path}: payload is {len(data) - HEADER_END} bytes, header "
            f"(K={K}, N_t={N_t}, N_r={N_r}, M={M}, samples={n}) implies "
            f"{expected - HEADER_END}", min(len(data), expected))
    values = np.frombuffer(data, "<c16", per * n, HEADER_END).astype(
        np.complex128).reshape(n, per)
    a, b = K * N_r * N_t, K * N_r * N_t + M * N_t
    return [ChannelSet(v[:a].reshape(K, N_r, N_t), v[a:b].reshape(M, N_t),
                       v[b:].reshape(K, N_r, M)) for v in values]
