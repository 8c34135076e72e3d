"""Comparison systems: exhaustive DFT codebook sweep and raw-CSI states."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List

import numpy as np

from .channel import TWO_PI, ChannelSet, effective_channels, sum_se
from .env import normalize_state


@dataclass
class Codebook:
    """``kind`` is ``"bs_beam"`` (rows are unit-norm complex beams) or
    ``"ris_phase"`` (rows are M phase angles)."""

    kind: str
    entries: np.ndarray

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def dft_codebook(n: int, size: int, kind: str = "bs_beam") -> Codebook:
    """DFT codebook with ``size`` codewords of dimension ``n``."""
    if size < 1:
        raise ValueError("codebook size must be >= 1")
    ramp = np.outer(np.arange(size), np.arange(n)) / size
    if kind == "bs_beam":
        return Codebook(kind, np.exp(-2j * np.pi * ramp) / np.sqrt(n))
    if kind == "ris_phase":
        return Codebook(kind, np.mod(TWO_PI * ramp, TWO_PI))
    raise ValueError(f"unknown codebook kind {kind!r}")


@dataclass
class SweepResult:
    F: np.ndarray
    phases: np.ndarray
    sum_se: float
    evaluations: int
    ris_index: int
    bs_indices: List[int]
    table: list


def beam_sweep(ch: ChannelSet, bs_book: Codebook, ris_book: Codebook,
               p_max: float, noise_power: float) -> SweepResult:
    """Exhaustive sweep over RIS codewords with greedy per-user beams.

    For every RIS codeword each user takes the BS codeword with the largest
    effective-channel gain, users share the power equally, and the sum SE
    is recorded. The best RIS codeword wins; ties go to the lowest index,
    both for RIS codewords and for per-user beam choices.
    """
    if bs_book.size == 0 or ris_book.size == 0:
        raise ValueError("codebooks must be nonempty")
    K = ch.K
    beams = bs_book.entries.T  # (N_t, n_bs)
    scale = np.sqrt(p_max / K)
    best = None
    table = []
    for r, phases in enumerate(ris_book.entries):
        H = effective_channels(ch, phases)             # (K, N_r, N_t)
        gains = np.sum(np.abs(H @ beams) ** 2, axis=1)  # (K, n_bs)
        choice = [int(np.argmax(g)) for g in gains]
        F = beams[:, choice] * scale
        se = sum_se(ch, phases, F, noise_power)
        table.append((r, choice, se))
        if best is None or se > best[2]:
            best = (r, choice, se, F)
    r, choice, se, F = best
    return SweepResult(F=F, phases=ris_book.entries[r].copy(), sum_se=se,
                       evaluations=K * bs_book.size * ris_book.size,
                       ris_index=r, bs_indices=choice, table=table)


def write_sweep_report(path, result: SweepResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ris_index", "bs_indices", "sum_se"])
        for r, choice, se in result.table:
            w.writerow([r, ";".join(map(str, choice)), repr(float(se))])


def raw_state(ch: ChannelSet) -> np.ndarray:
    """Normalized real vector of all raw channel coefficients."""
    return normalize_state(ch.flatten())
