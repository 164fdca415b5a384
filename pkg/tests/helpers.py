"""Shared test utilities: synthetic in-memory datasets and brute-force
oracles that stay independent of the library's computation paths."""

from __future__ import annotations

import math

import numpy as np

from mafrg.datapipe import SessionRecord, _synth_stream, segment_session
from mafrg.generators import make_rng
from mafrg.schema import (
    DEFAULT_SCHEMA,
    AppropriatenessMap,
    ReactionSequence,
    SpeakerListenerAssignment,
    enumerate_assignments,
)
from mafrg.seqio import quantize_f32


def build_assignments(n_pairs: int, frames: int, seed: int = 0, lag: int = 0,
                      noise: float = 0.02) -> list[SpeakerListenerAssignment]:
    """In-memory dyadic dataset: participant B trails participant A by
    ``lag`` frames plus fresh noise, both quantized to the storage grid."""
    pairs = []
    affect = DEFAULT_SCHEMA.affect_slice
    lo = np.zeros(DEFAULT_SCHEMA.n_channels)
    hi = np.ones(DEFAULT_SCHEMA.n_channels)
    lo[affect] = -1.0
    for s in range(n_pairs):
        rng = make_rng(seed, f"testds/{s}")
        ext = _synth_stream(rng, frames + lag, noise)
        facial_a = quantize_f32(ext[lag:lag + frames])
        facial_b = ext[:frames].copy()
        if noise > 0:
            facial_b = np.clip(facial_b + noise * rng.standard_normal(facial_b.shape),
                               lo, hi)
        facial_b = quantize_f32(facial_b)
        session = SessionRecord(
            session_id=f"s{s:03d}", subject_a=f"subjA{s:03d}", subject_b=f"subjB{s:03d}",
            language=("en", "fr")[s % 2], corpus="Synthetic",
            facial_a=facial_a, facial_b=facial_b)
        pairs.extend(segment_session(session, frames))
    return enumerate_assignments(pairs)


def self_map(assignments) -> AppropriatenessMap:
    return AppropriatenessMap({a.assignment_id: (a.assignment_id,) for a in assignments})


def gt_store(assignments) -> dict[str, ReactionSequence]:
    return {a.assignment_id: a.listener_gt for a in assignments}


def dtw_bruteforce(a, b) -> float:
    """Exact DTW by exhaustive path enumeration (branch-and-bound pruned;
    pruning cannot change the minimum)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = a.shape[0], b.shape[0]
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
    best = [math.inf]

    def walk(i: int, j: int, acc: float) -> None:
        acc += cost[i, j]
        if acc >= best[0]:
            return
        if i == m - 1 and j == n - 1:
            best[0] = acc
            return
        if i + 1 < m and j + 1 < n:
            walk(i + 1, j + 1, acc)
        if i + 1 < m:
            walk(i + 1, j, acc)
        if j + 1 < n:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    return float(dx @ dy) / denom if denom else 0.0


def shifted_candidate(speaker_frames: np.ndarray, k: int) -> np.ndarray:
    """Candidate that trails the speaker by k frames (leading frames held at
    the first speaker frame)."""
    out = np.empty_like(speaker_frames)
    out[:k] = speaker_frames[0]
    out[k:] = speaker_frames[: speaker_frames.shape[0] - k]
    return out
