"""Challenge metrics over generation sets and the appropriateness map, with
a deterministic parallel batch engine.

Metric semantics:

* fr_dist: mean over candidates of the minimum DTW cost against the
  appropriate real reactions.
* fr_corr: mean over candidates of the maximum channel-summed CCC against
  the appropriate real reactions.
* fr_div / fr_var / fr_dvs: mean-squared-difference diversity within a
  generation set, temporal variance within candidates, and diversity across
  speaker inputs (paired by candidate index by default).
* fr_syn: mean time-lagged cross-correlation offset between speaker facial
  channels and candidate channels (per-channel, capped at max_lag).
* fr_rea: Gaussian-Fréchet distance between generated and real frame pools.

Aggregation uses exactly rounded compensated summation (math.fsum) in a
fixed assignment order, so leaderboard rows are bit-identical for any
worker count.
"""

from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DataError, SubmissionError
from .schema import (
    DEFAULT_SCHEMA,
    AppropriatenessMap,
    DatasetManifest,
    GenerationSet,
    ReactionSequence,
    SpeakerBehaviour,
    SpeakerListenerAssignment,
    enumerate_assignments,
)
from .seqio import load_clip_pair, read_matrix_binary
from .seqmetrics import (
    DtwConfig,
    GaussianSummary,
    ccc_channels,
    dtw,
    fit_gaussian,
    frechet_distance,
    tlcc_offset,
    warm_up_kernels,
)

FRECHET_FEATURES = ("attribute_frames", "external")
DVS_PAIRINGS = ("by_index", "all_pairs")

EXTERNAL_GEN_FEATURES = "gen_features.bin"
EXTERNAL_REF_FEATURES = "ref_features.bin"


@dataclass(frozen=True)
class MetricConfig:
    """Knobs shared by the metric functions and the batch engine.

    au_binarize_threshold, when set, is applied once to every candidate
    sequence before any metric runs (ground truth and speaker channels are
    never binarized). gt_excludes_self_for_corr drops an assignment's own
    reaction from the fr_corr neighbor pool when alternatives exist; it is
    experimental and off by default.
    """

    max_lag: int = 49
    dtw: DtwConfig = field(default_factory=lambda: DtwConfig(band_radius=75))
    frechet_features: str = "attribute_frames"
    external_features_dir: str | None = None
    au_binarize_threshold: float | None = None
    gt_excludes_self_for_corr: bool = False
    dvs_pairing: str = "by_index"

    def __post_init__(self):
        if self.max_lag < 0:
            raise DataError(f"max_lag must be >= 0, got {self.max_lag}")
        if self.frechet_features not in FRECHET_FEATURES:
            raise DataError(f"frechet_features must be one of {FRECHET_FEATURES}")
        if self.frechet_features == "external" and not self.external_features_dir:
            raise DataError("external frechet features need external_features_dir")
        if self.au_binarize_threshold is not None and not (0.0 < self.au_binarize_threshold < 1.0):
            raise DataError(f"au_binarize_threshold must lie in (0, 1), got "
                            f"{self.au_binarize_threshold}")
        if self.dvs_pairing not in DVS_PAIRINGS:
            raise DataError(f"dvs_pairing must be one of {DVS_PAIRINGS}")


@dataclass(frozen=True)
class ClipScores:
    """Per-assignment metric values; best_neighbor_id is the appropriate
    reaction attaining the smallest DTW cost (ties -> smallest id)."""

    assignment_id: str
    fr_dist: float
    fr_corr: float
    fr_div: float
    fr_var: float
    fr_syn: float
    best_neighbor_id: str


@dataclass(frozen=True)
class LeaderboardRow:
    """One method's aggregate scores, in challenge column order."""

    method: str
    fr_corr: float
    fr_dist: float
    fr_div: float
    fr_var: float
    fr_dvs: float
    fr_rea: float | None
    fr_syn: float


def binarize_aus(seq: ReactionSequence, threshold: float) -> ReactionSequence:
    """Map AU channels to {0,1} by value >= threshold; other channels pass
    through unchanged."""
    if not (0.0 < threshold < 1.0):
        raise DataError(f"threshold must lie in (0, 1), got {threshold}")
    frames = np.array(seq.frames)
    sl = DEFAULT_SCHEMA.au_slice
    frames[:, sl] = (frames[:, sl] >= threshold).astype(np.float64)
    return ReactionSequence(clip_id=seq.clip_id, frames=frames, fps=seq.fps)


def _binarized_set(gen: GenerationSet, threshold: float) -> GenerationSet:
    return GenerationSet(
        assignment_id=gen.assignment_id,
        candidates=tuple(binarize_aus(c, threshold) for c in gen.candidates),
        mode=gen.mode, generator_name=gen.generator_name, seed=gen.seed)


def _neighbor_frames(gen: GenerationSet, amap: AppropriatenessMap,
                     gt_store: Mapping[str, ReactionSequence]) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    t, c = gen.n_frames, gen.candidates[0].n_channels
    for nid in amap.neighbors(gen.assignment_id):
        try:
            ref = gt_store[nid]
        except KeyError:
            raise DataError(f"appropriate neighbor {nid!r} has no ground-truth "
                            f"reaction in the store") from None
        if ref.frames.shape != (t, c):
            raise DataError(
                f"assignment {gen.assignment_id!r}: neighbor {nid!r} reaction shape "
                f"{ref.frames.shape} does not match candidate shape {(t, c)}")
        out[nid] = ref.frames
    return out


def _dist_corr_scores(stack: np.ndarray, neighbors: dict[str, np.ndarray],
                      corr_ids: Sequence[str], cfg: MetricConfig
                      ) -> tuple[float, float, str]:
    """(fr_dist, fr_corr, best neighbor id) for one stacked candidate set."""
    m = stack.shape[0]
    nids = sorted(neighbors)
    min_dists = []
    max_corrs = []
    best = (math.inf, "")
    for i in range(m):
        cand = stack[i]
        d_best = math.inf
        d_best_id = ""
        for nid in nids:
            d = dtw(cand, neighbors[nid], cfg.dtw)
            if d < d_best:
                d_best, d_best_id = d, nid
        min_dists.append(d_best)
        if (d_best, d_best_id) < best:
            best = (d_best, d_best_id)
        c_best = -math.inf
        for nid in corr_ids:
            c = float(ccc_channels(cand, neighbors[nid]).sum())
            if c > c_best:
                c_best = c
        max_corrs.append(c_best)
    return (math.fsum(min_dists) / m, math.fsum(max_corrs) / m, best[1])


def fr_dist(gen: GenerationSet, amap: AppropriatenessMap,
            gt_store: Mapping[str, ReactionSequence],
            cfg: MetricConfig = MetricConfig()) -> float:
    """Mean over candidates of min-over-appropriate-set DTW cost."""
    neighbors = _neighbor_frames(gen, amap, gt_store)
    d, _, _ = _dist_corr_scores(gen.stacked(), neighbors, sorted(neighbors), cfg)
    return d


def fr_corr(gen: GenerationSet, amap: AppropriatenessMap,
            gt_store: Mapping[str, ReactionSequence],
            cfg: MetricConfig = MetricConfig()) -> float:
    """Mean over candidates of max-over-appropriate-set channel-summed CCC."""
    neighbors = _neighbor_frames(gen, amap, gt_store)
    corr_ids = _corr_neighbor_ids(gen.assignment_id, sorted(neighbors), cfg)
    _, c, _ = _dist_corr_scores(gen.stacked(), neighbors, corr_ids, cfg)
    return c


def _corr_neighbor_ids(aid: str, nids: Sequence[str], cfg: MetricConfig) -> tuple[str, ...]:
    if cfg.gt_excludes_self_for_corr and len(nids) > 1:
        return tuple(n for n in nids if n != aid)
    return tuple(nids)


def fr_div(gen: GenerationSet) -> float:
    """Mean over unordered candidate pairs of the mean-squared difference
    between the two frame matrices; 0 for a single candidate."""
    m = gen.m
    if m == 1:
        return 0.0
    stack = gen.stacked()
    vals = []
    for i in range(m):
        for j in range(i + 1, m):
            diff = stack[i] - stack[j]
            vals.append(float(np.mean(diff * diff)))
    return math.fsum(vals) / len(vals)


def _temporal_variance(stack: np.ndarray) -> np.ndarray:
    """Population per-channel temporal variance, exactly 0 for channels that
    are constant over time."""
    v = stack.var(axis=-2)
    const = stack.max(axis=-2) == stack.min(axis=-2)
    return np.where(const, 0.0, v)


def fr_var(gens: Sequence[GenerationSet]) -> float:
    """Mean over generation sets, candidates and channels of each channel's
    population temporal variance."""
    if not gens:
        raise DataError("fr_var needs at least one generation set")
    vals: list[float] = []
    for gen in gens:
        vals.extend(_temporal_variance(gen.stacked()).ravel().tolist())
    return math.fsum(vals) / len(vals)


def _check_aligned_sets(gens: Sequence[GenerationSet]) -> tuple[int, int]:
    m, t = gens[0].m, gens[0].n_frames
    for gen in gens[1:]:
        if gen.m != m:
            raise DataError(f"generation sets disagree on M: {gen.m} vs {m} "
                            f"({gen.assignment_id!r})")
        if gen.n_frames != t:
            raise DataError(f"generation sets disagree on T: {gen.n_frames} vs {t} "
                            f"({gen.assignment_id!r})")
    return m, t


def fr_dvs(gens: Sequence[GenerationSet], pairing: str = "by_index") -> float:
    """Diversity across speaker inputs: mean over candidate index and over
    unordered pairs of generation sets of the mean-squared difference.

    pairing="all_pairs" compares every cross-speaker candidate pair instead
    of matching by index.
    """
    if len(gens) < 2:
        raise DataError("fr_dvs needs at least 2 generation sets")
    if pairing not in DVS_PAIRINGS:
        raise DataError(f"pairing must be one of {DVS_PAIRINGS}")
    m, _ = _check_aligned_sets(gens)
    stacks = [g.stacked() for g in gens]
    vals = []
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            if pairing == "by_index":
                for k in range(m):
                    diff = stacks[i][k] - stacks[j][k]
                    vals.append(float(np.mean(diff * diff)))
            else:
                for k in range(m):
                    for k2 in range(m):
                        diff = stacks[i][k] - stacks[j][k2]
                        vals.append(float(np.mean(diff * diff)))
    return math.fsum(vals) / len(vals)


def fr_syn(gen: GenerationSet, speaker: SpeakerBehaviour,
           cfg: MetricConfig = MetricConfig()) -> float:
    """Mean over candidates and channels of the TLCC offset between each
    speaker facial channel and the matching candidate channel."""
    sf = speaker.facial.frames
    if sf.shape[0] != gen.n_frames:
        raise DataError(f"assignment {gen.assignment_id!r}: speaker has {sf.shape[0]} "
                        f"frames, candidates have {gen.n_frames}")
    if cfg.max_lag >= gen.n_frames:
        raise DataError(f"max_lag {cfg.max_lag} must be < clip length {gen.n_frames}")
    stack = gen.stacked()
    offsets = []
    for i in range(stack.shape[0]):
        for c in range(sf.shape[1]):
            offsets.append(tlcc_offset(sf[:, c], stack[i][:, c], cfg.max_lag))
    return math.fsum(float(o) for o in offsets) / len(offsets)


def _pooled_frames(gens: Sequence[GenerationSet]) -> np.ndarray:
    mats = [g.stacked().reshape(-1, g.candidates[0].n_channels) for g in gens]
    return np.concatenate(mats, axis=0)


def fr_rea(gens: Sequence[GenerationSet], reference: Sequence[ReactionSequence],
           cfg: MetricConfig = MetricConfig()) -> float:
    """Gaussian-Fréchet distance between the generated and real frame pools.

    With the default attribute-frame features the samples are the 25-dim
    frames pooled across sequences; in external mode the pools are read from
    cfg.external_features_dir (gen_features.bin / ref_features.bin).
    """
    if cfg.frechet_features == "external":
        g_feat, r_feat = _load_external_features(cfg)
        return frechet_distance(fit_gaussian(g_feat), fit_gaussian(r_feat))
    if not gens or not reference:
        raise DataError("fr_rea needs non-empty generated and reference pools")
    gen_pool = _pooled_frames(gens)
    ref_pool = np.concatenate([r.frames for r in reference], axis=0)
    if gen_pool.shape[0] < 2 or ref_pool.shape[0] < 2:
        raise DataError("fr_rea needs at least 2 samples in each pool")
    return frechet_distance(fit_gaussian(gen_pool), fit_gaussian(ref_pool))


def _load_external_features(cfg: MetricConfig) -> tuple[np.ndarray, np.ndarray]:
    root = Path(cfg.external_features_dir)
    gen_path = root / EXTERNAL_GEN_FEATURES
    ref_path = root / EXTERNAL_REF_FEATURES
    for p in (gen_path, ref_path):
        if not p.exists():
            raise DataError(f"external feature file missing: {p}")
    g, r = read_matrix_binary(gen_path), read_matrix_binary(ref_path)
    if g.shape[0] < 2 or r.shape[0] < 2:
        raise DataError("external feature pools need at least 2 samples each")
    if g.shape[1] != r.shape[1]:
        raise DataError(f"external feature dims differ: {g.shape[1]} vs {r.shape[1]}")
    return g, r


# -- batch engine --------------------------------------------------------------

@dataclass
class _EvalContext:
    aids: list[str]
    gens: dict[str, GenerationSet]
    speakers: dict[str, np.ndarray]
    gts: dict[str, np.ndarray]
    neighbor_ids: dict[str, tuple[str, ...]]
    corr_ids: dict[str, tuple[str, ...]]
    cfg: MetricConfig


_WORKER_CTX: _EvalContext | None = None


def _clip_task(aid: str):
    ctx = _WORKER_CTX
    stack = ctx.gens[aid].stacked()
    neighbors = {nid: ctx.gts[nid] for nid in ctx.neighbor_ids[aid]}
    d, c, best = _dist_corr_scores(stack, neighbors, ctx.corr_ids[aid], ctx.cfg)

    m = stack.shape[0]
    div_vals = []
    for i in range(m):
        for j in range(i + 1, m):
            diff = stack[i] - stack[j]
            div_vals.append(float(np.mean(diff * diff)))
    div = math.fsum(div_vals) / len(div_vals) if div_vals else 0.0

    var = float(np.mean(_temporal_variance(stack)))

    sf = ctx.speakers[aid]
    offsets = []
    for i in range(m):
        for ch in range(sf.shape[1]):
            offsets.append(float(tlcc_offset(sf[:, ch], stack[i][:, ch], ctx.cfg.max_lag)))
    syn = math.fsum(offsets) / len(offsets)

    frames2d = stack.reshape(-1, stack.shape[2])
    s1 = frames2d.sum(axis=0)
    s2 = frames2d.T @ frames2d
    return (ClipScores(assignment_id=aid, fr_dist=d, fr_corr=c, fr_div=div,
                       fr_var=var, fr_syn=syn, best_neighbor_id=best),
            s1, s2, frames2d.shape[0])


def _gaussian_from_moments(s1: np.ndarray, s2: np.ndarray, n: int) -> GaussianSummary:
    mean = s1 / n
    cov = s2 / n - np.outer(mean, mean)
    cov = (cov + cov.T) / 2.0
    return GaussianSummary(mean=mean, covariance=cov, count=n)


def _dvs_task(k: int) -> float:
    """Sum of squared-Euclidean distances between the k-th candidates of
    every unordered assignment pair (differences are formed before any
    reduction, so identical inputs give exact 0)."""
    ctx = _WORKER_CTX
    rows = np.stack([np.asarray(ctx.gens[aid].candidates[k].frames).ravel()
                     for aid in ctx.aids])
    return math.fsum(pdist(rows, "sqeuclidean").tolist())


def _dvs_all_pairs(ctx: _EvalContext) -> float:
    aids = ctx.aids
    m = ctx.gens[aids[0]].m
    t, c = ctx.gens[aids[0]].n_frames, ctx.gens[aids[0]].candidates[0].n_channels
    n_pairs = len(aids) * (len(aids) - 1) // 2
    mats = [np.ascontiguousarray(ctx.gens[aid].stacked().reshape(m, -1))
            for aid in aids]
    sums = []
    for i in range(len(aids)):
        for j in range(i + 1, len(aids)):
            sums.append(float(cdist(mats[i], mats[j], "sqeuclidean").sum()))
    return math.fsum(sums) / (m * m * n_pairs * t * c)


def evaluate_assignments(
    assignments: Sequence[SpeakerListenerAssignment],
    amap: AppropriatenessMap,
    gens: Mapping[str, GenerationSet],
    cfg: MetricConfig = MetricConfig(),
    *,
    workers: int = 1,
    method_name: str = "submission",
) -> tuple[LeaderboardRow, list[ClipScores]]:
    """Score a submission over in-memory assignments.

    Clip-level work runs on a worker pool; aggregation happens in a fixed
    assignment order with exactly rounded summation, so the result is
    independent of the worker count. The FRRea reference pool is every
    evaluated assignment's ground-truth reaction (frames pooled).
    """
    if workers < 1:
        raise DataError(f"workers must be >= 1, got {workers}")
    if not assignments:
        raise DataError("no assignments to evaluate")

    by_id = {a.assignment_id: a for a in assignments}
    aids = sorted(by_id)
    missing = [aid for aid in aids if aid not in gens]
    if missing:
        raise SubmissionError(
            f"submission is missing generation sets for {len(missing)} assignment(s): "
            f"{missing[:10]}{'...' if len(missing) > 10 else ''}",
            missing_ids=missing)

    mislabeled = [aid for aid in aids if gens[aid].assignment_id != aid]
    if mislabeled:
        raise DataError(f"generation sets are labeled with the wrong assignment id: "
                        f"{mislabeled[:10]}")

    use = {aid: gens[aid] for aid in aids}
    if cfg.au_binarize_threshold is not None:
        use = {aid: _binarized_set(g, cfg.au_binarize_threshold) for aid, g in use.items()}

    gts = {aid: by_id[aid].listener_gt.frames for aid in aids}
    speakers = {aid: by_id[aid].speaker.facial.frames for aid in aids}

    neighbor_ids = {}
    corr_ids = {}
    for aid in aids:
        gen = use[aid]
        t = speakers[aid].shape[0]
        shape = (gen.n_frames, gen.candidates[0].n_channels)
        if gen.n_frames != t:
            raise DataError(f"assignment {aid!r}: candidates have {gen.n_frames} "
                            f"frames, speaker clip has {t}")
        if cfg.max_lag >= t:
            raise DataError(f"max_lag {cfg.max_lag} must be < clip length {t}")
        nids = tuple(sorted(amap.neighbors(aid)))
        for nid in nids:
            if nid not in gts:
                raise DataError(f"assignment {aid!r}: appropriate neighbor {nid!r} "
                                f"is not part of the evaluated pool")
            if gts[nid].shape != shape:
                raise DataError(f"assignment {aid!r}: neighbor {nid!r} reaction shape "
                                f"{gts[nid].shape} does not match candidates {shape}")
        neighbor_ids[aid] = nids
        corr_ids[aid] = _corr_neighbor_ids(aid, nids, cfg)
    m_shared, _ = _check_aligned_sets([use[aid] for aid in aids])

    ctx = _EvalContext(aids=aids, gens=use, speakers=speakers, gts=gts,
                       neighbor_ids=neighbor_ids, corr_ids=corr_ids, cfg=cfg)

    warm_up_kernels()
    global _WORKER_CTX
    _WORKER_CTX = ctx
    try:
        by_index = cfg.dvs_pairing == "by_index" and len(aids) >= 2
        dvs_ks = range(m_shared) if by_index else range(0)
        if workers == 1:
            results = [_clip_task(aid) for aid in aids]
            dvs_sums = [_dvs_task(k) for k in dvs_ks]
        else:
            mp_ctx = multiprocessing.get_context("fork")
            chunk = max(1, len(aids) // (workers * 4))
            with ProcessPoolExecutor(max_workers=workers, mp_context=mp_ctx) as pool:
                results = list(pool.map(_clip_task, aids, chunksize=chunk))
                dvs_sums = list(pool.map(_dvs_task, dvs_ks))
        if len(aids) < 2:
            dvs = 0.0
        elif by_index:
            n_pairs = len(aids) * (len(aids) - 1) // 2
            t, c = use[aids[0]].n_frames, use[aids[0]].candidates[0].n_channels
            dvs = math.fsum(dvs_sums) / (m_shared * n_pairs * t * c)
        else:
            dvs = _dvs_all_pairs(ctx)
    finally:
        _WORKER_CTX = None

    scores = [r[0] for r in results]
    n = len(scores)
    mean = lambda key: math.fsum(getattr(s, key) for s in scores) / n

    if cfg.frechet_features == "external":
        g_feat, r_feat = _load_external_features(cfg)
        rea = frechet_distance(fit_gaussian(g_feat), fit_gaussian(r_feat))
    else:
        s1 = np.stack([r[1] for r in results]).sum(axis=0)
        s2 = np.stack([r[2] for r in results]).sum(axis=0)
        count = sum(r[3] for r in results)
        ref_pool = np.concatenate([gts[aid] for aid in aids], axis=0)
        rea = frechet_distance(_gaussian_from_moments(s1, s2, count),
                               fit_gaussian(ref_pool))

    row = LeaderboardRow(
        method=method_name,
        fr_corr=mean("fr_corr"), fr_dist=mean("fr_dist"), fr_div=mean("fr_div"),
        fr_var=mean("fr_var"), fr_dvs=dvs, fr_rea=rea, fr_syn=mean("fr_syn"))
    return row, scores


def evaluate_submission(
    manifest: DatasetManifest,
    amap: AppropriatenessMap,
    gens: Mapping[str, GenerationSet],
    cfg: MetricConfig = MetricConfig(),
    *,
    split: str = "val",
    workers: int = 1,
    method_name: str = "submission",
) -> tuple[LeaderboardRow, list[ClipScores]]:
    """Load the split's clips from disk and score the submission against
    them. See evaluate_assignments for the engine contract."""
    clips = manifest.clips_for_split(split)
    if not clips:
        raise DataError(f"manifest has no clips in split {split!r}")
    pairs = [load_clip_pair(manifest, c) for c in clips]
    assignments = enumerate_assignments(pairs)
    return evaluate_assignments(assignments, amap, gens, cfg,
                                workers=workers, method_name=method_name)
