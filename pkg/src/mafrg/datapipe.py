"""Dataset construction: session segmentation, subject-independent split
planning with language balancing, appropriateness-map building, synthetic
data generation, and manifest statistics."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .generators import make_rng
from .schema import (
    DEFAULT_SCHEMA,
    SPLITS,
    STANDARD_FRAME_COUNT,
    STANDARD_FPS,
    AppropriatenessMap,
    ClipPair,
    DatasetManifest,
    ManifestClip,
    Participant,
    ReactionSequence,
    SpeakerBehaviour,
    SpeakerListenerAssignment,
)
from .seqio import (
    load_sequence,
    quantize_f32,
    read_matrix_binary,
    read_sessions_file,
    write_manifest,
    write_matrix_binary,
    write_sequence_csv,
    write_sessions_file,
)
from .seqmetrics import DtwConfig, ccc_channels, dtw


@dataclass(frozen=True, eq=False)
class SessionRecord:
    """One full dyadic recording before segmentation."""

    session_id: str
    subject_a: str
    subject_b: str
    language: str
    corpus: str
    facial_a: np.ndarray
    facial_b: np.ndarray
    audio_a: np.ndarray | None = None
    audio_b: np.ndarray | None = None
    fps: int = STANDARD_FPS

    def __post_init__(self):
        if self.facial_a.shape != self.facial_b.shape:
            raise DataError(f"session {self.session_id!r}: stream shapes differ")
        for name, audio in (("a", self.audio_a), ("b", self.audio_b)):
            if audio is not None and audio.shape[0] != self.facial_a.shape[0]:
                raise DataError(f"session {self.session_id!r}: audio_{name} frame "
                                f"count differs from facial streams")

    @property
    def frames(self) -> int:
        return self.facial_a.shape[0]


def segment_session(session: SessionRecord,
                    frames_per_clip: int = STANDARD_FRAME_COUNT) -> list[ClipPair]:
    """Cut a session into consecutive non-overlapping windows.

    The trailing remainder shorter than one window is dropped; a session
    shorter than one window yields an empty list. Clip ids are deterministic
    (session id + window index), and window frame data is a bit-exact copy of
    the source.
    """
    if frames_per_clip < 1:
        raise DataError(f"frames_per_clip must be >= 1, got {frames_per_clip}")
    n_windows = session.frames // frames_per_clip
    pairs = []
    for k in range(n_windows):
        sl = slice(k * frames_per_clip, (k + 1) * frames_per_clip)
        pair_id = f"{session.session_id}_w{k:03d}"

        def behaviour(suffix: str, facial: np.ndarray, audio) -> SpeakerBehaviour:
            clip_id = f"{pair_id}_{suffix}"
            return SpeakerBehaviour(
                clip_id=clip_id,
                facial=ReactionSequence(clip_id=clip_id, frames=facial[sl].copy(),
                                        fps=session.fps),
                audio=audio[sl].copy() if audio is not None else None)

        pairs.append(ClipPair(
            pair_id=pair_id,
            participant_a=Participant(session.subject_a,
                                      behaviour("a", session.facial_a, session.audio_a)),
            participant_b=Participant(session.subject_b,
                                      behaviour("b", session.facial_b, session.audio_b)),
            source_corpus=session.corpus,
            language=session.language,
            session_id=session.session_id))
    return pairs


# -- split planning ---------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """Subject -> split mapping plus the per-split language histograms the
    planner achieved."""

    subject_to_split: Mapping[str, str]
    language_histograms: Mapping[str, Mapping[str, int]]
    clip_counts: Mapping[str, int]
    warnings: tuple[str, ...] = ()

    def split_of(self, subject: str) -> str:
        try:
            return self.subject_to_split[subject]
        except KeyError:
            raise DataError(f"subject {subject!r} not covered by the split plan") from None


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def plan_split(clips: Sequence[ManifestClip], ratios: Mapping[str, float],
               seed: int = 0) -> SplitPlan:
    """Assign connected subject groups to splits.

    Subjects linked by shared sessions move as one unit. Greedy placement
    minimizes squared deviation from the target clip-count ratios, with
    language-histogram deviation as a secondary objective; a group too large
    for the largest split goes to train with a warning. Deterministic per
    seed.
    """
    if not clips:
        raise DataError("no clips to split")
    total_ratio = math.fsum(ratios.get(s, 0.0) for s in SPLITS)
    if abs(total_ratio - 1.0) > 1e-6:
        raise DataError(f"split ratios must sum to 1, got {total_ratio:g}")
    targets = {s: ratios.get(s, 0.0) for s in SPLITS}

    uf = _UnionFind()
    for clip in clips:
        uf.union(clip.subject_a, clip.subject_b)

    groups: dict[str, dict] = {}
    for clip in clips:
        root = uf.find(clip.subject_a)
        g = groups.setdefault(root, {"subjects": set(), "clips": 0, "langs": Counter()})
        g["subjects"].update((clip.subject_a, clip.subject_b))
        g["clips"] += 1
        g["langs"][clip.language] += 1

    total = len(clips)
    lang_totals = Counter(c.language for c in clips)
    rng = make_rng(seed, "split-plan")
    keys = sorted(groups)
    order = [keys[i] for i in rng.permutation(len(keys))]
    order.sort(key=lambda k: -groups[k]["clips"])  # stable: seeded order breaks ties

    assigned = {s: 0 for s in SPLITS}
    lang_assigned = {s: Counter() for s in SPLITS}
    subject_to_split: dict[str, str] = {}
    warnings: list[str] = []
    max_target = max(targets.values())

    for key in order:
        g = groups[key]
        if g["clips"] > max_target * total and max_target < 1.0:
            choice = "train"
            warnings.append(
                f"subject group {sorted(g['subjects'])[0]!r}+{len(g['subjects']) - 1} "
                f"({g['clips']} clips) exceeds the largest split target; assigned to train")
        else:
            best = None
            for s in SPLITS:
                primary = 0.0
                for s2 in SPLITS:
                    n = assigned[s2] + (g["clips"] if s2 == s else 0)
                    primary += (n / total - targets[s2]) ** 2
                secondary = 0.0
                for lang, lang_total in lang_totals.items():
                    for s2 in SPLITS:
                        n = lang_assigned[s2][lang] + (g["langs"][lang] if s2 == s else 0)
                        secondary += (n / total - targets[s2] * lang_total / total) ** 2
                cand = (primary, secondary, SPLITS.index(s))
                if best is None or cand < best[0]:
                    best = (cand, s)
            choice = best[1]
        assigned[choice] += g["clips"]
        lang_assigned[choice].update(g["langs"])
        for subject in g["subjects"]:
            subject_to_split[subject] = choice

    return SplitPlan(
        subject_to_split=dict(sorted(subject_to_split.items())),
        language_histograms={s: dict(lang_assigned[s]) for s in SPLITS},
        clip_counts=dict(assigned),
        warnings=tuple(warnings))


def apply_split(manifest: DatasetManifest, plan: SplitPlan) -> DatasetManifest:
    """Rewrite the manifest's split column from a plan."""
    clips = []
    for clip in manifest.clips:
        split_a = plan.split_of(clip.subject_a)
        split_b = plan.split_of(clip.subject_b)
        if split_a != split_b:
            raise DataError(f"plan places subjects of clip {clip.pair_id!r} in "
                            f"different splits ({split_a!r} vs {split_b!r})")
        clips.append(ManifestClip(
            pair_id=clip.pair_id, session_id=clip.session_id,
            subject_a=clip.subject_a, subject_b=clip.subject_b,
            corpus=clip.corpus, language=clip.language, split=split_a,
            facial_a=clip.facial_a, facial_b=clip.facial_b,
            audio_a=clip.audio_a, audio_b=clip.audio_b))
    return DatasetManifest(clips=tuple(clips), fps=manifest.fps, frames=manifest.frames,
                           audio_dim=manifest.audio_dim, root=manifest.root)


# -- appropriateness map ------------------------------------------------------------

MAP_METRICS = ("ccc_sum", "dtw")


def build_appropriateness_map(assignments: Sequence[SpeakerListenerAssignment],
                              similarity_threshold: float,
                              metric: str = "ccc_sum",
                              dtw_cfg: DtwConfig | None = None) -> AppropriatenessMap:
    """Link assignments whose speaker behaviours are mutually similar.

    ccc_sum: channel-summed CCC >= threshold links a pair; dtw: alignment
    cost <= threshold links a pair. Every assignment always includes itself.
    The defaults are placeholders for externally supplied maps; the map file
    format accepts official annotations verbatim.
    """
    if metric not in MAP_METRICS:
        raise DataError(f"metric must be one of {MAP_METRICS}, got {metric!r}")
    aids = [a.assignment_id for a in assignments]
    if len(set(aids)) != len(aids):
        raise DataError("duplicate assignment ids")
    speakers = {a.assignment_id: a.speaker.facial.frames for a in assignments}
    entries: dict[str, set[str]] = {aid: {aid} for aid in aids}
    order = sorted(aids)
    cfg = dtw_cfg or DtwConfig()
    for i, aid_i in enumerate(order):
        for aid_j in order[i + 1:]:
            fi, fj = speakers[aid_i], speakers[aid_j]
            if metric == "ccc_sum":
                if fi.shape != fj.shape:
                    raise DataError("ccc_sum map metric needs equal-shape speaker clips")
                linked = float(ccc_channels(fi, fj).sum()) >= similarity_threshold
            else:
                linked = dtw(fi, fj, cfg) <= similarity_threshold
            if linked:
                entries[aid_i].add(aid_j)
                entries[aid_j].add(aid_i)
    return AppropriatenessMap({aid: tuple(sorted(entries[aid])) for aid in order})


# -- synthetic datasets ---------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Desk-scale synthetic dataset description.

    n_sessions dyadic sessions of `frames` frames; participant B's facial
    stream trails participant A's by `lag` frames (plus fresh noise), and the
    last `duplicate_sessions` sessions reuse earlier sessions' speaker-A
    streams byte-for-byte so map building has planted recoveries.
    """

    n_sessions: int = 10
    frames: int = STANDARD_FRAME_COUNT
    seed: int = 0
    lag: int = 0
    duplicate_sessions: int = 0
    noise: float = 0.02
    audio_dim: int = 0
    languages: tuple[str, ...] = ("en", "fr", "de")
    corpus: str = "Synthetic"
    fps: int = STANDARD_FPS
    write_csv: bool = False

    def __post_init__(self):
        if self.n_sessions < 1:
            raise DataError("n_sessions must be >= 1")
        if self.frames < 1:
            raise DataError("frames must be >= 1")
        if self.lag < 0 or self.lag >= self.frames:
            raise DataError("lag must lie in [0, frames)")
        if self.duplicate_sessions < 0 or self.duplicate_sessions > self.n_sessions // 2:
            raise DataError("duplicate_sessions must be <= n_sessions // 2")
        if self.noise < 0:
            raise DataError("noise must be >= 0")


def _synth_stream(rng: np.random.Generator, frames: int, noise: float) -> np.ndarray:
    """Sinusoid-mix attribute stream with per-channel random long periods
    (no aliasing inside the +-49-frame synchrony scan)."""
    c = DEFAULT_SCHEMA.n_channels
    t = np.arange(frames)[:, None]
    periods1 = rng.uniform(100.0, 375.0, size=c)
    periods2 = rng.uniform(100.0, 375.0, size=c)
    phases1 = rng.uniform(0.0, 2 * np.pi, size=c)
    phases2 = rng.uniform(0.0, 2 * np.pi, size=c)
    wave = 0.6 * np.sin(2 * np.pi * t / periods1 + phases1) \
        + 0.4 * np.sin(2 * np.pi * t / periods2 + phases2)
    out = 0.5 + 0.3 * wave
    if noise > 0:
        out = out + noise * rng.standard_normal((frames, c))
    affect = DEFAULT_SCHEMA.affect_slice
    out[:, affect] = out[:, affect] * 2.0 - 1.0
    lo = np.zeros(c)
    hi = np.ones(c)
    lo[affect] = -1.0
    return np.clip(out, lo, hi)


def synth_dataset(out_dir: str | Path, spec: SynthSpec) -> Path:
    """Write a synthetic sessions dataset (sequence files + sessions file).

    Deterministic per spec.seed. Returns the sessions file path.
    """
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)

    extended: list[np.ndarray] = []
    for s in range(spec.n_sessions):
        rng = make_rng(spec.seed, f"synth/{s}")
        extended.append(_synth_stream(rng, spec.frames + spec.lag, spec.noise))
    for k in range(spec.duplicate_sessions):
        extended[spec.n_sessions - 1 - k] = extended[k]

    rows = []
    for s in range(spec.n_sessions):
        rng = make_rng(spec.seed, f"synth-listener/{s}")
        ext = extended[s]
        facial_a = ext[spec.lag:spec.lag + spec.frames]
        facial_b = ext[:spec.frames].copy()
        if spec.noise > 0:
            facial_b = facial_b + spec.noise * rng.standard_normal(facial_b.shape)
        affect = DEFAULT_SCHEMA.affect_slice
        lo = np.zeros(facial_b.shape[1])
        hi = np.ones(facial_b.shape[1])
        lo[affect] = -1.0
        facial_b = np.clip(facial_b, lo, hi)
        facial_a = quantize_f32(facial_a)
        facial_b = quantize_f32(facial_b)

        session_id = f"sess{s:04d}"
        names = {"facial_a": f"sequences/{session_id}_a.bin",
                 "facial_b": f"sequences/{session_id}_b.bin"}
        write_matrix_binary(out_dir / names["facial_a"], facial_a)
        write_matrix_binary(out_dir / names["facial_b"], facial_b)
        if spec.write_csv:
            for suffix, mat in (("a", facial_a), ("b", facial_b)):
                seq = ReactionSequence(clip_id=f"{session_id}_{suffix}", frames=mat,
                                       fps=spec.fps)
                write_sequence_csv(out_dir / f"sequences/{session_id}_{suffix}.csv", seq)
        audio_names = {"audio_a": None, "audio_b": None}
        if spec.audio_dim > 0:
            for suffix in ("a", "b"):
                audio = quantize_f32(rng.standard_normal((spec.frames, spec.audio_dim)))
                rel = f"sequences/{session_id}_{suffix}_audio.bin"
                write_matrix_binary(out_dir / rel, audio)
                audio_names[f"audio_{suffix}"] = rel
        rows.append({
            "session_id": session_id,
            "subject_a": f"subj{2 * s:04d}",
            "subject_b": f"subj{2 * s + 1:04d}",
            "corpus": spec.corpus,
            "language": spec.languages[s % len(spec.languages)],
            **names, **audio_names,
        })

    sessions_path = out_dir / "sessions.csv"
    write_sessions_file(sessions_path, rows, fps=spec.fps, audio_dim=spec.audio_dim)
    return sessions_path


def load_sessions(sessions_path: str | Path) -> list[SessionRecord]:
    rows, fps, _ = read_sessions_file(sessions_path)
    root = Path(sessions_path).parent
    records = []
    for row in rows:
        records.append(SessionRecord(
            session_id=row["session_id"],
            subject_a=row["subject_a"], subject_b=row["subject_b"],
            language=row["language"], corpus=row["corpus"],
            facial_a=load_sequence(root / row["facial_a"]).frames,
            facial_b=load_sequence(root / row["facial_b"]).frames,
            audio_a=read_matrix_binary(root / row["audio_a"]) if row.get("audio_a") else None,
            audio_b=read_matrix_binary(root / row["audio_b"]) if row.get("audio_b") else None,
            fps=fps))
    return records


def segment_dataset(sessions_path: str | Path, out_dir: str | Path,
                    frames_per_clip: int = STANDARD_FRAME_COUNT) -> Path:
    """Segment every session into clips, write per-clip sequence files and a
    clip manifest (split column initialized to train, pending plan_split)."""
    sessions = load_sessions(sessions_path)
    _, fps, audio_dim = read_sessions_file(sessions_path)
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)

    manifest_clips = []
    for session in sessions:
        for pair in segment_session(session, frames_per_clip):
            rels = {}
            for suffix, participant in (("a", pair.participant_a), ("b", pair.participant_b)):
                rel = f"clips/{pair.pair_id}_{suffix}.bin"
                write_matrix_binary(out_dir / rel, participant.behaviour.facial.frames)
                rels[f"facial_{suffix}"] = rel
                rels[f"audio_{suffix}"] = None
                if participant.behaviour.audio is not None:
                    arel = f"clips/{pair.pair_id}_{suffix}_audio.bin"
                    write_matrix_binary(out_dir / arel, participant.behaviour.audio)
                    rels[f"audio_{suffix}"] = arel
            manifest_clips.append(ManifestClip(
                pair_id=pair.pair_id, session_id=pair.session_id,
                subject_a=pair.participant_a.subject_id,
                subject_b=pair.participant_b.subject_id,
                corpus=pair.source_corpus, language=pair.language, split="train",
                **rels))

    manifest = DatasetManifest(clips=tuple(manifest_clips), fps=sessions[0].fps if sessions else STANDARD_FPS,
                               frames=frames_per_clip, audio_dim=audio_dim, root=str(out_dir))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, manifest)
    return manifest_path


# -- manifest statistics -----------------------------------------------------------------

@dataclass(frozen=True)
class SplitStats:
    clips: int
    hours: float
    by_corpus: Mapping[str, int]
    by_corpus_language: Mapping[tuple[str, str], int]


def manifest_stats(manifest: DatasetManifest) -> dict[str, SplitStats]:
    """Per-split clip counts and hours (clips x clip length / 3600), broken
    down by corpus and (corpus, language)."""
    seconds_per_clip = manifest.frames / manifest.fps
    out = {}
    for split in SPLITS:
        clips = manifest.clips_for_split(split)
        by_corpus = Counter(c.corpus for c in clips)
        by_cl = Counter((c.corpus, c.language) for c in clips)
        out[split] = SplitStats(
            clips=len(clips),
            hours=len(clips) * seconds_per_clip / 3600.0,
            by_corpus=dict(by_corpus),
            by_corpus_language=dict(by_cl))
    return out


def clip_hours(n_clips: int, frames: int = STANDARD_FRAME_COUNT,
               fps: int = STANDARD_FPS) -> float:
    return n_clips * (frames / fps) / 3600.0


def format_stats(manifest: DatasetManifest) -> str:
    """Text table mirroring the per-split corpus/language breakdown."""
    stats = manifest_stats(manifest)
    seconds_per_clip = manifest.frames / manifest.fps
    corpora = sorted({c.corpus for c in manifest.clips})
    languages = sorted({c.language for c in manifest.clips})
    lines = []
    for split in SPLITS:
        st = stats[split]
        lines.append(f"[{split}] {st.clips} clips, {st.hours:.1f} h")
        header = f"{'':<12}" + "".join(f"{corpus:>20}" for corpus in corpora)
        lines.append(header)
        row = f"{'Clips':<12}"
        for corpus in corpora:
            n = st.by_corpus.get(corpus, 0)
            row += f"{f'{n}, {n * seconds_per_clip / 3600.0:.1f} h':>20}"
        lines.append(row)
        for lang in languages:
            row = f"{lang:<12}"
            for corpus in corpora:
                n = st.by_corpus_language.get((corpus, lang), 0)
                cell = f"{n}, {n * seconds_per_clip / 3600.0:.1f} h" if n else "-"
                row += f"{cell:>20}"
            lines.append(row)
        lines.append("")
    return "\n".join(lines)
