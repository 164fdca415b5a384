"""Shared data model: channel schema, sequences, clip pairs, manifests,
appropriateness maps and generation sets.

All types are immutable after construction and safe to share between
concurrent evaluation workers. Range/shape rules are checked by
``validate_sequence`` (which reports, never raises); structural rules that
would make an object unusable (mismatched frame counts, duplicate subjects)
raise ``DataError`` at construction time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError

AU_NAMES = (
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU9", "AU10", "AU12",
    "AU14", "AU15", "AU17", "AU23", "AU24", "AU25", "AU26",
)
EXPRESSION_NAMES = (
    "Neutral", "Happy", "Sad", "Surprise", "Fear", "Disgust", "Anger", "Contempt",
)
AFFECT_NAMES = ("valence", "arousal")

STANDARD_FPS = 25
STANDARD_CLIP_SECONDS = 30
STANDARD_FRAME_COUNT = STANDARD_FPS * STANDARD_CLIP_SECONDS  # 750

CORPORA = ("NoXi", "UDIVA", "RECOLA", "Synthetic")
SPLITS = ("train", "val", "test")
MODES = ("offline", "online")
ROLES = ("A", "B")


@dataclass(frozen=True)
class ChannelSchema:
    """Fixed ordering of the 25 facial-attribute channels.

    Order is AUs (15), expression probabilities (8), valence, arousal.
    """

    au_names: tuple[str, ...] = AU_NAMES
    expression_names: tuple[str, ...] = EXPRESSION_NAMES
    affect_names: tuple[str, ...] = AFFECT_NAMES

    def __post_init__(self):
        if tuple(self.au_names) != AU_NAMES:
            raise DataError(f"AU channel set must be exactly {AU_NAMES}")
        if tuple(self.expression_names) != EXPRESSION_NAMES:
            raise DataError(f"expression channel set must be exactly {EXPRESSION_NAMES}")
        if tuple(self.affect_names) != AFFECT_NAMES:
            raise DataError(f"affect channels must be exactly {AFFECT_NAMES}")

    @property
    def names(self) -> tuple[str, ...]:
        return self.au_names + self.expression_names + self.affect_names

    @property
    def n_channels(self) -> int:
        return len(self.names)  # 25

    @property
    def au_slice(self) -> slice:
        return slice(0, len(self.au_names))

    @property
    def expression_slice(self) -> slice:
        n = len(self.au_names)
        return slice(n, n + len(self.expression_names))

    @property
    def affect_slice(self) -> slice:
        n = len(self.au_names) + len(self.expression_names)
        return slice(n, n + len(self.affect_names))

    def channel_range(self, index: int) -> tuple[float, float]:
        """Valid value range for channel ``index``."""
        if index >= self.affect_slice.start:
            return (-1.0, 1.0)
        return (0.0, 1.0)


DEFAULT_SCHEMA = ChannelSchema()
N_CHANNELS = DEFAULT_SCHEMA.n_channels


def _as_frame_matrix(frames) -> np.ndarray:
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"frames must be a 2-D (T x C) matrix, got ndim={arr.ndim}")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ReactionSequence:
    """A T x 25 facial-attribute time series at ``fps`` frames per second."""

    clip_id: str
    frames: np.ndarray
    fps: int = STANDARD_FPS

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_frame_matrix(self.frames))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_channels(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True, eq=False)
class SpeakerBehaviour:
    """One participant's clip: facial attributes plus optional per-frame
    audio descriptors (opaque to the metrics)."""

    clip_id: str
    facial: ReactionSequence
    audio: np.ndarray | None = None

    def __post_init__(self):
        if self.audio is not None:
            audio = np.ascontiguousarray(np.asarray(self.audio, dtype=np.float64))
            if audio.ndim != 2:
                raise DataError("audio descriptors must be a 2-D (T x D) matrix")
            if audio.shape[0] != self.facial.n_frames:
                raise DataError(
                    f"audio frame count {audio.shape[0]} != facial frame count "
                    f"{self.facial.n_frames} for clip {self.clip_id!r}"
                )
            audio.setflags(write=False)
            object.__setattr__(self, "audio", audio)

    @property
    def n_frames(self) -> int:
        return self.facial.n_frames


@dataclass(frozen=True, eq=False)
class Participant:
    subject_id: str
    behaviour: SpeakerBehaviour


@dataclass(frozen=True, eq=False)
class ClipPair:
    """One 30 s dyadic segment; both participants are evaluable as speaker
    and as listener."""

    pair_id: str
    participant_a: Participant
    participant_b: Participant
    source_corpus: str = "Synthetic"
    language: str = ""
    session_id: str = ""

    def __post_init__(self):
        if self.participant_a.subject_id == self.participant_b.subject_id:
            raise DataError(
                f"pair {self.pair_id!r}: both participants have subject id "
                f"{self.participant_a.subject_id!r}"
            )
        ta = self.participant_a.behaviour.n_frames
        tb = self.participant_b.behaviour.n_frames
        if ta != tb:
            raise DataError(f"pair {self.pair_id!r}: frame counts differ ({ta} vs {tb})")
        if self.source_corpus not in CORPORA:
            raise DataError(f"unknown corpus {self.source_corpus!r}; expected one of {CORPORA}")


def assignment_id(pair_id: str, speaker_role: str) -> str:
    """Canonical identifier of a (pair, speaker role) assignment."""
    if speaker_role not in ROLES:
        raise DataError(f"speaker role must be one of {ROLES}, got {speaker_role!r}")
    return f"{pair_id}_{speaker_role}"


@dataclass(frozen=True, eq=False)
class SpeakerListenerAssignment:
    """One evaluable orientation of a clip pair: who speaks, and the real
    listener reaction that answers them."""

    pair_id: str
    speaker_role: str
    speaker: SpeakerBehaviour
    listener_gt: ReactionSequence
    speaker_subject: str = ""
    listener_subject: str = ""

    @property
    def assignment_id(self) -> str:
        return assignment_id(self.pair_id, self.speaker_role)


def enumerate_assignments(pairs: Sequence[ClipPair]) -> list[SpeakerListenerAssignment]:
    """Expand clip pairs into speaker/listener assignments.

    Each pair contributes exactly two assignments (A speaking, then B
    speaking), ordered by (pair_id, role). Duplicate pair ids are an error.
    """
    seen: set[str] = set()
    for pair in pairs:
        if pair.pair_id in seen:
            raise DataError(f"duplicate pair id {pair.pair_id!r}")
        seen.add(pair.pair_id)

    out: list[SpeakerListenerAssignment] = []
    for pair in sorted(pairs, key=lambda p: p.pair_id):
        a, b = pair.participant_a, pair.participant_b
        out.append(SpeakerListenerAssignment(
            pair_id=pair.pair_id, speaker_role="A",
            speaker=a.behaviour, listener_gt=b.behaviour.facial,
            speaker_subject=a.subject_id, listener_subject=b.subject_id,
        ))
        out.append(SpeakerListenerAssignment(
            pair_id=pair.pair_id, speaker_role="B",
            speaker=b.behaviour, listener_gt=a.behaviour.facial,
            speaker_subject=b.subject_id, listener_subject=a.subject_id,
        ))
    return out


@dataclass(frozen=True)
class Violation:
    """A single broken sequence invariant, with coordinates where known."""

    kind: str  # "shape" | "frame_count" | "range" | "nonfinite"
    message: str
    frame: int | None = None
    channel: str | None = None


@dataclass(frozen=True)
class ValidationReport:
    clip_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self, limit: int = 5) -> str:
        if self.ok:
            return f"{self.clip_id}: ok"
        lines = [f"{self.clip_id}: {len(self.violations)} violation(s)"]
        for v in self.violations[:limit]:
            where = []
            if v.frame is not None:
                where.append(f"frame {v.frame}")
            if v.channel is not None:
                where.append(f"channel {v.channel!r}")
            suffix = f" ({', '.join(where)})" if where else ""
            lines.append(f"  - [{v.kind}] {v.message}{suffix}")
        if len(self.violations) > limit:
            lines.append(f"  ... and {len(self.violations) - limit} more")
        return "\n".join(lines)


def validate_sequence(
    seq: ReactionSequence,
    schema: ChannelSchema = DEFAULT_SCHEMA,
    expected_frames: int | None = STANDARD_FRAME_COUNT,
) -> ValidationReport:
    """Check every sequence invariant and report all violations.

    Never raises: the report lists each broken rule (shape, frame count,
    per-channel range, non-finite cells) with frame/channel coordinates.
    ``expected_frames=None`` disables the frame-count check (synthetic /
    desk-scale mode).
    """
    violations: list[Violation] = []
    frames = seq.frames

    if frames.shape[1] != schema.n_channels:
        violations.append(Violation(
            "shape", f"expected {schema.n_channels} channels, got {frames.shape[1]}"))
        return ValidationReport(seq.clip_id, tuple(violations))

    if expected_frames is not None and frames.shape[0] != expected_frames:
        violations.append(Violation(
            "frame_count", f"expected {expected_frames} frames, got {frames.shape[0]}"))

    names = schema.names
    bad = ~np.isfinite(frames)
    for t, c in np.argwhere(bad):
        violations.append(Violation(
            "nonfinite", f"non-finite value {frames[t, c]!r}", frame=int(t), channel=names[c]))

    finite = np.where(bad, 0.0, frames)
    lo = np.zeros(schema.n_channels)
    hi = np.ones(schema.n_channels)
    lo[schema.affect_slice] = -1.0
    out_of_range = ((finite < lo) | (finite > hi)) & ~bad
    for t, c in np.argwhere(out_of_range):
        lo_c, hi_c = schema.channel_range(int(c))
        violations.append(Violation(
            "range",
            f"value {frames[t, c]:g} outside [{lo_c:g}, {hi_c:g}]",
            frame=int(t), channel=names[c]))

    return ValidationReport(seq.clip_id, tuple(violations))


@dataclass(frozen=True)
class AppropriatenessMap:
    """For each assignment, the assignments whose real listener reactions
    count as appropriate answers to its speaker behaviour."""

    entries: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        frozen = {}
        for aid, neigh in self.entries.items():
            neigh = tuple(dict.fromkeys(neigh))
            if not neigh:
                raise DataError(f"appropriateness set for {aid!r} is empty")
            if aid not in neigh:
                raise DataError(f"appropriateness set for {aid!r} does not include itself")
            frozen[aid] = neigh
        object.__setattr__(self, "entries", frozen)

    def neighbors(self, aid: str) -> tuple[str, ...]:
        try:
            return self.entries[aid]
        except KeyError:
            raise DataError(f"no appropriateness entry for assignment {aid!r}") from None

    def check_ids(self, known_ids: Iterable[str]) -> None:
        """Raise if any referenced assignment id is not in ``known_ids``."""
        known = set(known_ids)
        for aid, neigh in self.entries.items():
            unknown = [n for n in (aid, *neigh) if n not in known]
            if unknown:
                raise DataError(
                    f"appropriateness map references unknown assignment ids: {sorted(set(unknown))}")


@dataclass(frozen=True, eq=False)
class GenerationSet:
    """The M candidate reactions one generator produced for one assignment."""

    assignment_id: str
    candidates: tuple[ReactionSequence, ...]
    mode: str = "offline"
    generator_name: str = ""
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 1:
            raise DataError(f"generation set {self.assignment_id!r} has no candidates")
        if self.mode not in MODES:
            raise DataError(f"mode must be one of {MODES}, got {self.mode!r}")
        t0 = self.candidates[0].n_frames
        c0 = self.candidates[0].n_channels
        for cand in self.candidates[1:]:
            if cand.n_frames != t0 or cand.n_channels != c0:
                raise DataError(
                    f"generation set {self.assignment_id!r}: candidate shapes differ")

    @property
    def m(self) -> int:
        return len(self.candidates)

    @property
    def n_frames(self) -> int:
        return self.candidates[0].n_frames

    def stacked(self) -> np.ndarray:
        """All candidates as one (M, T, C) array."""
        return np.stack([c.frames for c in self.candidates])


@dataclass(frozen=True)
class ManifestClip:
    """One clip-pair record of a dataset manifest (paths are relative to the
    manifest's root directory)."""

    pair_id: str
    session_id: str
    subject_a: str
    subject_b: str
    corpus: str
    language: str
    split: str
    facial_a: str
    facial_b: str
    audio_a: str | None = None
    audio_b: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.corpus not in CORPORA:
            raise DataError(f"unknown corpus {self.corpus!r}")
        if self.subject_a == self.subject_b:
            raise DataError(f"clip {self.pair_id!r}: identical subject ids")


@dataclass(frozen=True)
class DatasetManifest:
    """Clip list plus the global schema/fps/frame-count contract.

    Split assignment must be subject-independent: a subject id may appear in
    only one split.
    """

    clips: tuple[ManifestClip, ...]
    fps: int = STANDARD_FPS
    frames: int = STANDARD_FRAME_COUNT
    audio_dim: int = 0
    root: str = "."
    schema: ChannelSchema = field(default_factory=ChannelSchema)

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        seen: set[str] = set()
        subject_split: dict[str, str] = {}
        for clip in self.clips:
            if clip.pair_id in seen:
                raise DataError(f"duplicate pair id {clip.pair_id!r} in manifest")
            seen.add(clip.pair_id)
            for subject in (clip.subject_a, clip.subject_b):
                prev = subject_split.setdefault(subject, clip.split)
                if prev != clip.split:
                    raise DataError(
                        f"subject {subject!r} appears in splits {prev!r} and "
                        f"{clip.split!r}; splits must be subject-independent")

    def clips_for_split(self, split: str | None) -> tuple[ManifestClip, ...]:
        if split is None:
            return self.clips
        if split not in SPLITS:
            raise DataError(f"split must be one of {SPLITS}, got {split!r}")
        return tuple(c for c in self.clips if c.split == split)

    def subjects(self) -> set[str]:
        out: set[str] = set()
        for c in self.clips:
            out.add(c.subject_a)
            out.add(c.subject_b)
        return out
