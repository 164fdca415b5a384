"""File formats: sequence binary/CSV, dataset manifests, appropriateness
maps and submission directories.

Sequence binary format (little-endian):
    magic  4 bytes  b"MFRG"
    u16    version  (currently 1)
    u32    T        frame count
    u32    C        channel count
    f32 x (T*C)     row-major frame data

Sequence CSV format: header ``frame,AU1,...,AU26,Neutral,...,Contempt,
valence,arousal``, one row per frame, 0-based frame index, UTF-8, decimal
point. Values survive a round trip to <= 1e-6 absolute.

Manifest format: CSV preceded by two comment lines::

    # mafrg manifest v1
    # fps=25 frames=750 audio_dim=0
    pair_id,session_id,subject_a,subject_b,corpus,language,split,facial_a,facial_b,audio_a,audio_b

Session manifests (pre-segmentation input) carry ``# mafrg sessions v1`` and
drop the split/pair columns. All paths are relative to the manifest file.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .schema import (
    DEFAULT_SCHEMA,
    ChannelSchema,
    ClipPair,
    DatasetManifest,
    GenerationSet,
    ManifestClip,
    Participant,
    ReactionSequence,
    SpeakerBehaviour,
)

_MAGIC = b"MFRG"
_VERSION = 1
_HEADER = struct.Struct("<4sHII")

MANIFEST_HEADER = "# mafrg manifest v1"
SESSIONS_HEADER = "# mafrg sessions v1"

_CLIP_FIELDS = [
    "pair_id", "session_id", "subject_a", "subject_b", "corpus", "language",
    "split", "facial_a", "facial_b", "audio_a", "audio_b",
]
_SESSION_FIELDS = [
    "session_id", "subject_a", "subject_b", "corpus", "language",
    "facial_a", "facial_b", "audio_a", "audio_b",
]


def quantize_f32(frames: np.ndarray) -> np.ndarray:
    """Round values to the float32 grid used by the binary format."""
    return np.asarray(frames, dtype=np.float32).astype(np.float64)


# -- binary matrices ---------------------------------------------------------

def write_matrix_binary(path: str | Path, frames: np.ndarray) -> None:
    arr = np.ascontiguousarray(np.asarray(frames, dtype=np.float32))
    if arr.ndim != 2:
        raise DataError("binary sequence payload must be a 2-D matrix")
    t, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, t, c))
        fh.write(arr.tobytes(order="C"))


def read_matrix_binary(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, t, c = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        if version != _VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        payload = fh.read(4 * t * c)
        if len(payload) != 4 * t * c:
            raise DataError(f"{path}: truncated payload ({len(payload)} bytes for {t}x{c})")
        extra = fh.read(1)
        if extra:
            raise DataError(f"{path}: trailing bytes after {t}x{c} payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(t, c)
    return arr.astype(np.float64)


def write_sequence_binary(path: str | Path, seq: ReactionSequence) -> None:
    write_matrix_binary(path, seq.frames)


def read_sequence_binary(path: str | Path, clip_id: str | None = None) -> ReactionSequence:
    frames = read_matrix_binary(path)
    return ReactionSequence(clip_id=clip_id or Path(path).stem, frames=frames)


# -- CSV sequences ------------------------------------------------------------

def csv_header(schema: ChannelSchema = DEFAULT_SCHEMA) -> list[str]:
    return ["frame", *schema.names]


def write_sequence_csv(path: str | Path, seq: ReactionSequence,
                       schema: ChannelSchema = DEFAULT_SCHEMA) -> None:
    if seq.n_channels != schema.n_channels:
        raise DataError(f"sequence has {seq.n_channels} channels, schema expects "
                        f"{schema.n_channels}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(schema))
        for t, row in enumerate(seq.frames):
            writer.writerow([t, *(format(v, ".8g") for v in row)])


def read_sequence_csv(path: str | Path, clip_id: str | None = None,
                      schema: ChannelSchema = DEFAULT_SCHEMA) -> ReactionSequence:
    expected = csv_header(schema)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise DataError(f"{path}: unexpected CSV header")
        rows = []
        for lineno, row in enumerate(reader):
            if len(row) != len(expected):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, "
                                f"expected {len(expected)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataError(f"{path}: row {lineno}: {exc}") from None
    frames = np.asarray(rows, dtype=np.float64).reshape(len(rows), schema.n_channels)
    return ReactionSequence(clip_id=clip_id or Path(path).stem, frames=frames)


def load_sequence(path: str | Path, clip_id: str | None = None) -> ReactionSequence:
    """Dispatch on suffix: ``.bin`` binary, ``.csv`` text."""
    suffix = Path(path).suffix.lower()
    if suffix == ".bin":
        return read_sequence_binary(path, clip_id)
    if suffix == ".csv":
        return read_sequence_csv(path, clip_id)
    raise DataError(f"{path}: unknown sequence suffix {suffix!r} (expected .bin or .csv)")


# -- manifests ----------------------------------------------------------------

def _parse_kv_line(line: str, path) -> dict[str, str]:
    out = {}
    for token in line.lstrip("#").split():
        if "=" not in token:
            raise DataError(f"{path}: malformed header token {token!r}")
        k, v = token.split("=", 1)
        out[k] = v
    return out


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(MANIFEST_HEADER + "\n")
        fh.write(f"# fps={manifest.fps} frames={manifest.frames} "
                 f"audio_dim={manifest.audio_dim}\n")
        writer = csv.writer(fh)
        writer.writerow(_CLIP_FIELDS)
        for c in manifest.clips:
            writer.writerow([
                c.pair_id, c.session_id, c.subject_a, c.subject_b, c.corpus,
                c.language, c.split, c.facial_a, c.facial_b,
                c.audio_a or "", c.audio_b or "",
            ])


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != MANIFEST_HEADER:
            raise DataError(f"{path}: not a manifest (first line {first!r})")
        meta = _parse_kv_line(fh.readline().rstrip("\n"), path)
        reader = csv.DictReader(fh)
        if reader.fieldnames != _CLIP_FIELDS:
            raise DataError(f"{path}: unexpected manifest columns {reader.fieldnames}")
        clips = []
        for row in reader:
            clips.append(ManifestClip(
                pair_id=row["pair_id"], session_id=row["session_id"],
                subject_a=row["subject_a"], subject_b=row["subject_b"],
                corpus=row["corpus"], language=row["language"], split=row["split"],
                facial_a=row["facial_a"], facial_b=row["facial_b"],
                audio_a=row["audio_a"] or None, audio_b=row["audio_b"] or None,
            ))
    try:
        fps = int(meta["fps"])
        frames = int(meta["frames"])
        audio_dim = int(meta["audio_dim"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad manifest header metadata: {exc}") from None
    return DatasetManifest(clips=tuple(clips), fps=fps, frames=frames,
                           audio_dim=audio_dim, root=str(path.parent))


def load_clip_pair(manifest: DatasetManifest, clip: ManifestClip) -> ClipPair:
    """Load one manifest record's sequence files into a ClipPair."""
    root = Path(manifest.root)

    def behaviour(subject: str, facial_rel: str, audio_rel: str | None,
                  suffix: str) -> SpeakerBehaviour:
        facial = load_sequence(root / facial_rel, clip_id=f"{clip.pair_id}_{suffix}")
        audio = read_matrix_binary(root / audio_rel) if audio_rel else None
        return SpeakerBehaviour(clip_id=f"{clip.pair_id}_{suffix}", facial=facial, audio=audio)

    return ClipPair(
        pair_id=clip.pair_id,
        participant_a=Participant(clip.subject_a,
                                  behaviour(clip.subject_a, clip.facial_a, clip.audio_a, "a")),
        participant_b=Participant(clip.subject_b,
                                  behaviour(clip.subject_b, clip.facial_b, clip.audio_b, "b")),
        source_corpus=clip.corpus,
        language=clip.language,
        session_id=clip.session_id,
    )


# -- session manifests (pre-segmentation) -------------------------------------

def write_sessions_file(path: str | Path, rows: list[dict], fps: int, audio_dim: int) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SESSIONS_HEADER + "\n")
        fh.write(f"# fps={fps} audio_dim={audio_dim}\n")
        writer = csv.DictWriter(fh, fieldnames=_SESSION_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) or "" for k in _SESSION_FIELDS})


def read_sessions_file(path: str | Path) -> tuple[list[dict], int, int]:
    """Return (rows, fps, audio_dim); paths in rows stay relative."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != SESSIONS_HEADER:
            raise DataError(f"{path}: not a sessions file (first line {first!r})")
        meta = _parse_kv_line(fh.readline().rstrip("\n"), path)
        reader = csv.DictReader(fh)
        if reader.fieldnames != _SESSION_FIELDS:
            raise DataError(f"{path}: unexpected sessions columns {reader.fieldnames}")
        rows = [dict(row) for row in reader]
    try:
        return rows, int(meta["fps"]), int(meta["audio_dim"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad sessions header metadata: {exc}") from None


# -- appropriateness map files -------------------------------------------------

def write_map(path: str | Path, entries: dict[str, tuple[str, ...]]) -> None:
    """One line per assignment: ``<assignment_id>: <id1>,<id2>,...``."""
    with open(path, "w", encoding="utf-8") as fh:
        for aid in sorted(entries):
            fh.write(f"{aid}: {','.join(entries[aid])}\n")


def read_map(path: str | Path) -> dict[str, tuple[str, ...]]:
    entries: dict[str, tuple[str, ...]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DataError(f"{path}:{lineno}: expected '<assignment_id>: ids'")
            aid, rest = line.split(":", 1)
            aid = aid.strip()
            ids = tuple(tok.strip() for tok in rest.split(",") if tok.strip())
            if aid in entries:
                raise DataError(f"{path}:{lineno}: duplicate entry for {aid!r}")
            entries[aid] = ids
    return entries


# -- submission directories ----------------------------------------------------

SUBMISSION_META = "submission.json"


def candidate_filename(index: int) -> str:
    return f"candidate_{index:03d}.bin"


def write_generation_set(directory: str | Path, gen: GenerationSet) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, cand in enumerate(gen.candidates):
        write_sequence_binary(directory / candidate_filename(i), cand)


def write_submission(directory: str | Path, gens: dict[str, GenerationSet],
                     generator_name: str, mode: str, seed: int, split: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "generator": generator_name,
        "mode": mode,
        "seed": seed,
        "split": split,
        "m": max(g.m for g in gens.values()) if gens else 0,
        "assignments": sorted(gens),
    }
    with open(directory / SUBMISSION_META, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for aid in sorted(gens):
        write_generation_set(directory / aid, gens[aid])


def read_submission_meta(directory: str | Path) -> dict:
    meta_path = Path(directory) / SUBMISSION_META
    if not meta_path.exists():
        raise DataError(f"{directory}: missing {SUBMISSION_META}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def read_generation_set(directory: str | Path, aid: str, mode: str,
                        generator_name: str = "", seed: int = 0) -> GenerationSet:
    directory = Path(directory)
    paths = sorted(directory.glob("candidate_*.bin"))
    if not paths:
        raise DataError(f"{directory}: no candidate files for assignment {aid!r}")
    candidates = [read_sequence_binary(p, clip_id=f"{aid}/{p.stem}") for p in paths]
    return GenerationSet(assignment_id=aid, candidates=tuple(candidates),
                         mode=mode, generator_name=generator_name, seed=seed)


def read_submission(directory: str | Path,
                    assignment_ids: list[str] | None = None) -> dict[str, GenerationSet]:
    """Load a submission directory into per-assignment generation sets.

    With ``assignment_ids`` given, loads exactly those (missing ones are left
    out for the caller to report); otherwise loads every subdirectory.
    """
    directory = Path(directory)
    meta = read_submission_meta(directory)
    mode = meta.get("mode", "offline")
    name = meta.get("generator", "")
    seed = int(meta.get("seed", 0))
    if assignment_ids is None:
        assignment_ids = sorted(p.name for p in directory.iterdir() if p.is_dir())
    gens: dict[str, GenerationSet] = {}
    for aid in assignment_ids:
        sub = directory / aid
        if sub.is_dir():
            gens[aid] = read_generation_set(sub, aid, mode, name, seed)
    return gens
