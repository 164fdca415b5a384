"""Generator contracts (offline and online), the causality guard, the four
naive baselines, and the subprocess adapter for external generators.

Online contract: run_online drives a generator frame by frame. The step
input for frame gamma exposes at most window_w trailing speaker frames
ending at gamma and the generator's own previous emissions; no speaker data
beyond gamma ever reaches the generator. causal_guard_check additionally
verifies any black-box full-sequence generator empirically by corrupting
future speaker frames and demanding bit-identical prefixes.

Randomness is counter-based (Philox) keyed on (seed, speaker clip id), so a
single submission seed yields reproducible yet per-clip-distinct streams.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    CausalityViolation,
    DataError,
    GeneratorCrash,
    GeneratorError,
    GeneratorTimeout,
)
from .schema import (
    DEFAULT_SCHEMA,
    GenerationSet,
    ReactionSequence,
    SpeakerBehaviour,
    SpeakerListenerAssignment,
)
from .seqio import candidate_filename, quantize_f32, read_sequence_binary, write_matrix_binary

DEFAULT_M = 10
DEFAULT_WINDOW = 50

BASELINE_NAMES = ("b_random", "b_mime", "b_mean_seq", "b_mean_fr")


def make_rng(seed: int, stream: str | int = 0) -> np.random.Generator:
    """Counter-based generator keyed on (seed, stream)."""
    if isinstance(stream, str):
        stream_int = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:8], "little")
    else:
        stream_int = int(stream) & 0xFFFFFFFFFFFFFFFF
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, stream_int], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class GeneratorContract:
    """How a generator is invoked for a submission."""

    name: str
    mode: str = "offline"
    m_candidates: int = DEFAULT_M
    window_w: int = DEFAULT_WINDOW
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("offline", "online"):
            raise DataError(f"mode must be offline or online, got {self.mode!r}")
        if self.m_candidates < 1:
            raise DataError(f"m_candidates must be >= 1, got {self.m_candidates}")
        if self.window_w < 1:
            raise DataError(f"window_w must be >= 1, got {self.window_w}")


@dataclass(frozen=True, eq=False)
class OnlineStepInput:
    """What an online generator may see when emitting frame ``frame_index``:
    speaker frames from ``window_start`` through ``frame_index`` inclusive,
    and its own previous emissions."""

    frame_index: int
    window_start: int
    speaker_facial: np.ndarray
    speaker_audio: np.ndarray | None
    prev_reaction: np.ndarray


class ReactionGenerator:
    """Base class for in-process generators."""

    name = "generator"

    def offline(self, speaker: SpeakerBehaviour, m: int,
                rng: np.random.Generator) -> np.ndarray:
        """Return an (M, T, C) array of candidate reactions."""
        raise NotImplementedError

    def online_step(self, step: OnlineStepInput, m: int,
                    rng: np.random.Generator) -> np.ndarray:
        """Return the (M, C) reaction frame for step.frame_index."""
        raise NotImplementedError


class RandomReaction(ReactionGenerator):
    """Samples every cell independently; the default uniform [0,1] draw is
    valid for all channels ([0,1] lies inside the affect range)."""

    name = "b_random"

    def __init__(self, distribution: str = "uniform"):
        if distribution not in ("uniform", "gaussian"):
            raise DataError(f"distribution must be uniform or gaussian, got "
                            f"{distribution!r}")
        self.distribution = distribution

    def _draw(self, rng, shape):
        if self.distribution == "uniform":
            return rng.random(shape)
        return np.clip(rng.normal(0.5, 0.2, size=shape), 0.0, 1.0)

    def offline(self, speaker, m, rng):
        t = speaker.n_frames
        return self._draw(rng, (m, t, DEFAULT_SCHEMA.n_channels))

    def online_step(self, step, m, rng):
        return self._draw(rng, (m, DEFAULT_SCHEMA.n_channels))


class MimeReaction(ReactionGenerator):
    """Copies the speaker's own facial attributes frame by frame."""

    name = "b_mime"

    def offline(self, speaker, m, rng):
        return np.repeat(speaker.facial.frames[None], m, axis=0)

    def online_step(self, step, m, rng):
        return np.repeat(step.speaker_facial[-1][None], m, axis=0)


class MeanSequenceReaction(ReactionGenerator):
    """Emits the frame-by-frame mean reaction of a training set."""

    name = "b_mean_seq"

    def __init__(self, template: np.ndarray):
        template = np.asarray(template, dtype=np.float64)
        if template.ndim != 2:
            raise DataError("mean-sequence template must be a (T x C) matrix")
        self.template = template

    def offline(self, speaker, m, rng):
        if speaker.n_frames != self.template.shape[0]:
            raise GeneratorError(
                f"mean-sequence template has {self.template.shape[0]} frames, "
                f"speaker clip has {speaker.n_frames}")
        return np.repeat(self.template[None], m, axis=0)

    def online_step(self, step, m, rng):
        if step.frame_index >= self.template.shape[0]:
            raise GeneratorError("speaker clip is longer than the mean-sequence template")
        return np.repeat(self.template[step.frame_index][None], m, axis=0)


class MeanFrameReaction(ReactionGenerator):
    """Emits the global mean frame of a training set, repeated."""

    name = "b_mean_fr"

    def __init__(self, frame: np.ndarray):
        frame = np.asarray(frame, dtype=np.float64)
        if frame.ndim != 1:
            raise DataError("mean-frame template must be a channel vector")
        self.frame = frame

    def offline(self, speaker, m, rng):
        return np.broadcast_to(self.frame, (m, speaker.n_frames, self.frame.shape[0])).copy()

    def online_step(self, step, m, rng):
        return np.repeat(self.frame[None], m, axis=0)


def _as_candidates(out: np.ndarray, speaker: SpeakerBehaviour, m: int,
                   gen_name: str, mode: str, seed: int,
                   assignment_id: str | None) -> GenerationSet:
    out = np.asarray(out, dtype=np.float64)
    expected = (m, speaker.n_frames, DEFAULT_SCHEMA.n_channels)
    if out.shape != expected:
        raise GeneratorError(f"{gen_name}: emitted shape {out.shape}, expected {expected}")
    if not np.all(np.isfinite(out)):
        raise GeneratorError(f"{gen_name}: emitted non-finite values")
    out = quantize_f32(out)
    aid = assignment_id if assignment_id is not None else speaker.clip_id
    candidates = tuple(
        ReactionSequence(clip_id=f"{aid}/gen{i:02d}", frames=out[i],
                         fps=speaker.facial.fps)
        for i in range(m))
    return GenerationSet(assignment_id=aid, candidates=candidates,
                         mode=mode, generator_name=gen_name, seed=seed)


def run_offline(gen: ReactionGenerator, speaker: SpeakerBehaviour,
                m: int = DEFAULT_M, seed: int = 0,
                assignment_id: str | None = None) -> GenerationSet:
    """Invoke a generator with the whole speaker clip at once.

    The random stream is keyed on (seed, speaker clip id); assignment_id
    only labels the result (defaults to the speaker clip id).
    """
    rng = make_rng(seed, speaker.clip_id)
    out = gen.offline(speaker, m, rng)
    return _as_candidates(out, speaker, m, gen.name, "offline", seed, assignment_id)


def run_online(gen: ReactionGenerator, speaker: SpeakerBehaviour,
               m: int = DEFAULT_M, seed: int = 0, *,
               window_w: int = DEFAULT_WINDOW,
               warmup_zeros: bool = False,
               assignment_id: str | None = None) -> GenerationSet:
    """Drive a generator frame by frame under the causal contract.

    Each step exposes at most window_w trailing speaker frames ending at the
    current frame, plus the generator's previous emissions. warmup_zeros
    zeroes the first window of output (cold-start convention used by some
    window-based models).
    """
    if window_w < 1:
        raise DataError(f"window_w must be >= 1, got {window_w}")
    rng = make_rng(seed, speaker.clip_id)
    t = speaker.n_frames
    c = DEFAULT_SCHEMA.n_channels
    out = np.zeros((m, t, c))
    facial = speaker.facial.frames
    audio = speaker.audio
    for frame in range(t):
        start = max(0, frame - window_w + 1)
        prev = out[:, :frame]
        prev.setflags(write=False)
        step = OnlineStepInput(
            frame_index=frame, window_start=start,
            speaker_facial=facial[start:frame + 1],
            speaker_audio=audio[start:frame + 1] if audio is not None else None,
            prev_reaction=prev)
        emitted = np.asarray(gen.online_step(step, m, rng), dtype=np.float64)
        if emitted.shape != (m, c):
            raise GeneratorError(f"{gen.name}: step {frame} emitted shape "
                                 f"{emitted.shape}, expected {(m, c)}")
        out[:, frame] = emitted
    if warmup_zeros:
        out[:, :window_w] = 0.0
    return _as_candidates(out, speaker, m, gen.name, "online", seed, assignment_id)


def run_generator(gen: ReactionGenerator, speaker: SpeakerBehaviour,
                  contract: GeneratorContract,
                  assignment_id: str | None = None) -> GenerationSet:
    if contract.mode == "offline":
        return run_offline(gen, speaker, contract.m_candidates, contract.seed,
                           assignment_id=assignment_id)
    return run_online(gen, speaker, contract.m_candidates, contract.seed,
                      window_w=contract.window_w, assignment_id=assignment_id)


# -- naive baseline entry points ------------------------------------------------

def b_random(speaker: SpeakerBehaviour, m: int = DEFAULT_M, seed: int = 0,
             distribution: str = "uniform",
             assignment_id: str | None = None) -> GenerationSet:
    return run_offline(RandomReaction(distribution), speaker, m, seed,
                       assignment_id=assignment_id)


def b_mime(speaker: SpeakerBehaviour, m: int = DEFAULT_M,
           assignment_id: str | None = None) -> GenerationSet:
    return run_offline(MimeReaction(), speaker, m, seed=0,
                       assignment_id=assignment_id)


def _train_stack(train_reactions: Sequence[ReactionSequence]) -> list[np.ndarray]:
    if not train_reactions:
        raise DataError("training set is empty")
    return [r.frames for r in train_reactions]


def b_mean_seq(train_reactions: Sequence[ReactionSequence]) -> MeanSequenceReaction:
    """Fixed template generator: the frame-by-frame training mean."""
    mats = _train_stack(train_reactions)
    t0 = mats[0].shape[0]
    for mat in mats[1:]:
        if mat.shape[0] != t0:
            raise DataError("mean-sequence baseline needs equal-length training reactions")
    return MeanSequenceReaction(np.mean(np.stack(mats), axis=0))


def b_mean_fr(train_reactions: Sequence[ReactionSequence]) -> MeanFrameReaction:
    """Fixed template generator: the global training mean frame."""
    mats = _train_stack(train_reactions)
    return MeanFrameReaction(np.concatenate(mats, axis=0).mean(axis=0))


def gt_passthrough(assignment: SpeakerListenerAssignment, m: int = 1) -> GenerationSet:
    """Reference 'submission': the real listener reaction itself."""
    frames = quantize_f32(assignment.listener_gt.frames)
    candidates = tuple(
        ReactionSequence(clip_id=f"{assignment.assignment_id}/gt{i:02d}", frames=frames,
                         fps=assignment.listener_gt.fps)
        for i in range(m))
    return GenerationSet(assignment_id=assignment.assignment_id, candidates=candidates,
                         mode="offline", generator_name="gt", seed=0)


def builtin_generator(name: str,
                      train_reactions: Sequence[ReactionSequence] | None = None,
                      distribution: str = "uniform") -> ReactionGenerator:
    if name == "b_random":
        return RandomReaction(distribution)
    if name == "b_mime":
        return MimeReaction()
    if name in ("b_mean_seq", "b_mean_fr"):
        if train_reactions is None:
            raise DataError(f"{name} needs training reactions")
        return b_mean_seq(train_reactions) if name == "b_mean_seq" \
            else b_mean_fr(train_reactions)
    raise DataError(f"unknown baseline {name!r}; expected one of {BASELINE_NAMES}")


# -- causality guard -------------------------------------------------------------

GenerateFn = Callable[[SpeakerBehaviour, int, int], np.ndarray]


@dataclass(frozen=True)
class GuardReport:
    passed: bool
    trials_run: int
    first_violation: tuple[int, int, str] | None = None  # (trial, frame, channel)

    def raise_on_violation(self, name: str = "generator") -> None:
        if not self.passed:
            trial, frame, channel = self.first_violation
            raise CausalityViolation(
                f"{name} used future speaker data: trial {trial}, frame {frame}, "
                f"channel {channel}")


def full_sequence_fn(gen: ReactionGenerator, mode: str = "online",
                     window_w: int = DEFAULT_WINDOW) -> GenerateFn:
    """Adapt an in-process generator to the black-box (speaker, M, seed) ->
    (M, T, C) interface the guard exercises."""

    def fn(speaker: SpeakerBehaviour, m: int, seed: int) -> np.ndarray:
        if mode == "offline":
            gs = run_offline(gen, speaker, m, seed)
        else:
            gs = run_online(gen, speaker, m, seed, window_w=window_w)
        return gs.stacked()

    return fn


def _corrupted_speaker(speaker: SpeakerBehaviour, cut: int,
                       rng: np.random.Generator) -> SpeakerBehaviour:
    facial = np.array(speaker.facial.frames)
    t, c = facial.shape
    noise = rng.random((t - cut, c))
    noise[:, DEFAULT_SCHEMA.affect_slice] = noise[:, DEFAULT_SCHEMA.affect_slice] * 2.0 - 1.0
    facial[cut:] = noise
    audio = None
    if speaker.audio is not None:
        audio = np.array(speaker.audio)
        audio[cut:] = rng.standard_normal((t - cut, audio.shape[1]))
    return SpeakerBehaviour(
        clip_id=speaker.clip_id,
        facial=ReactionSequence(clip_id=speaker.facial.clip_id, frames=facial,
                                fps=speaker.facial.fps),
        audio=audio)


def causal_guard_check(generate_fn: GenerateFn, speaker: SpeakerBehaviour,
                       m: int = DEFAULT_M, seed: int = 0, trials: int = 50,
                       guard_seed: int = 202_3) -> GuardReport:
    """Empirical causality check of a black-box generator.

    For random cut points, speaker frames at and beyond the cut are replaced
    by noise; output frames before the cut must be bit-identical to the
    clean run. Reports the first differing (trial, frame, channel).
    """
    if trials < 1:
        raise DataError(f"trials must be >= 1, got {trials}")
    t = speaker.n_frames
    if t < 2:
        raise DataError("guard needs clips of at least 2 frames")
    base = np.asarray(generate_fn(speaker, m, seed))
    rng = make_rng(guard_seed, "causal-guard")
    names = DEFAULT_SCHEMA.names
    for trial in range(trials):
        cut = int(rng.integers(1, t))
        probe = _corrupted_speaker(speaker, cut, rng)
        out = np.asarray(generate_fn(probe, m, seed))
        if out.shape != base.shape:
            return GuardReport(False, trial + 1, (trial, 0, "shape"))
        if not np.array_equal(base[:, :cut], out[:, :cut]):
            where = np.argwhere(base[:, :cut] != out[:, :cut])[0]
            return GuardReport(False, trial + 1,
                               (trial, int(where[1]), names[int(where[2])]))
    return GuardReport(True, trials)


# -- subprocess protocol ----------------------------------------------------------

REQUEST_FILENAME = "request.json"
SPEAKER_FILENAME = "speaker.bin"
SPEAKER_AUDIO_FILENAME = "speaker_audio.bin"


def _gamma_schedule(t: int, window_w: int) -> list[int]:
    marks = list(range(window_w, t, window_w))
    marks.append(t)
    return marks


def run_subprocess_generator(command: Sequence[str] | str,
                             speaker: SpeakerBehaviour,
                             m: int = DEFAULT_M, seed: int = 0,
                             mode: str = "offline",
                             window_w: int = DEFAULT_WINDOW,
                             workdir: str | Path | None = None,
                             timeout: float = 60.0,
                             assignment_id: str | None = None) -> GenerationSet:
    """Invoke an external generator over the file protocol.

    The harness writes the speaker clip (binary sequence format, plus an
    audio matrix when present) and a JSON request record, then runs::

        <command> <speaker.bin> <request.json> <output_dir>

    The generator must write candidate_000.bin .. candidate_{M-1}.bin into
    the output directory and exit 0. Crashes, timeouts and malformed output
    raise distinct errors.
    """
    if isinstance(command, str):
        command = shlex.split(command)
    command = list(command)
    if not command:
        raise DataError("empty generator command")

    with tempfile.TemporaryDirectory(dir=workdir, prefix="mafrg-gen-") as tmp:
        tmp = Path(tmp)
        speaker_path = tmp / SPEAKER_FILENAME
        write_matrix_binary(speaker_path, speaker.facial.frames)
        audio_name = None
        if speaker.audio is not None:
            audio_name = SPEAKER_AUDIO_FILENAME
            write_matrix_binary(tmp / audio_name, speaker.audio)
        outdir = tmp / "out"
        outdir.mkdir()
        request = {
            "mode": mode,
            "m": m,
            "seed": seed,
            "window_w": window_w,
            "frames": speaker.n_frames,
            "channels": DEFAULT_SCHEMA.n_channels,
            "audio_dim": 0 if speaker.audio is None else speaker.audio.shape[1],
            "speaker": SPEAKER_FILENAME,
            "speaker_audio": audio_name,
            "gamma_schedule": _gamma_schedule(speaker.n_frames, window_w)
            if mode == "online" else None,
        }
        request_path = tmp / REQUEST_FILENAME
        request_path.write_text(json.dumps(request, indent=2) + "\n", encoding="utf-8")

        argv = command + [str(speaker_path), str(request_path), str(outdir)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            raise GeneratorTimeout(
                f"generator {command[0]!r} exceeded {timeout:g}s") from None
        except OSError as exc:
            raise GeneratorCrash(f"cannot run generator {command[0]!r}: {exc}") from None
        if proc.returncode != 0:
            tail = (proc.stderr or proc.stdout or "").strip().splitlines()[-5:]
            raise GeneratorCrash(
                f"generator {command[0]!r} exited with {proc.returncode}: "
                f"{' | '.join(tail) if tail else 'no output'}")

        candidates = []
        for i in range(m):
            path = outdir / candidate_filename(i)
            if not path.exists():
                raise GeneratorError(f"generator wrote no {path.name}")
            seq = read_sequence_binary(path, clip_id=f"{speaker.clip_id}/gen{i:02d}")
            candidates.append(seq)
        out = np.stack([c.frames for c in candidates])
    return _as_candidates(out, speaker, m, command[0], mode, seed, assignment_id)


def subprocess_sequence_fn(command: Sequence[str] | str, mode: str = "online",
                           window_w: int = DEFAULT_WINDOW,
                           timeout: float = 60.0) -> GenerateFn:
    """Black-box guard adapter for an external generator command."""

    def fn(speaker: SpeakerBehaviour, m: int, seed: int) -> np.ndarray:
        gs = run_subprocess_generator(command, speaker, m, seed, mode=mode,
                                      window_w=window_w, timeout=timeout)
        return gs.stacked()

    return fn
