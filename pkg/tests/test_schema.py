import numpy as np
import pytest

from mafrg.errors import DataError
from mafrg.schema import (
    AppropriatenessMap,
    ChannelSchema,
    ClipPair,
    DatasetManifest,
    GenerationSet,
    ManifestClip,
    Participant,
    ReactionSequence,
    SpeakerBehaviour,
    enumerate_assignments,
    validate_sequence,
)


def seq(frames, clip_id="c"):
    return ReactionSequence(clip_id=clip_id, frames=frames)


def behaviour(frames, clip_id="c"):
    return SpeakerBehaviour(clip_id=clip_id, facial=seq(frames, clip_id))


def make_pair(pair_id, t=4, sa="s1", sb="s2"):
    return ClipPair(
        pair_id=pair_id,
        participant_a=Participant(sa, behaviour(np.zeros((t, 25)), f"{pair_id}_a")),
        participant_b=Participant(sb, behaviour(np.zeros((t, 25)), f"{pair_id}_b")),
    )


class TestChannelSchema:
    def test_default_layout(self):
        schema = ChannelSchema()
        assert schema.n_channels == 25
        assert schema.names[0] == "AU1"
        assert schema.names[14] == "AU26"
        assert schema.names[15] == "Neutral"
        assert schema.names[23] == "valence"
        assert schema.names[24] == "arousal"
        assert schema.channel_range(0) == (0.0, 1.0)
        assert schema.channel_range(23) == (-1.0, 1.0)

    def test_rejects_wrong_au_set(self):
        with pytest.raises(DataError):
            ChannelSchema(au_names=("AU1",) * 15)


class TestValidateSequence:
    def test_all_zeros_valid(self):
        report = validate_sequence(seq(np.zeros((750, 25))))
        assert report.ok

    def test_range_violation_coordinates(self):
        frames = np.zeros((750, 25))
        frames[3, 23] = 1.5
        report = validate_sequence(seq(frames))
        assert len(report.violations) == 1
        v = report.violations[0]
        assert (v.kind, v.frame, v.channel) == ("range", 3, "valence")

    def test_frame_count_violation(self):
        report = validate_sequence(seq(np.zeros((749, 25))))
        assert len(report.violations) == 1
        assert report.violations[0].kind == "frame_count"

    def test_synthetic_mode_allows_other_lengths(self):
        assert validate_sequence(seq(np.zeros((10, 25))), expected_frames=None).ok
        assert validate_sequence(seq(np.zeros((10, 25))), expected_frames=10).ok

    def test_nonfinite_reported(self):
        frames = np.zeros((750, 25))
        frames[5, 2] = np.nan
        frames[6, 24] = np.inf
        report = validate_sequence(seq(frames))
        kinds = sorted(v.kind for v in report.violations)
        assert kinds == ["nonfinite", "nonfinite"]

    def test_wrong_width_short_circuits(self):
        report = validate_sequence(seq(np.zeros((750, 24))))
        assert [v.kind for v in report.violations] == ["shape"]

    def test_reports_every_cell(self):
        frames = np.zeros((750, 25))
        frames[:4, 0] = -0.5
        report = validate_sequence(seq(frames))
        assert len(report.violations) == 4


class TestSequenceTypes:
    def test_frames_are_immutable(self):
        s = seq(np.zeros((5, 25)))
        with pytest.raises(ValueError):
            s.frames[0, 0] = 1.0

    def test_audio_frame_mismatch(self):
        with pytest.raises(DataError):
            SpeakerBehaviour(clip_id="c", facial=seq(np.zeros((5, 25))),
                             audio=np.zeros((4, 8)))

    def test_pair_rejects_same_subject(self):
        with pytest.raises(DataError):
            make_pair("p", sa="x", sb="x")

    def test_pair_rejects_unequal_lengths(self):
        with pytest.raises(DataError):
            ClipPair(pair_id="p",
                     participant_a=Participant("a", behaviour(np.zeros((4, 25)))),
                     participant_b=Participant("b", behaviour(np.zeros((5, 25)))))


class TestEnumerateAssignments:
    def test_one_pair_two_assignments(self):
        out = enumerate_assignments([make_pair("p0")])
        assert [a.assignment_id for a in out] == ["p0_A", "p0_B"]
        assert out[0].speaker_subject == "s1"
        assert out[0].listener_subject == "s2"
        assert out[1].speaker_subject == "s2"

    def test_empty(self):
        assert enumerate_assignments([]) == []

    def test_count_scales_two_per_pair(self):
        pairs = [make_pair(f"p{i:04d}", t=2) for i in range(797)]
        assert len(enumerate_assignments(pairs)) == 1594

    def test_duplicate_pair_id_rejected(self):
        with pytest.raises(DataError):
            enumerate_assignments([make_pair("p"), make_pair("p")])

    def test_role_swap_gives_same_speaker_listener_multiset(self):
        rng = np.random.default_rng(5)
        fa, fb = rng.random((6, 25)), rng.random((6, 25))
        pair = ClipPair(pair_id="p",
                        participant_a=Participant("a", behaviour(fa, "pa")),
                        participant_b=Participant("b", behaviour(fb, "pb")))
        swapped = ClipPair(pair_id="p",
                           participant_a=Participant("b", behaviour(fb, "pb")),
                           participant_b=Participant("a", behaviour(fa, "pa")))

        def signature(assignments):
            return sorted(
                (a.speaker_subject, a.listener_subject,
                 a.speaker.facial.frames.tobytes(), a.listener_gt.frames.tobytes())
                for a in assignments)

        assert signature(enumerate_assignments([pair])) == \
            signature(enumerate_assignments([swapped]))


class TestAppropriatenessMap:
    def test_requires_self_inclusion(self):
        with pytest.raises(DataError):
            AppropriatenessMap({"a": ("b",)})

    def test_requires_nonempty(self):
        with pytest.raises(DataError):
            AppropriatenessMap({"a": ()})

    def test_missing_entry(self):
        amap = AppropriatenessMap({"a": ("a",)})
        with pytest.raises(DataError):
            amap.neighbors("b")

    def test_check_ids(self):
        amap = AppropriatenessMap({"a": ("a", "b"), "b": ("b",)})
        amap.check_ids(["a", "b"])
        with pytest.raises(DataError, match="unknown assignment ids"):
            amap.check_ids(["a"])


class TestGenerationSet:
    def test_requires_candidates(self):
        with pytest.raises(DataError):
            GenerationSet(assignment_id="a", candidates=())

    def test_rejects_mixed_shapes(self):
        with pytest.raises(DataError):
            GenerationSet(assignment_id="a",
                          candidates=(seq(np.zeros((4, 25))), seq(np.zeros((5, 25)))))

    def test_stacked_shape(self):
        gs = GenerationSet(assignment_id="a",
                           candidates=tuple(seq(np.zeros((4, 25))) for _ in range(3)))
        assert gs.stacked().shape == (3, 4, 25)
        assert gs.m == 3


class TestDatasetManifest:
    def clip(self, pair_id, sa, sb, split):
        return ManifestClip(pair_id=pair_id, session_id="s", subject_a=sa, subject_b=sb,
                            corpus="Synthetic", language="en", split=split,
                            facial_a="a.bin", facial_b="b.bin")

    def test_subject_disjoint_splits_enforced(self):
        with pytest.raises(DataError, match="subject-independent"):
            DatasetManifest(clips=(self.clip("p0", "x", "y", "train"),
                                   self.clip("p1", "x", "z", "val")))

    def test_split_filter(self):
        manifest = DatasetManifest(clips=(self.clip("p0", "x", "y", "train"),
                                          self.clip("p1", "u", "v", "val")))
        assert [c.pair_id for c in manifest.clips_for_split("val")] == ["p1"]
        assert manifest.subjects() == {"x", "y", "u", "v"}
        with pytest.raises(DataError):
            manifest.clips_for_split("nope")
