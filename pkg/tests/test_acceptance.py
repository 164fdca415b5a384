"""Shipping criteria, one test per criterion, each printing a pass/fail line.

Criterion 10's speedup clause needs at least 8 physical cores to be
measurable; on smaller hosts it fails with the measured core count in the
message (wall-clock speedup of CPU-bound process pools is capped at ~#cores).
"""

import math
import os
import time

import numpy as np
import pytest

from helpers import build_assignments, dtw_bruteforce, gt_store, self_map
from mafrg.datapipe import _synth_stream, clip_hours
from mafrg.evaluation import MetricConfig, evaluate_assignments
from mafrg.generators import (
    ReactionGenerator,
    b_mean_fr,
    b_mean_seq,
    b_mime,
    b_random,
    causal_guard_check,
    full_sequence_fn,
    gt_passthrough,
    make_rng,
    run_offline,
)
from mafrg.report import format_metric, write_leaderboard_csv
from mafrg.schema import GenerationSet, ReactionSequence, SpeakerBehaviour
from mafrg.seqio import quantize_f32
from mafrg.seqmetrics import DtwConfig, GaussianSummary, ccc, dtw, frechet_distance
from mafrg.evaluation import fr_syn

CFG = MetricConfig(max_lag=49, dtw=DtwConfig(band_radius=75))


def _criterion(num, desc, ok, detail=""):
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[acceptance] criterion {num:>3} {tag}: {desc}{suffix}")
    assert ok, f"criterion {num}: {desc}{suffix}"


@pytest.fixture(scope="module")
def world():
    """20 clip pairs at challenge scale (T=750), self-inclusive map."""
    assignments = build_assignments(20, 750, seed=101, lag=3)
    return assignments, self_map(assignments), gt_store(assignments)


def _evaluate(assignments, amap, gens, name, workers=1):
    return evaluate_assignments(assignments, amap, gens, CFG, workers=workers,
                                method_name=name)


def _submission(assignments, factory):
    return {a.assignment_id: factory(a) for a in assignments}


@pytest.fixture(scope="module")
def gt_row(world):
    assignments, amap, _ = world
    gens = _submission(assignments, lambda a: gt_passthrough(a, m=1))
    return _evaluate(assignments, amap, gens, "gt")[0]


def test_criterion_01_random_baseline_reproduction(world):
    assignments, amap, _ = world
    start = time.perf_counter()
    gens = _submission(
        assignments, lambda a: b_random(a.speaker, m=10, seed=202,
                                        assignment_id=a.assignment_id))
    row, _ = _evaluate(assignments, amap, gens, "b_random")
    elapsed = time.perf_counter() - start
    ok = (abs(row.fr_var - 0.0833) <= 0.003
          and abs(row.fr_div - 0.1667) <= 0.005
          and abs(row.fr_dvs - 0.1667) <= 0.005
          and elapsed < 30.0)
    _criterion(1, "uniform random baseline reproduces the analytic diversity row",
               ok,
               f"FRVar={row.fr_var:.4f} FRDiv={row.fr_div:.4f} "
               f"FRDvs={row.fr_dvs:.4f} runtime={elapsed:.1f}s")


def test_criterion_02_degenerate_baselines(world):
    assignments, amap, _ = world
    # training reactions whose frame-wise mean is exactly constant
    train = [ReactionSequence(f"train{i}", np.full((750, 25), v))
             for i, v in enumerate((0.2, 0.4, 0.3, 0.5))]
    rows = {}
    for name, gen in (("b_mean_seq", b_mean_seq(train)), ("b_mean_fr", b_mean_fr(train))):
        gens = _submission(
            assignments,
            lambda a, g=gen: run_offline(g, a.speaker, m=10,
                                         assignment_id=a.assignment_id))
        rows[name], _ = _evaluate(assignments, amap, gens, name)
    zeros_ok = all(
        rows[n].fr_div == 0.0 and rows[n].fr_var == 0.0 and rows[n].fr_dvs == 0.0
        for n in rows)
    syn_ok = rows["b_mean_fr"].fr_syn == 49.0 \
        and format_metric("FRSyn", rows["b_mean_fr"].fr_syn) == "49.00"
    _criterion(2, "mean baselines collapse to exact-zero diversity and "
                  "frame-constant output saturates synchrony", zeros_ok and syn_ok,
               f"divs={[rows[n].fr_div for n in rows]} "
               f"vars={[rows[n].fr_var for n in rows]} "
               f"dvs={[rows[n].fr_dvs for n in rows]} "
               f"mean_fr FRSyn={rows['b_mean_fr'].fr_syn}")


def test_criterion_03_mime_identity(world, gt_row):
    assignments, amap, _ = world
    gens = _submission(
        assignments, lambda a: b_mime(a.speaker, m=10,
                                      assignment_id=a.assignment_id))
    mime_row, _ = _evaluate(assignments, amap, gens, "b_mime")
    ok = (abs(mime_row.fr_var - gt_row.fr_var) <= 1e-9
          and abs(mime_row.fr_dvs - gt_row.fr_dvs) <= 1e-9
          and mime_row.fr_div == 0.0)
    _criterion(3, "mime diversity equals the ground-truth row under dual role "
                  "enumeration", ok,
               f"FRVar {mime_row.fr_var:.10f} vs {gt_row.fr_var:.10f}, "
               f"FRDvs {mime_row.fr_dvs:.10f} vs {gt_row.fr_dvs:.10f}")


def test_criterion_04_gt_self_evaluation(gt_row):
    ok = (gt_row.fr_dist == 0.0
          and gt_row.fr_div == 0.0
          and format_metric("FRDist", gt_row.fr_dist) == "0.00"
          and format_metric("FRDiv", gt_row.fr_div) == "0.0000")
    _criterion(4, "ground truth with a self-inclusive map scores zero distance "
                  "and diversity", ok,
               f"FRDist={gt_row.fr_dist} FRDiv={gt_row.fr_div}")


def test_criterion_05_dtw_bruteforce_oracle():
    rng = np.random.default_rng(505)
    full = DtwConfig(band_radius=None)
    worst = 0.0
    for _ in range(500):
        ta, tb = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        c = int(rng.integers(1, 4))
        a, b = rng.random((ta, c)), rng.random((tb, c))
        worst = max(worst, abs(dtw(a, b, full) - dtw_bruteforce(a, b)))
    _criterion(5, "full-matrix DTW matches brute-force path enumeration on 500 "
                  "random pairs", worst <= 1e-9, f"max |diff|={worst:.2e}")


def test_criterion_06_ccc_and_frechet_closed_forms():
    ccc_ok = (abs(ccc([0, 1, 2], [2, 1, 0]) - (-1.0)) <= 1e-9
              and abs(ccc([1, 2, 3, 4], [2, 3, 4, 5]) - 2.5 / 3.5) <= 1e-9
              and ccc(np.arange(5.0), np.arange(5.0)) == 1.0)
    rng = np.random.default_rng(606)
    worst = 0.0
    for _ in range(100):
        mu1, mu2 = rng.normal(size=2)
        v1, v2 = rng.uniform(0.05, 4.0, size=2)
        expected = (mu1 - mu2) ** 2 + (math.sqrt(v1) - math.sqrt(v2)) ** 2
        got = frechet_distance(GaussianSummary(np.array([mu1]), np.array([[v1]]), 2),
                               GaussianSummary(np.array([mu2]), np.array([[v2]]), 2))
        worst = max(worst, abs(got - expected))
    _criterion(6, "CCC worked examples and the 1-D Fréchet closed form hold",
               ccc_ok and worst <= 1e-8, f"max frechet |diff|={worst:.2e}")


def test_criterion_07_synchrony_recovery():
    frames = quantize_f32(_synth_stream(make_rng(707, "c7"), 750, noise=0.0))
    speaker = SpeakerBehaviour(clip_id="c7", facial=ReactionSequence("c7", frames))

    def candidate(stack):
        return GenerationSet(assignment_id="c7",
                             candidates=(ReactionSequence("c7/gen", stack),))

    recovered = []
    for k in range(21):
        shifted = np.empty_like(frames)
        shifted[:k] = frames[0]
        shifted[k:] = frames[: frames.shape[0] - k]
        recovered.append(fr_syn(candidate(shifted), speaker, CFG))
    exact = all(v == float(k) for k, v in enumerate(recovered))
    saturated = fr_syn(candidate(np.full_like(frames, 0.25)), speaker, CFG) == 49.0
    _criterion(7, "planted lags 0..20 are recovered exactly and constant "
                  "candidates saturate at max_lag", exact and saturated,
               f"recovered={recovered[:6]}... saturation={saturated}")


class _ReverseGenerator(ReactionGenerator):
    name = "reverse"

    def offline(self, speaker, m, rng):
        return np.repeat(speaker.facial.frames[::-1][None], m, axis=0)


def test_criterion_08_causality_guard(world):
    assignments, _, _ = world
    speaker = assignments[0].speaker
    train = [a.listener_gt for a in assignments[:4]]
    results = {}
    for name, gen in (("b_random", None), ("b_mime", None),
                      ("b_mean_seq", b_mean_seq(train)), ("b_mean_fr", b_mean_fr(train))):
        if gen is None:
            from mafrg.generators import builtin_generator
            gen = builtin_generator(name)
        fn = full_sequence_fn(gen, mode="online")
        results[name] = causal_guard_check(fn, speaker, m=2, seed=8, trials=50)
    adversarial = causal_guard_check(full_sequence_fn(_ReverseGenerator(), "offline"),
                                     speaker, m=1, seed=8, trials=50)
    ok = all(r.passed for r in results.values()) and not adversarial.passed
    _criterion(8, "all naive baselines pass 50 guard trials and the acausal "
                  "generator is caught", ok,
               f"violation at trial {adversarial.first_violation}")


def test_criterion_09_determinism_and_parallel_equivalence(tmp_path):
    assignments = build_assignments(6, 750, seed=33, lag=2)
    amap = self_map(assignments)
    ok = True
    details = []
    for seed in (1, 2, 3):
        gens = _submission(
            assignments, lambda a: b_random(a.speaker, m=4, seed=seed,
                                            assignment_id=a.assignment_id))
        rows = {}
        blobs = {}
        for workers in (1, 8):
            row, _ = _evaluate(assignments, amap, gens, "b_random", workers=workers)
            path = tmp_path / f"lb_s{seed}_w{workers}.csv"
            write_leaderboard_csv(path, [row])
            rows[workers] = row
            blobs[workers] = path.read_bytes()
        same = blobs[1] == blobs[8] and rows[1] == rows[8]
        ok = ok and same
        details.append(f"seed {seed}: {'identical' if same else 'DIFFERENT'}")
    _criterion(9, "1-worker and 8-worker evaluations are byte-identical across "
                  "3 seeds", ok, "; ".join(details))


@pytest.fixture(scope="module")
def throughput_times():
    assignments = build_assignments(50, 750, seed=1010, lag=3)
    amap = self_map(assignments)
    gens = _submission(
        assignments, lambda a: b_random(a.speaker, m=10, seed=77,
                                        assignment_id=a.assignment_id))
    times = {}
    rows = {}
    for workers in (1, 8):
        start = time.perf_counter()
        rows[workers], _ = _evaluate(assignments, amap, gens, "b_random",
                                     workers=workers)
        times[workers] = time.perf_counter() - start
    assert rows[1] == rows[8]
    return times


def test_criterion_10a_throughput_single_core(throughput_times):
    t1 = throughput_times[1]
    _criterion("10a", "full 7-metric evaluation of 100 assignments finishes "
                      "in under 120 s on one worker", t1 < 120.0, f"{t1:.1f}s")


def test_criterion_10b_speedup_to_8_workers(throughput_times):
    t1, t8 = throughput_times[1], throughput_times[8]
    speedup = t1 / t8
    _criterion("10b", "8-worker evaluation achieves >= 5x speedup over 1 worker",
               speedup >= 5.0,
               f"measured {speedup:.2f}x ({t1:.1f}s -> {t8:.1f}s) on "
               f"os.cpu_count()={os.cpu_count()} cores; 5x needs >= 8 cores")


def test_criterion_11_manifest_hours_arithmetic():
    cases = {1585: "13.2", 1030: "8.6", 9: "0.1"}
    got = {n: f"{clip_hours(n):.1f}" for n in cases}
    _criterion(11, "clip counts convert to hours under the 30 s/clip rule",
               got == cases, f"{got}")
