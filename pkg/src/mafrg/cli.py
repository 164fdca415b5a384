"""Command-line orchestration: synth, segment, split, map, generate,
evaluate, report, guard, stats.

Configuration precedence: flags > environment variables (prefix MAFRG_,
e.g. MAFRG_EVALUATE_WORKERS) > --config JSON file > defaults. Exit codes:
0 success, 1 usage error, 2 validation/data error, 3 causality violation.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .datapipe import (
    SynthSpec,
    apply_split,
    build_appropriateness_map,
    format_stats,
    plan_split,
    segment_dataset,
    synth_dataset,
)
from .errors import CausalityViolation, DataError, MafrgError
from .evaluation import MetricConfig, evaluate_assignments
from .generators import (
    BASELINE_NAMES,
    GeneratorContract,
    builtin_generator,
    causal_guard_check,
    full_sequence_fn,
    gt_passthrough,
    make_rng,
    run_generator,
    subprocess_sequence_fn,
)
from .report import (
    leaderboard_markdown,
    merge_leaderboards,
    write_clip_scores_csv,
    write_leaderboard_csv,
    write_leaderboard_markdown,
    write_metric_charts,
)
from .schema import SPLITS, AppropriatenessMap, enumerate_assignments, validate_sequence
from .seqio import (
    candidate_filename,
    load_clip_pair,
    read_manifest,
    read_map,
    read_submission,
    read_submission_meta,
    write_map,
    write_manifest,
    write_submission,
)
from .seqmetrics import DtwConfig


def _band_radius(value: int) -> int | None:
    return None if value < 0 else value


def _load_assignments(manifest, split):
    clips = manifest.clips_for_split(split)
    if not clips:
        raise DataError(f"manifest has no clips in split {split!r}")
    pairs = [load_clip_pair(manifest, c) for c in clips]
    return enumerate_assignments(pairs)


def _train_reactions(manifest):
    return [a.listener_gt for a in _load_assignments(manifest, "train")]


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file of per-command option defaults.")
@click.pass_context
def cli(ctx, config):
    """Evaluation harness for multiple appropriate facial reaction generation."""
    if config:
        with open(config, "r", encoding="utf-8") as fh:
            ctx.default_map = json.load(fh)


@cli.command("synth")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--sessions", "n_sessions", default=10, show_default=True)
@click.option("--frames", default=750, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--lag", default=0, show_default=True,
              help="Frames by which listener streams trail speaker streams.")
@click.option("--duplicates", default=0, show_default=True,
              help="Sessions that reuse an earlier speaker stream byte-for-byte.")
@click.option("--noise", default=0.02, show_default=True)
@click.option("--audio-dim", default=0, show_default=True)
@click.option("--csv", "write_csv", is_flag=True, help="Also write CSV sequences.")
def cmd_synth(out, n_sessions, frames, seed, lag, duplicates, noise, audio_dim, write_csv):
    """Write a synthetic sessions dataset for desk-scale runs."""
    spec = SynthSpec(n_sessions=n_sessions, frames=frames, seed=seed, lag=lag,
                     duplicate_sessions=duplicates, noise=noise,
                     audio_dim=audio_dim, write_csv=write_csv)
    path = synth_dataset(out, spec)
    click.echo(f"wrote {n_sessions} sessions to {path}")


@cli.command("segment")
@click.option("--sessions", "sessions_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--frames", default=750, show_default=True,
              help="Frames per clip window; trailing remainders are dropped.")
def cmd_segment(sessions_path, out, frames):
    """Cut sessions into fixed-length clip pairs and write a manifest."""
    manifest_path = segment_dataset(sessions_path, out, frames_per_clip=frames)
    manifest = read_manifest(manifest_path)
    click.echo(f"wrote {len(manifest.clips)} clips to {manifest_path}")


@cli.command("split")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ratios", default="0.6,0.2,0.2", show_default=True,
              help="train,val,test clip-count ratios.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_split(manifest_path, ratios, seed, out):
    """Plan a subject-independent split and rewrite the manifest."""
    manifest = read_manifest(manifest_path)
    try:
        parts = [float(tok) for tok in ratios.split(",")]
    except ValueError:
        raise click.UsageError(f"cannot parse ratios {ratios!r}")
    if len(parts) != len(SPLITS):
        raise click.UsageError(f"need {len(SPLITS)} ratios (train,val,test), got {len(parts)}")
    plan = plan_split(manifest.clips, dict(zip(SPLITS, parts)), seed=seed)
    for warning in plan.warnings:
        click.echo(f"warning: {warning}", err=True)
    updated = apply_split(manifest, plan)
    write_manifest(out, updated)
    counts = ", ".join(f"{s}={plan.clip_counts[s]}" for s in SPLITS)
    click.echo(f"wrote {out} ({counts})")


@cli.command("map")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice([*SPLITS, "all"]), default="all",
              show_default=True)
@click.option("--metric", type=click.Choice(["ccc_sum", "dtw"]), default="ccc_sum",
              show_default=True)
@click.option("--threshold", default=20.0, show_default=True,
              help="ccc_sum: link at channel-sum CCC >= threshold; "
                   "dtw: link at cost <= threshold.")
@click.option("--band-radius", default=75, show_default=True,
              help="Sakoe-Chiba radius for the dtw metric; -1 = full matrix.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def cmd_map(manifest_path, split, metric, threshold, band_radius, out):
    """Build an appropriateness map from speaker-behaviour similarity.

    Splits are mapped independently (no cross-split neighbors).
    """
    manifest = read_manifest(manifest_path)
    splits = SPLITS if split == "all" else (split,)
    entries = {}
    cfg = DtwConfig(band_radius=_band_radius(band_radius))
    for s in splits:
        if not manifest.clips_for_split(s):
            continue
        assignments = _load_assignments(manifest, s)
        amap = build_appropriateness_map(assignments, threshold, metric=metric,
                                         dtw_cfg=cfg)
        entries.update(amap.entries)
    if not entries:
        raise DataError("no assignments found for the requested split(s)")
    write_map(out, entries)
    sizes = [len(v) for v in entries.values()]
    click.echo(f"wrote {len(entries)} entries to {out} "
               f"(set sizes {min(sizes)}..{max(sizes)})")


@cli.command("generate")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", required=True,
              type=click.Choice([*BASELINE_NAMES, "gt"]))
@click.option("--split", type=click.Choice(SPLITS), default="val", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--m", "m_candidates", default=None, type=int,
              help="Candidates per assignment [default: 10; gt: 1].")
@click.option("--mode", type=click.Choice(["offline", "online"]), default="offline",
              show_default=True)
@click.option("--window-w", default=50, show_default=True,
              help="Speaker frames exposed per online step.")
@click.option("--distribution", type=click.Choice(["uniform", "gaussian"]),
              default="uniform", show_default=True, help="b_random sampler.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_generate(manifest_path, baseline, split, seed, m_candidates, mode,
                 window_w, distribution, out):
    """Run a naive baseline over a split and write a submission directory."""
    manifest = read_manifest(manifest_path)
    assignments = _load_assignments(manifest, split)
    m = m_candidates if m_candidates is not None else (1 if baseline == "gt" else 10)
    if m < 1:
        raise click.UsageError(f"--m must be >= 1, got {m}")

    gens = {}
    if baseline == "gt":
        for a in assignments:
            gens[a.assignment_id] = gt_passthrough(a, m=m)
    else:
        train = _train_reactions(manifest) if baseline in ("b_mean_seq", "b_mean_fr") \
            else None
        gen = builtin_generator(baseline, train_reactions=train, distribution=distribution)
        contract = GeneratorContract(name=baseline, mode=mode, m_candidates=m,
                                     window_w=window_w, seed=seed)
        for a in assignments:
            gens[a.assignment_id] = run_generator(gen, a.speaker, contract,
                                                  assignment_id=a.assignment_id)

    write_submission(out, gens, generator_name=baseline, mode=mode, seed=seed,
                     split=split)
    click.echo(f"wrote {len(gens)} generation sets to {out}")


@cli.command("evaluate")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--map", "map_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--submission", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", type=click.Choice(SPLITS), default="val", show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--max-lag", default=49, show_default=True)
@click.option("--band-radius", default=75, show_default=True,
              help="Sakoe-Chiba radius for DTW; -1 = full matrix.")
@click.option("--binarize-aus", default=None, type=float,
              help="Binarize candidate AU channels at this threshold.")
@click.option("--method", default=None, help="Leaderboard row name "
              "[default: the submission's generator name].")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_evaluate(manifest_path, map_path, submission, split, workers, max_lag,
                 band_radius, binarize_aus, method, out):
    """Score a submission and write leaderboard + per-clip files."""
    manifest = read_manifest(manifest_path)
    amap = AppropriatenessMap(read_map(map_path))
    assignments = _load_assignments(manifest, split)
    aids = [a.assignment_id for a in assignments]
    gens = read_submission(submission, assignment_ids=aids)

    expected_frames = manifest.frames
    problems = []
    for aid in sorted(gens):
        for i, cand in enumerate(gens[aid].candidates):
            report = validate_sequence(cand, expected_frames=expected_frames)
            if not report.ok:
                fname = Path(submission) / aid / candidate_filename(i)
                problems.append(f"{fname}: {report.summary(limit=3)}")
    if problems:
        raise DataError("submission failed validation:\n" + "\n".join(problems[:20]))

    meta = read_submission_meta(submission)
    cfg = MetricConfig(max_lag=max_lag,
                       dtw=DtwConfig(band_radius=_band_radius(band_radius)),
                       au_binarize_threshold=binarize_aus)
    row, scores = evaluate_assignments(
        assignments, amap, gens, cfg, workers=workers,
        method_name=method or meta.get("generator") or "submission")

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_leaderboard_csv(out / "leaderboard.csv", [row])
    write_leaderboard_markdown(out / "leaderboard.md", [row])
    write_clip_scores_csv(out / "per_clip.csv", scores)
    click.echo(leaderboard_markdown([row]), nl=False)


@cli.command("report")
@click.argument("leaderboards", nargs=-1, required=True,
                type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
def cmd_report(leaderboards, out):
    """Merge leaderboard files into one table plus per-metric SVG charts."""
    rows = merge_leaderboards(leaderboards)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_leaderboard_csv(out / "merged.csv", rows)
    write_leaderboard_markdown(out / "merged.md", rows)
    charts = write_metric_charts(rows, out)
    click.echo(leaderboard_markdown(rows), nl=False)
    click.echo(f"wrote {len(charts)} charts to {out}")


@cli.command("guard")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--split", type=click.Choice(SPLITS), default="val", show_default=True)
@click.option("--baseline", type=click.Choice(BASELINE_NAMES), default=None)
@click.option("--command", "gen_command", default=None,
              help="External generator command (speaker, request and output "
                   "paths are appended).")
@click.option("--clips", "n_clips", default=3, show_default=True,
              help="Assignments sampled for the check.")
@click.option("--trials", default=5, show_default=True)
@click.option("--m", "m_candidates", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--window-w", default=50, show_default=True)
@click.option("--timeout", default=60.0, show_default=True,
              help="Per-invocation budget for external generators (seconds).")
def cmd_guard(manifest_path, split, baseline, gen_command, n_clips, trials,
              m_candidates, seed, window_w, timeout):
    """Check the online causality contract over sampled clips."""
    if (baseline is None) == (gen_command is None):
        raise click.UsageError("pass exactly one of --baseline or --command")
    manifest = read_manifest(manifest_path)
    assignments = _load_assignments(manifest, split)
    rng = make_rng(seed, "guard-sample")
    picks = sorted(rng.choice(len(assignments), size=min(n_clips, len(assignments)),
                              replace=False).tolist())

    if baseline is not None:
        train = _train_reactions(manifest) if baseline in ("b_mean_seq", "b_mean_fr") \
            else None
        gen = builtin_generator(baseline, train_reactions=train)
        fn = full_sequence_fn(gen, mode="online", window_w=window_w)
        name = baseline
    else:
        fn = subprocess_sequence_fn(gen_command, mode="online", window_w=window_w,
                                    timeout=timeout)
        name = gen_command

    for idx in picks:
        a = assignments[idx]
        result = causal_guard_check(fn, a.speaker, m=m_candidates, seed=seed,
                                    trials=trials)
        result.raise_on_violation(name)
        click.echo(f"{a.assignment_id}: pass ({result.trials_run} trials)")
    click.echo(f"{name}: causality check passed on {len(picks)} clip(s)")


@cli.command("stats")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def cmd_stats(manifest_path):
    """Per-split clip counts and hours by corpus and language."""
    manifest = read_manifest(manifest_path)
    click.echo(format_stats(manifest))


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="MAFRG")
        return rv if isinstance(rv, int) else 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except CausalityViolation as exc:
        click.echo(f"causality violation: {exc}", err=True)
        return 3
    except MafrgError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
