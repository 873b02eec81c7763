"""Command line batch pipeline.

Stages write their outputs plus a completion marker into the working
directory; later stages refuse to run with an actionable message until their
prerequisites exist. Every stage is idempotent: re-running with unchanged
inputs and config rewrites byte-identical outputs (wall-clock timings go to
a separate file so they never perturb the data products).

    ingest     read the two input CSVs into sorted event logs
    partition  build the spatial grid and per-cell user partitions
    filter     run forward+reverse window scans per cell (parallelizable)
    link       evaluate candidate pairs, apply k-l thresholds, disambiguate
    evaluate   score against ground truth and emit metrics + curve files
    pipeline   all of the above in order
    generate   derive a shadow dataset + truth map from a base CSV
    oracle     brute-force reference linkage for small inputs
    make-base  synthesize a demo base dataset
    report     render figures from a finished run's outputs
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import linkage, metrics, oracle, report, spatial, synth, temporal
from .config import ConfigError, PipelineConfig, load_config_file
from .model import DatasetTag, Params
from .store import (
    UserEventIndex,
    load_csv,
    read_event_log,
    write_event_log,
    write_raw_csv,
)

__all__ = ["main"]


class StageError(RuntimeError):
    """A stage cannot run (missing prerequisite or broken state)."""


# ---------------------------------------------------------------------------
# Working-directory conventions.


def _marker_path(workdir: Path, stage: str) -> Path:
    return workdir / "markers" / f"{stage}.ok"


def _write_marker(workdir: Path, stage: str, cfg: PipelineConfig) -> None:
    digest = hashlib.sha256(cfg.echo().encode("utf-8")).hexdigest()[:16]
    path = _marker_path(workdir, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"stage={stage}\nconfig={digest}\n")


def _require_marker(workdir: Path, stage: str, needed_by: str) -> None:
    if not _marker_path(workdir, stage).exists():
        raise StageError(
            f"stage '{needed_by}' needs the output of stage '{stage}' "
            f"in {workdir}; run `geolink {stage}` first"
        )


def _record_timing(workdir: Path, stage: str, seconds: float) -> None:
    path = workdir / "timings.kv"
    entries: dict[str, str] = {}
    if path.exists():
        for line in path.read_text().splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                entries[key] = value
    entries[f"{stage}_seconds"] = f"{seconds:.3f}"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={entries[k]}\n" for k in sorted(entries)))


def _echo_config(workdir: Path, cfg: PipelineConfig) -> None:
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "config.echo").write_text(cfg.echo())


# ---------------------------------------------------------------------------
# Stages.


def run_ingest(cfg: PipelineConfig) -> None:
    if not cfg.input_i or not cfg.input_e:
        raise ConfigError("ingest needs --input-i and --input-e")
    workdir = Path(cfg.workdir)
    params = cfg.to_params()
    _echo_config(workdir, cfg)
    started = time.perf_counter()
    report_lines = []
    for flag, path, tag in (("input_i", cfg.input_i, DatasetTag.I), ("input_e", cfg.input_e, DatasetTag.E)):
        if not Path(path).exists():
            raise ConfigError(f"{flag}: no such file: {path}")
        log, rpt = load_csv(path, tag, params, cfg.radius_default_m)
        write_event_log(log, workdir / "logs" / f"{tag.value}.tsv")
        report_lines.append(f"{tag.value}.rows_read={rpt.rows_read}")
        report_lines.append(f"{tag.value}.rows_rejected={rpt.rows_rejected}")
        report_lines.append(f"{tag.value}.events={rpt.events_emitted}")
        report_lines.append(f"{tag.value}.period_rows_expanded={rpt.period_rows_expanded}")
        for diag in rpt.diagnostics:
            print(f"[ingest {tag.value}] {diag}", file=sys.stderr)
    (workdir / "ingest.kv").write_text("".join(line + "\n" for line in sorted(report_lines)))
    _write_marker(workdir, "ingest", cfg)
    _record_timing(workdir, "ingest", time.perf_counter() - started)


def run_partition(cfg: PipelineConfig) -> None:
    workdir = Path(cfg.workdir)
    _require_marker(workdir, "ingest", "partition")
    params = cfg.to_params()
    started = time.perf_counter()
    log_i = read_event_log(workdir / "logs" / "I.tsv", DatasetTag.I)
    log_e = read_event_log(workdir / "logs" / "E.tsv", DatasetTag.E)
    if not log_i.events and not log_e.events:
        raise StageError("both event logs are empty; nothing to partition")
    tree = spatial.build_grid(list(log_i.events) + list(log_e.events), params.min_cell_edge)
    diagnostics: dict[str, int] = {}
    counts = spatial.count_user_cells(tree, (log_i, log_e), params.strip_fraction, diagnostics)
    assignment = spatial.dominating_grids(counts, params.tie_epsilon)
    partitions = spatial.partition_datasets(log_i, log_e, assignment)
    for cell, (part_i, part_e) in partitions.items():
        write_event_log(part_i, workdir / cell / "I.tsv")
        write_event_log(part_e, workdir / cell / "E.tsv")
    spatial.write_manifest(workdir / "partitions.json", tree, assignment, partitions, params, diagnostics)
    with open(workdir / "assignment.tsv", "w") as fh:
        for user in sorted(assignment):
            fh.write(f"{user}\t{','.join(sorted(assignment[user]))}\n")
    _write_marker(workdir, "partition", cfg)
    _record_timing(workdir, "partition", time.perf_counter() - started)


def _scan_cell(task: tuple[str, str, Params, bool]) -> None:
    """Worker: scan one cell's partition; writes index, candidates, stats."""
    workdir_s, cell, params, forward_only = task
    cell_dir = Path(workdir_s) / cell
    log_i = read_event_log(cell_dir / "I.tsv", DatasetTag.I)
    log_e = read_event_log(cell_dir / "E.tsv", DatasetTag.E)
    stats = temporal.ScanStats()
    idx = UserEventIndex(cell_dir)
    cs = temporal.forward_scan(log_i, log_e, params, idx, stats)
    if not forward_only:
        temporal.reverse_scan(log_i, log_e, cs, params, stats)
    with open(cell_dir / "candidates.tsv", "w") as fh:
        fh.write("user_x\tuser_y\tadmitted_at\talibi_count\n")
        for pair in cs.pairs():
            fh.write(
                f"{pair[0]}\t{pair[1]}\t{cs.admitted_at[pair]}\t{cs.alibi_count(pair)}\n"
            )
    stats.write(cell_dir / "scanstats.json")


def _partition_cells(workdir: Path) -> list[str]:
    manifest = spatial.read_manifest(workdir / "partitions.json")
    return [entry["cell"] for entry in manifest["cells"]]


def run_filter(cfg: PipelineConfig) -> None:
    workdir = Path(cfg.workdir)
    _require_marker(workdir, "partition", "filter")
    params = cfg.to_params()
    started = time.perf_counter()
    cells = _partition_cells(workdir)
    tasks = [(str(workdir), cell, params, cfg.forward_only) for cell in cells]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(_scan_cell, tasks))
    else:
        for task in tasks:
            _scan_cell(task)
    _write_marker(workdir, "filter", cfg)
    _record_timing(workdir, "filter", time.perf_counter() - started)


def _read_candidates(cell_dir: Path) -> list[tuple[str, str, int, int]]:
    out = []
    with open(cell_dir / "candidates.tsv") as fh:
        header = fh.readline()
        del header
        for line in fh:
            user_x, user_y, admitted, alibi = line.rstrip("\n").split("\t")
            out.append((user_x, user_y, int(admitted), int(alibi)))
    return out


def _evaluate_cell(task: tuple[str, str, list[tuple[str, str]], Params, bool]) -> list[tuple[str, str, str, int]]:
    """Worker: greedy-evaluate this cell's share of the candidate pairs."""
    workdir_s, cell, pairs, params, weighted = task
    idx = UserEventIndex.open(Path(workdir_s) / cell)
    cache: dict[str, list] = {}
    rows = []
    for user_x, user_y in pairs:
        x_events = cache.get(user_x)
        if x_events is None:
            x_events = cache[user_x] = list(idx.scan_user(user_x))
        y_events = cache.get(user_y)
        if y_events is None:
            y_events = cache[user_y] = list(idx.scan_user(user_y))
        evaluation = linkage.evaluate_pair(x_events, y_events, params, weighted=weighted)
        rows.append((user_x, user_y, str(evaluation.k_value), evaluation.l_value))
    return rows


def run_link(cfg: PipelineConfig) -> None:
    workdir = Path(cfg.workdir)
    _require_marker(workdir, "filter", "link")
    params = cfg.to_params()
    started = time.perf_counter()
    cells = _partition_cells(workdir)

    # A pair straddling several cells is evaluated once, in the first cell.
    pair_cell: dict[tuple[str, str], str] = {}
    for cell in sorted(cells):
        for user_x, user_y, _, _ in _read_candidates(workdir / cell):
            pair_cell.setdefault((user_x, user_y), cell)
    by_cell: dict[str, list[tuple[str, str]]] = {}
    for pair, cell in sorted(pair_cell.items()):
        by_cell.setdefault(cell, []).append(pair)

    tasks = [
        (str(workdir), cell, pairs, params, not cfg.unweighted)
        for cell, pairs in sorted(by_cell.items())
    ]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows_lists = list(pool.map(_evaluate_cell, tasks))
    else:
        rows_lists = [_evaluate_cell(task) for task in tasks]
    rows = sorted(row for rows in rows_lists for row in rows)

    threshold_k = params.k_threshold
    threshold_l = params.l
    if cfg.auto_kl:
        if len(rows) < 3:
            raise StageError(f"--auto-kl needs at least 3 evaluated pairs, got {len(rows)}")
        k_curve = sorted((Fraction(k) for _, _, k, _ in rows), reverse=True)
        l_curve = sorted((l for _, _, _, l in rows), reverse=True)
        _, threshold_k = linkage.elbow(k_curve)
        _, threshold_l = linkage.elbow(l_curve)
        threshold_l = max(1, int(threshold_l))
        threshold_k = max(Fraction(threshold_k), Fraction(threshold_l))

    with open(workdir / "evaluations.tsv", "w") as fh:
        fh.write("user_x\tuser_y\tk_value\tl_value\n")
        for user_x, user_y, k_str, l_value in rows:
            fh.write(f"{user_x}\t{user_y}\t{k_str}\t{l_value}\n")

    passing = [row for row in rows if Fraction(row[2]) >= threshold_k and row[3] >= threshold_l]
    seen_x: dict[str, int] = {}
    seen_y: dict[str, int] = {}
    for user_x, user_y, _, _ in passing:
        seen_x[user_x] = seen_x.get(user_x, 0) + 1
        seen_y[user_y] = seen_y.get(user_y, 0) + 1
    linked = [row for row in passing if seen_x[row[0]] == 1 and seen_y[row[1]] == 1]

    with open(workdir / "linked.tsv", "w") as fh:
        fh.write("user_x\tuser_y\tk_value\tl_value\n")
        for user_x, user_y, k_str, l_value in linked:
            fh.write(f"{user_x}\t{user_y}\t{k_str}\t{l_value}\n")
    with open(workdir / "linkstats.json", "w") as fh:
        json.dump(
            {
                "candidates": len(rows),
                "passing": len(passing),
                "linked": len(linked),
                "threshold_k": str(threshold_k),
                "threshold_l": threshold_l,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    _write_marker(workdir, "link", cfg)
    _record_timing(workdir, "link", time.perf_counter() - started)


def _read_linked(path: Path) -> list[tuple[str, str]]:
    pairs = []
    with open(path) as fh:
        fh.readline()
        for line in fh:
            user_x, user_y, _, _ = line.rstrip("\n").split("\t")
            pairs.append((user_x, user_y))
    return pairs


def run_evaluate(cfg: PipelineConfig) -> None:
    workdir = Path(cfg.workdir)
    _require_marker(workdir, "link", "evaluate")
    params = cfg.to_params()
    started = time.perf_counter()

    linked = _read_linked(workdir / "linked.tsv")
    linkstats = json.loads((workdir / "linkstats.json").read_text())

    # Histogram over every evaluated candidate pair.
    hist: dict[tuple[int, int], int] = {}
    with open(workdir / "evaluations.tsv") as fh:
        fh.readline()
        for line in fh:
            _, _, k_str, l_str = line.rstrip("\n").split("\t")
            key = (int(Fraction(k_str)), int(l_str))
            hist[key] = hist.get(key, 0) + 1

    assignment: dict[str, frozenset[str]] = {}
    with open(workdir / "assignment.tsv") as fh:
        for line in fh:
            user, cells_s = line.rstrip("\n").split("\t")
            assignment[user] = frozenset(cells_s.split(","))
    log_i = read_event_log(workdir / "logs" / "I.tsv", DatasetTag.I)
    log_e = read_event_log(workdir / "logs" / "E.tsv", DatasetTag.E)

    comparisons = 0
    for cell in _partition_cells(workdir):
        stats_path = workdir / cell / "scanstats.json"
        if stats_path.exists():
            comparisons += json.loads(stats_path.read_text())["comparisons"]

    rpt = metrics.MetricsReport(
        threshold_k=linkstats["threshold_k"],
        threshold_l=linkstats["threshold_l"],
        comparisons=comparisons,
        histogram=hist,
    )
    rpt.funnel = metrics.stage_funnel_exact(
        set(log_i.users()),
        set(log_e.users()),
        assignment,
        candidate_pairs=linkstats["candidates"],
        passing_pairs=linkstats["passing"],
        linked_pairs=linkstats["linked"],
    )

    if cfg.truth:
        if not Path(cfg.truth).exists():
            raise ConfigError(f"truth: no such file: {cfg.truth}")
        truth = synth.read_truth(cfg.truth)
        eval_params = Params(
            alpha=params.alpha,
            lambda_mps=params.lambda_mps,
            alibi_threshold=params.alibi_threshold,
            k=max(Fraction(linkstats["threshold_k"]), Fraction(max(1, linkstats["threshold_l"]))),
            l=max(1, linkstats["threshold_l"]),
            min_cell_edge=params.min_cell_edge,
            strip_fraction=params.strip_fraction,
            place_bin_edge=params.place_bin_edge,
            tie_epsilon=params.tie_epsilon,
        )
        rpt.precision, rpt.correct, rpt.linked = metrics.precision(linked, truth)
        rpt.linked = len(linked)
        rec, rec_all, _, eligible = metrics.recall(linked, truth, log_e, eval_params)
        rpt.recall_eligible = rec
        rpt.recall_all_users = rec_all
        rpt.eligible = eligible
        rpt.truth_size = len(truth)
    else:
        rpt.linked = len(linked)

    (workdir / "metrics.kv").write_text(rpt.to_kv())
    (workdir / "metrics.txt").write_text(rpt.to_text())
    metrics.write_kl_histogram_csv(workdir / "curves" / "kl_histogram.csv", hist)
    _write_marker(workdir, "evaluate", cfg)
    _record_timing(workdir, "evaluate", time.perf_counter() - started)
    print((workdir / "metrics.txt").read_text(), end="")


def run_pipeline(cfg: PipelineConfig) -> None:
    run_ingest(cfg)
    run_partition(cfg)
    run_filter(cfg)
    run_link(cfg)
    run_evaluate(cfg)


def run_generate(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    base_path = args.base or cfg.input_i
    if not base_path:
        raise ConfigError("generate needs --base (or --input-i) pointing at the base CSV")
    if not Path(base_path).exists():
        raise ConfigError(f"base: no such file: {base_path}")
    params = cfg.to_params()
    base_log, _ = load_csv(base_path, DatasetTag.I, params, cfg.radius_default_m)
    sc = synth.SynthConfig(
        usage_ratio=args.usage_ratio,
        checkin_prob_mean=args.checkin_prob,
        checkin_prob_stddev=args.checkin_sigma,
        jitter_window=args.jitter_secs,
        rng_seed=cfg.seed,
        location_noise_prob=args.location_noise_prob,
        location_noise_m=args.location_noise_m,
    )
    shadow, truth = synth.generate(base_log, sc)
    out_events = Path(args.out_events)
    out_truth = Path(args.out_truth)
    write_raw_csv(shadow, out_events)
    synth.write_truth(truth, out_truth)
    print(f"generated {len(shadow)} shadow events for {len(truth)} users")
    print(f"events: {out_events}")
    print(f"truth:  {out_truth}")


def run_make_base(cfg: PipelineConfig, args: argparse.Namespace) -> None:
    log = synth.make_base_log(
        n_users=args.users,
        events_per_user=args.events_per_user,
        n_days=args.days,
        seed=cfg.seed,
        n_places=args.places,
    )
    write_raw_csv(log, Path(args.out))
    print(f"wrote {len(log)} events for {args.users} users to {args.out}")


def run_oracle(cfg: PipelineConfig) -> None:
    if not cfg.input_i or not cfg.input_e:
        raise ConfigError("oracle needs --input-i and --input-e")
    workdir = Path(cfg.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    params = cfg.to_params()
    log_i, _ = load_csv(cfg.input_i, DatasetTag.I, params, cfg.radius_default_m)
    log_e, _ = load_csv(cfg.input_e, DatasetTag.E, params, cfg.radius_default_m)
    result = oracle.oracle_link(log_i, log_e, params, weighted=not cfg.unweighted)
    out = workdir / "oracle_linked.tsv"
    with open(out, "w") as fh:
        fh.write("user_x\tuser_y\tk_value\tl_value\n")
        for pair in sorted(result.linked):
            entry = result.candidates[pair]
            fh.write(f"{pair[0]}\t{pair[1]}\t{entry.k_value}\t{entry.l_value}\n")
    print(f"oracle linked {len(result.linked)} pairs -> {out}")
    engine_out = workdir / "linked.tsv"
    if engine_out.exists():
        engine_pairs = set(_read_linked(engine_out))
        oracle_pairs = result.linked_pairs()
        if engine_pairs == oracle_pairs:
            print(f"engine output matches oracle ({len(oracle_pairs)} pairs)")
        else:
            only_engine = sorted(engine_pairs - oracle_pairs)
            only_oracle = sorted(oracle_pairs - engine_pairs)
            print(f"MISMATCH: engine-only {only_engine[:5]}, oracle-only {only_oracle[:5]}")


def run_report(cfg: PipelineConfig) -> None:
    workdir = Path(cfg.workdir)
    _require_marker(workdir, "evaluate", "report")
    rendered = report.render_workdir(workdir)
    for path in rendered:
        print(f"rendered {path}")


# ---------------------------------------------------------------------------
# Argument plumbing.


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1 on usage errors, not 2
        raise ConfigError(message)


_CONFIG_FLAGS = [
    # (flag, dest, type, help)
    ("--workdir", "workdir", str, "working directory for all stage outputs"),
    ("--input-i", "input_i", str, "CSV path for the I-side dataset"),
    ("--input-e", "input_e", str, "CSV path for the E-side dataset"),
    ("--truth", "truth", str, "ground-truth TSV (shadow id -> base id)"),
    ("--alpha-secs", "alpha_secs", int, "temporal closeness threshold, seconds"),
    ("--lambda-mps", "lambda_mps", float, "max plausible travel speed, m/s"),
    ("--alibi-threshold", "alibi_threshold", int, "max tolerated alibi events per pair"),
    ("--k", "k", float, "total matched weight threshold"),
    ("--l", "l", int, "distinct place threshold"),
    ("--min-cell-edge-m", "min_cell_edge_m", float, "smallest grid cell edge, meters"),
    ("--strip-fraction", "strip_fraction", float, "border strip width / min cell edge"),
    ("--place-bin-edge-m", "place_bin_edge_m", float, "fallback place bin edge, meters"),
    ("--tie-epsilon", "tie_epsilon", float, "relative tolerance for dominating-cell ties"),
    ("--radius-default-m", "radius_default_m", float, "region radius when the CSV omits it"),
    ("--workers", "workers", int, "parallel workers for filter/link"),
    ("--seed", "seed", int, "RNG seed for generation commands"),
]

_CONFIG_SWITCHES = [
    ("--auto-kl", "auto_kl", "pick k and l by the elbow rule on the evaluated pairs"),
    ("--unweighted", "unweighted", "force every matched pair's weight to 1"),
    ("--forward-only", "forward_only", "debug: skip the reverse scan"),
]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat key=value config file")
    for flag, dest, typ, help_text in _CONFIG_FLAGS:
        parser.add_argument(flag, dest=dest, type=typ, default=None, help=help_text)
    for flag, dest, help_text in _CONFIG_SWITCHES:
        parser.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=help_text)


def _merge_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        if not Path(args.config).exists():
            raise ConfigError(f"config: no such file: {args.config}")
        cfg = load_config_file(args.config, cfg)
    overrides = {}
    for _, dest, _, _ in _CONFIG_FLAGS:
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dest] = value
    for _, dest, _ in _CONFIG_SWITCHES:
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dest] = value
    for key, value in overrides.items():
        setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _build_parser() -> _Parser:
    parser = _Parser(prog="geolink", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("ingest", "read the input CSVs into sorted event logs"),
        ("partition", "build the spatial grid and per-cell partitions"),
        ("filter", "run the forward/reverse window scans per cell"),
        ("link", "evaluate candidates and emit linked pairs"),
        ("evaluate", "score a finished run and emit metrics"),
        ("pipeline", "run ingest through evaluate in order"),
        ("oracle", "brute-force reference linkage (small inputs)"),
        ("report", "render figures from a finished run"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)

    p = sub.add_parser("generate", help="derive a shadow dataset with ground truth")
    _add_common(p)
    p.add_argument("--base", default=None, help="base CSV (defaults to --input-i)")
    p.add_argument("--usage-ratio", type=float, default=0.5, help="fraction of base users given a shadow")
    p.add_argument("--checkin-prob", type=float, default=0.1, help="mean per-event emission probability")
    p.add_argument("--checkin-sigma", type=float, default=None, help="stddev of per-user probability")
    p.add_argument("--jitter-secs", type=int, default=900, help="max time jitter of shadow events")
    p.add_argument("--location-noise-prob", type=float, default=0.0, help="probability of displacing a shadow event")
    p.add_argument("--location-noise-m", type=float, default=0.0, help="displacement distance, meters")
    p.add_argument("--out-events", default="shadow.csv", help="output CSV for shadow events")
    p.add_argument("--out-truth", default="truth.tsv", help="output TSV for the truth map")

    p = sub.add_parser("make-base", help="synthesize a demo base dataset")
    _add_common(p)
    p.add_argument("--users", type=int, default=200, help="number of users")
    p.add_argument("--events-per-user", type=float, default=50.0, help="mean events per user")
    p.add_argument("--days", type=int, default=7, help="time span in days")
    p.add_argument("--places", type=int, default=400, help="venue pool size")
    p.add_argument("--out", default="base.csv", help="output CSV path")

    return parser


_COMMANDS = {
    "ingest": run_ingest,
    "partition": run_partition,
    "filter": run_filter,
    "link": run_link,
    "evaluate": run_evaluate,
    "pipeline": run_pipeline,
    "oracle": run_oracle,
    "report": run_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _merge_config(args)
        if args.command == "generate":
            run_generate(cfg, args)
        elif args.command == "make-base":
            run_make_base(cfg, args)
        else:
            _COMMANDS[args.command](cfg)
        return 0
    except (ConfigError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last-resort mapping
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
