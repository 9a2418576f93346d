"""Command-line driver: synth, train, finetune, eval, sweep, report.

Every command prints ``key=value`` summary lines on stdout.  Failures print
``error: <stage>: <message>`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import evaluate as ev
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig
from .synth import FAMILY_KINDS, SignalFamily, make_dataset, sample_pair_batch, write_csv
from .train import CONFIG_NAME, METRICS_NAME, build_datasets, finetune, read_log, train, trailing_means

SWEEP_AXES = ("partition.d_inv", "hp.beta", "hp.lam", "hp.mode")
METRICS = ("phase", "rotation_consistency", "axis", "stress", "retrieval", "subspace", "pca")
_ALIASES = {"hp.lambda": "hp.lam"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _emit(**pairs) -> None:
    for k, v in pairs.items():
        print(f"{k}={v}")


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        out[_ALIASES.get(k, k)] = v
    return out


def _base_config(path, family: str | None) -> ExperimentConfig:
    if path:
        return cfgmod.load(path)
    return cfgmod.imu_config() if family == "IMU_LIKE" else cfgmod.ecg_config()


def build_config(args) -> ExperimentConfig:
    """Config file (or family preset), then ``--set`` overrides, then ``--seed``."""
    cfg = _base_config(getattr(args, "config", None), getattr(args, "family", None))
    sets = _parse_sets(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        sets["run.seed"] = str(args.seed)
    return cfgmod.apply_overrides(cfg, sets) if sets else cfg.validate()


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        raise StageError("output", f"{path} already exists; run directories are append-only")
    path.mkdir(parents=True)
    return path


# -- synth -------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = build_config(args)
    out = _fresh_dir(Path(args.out))
    train_ds, test_ds = build_datasets(cfg)
    try:
        n_train = write_csv(out / "train.csv", train_ds)
        n_test = write_csv(out / "test.csv", test_ds)
        fam = cfg.family
        manifest = {"family": fam.kind, "seed": cfg.run.seed, "n_per_class": cfg.run.n_per_class,
                    "num_classes": fam.num_classes, "channels": fam.channels, "length": fam.length,
                    "train_rows": n_train, "test_rows": n_test, "split": "source_id % 5 == 4 -> test"}
        (out / "manifest.txt").write_text("".join(f"{k} = {v}\n" for k, v in manifest.items()))
    except OSError as exc:
        raise StageError("write", str(exc)) from None
    _emit(out=out, train_rows=n_train, test_rows=n_test)


# -- train / finetune --------------------------------------------------

def _summarize_run(result, run_dir: Path, cfg: ExperimentConfig) -> None:
    tail = result.log[-100:]
    _emit(run_dir=run_dir, mode=cfg.hp.mode, seed=cfg.run.seed, steps=result.step_count,
          checkpoint_hash=result.checkpoint_hash,
          final_task=repr(float(np.mean([r["task"] for r in tail]))) if tail else "nan",
          final_total=repr(float(np.mean([r["total"] for r in tail]))) if tail else "nan")


def cmd_train(args) -> None:
    cfg = build_config(args)
    run_dir = _fresh_dir(Path(args.out) / cfg.run_name())
    result = _staged("train", train, cfg, run_dir)
    _summarize_run(result, run_dir, cfg)


def cmd_finetune(args) -> None:
    cfg = build_config(args)
    base = _staged("load", load_checkpoint, args.base)
    run_dir = _fresh_dir(Path(args.out) / f"{cfg.run_name()}-ft")
    result = _staged("finetune", finetune, base, cfg, run_dir)
    _summarize_run(result, run_dir, cfg)


def _staged(stage, fn, *a):
    try:
        return fn(*a)
    except StageError:
        raise
    except (ConfigError, ValueError, FloatingPointError, OSError) as exc:
        raise StageError(stage, str(exc)) from exc


# -- eval --------------------------------------------------------------

def _eval_context(checkpoint: Path, sets: dict[str, str]):
    """Model plus the config that trained it (snapshot beside the checkpoint, else family defaults)."""
    ck = load_checkpoint(checkpoint)
    snap = checkpoint.parent / CONFIG_NAME
    if snap.exists():
        cfg = cfgmod.load(snap)
    else:
        fam = ck.family or SignalFamily()
        cfg = cfgmod.imu_config() if fam.kind == "IMU_LIKE" else cfgmod.ecg_config()
        cfg = dataclasses.replace(cfg, encoder=ck.model.encoder, head=ck.model.head,
                                  partition=ck.model.partition, family=fam)
    if sets:
        cfg = cfgmod.apply_overrides(cfg, sets)
    return ck, cfg


def run_metric(metric: str, model, cfg: ExperimentConfig, seed: int) -> tuple[ev.MetricReport, float]:
    """Compute one metric; returns the report and its headline number."""
    _, test = build_datasets(cfg)
    if metric == "phase":
        sub = "INV" if model.partition.d_inv else "FULL"
        rep = ev.phase_similarity_curve(model, test.signals, subspace=sub, seed=seed)
        return rep, float(rep.values().min())
    if metric == "rotation_consistency":
        v = ev.rotation_consistency(model, test, seed=seed)
        rep = ev.MetricReport("rotation_consistency", ("mode", "value", "count"),
                              [{"mode": "UNIFORM_SO3", "value": v, "count": len(test)}], seed)
        return rep, v
    if metric == "axis":
        rep = ev.axis_sweep_accuracy(model, test, seed=seed)
        return rep, float(rep.values()[-1])
    if metric == "stress":
        rep = ev.stress_grid(model, test, seed=seed)
        return rep, float(rep.values().min())
    if metric == "retrieval":
        if cfg.family.channels != 1:
            raise ev.MetricError("retrieval applies only to single-channel (ECG_LIKE) families")
        v = ev.retrieval_eval(model, ev.GallerySpec(cfg.family, seed=seed))
        rep = ev.MetricReport("retrieval", ("k", "value", "count"), [{"k": 5, "value": v, "count": 100}], seed)
        return rep, v
    if metric == "subspace":
        batches = [sample_pair_batch(test, cfg.transform, min(64, max(2, len(test))), cfg.run.views,
                                     np.random.default_rng([seed + ev.EVAL_SEED_OFFSET, 300, i]))
                   for i in range(4)]
        stats = ev.subspace_stats(model, batches)
        rows = [{"slice": k.rsplit("_", 1)[0], "pairs": k.rsplit("_", 1)[1], "value": v,
                 "count": int(stats["count_" + k.rsplit("_", 1)[1]])}
                for k, v in stats.items() if not k.startswith("count")]
        rep = ev.MetricReport("subspace", ("slice", "pairs", "value", "count"), rows, seed)
        first = rows[0]["value"] if rows else float("nan")
        return rep, first
    if metric == "pca":
        coords, explained = ev.pca_project(model.embed(test.signals))
        sil = ev.silhouette_score(coords, test.labels)
        rows = [{"index": i, "label": int(lbl), "pc1": float(c[0]), "pc2": float(c[1])}
                for i, (lbl, c) in enumerate(zip(test.labels, coords))]
        rep = ev.MetricReport("pca", ("index", "label", "pc1", "pc2"), rows, seed)
        return rep, sil
    raise ev.MetricError(f"unknown metric {metric!r}; valid: {', '.join(METRICS)}")


def _svg(metric: str, rep: ev.MetricReport) -> str:
    if metric == "phase":
        return ev.line_svg(rep.values("shift"), {rep.rows[0]["subspace"]: rep.values()}, "phase similarity")
    if metric == "stress":
        stds = sorted({r["noise_std"] for r in rep.rows})
        rots = list(dict.fromkeys(r["rotation"] for r in rep.rows))
        grid = np.array([[next(r["value"] for r in rep.rows if r["noise_std"] == s and r["rotation"] == o)
                          for o in rots] for s in stds])
        return ev.heatmap_svg(grid, [f"noise {s:g}" for s in stds], [f"rot {o}" for o in rots], "stress grid")
    if metric == "pca":
        return _scatter_svg(rep)
    labels = [str(r[rep.columns[0]]) for r in rep.rows]
    return ev.heatmap_svg(rep.values()[None, :], [rep.metric], labels, rep.metric)


def _scatter_svg(rep: ev.MetricReport, size: int = 360) -> str:
    x, y = rep.values("pc1"), rep.values("pc2")
    lab = rep.values("label").astype(int)

    def scale(v):
        span = v.max() - v.min() or 1.0
        return 20 + (v - v.min()) / span * (size - 40)

    px, py = scale(x), size - scale(y)
    dots = "\n".join(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{ev._PALETTE[c % len(ev._PALETTE)]}"/>'
                     for a, b, c in zip(px, py, lab))
    return f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n{dots}\n</svg>\n'


def cmd_eval(args) -> None:
    checkpoint = Path(args.checkpoint)
    ck, cfg = _staged("load", _eval_context, checkpoint, _parse_sets(args.set))
    seed = cfg.run.seed if args.seed is None else args.seed
    rep, headline = _staged("metric", run_metric, args.metric, ck.model, cfg, seed)
    out = Path(args.out) if args.out else checkpoint.parent
    out.mkdir(parents=True, exist_ok=True)
    csv_path = rep.to_csv(out / f"eval_{args.metric}.csv")
    pairs = {"metric": args.metric, "value": repr(headline), "report": csv_path}
    if args.svg:
        svg_path = out / f"eval_{args.metric}.svg"
        svg_path.write_text(_svg(args.metric, rep))
        pairs["svg"] = svg_path
    _emit(**pairs)


# -- sweep -------------------------------------------------------------

def sweep_configs(base: ExperimentConfig, axis: str, values) -> list[ExperimentConfig]:
    axis = _ALIASES.get(axis, axis)
    if axis not in SWEEP_AXES:
        raise ConfigError(f"{axis!r} is not sweepable; choose from {', '.join(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = []
    for v in values:
        if axis == "partition.d_inv":
            out.append(cfgmod.rebalance_partition(base, int(v)))
        else:
            out.append(cfgmod.apply_overrides(base, {axis: str(v)}))
    return out


def sweep_row(cfg: ExperimentConfig, run_dir: Path | None = None) -> dict:
    """Train one configuration and evaluate the family's standard metric set."""
    result = train(cfg, run_dir)
    model = result.model
    _, test = build_datasets(cfg)
    seed = cfg.run.seed
    row = {"final_total": float(np.mean([r["total"] for r in result.log[-100:]])) if result.log else 0.0}
    if cfg.family.channels == 3 and model.head.kind == "CLASSIFIER":
        rep = ev.axis_sweep_accuracy(model, test, seed=seed)
        row.update({r["axis"]: r["value"] for r in rep.rows})
        row["consistency"] = ev.rotation_consistency(model, test, seed=seed)
    else:
        sub = "INV" if model.partition.d_inv else "FULL"
        row["phase_min"] = float(ev.phase_similarity_curve(model, test.signals, subspace=sub, seed=seed)
                                 .values().min())
        row["retrieval"] = ev.retrieval_eval(model, ev.GallerySpec(cfg.family, seed=seed))
    row["checkpoint_hash"] = result.checkpoint_hash or ""
    return row


def _sweep_job(job):
    cfg, run_dir = job
    return sweep_row(cfg, run_dir)


def run_sweep(base: ExperimentConfig, axis: str, values, out: Path, parallel: int = 1) -> list[dict]:
    cfgs = sweep_configs(base, axis, values)
    out = _fresh_dir(out)
    jobs = [(c, out / f"{i:02d}-{c.run_name()}") for i, c in enumerate(cfgs)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    key = _ALIASES.get(axis, axis)
    table = [{key: v, **r} for v, r in zip(values, rows)]
    cols = [key] + [c for c in table[0] if c != key]
    lines = [",".join(cols)]
    for r in table:
        lines.append(",".join(repr(float(r[c])) if isinstance(r[c], (float, np.floating)) else str(r[c])
                              for c in cols))
    (out / "sweep.csv").write_text("\n".join(lines) + "\n")
    return table


def cmd_sweep(args) -> None:
    base = build_config(args)
    values = [v for v in (args.values or "").split(",") if v.strip()]
    if not values:
        raise StageError("usage", "empty value list for --values")
    table = _staged("sweep", run_sweep, base, args.axis, values, Path(args.out), args.parallel)
    _emit(axis=_ALIASES.get(args.axis, args.axis), rows=len(table), table=Path(args.out) / "sweep.csv")


# -- report ------------------------------------------------------------

def build_report(run_dirs) -> str:
    """Markdown table per family: headline metrics plus every config key that differs across runs."""
    runs = []
    for d in map(Path, run_dirs):
        missing = [n for n in (CONFIG_NAME, METRICS_NAME) if not (d / n).exists()]
        if missing:
            raise StageError("report", f"{d}: missing {', '.join(missing)}")
        cfg = cfgmod.load(d / CONFIG_NAME)
        log = read_log(d / METRICS_NAME)
        flat = dict(line.split(" = ", 1) for line in cfgmod.dumps(cfg).splitlines())
        head = {"steps": len(log),
                "final_task": trailing_means([r["task"] for r in log], 100)[-1] if log else float("nan"),
                "final_total": trailing_means([r["total"] for r in log], 100)[-1] if log else float("nan")}
        for csv_path in sorted(d.glob("eval_*.csv")):
            rep = ev.MetricReport.from_csv(csv_path)
            if rep.rows and "value" in rep.columns:
                head[rep.metric] = float(np.mean(rep.values()))
        runs.append((d, cfg.family.kind, flat, head))
    lines = ["# Run report", ""]
    for family in sorted({r[1] for r in runs}):
        group = [r for r in runs if r[1] == family]
        keys = sorted(k for k in group[0][2] if len({g[2][k] for g in group}) > 1)
        metrics = list(dict.fromkeys(m for g in group for m in g[3]))
        lines += [f"## {family}", ""]
        cols = ["run"] + [f"**{k}**" for k in keys] + metrics
        lines.append("| " + " | ".join(cols) + " |")
        lines.append("|" + "---|" * len(cols))
        for d, _, flat, head in group:
            cells = [d.name] + [flat[k] for k in keys]
            cells += [f"{head[m]:.4g}" if m in head else "" for m in metrics]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> None:
    text = build_report(args.runs)
    if args.out:
        Path(args.out).write_text(text)
        _emit(report=args.out, runs=len(args.runs))
    else:
        sys.stdout.write(text)


# -- entry point -------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_default: str | None = "runs") -> None:
    p.add_argument("--config", help="config file (section.key = value)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
    p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
    p.add_argument("--out", default=out_default, help="output directory")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sclab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write train/test CSVs and a manifest")
    _common(p, out_default=None)
    p.add_argument("--family", choices=FAMILY_KINDS, default="ECG_LIKE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from scratch into a new run directory")
    _common(p)
    p.add_argument("--family", choices=FAMILY_KINDS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="continue training a checkpoint")
    _common(p)
    p.add_argument("--base", required=True, help="checkpoint to start from")
    p.add_argument("--family", choices=FAMILY_KINDS)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate one metric on a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--metric", choices=METRICS, required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report directory (default: beside the checkpoint)")
    p.add_argument("--svg", action="store_true", help="also write an SVG plot")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train and evaluate one run per value of a config key")
    _common(p, out_default=None)
    p.add_argument("--family", choices=FAMILY_KINDS)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--parallel", type=int, default=1, metavar="N")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="markdown summary of run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", help="write markdown here instead of stdout")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out", "x") is None and args.command in ("synth", "sweep"):
        parser.error(f"{args.command} needs --out")
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc.stage}: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 1
    except ev.MetricError as exc:
        print(f"error: metric: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
