"""Batch experiment runner.

Verbs::

    sprint run      one method over ``runs`` seeds, writes runs.csv, summary.yaml,
                    manifest.json (and audit.csv for prototype methods)
    sprint sweep    the same for every value of one or more ``--axis key=v1,v2``
    sprint profile  incremental-session wall-clock per method and epoch budget
    sprint synth    dump a Gaussian-blob dataset plus its split config
    sprint audit    pseudo-label precision report for SPRINT runs

Train settings resolve in this order, later wins: built-in defaults, the split
config (``M0_per_class``, ``u``, ``composition``), the experiment file's
``train:`` block, ``SPRINT_<FIELD>`` environment variables (e.g.
``SPRINT_EPISODES=50``), then command-line flags.

Exit codes: 0 success, 2 invalid configuration or unreadable data, 3
non-finite loss or gradient (diagnostics are written to the output directory).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import itertools
import json
import logging
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .data import DataError, SessionSchedule, TabularDataset, load_split, load_split_config
from .eval import summarize_runs
from .experiments import METHODS, RunResult, run_single
from .pseudolabel import AUDIT_COLUMNS, write_audit_csv
from .synthetic import BlobSpec, make_synthetic, preset
from .trainer import NumericalError, TrainConfig

log = logging.getLogger("sprint")

ENV_PREFIX = "SPRINT_"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SPEC_KEYS = {"name", "dataset", "synthetic", "method", "runs", "seed", "out", "train", "sweep", "profile"}
PROFILE_KEYS = {"epochs", "methods", "M0_per_class", "runs"}
RUN_COLUMNS = (
    "run_id", "seed", "method", "session", "acc", "base_acc", "novel_acc", "hm",
    "pd_running", "wallclock_s", "pseudo_precision", "mode",
)
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class ConfigError(ValueError):
    """Invalid experiment specification."""


@dataclass
class ExperimentSpec:
    """One experiment file.

    ``dataset`` is a split-config YAML path or ``builtin:obesity`` /
    ``builtin:mnist``; ``synthetic`` is a preset name or a mapping of blob
    parameters. Exactly one of the two must be set.
    """

    name: str = "experiment"
    dataset: str | None = None
    synthetic: str | dict | None = None
    method: str = "sprint"
    runs: int = 10
    seed: int = 0
    out: str = "results"
    train: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    profile: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.dataset is None) == (self.synthetic is None):
            raise ConfigError("set exactly one of 'dataset' or 'synthetic'")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        unknown = set(self.train) - set(TRAIN_FIELDS)
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        for axis, values in self.sweep.items():
            if axis not in TRAIN_FIELDS:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {axis!r} needs a nonempty list of values")
        unknown = set(self.profile) - PROFILE_KEYS
        if unknown:
            raise ConfigError(f"unknown profile keys: {sorted(unknown)}")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentSpec":
        if not isinstance(raw, Mapping):
            raise ConfigError("experiment file must hold a mapping")
        unknown = set(raw) - SPEC_KEYS
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"experiment file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    ds = raw.get("dataset")
    if isinstance(ds, str) and not ds.startswith("builtin:") and not Path(ds).is_absolute():
        raw["dataset"] = str(path.parent / ds)
    return ExperimentSpec.from_dict(raw)


# ------------------------------------------------------------- resolution


def _coerce(name: str, text: str):
    """Parse one override string into the type of TrainConfig field ``name``."""
    value = yaml.safe_load(text)
    default = getattr(TrainConfig(), name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} expects true/false, got {text!r}")
    elif isinstance(default, float) and isinstance(value, int):
        value = float(value)
    return value


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name in TRAIN_FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in environ:
            out[name] = _coerce(name, environ[key])
    return out


def load_dataset(spec: ExperimentSpec) -> tuple[TabularDataset, SessionSchedule, dict]:
    """Dataset, schedule and the train defaults the data source implies."""
    if spec.synthetic is not None:
        try:
            if isinstance(spec.synthetic, str):
                blob, defaults = preset(spec.synthetic)
            else:
                blob, defaults = BlobSpec(**spec.synthetic), {}
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synthetic: {exc}") from None
        ds, schedule = make_synthetic(blob)
        return ds, schedule, dict(defaults)
    if spec.dataset == "builtin:obesity":
        from .datasets import load_obesity

        ds, schedule = load_obesity()
        return ds, schedule, {"m": 100, "M0_per_class": 100}
    if spec.dataset == "builtin:mnist":
        from .datasets import load_mnist_subset

        ds, schedule = load_mnist_subset()
        return ds, schedule, {}
    split = load_split_config(spec.dataset)
    ds, schedule = load_split(split)
    return ds, schedule, {"M0_per_class": split.M0_per_class, "u": split.u, "composition": split.composition}


def resolve_config(
    spec: ExperimentSpec,
    data_defaults: Mapping,
    env: Mapping | None = None,
    flags: Mapping | None = None,
) -> TrainConfig:
    merged = {**data_defaults, **spec.train, **(env or {}), **(flags or {})}
    merged = {k: list(v) if isinstance(v, tuple) else v for k, v in merged.items()}
    merged.setdefault("seed", spec.seed)
    try:
        return TrainConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from None


# ----------------------------------------------------------------- output


def git_stamp() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _pct(x) -> float | str:
    return round(100.0 * float(x), 2) if x is not None and np.isfinite(x) else ""


def run_rows(run_id: int, res: RunResult) -> list[dict]:
    rows = []
    a0 = res.reports[0].accuracy
    for rep in res.reports:
        prec = [p for p in rep.pseudo_precision.values() if np.isfinite(p)]
        rows.append({
            "run_id": run_id,
            "seed": res.seed,
            "method": res.method,
            "session": rep.session,
            "acc": _pct(rep.accuracy),
            "base_acc": _pct(rep.base_accuracy),
            "novel_acc": _pct(rep.novel_accuracy),
            "hm": _pct(rep.harmonic_mean),
            "pd_running": _pct(a0 - rep.accuracy),
            "wallclock_s": round(rep.timings.get("train", 0.0), 4),
            "pseudo_precision": _pct(np.mean(prec)) if prec else "",
            "mode": rep.mode,
        })
    return rows


def write_csv(path: Path, columns: Sequence[str], rows: Sequence[Mapping]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        w.writerows(rows)


def write_reports(out: Path, spec: ExperimentSpec, cfg: TrainConfig, results: list[RunResult], argv) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    rows = [r for i, res in enumerate(results) for r in run_rows(i, res)]
    write_csv(out / "runs.csv", RUN_COLUMNS, rows)
    summary = {
        "name": spec.name,
        "method": spec.method,
        **summarize_runs([res.reports for res in results]).as_dict(percent=True),
        "seeds": [res.seed for res in results],
        "warnings": sorted({w for res in results for rep in res.reports for w in rep.warnings}),
    }
    with (out / "summary.yaml").open("w", encoding="utf-8") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    audit = [{"run_id": i, **a} for i, res in enumerate(results) for a in res.audit]
    if spec.method in ("sprint", "protonet"):
        write_audit_csv(out / "audit.csv", audit)
    resolved = dataclasses.replace(spec, train=cfg.to_dict(), sweep={}, profile={}, out=str(out))
    manifest = {
        "tool": "sprint",
        "version": __version__,
        "git": git_stamp(),
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "argv": list(argv),
        "config_hash": cfg.digest(),
        "spec": resolved.to_dict(),
    }
    with (out / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return summary


def _diagnostics(out: Path, exc: NumericalError) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "diagnostics.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump({"error": str(exc), **exc.diagnostics}, fh, indent=2, default=str)
    return path


# --------------------------------------------------------------- commands


def run_experiment(
    spec: ExperimentSpec, cfg: TrainConfig, ds, schedule, out: Path, argv=()
) -> dict:
    """All runs of one configuration; seeds are ``cfg.seed + run_id``."""
    results = []
    for r in range(spec.runs):
        res = run_single(spec.method, ds, schedule, cfg, seed=cfg.seed + r)
        log.info("run %d/%d seed=%d final=%.2f%% pd=%.2f",
                 r + 1, spec.runs, res.seed, 100 * res.accuracies[-1], 100 * res.pd)
        results.append(res)
    return write_reports(out, spec, cfg, results, argv)


def _print_summary(label: str, summary: dict) -> None:
    accs = " ".join(f"{a:.2f}" for a in summary["acc_mean"])
    print(f"{label}: A_0..A_T = {accs}  PD = {summary['pd_mean']:.2f} +- {summary['pd_std']:.2f}")


def parse_axis(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError(f"--axis expects key=v1,v2,..., got {text!r}")
    key, values = text.split("=", 1)
    key = key.strip()
    if key not in TRAIN_FIELDS:
        raise ConfigError(f"unknown sweep axis {key!r}")
    vals = [_coerce(key, v) for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"sweep axis {key!r} has no values")
    return key, vals


def _flag_overrides(args) -> dict:
    flags = {}
    if getattr(args, "shots", None) is not None:
        flags["k"] = args.shots
    if getattr(args, "full_test", False):
        flags["full_test"] = True
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    return flags


def _spec_from_args(args) -> tuple[ExperimentSpec, bool]:
    """Experiment spec from --manifest, --config or --synthetic; the flag says
    whether it came from a manifest (then env overrides are ignored)."""
    if getattr(args, "manifest", None):
        with Path(args.manifest).open(encoding="utf-8") as fh:
            spec = ExperimentSpec.from_dict(json.load(fh)["spec"])
        from_manifest = True
    elif args.config:
        spec, from_manifest = load_spec(args.config), False
    elif args.synthetic:
        spec, from_manifest = ExperimentSpec(name=args.synthetic, synthetic=args.synthetic), False
    else:
        raise ConfigError("give --config, --synthetic or --manifest")
    updates = {}
    if getattr(args, "method", None):
        updates["method"] = args.method
    if getattr(args, "runs", None):
        updates["runs"] = args.runs
    if args.out:
        updates["out"] = args.out
    if updates:
        spec = dataclasses.replace(spec, **updates)
        spec.__post_init__()
    return spec, from_manifest


def cmd_run(args, argv) -> int:
    spec, from_manifest = _spec_from_args(args)
    ds, schedule, defaults = load_dataset(spec)
    cfg = resolve_config(spec, defaults, {} if from_manifest else env_overrides(), _flag_overrides(args))
    out = Path(spec.out)
    try:
        summary = run_experiment(spec, cfg, ds, schedule, out, argv)
    except NumericalError as exc:
        path = _diagnostics(out, exc)
        print(f"numerical failure: {exc}; diagnostics in {path}", file=sys.stderr)
        return EXIT_NUMERIC
    _print_summary(f"{spec.name} [{spec.method}]", summary)
    print(f"reports written to {out}")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    spec, _ = _spec_from_args(args)
    axes = dict(spec.sweep)
    for text in args.axis or ():
        key, vals = parse_axis(text)
        axes[key] = vals
    if not axes:
        raise ConfigError("sweep needs at least one axis (--axis key=v1,v2 or a 'sweep:' block)")
    ds, schedule, defaults = load_dataset(spec)
    env = env_overrides()
    flags = _flag_overrides(args)
    root = Path(spec.out)
    table = []
    keys = list(axes)
    for combo in itertools.product(*(axes[k] for k in keys)):
        point = dict(zip(keys, combo))
        label = ",".join(f"{k}={v}" for k, v in point.items())
        cfg = resolve_config(spec, defaults, env, {**flags, **point})
        out = root / label
        try:
            summary = run_experiment(spec, cfg, ds, schedule, out, argv)
        except NumericalError as exc:
            path = _diagnostics(out, exc)
            print(f"numerical failure at {label}: {exc}; diagnostics in {path}", file=sys.stderr)
            return EXIT_NUMERIC
        _print_summary(label, summary)
        table.append({**point, "final_acc_mean": summary["final_acc_mean"],
                      "pd_mean": summary["pd_mean"], "pd_std": summary["pd_std"],
                      "hm_last_mean": summary["hm_last_mean"]})
    write_csv(root / "sweep.csv", keys + ["final_acc_mean", "pd_mean", "pd_std", "hm_last_mean"], table)
    print(f"sweep table written to {root / 'sweep.csv'}")
    return EXIT_OK


PROFILE_COLUMNS = ("method", "epochs", "M0_per_class", "runs", "mean_s", "std_s", "std_flag", "speedup")


def profile_runtime(
    ds, schedule, cfg: TrainConfig, epochs: Sequence[int], methods: Sequence[str],
    m0_values: Sequence[int], runs: int,
) -> list[dict]:
    """Incremental-session training time per (method, epoch budget, M0).

    SPRINT's epoch budget is its episode count per session; dense replay's is
    full passes over the replay set. ``speedup`` is T_dense / T_sprint at the
    same budget and M0.
    """
    rows = []
    for m0, ep in itertools.product(m0_values, epochs):
        times = {}
        for method in methods:
            c = dataclasses.replace(cfg, M0_per_class=m0, episodes=ep, dense_epochs=ep)
            t = [run_single(method, ds, schedule, c, seed=cfg.seed + r).incremental_seconds for r in range(runs)]
            times[method] = t
            single = len(t) < 2
            rows.append({
                "method": method, "epochs": ep, "M0_per_class": m0, "runs": len(t),
                "mean_s": round(float(np.mean(t)), 4),
                "std_s": "" if single else round(float(np.std(t, ddof=1)), 4),
                "std_flag": "single-run" if single else "",
                "speedup": "",
            })
        if "sprint" in times and "dense_replay" in times:
            speed = np.mean(times["dense_replay"]) / np.mean(times["sprint"])
            for row in rows[-len(methods):]:
                row["speedup"] = round(float(speed), 2)
    return rows


def cmd_profile(args, argv) -> int:
    spec, _ = _spec_from_args(args)
    ds, schedule, defaults = load_dataset(spec)
    cfg = resolve_config(spec, defaults, env_overrides(), _flag_overrides(args))
    prof = spec.profile
    epochs = [int(e) for e in args.epochs.split(",")] if args.epochs else prof.get("epochs", [100, 200, 300])
    methods = args.methods.split(",") if args.methods else prof.get("methods", ["sprint", "dense_replay"])
    if "sprint" not in methods or "dense_replay" not in methods:
        raise ConfigError("profile methods must include sprint and dense_replay")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    m0 = [int(v) for v in args.m0.split(",")] if args.m0 else prof.get("M0_per_class", [cfg.M0_per_class])
    runs = args.runs or prof.get("runs", 5)
    rows = profile_runtime(ds, schedule, cfg, epochs, methods, m0, runs)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "profile.csv", PROFILE_COLUMNS, rows)
    for r in rows:
        std = "n/a (single run)" if r["std_flag"] else f"{r['std_s']:.2f}"
        print(f"{r['method']:<14} E={r['epochs']:<4} M0={r['M0_per_class']:<6} "
              f"{r['mean_s']:.2f} +- {std} s  speedup {r['speedup']}")
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    spec = BlobSpec(
        n_classes=args.classes, n_base=args.base, dim=args.dim, center_spacing=args.spacing,
        within_sigma=args.sigma, n_per_class=args.n_per_class, seed=args.seed or 0,
    )
    ds, schedule = make_synthetic(spec)
    out = Path(args.out or "synthetic")
    out.mkdir(parents=True, exist_ok=True)
    names = ds.class_names
    for split, idx in (("train", ds.train_idx), ("test", ds.test_idx)):
        with (out / f"{split}.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([*ds.feature_names, "label"])
            for i in idx:
                w.writerow([*(repr(float(v)) for v in ds.features[i]), names[ds.labels[i]]])
    split_cfg = {
        "name": "blobs",
        "dataset": "train.csv",
        "test_file": "test.csv",
        "label_column": "label",
        "base_classes": [names[c] for c in schedule.base_classes],
        "sessions": [[names[c] for c in s] for s in schedule.sessions],
        "M0_per_class": 2000,
        "u": 2000,
    }
    with (out / "split.yaml").open("w", encoding="utf-8") as fh:
        yaml.safe_dump(split_cfg, fh, sort_keys=False)
    print(f"wrote {ds.n_rows} rows ({spec.separation_ratio:.0f}:1 separation) to {out}")
    return EXIT_OK


def cmd_audit(args, argv) -> int:
    spec, _ = _spec_from_args(args)
    spec = dataclasses.replace(spec, method="sprint")
    ds, schedule, defaults = load_dataset(spec)
    cfg = resolve_config(spec, defaults, env_overrides(), _flag_overrides(args))
    if cfg.m < 1:
        raise ConfigError("audit needs m >= 1")
    rows = []
    try:
        for r in range(spec.runs):
            res = run_single("sprint", ds, schedule, cfg, seed=cfg.seed + r)
            rows.extend({"run_id": r, **a} for a in res.audit)
    except NumericalError as exc:
        path = _diagnostics(Path(spec.out), exc)
        print(f"numerical failure: {exc}; diagnostics in {path}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_audit_csv(out / "audit.csv", rows)
    print(" ".join(f"{c:>14}" for c in AUDIT_COLUMNS))
    for row in rows:
        print(" ".join(f"{row[c]:>14.4f}" if isinstance(row[c], float) else f"{row[c]!s:>14}" for c in AUDIT_COLUMNS))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _source_args(p: argparse.ArgumentParser, manifest: bool = False) -> None:
    p.add_argument("--config", help="experiment YAML file")
    p.add_argument("--synthetic", help="synthetic preset name (blobs, blobs-hard)")
    if manifest:
        p.add_argument("--manifest", help="re-run the configuration stored in a manifest.json")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--shots", type=int, help="labeled rows per novel class (k)")
    p.add_argument("--full-test", action="store_true", help="score every test row instead of episodes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sprint", description="Few-shot class-incremental tabular experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one method over several seeds")
    _source_args(p, manifest=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="grid over TrainConfig axes")
    _source_args(p)
    p.add_argument("--axis", action="append", help="key=v1,v2,... (repeatable)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("profile", help="incremental wall-clock of sprint vs dense replay")
    _source_args(p)
    p.add_argument("--epochs", help="comma list of epoch budgets (default 100,200,300)")
    p.add_argument("--methods", help="comma list of methods (default sprint,dense_replay)")
    p.add_argument("--m0", help="comma list of per-class buffer budgets")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset and split config")
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--base", type=int, default=4)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--spacing", type=float, default=10.0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--n-per-class", type=int, default=600)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("audit", help="pseudo-label precision per session and class")
    _source_args(p)
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
