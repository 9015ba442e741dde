"""``rcm`` command line: simulate, tag, split, train, evaluate, report.

Each command reads a TOML run config (the bundled one by default), applies
flag overrides, and writes into its own directory under ``workdir`` together
with ``effective_config.json``. Failures print one JSON line on stderr and
exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .evalharness import (
    BASELINE,
    TARGETS,
    BenchmarkConfig,
    EvaluationReport,
    SplitModels,
    assemble_report,
    evaluate_split,
    histogram,
    make_splits,
    train_split,
)
from .features import schema_dump
from .geotag import parse_geofile, tag_shipments
from .rcm import ConfigMismatchError, RCMBundle, variant_name
from .regress import LinearModel
from .synthgen import WORLD_FILE, SynthConfig, bundled_world_path, generate
from .telemetry import ingest, write_csv

logger = logging.getLogger("rcmonitor")

CONFIG_NAME = "effective_config.json"
SECTIONS = {
    "paths": {"workdir", "geofile"},
    "features": {"phi1", "phi2"},
    "weighting": {"schemes", "alpha", "linear_direction", "normalize"},
    "selection": {"schemes"},
    "evaluate": {"clamp_humidity"},
    "synth": {f.name for f in fields(SynthConfig)} - {"seed"},
}
TOP_LEVEL = {"seed", "months"}


class CLIError(Exception):
    pass


def bundled_config_path() -> Path:
    return Path(str(resources.files("rcmonitor") / "data" / "default.toml"))


@dataclass
class RunConfig:
    seed: int = 7
    months: list[str] = field(default_factory=lambda: ["202102", "202103"])
    workdir: str = "rcm-run"
    geofile: str = ""
    phi1: float = 1.0
    phi2: float = 80.0
    weightings: list[str] = field(default_factory=lambda: ["uniform", "linear", "exp"])
    alpha: float = 0.9
    linear_direction: str = "recent_heavy"
    normalize: bool = True
    schemes: list[str] = field(default_factory=lambda: ["local", "global", "recursive"])
    clamp_humidity: bool = True
    synth: dict = field(default_factory=dict)

    @classmethod
    def from_toml(cls, doc: dict) -> "RunConfig":
        unknown = [k for k in doc if k not in TOP_LEVEL and k not in SECTIONS]
        for name, allowed in SECTIONS.items():
            section = doc.get(name, {})
            if not isinstance(section, dict):
                raise CLIError(f"config section [{name}] must be a table")
            unknown += [f"{name}.{k}" for k in section if k not in allowed]
        if unknown:
            raise CLIError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        paths, feats = doc.get("paths", {}), doc.get("features", {})
        wt, sel, ev = doc.get("weighting", {}), doc.get("selection", {}), doc.get("evaluate", {})
        base = cls()
        return cls(
            seed=int(doc.get("seed", base.seed)),
            months=[str(m) for m in doc.get("months", base.months)],
            workdir=paths.get("workdir", base.workdir),
            geofile=paths.get("geofile", base.geofile),
            phi1=float(feats.get("phi1", base.phi1)),
            phi2=float(feats.get("phi2", base.phi2)),
            weightings=list(wt.get("schemes", base.weightings)),
            alpha=float(wt.get("alpha", base.alpha)),
            linear_direction=wt.get("linear_direction", base.linear_direction),
            normalize=bool(wt.get("normalize", base.normalize)),
            schemes=list(sel.get("schemes", base.schemes)),
            clamp_humidity=bool(ev.get("clamp_humidity", base.clamp_humidity)),
            synth=dict(doc.get("synth", {})),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                return cls.from_toml(tomllib.load(fh))
        except FileNotFoundError:
            raise CLIError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise CLIError(f"bad config file {path}: {exc}") from None

    def synth_config(self) -> SynthConfig:
        return SynthConfig.from_mapping({**self.synth, "seed": self.seed})

    def benchmark(self, workers: int = 1) -> BenchmarkConfig:
        return BenchmarkConfig(
            weightings=tuple(self.weightings),
            schemes=tuple(self.schemes),
            alpha=self.alpha,
            linear_direction=self.linear_direction,
            normalize=self.normalize,
            phi1=self.phi1,
            phi2=self.phi2,
            clamp_humidity=self.clamp_humidity,
            workers=workers,
        )

    def stage_dir(self, name: str) -> Path:
        return Path(self.workdir) / name


# flag -> RunConfig field; None values mean "not given"
OVERRIDES = {
    "seed": "seed",
    "months": "months",
    "workdir": "workdir",
    "geofile": "geofile",
    "phi1": "phi1",
    "phi2": "phi2",
    "alpha": "alpha",
    "weightings": "weightings",
    "schemes": "schemes",
}


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config or bundled_config_path())
    changes = {}
    for flag, attr in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            if attr in ("months", "weightings", "schemes"):
                value = [v for v in value.split(",") if v]
            logger.info("flag --%s overrides config: %r -> %r", flag, getattr(cfg, attr), value)
            changes[attr] = value
    cfg = replace(cfg, **changes)
    cfg.benchmark()  # validate enum values early
    return cfg


# -- output directories --------------------------------------------------------


def prepare_out(path: Path, force: bool) -> Path:
    if path.exists() and any(path.iterdir()):
        if not force:
            raise CLIError(f"output directory {path} is not empty; pass --force to overwrite")
        if not (path / CONFIG_NAME).exists():
            raise CLIError(f"refusing to clear {path}: it was not written by rcm")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(out: Path, command: str, cfg: RunConfig, inputs: dict) -> None:
    doc = {
        "tool": "rcmonitor",
        "version": __version__,
        "command": command,
        "config": asdict(cfg),
        "inputs": {k: str(v) for k, v in inputs.items()},
    }
    (out / CONFIG_NAME).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CLIError(f"{what} not found: {path}")
    return path


def variant_dir(name: str) -> str:
    return name.replace("/", "-")


def load_tagged(path: Path):
    res = ingest(require(path, "tagged data"))
    if res.rejects:
        logger.warning("%d rows rejected while reading %s", len(res.rejects), path)
    untagged = [s.shipment_id for s in res.shipments if not s.is_tagged]
    if untagged:
        raise CLIError(f"{len(untagged)} shipment(s) lack environment tags (first: {untagged[0]}); run `rcm tag`")
    return res.shipments


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


# -- commands ------------------------------------------------------------------


def cmd_simulate(args, cfg: RunConfig) -> dict:
    out = prepare_out(Path(args.out or cfg.stage_dir("sim")), args.force)
    data = generate(cfg.synth_config())
    paths = data.write(out)
    echo_config(out, "simulate", cfg, {})
    return {"out": str(out), "rows": len(data.rows), "shipments": len(data.truth.shipments), **{k: str(v) for k, v in paths.items()}}


def _geofile(args, cfg: RunConfig) -> Path:
    if args.geofile:
        return require(Path(args.geofile), "geofile")
    sim_world = cfg.stage_dir("sim") / WORLD_FILE
    return sim_world if sim_world.exists() else bundled_world_path()


def cmd_tag(args, cfg: RunConfig) -> dict:
    data_path = require(Path(args.data or cfg.stage_dir("sim") / "data.csv"), "data file")
    geofile = _geofile(args, cfg)
    stats = Counter()
    items = parse_geofile(geofile, stats)
    res = ingest(data_path)
    out = prepare_out(Path(args.out or cfg.stage_dir("tagged")), args.force)
    tagged = tag_shipments(res.shipments, items)
    write_csv(tagged, out / "tagged.csv")
    res.write_rejects(out / "rejects.csv")
    tags = Counter(m.environment.value for s in tagged for m in s.measurements)
    summary = {
        "shipments": len(tagged),
        "measurements": sum(tags.values()),
        "tags": dict(sorted(tags.items())),
        "rejects": dict(res.reject_counts),
        "nodes_dropped": res.nodes_dropped,
        "geofile_items": len(items),
        "geofile_stats": dict(stats),
    }
    (out / "tag_stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    echo_config(out, "tag", cfg, {"data": data_path, "geofile": geofile})
    return {"out": str(out), **summary}


def _data_path(args, cfg: RunConfig) -> Path:
    return Path(args.data or cfg.stage_dir("tagged") / "tagged.csv")


def cmd_split(args, cfg: RunConfig) -> dict:
    data_path = _data_path(args, cfg)
    ships = load_tagged(data_path)
    out = prepare_out(Path(args.out or cfg.stage_dir("splits")), args.force)
    summary = []
    for split in make_splits(ships, cfg.months):
        (out / f"split_{split.test_month}.json").write_text(json.dumps(split.manifest(), indent=2) + "\n")
        summary.append({"month": split.test_month, "train_legs": len(split.train_legs), "test_legs": len(split.test_legs), "skipped": split.skipped})
    echo_config(out, "split", cfg, {"data": data_path})
    return {"out": str(out), "splits": summary}


def _train_job(job):
    ships, split, bcfg = job
    return train_split(ships, split, bcfg)


def save_split_models(models: SplitModels, split, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "split.json").write_text(json.dumps(split.manifest(), indent=2) + "\n")
    (directory / BASELINE).mkdir(exist_ok=True)
    for t, model in models.baseline.items():
        model.save(directory / BASELINE / f"{t.value}.json")
    for name, bundle in models.bundles.items():
        bundle.save(directory / variant_dir(name))
    (directory / "failures.json").write_text(json.dumps(models.failures, indent=2, sort_keys=True) + "\n")


def load_split_models(directory: Path, bcfg: BenchmarkConfig) -> SplitModels:
    """Load one month's models, checking each bundle against the run config."""
    failures = json.loads(require(directory / "failures.json", "failures file").read_text())
    baseline = {t: LinearModel.load(require(directory / BASELINE / f"{t.value}.json", "baseline model")) for t in TARGETS}
    bundles = {}
    for w, s in bcfg.variants():
        name = variant_name(w, s)
        if name in failures:
            continue
        bundle = RCMBundle.load(require(directory / variant_dir(name), f"model bundle {name}"))
        try:
            bundle.check(w, s)
        except ConfigMismatchError as exc:
            raise ConfigMismatchError(f"{directory.name} {name}: {exc}") from None
        bundles[name] = bundle
    return SplitModels(directory.name, baseline, bundles, failures)


def cmd_train(args, cfg: RunConfig) -> dict:
    data_path = _data_path(args, cfg)
    ships = load_tagged(data_path)
    bcfg = cfg.benchmark(args.workers)
    splits = [s for s in make_splits(ships, cfg.months) if s.skipped is None]
    if not splits:
        raise CLIError("every split was skipped; nothing to train")
    out = prepare_out(Path(args.out or cfg.stage_dir("models")), args.force)
    results = _map(_train_job, [(ships, s, bcfg) for s in splits], args.workers)
    for split, models in zip(splits, results):
        save_split_models(models, split, out / split.test_month)
    echo_config(out, "train", cfg, {"data": data_path})
    return {
        "out": str(out),
        "months": [s.test_month for s in splits],
        "variants": len(bcfg.variants()),
        "failures": {m.month: m.failures for m in results if m.failures},
    }


def _evaluate_job(job):
    ships, split, models, bcfg = job
    return evaluate_split(ships, split, models, bcfg)


def cmd_evaluate(args, cfg: RunConfig) -> dict:
    data_path = _data_path(args, cfg)
    models_dir = require(Path(args.models or cfg.stage_dir("models")), "models directory")
    ships = load_tagged(data_path)
    bcfg = cfg.benchmark(args.workers)
    jobs = []
    for split in make_splits(ships, cfg.months):
        if split.skipped is not None:
            continue
        mdir = require(models_dir / split.test_month, f"models for {split.test_month}")
        saved = json.loads(require(mdir / "split.json", "split manifest").read_text())
        if saved != split.manifest():
            raise CLIError(f"split {split.test_month}: saved manifest does not match the data; retrain")
        jobs.append((ships, split, load_split_models(mdir, bcfg), bcfg))
    if not jobs:
        raise CLIError("every split was skipped; nothing to evaluate")
    out = prepare_out(Path(args.out or cfg.stage_dir("eval")), args.force)
    report = assemble_report(_map(_evaluate_job, jobs, args.workers), bcfg)
    report.to_csv(out / "report.csv")
    report.write_error_dumps(out / "errors")
    audit = {"lookahead_violations": report.lookahead_violations(), "failures": report.failures, "meta": report.meta}
    (out / "audit.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")
    echo_config(out, "evaluate", cfg, {"data": data_path, "models": models_dir})
    return {"out": str(out), "months": report.months, "models": len(report.models), **audit}


def _read_dumps(errors_dir: Path) -> dict[tuple[str, str], list[float]]:
    errs: dict[tuple[str, str], list[float]] = defaultdict(list)
    for path in sorted(errors_dir.glob("errors_*.csv")):
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                model = path.stem.split("_", 2)[2].rsplit("_", 1)[0]
                errs[(model, row["target"])].append(float(row["error"]))
    return errs


def cmd_report(args, cfg: RunConfig) -> dict:
    eval_dir = require(Path(args.eval or cfg.stage_dir("eval")), "evaluation directory")
    audit = json.loads(require(eval_dir / "audit.json", "audit file").read_text())
    report = EvaluationReport.from_csv(require(eval_dir / "report.csv", "report"), meta=audit.get("meta"))
    out = prepare_out(Path(args.out or cfg.stage_dir("report")), args.force)
    md = report.to_markdown()
    (out / "report.md").write_text(md + "\n")
    errs = _read_dumps(eval_dir / "errors")
    per_target: dict[str, float] = defaultdict(float)
    for (_, target), e in errs.items():
        per_target[target] = max(per_target[target], max((abs(x) for x in e), default=0.0))
    written = []
    for (model, target), e in sorted(errs.items()):
        lim = per_target[target] or 1.0
        path = out / f"histogram_{model}_{target}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["lo", "hi", "count"], lineterminator="\n")
            w.writeheader()
            w.writerows(histogram(e, bins=args.bins, limits=(-lim, lim)))
        written.append(path.name)
    echo_config(out, "report", cfg, {"eval": eval_dir})
    if not args.quiet:
        print(md)
    return {"out": str(out), "histograms": len(written)}


COMMANDS = {
    "simulate": cmd_simulate,
    "tag": cmd_tag,
    "split": cmd_split,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config (default: the bundled one)")
    common.add_argument("--workdir", help="root directory for default inputs and outputs")
    common.add_argument("--out", help="output directory for this command")
    common.add_argument("--force", action="store_true", help="replace an existing output directory")
    common.add_argument("--months", help="comma-separated YYYYMM test months")
    common.add_argument("--seed", type=int)
    common.add_argument("--phi1", type=float)
    common.add_argument("--phi2", type=float)
    common.add_argument("--alpha", type=float, help="exponential weighting decay")
    common.add_argument("--weightings", help="comma-separated: uniform,linear,exp")
    common.add_argument("--schemes", help="comma-separated: local,global,recursive")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="parallel splits (default: all cores)")

    p = argparse.ArgumentParser(prog="rcm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rcmonitor {__version__}")
    p.add_argument("--emit-schema", action="store_true", help="print the feature schema as JSON and exit")
    sub = p.add_subparsers(dest="command")
    sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    t = sub.add_parser("tag", parents=[common], help="fill the environment column from a geofile")
    t.add_argument("--data", help="raw telemetry CSV or JSONL")
    t.add_argument("--geofile", help="GeoJSON map (default: simulate's map, else bundled)")
    for name, helptext in (("split", "write split manifests"), ("train", "train baseline and RCM models per split")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--data", help="tagged telemetry")
    e = sub.add_parser("evaluate", parents=[common], help="score trained models on each test month")
    e.add_argument("--data", help="tagged telemetry")
    e.add_argument("--models", help="directory written by `rcm train`")
    r = sub.add_parser("report", parents=[common], help="Markdown tables and error histograms")
    r.add_argument("--eval", help="directory written by `rcm evaluate`")
    r.add_argument("--bins", type=int, default=40)
    r.add_argument("--quiet", action="store_true", help="do not print the tables")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get("RCM_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.emit_schema:
        print(schema_dump())
        return 0
    if not args.command:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = resolve_config(args)
        if args.workers < 1:
            raise CLIError("--workers must be >= 1")
        summary = COMMANDS[args.command](args, cfg)
    except Exception as exc:
        logger.debug("command failed", exc_info=True)
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    if args.command != "report":
        print(json.dumps(summary, default=str, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
