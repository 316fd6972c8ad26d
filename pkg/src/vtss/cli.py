"""Command-line entry point: ``vtss <command> [options]``.

Exit status is 0 on success, 1 when a command fails at run time and 2 for
usage or configuration errors.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import jsonschema

from . import __version__
from . import conflict as C
from . import datasets as D
from . import experiments as E
from . import plots
from . import summary as S
from .errors import ConfigError, VtssError
from .pretext import parse_task
from .transforms import CropFrame

log = logging.getLogger("vtss")

COMMANDS = ("pretrain", "evaluate", "exp1", "exp2", "ablate-range", "ablate-samples",
            "ablate-classes", "conflict-scan", "report")


def load_schema():
    return json.loads(resources.files("vtss").joinpath("config_schema.json").read_text())


def _pointer(path):
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate_config(doc):
    """Check ``doc`` against the schema and the task geometry; returns an ExperimentConfig."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        if err.validator == "additionalProperties":
            known = set(load_schema()["properties"])
            extra = sorted(set(err.instance) - known) if isinstance(err.instance, dict) else []
            pointer = _pointer(list(err.absolute_path) + extra[:1])
            raise ConfigError(f"unknown key {extra[0]!r}" if extra else err.message, pointer)
        raise ConfigError(err.message, _pointer(err.absolute_path))
    try:
        cfg = E.ExperimentConfig(**doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        parse_task(cfg.task, margin=cfg.margin, translation_pixels=cfg.translation_pixels,
                   zooms=cfg.zooms, full_side=cfg.side)
    except VtssError as exc:
        pointer = "/translation_pixels" if "margin" in str(exc) and "trans" in cfg.task else "/task"
        raise ConfigError(str(exc), pointer) from exc
    try:
        cfg.optimizer()
        cfg.make_injection()
    except VtssError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def parse_config(path):
    """Read and validate a JSON experiment configuration file."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return validate_config(doc)


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_hash: str
    version: str
    code_version: str
    output_dir: str
    seeds: list
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)

    def digest(self):
        body = {k: v for k, v in asdict(self).items() if k not in ("finished", "outputs")}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def write(self):
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"manifest-{self.digest()}.json"
        path.write_text(json.dumps({**asdict(self), "hash": self.digest()}, indent=1) + "\n")
        return path


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest() if path else ""


def _config_from_args(args):
    cfg = parse_config(args.config)
    changes = {}
    if getattr(args, "seeds", None):
        changes["seeds"] = args.seeds
    if getattr(args, "data_root", None):
        changes["data_root"] = args.data_root
    return replace(cfg, **changes) if changes else cfg


def _manifest(args, cfg, command):
    out = args.out or (cfg.output_dir if cfg else None) or f"results/{command}"
    seeds = [cfg.seed + i for i in range(max(1, cfg.seeds))] if cfg else [getattr(args, "seed", 0)]
    return RunManifest(command, str(getattr(args, "config", "") or ""),
                       _file_hash(getattr(args, "config", None)), __version__,
                       E.code_version(), out, seeds, _now())


def _finish(manifest, paths):
    manifest.finished = _now()
    manifest.outputs = [str(p) for p in paths]
    path = manifest.write()
    print(f"manifest {path}")
    return 0


def _write(manifest, records, stem, extra=None):
    extra = dict(extra or {})
    if len({r.seed for r in records}) > 1:
        extra["summary"] = S.summarize(records)
    if stem == "exp1":
        extra["trend"] = S.exp1_trend([r for r in records if r.seed == records[0].seed])
    paths = E.write_results(records, manifest.output_dir, stem, manifest.digest(), extra)
    for rec in records:
        print(",".join(rec.csv_row()))
    return list(paths)


def cmd_pretrain(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "pretrain")
    Path(m.output_dir).mkdir(parents=True, exist_ok=True)
    ckpt = args.checkpoint or str(Path(m.output_dir) / "checkpoint.pt")
    start = time.perf_counter()
    pre = E.run_pretrain(cfg, checkpoint_path=ckpt)
    rec = E.ResultRecord("pretrain", "pretrain", cfg.dataset, pre.task.name,
                         cfg.make_injection().label(), pre.pretext_acc, float("nan"), cfg.seed,
                         time.perf_counter() - start, pre.fingerprint, pre.checkpoint_hash,
                         {"pretext_curve": pre.report.test_accuracy, "checkpoint": ckpt})
    return _finish(m, _write(m, [rec], "pretrain") + [ckpt])


def cmd_evaluate(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "evaluate")
    backbone, payload = E.load_backbone(args.checkpoint)
    data = E.prepare_data(cfg, cfg.seed)
    frame = CropFrame(int(payload["extra"].get("margin", 0)))
    start = time.perf_counter()
    semi = E.run_semisup_eval(backbone, cfg, data, frame)
    rec = E.ResultRecord("evaluate", "evaluate", cfg.dataset, "+".join(payload["extra"].get("task", [])),
                         payload["extra"].get("injection", ""), float("nan"), semi.accuracy,
                         cfg.seed, time.perf_counter() - start, payload["hash"][:16],
                         payload["hash"], {"semisup_curve": semi.report.test_accuracy})
    return _finish(m, _write(m, [rec], "evaluate"))


def cmd_exp1(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "exp1")
    return _finish(m, _write(m, E.run_exp1(cfg, args.jobs), "exp1"))


def cmd_exp2(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "exp2")
    return _finish(m, _write(m, E.run_exp2(cfg, args.jobs), "exp2"))


def cmd_ablate_range(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "ablate-range")
    return _finish(m, _write(m, E.run_ablation_range(cfg, n_jobs=args.jobs), "ablate_range"))


def cmd_ablate_samples(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "ablate-samples")
    records, matrix, diag = E.run_ablation_samples(cfg)
    extra = {"matrix": matrix.tolist(), "diagnostics": diag}
    return _finish(m, _write(m, records, "ablate_samples", extra))


def cmd_ablate_classes(args):
    cfg = _config_from_args(args)
    m = _manifest(args, cfg, "ablate-classes")
    records, diag = E.run_ablation_classes(cfg)
    return _finish(m, _write(m, records, "ablate_classes", {"diagnostics": diag}))


def cmd_conflict_scan(args):
    data = D.load_dataset(args.dataset, args.split, args.data_root)
    if args.resize and data.shape[-1] != args.resize:
        data = D.resize_to(data, args.resize)
    if args.per_class:
        data = D.subsample_per_class(data, args.per_class, args.seed)
    reports = []
    for text in args.task:
        spec = parse_task(text, margin=args.margin, full_side=data.shape[-1])
        rep = C.estimate_conflict_rate(data, spec, args.epsilon, args.mode, args.samples, args.seed)
        reports.append((text, rep))
        print(rep.to_json())
    ranking = C.rank_tasks_by_predicted_usefulness(reports)
    print(f"ranking (epsilon={args.epsilon}, lower conflict first):")
    for i, (name, score) in enumerate(ranking, start=1):
        print(f"{i:>3}  {name:<24} {score:.6f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        m = RunManifest("conflict-scan", "", "", __version__, E.code_version(), str(out),
                        [args.seed], _now())
        path = out / "conflict.json"
        path.write_text(json.dumps({"manifest": m.digest(), "dataset": args.dataset,
                                    "reports": {n: json.loads(r.to_json()) for n, r in reports},
                                    "ranking": ranking}, indent=1) + "\n")
        return _finish(m, [path])
    return 0


def cmd_report(args):
    src = plots.csv_for(args.fig, args.inp)
    if not src.exists():
        raise FileNotFoundError(f"{src} not found; run the {args.fig} command first")
    out = Path(args.out) if args.out else Path(args.inp) / f"{plots.STEMS[args.fig]}.svg"
    m = RunManifest("report", str(src), _file_hash(src), __version__, E.code_version(),
                    str(out.parent), [], _now())
    plots.render(args.fig, E.read_results_csv(src), out)
    print(out)
    return _finish(m, [out])


def build_parser():
    p = argparse.ArgumentParser(prog="vtss", description="Transformation-prediction pretext "
                                "experiments and conflict analysis.")
    p.add_argument("--version", action="version", version=f"vtss {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def with_config(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="JSON experiment configuration")
        sp.add_argument("--out", help="output directory (default: config output_dir or results/<command>)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for independent rows")
        sp.add_argument("--seeds", type=int, help="number of consecutive seeds to run")
        sp.add_argument("--data-root", help="dataset root (default: $VTSS_DATA_DIR or ./data)")
        sp.set_defaults(fn=fn)
        return sp

    sp = with_config("pretrain", cmd_pretrain, "train a backbone on the pretext task")
    sp.add_argument("--checkpoint", help="checkpoint path (default: <out>/checkpoint.pt)")
    sp = with_config("evaluate", cmd_evaluate, "frozen-feature evaluation of a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    with_config("exp1", cmd_exp1, "conflict-injection runs")
    with_config("exp2", cmd_exp2, "individual and combined task rows")
    with_config("ablate-range", cmd_ablate_range, "transformation-range grid")
    with_config("ablate-samples", cmd_ablate_samples, "pretext vs labeled sample-count grid")
    with_config("ablate-classes", cmd_ablate_classes, "pretext class-count sweep")

    sp = sub.add_parser("conflict-scan", help="pixel-space conflict rates of one or more tasks")
    sp.add_argument("--dataset", required=True, help="fmnist, cifar10, cifar100, svhn or a raw-tensor path")
    sp.add_argument("--task", action="append", required=True, help="task shorthand; repeat to rank several")
    sp.add_argument("--split", default="train", choices=["train", "test"])
    sp.add_argument("--margin", type=int)
    sp.add_argument("--epsilon", type=float, default=C.DEFAULT_EPSILON)
    sp.add_argument("--mode", default="auto", choices=["auto", "exact", "sampled"])
    sp.add_argument("--samples", type=int, default=C.DEFAULT_SAMPLES)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--resize", type=int, help="resize images to this side first")
    sp.add_argument("--per-class", type=int, help="subsample this many images per class first")
    sp.add_argument("--data-root")
    sp.add_argument("--out", help="also write conflict.json and a manifest here")
    sp.set_defaults(fn=cmd_conflict_scan)

    sp = sub.add_parser("report", help="render an SVG figure from result CSVs")
    sp.add_argument("--in", dest="inp", required=True, help="directory holding the result CSVs")
    sp.add_argument("--fig", required=True, choices=plots.FIGURES)
    sp.add_argument("--out", help="SVG path (default: <in>/<figure>.svg)")
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "pointer": exc.pointer, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (VtssError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "command": args.command,
                          "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
