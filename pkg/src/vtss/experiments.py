"""Experiment runners: pretraining, frozen-feature evaluation, EXP 1, EXP 2, ablations.

Every runner produces :class:`ResultRecord` rows.  A row's ``fingerprint``
hashes everything that determines its numbers (data, task, injection,
architecture, optimizer, sizes, seed), so identical fingerprints mean
bit-identical reruns when augmentation is off.
"""

import ast
import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from . import datasets as D
from . import pretext as P
from .errors import ConfigError, ConsistencyError
from .model import (DESK_ARCH, PAPER_ARCH, ProbeModel, blocks_hash, build_backbone,
                    build_classifier_head, freeze_up_to, load_checkpoint, save_checkpoint)
from .trainer import (DESK_OPTIMIZER, PAPER_OPTIMIZER, ArraySet, OptimizerSpec,
                      evaluate_accuracy, to_tensor, train)
from .transforms import IDENTITY, CropFrame, apply, parse

log = logging.getLogger(__name__)

PROFILES = {
    "paper": {"arch": PAPER_ARCH, "optimizer": PAPER_OPTIMIZER},
    "desk": {"arch": DESK_ARCH, "optimizer": DESK_OPTIMIZER, "train_per_class": 500,
             "pretext_test_per_class": 100},
}

EXP2_TASKS = {
    "R": ("rot", 5), "T": ("trans", 5), "S": ("scale", 5),
    "R+T": ("rot+trans", 5), "S+T": ("scale+trans", 5), "R+S": ("rot+scale", 5),
    "R+T+S": ("rot+trans+scale", 5),
    "S(full)": ("scale", 0), "R(full)": ("rot", 0),
}
EXP2_FS = {"FS3": 5, "FS4": 5, "FS3(full)": 0, "FS4(full)": 0}
EXP2_ROWS = ["R", "T", "S", "R+T", "S+T", "R+S", "R+T+S", "FS3", "FS4",
             "S(full)", "R(full)", "FS3(full)", "FS4(full)"]
SAMPLE_GRID = [20, 100, 400, 1000, 5000]
CLASS_GRID = [1, 2, 3, 5, 8, 10]

NUMERIC_MODULES = ("interp", "datasets", "transforms", "pretext", "model", "trainer",
                   "experiments")

CSV_COLUMNS = ["experiment", "row-id", "dataset", "task", "injection", "pretext_acc",
               "semisup_acc", "seed", "runtime_s", "fingerprint", "checkpoint_hash"]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    dataset: str = "fmnist"
    data_root: str = None
    resize: int = None
    task: str = "rotation"
    margin: int = None
    translation_pixels: int = 5
    zooms: tuple = (2, 4)
    injection: tuple = ()
    injection_mode: str = "per_epoch"
    profile: str = "paper"
    num_blocks: int = None
    convs_per_block: int = None
    channels: int = None
    epochs: int = None
    milestones: tuple = None
    batch_size: int = None
    base_lr: float = None
    lr_factor: float = None
    momentum: float = None
    weight_decay: float = None
    schedule: str = None
    tap_block: int = 2
    seed: int = 0
    seeds: int = 1
    train_per_class: int = None
    semisup_per_class: int = None
    test_per_class: int = None
    pretext_test_per_class: int = None
    augment_pretext: bool = False
    augment_semisup: bool = False
    fs_baselines: bool = False
    cache_features: bool = True
    rows: tuple = None
    grid: tuple = None
    sample_grid: tuple = None
    class_counts: tuple = None
    output_dir: str = None
    cache_dir: str = None

    def __post_init__(self):
        for name in ("zooms", "injection", "milestones", "rows", "grid", "sample_grid",
                     "class_counts"):
            value = getattr(self, name)
            if isinstance(value, list):
                object.__setattr__(self, name, tuple(value))
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}", "/profile")
        if self.injection_mode not in ("per_epoch", "fixed"):
            raise ConfigError(f"unknown injection_mode {self.injection_mode!r}", "/injection_mode")

    def get(self, key):
        """Explicit value, else the profile default, else the dataclass default."""
        value = getattr(self, key)
        if value is None:
            value = PROFILES[self.profile].get(key)
        return value

    @property
    def side(self):
        if self.resize:
            return self.resize
        return 32 if self.dataset in ("fmnist", "cifar10", "cifar100", "svhn") else None

    def arch(self, input_shape, num_outputs):
        base = PROFILES[self.profile]["arch"]
        changes = {k: getattr(self, k) for k in ("num_blocks", "convs_per_block", "channels")
                   if getattr(self, k) is not None}
        return base.replace(input_shape=tuple(input_shape), num_outputs=num_outputs, **changes)

    def optimizer(self):
        base = PROFILES[self.profile]["optimizer"]
        changes = {f.name: getattr(self, f.name) for f in fields(OptimizerSpec)
                   if getattr(self, f.name, None) is not None}
        return OptimizerSpec(**{**asdict(base), **changes})

    def make_task(self, task=None, margin="default", full_side=None):
        m = self.margin if margin == "default" else margin
        return P.parse_task(task or self.task, margin=m, translation_pixels=self.translation_pixels,
                            zooms=self.zooms, full_side=full_side)

    def make_injection(self, injection=None):
        items = self.injection if injection is None else injection
        return P.ConflictInjectionSpec(tuple(parse(t) if isinstance(t, str) else t for t in items))

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class ResultRecord:
    experiment: str
    row_id: str
    dataset: str
    task: str
    injection: str
    pretext_acc: float
    semisup_acc: float
    seed: int
    runtime_s: float
    fingerprint: str
    checkpoint_hash: str = ""
    extra: dict = field(default_factory=dict)

    def csv_row(self):
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.4f}"
        return [self.experiment, self.row_id, self.dataset, self.task, self.injection,
                fmt(self.pretext_acc), fmt(self.semisup_acc), str(self.seed),
                f"{self.runtime_s:.1f}", self.fingerprint, self.checkpoint_hash]

    def stable_row(self):
        """CSV row without the run-time column."""
        row = self.csv_row()
        return row[:8] + row[9:]

    def to_dict(self):
        return asdict(self)


def _fp(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


@lru_cache(maxsize=1)
def code_version():
    """Hash of the source files that determine experiment numbers; part of every cache key."""
    h = hashlib.sha256()
    here = Path(__file__).parent
    for path in sorted(here / f"{m}.py" for m in NUMERIC_MODULES):
        h.update(path.name.encode())
        h.update(_code_only(path.read_text()).encode())
    return h.hexdigest()[:16]


def _code_only(source):
    """Syntax tree dump without docstrings, so documentation edits keep cache entries valid."""
    tree = ast.parse(source)
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if (isinstance(node, (ast.Module, ast.ClassDef, ast.FunctionDef, ast.AsyncFunctionDef))
                and body and isinstance(body[0], ast.Expr)
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str)):
            node.body = body[1:] or [ast.Pass()]
    return ast.dump(tree)


@lru_cache(maxsize=8)
def _load_split(dataset, split, root, side):
    data = D.load_dataset(dataset, split, root)
    if side and data.shape[-1] != side:
        data = D.resize_to(data, side)
    return data


@dataclass
class PreparedData:
    train: D.LabeledImageSet
    test: D.LabeledImageSet
    semisup: D.LabeledImageSet
    pretext_test: D.LabeledImageSet


def prepare_data(cfg, seed):
    """Load, resize and subsample the splits an experiment row needs.

    The pretext training subset uses ``seed``; the labeled (semi-supervised)
    subset reuses it unless ``semisup_per_class`` asks for a different size.
    """
    train = _load_split(cfg.dataset, "train", cfg.data_root, cfg.side)
    test = _load_split(cfg.dataset, "test", cfg.data_root, cfg.side)
    n = cfg.get("train_per_class")
    sub = D.subsample_per_class(train, n, seed) if n else train
    ns = cfg.get("semisup_per_class")
    semisup = D.subsample_per_class(train, ns, seed + 7919) if ns else sub
    nt = cfg.get("test_per_class")
    test = D.subsample_per_class(test, nt, 104729) if nt else test
    npt = cfg.get("pretext_test_per_class")
    ptest = D.subsample_per_class(test, npt, 1299709) if npt else test
    return PreparedData(sub, test, semisup, ptest)


def channel_stats(images):
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(np.float32), np.maximum(std, 1e-6).astype(np.float32)


def framed(dataset, frame):
    """The identity view of ``dataset`` under ``frame`` (center crop when margin > 0)."""
    if frame.margin == 0:
        return dataset
    return D.LabeledImageSet(apply(IDENTITY, dataset.images, frame), dataset.labels,
                             dataset.num_classes, dataset.split_name)


@dataclass
class PretrainResult:
    backbone: torch.nn.Module
    task: P.VtssTaskSpec
    pretext_acc: float
    checkpoint_hash: str
    report: object
    fingerprint: str


def _row_fingerprint(cfg, data, task, injection, seed, kind, extra=None):
    return _fp({
        "kind": kind,
        "train": data.train.fingerprint, "test": data.test.fingerprint,
        "semisup": data.semisup.fingerprint, "pretext_test": data.pretext_test.fingerprint,
        "task": task.encodings() if task else None, "margin": task.frame.margin if task else None,
        "injection": injection.label() if injection else None,
        "injection_mode": cfg.injection_mode,
        "arch": asdict(cfg.arch((0, 0, 0), 1)), "optimizer": asdict(cfg.optimizer()),
        "tap": cfg.tap_block, "seed": seed,
        "augment": [cfg.augment_pretext, cfg.augment_semisup],
        "extra": extra,
    })


def run_pretrain(cfg, data=None, seed=None, task=None, injection=None, checkpoint_path=None):
    """Train a backbone on the (optionally injected) pretext stream."""
    seed = cfg.seed if seed is None else seed
    data = data or prepare_data(cfg, seed)
    side = data.train.shape[-1]
    task = task or cfg.make_task(full_side=side)
    injection = cfg.make_injection() if injection is None else injection
    crop = task.frame.crop_side(side)
    arch = cfg.arch((data.train.shape[0], crop, crop), task.num_classes)
    backbone = build_backbone(arch, seed)
    backbone.set_normalization(*channel_stats(framed(data.train, task.frame).images))
    backbone = backbone.to(memory_format=torch.channels_last)
    report = train(backbone, data.train, cfg.optimizer(), augment=cfg.augment_pretext,
                   seed=seed + 1, task=task, injection=injection,
                   injection_mode=cfg.injection_mode, test=data.pretext_test,
                   test_injection=injection)
    digest = report.final_hash
    if checkpoint_path:
        save_checkpoint(checkpoint_path, backbone, seed,
                        extra={"task": task.encodings(), "margin": task.frame.margin,
                               "injection": injection.label()})
    fp = _row_fingerprint(cfg, data, task, injection, seed, "pretrain")
    return PretrainResult(backbone, task, 100.0 * report.test_accuracy[-1], digest, report, fp)


@torch.no_grad()
def extract_features(backbone, images, tap_block, batch_size=256):
    backbone.eval()
    out = [backbone.features(to_tensor(images[lo:lo + batch_size]), tap_block).numpy()
           for lo in range(0, len(images), batch_size)]
    return np.ascontiguousarray(np.concatenate(out), dtype=np.float32)


@dataclass
class SemisupResult:
    accuracy: float
    frozen_hash_before: str
    frozen_hash_after: str
    report: object


def run_semisup_eval(backbone, cfg, data, frame=CropFrame(), seed=None):
    """Freeze the backbone up to the tap block and train a classifier head on top.

    Training and test inputs are pristine (never injected) identity views
    under ``frame``.  Returns test accuracy in percent.  With augmentation
    off the frozen features are computed once and the head trains on them;
    this is numerically the same model as training the composed network
    with frozen blocks in evaluation mode.
    """
    seed = cfg.seed if seed is None else seed
    tap = cfg.tap_block
    freeze_up_to(backbone, tap)
    before = blocks_hash(backbone, tap)
    labeled, test = framed(data.semisup, frame), framed(data.test, frame)
    if labeled.shape[1:] != backbone.spec.input_shape[1:]:
        raise ConfigError(f"backbone expects inputs {backbone.spec.input_shape}, data is {labeled.shape}")
    in_shape = backbone.spec.tap_shape(tap)
    head = build_classifier_head(backbone.spec, in_shape, labeled.num_classes, seed + 2)
    head = head.to(memory_format=torch.channels_last)
    spec = cfg.optimizer()
    if cfg.cache_features and not cfg.augment_semisup:
        feats = ArraySet(extract_features(backbone, labeled.images, tap), labeled.labels,
                         labeled.num_classes)
        tfeats = ArraySet(extract_features(backbone, test.images, tap), test.labels,
                          test.num_classes)
        report = train(head, feats, spec, seed=seed + 3, test=tfeats)
    else:
        probe = ProbeModel(backbone, tap, head)
        report = train(probe, labeled, spec, augment=cfg.augment_semisup, seed=seed + 3, test=test)
    after = blocks_hash(backbone, tap)
    return SemisupResult(100.0 * report.test_accuracy[-1], before, after, report)


def run_fully_supervised(cfg, data, blocks, frame=CropFrame(), seed=None):
    """Fully supervised baseline trained end to end on labeled data.

    ``blocks=3``: backbone blocks 1..tap plus one head block (the
    complexity-matched counterpart of the frozen pipeline).  ``blocks=4``:
    the full backbone with a class-count output layer.
    """
    seed = cfg.seed if seed is None else seed
    labeled, test = framed(data.semisup, frame), framed(data.test, frame)
    side = labeled.shape[-1]
    arch = cfg.arch((labeled.shape[0], side, side), labeled.num_classes)
    backbone = build_backbone(arch, seed)
    backbone.set_normalization(*channel_stats(labeled.images))
    if blocks == 3:
        head = build_classifier_head(arch, arch.tap_shape(cfg.tap_block), labeled.num_classes, seed + 2)
        model = ProbeModel(backbone, cfg.tap_block, head)
    else:
        model = backbone
    model = model.to(memory_format=torch.channels_last)
    report = train(model, labeled, cfg.optimizer(), augment=cfg.augment_semisup,
                   seed=seed + 3, test=test)
    return 100.0 * report.test_accuracy[-1], report


def _cache_path(cfg, fingerprint):
    if not cfg.cache_dir:
        return None
    return Path(cfg.cache_dir) / f"{fingerprint}-{code_version()}.json"


def _cached(cfg, fingerprint):
    path = _cache_path(cfg, fingerprint)
    if path is not None and path.exists():
        return json.loads(path.read_text())
    return None


def _store(cfg, fingerprint, payload):
    path = _cache_path(cfg, fingerprint)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1))


def vtss_row(cfg, experiment, row_id, task_text=None, margin="default", injection=None,
             seed=None, data=None, pretrain_train=None):
    """One pretrain + frozen-evaluation row."""
    seed = cfg.seed if seed is None else seed
    data = data or prepare_data(cfg, seed)
    side = data.train.shape[-1]
    task = cfg.make_task(task_text, margin, full_side=side)
    injection = cfg.make_injection(injection)
    if pretrain_train is not None:
        pretrain_data = replace(data, train=pretrain_train)
    else:
        pretrain_data = data
    fp = _row_fingerprint(cfg, pretrain_data, task, injection, seed, "vtss")
    hit = _cached(cfg, fp)
    if hit is None:
        start = time.perf_counter()
        pre = run_pretrain(cfg, pretrain_data, seed, task, injection)
        semi = run_semisup_eval(pre.backbone, cfg, data, task.frame, seed)
        if semi.frozen_hash_before != semi.frozen_hash_after:
            raise ConsistencyError("frozen blocks changed during head training")
        hit = {"pretext_acc": pre.pretext_acc, "semisup_acc": semi.accuracy,
               "checkpoint_hash": pre.checkpoint_hash,
               "runtime_s": time.perf_counter() - start,
               "pretext_curve": pre.report.test_accuracy, "pretext_losses": pre.report.losses,
               "semisup_curve": semi.report.test_accuracy}
        _store(cfg, fp, hit)
    return ResultRecord(experiment, row_id, cfg.dataset, task.name or "+".join(task.encodings()),
                        injection.label(), hit["pretext_acc"], hit["semisup_acc"], seed,
                        hit["runtime_s"], fp, hit["checkpoint_hash"],
                        {"pretext_curve": hit["pretext_curve"], "semisup_curve": hit["semisup_curve"],
                         "margin": task.frame.margin, "num_classes": task.num_classes})


def random_feature_row(cfg, experiment="control", row_id="random", seed=None, data=None,
                       margin="default"):
    """Frozen, randomly initialized backbone evaluated like a pretrained one."""
    seed = cfg.seed if seed is None else seed
    data = data or prepare_data(cfg, seed)
    side = data.train.shape[-1]
    task = cfg.make_task(full_side=side, margin=margin)
    fp = _row_fingerprint(cfg, data, task, None, seed, "random")
    hit = _cached(cfg, fp)
    if hit is None:
        start = time.perf_counter()
        crop = task.frame.crop_side(side)
        backbone = build_backbone(cfg.arch((data.train.shape[0], crop, crop), task.num_classes), seed)
        backbone.set_normalization(*channel_stats(framed(data.train, task.frame).images))
        backbone = backbone.to(memory_format=torch.channels_last)
        semi = run_semisup_eval(backbone, cfg, data, task.frame, seed)
        hit = {"semisup_acc": semi.accuracy, "runtime_s": time.perf_counter() - start,
               "semisup_curve": semi.report.test_accuracy}
        _store(cfg, fp, hit)
    return ResultRecord(experiment, row_id, cfg.dataset, "random-init", "", float("nan"),
                        hit["semisup_acc"], seed, hit["runtime_s"], fp, "",
                        {"semisup_curve": hit["semisup_curve"]})


def fs_row(cfg, experiment, row_id, blocks, margin=0, seed=None, data=None):
    seed = cfg.seed if seed is None else seed
    data = data or prepare_data(cfg, seed)
    frame = CropFrame(margin)
    fp = _row_fingerprint(cfg, data, None, None, seed, f"fs{blocks}", extra=margin)
    hit = _cached(cfg, fp)
    if hit is None:
        start = time.perf_counter()
        acc, report = run_fully_supervised(cfg, data, blocks, frame, seed)
        hit = {"semisup_acc": acc, "runtime_s": time.perf_counter() - start,
               "curve": report.test_accuracy}
        _store(cfg, fp, hit)
    return ResultRecord(experiment, row_id, cfg.dataset, f"fully-supervised-{blocks}",
                        "", float("nan"), hit["semisup_acc"], seed, hit["runtime_s"], fp, "",
                        {"margin": margin, "curve": hit["curve"],
                         "regime": "pristine labeled data, no injection, same optimizer"})


def _call(job):
    fn, args, kwargs = job
    return fn(*args, **kwargs)


def run_jobs(jobs, n_jobs=1):
    """Run ``(fn, args, kwargs)`` jobs, in worker processes when ``n_jobs > 1``."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [_call(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_call, jobs))


def _seeds(cfg):
    return [cfg.seed + i for i in range(max(1, cfg.seeds))]


def run_exp1(cfg, n_jobs=1):
    """Conflict-injection study: one row per cumulative injection run (+ FS rows)."""
    full_side = cfg.side or _load_split(cfg.dataset, "train", cfg.data_root, None).shape[-1]
    task = cfg.make_task(full_side=full_side)
    schedule = P.make_exp1_schedule(task)
    jobs = []
    for seed in _seeds(cfg):
        for i, inj in enumerate(schedule, start=1):
            jobs.append((vtss_row, (cfg, "exp1", f"run{i}"),
                         {"injection": inj.instantiations, "seed": seed}))
        if cfg.fs_baselines:
            for blocks in (3, 4):
                jobs.append((fs_row, (cfg, "exp1", f"FS{blocks}", blocks, task.frame.margin),
                             {"seed": seed}))
    return run_jobs(jobs, n_jobs)


def run_exp2(cfg, n_jobs=1):
    """Individual and additive-combination tasks, center-crop and full-crop rows."""
    rows = list(cfg.rows or EXP2_ROWS)
    jobs = []
    for seed in _seeds(cfg):
        for row in rows:
            if row in EXP2_TASKS:
                text, margin = EXP2_TASKS[row]
                jobs.append((vtss_row, (cfg, "exp2", row, text, margin), {"seed": seed}))
            elif row in EXP2_FS:
                jobs.append((fs_row, (cfg, "exp2", row, int(row[2]), EXP2_FS[row]),
                             {"seed": seed}))
            else:
                raise ConfigError(f"unknown EXP 2 row {row!r}", "/rows")
    return run_jobs(jobs, n_jobs)


def _grid_entry(entry):
    """``(task_text, margin)`` for an ablation grid entry.

    Strings are task shorthands; translation shifts get a margin equal to
    the shift unless a ``{"task", "margin"}`` mapping says otherwise.
    """
    if isinstance(entry, dict):
        return entry["task"], entry.get("margin", "default")
    text = entry.strip()
    if text.startswith("trans") and ":" in text and "+" not in text:
        return text, int(text.split(":")[1])
    if text.startswith("["):
        shifts = [int(p.split(":")[2]) for p in text.strip("[]").split(",") if p.startswith("trans")]
        return text, max(shifts, default=0)
    return text, "default"


def run_ablation_range(cfg, grid=None, n_jobs=1):
    """Semi-supervised accuracy for each task in ``grid`` (transformation range)."""
    grid = list(grid or cfg.grid or [])
    if not grid:
        raise ConfigError("ablation grid is empty", "/grid")
    jobs = []
    for seed in _seeds(cfg):
        for entry in grid:
            text, margin = _grid_entry(entry)
            jobs.append((vtss_row, (cfg, "ablate-range", text, text, margin), {"seed": seed}))
    return run_jobs(jobs, n_jobs)


def run_ablation_samples(cfg, grid=None):
    """Matrix of C over (pretext samples/class, labeled samples/class).

    Returns ``(records, matrix, diagnostics)``; ``matrix[i, j]`` uses
    ``grid[i]`` pretext and ``grid[j]`` labeled samples per class.
    """
    grid = list(grid or cfg.sample_grid or SAMPLE_GRID)
    records = []
    matrix = np.full((len(grid), len(grid)), np.nan)
    for i, nv in enumerate(grid):
        for j, ns in enumerate(grid):
            sub = replace(cfg, train_per_class=nv, semisup_per_class=ns)
            rec = vtss_row(sub, "ablate-samples", f"v{nv}-s{ns}")
            records.append(rec)
            matrix[i, j] = rec.semisup_acc
    asym = [abs(matrix[i, j] - matrix[j, i]) for i in range(len(grid)) for j in range(i + 1, len(grid))]
    diag = {"grid": grid, "max_asymmetry": float(max(asym, default=0.0)),
            "mean_asymmetry": float(np.mean(asym)) if asym else 0.0,
            "all_finite": bool(np.isfinite(matrix).all())}
    return records, matrix, diag


def run_ablation_classes(cfg, class_counts=None):
    """C as a function of how many classes the pretext task sees.

    The pretext subset keeps only a seeded choice of classes; the labeled
    set and the test set always cover every class.
    """
    counts = list(class_counts or cfg.class_counts or CLASS_GRID)
    records = []
    base = prepare_data(cfg, cfg.seed)
    for k in counts:
        pre_train = D.select_classes(base.train, k, cfg.seed)
        records.append(vtss_row(cfg, "ablate-classes", f"classes{k}", data=base,
                                pretrain_train=pre_train))
    curve = [r.semisup_acc for r in records]
    gains = list(np.diff(curve))
    diag = {"class_counts": counts, "curve": curve, "gains": gains,
            "monotone_within_1pt": bool(all(g >= -1.0 for g in gains)),
            "diminishing": bool(len(gains) < 2 or np.mean(gains[len(gains) // 2:]) <= np.mean(gains[:len(gains) // 2]))}
    return records, diag


def write_results(records, out_dir, stem, manifest_hash="", extra=None):
    """Write ``<stem>.csv`` and ``<stem>.json``; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in records:
        writer.writerow(rec.csv_row())
    csv_path = out / f"{stem}.csv"
    csv_path.write_text(buf.getvalue())
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps({"manifest": manifest_hash,
                                     "records": [r.to_dict() for r in records],
                                     **(extra or {})}, indent=1, default=float))
    return csv_path, json_path


def read_results_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def load_backbone(path):
    model, payload = load_checkpoint(path)
    return model.to(memory_format=torch.channels_last), payload
