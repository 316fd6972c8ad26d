"""Self-supervised task construction, batch expansion and conflict injection."""

from dataclasses import dataclass

import numpy as np

from . import transforms as T
from .errors import GeometryError, ShardError, SpecError
from .transforms import IDENTITY, CropFrame, Transformation

TRANSLATION_ORDER = ("up", "down", "left", "right")
# Injection order for EXP-1-style translation runs: C, C+U, C+U+R, C+U+D+L, C+U+D+L+R.
TRANSLATION_INJECTION_ROWS = ((), ("up",), ("up", "right"), ("up", "down", "left"),
                              ("up", "down", "left", "right"))


@dataclass(frozen=True)
class VtssTaskSpec:
    """An N-way pretext task; label ``k`` means instantiation ``k`` was applied."""

    instantiations: tuple
    frame: CropFrame = CropFrame()
    name: str = ""

    def __post_init__(self):
        insts = tuple(self.instantiations)
        object.__setattr__(self, "instantiations", insts)
        if len(insts) < 2:
            raise SpecError("a pretext task needs at least one non-identity instantiation")
        if not insts[0].is_identity or any(t.is_identity for t in insts[1:]):
            raise SpecError("exactly one identity is required, at label 0")
        codes = [t.encode() for t in insts]
        if len(set(codes)) != len(codes):
            raise SpecError(f"duplicate instantiations in {codes}")

    @property
    def num_classes(self):
        return len(self.instantiations)

    def encodings(self):
        return [t.encode() for t in self.instantiations]

    def check_geometry(self, full_side):
        """Raise GeometryError if any instantiation cannot run on ``full_side`` images."""
        crop = self.frame.crop_side(full_side)
        for t in self.instantiations:
            if t.kind == "translation" and t.amount > self.frame.margin:
                raise GeometryError(f"{t}: shift exceeds margin {self.frame.margin}")
            if t.kind == "scale" and 2 * t.amount >= crop:
                raise GeometryError(f"{t}: zoom too large for crop side {crop}")


@dataclass(frozen=True)
class ConflictInjectionSpec:
    """Instantiations injected into the original data; identity is implied."""

    instantiations: tuple = ()

    def __post_init__(self):
        insts = tuple(self.instantiations)
        object.__setattr__(self, "instantiations", insts)
        codes = [t.encode() for t in insts]
        if len(set(codes)) != len(codes) or "id" in codes:
            raise SpecError(f"injection must list distinct non-identity instantiations: {codes}")

    @property
    def num_shards(self):
        return len(self.instantiations) + 1

    def label(self):
        return "+".join(["id"] + [t.encode() for t in self.instantiations])


def make_rotation_task(margin=0):
    return VtssTaskSpec((IDENTITY, T.rot(1), T.rot(2), T.rot(3)), CropFrame(margin), "rotation")


def make_translation_task(pixels=5, margin=5):
    if pixels > margin:
        raise GeometryError(f"translation by {pixels} needs a margin of at least {pixels}")
    insts = (IDENTITY,) + tuple(T.trans(d, pixels) for d in TRANSLATION_ORDER)
    return VtssTaskSpec(insts, CropFrame(margin), "translation")


def make_scale_task(zooms=(2, 4), margin=5, full_side=None):
    """Identity plus one zoom instantiation per entry of ``zooms``.

    When ``full_side`` is given the largest zoom is also checked against
    the crop side.
    """
    zooms = list(zooms)
    if not zooms:
        raise SpecError("scale task needs at least one zoom")
    if len(set(zooms)) != len(zooms):
        raise SpecError(f"duplicate zooms {zooms}")
    if any(z < 1 for z in zooms) or zooms != sorted(zooms):
        raise SpecError(f"zooms must be positive and strictly increasing: {zooms}")
    frame = CropFrame(margin)
    if full_side is not None and 2 * zooms[-1] >= frame.crop_side(full_side):
        raise SpecError(f"zoom {zooms[-1]} too large for crop side {frame.crop_side(full_side)}")
    return VtssTaskSpec((IDENTITY,) + tuple(T.scale(z) for z in zooms), frame, "scale")


def make_task(instantiations, margin=0, name="custom"):
    """Task from explicit non-identity instantiations (identity is prepended)."""
    insts = [t for t in instantiations if not t.is_identity]
    return VtssTaskSpec((IDENTITY, *insts), CropFrame(margin), name)


def combine(tasks):
    """Additive combination sharing a single identity class at label 0."""
    tasks = list(tasks)
    if not tasks:
        raise SpecError("nothing to combine")
    if len(tasks) == 1:
        return tasks[0]
    frames = {t.frame for t in tasks}
    if len(frames) != 1:
        raise SpecError(f"cannot combine tasks with different crop frames {sorted(f.margin for f in frames)}")
    insts = [IDENTITY]
    for task in tasks:
        insts.extend(task.instantiations[1:])
    return VtssTaskSpec(tuple(insts), tasks[0].frame, "+".join(t.name for t in tasks))


_TASK_ALIASES = {"rotation": "rot", "translation": "trans", "scale": "scale",
                 "rot": "rot", "trans": "trans", "r": "rot", "t": "trans", "s": "scale"}


def parse_task(text, margin=None, translation_pixels=5, zooms=(2, 4), full_side=None):
    """Build a task from shorthand such as ``rotation``, ``rot+trans``, ``scale:2,4``.

    Parts are joined with ``+``.  ``trans`` takes an optional pixel count
    (``trans:1``) and ``scale`` an optional zoom list (``scale:1,2``); a bare
    list of encodings in brackets (``[rot:90,trans:up:5]``) builds a custom
    task.  The margin defaults to 0 for rotation-only tasks and to 5
    otherwise; a translation shift larger than the margin is rejected.
    """
    text = text.strip()
    if text.startswith("["):
        insts = [T.parse(p) for p in text.strip("[]").split(",") if p.strip()]
        m = margin if margin is not None else max(
            [int(t.amount) for t in insts if t.kind == "translation"], default=0)
        task = make_task(insts, m)
        if full_side is not None:
            task.check_geometry(full_side)
        return task
    parts = []
    for raw in text.split("+"):
        head, _, arg = raw.strip().partition(":")
        kind = _TASK_ALIASES.get(head.lower())
        if kind is None:
            raise SpecError(f"unknown task component {raw!r}")
        parts.append((kind, arg))
    kinds = [k for k, _ in parts]
    if margin is None:
        margin = 0 if kinds == ["rot"] or kinds == ["scale"] else 5
    tasks = []
    for kind, arg in parts:
        if kind == "rot":
            tasks.append(make_rotation_task(margin))
        elif kind == "trans":
            tasks.append(make_translation_task(int(arg) if arg else translation_pixels, margin))
        else:
            zl = [int(z) for z in arg.split(",")] if arg else list(zooms)
            tasks.append(make_scale_task(zl, margin, full_side))
    task = combine(tasks)
    if full_side is not None:
        task.check_geometry(full_side)
    return task


def expand_batch(batch, spec):
    """Copy the whole batch once per instantiation.

    Returns ``(images, labels)`` with ``len(batch) * spec.num_classes``
    entries, label-major: all identity copies first, then every sample under
    instantiation 1, and so on.
    """
    batch = np.asarray(batch)
    images, labels = [], []
    for k, t in enumerate(spec.instantiations):
        try:
            images.append(T.apply(t, batch, spec.frame))
        except Exception as exc:
            raise type(exc)(f"instantiation {t} on batch of {len(batch)}: {exc}") from exc
        labels.append(np.full(len(batch), k, dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


def shard_bounds(batch_size, k):
    """Contiguous shard boundaries; the remainder goes to the earliest shards."""
    if k < 1:
        raise ShardError("need at least one shard")
    if k > batch_size:
        raise ShardError(f"cannot split a batch of {batch_size} into {k} shards")
    base, extra = divmod(batch_size, k)
    sizes = [base + (1 if i < extra else 0) for i in range(k)]
    edges = np.concatenate([[0], np.cumsum(sizes)])
    return [(int(edges[i]), int(edges[i + 1])) for i in range(k)]


def inject_transformations(batch, injection, frame=CropFrame()):
    """Replace shards of ``batch`` by transformed copies.

    Shard 0 is left untouched; shard ``j`` is transformed by injected
    instantiation ``j``.  Images keep their full size (the crop frame is
    applied later, by the pretext task), so the output has the input's
    cardinality and shape.
    """
    batch = np.asarray(batch)
    if not injection.instantiations:
        return batch.copy()
    out = batch.copy()
    bounds = shard_bounds(len(batch), injection.num_shards)
    for t, (lo, hi) in zip(injection.instantiations, bounds[1:]):
        if t.kind == "translation" and t.amount > frame.margin:
            raise GeometryError(f"injected {t} exceeds the crop margin {frame.margin}")
        out[lo:hi] = T.apply_full(t, batch[lo:hi])
    return out


def make_exp1_schedule(task):
    """Cumulative injection runs for a single-transformation task.

    Rotation: no injection, {90}, {90, 180}, {90, 180, 270}.
    Translation: C, C+U, C+U+R, C+U+D+L, C+U+D+L+R.
    """
    rest = task.instantiations[1:]
    kinds = {t.kind for t in rest}
    if kinds == {"rotation"} or kinds == {"scale"} or kinds == {"rotation_interp"}:
        return [ConflictInjectionSpec(rest[:i]) for i in range(len(rest) + 1)]
    if kinds == {"translation"} and len(rest) == 4:
        by_dir = {t.direction: t for t in rest}
        if set(by_dir) == set(TRANSLATION_ORDER):
            return [ConflictInjectionSpec(tuple(by_dir[d] for d in row))
                    for row in TRANSLATION_INJECTION_ROWS]
    raise SpecError(f"no injection schedule for task {task.name!r} ({task.encodings()})")
