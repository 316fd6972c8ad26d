"""SGD training for both the pretext and the downstream phase."""

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .datasets import make_rng
from .errors import RangeError, SpecError, TrainingError
from .model import param_hash
from .pretext import expand_batch, inject_transformations
from .transforms import CropFrame, augment_standard

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerSpec:
    base_lr: float = 0.1
    lr_factor: float = 0.02
    milestones: tuple = (60, 120, 180)
    epochs: int = 200
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # "cumulative": lr is multiplied by lr_factor at every milestone.
    # "staged": lr is base_lr * lr_factor after the first milestone, never compounded.
    schedule: str = "cumulative"

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        ms = self.milestones
        if any(b <= a for a, b in zip(ms, ms[1:])) or (ms and (ms[0] < 1 or ms[-1] >= self.epochs)):
            raise SpecError(f"milestones {ms} must be strictly increasing and inside (0, {self.epochs})")
        if self.schedule not in ("cumulative", "staged"):
            raise SpecError(f"unknown schedule {self.schedule!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise SpecError("epochs and batch_size must be >= 1")


PAPER_OPTIMIZER = OptimizerSpec()
DESK_OPTIMIZER = OptimizerSpec(epochs=30, milestones=(15, 25))


def lr_at(spec, epoch):
    """Learning rate in effect during ``epoch`` (0-based)."""
    if not 0 <= epoch < spec.epochs:
        raise RangeError(f"epoch {epoch} outside [0, {spec.epochs})")
    passed = sum(1 for m in spec.milestones if m <= epoch)
    if spec.schedule == "staged":
        return spec.base_lr * (spec.lr_factor if passed else 1.0)
    return spec.base_lr * spec.lr_factor ** passed


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    final_hash: str = ""

    def digest(self):
        """Hash of everything except wall-clock time."""
        body = json.dumps([self.losses, self.test_accuracy, self.final_hash])
        return hashlib.sha256(body.encode()).hexdigest()

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass(frozen=True)
class ArraySet:
    """Unconstrained ``(inputs, labels)`` pair, e.g. cached frozen features."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self):
        return len(self.labels)


def to_tensor(x):
    x = np.ascontiguousarray(x, dtype=np.float32)
    if not x.flags.writeable:
        x = x.copy()
    t = torch.from_numpy(x)
    if t.dim() == 4:
        t = t.contiguous(memory_format=torch.channels_last)
    return t


def make_optimizer(model, spec):
    """SGD with classical momentum; weight decay skips batch-norm scale/shift."""
    decay, no_decay = [], []
    for module in model.modules():
        for name, p in module.named_parameters(recurse=False):
            if not p.requires_grad:
                continue
            (no_decay if isinstance(module, nn.BatchNorm2d) else decay).append(p)
    groups = [{"params": decay, "weight_decay": spec.weight_decay},
              {"params": no_decay, "weight_decay": 0.0}]
    return torch.optim.SGD([g for g in groups if g["params"]], lr=spec.base_lr,
                           momentum=spec.momentum)


def _prepare(images, labels, rng, augment, task, injection, frame):
    x = images
    if augment:
        x = np.stack([augment_standard(img, rng) for img in x])
    if injection is not None and injection.instantiations:
        x = inject_transformations(x, injection, frame)
    if task is not None:
        return expand_batch(x, task)
    return x, labels


def train(model, data, spec, augment=False, seed=0, task=None, injection=None,
          injection_mode="per_epoch", test=None, test_injection=None, epoch_callback=None):
    """Train ``model`` in place and return a :class:`TrainReport`.

    With ``task`` set, each shuffled batch is expanded by every task
    instantiation (labels are pretext labels) and the loss averages over the
    expanded batch.  ``injection`` replaces shards of each batch before the
    expansion; ``injection_mode="fixed"`` instead transforms the data once,
    giving every sample the same injected instantiation for the whole run.
    Batches smaller than the number of injection shards are skipped.
    """
    if len(data) == 0:
        raise SpecError("cannot train on an empty set")
    rng = make_rng(seed)
    frame = task.frame if task is not None else CropFrame()
    images, labels = data.images, data.labels
    if injection is not None and injection_mode == "fixed":
        order = rng.permutation(len(data))
        images = np.empty_like(images)
        bs = spec.batch_size
        for lo in range(0, len(order), bs):
            idx = order[lo:lo + bs]
            images[idx] = inject_transformations(data.images[idx], injection, frame)
        injection = None
    elif injection_mode not in ("per_epoch", "fixed"):
        raise SpecError(f"unknown injection_mode {injection_mode!r}")
    min_batch = injection.num_shards if injection is not None else 1

    opt = make_optimizer(model, spec)
    report = TrainReport()
    start = time.perf_counter()
    for epoch in range(spec.epochs):
        lr = lr_at(spec, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for step, lo in enumerate(range(0, len(order), spec.batch_size)):
            idx = order[lo:lo + spec.batch_size]
            if len(idx) < min_batch:
                continue
            x, y = _prepare(images[idx], labels[idx], rng, augment, task, injection, frame)
            logits = model(to_tensor(x))
            loss = F.cross_entropy(logits, torch.from_numpy(np.asarray(y, dtype=np.int64)))
            if not torch.isfinite(loss):
                raise TrainingError("non-finite loss", epoch=epoch, step=step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(y)
            count += len(y)
        report.losses.append(total / max(count, 1))
        if test is not None:
            report.test_accuracy.append(
                evaluate_accuracy(model, test, task=task, injection=test_injection,
                                  shard_batch=spec.batch_size))
        else:
            report.test_accuracy.append(float("nan"))
        log.info("epoch %d lr %.2e loss %.4f test %.4f", epoch, lr, report.losses[-1],
                 report.test_accuracy[-1])
        if epoch_callback is not None:
            epoch_callback(epoch, report)
    report.wall_clock_s = time.perf_counter() - start
    report.final_hash = param_hash(model)
    return report


@torch.no_grad()
def predict(model, inputs, batch_size=512):
    """Arg-max predictions in evaluation mode."""
    was_training = model.training
    model.eval()
    out = []
    for lo in range(0, len(inputs), batch_size):
        out.append(model(to_tensor(inputs[lo:lo + batch_size])).argmax(1).numpy())
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, np.int64)


def pretext_stream(data, task, injection=None, shard_batch=128):
    """Deterministic expanded evaluation set: ``(inputs, labels)`` over all pairs.

    ``injection`` shards are assigned over consecutive chunks of
    ``shard_batch`` samples in dataset order.
    """
    xs, ys = [], []
    for lo in range(0, len(data), shard_batch):
        x = data.images[lo:lo + shard_batch]
        if injection is not None and injection.instantiations and len(x) >= injection.num_shards:
            x = inject_transformations(x, injection, task.frame)
        x, y = expand_batch(x, task)
        xs.append(x)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def evaluate_accuracy(model, test, task=None, injection=None, shard_batch=128):
    """Top-1 accuracy in evaluation mode without augmentation.

    For a pretext ``task`` the accuracy runs over every (image, instantiation)
    pair of the expanded test set.
    """
    if task is None:
        inputs, labels = test.images, test.labels
    else:
        inputs, labels = pretext_stream(test, task, injection, shard_batch)
    if len(labels) == 0:
        return float("nan")
    pred = predict(model, inputs)
    return float(np.mean(pred == labels))
