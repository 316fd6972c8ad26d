"""Convolutional backbone, classifier head, freezing and checkpoints.

A conv block is ``convs_per_block`` 3x3 convolutions (stride 1, padding 1),
each followed by batch normalization and ReLU.  Blocks are separated by
3x3/stride-2/padding-1 average pooling; the backbone ends in global
average pooling and one linear layer.
"""

import hashlib
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConsistencyError, RangeError, SpecError

CHECKPOINT_FORMAT = "vtss-checkpoint"
CHECKPOINT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ArchitectureSpec:
    num_blocks: int = 4
    convs_per_block: int = 3
    channels: int = 192
    input_shape: tuple = (3, 32, 32)
    num_outputs: int = 4

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.num_blocks < 1 or self.channels < 1 or self.convs_per_block < 1:
            raise SpecError("num_blocks, convs_per_block and channels must be >= 1")
        if len(self.input_shape) != 3:
            raise SpecError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if self.num_outputs < 1:
            raise SpecError("num_outputs must be >= 1")

    def replace(self, **changes):
        return ArchitectureSpec(**{**asdict(self), **changes})

    def tap_shape(self, tap_block):
        """Shape ``(C, H, W)`` of :func:`forward_features` output at ``tap_block``."""
        if not 1 <= tap_block <= self.num_blocks:
            raise RangeError(f"tap_block must be in [1, {self.num_blocks}], got {tap_block}")
        side = self.input_shape[1]
        for b in range(1, tap_block + 1):
            if b < self.num_blocks:
                side = pooled_side(side)
        return (self.channels, side, side)


PAPER_ARCH = ArchitectureSpec()
DESK_ARCH = ArchitectureSpec(channels=64, convs_per_block=2)


def pooled_side(side):
    """Output side of 3x3 / stride 2 / padding 1 pooling: ``ceil(side / 2)``."""
    return (side + 2 - 3) // 2 + 1


def conv_block(in_ch, out_ch, n_convs):
    layers = []
    for i in range(n_convs):
        layers += [
            nn.Conv2d(in_ch if i == 0 else out_ch, out_ch, 3, 1, 1, bias=False),
            nn.BatchNorm2d(out_ch, eps=BN_EPS, momentum=BN_MOMENTUM),
            nn.ReLU(inplace=True),
        ]
    return nn.Sequential(*layers)


def _init_weights(module, seed):
    """He-normal convs, N(0, 0.01) linear weights, zero biases, BN scale 1 / shift 0."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in))
            elif isinstance(m, nn.Linear):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.01)
                m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.reset_running_stats()


class Backbone(nn.Module):
    """Normalizing front-end, conv blocks with pooling in between, GAP + linear."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        c_in = spec.input_shape[0]
        self.register_buffer("input_mean", torch.zeros(c_in))
        self.register_buffer("input_std", torch.ones(c_in))
        self.blocks = nn.ModuleList(
            conv_block(c_in if b == 0 else spec.channels, spec.channels, spec.convs_per_block)
            for b in range(spec.num_blocks)
        )
        self.pool = nn.AvgPool2d(3, stride=2, padding=1)
        self.fc = nn.Linear(spec.channels, spec.num_outputs)
        self.frozen_blocks = 0

    def set_normalization(self, mean, std):
        with torch.no_grad():
            self.input_mean.copy_(torch.as_tensor(np.asarray(mean), dtype=self.input_mean.dtype))
            self.input_std.copy_(torch.as_tensor(np.asarray(std), dtype=self.input_std.dtype))

    def normalize(self, x):
        return (x - self.input_mean.view(1, -1, 1, 1)) / self.input_std.view(1, -1, 1, 1)

    def features(self, x, tap_block):
        if not 1 <= tap_block <= len(self.blocks):
            raise RangeError(f"tap_block must be in [1, {len(self.blocks)}], got {tap_block}")
        x = self.normalize(x)
        for b in range(tap_block):
            x = self.blocks[b](x)
            if b < len(self.blocks) - 1:
                x = self.pool(x)
        return x

    def forward(self, x):
        x = self.features(x, len(self.blocks))
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))

    def train(self, mode=True):
        super().train(mode)
        for b in range(self.frozen_blocks):
            self.blocks[b].eval()
        return self


class ClassifierHead(nn.Module):
    """One conv block, global average pooling, one linear layer."""

    def __init__(self, in_channels, channels, convs_per_block, num_classes):
        super().__init__()
        self.block = conv_block(in_channels, channels, convs_per_block)
        self.fc = nn.Linear(channels, num_classes)

    def forward(self, x):
        x = self.block(x)
        return self.fc(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))


class ProbeModel(nn.Module):
    """Backbone features at ``tap_block`` followed by a classifier head.

    Used both for frozen-feature evaluation and, unfrozen, as the
    parity-complexity fully supervised baseline.
    """

    def __init__(self, backbone, tap_block, head):
        super().__init__()
        self.backbone = backbone
        self.tap_block = tap_block
        self.head = head

    def forward(self, x):
        return self.head(self.backbone.features(x, self.tap_block))


def build_backbone(spec, seed):
    """Backbone for ``spec`` with deterministic initialization from ``seed``."""
    side = spec.input_shape[1]
    for _ in range(spec.num_blocks - 1):
        side = pooled_side(side)
    if side < 1 or spec.input_shape[1] < 1:
        raise SpecError(f"input side {spec.input_shape[1]} too small for {spec.num_blocks} blocks")
    model = Backbone(spec)
    _init_weights(model, seed)
    return model


def forward_features(model, batch, tap_block):
    return model.features(batch, tap_block)


def build_classifier_head(spec, in_shape, num_classes, seed):
    """Classifier head over features shaped ``in_shape`` = ``(C, H, W)``."""
    if len(in_shape) != 3 or min(in_shape) < 1:
        raise SpecError(f"bad feature shape {in_shape}")
    head = ClassifierHead(in_shape[0], spec.channels, spec.convs_per_block, num_classes)
    _init_weights(head, seed)
    return head


def head_param_count(in_channels, channels, convs_per_block, num_classes):
    """Closed-form trainable parameter count of :class:`ClassifierHead`."""
    convs = 9 * in_channels * channels + (convs_per_block - 1) * 9 * channels * channels
    bn = 2 * channels * convs_per_block
    return convs + bn + channels * num_classes + num_classes


def freeze_up_to(model, block):
    """Freeze parameters and batch-norm statistics of blocks ``1..block``.

    Frozen blocks stay in evaluation mode even when the model is switched to
    training mode, so their running statistics never move.
    """
    backbone = model.backbone if isinstance(model, ProbeModel) else model
    if not 1 <= block <= len(backbone.blocks):
        raise RangeError(f"block must be in [1, {len(backbone.blocks)}], got {block}")
    backbone.frozen_blocks = block
    for b in range(block):
        for p in backbone.blocks[b].parameters():
            p.requires_grad_(False)
    backbone.train(backbone.training)
    return model


def _digest(named_tensors):
    h = hashlib.sha256()
    for name, t in sorted(named_tensors, key=lambda kv: kv[0]):
        arr = t.detach().cpu().contiguous().numpy()
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


def param_hash(module):
    """Content hash of every parameter and buffer (running statistics included)."""
    return _digest(module.state_dict().items())


def blocks_hash(model, upto):
    """Content hash of blocks ``1..upto`` and the input normalization."""
    backbone = model.backbone if isinstance(model, ProbeModel) else model
    state = backbone.state_dict()
    prefixes = tuple(f"blocks.{b}." for b in range(upto)) + ("input_",)
    return _digest((k, v) for k, v in state.items() if k.startswith(prefixes))


def save_checkpoint(path, model, seed, extra=None):
    """Write a versioned, self-describing backbone checkpoint; returns its hash."""
    digest = param_hash(model)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(model.spec),
        "state": {k: v.detach().clone().contiguous() for k, v in model.state_dict().items()},
        "normalization": {
            "mean": model.input_mean.tolist(),
            "std": model.input_std.tolist(),
        },
        "seed": int(seed),
        "hash": digest,
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())
    return digest


def load_checkpoint(path):
    """Rebuild a backbone from :func:`save_checkpoint` output; verifies the hash."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConsistencyError(f"{path} is not a vtss checkpoint")
    if payload["version"] > CHECKPOINT_VERSION:
        raise ConsistencyError(f"checkpoint version {payload['version']} is newer than supported")
    spec = ArchitectureSpec(**payload["arch"])
    model = Backbone(spec)
    model.load_state_dict(payload["state"])
    if param_hash(model) != payload["hash"]:
        raise ConsistencyError(f"{path}: parameter hash mismatch")
    return model, payload
