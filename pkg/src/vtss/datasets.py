"""Dataset ingestion, per-class subsampling and resizing.

Images are float32 arrays shaped ``(C, H, W)`` with values in ``[0, 1]`` and
``H == W``.  A :class:`LabeledImageSet` stores a whole split as one
``(N, C, H, W)`` array so batch operations stay vectorized.
"""

import gzip
import hashlib
import os
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import CapacityError, ConsistencyError, FormatError, ShapeError
from .interp import bilinear_resize

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
RAW_MAGIC = b"VTSS"
CIFAR_PIXELS = 3 * 32 * 32


def check_image(img):
    """Raise ShapeError unless ``img`` is a square ``(C, H, W)`` image with C in {1, 3}."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeError(f"expected (C, H, W) with C in {{1, 3}}, got {img.shape}")
    if img.shape[1] != img.shape[2]:
        raise ShapeError(f"only square images are supported, got {img.shape[1]}x{img.shape[2]}")
    return img


@dataclass(frozen=True, eq=False)
class LabeledImageSet:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    split_name: str = ""

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float32)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if images.ndim != 4:
            if images.size == 0:
                images = images.reshape(0, 1, 1, 1)
            else:
                raise ShapeError(f"images must be (N, C, H, W), got {images.shape}")
        if len(images) != len(labels):
            raise ConsistencyError(f"{len(images)} images but {len(labels)} labels")
        if self.num_classes < 1:
            raise ConsistencyError("num_classes must be positive")
        if len(images):
            check_image(images[0])
            if images.min() < 0.0 or images.max() > 1.0:
                raise ConsistencyError("pixel values must lie in [0, 1]")
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise ConsistencyError(f"labels must lie in [0, {self.num_classes})")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self):
        """Per-image shape ``(C, H, W)``."""
        return tuple(self.images.shape[1:])

    def subset(self, indices, split_name=None):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledImageSet(
            self.images[indices],
            self.labels[indices],
            self.num_classes,
            self.split_name if split_name is None else split_name,
        )

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    @cached_property
    def fingerprint(self):
        """SHA-256 over shape, class count, labels and pixel bytes."""
        h = hashlib.sha256()
        h.update(repr((self.images.shape, self.num_classes)).encode())
        h.update(self.labels.tobytes())
        h.update(self.images.tobytes())
        return h.hexdigest()


def _read_bytes(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _from_bytes(pixels, count, channels, side):
    arr = np.frombuffer(pixels, dtype=np.uint8).reshape(count, channels, side, side)
    return arr.astype(np.float32) / np.float32(255.0)


def load_idx(images_path, labels_path, split_name=""):
    """Load an IDX image/label file pair (MNIST / Fashion-MNIST layout).

    Gzipped files are accepted when the path ends in ``.gz``.
    """
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise FormatError("truncated IDX image header", offset=len(raw))
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic 0x{magic:08x}", offset=0)
    if rows != cols:
        raise FormatError(f"non-square IDX images {rows}x{cols}", offset=8)
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise FormatError(f"IDX image payload should end at {expected}", offset=len(raw))

    lab = _read_bytes(labels_path)
    if len(lab) < 8:
        raise FormatError("truncated IDX label header", offset=len(lab))
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic 0x{lmagic:08x}", offset=0)
    if len(lab) != 8 + lcount:
        raise FormatError(f"IDX label payload should end at {8 + lcount}", offset=len(lab))
    if lcount != count:
        raise ConsistencyError(f"{count} images but {lcount} labels")

    images = _from_bytes(raw[16:], count, 1, rows)
    labels = np.frombuffer(lab[8:], dtype=np.uint8).astype(np.int64)
    num_classes = max(10, int(labels.max()) + 1) if count else 10
    return LabeledImageSet(images, labels, num_classes, split_name)


def write_idx(images_u8, labels, images_path, labels_path):
    """Write ``(N, H, W)`` uint8 images and labels as an IDX pair."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n, h, w = images_u8.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        fh.write(images_u8.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_cifar_binary(batch_paths, label_bytes=1, num_classes=None, split_name=""):
    """Load CIFAR binary batches.

    CIFAR-10 records are one label byte followed by 3072 pixel bytes stored
    channel-major (R plane, G plane, B plane, each row-major).  CIFAR-100
    records carry two label bytes (coarse, fine); the fine label is used.
    """
    record = label_bytes + CIFAR_PIXELS
    if num_classes is None:
        num_classes = 10 if label_bytes == 1 else 100
    chunks = []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) % record:
            raise FormatError(
                f"{path}: length {len(raw)} is not a multiple of record size {record}",
                offset=len(raw) - len(raw) % record,
            )
        chunks.append(np.frombuffer(raw, dtype=np.uint8).reshape(-1, record))
    table = np.concatenate(chunks) if chunks else np.zeros((0, record), np.uint8)
    labels = table[:, label_bytes - 1].astype(np.int64)
    images = table[:, label_bytes:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return LabeledImageSet(images, labels, num_classes, split_name)


def load_raw_tensor(path, split_name=""):
    """Load the ``VTSS`` raw-tensor format.

    Layout (little-endian): magic ``b"VTSS"``, then u32 count, C, H, W,
    num_classes, then ``count`` records of one label byte + ``C*H*W`` pixel
    bytes.
    """
    raw = _read_bytes(path)
    if raw[:4] != RAW_MAGIC:
        raise FormatError(f"bad raw-tensor magic {raw[:4]!r}", offset=0)
    if len(raw) < 24:
        raise FormatError("truncated raw-tensor header", offset=len(raw))
    count, c, h, w, num_classes = struct.unpack("<5I", raw[4:24])
    if h != w:
        raise FormatError(f"non-square raw-tensor images {h}x{w}", offset=12)
    record = 1 + c * h * w
    expected = 24 + count * record
    if len(raw) != expected:
        raise FormatError(f"raw-tensor payload should end at {expected}", offset=len(raw))
    table = np.frombuffer(raw, dtype=np.uint8, offset=24).reshape(count, record)
    labels = table[:, 0].astype(np.int64)
    images = table[:, 1:].reshape(count, c, h, w).astype(np.float32) / np.float32(255.0)
    if count == 0:
        images = images.reshape(0, c, h, w)
    return LabeledImageSet(images, labels, num_classes, split_name)


def write_raw_tensor(dataset, path):
    """Write ``dataset`` in the ``VTSS`` raw-tensor format.

    Pixels are quantized to the nearest byte, so sets produced by any loader
    in this module round-trip bit-exactly.
    """
    n = len(dataset)
    c, h, w = dataset.images.shape[1:] if n else (1, 1, 1)
    u8 = np.rint(dataset.images * 255.0).astype(np.uint8).reshape(n, c * h * w)
    table = np.concatenate([dataset.labels.astype(np.uint8)[:, None], u8], axis=1)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<5I", n, c, h, w, dataset.num_classes))
        fh.write(table.tobytes())


def make_rng(seed):
    """The package-wide PRNG: NumPy's PCG64 bit generator seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(seed))


def subsample_indices(labels, num_classes, n_per_class, seed, classes=None):
    """Indices of ``n_per_class`` samples per class.

    Classes are visited in ascending order; within a class the member
    indices (ascending) are permuted by one PCG64 stream and the first
    ``n_per_class`` are kept.  Output is class-major.
    """
    rng = make_rng(seed)
    picked = []
    for c in range(num_classes) if classes is None else classes:
        members = np.flatnonzero(labels == c)
        if len(members) < n_per_class:
            raise CapacityError(
                f"class {c} has {len(members)} samples, {n_per_class} requested"
            )
        picked.append(rng.permutation(members)[:n_per_class])
    return np.concatenate(picked) if picked else np.zeros(0, np.int64)


def subsample_per_class(dataset, n_per_class, seed):
    """Return exactly ``n_per_class`` samples of every class, deterministic in ``seed``."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    idx = subsample_indices(dataset.labels, dataset.num_classes, n_per_class, seed)
    return dataset.subset(idx)


def select_classes(dataset, n_classes, seed):
    """Keep the samples of ``n_classes`` classes chosen by a seeded permutation.

    Labels keep their original values.
    """
    if not 1 <= n_classes <= dataset.num_classes:
        raise CapacityError(f"cannot select {n_classes} of {dataset.num_classes} classes")
    chosen = np.sort(make_rng(seed).permutation(dataset.num_classes)[:n_classes])
    return dataset.subset(np.flatnonzero(np.isin(dataset.labels, chosen)))


def resize_to(dataset, side):
    """Bilinearly resize every image to ``side x side``, clamped to [0, 1]."""
    if side < 1:
        raise ValueError("side must be >= 1")
    if len(dataset) == 0 or dataset.images.shape[-1] == side:
        return dataset
    out = np.clip(bilinear_resize(dataset.images, side, side), 0.0, 1.0)
    return LabeledImageSet(out, dataset.labels, dataset.num_classes, dataset.split_name)


# Known dataset layouts below a data root.
_LAYOUTS = {
    "fmnist": {
        "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    },
    "cifar10": {
        "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
        "test": ["test_batch.bin"],
    },
    "cifar100": {"train": ["train.bin"], "test": ["test.bin"]},
    "svhn": {"train": "train.vtss", "test": "test.vtss"},
}


def data_root(root=None):
    return Path(root or os.environ.get("VTSS_DATA_DIR", "data"))


def _first_existing(base, name):
    for candidate in (base / name, base / (name + ".gz")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(base / name)


def load_dataset(name, split, root=None):
    """Load split ``"train"`` or ``"test"`` of a named dataset.

    ``name`` is one of ``fmnist``, ``cifar10``, ``cifar100``, ``svhn``, or a
    path to a raw-tensor file in which ``{split}`` is replaced by the split
    name (a path without the placeholder serves both splits).  Named
    datasets live under ``<root>/<name>/``; ``root`` defaults to
    ``$VTSS_DATA_DIR``.
    """
    if name not in _LAYOUTS:
        return load_raw_tensor(name.replace("{split}", split), split_name=split)
    base = data_root(root) / name
    layout = _LAYOUTS[name][split]
    if name == "fmnist":
        images, labels = layout
        return load_idx(_first_existing(base, images), _first_existing(base, labels), split)
    if name == "svhn":
        return load_raw_tensor(_first_existing(base, layout), split)
    paths = [_first_existing(base, p) for p in layout]
    return load_cifar_binary(paths, label_bytes=1 if name == "cifar10" else 2, split_name=split)
