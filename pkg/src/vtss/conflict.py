"""Transformation-conflict measurement in raw pixel space.

For every sample ``x_i`` and every non-identity instantiation ``g`` of a
task, the transformed view ``g(x_i)`` is compared with

* Case A: ``g'(x_j)`` for any other sample ``j != i`` and any other
  non-identity instantiation ``g' != g`` (two different transformations of
  two different samples collide), and
* Case B: the untransformed view ``e(x_j)`` of any other sample ``j != i``.

Distance is the root-mean-square per-pixel difference after the task's
crop frame has been applied to both operands.  A pair conflicts when the
distance is at most ``epsilon``.  Rates are fractions of
(sample, instantiation) pairs with at least one conflicting partner.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import beta

from .datasets import LabeledImageSet, make_rng
from .errors import ConsistencyError, SpecError
from .transforms import IDENTITY, apply, apply_full

EXACT_LIMIT = 2000
DEFAULT_SAMPLES = 100_000
DEFAULT_EPSILON = 0.05


@dataclass
class ConflictReport:
    case_a_rate: float
    case_b_rate: float
    epsilon: float
    pairs_examined: int
    mode: str
    case_a_half_width: float = 0.0
    case_b_half_width: float = 0.0
    dataset_fingerprint: str = ""
    task: tuple = ()

    @property
    def combined_rate(self):
        return self.case_a_rate + self.case_b_rate

    def to_json(self):
        d = asdict(self)
        d["task"] = list(self.task)
        d["combined_rate"] = self.combined_rate
        return json.dumps(d)


def _views(dataset, spec):
    """Flattened float64 identity views ``(n, d)`` and transformed views ``(n, k, d)``."""
    ident = apply(IDENTITY, dataset.images, spec.frame).reshape(len(dataset), -1)
    moved = [apply(t, dataset.images, spec.frame).reshape(len(dataset), -1)
             for t in spec.instantiations[1:]]
    return ident.astype(np.float64), np.stack(moved, axis=1).astype(np.float64)


def rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def _hits(queries, q_sample, q_inst, ident, moved, epsilon, chunk=256):
    """Case A / Case B indicator for each query row.

    ``queries[r]`` is ``moved[q_sample[r], q_inst[r]]``.  Candidates are
    screened with a Gram-matrix distance and confirmed with the direct
    per-pair RMS, so the decision matches a plain double loop.
    """
    n, k, d = moved.shape
    cand = np.concatenate([ident, moved.reshape(n * k, d)])
    cand_sample = np.concatenate([np.arange(n), np.repeat(np.arange(n), k)])
    cand_inst = np.concatenate([np.full(n, -1), np.tile(np.arange(k), n)])
    cand_sq = np.einsum("ij,ij->i", cand, cand)
    tol = epsilon * epsilon * d + 1e-6 * d
    hit_a = np.zeros(len(queries), bool)
    hit_b = np.zeros(len(queries), bool)
    for lo in range(0, len(queries), chunk):
        q = queries[lo:lo + chunk]
        qs, qi = q_sample[lo:lo + chunk], q_inst[lo:lo + chunk]
        sq = np.einsum("ij,ij->i", q, q)[:, None] + cand_sq[None, :] - 2.0 * q @ cand.T
        valid = cand_sample[None, :] != qs[:, None]
        rows, cols = np.nonzero((sq <= tol) & valid)
        if len(rows) == 0:
            continue
        diff = q[rows] - cand[cols]
        close = np.sqrt(np.mean(diff * diff, axis=1)) <= epsilon
        rows, cols = rows[close], cols[close]
        is_b = cand_inst[cols] == -1
        is_a = ~is_b & (cand_inst[cols] != qi[rows])
        hit_b[lo + rows[is_b]] = True
        hit_a[lo + rows[is_a]] = True
    return hit_a, hit_b


def binomial_half_width(successes, trials, confidence=0.95):
    """Half-width of the exact (Clopper-Pearson) binomial interval.

    The interval can be asymmetric around the sample rate; the larger side
    is reported.  Exact intervals never cover less than ``confidence``.
    """
    if trials == 0:
        return 1.0
    alpha = 1.0 - confidence
    p = successes / trials
    lo = 0.0 if successes == 0 else beta.ppf(alpha / 2, successes, trials - successes + 1)
    hi = 1.0 if successes == trials else beta.ppf(1 - alpha / 2, successes + 1, trials - successes)
    return float(max(p - lo, hi - p))


def estimate_conflict_rate(dataset, spec, epsilon=DEFAULT_EPSILON, mode="auto",
                           samples=DEFAULT_SAMPLES, seed=0):
    """Case A / Case B conflict rates of task ``spec`` on ``dataset``.

    ``mode="exact"`` examines every (sample, instantiation) pair;
    ``mode="sampled"`` draws ``samples`` pairs with replacement from a seeded
    generator (each still compared against the whole dataset) and reports
    95% Wilson half-widths.  ``"auto"`` is exact up to 2,000 images.
    """
    if epsilon < 0:
        raise SpecError("epsilon must be >= 0")
    if len(dataset) == 0:
        raise SpecError("dataset is empty")
    if mode == "auto":
        mode = "exact" if len(dataset) <= EXACT_LIMIT else "sampled"
    if mode not in ("exact", "sampled"):
        raise SpecError(f"unknown mode {mode!r}")
    ident, moved = _views(dataset, spec)
    n, k, _ = moved.shape
    if mode == "exact":
        q_sample = np.repeat(np.arange(n), k)
        q_inst = np.tile(np.arange(k), n)
    else:
        rng = make_rng(seed)
        q_sample = rng.integers(0, n, size=samples)
        q_inst = rng.integers(0, k, size=samples)
    queries = moved[q_sample, q_inst]
    hit_a, hit_b = _hits(queries, q_sample, q_inst, ident, moved, epsilon)
    m = len(queries)
    report = ConflictReport(float(hit_a.mean()), float(hit_b.mean()), float(epsilon), m, mode,
                            dataset_fingerprint=dataset.fingerprint,
                            task=tuple(spec.encodings()))
    if mode == "sampled":
        report.case_a_half_width = binomial_half_width(int(hit_a.sum()), m)
        report.case_b_half_width = binomial_half_width(int(hit_b.sum()), m)
    return report


def synthetic_closure_dataset(base, closure):
    """Union of ``base`` with every closure transform of every base image.

    Transforms keep the full image size and the source label; bit-identical
    duplicates are dropped (first occurrence wins).  When ``closure`` plus
    the identity forms a group the result is closed under it.
    """
    images = [base.images]
    labels = [base.labels]
    for t in closure:
        images.append(apply_full(t, base.images))
        labels.append(base.labels)
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    seen, keep = set(), []
    for i, img in enumerate(images):
        key = img.tobytes()
        if key not in seen:
            seen.add(key)
            keep.append(i)
    keep = np.asarray(keep, dtype=np.int64)
    return LabeledImageSet(images[keep], labels[keep], base.num_classes, base.split_name)


def rank_tasks_by_predicted_usefulness(reports):
    """Order ``(task_name, report)`` pairs by ascending combined conflict rate.

    Lower conflict predicts a more useful representation.  Ties break on the
    task name.  All reports must share one epsilon and one dataset.
    """
    reports = list(reports)
    if len({r.epsilon for _, r in reports}) > 1:
        raise ConsistencyError("reports were computed with different epsilons")
    if len({r.dataset_fingerprint for _, r in reports}) > 1:
        raise ConsistencyError("reports were computed on different datasets")
    return sorted(((name, r.combined_rate) for name, r in reports), key=lambda x: (x[1], x[0]))
