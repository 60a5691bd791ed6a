"""Datasets: MNIST IDX and CIFAR-10 binary parsers, seeded subsets, synthetic mixtures.

Features are always float64 in [0, 1]; labels are int64.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import (
    BadMagicError,
    CountMismatchError,
    DataFormatError,
    DomainError,
    RecordLengthError,
    TruncatedFileError,
)
from .nn import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] == 0:
            raise DataFormatError("dataset needs a nonempty (n, d_x) feature matrix")
        if self.y.shape != (self.X.shape[0],):
            raise CountMismatchError(f"{self.X.shape[0]} feature rows but {self.y.shape} labels")
        if np.any(self.y < 0) or np.any(self.y >= self.n_classes):
            raise DataFormatError(f"labels must lie in [0, {self.n_classes})")
        if np.any(self.X < 0.0) or np.any(self.X > 1.0):
            raise DataFormatError("features must be normalized to [0, 1]")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d_x(self):
        return self.X.shape[1]

    def take(self, idx, provenance=None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.y[idx], self.n_classes, provenance or self.provenance)

    def class_frequencies(self):
        return np.bincount(self.y, minlength=self.n_classes) / self.n


# ---------------------------------------------------------------------------
# MNIST IDX
# ---------------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def parse_idx(buf: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(buf) < 4:
        raise TruncatedFileError(f"{what}: file shorter than the 4-byte magic")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{what}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise TruncatedFileError(f"{what}: header truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    body = len(buf) - header
    if body < count:
        raise TruncatedFileError(f"{what}: expected {count} data bytes, found {body}")
    if body > count:
        raise DataFormatError(f"{what}: {body - count} trailing bytes after the data")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image file (magic 0x803) and label file (magic 0x801); pixels / 255."""
    images = parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, "images")
    labels = parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels.astype(np.int64), 10, f"mnist:{os.path.basename(os.fspath(images_path))}")


def write_idx(path, array: np.ndarray):
    """Write a uint8 array as IDX (used for test fixtures and data export)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())


# ---------------------------------------------------------------------------
# CIFAR-10 binary
# ---------------------------------------------------------------------------


def load_cifar10_bin(paths) -> Dataset:
    """Concatenate CIFAR-10 binary batches: 3073-byte records, label byte then channel-major pixels."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    xs, ys = [], []
    for p in paths:
        buf = _read_bytes(p)
        if len(buf) == 0 or len(buf) % CIFAR_RECORD:
            raise RecordLengthError(f"{p}: length {len(buf)} is not a positive multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if np.any(rec[:, 0] > 9):
            raise DataFormatError(f"{p}: label byte outside 0..9")
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].astype(np.float64) / 255.0)
    return Dataset(np.concatenate(xs), np.concatenate(ys), 10, "cifar10")


# ---------------------------------------------------------------------------
# subsets
# ---------------------------------------------------------------------------


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform subset of size ``n`` without replacement."""
    if n > dataset.n or n < 1:
        raise DomainError(f"cannot draw {n} samples from a dataset of {dataset.n}")
    idx = Rng(seed).split("subsample").permutation(dataset.n)[:n]
    return dataset.take(idx, f"{dataset.provenance}|sub{n}@{seed}")


def subsample_split(dataset: Dataset, n_train: int, n_test: int, seed: int):
    """Two disjoint uniform subsets (train, test)."""
    if n_train + n_test > dataset.n:
        raise DomainError(f"cannot draw {n_train}+{n_test} disjoint samples from {dataset.n}")
    idx = Rng(seed).split("subsample").permutation(dataset.n)
    tr = dataset.take(idx[:n_train], f"{dataset.provenance}|train{n_train}@{seed}")
    te = dataset.take(idx[n_train : n_train + n_test], f"{dataset.provenance}|test{n_test}@{seed}")
    return tr, te


# ---------------------------------------------------------------------------
# synthetic truncated mixtures
# ---------------------------------------------------------------------------


@dataclass
class Component:
    """One mixture component: ``gaussian`` (diagonal covariance) or ``uniform`` on a sub-box."""

    label: int
    weight: float
    kind: str = "gaussian"
    mean: tuple = ()
    var: tuple = ()
    lo: tuple = ()
    hi: tuple = ()

    def box_mass(self, lo, hi):
        """Untruncated probability of the axis-aligned boxes [lo, hi] (arrays of shape (..., d))."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if self.kind == "gaussian":
            m = np.asarray(self.mean, dtype=np.float64)
            sd = np.sqrt(np.asarray(self.var, dtype=np.float64))
            a, b = (lo - m) / sd, (hi - m) / sd
            # use the tail on the far side for accuracy
            upper = np.where(a > 0, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
            return np.prod(np.clip(upper, 0.0, None), axis=-1)
        c_lo = np.asarray(self.lo, dtype=np.float64)
        c_hi = np.asarray(self.hi, dtype=np.float64)
        overlap = np.clip(np.minimum(hi, c_hi) - np.maximum(lo, c_lo), 0.0, None)
        return np.prod(overlap / (c_hi - c_lo), axis=-1)

    def density(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "gaussian":
            m = np.asarray(self.mean)
            v = np.asarray(self.var)
            return np.exp(-0.5 * np.sum(np.log(2 * np.pi * v) + (x - m) ** 2 / v, axis=-1))
        c_lo, c_hi = np.asarray(self.lo), np.asarray(self.hi)
        inside = np.all((x >= c_lo) & (x <= c_hi), axis=-1)
        return inside / np.prod(c_hi - c_lo)

    def draw(self, rng: Rng, n: int):
        d = len(self.mean) if self.kind == "gaussian" else len(self.lo)
        if self.kind == "gaussian":
            return np.asarray(self.mean) + np.sqrt(np.asarray(self.var)) * rng.gaussian((n, d))
        return np.asarray(self.lo) + (np.asarray(self.hi) - np.asarray(self.lo)) * rng.uniform((n, d))


@dataclass
class SyntheticSpec:
    components: list
    n_classes: int
    box_lo: tuple = ()
    box_hi: tuple = ()

    def __post_init__(self):
        d = self.dim
        if not self.box_lo:
            self.box_lo = (0.0,) * d
        if not self.box_hi:
            self.box_hi = (1.0,) * d

    @property
    def dim(self):
        c = self.components[0]
        return len(c.mean) if c.kind == "gaussian" else len(c.lo)


class SyntheticSource:
    """A mixture truncated to the box and renormalized, with an exact per-cell integrator."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        d = spec.dim
        if d > 3:
            raise DomainError("synthetic sources are limited to d_x <= 3")
        self.lo = np.asarray(spec.box_lo, dtype=np.float64)
        self.hi = np.asarray(spec.box_hi, dtype=np.float64)
        if np.any(self.lo < 0) or np.any(self.hi > 1) or np.any(self.hi <= self.lo):
            raise DomainError("box must be a nonempty subset of [0, 1]^d")
        for c in spec.components:
            if c.kind == "gaussian":
                if len(c.mean) != d or len(c.var) != d or np.any(np.asarray(c.var) <= 0):
                    raise DomainError("degenerate or mis-shaped covariance")
            elif c.kind == "uniform":
                if np.any(np.asarray(c.hi) <= np.asarray(c.lo)):
                    raise DomainError("uniform component needs a nonempty box")
            else:
                raise DomainError(f"unknown component kind {c.kind!r}")
            if not 0 <= c.label < spec.n_classes:
                raise DomainError("component label out of range")
        w = np.array([c.weight for c in spec.components], dtype=np.float64)
        if np.any(w < 0) or w.sum() <= 0:
            raise DomainError("component weights must be nonnegative and not all zero")
        self.weights = w / w.sum()
        self.inside = np.array([c.box_mass(self.lo, self.hi) for c in spec.components])
        self.Z = float(np.dot(self.weights, self.inside))
        if self.Z <= 0:
            raise DomainError("mixture puts no mass inside the box")

    @property
    def d_x(self):
        return self.spec.dim

    @property
    def n_classes(self):
        return self.spec.n_classes

    def class_priors(self):
        out = np.zeros(self.n_classes)
        for w, m, c in zip(self.weights, self.inside, self.spec.components):
            out[c.label] += w * m
        return out / self.Z

    def cell_probs(self, lo, hi) -> np.ndarray:
        """Exact P(X in [lo, hi], Y = y) for each y; ``lo``/``hi`` may be stacked (K, d)."""
        lo = np.maximum(np.asarray(lo, dtype=np.float64), self.lo)
        hi = np.minimum(np.asarray(hi, dtype=np.float64), self.hi)
        hi = np.maximum(hi, lo)
        shape = lo.shape[:-1] + (self.n_classes,)
        out = np.zeros(shape)
        for w, c in zip(self.weights, self.spec.components):
            out[..., c.label] += w * c.box_mass(lo, hi)
        return out / self.Z

    def density(self, x) -> np.ndarray:
        """Joint density p(x, y), shape (..., n_classes); zero outside the box."""
        x = np.asarray(x, dtype=np.float64)
        inside = np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        out = np.zeros(x.shape[:-1] + (self.n_classes,))
        for w, c in zip(self.weights, self.spec.components):
            out[..., c.label] += w * c.density(x)
        return out * inside[..., None] / self.Z

    def sample(self, n: int, rng: Rng):
        X = np.empty((n, self.d_x))
        y = np.empty(n, dtype=np.int64)
        filled = 0
        comp_rng, pts_rng = rng.split("component"), rng.split("points")
        cum = np.cumsum(self.weights)
        while filled < n:
            batch = max(2 * (n - filled), 64)
            pick = np.minimum(np.searchsorted(cum, comp_rng.uniform(batch), side="right"), len(cum) - 1)
            pts = np.empty((batch, self.d_x))
            labels = np.empty(batch, dtype=np.int64)
            for k, comp in enumerate(self.spec.components):
                sel = np.flatnonzero(pick == k)
                if sel.size:
                    pts[sel] = comp.draw(pts_rng, sel.size)
                    labels[sel] = comp.label
            ok = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
            pts, labels = pts[ok], labels[ok]
            take = min(pts.shape[0], n - filled)
            X[filled : filled + take] = pts[:take]
            y[filled : filled + take] = labels[:take]
            filled += take
        return X, y


def make_synthetic(spec: SyntheticSpec, n: int, seed: int):
    """Draw ``n`` points from the truncated mixture; returns ``(Dataset, SyntheticSource)``."""
    src = SyntheticSource(spec)
    X, y = src.sample(n, Rng(seed).split("synthetic"))
    return Dataset(X, y, spec.n_classes, f"synthetic:n{n}@{seed}"), src


def benchmark_spec(separation: float = 0.4, var: float = 0.02) -> SyntheticSpec:
    """Two-class 2-D truncated Gaussian mixture on the unit square."""
    c = 0.5
    h = separation / 2
    return SyntheticSpec(
        [
            Component(0, 0.5, "gaussian", mean=(c - h, c - h), var=(var, var)),
            Component(1, 0.5, "gaussian", mean=(c + h, c + h), var=(var, var)),
        ],
        n_classes=2,
    )


def uniform_halves_spec(d: int) -> SyntheticSpec:
    """Uniform on [0, 1]^d; class 0 on x_1 < 0.5, class 1 on x_1 >= 0.5."""
    lo0, hi0 = (0.0,) * d, (0.5,) + (1.0,) * (d - 1)
    lo1, hi1 = (0.5,) + (0.0,) * (d - 1), (1.0,) * d
    return SyntheticSpec(
        [Component(0, 0.5, "uniform", lo=lo0, hi=hi0), Component(1, 0.5, "uniform", lo=lo1, hi=hi1)],
        n_classes=2,
    )


def nearest_mean_accuracy(dataset: Dataset) -> float:
    means = np.stack([dataset.X[dataset.y == k].mean(axis=0) for k in range(dataset.n_classes)])
    d2 = ((dataset.X[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(d2.argmin(axis=1) == dataset.y))
