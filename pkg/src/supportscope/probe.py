"""Linear probes (multinomial logistic regression) over precomputed frozen-encoder features.

Feature files use a small little-endian binary layout::

    magic "BPFT" | version u32 | n_rows u64 | dim u32 | n_classes u32
    n_rows x (dim float32, label u32)
    [optional] provenance: length u32 | UTF-8 bytes

Readers that stop after the rows simply ignore the provenance trailer.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from supportscope._io import ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"BPFT"
VERSION = 1
_HEADER = struct.Struct("<4sIQII")

ARMIJO_C = 1e-4
STD_FLOOR = 1e-8
MIN_STEP = 1e-30


@dataclass
class FeatureFile:
    features: np.ndarray  # (n_rows, dim) float32
    labels: np.ndarray  # (n_rows,) uint32
    n_classes: int
    provenance: str = ""

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    lam: float
    iterations: int
    final_gradient_norm: float
    seed: int
    converged: bool = False
    final_loss: float = float("nan")
    init: str = "zero"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d


def write_features(path, features, labels, n_classes: int, provenance: str = "") -> None:
    x = np.ascontiguousarray(features, dtype="<f4")
    y = np.ascontiguousarray(labels, dtype="<u4")
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValidationError("features must be (n, dim) and labels (n,)")
    rows = np.empty(x.shape[0], dtype=np.dtype([("x", "<f4", (x.shape[1],)), ("y", "<u4")]))
    rows["x"] = x
    rows["y"] = y
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, x.shape[0], x.shape[1], n_classes))
        fh.write(rows.tobytes())
        if provenance:
            blob = provenance.encode("utf-8")
            fh.write(struct.pack("<I", len(blob)) + blob)


def read_features(path) -> FeatureFile:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValidationError(f"{path}: truncated header")
    magic, version, n_rows, dim, n_classes = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValidationError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    row_t = np.dtype([("x", "<f4", (dim,)), ("y", "<u4")])
    end = _HEADER.size + n_rows * row_t.itemsize
    if len(data) < end:
        raise ValidationError(f"{path}: expected {n_rows} rows, file is truncated")
    rows = np.frombuffer(data, dtype=row_t, count=n_rows, offset=_HEADER.size)
    provenance = ""
    if len(data) >= end + 4:
        (length,) = struct.unpack_from("<I", data, end)
        provenance = data[end + 4 : end + 4 + length].decode("utf-8", errors="replace")
    x = np.array(rows["x"], dtype=np.float32).reshape(n_rows, dim)
    y = np.array(rows["y"], dtype=np.uint32)
    if not np.isfinite(x).all():
        raise ValidationError(f"{path}: non-finite feature values")
    if n_rows and y.max() >= n_classes:
        raise ValidationError(f"{path}: label {int(y.max())} >= n_classes={n_classes}")
    return FeatureFile(x, y, int(n_classes), provenance)


# ------------------------------------------------------------------ objective


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray, lam: float):
    """Mean softmax cross-entropy plus (lam/2)*||W||^2, and its gradient in (W, b)."""
    n = X.shape[0]
    logits = X @ W + b
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    denom = expl.sum(axis=1, keepdims=True)
    logp = logits - np.log(denom)
    loss = -logp[np.arange(n), y].mean() + 0.5 * lam * np.sum(W * W)
    probs = expl / denom
    probs[np.arange(n), y] -= 1.0
    probs /= n
    gW = X.T @ probs + lam * W
    gb = probs.sum(axis=0)
    return loss, gW, gb


def _standardize(train_x: np.ndarray, *others: np.ndarray):
    mean = train_x.mean(axis=0)
    std = np.maximum(train_x.std(axis=0), STD_FLOOR)
    return [(a - mean) / std for a in (train_x, *others)]


def fit_softmax(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    lam: float = 1e-4,
    max_iters: int = 2000,
    tol: float = 1e-6,
    W0: np.ndarray | None = None,
    b0: np.ndarray | None = None,
    history: list | None = None,
):
    """Full-batch gradient descent with Armijo backtracking (c=1e-4, step halving).

    Returns ``(W, b, iterations, grad_inf_norm, loss, converged)``. When
    ``history`` is a list, the loss after every accepted step is appended.
    """
    d = X.shape[1]
    W = np.zeros((d, n_classes)) if W0 is None else np.array(W0, dtype=np.float64)
    b = np.zeros(n_classes) if b0 is None else np.array(b0, dtype=np.float64)
    loss, gW, gb = loss_and_grad(W, b, X, y, lam)
    if history is not None:
        history.append(loss)
    step = 1.0
    it = 0
    gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
    while gnorm >= tol and it < max_iters:
        sq = np.sum(gW * gW) + np.sum(gb * gb)
        step = min(step * 2.0, 1e4)
        while True:
            W_new, b_new = W - step * gW, b - step * gb
            new_loss, new_gW, new_gb = loss_and_grad(W_new, b_new, X, y, lam)
            if new_loss <= loss - ARMIJO_C * step * sq:
                break
            step *= 0.5
            if step < MIN_STEP:
                logger.warning("line search stalled at iteration %d", it)
                return W, b, it, gnorm, loss, False
        W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
        it += 1
        if history is not None:
            history.append(loss)
        gnorm = max(np.abs(gW).max(initial=0.0), np.abs(gb).max(initial=0.0))
    return W, b, it, gnorm, loss, gnorm < tol


def _accuracy(W, b, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(X @ W + b, axis=1) == y))


def train_probe(
    train: FeatureFile,
    test: FeatureFile,
    lam: float = 1e-4,
    max_iters: int = 2000,
    tol: float = 1e-6,
    seed: int = 0,
    init: str = "zero",
    history: list | None = None,
) -> ProbeResult:
    """Fit a linear probe on ``train`` and score it on ``test``.

    ``init="random"`` starts from a seeded Gaussian point; it exists to check
    that the convex objective converges to the same classifier.
    """
    if train.dim != test.dim:
        raise ValidationError(f"dimension mismatch: train dim={train.dim}, test dim={test.dim}")
    if train.n_classes != test.n_classes:
        raise ValidationError(f"class count mismatch: train={train.n_classes}, test={test.n_classes}")
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    if train.n_rows == 0:
        raise ValidationError("training file has no rows")
    for name, f in (("train", train), ("test", test)):
        if not np.isfinite(f.features).all():
            raise ValidationError(f"{name} features contain non-finite values")
    counts = np.bincount(train.labels, minlength=train.n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        logger.warning("training set has no examples of classes %s", empty.tolist())

    Xtr, Xte = _standardize(train.features.astype(np.float64), test.features.astype(np.float64))
    ytr, yte = train.labels.astype(np.int64), test.labels.astype(np.int64)
    W0 = b0 = None
    if init == "random":
        rng = np.random.default_rng(seed)
        W0 = rng.normal(scale=0.1, size=(train.dim, train.n_classes))
        b0 = rng.normal(scale=0.1, size=train.n_classes)
    elif init != "zero":
        raise ValidationError(f"init must be 'zero' or 'random', got {init!r}")

    W, b, iters, gnorm, loss, converged = fit_softmax(
        Xtr, ytr, train.n_classes, lam, max_iters, tol, W0, b0, history
    )
    return ProbeResult(
        train_accuracy=_accuracy(W, b, Xtr, ytr),
        test_accuracy=_accuracy(W, b, Xte, yte),
        lam=lam,
        iterations=iters,
        final_gradient_norm=float(gnorm),
        seed=seed,
        converged=bool(converged),
        final_loss=float(loss),
        init=init,
    )


def gradient_check(dim: int = 5, n_classes: int = 3, n_points: int = 20, seed: int = 0, h: float = 1e-5,
                   lam: float = 1e-2, dtype=np.float64) -> float:
    """Max relative error between the analytic gradient and central differences."""
    if dim > 10 or n_points > 50:
        raise ValidationError("gradient_check is meant for small instances (dim <= 10, n_points <= 50)")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_points, dim)).astype(dtype)
    y = rng.integers(0, n_classes, size=n_points)
    W = rng.normal(size=(dim, n_classes)).astype(dtype)
    b = rng.normal(size=n_classes).astype(dtype)
    lam = dtype(lam)
    _, gW, gb = loss_and_grad(W, b, X, y, lam)
    analytic = np.concatenate([gW.ravel(), gb])
    theta = np.concatenate([W.ravel(), b])
    h = dtype(h)

    def f(t):
        return loss_and_grad(t[: dim * n_classes].reshape(dim, n_classes), t[dim * n_classes :], X, y, lam)[0]

    numeric = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), dtype(1e-8))
    return float(np.max(np.abs(analytic - numeric) / denom))
