"""Synthetic marketplaces: Gaussian class blobs split across owners with
owner-dependent noise, plus a CSV loader for real tabular data."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

NOISE_KINDS = ("flip", "gaussian", "label-flip", "dirichlet", "none")


@dataclass
class OwnerData:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.X)


@dataclass
class MarketScenario:
    owners: list
    noise_level: np.ndarray  # larger = noisier
    X_val: np.ndarray
    y_val: np.ndarray
    n_classes: int
    kind: str = "gaussian"
    preshare: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.preshare <= 1:
            raise ParameterError("pre-share fraction must be in (0, 1]")

    @property
    def N(self) -> int:
        return len(self.owners)

    @property
    def noise_rank(self) -> np.ndarray:
        """1 = cleanest owner."""
        return np.argsort(np.argsort(self.noise_level, kind="stable"), kind="stable") + 1

    def preshared(self, rng: np.random.Generator | None = None) -> tuple:
        """Pooled pre-shared samples: (X, y, owner id per sample)."""
        rng = rng if rng is not None else np.random.default_rng(self.seed + 1)
        Xs, ys, who = [], [], []
        for i, o in enumerate(self.owners):
            k = max(1, int(round(self.preshare * len(o))))
            idx = np.sort(rng.choice(len(o), size=min(k, len(o)), replace=False))
            Xs.append(o.X[idx])
            ys.append(o.y[idx])
            who.append(np.full(len(idx), i))
        return np.concatenate(Xs), np.concatenate(ys), np.concatenate(who)


def _blobs(rng, n, centers, scale=1.0, balanced=True):
    k, d = centers.shape
    y = np.arange(n) % k if balanced else rng.integers(0, k, n)
    rng.shuffle(y)
    return centers[y] + rng.normal(0.0, scale, size=(n, d)), y


def flip_keep_prob(i: int, N: int) -> float:
    """Owner i (1-based) keeps each binary feature with probability (i-1)/N."""
    return (i - 1) / N


def gaussian_sigma(i: int, N: int) -> float:
    return 1.0 + 9.0 * i / N


def label_keep_prob(i: int, N: int) -> float:
    """Linear schedule from 1.0 (owner 1) down to 0.6 (owner N)."""
    return 1.0 if N == 1 else 1.0 - 0.4 * (i - 1) / (N - 1)


def dirichlet_alphas(rng, n_classes: int, N: int) -> np.ndarray:
    """Per class: with probability 0.2 all alphas from U[20, 100], else from U[80, 100]."""
    out = np.empty((n_classes, N))
    for c in range(n_classes):
        lo = 20.0 if rng.random() < 0.2 else 80.0
        out[c] = rng.uniform(lo, 100.0, size=N)
    return out


def gen_market(
    N: int,
    group_size: int,
    kind: str = "gaussian",
    n_classes: int = 3,
    dim: int = 10,
    seed: int = 0,
    preshare: float = 0.1,
    val_size: int = 300,
    class_sep: float = 1.5,
) -> MarketScenario:
    if N < 1 or group_size < 1 or n_classes < 2 or dim < 1:
        raise ParameterError("need N >= 1, group_size >= 1, n_classes >= 2, dim >= 1")
    if kind not in NOISE_KINDS:
        raise ParameterError(f"noise kind must be one of {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, class_sep, size=(n_classes, dim))
    binary = kind == "flip"

    def sample(n):
        X, y = _blobs(rng, n, centers)
        return ((X > 0).astype(np.float64) if binary else X), y

    X_val, y_val = sample(val_size)
    owners, level = [], np.zeros(N)
    if kind == "dirichlet":
        alphas = dirichlet_alphas(rng, n_classes, N)
        props = np.stack([rng.dirichlet(a) for a in alphas])  # (classes, N)
        per_class = N * group_size // n_classes
        parts = [[] for _ in range(N)]
        for c in range(n_classes):
            counts = np.floor(props[c] * per_class).astype(int)
            counts[: per_class - counts.sum()] += 1
            Xc = centers[c] + rng.normal(size=(per_class, dim))
            start = 0
            for j in range(N):
                parts[j].append((Xc[start : start + counts[j]], np.full(counts[j], c)))
                start += counts[j]
        for j in range(N):
            X = np.concatenate([p[0] for p in parts[j]])
            y = np.concatenate([p[1] for p in parts[j]])
            order = rng.permutation(len(X))
            owners.append(OwnerData(X[order], y[order]))
            frac = np.bincount(y, minlength=n_classes) / max(1, len(y))
            level[j] = 0.5 * np.abs(frac - 1.0 / n_classes).sum()
        return MarketScenario(owners, level, X_val, y_val, n_classes, kind, preshare, seed)

    for i in range(1, N + 1):
        X, y = sample(group_size)
        if kind == "flip":
            p = flip_keep_prob(i, N)
            flips = rng.random(X.shape) >= p
            X = np.where(flips, 1.0 - X, X)
            level[i - 1] = 1.0 - p
        elif kind == "gaussian":
            s = gaussian_sigma(i, N)
            X = X + rng.normal(0.0, s, size=X.shape)
            level[i - 1] = s
        elif kind == "label-flip":
            p = label_keep_prob(i, N)
            change = rng.random(len(y)) >= p
            other = (y + rng.integers(1, n_classes, size=len(y))) % n_classes
            y = np.where(change, other, y)
            level[i - 1] = 1.0 - p
        owners.append(OwnerData(X, y))
    return MarketScenario(owners, level, X_val, y_val, n_classes, kind, preshare, seed)


def class_proportions(owner: OwnerData, n_classes: int) -> np.ndarray:
    return np.bincount(owner.y, minlength=n_classes) / len(owner.y)


# -- CSV


def read_dataset_csv(path, label: bool = True) -> tuple:
    """Header row, feature columns, then an optional integer label column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParameterError(f"{path}: empty file")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64).reshape(len(rows) - 1, -1)
    if label:
        return body[:, :-1], body[:, -1].astype(np.int64)
    return body, None


def write_dataset_csv(path, X, y=None):
    X = np.asarray(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(X.shape[1])] + (["label"] if y is not None else []))
        for i, row in enumerate(X):
            w.writerow([repr(float(v)) for v in row] + ([int(y[i])] if y is not None else []))


def save_market(sc: MarketScenario, directory):
    """One CSV per owner plus validation.csv and noise.csv."""
    import os

    os.makedirs(directory, exist_ok=True)
    for i, o in enumerate(sc.owners):
        write_dataset_csv(os.path.join(directory, f"owner{i + 1}.csv"), o.X, o.y)
    write_dataset_csv(os.path.join(directory, "validation.csv"), sc.X_val, sc.y_val)
    with open(os.path.join(directory, "noise.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["owner", "noise_level", "noise_rank"])
        for i, (lv, rk) in enumerate(zip(sc.noise_level, sc.noise_rank)):
            w.writerow([i + 1, repr(float(lv)), int(rk)])


def load_market(directory, preshare: float = 0.1, seed: int = 0) -> MarketScenario:
    import glob
    import os

    paths = sorted(glob.glob(os.path.join(directory, "owner*.csv")), key=lambda p: int(os.path.basename(p)[5:-4]))
    if not paths:
        raise ParameterError(f"{directory}: no owner*.csv files")
    owners = [OwnerData(*read_dataset_csv(p)) for p in paths]
    X_val, y_val = read_dataset_csv(os.path.join(directory, "validation.csv"))
    level = np.zeros(len(owners))
    noise_path = os.path.join(directory, "noise.csv")
    if os.path.exists(noise_path):
        with open(noise_path, newline="") as fh:
            for row in csv.DictReader(fh):
                level[int(row["owner"]) - 1] = float(row["noise_level"])
    n_classes = int(max(max(o.y.max() for o in owners), y_val.max())) + 1
    return MarketScenario(owners, level, X_val, y_val, n_classes, "csv", preshare, seed)
