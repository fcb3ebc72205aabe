"""Utility-dataset construction, Shapley/LOO values and evaluation metrics.

Coalitions are bitmasks over owners ``0..N-1``; a utility function takes a
``frozenset`` of owner indices and returns a float.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.stats import rankdata

from .errors import CapExceededError, ParameterError, ShapeError, UndefinedCorrelationError

EXACT_CAP = 12


# -- proxy learner


def train_proxy(X, y, n_classes: int, lr: float = 0.1, iters: int = 200, l2: float = 1e-4):
    """Multinomial logistic regression by full-batch gradient descent on standardized features.

    Returns a predict function.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ParameterError("proxy needs at least one sample")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    Z = (X - mu) / sd
    n, d = Z.shape
    W = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), y] = 1.0
    for _ in range(iters):
        logits = Z @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * (Z.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)

    def predict(Xq):
        return np.argmax(((np.asarray(Xq, dtype=np.float64) - mu) / sd) @ W + b, axis=1)

    return predict


def train_proxy_eval(X, y, X_val, y_val, n_classes: int | None = None, **kw) -> float:
    """Validation accuracy of the proxy trained on (X, y)."""
    if n_classes is None:
        n_classes = int(max(np.max(y), np.max(y_val))) + 1
    predict = train_proxy(X, y, n_classes, **kw)
    return float(np.mean(predict(X_val) == np.asarray(y_val)))


# -- utility dataset


def uniform_subset(rng: np.random.Generator, n: int, owners=None) -> np.ndarray:
    """Size uniform on [1, n], then a uniformly random subset of that size."""
    size = int(rng.integers(1, n + 1))
    return np.sort(rng.choice(n, size=size, replace=False))


def owner_mix_subset(rng: np.random.Generator, n: int, owners) -> np.ndarray:
    """A random non-empty group of owners, then a random fraction of their pooled samples."""
    owners = np.asarray(owners)
    ids = np.unique(owners)
    chosen = ids[rng.random(len(ids)) < 0.5]
    if len(chosen) == 0:
        chosen = ids[[rng.integers(len(ids))]]
    pool = np.flatnonzero(np.isin(owners, chosen))
    keep = max(1, int(round(len(pool) * rng.uniform(0.2, 1.0))))
    return np.sort(rng.choice(pool, size=keep, replace=False))


SUBSET_LAWS = {"uniform": uniform_subset, "owner-mix": owner_mix_subset}


@dataclass
class UtilityDataset:
    X: np.ndarray
    y: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray
    subsets: list
    u: np.ndarray
    n_classes: int
    owners: np.ndarray | None = None

    @property
    def M(self) -> int:
        return len(self.subsets)

    def to_csv(self, path):
        """Columns: entry, utility, size, indices (space separated)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["entry", "utility", "size", "indices"])
            for i, (s, u) in enumerate(zip(self.subsets, self.u)):
                w.writerow([i, repr(float(u)), len(s), " ".join(str(int(j)) for j in s)])

    @staticmethod
    def read_entries(path) -> tuple:
        subsets, us = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                subsets.append(np.array([int(t) for t in row["indices"].split()], dtype=np.int64))
                us.append(float(row["utility"]))
        return subsets, np.array(us)


def build_utility_dataset(
    X_tr,
    y_tr,
    X_val,
    y_val,
    M: int,
    rng: np.random.Generator,
    n_classes: int | None = None,
    subset_law: str = "uniform",
    owners=None,
) -> UtilityDataset:
    """Sample M subsets of the labeled pool and label each with proxy validation accuracy."""
    X_tr, y_tr = np.asarray(X_tr, dtype=np.float64), np.asarray(y_tr, dtype=np.int64)
    X_val, y_val = np.asarray(X_val, dtype=np.float64), np.asarray(y_val, dtype=np.int64)
    if len(X_tr) == 0 or len(X_val) == 0:
        raise ParameterError("training pool and validation set must be non-empty")
    if M < 1:
        raise ParameterError("M must be at least 1")
    if subset_law not in SUBSET_LAWS:
        raise ParameterError(f"unknown subset law {subset_law!r}")
    if subset_law == "owner-mix" and owners is None:
        raise ParameterError("owner-mix law needs per-sample owner ids")
    if len(np.unique(y_val)) < 2:
        warnings.warn("validation set holds a single class; accuracies are degenerate", stacklevel=2)
    if n_classes is None:
        n_classes = int(max(y_tr.max(), y_val.max())) + 1
    law = SUBSET_LAWS[subset_law]
    subsets, us = [], []
    for _ in range(M):
        s = law(rng, len(X_tr), owners)
        subsets.append(s)
        us.append(train_proxy_eval(X_tr[s], y_tr[s], X_val, y_val, n_classes))
    return UtilityDataset(X_tr, y_tr, X_val, y_val, subsets, np.array(us), n_classes, owners)


# -- cooperative game values


def memoize(u):
    cache = {}

    def wrapped(c):
        key = frozenset(c)
        if key not in cache:
            cache[key] = float(u(key))
        return cache[key]

    wrapped.cache = cache
    return wrapped


def coalition_table(u, N: int) -> np.ndarray:
    """u evaluated on every bitmask 0..2^N-1."""
    table = np.empty(1 << N)
    for mask in range(1 << N):
        table[mask] = u(frozenset(i for i in range(N) if mask >> i & 1))
    return table


def shapley_from_table(table: np.ndarray, N: int) -> np.ndarray:
    masks = np.arange(1 << N)
    sizes = np.array([bin(m).count("1") for m in range(1 << N)])
    weight = np.array([1.0 / (N * math.comb(N - 1, s)) if s < N else 0.0 for s in range(N + 1)])
    out = np.zeros(N)
    for i in range(N):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        out[i] = np.sum(weight[sizes[without]] * (table[without | bit] - table[without]))
    return out


def shapley_exact(u, N: int, cap: int = EXACT_CAP) -> np.ndarray:
    if N > cap:
        raise CapExceededError(f"N={N} exceeds the exact cap {cap}; use shapley_mc")
    if N < 1:
        raise ParameterError("need at least one player")
    return shapley_from_table(coalition_table(u, N), N)


def shapley_permutation_oracle(u, N: int) -> np.ndarray:
    """Average marginal contribution over all N! orders (small N only)."""
    out = np.zeros(N)
    count = 0
    for order in permutations(range(N)):
        prefix = set()
        prev = u(frozenset())
        for i in order:
            prefix.add(i)
            cur = u(frozenset(prefix))
            out[i] += cur - prev
            prev = cur
        count += 1
    return out / count


def default_mc_samples(N: int) -> int:
    return max(1, math.ceil(10 * N * math.log(N))) if N > 1 else 1


def mc_permutations(N: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return np.array([rng.permutation(N) for _ in range(m)], dtype=np.int64).reshape(m, N)


def shapley_mc(u, N: int, m: int | None = None, rng: np.random.Generator | None = None, perms=None) -> tuple:
    """Permutation-sampling estimate; returns (values, standard errors)."""
    if m is None:
        m = default_mc_samples(N) if perms is None else len(perms)
    if m < 1:
        raise ParameterError("need at least one permutation")
    if perms is None:
        perms = mc_permutations(N, m, rng if rng is not None else np.random.default_rng())
    marg = np.zeros((len(perms), N))
    empty = u(frozenset())
    for k, order in enumerate(perms):
        prefix = []
        prev = empty
        for i in order:
            prefix.append(int(i))
            cur = u(frozenset(prefix))
            marg[k, i] = cur - prev
            prev = cur
    est = marg.mean(axis=0)
    se = marg.std(axis=0, ddof=1) / np.sqrt(len(perms)) if len(perms) > 1 else np.full(N, np.inf)
    return est, se


def mc_coalitions(perms) -> list:
    """Distinct non-empty prefixes visited by a set of permutations."""
    seen = set()
    for order in perms:
        for j in range(1, len(order) + 1):
            seen.add(frozenset(int(i) for i in order[:j]))
    return sorted(seen, key=lambda c: (len(c), sorted(c)))


def loo_values(u, N: int) -> np.ndarray:
    full = frozenset(range(N))
    grand = u(full)
    return np.array([grand - u(full - {i}) for i in range(N)])


# -- metrics


def effectiveness_score(acc_low, acc_rand, acc_high, mode: str = "low") -> float:
    """Mean gap between a value-guided removal curve and random removal."""
    lo, ra, hi = (np.asarray(a, dtype=np.float64) for a in (acc_low, acc_rand, acc_high))
    if not (len(lo) == len(ra) == len(hi)) or len(ra) == 0:
        raise ShapeError("accuracy curves must share a non-zero length")
    if mode == "low":
        return float(np.mean(lo - ra))
    if mode == "high":
        return float(np.mean(ra - hi))
    raise ParameterError("mode must be 'low' or 'high'")


def spearman_rank(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ShapeError("need two equally long sequences of length >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedCorrelationError("correlation is undefined for constant input")
    ra, rb = rankdata(a) - (len(a) + 1) / 2, rankdata(b) - (len(b) + 1) / 2
    return float(np.sum(ra * rb) / np.sqrt(np.sum(ra * ra) * np.sum(rb * rb)))


# -- report


@dataclass
class ValuationReport:
    sv: np.ndarray
    loo: np.ndarray
    utilities: dict
    method: str
    samples: int = 0
    seed: int | None = None
    stderr: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_csv(self, path):
        """Columns: owner, shapley, stderr, loo."""
        se = self.stderr if self.stderr is not None else np.zeros_like(self.sv)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["owner", "shapley", "stderr", "loo"])
            for i, (v, s, l) in enumerate(zip(self.sv, se, self.loo)):
                w.writerow([i + 1, repr(float(v)), repr(float(s)), repr(float(l))])

    def utilities_csv(self, path):
        """Columns: coalition (space-separated 1-based owners), utility."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["coalition", "utility"])
            for c, u in sorted(self.utilities.items(), key=lambda kv: (len(kv[0]), sorted(kv[0]))):
                w.writerow([" ".join(str(i + 1) for i in sorted(c)), repr(float(u))])


def valuate(u, N: int, method: str = "exact", m: int | None = None, seed: int = 0, cap: int = EXACT_CAP):
    """Shapley (exact or MC) plus LOO for a utility function."""
    u = memoize(u)
    if method == "exact":
        sv, se, samples = shapley_exact(u, N, cap), None, 1 << N
    elif method == "mc":
        sv, se = shapley_mc(u, N, m, np.random.default_rng(seed))
        samples = m or default_mc_samples(N)
    else:
        raise ParameterError("method must be 'exact' or 'mc'")
    loo = loo_values(u, N)
    return ValuationReport(sv, loo, dict(u.cache), method, samples, seed, se)
