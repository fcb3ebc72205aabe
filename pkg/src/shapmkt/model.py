"""Set-utility regressor: per-sample extractor with square activations, a
linear per-sample transform, mean readout, linear head, detached sigmoid.

Weights live in normalized input coordinates (``norm_mu``/``norm_sd``);
``raw_first_layer`` folds the normalization into the first layer for
secure inference, so owners feed raw features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ModelFormatError, ParameterError, ShapeError

MAGIC = "SHAPMKT-MODEL"
VERSION = 1


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


@dataclass
class Dense:
    W: np.ndarray  # (out, in)
    b: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def forward(self, x):
        return x @ self.W.T + self.b

    def backward(self, x, gy):
        return gy @ self.W, (gy.T @ x, gy.sum(axis=0))

    def params(self):
        return [self.W, self.b]

    def header(self) -> str:
        return f"dense {self.out_dim} {self.in_dim}"


@dataclass
class Conv:
    """Zero-padded 2-D convolution via image-to-column; I/O flattened channel-major."""

    W: np.ndarray  # (c_out, c_in * k * k)
    b: np.ndarray
    in_shape: tuple  # (c, h, w)
    k: int
    stride: int
    pad: int
    _idx: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def out_hw(self) -> tuple:
        _, h, w = self.in_shape
        return (h + 2 * self.pad - self.k) // self.stride + 1, (w + 2 * self.pad - self.k) // self.stride + 1

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_dim(self) -> int:
        oh, ow = self.out_hw
        return self.W.shape[0] * oh * ow

    @property
    def positions(self) -> int:
        oh, ow = self.out_hw
        return oh * ow

    def gather_index(self) -> np.ndarray:
        """(positions, c*k*k) indices into the flat input; ``in_dim`` marks a padding zero."""
        if self._idx is None:
            c, h, w = self.in_shape
            oh, ow = self.out_hw
            ci, ki, kj = np.meshgrid(np.arange(c), np.arange(self.k), np.arange(self.k), indexing="ij")
            ci, ki, kj = ci.ravel(), ki.ravel(), kj.ravel()
            oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
            rows = oi.ravel()[:, None] * self.stride - self.pad + ki[None, :]
            cols = oj.ravel()[:, None] * self.stride - self.pad + kj[None, :]
            inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
            flat = ci[None, :] * h * w + np.clip(rows, 0, h - 1) * w + np.clip(cols, 0, w - 1)
            self._idx = np.where(inside, flat, self.in_dim)
        return self._idx

    def _cols(self, x):
        xp = np.concatenate([x, np.zeros((x.shape[0], 1))], axis=1)
        return xp[:, self.gather_index()]  # (S, P, ckk)

    def forward(self, x):
        y = self._cols(x) @ self.W.T + self.b  # (S, P, c_out)
        return y.transpose(0, 2, 1).reshape(x.shape[0], -1)

    def backward(self, x, gy):
        S = x.shape[0]
        g = gy.reshape(S, self.W.shape[0], self.positions).transpose(0, 2, 1)  # (S, P, c_out)
        cols = self._cols(x)
        gW = np.einsum("spo,spi->oi", g, cols)
        gcols = g @ self.W  # (S, P, ckk)
        gx = np.zeros((S, self.in_dim + 1))
        idx = self.gather_index()
        for s in range(S):
            np.add.at(gx[s], idx, gcols[s])
        return gx[:, :-1], (gW, g.sum(axis=(0, 1)))

    def params(self):
        return [self.W, self.b]

    def header(self) -> str:
        c, h, w = self.in_shape
        return f"conv {self.W.shape[0]} {c} {self.k} {self.stride} {self.pad} {h} {w}"


@dataclass
class UtilityModel:
    preset: str
    extractor: list
    trans: Dense
    network: list
    n_classes: int = 2
    label_aware: bool = False
    frac_bits: int = 16
    u_empty: float | None = None
    norm_mu: np.ndarray | None = None
    norm_sd: np.ndarray | None = None

    def __post_init__(self):
        d = self.input_dim
        if self.u_empty is None:
            self.u_empty = 1.0 / self.n_classes
        if self.norm_mu is None:
            self.norm_mu = np.zeros(d)
        if self.norm_sd is None:
            self.norm_sd = np.ones(d)
        self.validate()

    @property
    def input_dim(self) -> int:
        return self.extractor[0].in_dim if self.extractor else self.trans.in_dim - self._label_dim

    @property
    def _label_dim(self) -> int:
        return self.n_classes if self.label_aware else 0

    @property
    def repr_dim(self) -> int:
        return self.trans.out_dim

    def layers(self):
        """(role, layer) pairs in forward order."""
        return (
            [("extractor", l) for l in self.extractor]
            + [("trans", self.trans)]
            + [("network", l) for l in self.network]
        )

    def params(self) -> list:
        return [p for _, l in self.layers() for p in l.params()]

    def validate(self):
        prev = None
        for i, (role, layer) in enumerate(self.layers()):
            if layer.b.shape != (layer.W.shape[0],):
                raise ShapeError(f"layer {i} ({role}): bias length {layer.b.shape} != {layer.W.shape[0]}")
            if isinstance(layer, Conv) and layer.W.shape[1] != layer.in_shape[0] * layer.k**2:
                raise ShapeError(f"layer {i} ({role}): kernel width {layer.W.shape[1]} does not match input")
            want = prev
            if role == "trans" and prev is not None:
                want = prev + self._label_dim
            if want is not None and layer.in_dim != want:
                raise ShapeError(f"layer {i} ({role}): expects {layer.in_dim} inputs, previous layer gives {want}")
            prev = layer.out_dim
        if prev != 1:
            raise ShapeError(f"final layer must output 1 value, got {prev}")
        if np.shape(self.norm_mu) != (self.input_dim,) or np.shape(self.norm_sd) != (self.input_dim,):
            raise ShapeError("normalization vectors must match the input width")
        if np.any(np.asarray(self.norm_sd) <= 0):
            raise ShapeError("normalization scales must be positive")

    def copy(self) -> "UtilityModel":
        def dup(l):
            if isinstance(l, Dense):
                return Dense(l.W.copy(), l.b.copy())
            return Conv(l.W.copy(), l.b.copy(), l.in_shape, l.k, l.stride, l.pad)

        return UtilityModel(
            self.preset,
            [dup(l) for l in self.extractor],
            dup(self.trans),
            [dup(l) for l in self.network],
            self.n_classes,
            self.label_aware,
            self.frac_bits,
            self.u_empty,
            np.array(self.norm_mu, dtype=float),
            np.array(self.norm_sd, dtype=float),
        )

    def raw_first_layer(self):
        """First extractor layer with input normalization folded into W and b."""
        first = self.extractor[0]
        mu, sd = np.asarray(self.norm_mu), np.asarray(self.norm_sd)
        if isinstance(first, Dense):
            W = first.W / sd[None, :]
            return Dense(W, first.b - W @ mu)
        if not (np.all(mu == mu[0]) and np.all(sd == sd[0])):
            raise ParameterError("convolutional inputs need one shared normalization scale")
        W = first.W / sd[0]
        return Conv(W, first.b - mu[0] * W.sum(axis=1), first.in_shape, first.k, first.stride, first.pad)


# -- presets


def _dense(rng, n_out, n_in, gain=1.0):
    return Dense(rng.normal(0.0, gain / np.sqrt(n_in), size=(n_out, n_in)), np.zeros(n_out))


def _conv(rng, c_out, in_shape, k, stride):
    fan_in = in_shape[0] * k * k
    W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(c_out, fan_in))
    return Conv(W, np.zeros(c_out), tuple(in_shape), k, stride, (k - 1) // 2)


PRESETS = ("mnist-like", "cifar-like", "mlp-synthetic")


def build_preset(
    name: str,
    input_dim: int = 10,
    n_classes: int = 2,
    label_aware: bool = False,
    seed: int = 0,
    frac_bits: int = 16,
) -> UtilityModel:
    rng = np.random.default_rng(seed)
    lab = n_classes if label_aware else 0
    if name == "mnist-like":
        c1 = _conv(rng, 16, (1, 28, 28), 4, 2)
        extractor, rep, hidden = [c1], 512, 256
    elif name == "cifar-like":
        c1 = _conv(rng, 16, (3, 32, 32), 5, 2)
        c2 = _conv(rng, 32, (16,) + c1.out_hw, 5, 2)
        extractor, rep, hidden = [c1, c2], 512, 256
    elif name == "mlp-synthetic":
        extractor, rep, hidden = [_dense(rng, 32, input_dim)], 32, 16
    else:
        raise ParameterError(f"unknown preset {name!r}; choose from {PRESETS}")
    # nonzero biases give (w.x + b)^2 a linear term; zero would make the features even in x
    for layer in extractor:
        layer.b = rng.normal(0.0, 0.5, size=layer.b.shape)
    trans = _dense(rng, rep, extractor[-1].out_dim + lab)
    network = [_dense(rng, hidden, rep), _dense(rng, 1, hidden, gain=0.1)]
    return UtilityModel(name, extractor, trans, network, n_classes, label_aware, frac_bits)


# -- float inference


def _one_hot(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def _extract(m: UtilityModel, X):
    """Activations (pre-square, post-square) of each extractor layer."""
    h = (np.asarray(X, dtype=np.float64) - m.norm_mu) / m.norm_sd
    cache = []
    for layer in m.extractor:
        z = layer.forward(h)
        cache.append((h, z))
        h = z * z
    return h, cache


def _augment(m: UtilityModel, h, labels):
    if not m.label_aware:
        return h
    if labels is None:
        raise ParameterError("label-aware model needs labels")
    return np.concatenate([h, _one_hot(labels, m.n_classes)], axis=1)


def forward_repr(m: UtilityModel, X, labels=None) -> np.ndarray:
    """Per-sample representations, shape (S, repr_dim)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != m.input_dim:
        raise ShapeError(f"model expects {m.input_dim} features, got {X.shape[1]}")
    h, _ = _extract(m, X)
    return m.trans.forward(_augment(m, h, labels))


def head(m: UtilityModel, r) -> np.ndarray:
    for layer in m.network:
        r = layer.forward(r)
    return r[..., 0]


def score_coalition(m: UtilityModel, X, labels=None) -> tuple:
    """(pre-sigmoid score, utility) for a sample set; the empty set scores ``u_empty``."""
    if X is None or len(X) == 0:
        u = float(m.u_empty)
        return float(np.log(u / (1.0 - u))), u
    phi = forward_repr(m, X, labels)
    pre = float(head(m, phi.mean(axis=0, keepdims=True))[0])
    return pre, float(sigmoid(pre))


def score_sums(m: UtilityModel, sums, counts) -> np.ndarray:
    """Pre-sigmoid scores from per-coalition representation sums (K, r) and sizes (K,)."""
    return head(m, np.asarray(sums) / np.asarray(counts, dtype=np.float64)[:, None])


# -- training


@dataclass
class TrainConfig:
    epochs: int = 60
    inner_steps: int = 20
    lr_ds: float = 0.05
    lr_g: float = 0.01
    batch_size: int = 32
    seed: int = 0
    clip: float = 5.0
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        for name in ("epochs", "inner_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        for name in ("lr_ds", "lr_g", "clip"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")


def membership(subsets, n: int) -> np.ndarray:
    """Row-normalized (len(subsets), n) averaging matrix."""
    A = np.zeros((len(subsets), n))
    for i, s in enumerate(subsets):
        s = np.asarray(s, dtype=np.int64)
        if len(s) == 0:
            raise ParameterError(f"subset {i} is empty")
        np.add.at(A[i], s, 1.0 / len(s))
    return A


def loss_and_grads(m: UtilityModel, X, labels, A, u) -> tuple:
    """Mean squared error of sigmoid outputs and its gradient for every parameter."""
    h, cache = _extract(m, X)
    ha = _augment(m, h, labels)
    phi = m.trans.forward(ha)
    r = A @ phi
    acts = [r]
    for layer in m.network:
        acts.append(layer.forward(acts[-1]))
    z = acts[-1][:, 0]
    p = sigmoid(z)
    diff = p - u
    loss = float(np.mean(diff**2))
    g = (2.0 * diff * p * (1.0 - p) / len(u))[:, None]
    net_grads = []
    for layer, a in zip(reversed(m.network), reversed(acts[:-1])):
        g, pg = layer.backward(a, g)
        net_grads = list(pg) + net_grads
    gphi = A.T @ g
    gha, tg = m.trans.backward(ha, gphi)
    gh = gha[:, : h.shape[1]]
    ext_grads = []
    for layer, (x_in, z_l) in zip(reversed(m.extractor), reversed(cache)):
        gz = 2.0 * z_l * gh
        gh, pg = layer.backward(x_in, gz)
        ext_grads = list(pg) + ext_grads
    return loss, ext_grads + list(tg) + net_grads


def _sgd_step(params, grads, velocity, lr, cfg: TrainConfig):
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    scale = min(1.0, cfg.clip / norm) if norm > 0 else 1.0
    for p, g, v in zip(params, grads, velocity):
        v *= cfg.momentum
        v += scale * g + cfg.weight_decay * p
        p -= lr * v
    return norm


def fit_normalization(m: UtilityModel, X):
    X = np.asarray(X, dtype=np.float64)
    if isinstance(m.extractor[0], Conv):
        mu, sd = np.full(m.input_dim, X.mean()), np.full(m.input_dim, X.std() or 1.0)
    else:
        mu, sd = X.mean(axis=0), X.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
    m.norm_mu, m.norm_sd = mu, sd


def train_utility(m: UtilityModel, X, labels, subsets, u, cfg: TrainConfig | None = None) -> tuple:
    """Alternating training: the set head for ``inner_steps`` with the extractor fixed, then one extractor step.

    Returns (trained copy, per-epoch loss on the full utility dataset).
    """
    cfg = cfg or TrainConfig()
    if len(subsets) == 0:
        raise ParameterError("utility dataset is empty")
    u = np.asarray(u, dtype=np.float64)
    if np.any((u < 0) | (u > 1)):
        raise ParameterError("utilities must lie in [0, 1]")
    m = m.copy()
    fit_normalization(m, X)
    rng = np.random.default_rng(cfg.seed)
    X = np.asarray(X, dtype=np.float64)
    A = membership(subsets, len(X))
    n_ext = 2 * len(m.extractor)
    params = m.params()
    vel = [np.zeros_like(p) for p in params]
    history = []

    def step(idx, lo, hi, lr, epoch):
        loss, grads = loss_and_grads(m, X, labels, A[idx], u[idx])
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
            raise DivergenceError(f"non-finite loss at epoch {epoch} (last finite loss {history[-1:]})")
        _sgd_step(params[lo:hi], grads[lo:hi], vel[lo:hi], lr, cfg)

    M = len(u)
    bs = min(cfg.batch_size, M)
    for epoch in range(cfg.epochs):
        for _ in range(cfg.inner_steps):
            step(rng.choice(M, bs, replace=False), n_ext, len(params), cfg.lr_ds, epoch)
        step(rng.choice(M, bs, replace=False), 0, n_ext, cfg.lr_g, epoch)
        loss, _ = loss_and_grads(m, X, labels, A, u)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss after epoch {epoch}")
        history.append(loss)
    return m, history


# -- model file


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def save_model(m: UtilityModel, path):
    lines = [
        f"{MAGIC} {VERSION}",
        f"preset {m.preset}",
        f"frac_bits {m.frac_bits}",
        f"n_classes {m.n_classes}",
        f"label_aware {int(m.label_aware)}",
        f"u_empty {m.u_empty!r}",
        f"norm_mu {_fmt(m.norm_mu)}",
        f"norm_sd {_fmt(m.norm_sd)}",
        f"layers {len(m.layers())}",
    ]
    for role, layer in m.layers():
        lines.append(f"layer {role} {layer.header()}")
    for role, layer in m.layers():
        for row in layer.W:
            lines.append(_fmt(row))
        lines.append(_fmt(layer.b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> UtilityModel:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise ModelFormatError("not a model file (bad magic)")
    try:
        version = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ModelFormatError("missing version") from None
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        kv = {}
        pos = 1
        while not lines[pos].startswith("layer "):
            key, _, val = lines[pos].partition(" ")
            kv[key] = val
            pos += 1
        heads = []
        for _ in range(int(kv["layers"])):
            heads.append(lines[pos].split()[1:])
            pos += 1

        def floats(line):
            return np.array([float(t) for t in line.split()])

        built = {"extractor": [], "trans": [], "network": []}
        for h in heads:
            role, kind, dims = h[0], h[1], [int(t) for t in h[2:]]
            n_out = dims[0]
            W = np.stack([floats(lines[pos + i]) for i in range(n_out)]) if n_out else np.zeros((0, 0))
            pos += n_out
            b = floats(lines[pos])
            pos += 1
            if kind == "dense":
                if W.shape != (n_out, dims[1]):
                    raise ShapeError(f"{role} layer: weight block {W.shape} != declared ({n_out}, {dims[1]})")
                layer = Dense(W, b)
            elif kind == "conv":
                c_out, c_in, k, s, p, hh, ww = dims
                layer = Conv(W, b, (c_in, hh, ww), k, s, p)
            else:
                raise ModelFormatError(f"unknown layer kind {kind!r}")
            built[role].append(layer)
        if len(built["trans"]) != 1:
            raise ModelFormatError("exactly one trans layer required")
        return UtilityModel(
            kv["preset"],
            built["extractor"],
            built["trans"][0],
            built["network"],
            int(kv["n_classes"]),
            bool(int(kv["label_aware"])),
            int(kv["frac_bits"]),
            float(kv["u_empty"]),
            floats(kv["norm_mu"]),
            floats(kv["norm_sd"]),
        )
    except (KeyError, IndexError, ValueError) as e:
        if isinstance(e, ShapeError):
            raise
        raise ModelFormatError(f"corrupt model file: {e}") from None
