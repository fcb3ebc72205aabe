"""Secure coalition scoring, written once for any arithmetic backend.

``backend`` is an :class:`~shapmkt.mpc.Engine` (shares over a network) or
a :class:`~shapmkt.mpc.PlainFixedPoint` (cleartext ring values).  Both run
the identical operation sequence, which is what makes exact-mode results
bit-identical.

Encoding phase: buyer and one owner compute that owner's per-sample
representations in 2PC and sum them.  Mapping phase: the sums are lifted
to all parties, averaged per coalition with a public matrix, pushed
through the network head, and the pre-sigmoid score is opened to the buyer.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .model import Conv, Dense, UtilityModel, _one_hot

# cap on Beaver products per matvec call (memory, not security)
MAX_PRODUCTS = 1 << 22


def _share_layer(backend, layer, buyer, parties):
    W = backend.input_tensor(buyer, layer.W, parties)
    b = backend.input_tensor(buyer, layer.b, parties)
    return W, b


def _matvec(backend, W, x, b):
    m, n = W.shape
    S = x.shape[1]
    step = max(1, MAX_PRODUCTS // max(1, m * n))
    if S <= step:
        return backend.matvec_affine(W, x, b)
    parts = [backend.matvec_affine(W, x[:, i : i + step], b) for i in range(0, S, step)]
    return backend.concat(parts, axis=1)


def _conv_columns(x, layer: Conv):
    """(in_dim, S) -> (c*k*k, P*S) with zero padding; purely local."""
    idx = layer.gather_index()
    P, ckk = idx.shape

    def gather(p):
        padded = np.concatenate([p, np.zeros((1, p.shape[1]), dtype=p.dtype)], axis=0)
        return padded[idx].transpose(1, 0, 2).reshape(ckk, -1)

    return x.map(gather)


def _conv_out(y, layer: Conv, S):
    c_out = layer.W.shape[0]
    return y.map(lambda p: p.reshape(c_out * layer.positions, S))


def encode_owner(backend, m: UtilityModel, X, labels=None, buyer=0, owner=1):
    """Sum over the owner's samples of their representations, shared by (buyer, owner)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) == 0:
        raise ParameterError("owner has no samples")
    parties = (buyer, owner)
    S = len(X)
    h = backend.input_tensor(owner, X.T, parties)
    for i, layer in enumerate([m.raw_first_layer()] + m.extractor[1:]):
        W, b = _share_layer(backend, layer, buyer, parties)
        if isinstance(layer, Dense):
            z = _matvec(backend, W, h, b)
        else:
            z = _conv_out(_matvec(backend, W, _conv_columns(h, layer), b), layer, S)
        h = backend.square(z)
    if m.label_aware:
        if labels is None:
            raise ParameterError("label-aware model needs owner labels")
        onehot = backend.input_tensor(owner, _one_hot(labels, m.n_classes).T, parties)
        h = backend.concat([h, onehot], axis=0)
    Wt, bt = _share_layer(backend, m.trans, buyer, parties)
    phi = _matvec(backend, Wt, h, bt)
    return backend.sum(phi, axis=1)


def coalition_matrix(coalitions, counts) -> np.ndarray:
    """(N, K) public averaging matrix: entry 1/|samples of C| for each member of C."""
    counts = np.asarray(counts, dtype=np.int64)
    M = np.zeros((len(counts), len(coalitions)))
    for k, c in enumerate(coalitions):
        c = list(c)
        if not c:
            raise ParameterError("the empty coalition is not scored securely")
        M[c, k] = 1.0 / counts[c].sum()
    return M


def score_coalitions(backend, m: UtilityModel, sums, counts, coalitions, buyer, parties) -> np.ndarray:
    """Pre-sigmoid scores of many coalitions from n-party shared owner sums."""
    if not coalitions:
        return np.zeros(0)
    stacked = backend.stack(list(sums), axis=1)
    r = backend.public_matmul(stacked, coalition_matrix(coalitions, counts))
    for layer in m.network:
        W, b = _share_layer(backend, layer, buyer, parties)
        r = _matvec(backend, W, r, b)
    return backend.open_float(r, to=buyer)[0]


def mpc_score_coalition(backend, m: UtilityModel, owner_sets, buyer=0, owners=None) -> float:
    """Full two-phase evaluation of one coalition; returns the buyer's pre-sigmoid score.

    ``owner_sets`` is a list of ``(X, labels)`` pairs, one per participating owner.
    """
    owners = list(owners) if owners is not None else list(range(1, len(owner_sets) + 1))
    parties = (buyer, *owners)
    reps, counts = [], []
    for owner, (X, labels) in zip(owners, owner_sets):
        s = encode_owner(backend, m, X, labels, buyer, owner)
        reps.append(backend.convert_2_to_n(s, parties))
        counts.append(len(X))
    r = backend.mean_readout(reps, counts)
    r = r.map(lambda p: p[:, None])
    for layer in m.network:
        W, b = _share_layer(backend, layer, buyer, parties)
        r = _matvec(backend, W, r, b)
    return float(backend.open_float(r, to=buyer)[0, 0])
