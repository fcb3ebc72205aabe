"""Random fixed-point programs run on any backend exposing the engine API.

Each program is a list of steps over a register file; ``run`` evaluates it
on a backend and, in parallel, in float64 with a worst-case error bound
that grows by the documented per-op budget (one ulp per truncation plus
propagated input error).
"""
import numpy as np

ULP = 2.0**-16
ENC = 2.0**-17  # encoding error of an input / public coefficient


def random_program(rng, n_steps=6, width=4):
    prog = [("input", 0, rng.uniform(-2, 2, size=width)), ("input", 1, rng.uniform(-2, 2, size=width))]
    for _ in range(n_steps):
        kind = rng.choice(["lincomb", "mul", "square", "matvec", "mean"])
        if kind == "lincomb":
            coefs = [float(rng.choice([1, -1, 2, 0.5, 0.25, -0.75, 1.5]))]
            coefs.append(float(rng.choice([1, -1, 0.5, 3])))
            prog.append(("lincomb", coefs, rng.uniform(-1, 1, size=width)))
        elif kind == "matvec":
            prog.append(("matvec", rng.uniform(-1, 1, size=(width, width)), rng.uniform(-1, 1, size=width)))
        elif kind == "mean":
            prog.append(("mean", [int(c) for c in rng.integers(1, 6, size=2)]))
        else:
            prog.append((kind,))
    return prog


def run(backend, prog, parties, owners):
    """Returns (ring output, float reference, error bound)."""
    regs, ref, err = [], [], []
    for step in prog:
        op = step[0]
        if op == "input":
            _, who, vals = step
            regs.append(backend.input_tensor(owners[who], vals, parties))
            ref.append(np.asarray(vals, dtype=float))
            err.append(np.full(len(vals), ENC))
            continue
        a, b = regs[-1], regs[-2]
        ra, rb = ref[-1], ref[-2]
        ea, eb = err[-1], err[-2]
        if op == "lincomb":
            _, (c1, c2), off = step
            regs.append(backend.lincomb([(c1, a), (c2, b)], off))
            ref.append(c1 * ra + c2 * rb + off)
            frac = not (float(c1).is_integer() and float(c2).is_integer())
            e = abs(c1) * ea + abs(c2) * eb + ENC
            if frac:
                e = e + ENC * (np.abs(ra) + np.abs(rb)) + ULP
            err.append(e)
        elif op == "mul":
            regs.append(backend.beaver_mul(a, b))
            ref.append(ra * rb)
            err.append(np.abs(ra) * eb + np.abs(rb) * ea + ea * eb + ULP)
        elif op == "square":
            regs.append(backend.square(a))
            ref.append(ra * ra)
            err.append(2 * np.abs(ra) * ea + ea * ea + ULP)
        elif op == "matvec":
            _, W, bias = step
            Wt = backend.input_tensor(owners[0], W, parties)
            bt = backend.input_tensor(owners[0], bias, parties)
            regs.append(backend.matvec_affine(Wt, a, bt))
            ref.append(W @ ra + bias)
            err.append(np.abs(W) @ ea + ENC * (np.abs(ra).sum() + np.abs(ea).sum()) + ENC + ULP)
        elif op == "mean":
            _, counts = step
            # a and b stand for per-owner sums of `counts` samples
            regs.append(backend.mean_readout([a, b], counts))
            ref.append((ra + rb) / sum(counts))
            e = (ea + eb) / sum(counts)
            if sum(counts) > 1:
                e = e + ENC * np.abs(ra + rb) + ULP
            err.append(e)
        # keep magnitudes bounded so squares cannot blow up the ring
        if np.max(np.abs(ref[-1])) > 50:
            regs.append(backend.lincomb([(1.0 / 64, regs[-1])]))
            ref.append(ref[-1] / 64)
            err.append(err[-1] / 64 + ENC * np.abs(ref[-2]) + ULP)
    return backend.open(regs[-1]), ref[-1], err[-1], regs[-1].scale
