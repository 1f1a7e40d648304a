"""Small reverse-mode differentiable kernel for the siamese path encoders.

Ops are coarse (a whole bi-LSTM layer is one tape node) and take a leading
batch axis where that makes sense, so a batch of equal-length paths runs as
one set of matrix products.  Everything is float64.

Usage::

    tr = Trace(store)
    loss = bce_loss(tr, cosine_score(tr, a, b), labels)
    grads = tr.backward(loss)      # {block name: gradient}
"""

from __future__ import annotations

import numpy as np

from siailp.errors import DataError, NumericError, ParseError

DTYPE = np.float64
NORM_EPS = 1e-12
PROB_EPS = 1e-7
PAD_ID = -1  # embeds to a zero vector; used for the empty-material pseudo-path

CKPT_MAGIC = "SIAILP-CKPT"
CKPT_VERSION = "v1"


class Var:
    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name=None):
        self.value = value
        self.grad = None
        self.name = name

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.shape})"


def _var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=DTYPE))


class Trace:
    """Tape of backward closures plus the parameter Vars bound to a store."""

    def __init__(self, store=None, record=True):
        self.store = store
        self.record = record
        self._tape = []
        self._params = {}

    def param(self, name) -> Var:
        v = self._params.get(name)
        if v is None:
            v = self._params[name] = Var(self.store[name], name)
        return v

    def push(self, fn):
        if self.record:
            self._tape.append(fn)

    def backward(self, loss: Var) -> dict:
        if not self.record:
            raise RuntimeError("backward on a non-recording trace")
        if np.size(loss.value) != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value, dtype=DTYPE)
        for fn in reversed(self._tape):
            fn()
        grads = {}
        for name, v in self._params.items():
            g = np.zeros_like(v.value) if v.grad is None else v.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in block {name!r}")
            grads[name] = g
        return grads


def backward(trace: Trace, loss: Var) -> dict:
    return trace.backward(loss)


# ---------------------------------------------------------------- ops


def embed(tr: Trace, table: Var, ids) -> Var:
    """Row lookup; ``ids`` of any shape, PAD_ID rows are zero and get no gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    rows, dim = table.value.shape
    if ids.size and (ids.max() >= rows or ids.min() < PAD_ID):
        raise IndexError(f"embedding id out of range [0, {rows})")
    mask = ids != PAD_ID
    out_val = np.zeros(ids.shape + (dim,), dtype=DTYPE)
    out_val[mask] = table.value[ids[mask]]
    out = Var(out_val)

    def back():
        if out.grad is None:
            return
        g = np.zeros_like(table.value)
        np.add.at(g, ids[mask], out.grad[mask])
        table.accumulate(g)

    tr.push(back)
    return out


def embed_sequence(tr: Trace, path, which="input") -> Var:
    """(T, D) embeddings of one path from the input or output table."""
    name = {"input": "emb_in", "output": "emb_out"}[which]
    return embed(tr, tr.param(name), list(path))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _lstm_forward(x, W, b, reverse):
    B, T, _ = x.shape
    H = W.shape[1] // 4
    h = np.zeros((B, H), dtype=DTYPE)
    c = np.zeros((B, H), dtype=DTYPE)
    out = np.empty((B, T, H), dtype=DTYPE)
    cache = []
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        xh = np.concatenate([x[:, t], h], axis=1)
        z = xh @ W + b
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        o = _sigmoid(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        out[:, t] = h
        cache.append((t, xh, i, f, o, g, c_prev, tc))
    return out, cache


def _lstm_backward(dout, cache, W, in_dim):
    B, T, H = dout.shape
    dW = np.zeros_like(W)
    db = np.zeros((1, W.shape[1]), dtype=DTYPE)
    dx = np.zeros((B, T, in_dim), dtype=DTYPE)
    dh_next = np.zeros((B, H), dtype=DTYPE)
    dc_next = np.zeros((B, H), dtype=DTYPE)
    for t, xh, i, f, o, g, c_prev, tc in reversed(cache):
        dh = dout[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)], axis=1
        )
        dW += xh.T @ dz
        db += dz.sum(axis=0, keepdims=True)
        dxh = dz @ W.T
        dx[:, t] = dxh[:, :in_dim]
        dh_next = dxh[:, in_dim:]
    return dx, dW, db


def bilstm_layer(tr: Trace, x: Var, Wf: Var, bf: Var, Wb: Var, bb: Var) -> Var:
    """Forward and backward LSTMs over (B, T, I) or (T, I); outputs [h_fwd ; h_bwd] per step."""
    xv = x.value
    single = xv.ndim == 2
    if single:
        xv = xv[None]
    B, T, I = xv.shape
    if T < 1:
        raise ValueError("bilstm_layer needs a sequence of length >= 1")
    H = Wf.value.shape[1] // 4
    if Wf.value.shape[0] != I + H:
        raise ValueError(f"LSTM weight expects input width {Wf.value.shape[0] - H}, got {I}")
    hf, cf = _lstm_forward(xv, Wf.value, bf.value, reverse=False)
    hb, cb = _lstm_forward(xv, Wb.value, bb.value, reverse=True)
    out_val = np.concatenate([hf, hb], axis=2)
    out = Var(out_val[0] if single else out_val)

    def back():
        if out.grad is None:
            return
        d = out.grad[None] if single else out.grad
        dxf, dWf, dbf = _lstm_backward(d[:, :, :H], cf, Wf.value, I)
        dxb, dWb, dbb = _lstm_backward(d[:, :, H:], cb, Wb.value, I)
        Wf.accumulate(dWf)
        bf.accumulate(dbf)
        Wb.accumulate(dWb)
        bb.accumulate(dbb)
        dx = dxf + dxb
        x.accumulate(dx[0] if single else dx)

    tr.push(back)
    return out


def maxpool_dimwise(tr: Trace, x: Var) -> Var:
    """Max over the time axis (second to last); ties route gradient to the first argmax."""
    xv = x.value
    if xv.shape[-2] == 0:
        raise ValueError("max-pooling an empty sequence")
    arg = np.argmax(xv, axis=-2)
    out = Var(np.take_along_axis(xv, np.expand_dims(arg, -2), axis=-2).squeeze(-2))

    def back():
        if out.grad is None:
            return
        g = np.zeros_like(xv)
        np.put_along_axis(g, np.expand_dims(arg, -2), np.expand_dims(out.grad, -2), axis=-2)
        x.accumulate(g)

    tr.push(back)
    return out


def concat_rows(tr: Trace, parts) -> Var:
    sizes = [p.value.shape[0] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=0))

    def back():
        if out.grad is None:
            return
        start = 0
        for p, n in zip(parts, sizes):
            p.accumulate(out.grad[start : start + n])
            start += n

    tr.push(back)
    return out


def take_rows(tr: Trace, x: Var, index) -> Var:
    """(S, k) row indices into (n, D) -> (S, k*D), rows concatenated in slot order."""
    index = np.asarray(index, dtype=np.int64)
    S, k = index.shape
    D = x.value.shape[1]
    out = Var(x.value[index].reshape(S, k * D))

    def back():
        if out.grad is None:
            return
        g = np.zeros_like(x.value)
        np.add.at(g, index.ravel(), out.grad.reshape(S * k, D))
        x.accumulate(g)

    tr.push(back)
    return out


def ffn(tr: Trace, x: Var, W1: Var, b1: Var, W2: Var, b2: Var) -> Var:
    """relu(x W1 + b1) W2 + b2 over the last axis."""
    xv = x.value
    if xv.shape[-1] != W1.value.shape[0]:
        raise ValueError(f"ffn expects input width {W1.value.shape[0]}, got {xv.shape[-1]}")
    pre = xv @ W1.value + b1.value[0]
    hid = np.maximum(pre, 0.0)
    out = Var(hid @ W2.value + b2.value[0])

    def back():
        if out.grad is None:
            return
        go = out.grad
        go2 = go.reshape(-1, go.shape[-1])
        hid2 = hid.reshape(-1, hid.shape[-1])
        W2.accumulate(hid2.T @ go2)
        b2.accumulate(go2.sum(axis=0, keepdims=True))
        dpre = (go @ W2.value.T) * (pre > 0)
        dpre2 = dpre.reshape(-1, dpre.shape[-1])
        W1.accumulate(xv.reshape(-1, xv.shape[-1]).T @ dpre2)
        b1.accumulate(dpre2.sum(axis=0, keepdims=True))
        x.accumulate(dpre @ W1.value.T)

    tr.push(back)
    return out


def unit_normalize(tr: Trace, x: Var) -> Var:
    x = _var(x)
    xv = x.value
    norm = np.linalg.norm(xv, axis=-1, keepdims=True)
    if np.any(norm <= NORM_EPS):
        raise NumericError("unit_normalize: vector norm below 1e-12")
    y = xv / norm
    out = Var(y)

    def back():
        if out.grad is None:
            return
        gy = out.grad
        x.accumulate((gy - y * np.sum(gy * y, axis=-1, keepdims=True)) / norm)

    tr.push(back)
    return out


def cosine_score(tr: Trace, a: Var, b: Var) -> Var:
    """Inner product over the last axis of unit vectors, clamped to [-1, 1]."""
    a, b = _var(a), _var(b)
    raw = np.sum(a.value * b.value, axis=-1)
    inside = (raw >= -1.0) & (raw <= 1.0)
    out = Var(np.clip(raw, -1.0, 1.0))

    def back():
        if out.grad is None:
            return
        g = np.expand_dims(out.grad * inside, -1)
        a.accumulate(g * b.value)
        b.accumulate(g * a.value)

    tr.push(back)
    return out


def score_to_prob(score):
    return (1.0 + np.asarray(score, dtype=DTYPE)) / 2.0


def bce_loss(tr: Trace, score, label) -> Var:
    """Mean binary cross-entropy of p = (1 + score) / 2 against {0, 1} labels."""
    score = _var(score)
    y = np.asarray(label, dtype=DTYPE)
    p_raw = score_to_prob(score.value)
    p = np.clip(p_raw, PROB_EPS, 1.0 - PROB_EPS)
    inside = (p_raw >= PROB_EPS) & (p_raw <= 1.0 - PROB_EPS)
    losses = -y * np.log(p) - (1.0 - y) * np.log1p(-p)
    n = losses.size
    out = Var(np.asarray(losses.mean()))

    def back():
        if out.grad is None:
            return
        dp = (-y / p + (1.0 - y) / (1.0 - p)) * inside
        score.accumulate(out.grad * 0.5 * dp / n)

    tr.push(back)
    return out


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named float64 blocks for one model plus the metadata that fixes their shapes.

    All blocks are 2-D; biases are (1, n).  Embedding tables hold one row
    per expanded relation id.
    """

    KINDS = ("connection", "subgraph")

    def __init__(self, kind, dim, hidden, num_relations, num_paths=3, ffn_hidden=None, blocks=None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        if dim != 2 * hidden:
            raise ValueError(f"embedding width D={dim} must equal 2*H={2 * hidden}")
        if num_relations < 1 or num_paths < 1:
            raise ValueError("num_relations and num_paths must be positive")
        self.kind = kind
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.num_relations = int(num_relations)
        self.num_paths = int(num_paths)
        self.ffn_hidden = int(ffn_hidden or 2 * dim)
        self.blocks: dict = {}
        if blocks is not None:
            for name, shape in self.shapes().items():
                if name not in blocks:
                    raise DataError(f"missing parameter block {name!r}")
                value = np.asarray(blocks[name], dtype=DTYPE)
                if value.shape != shape:
                    raise DataError(f"block {name!r} has shape {value.shape}, expected {shape}")
                self.blocks[name] = value

    @property
    def ffn_input(self) -> int:
        slots = self.num_paths if self.kind == "connection" else 2 * self.num_paths
        return slots * self.dim

    def shapes(self) -> dict:
        D, H, R2 = self.dim, self.hidden, 2 * self.num_relations
        shapes = {"emb_in": (R2, D), "emb_out": (R2, D)}
        for layer, in_dim in (("lstm1", D), ("lstm2", 2 * H)):
            for direction in ("fwd", "bwd"):
                shapes[f"{layer}.{direction}.W"] = (in_dim + H, 4 * H)
                shapes[f"{layer}.{direction}.b"] = (1, 4 * H)
        shapes["ffn.W1"] = (self.ffn_input, self.ffn_hidden)
        shapes["ffn.b1"] = (1, self.ffn_hidden)
        shapes["ffn.W2"] = (self.ffn_hidden, D)
        shapes["ffn.b2"] = (1, D)
        return shapes

    def initialize(self, rng: np.random.Generator) -> "ParamStore":
        H = self.hidden
        for name, shape in self.shapes().items():
            if name.startswith("emb_"):
                bound = 1.0 / np.sqrt(self.dim)
                value = rng.uniform(-bound, bound, size=shape)
            elif name.endswith(".b") or name.startswith("ffn.b"):
                value = np.zeros(shape, dtype=DTYPE)
                if name.startswith("lstm"):
                    value[:, H : 2 * H] = 1.0  # forget gate
            else:
                bound = 1.0 / np.sqrt(shape[0])
                value = rng.uniform(-bound, bound, size=shape)
            self.blocks[name] = np.asarray(value, dtype=DTYPE)
        return self

    def __getitem__(self, name):
        return self.blocks[name]

    def __setitem__(self, name, value):
        self.blocks[name] = value

    def __iter__(self):
        return iter(self.blocks)

    def items(self):
        return self.blocks.items()

    def num_parameters(self) -> int:
        return sum(v.size for v in self.blocks.values())

    def copy(self) -> "ParamStore":
        return ParamStore(
            self.kind, self.dim, self.hidden, self.num_relations, self.num_paths, self.ffn_hidden,
            blocks={k: v.copy() for k, v in self.blocks.items()},
        )

    def header(self) -> str:
        return f"{CKPT_MAGIC} {CKPT_VERSION} model={self.kind} D={self.dim} H={self.hidden} R={self.num_relations}"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.header() + "\n")
            for name in self.shapes():
                value = self.blocks[name]
                fh.write(f"[{name}] {value.shape[0]} {value.shape[1]}\n")
                np.savetxt(fh, value, fmt="%.17g", delimiter=" ")

    @classmethod
    def load(cls, path) -> "ParamStore":
        try:
            fh = open(path, encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {path}: {exc}") from None
        with fh:
            lines = fh.read().split("\n")
        parts = lines[0].split()
        if len(parts) != 6 or parts[0] != CKPT_MAGIC or parts[1] != CKPT_VERSION:
            raise ParseError(path, 1, f"not a {CKPT_MAGIC} {CKPT_VERSION} file")
        try:
            meta = dict(p.split("=", 1) for p in parts[2:])
            kind, D, H, R = meta["model"], int(meta["D"]), int(meta["H"]), int(meta["R"])
        except (KeyError, ValueError) as exc:
            raise ParseError(path, 1, f"bad header: {exc}") from None
        blocks = {}
        i = 1
        while i < len(lines):
            line = lines[i].strip()
            i += 1
            if not line:
                continue
            if not line.startswith("["):
                raise ParseError(path, i, "expected a '[name] rows cols' block header")
            try:
                name, rows, cols = line[1:].replace("]", " ", 1).split()
                rows, cols = int(rows), int(cols)
            except ValueError:
                raise ParseError(path, i, "malformed block header") from None
            values = []
            while len(values) < rows * cols and i < len(lines):
                values.extend(lines[i].split())
                i += 1
            if len(values) != rows * cols:
                raise ParseError(path, i, f"block {name!r} has {len(values)} values, expected {rows * cols}")
            blocks[name] = np.array([float(v) for v in values], dtype=DTYPE).reshape(rows, cols)
        try:
            w1 = blocks["ffn.W1"]
        except KeyError:
            raise DataError(f"{path}: missing block 'ffn.W1'") from None
        slots = w1.shape[0] // D
        num_paths = slots if kind == "connection" else slots // 2
        return cls(kind, D, H, R, num_paths=num_paths, ffn_hidden=w1.shape[1], blocks=blocks)


def save_checkpoint(store: ParamStore, path) -> None:
    store.save(path)


def load_checkpoint(path) -> ParamStore:
    return ParamStore.load(path)


# ---------------------------------------------------------------- gradient check


def finite_diff_check(loss_fn, store: ParamStore, samples=100, rng=None, h=1e-5, floor=1e-6):
    """Max relative error between reverse-mode and central-difference gradients.

    ``loss_fn(trace)`` must build a scalar loss from ``trace.param(...)``.
    ``samples`` scalar parameters are drawn uniformly from the blocks the
    loss touches.  Relative error is ``|a - n| / max(|a|, |n|, floor)``; the
    floor keeps near-zero gradients from turning rounding noise into
    spurious failures.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    tr = Trace(store)
    loss = loss_fn(tr)
    grads = tr.backward(loss)
    names = sorted(grads)
    sizes = np.array([store[n].size for n in names])
    picks = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        b = int(np.searchsorted(offsets, flat, side="right") - 1)
        name, j = names[b], int(flat - offsets[b])
        block = store[name].reshape(-1)
        old = block[j]
        block[j] = old + h
        plus = float(loss_fn(Trace(store, record=False)).value)
        block[j] = old - h
        minus = float(loss_fn(Trace(store, record=False)).value)
        block[j] = old
        numeric = (plus - minus) / (2 * h)
        analytic = grads[name].reshape(-1)[j]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, err)
    return worst
