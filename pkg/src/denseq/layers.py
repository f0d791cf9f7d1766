"""Primitive layers with exact forward and backward passes.

Every layer follows the same protocol: ``forward(x)`` returns ``(y, cache)``
and ``backward(cache, dy)`` returns ``(dx, grads)`` where ``grads`` mirrors
the layer's ``params()`` dict. Parameters are float64 numpy arrays owned by
the layer; forward/backward never mutate them, so a layer is safe to share
across threads as long as each call keeps its own cache.

Sequence layers accept either a single sequence ``[T, dim]`` or a batch
``[B, T, dim]``; internally everything runs batched. The LSTM gate order is
fixed as (input, forget, cell-candidate, output) and the gate blocks are
stacked along the first axis of the 4d-row weight matrices.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError
from .tensor import DTYPE, check_finite, glorot_uniform


def sigmoid(x):
    # piecewise form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0.0)


def _batched(x, feature_rank=1):
    """Add a batch axis if ``x`` carries a single sequence."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 1 + feature_rank:
        return x[None], True
    if x.ndim == 2 + feature_rank:
        return x, False
    raise DimensionError(f"expected rank {1 + feature_rank} or {2 + feature_rank} input, got shape {x.shape}")


def _debatched(y, squeezed):
    return y[0] if squeezed else y


class LstmLayer:
    """Unidirectional LSTM unrolled left to right from a zero initial state."""

    def __init__(self, input_dim, cell_dim):
        if input_dim < 1 or cell_dim < 1:
            raise DimensionError("lstm dims must be positive")
        self.input_dim = input_dim
        self.cell_dim = cell_dim
        self.out_dim = cell_dim
        d = cell_dim
        self.w = np.zeros((4 * d, input_dim), dtype=DTYPE)
        self.r = np.zeros((4 * d, d), dtype=DTYPE)
        self.b = np.zeros(4 * d, dtype=DTYPE)

    def init_params(self, rng):
        d = self.cell_dim
        self.w = glorot_uniform(rng, (4 * d, self.input_dim), self.input_dim, d)
        self.r = glorot_uniform(rng, (4 * d, d), d, d)
        self.b = np.zeros(4 * d, dtype=DTYPE)
        self.b[d:2 * d] = 1.0  # forget-gate bias; stabilizes deep stacks

    def params(self):
        return {"w": self.w, "r": self.r, "b": self.b}

    def step(self, x_t, h_prev, c_prev):
        """One recurrence step. Inputs may be vectors or [B, dim] batches."""
        x_t = np.asarray(x_t, dtype=DTYPE)
        single = x_t.ndim == 1
        if single:
            x_t, h_prev, c_prev = x_t[None], np.asarray(h_prev)[None], np.asarray(c_prev)[None]
        if x_t.shape[-1] != self.input_dim:
            raise DimensionError(f"lstm step input dim {x_t.shape[-1]} != {self.input_dim}")
        check_finite(x_t, "lstm input")
        d = self.cell_dim
        a = x_t @ self.w.T + h_prev @ self.r.T + self.b
        i = sigmoid(a[:, :d])
        f = sigmoid(a[:, d:2 * d])
        g = np.tanh(a[:, 2 * d:3 * d])
        o = sigmoid(a[:, 3 * d:])
        c = f * c_prev + i * g
        h = o * np.tanh(c)
        if single:
            return h[0], c[0]
        return h, c

    def forward(self, x):
        x, squeezed = _batched(x)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"lstm input dim {x.shape[-1]} != {self.input_dim}")
        if x.shape[1] < 1:
            raise DimensionError("lstm needs at least one frame")
        check_finite(x, "lstm input")
        bsz, tlen, _ = x.shape
        d = self.cell_dim
        gx = x @ self.w.T + self.b  # input contribution for all frames at once
        ii = np.empty((bsz, tlen, d), dtype=DTYPE)
        ff = np.empty_like(ii)
        gg = np.empty_like(ii)
        oo = np.empty_like(ii)
        cc = np.empty_like(ii)
        hh = np.empty_like(ii)
        hprev = np.empty_like(ii)
        h = np.zeros((bsz, d), dtype=DTYPE)
        c = np.zeros((bsz, d), dtype=DTYPE)
        for t in range(tlen):
            hprev[:, t] = h
            a = gx[:, t] + h @ self.r.T
            i = sigmoid(a[:, :d])
            f = sigmoid(a[:, d:2 * d])
            g = np.tanh(a[:, 2 * d:3 * d])
            o = sigmoid(a[:, 3 * d:])
            c = f * c + i * g
            h = o * np.tanh(c)
            ii[:, t], ff[:, t], gg[:, t], oo[:, t], cc[:, t], hh[:, t] = i, f, g, o, c, h
        cache = {"x": x, "i": ii, "f": ff, "g": gg, "o": oo, "c": cc,
                 "tc": np.tanh(cc), "hprev": hprev, "squeezed": squeezed}
        return _debatched(hh, squeezed), cache

    def backward(self, cache, dy):
        dy, _ = _batched(dy)
        x = cache["x"]
        bsz, tlen, _ = x.shape
        d = self.cell_dim
        ii, ff, gg, oo, cc, tc = (cache[k] for k in ("i", "f", "g", "o", "c", "tc"))
        da = np.empty((bsz, tlen, 4 * d), dtype=DTYPE)
        dh_next = np.zeros((bsz, d), dtype=DTYPE)
        dc_next = np.zeros((bsz, d), dtype=DTYPE)
        for t in range(tlen - 1, -1, -1):
            dh = dy[:, t] + dh_next
            i, f, g, o, c, tct = ii[:, t], ff[:, t], gg[:, t], oo[:, t], cc[:, t], tc[:, t]
            c_prev = cc[:, t - 1] if t > 0 else np.zeros_like(c)
            do = dh * tct
            dc = dh * o * (1.0 - tct * tct) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_next = dc * f
            da_t = da[:, t]
            da_t[:, :d] = di * i * (1.0 - i)
            da_t[:, d:2 * d] = df * f * (1.0 - f)
            da_t[:, 2 * d:3 * d] = dg * (1.0 - g * g)
            da_t[:, 3 * d:] = do * o * (1.0 - o)
            dh_next = da_t @ self.r
        flat_da = da.reshape(-1, 4 * d)
        grads = {
            "w": flat_da.T @ x.reshape(-1, self.input_dim),
            "r": flat_da.T @ cache["hprev"].reshape(-1, d),
            "b": flat_da.sum(axis=0),
        }
        dx = (flat_da @ self.w).reshape(bsz, tlen, self.input_dim)
        return _debatched(dx, cache["squeezed"]), grads


class BlstmLayer:
    """Bidirectional LSTM: forward and time-reversed passes, concatenated."""

    def __init__(self, input_dim, cell_dim):
        self.input_dim = input_dim
        self.cell_dim = cell_dim
        self.out_dim = 2 * cell_dim
        self.fwd = LstmLayer(input_dim, cell_dim)
        self.bwd = LstmLayer(input_dim, cell_dim)

    def init_params(self, rng):
        self.fwd.init_params(rng)
        self.bwd.init_params(rng)

    def params(self):
        out = {}
        for tag, half in (("fwd", self.fwd), ("bwd", self.bwd)):
            for name, arr in half.params().items():
                out[f"{tag}.{name}"] = arr
        return out

    def forward(self, x):
        x, squeezed = _batched(x)
        yf, cf = self.fwd.forward(x)
        yb, cb = self.bwd.forward(x[:, ::-1])
        y = np.concatenate([yf, yb[:, ::-1]], axis=-1)
        return _debatched(y, squeezed), {"f": cf, "b": cb, "squeezed": squeezed}

    def backward(self, cache, dy):
        dy, _ = _batched(dy)
        d = self.cell_dim
        dxf, gf = self.fwd.backward(cache["f"], dy[:, :, :d])
        dxb, gb = self.bwd.backward(cache["b"], dy[:, ::-1, d:])
        dx = dxf + dxb[:, ::-1]
        grads = {f"fwd.{k}": v for k, v in gf.items()}
        grads.update({f"bwd.{k}": v for k, v in gb.items()})
        return _debatched(dx, cache["squeezed"]), grads


class TdnnLayer:
    """Time-delay layer: splice frames at fixed offsets, affine map, ReLU.

    Edge frames use clamped (replicated) context so the frame count never
    shrinks. The spliced vector is laid out offset-major: [x_{t+o_1}; ...].
    """

    def __init__(self, input_dim, out_dim, offsets=(-1, 0, 1)):
        offs = tuple(int(o) for o in offsets)
        if list(offs) != sorted(set(offs)) or 0 not in offs:
            raise DimensionError("tdnn offsets must be strictly increasing and include 0")
        self.input_dim = input_dim
        self.out_dim = out_dim
        self.offsets = offs
        self.w = np.zeros((out_dim, input_dim * len(offs)), dtype=DTYPE)
        self.b = np.zeros(out_dim, dtype=DTYPE)

    def init_params(self, rng):
        fan_in = self.input_dim * len(self.offsets)
        self.w = glorot_uniform(rng, (self.out_dim, fan_in), fan_in, self.out_dim)
        self.b = np.zeros(self.out_dim, dtype=DTYPE)

    def params(self):
        return {"w": self.w, "b": self.b}

    def _splice_index(self, tlen):
        base = np.arange(tlen)
        return np.stack([np.clip(base + o, 0, tlen - 1) for o in self.offsets], axis=1)

    def forward(self, x):
        x, squeezed = _batched(x)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"tdnn input dim {x.shape[-1]} != {self.input_dim}")
        bsz, tlen, _ = x.shape
        idx = self._splice_index(tlen)
        spliced = x[:, idx, :].reshape(bsz, tlen, -1)
        pre = spliced @ self.w.T + self.b
        y = relu(pre)
        return _debatched(y, squeezed), {"spliced": spliced, "pre": pre, "tlen": tlen,
                                         "bsz": bsz, "squeezed": squeezed}

    def backward(self, cache, dy):
        dy, _ = _batched(dy)
        bsz, tlen = cache["bsz"], cache["tlen"]
        dpre = dy * (cache["pre"] > 0)
        flat = dpre.reshape(-1, self.out_dim)
        grads = {
            "w": flat.T @ cache["spliced"].reshape(-1, self.w.shape[1]),
            "b": flat.sum(axis=0),
        }
        dspliced = (flat @ self.w).reshape(bsz, tlen, len(self.offsets), self.input_dim)
        dx = np.zeros((bsz, tlen, self.input_dim), dtype=DTYPE)
        dx_t = dx.transpose(1, 0, 2)  # view; accumulate along time axis
        base = np.arange(tlen)
        for j, off in enumerate(self.offsets):
            np.add.at(dx_t, np.clip(base + off, 0, tlen - 1), dspliced[:, :, j].transpose(1, 0, 2))
        return _debatched(dx, cache["squeezed"]), grads


class Conv2dLayer:
    """Same-padded 2-D convolution over (time, feature) with ReLU.

    Input is channels-last [T, F, C] (or batched [B, T, F, C]); padding
    replicates edge frames so output keeps the [T, F] raster.
    """

    def __init__(self, in_channels, filters=32, kernel=(3, 3)):
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError("conv kernel spatial dims must be odd")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = (kh, kw)
        self.out_dim = filters
        self.w = np.zeros((filters, in_channels, kh, kw), dtype=DTYPE)
        self.b = np.zeros(filters, dtype=DTYPE)

    def init_params(self, rng):
        kh, kw = self.kernel
        fan_in = self.in_channels * kh * kw
        self.w = glorot_uniform(rng, (self.filters, self.in_channels, kh, kw), fan_in, self.filters)
        self.b = np.zeros(self.filters, dtype=DTYPE)

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        x, squeezed = _batched(x, feature_rank=2)
        if x.shape[-1] != self.in_channels:
            raise DimensionError(f"conv channels {x.shape[-1]} != {self.in_channels}")
        bsz, tlen, fdim, _ = x.shape
        kh, kw = self.kernel
        ph, pw = kh // 2, kw // 2
        tmap = np.clip(np.arange(-ph, tlen + ph), 0, tlen - 1)
        fmap = np.clip(np.arange(-pw, fdim + pw), 0, fdim - 1)
        xp = x[:, tmap][:, :, fmap]
        pre = np.zeros((bsz, tlen, fdim, self.filters), dtype=DTYPE)
        for dt in range(kh):
            for df in range(kw):
                pre += xp[:, dt:dt + tlen, df:df + fdim, :] @ self.w[:, :, dt, df].T
        pre += self.b
        y = relu(pre)
        return _debatched(y, squeezed), {"xp": xp, "pre": pre, "shape": (bsz, tlen, fdim),
                                         "tmap": tmap, "fmap": fmap, "squeezed": squeezed}

    def backward(self, cache, dy):
        dy, _ = _batched(dy, feature_rank=2)
        bsz, tlen, fdim = cache["shape"]
        kh, kw = self.kernel
        xp, tmap, fmap = cache["xp"], cache["tmap"], cache["fmap"]
        dpre = dy * (cache["pre"] > 0)
        flat = dpre.reshape(-1, self.filters)
        grads = {"w": np.zeros_like(self.w), "b": flat.sum(axis=0)}
        dxp = np.zeros_like(xp)
        for dt in range(kh):
            for df in range(kw):
                patch = xp[:, dt:dt + tlen, df:df + fdim, :].reshape(-1, self.in_channels)
                grads["w"][:, :, dt, df] = flat.T @ patch
                dxp[:, dt:dt + tlen, df:df + fdim, :] += dpre @ self.w[:, :, dt, df]
        # fold clamped padding back onto the frames that produced it
        tmp = np.zeros((bsz, tlen, fdim + 2 * (kw // 2), self.in_channels), dtype=DTYPE)
        np.add.at(tmp.transpose(1, 0, 2, 3), tmap, dxp.transpose(1, 0, 2, 3))
        dx = np.zeros((bsz, tlen, fdim, self.in_channels), dtype=DTYPE)
        np.add.at(dx.transpose(2, 0, 1, 3), fmap, tmp.transpose(2, 0, 1, 3))
        return _debatched(dx, cache["squeezed"]), grads


class AffineLayer:
    """Per-frame affine map, optionally followed by ReLU."""

    def __init__(self, input_dim, out_dim, use_relu=False):
        self.input_dim = input_dim
        self.out_dim = out_dim
        self.use_relu = use_relu
        self.w = np.zeros((out_dim, input_dim), dtype=DTYPE)
        self.b = np.zeros(out_dim, dtype=DTYPE)

    def init_params(self, rng):
        self.w = glorot_uniform(rng, (self.out_dim, self.input_dim), self.input_dim, self.out_dim)
        self.b = np.zeros(self.out_dim, dtype=DTYPE)

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        x, squeezed = _batched(x)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"affine input dim {x.shape[-1]} != {self.input_dim}")
        pre = x @ self.w.T + self.b
        y = relu(pre) if self.use_relu else pre
        return _debatched(y, squeezed), {"x": x, "pre": pre, "squeezed": squeezed}

    def backward(self, cache, dy):
        dy, _ = _batched(dy)
        dpre = dy * (cache["pre"] > 0) if self.use_relu else dy
        flat = dpre.reshape(-1, self.out_dim)
        grads = {"w": flat.T @ cache["x"].reshape(-1, self.input_dim), "b": flat.sum(axis=0)}
        dx = (flat @ self.w).reshape(cache["x"].shape)
        return _debatched(dx, cache["squeezed"]), grads


class SoftmaxOutput:
    """Affine projection to class logits plus a stable log-softmax.

    ``forward`` returns per-frame log-probabilities; ``backward`` expects the
    gradient with respect to the *logits*, which is what the cross-entropy
    and variance-regularized losses produce directly.
    """

    def __init__(self, input_dim, classes):
        if classes < 2:
            raise DimensionError("softmax needs at least 2 classes")
        self.input_dim = input_dim
        self.classes = classes
        self.out_dim = classes
        self.w = np.zeros((classes, input_dim), dtype=DTYPE)
        self.b = np.zeros(classes, dtype=DTYPE)

    def init_params(self, rng):
        self.w = glorot_uniform(rng, (self.classes, self.input_dim), self.input_dim, self.classes)
        self.b = np.zeros(self.classes, dtype=DTYPE)

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, x):
        x, squeezed = _batched(x)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"softmax input dim {x.shape[-1]} != {self.input_dim}")
        logits = x @ self.w.T + self.b
        shift = logits.max(axis=-1, keepdims=True)
        log_z = np.log(np.exp(logits - shift).sum(axis=-1, keepdims=True)) + shift
        log_probs = logits - log_z
        cache = {"x": x, "logits": logits, "log_z": log_z[..., 0],
                 "probs": np.exp(log_probs), "squeezed": squeezed}
        return _debatched(log_probs, squeezed), cache

    def backward(self, cache, dlogits):
        dlogits, _ = _batched(dlogits)
        flat = dlogits.reshape(-1, self.classes)
        grads = {"w": flat.T @ cache["x"].reshape(-1, self.input_dim), "b": flat.sum(axis=0)}
        dx = (flat @ self.w).reshape(cache["x"].shape)
        return _debatched(dx, cache["squeezed"]), grads

    def project(self, x):
        """Return (logits, log_probs, log_Z) without keeping a backward cache."""
        log_probs, cache = self.forward(x)
        sq = cache["squeezed"]
        return _debatched(cache["logits"], sq), log_probs, _debatched(cache["log_z"], sq)


class ResidualWrap:
    """Identity shortcut around a layer: output = H(x) + x."""

    def __init__(self, inner, input_dim):
        if inner.out_dim != input_dim:
            raise DimensionError(
                f"residual shortcut needs matching dims, got {input_dim} -> {inner.out_dim}")
        self.inner = inner
        self.input_dim = input_dim
        self.out_dim = inner.out_dim

    def init_params(self, rng):
        self.inner.init_params(rng)

    def params(self):
        return self.inner.params()

    def forward(self, x):
        y, cache = self.inner.forward(x)
        return y + np.asarray(x, dtype=DTYPE), cache

    def backward(self, cache, dy):
        dx, grads = self.inner.backward(cache, dy)
        return dx + np.asarray(dy, dtype=DTYPE), grads


class DenseBlock:
    """Dense connectivity inside one block.

    Layer j consumes the concatenation of the block input and all previous
    layers' outputs; the block output concatenates the layers' outputs only
    (the block input feeds connectivity but is excluded from the result).
    """

    def __init__(self, layers, input_dim):
        dims = [input_dim]
        for j, layer in enumerate(layers):
            want = sum(dims)
            if layer.input_dim != want:
                raise DimensionError(
                    f"dense block layer {j} expects input dim {want}, has {layer.input_dim}")
            dims.append(layer.out_dim)
        self.layers = list(layers)
        self.input_dim = input_dim
        self.inner_dims = dims
        self.out_dim = sum(dims[1:])

    def init_params(self, rng):
        for layer in self.layers:
            layer.init_params(rng)

    def params(self):
        out = {}
        for j, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"l{j}.{name}"] = arr
        return out

    def forward(self, x):
        x, squeezed = _batched(x)
        xs = [x]
        caches = []
        for layer in self.layers:
            xin = xs[0] if len(xs) == 1 else np.concatenate(xs, axis=-1)
            y, cache = layer.forward(xin)
            caches.append(cache)
            xs.append(y)
        out = xs[1] if len(xs) == 2 else np.concatenate(xs[1:], axis=-1)
        return _debatched(out, squeezed), {"caches": caches, "squeezed": squeezed}

    def backward(self, cache, dy):
        dy, _ = _batched(dy)
        dims = self.inner_dims
        splits = np.cumsum(dims[1:])[:-1]
        douts = np.split(dy, splits, axis=-1)
        acc = [None] * (len(self.layers) + 1)
        grads = {}
        for j in range(len(self.layers) - 1, -1, -1):
            g = douts[j] if acc[j + 1] is None else douts[j] + acc[j + 1]
            dxin, layer_grads = self.layers[j].backward(cache["caches"][j], g)
            for name, arr in layer_grads.items():
                grads[f"l{j}.{name}"] = arr
            pieces = np.split(dxin, np.cumsum(dims[:j]), axis=-1) if j > 0 else [dxin]
            for k, piece in enumerate(pieces):
                acc[k] = piece if acc[k] is None else acc[k] + piece
        return _debatched(acc[0], cache["squeezed"]), grads


class ToImage:
    """Insert a trailing channel axis: [.., T, D] -> [.., T, D, 1]."""

    def __init__(self, input_dim):
        self.input_dim = input_dim
        self.out_dim = (input_dim, 1)

    def init_params(self, rng):
        pass

    def params(self):
        return {}

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        return x[..., None], {"shape": x.shape}

    def backward(self, cache, dy):
        return np.asarray(dy, dtype=DTYPE).reshape(cache["shape"]), {}


class FlattenImage:
    """Flatten the (feature, channel) raster per frame: [.., F, C] -> [.., F*C]."""

    def __init__(self, feat_dim, channels):
        self.input_dim = (feat_dim, channels)
        self.out_dim = feat_dim * channels

    def init_params(self, rng):
        pass

    def params(self):
        return {}

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        return x.reshape(x.shape[:-2] + (-1,)), {"shape": x.shape}

    def backward(self, cache, dy):
        return np.asarray(dy, dtype=DTYPE).reshape(cache["shape"]), {}


class Embedding:
    """Token id lookup table (used by the recurrent language model)."""

    def __init__(self, vocab_size, dim):
        self.vocab_size = vocab_size
        self.dim = dim
        self.out_dim = dim
        self.table = np.zeros((vocab_size, dim), dtype=DTYPE)

    def init_params(self, rng):
        self.table = rng.normal(0.0, 0.1, (self.vocab_size, self.dim))

    def params(self):
        return {"table": self.table}

    def forward(self, ids):
        ids = np.asarray(ids)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise NumericError("token id out of range")
        return self.table[ids], {"ids": ids}

    def backward(self, cache, dy):
        grads = {"table": np.zeros_like(self.table)}
        np.add.at(grads["table"], cache["ids"], np.asarray(dy, dtype=DTYPE))
        return None, grads
