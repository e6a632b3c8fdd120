"""Convolutional threshold regressor: forward, exact backward, checkpoints.

Fixed architecture, float64 throughout.  A 4-channel 32x32 augmented patch
runs through two valid 5x5 conv + relu + 2x2 max-pool blocks (32 filters
each), a 100-node fully connected layer with relu and inverted dropout
(train mode only), and a scalar head; the visibility threshold is
``softplus(z) + T_MIN`` so it is always positive.  Shapes along the way:
4x32x32 -> 32x28x28 -> 32x14x14 -> 32x10x10 -> 32x5x5 -> 800 -> 100 -> 1.

Gradients are computed by hand with reverse-mode chain rule; pooling routes
the gradient to the argmax (first index wins ties, row-major within the
2x2 window).  The global log-scale parameter ``a`` rides along with the
network parameters but its gradient comes from the quality model.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .features import AugmentedPatch
from .quality_model import T_MIN

PATCH_SIZE = 32
IN_CHANNELS = 4
CONV1_FILTERS = 32
CONV2_FILTERS = 32
KERNEL_SIZE = 5
FC1_NODES = 100
FLAT_SIZE = CONV2_FILTERS * 5 * 5  # 800 after the second pool
DROPOUT_RATE = 0.5

CHECKPOINT_MAGIC = b"VTH1"
_ARCH = (PATCH_SIZE, IN_CHANNELS, CONV1_FILTERS, CONV2_FILTERS, KERNEL_SIZE, FC1_NODES)

_SHAPES = (
    ("conv1_w", (CONV1_FILTERS, IN_CHANNELS, KERNEL_SIZE, KERNEL_SIZE)),
    ("conv1_b", (CONV1_FILTERS,)),
    ("conv2_w", (CONV2_FILTERS, CONV1_FILTERS, KERNEL_SIZE, KERNEL_SIZE)),
    ("conv2_b", (CONV2_FILTERS,)),
    ("fc1_w", (FC1_NODES, FLAT_SIZE)),
    ("fc1_b", (FC1_NODES,)),
    ("fc2_w", (FC1_NODES,)),
    ("fc2_b", ()),
    ("a", ()),
)
PARAM_COUNT = sum(int(np.prod(shape, dtype=np.int64)) for _, shape in _SHAPES)


@dataclass(eq=False)
class _TensorBundle:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: float
    a: float

    def to_vector(self) -> np.ndarray:
        """Flatten all parameters into one float64 vector in checkpoint order."""
        return np.concatenate(
            [np.asarray(getattr(self, name), dtype=np.float64).ravel() for name, _ in _SHAPES]
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (PARAM_COUNT,):
            raise DataError(f"parameter vector has {vec.size} entries, expected {PARAM_COUNT}")
        if not np.all(np.isfinite(vec)):
            raise DataError("parameter vector contains non-finite values")
        fields, pos = {}, 0
        for name, shape in _SHAPES:
            size = int(np.prod(shape, dtype=np.int64))
            chunk = vec[pos : pos + size]
            fields[name] = float(chunk[0]) if shape == () else chunk.reshape(shape).copy()
            pos += size
        return cls(**fields)

    @classmethod
    def zeros(cls):
        return cls.from_vector(np.zeros(PARAM_COUNT))


class PNetParams(_TensorBundle):
    """All learnable parameters, including the global log-scale a (alpha = e^a)."""


class PNetGrads(_TensorBundle):
    """Loss gradients, one entry per parameter; shapes mirror PNetParams."""


@dataclass(eq=False)
class ForwardTrace:
    """Everything the backward pass needs.

    Convolutional stages are stored batch-last, (channels, H, W, B), so
    the im2col copies run along long contiguous spans; fully connected
    stages are batch-outer.
    """

    cols1: np.ndarray        # conv1 im2col, (100, 28*28*B)
    pre1: np.ndarray         # (32, 28, 28, B)
    idx1: np.ndarray         # pool-1 argmax, (32, 14, 14, B)
    cols2: np.ndarray        # conv2 im2col, (800, 10*10*B)
    pre2: np.ndarray         # (32, 10, 10, B)
    idx2: np.ndarray         # pool-2 argmax, (32, 5, 5, B)
    flat: np.ndarray         # (B, 800)
    fc1_pre: np.ndarray      # (B, 100)
    dropout_mask: np.ndarray | None  # (B, 100) inverted-scaled mask, None in eval
    dropped: np.ndarray      # fc1 output after relu (+ dropout), (B, 100)
    z: np.ndarray            # (B,)
    t: np.ndarray            # (B,) thresholds, >= T_MIN

    @property
    def threshold(self) -> float:
        """Scalar threshold for single-patch traces."""
        return float(self.t[0])


def init_params(seed: int) -> PNetParams:
    """He-style init: N(0, sqrt(2/fan_in)) weights, zero biases, a = 0."""
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    params = PNetParams.zeros()
    params.conv1_w = he(_SHAPES[0][1], IN_CHANNELS * KERNEL_SIZE**2)
    params.conv2_w = he(_SHAPES[2][1], CONV1_FILTERS * KERNEL_SIZE**2)
    params.fc1_w = he(_SHAPES[4][1], FLAT_SIZE)
    params.fc2_w = he(_SHAPES[6][1], FC1_NODES)
    return params


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _ws_buffer(ws: dict | None, key: str, shape: tuple) -> np.ndarray:
    """Reusable scratch buffer so repeated batches skip large-allocation
    page faults (glibc never heap-caches blocks this size)."""
    if ws is None:
        return np.empty(shape)
    buf = ws.get(key)
    if buf is None or buf.shape != shape:
        buf = np.empty(shape)
        ws[key] = buf
    return buf


def _conv_valid(x, w, b, ws=None, tag=""):
    """Valid stride-1 convolution on batch-last input (C, H, W, B).

    Returns (out, cols) with out (F, OH, OW, B) and the im2col matrix cols
    (C*K*K, OH*OW*B) cached for the backward pass.  The (c, u, v) row
    order of cols matches the C-order ravel of the (F, C, K, K) filters;
    each kernel-offset copy spans OW*B contiguous values at a time.
    """
    c, h, w_, batch = x.shape
    f, _, k, _ = w.shape
    oh, ow = h - k + 1, w_ - k + 1
    x3 = x.reshape(c, h, w_ * batch)
    cols = _ws_buffer(ws, tag + "cols", (c, k, k, oh, ow * batch))
    for u in range(k):
        for v in range(k):
            cols[:, u, v] = x3[:, u : u + oh, v * batch : (v + ow) * batch]
    cols = cols.reshape(c * k * k, oh * ow * batch)
    out = (w.reshape(f, -1) @ cols + b[:, None]).reshape(f, oh, ow, batch)
    return out, cols


def _conv_backward(delta, cols, w, x_shape, need_dx=True, ws=None, tag=""):
    f, oh, ow, batch = delta.shape
    c, h, w_, _ = x_shape
    k = w.shape[-1]
    dmat = delta.reshape(f, oh * ow * batch)
    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1)
    if not need_dx:
        return dw, db, None
    dwin = _ws_buffer(ws, tag + "dwin", (c * k * k, oh * ow * batch))
    np.matmul(w.reshape(f, -1).T, dmat, out=dwin)
    dwin = dwin.reshape(c, k, k, oh, ow * batch)
    dx3 = np.zeros((c, h, w_ * batch))
    for u in range(k):
        for v in range(k):
            dx3[:, u : u + oh, v * batch : (v + ow) * batch] += dwin[:, u, v]
    return dw, db, dx3.reshape(x_shape)


def _pool2(x):
    """2x2 max pool, stride 2, over the H, W axes of (C, H, W, B).

    idx holds the row-major argmax within each window, encoded 0..3 as
    (0,0), (0,1), (1,0), (1,1); the first index wins ties.
    """
    x00 = x[:, 0::2, 0::2]
    x01 = x[:, 0::2, 1::2]
    x10 = x[:, 1::2, 0::2]
    x11 = x[:, 1::2, 1::2]
    itop = np.where(x00 >= x01, 0, 1).astype(np.int8)
    vtop = np.maximum(x00, x01)
    ibot = np.where(x10 >= x11, 2, 3).astype(np.int8)
    vbot = np.maximum(x10, x11)
    top_wins = vtop >= vbot
    return np.where(top_wins, vtop, vbot), np.where(top_wins, itop, ibot)


def _pool2_backward(dpool, idx, x_shape):
    dx = np.zeros(x_shape)
    dx[:, 0::2, 0::2] = dpool * (idx == 0)
    dx[:, 0::2, 1::2] = dpool * (idx == 1)
    dx[:, 1::2, 0::2] = dpool * (idx == 2)
    dx[:, 1::2, 1::2] = dpool * (idx == 3)
    return dx


def dropout_mask(seed: int, batch: int = 1) -> np.ndarray:
    """Inverted-dropout masks: kept units scaled by 1/(1-rate), drawn per row."""
    rng = np.random.default_rng(seed)
    keep = rng.random((batch, FC1_NODES)) >= DROPOUT_RATE
    return keep / (1.0 - DROPOUT_RATE)


def _forward_batch(
    x: np.ndarray, params: PNetParams, masks: np.ndarray | None, ws: dict | None = None
) -> ForwardTrace:
    batch = x.shape[0]
    xl = np.ascontiguousarray(x.transpose(1, 2, 3, 0))  # batch-last
    pre1, cols1 = _conv_valid(xl, params.conv1_w, params.conv1_b, ws=ws, tag="c1.")
    pooled1, idx1 = _pool2(np.maximum(pre1, 0.0))
    pre2, cols2 = _conv_valid(pooled1, params.conv2_w, params.conv2_b, ws=ws, tag="c2.")
    pooled2, idx2 = _pool2(np.maximum(pre2, 0.0))
    flat = pooled2.transpose(3, 0, 1, 2).reshape(batch, FLAT_SIZE)
    fc1_pre = flat @ params.fc1_w.T + params.fc1_b
    fc1_out = np.maximum(fc1_pre, 0.0)
    dropped = fc1_out * masks if masks is not None else fc1_out
    z = dropped @ params.fc2_w + params.fc2_b
    t = np.logaddexp(0.0, z) + T_MIN  # overflow-safe softplus
    return ForwardTrace(
        cols1=cols1, pre1=pre1, idx1=idx1, cols2=cols2, pre2=pre2, idx2=idx2,
        flat=flat, fc1_pre=fc1_pre, dropout_mask=masks, dropped=dropped, z=z, t=t,
    )


def _backward_batch(
    trace: ForwardTrace, params: PNetParams, dl_dt: np.ndarray, ws: dict | None = None
) -> PNetGrads:
    batch = trace.z.shape[0]
    dz = dl_dt * _sigmoid(trace.z)
    g = PNetGrads.zeros()
    g.fc2_w = trace.dropped.T @ dz
    g.fc2_b = float(dz.sum())
    ddropped = dz[:, None] * params.fc2_w[None, :]
    dfc1_out = ddropped * trace.dropout_mask if trace.dropout_mask is not None else ddropped
    dfc1_pre = dfc1_out * (trace.fc1_pre > 0.0)
    g.fc1_w = dfc1_pre.T @ trace.flat
    g.fc1_b = dfc1_pre.sum(axis=0)
    dflat = dfc1_pre @ params.fc1_w
    dpooled2 = np.ascontiguousarray(dflat.reshape(batch, CONV2_FILTERS, 5, 5).transpose(1, 2, 3, 0))
    dpre2 = _pool2_backward(dpooled2, trace.idx2, trace.pre2.shape) * (trace.pre2 > 0.0)
    g.conv2_w, g.conv2_b, dpooled1 = _conv_backward(
        dpre2, trace.cols2, params.conv2_w, (CONV1_FILTERS, 14, 14, batch), ws=ws, tag="c2."
    )
    dpre1 = _pool2_backward(dpooled1, trace.idx1, trace.pre1.shape) * (trace.pre1 > 0.0)
    g.conv1_w, g.conv1_b, _ = _conv_backward(
        dpre1, trace.cols1, params.conv1_w, (IN_CHANNELS, PATCH_SIZE, PATCH_SIZE, batch),
        need_dx=False,
    )
    return g


def _as_batch(patch) -> np.ndarray:
    x = patch.channels if isinstance(patch, AugmentedPatch) else np.asarray(patch, dtype=np.float64)
    if x.shape != (IN_CHANNELS, PATCH_SIZE, PATCH_SIZE):
        raise DataError(f"patch must have shape (4, 32, 32), got {x.shape}")
    return x[None]


def forward(patch, params: PNetParams, train_seed: int | None = None) -> ForwardTrace:
    """Run one augmented patch through the network.

    Eval mode (train_seed None) uses no dropout and is a pure function of
    (patch, params); train mode draws one inverted-dropout mask from the
    given seed.
    """
    masks = dropout_mask(train_seed, batch=1) if train_seed is not None else None
    return _forward_batch(_as_batch(patch), params, masks)


def backward(trace: ForwardTrace, params: PNetParams, dl_dt: float) -> PNetGrads:
    """Exact gradients of a scalar loss w.r.t. every parameter, given dL/dT.

    The gradient of the log-scale a is owned by the quality model and left
    at zero here; callers merge it.
    """
    if trace.z.shape[0] != 1:
        raise DataError("backward expects a single-patch trace")
    return _backward_batch(trace, params, np.array([dl_dt], dtype=np.float64))


def params_digest(params: PNetParams) -> str:
    """Hex digest identifying the parameter values (metadata excluded)."""
    h = hashlib.sha256()
    h.update(CHECKPOINT_MAGIC)
    h.update(np.asarray(_ARCH, dtype="<u4").tobytes())
    h.update(params.to_vector().astype("<f8").tobytes())
    return h.hexdigest()


def save_checkpoint(params: PNetParams, meta: dict, path) -> None:
    """Serialize parameters (little-endian float64, fixed order) plus JSON metadata."""
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += np.asarray(_ARCH, dtype="<u4").tobytes()
    blob += np.asarray([PARAM_COUNT], dtype="<u8").tobytes()
    blob += params.to_vector().astype("<f8").tobytes()
    if meta:
        blob += json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[PNetParams, dict]:
    """Inverse of save_checkpoint; round-trips bit-exactly."""
    data = Path(path).read_bytes()
    magic = data[:4]
    if magic != CHECKPOINT_MAGIC:
        if magic[:3] == CHECKPOINT_MAGIC[:3]:
            raise DataError(f"{path}: unsupported checkpoint version {magic!r}")
        raise DataError(f"{path}: not a checkpoint file (bad magic {magic!r})")
    header_end = 4 + 4 * len(_ARCH) + 8
    if len(data) < header_end:
        raise DataError(f"{path}: truncated checkpoint header")
    arch = tuple(int(v) for v in np.frombuffer(data[4 : 4 + 4 * len(_ARCH)], dtype="<u4"))
    if arch != _ARCH:
        raise DataError(f"{path}: architecture mismatch {arch}, expected {_ARCH}")
    count = int(np.frombuffer(data[header_end - 8 : header_end], dtype="<u8")[0])
    if count != PARAM_COUNT:
        raise DataError(f"{path}: parameter count {count} does not match architecture ({PARAM_COUNT})")
    body_end = header_end + 8 * count
    if len(data) < body_end:
        raise DataError(f"{path}: size mismatch, parameter block truncated")
    vec = np.frombuffer(data[header_end:body_end], dtype="<f8").astype(np.float64)
    tail = data[body_end:]
    meta = json.loads(tail.decode("utf-8")) if tail.strip() else {}
    return PNetParams.from_vector(vec), meta
