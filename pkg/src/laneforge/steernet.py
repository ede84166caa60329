"""Steering regressors: a single-frame 2D CNN and a three-frame 3D CNN,
written directly on numpy.

Layers implement forward/backward explicitly (im2col + matmul for the
convolutions); training is plain minibatch SGD with momentum, early stopping
on validation MSE, and best-weights retention. Models serialize to the LFM1
binary format (magic, layer list, little-endian float32 weights).

Inputs to forward are pixel tensors normalized to [0, 1]; outputs are
steering angles in degrees.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np


class ModelError(Exception):
    pass


class ShapeMismatch(ModelError):
    pass


class EmptyDataset(ModelError):
    pass


class Divergence(ModelError):
    pass


# ---------------------------------------------------------------------------
# layers


class Conv2D:
    """Valid-padding 2D convolution, square stride. x: (B, C, H, W)."""

    type_id = 1

    def __init__(self, in_c: int, out_c: int, kh: int, kw: int, stride: int = 1,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.in_c, self.out_c, self.kh, self.kw, self.stride = in_c, out_c, kh, kw, stride
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_c * kh * kw))
        self.w = (rng.normal(0.0, std, (out_c, in_c, kh, kw))).astype(dtype)
        self.b = np.zeros(out_c, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_c:
            raise ShapeMismatch(f"conv2d expects {self.in_c} channels, got {c}")
        ho = (h - self.kh) // self.stride + 1
        wo = (w - self.kw) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"conv2d kernel {self.kh}x{self.kw} larger than input {h}x{w}")
        return (self.out_c, ho, wo)

    def _cols(self, x):
        b, c, h, w = x.shape
        s = self.stride
        ho = (h - self.kh) // s + 1
        wo = (w - self.kw) // s + 1
        sb, sc, sh, sw = x.strides
        win = np.lib.stride_tricks.as_strided(
            x, (b, ho, wo, c, self.kh, self.kw), (sb, sh * s, sw * s, sc, sh, sw),
            writeable=False)
        return win.reshape(b * ho * wo, c * self.kh * self.kw), ho, wo

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_c:
            raise ShapeMismatch(f"conv2d input shape {x.shape}")
        cols, ho, wo = self._cols(x)
        w2 = self.w.reshape(self.out_c, -1)
        y = cols @ w2.T + self.b
        self._cache = (x.shape, cols)
        return y.reshape(x.shape[0], ho, wo, self.out_c).transpose(0, 3, 1, 2)

    def backward(self, dout):
        x_shape, cols = self._cache
        b, _, ho, wo = dout.shape
        d2 = dout.transpose(0, 2, 3, 1).reshape(-1, self.out_c)
        self.dw[...] = (d2.T @ cols).reshape(self.w.shape)
        self.db[...] = d2.sum(axis=0)
        dcols = (d2 @ self.w.reshape(self.out_c, -1)).reshape(
            b, ho, wo, self.in_c, self.kh, self.kw)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        s = self.stride
        for p in range(self.kh):
            for q in range(self.kw):
                dx[:, :, p : p + ho * s : s, q : q + wo * s : s] += \
                    dcols[:, :, :, :, p, q].transpose(0, 3, 1, 2)
        return dx

    def spec(self):
        return self.type_id, [self.in_c, self.out_c, self.kh, self.kw, self.stride], []


class Conv3D:
    """Valid-padding 3D convolution over (depth, H, W); depth stride 1,
    shared spatial stride. x: (B, C, D, H, W)."""

    type_id = 2

    def __init__(self, in_c: int, out_c: int, kd: int, kh: int, kw: int,
                 stride: int = 1, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.in_c, self.out_c = in_c, out_c
        self.kd, self.kh, self.kw, self.stride = kd, kh, kw, stride
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_c * kd * kh * kw))
        self.w = (rng.normal(0.0, std, (out_c, in_c, kd, kh, kw))).astype(dtype)
        self.b = np.zeros(out_c, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cache = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def out_shape(self, in_shape):
        c, d, h, w = in_shape
        if c != self.in_c:
            raise ShapeMismatch(f"conv3d expects {self.in_c} channels, got {c}")
        do = d - self.kd + 1
        ho = (h - self.kh) // self.stride + 1
        wo = (w - self.kw) // self.stride + 1
        if do < 1 or ho < 1 or wo < 1:
            raise ShapeMismatch("conv3d kernel larger than input")
        return (self.out_c, do, ho, wo)

    def _cols(self, x):
        b, c, d, h, w = x.shape
        s = self.stride
        do = d - self.kd + 1
        ho = (h - self.kh) // s + 1
        wo = (w - self.kw) // s + 1
        sb, sc, sd, sh, sw = x.strides
        win = np.lib.stride_tricks.as_strided(
            x,
            (b, do, ho, wo, c, self.kd, self.kh, self.kw),
            (sb, sd, sh * s, sw * s, sc, sd, sh, sw),
            writeable=False,
        )
        return win.reshape(b * do * ho * wo, -1), do, ho, wo

    def forward(self, x, train=False, rng=None):
        if x.ndim != 5 or x.shape[1] != self.in_c:
            raise ShapeMismatch(f"conv3d input shape {x.shape}")
        cols, do, ho, wo = self._cols(x)
        y = cols @ self.w.reshape(self.out_c, -1).T + self.b
        self._cache = (x.shape, cols)
        return y.reshape(x.shape[0], do, ho, wo, self.out_c).transpose(0, 4, 1, 2, 3)

    def backward(self, dout):
        x_shape, cols = self._cache
        b, _, do, ho, wo = dout.shape
        d2 = dout.transpose(0, 2, 3, 4, 1).reshape(-1, self.out_c)
        self.dw[...] = (d2.T @ cols).reshape(self.w.shape)
        self.db[...] = d2.sum(axis=0)
        dcols = (d2 @ self.w.reshape(self.out_c, -1)).reshape(
            b, do, ho, wo, self.in_c, self.kd, self.kh, self.kw)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        s = self.stride
        for r in range(self.kd):
            for p in range(self.kh):
                for q in range(self.kw):
                    dx[:, :, r : r + do, p : p + ho * s : s, q : q + wo * s : s] += \
                        dcols[:, :, :, :, :, r, p, q].transpose(0, 4, 1, 2, 3)
        return dx

    def spec(self):
        return self.type_id, [self.in_c, self.out_c, self.kd, self.kh, self.kw, self.stride], []


class ReLU:
    type_id = 3

    def __init__(self):
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0)

    def spec(self):
        return self.type_id, [], []


class Flatten:
    type_id = 4

    def __init__(self):
        self._shape = None

    def params(self):
        return []

    def grads(self):
        return []

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def spec(self):
        return self.type_id, [], []


class Dense:
    type_id = 5

    def __init__(self, in_n: int, out_n: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        self.in_n, self.out_n = in_n, out_n
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / in_n)
        self.w = (rng.normal(0.0, std, (out_n, in_n))).astype(dtype)
        self.b = np.zeros(out_n, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._x = None

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]

    def out_shape(self, in_shape):
        if in_shape != (self.in_n,):
            raise ShapeMismatch(f"dense expects ({self.in_n},), got {in_shape}")
        return (self.out_n,)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_n:
            raise ShapeMismatch(f"dense input shape {x.shape}, expects (*, {self.in_n})")
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dout):
        self.dw[...] = dout.T @ self._x
        self.db[...] = dout.sum(axis=0)
        return dout @ self.w

    def spec(self):
        return self.type_id, [self.in_n, self.out_n], []


class Dropout:
    """Inverted dropout; identity at inference so deployed forward passes
    are unaffected by the training-time rate."""

    type_id = 6

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def params(self):
        return []

    def grads(self):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0 or rng is None:
            self._mask = None
            return x
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._mask = keep
        return x * keep

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def spec(self):
        return self.type_id, [], [self.rate]


# ---------------------------------------------------------------------------
# model


ARCH_SINGLE = "single"
ARCH_SEQUENCE = "sequence"


class SteerModel:
    """Ordered layer chain mapping one frame (or a 3-frame clip) to one
    steering angle in degrees."""

    def __init__(self, arch: str, input_shape: tuple[int, ...], layers: list):
        self.arch = arch
        self.input_shape = tuple(input_shape)  # without batch dim
        self.layers = layers
        shape = self.input_shape
        for layer in layers:
            shape = layer.out_shape(shape)
        if shape != (1,):
            raise ShapeMismatch(f"layer chain produces {shape}, want a single scalar")

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """(B, *input_shape) normalized pixels -> (B,) degrees. A single
        unbatched input is accepted and returns a scalar."""
        arr = np.asarray(x)
        single = arr.shape == self.input_shape
        if single:
            arr = arr[None]
        if arr.shape[1:] != self.input_shape:
            raise ShapeMismatch(
                f"input shape {arr.shape[1:]} does not match model {self.input_shape}")
        out = arr.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
        out = out[:, 0]
        return float(out[0]) if single else out

    @property
    def dtype(self):
        for layer in self.layers:
            if layer.params():
                return layer.params()[0].dtype
        return np.float32

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def grads(self):
        return [g for layer in self.layers for g in layer.grads()]

    def loss_and_grads(self, x, target, rng=None):
        """MSE loss over the batch and its gradients (backward pass).
        rng enables dropout; None keeps the pass deterministic."""
        pred = self.forward(x, train=rng is not None, rng=rng)
        pred = np.atleast_1d(pred)
        t = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
        resid = pred - t
        loss = float(np.mean(resid * resid))
        dout = (2.0 * resid / len(resid)).astype(self.dtype)[:, None]
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return loss

    def predict(self, frames: np.ndarray) -> np.ndarray | float:
        """uint8 frames -> degrees; normalizes to [0,1] and adds the
        channel axis expected by the layer chain."""
        arr = np.asarray(frames)
        if arr.dtype == np.uint8:
            arr = arr.astype(self.dtype) / 255.0
        want = self.input_shape[1:]  # drop channel
        if arr.shape == want:
            return self.forward(arr.reshape(self.input_shape))
        if arr.shape[1:] == want:
            return self.forward(arr.reshape((arr.shape[0],) + self.input_shape))
        raise ShapeMismatch(f"frames shape {arr.shape} incompatible with {want}")


def build_model(arch: str, height: int = 48, width: int = 64, seed: int = 0,
                dtype=np.float32) -> SteerModel:
    """The two supported shapes. single: three strided 2D conv blocks into
    a 64-wide head with dropout. sequence: a (3,5,5) conv collapsing the
    clip, a strided (1,3,3) conv, then the same head without dropout."""
    rng = np.random.default_rng(seed)
    if arch == ARCH_SINGLE:
        shape = (1, height, width)
        layers = [
            Conv2D(1, 8, 5, 5, stride=2, rng=rng, dtype=dtype), ReLU(),
            Conv2D(8, 16, 3, 3, stride=2, rng=rng, dtype=dtype), ReLU(),
            Conv2D(16, 32, 3, 3, stride=2, rng=rng, dtype=dtype), ReLU(),
            Flatten(),
        ]
        n = int(np.prod(_chain_shape(layers, shape)))
        layers += [Dense(n, 64, rng=rng, dtype=dtype), ReLU(), Dropout(0.2),
                   Dense(64, 1, rng=rng, dtype=dtype)]
        return SteerModel(arch, shape, layers)
    if arch == ARCH_SEQUENCE:
        shape = (1, 3, height, width)
        layers = [
            Conv3D(1, 8, 3, 5, 5, stride=1, rng=rng, dtype=dtype), ReLU(),
            Conv3D(8, 16, 1, 3, 3, stride=2, rng=rng, dtype=dtype), ReLU(),
            Flatten(),
        ]
        n = int(np.prod(_chain_shape(layers, shape)))
        layers += [Dense(n, 64, rng=rng, dtype=dtype), ReLU(),
                   Dense(64, 1, rng=rng, dtype=dtype)]
        return SteerModel(arch, shape, layers)
    raise ValueError(f"unknown arch {arch!r}")


def _chain_shape(layers, shape):
    for layer in layers:
        shape = layer.out_shape(shape)
    return shape


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.9
    max_epochs: int = 300
    patience_epochs: int = 50  # paper-scale value is 200; pass it explicitly
    min_delta: float = 0.1
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")


@dataclass
class TrainReport:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_mse: float = float("inf")
    wall_time_s: float = 0.0
    stopped_early: bool = False


def dataset_arrays(dataset, arch: str, dtype=np.float32):
    """datalog.Dataset -> (X normalized, y degrees) in model layout."""
    if len(dataset.samples) == 0:
        raise EmptyDataset("dataset has no samples")
    frames, angles = zip(*dataset.samples)
    y = np.asarray(angles, dtype=dtype)
    if arch == ARCH_SINGLE:
        x = np.stack(frames).astype(dtype) / 255.0
        return x[:, None, :, :], y
    x = np.stack([np.stack(t) for t in frames]).astype(dtype) / 255.0
    return x[:, None, :, :, :], y


TARGET_SCALE_DEG = 45.0  # steering full scale; conditions SGD on degree targets


def train(dataset, arch: str, config: TrainConfig = TrainConfig()):
    """-> (SteerModel, TrainReport). Deterministic given (dataset, config):
    one seeded generator drives the split, shuffling, init, and dropout.

    Targets are scaled by 1/TARGET_SCALE_DEG inside the loop (raw degree
    residuals sit at the SGD stability edge) and the scale is folded back
    into the linear output layer before returning, so the model still maps
    pixels to degrees. Reported MSEs are in squared degrees throughout."""
    x, y = (dataset if isinstance(dataset, tuple) else dataset_arrays(dataset, arch))
    n = len(x)
    if n < 2:
        raise EmptyDataset("need at least 2 samples to split")
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * config.val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise EmptyDataset("validation split leaves no training samples")
    scale = TARGET_SCALE_DEG
    sq = scale * scale
    yn = y / scale
    xv, yvn = x[val_idx], yn[val_idx]

    model = build_model(arch, height=x.shape[-2], width=x.shape[-1],
                        seed=config.seed)
    velocity = [np.zeros_like(p) for p in model.params()]
    report = TrainReport()
    best_weights = [p.copy() for p in model.params()]
    reference = float("inf")  # early-stopping baseline: best val minus deltas
    stall = 0
    t0 = time.perf_counter()

    for epoch in range(config.max_epochs):
        idx = train_idx[rng.permutation(len(train_idx))]
        losses = []
        for start in range(0, len(idx), config.batch_size):
            batch = idx[start : start + config.batch_size]
            loss = model.loss_and_grads(x[batch], yn[batch], rng=rng)
            losses.append(loss * sq)
            for p, g, v in zip(model.params(), model.grads(), velocity):
                v *= config.momentum
                v -= config.learning_rate * g
                p += v
        val = _mse_batched(model, xv, yvn) * sq
        report.train_mse.append(float(np.mean(losses)))
        report.val_mse.append(val)
        if not np.isfinite(val):
            raise Divergence(f"validation MSE became {val} at epoch {epoch}")
        if val < report.best_val_mse:
            report.best_val_mse = val
            report.best_epoch = epoch
            best_weights = [p.copy() for p in model.params()]
        if val < reference - config.min_delta:
            reference = val
            stall = 0
        else:
            stall += 1
            if stall >= config.patience_epochs:
                report.stopped_early = True
                break

    for p, w in zip(model.params(), best_weights):
        p[...] = w
    head = model.layers[-1]  # linear Dense in both archs; fold is exact
    head.w *= scale
    head.b *= scale
    report.wall_time_s = time.perf_counter() - t0
    return model, report


def _mse_batched(model: SteerModel, x, y, chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        pred = np.atleast_1d(model.forward(x[start : start + chunk]))
        d = pred - y[start : start + chunk]
        total += float(np.dot(d, d))
    return total / len(x)


def evaluate(model: SteerModel, dataset):
    """-> (mse, [(truth_deg, pred_deg), ...]) over every sample."""
    x, y = (dataset if isinstance(dataset, tuple)
            else dataset_arrays(dataset, model.arch, dtype=model.dtype))
    if len(x) == 0:
        raise EmptyDataset("nothing to evaluate")
    pairs = []
    for start in range(0, len(x), 512):
        pred = np.atleast_1d(model.forward(x[start : start + 512]))
        pairs.extend(zip(y[start : start + 512].tolist(), pred.tolist()))
    mse = float(np.mean([(t - p) ** 2 for t, p in pairs]))
    return mse, pairs


def write_pairs_csv(path, pairs):
    with open(path, "w", encoding="ascii", newline="") as f:
        f.write("truth_deg,pred_deg\n")
        for t, p in pairs:
            f.write(f"{float(t)!r},{float(p)!r}\n")


# ---------------------------------------------------------------------------
# control-side helpers


def slew_limit(prev_deg: float, proposed_deg: float, max_rate_deg_per_s: float,
               dt: float) -> float:
    band = max_rate_deg_per_s * dt
    return min(max(proposed_deg, prev_deg - band), prev_deg + band)


def angle_to_pulse(angle_deg: float, steer_max_deg: float) -> int:
    """Linear [-steer_max, +steer_max] -> [1000, 2000] us, clamped, 1500
    center."""
    ratio = min(1.0, max(-1.0, angle_deg / steer_max_deg))
    return int(round(1500.0 + 500.0 * ratio))


# ---------------------------------------------------------------------------
# LFM1 serialization

_MAGIC = b"LFM1"
_ARCH_IDS = {ARCH_SINGLE: 0, ARCH_SEQUENCE: 1}
_ARCH_NAMES = {v: k for k, v in _ARCH_IDS.items()}


def save_model(path, model: SteerModel):
    """magic | u8 arch | u8 ndim | u32 dims | u32 n_layers | per layer:
    u8 type, u8 n_ints, i32 ints, u8 n_floats, f32 floats | all weights as
    little-endian float32 in declaration order."""
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<BB", _ARCH_IDS[model.arch], len(model.input_shape))
    out += struct.pack(f"<{len(model.input_shape)}I", *model.input_shape)
    out += struct.pack("<I", len(model.layers))
    for layer in model.layers:
        tid, ints, floats = layer.spec()
        out += struct.pack("<BB", tid, len(ints))
        out += struct.pack(f"<{len(ints)}i", *ints)
        out += struct.pack("<B", len(floats))
        out += struct.pack(f"<{len(floats)}f", *floats)
    for p in model.params():
        out += np.ascontiguousarray(p, dtype="<f4").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_model(path) -> SteerModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _MAGIC:
        raise ModelError(f"{path}: not a model file (bad magic)")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, off)
        off += size
        return vals

    arch_id, ndim = take("<BB")
    if arch_id not in _ARCH_NAMES:
        raise ModelError(f"unknown arch id {arch_id}")
    input_shape = take(f"<{ndim}I")
    (n_layers,) = take("<I")
    layers = []
    for _ in range(n_layers):
        tid, n_ints = take("<BB")
        ints = list(take(f"<{n_ints}i")) if n_ints else []
        (n_floats,) = take("<B")
        floats = list(take(f"<{n_floats}f")) if n_floats else []
        if tid == Conv2D.type_id:
            layers.append(Conv2D(*ints))
        elif tid == Conv3D.type_id:
            layers.append(Conv3D(*ints))
        elif tid == ReLU.type_id:
            layers.append(ReLU())
        elif tid == Flatten.type_id:
            layers.append(Flatten())
        elif tid == Dense.type_id:
            layers.append(Dense(*ints))
        elif tid == Dropout.type_id:
            layers.append(Dropout(*floats))
        else:
            raise ModelError(f"unknown layer type id {tid}")
    model = SteerModel(_ARCH_NAMES[arch_id], input_shape, layers)
    for p in model.params():
        n = p.size
        vals = np.frombuffer(blob, dtype="<f4", count=n, offset=off)
        off += 4 * n
        p[...] = vals.reshape(p.shape)
    if off != len(blob):
        raise ModelError(f"{path}: {len(blob) - off} trailing bytes")
    return model
