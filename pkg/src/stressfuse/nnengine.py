"""Minimal differentiable engine for the stress-detection models.

Everything runs in float64 numpy: dense, valid-padding stride-1 conv1d and
conv2d, ReLU, flatten, stride-1 max pooling, and a softmax classification
head. Models are declared as specs (one or more input branches plus an
optional joint head), built with seeded fan-in-scaled uniform weights, and
trained with Adam on categorical cross-entropy. Gradients are accumulated
by explicit per-layer backward passes and can be verified against central
finite differences.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

N_CLASSES = 3


# ---------------------------------------------------------------------------
# Layer and model specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int = 0            # dense width
    out_channels: int = 0   # conv output channels
    kernel: int = 0         # conv1d kernel length
    kh: int = 0             # conv2d kernel height
    kw: int = 0             # conv2d kernel width
    pool: int = 0           # pooling window
    classes: int = N_CLASSES


def dense(out: int) -> LayerSpec:
    return LayerSpec("dense", out=out)


def conv1d(out_channels: int, kernel: int) -> LayerSpec:
    return LayerSpec("conv1d", out_channels=out_channels, kernel=kernel)


def conv2d(out_channels: int, kh: int, kw: int) -> LayerSpec:
    return LayerSpec("conv2d", out_channels=out_channels, kh=kh, kw=kw)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def maxpool1d(pool: int) -> LayerSpec:
    return LayerSpec("maxpool1d", pool=pool)


def maxpool2d(pool: int) -> LayerSpec:
    return LayerSpec("maxpool2d", pool=pool)


def softmax_head(classes: int = N_CLASSES) -> LayerSpec:
    return LayerSpec("softmax_head", classes=classes)


@dataclass(frozen=True)
class BranchSpec:
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]


@dataclass(frozen=True)
class ModelSpec:
    """One or more branches; multi-branch models concatenate the flattened
    branch outputs and feed them to the joint head layers."""

    branches: tuple[BranchSpec, ...]
    head: tuple[LayerSpec, ...] = ()
    seed: int = 0

    @classmethod
    def sequential(cls, input_shape, layers, seed: int = 0) -> "ModelSpec":
        return cls(branches=(BranchSpec(tuple(input_shape), tuple(layers)),), seed=seed)

    def validate(self) -> None:
        if not self.branches:
            raise ShapeError("model needs at least one branch")
        last = self.head[-1] if self.head else self.branches[-1].layers[-1]
        if last.kind != "softmax_head":
            raise ShapeError("model must end in a softmax head")
        if len(self.branches) > 1 and not self.head:
            raise ShapeError("multi-branch models need a joint head")
        infer_shapes(self)  # raises on inconsistency


def _layer_out_shape(shape: tuple[int, ...], spec: LayerSpec) -> tuple[int, ...]:
    kind = spec.kind
    if kind == "dense":
        if len(shape) != 1:
            raise ShapeError(f"dense expects a flat input, got {shape}")
        return (spec.out,)
    if kind == "conv1d":
        if len(shape) != 2:
            raise ShapeError(f"conv1d expects (length, channels), got {shape}")
        length, _ = shape
        if spec.kernel > length:
            raise ShapeError(f"kernel {spec.kernel} exceeds input length {length}")
        return (length - spec.kernel + 1, spec.out_channels)
    if kind == "conv2d":
        if len(shape) != 3:
            raise ShapeError(f"conv2d expects (h, w, channels), got {shape}")
        h, w, _ = shape
        if spec.kh > h or spec.kw > w:
            raise ShapeError(f"kernel ({spec.kh}x{spec.kw}) exceeds input {h}x{w}")
        return (h - spec.kh + 1, w - spec.kw + 1, spec.out_channels)
    if kind == "relu":
        return shape
    if kind == "flatten":
        return (int(np.prod(shape)),)
    if kind == "maxpool1d":
        if len(shape) != 2 or spec.pool > shape[0]:
            raise ShapeError(f"maxpool1d({spec.pool}) cannot pool shape {shape}")
        return (shape[0] - spec.pool + 1, shape[1])
    if kind == "maxpool2d":
        if len(shape) != 3 or spec.pool > shape[0] or spec.pool > shape[1]:
            raise ShapeError(f"maxpool2d({spec.pool}) cannot pool shape {shape}")
        return (shape[0] - spec.pool + 1, shape[1] - spec.pool + 1, shape[2])
    if kind == "softmax_head":
        if len(shape) != 1:
            raise ShapeError(f"softmax head expects a flat input, got {shape}")
        return (spec.classes,)
    raise ShapeError(f"unknown layer kind {kind!r}")


def infer_shapes(model: ModelSpec) -> list[list[tuple[int, ...]]]:
    """Per-branch (and head) activation shapes, input first."""
    all_chains = []
    branch_outs = []
    for branch in model.branches:
        shape = tuple(branch.input_shape)
        chain = [shape]
        for layer in branch.layers:
            shape = _layer_out_shape(shape, layer)
            chain.append(shape)
        all_chains.append(chain)
        branch_outs.append(int(np.prod(shape)))
    if model.head:
        shape = (sum(branch_outs),)
        chain = [shape]
        for layer in model.head:
            shape = _layer_out_shape(shape, layer)
            chain.append(shape)
        all_chains.append(chain)
    return all_chains


def _layer_param_count(in_shape: tuple[int, ...], spec: LayerSpec) -> int:
    if spec.kind == "dense":
        return in_shape[0] * spec.out + spec.out
    if spec.kind == "conv1d":
        return spec.kernel * in_shape[1] * spec.out_channels + spec.out_channels
    if spec.kind == "conv2d":
        return spec.kh * spec.kw * in_shape[2] * spec.out_channels + spec.out_channels
    if spec.kind == "softmax_head":
        return in_shape[0] * spec.classes + spec.classes
    return 0


def param_count(model: ModelSpec) -> int:
    """Trainable parameter total from the analytic per-layer formulas."""
    total = 0
    chains = infer_shapes(model)
    specs = [b.layers for b in model.branches]
    if model.head:
        specs.append(model.head)
    for chain, layers in zip(chains, specs):
        for in_shape, layer in zip(chain[:-1], layers):
            total += _layer_param_count(in_shape, layer)
    return total


# ---------------------------------------------------------------------------
# Runtime layers
# ---------------------------------------------------------------------------

class _Layer:
    params: list[np.ndarray]

    def __init__(self):
        self.params = []
        self.grads = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _Dense(_Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.W = rng.uniform(-bound, bound, size=(in_dim, out_dim))
        self.b = np.zeros(out_dim)
        self.params = [self.W, self.b]

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, g):
        self.grads = [self._x.T @ g, g.sum(axis=0)]
        return g @ self.W.T


class _Conv1d(_Layer):
    def __init__(self, in_channels: int, spec: LayerSpec, rng: np.random.Generator):
        super().__init__()
        fan_in = spec.kernel * in_channels
        bound = 1.0 / math.sqrt(fan_in)
        self.W = rng.uniform(-bound, bound, size=(spec.kernel, in_channels, spec.out_channels))
        self.b = np.zeros(spec.out_channels)
        self.params = [self.W, self.b]
        self.k = spec.kernel

    def forward(self, x):  # (B, L, C) -> (B, L-k+1, OC)
        self._x = x
        v = np.lib.stride_tricks.sliding_window_view(x, self.k, axis=1)
        self._v = v  # (B, T, C, k)
        return np.einsum("btck,kco->bto", v, self.W, optimize=True) + self.b

    def backward(self, g):
        self.grads = [np.einsum("btck,bto->kco", self._v, g, optimize=True),
                      g.sum(axis=(0, 1))]
        dx = np.zeros_like(self._x)
        T = g.shape[1]
        for dk in range(self.k):
            dx[:, dk:dk + T, :] += g @ self.W[dk].T
        return dx


class _Conv2d(_Layer):
    def __init__(self, in_channels: int, spec: LayerSpec, rng: np.random.Generator):
        super().__init__()
        fan_in = spec.kh * spec.kw * in_channels
        bound = 1.0 / math.sqrt(fan_in)
        self.W = rng.uniform(-bound, bound,
                             size=(spec.kh, spec.kw, in_channels, spec.out_channels))
        self.b = np.zeros(spec.out_channels)
        self.params = [self.W, self.b]
        self.kh, self.kw = spec.kh, spec.kw

    def forward(self, x):  # (B, H, W, C) -> (B, H', W', OC)
        self._x = x
        v = np.lib.stride_tricks.sliding_window_view(x, (self.kh, self.kw), axis=(1, 2))
        self._v = v  # (B, H', W', C, kh, kw)
        return np.einsum("bhwcij,ijco->bhwo", v, self.W, optimize=True) + self.b

    def backward(self, g):
        self.grads = [np.einsum("bhwcij,bhwo->ijco", self._v, g, optimize=True),
                      g.sum(axis=(0, 1, 2))]
        dx = np.zeros_like(self._x)
        hp, wp = g.shape[1], g.shape[2]
        for i in range(self.kh):
            for j in range(self.kw):
                dx[:, i:i + hp, j:j + wp, :] += g @ self.W[i, j].T
        return dx


class _Relu(_Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, g):
        return np.where(self._mask, g, 0.0)


class _Flatten(_Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._shape)


class _MaxPool1d(_Layer):
    def __init__(self, pool: int):
        super().__init__()
        self.k = pool

    def forward(self, x):  # (B, L, C) -> (B, L-k+1, C)
        self._x_shape = x.shape
        v = np.lib.stride_tricks.sliding_window_view(x, self.k, axis=1)
        self._arg = v.argmax(axis=-1)  # (B, T, C)
        return v.max(axis=-1)

    def backward(self, g):
        dx = np.zeros(self._x_shape)
        B, T, C = g.shape
        bb, tt, cc = np.meshgrid(np.arange(B), np.arange(T), np.arange(C), indexing="ij")
        np.add.at(dx, (bb, tt + self._arg, cc), g)
        return dx


class _MaxPool2d(_Layer):
    def __init__(self, pool: int):
        super().__init__()
        self.k = pool

    def forward(self, x):  # (B, H, W, C) -> (B, H', W', C)
        self._x_shape = x.shape
        v = np.lib.stride_tricks.sliding_window_view(x, (self.k, self.k), axis=(1, 2))
        B, hp, wp, C = v.shape[:4]
        flat = v.reshape(B, hp, wp, C, self.k * self.k)
        self._arg = flat.argmax(axis=-1)
        return flat.max(axis=-1)

    def backward(self, g):
        dx = np.zeros(self._x_shape)
        B, hp, wp, C = g.shape
        bb, hh, ww, cc = np.meshgrid(np.arange(B), np.arange(hp), np.arange(wp),
                                     np.arange(C), indexing="ij")
        di, dj = self._arg // self.k, self._arg % self.k
        np.add.at(dx, (bb, hh + di, ww + dj, cc), g)
        return dx


class _SoftmaxHead(_Layer):
    """Dense projection to class logits; probabilities via shifted softmax.

    ``backward`` expects the gradient with respect to the logits (the
    cross-entropy loss differentiates through the softmax in closed form).
    """

    def __init__(self, in_dim: int, classes: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / math.sqrt(in_dim)
        self.W = rng.uniform(-bound, bound, size=(in_dim, classes))
        self.b = np.zeros(classes)
        self.params = [self.W, self.b]

    def forward(self, x):
        self._x = x
        self.logits = x @ self.W + self.b
        shifted = self.logits - self.logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        self.probs = expv / expv.sum(axis=1, keepdims=True)
        return self.probs

    def backward(self, g_logits):
        self.grads = [self._x.T @ g_logits, g_logits.sum(axis=0)]
        return g_logits @ self.W.T


def _build_layer(spec: LayerSpec, in_shape: tuple[int, ...],
                 rng: np.random.Generator) -> _Layer:
    if spec.kind == "dense":
        return _Dense(in_shape[0], spec.out, rng)
    if spec.kind == "conv1d":
        return _Conv1d(in_shape[1], spec, rng)
    if spec.kind == "conv2d":
        return _Conv2d(in_shape[2], spec, rng)
    if spec.kind == "relu":
        return _Relu()
    if spec.kind == "flatten":
        return _Flatten()
    if spec.kind == "maxpool1d":
        return _MaxPool1d(spec.pool)
    if spec.kind == "maxpool2d":
        return _MaxPool2d(spec.pool)
    if spec.kind == "softmax_head":
        return _SoftmaxHead(in_shape[0], spec.classes, rng)
    raise ShapeError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class Model:
    """Runtime network built from a :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        chains = infer_shapes(spec)
        self.branches: list[list[_Layer]] = []
        for b, branch in enumerate(spec.branches):
            layers = [_build_layer(ls, chains[b][i], rng)
                      for i, ls in enumerate(branch.layers)]
            self.branches.append(layers)
        self.head: list[_Layer] = []
        if spec.head:
            head_chain = chains[-1]
            self.head = [_build_layer(ls, head_chain[i], rng)
                         for i, ls in enumerate(spec.head)]

    # -- parameter plumbing -------------------------------------------------
    @property
    def layers(self) -> list[_Layer]:
        return [l for branch in self.branches for l in branch] + self.head

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def get_params(self) -> list[np.ndarray]:
        return [p.copy() for p in self.params]

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params
        if len(own) != len(values):
            raise ShapeError("parameter list length mismatch")
        for p, v in zip(own, values):
            if p.shape != np.shape(v):
                raise ShapeError(f"parameter shape mismatch: {p.shape} vs {np.shape(v)}")
            p[...] = v

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # -- execution ------------------------------------------------------------
    def _as_branch_inputs(self, batch) -> list[np.ndarray]:
        xs = list(batch) if isinstance(batch, (list, tuple)) else [batch]
        if len(xs) != len(self.spec.branches):
            raise ShapeError(f"model has {len(self.spec.branches)} input branches, "
                             f"got {len(xs)} arrays")
        out = []
        for x, branch in zip(xs, self.spec.branches):
            x = np.asarray(x, dtype=float)
            if x.shape[1:] != branch.input_shape:
                raise ShapeError(f"expected input shape {branch.input_shape}, "
                                 f"got {x.shape[1:]}")
            out.append(x)
        return out

    def _run_forward(self, batch, check: bool = False):
        xs = self._as_branch_inputs(batch)
        branch_outs = []
        self._concat_dims = []
        self._branch_out_shapes = {}
        for b, (x, layers) in enumerate(zip(xs, self.branches)):
            for i, layer in enumerate(layers):
                x = layer.forward(x)
                if check and not np.all(np.isfinite(x)):
                    raise NumericError(
                        f"non-finite activations after branch {b} layer "
                        f"{i} ({self.spec.branches[b].layers[i].kind})")
            branch_outs.append(x.reshape(x.shape[0], -1))
            self._branch_out_shapes[b] = x.shape
        if not self.head:
            return branch_outs[0].reshape(self._branch_out_shapes[0])
        self._concat_dims = [o.shape[1] for o in branch_outs]
        x = np.concatenate(branch_outs, axis=1)
        for i, layer in enumerate(self.head):
            x = layer.forward(x)
            if check and not np.all(np.isfinite(x)):
                raise NumericError(f"non-finite activations after head layer "
                                   f"{i} ({self.spec.head[i].kind})")
        return x

    def forward(self, batch) -> np.ndarray:
        """Class-probability rows (each sums to 1)."""
        return self._run_forward(batch)

    def predict(self, batch) -> np.ndarray:
        """Argmax labels; ties break toward the lowest class index."""
        return np.argmax(self.forward(batch), axis=1)

    def _head_layer(self) -> _SoftmaxHead:
        layer = (self.head or self.branches[-1])[-1]
        assert isinstance(layer, _SoftmaxHead)
        return layer

    def loss(self, batch, labels) -> float:
        self._run_forward(batch)
        return self._ce_from_logits(self._head_layer().logits, labels)

    @staticmethod
    def _ce_from_logits(logits, labels) -> float:
        labels = np.asarray(labels, dtype=int)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        log_probs = shifted[np.arange(len(labels)), labels] - log_z
        return float(-log_probs.mean())

    def loss_and_grads(self, batch, labels):
        """Mean cross-entropy and gradients for every parameter array."""
        labels = np.asarray(labels, dtype=int)
        head = self._head_layer()
        if labels.min() < 0 or labels.max() >= head.b.shape[0]:
            raise ShapeError(f"labels must lie in [0, {head.b.shape[0] - 1}]")
        probs = self._run_forward(batch, check=True)
        loss = self._ce_from_logits(head.logits, labels)
        B = probs.shape[0]
        g_logits = probs.copy()
        g_logits[np.arange(B), labels] -= 1.0
        g_logits /= B

        if self.head:
            g = g_logits
            for layer in reversed(self.head):
                g = layer.backward(g)
            split = np.cumsum(self._concat_dims)[:-1]
            branch_grads = np.split(g, split, axis=1)
            for b in reversed(range(len(self.branches))):
                gb = branch_grads[b].reshape(self._branch_out_shapes[b])
                for layer in reversed(self.branches[b]):
                    gb = layer.backward(gb)
        else:
            g = g_logits
            for layer in reversed(self.branches[0]):
                g = layer.backward(g)
        return loss, self.grads()


def build_model(spec: ModelSpec) -> Model:
    return Model(spec)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0           # shuffle stream
    patience: int = 10      # early stop on training loss

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


class Adam:
    def __init__(self, params: list[np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        c = self.cfg
        self.t += 1
        bias1 = 1.0 - c.beta1 ** self.t
        bias2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bias1) / (np.sqrt(v / bias2) + c.eps)


@dataclass
class TrainedModel:
    spec: ModelSpec
    model: Model
    loss_curve: np.ndarray

    def forward(self, batch) -> np.ndarray:
        return self.model.forward(batch)

    def predict(self, batch) -> np.ndarray:
        return self.model.predict(batch)


def train(spec: ModelSpec, X, y, config: TrainConfig | None = None) -> TrainedModel:
    """Fit a model; deterministic given spec.seed and config.seed."""
    config = config or TrainConfig()
    model = build_model(spec)
    xs = model._as_branch_inputs(X)
    y = np.asarray(y, dtype=int)
    n = len(y)
    if any(x.shape[0] != n for x in xs):
        raise ShapeError("inputs and labels disagree on row count")
    optimizer = Adam(model.params, config)
    rng = np.random.default_rng(config.seed)
    curve = []
    best = np.inf
    since_best = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            batch = [x[rows] for x in xs]
            loss, grads = model.loss_and_grads(batch if len(xs) > 1 else batch[0],
                                               y[rows])
            if not math.isfinite(loss):
                raise NumericError(f"training loss became {loss} at step {optimizer.t}")
            optimizer.step(model.params, grads)
            batch_losses.append(loss)
        epoch_loss = float(np.mean(batch_losses))
        curve.append(epoch_loss)
        if epoch_loss < best - 1e-12:
            best = epoch_loss
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    return TrainedModel(spec, model, np.asarray(curve))


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------

def gradient_check(model: Model, batch, labels, h: float = 1e-5) -> float:
    """Max relative error of reverse-mode gradients against central
    finite differences over every parameter."""
    _, grads = model.loss_and_grads(batch, labels)
    grads = [g.copy() for g in grads]
    worst = 0.0
    for p, g in zip(model.params, grads):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            up = model.loss(batch, labels)
            flat_p[i] = orig - h
            down = model.loss(batch, labels)
            flat_p[i] = orig
            fd = (up - down) / (2.0 * h)
            rel = abs(fd - flat_g[i]) / max(abs(fd) + abs(flat_g[i]), 1e-6)
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Serialization: JSON header + little-endian float64 parameter block
# ---------------------------------------------------------------------------

_MAGIC = b"SFNN"


def _spec_to_dict(spec: ModelSpec) -> dict:
    def layer(ls: LayerSpec) -> dict:
        return {k: v for k, v in ls.__dict__.items() if v not in (0,) or k == "kind"}

    return {
        "seed": spec.seed,
        "branches": [{"input_shape": list(b.input_shape),
                      "layers": [layer(ls) for ls in b.layers]} for b in spec.branches],
        "head": [layer(ls) for ls in spec.head],
    }


def _spec_from_dict(d: dict) -> ModelSpec:
    def layer(ld: dict) -> LayerSpec:
        return LayerSpec(**ld)

    return ModelSpec(
        branches=tuple(BranchSpec(tuple(b["input_shape"]),
                                  tuple(layer(ld) for ld in b["layers"]))
                       for b in d["branches"]),
        head=tuple(layer(ld) for ld in d["head"]),
        seed=d["seed"],
    )


def save_model(trained: TrainedModel, path: str) -> None:
    params = trained.model.params
    header = {
        "format": 1,
        "spec": _spec_to_dict(trained.spec),
        "param_shapes": [list(p.shape) for p in params],
        "loss_curve": [float(v) for v in trained.loss_curve],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ShapeError(f"{path}: not a model file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        spec = _spec_from_dict(header["spec"])
        model = build_model(spec)
        values = []
        for shape in header["param_shapes"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            values.append(data.reshape(shape).copy())
        model.set_params(values)
    return TrainedModel(spec, model, np.asarray(header["loss_curve"]))
