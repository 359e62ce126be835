"""Small feedforward networks with an explicit backward pass and momentum SGD.

Parameters live in plain numpy arrays. ``forward`` returns a cache that
``backward`` consumes, so one forward pass serves any loss whose gradient
with respect to the logits is known.

Persistence format (``save_networks`` / ``load_networks``), little-endian::

    magic      8 bytes   b"LCOMLP1\\n"
    n_nets     uint32
    per network:
      name_len uint16, name (utf-8)
      seed     int64
      n_layers uint32
      per layer:
        in_dim uint32, out_dim uint32, activation uint8 (0 identity, 1 relu)
        weights float64[in_dim * out_dim] (row-major, in x out)
        biases  float64[out_dim]
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"LCOMLP1\n"
ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    seed: int = 0

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def specs(self) -> list[LayerSpec]:
        return [LayerSpec(w.shape[0], w.shape[1], a) for w, a in zip(self.weights, self.activations)]

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations), self.seed)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat_params(self, flat: np.ndarray) -> None:
        pos = 0
        for w, b in zip(self.weights, self.biases):
            for arr in (w, b):
                arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
                pos += arr.size


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    epochs: int = 15
    batch_size: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class Velocity:
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, m: Mlp) -> "Velocity":
        return cls([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases])


def init(specs, seed: int = 0) -> Mlp:
    """Glorot-uniform weights, zero biases."""
    specs = [s if isinstance(s, LayerSpec) else LayerSpec(*s) for s in specs]
    if not specs:
        raise ValueError("need at least one layer")
    for prev, nxt in zip(specs, specs[1:]):
        if prev.out_dim != nxt.in_dim:
            raise ValueError(f"incompatible layers: {prev.out_dim} -> {nxt.in_dim}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for s in specs:
        limit = np.sqrt(6.0 / (s.in_dim + s.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(s.in_dim, s.out_dim)))
        biases.append(np.zeros(s.out_dim))
    return Mlp(weights, biases, [s.activation for s in specs], seed)


def mlp_specs(in_dim: int, hidden: list[int], out_dim: int) -> list[LayerSpec]:
    """relu hidden layers followed by an identity output layer."""
    dims = [in_dim, *hidden, out_dim]
    return [LayerSpec(a, b, "relu" if i < len(hidden) else "identity")
            for i, (a, b) in enumerate(zip(dims, dims[1:]))]


def forward(m: Mlp, x) -> tuple[ForwardCache, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.in_dim:
        raise ValueError(f"expected input of width {m.in_dim}, got shape {x.shape}")
    cache = ForwardCache([], [])
    h = x
    for w, b, act in zip(m.weights, m.biases, m.activations):
        cache.inputs.append(h)
        z = h @ w + b
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if act == "relu" else z
    return cache, h


def predict_logits(m: Mlp, x) -> np.ndarray:
    return forward(m, x)[1]


def backward(m: Mlp, cache: ForwardCache, grad_logits) -> Gradients:
    g = np.asarray(grad_logits, dtype=np.float64)
    if len(cache.pre) != len(m.weights) or g.shape != cache.pre[-1].shape:
        raise ValueError(f"gradient shape {g.shape} does not match forward output")
    dws, dbs = [], []
    for i in reversed(range(len(m.weights))):
        if m.activations[i] == "relu":
            g = g * (cache.pre[i] > 0.0)
        dws.append(cache.inputs[i].T @ g)
        dbs.append(g.sum(axis=0))
        g = g @ m.weights[i].T
    dws.reverse()
    dbs.reverse()
    return Gradients(dws, dbs, g)


def sgd_step(m: Mlp, grads: Gradients, velocity: Velocity | None, cfg: SgdConfig):
    """In-place momentum update: ``v <- momentum * v - lr * g``, ``theta <- theta + v``."""
    if velocity is None:
        velocity = Velocity.zeros_like(m)
    for params, gs, vs in ((m.weights, grads.weights, velocity.weights),
                           (m.biases, grads.biases, velocity.biases)):
        for p, g, v in zip(params, gs, vs):
            if p.shape != g.shape:
                raise ValueError("gradient shape mismatch")
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            p += v
    return m, velocity


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _write_net(buf, name: str, m: Mlp) -> None:
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<qI", int(m.seed), len(m.weights)))
    for w, b, act in zip(m.weights, m.biases, m.activations):
        buf.write(struct.pack("<IIB", w.shape[0], w.shape[1], ACTIVATIONS.index(act)))
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_exact(buf, n: int) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise ValueError("truncated model file")
    return data


def _read_net(buf) -> tuple[str, Mlp]:
    (name_len,) = struct.unpack("<H", _read_exact(buf, 2))
    name = _read_exact(buf, name_len).decode("utf-8")
    seed, n_layers = struct.unpack("<qI", _read_exact(buf, 12))
    weights, biases, acts = [], [], []
    for _ in range(n_layers):
        rows, cols, act = struct.unpack("<IIB", _read_exact(buf, 9))
        if act >= len(ACTIVATIONS):
            raise ValueError(f"unknown activation code {act}")
        w = np.frombuffer(_read_exact(buf, 8 * rows * cols), dtype="<f8").reshape(rows, cols)
        b = np.frombuffer(_read_exact(buf, 8 * cols), dtype="<f8")
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
        acts.append(ACTIVATIONS[act])
    return name, Mlp(weights, biases, acts, seed)


def dumps_networks(nets: dict[str, Mlp]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(nets)))
    for name, m in nets.items():
        _write_net(buf, name, m)
    return buf.getvalue()


def loads_networks(data: bytes) -> dict[str, Mlp]:
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError("not an LCOMLP1 model file")
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    return dict(_read_net(buf) for _ in range(count))


def save_networks(path, nets: dict[str, Mlp]) -> None:
    Path(path).write_bytes(dumps_networks(nets))


def load_networks(path) -> dict[str, Mlp]:
    return loads_networks(Path(path).read_bytes())


def save(path, m: Mlp) -> None:
    save_networks(path, {"f": m})


def load(path) -> Mlp:
    nets = load_networks(path)
    if "f" not in nets:
        raise ValueError(f"model file {path} holds {sorted(nets)}, not a single network")
    return nets["f"]
