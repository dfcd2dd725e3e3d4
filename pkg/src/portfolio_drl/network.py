"""Actor-critic network: five 3x3 conv layers, two dense layers, two heads.

The trunk (convs, flatten, fc layers) is shared. The actor head emits
``m + 1`` logits (softmax is applied by the environment), the critic head a
single unactivated value. ReLU follows every conv and fc layer.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ShapeError

KERNEL = (3, 3)
N_FEATURES = 4
CHECKPOINT_MAGIC = b"PDRLCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    asset_count: int
    window: int = 50
    conv_channels: tuple = ((4, 32), (32, 32), (32, 64), (64, 64), (64, 64))
    # (assets, time) pooling per conv layer; only the time axis is pooled by default
    pools: tuple = ((1, 1), (1, 2), (1, 1), (1, 2), (1, 2))
    fc_widths: tuple = (128, 128)
    kernel: tuple = KERNEL
    init_log_std: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(tuple(int(v) for v in p) for p in self.conv_channels))
        object.__setattr__(self, "pools", tuple(tuple(int(v) for v in p) for p in self.pools))
        object.__setattr__(self, "fc_widths", tuple(int(v) for v in self.fc_widths))
        object.__setattr__(self, "kernel", tuple(int(v) for v in self.kernel))
        if self.kernel != KERNEL:
            raise ShapeError(f"kernel is fixed at 3x3, got {self.kernel}")
        if len(self.conv_channels) != 5 or len(self.pools) != 5:
            raise ShapeError("exactly 5 conv layers (channels and pools) are required")
        if self.conv_channels[0][0] != N_FEATURES:
            raise ShapeError(f"first conv layer must take {N_FEATURES} input channels")
        for (_, out), (nxt, _) in zip(self.conv_channels, self.conv_channels[1:]):
            if out != nxt:
                raise ShapeError(f"conv channel plan does not chain: {self.conv_channels}")
        if len(self.fc_widths) != 2:
            raise ShapeError("exactly 2 fc layers are required")
        if self.asset_count < 1 or self.window < 1:
            raise ShapeError("asset_count and window must be >= 1")

    @property
    def action_dim(self) -> int:
        return self.asset_count + 1

    @property
    def input_shape(self) -> tuple:
        return (N_FEATURES, self.asset_count, self.window)

    def trunk_output_shape(self) -> tuple:
        h, w = self.asset_count, self.window
        for ph, pw in self.pools:
            h, w = -(-h // ph), -(-w // pw)
        return (self.conv_channels[-1][1], h, w)

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if k in ("conv_channels", "pools") else list(v) if isinstance(v, tuple) else v)
                for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(**d)


@dataclass
class ParameterSet:
    """Named parameter tensors in a fixed order, with a flat float64 view."""

    tensors: "OrderedDict[str, ad.Tensor]" = field(default_factory=OrderedDict)

    def __getitem__(self, name) -> ad.Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self):
        return list(self.tensors)

    @property
    def size(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.tensors.values()])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        i = 0
        for t in self.tensors.values():
            k = t.data.size
            t.data = vec[i:i + k].reshape(t.data.shape).copy()
            i += k

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([
            (np.zeros_like(t.data) if t.grad is None else t.grad).ravel() for t in self.tensors.values()
        ])

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self) -> "ParameterSet":
        return ParameterSet(OrderedDict(
            (k, ad.Tensor(t.data.copy(), requires_grad=True, name=k)) for k, t in self.tensors.items()
        ))


def parameter_shapes(spec: NetworkSpec) -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    kh, kw = spec.kernel
    for i, (cin, cout) in enumerate(spec.conv_channels):
        shapes[f"conv{i}.weight"] = (cout, cin, kh, kw)
        shapes[f"conv{i}.bias"] = (cout,)
    width = int(np.prod(spec.trunk_output_shape()))
    for i, out in enumerate(spec.fc_widths):
        shapes[f"fc{i}.weight"] = (out, width)
        shapes[f"fc{i}.bias"] = (out,)
        width = out
    shapes["actor.weight"] = (spec.action_dim, width)
    shapes["actor.bias"] = (spec.action_dim,)
    shapes["critic.weight"] = (1, width)
    shapes["critic.bias"] = (1,)
    shapes["policy.log_std"] = (spec.action_dim,)
    return shapes


def init_params(spec: NetworkSpec, seed: int = 0) -> ParameterSet:
    """Fan-in scaled uniform init; heads start small so the first policy is near uniform."""
    rng = np.random.default_rng(seed)
    tensors = OrderedDict()
    for name, shape in parameter_shapes(spec).items():
        if name == "policy.log_std":
            data = np.full(shape, spec.init_log_std)
        elif name.endswith(".bias") and name.split(".")[0] in ("actor", "critic"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if name.endswith(".weight") else int(np.prod(
                parameter_shapes(spec)[name.replace(".bias", ".weight")][1:]))
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
            if name == "actor.weight":
                data *= 0.01
        tensors[name] = ad.Tensor(data, requires_grad=True, name=name)
    return ParameterSet(tensors)


def zero_params(spec: NetworkSpec) -> ParameterSet:
    return ParameterSet(OrderedDict(
        (name, ad.Tensor(np.zeros(shape), requires_grad=True, name=name))
        for name, shape in parameter_shapes(spec).items()
    ))


def _batched(x, ndim):
    x = ad.tensor(x)
    if x.data.ndim == ndim - 1:
        return ad.reshape(x, (1,) + x.shape), True
    return x, False


def conv2d_forward(x, kernels, bias):
    """Same-padded 3x3 cross-correlation of a (C, H, W) or (N, C, H, W) input."""
    x, single = _batched(x, 4)
    y = ad.conv2d(x, kernels, bias)
    return ad.reshape(y, y.shape[1:]) if single else y


def max_pool_forward(x, pool_shape):
    x, single = _batched(x, 4)
    y = ad.max_pool2d(x, pool_shape)
    return ad.reshape(y, y.shape[1:]) if single else y


def dense_forward(x, weights, bias, activation: str = "none"):
    x, single = _batched(x, 2)
    y = ad.linear(x, weights, bias)
    if activation == "relu":
        y = ad.relu(y)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return ad.reshape(y, y.shape[1:]) if single else y


def trunk_forward(obs, params: ParameterSet, spec: NetworkSpec) -> ad.Tensor:
    x = ad.tensor(obs)
    if x.data.ndim != 4 or x.shape[1:] != spec.input_shape:
        raise ShapeError(f"observation batch must be (N, {spec.input_shape}), got {x.shape}")
    for i, pool in enumerate(spec.pools):
        x = ad.relu(ad.conv2d(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"]))
        x = ad.max_pool2d(x, pool)
    x = ad.reshape(x, (x.shape[0], -1))
    for i in range(len(spec.fc_widths)):
        x = dense_forward(x, params[f"fc{i}.weight"], params[f"fc{i}.bias"], "relu")
    return x


def actor_critic_forward(obs, params: ParameterSet, spec: NetworkSpec):
    """Return ``(logits, value)``.

    ``obs`` is one (4, m, n) tensor or a batch (N, 4, m, n); a single
    observation yields logits of shape (m+1,) and a scalar value.
    """
    if not isinstance(obs, (ad.Tensor, np.ndarray)):
        obs = obs.data  # PriceTensor
    x = ad.tensor(obs)
    single = x.data.ndim == 3
    if single:
        x = ad.reshape(x, (1,) + x.shape)
    h = trunk_forward(x, params, spec)
    logits = ad.linear(h, params["actor.weight"], params["actor.bias"])
    value = ad.reshape(ad.linear(h, params["critic.weight"], params["critic.bias"]), (-1,))
    if single:
        return ad.reshape(logits, (spec.action_dim,)), ad.reshape(value, ())
    return logits, value


@dataclass(frozen=True)
class FiniteDifferenceReport:
    max_error: float
    checked: int
    skipped_kinks: int


def _same_branches(a, b) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_difference_report(params: ParameterSet, obs, loss_fn, h: float = 1e-5, n_coords: int = 200,
                             seed: int = 0, abs_floor: float = 1e-6) -> FiniteDifferenceReport:
    """Compare ``backward`` with central differences on sampled coordinates.

    ``loss_fn(params, obs)`` must return a scalar :class:`Tensor`. Coordinates
    are drawn from every parameter tensor in turn. A coordinate whose
    ``+h``/``-h`` evaluations take a different relu/max/clip branch than the
    base point straddles a kink, where central differences do not estimate
    the derivative; it is skipped and another one is drawn. The relative error
    is ``|a - n| / max(|a|, |n|, abs_floor)``.
    """
    if not h > 0:
        raise ValueError(f"step h must be > 0, got {h}")
    params.zero_grad()
    with ad.record_branches() as base_branches:
        loss = loss_fn(params, obs)
    loss.backward()
    analytic = params.flat_grad()
    base = params.flat()
    rng = np.random.default_rng(seed)
    sizes = [t.data.size for t in params]
    starts = np.cumsum([0] + sizes[:-1])
    per = max(1, -(-n_coords // len(sizes)))
    # per-tensor candidate queues, then the whole vector to top up
    queues = [list(s + rng.permutation(k)) for s, k in zip(starts, sizes)]
    pool = list(rng.permutation(base.size))

    def evaluate(k):
        vals = []
        for sign in (1.0, -1.0):
            vec = base.copy()
            vec[k] += sign * h
            params.set_flat(vec)
            with ad.record_branches() as br:
                vals.append(loss_fn(params, obs).item())
            if not _same_branches(br, base_branches):
                return None
        return (vals[0] - vals[1]) / (2 * h)

    worst, checked, skipped, seen = 0.0, 0, 0, set()

    def probe(k):
        nonlocal worst, checked, skipped
        seen.add(k)
        numeric = evaluate(k)
        if numeric is None:
            skipped += 1
            return False
        err = abs(analytic[k] - numeric) / max(abs(analytic[k]), abs(numeric), abs_floor)
        worst = max(worst, err)
        checked += 1
        return True

    try:
        for q in queues:
            got = 0
            while q and got < per:
                got += probe(int(q.pop()))
        while checked < n_coords and pool:
            k = int(pool.pop())
            if k not in seen:
                probe(k)
    finally:
        params.set_flat(base)
        params.zero_grad()
    return FiniteDifferenceReport(worst, checked, skipped)


def finite_difference_check(params: ParameterSet, obs, loss_fn, h: float = 1e-5, n_coords: int = 200,
                            seed: int = 0, abs_floor: float = 1e-6) -> float:
    """Max relative error of :func:`finite_difference_report`."""
    return finite_difference_report(params, obs, loss_fn, h, n_coords, seed, abs_floor).max_error


# ---- checkpoints -------------------------------------------------------------

def save_checkpoint(path, spec: NetworkSpec, params: ParameterSet, meta: dict | None = None) -> None:
    """Binary layout: magic, u32 version, u32 header length, JSON header, float64 LE payload."""
    header = {
        "spec": spec.to_dict(),
        "params": [[name, list(t.shape)] for name, t in params.tensors.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = params.flat().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_checkpoint(path, expected: NetworkSpec | None = None) -> tuple[NetworkSpec, ParameterSet, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen])
    spec = NetworkSpec.from_dict(header["spec"])
    if expected is not None and spec != expected:
        raise CheckpointError(f"{path}: network spec {spec} does not match configured {expected}")
    shapes = parameter_shapes(spec)
    stored = [(n, tuple(s)) for n, s in header["params"]]
    if stored != list(shapes.items()):
        raise CheckpointError(f"{path}: parameter layout does not match its spec")
    flat = np.frombuffer(raw[16 + hlen:], dtype="<f8").astype(np.float64)
    params = zero_params(spec)
    if flat.size != params.size:
        raise CheckpointError(f"{path}: payload holds {flat.size} values, expected {params.size}")
    params.set_flat(flat)
    return spec, params, header["meta"]
