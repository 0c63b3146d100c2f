"""Parameter storage with aliasing (weight tying), layer specs, and Adam.

Networks never own arrays: every trainable value lives in a named
``ParameterStore`` slot, and a layer refers to slots through alias names.
Tying two layers means pointing both aliases at one slot, so their values are
identical by construction and the optimizer updates them exactly once with the
summed gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .rng import Rng
from . import tensor as T
from .tensor import RunningStats, Tensor


class ConfigError(ValueError):
    """A network/sharing configuration violates its constraints."""


@dataclass
class Slot:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    trainable: bool = True


class ParameterStore:
    """Named parameter slots plus an alias table for weight tying."""

    def __init__(self):
        self.slots: dict[str, Slot] = {}
        self.aliases: dict[str, str] = {}

    def create(self, slot_id: str, value: np.ndarray, trainable: bool = True) -> str:
        if slot_id in self.slots:
            raise ConfigError(f"slot {slot_id!r} already exists")
        value = np.asarray(value, dtype=np.float32)
        self.slots[slot_id] = Slot(
            value=value,
            grad=np.zeros_like(value),
            adam_m=np.zeros_like(value),
            adam_v=np.zeros_like(value),
            trainable=trainable,
        )
        self.aliases[slot_id] = slot_id
        return slot_id

    def alias(self, name: str, slot_id: str) -> None:
        if slot_id not in self.slots:
            raise ConfigError(f"alias {name!r} -> unknown slot {slot_id!r}")
        self.aliases[name] = slot_id

    def resolve(self, name: str) -> str:
        if name not in self.aliases:
            raise ConfigError(f"unknown parameter name {name!r}")
        return self.aliases[name]

    def get(self, name: str) -> Slot:
        return self.slots[self.resolve(name)]

    def value(self, name: str) -> np.ndarray:
        return self.get(name).value

    def set_value(self, name: str, value: np.ndarray) -> None:
        slot = self.get(name)
        if slot.value.shape != np.shape(value):
            raise ConfigError(
                f"set_value {name!r}: shape {list(np.shape(value))} != slot {list(slot.value.shape)}"
            )
        slot.value = np.asarray(value, dtype=slot.value.dtype)

    def trainable_ids(self, prefix: str | None = None) -> list[str]:
        ids = [sid for sid, s in self.slots.items() if s.trainable]
        if prefix is not None:
            ids = [sid for sid in ids if sid.startswith(prefix)]
        return sorted(ids)

    def num_scalars(self, slot_ids: Iterable[str] | None = None) -> int:
        ids = self.trainable_ids() if slot_ids is None else list(slot_ids)
        return int(sum(self.slots[sid].value.size for sid in set(ids)))


def init_params(store: ParameterStore, rng: Rng, weight_std: float = 0.02) -> None:
    """Fill slots by kind: N(0, std) weights, zero biases, unit BN gains.

    The init stream is derived from the slot name alone, so allocation order
    and data loading never perturb the draw.
    """
    for slot_id, slot in store.slots.items():
        stream = rng.split("init", slot_id)
        kind = slot_id.rsplit(".", 1)[-1]
        if kind in ("w", "kernel"):
            slot.value = (stream.normal(slot.value.shape) * weight_std).astype(np.float32)
        elif kind in ("b", "beta", "running_mean"):
            slot.value = np.zeros_like(slot.value)
        elif kind in ("gamma", "running_var"):
            slot.value = np.ones_like(slot.value)
        else:
            raise ConfigError(f"init_params: unknown slot kind in {slot_id!r}")
        slot.grad = np.zeros_like(slot.value)
        slot.adam_m = np.zeros_like(slot.value)
        slot.adam_v = np.zeros_like(slot.value)


def adam_step(
    store: ParameterStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps_adam: float = 1e-8,
    t: int = 1,
) -> None:
    """Bias-corrected Adam update applied in place, one update per slot.

    ``grads`` is keyed by slot id; aliased layers must already have their
    gradients summed into the single shared slot.
    """
    if t < 1:
        raise ConfigError(f"adam_step: t must be >= 1, got {t}")
    b1 = np.float32(beta1)
    b2 = np.float32(beta2)
    c1 = np.float32(1.0 - beta1 ** t)
    c2 = np.float32(1.0 - beta2 ** t)
    step_scale = np.float32(lr) / c1
    eps32 = np.float32(eps_adam)
    for slot_id, g in grads.items():
        slot = store.slots[slot_id]
        if not slot.trainable:
            raise ConfigError(f"adam_step: slot {slot_id!r} is not trainable")
        if g.shape != slot.value.shape:
            raise ConfigError(
                f"adam_step: grad shape {list(g.shape)} != slot {slot_id!r} shape {list(slot.value.shape)}"
            )
        g = g.astype(np.float32, copy=False)
        m, v = slot.adam_m, slot.adam_v
        m *= b1
        m += (np.float32(1) - b1) * g
        v *= b2
        v += (np.float32(1) - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += eps32
        denom = np.divide(m, denom, out=denom)
        slot.value = slot.value - step_scale * denom
        slot.grad = g


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """NaN-guard norm clip applied per slot.

    Per-slot (rather than across the whole phase) so that with no weight
    sharing the two GAN streams remain exactly decoupled: a spike in one
    stream's gradients must not rescale the other's.
    """
    out = {}
    for sid, g in grads.items():
        flat = g.reshape(-1)
        norm = float(np.sqrt(np.dot(flat, flat)))
        if norm > max_norm:
            out[sid] = g * g.dtype.type(max_norm / norm)
        else:
            out[sid] = g
    return out


# ---------------------------------------------------------------------------
# layer descriptors and sequential networks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerSpec:
    """One layer row: kind plus its shape/activation/normalization knobs."""

    kind: str  # "fc" | "conv" | "conv_transpose"
    in_dim: int
    out_dim: int
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    out_pad: int = 0
    batchnorm: bool = False
    activation: str | None = None  # "relu" | "leaky_relu" | "tanh" | "sigmoid"
    pool: tuple[int, int] | None = None  # (window, stride) max pool after activation
    flatten_input: bool = False
    reshape_output: tuple[int, ...] | None = None
    shared: bool = False


@dataclass(frozen=True)
class NetSpec:
    name: str
    layers: tuple[LayerSpec, ...]

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class SharingConfig:
    """k leading generator layers and l trailing discriminator layers tied."""

    k: int = 4
    l: int = 1

    def validate(self, m: int, n: int) -> None:
        if not (0 <= self.k <= m):
            raise ConfigError(f"sharing: k={self.k} outside [0, {m}]")
        if not (0 <= self.l <= n):
            raise ConfigError(f"sharing: l={self.l} outside [0, {n}]")


_ACTIVATIONS = {
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


class Network:
    """A sequential net whose parameters are alias names into a store."""

    def __init__(self, name: str, spec: NetSpec, store: ParameterStore, param_names: list[dict[str, str]]):
        self.name = name
        self.spec = spec
        self.store = store
        self.param_names = param_names  # per layer: param key -> alias name

    def slot_ids(self, trainable_only: bool = True) -> list[str]:
        ids = []
        for layer_params in self.param_names:
            for alias in layer_params.values():
                sid = self.store.resolve(alias)
                if not trainable_only or self.store.slots[sid].trainable:
                    ids.append(sid)
        return sorted(set(ids))

    def _param(self, li: int, key: str, params: Mapping[str, Tensor]) -> Tensor:
        sid = self.store.resolve(self.param_names[li][key])
        if sid in params:
            return params[sid]
        return Tensor(self.store.slots[sid].value)

    def forward(
        self,
        x: Tensor,
        params: Mapping[str, Tensor] | None = None,
        mode: str = "train",
        return_features: bool = False,
    ):
        """Run the net; ``params`` overrides slots with (possibly taped) tensors.

        ``return_features`` also yields the input to the final layer (the
        penultimate activation used by feature matching).
        """
        params = params or {}
        penultimate = None
        out = x
        for li, layer in enumerate(self.spec.layers):
            if li == self.spec.depth - 1:
                penultimate = out
            out = self._layer_forward(li, layer, out, params, mode)
        if return_features:
            return out, penultimate
        return out

    def _layer_forward(self, li, layer: LayerSpec, x: Tensor, params, mode) -> Tensor:
        if layer.flatten_input:
            x = T.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        if layer.kind == "fc":
            w = self._param(li, "w", params)
            b = self._param(li, "b", params)
            out = T.add(T.matmul(x, w), b)
        elif layer.kind == "conv":
            k = self._param(li, "w", params)
            b = self._param(li, "b", params)
            out = T.conv2d(x, k, stride=layer.stride, padding=layer.padding)
            out = T.add(out, T.reshape(b, (1, layer.out_dim, 1, 1)))
        elif layer.kind == "conv_transpose":
            k = self._param(li, "w", params)
            b = self._param(li, "b", params)
            out = T.conv2d_transpose(
                x, k, stride=layer.stride, padding=layer.padding, out_pad=layer.out_pad
            )
            out = T.add(out, T.reshape(b, (1, layer.out_dim, 1, 1)))
        else:
            raise ConfigError(f"unknown layer kind {layer.kind!r}")
        if layer.reshape_output is not None:
            out = T.reshape(out, (x.shape[0],) + layer.reshape_output)
        if layer.batchnorm:
            gamma = self._param(li, "gamma", params)
            beta = self._param(li, "beta", params)
            stats = self._running_stats(li)
            out = T.batchnorm(out, gamma, beta, stats, mode)
        if layer.pool is not None:
            out = T.maxpool2d(out, window=layer.pool[0], stride=layer.pool[1])
        if layer.activation is not None:
            if layer.activation == "leaky_relu":
                out = T.leaky_relu(out, 0.2)
            else:
                out = _ACTIVATIONS[layer.activation](out)
        return out

    def _running_stats(self, li: int) -> RunningStats:
        mean_slot = self.store.get(self.param_names[li]["running_mean"])
        var_slot = self.store.get(self.param_names[li]["running_var"])
        return RunningStats(mean_slot.value, var_slot.value)


def _register_layer(
    store: ParameterStore,
    net_name: str,
    slot_prefix: str,
    li: int,
    layer: LayerSpec,
    tied: bool,
) -> dict[str, str]:
    """Create (or alias into) the slots of one layer; returns alias names."""
    base = f"{slot_prefix}.L{li + 1}"
    alias_base = f"{net_name}.L{li + 1}"
    names: dict[str, str] = {}

    def param(key: str, shape: tuple[int, ...], trainable: bool = True) -> None:
        slot_id = f"{base}.{key}"
        alias = f"{alias_base}.{key}"
        if slot_id not in store.slots:
            store.create(slot_id, np.zeros(shape, dtype=np.float32), trainable=trainable)
        elif not tied:
            raise ConfigError(f"slot collision for {slot_id!r}")
        store.alias(alias, slot_id)
        names[key] = alias

    if layer.kind == "fc":
        param("w", (layer.in_dim, layer.out_dim))
        param("b", (layer.out_dim,))
    elif layer.kind == "conv":
        param("w", (layer.out_dim, layer.in_dim, layer.kernel, layer.kernel))
        param("b", (layer.out_dim,))
    elif layer.kind == "conv_transpose":
        param("w", (layer.in_dim, layer.out_dim, layer.kernel, layer.kernel))
        param("b", (layer.out_dim,))
    else:
        raise ConfigError(f"unknown layer kind {layer.kind!r}")
    if layer.batchnorm:
        # Normalization happens after any reshape, over the channel axis.
        bn_dim = layer.reshape_output[0] if layer.reshape_output else layer.out_dim
        param("gamma", (bn_dim,))
        param("beta", (bn_dim,))
        param("running_mean", (bn_dim,), trainable=False)
        param("running_var", (bn_dim,), trainable=False)
    return names


def build_network(name: str, spec: NetSpec, store: ParameterStore) -> Network:
    """Instantiate a standalone (untied) network."""
    params = [
        _register_layer(store, name, name, li, layer, tied=False)
        for li, layer in enumerate(spec.layers)
    ]
    return Network(name, spec, store, params)


def build_generator_pair(
    spec: NetSpec, sharing: SharingConfig, store: ParameterStore, prefix: str = "g"
) -> tuple[Network, Network]:
    """Twin generators with the first ``k`` layers resolving to shared slots."""
    m = spec.depth
    if sharing.k > m:
        raise ConfigError(f"sharing: k={sharing.k} exceeds generator depth {m}")
    nets = []
    for idx in (1, 2):
        net_name = f"{prefix}{idx}"
        params = []
        for li, layer in enumerate(spec.layers):
            tied = li < sharing.k
            slot_prefix = f"{prefix}.shared" if tied else net_name
            params.append(_register_layer(store, net_name, slot_prefix, li, layer, tied=tied))
        marked = replace_shared(spec, sharing.k, leading=True)
        nets.append(Network(net_name, marked, store, params))
    return nets[0], nets[1]


def build_discriminator_pair(
    spec: NetSpec, sharing: SharingConfig, store: ParameterStore, prefix: str = "f"
) -> tuple[Network, Network]:
    """Twin discriminators with the last ``l`` layers resolving to shared slots."""
    n = spec.depth
    if sharing.l > n:
        raise ConfigError(f"sharing: l={sharing.l} exceeds discriminator depth {n}")
    nets = []
    for idx in (1, 2):
        net_name = f"{prefix}{idx}"
        params = []
        for li, layer in enumerate(spec.layers):
            tied = li >= n - sharing.l
            slot_prefix = f"{prefix}.shared" if tied else net_name
            params.append(_register_layer(store, net_name, slot_prefix, li, layer, tied=tied))
        marked = replace_shared(spec, sharing.l, leading=False)
        nets.append(Network(net_name, marked, store, params))
    return nets[0], nets[1]


def replace_shared(spec: NetSpec, count: int, leading: bool) -> NetSpec:
    layers = []
    n = spec.depth
    for li, layer in enumerate(spec.layers):
        tied = li < count if leading else li >= n - count
        layers.append(replace(layer, shared=tied))
    return NetSpec(spec.name, tuple(layers))
