"""Classifier architectures and their a-priori parameter groups.

A :class:`ModelSpec` lists the layers, the parameter slots they read, and a
partition of those slots into groups. Each group shares one decoder and one
density model.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .decoders import MODES

KINDS = ("dense", "conv", "bias")


@dataclass(frozen=True)
class ShapeSpec:
    """Parameter shape: (H, W, I, O) for conv kernels, (I, O) for dense, (O,) for biases."""

    kind: str
    dims: tuple

    def __post_init__(self):
        want = {"conv": 4, "dense": 2, "bias": 1}.get(self.kind)
        if want is None:
            raise ValueError(f"unknown slot kind {self.kind!r}")
        if len(self.dims) != want or any(int(d) < 1 for d in self.dims):
            raise ValueError(f"bad {self.kind} dims {self.dims}")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def fan(self) -> tuple[int, int]:
        if self.kind == "conv":
            h, w, i, o = self.dims
            return h * w * i, h * w * o
        if self.kind == "dense":
            return self.dims
        return self.dims[0], self.dims[0]


@dataclass(frozen=True)
class Slot:
    name: str
    shape: ShapeSpec

    @property
    def kind(self) -> str:
        return self.shape.kind


@dataclass(frozen=True)
class Layer:
    op: str                        # dense, conv, relu, pool, flatten
    weight: str | None = None
    bias: str | None = None
    padding: str = "valid"


@dataclass(frozen=True)
class GroupSpec:
    name: str
    slots: tuple
    ell: int = 1
    decoder: str = "scalar"
    coded: bool = True             # False stores the group as raw 32-bit values

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError(f"group {self.name}: ell must be >= 1")
        if self.decoder not in MODES:
            raise ValueError(f"group {self.name}: unknown decoder {self.decoder!r}")
        if self.decoder == "scalar" and self.ell != 1:
            raise ValueError(f"group {self.name}: the scalar decoder needs ell=1")


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_shape: tuple             # per-example shape fed to the first layer
    layers: tuple
    slots: tuple
    groups: tuple
    options: tuple = field(default=())   # builder keyword arguments, for rebuilding by name

    def __post_init__(self):
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise ValueError("duplicate slot names")
        owners: dict[str, str] = {}
        for g in self.groups:
            for s in g.slots:
                if s not in names:
                    raise ValueError(f"group {g.name} refers to unknown slot {s}")
                if s in owners:
                    raise ValueError(f"slot {s} is in groups {owners[s]} and {g.name}")
                owners[s] = g.name
        missing = set(names) - set(owners)
        if missing:
            raise ValueError(f"slots without a group: {sorted(missing)}")
        for g in self.groups:
            for s in g.slots:
                self._check_ell(g, self.slot(s))

    @staticmethod
    def _check_ell(g: GroupSpec, slot: Slot):
        if slot.kind == "conv":
            h, w = slot.shape.dims[:2]
            if (h * w) % g.ell:
                raise ValueError(f"group {g.name}: ell={g.ell} does not divide the {h}x{w} kernel of {slot.name}")
        elif slot.shape.size % g.ell:
            raise ValueError(f"group {g.name}: ell={g.ell} does not divide {slot.name}")

    def slot(self, name: str) -> Slot:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def group(self, name: str) -> GroupSpec:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def group_of(self, slot: str) -> GroupSpec:
        for g in self.groups:
            if slot in g.slots:
                return g
        raise KeyError(slot)

    def kernel_hw(self, group: str) -> tuple | None:
        """Common (H, W) of the group's conv kernels when one row holds a whole kernel."""
        g = self.group(group)
        hws = {self.slot(s).shape.dims[:2] for s in g.slots if self.slot(s).kind == "conv"}
        if len(hws) == 1:
            hw = hws.pop()
            if hw[0] * hw[1] == g.ell:
                return hw
        return None

    @property
    def num_parameters(self) -> int:
        return sum(s.shape.size for s in self.slots)

    @property
    def baseline_bytes(self) -> int:
        """Size of the uncompressed model at 32 bits per parameter."""
        return 4 * self.num_parameters

    def configure(self, group: str, **changes) -> "ModelSpec":
        """Copy with one group's ``ell``/``decoder``/``coded`` replaced."""
        groups = tuple(replace(g, **changes) if g.name == group else g for g in self.groups)
        if groups == self.groups and group not in {g.name for g in self.groups}:
            raise KeyError(group)
        return replace(self, groups=groups)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _apply_overrides(spec: ModelSpec, ell_overrides, decoder_overrides) -> ModelSpec:
    changes: dict[str, dict] = {}
    for name, ell in (ell_overrides or {}).items():
        changes.setdefault(name, {})["ell"] = int(ell)
    for name, mode in (decoder_overrides or {}).items():
        changes.setdefault(name, {})["decoder"] = mode
    for name, kw in changes.items():
        spec = spec.configure(name, **kw)
    return spec


def _dense_stack(name, input_dim, widths, prefix="fc"):
    layers, slots = [], []
    dims = [input_dim, *widths]
    for k in range(len(widths)):
        w, b = f"{prefix}{k + 1}.w", f"{prefix}{k + 1}.b"
        slots += [Slot(w, ShapeSpec("dense", (dims[k], dims[k + 1]))), Slot(b, ShapeSpec("bias", (dims[k + 1],)))]
        layers.append(Layer("dense", w, b))
        if k < len(widths) - 1:
            layers.append(Layer("relu"))
    return layers, slots


def build_mlp(hidden=(32,), input_dim: int = 784, num_classes: int = 10, ell_overrides=None,
              decoder_overrides=None) -> ModelSpec:
    """Dense network; groups are hidden weights, classifier weights and biases."""
    hidden = tuple(int(h) for h in hidden)
    layers, slots = _dense_stack("mlp", input_dim, (*hidden, num_classes))
    weights = [s.name for s in slots if s.kind == "dense"]
    groups = []
    if weights[:-1]:
        groups.append(GroupSpec("dense", tuple(weights[:-1])))
    groups += [GroupSpec("classifier", (weights[-1],)),
               GroupSpec("bias", tuple(s.name for s in slots if s.kind == "bias"))]
    opts = (("hidden", hidden), ("input_dim", input_dim), ("num_classes", num_classes))
    spec = ModelSpec("mlp", (input_dim,), (Layer("flatten"), *layers), tuple(slots), tuple(groups), opts)
    return _apply_overrides(spec, ell_overrides, decoder_overrides)


def build_lenet300(ell_overrides: Mapping[str, int] | None = None,
                   decoder_overrides: Mapping[str, str] | None = None) -> ModelSpec:
    """784-300-100-10 with groups {fc1, fc2}, {classifier}, {biases}."""
    spec = build_mlp((300, 100), 784, 10)
    spec = replace(spec, name="lenet300", options=())
    return _apply_overrides(spec, ell_overrides, decoder_overrides)


def build_small_conv(ell_conv: int = 1, conv_decoder: str | None = None, full: bool = False,
                     ell_overrides=None, decoder_overrides=None) -> ModelSpec:
    """conv5x5 -> pool -> conv5x5 -> pool -> dense -> dense.

    Channels are 8/16 with 128 hidden units, or 20/50/500 (LeNet5-Caffe) with ``full``.
    Conv kernels use an affine decoder by default, or ``conv_decoder``
    (``"dft"`` is the natural choice with ``ell_conv=25``).
    """
    c1, c2, hid = (20, 50, 500) if full else (8, 16, 128)
    ell_conv = int(ell_conv)
    if ell_conv < 1 or 25 % ell_conv:
        raise ValueError(f"ell_conv={ell_conv} must be 1 or divide 25")
    slots = [
        Slot("conv1.w", ShapeSpec("conv", (5, 5, 1, c1))), Slot("conv1.b", ShapeSpec("bias", (c1,))),
        Slot("conv2.w", ShapeSpec("conv", (5, 5, c1, c2))), Slot("conv2.b", ShapeSpec("bias", (c2,))),
        Slot("fc1.w", ShapeSpec("dense", (4 * 4 * c2, hid))), Slot("fc1.b", ShapeSpec("bias", (hid,))),
        Slot("fc2.w", ShapeSpec("dense", (hid, 10))), Slot("fc2.b", ShapeSpec("bias", (10,))),
    ]
    layers = (
        Layer("conv", "conv1.w", "conv1.b"), Layer("relu"), Layer("pool"),
        Layer("conv", "conv2.w", "conv2.b"), Layer("relu"), Layer("pool"),
        Layer("flatten"), Layer("dense", "fc1.w", "fc1.b"), Layer("relu"),
        Layer("dense", "fc2.w", "fc2.b"),
    )
    groups = (
        GroupSpec("conv", ("conv1.w", "conv2.w"), ell_conv, conv_decoder or "affine"),
        GroupSpec("dense", ("fc1.w",)),
        GroupSpec("classifier", ("fc2.w",)),
        GroupSpec("bias", ("conv1.b", "conv2.b", "fc1.b", "fc2.b")),
    )
    spec = ModelSpec("smallconv", (28, 28, 1), layers, tuple(slots), groups, (("full", bool(full)),))
    return _apply_overrides(spec, ell_overrides, decoder_overrides)


ARCHITECTURES = {"lenet300": build_lenet300, "smallconv": build_small_conv, "mlp": build_mlp}


def build_model(arch: str, **options) -> ModelSpec:
    try:
        builder = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return builder(**options)


# ---------------------------------------------------------------------------
# initialization and inference
# ---------------------------------------------------------------------------

def glorot_std(shape: ShapeSpec) -> float:
    """Standard deviation of Glorot-uniform initialization for a weight slot."""
    fan_in, fan_out = shape.fan
    return math.sqrt(2.0 / (fan_in + fan_out))


def init_parameters(spec: ModelSpec, seed: int = 0, dtype=None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases."""
    dtype = dtype or ad.default_dtype()
    rng = np.random.default_rng([int(seed), 0x1A])
    out = {}
    for s in spec.slots:
        if s.kind == "bias":
            out[s.name] = np.zeros(s.shape.dims, dtype)
        else:
            lim = math.sqrt(3.0) * glorot_std(s.shape)
            out[s.name] = rng.uniform(-lim, lim, s.shape.dims).astype(dtype)
    return out


def _as_input(spec: ModelSpec, x) -> ad.Tensor:
    x = x if isinstance(x, ad.Tensor) else ad.constant(x)
    n = x.shape[0]
    want = int(np.prod(spec.input_shape))
    if x.size != n * want:
        raise ad.ShapeError(f"input {x.shape} does not match {spec.name} input {spec.input_shape}")
    if x.shape[1:] != tuple(spec.input_shape):
        x = ad.reshape(x, (n, *spec.input_shape))
    return x


def predict(spec: ModelSpec, params: Mapping[str, object], x) -> ad.Tensor:
    """Class logits of ``spec`` with parameter values ``params`` (slot name -> array/Tensor)."""
    def get(name):
        v = params[name]
        v = v if isinstance(v, ad.Tensor) else ad.constant(v)
        if v.shape != spec.slot(name).shape.dims:
            raise ad.ShapeError(f"{name}: got {v.shape}, expected {spec.slot(name).shape.dims}")
        return v

    h = _as_input(spec, x)
    for layer in spec.layers:
        if layer.op == "flatten":
            h = ad.reshape(h, (h.shape[0], -1))
        elif layer.op == "dense":
            h = ad.bias_add(ad.matmul(h, get(layer.weight)), get(layer.bias))
        elif layer.op == "conv":
            h = ad.bias_add(ad.conv2d(h, get(layer.weight), layer.padding), get(layer.bias))
        elif layer.op == "relu":
            h = ad.relu(h)
        elif layer.op == "pool":
            h = ad.max_pool2x2(h)
        else:
            raise ValueError(f"unknown layer op {layer.op!r}")
    return h
