"""Generator with local/global pathways and split PK/Cp heads; PatchGAN discriminator."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .autodiff import Conv2d, InstanceNorm, Linear, Module, Tensor, ops
from .core import ConfigError, ShapeMismatch, TkModel
from .fitting import DEFAULT_BOUNDS

# multiplicative scaling from physical units (K^trans in min^-1) to network space
SCALE_FACTORS = {TkModel.ETOFTS: (20.0, 40.0, 4.0), TkModel.PATLAK: (40.0, 8.0)}
CP_SCALE = 0.1  # mM -> network space
ENHANCEMENT_SCALE = 10.0


def prepare_input(signal, n_baseline: int) -> np.ndarray:
    """Relative enhancement S / mean(S[:n_baseline]) - 1, scaled; frames on axis -3.

    Dividing out the pre-contrast level removes S0 from the input so the
    network sees a quantity close to proportional to concentration.
    """
    s = np.asarray(signal, dtype=np.float64)
    nb = max(1, int(n_baseline))
    base = s[..., :nb, :, :].mean(axis=-3, keepdims=True)
    safe = np.where(base > 0, base, 1.0)
    rel = np.where(base > 0, s / safe - 1.0, 0.0)
    return (rel * ENHANCEMENT_SCALE).astype(np.float32)


@dataclass(frozen=True)
class GeneratorSpec:
    in_channels: int
    out_pk_channels: int
    base_channels: int = 64
    dilations: tuple = (2, 4, 8)
    cp_hidden_units: int = 256

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.in_channels < 2 or self.base_channels < 1 or self.cp_hidden_units < 1:
            raise ConfigError("generator widths must be positive and in_channels >= 2")
        if len(self.dilations) != 3 or min(self.dilations) < 1:
            raise ConfigError("generator needs three positive dilations")
        if self.out_pk_channels not in (2, 3):
            raise ConfigError("out_pk_channels must be 2 (Patlak) or 3 (eTofts)")

    @classmethod
    def for_model(cls, model, n_frames: int, **kw) -> "GeneratorSpec":
        return cls(in_channels=n_frames, out_pk_channels=TkModel.parse(model).n_params, **kw)

    @property
    def model(self) -> TkModel:
        return TkModel.ETOFTS if self.out_pk_channels == 3 else TkModel.PATLAK

    @property
    def min_size(self) -> int:
        return 2 * max(self.dilations) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(**d)


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int
    base_filters: int = 32
    n_layers: int = 3  # stride-2 layers

    def __post_init__(self):
        if self.in_channels < 1 or self.base_filters < 1 or self.n_layers < 1:
            raise ConfigError("discriminator sizes must be positive")

    @property
    def min_size(self) -> int:
        # each stride-2 4x4 pad-1 conv maps n -> n // 2; two stride-1 4x4 pad-1 convs each drop 1
        return 2 ** self.n_layers * 3

    def output_size(self, n: int) -> int:
        for _ in range(self.n_layers):
            n = (n + 2 - 4) // 2 + 1
        return n - 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorSpec":
        return cls(**d)


class GeneratorOutput(NamedTuple):
    pk: Tensor
    cp: Tensor


class Generator(Module):
    def __init__(self, spec: GeneratorSpec, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        b = spec.base_channels
        self.spec = spec
        self.stem = Conv2d(spec.in_channels, b, 3, rng, padding=1)
        self.local1 = Conv2d(b, b, 3, rng, padding=1)
        self.local2 = Conv2d(b, b, 3, rng, padding=1)
        self.local3 = Conv2d(b, b, 3, rng, padding=1)
        d1, d2, d3 = spec.dilations
        self.global1 = Conv2d(b, b, 3, rng, padding=d1, dilation=d1)
        self.global2 = Conv2d(b, b, 3, rng, padding=d2, dilation=d2)
        self.global3 = Conv2d(b, b, 3, rng, padding=d3, dilation=d3)
        self.pk1 = Conv2d(2 * b, b, 1, rng)
        self.pk2 = Conv2d(b, b, 1, rng)
        self.pk3 = Conv2d(b, spec.out_pk_channels, 1, rng)
        self.cp1 = Linear(2 * b, spec.cp_hidden_units, rng)
        self.cp2 = Linear(spec.cp_hidden_units, spec.in_channels, rng)

    def forward(self, x) -> GeneratorOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"generator expects [B, {self.spec.in_channels}, H, W], got {x.shape}")
        if min(x.shape[2:]) < self.spec.min_size:
            raise ShapeMismatch(f"generator input {x.shape[2:]} below minimum {self.spec.min_size}")
        h = ops.relu(self.stem(x))
        loc = ops.relu(self.local3(ops.relu(self.local2(ops.relu(self.local1(h))))))
        glo = ops.relu(self.global3(ops.relu(self.global2(ops.relu(self.global1(h))))))
        feat = ops.concat([loc, glo], axis=1)
        pk = self.pk3(ops.relu(self.pk2(ops.relu(self.pk1(feat)))))
        cp = self.cp2(ops.relu(self.cp1(ops.global_avg_pool(feat))))
        return GeneratorOutput(pk, cp)


class Discriminator(Module):
    def __init__(self, spec: DiscriminatorSpec, rng: np.random.Generator | int = 0):
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.spec = spec
        self._blocks = []
        c_in, c_out = spec.in_channels, spec.base_filters
        for i in range(spec.n_layers + 1):
            stride = 2 if i < spec.n_layers else 1
            conv = Conv2d(c_in, c_out, 4, rng, stride=stride, padding=1)
            setattr(self, f"conv{i}", conv)
            norm = None
            if i > 0:
                norm = InstanceNorm(c_out)
                setattr(self, f"norm{i}", norm)
            self._blocks.append((conv, norm))
            c_in, c_out = c_out, c_out * 2
        self.head = Conv2d(c_in, 1, 4, rng, padding=1)

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"discriminator expects [B, {self.spec.in_channels}, H, W], got {x.shape}")
        if min(x.shape[2:]) < self.spec.min_size:
            raise ShapeMismatch(f"discriminator input {x.shape[2:]} below minimum {self.spec.min_size}")
        for conv, norm in self._blocks:
            x = conv(x)
            if norm is not None:
                x = norm(x)
            x = ops.leaky_relu(x, 0.2)
        return self.head(x)


def scale_pk(stack: np.ndarray, model, axis: int = 0) -> np.ndarray:
    """Physical PK stack (K^trans in min^-1) -> network space."""
    f = np.asarray(SCALE_FACTORS[TkModel.parse(model)])
    shape = [1] * np.ndim(stack)
    shape[axis] = f.size
    return np.asarray(stack) * f.reshape(shape)


def clamp_inference_output(pk_scaled, model, axis: int = 0) -> np.ndarray:
    """Unscale network output along ``axis`` and clamp each parameter to [0, upper bound]."""
    model = TkModel.parse(model)
    arr = np.asarray(pk_scaled.data if isinstance(pk_scaled, Tensor) else pk_scaled, dtype=np.float64)
    f = np.asarray(SCALE_FACTORS[model])
    if arr.shape[axis] != f.size:
        raise ShapeMismatch(f"expected {f.size} channels for {model.value}, got {arr.shape[axis]}")
    shape = [1] * arr.ndim
    shape[axis] = f.size
    hi = np.array([DEFAULT_BOUNDS[n][1] for n in model.param_names]).reshape(shape)
    return np.clip(arr / f.reshape(shape), 0.0, hi)
