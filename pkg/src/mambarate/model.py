"""The MambaRate network.

conv block (conv1d -> layer norm -> mish)
  -> num_blocks x [x + Mamba2(x); y + FFN(y)]
  -> per-frame linear + mish -> mean over time -> linear -> sigmoid
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatch


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 1024
    d_model: int = 64
    conv_kernel: int = 3
    conv_stride: int = 1
    num_blocks: int = 5
    d_state: int = 32
    d_conv: int = 4
    expand: int = 8
    head_dim: int = 64
    ffn_expansion: int = 4
    mlp_hidden: int = 64
    output_dim: int = 16

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be a positive integer")
        if self.d_inner % self.head_dim:
            raise ValueError(f"d_inner={self.d_inner} not divisible by head_dim={self.head_dim}")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d_model

    @property
    def num_heads(self) -> int:
        return self.d_inner // self.head_dim

    @property
    def d_ffn(self) -> int:
        return self.ffn_expansion * self.d_model

    @property
    def conv_channels(self) -> int:
        """Width of the stream that passes through the depthwise conv (x, B, C)."""
        return self.d_inner + 2 * self.d_state

    @property
    def in_proj_width(self) -> int:
        """z, x, B, C and one dt per head."""
        return 2 * self.d_inner + 2 * self.d_state + self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Small config used for gradient checks and smoke training."""
        base = dict(
            input_dim=8, d_model=8, d_state=4, expand=2, head_dim=8, num_blocks=1,
            mlp_hidden=8,
        )
        base.update(overrides)
        return cls(**base)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, di = cfg.d_model, cfg.d_inner
    shapes: dict[str, tuple[int, ...]] = {
        "conv.weight": (d, cfg.input_dim, cfg.conv_kernel),
        "conv.bias": (d,),
        "conv_norm.gain": (d,),
        "conv_norm.bias": (d,),
    }
    for i in range(cfg.num_blocks):
        p = f"blocks.{i}."
        shapes.update({
            p + "mixer.in_proj": (d, cfg.in_proj_width),
            p + "mixer.conv.weight": (cfg.conv_channels, cfg.d_conv),
            p + "mixer.conv.bias": (cfg.conv_channels,),
            p + "mixer.dt_bias": (cfg.num_heads,),
            p + "mixer.a_log": (cfg.num_heads,),
            p + "mixer.d_skip": (cfg.num_heads,),
            p + "mixer.norm.gain": (di,),
            p + "mixer.out_proj": (di, d),
            p + "ffn.w1": (d, cfg.d_ffn),
            p + "ffn.b1": (cfg.d_ffn,),
            p + "ffn.w2": (cfg.d_ffn, d),
            p + "ffn.b2": (d,),
        })
    shapes.update({
        "head.w1": (d, cfg.mlp_hidden),
        "head.b1": (cfg.mlp_hidden,),
        "head.w2": (cfg.mlp_hidden, cfg.output_dim),
        "head.b2": (cfg.output_dim,),
    })
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form scalar parameter count, summed layer by layer."""
    d, di, n, h = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.num_heads
    front = d * cfg.input_dim * cfg.conv_kernel + d + 2 * d
    mixer = (
        d * (2 * di + 2 * n + h)      # in_proj, no bias
        + (di + 2 * n) * (cfg.d_conv + 1)  # depthwise conv weight + bias
        + 3 * h                       # dt_bias, a_log, d_skip
        + di                          # gated rms norm gain
        + di * d                      # out_proj, no bias
    )
    ffn = 2 * d * cfg.d_ffn + cfg.d_ffn + d
    head = d * cfg.mlp_hidden + cfg.mlp_hidden + cfg.mlp_hidden * cfg.output_dim + cfg.output_dim
    return front + cfg.num_blocks * (mixer + ffn) + head


def _inv_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


def init_parameters(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """uniform(+-1/sqrt(fan_in)) for weights and biases; SSM-specific init for the scan."""
    out: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.endswith("norm.gain"):
            value = np.ones(shape)
        elif name == "conv_norm.bias":
            value = np.zeros(shape)
        elif leaf == "dt_bias":
            dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=shape))
            value = _inv_softplus(dt)
        elif leaf == "a_log":
            # decay rate a = -exp(a_log) starts in [-1, -0.5]
            value = np.log(rng.uniform(0.5, 1.0, size=shape))
        elif leaf == "d_skip":
            value = np.ones(shape)
        else:
            value = rng.uniform(-1.0, 1.0, size=shape) / np.sqrt(_fan_in(name, shape, cfg))
        out[name] = value.astype(np.float64)
    return out


def _fan_in(name: str, shape: tuple[int, ...], cfg: ModelConfig) -> int:
    if name.startswith("conv."):
        return cfg.input_dim * cfg.conv_kernel
    if "mixer.conv." in name:
        return cfg.d_conv
    if name.endswith(("b1", "b2")):
        # bias shares the fan-in of its weight matrix
        return {
            "ffn.b1": cfg.d_model,
            "ffn.b2": cfg.d_ffn,
            "head.b1": cfg.d_model,
            "head.b2": cfg.mlp_hidden,
        }[name.split(".", 2)[-1] if name.startswith("blocks.") else name]
    return shape[0]


class MambaRate:
    """Parameters plus the forward pass. Inputs are (T, input_dim) arrays."""

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        if params is None:
            params = init_parameters(cfg, np.random.default_rng(seed))
        expected = parameter_shapes(cfg)
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeMismatch(f"parameter set mismatch: missing {missing}, unexpected {extra}")
        self.params: dict[str, Node] = {}
        for name, shape in expected.items():
            value = np.asarray(params[name], dtype=np.float64)
            if value.shape != shape:
                raise ShapeMismatch(f"{name}: shape {value.shape}, expected {shape}")
            self.params[name] = ad.parameter(value.copy(), name)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.params[k].value = np.array(v, dtype=np.float64)

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    # --- layers -------------------------------------------------------------

    def conv_block(self, x) -> Node:
        x = ad.constant(x)
        if x.value.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ShapeMismatch(f"input shape {x.shape}, expected (T, {self.cfg.input_dim})")
        if x.shape[0] < 1:
            raise ShapeMismatch("input must have at least one frame")
        p = self.params
        h = ad.conv1d(x, p["conv.weight"], p["conv.bias"], stride=self.cfg.conv_stride)
        h = ad.layer_norm(h, p["conv_norm.gain"], p["conv_norm.bias"])
        return ad.mish(h)

    def mamba2(self, x: Node, i: int) -> Node:
        cfg, p = self.cfg, self.params
        pre = f"blocks.{i}.mixer."
        di, n, nh = cfg.d_inner, cfg.d_state, cfg.num_heads
        t_len = x.shape[0]

        proj = ad.matmul(x, p[pre + "in_proj"])
        gate = proj[:, :di]
        stream = proj[:, di : 2 * di + 2 * n]
        dt_raw = proj[:, 2 * di + 2 * n :]

        stream = ad.silu(
            ad.causal_depthwise_conv1d(stream, p[pre + "conv.weight"], p[pre + "conv.bias"])
        )
        xs = ad.reshape(stream[:, :di], (t_len, nh, cfg.head_dim))
        bmat = stream[:, di : di + n]
        cmat = stream[:, di + n :]

        dt = ad.softplus(ad.add(dt_raw, p[pre + "dt_bias"]))
        decay_rate = ad.mul(ad.exp(p[pre + "a_log"]), -1.0)

        y = ad.selective_scan(xs, dt, decay_rate, bmat, cmat)
        y = ad.add(y, ad.mul(xs, ad.reshape(p[pre + "d_skip"], (nh, 1))))
        y = ad.reshape(y, (t_len, di))
        y = ad.rms_norm(ad.mul(y, ad.silu(gate)), p[pre + "norm.gain"])
        return ad.matmul(y, p[pre + "out_proj"])

    def ffn(self, x: Node, i: int) -> Node:
        p = self.params
        pre = f"blocks.{i}.ffn."
        h = ad.mish(ad.add(ad.matmul(x, p[pre + "w1"]), p[pre + "b1"]))
        return ad.add(ad.matmul(h, p[pre + "w2"]), p[pre + "b2"])

    def mamba2_block(self, x, i: int = 0) -> Node:
        x = ad.constant(x)
        if x.value.ndim != 2 or x.shape[1] != self.cfg.d_model:
            raise ShapeMismatch(f"block input {x.shape}, expected (T, {self.cfg.d_model})")
        y = ad.add(x, self.mamba2(x, i))
        return ad.add(y, self.ffn(y, i))

    def head(self, h: Node) -> Node:
        p = self.params
        h = ad.mish(ad.add(ad.matmul(h, p["head.w1"]), p["head.b1"]))
        pooled = ad.mean(h, axis=0)
        return ad.sigmoid(ad.add(ad.matmul(pooled, p["head.w2"]), p["head.b2"]))

    def forward(self, x) -> Node:
        h = self.conv_block(x)
        for i in range(self.cfg.num_blocks):
            h = self.mamba2_block(h, i)
        return self.head(h)

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64)).value
