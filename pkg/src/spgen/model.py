"""The scanpath generator: encoder, prior maps, merging network, soft-argmax
decoding, fixation selector and temperature-scaled latent noise."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import Tensor
from .scanpath import ScanPath

NOISE_KINDS = ("uniform", "gaussian")
MERGE_OUT_GAIN = 2 ** -0.5
RELU_GAIN = float(np.sqrt(2.0))


@dataclass(frozen=True)
class ModelConfig:
    height: int = 64
    width: int = 64
    in_channels: int = 3
    encoder_channels: tuple[int, ...] = (16, 32, 64, 64)
    encoder_strides: tuple[int, ...] = (2, 2, 2, 1)
    n_priors: int = 16
    merge_channels: tuple[int, ...] = (64, 64, 48, 48, 32, 32, 24, 20)
    selector_hidden: int = 32
    domain_hidden: int = 32
    beta: float = 25.0
    noise: str = "uniform"
    temperature: float = 0.0

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.noise not in NOISE_KINDS:
            raise ValueError(f"noise must be one of {NOISE_KINDS}, got {self.noise!r}")
        if len(self.encoder_channels) != len(self.encoder_strides):
            raise ValueError("encoder_channels and encoder_strides differ in length")
        if self.height % self.total_stride or self.width % self.total_stride:
            raise ValueError(f"input {self.height}x{self.width} not divisible by stride {self.total_stride}")

    @property
    def k_max(self) -> int:
        return self.merge_channels[-1]

    @property
    def total_stride(self) -> int:
        return int(np.prod(self.encoder_strides))

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        s = self.total_stride
        return self.encoder_channels[-1], self.height // s, self.width // s

    def to_dict(self) -> dict[str, str]:
        out = {}
        for k, v in asdict(self).items():
            out[k] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            default = f.default
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(int(x) for x in raw.split(",") if x)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


@dataclass
class PriorMapBank:
    """Raw, unconstrained prior parameters.

    ``mu = sigmoid(mu_raw)`` places each centre in ``[0, 1]^2`` and
    ``sigma = softplus(sigma_raw)`` keeps widths positive.  Columns are (x, y).
    """

    mu_raw: Tensor
    sigma_raw: Tensor

    @property
    def mu(self) -> np.ndarray:
        return ad._sigmoid(self.mu_raw.data.astype(np.float64))

    @property
    def sigma(self) -> np.ndarray:
        return np.logaddexp(0, self.sigma_raw.data.astype(np.float64))

    @classmethod
    def from_values(cls, mu, sigma, requires_grad: bool = True) -> "PriorMapBank":
        mu = np.asarray(mu, dtype=np.float64).reshape(-1, 2)
        sigma = np.asarray(sigma, dtype=np.float64).reshape(-1, 2)
        mu_raw = np.log(mu) - np.log1p(-mu)
        sigma_raw = sigma + np.log(-np.expm1(-sigma))
        return cls(Tensor(mu_raw.astype(np.float32), requires_grad),
                   Tensor(sigma_raw.astype(np.float32), requires_grad))


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def priors(self) -> PriorMapBank:
        return PriorMapBank(self.tensors["prior.mu_raw"], self.tensors["prior.sigma_raw"])

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: t for k, t in self.tensors.items() if k.startswith(prefix)}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), requires_grad=True, name=k)
                                         for k, t in self.tensors.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def save(self, path, extra: dict | None = None) -> None:
        header = self.config.to_dict()
        header.update(extra or {})
        checkpoint.save(path, self.arrays(), header)

    @classmethod
    def load(cls, path) -> "ModelParams":
        arrays, header = checkpoint.load(path)
        config = ModelConfig.from_dict(header)
        return cls(config, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})


def init_params(config: ModelConfig | None = None, seed: int = 0) -> ModelParams:
    """Xavier-uniform weights, zero biases, priors scattered around the centre."""
    config = config or ModelConfig()
    rng = np.random.default_rng(seed)
    t: dict[str, Tensor] = {}

    def weight(name, shape, fan_in=None, fan_out=None, gain=RELU_GAIN):
        t[name] = ad.xavier_init(shape, rng, fan_in, fan_out, gain)

    def zeros(name, n):
        t[name] = Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)

    cin = config.in_channels
    for k, cout in enumerate(config.encoder_channels):
        weight(f"enc.{k}.dw", (cin, 3, 3), fan_in=9, fan_out=9)
        zeros(f"enc.{k}.dw_b", cin)
        # fan-in scaling: the fan average shrinks activations at every widening block
        weight(f"enc.{k}.pw", (cout, cin, 1, 1), fan_in=cin, fan_out=cin)
        zeros(f"enc.{k}.pw_b", cout)
        cin = cout

    mu = rng.uniform(0.25, 0.75, size=(config.n_priors, 2))
    sigma = rng.uniform(0.15, 0.35, size=(config.n_priors, 2))
    bank = PriorMapBank.from_values(mu, sigma)
    t["prior.mu_raw"], t["prior.sigma_raw"] = bank.mu_raw, bank.sigma_raw

    cin = config.encoder_channels[-1] + config.n_priors
    last = len(config.merge_channels) - 1
    for k, cout in enumerate(config.merge_channels):
        # the output layer feeds a beta-sharpened softmax; start it soft
        weight(f"merge.{k}.w", (cout, cin, 3, 3), gain=MERGE_OUT_GAIN if k == last else RELU_GAIN)
        zeros(f"merge.{k}.b", cout)
        cin = cout

    k_max, hid = config.k_max, config.selector_hidden
    weight("sel.mlp1.w", (hid, k_max))
    zeros("sel.mlp1.b", hid)
    weight("sel.mlp2.w", (hid, k_max))
    zeros("sel.mlp2.b", hid)
    weight("sel.mlp3a.w", (hid, 2 * hid))
    zeros("sel.mlp3a.b", hid)
    weight("sel.mlp3b.w", (k_max, hid), gain=1.0)
    zeros("sel.mlp3b.b", k_max)

    c_lat, dh = config.encoder_channels[-1], config.domain_hidden
    weight("dom.fc1.w", (dh, c_lat))
    zeros("dom.fc1.b", dh)
    weight("dom.fc2.w", (1, dh), gain=1.0)
    zeros("dom.fc2.b", 1)

    for name, tensor in t.items():
        tensor.name = name
    return ModelParams(config, t)


# ---------------------------------------------------------------------------
# prior maps


def _gaussian_maps(mu: Tensor, sigma: Tensor, h: int, w: int) -> Tensor:
    xs = (np.arange(w) / w).astype(mu.dtype)
    ys = (np.arange(h) / h).astype(mu.dtype)
    mx, my = mu.data[:, 0, None, None], mu.data[:, 1, None, None]
    sx, sy = sigma.data[:, 0, None, None], sigma.data[:, 1, None, None]
    dx = xs[None, None, :] - mx
    dy = ys[None, :, None] - my
    f = np.exp(-dx ** 2 / (2 * sx ** 2) - dy ** 2 / (2 * sy ** 2)) / (2 * np.pi * sx * sy)
    f = f.astype(mu.dtype)

    def bwd(g):
        gf = g * f
        d_mu = np.stack([(gf * dx / sx ** 2).sum(axis=(1, 2)), (gf * dy / sy ** 2).sum(axis=(1, 2))], axis=1)
        d_sigma = np.stack([(gf * (dx ** 2 / sx ** 3 - 1 / sx)).sum(axis=(1, 2)),
                            (gf * (dy ** 2 / sy ** 3 - 1 / sy)).sum(axis=(1, 2))], axis=1)
        return d_mu, d_sigma

    return ad.apply_op("gaussian_maps", (mu, sigma), f, bwd)


def render_prior_maps(bank: PriorMapBank, h: int, w: int) -> Tensor:
    """Evaluate each 2-D Gaussian density on the ``(j/h, i/w)`` grid -> (N, h, w)."""
    if h < 1 or w < 1:
        raise ValueError(f"grid must be at least 1x1, got {h}x{w}")
    return _gaussian_maps(ad.sigmoid(bank.mu_raw), ad.softplus(bank.sigma_raw), h, w)


# ---------------------------------------------------------------------------
# network stages


def _as_batch(x) -> tuple[Tensor, bool]:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    if t.ndim == 3:
        return ad.reshape(t, (1,) + t.shape), False
    if t.ndim == 4:
        return t, True
    raise ValueError(f"expected (C,H,W) or (N,C,H,W), got shape {t.shape}")


def encode(image, params: ModelParams) -> Tensor:
    """Stack of depthwise-separable blocks on [-1, 1]-scaled pixels; (C, H/8, W/8) out."""
    x, batched = _as_batch(image)
    cfg = params.config
    s = cfg.total_stride
    if x.shape[-2] % s or x.shape[-1] % s:
        raise ValueError(f"input size {x.shape[-2]}x{x.shape[-1]} is not divisible by {s}")
    if x.shape[1] != cfg.in_channels:
        raise ValueError(f"expected {cfg.in_channels} input channels, got {x.shape[1]}")
    x = ad.add(ad.mul(x, 2.0), -1.0)  # [0, 1] pixels -> [-1, 1]
    for k, stride in enumerate(cfg.encoder_strides):
        x = ad.relu(ad.depthwise_conv2d(x, params[f"enc.{k}.dw"], params[f"enc.{k}.dw_b"], stride=stride, padding=1))
        x = ad.relu(ad.conv2d(x, params[f"enc.{k}.pw"], params[f"enc.{k}.pw_b"]))
    return x if batched else ad.reshape(x, x.shape[1:])


def merge(features: Tensor, priors: Tensor, params: ModelParams) -> Tensor:
    """Concatenate features with prior maps, then 8 relu 3x3 convs down to K maps."""
    x, batched = _as_batch(features)
    if priors.shape[-2:] != x.shape[-2:]:
        raise ValueError(f"features {x.shape[-2:]} and priors {priors.shape[-2:]} differ spatially")
    x = ad.concat([x, ad.tile_batch(priors, x.shape[0])], axis=1)
    for k in range(len(params.config.merge_channels)):
        x = ad.relu(ad.conv2d(x, params[f"merge.{k}.w"], params[f"merge.{k}.b"], padding=1))
    return x if batched else ad.reshape(x, x.shape[1:])


def soft_argmax(maps: Tensor, beta: float) -> Tensor:
    """Expected ``(x, y)`` of each map under its beta-softmax -> (..., 2)."""
    if not isinstance(maps, Tensor):
        maps = Tensor(np.asarray(maps, dtype=np.float32))
    return ad.spatial_expectation(ad.softmax2d(maps, beta))


def binarize(v: np.ndarray) -> np.ndarray:
    """``v > mean(v)`` per row; an all-false row keeps only its first argmax."""
    v = np.asarray(v)
    squeeze = v.ndim == 1
    v2 = np.atleast_2d(v)
    mask = v2 > v2.mean(axis=-1, keepdims=True)
    empty = ~mask.any(axis=-1)
    if empty.any():
        rows = np.flatnonzero(empty)
        mask[rows, v2[rows].argmax(axis=-1)] = True
    return mask[0] if squeeze else mask


def selector_probs(merged: Tensor, params: ModelParams) -> Tensor:
    x, batched = _as_batch(merged)
    p = params
    a = ad.relu(ad.linear(ad.global_pool("max", x), p["sel.mlp1.w"], p["sel.mlp1.b"]))
    b = ad.relu(ad.linear(ad.global_pool("avg", x), p["sel.mlp2.w"], p["sel.mlp2.b"]))
    h = ad.relu(ad.linear(ad.concat([a, b], axis=-1), p["sel.mlp3a.w"], p["sel.mlp3a.b"]))
    v = ad.sigmoid(ad.linear(h, p["sel.mlp3b.w"], p["sel.mlp3b.b"]))
    return v if batched else ad.reshape(v, v.shape[1:])


def select_fixations(merged: Tensor, params: ModelParams) -> tuple[Tensor, np.ndarray]:
    """Selection probabilities ``v`` in (0, 1)^K and their mean-thresholded mask."""
    v = selector_probs(merged, params)
    return v, binarize(v.data)


@dataclass
class Decoded:
    coords: Tensor          # (N, K, 2)
    v: Tensor               # (N, K)
    mask: np.ndarray        # (N, K) bool

    def scanpaths(self) -> list[ScanPath]:
        out = []
        for c, m in zip(self.coords.data, self.mask):
            idx = np.flatnonzero(m)
            out.append(ScanPath(c[idx].astype(np.float64), tuple(int(i) for i in idx)))
        return out


def decode_batch(latent: Tensor, params: ModelParams) -> Decoded:
    x, _ = _as_batch(latent)
    h, w = x.shape[-2:]
    priors = render_prior_maps(params.priors, h, w)
    merged = merge(x, priors, params)
    v, mask = select_fixations(merged, params)
    coords = soft_argmax(ad.channel_scale(merged, v), params.config.beta)
    return Decoded(coords, v, mask)


def decode(latent, params: ModelParams):
    """Scanpath(s) for a latent (C,h,w) or batch (N,C,h,w), fixations in channel order."""
    t = latent if isinstance(latent, Tensor) else Tensor(np.asarray(latent, dtype=np.float32))
    paths = decode_batch(t, params).scanpaths()
    return paths if t.ndim == 4 else paths[0]


def sample_noise(rng: np.random.Generator, shape, kind: str) -> np.ndarray:
    if kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)
    if kind == "gaussian":
        return rng.standard_normal(size=shape).astype(np.float32)
    raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {kind!r}")


def predict_scanpath(image, params: ModelParams, rng=None, temperature: float | None = None,
                     noise_kind: str | None = None, n_samples: int | None = None):
    """Decode ``encoder(image) + T * L`` with ``L`` drawn from the noise kind.

    Returns one ScanPath, or a list of ``n_samples`` of them.  ``T = 0`` skips
    the noise entirely, so the result does not depend on ``rng``.
    """
    temperature = params.config.temperature if temperature is None else float(temperature)
    noise_kind = params.config.noise if noise_kind is None else noise_kind
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    if noise_kind not in NOISE_KINDS:
        raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {noise_kind!r}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    img = np.asarray(getattr(image, "data", image), dtype=np.float32)
    if img.ndim != 3:
        raise ValueError(f"predict_scanpath takes one (3,H,W) image, got shape {img.shape}")
    count = 1 if n_samples is None else int(n_samples)
    with ad.no_grad():
        feats = encode(img, params).data
        latent = np.broadcast_to(feats, (count,) + feats.shape)
        if temperature > 0:
            latent = latent + np.float32(temperature) * sample_noise(rng, latent.shape, noise_kind)
        paths = decode(Tensor(np.ascontiguousarray(latent, dtype=np.float32)), params)
    return paths[0] if n_samples is None else paths
