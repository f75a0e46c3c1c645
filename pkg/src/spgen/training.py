"""Supervised scanpath training and gradient-reversal domain adaptation."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .autodiff import OptimState, Tape, Tensor
from .data import Sample
from .model import ModelConfig, ModelParams, decode_batch, encode, init_params
from .scanpath import ScanPath, as_fixations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    epochs: int = 70
    batch_size: int = 8
    seed: int = 0
    length_weight: float = 0.001
    da_weight: float = 1.0
    da_enabled: bool = False
    use_grl: bool = True
    max_steps: int | None = None
    probe_every: int = 0
    domain_lr_scale: float = 1.0  # the adversary must keep pace with the encoder

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.length_weight < 0 or self.da_weight < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.domain_lr_scale >= 0:
            raise ValueError(f"domain_lr_scale must be >= 0, got {self.domain_lr_scale}")


@dataclass
class EpochRow:
    epoch: int
    scanpath_loss: float
    domain_loss: float
    probe_acc: float
    seconds: float


@dataclass
class TrainReport:
    rows: list[EpochRow] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    def write_csv(self, path, timing: bool = False) -> None:
        """One row per epoch; wall-clock seconds only with ``timing`` so the file stays reproducible."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "scanpath_loss", "domain_loss", "probe_acc"] + (["seconds"] if timing else []))
            for r in self.rows:
                row = [r.epoch, _fmt(r.scanpath_loss), _fmt(r.domain_loss), _fmt(r.probe_acc)]
                w.writerow(row + ([f"{r.seconds:.3f}"] if timing else []))


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(float(x))


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; carries the last finite parameters."""

    def __init__(self, message: str, last_good: ModelParams, report: TrainReport):
        super().__init__(message)
        self.last_good = last_good
        self.report = report


# ---------------------------------------------------------------------------
# losses


def _entropy(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 1e-12, 1 - 1e-12)
    return -(t * np.log(t) + (1 - t) * np.log1p(-t))


def length_term(pred_len: int, gt_len: int, weight: float = 0.001) -> float:
    """``weight * sqrt(|pred_len^2 - gt_len^2|)``."""
    return weight * math.sqrt(abs(pred_len ** 2 - gt_len ** 2))


def scanpath_loss(pred, gt, length_weight: float = 0.001, entropy_offset: bool = True):
    """BCE between aligned coordinates plus the length-mismatch term.

    The first ``min(len)`` fixations are compared as a flat (x, y, x, y, ...)
    vector.  With ``entropy_offset`` the target's own entropy is subtracted, so
    a perfect prediction scores 0 for any target (gradients are unchanged).
    ``pred`` may be a ScanPath/array or a (n, 2) Tensor; a Tensor gives a
    differentiable Tensor back.
    """
    gt_fix = as_fixations(gt)
    if len(gt_fix) == 0:
        raise ValueError("empty ground-truth scanpath")
    is_tensor = isinstance(pred, Tensor)
    n_pred = pred.shape[0] if is_tensor else len(as_fixations(pred))
    if n_pred == 0:
        raise ValueError("empty predicted scanpath")
    k = min(n_pred, len(gt_fix))
    target = gt_fix[:k].reshape(-1)
    extra = length_term(n_pred, len(gt_fix), length_weight)
    if entropy_offset:
        extra -= float(_entropy(target).mean())
    if is_tensor:
        head = ad.take(pred, np.arange(2 * k))
        return ad.add(ad.binary_cross_entropy(head, target), extra)
    p = np.clip(as_fixations(pred)[:k].reshape(-1), 1e-7, 1 - 1e-7)
    bce = -(target * np.log(p) + (1 - target) * np.log1p(-p)).mean()
    return float(bce + extra)


def domain_loss(logit, domain_label):
    """Stable BCE of a raw domain logit against source=0 / target=1."""
    if isinstance(logit, Tensor):
        return ad.bce_with_logits(logit, np.asarray(domain_label))
    z, y = float(logit), float(domain_label)
    return max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))


def batch_scanpath_loss(coords: Tensor, mask: np.ndarray, gts: list[np.ndarray],
                        length_weight: float = 0.001, entropy_offset: bool = True) -> Tensor:
    """Mean per-sample scanpath loss over a decoded batch.

    ``coords`` is (N, K, 2); each sample's predicted scanpath is its masked
    channels in channel order.
    """
    n, k_max, _ = coords.shape
    flat_idx, targets, weights = [], [], []
    const = 0.0
    for b in range(n):
        chans = np.flatnonzero(mask[b])
        gt = gts[b]
        k = min(len(chans), len(gt))
        idx = (b * k_max + chans[:k])[:, None] * 2 + np.arange(2)[None, :]
        t = gt[:k].reshape(-1)
        flat_idx.append(idx.reshape(-1))
        targets.append(t)
        weights.append(np.full(2 * k, 1.0 / (2 * k * n)))
        const += length_term(len(chans), len(gt), length_weight) / n
        if entropy_offset:
            const -= float(_entropy(t).mean()) / n
    picked = ad.take(coords, np.concatenate(flat_idx))
    bce = ad.binary_cross_entropy(picked, np.concatenate(targets), np.concatenate(weights))
    return ad.add(bce, const)


# ---------------------------------------------------------------------------
# domain classifier


def domain_logits(features: Tensor, params: ModelParams, use_grl: bool = True) -> Tensor:
    """GRL -> global average pool -> MLP -> one logit per image."""
    x = ad.gradient_reverse(features) if use_grl else features
    pooled = ad.global_pool("avg", x)
    h = ad.relu(ad.linear(pooled, params["dom.fc1.w"], params["dom.fc1.b"]))
    return ad.reshape(ad.linear(h, params["dom.fc2.w"], params["dom.fc2.b"]), (x.shape[0],))


# ---------------------------------------------------------------------------
# training loops


def _stack(samples: list[Sample], idx) -> np.ndarray:
    return np.stack([samples[i].image for i in idx]).astype(np.float32)


def _check_dataset(dataset: list[Sample], labelled: bool = True) -> None:
    if not dataset:
        raise ValueError("dataset is empty")
    if labelled:
        for s in dataset:
            if not s.scanpaths:
                raise ValueError(f"sample {s.id or '?'} has no ground-truth scanpath")


def _snapshot(params: ModelParams) -> ModelParams:
    return params.copy()


def _run(source: list[Sample], config: TrainConfig, params: ModelParams, target: list[Sample] | None,
         model_config: ModelConfig | None) -> tuple[ModelParams, TrainReport]:
    rng = np.random.default_rng(config.seed)
    rng_target = np.random.default_rng([config.seed, 1])
    state, dom_state = OptimState(), OptimState()
    report = TrainReport()
    n = len(source)
    use_domain = target is not None
    step = 0
    last_good = _snapshot(params)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        choice = [int(rng.integers(len(source[i].scanpaths))) for i in range(n)]
        sp_losses, d_losses = [], []
        for start in range(0, n, config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                break
            idx = order[start:start + config.batch_size]
            images = Tensor(_stack(source, idx))
            gts = [source[i].scanpaths[choice[i]].fixations for i in idx]
            params.zero_grad()
            with Tape(), np.errstate(over="ignore", invalid="ignore"):
                feats = encode(images, params)
                if not np.all(np.isfinite(feats.data)):
                    raise TrainingDiverged(f"non-finite activations at step {step}", last_good, report)
                dec = decode_batch(feats, params)
                loss = batch_scanpath_loss(dec.coords, dec.mask, gts, config.length_weight)
                sp_value = loss.item()
                total = loss
                if use_domain:
                    t_idx = rng_target.choice(len(target), size=len(idx), replace=len(target) < len(idx))
                    t_feats = encode(Tensor(_stack(target, t_idx)), params)
                    mixed = ad.concat([feats, t_feats], axis=0)
                    labels = np.concatenate([np.zeros(len(idx)), np.ones(len(t_idx))])
                    d_loss = ad.bce_with_logits(domain_logits(mixed, params, config.use_grl), labels)
                    d_losses.append(d_loss.item())
                    total = ad.add(loss, ad.mul(d_loss, config.da_weight))
                if not math.isfinite(total.item()):
                    raise TrainingDiverged(f"non-finite loss at step {step}", last_good, report)
                ad.backward(total)
            main = {k: t for k, t in params.items() if not k.startswith("dom.")}
            dom = {k: t for k, t in params.items() if k.startswith("dom.")}
            try:
                ad.adam_step(main, {k: t.grad for k, t in main.items()}, state, config.lr)
                if use_domain:
                    ad.adam_step(dom, {k: t.grad for k, t in dom.items()}, dom_state,
                                 config.lr * config.domain_lr_scale)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), last_good, report) from exc
            last_good = _snapshot(params)
            sp_losses.append(sp_value)
            report.step_losses.append(sp_value)
            step += 1
        if not sp_losses:
            break
        probe = float("nan")
        if use_domain and config.probe_every and epoch % config.probe_every == 0:
            probe = probe_accuracy(params, source, target, seed=config.seed)
        report.rows.append(EpochRow(epoch, float(np.mean(sp_losses)),
                                    float(np.mean(d_losses)) if d_losses else float("nan"),
                                    probe, time.perf_counter() - t0))
        log.info("epoch %d loss %.5f", epoch, report.rows[-1].scanpath_loss)
    params.zero_grad()
    return params, report


def train(dataset: list[Sample], config: TrainConfig = TrainConfig(), init: ModelParams | None = None,
          model_config: ModelConfig | None = None) -> tuple[ModelParams, TrainReport]:
    """Adam on the scanpath loss; deterministic for a fixed seed and dataset.

    Starts from ``init`` (copied) or a fresh Xavier initialisation.
    """
    _check_dataset(dataset)
    params = init.copy() if init is not None else init_params(model_config or ModelConfig(), config.seed)
    return _run(dataset, config, params, None, model_config)


def adapt(source: list[Sample], target: list[Sample], config: TrainConfig = TrainConfig(),
          init: ModelParams | None = None, model_config: ModelConfig | None = None
          ) -> tuple[ModelParams, TrainReport]:
    """Scanpath loss on source batches plus ``da_weight`` x domain loss.

    The domain branch sees source and target features through the gradient
    reversal layer (unless ``config.use_grl`` is off, the ablation).  Target
    samples only ever enter the domain loss.
    """
    _check_dataset(source)
    if not target:
        raise ValueError("target dataset is empty")
    params = init.copy() if init is not None else init_params(model_config or ModelConfig(), config.seed)
    return _run(source, replace(config, da_enabled=True), params, target, model_config)


# ---------------------------------------------------------------------------
# frozen-feature probe


def pooled_features(params: ModelParams, images: np.ndarray, batch: int = 64) -> np.ndarray:
    out = []
    with ad.no_grad():
        for s in range(0, len(images), batch):
            f = encode(Tensor(images[s:s + batch].astype(np.float32)), params)
            out.append(ad.global_pool("avg", f).data.astype(np.float64))
    return np.concatenate(out)


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = 1e-2) -> np.ndarray:
    """L2-regularised logistic regression; returns weights with bias last."""
    xb = np.hstack([x, np.ones((len(x), 1))])

    def f(w):
        z = xb @ w
        loss = np.mean(np.logaddexp(0, z) - y * z) + 0.5 * l2 * w[:-1] @ w[:-1]
        p = 1 / (1 + np.exp(-z))
        g = xb.T @ (p - y) / len(y)
        g[:-1] += l2 * w[:-1]
        return loss, g

    res = minimize(f, np.zeros(xb.shape[1]), jac=True, method="L-BFGS-B")
    return res.x


def probe_accuracy(params: ModelParams, source: list[Sample], target: list[Sample], seed: int = 0) -> float:
    """Held-out accuracy of a fresh logistic probe on frozen pooled features.

    Each domain is split in half; the probe trains on one half of both and is
    scored on the other.  Features are standardized with training statistics.
    """
    rng = np.random.default_rng([seed, 2])
    xs = pooled_features(params, np.stack([s.image for s in source]))
    xt = pooled_features(params, np.stack([s.image for s in target]))
    x = np.vstack([xs, xt])
    y = np.concatenate([np.zeros(len(xs)), np.ones(len(xt))])
    train_idx, test_idx = [], []
    for label in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == label))
        half = len(idx) // 2
        train_idx.extend(idx[:half])
        test_idx.extend(idx[half:])
    train_idx, test_idx = np.array(train_idx), np.array(test_idx)
    mu = x[train_idx].mean(axis=0)
    sd = x[train_idx].std(axis=0) + 1e-8
    z = (x - mu) / sd
    w = fit_logistic(z[train_idx], y[train_idx])
    pred = (np.hstack([z[test_idx], np.ones((len(test_idx), 1))]) @ w) > 0
    return float((pred == y[test_idx]).mean())
