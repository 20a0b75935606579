"""Joint training of classification loss and latent rate, and finalization.

The objective per step is ``mean CE (nats) + lam * rate (bits)`` where the rate
is the noisy-relaxation bit count of every coded latent under its group's
density model. Two Adam optimizers run side by side: one on latents and
decoder parameters (total loss), one on density parameters (rate only, so
they keep fitting the latents even at ``lam = 0``).
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .container import ModelArtifacts
from .decoders import (DecoderParameters, LatentTensor, decode_latent, encode_rows, init_decoder,
                       rows_from_weight)
from .density import DensityModel, extract_pmf_table, nll_noisy
from .models import ModelSpec, glorot_std, init_parameters, predict
from .optim import EMA, OptimizerState, adam_step
from .quantizer import add_uniform_noise, draw_noise, round_half_away

LN2 = math.log(2.0)


@dataclass
class LossConfig:
    lam: float = 0.0
    batch_size: int = 128
    steps: int = 20000
    lr: float = 1e-3
    density_lr: float = 1e-4
    ema_decay: float = 0.999
    ema_warmup: bool = True
    seed: int = 0
    bias_scale: float = 0.01
    adam_eps: float = 1e-8
    loss_scale: float = 1.0        # multiplies every gradient; Adam updates should not notice
    relative_scale_lr: bool = True  # decoder scales/transforms step by lr * their initial size

    def __post_init__(self):
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite number >= 0, got {self.lam}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must be in [0, 1)")
        if not (self.loss_scale > 0 and math.isfinite(self.loss_scale)):
            raise ValueError("loss_scale must be a finite number > 0")


@dataclass
class TrainState:
    spec: ModelSpec
    config: LossConfig
    latents: dict                  # slot -> LatentTensor (coded groups)
    decoders: dict                 # group -> DecoderParameters
    densities: dict                # group -> DensityModel
    raw: dict                      # slot -> Tensor (uncoded groups)
    task_opt: OptimizerState
    density_opt: OptimizerState
    ema: EMA
    step: int = 0
    task_lr_factors: list = field(default_factory=list)

    def task_parameters(self) -> list[ad.Tensor]:
        params = [lt.surrogate for lt in self.latents.values()]
        for psi in self.decoders.values():
            params += psi.parameters()
        return params + list(self.raw.values())

    def density_parameters(self) -> list[ad.Tensor]:
        return [p for d in self.densities.values() for p in d.parameters()]


def _group_init_std(spec: ModelSpec, group: str, bias_scale: float) -> float:
    slots = [spec.slot(s) for s in spec.group(group).slots]
    weights = [s for s in slots if s.kind != "bias"]
    if not weights:
        return bias_scale
    n = sum(s.shape.size for s in weights)
    return math.sqrt(sum(s.shape.size * glorot_std(s.shape) ** 2 for s in weights) / n)


def init_state(spec: ModelSpec, config: LossConfig) -> TrainState:
    """Latents that decode (before rounding) to a Glorot initialization."""
    seed = config.seed
    with ad.precision("float32"):
        theta = init_parameters(spec, seed)
        latents, decoders, densities, raw = {}, {}, {}, {}
        factors = {}
        for gi, g in enumerate(spec.groups):
            if not g.coded:
                for s in g.slots:
                    raw[s] = ad.Tensor(theta[s].copy(), requires_grad=True, name=s)
                continue
            std = _group_init_std(spec, g.name, config.bias_scale)
            psi = init_decoder(g.decoder, g.ell, std, spec.kernel_hw(g.name), seed=seed)
            decoders[g.name] = psi
            factors[g.name] = std if config.relative_scale_lr else 1.0
            densities[g.name] = DensityModel(g.ell, seed=seed * 1000 + gi, dtype=np.float32)
            for s in g.slots:
                slot = spec.slot(s)
                phi = encode_rows(rows_from_weight(theta[s], slot.kind, g.ell), psi).astype(np.float32)
                latents[s] = LatentTensor(s, g.name, slot.kind, slot.shape.dims, g.ell,
                                          surrogate=ad.Tensor(phi, requires_grad=True, name=s))
    task = [lt.surrogate for lt in latents.values()]
    lr_factors = [1.0] * len(task)
    for g, psi in decoders.items():
        task += psi.parameters()
        lr_factors += [1.0, factors[g]]
    task += list(raw.values())
    lr_factors += [1.0] * len(raw)
    dens = [p for d in densities.values() for p in d.parameters()]
    return TrainState(spec, config, latents, decoders, densities, raw,
                      OptimizerState.zeros_like([p.data for p in task]),
                      OptimizerState.zeros_like([p.data for p in dens]),
                      EMA([p.data for p in task], config.ema_decay, config.ema_warmup),
                      task_lr_factors=lr_factors)


def decoded_parameters(state: TrainState) -> dict[str, ad.Tensor]:
    """Parameters from straight-through rounded latents (differentiable)."""
    out = {}
    for s, lt in state.latents.items():
        out[s] = decode_latent(lt, state.decoders[lt.group])
    out.update(state.raw)
    return out


def rate_bits(state: TrainState, step: int | None = None) -> ad.Tensor:
    """Noisy-relaxation bit count of every coded latent; noise is fixed by (seed, step, slot)."""
    step = state.step if step is None else step
    total = None
    for k, (s, lt) in enumerate(state.latents.items()):
        noise = draw_noise(lt.surrogate.shape, state.config.seed, step, stream=k, dtype=np.float32)
        bits = nll_noisy(state.densities[lt.group], add_uniform_noise(lt.surrogate, noise))
        total = bits if total is None else ad.add(total, bits)
    return total if total is not None else ad.constant(0.0)


def total_loss(batch, state: TrainState, lam: float | None = None):
    """Return ``(loss, diagnostics)``; diagnostics carry both terms as tensors and floats."""
    lam = state.config.lam if lam is None else lam
    x, y = batch
    logits = predict(state.spec, decoded_parameters(state), x)
    ce = ad.softmax_cross_entropy(logits, y)
    rate = rate_bits(state)
    loss = ad.add(ce, ad.scale(rate, lam))
    value = float(loss.data)
    if not math.isfinite(value):
        raise ad.NonFiniteError(f"non-finite loss at step {state.step} (ce={float(ce.data)}, "
                                f"rate={float(rate.data)})")
    diag = {
        "ce": ce, "rate": rate, "logits": logits,
        "ce_bits": float(ce.data) / LN2,
        "rate_bits": float(rate.data),
        "accuracy": float(np.mean(logits.data.argmax(axis=1) == np.asarray(y))),
    }
    return loss, diag


def train_step(state: TrainState, batch) -> dict:
    """One update of both optimizers and the EMA; returns the step diagnostics."""
    cfg = state.config
    with ad.precision("float32"):
        _, diag = total_loss(batch, state)
        task = state.task_parameters()
        dens = state.density_parameters()
        g_task = ad.grad(diag["ce"], task, seed=cfg.loss_scale)
        surrogates = [lt.surrogate for lt in state.latents.values()]
        g_rate = ad.grad(diag["rate"], surrogates + dens, seed=cfg.loss_scale)
    if cfg.lam:
        lam = np.float32(cfg.lam)
        for i in range(len(surrogates)):
            g_task[i] = g_task[i] + lam * g_rate[i]
    lrs = [cfg.lr * f for f in state.task_lr_factors] if state.task_lr_factors else cfg.lr
    adam_step(state.task_opt, [p.data for p in task], g_task, lrs, eps=cfg.adam_eps)
    if dens:
        adam_step(state.density_opt, [p.data for p in dens], g_rate[len(surrogates):], cfg.density_lr,
                  eps=cfg.adam_eps)
    ema_update(state)
    state.step += 1
    return diag


def ema_update(state: TrainState) -> TrainState:
    state.ema.update()
    return state


def finalize(state: TrainState) -> ModelArtifacts:
    """Integer latents, frequency tables and decoder parameters from the EMA weights.

    The training state itself is left untouched.
    """
    spec = state.spec
    shadow = iter(state.ema.shadow)
    ints = {s: round_half_away(next(shadow).astype(np.float64)).astype(np.int64) for s in state.latents}
    psi = {}
    for g, p in state.decoders.items():
        vals = [ad.Tensor(next(shadow).astype(np.float32).copy()) for _ in p.parameters()]
        if p.mode == "affine":
            psi[g] = DecoderParameters(p.mode, vals[0], transform=vals[1])
        else:
            psi[g] = DecoderParameters(p.mode, vals[0], scale=vals[1], basis=p.basis, basis_name=p.basis_name)
    raw = {s: next(shadow).astype(np.float32).copy() for s in state.raw}
    art = ModelArtifacts(spec, ints, psi, {}, raw)
    for g in spec.groups:
        if g.coded:
            symbols = art.group_symbols(g.name)
            art.tables[g.name] = [extract_pmf_table(state.densities[g.name], c, symbols[:, c])
                                  for c in range(g.ell)]
    return art


def error_count(logits_fn, images, labels, batch: int = 2000) -> int:
    wrong = 0
    for i in range(0, len(labels), batch):
        logits = logits_fn(images[i:i + batch])
        wrong += int(np.sum(np.asarray(logits).argmax(axis=1) != labels[i:i + batch]))
    return wrong


def evaluate(artifacts: ModelArtifacts, dataset) -> float:
    """Top-1 error rate of decoded artifacts on ``dataset``."""
    return error_count(artifacts.logits, dataset.images, dataset.labels) / len(dataset.labels)


@dataclass
class TrainResult:
    state: TrainState
    artifacts: ModelArtifacts
    seconds: float
    history: list = field(default_factory=list)


def batches(n: int, batch_size: int, seed: int):
    """Endless shuffled index batches, reshuffled every epoch."""
    rng = np.random.default_rng([int(seed), 0xBA7C])
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield perm[i:i + batch_size]


def train(spec: ModelSpec, dataset, config: LossConfig, metrics_path=None, log_every: int = 100,
          progress=None) -> TrainResult:
    """Run ``config.steps`` training steps on ``dataset`` and finalize.

    Metrics lines ``{"step", "ce_bits", "rate_bits", "accuracy"}`` are written
    every ``log_every`` steps (and at the last step) when ``metrics_path`` is set.
    """
    state = init_state(spec, config)
    images = dataset.images.astype(np.float32, copy=False)
    labels = dataset.labels
    it = batches(len(labels), config.batch_size, config.seed)
    history = []
    out = open(metrics_path, "w") if metrics_path else None
    t0 = time.perf_counter()
    try:
        for _ in range(config.steps):
            idx = next(it)
            diag = train_step(state, (images[idx], labels[idx]))
            if state.step % log_every == 0 or state.step == config.steps:
                rec = {"step": state.step, "ce_bits": diag["ce_bits"], "rate_bits": diag["rate_bits"],
                       "accuracy": diag["accuracy"]}
                history.append(rec)
                if out:
                    out.write(json.dumps(rec) + "\n")
                    out.flush()
                if progress:
                    progress(rec)
    finally:
        if out:
            out.close()
    artifacts = finalize(state)
    return TrainResult(state, artifacts, time.perf_counter() - t0, history)


def config_dict(config: LossConfig) -> dict:
    return asdict(config)
