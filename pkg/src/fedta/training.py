"""Local optimization: AdamW with parameter groups, cosine schedule, BPTT loop.

Dynamics parameters (anything under a ``dyn.`` key) form their own AdamW
group with separate learning rate and weight decay; dense weights, batchnorm
affine parameters and the readout use the main group.  Complex tensors are
updated as independent real/imaginary parts through float views.
"""

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import energy
from .errors import NumericsError
from .network import (LIF, STANDARD, ModelParams, clone_model, is_dynamics_key,
                      loss_and_grad, replace_arrays, stack_batch, trainable_arrays)

ALPHA_CLAMP = 1e-4  # standard-LIF decay is kept in [ALPHA_CLAMP, 1 - ALPHA_CLAMP]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2
    batch_size: int = 32
    rounds: int = 10
    lr: float = 1e-2
    lr_ssm: float = 1e-3
    weight_decay: float = 1e-3
    weight_decay_ssm: float = 1e-3
    dropout: float = 0.1
    clip_norm: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step_count: int
    config: TrainConfig


def _float_view(a: np.ndarray) -> np.ndarray:
    """Real view of a tensor: complex arrays expose interleaved re/im parts."""
    if np.iscomplexobj(a):
        return a.view(np.float64)
    return a


def init_optimizer(params: Dict[str, np.ndarray], config: TrainConfig) -> OptimizerState:
    m = {k: np.zeros_like(_float_view(v)) for k, v in params.items()}
    v = {k: np.zeros_like(_float_view(p)) for k, p in params.items()}
    return OptimizerState(m=m, v=v, step_count=0, config=config)


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
               opt: OptimizerState, lr_scale: float = 1.0):
    """One AdamW update; returns (new params, new optimizer state).

    Decoupled decay: each tensor also shrinks by lr * wd * theta, with the
    (lr, wd) of its parameter group, both scaled by ``lr_scale``.
    """
    cfg = opt.config
    t = opt.step_count + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params = {}
    new_m = {}
    new_v = {}
    for name, theta in params.items():
        g = _float_view(np.asarray(grads[name]))
        th = _float_view(theta)
        m = cfg.beta1 * opt.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * opt.v[name] + (1.0 - cfg.beta2) * g * g
        if is_dynamics_key(name):
            lr, wd = cfg.lr_ssm, cfg.weight_decay_ssm
        else:
            lr, wd = cfg.lr, cfg.weight_decay
        lr = lr * lr_scale
        update = th - lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps) - lr * wd * th
        if np.iscomplexobj(theta):
            update = update.view(np.complex128)
        new_params[name] = update
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(m=new_m, v=new_v, step_count=t, config=cfg)


def cosine_lr(global_epoch: float, total_epochs: float, base_lr: float) -> float:
    """Cosine decay from base_lr (epoch 0) to 0 (epoch == total_epochs)."""
    if not 0 <= global_epoch <= total_epochs:
        raise ValueError("global_epoch out of schedule range")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * global_epoch / total_epochs))


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float):
    """Global-norm clip (complex parts count as two reals); returns the norm."""
    total = 0.0
    for g in grads.values():
        gv = _float_view(np.asarray(g))
        total += float(np.sum(gv * gv))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


@dataclass
class LocalTrainResult:
    model: ModelParams
    mean_loss: float
    spike_rates: list  # running mean per hidden layer over the whole round
    op_count: "energy.OpCount"
    n_batches: int


def train_local(model: ModelParams, shard, config: TrainConfig,
                rng: np.random.Generator, epoch_offset: int = 0) -> LocalTrainResult:
    """Run ``config.epochs`` of mini-batch AdamW on one client's shard.

    The optimizer state is created fresh here (it is never communicated);
    the incoming model is cloned, so callers keep the broadcast parameters.
    The cosine schedule is indexed by ``epoch_offset + local epoch`` out of
    ``rounds * epochs`` total, i.e. it spans the whole federated horizon.
    """
    if not shard:
        raise ValueError("empty shard")
    model = clone_model(model)
    params = trainable_arrays(model)
    opt = init_optimizer(params, config)
    total_epochs = max(config.rounds * config.epochs, 1)
    losses = []
    ops = energy.OpCount(0, 0)
    rate_sums = None
    n_batches = 0
    for epoch in range(config.epochs):
        lr_scale = cosine_lr(min(epoch_offset + epoch, total_epochs), total_epochs, 1.0)
        order = rng.permutation(len(shard))
        for start in range(0, len(shard), config.batch_size):
            batch = [shard[i] for i in order[start:start + config.batch_size]]
            x, labels = stack_batch(batch)
            loss, _, grads, trace = loss_and_grad(x, labels, model,
                                                  dropout=config.dropout, rng=rng)
            for name, g in grads.items():
                if not np.all(np.isfinite(_float_view(np.asarray(g)))):
                    raise NumericsError(f"non-finite gradient for {name}")
            grads, _ = clip_gradients(grads, config.clip_norm)
            params, opt = adamw_step(params, grads, opt, lr_scale)
            if model.family == LIF and model.variant == STANDARD:
                for name in list(params):
                    if name.endswith("dyn.alpha"):
                        params[name] = np.clip(params[name], ALPHA_CLAMP, 1.0 - ALPHA_CLAMP)
            model = replace_arrays(model, params)
            losses.append(loss)
            ops = ops + energy.count_forward_pass(model, trace)
            if trace.spike_rates:
                if rate_sums is None:
                    rate_sums = np.zeros(len(trace.spike_rates))
                rate_sums += np.asarray(trace.spike_rates)
            n_batches += 1
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    rates = list(rate_sums / n_batches) if rate_sums is not None else []
    return LocalTrainResult(model=model, mean_loss=mean_loss, spike_rates=rates,
                            op_count=ops, n_batches=n_batches)
