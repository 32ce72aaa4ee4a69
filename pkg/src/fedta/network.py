"""Model assembly: dense synapses + batch normalization + neuron recurrence.

A model is a stack of hidden layers, each ``dense -> batchnorm -> neuron
dynamics (-> dropout in training)``, followed by a linear readout whose
output is averaged over time to produce class scores.  All hidden layers
share one neuron family and parameterization.

The reverse-mode pass is hand-written: dense and batchnorm gradients in
numpy, the time recurrences through :mod:`fedta.kernels`, and the delta
parameterizations chained through their exp-log maps.  Complex gradients are
carriers (real part = gradient wrt real part, imag wrt imag).
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from . import kernels
from .data import FrameSequence
from .errors import NumericsError
from .neurons import (ALPHA_INIT_HIGH, ALPHA_INIT_LOW, DELTA, DELTA_LOG_INIT_HIGH,
                      DELTA_LOG_INIT_LOW, GAMMA_LOG_INIT_HIGH, GAMMA_LOG_INIT_LOW,
                      LIF, SSM, STANDARD, SURROGATE_WIDTH, THRESHOLD)

TRAIN = "train"
EVAL = "eval"

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


@dataclass
class LifDynamics:
    """Stacked LIF parameters for the ``width`` neurons of one layer."""

    variant: str
    alpha: Optional[np.ndarray] = None  # (h,), standard
    delta_log: Optional[np.ndarray] = None  # (h,), delta
    gamma_log: Optional[np.ndarray] = None  # (h,), delta
    input_gain: Optional[np.ndarray] = None  # (h,), set only by gain rescaling
    threshold: float = THRESHOLD

    @property
    def width(self) -> int:
        arr = self.alpha if self.variant == STANDARD else self.delta_log
        return arr.shape[0]


@dataclass
class SsmDynamics:
    """Stacked diagonal-SSM parameters; each neuron has scalar input/output
    and ``n_states`` complex states, so B and C flatten to (width, n_states)."""

    variant: str
    B: np.ndarray = None  # (h, N) complex
    C: np.ndarray = None  # (h, N) complex; C_tilde for the delta variant
    A: Optional[np.ndarray] = None  # (h, N) complex, standard
    A_re_log: Optional[np.ndarray] = None  # (h, N), delta
    A_im: Optional[np.ndarray] = None  # (h, N), delta
    delta_log: Optional[np.ndarray] = None  # (h,), delta

    @property
    def width(self) -> int:
        return self.B.shape[0]

    @property
    def n_states(self) -> int:
        return self.B.shape[1]


@dataclass
class LayerParams:
    W: np.ndarray  # (fan_in, width)
    dyn: object  # LifDynamics | SsmDynamics
    bn: BatchNormParams


@dataclass
class ModelParams:
    layers: List[LayerParams]
    readout_W: np.ndarray  # (width, c_out)
    family: str
    variant: str

    @property
    def c_in(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def c_out(self) -> int:
        return self.readout_W.shape[1]

    @property
    def hidden_sizes(self) -> List[int]:
        return [layer.W.shape[1] for layer in self.layers]

    @property
    def n_states(self) -> int:
        return self.layers[0].dyn.n_states if self.family == SSM else 0


@dataclass(frozen=True)
class ForwardTrace:
    """Per-forward bookkeeping consumed by the energy accounting."""

    spike_rates: List[float]  # one entry per hidden layer; empty for SSM nets
    batch_size: int
    timesteps: int


def init_model(family: str, variant: str, c_in: int, c_out: int,
               hidden_sizes: List[int], n_states: int,
               rng: np.random.Generator) -> ModelParams:
    """Random model; draw order is fixed (per layer: W, dynamics, batchnorm
    implicit; finally the readout) so a seed pins the whole model."""
    layers = []
    fan_in = c_in
    for width in hidden_sizes:
        bound = 1.0 / math.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_in, width))
        if family == LIF:
            if variant == STANDARD:
                dyn = LifDynamics(variant=STANDARD,
                                  alpha=rng.uniform(ALPHA_INIT_LOW, ALPHA_INIT_HIGH, width))
            else:
                dyn = LifDynamics(variant=DELTA,
                                  delta_log=np.zeros(width),
                                  gamma_log=rng.uniform(GAMMA_LOG_INIT_LOW,
                                                        GAMMA_LOG_INIT_HIGH, width))
        elif family == SSM:
            a_re_log = np.full((width, n_states), math.log(0.5))
            a_im = np.tile(math.pi * np.arange(n_states, dtype=np.float64), (width, 1))
            delta_log = rng.uniform(DELTA_LOG_INIT_LOW, DELTA_LOG_INIT_HIGH, width)
            scale = 1.0 / math.sqrt(2.0 * n_states)
            B = (rng.standard_normal((width, n_states))
                 + 1j * rng.standard_normal((width, n_states))) * scale
            C = (rng.standard_normal((width, n_states))
                 + 1j * rng.standard_normal((width, n_states))) * scale
            if variant == DELTA:
                dyn = SsmDynamics(variant=DELTA, B=B, C=C, A_re_log=a_re_log,
                                  A_im=a_im, delta_log=delta_log)
            else:
                a_c = np.exp(a_re_log) - 1j * a_im
                A = np.exp(-np.exp(delta_log)[:, None] * a_c)
                dyn = SsmDynamics(variant=STANDARD, B=B, C=C, A=A)
        else:
            raise ValueError(f"unknown family {family!r}")
        bn = BatchNormParams(gamma=np.ones(width), beta=np.zeros(width),
                             running_mean=np.zeros(width), running_var=np.ones(width))
        layers.append(LayerParams(W=W, dyn=dyn, bn=bn))
        fan_in = width
    bound = 1.0 / math.sqrt(fan_in)
    readout_W = rng.uniform(-bound, bound, size=(fan_in, c_out))
    return ModelParams(layers=layers, readout_W=readout_W, family=family, variant=variant)


# ---------------------------------------------------------------------------
# parameter dictionaries
# ---------------------------------------------------------------------------

_LIF_FIELDS = {STANDARD: ("alpha",), DELTA: ("delta_log", "gamma_log")}
_SSM_FIELDS = {STANDARD: ("A", "B", "C"),
               DELTA: ("A_re_log", "A_im", "delta_log", "B", "C")}


def _dyn_fields(dyn) -> tuple:
    if isinstance(dyn, LifDynamics):
        return _LIF_FIELDS[dyn.variant]
    return _SSM_FIELDS[dyn.variant]


def trainable_arrays(model: ModelParams) -> Dict[str, np.ndarray]:
    """Ordered name -> array view of every trainable tensor."""
    out: Dict[str, np.ndarray] = {}
    for i, layer in enumerate(model.layers):
        out[f"layers.{i}.W"] = layer.W
        out[f"layers.{i}.bn.gamma"] = layer.bn.gamma
        out[f"layers.{i}.bn.beta"] = layer.bn.beta
        for name in _dyn_fields(layer.dyn):
            out[f"layers.{i}.dyn.{name}"] = getattr(layer.dyn, name)
    out["readout.W"] = model.readout_W
    return out


def state_arrays(model: ModelParams) -> Dict[str, np.ndarray]:
    """Trainable tensors plus normalization statistics (and the optional LIF
    input gain): everything a federated round transmits."""
    out = trainable_arrays(model)
    for i, layer in enumerate(model.layers):
        out[f"layers.{i}.bn.running_mean"] = layer.bn.running_mean
        out[f"layers.{i}.bn.running_var"] = layer.bn.running_var
        if isinstance(layer.dyn, LifDynamics) and layer.dyn.input_gain is not None:
            out[f"layers.{i}.dyn.input_gain"] = layer.dyn.input_gain
    return out


def replace_arrays(model: ModelParams, mapping: Dict[str, np.ndarray]) -> ModelParams:
    """New model with the named arrays swapped in; untouched arrays are shared."""
    layers = []
    for i, layer in enumerate(model.layers):
        pre = f"layers.{i}."

        def pick(name, current):
            return mapping.get(pre + name, current)

        dyn_kwargs = {}
        for name in _dyn_fields(layer.dyn):
            dyn_kwargs[name] = pick(f"dyn.{name}", getattr(layer.dyn, name))
        if isinstance(layer.dyn, LifDynamics):
            dyn_kwargs["input_gain"] = pick("dyn.input_gain", layer.dyn.input_gain)
        dyn = replace(layer.dyn, **dyn_kwargs)
        bn = BatchNormParams(gamma=pick("bn.gamma", layer.bn.gamma),
                             beta=pick("bn.beta", layer.bn.beta),
                             running_mean=pick("bn.running_mean", layer.bn.running_mean),
                             running_var=pick("bn.running_var", layer.bn.running_var))
        layers.append(LayerParams(W=pick("W", layer.W), dyn=dyn, bn=bn))
    return ModelParams(layers=layers,
                       readout_W=mapping.get("readout.W", model.readout_W),
                       family=model.family, variant=model.variant)


def clone_model(model: ModelParams) -> ModelParams:
    return replace_arrays(model, {k: v.copy() for k, v in state_arrays(model).items()})


def is_dynamics_key(name: str) -> bool:
    return ".dyn." in name


# ---------------------------------------------------------------------------
# effective per-layer dynamics
# ---------------------------------------------------------------------------


def lif_alpha_array(dyn: LifDynamics) -> np.ndarray:
    if dyn.variant == STANDARD:
        return dyn.alpha
    return np.exp(-np.exp(dyn.delta_log) * np.exp(dyn.gamma_log))


def lif_gain_array(dyn: LifDynamics, alpha: np.ndarray) -> np.ndarray:
    if dyn.input_gain is not None:
        return dyn.input_gain
    return 1.0 - alpha


def ssm_effective_arrays(dyn: SsmDynamics):
    """Effective (A, B, C) for one layer plus the cache the backward chain needs."""
    if dyn.variant == STANDARD:
        return dyn.A, dyn.B, dyn.C, None
    a_c = np.exp(dyn.A_re_log) - 1j * dyn.A_im
    s = np.exp(dyn.delta_log)  # (h,)
    A = np.exp(-s[:, None] * a_c)
    scale = (A - 1.0) / a_c
    C = dyn.C * scale
    return A, dyn.B, C, (a_c, s, A, scale)


def _ssm_delta_chain(dyn: SsmDynamics, cache, gA, gB, gC):
    """Chain complex carriers back through the delta parameterization."""
    a_c, s, A, scale = cache
    g = {"B": gB}
    g["C"] = np.conj(scale) * gC
    gA_total = gA + np.conj(dyn.C / a_c) * gC
    gac = np.conj(-dyn.C * (A - 1.0) / (a_c * a_c)) * gC
    g_s = (np.conj(gA_total) * (-a_c * A)).real.sum(axis=1)  # dA/ds = -a_c * A
    g["delta_log"] = g_s * s
    gac += -s[:, None] * np.conj(A) * gA_total
    g["A_re_log"] = np.exp(dyn.A_re_log) * gac.real
    g["A_im"] = -gac.imag
    return g


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


def batchnorm(z: np.ndarray, bn: BatchNormParams, mode: str, update_stats: bool = True):
    """Normalize (batch, time, channels) activations per channel over batch
    and time jointly.  Training mode uses batch statistics and, when
    ``update_stats``, folds them into the running estimates (momentum 0.1,
    unbiased variance); eval mode applies the running statistics."""
    if mode == TRAIN:
        mu = z.mean(axis=(0, 1))
        var = z.var(axis=(0, 1))
        inv = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * inv
        out = bn.gamma * zhat + bn.beta
        if update_stats:
            m = z.shape[0] * z.shape[1]
            unbiased = var * (m / (m - 1.0)) if m > 1 else var
            bn.running_mean[:] = (1.0 - BN_MOMENTUM) * bn.running_mean + BN_MOMENTUM * mu
            bn.running_var[:] = (1.0 - BN_MOMENTUM) * bn.running_var + BN_MOMENTUM * unbiased
        return out, (zhat, inv)
    if mode == EVAL:
        inv = 1.0 / np.sqrt(bn.running_var + BN_EPS)
        out = bn.gamma * (z - bn.running_mean) * inv + bn.beta
        return out, (None, inv)
    raise ValueError(f"unknown mode {mode!r}")


def batchnorm_backward(g: np.ndarray, cache, bn: BatchNormParams):
    zhat, inv = cache
    m = g.shape[0] * g.shape[1]
    gbeta = g.sum(axis=(0, 1))
    ggamma = (g * zhat).sum(axis=(0, 1))
    gz = (bn.gamma * inv) * (g - gbeta / m - zhat * (ggamma / m))
    return gz, ggamma, gbeta


# ---------------------------------------------------------------------------
# loss heads
# ---------------------------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(logits))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy over the batch."""
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("labels out of range")
    log_probs = _log_softmax(logits)
    return float(-log_probs[np.arange(len(labels)), labels].mean())


def cross_entropy_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    g = softmax(logits)
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Argmax match rate; ties go to the lowest class index."""
    labels = np.asarray(labels)
    if logits.shape[0] == 0:
        raise ValueError("empty batch")
    return float((logits.argmax(axis=1) == labels).mean())


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def stack_batch(batch: List[FrameSequence]):
    if not batch:
        raise ValueError("empty batch")
    shape = batch[0].frames.shape
    for seq in batch:
        if seq.frames.shape != shape:
            raise ValueError(f"inconsistent sequence shapes {seq.frames.shape} vs {shape}")
    x = np.stack([seq.frames for seq in batch])
    labels = np.array([seq.label for seq in batch], dtype=np.int64)
    return x, labels


def _forward_cached(x: np.ndarray, model: ModelParams, mode: str, dropout: float,
                    rng, update_stats: bool, relaxed_spikes: bool):
    if x.ndim != 3 or x.shape[2] != model.c_in:
        raise ValueError(f"input shape {x.shape} does not match c_in={model.c_in}")
    use_dropout = mode == TRAIN and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout requires an rng in training mode")
    caches = []
    spike_rates = []
    h = x
    for layer in model.layers:
        z = h @ layer.W
        zn, bn_cache = batchnorm(z, layer.bn, mode, update_stats)
        cache = {"x_in": h, "bn": bn_cache, "z": zn}
        if model.family == LIF:
            alpha = lif_alpha_array(layer.dyn)
            gain = lif_gain_array(layer.dyn, alpha)
            out, utrace = kernels.lif_forward(zn, alpha, gain, layer.dyn.threshold,
                                              SURROGATE_WIDTH, relaxed_spikes)
            cache.update(alpha=alpha, gain=gain, utrace=utrace)
            spike_rates.append(float(out.mean()))
        else:
            A, B, C, eff = ssm_effective_arrays(layer.dyn)
            out, p, xtrace = kernels.ssm_forward(zn, A, B, C)
            cache.update(A=A, B=B, C=C, eff=eff, p=p, xtrace=xtrace)
        if use_dropout:
            mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
            out = out * mask
            cache["mask"] = mask
        caches.append(cache)
        h = out
    hbar = h.mean(axis=1)
    logits = hbar @ model.readout_W
    if not np.all(np.isfinite(logits)):
        raise NumericsError("non-finite activations in forward pass")
    trace = ForwardTrace(spike_rates=spike_rates, batch_size=x.shape[0],
                         timesteps=x.shape[1])
    return logits, hbar, caches, trace


def forward(batch: List[FrameSequence], model: ModelParams, mode: str,
            rng=None, dropout: float = 0.0):
    """Class scores for a batch of equal-shape sequences plus the activity trace."""
    x, _ = stack_batch(batch)
    logits, _, _, trace = _forward_cached(x, model, mode, dropout, rng,
                                          update_stats=(mode == TRAIN),
                                          relaxed_spikes=False)
    return logits, trace


def loss_and_grad(x: np.ndarray, labels: np.ndarray, model: ModelParams,
                  dropout: float = 0.0, rng=None, update_stats: bool = True,
                  relaxed_spikes: bool = False):
    """Training-mode loss, logits, gradient dict and trace for one batch.

    ``relaxed_spikes`` switches the LIF layers to the ramp spike function
    with the reset gradient attached; this makes the returned gradients the
    exact gradients of the (relaxed) forward loss, which is what the finite
    difference checks differentiate.
    """
    logits, hbar, caches, trace = _forward_cached(
        x, model, TRAIN, dropout, rng, update_stats, relaxed_spikes)
    loss = cross_entropy(logits, labels)
    glogits = cross_entropy_grad(logits, labels)
    grads: Dict[str, np.ndarray] = {"readout.W": hbar.T @ glogits}
    ghbar = glogits @ model.readout_W.T
    nt = x.shape[1]
    gh = np.repeat(ghbar[:, None, :], nt, axis=1) / nt
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        cache = caches[i]
        if "mask" in cache:
            gh = gh * cache["mask"]
        if model.family == LIF:
            tied = layer.dyn.input_gain is None
            gz, galpha = kernels.lif_backward(
                gh, cache["utrace"], cache["z"], cache["alpha"], cache["gain"],
                layer.dyn.threshold, SURROGATE_WIDTH, relaxed_spikes,
                detach_reset=not relaxed_spikes, tied_gain=tied)
            if layer.dyn.variant == STANDARD:
                grads[f"layers.{i}.dyn.alpha"] = galpha
            else:
                # alpha = exp(-exp(d)exp(g)): d(alpha)/dd = d(alpha)/dg = alpha*ln(alpha)
                chain = galpha * cache["alpha"] * np.log(cache["alpha"])
                grads[f"layers.{i}.dyn.delta_log"] = chain
                grads[f"layers.{i}.dyn.gamma_log"] = chain.copy()
        else:
            gz, gA, gB, gC = kernels.ssm_backward(
                gh, cache["p"], cache["xtrace"], cache["z"],
                cache["A"], cache["B"], cache["C"])
            if layer.dyn.variant == STANDARD:
                grads[f"layers.{i}.dyn.A"] = gA
                grads[f"layers.{i}.dyn.B"] = gB
                grads[f"layers.{i}.dyn.C"] = gC
            else:
                for name, val in _ssm_delta_chain(layer.dyn, cache["eff"], gA, gB, gC).items():
                    grads[f"layers.{i}.dyn.{name}"] = val
        gz, ggamma, gbeta = batchnorm_backward(gz, cache["bn"], layer.bn)
        grads[f"layers.{i}.bn.gamma"] = ggamma
        grads[f"layers.{i}.bn.beta"] = gbeta
        x_in = cache["x_in"]
        grads[f"layers.{i}.W"] = np.tensordot(x_in, gz, axes=([0, 1], [0, 1]))
        gh = gz @ layer.W.T
    return loss, logits, grads, trace


def backward(batch: List[FrameSequence], model: ModelParams, rng=None,
             dropout: float = 0.0) -> Dict[str, np.ndarray]:
    """Gradients of the mean cross-entropy wrt every trainable tensor."""
    x, labels = stack_batch(batch)
    _, _, grads, _ = loss_and_grad(x, labels, model, dropout=dropout, rng=rng,
                                   update_stats=False)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for {name}")
    return grads
