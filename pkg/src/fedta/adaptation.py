"""Temporal-resolution adaptation of neuron dynamics.

Three rules, driven by rho = T_to / T_from:

* Euler (first-order):    A' = I + rho * (A - I),   B' = rho * B
* Integral (exact under zero-order-hold inputs):
                          A' = A**rho,              B' = (A' - I)(A - I)^-1 B
* Delta shift (for the delta parameterizations):
                          delta_log' = delta_log + ln(rho)

Dispatch per neuron model: standard-SSM adapts (A, B) and leaves C alone;
standard-LIF treats alpha as a 1x1 real A with no input matrix; the delta
variants shift only delta_log.  Only dynamics parameters are ever touched:
synaptic weights, normalization parameters and statistics pass through
byte-identical.

rho == 1 short-circuits to the identity so homogeneous-resolution runs are
bit-for-bit equal to plain federated averaging.
"""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import IncompatibleMethodError, SingularAdaptationError
from .network import LifDynamics, ModelParams
from .neurons import DELTA, LifParams, STANDARD, SsmParams

logger = logging.getLogger(__name__)

INTEGRAL = "integral"
EULER = "euler"
DELTA_SHIFT = "delta-shift"
NONE = "none"

SINGULARITY_TOL = 1e-9


@dataclass(frozen=True)
class ResolutionPair:
    t_from: float
    t_to: float

    def __post_init__(self):
        if not (self.t_from > 0 and self.t_to > 0):
            raise ValueError("resolutions must be positive")
        if not (math.isfinite(self.t_from) and math.isfinite(self.t_to)):
            raise ValueError("resolutions must be finite")

    @property
    def rho(self) -> float:
        return self.t_to / self.t_from


def _warn_unstable(A, what: str) -> None:
    mags = np.abs(np.atleast_1d(A))
    if np.any(mags >= 1.0):
        logger.warning("%s: |A| >= 1 for %d entries (max %.4g); dynamics are unstable",
                       what, int((mags >= 1.0).sum()), mags.max())


def adapt_euler(A, B, rho: float):
    """First-order rule; never divides, but may leave the stable disc."""
    A = np.asarray(A)
    A_new = 1.0 + rho * (A - 1.0)
    B_new = None if B is None else rho * np.asarray(B)
    _warn_unstable(A_new, "euler adaptation output")
    return A_new, B_new


def adapt_integral(A, B, rho: float):
    """Exact rule for diagonal linear dynamics under piecewise-constant input.

    Uses the principal branch for non-integer rho.  Raises if any diagonal
    entry sits within 1e-9 of 1, where the input rescaling is singular.
    ``B`` may carry trailing input dimensions beyond A's shape (e.g. an
    (N, n_in) input matrix against an (N,) diagonal).
    """
    A = np.asarray(A)
    gap = np.abs(np.atleast_1d(A) - 1.0)
    if np.any(gap < SINGULARITY_TOL):
        idx = int(np.argmin(gap))
        raise SingularAdaptationError(
            f"diagonal entry {idx} is within {SINGULARITY_TOL} of 1; "
            "integral adaptation is singular")
    A_new = np.power(A, rho)
    B_new = None
    if B is not None:
        B = np.asarray(B)
        ratio = np.asarray((A_new - 1.0) / (A - 1.0))
        extra = B.ndim - ratio.ndim
        if extra < 0 or B.shape[:ratio.ndim] != ratio.shape:
            raise ValueError(f"B shape {B.shape} incompatible with A shape {A.shape}")
        B_new = ratio.reshape(ratio.shape + (1,) * extra) * B
    return A_new, B_new


def adapt_delta(delta_log, rho: float):
    """Additive shift of the log-timestep; nothing else moves."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    return delta_log + math.log(rho)


def _check_method(method: str, variant: str) -> None:
    if method in (INTEGRAL, EULER) and variant != STANDARD:
        raise IncompatibleMethodError(f"{method} applies to standard variants only")
    if method == DELTA_SHIFT and variant != DELTA:
        raise IncompatibleMethodError("delta-shift applies to delta variants only")


def adapt_dynamics(phi, method: str, pair: ResolutionPair,
                   rescale_lif_gain: bool = False):
    """Adapt one neuron's dynamics (LifParams or SsmParams) between resolutions.

    ``rescale_lif_gain`` additionally treats the standard-LIF input gain
    (1 - alpha) as an input matrix and rescales it with the chosen rule; by
    default the gain stays tied to the adapted alpha.
    """
    if method == NONE:
        return phi
    if method not in (INTEGRAL, EULER, DELTA_SHIFT):
        raise IncompatibleMethodError(f"unknown adaptation method {method!r}")
    _check_method(method, phi.variant)
    rho = pair.rho
    if rho == 1.0:
        return phi
    rule = adapt_integral if method == INTEGRAL else adapt_euler
    if isinstance(phi, LifParams):
        if method == DELTA_SHIFT:
            return replace(phi, delta_log=adapt_delta(phi.delta_log, rho))
        gain = 1.0 - phi.alpha if phi.input_gain is None else phi.input_gain
        _warn_unstable(phi.alpha, "lif adaptation input")
        alpha_new, gain_new = rule(phi.alpha, gain if rescale_lif_gain else None, rho)
        alpha_new = float(alpha_new)
        if rescale_lif_gain:
            return replace(phi, alpha=alpha_new, input_gain=float(gain_new))
        return replace(phi, alpha=alpha_new)
    if isinstance(phi, SsmParams):
        if method == DELTA_SHIFT:
            return replace(phi, delta_log=adapt_delta(phi.delta_log, rho))
        _warn_unstable(phi.A, "ssm adaptation input")
        A_new, B_new = rule(phi.A, phi.B, rho)
        return replace(phi, A=A_new, B=B_new)
    raise TypeError(f"unsupported dynamics object {type(phi)!r}")


def adapt_layer_dynamics(dyn, method: str, pair: ResolutionPair,
                         rescale_lif_gain: bool = False):
    """Vectorized counterpart of :func:`adapt_dynamics` for stacked layer arrays."""
    if method == NONE:
        return dyn
    if method not in (INTEGRAL, EULER, DELTA_SHIFT):
        raise IncompatibleMethodError(f"unknown adaptation method {method!r}")
    _check_method(method, dyn.variant)
    rho = pair.rho
    if rho == 1.0:
        return dyn
    rule = adapt_integral if method == INTEGRAL else adapt_euler
    if isinstance(dyn, LifDynamics):
        if method == DELTA_SHIFT:
            return replace(dyn, delta_log=adapt_delta(dyn.delta_log, rho))
        gain = (1.0 - dyn.alpha) if dyn.input_gain is None else dyn.input_gain
        _warn_unstable(dyn.alpha, "lif adaptation input")
        alpha_new, gain_new = rule(dyn.alpha, gain if rescale_lif_gain else None, rho)
        return replace(dyn, alpha=alpha_new,
                       input_gain=gain_new if rescale_lif_gain else dyn.input_gain)
    if method == DELTA_SHIFT:
        return replace(dyn, delta_log=adapt_delta(dyn.delta_log, rho))
    _warn_unstable(dyn.A, "ssm adaptation input")
    A_new, B_new = rule(dyn.A, dyn.B, rho)
    return replace(dyn, A=A_new, B=B_new)


def adapt_model(model: ModelParams, method: str, pair: ResolutionPair,
                rescale_lif_gain: bool = False) -> ModelParams:
    """Adapt every layer's dynamics; W, normalization and readout arrays are
    shared with the input model (byte-identical by construction)."""
    if method == NONE or pair.rho == 1.0:
        return model
    new_layers = []
    for layer in model.layers:
        dyn = adapt_layer_dynamics(layer.dyn, method, pair, rescale_lif_gain)
        new_layers.append(replace(layer, dyn=dyn))
    return replace(model, layers=new_layers)
