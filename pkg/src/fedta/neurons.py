"""Stateful neuron families: leaky integrate-and-fire and diagonal linear SSM.

Both families come in two parameterizations:

* ``standard`` trains the discrete dynamics directly (alpha, or A/B/C),
* ``delta`` reparameterizes the timestep as a trainable log-scale, so a
  resolution change is an additive shift of ``delta_log``.

LIF recurrence (scalar per neuron, threshold fixed at 1):

    U[t+1] = alpha * (U[t] - threshold * S[t]) + (1 - alpha) * u[t]
    S[t+1] = 1  if U[t+1] >= threshold  else 0

Diagonal SSM recurrence (complex state of length N per neuron):

    x[t+1] = A * x[t] + B u[t]
    y[t]   = GELU(Re(C x[t]) + Im(C x[t]))

Delta-LIF decay:      alpha = exp(-exp(delta_log) * exp(gamma_log))
Delta-SSM transition: A     = exp(-exp(delta_log) * A_c),
                      A_c   = exp(A_re_log) - 1j * A_im
with the trainable output matrix rescaled as C = C_tilde * (A - 1) / A_c
(the zero-order-hold-consistent form; ``c_rescale="literal"`` selects the
double-exponentiated variant C_tilde * (exp(A) - 1) / A_c instead).
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateDynamicsError, NumericsError
from .kernels import gelu

STANDARD = "standard"
DELTA = "delta"

LIF = "lif"
SSM = "ssm"

THRESHOLD = 1.0
SURROGATE_WIDTH = 0.5

# standard-LIF decay is drawn uniformly from this interval
ALPHA_INIT_LOW = math.exp(-1.0 / 5.0)
ALPHA_INIT_HIGH = math.exp(-1.0 / 25.0)
# delta-LIF draws gamma_log uniformly from [ln(1/25), ln(1/5)] with delta_log = 0
GAMMA_LOG_INIT_LOW = math.log(1.0 / 25.0)
GAMMA_LOG_INIT_HIGH = math.log(1.0 / 5.0)
# SSM timestep is drawn log-uniformly from [1e-3, 1e-1]
DELTA_LOG_INIT_LOW = math.log(1e-3)
DELTA_LOG_INIT_HIGH = math.log(1e-1)


@dataclass(frozen=True)
class LifParams:
    """Dynamical parameters of one LIF neuron.

    ``input_gain`` is normally None, meaning the input coefficient is the
    tied (1 - alpha) of the recurrence; adaptation can set it to an explicit
    constant when the experimental gain-rescaling flag is used.
    """

    variant: str
    alpha: Optional[float] = None
    delta_log: Optional[float] = None
    gamma_log: Optional[float] = None
    threshold: float = THRESHOLD
    input_gain: Optional[float] = None

    def __post_init__(self):
        if self.variant == STANDARD:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ValueError(f"standard LIF requires alpha in (0,1), got {self.alpha}")
        elif self.variant == DELTA:
            if self.delta_log is None or self.gamma_log is None:
                raise ValueError("delta LIF requires delta_log and gamma_log")
            if not (math.isfinite(self.delta_log) and math.isfinite(self.gamma_log)):
                raise ValueError("delta LIF parameters must be finite")
        else:
            raise ValueError(f"unknown LIF variant {self.variant!r}")


@dataclass(frozen=True)
class SsmParams:
    """Dynamical parameters of one diagonal-SSM neuron.

    ``C`` holds the trainable output matrix: the effective C itself for the
    standard variant, C_tilde (pre-rescaling) for the delta variant.
    """

    variant: str
    B: np.ndarray = None  # (N, n_in) complex
    C: np.ndarray = None  # (n_out, N) complex
    A: Optional[np.ndarray] = None  # (N,) complex, standard only
    A_re_log: Optional[np.ndarray] = None  # (N,), delta only
    A_im: Optional[np.ndarray] = None  # (N,), delta only
    delta_log: Optional[float] = None  # scalar, delta only

    def __post_init__(self):
        if self.variant == STANDARD:
            if self.A is None:
                raise ValueError("standard SSM requires A")
        elif self.variant == DELTA:
            if self.A_re_log is None or self.A_im is None or self.delta_log is None:
                raise ValueError("delta SSM requires A_re_log, A_im and delta_log")
        else:
            raise ValueError(f"unknown SSM variant {self.variant!r}")

    @property
    def n_states(self) -> int:
        return self.B.shape[0]

    @property
    def n_in(self) -> int:
        return self.B.shape[1]

    @property
    def n_out(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class NeuronState:
    """State carried between steps: membrane potential U (LIF, with the last
    spike) or the complex state vector x (SSM, last_spike unused)."""

    membrane_or_state: object
    last_spike: float = 0.0


def lif_effective_alpha(params: LifParams) -> float:
    """Decay actually applied per step: alpha itself, or the exp-log composition."""
    if params.variant == STANDARD:
        return float(params.alpha)
    return math.exp(-math.exp(params.delta_log) * math.exp(params.gamma_log))


def lif_input_gain(params: LifParams) -> float:
    if params.input_gain is not None:
        return float(params.input_gain)
    return 1.0 - lif_effective_alpha(params)


def lif_step(state: NeuronState, input_current: float, params: LifParams):
    """One membrane update; returns (new state, emitted spike)."""
    u_prev = float(state.membrane_or_state)
    s_prev = float(state.last_spike)
    if not (math.isfinite(u_prev) and math.isfinite(input_current)):
        raise NumericsError("non-finite LIF state or input")
    alpha = lif_effective_alpha(params)
    gain = lif_input_gain(params)
    u_new = alpha * (u_prev - params.threshold * s_prev) + gain * input_current
    spike = 1.0 if u_new >= params.threshold else 0.0
    return NeuronState(u_new, spike), spike


def surrogate_spike(v: float, threshold: float, width: float = SURROGATE_WIDTH):
    """Heaviside spike with its boxcar pseudo-derivative.

    The forward value never depends on ``width``; the pseudo-derivative is
    1/(2*width) within ``width`` of the threshold and 0 outside.
    """
    spike = 1.0 if v >= threshold else 0.0
    grad = 1.0 / (2.0 * width) if abs(v - threshold) <= width else 0.0
    return spike, grad


def spike_ramp(v, threshold: float, width: float = SURROGATE_WIDTH):
    """Piecewise-linear relaxation of the spike: the boxcar's antiderivative.

    Used by the gradient-check mode; equals the Heaviside value outside the
    boxcar support.
    """
    return np.clip((np.asarray(v) - threshold + width) / (2.0 * width), 0.0, 1.0)


def ssm_effective_matrices(params: SsmParams, c_rescale: str = "zoh"):
    """Resolve the discrete (A, B, C) actually used by the recurrence.

    Standard passes everything through unchanged.  Delta derives
    A = exp(-exp(delta_log) * A_c) and rescales C_tilde by (A - 1)/A_c
    elementwise ("zoh"), or by (exp(A) - 1)/A_c ("literal").
    """
    if params.variant == STANDARD:
        return params.A, params.B, params.C
    a_c = np.exp(params.A_re_log) - 1j * np.asarray(params.A_im, dtype=np.float64)
    if np.any(a_c == 0):
        raise DegenerateDynamicsError("A_c has a zero entry; C rescaling undefined")
    A = np.exp(-math.exp(params.delta_log) * a_c)
    if c_rescale == "zoh":
        scale = (A - 1.0) / a_c
    elif c_rescale == "literal":
        scale = (np.exp(A) - 1.0) / a_c
    else:
        raise ValueError(f"unknown c_rescale {c_rescale!r}")
    C = params.C * scale[None, :]
    return A, params.B, C


def gelu_real_imag(z):
    """Default SSM output activation: GELU applied to Re(z) + Im(z)."""
    z = np.asarray(z)
    return gelu(z.real + z.imag)


def ssm_step(state: NeuronState, input_vec, A, B, C, activation=gelu_real_imag):
    """One step of x[t+1] = A*x[t] + B u[t], emitting y[t] from the pre-update state."""
    x = np.asarray(state.membrane_or_state, dtype=np.complex128)
    u = np.asarray(input_vec, dtype=np.float64)
    A = np.asarray(A, dtype=np.complex128)
    if x.shape != A.shape:
        raise ValueError(f"state shape {x.shape} does not match diagonal {A.shape}")
    if B.shape[1] != u.shape[0] or B.shape[0] != A.shape[0] or C.shape[1] != A.shape[0]:
        raise ValueError("SSM matrix dimensions disagree")
    y = activation(C @ x)
    x_new = A * x + B @ u
    return NeuronState(x_new, 0.0), y


def init_lif(variant: str, rng: np.random.Generator) -> LifParams:
    """Draw one neuron's LIF parameters.

    Standard: alpha ~ U[exp(-1/5), exp(-1/25)].  Delta: gamma_log uniform on
    [ln(1/25), ln(1/5)] with delta_log = 0, so the effective decay at the
    base resolution lands in the same interval.
    """
    if variant == STANDARD:
        alpha = float(rng.uniform(ALPHA_INIT_LOW, ALPHA_INIT_HIGH))
        return LifParams(variant=STANDARD, alpha=alpha)
    if variant == DELTA:
        gamma_log = float(rng.uniform(GAMMA_LOG_INIT_LOW, GAMMA_LOG_INIT_HIGH))
        return LifParams(variant=DELTA, delta_log=0.0, gamma_log=gamma_log)
    raise ValueError(f"unknown LIF variant {variant!r}")


def _complex_normal(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * scale


def init_ssm(variant: str, n_states: int, n_in: int, n_out: int,
             rng: np.random.Generator) -> SsmParams:
    """Draw one neuron's SSM parameters.

    Continuous poles follow the linear diagonal ladder (real part 1/2,
    imaginary part pi*n); B and C(-tilde) are i.i.d. complex normal scaled
    by 1/sqrt(N); the timestep is log-uniform in [1e-3, 1e-1].  The standard
    variant stores the discretized A computed once at the drawn timestep.
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    a_re_log = np.full(n_states, math.log(0.5))
    a_im = math.pi * np.arange(n_states, dtype=np.float64)
    delta_log = float(rng.uniform(DELTA_LOG_INIT_LOW, DELTA_LOG_INIT_HIGH))
    scale = 1.0 / math.sqrt(2.0 * n_states)
    B = _complex_normal(rng, (n_states, n_in), scale)
    C = _complex_normal(rng, (n_out, n_states), scale)
    if variant == DELTA:
        return SsmParams(variant=DELTA, B=B, C=C, A_re_log=a_re_log, A_im=a_im,
                         delta_log=delta_log)
    if variant == STANDARD:
        a_c = np.exp(a_re_log) - 1j * a_im
        A = np.exp(-math.exp(delta_log) * a_c)
        return SsmParams(variant=STANDARD, B=B, C=C, A=A)
    raise ValueError(f"unknown SSM variant {variant!r}")
